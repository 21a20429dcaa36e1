//! Static-model binary arithmetic coder over a multi-symbol alphabet.
//!
//! 32-bit low/high registers with underflow ("pending bit") handling. The
//! model is a fixed frequency table shared by encoder and decoder, so the
//! decoder reproduces the encoder's interval arithmetic exactly. Termination
//! emits two disambiguating bits and pads to a byte with zeros; the decoder
//! reads zeros past the end of the payload.

use crate::error::{Error, Result};

const TOP: u64 = (1 << 32) - 1;
const HALF: u64 = 1 << 31;
const QUARTER: u64 = 1 << 30;
/// Totals must leave every symbol a non-empty sub-interval of the
/// narrowest normalised range (just over a quarter of the register).
pub const MAX_TOTAL: u64 = 1 << 30;

/// Cumulative frequencies for symbols `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyTable {
    cumulative: Vec<u64>,
}

impl FrequencyTable {
    pub fn new(counts: &[u32]) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(counts.len() + 1);
        cumulative.push(0u64);
        for &c in counts {
            cumulative.push(cumulative.last().unwrap() + c as u64);
        }
        let total = *cumulative.last().unwrap();
        if total == 0 {
            return Err(Error::Distribution("frequency table is empty".into()));
        }
        if total > MAX_TOTAL {
            return Err(Error::Distribution(format!("frequency total {total} exceeds {MAX_TOTAL}")));
        }
        Ok(Self { cumulative })
    }

    pub fn total(&self) -> u64 {
        *self.cumulative.last().unwrap()
    }

    pub fn symbols(&self) -> usize {
        self.cumulative.len() - 1
    }

    pub fn frequency(&self, symbol: usize) -> u64 {
        self.cumulative[symbol + 1] - self.cumulative[symbol]
    }

    fn range_of(&self, symbol: usize) -> Result<(u64, u64)> {
        if symbol >= self.symbols() || self.frequency(symbol) == 0 {
            return Err(Error::SymbolRange {
                symbol: symbol as u32,
                bits: self.symbols().trailing_zeros() as u8,
            });
        }
        Ok((self.cumulative[symbol], self.cumulative[symbol + 1]))
    }

    /// Symbol whose cumulative interval contains `count`.
    fn lookup(&self, count: u64) -> usize {
        // last index with cumulative[i] <= count, skipping zero-width symbols
        self.cumulative.partition_point(|&c| c <= count) - 1
    }
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    current: u8,
    filled: u8,
}

impl BitWriter {
    fn push(&mut self, bit: bool) {
        self.current = (self.current << 1) | bit as u8;
        self.filled += 1;
        if self.filled == 8 {
            self.bytes.push(self.current);
            self.current = 0;
            self.filled = 0;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.bytes.push(self.current << (8 - self.filled));
        }
        self.bytes
    }
}

pub struct ArithmeticEncoder {
    low: u64,
    high: u64,
    pending: u64,
    out: BitWriter,
}

impl Default for ArithmeticEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl ArithmeticEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            high: TOP,
            pending: 0,
            out: BitWriter::default(),
        }
    }

    fn emit(&mut self, bit: bool) {
        self.out.push(bit);
        for _ in 0..self.pending {
            self.out.push(!bit);
        }
        self.pending = 0;
    }

    pub fn encode(&mut self, symbol: usize, table: &FrequencyTable) -> Result<()> {
        let (lo, hi) = table.range_of(symbol)?;
        let total = table.total();
        let range = self.high - self.low + 1;
        self.high = self.low + range * hi / total - 1;
        self.low += range * lo / total;
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.pending += 1;
        let bit = self.low >= QUARTER;
        self.emit(bit);
        self.out.finish()
    }
}

pub struct ArithmeticDecoder<'a> {
    low: u64,
    high: u64,
    value: u64,
    data: &'a [u8],
    position: usize,
}

impl<'a> ArithmeticDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut d = Self {
            low: 0,
            high: TOP,
            value: 0,
            data,
            position: 0,
        };
        for _ in 0..32 {
            d.value = (d.value << 1) | d.next_bit();
        }
        d
    }

    fn next_bit(&mut self) -> u64 {
        let byte = self.position / 8;
        let bit = match self.data.get(byte) {
            Some(b) => (b >> (7 - self.position % 8)) & 1,
            None => 0,
        };
        self.position += 1;
        bit as u64
    }

    /// Bits consumed beyond the end of the payload.
    pub fn overrun(&self) -> usize {
        self.position.saturating_sub(self.data.len() * 8)
    }

    pub fn decode(&mut self, table: &FrequencyTable) -> Result<usize> {
        let total = table.total();
        let range = self.high - self.low + 1;
        if self.value < self.low || self.value > self.high {
            return Err(Error::Corrupt("arithmetic decoder left its interval".into()));
        }
        let count = ((self.value - self.low + 1) * total - 1) / range;
        let symbol = table.lookup(count);
        let (lo, hi) = table.range_of(symbol)?;
        self.high = self.low + range * hi / total - 1;
        self.low += range * lo / total;
        loop {
            if self.high < HALF {
            } else if self.low >= HALF {
                self.value -= HALF;
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.value -= QUARTER;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.value = (self.value << 1) | self.next_bit();
        }
        Ok(symbol)
    }
}

/// Codes `symbols` under `table`.
pub fn encode_symbols(symbols: impl IntoIterator<Item = usize>, table: &FrequencyTable) -> Result<Vec<u8>> {
    let mut enc = ArithmeticEncoder::new();
    for s in symbols {
        enc.encode(s, table)?;
    }
    Ok(enc.finish())
}

/// Decodes exactly `count` symbols.
pub fn decode_symbols(payload: &[u8], table: &FrequencyTable, count: usize) -> Result<Vec<usize>> {
    let mut dec = ArithmeticDecoder::new(payload);
    let out = (0..count).map(|_| dec.decode(table)).collect::<Result<Vec<_>>>()?;
    // a valid stream never needs more than the 32-bit register refill
    // past its final byte
    if dec.overrun() > 32 {
        return Err(Error::Corrupt("payload shorter than its symbol count requires".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trips_a_skewed_source() {
        let table = FrequencyTable::new(&[1, 50, 3, 0, 946]).unwrap();
        let symbols: Vec<usize> = (0..5000).map(|i| [4, 4, 1, 4, 2, 4, 0, 4, 4, 1][i % 10]).collect();
        let bytes = encode_symbols(symbols.iter().copied(), &table).unwrap();
        assert_eq!(decode_symbols(&bytes, &table, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn zero_frequency_symbol_cannot_be_coded() {
        let table = FrequencyTable::new(&[5, 0, 5]).unwrap();
        assert!(encode_symbols([1], &table).is_err());
        assert!(encode_symbols([3], &table).is_err());
    }

    #[test]
    fn empty_message_is_one_byte() {
        let table = FrequencyTable::new(&[1, 1]).unwrap();
        assert_eq!(encode_symbols([], &table).unwrap().len(), 1);
    }

    #[test]
    fn rejects_oversized_totals() {
        assert!(FrequencyTable::new(&[u32::MAX, u32::MAX]).is_err());
        assert!(FrequencyTable::new(&[0, 0]).is_err());
    }

    proptest! {
        #[test]
        fn lossless_for_arbitrary_tables(
            counts in proptest::collection::vec(1u32..2000, 2..40),
            picks in proptest::collection::vec(any::<prop::sample::Index>(), 0..300),
        ) {
            let table = FrequencyTable::new(&counts).unwrap();
            let symbols: Vec<usize> = picks.iter().map(|i| i.index(counts.len())).collect();
            let bytes = encode_symbols(symbols.iter().copied(), &table).unwrap();
            prop_assert_eq!(decode_symbols(&bytes, &table, symbols.len()).unwrap(), symbols);
        }
    }
}
