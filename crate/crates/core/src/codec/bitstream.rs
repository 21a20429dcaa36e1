//! The `.dic` container.
//!
//! All integers are little-endian.
//!
//! | offset | size      | field                                         |
//! |--------|-----------|-----------------------------------------------|
//! | 0      | 4         | magic `DIC1`                                  |
//! | 4      | 1         | format version (1)                            |
//! | 5      | 2         | image width (u16, true size before padding)   |
//! | 7      | 2         | image height (u16)                            |
//! | 9      | 1         | model id                                      |
//! | 10     | 1         | bottleneck channels `C`                       |
//! | 11     | 1         | quantizer bits `Q`                            |
//! | 12     | 1         | downsampling stages `S`                       |
//! | 13     | 2·2^Q     | symbol frequency counts (u16 each)            |
//! | 13+2^(Q+1) | 4     | payload length `L` (u32)                      |
//! | +4     | L         | arithmetic-coded payload                      |
//! | +L     | 4         | CRC-32 (IEEE) of every preceding byte         |
//!
//! The coded feature map is `C × ⌈H/2^S⌉ × ⌈W/2^S⌉` symbols in channel-major
//! order.

use crate::error::{Error, Result};
use crate::quantizer::max_symbol;
use crate::rate_model::SymbolDistribution;

pub const MAGIC: [u8; 4] = *b"DIC1";
pub const VERSION: u8 = 1;
pub const EXTENSION: &str = "dic";

const FIXED_HEADER: usize = 13;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub version: u8,
    pub width: u16,
    pub height: u16,
    pub model_id: u8,
    pub channels: u8,
    pub bits: u8,
    pub stages: u8,
    pub counts: Vec<u16>,
}

impl BitstreamHeader {
    /// Feature-map dimensions `(C, h, w)` implied by the header.
    pub fn fmap_dims(&self) -> (usize, usize, usize) {
        let r = 1usize << self.stages;
        (
            self.channels as usize,
            (self.height as usize).div_ceil(r),
            (self.width as usize).div_ceil(r),
        )
    }

    pub fn symbol_count(&self) -> usize {
        let (c, h, w) = self.fmap_dims();
        c * h * w
    }

    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER + 2 * self.counts.len()
    }

    /// Checks internal consistency independent of any payload.
    pub fn validate(&self) -> Result<()> {
        if self.version != VERSION {
            return Err(Error::Corrupt(format!("unsupported version {}", self.version)));
        }
        let n = max_symbol(self.bits).map_err(|_| Error::Corrupt(format!("bit depth {} out of range", self.bits)))? as usize + 1;
        if self.counts.len() != n {
            return Err(Error::Corrupt(format!(
                "{}-bit header carries {} counts, expected {n}",
                self.bits,
                self.counts.len()
            )));
        }
        if self.counts.iter().all(|&c| c == 0) {
            return Err(Error::Corrupt("all symbol counts are zero".into()));
        }
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return Err(Error::Corrupt("zero image or feature dimension".into()));
        }
        if self.stages > 15 {
            return Err(Error::Corrupt(format!("{} downsampling stages", self.stages)));
        }
        Ok(())
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.model_id);
        out.push(self.channels);
        out.push(self.bits);
        out.push(self.stages);
        for c in &self.counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }

    /// Parses a header from the front of `bytes`, returning it and its length.
    pub fn read_from(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < FIXED_HEADER {
            return Err(Error::Corrupt("truncated header".into()));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let bits = bytes[11];
        let n = max_symbol(bits).map_err(|_| Error::Corrupt(format!("bit depth {bits} out of range")))? as usize + 1;
        let len = FIXED_HEADER + 2 * n;
        if bytes.len() < len {
            return Err(Error::Corrupt("truncated symbol counts".into()));
        }
        let header = Self {
            version: bytes[4],
            width: u16_at(5),
            height: u16_at(7),
            model_id: bytes[9],
            channels: bytes[10],
            bits,
            stages: bytes[12],
            counts: (0..n).map(|i| u16_at(FIXED_HEADER + 2 * i)).collect(),
        };
        header.validate()?;
        Ok((header, len))
    }
}

/// Scales a distribution to 16-bit counts with every symbol kept codable:
/// `count_i = 1 + ⌊p_i · (65535 − 2^Q)⌋`.
pub fn scaled_counts(dist: &SymbolDistribution) -> Vec<u16> {
    let n = dist.alphabet_size();
    let spare = (u16::MAX as usize).saturating_sub(n) as f64;
    dist.probs()
        .iter()
        .map(|&p| (1.0 + (p * spare).floor()).min(u16::MAX as f64) as u16)
        .collect()
}

/// A complete compressed image: header plus coded payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedImage {
    pub header: BitstreamHeader,
    pub payload: Vec<u8>,
}

impl CompressedImage {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.file_len());
        self.header.write_to(&mut out);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, mut at) = BitstreamHeader::read_from(bytes)?;
        let len_bytes = bytes
            .get(at..at + 4)
            .ok_or_else(|| Error::Corrupt("truncated payload length".into()))?;
        let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        at += 4;
        let expected = at + len + 4;
        if bytes.len() != expected {
            return Err(Error::Corrupt(format!(
                "file is {} bytes, header announces {expected}",
                bytes.len()
            )));
        }
        let payload = bytes[at..at + len].to_vec();
        let stored = u32::from_le_bytes(bytes[at + len..].try_into().unwrap());
        let actual = crc32fast::hash(&bytes[..at + len]);
        if stored != actual {
            return Err(Error::Corrupt(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
        }
        Ok(Self { header, payload })
    }

    /// Total size on disk, in bytes.
    pub fn file_len(&self) -> usize {
        self.header.encoded_len() + 4 + self.payload.len() + 4
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> BitstreamHeader {
        BitstreamHeader {
            version: VERSION,
            width: 30,
            height: 17,
            model_id: 3,
            channels: 2,
            bits: 2,
            stages: 2,
            counts: vec![5, 0, 7, 1],
        }
    }

    #[test]
    fn layout_is_byte_exact() {
        let ci = CompressedImage {
            header: header(),
            payload: vec![0xab, 0xcd],
        };
        let bytes = ci.to_bytes();
        assert_eq!(&bytes[..13], &[b'D', b'I', b'C', b'1', 1, 30, 0, 17, 0, 3, 2, 2, 2]);
        assert_eq!(&bytes[13..21], &[5, 0, 0, 0, 7, 0, 1, 0]);
        assert_eq!(&bytes[21..25], &[2, 0, 0, 0]);
        assert_eq!(&bytes[25..27], &[0xab, 0xcd]);
        assert_eq!(bytes.len(), ci.file_len());
        assert_eq!(CompressedImage::from_bytes(&bytes).unwrap(), ci);
    }

    #[test]
    fn fmap_dims_round_up() {
        assert_eq!(header().fmap_dims(), (2, 5, 8));
    }

    #[test]
    fn detects_truncation_and_bit_flips() {
        let bytes = CompressedImage {
            header: header(),
            payload: vec![1, 2, 3, 4],
        }
        .to_bytes();
        assert!(matches!(CompressedImage::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Corrupt(_))));
        let mut flipped = bytes.clone();
        flipped[26] ^= 0x10;
        assert!(matches!(CompressedImage::from_bytes(&flipped), Err(Error::Corrupt(_))));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(CompressedImage::from_bytes(&magic).is_err());
    }

    #[test]
    fn scaled_counts_keep_every_symbol_codable() {
        let mut probs = vec![1e-9; 64];
        probs[0] = 1.0 - 63e-9;
        let d = SymbolDistribution::from_probabilities(6, probs, 0.0).unwrap();
        let c = scaled_counts(&d);
        assert!(c.iter().all(|&v| v >= 1));
        assert!(c.iter().map(|&v| v as u32).sum::<u32>() <= u16::MAX as u32);
    }
}
