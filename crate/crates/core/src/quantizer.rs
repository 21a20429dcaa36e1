//! Uniform scalar quantization of bottleneck activations to `Q`-bit symbols,
//! `symbol = round(x · (2^Q − 1))`, with a straight-through gradient for
//! training.

use crate::autoencoder::FeatureMap;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BITS: u8 = 6;

/// Integer symbols for every bottleneck coefficient.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedMap {
    bits: u8,
    channels: usize,
    height: usize,
    width: usize,
    symbols: Vec<u16>,
}

impl QuantizedMap {
    pub fn new(bits: u8, channels: usize, height: usize, width: usize, symbols: Vec<u16>) -> Result<Self> {
        let max = max_symbol(bits)?;
        if symbols.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "quantized map {channels}x{height}x{width} needs {} symbols, got {}",
                channels * height * width,
                symbols.len()
            )));
        }
        if let Some(&s) = symbols.iter().find(|&&s| u32::from(s) > max) {
            return Err(Error::SymbolRange { symbol: s.into(), bits });
        }
        Ok(Self {
            bits,
            channels,
            height,
            width,
            symbols,
        })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn symbols(&self) -> &[u16] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Number of distinct symbol values, `2^Q`.
    pub fn alphabet_size(&self) -> usize {
        1 << self.bits
    }
}

/// Largest symbol for `bits`, `2^Q − 1`.
pub fn max_symbol(bits: u8) -> Result<u32> {
    if !(1..=16).contains(&bits) {
        return Err(Error::BitDepth(bits));
    }
    Ok((1u32 << bits) - 1)
}

/// Quantizes one coefficient. Round is half-away-from-zero.
pub fn quantize_value(x: f64, bits: u8) -> Result<u16> {
    let max = max_symbol(bits)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::QuantizerRange { value: x });
    }
    Ok((x * max as f64).round() as u16)
}

pub fn dequantize_value(symbol: u16, bits: u8) -> f64 {
    symbol as f64 / ((1u32 << bits) - 1) as f64
}

pub fn quantize(fmap: &FeatureMap, bits: u8) -> Result<QuantizedMap> {
    let symbols = fmap
        .data()
        .iter()
        .map(|&x| quantize_value(x, bits))
        .collect::<Result<Vec<_>>>()?;
    QuantizedMap::new(bits, fmap.channels(), fmap.height(), fmap.width(), symbols)
}

pub fn dequantize(qmap: &QuantizedMap) -> FeatureMap {
    let data = qmap.symbols.iter().map(|&s| dequantize_value(s, qmap.bits)).collect();
    FeatureMap::new(qmap.channels, qmap.height, qmap.width, data).expect("shape carried over")
}

/// `dequantize(quantize(t))` elementwise on a raw tensor.
pub fn quantize_dequantize(t: &Tensor, bits: u8) -> Result<Tensor> {
    let max = max_symbol(bits)? as f64;
    if let Some(&v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::QuantizerRange { value: v });
    }
    Ok(t.map(|x| (x * max).round() / max))
}

/// Quantize-dequantize in the forward pass, identity in the backward pass.
pub fn quantize_ste<'g>(x: Var<'g>, bits: u8) -> Result<Var<'g>> {
    let q = quantize_dequantize(&x.value(), bits)?;
    Ok(x.straight_through(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use proptest::prelude::*;

    #[test]
    fn boundary_and_midpoint_values() {
        assert_eq!(quantize_value(0.0, 6).unwrap(), 0);
        assert_eq!(quantize_value(0.9999, 6).unwrap(), 63);
        assert_eq!(quantize_value(1.0, 6).unwrap(), 63);
        assert_eq!(quantize_value(0.5, 6).unwrap(), 32);
        assert_eq!(dequantize_value(63, 6), 1.0);
        assert_eq!(dequantize_value(0, 6), 0.0);
    }

    #[test]
    fn rejects_out_of_contract_inputs() {
        assert!(matches!(quantize_value(1.01, 6), Err(Error::QuantizerRange { .. })));
        assert!(matches!(quantize_value(-0.1, 6), Err(Error::QuantizerRange { .. })));
        assert!(matches!(quantize_value(f64::NAN, 6), Err(Error::QuantizerRange { .. })));
        assert!(matches!(quantize_value(0.5, 0), Err(Error::BitDepth(0))));
        assert!(matches!(quantize_value(0.5, 17), Err(Error::BitDepth(17))));
        assert!(QuantizedMap::new(2, 1, 1, 2, vec![0, 4]).is_err());
    }

    #[test]
    fn ste_forward_rounds_and_backward_passes_through() {
        let g = Graph::new();
        let x = g.param(Tensor::new(vec![3], vec![0.3, 0.01, 0.77]));
        let y = quantize_ste(x, 6).unwrap();
        assert!((y.value().data()[0] - 19.0 / 63.0).abs() < 1e-15);
        let grad = g.grad_tensors(y.sum_all(), &[x])[0].clone().unwrap();
        assert_eq!(grad.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn reconstruction_error_is_bounded_on_a_fine_grid() {
        let bound = 0.5 / 63.0;
        let worst = (0..=100_000)
            .map(|i| i as f64 / 100_000.0)
            .map(|x| (dequantize_value(quantize_value(x, 6).unwrap(), 6) - x).abs())
            .fold(0.0, f64::max);
        assert!(worst <= bound + 1e-15);
        assert!(worst > bound - 1e-4);
    }

    proptest! {
        #[test]
        fn quantize_is_idempotent(x in 0.0f64..=1.0, bits in 1u8..=16) {
            let q = quantize_value(x, bits).unwrap();
            prop_assert_eq!(quantize_value(dequantize_value(q, bits), bits).unwrap(), q);
        }

        #[test]
        fn quantize_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, bits in 1u8..=16) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize_value(lo, bits).unwrap() <= quantize_value(hi, bits).unwrap());
        }

        #[test]
        fn error_never_exceeds_half_a_step(x in 0.0f64..=1.0, bits in 1u8..=16) {
            let max = ((1u32 << bits) - 1) as f64;
            let err = (dequantize_value(quantize_value(x, bits).unwrap(), bits) - x).abs();
            prop_assert!(err <= 0.5 / max + 1e-12);
        }
    }
}
