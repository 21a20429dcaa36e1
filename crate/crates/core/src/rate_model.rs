//! Differentiable rate estimate `L_R = −E[log2 P_q]`.
//!
//! The discrete symbol distribution is relaxed into a piecewise-linear
//! function of the scaled coordinate `x = X_E · (2^Q − 1)`, which is
//! continuous and has a usable derivative between integer knots.

use std::rc::Rc;

use log::warn;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::quantizer::{max_symbol, QuantizedMap};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Smoothed probabilities for each of the `2^Q` symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolDistribution {
    bits: u8,
    probs: Vec<f64>,
    epsilon: f64,
}

impl SymbolDistribution {
    /// Wraps explicit probabilities; they must be positive and sum to 1.
    pub fn from_probabilities(bits: u8, probs: Vec<f64>, epsilon: f64) -> Result<Self> {
        let n = max_symbol(bits)? as usize + 1;
        if probs.len() != n {
            return Err(Error::Distribution(format!("{bits}-bit alphabet needs {n} probabilities, got {}", probs.len())));
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::Distribution(format!("probability {p} is not positive")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Distribution(format!("probabilities sum to {total}")));
        }
        Ok(Self { bits, probs, epsilon })
    }

    /// Distribution proportional to integer counts (zero counts allowed but
    /// not all zero), as carried in a bitstream header.
    pub fn from_counts(bits: u8, counts: &[u32]) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total == 0 {
            return Err(Error::Distribution("all counts are zero".into()));
        }
        let n = max_symbol(bits)? as usize + 1;
        if counts.len() != n {
            return Err(Error::Distribution(format!("{bits}-bit alphabet needs {n} counts, got {}", counts.len())));
        }
        let floor = 0.5 / total as f64;
        let mut probs: Vec<f64> = counts.iter().map(|&c| (c as f64).max(floor) / total as f64).collect();
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s);
        Ok(Self { bits, probs, epsilon: 0.0 })
    }

    pub fn uniform(bits: u8) -> Result<Self> {
        let n = max_symbol(bits)? as usize + 1;
        Self::from_probabilities(bits, vec![1.0 / n as f64; n], 0.0)
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn alphabet_size(&self) -> usize {
        self.probs.len()
    }

    /// Largest valid scaled coordinate, `2^Q − 1`.
    pub fn max_coordinate(&self) -> f64 {
        (self.probs.len() - 1) as f64
    }

    pub fn entropy(&self) -> f64 {
        self.probs.iter().map(|&p| -p * p.log2()).sum()
    }

    /// Bits per symbol when coding symbols with these `counts` under `self`.
    pub fn cross_entropy(&self, counts: &[u64]) -> f64 {
        let n: u64 = counts.iter().sum();
        counts
            .iter()
            .zip(&self.probs)
            .filter(|(c, _)| **c > 0)
            .map(|(&c, &p)| -(c as f64) * p.log2())
            .sum::<f64>()
            / n as f64
    }
}

/// Histogram of symbol values across `qmaps`.
pub fn symbol_counts(qmaps: &[QuantizedMap]) -> Result<(u8, Vec<u64>)> {
    let bits = qmaps.first().ok_or(Error::Empty("no quantized maps"))?.bits();
    let mut counts = vec![0u64; max_symbol(bits)? as usize + 1];
    for q in qmaps {
        if q.bits() != bits {
            return Err(Error::Distribution("quantized maps disagree on bit depth".into()));
        }
        for &s in q.symbols() {
            counts[s as usize] += 1;
        }
    }
    Ok((bits, counts))
}

/// Additively smoothed empirical frequencies,
/// `p_i = (count_i + ε·N) / (N·(1 + 2^Q·ε))`.
pub fn fit_distribution(qmaps: &[QuantizedMap], epsilon: f64) -> Result<SymbolDistribution> {
    let (bits, counts) = symbol_counts(qmaps)?;
    fit_counts(bits, &counts, epsilon)
}

pub fn fit_counts(bits: u8, counts: &[u64], epsilon: f64) -> Result<SymbolDistribution> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::Empty("no symbols observed"));
    }
    if epsilon < 0.0 {
        return Err(Error::Distribution(format!("negative smoothing {epsilon}")));
    }
    let n = n as f64;
    let denom = n * (1.0 + counts.len() as f64 * epsilon);
    let probs: Vec<f64> = counts.iter().map(|&c| (c as f64 + epsilon * n) / denom).collect();
    if probs.iter().any(|&p| p <= 0.0) {
        // only reachable with epsilon == 0 and an unused symbol
        return Err(Error::Distribution("zero probability; use positive smoothing".into()));
    }
    Ok(SymbolDistribution {
        bits,
        probs,
        epsilon,
    })
}

/// Fits directly on raw symbols (e.g. from a training batch).
pub fn fit_symbols(bits: u8, symbols: impl IntoIterator<Item = u16>, epsilon: f64) -> Result<SymbolDistribution> {
    let mut counts = vec![0u64; max_symbol(bits)? as usize + 1];
    for s in symbols {
        *counts
            .get_mut(s as usize)
            .ok_or(Error::SymbolRange { symbol: s.into(), bits })? += 1;
    }
    fit_counts(bits, &counts, epsilon)
}

fn clamp_coordinate(x: f64, dist: &SymbolDistribution) -> f64 {
    let max = dist.max_coordinate();
    if !(0.0..=max).contains(&x) {
        warn!("rate model coordinate {x} outside [0, {max}], clamping");
        return if x.is_nan() { 0.0 } else { x.clamp(0.0, max) };
    }
    x
}

/// Linear interpolation between `p_⌊x⌋` and `p_⌈x⌉`.
pub fn prob_continuous(x: f64, dist: &SymbolDistribution) -> f64 {
    let x = clamp_coordinate(x, dist);
    let k = x.floor() as usize;
    if k + 1 >= dist.probs.len() {
        return dist.probs[dist.probs.len() - 1];
    }
    let t = x - k as f64;
    dist.probs[k] + t * (dist.probs[k + 1] - dist.probs[k])
}

/// Derivative of [`prob_continuous`]; at integer knots the piece to the
/// right is used, except at the top knot which has none. Zero where the
/// input was clamped.
pub fn prob_slope(x: f64, dist: &SymbolDistribution) -> f64 {
    let max = dist.max_coordinate();
    if !(0.0..=max).contains(&x) {
        return 0.0;
    }
    let k = (x.floor() as usize).min(dist.probs.len() - 2);
    dist.probs[k + 1] - dist.probs[k]
}

/// Mean bits per symbol of `scaled_values` under `dist`.
pub fn rate_loss_value(scaled_values: &[f64], dist: &SymbolDistribution) -> f64 {
    let total: f64 = scaled_values.iter().map(|&x| -prob_continuous(x, dist).log2()).sum();
    total / scaled_values.len() as f64
}

/// Differentiable [`rate_loss_value`] on a graph variable of scaled
/// coordinates.
pub fn rate_loss<'g>(scaled_values: Var<'g>, dist: &SymbolDistribution) -> Var<'g> {
    let (probs, slopes) = {
        let v = scaled_values.value();
        (v.map(|x| prob_continuous(x, dist)), v.map(|x| prob_slope(x, dist)))
    };
    let p: Var<'g> = scaled_values.local_linear(probs, Rc::new(slopes));
    p.ln().mean_all().scale(-std::f64::consts::LOG2_E)
}

/// Scales bottleneck activations in `(0, 1)` to rate-model coordinates.
pub fn to_coordinates<'g>(x: Var<'g>, bits: u8) -> Var<'g> {
    x.scale(((1u32 << bits) - 1) as f64)
}

/// Quantized symbols of a tensor already in `[0, 1]`.
pub fn symbols_of(t: &Tensor, bits: u8) -> impl Iterator<Item = u16> + '_ {
    let max = ((1u32 << bits) - 1) as f64;
    t.data().iter().map(move |&x| (x.clamp(0.0, 1.0) * max).round() as u16)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use proptest::prelude::*;

    fn ramp_dist() -> SymbolDistribution {
        let raw: Vec<f64> = (0..64).map(|i| 1.0 + (i as f64 * 0.3).sin().abs()).collect();
        let s: f64 = raw.iter().sum();
        SymbolDistribution::from_probabilities(6, raw.iter().map(|v| v / s).collect(), 0.0).unwrap()
    }

    #[test]
    fn degenerate_histogram_concentrates_mass() {
        let q = QuantizedMap::new(6, 1, 4, 4, vec![7; 16]).unwrap();
        let d = fit_distribution(&[q], DEFAULT_EPSILON).unwrap();
        assert!(d.probs()[7] > 0.9999);
        assert!(d.probs()[8] < 2e-6 && d.probs()[8] > 0.0);
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_histogram_is_uniform() {
        let q = QuantizedMap::new(6, 1, 8, 8, (0..64).collect()).unwrap();
        let d = fit_distribution(&[q], DEFAULT_EPSILON).unwrap();
        assert!(d.probs().iter().all(|p| (p - 1.0 / 64.0).abs() < 1e-15));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(fit_distribution(&[], DEFAULT_EPSILON), Err(Error::Empty(_))));
    }

    #[test]
    fn interpolation_hits_knots_and_midpoints() {
        let d = ramp_dist();
        let p = d.probs();
        assert_eq!(prob_continuous(5.0, &d), p[5]);
        assert!((prob_continuous(5.5, &d) - (p[5] + p[6]) / 2.0).abs() < 1e-16);
        assert_eq!(prob_continuous(63.0, &d), p[63]);
        assert_eq!(prob_continuous(70.0, &d), p[63]);
        assert_eq!(prob_slope(5.0, &d), p[6] - p[5]);
        assert_eq!(prob_slope(63.0, &d), p[63] - p[62]);
    }

    #[test]
    fn slope_matches_finite_differences() {
        let d = ramp_dist();
        let h = 1e-7;
        let numeric = (prob_continuous(5.25 + h, &d) - prob_continuous(5.25 - h, &d)) / (2.0 * h);
        let analytic = prob_slope(5.25, &d);
        assert!(((numeric - analytic) / analytic).abs() < 1e-6);
    }

    #[test]
    fn uniform_distribution_costs_q_bits() {
        let d = SymbolDistribution::uniform(6).unwrap();
        let xs: Vec<f64> = (0..64).map(f64::from).collect();
        assert!((rate_loss_value(&xs, &d) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn certain_symbol_costs_almost_nothing() {
        let q = QuantizedMap::new(6, 1, 1, 10, vec![9; 10]).unwrap();
        let d = fit_distribution(&[q], DEFAULT_EPSILON).unwrap();
        assert!(rate_loss_value(&[9.0; 10], &d) < 1e-3);
    }

    #[test]
    fn graph_rate_loss_matches_scalar_path_and_differentiates() {
        let d = ramp_dist();
        let xs = vec![0.3, 5.25, 17.8, 40.1, 62.6];
        let g = Graph::new();
        let v = g.param(Tensor::new(vec![5], xs.clone()));
        let l = rate_loss(v, &d);
        assert!((l.item() - rate_loss_value(&xs, &d)).abs() < 1e-12);
        let grad = g.grad_tensors(l, &[v])[0].clone().unwrap();
        for (i, &x) in xs.iter().enumerate() {
            let h = 1e-6;
            let mut p = xs.clone();
            p[i] = x + h;
            let mut m = xs.clone();
            m[i] = x - h;
            let numeric = (rate_loss_value(&p, &d) - rate_loss_value(&m, &d)) / (2.0 * h);
            assert!(((grad.data()[i] - numeric) / numeric).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn rate_loss_is_nonnegative(xs in proptest::collection::vec(0.0f64..63.0, 1..50)) {
            prop_assert!(rate_loss_value(&xs, &ramp_dist()) >= 0.0);
        }
    }
}
