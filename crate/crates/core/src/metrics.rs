//! Quality and rate-comparison metrics: MS-SSIM, bits per pixel,
//! Bjøntegaard delta-rate and rank correlation.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::codec::CompressedImage;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rdo::RatePoint;

/// Per-scale exponents of the standard five-scale MS-SSIM.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Smallest side for which all five scales fit an 11-pixel window; odd
/// sides are padded before halving, so this is `(11 - 1)·16 + 1`.
pub const FULL_SCALE_MIN_SIDE: usize = ((SSIM_WINDOW - 1) << (MS_SSIM_WEIGHTS.len() - 1)) + 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    pub scales: usize,
    /// Fewer than five scales were used, with renormalised weights.
    pub reduced: bool,
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW - 1) as f64 / 2.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-0.5 * d * d / (SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Single-channel plane, row-major.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    /// Separable valid-mode Gaussian filter.
    fn blur(&self, g: &[f64; SSIM_WINDOW]) -> Plane {
        let k = SSIM_WINDOW;
        let ow = self.w - k + 1;
        let oh = self.h - k + 1;
        let mut rows = vec![0.0; self.h * ow];
        for y in 0..self.h {
            let src = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                rows[y * ow + x] = g.iter().zip(&src[x..x + k]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for (i, gi) in g.iter().enumerate() {
                let src = &rows[(y + i) * ow..(y + i + 1) * ow];
                for (o, s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                    *o += gi * s;
                }
            }
        }
        Plane { h: oh, w: ow, data: out }
    }

    fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// 2×2 average pooling; an odd trailing row or column is first
    /// duplicated (symmetric padding).
    fn halve(&self) -> Plane {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let at = |y: usize, x: usize| self.data[y.min(self.h - 1) * self.w + x.min(self.w - 1)];
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(0.25 * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1)));
            }
        }
        Plane { h, w, data }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean SSIM and mean contrast-structure term of one scale.
fn ssim_terms(a: &Plane, b: &Plane, g: &[f64; SSIM_WINDOW]) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mu_a = a.blur(g);
    let mu_b = b.blur(g);
    let ab = a.zip(b, |x, y| x * y).blur(g);
    let sq = a.zip(b, |x, y| x * x + y * y).blur(g);
    let n = mu_a.data.len();
    let (mut ssim, mut cs) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let num0 = 2.0 * ma * mb;
        let den0 = ma * ma + mb * mb;
        let lum = (num0 + c1) / (den0 + c1);
        let c = (2.0 * ab.data[i] - num0 + c2) / (sq.data[i] - den0 + c2);
        ssim.push(lum * c);
        cs.push(c);
    }
    (mean(&ssim), mean(&cs))
}

/// Number of scales that fit an 11-pixel window for a `h × w` image.
pub fn ms_ssim_scales(height: usize, width: usize) -> usize {
    let mut side = height.min(width);
    let mut scales = 0;
    while side >= SSIM_WINDOW && scales < MS_SSIM_WEIGHTS.len() {
        scales += 1;
        side = side.div_ceil(2);
    }
    scales
}

/// Multi-scale SSIM of two images with dynamic range 1, computed per
/// channel and averaged. Images whose smaller side is below
/// [`FULL_SCALE_MIN_SIDE`] use as many scales as fit, with the leading
/// weights renormalised to sum to one.
pub fn ms_ssim_detailed(x: &Image, y: &Image) -> Result<MsSsim> {
    if (x.height(), x.width()) != (y.height(), y.width()) {
        return Err(Error::Shape(format!(
            "MS-SSIM of {}x{} and {}x{} images",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    let scales = ms_ssim_scales(x.height(), x.width());
    if scales == 0 {
        return Err(Error::TooSmall(format!(
            "MS-SSIM needs at least {SSIM_WINDOW} pixels per side, got {}x{}",
            x.height(),
            x.width()
        )));
    }
    let reduced = scales < MS_SSIM_WEIGHTS.len();
    let weights: Vec<f64> = if reduced {
        warn!("{}x{} image: MS-SSIM over {scales} scales", x.height(), x.width());
        let s: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
        MS_SSIM_WEIGHTS[..scales].iter().map(|w| w / s).collect()
    } else {
        MS_SSIM_WEIGHTS.to_vec()
    };
    let g = gaussian_window();
    let plane = |img: &Image, c: usize| Plane {
        h: img.height(),
        w: img.width(),
        data: img.channel(c).to_vec(),
    };
    let mut total = 0.0;
    for c in 0..Image::CHANNELS {
        let (mut a, mut b) = (plane(x, c), plane(y, c));
        let mut value = 1.0;
        for (k, &w) in weights.iter().enumerate() {
            if k > 0 {
                a = a.halve();
                b = b.halve();
            }
            let (ssim, cs) = ssim_terms(&a, &b, &g);
            let term = if k + 1 == scales { ssim } else { cs };
            value *= term.max(0.0).powf(w);
        }
        total += value;
    }
    Ok(MsSsim {
        value: total / Image::CHANNELS as f64,
        scales,
        reduced,
    })
}

pub fn ms_ssim(x: &Image, y: &Image) -> Result<f64> {
    Ok(ms_ssim_detailed(x, y)?.value)
}

/// `8 · file bytes / (width · height)`.
pub fn bpp(cs: &CompressedImage) -> f64 {
    cs.bpp()
}

/// Quality axis used for Bjøntegaard integration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QualityAxis {
    /// MS-SSIM as is.
    #[default]
    Raw,
    /// `−10·log10(1 − MS-SSIM)`.
    Decibel,
}

impl QualityAxis {
    pub fn transform(self, q: f64) -> f64 {
        match self {
            QualityAxis::Raw => q,
            QualityAxis::Decibel => -10.0 * (1.0 - q).log10(),
        }
    }
}

/// At least four rate points with strictly increasing bpp and quality.
#[derive(Clone, Debug, PartialEq)]
pub struct RdCurve {
    points: Vec<RatePoint>,
}

impl RdCurve {
    pub const MIN_POINTS: usize = 4;

    /// Sorts by bpp and checks monotonicity.
    pub fn new(mut points: Vec<RatePoint>) -> Result<Self> {
        if points.len() < Self::MIN_POINTS {
            return Err(Error::RdCurve(format!(
                "an RD curve needs at least {} points, got {}",
                Self::MIN_POINTS,
                points.len()
            )));
        }
        for p in &points {
            p.validate()?;
            if p.bpp <= 0.0 {
                return Err(Error::RdCurve(format!("model {}: bpp must be positive", p.model_id)));
            }
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        if points.windows(2).any(|w| !(w[1].bpp > w[0].bpp && w[1].quality > w[0].quality)) {
            return Err(Error::RdCurve("bpp and quality must both be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[RatePoint] {
        &self.points
    }
}

/// Least-squares cubic of `ln(bpp)` against transformed quality, held in a
/// normalised abscissa `t = (q − shift) / scale`.
struct LogRateCubic {
    coeffs: [f64; 4],
    shift: f64,
    scale: f64,
}

impl LogRateCubic {
    fn fit(curve: &RdCurve, axis: QualityAxis) -> Result<Self> {
        let qs: Vec<f64> = curve.points.iter().map(|p| axis.transform(p.quality)).collect();
        if qs.iter().any(|q| !q.is_finite()) {
            return Err(Error::RdCurve("quality transform is not finite (MS-SSIM of 1?)".into()));
        }
        let lo = qs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let shift = 0.5 * (lo + hi);
        let scale = 0.5 * (hi - lo);
        let n = qs.len();
        let a = DMatrix::from_fn(n, 4, |i, j| ((qs[i] - shift) / scale).powi(j as i32));
        let b = DVector::from_iterator(n, curve.points.iter().map(|p| p.bpp.ln()));
        let qr = a.qr();
        let qtb = qr.q().transpose() * b;
        let c = qr
            .r()
            .solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::RdCurve("degenerate quality values".into()))?;
        Ok(Self {
            coeffs: [c[0], c[1], c[2], c[3]],
            shift,
            scale,
        })
    }

    /// `∫ ln(rate) dq` over `[lo, hi]` in untransformed-abscissa units.
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let anti = |q: f64| {
            let t = (q - self.shift) / self.scale;
            self.coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| c * t.powi(j as i32 + 1) / (j as f64 + 1.0))
                .sum::<f64>()
        };
        self.scale * (anti(hi) - anti(lo))
    }
}

/// Bjøntegaard delta-rate of `test` against `reference`, in percent.
/// Negative values mean `test` needs fewer bits for equal quality.
pub fn bd_rate(reference: &RdCurve, test: &RdCurve, axis: QualityAxis) -> Result<f64> {
    let range = |c: &RdCurve| {
        let q = |i: usize| axis.transform(c.points[i].quality);
        (q(0), q(c.points.len() - 1))
    };
    let (r_lo, r_hi) = range(reference);
    let (t_lo, t_hi) = range(test);
    let lo = r_lo.max(t_lo);
    let hi = r_hi.min(t_hi);
    if !(hi > lo) {
        return Err(Error::NoOverlap {
            ref_lo: r_lo,
            ref_hi: r_hi,
            test_lo: t_lo,
            test_hi: t_hi,
        });
    }
    let r = LogRateCubic::fit(reference, axis)?;
    let t = LogRateCubic::fit(test, axis)?;
    let avg = (t.integral(lo, hi) - r.integral(lo, hi)) / (hi - lo);
    Ok(avg.exp_m1() * 100.0)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!("spearman of {} and {} values", a.len(), b.len())));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::RdCurve("rank correlation of a constant sequence".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}
