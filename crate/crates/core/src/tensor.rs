//! Dense row-major `f64` tensors and the numeric kernels the autodiff graph
//! is built on (convolution family, pixel shuffle, matrix products).
//!
//! Image-shaped tensors use NCHW layout throughout.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements per leading index.
    pub fn sample_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    /// Elements per channel for a tensor shaped `[N, C, ...]`.
    fn inner_len(&self) -> usize {
        self.shape[2..].iter().product()
    }

    pub fn sum_per_sample(&self) -> Tensor {
        let n = self.batch();
        let data = self.data.chunks(self.sample_len()).map(|c| c.iter().sum()).collect();
        Tensor::new(vec![n], data)
    }

    pub fn broadcast_per_sample(&self, shape: &[usize]) -> Tensor {
        assert_eq!(self.shape, [shape[0]]);
        let per: usize = shape[1..].iter().product();
        let mut data = Vec::with_capacity(shape[0] * per);
        for &v in &self.data {
            data.extend(std::iter::repeat_n(v, per));
        }
        Tensor::new(shape.to_vec(), data)
    }

    /// Sum over every axis except axis 1.
    pub fn channel_sum(&self) -> Tensor {
        let c = self.shape[1];
        let inner = self.inner_len();
        let mut out = vec![0.0; c];
        for sample in self.data.chunks(c * inner) {
            for (ch, block) in sample.chunks(inner).enumerate() {
                out[ch] += block.iter().sum::<f64>();
            }
        }
        Tensor::new(vec![c], out)
    }

    /// Broadcast a `[C]` vector along axis 1 of `shape`.
    pub fn channel_broadcast(&self, shape: &[usize]) -> Tensor {
        assert_eq!(self.shape, [shape[1]], "channel broadcast mismatch");
        let inner: usize = shape[2..].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for _ in 0..shape[0] {
            for &v in &self.data {
                data.extend(std::iter::repeat_n(v, inner));
            }
        }
        Tensor::new(shape.to_vec(), data)
    }

    pub fn transpose2d(&self) -> Tensor {
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, 0.0);
        Tensor::new(vec![m, n], out)
    }
}

/// `c = a·b + beta·c` with optional transposition of row-major operands.
/// Shapes are given post-transposition: `a` is m×k, `b` is k×n.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices are sized by the caller for the stated dimensions and the
    // strides above never step outside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel 2-D convolution with zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    pub fn output_size(&self, input: usize) -> usize {
        (input + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

fn im2col(x: &[f64], ci: usize, h: usize, w: usize, g: ConvGeometry, ho: usize, wo: usize) -> Vec<f64> {
    let k = g.kernel;
    let mut col = vec![0.0; ci * k * k * ho * wo];
    for c in 0..ci {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut col[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im(col: &[f64], out: &mut [f64], ci: usize, h: usize, w: usize, g: ConvGeometry, ho: usize, wo: usize) {
    let k = g.kernel;
    for c in 0..ci {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &col[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `x: [N, Ci, H, W]`, `w: [Co, Ci, K, K]` -> `[N, Co, Ho, Wo]`.
pub fn conv2d(x: &Tensor, w: &Tensor, g: ConvGeometry) -> Tensor {
    let (n, ci, h, wd) = dims4(x);
    let (co, ci2, k, _) = dims4(w);
    assert_eq!(ci, ci2, "conv2d channel mismatch: input {ci}, kernel {ci2}");
    assert_eq!(k, g.kernel);
    let (ho, wo) = (g.output_size(h), g.output_size(wd));
    let mut out = vec![0.0; n * co * ho * wo];
    let ckk = ci * k * k;
    for (xs, ys) in x.data.chunks(ci * h * wd).zip(out.chunks_mut(co * ho * wo)) {
        let col = im2col(xs, ci, h, wd, g, ho, wo);
        gemm(co, ckk, ho * wo, &w.data, false, &col, false, ys, 0.0);
    }
    Tensor::new(vec![n, co, ho, wo], out)
}

/// Adjoint of [`conv2d`] with respect to its input.
pub fn conv2d_input_grad(gy: &Tensor, w: &Tensor, g: ConvGeometry, input_hw: (usize, usize)) -> Tensor {
    let (n, co, ho, wo) = dims4(gy);
    let (co2, ci, k, _) = dims4(w);
    assert_eq!(co, co2);
    let (h, wd) = input_hw;
    let ckk = ci * k * k;
    let mut out = vec![0.0; n * ci * h * wd];
    let mut col = vec![0.0; ckk * ho * wo];
    for (gs, xs) in gy.data.chunks(co * ho * wo).zip(out.chunks_mut(ci * h * wd)) {
        gemm(ckk, co, ho * wo, &w.data, true, gs, false, &mut col, 0.0);
        col2im(&col, xs, ci, h, wd, g, ho, wo);
    }
    Tensor::new(vec![n, ci, h, wd], out)
}

/// Adjoint of [`conv2d`] with respect to its kernel.
pub fn conv2d_weight_grad(x: &Tensor, gy: &Tensor, g: ConvGeometry) -> Tensor {
    let (n, ci, h, wd) = dims4(x);
    let (n2, co, ho, wo) = dims4(gy);
    assert_eq!(n, n2);
    let k = g.kernel;
    let ckk = ci * k * k;
    let mut out = vec![0.0; co * ckk];
    for (xs, gs) in x.data.chunks(ci * h * wd).zip(gy.data.chunks(co * ho * wo)) {
        let col = im2col(xs, ci, h, wd, g, ho, wo);
        gemm(co, ho * wo, ckk, gs, false, &col, true, &mut out, 1.0);
    }
    Tensor::new(vec![co, ci, k, k], out)
}

/// `[N, C·r², H, W]` -> `[N, C, H·r, W·r]`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Tensor {
    let (n, cr, h, w) = dims4(x);
    assert_eq!(cr % (r * r), 0, "pixel shuffle needs channels divisible by r²");
    let c = cr / (r * r);
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let src_c = ch * r * r + dy * r + dx;
                    let src = &x.data[((b * cr + src_c) * h) * w..((b * cr + src_c) * h + h) * w];
                    for y in 0..h {
                        let oy = y * r + dy;
                        let base = ((b * c + ch) * h * r + oy) * w * r;
                        for xx in 0..w {
                            out[base + xx * r + dx] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c, h * r, w * r], out)
}

/// Inverse of [`pixel_shuffle`]: `[N, C, H·r, W·r]` -> `[N, C·r², H, W]`.
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Tensor {
    let (n, c, hr, wr) = dims4(x);
    assert!(hr % r == 0 && wr % r == 0, "pixel unshuffle needs dims divisible by r");
    let (h, w) = (hr / r, wr / r);
    let cr = c * r * r;
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let dst_c = ch * r * r + dy * r + dx;
                    let dst = ((b * cr + dst_c) * h) * w;
                    for y in 0..h {
                        let base = ((b * c + ch) * hr + y * r + dy) * wr;
                        for xx in 0..w {
                            out[dst + y * w + xx] = x.data[base + xx * r + dx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, cr, h, w], out)
}

pub(crate) fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    match *t.shape() {
        [a, b, c, d] => (a, b, c, d),
        ref s => panic!("expected a 4-d tensor, got shape {s:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|i| ((i * 37 % 101) as f64) / 50.0 - 1.0).collect())
    }

    fn naive_conv(x: &Tensor, w: &Tensor, g: ConvGeometry) -> Tensor {
        let (n, ci, h, wd) = dims4(x);
        let (co, _, k, _) = dims4(w);
        let (ho, wo) = (g.output_size(h), g.output_size(wd));
        let mut out = Tensor::zeros(&[n, co, ho, wo]);
        for b in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data[((b * ci + c) * h + iy as usize) * wd + ix as usize]
                                        * w.data[((o * ci + c) * k + ky) * k + kx];
                                }
                            }
                        }
                        out.data[((b * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_direct_loop() {
        for g in [ConvGeometry::new(3, 1, 1), ConvGeometry::new(4, 2, 1), ConvGeometry::new(5, 1, 2)] {
            let x = ramp(&[2, 3, 8, 8]);
            let w = ramp(&[4, 3, g.kernel, g.kernel]);
            let fast = conv2d(&x, &w, g);
            let slow = naive_conv(&x, &w, g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_adjoints_satisfy_dot_product_identity() {
        // <conv(x, w), gy> = <x, input_grad(gy, w)> = <w, weight_grad(x, gy)>
        let g = ConvGeometry::new(4, 2, 1);
        let x = ramp(&[2, 3, 8, 8]);
        let w = ramp(&[5, 3, 4, 4]).map(|v| v * 0.7);
        let y = conv2d(&x, &w, g);
        let gy = y.map(|v| (v * 3.1).sin());
        let lhs = dot(&y, &gy);
        let gx = conv2d_input_grad(&gy, &w, g, (8, 8));
        let gw = conv2d_weight_grad(&x, &gy, g);
        assert!((lhs - dot(&x, &gx)).abs() < 1e-9 * lhs.abs().max(1.0));
        assert!((lhs - dot(&w, &gw)).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn pixel_shuffle_round_trips_and_places_subpixels() {
        let x = ramp(&[1, 8, 3, 2]);
        let y = pixel_shuffle(&x, 2);
        assert_eq!(y.shape(), &[1, 2, 6, 4]);
        // channel 1 of the input lands at offset (0, 1) inside every 2x2 cell
        assert_eq!(y.data()[1], x.data()[6]);
        assert_eq!(pixel_unshuffle(&y, 2), x);
    }

    #[test]
    fn channel_broadcast_and_sum_are_adjoint() {
        let b = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]);
        let big = b.channel_broadcast(&[2, 3, 2, 2]);
        assert_eq!(big.channel_sum().data(), &[8.0, 16.0, 24.0]);
        let dense = b.channel_broadcast(&[4, 3]);
        assert_eq!(dense.data()[3..6], [1.0, 2.0, 3.0]);
    }
}
