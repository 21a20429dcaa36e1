//! RGB images with planar `[0, 1]` samples, plus PNG I/O and the
//! reflect-pad / crop pair used around the codec.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A 3-channel image stored channel-major (`C, H, W`).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    /// Builds an image from planar samples, rejecting values outside `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != Self::CHANNELS * height * width {
            return Err(Error::Shape(format!(
                "expected {} samples for a {height}x{width} RGB image, got {}",
                Self::CHANNELS * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Samples `f(channel, y, x)` at every position.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(Self::CHANNELS * height * width);
        for c in 0..Self::CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x).clamp(0.0, 1.0));
                }
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// `[1, 3, H, W]` tensor view of the image.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, Self::CHANNELS, self.height, self.width], self.data.clone())
    }

    /// Stacks equally sized images into a `[N, 3, H, W]` batch.
    pub fn batch(images: &[Image]) -> Result<Tensor> {
        let first = images.first().ok_or(Error::Empty("image batch"))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if (img.height, img.width) != (first.height, first.width) {
                return Err(Error::Shape("batch images differ in size".into()));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Tensor::new(
            vec![images.len(), Self::CHANNELS, first.height, first.width],
            data,
        ))
    }

    /// Splits a `[N, 3, H, W]` tensor into images, clamping into `[0, 1]`.
    pub fn unbatch(t: &Tensor) -> Result<Vec<Image>> {
        let &[_, c, h, w] = t.shape() else {
            return Err(Error::Shape(format!("expected [N, 3, H, W], got {:?}", t.shape())));
        };
        if c != Self::CHANNELS {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        Ok(t.data()
            .chunks(c * h * w)
            .map(|chunk| Image {
                height: h,
                width: w,
                data: chunk.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            })
            .collect())
    }

    /// Reflect-pads bottom and right edges up to the next multiple of `multiple`.
    pub fn reflect_pad_to(&self, multiple: usize) -> Image {
        let ph = self.height.div_ceil(multiple) * multiple;
        let pw = self.width.div_ceil(multiple) * multiple;
        if (ph, pw) == (self.height, self.width) {
            return self.clone();
        }
        Image::from_fn(ph, pw, |c, y, x| {
            self.get(c, reflect(y, self.height), reflect(x, self.width))
        })
    }

    /// Top-left `height x width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Image> {
        if height > self.height || width > self.width {
            return Err(Error::Shape(format!(
                "cannot crop {}x{} image to {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(self.window(0, 0, height, width))
    }

    pub(crate) fn window(&self, top: usize, left: usize, height: usize, width: usize) -> Image {
        Image::from_fn(height, width, |c, y, x| self.get(c, top + y, left + x))
    }

    /// Rotates counter-clockwise by `quarter_turns` × 90°.
    pub fn rotate90(&self, quarter_turns: usize) -> Image {
        let (h, w) = (self.height, self.width);
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => Image::from_fn(w, h, |c, y, x| self.get(c, x, w - 1 - y)),
            2 => Image::from_fn(h, w, |c, y, x| self.get(c, h - 1 - y, w - 1 - x)),
            _ => Image::from_fn(w, h, |c, y, x| self.get(c, h - 1 - x, y)),
        }
    }

    /// Area-averaging resize by `factor ≤ 1`.
    pub fn downscale(&self, factor: f64) -> Image {
        let nh = ((self.height as f64 * factor).round() as usize).max(1);
        let nw = ((self.width as f64 * factor).round() as usize).max(1);
        self.resize_area(nh, nw)
    }

    /// Area-averaging resize to `nh × nw`, each no larger than the source.
    pub fn resize_area(&self, nh: usize, nw: usize) -> Image {
        if (nh, nw) == (self.height, self.width) {
            return self.clone();
        }
        let sy = self.height as f64 / nh as f64;
        let sx = self.width as f64 / nw as f64;
        Image::from_fn(nh, nw, |c, y, x| {
            let (y0, y1) = (y as f64 * sy, (y + 1) as f64 * sy);
            let (x0, x1) = (x as f64 * sx, (x + 1) as f64 * sx);
            let mut acc = 0.0;
            let mut area = 0.0;
            for iy in y0.floor() as usize..(y1.ceil() as usize).min(self.height) {
                let wy = (y1.min(iy as f64 + 1.0) - y0.max(iy as f64)).max(0.0);
                for ix in x0.floor() as usize..(x1.ceil() as usize).min(self.width) {
                    let wx = (x1.min(ix as f64 + 1.0) - x0.max(ix as f64)).max(0.0);
                    acc += wy * wx * self.get(c, iy, ix);
                    area += wy * wx;
                }
            }
            acc / area
        })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let rgb = image::open(path)?.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        Ok(Image::from_fn(h, w, |c, y, x| {
            rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        }))
    }

    /// Writes an 8-bit PNG, rounding each sample to the nearest code.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| (self.get(c, y as usize, x as usize) * 255.0).round() as u8;
            Rgb([px(0), px(1), px(2)])
        });
        buf.save(path)?;
        Ok(())
    }

    /// Quantises every sample to 8 bits, as a PNG round trip would.
    pub fn to_8bit(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| (v * 255.0).round() / 255.0).collect(),
        }
    }
}

/// Mirror index without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n { m } else { period - m }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |c, y, x| ((c * 7 + y * 3 + x) % 11) as f64 / 10.0)
    }

    #[test]
    fn rejects_out_of_range_samples() {
        assert!(Image::new(1, 1, vec![0.0, 0.5, 1.2]).is_err());
        assert!(Image::new(1, 1, vec![0.0, 0.5]).is_err());
    }

    #[test]
    fn reflect_pad_then_crop_is_identity() {
        let img = sample(13, 21);
        let padded = img.reflect_pad_to(16);
        assert_eq!((padded.height(), padded.width()), (16, 32));
        assert_eq!(padded.get(0, 13, 0), img.get(0, 11, 0));
        assert_eq!(padded.crop(13, 21).unwrap(), img);
    }

    #[test]
    fn four_quarter_turns_restore_the_image() {
        let img = sample(5, 8);
        let r = img.rotate90(1);
        assert_eq!((r.height(), r.width()), (8, 5));
        assert_eq!(r.rotate90(3), img);
        assert_eq!(img.rotate90(2).rotate90(2), img);
    }

    #[test]
    fn downscale_by_half_averages_blocks() {
        let img = Image::from_fn(4, 4, |_, y, x| if (y + x) % 2 == 0 { 1.0 } else { 0.0 });
        let small = img.downscale(0.5);
        assert_eq!((small.height(), small.width()), (2, 2));
        assert!(small.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn png_round_trip_is_exact_for_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = sample(6, 9).to_8bit();
        img.save_png(&path).unwrap();
        assert_eq!(Image::load_png(&path).unwrap(), img);
    }
}
