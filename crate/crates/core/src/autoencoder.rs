//! Forward encoder and backward decoder built from PReLU residual units.
//!
//! Encoder layout for `S` downsampling stages:
//!
//! ```text
//! conv k_b (3 -> F) . PReLU
//! S x [ conv 4x4/2 (F -> F) . PReLU . residual units ]
//! conv k_b (F -> C) . sigmoid                      => FeatureMap in (0, 1)
//! ```
//!
//! The decoder mirrors it, replacing each strided convolution by a
//! `conv k_i (F -> 4F)` followed by a 2x pixel shuffle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Conv2d, PRelu, ParamStore};
use crate::tensor::Tensor;

/// Kernel size of every strided downsampling convolution.
pub const DOWNSAMPLE_KERNEL: usize = 4;
/// Stride of every downsampling convolution (and pixel-shuffle factor).
pub const DOWNSAMPLE_STRIDE: usize = 2;
/// Number of residual units in the standard encoder.
pub const STANDARD_RESIDUAL_UNITS: usize = 8;

const RESIDUAL_OUTPUT_GAIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualUnitSpec {
    pub channels: usize,
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub residual_units: usize,
    pub downsample_stages: usize,
    /// Bottleneck feature-map count `C`; the main rate knob.
    pub bottleneck_channels: usize,
    pub interior_channels: usize,
    pub boundary_kernel: usize,
    pub interior_kernel: usize,
    /// Lifts the fixed residual-unit count for miniature test and toy models.
    #[serde(default)]
    pub allow_reduced_depth: bool,
}

impl EncoderSpec {
    /// The standard encoder: 8 residual units, 4 stages, 64 interior channels.
    pub fn standard(bottleneck_channels: usize) -> Self {
        Self {
            residual_units: STANDARD_RESIDUAL_UNITS,
            downsample_stages: 4,
            bottleneck_channels,
            interior_channels: 64,
            boundary_kernel: 5,
            interior_kernel: 3,
            allow_reduced_depth: false,
        }
    }

    /// A reduced-depth encoder for experiments that cannot afford the
    /// standard network.
    pub fn miniature(residual_units: usize, downsample_stages: usize, interior_channels: usize, bottleneck_channels: usize) -> Self {
        Self {
            residual_units,
            downsample_stages,
            bottleneck_channels,
            interior_channels,
            boundary_kernel: 5,
            interior_kernel: 3,
            allow_reduced_depth: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidSpec(m));
        if !self.allow_reduced_depth && self.residual_units != STANDARD_RESIDUAL_UNITS {
            return fail(format!(
                "the encoder has exactly {STANDARD_RESIDUAL_UNITS} residual units, got {}",
                self.residual_units
            ));
        }
        if self.bottleneck_channels == 0 || self.bottleneck_channels > 255 {
            return fail(format!("bottleneck channels must be in 1..=255, got {}", self.bottleneck_channels));
        }
        if self.interior_channels == 0 {
            return fail("interior channels must be positive".into());
        }
        if self.downsample_stages == 0 || self.downsample_stages > 8 {
            return fail(format!("downsample stages must be in 1..=8, got {}", self.downsample_stages));
        }
        for (name, k) in [("boundary", self.boundary_kernel), ("interior", self.interior_kernel)] {
            if k % 2 == 0 {
                return fail(format!("{name} kernel must be odd, got {k}"));
            }
        }
        Ok(())
    }

    /// Spatial reduction factor `2^stages`.
    pub fn reduction(&self) -> usize {
        DOWNSAMPLE_STRIDE.pow(self.downsample_stages as u32)
    }

    /// Residual units placed after each downsampling stage; any remainder
    /// goes to the earliest stages.
    pub fn units_per_stage(&self) -> Vec<usize> {
        let s = self.downsample_stages;
        (0..s)
            .map(|i| self.residual_units / s + usize::from(i < self.residual_units % s))
            .collect()
    }

    pub fn residual_unit(&self) -> ResidualUnitSpec {
        ResidualUnitSpec {
            channels: self.interior_channels,
            kernel: self.interior_kernel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpsampleKind {
    PixelShuffle,
}

/// Decoder description; always the mirror image of an [`EncoderSpec`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub mirror_of: EncoderSpec,
    pub upsample: UpsampleKind,
}

impl DecoderSpec {
    pub fn mirror(encoder: &EncoderSpec) -> Self {
        Self {
            mirror_of: encoder.clone(),
            upsample: UpsampleKind::PixelShuffle,
        }
    }
}

/// Bottleneck activations of one image, `C x h x w`, values in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    /// Takes one sample of a `[1, C, h, w]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [1, c, h, w] => Self::new(c, h, w, t.data().to_vec()),
            ref s => Err(Error::Shape(format!("expected [1, C, h, w], got {s:?}"))),
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.channels, self.height, self.width], self.data.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualUnit {
    pub spec: ResidualUnitSpec,
    pub conv1: Conv2d,
    pub act: PRelu,
    pub conv2: Conv2d,
}

impl ResidualUnit {
    fn new(store: &mut ParamStore, name: &str, spec: ResidualUnitSpec, rng: &mut ChaCha8Rng) -> Self {
        let c = spec.channels;
        Self {
            spec,
            conv1: Conv2d::new(store, &format!("{name}.conv1"), c, c, spec.kernel, 1, 1.0, rng),
            act: PRelu::new(store, &format!("{name}.act"), c),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), c, c, spec.kernel, 1, RESIDUAL_OUTPUT_GAIN, rng),
        }
    }

    /// `x + conv2(prelu(conv1(x)))`; nothing is applied after the addition.
    pub fn forward<'g>(&self, x: Var<'g>, p: &[Var<'g>]) -> Var<'g> {
        let h = self.act.forward(self.conv1.forward(x, p), p);
        x + self.conv2.forward(h, p)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct EncoderStage {
    down: Conv2d,
    act: PRelu,
    units: Vec<ResidualUnit>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    spec: EncoderSpec,
    params: ParamStore,
    conv_in: Conv2d,
    act_in: PRelu,
    stages: Vec<EncoderStage>,
    conv_out: Conv2d,
}

/// Builds an encoder with seeded fan-in scaled initialisation.
pub fn build_encoder(spec: &EncoderSpec, seed: u64) -> Result<Encoder> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let f = spec.interior_channels;
    let conv_in = Conv2d::new(&mut p, "enc.in", Image::CHANNELS, f, spec.boundary_kernel, 1, 1.0, &mut rng);
    let act_in = PRelu::new(&mut p, "enc.in.act", f);
    let stages = spec
        .units_per_stage()
        .into_iter()
        .enumerate()
        .map(|(s, count)| {
            let down = Conv2d::new(&mut p, &format!("enc.down{s}"), f, f, DOWNSAMPLE_KERNEL, DOWNSAMPLE_STRIDE, 1.0, &mut rng);
            let act = PRelu::new(&mut p, &format!("enc.down{s}.act"), f);
            let units = (0..count)
                .map(|u| ResidualUnit::new(&mut p, &format!("enc.res{s}.{u}"), spec.residual_unit(), &mut rng))
                .collect();
            EncoderStage { down, act, units }
        })
        .collect();
    let conv_out = Conv2d::new(&mut p, "enc.out", f, spec.bottleneck_channels, spec.boundary_kernel, 1, 1.0, &mut rng);
    Ok(Encoder {
        spec: spec.clone(),
        params: p,
        conv_in,
        act_in,
        stages,
        conv_out,
    })
}

impl Encoder {
    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Replaces all parameters; shapes must match the built layout.
    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        check_layout(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    /// Residual units in application order.
    pub fn residual_units(&self) -> impl Iterator<Item = &ResidualUnit> {
        self.stages.iter().flat_map(|s| s.units.iter())
    }

    /// Graph-level forward pass, `[N, 3, H, W]` -> `[N, C, H/2^S, W/2^S]`.
    pub fn forward<'g>(&self, x: Var<'g>, p: &[Var<'g>]) -> Var<'g> {
        let mut h = self.act_in.forward(self.conv_in.forward(x, p), p);
        for stage in &self.stages {
            h = stage.act.forward(stage.down.forward(h, p), p);
            for unit in &stage.units {
                h = unit.forward(h, p);
            }
        }
        self.conv_out.forward(h, p).sigmoid()
    }

    /// Inference on a batch tensor without gradient tracking.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        check_divisible(x.shape()[2], x.shape()[3], self.spec.reduction())?;
        let g = Graph::new();
        let p = self.params.bind(&g, false);
        let out = self.forward(g.constant(x.clone()), &p);
        let t = out.value().clone();
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderStage {
    units: Vec<ResidualUnit>,
    up: Conv2d,
    act: PRelu,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    spec: DecoderSpec,
    params: ParamStore,
    conv_in: Conv2d,
    act_in: PRelu,
    stages: Vec<DecoderStage>,
    conv_out: Conv2d,
}

/// Builds the decoder mirroring `spec.mirror_of`.
pub fn build_decoder(spec: &DecoderSpec, seed: u64) -> Result<Decoder> {
    let enc = &spec.mirror_of;
    enc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let f = enc.interior_channels;
    let r2 = DOWNSAMPLE_STRIDE * DOWNSAMPLE_STRIDE;
    let conv_in = Conv2d::new(&mut p, "dec.in", enc.bottleneck_channels, f, enc.boundary_kernel, 1, 1.0, &mut rng);
    let act_in = PRelu::new(&mut p, "dec.in.act", f);
    let mut per_stage = enc.units_per_stage();
    per_stage.reverse();
    let stages = per_stage
        .into_iter()
        .enumerate()
        .map(|(s, count)| {
            let units = (0..count)
                .map(|u| ResidualUnit::new(&mut p, &format!("dec.res{s}.{u}"), enc.residual_unit(), &mut rng))
                .collect();
            let up = Conv2d::new(&mut p, &format!("dec.up{s}"), f, f * r2, enc.interior_kernel, 1, 1.0, &mut rng);
            let act = PRelu::new(&mut p, &format!("dec.up{s}.act"), f);
            DecoderStage { units, up, act }
        })
        .collect();
    let conv_out = Conv2d::new(&mut p, "dec.out", f, Image::CHANNELS, enc.boundary_kernel, 1, 1.0, &mut rng);
    Ok(Decoder {
        spec: spec.clone(),
        params: p,
        conv_in,
        act_in,
        stages,
        conv_out,
    })
}

impl Decoder {
    pub fn spec(&self) -> &DecoderSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        check_layout(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    /// Graph-level forward pass, `[N, C, h, w]` -> `[N, 3, h·2^S, w·2^S]`.
    pub fn forward<'g>(&self, z: Var<'g>, p: &[Var<'g>]) -> Var<'g> {
        let mut h = self.act_in.forward(self.conv_in.forward(z, p), p);
        for stage in &self.stages {
            for unit in &stage.units {
                h = unit.forward(h, p);
            }
            let up = stage.up.forward(h, p).pixel_shuffle(DOWNSAMPLE_STRIDE);
            h = stage.act.forward(up, p);
        }
        self.conv_out.forward(h, p).sigmoid()
    }

    pub fn eval(&self, z: &Tensor) -> Result<Tensor> {
        let c = self.spec.mirror_of.bottleneck_channels;
        if z.shape().len() != 4 || z.shape()[1] != c {
            return Err(Error::Shape(format!(
                "decoder expects [N, {c}, h, w] input, got {:?}",
                z.shape()
            )));
        }
        let g = Graph::new();
        let p = self.params.bind(&g, false);
        let out = self.forward(g.constant(z.clone()), &p);
        let t = out.value().clone();
        Ok(t)
    }
}

/// Everything needed to rebuild an autoencoder's layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    /// Quantizer bit depth `Q`.
    pub quant_bits: u8,
}

impl ModelSpec {
    pub fn new(encoder: EncoderSpec, quant_bits: u8) -> Self {
        Self { encoder, quant_bits }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        crate::quantizer::max_symbol(self.quant_bits)?;
        Ok(())
    }

    pub fn decoder(&self) -> DecoderSpec {
        DecoderSpec::mirror(&self.encoder)
    }
}

/// A matched encoder/decoder pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    spec: ModelSpec,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Autoencoder {
    /// Builds both halves; the decoder draws from a stream derived from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let encoder = build_encoder(&spec.encoder, seed)?;
        let decoder = build_decoder(&spec.decoder(), seed ^ 0x9e37_79b9_7f4a_7c15)?;
        Ok(Self { spec, encoder, decoder })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn quant_bits(&self) -> u8 {
        self.spec.quant_bits
    }

    pub fn reduction(&self) -> usize {
        self.spec.encoder.reduction()
    }

    /// Order-sensitive hash of both parameter sets.
    pub fn checksum(&self) -> u64 {
        self.encoder.params().checksum() ^ self.decoder.params().checksum().rotate_left(1)
    }
}

/// Runs the encoder on one image whose sides are multiples of `2^stages`.
pub fn encode_forward(image: &Image, encoder: &Encoder) -> Result<FeatureMap> {
    check_divisible(image.height(), image.width(), encoder.spec.reduction())?;
    FeatureMap::from_tensor(&encoder.eval(&image.to_tensor())?)
}

/// Decodes one (possibly dequantized) feature map into an image.
pub fn decode_forward(fmap: &FeatureMap, decoder: &Decoder) -> Result<Image> {
    let out = decoder.eval(&fmap.to_tensor())?;
    Ok(Image::unbatch(&out)?.remove(0))
}

fn check_divisible(height: usize, width: usize, multiple: usize) -> Result<()> {
    if !height.is_multiple_of(multiple) || !width.is_multiple_of(multiple) || height == 0 || width == 0 {
        return Err(Error::Padding { height, width, multiple });
    }
    Ok(())
}

fn check_layout(current: &ParamStore, new: &ParamStore) -> Result<()> {
    if current.len() != new.len()
        || current
            .tensors()
            .iter()
            .zip(new.tensors())
            .any(|(a, b)| a.shape() != b.shape())
    {
        return Err(Error::ModelMismatch("parameter layout differs from the model spec".into()));
    }
    Ok(())
}
