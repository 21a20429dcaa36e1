//! Distortion, perceptual and adversarial loss terms and their weighted sum
//! `L = L2 + λ1·L_R + λ2·L_percept + λ3·L_generator`.
//!
//! Both squared norms are normalised per element (mean squared error), so
//! the λ values act on per-element quantities.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Dense, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Rate weight λ1; driven by the training schedule.
    pub rate: f64,
    /// Perceptual weight λ2.
    pub perceptual: f64,
    /// Adversarial (generator) weight λ3.
    pub adversarial: f64,
    /// Gradient-penalty weight β of the critic loss.
    pub gradient_penalty: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rate: 0.0,
            perceptual: 0.003,
            adversarial: 0.0001,
            gradient_penalty: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rate", self.rate),
            ("perceptual", self.perceptual),
            ("adversarial", self.adversarial),
            ("gradient_penalty", self.gradient_penalty),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Weights(format!("{name} weight must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Pure distortion + rate objective (enhancement terms off).
    pub fn rate_distortion(rate: f64) -> Self {
        Self {
            rate,
            perceptual: 0.0,
            adversarial: 0.0,
            ..Self::default()
        }
    }
}

/// A frozen network mapping images to feature tensors.
pub trait FeatureExtractor {
    /// Features of `x: [N, 3, H, W]`. Implementations must bind their
    /// parameters as constants so that no gradient ever reaches them.
    fn features<'g>(&self, graph: &'g Graph, x: Var<'g>) -> Var<'g>;

    /// Fingerprint of the frozen parameters.
    fn checksum(&self) -> u64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayer {
    pub out_channels: usize,
    pub stride: usize,
}

/// Convolutional feature network descriptor. `tap` selects which
/// convolution's (rectified) output is returned; the default is the last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureExtractorSpec {
    pub layers: Vec<FeatureLayer>,
    pub tap: usize,
    pub seed: u64,
}

impl Default for FeatureExtractorSpec {
    fn default() -> Self {
        let layers = [(16, 1), (16, 2), (32, 1), (32, 2)]
            .into_iter()
            .map(|(out_channels, stride)| FeatureLayer { out_channels, stride })
            .collect::<Vec<_>>();
        Self {
            tap: layers.len() - 1,
            layers,
            seed: 0x5eed,
        }
    }
}

/// 3x3 convolution stack with ReLU activations and frozen weights.
#[derive(Clone, Debug)]
pub struct FrozenConvNet {
    spec: FeatureExtractorSpec,
    params: ParamStore,
    convs: Vec<Conv2d>,
}

impl FrozenConvNet {
    /// Fixed random weights drawn from `spec.seed`.
    pub fn random(spec: FeatureExtractorSpec) -> Result<Self> {
        if spec.layers.is_empty() || spec.tap >= spec.layers.len() {
            return Err(Error::InvalidSpec(format!(
                "feature tap {} outside {} layers",
                spec.tap,
                spec.layers.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = ParamStore::new();
        let mut in_c = 3;
        let mut convs = Vec::new();
        for (i, l) in spec.layers.iter().enumerate().take(spec.tap + 1) {
            let kernel = if l.stride == 1 { 3 } else { 4 };
            convs.push(Conv2d::new(&mut params, &format!("psi.{i}"), in_c, l.out_channels, kernel, l.stride, 1.0, &mut rng));
            in_c = l.out_channels;
        }
        Ok(Self { spec, params, convs })
    }

    /// Swaps in externally trained weights with the same layout.
    pub fn with_params(mut self, params: ParamStore) -> Result<Self> {
        let same = params.len() == self.params.len()
            && params.tensors().iter().zip(self.params.tensors()).all(|(a, b)| a.shape() == b.shape());
        if !same {
            return Err(Error::ModelMismatch("feature extractor weights do not match its spec".into()));
        }
        self.params = params;
        Ok(self)
    }

    pub fn spec(&self) -> &FeatureExtractorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }
}

impl FeatureExtractor for FrozenConvNet {
    fn features<'g>(&self, graph: &'g Graph, x: Var<'g>) -> Var<'g> {
        let p = self.params.bind(graph, false);
        self.convs.iter().fold(x, |h, c| c.forward(h, &p).leaky_relu(0.0))
    }

    fn checksum(&self) -> u64 {
        self.params.checksum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorSpec {
    /// Side length of the (square) images the critic scores.
    pub input_size: usize,
    pub base_channels: usize,
    /// Number of stride-2 convolution blocks.
    pub blocks: usize,
    pub hidden: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            input_size: 128,
            base_channels: 32,
            blocks: 4,
            hidden: 256,
            leaky_slope: 0.2,
        }
    }
}

/// Wasserstein critic: strided convolutions, then two dense layers to an
/// unbounded scalar score per image.
#[derive(Clone, Debug)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    params: ParamStore,
    convs: Vec<Conv2d>,
    dense1: Dense,
    dense2: Dense,
    flat: usize,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        let r = 1usize << spec.blocks;
        if spec.blocks == 0 || !spec.input_size.is_multiple_of(r) || spec.hidden == 0 || spec.base_channels == 0 {
            return Err(Error::InvalidSpec(format!(
                "critic input {} must be a multiple of 2^{} with nonzero widths",
                spec.input_size, spec.blocks
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut in_c = 3;
        let mut convs = Vec::new();
        for b in 0..spec.blocks {
            let out_c = spec.base_channels << b.min(3);
            convs.push(Conv2d::new(&mut params, &format!("critic.conv{b}"), in_c, out_c, 4, 2, 1.0, &mut rng));
            in_c = out_c;
        }
        let side = spec.input_size / r;
        let flat = in_c * side * side;
        let dense1 = Dense::new(&mut params, "critic.fc1", flat, spec.hidden, &mut rng);
        let dense2 = Dense::new(&mut params, "critic.fc2", spec.hidden, 1, &mut rng);
        Ok(Self {
            spec,
            params,
            convs,
            dense1,
            dense2,
            flat,
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Makes the critic output the constant `c` for every input.
    pub fn set_constant(&mut self, c: f64) {
        for t in self.params.tensors_mut() {
            *t = Tensor::zeros(t.shape());
        }
        *self.params.get_mut(self.dense2.bias) = Tensor::new(vec![1], vec![c]);
    }

    /// Scores `x: [N, 3, S, S]` -> `[N]`.
    pub fn forward<'g>(&self, x: Var<'g>, p: &[Var<'g>]) -> Var<'g> {
        let n = x.shape()[0];
        let h = self
            .convs
            .iter()
            .fold(x, |h, c| c.forward(h, p).leaky_relu(self.spec.leaky_slope));
        let h = self.dense1.forward(h.reshape(&[n, self.flat]), p).leaky_relu(self.spec.leaky_slope);
        self.dense2.forward(h, p).reshape(&[n])
    }

    /// Scores without gradient tracking.
    pub fn score(&self, x: &Tensor) -> Vec<f64> {
        let g = Graph::new();
        let p = self.params.bind(&g, false);
        let out = self.forward(g.constant(x.clone()), &p);
        let v = out.value().data().to_vec();
        v
    }
}

fn check_same_shape(y: Var<'_>, x: Var<'_>) -> Result<()> {
    if y.shape() != x.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", y.shape(), x.shape())));
    }
    Ok(())
}

/// Batch mean of per-image mean squared error.
pub fn distortion_l2<'g>(y: Var<'g>, x: Var<'g>) -> Result<Var<'g>> {
    check_same_shape(y, x)?;
    Ok((y - x).square().mean_all())
}

/// Mean squared difference of extractor features.
pub fn perceptual_loss<'g>(y: Var<'g>, x: Var<'g>, psi: &dyn FeatureExtractor) -> Result<Var<'g>> {
    check_same_shape(y, x)?;
    let g = y.graph();
    Ok((psi.features(g, y) - psi.features(g, x)).square().mean_all())
}

/// `−mean D(Y)`.
pub fn generator_loss<'g>(y: Var<'g>, critic: &Discriminator, critic_params: &[Var<'g>]) -> Var<'g> {
    -critic.forward(y, critic_params).mean_all()
}

/// WGAN-GP two-sided penalty `mean((‖∇D(x̂)‖₂ − 1)²)` on
/// `x̂ = u·X + (1 − u)·Y` with one mixing weight `u` per image.
pub fn gradient_penalty<'g>(
    y: Var<'g>,
    x: Var<'g>,
    critic: &Discriminator,
    critic_params: &[Var<'g>],
    mix: &[f64],
) -> Result<Var<'g>> {
    check_same_shape(y, x)?;
    let shape = y.shape();
    if mix.len() != shape[0] {
        return Err(Error::Shape(format!("{} mixing weights for batch of {}", mix.len(), shape[0])));
    }
    let u = Tensor::new(vec![mix.len()], mix.to_vec()).broadcast_per_sample(&shape);
    let interp = x.value().zip_map(&u, |a, w| w * a).zip_map(&y.value().zip_map(&u, |b, w| (1.0 - w) * b), |a, b| a + b);
    let g = y.graph();
    let xhat = g.param(interp);
    let scores = critic.forward(xhat, critic_params).sum_all();
    let grad = g.grad(scores, &[xhat], true)[0].expect("critic depends on its input");
    let norms = grad.square().sum_per_sample().sqrt();
    Ok(norms.add_scalar(-1.0).square().mean_all())
}

/// `mean D(Y) − mean D(X) + β·penalty` with explicit mixing weights.
pub fn discriminator_loss_with_mix<'g>(
    y: Var<'g>,
    x: Var<'g>,
    critic: &Discriminator,
    critic_params: &[Var<'g>],
    beta: f64,
    mix: &[f64],
) -> Result<Var<'g>> {
    if !(beta >= 0.0) {
        return Err(Error::Weights(format!("gradient penalty weight must be non-negative, got {beta}")));
    }
    let gap = critic.forward(y, critic_params).mean_all() - critic.forward(x, critic_params).mean_all();
    if beta == 0.0 {
        return Ok(gap);
    }
    Ok(gap + gradient_penalty(y, x, critic, critic_params, mix)?.scale(beta))
}

/// Critic loss with mixing weights drawn uniformly from `[0, 1]`.
pub fn discriminator_loss<'g, R: Rng + ?Sized>(
    y: Var<'g>,
    x: Var<'g>,
    critic: &Discriminator,
    critic_params: &[Var<'g>],
    beta: f64,
    rng: &mut R,
) -> Result<Var<'g>> {
    let mix: Vec<f64> = (0..y.shape()[0]).map(|_| rng.random::<f64>()).collect();
    discriminator_loss_with_mix(y, x, critic, critic_params, beta, &mix)
}

/// Values of each term of the combined objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub distortion: f64,
    pub rate: f64,
    pub perceptual: f64,
    pub generator: f64,
    pub total: f64,
}

/// Optional enhancement networks for [`total_loss`].
#[derive(Clone, Copy, Default)]
pub struct Enhancers<'a, 'g> {
    pub psi: Option<&'a dyn FeatureExtractor>,
    pub critic: Option<(&'a Discriminator, &'a [Var<'g>])>,
}

/// `L2 + λ1·rate + λ2·L_percept + λ3·L_generator`.
///
/// Terms whose weight is zero are still evaluated when their network is
/// supplied; a missing network with a positive weight is an error.
pub fn total_loss<'g>(
    y: Var<'g>,
    x: Var<'g>,
    rate: Var<'g>,
    weights: &LossWeights,
    enhancers: Enhancers<'_, 'g>,
) -> Result<(Var<'g>, LossBreakdown)> {
    weights.validate()?;
    let distortion = distortion_l2(y, x)?;
    let mut total = distortion + rate.scale(weights.rate);
    let mut parts = LossBreakdown {
        distortion: distortion.item(),
        rate: rate.item(),
        ..Default::default()
    };
    match enhancers.psi {
        Some(psi) => {
            let p = perceptual_loss(y, x, psi)?;
            parts.perceptual = p.item();
            total = total + p.scale(weights.perceptual);
        }
        None if weights.perceptual > 0.0 => {
            return Err(Error::Weights("perceptual weight set but no feature extractor given".into()))
        }
        None => {}
    }
    match enhancers.critic {
        Some((critic, params)) => {
            let gl = generator_loss(y, critic, params);
            parts.generator = gl.item();
            total = total + gl.scale(weights.adversarial);
        }
        None if weights.adversarial > 0.0 => {
            return Err(Error::Weights("adversarial weight set but no critic given".into()))
        }
        None => {}
    }
    parts.total = total.item();
    Ok((total, parts))
}
