//! Patch datasets, the easy-to-hard λ schedule and the training loop that
//! produces a family of checkpoints.
//!
//! A run trains each model spec independently. The rate weight is held at
//! zero for the pretrain phase, then raised one step per plateau until it
//! reaches its cap; the perceptual and adversarial terms switch on only
//! after the ramp, for the fine-tune epochs appended to the final plateau.
//! One checkpoint is taken at the end of every plateau, so a run's
//! checkpoints are strictly increasing in λ.
//!
//! Model directory layout written by [`train`]:
//!
//! ```text
//! <dir>/000.ckpt, 001.ckpt, ...   one file per checkpoint, named by model id
//! <dir>/probe_loss.csv            spec,epoch,lambda,probe_loss (every epoch)
//! <dir>/rate_points.csv           model_id,bpp,quality (if a validation set was given)
//! ```

use std::fs;
use std::path::PathBuf;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{Autoencoder, ModelSpec};
use crate::autograd::{Graph, Var};
use crate::checkpoint::{checkpoint_file_name, Checkpoint};
use crate::codec::{compress_image, decompress_image};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{
    discriminator_loss, total_loss, Discriminator, DiscriminatorSpec, Enhancers, FeatureExtractor, FeatureExtractorSpec,
    FrozenConvNet, LossBreakdown, LossWeights,
};
use crate::metrics::ms_ssim;
use crate::nn::{Adam, AdamConfig};
use crate::quantizer::{quantize_dequantize, quantize_ste};
use crate::rate_model::{fit_symbols, rate_loss, rate_loss_value, symbols_of, to_coordinates, SymbolDistribution, DEFAULT_EPSILON};
use crate::rdo::{save_rate_points, RatePoint};
use crate::tensor::Tensor;

pub const PATCH_SIZE: usize = 128;

/// How training patches are cut from source images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    pub size: usize,
    /// Rotate each patch by a random multiple of 90°.
    pub rotate: bool,
    /// Each patch is taken from the source downscaled by a factor drawn
    /// uniformly from `[min_scale, max_scale]`.
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            size: PATCH_SIZE,
            rotate: true,
            min_scale: 0.5,
            max_scale: 1.0,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidSpec("patch size must be positive".into()));
        }
        if !(self.min_scale > 0.0 && self.min_scale <= self.max_scale && self.max_scale <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "scale range [{}, {}] must satisfy 0 < min ≤ max ≤ 1",
                self.min_scale, self.max_scale
            )));
        }
        Ok(())
    }
}

/// Square training patches with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDataset {
    patch_size: usize,
    patches: Vec<Image>,
}

impl PatchDataset {
    /// Wraps ready-made patches, which must all be `size × size`.
    pub fn from_patches(patches: Vec<Image>) -> Result<Self> {
        let size = patches.first().ok_or(Error::Empty("no patches"))?.height();
        if let Some(p) = patches.iter().find(|p| p.height() != size || p.width() != size) {
            return Err(Error::Shape(format!("{}x{} patch in a {size}x{size} dataset", p.height(), p.width())));
        }
        Ok(Self { patch_size: size, patches })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[Image] {
        &self.patches
    }

    /// Stacks the patches at `indices` into `[N, 3, P, P]`.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let picked: Vec<Image> = indices.iter().map(|&i| self.patches[i].clone()).collect();
        Image::batch(&picked)
    }
}

/// [`extract_patches_with`] using the default patch configuration.
pub fn extract_patches(images: &[Image], count: usize, seed: u64) -> Result<PatchDataset> {
    extract_patches_with(images, count, seed, &PatchConfig::default())
}

/// Draws `count` random augmented patches. Images smaller than one patch
/// are skipped with a warning; the scale factor is raised where needed so
/// that the scaled source still holds a full patch.
pub fn extract_patches_with(images: &[Image], count: usize, seed: u64, config: &PatchConfig) -> Result<PatchDataset> {
    config.validate()?;
    let size = config.size;
    let usable: Vec<&Image> = images
        .iter()
        .enumerate()
        .filter_map(|(i, img)| {
            if img.height().min(img.width()) >= size {
                Some(img)
            } else {
                warn!("skipping image {i}: {}x{} is smaller than a {size}px patch", img.height(), img.width());
                None
            }
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::Empty("no source image is large enough for one patch"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let img = usable[rng.random_range(0..usable.len())];
        let short = img.height().min(img.width());
        let drawn = rng.random_range(config.min_scale..=config.max_scale);
        let factor = drawn.max(size as f64 / short as f64);
        let side = ((size as f64 / factor).round() as usize).clamp(size, short);
        let top = rng.random_range(0..=img.height() - side);
        let left = rng.random_range(0..=img.width() - side);
        let patch = img.window(top, left, side, side).resize_area(size, size);
        let turns = if config.rotate { rng.random_range(0..4) } else { 0 };
        patches.push(patch.rotate90(turns));
    }
    Ok(PatchDataset { patch_size: size, patches })
}

/// Optimiser settings and the easy-to-hard λ ramp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSchedule {
    pub optimizer: AdamConfig,
    /// Epochs trained at λ = 0.
    pub pretrain_epochs: usize,
    pub lambda_step: f64,
    /// Epochs per λ plateau.
    pub lambda_interval: usize,
    pub lambda_cap: f64,
    /// Epochs with perceptual and adversarial terms, at the capped λ.
    pub finetune_epochs: usize,
    pub batch_size: usize,
    /// Optimiser steps per epoch; one pass over the dataset when unset.
    pub steps_per_epoch: Option<usize>,
    /// Patches (from the front of the dataset) in the fixed probe batch.
    pub probe_size: usize,
    pub critic_steps: usize,
    pub seed: u64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            pretrain_epochs: 100,
            lambda_step: 1e-4,
            lambda_interval: 5,
            lambda_cap: 0.002,
            finetune_epochs: 5,
            batch_size: 16,
            steps_per_epoch: None,
            probe_size: 16,
            critic_steps: 1,
            seed: 0,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidSpec(m));
        if !(self.lambda_cap >= 0.0) || !self.lambda_cap.is_finite() {
            return fail(format!("λ cap {} must be finite and non-negative", self.lambda_cap));
        }
        if self.lambda_cap > 0.0 && (!(self.lambda_step > 0.0) || self.lambda_interval == 0) {
            return fail("a positive λ cap needs a positive step and interval".into());
        }
        if self.batch_size == 0 || self.probe_size == 0 {
            return fail("batch and probe sizes must be positive".into());
        }
        if self.steps_per_epoch == Some(0) {
            return fail("steps per epoch must be positive".into());
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return fail("learning rate must be positive".into());
        }
        if self.total_epochs() == 0 {
            return fail("the schedule has no epochs".into());
        }
        Ok(())
    }

    /// Number of λ plateaus after pretraining.
    pub fn ramp_plateaus(&self) -> usize {
        if self.lambda_cap <= 0.0 {
            return 0;
        }
        (self.lambda_cap / self.lambda_step - 1e-9).ceil() as usize
    }

    /// First epoch after the ramp.
    pub fn ramp_end(&self) -> usize {
        self.pretrain_epochs + self.lambda_interval * self.ramp_plateaus()
    }

    pub fn total_epochs(&self) -> usize {
        self.ramp_end() + self.finetune_epochs
    }

    pub fn is_finetune(&self, epoch: usize) -> bool {
        epoch >= self.ramp_end()
    }

    /// A checkpoint is taken after the last epoch of every plateau.
    pub fn is_checkpoint_epoch(&self, epoch: usize) -> bool {
        epoch + 1 == self.total_epochs() || lambda_at_epoch(self, epoch + 1) != lambda_at_epoch(self, epoch)
    }
}

/// `0` during pretraining, then `min(cap, step·(1 + ⌊(epoch − pretrain)/interval⌋))`.
pub fn lambda_at_epoch(schedule: &TrainingSchedule, epoch: usize) -> f64 {
    if epoch < schedule.pretrain_epochs || schedule.lambda_cap <= 0.0 {
        return 0.0;
    }
    let plateau = 1 + (epoch - schedule.pretrain_epochs) / schedule.lambda_interval.max(1);
    (schedule.lambda_step * plateau as f64).min(schedule.lambda_cap)
}

/// How the rate term of [`forward_loss`] is formed.
#[derive(Clone, Copy, Debug)]
pub struct RateConfig<'a> {
    /// Route the bottleneck through the straight-through quantizer; when
    /// false the decoder sees the continuous code.
    pub quantize: bool,
    /// Fixed symbol model; fitted on the batch's own symbols when unset.
    pub distribution: Option<&'a SymbolDistribution>,
}

impl Default for RateConfig<'_> {
    fn default() -> Self {
        Self {
            quantize: true,
            distribution: None,
        }
    }
}

/// Graph outputs of one forward pass.
pub struct ForwardPass<'g> {
    pub total: Var<'g>,
    pub reconstruction: Var<'g>,
    pub breakdown: LossBreakdown,
}

/// Encoder → quantizer → decoder on `x`, scored by [`total_loss`] with the
/// rate measured on the continuous code.
#[allow(clippy::too_many_arguments)]
pub fn forward_loss<'g>(
    model: &Autoencoder,
    encoder_params: &[Var<'g>],
    decoder_params: &[Var<'g>],
    x: Var<'g>,
    weights: &LossWeights,
    enhancers: Enhancers<'_, 'g>,
    rate: RateConfig<'_>,
) -> Result<ForwardPass<'g>> {
    let bits = model.quant_bits();
    let code = model.encoder.forward(x, encoder_params);
    let fitted;
    let dist = match rate.distribution {
        Some(d) => d,
        None => {
            fitted = fit_symbols(bits, symbols_of(&code.value(), bits), DEFAULT_EPSILON)?;
            &fitted
        }
    };
    let rate_term = rate_loss(to_coordinates(code, bits), dist);
    let latent = if rate.quantize { quantize_ste(code, bits)? } else { code };
    let reconstruction = model.decoder.forward(latent, decoder_params);
    let (total, breakdown) = total_loss(reconstruction, x, rate_term, weights, enhancers)?;
    Ok(ForwardPass {
        total,
        reconstruction,
        breakdown,
    })
}

/// Distortion plus `lambda`-weighted rate of `model` on `probe`, evaluated
/// with hard quantization and a symbol model fitted on the probe itself.
pub fn probe_loss(model: &Autoencoder, probe: &Tensor, lambda: f64) -> Result<f64> {
    let bits = model.quant_bits();
    let code = model.encoder.eval(probe)?;
    let dist = fit_symbols(bits, symbols_of(&code, bits), DEFAULT_EPSILON)?;
    let max = ((1u32 << bits) - 1) as f64;
    let coords: Vec<f64> = code.data().iter().map(|v| v * max).collect();
    let rate = rate_loss_value(&coords, &dist);
    let recon = model.decoder.eval(&quantize_dequantize(&code, bits)?)?;
    let mse = recon.zip_map(probe, |a, b| (a - b) * (a - b)).sum() / probe.len() as f64;
    Ok(mse + lambda * rate)
}

/// Mean bpp (whole files) and MS-SSIM of `ckpt` over `images`.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, images: &[Image]) -> Result<RatePoint> {
    if images.is_empty() {
        return Err(Error::Empty("no validation images"));
    }
    let (mut bpp, mut quality) = (0.0, 0.0);
    for img in images {
        let cs = compress_image(img, ckpt)?;
        bpp += cs.bpp();
        quality += ms_ssim(img, &decompress_image(&cs, ckpt)?)?;
    }
    let n = images.len() as f64;
    RatePoint::new(ckpt.model_id as u32, bpp / n, quality / n)
}

/// Extra inputs to [`train`].
#[derive(Clone, Default)]
pub struct TrainOptions<'a> {
    /// Enhancement weights for the fine-tune phase; the rate weight is set
    /// by the schedule.
    pub weights: LossWeights,
    /// Perceptual feature network; a random frozen one is built when the
    /// perceptual weight is positive and none is given.
    pub feature_extractor: Option<&'a dyn FeatureExtractor>,
    /// Critic layout; its input size is taken from the patch size.
    pub critic: DiscriminatorSpec,
    /// Where checkpoints and logs are written, if anywhere.
    pub model_dir: Option<PathBuf>,
    /// Images for each checkpoint's rate point; none are measured if empty.
    pub validation: Vec<Image>,
    pub first_model_id: u8,
}

/// One row of the probe-loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub spec: usize,
    pub epoch: usize,
    pub lambda: f64,
    pub probe_loss: f64,
}

/// Everything a run produced.
#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub checkpoints: Vec<Checkpoint>,
    pub probe_log: Vec<ProbeRecord>,
}

struct Critic {
    net: Discriminator,
    opt: Adam,
}

/// Trains one model per spec under `schedule`.
pub fn train(dataset: &PatchDataset, specs: &[ModelSpec], schedule: &TrainingSchedule, options: &TrainOptions) -> Result<TrainingRun> {
    schedule.validate()?;
    options.weights.validate()?;
    if specs.is_empty() {
        return Err(Error::Empty("no model specs"));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("empty patch dataset"));
    }
    let per_spec = (0..schedule.total_epochs()).filter(|&e| schedule.is_checkpoint_epoch(e)).count();
    if options.first_model_id as usize + per_spec * specs.len() > 256 {
        return Err(Error::InvalidSpec(format!(
            "{} checkpoints do not fit 8-bit model ids from {}",
            per_spec * specs.len(),
            options.first_model_id
        )));
    }
    if let Some(dir) = &options.model_dir {
        fs::create_dir_all(dir)?;
    }
    let finetune = schedule.finetune_epochs > 0;
    let own_psi;
    let psi: Option<&dyn FeatureExtractor> = match options.feature_extractor {
        Some(p) => Some(p),
        None if finetune && options.weights.perceptual > 0.0 => {
            own_psi = FrozenConvNet::random(FeatureExtractorSpec::default())?;
            Some(&own_psi)
        }
        None => None,
    };
    let probe_n = schedule.probe_size.min(dataset.len());
    let probe = dataset.batch(&(0..probe_n).collect::<Vec<_>>())?;

    let mut run = TrainingRun {
        checkpoints: Vec::new(),
        probe_log: Vec::new(),
    };
    let mut next_id = options.first_model_id as usize;
    for (si, spec) in specs.iter().enumerate() {
        let seed = schedule.seed.wrapping_add(si as u64);
        let mut model = Autoencoder::new(spec.clone(), seed)?;
        if !dataset.patch_size().is_multiple_of(model.reduction()) {
            return Err(Error::Padding {
                height: dataset.patch_size(),
                width: dataset.patch_size(),
                multiple: model.reduction(),
            });
        }
        let mut enc_opt = Adam::new(schedule.optimizer, model.encoder.params());
        let mut dec_opt = Adam::new(schedule.optimizer, model.decoder.params());
        let mut critic = if finetune && options.weights.adversarial > 0.0 {
            let net = Discriminator::new(
                DiscriminatorSpec {
                    input_size: dataset.patch_size(),
                    ..options.critic.clone()
                },
                seed ^ 0xc817_1c5e,
            )?;
            let opt = Adam::new(schedule.optimizer, net.params());
            Some(Critic { net, opt })
        } else {
            None
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fba_7c40);
        let mut order: Vec<usize> = Vec::new();
        let steps = schedule
            .steps_per_epoch
            .unwrap_or_else(|| dataset.len().div_ceil(schedule.batch_size));

        for epoch in 0..schedule.total_epochs() {
            let lambda = lambda_at_epoch(schedule, epoch);
            let enhance = schedule.is_finetune(epoch);
            let weights = LossWeights {
                rate: lambda,
                perceptual: if enhance { options.weights.perceptual } else { 0.0 },
                adversarial: if enhance && critic.is_some() { options.weights.adversarial } else { 0.0 },
                gradient_penalty: options.weights.gradient_penalty,
            };
            for step in 0..steps {
                let mut idx = Vec::with_capacity(schedule.batch_size);
                while idx.len() < schedule.batch_size {
                    if order.is_empty() {
                        order = (0..dataset.len()).collect();
                        order.shuffle(&mut rng);
                    }
                    idx.push(order.pop().unwrap());
                }
                let batch = dataset.batch(&idx)?;
                let recon = {
                    let g = Graph::new();
                    let ep = model.encoder.params().bind(&g, true);
                    let dp = model.decoder.params().bind(&g, true);
                    let cp = critic.as_ref().map(|c| c.net.params().bind(&g, false));
                    let enhancers = Enhancers {
                        psi: if enhance { psi } else { None },
                        critic: match (&critic, &cp) {
                            (Some(c), Some(p)) if enhance => Some((&c.net, p.as_slice())),
                            _ => None,
                        },
                    };
                    let pass = forward_loss(&model, &ep, &dp, g.constant(batch.clone()), &weights, enhancers, RateConfig::default())?;
                    let loss = pass.breakdown.total;
                    if !loss.is_finite() {
                        return Err(Error::NonFinite { epoch, step, loss });
                    }
                    let mut wrt = ep.clone();
                    wrt.extend_from_slice(&dp);
                    let mut grads = g.grad_tensors(pass.total, &wrt);
                    let dec_grads = grads.split_off(ep.len());
                    enc_opt.step(model.encoder.params_mut(), &grads);
                    dec_opt.step(model.decoder.params_mut(), &dec_grads);
                    Tensor::clone(&pass.reconstruction.tensor())
                };
                if let (Some(c), true) = (critic.as_mut(), enhance) {
                    for _ in 0..schedule.critic_steps {
                        let g = Graph::new();
                        let p = c.net.params().bind(&g, true);
                        let loss = discriminator_loss(
                            g.constant(recon.clone()),
                            g.constant(batch.clone()),
                            &c.net,
                            &p,
                            weights.gradient_penalty,
                            &mut rng,
                        )?;
                        if !loss.item().is_finite() {
                            return Err(Error::NonFinite {
                                epoch,
                                step,
                                loss: loss.item(),
                            });
                        }
                        let grads = g.grad_tensors(loss, &p);
                        c.opt.step(c.net.params_mut(), &grads);
                    }
                }
            }
            let probe_value = probe_loss(&model, &probe, lambda)?;
            if !probe_value.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    step: steps,
                    loss: probe_value,
                });
            }
            info!("spec {si} epoch {epoch}: λ = {lambda}, probe loss = {probe_value:.6}");
            run.probe_log.push(ProbeRecord {
                spec: si,
                epoch,
                lambda,
                probe_loss: probe_value,
            });
            if schedule.is_checkpoint_epoch(epoch) {
                let mut ckpt = Checkpoint::new(next_id as u8, model.clone(), seed);
                next_id += 1;
                ckpt.lambda = lambda;
                ckpt.epoch = epoch;
                ckpt.probe_loss = Some(probe_value);
                if !options.validation.is_empty() {
                    ckpt.rate_point = Some(evaluate_checkpoint(&ckpt, &options.validation)?);
                }
                if let Some(dir) = &options.model_dir {
                    ckpt.save(dir.join(checkpoint_file_name(ckpt.model_id)))?;
                }
                info!("checkpoint {} at epoch {epoch}, λ = {lambda}", ckpt.model_id);
                run.checkpoints.push(ckpt);
            }
        }
    }
    if let Some(dir) = &options.model_dir {
        write_probe_log(dir.join("probe_loss.csv"), &run.probe_log)?;
        let points: Vec<RatePoint> = run.checkpoints.iter().filter_map(|c| c.rate_point).collect();
        if !points.is_empty() {
            save_rate_points(dir.join("rate_points.csv"), &points)?;
        }
    }
    Ok(run)
}

pub fn write_probe_log(path: impl AsRef<std::path::Path>, log: &[ProbeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in log {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::EncoderSpec;

    fn scene(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |c, y, x| 0.5 + 0.45 * ((x as f64 * 0.05 + c as f64).sin() * (y as f64 * 0.07).cos()))
    }

    #[test]
    fn schedule_values() {
        let s = TrainingSchedule::default();
        assert_eq!(lambda_at_epoch(&s, 50), 0.0);
        assert_eq!(lambda_at_epoch(&s, 99), 0.0);
        assert_eq!(lambda_at_epoch(&s, 100), 0.0001);
        assert_eq!(lambda_at_epoch(&s, 104), 0.0001);
        assert_eq!(lambda_at_epoch(&s, 105), 0.0002);
        assert_eq!(lambda_at_epoch(&s, 10_000), 0.002);
        assert_eq!(s.ramp_plateaus(), 20);
        assert_eq!(s.total_epochs(), 205);
    }

    #[test]
    fn one_checkpoint_per_plateau() {
        let s = TrainingSchedule::default();
        let epochs: Vec<usize> = (0..s.total_epochs()).filter(|&e| s.is_checkpoint_epoch(e)).collect();
        assert_eq!(epochs.len(), 21);
        assert_eq!(epochs[0], 99);
        assert_eq!(epochs[1], 104);
        assert_eq!(*epochs.last().unwrap(), 204);
        let lambdas: Vec<f64> = epochs.iter().map(|&e| lambda_at_epoch(&s, e)).collect();
        assert!(lambdas.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn patches_are_deterministic_and_in_range() {
        let img = scene(256, 256);
        let a = extract_patches(std::slice::from_ref(&img), 10, 4).unwrap();
        let b = extract_patches(std::slice::from_ref(&img), 10, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        for p in a.patches() {
            assert_eq!((p.height(), p.width()), (PATCH_SIZE, PATCH_SIZE));
            assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        for i in 0..10 {
            for j in 0..i {
                assert_ne!(a.patches()[i], a.patches()[j]);
            }
        }
    }

    #[test]
    fn small_images_are_skipped() {
        let imgs = [scene(64, 300), scene(130, 140)];
        let d = extract_patches(&imgs, 3, 0).unwrap();
        assert_eq!(d.len(), 3);
        assert!(extract_patches(&[scene(100, 100)], 3, 0).is_err());
    }

    #[test]
    fn toy_run_lowers_probe_loss_and_reloads() {
        let imgs = [scene(40, 40), scene(48, 36)];
        let cfg = PatchConfig {
            size: 16,
            ..PatchConfig::default()
        };
        let data = extract_patches_with(&imgs, 8, 1, &cfg).unwrap();
        let schedule = TrainingSchedule {
            optimizer: AdamConfig {
                learning_rate: 3e-3,
                ..AdamConfig::default()
            },
            pretrain_epochs: 6,
            lambda_step: 0.01,
            lambda_interval: 1,
            lambda_cap: 0.02,
            finetune_epochs: 0,
            batch_size: 4,
            steps_per_epoch: Some(5),
            probe_size: 4,
            ..TrainingSchedule::default()
        };
        let spec = ModelSpec::new(EncoderSpec::miniature(2, 2, 6, 2), 6);
        let run = train(&data, &[spec], &schedule, &TrainOptions::default()).unwrap();
        assert_eq!(run.checkpoints.len(), 3);
        let first = run.probe_log[0].probe_loss;
        let pretrain_last = run.probe_log[5].probe_loss;
        assert!(pretrain_last < first, "{pretrain_last} >= {first}");
        let probe = data.batch(&[0, 1, 2, 3]).unwrap();
        for c in &run.checkpoints {
            let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
            let again = probe_loss(&back.model, &probe, back.lambda).unwrap();
            assert!((again - c.probe_loss.unwrap()).abs() < 1e-12);
        }
    }
}
