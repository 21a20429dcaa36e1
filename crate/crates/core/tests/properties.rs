use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dic_core::autoencoder::encode_forward;
use dic_core::autograd::Graph;
use dic_core::losses::{
    gradient_penalty, total_loss, Discriminator, DiscriminatorSpec, Enhancers, FeatureExtractorSpec, FrozenConvNet,
};
use dic_core::quantizer::{dequantize_value, quantize_value};
use dic_core::rate_model::{fit_symbols, rate_loss_value};
use dic_core::tensor::Tensor;
use dic_core::{Autoencoder, EncoderSpec, Image, LossWeights, ModelSpec};

fn critic(seed: u64) -> Discriminator {
    Discriminator::new(
        DiscriminatorSpec {
            input_size: 16,
            base_channels: 4,
            blocks: 2,
            hidden: 8,
            leaky_slope: 0.2,
        },
        seed,
    )
    .unwrap()
}

fn batch(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::new(vec![n, 3, 16, 16], (0..n * 768).map(|_| rng.random::<f64>()).collect())
}

fn evaluate_total(y: &Tensor, x: &Tensor, rate: f64, w: &LossWeights, psi: &FrozenConvNet, d: &Discriminator) -> f64 {
    let g = Graph::new();
    let p = d.params().bind(&g, false);
    let (yv, xv) = (g.constant(y.clone()), g.constant(x.clone()));
    let enh = Enhancers {
        psi: Some(psi),
        critic: Some((d, &p)),
    };
    total_loss(yv, xv, g.constant(Tensor::scalar(rate)), w, enh).unwrap().0.item()
}

#[test]
fn total_loss_is_linear_in_each_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, y) = (batch(&mut rng, 2), batch(&mut rng, 2));
    let psi = FrozenConvNet::random(FeatureExtractorSpec::default()).unwrap();
    let d = critic(2);
    let base = LossWeights {
        rate: 0.001,
        perceptual: 0.01,
        adversarial: 0.002,
        gradient_penalty: 10.0,
    };
    let set = |k: usize, v: f64| {
        let mut w = base;
        *[&mut w.rate, &mut w.perceptual, &mut w.adversarial][k] = v;
        w
    };
    for k in 0..3 {
        let a = 0.37;
        let l0 = evaluate_total(&y, &x, 3.5, &set(k, 0.0), &psi, &d);
        let l1 = evaluate_total(&y, &x, 3.5, &set(k, a), &psi, &d);
        let l2 = evaluate_total(&y, &x, 3.5, &set(k, 2.0 * a), &psi, &d);
        assert!(((l2 - l1) - (l1 - l0)).abs() < 1e-12, "weight {k}: {l0} {l1} {l2}");
    }
}

#[test]
fn gradient_penalty_is_symmetric_in_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = critic(4);
    let (x, y) = (batch(&mut rng, 4), batch(&mut rng, 4));
    let mut mean = |first: &Tensor, second: &Tensor| {
        let mut total = 0.0;
        for _ in 0..250 {
            let mix: Vec<f64> = (0..4).map(|_| rng.random()).collect();
            let g = Graph::new();
            let p = d.params().bind(&g, false);
            total += gradient_penalty(g.constant(first.clone()), g.constant(second.clone()), &d, &p, &mix)
                .unwrap()
                .item();
        }
        total / 250.0
    };
    let (xy, yx) = (mean(&y, &x), mean(&x, &y));
    assert!((xy - yx).abs() <= 0.05 * xy.abs().max(yx.abs()), "{xy} vs {yx}");
}

#[test]
fn bottleneck_values_lie_in_the_open_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..4 {
        let model = Autoencoder::new(ModelSpec::new(EncoderSpec::miniature(2, 2, 8, 4), 6), seed).unwrap();
        let img = Image::new(32, 32, (0..3072).map(|_| rng.random::<f64>()).collect()).unwrap();
        let fmap = encode_forward(&img, &model.encoder).unwrap();
        assert!(fmap.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

proptest! {
    #[test]
    fn losses_are_finite_on_unit_range_inputs(seed in any::<u64>(), rate in 0.0f64..8.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (batch(&mut rng, 2), batch(&mut rng, 2));
        let psi = FrozenConvNet::random(FeatureExtractorSpec::default()).unwrap();
        let d = critic(seed);
        let w = LossWeights { rate: 0.002, ..LossWeights::default() };
        prop_assert!(evaluate_total(&y, &x, rate, &w, &psi, &d).is_finite());
        let g = Graph::new();
        let p = d.params().bind(&g, false);
        let gp = gradient_penalty(g.constant(y), g.constant(x), &d, &p, &[0.0, 1.0]).unwrap().item();
        prop_assert!(gp.is_finite() && gp >= 0.0);
    }

    #[test]
    fn quantize_is_idempotent(x in 0.0f64..=1.0, bits in 1u8..=8) {
        let s = quantize_value(x, bits).unwrap();
        prop_assert_eq!(quantize_value(dequantize_value(s, bits), bits).unwrap(), s);
    }

    #[test]
    fn fitted_rate_never_exceeds_q_bits(symbols in prop::collection::vec(0u16..64, 1..400)) {
        let dist = fit_symbols(6, symbols.iter().copied(), 1e-6).unwrap();
        let coords: Vec<f64> = symbols.iter().map(|&s| s as f64).collect();
        prop_assert!(rate_loss_value(&coords, &dist) <= 6.0 + 1e-3);
    }
}
