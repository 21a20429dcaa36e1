//! MS-SSIM against TensorFlow's `tf.image.ssim_multiscale` and BD-rate
//! against dense numerical integration.

use std::path::PathBuf;

use dic_core::image::Image;
use dic_core::metrics::{bd_rate, ms_ssim, ms_ssim_detailed, QualityAxis, RdCurve};
use dic_core::rdo::RatePoint;

/// Scores printed by `fixtures/ms_ssim/generate.py`.
pub const TF_MS_SSIM: [(&str, f64); 6] = [
    ("jpeg", 0.8743579),
    ("inverted", 0.0),
    ("noise", 0.8239618),
    ("blur", 0.93633264),
    ("shift", 0.92857075),
    ("contrast", 0.9119425),
];

fn fixture(name: &str) -> Image {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ms_ssim").join(name);
    Image::load_png(path).unwrap()
}

#[test]
fn ms_ssim_matches_tensorflow() {
    for (name, expected) in TF_MS_SSIM {
        let a = fixture(&format!("{name}_a.png"));
        let b = fixture(&format!("{name}_b.png"));
        let m = ms_ssim_detailed(&a, &b).unwrap();
        assert_eq!(m.scales, 5, "{name}");
        assert!((m.value - expected).abs() < 1e-4, "{name}: {} vs {expected}", m.value);
        assert!((ms_ssim(&b, &a).unwrap() - m.value).abs() < 1e-12, "{name}: asymmetric");
    }
}

fn curve(points: impl IntoIterator<Item = (f64, f64)>) -> RdCurve {
    RdCurve::new(
        points
            .into_iter()
            .enumerate()
            .map(|(i, (b, q))| RatePoint::new(i as u32, b, q).unwrap())
            .collect(),
    )
    .unwrap()
}

/// `ln bpp` as an exact cubic in quality, so the fitted polynomial is the
/// curve itself.
fn cubic(c: [f64; 4]) -> impl Fn(f64) -> f64 {
    move |q| c[0] + c[1] * q + c[2] * q * q + c[3] * q * q * q
}

fn sample(f: &impl Fn(f64) -> f64, qs: &[f64]) -> RdCurve {
    curve(qs.iter().map(|&q| (f(q).exp(), q)))
}

/// `(exp(mean(ln r_test − ln r_ref)) − 1)·100` by the trapezoid rule.
fn trapezoid_bd(f_ref: &impl Fn(f64) -> f64, f_test: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let d = |q: f64| f_test(q) - f_ref(q);
    let mut s = 0.5 * (d(lo) + d(hi));
    for i in 1..n {
        s += d(lo + i as f64 * h);
    }
    ((s * h) / (hi - lo)).exp_m1() * 100.0
}

#[test]
fn bd_rate_matches_fine_grid_integration() {
    let f_ref = cubic([-9.0, 8.0, -2.0, 1.5]);
    let f_test = cubic([-9.5, 8.6, -2.0, 1.2]);
    let ref_q = [0.80, 0.85, 0.90, 0.93, 0.96];
    let test_q = [0.82, 0.86, 0.91, 0.95, 0.97, 0.98];
    let got = bd_rate(&sample(&f_ref, &ref_q), &sample(&f_test, &test_q), QualityAxis::Raw).unwrap();
    let want = trapezoid_bd(&f_ref, &f_test, 0.82, 0.96);
    assert!((got - want).abs() <= 1e-4 * want.abs().max(1.0), "{got} vs {want}");
}

#[test]
fn doubling_bpp_costs_one_hundred_percent() {
    let qs = [0.80, 0.86, 0.90, 0.94, 0.97];
    let f = cubic([-8.0, 7.0, 0.5, -0.3]);
    let base = sample(&f, &qs);
    let doubled = curve(base.points().iter().map(|p| (2.0 * p.bpp, p.quality)));
    let up = bd_rate(&base, &doubled, QualityAxis::Raw).unwrap();
    assert!((up - 100.0).abs() < 1e-9, "{up}");
    let down = bd_rate(&doubled, &base, QualityAxis::Raw).unwrap();
    assert!((down + 50.0).abs() < 1e-9, "{down}");
    assert_eq!(bd_rate(&base, &base, QualityAxis::Decibel).unwrap(), 0.0);
}

#[test]
fn bd_rate_is_approximately_antisymmetric() {
    let a = sample(&cubic([-9.0, 8.0, -2.0, 1.5]), &[0.80, 0.85, 0.90, 0.93, 0.96]);
    let b = sample(&cubic([-9.3, 8.2, -1.8, 1.4]), &[0.81, 0.86, 0.91, 0.94, 0.97]);
    for axis in [QualityAxis::Raw, QualityAxis::Decibel] {
        let ab = bd_rate(&a, &b, axis).unwrap();
        let ba = bd_rate(&b, &a, axis).unwrap();
        let predicted = -ba / (1.0 + ba / 100.0);
        assert!((ab - predicted).abs() < 0.1, "{axis:?}: {ab} vs {predicted}");
    }
}
