use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use dic_core::checkpoint::load_model_dir;
use dic_core::codec::reconstruct;
use dic_core::rdo::{load_rate_points, save_rate_points};
use dic_core::metrics::ms_ssim;
use dic_core::{compress_image, decompress_image, pareto_front, select_model, CompressedImage, Image, RatePoint};

/// Four bottleneck widths, 200 steps each.
const TOY_CONFIG: &str = r#"
seed = 3
patches = 16
validation_patches = 8

[patch]
size = 32

[schedule]
pretrain_epochs = 20
lambda_cap = 0.0
finetune_epochs = 0
batch_size = 4
steps_per_epoch = 10
probe_size = 4

[schedule.optimizer]
learning_rate = 0.002

[[models]]
quant_bits = 6

[models.encoder]
residual_units = 2
downsample_stages = 2
bottleneck_channels = 1
interior_channels = 16
boundary_kernel = 3
interior_kernel = 3
allow_reduced_depth = true

[[models]]
quant_bits = 6

[models.encoder]
residual_units = 2
downsample_stages = 2
bottleneck_channels = 2
interior_channels = 16
boundary_kernel = 3
interior_kernel = 3
allow_reduced_depth = true

[[models]]
quant_bits = 6

[models.encoder]
residual_units = 2
downsample_stages = 2
bottleneck_channels = 4
interior_channels = 16
boundary_kernel = 3
interior_kernel = 3
allow_reduced_depth = true

[[models]]
quant_bits = 6

[models.encoder]
residual_units = 2
downsample_stages = 2
bottleneck_channels = 8
interior_channels = 16
boundary_kernel = 3
interior_kernel = 3
allow_reduced_depth = true
"#;

fn dic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dic"))
        .args(args)
        .env_remove("DIC_MODEL_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn dic")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "dic failed: {}\n{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn picture(k: usize) -> Image {
    let kf = k as f64;
    Image::from_fn(48, 56, |c, y, x| {
        let (xf, yf) = (x as f64 / 56.0, y as f64 / 48.0);
        0.5 + 0.35 * ((xf * (3.0 + kf) + c as f64).sin() * (yf * (2.0 + kf)).cos())
    })
}

/// Four PNGs and a config pointing at them.
fn workspace(dir: &Path) -> PathBuf {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    for k in 0..4 {
        picture(k).save_png(images.join(format!("img{k}.png"))).unwrap();
    }
    let config = dir.join("toy.toml");
    std::fs::write(&config, format!("dataset = {:?}\n{TOY_CONFIG}", s(&images))).unwrap();
    config
}

fn train_into(dir: &Path) -> PathBuf {
    let config = workspace(dir);
    let models = dir.join("models");
    ok(dic(&["train", "--config", s(&config), "--model-dir", s(&models)]));
    models
}

/// Trained once and shared by the tests below.
fn shared() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("dic-cli-shared");
        let _ = std::fs::remove_dir_all(&dir);
        train_into(&dir);
        dir
    })
}

#[test]
fn toy_training_writes_checkpoints_and_logs() {
    let models = shared().join("models");
    let ckpts = load_model_dir(&models).unwrap();
    assert_eq!(ckpts.len(), 4);
    assert!(ckpts.iter().all(|c| c.rate_point.is_some()));
    assert!(models.join("probe_loss.csv").is_file());
    assert_eq!(load_rate_points(models.join("rate_points.csv")).unwrap().len(), 4);
    assert!(models.join("train.toml").is_file());
}

#[test]
fn same_config_and_seed_reproduce_the_probe_log() {
    let again = tempfile::tempdir().unwrap();
    let models = train_into(again.path());
    let a = std::fs::read(shared().join("models/probe_loss.csv")).unwrap();
    let b = std::fs::read(models.join("probe_loss.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(std::fs::read(shared().join("models/003.ckpt")).unwrap(), std::fs::read(models.join("003.ckpt")).unwrap());
}

#[test]
fn missing_dataset_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, format!("dataset = \"/no/such/dir\"\n{TOY_CONFIG}")).unwrap();
    let out = dic(&["train", "--config", s(&config), "--model-dir", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/dir"));
}

#[test]
fn bad_flags_and_missing_models_exit_with_code_2() {
    assert_eq!(dic(&["compress"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    picture(0).save_png(&img).unwrap();
    let out = dic(&["compress", s(&img), "--model-dir", s(&dir.path().join("none"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compress_decompress_reproduces_the_decoder_output() {
    let root = shared();
    let models = root.join("models");
    let dir = tempfile::tempdir().unwrap();
    let input = root.join("images/img1.png");
    let packed = dir.path().join("img1.dic");
    let unpacked = dir.path().join("img1.png");
    let out = ok(dic(&["compress", s(&input), "-o", s(&packed), "--model-dir", s(&models), "--model", "2"]));
    let bytes = std::fs::metadata(&packed).unwrap().len() as f64;
    let printed: f64 = stdout(&out).split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((printed - 8.0 * bytes / (48.0 * 56.0)).abs() < 1e-6, "{}", stdout(&out));
    ok(dic(&["decompress", s(&packed), "-o", s(&unpacked), "--model-dir", s(&models)]));

    let ckpt = load_model_dir(&models).unwrap().into_iter().find(|c| c.model_id == 2).unwrap();
    let expected = reconstruct(&Image::load_png(&input).unwrap(), &ckpt).unwrap().to_8bit();
    assert_eq!(Image::load_png(&unpacked).unwrap(), expected);
}

#[test]
fn target_bpp_selects_on_the_image_own_rd_points() {
    let root = shared();
    let models = root.join("models");
    let input = root.join("images/img0.png");
    let img = Image::load_png(&input).unwrap();
    let points: Vec<RatePoint> = load_model_dir(&models)
        .unwrap()
        .iter()
        .map(|c| {
            let cs = CompressedImage::from_bytes(&compress_image(&img, c).unwrap().to_bytes()).unwrap();
            let q = ms_ssim(&img, &decompress_image(&cs, c).unwrap()).unwrap();
            RatePoint::new(c.model_id as u32, cs.bpp(), q).unwrap()
        })
        .collect();
    let front = pareto_front(&points).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for budget in [front[0].bpp * 0.5, front[front.len() / 2].bpp, f64::MAX] {
        let want = select_model(&front, budget).unwrap().point;
        let out = ok(dic(&[
            "compress",
            s(&input),
            "-o",
            s(&dir.path().join("x.dic")),
            "--model-dir",
            s(&models),
            "--target-bpp",
            &budget.to_string(),
        ]));
        assert!(stdout(&out).starts_with(&format!("model {}: {:.6} bpp", want.model_id, want.bpp)), "{}", stdout(&out));
    }
}

fn bd_of(report: &Path, baseline: &str) -> f64 {
    let csv = std::fs::read_to_string(report.join("bd_rate.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with(&format!("{baseline},"))).unwrap();
    row.split(',').nth(1).unwrap().parse().unwrap_or_else(|_| panic!("no BD-rate: {row}"))
}

#[test]
fn evaluate_against_itself_and_a_doubled_baseline() {
    let root = shared();
    let models = root.join("models");
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(dic(&["evaluate", "--images", s(&root.join("images")), "--model-dir", s(&models), "-o", s(&first)]));
    let report = std::fs::read_to_string(first.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 4 + 1);
    assert!(report.lines().last().unwrap().starts_with("average,"));

    let own = load_rate_points(first.join("rd_points.csv")).unwrap();
    let doubled: Vec<RatePoint> = own.iter().map(|p| RatePoint::new(p.model_id, 2.0 * p.bpp, p.quality).unwrap()).collect();
    let self_csv = dir.path().join("self.csv");
    let doubled_csv = dir.path().join("doubled.csv");
    std::fs::copy(first.join("rd_points.csv"), &self_csv).unwrap();
    save_rate_points(&doubled_csv, &doubled).unwrap();

    let second = dir.path().join("second");
    ok(dic(&[
        "evaluate",
        "--images",
        s(&root.join("images")),
        "--model-dir",
        s(&models),
        "-o",
        s(&second),
        "--baseline",
        s(&self_csv),
        "--baseline",
        s(&doubled_csv),
    ]));
    assert_eq!(bd_of(&second, "self"), 0.0);
    assert!((bd_of(&second, "doubled") + 50.0).abs() < 1e-9);
    assert!(std::fs::read_to_string(second.join("rd.svg")).unwrap().contains("doubled"));
    assert_eq!(
        std::fs::read(first.join("report.csv")).unwrap(),
        std::fs::read(second.join("report.csv")).unwrap()
    );
}

#[test]
fn bdrate_command_reports_the_doubling_identity() {
    let dir = tempfile::tempdir().unwrap();
    let base: Vec<RatePoint> = (0..5)
        .map(|i| RatePoint::new(i, 0.2 * (i + 1) as f64 + 0.01 * (i * i) as f64, 0.80 + 0.03 * i as f64).unwrap())
        .collect();
    let doubled: Vec<RatePoint> = base.iter().map(|p| RatePoint::new(p.model_id, 2.0 * p.bpp, p.quality).unwrap()).collect();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    save_rate_points(&a, &base).unwrap();
    save_rate_points(&b, &doubled).unwrap();
    let out = ok(dic(&["bdrate", "--reference", s(&a), "--test", s(&b)]));
    assert_eq!(stdout(&out).trim(), "BD-rate: 100.0000%");
    let out = ok(dic(&["bdrate", "--reference", s(&b), "--test", s(&a), "--axis", "db"]));
    assert_eq!(stdout(&out).trim(), "BD-rate: -50.0000%");
}
