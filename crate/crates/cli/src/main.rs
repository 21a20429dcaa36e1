//! `dic`: train, code and evaluate learned image compression models.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage, config or input error.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use dic_core::checkpoint::load_model_dir;
use dic_core::losses::FrozenConvNet;
use dic_core::metrics::{bd_rate, QualityAxis, RdCurve};
use dic_core::rdo::{load_rate_points, pareto_front, save_rate_points, select_model};
use dic_core::trainer::{extract_patches_with, train, TrainOptions};
use dic_core::{Checkpoint, CompressedImage, Image, RatePoint};

use config::{TrainConfig, RESOLVED_CONFIG};

/// A failure caused by the caller: bad flags, config or input files.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const RATE_POINTS: &str = "rate_points.csv";

#[derive(Parser)]
#[command(name = "dic", version, about = "Learned lossy image compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the models listed in a config file and write their checkpoints.
    Train {
        /// TOML training config; the single source of truth for the run.
        #[arg(short, long)]
        config: PathBuf,
        /// Overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Overrides `model_dir`.
        #[arg(long, env = "DIC_MODEL_DIR")]
        model_dir: Option<PathBuf>,
    },
    /// Compress a PNG image to a .dic file.
    Compress {
        input: PathBuf,
        /// Output file; defaults to the input with a .dic extension.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, env = "DIC_MODEL_DIR", default_value = "models")]
        model_dir: PathBuf,
        /// Use this model id.
        #[arg(long, conflicts_with = "target_bpp")]
        model: Option<u8>,
        /// Pick the best model whose measured rate fits this budget.
        #[arg(long)]
        target_bpp: Option<f64>,
    },
    /// Decompress a .dic file to PNG.
    Decompress {
        input: PathBuf,
        /// Output PNG; defaults to the input with a .png extension.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, env = "DIC_MODEL_DIR", default_value = "models")]
        model_dir: PathBuf,
    },
    /// Measure every model on an image set and compare against baselines.
    Evaluate {
        /// A PNG file or directory of PNGs.
        #[arg(long)]
        images: PathBuf,
        #[arg(long, env = "DIC_MODEL_DIR", default_value = "models")]
        model_dir: PathBuf,
        /// Baseline RD curve CSV (model_id,bpp,quality); repeatable.
        #[arg(long)]
        baseline: Vec<PathBuf>,
        /// Report directory.
        #[arg(short, long, default_value = "report")]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Axis::Raw)]
        axis: Axis,
    },
    /// Measure the average RD point of every model and save them for
    /// `compress --target-bpp`.
    RdCurve {
        #[arg(long)]
        images: PathBuf,
        #[arg(long, env = "DIC_MODEL_DIR", default_value = "models")]
        model_dir: PathBuf,
        /// Defaults to rate_points.csv inside the model directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// BD-rate of a test RD curve against a reference curve, in percent.
    Bdrate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = Axis::Raw)]
        axis: Axis,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    /// MS-SSIM as is.
    Raw,
    /// -10·log10(1 - MS-SSIM).
    Db,
}

impl From<Axis> for QualityAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Raw => QualityAxis::Raw,
            Axis::Db => QualityAxis::Decibel,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use dic_core::Error as E;
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(core) = cause.downcast_ref::<E>() {
            return match core {
                E::NonFinite { .. } | E::Shape(_) | E::Weights(_) | E::Distribution(_) => 1,
                E::SymbolRange { .. } | E::QuantizerRange { .. } => 1,
                E::Io(io) if !matches!(io.kind(), std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied) => 1,
                _ => 2,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return if io.kind() == std::io::ErrorKind::NotFound { 2 } else { 1 };
        }
    }
    1
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train {
            config,
            seed,
            dataset,
            model_dir,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = dataset {
                cfg.dataset = d;
            }
            if let Some(m) = model_dir {
                cfg.model_dir = m;
            }
            cmd_train(&cfg)
        }
        Command::Compress {
            input,
            output,
            model_dir,
            model,
            target_bpp,
        } => cmd_compress(&input, output.unwrap_or_else(|| input.with_extension("dic")), &model_dir, model, target_bpp),
        Command::Decompress { input, output, model_dir } => {
            cmd_decompress(&input, output.unwrap_or_else(|| input.with_extension("png")), &model_dir)
        }
        Command::Evaluate {
            images,
            model_dir,
            baseline,
            output,
            axis,
        } => cmd_evaluate(&images, &model_dir, &baseline, &output, axis.into()),
        Command::RdCurve { images, model_dir, output } => {
            let output = output.unwrap_or_else(|| model_dir.join(RATE_POINTS));
            cmd_rd_curve(&images, &model_dir, &output)
        }
        Command::Bdrate { reference, test, axis } => {
            let value = bd_rate(&curve_from_csv(&reference)?, &curve_from_csv(&test)?, axis.into())?;
            println!("BD-rate: {value:.4}%");
            Ok(())
        }
    }
}

fn cmd_train(cfg: &TrainConfig) -> anyhow::Result<()> {
    cfg.validate()?;
    let mut schedule = cfg.schedule.clone();
    schedule.seed = cfg.seed;
    let images: Vec<Image> = report::load_pngs(&cfg.dataset)?.into_iter().map(|(_, i)| i).collect();
    let dataset = extract_patches_with(&images, cfg.patches, cfg.seed, &cfg.patch)?;
    let validation = match &cfg.validation {
        Some(dir) => report::load_pngs(dir)?.into_iter().map(|(_, i)| i).collect(),
        None if cfg.validation_patches > 0 => {
            extract_patches_with(&images, cfg.validation_patches, cfg.seed.wrapping_add(1), &cfg.patch)?
                .patches()
                .to_vec()
        }
        None => Vec::new(),
    };
    let psi = cfg.perceptual.clone().map(FrozenConvNet::random).transpose()?;
    let options = TrainOptions {
        weights: cfg.weights,
        feature_extractor: psi.as_ref().map(|p| p as &dyn dic_core::losses::FeatureExtractor),
        critic: cfg.critic.clone(),
        model_dir: Some(cfg.model_dir.clone()),
        validation,
        first_model_id: cfg.first_model_id,
    };
    info!(
        "training {} model(s) on {} patches for {} epochs",
        cfg.models.len(),
        dataset.len(),
        schedule.total_epochs()
    );
    let run = train(&dataset, &cfg.models, &schedule, &options)?;
    std::fs::write(cfg.model_dir.join(RESOLVED_CONFIG), cfg.to_toml()?)?;
    println!("wrote {} checkpoint(s) to {}", run.checkpoints.len(), cfg.model_dir.display());
    Ok(())
}

fn load_models(dir: &Path) -> anyhow::Result<Vec<Checkpoint>> {
    if !dir.is_dir() {
        return Err(UsageError(format!("model directory {} does not exist", dir.display())).into());
    }
    let ckpts = load_model_dir(dir).with_context(|| format!("loading models from {}", dir.display()))?;
    if ckpts.is_empty() {
        return Err(UsageError(format!("no checkpoints in {}", dir.display())).into());
    }
    Ok(ckpts)
}

/// Measured RD points: the model directory's CSV, else checkpoint metadata.
fn known_rate_points(dir: &Path, ckpts: &[Checkpoint]) -> anyhow::Result<Vec<RatePoint>> {
    let csv = dir.join(RATE_POINTS);
    let points = if csv.is_file() {
        load_rate_points(&csv)?
    } else {
        ckpts.iter().filter_map(|c| c.rate_point).collect()
    };
    Ok(points
        .into_iter()
        .filter(|p| ckpts.iter().any(|c| c.model_id as u32 == p.model_id))
        .collect())
}

fn cmd_compress(input: &Path, output: PathBuf, model_dir: &Path, model: Option<u8>, target_bpp: Option<f64>) -> anyhow::Result<()> {
    let image = Image::load_png(input).map_err(|e| UsageError(format!("cannot read {}: {e}", input.display())))?;
    let ckpts = load_models(model_dir)?;
    let id = match (model, target_bpp) {
        (Some(id), _) => id,
        // per-image adaptivity: select on this image's own RD points
        (None, Some(t)) => {
            if !(t.is_finite() && t > 0.0) {
                return Err(UsageError(format!("target bpp {t} must be positive")).into());
            }
            let rows = report::measure(&[(input.display().to_string(), image.clone())], &ckpts)?;
            let pick = select_model(&pareto_front(&rows[0].points)?, t)?;
            info!("{} of {} models fit {t} bpp on this image", rows[0].points.iter().filter(|p| p.bpp <= t).count(), ckpts.len());
            pick.point.model_id as u8
        }
        (None, None) => {
            let points = known_rate_points(model_dir, &ckpts)?;
            if points.is_empty() {
                ckpts[ckpts.len() - 1].model_id
            } else {
                select_model(&pareto_front(&points)?, f64::INFINITY)?.point.model_id as u8
            }
        }
    };
    let ckpt = ckpts
        .iter()
        .find(|c| c.model_id == id)
        .ok_or_else(|| UsageError(format!("model {id} not found in {}", model_dir.display())))?;
    info!("compressing {} with model {id}", input.display());
    let cs = dic_core::compress_image(&image, ckpt)?;
    cs.save(&output)?;
    println!("model {id}: {:.6} bpp -> {}", cs.bpp(), output.display());
    Ok(())
}

fn cmd_decompress(input: &Path, output: PathBuf, model_dir: &Path) -> anyhow::Result<()> {
    let cs = CompressedImage::load(input).with_context(|| format!("reading {}", input.display()))?;
    let ckpts = load_models(model_dir)?;
    let ckpt = ckpts.iter().find(|c| c.model_id == cs.header.model_id).ok_or_else(|| {
        UsageError(format!("{} needs model {}, which is not in {}", input.display(), cs.header.model_id, model_dir.display()))
    })?;
    dic_core::decompress_image(&cs, ckpt)?.save_png(&output)?;
    println!("{}x{} -> {}", cs.header.width, cs.header.height, output.display());
    Ok(())
}

fn curve_from_csv(path: &Path) -> anyhow::Result<RdCurve> {
    let points = load_rate_points(path).with_context(|| format!("reading {}", path.display()))?;
    RdCurve::new(pareto_front(&points)?).with_context(|| format!("RD curve {}", path.display()))
}

fn cmd_rd_curve(images: &Path, model_dir: &Path, output: &Path) -> anyhow::Result<()> {
    let imgs = report::load_pngs(images)?;
    let ckpts = load_models(model_dir)?;
    let avg = report::average(&report::measure(&imgs, &ckpts)?)?;
    save_rate_points(output, &avg)?;
    for p in pareto_front(&avg)? {
        println!("model {:3}: {:.6} bpp, MS-SSIM {:.6}", p.model_id, p.bpp, p.quality);
    }
    Ok(())
}

fn cmd_evaluate(images: &Path, model_dir: &Path, baselines: &[PathBuf], out: &Path, axis: QualityAxis) -> anyhow::Result<()> {
    let imgs = report::load_pngs(images)?;
    let ckpts = load_models(model_dir)?;
    let baseline_points = baselines
        .iter()
        .map(|b| Ok((b, load_rate_points(b).with_context(|| format!("reading baseline {}", b.display()))?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let rows = report::measure(&imgs, &ckpts)?;
    let avg = report::average(&rows)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.csv"), report::report_csv(&rows, &avg))?;
    save_rate_points(out.join("rd_points.csv"), &avg)?;

    let ours = RdCurve::new(pareto_front(&avg)?).map_err(|e| e.to_string());
    let mut bd_csv = String::from("baseline,bd_rate_percent,error\n");
    let mut curves = vec![("dic".to_string(), avg.clone())];
    for (path, points) in &baseline_points {
        let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let result = match &ours {
            Ok(test) => RdCurve::new(pareto_front(points)?)
                .and_then(|reference| bd_rate(&reference, test, axis))
                .map_err(|e| e.to_string()),
            Err(e) => Err(format!("own curve: {e}")),
        };
        match result {
            Ok(v) => {
                println!("BD-rate vs {name}: {v:.4}%");
                bd_csv.push_str(&format!("{name},{v},\n"));
            }
            Err(e) => {
                println!("BD-rate vs {name}: unavailable ({e})");
                bd_csv.push_str(&format!("{name},,\"{}\"\n", e.to_string().replace('"', "'")));
            }
        }
        curves.push((name, points.clone()));
    }
    std::fs::write(out.join("bd_rate.csv"), bd_csv)?;
    std::fs::write(out.join("rd.svg"), report::rd_svg(&curves))?;
    println!(
        "{} image(s), {} model(s): average {} -> {}",
        rows.len(),
        ckpts.len(),
        avg.iter().map(|p| format!("{:.4} bpp/{:.4}", p.bpp, p.quality)).collect::<Vec<_>>().join(", "),
        out.display()
    );
    Ok(())
}
