mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use monobev::eval::Geometry;
use monobev::Difficulty;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(
    name = "mono-bev3d",
    version,
    about = "Monocular 3D vehicle localization in bird's-eye view"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for every artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenArgs),
    /// Train stage 1 (BR1-BR3) or stage 2 (BR4 with the rest frozen).
    Train(TrainArgs),
    /// AP table and hit rates from KITTI label directories or a checkpoint.
    Eval(EvalArgs),
    /// Draw BEV overlays and occupancy grids for validation frames.
    RenderBev(RenderArgs),
    /// Parse KITTI labels and print a difficulty histogram.
    InspectLabels(InspectArgs),
    /// Compare analytic and numeric gradients of every layer kind.
    GradCheck,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    crop_size: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: Option<u8>,
    /// Dataset directory (defaults to --out).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Stage-1 checkpoint for stage 2 (defaults to <out>/stage1.ckpt).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Epoch count of the selected stage.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    lambda_depth: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Disable augmentation.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of predicted KITTI label files (with scores).
    #[arg(long, requires = "gt")]
    pred: Option<PathBuf>,
    /// Directory of ground-truth KITTI label files.
    #[arg(long, requires = "pred")]
    gt: Option<PathBuf>,
    /// Stage-2 checkpoint to predict with, instead of --pred/--gt.
    #[arg(long, conflicts_with = "pred")]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// IoU thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    iou: Option<Vec<f64>>,
    /// Evaluate a single tier (easy, moderate or hard).
    #[arg(long)]
    tier: Option<String>,
    #[arg(long)]
    class_name: Option<String>,
    /// Matching geometry: bev, bev-rotated or frontal.
    #[arg(long)]
    geometry: Option<String>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Grid resolution in meters per cell.
    #[arg(long)]
    resolution: Option<f64>,
    /// Number of frames to render.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    kitti_dir: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    set(&mut c.out, cli.out.clone());
    set(&mut c.seed, cli.seed);
    match &cli.command {
        Command::GenData(a) => {
            set(&mut c.n, a.n);
            set(&mut c.crop_size, a.crop_size);
        }
        Command::Train(a) => {
            set_opt(&mut c.stage, a.stage);
            set_opt(&mut c.dataset, a.dataset.clone());
            set_opt(&mut c.ckpt, a.ckpt.clone());
            if let Some(e) = a.epochs {
                match c.stage {
                    Some(2) => c.epochs_stage2 = e,
                    _ => c.epochs_stage1 = e,
                }
            }
            set(&mut c.batch_size, a.batch_size);
            set(&mut c.lr0, a.lr0);
            set(&mut c.lambda_depth, a.lambda_depth);
            set(&mut c.dropout_p, a.dropout);
            set(&mut c.eval_every, a.eval_every);
            if a.no_augment {
                c.augment = false;
            }
        }
        Command::Eval(a) => {
            set_opt(&mut c.pred, a.pred.clone());
            set_opt(&mut c.gt, a.gt.clone());
            set_opt(&mut c.ckpt, a.ckpt.clone());
            set_opt(&mut c.dataset, a.dataset.clone());
            set(&mut c.iou, a.iou.clone());
            set_opt(&mut c.tier, a.tier.clone());
            set(&mut c.class_name, a.class_name.clone());
            set(&mut c.geometry, a.geometry.clone());
        }
        Command::RenderBev(a) => {
            set_opt(&mut c.ckpt, a.ckpt.clone());
            set_opt(&mut c.dataset, a.dataset.clone());
            set(&mut c.grid_resolution, a.resolution);
            set(&mut c.render_frames, a.frames);
        }
        Command::InspectLabels(a) => set_opt(&mut c.kitti_dir, a.kitti_dir.clone()),
        Command::GradCheck => {}
    }
    validate(&cli.command, &c)?;
    Ok(c)
}

/// Rejects configurations that can never run, before any work starts.
fn validate(cmd: &Command, c: &RunConfig) -> anyhow::Result<()> {
    match cmd {
        Command::GenData(_) => {
            anyhow::ensure!(c.n > 0, "n must be positive");
            anyhow::ensure!(c.crop_size >= 8, "crop_size must be at least 8");
        }
        Command::Train(_) => {
            anyhow::ensure!(c.stage.is_some(), "train needs --stage 1 or --stage 2");
            c.train().validate()?;
            c.model().validate()?;
        }
        Command::Eval(_) => {
            c.geometry.parse::<Geometry>()?;
            if let Some(t) = &c.tier {
                t.parse::<Difficulty>().map_err(anyhow::Error::msg)?;
            }
            anyhow::ensure!(
                !c.iou.is_empty() && c.iou.iter().all(|t| (0.0..=1.0).contains(t)),
                "iou thresholds must lie in [0, 1]"
            );
        }
        Command::RenderBev(_) => {
            anyhow::ensure!(c.grid_resolution > 0.0, "resolution must be positive")
        }
        Command::InspectLabels(_) | Command::GradCheck => {}
    }
    Ok(())
}

fn run(cli: Cli, cfg: RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| anyhow::anyhow!("{}: {e}", cfg.out.display()))?;
    std::fs::write(cfg.out.join("resolved_config.json"), cfg.to_json())?;
    log::info!("seed {} out {}", cfg.seed, cfg.out.display());
    match cli.command {
        Command::GenData(_) => commands::gen_data(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Eval(_) => commands::eval(&cfg),
        Command::RenderBev(_) => commands::render_bev(&cfg),
        Command::InspectLabels(_) => commands::inspect_labels(&cfg),
        Command::GradCheck => commands::grad_check(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match run(cli, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
