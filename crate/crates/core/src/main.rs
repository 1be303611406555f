use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use groundflow::experiment::{self, ExperimentConfig, TrackMode, CONFIG_FILE};
use groundflow::{Error, Result};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "groundflow",
    version,
    about = "Ground-plane tracking with motion fitted from detections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and its corrupted detections.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scene directory (default: the configured output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit forward and backward offset fields for a simulated scene.
    Fit {
        /// Defaults to <out>/config.txt.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Track a simulated scene and report CLEAR MOT metrics.
    Track {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "mussp")]
        mode: String,
    },
    /// MOTA and IDF1 of every tracker over the configured frame strides.
    SweepFps {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare analytic loss gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Also write gradcheck.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loss-term and motion-term ablations at the largest stride.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug)]
enum Failure {
    Lib(Error),
    Gradcheck(f64),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Gradcheck(_) => 3,
            Failure::Lib(e) => match e {
                Error::Config(_) | Error::InvalidGrid(_) => 2,
                Error::Divergence { .. }
                | Error::NonSpdCovariance
                | Error::SingularInnovation
                | Error::NonFinite(_) => 3,
                _ => 1,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Lib(e) => write!(f, "{e}"),
            Failure::Gradcheck(err) => write!(
                f,
                "gradient check failed: max relative error {err:e} >= {GRADCHECK_TOLERANCE:e}"
            ),
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.scene.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scene_dir_config(config: Option<PathBuf>, out: &Path) -> Result<ExperimentConfig> {
    let path = config.unwrap_or_else(|| out.join(CONFIG_FILE));
    load_config(Some(&path), None)
}

fn fmt_metric(v: f64) -> String {
    format!("{v:.4}")
}

fn run(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Simulate { config, out, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let s = experiment::simulate(&cfg, &dir)?;
            println!(
                "simulated {} frames, {} agents, {} detections -> {}",
                s.frames,
                s.agents,
                s.detections,
                dir.display()
            );
        }
        Command::Fit { config, out } => {
            let cfg = scene_dir_config(config, &out)?;
            let s = experiment::fit_scene(&cfg, &out)?;
            match s.report {
                Some(r) => println!(
                    "fitted {} pairs: l1 {} cells, angle {} deg, norm error {} cells",
                    s.pairs,
                    fmt_metric(r.l1),
                    fmt_metric(r.angle_deg),
                    fmt_metric(r.norm_err)
                ),
                None => println!(
                    "fitted {} pairs (no ground-truth cells to evaluate)",
                    s.pairs
                ),
            }
        }
        Command::Track { config, out, mode } => {
            let mode: TrackMode = mode.parse()?;
            let cfg = scene_dir_config(config, &out)?;
            let (tracks, r) = experiment::track_scene(&cfg, &out, mode)?;
            if r.mota.is_nan() {
                warn!("MOTA is undefined for this scene");
            }
            println!(
                "{mode}: {} tracks, MOTA {}, IDF1 {}, MOTP {}, IDSW {}, FP {}, FN {}",
                tracks.len(),
                fmt_metric(r.mota),
                fmt_metric(r.idf1),
                fmt_metric(r.motp),
                r.counts.idsw,
                r.counts.fp,
                r.counts.fn_
            );
        }
        Command::SweepFps { config, out, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let dir = out.unwrap_or_else(|| experiment::default_out(&cfg, "sweep"));
            let rows = experiment::sweep_fps(&cfg, &dir)?;
            println!(
                "{:>6}  {:<18} {:>8} {:>8}",
                "stride", "mode", "MOTA", "IDF1"
            );
            for r in rows {
                println!(
                    "{:>6}  {:<18} {:>8} {:>8}",
                    r.stride,
                    r.mode.name(),
                    fmt_metric(r.mota),
                    fmt_metric(r.idf1)
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Gradcheck {
            count,
            seed,
            eps,
            out,
        } => {
            let reports = experiment::gradcheck(count, seed, eps)?;
            let worst = reports.iter().map(|r| r.max()).fold(0.0, f64::max);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                let path = dir.join("gradcheck.csv");
                groundflow::domain::io::write_text(
                    &path,
                    &experiment::gradcheck_csv(&reports, seed),
                )?;
            }
            println!("{count} instances, max relative error {worst:e}");
            if worst.is_nan() || worst >= GRADCHECK_TOLERANCE {
                return Err(Failure::Gradcheck(worst));
            }
        }
        Command::Ablate { config, out, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let dir = out.unwrap_or_else(|| experiment::default_out(&cfg, "ablate"));
            let rows = experiment::ablate(&cfg, &dir)?;
            println!(
                "{:<16} {:>8} {:>8} {:>8} {:>8}",
                "variant", "L1", "angle", "MOTA", "IDF1"
            );
            for r in rows {
                println!(
                    "{:<16} {:>8} {:>8} {:>8} {:>8}",
                    r.variant,
                    fmt_metric(r.offsets.l1),
                    fmt_metric(r.offsets.angle_deg),
                    fmt_metric(r.mota),
                    fmt_metric(r.idf1)
                );
            }
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("GROUNDFLOW_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    warn!("could not size the worker pool: {e}");
                }
                info!("using {n} worker threads");
            }
            _ => {
                eprintln!("error: GROUNDFLOW_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
