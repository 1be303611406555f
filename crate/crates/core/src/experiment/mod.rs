//! Configuration, end-to-end runs, sweeps and plots behind the command line
//! tool.
//!
//! A scene directory holds:
//!
//! | file | written by |
//! |---|---|
//! | `config.txt` | `simulate` (resolved configuration) |
//! | `gt_tracks.csv`, `gt_heatmaps.gfh`, `gt_offsets.gfh` | `simulate` |
//! | `detections.csv` | `simulate` (corrupted detector output) |
//! | `offsets_fwd.gfh`, `offsets_bwd.gfh`, `trace.csv`, `offset_report.json` | `fit` |
//! | `tracks_<mode>.csv`, `report_<mode>.json` | `track` |

mod config;
pub mod pipeline;
pub mod svg;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{AblationFlags, ExperimentConfig};
pub use pipeline::{
    detection_points, evaluate, fit_motion, motion_error, nearest_detection_offsets, observe,
    prepare, run_point, track, Motion, Observations, PointResult, Sequence, TrackMode,
};

use crate::domain::io::{
    read_detections, read_offsets, read_trajectories, write_detections, write_heatmaps,
    write_offsets, write_text, write_trajectories,
};
use crate::domain::Trajectory;
use crate::eval::{MotReport, OffsetReport};
use crate::fit::{gradcheck_random_instance, write_trace_csv, GradcheckReport};
use crate::sim::{corrupt_detections, generate_scene, truth_from_trajectories, SceneTruth};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.txt";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulateSummary {
    pub frames: usize,
    pub agents: usize,
    pub detections: usize,
}

/// Writes the scene truth and corrupted detections to `dir`.
pub fn simulate(cfg: &ExperimentConfig, dir: &Path) -> Result<SimulateSummary> {
    cfg.validate()?;
    let truth = generate_scene(&cfg.scene)?;
    let dets = corrupt_detections(&truth, &cfg.scene.corruption());
    ensure_dir(dir)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_text())?;
    write_trajectories(&dir.join("gt_tracks.csv"), &truth.trajectories)?;
    write_heatmaps(
        &dir.join("gt_heatmaps.gfh"),
        &truth.grid,
        &truth.gt_heatmaps,
    )?;
    write_offsets(&dir.join("gt_offsets.gfh"), &truth.grid, &truth.gt_offsets)?;
    write_detections(&dir.join("detections.csv"), &dets)?;
    Ok(SimulateSummary {
        frames: truth.num_frames(),
        agents: truth.trajectories.len(),
        detections: dets.iter().map(Vec::len).sum(),
    })
}

/// Ground truth and detector output read back from a scene directory.
#[derive(Debug, Clone)]
pub struct SceneFiles {
    pub truth: SceneTruth,
    pub detections: Vec<Vec<crate::domain::Detection>>,
}

pub fn load_scene(cfg: &ExperimentConfig, dir: &Path) -> Result<SceneFiles> {
    let s = &cfg.scene;
    let path = dir.join("gt_tracks.csv");
    let tracks = read_trajectories(&path)?;
    let truth = truth_from_trajectories(
        s.grid,
        tracks,
        s.num_frames,
        s.gaussian_sigma_cells,
        s.gaussian_radius_cells,
    )
    .map_err(|e| Error::format(&path, e.to_string()))?;
    let detections = read_detections(&dir.join("detections.csv"), s.num_frames)?;
    for d in detections.iter().flatten() {
        d.validate(&s.grid)
            .map_err(|e| Error::format(dir.join("detections.csv"), e.to_string()))?;
    }
    Ok(SceneFiles { truth, detections })
}

/// Configuration stored next to a simulated scene.
pub fn scene_config(dir: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&dir.join(CONFIG_FILE))
}

#[derive(Debug, Clone)]
pub struct FitSummary {
    pub pairs: usize,
    /// `None` when the scene has no ground-truth cells to compare against.
    pub report: Option<OffsetReport>,
}

/// Fits offsets for every frame pair of the scene in `dir` and writes the
/// fields, the aggregated loss trace and the offset report.
pub fn fit_scene(cfg: &ExperimentConfig, dir: &Path) -> Result<FitSummary> {
    let scene = load_scene(cfg, dir)?;
    let obs = observe(&scene.detections, scene.truth.grid, cfg)?;
    let motion = fit_motion(&obs.heatmaps, &detection_points(&obs.selected), &cfg.fit)?;
    let grid = scene.truth.grid;
    write_offsets(&dir.join("offsets_fwd.gfh"), &grid, &motion.fwd)?;
    write_offsets(&dir.join("offsets_bwd.gfh"), &grid, &motion.bwd)?;
    write_trace_csv(&dir.join("trace.csv"), &motion.history)?;
    let report = match motion_error(&motion.fwd, &scene.truth) {
        Ok(r) => Some(r),
        Err(Error::EmptyReport) => None,
        Err(e) => return Err(e),
    };
    let json = report.map_or_else(|| "null\n".to_string(), |r| r.to_json() + "\n");
    write_text(&dir.join("offset_report.json"), &json)?;
    Ok(FitSummary {
        pairs: motion.fwd.len(),
        report,
    })
}

/// Tracks the scene in `dir` with `mode`, reading fitted offsets when the
/// mode needs them, and writes the tracks and their report.
pub fn track_scene(
    cfg: &ExperimentConfig,
    dir: &Path,
    mode: TrackMode,
) -> Result<(Vec<Trajectory>, MotReport)> {
    let scene = load_scene(cfg, dir)?;
    let grid = scene.truth.grid;
    let obs = observe(&scene.detections, grid, cfg)?;
    let motion = if mode.uses_offsets() {
        let fwd = read_offsets(&dir.join("offsets_fwd.gfh"), &grid)?;
        let bwd = read_offsets(&dir.join("offsets_bwd.gfh"), &grid)?;
        let pairs = scene.truth.num_pairs();
        if fwd.len() != pairs || bwd.len() != pairs {
            return Err(Error::format(
                dir.join("offsets_fwd.gfh"),
                format!(
                    "expected {pairs} fields, found {} and {}",
                    fwd.len(),
                    bwd.len()
                ),
            ));
        }
        Some(Motion {
            fwd,
            bwd,
            history: Vec::new(),
        })
    } else {
        None
    };
    let tracks = track(mode, &obs, motion.as_ref(), cfg)?;
    let report = evaluate(&tracks, &scene.truth.trajectories, cfg.dist_threshold)?;
    write_trajectories(&dir.join(format!("tracks_{mode}.csv")), &tracks)?;
    write_text(
        &dir.join(format!("report_{mode}.json")),
        &(report.to_json() + "\n"),
    )?;
    Ok((tracks, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub stride: usize,
    pub mode: TrackMode,
    /// Means over seeds.
    pub mota: f64,
    pub idf1: f64,
}

fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.seeds as u64)
        .map(|k| cfg.scene.seed.wrapping_add(k))
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Runs every (seed, stride) point with the given modes, in parallel.
pub fn run_points(
    cfg: &ExperimentConfig,
    strides: &[usize],
    modes: &[TrackMode],
) -> Result<Vec<PointResult>> {
    cfg.validate()?;
    let points: Vec<(u64, usize)> = seeds(cfg)
        .into_iter()
        .flat_map(|s| strides.iter().map(move |&k| (s, k)))
        .collect();
    points
        .par_iter()
        .map(|&(seed, stride)| run_point(cfg, seed, stride, modes))
        .collect()
}

pub fn sweep_rows(
    cfg: &ExperimentConfig,
    results: &[PointResult],
    modes: &[TrackMode],
) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &stride in &cfg.fps_strides {
        for &mode in modes {
            let reports: Vec<&MotReport> = results
                .iter()
                .filter(|r| r.stride == stride)
                .flat_map(|r| {
                    r.modes
                        .iter()
                        .filter(|(m, _)| *m == mode)
                        .map(|(_, rep)| rep)
                })
                .collect();
            rows.push(SweepRow {
                stride,
                mode,
                mota: mean(reports.iter().map(|r| r.mota)),
                idf1: mean(reports.iter().map(|r| r.idf1)),
            });
        }
    }
    rows
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("stride,mode,mota,idf1\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.stride, r.mode, r.mota, r.idf1);
    }
    s
}

pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let mut series: Vec<svg::Series> = Vec::new();
    for r in rows {
        match series.iter_mut().find(|s| s.label == r.mode.name()) {
            Some(s) => s.points.push((r.stride as f64, r.mota)),
            None => series.push(svg::Series {
                label: r.mode.name().to_string(),
                points: vec![(r.stride as f64, r.mota)],
            }),
        }
    }
    svg::line_plot(
        "Tracking accuracy vs frame stride",
        "frame stride",
        "MOTA",
        &series,
    )
}

/// Frame-rate sweep over `cfg.fps_strides` for all modes; writes
/// `sweep.csv` and `sweep.svg` to `dir`.
pub fn sweep_fps(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<SweepRow>> {
    ensure_dir(dir)?;
    let results = run_points(cfg, &cfg.fps_strides, &TrackMode::ALL)?;
    let rows = sweep_rows(cfg, &results, &TrackMode::ALL);
    write_text(&dir.join("sweep.csv"), &sweep_csv(&rows))?;
    write_text(&dir.join("sweep.svg"), &sweep_svg(&rows))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub offsets: OffsetReport,
    pub mota: f64,
    pub idf1: f64,
}

fn ablation_variants(cfg: &ExperimentConfig) -> Vec<(&'static str, ExperimentConfig, TrackMode)> {
    let a = cfg.ablations;
    let with_weights = |f: &dyn Fn(&mut crate::loss::LossWeights)| {
        let mut c = cfg.clone();
        f(&mut c.fit.weights);
        c
    };
    let mut out = vec![("full", cfg.clone(), TrackMode::Mussp)];
    if a.no_mot {
        out.push((
            "no_mot",
            with_weights(&|w| w.lambda_mot = 0.0),
            TrackMode::Mussp,
        ));
    }
    if a.no_se {
        out.push((
            "no_se",
            with_weights(&|w| w.lambda_se = 0.0),
            TrackMode::Mussp,
        ));
    }
    if a.no_fb {
        out.push((
            "no_fb",
            with_weights(&|w| w.lambda_fb = 0.0),
            TrackMode::Mussp,
        ));
    }
    if a.no_motion_term {
        out.push(("no_motion_term", cfg.clone(), TrackMode::MusspNoMotion));
    }
    out
}

/// Loss and motion-term ablations at the largest configured stride, averaged
/// over seeds.
pub fn ablation_rows(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let stride = *cfg.fps_strides.last().expect("validated non-empty");
    let mut rows = Vec::new();
    for (variant, c, mode) in ablation_variants(cfg) {
        // the no-motion-term variant still fits so its offset columns match "full"
        let modes = if mode == TrackMode::Mussp {
            vec![mode]
        } else {
            vec![mode, TrackMode::Mussp]
        };
        let results = run_points(&c, &[stride], &modes)?;
        let offsets: Vec<OffsetReport> = results.iter().filter_map(|r| r.offsets).collect();
        let picked: Vec<&MotReport> = results
            .iter()
            .flat_map(|r| {
                r.modes
                    .iter()
                    .filter(|(m, _)| *m == mode)
                    .map(|(_, rep)| rep)
            })
            .collect();
        rows.push(AblationRow {
            variant,
            offsets: OffsetReport {
                l1: mean(offsets.iter().map(|o| o.l1)),
                angle_deg: mean(offsets.iter().map(|o| o.angle_deg)),
                norm_err: mean(offsets.iter().map(|o| o.norm_err)),
            },
            mota: mean(picked.iter().map(|r| r.mota)),
            idf1: mean(picked.iter().map(|r| r.idf1)),
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,l1,angle_deg,norm_err,mota,idf1\n");
    for r in rows {
        let o = &r.offsets;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.variant, o.l1, o.angle_deg, o.norm_err, r.mota, r.idf1
        );
    }
    s
}

pub fn ablate(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<AblationRow>> {
    ensure_dir(dir)?;
    let rows = ablation_rows(cfg)?;
    write_text(&dir.join("ablation.csv"), &ablation_csv(&rows))?;
    Ok(rows)
}

/// Gradient checks on `count` random instances seeded `seed, seed + 1, …`.
pub fn gradcheck(count: usize, seed: u64, eps: f64) -> Result<Vec<GradcheckReport>> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| gradcheck_random_instance(seed.wrapping_add(k), eps))
        .collect()
}

pub fn gradcheck_csv(reports: &[GradcheckReport], seed: u64) -> String {
    let mut s = String::from("seed,l_mot,l_fb,l_se,total\n");
    for (k, r) in reports.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e}",
            seed.wrapping_add(k as u64),
            r.l_mot,
            r.l_fb,
            r.l_se,
            r.total
        );
    }
    s
}

/// Default output directory for `cmd` when `--out` is not given.
pub fn default_out(cfg: &ExperimentConfig, cmd: &str) -> PathBuf {
    cfg.output_dir.join(cmd)
}
