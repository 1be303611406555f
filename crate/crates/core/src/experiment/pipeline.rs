//! End-to-end run on one synthetic scene: detections, motion fitting,
//! tracking and evaluation.

use std::fmt;
use std::str::FromStr;

use crate::detect::{nms, select_true_detections};
use crate::domain::{Detection, GroundGrid, Heatmap, OffsetField, Point, Trajectory};
use crate::eval::{clear_mot, offset_error_pooled, MotCounts, MotReport, OffsetReport};
use crate::experiment::ExperimentConfig;
use crate::fit::{fit_offsets, EpochLoss, FitConfig, FramePair};
use crate::sim::{
    corrupt_detections, generate_scene, render_weighted_heatmap, subsample_detections,
    subsample_fps, SceneTruth,
};
use crate::track::{build_graph, run_two_stage, solve_ssp, EdgeCostParams, MotionSource};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrackMode {
    Mussp,
    MusspNoMotion,
    BytestyleKalman,
    BytestyleOffset,
    Nearest,
    Hungarian,
}

impl TrackMode {
    pub const ALL: [TrackMode; 6] = [
        TrackMode::Mussp,
        TrackMode::MusspNoMotion,
        TrackMode::BytestyleKalman,
        TrackMode::BytestyleOffset,
        TrackMode::Nearest,
        TrackMode::Hungarian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrackMode::Mussp => "mussp",
            TrackMode::MusspNoMotion => "mussp-nomotion",
            TrackMode::BytestyleKalman => "bytestyle-kalman",
            TrackMode::BytestyleOffset => "bytestyle-offset",
            TrackMode::Nearest => "nearest",
            TrackMode::Hungarian => "hungarian",
        }
    }

    /// Whether the mode reads fitted offset fields.
    pub fn uses_offsets(self) -> bool {
        matches!(self, TrackMode::Mussp | TrackMode::BytestyleOffset)
    }
}

impl fmt::Display for TrackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrackMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = TrackMode::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!(
                    "unknown mode {s:?}, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Detector output of every frame.
#[derive(Debug, Clone)]
pub struct Observations {
    /// Detections rendered as confidence-scaled Gaussians.
    pub heatmaps: Vec<Heatmap>,
    /// Peaks of the heatmaps after non-maximum suppression.
    pub candidates: Vec<Vec<Detection>>,
    /// Candidates above the 2-means confidence split.
    pub selected: Vec<Vec<Detection>>,
}

pub fn observe(
    raw: &[Vec<Detection>],
    grid: GroundGrid,
    cfg: &ExperimentConfig,
) -> Result<Observations> {
    let s = &cfg.scene;
    let mut heatmaps = Vec::with_capacity(raw.len());
    let mut candidates = Vec::with_capacity(raw.len());
    let mut selected = Vec::with_capacity(raw.len());
    for (t, frame) in raw.iter().enumerate() {
        let weighted: Vec<(Point, f64)> = frame
            .iter()
            .map(|d| (d.pos, d.confidence.clamp(0.0, 1.0)))
            .collect();
        let h = render_weighted_heatmap(
            &weighted,
            grid,
            s.gaussian_sigma_cells,
            s.gaussian_radius_cells,
        )?;
        let peaks = nms(&h, t as i64, &cfg.nms);
        selected.push(select_true_detections(&peaks, cfg.min_separation));
        candidates.push(peaks);
        heatmaps.push(h);
    }
    Ok(Observations {
        heatmaps,
        candidates,
        selected,
    })
}

/// Fitted forward and backward fields of every consecutive frame pair.
#[derive(Debug, Clone)]
pub struct Motion {
    pub fwd: Vec<OffsetField>,
    pub bwd: Vec<OffsetField>,
    pub history: Vec<EpochLoss>,
}

/// Fits offsets between consecutive heatmaps, supervised by the heatmaps
/// themselves.
pub fn fit_motion(heatmaps: &[Heatmap], points: &[Vec<Point>], cfg: &FitConfig) -> Result<Motion> {
    let pairs: Vec<FramePair> = heatmaps
        .windows(2)
        .zip(points.windows(2))
        .map(|(h, p)| FramePair::new(h[0].clone(), h[1].clone(), p[0].clone(), p[1].clone()))
        .collect();
    let results = fit_offsets(&pairs, cfg)?;
    let history = crate::fit::aggregate_history(&results);
    let (fwd, bwd) = results.into_iter().map(|r| (r.fwd, r.bwd)).unzip();
    Ok(Motion { fwd, bwd, history })
}

pub fn detection_points(frames: &[Vec<Detection>]) -> Vec<Vec<Point>> {
    frames
        .iter()
        .map(|f| f.iter().map(|d| d.pos).collect())
        .collect()
}

/// Baseline motion: every cell takes the displacement from its nearest
/// detection at `t` to that detection's nearest neighbour at `t + 1`.
pub fn nearest_detection_offsets(grid: GroundGrid, now: &[Point], next: &[Point]) -> OffsetField {
    if now.is_empty() || next.is_empty() {
        return OffsetField::zeros(grid);
    }
    let nearest = |set: &[Point], p: Point| -> Point {
        *set.iter()
            .min_by(|a, b| a.dist(p).total_cmp(&b.dist(p)))
            .expect("non-empty")
    };
    let motion: Vec<Point> = now.iter().map(|&p| nearest(next, p).sub(p)).collect();
    let n = grid.len();
    let (mut dx, mut dy) = (vec![0.0; n], vec![0.0; n]);
    for cell in 0..n {
        let (x, y) = grid.coords(cell);
        let c = Point::new(x as f64, y as f64);
        let k = (0..now.len())
            .min_by(|&a, &b| now[a].dist(c).total_cmp(&now[b].dist(c)))
            .expect("non-empty");
        dx[cell] = motion[k].x;
        dy[cell] = motion[k].y;
    }
    OffsetField::new(grid, dx, dy).expect("finite offsets")
}

/// Offset error of per-pair fields against the scene's ground-truth motion.
pub fn motion_error(fields: &[OffsetField], truth: &SceneTruth) -> Result<OffsetReport> {
    let cells: Vec<Vec<(usize, Point)>> =
        (0..truth.num_pairs()).map(|k| truth.gt_cells(k)).collect();
    let items: Vec<(&OffsetField, &[(usize, Point)])> = fields
        .iter()
        .zip(&cells)
        .map(|(f, c)| (f, c.as_slice()))
        .collect();
    offset_error_pooled(&items)
}

pub fn track(
    mode: TrackMode,
    obs: &Observations,
    motion: Option<&Motion>,
    cfg: &ExperimentConfig,
) -> Result<Vec<Trajectory>> {
    if mode.uses_offsets() && motion.is_none() {
        return Err(Error::Config(format!("mode {mode} needs fitted offsets")));
    }
    match mode {
        TrackMode::Mussp | TrackMode::MusspNoMotion => {
            let dets: Vec<Detection> = obs.selected.iter().flatten().copied().collect();
            let (offsets, edges) = if mode == TrackMode::Mussp {
                (motion.map(|m| m.bwd.as_slice()), cfg.edges)
            } else {
                (
                    None,
                    EdgeCostParams {
                        sigma_m: 0.0,
                        ..cfg.edges
                    },
                )
            };
            let g = build_graph(&dets, offsets, &edges)?;
            Ok(solve_ssp(&g).trajectories)
        }
        _ => {
            let source = match mode {
                TrackMode::BytestyleKalman => MotionSource::Kalman,
                TrackMode::BytestyleOffset => MotionSource::LearnedOffset,
                TrackMode::Nearest => MotionSource::Nearest,
                _ => MotionSource::Hungarian,
            };
            let fwd = motion.map(|m| m.fwd.as_slice());
            run_two_stage(&obs.candidates, fwd, cfg.two_stage, source)
        }
    }
}

/// CLEAR MOT report, or an all-NaN report when the ground truth is empty.
pub fn evaluate(pred: &[Trajectory], gt: &[Trajectory], threshold: f64) -> Result<MotReport> {
    match clear_mot(pred, gt, threshold) {
        Err(Error::UndefinedMota) => {
            log::warn!("no ground truth objects, MOTA reported as NaN");
            let fp = pred.iter().map(Trajectory::len).sum();
            Ok(MotReport::undefined(MotCounts {
                fp,
                ..MotCounts::default()
            }))
        }
        other => other,
    }
}

/// A scene at one frame stride with its observations.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub truth: SceneTruth,
    pub raw: Vec<Vec<Detection>>,
    pub obs: Observations,
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64, stride: usize) -> Result<Sequence> {
    let scene = crate::sim::SceneConfig { seed, ..cfg.scene };
    let full = generate_scene(&scene)?;
    let raw_full = corrupt_detections(&full, &scene.corruption());
    let truth = subsample_fps(&full, stride);
    let raw = subsample_detections(&raw_full, stride);
    let obs = observe(&raw, truth.grid, cfg)?;
    Ok(Sequence { truth, raw, obs })
}

/// Metrics of every requested mode on one (seed, stride) point.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub seed: u64,
    pub stride: usize,
    pub offsets: Option<OffsetReport>,
    pub modes: Vec<(TrackMode, MotReport)>,
}

pub fn run_point(
    cfg: &ExperimentConfig,
    seed: u64,
    stride: usize,
    modes: &[TrackMode],
) -> Result<PointResult> {
    let seq = prepare(cfg, seed, stride)?;
    let motion = if modes.iter().any(|m| m.uses_offsets()) {
        Some(fit_motion(
            &seq.obs.heatmaps,
            &detection_points(&seq.obs.selected),
            &cfg.fit,
        )?)
    } else {
        None
    };
    let offsets = match &motion {
        Some(m) => match motion_error(&m.fwd, &seq.truth) {
            Ok(r) => Some(r),
            Err(Error::EmptyReport) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let tracks = track(mode, &seq.obs, motion.as_ref(), cfg)?;
        out.push((
            mode,
            evaluate(&tracks, &seq.truth.trajectories, cfg.dist_threshold)?,
        ));
    }
    Ok(PointResult {
        seed,
        stride,
        offsets,
        modes: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.scene.grid = GroundGrid::new(32, 32).unwrap();
        c.scene.num_agents = 4;
        c.scene.num_frames = 8;
        c.fit.epochs = 10;
        c
    }

    #[test]
    fn mode_names_round_trip() {
        for m in TrackMode::ALL {
            assert_eq!(m.name().parse::<TrackMode>().unwrap(), m);
        }
        assert!(matches!(
            "bytetrack".parse::<TrackMode>(),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn clean_detections_are_tracked_perfectly() {
        let mut c = small_config();
        c.scene.miss_rate = 0.0;
        c.scene.fp_rate_per_frame = 0.0;
        c.scene.jitter_sigma_cells = 0.0;
        let seq = prepare(&c, 3, 1).unwrap();
        // NMS peaks sit on cell centers, so positions are within half a diagonal
        for (frame, pts) in seq.obs.selected.iter().zip(&seq.truth.gt_points) {
            assert!(frame.len() <= pts.len());
        }
        let tracks = track(TrackMode::MusspNoMotion, &seq.obs, None, &c).unwrap();
        let r = evaluate(&tracks, &seq.truth.trajectories, c.dist_threshold).unwrap();
        assert!(r.mota > 0.9, "{r:?}");
    }

    #[test]
    fn offset_modes_need_motion() {
        let c = small_config();
        let seq = prepare(&c, 0, 1).unwrap();
        for m in TrackMode::ALL {
            let r = track(m, &seq.obs, None, &c);
            assert_eq!(r.is_err(), m.uses_offsets(), "{m}");
        }
    }

    #[test]
    fn nearest_baseline_fills_voronoi_cells() {
        let g = GroundGrid::new(10, 4).unwrap();
        let now = [Point::new(1.0, 1.0), Point::new(8.0, 1.0)];
        let next = [Point::new(2.0, 1.0), Point::new(8.0, 3.0)];
        let f = nearest_detection_offsets(g, &now, &next);
        assert_eq!(f.get(0, 0), Point::new(1.0, 0.0));
        assert_eq!(f.get(9, 3), Point::new(0.0, 2.0));
        assert_eq!(
            nearest_detection_offsets(g, &now, &[]),
            OffsetField::zeros(g)
        );
    }

    #[test]
    fn point_runs_are_deterministic() {
        let c = small_config();
        let a = run_point(&c, 5, 2, &TrackMode::ALL).unwrap();
        let b = run_point(&c, 5, 2, &TrackMode::ALL).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert!(a.offsets.is_some());
        assert_eq!(a.modes.len(), 6);
    }
}
