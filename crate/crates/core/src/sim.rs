//! Deterministic synthetic crowd scenes on the ground grid.
//!
//! Agents walk at a constant per-agent speed with a heading random walk and
//! reflect off the grid border. Randomness comes from ChaCha8 streams: the
//! scene seed selects the key and each (purpose, agent, frame) triple selects
//! its own 64-bit stream id, so every draw is independent of iteration order
//! and worker count.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::domain::{Detection, GroundGrid, Heatmap, OffsetField, Point, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub grid: GroundGrid,
    pub num_agents: usize,
    pub num_frames: usize,
    /// Per-frame speed range in cells; each agent draws one speed.
    pub speed_cells: (f64, f64),
    pub turn_sigma_rad: f64,
    /// Initial heading shared by all agents; uniform random when `None`.
    pub heading_rad: Option<f64>,
    pub miss_rate: f64,
    pub fp_rate_per_frame: f64,
    pub jitter_sigma_cells: f64,
    pub gaussian_sigma_cells: f64,
    pub gaussian_radius_cells: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            grid: GroundGrid::new(64, 64).expect("valid grid"),
            num_agents: 16,
            num_frames: 40,
            speed_cells: (1.0, 2.0),
            turn_sigma_rad: 0.15,
            heading_rad: None,
            miss_rate: 0.1,
            fp_rate_per_frame: 1.0,
            jitter_sigma_cells: 0.3,
            gaussian_sigma_cells: 1.0,
            gaussian_radius_cells: 3.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_agents == 0 {
            return bad("num_agents must be positive".into());
        }
        if self.num_frames == 0 {
            return bad("num_frames must be positive".into());
        }
        let (lo, hi) = self.speed_cells;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("speed range ({lo}, {hi}) is invalid"));
        }
        if !(self.turn_sigma_rad >= 0.0) {
            return bad("turn_sigma_rad must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.miss_rate) {
            return bad(format!(
                "miss_rate must be in [0, 1), got {}",
                self.miss_rate
            ));
        }
        if !(self.fp_rate_per_frame >= 0.0) || !(self.jitter_sigma_cells >= 0.0) {
            return bad("false-positive rate and jitter must be >= 0".into());
        }
        if !(self.gaussian_sigma_cells > 0.0
            && self.gaussian_radius_cells >= self.gaussian_sigma_cells)
        {
            return bad("need 0 < gaussian_sigma <= gaussian_radius".into());
        }
        Ok(())
    }

    pub fn corruption(&self) -> CorruptionConfig {
        CorruptionConfig {
            miss_rate: self.miss_rate,
            fp_rate_per_frame: self.fp_rate_per_frame,
            jitter_sigma_cells: self.jitter_sigma_cells,
            seed: self.seed,
        }
    }
}

/// Detector noise model applied to ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionConfig {
    pub miss_rate: f64,
    pub fp_rate_per_frame: f64,
    pub jitter_sigma_cells: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Stream {
    AgentInit = 1,
    AgentStep = 2,
    Detection = 3,
    FalsePositive = 4,
}

/// Independent generator for one (purpose, agent, frame) triple.
fn stream_rng(seed: u64, purpose: Stream, agent: u64, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose as u64) << 60 | (agent & 0x3fff_ffff) << 30 | (frame & 0x3fff_ffff));
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub grid: GroundGrid,
    /// One trajectory per agent, id = agent index, covering every frame.
    pub trajectories: Vec<Trajectory>,
    pub gt_heatmaps: Vec<Heatmap>,
    /// `gt_offsets[t]` maps frame `t` to `t+1`; non-zero only at agent cells.
    pub gt_offsets: Vec<OffsetField>,
    pub gt_points: Vec<Vec<Point>>,
}

impl SceneTruth {
    pub fn num_frames(&self) -> usize {
        self.gt_points.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.gt_offsets.len()
    }

    /// Cells occupied at frame `t` with the motion of their occupant. When two
    /// agents share a cell the lower agent id wins.
    pub fn gt_cells(&self, t: usize) -> Vec<(usize, Point)> {
        cell_offsets(&self.grid, &self.gt_points[t], self.gt_points.get(t + 1))
    }
}

fn cell_offsets(
    grid: &GroundGrid,
    now: &[Point],
    next: Option<&Vec<Point>>,
) -> Vec<(usize, Point)> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (a, &p) in now.iter().enumerate() {
        let cell = grid.nearest_cell(p);
        if seen.insert(cell) {
            let motion = next.map_or(Point::default(), |n| n[a].sub(p));
            out.push((cell, motion));
        }
    }
    out
}

fn offsets_between(grid: &GroundGrid, now: &[Point], next: &Vec<Point>) -> OffsetField {
    let mut dx = vec![0.0; grid.len()];
    let mut dy = vec![0.0; grid.len()];
    for (cell, m) in cell_offsets(grid, now, Some(next)) {
        dx[cell] = m.x;
        dy[cell] = m.y;
    }
    OffsetField::new(*grid, dx, dy).expect("finite offsets")
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<SceneTruth> {
    cfg.validate()?;
    let grid = cfg.grid;
    let xmax = (grid.width() - 1) as f64;
    let ymax = (grid.height() - 1) as f64;
    let turn = Normal::new(0.0, cfg.turn_sigma_rad).map_err(|e| Error::Config(e.to_string()))?;

    let mut paths: Vec<Vec<Point>> = Vec::with_capacity(cfg.num_agents);
    for a in 0..cfg.num_agents as u64 {
        let mut rng = stream_rng(cfg.seed, Stream::AgentInit, a, 0);
        let mut pos = Point::new(rng.random_range(0.0..=xmax), rng.random_range(0.0..=ymax));
        let mut heading = match cfg.heading_rad {
            Some(h) => h,
            None => rng.random_range(0.0..2.0 * PI),
        };
        let (lo, hi) = cfg.speed_cells;
        let speed = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };

        let mut path = Vec::with_capacity(cfg.num_frames);
        path.push(pos);
        for t in 1..cfg.num_frames as u64 {
            if cfg.turn_sigma_rad > 0.0 {
                heading += turn.sample(&mut stream_rng(cfg.seed, Stream::AgentStep, a, t));
            }
            let mut v = Point::new(speed * heading.cos(), speed * heading.sin());
            let mut next = pos.add(v);
            if next.x < 0.0 || next.x > xmax {
                heading = PI - heading;
                v.x = -v.x;
            }
            if next.y < 0.0 || next.y > ymax {
                heading = -heading;
                v.y = -v.y;
            }
            next = pos.add(v);
            // only reachable when the speed exceeds the grid size
            next.x = next.x.clamp(0.0, xmax);
            next.y = next.y.clamp(0.0, ymax);
            pos = next;
            path.push(pos);
        }
        paths.push(path);
    }

    let gt_points: Vec<Vec<Point>> = (0..cfg.num_frames)
        .map(|t| paths.iter().map(|p| p[t]).collect())
        .collect();
    let trajectories = paths
        .iter()
        .enumerate()
        .map(|(a, path)| {
            let mut tr = Trajectory::start(a as i64, 0, path[0]);
            for (t, &p) in path.iter().enumerate().skip(1) {
                tr.push(t as i64, p).expect("frames increase");
            }
            tr
        })
        .collect();
    truth_from_points(
        grid,
        trajectories,
        gt_points,
        cfg.gaussian_sigma_cells,
        cfg.gaussian_radius_cells,
    )
}

/// Rebuilds a scene from trajectories that cover frames `0..num_frames`,
/// ordered by agent.
pub fn truth_from_trajectories(
    grid: GroundGrid,
    trajectories: Vec<Trajectory>,
    num_frames: usize,
    sigma: f64,
    radius: f64,
) -> Result<SceneTruth> {
    let mut gt_points = vec![Vec::with_capacity(trajectories.len()); num_frames];
    for tr in &trajectories {
        for (t, frame) in gt_points.iter_mut().enumerate() {
            let p = tr.at(t as i64).ok_or_else(|| {
                Error::Config(format!("trajectory {} has no point at frame {t}", tr.id))
            })?;
            frame.push(p);
        }
    }
    truth_from_points(grid, trajectories, gt_points, sigma, radius)
}

fn truth_from_points(
    grid: GroundGrid,
    trajectories: Vec<Trajectory>,
    gt_points: Vec<Vec<Point>>,
    sigma: f64,
    radius: f64,
) -> Result<SceneTruth> {
    let gt_heatmaps = gt_points
        .iter()
        .map(|pts| render_heatmap(pts, grid, sigma, radius))
        .collect::<Result<Vec<_>>>()?;
    let gt_offsets = gt_points
        .windows(2)
        .map(|w| offsets_between(&grid, &w[0], &w[1]))
        .collect();
    Ok(SceneTruth {
        grid,
        trajectories,
        gt_heatmaps,
        gt_offsets,
        gt_points,
    })
}

/// Unit-peak Gaussians pasted at `points`, combined by per-cell maximum.
pub fn render_heatmap(
    points: &[Point],
    grid: GroundGrid,
    sigma: f64,
    radius: f64,
) -> Result<Heatmap> {
    let weighted: Vec<(Point, f64)> = points.iter().map(|&p| (p, 1.0)).collect();
    render_weighted_heatmap(&weighted, grid, sigma, radius)
}

/// Gaussians of the given peak amplitudes (in `[0, 1]`), combined by maximum.
pub fn render_weighted_heatmap(
    points: &[(Point, f64)],
    grid: GroundGrid,
    sigma: f64,
    radius: f64,
) -> Result<Heatmap> {
    let (w, h) = grid.dims();
    let mut values = vec![0.0f64; grid.len()];
    let two_var = 2.0 * sigma * sigma;
    for &(p, amp) in points {
        if !grid.contains(p) {
            return Err(Error::OutOfBounds {
                x: p.x,
                y: p.y,
                w,
                h,
            });
        }
        let x0 = (p.x - radius).ceil().max(0.0) as usize;
        let y0 = (p.y - radius).ceil().max(0.0) as usize;
        let x1 = ((p.x + radius).floor() as usize).min(w - 1);
        let y1 = ((p.y + radius).floor() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2);
                if d2 <= radius * radius {
                    let v = &mut values[grid.index(x, y)];
                    *v = v.max(amp * (-d2 / two_var).exp());
                }
            }
        }
    }
    Heatmap::new(grid, values)
}

/// Detector noise: misses, jitter, confidences and false positives.
pub fn corrupt_detections(truth: &SceneTruth, cfg: &CorruptionConfig) -> Vec<Vec<Detection>> {
    let grid = truth.grid;
    let xmax = (grid.width() - 1) as f64;
    let ymax = (grid.height() - 1) as f64;
    let jitter = (cfg.jitter_sigma_cells > 0.0)
        .then(|| Normal::new(0.0, cfg.jitter_sigma_cells).expect("finite sigma"));
    let fp_count = (cfg.fp_rate_per_frame > 0.0)
        .then(|| Poisson::new(cfg.fp_rate_per_frame).expect("positive rate"));

    truth
        .gt_points
        .iter()
        .enumerate()
        .map(|(t, points)| {
            let mut frame = Vec::new();
            for (a, &p) in points.iter().enumerate() {
                let mut rng = stream_rng(cfg.seed, Stream::Detection, a as u64, t as u64);
                if rng.random::<f64>() < cfg.miss_rate {
                    continue;
                }
                let mut pos = p;
                if let Some(j) = &jitter {
                    pos.x = (pos.x + j.sample(&mut rng)).clamp(0.0, xmax);
                    pos.y = (pos.y + j.sample(&mut rng)).clamp(0.0, ymax);
                }
                let confidence = rng.random_range(0.7..=1.0);
                frame.push(Detection::new(t as i64, pos, confidence));
            }
            if let Some(poisson) = &fp_count {
                let mut rng = stream_rng(cfg.seed, Stream::FalsePositive, 0, t as u64);
                let n = poisson.sample(&mut rng) as usize;
                for _ in 0..n {
                    let pos =
                        Point::new(rng.random_range(0.0..=xmax), rng.random_range(0.0..=ymax));
                    let confidence = rng.random_range(0.05..=0.3);
                    frame.push(Detection::new(t as i64, pos, confidence));
                }
            }
            frame
        })
        .collect()
}

fn kept_frames(num_frames: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..num_frames).step_by(stride.max(1))
}

/// Keeps frames `0, s, 2s, …` and renumbers them consecutively. Offsets are
/// re-derived across each gap.
pub fn subsample_fps(truth: &SceneTruth, stride: usize) -> SceneTruth {
    let frames: Vec<usize> = kept_frames(truth.num_frames(), stride).collect();
    let gt_points: Vec<Vec<Point>> = frames.iter().map(|&t| truth.gt_points[t].clone()).collect();
    let gt_heatmaps = frames
        .iter()
        .map(|&t| truth.gt_heatmaps[t].clone())
        .collect();
    let gt_offsets = gt_points
        .windows(2)
        .map(|w| offsets_between(&truth.grid, &w[0], &w[1]))
        .collect();
    let trajectories = truth
        .trajectories
        .iter()
        .filter_map(|tr| {
            let pts: Vec<_> = frames
                .iter()
                .enumerate()
                .filter_map(|(k, &t)| {
                    tr.at(t as i64).map(|pos| crate::domain::TrackPoint {
                        time: k as i64,
                        pos,
                    })
                })
                .collect();
            Trajectory::from_points(tr.id, pts).ok()
        })
        .collect();
    SceneTruth {
        grid: truth.grid,
        trajectories,
        gt_heatmaps,
        gt_offsets,
        gt_points,
    }
}

pub fn subsample_detections(frames: &[Vec<Detection>], stride: usize) -> Vec<Vec<Detection>> {
    kept_frames(frames.len(), stride)
        .enumerate()
        .map(|(k, t)| {
            frames[t]
                .iter()
                .map(|d| Detection::new(k as i64, d.pos, d.confidence))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(agents: usize, frames: usize) -> SceneConfig {
        SceneConfig {
            grid: GroundGrid::new(60, 50).unwrap(),
            num_agents: agents,
            num_frames: frames,
            seed: 42,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn straight_walker_advances_exactly() {
        let c = SceneConfig {
            speed_cells: (2.0, 2.0),
            turn_sigma_rad: 0.0,
            heading_rad: Some(0.0),
            ..cfg(1, 30)
        };
        let truth = generate_scene(&c).unwrap();
        let pts: Vec<Point> = truth.gt_points.iter().map(|f| f[0]).collect();
        let mut reflected = false;
        for w in pts.windows(2) {
            let d = w[1].sub(w[0]);
            reflected |= d.x < 0.0;
            if reflected {
                assert!(d.sub(Point::new(-2.0, 0.0)).norm() < 1e-12);
            } else {
                assert_eq!(d, Point::new(2.0, 0.0));
            }
        }
        assert!(reflected);
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(&cfg(5, 12)).unwrap();
        let b = generate_scene(&cfg(5, 12)).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&SceneConfig {
            seed: 43,
            ..cfg(5, 12)
        })
        .unwrap();
        assert_ne!(a.gt_points, c.gt_points);
    }

    #[test]
    fn crowd_stays_in_bounds_at_constant_speed() {
        let c = cfg(20, 100);
        let truth = generate_scene(&c).unwrap();
        for frame in &truth.gt_points {
            assert!(frame.iter().all(|&p| c.grid.contains(p)));
        }
        for t in 0..truth.num_pairs() {
            for (a, p) in truth.gt_points[t].iter().enumerate() {
                let n = truth.gt_points[t + 1][a].sub(*p).norm();
                assert!(n >= c.speed_cells.0 - 1e-9 && n <= c.speed_cells.1 + 1e-9);
            }
            for (cell, m) in truth.gt_cells(t) {
                assert_eq!(truth.gt_offsets[t].at(cell), m);
            }
        }
        for hm in &truth.gt_heatmaps {
            assert!(hm.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_scene(&cfg(0, 10)).is_err());
        assert!(generate_scene(&SceneConfig {
            miss_rate: 1.0,
            ..cfg(2, 10)
        })
        .is_err());
        assert!(generate_scene(&SceneConfig {
            speed_cells: (3.0, 1.0),
            ..cfg(2, 10)
        })
        .is_err());
        assert!(generate_scene(&SceneConfig {
            gaussian_radius_cells: 0.5,
            ..cfg(2, 10)
        })
        .is_err());
    }

    #[test]
    fn render_examples() {
        let g = GroundGrid::new(10, 10).unwrap();
        let hm = render_heatmap(&[Point::new(4.0, 4.0)], g, 1.0, 3.0).unwrap();
        assert_eq!(hm.get(4, 4), 1.0);
        assert!((hm.get(5, 4) - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(hm.get(8, 4), 0.0);
        assert!(render_heatmap(&[], g, 1.0, 3.0)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        let two =
            render_heatmap(&[Point::new(4.0, 4.0), Point::new(5.0, 4.0)], g, 1.0, 3.0).unwrap();
        let mid = render_heatmap(&[Point::new(4.5, 4.0)], g, 1.0, 3.0).unwrap();
        assert_eq!(two.get(4, 4), 1.0);
        assert!(two.values().iter().all(|&v| v <= 1.0));
        // between the peaks: max of the kernels, not their sum
        assert!((two.get(4, 5) - (-0.5f64).exp()).abs() < 1e-15);
        assert!(mid.get(4, 4) < 1.0);
        assert!(render_heatmap(&[Point::new(10.0, 0.0)], g, 1.0, 3.0).is_err());
    }

    #[test]
    fn clean_corruption_is_identity() {
        let truth = generate_scene(&cfg(6, 8)).unwrap();
        let dets = corrupt_detections(
            &truth,
            &CorruptionConfig {
                miss_rate: 0.0,
                fp_rate_per_frame: 0.0,
                jitter_sigma_cells: 0.0,
                seed: 1,
            },
        );
        for (t, frame) in dets.iter().enumerate() {
            let pos: Vec<Point> = frame.iter().map(|d| d.pos).collect();
            assert_eq!(pos, truth.gt_points[t]);
            assert!(frame.iter().all(|d| (0.7..=1.0).contains(&d.confidence)));
        }
    }

    #[test]
    fn total_miss_leaves_false_positives() {
        let truth = generate_scene(&cfg(6, 20)).unwrap();
        let dets = corrupt_detections(
            &truth,
            &CorruptionConfig {
                miss_rate: 1.0,
                fp_rate_per_frame: 2.0,
                jitter_sigma_cells: 0.0,
                seed: 1,
            },
        );
        let all: Vec<&Detection> = dets.iter().flatten().collect();
        assert!(!all.is_empty());
        assert!(all
            .iter()
            .all(|d| d.confidence <= 0.3 && d.confidence >= 0.05));
    }

    #[test]
    fn miss_rate_concentrates() {
        let truth = generate_scene(&cfg(20, 50)).unwrap();
        let dets = corrupt_detections(
            &truth,
            &CorruptionConfig {
                miss_rate: 0.2,
                fp_rate_per_frame: 0.0,
                jitter_sigma_cells: 0.5,
                seed: 9,
            },
        );
        let kept: usize = dets.iter().map(|f| f.len()).sum();
        let dropped = 1.0 - kept as f64 / 1000.0;
        assert!((0.16..=0.24).contains(&dropped), "dropped {dropped}");
        for f in &dets {
            assert!(f.iter().all(|d| d.validate(&truth.grid).is_ok()));
        }
    }

    #[test]
    fn subsampling() {
        let c = SceneConfig {
            speed_cells: (2.0, 2.0),
            turn_sigma_rad: 0.0,
            heading_rad: Some(0.0),
            grid: GroundGrid::new(200, 10).unwrap(),
            ..cfg(1, 20)
        };
        let truth = generate_scene(&c).unwrap();
        assert_eq!(subsample_fps(&truth, 1), truth);
        let sub = subsample_fps(&truth, 3);
        assert_eq!(sub.num_frames(), 7);
        let (cell, m) = sub.gt_cells(0)[0];
        assert_eq!(m, Point::new(6.0, 0.0));
        assert_eq!(sub.gt_offsets[0].at(cell), Point::new(6.0, 0.0));
        assert_eq!(sub.trajectories[0].points()[1].time, 1);
        let single = subsample_fps(&truth, 50);
        assert_eq!(single.num_frames(), 1);
        assert_eq!(single.num_pairs(), 0);

        let dets = corrupt_detections(&truth, &c.corruption());
        let sd = subsample_detections(&dets, 3);
        assert_eq!(sd.len(), 7);
        assert!(sd[2].iter().all(|d| d.time == 2));
    }
}
