//! Direct fitting of per-pair forward and backward offset fields from
//! detection heatmaps, and a central finite-difference gradient checker.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::domain::{GroundGrid, Heatmap, OffsetField, Point};
use crate::loss::{
    self, DetectionTerm, FieldGradient, LambdaSchedule, LossBreakdown, LossWeights,
    PairSupervision, PairVariables,
};
use crate::warp::ReconstructionConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Gradient,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn momentum() -> Self {
        Optimizer::Momentum { beta: 0.9 }
    }

    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    /// Optimizer updates per epoch; the schedule advances once per epoch.
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub schedule: LambdaSchedule,
    pub weights: LossWeights,
    pub optimizer: Optimizer,
    pub window_cells: usize,
    /// Neighborhood radius of the spatial-extent term; the ground-truth
    /// Gaussian radius.
    pub se_radius_cells: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            steps_per_epoch: 1,
            learning_rate: 0.05,
            schedule: LambdaSchedule::default(),
            weights: LossWeights::default(),
            optimizer: Optimizer::adam(),
            window_cells: 59,
            se_radius_cells: 3.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config(
                "epochs and steps_per_epoch must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.se_radius_cells > 0.0) {
            return Err(Error::Config("se_radius_cells must be positive".into()));
        }
        match self.optimizer {
            Optimizer::Gradient => {}
            Optimizer::Momentum { beta } if (0.0..1.0).contains(&beta) => {}
            Optimizer::Adam { beta1, beta2, eps }
                if (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0 => {}
            other => return Err(Error::Config(format!("invalid optimizer {other:?}"))),
        }
        self.schedule.validate()?;
        self.weights.validate()?;
        ReconstructionConfig::new(self.schedule.init, self.window_cells)?;
        Ok(())
    }
}

/// One frame pair. `input_*` are warped, `target_*` supervise; with
/// detection-only supervision they are the same heatmaps.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub input_t: Heatmap,
    pub input_t1: Heatmap,
    pub target_t: Heatmap,
    pub target_t1: Heatmap,
    pub points_t: Vec<Point>,
    pub points_t1: Vec<Point>,
}

impl FramePair {
    pub fn new(x_t: Heatmap, x_t1: Heatmap, points_t: Vec<Point>, points_t1: Vec<Point>) -> Self {
        Self {
            target_t: x_t.clone(),
            target_t1: x_t1.clone(),
            input_t: x_t,
            input_t1: x_t1,
            points_t,
            points_t1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub lambda_r: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub fwd: OffsetField,
    pub bwd: OffsetField,
    pub history: Vec<EpochLoss>,
}

struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, opt: Optimizer, lr: f64, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        match opt {
            Optimizer::Gradient => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Momentum { beta } => {
                for ((p, g), m) in params.iter_mut().zip(grad).zip(&mut self.m) {
                    *m = beta * *m + g;
                    *p -= lr * *m;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Fits one forward and one backward field per pair, starting from zero.
/// Pairs are independent and run in parallel; every pair follows the same
/// per-epoch schedule.
pub fn fit_offsets(pairs: &[FramePair], cfg: &FitConfig) -> Result<Vec<FitResult>> {
    cfg.validate()?;
    if let Some(first) = pairs.first() {
        let grid = first.input_t.grid();
        for p in pairs {
            for h in [&p.input_t, &p.input_t1, &p.target_t, &p.target_t1] {
                grid.check_same(h.grid())?;
            }
        }
    }
    pairs.par_iter().map(|p| fit_pair(p, cfg)).collect()
}

fn fit_pair(pair: &FramePair, cfg: &FitConfig) -> Result<FitResult> {
    let grid = *pair.input_t.grid();
    let n = grid.len();
    let sup = PairSupervision::new(
        pair.target_t.clone(),
        pair.target_t1.clone(),
        &pair.points_t,
        &pair.points_t1,
        cfg.se_radius_cells,
    )?;
    let mut vars = PairVariables {
        heatmap_t: pair.input_t.values().to_vec(),
        heatmap_t1: pair.input_t1.values().to_vec(),
        fwd: FieldGradient::zeros(n),
        bwd: FieldGradient::zeros(n),
    };
    let mut states: Vec<OptimizerState> = (0..4).map(|_| OptimizerState::new(n)).collect();
    let mut schedule = cfg.schedule;
    let mut history = Vec::with_capacity(cfg.epochs);
    let bound = ((cfg.window_cells - 1) / 2) as f64;

    for epoch in 0..cfg.epochs {
        let recon = ReconstructionConfig::new(schedule.current, cfg.window_cells)?;
        let targets = loss::smoothed_targets(&sup, &recon);
        let mut last = LossBreakdown::default();
        for _ in 0..cfg.steps_per_epoch {
            let (breakdown, grads) = loss::loss_total_with_targets(
                &sup,
                &vars,
                &recon,
                &cfg.weights,
                DetectionTerm::Frozen,
                &targets,
            )?;
            if !breakdown.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    value: breakdown.total,
                });
            }
            last = breakdown;
            let params = [
                (&mut vars.fwd.dx, &grads.fwd.dx),
                (&mut vars.fwd.dy, &grads.fwd.dy),
                (&mut vars.bwd.dx, &grads.bwd.dx),
                (&mut vars.bwd.dy, &grads.bwd.dy),
            ];
            for ((p, g), state) in params.into_iter().zip(&mut states) {
                state.step(cfg.optimizer, cfg.learning_rate, p, g);
                for v in p.iter_mut() {
                    *v = v.clamp(-bound, bound);
                }
            }
        }
        history.push(EpochLoss {
            epoch,
            lambda_r: schedule.current,
            loss: last,
        });
        schedule = schedule.step();
    }
    Ok(FitResult {
        fwd: vars.fwd_field(grid)?,
        bwd: vars.bwd_field(grid)?,
        history,
    })
}

/// Per-epoch loss summed over all pairs.
pub fn aggregate_history(results: &[FitResult]) -> Vec<EpochLoss> {
    let Some(first) = results.first() else {
        return Vec::new();
    };
    let mut out: Vec<EpochLoss> = first
        .history
        .iter()
        .map(|e| EpochLoss {
            loss: LossBreakdown::default(),
            ..*e
        })
        .collect();
    for r in results {
        for (acc, e) in out.iter_mut().zip(&r.history) {
            acc.loss.l_mot += e.loss.l_mot;
            acc.loss.l_det += e.loss.l_det;
            acc.loss.l_fb += e.loss.l_fb;
            acc.loss.l_se += e.loss.l_se;
            acc.loss.total += e.loss.total;
        }
    }
    out
}

pub fn trace_csv(history: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,lambda_r,l_mot,l_det,l_fb,l_se,total\n");
    for e in history {
        let l = &e.loss;
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch, e.lambda_r, l.l_mot, l.l_det, l.l_fb, l.l_se, l.total
        ));
    }
    s
}

pub fn write_trace_csv(path: &Path, history: &[EpochLoss]) -> Result<()> {
    crate::domain::io::write_text(path, &trace_csv(history))
}

/// Largest relative disagreement between `analytic` and central differences
/// of `f` at `point`: `|a − n| / max(1e-8, |a| + |n|)`.
pub fn finite_diff_check<F>(f: F, point: &[f64], analytic: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert!(eps > 0.0, "eps must be positive");
    assert_eq!(point.len(), analytic.len());
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + eps;
        let fp = f(&x);
        x[k] = orig - eps;
        let fm = f(&x);
        x[k] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[k];
        worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8));
    }
    worst
}

/// Worst relative gradient errors of each loss term on one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub l_mot: f64,
    pub l_fb: f64,
    pub l_se: f64,
    pub total: f64,
}

impl GradcheckReport {
    pub fn max(&self) -> f64 {
        self.l_mot.max(self.l_fb).max(self.l_se).max(self.total)
    }
}

/// Random 8×8 instance: heatmaps in `[0, 1)`, offsets whose landing points
/// stay inside the grid and off the integer lines where bilinear sampling
/// has kinks.
fn random_pair(rng: &mut ChaCha8Rng, grid: GroundGrid) -> (PairSupervision, PairVariables) {
    let n = grid.len();
    let (w, h) = grid.dims();
    let heat =
        |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.random_range(0.0..1.0)).collect() };
    let (x_t, x_t1, gt_t, gt_t1) = (heat(rng), heat(rng), heat(rng), heat(rng));
    let field = |rng: &mut ChaCha8Rng| -> FieldGradient {
        let mut f = FieldGradient::zeros(n);
        for i in 0..n {
            let (ix, iy) = ((i % w) as f64, (i / w) as f64);
            let lx = rng.random_range(0..w - 1) as f64 + rng.random_range(0.2..0.8);
            let ly = rng.random_range(0..h - 1) as f64 + rng.random_range(0.2..0.8);
            f.dx[i] = lx - ix;
            f.dy[i] = ly - iy;
        }
        f
    };
    let (fwd, bwd) = (field(rng), field(rng));
    let points = |rng: &mut ChaCha8Rng| -> Vec<Point> {
        (0..3)
            .map(|_| {
                Point::new(
                    rng.random_range(1.0..w as f64 - 1.0),
                    rng.random_range(1.0..h as f64 - 1.0),
                )
            })
            .collect()
    };
    let (p_t, p_t1) = (points(rng), points(rng));
    let sup = PairSupervision::new(
        Heatmap::new(grid, gt_t).expect("values in [0, 1)"),
        Heatmap::new(grid, gt_t1).expect("values in [0, 1)"),
        &p_t,
        &p_t1,
        2.0,
    )
    .expect("same grid");
    let vars = PairVariables {
        heatmap_t: x_t,
        heatmap_t1: x_t1,
        fwd,
        bwd,
    };
    (sup, vars)
}

fn flatten(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Compares every analytic gradient (`L_mot` through the reconstruction,
/// `L_fb`, `L_se` and the composite with trainable heatmaps) with central
/// differences on a random 8×8 instance.
pub fn gradcheck_random_instance(seed: u64, eps: f64) -> Result<GradcheckReport> {
    let grid = GroundGrid::new(8, 8)?;
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sup, vars) = random_pair(&mut rng, grid);
    let recon = ReconstructionConfig::new(rng.random_range(0.8..5.0), 59)?;
    let term = |weights: LossWeights, trained: bool| {
        let sup = &sup;
        let vars = &vars;
        let t = if trained {
            DetectionTerm::Trained
        } else {
            DetectionTerm::Frozen
        };
        move |x: &[f64]| -> (f64, Vec<f64>) {
            let mut v = vars.clone();
            v.fwd.dx.copy_from_slice(&x[..n]);
            v.fwd.dy.copy_from_slice(&x[n..2 * n]);
            v.bwd.dx.copy_from_slice(&x[2 * n..3 * n]);
            v.bwd.dy.copy_from_slice(&x[3 * n..4 * n]);
            if trained {
                v.heatmap_t.copy_from_slice(&x[4 * n..5 * n]);
                v.heatmap_t1.copy_from_slice(&x[5 * n..]);
            }
            let (l, g) = loss::loss_total(sup, &v, &recon, &weights, t).expect("consistent sizes");
            let mut grad = flatten(&[&g.fwd.dx, &g.fwd.dy, &g.bwd.dx, &g.bwd.dy]);
            if trained {
                grad.extend_from_slice(&g.heatmap_t);
                grad.extend_from_slice(&g.heatmap_t1);
            }
            (l.total, grad)
        }
    };
    let check = |weights: LossWeights, trained: bool| {
        let f = term(weights, trained);
        let mut x = flatten(&[&vars.fwd.dx, &vars.fwd.dy, &vars.bwd.dx, &vars.bwd.dy]);
        if trained {
            x.extend_from_slice(&vars.heatmap_t);
            x.extend_from_slice(&vars.heatmap_t1);
        }
        let (_, analytic) = f(&x);
        finite_diff_check(|p| f(p).0, &x, &analytic, eps)
    };
    let only = |lambda_mot, lambda_fb, lambda_se| LossWeights {
        lambda_mot,
        lambda_fb,
        lambda_se,
    };
    Ok(GradcheckReport {
        l_mot: check(only(1.0, 0.0, 0.0), false),
        l_fb: check(only(0.0, 1.0, 0.0), false),
        l_se: check(only(0.0, 0.0, 1.0), false),
        total: check(LossWeights::default(), true),
    })
}
