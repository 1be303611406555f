//! Loss terms for learning motion from detections.
//!
//! * `L_mot`: squared error between the heatmap reconstructed from motion and
//!   the next frame's target. The target is passed through the same operator
//!   with zero motion, so both sides carry the same blur for the current `λ`.
//! * `L_det`: squared error between predicted and ground-truth heatmaps.
//! * `L_fb`: the backward field sampled at the forward landing point should
//!   cancel the forward offset.
//! * `L_se`: offsets within the footprint of a ground-truth peak should agree
//!   (standard deviation of the offset vectors, averaged over peaks).
//!
//! The composite is `λ_mot L_mot + L_det + λ_fb L_fb + λ_se L_se`.

use crate::domain::{GroundGrid, Heatmap, OffsetField, Point};
use crate::warp::{self, ReconstructionConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// 1 for the full loss; 0 removes the motion consistency term.
    pub lambda_mot: f64,
    pub lambda_fb: f64,
    pub lambda_se: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_mot: 1.0,
            lambda_fb: 0.05,
            lambda_se: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_mot", self.lambda_mot),
            ("lambda_fb", self.lambda_fb),
            ("lambda_se", self.lambda_se),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Annealing of the reconstruction decay parameter, stepped once per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSchedule {
    pub init: f64,
    pub increment: f64,
    pub cap: f64,
    pub current: f64,
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        Self::new(0.8, 0.08, 5.0)
    }
}

impl LambdaSchedule {
    pub fn new(init: f64, increment: f64, cap: f64) -> Self {
        Self {
            init,
            increment,
            cap,
            current: init,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.init > 0.0 && self.init <= self.cap && self.increment >= 0.0) {
            return Err(Error::Config(format!(
                "schedule needs 0 < init <= cap and increment >= 0 (init {}, increment {}, cap {})",
                self.init, self.increment, self.cap
            )));
        }
        Ok(())
    }

    pub fn step(self) -> Self {
        schedule_step(self)
    }
}

pub fn schedule_step(s: LambdaSchedule) -> LambdaSchedule {
    LambdaSchedule {
        current: (s.current + s.increment).min(s.cap),
        ..s
    }
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `Σ (x − x_gt)²`.
pub fn loss_det(x: &Heatmap, gt: &Heatmap) -> Result<f64> {
    x.grid().check_same(gt.grid())?;
    Ok(squared_error(x.values(), gt.values()))
}

/// The target heatmap passed through the reconstruction with zero motion.
pub fn smooth_target(gt: &Heatmap, cfg: &ReconstructionConfig) -> Result<Vec<f64>> {
    Ok(warp::reconstruct(gt, &OffsetField::zeros(*gt.grid()), cfg)?.values)
}

/// `Σ (x̂ − smooth(x_gt))²` for a reconstruction `x_hat`.
pub fn loss_mot(x_hat: &[f64], gt: &Heatmap, cfg: &ReconstructionConfig) -> Result<f64> {
    gt.grid().check_len(x_hat.len())?;
    Ok(squared_error(x_hat, &smooth_target(gt, cfg)?))
}

/// Gradient of a loss with respect to an offset field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGradient {
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl FieldGradient {
    pub fn zeros(n: usize) -> Self {
        Self {
            dx: vec![0.0; n],
            dy: vec![0.0; n],
        }
    }
}

/// `Σ_i ‖δ_fwd(i) + δ_bwd(i + δ_fwd(i))‖²` with bilinear, border-clamped
/// sampling of the backward field.
pub fn loss_fb(fwd: &OffsetField, bwd: &OffsetField) -> Result<f64> {
    fwd.grid().check_same(bwd.grid())?;
    Ok(fb_slices(
        fwd.grid(),
        fwd.dx(),
        fwd.dy(),
        bwd.dx(),
        bwd.dy(),
        None,
    ))
}

/// [`loss_fb`] with gradients for the forward and backward fields.
pub fn loss_fb_grad(
    fwd: &OffsetField,
    bwd: &OffsetField,
) -> Result<(f64, FieldGradient, FieldGradient)> {
    fwd.grid().check_same(bwd.grid())?;
    let n = fwd.grid().len();
    let mut gf = FieldGradient::zeros(n);
    let mut gb = FieldGradient::zeros(n);
    let value = fb_slices(
        fwd.grid(),
        fwd.dx(),
        fwd.dy(),
        bwd.dx(),
        bwd.dy(),
        Some((&mut gf, &mut gb, 1.0)),
    );
    Ok((value, gf, gb))
}

/// Forward/backward consistency on raw slices. When `grads` is given,
/// `scale * ∂L` is accumulated into the two gradient buffers.
pub(crate) fn fb_slices(
    grid: &GroundGrid,
    fdx: &[f64],
    fdy: &[f64],
    bdx: &[f64],
    bdy: &[f64],
    mut grads: Option<(&mut FieldGradient, &mut FieldGradient, f64)>,
) -> f64 {
    let w = grid.width();
    let mut total = 0.0;
    for i in 0..grid.len() {
        let px = (i % w) as f64 + fdx[i];
        let py = (i / w) as f64 + fdy[i];
        let s = grid.bilinear_stencil(px, py);
        let rx = fdx[i] + s.apply(bdx);
        let ry = fdy[i] + s.apply(bdy);
        total += rx * rx + ry * ry;
        if let Some((gf, gb, scale)) = grads.as_mut() {
            let (ax, ay) = (2.0 * *scale * rx, 2.0 * *scale * ry);
            // d r / d δ_fwd = I + J, J = Jacobian of the sampled backward field
            let (bx_x, bx_y) = s.gradient(bdx);
            let (by_x, by_y) = s.gradient(bdy);
            gf.dx[i] += ax * (1.0 + bx_x) + ay * by_x;
            gf.dy[i] += ax * bx_y + ay * (1.0 + by_y);
            for k in 0..4 {
                gb.dx[s.idx[k]] += ax * s.w[k];
                gb.dy[s.idx[k]] += ay * s.w[k];
            }
        }
    }
    total
}

/// Cells whose centers lie within `radius` of `p`, row-major.
pub fn neighborhood(grid: &GroundGrid, p: Point, radius: f64) -> Vec<usize> {
    let (w, h) = grid.dims();
    let x0 = (p.x - radius).ceil().max(0.0) as usize;
    let y0 = (p.y - radius).ceil().max(0.0) as usize;
    let x1 = ((p.x + radius).floor() as i64).min(w as i64 - 1);
    let y1 = ((p.y + radius).floor() as i64).min(h as i64 - 1);
    let mut out = Vec::new();
    if x1 < 0 || y1 < 0 {
        return out;
    }
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            if (x as f64 - p.x).hypot(y as f64 - p.y) <= radius {
                out.push(grid.index(x, y));
            }
        }
    }
    out
}

/// `(1/N) Σ_p sqrt(var(dx) + var(dy))` over the neighborhood of each point,
/// with population variance. Zero when there are no points.
pub fn loss_se(delta: &OffsetField, points: &[Point], radius: f64) -> f64 {
    let hoods: Vec<Vec<usize>> = points
        .iter()
        .map(|&p| neighborhood(delta.grid(), p, radius))
        .collect();
    se_slices(delta.dx(), delta.dy(), &hoods, None)
}

pub fn loss_se_grad(delta: &OffsetField, points: &[Point], radius: f64) -> (f64, FieldGradient) {
    let hoods: Vec<Vec<usize>> = points
        .iter()
        .map(|&p| neighborhood(delta.grid(), p, radius))
        .collect();
    let mut g = FieldGradient::zeros(delta.grid().len());
    let v = se_slices(delta.dx(), delta.dy(), &hoods, Some((&mut g, 1.0)));
    (v, g)
}

pub(crate) fn se_slices(
    dx: &[f64],
    dy: &[f64],
    hoods: &[Vec<usize>],
    mut grad: Option<(&mut FieldGradient, f64)>,
) -> f64 {
    if hoods.is_empty() {
        return 0.0;
    }
    let n_points = hoods.len() as f64;
    let mut total = 0.0;
    for hood in hoods.iter().filter(|h| !h.is_empty()) {
        let n = hood.len() as f64;
        let mx = hood.iter().map(|&i| dx[i]).sum::<f64>() / n;
        let my = hood.iter().map(|&i| dy[i]).sum::<f64>() / n;
        let var = hood
            .iter()
            .map(|&i| (dx[i] - mx).powi(2) + (dy[i] - my).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        total += std;
        if let Some((g, scale)) = grad.as_mut() {
            if std > 0.0 {
                let c = *scale / (n_points * n * std);
                for &i in hood {
                    g.dx[i] += c * (dx[i] - mx);
                    g.dy[i] += c * (dy[i] - my);
                }
            }
        }
    }
    total / n_points
}

/// Whether the heatmaps are optimization variables (`L_det` active) or fixed
/// inputs from a frozen detector (`L_det` omitted).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionTerm {
    Frozen,
    Trained,
}

/// Fixed data of one frame pair `(t, t+1)`.
#[derive(Debug, Clone)]
pub struct PairSupervision {
    pub target_t: Heatmap,
    pub target_t1: Heatmap,
    /// Spatial-extent neighborhoods around the points at `t` and `t+1`.
    pub hoods_t: Vec<Vec<usize>>,
    pub hoods_t1: Vec<Vec<usize>>,
}

impl PairSupervision {
    pub fn new(
        target_t: Heatmap,
        target_t1: Heatmap,
        points_t: &[Point],
        points_t1: &[Point],
        radius: f64,
    ) -> Result<Self> {
        target_t.grid().check_same(target_t1.grid())?;
        let grid = *target_t.grid();
        Ok(Self {
            hoods_t: points_t
                .iter()
                .map(|&p| neighborhood(&grid, p, radius))
                .collect(),
            hoods_t1: points_t1
                .iter()
                .map(|&p| neighborhood(&grid, p, radius))
                .collect(),
            target_t,
            target_t1,
        })
    }

    pub fn grid(&self) -> &GroundGrid {
        self.target_t.grid()
    }
}

/// Free variables of one frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairVariables {
    pub heatmap_t: Vec<f64>,
    pub heatmap_t1: Vec<f64>,
    pub fwd: FieldGradient,
    pub bwd: FieldGradient,
}

impl PairVariables {
    pub fn fwd_field(&self, grid: GroundGrid) -> Result<OffsetField> {
        OffsetField::new(grid, self.fwd.dx.clone(), self.fwd.dy.clone())
    }

    pub fn bwd_field(&self, grid: GroundGrid) -> Result<OffsetField> {
        OffsetField::new(grid, self.bwd.dx.clone(), self.bwd.dy.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_mot: f64,
    pub l_det: f64,
    pub l_fb: f64,
    pub l_se: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    /// Empty when the detection term is frozen.
    pub heatmap_t: Vec<f64>,
    pub heatmap_t1: Vec<f64>,
    pub fwd: FieldGradient,
    pub bwd: FieldGradient,
}

/// Zero-motion smoothed targets `(smooth(target_t), smooth(target_t1))`.
pub fn smoothed_targets(sup: &PairSupervision, cfg: &ReconstructionConfig) -> (Vec<f64>, Vec<f64>) {
    let grid = sup.grid();
    let zeros = vec![0.0; grid.len()];
    (
        warp::reconstruct_slices(grid, sup.target_t.values(), &zeros, &zeros, cfg),
        warp::reconstruct_slices(grid, sup.target_t1.values(), &zeros, &zeros, cfg),
    )
}

/// Composite loss of a frame pair and its gradient with respect to every free
/// variable. The forward field warps `heatmap_t` towards `target_t1`, the
/// backward field warps `heatmap_t1` towards `target_t`.
pub fn loss_total(
    sup: &PairSupervision,
    vars: &PairVariables,
    cfg: &ReconstructionConfig,
    weights: &LossWeights,
    term: DetectionTerm,
) -> Result<(LossBreakdown, PairGradients)> {
    let targets = smoothed_targets(sup, cfg);
    loss_total_with_targets(sup, vars, cfg, weights, term, &targets)
}

/// [`loss_total`] with precomputed smoothed targets.
pub fn loss_total_with_targets(
    sup: &PairSupervision,
    vars: &PairVariables,
    cfg: &ReconstructionConfig,
    weights: &LossWeights,
    term: DetectionTerm,
    (smooth_t, smooth_t1): &(Vec<f64>, Vec<f64>),
) -> Result<(LossBreakdown, PairGradients)> {
    let grid = *sup.grid();
    let n = grid.len();
    for len in [
        vars.heatmap_t.len(),
        vars.heatmap_t1.len(),
        vars.fwd.dx.len(),
        vars.fwd.dy.len(),
        vars.bwd.dx.len(),
        vars.bwd.dy.len(),
    ] {
        grid.check_len(len)?;
    }
    let trained = term == DetectionTerm::Trained;
    let mut out = LossBreakdown::default();
    let mut grads = PairGradients {
        heatmap_t: if trained { vec![0.0; n] } else { Vec::new() },
        heatmap_t1: if trained { vec![0.0; n] } else { Vec::new() },
        fwd: FieldGradient::zeros(n),
        bwd: FieldGradient::zeros(n),
    };

    // motion consistency, both directions
    for (heatmap, field, target, grad_field, grad_heat) in [
        (
            &vars.heatmap_t,
            &vars.fwd,
            smooth_t1,
            &mut grads.fwd,
            &mut grads.heatmap_t,
        ),
        (
            &vars.heatmap_t1,
            &vars.bwd,
            smooth_t,
            &mut grads.bwd,
            &mut grads.heatmap_t1,
        ),
    ] {
        let recon = warp::reconstruct_slices(&grid, heatmap, &field.dx, &field.dy, cfg);
        out.l_mot += squared_error(&recon, target);
        if weights.lambda_mot == 0.0 {
            continue;
        }
        let upstream: Vec<f64> = recon
            .iter()
            .zip(target)
            .map(|(r, t)| 2.0 * weights.lambda_mot * (r - t))
            .collect();
        let g = warp::backward_slices(
            &grid, heatmap, &field.dx, &field.dy, cfg, &upstream, trained,
        );
        add_into(&mut grad_field.dx, &g.d_dx);
        add_into(&mut grad_field.dy, &g.d_dy);
        if trained {
            add_into(grad_heat, &g.d_heatmap);
        }
    }

    if trained {
        for (heatmap, target, grad) in [
            (&vars.heatmap_t, sup.target_t.values(), &mut grads.heatmap_t),
            (
                &vars.heatmap_t1,
                sup.target_t1.values(),
                &mut grads.heatmap_t1,
            ),
        ] {
            out.l_det += squared_error(heatmap, target);
            for ((g, x), t) in grad.iter_mut().zip(heatmap).zip(target) {
                *g += 2.0 * (x - t);
            }
        }
    }

    out.l_fb = fb_slices(
        &grid,
        &vars.fwd.dx,
        &vars.fwd.dy,
        &vars.bwd.dx,
        &vars.bwd.dy,
        (weights.lambda_fb != 0.0).then_some((&mut grads.fwd, &mut grads.bwd, weights.lambda_fb)),
    );

    let se_fwd = se_slices(
        &vars.fwd.dx,
        &vars.fwd.dy,
        &sup.hoods_t,
        (weights.lambda_se != 0.0).then_some((&mut grads.fwd, weights.lambda_se)),
    );
    let se_bwd = se_slices(
        &vars.bwd.dx,
        &vars.bwd.dy,
        &sup.hoods_t1,
        (weights.lambda_se != 0.0).then_some((&mut grads.bwd, weights.lambda_se)),
    );
    out.l_se = se_fwd + se_bwd;

    out.total = weights.lambda_mot * out.l_mot
        + out.l_det
        + weights.lambda_fb * out.l_fb
        + weights.lambda_se * out.l_se;
    Ok((out, grads))
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}
