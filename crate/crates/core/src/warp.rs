//! Differentiable reconstruction of a heatmap from motion.
//!
//! Every source cell `i` carrying mass `x_i` is moved to `i + δ_i` and spread
//! over the output cells `j` with the weight `W(‖j − (i + δ_i)‖)`, where
//!
//! ```text
//! W(l) = 1 / (1 + exp(4 λ l − 10))
//! ```
//!
//! so `x̂_j = Σ_i x_i W(‖j − i − δ_i‖)`. Small `λ` spreads mass widely (easy to
//! optimize), large `λ` keeps it within half a cell (accurate).
//!
//! The production path restricts the sum to a square window of source cells
//! centered on each output cell, which bounds memory and limits representable
//! motion to `(window − 1) / 2` cells. Pairs whose weight exponent saturates
//! (`4 λ l − 10 ≥ 60`, i.e. `W < 9e-27`) are skipped. Each output cell always
//! accumulates its sources in row-major order, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

use crate::domain::{GroundGrid, Heatmap, OffsetField};
use crate::{Error, Result};

/// Exponent bound applied before `exp` in [`weight`].
pub const EXPONENT_CLAMP: f64 = 60.0;

/// Below this distance the gradient direction is undefined and taken as zero.
const DIRECTION_EPS: f64 = 1e-8;

/// `1 / (1 + exp(4 λ l − 10))`, strictly decreasing in `l`.
#[inline]
pub fn weight(l: f64, lambda_r: f64) -> f64 {
    let e = (4.0 * lambda_r * l - 10.0).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
    1.0 / (1.0 + e.exp())
}

/// `dW/dl` expressed through `W` itself.
#[inline]
pub fn weight_derivative(w: f64, lambda_r: f64) -> f64 {
    -4.0 * lambda_r * w * (1.0 - w)
}

/// Distance at which the weight exponent reaches [`EXPONENT_CLAMP`].
pub fn saturation_distance(lambda_r: f64) -> f64 {
    (EXPONENT_CLAMP + 10.0) / (4.0 * lambda_r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionConfig {
    pub lambda_r: f64,
    pub window_cells: usize,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            lambda_r: 0.8,
            window_cells: 59,
        }
    }
}

impl ReconstructionConfig {
    pub fn new(lambda_r: f64, window_cells: usize) -> Result<Self> {
        let cfg = Self {
            lambda_r,
            window_cells,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_r > 0.0 && self.lambda_r.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_r must be positive, got {}",
                self.lambda_r
            )));
        }
        if self.window_cells < 3 || self.window_cells.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "window must be odd and >= 3, got {}",
                self.window_cells
            )));
        }
        Ok(())
    }

    pub fn with_lambda(self, lambda_r: f64) -> Self {
        Self { lambda_r, ..self }
    }

    /// Half window, in cells: the largest motion the window can represent.
    pub fn half_window(&self) -> usize {
        (self.window_cells - 1) / 2
    }
}

/// Output of the windowed reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Reconstructed values; not clamped, overlapping contributions add up.
    pub values: Vec<f64>,
    /// Largest offset norm seen in the input field.
    pub max_offset_norm: f64,
}

impl Reconstruction {
    pub fn exceeds_window(&self, cfg: &ReconstructionConfig) -> bool {
        self.max_offset_norm > cfg.half_window() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpGradients {
    /// `∂L/∂x_i`; empty when not requested.
    pub d_heatmap: Vec<f64>,
    pub d_dx: Vec<f64>,
    pub d_dy: Vec<f64>,
}

/// Windowed reconstruction of `x` moved by `delta`.
pub fn reconstruct(
    x: &Heatmap,
    delta: &OffsetField,
    cfg: &ReconstructionConfig,
) -> Result<Reconstruction> {
    x.grid().check_same(delta.grid())?;
    cfg.validate()?;
    let max_offset_norm = delta.max_norm();
    if max_offset_norm > cfg.half_window() as f64 {
        log::warn!(
            "offset norm {max_offset_norm:.2} exceeds the {} cell reconstruction window",
            cfg.half_window()
        );
    }
    let values = reconstruct_slices(x.grid(), x.values(), delta.dx(), delta.dy(), cfg);
    Ok(Reconstruction {
        values,
        max_offset_norm,
    })
}

/// Brute-force reconstruction over every source/output pair, no window.
pub fn reconstruct_dense(x: &Heatmap, delta: &OffsetField, lambda_r: f64) -> Result<Vec<f64>> {
    let grid = x.grid();
    grid.check_same(delta.grid())?;
    let (w, _) = grid.dims();
    let mut out = vec![0.0; grid.len()];
    for (j, o) in out.iter_mut().enumerate() {
        let (jx, jy) = ((j % w) as f64, (j / w) as f64);
        for (i, &xi) in x.values().iter().enumerate() {
            let px = (i % w) as f64 + delta.dx()[i];
            let py = (i / w) as f64 + delta.dy()[i];
            *o += xi * weight((jx - px).hypot(jy - py), lambda_r);
        }
    }
    Ok(out)
}

/// Gradients of a scalar `L(x̂)` with respect to the heatmap and the offsets,
/// given `upstream = ∂L/∂x̂`.
pub fn reconstruct_backward(
    x: &Heatmap,
    delta: &OffsetField,
    cfg: &ReconstructionConfig,
    upstream: &[f64],
) -> Result<WarpGradients> {
    x.grid().check_same(delta.grid())?;
    x.grid().check_len(upstream.len())?;
    cfg.validate()?;
    Ok(backward_slices(
        x.grid(),
        x.values(),
        delta.dx(),
        delta.dy(),
        cfg,
        upstream,
        true,
    ))
}

#[derive(Clone, Copy)]
struct Source {
    ix: i64,
    iy: i64,
    px: f64,
    py: f64,
    mass: f64,
}

/// Closed integer range `[lo, hi]` of output coordinates along one axis that
/// can receive weight from a source at integer coordinate `i` landing at `p`.
#[inline]
fn reach(i: i64, p: f64, half: i64, cutoff: f64, n: usize) -> (i64, i64) {
    let lo = (i - half).max((p - cutoff).floor() as i64).max(0);
    let hi = (i + half).min((p + cutoff).ceil() as i64).min(n as i64 - 1);
    (lo, hi)
}

/// Windowed reconstruction on raw slices. Inputs must share `grid`'s length.
pub fn reconstruct_slices(
    grid: &GroundGrid,
    x: &[f64],
    dx: &[f64],
    dy: &[f64],
    cfg: &ReconstructionConfig,
) -> Vec<f64> {
    let (w, h) = grid.dims();
    let half = cfg.half_window() as i64;
    let cutoff = saturation_distance(cfg.lambda_r);
    let cutoff_sq = cutoff * cutoff;
    let lambda = cfg.lambda_r;

    let sources: Vec<Source> = x
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != 0.0)
        .map(|(i, &mass)| {
            let (ix, iy) = ((i % w) as i64, (i / w) as i64);
            Source {
                ix,
                iy,
                px: ix as f64 + dx[i],
                py: iy as f64 + dy[i],
                mass,
            }
        })
        .collect();

    let mut out = vec![0.0; grid.len()];
    out.par_chunks_mut(w).enumerate().for_each(|(jy, row)| {
        let jy_i = jy as i64;
        let jyf = jy as f64;
        for s in &sources {
            let (ylo, yhi) = reach(s.iy, s.py, half, cutoff, h);
            if jy_i < ylo || jy_i > yhi {
                continue;
            }
            let ddy = jyf - s.py;
            let ddy_sq = ddy * ddy;
            if ddy_sq >= cutoff_sq {
                continue;
            }
            let (xlo, xhi) = reach(s.ix, s.px, half, cutoff, w);
            for jx in xlo..=xhi {
                let ddx = jx as f64 - s.px;
                let l_sq = ddx * ddx + ddy_sq;
                if l_sq >= cutoff_sq {
                    continue;
                }
                row[jx as usize] += s.mass * weight(l_sq.sqrt(), lambda);
            }
        }
    });
    out
}

/// Windowed backward pass on raw slices.
///
/// With `heatmap_grad == false` only offset gradients are produced and source
/// cells with zero mass are skipped (their offset gradient is exactly zero).
pub fn backward_slices(
    grid: &GroundGrid,
    x: &[f64],
    dx: &[f64],
    dy: &[f64],
    cfg: &ReconstructionConfig,
    upstream: &[f64],
    heatmap_grad: bool,
) -> WarpGradients {
    let (w, h) = grid.dims();
    let half = cfg.half_window() as i64;
    let cutoff = saturation_distance(cfg.lambda_r);
    let cutoff_sq = cutoff * cutoff;
    let lambda = cfg.lambda_r;

    // (d_heatmap, d_dx, d_dy) for one source cell
    let per_source = |i: usize| -> (f64, f64, f64) {
        let mass = x[i];
        if mass == 0.0 && !heatmap_grad {
            return (0.0, 0.0, 0.0);
        }
        let (ix, iy) = ((i % w) as i64, (i / w) as i64);
        let px = ix as f64 + dx[i];
        let py = iy as f64 + dy[i];
        let (ylo, yhi) = reach(iy, py, half, cutoff, h);
        let (xlo, xhi) = reach(ix, px, half, cutoff, w);
        let (mut gx, mut gdx, mut gdy) = (0.0, 0.0, 0.0);
        for jy in ylo..=yhi {
            let ry = jy as f64 - py;
            let ry_sq = ry * ry;
            if ry_sq >= cutoff_sq {
                continue;
            }
            let row = jy as usize * w;
            for jx in xlo..=xhi {
                let rx = jx as f64 - px;
                let l_sq = rx * rx + ry_sq;
                if l_sq >= cutoff_sq {
                    continue;
                }
                let u = upstream[row + jx as usize];
                if u == 0.0 {
                    continue;
                }
                let l = l_sq.sqrt();
                let wt = weight(l, lambda);
                gx += u * wt;
                if l >= DIRECTION_EPS {
                    // ∂l/∂δ = −(j − p) / l
                    let c = u * mass * weight_derivative(wt, lambda) / l;
                    gdx -= c * rx;
                    gdy -= c * ry;
                }
            }
        }
        (gx, gdx, gdy)
    };

    let parts: Vec<(f64, f64, f64)> = (0..grid.len()).into_par_iter().map(per_source).collect();
    let mut grads = WarpGradients {
        d_heatmap: if heatmap_grad {
            Vec::with_capacity(parts.len())
        } else {
            Vec::new()
        },
        d_dx: Vec::with_capacity(parts.len()),
        d_dy: Vec::with_capacity(parts.len()),
    };
    for (gx, gdx, gdy) in parts {
        if heatmap_grad {
            grads.d_heatmap.push(gx);
        }
        grads.d_dx.push(gdx);
        grads.d_dy.push(gdy);
    }
    grads
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::domain::Point;

    fn peak(grid: GroundGrid, x: usize, y: usize) -> Heatmap {
        let mut v = vec![0.0; grid.len()];
        v[grid.index(x, y)] = 1.0;
        Heatmap::new(grid, v).unwrap()
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .fold(
                (0, f64::MIN),
                |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc },
            )
            .0
    }

    #[test]
    fn weight_anchor_values() {
        assert_eq!(weight(0.5, 5.0), 0.5);
        let w0 = 1.0 / (1.0 + (-10.0f64).exp());
        for lambda in [0.1, 0.8, 5.0, 30.0] {
            assert!((weight(0.0, lambda) - w0).abs() < 1e-12);
        }
        // 1 / (1 + e^-3.6)
        assert!((weight(2.0, 0.8) - 0.973403006).abs() < 1e-8);
        assert!(weight(1e6, 5.0) < 1e-25);
        assert!(weight(1e300, 5.0).is_finite());
    }

    #[test]
    fn weight_is_strictly_decreasing_before_saturation() {
        for lambda in [0.8, 2.0, 5.0] {
            let mut prev = weight(0.0, lambda);
            let mut l = 0.01;
            while l < saturation_distance(lambda) {
                let cur = weight(l, lambda);
                assert!(cur < prev, "lambda {lambda} l {l}");
                prev = cur;
                l += 0.01;
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(ReconstructionConfig::new(0.8, 59).is_ok());
        assert!(ReconstructionConfig::new(0.0, 59).is_err());
        assert!(ReconstructionConfig::new(0.8, 58).is_err());
        assert!(ReconstructionConfig::new(0.8, 1).is_err());
        assert_eq!(ReconstructionConfig::default().half_window(), 29);
    }

    #[test]
    fn zero_heatmap_reconstructs_to_zero() {
        let g = GroundGrid::new(9, 7).unwrap();
        let delta = OffsetField::constant(g, Point::new(1.3, -0.7));
        let out =
            reconstruct(&Heatmap::zeros(g), &delta, &ReconstructionConfig::default()).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
        let cfg3 = ReconstructionConfig::new(5.0, 3).unwrap();
        let out = reconstruct(&Heatmap::zeros(g), &delta, &cfg3).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
        assert!(reconstruct_dense(&Heatmap::zeros(g), &delta, 0.8)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn single_peak_moves_by_its_offset() {
        let g = GroundGrid::new(16, 16).unwrap();
        let x = peak(g, 5, 5);
        let delta = OffsetField::constant(g, Point::new(2.0, 1.0));
        let dense = reconstruct_dense(&x, &delta, 5.0).unwrap();
        assert_eq!(argmax(&dense), g.index(7, 6));
        assert!((dense[g.index(7, 6)] - 0.9999546).abs() < 1e-7);
        let w1 = 1.0 / (1.0 + 10.0f64.exp());
        assert!((dense[g.index(8, 6)] - w1).abs() < 1e-12);
        let cfg = ReconstructionConfig::new(5.0, 59).unwrap();
        let windowed = reconstruct(&x, &delta, &cfg).unwrap();
        for (a, b) in windowed.values.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn coincident_peaks_superpose() {
        let g = GroundGrid::new(12, 12).unwrap();
        let mut v = vec![0.0; g.len()];
        v[g.index(3, 4)] = 1.0;
        v[g.index(5, 4)] = 1.0;
        let mut dx = vec![0.0; g.len()];
        dx[g.index(3, 4)] = 2.0;
        let delta = OffsetField::new(g, dx, vec![0.0; g.len()]).unwrap();
        let x = Heatmap::new(g, v).unwrap();
        let out = reconstruct(&x, &delta, &ReconstructionConfig::new(5.0, 59).unwrap()).unwrap();
        assert!((out.values[g.index(5, 4)] - 2.0 * weight(0.0, 5.0)).abs() < 1e-12);
    }

    #[test]
    fn narrow_window_keeps_isolated_peak() {
        let g = GroundGrid::new(8, 8).unwrap();
        let x = peak(g, 3, 4);
        let cfg = ReconstructionConfig::new(5.0, 3).unwrap();
        let out = reconstruct(&x, &OffsetField::zeros(g), &cfg).unwrap();
        for (i, (&o, &xi)) in out.values.iter().zip(x.values()).enumerate() {
            if xi > 0.0 {
                assert!((o - xi).abs() < 5e-5, "cell {i}");
            } else {
                assert!(o < 5e-5, "cell {i}");
            }
        }
    }

    #[test]
    fn windowed_matches_dense_for_bounded_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = GroundGrid::new(20, 17).unwrap();
        for lambda in [0.8, 2.0, 5.0] {
            let x: Vec<f64> = (0..g.len()).map(|_| rng.random_range(0.0..1.0)).collect();
            let dx: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-6.0..6.0)).collect();
            let dy: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-6.0..6.0)).collect();
            let x = Heatmap::new(g, x).unwrap();
            let delta = OffsetField::new(g, dx, dy).unwrap();
            let dense = reconstruct_dense(&x, &delta, lambda).unwrap();
            let cfg = ReconstructionConfig::new(lambda, 59).unwrap();
            let win = reconstruct(&x, &delta, &cfg).unwrap();
            for (a, b) in win.values.iter().zip(&dense) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = GroundGrid::new(24, 24).unwrap();
        let x: Vec<f64> = (0..g.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let dx: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let dy: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let up: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cfg = ReconstructionConfig::new(1.3, 15).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    (
                        reconstruct_slices(&g, &x, &dx, &dy, &cfg),
                        backward_slices(&g, &x, &dx, &dy, &cfg, &up, true),
                    )
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let g = GroundGrid::new(6, 6).unwrap();
        let x = peak(g, 2, 2);
        let delta = OffsetField::constant(g, Point::new(0.3, 0.4));
        let grads =
            reconstruct_backward(&x, &delta, &ReconstructionConfig::default(), &vec![0.0; 36])
                .unwrap();
        assert!(grads
            .d_heatmap
            .iter()
            .chain(&grads.d_dx)
            .chain(&grads.d_dy)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = GroundGrid::new(6, 6).unwrap();
        let b = GroundGrid::new(6, 5).unwrap();
        let cfg = ReconstructionConfig::default();
        assert!(matches!(
            reconstruct(&Heatmap::zeros(a), &OffsetField::zeros(b), &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(reconstruct_dense(&Heatmap::zeros(a), &OffsetField::zeros(b), 1.0).is_err());
        assert!(
            reconstruct_backward(&Heatmap::zeros(a), &OffsetField::zeros(a), &cfg, &[0.0]).is_err()
        );
    }

    #[test]
    fn oversized_motion_is_reported() {
        let g = GroundGrid::new(8, 8).unwrap();
        let cfg = ReconstructionConfig::new(5.0, 3).unwrap();
        let out = reconstruct(
            &peak(g, 1, 1),
            &OffsetField::constant(g, Point::new(2.0, 0.0)),
            &cfg,
        )
        .unwrap();
        assert!(out.exceeds_window(&cfg));
        assert_eq!(out.max_offset_norm, 2.0);
    }
}
