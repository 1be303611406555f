//! Data association.
//!
//! * [`flow`]: min-cost-flow tracking over all detections of a sequence with
//!   motion-aware transition costs, solved by successive shortest paths.
//! * [`brute`]: exhaustive enumeration oracle for small flow instances.
//! * [`assign`]: nearest-neighbour and Hungarian frame-to-frame matching.
//! * [`kalman`]: constant-velocity Kalman filter.
//! * [`online`]: two-stage (high then low confidence) online association with
//!   ground-plane box IoU and a pluggable motion model.

pub mod assign;
pub mod brute;
pub mod flow;
pub mod kalman;
pub mod online;

pub use assign::{associate_hungarian, associate_nearest, solve_assignment};
pub use brute::brute_force_tracks;
pub use flow::{build_graph, solve_ssp, ArcKind, SspSolution, TrackingGraph};
pub use kalman::{kalman_predict, kalman_update, KalmanState};
pub use online::{
    associate_two_stage, run_two_stage, MotionSource, TwoStageParams, TwoStageTracker,
};

use crate::domain::Point;
use crate::{Error, Result};

/// Parameters of the transition cost between two detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCostParams {
    pub sigma_t: f64,
    pub sigma_d: f64,
    pub sigma_m: f64,
    /// Largest frame gap bridged by a transition arc.
    pub max_gap: usize,
    pub entry_cost: f64,
    pub exit_cost: f64,
    /// Observation arcs cost `-obs_cost_scale * confidence`.
    pub obs_cost_scale: f64,
    /// Transition arcs are only built when `d(i, j) <= gap * max_speed_cells`.
    /// Every transition cost is negative, so without a gate the optimum links
    /// track fragments however far apart they are.
    pub max_speed_cells: f64,
}

impl Default for EdgeCostParams {
    fn default() -> Self {
        Self {
            sigma_t: 0.5,
            sigma_d: 0.15,
            sigma_m: 0.15,
            max_gap: 3,
            entry_cost: 0.2,
            exit_cost: 0.2,
            obs_cost_scale: 1.0,
            max_speed_cells: f64::INFINITY,
        }
    }
}

impl EdgeCostParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_gap == 0 {
            return Err(Error::Config("max_gap must be >= 1".into()));
        }
        for (name, v) in [
            ("sigma_t", self.sigma_t),
            ("sigma_d", self.sigma_d),
            ("sigma_m", self.sigma_m),
            ("entry_cost", self.entry_cost),
            ("exit_cost", self.exit_cost),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.obs_cost_scale > 0.0) {
            return Err(Error::Config("obs_cost_scale must be positive".into()));
        }
        if !(self.max_speed_cells > 0.0) {
            return Err(Error::Config("max_speed_cells must be positive".into()));
        }
        Ok(())
    }
}

/// Transition cost from detection `i` at `t1` to detection `j` at `t2`:
///
/// ```text
/// −exp(−σ_t (g − 1)) · exp(−σ_d d(i, j)) · exp(−σ_m d(i, j + g δ_j))
/// ```
///
/// with `g = t2 − t1` and `δ_j` the backward (t2 → t2−1) offset at `j`.
pub fn edge_cost(
    i: Point,
    j: Point,
    t1: i64,
    t2: i64,
    delta_bwd_at_j: Point,
    p: &EdgeCostParams,
) -> Result<f64> {
    let gap = t2 - t1;
    if gap < 1 || gap > p.max_gap as i64 {
        return Err(Error::GapViolation {
            gap,
            max_gap: p.max_gap,
        });
    }
    let g = gap as f64;
    let residual = i.dist(j.add(delta_bwd_at_j.scale(g)));
    Ok(-(-p.sigma_t * (g - 1.0)).exp()
        * (-p.sigma_d * i.dist(j)).exp()
        * (-p.sigma_m * residual).exp())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn perfect_motion_costs_minus_one() {
        let p = EdgeCostParams::default();
        let c = edge_cost(
            Point::new(3.0, 3.0),
            Point::new(3.0, 3.0),
            4,
            5,
            Point::default(),
            &p,
        )
        .unwrap();
        assert_eq!(c, -1.0);
    }

    #[test]
    fn disabled_motion_term() {
        let p = EdgeCostParams {
            sigma_m: 0.0,
            ..EdgeCostParams::default()
        };
        let (i, j) = (Point::new(1.0, 2.0), Point::new(4.0, 6.0));
        let c = edge_cost(i, j, 0, 2, Point::new(7.0, -3.0), &p).unwrap();
        let expected = -(-0.5f64).exp() * (-0.15f64 * 5.0).exp();
        assert!((c - expected).abs() < 1e-15);
    }

    #[test]
    fn scalar_example() {
        let p = EdgeCostParams {
            sigma_t: 0.5,
            sigma_d: 0.1,
            sigma_m: 0.1,
            ..EdgeCostParams::default()
        };
        // d(i, j) = 4; j + 2δ lands 1 cell from i
        let i = Point::new(0.0, 0.0);
        let j = Point::new(4.0, 0.0);
        let delta = Point::new(-1.5, 0.0);
        let c = edge_cost(i, j, 3, 5, delta, &p).unwrap();
        assert!((c + (-1.0f64).exp()).abs() < 1e-12);
        assert!((c + 0.3679).abs() < 1e-4);
    }

    #[test]
    fn gap_violations() {
        let p = EdgeCostParams::default();
        let z = Point::default();
        assert!(matches!(
            edge_cost(z, z, 2, 2, z, &p),
            Err(Error::GapViolation { gap: 0, .. })
        ));
        assert!(edge_cost(z, z, 2, 6, z, &p).is_err());
        assert!(edge_cost(z, z, 5, 2, z, &p).is_err());
    }

    proptest! {
        #[test]
        fn better_motion_never_weakens_the_link(
            ix in 0.0f64..20.0, iy in 0.0f64..20.0, jx in 0.0f64..20.0, jy in 0.0f64..20.0,
            r1 in 0.0f64..10.0, r2 in 0.0f64..10.0, gap in 1i64..4,
        ) {
            let p = EdgeCostParams::default();
            let (i, j) = (Point::new(ix, iy), Point::new(jx, jy));
            // offsets whose extrapolation lands r1 / r2 cells from i along x
            let g = gap as f64;
            let d1 = Point::new((ix + r1 - jx) / g, (iy - jy) / g);
            let d2 = Point::new((ix + r2 - jx) / g, (iy - jy) / g);
            let c1 = edge_cost(i, j, 0, gap, d1, &p).unwrap();
            let c2 = edge_cost(i, j, 0, gap, d2, &p).unwrap();
            if r1 <= r2 {
                prop_assert!(c1.abs() >= c2.abs() - 1e-15);
            } else {
                prop_assert!(c1.abs() <= c2.abs() + 1e-15);
            }
        }
    }
}
