//! Exhaustive search over track decompositions, used to check the flow solver.

use crate::track::flow::{ArcKind, TrackingGraph};
use crate::{Error, Result};

pub const MAX_DETECTIONS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceSolution {
    pub total_cost: f64,
    /// Detection indices (graph order) of each path.
    pub paths: Vec<Vec<usize>>,
}

struct Costs {
    entry: Vec<f64>,
    exit: Vec<f64>,
    obs: Vec<f64>,
    trans: Vec<Vec<Option<f64>>>,
}

struct Search<'a> {
    costs: &'a Costs,
    n: usize,
    /// `pred[k]`: `None` unused, `Some(None)` path start, `Some(Some(i))`.
    pred: Vec<Option<Option<usize>>>,
    has_succ: Vec<bool>,
    best: f64,
    best_pred: Vec<Option<Option<usize>>>,
}

impl Search<'_> {
    fn run(&mut self, k: usize, cost: f64) {
        if k == self.n {
            let exits: f64 = (0..self.n)
                .filter(|&i| self.pred[i].is_some() && !self.has_succ[i])
                .map(|i| self.costs.exit[i])
                .sum();
            let total = cost + exits;
            if total < self.best {
                self.best = total;
                self.best_pred = self.pred.clone();
            }
            return;
        }
        self.run(k + 1, cost);
        let c = self.costs;
        self.pred[k] = Some(None);
        self.run(k + 1, cost + c.entry[k] + c.obs[k]);
        for i in 0..k {
            let Some(t) = c.trans[i][k] else { continue };
            if self.pred[i].is_none() || self.has_succ[i] {
                continue;
            }
            self.has_succ[i] = true;
            self.pred[k] = Some(Some(i));
            self.run(k + 1, cost + t + c.obs[k]);
            self.has_succ[i] = false;
        }
        self.pred[k] = None;
    }
}

/// Minimum-cost set of vertex-disjoint, time-increasing paths over the arcs of
/// `g`, found by enumerating every predecessor choice. The empty solution
/// (cost 0) is always a candidate.
pub fn brute_force_tracks(g: &TrackingGraph) -> Result<BruteForceSolution> {
    let n = g.detections().len();
    if n > MAX_DETECTIONS {
        return Err(Error::InstanceTooLarge(n));
    }
    let mut costs = Costs {
        entry: vec![f64::INFINITY; n],
        exit: vec![f64::INFINITY; n],
        obs: vec![f64::INFINITY; n],
        trans: vec![vec![None; n]; n],
    };
    for a in g.arcs() {
        match a.kind {
            ArcKind::Entry(k) => costs.entry[k] = a.cost,
            ArcKind::Exit(k) => costs.exit[k] = a.cost,
            ArcKind::Observation(k) => costs.obs[k] = a.cost,
            ArcKind::Transition(i, j) => costs.trans[i][j] = Some(a.cost),
        }
    }
    let mut s = Search {
        costs: &costs,
        n,
        pred: vec![None; n],
        has_succ: vec![false; n],
        best: 0.0,
        best_pred: vec![None; n],
    };
    s.run(0, 0.0);

    let mut succ = vec![None; n];
    let mut starts = Vec::new();
    for (k, p) in s.best_pred.iter().enumerate() {
        match p {
            Some(None) => starts.push(k),
            Some(Some(i)) => succ[*i] = Some(k),
            None => {}
        }
    }
    let paths = starts
        .into_iter()
        .map(|s0| {
            let mut path = vec![s0];
            while let Some(next) = succ[*path.last().unwrap()] {
                path.push(next);
            }
            path
        })
        .collect();
    Ok(BruteForceSolution {
        total_cost: s.best,
        paths,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::domain::{Detection, Point};
    use crate::track::{build_graph, solve_ssp, EdgeCostParams};

    fn det(t: i64, x: f64, c: f64) -> Detection {
        Detection::new(t, Point::new(x, 0.0), c)
    }

    #[test]
    fn empty_and_single() {
        let p = EdgeCostParams::default();
        let g = build_graph(&[], None, &p).unwrap();
        assert_eq!(brute_force_tracks(&g).unwrap().total_cost, 0.0);
        let g = build_graph(&[det(0, 1.0, 0.9)], None, &p).unwrap();
        let b = brute_force_tracks(&g).unwrap();
        assert_eq!(b.total_cost, solve_ssp(&g).total_cost);
        assert_eq!(b.paths, vec![vec![0]]);
    }

    #[test]
    fn too_large() {
        let dets: Vec<Detection> = (0..11).map(|t| det(t, 1.0, 0.9)).collect();
        let g = build_graph(&dets, None, &EdgeCostParams::default()).unwrap();
        assert!(matches!(
            brute_force_tracks(&g),
            Err(Error::InstanceTooLarge(11))
        ));
    }

    #[test]
    fn crossing_scenario_prefers_straight_links() {
        // Costs are set directly on a hand-built graph: straight links −0.9,
        // crossing links −0.5, entry/exit 0.1, observation −0.3.
        let dets = [
            det(0, 0.0, 0.3),
            det(0, 10.0, 0.3),
            det(1, 0.0, 0.3),
            det(1, 10.0, 0.3),
        ];
        let p = EdgeCostParams {
            entry_cost: 0.1,
            exit_cost: 0.1,
            max_gap: 1,
            ..EdgeCostParams::default()
        };
        let mut g = build_graph(&dets, None, &p).unwrap();
        g.set_transition_costs(|i, j| {
            if (i == 0 && j == 2) || (i == 1 && j == 3) {
                -0.9
            } else {
                -0.5
            }
        });
        let ssp = solve_ssp(&g);
        let brute = brute_force_tracks(&g).unwrap();
        assert_eq!(ssp.paths, vec![vec![0, 2], vec![1, 3]]);
        assert!((ssp.total_cost - brute.total_cost).abs() < 1e-12);
        assert!((ssp.total_cost - 2.0 * (0.1 - 0.3 - 0.9 - 0.3 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn ssp_matches_enumeration_on_random_instances() {
        for seed in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(0..=8);
            let frames = rng.random_range(1..=5);
            let dets: Vec<Detection> = (0..n)
                .map(|_| {
                    Detection::new(
                        rng.random_range(0..frames),
                        Point::new(rng.random_range(0.0..8.0), rng.random_range(0.0..8.0)),
                        rng.random_range(0.05..1.0),
                    )
                })
                .collect();
            let p = EdgeCostParams {
                entry_cost: rng.random_range(0.0..0.8),
                exit_cost: rng.random_range(0.0..0.8),
                max_gap: rng.random_range(1..=3),
                ..EdgeCostParams::default()
            };
            let g = build_graph(&dets, None, &p).unwrap();
            let ssp = solve_ssp(&g);
            let brute = brute_force_tracks(&g).unwrap();
            assert!(
                (ssp.total_cost - brute.total_cost).abs() < 1e-9,
                "seed {seed}: {} vs {}",
                ssp.total_cost,
                brute.total_cost
            );
            let mut seen = vec![false; g.detections().len()];
            for path in &ssp.paths {
                for w in path.windows(2) {
                    assert!(g.detections()[w[0]].time < g.detections()[w[1]].time);
                }
                for &k in path {
                    assert!(!seen[k]);
                    seen[k] = true;
                }
            }
        }
    }
}
