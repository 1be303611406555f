//! Tracking and motion metrics.
//!
//! CLEAR MOT protocol: in every frame, a ground-truth object keeps its most
//! recent hypothesis if that hypothesis is present and within the distance
//! threshold; the remaining objects and hypotheses are matched by a
//! minimum-distance assignment. A new match whose hypothesis differs from the
//! object's previous one is an identity switch. MOTP is the mean matched
//! distance in cells.
//!
//! Identity metrics use a single global one-to-one matching between ground
//! truth and predicted trajectories that maximizes the number of frames in
//! which matched pairs lie within the threshold.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::domain::{OffsetField, Point, Trajectory};
use crate::sim::SceneTruth;
use crate::track::solve_assignment;
use crate::{Error, Result};

pub const DEFAULT_DIST_THRESHOLD: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MotCounts {
    pub gt: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub idsw: usize,
    pub matches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    pub mota: f64,
    pub motp: f64,
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub counts: MotCounts,
}

impl MotReport {
    /// A report whose scores are all NaN (no ground truth).
    pub fn undefined(counts: MotCounts) -> Self {
        Self {
            mota: f64::NAN,
            motp: f64::NAN,
            idf1: f64::NAN,
            idp: f64::NAN,
            idr: f64::NAN,
            counts,
        }
    }

    /// JSON with non-finite scores written as `null`.
    pub fn to_json(&self) -> String {
        to_json_nan_null(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetReport {
    pub l1: f64,
    pub angle_deg: f64,
    pub norm_err: f64,
}

impl OffsetReport {
    pub fn to_json(&self) -> String {
        to_json_nan_null(self)
    }
}

fn to_json_nan_null<T: Serialize>(value: &T) -> String {
    // serde_json already maps non-finite floats to null
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

fn by_frame(tracks: &[Trajectory]) -> BTreeMap<i64, Vec<(usize, Point)>> {
    let mut frames: BTreeMap<i64, Vec<(usize, Point)>> = BTreeMap::new();
    for (k, t) in tracks.iter().enumerate() {
        for p in t.points() {
            frames.entry(p.time).or_default().push((k, p.pos));
        }
    }
    frames
}

pub fn clear_mot(pred: &[Trajectory], gt: &[Trajectory], dist_threshold: f64) -> Result<MotReport> {
    if !(dist_threshold > 0.0) {
        return Err(Error::Config(format!(
            "distance threshold must be positive, got {dist_threshold}"
        )));
    }
    let gt_frames = by_frame(gt);
    let pred_frames = by_frame(pred);
    let times: BTreeSet<i64> = gt_frames
        .keys()
        .chain(pred_frames.keys())
        .copied()
        .collect();
    let empty = Vec::new();

    let mut counts = MotCounts::default();
    let mut dist_sum = 0.0;
    let mut last_match: HashMap<usize, usize> = HashMap::new();
    for t in times {
        let objs = gt_frames.get(&t).unwrap_or(&empty);
        let hyps = pred_frames.get(&t).unwrap_or(&empty);
        counts.gt += objs.len();
        let mut obj_done = vec![false; objs.len()];
        let mut hyp_done = vec![false; hyps.len()];

        for (oi, &(g, gp)) in objs.iter().enumerate() {
            let Some(&h) = last_match.get(&g) else {
                continue;
            };
            if let Some(hi) = hyps.iter().position(|&(k, _)| k == h) {
                let d = gp.dist(hyps[hi].1);
                if !hyp_done[hi] && d <= dist_threshold {
                    obj_done[oi] = true;
                    hyp_done[hi] = true;
                    counts.matches += 1;
                    dist_sum += d;
                }
            }
        }

        let free_objs: Vec<usize> = (0..objs.len()).filter(|&i| !obj_done[i]).collect();
        let free_hyps: Vec<usize> = (0..hyps.len()).filter(|&i| !hyp_done[i]).collect();
        let cost: Vec<Vec<f64>> = free_objs
            .iter()
            .map(|&o| {
                free_hyps
                    .iter()
                    .map(|&h| objs[o].1.dist(hyps[h].1))
                    .collect()
            })
            .collect();
        for (r, c) in solve_assignment(&cost, dist_threshold, None) {
            let (oi, hi) = (free_objs[r], free_hyps[c]);
            let (g, h) = (objs[oi].0, hyps[hi].0);
            obj_done[oi] = true;
            hyp_done[hi] = true;
            counts.matches += 1;
            dist_sum += cost[r][c];
            if last_match.get(&g).is_some_and(|&prev| prev != h) {
                counts.idsw += 1;
            }
            last_match.insert(g, h);
        }
        counts.fn_ += obj_done.iter().filter(|d| !**d).count();
        counts.fp += hyp_done.iter().filter(|d| !**d).count();
    }

    if counts.gt == 0 {
        return Err(Error::UndefinedMota);
    }
    let (idtp, idfp, idfn) = identity_counts(pred, gt, dist_threshold);
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(MotReport {
        mota: 1.0 - (counts.fn_ + counts.fp + counts.idsw) as f64 / counts.gt as f64,
        motp: if counts.matches > 0 {
            dist_sum / counts.matches as f64
        } else {
            f64::NAN
        },
        idf1: ratio(2.0 * idtp, 2.0 * idtp + idfp + idfn),
        idp: ratio(idtp, idtp + idfp),
        idr: ratio(idtp, idtp + idfn),
        counts,
    })
}

/// `(IDTP, IDFP, IDFN)` under the best global trajectory matching.
fn identity_counts(pred: &[Trajectory], gt: &[Trajectory], thr: f64) -> (f64, f64, f64) {
    let total_gt: usize = gt.iter().map(Trajectory::len).sum();
    let total_pred: usize = pred.iter().map(Trajectory::len).sum();
    let overlap: Vec<Vec<f64>> = gt
        .iter()
        .map(|g| {
            pred.iter()
                .map(|p| {
                    g.points()
                        .iter()
                        .filter(|gp| p.at(gp.time).is_some_and(|pp| pp.dist(gp.pos) <= thr))
                        .count() as f64
                })
                .collect()
        })
        .collect();
    let cost: Vec<Vec<f64>> = overlap
        .iter()
        .map(|r| {
            r.iter()
                .map(|&m| if m > 0.0 { -m } else { f64::INFINITY })
                .collect()
        })
        .collect();
    let idtp: f64 = solve_assignment(&cost, 0.0, Some(0.0))
        .into_iter()
        .map(|(i, j)| overlap[i][j])
        .sum();
    (idtp, total_pred as f64 - idtp, total_gt as f64 - idtp)
}

/// Offset errors over explicit `(cell, true motion)` pairs.
pub fn offset_error_cells(pred: &OffsetField, cells: &[(usize, Point)]) -> Result<OffsetReport> {
    offset_error_pooled(&[(pred, cells)])
}

/// Offset errors of the forward field of pair `pair` against the scene's
/// ground truth, over the cells occupied at frame `pair`.
pub fn offset_error(pred: &OffsetField, truth: &SceneTruth, pair: usize) -> Result<OffsetReport> {
    pred.grid().check_same(&truth.grid)?;
    if pair >= truth.num_pairs() {
        return Err(Error::LengthMismatch {
            expected: truth.num_pairs(),
            actual: pair + 1,
        });
    }
    offset_error_cells(pred, &truth.gt_cells(pair))
}

/// Offset errors pooled over several fields: every listed cell counts once.
pub fn offset_error_pooled(items: &[(&OffsetField, &[(usize, Point)])]) -> Result<OffsetReport> {
    let mut n = 0usize;
    let mut l1 = 0.0;
    let mut moving = 0usize;
    let mut angle = 0.0;
    let mut norm_err = 0.0;
    for (pred, cells) in items {
        for &(cell, g) in cells.iter() {
            let p = pred.at(cell);
            n += 1;
            l1 += ((p.x - g.x).abs() + (p.y - g.y).abs()) / 2.0;
            if g.norm() > 1e-6 {
                moving += 1;
                angle += angle_between(p, g);
                norm_err += (p.norm() - g.norm()).abs();
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyReport);
    }
    let mean = |s: f64, k: usize| if k > 0 { s / k as f64 } else { 0.0 };
    Ok(OffsetReport {
        l1: l1 / n as f64,
        angle_deg: mean(angle, moving),
        norm_err: mean(norm_err, moving),
    })
}

/// Angle in degrees between `p` and non-zero `g`; 180 when `p` is zero.
fn angle_between(p: Point, g: Point) -> f64 {
    if p.norm() < 1e-12 {
        return 180.0;
    }
    let cross = p.x * g.y - p.y * g.x;
    let dot = p.x * g.x + p.y * g.y;
    cross.abs().atan2(dot).to_degrees()
}
