//! Heatmap post-processing: non-maximum suppression and a 1-D 2-means split
//! of detection confidences into true detections and noise.

use crate::domain::{Detection, Heatmap, Point};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    pub radius_cells: f64,
    pub max_candidates: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            radius_cells: 2.0,
            max_candidates: 1000,
        }
    }
}

/// Local maxima of `x` in decreasing value order; a candidate within
/// `radius_cells` of an accepted one is dropped. Equal values are ordered by
/// `(y, x)`. Positions are cell centers, confidence is the heatmap value.
pub fn nms(x: &Heatmap, time: i64, cfg: &NmsConfig) -> Vec<Detection> {
    let grid = x.grid();
    let (w, h) = grid.dims();
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for y in 0..h {
        for cx in 0..w {
            let v = x.get(cx, y);
            if v <= 0.0 {
                continue;
            }
            let is_max = (y.saturating_sub(1)..=(y + 1).min(h - 1)).all(|ny| {
                (cx.saturating_sub(1)..=(cx + 1).min(w - 1)).all(|nx| x.get(nx, ny) <= v)
            });
            if is_max {
                candidates.push((cx, y, v));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));

    let r2 = cfg.radius_cells * cfg.radius_cells;
    let mut kept: Vec<Detection> = Vec::new();
    for (cx, cy, v) in candidates {
        if kept.len() >= cfg.max_candidates {
            break;
        }
        let p = Point::new(cx as f64, cy as f64);
        let suppressed = kept.iter().any(|d| {
            let (ex, ey) = (d.pos.x - p.x, d.pos.y - p.y);
            ex * ex + ey * ey <= r2
        });
        if !suppressed {
            kept.push(Detection::new(time, p, v));
        }
    }
    kept
}

const LLOYD_TOL: f64 = 1e-9;

/// Final centroids of 1-D 2-means started at `(min, max)`.
pub fn kmeans2_centroids(values: &[f64]) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if values.is_empty() || !lo.is_finite() || !hi.is_finite() {
        return None;
    }
    for _ in 0..1000 {
        let mid = 0.5 * (lo + hi);
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for &v in values {
            if v > mid {
                s1 += v;
                n1 += 1;
            } else {
                s0 += v;
                n0 += 1;
            }
        }
        let nlo = if n0 > 0 { s0 / n0 as f64 } else { lo };
        let nhi = if n1 > 0 { s1 / n1 as f64 } else { hi };
        let moved = (nlo - lo).abs().max((nhi - hi).abs());
        lo = nlo;
        hi = nhi;
        if moved < LLOYD_TOL {
            break;
        }
    }
    Some((lo, hi))
}

/// Midpoint between the two 2-means centroids; values strictly above it are
/// true detections. All-equal input returns that value. Empty input is
/// `None`.
pub fn split_kmeans2(confidences: &[f64]) -> Option<f64> {
    kmeans2_centroids(confidences).map(|(lo, hi)| 0.5 * (lo + hi))
}

/// Keeps detections strictly above the 2-means threshold, or all of them when
/// the two clusters are closer than `min_separation`.
pub fn select_true_detections(dets: &[Detection], min_separation: f64) -> Vec<Detection> {
    let conf: Vec<f64> = dets.iter().map(|d| d.confidence).collect();
    match kmeans2_centroids(&conf) {
        Some((lo, hi)) if hi - lo >= min_separation && hi > lo => {
            let thr = 0.5 * (lo + hi);
            dets.iter()
                .copied()
                .filter(|d| d.confidence > thr)
                .collect()
        }
        _ => dets.to_vec(),
    }
}
