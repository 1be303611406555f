//! Online two-stage association on the ground plane.
//!
//! Each frame, track heads are moved by the motion model, then matched to
//! high-confidence detections and afterwards to low-confidence ones by the
//! IoU of axis-aligned squares centred on the points. Unmatched
//! high-confidence detections start new tracks; tracks missing for more than
//! `max_age` frames end.

use crate::domain::{Detection, OffsetField, Point, Trajectory};
use crate::track::assign::{associate_hungarian, associate_nearest, solve_assignment};
use crate::track::kalman::{kalman_predict, kalman_update, KalmanState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionSource {
    /// Heads stay at the last observed position.
    None,
    Kalman,
    /// Heads follow the learned forward offset field.
    LearnedOffset,
    /// Motion from the nearest detection in the next frame.
    Nearest,
    /// Motion from a bipartite matching of consecutive detections.
    Hungarian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStageParams {
    /// Side of the ground square around each point, in cells.
    pub box_side: f64,
    pub iou_threshold: f64,
    pub conf_split: f64,
    pub max_age: usize,
    /// Search radius of the nearest and Hungarian motion models.
    pub motion_max_dist: f64,
    pub kalman_q: f64,
    pub kalman_r: f64,
    /// Initial velocity variance of a new track.
    pub kalman_vel_var: f64,
}

impl Default for TwoStageParams {
    fn default() -> Self {
        Self {
            box_side: 5.0,
            iou_threshold: 0.1,
            conf_split: 0.5,
            max_age: 3,
            motion_max_dist: 10.0,
            kalman_q: 0.01,
            kalman_r: 0.25,
            kalman_vel_var: 4.0,
        }
    }
}

impl TwoStageParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.box_side > 0.0) {
            return Err(Error::Config("box_side must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.iou_threshold) {
            return Err(Error::Config("iou_threshold must lie in [0, 1)".into()));
        }
        if !(self.kalman_q >= 0.0 && self.kalman_r > 0.0 && self.kalman_vel_var > 0.0) {
            return Err(Error::Config("kalman noise must be positive".into()));
        }
        Ok(())
    }
}

/// IoU of two axis-aligned squares of side `side` centred at `a` and `b`.
pub fn box_iou(a: Point, b: Point, side: f64) -> f64 {
    let ox = (side - (a.x - b.x).abs()).max(0.0);
    let oy = (side - (a.y - b.y).abs()).max(0.0);
    let overlap = ox * oy;
    overlap / (2.0 * side * side - overlap)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TwoStageMatch {
    /// `(track, detection)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_high: Vec<usize>,
    pub unmatched_low: Vec<usize>,
}

fn match_by_iou(
    heads: &[Point],
    tracks: &[usize],
    detections: &[Detection],
    dets: &[usize],
    iou_threshold: f64,
    side: f64,
) -> Vec<(usize, usize)> {
    let cost: Vec<Vec<f64>> = tracks
        .iter()
        .map(|&t| {
            dets.iter()
                .map(|&d| {
                    let iou = box_iou(heads[t], detections[d].pos, side);
                    if iou > 0.0 && iou >= iou_threshold {
                        1.0 - iou
                    } else {
                        f64::INFINITY
                    }
                })
                .collect()
        })
        .collect();
    solve_assignment(&cost, f64::MAX, None)
        .into_iter()
        .map(|(r, c)| (tracks[r], dets[c]))
        .collect()
}

/// Matches predicted track heads to detections in two stages.
pub fn associate_two_stage(
    heads: &[Point],
    detections: &[Detection],
    conf_split: f64,
    iou_threshold: f64,
    box_side: f64,
) -> TwoStageMatch {
    let (high, low): (Vec<usize>, Vec<usize>) =
        (0..detections.len()).partition(|&d| detections[d].confidence >= conf_split);
    let all_tracks: Vec<usize> = (0..heads.len()).collect();
    let mut matches = match_by_iou(
        heads,
        &all_tracks,
        detections,
        &high,
        iou_threshold,
        box_side,
    );
    let mut track_used = vec![false; heads.len()];
    let mut det_used = vec![false; detections.len()];
    for &(t, d) in &matches {
        track_used[t] = true;
        det_used[d] = true;
    }
    let rest: Vec<usize> = all_tracks.into_iter().filter(|&t| !track_used[t]).collect();
    let second = match_by_iou(heads, &rest, detections, &low, iou_threshold, box_side);
    for &(t, d) in &second {
        track_used[t] = true;
        det_used[d] = true;
    }
    matches.extend(second);
    matches.sort_unstable();
    TwoStageMatch {
        matches,
        unmatched_tracks: (0..heads.len()).filter(|&t| !track_used[t]).collect(),
        unmatched_high: high.into_iter().filter(|&d| !det_used[d]).collect(),
        unmatched_low: low.into_iter().filter(|&d| !det_used[d]).collect(),
    }
}

#[derive(Debug, Clone)]
struct Track {
    trajectory: Trajectory,
    head: Point,
    kalman: KalmanState,
    misses: usize,
    /// Index into the previous frame's detections when updated last frame.
    last_det: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TwoStageTracker {
    params: TwoStageParams,
    motion: MotionSource,
    active: Vec<Track>,
    finished: Vec<Trajectory>,
    prev: Vec<Detection>,
    next_id: i64,
}

impl TwoStageTracker {
    pub fn new(params: TwoStageParams, motion: MotionSource) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            motion,
            active: Vec::new(),
            finished: Vec::new(),
            prev: Vec::new(),
            next_id: 0,
        })
    }

    pub fn num_active(&self) -> usize {
        self.active.len()
    }

    /// Current (predicted or observed) head of every active track.
    pub fn heads(&self) -> Vec<Point> {
        self.active.iter().map(|t| t.head).collect()
    }

    /// Processes the detections of frame `time`. `fwd` maps the previous
    /// frame to this one and is used by [`MotionSource::LearnedOffset`].
    pub fn step(
        &mut self,
        time: i64,
        detections: &[Detection],
        fwd: Option<&OffsetField>,
    ) -> Result<()> {
        self.predict(detections, fwd)?;
        let p = self.params;
        let heads = self.heads();
        let m = associate_two_stage(
            &heads,
            detections,
            p.conf_split,
            p.iou_threshold,
            p.box_side,
        );
        for &(t, d) in &m.matches {
            let det = &detections[d];
            let track = &mut self.active[t];
            track.trajectory.push(time, det.pos)?;
            track.kalman = kalman_update(&track.kalman, det.pos, p.kalman_r)?;
            track.head = det.pos;
            track.misses = 0;
            track.last_det = Some(d);
        }
        for &t in &m.unmatched_tracks {
            self.active[t].misses += 1;
            self.active[t].last_det = None;
        }
        let (keep, gone): (Vec<Track>, Vec<Track>) = std::mem::take(&mut self.active)
            .into_iter()
            .partition(|t| t.misses <= p.max_age);
        self.active = keep;
        self.finished.extend(gone.into_iter().map(|t| t.trajectory));
        for &d in &m.unmatched_high {
            let det = &detections[d];
            self.active.push(Track {
                trajectory: Trajectory::start(self.next_id, time, det.pos),
                head: det.pos,
                kalman: KalmanState::at_rest(det.pos, p.kalman_r, p.kalman_vel_var)?,
                misses: 0,
                last_det: Some(d),
            });
            self.next_id += 1;
        }
        self.prev = detections.to_vec();
        Ok(())
    }

    fn predict(&mut self, detections: &[Detection], fwd: Option<&OffsetField>) -> Result<()> {
        let p = self.params;
        let current: Vec<Point> = detections.iter().map(|d| d.pos).collect();
        let previous: Vec<Point> = self.prev.iter().map(|d| d.pos).collect();
        let moved_to: Vec<Option<usize>> = match self.motion {
            MotionSource::Nearest => associate_nearest(&previous, &current, p.motion_max_dist),
            MotionSource::Hungarian => {
                let mut out = vec![None; previous.len()];
                for (i, j) in associate_hungarian(&previous, &current, p.motion_max_dist) {
                    out[i] = Some(j);
                }
                out
            }
            _ => Vec::new(),
        };
        for track in &mut self.active {
            track.kalman = kalman_predict(&track.kalman, 1.0, p.kalman_q)?;
            match self.motion {
                MotionSource::None => {}
                MotionSource::Kalman => track.head = track.kalman.position(),
                MotionSource::LearnedOffset => {
                    if let Some(f) = fwd {
                        track.head = track.head.add(f.sample(track.head));
                    }
                }
                MotionSource::Nearest | MotionSource::Hungarian => {
                    if let Some(j) = track.last_det.and_then(|k| moved_to[k]) {
                        track.head = current[j];
                    }
                }
            }
        }
        Ok(())
    }

    /// All trajectories, ordered by id.
    pub fn finish(self) -> Vec<Trajectory> {
        let mut out = self.finished;
        out.extend(self.active.into_iter().map(|t| t.trajectory));
        out.sort_by_key(|t| t.id);
        out
    }
}

/// Runs the tracker over consecutive frames `0..frames.len()`.
/// `fwd_offsets[k]` maps frame `k` to `k + 1`.
pub fn run_two_stage(
    frames: &[Vec<Detection>],
    fwd_offsets: Option<&[OffsetField]>,
    params: TwoStageParams,
    motion: MotionSource,
) -> Result<Vec<Trajectory>> {
    let mut tracker = TwoStageTracker::new(params, motion)?;
    for (t, dets) in frames.iter().enumerate() {
        let fwd = t
            .checked_sub(1)
            .and_then(|k| fwd_offsets.and_then(|f| f.get(k)));
        tracker.step(t as i64, dets, fwd)?;
    }
    Ok(tracker.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::GroundGrid;

    fn det(t: i64, x: f64, y: f64, c: f64) -> Detection {
        Detection::new(t, Point::new(x, y), c)
    }

    #[test]
    fn iou_of_squares() {
        let a = Point::new(0.0, 0.0);
        assert_eq!(box_iou(a, a, 5.0), 1.0);
        assert_eq!(box_iou(a, Point::new(5.0, 0.0), 5.0), 0.0);
        // half overlap along x: 12.5 / 37.5
        assert!((box_iou(a, Point::new(2.5, 0.0), 5.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_track_single_detection() {
        let m = associate_two_stage(
            &[Point::new(3.0, 3.0)],
            &[det(0, 3.5, 3.0, 0.9)],
            0.5,
            0.1,
            5.0,
        );
        assert_eq!(m.matches, vec![(0, 0)]);
        assert!(m.unmatched_tracks.is_empty() && m.unmatched_high.is_empty());
    }

    #[test]
    fn low_confidence_detections_only_in_second_stage() {
        let heads = [Point::new(0.0, 0.0), Point::new(20.0, 0.0)];
        let dets = [
            det(0, 20.5, 0.0, 0.2),
            det(0, 0.5, 0.0, 0.9),
            det(0, 40.0, 0.0, 0.1),
        ];
        let m = associate_two_stage(&heads, &dets, 0.5, 0.1, 5.0);
        assert_eq!(m.matches, vec![(0, 1), (1, 0)]);
        assert_eq!(m.unmatched_low, vec![2]);
        // a high detection wins over a closer low one
        let dets = [det(0, 0.0, 0.0, 0.2), det(0, 1.0, 0.0, 0.9)];
        let m = associate_two_stage(&heads[..1], &dets, 0.5, 0.1, 5.0);
        assert_eq!(m.matches, vec![(0, 1)]);
    }

    #[test]
    fn no_detections_ages_tracks() {
        let mut tr = TwoStageTracker::new(TwoStageParams::default(), MotionSource::None).unwrap();
        tr.step(0, &[det(0, 5.0, 5.0, 0.9)], None).unwrap();
        for t in 1..=3 {
            tr.step(t, &[], None).unwrap();
            assert_eq!(tr.num_active(), 1);
            assert_eq!(tr.active[0].misses, t as usize);
        }
        tr.step(4, &[], None).unwrap();
        assert_eq!(tr.num_active(), 0);
        assert_eq!(tr.finish().len(), 1);
    }

    #[test]
    fn learned_offsets_bridge_large_displacements() {
        // 8 cells per frame, boxes of side 5: without motion nothing overlaps
        let grid = GroundGrid::new(64, 16).unwrap();
        let frames: Vec<Vec<Detection>> = (0..5)
            .map(|t| vec![det(t, 4.0 + 8.0 * t as f64, 8.0, 0.9)])
            .collect();
        let fields = vec![OffsetField::constant(grid, Point::new(8.0, 0.0)); 4];
        let p = TwoStageParams::default();
        let still = run_two_stage(&frames, None, p, MotionSource::None).unwrap();
        assert_eq!(still.len(), 5);
        let learned =
            run_two_stage(&frames, Some(&fields), p, MotionSource::LearnedOffset).unwrap();
        assert_eq!(learned.len(), 1);
        assert_eq!(learned[0].len(), 5);
        let kalman = run_two_stage(&frames, None, p, MotionSource::Kalman).unwrap();
        assert!(kalman.len() > 1);
    }

    #[test]
    fn detection_based_motion_models() {
        let frames: Vec<Vec<Detection>> = (0..4)
            .map(|t| {
                vec![
                    det(t, 4.0 + 6.0 * t as f64, 4.0, 0.9),
                    det(t, 40.0 - 6.0 * t as f64, 12.0, 0.9),
                ]
            })
            .collect();
        for motion in [MotionSource::Nearest, MotionSource::Hungarian] {
            let tracks = run_two_stage(&frames, None, TwoStageParams::default(), motion).unwrap();
            assert_eq!(tracks.len(), 2, "{motion:?}");
            assert!(tracks.iter().all(|t| t.len() == 4));
        }
    }
}
