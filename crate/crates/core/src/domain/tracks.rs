use serde::{Deserialize, Serialize};

use super::{GroundGrid, Point};
use crate::{Error, Result};

/// A detection on the ground plane at a given frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub time: i64,
    pub pos: Point,
    pub confidence: f64,
}

impl Detection {
    pub fn new(time: i64, pos: Point, confidence: f64) -> Self {
        Self {
            time,
            pos,
            confidence,
        }
    }

    pub fn validate(&self, grid: &GroundGrid) -> Result<()> {
        if !grid.contains(self.pos) {
            return Err(Error::OutOfBounds {
                x: self.pos.x,
                y: self.pos.y,
                w: grid.width(),
                h: grid.height(),
            });
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::ValueOutOfRange {
                index: 0,
                value: self.confidence,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub time: i64,
    pub pos: Point,
}

/// A time-indexed identity path. Never empty; times strictly increase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: i64,
    points: Vec<TrackPoint>,
}

impl Trajectory {
    pub fn start(id: i64, time: i64, pos: Point) -> Self {
        Self {
            id,
            points: vec![TrackPoint { time, pos }],
        }
    }

    pub fn from_points(id: i64, points: Vec<TrackPoint>) -> Result<Self> {
        let mut iter = points.into_iter();
        let first = iter.next().ok_or(Error::EmptyTrajectory)?;
        let mut traj = Self::start(id, first.time, first.pos);
        for p in iter {
            traj.push(p.time, p.pos)?;
        }
        Ok(traj)
    }

    pub fn push(&mut self, time: i64, pos: Point) -> Result<()> {
        let last = self.last().time;
        if time <= last {
            return Err(Error::NonIncreasingTime { last, next: time });
        }
        self.points.push(TrackPoint { time, pos });
        Ok(())
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn first(&self) -> &TrackPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &TrackPoint {
        self.points.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Position at `time`, if the trajectory has a point there.
    pub fn at(&self, time: i64) -> Option<Point> {
        self.points
            .binary_search_by_key(&time, |p| p.time)
            .ok()
            .map(|i| self.points[i].pos)
    }
}
