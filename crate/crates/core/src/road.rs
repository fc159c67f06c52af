//! The experimental field: a straight multi-lane road segment with a
//! "bubble" region where adversarial NPCs spawn and act, lane geometry
//! queries, and distances to illegal lines (yellow / road edges).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::OrientedBox;

/// Road-frame coordinates: `s` runs along the road axis, `d` laterally
/// from the left road edge (positive toward the right edge).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub s: f64,
    pub d: f64,
}

impl Point {
    pub fn new(s: f64, d: f64) -> Self {
        Self { s, d }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        ((self.s - other.s).powi(2) + (self.d - other.d).powi(2)).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.d.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Yellow,
    Edge,
}

/// An illegal line running the whole road length at a fixed lateral offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub offset: f64,
    pub kind: LineKind,
}

/// Lane assignment of a bounding box: a single lane index when all four
/// corners fall strictly inside one lane's lateral band, else `Straddling`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneAssignment {
    Lane(usize),
    Straddling,
}

#[derive(Debug, Error, PartialEq)]
pub enum RoadError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("box entirely outside the road")]
    OutOfRoad,
}

/// Road preset keys as they appear in campaign config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoadPreset {
    pub lanes: usize,
    pub lane_width_m: f64,
    pub length_m: f64,
    pub bubble_offset_m: f64,
    pub bubble_length_m: f64,
    pub yellow_line: bool,
}

impl RoadPreset {
    /// Two-lane urban way with a yellow line on the left boundary.
    pub fn urban2() -> Self {
        Self {
            lanes: 2,
            lane_width_m: 3.5,
            length_m: 500.0,
            bubble_offset_m: 50.0,
            bubble_length_m: 300.0,
            yellow_line: true,
        }
    }

    /// Four-lane highway.
    pub fn highway4() -> Self {
        Self {
            lanes: 4,
            lane_width_m: 3.5,
            length_m: 600.0,
            bubble_offset_m: 50.0,
            bubble_length_m: 300.0,
            yellow_line: false,
        }
    }
}

/// Straight multi-lane road. Immutable after construction; safe to share
/// across concurrent scenario evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadModel {
    lane_count: usize,
    lane_width: f64,
    road_length: f64,
    bubble_offset: f64,
    bubble_length: f64,
    illegal_lines: Vec<LineSpec>,
}

impl RoadModel {
    /// Build a road without a yellow line. Dimensions must be positive and
    /// the bubble must fit within the road.
    pub fn build(
        lane_count: usize,
        lane_width: f64,
        road_length: f64,
        bubble_offset: f64,
        bubble_length: f64,
    ) -> Result<Self, RoadError> {
        Self::build_with_yellow(
            lane_count,
            lane_width,
            road_length,
            bubble_offset,
            bubble_length,
            false,
        )
    }

    pub fn build_with_yellow(
        lane_count: usize,
        lane_width: f64,
        road_length: f64,
        bubble_offset: f64,
        bubble_length: f64,
        yellow_line: bool,
    ) -> Result<Self, RoadError> {
        if lane_count < 1 {
            return Err(RoadError::InvalidGeometry("lane_count must be >= 1".into()));
        }
        for (name, v) in [
            ("lane_width", lane_width),
            ("road_length", road_length),
            ("bubble_offset", bubble_offset),
            ("bubble_length", bubble_length),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(RoadError::InvalidGeometry(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if bubble_offset + bubble_length > road_length {
            return Err(RoadError::InvalidGeometry(format!(
                "bubble [{bubble_offset}, {}] overflows road of length {road_length}",
                bubble_offset + bubble_length
            )));
        }
        // Both outer edges are always illegal lines; the yellow line sits on
        // the leftmost boundary when configured.
        let mut illegal_lines = vec![
            LineSpec { offset: 0.0, kind: LineKind::Edge },
            LineSpec { offset: lane_count as f64 * lane_width, kind: LineKind::Edge },
        ];
        if yellow_line {
            illegal_lines.push(LineSpec { offset: 0.0, kind: LineKind::Yellow });
        }
        Ok(Self {
            lane_count,
            lane_width,
            road_length,
            bubble_offset,
            bubble_length,
            illegal_lines,
        })
    }

    pub fn from_preset(p: &RoadPreset) -> Result<Self, RoadError> {
        Self::build_with_yellow(
            p.lanes,
            p.lane_width_m,
            p.length_m,
            p.bubble_offset_m,
            p.bubble_length_m,
            p.yellow_line,
        )
    }

    pub fn lane_count(&self) -> usize {
        self.lane_count
    }

    pub fn lane_width(&self) -> f64 {
        self.lane_width
    }

    pub fn road_length(&self) -> f64 {
        self.road_length
    }

    pub fn road_width(&self) -> f64 {
        self.lane_count as f64 * self.lane_width
    }

    pub fn bubble_offset(&self) -> f64 {
        self.bubble_offset
    }

    pub fn bubble_length(&self) -> f64 {
        self.bubble_length
    }

    pub fn bubble_end(&self) -> f64 {
        self.bubble_offset + self.bubble_length
    }

    pub fn illegal_lines(&self) -> &[LineSpec] {
        &self.illegal_lines
    }

    /// Centerline lateral offset of lane `i`: (i + 0.5) * lane_width.
    pub fn centerline(&self, lane: usize) -> f64 {
        debug_assert!(lane < self.lane_count);
        (lane as f64 + 0.5) * self.lane_width
    }

    /// Lane whose centerline is closest to lateral offset `d`, clamped to
    /// the road.
    pub fn nearest_lane(&self, d: f64) -> usize {
        let i = (d / self.lane_width).floor();
        (i.max(0.0) as usize).min(self.lane_count - 1)
    }

    pub fn lane_exists(&self, lane: i64) -> bool {
        lane >= 0 && (lane as usize) < self.lane_count
    }

    pub fn contains_s(&self, s: f64) -> bool {
        (0.0..=self.road_length).contains(&s)
    }

    pub fn in_bubble(&self, s: f64) -> bool {
        s >= self.bubble_offset && s <= self.bubble_end()
    }

    /// Assign a bounding box to a lane. Returns `Lane(i)` iff all four
    /// corners fall strictly inside lane i's lateral band; `Straddling`
    /// otherwise. A box entirely outside the road is an error.
    pub fn lane_of_box(&self, bbox: &OrientedBox) -> Result<LaneAssignment, RoadError> {
        let corners = bbox.corners();
        let (mut d_lo, mut d_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut s_lo, mut s_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in &corners {
            d_lo = d_lo.min(c.d);
            d_hi = d_hi.max(c.d);
            s_lo = s_lo.min(c.s);
            s_hi = s_hi.max(c.s);
        }
        if d_hi < 0.0 || d_lo > self.road_width() || s_hi < 0.0 || s_lo > self.road_length {
            return Err(RoadError::OutOfRoad);
        }
        for lane in 0..self.lane_count {
            let band_lo = lane as f64 * self.lane_width;
            let band_hi = band_lo + self.lane_width;
            if d_lo > band_lo && d_hi < band_hi {
                return Ok(LaneAssignment::Lane(lane));
            }
        }
        Ok(LaneAssignment::Straddling)
    }

    /// Minimum distance from a box to any illegal line; 0 when the box
    /// touches or crosses a line. Lines run the whole road, so corner
    /// distance reduces to lateral offset difference.
    pub fn distance_to_illegal_lines(&self, bbox: &OrientedBox) -> f64 {
        let corners = bbox.corners();
        let mut best = f64::INFINITY;
        for line in &self.illegal_lines {
            let mut below = false;
            let mut above = false;
            let mut nearest = f64::INFINITY;
            for c in &corners {
                let delta = c.d - line.offset;
                if delta < 0.0 {
                    below = true;
                } else if delta > 0.0 {
                    above = true;
                }
                nearest = nearest.min(delta.abs());
            }
            let dist = if below && above { 0.0 } else { nearest };
            best = best.min(dist);
        }
        best
    }
}
