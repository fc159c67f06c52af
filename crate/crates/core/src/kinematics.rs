//! Vehicle state, fixed-timestep motion integration, oriented-bounding-box
//! geometry, and the distance/collision queries behind fitness evaluation
//! and violation detection.
//!
//! The model is kinematic: acceleration clamped to [-8, +4] m/s², yaw rate
//! clamped to 0.5 rad/s, displacement along the post-update heading. Edge
//! contact counts as collision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::road::Point;

/// Maximum braking in m/s² (magnitude).
pub const MAX_BRAKE: f64 = 8.0;

/// Maximum acceleration in m/s².
pub const MAX_ACCEL: f64 = 4.0;

/// Yaw-rate clamp in rad/s.
pub const MAX_YAW_RATE: f64 = 0.5;

/// Heading clamp relative to the road axis. Planning-side rejection keeps
/// paths well inside this; the clamp guarantees the state invariant.
pub const MAX_HEADING: f64 = std::f64::consts::FRAC_PI_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleKind {
    Ego,
    Npc,
}

/// Per-frame kinematic state of one vehicle. `position` is the box center;
/// heading 0 points along +s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u32,
    pub kind: VehicleKind,
    pub position: Point,
    pub heading: f64,
    pub speed: f64,
    pub box_length: f64,
    pub box_width: f64,
}

impl VehicleState {
    pub fn bounding_box(&self) -> OrientedBox {
        OrientedBox::new(self.position, self.heading, self.box_length, self.box_width)
    }

    /// Unit vector along the vehicle's heading.
    pub fn forward(&self) -> (f64, f64) {
        (self.heading.cos(), self.heading.sin())
    }

    /// Unit vector pointing to the vehicle's right (+d side at heading 0).
    pub fn right(&self) -> (f64, f64) {
        (-self.heading.sin(), self.heading.cos())
    }
}

/// Oriented rectangle: center, heading, length along heading, width across.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Point,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
}

impl OrientedBox {
    pub fn new(center: Point, heading: f64, length: f64, width: f64) -> Self {
        debug_assert!(length > 0.0 && width > 0.0);
        Self { center, heading, length, width }
    }

    /// Corner points in order (front-right, front-left, rear-left, rear-right).
    pub fn corners(&self) -> [Point; 4] {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let corner = |l: f64, w: f64| Point {
            s: self.center.s + l * c - w * s,
            d: self.center.d + l * s + w * c,
        };
        [corner(hl, hw), corner(hl, -hw), corner(-hl, -hw), corner(-hl, hw)]
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        [(c, s), (-s, c)]
    }
}

fn project(corners: &[Point; 4], axis: (f64, f64)) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in corners {
        let v = p.s * axis.0 + p.d * axis.1;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Separating-axis test. Touching projections do not separate, so edge
/// contact registers as collision.
pub fn boxes_collide(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    for axis in a.axes().iter().chain(b.axes().iter()) {
        let (a_lo, a_hi) = project(&ca, *axis);
        let (b_lo, b_hi) = project(&cb, *axis);
        if a_hi < b_lo || b_hi < a_lo {
            return false;
        }
    }
    true
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = (b.s - a.s, b.d - a.d);
    let ap = (p.s - a.s, p.d - a.d);
    let len2 = ab.0 * ab.0 + ab.1 * ab.1;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap.0 * ab.0 + ap.1 * ab.1) / len2).clamp(0.0, 1.0)
    };
    let closest = Point::new(a.s + t * ab.0, a.d + t * ab.1);
    p.distance(&closest)
}

/// Shortest distance between two boxes: 0 iff they intersect or touch,
/// otherwise the minimum vertex-to-edge distance between the two convex
/// quadrilaterals. Symmetric.
pub fn box_distance(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if boxes_collide(a, b) {
        return 0.0;
    }
    let ca = a.corners();
    let cb = b.corners();
    let mut best = f64::INFINITY;
    for i in 0..4 {
        let (e0, e1) = (cb[i], cb[(i + 1) % 4]);
        for p in &ca {
            best = best.min(point_segment_distance(*p, e0, e1));
        }
        let (f0, f1) = (ca[i], ca[(i + 1) % 4]);
        for p in &cb {
            best = best.min(point_segment_distance(*p, f0, f1));
        }
    }
    best
}

/// Advance a vehicle one timestep toward a target point at a target speed.
///
/// Speed is clamped by the acceleration limits, heading turns toward the
/// target bearing under the yaw-rate clamp, and the position moves by
/// `v' * dt` along the new heading.
pub fn step_vehicle(
    state: &VehicleState,
    target_point: Point,
    target_speed: f64,
    dt: f64,
) -> Result<VehicleState, KinematicsError> {
    if !target_point.is_finite() {
        return Err(KinematicsError::NonFinite("target_point"));
    }
    if !target_speed.is_finite() {
        return Err(KinematicsError::NonFinite("target_speed"));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(KinematicsError::NonFinite("dt"));
    }
    if !state.position.is_finite() || !state.heading.is_finite() || !state.speed.is_finite() {
        return Err(KinematicsError::NonFinite("state"));
    }

    let v = state.speed;
    let new_speed = target_speed.clamp(v - MAX_BRAKE * dt, v + MAX_ACCEL * dt).max(0.0);

    let ds = target_point.s - state.position.s;
    let dd = target_point.d - state.position.d;
    let new_heading = if ds.abs() < 1e-9 && dd.abs() < 1e-9 {
        state.heading
    } else {
        let bearing = dd.atan2(ds);
        let mut delta = bearing - state.heading;
        while delta > std::f64::consts::PI {
            delta -= 2.0 * std::f64::consts::PI;
        }
        while delta < -std::f64::consts::PI {
            delta += 2.0 * std::f64::consts::PI;
        }
        let turn = delta.clamp(-MAX_YAW_RATE * dt, MAX_YAW_RATE * dt);
        (state.heading + turn).clamp(-MAX_HEADING, MAX_HEADING)
    };

    let position = Point::new(
        state.position.s + new_speed * dt * new_heading.cos(),
        state.position.d + new_speed * dt * new_heading.sin(),
    );

    Ok(VehicleState {
        position,
        heading: new_heading,
        speed: new_speed,
        ..state.clone()
    })
}
