//! Trajectory planning for adversarial maneuvers.
//!
//! Waypoint generation: straight maneuvers follow the current lane for the
//! planning horizon; lane changes drive straight for a short random phase,
//! then follow a cubic Bézier whose interior control points are sampled
//! randomly and re-sampled until the curve passes the rejection filters
//! (no direction inversion, no lane departure, no sharp turns).
//!
//! Speed planning: the EGO is predicted forward at constant speed, its
//! (inflated) box is projected onto the waypoint path to get an occupied
//! region in the s-t plane, and the profile is shaped to put the NPC inside
//! that region — arriving at the region entry on time when the
//! acceleration envelope allows it, and saturating the envelope toward the
//! region when it does not.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::behavior::ManeuverKind;
use crate::kinematics::{VehicleState, MAX_ACCEL, MAX_BRAKE};
use crate::rng::SimRng;
use crate::road::{Point, RoadModel};
use crate::FRAME_DT;

/// Speed-planning horizon in seconds; covers a full lane change at urban
/// speeds.
pub const PLANNING_HORIZON_S: f64 = 6.0;

/// Length of a straight-maneuver plan in meters.
pub const STRAIGHT_PLAN_LENGTH: f64 = 60.0;

/// Maximum heading change between consecutive path segments (the "sharp
/// turn" rejection threshold).
pub const MAX_SEGMENT_TURN: f64 = 0.35;

/// Maximum spacing between consecutive waypoints.
pub const MAX_WAYPOINT_SPACING: f64 = 2.0;

const STRAIGHT_SPACING: f64 = 1.5;
const BEZIER_SAMPLES: usize = 50;
const MAX_PLAN_ATTEMPTS: usize = 32;
const STRAIGHT_PHASE_RANGE: (f64, f64) = (5.0, 15.0);
const LANE_CHANGE_ADVANCE_RANGE: (f64, f64) = (20.0, 40.0);

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("no target lane exists for the requested lane change")]
    NoTargetLane,
    #[error("all {MAX_PLAN_ATTEMPTS} candidate curves were rejected")]
    Rejected,
    #[error("path must contain at least two waypoints")]
    EmptyPath,
}

/// An ordered waypoint path. `phase_split` is the index of the first
/// lane-change-phase point (equal to `points.len()` for straight plans).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPath {
    pub points: Vec<Point>,
    pub phase_split: usize,
    pub total_length: f64,
}

impl WaypointPath {
    /// Cumulative arc length at each waypoint.
    pub fn arcs(&self) -> Vec<f64> {
        let mut arcs = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        arcs.push(0.0);
        for w in self.points.windows(2) {
            acc += w[0].distance(&w[1]);
            arcs.push(acc);
        }
        arcs
    }
}

/// Speeds along a path, one per waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub speeds: Vec<f64>,
}

impl SpeedProfile {
    pub fn constant(v: f64, n: usize) -> Self {
        Self { speeds: vec![v.max(0.0); n] }
    }
}

/// EGO occupancy of a path, as a rectangle in the s-t plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StRegion {
    pub s_enter: f64,
    pub s_exit: f64,
    pub t_enter: f64,
    pub t_exit: f64,
}

/// Cubic Bézier point for control points `p` at parameter `zeta` in [0, 1].
pub fn bezier_point(p: &[Point; 4], zeta: f64) -> Point {
    let u = 1.0 - zeta;
    let b0 = u * u * u;
    let b1 = 3.0 * u * u * zeta;
    let b2 = 3.0 * u * zeta * zeta;
    let b3 = zeta * zeta * zeta;
    Point::new(
        b0 * p[0].s + b1 * p[1].s + b2 * p[2].s + b3 * p[3].s,
        b0 * p[0].d + b1 * p[1].d + b2 * p[2].d + b3 * p[3].d,
    )
}

fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

fn monotone_s(points: &[Point]) -> bool {
    points.windows(2).all(|w| w[1].s > w[0].s)
}

fn max_turn(points: &[Point]) -> f64 {
    let mut worst: f64 = 0.0;
    let headings: Vec<f64> = points
        .windows(2)
        .map(|w| (w[1].d - w[0].d).atan2(w[1].s - w[0].s))
        .collect();
    for h in headings.windows(2) {
        worst = worst.max((h[1] - h[0]).abs());
    }
    worst
}

fn within_band(points: &[Point], d_lo: f64, d_hi: f64) -> bool {
    points.iter().all(|p| p.d >= d_lo && p.d <= d_hi)
}

fn straight_path(npc: &VehicleState, road: &RoadModel) -> WaypointPath {
    let lane = road.nearest_lane(npc.position.d);
    let center = road.centerline(lane);
    let room = (road.road_length() - npc.position.s).max(2.0 * STRAIGHT_SPACING);
    let length = STRAIGHT_PLAN_LENGTH.min(room);
    let n = (length / STRAIGHT_SPACING).ceil().max(2.0) as usize;
    let ds = length / n as f64;
    // Drift back to the centerline at a gentle, bounded lateral rate.
    let max_lat_step = 0.15 * ds;
    let mut points = Vec::with_capacity(n + 1);
    let mut d = npc.position.d;
    points.push(npc.position);
    for k in 1..=n {
        let lat = (center - d).clamp(-max_lat_step, max_lat_step);
        d += lat;
        points.push(Point::new(npc.position.s + k as f64 * ds, d));
    }
    let total_length = polyline_length(&points);
    let phase_split = points.len();
    WaypointPath { points, phase_split, total_length }
}

/// Plan the waypoint path realizing a maneuver. Lane-change candidates are
/// re-sampled up to 32 times; exhausting the attempts is an error and the
/// caller degrades the maneuver to keep-speed.
pub fn plan_waypoints(
    npc: &VehicleState,
    kind: ManeuverKind,
    road: &RoadModel,
    rng: &mut SimRng,
) -> Result<WaypointPath, PlanError> {
    match kind {
        ManeuverKind::KeepSpeed
        | ManeuverKind::AccelerationStraight
        | ManeuverKind::DecelerationStraight => Ok(straight_path(npc, road)),
        ManeuverKind::LeftChange | ManeuverKind::RightChange => {
            let source = road.nearest_lane(npc.position.d) as i64;
            let target = if kind == ManeuverKind::LeftChange { source - 1 } else { source + 1 };
            if !road.lane_exists(target) {
                return Err(PlanError::NoTargetLane);
            }
            plan_lane_change(npc, road, source as usize, target as usize, rng)
        }
    }
}

fn plan_lane_change(
    npc: &VehicleState,
    road: &RoadModel,
    source: usize,
    target: usize,
    rng: &mut SimRng,
) -> Result<WaypointPath, PlanError> {
    let w = road.lane_width();
    let band_lo = (source.min(target)) as f64 * w;
    let band_hi = band_lo + 2.0 * w;
    let target_d = road.centerline(target);
    let d0 = npc.position.d;

    for _ in 0..MAX_PLAN_ATTEMPTS {
        let phase1 = rng.range_f64(STRAIGHT_PHASE_RANGE.0, STRAIGHT_PHASE_RANGE.1);
        let advance = rng.range_f64(LANE_CHANGE_ADVANCE_RANGE.0, LANE_CHANGE_ADVANCE_RANGE.1);
        if npc.position.s + phase1 + advance > road.road_length() {
            return Err(PlanError::Rejected);
        }

        let n1 = (phase1 / STRAIGHT_SPACING).ceil().max(1.0) as usize;
        let ds = phase1 / n1 as f64;
        let mut points: Vec<Point> = (0..=n1)
            .map(|k| Point::new(npc.position.s + k as f64 * ds, d0))
            .collect();
        let phase_split = points.len();

        let p0 = *points.last().expect("phase 1 is non-empty");
        let p3 = Point::new(p0.s + advance, target_d);
        let dd = target_d - d0;
        let p1 = Point::new(
            p0.s + rng.range_f64(0.15, 0.45) * advance,
            d0 + rng.range_f64(0.0, 0.35) * dd,
        );
        let p2 = Point::new(
            p0.s + rng.range_f64(0.55, 0.85) * advance,
            d0 + rng.range_f64(0.65, 1.0) * dd,
        );
        let ctrl = [p0, p1, p2, p3];
        for i in 1..BEZIER_SAMPLES {
            let zeta = i as f64 / (BEZIER_SAMPLES - 1) as f64;
            points.push(bezier_point(&ctrl, zeta));
        }

        let ok = monotone_s(&points)
            && within_band(&points, band_lo, band_hi)
            && max_turn(&points) <= MAX_SEGMENT_TURN
            && points.windows(2).all(|p| p[0].distance(&p[1]) <= MAX_WAYPOINT_SPACING);
        if ok {
            let total_length = polyline_length(&points);
            return Ok(WaypointPath { points, phase_split, total_length });
        }
    }
    Err(PlanError::Rejected)
}

/// Lower edge of the reachable-distance envelope at time `t`: maximum
/// braking until stop, then standing still.
pub fn envelope_lo(v0: f64, t: f64) -> f64 {
    if t < v0 / MAX_BRAKE {
        v0 * t - 0.5 * MAX_BRAKE * t * t
    } else {
        v0 * v0 / (2.0 * MAX_BRAKE)
    }
}

/// Upper edge of the reachable-distance envelope at time `t`: full
/// acceleration.
pub fn envelope_hi(v0: f64, t: f64) -> f64 {
    v0 * t + 0.5 * MAX_ACCEL * t * t
}

/// Predict the EGO forward at constant speed along its heading and project
/// its box (inflated by half the NPC dimensions, so arc contact means box
/// contact) onto the path. Returns the bounding s-t rectangle of the
/// covered (arc, time) pairs, or None when the EGO never touches the path
/// within the horizon.
pub fn occupied_region(
    path: &WaypointPath,
    npc: &VehicleState,
    ego: &VehicleState,
    horizon: f64,
) -> Option<StRegion> {
    let arcs = path.arcs();
    let (c, s) = (ego.heading.cos(), ego.heading.sin());
    let half_len = (ego.box_length + npc.box_length) / 2.0;
    let half_wid = (ego.box_width + npc.box_width) / 2.0;
    let steps = (horizon / FRAME_DT).round() as usize;

    let mut region: Option<StRegion> = None;
    for k in 0..=steps {
        let t = k as f64 * FRAME_DT;
        let cx = ego.position.s + ego.speed * t * c;
        let cd = ego.position.d + ego.speed * t * s;
        let mut covered_lo = f64::INFINITY;
        let mut covered_hi = f64::NEG_INFINITY;
        for (p, arc) in path.points.iter().zip(arcs.iter()) {
            let rel_s = p.s - cx;
            let rel_d = p.d - cd;
            let local_x = rel_s * c + rel_d * s;
            let local_y = -rel_s * s + rel_d * c;
            if local_x.abs() <= half_len && local_y.abs() <= half_wid {
                covered_lo = covered_lo.min(*arc);
                covered_hi = covered_hi.max(*arc);
            }
        }
        if covered_lo.is_finite() {
            region = Some(match region {
                None => StRegion {
                    s_enter: covered_lo,
                    s_exit: covered_hi,
                    t_enter: t,
                    t_exit: t,
                },
                Some(r) => StRegion {
                    s_enter: r.s_enter.min(covered_lo),
                    s_exit: r.s_exit.max(covered_hi),
                    t_enter: r.t_enter,
                    t_exit: t,
                },
            });
        }
    }
    region
}

/// One-ramp-then-cruise profile hitting arc `s_star` at time `t_star`
/// exactly. Requires `s_star` within the acceleration envelope at
/// `t_star`. Returns the cruise speed.
fn cruise_speed_through(v0: f64, s_star: f64, t_star: f64) -> f64 {
    if t_star <= 0.0 {
        return v0;
    }
    if s_star >= v0 * t_star {
        // Accelerate at MAX_ACCEL to v1, then hold. Distance is monotone
        // increasing in v1 on [v0, v0 + a t].
        let mut lo = v0;
        let mut hi = v0 + MAX_ACCEL * t_star;
        for _ in 0..60 {
            let v1 = 0.5 * (lo + hi);
            let d = v1 * t_star - (v1 - v0).powi(2) / (2.0 * MAX_ACCEL);
            if d < s_star {
                lo = v1;
            } else {
                hi = v1;
            }
        }
        0.5 * (lo + hi)
    } else {
        // Brake at MAX_BRAKE to v1, then hold.
        let mut lo = (v0 - MAX_BRAKE * t_star).max(0.0);
        let mut hi = v0;
        for _ in 0..60 {
            let v1 = 0.5 * (lo + hi);
            let d = v1 * t_star + (v0 - v1).powi(2) / (2.0 * MAX_BRAKE);
            if d < s_star {
                lo = v1;
            } else {
                hi = v1;
            }
        }
        0.5 * (lo + hi)
    }
}

fn ramp_profile(arcs: &[f64], v0: f64, v1: f64) -> SpeedProfile {
    let speeds = arcs
        .iter()
        .map(|&s| {
            if v1 >= v0 {
                (v0 * v0 + 2.0 * MAX_ACCEL * s).sqrt().min(v1)
            } else {
                (v0 * v0 - 2.0 * MAX_BRAKE * s).max(0.0).sqrt().max(v1)
            }
        })
        .collect();
    SpeedProfile { speeds }
}

/// Plan the speed profile for a path against the EGO's predicted
/// occupancy. With no occupancy the NPC holds its current speed; with a
/// reachable occupied region the s-t curve is shaped to intersect it
/// (targeting arrival at the region entry as early as feasible); with an
/// unreachable region the profile saturates the feasibility envelope
/// toward it.
pub fn plan_speed(
    path: &WaypointPath,
    npc: &VehicleState,
    ego: &VehicleState,
    horizon: f64,
) -> Result<SpeedProfile, PlanError> {
    if path.points.len() < 2 {
        return Err(PlanError::EmptyPath);
    }
    let arcs = path.arcs();
    let v0 = npc.speed;

    let region = match occupied_region(path, npc, ego, horizon) {
        None => return Ok(SpeedProfile::constant(v0, path.points.len())),
        Some(r) => r,
    };

    // Earliest time in the region where the reachable window overlaps it.
    let mut times = vec![region.t_enter];
    let mut k = (region.t_enter / FRAME_DT).floor() as usize + 1;
    while (k as f64) * FRAME_DT < region.t_exit {
        times.push(k as f64 * FRAME_DT);
        k += 1;
    }
    times.push(region.t_exit);

    for &t in &times {
        if t <= 0.0 {
            continue;
        }
        let lo = region.s_enter.max(envelope_lo(v0, t));
        let hi = region.s_exit.min(envelope_hi(v0, t)).min(path.total_length);
        if lo <= hi {
            let s_star = region.s_enter.clamp(lo, hi);
            let v1 = cruise_speed_through(v0, s_star, t);
            return Ok(ramp_profile(&arcs, v0, v1));
        }
    }

    // Unreachable: saturate the envelope toward the region.
    if envelope_hi(v0, region.t_exit) < region.s_enter {
        Ok(ramp_profile(&arcs, v0, f64::INFINITY))
    } else {
        Ok(ramp_profile(&arcs, v0, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::VehicleKind;

    fn npc(s: f64, d: f64, speed: f64) -> VehicleState {
        VehicleState {
            id: 1,
            kind: VehicleKind::Npc,
            position: Point::new(s, d),
            heading: 0.0,
            speed,
            box_length: 4.7,
            box_width: 2.0,
        }
    }

    fn road2() -> RoadModel {
        RoadModel::build(2, 3.5, 500.0, 50.0, 300.0).unwrap()
    }

    #[test]
    fn bezier_endpoint_identity() {
        let ctrl = [
            Point::new(3.0, -1.0),
            Point::new(7.0, 2.0),
            Point::new(11.0, 4.0),
            Point::new(20.0, 5.0),
        ];
        assert_eq!(bezier_point(&ctrl, 0.0), ctrl[0]);
        assert_eq!(bezier_point(&ctrl, 1.0), ctrl[3]);
    }

    #[test]
    fn bezier_midpoint_value() {
        // Direct evaluation of the cubic polynomial at zeta = 0.5.
        let ctrl = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(2.0, 1.0),
            Point::new(3.0, 1.0),
        ];
        let mid = bezier_point(&ctrl, 0.5);
        assert_eq!(mid, Point::new(1.5, 0.5));
    }

    #[test]
    fn straight_plan_shape() {
        let road = road2();
        let path =
            plan_waypoints(&npc(100.0, 1.75, 8.0), ManeuverKind::KeepSpeed, &road, &mut SimRng::new(1))
                .unwrap();
        assert_eq!(path.points[0], Point::new(100.0, 1.75));
        assert!((path.total_length - STRAIGHT_PLAN_LENGTH).abs() < 1.0);
        assert_eq!(path.phase_split, path.points.len());
        for w in path.points.windows(2) {
            assert!(w[0].distance(&w[1]) <= MAX_WAYPOINT_SPACING);
        }
    }

    #[test]
    fn straight_plan_recenters_gently() {
        let road = road2();
        // Start 1 m off the lane-0 centerline.
        let path =
            plan_waypoints(&npc(100.0, 2.75, 8.0), ManeuverKind::KeepSpeed, &road, &mut SimRng::new(1))
                .unwrap();
        assert!((path.points.last().unwrap().d - 1.75).abs() < 1e-9);
        assert!(max_turn(&path.points) <= MAX_SEGMENT_TURN);
    }

    #[test]
    fn lane_change_on_leftmost_lane_degrades() {
        let road = road2();
        let err =
            plan_waypoints(&npc(100.0, 1.75, 8.0), ManeuverKind::LeftChange, &road, &mut SimRng::new(1))
                .unwrap_err();
        assert_eq!(err, PlanError::NoTargetLane);
    }

    #[test]
    fn accepted_lane_changes_pass_rejection_filters() {
        let road = road2();
        let mut rng = SimRng::new(42);
        for i in 0..200 {
            let start = npc(60.0 + (i % 50) as f64, 1.75, 8.0);
            let path =
                plan_waypoints(&start, ManeuverKind::RightChange, &road, &mut rng).unwrap();
            assert!(monotone_s(&path.points), "direction inversion at case {i}");
            assert!(within_band(&path.points, 0.0, 7.0), "lane departure at case {i}");
            assert!(max_turn(&path.points) <= MAX_SEGMENT_TURN, "sharp turn at case {i}");
            assert!(path.phase_split >= 2 && path.phase_split < path.points.len());
            assert!((path.points.last().unwrap().d - 5.25).abs() < 1e-9);
        }
    }

    #[test]
    fn speed_plan_without_occupancy_is_constant() {
        let road = road2();
        let me = npc(100.0, 1.75, 9.0);
        let far_ego = VehicleState {
            id: 0,
            kind: VehicleKind::Ego,
            ..npc(400.0, 5.25, 14.0)
        };
        let path = plan_waypoints(&me, ManeuverKind::KeepSpeed, &road, &mut SimRng::new(3)).unwrap();
        let profile = plan_speed(&path, &me, &far_ego, PLANNING_HORIZON_S).unwrap();
        assert_eq!(profile.speeds, vec![9.0; path.points.len()]);
    }

    /// Reconstruct the s-t curve implied by a profile, by trapezoidal
    /// integration over the waypoint arcs.
    fn st_curve(arcs: &[f64], speeds: &[f64]) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0)];
        let mut t = 0.0;
        for i in 1..arcs.len() {
            let ds = arcs[i] - arcs[i - 1];
            let v_avg = 0.5 * (speeds[i] + speeds[i - 1]);
            if v_avg > 1e-9 {
                t += ds / v_avg;
            } else {
                t += 1e9; // stopped: time diverges
            }
            out.push((t, arcs[i]));
        }
        out
    }

    #[test]
    fn speed_plan_meets_reachable_region() {
        let road = road2();
        let me = npc(100.0, 1.75, 10.0);
        // EGO ahead in the same lane, slightly slower: occupancy exists and
        // is reachable.
        let ego = VehicleState {
            id: 0,
            kind: VehicleKind::Ego,
            ..npc(130.0, 1.75, 8.0)
        };
        let path = plan_waypoints(&me, ManeuverKind::KeepSpeed, &road, &mut SimRng::new(5)).unwrap();
        let region = occupied_region(&path, &me, &ego, PLANNING_HORIZON_S).expect("occupancy");
        let profile = plan_speed(&path, &me, &ego, PLANNING_HORIZON_S).unwrap();

        // Accel feasibility between consecutive samples.
        let arcs = path.arcs();
        for i in 1..arcs.len() {
            let ds = arcs[i] - arcs[i - 1];
            let dv2 = profile.speeds[i].powi(2) - profile.speeds[i - 1].powi(2);
            let implied = dv2 / (2.0 * ds);
            assert!(implied <= MAX_ACCEL + 1e-6 && implied >= -MAX_BRAKE - 1e-6);
        }

        // The implied s-t curve passes through the region.
        let curve = st_curve(&arcs, &profile.speeds);
        let hit = curve.iter().any(|&(t, s)| {
            t >= region.t_enter - 0.15
                && t <= region.t_exit + 0.15
                && s >= region.s_enter - 0.5
                && s <= region.s_exit + 0.5
        });
        assert!(hit, "curve misses region {region:?}");
    }

    #[test]
    fn speed_plan_saturates_when_unreachable() {
        let road = road2();
        let me = npc(100.0, 1.75, 2.0);
        // EGO crosses the path far ahead, too fast to catch: envelope
        // saturation toward the region means flat-out acceleration.
        let ego = VehicleState {
            id: 0,
            kind: VehicleKind::Ego,
            ..npc(150.0, 1.75, 15.0)
        };
        let path = plan_waypoints(&me, ManeuverKind::KeepSpeed, &road, &mut SimRng::new(7)).unwrap();
        let region = occupied_region(&path, &me, &ego, PLANNING_HORIZON_S);
        let profile = plan_speed(&path, &me, &ego, PLANNING_HORIZON_S).unwrap();
        if let Some(region) = region {
            let reachable = {
                let mut any = false;
                let mut t = region.t_enter;
                while t <= region.t_exit + 1e-9 {
                    if envelope_lo(2.0, t) <= region.s_exit.min(path.total_length)
                        && envelope_hi(2.0, t) >= region.s_enter
                        && region.s_enter <= path.total_length
                    {
                        any = true;
                        break;
                    }
                    t += FRAME_DT;
                }
                any
            };
            if !reachable {
                // Full-accel profile: every sample matches the envelope.
                let arcs = path.arcs();
                for (i, &s) in arcs.iter().enumerate() {
                    let expect = (4.0 + 2.0 * MAX_ACCEL * s).sqrt();
                    assert!((profile.speeds[i] - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn empty_path_is_an_error() {
        let me = npc(0.0, 1.75, 5.0);
        let ego = VehicleState { id: 0, kind: VehicleKind::Ego, ..me.clone() };
        let path = WaypointPath {
            points: vec![Point::new(0.0, 0.0)],
            phase_split: 1,
            total_length: 0.0,
        };
        assert_eq!(
            plan_speed(&path, &me, &ego, PLANNING_HORIZON_S).unwrap_err(),
            PlanError::EmptyPath
        );
    }
}
