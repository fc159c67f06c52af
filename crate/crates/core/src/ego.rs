//! Pluggable EGO controller interface and the deterministic baseline
//! stand-in for the driving stack under test.
//!
//! The baseline does car-following (IDM), destination routing, and
//! rule-compliant lane changes. It is deliberately imperfect: leaders are
//! only recognized once their box center enters the lane band, so late
//! cut-ins provoke late braking, and a fully blocked vehicle will squeeze
//! past obstacles even when that means touching an illegal line. Those
//! flaws are what let EGO-fault violations arise at all.

use crate::kinematics::VehicleState;
use crate::road::{Point, RoadModel};

/// Desired cruise speed of the baseline in m/s.
pub const V_DESIRED: f64 = 14.0;

/// Hard cap on commanded speed in m/s.
pub const V_MAX: f64 = 16.0;

/// IDM parameters: jam distance, headway, comfortable accel/brake.
pub const IDM_S0: f64 = 2.0;
pub const IDM_T: f64 = 1.5;
pub const IDM_A: f64 = 2.0;
pub const IDM_B: f64 = 3.0;

/// Lane-change gap thresholds in meters (bumper-to-bumper).
pub const GAP_FRONT: f64 = 15.0;
pub const GAP_REAR: f64 = 10.0;

/// A lane counts as blocked when its leader is slower than half the
/// desired speed within this bumper gap.
pub const BLOCK_GAP: f64 = 25.0;

/// Perception radius: NPCs beyond this are invisible to the controller.
pub const PERCEPTION_RANGE: f64 = 100.0;

const LOOKAHEAD: f64 = 12.0;

/// Everything the controller sees in one frame. `neighbors` holds all NPCs
/// within [`PERCEPTION_RANGE`], sorted by ascending longitudinal gap.
#[derive(Debug, Clone)]
pub struct EgoObservation<'a> {
    pub self_state: VehicleState,
    pub destination: Point,
    pub neighbors: Vec<VehicleState>,
    pub road: &'a RoadModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoCommand {
    pub target_point: Point,
    pub target_speed: f64,
}

/// A controller maps observations to commands. Implementations must be
/// deterministic: identical observations yield identical commands.
pub trait EgoController: Send + Sync {
    fn name(&self) -> &'static str;
    fn decide(&self, obs: &EgoObservation<'_>) -> EgoCommand;
}

/// Look up a controller by its CLI-facing name.
pub fn controller_by_name(name: &str) -> Option<Box<dyn EgoController>> {
    match name {
        "baseline" => Some(Box::new(BaselineEgo)),
        _ => None,
    }
}

/// Names accepted by [`controller_by_name`].
pub fn registered_controllers() -> &'static [&'static str] {
    &["baseline"]
}

/// The default EGO policy.
#[derive(Debug, Clone, Default)]
pub struct BaselineEgo;

struct LaneView<'a> {
    leader: Option<&'a VehicleState>,
    follower: Option<&'a VehicleState>,
}

fn bumper_gap(a: &VehicleState, b: &VehicleState) -> f64 {
    (a.position.s - b.position.s).abs() - (a.box_length + b.box_length) / 2.0
}

fn lane_view<'a>(
    me: &VehicleState,
    neighbors: &'a [VehicleState],
    road: &RoadModel,
    lane: usize,
) -> LaneView<'a> {
    let band_lo = lane as f64 * road.lane_width();
    let band_hi = band_lo + road.lane_width();
    let mut leader: Option<&VehicleState> = None;
    let mut follower: Option<&VehicleState> = None;
    for n in neighbors {
        // Band membership by box center only: vehicles hovering between
        // lanes are invisible to gap logic until they cross over.
        if n.position.d < band_lo || n.position.d >= band_hi {
            continue;
        }
        if n.position.s > me.position.s {
            if leader.map_or(true, |l| n.position.s < l.position.s) {
                leader = Some(n);
            }
        } else if follower.map_or(true, |f| n.position.s > f.position.s) {
            follower = Some(n);
        }
    }
    LaneView { leader, follower }
}

fn idm_speed(me: &VehicleState, leader: Option<&VehicleState>) -> f64 {
    let v = me.speed;
    let free = IDM_A * (1.0 - (v / V_DESIRED).powi(4));
    let accel = match leader {
        None => free,
        Some(l) => {
            let gap = bumper_gap(l, me).max(0.1);
            let dv = v - l.speed;
            let s_star = IDM_S0 + v * IDM_T + v * dv / (2.0 * (IDM_A * IDM_B).sqrt());
            free - IDM_A * (s_star.max(0.0) / gap).powi(2)
        }
    };
    (v + accel * crate::FRAME_DT).clamp(0.0, V_MAX)
}

fn gap_is_safe(me: &VehicleState, view: &LaneView<'_>) -> bool {
    let front_ok = view.leader.map_or(true, |l| bumper_gap(l, me) > GAP_FRONT);
    let rear_ok = view.follower.map_or(true, |f| bumper_gap(me, f) > GAP_REAR);
    front_ok && rear_ok
}

impl EgoController for BaselineEgo {
    fn name(&self) -> &'static str {
        "baseline"
    }

    fn decide(&self, obs: &EgoObservation<'_>) -> EgoCommand {
        let me = &obs.self_state;
        let road = obs.road;
        let current = road.nearest_lane(me.position.d);
        let dest_lane = road.nearest_lane(obs.destination.d);

        let cur_view = lane_view(me, &obs.neighbors, road, current);
        let blocked = cur_view.leader.map_or(false, |l| {
            bumper_gap(l, me) < BLOCK_GAP && l.speed < 0.5 * V_DESIRED
        });

        let step_toward_dest: i64 = match dest_lane.cmp(&current) {
            std::cmp::Ordering::Less => current as i64 - 1,
            std::cmp::Ordering::Greater => current as i64 + 1,
            std::cmp::Ordering::Equal => current as i64,
        };

        let mut target_lane = current;
        let mut illegal_squeeze = false;

        if step_toward_dest != current as i64 {
            let view = lane_view(me, &obs.neighbors, road, step_toward_dest as usize);
            if gap_is_safe(me, &view) {
                target_lane = step_toward_dest as usize;
            }
        }

        if target_lane == current && blocked {
            // Overtake: prefer the destination side, then the other side.
            let mut candidates = Vec::new();
            if step_toward_dest != current as i64 {
                candidates.push(step_toward_dest);
                candidates.push(2 * current as i64 - step_toward_dest);
            } else {
                candidates.push(current as i64 - 1);
                candidates.push(current as i64 + 1);
            }
            let mut found = false;
            for cand in candidates {
                if !road.lane_exists(cand) {
                    continue;
                }
                let view = lane_view(me, &obs.neighbors, road, cand as usize);
                if gap_is_safe(me, &view) {
                    target_lane = cand as usize;
                    found = true;
                    break;
                }
            }
            if !found {
                // No legal lane exists. Once crawling behind a dead stop,
                // squeeze past on the left, across the boundary line if
                // that is what it takes.
                let lead = cur_view.leader.expect("blocked implies a leader");
                if lead.speed < 1.0 && bumper_gap(lead, me) < 12.0 && me.speed < 3.0 {
                    illegal_squeeze = true;
                }
            }
        }

        let dist_to_dest = me.position.distance(&obs.destination);

        if illegal_squeeze {
            let squeeze_d = if current == 0 {
                // Left of the road's left boundary: clips the yellow/edge line.
                -0.1 * road.lane_width()
            } else {
                (current as f64 - 0.5) * road.lane_width() - 0.25 * road.lane_width()
            };
            return EgoCommand {
                target_point: Point::new(me.position.s + LOOKAHEAD, squeeze_d),
                target_speed: 5.0_f64.min(V_MAX),
            };
        }

        // Speed from the most restrictive of the current and target lanes.
        let mut speed = idm_speed(me, cur_view.leader);
        if target_lane != current {
            let view = lane_view(me, &obs.neighbors, road, target_lane);
            speed = speed.min(idm_speed(me, view.leader));
        }

        // Ramp down to stop at the destination.
        if dist_to_dest < 30.0 {
            let stop_speed = (2.0 * IDM_B * (dist_to_dest - 1.0).max(0.0)).sqrt();
            speed = speed.min(stop_speed);
        }

        let target_point = if dist_to_dest < LOOKAHEAD && target_lane == dest_lane {
            obs.destination
        } else {
            Point::new(me.position.s + LOOKAHEAD, road.centerline(target_lane))
        };

        EgoCommand { target_point, target_speed: speed.clamp(0.0, V_MAX) }
    }
}
