//! Per-NPC maneuver state machine and waypoint follower.
//!
//! An agent holds at most one active maneuver. While all maneuvers are
//! idle the executor asks it to decide (detect zone, tick the tree, plan);
//! the maneuver then runs until the vehicle reaches the final waypoint,
//! which returns it to idle. Wrecked agents stop in place and never decide
//! again.

use serde::{Deserialize, Serialize};

use super::behavior::{BehaviorTree, ManeuverKind};
use super::plan::{
    occupied_region, plan_speed, plan_waypoints, SpeedProfile, WaypointPath, PLANNING_HORIZON_S,
};
use super::zones::detect_ego;
use crate::kinematics::VehicleState;
use crate::rng::SimRng;
use crate::road::{Point, RoadModel};

/// Default perception-zone length in meters.
pub const DEFAULT_ELL: f64 = 20.0;

/// A maneuver completes when the vehicle is within this distance of the
/// final waypoint with the profile consumed.
pub const COMPLETION_TOLERANCE: f64 = 1.0;

/// Comfortable acceleration for kind-shaped straight profiles, m/s².
const SHAPING_ACCEL: f64 = 2.5;

/// Speed margin an accelerating NPC aims above the EGO, m/s.
const PASS_SPEED_MARGIN: f64 = 3.0;

/// Fraction of current speed a decelerating NPC ramps down to.
const DECEL_FRACTION: f64 = 0.4;

const LOOKAHEAD_STEPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManeuverStatus {
    Idle,
    Running,
}

/// Maneuver kind + status as recorded per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManeuverRef {
    pub kind: ManeuverKind,
    pub status: ManeuverStatus,
}

#[derive(Debug, Clone)]
struct ActivePlan {
    kind: ManeuverKind,
    path: WaypointPath,
    profile: SpeedProfile,
    cursor: usize,
}

#[derive(Debug, Clone)]
pub struct NpcAgent {
    pub id: u32,
    tree: BehaviorTree,
    rng: SimRng,
    active: Option<ActivePlan>,
    last_kind: Option<ManeuverKind>,
    wrecked: bool,
}

impl NpcAgent {
    pub fn new(id: u32, scenario_seed: u64) -> Self {
        Self {
            id,
            tree: BehaviorTree::standard(),
            rng: SimRng::derive(scenario_seed, id as u64),
            active: None,
            last_kind: None,
            wrecked: false,
        }
    }

    pub fn all_idle(&self) -> bool {
        self.active.is_none()
    }

    pub fn is_wrecked(&self) -> bool {
        self.wrecked
    }

    /// Mark the agent as crashed: it stops in place, aborts its maneuver,
    /// and persists as an obstacle.
    pub fn wreck(&mut self) {
        self.wrecked = true;
        self.active = None;
        self.last_kind = None;
    }

    /// Maneuver kind + status for the frame record. None before the first
    /// decision and after a wreck.
    pub fn maneuver_ref(&self) -> Option<ManeuverRef> {
        if self.wrecked {
            return None;
        }
        match (&self.active, self.last_kind) {
            (Some(plan), _) => Some(ManeuverRef { kind: plan.kind, status: ManeuverStatus::Running }),
            (None, Some(kind)) => Some(ManeuverRef { kind, status: ManeuverStatus::Idle }),
            (None, None) => None,
        }
    }

    /// Decide a maneuver kind for the detected zone. Lane changes toward a
    /// non-existent lane degrade to keep-speed.
    pub fn decide_maneuver(&mut self, state: &VehicleState, ego: &VehicleState, road: &RoadModel, ell: f64) -> ManeuverKind {
        let zone = detect_ego(state, ego, ell, road.lane_width());
        let kind = self.tree.tick(zone, &mut self.rng);
        let lane = road.nearest_lane(state.position.d) as i64;
        match kind {
            ManeuverKind::LeftChange if !road.lane_exists(lane - 1) => ManeuverKind::KeepSpeed,
            ManeuverKind::RightChange if !road.lane_exists(lane + 1) => ManeuverKind::KeepSpeed,
            other => other,
        }
    }

    /// Detect, decide, and plan a new maneuver. `ego_in_bubble` gates the
    /// adversarial behavior: until the EGO has entered the bubble the agent
    /// just keeps speed. Planning failures degrade to keep-speed rather
    /// than aborting the run.
    pub fn start_maneuver(
        &mut self,
        state: &VehicleState,
        ego: &VehicleState,
        road: &RoadModel,
        ell: f64,
        ego_in_bubble: bool,
    ) {
        debug_assert!(self.active.is_none() && !self.wrecked);
        let kind = if ego_in_bubble {
            self.decide_maneuver(state, ego, road, ell)
        } else {
            ManeuverKind::KeepSpeed
        };

        let (kind, path) = match plan_waypoints(state, kind, road, &mut self.rng) {
            Ok(path) => (kind, path),
            Err(_) => {
                let fallback = plan_waypoints(state, ManeuverKind::KeepSpeed, road, &mut self.rng)
                    .expect("straight plans cannot fail");
                (ManeuverKind::KeepSpeed, fallback)
            }
        };

        let profile = self.shape_profile(kind, &path, state, ego);
        self.active = Some(ActivePlan { kind, path, profile, cursor: 0 });
    }

    /// Occupancy-timed profile where it applies; otherwise kind-shaped
    /// straight ramps (keep-speed holds, acceleration ramps past the EGO's
    /// speed, deceleration ramps down to hinder).
    fn shape_profile(
        &self,
        kind: ManeuverKind,
        path: &WaypointPath,
        state: &VehicleState,
        ego: &VehicleState,
    ) -> SpeedProfile {
        let n = path.points.len();
        let arcs = path.arcs();
        let shaped = |v_target: f64| {
            let v0 = state.speed;
            let speeds = arcs
                .iter()
                .map(|&s| {
                    if v_target >= v0 {
                        (v0 * v0 + 2.0 * SHAPING_ACCEL * s).sqrt().min(v_target)
                    } else {
                        (v0 * v0 - 2.0 * SHAPING_ACCEL * s).max(0.0).sqrt().max(v_target)
                    }
                })
                .collect();
            SpeedProfile { speeds }
        };

        match kind {
            ManeuverKind::KeepSpeed => SpeedProfile::constant(state.speed, n),
            ManeuverKind::AccelerationStraight => {
                if occupied_region(path, state, ego, PLANNING_HORIZON_S).is_some() {
                    plan_speed(path, state, ego, PLANNING_HORIZON_S)
                        .unwrap_or_else(|_| SpeedProfile::constant(state.speed, n))
                } else {
                    shaped(state.speed.max(ego.speed) + PASS_SPEED_MARGIN)
                }
            }
            ManeuverKind::DecelerationStraight => {
                if occupied_region(path, state, ego, PLANNING_HORIZON_S).is_some() {
                    plan_speed(path, state, ego, PLANNING_HORIZON_S)
                        .unwrap_or_else(|_| SpeedProfile::constant(state.speed, n))
                } else {
                    shaped(DECEL_FRACTION * state.speed)
                }
            }
            ManeuverKind::LeftChange | ManeuverKind::RightChange => {
                plan_speed(path, state, ego, PLANNING_HORIZON_S)
                    .unwrap_or_else(|_| SpeedProfile::constant(state.speed, n))
            }
        }
    }

    /// Advance the follower cursor past captured or passed waypoints and
    /// return the current steering target. Wrecked or idle agents hold
    /// position/speed.
    pub fn follow_target(&mut self, state: &VehicleState) -> (Point, f64) {
        if self.wrecked {
            return (state.position, 0.0);
        }
        let Some(plan) = self.active.as_mut() else {
            return (Point::new(state.position.s + 5.0, state.position.d), state.speed);
        };
        let points = &plan.path.points;
        let last = points.len() - 1;
        while plan.cursor < last {
            let wp = points[plan.cursor];
            let captured = state.position.distance(&wp) < COMPLETION_TOLERANCE;
            let next = points[plan.cursor + 1];
            let seg = (next.s - wp.s, next.d - wp.d);
            let rel = (wp.s - state.position.s, wp.d - state.position.d);
            let passed = rel.0 * seg.0 + rel.1 * seg.1 <= 0.0;
            if captured || passed {
                plan.cursor += 1;
            } else {
                break;
            }
        }
        let target_idx = (plan.cursor + LOOKAHEAD_STEPS).min(last);
        (points[target_idx], plan.profile.speeds[plan.cursor])
    }

    /// Post-step completion poll: returns the maneuver to idle once the
    /// vehicle reaches the final waypoint with the profile consumed.
    pub fn check_complete(&mut self, state: &VehicleState) -> bool {
        let done = match &self.active {
            Some(plan) => {
                plan.cursor == plan.path.points.len() - 1
                    && state.position.distance(plan.path.points.last().unwrap())
                        <= COMPLETION_TOLERANCE
            }
            None => false,
        };
        if done {
            let plan = self.active.take().unwrap();
            self.last_kind = Some(plan.kind);
        }
        done
    }

    /// Kind of the running maneuver, if any.
    pub fn active_kind(&self) -> Option<ManeuverKind> {
        self.active.as_ref().map(|p| p.kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{step_vehicle, VehicleKind};
    use crate::FRAME_DT;

    fn vehicle(id: u32, s: f64, d: f64, speed: f64) -> VehicleState {
        VehicleState {
            id,
            kind: if id == 0 { VehicleKind::Ego } else { VehicleKind::Npc },
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
    fn pre_bubble_agents_keep_speed() {
        let road = road2();
        let mut agent = NpcAgent::new(1, 99);
        let npc = vehicle(1, 100.0, 1.75, 8.0);
        let ego = vehicle(0, 95.0, 1.75, 14.0); // would be N1 if detected
        agent.start_maneuver(&npc, &ego, &road, DEFAULT_ELL, false);
        assert_eq!(agent.active_kind(), Some(ManeuverKind::KeepSpeed));
        assert_eq!(
            agent.maneuver_ref(),
            Some(ManeuverRef { kind: ManeuverKind::KeepSpeed, status: ManeuverStatus::Running })
        );
    }

    #[test]
    fn lane_change_without_target_lane_degrades() {
        let road = road2();
        let mut agent = NpcAgent::new(1, 4);
        let npc = vehicle(1, 100.0, 1.75, 8.0);
        // EGO in L2 position relative to the NPC would demand LEFT_CHANGE,
        // but lane -1 does not exist.
        let ego = vehicle(0, 100.0, -2.0, 14.0);
        let kind = agent.decide_maneuver(&npc, &ego, &road, DEFAULT_ELL);
        assert_eq!(kind, ManeuverKind::KeepSpeed);
    }

    #[test]
    fn maneuver_runs_to_completion_and_returns_to_idle() {
        let road = road2();
        let mut agent = NpcAgent::new(1, 7);
        let mut npc = vehicle(1, 100.0, 1.75, 8.0);
        let ego = vehicle(0, 300.0, 5.25, 14.0); // undetected
        agent.start_maneuver(&npc, &ego, &road, DEFAULT_ELL, true);
        assert!(!agent.all_idle());
        let mut completed = false;
        for _ in 0..2000 {
            let (target, speed) = agent.follow_target(&npc);
            npc = step_vehicle(&npc, target, speed, FRAME_DT).unwrap();
            if agent.check_complete(&npc) {
                completed = true;
                break;
            }
        }
        assert!(completed, "keep-speed maneuver never completed");
        assert!(agent.all_idle());
        assert_eq!(
            agent.maneuver_ref().unwrap().status,
            ManeuverStatus::Idle
        );
    }

    #[test]
    fn wrecked_agent_parks() {
        let mut agent = NpcAgent::new(1, 7);
        agent.wreck();
        let npc = vehicle(1, 100.0, 1.75, 8.0);
        let (target, speed) = agent.follow_target(&npc);
        assert_eq!(speed, 0.0);
        assert_eq!(target, npc.position);
        assert_eq!(agent.maneuver_ref(), None);
    }
}
