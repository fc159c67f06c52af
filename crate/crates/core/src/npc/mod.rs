//! The adversarial NPC brain: perception zones around the NPC locate the
//! EGO, a behavior tree turns the zone into a maneuver, and the planners
//! turn the maneuver into a waypoint path plus a speed profile timed
//! against the EGO's predicted occupancy.

mod agent;
mod behavior;
mod plan;
mod zones;

pub use agent::{ManeuverRef, ManeuverStatus, NpcAgent, DEFAULT_ELL};
pub use behavior::{BehaviorTree, BtError, ManeuverKind, Node};
pub use plan::{
    bezier_point, occupied_region, plan_speed, plan_waypoints, PlanError, SpeedProfile,
    StRegion, WaypointPath, MAX_SEGMENT_TURN, PLANNING_HORIZON_S, STRAIGHT_PLAN_LENGTH,
};
pub use zones::{detect_ego, Zone};
