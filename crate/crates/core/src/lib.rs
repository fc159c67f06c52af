//! Core engine for adversarial traffic-scenario fuzzing.
//!
//! The crate simulates a straight multi-lane road on which adversarial NPC
//! vehicles react to a pluggable EGO controller. NPCs locate the EGO in
//! perception zones, pick maneuvers via a behavior tree, and plan Bézier
//! waypoint paths with occupancy-timed speed profiles. A multi-objective
//! genetic search mutates scenario configurations toward collisions,
//! illegal-line contact, and destination failures; a rule-based liability
//! determiner then attributes each collision to the EGO or to an NPC.
//!
//! Everything is deterministic: fixed 0.1 s timestep, seeded xorshift
//! RNG streams, and stable iteration orders, so any persisted scenario
//! record can be replayed frame-for-frame from its `(config, seed)` pair.

pub mod campaign;
pub mod ego;
pub mod executor;
pub mod kinematics;
pub mod liability;
pub mod npc;
pub mod record;
pub mod rng;
pub mod road;
pub mod search;

pub use kinematics::{OrientedBox, VehicleKind, VehicleState};
pub use road::{LaneAssignment, Point, RoadModel};

/// Simulation timestep in seconds. One second is divided into 10 frames.
pub const FRAME_DT: f64 = 0.1;

/// Default vehicle bounding-box length in meters.
pub const VEHICLE_LENGTH: f64 = 4.7;

/// Default vehicle bounding-box width in meters.
pub const VEHICLE_WIDTH: f64 = 2.0;
