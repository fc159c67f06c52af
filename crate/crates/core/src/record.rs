//! Simulation records: the per-frame trace of a scenario run, its
//! violation events, and JSON persistence (one file per scenario,
//! bit-exact round trip).

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{VehicleKind, VehicleState};
use crate::liability::FaultVerdict;
use crate::npc::ManeuverRef;
use crate::road::Point;
use crate::search::ScenarioConfig;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed record: {0}")]
    Malformed(#[from] serde_json::Error),
}

/// Static per-vehicle data, recorded once per scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleInfo {
    pub id: u32,
    pub kind: VehicleKind,
    pub box_length: f64,
    pub box_width: f64,
}

/// One vehicle's state in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleFrame {
    pub id: u32,
    pub s: f64,
    pub d: f64,
    pub heading: f64,
    pub speed: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub maneuver: Option<ManeuverRef>,
}

/// World snapshot after one 0.1 s step. `frame` counts from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: u32,
    pub vehicles: Vec<VehicleFrame>,
}

impl FrameRecord {
    pub fn timestamp(&self) -> f64 {
        self.frame as f64 * crate::FRAME_DT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    CollisionStopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ViolationKind {
    Collision { first: u32, second: u32 },
    IllegalLineCross,
    DestinationNotReached,
}

impl ViolationKind {
    pub fn label(&self) -> &'static str {
        match self {
            ViolationKind::Collision { .. } => "collision",
            ViolationKind::IllegalLineCross => "illegal_line_cross",
            ViolationKind::DestinationNotReached => "destination_not_reached",
        }
    }

    pub fn involves_ego(&self, ego_id: u32) -> bool {
        match self {
            ViolationKind::Collision { first, second } => *first == ego_id || *second == ego_id,
            _ => true,
        }
    }
}

/// Position/maneuver snapshot of one vehicle involved in a violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSnapshot {
    pub id: u32,
    pub s: f64,
    pub d: f64,
    pub heading: f64,
    pub speed: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub maneuver: Option<ManeuverRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationEvent {
    pub kind: ViolationKind,
    pub frame: u32,
    pub participants: Vec<ParticipantSnapshot>,
}

/// The unit of persistence and fitness evaluation: a full scenario trace.
///
/// If the outcome is `CollisionStopped` the trace ends at the frame before
/// the collision, so no recorded frame contains EGO/NPC contact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub roster: Vec<VehicleInfo>,
    pub frames: Vec<FrameRecord>,
    pub violations: Vec<ViolationEvent>,
    pub outcome: Outcome,
    pub liability: Vec<FaultVerdict>,
}

impl SimulationRecord {
    pub const EGO_ID: u32 = 0;

    pub fn vehicle_info(&self, id: u32) -> Option<&VehicleInfo> {
        self.roster.iter().find(|v| v.id == id)
    }

    /// Rebuild a full kinematic state from a recorded frame.
    pub fn state_at(&self, frame_idx: usize, id: u32) -> Option<VehicleState> {
        let info = self.vehicle_info(id)?;
        let vf = self.frames.get(frame_idx)?.vehicles.iter().find(|v| v.id == id)?;
        Some(VehicleState {
            id,
            kind: info.kind,
            position: Point::new(vf.s, vf.d),
            heading: vf.heading,
            speed: vf.speed,
            box_length: info.box_length,
            box_width: info.box_width,
        })
    }

    pub fn ego_state_at(&self, frame_idx: usize) -> Option<VehicleState> {
        self.state_at(frame_idx, Self::EGO_ID)
    }

    pub fn npc_ids(&self) -> Vec<u32> {
        self.roster
            .iter()
            .filter(|v| v.kind == VehicleKind::Npc)
            .map(|v| v.id)
            .collect()
    }

    /// Simulated duration in seconds.
    pub fn sim_seconds(&self) -> f64 {
        self.frames.len() as f64 * crate::FRAME_DT
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, RecordError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), RecordError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RecordError> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{ScenarioConfig, Weather};

    fn tiny_record() -> SimulationRecord {
        SimulationRecord {
            config: ScenarioConfig {
                ego_start: Point::new(10.0, 1.75),
                ego_destination: Point::new(420.0, 1.75),
                npc_starts: vec![Point::new(100.0, 1.75)],
                weather: Weather {
                    rain: 0.25,
                    fog: 0.0,
                    wetness: 0.5,
                    cloudness: 0.125,
                    time: 13,
                },
                max_frames: 500,
            },
            seed: 42,
            roster: vec![
                VehicleInfo { id: 0, kind: VehicleKind::Ego, box_length: 4.7, box_width: 2.0 },
                VehicleInfo { id: 1, kind: VehicleKind::Npc, box_length: 4.7, box_width: 2.0 },
            ],
            frames: vec![FrameRecord {
                frame: 1,
                vehicles: vec![
                    VehicleFrame { id: 0, s: 10.1, d: 1.75, heading: 0.0, speed: 1.0, maneuver: None },
                    VehicleFrame { id: 1, s: 100.8, d: 1.75, heading: 0.0, speed: 8.0, maneuver: None },
                ],
            }],
            violations: vec![],
            outcome: Outcome::Completed,
            liability: vec![],
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let rec = tiny_record();
        let json = rec.to_json();
        let parsed = SimulationRecord::from_json(&json).unwrap();
        assert_eq!(parsed, rec);
        // Re-serialization reproduces the exact bytes.
        assert_eq!(parsed.to_json(), json);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("0").join("0.json");
        let rec = tiny_record();
        rec.save(&path).unwrap();
        let loaded = SimulationRecord::load(&path).unwrap();
        assert_eq!(loaded, rec);
    }

    #[test]
    fn state_reconstruction_uses_roster_dims() {
        let rec = tiny_record();
        let st = rec.state_at(0, 1).unwrap();
        assert_eq!(st.box_length, 4.7);
        assert_eq!(st.kind, VehicleKind::Npc);
        assert_eq!(st.position, Point::new(100.8, 1.75));
    }

    #[test]
    fn timestamps_step_by_one_frame() {
        let rec = tiny_record();
        assert!((rec.frames[0].timestamp() - 0.1).abs() < 1e-12);
    }
}
