//! Rule-based liability attribution for EGO-involved collisions.
//!
//! Rear vehicles are responsible for rear-end collisions, lane changers
//! for collisions during an incomplete lane change. Concretely, with x the
//! projection of (EGO - NPC) onto the NPC's forward axis at the contact
//! frame:
//!
//! 1. both boxes entirely in the same lane and x > 0 (the NPC rear-ended
//!    the EGO) -> NPC fault;
//! 2. the NPC's lane-change maneuver still RUNNING while the EGO kept its
//!    lane over the trailing window -> NPC fault;
//! 3. everything else -> EGO fault.
//!
//! Verdicts are a pure function of the persisted record.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::npc::{ManeuverRef, ManeuverStatus};
use crate::record::{SimulationRecord, ViolationEvent, ViolationKind};
use crate::road::{LaneAssignment, RoadModel};

/// Trailing window (in frames) over which the EGO's lane history decides
/// `switched`.
pub const SWITCH_WINDOW: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum LiabilityError {
    #[error("collision does not involve the EGO vehicle")]
    NotApplicable,
    #[error("record has no frames")]
    EmptyRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    EgoFault,
    NpcFault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleFired {
    RearEndByNpc,
    NpcUnsafeLaneChange,
    DefaultEgo,
}

/// Inputs the rules actually saw, kept for auditing fixture disagreements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub x_projection: f64,
    pub ego_lane: Option<LaneAssignment>,
    pub npc_lane: Option<LaneAssignment>,
    pub ego_switched: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub npc_maneuver: Option<ManeuverRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultVerdict {
    pub collision_frame: u32,
    pub npc_id: u32,
    pub verdict: Verdict,
    pub rule_fired: RuleFired,
    pub evidence: Evidence,
}

/// Whether the EGO's lane assignment changed within the final
/// `min(window, available)` frames. Straddling frames bridge between
/// concrete assignments; only a transition between two different concrete
/// lanes counts.
pub fn switched(record: &SimulationRecord, road: &RoadModel, window: usize) -> bool {
    let n = record.frames.len();
    let start = n.saturating_sub(window);
    let mut last_lane: Option<usize> = None;
    for idx in start..n {
        let Some(ego) = record.ego_state_at(idx) else { continue };
        match road.lane_of_box(&ego.bounding_box()) {
            Ok(LaneAssignment::Lane(lane)) => {
                if let Some(prev) = last_lane {
                    if prev != lane {
                        return true;
                    }
                }
                last_lane = Some(lane);
            }
            Ok(LaneAssignment::Straddling) | Err(_) => {}
        }
    }
    false
}

/// Attribute one EGO-involved collision. The contact-frame geometry is
/// taken from the final recorded frame (the record truncates before
/// contact).
pub fn determine_liability(
    record: &SimulationRecord,
    road: &RoadModel,
    collision: &ViolationEvent,
) -> Result<FaultVerdict, LiabilityError> {
    let ego_id = SimulationRecord::EGO_ID;
    let npc_id = match collision.kind {
        ViolationKind::Collision { first, second } => {
            if first == ego_id {
                second
            } else if second == ego_id {
                first
            } else {
                return Err(LiabilityError::NotApplicable);
            }
        }
        _ => return Err(LiabilityError::NotApplicable),
    };
    if record.frames.is_empty() {
        return Err(LiabilityError::EmptyRecord);
    }

    let contact_idx = record.frames.len() - 1;
    let ego = record.ego_state_at(contact_idx).ok_or(LiabilityError::EmptyRecord)?;
    let npc = record.state_at(contact_idx, npc_id).ok_or(LiabilityError::EmptyRecord)?;

    let dp = (
        ego.position.s - npc.position.s,
        ego.position.d - npc.position.d,
    );
    let fwd = npc.forward();
    let x = dp.0 * fwd.0 + dp.1 * fwd.1;

    let ego_lane = road.lane_of_box(&ego.bounding_box()).ok();
    let npc_lane = road.lane_of_box(&npc.bounding_box()).ok();
    let ego_switched = switched(record, road, SWITCH_WINDOW);
    let npc_maneuver = record.frames[contact_idx]
        .vehicles
        .iter()
        .find(|v| v.id == npc_id)
        .and_then(|v| v.maneuver);

    let same_lane = matches!(
        (ego_lane, npc_lane),
        (Some(LaneAssignment::Lane(a)), Some(LaneAssignment::Lane(b))) if a == b
    );
    let npc_changing = npc_maneuver.map_or(false, |m| {
        m.status == ManeuverStatus::Running && m.kind.is_lane_change()
    });

    let (verdict, rule_fired) = if same_lane && x > 0.0 {
        (Verdict::NpcFault, RuleFired::RearEndByNpc)
    } else if npc_changing && !ego_switched {
        (Verdict::NpcFault, RuleFired::NpcUnsafeLaneChange)
    } else {
        (Verdict::EgoFault, RuleFired::DefaultEgo)
    };

    Ok(FaultVerdict {
        collision_frame: collision.frame,
        npc_id,
        verdict,
        rule_fired,
        evidence: Evidence { x_projection: x, ego_lane, npc_lane, ego_switched, npc_maneuver },
    })
}

/// Compute verdicts for every EGO-involved collision in a record.
pub fn determine_all(record: &SimulationRecord, road: &RoadModel) -> Vec<FaultVerdict> {
    record
        .violations
        .iter()
        .filter(|v| {
            matches!(v.kind, ViolationKind::Collision { .. })
                && v.kind.involves_ego(SimulationRecord::EGO_ID)
        })
        .filter_map(|v| determine_liability(record, road, v).ok())
        .collect()
}

/// A violation attributed to the EGO across a set of records: EGO-fault
/// collisions plus every rule-breaking event.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoCausedViolation {
    pub record_index: usize,
    pub kind_label: &'static str,
    pub frame: u32,
}

/// The final EGO-caused violation set: NPC-fault collisions are dropped,
/// remaining collisions are combined with all rule-breaking violations.
pub fn ego_fault_set(records: &[SimulationRecord]) -> Vec<EgoCausedViolation> {
    let mut out = Vec::new();
    for (record_index, rec) in records.iter().enumerate() {
        for v in &rec.violations {
            match v.kind {
                ViolationKind::Collision { .. } => {
                    if !v.kind.involves_ego(SimulationRecord::EGO_ID) {
                        continue;
                    }
                    let ego_fault = rec
                        .liability
                        .iter()
                        .find(|fv| fv.collision_frame == v.frame)
                        .map_or(false, |fv| fv.verdict == Verdict::EgoFault);
                    if ego_fault {
                        out.push(EgoCausedViolation {
                            record_index,
                            kind_label: v.kind.label(),
                            frame: v.frame,
                        });
                    }
                }
                ViolationKind::IllegalLineCross | ViolationKind::DestinationNotReached => {
                    out.push(EgoCausedViolation {
                        record_index,
                        kind_label: v.kind.label(),
                        frame: v.frame,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::npc::ManeuverKind;
    use crate::record::{
        FrameRecord, Outcome, ParticipantSnapshot, VehicleFrame, VehicleInfo,
    };
    use crate::road::Point;
    use crate::search::{ScenarioConfig, Weather};
    use crate::VehicleKind;

    fn road2() -> RoadModel {
        RoadModel::build(2, 3.5, 500.0, 50.0, 300.0).unwrap()
    }

    fn base_config() -> ScenarioConfig {
        ScenarioConfig {
            ego_start: Point::new(10.0, 1.75),
            ego_destination: Point::new(420.0, 1.75),
            npc_starts: vec![Point::new(100.0, 1.75)],
            weather: Weather { rain: 0.0, fog: 0.0, wetness: 0.0, cloudness: 0.0, time: 12 },
            max_frames: 500,
        }
    }

    /// Build a collision-stopped record from per-frame (ego, npc) poses.
    /// Each pose is (s, d, heading); the NPC carries `maneuver` on every
    /// frame.
    fn collision_record(
        track: &[((f64, f64, f64), (f64, f64, f64))],
        npc_maneuver: Option<ManeuverRef>,
    ) -> SimulationRecord {
        let frames: Vec<FrameRecord> = track
            .iter()
            .enumerate()
            .map(|(i, &((es, ed, eh), (ns, nd, nh)))| FrameRecord {
                frame: (i + 1) as u32,
                vehicles: vec![
                    VehicleFrame { id: 0, s: es, d: ed, heading: eh, speed: 10.0, maneuver: None },
                    VehicleFrame { id: 1, s: ns, d: nd, heading: nh, speed: 8.0, maneuver: npc_maneuver },
                ],
            })
            .collect();
        let last = frames.len() as u32;
        let (ego_last, npc_last) = track[track.len() - 1];
        SimulationRecord {
            config: base_config(),
            seed: 7,
            roster: vec![
                VehicleInfo { id: 0, kind: VehicleKind::Ego, box_length: 4.7, box_width: 2.0 },
                VehicleInfo { id: 1, kind: VehicleKind::Npc, box_length: 4.7, box_width: 2.0 },
            ],
            frames,
            violations: vec![ViolationEvent {
                kind: ViolationKind::Collision { first: 0, second: 1 },
                frame: last,
                participants: vec![
                    ParticipantSnapshot {
                        id: 0,
                        s: ego_last.0,
                        d: ego_last.1,
                        heading: ego_last.2,
                        speed: 10.0,
                        maneuver: None,
                    },
                    ParticipantSnapshot {
                        id: 1,
                        s: npc_last.0,
                        d: npc_last.1,
                        heading: npc_last.2,
                        speed: 8.0,
                        maneuver: npc_maneuver,
                    },
                ],
            }],
            outcome: Outcome::CollisionStopped,
            liability: vec![],
        }
    }

    fn running(kind: ManeuverKind) -> Option<ManeuverRef> {
        Some(ManeuverRef { kind, status: ManeuverStatus::Running })
    }

    #[test]
    fn switched_cases() {
        let road = road2();
        // Holds lane 0 for all frames.
        let hold: Vec<_> = (0..40)
            .map(|i| ((100.0 + i as f64, 1.75, 0.0), (300.0, 5.25, 0.0)))
            .collect();
        assert!(!switched(&collision_record(&hold, None), &road, SWITCH_WINDOW));

        // Lane 0 -> straddling -> lane 1 inside the window.
        let mut change = hold.clone();
        for (i, frame) in change.iter_mut().enumerate().skip(20) {
            let d = 1.75 + ((i - 20) as f64 * 0.35).min(3.5);
            frame.0 = (100.0 + i as f64, d, 0.0);
        }
        assert!(switched(&collision_record(&change, None), &road, SWITCH_WINDOW));

        // Lane change completed 40 frames before the end: the trailing
        // window only ever sees lane 1.
        let mut early: Vec<_> = (0..30)
            .map(|i| ((60.0 + i as f64, 1.75 + i as f64 * 0.35, 0.0), (300.0, 5.25, 0.0)))
            .collect();
        for f in early.iter_mut() {
            f.0 .1 = f.0 .1.min(5.25);
        }
        early.extend((0..40).map(|i| ((90.0 + i as f64, 5.25, 0.0), (300.0, 5.25, 0.0))));
        assert!(!switched(&collision_record(&early, None), &road, SWITCH_WINDOW));
    }

    /// Same-lane pursuit track with a shrinking bumper gap: `rear` trails
    /// `front` by `gap0` shrinking to just under contact.
    fn pursuit_track(front_start: f64, gap0: f64) -> Vec<((f64, f64, f64), (f64, f64, f64))> {
        (0..35)
            .map(|i| {
                let t = i as f64;
                let front = front_start + 0.5 * t;
                let gap = gap0 - (gap0 - 4.9) * t / 34.0;
                ((front, 1.75, 0.0), (front - gap, 1.75, 0.0))
            })
            .collect()
    }

    #[test]
    fn npc_rear_ends_ego_same_lane() {
        let road = road2();
        // NPC behind the EGO in lane 0, closing to near contact: x > 0.
        let track = pursuit_track(120.0, 10.0);
        let rec = collision_record(&track, running(ManeuverKind::KeepSpeed));
        let fv = determine_liability(&rec, &road, &rec.violations[0]).unwrap();
        assert_eq!(fv.verdict, Verdict::NpcFault);
        assert_eq!(fv.rule_fired, RuleFired::RearEndByNpc);
        assert!(fv.evidence.x_projection > 0.0);
    }

    #[test]
    fn npc_mid_lane_change_hits_lane_keeping_ego() {
        let road = road2();
        // NPC cutting from lane 1 toward lane 0, still straddling at
        // contact; EGO holds lane 0 ahead of it... actually beside it.
        let track: Vec<_> = (0..35)
            .map(|i| {
                let t = i as f64;
                let npc_d = 5.25 - (t * 0.11).min(2.2); // ends straddling
                ((120.0 + t, 1.75, 0.0), (118.0 + 1.1 * t, npc_d, -0.1))
            })
            .collect();
        let rec = collision_record(&track, running(ManeuverKind::LeftChange));
        let fv = determine_liability(&rec, &road, &rec.violations[0]).unwrap();
        assert_eq!(fv.verdict, Verdict::NpcFault);
        assert_eq!(fv.rule_fired, RuleFired::NpcUnsafeLaneChange);
        assert!(!fv.evidence.ego_switched);
    }

    #[test]
    fn ego_rear_ends_npc_is_ego_fault() {
        let road = road2();
        // EGO behind the NPC in the same lane, closing: x < 0, NPC lane-
        // keeping.
        let track: Vec<_> = pursuit_track(120.0, 10.0)
            .into_iter()
            .map(|(front, rear)| (rear, front)) // swap roles: EGO is the rear vehicle
            .collect();
        let rec = collision_record(&track, running(ManeuverKind::KeepSpeed));
        let fv = determine_liability(&rec, &road, &rec.violations[0]).unwrap();
        assert_eq!(fv.verdict, Verdict::EgoFault);
        assert_eq!(fv.rule_fired, RuleFired::DefaultEgo);
        assert!(fv.evidence.x_projection < 0.0);
    }

    #[test]
    fn straddling_blocks_rear_end_rule() {
        let road = road2();
        // NPC behind (x > 0) but straddling the lane boundary: rule 1 must
        // not fire, and with a running lane change + lane-keeping EGO the
        // verdict is NPC fault via rule 2.
        let track: Vec<_> = (0..35)
            .map(|i| {
                let t = i as f64;
                ((130.0 + 0.5 * t, 1.75, 0.0), (112.0 + 1.4 * t, 3.5, -0.05))
            })
            .collect();
        let rec = collision_record(&track, running(ManeuverKind::LeftChange));
        let fv = determine_liability(&rec, &road, &rec.violations[0]).unwrap();
        assert_eq!(fv.rule_fired, RuleFired::NpcUnsafeLaneChange);
        assert_eq!(fv.evidence.npc_lane, Some(LaneAssignment::Straddling));
    }

    #[test]
    fn npc_only_collision_not_applicable() {
        let road = road2();
        let track = vec![((100.0, 1.75, 0.0), (150.0, 5.25, 0.0))];
        let mut rec = collision_record(&track, None);
        rec.violations[0].kind = ViolationKind::Collision { first: 1, second: 2 };
        assert_eq!(
            determine_liability(&rec, &road, &rec.violations[0]).unwrap_err(),
            LiabilityError::NotApplicable
        );
    }

    #[test]
    fn ego_fault_set_arithmetic() {
        let road = road2();
        // 10 collision records of which 7 are EGO fault, plus 3 records
        // with rule-breaking events: 10 EGO-caused violations.
        let mut records = Vec::new();
        for i in 0..10 {
            let track: Vec<_> = if i < 7 {
                // EGO rear-ends the NPC: EGO fault.
                pursuit_track(120.0, 10.0).into_iter().map(|(f, r)| (r, f)).collect()
            } else {
                // NPC rear-ends the EGO: NPC fault.
                pursuit_track(120.0, 10.0)
            };
            let mut rec = collision_record(&track, running(ManeuverKind::KeepSpeed));
            rec.liability = determine_all(&rec, &road);
            records.push(rec);
        }
        for _ in 0..3 {
            let track = vec![((100.0, 1.75, 0.0), (300.0, 5.25, 0.0))];
            let mut rec = collision_record(&track, None);
            rec.outcome = Outcome::Completed;
            rec.violations = vec![ViolationEvent {
                kind: ViolationKind::DestinationNotReached,
                frame: 1,
                participants: vec![],
            }];
            records.push(rec);
        }
        let set = ego_fault_set(&records);
        assert_eq!(set.len(), 10);
        let collisions = set.iter().filter(|v| v.kind_label == "collision").count();
        assert_eq!(collisions, 7);
    }
}
