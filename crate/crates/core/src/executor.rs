//! Scenario execution: load a configuration, step the world at 0.1 s
//! frames, run the NPC maneuver status machine, detect violations, and
//! emit a replayable simulation record.
//!
//! Within a frame, every decision and command observes the pre-step states
//! of all other vehicles (simultaneous update). EGO-involved collisions
//! end the run immediately and the record keeps only the frames before
//! contact; NPC-NPC collisions wreck the involved vehicles in place and
//! the run continues around them.

use thiserror::Error;

use crate::ego::{EgoController, EgoObservation, PERCEPTION_RANGE};
use crate::kinematics::{box_distance, boxes_collide, step_vehicle, KinematicsError, VehicleKind, VehicleState};
use crate::npc::NpcAgent;
use crate::record::{
    FrameRecord, Outcome, ParticipantSnapshot, SimulationRecord, VehicleFrame, VehicleInfo,
    ViolationEvent, ViolationKind,
};
use crate::road::{Point, RoadModel};
use crate::search::ScenarioConfig;
use crate::{FRAME_DT, VEHICLE_LENGTH, VEHICLE_WIDTH};

/// NPCs cruise at this speed until something makes them decide otherwise.
pub const NPC_INITIAL_SPEED: f64 = 8.0;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid scenario setup: {0}")]
    Setup(String),
    #[error("kinematics failure: {0}")]
    Numeric(#[from] KinematicsError),
}

/// Testing hooks for initial speeds; campaigns always run the defaults.
#[derive(Debug, Clone)]
pub struct SpawnOverrides {
    pub ego_speed: f64,
    pub npc_speeds: Vec<f64>,
}

impl Default for SpawnOverrides {
    fn default() -> Self {
        Self { ego_speed: 0.0, npc_speeds: Vec::new() }
    }
}

fn initial_states(config: &ScenarioConfig, overrides: &SpawnOverrides) -> Vec<VehicleState> {
    let mut states = vec![VehicleState {
        id: SimulationRecord::EGO_ID,
        kind: VehicleKind::Ego,
        position: config.ego_start,
        heading: 0.0,
        speed: overrides.ego_speed,
        box_length: VEHICLE_LENGTH,
        box_width: VEHICLE_WIDTH,
    }];
    for (k, p) in config.npc_starts.iter().enumerate() {
        let speed = overrides.npc_speeds.get(k).copied().unwrap_or(NPC_INITIAL_SPEED);
        states.push(VehicleState {
            id: (k + 1) as u32,
            kind: VehicleKind::Npc,
            position: *p,
            heading: 0.0,
            speed,
            box_length: VEHICLE_LENGTH,
            box_width: VEHICLE_WIDTH,
        });
    }
    states
}

fn maneuver_frame(states: &[VehicleState], agents: &[NpcAgent]) -> Vec<VehicleFrame> {
    states
        .iter()
        .map(|st| {
            let maneuver = if st.kind == VehicleKind::Npc {
                agents[(st.id - 1) as usize].maneuver_ref()
            } else {
                None
            };
            VehicleFrame {
                id: st.id,
                s: st.position.s,
                d: st.position.d,
                heading: st.heading,
                speed: st.speed,
                maneuver,
            }
        })
        .collect()
}

/// Execute one adversarial scenario to a complete record. Fully
/// deterministic in `(road, config, controller, ell, seed)`.
pub fn execute_scenario(
    road: &RoadModel,
    config: &ScenarioConfig,
    controller: &dyn EgoController,
    ell: f64,
    seed: u64,
) -> Result<SimulationRecord, ExecError> {
    execute_scenario_with(road, config, controller, ell, seed, &SpawnOverrides::default())
}

pub fn execute_scenario_with(
    road: &RoadModel,
    config: &ScenarioConfig,
    controller: &dyn EgoController,
    ell: f64,
    seed: u64,
    overrides: &SpawnOverrides,
) -> Result<SimulationRecord, ExecError> {
    if ell <= 0.0 || !ell.is_finite() {
        return Err(ExecError::Setup(format!("perception length must be positive, got {ell}")));
    }
    let mut states = initial_states(config, overrides);
    for st in &states {
        if !st.position.is_finite()
            || st.position.d < -st.box_width
            || st.position.d > road.road_width() + st.box_width
            || !road.contains_s(st.position.s)
        {
            return Err(ExecError::Setup(format!("vehicle {} spawns off-road", st.id)));
        }
    }
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            if boxes_collide(&states[i].bounding_box(), &states[j].bounding_box()) {
                return Err(ExecError::Setup(format!(
                    "vehicles {} and {} spawn overlapping",
                    states[i].id, states[j].id
                )));
            }
        }
    }

    let mut agents: Vec<NpcAgent> = (0..config.npc_starts.len())
        .map(|k| NpcAgent::new((k + 1) as u32, seed))
        .collect();

    let roster: Vec<VehicleInfo> = states
        .iter()
        .map(|st| VehicleInfo {
            id: st.id,
            kind: st.kind,
            box_length: st.box_length,
            box_width: st.box_width,
        })
        .collect();

    let mut frames: Vec<FrameRecord> = Vec::with_capacity(config.max_frames as usize);
    let mut outcome = Outcome::Completed;
    let mut ego_in_bubble = false;

    'frames: for frame in 1..=config.max_frames {
        let ego_snapshot = states[0].clone();
        ego_in_bubble |= ego_snapshot.position.s >= road.bubble_offset();

        // Decide and plan for every NPC whose maneuvers are all idle.
        for agent in agents.iter_mut() {
            if agent.is_wrecked() || !agent.all_idle() {
                continue;
            }
            let st = &states[agent.id as usize];
            agent.start_maneuver(st, &ego_snapshot, road, ell, ego_in_bubble);
        }

        // Commands from the pre-step snapshot.
        let mut neighbors: Vec<VehicleState> = states[1..]
            .iter()
            .filter(|n| (n.position.s - ego_snapshot.position.s).abs() <= PERCEPTION_RANGE)
            .cloned()
            .collect();
        neighbors.sort_by(|a, b| {
            let ga = (a.position.s - ego_snapshot.position.s).abs();
            let gb = (b.position.s - ego_snapshot.position.s).abs();
            ga.partial_cmp(&gb).unwrap().then(a.id.cmp(&b.id))
        });
        let obs = EgoObservation {
            self_state: ego_snapshot.clone(),
            destination: config.ego_destination,
            neighbors,
            road,
        };
        let ego_cmd = controller.decide(&obs);

        let npc_cmds: Vec<(Point, f64)> = agents
            .iter_mut()
            .map(|agent| agent.follow_target(&states[agent.id as usize]))
            .collect();

        // Simultaneous step.
        states[0] = step_vehicle(&states[0], ego_cmd.target_point, ego_cmd.target_speed, FRAME_DT)?;
        for (k, (target, speed)) in npc_cmds.iter().enumerate() {
            if agents[k].is_wrecked() {
                continue;
            }
            let idx = k + 1;
            states[idx] = step_vehicle(&states[idx], *target, *speed, FRAME_DT)?;
        }

        // EGO contact ends the run; the contact frame is not recorded.
        let ego_box = states[0].bounding_box();
        for npc in &states[1..] {
            if boxes_collide(&ego_box, &npc.bounding_box()) {
                outcome = Outcome::CollisionStopped;
                break 'frames;
            }
        }

        // NPC-NPC contact wrecks both vehicles in place.
        for i in 1..states.len() {
            for j in (i + 1)..states.len() {
                if agents[i - 1].is_wrecked() && agents[j - 1].is_wrecked() {
                    continue;
                }
                if boxes_collide(&states[i].bounding_box(), &states[j].bounding_box()) {
                    agents[i - 1].wreck();
                    agents[j - 1].wreck();
                    states[i].speed = 0.0;
                    states[j].speed = 0.0;
                }
            }
        }

        // Completion poll, after the step.
        for agent in agents.iter_mut() {
            if !agent.is_wrecked() {
                agent.check_complete(&states[agent.id as usize]);
            }
        }

        frames.push(FrameRecord { frame, vehicles: maneuver_frame(&states, &agents) });
    }

    let mut record = SimulationRecord {
        config: config.clone(),
        seed,
        roster,
        frames,
        violations: Vec::new(),
        outcome,
        liability: Vec::new(),
    };
    record.violations = detect_violations(&record, road);
    Ok(record)
}

fn snapshot_of(record: &SimulationRecord, frame_idx: usize, id: u32) -> Option<ParticipantSnapshot> {
    let vf = record.frames.get(frame_idx)?.vehicles.iter().find(|v| v.id == id)?;
    Some(ParticipantSnapshot {
        id,
        s: vf.s,
        d: vf.d,
        heading: vf.heading,
        speed: vf.speed,
        maneuver: vf.maneuver,
    })
}

/// Recompute the violation events of a record from its frames alone.
///
/// * `DestinationNotReached`: completed run whose final EGO position is
///   farther from the destination than half the EGO box length.
/// * `IllegalLineCross`: first frame where the EGO box touches an illegal
///   line.
/// * EGO collision: a collision-stopped record yields exactly one event;
///   the participants come from the contact test (nearest NPC) at the
///   final, truncated frame.
/// * NPC-NPC collisions: first frame of box contact per pair.
pub fn detect_violations(record: &SimulationRecord, road: &RoadModel) -> Vec<ViolationEvent> {
    let mut events: Vec<ViolationEvent> = Vec::new();
    if record.frames.is_empty() {
        return events;
    }
    let last_idx = record.frames.len() - 1;
    let last_frame_no = record.frames[last_idx].frame;
    let ego_id = SimulationRecord::EGO_ID;
    let npc_ids = record.npc_ids();

    // NPC-NPC first contacts.
    for (a_pos, &a) in npc_ids.iter().enumerate() {
        for &b in &npc_ids[a_pos + 1..] {
            for idx in 0..record.frames.len() {
                let (Some(sa), Some(sb)) = (record.state_at(idx, a), record.state_at(idx, b)) else {
                    break;
                };
                if boxes_collide(&sa.bounding_box(), &sb.bounding_box()) {
                    events.push(ViolationEvent {
                        kind: ViolationKind::Collision { first: a, second: b },
                        frame: record.frames[idx].frame,
                        participants: [a, b]
                            .iter()
                            .filter_map(|&id| snapshot_of(record, idx, id))
                            .collect(),
                    });
                    break;
                }
            }
        }
    }

    // First illegal-line contact of the EGO.
    for idx in 0..record.frames.len() {
        let Some(ego) = record.ego_state_at(idx) else { break };
        if road.distance_to_illegal_lines(&ego.bounding_box()) == 0.0 {
            events.push(ViolationEvent {
                kind: ViolationKind::IllegalLineCross,
                frame: record.frames[idx].frame,
                participants: snapshot_of(record, idx, ego_id).into_iter().collect(),
            });
            break;
        }
    }

    // The EGO collision behind a truncated record.
    if record.outcome == Outcome::CollisionStopped {
        if let Some(ego) = record.ego_state_at(last_idx) {
            let ego_box = ego.bounding_box();
            let nearest = npc_ids
                .iter()
                .filter_map(|&id| {
                    record
                        .state_at(last_idx, id)
                        .map(|st| (id, box_distance(&ego_box, &st.bounding_box())))
                })
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            if let Some((npc_id, _)) = nearest {
                events.push(ViolationEvent {
                    kind: ViolationKind::Collision { first: ego_id, second: npc_id },
                    frame: last_frame_no,
                    participants: [ego_id, npc_id]
                        .iter()
                        .filter_map(|&id| snapshot_of(record, last_idx, id))
                        .collect(),
                });
            }
        }
    }

    // Destination check at end of record, for completed runs only.
    if record.outcome == Outcome::Completed {
        if let Some(ego) = record.ego_state_at(last_idx) {
            let threshold = ego.box_length / 2.0;
            if ego.position.distance(&record.config.ego_destination) > threshold {
                events.push(ViolationEvent {
                    kind: ViolationKind::DestinationNotReached,
                    frame: last_frame_no,
                    participants: snapshot_of(record, last_idx, ego_id).into_iter().collect(),
                });
            }
        }
    }

    events.sort_by_key(|e| e.frame);
    events
}
