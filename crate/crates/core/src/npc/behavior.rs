//! Behavior tree mapping perception zones to maneuver decisions.
//!
//! Sequence nodes pass activation from one child to the next and fail as
//! soon as a child fails. Selector nodes activate their children in random
//! order until one succeeds. Condition leaves test the detected zone;
//! action leaves select a maneuver. One tick yields exactly one selected
//! maneuver.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::zones::Zone;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManeuverKind {
    KeepSpeed,
    AccelerationStraight,
    DecelerationStraight,
    LeftChange,
    RightChange,
}

impl ManeuverKind {
    pub fn is_lane_change(self) -> bool {
        matches!(self, ManeuverKind::LeftChange | ManeuverKind::RightChange)
    }
}

#[derive(Debug, Clone)]
pub enum Node {
    Sequence(Vec<Node>),
    Selector(Vec<Node>),
    Condition(Zone),
    Action(ManeuverKind),
}

#[derive(Debug, Error, PartialEq)]
pub enum BtError {
    #[error("composite node with no children")]
    EmptyComposite,
    #[error("tree has no action leaves")]
    NoActions,
}

#[derive(Debug, Clone)]
pub struct BehaviorTree {
    root: Node,
}

enum TickResult {
    Success(Option<ManeuverKind>),
    Failure,
}

fn tick_node(node: &Node, zone: Zone, rng: &mut SimRng) -> TickResult {
    match node {
        Node::Condition(z) => {
            if *z == zone {
                TickResult::Success(None)
            } else {
                TickResult::Failure
            }
        }
        Node::Action(kind) => TickResult::Success(Some(*kind)),
        Node::Sequence(children) => {
            let mut selected = None;
            for child in children {
                match tick_node(child, zone, rng) {
                    TickResult::Success(kind) => selected = selected.or(kind),
                    TickResult::Failure => return TickResult::Failure,
                }
            }
            TickResult::Success(selected)
        }
        Node::Selector(children) => {
            for i in rng.shuffled_indices(children.len()) {
                if let TickResult::Success(kind) = tick_node(&children[i], zone, rng) {
                    return TickResult::Success(kind);
                }
            }
            TickResult::Failure
        }
    }
}

fn validate(node: &Node, actions: &mut usize) -> Result<(), BtError> {
    match node {
        Node::Sequence(children) | Node::Selector(children) => {
            if children.is_empty() {
                return Err(BtError::EmptyComposite);
            }
            for c in children {
                validate(c, actions)?;
            }
            Ok(())
        }
        Node::Action(_) => {
            *actions += 1;
            Ok(())
        }
        Node::Condition(_) => Ok(()),
    }
}

impl BehaviorTree {
    /// Structural problems surface here, never at tick time.
    pub fn new(root: Node) -> Result<Self, BtError> {
        let mut actions = 0;
        validate(&root, &mut actions)?;
        if actions == 0 {
            return Err(BtError::NoActions);
        }
        Ok(Self { root })
    }

    /// The main-lane maneuver policy:
    ///
    /// * undetected / F1 -> keep speed
    /// * N1 -> decelerate straight
    /// * L1 / R1 -> keep speed or change toward the EGO's side, at random
    /// * L2 / R2 -> change toward the EGO's side
    /// * L3 / R3 -> accelerate straight
    pub fn standard() -> Self {
        let seq = |zone, node| Node::Sequence(vec![Node::Condition(zone), node]);
        let act = Node::Action;
        let root = Node::Selector(vec![
            seq(Zone::NotDetected, act(ManeuverKind::KeepSpeed)),
            seq(Zone::N1, act(ManeuverKind::DecelerationStraight)),
            seq(Zone::F1, act(ManeuverKind::KeepSpeed)),
            seq(
                Zone::L1,
                Node::Selector(vec![
                    act(ManeuverKind::KeepSpeed),
                    act(ManeuverKind::LeftChange),
                ]),
            ),
            seq(Zone::L2, act(ManeuverKind::LeftChange)),
            seq(Zone::L3, act(ManeuverKind::AccelerationStraight)),
            seq(
                Zone::R1,
                Node::Selector(vec![
                    act(ManeuverKind::KeepSpeed),
                    act(ManeuverKind::RightChange),
                ]),
            ),
            seq(Zone::R2, act(ManeuverKind::RightChange)),
            seq(Zone::R3, act(ManeuverKind::AccelerationStraight)),
        ]);
        Self::new(root).expect("standard tree is well-formed")
    }

    /// Tick the tree for one zone observation. Pure in (zone, rng state):
    /// replaying the seed replays the decision sequence.
    pub fn tick(&self, zone: Zone, rng: &mut SimRng) -> ManeuverKind {
        match tick_node(&self.root, zone, rng) {
            TickResult::Success(Some(kind)) => kind,
            // Unreachable for trees built via `new` with full zone coverage;
            // fall back to the only always-safe maneuver.
            _ => ManeuverKind::KeepSpeed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn l2_always_changes_left() {
        let tree = BehaviorTree::standard();
        let mut rng = SimRng::new(11);
        for _ in 0..200 {
            assert_eq!(tree.tick(Zone::L2, &mut rng), ManeuverKind::LeftChange);
        }
    }

    #[test]
    fn undetected_keeps_speed() {
        let tree = BehaviorTree::standard();
        let mut rng = SimRng::new(5);
        for _ in 0..200 {
            assert_eq!(tree.tick(Zone::NotDetected, &mut rng), ManeuverKind::KeepSpeed);
        }
    }

    #[test]
    fn l1_selector_visits_both_branches() {
        let tree = BehaviorTree::standard();
        let mut rng = SimRng::new(77);
        let mut seen = HashSet::new();
        for _ in 0..1000 {
            seen.insert(tree.tick(Zone::L1, &mut rng));
        }
        assert!(seen.contains(&ManeuverKind::KeepSpeed));
        assert!(seen.contains(&ManeuverKind::LeftChange));
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn tick_is_pure_in_zone_and_seed() {
        let tree = BehaviorTree::standard();
        let zones = [Zone::L1, Zone::R1, Zone::N1, Zone::L2, Zone::F1];
        let run = |seed| {
            let mut rng = SimRng::new(seed);
            (0..100)
                .map(|i| tree.tick(zones[i % zones.len()], &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(123), run(123));
        assert_ne!(run(123), run(124));
    }

    #[test]
    fn malformed_tree_fails_at_construction() {
        assert_eq!(
            BehaviorTree::new(Node::Selector(vec![])).unwrap_err(),
            BtError::EmptyComposite
        );
        assert_eq!(
            BehaviorTree::new(Node::Condition(Zone::F1)).unwrap_err(),
            BtError::NoActions
        );
    }

    #[test]
    fn sequence_fails_fast_on_condition() {
        // A sequence whose condition does not match must not select its
        // action.
        let tree = BehaviorTree::new(Node::Selector(vec![
            Node::Sequence(vec![
                Node::Condition(Zone::N1),
                Node::Action(ManeuverKind::DecelerationStraight),
            ]),
            Node::Sequence(vec![
                Node::Condition(Zone::F1),
                Node::Action(ManeuverKind::KeepSpeed),
            ]),
        ]))
        .unwrap();
        let mut rng = SimRng::new(1);
        for _ in 0..100 {
            assert_eq!(tree.tick(Zone::F1, &mut rng), ManeuverKind::KeepSpeed);
        }
    }
}
