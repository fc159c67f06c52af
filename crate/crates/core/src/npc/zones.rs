//! Perception zones around an adversarial NPC.
//!
//! The EGO's position relative to the NPC is projected onto the NPC's
//! forward and right unit vectors, giving (x, y). Everything beyond
//! [-1.5l, 1.5l] x [-1.5w, 1.5w] is undetected; inside, the nine zones
//! partition the plane. `y < 0` is the NPC's left.
//!
//! Boundary tie-breaking (the inequalities alone leave corners open):
//! points with |y| = 0.5w belong to the N1/F1 band, x = 0 with |y| <= 0.5w
//! counts as F1, and |x| = 0.5l falls into the middle band (L2/R2).

use serde::{Deserialize, Serialize};

use crate::kinematics::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Zone {
    NotDetected,
    N1,
    F1,
    L1,
    L2,
    L3,
    R1,
    R2,
    R3,
}

impl Zone {
    pub const ALL: [Zone; 9] = [
        Zone::NotDetected,
        Zone::N1,
        Zone::F1,
        Zone::L1,
        Zone::L2,
        Zone::L3,
        Zone::R1,
        Zone::R2,
        Zone::R3,
    ];
}

/// Classify relative coordinates (x along the NPC's forward axis, y along
/// its right axis) into a zone.
pub fn classify_xy(x: f64, y: f64, ell: f64, w: f64) -> Zone {
    debug_assert!(ell > 0.0 && w > 0.0);
    if x.abs() > 1.5 * ell || y.abs() > 1.5 * w {
        return Zone::NotDetected;
    }
    if y.abs() <= 0.5 * w {
        return if x < 0.0 { Zone::N1 } else { Zone::F1 };
    }
    let left = y < 0.0;
    if x < -0.5 * ell {
        if left { Zone::L1 } else { Zone::R1 }
    } else if x <= 0.5 * ell {
        if left { Zone::L2 } else { Zone::R2 }
    } else if left {
        Zone::L3
    } else {
        Zone::R3
    }
}

/// Locate the EGO in the NPC's perception zones.
pub fn detect_ego(npc: &VehicleState, ego: &VehicleState, ell: f64, w: f64) -> Zone {
    let dp = (
        ego.position.s - npc.position.s,
        ego.position.d - npc.position.d,
    );
    let fwd = npc.forward();
    let right = npc.right();
    let x = dp.0 * fwd.0 + dp.1 * fwd.1;
    let y = dp.0 * right.0 + dp.1 * right.1;
    classify_xy(x, y, ell, w)
}
