//! Rearrangement rewards and the direct-grasp corridor test.
//!
//! Each obstacle is scored by the clearance `d` between its center and the
//! straight approach segment from the end-effector start to the target, and
//! the episode gets a flat safety bonus or penalty depending on whether
//! anything fell over.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::sim::Scene;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("target object {0} not present in scene")]
    MissingTarget(u32),
    #[error("scenes do not share the same object ids")]
    IdMismatch,
}

pub const FALL_PENALTY: f64 = -30.0;
pub const SAFE_BONUS: f64 = 10.0;

/// Euclidean distance from `p` to the closed segment `ab`.
pub fn segment_point_distance(a: Point2, b: Point2, p: Point2) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let s = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.distance(a + ab * s)
}

/// Per-obstacle clearance score; first matching branch wins.
pub fn margin_reward(d: f64) -> f64 {
    if d <= 0.1 {
        100.0 * d - 30.0
    } else if d <= 0.2 {
        100.0 * d - 25.0
    } else if d <= 0.25 {
        100.0 * d - 22.5
    } else {
        15.0
    }
}

/// `-30` if any object standing in `before` is fallen in `after`, else `+10`.
pub fn safety_reward(before: &Scene, after: &Scene) -> Result<f64, RewardError> {
    if before.objects.len() != after.objects.len() {
        return Err(RewardError::IdMismatch);
    }
    let mut any_fell = false;
    for b in &before.objects {
        let a = after.object(b.id).ok_or(RewardError::IdMismatch)?;
        any_fell |= b.standing && !a.standing;
    }
    Ok(if any_fell { FALL_PENALTY } else { SAFE_BONUS })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginTerm {
    pub object_id: u32,
    pub distance: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub margins: Vec<MarginTerm>,
    pub safety: f64,
    /// Optional penalty for displacing the target; zero unless enabled.
    #[serde(default)]
    pub target_contact: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn margin_total(&self) -> f64 {
        self.margins.iter().map(|m| m.reward).sum()
    }

    /// Recomputes the total from the parts in the same order it was built.
    pub fn recomputed_total(&self) -> f64 {
        self.margin_total() + self.safety + self.target_contact
    }

    pub fn fell(&self) -> bool {
        self.safety == FALL_PENALTY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardOptions {
    /// Penalty added when the target moved by more than 1 mm; off by default.
    pub target_contact_penalty: Option<f64>,
}

/// Margin terms for every non-target object of `scene`, measured against
/// the segment from `start` to the current target center.
pub fn margin_terms(scene: &Scene, start: Point2, target_id: u32) -> Result<Vec<MarginTerm>, RewardError> {
    let target = scene.object(target_id).ok_or(RewardError::MissingTarget(target_id))?;
    Ok(scene
        .objects
        .iter()
        .filter(|o| o.id != target_id)
        .map(|o| {
            let distance = segment_point_distance(start, target.center, o.center);
            MarginTerm { object_id: o.id, distance, reward: margin_reward(distance) }
        })
        .collect())
}

pub fn total_reward(
    before: &Scene,
    after: &Scene,
    start: Point2,
    target_id: u32,
    options: &RewardOptions,
) -> Result<RewardBreakdown, RewardError> {
    let margins = margin_terms(after, start, target_id)?;
    let safety = safety_reward(before, after)?;
    let target_contact = match options.target_contact_penalty {
        Some(penalty) => {
            let moved = before
                .object(target_id)
                .zip(after.object(target_id))
                .map_or(0.0, |(b, a)| b.center.distance(a.center));
            if moved > 1e-3 {
                penalty
            } else {
                0.0
            }
        }
        None => 0.0,
    };
    let mut breakdown = RewardBreakdown { margins, safety, target_contact, total: 0.0 };
    breakdown.total = breakdown.recomputed_total();
    Ok(breakdown)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspFeasibility {
    pub feasible: bool,
    pub blockers: Vec<u32>,
}

/// The direct approach from `start` to the target is clear when every
/// standing obstacle keeps its center strictly farther than
/// `corridor_halfwidth + radius` from the approach segment.
pub fn grasp_feasible(
    scene: &Scene,
    start: Point2,
    target_id: u32,
    corridor_halfwidth: f64,
) -> Result<GraspFeasibility, RewardError> {
    let target = scene.object(target_id).ok_or(RewardError::MissingTarget(target_id))?;
    let blockers: Vec<u32> = scene
        .objects
        .iter()
        .filter(|o| o.id != target_id && o.standing)
        .filter(|o| segment_point_distance(start, target.center, o.center) <= corridor_halfwidth + o.radius)
        .map(|o| o.id)
        .collect();
    Ok(GraspFeasibility { feasible: blockers.is_empty(), blockers })
}
