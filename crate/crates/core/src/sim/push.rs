use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Scene, Trajectory};
use crate::geometry::Point2;

/// Contact model constants for quasi-static pushing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PushParams {
    /// Scale of the tip-over threshold `kappa * (base_radius / height) * radius`.
    pub tip_kappa: f64,
    /// Pairwise separation sweeps per tick.
    pub max_sweeps: usize,
    /// Residual overlap tolerated after the sweeps.
    pub overlap_tolerance: f64,
}

impl Default for PushParams {
    fn default() -> Self {
        Self {
            tip_kappa: 1.0,
            max_sweeps: 16,
            overlap_tolerance: 1e-6,
        }
    }
}

/// What happened during one control tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Objects the gripper touched directly this tick.
    pub contacts: Vec<u32>,
    /// Objects toppled by a glancing gripper contact.
    pub toppled: Vec<u32>,
    /// Objects pushed off the table (marked fallen).
    pub left_table: Vec<u32>,
    /// Objects whose center changed this tick.
    pub moved: Vec<u32>,
    /// Planar displacement of the target during the tick.
    pub target_displacement: f64,
}

impl StepReport {
    pub fn newly_fallen(&self) -> impl Iterator<Item = u32> + '_ {
        self.toppled.iter().chain(self.left_table.iter()).copied()
    }
}

/// Accumulated result of executing a whole trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub ticks: usize,
    pub contact_ticks: usize,
    pub fallen: Vec<u32>,
    pub target_displacement: f64,
}

// Overlaps below this are treated as touching, so a gripper sliding past a
// freshly projected object does not re-contact it through rounding.
const CONTACT_EPS: f64 = 1e-9;

fn mark(moved: &mut Vec<u32>, id: u32) {
    if !moved.contains(&id) {
        moved.push(id);
    }
}

impl Scene {
    /// Advances the gripper to `to` for one control tick and resolves contact.
    ///
    /// Standing objects overlapping the gripper disk either topple (lateral
    /// offset above their tip threshold) or are projected out along the
    /// gripper-to-center direction. Object-object overlaps are then separated
    /// pairwise, and objects whose centers leave the table are marked fallen.
    /// Fallen objects are inert.
    pub fn step_push(&mut self, to: Point2, params: &PushParams) -> StepReport {
        let from = self.gripper.position;
        self.gripper.position = to;
        let direction = (to - from).normalized();
        let gripper_radius = self.gripper.radius;
        let target_before = self.target().map(|t| t.center);
        let mut report = StepReport::default();

        for o in self.objects.iter_mut().filter(|o| o.standing) {
            let rel = o.center - to;
            let reach = gripper_radius + o.radius;
            let dist = rel.norm();
            if dist >= reach - CONTACT_EPS {
                continue;
            }
            report.contacts.push(o.id);
            if let Some(u) = direction {
                let lateral = u.cross(rel).abs();
                if lateral > o.tip_threshold(params.tip_kappa) {
                    o.standing = false;
                    report.toppled.push(o.id);
                    continue;
                }
            }
            let normal = rel
                .normalized()
                .or(direction)
                .unwrap_or(Point2::new(1.0, 0.0));
            o.center = to + normal * reach;
            mark(&mut report.moved, o.id);
        }

        if !report.moved.is_empty() {
            self.separate_objects(params, &mut report.moved);
        }

        let table = self.table;
        for o in self.objects.iter_mut().filter(|o| o.standing) {
            if !table.contains(o.center) {
                o.standing = false;
                report.left_table.push(o.id);
            }
        }

        if let (Some(before), Some(after)) = (target_before, self.target().map(|t| t.center)) {
            report.target_displacement = before.distance(after);
        }
        report
    }

    fn separate_objects(&mut self, params: &PushParams, moved: &mut Vec<u32>) {
        let tol = params.overlap_tolerance;
        let gripper = self.gripper;
        let n = self.objects.len();
        for _ in 0..params.max_sweeps {
            let mut worst = 0.0f64;
            for i in 0..n {
                for j in i + 1..n {
                    let (head, tail) = self.objects.split_at_mut(j);
                    let a = &mut head[i];
                    let b = &mut tail[0];
                    if !a.standing || !b.standing {
                        continue;
                    }
                    let rel = b.center - a.center;
                    let dist = rel.norm();
                    let overlap = a.radius + b.radius - dist;
                    if overlap <= tol {
                        continue;
                    }
                    worst = worst.max(overlap);
                    let normal = rel.normalized().unwrap_or(Point2::new(1.0, 0.0));
                    a.center = a.center - normal * (0.5 * overlap);
                    b.center = b.center + normal * (0.5 * overlap);
                    mark(moved, a.id);
                    mark(moved, b.id);
                }
            }
            // The gripper is kinematic: anything shoved back into it is
            // projected out again without a tip check.
            for o in self.objects.iter_mut().filter(|o| o.standing) {
                let rel = o.center - gripper.position;
                let reach = gripper.radius + o.radius;
                let dist = rel.norm();
                if reach - dist > tol {
                    worst = worst.max(reach - dist);
                    let normal = rel.normalized().unwrap_or(Point2::new(1.0, 0.0));
                    o.center = gripper.position + normal * reach;
                    mark(moved, o.id);
                }
            }
            if worst <= tol {
                break;
            }
        }
    }

    /// Runs every tick of `trajectory`, calling `on_tick` after each one.
    /// The gripper is placed at the first sample without contact (it is
    /// lowered there) and then driven through the remaining samples.
    pub fn execute_with<F>(&mut self, trajectory: &Trajectory, params: &PushParams, mut on_tick: F) -> ExecutionReport
    where
        F: FnMut(usize, &Scene, &StepReport),
    {
        let mut report = ExecutionReport::default();
        let Some(first) = trajectory.samples.first() else {
            return report;
        };
        self.gripper.position = Point2::new(first.x, first.y);
        for (tick, s) in trajectory.samples.iter().enumerate().skip(1) {
            let step = self.step_push(Point2::new(s.x, s.y), params);
            report.ticks += 1;
            if !step.contacts.is_empty() {
                report.contact_ticks += 1;
            }
            report.fallen.extend(step.newly_fallen());
            report.target_displacement += step.target_displacement;
            on_tick(tick, self, &step);
        }
        report
    }

    pub fn execute(&mut self, trajectory: &Trajectory, params: &PushParams) -> ExecutionReport {
        self.execute_with(trajectory, params, |_, _, _| {})
    }
}
