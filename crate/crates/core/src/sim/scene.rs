use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::Point2;
use crate::seed;

/// Table extent and overhead camera height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Height of the orthographic camera above the table surface.
    pub camera_height: f64,
}

impl Default for TableSpec {
    fn default() -> Self {
        Self {
            x_range: (0.0, 1.0),
            y_range: (0.0, 0.6),
            camera_height: 1.0,
        }
    }
}

impl TableSpec {
    pub fn width(&self) -> f64 {
        self.x_range.1 - self.x_range.0
    }

    pub fn depth(&self) -> f64 {
        self.y_range.1 - self.y_range.0
    }

    pub fn center(&self) -> Point2 {
        Point2::new(
            0.5 * (self.x_range.0 + self.x_range.1),
            0.5 * (self.y_range.0 + self.y_range.1),
        )
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x_range.0 && p.x <= self.x_range.1 && p.y >= self.y_range.0 && p.y <= self.y_range.1
    }

    pub fn clamp(&self, p: Point2) -> Point2 {
        Point2::new(
            p.x.clamp(self.x_range.0, self.x_range.1),
            p.y.clamp(self.y_range.0, self.y_range.1),
        )
    }

    pub fn validate(&self, max_object_height: f64) -> Result<(), SimError> {
        let ok = self.x_range.0.is_finite()
            && self.x_range.1.is_finite()
            && self.y_range.0.is_finite()
            && self.y_range.1.is_finite()
            && self.x_range.1 > self.x_range.0
            && self.y_range.1 > self.y_range.0
            && self.camera_height.is_finite()
            && self.camera_height > max_object_height;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidTable)
        }
    }
}

/// An upright or toppled cylinder on the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub center: Point2,
    pub radius: f64,
    pub height: f64,
    /// Radius of the support footprint; smaller values tip more easily.
    pub base_radius: f64,
    pub standing: bool,
    pub is_target: bool,
}

impl SceneObject {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.center.is_finite()
            && self.radius > 0.0
            && self.height > 0.0
            && self.base_radius > 0.0
            && self.base_radius <= self.radius;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidObject(self.id))
        }
    }

    /// Largest lateral contact offset this object tolerates before toppling.
    pub fn tip_threshold(&self, kappa: f64) -> f64 {
        kappa * (self.base_radius / self.height) * self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperState {
    pub position: Point2,
    pub radius: f64,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub table: TableSpec,
    pub objects: Vec<SceneObject>,
    pub gripper: GripperState,
}

impl Scene {
    /// Checks every structural invariant. Scenes with no objects at all are
    /// accepted (after a successful grasp the target is gone); otherwise
    /// exactly one object must be flagged as the target.
    pub fn validate(&self) -> Result<(), SimError> {
        let max_h = self.objects.iter().map(|o| o.height).fold(0.0, f64::max);
        self.table.validate(max_h)?;
        if !(self.gripper.radius > 0.0) || !self.gripper.position.is_finite() {
            return Err(SimError::InvalidGripper);
        }
        for (i, o) in self.objects.iter().enumerate() {
            o.validate()?;
            if self.objects[..i].iter().any(|p| p.id == o.id) {
                return Err(SimError::DuplicateId(o.id));
            }
            if o.standing && !self.table.contains(o.center) {
                return Err(SimError::OutsideTable(o.id));
            }
        }
        let targets = self.objects.iter().filter(|o| o.is_target).count();
        if !self.objects.is_empty() && targets != 1 {
            return Err(SimError::TargetCount(targets));
        }
        Ok(())
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: u32) -> Option<&mut SceneObject> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    pub fn target(&self) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.is_target)
    }

    /// Moves the target flag to `id`. Returns false if no such object exists.
    pub fn set_target(&mut self, id: u32) -> bool {
        if self.object(id).is_none() {
            return false;
        }
        for o in &mut self.objects {
            o.is_target = o.id == id;
        }
        true
    }

    pub fn obstacles(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(|o| !o.is_target)
    }

    pub fn fallen_count(&self) -> usize {
        self.objects.iter().filter(|o| !o.standing).count()
    }
}

/// Shape family parameters for randomized objects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeRange {
    pub radius: (f64, f64),
    pub height: (f64, f64),
    /// `base_radius = base_ratio * radius`.
    pub base_ratio: f64,
}

/// Scene randomization parameters (JSON-configurable).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationConfig {
    pub table: TableSpec,
    pub gripper_home: Point2,
    pub gripper_radius: f64,
    /// Inclusive object count range, target included.
    pub count: (usize, usize),
    pub squat: ShapeRange,
    pub thin: ShapeRange,
    /// Probability that a generated object uses the thin shape family.
    pub thin_fraction: f64,
    /// Minimum pairwise center distance.
    pub min_separation: f64,
    /// Minimum clearance between object rims and the table edge.
    pub edge_margin: f64,
    /// Minimum clearance between object rims and the gripper at home.
    pub home_clearance: f64,
    /// Total rejection-sampling budget for one scene.
    pub max_attempts: usize,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self {
            table: TableSpec::default(),
            gripper_home: Point2::new(0.5, 0.05),
            gripper_radius: 0.05,
            count: (5, 7),
            squat: ShapeRange {
                radius: (0.03, 0.05),
                height: (0.05, 0.10),
                base_ratio: 1.0,
            },
            thin: ShapeRange {
                radius: (0.02, 0.03),
                height: (0.15, 0.25),
                base_ratio: 0.5,
            },
            thin_fraction: 0.3,
            min_separation: 0.12,
            edge_margin: 0.02,
            home_clearance: 0.05,
            max_attempts: 10_000,
        }
    }
}

impl RandomizationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let range_ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 > 0.0 && r.1 >= r.0;
        let shape_ok = |s: &ShapeRange| {
            range_ok(s.radius) && range_ok(s.height) && s.base_ratio > 0.0 && s.base_ratio <= 1.0
        };
        if self.count.0 < 1 || self.count.1 < self.count.0 {
            return Err(SimError::InvalidConfig("count range must satisfy 1 <= min <= max"));
        }
        if !shape_ok(&self.squat) || !shape_ok(&self.thin) {
            return Err(SimError::InvalidConfig("shape ranges must be positive and ordered"));
        }
        if !(0.0..=1.0).contains(&self.thin_fraction) {
            return Err(SimError::InvalidConfig("thin_fraction must lie in [0, 1]"));
        }
        if !(self.gripper_radius > 0.0) || !self.gripper_home.is_finite() {
            return Err(SimError::InvalidGripper);
        }
        if !(self.min_separation >= 0.0) || !(self.edge_margin >= 0.0) || !(self.home_clearance >= 0.0) {
            return Err(SimError::InvalidConfig("separation and margins must be non-negative"));
        }
        self.table.validate(self.squat.height.1.max(self.thin.height.1))
    }
}

fn uniform(rng: &mut seed::Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// Samples a scene with a random number of cylinders at random non-overlapping
/// locations, one of which is flagged as the target. Deterministic per seed.
pub fn randomize_scene(seed: u64, config: &RandomizationConfig) -> Result<Scene, SimError> {
    config.validate()?;
    let mut rng = seed::derived_rng(seed, &[seed::tag::SCENE]);
    let count = rng.random_range(config.count.0..=config.count.1);
    let table = config.table;
    let home = config.gripper_home;

    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while objects.len() < count {
        let family = if rng.random_bool(config.thin_fraction) {
            &config.thin
        } else {
            &config.squat
        };
        let radius = uniform(&mut rng, family.radius);
        let height = uniform(&mut rng, family.height);
        let margin = radius + config.edge_margin;
        let xr = (table.x_range.0 + margin, table.x_range.1 - margin);
        let yr = (table.y_range.0 + margin, table.y_range.1 - margin);
        loop {
            attempts += 1;
            if attempts > config.max_attempts {
                return Err(SimError::PlacementFailed { attempts: config.max_attempts });
            }
            if xr.1 < xr.0 || yr.1 < yr.0 {
                continue;
            }
            let center = Point2::new(uniform(&mut rng, xr), uniform(&mut rng, yr));
            if center.distance(home) < config.gripper_radius + radius + config.home_clearance {
                continue;
            }
            let clear = objects.iter().all(|o| {
                let d = o.center.distance(center);
                d >= config.min_separation && d >= o.radius + radius
            });
            if clear {
                objects.push(SceneObject {
                    id: objects.len() as u32,
                    center,
                    radius,
                    height,
                    base_radius: family.base_ratio * radius,
                    standing: true,
                    is_target: false,
                });
                break;
            }
        }
    }
    let target = rng.random_range(0..count);
    objects[target].is_target = true;

    Ok(Scene {
        table,
        objects,
        gripper: GripperState {
            position: home,
            radius: config.gripper_radius,
            closed: false,
        },
    })
}
