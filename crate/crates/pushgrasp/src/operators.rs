//! Scripted operators for the assisted-versus-manual timing study.
//!
//! Both operators drive a session only through [`TeleopApi`], so the same
//! scripts run in-process or against a live server. Time is the session's
//! simulated clock at the moment the grasp succeeds; a scene that is not
//! solved within the operator's budget (or whose target falls) is charged
//! the fixed `cap` time.

use anyhow::Result;
use pushgrasp_core::geometry::Point2;
use pushgrasp_core::rewards::segment_point_distance;
use pushgrasp_core::seed;
use pushgrasp_core::session::{Direction, SessionState};
use pushgrasp_core::sim::{randomize_scene, RandomizationConfig, Scene};
use serde::{Deserialize, Serialize};

use crate::service::{SessionView, TeleopApi};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorConfig {
    pub k: usize,
    /// Rearranging rounds the assisted operator tries before giving up.
    pub assisted_rounds: usize,
    /// Manual steps the manual operator may spend before giving up.
    pub manual_steps: usize,
    /// Simulated time charged for an unsolved scene.
    pub cap: f64,
    pub corridor_halfwidth: f64,
    /// Extra clearance the manual operator pushes blockers beyond the
    /// corridor edge.
    pub push_margin: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self { k: 4, assisted_rounds: 8, manual_steps: 1500, cap: 200.0, corridor_halfwidth: 0.05, push_margin: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub solved: bool,
    /// Simulated seconds until the grasp, or the cap.
    pub time: f64,
    pub actions: usize,
}

fn finish(view: &SessionView, actions: usize, cap: f64) -> Trial {
    let solved = view.state == SessionState::Done;
    Trial { solved, time: if solved { view.elapsed } else { cap }, actions }
}

fn target_center(scene: &Scene) -> Point2 {
    scene.target().expect("scene has a target").center
}

/// Executes the top-scored candidate until the direct grasp succeeds.
pub fn assisted_operator(api: &mut impl TeleopApi, scene: &Scene, session_seed: u64, cfg: &OperatorConfig) -> Result<Trial> {
    let view = api.create(scene, session_seed)?;
    let id = view.id;
    let mut view = api.set_target(id, target_center(scene))?;
    let mut actions = 1;
    for _ in 0..=cfg.assisted_rounds {
        view = api.grasp(id)?;
        actions += 1;
        if view.state != SessionState::TargetSelected {
            break;
        }
        view = api.candidates(id, cfg.k)?;
        let best = view.candidates.first().expect("k >= 1").id;
        view = api.execute(id, best)?;
        actions += 2;
        if view.state != SessionState::TargetSelected {
            break;
        }
    }
    Ok(finish(&view, actions, cfg.cap))
}

struct Walker<'a, A: TeleopApi> {
    api: &'a mut A,
    id: u64,
    view: SessionView,
    steps: usize,
    budget: usize,
    step_len: f64,
}

impl<A: TeleopApi> Walker<'_, A> {
    fn gripper(&self) -> Point2 {
        self.view.scene.gripper.position
    }

    fn alive(&self) -> bool {
        self.view.state == SessionState::TargetSelected && self.steps < self.budget
    }

    fn step(&mut self, d: Direction) -> Result<()> {
        self.view = self.api.manual(self.id, d)?;
        self.steps += 1;
        Ok(())
    }

    /// Moves along x then y (or y then x) with 1-step keypresses until
    /// within half a step of `goal`.
    fn go(&mut self, goal: Point2, x_first: bool) -> Result<()> {
        for axis in if x_first { [0, 1] } else { [1, 0] } {
            loop {
                if !self.alive() {
                    return Ok(());
                }
                let g = self.gripper();
                let delta = if axis == 0 { goal.x - g.x } else { goal.y - g.y };
                if delta.abs() < 0.5 * self.step_len {
                    break;
                }
                let before = g;
                let d = match (axis, delta > 0.0) {
                    (0, true) => Direction::Right,
                    (0, false) => Direction::Left,
                    (_, true) => Direction::Forward,
                    (_, false) => Direction::Backward,
                };
                self.step(d)?;
                if self.gripper() == before {
                    break; // clipped at the table edge
                }
            }
        }
        Ok(())
    }
}

/// Keyboard-style baseline: for each blocker, drive beside it, push it
/// sideways out of the corridor, come back home, and retry the grasp.
pub fn manual_operator(api: &mut impl TeleopApi, scene: &Scene, session_seed: u64, cfg: &OperatorConfig) -> Result<Trial> {
    let view = api.create(scene, session_seed)?;
    let id = view.id;
    let view = api.set_target(id, target_center(scene))?;
    let home = view.scene.gripper.position;
    let gripper_r = view.scene.gripper.radius;
    let step_len = 0.01;
    let mut w = Walker { api, id, view, steps: 0, budget: cfg.manual_steps, step_len };
    let mut actions = 1;
    while w.alive() {
        w.view = w.api.grasp(id)?;
        actions += 1;
        if w.view.state != SessionState::TargetSelected {
            break;
        }
        let scene = w.view.scene.clone();
        let target = scene.objects.iter().find(|o| Some(o.id) == w.view.target_id).expect("target").center;
        // Nearest blocker to the gripper first.
        let blocker = w
            .view
            .blockers
            .iter()
            .filter_map(|b| scene.objects.iter().find(|o| o.id == *b))
            .min_by(|a, b| a.center.distance(home).total_cmp(&b.center.distance(home)))
            .expect("blocker exists")
            .clone();
        // Push along x, away from the corridor line at the blocker's height.
        let axis = target - home;
        let side = if axis.cross(blocker.center - home) > 0.0 { -1.0 } else { 1.0 };
        let dir = if side > 0.0 { Direction::Right } else { Direction::Left };
        let stand_off = blocker.radius + gripper_r + 0.015;
        let approach = Point2::new(blocker.center.x - side * stand_off, blocker.center.y);
        // Stay below the blocker while moving sideways, then rise to its row.
        w.go(Point2::new(approach.x, w.gripper().y), true)?;
        w.go(approach, false)?;
        let clear = cfg.corridor_halfwidth + blocker.radius + cfg.push_margin;
        while w.alive() {
            let b = w.view.scene.objects.iter().find(|o| o.id == blocker.id).expect("objects persist");
            if !b.standing || segment_point_distance(home, target, b.center) > clear {
                break;
            }
            let before = w.gripper();
            w.step(dir)?;
            if w.gripper() == before {
                break;
            }
        }
        // Back down to the home row, then across to home.
        w.go(Point2::new(w.gripper().x, home.y), false)?;
        w.go(home, true)?;
        actions += 1;
    }
    Ok(finish(&w.view, actions + w.steps, cfg.cap))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingLevel {
    pub obstacles: usize,
    pub scenes: usize,
    pub assisted_mean: f64,
    pub manual_mean: f64,
    pub assisted_solved: usize,
    pub manual_solved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStudy {
    pub levels: Vec<TimingLevel>,
}

impl TimingStudy {
    pub fn assisted_faster_everywhere(&self) -> bool {
        self.levels.iter().all(|l| l.assisted_mean < l.manual_mean)
    }

    /// Least-squares slope of mean time against obstacle count.
    pub fn slopes(&self) -> (f64, f64) {
        let n = self.levels.len() as f64;
        let mx = self.levels.iter().map(|l| l.obstacles as f64).sum::<f64>() / n;
        let slope = |f: &dyn Fn(&TimingLevel) -> f64| {
            let my = self.levels.iter().map(f).sum::<f64>() / n;
            let num: f64 = self.levels.iter().map(|l| (l.obstacles as f64 - mx) * (f(l) - my)).sum();
            let den: f64 = self.levels.iter().map(|l| (l.obstacles as f64 - mx).powi(2)).sum();
            num / den
        };
        (slope(&|l| l.assisted_mean), slope(&|l| l.manual_mean))
    }
}

/// Initially blocked scenes with exactly `obstacles` obstacles, drawn from
/// a seeded stream.
pub fn blocked_scenes(obstacles: usize, count: usize, seed_value: u64, halfwidth: f64) -> Result<Vec<Scene>> {
    let cfg = RandomizationConfig { count: (obstacles + 1, obstacles + 1), ..RandomizationConfig::default() };
    let mut out = Vec::with_capacity(count);
    let mut i = 0u64;
    while out.len() < count {
        let scene = randomize_scene(seed::derive(seed_value, &[obstacles as u64, i]), &cfg)?;
        i += 1;
        let t = scene.target().expect("target").id;
        if !pushgrasp_core::rewards::grasp_feasible(&scene, scene.gripper.position, t, halfwidth)?.feasible {
            out.push(scene);
        }
    }
    Ok(out)
}

/// Runs both operators on the same blocked scenes for each obstacle count.
pub fn timing_study(
    api: &mut impl TeleopApi,
    obstacle_counts: &[usize],
    scenes_per_level: usize,
    seed_value: u64,
    cfg: &OperatorConfig,
) -> Result<TimingStudy> {
    let mut levels = Vec::new();
    for &n in obstacle_counts {
        let scenes = blocked_scenes(n, scenes_per_level, seed_value, cfg.corridor_halfwidth)?;
        let (mut at, mut mt, mut asol, mut msol) = (0.0, 0.0, 0, 0);
        for (i, s) in scenes.iter().enumerate() {
            let session_seed = seed::derive(seed_value, &[seed::tag::CANDIDATES, n as u64, i as u64]);
            let a = assisted_operator(api, s, session_seed, cfg)?;
            let m = manual_operator(api, s, session_seed, cfg)?;
            at += a.time;
            mt += m.time;
            asol += usize::from(a.solved);
            msol += usize::from(m.solved);
        }
        let k = scenes.len() as f64;
        levels.push(TimingLevel {
            obstacles: n,
            scenes: scenes.len(),
            assisted_mean: at / k,
            manual_mean: mt / k,
            assisted_solved: asol,
            manual_solved: msol,
        });
    }
    Ok(TimingStudy { levels })
}
