//! Operator session state machine.
//!
//! ```text
//! IDLE --set_target--> TARGET_SELECTED --request_candidates--> CANDIDATES_READY
//!                        ^   |  ^   \                              |
//!                        |   |  |    manual_step                   | execute
//!                        |   |  +------ EXECUTING <----------------+
//!                        |   +--attempt_grasp (clear)--> DONE
//!                        +------attempt_grasp (blocked)
//! ```
//!
//! A session reaches FAILED when its target stops standing. Every command
//! checks its precondition before touching anything, so a rejected command
//! leaves the session exactly as it was. Time is simulated: motion costs its
//! path length divided by the end-effector speed.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::perception::{dbscan, object_near, plan_grasp_approach, select_target, Clustering, DbscanParams, PerceptionError};
use crate::policy::{sample_candidates, Candidate, Policy, PolicyError};
use crate::rewards::{grasp_feasible, total_reward, RewardBreakdown, RewardError, RewardOptions};
use crate::seed;
use crate::sim::{render_depth, render_pointcloud, DepthImage, PushParams, Scene, SimError, Trajectory, DEFAULT_RATE, DEFAULT_SPEED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionState {
    Idle,
    TargetSelected,
    CandidatesReady,
    Executing,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Rearrange,
    Grasp,
    Manual,
}

/// Manual directions in table coordinates: forward is +y (away from the
/// operator's edge of the table), right is +x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
    Left,
    Right,
}

impl Direction {
    pub fn unit(self) -> Point2 {
        match self {
            Direction::Forward => Point2::new(0.0, 1.0),
            Direction::Backward => Point2::new(0.0, -1.0),
            Direction::Left => Point2::new(-1.0, 0.0),
            Direction::Right => Point2::new(1.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub step_len: f64,
    pub speed: f64,
    pub rate: f64,
    /// Half width of the straight grasp corridor.
    pub corridor_halfwidth: f64,
    /// Emit one progress event every this many control ticks.
    pub stream_decimation: usize,
    pub dbscan: DbscanParams,
    pub push: PushParams,
    pub reward: RewardOptions,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            step_len: 0.01,
            speed: DEFAULT_SPEED,
            rate: DEFAULT_RATE,
            corridor_halfwidth: 0.05,
            stream_decimation: 25,
            dbscan: DbscanParams::default(),
            push: PushParams::default(),
            reward: RewardOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("{op} is not allowed in state {state:?}")]
    InvalidState { op: &'static str, state: SessionState },
    #[error("no candidate with id {0}")]
    UnknownCandidate(u32),
    #[error("no policy checkpoint is loaded")]
    NoPolicy,
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    /// A rearranging trajectory ran to completion.
    Executed,
    /// A manual step ran.
    Moved,
    Grasped,
    Blocked { blockers: Vec<u32> },
}

/// One completed action, as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub session_id: u64,
    pub index: usize,
    pub mode: Mode,
    pub target_id: u32,
    pub start: Point2,
    pub before: Scene,
    pub after: Scene,
    pub trajectory: Option<Trajectory>,
    /// Rearrangement reward; present for rearrange episodes.
    pub reward: Option<RewardBreakdown>,
    pub outcome: Outcome,
    pub sim_duration: f64,
    /// Filled in by hosts that have a clock; zero otherwise.
    pub wall_duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub standing: bool,
}

/// Progress sample streamed while a command moves the gripper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub tick: usize,
    pub gripper: Point2,
    /// Objects that moved since the previous event of the same command.
    pub moved_objects: Vec<ObjectPose>,
    /// Objects that fell since the previous event of the same command.
    pub fallen: Vec<u32>,
    pub state: SessionState,
}

/// Entry of the session's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub elapsed: f64,
    pub state: SessionState,
    pub message: LogMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogMessage {
    Created,
    TargetSet { target_id: u32, cluster_id: usize },
    Candidates { count: usize, seed: u64 },
    Executed { candidate_id: u32 },
    Manual { direction: Direction },
    GraspAttempt { feasible: bool },
    TargetLost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: u64,
    pub seed: u64,
    pub scene: Scene,
    pub state: SessionState,
    pub target_id: Option<u32>,
    pub candidates: Vec<Candidate>,
    pub elapsed: f64,
    pub log: Vec<LogEntry>,
    pub episodes: Vec<EpisodeRecord>,
    pub config: SessionConfig,
    /// Incremented by every candidate request; each request draws from its
    /// own seed.
    pub requests: u64,
    pub clustering: Clustering,
}

fn poses(scene: &Scene) -> Vec<ObjectPose> {
    scene
        .objects
        .iter()
        .map(|o| ObjectPose { id: o.id, x: o.center.x, y: o.center.y, standing: o.standing })
        .collect()
}

impl Session {
    pub fn new(id: u64, seed_value: u64, scene: Scene, config: SessionConfig) -> Result<Self, SessionError> {
        scene.validate()?;
        let clustering = dbscan(&render_pointcloud(&scene).points, &config.dbscan)?;
        let mut s = Self {
            id,
            seed: seed_value,
            scene,
            state: SessionState::Idle,
            target_id: None,
            candidates: Vec::new(),
            elapsed: 0.0,
            log: Vec::new(),
            episodes: Vec::new(),
            config,
            requests: 0,
            clustering,
        };
        s.note(LogMessage::Created);
        Ok(s)
    }

    pub fn depth(&self) -> DepthImage {
        render_depth(&self.scene)
    }

    fn note(&mut self, message: LogMessage) {
        self.log.push(LogEntry { elapsed: self.elapsed, state: self.state, message });
    }

    fn require(&self, op: &'static str, allowed: &[SessionState]) -> Result<(), SessionError> {
        if allowed.contains(&self.state) {
            Ok(())
        } else {
            Err(SessionError::InvalidState { op, state: self.state })
        }
    }

    fn target(&self) -> u32 {
        self.target_id.expect("a target is set in every state past IDLE")
    }

    /// Re-derives everything that depends on the scene and drops cached
    /// candidates.
    fn scene_changed(&mut self) -> Result<(), SessionError> {
        self.candidates.clear();
        self.clustering = dbscan(&render_pointcloud(&self.scene).points, &self.config.dbscan)?;
        Ok(())
    }

    fn push_episode(&mut self, mut record: EpisodeRecord) {
        record.index = self.episodes.len();
        self.elapsed += record.sim_duration;
        self.episodes.push(record);
    }

    /// Checks whether the target is still standing after a motion.
    fn check_target(&mut self) {
        let standing = self.scene.object(self.target()).is_some_and(|o| o.standing);
        if !standing {
            self.state = SessionState::Failed;
            self.note(LogMessage::TargetLost);
        }
    }

    pub fn set_target(&mut self, click: Point2) -> Result<u32, SessionError> {
        self.require("set_target", &[SessionState::Idle, SessionState::TargetSelected])?;
        let (cluster_id, centroid) = select_target(&self.clustering.clusters, click)?;
        let id = object_near(&self.scene, centroid.planar()).ok_or(PerceptionError::NoObject)?;
        self.scene.set_target(id);
        self.target_id = Some(id);
        self.state = SessionState::TargetSelected;
        self.note(LogMessage::TargetSet { target_id: id, cluster_id });
        Ok(id)
    }

    /// Samples `k` candidates from `policy`. Each call uses a fresh seed
    /// derived from the session seed and a request counter.
    pub fn request_candidates(&mut self, k: usize, policy: Option<&Policy>) -> Result<&[Candidate], SessionError> {
        self.require("request_candidates", &[SessionState::TargetSelected, SessionState::CandidatesReady])?;
        let policy = policy.ok_or(SessionError::NoPolicy)?;
        let request_seed = seed::derive(self.seed, &[seed::tag::CANDIDATES, self.requests]);
        let candidates = sample_candidates(policy, &self.scene, k, request_seed)?;
        self.requests += 1;
        self.candidates = candidates;
        self.state = SessionState::CandidatesReady;
        self.note(LogMessage::Candidates { count: k, seed: request_seed });
        Ok(&self.candidates)
    }

    /// Runs a cached candidate tick by tick, reporting progress through
    /// `on_event` every `stream_decimation` ticks and on the last tick. The
    /// gripper returns to where it started once the trajectory ends.
    pub fn execute<F>(&mut self, candidate_id: u32, mut on_event: F) -> Result<&EpisodeRecord, SessionError>
    where
        F: FnMut(&StreamEvent),
    {
        self.require("execute", &[SessionState::CandidatesReady])?;
        let candidate = self
            .candidates
            .iter()
            .find(|c| c.id == candidate_id)
            .cloned()
            .ok_or(SessionError::UnknownCandidate(candidate_id))?;
        self.state = SessionState::Executing;
        let before = self.scene.clone();
        let start = before.gripper.position;
        let target_id = self.target();
        let trajectory = candidate.trajectory;
        self.run_streamed(&trajectory, &mut on_event);
        self.scene.gripper.position = start;
        let reward = total_reward(&before, &self.scene, start, target_id, &self.config.reward)?;
        self.state = SessionState::TargetSelected;
        self.push_episode(EpisodeRecord {
            session_id: self.id,
            index: 0,
            mode: Mode::Rearrange,
            target_id,
            start,
            before,
            after: self.scene.clone(),
            sim_duration: trajectory.duration(),
            trajectory: Some(trajectory),
            reward: Some(reward),
            outcome: Outcome::Executed,
            wall_duration: 0.0,
        });
        self.note(LogMessage::Executed { candidate_id });
        self.scene_changed()?;
        self.check_target();
        Ok(self.episodes.last().expect("just pushed"))
    }

    fn run_streamed<F: FnMut(&StreamEvent)>(&mut self, trajectory: &Trajectory, on_event: &mut F) {
        let every = self.config.stream_decimation.max(1);
        let last = trajectory.samples.len().saturating_sub(1);
        let state = self.state;
        let mut prev = poses(&self.scene);
        let push = self.config.push;
        self.scene.execute_with(trajectory, &push, |tick, scene, _| {
            if tick % every != 0 && tick != last {
                return;
            }
            let now = poses(scene);
            let moved_objects: Vec<ObjectPose> = now.iter().zip(&prev).filter(|(a, b)| a != b).map(|(a, _)| *a).collect();
            let fallen = now.iter().zip(&prev).filter(|(a, b)| b.standing && !a.standing).map(|(a, _)| a.id).collect();
            on_event(&StreamEvent { tick, gripper: scene.gripper.position, moved_objects, fallen, state });
            prev = now;
        });
    }

    /// Moves the gripper one step through the push physics, clipped at the
    /// table edge.
    pub fn manual_step(&mut self, direction: Direction) -> Result<&EpisodeRecord, SessionError> {
        self.require("manual_step", &[SessionState::TargetSelected])?;
        let before = self.scene.clone();
        let start = before.gripper.position;
        let to = self.scene.table.clamp(start + direction.unit() * self.config.step_len);
        let trajectory = Trajectory {
            samples: alloc::vec![
                crate::sim::TrajectorySample { t: 0.0, x: start.x, y: start.y },
                crate::sim::TrajectorySample { t: self.config.step_len / self.config.speed, x: to.x, y: to.y },
            ],
            constant_speed: false,
        };
        self.scene.step_push(to, &self.config.push);
        let target_id = self.target();
        self.push_episode(EpisodeRecord {
            session_id: self.id,
            index: 0,
            mode: Mode::Manual,
            target_id,
            start,
            before,
            after: self.scene.clone(),
            trajectory: Some(trajectory),
            reward: None,
            outcome: Outcome::Moved,
            sim_duration: self.config.step_len / self.config.speed,
            wall_duration: 0.0,
        });
        self.note(LogMessage::Manual { direction });
        self.scene_changed()?;
        self.check_target();
        Ok(self.episodes.last().expect("just pushed"))
    }

    /// Grasps along the straight corridor if no standing obstacle blocks it.
    /// The approach is kinematic: a clear corridor has nothing to push.
    pub fn attempt_grasp(&mut self) -> Result<&EpisodeRecord, SessionError> {
        self.require("attempt_grasp", &[SessionState::TargetSelected])?;
        let target_id = self.target();
        let start = self.scene.gripper.position;
        let feasibility = grasp_feasible(&self.scene, start, target_id, self.config.corridor_halfwidth)?;
        let before = self.scene.clone();
        let record = if feasibility.feasible {
            let target = self.scene.object(target_id).expect("target present").center;
            let trajectory = plan_grasp_approach(start, target, self.config.speed, self.config.rate)?;
            self.scene.gripper.position = target;
            self.scene.gripper.closed = true;
            self.scene.objects.retain(|o| o.id != target_id);
            self.state = SessionState::Done;
            EpisodeRecord {
                session_id: self.id,
                index: 0,
                mode: Mode::Grasp,
                target_id,
                start,
                before,
                after: self.scene.clone(),
                sim_duration: trajectory.duration(),
                trajectory: Some(trajectory),
                reward: None,
                outcome: Outcome::Grasped,
                wall_duration: 0.0,
            }
        } else {
            EpisodeRecord {
                session_id: self.id,
                index: 0,
                mode: Mode::Grasp,
                target_id,
                start,
                after: before.clone(),
                before,
                trajectory: None,
                reward: None,
                outcome: Outcome::Blocked { blockers: feasibility.blockers },
                sim_duration: 0.0,
                wall_duration: 0.0,
            }
        };
        self.push_episode(record);
        self.note(LogMessage::GraspAttempt { feasible: feasibility.feasible });
        if feasibility.feasible {
            self.scene_changed()?;
        }
        Ok(self.episodes.last().expect("just pushed"))
    }
}
