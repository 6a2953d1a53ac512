//! Session registry behind the HTTP API.
//!
//! Commands on one session are serialized by that session's mutex; sessions
//! are independent. Progress events go out on a per-session broadcast
//! channel that any number of observers may subscribe to.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use pushgrasp_core::geometry::Point2;
use pushgrasp_core::perception::ClusterSummary;
use pushgrasp_core::policy::{Candidate, Policy};
use pushgrasp_core::session::{
    Direction, EpisodeRecord, Outcome, Session, SessionConfig, SessionError, SessionState, StreamEvent,
};
use pushgrasp_core::sim::{randomize_scene, RandomizationConfig, Scene};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::files::{append_jsonl, depth_to_pgm, SceneDocument};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no session with id {0}")]
    UnknownSession(u64),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("persisting episode failed: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateView {
    pub id: u32,
    pub score: f64,
    pub duration: f64,
    pub predicted_total: f64,
    pub predicted_fall: bool,
    pub path: Vec<[f64; 2]>,
}

impl From<&Candidate> for CandidateView {
    fn from(c: &Candidate) -> Self {
        Self {
            id: c.id,
            score: c.score,
            duration: c.trajectory.duration(),
            predicted_total: c.predicted.total,
            predicted_fall: c.predicted.fell(),
            path: c.path.iter().map(|p| [p.x, p.y]).collect(),
        }
    }
}

/// What clients see of a session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub id: u64,
    pub state: SessionState,
    pub target_id: Option<u32>,
    pub elapsed: f64,
    pub scene: SceneDocument,
    pub candidates: Vec<CandidateView>,
    pub episodes: usize,
    /// Obstacles blocking the last grasp attempt, if it was blocked.
    pub blockers: Vec<u32>,
}

impl SessionView {
    fn of(s: &Session) -> Self {
        let blockers = match s.episodes.last().map(|e| &e.outcome) {
            Some(Outcome::Blocked { blockers }) => blockers.clone(),
            _ => Vec::new(),
        };
        Self {
            id: s.id,
            state: s.state,
            target_id: s.target_id,
            elapsed: s.elapsed,
            scene: SceneDocument::from(&s.scene),
            candidates: s.candidates.iter().map(CandidateView::from).collect(),
            episodes: s.episodes.len(),
            blockers,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateRequest {
    pub seed: Option<u64>,
    pub scene: Option<SceneDocument>,
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub session: SessionConfig,
    pub scenes: RandomizationConfig,
    /// Episode logs go to `<data_dir>/session-<id>.jsonl` when set.
    pub data_dir: Option<PathBuf>,
}

struct Entry {
    session: Mutex<Session>,
    events: broadcast::Sender<StreamEvent>,
}

pub struct Service {
    config: ServiceConfig,
    policy: Option<Arc<Policy>>,
    sessions: Mutex<BTreeMap<u64, Arc<Entry>>>,
    next_id: AtomicU64,
}

impl Service {
    pub fn new(config: ServiceConfig, policy: Option<Policy>) -> Self {
        Self { config, policy: policy.map(Arc::new), sessions: Mutex::new(BTreeMap::new()), next_id: AtomicU64::new(1) }
    }

    fn entry(&self, id: u64) -> Result<Arc<Entry>, ServiceError> {
        self.sessions.lock().expect("registry lock").get(&id).cloned().ok_or(ServiceError::UnknownSession(id))
    }

    pub fn create(&self, req: CreateRequest) -> Result<SessionView, ServiceError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let seed = req.seed.unwrap_or(id);
        let scene = match req.scene {
            Some(doc) => doc.into_scene().map_err(|e| ServiceError::InvalidScene(e.to_string()))?,
            None => randomize_scene(seed, &self.config.scenes).map_err(|e| ServiceError::InvalidScene(e.to_string()))?,
        };
        let session = Session::new(id, seed, scene, self.config.session).map_err(|e| match e {
            SessionError::Sim(e) => ServiceError::InvalidScene(e.to_string()),
            other => other.into(),
        })?;
        let view = SessionView::of(&session);
        let (events, _) = broadcast::channel(1024);
        self.sessions.lock().expect("registry lock").insert(id, Arc::new(Entry { session: Mutex::new(session), events }));
        Ok(view)
    }

    pub fn subscribe(&self, id: u64) -> Result<broadcast::Receiver<StreamEvent>, ServiceError> {
        Ok(self.entry(id)?.events.subscribe())
    }

    /// Runs `f` with exclusive access to the session, then persists any new
    /// episodes and announces the resulting state.
    fn command<T>(
        &self,
        id: u64,
        f: impl FnOnce(&mut Session, &broadcast::Sender<StreamEvent>) -> Result<T, SessionError>,
    ) -> Result<(T, SessionView), ServiceError> {
        let entry = self.entry(id)?;
        let mut s = entry.session.lock().expect("session lock");
        let before = s.episodes.len();
        let started = Instant::now();
        let out = f(&mut s, &entry.events)?;
        let wall = started.elapsed().as_secs_f64();
        for e in &mut s.episodes[before..] {
            e.wall_duration = wall;
        }
        if let Some(dir) = &self.config.data_dir {
            let path = dir.join(format!("session-{id}.jsonl"));
            for e in &s.episodes[before..] {
                append_jsonl(&path, e).map_err(|e| ServiceError::Persist(e.to_string()))?;
            }
        }
        let _ = entry.events.send(StreamEvent {
            tick: 0,
            gripper: s.scene.gripper.position,
            moved_objects: Vec::new(),
            fallen: Vec::new(),
            state: s.state,
        });
        Ok((out, SessionView::of(&s)))
    }

    pub fn view(&self, id: u64) -> Result<SessionView, ServiceError> {
        let entry = self.entry(id)?;
        let s = entry.session.lock().expect("session lock");
        Ok(SessionView::of(&s))
    }

    pub fn set_target(&self, id: u64, click: Point2) -> Result<SessionView, ServiceError> {
        Ok(self.command(id, |s, _| s.set_target(click))?.1)
    }

    pub fn candidates(&self, id: u64, k: usize) -> Result<SessionView, ServiceError> {
        let policy = self.policy.clone();
        Ok(self.command(id, |s, _| s.request_candidates(k, policy.as_deref()).map(|_| ()))?.1)
    }

    pub fn execute(&self, id: u64, candidate_id: u32) -> Result<(EpisodeRecord, SessionView), ServiceError> {
        self.command(id, |s, tx| {
            s.execute(candidate_id, |ev| {
                let _ = tx.send(ev.clone());
            })
            .cloned()
        })
    }

    pub fn manual(&self, id: u64, direction: Direction) -> Result<(EpisodeRecord, SessionView), ServiceError> {
        self.command(id, |s, tx| {
            let before: Vec<_> = s.scene.objects.clone();
            let rec = s.manual_step(direction)?.clone();
            let moved_objects = s
                .scene
                .objects
                .iter()
                .filter(|o| before.iter().any(|b| b.id == o.id && (b.center != o.center || b.standing != o.standing)))
                .map(|o| pushgrasp_core::session::ObjectPose { id: o.id, x: o.center.x, y: o.center.y, standing: o.standing })
                .collect();
            let fallen = s
                .scene
                .objects
                .iter()
                .filter(|o| !o.standing && before.iter().any(|b| b.id == o.id && b.standing))
                .map(|o| o.id)
                .collect();
            let _ = tx.send(StreamEvent { tick: 1, gripper: s.scene.gripper.position, moved_objects, fallen, state: s.state });
            Ok(rec)
        })
    }

    pub fn grasp(&self, id: u64) -> Result<(EpisodeRecord, SessionView), ServiceError> {
        self.command(id, |s, _| s.attempt_grasp().cloned())
    }

    pub fn depth_pgm(&self, id: u64) -> Result<Vec<u8>, ServiceError> {
        let entry = self.entry(id)?;
        let s = entry.session.lock().expect("session lock");
        Ok(depth_to_pgm(&s.depth()))
    }

    pub fn clusters(&self, id: u64) -> Result<Vec<ClusterSummary>, ServiceError> {
        let entry = self.entry(id)?;
        let s = entry.session.lock().expect("session lock");
        Ok(s.clustering.clusters.iter().map(ClusterSummary::from).collect())
    }

    /// Full session including logs and episodes (for tests and tooling).
    pub fn snapshot(&self, id: u64) -> Result<Session, ServiceError> {
        let entry = self.entry(id)?;
        let s = entry.session.lock().expect("session lock");
        Ok(s.clone())
    }

    pub fn has_policy(&self) -> bool {
        self.policy.is_some()
    }
}

/// The operations scripted operators need, implemented both in-process and
/// over HTTP.
pub trait TeleopApi {
    /// Opens a session on `scene`; `seed` drives its candidate draws.
    fn create(&mut self, scene: &Scene, seed: u64) -> anyhow::Result<SessionView>;
    fn set_target(&mut self, id: u64, click: Point2) -> anyhow::Result<SessionView>;
    fn candidates(&mut self, id: u64, k: usize) -> anyhow::Result<SessionView>;
    fn execute(&mut self, id: u64, candidate_id: u32) -> anyhow::Result<SessionView>;
    fn manual(&mut self, id: u64, direction: Direction) -> anyhow::Result<SessionView>;
    fn grasp(&mut self, id: u64) -> anyhow::Result<SessionView>;
}

impl TeleopApi for &Service {
    fn create(&mut self, scene: &Scene, seed: u64) -> anyhow::Result<SessionView> {
        Ok(Service::create(self, CreateRequest { seed: Some(seed), scene: Some(SceneDocument::from(scene)) })?)
    }
    fn set_target(&mut self, id: u64, click: Point2) -> anyhow::Result<SessionView> {
        Ok(Service::set_target(self, id, click)?)
    }
    fn candidates(&mut self, id: u64, k: usize) -> anyhow::Result<SessionView> {
        Ok(Service::candidates(self, id, k)?)
    }
    fn execute(&mut self, id: u64, candidate_id: u32) -> anyhow::Result<SessionView> {
        Ok(Service::execute(self, id, candidate_id)?.1)
    }
    fn manual(&mut self, id: u64, direction: Direction) -> anyhow::Result<SessionView> {
        Ok(Service::manual(self, id, direction)?.1)
    }
    fn grasp(&mut self, id: u64) -> anyhow::Result<SessionView> {
        Ok(Service::grasp(self, id)?.1)
    }
}
