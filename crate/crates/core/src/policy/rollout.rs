use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::cvae::to_points;
use super::{LatentVector, Policy, PolicyConfig, PolicyError, PolicyState};
use crate::geometry::Point2;
use crate::grp::{mean_path, AnchorSet};
use crate::rewards::{total_reward, RewardBreakdown};
use crate::seed;
use crate::sim::{render_depth, retime_constant_speed, ExecutionReport, Scene, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    /// Anchors drawn from the decoder Gaussian (training exploration).
    Explore,
    /// Anchors at the decoder mean (operator candidates).
    Mean,
}

/// GRP mean path from `start` through the free anchors, retimed to
/// constant speed.
pub fn anchors_to_path(start: Point2, free: &[f64], config: &PolicyConfig) -> Result<(Vec<Point2>, Trajectory), PolicyError> {
    let anchors = AnchorSet::from_start(start, &to_points(free))?;
    let path = mean_path(&anchors, &config.kernel, config.query_points)?;
    let trajectory = retime_constant_speed(&path, config.speed, config.rate)?;
    Ok((path, trajectory))
}

/// Reward of leaving the scene untouched.
pub fn noop_reward(scene: &Scene, start: Point2, target_id: u32, config: &PolicyConfig) -> Result<f64, PolicyError> {
    Ok(total_reward(scene, scene, start, target_id, &config.reward)?.total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub seed: u64,
    pub target_id: u32,
    pub start: Point2,
    pub state: PolicyState,
    pub z: LatentVector,
    /// Free anchors `[x1, y1, x2, y2, x3, y3]`.
    pub anchors: Vec<f64>,
    pub path: Vec<Point2>,
    pub trajectory: Trajectory,
    pub reward: RewardBreakdown,
    pub noop_reward: f64,
    pub before: Scene,
    pub after: Scene,
    pub execution: ExecutionReport,
}

impl RolloutResult {
    pub fn advantage(&self) -> f64 {
        self.reward.total - self.noop_reward
    }

    pub fn experience(&self, heights: Option<Vec<f32>>) -> Experience {
        Experience {
            feature: self.state.feature.clone(),
            target: self.state.target,
            start: self.start,
            anchors: self.anchors.clone(),
            reward: self.reward.total,
            noop_reward: self.noop_reward,
            fell: self.reward.fell(),
            heights,
        }
    }
}

/// What the trainer keeps from a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub feature: Vec<f32>,
    pub target: Point2,
    pub start: Point2,
    pub anchors: Vec<f64>,
    pub reward: f64,
    pub noop_reward: f64,
    pub fell: bool,
    /// Depth input, kept only when the encoder is fine-tuned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heights: Option<Vec<f32>>,
}

fn run(
    policy: &Policy,
    scene: &Scene,
    state: &PolicyState,
    z: &LatentVector,
    seed_value: u64,
    mode: RolloutMode,
) -> Result<RolloutResult, PolicyError> {
    let target_id = scene.target().ok_or(PolicyError::NoTarget)?.id;
    let start = scene.gripper.position;
    let gaussian = policy.decode_anchors(z, state, start)?;
    let anchors = match mode {
        RolloutMode::Mean => gaussian.mean.clone(),
        RolloutMode::Explore => {
            let mut rng = seed::derived_rng(seed_value, &[seed::tag::ANCHOR_NOISE]);
            gaussian.sample(&scene.table, &mut rng)
        }
    };
    let (path, trajectory) = anchors_to_path(start, &anchors, &policy.config)?;
    let mut after = scene.clone();
    let execution = after.execute(&trajectory, &policy.config.push);
    let reward = total_reward(scene, &after, start, target_id, &policy.config.reward)?;
    let noop_reward = noop_reward(scene, start, target_id, &policy.config)?;
    Ok(RolloutResult {
        seed: seed_value,
        target_id,
        start,
        state: state.clone(),
        z: z.clone(),
        anchors,
        path,
        trajectory,
        reward,
        noop_reward,
        before: scene.clone(),
        after,
        execution,
    })
}

/// Encodes the scene, decodes anchors for `z`, executes the GRP mean path
/// through them from the current gripper position and scores the outcome.
pub fn rollout(
    policy: &Policy,
    scene: &Scene,
    z: &LatentVector,
    seed_value: u64,
    mode: RolloutMode,
) -> Result<RolloutResult, PolicyError> {
    let target = scene.target().ok_or(PolicyError::NoTarget)?;
    let state = policy.encode(&render_depth(scene), target.center)?;
    run(policy, scene, &state, z, seed_value, mode)
}

/// One operator option with its simulated outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Draw order; unaffected by sorting.
    pub id: u32,
    pub z: LatentVector,
    pub anchors: Vec<f64>,
    pub path: Vec<Point2>,
    pub trajectory: Trajectory,
    pub predicted: RewardBreakdown,
    pub predicted_after: Scene,
    /// Predicted total reward minus the no-op reward.
    pub score: f64,
}

/// Draws `k` latents from the prior, decodes mean anchors for each and
/// scores them by simulating execution. Sorted by score, best first.
pub fn sample_candidates(policy: &Policy, scene: &Scene, k: usize, seed_value: u64) -> Result<Vec<Candidate>, PolicyError> {
    if k == 0 {
        return Err(PolicyError::InvalidConfig("at least one candidate must be requested"));
    }
    let target = scene.target().ok_or(PolicyError::NoTarget)?;
    let state = policy.encode(&render_depth(scene), target.center)?;
    let mut rng = seed::derived_rng(seed_value, &[seed::tag::CANDIDATES]);
    let mut out = Vec::with_capacity(k);
    for id in 0..k {
        let z = LatentVector::sample(policy.config.latent_dim, &mut rng);
        let r = run(policy, scene, &state, &z, seed_value, RolloutMode::Mean)?;
        out.push(Candidate {
            id: id as u32,
            score: r.advantage(),
            z: r.z,
            anchors: r.anchors,
            path: r.path,
            trajectory: r.trajectory,
            predicted: r.reward,
            predicted_after: r.after,
        });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}
