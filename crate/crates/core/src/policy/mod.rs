//! Trajectory-level policy learning.
//!
//! A convolutional autoencoder compresses the 38x64 depth view into a
//! 10-dimensional scene code `c`. The policy is a conditional VAE whose
//! decoder `p(x | z, s)` maps a latent draw `z` and the state
//! `s = (c, g)` (`g` the target position) to a diagonal Gaussian over the
//! three free GRP anchors. Rollouts execute the GRP mean path through the
//! sampled anchors and are scored by the rearrangement reward; training is
//! reward-weighted CVAE regression over a replay buffer.

mod cae;
mod cvae;
mod rollout;
mod train;

pub use cae::{
    cae_dataset_image, cae_loss, pretrain_cae, Cae, CaeConfig, CaeLoss, CaePretrainReport, CaeShape,
};
pub use cvae::{
    cvae_loss, AnchorGaussian, BatchRow, Cvae, CvaeGradients, CvaeLoss, DecodeFrame, CVAE_INPUT_SCALE,
};
pub use rollout::{
    anchors_to_path, noop_reward, rollout, sample_candidates, Candidate, Experience, RolloutMode, RolloutResult,
};
pub use train::{softmax_weights, Baseline, ReplayBuffer, TrainStats};

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::grp::{GrpError, KernelParams};
use crate::nn::{AdamConfig, AdamState, NetManifest, Network, NnError};
use crate::rewards::{RewardError, RewardOptions};
use crate::seed;
use crate::sim::{DepthImage, PushParams, SimError, TableSpec, DEFAULT_RATE, DEFAULT_SPEED};

pub const FEATURE_DIM: usize = 10;

/// Height maps are fractions of the camera height; objects are at most a
/// quarter of it tall, so the network input is scaled up to roughly [0, 1].
pub const HEIGHT_GAIN: f32 = 4.0;

/// Network input for a depth image.
pub fn depth_input(depth: &DepthImage) -> Vec<f32> {
    depth.normalized_heights().into_iter().map(|h| h * HEIGHT_GAIN).collect()
}
pub const ANCHOR_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Grp(#[from] GrpError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("encoder has never been trained")]
    UntrainedEncoder,
    #[error("scene has no target object")]
    NoTarget,
    #[error("replay buffer holds {have} experiences, batch needs {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error("non-finite loss; parameters left unchanged")]
    NonFiniteLoss,
    #[error("autoencoder training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Everything that shapes rollouts and updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Softmax temperature over batch advantages, in reward units.
    pub temperature: f64,
    pub kl_weight: f64,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub updates_per_iteration: usize,
    pub grad_clip: f64,
    pub baseline: Baseline,
    /// Anchor offsets are `anchor_scale * raw` meters from the straight
    /// approach line.
    pub anchor_scale: f64,
    /// Distance from the target at which the base approach line ends.
    pub approach_clearance: f64,
    pub init_std: f64,
    pub std_floor: f64,
    pub finetune_encoder: bool,
    pub kernel: KernelParams,
    pub query_points: usize,
    pub speed: f64,
    pub rate: f64,
    pub push: PushParams,
    pub reward: RewardOptions,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            latent_dim: 4,
            hidden: 64,
            temperature: 10.0,
            kl_weight: 0.3,
            learning_rate: 1e-3,
            batch_size: 64,
            buffer_capacity: 2000,
            updates_per_iteration: 16,
            grad_clip: 10.0,
            baseline: Baseline::NoOp,
            anchor_scale: 0.1,
            approach_clearance: 0.12,
            init_std: 0.05,
            std_floor: 1e-4,
            finetune_encoder: false,
            kernel: KernelParams::default(),
            query_points: crate::grp::DEFAULT_QUERY_POINTS,
            speed: DEFAULT_SPEED,
            rate: DEFAULT_RATE,
            push: PushParams::default(),
            reward: RewardOptions { target_contact_penalty: None },
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m| Err(PolicyError::InvalidConfig(m));
        if self.latent_dim == 0 || self.hidden == 0 {
            return bad("latent_dim and hidden must be positive");
        }
        if !(self.temperature > 0.0) || !(self.kl_weight >= 0.0) || !(self.learning_rate > 0.0) {
            return bad("temperature and learning rate must be positive, kl_weight non-negative");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("buffer must hold at least one batch");
        }
        if !(self.approach_clearance >= 0.0) {
            return bad("approach clearance must be non-negative");
        }
        if !(self.anchor_scale > 0.0) || !(self.init_std > self.std_floor) || !(self.std_floor > 0.0) {
            return bad("anchor scale and stds must be positive with init_std above the floor");
        }
        if !(self.speed > 0.0) || !(self.rate > 0.0) || self.query_points < 2 {
            return bad("speed, rate and query points must be positive");
        }
        self.kernel.validate()?;
        Ok(())
    }
}

/// `s = (c, g)`: scene code and target position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub feature: Vec<f32>,
    pub target: Point2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    /// Standard normal draw.
    pub fn sample(dim: usize, rng: &mut seed::Rng) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        Self((0..dim).map(|_| StandardNormal.sample(rng)).collect())
    }
}

/// Runs the encoder on a depth image. Errors if the encoder was never
/// updated (a freshly initialized network would give meaningless codes).
pub fn encode_state(depth: &DepthImage, target: Point2, encoder: &Network) -> Result<PolicyState, PolicyError> {
    if encoder.version() == 0 {
        return Err(PolicyError::UntrainedEncoder);
    }
    let feature = encoder.predict(&depth_input(depth), 1)?;
    Ok(PolicyState { feature, target })
}

/// Trained encoder plus the CVAE and its optimizer state.
#[derive(Debug, Clone)]
pub struct Policy {
    pub config: PolicyConfig,
    pub table: TableSpec,
    pub encoder: Network,
    pub cvae: Cvae,
    pub adam_q: AdamState,
    pub adam_p: AdamState,
    pub adam_encoder: Option<AdamState>,
}

impl Policy {
    pub fn new(encoder: Network, table: TableSpec, config: PolicyConfig, seed_value: u64) -> Result<Self, PolicyError> {
        config.validate()?;
        if encoder.output_len() != FEATURE_DIM {
            return Err(PolicyError::InvalidConfig("encoder must produce 10 features"));
        }
        let mut encoder = encoder;
        encoder.set_frozen(!config.finetune_encoder);
        let mut rng = seed::derived_rng(seed_value, &[seed::tag::INIT]);
        let cvae = Cvae::new(&config, &mut rng);
        let adam = AdamConfig { lr: config.learning_rate, ..AdamConfig::default() };
        Ok(Self {
            adam_q: AdamState::new(&cvae.q, adam),
            adam_p: AdamState::new(&cvae.p, adam),
            adam_encoder: config.finetune_encoder.then(|| AdamState::new(&encoder, adam)),
            config,
            table,
            encoder,
            cvae,
        })
    }

    pub fn encode(&self, depth: &DepthImage, target: Point2) -> Result<PolicyState, PolicyError> {
        encode_state(depth, target, &self.encoder)
    }

    /// Gaussian over the free anchors for latent `z` in state `s`.
    pub fn decode_anchors(&self, z: &LatentVector, state: &PolicyState, start: Point2) -> Result<AnchorGaussian, PolicyError> {
        let frame = DecodeFrame::new(start, state.target, self.table, &self.config);
        self.cvae.decode(&z.0, &state.feature, &frame)
    }

    /// Parameter version of the CVAE decoder, bumped by every update.
    pub fn version(&self) -> u64 {
        self.cvae.p.version()
    }

    pub fn export(&self) -> (PolicyManifest, Vec<f32>) {
        let mut blob = Vec::new();
        let encoder = self.encoder.export(&mut blob);
        let q = self.cvae.q.export(&mut blob);
        let p = self.cvae.p.export(&mut blob);
        let adam_q = AdamManifest::export(&self.adam_q, &mut blob);
        let adam_p = AdamManifest::export(&self.adam_p, &mut blob);
        let adam_encoder = self.adam_encoder.as_ref().map(|a| AdamManifest::export(a, &mut blob));
        let manifest = PolicyManifest {
            format_version: crate::nn::CHECKPOINT_FORMAT_VERSION,
            config: self.config,
            table: self.table,
            encoder,
            q,
            p,
            adam_q,
            adam_p,
            adam_encoder,
            blob_len: blob.len(),
        };
        (manifest, blob)
    }

    pub fn import(manifest: &PolicyManifest, blob: &[f32]) -> Result<Self, PolicyError> {
        if manifest.format_version != crate::nn::CHECKPOINT_FORMAT_VERSION {
            return Err(NnError::UnsupportedVersion(manifest.format_version).into());
        }
        if blob.len() != manifest.blob_len {
            return Err(NnError::BlobSize { expected: manifest.blob_len, actual: blob.len() }.into());
        }
        manifest.config.validate()?;
        let encoder = Network::import(&manifest.encoder, blob)?;
        let q = Network::import(&manifest.q, blob)?;
        let p = Network::import(&manifest.p, blob)?;
        let cvae = Cvae::from_networks(q, p, &manifest.config)?;
        Ok(Self {
            config: manifest.config,
            table: manifest.table,
            adam_q: manifest.adam_q.import(blob, &cvae.q)?,
            adam_p: manifest.adam_p.import(blob, &cvae.p)?,
            adam_encoder: manifest.adam_encoder.as_ref().map(|a| a.import(blob, &encoder)).transpose()?,
            encoder,
            cvae,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamManifest {
    pub config: AdamConfig,
    pub step: u64,
    pub offset: usize,
    pub len: usize,
}

impl AdamManifest {
    fn export(state: &AdamState, blob: &mut Vec<f32>) -> Self {
        let offset = blob.len();
        blob.extend_from_slice(&state.m);
        blob.extend_from_slice(&state.v);
        Self { config: state.config, step: state.step, offset, len: state.m.len() }
    }

    fn import(&self, blob: &[f32], net: &Network) -> Result<AdamState, NnError> {
        let end = self.offset + 2 * self.len;
        if end > blob.len() {
            return Err(NnError::BlobSize { expected: end, actual: blob.len() });
        }
        if self.len != net.param_count() {
            return Err(NnError::Manifest("optimizer state does not match its network"));
        }
        Ok(AdamState {
            config: self.config,
            step: self.step,
            m: blob[self.offset..self.offset + self.len].to_vec(),
            v: blob[self.offset + self.len..end].to_vec(),
        })
    }
}

/// Layout of a policy checkpoint blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyManifest {
    pub format_version: u32,
    pub config: PolicyConfig,
    pub table: TableSpec,
    pub encoder: NetManifest,
    pub q: NetManifest,
    pub p: NetManifest,
    pub adam_q: AdamManifest,
    pub adam_p: AdamManifest,
    pub adam_encoder: Option<AdamManifest>,
    pub blob_len: usize,
}

#[cfg(test)]
mod tests;
