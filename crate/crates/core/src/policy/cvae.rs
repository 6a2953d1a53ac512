use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{PolicyConfig, PolicyError, ANCHOR_DIM, FEATURE_DIM};
use crate::geometry::Point2;
use crate::grp::FREE_ANCHORS;
use crate::nn::{sigmoid, softplus, Gradients, Layer, Network, NnError, Scalar, Tensor};
use crate::seed;
use crate::sim::TableSpec;

/// Positions enter the networks as `(p - table center) / CVAE_INPUT_SCALE`.
pub const CVAE_INPUT_SCALE: f64 = 0.3;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Geometry needed to turn raw decoder outputs into anchors: means are
/// offsets from evenly spaced points on the straight approach line, which
/// ends `approach_clearance` short of the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeFrame {
    pub start: Point2,
    pub target: Point2,
    pub table: TableSpec,
    pub anchor_scale: f64,
    pub std_floor: f64,
    /// The base line stops this far short of the target.
    pub approach_clearance: f64,
}

impl DecodeFrame {
    pub fn new(start: Point2, target: Point2, table: TableSpec, config: &PolicyConfig) -> Self {
        Self {
            start,
            target,
            table,
            anchor_scale: config.anchor_scale,
            std_floor: config.std_floor,
            approach_clearance: config.approach_clearance,
        }
    }

    fn base(&self, k: usize) -> Point2 {
        let span = self.target - self.start;
        let len = span.norm();
        let stop = if len > self.approach_clearance {
            self.target - span * (self.approach_clearance / len)
        } else {
            self.start
        };
        self.start.lerp(stop, (k + 1) as f64 / FREE_ANCHORS as f64)
    }

    fn normalize(&self, p: Point2) -> [f64; 2] {
        let c = self.table.center();
        [(p.x - c.x) / CVAE_INPUT_SCALE, (p.y - c.y) / CVAE_INPUT_SCALE]
    }

    fn bounds(&self, j: usize) -> (f64, f64) {
        if j % 2 == 0 {
            self.table.x_range
        } else {
            self.table.y_range
        }
    }

    /// Unclamped mean coordinate `j` for raw output `r`.
    fn raw_mean(&self, j: usize, r: f64) -> f64 {
        let b = self.base(j / 2);
        let base = if j % 2 == 0 { b.x } else { b.y };
        base + self.anchor_scale * r
    }
}

/// Diagonal Gaussian over the free anchors, flattened as
/// `[x1, y1, x2, y2, x3, y3]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl AnchorGaussian {
    pub fn mean_points(&self) -> Vec<Point2> {
        to_points(&self.mean)
    }

    /// One draw, clamped to the table like the mean.
    pub fn sample(&self, table: &TableSpec, rng: &mut seed::Rng) -> Vec<f64> {
        let mut x: Vec<f64> = self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let e: f64 = StandardNormal.sample(rng);
                m + s * e
            })
            .collect();
        clamp_to_table(&mut x, table);
        x
    }
}

pub(crate) fn to_points(flat: &[f64]) -> Vec<Point2> {
    flat.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect()
}

fn clamp_to_table(x: &mut [f64], table: &TableSpec) {
    for (j, v) in x.iter_mut().enumerate() {
        let (lo, hi) = if j % 2 == 0 { table.x_range } else { table.y_range };
        *v = v.clamp(lo, hi);
    }
}

/// Recognition network `q(z | x, s)` and decoder `p(x | z, s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cvae<T = f32> {
    pub q: Network<T>,
    pub p: Network<T>,
    pub latent_dim: usize,
}

fn mlp<T: Scalar>(input: usize, hidden: usize, output: usize, rng: &mut seed::Rng) -> Result<Network<T>, NnError> {
    Network::new(vec![
        Layer::dense(input, hidden, rng),
        Layer::tanh(hidden),
        Layer::dense(hidden, hidden, rng),
        Layer::tanh(hidden),
        Layer::dense(hidden, output, rng),
    ])
}

impl<T: Scalar> Cvae<T> {
    pub fn new(config: &PolicyConfig, rng: &mut seed::Rng) -> Self {
        Self::with_sizes(config.latent_dim, config.hidden, config.init_std - config.std_floor, rng)
    }

    /// Builds both networks. The decoder's std outputs start at
    /// `initial_std` above the floor for every input.
    pub fn with_sizes(latent_dim: usize, hidden: usize, initial_std: f64, rng: &mut seed::Rng) -> Self {
        let q = mlp(ANCHOR_DIM + FEATURE_DIM + 2, hidden, 2 * latent_dim, rng).expect("valid sizes");
        let mut p: Network<T> = mlp(latent_dim + FEATURE_DIM + 2, hidden, 2 * ANCHOR_DIM, rng).expect("valid sizes");
        // softplus^-1(initial_std)
        let inv = libm::log(libm::expm1(initial_std));
        let last = p.layers().len() - 1;
        let out = &mut p.layers_mut()[last];
        for b in &mut out.bias[ANCHOR_DIM..] {
            *b = T::of(inv);
        }
        for o in ANCHOR_DIM..2 * ANCHOR_DIM {
            for w in &mut out.weight[o * hidden..(o + 1) * hidden] {
                *w = *w * T::of(0.1);
            }
        }
        // Construction is not training: restart the version counter.
        let p = Network::from_parts(p.layers().to_vec(), 0).expect("same layers");
        Self { q, p, latent_dim }
    }

    pub fn from_networks(q: Network<T>, p: Network<T>, config: &PolicyConfig) -> Result<Self, PolicyError> {
        let dz = config.latent_dim;
        if q.input_len() != ANCHOR_DIM + FEATURE_DIM + 2
            || q.output_len() != 2 * dz
            || p.input_len() != dz + FEATURE_DIM + 2
            || p.output_len() != 2 * ANCHOR_DIM
        {
            return Err(PolicyError::InvalidConfig("CVAE network shapes disagree with the config"));
        }
        Ok(Self { q, p, latent_dim: dz })
    }

    fn p_input(&self, z: &[f64], feature: &[f32], frame: &DecodeFrame, out: &mut Vec<T>) {
        out.extend(z.iter().map(|&v| T::of(v)));
        out.extend(feature.iter().map(|&v| T::of(v as f64)));
        out.extend(frame.normalize(frame.target).iter().map(|&v| T::of(v)));
    }

    fn q_input(&self, anchors: &[f64], feature: &[f32], frame: &DecodeFrame, out: &mut Vec<T>) {
        for p in to_points(anchors) {
            out.extend(frame.normalize(p).iter().map(|&v| T::of(v)));
        }
        out.extend(feature.iter().map(|&v| T::of(v as f64)));
        out.extend(frame.normalize(frame.target).iter().map(|&v| T::of(v)));
    }

    /// Decoder Gaussian for one `(z, s)`: means clamped to the table, std
    /// `softplus(raw) + floor`.
    pub fn decode(&self, z: &[f64], feature: &[f32], frame: &DecodeFrame) -> Result<AnchorGaussian, PolicyError> {
        if z.len() != self.latent_dim || feature.len() != FEATURE_DIM {
            return Err(NnError::ShapeMismatch { expected: self.latent_dim + FEATURE_DIM, actual: z.len() + feature.len() }.into());
        }
        let mut input = Vec::with_capacity(self.p.input_len());
        self.p_input(z, feature, frame, &mut input);
        let raw = self.p.predict(&input, 1)?;
        let mut mean: Vec<f64> = (0..ANCHOR_DIM).map(|j| frame.raw_mean(j, raw[j].as_f64())).collect();
        clamp_to_table(&mut mean, &frame.table);
        let std = (0..ANCHOR_DIM).map(|j| softplus(raw[ANCHOR_DIM + j].as_f64()) + frame.std_floor).collect();
        Ok(AnchorGaussian { mean, std })
    }
}

/// One weighted training example. `eps` is the standard normal noise of the
/// reparameterized latent draw.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRow {
    pub anchors: Vec<f64>,
    pub feature: Vec<f32>,
    pub frame: DecodeFrame,
    pub weight: f64,
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeGradients<T = f32> {
    pub q: Gradients<T>,
    pub p: Gradients<T>,
}

#[derive(Debug, Clone)]
pub struct CvaeLoss<T = f32> {
    /// `sum_i w_i (nll_i + beta kl_i)`.
    pub loss: f64,
    /// Weighted negative log-likelihood and KL parts of `loss` (KL unscaled).
    pub nll: f64,
    pub kl: f64,
    pub grads: CvaeGradients<T>,
    /// d loss / d feature, one row per example (for encoder fine-tuning).
    pub feature_grads: Vec<Vec<f64>>,
}

/// Weighted ELBO loss with exact gradients for both networks.
pub fn cvae_loss<T: Scalar>(cvae: &Cvae<T>, rows: &[BatchRow], kl_weight: f64) -> Result<CvaeLoss<T>, NnError> {
    let n = rows.len();
    let dz = cvae.latent_dim;
    if n == 0 {
        return Err(NnError::ShapeMismatch { expected: 1, actual: 0 });
    }
    for r in rows {
        if r.anchors.len() != ANCHOR_DIM || r.feature.len() != FEATURE_DIM || r.eps.len() != dz {
            return Err(NnError::ShapeMismatch { expected: ANCHOR_DIM + FEATURE_DIM + dz, actual: r.anchors.len() + r.feature.len() + r.eps.len() });
        }
    }

    let mut q_in = Vec::with_capacity(n * cvae.q.input_len());
    for r in rows {
        cvae.q_input(&r.anchors, &r.feature, &r.frame, &mut q_in);
    }
    let (q_out, q_cache) = cvae.q.forward(&Tensor::matrix(n, cvae.q.input_len(), q_in)?)?;

    let mut zs = vec![0.0f64; n * dz];
    let mut kl_total = 0.0;
    let mut p_in = Vec::with_capacity(n * cvae.p.input_len());
    for (i, r) in rows.iter().enumerate() {
        let o = q_out.row(i);
        for k in 0..dz {
            let mu = o[k].as_f64();
            let lv = o[dz + k].as_f64();
            zs[i * dz + k] = mu + libm::exp(0.5 * lv) * r.eps[k];
            kl_total += r.weight * 0.5 * (mu * mu + libm::exp(lv) - lv - 1.0);
        }
        cvae.p_input(&zs[i * dz..(i + 1) * dz], &r.feature, &r.frame, &mut p_in);
    }
    let (p_out, p_cache) = cvae.p.forward(&Tensor::matrix(n, cvae.p.input_len(), p_in)?)?;

    let mut nll_total = 0.0;
    let mut g_p = vec![T::zero(); n * 2 * ANCHOR_DIM];
    for (i, r) in rows.iter().enumerate() {
        let o = p_out.row(i);
        let g = &mut g_p[i * 2 * ANCHOR_DIM..(i + 1) * 2 * ANCHOR_DIM];
        for j in 0..ANCHOR_DIM {
            let raw_m = o[j].as_f64();
            let raw_s = o[ANCHOR_DIM + j].as_f64();
            let unclamped = r.frame.raw_mean(j, raw_m);
            let (lo, hi) = r.frame.bounds(j);
            let mean = unclamped.clamp(lo, hi);
            let inside = unclamped > lo && unclamped < hi;
            let sigma = softplus(raw_s) + r.frame.std_floor;
            let diff = r.anchors[j] - mean;
            nll_total += r.weight * (libm::log(sigma) + diff * diff / (2.0 * sigma * sigma) + 0.5 * LN_2PI);
            let d_mean = -diff / (sigma * sigma);
            g[j] = T::of(if inside { r.weight * d_mean * r.frame.anchor_scale } else { 0.0 });
            let d_sigma = 1.0 / sigma - diff * diff / (sigma * sigma * sigma);
            g[ANCHOR_DIM + j] = T::of(r.weight * d_sigma * sigmoid(raw_s));
        }
    }
    let (p_grads, g_p_in) = cvae.p.backward(&p_cache, &g_p)?;

    let p_len = cvae.p.input_len();
    let mut g_q = vec![T::zero(); n * 2 * dz];
    let mut feature_grads: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (i, r) in rows.iter().enumerate() {
        let o = q_out.row(i);
        let gz = &g_p_in[i * p_len..i * p_len + dz];
        for k in 0..dz {
            let mu = o[k].as_f64();
            let lv = o[dz + k].as_f64();
            let dz_k = gz[k].as_f64();
            g_q[i * 2 * dz + k] = T::of(dz_k + r.weight * kl_weight * mu);
            g_q[i * 2 * dz + dz + k] =
                T::of(dz_k * 0.5 * libm::exp(0.5 * lv) * r.eps[k] + r.weight * kl_weight * 0.5 * (libm::exp(lv) - 1.0));
        }
        feature_grads.push(g_p_in[i * p_len + dz..i * p_len + dz + FEATURE_DIM].iter().map(|v| v.as_f64()).collect());
    }
    let (q_grads, g_q_in) = cvae.q.backward(&q_cache, &g_q)?;
    let q_len = cvae.q.input_len();
    for (i, fg) in feature_grads.iter_mut().enumerate() {
        let src = &g_q_in[i * q_len + ANCHOR_DIM..i * q_len + ANCHOR_DIM + FEATURE_DIM];
        for (a, b) in fg.iter_mut().zip(src) {
            *a += b.as_f64();
        }
    }

    let loss = nll_total + kl_weight * kl_total;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("loss"));
    }
    Ok(CvaeLoss { loss, nll: nll_total, kl: kl_total, grads: CvaeGradients { q: q_grads, p: p_grads }, feature_grads })
}
