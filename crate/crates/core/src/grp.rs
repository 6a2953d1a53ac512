//! Gaussian random paths.
//!
//! A path is modeled as two independent Gaussian processes, `x(t)` and
//! `y(t)` over normalized time `t in [0, 1]`, sharing a squared-exponential
//! kernel. Conditioning on a handful of anchor points gives a smooth
//! distribution over paths that passes (almost) exactly through them. The
//! processes are expressed as displacements from the first anchor (the
//! current end-effector position), so the prior pulls toward staying put
//! rather than toward the table origin.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpError {
    #[error("anchor times must start at 0, increase strictly and stay within [0, 1]")]
    InvalidTimes,
    #[error("anchor times and points differ in length or are empty")]
    LengthMismatch,
    #[error("anchor coordinates must be finite")]
    NonFiniteAnchor,
    #[error("kernel parameters out of range")]
    InvalidKernel,
    #[error("need at least two query points")]
    TooFewQueries,
    #[error("anchor Gram matrix is numerically singular")]
    Singular,
    #[error("posterior covariance could not be factorized even with jitter {0}")]
    FactorizationFailed(f64),
}

/// Squared-exponential kernel `k(t, t') = sf2 * exp(-(t - t')^2 / (2 l^2))`
/// plus observation noise on the anchors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            length_scale: 0.25,
            signal_variance: 0.05,
            noise_variance: 1e-8,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<(), GrpError> {
        let ok = self.length_scale > 0.0
            && self.signal_variance > 0.0
            && self.noise_variance >= 0.0
            && self.length_scale.is_finite()
            && self.signal_variance.is_finite()
            && self.noise_variance.is_finite();
        ok.then_some(()).ok_or(GrpError::InvalidKernel)
    }

    pub fn k(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        self.signal_variance * libm::exp(-d * d / (2.0 * self.length_scale * self.length_scale))
    }
}

/// Default anchor times: the fixed start plus three free anchors.
pub const ANCHOR_TIMES: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
pub const FREE_ANCHORS: usize = 3;
pub const DEFAULT_QUERY_POINTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    times: Vec<f64>,
    points: Vec<Point2>,
}

impl AnchorSet {
    pub fn new(times: Vec<f64>, points: Vec<Point2>) -> Result<Self, GrpError> {
        if times.is_empty() || times.len() != points.len() {
            return Err(GrpError::LengthMismatch);
        }
        let increasing = times.windows(2).all(|w| w[1] > w[0]);
        if times[0] != 0.0 || !increasing || *times.last().unwrap() > 1.0 {
            return Err(GrpError::InvalidTimes);
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(GrpError::NonFiniteAnchor);
        }
        Ok(Self { times, points })
    }

    /// Start point at `t = 0` followed by the free anchors at evenly spaced
    /// times ending at `t = 1`.
    pub fn from_start(start: Point2, free: &[Point2]) -> Result<Self, GrpError> {
        let n = free.len();
        let times = (0..=n).map(|i| if i == n { 1.0 } else { i as f64 / n as f64 }).collect();
        let mut points = Vec::with_capacity(n + 1);
        points.push(start);
        points.extend_from_slice(free);
        Self::new(times, points)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn start(&self) -> Point2 {
        self.points[0]
    }

    pub fn free(&self) -> &[Point2] {
        &self.points[1..]
    }
}

/// Query times `0, 1/(T-1), ..., 1`.
pub fn query_times(count: usize) -> Vec<f64> {
    (0..count).map(|i| i as f64 / (count - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpPosterior {
    pub times: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub mean_y: Vec<f64>,
    /// Shared `T x T` covariance, row-major.
    pub covariance: Vec<f64>,
}

impl GrpPosterior {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.len() + j]
    }

    pub fn mean_path(&self) -> Vec<Point2> {
        self.mean_x.iter().zip(&self.mean_y).map(|(&x, &y)| Point2::new(x, y)).collect()
    }
}

/// In-place lower Cholesky factor of a symmetric `n x n` matrix. Fails when a
/// pivot drops below `min_pivot`.
fn cholesky(n: usize, a: &[f64], min_pivot: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > min_pivot) {
            return None;
        }
        let d = libm::sqrt(d);
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Some(l)
}

/// Solves `L y = b` for lower-triangular `L`.
fn forward_solve(n: usize, l: &[f64], b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `L^T x = y` for lower-triangular `L`.
fn backward_solve(n: usize, l: &[f64], b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

struct Conditioned {
    factor: Vec<f64>,
    alpha_x: Vec<f64>,
    alpha_y: Vec<f64>,
}

fn condition(anchors: &AnchorSet, kernel: &KernelParams) -> Result<Conditioned, GrpError> {
    kernel.validate()?;
    let n = anchors.times.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            gram[i * n + j] = kernel.k(anchors.times[i], anchors.times[j]);
        }
        gram[i * n + i] += kernel.noise_variance;
    }
    let factor = cholesky(n, &gram, 1e-12 * kernel.signal_variance).ok_or(GrpError::Singular)?;
    let start = anchors.start();
    let mut alpha_x: Vec<f64> = anchors.points.iter().map(|p| p.x - start.x).collect();
    let mut alpha_y: Vec<f64> = anchors.points.iter().map(|p| p.y - start.y).collect();
    for alpha in [&mut alpha_x, &mut alpha_y] {
        forward_solve(n, &factor, alpha);
        backward_solve(n, &factor, alpha);
    }
    Ok(Conditioned { factor, alpha_x, alpha_y })
}

/// Posterior mean only, at `query_count` uniform times. This is the path
/// every executed trajectory follows.
pub fn mean_path(anchors: &AnchorSet, kernel: &KernelParams, query_count: usize) -> Result<Vec<Point2>, GrpError> {
    if query_count < 2 {
        return Err(GrpError::TooFewQueries);
    }
    let c = condition(anchors, kernel)?;
    let start = anchors.start();
    Ok(query_times(query_count)
        .into_iter()
        .map(|t| {
            let (mut x, mut y) = (start.x, start.y);
            for (a, &ta) in anchors.times.iter().enumerate() {
                let k = kernel.k(t, ta);
                x += k * c.alpha_x[a];
                y += k * c.alpha_y[a];
            }
            Point2::new(x, y)
        })
        .collect())
}

/// Full GP posterior (mean per dimension and shared covariance) at
/// `query_count` uniform times on `[0, 1]`.
pub fn build_posterior(
    anchors: &AnchorSet,
    kernel: &KernelParams,
    query_count: usize,
) -> Result<GrpPosterior, GrpError> {
    if query_count < 2 {
        return Err(GrpError::TooFewQueries);
    }
    let c = condition(anchors, kernel)?;
    let n = anchors.times.len();
    let times = query_times(query_count);
    let start = anchors.start();

    // v_q = L^{-1} k(A, t_q) for each query q, stored column by column.
    let mut v = vec![0.0; query_count * n];
    let mut mean_x = Vec::with_capacity(query_count);
    let mut mean_y = Vec::with_capacity(query_count);
    for (q, &t) in times.iter().enumerate() {
        let col = &mut v[q * n..(q + 1) * n];
        for (a, &ta) in anchors.times.iter().enumerate() {
            col[a] = kernel.k(t, ta);
        }
        mean_x.push(start.x + col.iter().zip(&c.alpha_x).map(|(k, a)| k * a).sum::<f64>());
        mean_y.push(start.y + col.iter().zip(&c.alpha_y).map(|(k, a)| k * a).sum::<f64>());
        forward_solve(n, &c.factor, col);
    }

    let mut covariance = vec![0.0; query_count * query_count];
    for i in 0..query_count {
        for j in 0..=i {
            let vi = &v[i * n..(i + 1) * n];
            let vj = &v[j * n..(j + 1) * n];
            let reduction: f64 = vi.iter().zip(vj).map(|(a, b)| a * b).sum();
            let value = kernel.k(times[i], times[j]) - reduction;
            covariance[i * query_count + j] = value;
            covariance[j * query_count + i] = value;
        }
    }
    Ok(GrpPosterior { times, mean_x, mean_y, covariance })
}

pub const SAMPLE_JITTER: f64 = 1e-9;
pub const MAX_SAMPLE_JITTER: f64 = 1e-6;

/// Draws one path from the posterior: `mean + L eps` per dimension, with `L`
/// the Cholesky factor of `covariance + jitter I`. The jitter starts at 1e-9
/// and escalates by 10x up to 1e-6 if factorization fails.
pub fn sample_path(posterior: &GrpPosterior, seed_value: u64) -> Result<Vec<Point2>, GrpError> {
    let n = posterior.len();
    let mut jitter = SAMPLE_JITTER;
    let factor = loop {
        let mut a = posterior.covariance.clone();
        for i in 0..n {
            a[i * n + i] += jitter;
        }
        if let Some(l) = cholesky(n, &a, 0.0) {
            break l;
        }
        if jitter >= MAX_SAMPLE_JITTER {
            return Err(GrpError::FactorizationFailed(jitter));
        }
        jitter *= 10.0;
    };
    let mut rng = seed::rng(seed_value);
    let mut eps_x = vec![0.0; n];
    let mut eps_y = vec![0.0; n];
    for i in 0..n {
        eps_x[i] = StandardNormal.sample(&mut rng);
        eps_y[i] = StandardNormal.sample(&mut rng);
    }
    Ok((0..n)
        .map(|i| {
            let row = &factor[i * n..i * n + i + 1];
            let dx: f64 = row.iter().zip(&eps_x).map(|(l, e)| l * e).sum();
            let dy: f64 = row.iter().zip(&eps_y).map(|(l, e)| l * e).sum();
            Point2::new(posterior.mean_x[i] + dx, posterior.mean_y[i] + dy)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    /// Direct-formula GP regression via an explicit Gauss-Jordan inverse of
    /// the noisy Gram matrix, independent of the Cholesky route.
    fn oracle(anchors: &AnchorSet, kernel: &KernelParams, tq: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = anchors.times.len();
        let mut a = vec![0.0; n * n];
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = kernel.k(anchors.times[i], anchors.times[j])
                    + if i == j { kernel.noise_variance } else { 0.0 };
            }
            inv[i * n + i] = 1.0;
        }
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
                .unwrap();
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
                inv.swap(col * n + k, piv * n + k);
            }
            let d = a[col * n + col];
            for k in 0..n {
                a[col * n + k] /= d;
                inv[col * n + k] /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = a[r * n + col];
                    for k in 0..n {
                        a[r * n + k] -= f * a[col * n + k];
                        inv[r * n + k] -= f * inv[col * n + k];
                    }
                }
            }
        }
        let s = anchors.start();
        let times = query_times(tq);
        let mut mx = vec![0.0; tq];
        let mut my = vec![0.0; tq];
        let mut cov = vec![0.0; tq * tq];
        for (q, &t) in times.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    let w = kernel.k(t, anchors.times[i]) * inv[i * n + j];
                    mx[q] += w * (anchors.points[j].x - s.x);
                    my[q] += w * (anchors.points[j].y - s.y);
                }
            }
            mx[q] += s.x;
            my[q] += s.y;
            for (r, &u) in times.iter().enumerate() {
                let mut red = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        red += kernel.k(t, anchors.times[i]) * inv[i * n + j] * kernel.k(anchors.times[j], u);
                    }
                }
                cov[q * tq + r] = kernel.k(t, u) - red;
            }
        }
        (mx, my, cov)
    }

    fn random_anchors(rng: &mut seed::Rng, n: usize) -> AnchorSet {
        let mut times: Vec<f64> = (1..n).map(|_| rng.random_range(0.05..1.0)).collect();
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() < 0.05);
        times.insert(0, 0.0);
        let points = times
            .iter()
            .map(|_| Point2::new(rng.random_range(0.0..1.0), rng.random_range(0.0..0.6)))
            .collect();
        AnchorSet::new(times, points).unwrap()
    }

    fn example() -> AnchorSet {
        AnchorSet::new(
            vec![0.0, 0.5, 1.0],
            vec![Point2::new(0.0, 0.0), Point2::new(0.5, 0.1), Point2::new(1.0, 0.0)],
        )
        .unwrap()
    }

    #[test]
    fn interpolates_midpoint_anchor() {
        let post = build_posterior(&example(), &KernelParams::default(), 65).unwrap();
        let mid = Point2::new(post.mean_x[32], post.mean_y[32]);
        assert!(mid.distance(Point2::new(0.5, 0.1)) < 1e-4, "{mid:?}");
    }

    #[test]
    fn variance_collapses_at_anchors() {
        let kernel = KernelParams::default();
        let post = build_posterior(&example(), &kernel, 65).unwrap();
        for q in [0, 32, 64] {
            assert!(post.cov(q, q) <= kernel.noise_variance + 1e-8);
        }
    }

    #[test]
    fn matches_direct_formula_oracle() {
        let mut rng = seed::rng(99);
        let kernel = KernelParams::default();
        for _ in 0..10 {
            let anchors = random_anchors(&mut rng, 5);
            let post = build_posterior(&anchors, &kernel, 33).unwrap();
            let (mx, my, cov) = oracle(&anchors, &kernel, 33);
            for q in 0..33 {
                assert!((post.mean_x[q] - mx[q]).abs() < 1e-9);
                assert!((post.mean_y[q] - my[q]).abs() < 1e-9);
            }
            for (a, b) in post.covariance.iter().zip(&cov) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mean_path_agrees_with_posterior_mean() {
        let anchors = AnchorSet::from_start(
            Point2::new(0.5, 0.05),
            &[Point2::new(0.3, 0.3), Point2::new(0.6, 0.4), Point2::new(0.8, 0.2)],
        )
        .unwrap();
        let kernel = KernelParams::default();
        let post = build_posterior(&anchors, &kernel, 64).unwrap();
        let fast = mean_path(&anchors, &kernel, 64).unwrap();
        for (a, b) in post.mean_path().iter().zip(&fast) {
            assert!(a.distance(*b) < 1e-12);
        }
        // Anchor times 1/3, 2/3 fall on query indices 21 and 42.
        for (q, p) in [(0usize, anchors.points()[0]), (21, anchors.points()[1]), (42, anchors.points()[2]), (63, anchors.points()[3])] {
            assert!(fast[q].distance(p) < 1e-4);
        }
    }

    #[test]
    fn sample_is_deterministic_and_pinned_at_anchors() {
        let kernel = KernelParams::default();
        let anchors = AnchorSet::from_start(
            Point2::new(0.5, 0.05),
            &[Point2::new(0.3, 0.3), Point2::new(0.6, 0.4), Point2::new(0.8, 0.2)],
        )
        .unwrap();
        let post = build_posterior(&anchors, &kernel, 64).unwrap();
        let a = sample_path(&post, 5).unwrap();
        assert_eq!(a, sample_path(&post, 5).unwrap());
        assert_ne!(a, sample_path(&post, 6).unwrap());
        for (q, p) in [(0usize, 0usize), (21, 1), (42, 2), (63, 3)] {
            assert!(a[q].distance(anchors.points()[p]) <= 1e-3);
        }
    }

    #[test]
    fn covariance_is_psd_up_to_rounding() {
        let kernel = KernelParams::default();
        let post = build_posterior(&example(), &kernel, 64).unwrap();
        // x^T C x >= -1e-9 |x|^2 for random probes
        let mut rng = seed::rng(1);
        for _ in 0..200 {
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut quad = 0.0;
            for i in 0..64 {
                for j in 0..64 {
                    quad += x[i] * post.cov(i, j) * x[j];
                }
            }
            let norm: f64 = x.iter().map(|v| v * v).sum();
            assert!(quad >= -1e-9 * norm);
            for i in 0..64 {
                for j in 0..64 {
                    assert_eq!(post.cov(i, j), post.cov(j, i));
                }
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(
            AnchorSet::new(vec![0.0, 0.5, 0.5], vec![Point2::ZERO; 3]).unwrap_err(),
            GrpError::InvalidTimes
        );
        assert_eq!(AnchorSet::new(vec![0.1], vec![Point2::ZERO]).unwrap_err(), GrpError::InvalidTimes);
        assert_eq!(
            build_posterior(&example(), &KernelParams::default(), 1).unwrap_err(),
            GrpError::TooFewQueries
        );
        let bad = KernelParams { length_scale: 0.0, ..Default::default() };
        assert_eq!(build_posterior(&example(), &bad, 8).unwrap_err(), GrpError::InvalidKernel);
        let near = AnchorSet::new(vec![0.0, 0.5, 0.5 + 1e-12], vec![Point2::ZERO; 3]).unwrap();
        let noiseless = KernelParams { noise_variance: 0.0, ..Default::default() };
        assert_eq!(build_posterior(&near, &noiseless, 8).unwrap_err(), GrpError::Singular);
    }
}
