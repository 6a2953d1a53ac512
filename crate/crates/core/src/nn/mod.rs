//! Small reverse-mode network substrate.
//!
//! Networks are sequential stacks of dense, stride-2 convolution,
//! transposed convolution and elementwise activation layers operating on
//! batches of flat `f32` rows. `forward` caches every intermediate
//! activation; `backward` walks the cache in reverse to produce exact
//! parameter gradients and the gradient with respect to the input.

mod adam;
mod checkpoint;
mod gradcheck;
mod layer;
mod network;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use checkpoint::{decode_blob, encode_blob, LayerManifest, NetManifest, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{finite_difference_check, GradCheckReport, GRADCHECK_FLOOR};
pub use layer::{sigmoid, softplus, ConvGeometry, Layer, LayerKind};
pub use network::{ForwardCache, Gradients, LayerGradient, Network};

use alloc::vec::Vec;
use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, MulAssign, SubAssign};

/// Element type of the substrate. Models train in `f32`; the same code
/// instantiated at `f64` serves as a precise finite-difference reference.
pub trait Scalar:
    num_traits::Float + Sum + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected} values per row, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("tensor has {values} values but shape implies {expected}")]
    BadTensor { values: usize, expected: usize },
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
    #[error("cache was produced by parameter version {cache}, network is at {network}")]
    StaleCache { cache: u64, network: u64 },
    #[error("gradient layout does not match the network")]
    GradientLayout,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint blob holds {actual} values, manifest expects {expected}")]
    BlobSize { expected: usize, actual: usize },
    #[error("checkpoint manifest is inconsistent: {0}")]
    Manifest(&'static str),
}

/// Row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::BadTensor { values: data.len(), expected });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: alloc::vec![T::zero(); n] }
    }

    /// A `[rows, cols]` matrix.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NnError> {
        Self::new(alloc::vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension (batch rows).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Values per row.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, r: usize) -> &[T] {
        let n = self.row_len();
        &self.data[r * n..(r + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests;
