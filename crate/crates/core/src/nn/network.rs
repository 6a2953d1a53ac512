use alloc::vec;
use alloc::vec::Vec;

use super::layer::Layer;
use super::{NnError, Scalar, Tensor};

/// A sequential stack of layers plus a version counter that increases on
/// every parameter update.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    layers: Vec<Layer<T>>,
    version: u64,
}

/// Activations recorded by `forward`; `activations[0]` is the input and
/// `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f32> {
    version: u64,
    batch: usize,
    activations: Vec<Vec<T>>,
}

impl<T> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.activations.last().map_or(&[], Vec::as_slice)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient<T = f32> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Parameter gradients, one slot per layer (`None` for activations).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub layers: Vec<Option<LayerGradient<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    l.kind.has_params().then(|| LayerGradient {
                        weight: vec![T::zero(); l.weight.len()],
                        bias: vec![T::zero(); l.bias.len()],
                    })
                })
                .collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = &T> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| g.weight.iter().chain(g.bias.iter()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flatten()
            .flat_map(|g| g.weight.iter_mut().chain(g.bias.iter_mut()))
    }

    pub fn norm_sq(&self) -> f64 {
        self.values().map(|&v| v.as_f64() * v.as_f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| v.is_zero())
    }

    pub fn scale(&mut self, factor: T) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) -> Result<(), NnError> {
        if self.layers.len() != other.layers.len() {
            return Err(NnError::GradientLayout);
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (Some(a), Some(b)) if a.weight.len() == b.weight.len() && a.bias.len() == b.bias.len() => {
                    a.weight.iter_mut().zip(&b.weight).for_each(|(x, &y)| *x += y);
                    a.bias.iter_mut().zip(&b.bias).for_each(|(x, &y)| *x += y);
                }
                (None, None) => {}
                _ => return Err(NnError::GradientLayout),
            }
        }
        Ok(())
    }

    /// Flat view in parameter order (weights then bias, layer by layer).
    pub fn flatten(&self) -> Vec<T> {
        self.values().copied().collect()
    }
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self, NnError> {
        for l in &layers {
            l.check()?;
        }
        for w in layers.windows(2) {
            if w[0].kind.output_len() != w[1].kind.input_len() {
                return Err(NnError::ShapeMismatch {
                    expected: w[1].kind.input_len(),
                    actual: w[0].kind.output_len(),
                });
            }
        }
        if layers.is_empty() {
            return Err(NnError::Manifest("network has no layers"));
        }
        Ok(Self { layers, version: 0 })
    }

    pub(crate) fn from_parts(layers: Vec<Layer<T>>, version: u64) -> Result<Self, NnError> {
        let mut net = Self::new(layers)?;
        net.version = version;
        Ok(net)
    }

    /// Same parameters at another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { kind: l.kind, frozen: l.frozen, weight: conv(&l.weight), bias: conv(&l.bias) })
                .collect(),
            version: self.version,
        }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Mutable access to the parameters. Bumps the version so outstanding
    /// caches are invalidated.
    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        self.version += 1;
        &mut self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].kind.input_len()
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].kind.output_len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for l in &mut self.layers {
            l.frozen = frozen;
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.layers.iter().filter(|l| l.kind.has_params()).all(|l| l.frozen)
    }

    fn check_input(&self, values: usize, batch: usize) -> Result<(), NnError> {
        let expected = self.input_len();
        if batch == 0 || values != batch * expected {
            return Err(NnError::ShapeMismatch { expected, actual: if batch == 0 { 0 } else { values / batch } });
        }
        Ok(())
    }

    /// Forward pass over `input` (`[batch, input_len]`), caching activations.
    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
        let batch = input.rows();
        self.check_input(input.len(), batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.data().to_vec());
        for layer in &self.layers {
            let y = layer.forward(activations.last().unwrap(), batch);
            if !y.iter().all(|v| v.is_finite()) {
                return Err(NnError::NonFinite("forward"));
            }
            activations.push(y);
        }
        let out = Tensor::matrix(batch, self.output_len(), activations.last().unwrap().clone())?;
        Ok((out, ForwardCache { version: self.version, batch, activations }))
    }

    /// Forward pass without keeping the intermediate activations.
    pub fn predict(&self, input: &[T], batch: usize) -> Result<Vec<T>, NnError> {
        self.check_input(input.len(), batch)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.forward(&x, batch);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite("forward"));
        }
        Ok(x)
    }

    /// Reverse pass. Returns parameter gradients (zero for frozen layers)
    /// and the gradient with respect to the network input.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: &[T]) -> Result<(Gradients<T>, Vec<T>), NnError> {
        if cache.version != self.version {
            return Err(NnError::StaleCache { cache: cache.version, network: self.version });
        }
        if grad_output.len() != cache.batch * self.output_len() {
            return Err(NnError::ShapeMismatch {
                expected: self.output_len(),
                actual: grad_output.len() / cache.batch.max(1),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut g = grad_output.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (gx, pg) = layer.backward(&cache.activations[i], &cache.activations[i + 1], &g, cache.batch);
            if let (Some((gw, gb)), Some(slot)) = (pg, grads.layers[i].as_mut()) {
                if !layer.frozen {
                    slot.weight = gw;
                    slot.bias = gb;
                }
            }
            g = gx;
        }
        if !grads.all_finite() || !g.iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite("backward"));
        }
        Ok((grads, g))
    }
}
