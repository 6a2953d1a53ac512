use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{NnError, Scalar};
use crate::seed;

pub(crate) const KERNEL: usize = 3;
pub(crate) const STRIDE: usize = 2;
pub(crate) const PADDING: usize = 1;

/// Feature-map sizes around a 3x3, stride-2, padding-1 (transposed)
/// convolution. For a transposed convolution `in_*` is the small side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    /// Output size of a strided convolution over `in_height x in_width`.
    pub fn conv(in_channels: usize, out_channels: usize, in_height: usize, in_width: usize) -> Self {
        let out = |n: usize| (n + 2 * PADDING - KERNEL) / STRIDE + 1;
        Self {
            in_channels,
            out_channels,
            in_height,
            in_width,
            out_height: out(in_height),
            out_width: out(in_width),
        }
    }

    /// Transposed convolution that exactly undoes the spatial reduction of
    /// `ConvGeometry::conv(out_channels, in_channels, out_height, out_width)`.
    pub fn transposed(
        in_channels: usize,
        out_channels: usize,
        in_height: usize,
        in_width: usize,
        out_height: usize,
        out_width: usize,
    ) -> Self {
        Self { in_channels, out_channels, in_height, in_width, out_height, out_width }
    }

    fn valid_for_conv(&self) -> bool {
        let g = Self::conv(self.in_channels, self.out_channels, self.in_height, self.in_width);
        g == *self && self.in_channels > 0 && self.out_channels > 0
    }

    fn valid_for_transposed(&self) -> bool {
        let base = |n: usize| (n.max(1) - 1) * STRIDE + KERNEL - 2 * PADDING;
        let ok = |small: usize, big: usize| small > 0 && (big == base(small) || big == base(small) + 1);
        self.in_channels > 0
            && self.out_channels > 0
            && ok(self.in_height, self.out_height)
            && ok(self.in_width, self.out_width)
    }

    fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * KERNEL * KERNEL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Dense { input: usize, output: usize },
    Conv2d { geometry: ConvGeometry },
    ConvTranspose2d { geometry: ConvGeometry },
    Tanh { width: usize },
    Softplus { width: usize },
}

impl LayerKind {
    pub fn input_len(&self) -> usize {
        match *self {
            LayerKind::Dense { input, .. } => input,
            LayerKind::Conv2d { geometry: g } | LayerKind::ConvTranspose2d { geometry: g } => {
                g.in_channels * g.in_height * g.in_width
            }
            LayerKind::Tanh { width } | LayerKind::Softplus { width } => width,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            LayerKind::Dense { output, .. } => output,
            LayerKind::Conv2d { geometry: g } | LayerKind::ConvTranspose2d { geometry: g } => {
                g.out_channels * g.out_height * g.out_width
            }
            LayerKind::Tanh { width } | LayerKind::Softplus { width } => width,
        }
    }

    /// `(weight_len, bias_len)`.
    pub fn param_lens(&self) -> (usize, usize) {
        match *self {
            LayerKind::Dense { input, output } => (input * output, output),
            LayerKind::Conv2d { geometry: g } => (g.weight_len(), g.out_channels),
            LayerKind::ConvTranspose2d { geometry: g } => (g.weight_len(), g.out_channels),
            LayerKind::Tanh { .. } | LayerKind::Softplus { .. } => (0, 0),
        }
    }

    pub fn has_params(&self) -> bool {
        self.param_lens().0 > 0
    }

    pub(crate) fn validate(&self) -> Result<(), NnError> {
        let ok = match self {
            LayerKind::Dense { input, output } => *input > 0 && *output > 0,
            LayerKind::Conv2d { geometry } => geometry.valid_for_conv(),
            LayerKind::ConvTranspose2d { geometry } => geometry.valid_for_transposed(),
            LayerKind::Tanh { width } | LayerKind::Softplus { width } => *width > 0,
        };
        ok.then_some(()).ok_or(NnError::Manifest("invalid layer geometry"))
    }
}

/// One layer with its parameters. Dense weights are `[output, input]`;
/// convolution weights are `[out_ch, in_ch, 3, 3]`; transposed convolution
/// weights are `[in_ch, out_ch, 3, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T = f32> {
    pub kind: LayerKind,
    /// Frozen layers report zero parameter gradients and are skipped by Adam.
    pub frozen: bool,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

fn glorot<T: Scalar>(rng: &mut seed::Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<T> {
    let limit = libm::sqrtf(6.0 / (fan_in + fan_out) as f32);
    (0..n).map(|_| T::of(rng.random_range(-limit..limit) as f64)).collect()
}

impl<T: Scalar> Layer<T> {
    pub fn dense(input: usize, output: usize, rng: &mut seed::Rng) -> Self {
        Self {
            kind: LayerKind::Dense { input, output },
            frozen: false,
            weight: glorot(rng, input * output, input, output),
            bias: vec![T::zero(); output],
        }
    }

    /// Dense layer with explicit `[output, input]` weights.
    pub fn dense_from(input: usize, output: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self, NnError> {
        let layer = Self { kind: LayerKind::Dense { input, output }, frozen: false, weight, bias };
        layer.check()?;
        Ok(layer)
    }

    pub fn conv(geometry: ConvGeometry, rng: &mut seed::Rng) -> Self {
        let kind = LayerKind::Conv2d { geometry };
        let fan_in = geometry.in_channels * KERNEL * KERNEL;
        let fan_out = geometry.out_channels * KERNEL * KERNEL;
        Self {
            kind,
            frozen: false,
            weight: glorot(rng, geometry.weight_len(), fan_in, fan_out),
            bias: vec![T::zero(); geometry.out_channels],
        }
    }

    pub fn conv_transpose(geometry: ConvGeometry, rng: &mut seed::Rng) -> Self {
        let kind = LayerKind::ConvTranspose2d { geometry };
        // Each output pixel receives ~in_ch * (3/2)^2 contributions.
        let fan_in = geometry.in_channels * KERNEL * KERNEL / (STRIDE * STRIDE);
        let fan_out = geometry.out_channels * KERNEL * KERNEL;
        Self {
            kind,
            frozen: false,
            weight: glorot(rng, geometry.weight_len(), fan_in.max(1), fan_out),
            bias: vec![T::zero(); geometry.out_channels],
        }
    }

    pub fn tanh(width: usize) -> Self {
        Self { kind: LayerKind::Tanh { width }, frozen: false, weight: Vec::new(), bias: Vec::new() }
    }

    pub fn softplus(width: usize) -> Self {
        Self { kind: LayerKind::Softplus { width }, frozen: false, weight: Vec::new(), bias: Vec::new() }
    }

    pub(crate) fn check(&self) -> Result<(), NnError> {
        self.kind.validate()?;
        let (w, b) = self.kind.param_lens();
        if self.weight.len() != w || self.bias.len() != b {
            return Err(NnError::Manifest("parameter length disagrees with layer kind"));
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let out_len = self.kind.output_len();
        match self.kind {
            LayerKind::Dense { input, output } => {
                let mut y = vec![T::zero(); batch * output];
                for b in 0..batch {
                    let xr = &x[b * input..(b + 1) * input];
                    let yr = &mut y[b * output..(b + 1) * output];
                    for (o, yo) in yr.iter_mut().enumerate() {
                        let wr = &self.weight[o * input..(o + 1) * input];
                        *yo = self.bias[o] + dot(wr, xr);
                    }
                }
                y
            }
            LayerKind::Conv2d { geometry: g } => {
                let in_len = self.kind.input_len();
                let mut y = vec![T::zero(); batch * out_len];
                for b in 0..batch {
                    conv_forward(&g, &self.weight, &self.bias, &x[b * in_len..(b + 1) * in_len], &mut y[b * out_len..(b + 1) * out_len]);
                }
                y
            }
            LayerKind::ConvTranspose2d { geometry: g } => {
                let in_len = self.kind.input_len();
                let mut y = vec![T::zero(); batch * out_len];
                for b in 0..batch {
                    tconv_forward(&g, &self.weight, &self.bias, &x[b * in_len..(b + 1) * in_len], &mut y[b * out_len..(b + 1) * out_len]);
                }
                y
            }
            LayerKind::Tanh { .. } => x.iter().map(|&v| v.tanh()).collect(),
            LayerKind::Softplus { .. } => x.iter().map(|&v| softplus(v)).collect(),
        }
    }

    /// Returns `(grad_input, Some((grad_weight, grad_bias)))` for parameterized
    /// layers. `y` is this layer's forward output.
    pub(crate) fn backward(
        &self,
        x: &[T],
        y: &[T],
        gy: &[T],
        batch: usize,
    ) -> (Vec<T>, Option<(Vec<T>, Vec<T>)>) {
        match self.kind {
            LayerKind::Dense { input, output } => {
                let mut gx = vec![T::zero(); batch * input];
                let mut gw = vec![T::zero(); input * output];
                let mut gb = vec![T::zero(); output];
                for b in 0..batch {
                    let xr = &x[b * input..(b + 1) * input];
                    let gyr = &gy[b * output..(b + 1) * output];
                    let gxr = &mut gx[b * input..(b + 1) * input];
                    for (o, &g) in gyr.iter().enumerate() {
                        if g.is_zero() {
                            continue;
                        }
                        gb[o] += g;
                        let wr = &self.weight[o * input..(o + 1) * input];
                        let gwr = &mut gw[o * input..(o + 1) * input];
                        for i in 0..input {
                            gwr[i] += g * xr[i];
                            gxr[i] += g * wr[i];
                        }
                    }
                }
                (gx, Some((gw, gb)))
            }
            LayerKind::Conv2d { geometry: g } => {
                let in_len = self.kind.input_len();
                let out_len = self.kind.output_len();
                let mut gx = vec![T::zero(); batch * in_len];
                let mut gw = vec![T::zero(); self.weight.len()];
                let mut gb = vec![T::zero(); self.bias.len()];
                for b in 0..batch {
                    conv_backward(
                        &g,
                        &self.weight,
                        &x[b * in_len..(b + 1) * in_len],
                        &gy[b * out_len..(b + 1) * out_len],
                        &mut gx[b * in_len..(b + 1) * in_len],
                        &mut gw,
                        &mut gb,
                    );
                }
                (gx, Some((gw, gb)))
            }
            LayerKind::ConvTranspose2d { geometry: g } => {
                let in_len = self.kind.input_len();
                let out_len = self.kind.output_len();
                let mut gx = vec![T::zero(); batch * in_len];
                let mut gw = vec![T::zero(); self.weight.len()];
                let mut gb = vec![T::zero(); self.bias.len()];
                for b in 0..batch {
                    tconv_backward(
                        &g,
                        &self.weight,
                        &x[b * in_len..(b + 1) * in_len],
                        &gy[b * out_len..(b + 1) * out_len],
                        &mut gx[b * in_len..(b + 1) * in_len],
                        &mut gw,
                        &mut gb,
                    );
                }
                (gx, Some((gw, gb)))
            }
            LayerKind::Tanh { .. } => (y.iter().zip(gy).map(|(&t, &g)| g * (T::one() - t * t)).collect(), None),
            LayerKind::Softplus { .. } => (x.iter().zip(gy).map(|(&v, &g)| g * sigmoid(v)).collect(), None),
        }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn softplus<T: Scalar>(v: T) -> T {
    if v > T::of(20.0) {
        v
    } else {
        v.exp().ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Input coordinate read by output coordinate `o` at kernel tap `k`.
#[inline]
fn tap(o: usize, k: usize, size: usize) -> Option<usize> {
    let i = (o * STRIDE + k) as isize - PADDING as isize;
    (i >= 0 && (i as usize) < size).then_some(i as usize)
}

fn conv_forward<T: Scalar>(g: &ConvGeometry, w: &[T], bias: &[T], x: &[T], y: &mut [T]) {
    let (ih, iw, oh, ow) = (g.in_height, g.in_width, g.out_height, g.out_width);
    for o in 0..g.out_channels {
        let yo = &mut y[o * oh * ow..(o + 1) * oh * ow];
        yo.fill(bias[o]);
        for i in 0..g.in_channels {
            let xi = &x[i * ih * iw..(i + 1) * ih * iw];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = w[((o * g.in_channels + i) * KERNEL + ky) * KERNEL + kx];
                    for oy in 0..oh {
                        let Some(iy) = tap(oy, ky, ih) else { continue };
                        let row = &xi[iy * iw..(iy + 1) * iw];
                        let out_row = &mut yo[oy * ow..(oy + 1) * ow];
                        for (ox, out) in out_row.iter_mut().enumerate() {
                            if let Some(ix) = tap(ox, kx, iw) {
                                *out += wv * row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward<T: Scalar>(
    g: &ConvGeometry,
    w: &[T],
    x: &[T],
    gy: &[T],
    gx: &mut [T],
    gw: &mut [T],
    gb: &mut [T],
) {
    let (ih, iw, oh, ow) = (g.in_height, g.in_width, g.out_height, g.out_width);
    for o in 0..g.out_channels {
        let gyo = &gy[o * oh * ow..(o + 1) * oh * ow];
        gb[o] += gyo.iter().copied().sum::<T>();
        for i in 0..g.in_channels {
            let xi = &x[i * ih * iw..(i + 1) * ih * iw];
            let gxi = &mut gx[i * ih * iw..(i + 1) * ih * iw];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let widx = ((o * g.in_channels + i) * KERNEL + ky) * KERNEL + kx;
                    let wv = w[widx];
                    let mut acc = T::zero();
                    for oy in 0..oh {
                        let Some(iy) = tap(oy, ky, ih) else { continue };
                        for ox in 0..ow {
                            if let Some(ix) = tap(ox, kx, iw) {
                                let gv = gyo[oy * ow + ox];
                                acc += gv * xi[iy * iw + ix];
                                gxi[iy * iw + ix] += gv * wv;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
}

/// Transposed convolution: each small-side pixel scatters a 3x3 stamp into
/// the large side. It is the adjoint of `conv_forward` with the same taps.
fn tconv_forward<T: Scalar>(g: &ConvGeometry, w: &[T], bias: &[T], x: &[T], y: &mut [T]) {
    let (ih, iw, oh, ow) = (g.in_height, g.in_width, g.out_height, g.out_width);
    for o in 0..g.out_channels {
        y[o * oh * ow..(o + 1) * oh * ow].fill(bias[o]);
    }
    for i in 0..g.in_channels {
        let xi = &x[i * ih * iw..(i + 1) * ih * iw];
        for o in 0..g.out_channels {
            let yo = &mut y[o * oh * ow..(o + 1) * oh * ow];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = w[((i * g.out_channels + o) * KERNEL + ky) * KERNEL + kx];
                    for sy in 0..ih {
                        let Some(ty) = tap(sy, ky, oh) else { continue };
                        for sx in 0..iw {
                            if let Some(tx) = tap(sx, kx, ow) {
                                yo[ty * ow + tx] += wv * xi[sy * iw + sx];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn tconv_backward<T: Scalar>(
    g: &ConvGeometry,
    w: &[T],
    x: &[T],
    gy: &[T],
    gx: &mut [T],
    gw: &mut [T],
    gb: &mut [T],
) {
    let (ih, iw, oh, ow) = (g.in_height, g.in_width, g.out_height, g.out_width);
    for o in 0..g.out_channels {
        gb[o] += gy[o * oh * ow..(o + 1) * oh * ow].iter().copied().sum::<T>();
    }
    for i in 0..g.in_channels {
        let xi = &x[i * ih * iw..(i + 1) * ih * iw];
        let gxi = &mut gx[i * ih * iw..(i + 1) * ih * iw];
        for o in 0..g.out_channels {
            let gyo = &gy[o * oh * ow..(o + 1) * oh * ow];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let widx = ((i * g.out_channels + o) * KERNEL + ky) * KERNEL + kx;
                    let wv = w[widx];
                    let mut acc = T::zero();
                    for sy in 0..ih {
                        let Some(ty) = tap(sy, ky, oh) else { continue };
                        for sx in 0..iw {
                            if let Some(tx) = tap(sx, kx, ow) {
                                let gv = gyo[ty * ow + tx];
                                acc += gv * xi[sy * iw + sx];
                                gxi[sy * iw + sx] += gv * wv;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
}
