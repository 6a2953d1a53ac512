use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{depth_input, PolicyError, FEATURE_DIM, HEIGHT_GAIN};
use crate::nn::{clip_global_norm, AdamConfig, AdamState, ConvGeometry, Gradients, Layer, Network, NnError, Scalar, Tensor};
use crate::seed;
use crate::sim::{randomize_scene, render_depth, RandomizationConfig, DEPTH_COLS, DEPTH_ROWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaeShape {
    pub height: usize,
    pub width: usize,
    pub channels: (usize, usize),
    pub features: usize,
}

impl Default for CaeShape {
    fn default() -> Self {
        Self { height: DEPTH_ROWS, width: DEPTH_COLS, channels: (8, 16), features: FEATURE_DIM }
    }
}

impl CaeShape {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Depth autoencoder: two stride-2 convolutions and a dense bottleneck with
/// tanh activations, mirrored by transposed convolutions on the way back.
#[derive(Debug, Clone, PartialEq)]
pub struct Cae<T = f32> {
    pub encoder: Network<T>,
    pub decoder: Network<T>,
}

impl<T: Scalar> Cae<T> {
    pub fn new(shape: CaeShape, rng: &mut seed::Rng) -> Result<Self, NnError> {
        let (c1, c2) = shape.channels;
        let g1 = ConvGeometry::conv(1, c1, shape.height, shape.width);
        let g2 = ConvGeometry::conv(c1, c2, g1.out_height, g1.out_width);
        let flat = c2 * g2.out_height * g2.out_width;
        let encoder = Network::new(alloc::vec![
            Layer::conv(g1, rng),
            Layer::tanh(c1 * g1.out_height * g1.out_width),
            Layer::conv(g2, rng),
            Layer::tanh(flat),
            Layer::dense(flat, shape.features, rng),
            Layer::tanh(shape.features),
        ])?;
        let t2 = ConvGeometry::transposed(c2, c1, g2.out_height, g2.out_width, g1.out_height, g1.out_width);
        let t1 = ConvGeometry::transposed(c1, 1, g1.out_height, g1.out_width, shape.height, shape.width);
        let decoder = Network::new(alloc::vec![
            Layer::dense(shape.features, flat, rng),
            Layer::tanh(flat),
            Layer::conv_transpose(t2, rng),
            Layer::tanh(c1 * g1.out_height * g1.out_width),
            Layer::conv_transpose(t1, rng),
        ])?;
        Ok(Self { encoder, decoder })
    }

    pub fn reconstruct(&self, images: &[T], batch: usize) -> Result<Vec<T>, NnError> {
        let code = self.encoder.predict(images, batch)?;
        self.decoder.predict(&code, batch)
    }
}

pub struct CaeLoss<T = f32> {
    /// Mean squared error over every pixel of the batch.
    pub loss: f64,
    pub encoder: Gradients<T>,
    pub decoder: Gradients<T>,
}

/// Reconstruction loss and its exact gradient for a batch of flattened
/// normalized height maps.
pub fn cae_loss<T: Scalar>(cae: &Cae<T>, images: &[T], batch: usize) -> Result<CaeLoss<T>, NnError> {
    let input = Tensor::matrix(batch, cae.encoder.input_len(), images.to_vec())?;
    let (code, enc_cache) = cae.encoder.forward(&input)?;
    let (recon, dec_cache) = cae.decoder.forward(&code)?;
    let n = images.len() as f64;
    let mut loss = 0.0;
    let grad: Vec<T> = recon
        .data()
        .iter()
        .zip(images)
        .map(|(&r, &x)| {
            let d = (r - x).as_f64();
            loss += d * d;
            T::of(2.0 * d / n)
        })
        .collect();
    let (decoder, g_code) = cae.decoder.backward(&dec_cache, &grad)?;
    let (encoder, _) = cae.encoder.backward(&enc_cache, &g_code)?;
    Ok(CaeLoss { loss: loss / n, encoder, decoder })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaeConfig {
    pub num_images: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub grad_clip: f64,
    /// Chance that each kept non-target object is rendered fallen.
    pub fall_probability: f64,
    pub shape: CaeShape,
    pub scenes: RandomizationConfig,
}

impl Default for CaeConfig {
    fn default() -> Self {
        Self {
            num_images: 10_000,
            epochs: 6,
            batch_size: 32,
            learning_rate: 1e-3,
            grad_clip: 10.0,
            fall_probability: 0.1,
            shape: CaeShape::default(),
            scenes: RandomizationConfig::default(),
        }
    }
}

/// Image `index` of the pretraining stream. A randomized scene is cut down to
/// a random-length prefix of its objects (possibly none) and a few of them
/// are knocked over, so the encoder sees empty, sparse and cluttered tables.
/// The stream does not depend on `num_images`, so smaller datasets are
/// prefixes of larger ones.
pub fn cae_dataset_image(seed_value: u64, index: usize, config: &CaeConfig) -> Result<Vec<f32>, PolicyError> {
    let scene_seed = seed::derive(seed_value, &[seed::tag::CAE_DATA, index as u64]);
    let mut scene = randomize_scene(scene_seed, &config.scenes)?;
    let mut rng = seed::derived_rng(scene_seed, &[seed::tag::CAE_DATA]);
    let keep = rng.random_range(0..=scene.objects.len());
    scene.objects.truncate(keep);
    for o in &mut scene.objects {
        if !o.is_target && rng.random_bool(config.fall_probability) {
            o.standing = false;
        }
    }
    Ok(depth_input(&render_depth(&scene)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaePretrainReport {
    pub seed: u64,
    pub num_images: usize,
    pub epochs: usize,
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    /// Largest per-pixel error, as a fraction of the camera height, when
    /// reconstructing an empty table.
    pub empty_table_max_error: f64,
}

/// Generates the dataset and trains the autoencoder with Adam on minibatch
/// MSE. `progress` is called after each epoch with its mean loss.
pub fn pretrain_cae<F>(config: &CaeConfig, seed_value: u64, mut progress: F) -> Result<(Cae, CaePretrainReport), PolicyError>
where
    F: FnMut(usize, f64),
{
    if config.num_images == 0 || config.batch_size == 0 || config.epochs == 0 {
        return Err(PolicyError::InvalidConfig("num_images, batch_size and epochs must be positive"));
    }
    let pixels = config.shape.pixels();
    if config.shape.height != DEPTH_ROWS || config.shape.width != DEPTH_COLS {
        return Err(PolicyError::InvalidConfig("autoencoder input must match the depth renderer"));
    }
    let mut data = Vec::with_capacity(config.num_images * pixels);
    for i in 0..config.num_images {
        data.extend(cae_dataset_image(seed_value, i, config)?);
    }

    let mut init = seed::derived_rng(seed_value, &[seed::tag::INIT]);
    let mut cae = Cae::new(config.shape, &mut init)?;
    let adam = AdamConfig { lr: config.learning_rate, ..AdamConfig::default() };
    let mut adam_enc = AdamState::new(&cae.encoder, adam);
    let mut adam_dec = AdamState::new(&cae.decoder, adam);
    let mut order: Vec<usize> = (0..config.num_images).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut batch_buf = Vec::with_capacity(config.batch_size * pixels);

    for epoch in 0..config.epochs {
        let mut shuffle = seed::derived_rng(seed_value, &[seed::tag::CAE_SHUFFLE, epoch as u64]);
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch_buf.clear();
            for &i in chunk {
                batch_buf.extend_from_slice(&data[i * pixels..(i + 1) * pixels]);
            }
            let mut out = cae_loss(&cae, &batch_buf, chunk.len()).map_err(|_| PolicyError::Diverged { epoch, batch: b })?;
            if !out.loss.is_finite() {
                return Err(PolicyError::Diverged { epoch, batch: b });
            }
            total += out.loss * chunk.len() as f64;
            clip_global_norm(&mut [&mut out.encoder, &mut out.decoder], config.grad_clip);
            adam_enc.step(&mut cae.encoder, &out.encoder)?;
            adam_dec.step(&mut cae.decoder, &out.decoder)?;
        }
        let mean = total / config.num_images as f64;
        epoch_losses.push(mean);
        progress(epoch, mean);
    }

    let empty = alloc::vec![0.0f32; pixels];
    let recon = cae.reconstruct(&empty, 1)?;
    let empty_table_max_error = recon.iter().fold(0.0f64, |m, &v| m.max(((v / HEIGHT_GAIN) as f64).abs()));
    let final_loss = epoch_losses.last().copied().unwrap_or(f64::NAN);
    let report = CaePretrainReport {
        seed: seed_value,
        num_images: config.num_images,
        epochs: config.epochs,
        epoch_losses,
        final_loss,
        empty_table_max_error,
    };
    Ok((cae, report))
}
