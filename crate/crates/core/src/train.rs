//! Training configuration and the joint training loop.

use std::fmt;
use std::str::FromStr;

use nanet_tensor::{Adam, AdamConfig, FlushDenormals, Graph, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{Condition, DatasetManifest, ManifestItem, Split};
use crate::image::ImageBuffer;
use crate::model::{joint_loss, nanet_graph, AutoencoderConfig, ClassifierConfig, Mode, NanetParams};
use crate::{rng, Error, Result};

const TAG_SHUFFLE: u64 = 0x5407;
const TAG_ROTATE: u64 = 0x7e7a;
const TAG_DROPOUT: u64 = 0xd409;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 224 px inputs, 300 epochs.
    Paper,
    /// 64 px inputs, 40 epochs and narrower autoencoder stages.
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub image_size: usize,
    pub augment_rotation_deg: f64,
    pub seed: u64,
    pub mode: Mode,
    pub autoencoder: AutoencoderConfig,
    pub classifier: ClassifierConfig,
}

impl TrainConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let (image_size, epochs, autoencoder) = match preset {
            Preset::Paper => (224, 300, AutoencoderConfig::default()),
            Preset::Desk => (64, 40, AutoencoderConfig::desk()),
        };
        TrainConfig {
            epochs,
            batch_size: 8,
            lr: 1e-4,
            image_size,
            augment_rotation_deg: 15.0,
            seed,
            mode: Mode::Nanet,
            autoencoder,
            classifier: ClassifierConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.autoencoder.validate()?;
        self.classifier.validate()?;
        let m = self.autoencoder.size_multiple();
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(m) {
            return Err(Error::InvalidConfig(format!(
                "image_size must be a positive multiple of {m}, got {}",
                self.image_size
            )));
        }
        if !(0.0..180.0).contains(&self.augment_rotation_deg) {
            return Err(Error::InvalidConfig(format!(
                "augment_rotation_deg must be in [0, 180), got {}",
                self.augment_rotation_deg
            )));
        }
        Ok(())
    }

    pub(crate) fn trainable(&self, name: &str) -> bool {
        match self.mode {
            Mode::Nanet => true,
            Mode::ClassifierOnly => name.starts_with("cls."),
        }
    }
}

/// Mean losses over one epoch, weighted by batch size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Absent in classifier-only mode.
    pub mse: Option<f64>,
    pub ce: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Total loss of the very first batch, before any update.
    pub initial_loss: Option<f64>,
    pub epochs: Vec<EpochStats>,
}

/// Model input for an image: bilinear resize to `size x size`.
pub fn prepare(img: &ImageBuffer, size: usize) -> Result<ImageBuffer> {
    img.resize(size, size)
}

/// Stack equally sized images into a `[n, 1, h, w]` tensor.
pub fn stack(images: &[ImageBuffer]) -> Result<Tensor<f32>> {
    let (h, w) = images.first().map_or((0, 0), |i| (i.height(), i.width()));
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::InvalidImage("batch images differ in size".into()));
        }
        data.extend_from_slice(img.values());
    }
    Ok(Tensor::new(vec![images.len(), 1, h, w], data)?)
}

struct Sample {
    class: usize,
    image: ImageBuffer,
}

/// Clean training images at model resolution.
fn load_training_set(manifest: &DatasetManifest, size: usize) -> Result<Vec<Sample>> {
    if manifest.items.iter().any(|i| i.split == Split::Train && i.condition != Condition::Clean) {
        return Err(Error::InvalidConfig("training split must contain clean images only".into()));
    }
    let items: Vec<&ManifestItem> = manifest.items(Split::Train, Condition::Clean).collect();
    if items.is_empty() {
        return Err(Error::MissingSplit("train".into()));
    }
    items
        .into_iter()
        .map(|item| Ok(Sample { class: item.class(), image: prepare(&manifest.load_image(item)?, size)? }))
        .collect()
}

/// Train from scratch on the clean training split.
pub fn train(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<(Checkpoint, History)> {
    train_with(manifest, cfg, |_| {})
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Checkpoint, History)> {
    cfg.validate()?;
    let _flush = FlushDenormals::enable();
    let samples = load_training_set(manifest, cfg.image_size)?;
    let mut params = NanetParams::init(cfg.autoencoder.clone(), cfg.classifier.clone(), cfg.seed)?;
    let trainable: Vec<bool> = params.names().iter().map(|n| cfg.trainable(n)).collect();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let fill = manifest.render_spec.background;
    let mut history = History::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        let mut rotate_rng = rng::stream(cfg.seed, &[TAG_ROTATE, epoch as u64]);
        let mut dropout_rng = rng::stream(cfg.seed, &[TAG_DROPOUT, epoch as u64]);
        let (mut sum_mse, mut sum_ce, mut sum_total) = (0.0f64, 0.0f64, 0.0f64);

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &samples[i];
                let angle = if cfg.augment_rotation_deg > 0.0 {
                    rotate_rng.gen_range(-cfg.augment_rotation_deg..=cfg.augment_rotation_deg)
                } else {
                    0.0
                };
                images.push(s.image.rotate(angle, fill));
                labels.push(s.class);
            }
            let batch = stack(&images)?;

            let (mse, ce, total, grads) = {
                let mut g = Graph::new();
                let bound = params.bind(&mut g, |n| cfg.trainable(n));
                let x = g.constant(batch);
                let nodes = nanet_graph(&mut g, &bound, &params, x, cfg.mode, true, &mut dropout_rng)?;
                let (total, mse, ce) = match joint_loss(&mut g, &nodes, x, &labels) {
                    Err(Error::Tensor(TensorError::NonFinite(_))) => {
                        let nan = f32::NAN;
                        return Err(Error::NonFiniteLoss { epoch, batch: batch_idx, mse: nan, ce: nan });
                    }
                    other => other?,
                };
                let mse = mse.map(|v| g.value(v).item());
                let ce = g.value(ce).item();
                let total_v = g.value(total).item();
                if !total_v.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: batch_idx, mse: mse.unwrap_or(0.0), ce });
                }
                g.backward(total)?;
                let grads: Vec<Vec<f32>> =
                    bound.vars().iter().zip(&trainable).filter(|(_, &t)| t).map(|(&v, _)| g.grad_or_zeros(v)).collect();
                (mse, ce, total_v, grads)
            };
            history.initial_loss.get_or_insert(total as f64);

            let mut refs: Vec<&mut Tensor<f32>> =
                params.tensors_mut().iter_mut().zip(&trainable).filter_map(|(t, &keep)| keep.then_some(t)).collect();
            let grad_refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut refs, &grad_refs)?;

            let n = chunk.len() as f64;
            sum_mse += mse.unwrap_or(0.0) as f64 * n;
            sum_ce += ce as f64 * n;
            sum_total += total as f64 * n;
        }

        let n = samples.len() as f64;
        let stats = EpochStats {
            epoch,
            mse: (cfg.mode == Mode::Nanet).then_some(sum_mse / n),
            ce: sum_ce / n,
            total: sum_total / n,
        };
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok((Checkpoint { params, config: cfg.clone() }, history))
}
