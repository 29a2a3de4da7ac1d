#![allow(dead_code)]

use std::path::Path;

use nanet_core::dataset::{build_dataset, DatasetManifest, NoiseSet, RenderSpec, SplitSpec};
use nanet_core::model::{AutoencoderConfig, ClassifierConfig, Mode};
use nanet_core::train::TrainConfig;

/// 128 px canvas, two instances per letter of which one is held out.
pub fn tiny_dataset(dir: &Path, seed: u64) -> DatasetManifest {
    let split = SplitSpec { per_letter: 2, test_per_letter: 1 };
    let mut manifest = build_dataset(&RenderSpec::for_canvas(128), &NoiseSet::default(), split, seed, dir).unwrap();
    manifest.root = dir.to_path_buf();
    manifest
}

pub fn toy_autoencoder() -> AutoencoderConfig {
    AutoencoderConfig { stage_channels: vec![4, 8], bottleneck_channels: 8, ..AutoencoderConfig::desk() }
}

pub fn toy_classifier() -> ClassifierConfig {
    ClassifierConfig { channels: [8, 8, 8, 8, 8, 8], fc_hidden: [32, 32], ..ClassifierConfig::default() }
}

pub fn toy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 4,
        lr: 1e-3,
        image_size: 32,
        augment_rotation_deg: 15.0,
        seed,
        mode: Mode::Nanet,
        autoencoder: toy_autoencoder(),
        classifier: toy_classifier(),
    }
}
