//! Shared fixtures: tiny stub encoders and synthetic data.
#![allow(dead_code)]

use agiqa_core::data::{ImageTensor, LabelScaler};
use agiqa_core::encoder::{DualEncoder, StubEncoder, StubEncoderConfig};
use agiqa_core::model::{ModelConfig, PromptModel};
use agiqa_core::train::FeatureSet;
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn tiny_encoder(width: usize) -> StubEncoder {
    StubEncoder::new(StubEncoderConfig::tiny(width)).unwrap()
}

/// Standard-normal pixels, roughly what a normalized photo looks like.
pub fn noise_image(size: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = Array3::from_shape_simple_fn((3, size, size), || StandardNormal.sample(&mut rng));
    ImageTensor::from_array(pixels).unwrap()
}

pub fn noise_features(enc: &StubEncoder, n: usize, seed: u64) -> Array2<f64> {
    let images: Vec<_> = (0..n)
        .map(|i| noise_image(enc.image_size(), seed * 1000 + i as u64))
        .collect();
    PromptModel::image_features(&images, enc).unwrap()
}

/// Features of `n` noise images labelled by a randomly initialized teacher,
/// min-max scaled onto [0, 1].
pub fn teacher_set(enc: &StubEncoder, cfg: &ModelConfig, context: usize, n: usize, seed: u64) -> FeatureSet {
    let features = noise_features(enc, n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let teacher = PromptModel::init(cfg, context, enc.width(), &mut rng).unwrap();
    let raw = teacher.predict_from_features(features.view(), enc).unwrap();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let labels = raw.iter().map(|y| (y - lo) / (hi - lo)).collect();
    FeatureSet::new(
        (0..n).map(|i| format!("syn{i:02}.png")).collect(),
        features,
        labels,
        LabelScaler::new(0.0, 1.0).unwrap(),
    )
    .unwrap()
}
