//! Antonym-prompt zero-shot scoring: cosine similarity of the image feature
//! to a positive and a negative prompt, then a two-way softmax.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::data::ImageTensor;
use crate::encoder::DualEncoder;
use crate::error::{Error, Result};
use crate::prompt::encode_plain_text;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AntonymPromptPair {
    positive: String,
    negative: String,
}

impl AntonymPromptPair {
    pub fn new(positive: impl Into<String>, negative: impl Into<String>) -> Result<Self> {
        let (positive, negative) = (positive.into(), negative.into());
        if positive.trim().is_empty() || negative.trim().is_empty() {
            return Err(Error::InvalidPromptPair("prompts must be non-empty".into()));
        }
        if positive == negative {
            return Err(Error::InvalidPromptPair("prompts must differ".into()));
        }
        Ok(AntonymPromptPair { positive, negative })
    }

    pub fn positive(&self) -> &str {
        &self.positive
    }

    pub fn negative(&self) -> &str {
        &self.negative
    }

    pub fn swapped(&self) -> Self {
        AntonymPromptPair {
            positive: self.negative.clone(),
            negative: self.positive.clone(),
        }
    }
}

impl Default for AntonymPromptPair {
    fn default() -> Self {
        AntonymPromptPair {
            positive: "Good photo.".into(),
            negative: "Bad photo.".into(),
        }
    }
}

pub fn cosine_similarity(x: ArrayView1<'_, f64>, t: ArrayView1<'_, f64>) -> Result<f64> {
    if x.len() != t.len() {
        return Err(Error::WidthMismatch {
            image: x.len(),
            text: t.len(),
        });
    }
    let nx = x.dot(&x).sqrt();
    let nt = t.dot(&t).sqrt();
    if nx == 0.0 || nt == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((x.dot(&t) / (nx * nt)).clamp(-1.0, 1.0))
}

/// `e^{s1} / (e^{s1} + e^{s2})`.
pub fn antonym_score(s1: f64, s2: f64) -> f64 {
    1.0 / (1.0 + (s2 - s1).exp())
}

/// Score from precomputed features of the image and of both prompts.
pub fn zero_shot_from_features(
    image: ArrayView1<'_, f64>,
    positive: ArrayView1<'_, f64>,
    negative: ArrayView1<'_, f64>,
) -> Result<f64> {
    let s1 = cosine_similarity(image, positive)?;
    let s2 = cosine_similarity(image, negative)?;
    Ok(antonym_score(s1, s2))
}

/// Scores images against a fixed prompt pair; prompt features are encoded
/// once at construction.
pub struct ZeroShotScorer<'a, E: DualEncoder> {
    encoder: &'a E,
    positive: ndarray::Array1<f64>,
    negative: ndarray::Array1<f64>,
}

impl<'a, E: DualEncoder> ZeroShotScorer<'a, E> {
    pub fn new(encoder: &'a E, pair: &AntonymPromptPair) -> Result<Self> {
        Ok(ZeroShotScorer {
            encoder,
            positive: encode_plain_text(pair.positive(), encoder)?,
            negative: encode_plain_text(pair.negative(), encoder)?,
        })
    }

    pub fn score(&self, image: &ImageTensor) -> Result<f64> {
        let x = self.encoder.encode_image(image)?;
        zero_shot_from_features(x.view(), self.positive.view(), self.negative.view())
    }
}

pub fn zero_shot_quality<E: DualEncoder>(
    image: &ImageTensor,
    pair: &AntonymPromptPair,
    enc: &E,
) -> Result<f64> {
    ZeroShotScorer::new(enc, pair)?.score(image)
}
