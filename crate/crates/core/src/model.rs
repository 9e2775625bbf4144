//! The prompt-tuned quality model: shared learnable context, category
//! prompts, frozen encoders, feature fusion and a readout.
//!
//! The default readout is the regression head over
//! `concat(F_i, F_p[0], .., F_p[K-1])` trained with MSE. The similarity
//! readout replaces the head with a softmax over image/prompt cosine
//! similarities trained with cross-entropy against binned labels.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ImageTensor;
use crate::encoder::DualEncoder;
use crate::error::{Error, Result};
use crate::head::{Activation, HeadGradient, RegressionHead, DEFAULT_HIDDEN_WIDTH};
use crate::prompt::{
    assemble_prompts, context_gradient, encode_text_traced, LearnableContext, QualityCategorySet,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    #[default]
    Regression,
    Similarity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub categories: QualityCategorySet,
    pub hidden_width: usize,
    pub activation: Activation,
    /// L2-normalize image and text features before fusion.
    pub normalize_features: bool,
    pub readout: ReadoutKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            categories: QualityCategorySet::default(),
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            activation: Activation::Relu,
            normalize_features: false,
            readout: ReadoutKind::Regression,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Regression(RegressionHead),
    Similarity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptModel {
    pub context: LearnableContext,
    pub categories: QualityCategorySet,
    pub readout: Readout,
    pub normalize_features: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradient {
    pub context: Array2<f64>,
    pub head: Option<HeadGradient>,
}

impl ModelGradient {
    /// Same ordering as [`PromptModel::flat_parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.context.iter().copied().collect();
        if let Some(h) = &self.head {
            out.extend(h.w1.iter());
            out.extend(h.b1.iter());
            out.extend(h.w2.iter());
            out.push(h.b2);
        }
        out
    }
}

/// Concatenates the image feature and every text feature row, in category
/// order. No normalization is applied.
pub fn fuse_features(image: ArrayView1<'_, f64>, text: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    let d = image.len();
    if text.ncols() != d {
        return Err(Error::WidthMismatch {
            image: d,
            text: text.ncols(),
        });
    }
    let mut fused = Array1::zeros((text.nrows() + 1) * d);
    fused.slice_mut(s![..d]).assign(&image);
    for (k, row) in text.rows().into_iter().enumerate() {
        fused.slice_mut(s![(k + 1) * d..(k + 2) * d]).assign(&row);
    }
    Ok(fused)
}

/// Row-wise fusion of a `B × d` batch of image features with shared text
/// features, giving `B × (K+1)d`.
pub fn fuse_batch(images: ArrayView2<'_, f64>, text: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let d = images.ncols();
    if text.ncols() != d {
        return Err(Error::WidthMismatch {
            image: d,
            text: text.ncols(),
        });
    }
    let flat_text = text.iter().copied().collect::<Array1<f64>>();
    let mut fused = Array2::zeros((images.nrows(), (text.nrows() + 1) * d));
    fused.slice_mut(s![.., ..d]).assign(&images);
    fused.slice_mut(s![.., d..]).assign(&flat_text);
    Ok(fused)
}

/// Mean squared error `(1/n) Σ (s - y)²`.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(s, y)| (s - y).powi(2))
        .sum();
    Ok(sum / predictions.len() as f64)
}

fn normalize_rows(m: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms = m.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if norms.iter().any(|&n| n == 0.0) {
        return Err(Error::ZeroVector);
    }
    let unit = m / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

/// Backpropagates through `u = v / ‖v‖` row by row.
fn normalize_rows_backward(
    grad_unit: &Array2<f64>,
    unit: &Array2<f64>,
    norms: &Array1<f64>,
) -> Array2<f64> {
    let mut grad = grad_unit.clone();
    for ((mut g, u), &n) in grad.rows_mut().into_iter().zip(unit.rows()).zip(norms) {
        let along = g.dot(&u);
        g.scaled_add(-along, &u);
        g /= n;
    }
    grad
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    p
}

impl PromptModel {
    /// Random context and (for the regression readout) a freshly initialized
    /// head, drawn from `rng` in that order.
    pub fn init<R: Rng + ?Sized>(
        config: &ModelConfig,
        context_length: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if config.hidden_width == 0 {
            return Err(Error::InvalidConfig("hidden width must be positive".into()));
        }
        let context = LearnableContext::random(context_length, width, rng);
        let readout = match config.readout {
            ReadoutKind::Regression => {
                let input = (config.categories.len() + 1) * width;
                Readout::Regression(RegressionHead::random(
                    input,
                    config.hidden_width,
                    config.activation,
                    rng,
                ))
            }
            ReadoutKind::Similarity => Readout::Similarity,
        };
        Ok(PromptModel {
            context,
            categories: config.categories.clone(),
            readout,
            normalize_features: config.normalize_features,
        })
    }

    pub fn head(&self) -> Option<&RegressionHead> {
        match &self.readout {
            Readout::Regression(h) => Some(h),
            Readout::Similarity => None,
        }
    }

    pub fn head_mut(&mut self) -> Option<&mut RegressionHead> {
        match &mut self.readout {
            Readout::Regression(h) => Some(h),
            Readout::Similarity => None,
        }
    }

    /// Width of the fused feature vector, `(K + 1)·d`.
    pub fn fused_width(&self) -> usize {
        (self.categories.len() + 1) * self.context.width()
    }

    /// `F_p`: one encoded prompt per category.
    pub fn text_features<E: DualEncoder>(&self, enc: &E) -> Result<Array2<f64>> {
        let batch = assemble_prompts(&self.context, &self.categories, enc)?;
        Ok(encode_text_traced(&batch, enc)?.0)
    }

    /// Stacks `F_i` for each image into a `B × d` matrix.
    pub fn image_features<E: DualEncoder>(images: &[ImageTensor], enc: &E) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((images.len(), enc.width()));
        for (mut row, img) in out.rows_mut().into_iter().zip(images) {
            row.assign(&enc.encode_image(img)?);
        }
        Ok(out)
    }

    /// Scores for a batch of images, in normalized label space.
    pub fn forward<E: DualEncoder>(&self, images: &[ImageTensor], enc: &E) -> Result<Vec<f64>> {
        let feats = Self::image_features(images, enc)?;
        self.predict_from_features(feats.view(), enc)
    }

    /// Scores from precomputed image features; the text features are
    /// computed once and shared by the whole batch.
    pub fn predict_from_features<E: DualEncoder>(
        &self,
        image_features: ArrayView2<'_, f64>,
        enc: &E,
    ) -> Result<Vec<f64>> {
        let text = self.text_features(enc)?;
        self.predict_with_text(image_features, &text, enc)
    }

    pub fn predict_with_text<E: DualEncoder>(
        &self,
        image_features: ArrayView2<'_, f64>,
        text: &Array2<f64>,
        enc: &E,
    ) -> Result<Vec<f64>> {
        if image_features.nrows() == 0 {
            return Ok(Vec::new());
        }
        let scores = match &self.readout {
            Readout::Regression(head) => {
                let (img, txt) = self.prepared(image_features, text)?;
                let fused = fuse_batch(img.view(), txt.view())?;
                head.forward_batch(fused.view())?.0
            }
            Readout::Similarity => {
                let probs = self.similarity_probs(image_features, text, enc)?.0;
                probs.dot(&Array1::from(self.categories.levels().to_vec()))
            }
        };
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteScore);
        }
        Ok(scores.to_vec())
    }

    fn prepared(
        &self,
        image_features: ArrayView2<'_, f64>,
        text: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if self.normalize_features {
            Ok((
                normalize_rows(&image_features.to_owned())?.0,
                normalize_rows(text)?.0,
            ))
        } else {
            Ok((image_features.to_owned(), text.clone()))
        }
    }

    #[allow(clippy::type_complexity)]
    fn similarity_probs<E: DualEncoder>(
        &self,
        image_features: ArrayView2<'_, f64>,
        text: &Array2<f64>,
        enc: &E,
    ) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>, Array1<f64>)> {
        if image_features.ncols() != text.ncols() {
            return Err(Error::WidthMismatch {
                image: image_features.ncols(),
                text: text.ncols(),
            });
        }
        let (img_unit, _) = normalize_rows(&image_features.to_owned())?;
        let (txt_unit, txt_norms) = normalize_rows(text)?;
        let logits = img_unit.dot(&txt_unit.t()) * enc.logit_scale();
        Ok((softmax_rows(&logits), img_unit, txt_unit, txt_norms))
    }

    /// Batch loss and gradients w.r.t. the trainable parameters.
    ///
    /// Regression readout: MSE against `targets`. Similarity readout:
    /// cross-entropy against the category bin of each target.
    pub fn loss_and_gradient<E: DualEncoder>(
        &self,
        image_features: ArrayView2<'_, f64>,
        targets: &[f64],
        enc: &E,
    ) -> Result<(f64, ModelGradient)> {
        let b = image_features.nrows();
        if b == 0 {
            return Err(Error::EmptyBatch);
        }
        if targets.len() != b {
            return Err(Error::LengthMismatch {
                left: b,
                right: targets.len(),
            });
        }
        let prompts = assemble_prompts(&self.context, &self.categories, enc)?;
        let (text, traces) = encode_text_traced(&prompts, enc)?;
        let d = text.ncols();

        let (loss, grad_text, head_grad) = match &self.readout {
            Readout::Regression(head) => {
                let (img, txt, txt_norm) = if self.normalize_features {
                    let (i, _) = normalize_rows(&image_features.to_owned())?;
                    let (t, n) = normalize_rows(&text)?;
                    (i, t, Some(n))
                } else {
                    (image_features.to_owned(), text.clone(), None)
                };
                let fused = fuse_batch(img.view(), txt.view())?;
                let (scores, trace) = head.forward_batch(fused.view())?;
                let loss = mse_loss(scores.as_slice().expect("contiguous"), targets)?;
                let grad_scores: Array1<f64> = scores
                    .iter()
                    .zip(targets)
                    .map(|(s, y)| 2.0 * (s - y) / b as f64)
                    .collect();
                let (hg, grad_fused) = head.backward(&trace, fused.view(), grad_scores.view());
                let summed = grad_fused.slice(s![.., d..]).sum_axis(Axis(0));
                let mut grad_txt = summed
                    .into_shape_with_order((self.categories.len(), d))
                    .expect("fused layout");
                if let Some(norms) = txt_norm {
                    grad_txt = normalize_rows_backward(&grad_txt, &txt, &norms);
                }
                (loss, grad_txt, Some(hg))
            }
            Readout::Similarity => {
                let (probs, img_unit, txt_unit, txt_norms) =
                    self.similarity_probs(image_features, &text, enc)?;
                let mut loss = 0.0;
                let mut grad_logits = probs.clone();
                for (i, &y) in targets.iter().enumerate() {
                    let bin = self.categories.bin_of(y);
                    loss -= probs[[i, bin]].max(f64::MIN_POSITIVE).ln();
                    grad_logits[[i, bin]] -= 1.0;
                }
                loss /= b as f64;
                grad_logits /= b as f64;
                let grad_cos = grad_logits * enc.logit_scale();
                let grad_unit = grad_cos.t().dot(&img_unit);
                let grad_txt = normalize_rows_backward(&grad_unit, &txt_unit, &txt_norms);
                (loss, grad_txt, None)
            }
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteScore);
        }
        let context = context_gradient(&prompts, &traces, grad_text.view(), enc);
        Ok((
            loss,
            ModelGradient {
                context,
                head: head_grad,
            },
        ))
    }

    /// All trainable parameters: context (row-major), then head `w1`, `b1`,
    /// `w2`, `b2`.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.context.vectors().iter().copied().collect();
        if let Some(h) = self.head() {
            out.extend(h.w1.iter());
            out.extend(h.b1.iter());
            out.extend(h.w2.iter());
            out.push(h.b2);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.context.vectors().len() + self.head().map_or(0, RegressionHead::parameter_count)
    }

    pub fn set_flat_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::LengthMismatch {
                left: self.parameter_count(),
                right: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for v in self.context.vectors_mut().iter_mut() {
            *v = it.next().expect("length checked");
        }
        if let Some(h) = self.head_mut() {
            for v in h.w1.iter_mut().chain(h.b1.iter_mut()).chain(h.w2.iter_mut()) {
                *v = it.next().expect("length checked");
            }
            h.b2 = it.next().expect("length checked");
        }
        Ok(())
    }

    /// SHA-256 over the context vectors.
    pub fn context_digest(&self) -> String {
        digest(self.context.vectors().iter())
    }

    /// SHA-256 over the head parameters (empty input for the similarity readout).
    pub fn head_digest(&self) -> String {
        match self.head() {
            Some(h) => digest(
                h.w1.iter()
                    .chain(h.b1.iter())
                    .chain(h.w2.iter())
                    .chain(std::iter::once(&h.b2)),
            ),
            None => digest(std::iter::empty()),
        }
    }
}

fn digest<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}
