//! Learnable-context prompts.
//!
//! Every quality category gets one prompt laid out as
//! `[start][ctx_1 .. ctx_M][category tokens][end][pad ..]`. All prompts share
//! the same context vectors, so gradients from every category accumulate
//! into one `M × d` matrix.

use std::collections::HashSet;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::DualEncoder;
use crate::error::{Error, Result};

/// Standard deviation of the Gaussian context initialization.
pub const CONTEXT_INIT_STD: f64 = 0.02;

/// Default number of context tokens.
pub const DEFAULT_CONTEXT_LENGTH: usize = 16;

/// The trainable `M × d` context matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnableContext {
    vectors: Array2<f64>,
}

impl LearnableContext {
    /// Zero-mean Gaussian init with std [`CONTEXT_INIT_STD`].
    pub fn random<R: Rng + ?Sized>(length: usize, width: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, CONTEXT_INIT_STD).expect("valid std");
        let vectors = Array2::from_shape_simple_fn((length, width), || normal.sample(rng));
        LearnableContext { vectors }
    }

    pub fn from_array(vectors: Array2<f64>) -> Result<Self> {
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature("context vectors"));
        }
        Ok(LearnableContext { vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub(crate) fn vectors_mut(&mut self) -> &mut Array2<f64> {
        &mut self.vectors
    }
}

/// Ordered quality category words with their score levels.
///
/// Levels live in normalized label space and are only read by the
/// similarity-classification readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCategories")]
pub struct QualityCategorySet {
    words: Vec<String>,
    levels: Vec<f64>,
}

#[derive(Deserialize)]
struct RawCategories {
    words: Vec<String>,
    levels: Vec<f64>,
}

impl TryFrom<RawCategories> for QualityCategorySet {
    type Error = Error;

    fn try_from(raw: RawCategories) -> Result<Self> {
        QualityCategorySet::new(raw.words, raw.levels)
    }
}

impl QualityCategorySet {
    pub const ADJECTIVES: [&'static str; 6] =
        ["terrible", "bad", "poor", "average", "good", "perfect"];
    pub const ADJECTIVES_8: [&'static str; 8] = [
        "horrible", "terrible", "bad", "poor", "average", "good", "excellent", "perfect",
    ];
    pub const NUMERIC: [&'static str; 6] = ["1", "2", "3", "4", "5", "6"];

    pub fn new(words: Vec<String>, levels: Vec<f64>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptyCategorySet);
        }
        let invalid = |msg: String| Err(Error::InvalidCategories(msg));
        if words.len() < 2 {
            return invalid("at least two categories are required".into());
        }
        if levels.len() != words.len() {
            return invalid(format!("{} words but {} levels", words.len(), levels.len()));
        }
        let mut seen = HashSet::new();
        for w in &words {
            if w.trim().is_empty() {
                return invalid("blank category word".into());
            }
            if !seen.insert(w.as_str()) {
                return invalid(format!("duplicate category {w:?}"));
            }
        }
        if levels.iter().any(|l| !l.is_finite()) || levels.windows(2).any(|p| p[0] >= p[1]) {
            return invalid("levels must be finite and strictly increasing".into());
        }
        Ok(QualityCategorySet { words, levels })
    }

    /// Categories with levels at the centers of `K` equal-width bins of [0, 1].
    pub fn with_uniform_levels<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        let k = words.len() as f64;
        let levels = (0..words.len()).map(|i| (i as f64 + 0.5) / k).collect();
        Self::new(words, levels)
    }

    /// terrible, bad, poor, average, good, perfect.
    pub fn adjectives() -> Self {
        Self::with_uniform_levels(Self::ADJECTIVES).expect("valid preset")
    }

    pub fn adjectives8() -> Self {
        Self::with_uniform_levels(Self::ADJECTIVES_8).expect("valid preset")
    }

    pub fn numeric() -> Self {
        Self::with_uniform_levels(Self::NUMERIC).expect("valid preset")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Index of the equal-width bin of [0, 1] containing `y`.
    pub fn bin_of(&self, y: f64) -> usize {
        let k = self.len();
        ((y.clamp(0.0, 1.0) * k as f64).floor() as usize).min(k - 1)
    }

    /// Same words in a different order (levels follow their words).
    pub fn permuted(&self, order: &[usize]) -> Self {
        QualityCategorySet {
            words: order.iter().map(|&i| self.words[i].clone()).collect(),
            levels: order.iter().map(|&i| self.levels[i]).collect(),
        }
    }
}

impl Default for QualityCategorySet {
    fn default() -> Self {
        Self::adjectives()
    }
}

/// `K × L × d` prompt embeddings plus each prompt's end-token index.
#[derive(Clone, Debug)]
pub struct PromptEmbeddingBatch {
    pub embeddings: Array3<f64>,
    pub eos_positions: Vec<usize>,
    pub context_length: usize,
}

impl PromptEmbeddingBatch {
    pub fn len(&self) -> usize {
        self.eos_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eos_positions.is_empty()
    }
}

fn check_width(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::WidthMismatch {
            image: expected,
            text: actual,
        });
    }
    Ok(())
}

/// Builds one embedding sequence per category.
pub fn assemble_prompts<E: DualEncoder>(
    ctx: &LearnableContext,
    cats: &QualityCategorySet,
    enc: &E,
) -> Result<PromptEmbeddingBatch> {
    if cats.is_empty() {
        return Err(Error::EmptyCategorySet);
    }
    let (l, d, m) = (enc.context_window(), enc.width(), ctx.len());
    check_width(d, ctx.width())?;
    let available = l.saturating_sub(m + 2);
    let special = enc.special_tokens();

    let mut embeddings = Array3::zeros((cats.len(), l, d));
    let mut eos_positions = Vec::with_capacity(cats.len());
    for (k, word) in cats.words().iter().enumerate() {
        let tokens = enc.tokenize(word);
        if tokens.len() > available {
            return Err(Error::CategoryTooLong {
                word: word.clone(),
                tokens: tokens.len(),
                available,
            });
        }
        let mut prompt = embeddings.index_axis_mut(Axis(0), k);
        prompt.row_mut(0).assign(&enc.token_embedding(special.start));
        prompt.slice_mut(s![1..=m, ..]).assign(ctx.vectors());
        for (i, &tok) in tokens.iter().enumerate() {
            prompt.row_mut(1 + m + i).assign(&enc.token_embedding(tok));
        }
        let eos = 1 + m + tokens.len();
        prompt.row_mut(eos).assign(&enc.token_embedding(special.end));
        let pad = enc.token_embedding(special.pad);
        for pos in eos + 1..l {
            prompt.row_mut(pos).assign(&pad);
        }
        eos_positions.push(eos);
    }
    Ok(PromptEmbeddingBatch {
        embeddings,
        eos_positions,
        context_length: m,
    })
}

/// Text features `F_p`, one row per prompt.
pub fn encode_text<E: DualEncoder>(batch: &PromptEmbeddingBatch, enc: &E) -> Result<Array2<f64>> {
    Ok(encode_text_traced(batch, enc)?.0)
}

pub(crate) fn encode_text_traced<E: DualEncoder>(
    batch: &PromptEmbeddingBatch,
    enc: &E,
) -> Result<(Array2<f64>, Vec<E::TextTrace>)> {
    let mut features = Array2::zeros((batch.len(), enc.width()));
    let mut traces = Vec::with_capacity(batch.len());
    for (k, &eos) in batch.eos_positions.iter().enumerate() {
        let (f, trace) = enc.text_forward(batch.embeddings.index_axis(Axis(0), k), eos)?;
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature("text feature"));
        }
        features.row_mut(k).assign(&f);
        traces.push(trace);
    }
    Ok((features, traces))
}

/// Accumulates the gradient reaching the shared context from every prompt.
pub(crate) fn context_gradient<E: DualEncoder>(
    batch: &PromptEmbeddingBatch,
    traces: &[E::TextTrace],
    grad_features: ArrayView2<'_, f64>,
    enc: &E,
) -> Array2<f64> {
    let m = batch.context_length;
    let mut grad = Array2::zeros((m, enc.width()));
    for (trace, g) in traces.iter().zip(grad_features.rows()) {
        let grad_seq = enc.text_backward(trace, g);
        grad += &grad_seq.slice(s![1..=m, ..]);
    }
    grad
}

/// Embeds a plain prompt `[start][tokens][end][pad ..]` through the frozen
/// token table.
pub fn embed_plain_text<E: DualEncoder>(text: &str, enc: &E) -> Result<(Array2<f64>, usize)> {
    let (l, d) = (enc.context_window(), enc.width());
    let tokens = enc.tokenize(text);
    if tokens.len() + 2 > l {
        return Err(Error::CategoryTooLong {
            word: text.to_string(),
            tokens: tokens.len(),
            available: l.saturating_sub(2),
        });
    }
    let special = enc.special_tokens();
    let mut seq = Array2::zeros((l, d));
    seq.row_mut(0).assign(&enc.token_embedding(special.start));
    for (i, &tok) in tokens.iter().enumerate() {
        seq.row_mut(1 + i).assign(&enc.token_embedding(tok));
    }
    let eos = 1 + tokens.len();
    seq.row_mut(eos).assign(&enc.token_embedding(special.end));
    for pos in eos + 1..l {
        seq.row_mut(pos).assign(&enc.token_embedding(special.pad));
    }
    Ok((seq, eos))
}

/// Text feature of a plain (non-learnable) prompt.
pub fn encode_plain_text<E: DualEncoder>(text: &str, enc: &E) -> Result<ndarray::Array1<f64>> {
    let (seq, eos) = embed_plain_text(text, enc)?;
    Ok(enc.text_forward(seq.view(), eos)?.0)
}
