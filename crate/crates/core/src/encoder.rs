//! Frozen dual encoder interface and the deterministic stub backbone.
//!
//! The regression model only ever borrows an encoder immutably, so encoder
//! parameters cannot change during training. [`DualEncoder::fingerprint`]
//! hashes every parameter so callers can check that at runtime too.
//!
//! [`StubEncoder`] stands in for a pretrained backbone. It keeps the shape
//! contract of the real thing (token embedding table, causal text branch
//! read out at the end token, patch-based image branch, shared output width)
//! with fixed seeded weights, so the whole pipeline runs without downloads.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ImageTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Backbone {
    #[serde(rename = "ViT-B/16")]
    VitB16,
    #[serde(rename = "ViT-B/32")]
    VitB32,
    #[serde(rename = "RN101")]
    Rn101,
}

impl Backbone {
    pub const ALL: [Backbone; 3] = [Backbone::VitB16, Backbone::VitB32, Backbone::Rn101];

    pub fn id(self) -> &'static str {
        match self {
            Backbone::VitB16 => "ViT-B/16",
            Backbone::VitB32 => "ViT-B/32",
            Backbone::Rn101 => "RN101",
        }
    }

    /// Spatial stride of the image branch (patch size for ViTs, final
    /// feature-map stride for the ResNet).
    pub fn patch_size(self) -> usize {
        match self {
            Backbone::VitB16 => 16,
            Backbone::VitB32 | Backbone::Rn101 => 32,
        }
    }

    /// Width of the shared embedding space.
    pub fn embed_width(self) -> usize {
        512
    }
}

impl Default for Backbone {
    fn default() -> Self {
        Backbone::VitB16
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "vitb16" => Ok(Backbone::VitB16),
            "vitb32" => Ok(Backbone::VitB32),
            "rn101" | "resnet101" => Ok(Backbone::Rn101),
            _ => Err(Error::BackboneUnavailable(
                s.to_string(),
                "unknown backbone identifier".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecialTokens {
    pub start: u32,
    pub end: u32,
    pub pad: u32,
}

/// A frozen text/image encoder pair mapping both modalities into one
/// embedding space of width [`DualEncoder::width`].
pub trait DualEncoder {
    /// Whatever the text branch needs to keep from a forward pass in order
    /// to backpropagate into its input embeddings.
    type TextTrace;

    fn backbone_id(&self) -> String;
    fn width(&self) -> usize;
    /// Token positions per text sequence.
    fn context_window(&self) -> usize;
    /// Side length of the square input expected by the image branch.
    fn image_size(&self) -> usize;
    /// Frozen temperature applied to cosine similarities when the encoder is
    /// used as a classifier.
    fn logit_scale(&self) -> f64;
    /// Token ids for `text`, without start/end markers.
    fn tokenize(&self, text: &str) -> Vec<u32>;
    fn special_tokens(&self) -> SpecialTokens;
    fn token_embedding(&self, id: u32) -> ArrayView1<'_, f64>;

    /// Runs the text branch over one `context_window × width` embedding
    /// sequence and returns the projected feature read at `eos`.
    fn text_forward(
        &self,
        sequence: ArrayView2<'_, f64>,
        eos: usize,
    ) -> Result<(Array1<f64>, Self::TextTrace)>;

    /// Gradient of a scalar loss with respect to the input sequence, given
    /// its gradient with respect to the text feature.
    fn text_backward(&self, trace: &Self::TextTrace, grad_feature: ArrayView1<'_, f64>)
        -> Array2<f64>;

    fn encode_image(&self, image: &ImageTensor) -> Result<Array1<f64>>;

    /// Hash over every frozen parameter.
    fn fingerprint(&self) -> String;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StubEncoderConfig {
    pub backbone: Backbone,
    pub width: usize,
    pub context_window: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub logit_scale: f64,
}

impl StubEncoderConfig {
    /// Full-size shapes of the named backbone: width 512, 77 text positions,
    /// 224×224 images.
    pub fn for_backbone(backbone: Backbone) -> Self {
        StubEncoderConfig {
            backbone,
            width: backbone.embed_width(),
            context_window: 77,
            image_size: 224,
            patch_size: backbone.patch_size(),
            vocab_size: 2048,
            seed: 0x5eed_0000 + backbone as u64,
            logit_scale: 100.0,
        }
    }

    /// Shrunken shapes for fast tests.
    pub fn tiny(width: usize) -> Self {
        StubEncoderConfig {
            backbone: Backbone::VitB16,
            width,
            context_window: 16,
            image_size: 32,
            patch_size: 8,
            vocab_size: 256,
            seed: 7,
            logit_scale: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("stub encoder: {msg}")));
        if self.width == 0 {
            return bad("width must be positive");
        }
        if self.context_window < 2 {
            return bad("context window must hold start and end tokens");
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return bad("image size must be a positive multiple of the patch size");
        }
        if self.vocab_size < 8 {
            return bad("vocabulary too small");
        }
        Ok(())
    }
}

/// How to obtain a frozen encoder: stored in checkpoints and run configs
/// instead of the weights themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderSpec {
    Stub(StubEncoderConfig),
    Pretrained { backbone: Backbone },
}

/// Environment variable naming the pretrained weight cache directory.
pub const WEIGHTS_DIR_ENV: &str = "AGIQA_WEIGHTS_DIR";

impl EncoderSpec {
    pub fn backbone(&self) -> Backbone {
        match self {
            EncoderSpec::Stub(cfg) => cfg.backbone,
            EncoderSpec::Pretrained { backbone } => *backbone,
        }
    }

    /// Same kind of encoder for another backbone. Stub patch sizes scale
    /// with the backbone stride and the seed changes with it.
    pub fn with_backbone(&self, backbone: Backbone) -> EncoderSpec {
        match self {
            EncoderSpec::Stub(cfg) => {
                let mut next = cfg.clone();
                let base = cfg.patch_size * 16 / cfg.backbone.patch_size();
                let patch = base * backbone.patch_size() / 16;
                next.patch_size = if patch > 0 && cfg.image_size % patch == 0 {
                    patch
                } else {
                    cfg.image_size
                };
                next.seed = cfg.seed - cfg.backbone as u64 + backbone as u64;
                next.backbone = backbone;
                EncoderSpec::Stub(next)
            }
            EncoderSpec::Pretrained { .. } => EncoderSpec::Pretrained { backbone },
        }
    }

    /// Builds the encoder, looking for pretrained weights under
    /// `$AGIQA_WEIGHTS_DIR`.
    pub fn build(&self) -> Result<StubEncoder> {
        let dir = std::env::var_os(WEIGHTS_DIR_ENV).map(std::path::PathBuf::from);
        self.build_from(dir.as_deref())
    }

    pub fn build_from(&self, weights_dir: Option<&std::path::Path>) -> Result<StubEncoder> {
        match self {
            EncoderSpec::Stub(cfg) => StubEncoder::new(cfg.clone()),
            EncoderSpec::Pretrained { backbone } => {
                let cache = weights_dir.map_or("<unset>".into(), |d| d.display().to_string());
                Err(Error::BackboneUnavailable(
                    backbone.id().to_string(),
                    format!(
                        "no pretrained weight loader in this build (weight cache: {cache}); use the stub encoder"
                    ),
                ))
            }
        }
    }
}

// Token and positional tables follow the usual 0.02 init; the text branch
// rescales its inputs so context vectors at that scale carry signal.
const EMBED_STD: f64 = 0.02;
const INPUT_GAIN: f64 = 1.0 / EMBED_STD;

/// Seeded stand-in for a pretrained dual encoder.
///
/// Text branch: `x_j = g·(e_j + p_j)`, one causal attention read-out at the
/// end token `h = x_eos + W_o·Σ_j softmax(q·k_j/√d)_j v_j`, then
/// `feature = W_proj · tanh(h)`.
/// Image branch: non-overlapping patches, `tanh(W_patch·patch + pos)`,
/// mean-pooled and projected.
#[derive(Clone, Debug)]
pub struct StubEncoder {
    config: StubEncoderConfig,
    token_table: Array2<f64>,
    positional: Array2<f64>,
    w_query: Array2<f64>,
    w_key: Array2<f64>,
    w_value: Array2<f64>,
    w_out: Array2<f64>,
    w_text_proj: Array2<f64>,
    w_patch: Array2<f64>,
    patch_pos: Array2<f64>,
    w_image_proj: Array2<f64>,
}

/// Saved activations of one [`StubEncoder`] text forward pass.
#[derive(Clone, Debug)]
pub struct StubTextTrace {
    eos: usize,
    keys: Array2<f64>,
    values: Array2<f64>,
    query: Array1<f64>,
    attention: Array1<f64>,
    activated: Array1<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("std is positive");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

impl StubEncoder {
    pub fn new(config: StubEncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let patch_dim = 3 * config.patch_size * config.patch_size;
        let patches = (config.image_size / config.patch_size).pow(2);

        let token_table = gaussian(&mut rng, config.vocab_size, d, EMBED_STD);
        let positional = gaussian(&mut rng, config.context_window, d, EMBED_STD);
        let w_query = gaussian(&mut rng, d, d, inv_sqrt_d);
        let w_key = gaussian(&mut rng, d, d, inv_sqrt_d);
        let w_value = gaussian(&mut rng, d, d, inv_sqrt_d);
        let w_out = gaussian(&mut rng, d, d, inv_sqrt_d);
        let w_text_proj = gaussian(&mut rng, d, d, inv_sqrt_d);
        let w_patch = gaussian(&mut rng, d, patch_dim, 1.0 / (patch_dim as f64).sqrt());
        let patch_pos = gaussian(&mut rng, patches, d, 0.1);
        // Mean pooling shrinks the pooled vector; the projection undoes most of it.
        let w_image_proj = gaussian(&mut rng, d, d, (patches as f64).sqrt() * inv_sqrt_d);

        Ok(StubEncoder {
            config,
            token_table,
            positional,
            w_query,
            w_key,
            w_value,
            w_out,
            w_text_proj,
            w_patch,
            patch_pos,
            w_image_proj,
        })
    }

    pub fn for_backbone(backbone: Backbone) -> Result<Self> {
        Self::new(StubEncoderConfig::for_backbone(backbone))
    }

    pub fn config(&self) -> &StubEncoderConfig {
        &self.config
    }

    fn parameters(&self) -> [&Array2<f64>; 10] {
        [
            &self.token_table,
            &self.positional,
            &self.w_query,
            &self.w_key,
            &self.w_value,
            &self.w_out,
            &self.w_text_proj,
            &self.w_patch,
            &self.patch_pos,
            &self.w_image_proj,
        ]
    }

    fn hash_token(&self, word: &str) -> u32 {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in word.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        // ids 0, vocab-2 and vocab-1 are reserved for pad/start/end
        1 + (h % (self.config.vocab_size as u64 - 3)) as u32
    }
}

impl DualEncoder for StubEncoder {
    type TextTrace = StubTextTrace;

    fn backbone_id(&self) -> String {
        self.config.backbone.id().to_string()
    }

    fn width(&self) -> usize {
        self.config.width
    }

    fn context_window(&self) -> usize {
        self.config.context_window
    }

    fn image_size(&self) -> usize {
        self.config.image_size
    }

    fn logit_scale(&self) -> f64 {
        self.config.logit_scale
    }

    fn tokenize(&self, text: &str) -> Vec<u32> {
        let lower = text.to_lowercase();
        let mut ids = Vec::new();
        let mut word = String::new();
        for ch in lower.chars() {
            if ch.is_alphanumeric() {
                word.push(ch);
                continue;
            }
            if !word.is_empty() {
                ids.push(self.hash_token(&word));
                word.clear();
            }
            if !ch.is_whitespace() {
                ids.push(self.hash_token(&ch.to_string()));
            }
        }
        if !word.is_empty() {
            ids.push(self.hash_token(&word));
        }
        ids
    }

    fn special_tokens(&self) -> SpecialTokens {
        let v = self.config.vocab_size as u32;
        SpecialTokens {
            start: v - 2,
            end: v - 1,
            pad: 0,
        }
    }

    fn token_embedding(&self, id: u32) -> ArrayView1<'_, f64> {
        self.token_table.row(id as usize)
    }

    fn text_forward(
        &self,
        sequence: ArrayView2<'_, f64>,
        eos: usize,
    ) -> Result<(Array1<f64>, StubTextTrace)> {
        let (l, d) = (self.config.context_window, self.config.width);
        if sequence.dim() != (l, d) {
            return Err(Error::ShapeMismatch {
                expected: format!("{l}x{d}"),
                actual: format!("{}x{}", sequence.nrows(), sequence.ncols()),
            });
        }
        if eos >= l {
            return Err(Error::ShapeMismatch {
                expected: format!("end position < {l}"),
                actual: eos.to_string(),
            });
        }
        let scale = 1.0 / (d as f64).sqrt();
        let inputs = (&sequence.slice(s![..=eos, ..]) + &self.positional.slice(s![..=eos, ..]))
            * INPUT_GAIN;
        let keys = inputs.dot(&self.w_key.t());
        let values = inputs.dot(&self.w_value.t());
        let query = self.w_query.dot(&inputs.row(eos));

        let logits = keys.dot(&query) * scale;
        let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut attention = logits.mapv(|v| (v - max).exp());
        let total = attention.sum();
        attention /= total;

        let context = values.t().dot(&attention);
        let hidden = &inputs.row(eos) + &self.w_out.dot(&context);
        let activated = hidden.mapv(f64::tanh);
        let feature = self.w_text_proj.dot(&activated);
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature("text feature"));
        }
        let trace = StubTextTrace {
            eos,
            keys,
            values,
            query,
            attention,
            activated,
        };
        Ok((feature, trace))
    }

    fn text_backward(&self, trace: &StubTextTrace, grad_feature: ArrayView1<'_, f64>) -> Array2<f64> {
        let (l, d) = (self.config.context_window, self.config.width);
        let scale = 1.0 / (d as f64).sqrt();
        let eos = trace.eos;

        let grad_act = self.w_text_proj.t().dot(&grad_feature);
        let grad_hidden = &grad_act * &trace.activated.mapv(|u| 1.0 - u * u);
        let grad_context = self.w_out.t().dot(&grad_hidden);

        let grad_attn = trace.values.dot(&grad_context);
        let mean = trace.attention.dot(&grad_attn);
        let grad_logits = &trace.attention * &(grad_attn - mean);

        let grad_query = trace.keys.t().dot(&grad_logits) * scale;
        let grad_keys = outer(grad_logits.view(), trace.query.view()) * scale;
        let grad_values = outer(trace.attention.view(), grad_context.view());

        let mut grad_inputs = grad_keys.dot(&self.w_key) + grad_values.dot(&self.w_value);
        {
            let mut last = grad_inputs.row_mut(eos);
            last += &grad_hidden;
            last += &self.w_query.t().dot(&grad_query);
        }

        let mut grad_seq = Array2::zeros((l, d));
        grad_seq
            .slice_mut(s![..=eos, ..])
            .assign(&(grad_inputs * INPUT_GAIN));
        grad_seq
    }

    fn encode_image(&self, image: &ImageTensor) -> Result<Array1<f64>> {
        let size = self.config.image_size;
        let pixels = image.pixels();
        if pixels.dim() != (3, size, size) {
            let (c, h, w) = pixels.dim();
            return Err(Error::ShapeMismatch {
                expected: format!("3x{size}x{size}"),
                actual: format!("{c}x{h}x{w}"),
            });
        }
        let p = self.config.patch_size;
        let grid = size / p;
        let mut patches = Array2::zeros((grid * grid, 3 * p * p));
        for gy in 0..grid {
            for gx in 0..grid {
                let block = pixels.slice(s![.., gy * p..(gy + 1) * p, gx * p..(gx + 1) * p]);
                let mut row = patches.row_mut(gy * grid + gx);
                for (dst, src) in row.iter_mut().zip(block.iter()) {
                    *dst = *src;
                }
            }
        }
        let embedded = (patches.dot(&self.w_patch.t()) + &self.patch_pos).mapv(f64::tanh);
        let pooled = embedded.mean_axis(Axis(0)).expect("at least one patch");
        let feature = self.w_image_proj.dot(&pooled);
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature("image feature"));
        }
        Ok(feature)
    }

    fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for param in self.parameters() {
            for v in param.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

pub(crate) fn outer(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}
