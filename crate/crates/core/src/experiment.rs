//! Ablation variants, full run configurations and the variant runner.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetManifest, Split};
use crate::encoder::{Backbone, DualEncoder, EncoderSpec, StubEncoderConfig};
use crate::error::{Error, Result};
use crate::metrics::{Correlations, PlccMode};
use crate::model::{ModelConfig, ReadoutKind};
use crate::prompt::{QualityCategorySet, DEFAULT_CONTEXT_LENGTH};
use crate::report::{CheckpointKind, EvalReport};
use crate::train::{evaluate, resume, FeatureSet, TrainConfig, TrainOutcome, TrainState};

/// Context lengths the ablation accepts.
pub const CONTEXT_LENGTH_CHOICES: [usize; 3] = [8, 16, 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantId {
    Full,
    NoRegression,
    BackboneSwap,
    ContextLength,
    CategoryLength,
    CategoryType,
}

impl VariantId {
    pub const ALL: [VariantId; 6] = [
        VariantId::Full,
        VariantId::NoRegression,
        VariantId::BackboneSwap,
        VariantId::ContextLength,
        VariantId::CategoryLength,
        VariantId::CategoryType,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantId::Full => "full",
            VariantId::NoRegression => "no_regression",
            VariantId::BackboneSwap => "backbone_swap",
            VariantId::ContextLength => "context_length",
            VariantId::CategoryLength => "category_length",
            VariantId::CategoryType => "category_type",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        VariantId::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::InvalidVariantParams(format!("unknown variant {s:?}")))
    }
}

/// Which quality words the prompts end with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryChoice {
    Adjectives,
    Adjectives8,
    Numeric,
    Custom(QualityCategorySet),
}

impl CategoryChoice {
    pub fn set(&self) -> QualityCategorySet {
        match self {
            CategoryChoice::Adjectives => QualityCategorySet::adjectives(),
            CategoryChoice::Adjectives8 => QualityCategorySet::adjectives8(),
            CategoryChoice::Numeric => QualityCategorySet::numeric(),
            CategoryChoice::Custom(set) => set.clone(),
        }
    }

    fn key(&self) -> String {
        match self {
            CategoryChoice::Adjectives => "adjectives".into(),
            CategoryChoice::Adjectives8 => "adjectives8".into(),
            CategoryChoice::Numeric => "numeric".into(),
            CategoryChoice::Custom(set) => format!("custom{}", set.len()),
        }
    }

    fn describe(&self) -> String {
        match self {
            CategoryChoice::Numeric => "6 scores".to_string(),
            CategoryChoice::Custom(set) => format!("{} custom", set.len()),
            other => format!("{} adjectives", other.set().len()),
        }
    }
}

impl FromStr for CategoryChoice {
    type Err = Error;

    /// `adjectives`, `adjectives8`, `numeric`, or a comma-separated word
    /// list from worst to best.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adjectives" | "adjectives6" => Ok(CategoryChoice::Adjectives),
            "adjectives8" => Ok(CategoryChoice::Adjectives8),
            "numeric" | "scores" => Ok(CategoryChoice::Numeric),
            _ => {
                let words: Vec<&str> = s.split(',').map(str::trim).collect();
                Ok(CategoryChoice::Custom(QualityCategorySet::with_uniform_levels(words)?))
            }
        }
    }
}

/// One row of the ablation matrix. Each id may only move its own knob away
/// from the full configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub id: VariantId,
    pub backbone: Backbone,
    pub context_length: usize,
    pub categories: CategoryChoice,
}

impl AblationVariant {
    pub fn full() -> Self {
        AblationVariant {
            id: VariantId::Full,
            backbone: Backbone::VitB16,
            context_length: DEFAULT_CONTEXT_LENGTH,
            categories: CategoryChoice::Adjectives,
        }
    }

    pub fn no_regression() -> Self {
        AblationVariant {
            id: VariantId::NoRegression,
            ..Self::full()
        }
    }

    pub fn backbone_swap(backbone: Backbone) -> Self {
        AblationVariant {
            id: VariantId::BackboneSwap,
            backbone,
            ..Self::full()
        }
    }

    pub fn context_length(context_length: usize) -> Self {
        AblationVariant {
            id: VariantId::ContextLength,
            context_length,
            ..Self::full()
        }
    }

    pub fn category_length(categories: CategoryChoice) -> Self {
        AblationVariant {
            id: VariantId::CategoryLength,
            categories,
            ..Self::full()
        }
    }

    pub fn category_type(categories: CategoryChoice) -> Self {
        AblationVariant {
            id: VariantId::CategoryType,
            categories,
            ..Self::full()
        }
    }

    /// Labels an arbitrary setting with the variant whose knob it moves.
    /// Unlike the matrix rows, the result need not pass [`Self::validate`].
    pub fn for_settings(
        backbone: Backbone,
        context_length: usize,
        categories: CategoryChoice,
        readout: ReadoutKind,
    ) -> Self {
        let full = Self::full();
        let id = if readout == ReadoutKind::Similarity {
            VariantId::NoRegression
        } else if backbone != full.backbone {
            VariantId::BackboneSwap
        } else if context_length != full.context_length {
            VariantId::ContextLength
        } else if categories == CategoryChoice::Numeric {
            VariantId::CategoryType
        } else if categories != full.categories {
            VariantId::CategoryLength
        } else {
            VariantId::Full
        };
        AblationVariant {
            id,
            backbone,
            context_length,
            categories,
        }
    }

    /// Short unique name within the matrix, e.g. `context_8`.
    pub fn key(&self) -> String {
        match self.id {
            VariantId::Full | VariantId::NoRegression => self.id.name().to_string(),
            VariantId::BackboneSwap => {
                let slug: String = self
                    .backbone
                    .id()
                    .chars()
                    .filter(|c| c.is_ascii_alphanumeric())
                    .collect();
                format!("backbone_{}", slug.to_ascii_lowercase())
            }
            VariantId::ContextLength => format!("context_{}", self.context_length),
            VariantId::CategoryLength | VariantId::CategoryType => {
                format!("categories_{}", self.categories.key())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidVariantParams(m));
        if !CONTEXT_LENGTH_CHOICES.contains(&self.context_length) {
            return bad(format!(
                "context length {} not in {CONTEXT_LENGTH_CHOICES:?}",
                self.context_length
            ));
        }
        let full = Self::full();
        let moved_backbone = self.backbone != full.backbone;
        let moved_context = self.context_length != full.context_length;
        let moved_categories = self.categories != full.categories;
        let allowed = match self.id {
            VariantId::Full | VariantId::NoRegression => [false, false, false],
            VariantId::BackboneSwap => [true, false, false],
            VariantId::ContextLength => [false, true, false],
            VariantId::CategoryLength | VariantId::CategoryType => [false, false, true],
        };
        for (moved, ok, knob) in [
            (moved_backbone, allowed[0], "backbone"),
            (moved_context, allowed[1], "context length"),
            (moved_categories, allowed[2], "categories"),
        ] {
            if moved && !ok {
                return bad(format!("variant {} cannot change the {knob}", self.id));
            }
        }
        Ok(())
    }

    pub fn readout(&self) -> ReadoutKind {
        match self.id {
            VariantId::NoRegression => ReadoutKind::Similarity,
            _ => ReadoutKind::Regression,
        }
    }

    /// Human-readable setting, as shown in the ablation table.
    pub fn setting(&self) -> String {
        if self.id == VariantId::NoRegression {
            return "without regression".to_string();
        }
        format!(
            "{}, {}, {}",
            self.backbone,
            self.context_length,
            self.categories.describe()
        )
    }

    /// Published AGIQA-3K numbers for this configuration, if there are any.
    pub fn reference(&self) -> Option<Correlations> {
        let c = |plcc, srcc, krcc| Some(Correlations { plcc, srcc, krcc });
        match (self.id, self.backbone, self.context_length, &self.categories) {
            (VariantId::Full, ..) => c(0.8978, 0.8618, 0.6776),
            (VariantId::NoRegression, ..) => c(0.8183, 0.8201, 0.6693),
            (VariantId::BackboneSwap, Backbone::VitB32, ..) => c(0.8954, 0.8614, 0.6751),
            (VariantId::BackboneSwap, Backbone::Rn101, ..) => c(0.8837, 0.8544, 0.6665),
            (VariantId::ContextLength, _, 8, _) => c(0.8951, 0.8595, 0.6746),
            (VariantId::ContextLength, _, 32, _) => c(0.8962, 0.8605, 0.6751),
            (VariantId::CategoryLength, _, _, CategoryChoice::Adjectives8) => {
                c(0.8962, 0.8616, 0.6766)
            }
            (VariantId::CategoryType, _, _, CategoryChoice::Numeric) => c(0.8958, 0.8604, 0.6747),
            _ => None,
        }
    }

    /// Applies this variant on top of `base`, returning a runnable config.
    pub fn apply(&self, base: &RunConfig) -> Result<RunConfig> {
        self.validate()?;
        let mut cfg = base.clone();
        cfg.variant = self.clone();
        cfg.encoder = base.encoder.with_backbone(self.backbone);
        cfg.train.backbone = self.backbone;
        cfg.train.context_length = self.context_length;
        cfg.model.categories = self.categories.set();
        cfg.model.readout = self.readout();
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The published ablation matrix: the full model plus each single change.
pub fn default_matrix() -> Vec<AblationVariant> {
    vec![
        AblationVariant::full(),
        AblationVariant::no_regression(),
        AblationVariant::backbone_swap(Backbone::VitB32),
        AblationVariant::backbone_swap(Backbone::Rn101),
        AblationVariant::context_length(8),
        AblationVariant::context_length(32),
        AblationVariant::category_length(CategoryChoice::Adjectives8),
        AblationVariant::category_type(CategoryChoice::Numeric),
    ]
}

/// Everything that determines a run's outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: String,
    pub target_dim: String,
    pub variant: AblationVariant,
    pub encoder: EncoderSpec,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub plcc_mode: PlccMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "AGIQA-3K".to_string(),
            target_dim: crate::data::QUALITY.to_string(),
            variant: AblationVariant::full(),
            encoder: EncoderSpec::Stub(StubEncoderConfig::for_backbone(Backbone::VitB16)),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            split_ratio: 0.8,
            split_seed: 0,
            plcc_mode: PlccMode::Raw,
        }
    }
}

impl RunConfig {
    /// Checks the parts agree with each other. Ablation-specific limits are
    /// enforced by [`AblationVariant::apply`], not here.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.encoder.backbone() != self.train.backbone {
            return bad(format!(
                "encoder backbone {} differs from train backbone {}",
                self.encoder.backbone(),
                self.train.backbone
            ));
        }
        let v = &self.variant;
        if v.backbone != self.train.backbone
            || v.context_length != self.train.context_length
            || v.categories.set() != self.model.categories
            || v.readout() != self.model.readout
        {
            return bad(format!("variant {} disagrees with the train/model config", v.id));
        }
        if let EncoderSpec::Stub(stub) = &self.encoder {
            stub.validate()?;
        }
        if self.model.hidden_width == 0 {
            return Err(Error::InvalidConfig("hidden width must be positive".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the config's JSON form. Struct
    /// fields serialize in declaration order, so the digest is stable.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("run config always serializes");
        let digest = hex::encode(Sha256::digest(&json));
        digest[..16].to_string()
    }
}

/// Result of [`run_variant`]: reports for the last and best checkpoints.
#[derive(Clone, Debug)]
pub struct VariantRun {
    pub config: RunConfig,
    pub last: EvalReport,
    pub best: Option<EvalReport>,
    pub outcome: TrainOutcome,
}

/// Builds the variant's encoder from `base.encoder` and runs it.
pub fn run_variant(
    variant: &AblationVariant,
    manifest: &DatasetManifest,
    base: &RunConfig,
    timestamp: &str,
) -> Result<VariantRun> {
    let cfg = variant.apply(base)?;
    let enc = cfg.encoder.build()?;
    run_config(&cfg, manifest, &enc, timestamp)
}

/// Trains on the train split of `manifest` and evaluates on its test split.
pub fn run_config<E: DualEncoder>(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    enc: &E,
    timestamp: &str,
) -> Result<VariantRun> {
    cfg.validate()?;
    let train_set = FeatureSet::from_manifest(manifest, Split::Train, &cfg.target_dim, enc)?;
    let test_set = FeatureSet::from_manifest(manifest, Split::Test, &cfg.target_dim, enc)?;
    if test_set.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    run_on_features(cfg, &train_set, &test_set, enc, timestamp)
}

/// Same as [`run_config`] with features already extracted.
pub fn run_on_features<E: DualEncoder>(
    cfg: &RunConfig,
    train_set: &FeatureSet,
    test_set: &FeatureSet,
    enc: &E,
    timestamp: &str,
) -> Result<VariantRun> {
    let state = TrainState::init(&cfg.model, &cfg.train, enc)?;
    resume_on_features(cfg, state, train_set, test_set, enc, timestamp)
}

/// Continues `state` to `cfg.train.epochs`, then reports like
/// [`run_on_features`].
pub fn resume_on_features<E: DualEncoder>(
    cfg: &RunConfig,
    state: TrainState,
    train_set: &FeatureSet,
    test_set: &FeatureSet,
    enc: &E,
    timestamp: &str,
) -> Result<VariantRun> {
    let outcome = resume(state, train_set, Some(test_set), &cfg.train, enc)?;
    let hash = cfg.config_hash();
    let report = |state: &TrainState, kind| -> Result<EvalReport> {
        let eval = evaluate(&state.model, test_set, enc, cfg.plcc_mode)?;
        Ok(EvalReport::new(cfg, &hash, kind, test_set.len(), eval.correlations, timestamp))
    };
    let last = report(&outcome.last, CheckpointKind::Last)?;
    let best = match &outcome.best {
        Some(b) => Some(report(&b.state, CheckpointKind::Best)?),
        None => None,
    };
    Ok(VariantRun {
        config: cfg.clone(),
        last,
        best,
        outcome,
    })
}
