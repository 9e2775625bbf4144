//! Optimization loop: plain SGD over the context and head only, per-epoch
//! warm-up + cosine schedule, seeded per-epoch shuffling, periodic
//! evaluation on a held-out split.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{preprocess_image_sized, DatasetManifest, LabelScaler, Split};
use crate::encoder::{Backbone, DualEncoder};
use crate::error::{Error, Result};
use crate::metrics::{correlations, Correlations, PairedScores, PlccMode};
use crate::model::{ModelConfig, PromptModel};
use crate::prompt::DEFAULT_CONTEXT_LENGTH;
use crate::schedule::lr_at;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub context_length: usize,
    pub warmup_epochs: usize,
    pub warmup_lr: f64,
    pub seed: u64,
    pub backbone: Backbone,
    pub momentum: f64,
    /// Evaluate every this many epochs (and after the final one).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.002,
            epochs: 100,
            batch_size: 32,
            context_length: DEFAULT_CONTEXT_LENGTH,
            warmup_epochs: 1,
            warmup_lr: 1e-5,
            seed: 0,
            backbone: Backbone::VitB16,
            momentum: 0.0,
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.warmup_lr > 0.0 && self.warmup_lr.is_finite()) {
            return bad("warmup_lr must be positive");
        }
        // A zero-epoch run is a no-op and needs no schedule.
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return bad("warmup_epochs must be smaller than epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        Ok(())
    }
}

/// Image features and labels of one split, ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub ids: Vec<String>,
    /// `n × d` image features.
    pub features: Array2<f64>,
    /// Labels on the dataset's raw scale.
    pub labels: Vec<f64>,
    pub scaler: LabelScaler,
    targets: Vec<f64>,
}

impl FeatureSet {
    pub fn new(
        ids: Vec<String>,
        features: Array2<f64>,
        labels: Vec<f64>,
        scaler: LabelScaler,
    ) -> Result<Self> {
        if ids.len() != features.nrows() || labels.len() != features.nrows() {
            return Err(Error::LengthMismatch {
                left: features.nrows(),
                right: labels.len(),
            });
        }
        let targets = labels.iter().map(|&y| scaler.normalize(y)).collect();
        Ok(FeatureSet {
            ids,
            features,
            labels,
            scaler,
            targets,
        })
    }

    /// Preprocesses and encodes every image of `split`. The encoder is
    /// frozen and no augmentation is applied, so features are computed once.
    pub fn from_manifest<E: DualEncoder>(
        manifest: &DatasetManifest,
        split: Split,
        target_dim: &str,
        enc: &E,
    ) -> Result<Self> {
        if !manifest.target_dims.iter().any(|d| d == target_dim) {
            return Err(Error::UnknownTarget(target_dim.to_string()));
        }
        let records: Vec<_> = manifest.records_in(split).collect();
        let mut features = Array2::zeros((records.len(), enc.width()));
        let mut ids = Vec::with_capacity(records.len());
        let mut labels = Vec::with_capacity(records.len());
        for (mut row, rec) in features.rows_mut().into_iter().zip(&records) {
            let path = manifest.resolve(rec);
            let img = preprocess_image_sized(&path, enc.image_size()).map_err(|e| {
                Error::UnreadableImage {
                    path: path.clone(),
                    reason: e.to_string(),
                }
            })?;
            row.assign(&enc.encode_image(&img)?);
            ids.push(rec.image.clone());
            labels.push(rec.target(target_dim)?);
        }
        Self::new(ids, features, labels, manifest.scaler()?)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Labels mapped to [0, 1].
    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub model: PromptModel,
    /// Momentum buffer, present only when momentum is enabled.
    pub velocity: Option<Vec<f64>>,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    /// Seeds the run RNG and draws the initial context and head from it.
    pub fn init<E: DualEncoder>(model: &ModelConfig, cfg: &TrainConfig, enc: &E) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = PromptModel::init(model, cfg.context_length, enc.width(), &mut rng)?;
        let velocity = (cfg.momentum > 0.0).then(|| vec![0.0; model.parameter_count()]);
        Ok(TrainState {
            epoch: 0,
            step: 0,
            model,
            velocity,
            rng,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Correlations>,
}

/// Writes one JSON object per line.
pub fn write_log(history: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let unwritable = |source| Error::UnwritablePath {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(unwritable)?;
    for entry in history {
        let line = serde_json::to_string(entry)?;
        writeln!(file, "{line}").map_err(unwritable)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Predictions on the raw label scale.
    pub predictions: Vec<f64>,
    pub correlations: Correlations,
}

/// Predicts every sample, maps predictions back to the label scale and
/// correlates them with the raw labels.
pub fn evaluate<E: DualEncoder>(
    model: &PromptModel,
    data: &FeatureSet,
    enc: &E,
    mode: PlccMode,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let predictions: Vec<f64> = model
        .predict_from_features(data.features.view(), enc)?
        .into_iter()
        .map(|s| data.scaler.denormalize(s))
        .collect();
    let scores = PairedScores::new(predictions.clone(), data.labels.clone())?;
    Ok(Evaluation {
        correlations: correlations(&scores, mode)?,
        predictions,
    })
}

/// Drives epochs over a [`TrainState`] with a fixed config and encoder.
pub struct Trainer<'a, E: DualEncoder> {
    cfg: &'a TrainConfig,
    enc: &'a E,
    fingerprint: String,
    plcc_mode: PlccMode,
}

impl<'a, E: DualEncoder> Trainer<'a, E> {
    pub fn new(cfg: &'a TrainConfig, enc: &'a E) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            cfg,
            enc,
            fingerprint: enc.fingerprint(),
            plcc_mode: PlccMode::Raw,
        })
    }

    pub fn with_plcc_mode(mut self, mode: PlccMode) -> Self {
        self.plcc_mode = mode;
        self
    }

    /// One optimization step on the given sample indices.
    fn step(&self, state: &mut TrainState, data: &FeatureSet, batch: &[usize], lr: f64) -> Result<f64> {
        let feats = data.features.select(Axis(0), batch);
        let targets: Vec<f64> = batch.iter().map(|&i| data.targets()[i]).collect();
        let non_finite = || Error::NonFiniteLoss {
            step: state.step,
            lr,
            batch_ids: batch.iter().map(|&i| data.ids[i].clone()).collect(),
        };
        let (loss, grad) = match state.model.loss_and_gradient(feats.view(), &targets, self.enc) {
            Ok(v) => v,
            Err(Error::NonFiniteScore | Error::NonFiniteFeature(_)) => return Err(non_finite()),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(non_finite());
        }
        let grad = grad.flatten();
        let mut params = state.model.flat_parameters();
        match state.velocity.as_mut() {
            Some(v) => {
                for ((p, g), vel) in params.iter_mut().zip(&grad).zip(v.iter_mut()) {
                    *vel = self.cfg.momentum * *vel + g;
                    *p -= lr * *vel;
                }
            }
            None => {
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
        }
        state.model.set_flat_parameters(&params)?;
        state.step += 1;
        Ok(loss)
    }

    /// Trains from `state.epoch` up to (excluding) `until_epoch`, calling
    /// `on_epoch` after each completed epoch.
    pub fn run(
        &self,
        state: &mut TrainState,
        train: &FeatureSet,
        eval: Option<&FeatureSet>,
        until_epoch: usize,
        mut on_epoch: impl FnMut(&EpochLog, &TrainState),
    ) -> Result<()> {
        if train.is_empty() {
            return Err(Error::EmptySplit("train"));
        }
        let until = until_epoch.min(self.cfg.epochs);
        let mut order: Vec<usize> = (0..train.len()).collect();
        while state.epoch < until {
            let epoch = state.epoch;
            let lr = lr_at(epoch, self.cfg)?;
            order.sort_unstable();
            order.shuffle(&mut state.rng);
            let mut total = 0.0;
            for batch in order.chunks(self.cfg.batch_size) {
                total += self.step(state, train, batch, lr)? * batch.len() as f64;
            }
            state.epoch += 1;
            if self.enc.fingerprint() != self.fingerprint {
                return Err(Error::EncoderMutated);
            }
            let due = state.epoch % self.cfg.eval_every == 0 || state.epoch == self.cfg.epochs;
            let metrics = match eval {
                Some(data) if due => {
                    Some(evaluate(&state.model, data, self.enc, self.plcc_mode)?.correlations)
                }
                _ => None,
            };
            let log = EpochLog {
                epoch,
                lr,
                loss: total / train.len() as f64,
                metrics,
            };
            log::debug!("epoch {epoch}: lr {lr:.3e} loss {:.6}", log.loss);
            on_epoch(&log, state);
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub srcc: f64,
    pub state: TrainState,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: TrainState,
    /// Highest test SRCC seen at an evaluation point.
    pub best: Option<BestSnapshot>,
    pub history: Vec<EpochLog>,
}

/// Full run from a fresh initialization.
pub fn train<E: DualEncoder>(
    train: &FeatureSet,
    test: Option<&FeatureSet>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    enc: &E,
) -> Result<TrainOutcome> {
    let state = TrainState::init(model, cfg, enc)?;
    resume(state, train, test, cfg, enc)
}

/// Continues `state` until `cfg.epochs`.
pub fn resume<E: DualEncoder>(
    mut state: TrainState,
    train: &FeatureSet,
    test: Option<&FeatureSet>,
    cfg: &TrainConfig,
    enc: &E,
) -> Result<TrainOutcome> {
    let trainer = Trainer::new(cfg, enc)?;
    let mut history = Vec::new();
    let mut best: Option<BestSnapshot> = None;
    trainer.run(&mut state, train, test, cfg.epochs, |log, st| {
        if let Some(m) = &log.metrics {
            if best.as_ref().is_none_or(|b| m.srcc > b.srcc) {
                best = Some(BestSnapshot {
                    epoch: log.epoch,
                    srcc: m.srcc,
                    state: st.clone(),
                });
            }
        }
        history.push(log.clone());
    })?;
    Ok(TrainOutcome {
        last: state,
        best,
        history,
    })
}
