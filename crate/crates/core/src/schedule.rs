//! Per-epoch learning rate: constant warm-up, then cosine annealing from the
//! peak rate towards zero.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Learning rate for a whole epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    lr_at_fractional(epoch as f64, cfg)
}

/// The same closed form evaluated at a fractional epoch.
///
/// `epoch < warmup` gives `warmup_lr`; otherwise
/// `lr · ½ · (1 + cos(π · (epoch − warmup) / (epochs − warmup)))`.
pub fn lr_at_fractional(epoch: f64, cfg: &TrainConfig) -> Result<f64> {
    if !(epoch >= 0.0 && epoch < cfg.epochs as f64) {
        return Err(Error::EpochOutOfRange {
            epoch,
            epochs: cfg.epochs,
        });
    }
    let warmup = cfg.warmup_epochs as f64;
    if epoch < warmup {
        return Ok(cfg.warmup_lr);
    }
    let span = (cfg.epochs - cfg.warmup_epochs) as f64;
    let progress = (epoch - warmup) / span;
    Ok(cfg.lr * 0.5 * (1.0 + (PI * progress).cos()))
}
