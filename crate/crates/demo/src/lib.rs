//! wasm-bindgen bindings for the static page in `www/`. Each export wraps a
//! plain function so the logic is testable natively.

use std::cell::OnceCell;

use agiqa_core::data::preprocess_bytes;
use agiqa_core::encoder::{Backbone, DualEncoder, StubEncoder};
use agiqa_core::metrics::{correlations, PairedScores, PlccMode};
use agiqa_core::schedule::lr_at;
use agiqa_core::train::TrainConfig;
use agiqa_core::zero_shot::{zero_shot_quality, AntonymPromptPair};
use wasm_bindgen::prelude::*;

/// Learning rate for each epoch of a warmup-then-cosine schedule.
pub fn schedule_curve(lr: f64, epochs: usize, warmup_epochs: usize, warmup_lr: f64) -> Result<Vec<f64>, String> {
    let cfg = TrainConfig {
        lr,
        epochs,
        warmup_epochs,
        warmup_lr,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    (0..epochs).map(|e| lr_at(e, &cfg).map_err(|e| e.to_string())).collect()
}

/// PLCC / SRCC / KRCC of a pasted two-column CSV, as a JSON object.
pub fn correlation_json(csv: &str, logistic: bool) -> Result<String, String> {
    let scores = PairedScores::from_csv(csv.as_bytes()).map_err(|e| e.to_string())?;
    let mode = if logistic { PlccMode::Logistic } else { PlccMode::Raw };
    let c = correlations(&scores, mode).map_err(|e| e.to_string())?;
    Ok(serde_json::json!({ "n": scores.len(), "plcc": c.plcc, "srcc": c.srcc, "krcc": c.krcc }).to_string())
}

thread_local! {
    static ENCODER: OnceCell<StubEncoder> = const { OnceCell::new() };
}

/// Antonym-prompt score of an encoded PNG or JPEG under the stub encoder.
pub fn zero_shot_bytes(bytes: &[u8], positive: &str, negative: &str) -> Result<f64, String> {
    let pair = AntonymPromptPair::new(positive, negative).map_err(|e| e.to_string())?;
    ENCODER.with(|cell| {
        let enc = match cell.get() {
            Some(enc) => enc,
            None => {
                let enc = StubEncoder::for_backbone(Backbone::VitB16).map_err(|e| e.to_string())?;
                cell.get_or_init(|| enc)
            }
        };
        let image = preprocess_bytes(bytes, enc.image_size()).map_err(|e| e.to_string())?;
        zero_shot_quality(&image, &pair, enc).map_err(|e| e.to_string())
    })
}

#[wasm_bindgen(js_name = scheduleCurve)]
pub fn schedule_curve_js(lr: f64, epochs: usize, warmup_epochs: usize, warmup_lr: f64) -> Result<Vec<f64>, JsError> {
    schedule_curve(lr, epochs, warmup_epochs, warmup_lr).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = correlationJson)]
pub fn correlation_json_js(csv: &str, logistic: bool) -> Result<String, JsError> {
    correlation_json(csv, logistic).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = zeroShotScore)]
pub fn zero_shot_js(bytes: &[u8], positive: &str, negative: &str) -> Result<f64, JsError> {
    zero_shot_bytes(bytes, positive, negative).map_err(|e| JsError::new(&e))
}
