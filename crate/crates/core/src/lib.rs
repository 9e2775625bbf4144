//! Quality assessment of AI-generated images with a prompt-tuned regressor
//! on top of a frozen vision-language dual encoder.
//!
//! Pipeline: [`data`] loads manifests and preprocesses images, [`encoder`]
//! provides the frozen backbone, [`prompt`] and [`model`] build the
//! trainable context + regression head, [`train`] runs the optimization
//! schedule, and [`metrics`] scores predictions against subjective labels.
//! [`experiment`], [`checkpoint`] and [`report`] wire these into ablation
//! runs with persisted state and rendered results.

pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod head;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod report;
pub mod schedule;
pub mod train;
pub mod zero_shot;

pub use error::{Error, Result};
