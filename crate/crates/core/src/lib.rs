//! Background-aware class activation maps (B-CAM) for weakly supervised
//! object localization, with a plain CAM baseline, a synthetic confounded
//! dataset generator and the usual localization metrics.

pub mod data;
pub mod engine;
mod error;
mod kv;

pub use error::{Error, Result};
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;
