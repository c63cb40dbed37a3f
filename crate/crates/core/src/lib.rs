//! Cost-aware email importance labeling.

pub mod backend;
pub mod cascade;
pub mod classifier;
pub mod config;
pub mod dataset;
pub mod drift;
pub mod error;
pub mod hashing;
pub mod labeling;
pub mod metrics;
pub mod pricing;
pub mod profiler;
pub mod provisioner;
pub mod schema;
pub mod world;

pub use error::{Error, Result};
