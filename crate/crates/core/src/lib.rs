// SPDX-License-Identifier: Apache-2.0

//! Federated learning simulator with label-masking distillation.

mod clock;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub use labels::{Label, LabelSet};
