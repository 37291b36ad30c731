//! Group distributionally robust optimization for small classifiers.
//!
//! The crate provides grouped datasets, convex and shallow models with
//! analytic gradients, the ERM / worst-group / adjusted / mixture risks, an
//! online group DRO trainer alongside ERM and upweighting baselines, a
//! harness that checks the convex-case theory numerically, a synthetic
//! spurious-correlation data generator, and a grid benchmark runner.

pub mod analysis;
pub mod benchmark;
pub mod data;
pub mod datagen;
pub mod error;
pub mod models;
pub mod objectives;
pub mod optimizer;
pub mod theory;

pub use data::{Example, GroupWeights, GroupedDataset};
pub use error::{Error, Result};
pub use models::{Arch, ArchSpec, ModelParams};
