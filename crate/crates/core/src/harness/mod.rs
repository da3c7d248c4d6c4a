//! Experiment plumbing: configuration, persistence, datasets, evaluation.

pub mod config;
pub mod container;
pub mod dataset;
pub mod experiment;
pub mod export;
pub mod setup;

pub use config::{ExperimentConfig, PhantomSpec, Scale, Variant};
pub use container::{load_container, save_container, Payload, PayloadKind};
pub use dataset::{build_dataset, build_pairs};
pub use experiment::{evaluate_variants, run_experiment, train_models, ExperimentReport, VariantReport};
pub use setup::{duplicate_mixed, Acquisition, Setup};
