//! Model recycling by weight averaging.
//!
//! The crate bundles a small trainable MLP, the fine-tuning procedures
//! (linear probing, vanilla fine-tuning, inter-training, fusing), every
//! weight-space combination used to recycle fine-tuned models (uniform and
//! greedy soups, WiSE, moving averages, model ratatouille), linear mode
//! connectivity and diversity analysis, and a synthetic leave-one-domain-out
//! benchmark.

pub mod analysis;
pub mod bench;
pub mod data;
pub mod error;
pub mod merge;
pub mod nn;
pub mod param_store;
pub mod seed;
pub mod trainer;

pub use data::{Dataset, TaskData};
pub use error::{Error, Result};
pub use param_store::{
    load_checkpoint, param_distance, save_checkpoint, validate_compatible, Checkpoint, Lineage, ParamBlock,
};
pub use trainer::{HyperParams, RunResult};
