//! Forward inference with analog weight-noise injection.
//!
//! Trained models are perturbed with zero-mean Gaussian noise whose standard
//! deviation is a percentage of each layer group's own weight spread, and
//! classification accuracy is measured layer by layer, over prefixes of
//! layers, or with every layer perturbed at once.

pub mod cli;
pub mod experiment;
pub mod fixtures;
pub mod format;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod report;
pub mod tensor;

pub use experiment::{Design, ExperimentConfig, ExperimentError, ExperimentResult, ResultRow, SummaryRow};
pub use format::{decode_model, encode_model, load_model, save_model, FormatError};
pub use metrics::{
    average_normalized_accuracy, evaluate_accuracy, load_dataset, normalized_accuracy, save_dataset, Dataset,
    MetricsError,
};
pub use model::{GroupKind, LayerGroup, LayerKind, ModelError, ModelGraph, Node, Param};
pub use noise::{
    expand_plan, layer_sigma, perturb_group, restore, snapshot, snr_of, InjectionPlan, LayerSigma, NoiseError,
    NoiseSpec, ParamSnapshot,
};
pub use tensor::{Tensor, TensorError};
