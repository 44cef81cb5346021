//! Test-set accuracy and the normalized degradation metrics.
//!
//! `A_i = a_i / a_o` compares the trial-averaged noisy accuracy `a_i` with
//! the clean baseline `a_o`; `A_avr` is the mean of `A_i` over every layer
//! group of a model.

use std::path::Path;

use thiserror::Error;

use crate::format::{check_magic, f32s_from_le, read_u64, write_atomic, FormatError};
use crate::kernels;
use crate::model::{ModelError, ModelGraph};
use crate::tensor::{checked_numel, Tensor};

pub const DATASET_MAGIC: &[u8; 8] = b"ANBDATA1";
const DATASET_HEADER_LEN: usize = 8 + 5 * 8;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("baseline accuracy is zero; normalized accuracy is undefined")]
    UndefinedBaseline,
    #[error("incomplete sweep: no score for layer group(s) {missing:?} of {expected}")]
    IncompleteSweep { missing: Vec<usize>, expected: usize },
    #[error("layer group {0} scored more than once or outside the model")]
    UnexpectedLayer(usize),
    #[error("dataset `{dataset}` has per-sample shape {actual:?}, model `{model}` expects {expected:?}")]
    ShapeMismatch {
        dataset: String,
        model: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("label {label} at row {row} is outside the model's {class_count} classes")]
    LabelOutOfRange {
        row: usize,
        label: u32,
        class_count: usize,
    },
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Labelled images, `M×C×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub images: Tensor,
    pub labels: Vec<u32>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        images: Tensor,
        labels: Vec<u32>,
        class_count: usize,
    ) -> Result<Self, FormatError> {
        let bad = |message: String| FormatError::Manifest { offset: 8, message };
        if images.rank() != 4 {
            return Err(bad(format!("images must be M×C×H×W, got {:?}", images.shape())));
        }
        if labels.len() != images.shape()[0] {
            return Err(bad(format!("{} labels for {} images", labels.len(), images.shape()[0])));
        }
        if class_count == 0 {
            return Err(bad("class count must be positive".into()));
        }
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= class_count) {
            return Err(bad(format!("label {l} at row {row} outside {class_count} classes")));
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }
}

/// Serialize to the `.and` layout: magic, five `u64` header fields
/// (M, C, H, W, class count), the images as `f32`, then `u32` labels.
pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(DATASET_HEADER_LEN + 4 * (ds.images.len() + ds.labels.len()));
    out.extend_from_slice(DATASET_MAGIC);
    for d in ds.images.shape() {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(ds.class_count as u64).to_le_bytes());
    out.extend_from_slice(&ds.images.to_le_bytes());
    for l in &ds.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode_dataset(name: impl Into<String>, bytes: &[u8]) -> Result<Dataset, FormatError> {
    check_magic(bytes, DATASET_MAGIC)?;
    let mut header = [0u64; 5];
    for (k, h) in header.iter_mut().enumerate() {
        *h = read_u64(bytes, 8 + 8 * k)?;
    }
    let too_big = |what: &str| FormatError::Manifest {
        offset: 8,
        message: format!("{what} does not fit in memory: header {header:?}"),
    };
    let dims: Vec<usize> = header[..4]
        .iter()
        .map(|&d| usize::try_from(d))
        .collect::<Result<_, _>>()
        .map_err(|_| too_big("shape"))?;
    if dims.contains(&0) || header[4] == 0 {
        return Err(FormatError::Manifest {
            offset: 8,
            message: format!("header fields must be positive, got {header:?}"),
        });
    }
    let class_count = usize::try_from(header[4]).map_err(|_| too_big("class count"))?;
    let numel = checked_numel(&dims).ok_or_else(|| too_big("image count"))?;
    let m = dims[0];
    let expected = numel
        .checked_mul(4)
        .and_then(|b| b.checked_add(m.checked_mul(4)?))
        .ok_or_else(|| too_big("payload"))?;
    let body = &bytes[DATASET_HEADER_LEN..];
    if body.len() < expected {
        return Err(FormatError::TruncatedBlob {
            offset: DATASET_HEADER_LEN,
            expected: expected as u64,
            actual: body.len() as u64,
        });
    }
    if body.len() > expected {
        return Err(FormatError::TrailingBytes {
            offset: DATASET_HEADER_LEN + expected,
            extra: body.len() - expected,
        });
    }
    let images = Tensor::new(dims, f32s_from_le(&body[..numel * 4])).map_err(|e| FormatError::Manifest {
        offset: 8,
        message: e.to_string(),
    })?;
    let labels = body[numel * 4..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Dataset::new(name, images, labels, class_count)
}

/// Load a `.and` file; the dataset is named after the file stem.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, FormatError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    decode_dataset(name, &bytes)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), FormatError> {
    write_atomic(path.as_ref(), &encode_dataset(ds))
}

/// Number of rows whose top-1 prediction equals the label.
pub fn count_correct(model: &ModelGraph, dataset: &Dataset, batch_size: usize) -> Result<usize, MetricsError> {
    if batch_size == 0 {
        return Err(MetricsError::ZeroBatch);
    }
    if dataset.sample_shape() != model.input_shape() {
        return Err(MetricsError::ShapeMismatch {
            dataset: dataset.name.clone(),
            model: model.name().to_string(),
            expected: model.input_shape().to_vec(),
            actual: dataset.sample_shape().to_vec(),
        });
    }
    if let Some((row, &label)) = dataset
        .labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= model.class_count())
    {
        return Err(MetricsError::LabelOutOfRange {
            row,
            label,
            class_count: model.class_count(),
        });
    }
    let mut correct = 0usize;
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + batch_size).min(dataset.len());
        let batch = dataset.images.slice_batch(start, end).expect("in range");
        let scores = model.forward(&batch)?;
        let predicted = kernels::argmax_row(&scores).map_err(|source| ModelError::Kernel {
            node: model.nodes().len() - 1,
            kind: "argmax",
            source,
        })?;
        correct += predicted
            .iter()
            .zip(&dataset.labels[start..end])
            .filter(|(p, l)| **p == **l as usize)
            .count();
        start = end;
    }
    Ok(correct)
}

/// Top-1 accuracy in `[0, 1]`.
pub fn evaluate_accuracy(model: &ModelGraph, dataset: &Dataset, batch_size: usize) -> Result<f64, MetricsError> {
    Ok(count_correct(model, dataset, batch_size)? as f64 / dataset.len() as f64)
}

pub fn normalized_accuracy(noisy: f64, baseline: f64) -> Result<f64, MetricsError> {
    if baseline == 0.0 {
        return Err(MetricsError::UndefinedBaseline);
    }
    Ok(noisy / baseline)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean normalized accuracy over all `layer_count` groups. Every group
/// `1..=layer_count` must be scored exactly once.
pub fn average_normalized_accuracy(scores: &[(usize, f64)], layer_count: usize) -> Result<f64, MetricsError> {
    let mut seen = vec![false; layer_count];
    for &(layer, _) in scores {
        match seen.get_mut(layer.wrapping_sub(1)) {
            Some(slot) if !*slot => *slot = true,
            _ => return Err(MetricsError::UnexpectedLayer(layer)),
        }
    }
    let missing: Vec<usize> = (1..=layer_count).filter(|&l| !seen[l - 1]).collect();
    if !missing.is_empty() || layer_count == 0 {
        return Err(MetricsError::IncompleteSweep {
            missing,
            expected: layer_count,
        });
    }
    let mut ordered = scores.to_vec();
    ordered.sort_by_key(|&(l, _)| l);
    Ok(mean(&ordered.iter().map(|&(_, a)| a).collect::<Vec<_>>()))
}

/// Accuracy of one (plan instance, power) cell over all trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRecord {
    pub layer: usize,
    pub power_percent: f64,
    pub baseline: f64,
    pub trial_accuracies: Vec<f64>,
}

impl AccuracyRecord {
    /// Trials are averaged before normalizing.
    pub fn normalized(&self) -> Result<f64, MetricsError> {
        normalized_accuracy(mean(&self.trial_accuracies), self.baseline)
    }

    pub fn per_trial_normalized(&self) -> Result<Vec<f64>, MetricsError> {
        self.trial_accuracies
            .iter()
            .map(|&a| normalized_accuracy(a, self.baseline))
            .collect()
    }
}
