//! Additive Gaussian weight noise scaled to each layer group's own spread.
//!
//! For a group with population standard deviation `sigma_w` and a noise
//! power of `p` percent, every parameter receives an independent draw from
//! `Normal(0, (p/100 * sigma_w)^2)`. The equivalent signal-to-noise ratio is
//! `sigma_w / sigma_noise = 100 / p`.
//!
//! # Noise stream
//!
//! Draws come from ChaCha20 keyed by `(seed, trial, group index)`: the
//! 32-byte key is `seed`, `trial` and `group` as little-endian `u64`s
//! followed by the ASCII tag `ANBNOISE`. Each pair of consecutive `u64`
//! outputs becomes two standard normals through the Box-Muller transform
//! (computed in `f64`). Because the stream is keyed rather than sequential,
//! a group's realization for a given trial is the same no matter which
//! plan, ordering or worker thread applies it.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::model::{LayerGroup, ModelError, ModelGraph};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("noise power 0% means no noise; SNR is undefined")]
    NoNoise,
    #[error("noise power {0}% is outside [0, 100]")]
    InvalidPower(f64),
    #[error("trial count must be positive")]
    NoTrials,
    #[error("trial {trial} is out of range for {trials} trials")]
    TrialOutOfRange { trial: usize, trials: usize },
    #[error("{plan} is out of range for a model with {count} layer groups")]
    PlanOutOfRange { plan: InjectionPlan, count: usize },
    #[error("layer group {0} has no elements")]
    EmptyGroup(usize),
    #[error("snapshot does not match model: {0}")]
    SnapshotMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Noise power, seed and trial count. Fully determines an injection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    power_percent: f64,
    seed: u64,
    trials: usize,
}

impl NoiseSpec {
    pub fn new(power_percent: f64, seed: u64, trials: usize) -> Result<Self, NoiseError> {
        if !(0.0..=100.0).contains(&power_percent) {
            return Err(NoiseError::InvalidPower(power_percent));
        }
        if trials == 0 {
            return Err(NoiseError::NoTrials);
        }
        Ok(Self {
            power_percent,
            seed,
            trials,
        })
    }

    pub fn power_percent(&self) -> f64 {
        self.power_percent
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn snr(&self) -> Result<f64, NoiseError> {
        snr_of(self.power_percent)
    }
}

/// Signal-to-noise ratio `100 / p` for a noise power of `p` percent.
pub fn snr_of(power_percent: f64) -> Result<f64, NoiseError> {
    if power_percent == 0.0 {
        return Err(NoiseError::NoNoise);
    }
    if !(power_percent > 0.0 && power_percent <= 100.0) {
        return Err(NoiseError::InvalidPower(power_percent));
    }
    Ok(100.0 / power_percent)
}

/// Render a positive value to three significant figures, dropping
/// trailing zeros: 100 → "100", 2.5 → "2.5", 5/3 → "1.67".
pub fn format_sig3(value: f64) -> String {
    if value == 0.0 || !value.is_finite() {
        return format!("{value}");
    }
    let magnitude = value.abs().log10().floor() as i32;
    let decimals = 2 - magnitude;
    let s = if decimals > 0 {
        format!("{:.*}", decimals as usize, value)
    } else {
        let unit = 10f64.powi(-decimals);
        format!("{}", (value / unit).round() * unit)
    };
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionPlan {
    /// One group, by 1-based index.
    Single(usize),
    /// Groups `1..=L`.
    Prefix(usize),
    All,
}

impl std::fmt::Display for InjectionPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InjectionPlan::Single(i) => write!(f, "Single({i})"),
            InjectionPlan::Prefix(l) => write!(f, "Prefix({l})"),
            InjectionPlan::All => write!(f, "All"),
        }
    }
}

/// 1-based group indices covered by `plan`.
pub fn expand_plan(plan: InjectionPlan, model: &ModelGraph) -> Result<Vec<usize>, NoiseError> {
    let count = model.group_count();
    match plan {
        InjectionPlan::Single(i) if (1..=count).contains(&i) => Ok(vec![i]),
        InjectionPlan::Prefix(l) if (1..=count).contains(&l) => Ok((1..=l).collect()),
        InjectionPlan::All if count > 0 => Ok((1..=count).collect()),
        _ => Err(NoiseError::PlanOutOfRange { plan, count }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSigma {
    pub group: usize,
    pub sigma_w: f64,
}

/// Population standard deviation over every element of the group.
pub fn layer_sigma(model: &ModelGraph, group: &LayerGroup) -> Result<LayerSigma, NoiseError> {
    let tensors = model.get_params(group)?;
    let sigma_w = population_std(tensors.iter().flat_map(|t| t.data().iter().copied()))
        .ok_or(NoiseError::EmptyGroup(group.index))?;
    Ok(LayerSigma {
        group: group.index,
        sigma_w,
    })
}

/// Single-pass (Welford) population standard deviation in `f64`.
fn population_std(values: impl Iterator<Item = f32>) -> Option<f64> {
    let (mut n, mut mean, mut m2) = (0u64, 0.0f64, 0.0f64);
    for v in values {
        let x = f64::from(v);
        n += 1;
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    (n > 0).then(|| (m2 / n as f64).max(0.0).sqrt())
}

/// Deterministic standard-normal stream for one (seed, trial, group).
pub struct NoiseStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NoiseStream {
    const TAG: &'static [u8; 8] = b"ANBNOISE";

    pub fn new(seed: u64, trial: u64, group: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&trial.to_le_bytes());
        key[16..24].copy_from_slice(&group.to_le_bytes());
        key[24..].copy_from_slice(Self::TAG);
        Self {
            rng: ChaCha20Rng::from_seed(key),
            spare: None,
        }
    }

    pub fn next_standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        // u1 in (0, 1] keeps the log finite.
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * SCALE;
        let u2 = (self.rng.next_u64() >> 11) as f64 * SCALE;
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

/// Add one noise realization to every element of `group`.
///
/// Returns the clean `sigma_w` the noise was scaled by.
pub fn perturb_group(
    model: &mut ModelGraph,
    group: &LayerGroup,
    spec: &NoiseSpec,
    trial: usize,
) -> Result<LayerSigma, NoiseError> {
    let sigma = layer_sigma(model, group)?;
    apply_noise(model, group, spec, trial, sigma)?;
    Ok(sigma)
}

fn apply_noise(
    model: &mut ModelGraph,
    group: &LayerGroup,
    spec: &NoiseSpec,
    trial: usize,
    sigma: LayerSigma,
) -> Result<(), NoiseError> {
    if trial >= spec.trials {
        return Err(NoiseError::TrialOutOfRange {
            trial,
            trials: spec.trials,
        });
    }
    let std = spec.power_percent / 100.0 * sigma.sigma_w;
    if std == 0.0 {
        return Ok(());
    }
    let mut stream = NoiseStream::new(spec.seed, trial as u64, group.index as u64);
    for tensor in model.group_tensors_mut(group)? {
        for w in tensor.data_mut() {
            *w += (std * stream.next_standard_normal()) as f32;
        }
    }
    Ok(())
}

/// Perturb every group covered by `plan`. Each group's `sigma_w` is taken
/// from its clean values before any group is touched.
pub fn inject(
    model: &mut ModelGraph,
    plan: InjectionPlan,
    spec: &NoiseSpec,
    trial: usize,
) -> Result<Vec<LayerSigma>, NoiseError> {
    let groups = expand_plan(plan, model)?;
    let all = model.layer_groups();
    let targets: Vec<&LayerGroup> = groups.iter().map(|&i| &all[i - 1]).collect();
    let sigmas = targets
        .iter()
        .map(|g| layer_sigma(model, g))
        .collect::<Result<Vec<_>, _>>()?;
    for (g, s) in targets.iter().zip(&sigmas) {
        apply_noise(model, g, spec, trial, *s)?;
    }
    Ok(sigmas)
}

/// Bit-exact copy of every parameter of a model.
#[derive(Debug, Clone)]
pub struct ParamSnapshot {
    layout: Vec<(usize, String, Vec<usize>)>,
    values: Vec<Tensor>,
}

impl PartialEq for ParamSnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.data().iter().map(|v| v.to_bits()).eq(b.data().iter().map(|v| v.to_bits())))
    }
}

pub fn snapshot(model: &ModelGraph) -> ParamSnapshot {
    let mut layout = Vec::new();
    let mut values = Vec::new();
    for (i, node) in model.nodes().iter().enumerate() {
        for p in &node.params {
            layout.push((i, p.name.clone(), p.tensor.shape().to_vec()));
            values.push(p.tensor.clone());
        }
    }
    ParamSnapshot { layout, values }
}

pub fn restore(model: &mut ModelGraph, snap: &ParamSnapshot) -> Result<(), NoiseError> {
    let current = snapshot_layout(model);
    if current != snap.layout {
        return Err(NoiseError::SnapshotMismatch(format!(
            "model `{}` has {} parameter tensors with a different layout than the snapshot's {}",
            model.name(),
            current.len(),
            snap.layout.len()
        )));
    }
    let mut values = snap.values.iter();
    for group in model.layer_groups() {
        let n = group.members.len();
        let chunk: Vec<Tensor> = values.by_ref().take(n).cloned().collect();
        model.set_params(&group, chunk)?;
    }
    Ok(())
}

fn snapshot_layout(model: &ModelGraph) -> Vec<(usize, String, Vec<usize>)> {
    model
        .nodes()
        .iter()
        .enumerate()
        .flat_map(|(i, n)| n.params.iter().map(move |p| (i, p.name.clone(), p.tensor.shape().to_vec())))
        .collect()
}
