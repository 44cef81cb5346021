//! Experiment designs, the sweep runner and result files.
//!
//! A run measures the clean baseline once per model, then evaluates every
//! (plan instance, noise power, trial) cell on a private model copy:
//! snapshot, inject, evaluate, restore. Cells run on a worker pool; rows are
//! sorted canonically afterwards so the output does not depend on scheduling.
//!
//! Output directory layout:
//!
//! ```text
//! results.csv    model,design,plan,layer,power_percent,trial,accuracy,normalized_accuracy
//! summary.csv    model,power_percent,a_avr,trials,seed,version
//! metadata.json  run settings, completion flag and creation time
//! INCOMPLETE     present only when the run stopped early
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{load_model, write_atomic, FormatError};
use crate::metrics::{self, load_dataset, Dataset, MetricsError};
use crate::model::ModelGraph;
use crate::noise::{self, InjectionPlan, NoiseError, NoiseSpec};

pub const RESULTS_VERSION: u32 = 1;
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

pub const RESULT_COLUMNS: [&str; 8] = [
    "model",
    "design",
    "plan",
    "layer",
    "power_percent",
    "trial",
    "accuracy",
    "normalized_accuracy",
];
pub const SUMMARY_COLUMNS: [&str; 6] = ["model", "power_percent", "a_avr", "trials", "seed", "version"];

pub const DEFAULT_TRIALS: usize = 5;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const ALL_LAYERS_POWERS: [f64; 5] = [0.0, 1.0, 2.0, 5.0, 10.0];
pub const SWEEP_POWERS: [f64; 6] = [1.0, 10.0, 20.0, 40.0, 60.0, 100.0];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file} line {line}: {message}")]
    Schema {
        file: String,
        line: u64,
        message: String,
    },
    #[error("results format version {found} is not supported (reader version {expected})")]
    Version { found: String, expected: u32 },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("result is incomplete; refusing to {0}")]
    Incomplete(&'static str),
    #[error("run stopped after {} rows: {source}", partial.rows.len())]
    Interrupted {
        partial: Box<ExperimentResult>,
        #[source]
        source: Box<ExperimentError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    AllLayers,
    SingleLayerSweep,
    PrefixSweep,
    ModelComparison,
}

impl Design {
    pub fn as_str(&self) -> &'static str {
        match self {
            Design::AllLayers => "all_layers",
            Design::SingleLayerSweep => "single_layer_sweep",
            Design::PrefixSweep => "prefix_sweep",
            Design::ModelComparison => "model_comparison",
        }
    }

    pub fn default_powers(&self) -> Vec<f64> {
        match self {
            Design::AllLayers => ALL_LAYERS_POWERS.to_vec(),
            _ => SWEEP_POWERS.to_vec(),
        }
    }

    /// Plan instances for a model with `groups` layer groups.
    pub fn plans(&self, groups: usize) -> Vec<InjectionPlan> {
        match self {
            Design::AllLayers => vec![InjectionPlan::All],
            Design::SingleLayerSweep | Design::ModelComparison => (1..=groups).map(InjectionPlan::Single).collect(),
            Design::PrefixSweep => (1..=groups).map(InjectionPlan::Prefix).collect(),
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Design {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Design::AllLayers,
            Design::SingleLayerSweep,
            Design::PrefixSweep,
            Design::ModelComparison,
        ]
        .into_iter()
        .find(|d| d.as_str() == s)
        .ok_or_else(|| ExperimentError::Config(format!("unknown design `{s}`")))
    }
}

/// What a result row measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlanTag {
    Baseline,
    All,
    Single,
    Prefix,
}

impl PlanTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlanTag::Baseline => "baseline",
            PlanTag::All => "all",
            PlanTag::Single => "single",
            PlanTag::Prefix => "prefix",
        }
    }

    fn of(plan: InjectionPlan, groups: usize) -> (PlanTag, usize) {
        match plan {
            InjectionPlan::Single(i) => (PlanTag::Single, i),
            InjectionPlan::Prefix(l) => (PlanTag::Prefix, l),
            InjectionPlan::All => (PlanTag::All, groups),
        }
    }
}

impl FromStr for PlanTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(PlanTag::Baseline),
            "all" => Ok(PlanTag::All),
            "single" => Ok(PlanTag::Single),
            "prefix" => Ok(PlanTag::Prefix),
            _ => Err(format!("unknown plan `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub models: Vec<PathBuf>,
    pub dataset: PathBuf,
    pub design: Design,
    pub powers: Vec<f64>,
    pub seed: u64,
    pub trials: usize,
    pub output: PathBuf,
    pub batch_size: usize,
    /// Worker threads. Never affects the output.
    pub workers: usize,
}

/// On-disk config: every key optional except the inputs.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub models: Option<Vec<PathBuf>>,
    pub model: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub design: Option<String>,
    pub powers: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub output: Option<PathBuf>,
    pub batch_size: Option<usize>,
    pub workers: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Fill unset keys with defaults and validate.
    pub fn resolve(self) -> Result<ExperimentConfig, ExperimentError> {
        let design = match self.design {
            Some(d) => d.parse()?,
            None => Design::SingleLayerSweep,
        };
        let mut models = self.models.unwrap_or_default();
        models.extend(self.model);
        let config = ExperimentConfig {
            models,
            dataset: self
                .dataset
                .ok_or_else(|| ExperimentError::Config("`dataset` is required".into()))?,
            powers: self.powers.unwrap_or_else(|| design.default_powers()),
            design,
            seed: self.seed.unwrap_or(0),
            trials: self.trials.unwrap_or(DEFAULT_TRIALS),
            output: self.output.unwrap_or_else(|| PathBuf::from("results")),
            batch_size: self.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
            workers: self.workers.unwrap_or(1),
        };
        config.validate()?;
        Ok(config)
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        ConfigFile::parse(text)?.resolve()
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.models.is_empty() {
            return Err(ExperimentError::Config("at least one model is required".into()));
        }
        self.validate_settings()
    }

    /// Every check except the model list.
    fn validate_settings(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.powers.is_empty() {
            return bad("`powers` must not be empty".into());
        }
        if let Some(p) = self.powers.iter().find(|p| !(0.0..=100.0).contains(*p)) {
            return bad(format!("power {p} is outside [0, 100]"));
        }
        for (i, p) in self.powers.iter().enumerate() {
            if self.powers[..i].contains(p) {
                return bad(format!("power {p} listed twice"));
            }
        }
        if self.trials == 0 {
            return bad("`trials` must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("`batch_size` must be positive".into());
        }
        if self.workers == 0 {
            return bad("`workers` must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub design: Design,
    pub plan: PlanTag,
    /// Group index for single, `L` for prefix, group count for all, 0 for baseline.
    pub layer: usize,
    pub power_percent: f64,
    pub trial: usize,
    pub accuracy: f64,
    pub normalized_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub power_percent: f64,
    pub a_avr: f64,
    pub trials: usize,
    pub seed: u64,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: u32,
    pub design: Design,
    pub seed: u64,
    pub trials: usize,
    pub powers: Vec<f64>,
    pub models: Vec<String>,
    pub dataset: String,
    pub complete: bool,
    pub created_unix: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub meta: RunMetadata,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResult {
    pub fn baseline(&self, model: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.plan == PlanTag::Baseline)
            .map(|r| r.accuracy)
    }

    /// Non-baseline rows of one model.
    pub fn model_rows<'a>(&'a self, model: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.model == model && r.plan != PlanTag::Baseline)
    }

    /// Trial-averaged normalized accuracy per (layer, power) for one model,
    /// in canonical order.
    pub fn cell_means(&self, model: &str) -> Result<Vec<(usize, f64, f64)>, ExperimentError> {
        let baseline = self
            .baseline(model)
            .ok_or_else(|| ExperimentError::Config(format!("no baseline row for `{model}`")))?;
        let mut cells: Vec<(usize, f64, Vec<f64>)> = Vec::new();
        for r in self.model_rows(model) {
            match cells
                .iter_mut()
                .find(|(l, p, _)| *l == r.layer && p.to_bits() == r.power_percent.to_bits())
            {
                Some(c) => c.2.push(r.accuracy),
                None => cells.push((r.layer, r.power_percent, vec![r.accuracy])),
            }
        }
        cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        cells
            .into_iter()
            .map(|(l, p, acc)| Ok((l, p, metrics::normalized_accuracy(metrics::mean(&acc), baseline)?)))
            .collect()
    }
}

/// Summary rows recomputed from result rows: `A_avr` per model and power.
pub fn summarize(meta: &RunMetadata, rows: &[ResultRow]) -> Result<Vec<SummaryRow>, ExperimentError> {
    let shell = ExperimentResult {
        meta: meta.clone(),
        rows: rows.to_vec(),
        summary: vec![],
    };
    let mut out = Vec::new();
    for model in &meta.models {
        if shell.baseline(model).is_none() {
            continue;
        }
        let cells = shell.cell_means(model)?;
        for &power in &meta.powers {
            let scores: Vec<(usize, f64)> = cells
                .iter()
                .filter(|c| c.1.to_bits() == power.to_bits())
                .enumerate()
                .map(|(k, c)| (k + 1, c.2))
                .collect();
            if scores.is_empty() {
                continue;
            }
            let a_avr = metrics::average_normalized_accuracy(&scores, scores.len())?;
            out.push(SummaryRow {
                model: model.clone(),
                power_percent: power,
                a_avr,
                trials: meta.trials,
                seed: meta.seed,
                version: meta.version,
            });
        }
    }
    Ok(out)
}

struct Job {
    plan: InjectionPlan,
    power: f64,
    trial: usize,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Evaluate every cell of one model. The input model is never mutated.
pub fn sweep_model(
    model: &ModelGraph,
    dataset: &Dataset,
    design: Design,
    powers: &[f64],
    seed: u64,
    trials: usize,
    batch_size: usize,
    pool: &rayon::ThreadPool,
) -> Result<Vec<ResultRow>, ExperimentError> {
    let baseline = metrics::evaluate_accuracy(model, dataset, batch_size)?;
    if baseline == 0.0 {
        return Err(MetricsError::UndefinedBaseline.into());
    }
    let groups = model.group_count();
    let jobs: Vec<Job> = design
        .plans(groups)
        .into_iter()
        .flat_map(|plan| {
            powers
                .iter()
                .flat_map(move |&power| (0..trials).map(move |trial| Job { plan, power, trial }))
        })
        .collect();

    let measured: Vec<Result<ResultRow, ExperimentError>> = pool.install(|| {
        jobs.par_iter()
            .map_init(
                || model.clone(),
                |local, job| {
                    let spec = NoiseSpec::new(job.power, seed, trials)?;
                    let clean = noise::snapshot(local);
                    let outcome = noise::inject(local, job.plan, &spec, job.trial)
                        .map_err(ExperimentError::from)
                        .and_then(|_| Ok(metrics::evaluate_accuracy(local, dataset, batch_size)?));
                    noise::restore(local, &clean)?;
                    let accuracy = outcome?;
                    let (plan, layer) = PlanTag::of(job.plan, groups);
                    Ok(ResultRow {
                        model: model.name().to_string(),
                        design,
                        plan,
                        layer,
                        power_percent: job.power,
                        trial: job.trial,
                        accuracy,
                        normalized_accuracy: metrics::normalized_accuracy(accuracy, baseline)?,
                    })
                },
            )
            .collect()
    });

    let mut rows = Vec::with_capacity(measured.len() + 1);
    rows.push(ResultRow {
        model: model.name().to_string(),
        design,
        plan: PlanTag::Baseline,
        layer: 0,
        power_percent: 0.0,
        trial: 0,
        accuracy: baseline,
        normalized_accuracy: 1.0,
    });
    for r in measured {
        rows.push(r?);
    }
    rows[1..].sort_by(|a, b| {
        a.layer
            .cmp(&b.layer)
            .then(a.power_percent.total_cmp(&b.power_percent))
            .then(a.trial.cmp(&b.trial))
    });
    Ok(rows)
}

/// Load every input, then sweep each model in config order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    config.validate()?;
    let dataset = load_dataset(&config.dataset)?;
    let models = config
        .models
        .iter()
        .map(load_model)
        .collect::<Result<Vec<_>, _>>()?;
    for (i, m) in models.iter().enumerate() {
        if models[..i].iter().any(|o| o.name() == m.name()) {
            return Err(ExperimentError::Config(format!("model name `{}` appears twice", m.name())));
        }
    }
    run_loaded(config, &models, &dataset)
}

/// Like [`run_experiment`] with models and dataset already in memory.
pub fn run_loaded(
    config: &ExperimentConfig,
    models: &[ModelGraph],
    dataset: &Dataset,
) -> Result<ExperimentResult, ExperimentError> {
    config.validate_settings()?;
    if models.is_empty() {
        return Err(ExperimentError::Config("at least one model is required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ExperimentError::Config(format!("worker pool: {e}")))?;
    let mut meta = RunMetadata {
        version: RESULTS_VERSION,
        design: config.design,
        seed: config.seed,
        trials: config.trials,
        powers: config.powers.clone(),
        models: models.iter().map(|m| m.name().to_string()).collect(),
        dataset: dataset.name.clone(),
        complete: false,
        created_unix: now_unix(),
    };
    let mut rows = Vec::new();
    for model in models {
        match sweep_model(
            model,
            dataset,
            config.design,
            &config.powers,
            config.seed,
            config.trials,
            config.batch_size,
            &pool,
        ) {
            Ok(r) => rows.extend(r),
            Err(e) => {
                let summary = summarize(&meta, &rows).unwrap_or_default();
                return Err(ExperimentError::Interrupted {
                    partial: Box::new(ExperimentResult { meta, rows, summary }),
                    source: Box::new(e),
                });
            }
        }
    }
    meta.complete = true;
    let summary = summarize(&meta, &rows)?;
    Ok(ExperimentResult { meta, rows, summary })
}

fn csv_error(file: &str, e: csv::Error) -> ExperimentError {
    let line = e.position().map_or(0, |p| p.line());
    ExperimentError::Schema {
        file: file.to_string(),
        line,
        message: e.to_string(),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> ExperimentError {
    ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn encode_results_csv(rows: &[ResultRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULT_COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.design.as_str().to_string(),
            r.plan.as_str().to_string(),
            r.layer.to_string(),
            r.power_percent.to_string(),
            r.trial.to_string(),
            r.accuracy.to_string(),
            r.normalized_accuracy.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn encode_summary_csv(rows: &[SummaryRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.power_percent.to_string(),
            r.a_avr.to_string(),
            r.trials.to_string(),
            r.seed.to_string(),
            r.version.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Column positions for `required` in a header, or the first missing name.
fn column_indices(file: &str, headers: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>, ExperimentError> {
    required
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| ExperimentError::MissingColumn {
                    file: file.to_string(),
                    column: name.to_string(),
                })
        })
        .collect()
}

fn field<T: FromStr>(file: &str, record: &csv::StringRecord, idx: usize, column: &str) -> Result<T, ExperimentError>
where
    T::Err: fmt::Display,
{
    let line = record.position().map_or(0, |p| p.line());
    let raw = record.get(idx).ok_or_else(|| ExperimentError::Schema {
        file: file.to_string(),
        line,
        message: format!("missing value for `{column}`"),
    })?;
    raw.parse().map_err(|e: T::Err| ExperimentError::Schema {
        file: file.to_string(),
        line,
        message: format!("bad `{column}` value {raw:?}: {e}"),
    })
}

pub fn parse_results_csv(bytes: &[u8]) -> Result<Vec<ResultRow>, ExperimentError> {
    let file = RESULTS_FILE;
    let mut reader = csv::Reader::from_reader(bytes);
    let headers = reader.headers().map_err(|e| csv_error(file, e))?.clone();
    let idx = column_indices(file, &headers, &RESULT_COLUMNS)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let rec = record.map_err(|e| csv_error(file, e))?;
        let design: String = field(file, &rec, idx[1], "design")?;
        let plan: String = field(file, &rec, idx[2], "plan")?;
        rows.push(ResultRow {
            model: field(file, &rec, idx[0], "model")?,
            design: design.parse().map_err(|e: ExperimentError| ExperimentError::Schema {
                file: file.into(),
                line: rec.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?,
            plan: plan.parse().map_err(|message| ExperimentError::Schema {
                file: file.into(),
                line: rec.position().map_or(0, |p| p.line()),
                message,
            })?,
            layer: field(file, &rec, idx[3], "layer")?,
            power_percent: field(file, &rec, idx[4], "power_percent")?,
            trial: field(file, &rec, idx[5], "trial")?,
            accuracy: field(file, &rec, idx[6], "accuracy")?,
            normalized_accuracy: field(file, &rec, idx[7], "normalized_accuracy")?,
        });
    }
    Ok(rows)
}

pub fn parse_summary_csv(bytes: &[u8]) -> Result<Vec<SummaryRow>, ExperimentError> {
    let file = SUMMARY_FILE;
    let mut reader = csv::Reader::from_reader(bytes);
    let headers = reader.headers().map_err(|e| csv_error(file, e))?.clone();
    let idx = column_indices(file, &headers, &SUMMARY_COLUMNS)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let rec = record.map_err(|e| csv_error(file, e))?;
        let version: String = field(file, &rec, idx[5], "version")?;
        if version != RESULTS_VERSION.to_string() {
            return Err(ExperimentError::Version {
                found: version,
                expected: RESULTS_VERSION,
            });
        }
        rows.push(SummaryRow {
            model: field(file, &rec, idx[0], "model")?,
            power_percent: field(file, &rec, idx[1], "power_percent")?,
            a_avr: field(file, &rec, idx[2], "a_avr")?,
            trials: field(file, &rec, idx[3], "trials")?,
            seed: field(file, &rec, idx[4], "seed")?,
            version: RESULTS_VERSION,
        });
    }
    Ok(rows)
}

/// Write the result files into `dir`, creating it if needed. An incomplete
/// result additionally gets an `INCOMPLETE` marker file.
pub fn write_results(result: &ExperimentResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, ExperimentError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let meta = serde_json::to_vec_pretty(&result.meta).expect("metadata serializes");
    let files = [
        (RESULTS_FILE, encode_results_csv(&result.rows)),
        (SUMMARY_FILE, encode_summary_csv(&result.summary)),
        (METADATA_FILE, meta),
    ];
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    let marker = dir.join(INCOMPLETE_MARKER);
    if result.meta.complete {
        if marker.exists() {
            std::fs::remove_file(&marker).map_err(|e| io_error(&marker, e))?;
        }
    } else {
        write_atomic(&marker, b"run stopped before all rows were measured\n")?;
        written.push(marker);
    }
    Ok(written)
}

pub fn read_results(dir: impl AsRef<Path>) -> Result<ExperimentResult, ExperimentError> {
    let dir = dir.as_ref();
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read(&p).map_err(|e| io_error(&p, e))
    };
    let meta: RunMetadata = serde_json::from_slice(&read(METADATA_FILE)?).map_err(|e| ExperimentError::Schema {
        file: METADATA_FILE.into(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    if meta.version != RESULTS_VERSION {
        return Err(ExperimentError::Version {
            found: meta.version.to_string(),
            expected: RESULTS_VERSION,
        });
    }
    let summary = parse_summary_csv(&read(SUMMARY_FILE)?)?;
    let rows = parse_results_csv(&read(RESULTS_FILE)?)?;
    let mut meta = meta;
    if dir.join(INCOMPLETE_MARKER).exists() {
        meta.complete = false;
    }
    Ok(ExperimentResult { meta, rows, summary })
}

/// Run and persist. An interrupted run still writes its partial rows,
/// marked incomplete, before the error is returned.
pub fn run_to_dir(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    match run_experiment(config) {
        Ok(result) => {
            write_results(&result, &config.output)?;
            Ok(result)
        }
        Err(ExperimentError::Interrupted { partial, source }) => {
            write_results(&partial, &config.output)?;
            Err(ExperimentError::Interrupted { partial, source })
        }
        Err(e) => Err(e),
    }
}
