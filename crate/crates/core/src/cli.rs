//! The `anb` command line. Each subcommand only wires library calls together.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or model error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::experiment::{self, ConfigFile, ExperimentError};
use crate::format::{load_model, save_model};
use crate::metrics::{evaluate_accuracy, load_dataset};
use crate::model::{GroupKind, ModelGraph};
use crate::noise::{inject, layer_sigma, InjectionPlan, NoiseSpec};
use crate::{fixtures, report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const WORKERS_ENV: &str = "ANB_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "anb", version, about = "Measure accuracy degradation under analog weight noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the layer groups of a model with their weight spread.
    Inspect { model: PathBuf },
    /// Print the clean accuracy of a model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = experiment::DEFAULT_BATCH_SIZE)]
        batch: usize,
    },
    /// Save a copy of a model with noise injected.
    Inject(InjectArgs),
    /// Run an experiment described by a config file.
    Run(RunArgs),
    /// Render charts and a summary table from a results directory.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the deterministic fixture models and datasets.
    MakeFixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Perturb a single layer group (1-based).
    #[arg(long, conflicts_with_all = ["prefix", "all"], required_unless_present_any = ["prefix", "all"])]
    pub layer: Option<usize>,
    /// Perturb layer groups 1..=L.
    #[arg(long, conflicts_with = "all")]
    pub prefix: Option<usize>,
    /// Perturb every layer group.
    #[arg(long)]
    pub all: bool,
    /// Noise standard deviation as a percentage of each group's weight spread.
    #[arg(long)]
    pub power: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub trial: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub powers: Option<Vec<f64>>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; falls back to ANB_WORKERS, then the config file,
    /// then the number of logical cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Box<dyn std::error::Error + Send + Sync>),
}

fn data<E: std::error::Error + Send + Sync + 'static>(e: E) -> CliError {
    CliError::Data(Box::new(e))
}

/// The table printed by `inspect`.
pub fn inspect_table(model: &ModelGraph) -> Result<String, crate::noise::NoiseError> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "model {}  input {:?}  classes {}  groups {}",
        model.name(),
        model.input_shape(),
        model.class_count(),
        model.group_count()
    );
    let _ = writeln!(out, "{:>5}  {:<10}  {:>4}  {:>8}  {:>12}", "group", "kind", "node", "params", "sigma_w");
    for g in model.layer_groups() {
        let node = &model.nodes()[g.node];
        let kind = match g.kind {
            GroupKind::BatchNormBundle => "batch_norm",
            GroupKind::Weighted => node.kind.name(),
        };
        let count: usize = node.params.iter().map(|p| p.tensor.len()).sum();
        let sigma = layer_sigma(model, &g)?;
        let _ = writeln!(
            out,
            "{:>5}  {:<10}  {:>4}  {:>8}  {:>12.6e}",
            g.index, kind, g.node, count, sigma.sigma_w
        );
    }
    Ok(out)
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn env_workers() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .ok()
            .filter(|&n: &usize| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

/// Merge flags over the config file: flags win, then the file, then defaults.
pub fn resolve_run_config(args: &RunArgs, text: &str) -> Result<experiment::ExperimentConfig, ExperimentError> {
    let mut file = ConfigFile::parse(text)?;
    if args.seed.is_some() {
        file.seed = args.seed;
    }
    if args.trials.is_some() {
        file.trials = args.trials;
    }
    if args.design.is_some() {
        file.design = args.design.clone();
    }
    if args.powers.is_some() {
        file.powers = args.powers.clone();
    }
    if args.batch.is_some() {
        file.batch_size = args.batch;
    }
    if args.out.is_some() {
        file.output = args.out.clone();
    }
    if args.workers.is_some() {
        file.workers = args.workers;
    }
    file.resolve()
}

fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Inspect { model } => {
            let m = load_model(&model).map_err(data)?;
            inspect_table(&m).map_err(data)
        }
        Command::Eval { model, data: path, batch } => {
            if batch == 0 {
                return Err(CliError::Usage("--batch must be positive".into()));
            }
            let m = load_model(&model).map_err(data)?;
            let ds = load_dataset(&path).map_err(data)?;
            let acc = evaluate_accuracy(&m, &ds, batch).map_err(data)?;
            Ok(format!("{} on {}: accuracy {acc} ({:.2}%)\n", m.name(), ds.name, 100.0 * acc))
        }
        Command::Inject(args) => {
            let plan = match (args.layer, args.prefix, args.all) {
                (Some(i), _, _) => InjectionPlan::Single(i),
                (_, Some(l), _) => InjectionPlan::Prefix(l),
                _ => InjectionPlan::All,
            };
            let spec = NoiseSpec::new(args.power, args.seed, args.trial + 1).map_err(|e| CliError::Usage(e.to_string()))?;
            let mut m = load_model(&args.model).map_err(data)?;
            let sigmas = inject(&mut m, plan, &spec, args.trial).map_err(data)?;
            save_model(&m, &args.out).map_err(data)?;
            let mut out = String::new();
            for s in sigmas {
                let _ = writeln!(
                    out,
                    "group {}: sigma_w {:.6e}, noise std {:.6e}",
                    s.group,
                    s.sigma_w,
                    s.sigma_w * args.power / 100.0
                );
            }
            let _ = writeln!(out, "wrote {}", args.out.display());
            Ok(out)
        }
        Command::Run(args) => {
            let text = std::fs::read_to_string(&args.config)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.config.display())))?;
            let mut args = args;
            if args.workers.is_none() {
                args.workers = env_workers()?;
            }
            let mut config = resolve_run_config(&args, &text).map_err(|e| match e {
                ExperimentError::Config(m) => CliError::Usage(m),
                other => data(other),
            })?;
            if args.workers.is_none() && !text_sets_workers(&text) {
                config.workers = default_workers();
            }
            let result = experiment::run_to_dir(&config).map_err(data)?;
            let mut out = format!(
                "wrote {} rows for {} model(s) to {}\n\n",
                result.rows.len(),
                result.meta.models.len(),
                config.output.display()
            );
            out.push_str(&report::summary_text(&result));
            Ok(out)
        }
        Command::Report { results, out } => {
            let result = experiment::read_results(&results).map_err(data)?;
            let files = report::render_report(&result, &out).map_err(data)?;
            let mut s = report::summary_text(&result);
            for f in files {
                let _ = writeln!(s, "wrote {}", f.display());
            }
            Ok(s)
        }
        Command::MakeFixtures { out } => {
            let files = fixtures::write_fixtures(&out).map_err(data)?;
            Ok(files.iter().map(|f| format!("wrote {}\n", f.display())).collect())
        }
    }
}

fn text_sets_workers(text: &str) -> bool {
    ConfigFile::parse(text).is_ok_and(|f| f.workers.is_some())
}

/// Parse `args` (including the program name), run, print, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("usage: anb <inspect|eval|inject|run|report|make-fixtures> ... (see anb --help)");
            EXIT_USAGE
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}
