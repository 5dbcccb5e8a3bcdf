//! Command-line interface: thin wrappers over the library with JSON
//! configuration files and deterministic file outputs.
//!
//! Every failure exits nonzero after printing a machine-readable envelope
//! on stderr: `{"error":{"kind":...,"message":...}}`. All randomness flows
//! from explicit seeds (flags or config fields); `FAIRLEND_THREADS` caps
//! the worker pool, and results are identical at any thread count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::dataset::{self, prepare_nsmo, Dataset, Schema};
use crate::eval::{run_experiment, ExperimentConfig, ExperimentResult};
use crate::learner::GbdtParams;
use crate::pipeline::{paired_test, train_pipeline, DecisionPolicy, ModelMode, PipelineModel};
use crate::scm::{sample, ScmSpec};
use crate::screening::{
    overlap_test, screen_proxies, GroupSpec, PositivityReport, ScreeningReport,
};

#[derive(Parser)]
#[command(
    name = "fairlend",
    version,
    about = "Causal debiasing pipeline for credit underwriting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample synthetic credit data from a causal model spec.
    Simulate {
        /// Model spec JSON; the built-in default spec when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of rows to draw.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Output directory: data.csv, schema.json, hidden.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a raw survey export into a typed training table.
    NsmoPrepare {
        /// Raw CSV export.
        #[arg(long)]
        input: PathBuf,
        /// Output directory: prepared.csv, schema.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Screen alternative features for proxy correlation and run the
    /// positivity overlap test.
    Screen {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Protected column holding the group.
        #[arg(long)]
        group_column: String,
        /// Protected group level within the column.
        #[arg(long)]
        group_level: String,
        /// Absolute correlation above which a feature is dropped.
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        /// Minimum per-(value, group) cell count for overlap.
        #[arg(long, default_value_t = 30)]
        floor: usize,
        /// Output directory: screening.json, positivity.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model mode.
    Train {
        /// awareness | unawareness | counterfactual
        #[arg(long)]
        mode: String,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Hyperparameter JSON; library defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Screening report JSON; required by unawareness mode.
        #[arg(long)]
        screening: Option<PathBuf>,
        /// Output model JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every row as observed and with protected columns overridden,
    /// reporting the per-row and per-group deltas.
    Audit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Decision policy JSON; defaults when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Output paired-test JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the multi-seed three-mode experiment.
    Experiment {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output directory: experiment.json, report.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an experiment result as a text table.
    Report {
        /// experiment.json produced by the experiment subcommand.
        #[arg(long)]
        result: PathBuf,
    },
}

struct AppError {
    kind: String,
    message: String,
}

impl AppError {
    fn new(kind: impl Into<String>, message: impl ToString) -> Self {
        AppError {
            kind: kind.into(),
            message: message.to_string(),
        }
    }

    fn config(message: impl ToString) -> Self {
        AppError::new("ConfigParse", message)
    }
}

macro_rules! from_module_error {
    ($ty:ty) => {
        impl From<$ty> for AppError {
            fn from(e: $ty) -> Self {
                AppError::new(e.kind(), e)
            }
        }
    };
}

from_module_error!(crate::dataset::DatasetError);
from_module_error!(crate::scm::ScmError);
from_module_error!(crate::screening::ScreeningError);
from_module_error!(crate::learner::LearnerError);
from_module_error!(crate::pipeline::PipelineError);
from_module_error!(crate::eval::EvalError);

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::new("IoError", e)
    }
}

/// Entry point used by the binary: parses arguments, runs the subcommand,
/// and turns any failure into the stderr JSON envelope and exit code 1.
pub fn run() {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| dispatch(cli.command));
    if let Err(e) = result {
        let envelope = serde_json::json!({ "error": { "kind": e.kind, "message": e.message } });
        eprintln!("{envelope}");
        std::process::exit(1);
    }
}

/// `FAIRLEND_THREADS` caps the worker pool; unset means the library
/// default. Malformed values are rejected rather than silently ignored.
fn init_threads() -> Result<(), AppError> {
    match std::env::var("FAIRLEND_THREADS") {
        Err(_) => Ok(()),
        Ok(raw) => {
            let n: usize = raw.parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
                AppError::config(format!(
                    "FAIRLEND_THREADS must be a positive integer, got {raw:?}"
                ))
            })?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| AppError::new("ThreadPool", e))
        }
    }
}

fn require_file(path: &Path) -> Result<(), AppError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(AppError::new(
            "MissingInput",
            format!("input file {} not found", path.display()),
        ))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, AppError> {
    require_file(path)?;
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| AppError::config(format!("{what} {}: {e}", path.display())))
}

fn write_out(path: &Path, contents: &str) -> Result<(), AppError> {
    std::fs::write(path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_table(schema: &Path, data: &Path) -> Result<Dataset, AppError> {
    let schema: Schema = read_json(schema, "schema")?;
    require_file(data)?;
    Ok(dataset::load_csv(data, &schema)?)
}

fn dispatch(command: Command) -> Result<(), AppError> {
    match command {
        Command::Simulate { spec, n, seed, out } => simulate(spec, n, seed, &out),
        Command::NsmoPrepare { input, out } => nsmo_prepare(&input, &out),
        Command::Screen {
            data,
            schema,
            group_column,
            group_level,
            threshold,
            floor,
            out,
        } => screen(
            &data,
            &schema,
            &group_column,
            &group_level,
            threshold,
            floor,
            &out,
        ),
        Command::Train {
            mode,
            schema,
            data,
            params,
            screening,
            out,
        } => train(
            &mode,
            &schema,
            &data,
            params.as_deref(),
            screening.as_deref(),
            &out,
        ),
        Command::Audit {
            model,
            data,
            schema,
            policy,
            out,
        } => audit(&model, &data, &schema, policy.as_deref(), &out),
        Command::Experiment { config, out } => experiment(&config, &out),
        Command::Report { result } => report(&result),
    }
}

fn simulate(spec: Option<PathBuf>, n: usize, seed: u64, out: &Path) -> Result<(), AppError> {
    let spec: ScmSpec = match spec {
        Some(path) => read_json(&path, "model spec")?,
        None => ScmSpec::default(),
    };
    std::fs::create_dir_all(out)?;
    let sample = sample(&spec, n, seed)?;
    dataset::write_csv(&sample.data, out.join("data.csv"))?;
    println!("wrote {}", out.join("data.csv").display());
    let schema = serde_json::to_string_pretty(sample.data.schema())
        .expect("schema serialization cannot fail");
    write_out(&out.join("schema.json"), &schema)?;

    let mut hidden = String::from("w,z\n");
    for (w, z) in sample.hidden.w.iter().zip(&sample.hidden.z) {
        writeln!(hidden, "{w},{z}").expect("string write cannot fail");
    }
    write_out(&out.join("hidden.csv"), &hidden)
}

fn nsmo_prepare(input: &Path, out: &Path) -> Result<(), AppError> {
    require_file(input)?;
    std::fs::create_dir_all(out)?;
    let data = prepare_nsmo(input)?;
    dataset::write_csv(&data, out.join("prepared.csv"))?;
    println!("wrote {}", out.join("prepared.csv").display());
    let schema =
        serde_json::to_string_pretty(data.schema()).expect("schema serialization cannot fail");
    write_out(&out.join("schema.json"), &schema)
}

fn screen(
    data: &Path,
    schema: &Path,
    group_column: &str,
    group_level: &str,
    threshold: f64,
    floor: usize,
    out: &Path,
) -> Result<(), AppError> {
    let table = load_table(schema, data)?;
    std::fs::create_dir_all(out)?;
    let group = GroupSpec::new(group_column, group_level);
    let screening = screen_proxies(&table, &group, threshold)?;
    let positivity = overlap_test(&table, group_column, floor)?;

    print!("{}", render_screening(&screening, &positivity));
    let json = serde_json::to_string_pretty(&screening).expect("report serialization");
    write_out(&out.join("screening.json"), &json)?;
    let json = serde_json::to_string_pretty(&positivity).expect("report serialization");
    write_out(&out.join("positivity.json"), &json)
}

fn render_screening(screening: &ScreeningReport, positivity: &PositivityReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "Proxy screen vs {}={} at |r| > {}",
        screening.group.column, screening.group.level, screening.threshold
    )
    .unwrap();
    writeln!(
        out,
        "{:<24} {:>10}  {:<10} verdict",
        "feature", "r", "level"
    )
    .unwrap();
    for f in &screening.features {
        let r =
            f.r.map(|r| format!("{r:+.4}"))
                .unwrap_or_else(|| "undefined".to_string());
        let level = f.level.as_deref().unwrap_or("-");
        let verdict = if f.dropped { "DROP" } else { "keep" };
        writeln!(
            out,
            "{:<24} {:>10}  {:<10} {}",
            f.feature, r, level, verdict
        )
        .unwrap();
    }
    writeln!(out, "dropped: {:?}", screening.dropped).unwrap();
    if positivity.is_clean() {
        writeln!(out, "positivity: no cells below floor {}", positivity.floor).unwrap();
    } else {
        writeln!(out, "positivity violations (floor {}):", positivity.floor).unwrap();
        for v in &positivity.violations {
            writeln!(
                out,
                "  {} = {:?} has {} rows in group {}",
                v.feature, v.value, v.count, v.group
            )
            .unwrap();
        }
    }
    out
}

fn train(
    mode: &str,
    schema: &Path,
    data: &Path,
    params: Option<&Path>,
    screening: Option<&Path>,
    out: &Path,
) -> Result<(), AppError> {
    let mode: ModelMode = mode.parse().map_err(AppError::config)?;
    let table = load_table(schema, data)?;
    let params: GbdtParams = match params {
        Some(path) => read_json(path, "params")?,
        None => GbdtParams::default(),
    };
    let screening: Option<ScreeningReport> = match screening {
        Some(path) => Some(read_json(path, "screening report")?),
        None => None,
    };
    let model = train_pipeline(&table, mode, &params, screening.as_ref())?;
    write_out(out, &model.to_json())
}

fn audit(
    model: &Path,
    data: &Path,
    schema: &Path,
    policy: Option<&Path>,
    out: &Path,
) -> Result<(), AppError> {
    let model: PipelineModel = read_json(model, "model")?;
    let table = load_table(schema, data)?;
    let policy: DecisionPolicy = match policy {
        Some(path) => read_json(path, "policy")?,
        None => DecisionPolicy::default(),
    };
    let result = paired_test(&model, &policy, &table)?;
    println!(
        "audited {} rows: max |delta| {:.6}, mean |delta| {:.6}",
        result.rows.len(),
        result.max_abs_delta,
        result.mean_abs_delta
    );
    let json = serde_json::to_string_pretty(&result).expect("result serialization");
    write_out(out, &json)
}

fn experiment(config: &Path, out: &Path) -> Result<(), AppError> {
    let config: ExperimentConfig = read_json(config, "experiment config")?;
    std::fs::create_dir_all(out)?;
    let result = run_experiment(&config)?;
    write_out(&out.join("experiment.json"), &result.to_json())?;
    write_out(&out.join("report.txt"), &result.render_table())
}

fn report(result: &Path) -> Result<(), AppError> {
    let result: ExperimentResult = read_json(result, "experiment result")?;
    print!("{}", result.render_table());
    Ok(())
}
