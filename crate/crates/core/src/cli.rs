//! The `subspace-svr` command line.
//!
//! Exit codes: 0 success, 1 input error, 2 convergence or numeric error,
//! 3 internal invariant violation. Failures print one JSON error record on
//! stderr. Every output file starts with a `#` line carrying the tool
//! version, the seed and a hash of the effective configuration.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{load_csv, read_table, ResponseColumn, SynthSpec};
use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::gcv::{grid_search, GcvVariant, HyperGrid};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::reporting::{outer_evaluate, report_critical_subspaces, render_trace_summary, EvaluationSetup, OuterEvaluation};
use crate::search::{SearchConfig, SearchTrace};
use crate::svr::SvrConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "subspace-svr", version, about = "Randomized subspace SVR ensembles")]
pub struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tune on the hyperparameter grid and fit a model on all rows.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Outer k-fold evaluation with per-fold tuning and variable reports.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic dataset from a JSON spec.
    Synth(SynthArgs),
    /// Render the critical-subspace table of a saved model.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelArg {
    Linear,
    Poly,
    Rbf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum VariantArg {
    #[value(name = "A1", alias = "a1")]
    A1,
    #[value(name = "A2", alias = "a2")]
    A2,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Input CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// The CSV has no header row.
    #[arg(long)]
    pub no_header: bool,
    /// Response column name or 0-based index (default: last column).
    #[arg(long)]
    pub response: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 3)]
    pub subspace_dim: usize,
    /// Selection threshold η (fraction).
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    /// Termination threshold τ (fraction).
    #[arg(long, default_value_t = 0.00001)]
    pub tau: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iterations: usize,
    /// Inner cross-validation folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Consecutive draws with Δe < τ needed to stop; 1 stops at the first such draw.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,0.5")]
    pub epsilon_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5")]
    pub cost_grid: Vec<f64>,
    #[arg(long, value_enum, default_value = "A2")]
    pub gcv_variant: VariantArg,
    #[arg(long, value_enum, default_value = "poly")]
    pub kernel: KernelArg,
    /// Kernel scale (default 1/subspace-dim).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub offset: f64,
    #[arg(long, default_value_t = 1)]
    pub degree: u32,
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth: f64,
    /// KKT tolerance of the SVR solver.
    #[arg(long, default_value_t = 1e-4)]
    pub svr_tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            subspace_dim: self.subspace_dim,
            selection_threshold: self.eta,
            termination_threshold: self.tau,
            max_iterations: self.max_iterations,
            folds: self.folds,
            patience: self.patience,
            seed: self.seed,
        }
    }

    pub fn kernel(&self) -> KernelSpec {
        let gamma = self.gamma.unwrap_or(1.0 / self.subspace_dim.max(1) as f64);
        KernelSpec {
            family: match self.kernel {
                KernelArg::Linear => KernelFamily::Linear,
                KernelArg::Poly => KernelFamily::Polynomial,
                KernelArg::Rbf => KernelFamily::Rbf,
            },
            gamma,
            offset: self.offset,
            degree: self.degree,
            bandwidth: self.bandwidth,
        }
    }

    /// SVR settings apart from ε and C, which come from the grid.
    pub fn svr_template(&self) -> SvrConfig {
        SvrConfig::new(self.epsilon_grid[0], self.cost_grid[0], self.kernel()).with_tolerance(self.svr_tolerance)
    }

    pub fn grid(&self) -> HyperGrid {
        HyperGrid {
            epsilons: self.epsilon_grid.clone(),
            costs: self.cost_grid.clone(),
        }
    }

    pub fn variant(&self) -> GcvVariant {
        match self.gcv_variant {
            VariantArg::A1 => GcvVariant::A1,
            VariantArg::A2 => GcvVariant::A2,
        }
    }

    fn validate(&self) -> Result<()> {
        self.search_config().validate()?;
        self.grid().validate()?;
        self.svr_template().validate()
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Directory for model.json, grid.csv, trace.jsonl and fitted.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Feature CSV. With a header, columns are matched to the model's labels.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub no_header: bool,
    #[arg(long)]
    pub output: PathBuf,
    /// Add one column per subspace with its contribution.
    #[arg(long)]
    pub decompose: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Directory for evaluation.json and evaluation.txt.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Outer test folds.
    #[arg(long, default_value_t = 5)]
    pub outer_folds: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// JSON spec with fields n, p, terms, noise_sd, seed.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the true index sets as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Text,
    Json,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Search trace to summarize.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Evaluation report whose common variables are flagged.
    #[arg(long)]
    pub evaluation: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
}

/// First line of every output file.
fn header_line<T: Serialize>(command: &str, seed: u64, config: &T) -> String {
    let json = serde_json::to_string(config).unwrap_or_default();
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(json.as_bytes());
    let digest = h.finalize();
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("subspace-svr {VERSION} {command} seed={seed} config={hex}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::input(format!("input file {} does not exist", path.display())))
    }
}

fn response_column(arg: &Option<String>) -> ResponseColumn {
    match arg {
        Some(s) => s.parse().unwrap_or(ResponseColumn::Last),
        None => ResponseColumn::Last,
    }
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    require_file(&args.input.input)?;
    args.model.validate()?;
    let raw = load_csv(&args.input.input, !args.input.no_header, &response_column(&args.input.response))?;
    let data = raw.normalize()?;
    let header = header_line("fit", args.model.seed, &args.model);
    let result = grid_search(
        &data,
        &args.model.grid(),
        &args.model.search_config(),
        &args.model.svr_template(),
        args.model.variant(),
    )?;
    ensure_dir(&args.out_dir)?;
    result.best_model.save(&args.out_dir.join("model.json"), Some(&header))?;
    write_file(&args.out_dir.join("grid.csv"), &result.table_csv(Some(&header)))?;

    let trace_path = args.out_dir.join("trace.jsonl");
    let mut buf = Vec::new();
    result
        .best_search
        .trace
        .write_jsonl(&mut buf, Some(&header))
        .map_err(|e| Error::io(&trace_path, e))?;
    std::fs::write(&trace_path, buf).map_err(|e| Error::io(&trace_path, e))?;

    let fitted = result.best_model.predict(&raw.x)?;
    let mut s = format!("# {header}\nfitted\n");
    for v in fitted.iter() {
        s.push_str(&format!("{v}\n"));
    }
    write_file(&args.out_dir.join("fitted.csv"), &s)?;
    log::info!(
        "selected eps={} C={} with {} subspaces",
        result.best_epsilon,
        result.best_cost,
        result.best_model.subspaces.len()
    );
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    require_file(&args.model)?;
    require_file(&args.input)?;
    let model = EnsembleModel::load(&args.model)?;
    let table = read_table(&args.input, !args.no_header)?;
    let p = model.p;

    let columns: Vec<usize> = match &table.headers {
        Some(h) if model.labels.iter().all(|l| h.contains(l)) => model
            .labels
            .iter()
            .map(|l| h.iter().position(|x| x == l).unwrap())
            .collect(),
        _ if table.width == p || (table.width == 0 && table.rows.is_empty()) => (0..p).collect(),
        _ => {
            return Err(Error::input(format!(
                "schema mismatch: model expects p = {p} predictors, input has {} columns",
                table.width
            )))
        }
    };
    let x = DMatrix::from_fn(table.rows.len(), p, |i, j| table.rows[i][columns[j]]);
    let pred = model.predict(&x)?;
    let comps = if args.decompose { Some(model.components(&x)?) } else { None };

    let header = header_line("predict", model.seed, &(args, &model.search_config, &model.svr_config));
    let mut out = format!("# {header}\nprediction");
    if comps.is_some() {
        for (j, s) in model.subspaces.iter().enumerate() {
            let names: Vec<&str> = s.indices.iter().map(|&i| model.labels[i].as_str()).collect();
            out.push_str(&format!(",g{}[{}]", j + 1, names.join(";")));
        }
    }
    out.push('\n');
    for i in 0..pred.len() {
        out.push_str(&pred[i].to_string());
        if let Some(c) = &comps {
            for col in c {
                out.push(',');
                out.push_str(&col[i].to_string());
            }
        }
        out.push('\n');
    }
    write_file(&args.output, &out)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    require_file(&args.input.input)?;
    args.model.validate()?;
    if args.outer_folds < 2 {
        return Err(Error::input("need at least 2 outer folds"));
    }
    let raw = load_csv(&args.input.input, !args.input.no_header, &response_column(&args.input.response))?;
    let setup = EvaluationSetup {
        search: args.model.search_config(),
        grid: args.model.grid(),
        svr_template: args.model.svr_template(),
        variant: args.model.variant(),
        outer_folds: args.outer_folds,
    };
    let eval = outer_evaluate(&raw, &setup)?;
    let header = header_line("evaluate", args.model.seed, &(args.outer_folds, &args.model));
    ensure_dir(&args.out_dir)?;
    let json = serde_json::to_string_pretty(&eval)
        .map_err(|e| Error::Invariant(format!("report serialization failed: {e}")))?;
    write_file(&args.out_dir.join("evaluation.json"), &format!("# {header}\n{json}\n"))?;
    write_file(&args.out_dir.join("evaluation.txt"), &format!("# {header}\n{}", eval.render()))?;
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    require_file(&args.spec)?;
    let text = std::fs::read_to_string(&args.spec).map_err(|e| Error::io(&args.spec, e))?;
    let spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| Error::input(format!("invalid synthetic spec: {e}")))?;
    let (data, truth) = crate::data::generate_synthetic(&spec)?;
    let header = header_line("synth", spec.seed, &spec);
    data.save_csv(&args.output, Some(&header))?;
    if let Some(path) = &args.truth {
        let json = serde_json::to_string(&truth).map_err(|e| Error::Invariant(e.to_string()))?;
        write_file(path, &format!("# {header}\n{json}\n"))?;
    }
    Ok(())
}

fn read_commented_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let body: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    serde_json::from_str(&body).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    require_file(&args.model)?;
    let model = EnsembleModel::load(&args.model)?;
    let common = match &args.evaluation {
        Some(p) => {
            require_file(p)?;
            let eval: OuterEvaluation = read_commented_json(p)?;
            if eval.labels != model.labels {
                return Err(Error::input("evaluation report and model have different column labels"));
            }
            Some(eval.variables.common_variables)
        }
        None => None,
    };
    let table = report_critical_subspaces(&model, &model.labels, common.as_ref())?;
    let trace = match &args.trace {
        Some(p) => {
            require_file(p)?;
            Some(SearchTrace::read_jsonl(p)?)
        }
        None => None,
    };
    let header = header_line("report", model.seed, &(&model.search_config, &model.svr_config));
    let body = match args.format {
        FormatArg::Json => {
            let json = serde_json::to_string_pretty(&table).map_err(|e| Error::Invariant(e.to_string()))?;
            format!("# {header}\n{json}\n")
        }
        FormatArg::Text => {
            let mut s = format!(
                "# {header}\nmodel: p = {}, {} critical subspaces, eps = {}, C = {}\n\n",
                model.p,
                model.subspaces.len(),
                model.svr_config.epsilon,
                model.svr_config.cost
            );
            s.push_str(&table.render());
            if let Some(t) = &trace {
                s.push('\n');
                s.push_str(&render_trace_summary(t));
            }
            s
        }
    };
    match &args.output {
        Some(p) => write_file(p, &body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn error_record(kind: &str, code: i32, message: &str) -> String {
    serde_json::json!({ "error": kind, "exit_code": code, "message": message }).to_string()
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", error_record("input", 1, first.trim_start_matches("error: ")));
            return 1;
        }
    };

    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();

    let outcome = match cli.threads {
        Some(0) => Err(Error::input("--threads must be positive")),
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Error::Invariant(format!("thread pool: {e}"))),
        },
        None => dispatch(&cli),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", error_record(e.kind(), code, &e.to_string()));
            let _ = std::io::stderr().flush();
            code
        }
    }
}
