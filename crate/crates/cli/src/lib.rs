//! Command-line front end over CSV and JSON files.
//!
//! Every subcommand except `version` and `bench` accepts `--config FILE`, a
//! flat TOML table whose keys are the long flag names. Flags given on the
//! command line win over file values.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ramen::bench::{run_experiment, ExperimentConfig, Method, ScenarioSpec};
use ramen::estimator::{baseline, estimate, AteReport, Baseline};
use ramen::relax::{gumbel_train, hyperparameter_sweep, default_grid, TrainConfig};
use ramen::scm::{Invariance, KnownDagScenario, PostKind};
use ramen::search::{combinatorial_select_with, SearchConfig, SelectionMethod, SelectionResult};
use ramen::MultiEnvDataset;

#[derive(Parser)]
#[command(name = "ramen", version, about = "Adjustment set selection and ATE estimation from multi-environment data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and its true effects.
    Simulate(SimulateArgs),
    /// Select an adjustment set from a dataset.
    Select(SelectArgs),
    /// Estimate per-environment effects for a selection or a baseline.
    Estimate(EstimateArgs),
    /// Run a repeated experiment described by a TOML file.
    Bench(BenchArgs),
    /// Print the version.
    Version,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct SimulateArgs {
    /// Flat TOML file with default values for these flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// known_dag, random_dag or randomized [default: known_dag]
    #[arg(long)]
    scenario: Option<String>,
    /// TY, Y_only, T_only or none [default: TY]
    #[arg(long)]
    invariance: Option<Invariance>,
    /// collider, descendant or noise [default: collider]
    #[arg(long)]
    post_kind: Option<PostKind>,
    /// Observed covariates of the known-DAG scenario [default: 5]
    #[arg(long)]
    d: Option<usize>,
    /// Heterogeneity scale; selects the scaled-latent variant of the
    /// known-DAG scenario, and the shift scale of random DAGs [default: 1]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Nodes of the random DAG [default: 10]
    #[arg(long)]
    p: Option<usize>,
    /// Edge density of the random DAG [default: 0.5]
    #[arg(long)]
    density: Option<f64>,
    /// Outcome noise of the randomized scenario [default: 1]
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Units per environment [default: 2500]
    #[arg(long)]
    n: Option<usize>,
    /// Number of environments [default: 5]
    #[arg(long)]
    envs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Truth JSON to write [default: next to --out, extension .truth.json]
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct SelectArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// combinatorial or gumbel [default: combinatorial]
    #[arg(long)]
    method: Option<SelectionMethod>,
    /// Largest subset considered by the combinatorial search.
    #[arg(long)]
    max_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Selection JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-environment loss table CSV to write.
    #[arg(long)]
    losses: Option<PathBuf>,
    /// Training trace CSV to write (gumbel only).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate for gates and models.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    tau_init: Option<f64>,
    #[arg(long)]
    anneal_rate: Option<f64>,
    /// Rows drawn per environment per epoch; 0 trains on full batches.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Train on the whole hyperparameter grid and keep the best run.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    sweep: bool,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct EstimateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Selection JSON written by `select`.
    #[arg(long)]
    selection: Option<PathBuf>,
    /// adjust_all or adjust_none, instead of --selection.
    #[arg(long)]
    baseline: Option<String>,
    /// Truth JSON written by `simulate`; adds errors to the report.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Report JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report CSV to write.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment TOML (scenario, n, n_env, methods, runs, master_seed, ...).
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving mae.csv and summary.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides `runs` from the file.
    #[arg(long)]
    runs: Option<usize>,
    /// Overrides `master_seed` from the file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    ate: Vec<f64>,
    scenario: ScenarioSpec,
    n: usize,
    envs: usize,
    seed: u64,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

/// Runs one invocation. Returns 0 on success, 2 on a usage error and 1 on a
/// runtime error.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = configure_threads().and_then(|()| match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Select(a) => select(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Bench(a) => bench(a),
        Command::Version => {
            println!("ramen {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    });
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `ramen --help` for usage.");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn configure_threads() -> Outcome<()> {
    let Ok(raw) = std::env::var("RAMEN_THREADS") else {
        return Ok(());
    };
    let threads: usize = match raw.trim().parse() {
        Ok(t) if t > 0 => t,
        _ => return usage(format!("RAMEN_THREADS must be a positive integer, got '{raw}'")),
    };
    // the global pool can only be set once per process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Overlays the flags that were given onto the config file table.
fn resolve<A: Serialize + DeserializeOwned>(flags: &A, config: Option<&Path>) -> Outcome<A> {
    let mut merged = serde_json::Map::new();
    if let Some(path) = config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config: {}", path.display()))?;
        let table: toml::Table = match toml::from_str(&text) {
            Ok(t) => t,
            Err(e) => return usage(format!("config {}: {e}", path.display())),
        };
        match serde_json::to_value(table) {
            Ok(serde_json::Value::Object(m)) => merged = m,
            _ => return usage(format!("config {}: expected a table", path.display())),
        }
    }
    let given = serde_json::to_value(flags).context("encoding flags")?;
    if let serde_json::Value::Object(m) = given {
        merged.extend(m.into_iter().filter(|(_, v)| !v.is_null()));
    }
    serde_json::from_value(serde_json::Value::Object(merged)).or_else(|e| match config {
        Some(path) => usage(format!("config {}: {e}", path.display())),
        None => usage(e.to_string()),
    })
}

fn required<T: Clone>(value: &Option<T>, flag: &str) -> Outcome<T> {
    match value {
        Some(v) => Ok(v.clone()),
        None => usage(format!("missing required --{flag}")),
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .with_context(|| format!("writing output: {} is not a file path", path.display()))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing output: {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing output: {}", path.display()))?;
    Ok(())
}

fn read_dataset(path: &Path) -> anyhow::Result<MultiEnvDataset> {
    let file = fs::File::open(path).with_context(|| format!("reading dataset: {}", path.display()))?;
    MultiEnvDataset::read_csv(std::io::BufReader::new(file))
        .with_context(|| format!("reading dataset: {}", path.display()))
}

fn scenario_from(a: &SimulateArgs) -> Outcome<ScenarioSpec> {
    let invariance = a.invariance.unwrap_or(Invariance::TY);
    match a.scenario.as_deref().unwrap_or("known_dag") {
        "known_dag" => {
            let base = KnownDagScenario::new(invariance, a.post_kind.unwrap_or(PostKind::Collider), a.d.unwrap_or(5));
            Ok(ScenarioSpec::KnownDag(match a.epsilon {
                Some(eps) => base.with_epsilon(eps),
                None => base,
            }))
        }
        "random_dag" => Ok(ScenarioSpec::RandomDag {
            p: a.p.unwrap_or(10),
            density: a.density.unwrap_or(0.5),
            invariance,
            epsilon: a.epsilon.unwrap_or(1.0),
        }),
        "randomized" => Ok(ScenarioSpec::Randomized {
            noise_sd: a.noise_sd.unwrap_or(1.0),
        }),
        other => usage(format!(
            "unknown scenario '{other}' (expected known_dag, random_dag or randomized)"
        )),
    }
}

fn simulate(flags: SimulateArgs) -> Outcome<()> {
    let a = resolve(&flags, flags.config.as_deref())?;
    let out = required(&a.out, "out")?;
    let scenario = scenario_from(&a)?;
    let (n, envs, seed) = (a.n.unwrap_or(2500), a.envs.unwrap_or(5), a.seed.unwrap_or(0));
    let (data, ate) = scenario.sample(n, envs, seed).context("simulation")?;
    write_atomic(&out, data.to_csv_string().as_bytes())?;
    let truth_path = a.truth.unwrap_or_else(|| out.with_extension("truth.json"));
    let truth = TruthFile { ate, scenario, n, envs, seed };
    let json = serde_json::to_string_pretty(&truth).context("encoding truth")?;
    write_atomic(&truth_path, json.as_bytes())?;
    Ok(())
}

fn train_config(a: &SelectArgs, seed: u64) -> Outcome<TrainConfig> {
    let mut cfg = TrainConfig::with_seed(seed);
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr_gate = lr;
        cfg.lr_model = lr;
    }
    if let Some(t) = a.tau_init {
        cfg.tau_init = t;
    }
    if let Some(r) = a.anneal_rate {
        cfg.anneal_rate = r;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = (b > 0).then_some(b);
    }
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    Ok(cfg)
}

fn select(flags: SelectArgs) -> Outcome<()> {
    let a = resolve(&flags, flags.config.as_deref())?;
    let data_path = required(&a.data, "data")?;
    let out = required(&a.out, "out")?;
    let seed = a.seed.unwrap_or(0);
    let method = a.method.unwrap_or(SelectionMethod::Combinatorial);
    if a.trace.is_some() && (method != SelectionMethod::Gumbel || a.sweep) {
        return usage("--trace needs --method gumbel without --sweep");
    }
    let train = train_config(&a, seed)?;
    let data = read_dataset(&data_path)?;
    let selection = match method {
        SelectionMethod::Combinatorial => {
            combinatorial_select_with(&data, &SearchConfig::new(a.max_size, seed)).context("selection")?
        }
        SelectionMethod::Gumbel if a.sweep => {
            hyperparameter_sweep(&data, &train, &default_grid()).context("selection")?.selection
        }
        SelectionMethod::Gumbel => {
            let run = gumbel_train(&data, &train).context("selection")?;
            if let Some(path) = &a.trace {
                let mut buf = Vec::new();
                run.trace.write_csv(&mut buf).context("writing output")?;
                write_atomic(path, &buf)?;
            }
            run.selection
        }
    };
    if let Some(path) = &a.losses {
        let mut buf = Vec::new();
        selection.loss_table.write_csv(&mut buf).context("writing output")?;
        write_atomic(path, &buf)?;
    }
    write_atomic(&out, selection.to_json().context("encoding selection")?.as_bytes())?;
    Ok(())
}

fn estimate_cmd(flags: EstimateArgs) -> Outcome<()> {
    let a = resolve(&flags, flags.config.as_deref())?;
    let data_path = required(&a.data, "data")?;
    let out = required(&a.out, "out")?;
    let kind = match (&a.selection, a.baseline.as_deref()) {
        (Some(_), Some(_)) | (None, None) => return usage("give exactly one of --selection and --baseline"),
        (None, Some("adjust_all")) => Some(Baseline::AdjustAll),
        (None, Some("adjust_none")) => Some(Baseline::AdjustNone),
        (None, Some(other)) => return usage(format!("unknown baseline '{other}' (expected adjust_all or adjust_none)")),
        (Some(_), None) => None,
    };
    let data = read_dataset(&data_path)?;
    let mut report: AteReport = match (kind, &a.selection) {
        (Some(kind), _) => baseline(&data, kind).context("estimation")?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading selection: {}", path.display()))?;
            let sel = SelectionResult::from_json(&text).with_context(|| format!("reading selection: {}", path.display()))?;
            estimate(&data, &sel).context("estimation")?
        }
        (None, None) => unreachable!("checked above"),
    };
    if let Some(path) = &a.truth {
        let text = fs::read_to_string(path).with_context(|| format!("reading truth: {}", path.display()))?;
        let truth: TruthFile =
            serde_json::from_str(&text).with_context(|| format!("reading truth: {}", path.display()))?;
        report = report.with_truth(truth.ate).context("estimation")?;
    }
    write_atomic(&out, report.to_json().context("encoding report")?.as_bytes())?;
    if let Some(path) = &a.csv {
        let mut buf = Vec::new();
        report.write_csv(&mut buf).context("writing output")?;
        write_atomic(path, &buf)?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Outcome<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading config: {}", a.config.display()))?;
    let mut cfg: ExperimentConfig = match toml::from_str(&text) {
        Ok(c) => c,
        Err(e) => return usage(format!("config {}: {e}", a.config.display())),
    };
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    if cfg.methods.contains(&Method::Gumbel) && cfg.sweep {
        eprintln!("note: the Gumbel sweep trains {} configurations per run", default_grid().len());
    }
    let report = run_experiment(&cfg).context("benchmark")?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("writing output: {}", a.out_dir.display()))?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf).context("writing output")?;
    write_atomic(&a.out_dir.join("mae.csv"), &buf)?;
    write_atomic(&a.out_dir.join("summary.json"), report.summary_json().context("encoding summary")?.as_bytes())?;
    for s in &report.summary {
        println!(
            "{:<14} mean MAE {:.4} (se {:.4}), {} completed, {} failed",
            s.method.as_str(),
            s.mean_mae,
            s.standard_error,
            s.completed,
            s.failed
        );
    }
    Ok(())
}
