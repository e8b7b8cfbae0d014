//! `hfr`: hierarchical forecast reconciliation from the command line.
//!
//! Subcommands cover the full pipeline: reconcile a forecast cube at one
//! origin, tune a combination penalty, score methods across origins, and
//! run the built-in three-series simulation study.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use hfr_cli::io::{self, CliError};
use hfr_core::evaluate::{self, EvaluationOptions, ForecastTensor};
use hfr_core::penreg::GroupLassoOptions;
use hfr_core::reconcile::Method;
use hfr_core::simulate::{self, Scenario};
use hfr_core::tuning::CvPlan;

/// Hierarchical forecast reconciliation toolkit.
#[derive(Debug, Parser)]
#[command(name = "hfr", version, about)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores). Results
    /// are identical for any thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reconcile the forecast cube at one origin; prints CSV.
    Reconcile(ReconcileArgs),
    /// Select a combination penalty by rolling-origin cross validation;
    /// prints the grid, loss curve, and selection as JSON.
    Tune(TuneArgs),
    /// Score reconciliation methods against the base forecasts over every
    /// usable origin; prints a JSON report.
    Evaluate(EvaluateArgs),
    /// Run the built-in three-series simulation study; prints JSON.
    Simulate(SimulateArgs),
    /// Run a small fixed-seed study and print a comparison table.
    Demo,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Hierarchy edges CSV: `child,parent`, empty parent marks a root.
    #[arg(long)]
    hierarchy: PathBuf,

    /// Wide actuals CSV: a `time` column, then one column per series.
    #[arg(long)]
    actuals: PathBuf,

    /// Long base forecast CSV: `origin,horizon,node,value`.
    #[arg(long)]
    forecasts: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Cap on training pairs per fit, newest first (default: all).
    #[arg(long)]
    window: Option<usize>,

    /// Fewest training pairs a data-driven fit may run on.
    #[arg(long, default_value_t = 10)]
    min_train: usize,

    /// Tune each horizon separately instead of reusing the shortest
    /// horizon's selected penalty.
    #[arg(long)]
    tune_per_horizon: bool,

    /// Held-out pairs per penalty evaluation during tuning.
    #[arg(long, default_value_t = 40)]
    validation_len: usize,

    /// Stride between held-out pairs during tuning.
    #[arg(long, default_value_t = 1)]
    step: usize,

    /// Grid points sharing one fit along the penalty path during tuning.
    #[arg(long, default_value_t = 1)]
    refit_every: usize,

    /// Fewest training pairs a validation fold may fit on.
    #[arg(long, default_value_t = 10)]
    cv_min_train: usize,
}

impl FitArgs {
    fn options(&self) -> EvaluationOptions {
        EvaluationOptions {
            window: self.window.unwrap_or(usize::MAX),
            min_train: self.min_train,
            tune_per_horizon: self.tune_per_horizon,
            cv: CvPlan {
                validation_len: self.validation_len,
                step: self.step,
                refit_every: self.refit_every,
                min_train: self.cv_min_train,
            },
            lasso: GroupLassoOptions::default(),
        }
    }
}

#[derive(Debug, Args)]
struct ReconcileArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Method tag: bu | ols | wlsv | mint[:sample|:diag|:shrink] |
    /// emintu[:c0|:c1] | icomb:<none|ridge|mlasso>:<none|x|xy>:<c0|c1>.
    #[arg(long)]
    method: String,

    /// Forecast origin to reconcile (default: latest in the cube).
    #[arg(long)]
    origin: Option<String>,

    /// Skip tuning and use this penalty at every horizon.
    #[arg(long)]
    penalty: Option<f64>,

    #[command(flatten)]
    fit: FitArgs,

    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Method tag; must carry a penalty (icomb:ridge:... or
    /// icomb:mlasso:...).
    #[arg(long)]
    method: String,

    /// Origin whose training window is tuned (default: latest with
    /// observed targets).
    #[arg(long)]
    origin: Option<String>,

    /// Horizon to tune for (default: shortest in the cube).
    #[arg(long)]
    horizon: Option<usize>,

    #[command(flatten)]
    fit: FitArgs,

    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Comma-separated method tags to score.
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<String>,

    #[command(flatten)]
    fit: FitArgs,

    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Data generating process: univariate | factor.
    #[arg(long, default_value = "univariate")]
    scenario: String,

    /// Monte Carlo replications.
    #[arg(long, default_value_t = 10_000)]
    reps: usize,

    /// Base seed; replication r draws from stream r of this seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Draws behind the oracle covariance and combination coefficients.
    #[arg(long, default_value_t = simulate::DEFAULT_ORACLE_DRAWS)]
    oracle_draws: usize,

    /// Check that the half-and-half top-down map keeps conditionally
    /// unbiased forecasts unbiased, instead of running the accuracy study.
    #[arg(long)]
    unbiasedness_check: bool,

    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(error) = run(cli) {
        eprintln!("error: {error}");
        std::process::exit(error.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot use {threads} threads: {e}")))?;
    }
    match cli.command {
        Command::Reconcile(args) => reconcile(args),
        Command::Tune(args) => tune(args),
        Command::Evaluate(args) => evaluate_methods(args),
        Command::Simulate(args) => simulate_study(args),
        Command::Demo => demo(),
    }
}

fn parse_method(tag: &str) -> Result<Method, CliError> {
    tag.parse()
        .map_err(|e: hfr_core::Error| CliError::Usage(e.to_string()))
}

fn reconcile(args: ReconcileArgs) -> Result<(), CliError> {
    let hierarchy = io::read_hierarchy(&args.data.hierarchy)?;
    let actuals = io::read_actuals(&args.data.actuals)?;
    let records = io::read_forecasts(&args.data.forecasts)?;
    let cube = ForecastTensor::from_records(&records)?;
    let method = parse_method(&args.method)?;
    let output = evaluate::reconcile_at_origin(
        &hierarchy,
        &actuals,
        &cube,
        method,
        args.origin.as_deref(),
        args.penalty,
        &args.fit.options(),
    )?;
    io::emit(args.out.as_deref(), &io::reconciled_csv(&output))
}

fn tune(args: TuneArgs) -> Result<(), CliError> {
    let hierarchy = io::read_hierarchy(&args.data.hierarchy)?;
    let actuals = io::read_actuals(&args.data.actuals)?;
    let records = io::read_forecasts(&args.data.forecasts)?;
    let cube = ForecastTensor::from_records(&records)?;
    let method = parse_method(&args.method)?;
    let result = evaluate::tune_at_origin(
        &hierarchy,
        &actuals,
        &cube,
        method,
        args.origin.as_deref(),
        args.horizon,
        &args.fit.options(),
    )?;
    io::emit(args.out.as_deref(), &io::to_json(&result))
}

fn evaluate_methods(args: EvaluateArgs) -> Result<(), CliError> {
    let hierarchy = io::read_hierarchy(&args.data.hierarchy)?;
    let actuals = io::read_actuals(&args.data.actuals)?;
    let records = io::read_forecasts(&args.data.forecasts)?;
    let cube = ForecastTensor::from_records(&records)?;
    let methods: Vec<Method> = args
        .methods
        .iter()
        .map(|tag| parse_method(tag))
        .collect::<Result<_, _>>()?;
    let report = evaluate::rolling_evaluate(
        &hierarchy,
        &actuals,
        &cube,
        &methods,
        &args.fit.options(),
    )?;
    io::emit(args.out.as_deref(), &io::to_json(&report))
}

fn simulate_study(args: SimulateArgs) -> Result<(), CliError> {
    if args.unbiasedness_check {
        let check = simulate::top_down_unbiasedness_check(args.reps, args.seed)?;
        return io::emit(args.out.as_deref(), &io::to_json(&check));
    }
    let scenario: Scenario = args
        .scenario
        .parse()
        .map_err(|e: hfr_core::Error| CliError::Usage(e.to_string()))?;
    let report = simulate::run_study_with(scenario, args.reps, args.seed, args.oracle_draws)?;
    io::emit(args.out.as_deref(), &io::to_json(&report))
}

fn demo() -> Result<(), CliError> {
    const REPS: usize = 10_000;
    const SEED: u64 = 29;
    let report = simulate::run_study(Scenario::Univariate, REPS, SEED)?;
    let reference = simulate::reference_sums(Scenario::Univariate);
    let rows = [
        ("base (unreconciled)", report.base, reference.base),
        ("ols projection", report.ols, reference.ols),
        ("mint, oracle covariance", report.mint_oracle, reference.mint_oracle),
        ("combination, oracle coefficients", report.comb_oracle, reference.comb_oracle),
    ];
    let mut body = format!(
        "three-series study, univariate forecasts, {REPS} replications (seed {SEED})\n\
         sum of one-step MSFEs over the three series:\n\n\
         {:<34}{:>10}{:>12}\n",
        "forecasts", "observed", "reference"
    );
    for (label, observed, expected) in rows {
        body.push_str(&format!("{label:<34}{observed:>10.3}{expected:>12.3}\n"));
    }
    io::emit(None, &body)
}
