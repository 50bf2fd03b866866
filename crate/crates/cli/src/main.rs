use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use duse_core::dataio::{self, Manifest, SplitIndices};
use duse_core::expansion::{self, ExpansionPlan, ExpansionResult, Method};
use duse_core::harness::{self, selftest, EvalConfig, ExperimentConfig, TableFormat};
use duse_core::sigsynth::{self, GenSpec, ModulationScheme};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "duse", version, about = "Uncertainty-driven dataset expansion for modulation recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic modulation dataset
    Gen(GenArgs),
    /// Filter by SNR and split into target, auxiliary and test sets
    Split(SplitArgs),
    /// Expand the target set from the auxiliary pool
    Expand(ExpandArgs),
    /// Train on an expanded target and measure test accuracy
    Eval(EvalArgs),
    /// Tabulate evaluation reports as methods x rates
    Report(ReportArgs),
    /// Run the built-in oracle and gradient checks
    Selftest,
    /// Run a full experiment from an INI config
    Run(RunArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated scheme names
    #[arg(long, value_delimiter = ',', default_value = "BPSK,QPSK,8PSK,PAM4,QAM16,QAM64,CPFSK,GFSK")]
    schemes: Vec<ModulationScheme>,
    #[arg(long, default_value_t = -20, allow_hyphen_values = true)]
    snr_min: i32,
    #[arg(long, default_value_t = 18, allow_hyphen_values = true)]
    snr_max: i32,
    #[arg(long, default_value_t = 2)]
    snr_step: i32,
    #[arg(long, default_value_t = 250)]
    per_cell: usize,
    #[arg(long, default_value_t = 128)]
    len: usize,
    #[arg(long, default_value_t = 8)]
    sps: usize,
    #[arg(long, default_value_t = 0.35)]
    rolloff: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Split sidecar JSON to write
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    target_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    test_frac: f64,
    /// Keep only records with SNR strictly above this level
    #[arg(long, allow_hyphen_values = true)]
    snr_min_exclusive: Option<i32>,
    /// Where the filtered dataset goes (default: next to the input)
    #[arg(long)]
    filtered_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExpandArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    splits: PathBuf,
    #[arg(long, default_value = "duse")]
    method: Method,
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 4)]
    rounds: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long)]
    balance: bool,
    /// Continue each round from the previous round's model
    #[arg(long)]
    warm_start: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Forgetting probe epochs
    #[arg(long, default_value_t = 50)]
    probe_epochs: usize,
    /// ExpansionResult JSON to write
    #[arg(long)]
    out: PathBuf,
    /// Also write the last round's score report as CSV
    #[arg(long)]
    scores_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    splits: PathBuf,
    /// ExpansionResult to evaluate; without it the initial target is used
    #[arg(long)]
    expansion: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    /// Base evaluation seed (default: the expansion plan's seed)
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    id: Option<String>,
    /// EvalReport JSON to write
    #[arg(long)]
    out: PathBuf,
    /// Penultimate features of the training set under the first seed's model
    #[arg(long)]
    features_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long, default_value = "text")]
    format: TableFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Experiment id prefix (default: config file stem)
    #[arg(long)]
    id: Option<String>,
}

fn gen(args: GenArgs) -> Result<()> {
    let spec = GenSpec {
        schemes: args.schemes,
        snr_min_db: args.snr_min,
        snr_max_db: args.snr_max,
        snr_step_db: args.snr_step,
        per_class_per_snr: args.per_cell,
        signal_len: args.len,
        samples_per_symbol: args.sps,
        rrc_rolloff: args.rolloff,
        seed: args.seed,
    };
    let dataset = sigsynth::generate_dataset(&spec)?;
    let digest = dataio::write_dataset(&dataset, &args.out)?;
    let manifest = Manifest {
        classes: sigsynth::class_names(&spec),
    };
    dataio::write_json(&manifest, &Manifest::path_for(&args.out))?;
    println!("wrote {} records to {} (digest {digest})", dataset.len(), args.out.display());
    Ok(())
}

fn default_filtered_path(data: &Path, threshold: i32) -> PathBuf {
    let stem = data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    data.with_file_name(format!("{stem}.snr-gt{threshold}.amrd"))
}

fn split(args: SplitArgs) -> Result<()> {
    let mut dataset = dataio::read_dataset(&args.data)?;
    if let Some(threshold) = args.snr_min_exclusive {
        let path = args
            .filtered_out
            .unwrap_or_else(|| default_filtered_path(&args.data, threshold));
        dataset = dataio::filter_by_snr(&dataset, threshold);
        dataio::write_dataset(&dataset, &path)?;
        let manifest_in = Manifest::path_for(&args.data);
        if manifest_in.exists() {
            let manifest: Manifest = dataio::read_json(&manifest_in)?;
            dataio::write_json(&manifest, &Manifest::path_for(&path))?;
        }
        println!("kept {} records with SNR > {threshold} dB in {}", dataset.len(), path.display());
    } else if args.filtered_out.is_some() {
        return Err("--filtered-out needs --snr-min-exclusive".into());
    }
    let splits = dataio::make_splits(&dataset, args.target_frac, args.test_frac, args.seed)?;
    dataio::write_json(&splits, &args.out)?;
    println!(
        "target {}, auxiliary {}, test {} -> {}",
        splits.target.len(),
        splits.auxiliary.len(),
        splits.test.len(),
        args.out.display()
    );
    Ok(())
}

fn expand(args: ExpandArgs) -> Result<()> {
    let dataset = dataio::read_dataset(&args.data)?;
    let splits: SplitIndices = dataio::read_json(&args.splits)?;
    let plan = ExpansionPlan {
        method: args.method,
        rate: args.rate,
        rounds: args.rounds,
        epochs: args.epochs,
        seed: args.seed,
        balance: args.balance || args.method == Method::DuseBalanced,
        warm_start: args.warm_start,
        batch_size: args.batch,
        learning_rate: args.lr,
        probe_epochs: args.probe_epochs,
    };
    let traced = expansion::expand(&dataset, &splits, &plan)?;
    dataio::write_json(&traced.result, &args.out)?;
    if let Some(path) = &args.scores_out {
        let report = traced
            .reports
            .last()
            .ok_or_else(|| format!("method {} produces no score report", plan.method))?;
        report.write_csv(path)?;
    }
    let r = &traced.result;
    println!(
        "{}: selected {} in {} round(s); target {} -> {}",
        plan.method,
        r.budget,
        r.per_round_selected.len(),
        splits.target.len(),
        r.expanded_target.len()
    );
    for d in &r.diagnostics {
        println!("note: {d}");
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let dataset = dataio::read_dataset(&args.data)?;
    let splits: SplitIndices = dataio::read_json(&args.splits)?;
    let digest = dataset.digest()?;
    if splits.source_digest != digest {
        return Err(format!("splits were made for dataset {} but {} has digest {digest}", splits.source_digest, args.data.display()).into());
    }
    let expansion: Option<ExpansionResult> = args.expansion.as_deref().map(dataio::read_json).transpose()?;
    let (train, method, rate, rounds, plan_seed) = match &expansion {
        Some(e) => {
            if e.source_digest != digest {
                return Err(format!("expansion was made for dataset {}", e.source_digest).into());
            }
            (e.expanded_target.clone(), e.plan.method.to_string(), e.plan.rate, e.plan.rounds, e.plan.seed)
        }
        None => (splits.target.clone(), "none".to_string(), 0.0, 0, 0),
    };
    let config = EvalConfig {
        epochs: args.epochs,
        num_seeds: args.seeds,
        learning_rate: args.lr,
        batch_size: args.batch,
        base_seed: args.seed.unwrap_or(plan_seed),
    };
    let (report, models) = harness::evaluate_with_models(&dataset, &train, &splits.test, &config)?;
    let id = args.id.unwrap_or_else(|| format!("{method}-r{rate}"));
    let report = report.labeled(&id, &method, rate, rounds);
    harness::write_report(&report, &args.out)?;
    if let Some(path) = &args.features_out {
        harness::dump_features(&models[0], &dataset, &train, path)?;
    }
    println!(
        "{id}: accuracy {} over {} seeds ({} training samples)",
        harness::format_cell(report.mean_accuracy, report.std_accuracy),
        report.per_seed_accuracy.len(),
        report.train_size
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| harness::read_report(p))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let table = harness::render_report(&reports, args.format)?;
    match &args.out {
        Some(path) => dataio::atomic_write(path, table.as_bytes())?,
        None => print!("{table}"),
    }
    Ok(())
}

fn run_selftest() -> Result<()> {
    let outcomes = selftest::run_all();
    for o in &outcomes {
        let status = if o.passed { "ok  " } else { "FAIL" };
        println!("{status} {:<20} {:>7.2}s  {}", o.name, o.seconds, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(format!("{failed} selftest suite(s) failed").into());
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let config = ExperimentConfig::load(&args.config)?;
    let id = args.id.unwrap_or_else(|| {
        args.config
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "experiment".into())
    });
    let artifacts = harness::run_experiment(&config, &args.out_dir, &id)?;
    print!("{}", harness::render_report(&artifacts.reports, TableFormat::Text)?);
    println!("artifacts in {}", artifacts.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Split(a) => split(a),
        Command::Expand(a) => expand(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Selftest => run_selftest(),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
