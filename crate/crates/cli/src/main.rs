use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use log::info;

use qmutant::inputs::{build_suite, InputType};
use qmutant::mutate::Operator;
use qmutant::pipeline::{
    analyze, apply_thresholds, calibrate_run, compute_distances, execute, load_corpus,
    load_noise_models, prepare, read_detections, read_distances, report, run_all, strategy_file,
    write_detections, write_distances, ExperimentConfig, HolmScope, Reference, Report, Run,
};
use qmutant::rng::derive_seed;
use qmutant::sim::DEFAULT_QUBIT_CAP;
use qmutant::thresholds::{Strategy, ThresholdSet};
use qmutant::{Error, MetricKind};

#[derive(Parser)]
#[command(
    name = "qmutant",
    version,
    about = "Noise-aware mutation analysis for quantum circuits"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shots per execution.
    #[arg(long, global = true)]
    shots: Option<u64>,
    /// Repetitions per (program, input, backend).
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Quantile used for threshold calibration, in (0, 1).
    #[arg(long, global = true)]
    percentile: Option<f64>,
    /// Noise model JSON file; repeat for several backends.
    #[arg(long = "noise-model", value_name = "JSON", global = true)]
    noise_models: Vec<PathBuf>,
    /// Run directory.
    #[arg(long, global = true, default_value = "qmutant-out")]
    out: PathBuf,
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Build the test suite of every corpus circuit.
    Inputs {
        #[arg(long, default_value = "corpus")]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_QUBIT_CAP)]
        qubit_cap: usize,
    },
    /// Generate, sample and label mutants; creates the run directory.
    Mutate(PrepareArgs),
    /// Execute every CUT and mutant on every backend.
    Run,
    /// Compute the distances CSV from the recorded executions.
    Distances,
    /// Calibrate detection thresholds.
    Calibrate,
    /// Apply thresholds to the distances.
    Detect {
        /// Strategy to apply (noiseless, noise:<model>, middle, above); all when omitted.
        #[arg(long = "strategy")]
        strategies: Vec<String>,
    },
    /// Score the detections.
    Report,
    /// Statistical analysis of distances against circuit and mutant characteristics.
    Analyze {
        #[arg(long, value_enum, default_value_t = ScopeArg::PerMetric)]
        holm_scope: ScopeArg,
    },
    /// Every stage end to end (defaults: 1,000 shots, 5 runs).
    Demo {
        #[command(flatten)]
        prepare: PrepareArgs,
        #[arg(long, value_enum, default_value_t = ScopeArg::PerMetric)]
        holm_scope: ScopeArg,
        /// Also write detections/<strategy>.csv.
        #[arg(long)]
        keep_detections: bool,
    },
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long, default_value = "corpus")]
    corpus: PathBuf,
    /// Sampled mutants per circuit.
    #[arg(long, default_value_t = 20)]
    quota: usize,
    /// Equivalent-by-construction mutants per circuit.
    #[arg(long, default_value_t = 50)]
    equivalents: usize,
    /// Mutation operators; all when omitted.
    #[arg(long = "operator", value_enum)]
    operators: Vec<OperatorArg>,
    /// What mutant executions are compared against.
    #[arg(long, value_enum, default_value_t = ReferenceArg::Theoretical)]
    reference: ReferenceArg,
    /// Skip the noiseless backend.
    #[arg(long)]
    no_noiseless: bool,
    #[arg(long, default_value_t = DEFAULT_QUBIT_CAP)]
    qubit_cap: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum OperatorArg {
    Add,
    Remove,
    Replace,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceArg {
    Theoretical,
    Paired,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    PerMetric,
    Global,
}

impl From<ScopeArg> for HolmScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::PerMetric => HolmScope::PerMetric,
            ScopeArg::Global => HolmScope::Global,
        }
    }
}

fn config(g: &Global, p: &PrepareArgs, shots: u64, runs: usize) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(&p.corpus, &g.out);
    cfg.mutant_quota = p.quota;
    cfg.equivalents = p.equivalents;
    if !p.operators.is_empty() {
        cfg.operators = p
            .operators
            .iter()
            .map(|o| match o {
                OperatorArg::Add => Operator::Add,
                OperatorArg::Remove => Operator::Remove,
                OperatorArg::Replace => Operator::Replace,
            })
            .collect();
        cfg.operators.sort();
        cfg.operators.dedup();
    }
    cfg.reference = match p.reference {
        ReferenceArg::Theoretical => Reference::Theoretical,
        ReferenceArg::Paired => Reference::Paired,
    };
    cfg.include_noiseless = !p.no_noiseless;
    cfg.qubit_cap = p.qubit_cap;
    cfg.shots = g.shots.unwrap_or(shots);
    cfg.runs = g.runs.unwrap_or(runs);
    cfg.master_seed = g.seed.unwrap_or(cfg.master_seed);
    if let Some(q) = g.percentile {
        cfg.percentile = q;
    }
    cfg.noise_models = load_noise_models(&g.noise_models)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads the run directory and rejects flags that disagree with what it was
/// prepared with.
fn load_run(g: &Global) -> Result<Run> {
    let run = Run::load(&g.out)?;
    let cfg = &run.manifest.config;
    let mismatch = |flag: &str, given: String, recorded: String| -> Result<()> {
        if given == recorded {
            return Ok(());
        }
        Err(Error::InvalidArgument(format!(
            "--{flag} {given} differs from {recorded} recorded in {}; rerun `mutate` to change it",
            g.out.join("manifest.json").display()
        ))
        .into())
    };
    if let Some(s) = g.seed {
        mismatch("seed", s.to_string(), cfg.master_seed.to_string())?;
    }
    if let Some(s) = g.shots {
        mismatch("shots", s.to_string(), cfg.shots.to_string())?;
    }
    if let Some(r) = g.runs {
        mismatch("runs", r.to_string(), cfg.runs.to_string())?;
    }
    if let Some(q) = g.percentile {
        mismatch("percentile", q.to_string(), cfg.percentile.to_string())?;
    }
    if !g.noise_models.is_empty() {
        let given = load_noise_models(&g.noise_models)?;
        if given != cfg.noise_models {
            let names = |v: &[qmutant::NoiseModel]| {
                v.iter()
                    .map(|m| m.name.clone())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let (given, recorded) = (names(&given), names(&cfg.noise_models));
            if given == recorded {
                mismatch(
                    "noise-model",
                    format!("{given} (parameters)"),
                    recorded.clone(),
                )?;
            }
            mismatch("noise-model", given, recorded)?;
        }
    }
    Ok(run)
}

fn cmd_inputs(g: &Global, corpus: &Path, cap: usize) -> Result<()> {
    let (circuits, skipped) = load_corpus(corpus, cap)?;
    let seed = g.seed.unwrap_or(0);
    for name in &skipped {
        println!("{name}: skipped, above the {cap}-qubit cap");
    }
    for c in &circuits {
        let suite = build_suite(c.n_qubits, derive_seed(seed, &[&c.name, "suite"]))?;
        let dir = g.out.join("suites").join(&c.name);
        suite.save(&dir)?;
        let classical = suite
            .inputs
            .iter()
            .filter(|i| i.input_type == InputType::Classical)
            .count();
        println!(
            "{}: {} inputs ({} classical, {} quantum) -> {}",
            c.name,
            suite.len(),
            classical,
            suite.len() - classical,
            dir.display()
        );
    }
    Ok(())
}

fn cmd_mutate(g: &Global, p: &PrepareArgs) -> Result<()> {
    let cfg = config(
        g,
        p,
        qmutant::thresholds::DEFAULT_SHOTS,
        qmutant::thresholds::DEFAULT_RUNS,
    )?;
    let run = prepare(&cfg)?;
    for c in &run.cuts {
        let i = &c.info;
        println!(
            "{}: {} qubits, {} gates, {} output, {} mutants ({} equivalent), {} inputs",
            i.name,
            i.n_qubits,
            i.n_gates,
            i.output_type,
            i.n_mutants,
            i.n_equivalent,
            c.suite.len()
        );
    }
    println!("backends: {}", run.manifest.backends.join(", "));
    Ok(())
}

fn cmd_run(g: &Global) -> Result<()> {
    let run = load_run(g)?;
    let n = execute(&run)?;
    println!(
        "{n} executions written under {}",
        run.dir.join("executions").display()
    );
    Ok(())
}

fn cmd_distances(g: &Global) -> Result<()> {
    let run = load_run(g)?;
    let rows = compute_distances(&run)?;
    let path = run.dir.join("distances.csv");
    write_distances(&path, &rows)?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}

fn print_thresholds(set: &ThresholdSet) {
    let strategies = set.strategies();
    print!("{:<18}", "metric");
    for s in &strategies {
        print!(" {:>14}", s.to_string());
    }
    println!();
    for m in MetricKind::ALL {
        print!("{:<18}", m.name());
        for s in &strategies {
            match set.get(m, s) {
                Some(t) => print!(" {t:>14.6}"),
                None => print!(" {:>14}", "-"),
            }
        }
        println!();
    }
}

fn cmd_calibrate(g: &Global) -> Result<()> {
    let run = load_run(g)?;
    let set = calibrate_run(&run)?;
    let path = run.dir.join("thresholds.json");
    set.save(&path)?;
    print_thresholds(&set);
    for v in set.ordering_violations() {
        println!("warning: {v}");
    }
    println!("-> {}", path.display());
    Ok(())
}

fn cmd_detect(g: &Global, names: &[String]) -> Result<()> {
    let distances = read_distances(&g.out.join("distances.csv"))?;
    let set = ThresholdSet::load(&g.out.join("thresholds.json"))?;
    let strategies = if names.is_empty() {
        set.strategies()
    } else {
        names
            .iter()
            .map(|s| s.parse())
            .collect::<qmutant::Result<Vec<Strategy>>>()?
    };
    for s in &strategies {
        let rows = apply_thresholds(&distances, &set, s)?;
        let path = g
            .out
            .join("detections")
            .join(format!("{}.csv", strategy_file(s)));
        write_detections(&path, &rows)?;
        let flagged = rows.iter().filter(|r| r.detected).count();
        println!(
            "{s}: {flagged} of {} comparisons flagged -> {}",
            rows.len(),
            path.display()
        );
    }
    Ok(())
}

fn print_report(r: &Report) {
    println!(
        "{:<16} {:<16} {:<14} {:>5} {:>7} {:>7} {:>7} {:>7} {:>9}",
        "metric", "strategy", "backend", "n", "acc", "prec", "recall", "f1", "misclass"
    );
    for c in &r.cells {
        let s = &c.per_mutant;
        println!(
            "{:<16} {:<16} {:<14} {:>5} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>9.3}",
            c.metric.name(),
            c.strategy.to_string(),
            c.backend,
            c.n_mutants,
            s.accuracy,
            s.precision,
            s.recall,
            s.f1,
            c.per_comparison.confusion.misclassification_rate()
        );
    }
}

fn cmd_report(g: &Global) -> Result<()> {
    let dir = g.out.join("detections");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("reading {}; run `detect` first", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(read_detections(f)?);
    }
    let r = report(&rows)?;
    let path = g.out.join("report.json");
    r.save(&path)?;
    print_report(&r);
    println!("-> {}", path.display());
    Ok(())
}

fn cmd_analyze(g: &Global, scope: HolmScope) -> Result<()> {
    let run = load_run(g)?;
    let rows = read_distances(&run.dir.join("distances.csv"))?;
    let a = analyze(&run, &rows, scope)?;
    a.save(&run.dir)?;
    let significant = a
        .stats
        .iter()
        .filter(|s| s.p_holm < qmutant::analysis::ALPHA)
        .count();
    println!(
        "{} characteristic tests ({} significant after Holm), {} dispersion cells -> {}",
        a.stats.len(),
        significant,
        a.dispersion.len(),
        run.dir.display()
    );
    Ok(())
}

fn cmd_demo(g: &Global, p: &PrepareArgs, scope: HolmScope, keep: bool) -> Result<()> {
    let cfg = config(g, p, 1000, 5)?;
    let start = std::time::Instant::now();
    let a = run_all(&cfg, keep, scope)?;
    info!("finished in {:.1} s", start.elapsed().as_secs_f64());
    print_thresholds(&ThresholdSet::load(&a.thresholds)?);
    println!();
    print_report(&Report::load(&a.report)?);
    println!(
        "{} executions, {} distance rows in {:.1} s -> {}",
        a.n_executions,
        a.n_distances,
        start.elapsed().as_secs_f64(),
        a.run_dir.display()
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Inputs { corpus, qubit_cap } => cmd_inputs(g, corpus, *qubit_cap),
        Command::Mutate(p) => cmd_mutate(g, p),
        Command::Run => cmd_run(g),
        Command::Distances => cmd_distances(g),
        Command::Calibrate => cmd_calibrate(g),
        Command::Detect { strategies } => cmd_detect(g, strategies),
        Command::Report => cmd_report(g),
        Command::Analyze { holm_scope } => cmd_analyze(g, (*holm_scope).into()),
        Command::Demo {
            prepare,
            holm_scope,
            keep_detections,
        } => cmd_demo(g, prepare, (*holm_scope).into(), *keep_detections),
    }
}

/// 2 for configuration errors, 3 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(q) if q.is_config() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // core errors already carry their cause in the message
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
