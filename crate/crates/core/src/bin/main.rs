use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use panel_consensus::data::{
    concat_shift, gen_classwise_experts, gen_equicorr_voters, load_dataset, read_dataset, write_dataset, ClasswiseConfig,
    Dataset,
};
use panel_consensus::harness::{
    format_sweep_table, run_experiment, sweep, theory_report, write_result, write_sweep, ExperimentConfig, PolicyKind,
    TheoryFamily, DEFAULT_THRESHOLDS,
};
use panel_consensus::rng;
use panel_consensus::simplex::AggregationFn;
use panel_consensus::{Error, Result};

#[derive(Parser)]
#[command(name = "panel-consensus", version, about = "Predict a panel's aggregate label from a classifier and as few expert votes as possible")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy online over a dataset.
    Run(RunArgs),
    /// Run a policy at several thresholds over reshuffled copies of a dataset.
    Sweep(SweepArgs),
    /// Write a synthetic dataset.
    Gen(GenArgs),
    /// Closed-form against simulated random-query error.
    Theory(TheoryArgs),
    /// Check a dataset file against the record format.
    Validate {
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Agg {
    Consensus,
    Any,
    All,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "bayes")]
    policy: PolicyKind,
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Refit after every example on only the most recent W records.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    /// Warmup of warm-started refits.
    #[arg(long)]
    refit_warmup: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, value_enum, default_value = "consensus")]
    agg: Agg,
    /// Positive class (1-based) for the any and all aggregates.
    #[arg(long, default_value_t = 1)]
    positive: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long, default_value_t = 12)]
    runs: usize,
    /// Keep only the first N shuffled records of each run.
    #[arg(long)]
    per_run: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    ThreeClass,
    LowNoise,
    HighNoise,
}

impl Preset {
    fn config(self) -> ClasswiseConfig {
        match self {
            Preset::ThreeClass => ClasswiseConfig::three_class_preset(),
            Preset::LowNoise => ClasswiseConfig::low_noise_preset(),
            Preset::HighNoise => ClasswiseConfig::high_noise_preset(),
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(subcommand)]
    kind: GenKind,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GenKind {
    /// Binary panel of sign-thresholded equicorrelated Gaussian voters.
    Equicorr {
        #[arg(long = "H", default_value_t = 3)]
        experts: usize,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long = "T", default_value_t = 250)]
        examples: usize,
        #[arg(long, default_value_t = 0.5)]
        classifier_corr: f64,
    },
    /// Class-wise expertise panel from a preset or a JSON config file.
    Classwise {
        #[arg(long, value_enum, default_value = "three-class")]
        preset: Preset,
        /// JSON ClasswiseConfig overriding the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "T", default_value_t = 250)]
        examples: usize,
    },
    /// Two classwise segments back to back, tagged "before" and "after".
    Shift {
        #[arg(long, value_enum, default_value = "low-noise")]
        first: Preset,
        #[arg(long, value_enum, default_value = "high-noise")]
        second: Preset,
        #[arg(long, default_value_t = 125)]
        first_len: usize,
        #[arg(long, default_value_t = 125)]
        second_len: usize,
    },
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long = "H", default_value_t = 10)]
    experts: usize,
    /// Comma-separated consensus sizes.
    #[arg(long, value_delimiter = ',')]
    nc: Vec<usize>,
    /// Comma-separated correlations for three equicorrelated voters.
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,7,9")]
    nq: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn experiment_config(a: &RunArgs, k: usize) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::desk(a.policy, a.threshold, a.seed);
    cfg.window = a.window;
    if let Some(c) = a.chains {
        cfg.chain.chains = c;
    }
    if let Some(w) = a.warmup {
        cfg.chain.warmup = w;
    }
    if let Some(d) = a.draws {
        cfg.chain.draws = d;
    }
    if let Some(d) = a.max_depth {
        cfg.chain.max_depth = d;
    }
    if let Some(w) = a.refit_warmup {
        cfg.refit_warmup = w;
    }
    if a.positive == 0 || a.positive > k {
        return Err(Error::Domain(format!("positive class {} outside 1..={k}", a.positive)));
    }
    let positive = a.positive - 1;
    cfg.aggregation = match a.agg {
        Agg::Consensus => AggregationFn::Consensus,
        Agg::Any => AggregationFn::AnyPositive { positive },
        Agg::All => AggregationFn::UnanimousPositive { positive },
    };
    Ok(cfg)
}

fn gen(a: &GenArgs) -> Result<()> {
    let ds: Dataset = match &a.kind {
        GenKind::Equicorr { experts, rho, examples, classifier_corr } => {
            gen_equicorr_voters(*experts, *rho, *examples, *classifier_corr, &mut rng::stream(a.seed, "gen", 0))?
        }
        GenKind::Classwise { preset, config, examples } => {
            let cfg = match config {
                Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))
                    .map_err(|e| Error::Schema(format!("bad classwise config: {e}")))?,
                None => preset.config(),
            };
            gen_classwise_experts(&cfg, *examples, &mut rng::stream(a.seed, "gen", 0))?
        }
        GenKind::Shift { first, second, first_len, second_len } => {
            let x = gen_classwise_experts(&first.config(), *first_len, &mut rng::stream(a.seed, "gen", 0))?;
            let y = gen_classwise_experts(&second.config(), *second_len, &mut rng::stream(a.seed, "gen", 1))?;
            concat_shift(&x.with_segment("before"), &y.with_segment("after"))?
        }
    };
    write_dataset(&ds, output(a.out.as_deref())?)
}

fn theory(a: &TheoryArgs) -> Result<()> {
    let rows = theory_report(&a.rho, a.experts, &a.nc, &a.nq, a.trials, a.seed)?;
    let mut w = output(None)?;
    writeln!(w, "{:<16} {:>3} {:>6} {:>4} {:>10} {:>10} {:>9} {:>9}  flag", "family", "H", "param", "n_q", "closed", "simulated", "se", "|diff|")?;
    for r in &rows {
        let family = match r.family {
            TheoryFamily::FixedConsensus => "fixed_consensus",
            TheoryFamily::Equicorrelated => "equicorrelated",
        };
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
        writeln!(
            w,
            "{family:<16} {:>3} {:>6.3} {:>4} {:>10} {:>10.6} {:>9.6} {:>9}  {}",
            r.experts,
            r.param,
            r.n_q,
            fmt(r.closed),
            r.simulated,
            r.se,
            fmt(r.abs_diff),
            if r.flagged { "!" } else { "" }
        )?;
    }
    w.flush()?;
    Ok(())
}

fn validate(path: &Path) -> ExitCode {
    let parsed = File::open(path).map_err(Error::from).and_then(|f| read_dataset(BufReader::new(f)));
    match parsed {
        Ok((ds, floored)) => {
            println!(
                "ok: {} records, K={} M={} H={}, {floored} probability vectors floored",
                ds.len(),
                ds.classes(),
                ds.classifiers(),
                ds.experts()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("invalid: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(a) => {
            let ds = load_dataset(&a.data)?;
            let cfg = experiment_config(&a, ds.classes())?;
            let res = run_experiment(&ds, &cfg)?;
            eprintln!(
                "error {:.4}  mean queries {:.3}  ece {:.4}",
                res.summary.error_rate, res.summary.mean_queries, res.summary.ece
            );
            write_result(&res, output(a.out.as_deref())?)?;
        }
        Command::Sweep(a) => {
            let ds = load_dataset(&a.run.data)?;
            let cfg = experiment_config(&a.run, ds.classes())?;
            let thresholds = a.thresholds.clone().unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
            let res = sweep(&ds, &cfg, &thresholds, a.runs, a.per_run)?;
            eprint!("{}", format_sweep_table(&res));
            write_sweep(&res, &cfg, output(a.run.out.as_deref())?)?;
        }
        Command::Gen(a) => gen(&a)?,
        Command::Theory(a) => theory(&a)?,
        Command::Validate { data } => return Ok(validate(&data)),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
