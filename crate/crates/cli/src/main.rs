use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use b2exp::attacks::{self, AttackReport, Target};
use b2exp::bench::{self, BenchOptions, BenchRecord, Config};
use b2exp::{
    os_bits, seeded_bits, BitSource, Eta, Laplace, LaplaceConfig, Mechanism, MechanismConfig, PrecisionStrategy,
    SampleOptions, Variant,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

/// Exact base-2 exponential mechanism.
#[derive(Parser)]
#[command(name = "b2exp", version)]
struct Cli {
    /// Seed for a reproducible bit stream; OS randomness otherwise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write benchmark records or Laplace samples to this CSV file.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Print reports as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pick one outcome index for a list of utilities (lower is better).
    Sample(SampleArgs),
    /// Draw clamped discrete Laplace noise around a target.
    Laplace(LaplaceArgs),
    /// Run a floating-point attack against the naive or exact mechanism.
    Attack {
        #[command(subcommand)]
        attack: AttackCommand,
    },
    /// Run a benchmark scenario and emit CSV records.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Sampling {
    /// Privacy parameter as x,y,z: the base is (x/2^y)^z.
    #[arg(long, default_value = "1,1,1")]
    eta: Eta,
    /// Minimum rejection-loop iterations.
    #[arg(long, default_value_t = 1)]
    k: u64,
    #[arg(long, default_value = "full-scan")]
    variant: Variant,
    #[arg(long, value_enum, default_value_t = Strategy::Theoretical)]
    precision: Strategy,
}

impl Sampling {
    fn options(&self) -> Result<SampleOptions> {
        Ok(SampleOptions::new(self.k, self.variant)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Theoretical,
    Empirical,
}

impl From<Strategy> for PrecisionStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Theoretical => PrecisionStrategy::Theoretical,
            Strategy::Empirical => PrecisionStrategy::Empirical,
        }
    }
}

#[derive(Args)]
struct SampleArgs {
    /// Comma-separated utilities.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    utilities: Vec<f64>,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    u_min: i64,
    #[arg(long, allow_hyphen_values = true)]
    u_max: i64,
    /// Maximum outcome count; defaults to the number of utilities.
    #[arg(long)]
    o_max: Option<usize>,
    /// Number of independent draws.
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[command(flatten)]
    sampling: Sampling,
}

#[derive(Args)]
struct LaplaceArgs {
    #[arg(long, allow_hyphen_values = true)]
    lower: f64,
    #[arg(long, allow_hyphen_values = true)]
    upper: f64,
    /// Grid spacing.
    #[arg(long)]
    gamma: f64,
    #[arg(long, allow_hyphen_values = true)]
    target: f64,
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[command(flatten)]
    sampling: Sampling,
}

#[derive(Subcommand)]
enum AttackCommand {
    /// Underflow every weight but one to zero.
    Zero {
        #[arg(long, default_value_t = 2.0)]
        eps: f64,
        /// Number of outcomes.
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        common: AttackArgs,
    },
    /// Make small weights vanish from a running sum.
    Truncated {
        #[arg(long, default_value_t = 30.0)]
        eps: f64,
        #[arg(long, default_value_t = 4096)]
        max_outcomes: usize,
        #[command(flatten)]
        common: AttackArgs,
    },
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, value_enum, default_value_t = TargetArg::Naive)]
    target: TargetArg,
    /// Privacy parameter of the exact target.
    #[arg(long, default_value = "1,1,1")]
    eta: Eta,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Naive,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    OutcomeScaling,
    UtilityRange,
    PrecisionMethod,
    Laplace,
    TimingChannel,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_enum)]
    scenario: Scenario,
    /// Instance sizes: n for outcome-scaling and utility-range, grid
    /// exponents e (γ = 2^-e) for laplace, k for timing-channel.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<u64>>,
    /// Configuration labels.
    #[arg(long, value_delimiter = ',', default_value = "naive,base2")]
    configs: Vec<Config>,
    #[arg(long, default_value_t = 10)]
    reps: u64,
    /// Run trials on a thread pool.
    #[arg(long)]
    parallel: bool,
    /// Minimum rejection-loop iterations for exact configurations.
    #[arg(long, default_value_t = 1)]
    k: u64,
    /// Calls timed together in each timing-channel repetition.
    #[arg(long, default_value_t = 20)]
    batch: u64,
}

fn bits(seed: Option<u64>) -> Box<dyn BitSource> {
    match seed {
        Some(s) => Box::new(seeded_bits(s)),
        None => Box::new(os_bits()),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut out = io::stdout().lock();
    match &cli.command {
        Command::Sample(args) => sample(&cli, args, &mut out),
        Command::Laplace(args) => laplace(&cli, args, &mut out),
        Command::Attack { attack } => attack_cmd(&cli, attack, &mut out),
        Command::Bench(args) => bench_cmd(&cli, args, &mut out),
    }
}

fn reject_csv(cli: &Cli) -> Result<()> {
    if cli.csv.is_some() {
        bail!("--csv applies to bench and laplace only");
    }
    Ok(())
}

fn sample(cli: &Cli, args: &SampleArgs, out: &mut impl Write) -> Result<()> {
    reject_csv(cli)?;
    let o_max = args.o_max.unwrap_or(args.utilities.len());
    let cfg = MechanismConfig::new(args.sampling.eta, args.u_min, args.u_max, o_max)?
        .with_options(args.sampling.options()?)
        .with_precision_strategy(args.sampling.precision.into());
    let mechanism = Mechanism::new(cfg)?;
    let mut boxed = bits(cli.seed);
    let mut src: &mut dyn BitSource = &mut *boxed;
    let indices = (0..args.count)
        .map(|_| mechanism.sample_index_f64(&args.utilities, &mut src))
        .collect::<b2exp::Result<Vec<_>>>()?;
    if cli.json {
        let report = json!({
            "indices": indices,
            "precision": mechanism.precision(),
            "eta": args.sampling.eta.value(),
            "epsilon_report_only": cfg.epsilon_report_only(),
        });
        writeln!(out, "{report}")?;
    } else {
        for i in indices {
            writeln!(out, "{i}")?;
        }
    }
    Ok(())
}

fn laplace(cli: &Cli, args: &LaplaceArgs, out: &mut impl Write) -> Result<()> {
    let cfg = LaplaceConfig::from_f64(args.lower, args.upper, args.gamma, args.sampling.eta)?
        .with_options(args.sampling.options()?)
        .with_precision_strategy(args.sampling.precision.into());
    let laplace = Laplace::new(&cfg)?;
    let mut boxed = bits(cli.seed);
    let mut src: &mut dyn BitSource = &mut *boxed;
    let samples = (0..args.count)
        .map(|_| laplace.sample(args.target, &mut src))
        .collect::<b2exp::Result<Vec<_>>>()?;
    let decimals: Vec<String> = samples.iter().map(|v| v.to_decimal_string()).collect();
    if let Some(path) = &cli.csv {
        let mut writer = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        writer.write_record(["sample", "value"])?;
        for (i, v) in decimals.iter().enumerate() {
            writer.write_record([i.to_string(), v.clone()])?;
        }
        writer.flush()?;
    }
    if cli.json {
        let report = json!({
            "samples": decimals,
            "grid_points": laplace.grid().len(),
            "precision": laplace.mechanism().precision(),
        });
        writeln!(out, "{report}")?;
    } else if cli.csv.is_none() {
        for v in decimals {
            writeln!(out, "{v}")?;
        }
    }
    Ok(())
}

fn attack_cmd(cli: &Cli, attack: &AttackCommand, out: &mut impl Write) -> Result<()> {
    reject_csv(cli)?;
    let seed = cli.seed.unwrap_or_else(rand_seed);
    let target = |a: &AttackArgs| match a.target {
        TargetArg::Naive => Target::Naive,
        TargetArg::Exact => Target::Exact(a.eta),
    };
    let (report, extra) = match attack {
        AttackCommand::Zero { eps, k, common } => {
            let report = attacks::run_attack_zero(*eps, *k, common.trials, target(common), seed)?;
            let x = attacks::find_zero_rounding_x(*eps);
            let ratio = attacks::exact_ratio_zero(common.eta, *k)?;
            (report, json!({ "x": x, "exact_ratio": ratio.to_string(), "ratio_bound": ratio_bound(common.eta) }))
        }
        AttackCommand::Truncated { eps, max_outcomes, common } => {
            let Some(params) = attacks::find_truncation_params(*eps, *max_outcomes) else {
                bail!("no truncation parameters with at most {max_outcomes} outcomes at eps = {eps}");
            };
            let report = attacks::run_attack_truncated(&params, common.trials, target(common), seed)?;
            let ratio = attacks::exact_ratio_truncated(common.eta, &params)?;
            (report, json!({ "params": params, "exact_ratio": ratio.to_string(), "ratio_bound": ratio_bound(common.eta) }))
        }
    };
    print_report(cli, &report, extra, out)
}

fn print_report(cli: &Cli, report: &AttackReport, extra: serde_json::Value, out: &mut impl Write) -> Result<()> {
    if cli.json {
        let mut value = serde_json::to_value(report)?;
        value["advantage"] = json!(report.advantage());
        value["details"] = extra;
        writeln!(out, "{value}")?;
    } else {
        writeln!(out, "attack {} against {} ({} outcomes, {} trials per arm)", report.attack, report.target, report.outcomes, report.trials)?;
        writeln!(out, "o1 chosen: in-arm {:.4}, out-arm {:.4}", report.in_frequency(), report.out_frequency())?;
        writeln!(out, "advantage {:.4}", report.advantage())?;
        writeln!(
            out,
            "exact mechanism: largest arm probability ratio {} (bound {})",
            extra["exact_ratio"].as_str().unwrap_or("?"),
            extra["ratio_bound"]
        )?;
    }
    Ok(())
}

/// `2^{2η}`, the ratio the exact mechanism guarantees for sensitivity 1.
fn ratio_bound(eta: Eta) -> f64 {
    (2.0 * eta.value()).exp2()
}

fn rand_seed() -> u64 {
    os_bits().next_bits(64)
}

fn bench_cmd(cli: &Cli, args: &BenchArgs, out: &mut impl Write) -> Result<()> {
    let opts = BenchOptions {
        reps: args.reps,
        seed: cli.seed.unwrap_or(0),
        parallel: args.parallel,
        k: args.k,
    };
    let sizes = |default: &[u64]| args.sizes.clone().unwrap_or_else(|| default.to_vec());
    let records: Vec<BenchRecord> = match args.scenario {
        Scenario::OutcomeScaling => bench::bench_outcome_scaling(&sizes(&[100, 1000, 10_000]), &args.configs, &opts)?,
        Scenario::UtilityRange => bench::bench_utility_range(&sizes(&[0, 1000, 10_000]), &args.configs, &opts)?,
        Scenario::PrecisionMethod => bench::bench_precision_method(&sizes(&[100, 1000, 10_000]), &opts)?,
        Scenario::Laplace => {
            let exponents: Vec<u32> = sizes(&[2, 4, 6]).into_iter().map(u32::try_from).collect::<Result<_, _>>()?;
            bench::bench_laplace(&exponents, &args.configs, &opts)?
        }
        Scenario::TimingChannel => bench::bench_timing_channel(&sizes(&[1, 2, 4, 8, 16]), args.reps, args.batch)?,
    };
    if let Some(path) = &cli.csv {
        bench::emit_csv(&records, path)?;
    }
    if cli.json {
        writeln!(out, "{}", serde_json::to_string(&records)?)?;
    } else if cli.csv.is_none() {
        bench::write_csv(&records, &mut *out)?;
    } else {
        summarize(&records, out)?;
    }
    Ok(())
}

/// Median time per configuration and size.
fn summarize(records: &[BenchRecord], out: &mut impl Write) -> Result<()> {
    let mut keys: Vec<(String, u64)> = records.iter().map(|r| (r.config.clone(), r.instance_size)).collect();
    keys.sort();
    keys.dedup();
    for (config, size) in keys {
        let median = bench::median_elapsed(records, &config, size).unwrap_or(f64::NAN);
        writeln!(out, "{config:>10} {size:>8} median {:.3} ms", median / 1e6)?;
    }
    Ok(())
}
