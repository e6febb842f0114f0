//! Benchmark scenarios and their CSV records.
//!
//! Every trial draws from its own seeded stream, derived from the base seed,
//! the instance size and the trial number, so outcomes replay identically
//! whether trials run serially or in parallel. The timing-channel scenario
//! is the exception: it measures with operating-system randomness.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arith::{ArithContext, ExactValue};
use crate::attacks::naive_exp_mech;
use crate::error::{Error, Result};
use crate::laplace::{Laplace, LaplaceConfig};
use crate::mechanism::{exact_utilities, Mechanism, MechanismConfig};
use crate::params::Eta;
use crate::precision::PrecisionStrategy;
use crate::sampling::{normalized_sample, seeded_bits, BitSource, OsBits, SampleOptions, Variant};

pub const CSV_HEADER: [&str; 6] = ["scenario", "config", "instance_size", "trial", "elapsed_ns", "outcome"];

/// One timed trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub scenario: String,
    pub config: String,
    pub instance_size: u64,
    pub trial: u64,
    pub elapsed_ns: u64,
    pub outcome: Option<u64>,
}

/// Implementation under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Config {
    /// Double-precision base-e mechanism.
    Naive,
    /// Exact mechanism, worst-case precision, full-scan sampling.
    Base2,
    /// Exact mechanism with early-terminating sampling.
    Optimized,
    /// Exact mechanism with empirically determined precision.
    Empirical,
    /// Exact mechanism with lazy bit-by-bit sampling.
    Lazy,
}

impl Config {
    pub const ALL: [Config; 5] = [Config::Naive, Config::Base2, Config::Optimized, Config::Empirical, Config::Lazy];

    pub fn label(&self) -> &'static str {
        match self {
            Config::Naive => "naive",
            Config::Base2 => "base2",
            Config::Optimized => "optimized",
            Config::Empirical => "empirical",
            Config::Lazy => "lazy",
        }
    }

    fn variant(&self) -> Variant {
        match self {
            Config::Optimized => Variant::Standard,
            Config::Lazy => Variant::Optimized,
            _ => Variant::FullScan,
        }
    }

    fn strategy(&self) -> PrecisionStrategy {
        match self {
            Config::Empirical => PrecisionStrategy::Empirical,
            _ => PrecisionStrategy::Theoretical,
        }
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Config {
    type Err = Error;

    fn from_str(s: &str) -> Result<Config> {
        Config::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown config {s:?}")))
    }
}

/// Repetitions, seed and threading shared by all scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub reps: u64,
    pub seed: u64,
    pub parallel: bool,
    /// Minimum rejection-loop iterations for exact configurations.
    pub k: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            reps: 10,
            seed: 0,
            parallel: false,
            k: 1,
        }
    }
}

fn trial_seed(seed: u64, size: u64, trial: u64) -> u64 {
    // splitmix-style mixing keeps neighbouring trials unrelated
    let mut z = seed ^ size.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ trial.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn elapsed_ns(d: Duration) -> u64 {
    (d.as_nanos() as u64).max(1)
}

/// One exponential-mechanism instance: utilities and their range.
struct Instance {
    utilities: Vec<f64>,
    u_max: i64,
}

/// Times one call of `config` on `instance`, including precision
/// determination for the exact configurations.
fn time_instance(instance: &Instance, config: Config, eta: Eta, k: u64, seed: u64) -> Result<(u64, u64)> {
    let start = Instant::now();
    let index = if config == Config::Naive {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let eps = 2.0 * eta.to_epsilon_report_only();
        naive_exp_mech(eps, &instance.utilities, &mut rng)
            .ok_or_else(|| Error::InvalidInput("naive mechanism returned no outcome".into()))?
    } else {
        let cfg = MechanismConfig::new(eta, 0, instance.u_max, instance.utilities.len())?
            .with_options(SampleOptions::new(k, config.variant())?)
            .with_precision_strategy(config.strategy());
        Mechanism::new(cfg)?.sample_index_f64(&instance.utilities, &mut seeded_bits(seed))?
    };
    Ok((elapsed_ns(start.elapsed()), index as u64))
}

fn run_scenario(
    scenario: &str,
    sizes: &[u64],
    configs: &[Config],
    opts: &BenchOptions,
    make: impl Fn(u64) -> Instance + Sync,
    eta: Eta,
) -> Result<Vec<BenchRecord>> {
    let mut records = Vec::new();
    for &size in sizes {
        let instance = make(size);
        for &config in configs {
            let one = |trial: u64| -> Result<BenchRecord> {
                let seed = trial_seed(opts.seed, size, trial);
                let (elapsed, outcome) = time_instance(&instance, config, eta, opts.k, seed)?;
                Ok(BenchRecord {
                    scenario: scenario.to_string(),
                    config: config.label().to_string(),
                    instance_size: size,
                    trial,
                    elapsed_ns: elapsed,
                    outcome: Some(outcome),
                })
            };
            let batch: Result<Vec<_>> = if opts.parallel {
                (0..opts.reps).into_par_iter().map(one).collect()
            } else {
                (0..opts.reps).map(one).collect()
            };
            records.extend(batch?);
        }
    }
    Ok(records)
}

fn eta1() -> Eta {
    Eta::new(1, 1, 1).expect("valid")
}

/// `O = [n]` with `u(o) = o`, so both the outcome count and the utility
/// range grow with `n`.
pub fn bench_outcome_scaling(sizes: &[u64], configs: &[Config], opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    run_scenario("outcome-scaling", sizes, configs, opts, outcome_instance, eta1())
}

fn outcome_instance(n: u64) -> Instance {
    Instance {
        utilities: (1..=n).map(|o| o as f64).collect(),
        u_max: n as i64,
    }
}

/// The outcome-scaling workload under both precision strategies.
pub fn bench_precision_method(sizes: &[u64], opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    run_scenario(
        "precision-method",
        sizes,
        &[Config::Base2, Config::Empirical],
        opts,
        outcome_instance,
        eta1(),
    )
}

/// `O = {0} ∪ {i + n | i ∈ [1000]}`: 1001 outcomes with utility range
/// `[0, 1000 + n]`.
pub fn bench_utility_range(ns: &[u64], configs: &[Config], opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    let make = |n: u64| Instance {
        utilities: std::iter::once(0.0)
            .chain((1..=1000).map(|i| (i + n) as f64))
            .collect(),
        u_max: 1000 + n as i64,
    };
    run_scenario("utility-range", ns, configs, opts, make, eta1())
}

/// Clamped discrete Laplace on `[-10, 10]` with `γ = 2^-e` for each `e` in
/// `exponents`, target 0. Instance size is the grid size.
pub fn bench_laplace(exponents: &[u32], configs: &[Config], opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    let eta = eta1();
    let mut records = Vec::new();
    for &e in exponents {
        let gamma = 2f64.powi(-(e as i32));
        let grid_cfg = LaplaceConfig::from_f64(-10.0, 10.0, gamma, eta)?;
        let grid = Laplace::new(&grid_cfg)?;
        let size = grid.grid().len() as u64;
        for &config in configs {
            let one = |trial: u64| -> Result<BenchRecord> {
                let seed = trial_seed(opts.seed, size, trial);
                let start = Instant::now();
                let index = if config == Config::Naive {
                    let utilities: Vec<f64> = grid.grid().iter().map(|o| o.to_f64().abs()).collect();
                    let mut rng = ChaCha20Rng::seed_from_u64(seed);
                    naive_exp_mech(2.0 * eta.to_epsilon_report_only(), &utilities, &mut rng)
                        .ok_or_else(|| Error::InvalidInput("naive mechanism returned no outcome".into()))?
                } else {
                    let cfg = grid_cfg
                        .clone()
                        .with_options(SampleOptions::new(opts.k, config.variant())?)
                        .with_precision_strategy(config.strategy());
                    Laplace::new(&cfg)?.sample_index(&ExactValue::zero(), &mut seeded_bits(seed))?
                };
                Ok(BenchRecord {
                    scenario: "laplace".into(),
                    config: config.label().into(),
                    instance_size: size,
                    trial,
                    elapsed_ns: elapsed_ns(start.elapsed()),
                    outcome: Some(index as u64),
                })
            };
            let batch: Result<Vec<_>> = if opts.parallel {
                (0..opts.reps).into_par_iter().map(one).collect()
            } else {
                (0..opts.reps).map(one).collect()
            };
            records.extend(batch?);
        }
    }
    Ok(records)
}

/// The two timing-channel workloads over 256 outcomes with `η = 1`.
/// `u1` has every utility 1 (total weight 128, a power of two, so draws are
/// never rejected); `u0` lowers one utility to 0 (total 128.5, rejection
/// close to 1/2).
pub fn timing_utilities() -> [(&'static str, Vec<f64>); 2] {
    let u1 = vec![1.0; 256];
    let mut u0 = u1.clone();
    u0[0] = 0.0;
    [("u1", u1), ("u0", u0)]
}

/// Mechanism used by the timing-channel scenario.
pub fn timing_mechanism(k: u64) -> Result<Mechanism> {
    Mechanism::new(
        MechanismConfig::new(eta1(), 0, 1, 256)?.with_options(SampleOptions::new(k, Variant::FullScan)?),
    )
}

/// Per-call time of the sampling phase, averaged over `batch` calls, for
/// each of `reps` repetitions of both workloads and every `k`.
///
/// Weight tables are built once per workload by the mechanism itself; only
/// [`normalized_sample`] is timed, since the rejection loop is the one
/// phase whose work depends on the weights (the others do identical work
/// for both workloads). Workloads alternate within each repetition so drift
/// affects both alike.
pub fn bench_timing_channel(ks: &[u64], reps: u64, batch: u64) -> Result<Vec<BenchRecord>> {
    bench_timing_channel_with(ks, reps, batch, || OsBits)
}

pub fn bench_timing_channel_with<B: BitSource>(
    ks: &[u64],
    reps: u64,
    batch: u64,
    source: impl Fn() -> B,
) -> Result<Vec<BenchRecord>> {
    let batch = batch.max(1);
    let mut records = Vec::new();
    for &k in ks {
        let mechanism = timing_mechanism(k)?;
        let ctx = ArithContext::new(mechanism.precision())?;
        let tables = timing_utilities()
            .into_iter()
            .map(|(label, u)| {
                let rounded = mechanism.round_utilities(&exact_utilities(&u)?, &mut seeded_bits(0));
                Ok((label, mechanism.weight_table(&ctx, &rounded)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let opts = mechanism.config().opts;
        for trial in 0..reps {
            for (label, table) in &tables {
                let mut src = source();
                let start = Instant::now();
                for _ in 0..batch {
                    std::hint::black_box(normalized_sample(&ctx, table, &opts, &mut src)?);
                }
                records.push(BenchRecord {
                    scenario: "timing-channel".into(),
                    config: (*label).into(),
                    instance_size: k,
                    trial,
                    elapsed_ns: (elapsed_ns(start.elapsed()) / batch).max(1),
                    outcome: None,
                });
            }
        }
    }
    Ok(records)
}

/// Median of `elapsed_ns` over records matching `config` and `size`.
pub fn median_elapsed(records: &[BenchRecord], config: &str, size: u64) -> Option<f64> {
    let mut times: Vec<u64> = records
        .iter()
        .filter(|r| r.config == config && r.instance_size == size)
        .map(|r| r.elapsed_ns)
        .collect();
    if times.is_empty() {
        return None;
    }
    times.sort_unstable();
    let n = times.len();
    Some(if n % 2 == 1 {
        times[n / 2] as f64
    } else {
        (times[n / 2 - 1] + times[n / 2]) as f64 / 2.0
    })
}

/// Median `u0` time over median `u1` time at `k`.
pub fn timing_ratio(records: &[BenchRecord], k: u64) -> Option<f64> {
    Some(median_elapsed(records, "u0", k)? / median_elapsed(records, "u1", k)?)
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

/// Writes a header followed by one row per record.
pub fn write_csv<W: io::Write>(records: &[BenchRecord], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

pub fn emit_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.as_ref().display())))?;
    write_csv(records, io::BufWriter::new(file))
}

pub fn read_csv<R: io::Read>(reader: R) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(String::from).collect();
    if header != CSV_HEADER {
        return Err(Error::InvalidInput(format!("unexpected csv header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> BenchOptions {
        BenchOptions {
            reps: 3,
            seed: 7,
            ..BenchOptions::default()
        }
    }

    #[test]
    fn config_labels_round_trip() {
        for c in Config::ALL {
            assert_eq!(c.label().parse::<Config>().unwrap(), c);
        }
        assert!("rust".parse::<Config>().is_err());
    }

    #[test]
    fn outcome_scaling_smoke() {
        let records = bench_outcome_scaling(&[16, 64], &Config::ALL, &quick()).unwrap();
        assert_eq!(records.len(), 2 * 5 * 3);
        assert!(records.iter().all(|r| r.elapsed_ns > 0 && r.outcome.unwrap() < r.instance_size));
    }

    #[test]
    fn replay_is_deterministic_and_thread_independent() {
        let strip = |rs: Vec<BenchRecord>| -> Vec<_> { rs.into_iter().map(|r| (r.config, r.trial, r.outcome)).collect() };
        let configs = [Config::Base2, Config::Optimized, Config::Lazy, Config::Naive];
        let a = bench_utility_range(&[0, 10], &configs, &quick()).unwrap();
        let b = bench_utility_range(&[0, 10], &configs, &quick()).unwrap();
        let parallel = BenchOptions { parallel: true, ..quick() };
        let c = bench_utility_range(&[0, 10], &configs, &parallel).unwrap();
        assert_eq!(strip(a.clone()), strip(b));
        assert_eq!(strip(a), strip(c));
    }

    #[test]
    fn base2_and_optimized_agree_on_outcomes() {
        // Same seed, same accepted value: the variants only differ in work.
        let a = bench_outcome_scaling(&[40], &[Config::Base2], &quick()).unwrap();
        let b = bench_outcome_scaling(&[40], &[Config::Optimized], &quick()).unwrap();
        let outcomes = |rs: &[BenchRecord]| rs.iter().map(|r| r.outcome).collect::<Vec<_>>();
        assert_eq!(outcomes(&a), outcomes(&b));
    }

    #[test]
    fn laplace_and_precision_smoke() {
        let records = bench_laplace(&[1, 2], &[Config::Naive, Config::Base2, Config::Empirical], &quick()).unwrap();
        assert_eq!(records.iter().map(|r| r.instance_size).max(), Some(81));
        let records = bench_precision_method(&[8], &quick()).unwrap();
        assert_eq!(records.len(), 6);
    }

    #[test]
    fn timing_workloads() {
        let records = bench_timing_channel_with(&[1, 2], 4, 2, || seeded_bits(1)).unwrap();
        assert_eq!(records.len(), 2 * 4 * 2);
        assert!(timing_ratio(&records, 1).is_some());
        assert!(timing_ratio(&records, 3).is_none());
    }

    #[test]
    fn csv_round_trip() {
        let mut buffer = Vec::new();
        write_csv(&[], &mut buffer).unwrap();
        assert_eq!(String::from_utf8(buffer.clone()).unwrap(), "scenario,config,instance_size,trial,elapsed_ns,outcome\n");
        assert!(read_csv(buffer.as_slice()).unwrap().is_empty());

        let records: Vec<BenchRecord> = (0..10_000)
            .map(|i| BenchRecord {
                scenario: "outcome-scaling".into(),
                config: "base2".into(),
                instance_size: i % 7,
                trial: i,
                elapsed_ns: i + 1,
                outcome: if i % 3 == 0 { None } else { Some(i / 2) },
            })
            .collect();
        let mut buffer = Vec::new();
        write_csv(&records, &mut buffer).unwrap();
        assert!(buffer.ends_with(b"\n"));
        assert_eq!(read_csv(buffer.as_slice()).unwrap(), records);
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
