//! Fixtures shared by the Criterion benches.

use b2exp::attacks::naive_exp_mech;
use b2exp::bench::{timing_mechanism, timing_utilities};
use b2exp::mechanism::exact_utilities;
use b2exp::{
    seeded_bits, ArithContext, Eta, ExactValue, Mechanism, MechanismConfig, PrecisionStrategy, Result, SampleOptions,
    SeededBits, Variant, WeightTable,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// `u(o) = o` over `O = [n]`.
pub fn scaling_utilities(n: u64) -> Vec<ExactValue> {
    (1..=n as i64).map(ExactValue::from).collect()
}

pub fn scaling_mechanism(n: u64, variant: Variant, strategy: PrecisionStrategy) -> Result<Mechanism> {
    let cfg = MechanismConfig::new(Eta::new(1, 1, 1)?, 0, n as i64, n as usize)?
        .with_options(SampleOptions::new(1, variant)?)
        .with_precision_strategy(strategy);
    Mechanism::new(cfg)
}

/// The double-precision mechanism with weights `2^{-u}`.
pub struct Naive {
    utilities: Vec<f64>,
    rng: ChaCha20Rng,
}

impl Naive {
    pub fn new(n: u64) -> Self {
        Naive {
            utilities: (1..=n).map(|o| o as f64).collect(),
            rng: ChaCha20Rng::seed_from_u64(0),
        }
    }

    pub fn sample(&mut self) -> Option<usize> {
        naive_exp_mech(2.0 * std::f64::consts::LN_2, &self.utilities, &mut self.rng)
    }
}

/// Prebuilt `u1`/`u0` weight tables for the timing-channel workload.
pub struct TimingTables {
    pub ctx: ArithContext,
    pub opts: SampleOptions,
    pub tables: Vec<(&'static str, WeightTable)>,
}

impl TimingTables {
    pub fn new(k: u64) -> Result<Self> {
        let mechanism = timing_mechanism(k)?;
        let ctx = ArithContext::new(mechanism.precision())?;
        let mut src: SeededBits = seeded_bits(0);
        let mut tables = Vec::new();
        for (label, utilities) in timing_utilities() {
            let rounded = mechanism.round_utilities(&exact_utilities(&utilities)?, &mut src);
            tables.push((label, mechanism.weight_table(&ctx, &rounded)?));
        }
        Ok(TimingTables {
            ctx,
            opts: mechanism.config().opts,
            tables,
        })
    }
}
