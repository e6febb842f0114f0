//! The base-2 exponential mechanism over exact weights.
//!
//! Lower utility is better: outcome `o` is chosen with probability
//! proportional to `2^{-η·ρ(clamp(u(o)))}`, where `ρ` is randomized rounding.
//! For utilities of sensitivity `α` the output is `2αη`-DP in base 2.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;

use crate::arith::{ArithContext, ExactValue};
use crate::error::{Error, Result};
use crate::params::Eta;
use crate::precision::{PrecisionRequest, PrecisionStrategy};
use crate::sampling::{self, BitSource, CountingBits, SampleOptions, WeightTable};

/// Data-independent configuration, fixed before any utility is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MechanismConfig {
    pub eta: Eta,
    pub u_min: i64,
    pub u_max: i64,
    pub o_max: usize,
    pub opts: SampleOptions,
    pub precision_strategy: PrecisionStrategy,
    /// Bits in each randomized-rounding coin.
    pub rounding_bits: u32,
}

impl MechanismConfig {
    pub fn new(eta: Eta, u_min: i64, u_max: i64, o_max: usize) -> Result<Self> {
        PrecisionRequest::new(u_min, u_max, o_max as u64, eta)?;
        Ok(MechanismConfig {
            eta,
            u_min,
            u_max,
            o_max,
            opts: SampleOptions::default(),
            precision_strategy: PrecisionStrategy::default(),
            rounding_bits: 64,
        })
    }

    pub fn with_options(mut self, opts: SampleOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn with_precision_strategy(mut self, strategy: PrecisionStrategy) -> Self {
        self.precision_strategy = strategy;
        self
    }

    pub fn with_rounding_bits(mut self, bits: u32) -> Self {
        self.rounding_bits = bits;
        self
    }

    pub fn request(&self) -> PrecisionRequest {
        PrecisionRequest {
            u_min: self.u_min,
            u_max: self.u_max,
            o_max: self.o_max as u64,
            eta: self.eta,
        }
    }

    /// Base-e reading of the `2η` base-2 guarantee for sensitivity-1
    /// utilities. Report-only.
    pub fn epsilon_report_only(&self) -> f64 {
        2.0 * self.eta.to_epsilon_report_only()
    }
}

/// `min(max(lo, u), hi)`.
pub fn clamp(u: &ExactValue, lo: i64, hi: i64) -> ExactValue {
    debug_assert!(lo <= hi);
    let lo_v = ExactValue::from(lo);
    let hi_v = ExactValue::from(hi);
    if *u < lo_v {
        lo_v
    } else if *u > hi_v {
        hi_v
    } else {
        u.clone()
    }
}

/// Rounds up with probability `u - ⌊u⌋` using an `r`-bit coin, down
/// otherwise. The coin is drawn even for integral `u`, so bit consumption
/// never depends on the value.
pub fn randomized_round(u: &ExactValue, src: &mut impl BitSource, r: u32) -> BigInt {
    let coin = ExactValue::dyadic(sampling::draw_numerator(src, r as u64), -(r as i64));
    if coin < u.fract() {
        u.ceil()
    } else {
        u.floor()
    }
}

/// What a traced run observed, for checking that control flow does not
/// depend on the utilities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MechanismTrace {
    pub index: usize,
    pub precision: u64,
    pub table_len: usize,
    pub rounded: Vec<i64>,
    /// Arithmetic operations, including one comparison per rejection-loop
    /// iteration.
    pub operations: u64,
    pub iterations: u64,
    pub bits: u64,
}

impl MechanismTrace {
    /// Operations outside the rejection loop.
    pub fn operations_outside_rejection(&self) -> u64 {
        self.operations - self.iterations
    }
}

/// A configured mechanism. Precision is settled on construction.
#[derive(Debug, Clone)]
pub struct Mechanism {
    cfg: MechanismConfig,
    precision: u64,
}

impl Mechanism {
    pub fn new(cfg: MechanismConfig) -> Result<Self> {
        let precision = cfg.request().precision(cfg.precision_strategy)?;
        Ok(Mechanism { cfg, precision })
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.cfg
    }

    pub fn precision(&self) -> u64 {
        self.precision
    }

    fn check_size(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidInput("no outcomes".into()));
        }
        if n > self.cfg.o_max {
            return Err(Error::TooManyOutcomes {
                got: n,
                max: self.cfg.o_max,
            });
        }
        Ok(())
    }

    /// Clamps and randomly rounds each utility.
    pub fn round_utilities(
        &self,
        utilities: &[ExactValue],
        src: &mut impl BitSource,
    ) -> Vec<i64> {
        utilities
            .iter()
            .map(|u| {
                let clamped = clamp(u, self.cfg.u_min, self.cfg.u_max);
                randomized_round(&clamped, src, self.cfg.rounding_bits)
                    .to_i64()
                    .expect("clamped to i64 bounds")
            })
            .collect()
    }

    /// Exact weights `2^{-η(u - offset)}` for already rounded utilities.
    pub fn weight_table(&self, ctx: &ArithContext, rounded: &[i64]) -> Result<WeightTable> {
        let offset = self.cfg.request().utility_offset();
        let bound = (self.cfg.u_max - offset) as u64;
        let (weights, exact) = ctx.monitored(|c| -> Result<Vec<ExactValue>> {
            let base = self.cfg.eta.base(c)?;
            Ok(rounded
                .iter()
                .map(|&u| c.pow_int_ladder(&base, (u - offset) as u64, bound))
                .collect())
        });
        let weights = weights?;
        if !exact {
            return Err(Error::InexactArithmetic("weight computation"));
        }
        WeightTable::new(ctx, weights)
    }

    /// Exact output distribution for already rounded utilities, as
    /// rationals. Intended for verification.
    pub fn exact_distribution(&self, rounded: &[i64]) -> Result<Vec<BigRational>> {
        let ctx = ArithContext::new(self.precision)?;
        let table = self.weight_table(&ctx, rounded)?;
        let total = table.total().to_rational();
        Ok(table.weights().iter().map(|w| w.to_rational() / &total).collect())
    }

    fn run_inner(
        &self,
        utilities: &[ExactValue],
        src: &mut impl BitSource,
    ) -> Result<MechanismTrace> {
        self.check_size(utilities.len())?;
        let mut src = CountingBits::new(src);
        let ctx = ArithContext::new(self.precision)?;
        let rounded = self.round_utilities(utilities, &mut src);
        let (stats, exact) = ctx.monitored(|c| -> Result<_> {
            let table = self.weight_table(c, &rounded)?;
            sampling::sample_with_stats(c, &table, &self.cfg.opts, &mut src)
        });
        let stats = stats?;
        if !exact {
            return Err(Error::InexactArithmetic("sampling"));
        }
        Ok(MechanismTrace {
            index: stats.index,
            precision: self.precision,
            table_len: rounded.len(),
            rounded,
            operations: ctx.operations(),
            iterations: stats.iterations,
            bits: src.count(),
        })
    }

    /// Index of the chosen outcome.
    pub fn sample_index(&self, utilities: &[ExactValue], src: &mut impl BitSource) -> Result<usize> {
        self.run_inner(utilities, src).map(|t| t.index)
    }

    /// Like [`Mechanism::sample_index`] but returns the full trace.
    pub fn sample_traced(
        &self,
        utilities: &[ExactValue],
        src: &mut impl BitSource,
    ) -> Result<MechanismTrace> {
        self.run_inner(utilities, src)
    }

    /// Converts double utilities exactly; non-finite values are rejected.
    pub fn sample_index_f64(&self, utilities: &[f64], src: &mut impl BitSource) -> Result<usize> {
        self.sample_index(&exact_utilities(utilities)?, src)
    }

    /// Picks one of `outcomes`, with `utilities[i]` belonging to `outcomes[i]`.
    pub fn run<'a, T>(
        &self,
        utilities: &[f64],
        outcomes: &'a [T],
        src: &mut impl BitSource,
    ) -> Result<&'a T> {
        if utilities.len() != outcomes.len() {
            return Err(Error::InvalidInput(format!(
                "{} utilities for {} outcomes",
                utilities.len(),
                outcomes.len()
            )));
        }
        self.check_size(outcomes.len())?;
        let index = self.sample_index_f64(utilities, src)?;
        Ok(&outcomes[index])
    }

    /// Evaluates `utility` on every outcome and picks one.
    pub fn run_with<'a, T>(
        &self,
        outcomes: &'a [T],
        utility: impl Fn(&T) -> f64,
        src: &mut impl BitSource,
    ) -> Result<&'a T> {
        self.check_size(outcomes.len())?;
        let utilities: Vec<f64> = outcomes.iter().map(utility).collect();
        self.run(&utilities, outcomes, src)
    }
}

pub fn exact_utilities(utilities: &[f64]) -> Result<Vec<ExactValue>> {
    utilities
        .iter()
        .map(|&u| {
            ExactValue::from_f64(u)
                .ok_or_else(|| Error::InvalidInput(format!("non-finite utility {u}")))
        })
        .collect()
}

/// One-shot convenience over [`Mechanism`].
pub fn run_mechanism<'a, T>(
    cfg: MechanismConfig,
    utilities: &[f64],
    outcomes: &'a [T],
    src: &mut impl BitSource,
) -> Result<&'a T> {
    Mechanism::new(cfg)?.run(utilities, outcomes, src)
}

/// Accuracy bounds for randomized rounding against the unrounded mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct RRBounds {
    /// Lower bound on each outcome's probability under rounding.
    pub q: Vec<f64>,
    /// `1 - Σ q`.
    pub a: f64,
    /// Unrounded probability of the target minus its lower bound.
    pub b: f64,
}

impl RRBounds {
    /// Bound on the pointwise probability difference at the target.
    pub fn error_bound(&self) -> f64 {
        self.a + self.b.abs()
    }
}

/// Bounds for weights `e^{-ε·u}`. Ordinary doubles; reporting only.
pub fn rr_bounds(eps: f64, utilities: &[f64], target: usize) -> RRBounds {
    assert!(target < utilities.len(), "target out of range");
    // probability of rounding down, and the expected rounded weight
    let down = |u: f64| u.ceil() - u;
    let expected = |u: f64| down(u) * (-eps * u.floor()).exp() + (1.0 - down(u)) * (-eps * u.ceil()).exp();
    let expected_total: f64 = utilities.iter().map(|&u| expected(u)).sum();
    let q: Vec<f64> = utilities
        .iter()
        .map(|&u| {
            let rest = expected_total - expected(u);
            let lo = (-eps * u.floor()).exp();
            let hi = (-eps * u.ceil()).exp();
            down(u) * lo / (lo + rest) + (1.0 - down(u)) * hi / (hi + rest)
        })
        .collect();
    let a = 1.0 - q.iter().sum::<f64>();
    let unrounded: f64 = utilities.iter().map(|&u| (-eps * u).exp()).sum();
    let b = (-eps * utilities[target]).exp() / unrounded - q[target];
    RRBounds { q, a, b }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{seeded_bits, FixedBits, Variant};

    fn eta1() -> Eta {
        Eta::new(1, 1, 1).unwrap()
    }

    fn x(v: f64) -> ExactValue {
        ExactValue::from_f64(v).unwrap()
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp(&x(5.3), 0, 10), x(5.3));
        assert_eq!(clamp(&x(-2.0), 0, 10), x(0.0));
        assert_eq!(clamp(&x(17.0), 0, 16), x(16.0));
    }

    #[test]
    fn integral_values_round_to_themselves() {
        let mut src = seeded_bits(0);
        for _ in 0..100 {
            assert_eq!(randomized_round(&x(2.0), &mut src, 64), BigInt::from(2));
            assert_eq!(randomized_round(&x(-7.0), &mut src, 8), BigInt::from(-7));
        }
    }

    #[test]
    fn rounding_quarter_is_unbiased() {
        let mut src = seeded_bits(11);
        let n = 100_000;
        let mut sum = 0i64;
        for _ in 0..n {
            let r = randomized_round(&x(2.25), &mut src, 64).to_i64().unwrap();
            assert!(r == 2 || r == 3);
            sum += r;
        }
        let mean = sum as f64 / n as f64;
        assert!((mean - 2.25).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn rounding_negative_half() {
        // coin below 1/2 rounds up to 0
        let r = |bits| randomized_round(&x(-0.5), &mut FixedBits::from_integer(bits, 2), 2);
        assert_eq!(r(0b00), BigInt::from(0));
        assert_eq!(r(0b01), BigInt::from(0));
        assert_eq!(r(0b10), BigInt::from(-1));
        assert_eq!(r(0b11), BigInt::from(-1));
    }

    #[test]
    fn configuration_errors() {
        assert!(MechanismConfig::new(eta1(), 3, 1, 4).is_err());
        assert!(MechanismConfig::new(eta1(), 0, 1, 0).is_err());
        let m = Mechanism::new(MechanismConfig::new(eta1(), 0, 1, 2).unwrap()).unwrap();
        let mut src = seeded_bits(0);
        assert_eq!(
            m.run(&[0.0, 0.0, 0.0], &["a", "b", "c"], &mut src),
            Err(Error::TooManyOutcomes { got: 3, max: 2 })
        );
        assert!(m.run(&[0.0], &["a", "b"], &mut src).is_err());
        assert!(m.run::<&str>(&[], &[], &mut src).is_err());
        assert!(m.sample_index_f64(&[f64::NAN], &mut src).is_err());
    }

    #[test]
    fn precision_follows_strategy() {
        let cfg = MechanismConfig::new(eta1(), 0, 10, 10).unwrap();
        assert_eq!(Mechanism::new(cfg).unwrap().precision(), 32);
        let empirical = Mechanism::new(cfg.with_precision_strategy(PrecisionStrategy::Empirical)).unwrap();
        assert!(empirical.precision() <= 32);
    }

    #[test]
    fn weights_for_zero_and_one() {
        let m = Mechanism::new(MechanismConfig::new(eta1(), 0, 1, 2).unwrap()).unwrap();
        let ctx = ArithContext::new(m.precision()).unwrap();
        let table = m.weight_table(&ctx, &[0, 1]).unwrap();
        assert_eq!(table.weights(), &[ExactValue::one(), ExactValue::dyadic(1, -1)]);
        assert_eq!(table.total(), &ExactValue::dyadic(3, -1));
    }

    #[test]
    fn negative_utilities_are_shifted() {
        let m = Mechanism::new(MechanismConfig::new(eta1(), -2, 1, 4).unwrap()).unwrap();
        let ctx = ArithContext::new(m.precision()).unwrap();
        let table = m.weight_table(&ctx, &[-2, -1, 0, 1]).unwrap();
        let expected: Vec<ExactValue> = (0..4).map(|i| ExactValue::pow2(-i)).collect();
        assert_eq!(table.weights(), expected.as_slice());
    }

    #[test]
    fn ten_outcome_run() {
        let cfg = MechanismConfig::new(eta1(), 0, 10, 10).unwrap();
        let outcomes: Vec<u32> = (0..10).collect();
        let mut src = seeded_bits(5);
        let mut counts = [0usize; 10];
        for _ in 0..2000 {
            let o = run_mechanism(cfg, &outcomes.iter().map(|&o| o as f64).collect::<Vec<_>>(), &outcomes, &mut src).unwrap();
            counts[*o as usize] += 1;
        }
        // P(0) = 2^9 / (2^10 - 1) ≈ 0.5005
        let p0 = counts[0] as f64 / 2000.0;
        assert!((p0 - 512.0 / 1023.0).abs() < 0.04, "p0 {p0}");
        assert!(counts[0] > counts[1] && counts[1] > counts[2]);
    }

    #[test]
    fn callback_adapter() {
        let m = Mechanism::new(MechanismConfig::new(eta1(), 0, 100, 3).unwrap()).unwrap();
        let outcomes = [0u32, 50, 100];
        let mut src = seeded_bits(2);
        let picked = m.run_with(&outcomes, |&o| o as f64, &mut src).unwrap();
        assert_eq!(*picked, 0);
    }

    #[test]
    fn every_variant_runs() {
        for variant in [Variant::Standard, Variant::FullScan, Variant::Optimized] {
            let cfg = MechanismConfig::new(eta1(), 0, 4, 5)
                .unwrap()
                .with_options(SampleOptions::new(3, variant).unwrap());
            let m = Mechanism::new(cfg).unwrap();
            let mut src = seeded_bits(8);
            for _ in 0..50 {
                m.sample_index_f64(&[0.0, 1.5, 2.0, 3.25, 9.0], &mut src).unwrap();
            }
        }
    }

    #[test]
    fn trace_is_data_independent_outside_rejection() {
        let cfg = MechanismConfig::new(eta1(), 0, 8, 6).unwrap();
        let m = Mechanism::new(cfg).unwrap();
        let a = m.sample_traced(&exact_utilities(&[0.0, 1.0, 2.0, 3.0, 4.0, 8.0]).unwrap(), &mut seeded_bits(1)).unwrap();
        let b = m.sample_traced(&exact_utilities(&[7.5, 7.5, 0.25, 3.0, 6.0, 1.0]).unwrap(), &mut seeded_bits(2)).unwrap();
        assert_eq!(a.precision, b.precision);
        assert_eq!(a.table_len, b.table_len);
        assert_eq!(a.operations_outside_rejection(), b.operations_outside_rejection());
        let bits_per_draw = m.precision();
        assert_eq!(a.bits - a.iterations * bits_per_draw, b.bits - b.iterations * bits_per_draw);
    }

    #[test]
    fn rr_bounds_integral_is_exact() {
        let eps = std::f64::consts::LN_2;
        let utilities = [0.0, 1.0, 3.0];
        let bounds = rr_bounds(eps, &utilities, 1);
        let total: f64 = utilities.iter().map(|&u| (-eps * u).exp()).sum();
        for (q, u) in bounds.q.iter().zip(utilities) {
            assert!((q - (-eps * u).exp() / total).abs() < 1e-12);
        }
        assert!(bounds.a.abs() < 1e-12);
        assert!(bounds.b.abs() < 1e-12);
    }

    #[test]
    fn rr_bounds_one_coin() {
        let eps = std::f64::consts::LN_2;
        let utilities = [0.0, 0.5];
        // exact rounded probability of outcome 0: average over the coin
        let p0 = 0.5 * (1.0 / 2.0) + 0.5 * (1.0 / 1.5);
        for target in 0..2 {
            let bounds = rr_bounds(eps, &utilities, target);
            let exact = if target == 0 { p0 } else { 1.0 - p0 };
            assert!(bounds.q[target] <= exact + 1e-12);
            assert!(exact <= bounds.q[target] + bounds.a + 1e-12);
            let unrounded = (-eps * utilities[target]).exp() / (1.0 + (-eps * 0.5).exp());
            assert!((exact - unrounded).abs() <= bounds.error_bound() + 1e-12);
        }
    }
}
