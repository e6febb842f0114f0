//! Clamped discrete Laplace noise on a fixed dyadic grid.
//!
//! Outcomes are `B_L + γ·i` for every `i` with `B_L + γ·i ≤ B_U`, and the
//! utility of a grid point is its distance to the target. The grid is built
//! from the configuration alone, before any target is seen.

use crate::arith::{ArithContext, ExactValue};
use crate::error::{Error, Result};
use crate::mechanism::{Mechanism, MechanismConfig};
use crate::params::Eta;
use crate::precision::PrecisionStrategy;
use crate::sampling::{BitSource, SampleOptions};

/// Grid and privacy parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaplaceConfig {
    pub lower: ExactValue,
    pub upper: ExactValue,
    /// Grid spacing. Must be positive; a power of two is typical.
    pub gamma: ExactValue,
    pub eta: Eta,
    pub opts: SampleOptions,
    pub precision_strategy: PrecisionStrategy,
}

impl LaplaceConfig {
    pub fn new(lower: ExactValue, upper: ExactValue, gamma: ExactValue, eta: Eta) -> Result<Self> {
        if lower >= upper {
            return Err(Error::InvalidParameter("lower bound must be below upper bound".into()));
        }
        if !gamma.is_positive() {
            return Err(Error::InvalidParameter("granularity must be positive".into()));
        }
        Ok(LaplaceConfig {
            lower,
            upper,
            gamma,
            eta,
            opts: SampleOptions::default(),
            precision_strategy: PrecisionStrategy::default(),
        })
    }

    /// Builds the configuration from doubles, each taken at its exact value.
    pub fn from_f64(lower: f64, upper: f64, gamma: f64, eta: Eta) -> Result<Self> {
        let exact = |v: f64, what: &str| {
            ExactValue::from_f64(v).ok_or_else(|| Error::InvalidParameter(format!("{what} is not finite")))
        };
        LaplaceConfig::new(exact(lower, "lower")?, exact(upper, "upper")?, exact(gamma, "gamma")?, eta)
    }

    pub fn with_options(mut self, opts: SampleOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn with_precision_strategy(mut self, strategy: PrecisionStrategy) -> Self {
        self.precision_strategy = strategy;
        self
    }
}

/// Precision that holds `a ± b` exactly for every operand in `values`.
fn span_precision(values: &[&ExactValue]) -> u64 {
    let nonzero = values.iter().filter(|v| !v.is_zero());
    let top = nonzero.clone().map(|v| v.top()).max().unwrap_or(0);
    let bottom = nonzero.map(|v| v.exponent()).min().unwrap_or(0);
    (top - bottom + 2).max(1) as u64
}

fn exact_op(
    what: &'static str,
    operands: &[&ExactValue],
    f: impl FnOnce(&ArithContext) -> ExactValue,
) -> Result<ExactValue> {
    let ctx = ArithContext::new(span_precision(operands))?;
    let (value, exact) = ctx.monitored(f);
    if exact {
        Ok(value)
    } else {
        Err(Error::InexactArithmetic(what))
    }
}

/// A configured discrete Laplace sampler.
#[derive(Debug, Clone)]
pub struct Laplace {
    grid: Vec<ExactValue>,
    mechanism: Mechanism,
}

impl Laplace {
    pub fn new(cfg: &LaplaceConfig) -> Result<Self> {
        let range = exact_op("grid range", &[&cfg.upper, &cfg.lower], |c| c.sub(&cfg.upper, &cfg.lower))?;
        let mut grid = vec![cfg.lower.clone()];
        loop {
            let last = grid.last().expect("nonempty");
            let next = exact_op("grid construction", &[last, &cfg.gamma], |c| c.add(last, &cfg.gamma))?;
            if next > cfg.upper {
                break;
            }
            grid.push(next);
        }
        let u_max = i64::try_from(range.ceil())
            .map_err(|_| Error::InvalidParameter("grid range too large".into()))?;
        let mechanism = Mechanism::new(
            MechanismConfig::new(cfg.eta, 0, u_max, grid.len())?
                .with_options(cfg.opts)
                .with_precision_strategy(cfg.precision_strategy),
        )?;
        Ok(Laplace { grid, mechanism })
    }

    pub fn grid(&self) -> &[ExactValue] {
        &self.grid
    }

    pub fn mechanism(&self) -> &Mechanism {
        &self.mechanism
    }

    /// `|target - o|` for every grid point `o`, exactly.
    pub fn utilities(&self, target: &ExactValue) -> Result<Vec<ExactValue>> {
        self.grid
            .iter()
            .map(|o| exact_op("distance", &[target, o], |c| c.sub(target, o)).map(|d| d.abs()))
            .collect()
    }

    /// Index of the sampled grid point.
    pub fn sample_index(&self, target: &ExactValue, src: &mut impl BitSource) -> Result<usize> {
        self.mechanism.sample_index(&self.utilities(target)?, src)
    }

    pub fn sample(&self, target: f64, src: &mut impl BitSource) -> Result<ExactValue> {
        let target = ExactValue::from_f64(target)
            .ok_or_else(|| Error::InvalidInput("target is not finite".into()))?;
        let index = self.sample_index(&target, src)?;
        Ok(self.grid[index].clone())
    }
}

/// One-shot convenience over [`Laplace`].
pub fn clamped_discrete_laplace(
    cfg: &LaplaceConfig,
    target: f64,
    src: &mut impl BitSource,
) -> Result<ExactValue> {
    Laplace::new(cfg)?.sample(target, src)
}
