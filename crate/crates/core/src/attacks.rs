//! A naive double-precision base-e exponential mechanism and two attacks
//! that break its privacy through floating-point rounding.
//!
//! Both attacks use utility functions of sensitivity 1. The zero-rounding
//! attack pushes every weight but one below the smallest subnormal. The
//! truncated-addition attack keeps all weights positive but makes them too
//! small to change a running sum.
//!
//! Doubles are confined to this module; nothing here feeds the exact core
//! except the attack utilities themselves.

use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::arith::ArithContext;
use crate::error::{Error, Result};
use crate::mechanism::{Mechanism, MechanismConfig};
use crate::params::Eta;
use crate::sampling::seeded_bits;

/// The textbook implementation: weights `exp(-(eps/2)·u)`, a sequential
/// total, normalized cumulative sums and a uniform threshold in `[0, 1)`.
///
/// Returns the first index whose cumulative weight reaches the threshold, or
/// `None` if there is none (all weights underflowed).
pub fn naive_exp_mech(eps: f64, utilities: &[f64], rng: &mut impl Rng) -> Option<usize> {
    let weights: Vec<f64> = utilities.iter().map(|&u| (-(eps / 2.0) * u).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cumulative.push(acc);
    }
    let index: f64 = rng.gen();
    cumulative.iter().position(|&c| c >= index)
}

/// A utility `x` at which `exp(-(eps/2)·x)` is positive but
/// `exp(-(eps/2)·(x+1))` underflows to zero. Integral when possible.
pub fn find_zero_rounding_x(eps: f64) -> f64 {
    assert!(eps > 0.0 && eps.is_finite(), "eps must be positive");
    let beta = eps / 2.0;
    let positive = |x: f64| (-beta * x).exp() > 0.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while positive(hi) {
        lo = hi;
        hi *= 2.0;
    }
    // invariant: positive(lo), !positive(hi)
    loop {
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            break;
        }
        if positive(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let integral = lo.floor();
    if !positive(integral + 1.0) {
        integral
    } else {
        lo
    }
}

/// Parameters of the truncated-addition attack: `o_1` plus `k` further
/// outcomes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TruncationParams {
    pub eps: f64,
    pub x_l: f64,
    pub x_s: f64,
    pub k: usize,
}

impl TruncationParams {
    pub fn outcomes(&self) -> usize {
        self.k + 1
    }

    fn weight(&self, u: f64) -> f64 {
        (-(self.eps / 2.0) * u).exp()
    }

    /// Adding the `k` small Alice-in weights to the large one, one at a
    /// time, leaves it unchanged.
    pub fn sum_is_truncated(&self) -> bool {
        let large = self.weight(self.x_l);
        let small = self.weight(self.x_s + 1.0);
        let mut acc = large;
        for _ in 0..self.k {
            acc += small;
        }
        small > 0.0 && acc == large
    }

    /// The `k` Alice-out small weights add up to about the weight of `o_1`,
    /// within relative error `tolerance`.
    pub fn sum_is_balanced(&self, tolerance: f64) -> bool {
        let large = self.weight(self.x_l + 1.0);
        let small = self.weight(self.x_s);
        let mut acc = large;
        for _ in 0..self.k {
            acc += small;
        }
        (acc / (2.0 * large) - 1.0).abs() <= tolerance
    }

    /// Alice-in and Alice-out utilities.
    pub fn arms(&self) -> [Vec<f64>; 2] {
        let mut inside = vec![self.x_s + 1.0; self.outcomes()];
        inside[0] = self.x_l;
        let mut outside = vec![self.x_s; self.outcomes()];
        outside[0] = self.x_l + 1.0;
        [inside, outside]
    }
}

/// Relative tolerance for the balanced sum.
pub const BALANCE_TOLERANCE: f64 = 0.01;

/// Searches `k` over powers of two with `k + 1 ≤ max_outcomes`, taking
/// `x_l = 0` and `x_s = x_l + 1 + ln(k)/(eps/2)` so the small Alice-out
/// weights sum to the weight of `o_1`. `None` when no `k` within budget
/// makes the Alice-in sum truncate.
pub fn find_truncation_params(eps: f64, max_outcomes: usize) -> Option<TruncationParams> {
    assert!(eps > 0.0 && eps.is_finite(), "eps must be positive");
    let beta = eps / 2.0;
    let x_l = 0.0;
    let mut k = 1usize;
    while k < max_outcomes {
        let params = TruncationParams {
            eps,
            x_l,
            x_s: x_l + 1.0 + (k as f64).ln() / beta,
            k,
        };
        if params.sum_is_truncated() && params.sum_is_balanced(BALANCE_TOLERANCE) {
            return Some(params);
        }
        k = k.checked_mul(2)?;
    }
    None
}

/// Which implementation an attack is run against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Naive,
    /// The exact base-2 mechanism, fed the attack utilities after a
    /// data-independent shift that moves the smallest one to zero.
    Exact(Eta),
}

impl Target {
    pub fn name(&self) -> &'static str {
        match self {
            Target::Naive => "naive",
            Target::Exact(_) => "exact",
        }
    }
}

/// Outcome of running both arms of an attack.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AttackReport {
    pub attack: &'static str,
    pub target: &'static str,
    pub outcomes: usize,
    pub trials: u64,
    /// Alice-in trials that returned `o_1`.
    pub in_hits: u64,
    /// Alice-out trials that returned `o_1`.
    pub out_hits: u64,
}

impl AttackReport {
    /// Correct guesses over both arms when guessing "in" exactly on `o_1`.
    pub fn correct_guesses(&self) -> u64 {
        self.in_hits + (self.trials - self.out_hits)
    }

    pub fn in_frequency(&self) -> f64 {
        self.in_hits as f64 / self.trials as f64
    }

    pub fn out_frequency(&self) -> f64 {
        self.out_hits as f64 / self.trials as f64
    }

    /// `P(o_1 | in) - P(o_1 | out)`, in `[-1, 1]`.
    pub fn advantage(&self) -> f64 {
        self.in_frequency() - self.out_frequency()
    }
}

struct Arms<'a> {
    attack: &'static str,
    eps: f64,
    raw: [&'a [f64]; 2],
    shifted: [&'a [f64]; 2],
    u_max: i64,
}

fn run_arms(arms: Arms<'_>, target: Target, trials: u64, seed: u64) -> Result<AttackReport> {
    let mut hits = [0u64; 2];
    match target {
        Target::Naive => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            for (arm, utilities) in arms.raw.iter().enumerate() {
                for _ in 0..trials {
                    hits[arm] += u64::from(naive_exp_mech(arms.eps, utilities, &mut rng) == Some(0));
                }
            }
        }
        Target::Exact(eta) => {
            let mechanism = exact_mechanism(eta, arms.u_max, arms.shifted[0].len())?;
            let mut src = seeded_bits(seed);
            for (arm, utilities) in arms.shifted.iter().enumerate() {
                for _ in 0..trials {
                    hits[arm] += u64::from(mechanism.sample_index_f64(utilities, &mut src)? == 0);
                }
            }
        }
    }
    Ok(AttackReport {
        attack: arms.attack,
        target: target.name(),
        outcomes: arms.raw[0].len(),
        trials,
        in_hits: hits[0],
        out_hits: hits[1],
    })
}

fn exact_mechanism(eta: Eta, u_max: i64, outcomes: usize) -> Result<Mechanism> {
    Mechanism::new(MechanismConfig::new(eta, 0, u_max, outcomes)?)
}

fn zero_arms(x: f64, k: usize) -> [Vec<f64>; 2] {
    let mut inside = vec![x + 1.0; k];
    inside[0] = x;
    [inside, vec![x; k]]
}

/// Zero-rounding attack with `k` outcomes: Alice-in has `u(o_1) = x` and
/// `x + 1` elsewhere, Alice-out has `x` everywhere.
pub fn run_attack_zero(eps: f64, k: usize, trials: u64, target: Target, seed: u64) -> Result<AttackReport> {
    if k < 2 {
        return Err(Error::InvalidParameter("the attack needs at least two outcomes".into()));
    }
    let x = find_zero_rounding_x(eps);
    let raw = zero_arms(x, k);
    let shifted = zero_arms(0.0, k);
    let arms = Arms {
        attack: "zero",
        eps,
        raw: [&raw[0], &raw[1]],
        shifted: [&shifted[0], &shifted[1]],
        u_max: 1,
    };
    run_arms(arms, target, trials, seed)
}

fn shifted_truncation_arms(params: &TruncationParams) -> ([Vec<f64>; 2], i64) {
    let spread = params.x_s - params.x_l;
    let mut inside = vec![spread + 1.0; params.outcomes()];
    inside[0] = 0.0;
    let mut outside = vec![spread; params.outcomes()];
    outside[0] = 1.0;
    (([inside, outside]), (spread + 1.0).ceil() as i64)
}

/// Truncated-addition attack: Alice-in has `u(o_1) = x_l` and `x_s + 1`
/// elsewhere, Alice-out has `x_l + 1` and `x_s`.
pub fn run_attack_truncated(params: &TruncationParams, trials: u64, target: Target, seed: u64) -> Result<AttackReport> {
    let raw = params.arms();
    let (shifted, u_max) = shifted_truncation_arms(params);
    let arms = Arms {
        attack: "truncated",
        eps: params.eps,
        raw: [&raw[0], &raw[1]],
        shifted: [&shifted[0], &shifted[1]],
        u_max,
    };
    run_arms(arms, target, trials, seed)
}

fn max_ratio(pairs: impl IntoIterator<Item = (BigRational, BigRational)>) -> BigRational {
    pairs
        .into_iter()
        .flat_map(|(a, b)| [&a / &b, &b / &a])
        .max()
        .unwrap_or_else(BigRational::zero)
}

/// Largest probability ratio between the two arms of the zero-rounding
/// attack under the exact mechanism, over all outcomes, in both directions.
pub fn exact_ratio_zero(eta: Eta, k: usize) -> Result<BigRational> {
    let mechanism = exact_mechanism(eta, 1, k)?;
    let mut inside = vec![1i64; k];
    inside[0] = 0;
    let p_in = mechanism.exact_distribution(&inside)?;
    let p_out = mechanism.exact_distribution(&vec![0; k])?;
    Ok(max_ratio(p_in.into_iter().zip(p_out)))
}

/// Largest probability ratio between the arms of the truncated-addition
/// attack under the exact mechanism.
///
/// The `k` non-target outcomes share one fractional part, so a rounding
/// configuration is described by how many of them round up. Coupling the
/// two arms on the same coins moves every rounded utility by at most one,
/// and the ratio is checked exactly for every configuration, which bounds
/// the ratio of the mixtures.
pub fn exact_ratio_truncated(eta: Eta, params: &TruncationParams) -> Result<BigRational> {
    let ([inside, outside], u_max) = shifted_truncation_arms(params);
    let mechanism = exact_mechanism(eta, u_max, params.outcomes())?;
    let levels = |target: f64, other: f64| -> Result<[BigRational; 3]> {
        // weights of o_1, a rounded-up and a rounded-down other outcome
        let rounded = [target as i64, other.ceil() as i64, other.floor() as i64];
        let ctx = ArithContext::new(mechanism.precision())?;
        let table = mechanism.weight_table(&ctx, &rounded)?;
        let w: Vec<BigRational> = table.weights().iter().map(|w| w.to_rational()).collect();
        Ok([w[0].clone(), w[1].clone(), w[2].clone()])
    };
    let w_in = levels(inside[0], inside[1])?;
    let w_out = levels(outside[0], outside[1])?;
    let k = params.k;
    let mut pairs = Vec::new();
    for up in 0..=k {
        let total = |w: &[BigRational; 3]| {
            &w[0] + &w[1] * BigRational::from_integer(up.into())
                + &w[2] * BigRational::from_integer((k - up).into())
        };
        let (t_in, t_out) = (total(&w_in), total(&w_out));
        pairs.push((&w_in[0] / &t_in, &w_out[0] / &t_out));
        if up > 0 {
            pairs.push((&w_in[1] / &t_in, &w_out[1] / &t_out));
        }
        if up < k {
            pairs.push((&w_in[2] / &t_in, &w_out[2] / &t_out));
        }
    }
    Ok(max_ratio(pairs))
}
