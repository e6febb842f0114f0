//! Working-precision determination.
//!
//! Both strategies depend only on the data-independent request, so the
//! precision is fixed before any utility is seen.

use crate::arith::{max_precision, ArithContext, ExactValue};
use crate::error::{Error, Result};
use crate::params::Eta;

/// Data-independent bounds that determine the precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrecisionRequest {
    pub u_min: i64,
    pub u_max: i64,
    pub o_max: u64,
    pub eta: Eta,
}

/// How the mechanism picks its working precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrecisionStrategy {
    /// Closed-form worst case.
    #[default]
    Theoretical,
    /// Doubling search with [`check_precision`].
    Empirical,
}

impl PrecisionRequest {
    pub fn new(u_min: i64, u_max: i64, o_max: u64, eta: Eta) -> Result<Self> {
        if u_min > u_max {
            return Err(Error::InvalidParameter(format!(
                "u_min ({u_min}) exceeds u_max ({u_max})"
            )));
        }
        if o_max == 0 {
            return Err(Error::InvalidParameter("o_max must be positive".into()));
        }
        Ok(PrecisionRequest {
            u_min,
            u_max,
            o_max,
            eta,
        })
    }

    /// Shift applied to utilities before exponentiation so that exponents
    /// are nonnegative. Multiplying every weight by the same power of the
    /// base leaves the distribution unchanged.
    pub fn utility_offset(&self) -> i64 {
        self.u_min.min(0)
    }

    pub fn precision(&self, strategy: PrecisionStrategy) -> Result<u64> {
        match strategy {
            PrecisionStrategy::Theoretical => theoretical_precision(self),
            PrecisionStrategy::Empirical => empirical_precision(self),
        }
    }
}

/// `(max(1,|u_min|) + max(1,|u_max|))·z·(y + b_x) + o_max`.
pub fn theoretical_precision(req: &PrecisionRequest) -> Result<u64> {
    let span = req
        .u_min
        .unsigned_abs()
        .max(1)
        .checked_add(req.u_max.unsigned_abs().max(1));
    let bits = span
        .and_then(|s| s.checked_mul(req.eta.base_bits()))
        .and_then(|b| b.checked_add(req.o_max));
    let max = max_precision();
    match bits {
        Some(p) if p <= max => Ok(p),
        _ => Err(Error::InvalidPrecision {
            requested: bits.unwrap_or(u64::MAX),
            max,
        }),
    }
}

/// Smallest precision on the schedule `1, 2, 4, ...` that passes
/// [`check_precision`], with the theoretical bound inserted where the
/// doubling would first overshoot it. The result is therefore never above
/// the theoretical bound, and still at most twice the minimal sufficient
/// precision.
pub fn empirical_precision(req: &PrecisionRequest) -> Result<u64> {
    let max = max_precision();
    let cap = theoretical_precision(req).ok();
    let mut p = 1u64;
    loop {
        if check_precision(req, p) {
            return Ok(p);
        }
        let next = p.checked_mul(2).filter(|&n| n <= max);
        p = match (next, cap) {
            (Some(n), Some(c)) if p < c && n > c => c,
            (Some(n), _) => n,
            (None, _) => {
                return Err(Error::InvalidPrecision {
                    requested: p.saturating_mul(2),
                    max,
                })
            }
        };
    }
}

/// Whether precision `p` represents every weight together with the ceiling
/// of the largest possible total exactly.
pub fn check_precision(req: &PrecisionRequest, p: u64) -> bool {
    let Ok(ctx) = ArithContext::new(p) else {
        return false;
    };
    let offset = req.utility_offset();
    let (_, exact) = ctx.monitored(|c| {
        let Ok(base) = req.eta.base(c) else {
            return;
        };
        let mut weight = c.pow_int(&base, (req.u_min - offset) as u64);
        let mut maxsum = ExactValue::zero();
        for _ in 0..req.o_max {
            maxsum = c.add(&maxsum, &weight);
        }
        let ceiling = c.ceil(&maxsum);
        for u in req.u_min..=req.u_max {
            if u > req.u_min {
                weight = c.mul(&weight, &base);
            }
            c.add(&weight, &ceiling);
        }
    });
    exact
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(u_min: i64, u_max: i64, o_max: u64) -> PrecisionRequest {
        PrecisionRequest::new(u_min, u_max, o_max, Eta::new(1, 1, 1).unwrap()).unwrap()
    }

    #[test]
    fn theoretical_examples() {
        assert_eq!(theoretical_precision(&req(0, 16, 513)).unwrap(), 547);
        assert_eq!(theoretical_precision(&req(0, 10, 10)).unwrap(), 32);
        assert_eq!(theoretical_precision(&req(0, 0, 1)).unwrap(), 5);
        assert!(theoretical_precision(&req(0, i64::MAX, 1)).is_err());
    }

    #[test]
    fn request_validation() {
        let eta = Eta::new(1, 1, 1).unwrap();
        assert!(PrecisionRequest::new(3, 2, 1, eta).is_err());
        assert!(PrecisionRequest::new(0, 2, 0, eta).is_err());
    }

    #[test]
    fn hand_enumerated_small_case() {
        // 1/2 + ceil(1) needs two bits, 1 + 1 one
        let r = req(0, 1, 1);
        assert!(!check_precision(&r, 1));
        assert!(check_precision(&r, 2));
        assert_eq!(empirical_precision(&r).unwrap(), 2);
    }

    #[test]
    fn one_bit_cannot_hold_two_weights() {
        assert!(!check_precision(&req(0, 2, 1), 1));
        assert!(!check_precision(&req(0, 5, 4), 1));
    }

    #[test]
    fn trivial_request_passes() {
        let r = req(0, 0, 1);
        assert!(check_precision(&r, 2));
        let eta = Eta::new(15, 4, 1).unwrap();
        let r = PrecisionRequest::new(0, 0, 1, eta).unwrap();
        assert!(check_precision(&r, eta.base_bits()));
    }

    #[test]
    fn empirical_at_most_theoretical() {
        let etas = [(1, 1, 1), (15, 4, 1), (1, 2, 2)].map(|(x, y, z)| Eta::new(x, y, z).unwrap());
        for eta in etas {
            for u_max in 1..=32 {
                for o_max in [1, 16, 256] {
                    let r = PrecisionRequest::new(0, u_max, o_max, eta).unwrap();
                    let e = empirical_precision(&r).unwrap();
                    let t = theoretical_precision(&r).unwrap();
                    assert!(e <= t, "{eta} u_max={u_max} o_max={o_max}: {e} > {t}");
                    assert!(check_precision(&r, e));
                    assert!(check_precision(&r, t));
                    assert!(e.is_power_of_two() || e == t);
                    // the previous schedule point failed, so e is within 2x of minimal
                    let previous = if e.is_power_of_two() { e / 2 } else { 1 << (63 - e.leading_zeros()) };
                    assert!(e == 1 || !check_precision(&r, previous));
                }
            }
        }
    }

    #[test]
    fn capped_by_theoretical_bound() {
        // base 1/16: 1 + 2^-16 needs 17 bits, doubling alone would give 32
        let r = PrecisionRequest::new(0, 4, 1, Eta::new(1, 2, 2).unwrap()).unwrap();
        assert_eq!(theoretical_precision(&r).unwrap(), 31);
        assert!(!check_precision(&r, 16));
        assert!(check_precision(&r, 17));
        assert_eq!(empirical_precision(&r).unwrap(), 31);
    }

    #[test]
    fn negative_minimum_utility() {
        let r = req(-3, 4, 8);
        let t = theoretical_precision(&r).unwrap();
        assert_eq!(t, (3 + 4) * 2 + 8);
        assert!(check_precision(&r, t));
        assert!(empirical_precision(&r).unwrap() <= t);
    }
}
