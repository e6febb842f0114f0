//! Arbitrary-precision binary floating point with an exactness contract.
//!
//! An [`ExactValue`] is a dyadic rational `±m·2^e` with `m` odd (or zero).
//! Values are produced either by exact constructors or by the operations of
//! an [`ArithContext`], which round the infinite-precision result to the
//! context's mantissa width (round to nearest, ties to even) and record in
//! its [`Flags`] whether anything was lost. Callers check the flags at phase
//! boundaries with [`ArithContext::monitored`] rather than per operation.
//!
//! Division is deliberately absent.

use std::borrow::Cow;
use std::cell::Cell;
use std::cmp::Ordering;
use std::fmt;
use std::sync::OnceLock;

use bitflags::bitflags;
use num_bigint::{BigInt, BigUint, Sign};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Environment variable that lowers the platform maximum precision.
pub const MAX_PRECISION_ENV: &str = "B2EXP_MAX_PRECISION";

// Mirrors MPFR_PREC_MAX on LP64 targets; bit counts must stay within i64.
const DEFAULT_MAX_PRECISION: u64 = i64::MAX as u64 - 256;

/// Largest admissible binary exponent of the leading bit, in magnitude.
pub const EXPONENT_LIMIT: i64 = 1 << 62;

/// Maximum mantissa width supported on this platform.
///
/// Read once per process; [`MAX_PRECISION_ENV`] may lower it.
pub fn max_precision() -> u64 {
    static MAX: OnceLock<u64> = OnceLock::new();
    *MAX.get_or_init(|| {
        std::env::var(MAX_PRECISION_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<u64>().ok())
            .filter(|&p| p >= 1)
            .map_or(DEFAULT_MAX_PRECISION, |p| p.min(DEFAULT_MAX_PRECISION))
    })
}

bitflags! {
    /// Status raised by context operations.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct Flags: u8 {
        const INEXACT = 1;
        const OVERFLOW = 1 << 1;
        const UNDERFLOW = 1 << 2;
        const NAN = 1 << 3;
    }
}

/// A dyadic rational `±mantissa·2^exponent` held in canonical form.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ExactValue {
    negative: bool,
    mantissa: BigUint,
    exponent: i64,
}

impl ExactValue {
    pub fn zero() -> Self {
        ExactValue {
            negative: false,
            mantissa: BigUint::zero(),
            exponent: 0,
        }
    }

    pub fn one() -> Self {
        ExactValue::pow2(0)
    }

    /// `2^exponent`.
    pub fn pow2(exponent: i64) -> Self {
        ExactValue {
            negative: false,
            mantissa: BigUint::one(),
            exponent,
        }
    }

    /// `mantissa·2^exponent`, exactly.
    pub fn dyadic(mantissa: impl Into<BigInt>, exponent: i64) -> Self {
        let (sign, magnitude) = mantissa.into().into_parts();
        Self::from_parts(sign == Sign::Minus, magnitude, exponent as i128)
            .expect("dyadic exponent out of range")
    }

    /// The exact binary value of a finite double. `None` for NaN and infinities.
    pub fn from_f64(x: f64) -> Option<Self> {
        if !x.is_finite() {
            return None;
        }
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let fraction = bits & ((1u64 << 52) - 1);
        let (mantissa, exponent) = if biased == 0 {
            (fraction, -1074)
        } else {
            (fraction | (1u64 << 52), biased - 1075)
        };
        Self::from_parts(negative, BigUint::from(mantissa), exponent as i128)
    }

    fn from_parts(negative: bool, mantissa: BigUint, exponent: i128) -> Option<Self> {
        if mantissa.is_zero() {
            return Some(Self::zero());
        }
        let tz = mantissa.trailing_zeros().unwrap_or(0);
        let exponent = i64::try_from(exponent + tz as i128).ok()?;
        Some(ExactValue {
            negative,
            mantissa: mantissa >> tz,
            exponent,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.negative
    }

    pub fn is_positive(&self) -> bool {
        !self.negative && !self.is_zero()
    }

    /// Odd mantissa (zero for zero).
    pub fn mantissa(&self) -> &BigUint {
        &self.mantissa
    }

    pub fn exponent(&self) -> i64 {
        self.exponent
    }

    /// Number of significant bits, i.e. the minimal mantissa width that
    /// represents this value exactly.
    pub fn significant_bits(&self) -> u64 {
        self.mantissa.bits()
    }

    /// Smallest `k` with `|self| < 2^k`. Meaningless for zero.
    pub fn top(&self) -> i64 {
        self.exponent + self.mantissa.bits() as i64
    }

    /// Smallest `g` with `2^g ≥ self`, for positive values.
    pub fn ceil_log2(&self) -> i64 {
        debug_assert!(self.is_positive());
        if self.mantissa.is_one() {
            self.exponent
        } else {
            self.top()
        }
    }

    pub fn is_integer(&self) -> bool {
        self.exponent >= 0 || self.is_zero()
    }

    fn signed_mantissa(&self) -> BigInt {
        let sign = if self.negative { Sign::Minus } else { Sign::Plus };
        BigInt::from_biguint(sign, self.mantissa.clone())
    }

    pub fn floor(&self) -> BigInt {
        self.round_integer(false)
    }

    pub fn ceil(&self) -> BigInt {
        self.round_integer(true)
    }

    fn round_integer(&self, up: bool) -> BigInt {
        if self.exponent >= 0 {
            return self.signed_mantissa() << self.exponent as u64;
        }
        let shift = self.exponent.unsigned_abs();
        let truncated = BigInt::from(&self.mantissa >> shift);
        let fractional = self.mantissa.bits() > 0 && self.mantissa.trailing_zeros().unwrap_or(0) < shift;
        match (self.negative, up) {
            (false, false) => truncated,
            (false, true) => truncated + u32::from(fractional),
            (true, false) => -(truncated + u32::from(fractional)),
            (true, true) => -truncated,
        }
    }

    /// `self - floor(self)`, which is always exactly representable.
    pub fn fract(&self) -> ExactValue {
        if self.is_integer() {
            return ExactValue::zero();
        }
        let shift = self.exponent.unsigned_abs();
        let low = &self.mantissa & ((BigUint::one() << shift) - 1u32);
        let low = if self.negative {
            (BigUint::one() << shift) - low
        } else {
            low
        };
        Self::from_parts(false, low, self.exponent as i128).expect("fraction exponent in range")
    }

    pub fn abs(&self) -> ExactValue {
        ExactValue {
            negative: false,
            ..self.clone()
        }
    }

    /// Nearest double; for reporting only.
    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let bits = self.mantissa.bits();
        let shift = bits.saturating_sub(64);
        let head = (&self.mantissa >> shift).to_u64().unwrap_or(u64::MAX) as f64;
        let magnitude = ldexp(head, self.exponent as i128 + shift as i128);
        if self.negative {
            -magnitude
        } else {
            magnitude
        }
    }

    pub fn to_rational(&self) -> BigRational {
        let numer = self.signed_mantissa();
        if self.exponent >= 0 {
            BigRational::from_integer(numer << self.exponent as u64)
        } else {
            BigRational::new(numer, BigInt::one() << self.exponent.unsigned_abs())
        }
    }

    /// Exact decimal expansion (dyadic rationals always terminate).
    pub fn to_decimal_string(&self) -> String {
        let sign = if self.negative { "-" } else { "" };
        if self.exponent >= 0 {
            return format!("{sign}{}", &self.mantissa << self.exponent as u64);
        }
        let scale = self.exponent.unsigned_abs() as usize;
        let digits = (&self.mantissa * BigUint::from(5u32).pow(scale as u32)).to_string();
        let padded = if digits.len() <= scale {
            format!("{}{digits}", "0".repeat(scale + 1 - digits.len()))
        } else {
            digits
        };
        let (int_part, frac_part) = padded.split_at(padded.len() - scale);
        format!("{sign}{int_part}.{frac_part}")
    }
}

fn ldexp(mut x: f64, mut e: i128) -> f64 {
    let step = 2f64.powi(1000);
    while e > 1000 && x.is_finite() {
        x *= step;
        e -= 1000;
    }
    while e < -1000 && x != 0.0 {
        x /= step;
        e += 1000;
    }
    x * 2f64.powi(e as i32)
}

fn cmp_magnitude(a: &ExactValue, b: &ExactValue) -> Ordering {
    match (a.is_zero(), b.is_zero()) {
        (true, true) => return Ordering::Equal,
        (true, false) => return Ordering::Less,
        (false, true) => return Ordering::Greater,
        _ => {}
    }
    a.top().cmp(&b.top()).then_with(|| {
        // Same leading position, so the exponent gap is bounded by the width.
        if a.exponent >= b.exponent {
            (&a.mantissa << (a.exponent - b.exponent) as u64).cmp(&b.mantissa)
        } else {
            a.mantissa.cmp(&(&b.mantissa << (b.exponent - a.exponent) as u64))
        }
    })
}

impl Ord for ExactValue {
    fn cmp(&self, other: &Self) -> Ordering {
        let sign = |v: &ExactValue| -> i8 {
            if v.is_zero() {
                0
            } else if v.negative {
                -1
            } else {
                1
            }
        };
        match sign(self).cmp(&sign(other)) {
            Ordering::Equal if self.negative => cmp_magnitude(other, self),
            Ordering::Equal => cmp_magnitude(self, other),
            unequal => unequal,
        }
    }
}

impl PartialOrd for ExactValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl std::ops::Neg for ExactValue {
    type Output = ExactValue;

    fn neg(mut self) -> ExactValue {
        if !self.is_zero() {
            self.negative = !self.negative;
        }
        self
    }
}

impl From<i64> for ExactValue {
    fn from(v: i64) -> Self {
        ExactValue::dyadic(v, 0)
    }
}

impl From<u64> for ExactValue {
    fn from(v: u64) -> Self {
        ExactValue::dyadic(v, 0)
    }
}

impl From<BigInt> for ExactValue {
    fn from(v: BigInt) -> Self {
        ExactValue::dyadic(v, 0)
    }
}

impl fmt::Debug for ExactValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.negative { "-" } else { "" };
        write!(f, "{sign}{}*2^{}", self.mantissa, self.exponent)
    }
}

impl fmt::Display for ExactValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal_string())
    }
}

/// Working precision plus sticky status flags.
///
/// Not `Sync`: a context and the values it produces belong to one thread at a
/// time. Use one context per thread for parallel work.
#[derive(Debug)]
pub struct ArithContext {
    precision: u64,
    flags: Cell<Flags>,
    operations: Cell<u64>,
}

impl ArithContext {
    pub fn new(precision: u64) -> Result<Self> {
        let max = max_precision();
        if precision == 0 || precision > max {
            return Err(Error::InvalidPrecision {
                requested: precision,
                max,
            });
        }
        Ok(ArithContext {
            precision,
            flags: Cell::new(Flags::empty()),
            operations: Cell::new(0),
        })
    }

    pub fn precision(&self) -> u64 {
        self.precision
    }

    pub fn flags(&self) -> Flags {
        self.flags.get()
    }

    pub fn clear_flags(&self) {
        self.flags.set(Flags::empty());
    }

    pub fn raise(&self, flags: Flags) {
        self.flags.set(self.flags.get() | flags);
    }

    /// Number of arithmetic operations performed through this context.
    pub fn operations(&self) -> u64 {
        self.operations.get()
    }

    fn tick(&self) {
        self.operations.set(self.operations.get() + 1);
    }

    /// Runs `f` with fresh flags and reports whether every operation in it
    /// was exact. Flags raised inside remain visible afterwards, so nested
    /// regions never hide a failure from an enclosing one.
    pub fn monitored<R>(&self, f: impl FnOnce(&Self) -> R) -> (R, bool) {
        let outer = self.flags.get();
        self.flags.set(Flags::empty());
        let result = f(self);
        let inner = self.flags.get();
        self.flags.set(outer | inner);
        (result, inner.is_empty())
    }

    /// Rounds a magnitude to the working precision and applies range checks.
    fn finish(&self, negative: bool, mantissa: BigUint, exponent: i128) -> ExactValue {
        if mantissa.is_zero() {
            return ExactValue::zero();
        }
        let bits = mantissa.bits();
        let (mantissa, exponent) = if bits > self.precision {
            let shift = bits - self.precision;
            let mut kept = &mantissa >> shift;
            let round_bit = mantissa.bit(shift - 1);
            let trailing = mantissa.trailing_zeros().unwrap_or(0);
            if round_bit && (trailing < shift - 1 || kept.bit(0)) {
                kept += 1u32;
            }
            if trailing < shift {
                self.raise(Flags::INEXACT);
            }
            (kept, exponent + shift as i128)
        } else {
            (mantissa, exponent)
        };
        let top = exponent + mantissa.bits() as i128;
        if top > EXPONENT_LIMIT as i128 {
            self.raise(Flags::OVERFLOW | Flags::INEXACT);
            let max = ExactValue::pow2(EXPONENT_LIMIT - 1);
            return if negative { -max } else { max };
        }
        if top < -(EXPONENT_LIMIT as i128) {
            self.raise(Flags::UNDERFLOW | Flags::INEXACT);
            return ExactValue::zero();
        }
        ExactValue::from_parts(negative, mantissa, exponent).expect("exponent checked above")
    }

    /// Converts a double, raising `NAN` (and returning zero) for non-finite input.
    pub fn from_f64(&self, x: f64) -> ExactValue {
        self.tick();
        match ExactValue::from_f64(x) {
            Some(v) => self.finish(v.negative, v.mantissa, v.exponent as i128),
            None => {
                self.raise(Flags::NAN);
                ExactValue::zero()
            }
        }
    }

    /// `v` rounded to the working precision.
    pub fn round(&self, v: &ExactValue) -> ExactValue {
        self.tick();
        self.finish(v.negative, v.mantissa.clone(), v.exponent as i128)
    }

    pub fn add(&self, a: &ExactValue, b: &ExactValue) -> ExactValue {
        self.tick();
        self.add_signed(a, b, b.negative)
    }

    pub fn sub(&self, a: &ExactValue, b: &ExactValue) -> ExactValue {
        self.tick();
        self.add_signed(a, b, !b.negative && !b.is_zero())
    }

    fn add_signed(&self, a: &ExactValue, b: &ExactValue, b_negative: bool) -> ExactValue {
        if b.is_zero() {
            return self.finish(a.negative, a.mantissa.clone(), a.exponent as i128);
        }
        if a.is_zero() {
            return self.finish(b_negative, b.mantissa.clone(), b.exponent as i128);
        }
        // x carries the larger leading bit.
        let (x, x_neg, y, y_neg) = if a.top() >= b.top() {
            (a, a.negative, b, b_negative)
        } else {
            (b, b_negative, a, a.negative)
        };
        // An operand lying entirely below the rounding window of x only acts
        // as a sticky bit; substitute the smallest such bit to bound the shift.
        let floor = (x.exponent as i128).min(x.top() as i128 - self.precision as i128 - 2);
        let (y_mantissa, y_exponent): (Cow<'_, BigUint>, i128) = if (y.top() as i128) < floor {
            (Cow::Owned(BigUint::one()), floor - 1)
        } else {
            (Cow::Borrowed(&y.mantissa), y.exponent as i128)
        };
        let base = (x.exponent as i128).min(y_exponent);
        let xm = &x.mantissa << (x.exponent as i128 - base) as u64;
        let ym = y_mantissa.as_ref() << (y_exponent - base) as u64;
        let (negative, magnitude) = if x_neg == y_neg {
            (x_neg, xm + ym)
        } else if xm >= ym {
            (x_neg, xm - ym)
        } else {
            (y_neg, ym - xm)
        };
        self.finish(negative, magnitude, base)
    }

    pub fn mul(&self, a: &ExactValue, b: &ExactValue) -> ExactValue {
        self.tick();
        if a.is_zero() || b.is_zero() {
            return ExactValue::zero();
        }
        self.finish(
            a.negative != b.negative,
            &a.mantissa * &b.mantissa,
            a.exponent as i128 + b.exponent as i128,
        )
    }

    /// Exact comparison, counted as an operation.
    pub fn cmp(&self, a: &ExactValue, b: &ExactValue) -> Ordering {
        self.tick();
        a.cmp(b)
    }

    /// Integer ceiling, rounded to the working precision.
    pub fn ceil(&self, v: &ExactValue) -> ExactValue {
        self.tick();
        let (sign, magnitude) = v.ceil().into_parts();
        self.finish(sign == Sign::Minus, magnitude, 0)
    }

    /// `base^n` by repeated squaring. Exact whenever the precision is at
    /// least `max(1, significant_bits(base)·n)`.
    pub fn pow_int(&self, base: &ExactValue, mut n: u64) -> ExactValue {
        let mut result = ExactValue::one();
        let mut square = base.clone();
        while n > 0 {
            if n & 1 == 1 {
                result = self.mul(&result, &square);
            }
            n >>= 1;
            if n > 0 {
                square = self.mul(&square, &square);
            }
        }
        result
    }

    /// `base^n` with a square-and-multiply ladder whose operation count
    /// depends only on `bound`, not on `n`.
    ///
    /// # Panics
    /// If `n > bound`.
    pub fn pow_int_ladder(&self, base: &ExactValue, n: u64, bound: u64) -> ExactValue {
        assert!(n <= bound, "exponent {n} exceeds ladder bound {bound}");
        let one = ExactValue::one();
        let width = u64::BITS - bound.leading_zeros();
        let mut result = ExactValue::one();
        for i in (0..width).rev() {
            result = self.mul(&result, &result);
            let factor = if (n >> i) & 1 == 1 { base } else { &one };
            result = self.mul(&result, factor);
        }
        result
    }
}
