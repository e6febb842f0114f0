//! Base-2 privacy parameters.

use std::fmt;
use std::str::FromStr;

use crate::arith::{ArithContext, ExactValue};
use crate::error::{Error, Result};

/// Privacy parameter `η = -z·log2(x/2^y)`, chosen so that the base
/// `2^-η = (x/2^y)^z` is an exactly representable dyadic rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Eta {
    x: u64,
    y: u32,
    z: u32,
}

impl Eta {
    /// Validates `x ≥ 1`, `y ≥ 1`, `z ≥ 1` and `x ≤ 2^y`.
    pub fn new(x: u64, y: u32, z: u32) -> Result<Eta> {
        if x == 0 {
            return Err(Error::InvalidParameter("x must be positive".into()));
        }
        if y == 0 {
            return Err(Error::InvalidParameter("y must be positive".into()));
        }
        if z == 0 {
            return Err(Error::InvalidParameter("z must be positive".into()));
        }
        if y < 64 && x > 1u64 << y {
            return Err(Error::InvalidParameter(format!(
                "x/2^y must not exceed 1 (got {x}/2^{y})"
            )));
        }
        Ok(Eta { x, y, z })
    }

    pub fn x(&self) -> u64 {
        self.x
    }

    pub fn y(&self) -> u32 {
        self.y
    }

    pub fn z(&self) -> u32 {
        self.z
    }

    /// Number of bits needed to write `x` in binary.
    pub fn b_x(&self) -> u32 {
        u64::BITS - self.x.leading_zeros()
    }

    /// Upper bound `z·(y + b_x)` on the mantissa bits of the base.
    pub fn base_bits(&self) -> u64 {
        self.z as u64 * (self.y as u64 + self.b_x() as u64)
    }

    /// `η` as a double. Report-only.
    pub fn value(&self) -> f64 {
        self.z as f64 * (self.y as f64 - (self.x as f64).log2())
    }

    /// The base `2^-η`, computed exactly.
    ///
    /// Fails if `ctx` lacks the precision to hold it.
    pub fn base(&self, ctx: &ArithContext) -> Result<ExactValue> {
        let fraction = ExactValue::dyadic(self.x, -(self.y as i64));
        let (base, exact) = ctx.monitored(|c| c.pow_int(&fraction, self.z as u64));
        if exact {
            Ok(base)
        } else {
            Err(Error::InexactArithmetic("base computation"))
        }
    }

    /// Base-e equivalent `ln(2)·η` of a base-2 guarantee.
    ///
    /// This is the only approximate quantity in the crate and is never fed
    /// back into sampling.
    pub fn to_epsilon_report_only(&self) -> f64 {
        std::f64::consts::LN_2 * self.value()
    }
}

impl fmt::Display for Eta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.x, self.y, self.z)
    }
}

impl FromStr for Eta {
    type Err = Error;

    /// Parses `x,y,z`.
    fn from_str(s: &str) -> Result<Eta> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [x, y, z] = parts.as_slice() else {
            return Err(Error::InvalidParameter(format!(
                "expected eta as x,y,z, got {s:?}"
            )));
        };
        let bad = |what: &str| Error::InvalidParameter(format!("cannot parse {what} in {s:?}"));
        Eta::new(
            x.parse().map_err(|_| bad("x"))?,
            y.parse().map_err(|_| bad("y"))?,
            z.parse().map_err(|_| bad("z"))?,
        )
    }
}
