//! An exponential mechanism for differential privacy whose sampling is
//! exact: weights are powers of a dyadic base, all arithmetic runs at a
//! precision proven sufficient, and any rounded operation is reported as an
//! error rather than silently changing the output distribution.
//!
//! ```
//! use b2exp::{seeded_bits, Eta, Mechanism, MechanismConfig};
//!
//! let cfg = MechanismConfig::new(Eta::new(1, 1, 1)?, 0, 10, 4)?;
//! let mechanism = Mechanism::new(cfg)?;
//! let outcomes = ["a", "b", "c", "d"];
//! let mut bits = seeded_bits(7);
//! let chosen = mechanism.run(&[0.0, 2.5, 4.0, 9.0], &outcomes, &mut bits)?;
//! assert!(outcomes.contains(chosen));
//! # Ok::<(), b2exp::Error>(())
//! ```

pub mod arith;
pub mod attacks;
pub mod bench;
pub mod error;
pub mod laplace;
pub mod mechanism;
pub mod params;
pub mod precision;
pub mod sampling;

pub use arith::{max_precision, ArithContext, ExactValue, Flags};
pub use error::{Error, Result};
pub use laplace::{Laplace, LaplaceConfig};
pub use mechanism::{run_mechanism, Mechanism, MechanismConfig};
pub use params::Eta;
pub use precision::{PrecisionRequest, PrecisionStrategy};
pub use sampling::{
    normalized_sample, os_bits, seeded_bits, BitSource, OsBits, SampleOptions, SeededBits, Variant,
    WeightTable,
};
