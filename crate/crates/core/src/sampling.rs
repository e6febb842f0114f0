//! Division-free sampling proportional to exact weights.
//!
//! A uniform dyadic `s` is drawn from `[0, 2^g)` with `p` random bits and
//! rejected until it lands in `[0, t)`; element `i` owns `[c_{i-1}, c_i)`.

use std::cmp::Ordering;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::arith::{ArithContext, ExactValue};
use crate::error::{Error, Result};

/// A stream of unbiased random bits, consumed strictly in order.
pub trait BitSource {
    fn next_bit(&mut self) -> bool;

    /// The next `n ≤ 64` bits, first bit most significant.
    fn next_bits(&mut self, n: u32) -> u64 {
        debug_assert!(n <= 64);
        (0..n).fold(0u64, |acc, _| (acc << 1) | u64::from(self.next_bit()))
    }
}

impl<B: BitSource + ?Sized> BitSource for &mut B {
    fn next_bit(&mut self) -> bool {
        (**self).next_bit()
    }
}

/// Adapts any [`RngCore`] by buffering one 64-bit word at a time.
#[derive(Debug, Clone)]
pub struct RngBits<R> {
    rng: R,
    word: u64,
    left: u32,
}

impl<R: RngCore> RngBits<R> {
    pub fn new(rng: R) -> Self {
        RngBits {
            rng,
            word: 0,
            left: 0,
        }
    }
}

impl<R: RngCore> BitSource for RngBits<R> {
    fn next_bit(&mut self) -> bool {
        if self.left == 0 {
            self.word = self.rng.next_u64();
            self.left = 64;
        }
        self.left -= 1;
        (self.word >> self.left) & 1 == 1
    }
}

/// Deterministic ChaCha20 bit stream.
pub type SeededBits = RngBits<ChaCha20Rng>;

pub fn seeded_bits(seed: u64) -> SeededBits {
    RngBits::new(ChaCha20Rng::seed_from_u64(seed))
}

/// Operating-system randomness, buffered a word at a time.
pub fn os_bits() -> RngBits<OsRng> {
    RngBits::new(OsRng)
}

/// Operating-system randomness, fetched per bit so that the cost of a draw
/// scales with the number of bits it consumes.
#[derive(Debug, Clone, Copy, Default)]
pub struct OsBits;

impl BitSource for OsBits {
    fn next_bit(&mut self) -> bool {
        OsRng.next_u32() & 1 == 1
    }
}

/// Replays a fixed bit string. Panics when exhausted.
#[derive(Debug, Clone)]
pub struct FixedBits {
    bits: Vec<bool>,
    position: usize,
}

impl FixedBits {
    pub fn new(bits: Vec<bool>) -> Self {
        FixedBits { bits, position: 0 }
    }

    /// The low `width` bits of `value`, most significant first.
    pub fn from_integer(value: u64, width: u32) -> Self {
        FixedBits::new((0..width).rev().map(|i| (value >> i) & 1 == 1).collect())
    }

    pub fn consumed(&self) -> usize {
        self.position
    }
}

impl BitSource for FixedBits {
    fn next_bit(&mut self) -> bool {
        let bit = *self
            .bits
            .get(self.position)
            .expect("fixed bit string exhausted");
        self.position += 1;
        bit
    }
}

/// Counts bits drawn from the wrapped source.
#[derive(Debug, Clone)]
pub struct CountingBits<B> {
    inner: B,
    count: u64,
}

impl<B> CountingBits<B> {
    pub fn new(inner: B) -> Self {
        CountingBits { inner, count: 0 }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: BitSource> BitSource for CountingBits<B> {
    fn next_bit(&mut self) -> bool {
        self.count += 1;
        self.inner.next_bit()
    }
}

/// How the drawn value is mapped to an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Reveal the accepted value bit by bit and stop as soon as one element
    /// remains.
    Standard,
    /// Compare the accepted value against every cumulative weight. Work is
    /// independent of where the mass sits.
    #[default]
    FullScan,
    /// Lazy bit-by-bit draw against the table padded to a power of two,
    /// restarting when the padding wins. Reintroduces a timing channel.
    Optimized,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "standard" => Ok(Variant::Standard),
            "full-scan" => Ok(Variant::FullScan),
            "optimized" => Ok(Variant::Optimized),
            other => Err(Error::InvalidParameter(format!("unknown variant {other:?}"))),
        }
    }
}

/// Sampling options.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOptions {
    k: u64,
    pub variant: Variant,
}

impl SampleOptions {
    /// `k` is the minimum number of rejection-loop iterations.
    pub fn new(k: u64, variant: Variant) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(SampleOptions { k, variant })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    /// Iteration cap that turns a broken bit source into an error.
    pub fn retry_limit(&self) -> u64 {
        self.k.saturating_add(64)
    }
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            k: 1,
            variant: Variant::default(),
        }
    }
}

/// Exact weights with their running sums.
#[derive(Debug, Clone)]
pub struct WeightTable {
    weights: Vec<ExactValue>,
    // boundaries[i] = c_i, with c_0 = 0 and c_n = t
    boundaries: Vec<ExactValue>,
    g: i64,
}

impl WeightTable {
    /// Computes the cumulative sums, total and sampling ceiling `g`.
    pub fn new(ctx: &ArithContext, weights: Vec<ExactValue>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("no weights".into()));
        }
        if weights.iter().any(ExactValue::is_negative) {
            return Err(Error::InvalidInput("negative weight".into()));
        }
        let (boundaries, exact) = ctx.monitored(|c| {
            let mut boundaries = Vec::with_capacity(weights.len() + 1);
            boundaries.push(ExactValue::zero());
            for w in &weights {
                let next = c.add(boundaries.last().expect("nonempty"), w);
                boundaries.push(next);
            }
            boundaries
        });
        if !exact {
            return Err(Error::InsufficientPrecision);
        }
        let total = boundaries.last().expect("nonempty");
        if total.is_zero() {
            return Err(Error::InvalidInput("total weight is zero".into()));
        }
        let g = total.ceil_log2();
        Ok(WeightTable {
            weights,
            boundaries,
            g,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[ExactValue] {
        &self.weights
    }

    /// `c_1, ..., c_n`.
    pub fn cumulative(&self) -> &[ExactValue] {
        &self.boundaries[1..]
    }

    pub fn total(&self) -> &ExactValue {
        self.boundaries.last().expect("nonempty")
    }

    /// Smallest `g` with `2^g ≥ t`.
    pub fn g(&self) -> i64 {
        self.g
    }
}

/// Statistics of one sampling call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleStats {
    pub index: usize,
    /// Rejection-loop iterations, or lazy attempts for the optimized variant.
    pub iterations: u64,
}

/// A uniform value on the grid `2^{g-p}·{0, ..., 2^p - 1}`, as its integer
/// numerator.
pub(crate) fn draw_numerator(src: &mut impl BitSource, p: u64) -> BigUint {
    let mut digits = vec![0u32; p.div_ceil(32) as usize];
    for position in (0..p).rev() {
        if src.next_bit() {
            digits[(position / 32) as usize] |= 1 << (position % 32);
        }
    }
    BigUint::new(digits)
}

/// Draws `p`-bit values until one falls below `t` and at least `k` draws have
/// been made, returning the first in-range value and the iteration count.
pub fn get_random_value(
    ctx: &ArithContext,
    p: u64,
    t: &ExactValue,
    k: u64,
    src: &mut impl BitSource,
) -> Result<(ExactValue, u64)> {
    if !t.is_positive() {
        return Err(Error::InvalidInput("upper bound must be positive".into()));
    }
    if p == 0 {
        return Err(Error::InvalidParameter("p must be at least 1".into()));
    }
    let k = k.max(1);
    let limit = k.saturating_add(64);
    let exponent = t.ceil_log2() - p as i64;
    let mut accepted = None;
    let mut iterations = 0u64;
    while iterations < k || accepted.is_none() {
        if iterations >= limit {
            return Err(Error::RetryLimit(limit));
        }
        let s = ExactValue::dyadic(draw_numerator(src, p), exponent);
        iterations += 1;
        let in_range = ctx.cmp(&s, t) == Ordering::Less;
        if in_range && accepted.is_none() {
            accepted = Some(s);
        }
    }
    Ok((accepted.expect("loop exits only once a value is accepted"), iterations))
}

/// Samples index `i` with probability exactly `w_i / t`, using the
/// context's precision as the number of bits per draw.
pub fn normalized_sample(
    ctx: &ArithContext,
    table: &WeightTable,
    opts: &SampleOptions,
    src: &mut impl BitSource,
) -> Result<usize> {
    sample_with_stats(ctx, table, opts, src).map(|s| s.index)
}

pub fn sample_with_stats(
    ctx: &ArithContext,
    table: &WeightTable,
    opts: &SampleOptions,
    src: &mut impl BitSource,
) -> Result<SampleStats> {
    let p = ctx.precision();
    if opts.variant == Variant::Optimized {
        return sample_lazy(ctx, table, opts, src);
    }
    let (s, iterations) = get_random_value(ctx, p, table.total(), opts.k(), src)?;
    let index = locate(ctx, table, opts.variant, &s)?;
    Ok(SampleStats { index, iterations })
}

/// Maps an accepted value `s ∈ [0, t)` on the `2^{g-p}` grid to its element.
///
/// Fails if the grid cell starting at `s` straddles a boundary, which means
/// the precision cannot resolve the table.
pub fn locate(
    ctx: &ArithContext,
    table: &WeightTable,
    variant: Variant,
    s: &ExactValue,
) -> Result<usize> {
    let p = ctx.precision();
    match variant {
        Variant::FullScan => {
            let step = ExactValue::pow2(table.g() - p as i64);
            let upper = ctx.add(s, &step);
            let mut index = 0usize;
            let mut straddled = false;
            for c in table.cumulative() {
                let below = ctx.cmp(c, s) != Ordering::Greater;
                let inside = ctx.cmp(c, &upper) == Ordering::Less;
                index += usize::from(below);
                straddled |= !below & inside;
            }
            if straddled {
                Err(Error::InsufficientPrecision)
            } else {
                Ok(index)
            }
        }
        Variant::Standard | Variant::Optimized => {
            let numerator = grid_numerator(s, table.g() - p as i64);
            let bits = (0..p).map(|j| numerator.bit(p - 1 - j));
            let mut window = Window::new(table, false);
            for (j, bit) in bits.enumerate() {
                if window.push(ctx, bit, j as u64 + 1) {
                    return Ok(window.lo);
                }
            }
            Err(Error::InsufficientPrecision)
        }
    }
}

fn grid_numerator(s: &ExactValue, grid_exponent: i64) -> BigUint {
    if s.is_zero() {
        return BigUint::default();
    }
    let shift = s.exponent() - grid_exponent;
    debug_assert!(shift >= 0, "value is not on the sampling grid");
    s.mantissa() << shift as u64
}

/// The contiguous range of elements whose regions meet the current window
/// `[prefix, prefix + 2^{g-j})`.
struct Window<'a> {
    table: &'a WeightTable,
    padded: bool,
    lo: usize,
    hi: usize,
    prefix: ExactValue,
}

impl<'a> Window<'a> {
    fn new(table: &'a WeightTable, padded: bool) -> Self {
        Window {
            table,
            padded,
            lo: 0,
            hi: table.len() + usize::from(padded),
            prefix: ExactValue::zero(),
        }
    }

    // Upper boundary of element i; the padding element ends at 2^g.
    fn boundary(&self, i: usize) -> ExactValue {
        if i <= self.table.len() {
            self.table.boundaries[i].clone()
        } else {
            ExactValue::pow2(self.table.g())
        }
    }

    /// Consumes bit `j` (1-based) and reports whether one element remains.
    fn push(&mut self, ctx: &ArithContext, bit: bool, j: u64) -> bool {
        let width = ExactValue::pow2(self.table.g() - j as i64);
        if bit {
            self.prefix = ctx.add(&self.prefix, &width);
        }
        let end = ctx.add(&self.prefix, &width);
        while self.hi - self.lo > 1
            && ctx.cmp(&self.boundary(self.lo + 1), &self.prefix) != Ordering::Greater
        {
            self.lo += 1;
        }
        while self.hi - self.lo > 1
            && ctx.cmp(&self.boundary(self.hi - 1), &end) != Ordering::Less
        {
            self.hi -= 1;
        }
        self.hi - self.lo == 1
    }

    fn is_padding(&self) -> bool {
        self.padded && self.lo == self.table.len()
    }
}

/// Lazy variant: the padding element of weight `2^g - t` makes the total a
/// power of two, so no value is ever out of range; a padding win restarts.
fn sample_lazy(
    ctx: &ArithContext,
    table: &WeightTable,
    opts: &SampleOptions,
    src: &mut impl BitSource,
) -> Result<SampleStats> {
    let p = ctx.precision();
    let limit = opts.retry_limit();
    for attempt in 1..=limit {
        let mut window = Window::new(table, true);
        let mut isolated = false;
        for j in 1..=p {
            if window.push(ctx, src.next_bit(), j) {
                isolated = true;
                break;
            }
        }
        if !isolated {
            return Err(Error::InsufficientPrecision);
        }
        if !window.is_padding() {
            return Ok(SampleStats {
                index: window.lo,
                iterations: attempt,
            });
        }
    }
    Err(Error::RetryLimit(limit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dy(m: i64, e: i64) -> ExactValue {
        ExactValue::dyadic(m, e)
    }

    fn table(ctx: &ArithContext, weights: &[(i64, i64)]) -> WeightTable {
        WeightTable::new(ctx, weights.iter().map(|&(m, e)| dy(m, e)).collect()).unwrap()
    }

    const VARIANTS: [Variant; 3] = [Variant::Standard, Variant::FullScan, Variant::Optimized];

    #[test]
    fn table_of_two_halves() {
        let ctx = ArithContext::new(8).unwrap();
        let t = table(&ctx, &[(1, -1), (1, -1)]);
        assert_eq!(t.cumulative(), &[dy(1, -1), dy(1, 0)]);
        assert_eq!(t.total(), &dy(1, 0));
        assert_eq!(t.g(), 0);
    }

    #[test]
    fn table_with_one_raised_weight() {
        let ctx = ArithContext::new(300).unwrap();
        let mut weights = vec![dy(1, -1); 256];
        weights[0] = dy(1, 0);
        let t = WeightTable::new(&ctx, weights).unwrap();
        assert_eq!(t.total(), &dy(257, -1));
        assert_eq!(t.g(), 8);
    }

    #[test]
    fn table_errors() {
        let ctx = ArithContext::new(8).unwrap();
        assert!(matches!(WeightTable::new(&ctx, vec![]), Err(Error::InvalidInput(_))));
        assert!(matches!(
            WeightTable::new(&ctx, vec![ExactValue::zero()]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            WeightTable::new(&ctx, vec![dy(1, 0), dy(1, -20)]),
            Err(Error::InsufficientPrecision)
        ));
    }

    #[test]
    fn first_bit_picks_between_halves() {
        let ctx = ArithContext::new(1).unwrap();
        let t = table(&ctx, &[(1, -1), (1, -1)]);
        for variant in VARIANTS {
            let opts = SampleOptions::new(1, variant).unwrap();
            let first = normalized_sample(&ctx, &t, &opts, &mut FixedBits::new(vec![false]));
            let second = normalized_sample(&ctx, &t, &opts, &mut FixedBits::new(vec![true]));
            assert_eq!((first.unwrap(), second.unwrap()), (0, 1), "{variant:?}");
        }
    }

    #[test]
    fn four_equal_weights_enumerated() {
        let ctx = ArithContext::new(2).unwrap();
        let t = table(&ctx, &[(1, 0); 4]);
        assert_eq!(t.g(), 2);
        for variant in VARIANTS {
            let opts = SampleOptions::new(1, variant).unwrap();
            let picks: Vec<usize> = (0..4)
                .map(|v| normalized_sample(&ctx, &t, &opts, &mut FixedBits::from_integer(v, 2)).unwrap())
                .collect();
            assert_eq!(picks, vec![0, 1, 2, 3], "{variant:?}");
        }
    }

    #[test]
    fn three_quarters_one_quarter() {
        let ctx = ArithContext::new(4).unwrap();
        let t = table(&ctx, &[(3, -2), (1, -2)]);
        let grid = 1u64 << ctx.precision();
        let mut first = 0;
        for v in 0..grid {
            let s = dy(v as i64, t.g() - 4);
            if s < *t.total() && locate(&ctx, &t, Variant::FullScan, &s).unwrap() == 0 {
                first += 1;
            }
        }
        assert_eq!(first * 4, grid * 3);
    }

    #[test]
    fn power_of_two_total_never_rejects() {
        let ctx = ArithContext::new(300).unwrap();
        let t = WeightTable::new(&ctx, vec![dy(1, -1); 256]).unwrap();
        assert_eq!(t.g(), 7);
        let mut src = seeded_bits(3);
        for _ in 0..200 {
            let (_, iterations) = get_random_value(&ctx, 300, t.total(), 1, &mut src).unwrap();
            assert_eq!(iterations, 1);
        }
    }

    #[test]
    fn zeros_give_zero() {
        let ctx = ArithContext::new(16).unwrap();
        let (s, iterations) =
            get_random_value(&ctx, 16, &dy(257, -1), 1, &mut FixedBits::new(vec![false; 16])).unwrap();
        assert!(s.is_zero());
        assert_eq!(iterations, 1);
    }

    #[test]
    fn minimum_iterations_are_enforced() {
        let ctx = ArithContext::new(8).unwrap();
        let mut src = CountingBits::new(seeded_bits(1));
        let (_, iterations) = get_random_value(&ctx, 8, &dy(1, 0), 5, &mut src).unwrap();
        assert_eq!(iterations, 5);
        assert_eq!(src.count(), 40);
    }

    #[test]
    fn first_in_range_value_is_kept() {
        // t = 3/4 at p = 2: draws 01, 10 are both in range, 01 must win
        let ctx = ArithContext::new(2).unwrap();
        let bits = vec![false, true, true, false];
        let (s, _) = get_random_value(&ctx, 2, &dy(3, -2), 2, &mut FixedBits::new(bits)).unwrap();
        assert_eq!(s, dy(1, -2));
    }

    #[test]
    fn broken_source_hits_retry_limit() {
        struct Ones;
        impl BitSource for Ones {
            fn next_bit(&mut self) -> bool {
                true
            }
        }
        let ctx = ArithContext::new(4).unwrap();
        let t = table(&ctx, &[(3, -2), (1, -2), (1, -2)]);
        for variant in VARIANTS {
            let opts = SampleOptions::new(2, variant).unwrap();
            assert_eq!(
                normalized_sample(&ctx, &t, &opts, &mut Ones),
                Err(Error::RetryLimit(66)),
                "{variant:?}"
            );
        }
    }

    #[test]
    fn straddled_cell_is_an_error() {
        // Table exact at 8 bits, sampled with a coarser grid.
        let fine = ArithContext::new(8).unwrap();
        let t = table(&fine, &[(1, -3), (7, -3)]);
        let coarse = ArithContext::new(2).unwrap();
        assert_eq!(locate(&coarse, &t, Variant::FullScan, &dy(0, 0)), Err(Error::InsufficientPrecision));
        assert_eq!(locate(&coarse, &t, Variant::Standard, &dy(0, 0)), Err(Error::InsufficientPrecision));
        assert_eq!(locate(&coarse, &t, Variant::FullScan, &dy(1, -1)), Ok(1));
        let opts = SampleOptions::new(1, Variant::Optimized).unwrap();
        assert_eq!(
            normalized_sample(&coarse, &t, &opts, &mut FixedBits::new(vec![false, false])),
            Err(Error::InsufficientPrecision)
        );
    }

    #[test]
    fn lazy_restarts_on_padding() {
        // t = 3/4, padding owns [3/4, 1)
        let ctx = ArithContext::new(2).unwrap();
        let t = table(&ctx, &[(1, -1), (1, -2)]);
        let opts = SampleOptions::new(1, Variant::Optimized).unwrap();
        let mut src = FixedBits::new(vec![true, true, true, false]);
        let stats = sample_with_stats(&ctx, &t, &opts, &mut src).unwrap();
        assert_eq!(stats, SampleStats { index: 1, iterations: 2 });
        assert_eq!(src.consumed(), 4);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("full-scan".parse::<Variant>().unwrap(), Variant::FullScan);
        assert_eq!("standard".parse::<Variant>().unwrap(), Variant::Standard);
        assert_eq!("optimized".parse::<Variant>().unwrap(), Variant::Optimized);
        assert!("fast".parse::<Variant>().is_err());
        assert!(SampleOptions::new(0, Variant::FullScan).is_err());
    }

    #[test]
    fn seeded_bits_are_deterministic() {
        let mut a = seeded_bits(9);
        let mut b = seeded_bits(9);
        assert_eq!(a.next_bits(64), b.next_bits(64));
        assert_eq!(a.next_bits(7), b.next_bits(7));
    }
}
