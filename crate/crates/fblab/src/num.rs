//! Scalar abstraction and deterministic numeric helpers.
//!
//! Every kernel in this crate is generic over [`Scalar`], so the whole
//! laboratory can be instantiated at `f32` or `f64`. The concrete aliases
//! exported from the crate root use `f64`, which is also the on-disk
//! checkpoint precision.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the numerical kernels: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + core::fmt::Debug
    + core::fmt::Display
    + core::fmt::LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal or intermediate into the working scalar type.
#[inline]
pub fn cast<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 -> scalar conversion")
}

/// Converts the working scalar into `f64` (for reporting and I/O).
#[inline]
pub fn to_f64<S: Scalar>(x: S) -> f64 {
    x.to_f64().expect("scalar -> f64 conversion")
}

/// Volume of the unit ball in dimension `n`.
pub fn unit_ball_volume<S: Scalar>(n: usize) -> S {
    match n {
        1 => cast(2.0),
        2 => S::PI(),
        3 => cast::<S>(4.0 / 3.0) * S::PI(),
        _ => unreachable!("dimension restricted to n <= 3"),
    }
}

/// Neumaier-compensated accumulator.
///
/// All quadrature loops accumulate in a fixed (lexicographic) order through
/// one of these, so sums are bit-reproducible across runs and thread counts.
#[derive(Clone, Copy, Debug)]
pub struct CompensatedSum<S> {
    sum: S,
    compensation: S,
}

impl<S: Scalar> CompensatedSum<S> {
    pub fn new() -> Self {
        Self {
            sum: S::zero(),
            compensation: S::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, value: S) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation = self.compensation + ((self.sum - t) + value);
        } else {
            self.compensation = self.compensation + ((value - t) + self.sum);
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> S {
        self.sum + self.compensation
    }
}

impl<S: Scalar> Default for CompensatedSum<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// SplitMix64: a tiny deterministic PRNG.
///
/// Used instead of an external generator so that sampled test ensembles and
/// certificate probes are reproducible bit-for-bit across platforms and
/// dependency upgrades.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform sample in `[0, 1)`.
    #[inline]
    pub fn next_unit<S: Scalar>(&mut self) -> S {
        let bits = self.next_u64() >> 11; // 53 significant bits
        cast::<S>(bits as f64 / (1u64 << 53) as f64)
    }

    /// Uniform sample in `[lo, hi)`.
    #[inline]
    pub fn next_in<S: Scalar>(&mut self, lo: S, hi: S) -> S {
        lo + (hi - lo) * self.next_unit::<S>()
    }
}

/// Halton low-discrepancy sequence (bases 2, 3, 5), used for systematic
/// probe placement.
#[derive(Clone, Debug)]
pub struct Halton {
    index: u64,
}

impl Halton {
    const BASES: [u64; 3] = [2, 3, 5];

    pub fn new(start_index: u64) -> Self {
        // Index 0 maps every coordinate to 0; skip it.
        Self {
            index: start_index.max(1),
        }
    }

    fn radical_inverse(mut i: u64, base: u64) -> f64 {
        let mut inv = 0.0;
        let mut f = 1.0 / base as f64;
        while i > 0 {
            inv += (i % base) as f64 * f;
            i /= base;
            f /= base as f64;
        }
        inv
    }

    /// Next point in the unit cube `[0,1)^dim`, `dim <= 3`.
    pub fn next_point<S: Scalar>(&mut self, dim: usize) -> [S; 3] {
        let mut p = [S::zero(); 3];
        for (d, slot) in p.iter_mut().enumerate().take(dim) {
            *slot = cast(Self::radical_inverse(self.index, Self::BASES[d]));
        }
        self.index += 1;
        p
    }
}
