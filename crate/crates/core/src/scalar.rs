//! Scalar abstraction shared by every numerical routine in the crate.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `x^e` with the convention `x^0 = 1` for every `x`, including 0 and ∞.
    #[inline]
    fn pow0(self, e: Self) -> Self {
        if e == Self::zero() {
            Self::one()
        } else {
            self.powf(e)
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Surface area of the unit sphere `S^{n-1}` in `R^n`.
///
/// `S^0 = {-1, 1}` has counting measure 2.
pub fn sphere_area<T: Real>(n: usize) -> T {
    assert!(n >= 1, "sphere dimension must be at least 1");
    // area(n + 2) = area(n) * 2π / n
    let two_pi = T::PI() + T::PI();
    let (mut area, mut k) = if n % 2 == 1 {
        (T::lit(2.0), 1usize)
    } else {
        (two_pi, 2usize)
    };
    while k < n {
        area = area * two_pi / T::from_usize(k).unwrap();
        k += 2;
    }
    area
}

/// Volume of the unit ball in `R^n` (`n = 0` gives 1).
pub fn ball_volume<T: Real>(n: usize) -> T {
    if n == 0 {
        return T::one();
    }
    sphere_area::<T>(n) / T::from_usize(n).unwrap()
}

/// `ln |e^x - 1|` without overflow or cancellation, for `x != 0`.
#[inline]
pub fn ln_abs_expm1<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-(-x).exp_m1()).ln()
    } else {
        (-x.exp_m1()).ln()
    }
}

/// Euclidean norm.
#[inline]
pub fn norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &c| acc + c * c).sqrt()
}

/// Euclidean distance between two points of equal dimension.
#[inline]
pub fn distance<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

/// SplitMix64 finalizer, used to derive independent 64-bit sub-seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
