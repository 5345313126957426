//! Adaptive 21-point Gauss–Kronrod quadrature.
//!
//! Intervals are kept in a max-heap keyed on their local error estimate and the
//! worst one is bisected until the global estimate meets
//! `max(abs_tol, rel_tol * |value|)`. Local errors use the QUADPACK rescaling of
//! `|K21 - G10|`.
//!
//! Integrands are fallible (`FnMut(T) -> Result<T>`) so that nested integrals can
//! propagate inner failures through the outer rule.

use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

// Kronrod abscissae on [-1, 1] (non-negative half, descending); odd indices are
// the 10-point Gauss nodes.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_980_223_048,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Tolerances and limits for the adaptive quadrature engine.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec<T> {
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_subdivisions: usize,
    /// Break point separating the `s -> 0` and `s -> 1` regimes of the
    /// killing-constant integral.
    pub endpoint_split: T,
}

impl<T: Real> Default for QuadratureSpec<T> {
    fn default() -> Self {
        Self {
            abs_tol: T::lit(1e-8),
            rel_tol: T::lit(1e-6),
            max_subdivisions: 2000,
            endpoint_split: T::lit(0.5),
        }
    }
}

impl<T: Real> QuadratureSpec<T> {
    pub fn new(abs_tol: T, rel_tol: T, max_subdivisions: usize) -> Result<Self> {
        let spec = Self {
            abs_tol,
            rel_tol,
            max_subdivisions,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > T::zero()) || !(self.rel_tol > T::zero()) {
            return Err(Error::InvalidParams(
                "quadrature tolerances must be positive".into(),
            ));
        }
        if self.max_subdivisions < 8 {
            return Err(Error::InvalidParams(
                "max_subdivisions must be at least 8".into(),
            ));
        }
        if !(self.endpoint_split > T::zero() && self.endpoint_split < T::one()) {
            return Err(Error::InvalidParams(
                "endpoint_split must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Spec for an integral nested inside another one: tolerances two orders
    /// of magnitude tighter.
    pub fn nested(&self) -> Self {
        let hundredth = T::lit(1e-2);
        Self {
            abs_tol: self.abs_tol * hundredth,
            rel_tol: (self.rel_tol * hundredth).max(T::lit(64.0) * T::epsilon()),
            ..*self
        }
    }

    pub fn with_abs_tol(self, abs_tol: T) -> Self {
        Self { abs_tol, ..self }
    }
}

/// Value, error estimate and evaluation count of a quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integral<T> {
    pub value: T,
    pub error: T,
    pub n_evals: usize,
}

impl<T: Real> Integral<T> {
    pub fn zero() -> Self {
        Self {
            value: T::zero(),
            error: T::zero(),
            n_evals: 0,
        }
    }

    pub fn scale(self, factor: T) -> Self {
        Self {
            value: self.value * factor,
            error: self.error * factor.abs(),
            n_evals: self.n_evals,
        }
    }
}

impl<T: Real> std::ops::Add for Integral<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            value: self.value + rhs.value,
            error: self.error + rhs.error,
            n_evals: self.n_evals + rhs.n_evals,
        }
    }
}

#[derive(Clone, Copy)]
struct Segment<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

impl<T: Real> PartialEq for Segment<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<T: Real> Eq for Segment<T> {}
impl<T: Real> PartialOrd for Segment<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real> Ord for Segment<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .partial_cmp(&other.error)
            .unwrap_or(Ordering::Equal)
    }
}

fn check_finite<T: Real>(v: T, at: T) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { at: at.as_f64() })
    }
}

fn rescale_error<T: Real>(err: T, res_abs: T, res_asc: T) -> T {
    let mut scaled = err.abs();
    if res_asc != T::zero() && scaled != T::zero() {
        let scale = (T::lit(200.0) * scaled / res_asc).powf(T::lit(1.5));
        scaled = if scale < T::one() {
            res_asc * scale
        } else {
            res_asc
        };
    }
    let tiny = T::min_positive_value() / (T::lit(50.0) * T::epsilon());
    if res_abs > tiny {
        scaled = scaled.max(T::lit(50.0) * T::epsilon() * res_abs);
    }
    scaled
}

/// Applies the 21-point Kronrod rule on `[a, b]`.
fn kronrod21<T, F>(f: &mut F, a: T, b: T) -> Result<(T, T)>
where
    T: Real,
    F: FnMut(T) -> Result<T>,
{
    let half = T::lit(0.5);
    let center = half * (a + b);
    let half_len = half * (b - a);
    let f_center = check_finite(f(center)?, center)?;

    let mut res_k = f_center * T::lit(WGK[10]);
    let mut res_g = T::zero();
    let mut res_abs = res_k.abs();
    let mut fv1 = [T::zero(); 10];
    let mut fv2 = [T::zero(); 10];
    for j in 0..10 {
        let x = half_len * T::lit(XGK[j]);
        let lo = center - x;
        let hi = center + x;
        let f1 = check_finite(f(lo)?, lo)?;
        let f2 = check_finite(f(hi)?, hi)?;
        fv1[j] = f1;
        fv2[j] = f2;
        let w = T::lit(WGK[j]);
        res_k = res_k + w * (f1 + f2);
        res_abs = res_abs + w * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g = res_g + T::lit(WG[j / 2]) * (f1 + f2);
        }
    }
    let mean = res_k * half;
    let mut res_asc = T::lit(WGK[10]) * (f_center - mean).abs();
    for j in 0..10 {
        res_asc = res_asc + T::lit(WGK[j]) * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let abs_half = half_len.abs();
    let err = rescale_error(
        (res_k - res_g) * half_len,
        res_abs * abs_half,
        res_asc * abs_half,
    );
    Ok((res_k * half_len, err))
}

const EVALS_PER_RULE: usize = 21;

/// Integrates a fallible integrand over the finite interval `[a, b]`.
pub fn integrate<T, F>(mut f: F, a: T, b: T, spec: &QuadratureSpec<T>) -> Result<Integral<T>>
where
    T: Real,
    F: FnMut(T) -> Result<T>,
{
    if a == b {
        return Ok(Integral::zero());
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain("integration limits must be finite".into()));
    }
    let (value, error) = kronrod21(&mut f, a, b)?;
    let mut n_evals = EVALS_PER_RULE;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    // Segments too narrow to bisect further.
    let mut frozen: Vec<Segment<T>> = Vec::new();
    let mut total_value = value;
    let mut total_error = error;
    let mut n_segments = 1usize;

    loop {
        let tol = spec.abs_tol.max(spec.rel_tol * total_value.abs());
        if total_error <= tol {
            break;
        }
        if n_segments >= spec.max_subdivisions {
            return Err(Error::NonConvergence {
                value: total_value.as_f64(),
                error: total_error.as_f64(),
                subdivisions: n_segments,
            });
        }
        let Some(worst) = heap.pop() else {
            return Err(Error::NonConvergence {
                value: total_value.as_f64(),
                error: total_error.as_f64(),
                subdivisions: n_segments,
            });
        };
        let mid = T::lit(0.5) * (worst.a + worst.b);
        if mid <= worst.a.min(worst.b) || mid >= worst.a.max(worst.b) {
            frozen.push(worst);
            continue;
        }
        let (v1, e1) = kronrod21(&mut f, worst.a, mid)?;
        let (v2, e2) = kronrod21(&mut f, mid, worst.b)?;
        n_evals += 2 * EVALS_PER_RULE;
        n_segments += 1;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
        total_value = total_value - worst.value + v1 + v2;
        total_error = total_error - worst.error + e1 + e2;
        if n_segments.is_multiple_of(64) {
            // running sums drift; recompute exactly now and then
            total_value = heap.iter().chain(&frozen).map(|s| s.value).sum();
            total_error = heap.iter().chain(&frozen).map(|s| s.error).sum();
        }
    }
    let value = heap.iter().chain(&frozen).map(|s| s.value).sum();
    let error = heap.iter().chain(&frozen).map(|s| s.error).sum();
    Ok(Integral {
        value,
        error,
        n_evals,
    })
}

/// Infallible-integrand convenience wrapper around [`integrate`].
pub fn integrate_fn<T, F>(mut f: F, a: T, b: T, spec: &QuadratureSpec<T>) -> Result<Integral<T>>
where
    T: Real,
    F: FnMut(T) -> T,
{
    integrate(|x| Ok(f(x)), a, b, spec)
}

/// Integrates over `[a, b]` split at the given interior break points (kinks of
/// the integrand). Break points outside `(a, b)` are ignored.
pub fn integrate_pieces<T, F>(
    mut f: F,
    a: T,
    b: T,
    breaks: &[T],
    spec: &QuadratureSpec<T>,
) -> Result<Integral<T>>
where
    T: Real,
    F: FnMut(T) -> Result<T>,
{
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut nodes: Vec<T> = breaks
        .iter()
        .copied()
        .filter(|&c| c > lo && c < hi)
        .collect();
    nodes.sort_by(|x, y| x.partial_cmp(y).unwrap());
    nodes.dedup();
    let mut total = Integral::zero();
    let mut left = lo;
    for right in nodes.into_iter().chain(std::iter::once(hi)) {
        total = total + integrate(&mut f, left, right, spec)?;
        left = right;
    }
    Ok(if a <= b { total } else { total.scale(-T::one()) })
}

/// Integrates over `[a, ∞)` via `x = a + scale * t / (1 - t)`.
pub fn integrate_to_infinity<T, F>(
    mut f: F,
    a: T,
    scale: T,
    spec: &QuadratureSpec<T>,
) -> Result<Integral<T>>
where
    T: Real,
    F: FnMut(T) -> Result<T>,
{
    let one = T::one();
    integrate(
        |t| {
            let om = one - t;
            let x = a + scale * t / om;
            if !x.is_finite() {
                return Ok(T::zero());
            }
            Ok(f(x)? * scale / (om * om))
        },
        T::zero(),
        one,
        spec,
    )
}

/// Integrates over `[a, ∞)` (`a > 0`) for integrands decaying like
/// `x^{-1-decay}`, using `x = a * τ^{-1/decay}` which flattens that tail.
pub fn integrate_power_tail<T, F>(
    mut f: F,
    a: T,
    decay: T,
    spec: &QuadratureSpec<T>,
) -> Result<Integral<T>>
where
    T: Real,
    F: FnMut(T) -> Result<T>,
{
    if !(a > T::zero()) || !(decay > T::zero()) {
        return Err(Error::Domain(
            "power-tail map needs a positive start and decay".into(),
        ));
    }
    let k = T::one() / decay;
    integrate(
        |tau| {
            let x = a * tau.powf(-k);
            if !x.is_finite() {
                return Ok(T::zero());
            }
            // dx/dτ = (a k) τ^{-k-1} = k x / τ
            Ok(f(x)? * k * x / tau)
        },
        T::zero(),
        T::one(),
        spec,
    )
}
