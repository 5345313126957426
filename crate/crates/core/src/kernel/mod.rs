//! Boundary terms of triple form `A(δ(x), δ(y), |x - y|)`, the jump kernel and
//! the critical killing function on the half-space.

pub mod audit;

use crate::error::{Error, Result};
use crate::scalar::{distance, Real};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Which boundary-term family the kernel evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Product of clipped ratios.
    Tilde,
    /// Clipped product of ratios.
    Hat,
    /// Smoothed `r / (1 + r)` form.
    Bar,
    /// `B ≡ 1`.
    Const,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Tilde, Variant::Hat, Variant::Bar, Variant::Const];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Tilde => "tilde",
            Variant::Hat => "hat",
            Variant::Bar => "bar",
            Variant::Const => "const",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tilde" => Ok(Variant::Tilde),
            "hat" => Ok(Variant::Hat),
            "bar" => Ok(Variant::Bar),
            "const" | "one" => Ok(Variant::Const),
            other => Err(Error::InvalidParams(format!("unknown variant `{other}`"))),
        }
    }
}

/// Full parameterisation of the jump kernel and the killing function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams<T> {
    pub d: usize,
    pub alpha: T,
    /// `[β1, β2, β3, β4]`.
    pub beta: [T; 4],
    pub variant: Variant,
    pub p: T,
}

impl<T: Real> KernelParams<T> {
    /// Validates and builds a parameter set.
    ///
    /// `p` may sit on the lower edge `(α - 1)_+`, where the killing constant
    /// vanishes; it must stay strictly below `α + β1`.
    pub fn new(d: usize, alpha: T, beta: [T; 4], variant: Variant, p: T) -> Result<Self> {
        let params = Self {
            d,
            alpha,
            beta,
            variant,
            p,
        };
        params.validate()?;
        Ok(params)
    }

    /// `B ≡ 1` in dimension `d`.
    pub fn constant(d: usize, alpha: T, p: T) -> Result<Self> {
        Self::new(d, alpha, [T::zero(); 4], Variant::Const, p)
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        if self.d == 0 {
            return Err(Error::InvalidParams("dimension must be at least 1".into()));
        }
        if !(self.alpha > zero && self.alpha < T::lit(2.0)) {
            return Err(Error::InvalidParams(format!(
                "alpha = {} must lie in (0, 2)",
                self.alpha
            )));
        }
        if self.beta.iter().any(|b| !(b.is_finite() && *b >= zero)) {
            return Err(Error::InvalidParams(
                "beta exponents must be finite and non-negative".into(),
            ));
        }
        let [b1, b2, b3, b4] = self.beta;
        if b3 > zero && b1 == zero {
            return Err(Error::InvalidParams("beta3 > 0 requires beta1 > 0".into()));
        }
        if b4 > zero && b2 == zero {
            return Err(Error::InvalidParams("beta4 > 0 requires beta2 > 0".into()));
        }
        if self.variant == Variant::Const && self.beta.iter().any(|b| *b != zero) {
            return Err(Error::InvalidParams(
                "the const variant takes all beta exponents equal to zero".into(),
            ));
        }
        if !self.p.is_finite() || (self.p < self.p_lower() && !self.near_lower_edge(self.p)) || self.p >= self.p_upper() {
            return Err(Error::InvalidParams(format!(
                "p = {} must lie in [{}, {})",
                self.p,
                self.p_lower(),
                self.p_upper()
            )));
        }
        Ok(())
    }

    /// `(α - 1)_+`.
    pub fn p_lower(&self) -> T {
        (self.alpha - T::one()).max(T::zero())
    }

    /// `α + β1`.
    pub fn p_upper(&self) -> T {
        self.alpha + self.beta[0]
    }

    /// True when `p` sits on the lower edge, where the killing constant is
    /// zero. A few ulps of slack absorb the rounding in `α - 1`.
    pub fn p_at_lower_edge(&self) -> bool {
        self.near_lower_edge(self.p)
    }

    fn near_lower_edge(&self, q: T) -> bool {
        (q - self.p_lower()).abs() <= T::lit(4.0) * T::epsilon() * self.alpha.max(T::one())
    }

    /// Checks that `q` lies in the open interval `((α - 1)_+, α + β1)`.
    pub fn check_open_interval(&self, q: T) -> Result<()> {
        if q > self.p_lower() && !self.near_lower_edge(q) && q < self.p_upper() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "exponent {} lies outside the open interval ({}, {})",
                q,
                self.p_lower(),
                self.p_upper()
            )))
        }
    }

    pub fn with_p(self, p: T) -> Result<Self> {
        Self { p, ..self }.validate_into()
    }

    pub fn with_variant(self, variant: Variant) -> Result<Self> {
        Self { variant, ..self }.validate_into()
    }

    fn validate_into(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// `β1 ∨ β2`.
    pub fn beta_max12(&self) -> T {
        self.beta[0].max(self.beta[1])
    }

    pub fn beta_sum(&self) -> T {
        self.beta.iter().copied().sum()
    }

    /// Whether any log factor is active.
    pub fn has_logs(&self) -> bool {
        self.beta[2] > T::zero() || self.beta[3] > T::zero()
    }

    /// Converts the scalar type.
    pub fn cast<U: Real>(&self) -> KernelParams<U> {
        KernelParams {
            d: self.d,
            alpha: U::lit(self.alpha.as_f64()),
            beta: self.beta.map(|b| U::lit(b.as_f64())),
            variant: self.variant,
            p: U::lit(self.p.as_f64()),
        }
    }
}

/// A point of the open upper half-space `{x_d > 0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpacePoint<T> {
    coords: Vec<T>,
}

impl<T: Real> HalfSpacePoint<T> {
    pub fn new(coords: Vec<T>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Domain("a point needs at least one coordinate".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("point coordinates must be finite".into()));
        }
        let last = *coords.last().unwrap();
        if !(last > T::zero()) {
            return Err(Error::Domain(format!(
                "last coordinate {last} is not strictly positive"
            )));
        }
        Ok(Self { coords })
    }

    /// The point `(0̃, height)` of `R^d_+`.
    pub fn on_axis(d: usize, height: T) -> Result<Self> {
        let mut coords = vec![T::zero(); d.max(1)];
        coords[d.max(1) - 1] = height;
        Self::new(coords)
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Distance to the boundary.
    pub fn height(&self) -> T {
        *self.coords.last().unwrap()
    }

    pub fn into_coords(self) -> Vec<T> {
        self.coords
    }
}

/// `sup_{0 < a ≤ 1} a^β (ln(1 + 1/a))^γ`; finite whenever `β > 0` or `γ = 0`.
pub fn log_power_sup<T: Real>(beta: T, gamma: T) -> T {
    let ln2 = T::one().ln_1p();
    if gamma == T::zero() {
        return T::one();
    }
    if beta == T::zero() {
        return T::infinity();
    }
    // With a = e^{-v}: maximise -βv + γ ln ln(1 + e^v) on v ≥ 0. The derivative
    // -β + γ σ(v) / ln(1 + e^v) is strictly decreasing in v.
    let slope = |v: T| {
        let sig = T::one() / (T::one() + (-v).exp());
        -beta + gamma * sig / softplus(v)
    };
    let objective = |v: T| (-beta * v + gamma * softplus(v).ln()).exp();
    if slope(T::zero()) <= T::zero() {
        return ln2.powf(gamma);
    }
    let mut lo = T::zero();
    let mut hi = T::one();
    while slope(hi) > T::zero() {
        lo = hi;
        hi = hi + hi;
    }
    for _ in 0..200 {
        let mid = T::lit(0.5) * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    objective(lo).max(objective(hi))
}

/// `ln(1 + e^v)` without overflow.
#[inline]
fn softplus<T: Real>(v: T) -> T {
    if v > T::zero() {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// Safety factor applied to the sup bound when it is used as a thinning majorant.
pub const MAJORANT_INFLATION: f64 = 1.05;

/// Evaluator of the boundary term `A(s, t, u)` for one parameter set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripleKernel<T> {
    params: KernelParams<T>,
    diag: T,
    sup: T,
}

impl<T: Real> TripleKernel<T> {
    pub fn new(params: KernelParams<T>) -> Result<Self> {
        params.validate()?;
        let ln2 = T::one().ln_1p();
        let [b1, b2, b3, b4] = params.beta;
        let diag = match params.variant {
            Variant::Const => T::one(),
            // r ≡ 1 without the power factors, so the bar form is the constant 1/2
            Variant::Bar if b1 + b2 == T::zero() => T::lit(0.5),
            _ => ln2.pow0(b3) * ln2.pow0(b4),
        };
        let tilde_sup = log_power_sup(b1, b3) * log_power_sup(b2, b4);
        let sup = match params.variant {
            Variant::Const => T::one(),
            Variant::Tilde => tilde_sup,
            Variant::Hat | Variant::Bar => {
                if params.has_logs() {
                    T::lit(2.0).powf(params.beta_max12()) * tilde_sup
                } else {
                    T::one()
                }
            }
        };
        Ok(Self { params, diag, sup })
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    pub fn variant(&self) -> Variant {
        self.params.variant
    }

    /// Value on the diagonal `x = y`.
    pub fn diagonal(&self) -> T {
        self.diag
    }

    /// Proven upper bound on `A` over all admissible arguments.
    pub fn sup_bound(&self) -> T {
        self.sup
    }

    /// Sup bound inflated by [`MAJORANT_INFLATION`].
    pub fn majorant(&self) -> T {
        self.sup * T::lit(MAJORANT_INFLATION)
    }

    /// The two log factors `(L, K)` at `(s, t, u)`, `u > 0`.
    #[inline]
    pub fn log_factors(s: T, t: T, u: T) -> (T, T) {
        let m = s.min(t);
        let big = s.max(t).min(u);
        let l = (big / m.min(u)).ln_1p();
        let k = (u / big).ln_1p();
        (l, k)
    }

    /// `A(s, t, u)`: `s = δ(x)`, `t = δ(y)`, `u = |x - y|`.
    ///
    /// Symmetric in `(s, t)` bit for bit: only `min` and `max` of the pair enter.
    #[inline]
    pub fn eval(&self, s: T, t: T, u: T) -> T {
        if self.params.variant == Variant::Const {
            return T::one();
        }
        if u <= T::zero() {
            return self.diag;
        }
        let [b1, b2, b3, b4] = self.params.beta;
        let m = s.min(t);
        let big = s.max(t);
        let logs = if b3 == T::zero() && b4 == T::zero() {
            T::one()
        } else {
            let (l, k) = Self::log_factors(s, t, u);
            l.pow0(b3) * k.pow0(b4)
        };
        let ra = m / u;
        let rb = big / u;
        match self.params.variant {
            Variant::Tilde => ra.min(T::one()).pow0(b1) * rb.min(T::one()).pow0(b2) * logs,
            Variant::Hat => {
                let r = ra.pow0(b1) * rb.pow0(b2);
                r.min(T::one()) * logs
            }
            Variant::Bar => {
                let r = ra.pow0(b1) * rb.pow0(b2);
                let frac = if r >= T::one() {
                    T::one() / (T::one() + r.recip())
                } else {
                    r / (T::one() + r)
                };
                frac * logs
            }
            Variant::Const => T::one(),
        }
    }

    /// `ln A(s, t, u)`, evaluated without forming `A` so that factors below the
    /// underflow threshold stay representable.
    pub fn ln_eval(&self, s: T, t: T, u: T) -> T {
        if self.params.variant == Variant::Const {
            return T::zero();
        }
        if u <= T::zero() {
            return self.diag.ln();
        }
        let [b1, b2, b3, b4] = self.params.beta;
        let m = s.min(t);
        let big = s.max(t);
        let mut ln_logs = T::zero();
        if b3 != T::zero() || b4 != T::zero() {
            let (l, k) = Self::log_factors(s, t, u);
            if b3 != T::zero() {
                ln_logs = ln_logs + b3 * l.ln();
            }
            if b4 != T::zero() {
                ln_logs = ln_logs + b4 * k.ln();
            }
        }
        let ln_ra = m.ln() - u.ln();
        let ln_rb = big.ln() - u.ln();
        let term = |b: T, v: T| if b == T::zero() { T::zero() } else { b * v };
        match self.params.variant {
            Variant::Tilde => {
                term(b1, ln_ra.min(T::zero())) + term(b2, ln_rb.min(T::zero())) + ln_logs
            }
            Variant::Hat => (term(b1, ln_ra) + term(b2, ln_rb)).min(T::zero()) + ln_logs,
            Variant::Bar => {
                let ln_r = term(b1, ln_ra) + term(b2, ln_rb);
                // ln(r / (1 + r)) = -ln(1 + e^{-ln r})
                -softplus(-ln_r) + ln_logs
            }
            Variant::Const => T::zero(),
        }
    }

    fn check_pair(&self, x: &HalfSpacePoint<T>, y: &HalfSpacePoint<T>) -> Result<()> {
        let d = self.params.d;
        if x.dim() != d || y.dim() != d {
            return Err(Error::Domain(format!(
                "points of dimension {} and {} do not match d = {d}",
                x.dim(),
                y.dim()
            )));
        }
        Ok(())
    }

    /// Boundary term `B(x, y)`; the diagonal value at `x = y`.
    pub fn b_eval(&self, x: &HalfSpacePoint<T>, y: &HalfSpacePoint<T>) -> Result<T> {
        self.check_pair(x, y)?;
        let u = distance(x.coords(), y.coords());
        Ok(self.eval(x.height(), y.height(), u))
    }

    /// `J(x, y) = B(x, y) |x - y|^{-d-α}`, singular on the diagonal.
    pub fn jump_kernel(&self, x: &HalfSpacePoint<T>, y: &HalfSpacePoint<T>) -> Result<T> {
        self.check_pair(x, y)?;
        let u = distance(x.coords(), y.coords());
        if u == T::zero() {
            return Err(Error::Domain("jump kernel is singular at x = y".into()));
        }
        Ok(self.eval(x.height(), y.height(), u) * self.stable_density(u))
    }

    /// `u^{-d-α}`.
    #[inline]
    pub fn stable_density(&self, u: T) -> T {
        u.powf(-(T::from_usize(self.params.d).unwrap() + self.params.alpha))
    }
}

/// Critical killing `κ(x) = C x_d^{-α}` for a precomputed constant `C`.
pub fn kappa<T: Real>(params: &KernelParams<T>, c: T, x: &HalfSpacePoint<T>) -> Result<T> {
    if !(c.is_finite() && c >= T::zero()) {
        return Err(Error::Domain(format!(
            "killing constant {c} must be finite and non-negative"
        )));
    }
    if x.dim() != params.d {
        return Err(Error::Domain(format!(
            "point of dimension {} does not match d = {}",
            x.dim(),
            params.d
        )));
    }
    Ok(kappa_at_height(params.alpha, c, x.height()))
}

/// `C h^{-α}`.
#[inline]
pub fn kappa_at_height<T: Real>(alpha: T, c: T, height: T) -> T {
    if c == T::zero() {
        T::zero()
    } else {
        c * height.powf(-alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(variant: Variant, beta: [f64; 4]) -> TripleKernel<f64> {
        let params = KernelParams::new(2, 1.0, beta, variant, 0.5).unwrap();
        TripleKernel::new(params).unwrap()
    }

    fn pt(c: &[f64]) -> HalfSpacePoint<f64> {
        HalfSpacePoint::new(c.to_vec()).unwrap()
    }

    #[test]
    fn trivial_exponents_give_one() {
        let k = kernel(Variant::Tilde, [0.0; 4]);
        assert_eq!(k.eval(0.3, 7.0, 2.0), 1.0);
        assert_eq!(k.b_eval(&pt(&[0.0, 1.0]), &pt(&[5.0, 1e-4])).unwrap(), 1.0);
    }

    #[test]
    fn hand_substituted_values() {
        let k = kernel(Variant::Tilde, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(k.eval(1.0, 2.0, 4.0), 0.25);
        let tilde = kernel(Variant::Tilde, [1.0, 1.0, 0.0, 0.0]);
        let hat = kernel(Variant::Hat, [1.0, 1.0, 0.0, 0.0]);
        let a = tilde.eval(1.0, 3.0, 2.0);
        let b = hat.eval(1.0, 3.0, 2.0);
        assert!((a - 0.5).abs() < 1e-15);
        assert!((b - 0.75).abs() < 1e-15);
        assert!(b >= a && a >= 0.5 * b);
    }

    #[test]
    fn diagonal_values() {
        let k = kernel(Variant::Tilde, [1.0, 0.0, 1.0, 0.0]);
        let x = pt(&[0.2, 0.7]);
        assert!((k.b_eval(&x, &x).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let bar = kernel(Variant::Bar, [1.0, 1.0, 1.0, 1.0]);
        assert!((bar.diagonal() - std::f64::consts::LN_2.powi(2)).abs() < 1e-15);
        assert!(
            (bar.eval(1.0, 1.0, 1e-9) - bar.diagonal()).abs() < 1e-8,
            "bar tends to its diagonal value"
        );
    }

    #[test]
    fn jump_kernel_examples() {
        let params = KernelParams::constant(1, 1.0, 0.5).unwrap();
        let k = TripleKernel::new(params).unwrap();
        assert_eq!(k.jump_kernel(&pt(&[1.0]), &pt(&[2.0])).unwrap(), 1.0);
        assert!(k.jump_kernel(&pt(&[1.0]), &pt(&[1.0])).is_err());
        let params = KernelParams::new(1, 1.0, [1.0, 0.0, 0.0, 0.0], Variant::Tilde, 0.5).unwrap();
        let k = TripleKernel::new(params).unwrap();
        assert_eq!(k.jump_kernel(&pt(&[1.0]), &pt(&[2.0])).unwrap(), 1.0);
    }

    #[test]
    fn kappa_examples() {
        let params = KernelParams::constant(1, 1.0, 0.5).unwrap();
        assert!((kappa(&params, 1.0, &pt(&[2.0])).unwrap() - 0.5).abs() < 1e-15);
        let params = KernelParams::constant(1, 1.5, 0.5).unwrap();
        assert_eq!(kappa(&params, 0.0, &pt(&[0.01])).unwrap(), 0.0);
        let a = kappa(&params, 2.0, &pt(&[0.3])).unwrap();
        let b = kappa(&params, 2.0, &pt(&[0.6])).unwrap();
        assert!((b / a - 2f64.powf(-1.5)).abs() < 1e-14);
        assert!(kappa(&params, -1.0, &pt(&[1.0])).is_err());
    }

    #[test]
    fn ln_eval_matches_eval() {
        for v in Variant::ALL {
            let beta = if v == Variant::Const {
                [0.0; 4]
            } else {
                [1.3, 0.4, 0.7, 1.1]
            };
            let k = kernel(v, beta);
            for &(s, t, u) in &[(1.0, 2.0, 3.0), (1e-4, 0.5, 0.6), (2.0, 2.5, 0.1), (0.3, 9.0, 40.0)] {
                let a = k.eval(s, t, u);
                let b = k.ln_eval(s, t, u).exp();
                assert!((a - b).abs() <= 1e-13 * a.max(1e-300), "{v}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn sup_bound_dominates_grid() {
        for v in [Variant::Tilde, Variant::Hat, Variant::Bar] {
            let k = kernel(v, [0.8, 0.5, 1.5, 0.9]);
            let sup = k.sup_bound();
            let mut worst = 0.0f64;
            for i in 0..60 {
                for j in 0..60 {
                    let s = 10f64.powf(-6.0 + 0.1 * i as f64);
                    let t = 10f64.powf(-6.0 + 0.1 * j as f64);
                    for l in 0..40 {
                        let u = (s - t).abs() + 10f64.powf(-7.0 + 0.2 * l as f64);
                        worst = worst.max(k.eval(s, t, u));
                    }
                }
            }
            assert!(worst <= sup, "{v}: {worst} > {sup}");
        }
    }

    #[test]
    fn log_power_sup_known_cases() {
        assert_eq!(log_power_sup(1.0f64, 0.0), 1.0);
        // slope at a = 1 is negative, so the sup sits at a = 1
        assert!((log_power_sup(2.0f64, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        let s: f64 = log_power_sup(0.2, 1.0);
        let brute = (1..200_000)
            .map(|i| {
                let a = i as f64 / 200_000.0;
                a.powf(0.2) * (1.0 + 1.0 / a).ln()
            })
            .fold(0.0f64, f64::max);
        assert!(s >= brute && s - brute < 1e-6);
    }

    #[test]
    fn params_validation() {
        assert!(KernelParams::new(0, 1.0, [0.0; 4], Variant::Tilde, 0.5).is_err());
        assert!(KernelParams::new(1, 2.0, [0.0; 4], Variant::Tilde, 0.5).is_err());
        assert!(KernelParams::new(1, 1.0, [0.0, 0.0, 1.0, 0.0], Variant::Tilde, 0.5).is_err());
        assert!(KernelParams::new(1, 1.0, [1.0, 0.0, 0.0, 1.0], Variant::Tilde, 0.5).is_err());
        assert!(KernelParams::new(1, 1.0, [1.0, 0.0, 0.0, 0.0], Variant::Const, 0.5).is_err());
        assert!(KernelParams::new(1, 1.0, [0.0; 4], Variant::Tilde, 1.0).is_err());
        assert!(KernelParams::new(1, 1.5, [0.0; 4], Variant::Tilde, 0.5).is_ok());
        assert!(KernelParams::new(1, 1.5, [0.0; 4], Variant::Tilde, 0.4).is_err());
        let p = KernelParams::new(1, 1.5, [0.0; 4], Variant::Tilde, 0.5).unwrap();
        assert!(p.check_open_interval(0.5).is_err());
        assert!(p.check_open_interval(0.6).is_ok());
    }

    #[test]
    fn points_reject_boundary() {
        assert!(HalfSpacePoint::new(vec![1.0, 0.0]).is_err());
        assert!(HalfSpacePoint::new(vec![1.0, f64::NAN, 1.0]).is_err());
        assert!(HalfSpacePoint::<f64>::new(vec![]).is_err());
        let k = kernel(Variant::Tilde, [1.0; 4]);
        assert!(k.b_eval(&pt(&[1.0]), &pt(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn single_precision_kernel() {
        let params = KernelParams::<f32>::new(2, 1.0, [1.0, 1.0, 0.0, 0.0], Variant::Hat, 1.0).unwrap();
        let k = TripleKernel::new(params).unwrap();
        assert!((k.eval(1.0, 3.0, 2.0) - 0.75).abs() < 1e-6);
    }
}
