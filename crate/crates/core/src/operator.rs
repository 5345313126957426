//! The principal-value operator `L_α f(x) = p.v. ∫ (f(y) - f(x)) J(x, y) dy` on the
//! half-space and its killed version `L f = L_α f - κ f`.
//!
//! The integral is split at the ball `B(x, x_d/2)`.
//!
//! * Inside the ball every `z` is paired with `-z`. Because the ball is symmetric
//!   about `x`, the truncated integrals over `{ε < |z| < x_d/2}` equal the
//!   truncated integrals of the paired integrand over a hemisphere of directions,
//!   so the principal value is the limit `ε → 0` of the paired integral. The
//!   paired integrand is
//!   `½ Δ₂f · (B₊ + B₋) + ½ (f₊ - f₋)(B₊ - B₋)`, `Δ₂f = f₊ + f₋ - 2f(x)`,
//!   which is `O(|z|²)` for smooth `f` plus `O(|z|^{1+θ})` from the boundary term,
//!   hence absolutely integrable against `|z|^{-d-α}`. The piece `|z| < ε` is
//!   dropped and replaced by an explicit bound in the error estimate.
//! * Outside the ball, for functions of `y_d` alone, the horizontal directions
//!   are integrated out in `(ρ, y_d)` coordinates, `ρ = |ỹ - x̃|`.
//!
//! `H_Q(q)` is handled as `L_α g_q` minus the integral of `g_q J(z, ·)` over the
//! complement of `D(1, 1)`, which is exact for `z ∈ D(1, 1)` since `h_q(z) = g_q(z)`.
//! User functions go through full polar cubature around `x` (`d ≤ 3`).

use crate::constant::{c_constant, ConstantResult};
use crate::error::{Error, Result};
use crate::kernel::{kappa_at_height, HalfSpacePoint, KernelParams, TripleKernel, Variant};
use crate::quadrature::{integrate, integrate_pieces, integrate_power_tail, Integral, QuadratureSpec};
use crate::scalar::{norm, sphere_area, Real};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

/// Minimum distance from `∂D(1, 1)` for evaluations of `H_Q`.
pub const HQ_MARGIN: f64 = 0.05;

/// Residual accepted by the `G_P` self-test.
pub const RESIDUAL_TOLERANCE: f64 = 1e-3;

type UserFn<T> = dyn Fn(&[T]) -> T + Send + Sync;

/// A user-supplied test function together with the bounds the inner-ball
/// remainder estimate needs.
#[derive(Clone)]
pub struct UserFunction<T> {
    f: Arc<UserFn<T>>,
    /// `f` vanishes outside `B(0, support_radius)` when set.
    pub support_radius: Option<T>,
    /// Bound on `|∇f|` near the evaluation point.
    pub gradient_bound: T,
    /// Bound on the Hessian norm near the evaluation point.
    pub hessian_bound: T,
    pub note: String,
}

impl<T: Real> UserFunction<T> {
    pub fn new<F>(f: F, gradient_bound: T, hessian_bound: T) -> Result<Self>
    where
        F: Fn(&[T]) -> T + Send + Sync + 'static,
    {
        let ok = |b: T| b.is_finite() && b >= T::zero();
        if !ok(gradient_bound) || !ok(hessian_bound) {
            return Err(Error::InvalidParams(
                "derivative bounds must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            f: Arc::new(f),
            support_radius: None,
            gradient_bound,
            hessian_bound,
            note: String::new(),
        })
    }

    pub fn with_support(mut self, radius: T) -> Result<Self> {
        if !(radius > T::zero() && radius.is_finite()) {
            return Err(Error::InvalidParams("support radius must be positive".into()));
        }
        self.support_radius = Some(radius);
        Ok(self)
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn eval(&self, y: &[T]) -> T {
        (self.f)(y)
    }
}

impl<T: fmt::Debug> fmt::Debug for UserFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserFunction")
            .field("support_radius", &self.support_radius)
            .field("gradient_bound", &self.gradient_bound)
            .field("hessian_bound", &self.hessian_bound)
            .field("note", &self.note)
            .finish_non_exhaustive()
    }
}

/// Test functions the operator can be applied to.
#[derive(Clone, Debug)]
pub enum TestFunction<T> {
    /// `y ↦ y_d^q`.
    PowerG(T),
    /// `y ↦ y_d^q 1_{D(1,1)}(y)`.
    PowerH(T),
    Const(T),
    User(UserFunction<T>),
}

impl<T: Real> TestFunction<T> {
    pub fn eval(&self, y: &[T]) -> T {
        let yd = *y.last().expect("non-empty point");
        match self {
            TestFunction::PowerG(q) => power(yd, *q),
            TestFunction::PowerH(q) => {
                if in_unit_box(y) {
                    power(yd, *q)
                } else {
                    T::zero()
                }
            }
            TestFunction::Const(c) => *c,
            TestFunction::User(u) => u.eval(y),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            TestFunction::PowerG(_) => "g",
            TestFunction::PowerH(_) => "h",
            TestFunction::Const(_) => "const",
            TestFunction::User(_) => "user",
        }
    }
}

fn power<T: Real>(yd: T, q: T) -> T {
    if yd > T::zero() {
        yd.pow0(q)
    } else {
        T::zero()
    }
}

fn in_unit_box<T: Real>(y: &[T]) -> bool {
    let (hor, yd) = y.split_at(y.len() - 1);
    norm(hor) < T::one() && yd[0] > T::zero() && yd[0] < T::one()
}

/// Distance from an interior point of `D(1, 1)` to its boundary inside the
/// half-space (the face `y_d = 0` does not count: `h_q` is continuous there).
fn box_clearance<T: Real>(z: &[T]) -> T {
    let (hor, zd) = z.split_at(z.len() - 1);
    let side = if hor.is_empty() { T::infinity() } else { T::one() - norm(hor) };
    side.min(T::one() - zd[0])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PVResult<T> {
    pub value: T,
    pub error_estimate: T,
    /// Inner cutoff below which the paired integrand was replaced by its bound.
    pub epsilon_used: T,
    pub n_evals: usize,
}

/// Evaluation counter shared by nested closures.
struct Tally<T> {
    evals: Cell<usize>,
    inner_rel: Cell<f64>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> Tally<T> {
    fn new() -> Self {
        Self {
            evals: Cell::new(0),
            inner_rel: Cell::new(0.0),
            _marker: std::marker::PhantomData,
        }
    }

    fn record(&self, r: &Integral<T>) -> T {
        self.evals.set(self.evals.get() + r.n_evals);
        if r.value != T::zero() {
            let rel = (r.error / r.value.abs()).as_f64();
            if rel > self.inner_rel.get() {
                self.inner_rel.set(rel);
            }
        }
        r.value
    }

    /// Outer integral error plus the worst relative inner error on `|value|`.
    fn error(&self, outer: &Integral<T>) -> T {
        outer.error + T::lit(self.inner_rel.get()) * outer.value.abs()
    }
}

/// Series for `(1+t)^q + (1-t)^q - 2` and `(1+t)^q - (1-t)^q`, accurate for
/// small `|t|` where the direct forms cancel.
fn power_differences<T: Real>(q: T, t: T) -> (T, T) {
    if t.abs() > T::lit(0.25) {
        let a = (T::one() + t).powf(q);
        let b = (T::one() - t).powf(q);
        return (a + b - T::lit(2.0), a - b);
    }
    let two = T::lit(2.0);
    let (mut even, mut odd) = (T::zero(), T::zero());
    // binomial(q, k) t^k, k = 1, 2, ...
    let mut term = q * t;
    let mut k = 1usize;
    loop {
        if k.is_multiple_of(2) {
            even = even + two * term;
        } else {
            odd = odd + two * term;
        }
        let kt = T::from_usize(k).unwrap();
        term = term * (q - kt) / (kt + T::one()) * t;
        k += 1;
        let scale = even.abs().max(odd.abs());
        if term.abs() <= T::epsilon() * scale * T::lit(0.25) || k > 200 {
            break;
        }
    }
    (even, odd)
}

/// Smoothness data for the inner-ball remainder bound.
struct InnerBounds<T> {
    grad: T,
    hess: T,
}

fn power_bounds<T: Real>(q: T, h: T) -> InnerBounds<T> {
    let half = h * T::lit(0.5);
    let far = h * T::lit(1.5);
    let sup = |e: T| half.powf(e).max(far.powf(e));
    InnerBounds {
        grad: q.abs() * sup(q - T::one()),
        hess: (q * (q - T::one())).abs() * sup(q - T::lit(2.0)),
    }
}

/// Exponent `θ` of the odd part `|B₊ - B₋| ≲ (|z| / x_d)^θ`, or `None` when the
/// boundary term is constant on the inner ball.
fn odd_exponent<T: Real>(params: &KernelParams<T>) -> Option<T> {
    let theta = params.beta[0] + params.beta[1];
    (params.variant == Variant::Bar && theta > T::zero()).then_some(theta)
}

/// Bound on the dropped piece `|z| < ε` of the paired inner integral.
fn remainder_bound<T: Real>(kernel: &TripleKernel<T>, b: &InnerBounds<T>, h: T, eps: T) -> T {
    let params = kernel.params();
    let alpha = params.alpha;
    let hemi = sphere_area::<T>(params.d) * T::lit(0.5);
    let sup = kernel.sup_bound();
    let two = T::lit(2.0);
    // |½ Δ₂f (B₊ + B₋)| ≤ |D²f| |z|² sup B
    let mut bound = b.hess * sup * eps.powf(two - alpha) / (two - alpha);
    if let Some(theta) = odd_exponent(params) {
        // |½ (f₊ - f₋)(B₊ - B₋)| ≤ 2 |∇f| |z| sup B (2|z|/x_d)^θ
        let e = T::one() + theta - alpha;
        bound = bound + two * b.grad * sup * (two / h).powf(theta) * eps.powf(e) / e;
    }
    hemi * bound
}

/// Largest dyadic fraction of `x_d/4` whose remainder bound is below
/// `abs_tol / 10`.
fn choose_cutoff<T: Real>(kernel: &TripleKernel<T>, b: &InnerBounds<T>, h: T, spec: &QuadratureSpec<T>) -> T {
    let target = spec.abs_tol * T::lit(0.1);
    let mut eps = h * T::lit(0.25);
    for _ in 0..400 {
        if remainder_bound(kernel, b, h, eps) <= target {
            break;
        }
        eps = eps * T::lit(0.5);
    }
    eps
}

fn check_odd_integrable<T: Real>(params: &KernelParams<T>) -> Result<()> {
    if let Some(theta) = odd_exponent(params) {
        if !(T::one() + theta - params.alpha > T::zero()) {
            return Err(Error::Domain(format!(
                "odd part of the paired integrand is not integrable: 1 + θ - α = {} ≤ 0",
                T::one() + theta - params.alpha
            )));
        }
    }
    Ok(())
}

/// Paired inner integral `∫_{ε<r<h/2} r^{-1-α} ∫_{hemisphere} P(r, ω) dω dr` on
/// the substitution `r = (h/2) τ^{1/(2-α)}`, which flattens the `r^{1-α}` profile.
fn inner_ball<T, P>(kernel: &TripleKernel<T>, h: T, eps: T, spec: &QuadratureSpec<T>, tally: &Tally<T>, mut sphere: P) -> Result<Integral<T>>
where
    T: Real,
    P: FnMut(T, &QuadratureSpec<T>) -> Result<Integral<T>>,
{
    let alpha = kernel.params().alpha;
    let half = h * T::lit(0.5);
    let two_m = T::lit(2.0) - alpha;
    let k = T::one() / two_m;
    let tau_lo = (eps / half).powf(two_m).min(T::one());
    let nested = spec.nested();
    integrate(
        |tau: T| {
            let r = half * tau.powf(k);
            let ang = sphere(r, &nested)?;
            let a = tally.record(&ang);
            // r^{-1-α} dr/dτ = k r^{-α} / τ
            Ok(a * k * r.powf(-alpha) / tau)
        },
        tau_lo,
        T::one(),
        spec,
    )
}

/// Integrates `w(φ) g(cos φ)` over `φ ∈ [0, π/2]` with `w = |S^{d-2}| sin^{d-2} φ`,
/// the hemisphere measure for functions of `ω_d` only. For `d = 1` the
/// hemisphere is the single direction `+1`.
fn hemisphere_axial<T, G>(d: usize, mut g: G, spec: &QuadratureSpec<T>) -> Result<Integral<T>>
where
    T: Real,
    G: FnMut(T) -> Result<T>,
{
    if d == 1 {
        let v = g(T::one())?;
        return Ok(Integral { value: v, error: T::zero(), n_evals: 1 });
    }
    let area = sphere_area::<T>(d - 1);
    let e = T::from_usize(d - 2).unwrap();
    let r = integrate(|phi: T| Ok(phi.sin().pow0(e) * g(phi.cos())?), T::zero(), T::FRAC_PI_2(), spec)?;
    Ok(r.scale(area))
}

/// `∫_{ρ_lo}^∞ |S^{d-2}| ρ^{d-2} A(s, t, u) u^{-d-α} dρ`, `u = √(ρ² + Δ²)`,
/// `Δ = t - s`, times `weight(ρ)` (piecewise smooth with the given break points).
/// Requires `d ≥ 2`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn horizontal_shell<T, W>(
    kernel: &TripleKernel<T>,
    s: T,
    t: T,
    rho_lo: T,
    weight: W,
    weight_breaks: &[T],
    spec: &QuadratureSpec<T>,
) -> Result<Integral<T>>
where
    T: Real,
    W: Fn(T) -> T,
{
    let params = kernel.params();
    let d = params.d;
    let dm2 = T::from_usize(d - 2).unwrap();
    let delta = t - s;
    let integrand = |rho: T| -> Result<T> {
        let u = (rho * rho + delta * delta).sqrt();
        if u == T::zero() {
            return Ok(T::zero());
        }
        let w = weight(rho);
        if w == T::zero() {
            return Ok(T::zero());
        }
        Ok(w * rho.pow0(dm2) * kernel.eval(s, t, u) * kernel.stable_density(u))
    };
    // kinks of A where u crosses s or t
    let mut breaks: Vec<T> = weight_breaks.to_vec();
    for level in [s, t] {
        let r2 = level * level - delta * delta;
        if r2 > T::zero() {
            breaks.push(r2.sqrt());
        }
    }
    let mut start = rho_lo.max(delta.abs()).max(s.min(t));
    for &b in &breaks {
        start = start.max(b);
    }
    let near = integrate_pieces(integrand, rho_lo, start, &breaks, spec)?;
    let decay = T::one()
        + params.alpha
        + if params.variant == Variant::Const { T::zero() } else { params.beta[0] + params.beta[1] };
    let far = integrate_power_tail(integrand, start, decay, spec)?;
    Ok((near + far).scale(sphere_area::<T>(d - 1)))
}

/// Decay of `y_d^q ∫ J(x, y) dỹ` as `y_d → ∞`.
fn vertical_decay<T: Real>(params: &KernelParams<T>, q: T) -> T {
    let b1 = if params.variant == Variant::Const { T::zero() } else { params.beta[0] };
    params.alpha + b1 - q
}

/// `L_α g_q` at height `h` via the paired inner ball and `(ρ, y_d)` outside.
fn power_pv<T: Real>(kernel: &TripleKernel<T>, q: T, h: T, eps: Option<T>, spec: &QuadratureSpec<T>) -> Result<PVResult<T>> {
    let params = kernel.params();
    params.check_open_interval(q)?;
    check_odd_integrable(params)?;
    let d = params.d;
    let bounds = power_bounds(q, h);
    let eps = eps.unwrap_or_else(|| choose_cutoff(kernel, &bounds, h, spec));
    let hq = h.powf(q);
    let tally = Tally::<T>::new();

    let inner = inner_ball(kernel, h, eps, spec, &tally, |r, nested| {
        hemisphere_axial(
            d,
            |c| {
                let dz = r * c;
                let (even, odd) = power_differences(q, dz / h);
                let bp = kernel.eval(h, h + dz, r);
                let bm = kernel.eval(h, h - dz, r);
                Ok(T::lit(0.5) * hq * (even * (bp + bm) + odd * (bp - bm)))
            },
            nested,
        )
    })?;

    let half = h * T::lit(0.5);
    let nested = spec.nested();
    let f0 = hq;
    // W(y_d) = ∫ J(x, y) dỹ over |y - x| ≥ h/2
    let shell = |yd: T| -> Result<T> {
        let delta = yd - h;
        if d == 1 {
            let u = delta.abs();
            if u < half {
                return Ok(T::zero());
            }
            return Ok(kernel.eval(h, yd, u) * kernel.stable_density(u));
        }
        let rho_lo = (half * half - delta * delta).max(T::zero()).sqrt();
        let r = horizontal_shell(kernel, h, yd, rho_lo, |_| T::one(), &[], &nested)?;
        Ok(tally.record(&r))
    };
    let outer_integrand = |yd: T| -> Result<T> {
        let w = shell(yd)?;
        if w == T::zero() {
            return Ok(T::zero());
        }
        Ok((power(yd, q) - f0) * w)
    };
    let mut outer = integrate(outer_integrand, T::zero(), half, spec)?;
    if d > 1 {
        outer = outer + integrate_pieces(outer_integrand, half, T::lit(3.0) * half, &[h], spec)?;
    }
    outer = outer + integrate_power_tail(outer_integrand, T::lit(3.0) * half, vertical_decay(params, q), spec)?;

    let total = inner + outer;
    Ok(PVResult {
        value: total.value,
        error_estimate: tally.error(&total) + remainder_bound(kernel, &bounds, h, eps),
        epsilon_used: eps,
        n_evals: total.n_evals + tally.evals.get(),
    })
}

/// `J_m(ψ) = ∫_0^ψ sin^m`.
fn sine_power_integral<T: Real>(m: usize, psi: T) -> T {
    match m {
        0 => psi,
        1 => T::one() - psi.cos(),
        _ => {
            let mt = T::from_usize(m).unwrap();
            -psi.sin().powi(m as i32 - 1) * psi.cos() / mt
                + (mt - T::one()) / mt * sine_power_integral(m - 2, psi)
        }
    }
}

/// Fraction of the horizontal sphere `{|ỹ - z̃| = ρ}` lying outside the unit
/// ball about the origin, `a = |z̃|`.
pub(crate) fn outside_fraction<T: Real>(d: usize, a: T, rho: T) -> T {
    let one = T::one();
    if d == 2 {
        let hits = [a + rho, a - rho].iter().filter(|v| v.abs() >= one).count();
        return T::from_usize(hits).unwrap() * T::lit(0.5);
    }
    if a == T::zero() {
        return if rho >= one { one } else { T::zero() };
    }
    // |z̃ + ρω|² = a² + ρ² + 2aρ cos ψ ≥ 1  ⇔  cos ψ ≥ c0
    let c0 = (one - a * a - rho * rho) / (T::lit(2.0) * a * rho);
    if c0 >= one {
        return T::zero();
    }
    if c0 <= -one {
        return one;
    }
    sine_power_integral(d - 3, c0.acos()) / sine_power_integral(d - 3, T::PI())
}

/// `∫_{R^d_+ ∖ D(1,1)} y_d^q J(z, y) dy`.
fn box_complement<T: Real>(kernel: &TripleKernel<T>, q: T, z: &[T], spec: &QuadratureSpec<T>) -> Result<(Integral<T>, Tally<T>)> {
    let params = kernel.params();
    let d = params.d;
    let h = z[d - 1];
    let a = norm(&z[..d - 1]);
    let tally = Tally::<T>::new();
    let nested = spec.nested();
    let one = T::one();
    let column = |yd: T| -> Result<T> {
        if d == 1 {
            if yd < one {
                return Ok(T::zero());
            }
            let u = yd - h;
            return Ok(kernel.eval(h, yd, u) * kernel.stable_density(u));
        }
        let r = if yd >= one {
            horizontal_shell(kernel, h, yd, T::zero(), |_| one, &[], &nested)?
        } else {
            let lo = one - a;
            let hi = one + a;
            horizontal_shell(kernel, h, yd, lo, |rho| outside_fraction(d, a, rho), &[hi], &nested)?
        };
        Ok(tally.record(&r))
    };
    let integrand = |yd: T| -> Result<T> { Ok(power(yd, q) * column(yd)?) };
    let mut total = Integral::zero();
    if d > 1 {
        total = integrate_pieces(integrand, T::zero(), one, &[h], spec)?;
    }
    total = total + integrate_power_tail(integrand, one, vertical_decay(params, q), spec)?;
    Ok((total, tally))
}

fn power_h_pv<T: Real>(kernel: &TripleKernel<T>, q: T, z: &HalfSpacePoint<T>, eps: Option<T>, spec: &QuadratureSpec<T>) -> Result<PVResult<T>> {
    let coords = z.coords();
    let clearance = box_clearance(coords);
    if !in_unit_box(coords) || clearance < T::lit(HQ_MARGIN) {
        return Err(Error::Singularity(format!(
            "h_q evaluated at distance {clearance} from the box boundary (margin {HQ_MARGIN})"
        )));
    }
    let g = power_pv(kernel, q, z.height(), eps, spec)?;
    let (comp, tally) = box_complement(kernel, q, coords, spec)?;
    Ok(PVResult {
        value: g.value - comp.value,
        error_estimate: g.error_estimate + tally.error(&comp),
        epsilon_used: g.epsilon_used,
        n_evals: g.n_evals + comp.n_evals + tally.evals.get(),
    })
}

/// Directions of the hemisphere `ω_d ≥ 0` (`up = true`) or of the full sphere
/// restricted to `cos φ ≥ c_min`, integrated against `g(ω)`.
fn sphere_cubature<T, G>(d: usize, up: bool, c_min: T, breaks: &[T], mut g: G, spec: &QuadratureSpec<T>) -> Result<Integral<T>>
where
    T: Real,
    G: FnMut(&[T]) -> Result<T>,
{
    let phi_max = if up { T::FRAC_PI_2() } else { c_min.max(-T::one()).min(T::one()).acos() };
    match d {
        1 => {
            let mut v = g(&[T::one()])?;
            if !up && -T::one() >= c_min {
                v = v + g(&[-T::one()])?;
            }
            Ok(Integral { value: v, error: T::zero(), n_evals: 2 })
        }
        2 => {
            let mut pos = breaks.to_vec();
            pos.extend(breaks.iter().map(|b| -*b));
            integrate_pieces(
                |th: T| g(&[th.sin(), th.cos()]),
                -phi_max,
                phi_max,
                &pos,
                spec,
            )
        }
        3 => {
            let inner = spec.nested();
            integrate_pieces(
                |phi: T| {
                    let (s, c) = phi.sin_cos();
                    let ring = integrate(
                        |psi: T| g(&[s * psi.cos(), s * psi.sin(), c]),
                        T::zero(),
                        T::TAU(),
                        &inner,
                    )?;
                    Ok(s * ring.value)
                },
                T::zero(),
                phi_max,
                breaks,
                spec,
            )
        }
        _ => Err(Error::Domain("user test functions need d ≤ 3".into())),
    }
}

fn user_pv<T: Real>(kernel: &TripleKernel<T>, uf: &UserFunction<T>, x: &HalfSpacePoint<T>, eps: Option<T>, spec: &QuadratureSpec<T>) -> Result<PVResult<T>> {
    let params = kernel.params();
    let d = params.d;
    if d > 3 {
        return Err(Error::Domain(format!("user test functions need d ≤ 3, got d = {d}")));
    }
    check_odd_integrable(params)?;
    let xc = x.coords();
    let h = x.height();
    let bounds = InnerBounds { grad: uf.gradient_bound, hess: uf.hessian_bound };
    let eps = eps.unwrap_or_else(|| choose_cutoff(kernel, &bounds, h, spec));
    let f0 = uf.eval(xc);
    let tally = Tally::<T>::new();
    let shifted = |r: T, w: &[T], sign: T| -> [T; 3] {
        let mut y = [T::zero(); 3];
        for i in 0..d {
            y[i] = xc[i] + sign * r * w[i];
        }
        y
    };

    let inner = inner_ball(kernel, h, eps, spec, &tally, |r, nested| {
        sphere_cubature(
            d,
            true,
            T::zero(),
            &[],
            |w| {
                let fp = uf.eval(&shifted(r, w, T::one())[..d]);
                let fm = uf.eval(&shifted(r, w, -T::one())[..d]);
                let dz = r * w[d - 1];
                let bp = kernel.eval(h, h + dz, r);
                let bm = kernel.eval(h, h - dz, r);
                let half = T::lit(0.5);
                Ok(half * (fp + fm - f0 - f0) * (bp + bm) + half * (fp - fm) * (bp - bm))
            },
            nested,
        )
    })?;

    let alpha = params.alpha;
    let nested = spec.nested();
    let radial = |r: T| -> Result<T> {
        // y_d = h + r cos φ > 0; kinks where y_d crosses h or r
        let c_min = -h / r;
        let kinks = [T::FRAC_PI_2(), ((r - h) / r).max(-T::one()).min(T::one()).acos()];
        let ang = sphere_cubature(
            d,
            false,
            c_min,
            &kinks,
            |w| {
                let y = shifted(r, w, T::one());
                let yd = y[d - 1];
                if yd <= T::zero() {
                    return Ok(T::zero());
                }
                Ok((uf.eval(&y[..d]) - f0) * kernel.eval(h, yd, r))
            },
            &nested,
        )?;
        Ok(tally.record(&ang) * r.powf(-T::one() - alpha))
    };
    let half = h * T::lit(0.5);
    let mut breaks = vec![h];
    let mut start = h;
    if let Some(rs) = uf.support_radius {
        let edge = rs + norm(xc);
        breaks.push(edge);
        start = start.max(edge);
    }
    let near = integrate_pieces(radial, half, start, &breaks, spec)?;
    let far = integrate_power_tail(radial, start, alpha, spec)?;

    let total = inner + near + far;
    Ok(PVResult {
        value: total.value,
        error_estimate: tally.error(&total) + remainder_bound(kernel, &bounds, h, eps),
        epsilon_used: eps,
        n_evals: total.n_evals + tally.evals.get(),
    })
}

fn check_point<T: Real>(kernel: &TripleKernel<T>, x: &HalfSpacePoint<T>) -> Result<()> {
    let d = kernel.params().d;
    if x.dim() != d {
        return Err(Error::Domain(format!(
            "point of dimension {} does not match d = {d}",
            x.dim()
        )));
    }
    Ok(())
}

/// `L_α f(x)` with an automatically chosen inner cutoff.
pub fn lb_alpha<T: Real>(kernel: &TripleKernel<T>, f: &TestFunction<T>, x: &HalfSpacePoint<T>, spec: &QuadratureSpec<T>) -> Result<PVResult<T>> {
    lb_alpha_impl(kernel, f, x, None, spec)
}

/// As [`lb_alpha`] with a prescribed inner cutoff `ε ∈ (0, x_d/2)`.
pub fn lb_alpha_with_cutoff<T: Real>(
    kernel: &TripleKernel<T>,
    f: &TestFunction<T>,
    x: &HalfSpacePoint<T>,
    eps: T,
    spec: &QuadratureSpec<T>,
) -> Result<PVResult<T>> {
    if !(eps > T::zero() && eps < x.height() * T::lit(0.5)) {
        return Err(Error::Domain(format!("cutoff {eps} must lie in (0, x_d/2)")));
    }
    lb_alpha_impl(kernel, f, x, Some(eps), spec)
}

fn lb_alpha_impl<T: Real>(
    kernel: &TripleKernel<T>,
    f: &TestFunction<T>,
    x: &HalfSpacePoint<T>,
    eps: Option<T>,
    spec: &QuadratureSpec<T>,
) -> Result<PVResult<T>> {
    spec.validate()?;
    check_point(kernel, x)?;
    match f {
        TestFunction::Const(_) => Ok(PVResult {
            value: T::zero(),
            error_estimate: T::zero(),
            epsilon_used: eps.unwrap_or(x.height() * T::lit(0.25)),
            n_evals: 0,
        }),
        TestFunction::PowerG(q) => power_pv(kernel, *q, x.height(), eps, spec),
        TestFunction::PowerH(q) => {
            kernel.params().check_open_interval(*q)?;
            power_h_pv(kernel, *q, x, eps, spec)
        }
        TestFunction::User(u) => user_pv(kernel, u, x, eps, spec),
    }
}

/// `L f(x) = L_α f(x) - C x_d^{-α} f(x)` for a killing constant `c`.
pub fn lb<T: Real>(
    kernel: &TripleKernel<T>,
    c: &ConstantResult<T>,
    f: &TestFunction<T>,
    x: &HalfSpacePoint<T>,
    spec: &QuadratureSpec<T>,
) -> Result<PVResult<T>> {
    let base = lb_alpha(kernel, f, x, spec)?;
    Ok(kill(kernel, c, f, x, base))
}

fn kill<T: Real>(kernel: &TripleKernel<T>, c: &ConstantResult<T>, f: &TestFunction<T>, x: &HalfSpacePoint<T>, base: PVResult<T>) -> PVResult<T> {
    let alpha = kernel.params().alpha;
    let fx = f.eval(x.coords());
    let h = x.height();
    PVResult {
        value: base.value - kappa_at_height(alpha, c.value, h) * fx,
        error_estimate: base.error_estimate + kappa_at_height(alpha, c.error_estimate, h) * fx.abs(),
        ..base
    }
}

/// Sign regime of `L h_q` relative to the killing exponent `p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignCase {
    /// `q < p`: strictly negative.
    Below,
    /// `q = p`: non-positive.
    Equal,
    /// `q > p`: strictly positive near the boundary.
    Above,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignEntry<T> {
    pub z: Vec<T>,
    pub value: T,
    pub error_estimate: T,
    /// False for `q > p` samples above the located threshold `r₀`.
    pub in_scope: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignReport<T> {
    pub q: T,
    pub case: SignCase,
    /// Empirical threshold below which `L h_q > 0` on the axis (`q > p` only).
    pub r0: Option<T>,
    pub entries: Vec<SignEntry<T>>,
    /// Smallest observed ratio `|L h_q(z)| / z_d^{q-α}` (`q ≠ p`) or largest
    /// `-L h_p(z) / (z_d^{β1} |ln z_d|^{β3})` (`q = p`) over in-scope samples.
    pub empirical_constant: Option<T>,
}

impl<T: Real> SignReport<T> {
    pub fn n_in_scope(&self) -> usize {
        self.entries.iter().filter(|e| e.in_scope).count()
    }

    /// In-scope samples with the wrong sign.
    pub fn violations(&self) -> Vec<&SignEntry<T>> {
        self.entries
            .iter()
            .filter(|e| e.in_scope)
            .filter(|e| match self.case {
                SignCase::Below => !(e.value < T::zero()),
                SignCase::Above => !(e.value > T::zero()),
                // q = p is only claimed up to quadrature error
                SignCase::Equal => !(e.value <= e.error_estimate),
            })
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.n_in_scope() > 0 && self.violations().is_empty()
    }
}

/// Axis heights scanned for `r₀`: `2^{-k/2}/2`, `k = 0..=K`, down to 1e-3.
pub fn r0_grid<T: Real>() -> Vec<T> {
    (0..=18).map(|k| T::lit(0.5 * 2f64.powf(-(k as f64) / 2.0))).collect()
}

/// The operator bundled with its killing constant and quadrature settings.
#[derive(Clone, Debug)]
pub struct NonlocalOperator<T> {
    kernel: TripleKernel<T>,
    c: ConstantResult<T>,
    spec: QuadratureSpec<T>,
}

impl<T: Real> NonlocalOperator<T> {
    /// Builds the kernel and computes `C(α, p, B)`.
    pub fn new(params: KernelParams<T>, spec: QuadratureSpec<T>) -> Result<Self> {
        let c = c_constant(&params, &spec)?;
        Self::with_constant(TripleKernel::new(params)?, c, spec)
    }

    pub fn with_constant(kernel: TripleKernel<T>, c: ConstantResult<T>, spec: QuadratureSpec<T>) -> Result<Self> {
        spec.validate()?;
        Ok(Self { kernel, c, spec })
    }

    pub fn kernel(&self) -> &TripleKernel<T> {
        &self.kernel
    }

    pub fn constant(&self) -> &ConstantResult<T> {
        &self.c
    }

    pub fn spec(&self) -> &QuadratureSpec<T> {
        &self.spec
    }

    pub fn lb_alpha(&self, f: &TestFunction<T>, x: &HalfSpacePoint<T>) -> Result<PVResult<T>> {
        lb_alpha(&self.kernel, f, x, &self.spec)
    }

    pub fn lb(&self, f: &TestFunction<T>, x: &HalfSpacePoint<T>) -> Result<PVResult<T>> {
        lb(&self.kernel, &self.c, f, x, &self.spec)
    }

    /// `max |L g_p(x)| / (C x_d^{p-α})` over the samples, evaluated in parallel.
    pub fn residual_gp(&self, samples: &[HalfSpacePoint<T>]) -> Result<T> {
        let params = self.kernel.params();
        if samples.is_empty() {
            return Err(Error::Precondition("residual needs at least one sample".into()));
        }
        params.check_open_interval(params.p)?;
        if !(self.c.value > T::zero()) {
            return Err(Error::Domain(format!("killing constant {} is not positive", self.c.value)));
        }
        let g = TestFunction::PowerG(params.p);
        let residuals = samples
            .par_iter()
            .map(|x| {
                let r = self.lb(&g, x)?;
                let scale = self.c.value * x.height().powf(params.p - params.alpha);
                Ok(r.value.abs() / scale)
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(residuals.into_iter().fold(T::zero(), T::max))
    }

    /// Largest grid height `r₀` such that `L h_q > 0` at every axis grid point
    /// at or below it; `None` if the smallest grid point already fails.
    pub fn locate_r0(&self, q: T) -> Result<Option<T>> {
        let d = self.kernel.params().d;
        let h = TestFunction::PowerH(q);
        let grid = r0_grid::<T>();
        let values = grid
            .par_iter()
            .map(|&zd| Ok(self.lb(&h, &HalfSpacePoint::on_axis(d, zd)?)?.value))
            .collect::<Result<Vec<T>>>()?;
        // grid is decreasing; walk up from the bottom
        let mut r0 = None;
        for (zd, v) in grid.iter().zip(&values).rev() {
            if *v > T::zero() {
                r0 = Some(*zd);
            } else {
                break;
            }
        }
        Ok(r0)
    }

    /// Signs of `L h_q` at the samples, classified by `q` against `p`.
    pub fn sign_check_hq(&self, q: T, samples: &[HalfSpacePoint<T>]) -> Result<SignReport<T>> {
        let params = *self.kernel.params();
        params.check_open_interval(q)?;
        if samples.is_empty() {
            return Err(Error::Precondition("sign check needs at least one sample".into()));
        }
        let case = if q < params.p {
            SignCase::Below
        } else if q > params.p {
            SignCase::Above
        } else {
            SignCase::Equal
        };
        let r0 = if case == SignCase::Above { self.locate_r0(q)? } else { None };
        let h = TestFunction::PowerH(q);
        let entries = samples
            .par_iter()
            .map(|z| {
                let r = self.lb(&h, z)?;
                let in_scope = match case {
                    SignCase::Above => r0.is_some_and(|t| z.height() <= t),
                    _ => true,
                };
                Ok(SignEntry {
                    z: z.coords().to_vec(),
                    value: r.value,
                    error_estimate: r.error_estimate,
                    in_scope,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let [b1, _, b3, _] = params.beta;
        let ratios = entries.iter().filter(|e| e.in_scope).map(|e| {
            let zd = *e.z.last().unwrap();
            match case {
                SignCase::Equal => -e.value / (zd.pow0(b1) * zd.ln().abs().pow0(b3)),
                _ => e.value.abs() / zd.powf(q - params.alpha),
            }
        });
        let empirical_constant = match case {
            SignCase::Equal => ratios.fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v)))),
            _ => ratios.fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.min(v)))),
        };
        Ok(SignReport { q, case, r0, entries, empirical_constant })
    }
}
