//! The critical killing constant `C(α, p, B)`.
//!
//! With `σ = 1 - s` the inner integrand is
//!
//! ```text
//! (s^p - 1)(1 - s^{α-p-1}) σ^{-1-α} A(1, s, σ √(ρ² + 1))
//! ```
//!
//! and `C = |S^{d-2}| ∫_0^∞ ρ^{d-2} (ρ² + 1)^{-(d+α)/2} ∫_0^1 (…) ds dρ` for
//! `d ≥ 2` (for `d = 1` only the inner integral with `ρ = 0`). The inner integral
//! is split at `s = 1/2`:
//!
//! * on `(0, 1/2)`, `s = e^{-v}` with `v = ln 2 + t / (λ (1 - t))`, `λ = α + β1 - p`,
//!   turns `s^{λ-1} (ln 1/s)^{β3}` into a smooth, exponentially decaying integrand;
//! * on `(1/2, 1)`, `σ = τ^{1/(2-α)} / 2` cancels the `σ^{1-α}` endpoint behaviour.
//!
//! The integrand is evaluated in the log domain from `(ln s, σ)` so that neither
//! the `s → 0` powers nor the `σ → 0` cancellations lose precision.

use crate::error::{Error, Result};
use crate::kernel::{KernelParams, TripleKernel};
use crate::quadrature::{integrate, integrate_power_tail, Integral, QuadratureSpec};
use crate::scalar::{ln_abs_expm1, sphere_area, Real};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cell::Cell;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantResult<T> {
    pub value: T,
    pub error_estimate: T,
    pub n_evals: usize,
}

impl<T: Real> ConstantResult<T> {
    pub fn zero() -> Self {
        Self {
            value: T::zero(),
            error_estimate: T::zero(),
            n_evals: 0,
        }
    }
}

/// Largest `v = ln(1/s)` used before the integrand is treated as zero.
fn v_max<T: Real>() -> T {
    T::lit(700.0).min(T::lit(0.95) * -T::min_positive_value().ln())
}

/// Log of the inner integrand at `s = e^{ln_s} = 1 - sigma`, or `None` where it
/// vanishes identically.
fn ln_inner<T: Real>(kernel: &TripleKernel<T>, ln_s: T, sigma: T, radial_u: T) -> Option<T> {
    let params = kernel.params();
    let (alpha, p) = (params.alpha, params.p);
    let e = alpha - p - T::one();
    if params.p_at_lower_edge() || e == T::zero() {
        return None;
    }
    let s = ln_s.exp();
    let stretch = if params.d == 1 {
        T::one()
    } else {
        (radial_u * radial_u + T::one()).sqrt()
    };
    let u = sigma * stretch;
    let ln_poly = ln_abs_expm1(p * ln_s) + ln_abs_expm1(e * ln_s)
        - (T::one() + alpha) * sigma.ln();
    Some(ln_poly + kernel.ln_eval(T::one(), s, u))
}

/// Inner integrand at `s ∈ (0, 1)` and horizontal offset `radial_u = |ũ|`
/// (ignored for `d = 1`).
pub fn inner_integrand<T: Real>(params: &KernelParams<T>, s: T, radial_u: T) -> Result<T> {
    if !(s > T::zero() && s < T::one()) {
        return Err(Error::Domain(format!("s = {s} lies outside (0, 1)")));
    }
    if !(radial_u >= T::zero()) {
        return Err(Error::Domain(format!("radial offset {radial_u} is negative")));
    }
    let kernel = TripleKernel::new(*params)?;
    Ok(ln_inner(&kernel, s.ln(), T::one() - s, radial_u).map_or(T::zero(), |v| v.exp()))
}

/// Inner integral `∫_0^1 (…) ds` at fixed `radial_u`.
fn inner_integral<T: Real>(
    kernel: &TripleKernel<T>,
    radial_u: T,
    spec: &QuadratureSpec<T>,
) -> Result<Integral<T>> {
    let params = kernel.params();
    let split = spec.endpoint_split;
    let lambda = params.p_upper() - params.p;
    let vmax = v_max::<T>();
    let ln_split = split.ln();

    // (0, split): s = e^{-v}, v = -ln(split) + t / (λ (1 - t)), ds = -s dv
    let lower = integrate(
        |t: T| {
            let om = T::one() - t;
            let dv = T::one() / (lambda * om * om);
            let v = -ln_split + t / (lambda * om);
            if !(v < vmax) {
                return Ok(T::zero());
            }
            let ln_s = -v;
            let sigma = -ln_s.exp_m1();
            Ok(ln_inner(kernel, ln_s, sigma, radial_u).map_or(T::zero(), |l| (l + ln_s).exp()) * dv)
        },
        T::zero(),
        T::one(),
        spec,
    )?;

    // (split, 1): σ = (1 - split) τ^{1/(2-α)}
    let k = T::one() / (T::lit(2.0) - params.alpha);
    let width = T::one() - split;
    let upper = integrate(
        |tau: T| {
            if tau == T::zero() {
                return Ok(T::zero());
            }
            let sigma = width * tau.powf(k);
            let dsigma = k * sigma / tau;
            let ln_s = (-sigma).ln_1p();
            Ok(ln_inner(kernel, ln_s, sigma, radial_u).map_or(T::zero(), |l| l.exp()) * dsigma)
        },
        T::zero(),
        T::one(),
        spec,
    )?;
    Ok(lower + upper)
}

/// `C(α, p, B)`; exactly zero when `p` sits on the lower edge `(α - 1)_+`.
pub fn c_constant<T: Real>(params: &KernelParams<T>, spec: &QuadratureSpec<T>) -> Result<ConstantResult<T>> {
    spec.validate()?;
    if params.p_at_lower_edge() {
        params.validate()?;
        return Ok(ConstantResult::zero());
    }
    params.check_open_interval(params.p)?;
    let kernel = TripleKernel::new(*params)?;
    c_constant_with(&kernel, spec)
}

/// As [`c_constant`] for an already-built kernel.
pub fn c_constant_with<T: Real>(kernel: &TripleKernel<T>, spec: &QuadratureSpec<T>) -> Result<ConstantResult<T>> {
    let params = kernel.params();
    if params.p_at_lower_edge() {
        return Ok(ConstantResult::zero());
    }
    params.check_open_interval(params.p)?;
    if params.d == 1 {
        let r = inner_integral(kernel, T::zero(), spec)?;
        return Ok(ConstantResult {
            value: r.value,
            error_estimate: r.error,
            n_evals: r.n_evals,
        });
    }

    let d = params.d;
    let dm2 = T::from_usize(d - 2).unwrap();
    let exponent = -(T::from_usize(d).unwrap() + params.alpha) * T::lit(0.5);
    let surface = sphere_area::<T>(d - 1);
    let inner_spec = spec.nested();
    let inner_rel_err = Cell::new(T::zero());
    let inner_evals = Cell::new(0usize);
    let weight = |rho: T| rho.pow0(dm2) * (rho * rho + T::one()).powf(exponent);
    let outer = |rho: T| -> Result<T> {
        let r = inner_integral(kernel, rho, &inner_spec)?;
        inner_evals.set(inner_evals.get() + r.n_evals);
        if r.value != T::zero() {
            inner_rel_err.set(inner_rel_err.get().max(r.error / r.value.abs()));
        }
        Ok(weight(rho) * r.value)
    };
    let near = integrate(&outer, T::zero(), T::one(), spec)?;
    // ρ^{d-2} (ρ² + 1)^{-(d+α)/2} ~ ρ^{-2-α}: map the tail with decay 1 + α
    let far = integrate_power_tail(&outer, T::one(), T::one() + params.alpha, spec)?;
    let total = (near + far).scale(surface);
    Ok(ConstantResult {
        value: total.value,
        error_estimate: total.error + inner_rel_err.get() * total.value.abs(),
        n_evals: total.n_evals + inner_evals.get(),
    })
}

/// `C(α, p, B)` along a strictly increasing grid of `p` values, evaluated in
/// parallel; entries are returned in grid order.
pub fn c_profile<T: Real>(
    params: &KernelParams<T>,
    p_grid: &[T],
    spec: &QuadratureSpec<T>,
) -> Result<Vec<(T, ConstantResult<T>)>> {
    if p_grid.is_empty() {
        return Err(Error::Config("p grid is empty".into()));
    }
    if p_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("p grid must be strictly increasing".into()));
    }
    p_grid
        .par_iter()
        .map(|&p| {
            let at = params.with_p(p).map_err(|e| match e {
                Error::InvalidParams(m) => Error::Domain(m),
                other => other,
            })?;
            Ok((p, c_constant(&at, spec)?))
        })
        .collect()
}
