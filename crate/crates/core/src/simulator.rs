//! Monte Carlo for the killed process in a box `D(a, b) = {|x̃| < a, 0 < x_d < b}`.
//!
//! Jumps shorter than `ε(x) = η · min(x_d, distance to the other walls)` are
//! either dropped or replaced by a
//! Gaussian increment with the same second moment over each holding interval
//! (the default; dropping them leaves an `O(η^{2-α})` bias in exit
//! functionals). Above the cutoff the jump
//! density is dominated by `M₂ |z|^{-d-α}`, so proposals drawn from that
//! majorant at total rate `Λ(ε) = M₂ |S^{d-1}| ε^{-α} / α` are thinned exactly:
//! `y = x + z` is accepted with probability `B(x, y) / M₂`, and proposals below
//! the half-space are fictitious. Killing is an exponential clock with rate
//! `κ(x)` competing with the proposal clock; the state is constant between
//! events, so time integrals accumulate exactly.
//!
//! Payoffs supported on a set at positive distance from the box are only
//! reached by a jump, so `E f(Y_τ) = E ∫_0^τ ∫ J(Y_t, y) f(y) dy dt`. The inner
//! integral is tabulated once ([`RateTable`]) and accumulated along paths like
//! an occupation weight; this compensated form has far smaller variance when the
//! target is rarely hit.

use crate::constant::c_constant;
use crate::error::{Error, Result};
use crate::kernel::{kappa_at_height, HalfSpacePoint, KernelParams, TripleKernel};
use crate::operator::{horizontal_shell, outside_fraction};
use crate::quadrature::{integrate, integrate_pieces, QuadratureSpec};
use crate::scalar::{ball_volume, norm, sphere_area, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const DEFAULT_ETA: f64 = 0.1;
pub const DEFAULT_MAX_EVENTS: u64 = 1_000_000;
/// Largest tolerated fraction of budget-exhausted paths in an estimate.
pub const BUDGET_LIMIT: f64 = 0.01;
pub const JSONL_SCHEMA_VERSION: u32 = 1;

/// `D(a, b)` centred on the vertical axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain<T> {
    pub half_width: T,
    pub height: T,
}

impl<T: Real> BoxDomain<T> {
    pub fn new(half_width: T, height: T) -> Result<Self> {
        let ok = |v: T| v > T::zero() && v.is_finite();
        if !ok(half_width) || !ok(height) {
            return Err(Error::InvalidParams(format!(
                "box D({half_width}, {height}) needs positive finite sides"
            )));
        }
        Ok(Self { half_width, height })
    }

    /// `U(r) = D(r/2, r/2)`.
    pub fn u(r: T) -> Result<Self> {
        let h = r * T::lit(0.5);
        Self::new(h, h)
    }

    pub fn contains(&self, y: &[T]) -> bool {
        let (hor, yd) = y.split_at(y.len() - 1);
        norm(hor) < self.half_width && yd[0] > T::zero() && yd[0] < self.height
    }

    pub fn scaled(&self, r: T) -> Result<Self> {
        Self::new(self.half_width * r, self.height * r)
    }
}

/// Treatment of jumps shorter than the cutoff `ε(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SmallJumps {
    /// Ignored.
    Drop,
    /// Brownian increment with covariance `σ²(x) I`,
    /// `σ²(x) = d^{-1} ∫_{|z|<ε(x)} |z|² J(x, x + z) dz`.
    #[default]
    Diffusion,
}

/// Everything a batch of paths needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig<T> {
    pub params: KernelParams<T>,
    #[serde(rename = "box")]
    pub domain: BoxDomain<T>,
    /// Small-jump truncation ratio: `ε(x) = eta · min(x_d, wall distance)`.
    pub eta: T,
    /// Thinning bound `M₂ ≥ sup B`.
    pub majorant: T,
    /// Killing constant `C(α, p, B)`.
    pub killing: T,
    #[serde(default)]
    pub small_jumps: SmallJumps,
    pub n_paths: usize,
    pub max_events: u64,
    pub seed: u64,
}

impl<T: Real> SimConfig<T> {
    /// Defaults for `eta` and `max_events`, the kernel's inflated sup bound as
    /// majorant, and the killing constant from quadrature.
    pub fn new(params: KernelParams<T>, domain: BoxDomain<T>, n_paths: usize, seed: u64) -> Result<Self> {
        let kernel = TripleKernel::new(params)?;
        let c = c_constant(&params, &QuadratureSpec::default())?;
        let cfg = Self {
            params,
            domain,
            eta: T::lit(DEFAULT_ETA),
            majorant: kernel.majorant(),
            killing: c.value,
            small_jumps: SmallJumps::default(),
            n_paths,
            max_events: DEFAULT_MAX_EVENTS,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let kernel = TripleKernel::new(self.params)?;
        if !(self.eta > T::zero() && self.eta <= T::lit(0.5)) {
            return Err(Error::InvalidParams(format!("eta = {} must lie in (0, 1/2]", self.eta)));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidParams("n_paths must be at least 1".into()));
        }
        if !(self.majorant >= kernel.sup_bound()) || !self.majorant.is_finite() {
            return Err(Error::InvalidParams(format!(
                "majorant {} is below the kernel sup bound {}",
                self.majorant,
                kernel.sup_bound()
            )));
        }
        if !(self.killing >= T::zero() && self.killing.is_finite()) {
            return Err(Error::InvalidParams(format!("killing constant {} is invalid", self.killing)));
        }
        BoxDomain::new(self.domain.half_width, self.domain.height)?;
        Ok(())
    }

    pub fn with_eta(self, eta: T) -> Result<Self> {
        Self { eta, ..self }.checked()
    }

    pub fn with_max_events(self, max_events: u64) -> Self {
        Self { max_events, ..self }
    }

    pub fn with_killing(self, killing: T) -> Result<Self> {
        Self { killing, ..self }.checked()
    }

    pub fn with_majorant(self, majorant: T) -> Result<Self> {
        Self { majorant, ..self }.checked()
    }

    pub fn with_small_jumps(self, small_jumps: SmallJumps) -> Self {
        Self { small_jumps, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_n_paths(self, n_paths: usize) -> Result<Self> {
        Self { n_paths, ..self }.checked()
    }

    pub fn with_domain(self, domain: BoxDomain<T>) -> Result<Self> {
        Self { domain, ..self }.checked()
    }

    fn checked(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PathStatus {
    Exited,
    Killed,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome<T> {
    pub status: PathStatus,
    /// Time of exit, killing, or of the last event when the budget ran out.
    pub exit_time: T,
    /// Landing point of the exiting jump.
    pub exit_point: Option<Vec<T>>,
    /// `∫ w₁(Y_t^d) dt`, `w₁(t) = t^{β1} |ln t|^{β3}`.
    pub occ_w1: T,
    /// `∫ (Y_t^d)^{β2} dt`.
    pub occ_w2: T,
    /// `f(Y_τ)` (zero unless exited) when a payoff was supplied.
    pub boundary_payoff: Option<T>,
    /// `∫ r(Y_t) dt` when a rate was supplied.
    pub compensator: Option<T>,
    pub n_events: u64,
}

/// A function of the state, shared across worker threads.
pub type StateFn<'a, T> = dyn Fn(&[T]) -> T + Sync + 'a;

/// Optional path functionals.
#[derive(Clone, Copy)]
pub struct Probes<'a, T> {
    pub payoff: Option<&'a StateFn<'a, T>>,
    pub rate: Option<&'a StateFn<'a, T>>,
}

impl<T> Default for Probes<'_, T> {
    fn default() -> Self {
        Self { payoff: None, rate: None }
    }
}

/// What one event did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Killed,
    /// Accepted jump inside the box; the state was updated.
    Moved,
    /// Accepted jump out of the box; the landing point is in the proposal buffer.
    Exited,
    /// Proposal below the half-space.
    Fictitious,
    /// Thinning rejection.
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step<T> {
    pub dt: T,
    pub kind: StepKind,
}

/// One holding interval as seen by the conservation check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord<T> {
    pub dt: T,
    pub w1: T,
    pub w2: T,
    pub rate: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate<T> {
    pub mean: T,
    pub std_error: T,
    pub n: usize,
}

impl<T: Real> Estimate<T> {
    /// Sample mean and standard error of the mean.
    pub fn from_samples(samples: &[T]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::Precondition("estimate needs at least one sample".into()));
        }
        let nf = n as f64;
        let mean = samples.iter().map(|v| v.as_f64()).sum::<f64>() / nf;
        let var = if n > 1 {
            samples.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / (nf - 1.0)
        } else {
            0.0
        };
        Ok(Self {
            mean: T::lit(mean),
            std_error: T::lit((var / nf).sqrt()),
            n,
        })
    }

    /// `k` successes out of `n` with the binomial standard error.
    pub fn binomial(k: usize, n: usize) -> Result<Self> {
        if n == 0 || k > n {
            return Err(Error::Precondition(format!("invalid binomial counts {k}/{n}")));
        }
        let p = k as f64 / n as f64;
        Ok(Self {
            mean: T::lit(p),
            std_error: T::lit((p * (1.0 - p) / n as f64).sqrt()),
            n,
        })
    }

    /// `|a - b| / √(se_a² + se_b²)`.
    pub fn z_score(&self, other: &Self) -> T {
        let se = (self.std_error * self.std_error + other.std_error * other.std_error).sqrt();
        (self.mean - other.mean).abs() / se
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit<T> {
    pub slope: T,
    pub intercept: T,
    pub slope_std_error: T,
    pub r_squared: T,
}

/// Least squares on `(ln x_d, ln mean)`; the slope error propagates the
/// per-point relative standard errors through the linear estimator.
pub fn fit_exponent<T: Real>(points: &[(T, Estimate<T>)]) -> Result<ExponentFit<T>> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} points given, at least 3 needed", points.len())));
    }
    if let Some((x, e)) = points.iter().find(|(x, e)| !(e.mean > T::zero()) || !(*x > T::zero())) {
        return Err(Error::DegenerateFit(format!("non-positive value {} at x = {x}", e.mean)));
    }
    let lx: Vec<f64> = points.iter().map(|(x, _)| x.as_f64().ln()).collect();
    let ly: Vec<f64> = points.iter().map(|(_, e)| e.mean.as_f64().ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("all abscissae coincide".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    let var: f64 = lx
        .iter()
        .zip(points)
        .map(|(x, (_, e))| {
            let rel = e.std_error.as_f64() / e.mean.as_f64();
            ((x - mx) / sxx).powi(2) * rel * rel
        })
        .sum();
    Ok(ExponentFit {
        slope: T::lit(slope),
        intercept: T::lit(intercept),
        slope_std_error: T::lit(var.sqrt()),
        r_squared: T::lit(r_squared),
    })
}

/// Total proposal rate `M₂ |S^{d-1}| ε^{-α} / α` of the majorant above `ε`.
pub fn majorant_rate<T: Real>(majorant: T, eps: T, alpha: T, d: usize) -> T {
    majorant * sphere_area::<T>(d) * eps.powf(-alpha) / alpha
}

fn draw_radius<T: Real, R: Rng + ?Sized>(rng: &mut R, eps: T, alpha: T) -> T {
    // Pareto(α) on [ε, ∞): P(|z| > r) = (ε / r)^α
    let u: f64 = 1.0 - rng.random::<f64>();
    eps * T::lit(u).powf(-alpha.recip())
}

fn draw_direction<T: Real, R: Rng + ?Sized>(rng: &mut R, out: &mut [T]) {
    if out.len() == 1 {
        out[0] = if rng.random::<bool>() { T::one() } else { -T::one() };
        return;
    }
    loop {
        let mut s = 0.0;
        for v in out.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            s += g * g;
            *v = T::lit(g);
        }
        if s > 0.0 {
            let inv = T::lit(s.sqrt().recip());
            out.iter_mut().for_each(|v| *v = *v * inv);
            return;
        }
    }
}

/// A jump `z` with `|z| ≥ ε` and density `∝ |z|^{-d-α}`: Pareto radius,
/// uniform direction.
pub fn sample_displacement<T: Real, R: Rng + ?Sized>(rng: &mut R, eps: T, alpha: T, d: usize) -> Result<Vec<T>> {
    if !(eps > T::zero()) {
        return Err(Error::Domain(format!("truncation radius {eps} must be positive")));
    }
    if d == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    let r = draw_radius(rng, eps, alpha);
    let mut z = vec![T::zero(); d];
    draw_direction(rng, &mut z);
    z.iter_mut().for_each(|v| *v = *v * r);
    Ok(z)
}

/// `K` with `d^{-1} ∫_{|z|<ε} |z|² J(x, x + z) dz = K ε^{2-α}` at `ε = η x_d`;
/// by scale invariance `K` depends on `η` only, and it is exact for every
/// `ε ≤ η x_d` unless the kernel is of bar type. With `ρ = τ^{1/(2-α)}`,
/// `K = (d (2-α))^{-1} ∫_0^1 ∫_{S^{d-1}} B(1, 1 + ηρ w_d, ηρ) dσ(w) dτ`.
pub fn small_jump_coefficient<T: Real>(kernel: &TripleKernel<T>, eta: T) -> Result<T> {
    let params = kernel.params();
    let d = params.d;
    let two_minus = T::lit(2.0) - params.alpha;
    let spec = QuadratureSpec::<T>::default();
    let nested = spec.nested();
    let sphere = |rho: T| -> Result<T> {
        let u = eta * rho;
        if d == 1 {
            return Ok(kernel.eval(T::one(), T::one() + u, u) + kernel.eval(T::one(), T::one() - u, u));
        }
        let ring = sphere_area::<T>(d - 1);
        let dm2 = T::from_usize(d - 2).unwrap();
        let r = integrate(
            |th: T| Ok(ring * th.sin().pow0(dm2) * kernel.eval(T::one(), T::one() + u * th.cos(), u)),
            T::zero(),
            T::PI(),
            &nested,
        )?;
        Ok(r.value)
    };
    let total = integrate(|tau: T| sphere(tau.powf(two_minus.recip())), T::zero(), T::one(), &spec)?;
    Ok(total.value / (T::from_usize(d).unwrap() * two_minus))
}

/// Outcome set a path can be tested against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region<T> {
    /// Everything outside the box.
    Exterior,
    /// `D(half_width, upper) ∖ D(half_width, lower)`.
    Slab { half_width: T, lower: T, upper: T },
    /// `{|y| > radius}`.
    FarField { radius: T },
}

impl<T: Real> Region<T> {
    /// `D(1/2, 1) ∖ D(1/2, 3/4)`.
    pub fn upper_slab() -> Self {
        Region::Slab {
            half_width: T::lit(0.5),
            lower: T::lit(0.75),
            upper: T::one(),
        }
    }

    pub fn contains(&self, y: &[T], domain: &BoxDomain<T>) -> bool {
        match *self {
            Region::Exterior => !domain.contains(y),
            Region::Slab { half_width, lower, upper } => {
                let (hor, yd) = y.split_at(y.len() - 1);
                norm(hor) < half_width && yd[0] >= lower && yd[0] < upper
            }
            Region::FarField { radius } => norm(y) > radius,
        }
    }
}

/// `w₁(t) = t^{β1} |ln t|^{β3}`.
pub fn weight_w1<T: Real>(params: &KernelParams<T>, t: T) -> T {
    let [b1, _, b3, _] = params.beta;
    t.pow0(b1) * t.ln().abs().pow0(b3)
}

/// `w₂(t) = t^{β2}`.
pub fn weight_w2<T: Real>(params: &KernelParams<T>, t: T) -> T {
    t.pow0(params.beta[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weight {
    W1,
    W2,
}

/// Path sampler for one configuration.
#[derive(Clone, Debug)]
pub struct Simulator<T> {
    config: SimConfig<T>,
    kernel: TripleKernel<T>,
    /// `σ²(x) = diffusion · ε(x)^{2-α}`.
    diffusion: T,
}

impl<T: Real> Simulator<T> {
    pub fn new(config: SimConfig<T>) -> Result<Self> {
        config.validate()?;
        let kernel = TripleKernel::new(config.params)?;
        let diffusion = match config.small_jumps {
            SmallJumps::Drop => T::zero(),
            SmallJumps::Diffusion => small_jump_coefficient(&kernel, config.eta)?,
        };
        Ok(Self { config, kernel, diffusion })
    }

    pub fn config(&self) -> &SimConfig<T> {
        &self.config
    }

    pub fn kernel(&self) -> &TripleKernel<T> {
        &self.kernel
    }

    /// Per-coordinate variance rate of the small-jump replacement below `eps`.
    pub fn small_jump_variance(&self, eps: T) -> T {
        self.diffusion * eps.powf(T::lit(2.0) - self.config.params.alpha)
    }

    /// `ε(x) = η · min(x_d, distance to the top and side walls)`.
    pub fn cutoff(&self, x: &[T]) -> T {
        let dom = &self.config.domain;
        let d = x.len();
        let mut m = x[d - 1].min(dom.height - x[d - 1]);
        if d > 1 {
            m = m.min(dom.half_width - norm(&x[..d - 1]));
        }
        self.config.eta * m
    }

    /// `Λ(ε)`.
    pub fn jump_rate(&self, eps: T) -> T {
        let c = &self.config;
        majorant_rate(c.majorant, eps, c.params.alpha, c.params.d)
    }

    /// `κ(x)` at height `h`.
    pub fn killing_rate(&self, h: T) -> T {
        kappa_at_height(self.config.params.alpha, self.config.killing, h)
    }

    /// Independent stream for path `index`.
    pub fn path_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(index);
        rng
    }

    fn check_start(&self, x0: &[T]) -> Result<()> {
        if x0.len() != self.config.params.d {
            return Err(Error::Domain(format!(
                "start point of dimension {} does not match d = {}",
                x0.len(),
                self.config.params.d
            )));
        }
        if !self.config.domain.contains(x0) {
            return Err(Error::Domain("start point lies outside the box".into()));
        }
        Ok(())
    }

    /// One event from `state`. An accepted jump inside the box overwrites
    /// `state`; an exiting jump leaves its landing point in `proposal`.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut [T], proposal: &mut [T], rng: &mut R) -> Result<Step<T>> {
        let c = &self.config;
        let d = c.params.d;
        let h = state[d - 1];
        let eps = self.cutoff(state);
        let lam = self.jump_rate(eps);
        let kap = self.killing_rate(h);
        let total = lam + kap;
        let e: f64 = rng.sample(Exp1);
        let dt = T::lit(e) / total;
        if self.diffusion > T::zero() {
            // sub-cutoff motion over the holding interval; the rare increment
            // leaving the half-space is discarded
            let var = self.small_jump_variance(eps) * dt;
            let sd = var.sqrt();
            for (p, s) in proposal.iter_mut().zip(state.iter()) {
                let g: f64 = rng.sample(StandardNormal);
                *p = *s + sd * T::lit(g);
            }
            if proposal[d - 1] > T::zero() {
                if !c.domain.contains(proposal) || self.bridge_exit(state, proposal, var, rng) {
                    return Ok(Step { dt, kind: StepKind::Exited });
                }
                state.copy_from_slice(proposal);
            }
        }
        if T::lit(rng.random::<f64>()) * total < kap {
            return Ok(Step { dt, kind: StepKind::Killed });
        }
        // the cutoff stays the one the clock was drawn with
        let r = draw_radius(rng, eps, c.params.alpha);
        draw_direction(rng, proposal);
        for (p, s) in proposal.iter_mut().zip(state.iter()) {
            *p = *s + r * *p;
        }
        let yd = proposal[d - 1];
        if !(yd > T::zero()) {
            return Ok(Step { dt, kind: StepKind::Fictitious });
        }
        let b = self.kernel.eval(state[d - 1], yd, r);
        let accept = b / c.majorant;
        if accept > T::one() {
            let mut at = state.iter().map(|v| v.as_f64()).collect::<Vec<_>>();
            at.extend(proposal.iter().map(|v| v.as_f64()));
            return Err(Error::StaleMajorant {
                value: b.as_f64(),
                majorant: c.majorant.as_f64(),
                state: at,
            });
        }
        if !(T::lit(rng.random::<f64>()) < accept) {
            return Ok(Step { dt, kind: StepKind::Rejected });
        }
        if !c.domain.contains(proposal) {
            return Ok(Step { dt, kind: StepKind::Exited });
        }
        state.copy_from_slice(proposal);
        Ok(Step { dt, kind: StepKind::Moved })
    }

    /// Whether the Brownian bridge from `from` to `to` (both in the box) left
    /// through the top or the side wall, each treated as a plane:
    /// `P = exp(-2ab / σ²Δt)` for end distances `a`, `b`. On a crossing `to`
    /// is reflected through that wall, giving a landing point outside the box.
    fn bridge_exit<R: Rng + ?Sized>(&self, from: &[T], to: &mut [T], var: T, rng: &mut R) -> bool {
        let dom = &self.config.domain;
        let d = from.len();
        let two = T::lit(2.0);
        let cross = |a: T, b: T, rng: &mut R| T::lit(rng.random::<f64>()) < (-two * a * b / var).exp();
        if cross(dom.height - from[d - 1], dom.height - to[d - 1], rng) {
            to[d - 1] = two * dom.height - to[d - 1];
            return true;
        }
        if d == 1 {
            return false;
        }
        let (r0, r1) = (norm(&from[..d - 1]), norm(&to[..d - 1]));
        if r1 > T::zero() && cross(dom.half_width - r0, dom.half_width - r1, rng) {
            let scale = (two * dom.half_width - r1) / r1;
            to[..d - 1].iter_mut().for_each(|v| *v = *v * scale);
            return true;
        }
        false
    }

    pub fn simulate_path(&self, x0: &[T], index: u64, probes: Probes<'_, T>) -> Result<PathOutcome<T>> {
        self.check_start(x0)?;
        self.run_path(x0, index, probes, None)
    }

    /// As [`Self::simulate_path`], also recording every holding interval.
    pub fn simulate_path_traced(
        &self,
        x0: &[T],
        index: u64,
        probes: Probes<'_, T>,
        trace: &mut Vec<TraceRecord<T>>,
    ) -> Result<PathOutcome<T>> {
        self.check_start(x0)?;
        self.run_path(x0, index, probes, Some(trace))
    }

    fn run_path(
        &self,
        x0: &[T],
        index: u64,
        probes: Probes<'_, T>,
        mut trace: Option<&mut Vec<TraceRecord<T>>>,
    ) -> Result<PathOutcome<T>> {
        let params = &self.config.params;
        let d = params.d;
        let mut rng = self.path_rng(index);
        let mut state = x0.to_vec();
        let mut proposal = vec![T::zero(); d];
        let mut out = PathOutcome {
            status: PathStatus::BudgetExhausted,
            exit_time: T::zero(),
            exit_point: None,
            occ_w1: T::zero(),
            occ_w2: T::zero(),
            boundary_payoff: probes.payoff.map(|_| T::zero()),
            compensator: probes.rate.map(|_| T::zero()),
            n_events: 0,
        };
        let mut comp = T::zero();
        while out.n_events < self.config.max_events {
            let h = state[d - 1];
            let w1 = weight_w1(params, h);
            let w2 = weight_w2(params, h);
            let rate = probes.rate.map_or(T::zero(), |f| f(&state));
            let step = self.step(&mut state, &mut proposal, &mut rng)?;
            out.n_events += 1;
            out.exit_time = out.exit_time + step.dt;
            out.occ_w1 = out.occ_w1 + w1 * step.dt;
            out.occ_w2 = out.occ_w2 + w2 * step.dt;
            comp = comp + rate * step.dt;
            if let Some(t) = trace.as_deref_mut() {
                t.push(TraceRecord { dt: step.dt, w1, w2, rate });
            }
            match step.kind {
                StepKind::Killed => {
                    out.status = PathStatus::Killed;
                    break;
                }
                StepKind::Exited => {
                    out.status = PathStatus::Exited;
                    if let Some(f) = probes.payoff {
                        out.boundary_payoff = Some(f(&proposal));
                    }
                    out.exit_point = Some(proposal.clone());
                    break;
                }
                _ => {}
            }
        }
        if probes.rate.is_some() {
            out.compensator = Some(comp);
        }
        Ok(out)
    }

    /// All `n_paths` outcomes in path order; paths run in parallel on
    /// independent streams, so the result does not depend on the thread count.
    pub fn run(&self, x0: &[T], probes: Probes<'_, T>) -> Result<Vec<PathOutcome<T>>> {
        self.check_start(x0)?;
        (0..self.config.n_paths as u64)
            .into_par_iter()
            .map(|i| self.run_path(x0, i, probes, None))
            .collect()
    }

    /// One sample per path, failing when too many paths exhausted their budget.
    fn samples<F>(&self, x0: &[T], probes: Probes<'_, T>, sample: F) -> Result<Vec<T>>
    where
        F: Fn(&PathOutcome<T>) -> T + Sync,
    {
        self.check_start(x0)?;
        let n = self.config.n_paths;
        let per_path = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let o = self.run_path(x0, i, probes, None)?;
                Ok((sample(&o), o.status == PathStatus::BudgetExhausted))
            })
            .collect::<Result<Vec<_>>>()?;
        check_budget(per_path.iter().filter(|(_, e)| *e).count(), n)?;
        Ok(per_path.into_iter().map(|(v, _)| v).collect())
    }

    fn reduce<F>(&self, x0: &[T], probes: Probes<'_, T>, sample: F) -> Result<Estimate<T>>
    where
        F: Fn(&PathOutcome<T>) -> T + Sync,
    {
        Estimate::from_samples(&self.samples(x0, probes, sample)?)
    }

    /// `E_x ∫_0^τ w(Y_t^d) dt` from an axis point.
    pub fn estimate_occupation(&self, x0: &HalfSpacePoint<T>, weight: Weight) -> Result<Estimate<T>> {
        let c = x0.coords();
        if c[..c.len() - 1].iter().any(|v| *v != T::zero()) {
            return Err(Error::Precondition("occupation start point must lie on the vertical axis".into()));
        }
        self.reduce(c, Probes::default(), |o| match weight {
            Weight::W1 => o.occ_w1,
            Weight::W2 => o.occ_w2,
        })
    }

    /// `E_x τ` (exit or killing, whichever comes first).
    pub fn estimate_exit_time(&self, x0: &HalfSpacePoint<T>) -> Result<Estimate<T>> {
        self.reduce(x0.coords(), Probes::default(), |o| o.exit_time)
    }

    /// Fraction of paths exiting into `region`, by direct counting.
    pub fn estimate_exit_probability(&self, x0: &HalfSpacePoint<T>, region: &Region<T>) -> Result<Estimate<T>> {
        if let Region::Slab { half_width, lower, .. } = *region {
            let dom = &self.config.domain;
            if lower < dom.height && half_width > T::zero() {
                return Err(Error::Precondition("target slab intersects the box".into()));
            }
        }
        let dom = self.config.domain;
        let hits = self.samples(x0.coords(), Probes::default(), |o| match &o.exit_point {
            Some(y) if region.contains(y, &dom) => T::one(),
            _ => T::zero(),
        })?;
        let k = hits.iter().filter(|v| **v > T::zero()).count();
        Estimate::binomial(k, hits.len())
    }

    /// `E_x f(Y_τ)` with killed paths contributing zero.
    pub fn estimate_boundary_payoff(&self, x0: &HalfSpacePoint<T>, payoff: &(dyn Fn(&[T]) -> T + Sync)) -> Result<Estimate<T>> {
        let probes = Probes { payoff: Some(payoff), rate: None };
        self.reduce(x0.coords(), probes, |o| o.boundary_payoff.unwrap_or(T::zero()))
    }

    /// `E_x ∫_0^τ r(Y_t) dt`; with `r = ∫ J(·, y) f(y) dy` this is `E_x f(Y_τ)`
    /// for payoffs supported away from the box.
    pub fn estimate_compensated(&self, x0: &HalfSpacePoint<T>, rate: &(dyn Fn(&[T]) -> T + Sync)) -> Result<Estimate<T>> {
        let probes = Probes { payoff: None, rate: Some(rate) };
        self.reduce(x0.coords(), probes, |o| o.compensator.unwrap_or(T::zero()))
    }
}

fn check_budget(exhausted: usize, total: usize) -> Result<()> {
    if exhausted as f64 >= BUDGET_LIMIT * total as f64 && exhausted > 0 {
        return Err(Error::BudgetExceeded {
            exhausted,
            total,
            limit_fraction: BUDGET_LIMIT,
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct JsonlRecord<'a, T> {
    schema: u32,
    index: usize,
    status: PathStatus,
    exit_time: T,
    occ_w1: T,
    occ_w2: T,
    n_events: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    exit_point: Option<&'a [T]>,
}

/// One JSON object per path.
pub fn write_jsonl<T: Real + Serialize, W: Write>(outcomes: &[PathOutcome<T>], mut w: W) -> Result<()> {
    for (index, o) in outcomes.iter().enumerate() {
        let rec = JsonlRecord {
            schema: JSONL_SCHEMA_VERSION,
            index,
            status: o.status,
            exit_time: o.exit_time,
            occ_w1: o.occ_w1,
            occ_w2: o.occ_w2,
            n_events: o.n_events,
            exit_point: o.exit_point.as_deref(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// `ln r` tabulated on a uniform grid in (horizontal distance to an anchor,
/// `ln x_d`), bilinearly interpolated. Below the grid in `x_d` the last cell
/// is extrapolated linearly (power-law behaviour at the boundary); elsewhere
/// arguments are clamped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTable<T> {
    anchor: Vec<T>,
    a: Vec<T>,
    ln_z: Vec<T>,
    ln_v: Vec<T>,
}

impl<T: Real> RateTable<T> {
    /// Evaluates `rate(a, z_d)` at every node in parallel. `anchor` has `d - 1`
    /// horizontal coordinates; `n_a = 1` gives a table in `z_d` alone.
    pub fn build<F>(anchor: Vec<T>, a_range: (T, T), n_a: usize, z_range: (T, T), n_z: usize, rate: F) -> Result<Self>
    where
        F: Fn(T, T) -> Result<T> + Sync,
    {
        if n_a == 0 || n_z < 2 || !(z_range.0 > T::zero() && z_range.0 < z_range.1) || a_range.1 < a_range.0 {
            return Err(Error::Config("rate table needs n_z ≥ 2 and ordered positive ranges".into()));
        }
        let lin = |lo: T, hi: T, n: usize, i: usize| {
            if n == 1 {
                lo
            } else {
                lo + (hi - lo) * T::from_usize(i).unwrap() / T::from_usize(n - 1).unwrap()
            }
        };
        let a: Vec<T> = (0..n_a).map(|i| lin(a_range.0, a_range.1, n_a, i)).collect();
        let ln_z: Vec<T> = (0..n_z).map(|j| lin(z_range.0.ln(), z_range.1.ln(), n_z, j)).collect();
        let ln_v = (0..n_a * n_z)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / n_z, k % n_z);
                let v = rate(a[i], ln_z[j].exp())?;
                if !(v > T::zero() && v.is_finite()) {
                    return Err(Error::NonFinite { at: ln_z[j].exp().as_f64() });
                }
                Ok(v.ln())
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(Self { anchor, a, ln_z, ln_v })
    }

    pub fn anchor(&self) -> &[T] {
        &self.anchor
    }

    fn locate(grid: &[T], v: T, extrapolate_low: bool) -> (usize, T) {
        let n = grid.len();
        if n == 1 {
            return (0, T::zero());
        }
        let step = grid[1] - grid[0];
        let pos = (v - grid[0]) / step;
        let i = pos.floor().max(T::zero()).min(T::from_usize(n - 2).unwrap());
        let mut t = pos - i;
        if !(extrapolate_low && i == T::zero()) {
            t = t.max(T::zero());
        }
        (i.to_usize().unwrap(), t.min(T::one()))
    }

    /// Interpolated rate at `(a, z_d)`.
    pub fn eval_at(&self, a: T, zd: T) -> T {
        let nz = self.ln_z.len();
        let (i, s) = Self::locate(&self.a, a, false);
        let (j, t) = Self::locate(&self.ln_z, zd.ln(), true);
        let at = |ii: usize, jj: usize| self.ln_v[ii * nz + jj];
        let row = |ii: usize| at(ii, j) + t * (at(ii, j + 1) - at(ii, j));
        let v = if self.a.len() == 1 { row(0) } else { row(i) + s * (row(i + 1) - row(i)) };
        v.exp()
    }

    /// Interpolated rate at a point of the half-space.
    pub fn eval(&self, x: &[T]) -> T {
        let d = x.len();
        let a = x[..d - 1]
            .iter()
            .zip(self.anchor.iter())
            .map(|(u, v)| (*u - *v) * (*u - *v))
            .fold(T::zero(), |s, v| s + v)
            .sqrt();
        self.eval_at(a, x[d - 1])
    }
}

/// Tolerances for tabulated rates: relative only, since rates near the
/// boundary are tiny.
fn table_spec<T: Real>() -> QuadratureSpec<T> {
    QuadratureSpec {
        abs_tol: T::min_positive_value().sqrt(),
        rel_tol: T::lit(1e-7).max(T::lit(64.0) * T::epsilon()),
        ..QuadratureSpec::default()
    }
}

/// Grid resolution used by the table builders.
const TABLE_NA: usize = 25;
const TABLE_NZ: usize = 57;
/// Table covers `x_d ∈ [height · 2^{-14}, height]`.
const TABLE_DEPTH: f64 = 16384.0;

/// `∫_{region} J(z, y) dy` for `z` at horizontal distance `a` from the axis.
pub fn slab_rate<T: Real>(kernel: &TripleKernel<T>, region: &Region<T>, a: T, zd: T, spec: &QuadratureSpec<T>) -> Result<T> {
    let Region::Slab { half_width, lower, upper } = *region else {
        return Err(Error::Config("compensated rates are only tabulated for slab regions".into()));
    };
    let d = kernel.params().d;
    let nested = spec.nested();
    let column = |yd: T| -> Result<T> {
        if d == 1 {
            let u = (yd - zd).abs();
            return Ok(kernel.eval(zd, yd, u) * kernel.stable_density(u));
        }
        let w = half_width;
        let r = horizontal_shell(
            kernel,
            zd,
            yd,
            T::zero(),
            |rho| T::one() - outside_fraction(d, a / w, rho / w),
            &[(w - a).abs(), w + a],
            &nested,
        )?;
        Ok(r.value)
    };
    Ok(integrate_pieces(column, lower, upper, &[zd], spec)?.value)
}

/// Rate table for exits into a slab from `domain`.
pub fn slab_rate_table<T: Real>(kernel: &TripleKernel<T>, region: &Region<T>, domain: &BoxDomain<T>) -> Result<RateTable<T>> {
    let d = kernel.params().d;
    let spec = table_spec::<T>();
    let n_a = if d == 1 { 1 } else { TABLE_NA };
    RateTable::build(
        vec![T::zero(); d - 1],
        (T::zero(), domain.half_width),
        n_a,
        (domain.height / T::lit(TABLE_DEPTH), domain.height),
        TABLE_NZ,
        |a, z| slab_rate(kernel, region, a, z, &spec),
    )
}

/// The concentrated payoff `f_n(y) = K_n^{-1} y_d^{-β1} 1_{B(z0, 1/n)}(y)` at a
/// boundary point `z0` with `|z0| = distance`, and its compensating rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikePayoff<T> {
    pub n: usize,
    pub center: Vec<T>,
    pub k_n: T,
    beta1: T,
}

impl<T: Real> SpikePayoff<T> {
    /// `z0 = (distance, 0, …, 0)` on the boundary; needs `d ≥ 2`.
    pub fn new(params: &KernelParams<T>, n: usize, distance: T) -> Result<Self> {
        let d = params.d;
        if d < 2 {
            return Err(Error::Precondition("the concentrated payoff needs d ≥ 2".into()));
        }
        if n == 0 {
            return Err(Error::InvalidParams("n must be positive".into()));
        }
        let radius = T::one() / T::from_usize(n).unwrap();
        let s = params.beta[2] + params.beta[3];
        let vol = ball_volume::<T>(d - 1);
        let half = T::lit(0.5) * (T::from_usize(d).unwrap() - T::one());
        // K_n = ∫_{half-ball} |ln y_d|^{β3+β4} dy, by horizontal slices
        let k_n = integrate(
            |y: T| Ok(vol * (radius * radius - y * y).max(T::zero()).powf(half) * y.ln().abs().pow0(s)),
            T::zero(),
            radius,
            &table_spec::<T>(),
        )?
        .value;
        let mut center = vec![T::zero(); d];
        center[0] = distance;
        Ok(Self { n, center, k_n, beta1: params.beta[0] })
    }

    pub fn radius(&self) -> T {
        T::one() / T::from_usize(self.n).unwrap()
    }

    pub fn payoff(&self, y: &[T]) -> T {
        let d = y.len();
        let yd = y[d - 1];
        let dist = y.iter().zip(&self.center).map(|(a, b)| (*a - *b) * (*a - *b)).fold(T::zero(), |s, v| s + v).sqrt();
        if yd > T::zero() && dist < self.radius() {
            yd.pow0(-self.beta1) / self.k_n
        } else {
            T::zero()
        }
    }

    /// `∫ J(z, y) f_n(y) dy` for `z` at horizontal distance `a` from `z̃0`.
    pub fn rate(&self, kernel: &TripleKernel<T>, a: T, zd: T, spec: &QuadratureSpec<T>) -> Result<T> {
        let d = kernel.params().d;
        let r = self.radius();
        let nested = spec.nested();
        let b1 = self.beta1;
        let column = |yd: T| -> Result<T> {
            let ry = (r * r - yd * yd).max(T::zero()).sqrt();
            if ry == T::zero() {
                return Ok(T::zero());
            }
            let shell = horizontal_shell(
                kernel,
                zd,
                yd,
                (a - ry).max(T::zero()),
                |rho| T::one() - outside_fraction(d, a / ry, rho / ry),
                &[a + ry],
                &nested,
            )?;
            Ok(shell.value * yd.pow0(-b1))
        };
        Ok(integrate_pieces(column, T::zero(), r, &[zd], spec)?.value / self.k_n)
    }

    /// Rate table over a box lying at horizontal distance `> 1/n` from `z̃0`.
    pub fn rate_table(&self, kernel: &TripleKernel<T>, domain: &BoxDomain<T>) -> Result<RateTable<T>> {
        let spec = table_spec::<T>();
        let dist = self.center[0];
        let w = domain.half_width;
        if !(dist - w > self.radius()) {
            return Err(Error::Precondition("payoff ball must be separated from the box".into()));
        }
        RateTable::build(
            self.center[..self.center.len() - 1].to_vec(),
            (dist - w, dist + w),
            TABLE_NA,
            (domain.height / T::lit(TABLE_DEPTH), domain.height),
            TABLE_NZ,
            |a, z| self.rate(kernel, a, z, &spec),
        )
    }
}
