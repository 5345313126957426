//! Sampled checks of the structural assumptions on a boundary term.
//!
//! Every sample reduces to a single non-negative *ratio*: the left side of the
//! inequality divided by its right side (symmetric ratios for the identities).
//! A sample violates the predicate when the ratio exceeds `1 + slack`. Exact
//! predicates use a floating-point slack; predicates without an explicit
//! constant only record the worst ratio, which is then the empirical constant.
//!
//! Samples are drawn in chunks of [`CHUNK`] with one ChaCha stream per chunk, so
//! reports are identical whatever the number of worker threads.

use super::{KernelParams, TripleKernel, Variant};
use crate::error::{Error, Result};
use crate::scalar::{distance, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Samples per RNG stream.
pub const CHUNK: usize = 4096;
/// Witnesses kept per report (lowest sample indices first).
pub const MAX_WITNESSES: usize = 32;
/// Range of the log-uniform sampler for `(s, t, u)`.
pub const SAMPLE_RANGE: (f64, f64) = (1e-6, 1e2);
/// Relative slack for exact predicates in double precision.
pub const EXACT_SLACK: f64 = 1e-12;
/// Margin applied on top of grid-calibrated constants.
pub const CALIBRATION_MARGIN: f64 = 1.02;
/// `|y| ≤ M` bound used by the boundary-decay predicate.
pub const DECAY_RADIUS: f64 = 4.0;

/// Checkable predicate identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssumptionId {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
    B8,
    /// `B̂ ≥ B̃ ≥ 2^{-(β1∨β2)} B̂`.
    HatTilde,
    /// `B̂ / 2 ≤ B̄ ≤ B̂`.
    BarHat,
    /// `u ↦ A(s, t, u)` almost decreasing.
    Monotone,
    /// `B(x, y) ≤ C x_d^{β1} |ln x_d|^{β3} |x - y|^{-β1}` near the boundary.
    BoundaryDecay,
}

impl AssumptionId {
    pub const ALL: [AssumptionId; 12] = [
        AssumptionId::B1,
        AssumptionId::B2,
        AssumptionId::B3,
        AssumptionId::B4,
        AssumptionId::B5,
        AssumptionId::B6,
        AssumptionId::B7,
        AssumptionId::B8,
        AssumptionId::HatTilde,
        AssumptionId::BarHat,
        AssumptionId::Monotone,
        AssumptionId::BoundaryDecay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AssumptionId::B1 => "b1",
            AssumptionId::B2 => "b2",
            AssumptionId::B3 => "b3",
            AssumptionId::B4 => "b4",
            AssumptionId::B5 => "b5",
            AssumptionId::B6 => "b6",
            AssumptionId::B7 => "b7",
            AssumptionId::B8 => "b8",
            AssumptionId::HatTilde => "hat-tilde",
            AssumptionId::BarHat => "bar-hat",
            AssumptionId::Monotone => "monotone",
            AssumptionId::BoundaryDecay => "boundary-decay",
        }
    }
}

impl fmt::Display for AssumptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssumptionId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        AssumptionId::ALL
            .into_iter()
            .find(|id| id.as_str() == key)
            .ok_or_else(|| Error::UnknownAssumption(s.to_string()))
    }
}

/// One violating (or worst) sample, replayable through [`Auditor::evaluate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub index: u64,
    pub inputs: Vec<f64>,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub assumption: AssumptionId,
    pub variant: Variant,
    pub n_samples: usize,
    pub n_violations: usize,
    /// Largest observed ratio; for predicates without a reference constant this
    /// is the empirical constant.
    pub worst_ratio: f64,
    /// Constant the ratio is normalised by, when one is known.
    pub reference_constant: Option<f64>,
    pub worst: Option<Witness>,
    pub witnesses: Vec<Witness>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.n_violations == 0
    }
}

#[derive(Clone, Debug, Default)]
struct Accumulator {
    n_samples: usize,
    n_violations: usize,
    worst: Option<Witness>,
    witnesses: Vec<Witness>,
}

impl Accumulator {
    fn push(&mut self, w: Witness, violated: bool) {
        self.n_samples += 1;
        let replace = match &self.worst {
            None => true,
            Some(cur) => {
                w.ratio > cur.ratio || (w.ratio == cur.ratio && w.index < cur.index) || cur.ratio.is_nan()
            }
        };
        if violated {
            self.n_violations += 1;
            if self.witnesses.len() < MAX_WITNESSES {
                self.witnesses.push(w.clone());
            }
        }
        if replace {
            self.worst = Some(w);
        }
    }

    /// Associative and commutative merge.
    fn merge(mut self, other: Self) -> Self {
        self.n_samples += other.n_samples;
        self.n_violations += other.n_violations;
        self.worst = match (self.worst.take(), other.worst) {
            (None, b) => b,
            (a, None) => a,
            (Some(a), Some(b)) => {
                if b.ratio > a.ratio || (b.ratio == a.ratio && b.index < a.index) {
                    Some(b)
                } else {
                    Some(a)
                }
            }
        };
        self.witnesses.extend(other.witnesses);
        self.witnesses.sort_by_key(|w| w.index);
        self.witnesses.truncate(MAX_WITNESSES);
        self
    }
}

/// How the ratio of a predicate is judged.
#[derive(Clone, Copy, Debug)]
enum Threshold {
    /// Exact equality required.
    Exact,
    /// Violation when `ratio > 1 + slack`.
    Slack(f64),
    /// No reference constant: only the worst ratio is reported.
    Record,
}

/// Runs the sampled predicates for one kernel.
#[derive(Clone, Debug)]
pub struct Auditor<T> {
    kernel: TripleKernel<T>,
    tilde: TripleKernel<T>,
    hat: TripleKernel<T>,
    bar: TripleKernel<T>,
    slack: f64,
    monotone_constant: T,
    decay_constant: T,
}

impl<T: Real> Auditor<T> {
    pub fn new(kernel: TripleKernel<T>) -> Result<Self> {
        let params = *kernel.params();
        let with = |v: Variant| TripleKernel::new(KernelParams { variant: v, ..params });
        let slack = EXACT_SLACK.max(1e4 * T::epsilon().as_f64());
        Ok(Self {
            tilde: with(Variant::Tilde)?,
            hat: with(Variant::Hat)?,
            bar: with(Variant::Bar)?,
            monotone_constant: calibrate_monotone(&kernel),
            decay_constant: calibrate_boundary_decay(&kernel, T::lit(DECAY_RADIUS)),
            kernel,
            slack,
        })
    }

    pub fn kernel(&self) -> &TripleKernel<T> {
        &self.kernel
    }

    /// Grid-calibrated almost-monotonicity constant (before the margin).
    pub fn monotone_constant(&self) -> T {
        self.monotone_constant
    }

    /// Grid-calibrated boundary-decay constant (before the margin).
    pub fn decay_constant(&self) -> T {
        self.decay_constant
    }

    fn params(&self) -> &KernelParams<T> {
        self.kernel.params()
    }

    fn threshold(&self, id: AssumptionId) -> Threshold {
        match id {
            AssumptionId::B1 => Threshold::Exact,
            AssumptionId::B6 => Threshold::Record,
            _ => Threshold::Slack(self.slack),
        }
    }

    /// Constant the ratio of `id` is normalised by.
    pub fn reference_constant(&self, id: AssumptionId) -> Option<f64> {
        let p = self.params();
        let two_bmax = T::lit(2.0).powf(p.beta_max12());
        let v = match id {
            AssumptionId::B1 | AssumptionId::B8 | AssumptionId::HatTilde | AssumptionId::BarHat => {
                T::one()
            }
            AssumptionId::B2 => self.kernel.sup_bound(),
            AssumptionId::B3 | AssumptionId::B6 => return None,
            AssumptionId::B4 => T::one(),
            AssumptionId::B5 => {
                let base = T::lit(9.0).powf(p.beta_sum());
                base * match p.variant {
                    Variant::Tilde | Variant::Const => T::one(),
                    Variant::Hat => two_bmax,
                    Variant::Bar => T::lit(2.0) * two_bmax,
                }
            }
            AssumptionId::B7 => self.c7(),
            AssumptionId::Monotone => self.monotone_constant * T::lit(CALIBRATION_MARGIN),
            AssumptionId::BoundaryDecay => self.decay_constant * T::lit(CALIBRATION_MARGIN),
        };
        Some(v.as_f64())
    }

    fn c7(&self) -> T {
        let two_bmax = T::lit(2.0).powf(self.params().beta_max12());
        match self.params().variant {
            Variant::Tilde | Variant::Const => T::one(),
            Variant::Hat => two_bmax,
            Variant::Bar => two_bmax.max(T::lit(2.0)),
        }
    }

    /// `θ` of the Hölder-type diagonal estimate.
    pub fn b4_theta(&self) -> T {
        match self.params().variant {
            Variant::Bar => {
                let t = self.params().beta[0] + self.params().beta[1];
                if t > T::zero() {
                    t
                } else {
                    T::one()
                }
            }
            _ => T::one(),
        }
    }

    /// Runs `n_samples` checks of `id` from `seed`.
    pub fn audit(&self, id: AssumptionId, n_samples: usize, seed: u64) -> Result<AuditReport> {
        let n_chunks = n_samples.div_ceil(CHUNK);
        let threshold = self.threshold(id);
        let acc = (0..n_chunks)
            .into_par_iter()
            .map(|chunk| -> Result<Accumulator> {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(chunk as u64);
                let start = chunk * CHUNK;
                let end = (start + CHUNK).min(n_samples);
                let mut acc = Accumulator::default();
                for index in start..end {
                    let inputs = self.draw(id, &mut rng);
                    let ratio = self.evaluate(id, &inputs)?;
                    let violated = match threshold {
                        Threshold::Exact => ratio != 1.0,
                        Threshold::Slack(s) => !(ratio <= 1.0 + s),
                        Threshold::Record => false,
                    };
                    acc.push(
                        Witness {
                            index: index as u64,
                            inputs,
                            ratio,
                        },
                        violated,
                    );
                }
                Ok(acc)
            })
            .try_reduce(Accumulator::default, |a, b| Ok(a.merge(b)))?;
        Ok(AuditReport {
            assumption: id,
            variant: self.params().variant,
            n_samples: acc.n_samples,
            n_violations: acc.n_violations,
            worst_ratio: acc.worst.as_ref().map_or(0.0, |w| w.ratio),
            reference_constant: self.reference_constant(id),
            worst: acc.worst,
            witnesses: acc.witnesses,
        })
    }

    /// Ratio of predicate `id` at a recorded input vector.
    pub fn evaluate(&self, id: AssumptionId, inputs: &[f64]) -> Result<f64> {
        let d = self.params().d;
        let x: Vec<T> = inputs.iter().map(|&v| T::lit(v)).collect();
        let need = |n: usize| -> Result<()> {
            if x.len() == n {
                Ok(())
            } else {
                Err(Error::Domain(format!(
                    "{id} expects {n} inputs, got {}",
                    x.len()
                )))
            }
        };
        let k = &self.kernel;
        let r = match id {
            AssumptionId::B1 => {
                need(3)?;
                sym_ratio(k.eval(x[0], x[1], x[2]), k.eval(x[1], x[0], x[2]))
            }
            AssumptionId::B2 => {
                need(3)?;
                (k.ln_eval(x[0], x[1], x[2]) - k.sup_bound().ln()).exp()
            }
            AssumptionId::B3 => {
                need(4)?;
                let p = self.params();
                let mut ln_c3 = self.tilde.diagonal().ln() + (p.beta[0] + p.beta[1]) * x[3].ln();
                if p.variant == Variant::Bar {
                    ln_c3 = ln_c3 - T::lit(2.0).ln();
                }
                (ln_c3 - k.ln_eval(x[0], x[1], x[2])).exp()
            }
            AssumptionId::B4 => {
                need(3)?;
                let (s, t, u) = (x[0], x[1], x[2]);
                let gap = (k.diagonal() - k.eval(s, t, u)).abs();
                let bound = (u / s.min(t)).powf(self.b4_theta());
                gap / bound
            }
            AssumptionId::B5 => {
                need(3 * d + 1)?;
                let (x1, rest) = x.split_at(d);
                let (x2, rest) = rest.split_at(d);
                let z = &rest[..d];
                let c5 = T::lit(self.reference_constant(id).unwrap());
                (self.ln_b(x1, z) - self.ln_b(x2, z) - c5.ln()).exp()
            }
            AssumptionId::B6 => {
                need(3 * d + 1)?;
                let (px, rest) = x.split_at(d);
                let (py, rest) = rest.split_at(d);
                let (pz, m) = rest.split_at(d);
                let exponent = self.params().beta[0] + self.params().beta[1];
                (self.ln_b(px, py) - self.ln_b(pz, py) - exponent * m[0].ln()).exp()
            }
            AssumptionId::B7 => {
                need(3)?;
                let diff = k.ln_eval(x[0], x[1], x[2]) - self.tilde.ln_eval(x[0], x[1], x[2]);
                (diff.abs() - self.c7().ln()).exp()
            }
            AssumptionId::B8 => {
                need(3 * d)?;
                let (px, rest) = x.split_at(d);
                let (py, rest) = rest.split_at(d);
                let (shift, a) = rest.split_at(d - 1);
                let a = a[0];
                let base = self.b_raw(px, py);
                let scaled = self.b_raw(
                    &px.iter().map(|&c| a * c).collect::<Vec<_>>(),
                    &py.iter().map(|&c| a * c).collect::<Vec<_>>(),
                );
                let mut ratio = sym_ratio(base, scaled);
                if d > 1 {
                    let shifted = |p: &[T]| -> Vec<T> {
                        p.iter()
                            .enumerate()
                            .map(|(i, &c)| if i + 1 < d { c + shift[i] } else { c })
                            .collect()
                    };
                    let moved = self.b_raw(&shifted(px), &shifted(py));
                    ratio = ratio.max(sym_ratio(base, moved));
                }
                ratio
            }
            AssumptionId::HatTilde => {
                need(3)?;
                let lt = self.tilde.ln_eval(x[0], x[1], x[2]);
                let lh = self.hat.ln_eval(x[0], x[1], x[2]);
                let lower = lh - self.params().beta_max12() * T::lit(2.0).ln();
                ((lt - lh).max(lower - lt)).exp()
            }
            AssumptionId::BarHat => {
                need(3)?;
                let lb = self.bar.ln_eval(x[0], x[1], x[2]);
                let lh = self.hat.ln_eval(x[0], x[1], x[2]);
                ((lb - lh).max(lh - T::lit(2.0).ln() - lb)).exp()
            }
            AssumptionId::Monotone => {
                need(4)?;
                let c = T::lit(self.reference_constant(id).unwrap());
                (k.ln_eval(x[0], x[1], x[3]) - k.ln_eval(x[0], x[1], x[2]) - c.ln()).exp()
            }
            AssumptionId::BoundaryDecay => {
                need(3)?;
                let c = T::lit(self.reference_constant(id).unwrap());
                (k.ln_eval(x[0], x[1], x[2]) - ln_decay_profile(self.params(), x[0], x[2]) - c.ln())
                    .exp()
            }
        };
        Ok(r.as_f64())
    }

    fn b_raw(&self, x: &[T], y: &[T]) -> T {
        self.kernel
            .eval(*x.last().unwrap(), *y.last().unwrap(), distance(x, y))
    }

    fn ln_b(&self, x: &[T], y: &[T]) -> T {
        self.kernel
            .ln_eval(*x.last().unwrap(), *y.last().unwrap(), distance(x, y))
    }

    /// Draws one admissible input vector for `id`.
    fn draw(&self, id: AssumptionId, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = self.params().d;
        match id {
            AssumptionId::B1
            | AssumptionId::B2
            | AssumptionId::B7
            | AssumptionId::HatTilde
            | AssumptionId::BarHat => {
                let (s, t, u) = draw_triple(rng, d);
                vec![s, t, u]
            }
            AssumptionId::B3 => loop {
                let (s, t, u) = draw_triple(rng, d);
                let a = log_uniform(rng, 1e-3, 1.0);
                if s.min(t) >= a * u {
                    break vec![s, t, u, a];
                }
            },
            AssumptionId::B4 => loop {
                let m = log_uniform(rng, SAMPLE_RANGE.0, SAMPLE_RANGE.1);
                let big = m * 2f64.powf(rng.random::<f64>());
                let (s, t) = if rng.random::<bool>() { (m, big) } else { (big, m) };
                let gap = big - m;
                let u = if d == 1 {
                    gap
                } else {
                    log_uniform(rng, gap.max(m * 1e-6), m)
                };
                if u > 0.0 && u <= m {
                    break vec![s, t, u];
                }
            },
            AssumptionId::B5 => loop {
                let eps = rng.random_range(0.05..0.95);
                let h = log_uniform(rng, SAMPLE_RANGE.0, SAMPLE_RANGE.1);
                let r = h / (1.0 + eps) * rng.random_range(0.01..1.0);
                let mut x0 = vec![0.0; d];
                x0[d - 1] = h;
                let x1 = add(&x0, &scale(&uniform_in_ball(rng, d), r));
                let x2 = add(&x0, &scale(&uniform_in_ball(rng, d), r));
                let rho = (1.0 + eps) * r * log_uniform(rng, 1.0, 1e4);
                let z = add(&x0, &scale(&unit_vector(rng, d), rho));
                if x1[d - 1] > 0.0 && x2[d - 1] > 0.0 && z[d - 1] > 0.0 && x1 != z && x2 != z {
                    let mut v = x1;
                    v.extend(x2);
                    v.extend(z);
                    v.push(eps);
                    break v;
                }
            },
            AssumptionId::B6 => loop {
                let mut y = vec![0.0; d];
                y[d - 1] = log_uniform(rng, SAMPLE_RANGE.0, SAMPLE_RANGE.1);
                let len = log_uniform(rng, SAMPLE_RANGE.0, SAMPLE_RANGE.1);
                let x = add(&y, &scale(&unit_vector(rng, d), len));
                let m = log_uniform(rng, 1.0, 1e3);
                let rho = log_uniform(rng, SAMPLE_RANGE.0.min(m * len), m * len);
                let z = add(&y, &scale(&unit_vector(rng, d), rho));
                if x[d - 1] > 0.0 && z[d - 1] >= x[d - 1] && distance(&y, &z) <= m * distance(&y, &x) {
                    let mut v = x;
                    v.extend(y);
                    v.extend(z);
                    v.push(m);
                    break v;
                }
            },
            AssumptionId::B8 => {
                let (s, t, u) = draw_triple(rng, d);
                let mut x = vec![0.0; d];
                x[d - 1] = s;
                let mut y = vec![0.0; d];
                y[d - 1] = t;
                if d > 1 {
                    let horiz = (u * u - (s - t) * (s - t)).max(0.0).sqrt();
                    let dir = unit_vector(rng, d - 1);
                    for i in 0..d - 1 {
                        y[i] = horiz * dir[i];
                    }
                }
                let mut v = x;
                v.extend(y);
                for _ in 0..d - 1 {
                    v.push(u * rng.random_range(-1.0..1.0));
                }
                v.push(log_uniform(rng, 1e-3, 1e3));
                v
            }
            AssumptionId::Monotone => {
                let (s, t, u1) = draw_triple(rng, 2);
                let u2 = u1 * log_uniform(rng, 1.0, 1e4);
                vec![s, t, u1, u2]
            }
            AssumptionId::BoundaryDecay => loop {
                let xd = log_uniform(rng, SAMPLE_RANGE.0, (-1f64).exp());
                let yd = log_uniform(rng, SAMPLE_RANGE.0, DECAY_RADIUS);
                let gap = (xd - yd).abs();
                let lo = xd.max(gap);
                let u = if d == 1 {
                    gap
                } else {
                    log_uniform(rng, lo, DECAY_RADIUS + xd)
                };
                let horiz2 = u * u - gap * gap;
                if u >= lo && horiz2 + yd * yd <= DECAY_RADIUS * DECAY_RADIUS {
                    break vec![xd, yd, u];
                }
            },
        }
    }
}

#[inline]
fn sym_ratio<T: Real>(a: T, b: T) -> T {
    if a == b {
        T::one()
    } else {
        (a / b).max(b / a)
    }
}

/// `ln(x_d^{β1} |ln x_d|^{β3} u^{-β1})`.
fn ln_decay_profile<T: Real>(p: &KernelParams<T>, xd: T, u: T) -> T {
    let [b1, _, b3, _] = p.beta;
    let mut v = T::zero();
    if b1 != T::zero() {
        v = v + b1 * (xd.ln() - u.ln());
    }
    if b3 != T::zero() {
        v = v + b3 * xd.ln().abs().ln();
    }
    v
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Log-uniform `(s, t, u)` on the sample range, conditioned on being realised
/// by two points of `R^d_+` (`u ≥ |s - t|`, and `u = |s - t|` on the line).
fn draw_triple(rng: &mut ChaCha8Rng, d: usize) -> (f64, f64, f64) {
    let (lo, hi) = SAMPLE_RANGE;
    loop {
        let s = log_uniform(rng, lo, hi);
        let t = log_uniform(rng, lo, hi);
        if d == 1 {
            let u = (s - t).abs();
            if u > 0.0 {
                return (s, t, u);
            }
            continue;
        }
        let u = log_uniform(rng, lo, hi);
        if u >= (s - t).abs() {
            return (s, t, u);
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let r = rng.random::<f64>().powf(1.0 / d as f64);
    scale(&unit_vector(rng, d), r)
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn scale(a: &[f64], k: f64) -> Vec<f64> {
    a.iter().map(|x| x * k).collect()
}

fn log_grid<T: Real>(lo: f64, hi: f64, n: usize) -> Vec<T> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| T::lit((a + (b - a) * i as f64 / (n - 1) as f64).exp()))
        .collect()
}

/// `sup_{u1 < u2} A(s, t, u2) / A(s, t, u1)` over a log grid, by scale
/// invariance restricted to `s = 1 ≥ t`.
pub fn calibrate_monotone<T: Real>(kernel: &TripleKernel<T>) -> T {
    let taus = log_grid::<T>(1e-6, 1.0, 241);
    let us = log_grid::<T>(1e-7, 1e7, 1401);
    taus.par_iter()
        .map(|&tau| {
            let mut best = T::one();
            let mut min_ln = T::infinity();
            for &u in &us {
                if u < (T::one() - tau).abs() {
                    continue;
                }
                let v = kernel.ln_eval(T::one(), tau, u);
                if v < min_ln {
                    min_ln = v;
                }
                best = best.max((v - min_ln).exp());
            }
            best
        })
        .reduce(T::one, T::max)
}

/// Smallest `C` with `A ≤ C x_d^{β1} |ln x_d|^{β3} u^{-β1}` on a log grid of the
/// region `u ≥ x_d`, `x_d ≤ e^{-1}`, `|y| ≤ radius` (with `x = (0̃, x_d)`).
pub fn calibrate_boundary_decay<T: Real>(kernel: &TripleKernel<T>, radius: T) -> T {
    let d = kernel.params().d;
    let r = radius.as_f64();
    let xds = log_grid::<T>(1e-7, (-1f64).exp(), 81);
    let yds = log_grid::<T>(1e-7, r, 121);
    let us = log_grid::<T>(1e-7, 2.0 * r, 201);
    xds.par_iter()
        .map(|&xd| {
            let mut best = T::zero();
            for &yd in &yds {
                let gap = (xd - yd).abs();
                let mut visit = |u: T| {
                    if u < xd || u < gap {
                        return;
                    }
                    if u * u - gap * gap + yd * yd > radius * radius {
                        return;
                    }
                    let v = kernel.ln_eval(xd, yd, u) - ln_decay_profile(kernel.params(), xd, u);
                    best = best.max(v.exp());
                };
                if d == 1 {
                    visit(gap);
                } else {
                    visit(xd.max(gap));
                    for &u in &us {
                        visit(u);
                    }
                }
            }
            best
        })
        .reduce(T::zero, T::max)
}

/// Convenience wrapper: audit `id` on a fresh [`Auditor`].
pub fn audit_assumption<T: Real>(
    id: AssumptionId,
    kernel: &TripleKernel<T>,
    n_samples: usize,
    seed: u64,
) -> Result<AuditReport> {
    Auditor::new(*kernel)?.audit(id, n_samples, seed)
}

/// Re-checks every witness of a report; returns the replayed ratios.
pub fn replay_witnesses<T: Real>(auditor: &Auditor<T>, report: &AuditReport) -> Result<Vec<f64>> {
    report
        .witnesses
        .iter()
        .chain(report.worst.iter())
        .map(|w| auditor.evaluate(report.assumption, &w.inputs))
        .collect()
}
