//! Numerical laboratory for stable-like jump processes on the half-space with
//! boundary-decaying jump kernels and critical killing.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`.

// comparisons are written so that NaN falls on the rejecting side
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constant;
pub mod error;
pub mod experiments;
pub mod kernel;
pub mod operator;
pub mod quadrature;
pub mod scalar;
pub mod simulator;

pub use constant::{c_constant, c_profile, inner_integrand, ConstantResult};
pub use error::{Error, Result};
pub use experiments::{
    bhp_failure, bhp_ratio, run, ExperimentKind, ExperimentOutput, ExperimentSpec, Options, ResultRow, SimSpec, Verdict,
};
pub use kernel::audit::{audit_assumption, AssumptionId, AuditReport, Auditor, Witness};
pub use kernel::{kappa, HalfSpacePoint, KernelParams, TripleKernel, Variant};
pub use operator::{
    lb, lb_alpha, lb_alpha_with_cutoff, NonlocalOperator, PVResult, SignCase, SignReport, TestFunction,
    UserFunction,
};
pub use quadrature::{Integral, QuadratureSpec};
pub use scalar::Real;
pub use simulator::{
    fit_exponent, sample_displacement, BoxDomain, Estimate, ExponentFit, PathOutcome, PathStatus, Probes,
    RateTable, Region, SimConfig, Simulator, SmallJumps, SpikePayoff, Weight,
};

pub type KernelParams64 = KernelParams<f64>;
pub type TripleKernel64 = TripleKernel<f64>;
pub type HalfSpacePoint64 = HalfSpacePoint<f64>;
pub type QuadratureSpec64 = QuadratureSpec<f64>;
pub type Auditor64 = Auditor<f64>;
pub type SimConfig64 = SimConfig<f64>;
pub type Simulator64 = Simulator<f64>;
