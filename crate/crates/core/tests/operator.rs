use bhplab::{
    c_constant, lb, lb_alpha, lb_alpha_with_cutoff, Error, HalfSpacePoint64, KernelParams64, NonlocalOperator, QuadratureSpec64,
    SignCase, TestFunction, TripleKernel64, UserFunction, Variant,
};
use proptest::prelude::*;

fn spec() -> QuadratureSpec64 {
    QuadratureSpec64::default()
}

fn axis(d: usize, h: f64) -> HalfSpacePoint64 {
    HalfSpacePoint64::on_axis(d, h).unwrap()
}

fn tilde11() -> KernelParams64 {
    KernelParams64::new(2, 1.0, [1.0, 1.0, 0.0, 0.0], Variant::Tilde, 1.0).unwrap()
}

#[test]
fn constant_function_is_annihilated() {
    let k = TripleKernel64::new(tilde11()).unwrap();
    let r = lb_alpha(&k, &TestFunction::Const(3.0), &axis(2, 0.4), &spec()).unwrap();
    assert_eq!(r.value, 0.0);
}

#[test]
fn closed_form_power_one_dimensional() {
    let p = KernelParams64::constant(1, 1.0, 0.5).unwrap();
    let k = TripleKernel64::new(p).unwrap();
    let g = TestFunction::PowerG(0.5);
    let at1 = lb_alpha(&k, &g, &axis(1, 1.0), &spec()).unwrap().value;
    assert!((at1 - 1.0).abs() < 1e-6, "{at1}");
    let at2 = lb_alpha(&k, &g, &axis(1, 2.0), &spec()).unwrap().value;
    assert!((at2 / at1 - 2f64.powf(-0.5)).abs() < 1e-6);
}

#[test]
fn killed_operator_examples() {
    let params = tilde11();
    let op = NonlocalOperator::new(params, spec()).unwrap();
    let c = op.constant().value;
    let at1 = op.lb(&TestFunction::Const(1.0), &axis(2, 1.0)).unwrap();
    assert!((at1.value + c).abs() < 1e-12);
    for h in [0.05, 0.3, 1.0, 3.0] {
        let r = op.lb(&TestFunction::PowerG(1.0), &axis(2, h)).unwrap();
        assert!(r.value.abs() <= 1e-5 * c, "L g_p({h}) = {}", r.value);
    }
}

#[test]
fn residual_examples_and_edge_guard() {
    let op = NonlocalOperator::new(KernelParams64::constant(1, 1.0, 0.5).unwrap(), spec()).unwrap();
    let samples: Vec<_> = [0.25, 1.0, 4.0].iter().map(|&h| axis(1, h)).collect();
    assert!(op.residual_gp(&samples).unwrap() <= 1e-3);

    let op2 = NonlocalOperator::new(tilde11(), spec()).unwrap();
    let samples2 = vec![
        axis(2, 0.1),
        HalfSpacePoint64::new(vec![0.7, 0.5]).unwrap(),
        HalfSpacePoint64::new(vec![-3.0, 2.0]).unwrap(),
    ];
    assert!(op2.residual_gp(&samples2).unwrap() <= 1e-3);

    let edge = KernelParams64::new(2, 1.5, [1.0, 0.0, 0.0, 0.0], Variant::Hat, 0.5).unwrap();
    let op3 = NonlocalOperator::new(edge, spec()).unwrap();
    assert!(matches!(op3.residual_gp(&[axis(2, 0.5)]), Err(Error::Domain(_))));
}

#[test]
fn h_at_p_is_non_positive_and_bounded() {
    let params = tilde11();
    let op = NonlocalOperator::new(params, spec()).unwrap();
    let mut ratios = Vec::new();
    for zd in [0.01, 0.02, 0.05, 0.1, 0.2] {
        let r = op.lb(&TestFunction::PowerH(1.0), &axis(2, zd)).unwrap();
        assert!(r.value <= r.error_estimate, "L h_p({zd}) = {}", r.value);
        ratios.push(-r.value / zd);
    }
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi.is_finite() && hi <= 10.0 * lo.max(1e-12) + 10.0, "{ratios:?}");

    let rep = op.sign_check_hq(1.0, &[axis(2, 0.05), axis(2, 0.2)]).unwrap();
    assert_eq!(rep.case, SignCase::Equal);
    assert!(rep.passed());
}

#[test]
fn sign_regimes_for_hat_kernel() {
    let params = KernelParams64::new(2, 0.8, [1.0, 0.5, 0.0, 0.0], Variant::Hat, 1.0).unwrap();
    let op = NonlocalOperator::new(params, spec()).unwrap();
    let samples: Vec<_> = [0.0, 0.3]
        .iter()
        .flat_map(|&x1| [0.01, 0.05, 0.2].map(|zd| HalfSpacePoint64::new(vec![x1, zd]).unwrap()))
        .collect();
    let below = op.sign_check_hq(0.5, &samples).unwrap();
    assert_eq!(below.case, SignCase::Below);
    assert!(below.passed(), "{:?}", below.violations());
    let above = op.sign_check_hq(1.4, &samples).unwrap();
    assert_eq!(above.case, SignCase::Above);
    assert!(above.r0.is_some());
    assert!(above.passed(), "{:?}", above.violations());
    assert!(above.n_in_scope() > 0);
}

#[test]
fn h_too_close_to_box_boundary() {
    let op = NonlocalOperator::new(tilde11(), spec()).unwrap();
    let z = HalfSpacePoint64::new(vec![0.0, 0.97]).unwrap();
    assert!(op.lb(&TestFunction::PowerH(0.5), &z).is_err());
}

#[test]
fn horizontal_translation() {
    let params = KernelParams64::new(2, 1.2, [0.5, 0.8, 0.0, 0.0], Variant::Bar, 0.9).unwrap();
    let k = TripleKernel64::new(params).unwrap();
    let c = c_constant(&params, &spec()).unwrap();
    let bump = |shift: f64| {
        let f = move |y: &[f64]| y[1] * (-((y[0] - shift).powi(2) + y[1] * y[1])).exp();
        TestFunction::User(UserFunction::new(f, 2.0, 6.0).unwrap())
    };
    let base = lb(&k, &c, &bump(0.0), &HalfSpacePoint64::new(vec![0.1, 0.6]).unwrap(), &spec()).unwrap();
    for a in [-2.5, 0.75, 4.0] {
        let moved = lb(&k, &c, &bump(a), &HalfSpacePoint64::new(vec![0.1 + a, 0.6]).unwrap(), &spec()).unwrap();
        let tol = base.error_estimate + moved.error_estimate + 1e-9;
        assert!((base.value - moved.value).abs() <= tol, "{} vs {}", base.value, moved.value);
    }
}

#[test]
fn halving_the_cutoff_user_function() {
    let params = tilde11();
    let k = TripleKernel64::new(params).unwrap();
    let f = TestFunction::User(UserFunction::new(|y: &[f64]| y[1] * (1.0 + 0.5 * y[0]) * (-(y[0] - 0.3).powi(2) - y[1] * y[1]).exp(), 3.0, 10.0).unwrap());
    let x = HalfSpacePoint64::new(vec![0.2, 0.4]).unwrap();
    let a = lb_alpha_with_cutoff(&k, &f, &x, 0.1, &spec()).unwrap();
    let b = lb_alpha_with_cutoff(&k, &f, &x, 0.05, &spec()).unwrap();
    assert!((a.value - b.value).abs() < a.error_estimate.max(b.error_estimate), "{a:?} {b:?}");
}

fn params_strategy() -> impl Strategy<Value = KernelParams64> {
    (
        1usize..=2,
        0.3..1.7f64,
        prop_oneof![Just(Variant::Tilde), Just(Variant::Hat), Just(Variant::Bar), Just(Variant::Const)],
        0.0..1.5f64,
        0.0..1.5f64,
        0.1..0.9f64,
    )
        .prop_map(|(d, alpha, v, b1, b2, frac)| {
            let mut beta = if v == Variant::Const { [0.0; 4] } else { [b1, b2, 0.0, 0.0] };
            // pairing needs 1 + θ > α for BAR, θ = β1 + β2
            if v == Variant::Bar && 1.0 + b1 + b2 <= alpha + 0.1 {
                beta[1] = alpha + 0.1 - b1;
            }
            let lower = (alpha - 1.0f64).max(0.0);
            let p = lower + frac * (alpha + beta[0] - lower);
            KernelParams64::new(d, alpha, beta, v, p).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn power_identity_for_generic_exponent(params in params_strategy(), frac in 0.1..0.9f64, h in 0.05..5.0f64) {
        let lower = params.p_lower();
        let q = lower + frac * (params.p_upper() - lower);
        let k = TripleKernel64::new(params).unwrap();
        let lhs = lb_alpha(&k, &TestFunction::PowerG(q), &axis(params.d, h), &spec()).unwrap().value;
        let cq = c_constant(&params.with_p(q).unwrap(), &spec()).unwrap().value;
        let rhs = cq * h.powf(q - params.alpha);
        prop_assert!((lhs - rhs).abs() <= 1e-3 * rhs.abs(), "q = {}: {} vs {}", q, lhs, rhs);
    }

    #[test]
    fn homogeneity(params in params_strategy(), lambda in 0.1..10.0f64, h in 0.05..2.0f64) {
        let k = TripleKernel64::new(params).unwrap();
        let g = TestFunction::PowerG(params.p);
        let a = lb_alpha(&k, &g, &axis(params.d, h), &spec()).unwrap();
        let b = lb_alpha(&k, &g, &axis(params.d, lambda * h), &spec()).unwrap();
        let scale = lambda.powf(params.p - params.alpha);
        let tol = 1e-3 * (scale * a.value).abs() + scale * a.error_estimate + b.error_estimate;
        prop_assert!((b.value - scale * a.value).abs() <= tol, "{} vs {}", b.value, scale * a.value);
    }

    #[test]
    fn halving_the_cutoff(params in params_strategy(), h in 0.05..3.0f64, frac in 0.05..0.9f64) {
        let k = TripleKernel64::new(params).unwrap();
        let g = TestFunction::PowerG(params.p);
        let x = axis(params.d, h);
        let eps = frac * 0.5 * h;
        let a = lb_alpha_with_cutoff(&k, &g, &x, eps, &spec()).unwrap();
        let b = lb_alpha_with_cutoff(&k, &g, &x, 0.5 * eps, &spec()).unwrap();
        prop_assert!((a.value - b.value).abs() < a.error_estimate.max(b.error_estimate),
                     "{:?} vs {:?}", a, b);
    }
}
