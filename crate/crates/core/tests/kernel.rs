use bhplab::{kappa, HalfSpacePoint64, KernelParams64, TripleKernel64, Variant};
use proptest::prelude::*;

fn kernel(d: usize, alpha: f64, beta: [f64; 4], variant: Variant, p: f64) -> TripleKernel64 {
    TripleKernel64::new(KernelParams64::new(d, alpha, beta, variant, p).unwrap()).unwrap()
}

fn point(c: &[f64]) -> HalfSpacePoint64 {
    HalfSpacePoint64::new(c.to_vec()).unwrap()
}

#[test]
fn degenerate_tilde_is_one() {
    let k = kernel(2, 1.0, [0.0; 4], Variant::Tilde, 0.5);
    for (s, t, u) in [(1.0, 2.0, 3.0), (1e-5, 10.0, 1e-3), (0.3, 0.3, 50.0)] {
        assert_eq!(k.eval(s, t, u), 1.0);
    }
}

#[test]
fn hand_substituted_values() {
    let k = kernel(2, 1.0, [1.0, 0.0, 0.0, 0.0], Variant::Tilde, 1.0);
    assert!((k.eval(1.0, 2.0, 4.0) - 0.25).abs() < 1e-15);

    let tilde = kernel(2, 1.0, [1.0, 1.0, 0.0, 0.0], Variant::Tilde, 1.0);
    let hat = kernel(2, 1.0, [1.0, 1.0, 0.0, 0.0], Variant::Hat, 1.0);
    let (t, h) = (tilde.eval(1.0, 3.0, 2.0), hat.eval(1.0, 3.0, 2.0));
    assert!((t - 0.5).abs() < 1e-15);
    assert!((h - 0.75).abs() < 1e-15);
    assert!(h >= t && t >= 0.5 * h);
}

#[test]
fn diagonal_uses_log_limit() {
    let k = kernel(2, 1.0, [1.0, 0.0, 1.0, 0.0], Variant::Tilde, 1.0);
    let x = point(&[0.2, 0.7]);
    let b = k.b_eval(&x, &x).unwrap();
    assert!((b - std::f64::consts::LN_2).abs() < 1e-15, "{b}");
    assert!((k.eval(0.7, 0.7, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn one_dimensional_jump_kernel() {
    let c = kernel(1, 1.0, [0.0; 4], Variant::Const, 0.5);
    assert!((c.jump_kernel(&point(&[1.0]), &point(&[2.0])).unwrap() - 1.0).abs() < 1e-15);
    let t = kernel(1, 1.0, [1.0, 0.0, 0.0, 0.0], Variant::Tilde, 1.0);
    assert!((t.jump_kernel(&point(&[1.0]), &point(&[2.0])).unwrap() - 1.0).abs() < 1e-15);
    // |x - y| = 3: boundary factor 1/3, distance factor 3^{-2}
    let v = t.jump_kernel(&point(&[1.0]), &point(&[4.0])).unwrap();
    assert!((v - 1.0 / 27.0).abs() < 1e-15);
}

#[test]
fn kappa_examples() {
    let edge = KernelParams64::constant(1, 1.5, 0.5).unwrap();
    assert_eq!(kappa(&edge, 0.0, &point(&[0.3])).unwrap(), 0.0);

    let p = KernelParams64::constant(1, 1.0, 0.5).unwrap();
    assert!((kappa(&p, 1.0, &point(&[2.0])).unwrap() - 0.5).abs() < 1e-15);

    let p2 = KernelParams64::new(3, 0.7, [0.5, 0.2, 0.0, 0.0], Variant::Bar, 0.6).unwrap();
    let x = point(&[0.1, -0.3, 0.4]);
    let x2 = point(&[0.2, -0.6, 0.8]);
    let ratio = kappa(&p2, 1.3, &x2).unwrap() / kappa(&p2, 1.3, &x).unwrap();
    assert!((ratio - 2f64.powf(-0.7)).abs() < 1e-14);
}

#[test]
fn invalid_parameters_rejected() {
    assert!(KernelParams64::new(2, 2.0, [0.0; 4], Variant::Tilde, 1.0).is_err());
    assert!(KernelParams64::new(2, 1.0, [0.0, 0.0, 1.0, 0.0], Variant::Tilde, 0.5).is_err());
    assert!(KernelParams64::new(2, 1.0, [1.0, 0.0, 0.0, 1.0], Variant::Tilde, 0.5).is_err());
    assert!(KernelParams64::new(2, 1.0, [1.0, 0.0, 0.0, 0.0], Variant::Tilde, 2.0).is_err());
    assert!(KernelParams64::new(2, 1.5, [1.0, 0.0, 0.0, 0.0], Variant::Tilde, 0.4).is_err());
    assert!(HalfSpacePoint64::new(vec![0.0, 0.0]).is_err());
}

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Tilde), Just(Variant::Hat), Just(Variant::Bar), Just(Variant::Const)]
}

prop_compose! {
    fn any_kernel()(v in variant(), b1 in 0.0..2.5f64, b2 in 0.0..2.5f64,
                    l3 in prop::bool::ANY, l4 in prop::bool::ANY,
                    b3 in 0.0..2.0f64, b4 in 0.0..2.0f64, alpha in 0.05..1.95f64, d in 1usize..4)
        -> TripleKernel64 {
        let beta = if v == Variant::Const {
            [0.0; 4]
        } else {
            [b1, b2, if l3 && b1 > 0.0 { b3 } else { 0.0 }, if l4 && b2 > 0.0 { b4 } else { 0.0 }]
        };
        let lower = (alpha - 1.0).max(0.0);
        let p = lower + 0.5 * (alpha + beta[0] - lower).min(1.0);
        kernel(d, alpha, beta, v, p)
    }
}

fn log_uniform() -> impl Strategy<Value = f64> {
    (-6.0..2.0f64).prop_map(|e| 10f64.powf(e))
}

/// `(δ(x), δ(y), |x - y|)` realisable by two points: `u ≥ |s - t|`.
fn triple() -> impl Strategy<Value = (f64, f64, f64)> {
    (log_uniform(), log_uniform(), log_uniform()).prop_map(|(s, t, u)| (s, t, u.max((s - t).abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn symmetric_bit_for_bit(k in any_kernel(), s in log_uniform(), t in log_uniform(), u in log_uniform()) {
        prop_assert_eq!(k.eval(s, t, u).to_bits(), k.eval(t, s, u).to_bits());
    }

    #[test]
    fn scale_invariant(k in any_kernel(), s in log_uniform(), t in log_uniform(), u in log_uniform(),
                       a in (-3.0..3.0f64).prop_map(|e| 10f64.powf(e))) {
        let v = k.eval(s, t, u);
        let w = k.eval(a * s, a * t, a * u);
        prop_assert!((v - w).abs() <= 1e-12 * v.abs(), "{} vs {}", v, w);
    }

    #[test]
    fn positive(k in any_kernel(), (s, t, u) in triple()) {
        let v = k.eval(s, t, u);
        prop_assert!(v > 0.0 && v.is_finite());
        prop_assert!(v <= k.sup_bound() * (1.0 + 1e-12));
    }

    #[test]
    fn sandwiches(b1 in 0.0..2.5f64, b2 in 0.0..2.5f64, b3 in 0.0..1.0f64,
                  (s, t, u) in triple()) {
        let beta = [b1, b2, if b1 > 0.0 { b3 } else { 0.0 }, 0.0];
        let p = 0.5 * (1.0 + b1).min(1.5);
        let tilde = kernel(2, 1.0, beta, Variant::Tilde, p).eval(s, t, u);
        let hat = kernel(2, 1.0, beta, Variant::Hat, p).eval(s, t, u);
        let bar = kernel(2, 1.0, beta, Variant::Bar, p).eval(s, t, u);
        let slack = 1.0 + 1e-12;
        prop_assert!(tilde <= hat * slack);
        prop_assert!(tilde * slack >= 2f64.powf(-b1.max(b2)) * hat);
        prop_assert!(bar <= hat * slack);
        prop_assert!(bar * slack >= 0.5 * hat);
    }

    #[test]
    fn jump_kernel_symmetric_and_translation_invariant(
        k in any_kernel(),
        x in prop::collection::vec(-2.0..2.0f64, 3), y in prop::collection::vec(-2.0..2.0f64, 3),
        shift in prop::collection::vec(-5.0..5.0f64, 2),
    ) {
        let d = k.params().d;
        let mut xc: Vec<f64> = x[..d].to_vec();
        let mut yc: Vec<f64> = y[..d].to_vec();
        xc[d - 1] = xc[d - 1].abs() + 1e-3;
        yc[d - 1] = yc[d - 1].abs() + 2e-3;
        let (px, py) = (point(&xc), point(&yc));
        let a = k.jump_kernel(&px, &py).unwrap();
        prop_assert_eq!(a, k.jump_kernel(&py, &px).unwrap());
        for i in 0..d - 1 {
            xc[i] += shift[i];
            yc[i] += shift[i];
        }
        let b = k.jump_kernel(&point(&xc), &point(&yc)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a, "{} vs {}", a, b);
    }
}
