use redei_core::divisor::{
    enumerate_s_r, is_comfortably_spaced, poisson_order_stat_sim, ramanujan_approx, ramanujan_i, RegularityRange,
    SpacingConfig,
};
use redei_core::fl::Modulus;

const F3: Modulus = Modulus::of(3);
const STEP: f64 = 1.0 / 256.0;

/// Composite Gauss–Legendre (5 nodes) on [a, b] with `panels` panels.
fn gauss(a: f64, b: f64, panels: usize, f: &dyn Fn(f64) -> f64) -> f64 {
    const X: [f64; 5] =
        [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let mid = a + (k as f64 + 0.5) * h;
            X.iter().zip(W).map(|(&x, w)| w * f(mid + x * h / 2.0)).sum::<f64>() * h / 2.0
        })
        .sum()
}

/// `∫ dt_1/t_1 … dt_r/t_r` over `t_i >= 1, Σ t_i <= u` by nested quadrature.
fn nested(r: usize, u: f64, panels: usize) -> f64 {
    if r == 0 {
        return if u >= 0.0 { 1.0 } else { 0.0 };
    }
    gauss(1.0, u - (r as f64 - 1.0), panels, &|t| nested(r - 1, u - t, panels) / t)
}

#[test]
fn i1_is_log_on_a_grid() {
    for k in 0..40 {
        let u = 1.0 + k as f64 * 0.73;
        let got = ramanujan_i(1, u, STEP).unwrap().value;
        assert!((got - u.ln()).abs() < 1e-9, "u={u}: {got}");
    }
}

#[test]
fn i2_i3_match_nested_quadrature() {
    for &u in &[2.5, 4.0, 7.3, 12.0, 20.0] {
        let i2 = ramanujan_i(2, u, STEP).unwrap();
        assert!((i2.value - nested(2, u, 400)).abs() < 1e-4, "I_2({u})");
    }
    for &u in &[3.5, 6.0, 9.7, 15.0] {
        let i3 = ramanujan_i(3, u, STEP).unwrap();
        assert!((i3.value - nested(3, u, 80)).abs() < 1e-4, "I_3({u})");
    }
}

#[test]
fn integral_is_monotone_and_below_trivial_bound() {
    for r in 0..=5 {
        let mut last = 0.0;
        for k in 0..60 {
            let u = 1.0 + k as f64 * 0.5;
            let v = ramanujan_i(r, u, 1.0 / 64.0).unwrap().value;
            assert!(v >= last - 1e-12, "r={r} u={u}");
            assert!(v <= u.ln().powi(r as i32) + 1e-9, "r={r} u={u}");
            last = v;
        }
    }
}

#[test]
fn approximation_improves_with_u() {
    for r in 1..=3 {
        let dev = |u: f64| {
            let exact = ramanujan_i(r, u, 1.0 / 32.0).unwrap().value;
            (exact - ramanujan_approx(r, u).unwrap()).abs() / exact
        };
        let (a, b, c) = (dev(30.0), dev(300.0), dev(3000.0));
        assert!(a > b && b > c, "r={r}: {a} {b} {c}");
    }
}

#[test]
fn poisson_failure_rate_decays() {
    let rep = poisson_order_stat_sim(200, 200.0, 20_000, &[2.0, 4.0, 8.0, 16.0], 17, RegularityRange::All).unwrap();
    let rates = rep.rates();
    assert!(rates.windows(2).all(|w| w[1] <= w[0] / 2.0 || w[1] == 0.0), "{rates:?}");
    assert!(rates[0] > 0.0);
}

#[test]
fn spacing_fraction_non_increasing_in_d1() {
    let samples = enumerate_s_r(1_000_000, 3, F3);
    let frac = |d1: f64| {
        let cfg = SpacingConfig::new(d1, 10.0).unwrap();
        samples.iter().filter(|s| !is_comfortably_spaced(s, &cfg)).count() as f64 / samples.len() as f64
    };
    let f: Vec<f64> = [100.0, 1000.0, 10_000.0].iter().map(|&d| frac(d)).collect();
    assert!(f[0] >= f[1] && f[1] >= f[2], "{f:?}");
}
