//! Randomized invariants across the library.

use proptest::prelude::*;

use ssk::bounds::{ho_scbf_bound, scbf_bound, szcbf_bound};
use ssk::certificates::{
    ho_scbf_row, scbf_row, srcbf_row, szcbf_row, AffineConstraint, CertificateSpec, ClassKFunction, Sense,
};
use ssk::generator::{apply_generator, build_chain, decompose, SmoothFunction};
use ssk::harness::ensemble::{wilson_interval, Z95};
use ssk::harness::models::{self, PlanarParams, ScalarParams, UnicycleParams};
use ssk::qp::{solve, QpProblem, QpStatus};
use ssk::sde::{simulate, FnControl, Matrix, NoiseStream, SdeModel, SimOptions, State, Vector};

fn vec3() -> impl Strategy<Value = Vector> {
    prop::array::uniform3(-2.5..2.5f64).prop_map(|a| Vector::from_vec(a.to_vec()))
}

fn row(coeffs: Vec<f64>, slack: f64, rhs: f64, sense: Sense) -> AffineConstraint {
    AffineConstraint {
        label: "r".into(),
        control_coeffs: Vector::from_vec(coeffs),
        slack_coeff: slack,
        rhs,
        sense,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn generator_is_linear_in_the_function(x in vec3(), u in -3.0..3.0f64, a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let bench = models::unicycle(&UnicycleParams::default()).unwrap();
        let f = &bench.h;
        let g = &bench.chain_levels[0];
        let u = Vector::from_element(1, u);
        let combo = f.linear_combination(a, g, b);
        let lhs = apply_generator(&bench.model, &combo, &x, &u).unwrap();
        let rhs = a * apply_generator(&bench.model, f, &x, &u).unwrap()
            + b * apply_generator(&bench.model, g, &x, &u).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn decomposition_reassembles_the_generator(x in vec3(), u in -3.0..3.0f64) {
        let bench = models::unicycle(&UnicycleParams::default()).unwrap();
        let u = Vector::from_element(1, u);
        for f in [&bench.h, &bench.chain_levels[0]] {
            let dec = decompose(&bench.model, f, &x).unwrap();
            let direct = apply_generator(&bench.model, f, &x, &u).unwrap();
            prop_assert!((dec.evaluate(&u) - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn qp_solution_is_invariant_to_row_scaling(
        a in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -2.0..2.0f64), 1..4),
        z0 in prop::array::uniform2(-2.0..2.0f64),
        k in 0.01..100.0f64,
        w in 0.1..10.0f64,
    ) {
        // Every row admits z0, so the problem is feasible.
        let rows: Vec<_> = a
            .iter()
            .map(|(c0, c1, r)| row(vec![*c0, *c1], 0.0, c0 * z0[0] + c1 * z0[1] + r.abs(), Sense::Le))
            .collect();
        let base = solve(&QpProblem::new(2, false).with_rows(rows.clone())).unwrap();
        let scaled_rows = rows.iter().map(|r| row(r.control_coeffs.iter().map(|c| c * k).collect(), 0.0, r.rhs * k, Sense::Le)).collect();
        let scaled = solve(&QpProblem::new(2, false).with_rows(scaled_rows)).unwrap();
        let mut weighted = QpProblem::new(2, false).with_rows(rows);
        weighted.weight_u = vec![w, w];
        let weighted = solve(&weighted).unwrap();
        prop_assert_eq!(base.status, QpStatus::Optimal);
        prop_assert!((&base.u - &scaled.u).amax() <= 1e-9 * (1.0 + base.u.amax()));
        prop_assert!((&base.u - &weighted.u).amax() <= 1e-9 * (1.0 + base.u.amax()));
    }

    #[test]
    fn qp_is_deterministic(
        a in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64), 0..5),
    ) {
        let rows: Vec<_> = a.iter().map(|(c0, c1, r)| row(vec![*c0], *c1, *r, Sense::Ge)).collect();
        let p = QpProblem::new(1, true).with_rows(rows);
        let first = solve(&p).unwrap();
        let second = solve(&p).unwrap();
        prop_assert_eq!(format!("{first:?}"), format!("{second:?}"));
    }

    #[test]
    fn zeroing_bound_is_below_plain_bound_and_decreasing(
        c in 0.01..100.0f64, frac in 1e-6..=1.0f64, t1 in 1e-6..10.0f64, dt in 1e-6..10.0f64,
    ) {
        let h = frac * c;
        let plain = scbf_bound(h, c).unwrap();
        let z1 = szcbf_bound(h, c, t1).unwrap();
        let z2 = szcbf_bound(h, c, t1 + dt).unwrap();
        prop_assert!(z1 < plain);
        prop_assert!(z2 <= z1);
        prop_assert!((0.0..=1.0).contains(&plain));
    }

    #[test]
    fn plain_bound_increases_with_h(c in 0.01..100.0f64, f1 in 0.0..=1.0f64, f2 in 0.0..=1.0f64) {
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        prop_assert!(scbf_bound(lo * c, c).unwrap() <= scbf_bound(hi * c, c).unwrap());
    }

    #[test]
    fn chain_bound_is_product_of_ratios(v in prop::collection::vec((1e-3..10.0f64, 0.0..5.0f64), 1..5)) {
        let values: Vec<f64> = v.iter().map(|(b, _)| *b).collect();
        let sups: Vec<f64> = v.iter().map(|(b, extra)| b + extra).collect();
        let p = ho_scbf_bound(&values, &sups).unwrap();
        let expected: f64 = values.iter().zip(&sups).map(|(b, c)| b / c).product();
        prop_assert!((p - expected).abs() <= 1e-12);
        prop_assert!(p <= scbf_bound(values[0], sups[0]).unwrap() + 1e-15);
    }

    #[test]
    fn wilson_interval_brackets_the_estimate(n in 1u64..5000, frac in 0.0..=1.0f64) {
        let k = ((n as f64) * frac).floor() as u64;
        let (lo, hi) = wilson_interval(k, n, Z95);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-15 && p <= hi + 1e-15 && hi <= 1.0);
    }

    #[test]
    fn plain_row_is_stricter_than_zeroing_row(x in prop::array::uniform2(-2.0..2.0f64), u in prop::array::uniform2(-5.0..5.0f64), k in 0.01..10.0f64) {
        let bench = models::planar(&PlanarParams::default()).unwrap();
        let x = Vector::from_vec(x.to_vec());
        prop_assume!(bench.h.value(&x) > 0.0 && x.norm() > 1e-3);
        let u = Vector::from_vec(u.to_vec());
        let scbf = CertificateSpec::scbf(bench.h.clone()).unwrap();
        let szcbf = CertificateSpec::szcbf(bench.h.clone(), ClassKFunction::linear(k)).unwrap();
        let plain = scbf_row(&bench.model, &scbf, &x).unwrap().unwrap();
        let zero = szcbf_row(&bench.model, &szcbf, &x).unwrap().unwrap();
        if plain.margin(&u, 0.0) >= 0.0 {
            prop_assert!(zero.margin(&u, 0.0) >= 0.0);
        }
    }

    #[test]
    fn upper_bound_form_preserves_margin(c in prop::array::uniform2(-3.0..3.0f64), s in -2.0..2.0f64, b in -3.0..3.0f64, u in prop::array::uniform2(-3.0..3.0f64), d in -2.0..2.0f64, ge: bool) {
        let r = row(c.to_vec(), s, b, if ge { Sense::Ge } else { Sense::Le });
        let (a, sc, rhs) = r.as_upper_bound();
        let u = Vector::from_vec(u.to_vec());
        let m = rhs - a.dot(&u) - sc * d;
        prop_assert!((m - r.margin(&u, d)).abs() <= 1e-12);
    }

    #[test]
    fn first_order_chain_row_matches_plain_row(x in prop::array::uniform2(-2.0..2.0f64)) {
        let bench = models::planar(&PlanarParams::default()).unwrap();
        let x = Vector::from_vec(x.to_vec());
        prop_assume!(bench.h.value(&x) > 0.0 && x.norm() > 1e-3);
        let chain = build_chain(&bench.model, &bench.h, 1, None, &bench.region).unwrap();
        let ho = ho_scbf_row(&bench.model, &chain, &x).unwrap();
        let spec = CertificateSpec::scbf(bench.h.clone()).unwrap();
        let plain = scbf_row(&bench.model, &spec, &x).unwrap().unwrap();
        prop_assert_eq!(ho.control_coeffs, plain.control_coeffs);
        prop_assert_eq!(ho.rhs, plain.rhs);
        prop_assert_eq!(ho.sense, plain.sense);
    }

    #[test]
    fn reciprocal_row_tightens_toward_the_boundary(x1 in 0.0..0.999f64, gap in 1e-4..0.5f64, sigma in 0.0..2.0f64) {
        let x2 = (x1 + gap).min(0.9999);
        prop_assume!(x2 > x1);
        let bound = |x: f64| {
            let b = models::scalar(&ScalarParams { sigma, x0: x }).unwrap();
            let spec = CertificateSpec::srcbf(b.h.clone(), 1.0).unwrap();
            let r = srcbf_row(&b.model, &spec, &b.x0).unwrap().unwrap();
            r.rhs / r.control_coeffs[0]
        };
        prop_assert!(bound(x2) < bound(x1));
    }
}

fn gbm(mu: f64, s: f64) -> SdeModel {
    SdeModel::new(
        "gbm",
        1,
        1,
        1,
        move |x: &Vector| x * mu,
        |_: &Vector| Matrix::zeros(1, 1),
        move |x: &Vector| Matrix::from_element(1, 1, s * x[0]),
        &Vector::from_element(1, 1.0),
    )
    .unwrap()
}

fn terminal_samples(model: &SdeModel, x0: f64, t: f64, dt: f64, n: u64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let mut stream = NoiseStream::new(11, i);
            let mut ctl = FnControl(|_: &State| Vector::zeros(1));
            let traj = simulate(
                model,
                &mut ctl,
                &State::new(Vector::from_element(1, x0), 0.0),
                SimOptions::new(t, dt),
                &mut stream,
                |_| true,
            )
            .unwrap();
            traj.final_state().values[0]
        })
        .collect()
}

#[test]
fn geometric_brownian_motion_mean_matches() {
    let (mu, s, x0, t) = (0.5, 0.4, 1.0, 1.0);
    let xs = terminal_samples(&gbm(mu, s), x0, t, 1e-3, 20_000);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let exact = x0 * (mu * t).exp();
    // Euler's mean is (1 + μ dt)^{T/dt}; its gap to e^{μT} is ~1e-4 here.
    assert!((mean - exact).abs() < 4.0 * (var / n).sqrt() + 2e-4, "mean {mean} vs {exact}");
    let second = x0 * x0 * ((2.0 * mu + s * s) * t).exp();
    let m2 = xs.iter().map(|v| v * v).sum::<f64>() / n;
    assert!((m2 - second).abs() / second < 0.05, "second moment {m2} vs {second}");
}

#[test]
fn euler_mean_error_shrinks_with_step() {
    // Deterministic part only: with σ = 0 the error is the Euler bias.
    let model = gbm(1.0, 0.0);
    let err = |dt| (terminal_samples(&model, 1.0, 1.0, dt, 1)[0] - 1f64.exp()).abs();
    let (e1, e2) = (err(0.01), err(0.005));
    let ratio = e1 / e2;
    assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
}

#[test]
fn reciprocal_of_barrier_has_consistent_derivatives() {
    let h = SmoothFunction::from_value_fd("h", |x| 1.0 - x[0] * x[0]);
    let b = h.reciprocal();
    let x = Vector::from_element(1, 0.3);
    assert!((b.value(&x) - 1.0 / 0.91).abs() < 1e-12);
    b.check_derivatives(&x).unwrap();
}
