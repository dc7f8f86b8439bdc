mod common;

use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roughwave::eikonal::{Characteristics, FlatPhase};
use roughwave::kernel::{
    c_psi, check_rescaling, eval_kernel, fit_slope, flat_majorant, k_scale, log_ladder, Amplitude, GaussianTest,
    KernelConfig, KernelPair,
};
use roughwave::parametrix::QuadratureOptions;
use roughwave::{make_metric, MetricSpec, SpacetimePoint, Vec3};

fn point(t: f64, x: [f64; 3]) -> SpacetimePoint {
    SpacetimePoint::new(t, Vec3::from(x))
}

fn direct(j: u32) -> KernelConfig {
    KernelConfig {
        quadrature: QuadratureOptions::direct(),
        ..KernelConfig::new(j)
    }
}

fn relative(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(1e-4 * k_scale())
}

#[test]
fn window_constants_match_simpson() {
    let weight = |l: f64| common::psi(l).powi(2) * l * l;
    let k = 4.0 * PI * common::simpson(0.5, 2.0, 20000, weight);
    assert!((k_scale() - k).abs() <= 1e-9 * k);
    let h = 1e-4;
    let second = |l: f64| (weight(l + h) - 2.0 * weight(l) + weight(l - h)) / (h * h);
    let l1 = common::simpson(0.5, 2.0, 20000, weight);
    let l1_dd = common::simpson(0.5, 2.0, 20000, |l| second(l).abs());
    assert!((c_psi() - l1.max(l1_dd)).abs() <= 1e-5 * c_psi());
}

#[test]
fn coincident_points_give_the_real_zero_separation_value() {
    let k = eval_kernel(
        &FlatPhase,
        &KernelConfig::new(3),
        &KernelPair::new(point(2.0, [1.0; 3]), point(2.0, [1.0; 3])),
    )
    .unwrap();
    assert!((k.value.re - k_scale()).abs() <= 1e-10 * k_scale());
    assert!(k.value.im.abs() <= 1e-10 * k_scale());
    let at_same_time = eval_kernel(
        &FlatPhase,
        &direct(2),
        &KernelPair::new(point(1.0, [0.0; 3]), point(1.0, [0.3, 0.1, 0.0])),
    )
    .unwrap();
    assert!(at_same_time.value.re > 0.0);
    assert!(at_same_time.value.im.abs() <= 1e-10 * k_scale());
}

#[test]
fn flat_kernel_matches_simpson_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let from = point(
            rng.random_range(0.0..4.0),
            [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0],
        );
        let to = point(
            rng.random_range(0.0..4.0),
            [rng.random_range(-2.0..2.0), 0.0, rng.random_range(-2.0..2.0)],
        );
        let pair = KernelPair::new(from, to);
        let expect = common::flat_kernel(from.t - to.t, pair.separation());
        let reduced = eval_kernel(&FlatPhase, &KernelConfig::new(2), &pair).unwrap();
        let sphere = eval_kernel(&FlatPhase, &direct(2), &pair).unwrap();
        assert!(relative(reduced.value, expect) <= 1e-6);
        assert!(relative(sphere.value, expect) <= 1e-6);
        assert!(reduced.majorant_margin() >= -1e-4 * k_scale());
        assert!((sphere.ibp_majorant - reduced.ibp_majorant).abs() <= 1e-6 * reduced.ibp_majorant);
    }
}

#[test]
fn majorant_closed_forms() {
    let c = c_psi() * 4.0 * PI;
    assert!((flat_majorant(0.0, 0.0) - c).abs() <= 1e-12 * c);
    for j in [2u32, 3] {
        let scale = 2f64.powi(j as i32);
        for gap in [0.01, 0.1, 0.4] {
            let pair = KernelPair::new(point(0.2 * scale, [0.5; 3]), point((0.2 + gap) * scale, [0.5; 3]));
            let k = eval_kernel(&FlatPhase, &direct(j), &pair).unwrap();
            let expect = c / (1.0 + scale * scale * gap * gap);
            assert!((k.ibp_majorant - expect).abs() <= 1e-10 * expect);
        }
    }
}

#[test]
fn perturbed_kernel_is_hermitian_and_below_the_majorant() {
    let metric = make_metric(&MetricSpec::perturbed(0.05)).unwrap();
    let solver = Characteristics::new(&metric);
    let config = KernelConfig::new(2);
    let pairs = [
        KernelPair::new(point(0.4, [0.2, 0.0, -0.4]), point(2.4, [1.0, 0.6, 0.2])),
        KernelPair::new(point(1.0, [0.0, 0.0, 0.0]), point(1.5, [0.2, 0.0, 0.4])),
    ];
    for pair in &pairs {
        let k = eval_kernel(&solver, &config, pair).unwrap();
        let back = eval_kernel(&solver, &config, &pair.swapped()).unwrap();
        assert!((k.value - back.value.conj()).norm() <= 1e-9 * k_scale());
        assert!(k.majorant_margin() >= -1e-4 * k_scale());
        let tilted = KernelConfig {
            amplitude: Amplitude::Direction { axis: [0.0, 0.6, 0.8] },
            ..config
        };
        assert!(eval_kernel(&solver, &tilted, pair).unwrap().majorant_margin() >= -1e-4 * k_scale());
    }
}

#[test]
fn flat_cone_decay_has_slope_minus_one() {
    let ladder = log_ladder(1.6, 16.0, 8);
    let config = KernelConfig::new(4);
    let ys: Vec<f64> = ladder
        .iter()
        .map(|&dt| {
            let pair = KernelPair::new(point(0.0, [0.0; 3]), point(dt, [0.0, 0.0, dt]));
            eval_kernel(&FlatPhase, &config, &pair).unwrap().value.norm().ln()
        })
        .collect();
    let xs: Vec<f64> = ladder.iter().map(|d| d.ln()).collect();
    let slope = fit_slope(&xs, &ys);
    assert!((slope + 1.0).abs() <= 0.1, "slope {slope}");
    assert!((slope - common::slope(&xs, &ys)).abs() <= 1e-12);
}

#[test]
fn rescaled_kernel_does_not_depend_on_the_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10 {
        let pair = KernelPair::new(
            point(rng.random_range(0.0..1.0), [rng.random_range(-1.0..1.0), 0.2, 0.0]),
            point(rng.random_range(1.0..3.0), [0.0, rng.random_range(-1.0..1.0), 0.5]),
        );
        let a = eval_kernel(&FlatPhase, &direct(2), &pair).unwrap();
        let b = eval_kernel(&FlatPhase, &direct(3), &pair).unwrap();
        assert!(relative(a.value, b.value) <= 1e-6);
    }
}

#[test]
fn vanishing_test_function_gives_zero() {
    let test = GaussianTest {
        amplitude: 0.0,
        time_nodes: 4,
        space_nodes: 4,
        ..GaussianTest::default()
    };
    let probes = [point(0.5, [0.0; 3]), point(0.25, [0.1, 0.0, -0.1])];
    let report = check_rescaling(&FlatPhase, &KernelConfig::new(1), &test, &probes).unwrap();
    for p in &report.probes {
        assert_eq!(p.nested, Complex64::new(0.0, 0.0));
        assert_eq!(p.rescaled, Complex64::new(0.0, 0.0));
    }
    assert!(check_rescaling(&FlatPhase, &KernelConfig::new(4), &test, &probes).is_err());
}

#[test]
fn oversized_amplitude_axis_is_rejected() {
    let config = KernelConfig {
        amplitude: Amplitude::Direction { axis: [1.0, 1.0, 0.0] },
        ..KernelConfig::new(2)
    };
    let pair = KernelPair::new(point(0.0, [0.0; 3]), point(1.0, [0.0; 3]));
    assert!(eval_kernel(&FlatPhase, &config, &pair).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flat_kernel_stays_below_its_majorant(dt in -12.0f64..12.0, r in 0.0f64..12.0) {
        let pair = KernelPair::new(point(0.0, [0.0; 3]), point(-dt, [r, 0.0, 0.0]));
        let k = eval_kernel(&FlatPhase, &KernelConfig::new(3), &pair).unwrap();
        prop_assert!(k.value.norm() <= flat_majorant(dt, r) + 1e-4 * k_scale());
        prop_assert!((k.dispersive_ratio - k.value.norm() * dt.abs()).abs() <= 1e-12 * k_scale() * (1.0 + dt.abs()));
    }
}
