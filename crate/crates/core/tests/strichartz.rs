mod common;

use num_complex::Complex64;
use proptest::prelude::*;
use roughwave::eikonal::FlatPhase;
use roughwave::parametrix::{eval_parametrix, FieldSample, FrequencyProfile, QuadratureOptions, Radial, SampleSet};
use roughwave::strichartz::{
    admissible, level_norms, mixed_norm, regress, slice_norms, spacetime_norm, Exponent, Rational, ScalingOptions,
};
use roughwave::window::DyadicWindow;
use roughwave::SpacetimeGrid;

fn exp(s: &str) -> Exponent {
    s.parse().unwrap()
}

fn field_on(grid: &SpacetimeGrid, f: impl Fn(f64, [f64; 3]) -> f64) -> FieldSample {
    let samples = SampleSet::from_grid(grid);
    let values = samples
        .points
        .iter()
        .map(|p| Complex64::new(f(p.t, p.x), 0.0))
        .collect();
    FieldSample {
        j: 0,
        order: 0,
        samples,
        values,
        refinement_change: 0.0,
    }
}

/// Trapezoid weights, written out independently of the library.
fn trapezoid(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|k| {
            let left = if k > 0 { nodes[k] - nodes[k - 1] } else { 0.0 };
            let right = if k + 1 < n { nodes[k + 1] - nodes[k] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

#[test]
fn admissible_examples() {
    let four = admissible(exp("4"), exp("4")).unwrap();
    assert_eq!(four.r, Rational::new(1, 2));
    assert_eq!(admissible(exp("inf"), exp("2")).unwrap().r, Rational::from_integer(0));
    assert_eq!(admissible(exp("8"), exp("8/3")).unwrap().r, Rational::new(1, 4));
    assert_eq!(admissible(Exponent::integer(4), Exponent::integer(4)).unwrap(), four);
    assert!((four.r_f64() - 0.5).abs() < 1e-15);
}

#[test]
fn inadmissible_pairs_are_rejected() {
    assert!(admissible(exp("4"), exp("inf")).is_err());
    assert!(admissible(exp("3/2"), exp("8")).is_err());
    assert!(admissible(exp("8"), exp("1")).is_err());
    assert!(admissible(exp("2"), exp("4")).is_err());
    assert!(admissible(exp("3"), exp("5")).is_err());
    assert!("1/0".parse::<Exponent>().is_err());
    assert!("four".parse::<Exponent>().is_err());
}

#[test]
fn zero_field_has_zero_norms() {
    let grid = SpacetimeGrid::uniform(3, 5, 1.0);
    let field = eval_parametrix(
        &FlatPhase,
        &DyadicWindow::new(1),
        &FrequencyProfile::zero(),
        &SampleSet::from_grid(&grid),
        &QuadratureOptions::default(),
    )
    .unwrap();
    for pair in [
        admissible(exp("4"), exp("4")).unwrap(),
        admissible(exp("inf"), exp("2")).unwrap(),
    ] {
        assert_eq!(mixed_norm(&field, &pair).unwrap(), 0.0);
    }
}

#[test]
fn constant_field_norm_is_a_power_of_the_volume() {
    let grid = SpacetimeGrid::uniform(5, 7, 1.0);
    let field = field_on(&grid, |_, _| 1.0);
    for (p, q) in [("4", "4"), ("inf", "2"), ("8", "8/3")] {
        let pair = admissible(exp(p), exp(q)).unwrap();
        let expect = 8f64.powf(1.0 / pair.q.to_f64());
        assert!((mixed_norm(&field, &pair).unwrap() - expect).abs() <= 1e-12 * expect);
    }
}

#[test]
fn separable_field_norm_factorizes() {
    let grid = SpacetimeGrid::uniform(9, 11, 1.5);
    let g = |t: f64| 1.0 + t * t;
    let h = |x: [f64; 3]| (-common::dot(&x, &x)).exp();
    let field = field_on(&grid, |t, x| g(t) * h(x));
    let wt = trapezoid(&grid.times);
    let wa = trapezoid(&grid.axis);
    let pair = admissible(exp("8"), exp("8/3")).unwrap();
    let (p, q) = (8.0, 8.0 / 3.0);
    let time: f64 = grid
        .times
        .iter()
        .zip(&wt)
        .map(|(t, w)| w * g(*t).powf(p))
        .sum::<f64>()
        .powf(1.0 / p);
    let mut space = 0.0;
    for (a, wa_) in grid.axis.iter().zip(&wa) {
        for (b, wb) in grid.axis.iter().zip(&wa) {
            for (c, wc) in grid.axis.iter().zip(&wa) {
                space += wa_ * wb * wc * h([*a, *b, *c]).powf(q);
            }
        }
    }
    let expect = time * space.powf(1.0 / q);
    assert!((mixed_norm(&field, &pair).unwrap() - expect).abs() <= 1e-12 * expect);
    let slices = slice_norms(&field, pair.q).unwrap();
    for (t, s) in grid.times.iter().zip(&slices) {
        assert!((s - g(*t) * space.powf(1.0 / q)).abs() <= 1e-12 * s);
    }
}

#[test]
fn diagonal_pair_agrees_with_the_spacetime_norm() {
    let grid = SpacetimeGrid::uniform(5, 9, 1.0);
    let field = eval_parametrix(
        &FlatPhase,
        &DyadicWindow::new(1),
        &FrequencyProfile::radial(Radial::Constant),
        &SampleSet::from_grid(&grid),
        &QuadratureOptions::default(),
    )
    .unwrap();
    let pair = admissible(exp("4"), exp("4")).unwrap();
    let a = mixed_norm(&field, &pair).unwrap();
    let b = spacetime_norm(&field, 4.0).unwrap();
    assert!((a - b).abs() <= 1e-12 * b);
}

#[test]
fn probe_sets_without_weights_are_rejected() {
    let field = eval_parametrix(
        &FlatPhase,
        &DyadicWindow::new(1),
        &FrequencyProfile::zero(),
        &SampleSet::probes(SpacetimeGrid::uniform(2, 2, 1.0).points()),
        &QuadratureOptions::default(),
    )
    .unwrap();
    assert!(mixed_norm(&field, &admissible(exp("4"), exp("4")).unwrap()).is_err());
}

#[test]
fn scaling_options_are_validated() {
    let bad = [
        ScalingOptions {
            levels: vec![3],
            ..ScalingOptions::default()
        },
        ScalingOptions {
            levels: vec![3, 8],
            ..ScalingOptions::default()
        },
        ScalingOptions {
            radius: 1.0,
            ..ScalingOptions::default()
        },
    ];
    for options in &bad {
        assert!(options.validate().is_err());
    }
    assert!(ScalingOptions::default().validate().is_ok());
}

#[test]
fn flat_value_norm_grows_at_the_admissible_rate() {
    let options = ScalingOptions {
        levels: vec![3, 4, 5],
        ..ScalingOptions::default()
    };
    let pair = admissible(exp("4"), exp("4")).unwrap();
    let profile = FrequencyProfile::radial(Radial::Constant);
    let report = regress(&pair, 0, level_norms(&FlatPhase, &profile, &pair, 0, &options).unwrap());
    assert!(report.slope <= 0.6, "slope {}", report.slope);
    assert!((report.slope - 0.5).abs() <= 0.1, "slope {}", report.slope);
    assert_eq!(report.per_j[0].bound, report.per_j[0].normalized);
    for level in &report.per_j {
        assert!(level.tail_fraction < 0.1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exponent_formula(pn in 2i64..40, pd in 1i64..5, qn in 2i64..40, qd in 1i64..5, p_inf in any::<bool>()) {
        let p = if p_inf { Exponent::Infinite } else { Exponent::Finite(Rational::new(pn, pd)) };
        let q = Exponent::Finite(Rational::new(qn, qd));
        let inv_p = if p_inf { 0.0 } else { pd as f64 / pn as f64 };
        let inv_q = qd as f64 / qn as f64;
        let ok = (p_inf || pn >= 2 * pd) && qn >= 2 * qd && inv_p + inv_q <= 0.5 + 1e-15;
        match admissible(p, q) {
            Ok(pair) => {
                prop_assert!(ok);
                prop_assert!((pair.r_f64() - (1.5 - inv_p - 3.0 * inv_q)).abs() <= 1e-12);
                prop_assert!(pair.r_f64() >= 0.0);
            }
            Err(_) => prop_assert!(!ok),
        }
    }
}
