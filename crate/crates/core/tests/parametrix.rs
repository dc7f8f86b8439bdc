mod common;

use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use roughwave::eikonal::{Characteristics, FlatPhase, PhaseField};
use roughwave::parametrix::{
    eval_field, eval_gradient, eval_hessian, eval_parametrix, Angular, FrequencyProfile, QuadratureOptions, Radial,
    SampleSet,
};
use roughwave::window::DyadicWindow;
use roughwave::{make_metric, MetricSpec, SpacetimePoint, Vec3};

fn gaussian(j: u32) -> Radial {
    let s = 2f64.powi(j as i32);
    Radial::Gaussian {
        center: 1.2 * s,
        width: 0.5 * s,
    }
}

fn on_axis(points: &[(f64, f64)]) -> SampleSet {
    SampleSet::probes(
        points
            .iter()
            .map(|&(t, r)| SpacetimePoint::new(t, Vec3::new(0.0, 0.0, r)))
            .collect(),
    )
}

fn relative(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

#[test]
fn value_at_the_origin_is_the_shell_integral() {
    for j in [1, 3, 5] {
        let s = 2f64.powi(j as i32);
        let expect = common::simpson(0.5 * s, 2.0 * s, 8000, |l| 4.0 * PI * common::psi(l / s) * l * l);
        let field = eval_parametrix(
            &FlatPhase,
            &DyadicWindow::new(j),
            &FrequencyProfile::radial(Radial::Constant),
            &on_axis(&[(0.0, 0.0)]),
            &QuadratureOptions::default(),
        )
        .unwrap();
        let v = field.at(0)[0];
        assert!(
            (v.re - expect).abs() <= 1e-9 * expect && v.im.abs() <= 1e-9 * expect,
            "j {j}: {v} vs {expect}"
        );
    }
}

#[test]
fn flat_radial_field_matches_one_dimensional_oracle() {
    let j = 3;
    let radial = gaussian(j);
    let points = [(0.0, 0.3), (0.4, 0.1), (0.7, 0.7), (1.0, 0.05), (0.25, 1.3)];
    for options in [QuadratureOptions::default(), QuadratureOptions::direct()] {
        let field = eval_parametrix(
            &FlatPhase,
            &DyadicWindow::new(j),
            &FrequencyProfile::radial(radial),
            &on_axis(&points),
            &options,
        )
        .unwrap();
        for (i, &(t, r)) in points.iter().enumerate() {
            let expect = common::flat_parametrix(j, t, r, |l| radial.eval(l));
            assert!(
                relative(field.at(i)[0], expect) <= 1e-6,
                "({t},{r}) force_direct {}",
                options.force_direct
            );
        }
    }
}

#[test]
fn degree_one_harmonic_picks_up_a_factor_of_i() {
    let j = 2;
    let s = 2f64.powi(j as i32);
    let profile = FrequencyProfile::term(Radial::Constant, Angular::Harmonic { degree: 1, order: 0 });
    let points = [(0.2, 0.4), (0.5, 0.9)];
    let field = eval_parametrix(
        &FlatPhase,
        &DyadicWindow::new(j),
        &profile,
        &on_axis(&points),
        &QuadratureOptions::default(),
    )
    .unwrap();
    let y10 = (3.0 / (4.0 * PI)).sqrt();
    for (i, &(t, r)) in points.iter().enumerate() {
        let j1 = |z: f64| z.sin() / (z * z) - z.cos() / z;
        let radial = common::simpson_complex(0.5 * s, 2.0 * s, 8000, |l| {
            Complex64::from_polar(1.0, -l * t) * (common::psi(l / s) * l * l * j1(l * r))
        });
        let expect = Complex64::new(0.0, 4.0 * PI * y10) * radial;
        assert!(
            relative(field.at(i)[0], expect) <= 1e-6,
            "{} vs {expect}",
            field.at(i)[0]
        );
    }
}

#[test]
fn zero_profile_gives_zero_field() {
    let samples = on_axis(&[(0.0, 0.0), (0.5, 0.3)]);
    for order in 0..=2 {
        let f = eval_field(
            &FlatPhase,
            &DyadicWindow::new(2),
            &FrequencyProfile::zero(),
            &samples,
            order,
            &QuadratureOptions::direct(),
        )
        .unwrap();
        assert!(f.values.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        assert_eq!(f.refinement_change, 0.0);
    }
}

fn shifted(p: &SpacetimePoint, axis: usize, h: f64) -> SpacetimePoint {
    let mut q = *p;
    q.x[axis] += h;
    q
}

fn check_derivatives(phase: &dyn PhaseField, profile: &FrequencyProfile, j: u32, points: &[SpacetimePoint]) {
    let window = DyadicWindow::new(j);
    let options = QuadratureOptions::direct();
    let h = 2f64.powi(-(j as i32)) / 100.0;
    let grad = eval_gradient(phase, &window, profile, &SampleSet::probes(points.to_vec()), &options).unwrap();
    let hess = eval_hessian(phase, &window, profile, &SampleSet::probes(points.to_vec()), &options).unwrap();
    for (i, p) in points.iter().enumerate() {
        let mut stencil = Vec::new();
        for a in 0..3 {
            stencil.push(shifted(p, a, h));
            stencil.push(shifted(p, a, -h));
        }
        let values = eval_parametrix(phase, &window, profile, &SampleSet::probes(stencil.clone()), &options).unwrap();
        let grads = eval_gradient(phase, &window, profile, &SampleSet::probes(stencil), &options).unwrap();
        let scale = grad.magnitude(i);
        let hscale = hess.magnitude(i);
        for a in 0..3 {
            let fd = (values.at(2 * a)[0] - values.at(2 * a + 1)[0]) / (2.0 * h);
            assert!((fd - grad.at(i)[a]).norm() <= 1e-3 * scale, "gradient component {a}");
            for b in 0..3 {
                let fd = (grads.at(2 * b)[a] - grads.at(2 * b + 1)[a]) / (2.0 * h);
                assert!(
                    (fd - hess.at(i)[3 * a + b]).norm() <= 1e-2 * hscale,
                    "hessian component {a}{b}"
                );
            }
        }
    }
}

#[test]
fn flat_derivatives_match_finite_differences() {
    let profile = FrequencyProfile::term(gaussian(2), Angular::Harmonic { degree: 2, order: 1 });
    let points = [
        SpacetimePoint::new(0.3, Vec3::new(0.2, -0.1, 0.3)),
        SpacetimePoint::new(0.8, Vec3::new(-0.4, 0.5, 0.1)),
    ];
    check_derivatives(&FlatPhase, &profile, 2, &points);
}

#[test]
fn perturbed_derivatives_match_finite_differences() {
    let metric = make_metric(&MetricSpec::perturbed(0.05)).unwrap();
    let solver = Characteristics::new(&metric);
    let points = [SpacetimePoint::new(0.5, Vec3::new(0.1, 0.2, -0.2))];
    check_derivatives(&solver, &FrequencyProfile::radial(Radial::Constant), 1, &points);
}

#[test]
fn gradient_grows_one_power_of_frequency_faster() {
    let levels = [2u32, 3, 4, 5];
    let points = [(0.3, 0.3), (0.5, 0.5), (0.7, 0.7)];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &j in &levels {
        let window = DyadicWindow::new(j);
        let profile = FrequencyProfile::radial(Radial::Constant);
        let options = QuadratureOptions::default();
        let v = eval_parametrix(&FlatPhase, &window, &profile, &on_axis(&points), &options).unwrap();
        let g = eval_gradient(&FlatPhase, &window, &profile, &on_axis(&points), &options).unwrap();
        xs.push(j as f64 * 2f64.ln());
        ys.push((g.sup_norm() / v.sup_norm()).ln());
    }
    let slope = common::slope(&xs, &ys);
    assert!((slope - 1.0).abs() <= 0.1, "slope {slope}");
}

#[test]
fn orders_above_two_and_coarse_rules_are_rejected() {
    let r = eval_field(
        &FlatPhase,
        &DyadicWindow::new(1),
        &FrequencyProfile::radial(Radial::Constant),
        &on_axis(&[(0.0, 0.0)]),
        3,
        &QuadratureOptions::default(),
    );
    assert!(r.is_err());
    let coarse = QuadratureOptions {
        nodes_per_wavelength: 3.0,
        ..QuadratureOptions::default()
    };
    assert!(coarse.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parametrix_is_linear_in_the_profile(
        a_re in -2.0f64..2.0,
        a_im in -2.0f64..2.0,
        b_re in -2.0f64..2.0,
        t in 0.0f64..1.0,
        x in -1.0f64..1.0,
        z in -1.0f64..1.0,
    ) {
        let f = FrequencyProfile::term(gaussian(2), Angular::Harmonic { degree: 1, order: -1 });
        let g = FrequencyProfile::radial(Radial::Power { exponent: -1.0 });
        let a = Complex64::new(a_re, a_im);
        let b = Complex64::new(b_re, 0.0);
        let combined = f.scaled(a).plus(&g.scaled(b));
        let samples = SampleSet::probes(vec![SpacetimePoint::new(t, Vec3::new(x, 0.3, z))]);
        let window = DyadicWindow::new(2);
        let options = QuadratureOptions::direct();
        let lhs = eval_gradient(&FlatPhase, &window, &combined, &samples, &options).unwrap();
        let fv = eval_gradient(&FlatPhase, &window, &f, &samples, &options).unwrap();
        let gv = eval_gradient(&FlatPhase, &window, &g, &samples, &options).unwrap();
        let scale = fv.magnitude(0) * a.norm() + gv.magnitude(0) * b.norm() + 1e-12;
        for c in 0..3 {
            let rhs = a * fv.at(0)[c] + b * gv.at(0)[c];
            prop_assert!((lhs.at(0)[c] - rhs).norm() <= 1e-10 * scale);
        }
    }
}
