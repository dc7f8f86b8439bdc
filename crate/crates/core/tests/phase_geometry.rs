mod common;

use proptest::prelude::*;
use roughwave::eikonal::Characteristics;
use roughwave::phase_geometry::{
    check_key_lemma, decompose, integrate_eta, integrate_mu, key_lemma_samples, phase, ConnectingCurve, CurveOptions,
    DecomposeOptions, LemmaCase, PhasePair, Region,
};
use roughwave::sphere::icosahedral_directions;
use roughwave::{make_metric, MetricSpec, SpacetimePoint, Vec3};

fn flat() -> Characteristics {
    Characteristics::new(&make_metric(&MetricSpec::minkowski()).unwrap())
}

fn perturbed() -> Characteristics {
    Characteristics::new(&make_metric(&MetricSpec::perturbed(0.05)).unwrap())
}

fn pair(t: f64, x: [f64; 3], s: f64, y: [f64; 3]) -> PhasePair {
    PhasePair::new(
        SpacetimePoint::new(t, Vec3::from(x)),
        SpacetimePoint::new(s, Vec3::from(y)),
    )
    .unwrap()
}

fn assert_straight(curve: &ConnectingCurve, from: &Vec3, to: &Vec3) {
    let dir = (to - from).normalize();
    for s in &curve.samples {
        let off = s.point.space() - from;
        assert!((off - dir * off.dot(&dir)).norm() <= 1e-8, "sample leaves the segment");
        assert!(off.dot(&dir) >= -1e-8 && off.dot(&dir) <= (to - from).norm() + 1e-8);
    }
}

#[test]
fn flat_phase_is_linear_in_omega() {
    let solver = flat();
    let p = pair(0.1, [0.2, -0.3, 0.4], 0.7, [-0.5, 0.1, 0.25]);
    for w in icosahedral_directions(1) {
        let expect = (0.7 - 0.1) + common::dot(&[0.2 - -0.5, -0.3 - 0.1, 0.4 - 0.25], &[w.x, w.y, w.z]);
        assert!((phase(&solver, &p, &w).unwrap() - expect).abs() <= 1e-12);
    }
}

#[test]
fn unordered_times_are_rejected() {
    let a = SpacetimePoint::new(0.5, Vec3::zeros());
    assert!(PhasePair::new(a, a).is_err());
    assert!(PhasePair::new(SpacetimePoint::new(0.6, Vec3::zeros()), a).is_err());
    assert!(PhasePair::new(a, SpacetimePoint::new(1.2, Vec3::zeros())).is_err());
}

#[test]
fn flat_on_cone_decomposition_and_mu_segment() {
    let solver = flat();
    let p = pair(0.2, [0.0, 0.0, 0.0], 0.8, [0.6 * 0.6, 0.6 * 0.8, 0.0]);
    let d = decompose(&solver, &p, &DecomposeOptions::default()).unwrap();
    assert_eq!(d.region, Region::OnS);
    assert!(d.m0.abs() <= 1e-9);
    assert!((d.omega0() - Vec3::new(0.6, 0.8, 0.0)).norm() <= 1e-6);
    let mu = integrate_mu(&solver, &p, &d, &CurveOptions::default()).unwrap();
    assert!(mu.endpoint_defect <= 1e-6);
}

#[test]
fn flat_interior_with_coincident_points_is_degenerate() {
    let solver = flat();
    let p = pair(0.1, [0.3, 0.3, 0.3], 0.6, [0.3, 0.3, 0.3]);
    let d = decompose(&solver, &p, &DecomposeOptions::default()).unwrap();
    assert_eq!(d.region, Region::Interior);
    assert!(d.degenerate);
    assert_eq!(d.maximizers.len(), icosahedral_directions(2).len());
    assert!((d.m0 + 0.5).abs() <= 1e-12);
}

#[test]
fn flat_interior_mu_is_the_straight_segment() {
    let solver = flat();
    let x = Vec3::new(0.1, 0.0, -0.2);
    let y = Vec3::new(0.3, 0.2, -0.1);
    let p = pair(0.0, x.into(), 0.9, y.into());
    let d = decompose(&solver, &p, &DecomposeOptions::default()).unwrap();
    assert_eq!(d.region, Region::Interior);
    assert!(!d.degenerate);
    let rho = (y - x).norm();
    assert!((d.m0 - (rho - 0.9)).abs() <= 1e-9);
    let mu = integrate_mu(&solver, &p, &d, &CurveOptions::default()).unwrap();
    assert!(mu.endpoint_defect <= 1e-6);
    assert!(mu.u_defect <= 1e-6 && mu.domega_defect <= 1e-6);
    let start = x + d.omega0() * 0.9;
    assert_straight(&mu, &start, &y);
    assert!(integrate_eta(&solver, &p, &d, &d.omega0(), &CurveOptions::default()).is_err());
}

#[test]
fn flat_exterior_has_theta1_from_the_cone_angle() {
    let solver = flat();
    let x = Vec3::new(0.0, 0.0, 0.0);
    let y = Vec3::new(0.0, 0.0, 1.0);
    let p = pair(0.2, x.into(), 0.7, y.into());
    let d = decompose(&solver, &p, &DecomposeOptions::default()).unwrap();
    assert_eq!(d.region, Region::Exterior);
    assert!((d.m0 - 0.5).abs() <= 1e-9);
    let curve = d.theta1_curve.as_ref().unwrap();
    for th in &curve.theta1 {
        assert!((th - std::f64::consts::FRAC_PI_3).abs() <= 1e-6, "theta1 {th}");
    }
    let omega1 = Vec3::from(d.omega1.unwrap());
    let eta = integrate_eta(&solver, &p, &d, &omega1, &CurveOptions::default()).unwrap();
    assert!(eta.endpoint_defect <= 1e-6);
    assert!(eta.u_defect <= 1e-6 && eta.domega_defect <= 1e-6);
    assert_straight(&eta, &(x + omega1 * 0.5), &y);
    assert!(integrate_mu(&solver, &p, &d, &CurveOptions::default()).is_err());
}

#[test]
fn low_resolution_omega_grid_is_rejected() {
    let options = DecomposeOptions {
        grid_level: 1,
        ..DecomposeOptions::default()
    };
    let p = pair(0.0, [0.0; 3], 0.5, [0.1, 0.0, 0.0]);
    assert!(decompose(&flat(), &p, &options).is_err());
}

#[test]
fn flat_on_cone_phase_is_the_half_chord_square() {
    let solver = flat();
    let p = pair(0.0, [0.1, 0.1, 0.1], 0.5, [0.1, 0.1, 0.6]);
    let d = decompose(&solver, &p, &DecomposeOptions::default()).unwrap();
    assert_eq!(d.region, Region::OnS);
    let omegas = icosahedral_directions(3);
    let samples = check_key_lemma(&solver, &d, &omegas, 1.0).unwrap();
    for s in &samples {
        assert_eq!(s.case, LemmaCase::OnS);
        let w = Vec3::from(s.omega);
        let expect = 0.5 * 0.5 * (w - Vec3::z()).norm_squared();
        assert!((s.phi_value - expect).abs() <= 1e-10);
    }
    let at_center = key_lemma_samples(&solver, &d, &[Vec3::z()], 1.0).unwrap();
    assert!(at_center[0].phi_value.abs() <= 1e-12);
    assert!(at_center[0].bound_value.abs() <= 1e-12);
}

#[test]
fn flat_lemma_covers_every_case_without_violations() {
    let solver = flat();
    let omegas = icosahedral_directions(3);
    let pairs = [
        pair(0.0, [0.0; 3], 0.5, [0.0, 0.0, 0.5]),
        pair(0.0, [0.0; 3], 0.5, [0.1, 0.1, 0.0]),
        pair(0.0, [0.0; 3], 0.4, [0.3, 0.0, 0.6]),
    ];
    let mut seen = [false; 4];
    let mut min_ratio = f64::INFINITY;
    for p in &pairs {
        let d = decompose(&solver, p, &DecomposeOptions::default()).unwrap();
        for s in check_key_lemma(&solver, &d, &omegas, 0.5).unwrap() {
            seen[s.case as usize] = true;
            if let Some(r) = s.case4_ratio {
                min_ratio = min_ratio.min(r);
            }
        }
    }
    assert_eq!(seen, [true; 4]);
    assert!(min_ratio >= 0.5 && min_ratio.is_finite(), "ratio {min_ratio}");
}

#[test]
fn perturbed_curves_reach_their_endpoints() {
    let solver = perturbed();
    let options = CurveOptions::default();
    let interior = pair(0.1, [0.1, -0.2, 0.0], 0.8, [0.2, 0.0, 0.15]);
    let d = decompose(&solver, &interior, &DecomposeOptions::default()).unwrap();
    assert_eq!(d.region, Region::Interior);
    let mu = integrate_mu(&solver, &interior, &d, &options).unwrap();
    assert!(mu.endpoint_defect <= 1e-6, "{}", mu.endpoint_defect);
    let exterior = pair(0.1, [0.0, 0.0, -0.3], 0.6, [0.2, 0.1, 0.5]);
    let d = decompose(&solver, &exterior, &DecomposeOptions::default()).unwrap();
    assert_eq!(d.region, Region::Exterior);
    let eta = integrate_eta(&solver, &exterior, &d, &Vec3::from(d.omega1.unwrap()), &options).unwrap();
    assert!(eta.endpoint_defect <= 1e-6, "{}", eta.endpoint_defect);
    assert!(eta.domega_defect <= 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn flat_m0_is_distance_minus_gap(
        t in 0.0f64..0.5,
        gap in 0.1f64..0.5,
        rho in 0.05f64..1.0,
        theta in 0.0f64..std::f64::consts::PI,
        phi in 0.0f64..std::f64::consts::TAU,
    ) {
        let dir = common::unit(theta, phi);
        let x = [0.1, -0.1, 0.2];
        let y = [x[0] + rho * dir[0], x[1] + rho * dir[1], x[2] + rho * dir[2]];
        let p = pair(t, x, t + gap, y);
        let d = decompose(&flat(), &p, &DecomposeOptions::default()).unwrap();
        prop_assert!((d.m0 - (rho - gap)).abs() <= 1e-9);
        prop_assert_eq!(d.region, Region::classify(rho - gap, p.region_tolerance()));
        prop_assert!(common::dot(&d.omega0, &dir) >= 1.0 - 1e-9);
    }
}

#[test]
fn trichotomy_band() {
    assert_eq!(Region::classify(0.0, 1e-6), Region::OnS);
    assert_eq!(Region::classify(5e-7, 1e-6), Region::OnS);
    assert_eq!(Region::classify(-2e-6, 1e-6), Region::Interior);
    assert_eq!(Region::classify(2e-6, 1e-6), Region::Exterior);
    assert_eq!(pair(0.0, [0.0; 3], 0.5, [0.0; 3]).region_tolerance(), 5e-6);
}
