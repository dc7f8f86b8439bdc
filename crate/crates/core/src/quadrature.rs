//! Gauss-Legendre rules on intervals and Gauss product rules on the sphere.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::sphere::Vec3;

/// Gauss-Legendre nodes and weights on [-1, 1], memoized per `n`.
pub fn gauss_legendre(n: usize) -> Arc<(Vec<f64>, Vec<f64>)> {
    assert!(n > 0, "Gauss-Legendre rule needs at least one node");
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(rule) = cache.lock().expect("rule cache").get(&n) {
        return rule.clone();
    }
    let rule = Arc::new(compute_gauss_legendre(n));
    cache.lock().expect("rule cache").insert(n, rule.clone());
    rule
}

fn compute_gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A one-dimensional rule: nodes with matching weights.
#[derive(Clone, Debug, Default)]
pub struct LineRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LineRule {
    pub fn gauss(a: f64, b: f64, n: usize) -> Self {
        let rule = gauss_legendre(n);
        let (x, w) = (&rule.0, &rule.1);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        LineRule {
            nodes: x.iter().map(|x| mid + half * x).collect(),
            weights: w.iter().map(|w| w * half).collect(),
        }
    }

    /// Composite Gauss rule over consecutive panels `breaks[i]..breaks[i+1]`.
    pub fn composite(breaks: &[f64], per_panel: usize) -> Self {
        let mut rule = LineRule::default();
        for pair in breaks.windows(2) {
            if pair[1] > pair[0] {
                rule.append(LineRule::gauss(pair[0], pair[1], per_panel));
            }
        }
        rule
    }

    pub fn append(&mut self, other: LineRule) {
        self.nodes.extend(other.nodes);
        self.weights.extend(other.weights);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Gauss product rule on S^2: Gauss-Legendre in cos(theta) times the
/// trapezoid rule in azimuth. With `n` polar nodes and `2n` azimuths it
/// integrates spherical polynomials of degree `2n - 1` exactly.
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub nodes: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl SphereRule {
    pub fn product(n_polar: usize) -> Self {
        let n_polar = n_polar.max(1);
        let n_az = 2 * n_polar;
        let rule = gauss_legendre(n_polar);
        let (z, wz) = (&rule.0, &rule.1);
        let mut nodes = Vec::with_capacity(n_polar * n_az);
        let mut weights = Vec::with_capacity(n_polar * n_az);
        let daz = 2.0 * PI / n_az as f64;
        for (zi, wi) in z.iter().zip(wz) {
            let r = (1.0 - zi * zi).max(0.0).sqrt();
            for k in 0..n_az {
                let az = (k as f64 + 0.5) * daz;
                nodes.push(Vec3::new(r * az.cos(), r * az.sin(), *zi));
                weights.push(wi * daz);
            }
        }
        SphereRule {
            nodes,
            weights,
            degree: 2 * n_polar - 1,
        }
    }

    /// Smallest product rule exact for spherical polynomials of degree `degree`.
    pub fn with_degree(degree: usize) -> Self {
        Self::product(degree / 2 + 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Sphere degree needed to resolve `e^{i k omega . r}` for `k |r| <= phase_span`
/// plus an angular band limit.
pub fn sphere_degree_for(phase_span: f64, angular_degree: usize) -> usize {
    let span = phase_span.abs();
    (span + 1.8 * span.cbrt() + 2.0 * angular_degree as f64 + 18.0).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_exactness() {
        for n in [1usize, 2, 5, 16, 64, 200] {
            let rule = gauss_legendre(n);
            let (x, w) = (&rule.0, &rule.1);
            let sum: f64 = w.iter().sum();
            assert!((sum - 2.0).abs() < 1e-13, "n={n}");
            // x^(2n-2) integrates to 2/(2n-1)
            let p = 2 * n - 2;
            let integral: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(p as i32)).sum();
            assert!((integral - 2.0 / (p as f64 + 1.0)).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn line_rule_maps_interval() {
        let rule = LineRule::gauss(1.0, 3.0, 8);
        assert!((rule.integrate(|x| x * x) - 26.0 / 3.0).abs() < 1e-13);
        let comp = LineRule::composite(&[0.0, 0.5, 2.0], 6);
        assert!((comp.integrate(|x| x.exp()) - (2f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn sphere_rule_integrates_polynomials() {
        let rule = SphereRule::with_degree(10);
        assert!(rule.degree >= 10);
        let area: f64 = rule.weights.iter().sum();
        assert!((area - 4.0 * PI).abs() < 1e-12);
        // moments: int z^10 = 4pi/11, int x^2 y^2 = 4pi/15
        let z10: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(n, w)| w * n.z.powi(10))
            .sum();
        assert!((z10 - 4.0 * PI / 11.0).abs() < 1e-12);
        let x2y2: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(n, w)| w * n.x * n.x * n.y * n.y)
            .sum();
        assert!((x2y2 - 4.0 * PI / 15.0).abs() < 1e-12);
    }
}
