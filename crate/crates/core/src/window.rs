//! The dyadic frequency window psi and the level-j shells built from it.

use serde::{Deserialize, Serialize};

use crate::quadrature::LineRule;

pub const SUPPORT: (f64, f64) = (0.5, 2.0);

/// Peak of 1/((l-2)(2l-1)) on the support, reached at l = 5/4.
const PEAK_EXPONENT: f64 = -8.0 / 9.0;

/// C-infinity bump supported in [1/2, 2], `exp(1/((l-2)(2l-1)))` rescaled to peak value 1.
pub fn psi(lambda: f64) -> f64 {
    psi_with_derivatives(lambda)[0]
}

/// `[psi, psi', psi'']` at `lambda`.
pub fn psi_with_derivatives(lambda: f64) -> [f64; 3] {
    if lambda <= SUPPORT.0 || lambda >= SUPPORT.1 {
        return [0.0; 3];
    }
    let p = (lambda - 2.0) * (2.0 * lambda - 1.0);
    let dp = 4.0 * lambda - 5.0;
    let q = 1.0 / p;
    let dq = -dp / (p * p);
    let ddq = (2.0 * dp * dp - 4.0 * p) / (p * p * p);
    let value = (q - PEAK_EXPONENT).exp();
    [value, dq * value, (ddq + dq * dq) * value]
}

/// `psi(l)^2 l^2` and its second derivative, the weight of the TT* kernel.
pub fn kernel_weight(lambda: f64) -> (f64, f64) {
    let [s, ds, dds] = psi_with_derivatives(lambda);
    let l = lambda;
    let f = s * s * l * l;
    let ddf = 2.0 * ds * ds * l * l + 2.0 * s * dds * l * l + 8.0 * s * ds * l + 2.0 * s * s;
    (f, ddf)
}

/// Gauss rule on the support of psi.
pub fn support_rule(nodes: usize) -> LineRule {
    LineRule::gauss(SUPPORT.0, SUPPORT.1, nodes)
}

/// Constant of the twofold integration by parts in lambda:
/// `max(||psi^2 l^2||_L1, ||d^2/dl^2 (psi^2 l^2)||_L1)`.
pub fn ibp_constant() -> f64 {
    let breaks: Vec<f64> = (0..=600)
        .map(|k| SUPPORT.0 + (SUPPORT.1 - SUPPORT.0) * k as f64 / 600.0)
        .collect();
    let rule = LineRule::composite(&breaks, 8);
    let l1 = rule.integrate(|l| kernel_weight(l).0.abs());
    let l1_dd = rule.integrate(|l| kernel_weight(l).1.abs());
    l1.max(l1_dd)
}

/// The level-j window `lambda -> psi(2^-j lambda)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicWindow {
    pub j: u32,
}

impl DyadicWindow {
    pub fn new(j: u32) -> Self {
        DyadicWindow { j }
    }

    pub fn scale(&self) -> f64 {
        (2.0f64).powi(self.j as i32)
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        psi(lambda / self.scale())
    }

    /// Frequency band `[2^(j-1), 2^(j+1)]` containing the support.
    pub fn band(&self) -> (f64, f64) {
        let s = self.scale();
        (SUPPORT.0 * s, SUPPORT.1 * s)
    }

    pub fn rule(&self, nodes: usize) -> LineRule {
        let (a, b) = self.band();
        LineRule::gauss(a, b, nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_and_peak() {
        assert_eq!(psi(0.5), 0.0);
        assert_eq!(psi(2.0), 0.0);
        assert_eq!(psi(0.3), 0.0);
        assert_eq!(psi(2.5), 0.0);
        assert!((psi(1.25) - 1.0).abs() < 1e-15);
        assert!(psi(0.51) > 0.0 && psi(1.99) > 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for &l in &[0.6, 0.9, 1.25, 1.7, 1.95] {
            let [_, d, dd] = psi_with_derivatives(l);
            let fd = (psi(l + h) - psi(l - h)) / (2.0 * h);
            let fdd = (psi(l + h) - 2.0 * psi(l) + psi(l - h)) / (h * h);
            assert!((d - fd).abs() < 1e-6 * (1.0 + d.abs()), "l={l}");
            assert!((dd - fdd).abs() < 1e-3 * (1.0 + dd.abs()), "l={l}");
            let (_, wdd) = kernel_weight(l);
            let w = |x: f64| kernel_weight(x).0;
            let fwdd = (w(l + h) - 2.0 * w(l) + w(l - h)) / (h * h);
            assert!((wdd - fwdd).abs() < 1e-3 * (1.0 + wdd.abs()), "l={l}");
        }
    }

    #[test]
    fn gauss_rule_converges_on_bump() {
        let reference = support_rule(800).integrate(|l| kernel_weight(l).0);
        let coarse = support_rule(96).integrate(|l| kernel_weight(l).0);
        assert!((coarse - reference).abs() < 1e-12 * reference);
    }

    #[test]
    fn window_scaling() {
        let w = DyadicWindow::new(3);
        assert_eq!(w.band(), (4.0, 16.0));
        assert!((w.eval(10.0) - psi(1.25)).abs() < 1e-15);
    }
}
