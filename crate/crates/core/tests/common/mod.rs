//! Independent oracles shared by the integration tests. Nothing here calls
//! into the quadrature or window code of the library.

#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;

/// The bump `exp(1/((l-2)(2l-1)))` scaled to peak 1 at `l = 5/4`.
pub fn psi(l: f64) -> f64 {
    if l <= 0.5 || l >= 2.0 {
        return 0.0;
    }
    let peak = 1.0 / ((1.25 - 2.0) * (2.5 - 1.0));
    (1.0 / ((l - 2.0) * (2.0 * l - 1.0)) - peak).exp()
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * k as f64);
    }
    acc * h / 3.0
}

pub fn simpson_complex(a: f64, b: f64, n: usize, f: impl Fn(f64) -> Complex64) -> Complex64 {
    Complex64::new(simpson(a, b, n, |l| f(l).re), simpson(a, b, n, |l| f(l).im))
}

/// `sin(z)/z`.
pub fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-6 {
        1.0 - z * z / 6.0
    } else {
        z.sin() / z
    }
}

/// Flat rescaled kernel `4 pi int e^{-i l dt} psi(l)^2 l^2 sinc(l r) dl`.
pub fn flat_kernel(dt: f64, r: f64) -> Complex64 {
    simpson_complex(0.5, 2.0, 6000, |l| {
        Complex64::from_polar(1.0, -l * dt) * (4.0 * PI * psi(l).powi(2) * l * l * sinc(l * r))
    })
}

/// Flat `phi_j(t, x)` for a radial profile with angular factor 1.
pub fn flat_parametrix(j: u32, t: f64, r: f64, radial: impl Fn(f64) -> f64) -> Complex64 {
    let s = 2f64.powi(j as i32);
    simpson_complex(0.5 * s, 2.0 * s, 8000, |l| {
        Complex64::from_polar(1.0, -l * t) * (4.0 * PI * psi(l / s) * radial(l) * l * l * sinc(l * r))
    })
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Unit vector from polar and azimuthal angles.
pub fn unit(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

pub fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
