//! Spherical Bessel functions of low order.

/// `j_l(z) / z^l` by its power series; accurate for `z <= 1`.
fn scaled_series(l: u32, z: f64) -> f64 {
    let mut double_factorial = 1.0;
    for k in 1..=l {
        double_factorial *= (2 * k + 1) as f64;
    }
    let x = -0.5 * z * z;
    let mut term = 1.0 / double_factorial;
    let mut sum = term;
    for k in 1..20 {
        term *= x / (k as f64 * (2 * l + 2 * k + 1) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// Spherical Bessel function `j_l(z)` for `l <= 2`, `z >= 0`.
pub fn spherical_jn(l: u32, z: f64) -> f64 {
    assert!(l <= 2, "spherical_jn supports l <= 2");
    if z < 1.0 {
        return scaled_series(l, z) * z.powi(l as i32);
    }
    let (s, c) = z.sin_cos();
    match l {
        0 => s / z,
        1 => s / (z * z) - c / z,
        _ => (3.0 / (z * z * z) - 1.0 / z) * s - 3.0 * c / (z * z),
    }
}

/// `j_1(z) / z`, finite at the origin where it equals 1/3.
pub fn j1_over_z(z: f64) -> f64 {
    if z < 1.0 {
        scaled_series(1, z)
    } else {
        spherical_jn(1, z) / z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branches_agree_at_switch() {
        for l in 0..=2 {
            let below = scaled_series(l, 1.0);
            let (s, c) = 1f64.sin_cos();
            let above = match l {
                0 => s,
                1 => s - c,
                _ => 2.0 * s - 3.0 * c,
            };
            assert!((below - above).abs() < 1e-14, "l={l}");
        }
    }

    #[test]
    fn known_values() {
        assert_eq!(spherical_jn(0, 0.0), 1.0);
        assert_eq!(spherical_jn(2, 0.0), 0.0);
        assert!((j1_over_z(0.0) - 1.0 / 3.0).abs() < 1e-16);
        // j_2(pi) = 3/pi^2
        let pi = std::f64::consts::PI;
        assert!((spherical_jn(2, pi) - 3.0 / (pi * pi)).abs() < 1e-15);
        assert!((spherical_jn(1, 0.5) - (0.5f64.sin() / 0.25 - 0.5f64.cos() / 0.5)).abs() < 1e-13);
    }
}
