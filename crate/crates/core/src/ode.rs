//! Dormand-Prince 5(4) integrator with embedded error control.
//!
//! Besides the usual adaptive driver, accepted step sequences can be replayed
//! exactly. Replaying the nominal mesh on perturbed initial data makes the
//! discrete flow map a smooth function of the data, which is what the
//! finite-difference sensitivities in [`crate::eikonal`] rely on.

use nalgebra::SVector;

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Difference between the 5th and embedded 4th order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Clone, Copy, Debug)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5 {
            rtol: 1e-8,
            atol: 1e-8,
            h_init: 0.05,
            h_min: 1e-12,
            max_steps: 100_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory<const N: usize> {
    pub times: Vec<f64>,
    pub states: Vec<SVector<f64, N>>,
    /// Signed sizes of the accepted steps.
    pub steps: Vec<f64>,
}

impl<const N: usize> Trajectory<N> {
    pub fn last(&self) -> &SVector<f64, N> {
        self.states.last().expect("trajectory has at least the initial state")
    }
}

type Stages<const N: usize> = [SVector<f64, N>; 7];

fn stages<F, const N: usize>(
    f: &mut F,
    t: f64,
    y: &SVector<f64, N>,
    h: f64,
    k0: SVector<f64, N>,
) -> Result<(Stages<N>, SVector<f64, N>)>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    let mut k = [SVector::<f64, N>::zeros(); 7];
    k[0] = k0;
    for i in 1..7 {
        let mut yi = *y;
        for (j, kj) in k.iter().enumerate().take(i) {
            if A[i][j] != 0.0 {
                yi += kj * (h * A[i][j]);
            }
        }
        k[i] = f(t + C[i] * h, &yi)?;
    }
    // the last stage is evaluated at the 5th order solution
    let mut y5 = *y;
    for (j, kj) in k.iter().enumerate().take(6) {
        y5 += kj * (h * A[6][j]);
    }
    Ok((k, y5))
}

impl Dopri5 {
    pub fn with_tolerance(tol: f64) -> Self {
        Dopri5 {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }

    /// Integrates from `t0` to `t1` (either direction) and records every accepted state.
    pub fn integrate<F, const N: usize>(&self, mut f: F, t0: f64, y0: SVector<f64, N>, t1: f64) -> Result<Trajectory<N>>
    where
        F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
    {
        let mut traj = Trajectory {
            times: vec![t0],
            states: vec![y0],
            steps: Vec::new(),
        };
        let span = t1 - t0;
        if span == 0.0 {
            return Ok(traj);
        }
        let dir = span.signum();
        let mut t = t0;
        let mut y = y0;
        let mut h = self.h_init.min(span.abs()) * dir;
        let mut k0 = f(t, &y)?;
        for _ in 0..self.max_steps {
            let remaining = t1 - t;
            if remaining * dir <= 1e-15 * span.abs() {
                return Ok(traj);
            }
            let last = h.abs() >= remaining.abs();
            if last {
                h = remaining;
            }
            let (k, y5) = stages(&mut f, t, &y, h, k0)?;
            let mut err = 0.0;
            for n in 0..N {
                let mut e = 0.0;
                for (i, ki) in k.iter().enumerate() {
                    e += E[i] * ki[n];
                }
                let scale = self.atol + self.rtol * y[n].abs().max(y5[n].abs());
                err += (h * e / scale).powi(2);
            }
            let err = (err / N as f64).sqrt();
            if err <= 1.0 {
                t = if last { t1 } else { t + h };
                y = y5;
                k0 = k[6];
                traj.steps.push(h);
                traj.times.push(t);
                traj.states.push(y);
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
            if h.abs() < self.h_min {
                return Err(Error::StepFailure {
                    t,
                    reason: format!("step size {:e} below minimum", h.abs()),
                });
            }
        }
        Err(Error::StepFailure {
            t,
            reason: format!("exceeded {} steps", self.max_steps),
        })
    }

    /// Advances `y0` through a prescribed step sequence with the 5th order formula.
    pub fn replay<F, const N: usize>(mut f: F, t0: f64, y0: SVector<f64, N>, steps: &[f64]) -> Result<SVector<f64, N>>
    where
        F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
    {
        let mut t = t0;
        let mut y = y0;
        let mut k0 = f(t, &y)?;
        for &h in steps {
            let (k, y5) = stages(&mut f, t, &y, h, k0)?;
            t += h;
            y = y5;
            k0 = k[6];
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    #[test]
    fn harmonic_oscillator_period() {
        let solver = Dopri5::with_tolerance(1e-11);
        let traj = solver
            .integrate(
                |_t, y: &Vector2<f64>| Ok(Vector2::new(y[1], -y[0])),
                0.0,
                Vector2::new(1.0, 0.0),
                std::f64::consts::TAU,
            )
            .unwrap();
        let end = traj.last();
        assert!((end[0] - 1.0).abs() < 1e-9 && end[1].abs() < 1e-9);
    }

    #[test]
    fn backward_integration_and_replay_agree() {
        let solver = Dopri5::with_tolerance(1e-10);
        let rhs = |t: f64, y: &Vector2<f64>| Ok(Vector2::new(y[1] * t.cos(), -y[0]));
        let traj = solver.integrate(rhs, 1.0, Vector2::new(0.3, 0.2), -0.5).unwrap();
        assert_eq!(*traj.times.last().unwrap(), -0.5);
        let replayed = Dopri5::replay(rhs, 1.0, Vector2::new(0.3, 0.2), &traj.steps).unwrap();
        assert!((replayed - traj.last()).norm() < 1e-14);
    }

    #[test]
    fn fifth_order_convergence() {
        // fixed-step replay of y' = y: error ratio under halving ~ 2^5
        let rhs = |_t: f64, y: &Vector2<f64>| Ok(Vector2::new(y[0], 0.0));
        let err = |n: usize| {
            let steps = vec![1.0 / n as f64; n];
            let y = Dopri5::replay(rhs, 0.0, Vector2::new(1.0, 0.0), &steps).unwrap();
            (y[0] - 1f64.exp()).abs()
        };
        let order = (err(8) / err(16)).log2();
        assert!((order - 5.0).abs() < 0.3, "order {order}");
    }
}
