//! The TT* kernel in rescaled variables
//!
//! ```text
//! K(t,x,s,y) = int_S2 int_0^inf e^{i lambda Phi(omega)} a a psi(lambda)^2 lambda^2 dlambda domega,
//! Phi(omega) = 2^j [u(t/2^j, x/2^j, omega) - u(s/2^j, y/2^j, omega)],
//! ```
//!
//! its integration-by-parts majorant, the dispersive decay sweep and the
//! rescaling identity `U_j h(t/2^j, x/2^j) = 2^-j A h_j(t, x)`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bessel::spherical_jn;
use crate::eikonal::{Characteristics, PhaseField};
use crate::error::{Error, Result};
use crate::grid::SpacetimePoint;
use crate::parametrix::{QuadratureOptions, UNDERRESOLVED};
use crate::phase_geometry::{decompose, DecomposeOptions, PhasePair, Region};
use crate::quadrature::{sphere_degree_for, LineRule, SphereRule};
use crate::sphere::Vec3;
use crate::window::{ibp_constant, kernel_weight, support_rule, DyadicWindow, SUPPORT};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `C_psi = max(||psi^2 l^2||_1, ||(psi^2 l^2)''||_1)`, computed once.
pub fn c_psi() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(ibp_constant)
}

/// `K` at zero separation, `4 pi int psi^2 l^2`.
pub fn k_scale() -> f64 {
    static K: OnceLock<f64> = OnceLock::new();
    *K.get_or_init(|| 4.0 * PI * support_rule(200).integrate(|l| kernel_weight(l).0))
}

/// The amplitude `a(t,x,omega)`; every variant satisfies `|a| <= 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Amplitude {
    #[default]
    One,
    /// `a = omega . axis` with `|axis| <= 1`.
    Direction { axis: [f64; 3] },
}

impl Amplitude {
    pub fn eval(&self, omega: &Vec3) -> f64 {
        match *self {
            Amplitude::One => 1.0,
            Amplitude::Direction { axis } => omega.dot(&Vec3::from(axis)),
        }
    }

    fn degree(&self) -> usize {
        match self {
            Amplitude::One => 0,
            Amplitude::Direction { .. } => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Amplitude::Direction { axis } = self {
            let n = Vec3::from(*axis).norm();
            if !(n <= 1.0) {
                return Err(Error::config(
                    "kernel.amplitude.axis",
                    format!("|axis| = {n} exceeds 1"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub j: u32,
    #[serde(default)]
    pub amplitude: Amplitude,
    #[serde(default)]
    pub quadrature: QuadratureOptions,
}

impl KernelConfig {
    pub fn new(j: u32) -> Self {
        KernelConfig {
            j,
            amplitude: Amplitude::One,
            quadrature: QuadratureOptions::default(),
        }
    }

    pub fn window(&self) -> DyadicWindow {
        DyadicWindow::new(self.j)
    }

    pub fn scale(&self) -> f64 {
        self.window().scale()
    }
}

/// Two points of `2^j M` in rescaled coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelPair {
    pub from: SpacetimePoint,
    pub to: SpacetimePoint,
}

impl KernelPair {
    pub fn new(from: SpacetimePoint, to: SpacetimePoint) -> Self {
        KernelPair { from, to }
    }

    pub fn swapped(&self) -> Self {
        KernelPair {
            from: self.to,
            to: self.from,
        }
    }

    pub fn gap(&self) -> f64 {
        (self.to.t - self.from.t).abs()
    }

    pub fn separation(&self) -> f64 {
        (self.to.space() - self.from.space()).norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSample {
    pub pair: KernelPair,
    pub value: Complex64,
    pub ibp_majorant: f64,
    /// `|K| |t - s|`.
    pub dispersive_ratio: f64,
    pub refinement_change: f64,
}

impl KernelSample {
    /// `majorant - |K|`; the invariant allows down to `-1e-4 k_scale()`.
    pub fn majorant_margin(&self) -> f64 {
        self.ibp_majorant - self.value.norm()
    }
}

/// `Phi(omega)` for a rescaled pair.
pub fn rescaled_phase(phase: &dyn PhaseField, j: u32, pair: &KernelPair, omega: &Vec3) -> Result<f64> {
    let scale = (2.0f64).powi(j as i32);
    let a = pair.from.unscaled(j);
    let b = pair.to.unscaled(j);
    Ok(scale * (phase.phase(a.t, &a.space(), omega)? - phase.phase(b.t, &b.space(), omega)?))
}

fn slack(phase: &dyn PhaseField, pair: &KernelPair) -> f64 {
    2.0 * phase.epsilon() * (1.0 + pair.gap() + pair.separation())
}

/// Sphere rule of `eval_kernel` at refinement factor `refine`.
pub fn kernel_sphere_rule(
    phase: &dyn PhaseField,
    config: &KernelConfig,
    pair: &KernelPair,
    refine: usize,
) -> SphereRule {
    let span = SUPPORT.1 * (pair.separation() + slack(phase, pair));
    SphereRule::with_degree(sphere_degree_for(span, 2 * config.amplitude.degree()) * refine)
}

fn kernel_line_rule(phase: &dyn PhaseField, config: &KernelConfig, pair: &KernelPair, refine: usize) -> LineRule {
    let span = pair.gap() + pair.separation() + slack(phase, pair);
    support_rule(config.quadrature.line_nodes(SUPPORT, span) * refine)
}

/// `C_psi int_S2 domega / (1 + Phi^2)` on `rule`.
pub fn ibp_majorant(
    phase: &dyn PhaseField,
    config: &KernelConfig,
    pair: &KernelPair,
    rule: &SphereRule,
) -> Result<f64> {
    let mut total = 0.0;
    for (w, q) in rule.nodes.iter().zip(&rule.weights) {
        let p = rescaled_phase(phase, config.j, pair, w)?;
        total += q / (1.0 + p * p);
    }
    Ok(c_psi() * total)
}

/// Closed form of the flat majorant: `Phi = -(t-s) + r cos(theta)`.
pub fn flat_majorant(dt: f64, r: f64) -> f64 {
    let integral = if r > 1e-12 {
        2.0 * PI / r * ((r - dt).atan() + (r + dt).atan())
    } else {
        4.0 * PI / (1.0 + dt * dt)
    };
    c_psi() * integral
}

/// `4 pi int e^{-i l dt} psi^2 l^2 j0(l r) dl` on `rule`.
fn flat_kernel_on(rule: &LineRule, dt: f64, r: f64) -> Complex64 {
    let mut acc = ZERO;
    for (&l, &w) in rule.nodes.iter().zip(&rule.weights) {
        let (s, c) = (l * dt).sin_cos();
        acc += Complex64::new(c, -s) * (w * kernel_weight(l).0 * spherical_jn(0, l * r));
    }
    acc * (4.0 * PI)
}

fn direct_kernel(
    phase: &dyn PhaseField,
    config: &KernelConfig,
    pair: &KernelPair,
    refine: usize,
) -> Result<(Complex64, f64)> {
    let sphere = kernel_sphere_rule(phase, config, pair, refine);
    let line = kernel_line_rule(phase, config, pair, refine);
    let weights: Vec<f64> = line
        .nodes
        .iter()
        .zip(&line.weights)
        .map(|(&l, &w)| w * kernel_weight(l).0)
        .collect();
    let mut value = ZERO;
    let mut majorant = 0.0;
    for (omega, &q) in sphere.nodes.iter().zip(&sphere.weights) {
        let p = rescaled_phase(phase, config.j, pair, omega)?;
        let a = config.amplitude.eval(omega);
        let mut inner = ZERO;
        for (&l, &w) in line.nodes.iter().zip(&weights) {
            let (s, c) = (l * p).sin_cos();
            inner += Complex64::new(c, s) * w;
        }
        value += inner * (q * a * a);
        majorant += q / (1.0 + p * p);
    }
    Ok((value, c_psi() * majorant))
}

/// Product quadrature of `K`, checked by doubling both rules.
pub fn eval_kernel(phase: &dyn PhaseField, config: &KernelConfig, pair: &KernelPair) -> Result<KernelSample> {
    config.amplitude.validate()?;
    config.quadrature.validate()?;
    let reduced = phase.is_flat() && !config.quadrature.force_direct && config.amplitude == Amplitude::One;
    let (coarse, fine, majorant) = if reduced {
        let dt = pair.from.t - pair.to.t;
        let r = pair.separation();
        let at = |refine| flat_kernel_on(&kernel_line_rule(phase, config, pair, refine), dt, r);
        let coarse = at(1);
        let fine = if config.quadrature.check_refinement {
            at(2)
        } else {
            coarse
        };
        (coarse, fine, flat_majorant(dt, r))
    } else {
        let (coarse, m) = direct_kernel(phase, config, pair, 1)?;
        if config.quadrature.check_refinement {
            let (fine, m) = direct_kernel(phase, config, pair, 2)?;
            (coarse, fine, m)
        } else {
            (coarse, coarse, m)
        }
    };
    let relative_change = (fine - coarse).norm() / fine.norm().max(1e-4 * k_scale());
    if relative_change > UNDERRESOLVED {
        return Err(Error::Underresolved { relative_change });
    }
    Ok(KernelSample {
        pair: *pair,
        value: fine,
        ibp_majorant: majorant,
        dispersive_ratio: fine.norm() * pair.gap(),
        refinement_change: relative_change,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub region: Region,
    /// Signed rescaled distance of `y` from the cone along the outward direction.
    pub offset: f64,
    pub pair: KernelPair,
}

/// `n` log-spaced values from `lo` to `hi`.
pub fn log_ladder(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

/// Rescaled pairs from `base` (unscaled) to points on, inside and outside the
/// cone at each rescaled gap of `ladder`. The cone point follows the
/// characteristic of `u(., direction)` through `base`; interior and exterior
/// points are shifted by each of `offsets` (rescaled) along the cone radius.
/// Labels are the regions found by `decompose`.
pub fn decay_pairs(
    solver: &Characteristics,
    j: u32,
    base: &SpacetimePoint,
    direction: &Vec3,
    ladder: &[f64],
    offsets: &[f64],
) -> Result<Vec<LabeledPair>> {
    let scale = (2.0f64).powi(j as i32);
    let x0 = base.space();
    let omega = direction.normalize();
    let mut jobs = Vec::new();
    for &dt in ladder {
        let s = base.t + dt / scale;
        if s > 1.0 {
            return Err(Error::Invalid(format!("gap {dt} leaves [0, 2^j] from t = {}", base.t)));
        }
        let on_cone = solver.transport(base.t, &x0, &omega, s)?;
        let radius = (on_cone - x0).normalize();
        jobs.push((s, on_cone, 0.0));
        for &offset in offsets {
            for shift in [-offset, offset] {
                jobs.push((s, on_cone + radius * (shift / scale), shift));
            }
        }
    }
    let options = DecomposeOptions::default();
    jobs.par_iter()
        .map(|(s, y, shift)| {
            let to = SpacetimePoint::new(*s, *y);
            let dec = decompose(solver, &PhasePair::new(*base, to)?, &options)?;
            Ok(LabeledPair {
                region: dec.region,
                offset: *shift,
                pair: KernelPair::new(
                    SpacetimePoint::new(base.t * scale, x0 * scale),
                    SpacetimePoint::new(s * scale, y * scale),
                ),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersiveRow {
    pub region: Region,
    pub offset: f64,
    pub dt: f64,
    pub abs_k: f64,
    pub majorant: f64,
    pub ratio: f64,
    pub refinement_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionDecay {
    pub region: Region,
    /// log-log slope of `max |K|` over pairs at each gap.
    pub slope: f64,
    pub max_ratio: f64,
    pub gaps: usize,
    pub decades: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersiveReport {
    pub j: u32,
    pub epsilon: f64,
    pub rows: Vec<DispersiveRow>,
    pub regions: Vec<RegionDecay>,
    /// Largest `|K| |t - s|` over all pairs.
    pub ceiling: f64,
    /// Pairs with `|K| > majorant + 1e-4 k_scale()`.
    pub majorant_violations: usize,
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn check_dispersive(
    phase: &dyn PhaseField,
    config: &KernelConfig,
    pairs: &[LabeledPair],
) -> Result<DispersiveReport> {
    let samples: Vec<KernelSample> = pairs
        .par_iter()
        .map(|p| eval_kernel(phase, config, &p.pair))
        .collect::<Result<_>>()?;
    let rows: Vec<DispersiveRow> = pairs
        .iter()
        .zip(&samples)
        .map(|(p, k)| DispersiveRow {
            region: p.region,
            offset: p.offset,
            dt: p.pair.gap(),
            abs_k: k.value.norm(),
            majorant: k.ibp_majorant,
            ratio: k.dispersive_ratio,
            refinement_change: k.refinement_change,
        })
        .collect();
    let mut regions = Vec::new();
    for region in [Region::OnS, Region::Interior, Region::Exterior] {
        let mut best: Vec<(f64, f64)> = Vec::new();
        let mut max_ratio = 0.0f64;
        for row in rows.iter().filter(|r| r.region == region && r.dt > 0.0) {
            max_ratio = max_ratio.max(row.ratio);
            match best.iter_mut().find(|(dt, _)| (dt - row.dt).abs() <= 1e-12 * row.dt) {
                Some(entry) => entry.1 = entry.1.max(row.abs_k),
                None => best.push((row.dt, row.abs_k)),
            }
        }
        if best.len() < 2 {
            continue;
        }
        best.sort_by(|a, b| a.0.total_cmp(&b.0));
        let xs: Vec<f64> = best.iter().map(|b| b.0.ln()).collect();
        let ys: Vec<f64> = best.iter().map(|b| b.1.ln()).collect();
        regions.push(RegionDecay {
            region,
            slope: fit_slope(&xs, &ys),
            max_ratio,
            gaps: best.len(),
            decades: (best[best.len() - 1].0 / best[0].0).log10(),
        });
    }
    let tol = 1e-4 * k_scale();
    Ok(DispersiveReport {
        j: config.j,
        epsilon: phase.epsilon(),
        ceiling: rows.iter().map(|r| r.ratio).fold(0.0, f64::max),
        majorant_violations: rows.iter().filter(|r| r.abs_k > r.majorant + tol).count(),
        rows,
        regions,
    })
}

/// `h(s,y) = exp(-(s - c_t)^2 / w_t^2 - |y - c_x|^2 / w_x^2)` on unscaled `M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianTest {
    pub center: SpacetimePoint,
    pub time_width: f64,
    pub space_width: f64,
    /// Gauss nodes per axis over `[0, 1]` and `c_x +- 4 w_x`.
    pub time_nodes: usize,
    pub space_nodes: usize,
    /// Multiplies the whole function (0 gives `h = 0`).
    pub amplitude: f64,
}

impl Default for GaussianTest {
    fn default() -> Self {
        GaussianTest {
            center: SpacetimePoint { t: 0.5, x: [0.0; 3] },
            time_width: 0.3,
            space_width: 0.3,
            time_nodes: 8,
            space_nodes: 8,
            amplitude: 1.0,
        }
    }
}

impl GaussianTest {
    pub fn eval(&self, p: &SpacetimePoint) -> f64 {
        let dt = (p.t - self.center.t) / self.time_width;
        let dx = (p.space() - self.center.space()) / self.space_width;
        self.amplitude * (-dt * dt - dx.norm_squared()).exp()
    }

    /// Quadrature points of `M` with weights.
    pub fn rule(&self) -> Vec<(SpacetimePoint, f64)> {
        let times = LineRule::gauss(0.0, 1.0, self.time_nodes);
        let half = 4.0 * self.space_width;
        let c = self.center.x;
        let axes: Vec<LineRule> = (0..3)
            .map(|i| LineRule::gauss(c[i] - half, c[i] + half, self.space_nodes))
            .collect();
        let mut out = Vec::new();
        for (&t, &wt) in times.nodes.iter().zip(&times.weights) {
            for (&a, &wa) in axes[0].nodes.iter().zip(&axes[0].weights) {
                for (&b, &wb) in axes[1].nodes.iter().zip(&axes[1].weights) {
                    for (&d, &wd) in axes[2].nodes.iter().zip(&axes[2].weights) {
                        out.push((SpacetimePoint { t, x: [a, b, d] }, wt * wa * wb * wd));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescalingProbe {
    /// Unscaled probe point `(t/2^j, x/2^j)`.
    pub point: SpacetimePoint,
    /// `U_j h` by nested `T_j T_j^*` quadrature.
    pub nested: Complex64,
    /// `2^-j A h_j` by kernel quadrature.
    pub rescaled: Complex64,
    pub relative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescalingReport {
    pub j: u32,
    pub probes: Vec<RescalingProbe>,
    pub max_relative: f64,
}

/// Two-path check of `U_j h(t/2^j, x/2^j) = 2^-j A h_j(t,x)` at unscaled `probes`.
pub fn check_rescaling(
    phase: &dyn PhaseField,
    config: &KernelConfig,
    test: &GaussianTest,
    probes: &[SpacetimePoint],
) -> Result<RescalingReport> {
    if config.j > 3 {
        return Err(Error::config("kernel.j", "the rescaling check is limited to j <= 3"));
    }
    config.amplitude.validate()?;
    let window = config.window();
    let scale = window.scale();
    let rule = test.rule();
    let radius = rule
        .iter()
        .map(|(p, _)| p.space().norm())
        .chain(probes.iter().map(|p| p.space().norm()))
        .fold(0.0, f64::max);
    let band = window.band();
    let slack = 2.0 * phase.epsilon() * (2.0 + 2.0 * radius);
    let sphere = SphereRule::with_degree(sphere_degree_for(
        band.1 * (2.0 * radius + slack),
        2 * config.amplitude.degree(),
    ));
    // Uniform midpoint rule: psi is flat at the band ends, so the rule is
    // spectrally accurate and e^{i l u} follows by recurrence.
    let n_line = 2 * config.quadrature.line_nodes(band, 1.0 + 2.0 * radius + slack);
    let dl = (band.1 - band.0) / n_line as f64;
    let line = LineRule {
        nodes: (0..n_line).map(|k| band.0 + (k as f64 + 0.5) * dl).collect(),
        weights: vec![dl; n_line],
    };

    // T_j^* h on the (lambda, omega) nodes, one row per direction.
    let adjoint: Vec<Vec<Complex64>> = sphere
        .nodes
        .par_iter()
        .map(|omega| {
            let a = config.amplitude.eval(omega);
            let mut row = vec![ZERO; line.len()];
            for (q, wq) in &rule {
                let h = test.eval(q) * wq * a;
                if h == 0.0 {
                    continue;
                }
                let u = phase.phase(q.t, &q.space(), omega)?;
                let mut e = Complex64::from_polar(h, -line.nodes[0] * u);
                let step = Complex64::from_polar(1.0, -dl * u);
                for slot in row.iter_mut() {
                    *slot += e;
                    e *= step;
                }
            }
            for (slot, &l) in row.iter_mut().zip(&line.nodes) {
                *slot *= window.eval(l);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let results: Vec<RescalingProbe> = probes
        .par_iter()
        .map(|p| {
            let mut nested = ZERO;
            for ((omega, &wo), row) in sphere.nodes.iter().zip(&sphere.weights).zip(&adjoint) {
                let a = config.amplitude.eval(omega);
                let u = phase.phase(p.t, &p.space(), omega)?;
                let mut inner = ZERO;
                for ((&l, &wl), g) in line.nodes.iter().zip(&line.weights).zip(row) {
                    let (s, c) = (l * u).sin_cos();
                    inner += Complex64::new(c, s) * g * (wl * window.eval(l) * l * l);
                }
                nested += inner * (wo * a);
            }
            let from = SpacetimePoint::new(p.t * scale, p.space() * scale);
            let mut applied = ZERO;
            for (q, wq) in &rule {
                let h = test.eval(q);
                if h == 0.0 {
                    continue;
                }
                let to = SpacetimePoint::new(q.t * scale, q.space() * scale);
                let k = eval_kernel(phase, config, &KernelPair::new(from, to))?;
                applied += k.value * (wq * scale.powi(4) * h);
            }
            let rescaled = applied / scale;
            let relative = if nested.norm() > 0.0 {
                (nested - rescaled).norm() / nested.norm()
            } else {
                rescaled.norm()
            };
            Ok(RescalingProbe {
                point: *p,
                nested,
                rescaled,
                relative,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RescalingReport {
        j: config.j,
        max_relative: results.iter().map(|r| r.relative).fold(0.0, f64::max),
        probes: results,
    })
}
