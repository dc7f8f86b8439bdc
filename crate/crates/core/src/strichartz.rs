//! Mixed `L^p_t L^q_x` norms of parametrix fields and the dyadic scaling
//! laws `||phi_j|| <~ 2^{j r} ||psi(2^-j l) f||_{L^2}`.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::eikonal::PhaseField;
use crate::error::{Error, Result};
use crate::kernel::fit_slope;
use crate::parametrix::{eval_field, FieldSample, FrequencyProfile, QuadratureOptions, SampleSet};
use crate::quadrature::LineRule;
use crate::window::DyadicWindow;

pub type Rational = Ratio<i64>;

/// A Lebesgue exponent in `[1, inf]`, kept exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Exponent {
    Finite(Rational),
    Infinite,
}

impl Exponent {
    pub fn integer(n: i64) -> Self {
        Exponent::Finite(Rational::from_integer(n))
    }

    /// `1/p`, zero for `p = inf`.
    pub fn reciprocal(&self) -> Rational {
        match self {
            Exponent::Finite(p) => p.recip(),
            Exponent::Infinite => Rational::from_integer(0),
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Exponent::Finite(p) => *p.numer() as f64 / *p.denom() as f64,
            Exponent::Infinite => f64::INFINITY,
        }
    }
}

impl FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Admissibility(format!("cannot read exponent {s:?}"));
        if matches!(s, "inf" | "infinity" | "∞") {
            return Ok(Exponent::Infinite);
        }
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n.trim().parse().map_err(|_| bad())?;
            let d: i64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            return Ok(Exponent::Finite(Rational::new(n, d)));
        }
        let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 12 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let denom = 10i64.pow(frac.len() as u32);
        let w: i64 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|_| bad())?
        };
        let f: i64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        Ok(Exponent::Finite(Rational::new(w * denom + f, denom)))
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(p) if p.is_integer() => write!(f, "{}", p.numer()),
            Exponent::Finite(p) => write!(f, "{}/{}", p.numer(), p.denom()),
            Exponent::Infinite => write!(f, "inf"),
        }
    }
}

impl TryFrom<String> for Exponent {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Exponent> for String {
    fn from(e: Exponent) -> String {
        e.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrichartzPair {
    pub p: Exponent,
    pub q: Exponent,
    /// `3/2 - 1/p - 3/q`, as `"n/d"`.
    #[serde(with = "rational_string")]
    pub r: Rational,
}

mod rational_string {
    use super::Rational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Rational, D::Error> {
        let s = String::deserialize(d)?;
        let (n, m) = s
            .split_once('/')
            .ok_or_else(|| serde::de::Error::custom("expected n/d"))?;
        let n: i64 = n.parse().map_err(serde::de::Error::custom)?;
        let m: i64 = m.parse().map_err(serde::de::Error::custom)?;
        Ok(Rational::new(n, m))
    }
}

impl StrichartzPair {
    pub fn r_f64(&self) -> f64 {
        *self.r.numer() as f64 / *self.r.denom() as f64
    }
}

/// Accepts `p, q >= 2`, `q < inf`, `1/p + 1/q <= 1/2`, with `r = 3/2 - 1/p - 3/q`.
pub fn admissible(p: Exponent, q: Exponent) -> Result<StrichartzPair> {
    let two = Rational::from_integer(2);
    if q == Exponent::Infinite {
        return Err(Error::Admissibility("q = inf is excluded".into()));
    }
    if let Exponent::Finite(pv) = p {
        if pv < two {
            return Err(Error::Admissibility(format!("p = {p} < 2")));
        }
    }
    if let Exponent::Finite(qv) = q {
        if qv < two {
            return Err(Error::Admissibility(format!("q = {q} < 2")));
        }
    }
    let sum = p.reciprocal() + q.reciprocal();
    if sum > Rational::new(1, 2) {
        return Err(Error::Admissibility(format!(
            "scaling line violated: 1/p + 1/q = {sum} > 1/2"
        )));
    }
    let r = Rational::new(3, 2) - p.reciprocal() - Rational::from_integer(3) * q.reciprocal();
    Ok(StrichartzPair { p, q, r })
}

fn weights(field: &FieldSample) -> Result<&crate::parametrix::TensorWeights> {
    field
        .samples
        .weights
        .as_ref()
        .ok_or_else(|| Error::Invalid("mixed norms need a tensor sample set".into()))
}

fn power_mean(values: impl Iterator<Item = (f64, f64)>, e: Exponent) -> f64 {
    match e {
        Exponent::Infinite => values.map(|(_, v)| v).fold(0.0, f64::max),
        Exponent::Finite(_) => {
            let p = e.to_f64();
            values.map(|(w, v)| w * v.powf(p)).sum::<f64>().powf(1.0 / p)
        }
    }
}

/// Per-slice `L^q` norms in euclidean coordinates.
pub fn slice_norms(field: &FieldSample, q: Exponent) -> Result<Vec<f64>> {
    let w = weights(field)?;
    let n = w.space_weights.len();
    Ok((0..w.times.len())
        .map(|k| power_mean((0..n).map(|i| (w.space_weights[i], field.magnitude(k * n + i))), q))
        .collect())
}

/// `(int_0^1 ||F(t)||_{L^q}^p dt)^{1/p}`.
pub fn mixed_norm(field: &FieldSample, pair: &StrichartzPair) -> Result<f64> {
    let w = weights(field)?;
    let slices = slice_norms(field, pair.q)?;
    Ok(power_mean(w.time_weights.iter().copied().zip(slices), pair.p))
}

/// `||F||_{L^q(M)}` as one spacetime sum.
pub fn spacetime_norm(field: &FieldSample, q: f64) -> Result<f64> {
    let w = weights(field)?;
    let n = w.space_weights.len();
    let mut total = 0.0;
    for (k, wt) in w.time_weights.iter().enumerate() {
        for (i, ws) in w.space_weights.iter().enumerate() {
            total += wt * ws * field.magnitude(k * n + i).powf(q);
        }
    }
    Ok(total.powf(1.0 / q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingOptions {
    pub levels: Vec<u32>,
    /// Spatial window radius.
    pub radius: f64,
    /// Multiplies the number of time and space panels.
    pub resolution: usize,
    pub nodes_per_panel: usize,
    /// Cartesian points per axis when the field is not radial.
    pub cartesian_points: usize,
    pub quadrature: QuadratureOptions,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            levels: vec![3, 4, 5, 6, 7],
            radius: 2.0,
            resolution: 1,
            nodes_per_panel: 8,
            cartesian_points: 33,
            quadrature: QuadratureOptions::default(),
        }
    }
}

impl ScalingOptions {
    pub fn validate(&self) -> Result<()> {
        if self.levels.len() < 2 {
            return Err(Error::config("strichartz.levels", "need at least two levels"));
        }
        if let Some(j) = self.levels.iter().find(|&&j| j > 7) {
            return Err(Error::config("strichartz.levels", format!("level {j} exceeds 7")));
        }
        if !(self.radius > 1.0) {
            return Err(Error::config("strichartz.radius", "must exceed 1 to contain the cone"));
        }
        if self.resolution == 0 || self.nodes_per_panel < 2 {
            return Err(Error::config("strichartz.resolution", "must be positive"));
        }
        self.quadrature.validate()
    }

    /// Time panels `[0, h], [h, 2h], [2h, 4h], ...` with `h = 2^-j`.
    fn time_rule(&self, j: u32) -> LineRule {
        let h = (0.5f64).powi(j as i32);
        let mut breaks = vec![0.0, h];
        while *breaks.last().unwrap() < 1.0 {
            let next = (2.0 * breaks.last().unwrap()).min(1.0);
            breaks.push(next);
        }
        LineRule::composite(&subdivide(&breaks, self.resolution), self.nodes_per_panel)
    }

    /// Panels of width `2^-j / 2` on `[a, b]`.
    fn radial_rule(&self, j: u32, a: f64, b: f64, coarsen: f64) -> LineRule {
        let width = coarsen * 0.5 * (0.5f64).powi(j as i32) / self.resolution as f64;
        let n = ((b - a) / width).ceil() as usize;
        let breaks: Vec<f64> = (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect();
        LineRule::composite(&breaks, self.nodes_per_panel)
    }

    pub fn samples(&self, j: u32, radial: bool) -> SampleSet {
        if radial {
            SampleSet::radial(&self.time_rule(j), &self.radial_rule(j, 0.0, self.radius, 1.0))
        } else {
            let grid = crate::grid::SpacetimeGrid {
                times: crate::grid::linspace(0.0, 1.0, self.cartesian_points),
                axis: crate::grid::linspace(-self.radius, self.radius, self.cartesian_points),
            };
            SampleSet::from_grid(&grid)
        }
    }

    fn tail_samples(&self, j: u32) -> SampleSet {
        SampleSet::radial(
            &self.time_rule(j),
            &self.radial_rule(j, self.radius, 2.0 * self.radius, 4.0),
        )
    }
}

fn subdivide(breaks: &[f64], factor: usize) -> Vec<f64> {
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        for k in 1..=factor {
            out.push(w[0] + (w[1] - w[0]) * k as f64 / factor as f64);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelNorm {
    pub j: u32,
    pub norm: f64,
    pub data_norm: f64,
    /// `norm / data_norm`.
    pub normalized: f64,
    /// `C 2^{j target} ` with the constant fitted at the first level.
    pub bound: f64,
    /// `||F||` over `radius <= |x| <= 2 radius` relative to `norm` (radial runs).
    pub tail_fraction: f64,
    pub refinement_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub pair: StrichartzPair,
    /// 0 for `phi_j`, 1 for its gradient, 2 for its hessian.
    pub order: u8,
    /// `r + order`.
    pub target_r: f64,
    pub per_j: Vec<LevelNorm>,
    pub slope: f64,
    /// RMS residual of the log2 fit.
    pub residual: f64,
    pub constant: f64,
    /// Largest `normalized / bound`; the single-constant check passes when `<= 1`.
    pub worst_bound_ratio: f64,
}

impl NormReport {
    pub fn single_constant_holds(&self) -> bool {
        self.worst_bound_ratio <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub epsilon: f64,
    pub value: NormReport,
    pub gradient: Option<NormReport>,
    pub hessian: Option<NormReport>,
}

/// Mixed norm of `phi_j` (order 0) or its derivatives for each level.
pub fn level_norms(
    phase: &dyn PhaseField,
    profile: &FrequencyProfile,
    pair: &StrichartzPair,
    order: u8,
    options: &ScalingOptions,
) -> Result<Vec<LevelNorm>> {
    let radial = phase.is_flat() && profile.is_angular_constant();
    let mut out = Vec::new();
    for &j in &options.levels {
        let window = DyadicWindow::new(j);
        let field = eval_field(
            phase,
            &window,
            profile,
            &options.samples(j, radial),
            order,
            &options.quadrature,
        )?;
        let norm = mixed_norm(&field, pair)?;
        let tail_fraction = if radial {
            let tail = eval_field(
                phase,
                &window,
                profile,
                &options.tail_samples(j),
                order,
                &options.quadrature,
            )?;
            mixed_norm(&tail, pair)? / norm
        } else {
            0.0
        };
        let data_norm = profile.data_norm(&window);
        out.push(LevelNorm {
            j,
            norm,
            data_norm,
            normalized: norm / data_norm,
            bound: 0.0,
            tail_fraction,
            refinement_change: field.refinement_change,
        });
    }
    Ok(out)
}

/// Fits `log2(norm / data_norm)` against `j` and applies the single-constant check.
pub fn regress(pair: &StrichartzPair, order: u8, mut per_j: Vec<LevelNorm>) -> NormReport {
    let target = pair.r_f64() + order as f64;
    let xs: Vec<f64> = per_j.iter().map(|l| l.j as f64).collect();
    let ys: Vec<f64> = per_j.iter().map(|l| l.normalized.log2()).collect();
    let slope = fit_slope(&xs, &ys);
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    let first = &per_j[0];
    let constant = first.normalized / (2.0f64).powf(target * first.j as f64);
    let mut worst = 0.0f64;
    for level in &mut per_j {
        level.bound = constant * (2.0f64).powf(target * level.j as f64);
        worst = worst.max(level.normalized / level.bound);
    }
    NormReport {
        pair: *pair,
        order,
        target_r: target,
        per_j,
        slope,
        residual,
        constant,
        worst_bound_ratio: worst,
    }
}

/// The scaling sweep for `phi_j`; gradient and hessian laws are added for `(4, 4)`.
pub fn scaling_regression(
    phase: &dyn PhaseField,
    profile: &FrequencyProfile,
    pair: &StrichartzPair,
    options: &ScalingOptions,
) -> Result<ScalingReport> {
    options.validate()?;
    profile.validate()?;
    let report =
        |order| -> Result<NormReport> { Ok(regress(pair, order, level_norms(phase, profile, pair, order, options)?)) };
    let four = Exponent::integer(4);
    let derivatives = pair.p == four && pair.q == four;
    Ok(ScalingReport {
        epsilon: phase.epsilon(),
        value: report(0)?,
        gradient: if derivatives { Some(report(1)?) } else { None },
        hessian: if derivatives { Some(report(2)?) } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpacetimeGrid;
    use num_complex::Complex64;

    fn exp(s: &str) -> Exponent {
        s.parse().unwrap()
    }

    #[test]
    fn exponent_parsing() {
        assert_eq!(exp("8/3"), Exponent::Finite(Rational::new(8, 3)));
        assert_eq!(exp("2.5"), Exponent::Finite(Rational::new(5, 2)));
        assert_eq!(exp("inf"), Exponent::Infinite);
        assert_eq!(exp("8/3").to_string(), "8/3");
        assert!("x".parse::<Exponent>().is_err());
    }

    #[test]
    fn admissibility_examples() {
        assert_eq!(admissible(exp("4"), exp("4")).unwrap().r, Rational::new(1, 2));
        assert_eq!(admissible(exp("8"), exp("8/3")).unwrap().r, Rational::new(1, 4));
        assert_eq!(admissible(exp("inf"), exp("2")).unwrap().r, Rational::from_integer(0));
        for (p, q) in [("4", "inf"), ("1", "4"), ("4", "3/2"), ("3", "3")] {
            assert!(
                matches!(admissible(exp(p), exp(q)), Err(Error::Admissibility(_))),
                "{p} {q}"
            );
        }
    }

    fn constant_field(value: f64) -> FieldSample {
        let grid = SpacetimeGrid {
            times: crate::grid::linspace(0.0, 1.0, 5),
            axis: crate::grid::linspace(-0.5, 0.5, 4),
        };
        let samples = SampleSet::from_grid(&grid);
        FieldSample {
            j: 0,
            order: 0,
            values: vec![Complex64::new(value, 0.0); samples.len()],
            samples,
            refinement_change: 0.0,
        }
    }

    #[test]
    fn constant_and_zero_fields() {
        for (p, q) in [("4", "4"), ("8", "8/3"), ("inf", "2")] {
            let pair = admissible(exp(p), exp(q)).unwrap();
            assert!((mixed_norm(&constant_field(1.0), &pair).unwrap() - 1.0).abs() < 1e-14);
            assert_eq!(mixed_norm(&constant_field(0.0), &pair).unwrap(), 0.0);
        }
    }

    #[test]
    fn probes_have_no_norm() {
        let f = FieldSample {
            j: 0,
            order: 0,
            samples: SampleSet::probes(vec![]),
            values: vec![],
            refinement_change: 0.0,
        };
        assert!(mixed_norm(&f, &admissible(exp("4"), exp("4")).unwrap()).is_err());
    }
}
