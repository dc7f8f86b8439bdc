//! Experiment configuration (TOML, versioned, unknown keys rejected).

use std::path::{Path, PathBuf};

use roughwave::kernel::{Amplitude, GaussianTest, KernelConfig};
use roughwave::parametrix::{FrequencyProfile, QuadratureOptions, Radial};
use roughwave::strichartz::{admissible, Exponent, ScalingOptions, StrichartzPair};
use roughwave::{make_metric, MetricSpec, SpacetimeMetric};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const OUTPUT_ENV: &str = "ROUGHWAVE_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_metric")]
    pub metric: MetricSpec,
    #[serde(default)]
    pub flat: GridSection,
    #[serde(default = "perturbed_grid")]
    pub perturbed: GridSection,
    #[serde(default)]
    pub eikonal: EikonalSection,
    #[serde(default)]
    pub lemma: LemmaSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub strichartz: StrichartzSection,
}

fn default_seed() -> u64 {
    20240917
}

fn default_metric() -> MetricSpec {
    MetricSpec::perturbed(0.05)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: default_seed(),
            threads: 0,
            output_dir: None,
            metric: default_metric(),
            flat: GridSection::default(),
            perturbed: perturbed_grid(),
            eikonal: EikonalSection::default(),
            lemma: LemmaSection::default(),
            kernel: KernelSection::default(),
            strichartz: StrichartzSection::default(),
        }
    }
}

/// Spacetime grid and directions for the grid suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub times: usize,
    pub points: usize,
    pub half_width: f64,
    pub directions: Vec<[f64; 3]>,
    /// Random points for the pointwise oracles.
    pub probe_points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            times: 9,
            points: 17,
            half_width: 2.5,
            directions: vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.3, -0.5, 0.8]],
            probe_points: 20,
        }
    }
}

fn perturbed_grid() -> GridSection {
    GridSection {
        times: 5,
        points: 9,
        half_width: 1.5,
        directions: vec![[0.0, 0.0, 1.0], [0.3, -0.5, 0.8]],
        probe_points: 20,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EikonalSection {
    /// Icosahedral level of the direction grid (0: 12, 1: 42, 2: 162).
    pub omega_grid_level: u32,
    /// Base points `[t, x, y, z]` of the geodesic sweep.
    pub geodesic_bases: Vec<[f64; 4]>,
    /// Points per axis of the regularity sweep on `[0,1] x [-r, r]^3`.
    pub regularity_points: usize,
    pub regularity_half_width: f64,
    pub epsilon_sweep: Vec<f64>,
    /// Allowed relative spread of the regularity constant over the sweep.
    pub stability: f64,
}

impl Default for EikonalSection {
    fn default() -> Self {
        EikonalSection {
            omega_grid_level: 1,
            geodesic_bases: vec![[0.0, 0.2, -0.1, 0.3]],
            regularity_points: 3,
            regularity_half_width: 1.0,
            epsilon_sweep: vec![0.025, 0.05, 0.1],
            stability: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaSection {
    /// Number of random pairs when no pairs file is given.
    pub pairs: usize,
    /// CSV with header `t,x0,x1,x2,s,y0,y1,y2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs_file: Option<PathBuf>,
    pub omega_grid_level: u32,
    /// Also run every pair against Minkowski space (needed to fit the case-4 constant).
    pub include_flat: bool,
}

impl Default for LemmaSection {
    fn default() -> Self {
        LemmaSection {
            pairs: 150,
            pairs_file: None,
            omega_grid_level: 1,
            include_flat: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ladder {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub j: u32,
    pub ladder: Ladder,
    pub offsets: Vec<f64>,
    /// `[t, x, y, z]` in unscaled coordinates.
    pub base: [f64; 4],
    pub direction: [f64; 3],
    pub amplitude: Amplitude,
    pub quadrature: QuadratureOptions,
    /// Flat oracle comparisons (0 disables).
    pub oracle_pairs: usize,
    pub oracle_j: u32,
    /// Probe points of the rescaling identity (0 disables).
    pub rescaling_probes: usize,
    pub rescaling_j: u32,
    pub rescaling_test: GaussianTest,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            j: 3,
            ladder: Ladder {
                lo: 0.8,
                hi: 8.0,
                points: 6,
            },
            offsets: vec![0.1],
            base: [0.0; 4],
            direction: [1.0, 0.5, 0.3],
            amplitude: Amplitude::One,
            quadrature: QuadratureOptions::default(),
            oracle_pairs: 50,
            oracle_j: 2,
            rescaling_probes: 10,
            rescaling_j: 2,
            rescaling_test: GaussianTest::default(),
        }
    }
}

impl KernelSection {
    pub fn kernel_config(&self, j: u32) -> KernelConfig {
        KernelConfig {
            j,
            amplitude: self.amplitude,
            quadrature: self.quadrature,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrichartzSection {
    /// Exponent pairs `[p, q]`, e.g. `["4", "4"]` or `["8", "8/3"]`.
    pub pairs: Vec<[String; 2]>,
    pub profile: FrequencyProfile,
    pub levels: Vec<u32>,
    pub radius: f64,
    pub resolution: usize,
    pub nodes_per_panel: usize,
    pub cartesian_points: usize,
    pub quadrature: QuadratureOptions,
    /// Run on the configured metric instead of Minkowski.
    pub perturbed: bool,
}

impl Default for StrichartzSection {
    fn default() -> Self {
        let scaling = ScalingOptions::default();
        StrichartzSection {
            pairs: vec![["4".into(), "4".into()]],
            profile: FrequencyProfile::radial(Radial::Constant),
            levels: vec![3, 4, 5, 6],
            radius: scaling.radius,
            resolution: scaling.resolution,
            nodes_per_panel: scaling.nodes_per_panel,
            cartesian_points: scaling.cartesian_points,
            quadrature: scaling.quadrature,
            perturbed: false,
        }
    }
}

impl StrichartzSection {
    pub fn scaling(&self) -> ScalingOptions {
        ScalingOptions {
            levels: self.levels.clone(),
            radius: self.radius,
            resolution: self.resolution,
            nodes_per_panel: self.nodes_per_panel,
            cartesian_points: self.cartesian_points,
            quadrature: self.quadrature,
        }
    }

    pub fn admissible_pairs(&self) -> CliResult<Vec<StrichartzPair>> {
        self.pairs
            .iter()
            .enumerate()
            .map(|(k, [p, q])| {
                let path = format!("strichartz.pairs[{k}]");
                let parse = |s: &str| {
                    s.parse::<Exponent>()
                        .map_err(|e| CliError::config(&path, e.to_string()))
                };
                admissible(parse(p)?, parse(q)?).map_err(|e| CliError::config(&path, e.to_string()))
            })
            .collect()
    }
}

/// A pair `(t, x) -> (s, y)` read from a pairs file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub t: f64,
    pub x0: f64,
    pub x1: f64,
    pub x2: f64,
    pub s: f64,
    pub y0: f64,
    pub y1: f64,
    pub y2: f64,
}

/// A validated configuration together with the inputs it references.
#[derive(Clone, Debug)]
pub struct Validated {
    pub config: ExperimentConfig,
    pub metric: SpacetimeMetric,
    pub pairs: Option<Vec<PairRecord>>,
    pub strichartz_pairs: Vec<StrichartzPair>,
    pub hash: String,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().message().trim().to_string();
            CliError::config(if path == "." { String::new() } else { path }, message)
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    /// Checks every section against its module's preconditions. `base` is the
    /// directory relative paths in the config are resolved against.
    pub fn validate(&self, base: &Path) -> CliResult<Validated> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        let metric = make_metric(&self.metric).map_err(CliError::from_core_config)?;
        for (name, grid) in [("flat", &self.flat), ("perturbed", &self.perturbed)] {
            if grid.times < 2 || grid.points < 2 {
                return Err(CliError::config(
                    format!("{name}.points"),
                    "grids need at least 2 points per axis",
                ));
            }
            if !(grid.half_width > 0.0 && grid.half_width < self.metric.domain_radius) {
                return Err(CliError::config(
                    format!("{name}.half_width"),
                    format!("must lie in (0, {})", self.metric.domain_radius),
                ));
            }
            check_directions(&format!("{name}.directions"), &grid.directions)?;
        }
        let e = &self.eikonal;
        if e.omega_grid_level > 2 {
            return Err(CliError::config(
                "eikonal.omega_grid_level",
                "levels 0, 1 and 2 are supported",
            ));
        }
        for (k, b) in e.geodesic_bases.iter().enumerate() {
            if !(0.0..1.0).contains(&b[0]) || b[1..].iter().any(|c| c.abs() > 1.0) {
                return Err(CliError::config(
                    format!("eikonal.geodesic_bases[{k}]"),
                    "base needs t in [0, 1) and |x_i| <= 1",
                ));
            }
        }
        if e.regularity_points < 2 || !(e.regularity_half_width > 0.0 && e.regularity_half_width <= 2.0) {
            return Err(CliError::config(
                "eikonal.regularity_points",
                "need >= 2 points on a half width in (0, 2]",
            ));
        }
        for (k, eps) in e.epsilon_sweep.iter().enumerate() {
            if !(*eps > 0.0 && *eps <= self.metric.epsilon_max) {
                return Err(CliError::config(
                    format!("eikonal.epsilon_sweep[{k}]"),
                    format!("epsilon {eps} outside (0, {}]", self.metric.epsilon_max),
                ));
            }
        }
        if self.lemma.omega_grid_level > 2 {
            return Err(CliError::config(
                "lemma.omega_grid_level",
                "levels 0, 1 and 2 are supported",
            ));
        }
        let pairs = match &self.lemma.pairs_file {
            Some(file) => Some(read_pairs(&base.join(file))?),
            None => None,
        };
        self.validate_kernel()?;
        let s = &self.strichartz;
        let strichartz_pairs = s.admissible_pairs()?;
        s.scaling()
            .validate()
            .map_err(|e| CliError::from_core_config(e).within("strichartz"))?;
        s.profile
            .validate()
            .map_err(|e| CliError::from_core_config(e).within("strichartz"))?;
        Ok(Validated {
            config: self.clone(),
            metric,
            pairs,
            strichartz_pairs,
            hash: self.hash(),
        })
    }

    fn validate_kernel(&self) -> CliResult<()> {
        let k = &self.kernel;
        let l = &k.ladder;
        if !(l.lo > 0.0 && l.hi > l.lo) || l.points < 2 {
            return Err(CliError::config(
                "kernel.ladder",
                "need 0 < lo < hi and at least 2 points",
            ));
        }
        let scale = 2f64.powi(k.j as i32);
        if !(k.base[0] >= 0.0 && k.base[0] + l.hi / scale <= 1.0) {
            return Err(CliError::config(
                "kernel.ladder.hi",
                format!("gap {} leaves [0, 2^j] from t = {}", l.hi, k.base[0]),
            ));
        }
        if k.j > 7 || k.oracle_j > 6 {
            return Err(CliError::config("kernel.j", "levels above 7 are not supported"));
        }
        if k.rescaling_probes > 0 && k.rescaling_j > 3 {
            return Err(CliError::config(
                "kernel.rescaling_j",
                "the rescaling check is limited to j <= 3",
            ));
        }
        if k.offsets.iter().any(|o| !(*o > 0.0)) {
            return Err(CliError::config("kernel.offsets", "offsets must be positive"));
        }
        check_directions("kernel.direction", &[k.direction])?;
        k.amplitude.validate().map_err(CliError::from_core_config)?;
        k.quadrature
            .validate()
            .map_err(|e| CliError::from_core_config(e).within("kernel"))?;
        Ok(())
    }
}

fn check_directions(path: &str, dirs: &[[f64; 3]]) -> CliResult<()> {
    for (k, d) in dirs.iter().enumerate() {
        let n = d.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(CliError::config(format!("{path}[{k}]"), "direction must be nonzero"));
        }
    }
    Ok(())
}

/// A pair as written in a JSON pairs file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonPair {
    t: f64,
    x: [f64; 3],
    s: f64,
    y: [f64; 3],
}

/// Reads a pairs file: a JSON list of `{t, x, s, y}` objects, or a CSV with
/// columns `t, x0, x1, x2, s, y0, y1, y2`. An empty file holds no pairs.
pub fn read_pairs(path: &Path) -> CliResult<Vec<PairRecord>> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("lemma.pairs_file", format!("cannot read {file}: {e}")))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let records = if text.trim_start().starts_with('[') {
        read_json_pairs(&file, &text)?
    } else {
        read_csv_pairs(&file, &text)?
    };
    for (row, record) in records.iter().enumerate() {
        if !(0.0 <= record.t && record.t < record.s && record.s <= 1.0) {
            return Err(CliError::config(
                "lemma.pairs_file",
                format!("row {}: need 0 <= t < s <= 1", row + 1),
            ));
        }
    }
    Ok(records)
}

fn read_json_pairs(file: &str, text: &str) -> CliResult<Vec<PairRecord>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let pairs: Vec<JsonPair> = serde_path_to_error::deserialize(de).map_err(|e| {
        let column = e.path().iter().next_back().map(|s| s.to_string()).unwrap_or_default();
        CliError::schema(file, column.trim_start_matches('.'), e.inner().to_string())
    })?;
    Ok(pairs
        .into_iter()
        .map(|p| PairRecord {
            t: p.t,
            x0: p.x[0],
            x1: p.x[1],
            x2: p.x[2],
            s: p.s,
            y0: p.y[0],
            y1: p.y[1],
            y2: p.y[2],
        })
        .collect())
}

fn read_csv_pairs(file: &str, text: &str) -> CliResult<Vec<PairRecord>> {
    let file = file.to_string();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CliError::schema(&file, "", e.to_string()))?
        .clone();
    for name in ["t", "x0", "x1", "x2", "s", "y0", "y1", "y2"] {
        if !headers.iter().any(|h| h == name) {
            return Err(CliError::schema(&file, name, "missing column"));
        }
    }
    let mut out = Vec::new();
    for (row, record) in reader.deserialize::<PairRecord>().enumerate() {
        let record = record.map_err(|e| {
            let column = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err
                    .field()
                    .and_then(|f| headers.get(f as usize))
                    .unwrap_or_default()
                    .to_string(),
                _ => String::new(),
            };
            CliError::schema(&file, &column, format!("row {}: {e}", row + 1))
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory: explicit flag, then the config, then `$ROUGHWAVE_OUT`, then `roughwave-out`.
pub fn output_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("roughwave-out"))
}
