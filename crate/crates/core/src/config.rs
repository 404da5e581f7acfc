//! Experiment configuration: geometry (counts and ratios), teacher/student
//! specification, the JSON config document consumed by the CLI, and the
//! deterministic RNG contract shared by every sampler.
//!
//! All types here are immutable after construction and safe to share across
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinearity::{
    self, DerivedVariances, NonlinearityStats, Registry, Role, DEFAULT_NODES,
};

/// Student architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    LinearRegression,
    RandomNonlinearFeatures,
}

/// Counts `M`, `N_f`, `N_p` and the dimensionless ratios `alpha_f = N_f/M`,
/// `alpha_p = N_p/M` that govern the thermodynamic geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExperimentShape {
    m: usize,
    n_f: usize,
    n_p: usize,
    alpha_f: f64,
    alpha_p: f64,
}

impl ExperimentShape {
    /// Builds a shape from integer counts; ratios are derived exactly.
    pub fn from_counts(m: usize, n_f: usize, n_p: usize) -> Result<Self> {
        if m < 1 || n_f < 1 || n_p < 1 {
            return Err(Error::InvalidConfig(format!(
                "counts must be >= 1, got m={m}, n_f={n_f}, n_p={n_p}"
            )));
        }
        Ok(Self {
            m,
            n_f,
            n_p,
            alpha_f: n_f as f64 / m as f64,
            alpha_p: n_p as f64 / m as f64,
        })
    }

    /// Builds a shape from `M` and target ratios. Counts are rounded to the
    /// nearest integer with a minimum of 1, and the stored ratios are
    /// recomputed from the rounded counts.
    pub fn from_ratios(m: usize, alpha_f: f64, alpha_p: f64) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidConfig(format!("m must be >= 1, got {m}")));
        }
        for (name, a) in [("alpha_f", alpha_f), ("alpha_p", alpha_p)] {
            if !a.is_finite() || a <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and > 0, got {a}"
                )));
            }
        }
        let n_f = ((alpha_f * m as f64).round() as usize).max(1);
        let n_p = ((alpha_p * m as f64).round() as usize).max(1);
        Self::from_counts(m, n_f, n_p)
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n_f(&self) -> usize {
        self.n_f
    }
    pub fn n_p(&self) -> usize {
        self.n_p
    }
    pub fn alpha_f(&self) -> f64 {
        self.alpha_f
    }
    pub fn alpha_p(&self) -> f64 {
        self.alpha_p
    }
}

/// Ratio-to-count construction of an experiment shape (nearest integer,
/// minimum 1; stored ratios recomputed from the rounded counts).
pub fn shape_from_ratios(m: usize, alpha_f: f64, alpha_p: f64) -> Result<ExperimentShape> {
    ExperimentShape::from_ratios(m, alpha_f, alpha_p)
}

/// Data distribution: teacher nonlinearity and the three variance scales.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeacherSpec {
    /// Registered name of the teacher nonlinearity.
    pub f: String,
    /// Variance of each ground-truth parameter.
    pub sigma_beta2: f64,
    /// Total input-feature variance scale; per-coordinate variance is
    /// `sigma_x2 / N_f`.
    pub sigma_x2: f64,
    /// Label-noise variance.
    pub sigma_eps2: f64,
}

impl TeacherSpec {
    pub fn new(f: impl Into<String>, sigma_beta2: f64, sigma_x2: f64, sigma_eps2: f64) -> Self {
        Self { f: f.into(), sigma_beta2, sigma_x2, sigma_eps2 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_beta2 >= 0.0) || !(self.sigma_eps2 >= 0.0) {
            return Err(Error::InvalidConfig(
                "teacher variances must be >= 0".into(),
            ));
        }
        if !(self.sigma_x2 > 0.0) {
            return Err(Error::InvalidConfig("sigma_x2 must be > 0".into()));
        }
        Ok(())
    }
}

/// Model architecture: linear regression or random nonlinear features, with
/// the random-layer weight scale and ridge parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentSpec {
    pub arch: Architecture,
    /// Activation name; required iff `arch` is random nonlinear features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<String>,
    /// Variance scale of random-layer weights (per entry: `sigma_w2 / N_p`).
    #[serde(default = "default_unit")]
    pub sigma_w2: f64,
    /// Ridge regularization. `0` is legal for analytic-only evaluation; the
    /// numerical path requires `lambda > 0`.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_unit() -> f64 {
    1.0
}

/// Default numerical ridge.
pub const DEFAULT_LAMBDA: f64 = 1e-6;

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

impl StudentSpec {
    pub fn linear_regression(lambda: f64) -> Self {
        Self { arch: Architecture::LinearRegression, phi: None, sigma_w2: 1.0, lambda }
    }

    pub fn random_nonlinear_features(phi: impl Into<String>, sigma_w2: f64, lambda: f64) -> Self {
        Self {
            arch: Architecture::RandomNonlinearFeatures,
            phi: Some(phi.into()),
            sigma_w2,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        match self.arch {
            Architecture::LinearRegression => Ok(()),
            Architecture::RandomNonlinearFeatures => {
                if self.phi.is_none() {
                    return Err(Error::InvalidConfig(
                        "random nonlinear features student requires phi".into(),
                    ));
                }
                if !(self.sigma_w2 > 0.0) {
                    return Err(Error::InvalidConfig("sigma_w2 must be > 0".into()));
                }
                Ok(())
            }
        }
    }

    /// Activation name, defaulting to ReLU for the nonlinear architecture.
    pub fn phi_name(&self) -> Option<&str> {
        match self.arch {
            Architecture::LinearRegression => None,
            Architecture::RandomNonlinearFeatures => {
                Some(self.phi.as_deref().unwrap_or("relu"))
            }
        }
    }
}

/// Deterministic randomness contract. The same `(seed, stream_id)` yields a
/// bit-identical sample stream on the same build; distinct stream ids yield
/// statistically independent streams.
///
/// Streams are ChaCha8 counters; normal variates are drawn with the ziggurat
/// sampler fixed by the locked `rand_distr` version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngContract {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngContract {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Instantiates the generator for this (seed, stream).
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Names of the sampling algorithms pinned by this build, recorded in output
/// metadata.
pub const RNG_ALGORITHM: &str = "chacha8";
pub const NORMAL_SAMPLER: &str = "ziggurat";

// ---------------------------------------------------------------------------
// JSON experiment-config document
// ---------------------------------------------------------------------------

/// Geometry field of the config document. Exactly one of the count pair
/// (`n_f`, `n_p`) or the ratio pair (`alpha_f`, `alpha_p`) must be given;
/// `n_p`/`alpha_p` may be omitted for linear regression (tied to the feature
/// axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_f: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_p: Option<f64>,
}

/// One sweep axis: either an explicit value list or a range with a point
/// count and linear/log spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default)]
    pub scale: GridScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScale {
    #[default]
    Linear,
    Log,
}

impl GridSpec {
    /// Expands to a strictly increasing value list.
    pub fn expand(&self) -> Result<Vec<f64>> {
        let vals = match (&self.values, self.start, self.stop, self.points) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(a), Some(b), Some(n)) => {
                if n == 0 {
                    return Err(Error::InvalidConfig("grid: empty axis".into()));
                }
                if !(a.is_finite() && b.is_finite() && a < b) && n > 1 {
                    return Err(Error::InvalidConfig(format!(
                        "grid: need start < stop, got [{a}, {b}]"
                    )));
                }
                match self.scale {
                    GridScale::Linear => (0..n)
                        .map(|i| {
                            if n == 1 {
                                a
                            } else {
                                a + (b - a) * i as f64 / (n - 1) as f64
                            }
                        })
                        .collect(),
                    GridScale::Log => {
                        if a <= 0.0 {
                            return Err(Error::InvalidConfig(
                                "grid: log scale requires start > 0".into(),
                            ));
                        }
                        let (la, lb) = (a.ln(), b.ln());
                        (0..n)
                            .map(|i| {
                                if n == 1 {
                                    a
                                } else {
                                    (la + (lb - la) * i as f64 / (n - 1) as f64).exp()
                                }
                            })
                            .collect()
                    }
                }
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "grid: give either values or start/stop/points".into(),
                ))
            }
        };
        if vals.is_empty() {
            return Err(Error::InvalidConfig("grid: empty axis".into()));
        }
        if !vals.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidConfig(
                "grid: values must be finite and > 0".into(),
            ));
        }
        if !vals.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "grid: values must be strictly increasing".into(),
            ));
        }
        Ok(vals)
    }
}

/// Optional ratio sweep: grids over `alpha_f` and/or `alpha_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_f: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_p: Option<GridSpec>,
}

/// Teacher field of the config document. Noise may be given directly
/// (`sigma_eps2`) or through the signal-to-noise ratio
/// `snr = (sigma_beta2*sigma_x2 + sigma_dy2)/sigma_eps2`; default `snr = 10`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    #[serde(default = "default_teacher_f")]
    pub f: String,
    #[serde(default = "default_unit")]
    pub sigma_beta2: f64,
    #[serde(default = "default_unit")]
    pub sigma_x2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_eps2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr: Option<f64>,
}

fn default_teacher_f() -> String {
    "linear".into()
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            f: default_teacher_f(),
            sigma_beta2: 1.0,
            sigma_x2: 1.0,
            sigma_eps2: None,
            snr: None,
        }
    }
}

pub const DEFAULT_SNR: f64 = 10.0;

/// The JSON experiment-config document. Unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub shape: ShapeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxes>,
    #[serde(default)]
    pub teacher: TeacherConfig,
    pub student: StudentSpec,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_replicates() -> usize {
    1000
}

/// A validated configuration with all derived constants in place.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// Base geometry (the shape field, with linear-regression tying applied).
    pub shape: ExperimentShape,
    /// Grid of `(alpha_f, alpha_p)` points; a single entry when no sweep is
    /// requested.
    pub grid: Vec<(f64, f64)>,
    pub teacher: TeacherSpec,
    pub student: StudentSpec,
    pub stats_f: NonlinearityStats,
    pub stats_phi: Option<NonlinearityStats>,
    pub derived: DerivedVariances,
    pub replicates: usize,
    pub seed: u64,
}

impl Resolved {
    /// Shape at a grid point, reusing the configured `M`.
    pub fn shape_at(&self, alpha_f: f64, alpha_p: f64) -> Result<ExperimentShape> {
        ExperimentShape::from_ratios(self.shape.m(), alpha_f, alpha_p)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Validates the document and resolves every derived constant.
    pub fn resolve(&self, registry: &Registry) -> Result<Resolved> {
        let student = self.student.clone();
        student.validate()?;
        let is_linreg = student.arch == Architecture::LinearRegression;

        // Geometry: counts take precedence over ratios; mixing is rejected.
        let shape = match (
            self.shape.n_f,
            self.shape.n_p,
            self.shape.alpha_f,
            self.shape.alpha_p,
        ) {
            (Some(nf), np, None, None) => {
                let np = match (np, is_linreg) {
                    (Some(np), true) if np != nf => {
                        return Err(Error::InvalidConfig(format!(
                            "linear regression requires n_p == n_f, got {np} != {nf}"
                        )))
                    }
                    (Some(np), _) => np,
                    (None, true) => nf,
                    (None, false) => {
                        return Err(Error::InvalidConfig(
                            "shape: n_p required for random nonlinear features".into(),
                        ))
                    }
                };
                ExperimentShape::from_counts(self.shape.m, nf, np)?
            }
            (None, None, Some(af), ap) => {
                let ap = match (ap, is_linreg) {
                    (Some(ap), true) if ap != af => {
                        return Err(Error::InvalidConfig(format!(
                            "linear regression requires alpha_p == alpha_f, got {ap} != {af}"
                        )))
                    }
                    (Some(ap), _) => ap,
                    (None, true) => af,
                    (None, false) => {
                        return Err(Error::InvalidConfig(
                            "shape: alpha_p required for random nonlinear features".into(),
                        ))
                    }
                };
                ExperimentShape::from_ratios(self.shape.m, af, ap)?
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "shape: give counts (n_f, n_p) or ratios (alpha_f, alpha_p), not both".into(),
                ))
            }
        };

        // Sweep grid.
        let grid = match &self.sweep {
            None => vec![(shape.alpha_f(), shape.alpha_p())],
            Some(axes) => {
                if is_linreg && axes.alpha_p.is_some() {
                    return Err(Error::InvalidConfig(
                        "linear regression sweeps alpha_f only (alpha_p is tied)".into(),
                    ));
                }
                let afs = match &axes.alpha_f {
                    Some(g) => g.expand()?,
                    None => vec![shape.alpha_f()],
                };
                let aps = match &axes.alpha_p {
                    Some(g) => Some(g.expand()?),
                    None => None,
                };
                let mut grid = Vec::new();
                match aps {
                    None => {
                        for &af in &afs {
                            grid.push((af, if is_linreg { af } else { shape.alpha_p() }));
                        }
                    }
                    Some(aps) => {
                        for &af in &afs {
                            for &ap in &aps {
                                grid.push((af, ap));
                            }
                        }
                    }
                }
                grid
            }
        };

        // Teacher resolution, including snr -> sigma_eps2.
        let f = registry.get(&self.teacher.f)?;
        let stats_f = nonlinearity::gaussian_moments(&f, DEFAULT_NODES, Role::Teacher)?;
        let sigma_dy2 =
            self.teacher.sigma_beta2 * self.teacher.sigma_x2 * stats_f.delta;
        let sigma_eps2 = match (self.teacher.sigma_eps2, self.teacher.snr) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "teacher: give sigma_eps2 or snr, not both".into(),
                ))
            }
            (Some(e), None) => e,
            (None, snr) => {
                let snr = snr.unwrap_or(DEFAULT_SNR);
                if !(snr > 0.0) {
                    return Err(Error::InvalidConfig("snr must be > 0".into()));
                }
                (self.teacher.sigma_beta2 * self.teacher.sigma_x2 + sigma_dy2) / snr
            }
        };
        let teacher = TeacherSpec::new(
            self.teacher.f.clone(),
            self.teacher.sigma_beta2,
            self.teacher.sigma_x2,
            sigma_eps2,
        );
        teacher.validate()?;

        let stats_phi = match student.phi_name() {
            None => None,
            Some(name) => {
                let phi = registry.get(name)?;
                Some(nonlinearity::gaussian_moments(
                    &phi,
                    DEFAULT_NODES,
                    Role::Activation,
                )?)
            }
        };
        let derived =
            nonlinearity::derived_variances(&teacher, &student, &stats_f, stats_phi.as_ref())?;

        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be >= 1".into()));
        }

        Ok(Resolved {
            shape,
            grid,
            teacher,
            student,
            stats_f,
            stats_phi,
            derived,
            replicates: self.replicates,
            seed: self.seed,
        })
    }
}
