//! Standard-Gaussian moments of scalar nonlinearities.
//!
//! Every closed form in [`crate::theory`] is parameterized by the moments
//! `<g>`, `<g^2>`, `<g'>` of the teacher nonlinearity and the student
//! activation under the weight `exp(-h^2/2)/sqrt(2*pi)`, together with the
//! derived variance ratios `delta`. Built-in functions carry exact moment
//! tables; user-registered functions are integrated by Gauss-Hermite
//! quadrature.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use faer::Mat;

use crate::config::{Architecture, StudentSpec, TeacherSpec};
use crate::error::{Error, Result};

/// Whether a nonlinearity plays the teacher role (labels) or the activation
/// role (hidden features). The two roles use different variance ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Teacher,
    Activation,
}

/// Gaussian moments of a scalar function, plus the role-specific variance
/// ratio `delta` (the ratio of the nonlinear component's variance to its
/// linear counterpart).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearityStats {
    /// `<g>`
    pub mean: f64,
    /// `<g^2>`
    pub second_moment: f64,
    /// `<g'>` (a.e. derivative for kinked functions)
    pub mean_derivative: f64,
    /// Teacher: `(<g^2> - <g'>^2) / <g'>^2`.
    /// Activation: `(<g^2> - <g>^2 - <g'>^2) / <g'>^2`.
    pub delta: f64,
    /// Role the `delta` field was computed for.
    pub role: Role,
}

/// Variance constants derived from the teacher/student moment tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedVariances {
    /// Variance of the nonlinear label component: `sigma_beta^2 sigma_X^2 * delta_f`.
    pub sigma_dy2: f64,
    /// Per-feature-total variance of the nonlinear hidden-feature component:
    /// `sigma_W^2 sigma_X^2 * delta_phi`.
    pub sigma_dz2: f64,
    /// Mean scale of each hidden feature: `sigma_W sigma_X <phi>/<phi'>`.
    pub mu_z: f64,
}

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A named scalar nonlinearity with its (a.e.) derivative.
#[derive(Clone)]
pub struct Nonlinearity {
    name: String,
    f: Arc<ScalarFn>,
    df: Arc<ScalarFn>,
    /// Exact `(mean, second_moment, mean_derivative)` for built-ins.
    exact: Option<(f64, f64, f64)>,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("Nonlinearity")
            .field("name", &self.name)
            .field("exact", &self.exact)
            .finish()
    }
}

impl Nonlinearity {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), f: Arc::new(f), df: Arc::new(df), exact: None }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, h: f64) -> f64 {
        (self.f)(h)
    }

    pub fn deriv(&self, h: f64) -> f64 {
        (self.df)(h)
    }
}

/// Registry of named nonlinearities addressable from JSON configs.
///
/// `linear`, `relu`, and `tanh` are always present.
#[derive(Debug, Clone)]
pub struct Registry {
    map: HashMap<String, Arc<Nonlinearity>>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Registry {
    pub fn builtin() -> Self {
        let mut map = HashMap::new();
        let linear = Nonlinearity {
            name: "linear".into(),
            f: Arc::new(|h| h),
            df: Arc::new(|_| 1.0),
            exact: Some((0.0, 1.0, 1.0)),
        };
        // ReLU' is the step function a.e.; the kink at 0 has measure zero.
        let relu = Nonlinearity {
            name: "relu".into(),
            f: Arc::new(|h: f64| h.max(0.0)),
            df: Arc::new(|h: f64| if h > 0.0 { 1.0 } else { 0.0 }),
            exact: Some((1.0 / (2.0 * std::f64::consts::PI).sqrt(), 0.5, 0.5)),
        };
        // Gaussian moments of tanh have no elementary closed form; the table
        // holds values integrated to 20 digits (note <f^2> + <f'> = 1).
        let tanh = Nonlinearity {
            name: "tanh".into(),
            f: Arc::new(|h: f64| h.tanh()),
            df: Arc::new(|h: f64| {
                let t = h.tanh();
                1.0 - t * t
            }),
            exact: Some((0.0, 0.394_294_490_397_841_17, 0.605_705_509_602_158_83)),
        };
        for g in [linear, relu, tanh] {
            map.insert(g.name.clone(), Arc::new(g));
        }
        Self { map }
    }

    pub fn get(&self, name: &str) -> Result<Arc<Nonlinearity>> {
        self.map
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownNonlinearity(name.to_string()))
    }

    /// Registers (or replaces) a user-supplied nonlinearity.
    pub fn register(&mut self, g: Nonlinearity) {
        self.map.insert(g.name.clone(), Arc::new(g));
    }
}

/// Gauss-Hermite nodes and weights for the weight function `exp(-t^2)`,
/// computed by the Golub-Welsch algorithm. The returned weights are
/// normalized to sum to 1, so that `<g> = sum_i w_i g(sqrt(2) t_i)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    // Jacobi matrix: zero diagonal, sqrt(k/2) off-diagonal.
    let mut j = Mat::<f64>::zeros(n, n);
    for k in 1..n {
        let e = (k as f64 / 2.0).sqrt();
        j[(k - 1, k)] = e;
        j[(k, k - 1)] = e;
    }
    let evd = j
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("Jacobi matrix eigendecomposition cannot fail");
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        nodes.push(s[i]);
        weights.push(u[(0, i)] * u[(0, i)]);
    }
    (nodes, weights)
}

fn delta_for(role: Role, mean: f64, m2: f64, md: f64) -> f64 {
    match role {
        Role::Teacher => (m2 - md * md) / (md * md),
        Role::Activation => (m2 - mean * mean - md * md) / (md * md),
    }
}

/// Computes `<g>`, `<g^2>`, `<g'>` against the standard Gaussian weight and
/// the role-specific `delta`.
///
/// Built-ins with exact moment tables bypass the quadrature so that kinked
/// functions (ReLU) stay exact; everything else uses `nodes`-point
/// Gauss-Hermite with the `sqrt(2)` change of variables.
pub fn gaussian_moments(g: &Nonlinearity, nodes: usize, role: Role) -> Result<NonlinearityStats> {
    if nodes < 32 {
        return Err(Error::InvalidConfig(format!(
            "quadrature order {nodes} < 32"
        )));
    }
    let (mean, m2, md) = match g.exact {
        Some(t) => t,
        None => {
            let (t, w) = gauss_hermite(nodes);
            let mut mean = 0.0;
            let mut m2 = 0.0;
            let mut md = 0.0;
            for (ti, wi) in t.iter().zip(&w) {
                let h = std::f64::consts::SQRT_2 * ti;
                let v = g.eval(h);
                mean += wi * v;
                m2 += wi * v * v;
                md += wi * g.deriv(h);
            }
            (mean, m2, md)
        }
    };
    if md.abs() < 1e-12 {
        return Err(Error::DegenerateNonlinearity {
            name: g.name.clone(),
            mean_derivative: md,
        });
    }
    Ok(NonlinearityStats {
        mean,
        second_moment: m2,
        mean_derivative: md,
        delta: delta_for(role, mean, m2, md),
        role,
    })
}

/// Default quadrature order used when a caller does not pick one.
pub const DEFAULT_NODES: usize = 128;

/// Derives the nonlinear-variance constants from teacher/student moment
/// tables. `stats_phi` must be `None` exactly when the student is linear
/// regression (no hidden layer).
pub fn derived_variances(
    teacher: &TeacherSpec,
    student: &StudentSpec,
    stats_f: &NonlinearityStats,
    stats_phi: Option<&NonlinearityStats>,
) -> Result<DerivedVariances> {
    if stats_f.role != Role::Teacher {
        return Err(Error::InvalidConfig(
            "teacher stats computed for the activation role".into(),
        ));
    }
    let sigma_dy2 = teacher.sigma_beta2 * teacher.sigma_x2 * stats_f.delta;
    match (student.arch, stats_phi) {
        (Architecture::LinearRegression, _) => Ok(DerivedVariances {
            sigma_dy2,
            sigma_dz2: 0.0,
            mu_z: 0.0,
        }),
        (Architecture::RandomNonlinearFeatures, Some(sp)) => {
            if sp.role != Role::Activation {
                return Err(Error::InvalidConfig(
                    "activation stats computed for the teacher role".into(),
                ));
            }
            let sigma_w2 = student.sigma_w2;
            Ok(DerivedVariances {
                sigma_dy2,
                sigma_dz2: sigma_w2 * teacher.sigma_x2 * sp.delta,
                mu_z: (sigma_w2 * teacher.sigma_x2).sqrt() * sp.mean / sp.mean_derivative,
            })
        }
        (Architecture::RandomNonlinearFeatures, None) => Err(Error::InvalidConfig(
            "random nonlinear features student requires activation stats".into(),
        )),
    }
}
