//! Teacher-model sampling: ground-truth parameters, input features, label
//! noise, and labels, with the decomposition of true labels into
//! statistically independent linear and nonlinear parts.

use std::io::Write;
use std::sync::Arc;

use faer::{Col, Mat};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{ExperimentShape, TeacherSpec};
use crate::error::{Error, Result};
use crate::nonlinearity::{self, Nonlinearity, NonlinearityStats, Registry, Role};

/// Ground-truth parameter vector, entries i.i.d. `N(0, sigma_beta2)`.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub beta: Col<f64>,
}

/// One sampled data set with its label decomposition:
/// `y = y_star + eps` and `y_star = y_lin + y_nl` elementwise.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// `M x N_f` observation matrix, entries i.i.d. `N(0, sigma_x2/N_f)`.
    pub x: Mat<f64>,
    /// Observed labels.
    pub y: Col<f64>,
    /// True labels.
    pub y_star: Col<f64>,
    /// Label noise.
    pub eps: Col<f64>,
    /// Linear label part `X beta`.
    pub y_lin: Col<f64>,
    /// Nonlinear label part.
    pub y_nl: Col<f64>,
}

impl Dataset {
    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    /// Debug dump: one row per point, columns `y, y_star, eps, x1..x_{N_f}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "y,y_star,eps")?;
        for j in 0..self.x.ncols() {
            write!(w, ",x{}", j + 1)?;
        }
        writeln!(w)?;
        for i in 0..self.m() {
            write!(
                w,
                "{},{},{}",
                crate::fmt_g17(self.y[i]),
                crate::fmt_g17(self.y_star[i]),
                crate::fmt_g17(self.eps[i])
            )?;
            for j in 0..self.x.ncols() {
                write!(w, ",{}", crate::fmt_g17(self.x[(i, j)]))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Draws from the teacher model. Construct once per experiment; sampling is
/// deterministic under the caller-supplied RNG stream.
#[derive(Debug, Clone)]
pub struct TeacherSampler {
    teacher: TeacherSpec,
    f: Arc<Nonlinearity>,
    stats_f: NonlinearityStats,
    /// Teachers named "linear" bypass the normalization so that
    /// `y_star == X beta` holds exactly.
    linear: bool,
}

impl TeacherSampler {
    pub fn new(teacher: &TeacherSpec, registry: &Registry) -> Result<Self> {
        teacher.validate()?;
        let f = registry.get(&teacher.f)?;
        let stats_f =
            nonlinearity::gaussian_moments(&f, nonlinearity::DEFAULT_NODES, Role::Teacher)?;
        Ok(Self {
            teacher: teacher.clone(),
            linear: teacher.f == "linear",
            f,
            stats_f,
        })
    }

    pub fn teacher(&self) -> &TeacherSpec {
        &self.teacher
    }

    pub fn stats_f(&self) -> &NonlinearityStats {
        &self.stats_f
    }

    /// i.i.d. `N(0, sigma_beta2)` ground-truth parameters.
    pub fn sample_ground_truth<R: Rng>(&self, shape: &ExperimentShape, rng: &mut R) -> GroundTruth {
        let sd = self.teacher.sigma_beta2.sqrt();
        GroundTruth {
            beta: Col::from_fn(shape.n_f(), |_| {
                sd * rng.sample::<f64, _>(StandardNormal)
            }),
        }
    }

    /// Samples `X`, `eps`, and the full label decomposition for `m` points.
    ///
    /// The draw order (X, then eps) is part of the determinism contract.
    pub fn sample_dataset<R: Rng>(
        &self,
        shape: &ExperimentShape,
        beta: &GroundTruth,
        rng: &mut R,
    ) -> Result<Dataset> {
        self.sample_dataset_sized(shape, shape.m(), beta, rng)
    }

    /// Same as [`sample_dataset`](Self::sample_dataset) with an explicit point
    /// count (test sets may differ in size from `M`).
    pub fn sample_dataset_sized<R: Rng>(
        &self,
        shape: &ExperimentShape,
        m: usize,
        beta: &GroundTruth,
        rng: &mut R,
    ) -> Result<Dataset> {
        if beta.beta.nrows() != shape.n_f() {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries, shape.n_f = {}",
                beta.beta.nrows(),
                shape.n_f()
            )));
        }
        let n_f = shape.n_f();
        let x_sd = (self.teacher.sigma_x2 / n_f as f64).sqrt();
        let x = Mat::from_fn(m, n_f, |_, _| x_sd * rng.sample::<f64, _>(StandardNormal));
        let eps_sd = self.teacher.sigma_eps2.sqrt();
        let eps = Col::from_fn(m, |_| eps_sd * rng.sample::<f64, _>(StandardNormal));

        let y_lin: Col<f64> = &x * &beta.beta;
        let y_star = self.true_labels(&y_lin);
        let y_nl = &y_star - &y_lin;
        let y = &y_star + &eps;
        Ok(Dataset { x, y, y_star, eps, y_lin, y_nl })
    }

    /// Samples an observation matrix alone (no labels), as used by the
    /// kernel eigenvalue protocol.
    pub fn sample_features<R: Rng>(
        &self,
        shape: &ExperimentShape,
        m: usize,
        rng: &mut R,
    ) -> Mat<f64> {
        let x_sd = (self.teacher.sigma_x2 / shape.n_f() as f64).sqrt();
        Mat::from_fn(m, shape.n_f(), |_, _| {
            x_sd * rng.sample::<f64, _>(StandardNormal)
        })
    }

    /// Applies the teacher nonlinearity with its variance normalization to a
    /// vector of linear responses `X beta`.
    pub fn true_labels(&self, y_lin: &Col<f64>) -> Col<f64> {
        if self.linear {
            return y_lin.clone();
        }
        let scale = (self.teacher.sigma_beta2 * self.teacher.sigma_x2).sqrt();
        if scale == 0.0 {
            // No signal: the prefactor vanishes and the argument is undefined.
            return Col::zeros(y_lin.nrows());
        }
        let pre = scale / self.stats_f.mean_derivative;
        Col::from_fn(y_lin.nrows(), |i| pre * self.f.eval(y_lin[i] / scale))
    }
}
