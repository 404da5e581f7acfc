//! Hidden features, ridge solves (primal or dual, whichever keeps the
//! factored matrix at size `min(M, N_p)`), test-error evaluation, and the
//! empirical susceptibility traces of the fitted kernel.

use std::sync::Arc;

use faer::linalg::matmul::triangular::{matmul as tri_matmul, BlockStructure};
use faer::linalg::solvers::Solve;
use faer::{Accum, Col, Mat, Par, Side};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{Architecture, ExperimentShape, StudentSpec};
use crate::error::{Error, Result};
use crate::nonlinearity::{self, Nonlinearity, NonlinearityStats, Registry, Role};

/// Forces sequential kernels inside faer so that results are independent of
/// the thread budget; parallelism in this crate lives at the replicate level.
pub fn ensure_sequential_linalg() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| faer::set_global_parallelism(Par::Seq));
}

/// Lower triangle of `Z^T Z + lambda I` (upper triangle left at zero).
pub(crate) fn gram_primal_lower(z: &Mat<f64>, lambda: f64) -> Mat<f64> {
    let n = z.ncols();
    let mut g = Mat::zeros(n, n);
    tri_matmul(
        g.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        z.transpose(),
        BlockStructure::Rectangular,
        z.as_ref(),
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    for i in 0..n {
        g[(i, i)] += lambda;
    }
    g
}

/// Lower triangle of `Z Z^T + lambda I`.
pub(crate) fn gram_dual_lower(z: &Mat<f64>, lambda: f64) -> Mat<f64> {
    let m = z.nrows();
    let mut g = Mat::zeros(m, m);
    tri_matmul(
        g.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        z.as_ref(),
        BlockStructure::Rectangular,
        z.transpose(),
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    for i in 0..m {
        g[(i, i)] += lambda;
    }
    g
}

/// Hidden-feature matrix with its random first layer and the pieces of the
/// mean/linear/nonlinear decomposition.
#[derive(Debug, Clone)]
pub struct HiddenFeatures {
    /// `M x N_p` hidden features.
    pub z: Mat<f64>,
    /// Random `N_f x N_p` first layer; `None` for linear regression, where
    /// the layer plays the identity role and `Z = X`.
    pub w_matrix: Option<Mat<f64>>,
    /// Mean of every entry of `z`: `mu_z / sqrt(N_p)`.
    mu_entry: f64,
}

impl HiddenFeatures {
    pub fn n_p(&self) -> usize {
        self.z.ncols()
    }

    /// The constant mean part of each entry, `mu_z / sqrt(N_p)`.
    pub fn mean_part(&self) -> f64 {
        self.mu_entry
    }

    /// Linear part `X W` of the decomposition (equal to `X` for linear
    /// regression).
    pub fn linear_part(&self, x: &Mat<f64>) -> Mat<f64> {
        match &self.w_matrix {
            Some(w) => x * w,
            None => x.clone(),
        }
    }

    /// Nonlinear remainder `Z - mean - X W`.
    pub fn nonlinear_part(&self, x: &Mat<f64>) -> Mat<f64> {
        let lin = self.linear_part(x);
        Mat::from_fn(self.z.nrows(), self.z.ncols(), |i, j| {
            self.z[(i, j)] - self.mu_entry - lin[(i, j)]
        })
    }
}

/// Builds hidden features for a student architecture. Construct once per
/// experiment; `W` sampling is deterministic under the caller's RNG stream.
#[derive(Debug, Clone)]
pub struct StudentSampler {
    student: StudentSpec,
    sigma_x2: f64,
    phi: Option<Arc<Nonlinearity>>,
    stats_phi: Option<NonlinearityStats>,
    linear_phi: bool,
}

impl StudentSampler {
    pub fn new(student: &StudentSpec, sigma_x2: f64, registry: &Registry) -> Result<Self> {
        student.validate()?;
        let (phi, stats_phi, linear_phi) = match student.phi_name() {
            None => (None, None, false),
            Some(name) => {
                let phi = registry.get(name)?;
                let stats = nonlinearity::gaussian_moments(
                    &phi,
                    nonlinearity::DEFAULT_NODES,
                    Role::Activation,
                )?;
                (Some(phi), Some(stats), name == "linear")
            }
        };
        Ok(Self {
            student: student.clone(),
            sigma_x2,
            phi,
            stats_phi,
            linear_phi,
        })
    }

    pub fn student(&self) -> &StudentSpec {
        &self.student
    }

    pub fn stats_phi(&self) -> Option<&NonlinearityStats> {
        self.stats_phi.as_ref()
    }

    /// Draws the random layer: entries i.i.d. `N(0, sigma_w2/N_p)`. Returns
    /// `None` for linear regression.
    pub fn sample_w<R: Rng>(&self, shape: &ExperimentShape, rng: &mut R) -> Option<Mat<f64>> {
        match self.student.arch {
            Architecture::LinearRegression => None,
            Architecture::RandomNonlinearFeatures => {
                let sd = (self.student.sigma_w2 / shape.n_p() as f64).sqrt();
                Some(Mat::from_fn(shape.n_f(), shape.n_p(), |_, _| {
                    sd * rng.sample::<f64, _>(StandardNormal)
                }))
            }
        }
    }

    /// Applies the architecture map to an observation matrix.
    ///
    /// For the nonlinear architecture this is the normalized activation
    /// `z = sigma_W sigma_X / (<phi'> sqrt(N_p)) * phi(sqrt(N_p)/(sigma_W sigma_X) X W)`;
    /// a linear activation short-circuits to `Z = X W` exactly.
    pub fn hidden_features(&self, x: &Mat<f64>, w: Option<&Mat<f64>>) -> Result<HiddenFeatures> {
        ensure_sequential_linalg();
        match self.student.arch {
            Architecture::LinearRegression => Ok(HiddenFeatures {
                z: x.clone(),
                w_matrix: None,
                mu_entry: 0.0,
            }),
            Architecture::RandomNonlinearFeatures => {
                let w = w.ok_or_else(|| {
                    Error::DimensionMismatch("random features require a sampled W".into())
                })?;
                if w.nrows() != x.ncols() {
                    return Err(Error::DimensionMismatch(format!(
                        "W has {} rows, X has {} columns",
                        w.nrows(),
                        x.ncols()
                    )));
                }
                let n_p = w.ncols();
                let lin = x * w;
                let stats = self.stats_phi.as_ref().expect("validated at construction");
                let (z, mu_entry) = if self.linear_phi {
                    (lin, 0.0)
                } else {
                    let phi = self.phi.as_ref().expect("validated at construction");
                    let sw_sx = (self.student.sigma_w2 * self.sigma_x2).sqrt();
                    let arg_scale = (n_p as f64).sqrt() / sw_sx;
                    let pre = sw_sx / (stats.mean_derivative * (n_p as f64).sqrt());
                    let z = Mat::from_fn(x.nrows(), n_p, |i, j| {
                        pre * phi.eval(arg_scale * lin[(i, j)])
                    });
                    let mu_z = sw_sx * stats.mean / stats.mean_derivative;
                    (z, mu_z / (n_p as f64).sqrt())
                };
                Ok(HiddenFeatures {
                    z,
                    w_matrix: Some(w.clone()),
                    mu_entry,
                })
            }
        }
    }
}

/// Solution of the ridge problem on one training set.
#[derive(Debug, Clone)]
pub struct RidgeSolution {
    /// Fit parameters.
    pub w_hat: Col<f64>,
    /// Training residuals `y - Z w_hat`.
    pub residuals: Col<f64>,
    /// Mean squared training residual.
    pub train_error: f64,
}

/// Full fit record: solution plus the estimated ground truth and the
/// residual contraction `u_hat = X^T (y - y_hat)`.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub w_hat: Col<f64>,
    /// `W w_hat` (equal to `w_hat` for linear regression).
    pub beta_hat: Col<f64>,
    pub residuals: Col<f64>,
    pub u_hat: Col<f64>,
    pub train_error: f64,
}

fn check_finite(z: &Mat<f64>, y: &Col<f64>) -> Result<()> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite labels".into()));
    }
    for j in 0..z.ncols() {
        for i in 0..z.nrows() {
            if !z[(i, j)].is_finite() {
                return Err(Error::NumericalFailure("non-finite features".into()));
            }
        }
    }
    Ok(())
}

/// Solves `(lambda I + Z^T Z) w = Z^T y`, through the dual system
/// `(lambda I + Z Z^T) a = y`, `w = Z^T a` when `N_p > M`. Both paths agree
/// to solver precision.
pub fn ridge_solve(z: &Mat<f64>, y: &Col<f64>, lambda: f64) -> Result<RidgeSolution> {
    ensure_sequential_linalg();
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ridge solve requires lambda > 0, got {lambda}"
        )));
    }
    if z.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "Z has {} rows, y has {}",
            z.nrows(),
            y.nrows()
        )));
    }
    check_finite(z, y)?;
    let (m, n_p) = (z.nrows(), z.ncols());
    let w_hat: Col<f64> = if n_p <= m {
        let g = gram_primal_lower(z, lambda);
        let llt = g
            .llt(Side::Lower)
            .map_err(|_| Error::NumericalFailure("primal Cholesky failed".into()))?;
        let rhs: Col<f64> = z.transpose() * y;
        llt.solve(&rhs)
    } else {
        let g = gram_dual_lower(z, lambda);
        let llt = g
            .llt(Side::Lower)
            .map_err(|_| Error::NumericalFailure("dual Cholesky failed".into()))?;
        let a: Col<f64> = llt.solve(y);
        z.transpose() * &a
    };
    let residuals = y - &(z * &w_hat);
    let train_error = residuals.squared_norm_l2() / m as f64;
    Ok(RidgeSolution {
        w_hat,
        residuals,
        train_error,
    })
}

/// Ridge fit with the derived quantities filled in from the architecture.
pub fn fit(
    x: &Mat<f64>,
    hf: &HiddenFeatures,
    y: &Col<f64>,
    lambda: f64,
) -> Result<FitResult> {
    let sol = ridge_solve(&hf.z, y, lambda)?;
    let beta_hat = match &hf.w_matrix {
        Some(w) => w * &sol.w_hat,
        None => sol.w_hat.clone(),
    };
    let u_hat = x.transpose() * &sol.residuals;
    Ok(FitResult {
        w_hat: sol.w_hat,
        beta_hat,
        residuals: sol.residuals,
        u_hat,
        train_error: sol.train_error,
    })
}

/// Mean squared residual on an independently drawn test set.
pub fn test_error(w_hat: &Col<f64>, z_test: &Mat<f64>, y_test: &Col<f64>) -> f64 {
    let r = y_test - z_test * w_hat;
    r.squared_norm_l2() / y_test.nrows() as f64
}

/// Empirical scalar susceptibilities measured on one sampled kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalSusceptibilities {
    /// `(1/N_p) Tr (lambda I + Z^T Z)^{-1}`
    pub nu: f64,
    /// `(1/M) Tr [I - Z (lambda I + Z^T Z)^{-1} Z^T]`
    pub chi: f64,
    /// `(1/N_f) Tr [I - W (lambda I + Z^T Z)^{-1} Z^T X]`, with `W = I` for
    /// linear regression.
    pub kappa: f64,
}

fn trace_of_inverse_lower(g_lower: &Mat<f64>) -> Result<(faer::linalg::solvers::Llt<f64>, f64)> {
    let llt = g_lower
        .llt(Side::Lower)
        .map_err(|_| Error::NumericalFailure("Cholesky failed in susceptibility trace".into()))?;
    let n = g_lower.nrows();
    let inv = llt.solve(Mat::<f64>::identity(n, n));
    let mut tr = 0.0;
    for i in 0..n {
        tr += inv[(i, i)];
    }
    Ok((llt, tr))
}

fn trace_product(llt: &faer::linalg::solvers::Llt<f64>, b: &Mat<f64>) -> f64 {
    // tr(G^{-1} B) through a multi-RHS solve.
    let s = llt.solve(b);
    let mut tr = 0.0;
    for i in 0..s.nrows() {
        tr += s[(i, i)];
    }
    tr
}

/// Measures the trace susceptibilities on a sampled `(X, Z, W)` triple. The
/// inverted matrix stays at size `min(M, N_p)`.
pub fn empirical_susceptibilities(
    z: &Mat<f64>,
    x: &Mat<f64>,
    w: Option<&Mat<f64>>,
    lambda: f64,
) -> Result<EmpiricalSusceptibilities> {
    ensure_sequential_linalg();
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "susceptibility traces require lambda > 0, got {lambda}"
        )));
    }
    let (m, n_p) = (z.nrows(), z.ncols());
    let n_f = x.ncols();
    let (mf, npf, nff) = (m as f64, n_p as f64, n_f as f64);
    if n_p <= m {
        let g = gram_primal_lower(z, lambda);
        let (llt, tr) = trace_of_inverse_lower(&g)?;
        let nu = tr / npf;
        let chi = 1.0 - npf / mf + lambda * tr / mf;
        let kappa = match w {
            // tr(G^{-1} Z^T Z) = N_p - lambda tr(G^{-1})
            None => lambda * tr / nff,
            Some(w) => {
                let b = z.transpose() * &(x * w);
                1.0 - trace_product(&llt, &b) / nff
            }
        };
        Ok(EmpiricalSusceptibilities { nu, chi, kappa })
    } else {
        let g = gram_dual_lower(z, lambda);
        let (llt, tr) = trace_of_inverse_lower(&g)?;
        let nu = ((npf - mf) / lambda + tr) / npf;
        let chi = lambda * tr / mf;
        let kappa = match w {
            None => 1.0 - (mf - lambda * tr) / nff,
            Some(w) => {
                let b = (x * w) * z.transpose();
                1.0 - trace_product(&llt, &b) / nff
            }
        };
        Ok(EmpiricalSusceptibilities { nu, chi, kappa })
    }
}

/// Eigenvalues of `Z^T Z`, computed from the smaller of `Z^T Z` and `Z Z^T`
/// and zero-padded to `N_p` values when `N_p > M`. Ascending order.
pub fn kernel_eigenvalues(z: &Mat<f64>) -> Result<Vec<f64>> {
    ensure_sequential_linalg();
    let (m, n_p) = (z.nrows(), z.ncols());
    let g = if n_p <= m {
        gram_primal_lower(z, 0.0)
    } else {
        gram_dual_lower(z, 0.0)
    };
    let evd = g
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::NumericalFailure("kernel eigendecomposition failed".into()))?;
    let s = evd.S().column_vector();
    let mut eigs = Vec::with_capacity(n_p);
    if n_p > m {
        eigs.resize(n_p - m, 0.0);
    }
    for i in 0..s.nrows() {
        eigs.push(s[i]);
    }
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(eigs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{RngContract, TeacherSpec};
    use crate::datagen::TeacherSampler;

    fn registry() -> Registry {
        Registry::builtin()
    }

    fn random_mat(rows: usize, cols: usize, seed: u64, scale: f64) -> Mat<f64> {
        let mut rng = RngContract::new(seed, 0).rng();
        Mat::from_fn(rows, cols, |_, _| {
            scale * rng.sample::<f64, _>(StandardNormal)
        })
    }

    fn random_col(n: usize, seed: u64) -> Col<f64> {
        let mut rng = RngContract::new(seed, 1).rng();
        Col::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn linear_activation_reduces_to_xw() {
        let student = StudentSpec::random_nonlinear_features("linear", 1.0, 1e-6);
        let s = StudentSampler::new(&student, 1.0, &registry()).unwrap();
        let shape = ExperimentShape::from_counts(32, 8, 16).unwrap();
        let mut rng = RngContract::new(5, 0).rng();
        let w = s.sample_w(&shape, &mut rng).unwrap();
        let x = random_mat(32, 8, 6, 0.3);
        let hf = s.hidden_features(&x, Some(&w)).unwrap();
        let xw = &x * &w;
        assert_eq!(hf.z, xw);
        assert_eq!(hf.mean_part(), 0.0);
    }

    #[test]
    fn linreg_hidden_features_are_inputs() {
        let student = StudentSpec::linear_regression(1e-6);
        let s = StudentSampler::new(&student, 1.0, &registry()).unwrap();
        let x = random_mat(16, 16, 7, 1.0);
        let hf = s.hidden_features(&x, None).unwrap();
        assert_eq!(hf.z, x);
        assert!(hf.w_matrix.is_none());
    }

    #[test]
    fn decomposition_parts_sum_to_z() {
        let student = StudentSpec::random_nonlinear_features("relu", 1.0, 1e-6);
        let s = StudentSampler::new(&student, 1.0, &registry()).unwrap();
        let shape = ExperimentShape::from_counts(24, 12, 18).unwrap();
        let mut rng = RngContract::new(9, 0).rng();
        let w = s.sample_w(&shape, &mut rng).unwrap();
        let x = random_mat(24, 12, 10, (1.0f64 / 12.0).sqrt());
        let hf = s.hidden_features(&x, Some(&w)).unwrap();
        let lin = hf.linear_part(&x);
        let nl = hf.nonlinear_part(&x);
        for i in 0..24 {
            for j in 0..18 {
                let back = hf.mean_part() + lin[(i, j)] + nl[(i, j)];
                assert!((hf.z[(i, j)] - back).abs() < 1e-14);
            }
        }
    }

    /// Per-entry mean of ReLU hidden features approaches `mu_z / sqrt(N_p)`.
    #[test]
    fn relu_hidden_feature_mean() {
        let student = StudentSpec::random_nonlinear_features("relu", 1.0, 1e-6);
        let s = StudentSampler::new(&student, 1.0, &registry()).unwrap();
        let shape = ExperimentShape::from_counts(256, 128, 256).unwrap();
        let teacher = TeacherSpec::new("linear", 1.0, 1.0, 0.0);
        let ts = TeacherSampler::new(&teacher, &registry()).unwrap();
        let mu_entry_target = {
            let stats = s.stats_phi().unwrap();
            stats.mean / stats.mean_derivative / (256.0f64).sqrt()
        };
        let mut means = Vec::new();
        for r in 0..20 {
            let mut rng = RngContract::new(77, r).rng();
            let gt = ts.sample_ground_truth(&shape, &mut rng);
            let ds = ts.sample_dataset(&shape, &gt, &mut rng).unwrap();
            let w = s.sample_w(&shape, &mut rng).unwrap();
            let hf = s.hidden_features(&ds.x, Some(&w)).unwrap();
            let mut acc = 0.0;
            for j in 0..hf.z.ncols() {
                for i in 0..hf.z.nrows() {
                    acc += hf.z[(i, j)];
                }
            }
            means.push(acc / (hf.z.nrows() * hf.z.ncols()) as f64);
        }
        let n = means.len() as f64;
        let mean = means.iter().sum::<f64>() / n;
        let se = (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            / n.sqrt();
        assert!(
            (mean - mu_entry_target).abs() <= 3.0 * se,
            "mean {mean} target {mu_entry_target} se {se}"
        );
        assert_eq!(
            s.hidden_features(&random_mat(4, 128, 0, 1.0), None).is_err(),
            true
        );
    }

    #[test]
    fn primal_and_dual_paths_agree() {
        // 50 x 80 puts the solver on the dual path; compare against the
        // explicit primal normal equations.
        let z = random_mat(50, 80, 11, 0.5);
        let y = random_col(50, 12);
        let lambda = 1e-3;
        let sol = ridge_solve(&z, &y, lambda).unwrap();
        let g = gram_primal_lower(&z, lambda);
        let rhs: Col<f64> = z.transpose() * &y;
        let w_primal: Col<f64> = g.llt(Side::Lower).unwrap().solve(&rhs);
        let mut max_diff = 0.0f64;
        for i in 0..80 {
            max_diff = max_diff.max((sol.w_hat[i] - w_primal[i]).abs());
        }
        assert!(max_diff <= 1e-8, "max diff {max_diff}");
    }

    #[test]
    fn stationarity_residual_is_small() {
        for (m, n) in [(40, 25), (25, 40), (64, 64)] {
            let z = random_mat(m, n, 13 + m as u64, 0.4);
            let y = random_col(m, 14 + n as u64);
            let lambda = 1e-6;
            let sol = ridge_solve(&z, &y, lambda).unwrap();
            let grad: Col<f64> =
                z.transpose() * &sol.residuals - faer::Scale(lambda) * &sol.w_hat;
            let zty: Col<f64> = z.transpose() * &y;
            let bound = 1e-8 * (zty.norm_l2() + lambda * sol.w_hat.norm_l2());
            assert!(grad.norm_l2() <= bound, "{} > {}", grad.norm_l2(), bound);
        }
    }

    #[test]
    fn square_interpolation_at_tiny_lambda() {
        let z = random_mat(32, 32, 15, 1.0);
        let y = random_col(32, 16);
        let sol = ridge_solve(&z, &y, 1e-12).unwrap();
        let var_y = y.squared_norm_l2() / 32.0;
        assert!(sol.train_error <= 1e-10 * var_y, "train {}", sol.train_error);
    }

    #[test]
    fn classical_consistency_recovers_beta() {
        let shape = ExperimentShape::from_counts(4096, 64, 64).unwrap();
        let teacher = TeacherSpec::new("linear", 1.0, 1.0, 0.0);
        let ts = TeacherSampler::new(&teacher, &registry()).unwrap();
        let mut rng = RngContract::new(21, 0).rng();
        let gt = ts.sample_ground_truth(&shape, &mut rng);
        let ds = ts.sample_dataset(&shape, &gt, &mut rng).unwrap();
        let student = StudentSpec::linear_regression(1e-6);
        let ss = StudentSampler::new(&student, 1.0, &registry()).unwrap();
        let hf = ss.hidden_features(&ds.x, None).unwrap();
        let f = fit(&ds.x, &hf, &ds.y, 1e-6).unwrap();
        let err = (&f.beta_hat - &gt.beta).norm_l2() / gt.beta.norm_l2();
        assert!(err <= 1e-2, "relative beta error {err}");
    }

    #[test]
    fn test_error_degenerate_cases() {
        let z = random_mat(20, 10, 31, 1.0);
        let y = random_col(20, 32);
        let sol = ridge_solve(&z, &y, 1e-8).unwrap();
        // Same set: test error equals training error.
        let te = test_error(&sol.w_hat, &z, &y);
        assert!((te - sol.train_error).abs() < 1e-12);
        // Null model returns the label second moment.
        let zero = Col::zeros(10);
        let te0 = test_error(&zero, &z, &y);
        assert!((te0 - y.squared_norm_l2() / 20.0).abs() < 1e-14);
    }

    #[test]
    fn ridge_monotonicity_in_lambda() {
        let z = random_mat(30, 20, 41, 0.7);
        let y = random_col(30, 42);
        let mut last = -1.0;
        for lambda in [1e-8, 1e-4, 1e-2, 1.0, 10.0] {
            let sol = ridge_solve(&z, &y, lambda).unwrap();
            assert!(sol.train_error > last, "not increasing at {lambda}");
            last = sol.train_error;
        }
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let mut z = random_mat(10, 5, 51, 1.0);
        z[(3, 2)] = f64::NAN;
        let y = random_col(10, 52);
        assert!(ridge_solve(&z, &y, 1e-6).is_err());
        assert!(ridge_solve(&random_mat(10, 5, 51, 1.0), &y, 0.0).is_err());
    }

    #[test]
    fn identity_kernel_susceptibilities() {
        let z = Mat::<f64>::identity(6, 6);
        let x = z.clone();
        let s = empirical_susceptibilities(&z, &x, None, 1.0).unwrap();
        assert!((s.nu - 0.5).abs() < 1e-14);
        assert!((s.chi - 0.5).abs() < 1e-14);
    }

    #[test]
    fn linreg_chi_matches_one_minus_alpha() {
        let shape = ExperimentShape::from_counts(512, 256, 256).unwrap();
        let teacher = TeacherSpec::new("linear", 1.0, 1.0, 0.0);
        let ts = TeacherSampler::new(&teacher, &registry()).unwrap();
        let mut rng = RngContract::new(61, 0).rng();
        let gt = ts.sample_ground_truth(&shape, &mut rng);
        let ds = ts.sample_dataset(&shape, &gt, &mut rng).unwrap();
        let s = empirical_susceptibilities(&ds.x, &ds.x, None, 1e-6).unwrap();
        assert!((s.chi - 0.5).abs() < 0.03, "chi {}", s.chi);
        assert!(s.nu > 0.0);
    }

    #[test]
    fn rnlfm_chi_under_parameterized() {
        let shape = ExperimentShape::from_counts(512, 128, 64).unwrap();
        let teacher = TeacherSpec::new("linear", 1.0, 1.0, 0.0);
        let ts = TeacherSampler::new(&teacher, &registry()).unwrap();
        let student = StudentSpec::random_nonlinear_features("relu", 1.0, 1e-6);
        let ss = StudentSampler::new(&student, 1.0, &registry()).unwrap();
        let mut rng = RngContract::new(71, 0).rng();
        let gt = ts.sample_ground_truth(&shape, &mut rng);
        let ds = ts.sample_dataset(&shape, &gt, &mut rng).unwrap();
        let w = ss.sample_w(&shape, &mut rng).unwrap();
        let hf = ss.hidden_features(&ds.x, Some(&w)).unwrap();
        let s = empirical_susceptibilities(&hf.z, &ds.x, Some(&w), 1e-6).unwrap();
        assert!((s.chi - 7.0 / 8.0).abs() < 0.03, "chi {}", s.chi);
        assert!((0.0..=1.0 + 1e-6).contains(&s.chi));
    }

    #[test]
    fn chi_measures_corank_at_tiny_lambda() {
        let z = random_mat(100, 30, 81, 0.6);
        let x = z.clone();
        let s = empirical_susceptibilities(&z, &x, None, 1e-10).unwrap();
        assert!((s.chi - 0.7).abs() < 1e-3, "chi {}", s.chi);
    }

    #[test]
    fn nu_trace_matches_eigenvalue_sum() {
        for (m, n) in [(40, 24), (24, 40)] {
            let z = random_mat(m, n, 91 + m as u64, 0.5);
            let x = random_mat(m, 16, 92, 0.5);
            let lambda = 1e-3;
            let s = empirical_susceptibilities(&z, &x, None, lambda).unwrap();
            let eigs = kernel_eigenvalues(&z).unwrap();
            assert_eq!(eigs.len(), n);
            let nu_eig =
                eigs.iter().map(|e| 1.0 / (lambda + e)).sum::<f64>() / n as f64;
            assert!((s.nu - nu_eig).abs() <= 1e-8 * nu_eig.abs(), "{} vs {nu_eig}", s.nu);
        }
    }

    #[test]
    fn kernel_eigenvalues_pad_zeros_in_wide_case() {
        let z = random_mat(10, 25, 101, 0.4);
        let eigs = kernel_eigenvalues(&z).unwrap();
        assert_eq!(eigs.len(), 25);
        assert_eq!(eigs.iter().filter(|&&e| e == 0.0).count(), 15);
    }
}
