//! Monte-Carlo reproduction engine: paired-training-set estimation of the
//! bias-variance decomposition, label-source sub-decompositions, kernel
//! eigenvalue histograms, and minimum-principal-component spread analysis.
//!
//! Replicates run concurrently on independent RNG streams; per-replicate
//! results are collected in replicate order and reduced sequentially, so the
//! thread budget never changes any reported number.

use faer::{Col, Mat, Side};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentShape, RngContract, StudentSpec, TeacherSpec};
use crate::datagen::{Dataset, TeacherSampler};
use crate::error::{Error, Result};
use crate::fitkit::{
    ensure_sequential_linalg, gram_dual_lower, gram_primal_lower, kernel_eigenvalues, ridge_solve,
    StudentSampler,
};
use crate::nonlinearity::Registry;

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var =
                samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }

    fn constant(value: f64, n: usize) -> Self {
        Self { mean: value, stderr: 0.0, n }
    }
}

/// Which label components enter the observed labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SourceMask {
    pub linear: bool,
    pub nonlinear: bool,
    pub noise: bool,
}

impl Default for SourceMask {
    fn default() -> Self {
        Self { linear: true, nonlinear: true, noise: true }
    }
}

impl SourceMask {
    pub const LINEAR: Self = Self { linear: true, nonlinear: false, noise: false };
    pub const NONLINEAR: Self = Self { linear: false, nonlinear: true, noise: false };
    pub const NOISE: Self = Self { linear: false, nonlinear: false, noise: true };

    /// Observed labels under this mask.
    fn labels(&self, ds: &Dataset) -> Col<f64> {
        Col::from_fn(ds.m(), |i| {
            let mut y = 0.0;
            if self.linear {
                y += ds.y_lin[i];
            }
            if self.nonlinear {
                y += ds.y_nl[i];
            }
            if self.noise {
                y += ds.eps[i];
            }
            y
        })
    }

    /// True (noise-free) labels under this mask.
    fn true_labels(&self, ds: &Dataset) -> Col<f64> {
        Col::from_fn(ds.m(), |i| {
            let mut y = 0.0;
            if self.linear {
                y += ds.y_lin[i];
            }
            if self.nonlinear {
                y += ds.y_nl[i];
            }
            y
        })
    }
}

/// Monte-Carlo estimates of the decomposition at one grid point, with
/// optional per-label-source sub-decompositions.
#[derive(Debug, Clone, Serialize)]
pub struct McDecomposition {
    pub train: McEstimate,
    pub test: McEstimate,
    pub bias2: McEstimate,
    pub variance: McEstimate,
    pub noise: McEstimate,
    /// Sub-decompositions from runs with a single label source active.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_source: Option<Box<McSourceDecompositions>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct McSourceDecompositions {
    pub linear: McDecomposition,
    pub nonlinear: McDecomposition,
    pub noise: McDecomposition,
}

/// Options for one decomposition run.
#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub mask: SourceMask,
    /// Use `D2 = D1` (estimator consistency check: the bias product then
    /// reproduces the noise-free test error and the variance estimate is
    /// zero within its standard error).
    pub degenerate_pair: bool,
    /// Also run the three single-source sub-decompositions.
    pub with_sources: bool,
    /// Test-set size; defaults to `M`.
    pub test_size: Option<usize>,
    /// First RNG stream id; replicate `r` uses `stream_offset + r`.
    pub stream_offset: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            mask: SourceMask::default(),
            degenerate_pair: false,
            with_sources: false,
            test_size: None,
            stream_offset: 0,
        }
    }
}

/// The simulation engine for one teacher/student pair.
#[derive(Debug, Clone)]
pub struct Harness {
    teacher: TeacherSampler,
    student: StudentSampler,
    lambda: f64,
}

impl Harness {
    pub fn new(
        teacher: &TeacherSpec,
        student: &StudentSpec,
        registry: &Registry,
    ) -> Result<Self> {
        if !(student.lambda > 0.0) {
            return Err(Error::InvalidConfig(
                "Monte-Carlo runs require lambda > 0".into(),
            ));
        }
        Ok(Self {
            teacher: TeacherSampler::new(teacher, registry)?,
            student: StudentSampler::new(student, teacher.sigma_x2, registry)?,
            lambda: student.lambda,
        })
    }

    pub fn teacher(&self) -> &TeacherSampler {
        &self.teacher
    }

    /// Paired-training-set decomposition estimate.
    ///
    /// Per replicate: draw the ground truth (and `W`) once, two independent
    /// training sets and one shared test set; fit both training sets; record
    /// the training and test errors of the first fit and the bias product
    /// `mean[(yhat1 - y*')(yhat2 - y*')]`. The variance is obtained by
    /// subtracting the bias and noise means from the test mean.
    pub fn run_decomposition(
        &self,
        shape: &ExperimentShape,
        replicates: usize,
        seed: u64,
        opts: &McOptions,
    ) -> Result<McDecomposition> {
        if replicates < 2 {
            return Err(Error::InvalidConfig("replicates must be >= 2".into()));
        }
        ensure_sequential_linalg();
        let rows: Result<Vec<[f64; 3]>> = (0..replicates)
            .into_par_iter()
            .map(|r| {
                self.replicate(shape, seed, opts.stream_offset + r as u64, opts)
                    .map_err(|e| {
                        Error::NumericalFailure(format!("replicate {r}: {e}"))
                    })
            })
            .collect();
        let rows = rows?;

        let noise_active = if opts.mask.noise {
            self.teacher.teacher().sigma_eps2
        } else {
            0.0
        };
        let train = McEstimate::from_samples(&rows.iter().map(|r| r[0]).collect::<Vec<_>>());
        let test = McEstimate::from_samples(&rows.iter().map(|r| r[1]).collect::<Vec<_>>());
        let bias2 = McEstimate::from_samples(&rows.iter().map(|r| r[2]).collect::<Vec<_>>());
        let var_samples: Vec<f64> =
            rows.iter().map(|r| r[1] - r[2] - noise_active).collect();
        let mut variance = McEstimate::from_samples(&var_samples);
        let noise = McEstimate::constant(noise_active, replicates);
        // Variance by subtraction of the means: the decomposition identity
        // holds exactly.
        variance.mean = test.mean - bias2.mean - noise.mean;

        let per_source = if opts.with_sources {
            let sub = |mask: SourceMask| {
                self.run_decomposition(
                    shape,
                    replicates,
                    seed,
                    &McOptions { mask, with_sources: false, ..*opts },
                )
            };
            Some(Box::new(McSourceDecompositions {
                linear: sub(SourceMask::LINEAR)?,
                nonlinear: sub(SourceMask::NONLINEAR)?,
                noise: sub(SourceMask::NOISE)?,
            }))
        } else {
            None
        };

        Ok(McDecomposition { train, test, bias2, variance, noise, per_source })
    }

    /// One replicate: returns `[train, test, bias_product]`.
    fn replicate(
        &self,
        shape: &ExperimentShape,
        seed: u64,
        stream: u64,
        opts: &McOptions,
    ) -> Result<[f64; 3]> {
        let mut rng = RngContract::new(seed, stream).rng();
        let gt = self.teacher.sample_ground_truth(shape, &mut rng);
        let w = self.student.sample_w(shape, &mut rng);
        let d1 = self.teacher.sample_dataset(shape, &gt, &mut rng)?;
        let d2 = if opts.degenerate_pair {
            None
        } else {
            Some(self.teacher.sample_dataset(shape, &gt, &mut rng)?)
        };
        let m_test = opts.test_size.unwrap_or(shape.m());
        let dt = self
            .teacher
            .sample_dataset_sized(shape, m_test, &gt, &mut rng)?;

        let y1 = opts.mask.labels(&d1);
        let hf1 = self.student.hidden_features(&d1.x, w.as_ref())?;
        let fit1 = ridge_solve(&hf1.z, &y1, self.lambda)?;

        let hf_t = self.student.hidden_features(&dt.x, w.as_ref())?;
        let y_test = opts.mask.labels(&dt);
        let y_star_test = opts.mask.true_labels(&dt);
        let pred1: Col<f64> = &hf_t.z * &fit1.w_hat;

        let pred2: Col<f64> = match &d2 {
            None => pred1.clone(),
            Some(d2) => {
                let y2 = opts.mask.labels(d2);
                let hf2 = self.student.hidden_features(&d2.x, w.as_ref())?;
                let fit2 = ridge_solve(&hf2.z, &y2, self.lambda)?;
                &hf_t.z * &fit2.w_hat
            }
        };

        let mf = m_test as f64;
        let mut test = 0.0;
        let mut bias = 0.0;
        for i in 0..m_test {
            let r1 = y_test[i] - pred1[i];
            test += r1 * r1;
            bias += (pred1[i] - y_star_test[i]) * (pred2[i] - y_star_test[i]);
        }
        Ok([fit1.train_error, test / mf, bias / mf])
    }

    /// Pooled kernel eigenvalues over `n_matrices` independent draws,
    /// zero-padded to `N_p` values per matrix when `N_p > M`.
    pub fn pooled_kernel_eigenvalues(
        &self,
        shape: &ExperimentShape,
        n_matrices: usize,
        seed: u64,
        stream_offset: u64,
    ) -> Result<Vec<f64>> {
        if shape.m() < 64 {
            return Err(Error::InvalidConfig(
                "eigenvalue protocol requires M >= 64".into(),
            ));
        }
        ensure_sequential_linalg();
        let per: Result<Vec<Vec<f64>>> = (0..n_matrices)
            .into_par_iter()
            .map(|r| {
                let mut rng = RngContract::new(seed, stream_offset + r as u64).rng();
                let x = self.teacher.sample_features(shape, shape.m(), &mut rng);
                let w = self.student.sample_w(shape, &mut rng);
                let hf = self.student.hidden_features(&x, w.as_ref())?;
                kernel_eigenvalues(&hf.z)
            })
            .collect();
        let mut pooled = Vec::new();
        for v in per? {
            pooled.extend(v);
        }
        pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(pooled)
    }

    /// Minimum-principal-component report for a single replicate.
    pub fn min_component_analysis(
        &self,
        shape: &ExperimentShape,
        seed: u64,
        stream: u64,
    ) -> Result<MinComponentReport> {
        ensure_sequential_linalg();
        let mut rng = RngContract::new(seed, stream).rng();
        let gt = self.teacher.sample_ground_truth(shape, &mut rng);
        let w = self.student.sample_w(shape, &mut rng);
        let train = self.teacher.sample_dataset(shape, &gt, &mut rng)?;
        let test = self.teacher.sample_dataset(shape, &gt, &mut rng)?;

        let hf = self.student.hidden_features(&train.x, w.as_ref())?;
        let (sigma_min2, h_min) = smallest_nonzero_eigenpair(&hf.z)?;
        let m = shape.m() as f64;
        let sigma_train2 = sigma_min2 / m;

        let zty: Col<f64> = hf.z.transpose() * &train.y;
        let mut num = 0.0;
        for i in 0..h_min.nrows() {
            num += h_min[i] * zty[i];
        }
        let learned_slope = num / sigma_min2;

        let (sigma_test2, expected_slope) = match &w {
            None => {
                let mut hb = 0.0;
                for i in 0..h_min.nrows() {
                    hb += h_min[i] * gt.beta[i];
                }
                let sx2 = self.teacher.teacher().sigma_x2;
                (sx2 / shape.n_f() as f64, hb)
            }
            Some(w) => {
                let wh: Col<f64> = w * &h_min;
                let mut whb = 0.0;
                for i in 0..wh.nrows() {
                    whb += wh[i] * gt.beta[i];
                }
                let whww = wh.squared_norm_l2();
                let sx2 = self.teacher.teacher().sigma_x2;
                let sw2 = self.student.student().sigma_w2;
                let delta_phi = self
                    .student
                    .stats_phi()
                    .map(|s| s.delta)
                    .unwrap_or(0.0);
                let alpha_ratio = shape.n_f() as f64 / shape.n_p() as f64;
                let sigma_test2 =
                    sx2 / shape.n_f() as f64 * whww + delta_phi * sw2 * sx2 / shape.n_p() as f64;
                let expected_slope = whb / (whww + delta_phi * sw2 * alpha_ratio);
                (sigma_test2, expected_slope)
            }
        };

        let hf_test = self.student.hidden_features(&test.x, w.as_ref())?;
        let proj = |z: &Mat<f64>| -> Vec<f64> {
            let p: Col<f64> = z * &h_min;
            (0..p.nrows()).map(|i| p[i]).collect()
        };
        let train_proj = proj(&hf.z);
        let test_proj = proj(&hf_test.z);
        let col_to_vec = |c: &Col<f64>| (0..c.nrows()).map(|i| c[i]).collect::<Vec<_>>();

        Ok(MinComponentReport {
            sigma_train2,
            sigma_test2,
            ratio: (sigma_train2 / sigma_test2).sqrt(),
            learned_slope,
            expected_slope,
            train_scatter: train_proj.into_iter().zip(col_to_vec(&train.y)).collect(),
            test_scatter: test_proj.into_iter().zip(col_to_vec(&test.y)).collect(),
        })
    }
}

/// Spread of the training data along the most poorly sampled kernel
/// direction, compared with the spread of an average test set.
#[derive(Debug, Clone, Serialize)]
pub struct MinComponentReport {
    /// `sigma_min^2 / M`.
    pub sigma_train2: f64,
    /// Expected projection variance for an average test set.
    pub sigma_test2: f64,
    /// `sigma_train / sigma_test`.
    pub ratio: f64,
    /// Slope fitted from the training set along the minimum component.
    pub learned_slope: f64,
    /// Slope of the expected relationship for an average test set.
    pub expected_slope: f64,
    /// `(projection, label)` pairs for the training set.
    pub train_scatter: Vec<(f64, f64)>,
    /// `(projection, label)` pairs for the test set.
    pub test_scatter: Vec<(f64, f64)>,
}

/// Smallest nonzero eigenvalue of `Z^T Z` (threshold `1e-8` of the largest)
/// and its unit eigenvector, computed from the smaller Gram side.
fn smallest_nonzero_eigenpair(z: &Mat<f64>) -> Result<(f64, Col<f64>)> {
    let (m, n_p) = (z.nrows(), z.ncols());
    let primal = n_p <= m;
    let g = if primal {
        gram_primal_lower(z, 0.0)
    } else {
        gram_dual_lower(z, 0.0)
    };
    let evd = g
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::NumericalFailure("kernel eigendecomposition failed".into()))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let n = s.nrows();
    let mut max_eig = 0.0f64;
    for i in 0..n {
        max_eig = max_eig.max(s[i]);
    }
    let threshold = 1e-8 * max_eig;
    let mut best: Option<(f64, usize)> = None;
    for i in 0..n {
        if s[i] > threshold {
            if best.map(|(v, _)| s[i] < v).unwrap_or(true) {
                best = Some((s[i], i));
            }
        }
    }
    let (sigma_min2, idx) = best.ok_or(Error::DegenerateKernel { threshold })?;
    let v = Col::from_fn(n, |i| u[(i, idx)]);
    let h = if primal {
        v
    } else {
        let h: Col<f64> = z.transpose() * &v;
        let norm = h.norm_l2();
        faer::Scale(1.0 / norm) * &h
    };
    Ok((sigma_min2, h))
}

/// Equal-width histogram over `[lo, hi)`; values outside land in the under-
/// and overflow slots of the returned `(edges, counts, under, over)`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> (Vec<f64>, Vec<u64>, u64, u64) {
    let edges: Vec<f64> = (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect();
    let mut counts = vec![0u64; bins];
    let (mut under, mut over) = (0u64, 0u64);
    let width = (hi - lo) / bins as f64;
    for &v in values {
        if v < lo {
            under += 1;
        } else if v >= hi {
            over += 1;
        } else {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
    }
    (edges, counts, under, over)
}
