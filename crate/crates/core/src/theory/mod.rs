//! Closed-form training/test error and the ensemble-averaged bias-variance
//! decomposition, for both architectures, at finite ridge and in the
//! ridge-less limit.
//!
//! Results decompose as
//!
//! ```text
//! train    = <dy^2>
//! test     = sigma_X^2 <dbeta^2>   + sigma_dz^2 <w^2>    + sigma_dy^2 + sigma_eps^2
//! bias^2   = sigma_X^2 <db1 db2>   + sigma_dz^2 <w1 w2>  + sigma_dy^2
//! variance = test - bias^2 - noise
//! ```
//!
//! where the angle brackets are the five ensemble averages solved for by the
//! architecture-specific self-consistency equations.

mod linreg;
mod rnlfm;

pub use linreg::linreg_theory;
pub use rnlfm::{
    chi_quartic_coefficients, rnlfm_ensemble_averages, rnlfm_susceptibilities, rnlfm_theory,
};

use serde::Serialize;

use crate::config::Architecture;
use crate::error::{Error, Result};
use crate::nonlinearity::DerivedVariances;

/// Scalar susceptibilities of a solution point. `omega` and `phi_s` belong to
/// the nonlinear architecture and are reported as zero for linear regression.
///
/// In the ridge-less limit the small-`lambda` expansion coefficients are
/// populated, with the raw-`lambda` convention
/// `nu ~ nu_m1/lambda + nu_0` and `chi ~ chi_0 + chi_1 * lambda`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Susceptibilities {
    pub nu: f64,
    pub chi: f64,
    pub kappa: f64,
    pub omega: f64,
    /// The response susceptibility written as phi in the closed forms,
    /// renamed to avoid clashing with the activation function.
    pub phi_s: f64,
    /// Ridge value these susceptibilities were evaluated at.
    pub lambda: f64,
    pub nu_m1: Option<f64>,
    pub nu_0: Option<f64>,
    pub chi_0: Option<f64>,
    pub chi_1: Option<f64>,
    /// Set when more than one quartic root passed every admissibility filter
    /// and positivity of the averages had to disambiguate.
    pub ambiguous_root: bool,
}

impl Susceptibilities {
    pub(crate) fn finite(nu: f64, chi: f64, kappa: f64, omega: f64, phi_s: f64, lambda: f64) -> Self {
        Self {
            nu,
            chi,
            kappa,
            omega,
            phi_s,
            lambda,
            nu_m1: None,
            nu_0: None,
            chi_0: None,
            chi_1: None,
            ambiguous_root: false,
        }
    }
}

/// The five ensemble averages plus the residual contraction `<u^2>`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnsembleAverages {
    /// `<dy^2>`: mean squared training residual.
    pub dy2: f64,
    /// `<w^2>`: mean squared fit parameter.
    pub w2: f64,
    /// `<u^2>`: mean squared `X^T dy` component.
    pub u2: f64,
    /// `<dbeta^2>`: mean squared residual parameter error.
    pub db2: f64,
    /// `<w1 w2>`: fit-parameter overlap across independent training sets.
    pub w1w2: f64,
    /// `<dbeta1 dbeta2>`: parameter-error overlap across training sets.
    pub db1db2: f64,
}

/// Assembled analytic result at one `(alpha_f, alpha_p, lambda)` point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TheoryResult {
    pub susceptibilities: Susceptibilities,
    pub averages: EnsembleAverages,
    pub train: f64,
    pub test: f64,
    pub bias2: f64,
    pub variance: f64,
    pub noise: f64,
    /// True at a ridge-less interpolation threshold, where test error and
    /// variance carry an infinity sentinel while the bias stays finite.
    pub diverged: bool,
}

/// Variance constants entering the closed forms. `sigma_dy2` and `sigma_dz2`
/// are carried as free parameters (rather than re-derived from the moment
/// tables) so that label-source decompositions can zero them independently.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TheoryConstants {
    pub sigma_beta2: f64,
    pub sigma_x2: f64,
    pub sigma_eps2: f64,
    pub sigma_dy2: f64,
    pub sigma_dz2: f64,
    pub sigma_w2: f64,
}

impl TheoryConstants {
    pub fn new(
        sigma_beta2: f64,
        sigma_x2: f64,
        sigma_eps2: f64,
        sigma_w2: f64,
        derived: &DerivedVariances,
    ) -> Self {
        Self {
            sigma_beta2,
            sigma_x2,
            sigma_eps2,
            sigma_dy2: derived.sigma_dy2,
            sigma_dz2: derived.sigma_dz2,
            sigma_w2,
        }
    }

    /// Noise-plus-nonlinear label variance `s = sigma_eps2 + sigma_dy2`.
    pub(crate) fn s(&self) -> f64 {
        self.sigma_eps2 + self.sigma_dy2
    }

    /// Activation variance ratio recovered from the stored constants.
    pub(crate) fn delta_phi(&self) -> f64 {
        self.sigma_dz2 / (self.sigma_w2 * self.sigma_x2)
    }
}

/// Assembles train/test/bias/variance from solved ensemble averages. The
/// variance is computed by subtraction, so the decomposition identity holds
/// by construction; divergent inputs propagate to infinity sentinels.
pub fn assemble_decomposition(
    averages: &EnsembleAverages,
    sus: &Susceptibilities,
    consts: &TheoryConstants,
) -> TheoryResult {
    // A vanishing coefficient removes its term even against an infinity
    // sentinel (0 * inf would otherwise poison the sum with NaN).
    let term = |c: f64, v: f64| if c == 0.0 { 0.0 } else { c * v };
    let train = averages.dy2;
    let test = term(consts.sigma_x2, averages.db2)
        + term(consts.sigma_dz2, averages.w2)
        + consts.sigma_dy2
        + consts.sigma_eps2;
    let bias2 = term(consts.sigma_x2, averages.db1db2)
        + term(consts.sigma_dz2, averages.w1w2)
        + consts.sigma_dy2;
    let noise = consts.sigma_eps2;
    let variance = if bias2.is_finite() {
        test - bias2 - noise
    } else {
        f64::INFINITY
    };
    TheoryResult {
        susceptibilities: *sus,
        averages: *averages,
        train,
        test,
        bias2,
        variance,
        noise,
        diverged: !test.is_finite() || !bias2.is_finite() || !train.is_finite(),
    }
}

/// Evaluates the closed forms for either architecture.
pub fn evaluate(
    arch: Architecture,
    alpha_f: f64,
    alpha_p: f64,
    consts: &TheoryConstants,
    lambda: f64,
) -> Result<TheoryResult> {
    match arch {
        Architecture::LinearRegression => {
            if (alpha_f - alpha_p).abs() > 1e-12 {
                return Err(Error::InvalidConfig(
                    "linear regression requires alpha_p == alpha_f".into(),
                ));
            }
            linreg_theory(alpha_f, consts, lambda)
        }
        Architecture::RandomNonlinearFeatures => rnlfm_theory(alpha_f, alpha_p, consts, lambda),
    }
}

/// Additive contributions of one error quantity from the three label sources.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LabelSplit {
    /// Terms proportional to `sigma_beta2 * sigma_x2` (linear signal).
    pub linear: f64,
    /// Terms proportional to `sigma_dy2` (nonlinear signal).
    pub nonlinear: f64,
    /// Terms proportional to `sigma_eps2` (label noise).
    pub noise: f64,
}

impl LabelSplit {
    pub fn total(&self) -> f64 {
        self.linear + self.nonlinear + self.noise
    }
}

/// Per-source decomposition of train/test/bias/variance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LabelComponentSplit {
    pub train: LabelSplit,
    pub test: LabelSplit,
    pub bias2: LabelSplit,
    pub variance: LabelSplit,
}

/// Splits each error quantity into its label-source contributions by
/// evaluating the closed forms with one source variance active at a time.
/// Every output is linear in `(sigma_beta2, sigma_dy2, sigma_eps2)` at fixed
/// geometry, so the three parts add up to the full result.
pub fn label_component_split(
    arch: Architecture,
    alpha_f: f64,
    alpha_p: f64,
    consts: &TheoryConstants,
    lambda: f64,
) -> Result<LabelComponentSplit> {
    let linear = evaluate(
        arch,
        alpha_f,
        alpha_p,
        &TheoryConstants { sigma_dy2: 0.0, sigma_eps2: 0.0, ..*consts },
        lambda,
    )?;
    let nonlinear = evaluate(
        arch,
        alpha_f,
        alpha_p,
        &TheoryConstants { sigma_beta2: 0.0, sigma_eps2: 0.0, ..*consts },
        lambda,
    )?;
    let noise = evaluate(
        arch,
        alpha_f,
        alpha_p,
        &TheoryConstants { sigma_beta2: 0.0, sigma_dy2: 0.0, ..*consts },
        lambda,
    )?;
    // The noise run must not count the constant noise floor as an error
    // contribution of the model; subtract nothing: test already contains
    // sigma_eps2 only in the run where it is active.
    Ok(LabelComponentSplit {
        train: LabelSplit {
            linear: linear.train,
            nonlinear: nonlinear.train,
            noise: noise.train,
        },
        test: LabelSplit {
            linear: linear.test,
            nonlinear: nonlinear.test,
            noise: noise.test,
        },
        bias2: LabelSplit {
            linear: linear.bias2,
            nonlinear: nonlinear.bias2,
            noise: noise.bias2,
        },
        variance: LabelSplit {
            linear: linear.variance,
            nonlinear: nonlinear.variance,
            noise: noise.variance,
        },
    })
}

/// Interior width of the divergence window around an interpolation threshold
/// at `lambda = 0`; inside it the result carries infinity sentinels.
pub(crate) const THRESHOLD_WINDOW: f64 = 1e-9;

/// Solves a small dense linear system in place (partial-pivot LU). Returns
/// `None` when the matrix is singular to machine precision.
pub(crate) fn solve_small(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let (mut piv, mut best) = (col, a[col][col].abs());
        for r in col + 1..n {
            if a[r][col].abs() > best {
                piv = r;
                best = a[r][col].abs();
            }
        }
        if best == 0.0 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
        if !x[r].is_finite() {
            return None;
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts(sigma_dy2: f64, sigma_eps2: f64, sigma_dz2: f64) -> TheoryConstants {
        TheoryConstants {
            sigma_beta2: 1.0,
            sigma_x2: 1.0,
            sigma_eps2,
            sigma_dy2,
            sigma_dz2,
            sigma_w2: 1.0,
        }
    }

    #[test]
    fn decomposition_identity_is_exact_by_construction() {
        let averages = EnsembleAverages {
            dy2: 0.3,
            w2: 1.4,
            u2: 0.2,
            db2: 0.9,
            w1w2: 1.1,
            db1db2: 0.5,
        };
        let sus = Susceptibilities::finite(1.0, 0.5, 0.8, 0.2, -0.1, 1e-6);
        let c = consts(0.05, 0.1, 0.3);
        let r = assemble_decomposition(&averages, &sus, &c);
        // Variance is defined by subtraction; the identity holds to rounding.
        let gap = r.test - r.bias2 - r.variance - r.noise;
        assert!(gap.abs() <= 1e-15 * r.test.abs());
        assert!(!r.diverged);
    }

    #[test]
    fn divergent_averages_produce_sentinels() {
        let averages = EnsembleAverages {
            dy2: 0.0,
            w2: f64::INFINITY,
            u2: 0.0,
            db2: f64::INFINITY,
            w1w2: 1.0,
            db1db2: 0.25,
        };
        let sus = Susceptibilities::finite(f64::INFINITY, 0.0, 0.5, 0.0, 0.0, 0.0);
        let c = consts(0.05, 0.1, 0.3);
        let r = assemble_decomposition(&averages, &sus, &c);
        assert!(r.diverged);
        assert_eq!(r.variance, f64::INFINITY);
        assert_eq!(r.test, f64::INFINITY);
        assert!(r.bias2.is_finite());
    }

    #[test]
    fn solve_small_matches_hand_solution() {
        let mut a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let mut b = vec![5.0, 10.0];
        let x = solve_small(&mut a, &mut b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 3.0).abs() < 1e-14);
    }
}
