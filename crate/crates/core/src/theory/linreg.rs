//! Closed forms for ridge(-less) linear regression: the exact finite-ridge
//! solution of the chi quadratic plus the three-average self-consistency
//! system, and the piecewise ridge-less branches with their small-lambda
//! expansion coefficients.

use super::{
    assemble_decomposition, EnsembleAverages, Susceptibilities, TheoryConstants, TheoryResult,
    THRESHOLD_WINDOW,
};
use crate::error::{Error, Result};

/// `a + sqrt(a^2 + 4c)` for `c >= 0`, computed without cancellation when
/// `a < 0`.
pub(crate) fn bracket(a: f64, c: f64) -> f64 {
    let s = (a * a + 4.0 * c).sqrt();
    if a >= 0.0 {
        a + s
    } else {
        let denom = s - a;
        if denom == 0.0 {
            0.0
        } else {
            4.0 * c / denom
        }
    }
}

/// Analytic training/test error and bias-variance decomposition for linear
/// regression at ratio `alpha_f`.
///
/// `lambda > 0` solves the exact chi quadratic; `lambda == 0` returns the
/// piecewise ridge-less branches, with an infinity sentinel for variance and
/// test error at the interpolation threshold (`bias^2` stays finite there).
pub fn linreg_theory(
    alpha_f: f64,
    consts: &TheoryConstants,
    lambda: f64,
) -> Result<TheoryResult> {
    if !(alpha_f > 0.0) || !alpha_f.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "alpha_f must be finite and > 0, got {alpha_f}"
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let sx2 = consts.sigma_x2;
    let (sb2, s) = (consts.sigma_beta2, consts.s());

    if lambda > 0.0 {
        let lbar = lambda / sx2;
        let chi = 0.5 * bracket(1.0 - alpha_f * (1.0 + lbar), alpha_f * lbar);
        let nu = 1.0 / (lambda + sx2 * chi / alpha_f);
        let sus = Susceptibilities::finite(nu, chi, lambda * nu, 0.0, 0.0, lambda);

        let chi2 = chi * chi;
        let nu2 = nu * nu;
        let denom = 1.0 - sx2 * sx2 / alpha_f * chi2 * nu2;
        if denom <= 0.0 {
            return Err(Error::NumericalFailure(format!(
                "self-consistency system singular at alpha_f = {alpha_f}, lambda = {lambda}"
            )));
        }
        let dy2 = chi2 * (sb2 * lambda * lambda * nu2 * sx2 + s) / denom;
        let db2 = nu2 * (sb2 * lambda * lambda + sx2 / alpha_f * dy2);
        let w2 = nu2 * (sb2 * sx2 * sx2 / (alpha_f * alpha_f) * chi2 + sx2 / alpha_f * dy2);
        let averages = EnsembleAverages {
            dy2,
            w2,
            u2: sx2 / alpha_f * dy2,
            db2,
            w1w2: sb2 * (nu * sx2 * chi / alpha_f).powi(2),
            db1db2: sb2 * lambda * lambda * nu2,
        };
        return Ok(assemble_decomposition(&averages, &sus, consts));
    }

    // Ridge-less branches.
    if (alpha_f - 1.0).abs() < THRESHOLD_WINDOW {
        let sus = Susceptibilities {
            nu: f64::INFINITY,
            chi: 0.0,
            kappa: 0.0,
            omega: 0.0,
            phi_s: 0.0,
            lambda,
            nu_m1: Some(0.0),
            nu_0: Some(f64::INFINITY),
            chi_0: Some(0.0),
            chi_1: Some(f64::INFINITY),
            ambiguous_root: false,
        };
        let averages = EnsembleAverages {
            dy2: 0.0,
            w2: f64::INFINITY,
            u2: 0.0,
            db2: f64::INFINITY,
            w1w2: sb2,
            db1db2: 0.0,
        };
        return Ok(assemble_decomposition(&averages, &sus, consts));
    }

    if alpha_f < 1.0 {
        let chi = 1.0 - alpha_f;
        let nu = alpha_f / (sx2 * (1.0 - alpha_f));
        let sus = Susceptibilities {
            nu,
            chi,
            kappa: 0.0,
            omega: 0.0,
            phi_s: 0.0,
            lambda,
            nu_m1: Some(0.0),
            nu_0: Some(nu),
            chi_0: Some(chi),
            chi_1: Some(alpha_f * alpha_f / ((1.0 - alpha_f) * sx2)),
            ambiguous_root: false,
        };
        let db2 = s / sx2 * alpha_f / (1.0 - alpha_f);
        let averages = EnsembleAverages {
            dy2: s * (1.0 - alpha_f),
            w2: sb2 + db2,
            u2: s * (1.0 - alpha_f) * sx2 / alpha_f,
            db2,
            w1w2: sb2,
            db1db2: 0.0,
        };
        Ok(assemble_decomposition(&averages, &sus, consts))
    } else {
        let nu_m1 = (alpha_f - 1.0) / alpha_f;
        let nu_0 = 1.0 / (sx2 * (alpha_f - 1.0));
        let sus = Susceptibilities {
            nu: f64::INFINITY,
            chi: 0.0,
            kappa: nu_m1,
            omega: 0.0,
            phi_s: 0.0,
            lambda,
            nu_m1: Some(nu_m1),
            nu_0: Some(nu_0),
            chi_0: Some(0.0),
            chi_1: Some(alpha_f / ((alpha_f - 1.0) * sx2)),
            ambiguous_root: false,
        };
        let tail = s / (sx2 * (alpha_f - 1.0));
        let averages = EnsembleAverages {
            dy2: 0.0,
            w2: sb2 / alpha_f + tail,
            u2: 0.0,
            db2: sb2 * (alpha_f - 1.0) / alpha_f + tail,
            w1w2: sb2 / (alpha_f * alpha_f),
            db1db2: sb2 * (alpha_f - 1.0).powi(2) / (alpha_f * alpha_f),
        };
        Ok(assemble_decomposition(&averages, &sus, consts))
    }
}
