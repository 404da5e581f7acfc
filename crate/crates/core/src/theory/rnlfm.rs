//! Closed forms for the random nonlinear features model: the finite-ridge
//! quartic for chi with algorithmic root selection, the ridge-less branch
//! formulas with their expansion coefficients, the four-average linear
//! system, and the overlap formulas feeding the ensemble-averaged bias.

use super::linreg::{bracket, linreg_theory};
use super::{
    assemble_decomposition, solve_small, EnsembleAverages, Susceptibilities, TheoryConstants,
    TheoryResult, THRESHOLD_WINDOW,
};
use crate::error::{Error, Result};
use crate::poly;

/// Coefficients of the self-consistency quartic in chi, ordered by ascending
/// power. `lbar` is the ridge in units of `sigma_w2 * sigma_x2`.
pub fn chi_quartic_coefficients(
    alpha_f: f64,
    alpha_p: f64,
    lbar: f64,
    delta_phi: f64,
) -> [f64; 5] {
    let ap = alpha_p;
    let one_plus = (1.0 + delta_phi) * alpha_f;
    [
        -alpha_f * ap * ap * lbar * lbar,
        ((one_plus - 1.0) * (ap - 1.0) + alpha_f * ap * lbar) * ap * lbar,
        delta_phi * (ap - 1.0).powi(2) + (one_plus + ap - 2.0) * ap * lbar,
        2.0 * delta_phi * (ap - 1.0) + ap * lbar,
        delta_phi,
    ]
}

fn validate_point(alpha_f: f64, alpha_p: f64, lambda: f64, delta_phi: f64) -> Result<()> {
    for (name, v) in [("alpha_f", alpha_f), ("alpha_p", alpha_p)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "{name} must be finite and > 0, got {v}"
            )));
        }
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    if !(delta_phi >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "delta_phi must be >= 0, got {delta_phi}"
        )));
    }
    Ok(())
}

/// Limit of the product `chi * nu` as `lambda -> 0` in the over-parameterized
/// regime (also the limit approached at the interpolation threshold). Units
/// of `1 / (sigma_w2 sigma_x2)`.
fn chi_nu_limit_over(alpha_f: f64, delta_phi: f64, sigma2: f64) -> f64 {
    if delta_phi > 0.0 {
        bracket(1.0 - (1.0 + delta_phi) * alpha_f, delta_phi * alpha_f) / (2.0 * delta_phi * sigma2)
    } else if alpha_f > 1.0 {
        alpha_f / (sigma2 * (alpha_f - 1.0))
    } else {
        f64::INFINITY
    }
}

fn kappa_from_chi_nu(alpha_f: f64, chi_nu: f64, sigma2: f64) -> f64 {
    if chi_nu.is_infinite() {
        0.0
    } else {
        1.0 / (1.0 + sigma2 * chi_nu / alpha_f)
    }
}

/// Scalar susceptibilities for the random nonlinear features model.
///
/// `lambda > 0` solves the chi quartic numerically and derives `nu` from the
/// exact relation `nu = (chi + alpha_p - 1) / (lambda alpha_p)`; roots are
/// selected by realness, `chi` in `[0, 1]`, `nu >= 0`, and positivity of the
/// ensemble averages. `lambda == 0` returns the branch formulas with the
/// small-lambda coefficients populated; a vanishing `delta_phi` is evaluated
/// through the analytic limits of the brackets.
pub fn rnlfm_susceptibilities(
    alpha_f: f64,
    alpha_p: f64,
    lambda: f64,
    delta_phi: f64,
    sigma_w2: f64,
    sigma_x2: f64,
) -> Result<Susceptibilities> {
    validate_point(alpha_f, alpha_p, lambda, delta_phi)?;
    let sigma2 = sigma_w2 * sigma_x2;

    if lambda > 0.0 {
        return finite_lambda_susceptibilities(
            alpha_f, alpha_p, lambda, delta_phi, sigma_w2, sigma_x2,
        );
    }

    // Ridge-less branches.
    if (alpha_p - 1.0).abs() < THRESHOLD_WINDOW {
        let chi_nu = chi_nu_limit_over(alpha_f, delta_phi, sigma2);
        let kappa = kappa_from_chi_nu(alpha_f, chi_nu, sigma2);
        return Ok(Susceptibilities {
            nu: f64::INFINITY,
            chi: 0.0,
            kappa,
            omega: 0.0,
            phi_s: if kappa > 0.0 { f64::NEG_INFINITY } else { 0.0 },
            lambda,
            nu_m1: Some(0.0),
            nu_0: Some(f64::INFINITY),
            chi_0: Some(0.0),
            chi_1: Some(f64::INFINITY),
            ambiguous_root: false,
        });
    }

    if alpha_p < 1.0 {
        let a = alpha_p - (1.0 + delta_phi) * alpha_f;
        let c = delta_phi * alpha_f * alpha_p;
        let chi = 1.0 - alpha_p;
        let (nu, chi_1) = if delta_phi > 0.0 {
            let br = bracket(a, c);
            (
                br / (2.0 * delta_phi * sigma2 * (1.0 - alpha_p)),
                alpha_p * br / (2.0 * delta_phi * (1.0 - alpha_p) * sigma2),
            )
        } else if alpha_f > alpha_p {
            (
                alpha_f * alpha_p / (sigma2 * (alpha_f - alpha_p) * (1.0 - alpha_p)),
                f64::INFINITY,
            )
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        let chi_nu = chi * nu;
        let kappa = kappa_from_chi_nu(alpha_f, chi_nu, sigma2);
        let omega = sigma_x2 / alpha_f * chi * kappa;
        // nu * kappa stays finite even where nu alone diverges.
        let nu_kappa = if nu.is_finite() {
            nu * kappa
        } else {
            alpha_f / (sigma2 * chi)
        };
        return Ok(Susceptibilities {
            nu,
            chi,
            kappa,
            omega,
            phi_s: -sigma_w2 * nu_kappa,
            lambda,
            nu_m1: Some(0.0),
            nu_0: Some(nu),
            chi_0: Some(chi),
            chi_1: Some(chi_1),
            ambiguous_root: false,
        });
    }

    // Over-parameterized: chi vanishes linearly in lambda, nu diverges.
    let nu_m1 = (alpha_p - 1.0) / alpha_p;
    let (nu_0, chi_1) = if delta_phi > 0.0 {
        let br = bracket(1.0 - (1.0 + delta_phi) * alpha_f, delta_phi * alpha_f);
        (
            br / (2.0 * delta_phi * sigma2 * (alpha_p - 1.0)),
            alpha_p * br / (2.0 * delta_phi * (alpha_p - 1.0) * sigma2),
        )
    } else if alpha_f > 1.0 {
        (
            alpha_f / (sigma2 * (alpha_p - 1.0) * (alpha_f - 1.0)),
            alpha_p * alpha_f / (sigma2 * (alpha_p - 1.0) * (alpha_f - 1.0)),
        )
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let chi_nu = chi_nu_limit_over(alpha_f, delta_phi, sigma2);
    let kappa = kappa_from_chi_nu(alpha_f, chi_nu, sigma2);
    Ok(Susceptibilities {
        nu: f64::INFINITY,
        chi: 0.0,
        kappa,
        omega: 0.0,
        phi_s: f64::NEG_INFINITY,
        lambda,
        nu_m1: Some(nu_m1),
        nu_0: Some(nu_0),
        chi_0: Some(0.0),
        chi_1: Some(chi_1),
        ambiguous_root: false,
    })
}

fn finite_lambda_susceptibilities(
    alpha_f: f64,
    alpha_p: f64,
    lambda: f64,
    delta_phi: f64,
    sigma_w2: f64,
    sigma_x2: f64,
) -> Result<Susceptibilities> {
    let sigma2 = sigma_w2 * sigma_x2;
    let lbar = lambda / sigma2;

    // The quartic has a near-double root cluster at small lambda: around
    // 1 - alpha_p in chi, equivalently around alpha_p - 1 in
    // u = chi + alpha_p - 1 = lambda alpha_p nu. Each variable resolves the
    // roots that are *small* in it to full relative precision, so solve the
    // companion quartic in both variables and keep each candidate in the
    // representation where it is small.
    let chi_coeffs = chi_quartic_coefficients(alpha_f, alpha_p, lbar, delta_phi);
    let qd = crate::spectra::QuarticDiscriminant {
        alpha_f,
        alpha_p,
        delta_phi,
        scale: sigma2,
    };
    // `coefficients_real(x)` builds the quartic at ridge `-x`.
    let u_coeffs = qd.coefficients_real(-lambda);

    // (chi, u, from_u)
    let mut raw: Vec<(f64, f64, bool)> = Vec::new();
    for root in poly::roots_real(&chi_coeffs) {
        if root.im.abs() <= 1e-8 * root.re.abs().max(1.0) {
            let chi = root.re;
            raw.push((chi, chi + alpha_p - 1.0, false));
        }
    }
    for root in poly::roots_real(&u_coeffs) {
        if root.im.abs() <= 1e-8 * root.re.abs().max(1.0) {
            let u = root.re;
            raw.push((u + 1.0 - alpha_p, u, true));
        }
    }

    let mut admissible: Vec<(f64, f64, bool)> = raw
        .into_iter()
        .filter(|&(chi, u, _)| {
            (-1e-8..=1.0 + 1e-8).contains(&chi) && u / (lambda * alpha_p) >= -1e-12
        })
        .collect();
    admissible.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // Merge duplicates found by both solves, preferring the representation
    // in which the root is small.
    let mut merged: Vec<(f64, f64, bool)> = Vec::new();
    for cand in admissible {
        match merged.last_mut() {
            Some(last) if (cand.0 - last.0).abs() <= 1e-5 * (1.0 + last.0.abs()) => {
                let prefer_u = cand.1.abs() < 0.5 * (alpha_p - 1.0).abs()
                    || (alpha_p - 1.0).abs() < 1e-12;
                if cand.2 == prefer_u {
                    *last = cand;
                }
            }
            _ => merged.push(cand),
        }
    }

    let build = |chi: f64| -> Susceptibilities {
        let nu = (chi + alpha_p - 1.0) / (lambda * alpha_p);
        let kappa = 1.0 / (1.0 + sigma2 / alpha_f * chi * nu);
        let omega = sigma_x2 / alpha_f * chi * kappa;
        let phi_s = -sigma_w2 * nu * kappa;
        Susceptibilities::finite(nu, chi, kappa, omega, phi_s, lambda)
    };
    let mut candidates: Vec<Susceptibilities> =
        merged.iter().map(|&(chi, _, _)| build(chi)).collect();
    if candidates.is_empty() {
        return Err(Error::NumericalFailure(format!(
            "no admissible chi root at alpha_f={alpha_f}, alpha_p={alpha_p}, lambda={lambda}"
        )));
    }
    if candidates.len() == 1 {
        return Ok(candidates.remove(0));
    }

    // Several admissible roots: disambiguate by positivity of the ensemble
    // averages under unit probe sources.
    let probe = TheoryConstants {
        sigma_beta2: 1.0,
        sigma_x2,
        sigma_eps2: 1.0,
        sigma_dy2: 0.0,
        sigma_dz2: delta_phi * sigma2,
        sigma_w2,
    };
    let mut passing: Vec<Susceptibilities> = candidates
        .iter()
        .filter(|sus| match rnlfm_ensemble_averages(sus, alpha_f, alpha_p, &probe) {
            Ok(a) => {
                let tol = -1e-9;
                [a.dy2, a.w2, a.u2, a.db2].iter().all(|v| *v >= tol)
            }
            Err(_) => false,
        })
        .copied()
        .collect();
    if passing.is_empty() {
        passing = candidates;
    }
    passing.sort_by(|a, b| a.chi.partial_cmp(&b.chi).unwrap());
    let mut chosen = *passing.last().unwrap();
    chosen.ambiguous_root = passing.len() > 1;
    Ok(chosen)
}

/// Solves the four-average linear system and the overlap formulas for the
/// susceptibilities at one point. Handles the ridge-less limits of both
/// regimes, including the rescaled over-parameterized system where the
/// residual quantities are `O(lambda^2)`.
pub fn rnlfm_ensemble_averages(
    sus: &Susceptibilities,
    alpha_f: f64,
    alpha_p: f64,
    consts: &TheoryConstants,
) -> Result<EnsembleAverages> {
    let sdz2 = consts.sigma_dz2;
    let (sw2, sx2) = (consts.sigma_w2, consts.sigma_x2);
    let (sb2, s) = (consts.sigma_beta2, consts.s());
    let sigma2 = sw2 * sx2;

    if sus.lambda > 0.0 {
        let (nu, chi, kappa, omega, phi_s) = (sus.nu, sus.chi, sus.kappa, sus.omega, sus.phi_s);
        let mut a = vec![
            vec![1.0, -sw2 * alpha_f / alpha_p * nu * nu, -sdz2 / alpha_p * nu * nu, 0.0],
            vec![-sw2 * omega * omega, 1.0, -sx2 / alpha_f * kappa * kappa, 0.0],
            vec![-sdz2 * chi * chi, 0.0, 1.0, -sx2 * chi * chi],
            vec![-sw2 * kappa * kappa, 0.0, -sx2 / alpha_f * phi_s * phi_s, 1.0],
        ];
        let mut b = vec![
            0.0,
            sb2 * omega * omega,
            s * chi * chi,
            sb2 * kappa * kappa,
        ];
        let x = solve_small(&mut a, &mut b).ok_or_else(|| {
            Error::NumericalFailure(format!(
                "four-average system singular at alpha_f={alpha_f}, alpha_p={alpha_p}"
            ))
        })?;
        let t = sw2 * sw2 * alpha_f / alpha_p * omega * omega * nu * nu;
        let (w1w2, db1db2) = overlaps(sb2, sw2, kappa, t)?;
        return Ok(EnsembleAverages {
            w2: x[0],
            u2: x[1],
            dy2: x[2],
            db2: x[3],
            w1w2,
            db1db2,
        });
    }

    // Ridge-less limits.
    if (alpha_p - 1.0).abs() < THRESHOLD_WINDOW {
        let kappa = sus.kappa;
        let chi_nu = chi_nu_limit_over(alpha_f, consts.delta_phi(), sigma2);
        let t = if chi_nu.is_finite() {
            sigma2 * sigma2 * kappa * kappa * chi_nu * chi_nu / (alpha_f * alpha_p)
        } else {
            // kappa vanishes like 1/chi_nu, keeping the product finite:
            // kappa * chi_nu -> alpha_f / sigma2.
            alpha_f / alpha_p
        };
        let (w1w2, db1db2) = overlaps(sb2, sw2, kappa, t)?;
        return Ok(EnsembleAverages {
            dy2: 0.0,
            w2: f64::INFINITY,
            u2: 0.0,
            db2: f64::INFINITY,
            w1w2,
            db1db2,
        });
    }

    if alpha_p < 1.0 {
        if !sus.nu.is_finite() {
            // Linear activation at lambda = 0 with rank-deficient features.
            return degenerate_linear_activation(alpha_f, alpha_p, consts);
        }
        let (nu, chi, kappa, omega, phi_s) = (sus.nu, sus.chi, sus.kappa, sus.omega, sus.phi_s);
        let mut a = vec![
            vec![1.0, -sw2 * alpha_f / alpha_p * nu * nu, -sdz2 / alpha_p * nu * nu, 0.0],
            vec![-sw2 * omega * omega, 1.0, -sx2 / alpha_f * kappa * kappa, 0.0],
            vec![-sdz2 * chi * chi, 0.0, 1.0, -sx2 * chi * chi],
            vec![-sw2 * kappa * kappa, 0.0, -sx2 / alpha_f * phi_s * phi_s, 1.0],
        ];
        let mut b = vec![0.0, sb2 * omega * omega, s * chi * chi, sb2 * kappa * kappa];
        let x = solve_small(&mut a, &mut b).ok_or_else(|| {
            Error::NumericalFailure(format!(
                "four-average system singular at alpha_f={alpha_f}, alpha_p={alpha_p}"
            ))
        })?;
        let t = sw2 * sw2 * alpha_f / alpha_p * omega * omega * nu * nu;
        let (w1w2, db1db2) = overlaps(sb2, sw2, sus.kappa, t)?;
        return Ok(EnsembleAverages {
            w2: x[0],
            u2: x[1],
            dy2: x[2],
            db2: x[3],
            w1w2,
            db1db2,
        });
    }

    // Over-parameterized ridge-less limit: rescale u2 and dy2 by lambda^2.
    let (nu_m1, chi_1) = (
        sus.nu_m1.unwrap_or(f64::NAN),
        sus.chi_1.unwrap_or(f64::NAN),
    );
    if !chi_1.is_finite() || !nu_m1.is_finite() {
        return degenerate_linear_activation(alpha_f, alpha_p, consts);
    }
    let kappa = sus.kappa;
    let omega_1 = sx2 / alpha_f * chi_1 * kappa;
    let phi_m1 = -sw2 * nu_m1 * kappa;
    // Unknowns: (w2, U2, D2, db2) with u2 = lambda^2 U2, dy2 = lambda^2 D2.
    let mut a = vec![
        vec![1.0, -sw2 * alpha_f / alpha_p * nu_m1 * nu_m1, -sdz2 / alpha_p * nu_m1 * nu_m1, 0.0],
        vec![-sw2 * omega_1 * omega_1, 1.0, -sx2 / alpha_f * kappa * kappa, 0.0],
        vec![-sdz2 * chi_1 * chi_1, 0.0, 1.0, -sx2 * chi_1 * chi_1],
        vec![-sw2 * kappa * kappa, 0.0, -sx2 / alpha_f * phi_m1 * phi_m1, 1.0],
    ];
    let mut b = vec![0.0, sb2 * omega_1 * omega_1, s * chi_1 * chi_1, sb2 * kappa * kappa];
    let x = solve_small(&mut a, &mut b).ok_or_else(|| {
        Error::NumericalFailure(format!(
            "rescaled four-average system singular at alpha_f={alpha_f}, alpha_p={alpha_p}"
        ))
    })?;
    let t = sw2 * sw2 * alpha_f / alpha_p * omega_1 * omega_1 * nu_m1 * nu_m1;
    let (w1w2, db1db2) = overlaps(sb2, sw2, kappa, t)?;
    Ok(EnsembleAverages {
        w2: x[0],
        u2: 0.0,
        dy2: 0.0,
        db2: x[3],
        w1w2,
        db1db2,
    })
}

fn overlaps(sb2: f64, sw2: f64, kappa: f64, t: f64) -> Result<(f64, f64)> {
    if !(t < 1.0) {
        return Err(Error::NumericalFailure(format!(
            "overlap series diverges (t = {t} >= 1): phase boundary"
        )));
    }
    let w1w2 = sb2 / sw2 * t / (1.0 - t);
    let db1db2 = sb2 * kappa * kappa / (1.0 - t);
    Ok((w1w2, db1db2))
}

/// Ridge-less linear activation makes the hidden layer an exact (invertible)
/// reparameterization when `alpha_f < min(1, alpha_p)`: test error, bias, and
/// parameter errors equal linear regression at ratio `alpha_f`. The fit
/// parameters live in the larger hidden space, scaled by the layer's
/// second moment.
fn degenerate_linear_activation(
    alpha_f: f64,
    alpha_p: f64,
    consts: &TheoryConstants,
) -> Result<EnsembleAverages> {
    if !(alpha_f < 1.0 && alpha_f < alpha_p) {
        return Err(Error::NumericalFailure(format!(
            "ridge-less linear activation is only supported for alpha_f < min(1, alpha_p); \
             got alpha_f={alpha_f}, alpha_p={alpha_p} (use a small positive lambda)"
        )));
    }
    let lin = linreg_theory(alpha_f, consts, 0.0)?;
    let scale = alpha_f / (alpha_p * consts.sigma_w2);
    Ok(EnsembleAverages {
        dy2: lin.averages.dy2,
        w2: scale * lin.averages.w2,
        u2: lin.averages.u2,
        db2: lin.averages.db2,
        w1w2: scale * lin.averages.w1w2,
        db1db2: lin.averages.db1db2,
    })
}

/// Full analytic evaluation at one `(alpha_f, alpha_p, lambda)` point.
pub fn rnlfm_theory(
    alpha_f: f64,
    alpha_p: f64,
    consts: &TheoryConstants,
    lambda: f64,
) -> Result<TheoryResult> {
    let sus = rnlfm_susceptibilities(
        alpha_f,
        alpha_p,
        lambda,
        consts.delta_phi(),
        consts.sigma_w2,
        consts.sigma_x2,
    )?;
    let averages = rnlfm_ensemble_averages(&sus, alpha_f, alpha_p, consts)?;
    Ok(assemble_decomposition(&averages, &sus, consts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const RELU_DELTA: f64 = 1.0 - 2.0 / std::f64::consts::PI;

    fn consts(delta_phi: f64, sigma_dy2: f64, sigma_eps2: f64) -> TheoryConstants {
        TheoryConstants {
            sigma_beta2: 1.0,
            sigma_x2: 1.0,
            sigma_eps2,
            sigma_dy2,
            sigma_dz2: delta_phi,
            sigma_w2: 1.0,
        }
    }

    #[test]
    fn under_parameterized_chi_is_one_minus_alpha_p() {
        let sus = rnlfm_susceptibilities(0.25, 0.5, 0.0, RELU_DELTA, 1.0, 1.0).unwrap();
        assert_eq!(sus.chi, 0.5);
        assert!(sus.nu > 0.0 && sus.nu.is_finite());
    }

    #[test]
    fn over_parameterized_nu_leads_with_inverse_lambda() {
        let lambda = 1e-6;
        let sus = rnlfm_susceptibilities(0.25, 8.0, lambda, RELU_DELTA, 1.0, 1.0).unwrap();
        let lead = (7.0 / 8.0) / lambda;
        assert!((sus.nu - lead).abs() < 10.0, "nu {} vs lead {}", sus.nu, lead);
        assert!(sus.nu > lead);
    }

    #[test]
    fn quartic_root_residual_and_nu_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..100 {
            let alpha_f = rng.random_range(0.1..8.0);
            let alpha_p = rng.random_range(0.1..8.0);
            let lambda = 10f64.powf(rng.random_range(-6.0..0.0));
            let sus =
                rnlfm_susceptibilities(alpha_f, alpha_p, lambda, RELU_DELTA, 1.0, 1.0).unwrap();
            let coeffs = chi_quartic_coefficients(alpha_f, alpha_p, lambda, RELU_DELTA);
            let max_coeff = coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
            let c: Vec<Complex64> = coeffs.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            let (p, _) = poly::eval_with_derivative(&c, Complex64::new(sus.chi, 0.0));
            assert!(
                p.norm() <= 1e-10 * max_coeff,
                "residual {} at ({alpha_f}, {alpha_p}, {lambda})",
                p.norm()
            );
            let nu_rel = (sus.chi + alpha_p - 1.0) / (lambda * alpha_p);
            assert!(
                (sus.nu - nu_rel).abs() <= 1e-12 * nu_rel.abs().max(1e-300),
                "nu relation violated"
            );
        }
    }

    #[test]
    fn a5_identities_hold() {
        for (af, ap, lambda) in [(0.25, 0.5, 1e-6), (0.25, 4.0, 1e-4), (2.0, 0.7, 1e-3)] {
            let sus = rnlfm_susceptibilities(af, ap, lambda, RELU_DELTA, 1.3, 0.8).unwrap();
            let sigma2 = 1.3 * 0.8;
            let kappa = 1.0 / (1.0 + sigma2 / af * sus.chi * sus.nu);
            assert!((sus.kappa - kappa).abs() <= 1e-12 * kappa.abs());
            assert!((sus.omega - 0.8 / af * sus.chi * sus.kappa).abs() <= 1e-12);
            assert!((sus.phi_s + 1.3 * sus.nu * sus.kappa).abs() <= 1e-12 * sus.phi_s.abs());
        }
    }

    #[test]
    fn average_system_residual_is_tiny() {
        let c = consts(RELU_DELTA, 0.0, 0.1);
        for (af, ap, lambda) in [(0.25, 0.5, 1e-6), (0.25, 4.0, 1e-6), (1.5, 2.5, 1e-3)] {
            let sus = rnlfm_susceptibilities(af, ap, lambda, RELU_DELTA, 1.0, 1.0).unwrap();
            let av = rnlfm_ensemble_averages(&sus, af, ap, &c).unwrap();
            // Back-substitute into the four self-consistency equations.
            let (nu, chi, kappa, omega, phi_s) = (sus.nu, sus.chi, sus.kappa, sus.omega, sus.phi_s);
            let r1 = av.w2 - nu * nu * (af / ap * av.u2 + c.sigma_dz2 / ap * av.dy2);
            let r2 = av.u2
                - kappa * kappa / af * av.dy2
                - omega * omega * (1.0 + av.w2);
            let r3 = av.dy2 - chi * chi * (av.db2 + c.sigma_dz2 * av.w2 + c.s());
            let r4 = av.db2
                - kappa * kappa * (1.0 + av.w2)
                - phi_s * phi_s / af * av.dy2;
            let scale = [av.w2, av.u2, av.dy2, av.db2, 1.0]
                .iter()
                .fold(0.0f64, |a, b| a.max(b.abs()));
            for (i, r) in [r1, r2, r3, r4].iter().enumerate() {
                assert!(
                    r.abs() <= 1e-10 * scale,
                    "residual {i} = {r} at ({af}, {ap}, {lambda})"
                );
            }
        }
    }

    #[test]
    fn no_signal_no_noise_gives_zero_averages() {
        let c = TheoryConstants {
            sigma_beta2: 0.0,
            sigma_x2: 1.0,
            sigma_eps2: 0.0,
            sigma_dy2: 0.0,
            sigma_dz2: RELU_DELTA,
            sigma_w2: 1.0,
        };
        let r = rnlfm_theory(0.25, 4.0, &c, 1e-6).unwrap();
        for v in [
            r.averages.dy2,
            r.averages.w2,
            r.averages.u2,
            r.averages.db2,
            r.averages.w1w2,
            r.averages.db1db2,
        ] {
            assert!(v.abs() < 1e-30, "average {v}");
        }
    }

    #[test]
    fn linear_activation_limit_matches_linear_regression() {
        // With a linear activation and alpha_f < min(1, alpha_p) the hidden
        // layer is an invertible reparameterization, so the test error equals
        // linear regression at ratio alpha_f. The two limits do not commute:
        // the ridge must dominate the near-degenerate activation directions
        // (lambda >> sigma2 * delta_phi), otherwise the min-norm solution
        // keeps interpolating through them.
        let lin0 = linreg_theory(0.5, &consts(0.0, 0.0, 0.1), 0.0).unwrap();
        // Exactly linear activation at lambda = 0: the documented limit path.
        let r0 = rnlfm_theory(0.5, 2.0, &consts(0.0, 0.0, 0.1), 0.0).unwrap();
        assert!((r0.test - lin0.test).abs() <= 1e-12 * lin0.test);
        // Tiny nonlinearity with a ridge well above it: agreement holds to
        // O(lambda) (the random layer perturbs the effective ridge).
        let r = rnlfm_theory(0.5, 2.0, &consts(1e-12, 0.0, 0.1), 1e-5).unwrap();
        assert!(
            (r.test - lin0.test).abs() <= 1e-4 * lin0.test,
            "test {} vs {}",
            r.test,
            lin0.test
        );
        // In the opposite order (lambda -> 0 first) the interpolation through
        // the weak nonlinear directions survives: the ridge-less limit at
        // small fixed delta_phi exceeds the linear-regression value. The
        // hand limit of the branch equations at these parameters is 0.3.
        let r_min_norm = rnlfm_theory(0.5, 2.0, &consts(1e-6, 0.0, 0.1), 0.0).unwrap();
        assert!((r_min_norm.test - 0.3).abs() < 1e-4, "{}", r_min_norm.test);
        // Outside the supported wedge the degenerate corner is an error.
        assert!(rnlfm_theory(1.5, 2.0, &consts(0.0, 0.0, 0.1), 0.0).is_err());
    }

    #[test]
    fn delta_phi_limits_match_tiny_delta_evaluation() {
        // under-parameterized, alpha_f > alpha_p: nu has a finite limit
        let s_lim = rnlfm_susceptibilities(0.7, 0.4, 0.0, 0.0, 1.0, 1.0).unwrap();
        let s_num = rnlfm_susceptibilities(0.7, 0.4, 0.0, 1e-8, 1.0, 1.0).unwrap();
        assert!((s_lim.nu - s_num.nu).abs() <= 1e-6 * s_num.nu);
        // over-parameterized, alpha_f > 1: chi_1 and nu_0 have finite limits
        let s_lim = rnlfm_susceptibilities(2.0, 3.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        let s_num = rnlfm_susceptibilities(2.0, 3.0, 0.0, 1e-8, 1.0, 1.0).unwrap();
        assert!((s_lim.chi_1.unwrap() - s_num.chi_1.unwrap()).abs() <= 1e-6 * s_num.chi_1.unwrap());
        assert!((s_lim.nu_0.unwrap() - s_num.nu_0.unwrap()).abs() <= 1e-6 * s_num.nu_0.unwrap());
    }

    #[test]
    fn branch_matching_against_small_lambda() {
        let c = consts(RELU_DELTA, 0.02, 0.1);
        for (af, ap) in [(0.25, 0.5), (0.25, 2.0), (0.25, 4.0), (1.5, 0.6), (1.5, 3.0)] {
            let exact = rnlfm_theory(af, ap, &c, 1e-8).unwrap();
            let branch = rnlfm_theory(af, ap, &c, 0.0).unwrap();
            for (a, b, what) in [
                (exact.train, branch.train, "train"),
                (exact.test, branch.test, "test"),
                (exact.bias2, branch.bias2, "bias2"),
                (exact.variance, branch.variance, "variance"),
            ] {
                let scale = b.abs().max(1.0);
                assert!(
                    (a - b).abs() <= 1e-4 * scale,
                    "{what} at ({af}, {ap}): {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn training_error_branches() {
        let c = consts(RELU_DELTA, 0.0, 0.1);
        // Under-parameterized: positive training error at lambda = 0.
        let under = rnlfm_theory(0.25, 0.5, &c, 0.0).unwrap();
        assert!(under.train > 0.0);
        // Over-parameterized: pinned at zero, O(lambda^2) at finite ridge.
        let over = rnlfm_theory(0.25, 4.0, &c, 0.0).unwrap();
        assert_eq!(over.train, 0.0);
        let over_eps = rnlfm_theory(0.25, 4.0, &c, 1e-6).unwrap();
        assert!(over_eps.train > 0.0 && over_eps.train < 1e-9);
    }

    #[test]
    fn threshold_divergence_with_finite_bias() {
        let c = consts(RELU_DELTA, 0.05, 0.1);
        let r = rnlfm_theory(0.25, 1.0, &c, 0.0).unwrap();
        assert!(r.diverged);
        assert_eq!(r.test, f64::INFINITY);
        assert_eq!(r.variance, f64::INFINITY);
        assert!(r.bias2.is_finite() && r.bias2 > 0.05);
        assert_eq!(r.train, 0.0);
        // The bias limit is approached continuously from both sides.
        let below = rnlfm_theory(0.25, 1.0 - 1e-5, &c, 0.0).unwrap();
        let above = rnlfm_theory(0.25, 1.0 + 1e-5, &c, 0.0).unwrap();
        assert!((below.bias2 - r.bias2).abs() < 1e-3);
        assert!((above.bias2 - r.bias2).abs() < 1e-3);
    }

    #[test]
    fn variance_decreases_past_threshold() {
        let c = consts(RELU_DELTA, 0.0, 0.1);
        let mut last = f64::INFINITY;
        for ap in [1.5, 2.0, 3.0, 5.0, 8.0] {
            let r = rnlfm_theory(0.5, ap, &c, 0.0).unwrap();
            assert!(r.variance < last, "variance not decreasing at alpha_p = {ap}");
            last = r.variance;
        }
    }

    #[test]
    fn nonlinear_model_is_always_biased() {
        let c = consts(RELU_DELTA, 0.0, 0.1);
        for ap in [0.5, 2.0, 8.0] {
            let r = rnlfm_theory(0.25, ap, &c, 0.0).unwrap();
            assert!(r.bias2 > 0.0, "bias vanished at alpha_p = {ap}");
        }
    }
}
