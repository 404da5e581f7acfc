//! Analytic eigenvalue densities of the kernel matrix `Z^T Z`: the
//! Marchenko-Pastur law for linear regression and the quartic
//! Green's-function spectrum for the random nonlinear features model, with
//! support-edge finding on the quartic discriminant and the zero-eigenvalue
//! weight.
//!
//! Densities are recovered from the resolvent trace through
//! `rho(x) = -(1/pi) Im nu(-x + i eps)`, extrapolated to `eps -> 0` over two
//! regulator values.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::poly;

/// Default imaginary regulator.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// An analytic spectral density: a point mass at zero plus a bulk.
#[derive(Debug, Clone)]
pub struct SpectralDensity {
    /// Weight of the delta function at zero.
    pub f_zero: f64,
    /// Closed support intervals of the bulk, ascending.
    pub support: Vec<(f64, f64)>,
    /// Outermost bulk edges.
    pub x_min: f64,
    pub x_max: f64,
    /// Imaginary regulator used for evaluation (zero for closed forms).
    pub epsilon: f64,
    kind: DensityKind,
}

#[derive(Debug, Clone)]
enum DensityKind {
    MarchenkoPastur { sigma_x2: f64 },
    Quartic(QuarticDiscriminant),
}

/// Coefficient bundle of the spectral quartic for the nonlinear model, with
/// the resolvent combinations `R`, `Q` and the discriminant `D = R^2 - 4Q^3`
/// used for edge finding.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuarticDiscriminant {
    pub alpha_f: f64,
    pub alpha_p: f64,
    pub delta_phi: f64,
    /// `sigma_w2 * sigma_x2`.
    pub scale: f64,
}

impl QuarticDiscriminant {
    /// Coefficients (ascending powers) of the quartic in `u = alpha_p *
    /// lbar * nubar` at complex ridge `lambda`.
    pub fn coefficients(&self, lambda: Complex64) -> [Complex64; 5] {
        let lbar = lambda / self.scale;
        let (af, ap, dp) = (self.alpha_f, self.alpha_p, self.delta_phi);
        let c = |x: f64| Complex64::new(x, 0.0);
        [
            -c(af * ap.powi(3)) * lbar * lbar,
            c(ap)
                * (c((af * (1.0 + dp) - ap) * (1.0 - ap)) + c(af * ap) * lbar)
                * lbar,
            c(dp * (1.0 - ap).powi(2)) + c(ap * (af * (1.0 + dp) + 1.0 - 2.0 * ap)) * lbar,
            c(2.0 * dp * (1.0 - ap)) + c(ap) * lbar,
            c(dp),
        ]
    }

    /// Real coefficients at `lambda = -x`.
    pub fn coefficients_real(&self, x: f64) -> [f64; 5] {
        self.coefficients(Complex64::new(-x, 0.0)).map(|c| c.re)
    }

    /// Resolvent combinations of the real coefficients at `lambda = -x`.
    pub fn rq(&self, x: f64) -> (f64, f64) {
        let [a0, a1, a2, a3, a4] = self.coefficients_real(x);
        let r = 2.0 * a2.powi(3) - 9.0 * a1 * a2 * a3 + 27.0 * a0 * a3 * a3
            + 27.0 * a1 * a1 * a4
            - 72.0 * a0 * a2 * a4;
        let q = a2 * a2 - 3.0 * a1 * a3 + 12.0 * a0 * a4;
        (r, q)
    }

    /// Discriminant `D(-x) = R^2 - 4 Q^3`; its sign changes locate the bulk
    /// edges.
    pub fn d(&self, x: f64) -> f64 {
        let (r, q) = self.rq(x);
        r * r - 4.0 * q * q * q
    }

    /// All resolvent roots `nu(-x + i eps)` of the quartic.
    fn nu_roots(&self, x: f64, eps: f64) -> Vec<Complex64> {
        let lambda = Complex64::new(-x, eps);
        let coeffs = self.coefficients(lambda);
        let lbar = lambda / self.scale;
        poly::roots(&coeffs)
            .into_iter()
            .map(|u| u / (self.alpha_p * lbar) / self.scale)
            .collect()
    }

    /// Tracked sweep of the physical resolvent branch along an ascending
    /// grid at one regulator value.
    fn nu_sweep(&self, xs: &[f64], eps: f64) -> Result<Vec<Complex64>> {
        let mut anchor = None;
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let roots = self.nu_roots(x, eps);
            let nu = select_root(&roots, anchor, x)?;
            anchor = Some(nu);
            out.push(nu);
        }
        Ok(out)
    }
}

/// Bulk density along a grid: the zero-eigenvalue pole `f_zero / lambda` is
/// subtracted from the resolvent analytically (its regulated image is a
/// Poisson kernel that would otherwise swamp the bulk at small `x`), and the
/// leading regulator error is removed by Richardson extrapolation over
/// `eps` and `2 eps`.
fn quartic_rho_grid(
    q: &QuarticDiscriminant,
    f_zero: f64,
    eps: f64,
    xs: &[f64],
) -> Result<Vec<f64>> {
    let pi = std::f64::consts::PI;
    let one = |e: f64| -> Result<Vec<f64>> {
        let nus = q.nu_sweep(xs, e)?;
        Ok(nus
            .iter()
            .zip(xs)
            .map(|(nu, &x)| -nu.im / pi - f_zero * e / (pi * (x * x + e * e)))
            .collect())
    };
    let a = one(eps)?;
    let b = one(2.0 * eps)?;
    Ok(a.iter().zip(&b).map(|(ra, rb)| 2.0 * ra - rb).collect())
}

/// Physical-branch selection: the resolvent of a positive spectrum has a
/// strictly negative imaginary part for `eps > 0`. Among such roots, take
/// the one continuous with the previous grid point (most negative imaginary
/// part when unanchored).
fn select_root(
    roots: &[Complex64],
    anchor: Option<Complex64>,
    x: f64,
) -> Result<Complex64> {
    let mut best: Option<Complex64> = None;
    for &r in roots {
        if r.im >= 0.0 {
            continue;
        }
        best = Some(match (best, anchor) {
            (None, _) => r,
            (Some(b), None) => {
                if r.im < b.im {
                    r
                } else {
                    b
                }
            }
            (Some(b), Some(a)) => {
                if (r - a).norm() < (b - a).norm() {
                    r
                } else {
                    b
                }
            }
        });
    }
    best.ok_or_else(|| Error::SpectralRoot {
        x,
        roots: roots.to_vec(),
    })
}

impl SpectralDensity {
    /// Bulk density at one point. For the quartic spectrum this evaluates
    /// without a continuity anchor; prefer [`rho_grid`](Self::rho_grid) for
    /// curves.
    pub fn rho(&self, x: f64) -> Result<f64> {
        match &self.kind {
            DensityKind::MarchenkoPastur { .. } => Ok(self.mp_rho(x)),
            DensityKind::Quartic(_) => Ok(self.rho_grid(&[x])?[0]),
        }
    }

    fn mp_rho(&self, x: f64) -> f64 {
        let DensityKind::MarchenkoPastur { sigma_x2, .. } = self.kind else {
            unreachable!()
        };
        if x <= self.x_min || x >= self.x_max || x <= 0.0 {
            return 0.0;
        }
        ((self.x_max - x) * (x - self.x_min)).sqrt()
            / (2.0 * std::f64::consts::PI * sigma_x2 * x)
    }

    /// Bulk density along an ascending grid, with branch tracking for the
    /// quartic spectrum and Richardson extrapolation of the regulator.
    pub fn rho_grid(&self, xs: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            DensityKind::MarchenkoPastur { .. } => Ok(xs.iter().map(|&x| self.mp_rho(x)).collect()),
            DensityKind::Quartic(q) => quartic_rho_grid(q, self.f_zero, self.epsilon, xs),
        }
    }

    /// Bulk mass on `[a, b]` by Simpson quadrature under the square-root edge
    /// substitution `x = c - h cos(theta)` applied per support interval.
    pub fn mass_in(&self, a: f64, b: f64) -> Result<f64> {
        let mut total = 0.0;
        for &(lo, hi) in &self.support {
            let (s, e) = (a.max(lo), b.min(hi));
            if s >= e {
                continue;
            }
            total += self.interval_mass(lo, hi, s, e)?;
        }
        Ok(total)
    }

    /// Mass of `[s, e]` inside the support interval `[lo, hi]`, under the
    /// substitution `x = c - h cos(theta)` whose Jacobian absorbs the
    /// square-root edge behavior. The panel count doubles until two
    /// consecutive estimates agree (hard edges at an interpolation threshold
    /// diverge more steeply than a square root).
    fn interval_mass(&self, lo: f64, hi: f64, s: f64, e: f64) -> Result<f64> {
        let mut n = 256usize;
        let mut last = self.interval_mass_fixed(lo, hi, s, e, n)?;
        while n < 16384 {
            n *= 2;
            let next = self.interval_mass_fixed(lo, hi, s, e, n)?;
            let close = (next - last).abs() <= 1e-6 * next.abs().max(1e-9);
            last = next;
            if close {
                break;
            }
        }
        Ok(last)
    }

    fn interval_mass_fixed(&self, lo: f64, hi: f64, s: f64, e: f64, n: usize) -> Result<f64> {
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        if h <= 0.0 {
            return Ok(0.0);
        }
        let theta_of = |x: f64| ((c - x) / h).clamp(-1.0, 1.0).acos();
        let (t_lo, t_hi) = (theta_of(s), theta_of(e));
        let dt = (t_hi - t_lo) / n as f64;
        let thetas: Vec<f64> = (0..=n).map(|i| t_lo + i as f64 * dt).collect();
        // Substituted integrand rho(x(theta)) * h * sin(theta).
        let integrand: Vec<f64> = match &self.kind {
            // Closed form: rho * dx/dtheta = h^2 sin^2(theta) / (2 pi s2 x).
            // When the lower edge sits at zero this simplifies to
            // h (1 + cos(theta)) / (2 pi s2), removing the 0/0 endpoint.
            DensityKind::MarchenkoPastur { sigma_x2 } => {
                let norm = 2.0 * std::f64::consts::PI * sigma_x2;
                thetas
                    .iter()
                    .map(|t| {
                        if lo <= 0.0 {
                            h * (1.0 + t.cos()) / norm
                        } else {
                            let x = c - h * t.cos();
                            h * h * t.sin() * t.sin() / (norm * x)
                        }
                    })
                    .collect()
            }
            DensityKind::Quartic(_) => {
                let xs: Vec<f64> = thetas.iter().map(|t| c - h * t.cos()).collect();
                let rhos = self.rho_grid(&xs)?;
                rhos.iter()
                    .zip(&thetas)
                    .map(|(r, t)| r * h * t.sin())
                    .collect()
            }
        };
        let mut acc = 0.0;
        for (i, g) in integrand.iter().enumerate() {
            let wt = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += wt * g;
        }
        Ok(acc * dt / 3.0)
    }

    /// `f_zero` plus the integrated bulk.
    pub fn total_mass(&self) -> Result<f64> {
        let mut m = self.f_zero;
        for &(lo, hi) in &self.support {
            m += self.interval_mass(lo, hi, lo, hi)?;
        }
        Ok(m)
    }
}

/// Marchenko-Pastur density of the linear-regression kernel `X^T X`.
pub fn mp_density(alpha_f: f64, sigma_x2: f64) -> Result<SpectralDensity> {
    if !(alpha_f > 0.0) || !(sigma_x2 > 0.0) {
        return Err(Error::InvalidConfig(
            "mp_density requires alpha_f > 0 and sigma_x2 > 0".into(),
        ));
    }
    let root = (1.0 / alpha_f).sqrt();
    let x_min = sigma_x2 * (1.0 - root).powi(2);
    let x_max = sigma_x2 * (1.0 + root).powi(2);
    Ok(SpectralDensity {
        f_zero: (1.0 - 1.0 / alpha_f).max(0.0),
        support: vec![(x_min, x_max)],
        x_min,
        x_max,
        epsilon: 0.0,
        kind: DensityKind::MarchenkoPastur { sigma_x2 },
    })
}

/// Quartic Green's-function density of the nonlinear-model kernel.
///
/// `scale` is `sigma_w2 * sigma_x2`; `epsilon` is the imaginary regulator
/// (clamped to `[1e-9, 1e-3]` by the contract). Support edges are located by
/// sign changes of the discriminant on a log-spaced scan, bisected to
/// `1e-10` relative accuracy; segments are classified as bulk where the
/// discriminant is negative.
pub fn rnlfm_density(
    alpha_f: f64,
    alpha_p: f64,
    delta_phi: f64,
    scale: f64,
    epsilon: f64,
) -> Result<SpectralDensity> {
    for (name, v) in [
        ("alpha_f", alpha_f),
        ("alpha_p", alpha_p),
        ("scale", scale),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "{name} must be finite and > 0, got {v}"
            )));
        }
    }
    if !(1e-9..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must lie in [1e-9, 1e-3], got {epsilon}"
        )));
    }
    if !(delta_phi >= 0.0) {
        return Err(Error::InvalidConfig("delta_phi must be >= 0".into()));
    }
    let q = QuarticDiscriminant {
        alpha_f,
        alpha_p,
        delta_phi,
        scale,
    };
    let f_zero = (1.0 - 1.0 / alpha_p).max(0.0);

    // Scan bounds: a generous multiple of the mean nonzero eigenvalue times
    // the worst-case edge amplification, extended if the bulk hugs it.
    let amin = alpha_f.min(alpha_p).min(1.0);
    let mean_eig = scale * (1.0 + delta_phi) * (1.0 / alpha_p).max(1.0);
    let mut hi = 10.0 * mean_eig * (1.0 + (1.0 / amin).sqrt()).powi(2);
    let lo = 1e-8 * scale;

    // Locate the bulk by thresholding the regulated density on a log grid,
    // then refine each boundary on the discriminant (root collisions flip
    // its sign across a true edge), falling back to indicator bisection
    // where the discriminant is degenerate.
    let (grid, rho, tol) = loop {
        let n = 3000usize;
        let (ll, lh) = (lo.ln(), hi.ln());
        let grid: Vec<f64> = (0..=n)
            .map(|i| (ll + (lh - ll) * i as f64 / n as f64).exp())
            .collect();
        let rho = quartic_rho_grid(&q, f_zero, epsilon, &grid)?;
        // Absolute floor in density units: any bulk feature carrying more
        // than ~1e-5 of the mass over the scanned extent clears it, while
        // the residual regulator noise in gaps stays far below.
        let tol = 1e-6 / hi;
        if *rho.last().unwrap() > tol {
            hi *= 4.0;
            continue;
        }
        break (grid, rho, tol);
    };

    let inside = |r: f64| r > tol;
    let refine = |a: f64, b: f64| -> f64 {
        // Prefer the paper's edge equation D(-x) = 0 when the bracket
        // straddles a sign change.
        let (da, db) = (q.d(a), q.d(b));
        let (mut a, mut b) = (a, b);
        if da.is_finite() && db.is_finite() && da.signum() * db.signum() < 0.0 {
            let mut da = da;
            while (b - a) > 1e-10 * b.abs() {
                let m = 0.5 * (a + b);
                let dm = q.d(m);
                if !dm.is_finite() || dm == 0.0 {
                    break;
                }
                if da.signum() * dm.signum() < 0.0 {
                    b = m;
                } else {
                    a = m;
                    da = dm;
                }
            }
        } else {
            while (b - a) > 1e-10 * b.abs() {
                let m = 0.5 * (a + b);
                let rm = quartic_rho_grid(&q, f_zero, epsilon, &[m]).map(|v| v[0]);
                match rm {
                    Ok(r) if inside(r) => b = m,
                    _ => a = m,
                }
            }
        }
        0.5 * (a + b)
    };

    let mut support: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<f64> = None;
    for i in 0..grid.len() {
        let is_in = inside(rho[i]);
        match (open, is_in) {
            (None, true) => {
                let start = if i == 0 {
                    grid[0]
                } else {
                    refine(grid[i - 1], grid[i])
                };
                open = Some(start);
            }
            (Some(start), false) => {
                // The closing edge lies between the last inside point and
                // this outside point; the bracket orientation is (in, out).
                let end = refine_closing(&q, f_zero, epsilon, tol, grid[i - 1], grid[i]);
                support.push((start, end));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        support.push((start, *grid.last().unwrap()));
    }
    if support.is_empty() {
        return Err(Error::NumericalFailure(format!(
            "no bulk support located for alpha_f={alpha_f}, alpha_p={alpha_p}"
        )));
    }

    let x_min = support[0].0;
    let x_max = support.last().unwrap().1;
    let density = SpectralDensity {
        f_zero,
        support,
        x_min,
        x_max,
        epsilon,
        kind: DensityKind::Quartic(q),
    };
    // Drop spurious slivers with negligible mass.
    let mut kept = Vec::new();
    for &(a, b) in &density.support {
        if density.interval_mass(a, b, a, b)? > 1e-8 {
            kept.push((a, b));
        }
    }
    if kept.is_empty() {
        return Err(Error::NumericalFailure(format!(
            "bulk support carries no mass for alpha_f={alpha_f}, alpha_p={alpha_p}"
        )));
    }
    let x_min = kept[0].0;
    let x_max = kept.last().unwrap().1;
    Ok(SpectralDensity {
        support: kept,
        x_min,
        x_max,
        ..density
    })
}

/// Refines a closing (descending) edge in `(inside, outside)`, preferring
/// the discriminant equation and falling back to indicator bisection.
fn refine_closing(
    q: &QuarticDiscriminant,
    f_zero: f64,
    epsilon: f64,
    tol: f64,
    a: f64,
    b: f64,
) -> f64 {
    let (da, db) = (q.d(a), q.d(b));
    let (mut a, mut b) = (a, b);
    if da.is_finite() && db.is_finite() && da.signum() * db.signum() < 0.0 {
        let mut da = da;
        while (b - a) > 1e-10 * b.abs() {
            let m = 0.5 * (a + b);
            let dm = q.d(m);
            if !dm.is_finite() || dm == 0.0 {
                break;
            }
            if da.signum() * dm.signum() < 0.0 {
                b = m;
            } else {
                a = m;
                da = dm;
            }
        }
    } else {
        while (b - a) > 1e-10 * b.abs() {
            let m = 0.5 * (a + b);
            let rm = quartic_rho_grid(q, f_zero, epsilon, &[m]).map(|v| v[0]);
            match rm {
                Ok(r) if r > tol => a = m,
                _ => b = m,
            }
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RELU_DELTA: f64 = 1.0 - 2.0 / std::f64::consts::PI;

    #[test]
    fn mp_edges_at_threshold() {
        let d = mp_density(1.0, 1.0).unwrap();
        assert_eq!(d.x_min, 0.0);
        assert_eq!(d.x_max, 4.0);
        assert_eq!(d.f_zero, 0.0);
    }

    #[test]
    fn mp_zero_weight_over_parameterized() {
        let d = mp_density(2.0, 1.0).unwrap();
        assert_eq!(d.f_zero, 0.5);
    }

    #[test]
    fn mp_mass_is_unit() {
        for alpha_f in [0.25, 0.5, 1.0, 2.0, 8.0] {
            let d = mp_density(alpha_f, 1.0).unwrap();
            let m = d.total_mass().unwrap();
            assert!((m - 1.0).abs() <= 1e-6, "mass {m} at alpha_f {alpha_f}");
        }
        let d = mp_density(0.25, 1.0).unwrap();
        assert_eq!(d.f_zero, 0.0);
        assert!((d.x_min - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mp_density_is_nonnegative_and_vanishes_outside() {
        let d = mp_density(0.5, 1.3).unwrap();
        assert_eq!(d.rho(d.x_min - 1e-3).unwrap(), 0.0);
        assert_eq!(d.rho(d.x_max + 1e-3).unwrap(), 0.0);
        let xs: Vec<f64> = (1..100)
            .map(|i| d.x_min + (d.x_max - d.x_min) * i as f64 / 100.0)
            .collect();
        for r in d.rho_grid(&xs).unwrap() {
            assert!(r >= 0.0);
        }
    }

    #[test]
    fn chi_and_u_quartics_are_consistent() {
        // The spectral quartic in u and the self-consistency quartic in chi
        // are related by u = chi + alpha_p - 1 at real lambda.
        let q = QuarticDiscriminant {
            alpha_f: 0.25,
            alpha_p: 2.0,
            delta_phi: RELU_DELTA,
            scale: 1.0,
        };
        let lambda = 0.37;
        let cu = q.coefficients(Complex64::new(lambda, 0.0));
        let cchi = crate::theory::chi_quartic_coefficients(0.25, 2.0, lambda, RELU_DELTA);
        for chi_root in poly::roots_real(&cchi) {
            let u = chi_root + Complex64::new(2.0 - 1.0, 0.0);
            let (p, _) = poly::eval_with_derivative(&cu, u);
            let scale = cu.iter().fold(0.0f64, |a, c| a.max(c.norm()));
            assert!(p.norm() <= 1e-9 * scale, "u-quartic residual {}", p.norm());
        }
    }

    #[test]
    fn rnlfm_zero_weight() {
        let d = rnlfm_density(0.25, 8.0, RELU_DELTA, 1.0, 1e-6).unwrap();
        assert_eq!(d.f_zero, 1.0 - 1.0 / 8.0);
    }

    #[test]
    fn rnlfm_mass_is_unit() {
        for (af, ap) in [(0.25, 0.125), (0.25, 1.0), (0.25, 8.0)] {
            let d = rnlfm_density(af, ap, RELU_DELTA, 1.0, 1e-6).unwrap();
            let m = d.total_mass().unwrap();
            assert!(
                (m - 1.0).abs() <= 1e-3,
                "mass {m} at alpha_p {ap} (f_zero {})",
                d.f_zero
            );
        }
    }

    #[test]
    fn rnlfm_density_nonnegative() {
        let d = rnlfm_density(0.25, 2.0, RELU_DELTA, 1.0, 1e-6).unwrap();
        let xs: Vec<f64> = (0..200).map(|i| 1e-3 + i as f64 * 0.05).collect();
        for (x, r) in xs.iter().zip(d.rho_grid(&xs).unwrap()) {
            assert!(r >= -1e-10, "rho({x}) = {r}");
        }
    }

    #[test]
    fn linear_activation_limit_recovers_marchenko_pastur() {
        // Near-linear activation with a wide random layer: W W^T concentrates
        // and the order-one part of the kernel bulk is the input-feature
        // Wishart at ratio alpha_f, carrying N_f of the N_p eigenvalues. The
        // concentration error decays like alpha_f/alpha_p, so the comparison
        // is taken at large alpha_p.
        let af = 0.25;
        let ap = 64.0;
        let mp = mp_density(af, 1.0).unwrap();
        let d = rnlfm_density(af, ap, 1e-9, 1.0, 1e-6).unwrap();
        let xs: Vec<f64> = (1..30)
            .map(|i| mp.x_min + (mp.x_max - mp.x_min) * i as f64 / 30.0)
            .collect();
        let got = d.rho_grid(&xs).unwrap();
        let want = mp.rho_grid(&xs).unwrap();
        for ((x, g), w) in xs.iter().zip(&got).zip(&want) {
            let scaled = g * ap / af;
            assert!(
                (scaled - w).abs() <= 2e-2 * w,
                "rho({x}): scaled {scaled} vs {w}"
            );
            // Absolute agreement of the raw densities is much tighter.
            assert!((g - w * af / ap).abs() <= 1e-3);
        }
    }

    #[test]
    fn gap_closes_at_interpolation_threshold() {
        let d = rnlfm_density(0.25, 1.0, RELU_DELTA, 1.0, 1e-6).unwrap();
        assert!(d.x_min < 1e-3, "lower edge {}", d.x_min);
        // Away from the threshold the gap is finite on both sides.
        let under = rnlfm_density(0.25, 0.5, RELU_DELTA, 1.0, 1e-6).unwrap();
        assert!(under.x_min > 1e-3);
        let over = rnlfm_density(0.25, 8.0, RELU_DELTA, 1.0, 1e-6).unwrap();
        assert!(over.x_min > 1e-4, "over-parameterized gap {}", over.x_min);
    }

    #[test]
    fn root_tracking_is_continuous() {
        let d = rnlfm_density(0.25, 2.0, RELU_DELTA, 1.0, 1e-6).unwrap();
        let (lo, hi) = (d.x_min * 1.01, d.x_max * 0.99);
        let n = 400;
        let xs: Vec<f64> = (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .collect();
        let rho = d.rho_grid(&xs).unwrap();
        // No branch jumps: successive steps bounded by ten times the local
        // derivative estimate from the previous step (with a small floor).
        for i in 2..=n {
            let prev = (rho[i - 1] - rho[i - 2]).abs();
            let cur = (rho[i] - rho[i - 1]).abs();
            assert!(
                cur <= 10.0 * prev + 1e-3,
                "jump at x = {}: {cur} after {prev}",
                xs[i]
            );
        }
    }

    #[test]
    fn epsilon_out_of_range_is_rejected() {
        assert!(rnlfm_density(0.25, 2.0, RELU_DELTA, 1.0, 1e-2).is_err());
        assert!(rnlfm_density(0.25, 2.0, RELU_DELTA, 1.0, 1e-10).is_err());
    }
}
