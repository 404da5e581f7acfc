//! Polynomial roots by companion-matrix eigenvalues with Newton polish.
//! One engine serves both the self-consistency quartics (real coefficients)
//! and the spectral-density evaluation (complex coefficients).

use faer::c64;
use faer::Mat;
use num_complex::Complex64;

/// Evaluates `p(z)` and `p'(z)` by Horner's rule. `coeffs[k]` multiplies `z^k`.
pub fn eval_with_derivative(coeffs: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// All roots of `sum_k coeffs[k] z^k`. Exact-zero leading coefficients are
/// trimmed, so a quartic with a vanishing quartic term is solved as a cubic.
/// Roots are polished with a few Newton steps.
pub fn roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut deg = coeffs.len();
    while deg > 0 && coeffs[deg - 1] == Complex64::new(0.0, 0.0) {
        deg -= 1;
    }
    if deg <= 1 {
        return Vec::new();
    }
    let coeffs = &coeffs[..deg];
    let n = deg - 1;
    let lead = coeffs[n];
    if n == 1 {
        return vec![-coeffs[0] / lead];
    }

    let companion = Mat::<c64>::from_fn(n, n, |i, j| {
        if j == n - 1 {
            let c = -coeffs[i] / lead;
            c64::new(c.re, c.im)
        } else if i == j + 1 {
            c64::new(1.0, 0.0)
        } else {
            c64::new(0.0, 0.0)
        }
    });
    let eigs: Vec<c64> = match companion.eigenvalues() {
        Ok(e) => e,
        Err(_) => return Vec::new(),
    };

    eigs.into_iter()
        .map(|e| {
            let mut z = Complex64::new(e.re, e.im);
            for _ in 0..3 {
                let (p, dp) = eval_with_derivative(coeffs, z);
                if dp.norm() == 0.0 {
                    break;
                }
                let step = p / dp;
                if !step.re.is_finite() || !step.im.is_finite() {
                    break;
                }
                z -= step;
            }
            z
        })
        .collect()
}

/// Roots of a real-coefficient polynomial.
pub fn roots_real(coeffs: &[f64]) -> Vec<Complex64> {
    let c: Vec<Complex64> = coeffs.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    roots(&c)
}
