//! Simultaneous polynomial root finding (Aberth–Ehrlich).

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Evaluate `p(z)` and `p'(z)` by Horner's scheme. Coefficients are
/// stored lowest degree first.
pub fn horner(coeffs: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// Refine `guesses` to the roots of the polynomial with coefficients
/// `coeffs` (lowest degree first). The number of guesses must equal the
/// degree.
pub fn aberth(coeffs: &[Complex64], guesses: &[Complex64], max_iter: usize) -> Result<Vec<Complex64>> {
    let degree = coeffs.len() - 1;
    assert_eq!(guesses.len(), degree, "one guess per root");
    let mut z = guesses.to_vec();
    let scale: f64 = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    for _ in 0..max_iter {
        let mut max_step: f64 = 0.0;
        for i in 0..degree {
            let (p, dp) = horner(coeffs, z[i]);
            if p.norm() <= 1e-15 * scale {
                continue;
            }
            let ratio = p / dp;
            let mut repulsion = Complex64::new(0.0, 0.0);
            for j in 0..degree {
                if j != i {
                    repulsion += 1.0 / (z[i] - z[j]);
                }
            }
            let step = ratio / (1.0 - ratio * repulsion);
            z[i] -= step;
            max_step = max_step.max(step.norm() / (1.0 + z[i].norm()));
        }
        if max_step < 1e-15 {
            return Ok(polish(coeffs, z));
        }
    }
    let z = polish(coeffs, z);
    let ok = z.iter().all(|&r| horner(coeffs, r).0.norm() <= 1e-12 * scale * (1.0 + r.norm()).powi(degree as i32));
    if ok {
        Ok(z)
    } else {
        Err(Error::RootFinderStalled(max_iter))
    }
}

fn polish(coeffs: &[Complex64], mut z: Vec<Complex64>) -> Vec<Complex64> {
    for r in z.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = horner(coeffs, *r);
            if dp.norm() == 0.0 {
                break;
            }
            let step = p / dp;
            if step.norm() < 1e-17 {
                break;
            }
            *r -= step;
        }
    }
    z
}
