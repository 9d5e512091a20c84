//! Physical and standardized polynomial potentials, the high-energy
//! rescaling, and turning points.
//!
//! The standardized equation is `ψ'' = λ² W(z, λ) ψ` with
//! `W(z, λ) = (-iαz)^n - 1 + Σ_k b'_{n-k} λ^{-2k/(n+2)} (-iαz)^{n-k}` and
//! `b'_{n-k} = b_{n-k} (-iα)^{2k/(n+2)}`. All fractional powers use the
//! principal branch (argument in `(-π, π]`).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyroots::{aberth, horner};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Default collision tolerance for the simple-root check.
pub const COLLISION_TOL: f64 = 1e-6;
/// `|λ|` below which results are flagged as outside the asymptotic regime.
pub const REGIME_THRESHOLD: f64 = 10.0;

/// `z^p` on the principal branch.
pub fn cpow(z: Complex64, p: f64) -> Complex64 {
    if z.norm() == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::from_polar(z.norm().powf(p), z.arg() * p)
}

/// Schrödinger problem `φ'' = (2m/ħ²)(P(x) - E) φ` with
/// `P(x) = a_n x^n + ... + a_1 x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalProblem {
    /// `a_1, ..., a_n`.
    pub coefficients: Vec<Complex64>,
    pub energy: Complex64,
    pub mass: f64,
    pub hbar: f64,
}

impl PhysicalProblem {
    pub fn degree(&self) -> usize {
        self.coefficients.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.degree();
        if n < 2 {
            return Err(Error::InvalidDegree(n));
        }
        if self.coefficients[n - 1].norm() == 0.0 {
            return Err(Error::InvalidLeadingCoefficient);
        }
        if !(self.mass > 0.0) {
            return Err(Error::InvalidParameter(format!("mass {} must be positive", self.mass)));
        }
        if !(self.hbar > 0.0) {
            return Err(Error::InvalidParameter(format!("hbar {} must be positive", self.hbar)));
        }
        if self.energy.norm() == 0.0 {
            return Err(Error::DegenerateEnergy);
        }
        Ok(())
    }

    /// `P(x)`.
    pub fn eval(&self, x: Complex64) -> Complex64 {
        let mut c = vec![Complex64::new(0.0, 0.0)];
        c.extend_from_slice(&self.coefficients);
        horner(&c, x).0
    }
}

/// The two standard orientations of the leading term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlphaChoice {
    /// `α = 1`, available for every degree.
    One,
    /// `α = e^{-iπ/n}`, available for even degree only.
    Rotated,
}

impl AlphaChoice {
    pub fn value(self, n: usize) -> Complex64 {
        match self {
            AlphaChoice::One => Complex64::new(1.0, 0.0),
            AlphaChoice::Rotated => Complex64::from_polar(1.0, -PI / n as f64),
        }
    }

    pub fn check(self, n: usize) -> Result<()> {
        if self == AlphaChoice::Rotated && n % 2 == 1 {
            return Err(Error::InvalidAlpha("exp(-i pi/n)".into(), n));
        }
        Ok(())
    }
}

/// Spectral parameter `λ = |λ| e^{iβ}` with the integer/fractional split of
/// its modulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralParameter {
    pub value: Complex64,
}

impl SpectralParameter {
    pub fn new(value: Complex64) -> Self {
        Self { value }
    }

    pub fn from_polar(modulus: f64, phase: f64) -> Self {
        Self { value: Complex64::from_polar(modulus, phase) }
    }

    pub fn modulus(&self) -> f64 {
        self.value.norm()
    }

    pub fn phase(&self) -> f64 {
        self.value.arg()
    }

    /// `[|λ|]`.
    pub fn integer_part(&self) -> f64 {
        self.modulus().floor()
    }

    /// `Λ = |λ| - [|λ|] ∈ [0, 1)`.
    pub fn fractional_part(&self) -> f64 {
        self.modulus() - self.integer_part()
    }
}

/// Branch bookkeeping recorded with every rescaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchMetadata {
    pub convention: String,
    /// `(E/a_n)^{1/n}` as used in the substitution.
    pub scale_root: Complex64,
    /// `λ²` before the square root was taken.
    pub lambda_squared: Complex64,
}

/// Standardized potential `W_n(z, λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledPotential {
    degree: usize,
    alpha: AlphaChoice,
    /// `b_1, ..., b_{n-1}` (index `j - 1` holds `b_j`).
    reduced: Vec<Complex64>,
    lambda: SpectralParameter,
    /// Coefficients of `W` in `z`, lowest degree first.
    coeffs: Vec<Complex64>,
    branch: Option<BranchMetadata>,
}

impl RescaledPotential {
    /// Build from reduced coefficients `b_1..b_{n-1}` (missing entries are zero).
    pub fn new(degree: usize, alpha: AlphaChoice, reduced: &[Complex64], lambda: Complex64) -> Result<Self> {
        if degree < 2 {
            return Err(Error::InvalidDegree(degree));
        }
        alpha.check(degree)?;
        if lambda.norm() == 0.0 {
            return Err(Error::DegenerateEnergy);
        }
        if reduced.len() > degree - 1 {
            return Err(Error::InvalidArgument(format!("{} reduced coefficients given for degree {}", reduced.len(), degree)));
        }
        let mut b = vec![Complex64::new(0.0, 0.0); degree - 1];
        b[..reduced.len()].copy_from_slice(reduced);
        let mut pot =
            Self { degree, alpha, reduced: b, lambda: SpectralParameter::new(lambda), coeffs: Vec::new(), branch: None };
        pot.coeffs = pot.build_coeffs(true);
        Ok(pot)
    }

    /// The limit potential `(-iαz)^n - 1`.
    pub fn limit(degree: usize, alpha: AlphaChoice, lambda: Complex64) -> Result<Self> {
        Self::new(degree, alpha, &[], lambda)
    }

    pub fn with_lambda(&self, lambda: Complex64) -> Result<Self> {
        let mut p = Self::new(self.degree, self.alpha, &self.reduced, lambda)?;
        p.branch = self.branch.clone();
        Ok(p)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn alpha_choice(&self) -> AlphaChoice {
        self.alpha
    }

    pub fn alpha(&self) -> Complex64 {
        self.alpha.value(self.degree)
    }

    pub fn reduced(&self) -> &[Complex64] {
        &self.reduced
    }

    pub fn lambda(&self) -> SpectralParameter {
        self.lambda
    }

    pub fn branch(&self) -> Option<&BranchMetadata> {
        self.branch.as_ref()
    }

    pub fn is_limit(&self) -> bool {
        self.reduced.iter().all(|b| b.norm() == 0.0)
    }

    /// `|λ|` at or above the high-energy threshold.
    pub fn in_asymptotic_regime(&self) -> bool {
        self.lambda.modulus() >= REGIME_THRESHOLD
    }

    /// `|β| < π/n`, the range covering all topologically distinct graphs.
    pub fn is_standard(&self) -> bool {
        self.lambda.phase().abs() < PI / self.degree as f64
    }

    /// `b'_{n-k} = b_{n-k} (-iα)^{2k/(n+2)}` for `k = 1..n-1`.
    pub fn primed(&self, k: usize) -> Complex64 {
        let n = self.degree;
        let b = self.reduced[n - k - 1];
        b * cpow(-I * self.alpha(), 2.0 * k as f64 / (n as f64 + 2.0))
    }

    fn build_coeffs(&self, with_corrections: bool) -> Vec<Complex64> {
        let n = self.degree;
        let m = -I * self.alpha();
        let mut c = vec![Complex64::new(0.0, 0.0); n + 1];
        c[n] = m.powu(n as u32);
        c[0] = Complex64::new(-1.0, 0.0);
        if with_corrections {
            for k in 1..n {
                let scale = cpow(self.lambda.value, -2.0 * k as f64 / (n as f64 + 2.0));
                c[n - k] += self.primed(k) * scale * m.powu((n - k) as u32);
            }
        }
        c
    }

    /// Coefficients of `W(z, λ)` in `z`, lowest degree first.
    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficients of the limit potential.
    pub fn limit_coefficients(&self) -> Vec<Complex64> {
        self.build_coeffs(false)
    }

    /// `W(z)`.
    pub fn w(&self, z: Complex64) -> Complex64 {
        horner(&self.coeffs, z).0
    }

    /// `(W, W', W'')` at `z`.
    pub fn w_derivs(&self, z: Complex64) -> (Complex64, Complex64, Complex64) {
        let mut p = Complex64::new(0.0, 0.0);
        let mut d1 = Complex64::new(0.0, 0.0);
        let mut d2 = Complex64::new(0.0, 0.0);
        for &c in self.coeffs.iter().rev() {
            d2 = d2 * z + d1 * 2.0;
            d1 = d1 * z + p;
            p = p * z + c;
        }
        (p, d1, d2)
    }

    /// All derivatives `W^{(j)}(z)` for `j = 0..=n`.
    pub fn w_all_derivs(&self, z: Complex64) -> Vec<Complex64> {
        let mut c = self.coeffs.clone();
        let mut out = Vec::with_capacity(c.len());
        while !c.is_empty() {
            out.push(horner(&c, z).0);
            c = c.iter().enumerate().skip(1).map(|(j, a)| a * j as f64).collect();
        }
        out
    }
}

/// Map a physical problem onto the standardized form.
pub fn rescale(problem: &PhysicalProblem, alpha: AlphaChoice) -> Result<RescaledPotential> {
    problem.validate()?;
    let n = problem.degree();
    alpha.check(n)?;
    let an = problem.coefficients[n - 1];
    let e = problem.energy;
    let kappa = 2.0 * problem.mass / (problem.hbar * problem.hbar);
    let a = alpha.value(n);
    let lambda_sq = -a * a * kappa * cpow(an, -2.0 / n as f64) * cpow(e, (n as f64 + 2.0) / n as f64);
    let lambda = lambda_sq.sqrt();
    let scale_root = cpow(e / an, 1.0 / n as f64);
    let m = -I * a;
    let mut reduced = vec![Complex64::new(0.0, 0.0); n - 1];
    for k in 1..n {
        // Exact coefficient of (-iαz)^{n-k} in W after substitution.
        let direct = problem.coefficients[n - k - 1] / an * cpow(e / an, -(k as f64) / n as f64);
        let p = 2.0 * k as f64 / (n as f64 + 2.0);
        reduced[n - k - 1] = direct * cpow(lambda, p) / cpow(m, p);
    }
    let mut pot = RescaledPotential::new(n, alpha, &reduced, lambda)?;
    pot.branch = Some(BranchMetadata {
        convention: "principal branch, arg in (-pi, pi]; lambda = principal sqrt of lambda^2".into(),
        scale_root,
        lambda_squared: lambda_sq,
    });
    Ok(pot)
}

/// A root of `W`, labeled by the nearest root of the limit potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurningPoint {
    pub label: i32,
    /// Root of `(-iαz)^n - 1`.
    pub limit: Complex64,
    /// Root of `W(z, λ)`.
    pub location: Complex64,
    pub partner: Option<i32>,
}

/// Labeled roots of the limit potential.
pub fn limit_roots(n: usize, alpha: AlphaChoice) -> Vec<(i32, Complex64)> {
    let nf = n as f64;
    let mut out = Vec::with_capacity(n);
    match alpha {
        AlphaChoice::One => {
            out.push((0, I));
            for k in 1..=((n as i32 - 1) / 2) {
                let ang = 2.0 * k as f64 * PI / nf;
                out.push((k, I * Complex64::from_polar(1.0, ang)));
                out.push((-k, I * Complex64::from_polar(1.0, -ang)));
            }
            if n.is_multiple_of(2) {
                out.push((n as i32 / 2, -I));
            }
        }
        AlphaChoice::Rotated => {
            for k in 1..=(n as i32 / 2) {
                let ang = (2.0 * k as f64 - 1.0) * PI / nf;
                out.push((k, I * Complex64::from_polar(1.0, ang)));
                out.push((-k, I * Complex64::from_polar(1.0, -ang)));
            }
        }
    }
    out
}

/// Pairing of limit roots symmetric about the imaginary axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing {
    /// `(k, -k)` with `k > 0`.
    pub pairs: Vec<(i32, i32)>,
    pub unpaired: Vec<i32>,
}

pub fn limit_pairs(n: usize, alpha: AlphaChoice) -> Pairing {
    let labels: Vec<i32> = limit_roots(n, alpha).into_iter().map(|(k, _)| k).collect();
    let mut pairs = Vec::new();
    let mut unpaired = Vec::new();
    for &k in &labels {
        if k > 0 && labels.contains(&-k) {
            pairs.push((k, -k));
        } else if !labels.contains(&-k) || k == 0 {
            unpaired.push(k);
        }
    }
    Pairing { pairs, unpaired }
}

/// First-order drift `-i b'_{n-1} λ^{-2/(n+2)} / (nα)` common to all roots.
pub fn first_order_drift(pot: &RescaledPotential) -> Complex64 {
    let n = pot.degree();
    -I * pot.primed(1) * cpow(pot.lambda().value, -2.0 / (n as f64 + 2.0)) / (n as f64 * pot.alpha())
}

/// All roots of `W(z, λ)` labeled by their limit positions.
pub fn turning_points(pot: &RescaledPotential) -> Result<Vec<TurningPoint>> {
    turning_points_with_tol(pot, COLLISION_TOL)
}

pub fn turning_points_with_tol(pot: &RescaledPotential, collision_tol: f64) -> Result<Vec<TurningPoint>> {
    let n = pot.degree();
    let limits = limit_roots(n, pot.alpha_choice());
    let drift = first_order_drift(pot);
    let guesses: Vec<Complex64> = limits.iter().map(|(_, z)| z + drift).collect();
    let roots = aberth(pot.coefficients(), &guesses, 500)?;
    // Assign each root to the nearest limit root; fall back to seed order
    // when the nearest-neighbour assignment is not a bijection.
    let mut assigned: Vec<usize> = roots
        .iter()
        .map(|r| (0..n).min_by(|&a, &b| (r - limits[a].1).norm().total_cmp(&(r - limits[b].1).norm())).unwrap())
        .collect();
    let mut seen = vec![false; n];
    if assigned.iter().any(|&j| std::mem::replace(&mut seen[j], true)) {
        assigned = (0..n).collect();
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (roots[i] - roots[j]).norm() < collision_tol {
                return Err(Error::DegenerateTurningPoints(roots[i], roots[j]));
            }
        }
    }
    let labels: Vec<i32> = limits.iter().map(|(k, _)| *k).collect();
    let mut out: Vec<TurningPoint> = roots
        .iter()
        .zip(&assigned)
        .map(|(&r, &j)| {
            let (label, limit) = limits[j];
            let partner = if label != 0 && labels.contains(&-label) { Some(-label) } else { None };
            TurningPoint { label, limit, location: r, partner }
        })
        .collect();
    out.sort_by_key(|t| (t.label.abs(), -t.label));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn harmonic_rescaling() {
        let prob = PhysicalProblem { coefficients: vec![c(0.0, 0.0), c(1.0, 0.0)], energy: c(1.0, 0.0), mass: 1.0, hbar: 1.0 };
        let pot = rescale(&prob, AlphaChoice::Rotated).unwrap();
        let lsq = pot.branch().unwrap().lambda_squared;
        assert!((lsq - c(2.0, 0.0)).norm() < 1e-14);
        let coeffs = pot.coefficients();
        assert!((coeffs[0] + 1.0).norm() < 1e-15);
        assert!(coeffs[1].norm() < 1e-15);
        assert!((coeffs[2] - 1.0).norm() < 1e-15);
    }

    #[test]
    fn cubic_rescaling() {
        let prob = PhysicalProblem {
            coefficients: vec![c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
            energy: c(1.0, 0.0),
            mass: 1.0,
            hbar: 1.0,
        };
        let pot = rescale(&prob, AlphaChoice::One).unwrap();
        assert!((pot.branch().unwrap().lambda_squared - c(-2.0, 0.0)).norm() < 1e-14);
        assert!(pot.is_limit());
        // (-iz)^3 - 1 = i z^3 - 1
        assert!((pot.coefficients()[3] - c(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn rescale_errors() {
        let mut prob =
            PhysicalProblem { coefficients: vec![c(1.0, 0.0), c(0.0, 0.0)], energy: c(1.0, 0.0), mass: 1.0, hbar: 1.0 };
        assert_eq!(rescale(&prob, AlphaChoice::One), Err(Error::InvalidLeadingCoefficient));
        prob.coefficients = vec![c(1.0, 0.0)];
        assert_eq!(rescale(&prob, AlphaChoice::One), Err(Error::InvalidDegree(1)));
        prob.coefficients = vec![c(0.0, 0.0), c(1.0, 0.0)];
        prob.energy = c(0.0, 0.0);
        assert_eq!(rescale(&prob, AlphaChoice::One), Err(Error::DegenerateEnergy));
        prob.energy = c(1.0, 0.0);
        prob.coefficients = vec![c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)];
        assert!(matches!(rescale(&prob, AlphaChoice::Rotated), Err(Error::InvalidAlpha(_, 3))));
    }

    #[test]
    fn reduced_coefficient_magnitude() {
        // |b_{n-k}| = |a_{n-k}| |a_n|^{-(n-k+2)/(n+2)} (2m/ħ²)^{k/(n+2)}
        let prob = PhysicalProblem {
            coefficients: vec![c(0.3, -0.2), c(1.1, 0.4), c(2.0, 0.5)],
            energy: c(40.0, 7.0),
            mass: 0.7,
            hbar: 1.3,
        };
        let pot = rescale(&prob, AlphaChoice::One).unwrap();
        let n: f64 = 3.0;
        let kappa: f64 = 2.0 * 0.7 / (1.3 * 1.3);
        for k in 1..3usize {
            let expect = prob.coefficients[3 - k - 1].norm()
                * prob.coefficients[2].norm().powf(-(n - k as f64 + 2.0) / (n + 2.0))
                * kappa.powf(k as f64 / (n + 2.0));
            let got = pot.reduced()[3 - k - 1].norm();
            assert!((got - expect).abs() < 1e-12 * expect, "k={k}: {got} vs {expect}");
        }
    }

    #[test]
    fn limit_roots_cubic() {
        let pot = RescaledPotential::limit(3, AlphaChoice::One, c(50.0, 0.0)).unwrap();
        let tps = turning_points(&pot).unwrap();
        let s3 = 3f64.sqrt() / 2.0;
        let expect = [(0, c(0.0, 1.0)), (1, c(-s3, -0.5)), (-1, c(s3, -0.5))];
        for (label, z) in expect {
            let t = tps.iter().find(|t| t.label == label).unwrap();
            assert!((t.location - z).norm() < 1e-14);
        }
    }

    #[test]
    fn harmonic_turning_points() {
        let pot = RescaledPotential::limit(2, AlphaChoice::Rotated, c(10.0, 0.0)).unwrap();
        let tps = turning_points(&pot).unwrap();
        assert_eq!(tps.len(), 2);
        let z1 = tps.iter().find(|t| t.label == 1).unwrap().location;
        let zm1 = tps.iter().find(|t| t.label == -1).unwrap().location;
        assert!((z1 - c(-1.0, 0.0)).norm() < 1e-14);
        assert!((zm1 - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn pairing_tables() {
        assert_eq!(limit_pairs(3, AlphaChoice::One), Pairing { pairs: vec![(1, -1)], unpaired: vec![0] });
        assert_eq!(limit_pairs(4, AlphaChoice::One), Pairing { pairs: vec![(1, -1)], unpaired: vec![0, 2] });
        assert_eq!(limit_pairs(2, AlphaChoice::Rotated), Pairing { pairs: vec![(1, -1)], unpaired: vec![] });
    }

    #[test]
    fn drift_matches_direct_solve() {
        let pot = RescaledPotential::new(3, AlphaChoice::One, &[c(0.0, 0.0), c(0.3, 0.0)], c(50.0, 0.0)).unwrap();
        let tps = turning_points(&pot).unwrap();
        let drift = first_order_drift(&pot);
        let z0 = tps.iter().find(|t| t.label == 0).unwrap();
        let err = (z0.location - (z0.limit + drift)).norm();
        // Second-order remainder is O(|λ|^{-4/5}) times |b'|², well below the drift itself.
        assert!(err < 0.2 * drift.norm(), "err {err}, drift {}", drift.norm());
        assert!(pot.w(z0.location).norm() < 1e-12);
    }
}
