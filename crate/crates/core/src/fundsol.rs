//! Fundamental solutions of `ψ'' = λ² W ψ`: semiclassical correction series,
//! WKB far-field seeds, Taylor-series propagation along complex paths and
//! Wronskians.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::branchcut::CutPlane;
use crate::error::{Error, Result};
use crate::potential::RescaledPotential;
use crate::quad;
use crate::stokesgraph::{exponent_from, StokesGraph};

/// Distance to a turning point below which the series is not evaluated.
pub const SINGULAR_RADIUS: f64 = 1e-6;
/// Default truncation order of the correction series.
pub const DEFAULT_ORDER: usize = 2;

/// Truncated Taylor expansion in `t` about a base point.
#[derive(Debug, Clone, PartialEq)]
struct Jet(Vec<Complex64>);

impl Jet {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn zero(len: usize) -> Self {
        Jet(vec![Complex64::new(0.0, 0.0); len])
    }

    fn add(&self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }

    fn scale(&self, s: Complex64) -> Jet {
        Jet(self.0.iter().map(|a| a * s).collect())
    }

    fn mul(&self, o: &Jet) -> Jet {
        let n = self.len().min(o.len());
        let mut out = Jet::zero(n);
        for i in 0..n {
            for j in 0..n - i {
                out.0[i + j] += self.0[i] * o.0[j];
            }
        }
        out
    }

    fn recip(&self) -> Jet {
        let n = self.len();
        let mut out = Jet::zero(n);
        out.0[0] = 1.0 / self.0[0];
        for k in 1..n {
            let mut s = Complex64::new(0.0, 0.0);
            for j in 1..=k {
                s += self.0[j] * out.0[k - j];
            }
            out.0[k] = -s * out.0[0];
        }
        out
    }

    /// Square root with prescribed value at the base point.
    fn sqrt_with(&self, s0: Complex64) -> Jet {
        let n = self.len();
        let mut out = Jet::zero(n);
        out.0[0] = s0;
        for k in 1..n {
            let mut s = self.0[k];
            for j in 1..k {
                s -= out.0[j] * out.0[k - j];
            }
            out.0[k] = s / (2.0 * s0);
        }
        out
    }

    /// Derivative; the last coefficient is lost.
    fn deriv(&self) -> Jet {
        let n = self.len();
        let mut out = Jet::zero(n);
        for k in 0..n - 1 {
            out.0[k] = self.0[k + 1] * (k as f64 + 1.0);
        }
        out
    }
}

/// Taylor coefficients of a polynomial (lowest degree first) about `z0`.
fn shifted_coefficients(coeffs: &[Complex64], z0: Complex64, len: usize) -> Vec<Complex64> {
    let mut c = coeffs.to_vec();
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for o in out.iter_mut() {
        if c.is_empty() {
            break;
        }
        // Synthetic division by (z - z0): the remainder is the next coefficient.
        for i in (0..c.len() - 1).rev() {
            let hi = c[i + 1];
            c[i] += hi * z0;
        }
        *o = c.remove(0);
    }
    out
}

/// The semiclassical correction series `Z_k = Σ_p (−σ_k/2λ)^p X_p`.
#[derive(Debug, Clone)]
pub struct SemiclassicalSeries {
    order: usize,
    pot: RescaledPotential,
    cuts: CutPlane,
}

/// `X_1..X_P` at one point on a given `√W` branch.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesValues {
    pub z: Complex64,
    pub sqrt_w: Complex64,
    pub terms: Vec<Complex64>,
}

impl SeriesValues {
    /// `Z = Σ (−σ/2λ)^p X_p`.
    pub fn z_total(&self, sigma: f64, lambda: Complex64) -> Complex64 {
        self.z_part(sigma, lambda, |_| true)
    }

    /// Even-index part `Z⁺`.
    pub fn z_plus(&self, sigma: f64, lambda: Complex64) -> Complex64 {
        self.z_part(sigma, lambda, |p| p % 2 == 0)
    }

    /// Odd-index part `Z⁻`.
    pub fn z_minus(&self, sigma: f64, lambda: Complex64) -> Complex64 {
        self.z_part(sigma, lambda, |p| p % 2 == 1)
    }

    fn z_part(&self, sigma: f64, lambda: Complex64, keep: impl Fn(usize) -> bool) -> Complex64 {
        let eps = -sigma / (2.0 * lambda);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut pw = eps;
        for (i, x) in self.terms.iter().enumerate() {
            if keep(i + 1) {
                acc += pw * x;
            }
            pw *= eps;
        }
        acc
    }
}

impl SemiclassicalSeries {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn potential(&self) -> &RescaledPotential {
        &self.pot
    }

    fn check(&self, z: Complex64) -> Result<()> {
        if self.cuts.turning_points.iter().any(|t| (z - t.location).norm() < SINGULAR_RADIUS) {
            return Err(Error::NearSingularEvaluation(z));
        }
        Ok(())
    }

    /// Jets of `X_1..X_P` about `z` on the branch `√W(z) = sqrt_w`, each of
    /// length `extra + 1`.
    fn jets(&self, z: Complex64, sqrt_w: Complex64, p: usize, extra: usize) -> Vec<Jet> {
        let len = p + 2 + extra;
        let w = Jet(shifted_coefficients(self.pot.coefficients(), z, len));
        let s = w.sqrt_with(sqrt_w);
        let inv_s = s.recip();
        let inv_w = w.recip();
        let w1 = w.deriv();
        let w2 = w1.deriv();
        // X_1 = (5/16) W'^2 W^{-5/2} − (1/4) W'' W^{-3/2}
        let inv_w_s = inv_w.mul(&inv_s);
        let x1 = w1
            .mul(&w1)
            .mul(&inv_w)
            .mul(&inv_w_s)
            .scale(Complex64::new(5.0 / 16.0, 0.0))
            .add(&w2.mul(&inv_w_s).scale(Complex64::new(-0.25, 0.0)));
        let mut xs = vec![x1];
        // −½ W^{-3/2} W'
        let drift = w1.mul(&inv_w_s).scale(Complex64::new(-0.5, 0.0));
        for q in 2..=p {
            let prev = &xs[q - 2];
            let mut acc = prev.deriv();
            for j in 1..=q.saturating_sub(2) {
                acc = acc.add(&xs[j - 1].mul(&xs[q - 2 - j]));
            }
            let next = drift.mul(prev).add(&inv_s.mul(&acc));
            xs.push(next);
        }
        xs
    }

    /// `X_1..X_P` at `z` on the branch `√W(z) = sqrt_w`.
    pub fn eval(&self, z: Complex64, sqrt_w: Complex64) -> Result<SeriesValues> {
        self.check(z)?;
        let xs = self.jets(z, sqrt_w, self.order.max(1), 0);
        let terms = xs.iter().take(self.order).map(|j| j.0[0]).collect();
        Ok(SeriesValues { z, sqrt_w, terms })
    }

    /// `X_p` and its first `d` derivatives at `z`.
    pub fn eval_derivatives(&self, z: Complex64, sqrt_w: Complex64, p: usize, d: usize) -> Result<Vec<Complex64>> {
        self.check(z)?;
        let xs = self.jets(z, sqrt_w, p, d);
        let jet = &xs[p - 1];
        let mut f = 1.0;
        Ok((0..=d)
            .map(|k| {
                if k > 0 {
                    f *= k as f64;
                }
                jet.0[k] * f
            })
            .collect())
    }

    /// `X_p` on the cut-plane branch.
    pub fn term(&self, p: usize, z: Complex64) -> Result<Complex64> {
        self.check(z)?;
        let xs = self.jets(z, self.cuts.sqrt_w_plane(z), p, 0);
        Ok(xs[p - 1].0[0])
    }

    /// Logarithmic derivative `ψ'/ψ = σλ√W − W'/(4W) + Z` of the truncated
    /// WKB form.
    pub fn log_derivative(&self, z: Complex64, sqrt_w: Complex64, sigma: f64) -> Result<Complex64> {
        let lambda = self.pot.lambda().value;
        let (w, w1, _) = self.pot.w_derivs(z);
        let mut y = sigma * lambda * sqrt_w - w1 / (4.0 * w);
        if self.order > 0 {
            y += self.eval(z, sqrt_w)?.z_total(sigma, lambda);
        }
        Ok(y)
    }

    /// `ω = W^{1/4}(W^{-1/4})''` computed directly from `W, W', W''`.
    pub fn omega(&self, z: Complex64) -> Complex64 {
        let (w, w1, w2) = self.pot.w_derivs(z);
        -w2 / (4.0 * w) + 5.0 * w1 * w1 / (16.0 * w * w)
    }
}

/// Build the series evaluators through order `order`.
pub fn build_series(pot: &RescaledPotential, cuts: &CutPlane, order: usize) -> Result<SemiclassicalSeries> {
    if order < 1 {
        return Err(Error::InvalidParameter("series order must be at least 1".into()));
    }
    Ok(SemiclassicalSeries { order, pot: pot.clone(), cuts: cuts.clone() })
}

/// `∮ X_p dz` over the circle `|z − c| = r`, on the branch continued from
/// the cut-plane value at the start.
pub fn loop_integral(series: &SemiclassicalSeries, p: usize, center: Complex64, r: f64, samples: usize) -> Result<Complex64> {
    let mut acc = Complex64::new(0.0, 0.0);
    let z0 = center + r;
    let mut sw = series.cuts.sqrt_w_plane(z0);
    for j in 0..samples {
        let t = 2.0 * PI * j as f64 / samples as f64;
        let e = Complex64::from_polar(1.0, t);
        let z = center + e * r;
        let v = series.cuts.sqrt_w_plane(z);
        sw = if (v - sw).norm() <= (v + sw).norm() { v } else { -v };
        let x = series.eval_derivatives(z, sw, p, 0)?[0];
        acc += x * Complex64::new(0.0, r) * e;
    }
    Ok(acc * (2.0 * PI / samples as f64))
}

/// `(ψ, ψ')` stored as `e^{log_scale}·(psi, dpsi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledState {
    pub psi: Complex64,
    pub dpsi: Complex64,
    pub log_scale: f64,
}

impl ScaledState {
    pub fn new(psi: Complex64, dpsi: Complex64) -> Self {
        let mut s = Self { psi, dpsi, log_scale: 0.0 };
        s.normalize(1.0);
        s
    }

    pub(crate) fn normalize(&mut self, kappa: f64) {
        let m = self.psi.norm().max(self.dpsi.norm() / kappa);
        if m > 0.0 && m.is_finite() {
            self.psi /= m;
            self.dpsi /= m;
            self.log_scale += m.ln();
        }
    }

    /// `ψ` rescaled by `e^{-shift}`.
    pub fn psi_scaled(&self, shift: f64) -> Complex64 {
        self.psi * (self.log_scale - shift).exp()
    }

    /// `|ψ|/|ψ'|`.
    pub fn newton_ratio(&self) -> f64 {
        self.psi.norm() / self.dpsi.norm()
    }
}

/// A complex number `e^{log_scale}·mantissa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledComplex {
    pub mantissa: Complex64,
    pub log_scale: f64,
}

impl ScaledComplex {
    pub fn ln_abs(&self) -> f64 {
        self.mantissa.norm().ln() + self.log_scale
    }

    /// Ratio `self / other` as an ordinary complex number.
    pub fn ratio(&self, other: &ScaledComplex) -> Complex64 {
        self.mantissa / other.mantissa * (self.log_scale - other.log_scale).exp()
    }
}

/// Seed metadata of a fundamental solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub sector: i32,
    pub z: Complex64,
    pub radius: f64,
    pub order: usize,
    pub sigma: f64,
    /// `√W` branch at the seed.
    pub sqrt_w: Complex64,
    /// Fourth root of `W` at the seed with `q² = √W`.
    pub quarter_w: Complex64,
    pub state: ScaledState,
}

/// Seed radius `max(8, 2|λ|^{2/(n+2)})`.
pub fn seed_radius(n: usize, lambda_modulus: f64) -> f64 {
    (2.0 * lambda_modulus.powf(2.0 / (n as f64 + 2.0))).max(8.0)
}

/// Default seed point: the center direction of sector `k` at the seed radius.
pub fn default_seed_point(graph: &StokesGraph, k: i32) -> Result<Complex64> {
    let s = graph.sector(k).ok_or(Error::UnknownSector(k))?;
    let r = seed_radius(graph.potential.degree(), graph.potential.lambda().modulus());
    let mut z = Complex64::from_polar(r, s.center);
    if graph.cuts.on_cut(z, 1e-9).is_some() {
        z = Complex64::from_polar(r, s.center + 1e-3);
    }
    Ok(z)
}

/// `∫_{z}^{∞} Z dy` along the ray through `z` on the branch `sqrt_w` at `z`.
fn tail_correction(series: &SemiclassicalSeries, z: Complex64, sqrt_w: Complex64, sigma: f64) -> Result<Complex64> {
    let lambda = series.pot.lambda().value;
    let dir = z / z.norm();
    let r0 = z.norm();
    let cuts = &series.cuts;
    let mut failure = None;
    // y = r0/u, u ∈ (0, 1]; dy = −r0/u² du.
    let value = quad::integrate(
        |u: f64| {
            if u <= 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let y = dir * (r0 / u);
            let v = cuts.sqrt_w_plane(y);
            // The ray stays in one sector far out, so continuity from the seed
            // reduces to matching the asymptotic phase.
            let ratio = v / sqrt_w * (r0 / y.norm()).powf(series.pot.degree() as f64 / 2.0);
            let sw = if ratio.re >= 0.0 { v } else { -v };
            match series.eval(y, sw) {
                Ok(vals) => vals.z_total(sigma, lambda) * dir * (r0 / (u * u)),
                Err(e) => {
                    failure = Some(e);
                    Complex64::new(0.0, 0.0)
                }
            }
        },
        0.0,
        1.0,
        1e-14,
        1e-12,
        200,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(value.value)
}

/// WKB seed of the solution subdominant in sector `k` at `z_inf`.
pub fn wkb_seed(graph: &StokesGraph, series: &SemiclassicalSeries, k: i32, z_inf: Complex64) -> Result<Seed> {
    let sector = graph.sector(k).ok_or(Error::UnknownSector(k))?;
    if z_inf.norm() < graph.settings.r_max || graph.sector_at_angle(z_inf.arg()).label != k {
        return Err(Error::WrongSector(z_inf, k));
    }
    let pot = &graph.potential;
    let sqrt_w = graph.cuts.sqrt_w_plane(z_inf);
    let exponent = exponent_from(graph, sector.anchor, z_inf)?;
    let sigma = if exponent.re > 0.0 { -1.0 } else { 1.0 };
    let e = exponent * sigma;
    let mut quarter = graph.cuts.quarter_w_plane(z_inf);
    if (quarter * quarter - sqrt_w).norm() > (quarter * quarter + sqrt_w).norm() {
        quarter *= Complex64::new(0.0, 1.0);
    }
    let tail = if series.order() > 0 { -tail_correction(series, z_inf, sqrt_w, sigma)? } else { Complex64::new(0.0, 0.0) };
    let phase = Complex64::new(0.0, e.im + tail.im).exp();
    let psi = phase / quarter;
    let y = series.log_derivative(z_inf, sqrt_w, sigma)?;
    let mut state = ScaledState { psi, dpsi: psi * y, log_scale: e.re + tail.re };
    state.normalize(kappa(pot, z_inf));
    Ok(Seed { sector: k, z: z_inf, radius: z_inf.norm(), order: series.order(), sigma, sqrt_w, quarter_w: quarter, state })
}

/// Propagation controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationSettings {
    /// Taylor order per step.
    pub taylor_order: usize,
    /// Local relative truncation tolerance per step.
    pub tol: f64,
    pub max_steps: usize,
    /// Record every step (otherwise only path vertices).
    pub dense: bool,
    /// Optional cap on the step length in units of `1/κ(z)`.
    pub max_step_scaled: Option<f64>,
}

impl Default for PropagationSettings {
    fn default() -> Self {
        Self { taylor_order: 30, tol: 1e-15, max_steps: 2_000_000, dense: true, max_step_scaled: None }
    }
}

fn kappa(pot: &RescaledPotential, z: Complex64) -> f64 {
    pot.lambda().modulus() * (1.0 + pot.w(z).norm()).sqrt()
}

/// One recorded point of a propagated solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub z: Complex64,
    pub arclength: f64,
    pub state: ScaledState,
}

/// A solution propagated along a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionTrace {
    pub label: i32,
    pub seed: Option<Seed>,
    pub path: Vec<Complex64>,
    pub samples: Vec<TraceSample>,
}

impl SolutionTrace {
    pub fn end(&self) -> &TraceSample {
        self.samples.last().expect("trace has at least one sample")
    }

    /// Sample at `z` (within `1e-12` relative).
    pub fn sample_at(&self, z: Complex64) -> Option<&TraceSample> {
        self.samples.iter().find(|s| (s.z - z).norm() <= 1e-12 * (1.0 + z.norm()))
    }
}

/// Advance `state` from `z0` to `z1` along the straight segment; `on_step`
/// sees every intermediate point.
pub fn advance(
    pot: &RescaledPotential,
    z0: Complex64,
    state: ScaledState,
    z1: Complex64,
    settings: &PropagationSettings,
    mut on_step: impl FnMut(Complex64, &ScaledState),
) -> Result<ScaledState> {
    let lambda2 = pot.lambda().value * pot.lambda().value;
    let coeffs = pot.coefficients();
    let n = coeffs.len() - 1;
    let total = (z1 - z0).norm();
    if total == 0.0 {
        return Ok(state);
    }
    let dir = (z1 - z0) / total;
    let order = settings.taylor_order.max(8);
    let mut c = vec![Complex64::new(0.0, 0.0); order + 1];
    let mut z = z0;
    let mut s = state;
    let mut done = 0.0;
    let mut steps = 0;
    while done < total {
        steps += 1;
        if steps > settings.max_steps {
            return Err(Error::PropagationFailure(done));
        }
        let w = shifted_coefficients(coeffs, z, n + 1);
        c[0] = s.psi;
        c[1] = s.dpsi;
        for j in 0..order - 1 {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..=j.min(n) {
                acc += w[i] * c[j - i];
            }
            c[j + 2] = lambda2 * acc / ((j + 1) as f64 * (j + 2) as f64);
        }
        let k = kappa(pot, z);
        let scale = s.psi.norm().max(s.dpsi.norm() / k).max(1e-300);
        let mut h = f64::INFINITY;
        for j in [order - 1, order] {
            let cj = c[j].norm();
            if cj > 0.0 {
                h = h.min((settings.tol * scale / cj).powf(1.0 / j as f64));
            }
        }
        if let Some(cap) = settings.max_step_scaled {
            h = h.min(cap / k);
        }
        h = h.min(0.5).min(total - done);
        if !(h > 0.0) || !h.is_finite() {
            if total - done < 1e-15 {
                break;
            }
            return Err(Error::PropagationFailure(done));
        }
        let last = total - done <= h * (1.0 + 1e-12);
        let hz = if last { z1 - z } else { dir * h };
        let mut psi = Complex64::new(0.0, 0.0);
        let mut dpsi = Complex64::new(0.0, 0.0);
        let mut p = Complex64::new(1.0, 0.0);
        for j in 0..=order {
            psi += c[j] * p;
            if j < order {
                dpsi += c[j + 1] * p * (j as f64 + 1.0);
            }
            p *= hz;
        }
        if !psi.is_finite() || !dpsi.is_finite() {
            return Err(Error::PropagationFailure(done));
        }
        z = if last { z1 } else { z + hz };
        done = if last { total } else { done + h };
        s.psi = psi;
        s.dpsi = dpsi;
        s.normalize(kappa(pot, z));
        on_step(z, &s);
    }
    Ok(s)
}

/// Propagate from `(z0, state)` through the vertices of `path`.
pub fn propagate_from(
    pot: &RescaledPotential,
    label: i32,
    z0: Complex64,
    state: ScaledState,
    path: &[Complex64],
    settings: &PropagationSettings,
) -> Result<SolutionTrace> {
    let mut samples = vec![TraceSample { z: z0, arclength: 0.0, state }];
    let mut z = z0;
    let mut s = state;
    let mut arc = 0.0;
    for &next in path {
        let start = z;
        let seg_start = arc;
        s = advance(pot, z, s, next, settings, |zz, st| {
            if settings.dense {
                samples.push(TraceSample { z: zz, arclength: seg_start + (zz - start).norm(), state: *st });
            }
        })?;
        arc += (next - z).norm();
        z = next;
        if !settings.dense {
            samples.push(TraceSample { z, arclength: arc, state: s });
        } else if let Some(lst) = samples.last_mut() {
            lst.z = next;
        }
    }
    let mut full_path = vec![z0];
    full_path.extend_from_slice(path);
    Ok(SolutionTrace { label, seed: None, path: full_path, samples })
}

/// Propagate a seeded solution along `path` (which continues from the seed point).
pub fn propagate(seed: &Seed, pot: &RescaledPotential, path: &[Complex64]) -> Result<SolutionTrace> {
    propagate_with(seed, pot, path, &PropagationSettings::default())
}

pub fn propagate_with(
    seed: &Seed,
    pot: &RescaledPotential,
    path: &[Complex64],
    settings: &PropagationSettings,
) -> Result<SolutionTrace> {
    let mut t = propagate_from(pot, seed.sector, seed.z, seed.state, path, settings)?;
    t.seed = Some(*seed);
    Ok(t)
}

/// `ψ_a ψ_b' − ψ_a' ψ_b` at a point both traces contain.
pub fn wronskian(a: &SolutionTrace, b: &SolutionTrace, z: Complex64) -> Result<ScaledComplex> {
    let sa = a.sample_at(z).ok_or(Error::NoOverlap)?;
    let sb = b.sample_at(z).ok_or(Error::NoOverlap)?;
    Ok(state_wronskian(&sa.state, &sb.state))
}

pub fn state_wronskian(a: &ScaledState, b: &ScaledState) -> ScaledComplex {
    ScaledComplex { mantissa: a.psi * b.dpsi - a.dpsi * b.psi, log_scale: a.log_scale + b.log_scale }
}

/// Wronskian divided by `‖a‖‖b‖` with `‖s‖² = κ|ψ|² + |ψ'|²/κ`; of order one
/// for independent solutions, zero for dependent ones.
pub fn normalized_wronskian(a: &ScaledState, b: &ScaledState, kappa: f64) -> Complex64 {
    let norm = |s: &ScaledState| (kappa * s.psi.norm_sqr() + s.dpsi.norm_sqr() / kappa).sqrt();
    (a.psi * b.dpsi - a.dpsi * b.psi) / (norm(a) * norm(b))
}

/// Local scale `|λ|·(1 + |W(z)|)^{1/2}` used to weigh `ψ'` against `ψ`.
pub fn local_scale(pot: &RescaledPotential, z: Complex64) -> f64 {
    kappa(pot, z)
}

/// Square lattice over which `Re Φ_k = Re(σλ∫√W)` has been flooded from
/// one or more sources. Every reached node has a parent chain back to a
/// source along which `Re Φ_k` never drops more than [`MAX_DIP`] below its
/// running maximum, so `ψ_k` essentially grows along the chain and the
/// companion solution cannot amplify rounding errors.
#[derive(Debug, Clone)]
struct Flood {
    corner: Complex64,
    h: f64,
    side: usize,
    /// `NONE` when unreached, the node itself for sources.
    parent: Vec<u32>,
    phi_re: Vec<f64>,
    /// Running maximum of `Re Φ_k` along the parent chain.
    peak: Vec<f64>,
    sqrt_w: Vec<Complex64>,
}

/// A flood start: lattice index, `Re Φ_k`, running peak and `√W` there.
struct Source {
    index: usize,
    phi: f64,
    peak: f64,
    sqrt_w: Complex64,
}

const NONE: u32 = u32::MAX;

/// Largest drop of `Re Φ_k` below its running maximum allowed along a path.
const MAX_DIP: f64 = 8.0;

/// Largest dip accepted between a lattice node and an evaluation point.
const EVAL_DIP: f64 = 12.0;

/// Dip below which the coarse lattice is used without refinement.
const COARSE_DIP: f64 = 4.0;

/// Largest side of a refinement patch, in nodes.
const MAX_PATCH_SIDE: usize = 1600;

#[derive(PartialEq)]
struct Queued(f64, u32);

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Queued {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

/// Geometry shared by all floods of one solution.
struct Terrain<'a> {
    pot: &'a RescaledPotential,
    sigma_lambda: Complex64,
    turning_points: Vec<Complex64>,
    radius: f64,
}

impl Terrain<'_> {
    fn aligned_sqrt(&self, z: Complex64, v: Complex64) -> Complex64 {
        let w = self.pot.w(z).sqrt();
        if (w - v).norm() <= (w + v).norm() {
            w
        } else {
            -w
        }
    }
}

impl Flood {
    fn empty(corner: Complex64, h: f64, side: usize) -> Self {
        let count = side * side;
        Flood {
            corner,
            h,
            side,
            parent: vec![NONE; count],
            phi_re: vec![f64::NAN; count],
            peak: vec![f64::INFINITY; count],
            sqrt_w: vec![Complex64::new(0.0, 0.0); count],
        }
    }

    fn point(&self, i: usize) -> Complex64 {
        self.corner + Complex64::new((i % self.side) as f64 * self.h, (i / self.side) as f64 * self.h)
    }

    /// Bottleneck Dijkstra on the running peak of `Re Φ_k`.
    fn run(&mut self, terrain: &Terrain, sources: Vec<Source>) {
        let side = self.side;
        let h = self.h;
        let near_tp = |z: Complex64| terrain.turning_points.iter().any(|t| (z - t).norm() < 2.0 * h);
        let mut heap = std::collections::BinaryHeap::new();
        for s in sources {
            self.parent[s.index] = s.index as u32;
            self.phi_re[s.index] = s.phi;
            self.peak[s.index] = s.peak;
            self.sqrt_w[s.index] = s.sqrt_w;
            heap.push(Queued(s.peak, s.index as u32));
        }
        let mut done = vec![false; side * side];
        while let Some(Queued(_, i)) = heap.pop() {
            let i = i as usize;
            if done[i] {
                continue;
            }
            done[i] = true;
            let (x, y) = (i % side, i / side);
            let zi = self.point(i);
            for (dx, dy) in [(-1i64, -1i64), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= side as i64 || ny >= side as i64 {
                    continue;
                }
                let j = ny as usize * side + nx as usize;
                if done[j] {
                    continue;
                }
                let zj = self.point(j);
                if zj.norm() > terrain.radius || near_tp(zj) || near_tp(0.5 * (zi + zj)) {
                    continue;
                }
                let vm = terrain.aligned_sqrt(0.5 * (zi + zj), self.sqrt_w[i]);
                let vj = terrain.aligned_sqrt(zj, vm);
                let phi = self.phi_re[i] + (terrain.sigma_lambda * (self.sqrt_w[i] + 4.0 * vm + vj) / 6.0 * (zj - zi)).re;
                let peak = self.peak[i].max(phi);
                if peak - phi > MAX_DIP || peak >= self.peak[j] {
                    continue;
                }
                self.parent[j] = i as u32;
                self.sqrt_w[j] = vj;
                self.phi_re[j] = phi;
                self.peak[j] = peak;
                heap.push(Queued(peak, j as u32));
            }
        }
    }

    fn index_of(&self, z: Complex64) -> Option<usize> {
        let fx = ((z.re - self.corner.re) / self.h).round();
        let fy = ((z.im - self.corner.im) / self.h).round();
        if fx < 0.0 || fy < 0.0 || fx >= self.side as f64 || fy >= self.side as f64 {
            return None;
        }
        Some(fy as usize * self.side + fx as usize)
    }

    /// Reached node near `z` minimizing the drop from the path's peak to `z`,
    /// searched in widening squares.
    fn best_node(&self, z: Complex64, sigma_lambda: Complex64) -> Option<(usize, f64)> {
        let fx = ((z.re - self.corner.re) / self.h).floor() as i64;
        let fy = ((z.im - self.corner.im) / self.h).floor() as i64;
        for reach in [2i64, 4, 8] {
            let mut best: Option<(usize, f64)> = None;
            for dy in 1 - reach..=reach {
                for dx in 1 - reach..=reach {
                    let (x, y) = (fx + dx, fy + dy);
                    if x < 0 || y < 0 || x >= self.side as i64 || y >= self.side as i64 {
                        continue;
                    }
                    let i = y as usize * self.side + x as usize;
                    if self.parent[i] == NONE {
                        continue;
                    }
                    let phi_z = self.phi_re[i] + (sigma_lambda * self.sqrt_w[i] * (z - self.point(i))).re;
                    let dip = self.peak[i].max(phi_z) - phi_z;
                    if best.is_none_or(|(_, b)| dip < b) {
                        best = Some((i, dip));
                    }
                }
            }
            if best.is_some() {
                return best;
            }
        }
        None
    }

    /// Whether `z` lies in the middle half of the lattice.
    fn covers(&self, z: Complex64) -> bool {
        let span = (self.side - 1) as f64 * self.h;
        let d = z - self.corner;
        let (lo, hi) = (0.25 * span, 0.75 * span);
        d.re >= lo && d.im >= lo && d.re <= hi && d.im <= hi
    }
}

/// Finer flood over a window of the coarse lattice, started from the coarse
/// nodes inside it. Coarse nodes coincide with patch nodes.
#[derive(Debug, Clone)]
struct Patch {
    flood: Flood,
    /// Coarse index of each patch source.
    links: std::collections::HashMap<u32, u32>,
}

/// `σ` making `Re(σλ√W z) < 0` at the seed, so that the exponent decreases
/// outwards.
fn seed_orientation(lambda: Complex64, seed: &Seed) -> f64 {
    if (lambda * seed.sqrt_w * seed.z).re < 0.0 {
        1.0
    } else {
        -1.0
    }
}

type Memo = std::collections::HashMap<(u32, u32), ScaledState>;

/// A seeded fundamental solution that can be evaluated anywhere.
///
/// Points are reached along near-monotone (canonical) paths through a flooded
/// lattice, refined locally where `Re Φ_k` varies too fast for the coarse
/// spacing, so that the solution grows along the way. Points the flood cannot
/// reach are propagated from the hub.
#[derive(Debug, Clone)]
pub struct FundamentalSolution {
    pub seed: Seed,
    pub trunk: SolutionTrace,
    pub pot: RescaledPotential,
    pub settings: PropagationSettings,
    cuts: CutPlane,
    grid: std::sync::OnceLock<Flood>,
    patches: std::sync::Arc<std::sync::Mutex<Vec<std::sync::Arc<Patch>>>>,
    memo: std::sync::Arc<std::sync::Mutex<Memo>>,
}

/// Lattice node a canonical evaluation starts from.
#[derive(Clone)]
enum Start {
    Coarse(usize),
    Patch(u32, std::sync::Arc<Patch>, usize),
}

impl FundamentalSolution {
    /// Seed in sector `k` at the default point and propagate to `hub`.
    pub fn new(graph: &StokesGraph, series: &SemiclassicalSeries, k: i32, hub: Complex64) -> Result<Self> {
        Self::new_with(graph, series, k, hub, PropagationSettings::default())
    }

    pub fn new_with(
        graph: &StokesGraph,
        series: &SemiclassicalSeries,
        k: i32,
        hub: Complex64,
        settings: PropagationSettings,
    ) -> Result<Self> {
        let z = default_seed_point(graph, k)?;
        let seed = wkb_seed(graph, series, k, z)?;
        Self::from_seed_with(seed, &graph.potential, hub, settings)
    }

    pub fn from_seed(seed: Seed, pot: &RescaledPotential, hub: Complex64) -> Result<Self> {
        Self::from_seed_with(seed, pot, hub, PropagationSettings::default())
    }

    pub fn from_seed_with(seed: Seed, pot: &RescaledPotential, hub: Complex64, settings: PropagationSettings) -> Result<Self> {
        let trunk = propagate_with(&seed, pot, &[hub], &settings)?;
        let cuts = CutPlane::new(pot)?;
        Ok(Self {
            seed,
            trunk,
            pot: pot.clone(),
            settings,
            cuts,
            grid: Default::default(),
            patches: Default::default(),
            memo: Default::default(),
        })
    }

    pub fn hub(&self) -> &TraceSample {
        self.trunk.end()
    }

    fn terrain(&self) -> Terrain<'_> {
        let lambda = self.pot.lambda().value;
        Terrain {
            pot: &self.pot,
            sigma_lambda: seed_orientation(lambda, &self.seed) * lambda,
            turning_points: self.cuts.turning_points.iter().map(|t| t.location).collect(),
            radius: self.seed.z.norm(),
        }
    }

    fn coarse(&self) -> &Flood {
        self.grid.get_or_init(|| {
            let terrain = self.terrain();
            let radius = terrain.radius;
            let h = (radius / 200.0).max(0.05);
            let side = (2.0 * radius / h).ceil() as usize + 1;
            let mut flood = Flood::empty(Complex64::new(-radius, -radius), h, side);
            let root = flood.index_of(self.seed.z).unwrap_or(0);
            let zr = flood.point(root);
            let v = terrain.aligned_sqrt(zr, self.seed.sqrt_w);
            let phi = (terrain.sigma_lambda * 0.5 * (self.seed.sqrt_w + v) * (zr - self.seed.z)).re;
            flood.run(&terrain, vec![Source { index: root, phi, peak: phi.max(0.0), sqrt_w: v }]);
            flood
        })
    }

    /// Build a patch around `z` fine enough to resolve `Re Φ_k` there.
    fn refine(&self, z: Complex64, half: f64) -> Patch {
        let coarse = self.coarse();
        let terrain = self.terrain();
        let window = [
            z + Complex64::new(-half, -half),
            z + Complex64::new(half, -half),
            z + Complex64::new(half, half),
            z + Complex64::new(-half, half),
        ];
        let kmax = window.iter().map(|&w| kappa(&self.pot, w)).fold(kappa(&self.pot, z), f64::max);
        let m = (coarse.h * kmax).ceil().max(1.0) as usize;
        let h = coarse.h / m as f64;
        let x0 = ((z.re - half - coarse.corner.re) / coarse.h).floor().max(0.0) as usize;
        let y0 = ((z.im - half - coarse.corner.im) / coarse.h).floor().max(0.0) as usize;
        let cells = ((2.0 * half / coarse.h).ceil() as usize + 1).min(coarse.side - 1 - x0.max(y0).min(coarse.side - 1));
        let side = cells * m + 1;
        let mut flood = Flood::empty(coarse.point(y0 * coarse.side + x0), h, side);
        let mut links = std::collections::HashMap::new();
        let mut sources = Vec::new();
        for cy in y0..=(y0 + cells).min(coarse.side - 1) {
            for cx in x0..=(x0 + cells).min(coarse.side - 1) {
                let ci = cy * coarse.side + cx;
                if coarse.parent[ci] == NONE {
                    continue;
                }
                let fi = (cy - y0) * m * side + (cx - x0) * m;
                links.insert(fi as u32, ci as u32);
                sources.push(Source { index: fi, phi: coarse.phi_re[ci], peak: coarse.peak[ci], sqrt_w: coarse.sqrt_w[ci] });
            }
        }
        flood.run(&terrain, sources);
        Patch { flood, links }
    }

    /// Lattice node from which `z` is reached with the smallest dip. Patches
    /// are built on demand where the coarse lattice is too coarse and reused
    /// for nearby points.
    fn start_for(&self, z: Complex64) -> Option<Start> {
        let sl = self.terrain().sigma_lambda;
        let coarse = self.coarse();
        let base = coarse.best_node(z, sl);
        if let Some((i, dip)) = base {
            if dip <= COARSE_DIP {
                return Some(Start::Coarse(i));
            }
        }
        if base.is_none() && z.norm() > self.terrain().radius {
            return None;
        }
        let best = base.map(|(i, d)| (Start::Coarse(i), d));
        let covering: Vec<_> = {
            let patches = self.patches.lock().unwrap();
            patches.iter().enumerate().filter(|(_, p)| p.flood.covers(z)).map(|(k, p)| (k as u32, p.clone())).collect()
        };
        if covering.is_empty() {
            let mut half = 8.0 * coarse.h;
            let mut patch = self.refine(z, half);
            while patch.flood.best_node(z, sl).is_none_or(|b| b.1 > COARSE_DIP)
                && 2 * patch.flood.side <= MAX_PATCH_SIDE
                && half < terrain_span(coarse)
            {
                half *= 2.0;
                patch = self.refine(z, half);
            }
            let patch = std::sync::Arc::new(patch);
            let mut patches = self.patches.lock().unwrap();
            patches.push(patch.clone());
            let k = (patches.len() - 1) as u32;
            drop(patches);
            return self.pick(z, sl, best, &[(k, patch)]);
        }
        self.pick(z, sl, best, &covering)
    }

    fn pick(
        &self,
        z: Complex64,
        sl: Complex64,
        mut best: Option<(Start, f64)>,
        patches: &[(u32, std::sync::Arc<Patch>)],
    ) -> Option<Start> {
        for (k, p) in patches {
            if let Some((i, d)) = p.flood.best_node(z, sl) {
                if best.as_ref().is_none_or(|b| d < b.1) {
                    best = Some((Start::Patch(*k, p.clone(), i), d));
                }
            }
        }
        best.map(|b| b.0)
    }

    /// `(ψ, ψ')` at `z`: along a canonical path when one exists, otherwise
    /// from the hub.
    pub fn eval(&self, z: Complex64) -> Result<ScaledState> {
        match self.eval_canonical(z)? {
            Some(s) => Ok(s),
            None => self.eval_from_hub(z),
        }
    }

    /// `(ψ, ψ')` at `z` along a canonical path, or `None` if the flood does
    /// not reach `z`.
    pub fn eval_canonical(&self, z: Complex64) -> Result<Option<ScaledState>> {
        let start = match self.start_for(z) {
            None => return Ok(None),
            Some(s) => s,
        };
        let (flood, i, s) = match &start {
            Start::Coarse(i) => (self.coarse(), *i, self.coarse_state(*i)?),
            Start::Patch(k, p, i) => (&p.flood, *i, self.patch_state(*k, p, *i)?),
        };
        let zn = flood.point(i);
        let sz = advance(&self.pot, zn, s, z, &self.settings, |_, _| {})?;
        // Rounding made at the path's peak grows like the companion solution,
        // `e^{2 peak − Re Φ}`, against the actual size of `ψ` at `z`.
        let kz = kappa(&self.pot, z);
        let log_size = |t: &ScaledState, k: f64| t.log_scale + (t.psi.norm_sqr() * k + t.dpsi.norm_sqr() / k).sqrt().ln();
        let phi_n = flood.phi_re[i];
        let phi_z = phi_n + (self.terrain().sigma_lambda * flood.sqrt_w[i] * (z - zn)).re;
        let peak = flood.peak[i].max(phi_z);
        let growth = log_size(&sz, kz) - log_size(&s, kappa(&self.pot, zn));
        let amplification = 2.0 * peak - phi_z - phi_n - growth;
        Ok((amplification <= 2.0 * EVAL_DIP).then_some(sz))
    }

    /// `(ψ, ψ')` at `z` by straight propagation from the hub.
    pub fn eval_from_hub(&self, z: Complex64) -> Result<ScaledState> {
        let h = self.hub();
        advance(&self.pot, h.z, h.state, z, &self.settings, |_, _| {})
    }

    fn coarse_state(&self, i: usize) -> Result<ScaledState> {
        let flood = self.coarse();
        self.chain_state(0, flood, i, |root| {
            let zr = flood.point(root);
            advance(&self.pot, self.seed.z, self.seed.state, zr, &self.settings, |_, _| {})
        })
    }

    fn patch_state(&self, k: u32, patch: &Patch, i: usize) -> Result<ScaledState> {
        self.chain_state(k + 1, &patch.flood, i, |src| self.coarse_state(patch.links[&(src as u32)] as usize))
    }

    /// State at node `i` of `flood`, propagated down its parent chain from
    /// the nearest memoized node or from the chain's source.
    fn chain_state(
        &self,
        level: u32,
        flood: &Flood,
        i: usize,
        source: impl FnOnce(usize) -> Result<ScaledState>,
    ) -> Result<ScaledState> {
        let mut chain = Vec::new();
        let mut cur = i as u32;
        let start = {
            let memo = self.memo.lock().unwrap();
            loop {
                if let Some(s) = memo.get(&(level, cur)) {
                    break Some(*s);
                }
                chain.push(cur);
                let p = flood.parent[cur as usize];
                if p == cur {
                    break None;
                }
                cur = p;
            }
        };
        let mut s = match start {
            Some(s) => s,
            None => {
                chain.pop();
                source(cur as usize)?
            }
        };
        let mut z = flood.point(cur as usize);
        let mut fresh = Vec::with_capacity(chain.len() + 1);
        fresh.push((cur, s));
        for &node in chain.iter().rev() {
            let zn = flood.point(node as usize);
            s = advance(&self.pot, z, s, zn, &self.settings, |_, _| {})?;
            z = zn;
            fresh.push((node, s));
        }
        let mut memo = self.memo.lock().unwrap();
        memo.extend(fresh.into_iter().map(|(n, s)| ((level, n), s)));
        Ok(s)
    }

    /// Propagate to `start` and then along `path`.
    pub fn trace(&self, start: Complex64, path: &[Complex64]) -> Result<SolutionTrace> {
        let s = self.eval(start)?;
        propagate_from(&self.pot, self.seed.sector, start, s, path, &self.settings)
    }
}

fn terrain_span(flood: &Flood) -> f64 {
    (flood.side - 1) as f64 * flood.h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::AlphaChoice;
    use crate::stokesgraph::build_graph;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn shifted_polynomial() {
        // z^2 - 1 about 2: 3 + 4t + t^2
        let s = shifted_coefficients(&[c(-1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)], c(2.0, 0.0), 4);
        assert_eq!(s, vec![c(3.0, 0.0), c(4.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn x1_matches_direct_form() {
        let pot = RescaledPotential::limit(2, AlphaChoice::Rotated, c(10.0, 0.0)).unwrap();
        let cuts = CutPlane::new(&pot).unwrap();
        let s = build_series(&pot, &cuts, 3).unwrap();
        let z = c(2.0, 0.0);
        let sw = cuts.sqrt_w_plane(z);
        let x1 = s.eval(z, sw).unwrap().terms[0];
        // W^{-1/4} (W^{-1/4})'' for W = z^2 - 1 at z = 2.
        let w: f64 = 3.0;
        let f2 = -0.5 * w.powf(-1.25) + 1.25 * 4.0 * w.powf(-2.25);
        let direct = w.powf(-0.25) * f2;
        assert!((x1 - direct).norm() < 1e-12, "{x1} vs {direct}");
        assert!((x1 - s.omega(z) / sw).norm() < 1e-12);
    }

    #[test]
    fn riccati_residual_shrinks_with_order() {
        let pot = RescaledPotential::limit(3, AlphaChoice::One, c(20.0, 0.0)).unwrap();
        let cuts = CutPlane::new(&pot).unwrap();
        let z = c(1.3, 2.1);
        let sw = cuts.sqrt_w_plane(z);
        let lambda = pot.lambda().value;
        let mut prev = f64::INFINITY;
        for order in 1..=4 {
            let s = build_series(&pot, &cuts, order).unwrap();
            // y = σλ√W − W'/4W + Z, residual y' + y² − λ²W by jets.
            let eps = 1e-4;
            let y = |zz: Complex64| {
                let v = cuts.sqrt_w_plane(zz);
                let v = if (v - sw).norm() < (v + sw).norm() { v } else { -v };
                s.log_derivative(zz, v, 1.0).unwrap()
            };
            let y0 = y(z);
            let dy = (y(z + eps) - y(z - eps)) / (2.0 * eps);
            let res = (dy + y0 * y0 - lambda * lambda * pot.w(z)).norm();
            assert!(res < prev, "order {order}: {res} !< {prev}");
            prev = res;
        }
    }

    #[test]
    fn even_terms_are_branch_independent() {
        let pot = RescaledPotential::limit(3, AlphaChoice::One, c(20.0, 0.0)).unwrap();
        let cuts = CutPlane::new(&pot).unwrap();
        let s = build_series(&pot, &cuts, 4).unwrap();
        let z = c(0.7, -1.9);
        let sw = cuts.sqrt_w_plane(z);
        let a = s.eval(z, sw).unwrap();
        let b = s.eval(z, -sw).unwrap();
        for p in 0..4 {
            let sign = if p % 2 == 0 { -1.0 } else { 1.0 };
            assert!((a.terms[p] - sign * b.terms[p]).norm() < 1e-12 * (1.0 + a.terms[p].norm()));
        }
    }

    #[test]
    fn near_singular() {
        let pot = RescaledPotential::limit(2, AlphaChoice::Rotated, c(10.0, 0.0)).unwrap();
        let cuts = CutPlane::new(&pot).unwrap();
        let s = build_series(&pot, &cuts, 2).unwrap();
        assert!(matches!(s.term(1, c(1.0 + 1e-8, 0.0)), Err(Error::NearSingularEvaluation(_))));
    }

    #[test]
    fn harmonic_ground_state_profile() {
        // W = z² − 1, λ = 1: ψ = e^{−z²/2} solves ψ'' = (z² − 1)ψ.
        let pot = RescaledPotential::limit(2, AlphaChoice::Rotated, c(1.0, 0.0)).unwrap();
        let z0 = c(0.0, 0.0);
        let st = ScaledState::new(c(1.0, 0.0), c(0.0, 0.0));
        let settings = PropagationSettings::default();
        let t = propagate_from(&pot, 1, z0, st, &[c(3.0, 0.0), c(3.0, 1.0), c(0.5, 1.0)], &settings).unwrap();
        for smp in &t.samples {
            let exact = (-smp.z * smp.z / 2.0).exp();
            let got = smp.state.psi_scaled(0.0);
            assert!((got - exact).norm() < 1e-11 * (1.0 + exact.norm()), "{} {got} {exact}", smp.z);
        }
    }

    #[test]
    fn seed_decays_and_closed_loop_returns() {
        let pot = RescaledPotential::limit(2, AlphaChoice::Rotated, c(10.0, 0.0)).unwrap();
        let g = build_graph(&pot).unwrap();
        let s = build_series(&pot, &g.cuts, 2).unwrap();
        let right = g.sectors.iter().find(|x| Complex64::from_polar(1.0, x.center).re > 0.9).unwrap().label;
        let z = default_seed_point(&g, right).unwrap();
        let seed = wkb_seed(&g, &s, right, z).unwrap();
        assert!(seed.state.log_scale < -100.0);
        let other = g.sectors.iter().find(|x| x.label != right).unwrap().label;
        assert!(matches!(wkb_seed(&g, &s, other, z), Err(Error::WrongSector(_, _))));
        let start = c(-0.5, -0.3);
        let sol = FundamentalSolution::from_seed(seed, &pot, start).unwrap();
        let a = sol.hub().state;
        let t = sol.trace(start, &[c(0.5, -0.3), c(0.5, 0.3), c(-0.5, 0.3), start]).unwrap();
        let b = t.end().state;
        let ratio = b.psi_scaled(a.log_scale) / a.psi;
        assert!((ratio - 1.0).norm() < 1e-8, "{ratio}");
    }
}
