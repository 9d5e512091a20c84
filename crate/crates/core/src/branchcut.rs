//! Single-valued branches of `√W` and `W^{1/4}` on the cut plane, analytic
//! continuation along paths, and action integrals `∫ √W dy`.
//!
//! Every turning point carries one straight cut: the root at `+i` (label 0
//! for `α = 1`) cuts upward, the root at `-i` (label `n/2` for `α = 1`)
//! cuts downward, roots left of the imaginary axis cut toward `Re z = -∞`
//! and the remaining roots toward `Re z = +∞`. The global sign makes
//! `∫_{z_1}^{z_{-1}} √W dy` along the chord have positive imaginary part,
//! matching the closed-form pair actions. Without a pair (`n = 2`, `α = 1`)
//! the sign is fixed by `Re √W > 0` at `10 e^{i(π/2 - 10⁻³)}`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{turning_points, AlphaChoice, RescaledPotential, TurningPoint};
use crate::quad;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Turning points closer than this to a path endpoint are treated as the
/// endpoint itself.
pub const ENDPOINT_SNAP: f64 = 1e-9;
/// Minimum clearance between a path and a non-endpoint turning point.
pub const PATH_CLEARANCE: f64 = 1e-6;

/// A cut ray `anchor + t·direction`, `t ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub label: i32,
    pub anchor: Complex64,
    /// Unit direction.
    pub direction: Complex64,
}

impl Cut {
    /// Parameter `s ∈ [0, 1]` along the segment `a → b` where it crosses the
    /// ray, if it does (transversally).
    pub fn crossing(&self, a: Complex64, b: Complex64) -> Option<f64> {
        // Solve a + s(b - a) = anchor + t·d for real s, t.
        let d = self.direction;
        let e = b - a;
        let denom = cross(e, d);
        if denom.abs() < 1e-300 {
            return None;
        }
        let w = self.anchor - a;
        let s = cross(w, d) / denom;
        let t = cross(w, e) / denom;
        if (0.0..=1.0).contains(&s) && t >= 0.0 {
            Some(s)
        } else {
            None
        }
    }

    /// Distance from `z` to the ray.
    pub fn distance(&self, z: Complex64) -> f64 {
        let w = z - self.anchor;
        let t = (w.re * self.direction.re + w.im * self.direction.im).max(0.0);
        (w - self.direction * t).norm()
    }
}

fn cross(a: Complex64, b: Complex64) -> f64 {
    a.re * b.im - a.im * b.re
}

/// `√W`-type value together with its phase relative to the cut-plane
/// branch at the same point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchedValue {
    pub value: Complex64,
    /// Element of `{1, i, -1, -i}` stored as an exponent of `i` (mod 4).
    pub sheet: u8,
}

impl BranchedValue {
    pub fn phase(&self) -> Complex64 {
        match self.sheet % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => I,
            2 => Complex64::new(-1.0, 0.0),
            _ => -I,
        }
    }

    /// Compose two sheet phases.
    pub fn compose(a: u8, b: u8) -> u8 {
        (a + b) % 4
    }
}

/// The cut plane for one potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutPlane {
    pub cuts: Vec<Cut>,
    pub turning_points: Vec<TurningPoint>,
    /// `√` of the leading coefficient, with the anchor sign folded in.
    lead_root: Complex64,
    /// Fourth root of the leading coefficient consistent with `lead_root`.
    lead_quarter: Complex64,
}

fn cut_direction(tp: &TurningPoint, alpha: AlphaChoice, n: usize) -> Complex64 {
    match (alpha, tp.label) {
        (AlphaChoice::One, 0) => I,
        (AlphaChoice::One, k) if n.is_multiple_of(2) && k == n as i32 / 2 => -I,
        _ => {
            if tp.limit.re < 0.0 {
                Complex64::new(-1.0, 0.0)
            } else {
                Complex64::new(1.0, 0.0)
            }
        }
    }
}

impl CutPlane {
    pub fn new(pot: &RescaledPotential) -> Result<Self> {
        let tps = turning_points(pot)?;
        Ok(Self::from_turning_points(pot, tps))
    }

    pub fn from_turning_points(pot: &RescaledPotential, tps: Vec<TurningPoint>) -> Self {
        let n = pot.degree();
        let cuts = tps
            .iter()
            .map(|t| Cut { label: t.label, anchor: t.location, direction: cut_direction(t, pot.alpha_choice(), n) })
            .collect();
        let lead = pot.coefficients()[n];
        let mut plane = Self { cuts, turning_points: tps, lead_root: lead.sqrt(), lead_quarter: lead.sqrt().sqrt() };
        let flip = match (plane.turning_point(1), plane.turning_point(-1)) {
            (Some(a), Some(b)) => {
                let mid = 0.5 * (a.location + b.location);
                (plane.raw_sqrt(mid) * (b.location - a.location)).im < 0.0
            }
            _ => {
                let v = plane.raw_sqrt(Complex64::from_polar(10.0, PI / 2.0 - 1e-3));
                v.re < 0.0
            }
        };
        if flip {
            plane.lead_root = -plane.lead_root;
            plane.lead_quarter *= I;
        }
        plane
    }

    pub fn turning_point(&self, label: i32) -> Option<&TurningPoint> {
        self.turning_points.iter().find(|t| t.label == label)
    }

    pub fn locations(&self) -> Vec<Complex64> {
        self.turning_points.iter().map(|t| t.location).collect()
    }

    fn factor_sqrt(cut: &Cut, z: Complex64) -> Complex64 {
        // Branch of (z - z_j)^{1/2} whose discontinuity is the cut ray.
        let w = (z - cut.anchor) / cut.direction;
        cut.direction.sqrt() * I * (-w).sqrt()
    }

    fn factor_quarter(cut: &Cut, z: Complex64) -> Complex64 {
        let w = (z - cut.anchor) / cut.direction;
        cut.direction.sqrt().sqrt() * Complex64::from_polar(1.0, PI / 4.0) * (-w).sqrt().sqrt()
    }

    fn raw_sqrt(&self, z: Complex64) -> Complex64 {
        self.cuts.iter().fold(self.lead_root, |acc, c| acc * Self::factor_sqrt(c, z))
    }

    /// Index of a cut that `z` lies on (within `tol`), if any.
    pub fn on_cut(&self, z: Complex64, tol: f64) -> Option<usize> {
        self.cuts.iter().position(|c| c.distance(z) <= tol && (z - c.anchor).norm() > tol)
    }

    /// `√W(z)` on the cut plane.
    pub fn sqrt_w_plane(&self, z: Complex64) -> Complex64 {
        self.raw_sqrt(z)
    }

    /// `W^{1/4}(z)` on the cut plane, squaring to [`Self::sqrt_w_plane`].
    pub fn quarter_w_plane(&self, z: Complex64) -> Complex64 {
        self.cuts.iter().fold(self.lead_quarter, |acc, c| acc * Self::factor_quarter(c, z))
    }

    /// `√W(z)`, either on the cut plane or continued from `hint`.
    pub fn sqrt_w(&self, z: Complex64, hint: Option<BranchedValue>) -> Result<BranchedValue> {
        let plane = self.raw_sqrt(z);
        match hint {
            None => {
                if self.on_cut(z, 1e-12).is_some() {
                    return Err(Error::AmbiguousBranch(z));
                }
                Ok(BranchedValue { value: plane, sheet: 0 })
            }
            Some(h) => {
                if (plane - h.value).norm() <= (plane + h.value).norm() {
                    Ok(BranchedValue { value: plane, sheet: 0 })
                } else {
                    Ok(BranchedValue { value: -plane, sheet: 2 })
                }
            }
        }
    }

    /// `W^{-1/4}(z)`, either on the cut plane or continued from `hint`
    /// (a previous `W^{-1/4}` value). The sheet records the accumulated
    /// `±i` factors.
    pub fn inv_quarter_w(&self, z: Complex64, hint: Option<BranchedValue>) -> Result<BranchedValue> {
        let plane = 1.0 / self.quarter_w_plane(z);
        match hint {
            None => {
                if self.on_cut(z, 1e-12).is_some() {
                    return Err(Error::AmbiguousBranch(z));
                }
                Ok(BranchedValue { value: plane, sheet: 0 })
            }
            Some(h) => {
                let (best, value) = (0..4u8)
                    .map(|s| (s, plane * BranchedValue { value: plane, sheet: s }.phase()))
                    .min_by(|a, b| (a.1 - h.value).norm().total_cmp(&(b.1 - h.value).norm()))
                    .unwrap();
                Ok(BranchedValue { value, sheet: best })
            }
        }
    }

    /// Sign `±1` turning the cut-plane `√W` into the branch continued
    /// along `a → b` starting from the cut-plane branch at `a`, together with
    /// the crossings encountered.
    pub fn segment_crossings(&self, a: Complex64, b: Complex64) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = self
            .cuts
            .iter()
            .enumerate()
            .filter_map(|(j, c)| {
                if (a - c.anchor).norm() < ENDPOINT_SNAP || (b - c.anchor).norm() < ENDPOINT_SNAP {
                    return None;
                }
                c.crossing(a, b).map(|s| (s, j))
            })
            .filter(|(s, _)| *s > 0.0 && *s < 1.0)
            .collect();
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
        out
    }
}

/// Polyline path with recorded cut crossings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexPath {
    pub points: Vec<Complex64>,
    /// `(segment index, parameter along segment, cut index)`.
    pub crossings: Vec<(usize, f64, usize)>,
}

impl ComplexPath {
    pub fn new(cuts: &CutPlane, points: Vec<Complex64>) -> Result<Self> {
        let mut pts: Vec<Complex64> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().is_none_or(|q: &Complex64| (*q - p).norm() > 0.0) {
                pts.push(p);
            }
        }
        let mut crossings = Vec::new();
        for (i, w) in pts.windows(2).enumerate() {
            for (s, j) in cuts.segment_crossings(w[0], w[1]) {
                crossings.push((i, s, j));
            }
        }
        Ok(Self { points: pts, crossings })
    }

    pub fn straight(cuts: &CutPlane, a: Complex64, b: Complex64) -> Result<Self> {
        Self::new(cuts, vec![a, b])
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn end(&self) -> Complex64 {
        *self.points.last().unwrap()
    }
}

/// Value and error estimate of an action integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub value: Complex64,
    pub error: f64,
}

/// Quadrature of `sign·f(a + (b-a)u)` on `[0,1]` with optional endpoint
/// regularization `u = v²` (start) or `u = 1 - v²` (end).
fn integrate_segment<F: Fn(Complex64) -> Complex64>(
    f: &F,
    a: Complex64,
    b: Complex64,
    start_singular: bool,
    end_singular: bool,
    tol: f64,
) -> (Complex64, f64) {
    let e = b - a;
    let run = |lo: f64, hi: f64, map: &dyn Fn(f64) -> (f64, f64)| {
        quad::integrate(
            |v| {
                let (u, du) = map(v);
                f(a + e * u) * e * du
            },
            lo,
            hi,
            tol,
            1e-14,
            400,
        )
    };
    match (start_singular, end_singular) {
        (false, false) => {
            let r = run(0.0, 1.0, &|v| (v, 1.0));
            (r.value, r.error)
        }
        (true, false) => {
            let r = run(0.0, 1.0, &|v| (v * v, 2.0 * v));
            (r.value, r.error)
        }
        (false, true) => {
            let r = run(0.0, 1.0, &|v| (1.0 - v * v, 2.0 * v));
            (r.value, r.error)
        }
        (true, true) => {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            let r1 = run(0.0, h, &|v| (v * v, 2.0 * v));
            let r2 = run(0.0, h, &|v| (1.0 - v * v, 2.0 * v));
            (r1.value + r2.value, r1.error + r2.error)
        }
    }
}

/// `∫ √W dy` along `path`, continuing the branch from the start. The
/// starting branch is the cut-plane one at the first point off a turning
/// point (or `start_branch` when given). Endpoints within
/// [`ENDPOINT_SNAP`] of a turning point are regularized.
pub fn action_integral_from(cuts: &CutPlane, path: &ComplexPath, start_branch: Option<Complex64>, tol: f64) -> Result<Action> {
    action_integral_with(cuts, path, start_branch, tol, |z| cuts.sqrt_w_plane(z))
}

/// Same as [`action_integral_from`] for any integrand that flips sign with
/// `√W` across cuts (e.g. `g(z)/√W`).
pub fn action_integral_with<F: Fn(Complex64) -> Complex64>(
    cuts: &CutPlane,
    path: &ComplexPath,
    start_branch: Option<Complex64>,
    tol: f64,
    integrand: F,
) -> Result<Action> {
    let tps = cuts.locations();
    let is_tp = |z: Complex64| tps.iter().any(|t| (z - t).norm() < ENDPOINT_SNAP);
    let pts = &path.points;
    if pts.len() < 2 {
        return Ok(Action { value: Complex64::new(0.0, 0.0), error: 0.0 });
    }
    // Clearance check against interior turning points.
    for (i, w) in pts.windows(2).enumerate() {
        for &t in &tps {
            let endpoint_here =
                (i == 0 && (w[0] - t).norm() < ENDPOINT_SNAP) || (i == pts.len() - 2 && (w[1] - t).norm() < ENDPOINT_SNAP);
            if endpoint_here {
                continue;
            }
            let d = segment_distance(w[0], w[1], t);
            if d < PATH_CLEARANCE {
                return Err(Error::PathTooClose { point: t, distance: d });
            }
        }
    }
    let mut sign = 1.0;
    let mut total = Complex64::new(0.0, 0.0);
    let mut err = 0.0;
    let mut first = true;
    for (i, w) in pts.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let mut breaks = vec![0.0];
        breaks.extend(cuts.segment_crossings(a, b).iter().map(|c| c.0));
        breaks.push(1.0);
        for (j, br) in breaks.windows(2).enumerate() {
            let (sa, sb) = (br[0], br[1]);
            if sb - sa <= 0.0 {
                if j > 0 {
                    sign = -sign;
                }
                continue;
            }
            if j > 0 {
                sign = -sign;
            }
            let za = a + (b - a) * sa;
            let zb = a + (b - a) * sb;
            if first {
                if let Some(sb0) = start_branch {
                    let probe = za + (zb - za) * 1e-6;
                    let plane = cuts.sqrt_w_plane(probe);
                    if (plane + sb0).norm() < (plane - sb0).norm() {
                        sign = -1.0;
                    }
                }
                first = false;
            }
            let start_sing = i == 0 && j == 0 && is_tp(za);
            let end_sing = i == pts.len() - 2 && j == breaks.len() - 2 && is_tp(zb);
            let (v, e) = integrate_segment(&integrand, za, zb, start_sing, end_sing, tol);
            total += v * sign;
            err += e;
        }
    }
    if err > tol.max(1e-10) * 10.0 {
        return Err(Error::QuadratureFailure { estimate: err, tolerance: tol });
    }
    Ok(Action { value: total, error: err })
}

/// `∫ √W dy` along `path` with the cut-plane branch at the start.
pub fn action_integral(cuts: &CutPlane, path: &ComplexPath) -> Result<Action> {
    action_integral_from(cuts, path, None, 1e-12)
}

pub fn segment_distance(a: Complex64, b: Complex64, p: Complex64) -> f64 {
    let e = b - a;
    let l2 = e.norm_sqr();
    if l2 == 0.0 {
        return (p - a).norm();
    }
    let t = (((p - a) * e.conj()).re / l2).clamp(0.0, 1.0);
    (p - (a + e * t)).norm()
}

/// `∫_{z_k}^{z_{-k}} √W dy` for the limit potential in closed form.
pub fn closed_form_action(n: usize, alpha: AlphaChoice, k: i32) -> Result<Complex64> {
    let nf = n as f64;
    let angle = match alpha {
        AlphaChoice::One => {
            if k < 1 || 2 * k >= n as i32 {
                return Err(Error::InvalidPair(k));
            }
            2.0 * k as f64 * PI / nf
        }
        AlphaChoice::Rotated => {
            if n % 2 == 1 || k < 1 || 2 * k > n as i32 {
                return Err(Error::InvalidPair(k));
            }
            (2.0 * k as f64 - 1.0) * PI / nf
        }
    };
    let b = statrs::function::beta::beta(1.5, 1.0 / nf);
    Ok(Complex64::new(0.0, 2.0 / nf * angle.sin() * b))
}

/// Numeric `∫_{z_k}^{z_{-k}} √W dy` along the straight chord between the
/// drifted pair.
pub fn pair_action(cuts: &CutPlane, k: i32) -> Result<Action> {
    let a = cuts.turning_point(k).ok_or(Error::InvalidPair(k))?.location;
    let b = cuts.turning_point(-k).ok_or(Error::InvalidPair(k))?.location;
    let path = ComplexPath::straight(cuts, a, b)?;
    action_integral(cuts, &path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn harmonic() -> (RescaledPotential, CutPlane) {
        let pot = RescaledPotential::limit(2, AlphaChoice::Rotated, c(10.0, 0.0)).unwrap();
        let cuts = CutPlane::new(&pot).unwrap();
        (pot, cuts)
    }

    #[test]
    fn harmonic_branch_anchors() {
        let (_, cuts) = harmonic();
        let v = cuts.sqrt_w_plane(c(2.0, 1e-12));
        assert!((v - c(3f64.sqrt(), 0.0)).norm() < 1e-10);
        let v0 = cuts.sqrt_w(c(0.0, 0.0), None).unwrap();
        assert!((v0.value - c(0.0, 1.0)).norm() < 1e-14);
        assert!(matches!(cuts.sqrt_w(c(2.0, 0.0), None), Err(Error::AmbiguousBranch(_))));
    }

    #[test]
    fn square_of_branches() {
        let pot =
            RescaledPotential::new(5, AlphaChoice::One, &[c(0.1, 0.2), c(0.0, 0.0), c(0.3, 0.0), c(-0.2, 0.1)], c(30.0, 2.0))
                .unwrap();
        let cuts = CutPlane::new(&pot).unwrap();
        for z in [c(0.3, 0.7), c(-2.0, 0.4), c(1.5, -3.0)] {
            let s = cuts.sqrt_w_plane(z);
            let q = cuts.quarter_w_plane(z);
            assert!((s * s - pot.w(z)).norm() < 1e-12 * pot.w(z).norm());
            assert!((q * q - s).norm() < 1e-12 * s.norm());
        }
    }

    #[test]
    fn monodromy_around_turning_point() {
        let (_, cuts) = harmonic();
        let z0 = c(1.0, 0.0) + Complex64::from_polar(0.3, 0.4);
        let mut h = cuts.sqrt_w(z0, None).unwrap();
        let mut q = cuts.inv_quarter_w(z0, None).unwrap();
        let start = h.value;
        let qstart = q.value;
        for j in 1..=400 {
            let z = c(1.0, 0.0) + Complex64::from_polar(0.3, 0.4 + 2.0 * PI * j as f64 / 400.0);
            h = cuts.sqrt_w(z, Some(h)).unwrap();
            q = cuts.inv_quarter_w(z, Some(q)).unwrap();
        }
        assert!((h.value + start).norm() < 1e-10);
        assert_eq!(h.sheet, 2);
        let ratio = q.value / qstart;
        assert!((ratio - I).norm() < 1e-10 || (ratio + I).norm() < 1e-10);
    }

    #[test]
    fn harmonic_inner_action() {
        let (_, cuts) = harmonic();
        let a = pair_action(&cuts, 1).unwrap();
        assert!((a.value - c(0.0, PI / 2.0)).norm() < 1e-12, "{:?}", a.value);
    }

    #[test]
    fn zero_length_path() {
        let (_, cuts) = harmonic();
        let p = ComplexPath::new(&cuts, vec![c(0.5, 0.5), c(0.5, 0.5)]).unwrap();
        assert_eq!(action_integral(&cuts, &p).unwrap().value, c(0.0, 0.0));
    }

    #[test]
    fn closed_form_values() {
        assert!((closed_form_action(2, AlphaChoice::Rotated, 1).unwrap() - c(0.0, PI / 2.0)).norm() < 1e-14);
        // B(3/2, 1/3) from its defining integral after t = 1 - u³.
        let beta = quad::integrate(|u| Complex64::new(3.0 * (1.0 - u * u * u).sqrt(), 0.0), 0.0, 1.0, 1e-14, 0.0, 200).value.re;
        let v = closed_form_action(3, AlphaChoice::One, 1).unwrap();
        assert!((v.im - 2.0 / 3.0 * (2.0 * PI / 3.0).sin() * beta).abs() < 1e-12);
        assert!((v.im - 1.4572).abs() < 1e-4);
        assert!(matches!(closed_form_action(3, AlphaChoice::One, 2), Err(Error::InvalidPair(2))));
        assert!(matches!(closed_form_action(4, AlphaChoice::One, 2), Err(Error::InvalidPair(2))));
    }

    #[test]
    fn path_too_close() {
        let (_, cuts) = harmonic();
        let p = ComplexPath::new(&cuts, vec![c(0.0, 0.5), c(1.0, 0.0), c(2.0, 0.5)]).unwrap();
        assert!(matches!(action_integral(&cuts, &p), Err(Error::PathTooClose { .. })));
    }
}
