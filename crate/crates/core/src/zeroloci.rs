//! Zeros of fundamental solutions: asymptotic predictions along exceptional
//! lines, argument-principle search, matching and energy quantization.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::branchcut::{pair_action, CutPlane};
use crate::error::{Error, Result};
use crate::fundsol::{
    build_series, local_scale, normalized_wronskian, propagate_from, FundamentalSolution, PropagationSettings, ScaledState,
    DEFAULT_ORDER,
};
use crate::potential::RescaledPotential;
use crate::stokesgraph::{build_graph, exceptional_set, line_point, offset_polyline, ExceptionalSet, StokesGraph, Terminal};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Regular-limit parameter of a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RegularParameter {
    /// Fractional part `Λ` of `|λ|`.
    Lambda(f64),
    /// Residue `R` of the inner action, `|λ||I_k| = (s + R)π`.
    Residue(f64),
}

/// Which kind of line a prediction sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineKind {
    Exceptional,
    Inner,
    UpperBoundary,
    LowerBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroPrediction {
    pub solution: i32,
    pub root: i32,
    pub line: usize,
    pub q: u32,
    pub r: i32,
    /// `ζ_{qr0}`.
    pub order0: Complex64,
    /// `ζ_{qr1}/|λ|` in the form `ζ_{qr1}e^{iβ}/λ`.
    pub order1: Complex64,
    pub location: Complex64,
    pub sign: f64,
    pub regular: RegularParameter,
    pub kind: LineKind,
    /// `cos(Rπ) < 10/|λ|` on sector lines.
    pub low_confidence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroObservation {
    pub location: Complex64,
    pub multiplicity: u32,
    /// `|ψ|/|ψ'|` at convergence.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub prediction: usize,
    pub observation: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub matched: Vec<MatchedPair>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_observations: Vec<usize>,
    pub max_residual: f64,
    pub fitted_order: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizationResult {
    pub s: u32,
    pub k0: i32,
    /// `λ_s` from `|λ_s||I_{k0}| = (s + ½)π`.
    pub leading: f64,
    pub refined: Complex64,
    /// Normalized Wronskian at `refined`.
    pub residual: f64,
    /// `∫_{z_k}^{z_{-k}} Z_k dy` as half a loop integral around the pair.
    pub z_correction: Option<Complex64>,
    pub iterations: usize,
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0: x0.min(x1), y0: y0.min(y1), x1: x0.max(x1), y1: y0.max(y1) }
    }

    /// Square of half-width `h` about `c`.
    pub fn around(c: Complex64, h: f64) -> Self {
        Self::new(c.re - h, c.im - h, c.re + h, c.im + h)
    }

    /// Counter-clockwise corners starting bottom-left.
    pub fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.x0, self.y0),
            Complex64::new(self.x1, self.y0),
            Complex64::new(self.x1, self.y1),
            Complex64::new(self.x0, self.y1),
        ]
    }

    pub fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn size(&self) -> f64 {
        (self.x1 - self.x0).max(self.y1 - self.y0)
    }

    pub fn contains(&self, z: Complex64, pad: f64) -> bool {
        z.re >= self.x0 - pad && z.re <= self.x1 + pad && z.im >= self.y0 - pad && z.im <= self.y1 + pad
    }

    /// Four children split at fractions `(fx, fy)`.
    pub fn split(&self, fx: f64, fy: f64) -> [Rect; 4] {
        let xm = self.x0 + (self.x1 - self.x0) * fx;
        let ym = self.y0 + (self.y1 - self.y0) * fy;
        [
            Rect::new(self.x0, self.y0, xm, ym),
            Rect::new(xm, self.y0, self.x1, ym),
            Rect::new(xm, ym, self.x1, self.y1),
            Rect::new(self.x0, ym, xm, self.y1),
        ]
    }

    /// `n × m` grid of sub-rectangles.
    pub fn grid(&self, n: usize, m: usize) -> Vec<Rect> {
        let mut out = Vec::with_capacity(n * m);
        let dx = (self.x1 - self.x0) / n as f64;
        let dy = (self.y1 - self.y0) / m as f64;
        for j in 0..m {
            for i in 0..n {
                let x = self.x0 + dx * i as f64;
                let y = self.y0 + dy * j as f64;
                out.push(Rect::new(x, y, x + dx, y + dy));
            }
        }
        out
    }
}

/// An entire function whose zeros are searched.
pub trait ZeroSource {
    /// `(ψ, ψ')` at `z`.
    fn eval(&self, z: Complex64) -> Result<ScaledState>;
    /// Samples of `ψ` around the closed boundary of `rect`; `refine`
    /// increases the sampling density.
    fn boundary(&self, rect: &Rect, refine: u32) -> Result<Vec<ScaledState>>;
}

impl ZeroSource for FundamentalSolution {
    fn eval(&self, z: Complex64) -> Result<ScaledState> {
        self.eval_canonical(z)?.ok_or(Error::UnresolvedCell(z))
    }

    /// Anchors from stable evaluations, joined by short local propagations
    /// whose worst-case growth of the companion solution stays near `e^{10}`.
    fn boundary(&self, rect: &Rect, refine: u32) -> Result<Vec<ScaledState>> {
        let c = rect.corners();
        let settings =
            PropagationSettings { max_step_scaled: Some(0.4 / 4f64.powi(refine as i32)), dense: true, ..self.settings };
        let kmax = c.iter().map(|&z| local_scale(&self.pot, z)).fold(local_scale(&self.pot, rect.center()), f64::max);
        let spacing = 5.0 / kmax;
        let mut out = Vec::new();
        for e in 0..4 {
            let (a, b) = (c[e], c[(e + 1) % 4]);
            let m = (((b - a).norm() / spacing).ceil() as usize).max(1);
            for j in 0..m {
                let za = a + (b - a) * (j as f64 / m as f64);
                let zb = a + (b - a) * ((j + 1) as f64 / m as f64);
                let sa = ZeroSource::eval(self, za)?;
                let t = propagate_from(&self.pot, self.seed.sector, za, sa, &[zb], &settings)?;
                out.extend(t.samples[..t.samples.len() - 1].iter().map(|s| s.state));
            }
        }
        out.push(ZeroSource::eval(self, c[0])?);
        Ok(out)
    }
}

/// Zero search on an explicitly given function `z ↦ (ψ, ψ')`.
pub struct TestFunction<F: Fn(Complex64) -> (Complex64, Complex64)> {
    pub f: F,
    pub samples_per_edge: usize,
}

impl<F: Fn(Complex64) -> (Complex64, Complex64)> ZeroSource for TestFunction<F> {
    fn eval(&self, z: Complex64) -> Result<ScaledState> {
        let (p, d) = (self.f)(z);
        Ok(ScaledState { psi: p, dpsi: d, log_scale: 0.0 })
    }

    fn boundary(&self, rect: &Rect, refine: u32) -> Result<Vec<ScaledState>> {
        let c = rect.corners();
        let m = self.samples_per_edge << (2 * refine);
        let mut out = Vec::with_capacity(4 * m + 1);
        for e in 0..4 {
            let (a, b) = (c[e], c[(e + 1) % 4]);
            for j in 0..m {
                out.push(self.eval(a + (b - a) * (j as f64 / m as f64))?);
            }
        }
        out.push(self.eval(c[0])?);
        Ok(out)
    }
}

/// Winding number of `ψ` around `rect`.
pub fn winding<S: ZeroSource + ?Sized>(src: &S, rect: &Rect) -> Result<i64> {
    for refine in 0..4 {
        let samples = src.boundary(rect, refine)?;
        let mut total = 0.0;
        let mut ok = true;
        for w in samples.windows(2) {
            if w[0].psi.norm() == 0.0 || w[1].psi.norm() == 0.0 {
                ok = false;
                break;
            }
            let d = (w[1].psi / w[0].psi).arg();
            if d.abs() > PI / 2.0 {
                ok = false;
                break;
            }
            total += d;
        }
        if ok {
            return Ok((total / (2.0 * PI)).round() as i64);
        }
    }
    Err(Error::UnresolvedCell(rect.center()))
}

/// Zero search controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FindOptions {
    /// Cells smaller than this are not subdivided further.
    pub min_cell: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Accepted `|ψ|/|ψ'|` at convergence.
    pub residual_tol: f64,
    /// Accepted `|ψ|/|ψ'|` relative to the cell size when Newton stalls.
    pub relative_residual_tol: f64,
}

impl Default for FindOptions {
    fn default() -> Self {
        Self { min_cell: 1e-6, newton_tol: 1e-13, max_newton: 60, residual_tol: 1e-9, relative_residual_tol: 1e-5 }
    }
}

fn newton<S: ZeroSource + ?Sized>(src: &S, z0: Complex64, rect: &Rect, opts: &FindOptions) -> Result<Option<(Complex64, f64)>> {
    let mut z = z0;
    let pad = rect.size() * 0.25;
    let mut best: Option<(Complex64, f64)> = None;
    for _ in 0..opts.max_newton {
        let s = src.eval(z)?;
        if s.dpsi.norm() == 0.0 {
            return Ok(None);
        }
        let step = s.psi / s.dpsi;
        if best.is_none_or(|(_, r)| step.norm() < r) {
            best = Some((z, step.norm()));
        }
        z -= step;
        if !rect.contains(z, pad) {
            return Ok(None);
        }
        if step.norm() <= opts.newton_tol * (1.0 + z.norm()) {
            let s = src.eval(z)?;
            return Ok(Some((z, s.newton_ratio())));
        }
    }
    // Evaluation noise can stall the iteration above `newton_tol`.
    let tol = opts.residual_tol.max(opts.relative_residual_tol * rect.size());
    Ok(best.filter(|&(_, r)| r <= tol))
}

/// All zeros of `src` inside `rect` by adaptive argument-principle
/// subdivision and Newton refinement.
pub fn find_zeros<S: ZeroSource + ?Sized>(src: &S, rect: Rect, opts: &FindOptions) -> Result<Vec<ZeroObservation>> {
    let mut out: Vec<ZeroObservation> = Vec::new();
    let mut stack = vec![(rect, winding(src, &rect)?, 0u32)];
    while let Some((cell, w, depth)) = stack.pop() {
        if w == 0 {
            continue;
        }
        if w < 0 {
            return Err(Error::UnresolvedCell(cell.center()));
        }
        if w == 1 {
            if let Some((z, res)) = newton(src, cell.center(), &cell, opts)? {
                if cell.contains(z, 1e-12) {
                    push_unique(&mut out, ZeroObservation { location: z, multiplicity: 1, residual: res });
                    continue;
                }
            }
        }
        if cell.size() < opts.min_cell {
            let (z, res) = newton(src, cell.center(), &cell, opts)?.unwrap_or((cell.center(), f64::NAN));
            push_unique(&mut out, ZeroObservation { location: z, multiplicity: w as u32, residual: res });
            continue;
        }
        // Slightly off-center splits keep zeros away from shared edges.
        let f = 0.5 + 0.0137 * ((depth % 3) as f64 - 1.0);
        let kids = cell.split(f, 1.0 - f);
        let mut ws = Vec::with_capacity(4);
        for k in &kids {
            ws.push(winding(src, k));
        }
        let all_ok = ws.iter().all(|r| r.is_ok());
        let total: i64 = ws.iter().filter_map(|r| r.as_ref().ok()).sum();
        if !all_ok || total != w {
            let kids = cell.split(0.5 + 0.0311, 0.5 - 0.0217);
            let mut ws2 = Vec::with_capacity(4);
            for k in &kids {
                ws2.push(winding(src, k)?);
            }
            if ws2.iter().sum::<i64>() != w {
                return Err(Error::UnresolvedCell(cell.center()));
            }
            for (k, wk) in kids.into_iter().zip(ws2) {
                stack.push((k, wk, depth + 1));
            }
        } else {
            for (k, wk) in kids.into_iter().zip(ws) {
                stack.push((k, wk?, depth + 1));
            }
        }
    }
    out.sort_by(|a, b| a.location.re.total_cmp(&b.location.re).then(a.location.im.total_cmp(&b.location.im)));
    Ok(out)
}

fn push_unique(out: &mut Vec<ZeroObservation>, z: ZeroObservation) {
    if !out.iter().any(|o| (o.location - z.location).norm() < 1e-9 * (1.0 + z.location.norm())) {
        out.push(z);
    }
}

/// Prediction controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub q_max: u32,
    pub r_window: (i32, i32),
    /// Radius of the turning-point vicinity for the `q = 0` bound.
    pub eps: f64,
    /// `Λ`; defaults to the fractional part of `|λ|`.
    pub big_lambda: Option<f64>,
    /// `R` for sector-line predictions; defaults to the value implied by `λ`.
    pub residue: Option<f64>,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self { q_max: 2, r_window: (-5, 5), eps: 0.25, big_lambda: None, residue: None }
    }
}

/// `m₀ = |λ| sup_φ |∫_{z_l}^{z_l+εe^{iφ}} √W| / π`.
pub fn m0_bound(graph: &StokesGraph, root: i32, eps: f64) -> Result<f64> {
    let zl = graph.turning_point(root).ok_or(Error::InvalidPair(root))?.location;
    let lambda = graph.potential.lambda();
    let mut sup: f64 = 0.0;
    for j in 0..64 {
        let phi = 2.0 * PI * j as f64 / 64.0;
        let zb = zl + Complex64::from_polar(eps, phi);
        let path = crate::branchcut::ComplexPath { points: vec![zl, zb], crossings: vec![] };
        let v = crate::branchcut::action_integral_from(&graph.cuts, &path, Some(graph.cuts.sqrt_w_plane(zb)), 1e-12)?;
        sup = sup.max(v.value.norm());
    }
    Ok(lambda.modulus() * sup / PI)
}

/// Inner action `I_k = ∫_{z_k}^{z_{-k}} √W` between the drifted pair.
pub fn inner_action(cuts: &CutPlane, k: i32) -> Result<Complex64> {
    Ok(pair_action(cuts, k)?.value)
}

/// `(s, R)` with `|λ||I_k| = (s + R)π`, `s ≥ 0`, `-½ < R ≤ ½`.
pub fn residue_of(lambda_modulus: f64, inner: Complex64) -> (u32, f64) {
    let x = lambda_modulus * inner.norm() / PI;
    let s = (x - 0.5).ceil().max(0.0);
    (s as u32, x - s)
}

/// Predicted zeros of `ψ_k` on the exceptional lines of root `l`.
pub fn predict(graph: &StokesGraph, ex: &ExceptionalSet, k: i32, l: i32, opts: &PredictOptions) -> Result<Vec<ZeroPrediction>> {
    if graph.critical && l == -k && graph.inner_pairs.iter().any(|&(a, b)| (a == k && b == -k) || (a == -k && b == k)) {
        return predict_sector_lines(graph, ex, k, opts);
    }
    let lambda = graph.potential.lambda();
    let big_lambda = opts.big_lambda.unwrap_or_else(|| lambda.fractional_part());
    let mut out = Vec::new();
    let ids = ex.lines_of(l).to_vec();
    if ids.is_empty() {
        return Err(Error::InvalidArgument(format!("turning point {l} contributes no exceptional line to ∂D_{k}")));
    }
    for id in ids {
        let line = &graph.lines[id];
        let kind = if line.is_inner() { LineKind::Inner } else { LineKind::Exceptional };
        if kind == LineKind::Inner {
            let total = line.actions.last().unwrap().im.abs() / lambda.modulus();
            let bound = (total / PI).floor() as u32;
            if opts.q_max > bound {
                return Err(Error::IslandOutOfRange { q: opts.q_max, bound });
            }
        }
        for q in 1..=opts.q_max {
            let t0 = q as f64 * PI * lambda.modulus();
            let Some(p0) = line_point(graph, id, l, t0)? else { continue };
            for r in opts.r_window.0..=opts.r_window.1 {
                let shift = p0.sign * (r as f64 - q as f64 * big_lambda - 0.25) * PI;
                let order1 = I * shift / (lambda.value * p0.sqrt_w);
                out.push(ZeroPrediction {
                    solution: k,
                    root: l,
                    line: id,
                    q,
                    r,
                    order0: p0.z,
                    order1,
                    location: p0.z + order1,
                    sign: p0.sign,
                    regular: RegularParameter::Lambda(big_lambda),
                    kind,
                    low_confidence: false,
                });
            }
        }
        // q = 0: zeros near z_l beyond the m₀ bound.
        let m0 = m0_bound(graph, l, opts.eps)?;
        let r_start = m0.ceil() as i32 + 1;
        let count = opts.r_window.1 - opts.r_window.0 + 1;
        let zl = graph.turning_point(l).unwrap().location;
        for r in r_start..r_start + count {
            let t = (r as f64 - 0.25) * PI;
            let Some(p) = line_point(graph, id, l, t)? else { break };
            out.push(ZeroPrediction {
                solution: k,
                root: l,
                line: id,
                q: 0,
                r,
                order0: zl,
                order1: p.z - zl,
                location: p.z,
                sign: p.sign,
                regular: RegularParameter::Lambda(big_lambda),
                kind,
                low_confidence: false,
            });
        }
    }
    Ok(out)
}

/// Zeros of `ψ_k` along the two infinite boundary lines of `S_{-k}` in a
/// critical graph.
pub fn predict_sector_lines(
    graph: &StokesGraph,
    ex: &ExceptionalSet,
    k: i32,
    opts: &PredictOptions,
) -> Result<Vec<ZeroPrediction>> {
    let lambda = graph.potential.lambda();
    let inner = inner_action(&graph.cuts, k.abs())?;
    let (_, r_implied) = residue_of(lambda.modulus(), inner);
    let residue = opts.residue.unwrap_or(r_implied);
    if (residue.abs() - 0.5).abs() < 1e-12 {
        return Err(Error::SingularLimit);
    }
    let big_lambda = opts.big_lambda.unwrap_or_else(|| lambda.fractional_part());
    let log_term = 0.5 * (2.0 * (residue * PI).cos()).ln();
    let low = (residue * PI).cos() < 10.0 / lambda.modulus();
    let ex_sector = graph.sector(-k).ok_or(Error::UnknownSector(-k))?;
    let inside = Complex64::from_polar(graph.settings.r_max, ex_sector.center);
    let mut infinite: Vec<usize> =
        ex.lines_of(-k).iter().copied().filter(|&i| !graph.lines[i].is_inner() && graph.lines[i].origin == -k).collect();
    infinite.sort_by(|&a, &b| {
        let ea = graph.lines[a].points.last().unwrap().im;
        let eb = graph.lines[b].points.last().unwrap().im;
        eb.total_cmp(&ea)
    });
    let mut out = Vec::new();
    for (j, &id) in infinite.iter().enumerate() {
        let kind = if j == 0 { LineKind::UpperBoundary } else { LineKind::LowerBoundary };
        for q in 1..=opts.q_max {
            let t0 = q as f64 * PI * lambda.modulus();
            let Some(p0) = line_point(graph, id, -k, t0)? else { continue };
            let f = lambda.value * p0.sqrt_w;
            // A positive log term moves the zeros off the line away from S_{-k}.
            let toward = inside - p0.z;
            let tau = if (f * toward).re >= 0.0 { -1.0 } else { 1.0 };
            for r in opts.r_window.0..=opts.r_window.1 {
                let along = p0.sign * (r as f64 - q as f64 * big_lambda - 0.25 + residue / 2.0) * PI;
                let order1 = (I * along + tau * log_term) / f;
                out.push(ZeroPrediction {
                    solution: k,
                    root: -k,
                    line: id,
                    q,
                    r,
                    order0: p0.z,
                    order1,
                    location: p0.z + order1,
                    sign: p0.sign,
                    regular: RegularParameter::Residue(residue),
                    kind,
                    low_confidence: low,
                });
            }
        }
    }
    Ok(out)
}

/// Minimal-cost assignment (Hungarian algorithm) of rows to columns for a
/// rectangular cost matrix with `rows ≤ cols`.
fn assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = if n == 0 { 0 } else { cost[0].len() };
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Minimal-cost matching of predictions to observations with distances
/// above `cap` left unmatched.
pub fn match_zeros(predictions: &[ZeroPrediction], observations: &[ZeroObservation], cap: f64) -> ComparisonReport {
    let np = predictions.len();
    let no = observations.len();
    if np == 0 || no == 0 {
        return ComparisonReport {
            unmatched_predictions: (0..np).collect(),
            unmatched_observations: (0..no).collect(),
            ..Default::default()
        };
    }
    let big = cap * 1e6 + 1.0;
    let dist = |i: usize, j: usize| (predictions[i].location - observations[j].location).norm();
    let transpose = np > no;
    let (rows, cols) = if transpose { (no, np) } else { (np, no) };
    let cost: Vec<Vec<f64>> = (0..rows)
        .map(|a| {
            (0..cols)
                .map(|b| {
                    let d = if transpose { dist(b, a) } else { dist(a, b) };
                    if d <= cap {
                        d
                    } else {
                        big
                    }
                })
                .collect()
        })
        .collect();
    let assign = assignment(&cost);
    let mut matched = Vec::new();
    let mut used_p = vec![false; np];
    let mut used_o = vec![false; no];
    for (a, &b) in assign.iter().enumerate() {
        if b == usize::MAX {
            continue;
        }
        let (pi, oi) = if transpose { (b, a) } else { (a, b) };
        let d = dist(pi, oi);
        if d <= cap {
            matched.push(MatchedPair { prediction: pi, observation: oi, residual: d });
            used_p[pi] = true;
            used_o[oi] = true;
        }
    }
    matched.sort_by_key(|m| m.prediction);
    let max_residual = matched.iter().map(|m| m.residual).fold(0.0, f64::max);
    ComparisonReport {
        matched,
        unmatched_predictions: (0..np).filter(|&i| !used_p[i]).collect(),
        unmatched_observations: (0..no).filter(|&i| !used_o[i]).collect(),
        max_residual,
        fitted_order: None,
    }
}

/// Least-squares order `p` in `residual ~ |λ|^{-p}`.
pub fn fit_order(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(l, r)| *l > 0.0 && *r > 0.0).map(|(l, r)| (l.ln(), r.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(-sxy / sxx)
}

/// Point between the pair `(k0, -k0)` where the two solutions are compared.
fn matching_point(cuts: &CutPlane, k0: i32) -> Result<Complex64> {
    let a = cuts.turning_point(k0).ok_or(Error::InvalidPair(k0))?.location;
    let b = cuts.turning_point(-k0).ok_or(Error::InvalidPair(k0))?.location;
    Ok((a + b) * 0.5)
}

/// Normalized Wronskian of `ψ_{k0}` and `ψ_{-k0}` at `λ`.
pub fn quantization_residual(pot: &RescaledPotential, k0: i32, lambda: Complex64) -> Result<Complex64> {
    let p = pot.with_lambda(lambda)?;
    let g = build_graph(&p)?;
    let series = build_series(&p, &g.cuts, DEFAULT_ORDER)?;
    let hub = matching_point(&g.cuts, k0)?;
    let a = FundamentalSolution::new(&g, &series, k0, hub)?;
    let b = FundamentalSolution::new(&g, &series, -k0, hub)?;
    Ok(normalized_wronskian(&a.hub().state, &b.hub().state, local_scale(&p, hub)))
}

/// `½∮ Z_k dy` on an ellipse enclosing the pair `(k0, -k0)` only.
fn pair_z_correction(pot: &RescaledPotential, k0: i32, order: usize) -> Result<Option<Complex64>> {
    let cuts = CutPlane::new(pot)?;
    let a = cuts.turning_point(k0).ok_or(Error::InvalidPair(k0))?.location;
    let b = cuts.turning_point(-k0).ok_or(Error::InvalidPair(k0))?.location;
    let c = (a + b) * 0.5;
    let half = (b - a) * 0.5;
    let others: Vec<Complex64> =
        cuts.turning_points.iter().filter(|t| t.label != k0 && t.label != -k0).map(|t| t.location).collect();
    let series = build_series(pot, &cuts, order)?;
    let lambda = pot.lambda().value;
    for minor in [0.5, 0.35, 0.2] {
        let pts: Vec<Complex64> = (0..512)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / 512.0;
                c + half * Complex64::new(1.4 * t.cos(), minor * t.sin())
            })
            .collect();
        let clear = pts.iter().all(|p| others.iter().all(|o| (p - o).norm() > 0.1));
        if !clear {
            continue;
        }
        let mut sw = cuts.sqrt_w_plane(pts[0]);
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..512 {
            let z = pts[j];
            let dz = pts[(j + 1) % 512] - pts[(j + 511) % 512];
            let v = cuts.sqrt_w_plane(z);
            sw = if (v - sw).norm() <= (v + sw).norm() { v } else { -v };
            acc += series.eval(z, sw)?.z_total(1.0, lambda) * dz * 0.5;
        }
        return Ok(Some(acc * 0.5));
    }
    Ok(None)
}

/// Quantized `λ_s` for `s` in `s_range` (standard configuration, real `λ`).
pub fn quantize(pot: &RescaledPotential, k0: i32, s_range: std::ops::RangeInclusive<u32>) -> Result<Vec<QuantizationResult>> {
    let n = pot.degree();
    let limit = RescaledPotential::limit(n, pot.alpha_choice(), Complex64::new(1.0, 0.0))?;
    let inner = inner_action(&CutPlane::new(&limit)?, k0)?;
    let mut out = Vec::new();
    for s in s_range {
        let leading = (s as f64 + 0.5) * PI / inner.norm();
        let mut x0 = Complex64::new(leading, 0.0);
        let mut f0 = quantization_residual(pot, k0, x0)?;
        let mut x1 = Complex64::new(leading * (1.0 + 1e-3) + 1e-3, 0.0);
        let mut f1 = quantization_residual(pot, k0, x1)?;
        let mut iterations = 0;
        while f1.norm() > 1e-12 && iterations < 50 {
            iterations += 1;
            let den = f1 - f0;
            if den.norm() == 0.0 {
                break;
            }
            let mut x2 = x1 - f1 * (x1 - x0) / den;
            if pot.is_standard() || pot.is_limit() {
                x2.im = 0.0;
            }
            if (x2 - x1).norm() < 1e-14 * x1.norm() {
                x0 = x1;
                f0 = f1;
                x1 = x2;
                f1 = quantization_residual(pot, k0, x1)?;
                break;
            }
            x0 = x1;
            f0 = f1;
            x1 = x2;
            f1 = quantization_residual(pot, k0, x1)?;
        }
        let _ = f0;
        if f1.norm() > 1e-8 {
            return Err(Error::QuantizationFailure { s, last: x1 });
        }
        let z_correction = pair_z_correction(&pot.with_lambda(x1)?, k0, DEFAULT_ORDER)?;
        out.push(QuantizationResult { s, k0, leading, refined: x1, residual: f1.norm(), z_correction, iterations });
    }
    Ok(out)
}

/// Exceptional set of `ψ_k` at a quantized `λ`: for `k = ±k0` the lines
/// common to `∂D_{k0}` and `∂D_{-k0}`; other solutions unchanged.
pub fn quantized_zero_redistribution(
    result: &QuantizationResult,
    graph: &StokesGraph,
    k: i32,
    eps: f64,
) -> Result<ExceptionalSet> {
    let lambda = graph.potential.lambda().value;
    if (lambda - result.refined).norm() > 1e-9 * (1.0 + lambda.norm()) {
        return Err(Error::NotQuantized(lambda));
    }
    let own = exceptional_set(graph, k, eps)?;
    if k != result.k0 && k != -result.k0 {
        return Ok(own);
    }
    let other = exceptional_set(graph, -k, eps)?;
    let keep: Vec<usize> = other.all_line_ids();
    let mut set = own.clone();
    for l in set.lines.iter_mut() {
        l.line_ids.retain(|id| keep.contains(id));
    }
    set.lines.retain(|l| !l.line_ids.is_empty());
    set.excluded_sector = None;
    set.vicinity.clear();
    for l in &set.lines {
        for &id in &l.line_ids {
            for side in [-1.0, 1.0] {
                set.vicinity.push(offset_polyline(&graph.lines[id].points, side * eps));
            }
        }
    }
    Ok(set)
}

/// Tube rectangle covering the part of line `id` with action in `[t0, t1]`
/// from `root`, padded by `pad`.
pub fn line_box(graph: &StokesGraph, id: usize, root: i32, t0: f64, t1: f64, pad: f64) -> Result<Option<Rect>> {
    let mut pts = Vec::new();
    let steps = 16;
    for j in 0..=steps {
        let t = t0 + (t1 - t0) * j as f64 / steps as f64;
        if let Some(p) = line_point(graph, id, root, t)? {
            pts.push(p.z);
        }
    }
    if pts.is_empty() {
        return Ok(None);
    }
    let x0 = pts.iter().map(|p| p.re).fold(f64::INFINITY, f64::min) - pad;
    let x1 = pts.iter().map(|p| p.re).fold(f64::NEG_INFINITY, f64::max) + pad;
    let y0 = pts.iter().map(|p| p.im).fold(f64::INFINITY, f64::min) - pad;
    let y1 = pts.iter().map(|p| p.im).fold(f64::NEG_INFINITY, f64::max) + pad;
    Ok(Some(Rect::new(x0, y0, x1, y1)))
}

/// Whether line `id` ends at infinity.
pub fn is_infinite(graph: &StokesGraph, id: usize) -> bool {
    matches!(graph.lines[id].terminal, Terminal::Infinity { .. })
}
