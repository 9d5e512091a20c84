//! Stokes lines `Re(λ ∫_{z_t}^z √W dy) = 0`, Stokes graphs, sector labels,
//! exceptional line sets and the critical phase of a perturbed potential.

use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::branchcut::{action_integral_from, action_integral_with, ComplexPath, CutPlane};
use crate::error::{Error, Result};
use crate::potential::{cpow, limit_roots, turning_points, AlphaChoice, RescaledPotential, TurningPoint};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const GL5_X: [f64; 5] = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
const GL5_W: [f64; 5] =
    [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];

/// Tracing controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSettings {
    /// Lines stop once `|z| ≥ r_max`.
    pub r_max: f64,
    /// A line entering this radius around another turning point ends there.
    pub capture_radius: f64,
    /// Distance of the first sample from the origin turning point.
    pub initial_offset: f64,
    /// Position tolerance of a single predictor step.
    pub step_tol: f64,
    /// Largest distance between a polyline chord and the exact line.
    pub chord_tol: f64,
    pub max_steps: usize,
}

impl Default for TraceSettings {
    fn default() -> Self {
        Self { r_max: 8.0, capture_radius: 1e-4, initial_offset: 1e-6, step_tol: 1e-7, chord_tol: 5e-7, max_steps: 400_000 }
    }
}

/// Where a Stokes line ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Terminal {
    /// Reached `|z| = r_max` at `angle`; `direction` indexes the asymptotic
    /// Stokes directions of the graph.
    Infinity { angle: f64, direction: usize },
    /// Captured by the turning point `label`, arriving along its emission
    /// `emission`.
    TurningPoint { label: i32, emission: usize },
}

/// A traced Stokes line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StokesLine {
    pub origin: i32,
    pub emission: usize,
    /// Initial tangent angle at the origin.
    pub emission_angle: f64,
    pub points: Vec<Complex64>,
    /// `λ ∫_{z_t}^{z} √W dy` at every sample (purely imaginary up to the
    /// projection residual).
    pub actions: Vec<Complex64>,
    /// `√W` at every sample, continued along the line.
    pub sqrt_w: Vec<Complex64>,
    pub terminal: Terminal,
    pub arclength: f64,
    /// Largest `|Re(λ∫)|` over the samples.
    pub max_residual: f64,
    /// Turning point passed within ten capture radii without capture.
    pub near_miss: Option<i32>,
}

impl StokesLine {
    pub fn is_inner(&self) -> bool {
        matches!(self.terminal, Terminal::TurningPoint { .. })
    }

    /// Sign of `Im(λ∫)` along the line.
    pub fn action_sign(&self) -> f64 {
        let last = self.actions.last().copied().unwrap_or_default();
        if last.im >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Minimum distance from `z` to the polyline.
    pub fn distance(&self, z: Complex64) -> f64 {
        self.points.windows(2).map(|w| crate::branchcut::segment_distance(w[0], w[1], z)).fold(f64::INFINITY, f64::min)
    }

    /// Point, `√W` and action at which `|Im(λ∫)| = target`, by linear
    /// interpolation in the monotone imaginary action followed by Newton
    /// refinement on the analytic action. Returns `None` beyond the traced
    /// part.
    pub fn locate_action(&self, target: f64) -> Option<(Complex64, Complex64, Complex64)> {
        let s = self.action_sign();
        let t: Vec<f64> = self.actions.iter().map(|a| a.im * s).collect();
        let j = t.windows(2).position(|w| w[0] <= target && target <= w[1])?;
        let frac = if t[j + 1] > t[j] { (target - t[j]) / (t[j + 1] - t[j]) } else { 0.0 };
        let z = self.points[j] + (self.points[j + 1] - self.points[j]) * frac;
        let sw = self.sqrt_w[j] + (self.sqrt_w[j + 1] - self.sqrt_w[j]) * frac;
        Some((z, sw, self.actions[j] + (self.actions[j + 1] - self.actions[j]) * frac))
    }
}

/// A projected sector between two consecutive asymptotic Stokes directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub label: i32,
    /// Index of the asymptotic direction at the clockwise edge.
    pub index: usize,
    /// Asymptotic angular interval `(start, end)`, `end > start`.
    pub interval: (f64, f64),
    pub center: f64,
    /// Line ids bounding the sector at its clockwise and counter-clockwise
    /// edges.
    pub boundary: (usize, usize),
    /// `σ` with `Re(σ λ ∫_{z_a}^z √W) < 0` inside the sector, relative to
    /// the branch of `√W` continued from the cut-plane value at the sector
    /// center on `|z| = r_max`.
    pub signature: f64,
    /// Turning point used as the lower limit of the exponent.
    pub anchor: i32,
}

/// A complete Stokes graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StokesGraph {
    pub potential: RescaledPotential,
    pub cuts: CutPlane,
    pub turning_points: Vec<TurningPoint>,
    /// Line `3·i + e` is emission `e` of turning point `i`.
    pub lines: Vec<StokesLine>,
    pub sectors: Vec<Sector>,
    /// Asymptotic Stokes directions, increasing in `[0, 2π)`.
    pub directions: Vec<f64>,
    pub critical: bool,
    pub inner_pairs: Vec<(i32, i32)>,
    pub settings: TraceSettings,
}

fn wrap(a: f64) -> f64 {
    a.rem_euclid(2.0 * PI)
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = wrap(a - b);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

/// Emission angles at a simple turning point: `arg λ + ½ arg W' + 3θ/2 = π/2 (mod π)`.
pub fn emission_angles(lambda: Complex64, w_prime: Complex64) -> [f64; 3] {
    let base = 2.0 / 3.0 * (PI / 2.0 - lambda.arg() - 0.5 * w_prime.arg());
    let mut out = [0.0; 3];
    for (j, o) in out.iter_mut().enumerate() {
        *o = wrap(base + 2.0 * PI * j as f64 / 3.0);
    }
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

/// Asymptotic Stokes directions of `Re(λ c z^{(n+2)/2}) = 0`, `c = (-iα)^{n/2}`.
pub fn asymptotic_directions(n: usize, alpha: Complex64, lambda: Complex64) -> Vec<f64> {
    let m = n as f64 + 2.0;
    let c = cpow(-I * alpha, n as f64 / 2.0);
    let mut out: Vec<f64> = (0..n + 2).map(|j| wrap(2.0 / m * (PI / 2.0 - lambda.arg() - c.arg() + j as f64 * PI))).collect();
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

/// Sector label of the sector centered at `center` in the unrotated (`β = 0`,
/// limit) configuration.
pub fn standard_sector_label(n: usize, alpha: AlphaChoice, center: f64) -> i32 {
    let roots = limit_roots(n, alpha);
    let mut dist: Vec<(f64, i32, Complex64)> = roots.iter().map(|(k, z)| (angle_diff(z.arg(), center).abs(), *k, *z)).collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ni = n as i32;
    if (dist[0].0 - dist[1].0).abs() < 1e-9 {
        // Sector shared by a pair.
        if Complex64::from_polar(1.0, center).im > 0.0 {
            return 0;
        }
        return if n % 2 == 1 { (ni + 1) / 2 } else { (ni + 2) / 2 };
    }
    let (_, k, _) = dist[0];
    let left = Complex64::from_polar(1.0, center).re < 0.0;
    match alpha {
        AlphaChoice::One if k == 0 => {
            let base = if n % 2 == 1 { (ni + 3) / 2 } else { (ni + 2) / 2 };
            if left {
                base
            } else {
                -base
            }
        }
        AlphaChoice::One if n.is_multiple_of(2) && k == ni / 2 => {
            if left {
                ni / 2
            } else {
                -ni / 2
            }
        }
        _ => k,
    }
}

/// Both rotations `ω = ½(arg z_i + arg z_j ± π)` that bring the chord
/// `z_i z_j` back to a horizontal standard position.
pub fn standard_rotations(zi: Complex64, zj: Complex64) -> [f64; 2] {
    let m = 0.5 * (zi.arg() + zj.arg());
    [m + PI / 2.0, m - PI / 2.0]
}

struct Tracer<'a> {
    pot: &'a RescaledPotential,
    cuts: &'a CutPlane,
    tps: &'a [TurningPoint],
    settings: TraceSettings,
}

impl<'a> Tracer<'a> {
    fn continue_sqrt(&self, z: Complex64, prev: Complex64) -> Complex64 {
        let v = self.cuts.sqrt_w_plane(z);
        if (v - prev).norm() <= (v + prev).norm() {
            v
        } else {
            -v
        }
    }

    fn direction(&self, lambda: Complex64, sw: Complex64, sign: f64) -> Complex64 {
        let f = lambda * sw;
        I * f.conj() / f.norm() * sign
    }

    /// `λ ∫_a^b √W` by 5-point Gauss–Legendre with continuation from `sa`.
    fn step_action(&self, a: Complex64, b: Complex64, sa: Complex64) -> (Complex64, Complex64) {
        let lambda = self.pot.lambda().value;
        let half = (b - a) * 0.5;
        let mid = (a + b) * 0.5;
        let mut prev = sa;
        let mut acc = Complex64::new(0.0, 0.0);
        for (x, w) in GL5_X.iter().zip(GL5_W) {
            let z = mid + half * *x;
            prev = self.continue_sqrt(z, prev);
            acc += prev * w;
        }
        let sb = self.continue_sqrt(b, prev);
        (lambda * acc * half, sb)
    }

    fn trace(&self, origin_idx: usize, angle: f64) -> Result<StokesLine> {
        let st = self.settings;
        let lambda = self.pot.lambda().value;
        let origin = self.tps[origin_idx];
        let zt = origin.location;
        let mut z = zt + Complex64::from_polar(st.initial_offset, angle);
        // Initial branch: cut-plane value at a point slightly off any cut.
        let mut sw = self.cuts.sqrt_w_plane(z);
        if self.cuts.on_cut(z, 1e-15).is_some() {
            let probe = zt + Complex64::from_polar(st.initial_offset, angle + 1e-6);
            sw = self.cuts.sqrt_w_plane(probe);
        }
        let path = ComplexPath { points: vec![zt, z], crossings: vec![] };
        let a0 = action_integral_from(self.cuts, &path, Some(sw), 1e-16)?;
        let mut action = lambda * a0.value;
        let u0 = self.direction(lambda, sw, 1.0);
        let sign = if (u0 * Complex64::from_polar(1.0, -angle)).re >= 0.0 { 1.0 } else { -1.0 };
        // Project the first point onto the line.
        let f = lambda * sw;
        let dz = -action.re * f.conj() / f.norm_sqr();
        z += dz;
        action += f * dz;

        let mut points = vec![zt, z];
        let mut actions = vec![Complex64::new(0.0, 0.0), action];
        let mut sqrts = vec![Complex64::new(0.0, 0.0), sw];
        let mut arclength = (z - zt).norm();
        let mut max_res: f64 = action.re.abs();
        let mut h = st.initial_offset;
        let mut near_miss: Option<(i32, f64)> = None;
        for _ in 0..st.max_steps {
            // Step bound from the distance to every turning point.
            let mut dmin = f64::INFINITY;
            for (j, t) in self.tps.iter().enumerate() {
                let d = (z - t.location).norm();
                if j != origin_idx && d < st.capture_radius {
                    let emission = arrival_emission(self.pot, t, z, lambda);
                    points.push(t.location);
                    actions.push(action);
                    sqrts.push(Complex64::new(0.0, 0.0));
                    arclength += d;
                    return Ok(StokesLine {
                        origin: origin.label,
                        emission: 0,
                        emission_angle: angle,
                        points,
                        actions,
                        sqrt_w: sqrts,
                        terminal: Terminal::TurningPoint { label: t.label, emission },
                        arclength,
                        max_residual: max_res,
                        near_miss: None,
                    });
                }
                if j != origin_idx && d < 10.0 * st.capture_radius {
                    near_miss = Some((t.label, d));
                }
                dmin = dmin.min(d);
            }
            if z.norm() >= st.r_max {
                let ang = wrap(z.arg());
                return Ok(StokesLine {
                    origin: origin.label,
                    emission: 0,
                    emission_angle: angle,
                    points,
                    actions,
                    sqrt_w: sqrts,
                    terminal: Terminal::Infinity { angle: ang, direction: usize::MAX },
                    arclength,
                    max_residual: max_res,
                    near_miss: near_miss.map(|x| x.0),
                });
            }
            let h_max = (0.4 * dmin).min(0.05 * (1.0 + z.norm()));
            h = h.min(h_max);
            loop {
                let u1 = self.direction(lambda, sw, sign);
                let zm = z + u1 * (0.5 * h);
                let swm = self.continue_sqrt(zm, sw);
                let u2 = self.direction(lambda, swm, sign);
                let zp = z + u2 * h;
                let (da, swp) = self.step_action(z, zp, sw);
                let ap = action + da;
                let fp = lambda * swp;
                let dev = ap.re.abs() / fp.norm();
                if dev > st.step_tol && h > 1e-14 {
                    h *= 0.5;
                    continue;
                }
                let dz = -ap.re * fp.conj() / fp.norm_sqr();
                let zc = zp + dz;
                let zmc = (z + zc) * 0.5;
                let (dam, swmc) = self.step_action(z, zmc, sw);
                let sag = (action + dam).re.abs() / (lambda * swmc).norm();
                if sag > st.chord_tol && h > 1e-14 {
                    h *= 0.5;
                    continue;
                }
                let (dac, swc) = self.step_action(zp, zc, swp);
                action = ap + dac;
                arclength += (zc - z).norm();
                z = zc;
                sw = swc;
                max_res = max_res.max(action.re.abs());
                points.push(z);
                actions.push(action);
                sqrts.push(sw);
                if dev < 0.1 * st.step_tol && sag < 0.25 * st.chord_tol {
                    h = (h * 1.5).min(h_max.max(h));
                }
                break;
            }
        }
        Err(Error::TracingStalled(z))
    }
}

/// Emission index at `t` whose direction best matches the arrival from `z`.
fn arrival_emission(pot: &RescaledPotential, t: &TurningPoint, z: Complex64, lambda: Complex64) -> usize {
    let (_, wp, _) = pot.w_derivs(t.location);
    let angs = emission_angles(lambda, wp);
    let dir = (z - t.location).arg();
    (0..3).min_by(|&a, &b| angle_diff(angs[a], dir).abs().total_cmp(&angle_diff(angs[b], dir).abs())).unwrap()
}

/// `λ ∫_a^b √W` by composite 5-point Gauss–Legendre with the branch
/// continued from `√W(a) = sa`; returns the increment and `√W(b)`.
pub fn segment_action(cuts: &CutPlane, lambda: Complex64, a: Complex64, b: Complex64, sa: Complex64) -> (Complex64, Complex64) {
    let dmin = cuts.turning_points.iter().map(|t| (a - t.location).norm()).fold(f64::INFINITY, f64::min);
    let pieces = ((b - a).norm() / (0.2 * dmin.max(1e-9))).ceil().clamp(1.0, 1e4) as usize;
    let mut acc = Complex64::new(0.0, 0.0);
    let mut prev = sa;
    let cont = |z: Complex64, prev: Complex64| {
        let v = cuts.sqrt_w_plane(z);
        if (v - prev).norm() <= (v + prev).norm() {
            v
        } else {
            -v
        }
    };
    for k in 0..pieces {
        let pa = a + (b - a) * (k as f64 / pieces as f64);
        let pb = a + (b - a) * ((k + 1) as f64 / pieces as f64);
        let half = (pb - pa) * 0.5;
        let mid = (pa + pb) * 0.5;
        let mut part = Complex64::new(0.0, 0.0);
        for (x, w) in GL5_X.iter().zip(GL5_W) {
            prev = cont(mid + half * *x, prev);
            part += prev * w;
        }
        prev = cont(pb, prev);
        acc += part * half;
    }
    (lambda * acc, prev)
}

/// A point on a Stokes line located by its action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinePoint {
    pub z: Complex64,
    /// `√W(z)` continued along the line.
    pub sqrt_w: Complex64,
    /// `λ ∫_{z_root}^{z} √W dy`.
    pub action: Complex64,
    /// Sign of `Im(λ∫)` on the line as seen from the root.
    pub sign: f64,
}

/// Point of line `id` where `|Im(λ∫_{z_root}^{z} √W)| = t`, with `root`
/// either end of the line. `None` beyond the traced part.
pub fn line_point(graph: &StokesGraph, id: usize, root: i32, t: f64) -> Result<Option<LinePoint>> {
    let line = &graph.lines[id];
    let lambda = graph.potential.lambda().value;
    let s = line.action_sign();
    let reverse = match line.terminal {
        Terminal::TurningPoint { label, .. } if label == root && line.origin != root => true,
        _ if line.origin == root => false,
        _ => return Err(Error::InvalidArgument(format!("line {id} does not touch turning point {root}"))),
    };
    let end = *line.actions.last().unwrap();
    let tau = if reverse { s * end.im - t } else { t };
    if tau < 0.0 {
        return Ok(None);
    }
    let ts: Vec<f64> = line.actions.iter().map(|a| a.im * s).collect();
    let Some(j) = ts.windows(2).position(|w| w[0] <= tau && tau <= w[1]) else {
        return Ok(None);
    };
    // Work from the vertex farther from any turning point endpoint.
    let base = if j == 0 { j + 1 } else { j };
    let (p, ap, sp) = (line.points[base], line.actions[base], line.sqrt_w[base]);
    let frac = if ts[j + 1] > ts[j] { (tau - ts[j]) / (ts[j + 1] - ts[j]) } else { 0.0 };
    let mut z = line.points[j] + (line.points[j + 1] - line.points[j]) * frac;
    let target = Complex64::new(0.0, s * tau);
    let mut sw = sp;
    let mut a = ap;
    for _ in 0..50 {
        let (da, swz) = segment_action(&graph.cuts, lambda, p, z, sp);
        a = ap + da;
        sw = swz;
        let f = a - target;
        let step = f / (lambda * sw);
        z -= step;
        if step.norm() < 1e-14 * (1.0 + z.norm()) {
            let (da, swz) = segment_action(&graph.cuts, lambda, p, z, sp);
            a = ap + da;
            sw = swz;
            break;
        }
    }
    let (action, sign) = if reverse { (a - end, -s) } else { (a, s) };
    Ok(Some(LinePoint { z, sqrt_w: sw, action, sign }))
}

/// Trace emission `emission` (0, 1, 2 in increasing angle) of `origin`.
pub fn trace_line(
    pot: &RescaledPotential,
    cuts: &CutPlane,
    origin: i32,
    emission: usize,
    settings: TraceSettings,
) -> Result<StokesLine> {
    let tps = &cuts.turning_points;
    let idx = tps.iter().position(|t| t.label == origin).ok_or(Error::InvalidPair(origin))?;
    let (_, wp, _) = pot.w_derivs(tps[idx].location);
    let angs = emission_angles(pot.lambda().value, wp);
    let tracer = Tracer { pot, cuts, tps, settings };
    let mut line = tracer.trace(idx, angs[emission])?;
    line.origin = origin;
    line.emission = emission;
    Ok(line)
}

impl StokesGraph {
    pub fn line(&self, origin: i32, emission: usize) -> Option<&StokesLine> {
        let i = self.turning_points.iter().position(|t| t.label == origin)?;
        self.lines.get(3 * i + emission)
    }

    pub fn line_id(&self, origin: i32, emission: usize) -> Option<usize> {
        let i = self.turning_points.iter().position(|t| t.label == origin)?;
        Some(3 * i + emission)
    }

    pub fn sector(&self, label: i32) -> Option<&Sector> {
        self.sectors.iter().find(|s| s.label == label)
    }

    pub fn tp_index(&self, label: i32) -> Option<usize> {
        self.turning_points.iter().position(|t| t.label == label)
    }

    pub fn turning_point(&self, label: i32) -> Option<&TurningPoint> {
        self.turning_points.iter().find(|t| t.label == label)
    }

    /// Number of distinct inner lines.
    pub fn inner_line_count(&self) -> usize {
        self.inner_pairs.len()
    }

    /// Sector whose asymptotic interval contains the direction `angle`.
    pub fn sector_at_angle(&self, angle: f64) -> &Sector {
        let a = wrap(angle);
        self.sectors
            .iter()
            .find(|s| {
                let width = s.interval.1 - s.interval.0;
                wrap(a - s.interval.0) < width
            })
            .unwrap_or(&self.sectors[0])
    }
}

/// Trace all `3n` lines and assemble the graph with default settings.
pub fn build_graph(pot: &RescaledPotential) -> Result<StokesGraph> {
    build_graph_with(pot, TraceSettings::default())
}

pub fn build_graph_with(pot: &RescaledPotential, settings: TraceSettings) -> Result<StokesGraph> {
    let tps = turning_points(pot)?;
    let cuts = CutPlane::from_turning_points(pot, tps.clone());
    let n = pot.degree();
    let lambda = pot.lambda().value;
    let mut lines = Vec::with_capacity(3 * n);
    for t in &tps {
        for e in 0..3 {
            lines.push(trace_line(pot, &cuts, t.label, e, settings)?);
        }
    }
    let directions = asymptotic_directions(n, pot.alpha(), lambda);
    let spacing = 2.0 * PI / (n as f64 + 2.0);
    for line in lines.iter_mut() {
        if let Terminal::Infinity { angle, direction } = &mut line.terminal {
            let (j, d) = directions
                .iter()
                .enumerate()
                .map(|(j, &d)| (j, angle_diff(*angle, d).abs()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            if d > 0.3 * spacing {
                return Err(Error::Topology { found: usize::MAX, expected: n + 2 });
            }
            *direction = j;
        }
    }
    // Make inner connections symmetric.
    let mut inner_pairs = BTreeSet::new();
    for i in 0..lines.len() {
        if let Terminal::TurningPoint { label, emission } = lines[i].terminal {
            let a = lines[i].origin;
            let (lo, hi) = if a > label { (a, label) } else { (label, a) };
            inner_pairs.insert((lo, hi));
            let j = 3 * tps.iter().position(|t| t.label == label).unwrap() + emission;
            if !lines[j].is_inner() {
                let e = lines[i].emission;
                lines[j].terminal = Terminal::TurningPoint { label: a, emission: e };
            }
        }
    }
    let critical = !inner_pairs.is_empty();

    // Sectors: gaps between consecutive asymptotic directions.
    let beta = lambda.arg();
    let shift = -2.0 * beta / (n as f64 + 2.0);
    let alpha_choice = pot.alpha_choice();
    let limit_dirs = asymptotic_directions(n, pot.alpha(), Complex64::new(1.0, 0.0));
    let mut sectors = Vec::with_capacity(n + 2);
    for m in 0..n + 2 {
        let start = directions[m];
        let end = if m + 1 < n + 2 { directions[m + 1] } else { directions[0] + 2.0 * PI };
        let center = wrap(0.5 * (start + end));
        // Undo the β-rotation to find the matching standard sector.
        let std_center = wrap(center - shift);
        let nearest_std = limit_dirs
            .iter()
            .map(|d| wrap(d + spacing / 2.0))
            .min_by(|a, b| angle_diff(*a, std_center).abs().total_cmp(&angle_diff(*b, std_center).abs()))
            .unwrap();
        let label = standard_sector_label(n, alpha_choice, nearest_std);
        let boundary = sector_boundary(&lines, m, (m + 1) % (n + 2), center);
        sectors.push(Sector { label, index: m, interval: (start, end), center, boundary, signature: 0.0, anchor: 0 });
    }
    let mut labels: Vec<i32> = sectors.iter().map(|s| s.label).collect();
    labels.sort();
    labels.dedup();
    if labels.len() != n + 2 {
        return Err(Error::Topology { found: labels.len(), expected: n + 2 });
    }
    let mut graph = StokesGraph {
        potential: pot.clone(),
        cuts,
        turning_points: tps,
        lines,
        sectors,
        directions,
        critical,
        inner_pairs: inner_pairs.into_iter().collect(),
        settings,
    };
    for m in 0..n + 2 {
        let anchor = sector_anchor(&graph, m);
        let sigma = sector_signature(&graph, m, anchor)?;
        graph.sectors[m].anchor = anchor;
        graph.sectors[m].signature = sigma;
    }
    Ok(graph)
}

/// Lines adjacent to the sector at its two edges.
fn sector_boundary(lines: &[StokesLine], lo_dir: usize, hi_dir: usize, center: f64) -> (usize, usize) {
    let mut lo = (usize::MAX, f64::INFINITY);
    let mut hi = (usize::MAX, f64::INFINITY);
    for (i, l) in lines.iter().enumerate() {
        if let Terminal::Infinity { angle, direction } = l.terminal {
            let d = angle_diff(angle, center).abs();
            if direction == lo_dir && d < lo.1 {
                lo = (i, d);
            }
            if direction == hi_dir && d < hi.1 {
                hi = (i, d);
            }
        }
    }
    (lo.0, hi.0)
}

/// Turning point bounding the sector: the common origin of its edge lines,
/// otherwise the edge origin with the larger label.
fn sector_anchor(graph: &StokesGraph, m: usize) -> i32 {
    let (a, b) = graph.sectors[m].boundary;
    let la = graph.lines.get(a).map(|l| l.origin);
    let lb = graph.lines.get(b).map(|l| l.origin);
    match (la, lb) {
        (Some(x), Some(y)) if x == y => x,
        (Some(x), Some(y)) => {
            let label = graph.sectors[m].label;
            if x == label || y == label {
                label
            } else {
                x.max(y)
            }
        }
        (Some(x), None) | (None, Some(x)) => x,
        _ => graph.turning_points[0].label,
    }
}

/// Sample point inside sector `m` at radius `r`.
pub fn sector_point(graph: &StokesGraph, label: i32, r: f64) -> Option<Complex64> {
    let s = graph.sector(label)?;
    let mut z = Complex64::from_polar(r, s.center);
    if graph.cuts.on_cut(z, 1e-9).is_some() {
        z = Complex64::from_polar(r, s.center + 1e-3);
    }
    Some(z)
}

/// `λ ∫_{z_a}^{z} √W` along the straight segment, with the branch equal to
/// the cut-plane value at `z`.
pub fn exponent_from(graph: &StokesGraph, anchor: i32, z: Complex64) -> Result<Complex64> {
    let za = graph.turning_point(anchor).ok_or(Error::InvalidPair(anchor))?.location;
    let path = ComplexPath::new(&graph.cuts, vec![z, za])?;
    let end_branch = graph.cuts.sqrt_w_plane(z);
    let a = action_integral_from(&graph.cuts, &path, Some(end_branch), 1e-12)?;
    Ok(-graph.potential.lambda().value * a.value)
}

fn sector_signature(graph: &StokesGraph, m: usize, anchor: i32) -> Result<f64> {
    let label = graph.sectors[m].label;
    let z = sector_point(graph, label, graph.settings.r_max).unwrap();
    let e = exponent_from(graph, anchor, z)?;
    Ok(if e.re > 0.0 { -1.0 } else { 1.0 })
}

/// Exceptional Stokes lines of one fundamental solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalLines {
    pub root: i32,
    pub line_ids: Vec<usize>,
}

/// The boundary `∂D_k` with its `ε`-vicinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalSet {
    pub solution: i32,
    pub eps: f64,
    pub lines: Vec<ExceptionalLines>,
    /// Sector cut off from `D_k` (critical graphs only).
    pub excluded_sector: Option<i32>,
    /// Offset polylines at distance `ε` on both sides of each exceptional line.
    pub vicinity: Vec<Vec<Complex64>>,
}

impl ExceptionalSet {
    pub fn all_line_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.lines.iter().flat_map(|l| l.line_ids.iter().copied()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn lines_of(&self, root: i32) -> &[usize] {
        self.lines.iter().find(|l| l.root == root).map(|l| l.line_ids.as_slice()).unwrap_or(&[])
    }

    /// Distance from `z` to the exceptional lines.
    pub fn distance(&self, graph: &StokesGraph, z: Complex64) -> f64 {
        self.all_line_ids().iter().map(|&i| graph.lines[i].distance(z)).fold(f64::INFINITY, f64::min)
    }

    /// `z ∈ D_{k,ε}` (restricted to `|z| < r_max`).
    pub fn in_reduced_domain(&self, graph: &StokesGraph, z: Complex64) -> bool {
        if z.norm() >= graph.settings.r_max {
            return false;
        }
        if graph.turning_points.iter().any(|t| (z - t.location).norm() <= self.eps) {
            return false;
        }
        if self.distance(graph, z) <= self.eps {
            return false;
        }
        if let Some(ex) = self.excluded_sector {
            if let Ok(faces) = faces(graph) {
                if let Some(f) = faces.iter().position(|f| f.contains(graph, z)) {
                    if faces[f].sector_labels.contains(&ex) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// A connected component of the complement of the graph inside `|z| < r_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    /// Corners `(turning point index, in-leg emission, out-leg emission)`.
    pub corners: Vec<(usize, usize, usize)>,
    /// Gaps between consecutive line endpoints on `|z| = r_max`, as
    /// indices into the sorted endpoint list.
    pub gaps: Vec<usize>,
    /// Labels of sectors whose center lies in one of the gaps.
    pub sector_labels: Vec<i32>,
    /// Closed boundary polygon.
    pub polygon: Vec<Complex64>,
}

impl Face {
    pub fn contains(&self, _graph: &StokesGraph, z: Complex64) -> bool {
        let p = &self.polygon;
        let mut inside = false;
        let mut j = p.len() - 1;
        for i in 0..p.len() {
            let (a, b) = (p[i], p[j]);
            if (a.im > z.im) != (b.im > z.im) && z.re < (b.re - a.re) * (z.im - a.im) / (b.im - a.im) + a.re {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

fn next_ccw(graph: &StokesGraph, tp: usize, e: usize) -> usize {
    let angs: Vec<f64> = (0..3).map(|j| graph.lines[3 * tp + j].emission_angle).collect();
    let mut best = (e, f64::INFINITY);
    for j in 0..3 {
        if j != e {
            let d = wrap(angs[j] - angs[e]);
            if d < best.1 {
                best = (j, d);
            }
        }
    }
    best.0
}

/// Faces of the graph from a boundary walk that keeps each face on the right.
pub fn faces(graph: &StokesGraph) -> Result<Vec<Face>> {
    let mut ends: Vec<(f64, usize)> = graph
        .lines
        .iter()
        .enumerate()
        .filter_map(|(i, l)| match l.terminal {
            Terminal::Infinity { angle, .. } => Some((angle, i)),
            _ => None,
        })
        .collect();
    ends.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = ends.len();
    let pos_of = |line: usize| ends.iter().position(|e| e.1 == line).unwrap();
    let tp_idx = |label: i32| graph.tp_index(label).unwrap();
    let mut gap_face = vec![usize::MAX; m];
    let mut out: Vec<Face> = Vec::new();
    let r = graph.settings.r_max;
    for g0 in 0..m {
        if gap_face[g0] != usize::MAX {
            continue;
        }
        let fid = out.len();
        let mut face = Face { corners: vec![], gaps: vec![], sector_labels: vec![], polygon: vec![] };
        let mut g = g0;
        let mut guard = 0;
        loop {
            guard += 1;
            if guard > 10 * m + 10 {
                return Err(Error::Topology { found: out.len(), expected: graph.sectors.len() });
            }
            gap_face[g] = fid;
            face.gaps.push(g);
            // Arc along the circle from endpoint g to g+1 (counter-clockwise).
            let a0 = ends[g].0;
            let mut a1 = ends[(g + 1) % m].0;
            if a1 <= a0 {
                a1 += 2.0 * PI;
            }
            // Walk inward along the line ending at the counter-clockwise end.
            // Then the face lies on the left of the ccw end line: traverse
            // from ends[g+1] is the cw side. We walk the boundary clockwise:
            // inward along A = ends[g], which keeps the face on the right.
            let _ = a1;
            let line_a = ends[g].1;
            let mut poly_piece: Vec<Complex64> = graph.lines[line_a].points.iter().rev().copied().collect();
            let mut tp = tp_idx(graph.lines[line_a].origin);
            let mut e_in = graph.lines[line_a].emission;
            let exit_line;
            loop {
                let e_out = next_ccw(graph, tp, e_in);
                face.corners.push((tp, e_in, e_out));
                let l = &graph.lines[3 * tp + e_out];
                match l.terminal {
                    Terminal::TurningPoint { label, emission } => {
                        poly_piece.extend(l.points.iter().copied());
                        tp = tp_idx(label);
                        e_in = emission;
                    }
                    Terminal::Infinity { .. } => {
                        poly_piece.extend(l.points.iter().copied());
                        exit_line = 3 * tp + e_out;
                        break;
                    }
                }
                if face.corners.len() > 3 * graph.turning_points.len() + 3 {
                    return Err(Error::Topology { found: out.len(), expected: graph.sectors.len() });
                }
            }
            face.polygon.extend(poly_piece);
            let p = pos_of(exit_line);
            let next_gap = (p + m - 1) % m;
            // Arc clockwise from the exit point to the previous endpoint.
            let b0 = ends[p].0;
            let mut b1 = ends[next_gap].0;
            if b1 >= b0 {
                b1 -= 2.0 * PI;
            }
            let steps = 8;
            for s in 1..steps {
                let t = b0 + (b1 - b0) * s as f64 / steps as f64;
                face.polygon.push(Complex64::from_polar(r * 1.001, t));
            }
            g = next_gap;
            if g == g0 {
                break;
            }
        }
        for s in &graph.sectors {
            for &gi in &face.gaps {
                let a0 = ends[gi].0;
                let width = wrap(ends[(gi + 1) % m].0 - a0);
                let width = if width == 0.0 { 2.0 * PI } else { width };
                if wrap(s.center - a0) < width && !face.sector_labels.contains(&s.label) {
                    // Only half-plane gaps carry a sector center.
                    let la = graph.lines[ends[gi].1].terminal;
                    let lb = graph.lines[ends[(gi + 1) % m].1].terminal;
                    if let (Terminal::Infinity { direction: da, .. }, Terminal::Infinity { direction: db, .. }) = (la, lb) {
                        if da != db {
                            face.sector_labels.push(s.label);
                        }
                    }
                }
            }
        }
        out.push(face);
    }
    Ok(out)
}

/// Exceptional lines `∂D_k` of the solution subdominant in sector `k`.
pub fn exceptional_set(graph: &StokesGraph, k: i32, eps: f64) -> Result<ExceptionalSet> {
    let sector = graph.sector(k).ok_or(Error::UnknownSector(k))?;
    let mut dmin = f64::INFINITY;
    for (i, a) in graph.turning_points.iter().enumerate() {
        for b in graph.turning_points.iter().skip(i + 1) {
            dmin = dmin.min((a.location - b.location).norm());
        }
    }
    if !(eps > 0.0) || eps >= 0.5 * dmin {
        return Err(Error::EpsilonTooLarge { eps, limit: 0.5 * dmin });
    }
    let faces = faces(graph)?;
    let start = faces.iter().position(|f| f.sector_labels.contains(&k)).ok_or(Error::UnknownSector(k))?;
    let ntp = graph.turning_points.len();
    let mut exceptional: Vec<Option<Vec<usize>>> = vec![None; ntp];
    let mut excluded_sector = None;
    let mut blocked_face = None;
    // Critical case: the anchor of S_k joined by an inner line to z_b.
    let anchor_idx = graph.tp_index(sector.anchor).unwrap();
    let face0 = &faces[start];
    let corner0 = face0.corners.iter().find(|c| c.0 == anchor_idx).copied();
    if let Some((_, ei, eo)) = corner0 {
        let third = (0..3).find(|&e| e != ei && e != eo).unwrap();
        if let Terminal::TurningPoint { label, .. } = graph.lines[3 * anchor_idx + third].terminal {
            let b = graph.tp_index(label).unwrap();
            exceptional[b] = Some(vec![3 * b, 3 * b + 1, 3 * b + 2]);
            // The half-plane face with a single corner at z_b.
            if let Some(fi) =
                faces.iter().position(|f| f.corners.len() == 1 && f.corners[0].0 == b && !f.sector_labels.is_empty())
            {
                blocked_face = Some(fi);
                excluded_sector = faces[fi].sector_labels.first().copied();
            }
        }
    }
    let mut seen = vec![false; faces.len()];
    seen[start] = true;
    if let Some(b) = blocked_face {
        seen[b] = true;
    }
    let mut queue = VecDeque::from([start]);
    while let Some(fi) = queue.pop_front() {
        for &(tp, ei, eo) in &faces[fi].corners {
            if exceptional[tp].is_none() {
                let third = (0..3).find(|&e| e != ei && e != eo).unwrap();
                exceptional[tp] = Some(vec![3 * tp + third]);
            }
            for (leg, want_out) in [(ei, true), (eo, false)] {
                // Face on the other side of `leg` at `tp`.
                let other = faces
                    .iter()
                    .position(|f| f.corners.iter().any(|&(t, a, b)| t == tp && if want_out { b == leg } else { a == leg }));
                if let Some(o) = other {
                    if !seen[o] {
                        seen[o] = true;
                        queue.push_back(o);
                    }
                }
            }
        }
    }
    let mut lines = Vec::new();
    for (i, ex) in exceptional.into_iter().enumerate() {
        if let Some(mut ids) = ex {
            // An inner line belongs to both of its end points.
            ids.sort();
            lines.push(ExceptionalLines { root: graph.turning_points[i].label, line_ids: ids });
        }
    }
    let mut vicinity = Vec::new();
    for l in &lines {
        for &id in &l.line_ids {
            let pts = &graph.lines[id].points;
            for side in [1.0, -1.0] {
                vicinity.push(offset_polyline(pts, side * eps));
            }
        }
    }
    Ok(ExceptionalSet { solution: k, eps, lines, excluded_sector, vicinity })
}

pub(crate) fn offset_polyline(pts: &[Complex64], d: f64) -> Vec<Complex64> {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let a = pts[i.saturating_sub(1)];
            let b = pts[(i + 1).min(n - 1)];
            let t = b - a;
            if t.norm() == 0.0 {
                pts[i]
            } else {
                pts[i] + t / t.norm() * Complex64::new(0.0, -d)
            }
        })
        .collect()
}

/// Leading-order critical phase `β` restoring the inner line between the
/// drifted pair `(k0, -k0)`.
pub fn critical_phase(pot: &RescaledPotential, k0: i32) -> Result<f64> {
    let n = pot.degree();
    let limit = RescaledPotential::limit(n, pot.alpha_choice(), Complex64::new(pot.lambda().modulus(), 0.0))?;
    let cuts = CutPlane::new(&limit)?;
    let za = cuts.turning_point(k0).ok_or(Error::InvalidPair(k0))?.location;
    let zb = cuts.turning_point(-k0).ok_or(Error::InvalidPair(k0))?.location;
    let path = ComplexPath::straight(&cuts, za, zb)?;
    let ik = action_integral_from(&cuts, &path, None, 1e-13)?.value;
    if ik.norm() == 0.0 {
        return Err(Error::InvalidPair(k0));
    }
    let moment = action_integral_with(&cuts, &path, None, 1e-13, |y| y.powu(n as u32 - 1) / cuts.sqrt_w_plane(y))?.value;
    let b1 = pot.primed(1);
    let re = (b1 * (-I * pot.alpha()).powu(n as u32 - 2) * moment).re;
    let beta = -re / (2.0 * n as f64 * I * ik) * pot.lambda().modulus().powf(-2.0 / (n as f64 + 2.0));
    Ok(beta.re)
}

/// `Re(λ ∫_{z_{k0}(λ)}^{z_{-k0}(λ)} √W dy)` with `λ = |λ| e^{iβ}`.
pub fn pair_residual(pot: &RescaledPotential, k0: i32, beta: f64) -> Result<f64> {
    let p = pot.with_lambda(Complex64::from_polar(pot.lambda().modulus(), beta))?;
    let cuts = CutPlane::new(&p)?;
    let a = crate::branchcut::pair_action(&cuts, k0)?;
    Ok((p.lambda().value * a.value).re)
}

/// Critical phase refined by secant iteration on [`pair_residual`],
/// started from [`critical_phase`].
pub fn critical_phase_refined(pot: &RescaledPotential, k0: i32, tol: f64) -> Result<f64> {
    let b0 = critical_phase(pot, k0)?;
    let mut x0 = b0;
    let mut f0 = pair_residual(pot, k0, x0)?;
    let mut x1 = if b0.abs() < 1e-10 { 1e-4 } else { 1.01 * b0 };
    let mut f1 = pair_residual(pot, k0, x1)?;
    for _ in 0..60 {
        if f1.abs() <= tol {
            return Ok(x1);
        }
        if f1 == f0 {
            break;
        }
        let x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
        x0 = x1;
        f0 = f1;
        x1 = x2;
        f1 = pair_residual(pot, k0, x1)?;
    }
    if f1.abs() <= tol {
        Ok(x1)
    } else {
        Err(Error::InvalidArgument(format!("critical phase residual {f1:e} above {tol:e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn harmonic_inner_segment() {
        let pot = RescaledPotential::limit(2, AlphaChoice::Rotated, c(10.0, 0.0)).unwrap();
        let g = build_graph(&pot).unwrap();
        assert!(g.critical);
        assert_eq!(g.inner_pairs, vec![(1, -1)]);
        let inner = g.lines.iter().find(|l| l.origin == 1 && l.is_inner()).unwrap();
        for p in &inner.points {
            assert!(p.im.abs() < 1e-6, "{p}");
        }
        assert_eq!(g.sectors.len(), 4);
    }

    #[test]
    fn cubic_topology() {
        let pot = RescaledPotential::limit(3, AlphaChoice::One, c(10.0, 0.0)).unwrap();
        let g = build_graph(&pot).unwrap();
        assert_eq!(g.lines.len(), 9);
        assert_eq!(g.inner_pairs, vec![(1, -1)]);
        let mut labels: Vec<i32> = g.sectors.iter().map(|s| s.label).collect();
        labels.sort();
        assert_eq!(labels, vec![-3, -1, 1, 2, 3]);
        let rotated = pot.with_lambda(Complex64::from_polar(10.0, PI / 9.0)).unwrap();
        let g2 = build_graph(&rotated).unwrap();
        assert!(!g2.critical);
        for l in &g.lines {
            assert!(l.max_residual < 1e-8 * (1.0 + l.actions.last().unwrap().norm()));
        }
    }

    #[test]
    fn quartic_labels() {
        let pot = RescaledPotential::limit(4, AlphaChoice::One, c(10.0, 0.0)).unwrap();
        let g = build_graph(&pot).unwrap();
        let mut labels: Vec<i32> = g.sectors.iter().map(|s| s.label).collect();
        labels.sort();
        assert_eq!(labels, vec![-3, -2, -1, 1, 2, 3]);
        assert_eq!(g.inner_pairs, vec![(1, -1)]);
        let pot = RescaledPotential::limit(4, AlphaChoice::Rotated, c(10.0, 0.0)).unwrap();
        let g = build_graph(&pot).unwrap();
        let mut labels: Vec<i32> = g.sectors.iter().map(|s| s.label).collect();
        labels.sort();
        assert_eq!(labels, vec![-2, -1, 0, 1, 2, 3]);
        assert_eq!(g.inner_pairs, vec![(1, -1), (2, -2)]);
    }

    #[test]
    fn harmonic_critical_exceptional_set() {
        let pot = RescaledPotential::limit(2, AlphaChoice::Rotated, c(10.0, 0.0)).unwrap();
        let g = build_graph(&pot).unwrap();
        let ex = exceptional_set(&g, 1, 0.25).unwrap();
        assert_eq!(ex.lines_of(-1).len(), 3);
        assert_eq!(ex.lines_of(1).len(), 1);
        assert!(g.lines[ex.lines_of(1)[0]].is_inner());
        assert_eq!(ex.excluded_sector, Some(-1));
        assert!(matches!(exceptional_set(&g, 1, 10.0), Err(Error::EpsilonTooLarge { .. })));
    }

    #[test]
    fn noncritical_one_line_per_root() {
        let pot = RescaledPotential::limit(3, AlphaChoice::One, Complex64::from_polar(20.0, 0.1)).unwrap();
        let g = build_graph(&pot).unwrap();
        for s in &g.sectors {
            let ex = exceptional_set(&g, s.label, 0.25).unwrap();
            assert_eq!(ex.lines.len(), 3, "sector {}", s.label);
            for l in &ex.lines {
                assert_eq!(l.line_ids.len(), 1);
            }
            assert_eq!(ex.excluded_sector, None);
        }
    }
}
