//! Acceptance criteria, one pass/fail line each.

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use stokeszero::branchcut::{action_integral_from, closed_form_action, pair_action, ComplexPath, CutPlane};
use stokeszero::cli::config::{load, RunConfig};
use stokeszero::fundsol::{
    build_series, local_scale, loop_integral, propagate_from, state_wronskian, FundamentalSolution, PropagationSettings,
    ScaledState,
};
use stokeszero::potential::{limit_pairs, AlphaChoice, RescaledPotential};
use stokeszero::stokesgraph::{build_graph, critical_phase, critical_phase_refined, exceptional_set, pair_residual};
use stokeszero::zeroloci::{
    find_zeros, fit_order, is_infinite, line_box, match_zeros, predict, quantize, winding, FindOptions, LineKind, PredictOptions,
    Rect, ZeroObservation,
};

/// Criteria expected to fail, with the reason printed next to the result.
const KNOWN_FAILURES: &[(u32, &str)] =
    &[(9, "the leading-order phase formula vanishes identically; the refined phase scales as |λ|^(-4/5), not |λ|^(-2/5)")];

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Result<Outcome, String>;

fn main() -> ExitCode {
    let criteria: [(u32, &str, Check); 10] = [
        (1, "closed-form actions", closed_form_actions),
        (2, "graph topology", graph_topology),
        (3, "rotation law", rotation_law),
        (4, "residue property", residue_property),
        (5, "canonical-domain emptiness", emptiness),
        (6, "zero-loci convergence", zero_loci_convergence),
        (7, "critical sector lines", critical_sector_lines),
        (8, "quantization", quantization),
        (9, "critical phase", critical_phase_scaling),
        (10, "property suite", property_suite),
    ];
    let mut unexpected = 0;
    for (id, name, check) in criteria {
        let t = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome { pass: false, detail: format!("error: {e}") });
        let elapsed = t.elapsed().as_secs_f64();
        let known = KNOWN_FAILURES.iter().find(|k| k.0 == id);
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name}: {} ({elapsed:.2} s)", outcome.detail);
        match (outcome.pass, known) {
            (false, Some((_, why))) => println!("        known failure: {why}"),
            (false, None) => unexpected += 1,
            (true, Some(_)) => println!("        listed as a known failure but passed"),
            _ => {}
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn timed<T>(limit: Duration, f: impl FnOnce() -> Result<T, String>) -> Result<(T, bool), String> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed() <= limit))
}

fn closed_form_actions() -> Result<Outcome, String> {
    let cases = [
        (2, AlphaChoice::Rotated, 1),
        (3, AlphaChoice::One, 1),
        (4, AlphaChoice::One, 1),
        (5, AlphaChoice::One, 1),
        (4, AlphaChoice::Rotated, 1),
    ];
    let ((rel, flat), fast) = timed(Duration::from_secs(1), || {
        let mut rel: f64 = 0.0;
        let mut flat: f64 = 0.0;
        for (n, alpha, k) in cases {
            let pot = RescaledPotential::limit(n, alpha, c(10.0, 0.0)).map_err(|e| e.to_string())?;
            let cuts = CutPlane::new(&pot).map_err(|e| e.to_string())?;
            let numeric = pair_action(&cuts, k).map_err(|e| e.to_string())?.value;
            let exact = closed_form_action(n, alpha, k).map_err(|e| e.to_string())?;
            rel = rel.max((numeric - exact).norm() / exact.norm());
            flat = flat.max(numeric.re.abs() / numeric.im.abs());
        }
        Ok((rel, flat))
    })?;
    Ok(Outcome {
        pass: rel <= 1e-8 && flat <= 1e-10 && fast,
        detail: format!("max relative error {rel:.1e}, max |Re|/|Im| {flat:.1e}"),
    })
}

fn graph_topology() -> Result<Outcome, String> {
    let (report, fast) = timed(Duration::from_secs(10), || {
        let mut bad = Vec::new();
        let mut graphs = 0;
        for n in 2..=7 {
            for alpha in [AlphaChoice::One, AlphaChoice::Rotated] {
                if alpha.check(n).is_err() {
                    continue;
                }
                for beta in [0.0, 0.5 * PI / n as f64] {
                    let pot = RescaledPotential::limit(n, alpha, Complex64::from_polar(20.0, beta)).map_err(|e| e.to_string())?;
                    let g = build_graph(&pot).map_err(|e| e.to_string())?;
                    graphs += 1;
                    if g.sectors.len() != n + 2 {
                        bad.push(format!("n={n} {alpha:?} β={beta:.3}: {} sectors", g.sectors.len()));
                    }
                    let mut inner: Vec<(i32, i32)> = g.inner_pairs.iter().map(|&(a, b)| (a.max(b), a.min(b))).collect();
                    inner.sort();
                    let mut expected = if beta == 0.0 { limit_pairs(n, alpha).pairs } else { Vec::new() };
                    expected.sort();
                    if inner != expected {
                        bad.push(format!("n={n} {alpha:?} β={beta:.3}: inner {inner:?}, expected {expected:?}"));
                    }
                }
            }
        }
        Ok((graphs, bad))
    })?;
    let (graphs, bad) = report;
    Ok(Outcome {
        pass: bad.is_empty() && fast,
        detail: if bad.is_empty() { format!("{graphs} graphs consistent") } else { bad.join("; ") },
    })
}

/// Tangent angle of a line where it crosses `|z − z_t| = r`.
fn tangent_at(points: &[Complex64], zt: Complex64, r: f64) -> Option<f64> {
    let j = points.iter().position(|p| (p - zt).norm() >= r)?;
    let (a, b) = (points[j.max(1) - 1], points[j]);
    let (da, db) = ((a - zt).norm(), (b - zt).norm());
    let f = if db > da { (r - da) / (db - da) } else { 1.0 };
    Some((a + (b - a) * f - zt).arg())
}

fn rotation_law() -> Result<Outcome, String> {
    let beta = 0.05;
    let base = RescaledPotential::limit(3, AlphaChoice::One, c(20.0, 0.0)).map_err(|e| e.to_string())?;
    let turned = base.with_lambda(Complex64::from_polar(20.0, beta)).map_err(|e| e.to_string())?;
    let g0 = build_graph(&base).map_err(|e| e.to_string())?;
    let g1 = build_graph(&turned).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (l0, l1) in g0.lines.iter().zip(&g1.lines) {
        let zt = g0.turning_point(l0.origin).unwrap().location;
        let a0 = tangent_at(&l0.points, zt, 1e-3).ok_or("line shorter than the probe radius")?;
        let a1 = tangent_at(&l1.points, zt, 1e-3).ok_or("line shorter than the probe radius")?;
        let mut d = a1 - a0;
        d = (d + PI).rem_euclid(2.0 * PI) - PI;
        worst = worst.max((d + 2.0 * beta / 3.0).abs());
    }
    Ok(Outcome { pass: worst <= 1e-3, detail: format!("max deviation from -2β/3: {worst:.1e} rad over 9 lines") })
}

fn residue_property() -> Result<Outcome, String> {
    let mut worst: f64 = 0.0;
    for n in [2, 3] {
        let alpha = if n == 2 { AlphaChoice::Rotated } else { AlphaChoice::One };
        let pot = RescaledPotential::limit(n, alpha, c(20.0, 0.0)).map_err(|e| e.to_string())?;
        let cuts = CutPlane::new(&pot).map_err(|e| e.to_string())?;
        let series = build_series(&pot, &cuts, 4).map_err(|e| e.to_string())?;
        let tps = cuts.locations();
        for &zt in &tps {
            let gap = tps.iter().filter(|&&o| o != zt).map(|o| (o - zt).norm()).fold(f64::INFINITY, f64::min);
            for p in [2, 4] {
                let v = loop_integral(&series, p, zt, 0.3 * gap, 4096).map_err(|e| e.to_string())?;
                worst = worst.max(v.norm());
            }
        }
    }
    Ok(Outcome { pass: worst <= 1e-8, detail: format!("max |∮X_2|, |∮X_4| = {worst:.1e}") })
}

fn emptiness() -> Result<Outcome, String> {
    let lambda = Complex64::from_polar(25.0, PI / 6.0);
    let pot = RescaledPotential::limit(3, AlphaChoice::One, lambda).map_err(|e| e.to_string())?;
    let g = build_graph(&pot).map_err(|e| e.to_string())?;
    let series = build_series(&pot, &g.cuts, 2).map_err(|e| e.to_string())?;
    let k = 1;
    let ex = exceptional_set(&g, k, 0.25).map_err(|e| e.to_string())?;
    let fs = FundamentalSolution::new(&g, &series, k, c(0.0, 0.0)).map_err(|e| e.to_string())?;
    // Largest-area square patch of side 0.8 closest to the origin inside D_{k,ε}.
    let side = 0.8;
    let mut best: Option<(f64, Rect)> = None;
    for i in -12..=12 {
        for j in -12..=12 {
            let center = c(0.25 * i as f64, 0.25 * j as f64);
            let rect = Rect::around(center, side / 2.0);
            let inside = (0..=10).all(|a| {
                (0..=10).all(|b| ex.in_reduced_domain(&g, c(rect.x0 + side * a as f64 / 10.0, rect.y0 + side * b as f64 / 10.0)))
            });
            if inside && best.as_ref().is_none_or(|b| center.norm() < b.0) {
                best = Some((center.norm(), rect));
            }
        }
    }
    let (_, patch) = best.ok_or("no patch of D_{k,ε} found")?;
    let mut total = 0;
    for cell in patch.grid(4, 4) {
        total += winding(&fs, &cell).map_err(|e| e.to_string())?;
    }
    Ok(Outcome {
        pass: total == 0,
        detail: format!("ψ_{k} over [{:.2},{:.2}]×[{:.2},{:.2}]: total winding {total}", patch.x0, patch.x1, patch.y0, patch.y1),
    })
}

fn zero_loci_convergence() -> Result<Outcome, String> {
    let (report, fast) = timed(Duration::from_secs(120), || {
        let k = 3;
        let mut residuals = Vec::new();
        let mut lines = Vec::new();
        let mut all_matched = true;
        for modulus in [20.0, 40.0, 80.0] {
            let lambda = Complex64::from_polar(modulus, 0.1);
            let pot = RescaledPotential::limit(3, AlphaChoice::One, lambda).map_err(|e| e.to_string())?;
            let g = build_graph(&pot).map_err(|e| e.to_string())?;
            let series = build_series(&pot, &g.cuts, 2).map_err(|e| e.to_string())?;
            let fs = FundamentalSolution::new(&g, &series, k, c(0.0, 0.0)).map_err(|e| e.to_string())?;
            let ex = exceptional_set(&g, k, 0.25).map_err(|e| e.to_string())?;
            let opts = PredictOptions { q_max: 2, r_window: (-3, 3), ..Default::default() };
            let mut preds = Vec::new();
            for l in ex.lines.iter().map(|l| l.root) {
                preds.extend(predict(&g, &ex, k, l, &opts).map_err(|e| e.to_string())?.into_iter().filter(|p| p.q > 0));
            }
            let mut obs: Vec<ZeroObservation> = Vec::new();
            let mut unresolved = 0;
            for p in preds.iter().filter(|p| p.r.abs() <= 2) {
                let h = 0.45 * PI / (modulus * g.cuts.sqrt_w_plane(p.order0).norm());
                match find_zeros(&fs, Rect::around(p.location, h), &FindOptions::default()) {
                    Ok(found) => {
                        for o in found {
                            if !obs.iter().any(|x| (x.location - o.location).norm() < 1e-8) {
                                obs.push(o);
                            }
                        }
                    }
                    Err(_) => unresolved += 1,
                }
            }
            let rep = match_zeros(&preds, &obs, 5.0 / modulus);
            all_matched &= rep.unmatched_observations.is_empty() && !obs.is_empty() && unresolved == 0;
            residuals.push((modulus, rep.max_residual));
            lines.push(format!(
                "|λ|={modulus}: {}/{} matched, max {:.1e}{}",
                rep.matched.len(),
                obs.len(),
                rep.max_residual,
                if unresolved > 0 { format!(", {unresolved} unresolved") } else { String::new() }
            ));
        }
        Ok((residuals, lines, all_matched))
    })?;
    let (residuals, lines, all_matched) = report;
    let order = fit_order(&residuals).unwrap_or(f64::NAN);
    Ok(Outcome { pass: all_matched && order >= 1.8 && fast, detail: format!("{}; fitted order {order:.2}", lines.join(", ")) })
}

fn critical_sector_lines() -> Result<Outcome, String> {
    let modulus = 50.0;
    let pot = RescaledPotential::limit(2, AlphaChoice::Rotated, c(modulus, 0.0)).map_err(|e| e.to_string())?;
    let g = build_graph(&pot).map_err(|e| e.to_string())?;
    let series = build_series(&pot, &g.cuts, 2).map_err(|e| e.to_string())?;
    let k = 1;
    let fs = FundamentalSolution::new(&g, &series, k, c(0.0, 0.0)).map_err(|e| e.to_string())?;
    let ex = exceptional_set(&g, k, 0.25).map_err(|e| e.to_string())?;
    // Boxes around |r| ≤ 5 also catch the next zero out, so match against |r| ≤ 7.
    let opts = PredictOptions { r_window: (-7, 7), ..Default::default() };
    let preds = predict(&g, &ex, k, -k, &opts).map_err(|e| e.to_string())?;
    let mut obs: Vec<ZeroObservation> = Vec::new();
    for p in preds.iter().filter(|p| p.r.abs() <= 5) {
        for o in find_zeros(&fs, Rect::around(p.location, 0.02), &FindOptions::default()).map_err(|e| e.to_string())? {
            if !obs.iter().any(|x| (x.location - o.location).norm() < 1e-8) {
                obs.push(o);
            }
        }
    }
    let rep = match_zeros(&preds, &obs, 5.0 / modulus);
    let on = |kind: LineKind| rep.matched.iter().filter(|m| preds[m.prediction].kind == kind).count();
    let (upper, lower) = (on(LineKind::UpperBoundary), on(LineKind::LowerBoundary));
    let tol = 10.0 / (modulus * modulus);
    Ok(Outcome {
        pass: rep.unmatched_observations.is_empty() && upper > 0 && lower > 0 && rep.max_residual <= tol,
        detail: format!(
            "{} zeros ({upper} upper, {lower} lower), {} unmatched, max residual {:.2e} (limit {tol:.1e})",
            obs.len(),
            rep.unmatched_observations.len(),
            rep.max_residual
        ),
    })
}

fn quantization() -> Result<Outcome, String> {
    let base = RescaledPotential::limit(2, AlphaChoice::Rotated, c(1.0, 0.0)).map_err(|e| e.to_string())?;
    let results = quantize(&base, 1, 0..=6).map_err(|e| e.to_string())?;
    let mut lambda_err: f64 = 0.0;
    let mut leading_err: f64 = 0.0;
    let mut problems = Vec::new();
    for r in &results {
        let exact = 2.0 * r.s as f64 + 1.0;
        lambda_err = lambda_err.max((r.refined - exact).norm());
        leading_err = leading_err.max((r.leading - 2.0 * (r.s as f64 + 0.5)).abs());
        let pot = base.with_lambda(r.refined).map_err(|e| e.to_string())?;
        let g = build_graph(&pot).map_err(|e| e.to_string())?;
        let series = build_series(&pot, &g.cuts, 2).map_err(|e| e.to_string())?;
        let fs = FundamentalSolution::new(&g, &series, 1, c(0.0, 0.0)).map_err(|e| e.to_string())?;
        let zeros = find_zeros(&fs, Rect::new(-1.6, -0.6, 1.6, 0.6), &FindOptions::default()).map_err(|e| e.to_string())?;
        let inner = g.lines.iter().find(|l| l.is_inner()).ok_or("no inner line")?;
        let far = zeros.iter().filter(|z| inner.distance(z.location) > 1e-3).count();
        if zeros.len() != r.s as usize || far > 0 {
            problems.push(format!("s={}: {} zeros, {far} off the segment", r.s, zeros.len()));
        }
        let ex = exceptional_set(&g, 1, 0.25).map_err(|e| e.to_string())?;
        let pad = 0.5 / r.refined.norm();
        let mut tube_zeros = 0;
        for &id in ex.lines_of(-1) {
            if !is_infinite(&g, id) {
                continue;
            }
            for j in 1..8 {
                let (t0, t1) = (j as f64 * PI, (j + 1) as f64 * PI);
                if let Some(tube) = line_box(&g, id, -1, t0, t1, pad).map_err(|e| e.to_string())? {
                    tube_zeros += find_zeros(&fs, tube, &FindOptions::default()).map_err(|e| e.to_string())?.len();
                }
            }
        }
        if tube_zeros > 0 {
            problems.push(format!("s={}: {tube_zeros} zeros in the S_-1 tubes", r.s));
        }
    }
    Ok(Outcome {
        pass: lambda_err <= 1e-8 && leading_err <= 1e-12 && problems.is_empty(),
        detail: format!(
            "λ_s error {lambda_err:.1e}, leading error {leading_err:.1e}{}",
            if problems.is_empty() { ", zero counts as expected".to_string() } else { format!("; {}", problems.join("; ")) }
        ),
    })
}

fn critical_phase_scaling() -> Result<Outcome, String> {
    let mut betas = Vec::new();
    let mut residual: f64 = 0.0;
    let mut leading: f64 = 0.0;
    for modulus in [100.0, 400.0] {
        let pot = RescaledPotential::new(3, AlphaChoice::One, &[c(0.0, 0.0), c(0.5, 0.0)], c(modulus, 0.0))
            .map_err(|e| e.to_string())?;
        leading = leading.max(critical_phase(&pot, 1).map_err(|e| e.to_string())?.abs());
        let beta = critical_phase_refined(&pot, 1, 1e-9).map_err(|e| e.to_string())?;
        residual = residual.max(pair_residual(&pot, 1, beta).map_err(|e| e.to_string())?.abs());
        betas.push(beta);
    }
    let ratio = betas[1] / betas[0];
    let expected = 4f64.powf(-2.0 / 5.0);
    let scaling = (ratio / expected - 1.0).abs();
    Ok(Outcome {
        pass: residual <= 1e-6 && scaling <= 0.05,
        detail: format!(
            "residual {residual:.1e} (ok: {}), β = {:.4e}, {:.4e}, ratio {ratio:.3} vs {expected:.3} ({:.0}% off), leading-order β = {leading:.1e}",
            residual <= 1e-6,
            betas[0],
            betas[1],
            100.0 * scaling
        ),
    })
}

fn property_suite() -> Result<Outcome, String> {
    let pot = RescaledPotential::limit(3, AlphaChoice::One, Complex64::from_polar(5.0, 0.2)).map_err(|e| e.to_string())?;
    let g = build_graph(&pot).map_err(|e| e.to_string())?;
    let series = build_series(&pot, &g.cuts, 2).map_err(|e| e.to_string())?;
    let settings = PropagationSettings::default();
    let hub = c(0.0, 0.0);
    let a = FundamentalSolution::new(&g, &series, 1, hub).map_err(|e| e.to_string())?;
    let b = FundamentalSolution::new(&g, &series, 2, hub).map_err(|e| e.to_string())?;

    // Wronskian along a common path.
    let path = [c(0.4, -0.3), c(0.9, 0.2), c(0.2, 0.5), c(-0.6, 0.1), c(-0.3, -0.6)];
    let ta = propagate_from(&pot, 1, hub, a.hub().state, &path, &settings).map_err(|e| e.to_string())?;
    let tb = propagate_from(&pot, 2, hub, b.hub().state, &path, &settings).map_err(|e| e.to_string())?;
    // Drift relative to ‖ψ_a‖‖ψ_b‖, the scale at which the Wronskian is formed.
    let w0 = state_wronskian(&a.hub().state, &b.hub().state);
    let mut drift: f64 = 0.0;
    for z in path {
        let (sa, sb) = (ta.sample_at(z).ok_or("missing sample")?, tb.sample_at(z).ok_or("missing sample")?);
        let w = state_wronskian(&sa.state, &sb.state);
        let diff = w.mantissa - w0.mantissa * (w0.log_scale - w.log_scale).exp();
        let k = local_scale(&pot, z);
        drift = drift.max(diff.norm() / (norm(&sa.state, k) * norm(&sb.state, k) * k));
    }

    // Closed loop around all turning points, relative to the largest state on the loop.
    let start = c(1.5, 0.0);
    let s0 = ScaledState::new(c(1.0, 0.5), c(-2.0, 1.0));
    let ring: Vec<Complex64> = (1..=64).map(|j| Complex64::from_polar(1.5, 2.0 * PI * j as f64 / 64.0)).collect();
    let trace = propagate_from(&pot, 1, start, s0, &ring, &settings).map_err(|e| e.to_string())?;
    let back = trace.end().state;
    let kappa = local_scale(&pot, start);
    let peak =
        trace.samples.iter().map(|t| t.state.log_scale + norm(&t.state, local_scale(&pot, t.z)).ln()).fold(f64::MIN, f64::max);
    let diff = ScaledState {
        psi: back.psi - s0.psi * (s0.log_scale - back.log_scale).exp(),
        dpsi: back.dpsi - s0.dpsi * (s0.log_scale - back.log_scale).exp(),
        log_scale: back.log_scale,
    };
    let loop_err = (diff.log_scale + norm(&diff, kappa).ln() - peak).exp();

    // Path independence of actions, including a turning-point endpoint.
    let mut path_err: f64 = 0.0;
    let z1 = g.turning_point(1).unwrap().location;
    for (from, to, via) in [(c(0.2, 0.0), c(0.6, 0.3), c(0.5, -0.2)), (z1, c(-0.2, 0.1), c(-0.3, 0.6))] {
        let direct = ComplexPath::new(&g.cuts, vec![from, to]).map_err(|e| e.to_string())?;
        let bent = ComplexPath::new(&g.cuts, vec![from, via, to]).map_err(|e| e.to_string())?;
        let end = Some(g.cuts.sqrt_w_plane(to));
        let ia = action_integral_from(&g.cuts, &direct, end, 1e-13).map_err(|e| e.to_string())?.value;
        let ib = action_integral_from(&g.cuts, &bent, end, 1e-13).map_err(|e| e.to_string())?.value;
        path_err = path_err.max((ia - ib).norm());
    }

    let cli = cli_determinism()?;
    let pass = drift <= 1e-8 && loop_err <= 1e-8 && path_err <= 1e-10 && cli.0;
    Ok(Outcome {
        pass,
        detail: format!(
            "Wronskian drift {drift:.1e}, closed loop {loop_err:.1e}, action path dependence {path_err:.1e}, CLI {}",
            cli.1
        ),
    })
}

/// `(|ψ|² κ + |ψ'|²/κ)^{1/2}` of the mantissa.
fn norm(s: &ScaledState, kappa: f64) -> f64 {
    (kappa * s.psi.norm_sqr() + s.dpsi.norm_sqr() / kappa).sqrt()
}

/// Two identical CLI runs give byte-identical JSON whose embedded config
/// re-parses to the resolved config.
fn cli_determinism() -> Result<(bool, String), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    let path = dir.path().join("run.toml");
    let text = format!(
        "modes = [\"graph\", \"predict\", \"find\", \"compare\"]\nseed = 11\n\
         [potential]\ndegree = 3\n[lambda]\nvalues = [20.0]\nphase = 0.1\n[solution]\nsector = 3\n\
         [find]\nemptiness_samples = 2\n[output]\ndir = {:?}\n",
        out.display().to_string()
    );
    std::fs::write(&path, text).map_err(|e| e.to_string())?;
    let resolved = load(&path).map_err(|e| e.to_string())?;
    let names = ["graph.json", "predict.json", "find.json", "report.json"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let status = Command::new(env!("CARGO_BIN_EXE_stokeszero"))
            .arg("run")
            .arg(&path)
            .stderr(std::process::Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Ok((false, format!("exit status {status}")));
        }
        let files: Vec<Vec<u8>> =
            names.iter().map(|n| std::fs::read(out.join(n)).map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
        std::fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
        runs.push(files);
    }
    let identical = runs[0] == runs[1];
    let mut echoed = true;
    for bytes in &runs[0] {
        let v: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        let cfg: RunConfig = serde_json::from_value(v["config"].clone()).map_err(|e| e.to_string())?;
        echoed &= cfg == resolved;
    }
    Ok((identical && echoed, format!("{} artifacts identical: {identical}, config echo: {echoed}", names.len())))
}
