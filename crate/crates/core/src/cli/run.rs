//! Pipeline execution and artifact emission.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use serde::Serialize;

use super::config::{load_manifest, Mode, RunConfig};
use super::{svg, CliError};
use crate::fundsol::{build_series, propagate_from, FundamentalSolution, PropagationSettings};
use crate::potential::{rescale, PhysicalProblem, RescaledPotential};
use crate::stokesgraph::{build_graph, exceptional_set, ExceptionalSet, StokesGraph};
use crate::zeroloci::{
    find_zeros, fit_order, match_zeros, predict, quantize, winding, ComparisonReport, PredictOptions, QuantizationResult, Rect,
    ZeroObservation, ZeroPrediction,
};
use crate::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every JSON artifact: library version, resolved config and per-mode data.
#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    version: &'static str,
    mode: Mode,
    config: &'a RunConfig,
    #[serde(flatten)]
    data: T,
}

#[derive(Serialize)]
struct Entries<T: Serialize> {
    results: Vec<T>,
}

#[derive(Serialize)]
struct GraphEntry {
    lambda: Complex64,
    graph: StokesGraph,
    exceptional: ExceptionalSet,
}

#[derive(Serialize)]
struct TracePoint {
    z: Complex64,
    arclength: f64,
    log_abs_psi: f64,
    arg_psi: f64,
    log_abs_dpsi: f64,
}

#[derive(Serialize)]
struct PropagateEntry {
    lambda: Complex64,
    sector: i32,
    path: Vec<Complex64>,
    samples: Vec<TracePoint>,
}

#[derive(Serialize)]
struct PredictEntry {
    lambda: Complex64,
    predictions: Vec<ZeroPrediction>,
}

#[derive(Serialize, Clone)]
struct EmptinessSample {
    rect: Rect,
    winding: i64,
}

#[derive(Serialize, Clone)]
struct FindEntry {
    lambda: Complex64,
    regions: Vec<Rect>,
    observations: Vec<ZeroObservation>,
    /// Centers of cells whose winding could not be resolved.
    unresolved: Vec<Complex64>,
    emptiness: Vec<EmptinessSample>,
}

#[derive(Serialize)]
struct CompareEntry {
    lambda: Complex64,
    predictions: Vec<ZeroPrediction>,
    observations: Vec<ZeroObservation>,
    unresolved: Vec<Complex64>,
    report: ComparisonReport,
}

#[derive(Serialize)]
struct CompareData {
    fitted_order: Option<f64>,
    results: Vec<CompareEntry>,
}

#[derive(Serialize)]
struct QuantizeData {
    k0: i32,
    results: Vec<QuantizationResult>,
}

fn numerical(module: &'static str) -> impl Fn(Error) -> CliError {
    move |source| CliError::Numerical { module, source }
}

/// Invalid potential input is a config error; anything else is numerical.
fn potential_error(e: Error) -> CliError {
    match e {
        Error::InvalidDegree(_)
        | Error::InvalidAlpha(..)
        | Error::InvalidLeadingCoefficient
        | Error::InvalidParameter(_)
        | Error::DegenerateEnergy
        | Error::InvalidArgument(_) => CliError::Config(e.to_string()),
        e => numerical("potential")(e),
    }
}

fn c(p: [f64; 2]) -> Complex64 {
    Complex64::new(p[0], p[1])
}

/// The standardized potentials of the λ schedule.
pub fn potentials(cfg: &RunConfig) -> Result<Vec<RescaledPotential>, CliError> {
    let spec = &cfg.potential;
    if let Some(path) = &spec.manifest {
        let m = load_manifest(path)?;
        if m.coefficients.len() != m.degree {
            return Err(CliError::Config(format!(
                "manifest {}: degree {} but {} coefficients",
                path.display(),
                m.degree,
                m.coefficients.len()
            )));
        }
        let problem = PhysicalProblem {
            coefficients: m.coefficients.iter().map(|&p| c(p)).collect(),
            energy: c(m.energy),
            mass: m.mass,
            hbar: m.hbar,
        };
        return Ok(vec![rescale(&problem, m.alpha.into()).map_err(potential_error)?]);
    }
    let degree = spec.degree.ok_or_else(|| CliError::Config("potential needs a degree".into()))?;
    let reduced: Vec<Complex64> = spec.reduced.iter().map(|&p| c(p)).collect();
    let lambda = cfg.lambda.as_ref().ok_or_else(|| CliError::Config("missing [lambda] schedule".into()))?;
    lambda
        .moduli()
        .into_iter()
        .map(|m| {
            RescaledPotential::new(degree, spec.alpha.into(), &reduced, Complex64::from_polar(m, lambda.phase))
                .map_err(potential_error)
        })
        .collect()
}

/// Per-λ state shared by the stages.
struct Stage<'a> {
    cfg: &'a RunConfig,
    graph: StokesGraph,
    ex: ExceptionalSet,
    fs: Option<FundamentalSolution>,
}

impl Stage<'_> {
    fn lambda(&self) -> Complex64 {
        self.graph.potential.lambda().value
    }

    fn fs(&mut self) -> Result<&FundamentalSolution, CliError> {
        if self.fs.is_none() {
            let sol = &self.cfg.solution;
            let series = build_series(&self.graph.potential, &self.graph.cuts, sol.order).map_err(numerical("fundsol"))?;
            let settings = PropagationSettings { tol: self.cfg.tolerances.propagation_tol, ..Default::default() };
            let fs = FundamentalSolution::new_with(&self.graph, &series, sol.sector, c(sol.hub), settings)
                .map_err(numerical("fundsol"))?;
            self.fs = Some(fs);
        }
        Ok(self.fs.as_ref().unwrap())
    }

    fn propagate(&mut self) -> Result<PropagateEntry, CliError> {
        let hub = c(self.cfg.solution.hub);
        let path: Vec<Complex64> = self.cfg.propagate.to.iter().map(|&p| c(p)).collect();
        let lambda = self.lambda();
        let fs = self.fs()?;
        let settings = PropagationSettings { dense: true, ..fs.settings };
        let start = fs.eval(hub).map_err(numerical("fundsol"))?;
        let trace = propagate_from(&fs.pot, fs.seed.sector, hub, start, &path, &settings).map_err(numerical("fundsol"))?;
        let samples = trace
            .samples
            .iter()
            .map(|s| TracePoint {
                z: s.z,
                arclength: s.arclength,
                log_abs_psi: s.state.log_scale + s.state.psi.norm().ln(),
                arg_psi: s.state.psi.arg(),
                log_abs_dpsi: s.state.log_scale + s.state.dpsi.norm().ln(),
            })
            .collect();
        Ok(PropagateEntry { lambda, sector: fs.seed.sector, path: trace.path, samples })
    }

    fn predictions(&self) -> Result<Vec<ZeroPrediction>, CliError> {
        let p = &self.cfg.predict;
        let span = p.r_max + p.r_margin;
        let opts =
            PredictOptions { q_max: p.q_max, r_window: (-span, span), eps: p.eps, big_lambda: p.big_lambda, residue: None };
        let roots: Vec<i32> = match p.l {
            Some(l) => vec![l],
            None => self.ex.lines.iter().map(|l| l.root).collect(),
        };
        let mut out = Vec::new();
        for l in roots {
            out.extend(predict(&self.graph, &self.ex, self.cfg.solution.sector, l, &opts).map_err(numerical("zeroloci"))?);
        }
        Ok(out)
    }

    /// Search regions: the configured region, else boxes around the
    /// predicted islands with `|r| ≤ r_max`.
    fn regions(&self, predictions: &[ZeroPrediction]) -> Vec<Rect> {
        if let Some([x0, y0, x1, y1]) = self.cfg.find.region {
            return vec![Rect::new(x0, y0, x1, y1)];
        }
        let modulus = self.graph.potential.lambda().modulus();
        predictions
            .iter()
            .filter(|p| p.q > 0 && p.r.abs() <= self.cfg.predict.r_max)
            .map(|p| {
                let h = self.cfg.find.box_scale * PI / (modulus * self.graph.cuts.sqrt_w_plane(p.order0).norm());
                Rect::around(p.location, h)
            })
            .collect()
    }

    fn find(&mut self, predictions: &[ZeroPrediction]) -> Result<FindEntry, CliError> {
        let regions = self.regions(predictions);
        let opts = self.cfg.tolerances.find_options();
        let mut observations: Vec<ZeroObservation> = Vec::new();
        let mut unresolved = Vec::new();
        for rect in &regions {
            match find_zeros(self.fs()?, *rect, &opts) {
                Ok(found) => {
                    for o in found {
                        if !observations.iter().any(|x| (x.location - o.location).norm() < 1e-8) {
                            observations.push(o);
                        }
                    }
                }
                Err(Error::UnresolvedCell(z)) => unresolved.push(z),
                Err(e) => return Err(numerical("zeroloci")(e)),
            }
        }
        let emptiness = self.emptiness()?;
        Ok(FindEntry { lambda: self.lambda(), regions, observations, unresolved, emptiness })
    }

    /// Winding numbers over random squares of `D_{k,ε}` drawn with the config seed.
    fn emptiness(&mut self) -> Result<Vec<EmptinessSample>, CliError> {
        let spec = &self.cfg.find;
        if spec.emptiness_samples == 0 {
            return Ok(Vec::new());
        }
        let v = self.cfg.output.view;
        let [x0, y0, x1, y1] = spec.region.unwrap_or([-v, -v, v, v]);
        let side = spec.emptiness_side;
        let mut rng = StdRng::seed_from_u64(self.cfg.seed);
        let mut rects = Vec::new();
        let mut attempts = 0;
        while rects.len() < spec.emptiness_samples && attempts < 200 * spec.emptiness_samples {
            attempts += 1;
            let cx = rng.random_range(x0 + side / 2.0..=x1 - side / 2.0);
            let cy = rng.random_range(y0 + side / 2.0..=y1 - side / 2.0);
            let rect = Rect::around(Complex64::new(cx, cy), side / 2.0);
            let inside = (0..=10).all(|a| {
                (0..=10).all(|b| {
                    let z = Complex64::new(rect.x0 + side * a as f64 / 10.0, rect.y0 + side * b as f64 / 10.0);
                    self.ex.in_reduced_domain(&self.graph, z)
                })
            });
            if inside {
                rects.push(rect);
            }
        }
        let fs = self.fs()?;
        rects
            .into_iter()
            .map(|rect| Ok(EmptinessSample { rect, winding: winding(fs, &rect).map_err(numerical("zeroloci"))? }))
            .collect()
    }
}

fn write(path: &Path, text: &str, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.display().to_string(), message: e.to_string() })?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() })?;
    written.push(path.to_path_buf());
    Ok(())
}

fn json<T: Serialize>(cfg: &RunConfig, mode: Mode, data: T) -> String {
    let artifact = Artifact { version: VERSION, mode, config: cfg, data };
    let mut s = serde_json::to_string_pretty(&artifact).expect("artifact serializes");
    s.push('\n');
    s
}

/// SVG file for `mode` and schedule entry `i` of `count`.
fn svg_path(cfg: &RunConfig, mode: Mode, i: usize, count: usize) -> PathBuf {
    let owner = if cfg.modes.contains(&Mode::Render) { Mode::Render } else { Mode::Graph };
    let base = match &cfg.output.svg {
        Some(name) if mode == owner => name.clone(),
        _ => format!("{}.svg", mode.name()),
    };
    let name = if count > 1 {
        let p = Path::new(&base);
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("figure");
        format!("{stem}-{i}.svg")
    } else {
        base
    };
    cfg.output.dir.join(name)
}

/// Execute all modes of `cfg` and return the written files.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate()?;
    let pots = potentials(cfg)?;
    let has = |m: Mode| cfg.modes.contains(&m);
    let mut graphs = Vec::new();
    let mut traces = Vec::new();
    let mut predicted = Vec::new();
    let mut found = Vec::new();
    let mut compared = Vec::new();
    let mut figures = Vec::new();
    let count = pots.len();
    for (i, pot) in pots.iter().enumerate() {
        let graph = build_graph(pot).map_err(numerical("stokesgraph"))?;
        let ex = exceptional_set(&graph, cfg.solution.sector, cfg.predict.eps).map_err(numerical("stokesgraph"))?;
        let mut stage = Stage { cfg, graph, ex, fs: None };
        let title = format!("n={} |λ|={} arg λ={}", pot.degree(), pot.lambda().modulus(), pot.lambda().phase());
        if has(Mode::Graph) {
            let s = svg::render(&stage.graph, Some(&stage.ex), &[], &[], cfg.output.view, &title);
            figures.push((svg_path(cfg, Mode::Graph, i, count), s));
            graphs.push(GraphEntry { lambda: stage.lambda(), graph: stage.graph.clone(), exceptional: stage.ex.clone() });
        }
        if has(Mode::Propagate) {
            traces.push(stage.propagate()?);
        }
        let needs_predictions =
            has(Mode::Predict) || has(Mode::Compare) || has(Mode::Render) || (has(Mode::Find) && cfg.find.region.is_none());
        let predictions = if needs_predictions { stage.predictions()? } else { Vec::new() };
        if has(Mode::Predict) {
            predicted.push(PredictEntry { lambda: stage.lambda(), predictions: predictions.clone() });
        }
        let observed =
            if has(Mode::Find) || has(Mode::Compare) || has(Mode::Render) { Some(stage.find(&predictions)?) } else { None };
        if has(Mode::Find) {
            found.push(observed.clone().unwrap());
        }
        if has(Mode::Compare) {
            let obs = observed.as_ref().unwrap();
            let cap = cfg.tolerances.match_cap / stage.graph.potential.lambda().modulus();
            compared.push(CompareEntry {
                lambda: stage.lambda(),
                report: match_zeros(&predictions, &obs.observations, cap),
                predictions: predictions.clone(),
                observations: obs.observations.clone(),
                unresolved: obs.unresolved.clone(),
            });
        }
        if has(Mode::Render) {
            let obs = observed.as_ref().map_or(&[][..], |o| &o.observations[..]);
            let s = svg::render(&stage.graph, Some(&stage.ex), &predictions, obs, cfg.output.view, &title);
            figures.push((svg_path(cfg, Mode::Render, i, count), s));
        }
    }
    let quantized = if has(Mode::Quantize) {
        let q = &cfg.quantize;
        Some(QuantizeData { k0: q.k0, results: quantize(&pots[0], q.k0, q.s_min..=q.s_max).map_err(numerical("zeroloci"))? })
    } else {
        None
    };

    let mut written = Vec::new();
    for &mode in &cfg.modes {
        let Some(path) = cfg.json_path(mode) else { continue };
        let text = match mode {
            Mode::Graph => json(cfg, mode, Entries { results: std::mem::take(&mut graphs) }),
            Mode::Propagate => json(cfg, mode, Entries { results: std::mem::take(&mut traces) }),
            Mode::Predict => json(cfg, mode, Entries { results: std::mem::take(&mut predicted) }),
            Mode::Find => json(cfg, mode, Entries { results: std::mem::take(&mut found) }),
            Mode::Compare => {
                let points: Vec<(f64, f64)> = compared.iter().map(|e| (e.lambda.norm(), e.report.max_residual)).collect();
                let fitted_order = fit_order(&points);
                let mut results = std::mem::take(&mut compared);
                for e in &mut results {
                    e.report.fitted_order = fitted_order;
                }
                json(cfg, mode, CompareData { fitted_order, results })
            }
            Mode::Quantize => json(cfg, mode, quantized.as_ref().unwrap()),
            Mode::Render => unreachable!(),
        };
        write(&path, &text, &mut written)?;
    }
    for (path, text) in figures {
        write(&path, &text, &mut written)?;
    }
    Ok(written)
}
