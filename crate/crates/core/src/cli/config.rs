//! Run configuration: TOML input, validation and environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::fundsol::{PropagationSettings, DEFAULT_ORDER};
use crate::potential::AlphaChoice;
use crate::zeroloci::FindOptions;

/// Pipeline stages, in the only order in which they may be combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Graph,
    Propagate,
    Predict,
    Find,
    Compare,
    Quantize,
    Render,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Graph => "graph",
            Mode::Propagate => "propagate",
            Mode::Predict => "predict",
            Mode::Find => "find",
            Mode::Compare => "compare",
            Mode::Quantize => "quantize",
            Mode::Render => "render",
        }
    }

    /// Default JSON artifact name; `render` only emits SVG.
    pub fn artifact(self) -> Option<&'static str> {
        match self {
            Mode::Compare => Some("report.json"),
            Mode::Render => None,
            m => Some(match m {
                Mode::Graph => "graph.json",
                Mode::Propagate => "propagate.json",
                Mode::Predict => "predict.json",
                Mode::Find => "find.json",
                _ => "quantize.json",
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Alpha {
    /// `α = 1`.
    #[default]
    #[serde(alias = "1")]
    #[value(alias = "1")]
    One,
    /// `α = e^{-iπ/n}` (even degree).
    Rotated,
}

impl From<Alpha> for AlphaChoice {
    fn from(a: Alpha) -> Self {
        match a {
            Alpha::One => AlphaChoice::One,
            Alpha::Rotated => AlphaChoice::Rotated,
        }
    }
}

/// Either a physical manifest or an inline standardized potential.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    /// Path to a physical manifest (degree, coefficients, energy, mass, hbar, alpha).
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub degree: Option<usize>,
    #[serde(default)]
    pub alpha: Alpha,
    /// `b_1, ..., b_{n-1}` as `[re, im]` pairs; missing entries are zero.
    #[serde(default)]
    pub reduced: Vec<[f64; 2]>,
}

/// Physical potential manifest `P(x) = a_n x^n + ... + a_1 x` at energy `E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub degree: usize,
    /// `a_1, ..., a_n` as `[re, im]` pairs.
    pub coefficients: Vec<[f64; 2]>,
    pub energy: [f64; 2],
    pub mass: f64,
    pub hbar: f64,
    #[serde(default)]
    pub alpha: Alpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ladder {
    pub start: f64,
    pub ratio: f64,
    pub count: usize,
}

/// `|λ|` schedule with a common phase `β = arg λ`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSpec {
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default)]
    pub ladder: Option<Ladder>,
    #[serde(default)]
    pub phase: f64,
}

impl LambdaSpec {
    pub fn moduli(&self) -> Vec<f64> {
        match self.ladder {
            Some(l) => (0..l.count).map(|i| l.start * l.ratio.powi(i as i32)).collect(),
            None => self.values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolutionSpec {
    /// Sector label `k` of `ψ_k`.
    pub sector: i32,
    /// Order of the semiclassical seed.
    pub order: usize,
    /// Point through which all evaluations are routed.
    pub hub: [f64; 2],
}

impl Default for SolutionSpec {
    fn default() -> Self {
        Self { sector: 1, order: DEFAULT_ORDER, hub: [0.0, 0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSpec {
    /// Root whose exceptional lines are predicted; all roots of `∂D_k` when absent.
    pub l: Option<i32>,
    pub q_max: u32,
    /// Search boxes are placed around predictions with `|r| ≤ r_max`.
    pub r_max: i32,
    /// Extra `r` values predicted beyond `r_max` for matching.
    pub r_margin: i32,
    pub eps: f64,
    /// `Λ`; the fractional part of `|λ|` when absent.
    pub big_lambda: Option<f64>,
}

impl Default for PredictSpec {
    fn default() -> Self {
        Self { l: None, q_max: 2, r_max: 2, r_margin: 2, eps: 0.25, big_lambda: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FindSpec {
    /// `[x0, y0, x1, y1]`; boxes around predictions when absent.
    pub region: Option<[f64; 4]>,
    /// Box half-width in units of `π/(|λ||√W|)`.
    pub box_scale: f64,
    /// Random squares of `D_{k,ε}` checked for zero winding.
    pub emptiness_samples: usize,
    pub emptiness_side: f64,
}

impl Default for FindSpec {
    fn default() -> Self {
        Self { region: None, box_scale: 0.45, emptiness_samples: 0, emptiness_side: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagateSpec {
    /// Path vertices after the hub.
    pub to: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizeSpec {
    pub k0: i32,
    pub s_min: u32,
    pub s_max: u32,
}

impl Default for QuantizeSpec {
    fn default() -> Self {
        Self { k0: 1, s_min: 0, s_max: 10 }
    }
}

/// Numerical knobs; each can be overridden by `STOKESZERO_<NAME>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub newton_tol: f64,
    pub residual_tol: f64,
    pub relative_residual_tol: f64,
    pub min_cell: f64,
    pub propagation_tol: f64,
    /// Matching cap in units of `1/|λ|`.
    pub match_cap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let f = FindOptions::default();
        Self {
            newton_tol: f.newton_tol,
            residual_tol: f.residual_tol,
            relative_residual_tol: f.relative_residual_tol,
            min_cell: f.min_cell,
            propagation_tol: PropagationSettings::default().tol,
            match_cap: 5.0,
        }
    }
}

impl Tolerances {
    pub const NAMES: [&'static str; 6] =
        ["newton_tol", "residual_tol", "relative_residual_tol", "min_cell", "propagation_tol", "match_cap"];

    fn fields_mut(&mut self) -> [&mut f64; 6] {
        [
            &mut self.newton_tol,
            &mut self.residual_tol,
            &mut self.relative_residual_tol,
            &mut self.min_cell,
            &mut self.propagation_tol,
            &mut self.match_cap,
        ]
    }

    pub fn env_var(name: &str) -> String {
        format!("STOKESZERO_{}", name.to_uppercase())
    }

    /// Apply overrides from `lookup(variable name)`.
    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
        for (name, field) in Self::NAMES.iter().zip(self.fields_mut()) {
            let var = Self::env_var(name);
            if let Some(text) = lookup(&var) {
                *field = text.trim().parse().map_err(|_| CliError::Config(format!("{var}={text} is not a number")))?;
            }
        }
        Ok(())
    }

    pub fn find_options(&self) -> FindOptions {
        FindOptions {
            min_cell: self.min_cell,
            newton_tol: self.newton_tol,
            residual_tol: self.residual_tol,
            relative_residual_tol: self.relative_residual_tol,
            ..FindOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// JSON file name for a single-artifact run.
    pub json: Option<String>,
    /// SVG file name for `graph` and `render`.
    pub svg: Option<String>,
    /// Half-width of the square shown in SVG figures.
    pub view: f64,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("."), json: None, svg: None, view: 2.5 }
    }
}

/// Complete description of one CLI run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub seed: u64,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub lambda: Option<LambdaSpec>,
    #[serde(default)]
    pub solution: SolutionSpec,
    #[serde(default)]
    pub predict: PredictSpec,
    #[serde(default)]
    pub find: FindSpec,
    #[serde(default)]
    pub propagate: PropagateSpec,
    #[serde(default)]
    pub quantize: QuantizeSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputSpec,
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parse TOML text into an unvalidated config.
pub fn parse<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        CliError::Parse { path: origin.to_string(), line, column, message: e.message().trim().to_string() }
    })
}

/// Read, parse and resolve a config file. Relative manifest paths are taken
/// relative to the config file.
pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: RunConfig = parse(&text, &path.display().to_string())?;
    if let Some(m) = cfg.potential.manifest.as_mut() {
        if m.is_relative() {
            *m = path.parent().unwrap_or(Path::new("")).join(&*m);
        }
    }
    cfg.resolve()?;
    Ok(cfg)
}

/// Read a physical manifest.
pub fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, &path.display().to_string())
}

impl RunConfig {
    /// Apply environment overrides and check the invariants.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        self.tolerances.apply_overrides(|v| std::env::var(v).ok())?;
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.modes.is_empty() {
            return bad("no modes given".into());
        }
        if let Some(w) = self.modes.windows(2).find(|w| w[0] >= w[1]) {
            return bad(format!(
                "mode {} cannot follow {}; modes must appear in the order graph, propagate, predict, find, compare, quantize, render",
                w[1].name(),
                w[0].name()
            ));
        }
        for (name, value) in Tolerances::NAMES.iter().zip(self.tolerances.clone().fields_mut()) {
            if !(value.is_finite() && *value > 0.0) {
                return bad(format!("tolerance {name} = {value} must be positive"));
            }
        }
        match (&self.potential.manifest, self.potential.degree) {
            (Some(m), None) => {
                if !m.exists() {
                    return bad(format!("manifest {} does not exist", m.display()));
                }
                if self.lambda.is_some() {
                    return bad("a physical manifest fixes λ; remove the [lambda] section".into());
                }
                if !self.potential.reduced.is_empty() {
                    return bad("reduced coefficients cannot be combined with a manifest".into());
                }
            }
            (None, Some(n)) => {
                if n < 2 {
                    return bad(format!("degree {n} must be at least 2"));
                }
                if self.potential.reduced.len() > n - 1 {
                    return bad(format!("{} reduced coefficients given for degree {n}", self.potential.reduced.len()));
                }
                let Some(lambda) = &self.lambda else {
                    return bad("an inline potential needs a [lambda] schedule".into());
                };
                if !lambda.values.is_empty() && lambda.ladder.is_some() {
                    return bad("give either lambda.values or lambda.ladder, not both".into());
                }
                let moduli = lambda.moduli();
                if moduli.is_empty() {
                    return bad("the λ schedule is empty".into());
                }
                if let Some(m) = moduli.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
                    return bad(format!("|λ| = {m} must be positive"));
                }
                if !lambda.phase.is_finite() {
                    return bad("lambda.phase must be finite".into());
                }
            }
            (Some(_), Some(_)) => return bad("give either potential.manifest or potential.degree, not both".into()),
            (None, None) => return bad("potential needs a manifest or a degree".into()),
        }
        if self.modes.contains(&Mode::Propagate) && self.propagate.to.is_empty() {
            return bad("propagate mode needs at least one point in propagate.to".into());
        }
        if self.quantize.s_min > self.quantize.s_max {
            return bad(format!("quantize range {}..{} is empty", self.quantize.s_min, self.quantize.s_max));
        }
        if self.output.json.is_some() && self.modes.iter().filter(|m| m.artifact().is_some()).count() > 1 {
            return bad("output.json names a single artifact but several modes write JSON".into());
        }
        if !(self.output.view > 0.0) {
            return bad("output.view must be positive".into());
        }
        if self.find.box_scale <= 0.0 || self.find.emptiness_side <= 0.0 || self.predict.eps <= 0.0 {
            return bad("find.box_scale, find.emptiness_side and predict.eps must be positive".into());
        }
        if let Some([x0, y0, x1, y1]) = self.find.region {
            if !(x0 < x1 && y0 < y1) {
                return bad("find.region must satisfy x0 < x1 and y0 < y1".into());
            }
        }
        Ok(())
    }

    /// `|λ|` values, or `None` when the manifest fixes λ.
    pub fn moduli(&self) -> Option<Vec<f64>> {
        self.lambda.as_ref().map(LambdaSpec::moduli)
    }

    pub fn json_path(&self, mode: Mode) -> Option<PathBuf> {
        let name = mode.artifact()?;
        Some(self.output.dir.join(self.output.json.as_deref().unwrap_or(name)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "modes = [\"graph\"]\n[potential]\ndegree = 3\n[lambda]\nvalues = [50]\n";

    #[test]
    fn parses_minimal_config() {
        let cfg: RunConfig = parse(BASIC, "t").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.moduli(), Some(vec![50.0]));
        assert_eq!(cfg.solution.sector, 1);
    }

    #[test]
    fn unknown_mode_reports_position() {
        let text = "modes = [\"graph\", \"bogus\"]\n";
        match parse::<RunConfig>(text, "t") {
            Err(CliError::Parse { line, column, .. }) => assert_eq!((line, column), (1, 19)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn modes_must_be_ordered() {
        let cfg: RunConfig = parse(&BASIC.replace("[\"graph\"]", "[\"find\", \"graph\"]"), "t").unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn ladder_schedule() {
        let l = LambdaSpec { ladder: Some(Ladder { start: 20.0, ratio: 2.0, count: 3 }), ..Default::default() };
        assert_eq!(l.moduli(), vec![20.0, 40.0, 80.0]);
    }

    #[test]
    fn overrides_and_positivity() {
        let mut t = Tolerances::default();
        t.apply_overrides(|v| (v == "STOKESZERO_MATCH_CAP").then(|| "2.5".to_string())).unwrap();
        assert_eq!(t.match_cap, 2.5);
        assert!(t.apply_overrides(|_| Some("x".into())).is_err());
        let mut cfg: RunConfig = parse(BASIC, "t").unwrap();
        cfg.tolerances.newton_tol = 0.0;
        assert!(cfg.validate().is_err());
    }
}
