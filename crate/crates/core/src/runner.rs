//! Experiment orchestration: configuration, engine dispatch and output files.
//!
//! A run computes everything in memory first and only then writes its files,
//! so a failing run leaves the output directory untouched.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O error |
//! | 2 | configuration error (including malformed or empty holes) |
//! | 3 | budget exceeded (interval cap, return-time cap) |
//! | 4 | extinction (no surviving particle, surviving mass underflow) |
//! | 5 | `validate` found a failing check |
//! | 6 | numerical failure (root finding, degenerate fit window) |

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cesaro::{self, cesaro_run, invariance_diagnostic, singularity_diagnostic, zero_density_check, DoublingOpen, OpenSystem};
use crate::density::{DensityKind, GridConfig, Transport};
use crate::error::{Error, Result};
use crate::induced::{induced_escape_curve, InducedSystem};
use crate::map::{parse_word, word_string, Hole, MapSystem, Symbol};
use crate::monte_carlo::{survival_streaming, Sampler, RNG_ALGORITHM};
use crate::rates::{beta_sequence, default_window, fit_exponential_rate, fit_polynomial_rate, model_select, EscapeCurve, RateFit};
use crate::survivor::{first_entry_sets, survivors, ExactLimits, IntervalSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_EXTINCTION: i32 = 4;
pub const EXIT_VALIDATION: i32 = 5;
pub const EXIT_NUMERICAL: i32 = 6;

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "OPENLSV_OUT";

/// Header of every curve file.
pub const CSV_HEADER: &str = "t,mass,stderr,engine";

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Config(_) | Error::Domain { .. } | Error::Precondition { .. } | Error::EmptyCylinder { .. } | Error::InvalidHole(_) | Error::UnsupportedSpec(_) => EXIT_CONFIG,
        Error::Budget { .. } | Error::ReturnCap { .. } => EXIT_BUDGET,
        Error::Extinction { .. } | Error::Underflow { .. } => EXIT_EXTINCTION,
        Error::Convergence { .. } | Error::DegenerateWindow(_) | Error::NoAdmissibleWord { .. } => EXIT_NUMERICAL,
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    EscapeRate,
    LimitDistribution,
    Cesaro,
    Induced,
    Validate,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [Self::EscapeRate, Self::LimitDistribution, Self::Cesaro, Self::Induced, Self::Validate];

    pub fn name(self) -> &'static str {
        match self {
            Self::EscapeRate => "escape-rate",
            Self::LimitDistribution => "limit-distribution",
            Self::Cesaro => "cesaro",
            Self::Induced => "induced",
            Self::Validate => "validate",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| config_err(format!("unknown experiment kind '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Exact,
    Density,
    MonteCarlo,
    All,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Exact => "exact",
            Engine::Density => "density",
            Engine::MonteCarlo => "montecarlo",
            Engine::All => "all",
        }
    }

    fn includes(self, e: Engine) -> bool {
        self == e || self == Engine::All
    }
}

impl FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Engine::Exact),
            "density" => Ok(Engine::Density),
            "montecarlo" | "mc" => Ok(Engine::MonteCarlo),
            "all" => Ok(Engine::All),
            _ => Err(config_err(format!("unknown engine '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DensityName {
    Lebesgue,
    Power,
    Srb,
}

impl DensityName {
    pub fn name(self) -> &'static str {
        match self {
            DensityName::Lebesgue => "lebesgue",
            DensityName::Power => "power",
            DensityName::Srb => "srb",
        }
    }
}

impl FromStr for DensityName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lebesgue" => Ok(DensityName::Lebesgue),
            "power" => Ok(DensityName::Power),
            "srb" | "srb_proxy" => Ok(DensityName::Srb),
            _ => Err(config_err(format!("unknown density '{s}'"))),
        }
    }
}

/// Hole specifications: `none`, `J<h>`, `<h>:<word>`, `py:<n>` for
/// `[0, a_n)`, or `control:<lo>,<hi>`.
#[derive(Clone, Debug, PartialEq)]
pub enum HoleSpec {
    None,
    Cylinder { h: usize, word: Vec<Symbol> },
    Neutral(usize),
    Control { lo: f64, hi: f64 },
}

impl fmt::Display for HoleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HoleSpec::None => write!(f, "none"),
            HoleSpec::Cylinder { h, word } => write!(f, "{h}:{}", word_string(word)),
            HoleSpec::Neutral(n) => write!(f, "py:{n}"),
            HoleSpec::Control { lo, hi } => write!(f, "control:{lo},{hi}"),
        }
    }
}

impl FromStr for HoleSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || config_err(format!("malformed hole '{s}'"));
        if s == "none" {
            return Ok(HoleSpec::None);
        }
        if let Some(rest) = s.strip_prefix("py:") {
            return Ok(HoleSpec::Neutral(rest.parse().map_err(|_| bad())?));
        }
        if let Some(rest) = s.strip_prefix("control:") {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            return Ok(HoleSpec::Control { lo: a.trim().parse().map_err(|_| bad())?, hi: b.trim().parse().map_err(|_| bad())? });
        }
        if let Some(rest) = s.strip_prefix('J') {
            let h: usize = rest.parse().map_err(|_| bad())?;
            let word = vec![if h == 0 { Symbol::R } else { Symbol::L }];
            return Ok(HoleSpec::Cylinder { h, word });
        }
        let (h, w) = s.split_once(':').ok_or_else(bad)?;
        let h: usize = h.parse().map_err(|_| bad())?;
        let word = parse_word(w).map_err(|e| config_err(format!("malformed hole word '{w}': {e}")))?;
        if word.is_empty() {
            return Err(bad());
        }
        Ok(HoleSpec::Cylinder { h, word })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub gamma: f64,
    pub hole: HoleSpec,
    pub density: DensityName,
    /// Exponent of the `power` density.
    pub alpha: f64,
    /// Closed iterations of the `srb` density.
    pub burn_in: usize,
    pub engine: Engine,
    pub t_max: usize,
    /// Horizon of the exact engine.
    pub t_exact: usize,
    /// Cells of the density grid on `J_0`.
    pub grid: usize,
    /// Deepest partition element with aligned grid nodes.
    pub align: usize,
    pub n_max: usize,
    pub particles: usize,
    pub seed: u64,
    pub window: Option<(usize, usize)>,
    /// Registered Cesàro system.
    pub system: String,
    pub checkpoints: Vec<usize>,
    /// Depth `i` of the singularity diagnostic.
    pub escape_depth: usize,
    /// Threshold of the zero-density check.
    pub lambda: f64,
    /// Radius of the mass-near-zero diagnostic.
    pub eps: f64,
    pub n_s: Option<usize>,
    pub r_cap: u64,
    pub figure: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::EscapeRate,
            gamma: 0.5,
            hole: HoleSpec::Cylinder { h: 2, word: vec![Symbol::L] },
            density: DensityName::Lebesgue,
            alpha: 0.25,
            burn_in: 200,
            engine: Engine::Density,
            t_max: 1000,
            t_exact: 20,
            grid: GridConfig::default().m0,
            align: GridConfig::default().n_align,
            n_max: crate::map::DEFAULT_N_MAX,
            particles: 1_000_000,
            seed: 1,
            window: None,
            system: "lsv".into(),
            checkpoints: Vec::new(),
            escape_depth: 3,
            lambda: 0.5,
            eps: 0.05,
            n_s: None,
            r_cap: crate::induced::DEFAULT_R_CAP,
            figure: true,
            out: PathBuf::from("openlsv-out"),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| config_err(format!("invalid value '{v}' for {key}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Keys in serialization order.
    pub const KEYS: [&'static str; 24] = [
        "kind", "gamma", "hole", "density", "alpha", "burn_in", "engine", "t_max", "t_exact", "grid", "align", "n_max", "particles", "seed", "window", "system",
        "checkpoints", "escape_depth", "lambda", "eps", "n_s", "r_cap", "figure", "out",
    ];

    /// Sets one key from its text form. Hyphens in keys are accepted.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "kind" => self.kind = v.parse()?,
            "gamma" => self.gamma = parse_num(&key, v)?,
            "hole" => self.hole = v.parse()?,
            "density" => self.density = v.parse()?,
            "alpha" => self.alpha = parse_num(&key, v)?,
            "burn_in" => self.burn_in = parse_num(&key, v)?,
            "engine" => self.engine = v.parse()?,
            "t_max" => self.t_max = parse_num(&key, v)?,
            "t_exact" => self.t_exact = parse_num(&key, v)?,
            "grid" => self.grid = parse_num(&key, v)?,
            "align" => self.align = parse_num(&key, v)?,
            "n_max" => self.n_max = parse_num(&key, v)?,
            "particles" => self.particles = parse_num(&key, v)?,
            "seed" => self.seed = parse_num(&key, v)?,
            "window" => {
                self.window = match v {
                    "auto" => None,
                    _ => match parse_list(&key, v)?.as_slice() {
                        [a, b] => Some((*a, *b)),
                        _ => return Err(config_err("window must be 'auto' or 'lo,hi'")),
                    },
                }
            }
            "system" => self.system = v.to_string(),
            "checkpoints" => self.checkpoints = parse_list(&key, v)?,
            "escape_depth" => self.escape_depth = parse_num(&key, v)?,
            "lambda" => self.lambda = parse_num(&key, v)?,
            "eps" => self.eps = parse_num(&key, v)?,
            "n_s" => self.n_s = if v == "auto" { None } else { Some(parse_num(&key, v)?) },
            "r_cap" => self.r_cap = parse_num(&key, v)?,
            "figure" => self.figure = parse_num(&key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(config_err(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "kind" => self.kind.name().into(),
            "gamma" => self.gamma.to_string(),
            "hole" => self.hole.to_string(),
            "density" => self.density.name().into(),
            "alpha" => self.alpha.to_string(),
            "burn_in" => self.burn_in.to_string(),
            "engine" => self.engine.name().into(),
            "t_max" => self.t_max.to_string(),
            "t_exact" => self.t_exact.to_string(),
            "grid" => self.grid.to_string(),
            "align" => self.align.to_string(),
            "n_max" => self.n_max.to_string(),
            "particles" => self.particles.to_string(),
            "seed" => self.seed.to_string(),
            "window" => self.window.map(|(a, b)| format!("{a},{b}")).unwrap_or_else(|| "auto".into()),
            "system" => self.system.clone(),
            "checkpoints" => join(&self.checkpoints),
            "escape_depth" => self.escape_depth.to_string(),
            "lambda" => self.lambda.to_string(),
            "eps" => self.eps.to_string(),
            "n_s" => self.n_s.map(|n| n.to_string()).unwrap_or_else(|| "auto".into()),
            "r_cap" => self.r_cap.to_string(),
            "figure" => self.figure.to_string(),
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    /// Flat `key=value` text, one key per line.
    pub fn to_text(&self) -> String {
        Self::KEYS.iter().map(|k| format!("{k}={}\n", self.get(k).expect("known key"))).collect()
    }

    /// Parses `key=value` lines over the defaults; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| config_err(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Config lines embedded in output files. The output directory is left
    /// out so that files from identical experiments compare equal.
    fn header_lines(&self) -> Vec<String> {
        Self::KEYS.iter().filter(|&&k| k != "out").map(|k| format!("{k}={}", self.get(k).expect("known key"))).collect()
    }

    fn grid_config(&self) -> GridConfig {
        GridConfig { m0: self.grid, n_align: self.align, ..GridConfig::default() }
    }

    fn density_kind(&self) -> DensityKind {
        match self.density {
            DensityName::Lebesgue => DensityKind::Lebesgue,
            DensityName::Power => DensityKind::Power(self.alpha),
            DensityName::Srb => DensityKind::SrbProxy { burn_in: self.burn_in },
        }
    }

    /// Checks ranges and builds the map system with its hole.
    pub fn build_system(&self) -> Result<MapSystem> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(config_err(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(config_err(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if self.t_max < 1 || self.particles < 1 || self.n_max < 2 {
            return Err(config_err("t_max, particles and n_max must be positive"));
        }
        if !self.grid.is_power_of_two() || self.grid < 2 || self.align < 1 || self.align > self.n_max {
            return Err(config_err("grid must be a power of two and align must lie in [1, n_max]"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) || !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(config_err("lambda and eps must lie in (0, 1)"));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) || self.checkpoints.first() == Some(&0) || self.checkpoints.last().is_some_and(|&c| c > self.t_max) {
            return Err(config_err("checkpoints must increase strictly within [1, t_max]"));
        }
        if let Some((a, b)) = self.window {
            if a >= b || b > self.t_max {
                return Err(config_err("window must satisfy lo < hi <= t_max"));
            }
        }
        let base = MapSystem::new(self.gamma, self.n_max).map_err(|e| config_err(e.to_string()))?;
        let hole = match &self.hole {
            HoleSpec::None => None,
            HoleSpec::Cylinder { h, word } => Some(base.hole_from_word(*h, word).map_err(|e| config_err(e.to_string()))?),
            HoleSpec::Neutral(n) => Some(base.neutral_control_hole(*n).map_err(|e| config_err(e.to_string()))?),
            HoleSpec::Control { lo, hi } => Some(Hole::control(*lo, *hi).map_err(|e| config_err(e.to_string()))?),
        };
        Ok(match hole {
            Some(h) => base.with_hole(h),
            None => base,
        })
    }

    /// Kind-specific preconditions, checked before any computation.
    fn check_kind(&self, sys: &MapSystem) -> Result<()> {
        match self.kind {
            ExperimentKind::EscapeRate => {
                if self.engine.includes(Engine::Exact) && self.density == DensityName::Srb {
                    return Err(config_err("the exact engine supports lebesgue and power densities only"));
                }
            }
            ExperimentKind::LimitDistribution => {
                if sys.hole().is_none() {
                    return Err(config_err("limit-distribution needs a hole"));
                }
            }
            ExperimentKind::Cesaro => {
                if !cesaro::REGISTERED.contains(&self.system.as_str()) {
                    return Err(config_err(format!("unknown Cesàro system '{}'", self.system)));
                }
                if self.particles < 10_000 {
                    return Err(config_err("Cesàro runs need at least 10^4 particles"));
                }
            }
            ExperimentKind::Induced => {
                InducedSystem::new(sys, self.n_s, Some(self.r_cap)).map_err(|e| config_err(e.to_string()))?;
                if self.t_max < 10 {
                    return Err(config_err("induced runs need t_max >= 10"));
                }
            }
            ExperimentKind::Validate => {}
        }
        Ok(())
    }
}

/// Machine-parsable run summary: `[module]` section headers followed by
/// `module.key=value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl Summary {
    pub fn put(&mut self, module: &str, key: &str, value: impl fmt::Display) {
        let entry = (key.to_string(), value.to_string());
        match self.sections.iter_mut().find(|s| s.0 == module) {
            Some(s) => s.1.push(entry),
            None => self.sections.push((module.to_string(), vec![entry])),
        }
    }

    pub fn get(&self, module: &str, key: &str) -> Option<&str> {
        self.sections.iter().find(|s| s.0 == module)?.1.iter().find(|e| e.0 == key).map(|e| e.1.as_str())
    }

    fn put_fit(&mut self, prefix: &str, fit: &Result<RateFit>) {
        match fit {
            Ok(f) => {
                self.put("rate_analysis", &format!("{prefix}.model"), f.model.name());
                self.put("rate_analysis", &format!("{prefix}.value"), f.value);
                self.put("rate_analysis", &format!("{prefix}.ci"), f.ci);
                self.put("rate_analysis", &format!("{prefix}.r2"), f.r2);
                self.put("rate_analysis", &format!("{prefix}.window"), format!("{},{}", f.window.0, f.window.1));
            }
            Err(e) => self.put("rate_analysis", &format!("{prefix}.error"), e),
        }
    }

    pub fn render(&self, cfg: &ExperimentConfig) -> String {
        let mut s = String::from("# openlsv run summary\n[config]\n");
        for l in cfg.header_lines() {
            let _ = writeln!(s, "config.{l}");
        }
        for (module, entries) in &self.sections {
            let _ = writeln!(s, "[{module}]");
            for (k, v) in entries {
                let _ = writeln!(s, "{module}.{k}={v}");
            }
        }
        s
    }
}

/// One named curve produced by a run.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedCurve {
    pub engine: String,
    pub curve: EscapeCurve,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub summary: Summary,
    pub curves: Vec<NamedCurve>,
    pub exit_code: i32,
}

/// Curve file contents: `#` header lines with the config and provenance,
/// then the CSV table.
pub fn curve_text(curve: &EscapeCurve, engine: &str, header: &[String]) -> String {
    let mut s = String::new();
    for l in header {
        let _ = writeln!(s, "# {l}");
    }
    let _ = writeln!(s, "# provenance={}", curve.provenance);
    let _ = writeln!(s, "{CSV_HEADER}");
    for i in 0..curve.len() {
        let _ = writeln!(s, "{},{},{},{engine}", curve.times[i], curve.masses[i], curve.stderr[i]);
    }
    s
}

pub fn emit_curve(curve: &EscapeCurve, engine: &str, header: &[String], path: &Path) -> Result<()> {
    write_file(path, &curve_text(curve, engine, header))
}

/// Parses a curve file back into the curve and its engine label.
pub fn parse_curve(text: &str) -> Result<(EscapeCurve, String)> {
    let mut provenance = String::new();
    let mut seen_header = false;
    let (mut t, mut m, mut se) = (Vec::new(), Vec::new(), Vec::new());
    let mut engine = String::new();
    for line in text.lines() {
        if let Some(c) = line.strip_prefix('#') {
            if let Some(p) = c.trim_start().strip_prefix("provenance=") {
                provenance = p.to_string();
            }
            continue;
        }
        if !seen_header {
            if line != CSV_HEADER {
                return Err(config_err(format!("expected header '{CSV_HEADER}', got '{line}'")));
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(config_err(format!("malformed row '{line}'")));
        }
        t.push(parse_num("t", f[0])?);
        m.push(parse_num("mass", f[1])?);
        se.push(parse_num("stderr", f[2])?);
        engine = f[3].to_string();
    }
    if !seen_header {
        return Err(config_err("missing curve header"));
    }
    Ok((EscapeCurve::new(t, m, se, provenance)?, engine))
}

pub fn read_curve(path: &Path) -> Result<(EscapeCurve, String)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_curve(&text)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Axis scaling of a figure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    LogLog,
    SemiLog,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// A standalone SVG with one polyline per curve and per fit, plus axes.
pub fn figure_svg(curves: &[NamedCurve], fits: &[RateFit], scale: Scale, header: &[String]) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::precondition("cli_runner", "a figure needs at least one curve"));
    }
    let fx = |t: f64| match scale {
        Scale::LogLog => t.max(1.0).log10(),
        Scale::SemiLog => t,
    };
    let pts = |c: &EscapeCurve| -> Vec<(f64, f64)> {
        c.times.iter().zip(&c.masses).filter(|(&t, &m)| m > 0.0 && (scale == Scale::SemiLog || t > 0)).map(|(&t, &m)| (fx(t as f64), m.log10())).collect()
    };
    let series: Vec<Vec<(f64, f64)>> = curves.iter().map(|c| pts(&c.curve)).collect();
    let all = series.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, -1.0, 0.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 = y1 - 1.0;
    }
    let (w, h, pad) = (640.0, 480.0, 60.0);
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, "<!--");
    for l in header {
        let _ = writeln!(s, "{}", l.replace("--", "- -"));
    }
    let _ = writeln!(s, "-->");
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad);
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    let xlabel = match scale {
        Scale::LogLog => "log10 t",
        Scale::SemiLog => "t",
    };
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{xlabel}</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(s, r#"<text x="15" y="{}" font-size="14" transform="rotate(-90 15 {})" text-anchor="middle">log10 mass</text>"#, h / 2.0, h / 2.0);
    let _ = writeln!(s, r#"<text x="{pad}" y="{}" font-size="11">{x0:.3}</text><text x="{}" y="{}" font-size="11" text-anchor="end">{x1:.3}</text>"#, h - pad + 16.0, w - pad, h - pad + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{y1:.3}</text><text x="{}" y="{}" font-size="11" text-anchor="end">{y0:.3}</text>"#, pad - 4.0, pad + 4.0, pad - 4.0, h - pad);
    let poly = |s: &mut String, p: &[(f64, f64)], color: &str, dash: bool, title: &str| {
        let coords: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let dash = if dash { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"><title>{title}</title></polyline>"#, coords.join(" "));
    };
    for (i, (c, p)) in curves.iter().zip(&series).enumerate() {
        poly(&mut s, p, PALETTE[i % PALETTE.len()], false, &c.engine);
    }
    for (i, f) in fits.iter().enumerate() {
        let (a, b) = (f.window.0.max(1) as f64, f.window.1 as f64);
        let p: Vec<(f64, f64)> = (0..=32).map(|k| a + (b - a) * k as f64 / 32.0).map(|t| (fx(t), f.predict(t).log10())).collect();
        poly(&mut s, &p, "black", true, &format!("{} fit {} (window {}-{}) #{i}", f.model.name(), f.value, f.window.0, f.window.1));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_figure(curves: &[NamedCurve], fits: &[RateFit], scale: Scale, header: &[String], path: &Path) -> Result<()> {
    write_file(path, &figure_svg(curves, fits, scale, header)?)
}

/// Everything a run produces before it touches the file system.
struct Outcome {
    summary: Summary,
    curves: Vec<NamedCurve>,
    fits: Vec<RateFit>,
    scale: Scale,
    exit_code: i32,
}

impl Outcome {
    fn new() -> Self {
        Outcome { summary: Summary::default(), curves: Vec::new(), fits: Vec::new(), scale: Scale::LogLog, exit_code: EXIT_OK }
    }
}

/// Runs one experiment and writes its files into `cfg.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let sys = cfg.build_system()?;
    cfg.check_kind(&sys)?;
    let outcome = match cfg.kind {
        ExperimentKind::EscapeRate => escape_rate(cfg, &sys)?,
        ExperimentKind::LimitDistribution => limit_distribution(cfg, &sys)?,
        ExperimentKind::Cesaro => cesaro_experiment(cfg, &sys)?,
        ExperimentKind::Induced => induced(cfg, &sys)?,
        ExperimentKind::Validate => validate(),
    };
    fs::create_dir_all(&cfg.out).map_err(|e| Error::Io(format!("{}: {e}", cfg.out.display())))?;
    let header = cfg.header_lines();
    let mut files = Vec::new();
    let p = cfg.out.join("config.txt");
    write_file(&p, &cfg.to_text())?;
    files.push(p);
    for c in &outcome.curves {
        let p = cfg.out.join(format!("curve_{}.csv", c.engine));
        emit_curve(&c.curve, &c.engine, &header, &p)?;
        files.push(p);
    }
    let p = cfg.out.join("summary.txt");
    write_file(&p, &outcome.summary.render(cfg))?;
    files.push(p);
    if cfg.figure && !outcome.curves.is_empty() {
        let p = cfg.out.join("figure.svg");
        emit_figure(&outcome.curves, &outcome.fits, outcome.scale, &header, &p)?;
        files.push(p);
    }
    Ok(RunReport { files, summary: outcome.summary, curves: outcome.curves, exit_code: outcome.exit_code })
}

fn fit_window(cfg: &ExperimentConfig, c: &EscapeCurve) -> (usize, usize) {
    cfg.window.unwrap_or_else(|| default_window(c))
}

fn record_fits(cfg: &ExperimentConfig, out: &mut Outcome, primary: &EscapeCurve) {
    let window = fit_window(cfg, primary);
    let poly = fit_polynomial_rate(primary, window);
    out.summary.put_fit("polynomial", &poly);
    if let Ok(f) = poly {
        out.fits.push(f);
    }
    match model_select(primary) {
        Ok(sel) => {
            out.summary.put("rate_analysis", "model_select", sel.choice.map(|m| m.name()).unwrap_or("inconclusive"));
            out.summary.put("rate_analysis", "model_select.r2_polynomial", sel.polynomial.r2);
            out.summary.put("rate_analysis", "model_select.r2_exponential", sel.exponential.r2);
        }
        Err(e) => out.summary.put("rate_analysis", "model_select.error", e),
    }
}

fn escape_rate(cfg: &ExperimentConfig, sys: &MapSystem) -> Result<Outcome> {
    let mut out = Outcome::new();
    let kind = cfg.density_kind();
    let mut exact = None;
    if cfg.engine.includes(Engine::Exact) {
        let t_e = cfg.t_exact.min(cfg.t_max);
        let sets = survivors(sys, t_e, ExactLimits::default())?;
        let masses = sets
            .iter()
            .map(|s| match cfg.density {
                DensityName::Power => s.alpha_mass(cfg.alpha),
                _ => Ok(s.lebesgue_mass()),
            })
            .collect::<Result<Vec<f64>>>()?;
        out.summary.put("survivor_exact", "t_max", t_e);
        out.summary.put("survivor_exact", "intervals", sets.last().map(|s| s.count()).unwrap_or(0));
        out.summary.put("survivor_exact", "mass_at_t_max", masses[t_e]);
        // Shell ratios t^{(γ+1)/γ}·|İ^{t-1} ∖ İ^t|, with and without the 1/log t factor.
        let leb: Vec<f64> = sets.iter().map(|s| s.lebesgue_mass()).collect();
        let p = (cfg.gamma + 1.0) / cfg.gamma;
        let (mut with_log, mut plain) = (0.0f64, 0.0f64);
        for t in 2..=t_e {
            let r = (t as f64).powf(p) * (leb[t - 1] - leb[t]).max(0.0);
            with_log = with_log.max(r / (t as f64).ln());
            plain = plain.max(r);
        }
        if t_e >= 2 {
            out.summary.put("survivor_exact", "shell_ratio_log_t.max", with_log);
            out.summary.put("survivor_exact", "shell_ratio.max", plain);
        }
        let c =EscapeCurve::deterministic(masses, format!("exact gamma={} hole={} density={}", cfg.gamma, cfg.hole, kind_label(cfg)))?;
        exact = Some(c.clone());
        out.curves.push(NamedCurve { engine: "exact".into(), curve: c });
    }
    let needs_transport = cfg.engine.includes(Engine::Density) || (cfg.engine.includes(Engine::MonteCarlo) && cfg.density == DensityName::Srb);
    let transport = if needs_transport { Some(Transport::new(sys, &cfg.grid_config())?) } else { None };
    let mut density_curve = None;
    if cfg.engine.includes(Engine::Density) {
        let tr = transport.as_ref().expect("built above");
        let f = tr.make_density(&kind)?;
        let run = tr.iterate_open(&f, cfg.t_max, &[])?;
        out.summary.put("density_transport", "grid_nodes", tr.grid().len());
        out.summary.put("density_transport", "mass_at_t_max", run.curve.masses[cfg.t_max]);
        density_curve = Some(run.curve.clone());
        out.curves.push(NamedCurve { engine: "density".into(), curve: run.curve });
    }
    let mut mc_curve = None;
    if cfg.engine.includes(Engine::MonteCarlo) {
        let sampler = match kind {
            DensityKind::Lebesgue => Sampler::Lebesgue,
            DensityKind::Power(a) => Sampler::Power(a),
            DensityKind::SrbProxy { .. } => Sampler::Rejection(std::sync::Arc::new(transport.as_ref().expect("built above").make_density(&kind)?)),
        };
        let c = survival_streaming(sys, &sampler, cfg.particles, cfg.t_max, cfg.seed)?;
        out.summary.put("monte_carlo", "particles", cfg.particles);
        out.summary.put("monte_carlo", "rng", RNG_ALGORITHM);
        out.summary.put("monte_carlo", "mass_at_t_max", c.masses[cfg.t_max]);
        mc_curve = Some(c.clone());
        out.curves.push(NamedCurve { engine: "montecarlo".into(), curve: c });
    }
    if let Some(ex) = &exact {
        let t_c = ex.t_max().min(20);
        out.summary.put("cross_check", "t_max", t_c);
        if let Some(d) = &density_curve {
            let rel = (0..=t_c).map(|t| ((d.masses[t] - ex.masses[t]) / ex.masses[t]).abs()).fold(0.0, f64::max);
            out.summary.put("cross_check", "density_vs_exact.max_rel", rel);
            out.summary.put("cross_check", "density_vs_exact.pass", rel <= 1e-4);
        }
        if let Some(m) = &mc_curve {
            let n = cfg.particles as f64;
            let z = (0..=t_c)
                .map(|t| {
                    let p = ex.masses[t];
                    let se = (p * (1.0 - p) / n).sqrt();
                    if se > 0.0 {
                        (m.masses[t] - p).abs() / se
                    } else {
                        0.0
                    }
                })
                .fold(0.0, f64::max);
            out.summary.put("cross_check", "montecarlo_vs_exact.max_z", z);
            out.summary.put("cross_check", "montecarlo_vs_exact.pass", z <= 4.0);
        }
    }
    let primary = density_curve.or(mc_curve).or(exact).expect("at least one engine");
    record_fits(cfg, &mut out, &primary);
    Ok(out)
}

fn kind_label(cfg: &ExperimentConfig) -> String {
    match cfg.density {
        DensityName::Lebesgue => "lebesgue".into(),
        DensityName::Power => format!("power({})", cfg.alpha),
        DensityName::Srb => format!("srb(burn_in={})", cfg.burn_in),
    }
}

fn dyadic_checkpoints(cfg: &ExperimentConfig) -> Vec<usize> {
    if !cfg.checkpoints.is_empty() {
        return cfg.checkpoints.clone();
    }
    let mut v: Vec<usize> = (0..).map(|k| 1usize << k).take_while(|&t| t < cfg.t_max).collect();
    v.push(cfg.t_max);
    v
}

fn limit_distribution(cfg: &ExperimentConfig, sys: &MapSystem) -> Result<Outcome> {
    let mut out = Outcome::new();
    let tr = Transport::new(sys, &cfg.grid_config())?;
    let f = tr.make_density(&cfg.density_kind())?;
    let cps = dyadic_checkpoints(cfg);
    let run = tr.iterate_open(&f, cfg.t_max, &cps)?;
    for (t, g) in &run.checkpoints {
        out.summary.put("density_transport", &format!("mass_near_zero.t{t}"), g.mass_near_zero(cfg.eps)?);
    }
    let betas = beta_sequence(&run.curve);
    let lo = (cfg.t_max / 100).max(1);
    let tail = betas.iter().filter(|b| b.0 >= lo).map(|b| b.2).fold(0.0, f64::max);
    out.summary.put("rate_analysis", "beta.max_t_one_minus_beta", tail);
    out.summary.put("rate_analysis", "beta.window", format!("{lo},{}", cfg.t_max));
    if let Some(last) = betas.last() {
        out.summary.put("rate_analysis", "beta.last", last.1);
    }
    let lambda_profile = zero_density_check(&betas.iter().skip(1).map(|b| b.1).collect::<Vec<_>>(), cfg.lambda)?;
    if let Some(&(k, d)) = lambda_profile.last() {
        out.summary.put("rate_analysis", &format!("zero_density.k{k}"), d);
    }
    record_fits(cfg, &mut out, &run.curve);
    out.curves.push(NamedCurve { engine: "density".into(), curve: run.curve });
    Ok(out)
}

fn cesaro_experiment(cfg: &ExperimentConfig, sys: &MapSystem) -> Result<Outcome> {
    let mut out = Outcome::new();
    let system: Box<dyn OpenSystem> = match cfg.system.as_str() {
        "lsv" => {
            let tr = Transport::new(sys, &cfg.grid_config())?;
            cesaro::by_name("lsv", Some(sys), Some(tr.grid().nodes().to_vec()))?
        }
        other => cesaro::by_name(other, None, None)?,
    };
    let cps = if cfg.checkpoints.is_empty() {
        let mut v: Vec<usize> = (0..).map(|k| 10usize.pow(k)).skip(1).take_while(|&t| t < cfg.t_max).collect();
        v.push(cfg.t_max);
        v
    } else {
        cfg.checkpoints.clone()
    };
    let states = cesaro_run(system.as_ref(), cfg.particles, &cps, cfg.seed, None)?;
    let family = cesaro::default_family();
    out.summary.put("cesaro_general", "system", system.label());
    out.summary.put("cesaro_general", "note", "diagnostics describe one sequence at finite t");
    for s in &states {
        let t = s.t;
        match singularity_diagnostic(system.as_ref(), s, cfg.escape_depth) {
            Ok(v) => out.summary.put("cesaro_general", &format!("singularity.i{}.t{t}", cfg.escape_depth), v),
            Err(e) => out.summary.put("cesaro_general", &format!("singularity.t{t}.error"), e),
        }
        out.summary.put("cesaro_general", &format!("invariance.t{t}"), invariance_diagnostic(system.as_ref(), s, &family));
        out.summary.put("cesaro_general", &format!("mass_near_zero.t{t}"), s.mass_below(cfg.eps));
    }
    let last = states.last().expect("nonempty checkpoints");
    let profile = zero_density_check(&last.betas(), cfg.lambda)?;
    for (k, d) in &profile {
        out.summary.put("cesaro_general", &format!("zero_density.k{k}"), d);
    }
    let norm = &last.per_step_norm;
    let curve = EscapeCurve::new((0..norm.len()).collect(), norm.clone(), vec![0.0; norm.len()], format!("cesaro {} n={} seed={} rng={RNG_ALGORITHM}", system.label(), cfg.particles, cfg.seed))?;
    out.curves.push(NamedCurve { engine: "cesaro".into(), curve });
    Ok(out)
}

fn induced(cfg: &ExperimentConfig, sys: &MapSystem) -> Result<Outcome> {
    let mut out = Outcome::new();
    out.scale = Scale::SemiLog;
    let ind = InducedSystem::new(sys, cfg.n_s, Some(cfg.r_cap))?;
    let run = induced_escape_curve(sys, &ind, cfg.particles, cfg.t_max, cfg.seed)?;
    out.summary.put("induced_map", "n_s", ind.n_s());
    out.summary.put("induced_map", "capped", run.capped);
    let window = cfg.window.unwrap_or((5, cfg.t_max));
    let fit = fit_exponential_rate(&run.curve, window);
    if let Ok(f) = &fit {
        out.summary.put("induced_map", "sigma", (-f.value).exp());
        out.fits.push(*f);
    }
    out.summary.put_fit("exponential", &fit);
    out.curves.push(NamedCurve { engine: "induced".into(), curve: run.curve });
    Ok(out)
}

/// Result of one invariant check of the `validate` suite.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(module: &'static str, name: &'static str, r: Result<(bool, String)>) -> Check {
    match r {
        Ok((pass, detail)) => Check { module, name, pass, detail },
        Err(e) => Check { module, name, pass: false, detail: e.to_string() },
    }
}

/// Quick invariant checks across every module.
pub fn validation_suite() -> Vec<Check> {
    let j2 = || MapSystem::with_cylinder_hole(0.5, 10_000, 2, &[Symbol::L]);
    vec![
        check(
            "map_core",
            "branch_inverse_round_trip",
            (|| {
                let sys = j2()?;
                let mut worst = 0.0f64;
                for k in 1..1000 {
                    let y = k as f64 / 1000.0;
                    worst = worst.max((sys.apply(sys.invert_left(y)?)? - y).abs()).max((sys.apply(sys.invert_right(y)?)? - y).abs());
                }
                Ok((worst < 1e-13, format!("max error {worst}")))
            })(),
        ),
        check(
            "map_core",
            "partition_decreasing",
            (|| {
                let sys = j2()?;
                let a = sys.partition().endpoints();
                Ok((a.windows(2).all(|w| w[1] < w[0]), format!("{} endpoints", a.len())))
            })(),
        ),
        check(
            "survivor_exact",
            "first_entry_telescoping",
            (|| {
                let sys = j2()?;
                let surv = survivors(&sys, 12, ExactLimits::default())?;
                let entries = first_entry_sets(&sys, 12, ExactLimits::default())?;
                let total = surv[12].lebesgue_mass() + entries.iter().map(IntervalSet::lebesgue_mass).sum::<f64>();
                Ok(((total - 1.0).abs() < 1e-12, format!("total {total}")))
            })(),
        ),
        check(
            "density_transport",
            "closed_mass_conservation",
            (|| {
                let sys = j2()?;
                let tr = Transport::new(&sys.closed(), &GridConfig::coarse())?;
                let f = tr.make_density(&DensityKind::Lebesgue)?;
                let run = tr.iterate_open(&f, 20, &[])?;
                let err = run.curve.masses.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
                Ok((err < 1e-8, format!("max error {err}")))
            })(),
        ),
        check(
            "density_transport",
            "positivity",
            (|| {
                let sys = j2()?;
                let tr = Transport::new(&sys, &GridConfig::coarse())?;
                let f = tr.make_density(&DensityKind::Power(0.25))?;
                let run = tr.iterate_open(&f, 10, &[10])?;
                let g = &run.checkpoints[0].1;
                Ok((g.g_right().iter().chain(g.g_left()).all(|&v| v >= 0.0), "nonnegative nodal values".into()))
            })(),
        ),
        check(
            "monte_carlo",
            "seed_determinism",
            (|| {
                let sys = j2()?;
                let a = survival_streaming(&sys, &Sampler::Lebesgue, 100_000, 30, 9)?;
                let b = survival_streaming(&sys, &Sampler::Lebesgue, 100_000, 30, 9)?;
                Ok((a == b, "identical curves".into()))
            })(),
        ),
        check(
            "rate_analysis",
            "synthetic_power_law",
            (|| {
                let masses: Vec<f64> = (0..=200).map(|t| (1.0 + t as f64).powi(-2).min(1.0)).collect();
                let c = EscapeCurve::deterministic(masses, "synthetic")?;
                let f = fit_polynomial_rate(&c, (100, 200))?;
                Ok(((f.value - 2.0).abs() < 0.02, format!("exponent {}", f.value)))
            })(),
        ),
        check(
            "induced_map",
            "return_times",
            (|| {
                let sys = j2()?;
                let ind = InducedSystem::new(&sys, None, None)?;
                let mut ok = true;
                for k in 0..1000 {
                    let x = ind.lo() + (1.0 - ind.lo()) * (k as f64 + 0.5) / 1000.0;
                    let (sx, r) = crate::induced::first_return(&sys, &ind, x)?;
                    ok &= r >= 1 && sx >= ind.lo() && sx < 1.0;
                }
                Ok((ok, "R >= 1 and S x in I_S".into()))
            })(),
        ),
        check(
            "cesaro_general",
            "terms_normalized",
            (|| {
                let sys = DoublingOpen::new(0.0, 0.25, 256)?;
                let s = cesaro_run(&sys, 20_000, &[20], 1, None)?.pop().expect("one state");
                let err = s.term_mass.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
                Ok((err < 1e-12 && (s.total_mass() - 1.0).abs() < 1e-9, format!("max term error {err}")))
            })(),
        ),
        check(
            "cli_runner",
            "config_round_trip",
            (|| {
                let mut cfg = ExperimentConfig::default();
                cfg.set("hole", "3:LRR")?;
                cfg.set("checkpoints", "1,10,100")?;
                let back = ExperimentConfig::from_text(&cfg.to_text())?;
                Ok((back == cfg, "lossless".into()))
            })(),
        ),
    ]
}

fn validate() -> Outcome {
    let mut out = Outcome::new();
    let checks = validation_suite();
    for c in &checks {
        out.summary.put(c.module, &format!("check.{}", c.name), if c.pass { "PASS" } else { "FAIL" });
        out.summary.put(c.module, &format!("check.{}.detail", c.name), &c.detail);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    out.summary.put("cli_runner", "validate.failed", failed);
    if failed > 0 {
        out.exit_code = EXIT_VALIDATION;
    }
    out
}
