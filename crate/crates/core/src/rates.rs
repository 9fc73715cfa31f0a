//! Escape curves and what can be read off them: polynomial exponents,
//! exponential rates, model selection between the two regimes, the ratio
//! sequence `β_t`, plus the numerical checks of the distortion bounds and
//! of the double-sum estimate used for the upper bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::map::{MapSystem, Symbol};

const MODULE: &str = "rate_analysis";

/// Relative slack allowed when validating monotonicity and the upper bound 1;
/// the density engine conserves mass only up to discretization error.
pub const MONOTONE_SLACK: f64 = 1e-9;

/// Surviving mass as a function of time, with one standard error per point
/// (zero for deterministic engines).
#[derive(Clone, Debug, PartialEq)]
pub struct EscapeCurve {
    pub times: Vec<usize>,
    pub masses: Vec<f64>,
    pub stderr: Vec<f64>,
    pub provenance: String,
}

impl EscapeCurve {
    pub fn new(times: Vec<usize>, masses: Vec<f64>, stderr: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        let c = EscapeCurve { times, masses, stderr, provenance: provenance.into() };
        c.validate()?;
        Ok(c)
    }

    /// A deterministic curve over `t = 0, 1, …`.
    pub fn deterministic(masses: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        let n = masses.len();
        Self::new((0..n).collect(), masses, vec![0.0; n], provenance)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.masses.len() != n || self.stderr.len() != n {
            return Err(Error::domain(MODULE, "curve columns have different lengths"));
        }
        for i in 0..n {
            let m = self.masses[i];
            if !(m >= 0.0 && m <= 1.0 + MONOTONE_SLACK) {
                return Err(Error::domain(MODULE, format!("mass {m} at t = {} outside [0, 1]", self.times[i])));
            }
            if !(self.stderr[i] >= 0.0) {
                return Err(Error::domain(MODULE, "negative or NaN standard error"));
            }
            if i > 0 {
                if self.times[i] <= self.times[i - 1] {
                    return Err(Error::domain(MODULE, "times must be strictly increasing"));
                }
                if m > self.masses[i - 1] * (1.0 + MONOTONE_SLACK) {
                    return Err(Error::domain(MODULE, format!("mass increases at t = {}", self.times[i])));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_max(&self) -> usize {
        self.times.last().copied().unwrap_or(0)
    }

    /// Mass at time `t`, if recorded.
    pub fn mass_at(&self, t: usize) -> Option<f64> {
        self.times.binary_search(&t).ok().map(|i| self.masses[i])
    }

    /// Keeps only the points with `t ≤ t_hi`.
    pub fn truncated(&self, t_hi: usize) -> EscapeCurve {
        let k = self.times.partition_point(|&t| t <= t_hi);
        EscapeCurve {
            times: self.times[..k].to_vec(),
            masses: self.masses[..k].to_vec(),
            stderr: self.stderr[..k].to_vec(),
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Model {
    Polynomial,
    Exponential,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Polynomial => "polynomial",
            Model::Exponential => "exponential",
        }
    }
}

/// A fitted decay law. `value` is the exponent `e` of `m ~ t^{-e}` or the
/// rate `r` of `m ~ e^{-r t}`; `ci` is a 95% half-width from the regression
/// residuals, which is optimistic because log-log residuals are correlated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub model: Model,
    pub value: f64,
    pub ci: f64,
    pub r2: f64,
    pub intercept: f64,
    pub window: (usize, usize),
    pub points: usize,
}

impl RateFit {
    /// The fitted curve evaluated at `t`.
    pub fn predict(&self, t: f64) -> f64 {
        match self.model {
            Model::Polynomial => (self.intercept - self.value * t.ln()).exp(),
            Model::Exponential => (self.intercept - self.value * t).exp(),
        }
    }
}

pub fn default_window(c: &EscapeCurve) -> (usize, usize) {
    let t = c.t_max();
    ((t / 10).max(1), t)
}

fn fit(c: &EscapeCurve, window: (usize, usize), model: Model) -> Result<RateFit> {
    let (lo, hi) = window;
    if lo >= hi {
        return Err(Error::DegenerateWindow(format!("window [{lo}, {hi}] is empty")));
    }
    let idx: Vec<usize> = (0..c.len())
        .filter(|&i| c.times[i] >= lo && c.times[i] <= hi && !(model == Model::Polynomial && c.times[i] == 0))
        .collect();
    if idx.len() < 10 {
        return Err(Error::DegenerateWindow(format!("{} points in [{lo}, {hi}], need at least 10", idx.len())));
    }
    if idx.iter().any(|&i| !(c.masses[i] > 0.0)) {
        return Err(Error::DegenerateWindow(format!("nonpositive mass inside [{lo}, {hi}]")));
    }
    let weighted = idx.iter().all(|&i| c.stderr[i] > 0.0);
    let mut xs = Vec::with_capacity(idx.len());
    let mut ys = Vec::with_capacity(idx.len());
    let mut ws = Vec::with_capacity(idx.len());
    for &i in &idx {
        let t = c.times[i] as f64;
        xs.push(match model {
            Model::Polynomial => t.ln(),
            Model::Exponential => t,
        });
        ys.push(c.masses[i].ln());
        ws.push(if weighted { (c.masses[i] / c.stderr[i]).powi(2) } else { 1.0 });
    }
    let (slope, intercept, se, r2) = weighted_regression(&xs, &ys, &ws)?;
    Ok(RateFit { model, value: -slope, ci: 1.96 * se, r2, intercept, window, points: idx.len() })
}

/// Weighted least squares `y = a + b x`; returns `(b, a, se(b), R²)`.
fn weighted_regression(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<(f64, f64, f64, f64)> {
    let sw: f64 = ws.iter().sum();
    let xm = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ym = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        sxx += w * (x - xm) * (x - xm);
        sxy += w * (x - xm) * (y - ym);
        syy += w * (y - ym) * (y - ym);
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateWindow("abscissae do not vary".into()));
    }
    let b = sxy / sxx;
    let a = ym - b * xm;
    let ss_res: f64 = xs.iter().zip(ys).zip(ws).map(|((x, y), w)| w * (y - a - b * x).powi(2)).sum();
    let n = xs.len() as f64;
    let se = (ss_res / (n - 2.0) / sxx).sqrt();
    let r2 = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok((b, a, se, r2))
}

/// Least squares of `log m` against `log t`; the exponent is minus the slope.
pub fn fit_polynomial_rate(c: &EscapeCurve, window: (usize, usize)) -> Result<RateFit> {
    fit(c, window, Model::Polynomial)
}

/// Least squares of `log m` against `t`; the rate is minus the slope.
pub fn fit_exponential_rate(c: &EscapeCurve, window: (usize, usize)) -> Result<RateFit> {
    fit(c, window, Model::Exponential)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSelection {
    /// `None` when the two R² values differ by less than [`INCONCLUSIVE_R2`].
    pub choice: Option<Model>,
    pub polynomial: RateFit,
    pub exponential: RateFit,
}

pub const INCONCLUSIVE_R2: f64 = 1e-3;

/// Fits both laws on the tail half of the curve and keeps the better one.
pub fn model_select(c: &EscapeCurve) -> Result<ModelSelection> {
    let pos: Vec<usize> = (0..c.len()).filter(|&i| c.masses[i] > 0.0 && c.times[i] > 0).collect();
    if pos.len() < 30 {
        return Err(Error::DegenerateWindow(format!("model selection needs 30 points, got {}", pos.len())));
    }
    let window = (c.times[pos[pos.len() / 2]], c.times[*pos.last().expect("nonempty")]);
    let polynomial = fit_polynomial_rate(c, window)?;
    let exponential = fit_exponential_rate(c, window)?;
    let d = polynomial.r2 - exponential.r2;
    let choice = if d.abs() < INCONCLUSIVE_R2 {
        None
    } else if d > 0.0 {
        Some(Model::Polynomial)
    } else {
        Some(Model::Exponential)
    };
    Ok(ModelSelection { choice, polynomial, exponential })
}

/// `(t, β_t, t(1 - β_t))` with `β_t = m_{t+1}/m_t`, for consecutive times
/// with positive mass.
pub fn beta_sequence(c: &EscapeCurve) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::with_capacity(c.len());
    for i in 0..c.len().saturating_sub(1) {
        if c.times[i + 1] != c.times[i] + 1 || !(c.masses[i] > 0.0) {
            continue;
        }
        let t = c.times[i];
        let beta = (c.masses[i + 1] / c.masses[i]).min(1.0);
        out.push((t, beta, t as f64 * (1.0 - beta)));
    }
    out
}

/// Suprema of the two distortion ratios over the sampled pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistortionReport {
    pub t: usize,
    pub n: usize,
    /// `max DT^t(x)^{-1} ((n+t)/n)^{(γ+1)/γ}`.
    pub part_a: f64,
    /// `max |log DT^t(x) - log DT^t(y)| / |T^t x - T^t y|^p`, `p = γ/(γ+1)`.
    pub part_b: f64,
    pub pairs: usize,
}

/// Samples pairs `x, y` of a common refined cylinder with `Tᵗx, Tᵗy ∈ J_n`,
/// obtained by pulling target points of `J_n` back along words of length `t`.
/// The all-`L` and all-`R` words are always included; `samples` further words
/// are drawn at random. When the system has a hole, the backward orbit must
/// avoid it at times `0..t`.
pub fn distortion_check(sys: &MapSystem, t: usize, n: usize, samples: usize, seed: u64) -> Result<DistortionReport> {
    if t < 1 || n < 1 {
        return Err(Error::precondition(MODULE, "distortion check needs t >= 1 and n >= 1"));
    }
    if n > sys.partition().n_max() {
        return Err(Error::precondition(MODULE, format!("n = {n} exceeds the partition depth")));
    }
    let gamma = sys.gamma();
    let p = gamma / (gamma + 1.0);
    let (lo, hi) = sys.partition().cell(n);
    let mut targets = vec![lo, hi];
    for k in 1..8 {
        targets.push(lo + (hi - lo) * k as f64 / 8.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((t as u64) << 32) ^ n as u64);
    let mut words: Vec<Vec<Symbol>> = vec![vec![Symbol::L; t], vec![Symbol::R; t]];
    let mut attempts = 0;
    while words.len() < samples + 2 && attempts < 20 * (samples + 2) {
        attempts += 1;
        words.push((0..t).map(|_| if rng.random::<bool>() { Symbol::L } else { Symbol::R }).collect());
    }
    let scale = ((n + t) as f64 / n as f64).powf((gamma + 1.0) / gamma);
    let map = sys.map();
    let mut part_a: f64 = 0.0;
    let mut part_b: f64 = 0.0;
    let mut pairs = 0;
    let mut admissible = 0;
    for word in &words {
        // log DT^t at each target's backward orbit; words are read so that
        // word[t-1] is applied first when pulling back.
        let mut logs = Vec::with_capacity(targets.len());
        let mut ok = true;
        for &z in &targets {
            let mut x = z;
            let mut log_dt = 0.0;
            for &sym in word.iter().rev() {
                x = map.branch_inverse(sym, x)?;
                if let Some(h) = sys.hole() {
                    if h.contains(x) {
                        ok = false;
                    }
                }
                let dt = match sym {
                    Symbol::L => map.derivative_left(x),
                    Symbol::R => 2.0,
                };
                log_dt += dt.ln();
            }
            logs.push(log_dt);
        }
        if !ok {
            continue;
        }
        admissible += 1;
        for (i, &li) in logs.iter().enumerate() {
            part_a = part_a.max((-li).exp() * scale);
            for j in 0..i {
                let d = (targets[i] - targets[j]).abs();
                if d > 0.0 {
                    part_b = part_b.max((li - logs[j]).abs() / d.powf(p));
                    pairs += 1;
                }
            }
        }
    }
    if admissible == 0 {
        return Err(Error::NoAdmissibleWord { t, n });
    }
    Ok(DistortionReport { t, n, part_a, part_b, pairs })
}

/// `Σ_{n=n0+1}^{t+n1} n^{-a} (t-n+n0)^{-b}` by direct compensated summation,
/// and its ratio to `t^{-min(a,b)}`.
pub fn double_sum_oracle(a: f64, b: f64, n0: u64, n1: u64, t: u64) -> Result<(f64, f64)> {
    if !(a > 1.0 && b > 1.0) {
        return Err(Error::precondition(MODULE, "double sum needs a, b > 1"));
    }
    if n0 <= n1 + 1 || n0 + 1 > t + n1 {
        return Err(Error::precondition(MODULE, "double sum needs n0 > n1 + 1 and n0 + 1 <= t + n1"));
    }
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for n in (n0 + 1)..=(t + n1) {
        let term = (n as f64).powf(-a) * ((t + n0 - n) as f64).powf(-b);
        let s = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - s) + term;
        } else {
            comp += (term - s) + sum;
        }
        sum = s;
    }
    let total = sum + comp;
    Ok((total, total / (t as f64).powf(-a.min(b))))
}
