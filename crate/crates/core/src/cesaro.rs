//! Cesàro averages `μ_t = (1/t) Σ_{k<t} T̊ᵏ_*μ / μ(X̊ᵏ)` of normalized
//! pushforwards for general open systems on `[0, 1)`, with diagnostics for
//! the singularity and invariance of their limits.
//!
//! Each open system supplies its own initial sampler, which may return
//! importance weights: a particle drawn from a proposal `q` carries the
//! weight `dμ/dq`, and every Cesàro term is self-normalized by the total
//! weight alive at that step.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::map::MapSystem;
use crate::monte_carlo::{chunk_rng, power_draw, CHUNK};
use crate::survivor::{survivors, ExactLimits, IntervalSet};

const MODULE: &str = "cesaro_general";

/// An open system on `[0, 1)` with an interval-union hole.
pub trait OpenSystem: Sync {
    fn label(&self) -> String;
    fn apply(&self, x: f64) -> f64;
    fn hole(&self) -> &IntervalSet;
    /// One draw from the initial measure as `(x, weight)`.
    fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, f64);
    /// `⋃_{j≤i} T^{-j}(H)` as an interval union.
    fn escape_set(&self, i: usize) -> Result<IntervalSet> {
        let _ = i;
        Err(Error::UnsupportedSpec(self.label()))
    }
    /// Histogram breakpoints used by default.
    fn default_bins(&self) -> Vec<f64>;
}

/// The LSV map with Lebesgue as reference measure. Initial points are drawn
/// from `(1-a) x^{-a}` with `a = proposal_alpha` and weighted by
/// `x^a / (1-a)`, which keeps particles alive long enough in the
/// polynomial regime; `a = 0` is plain uniform sampling.
pub struct LsvOpen {
    sys: MapSystem,
    hole: IntervalSet,
    proposal_alpha: f64,
    bins: Arc<Vec<f64>>,
}

impl LsvOpen {
    /// Hole endpoints are added to `bins` when missing.
    pub fn new(sys: &MapSystem, proposal_alpha: f64, mut bins: Vec<f64>) -> Result<Self> {
        if let Some(h) = sys.hole() {
            bins.extend([h.lo(), h.hi()]);
            bins.sort_by(f64::total_cmp);
            bins.dedup();
        }
        if !(0.0..1.0).contains(&proposal_alpha) {
            return Err(Error::domain(MODULE, format!("proposal exponent must lie in [0, 1), got {proposal_alpha}")));
        }
        check_bins(&bins)?;
        let hole = match sys.hole() {
            Some(h) => IntervalSet::interval(h.lo(), h.hi()),
            None => IntervalSet::empty(),
        };
        Ok(LsvOpen { sys: sys.clone(), hole, proposal_alpha, bins: Arc::new(bins) })
    }
}

impl OpenSystem for LsvOpen {
    fn label(&self) -> String {
        let hole = self.sys.hole().map(|h| h.to_string()).unwrap_or_else(|| "none".into());
        format!("lsv gamma={} hole={hole}", self.sys.gamma())
    }

    #[inline]
    fn apply(&self, x: f64) -> f64 {
        self.sys.map().apply_unchecked(x)
    }

    fn hole(&self) -> &IntervalSet {
        &self.hole
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let a = self.proposal_alpha;
        let x = power_draw(rng, a);
        (x, if a == 0.0 { 1.0 } else { x.powf(a) / (1.0 - a) })
    }

    fn escape_set(&self, i: usize) -> Result<IntervalSet> {
        if self.sys.hole().is_none() {
            return Ok(IntervalSet::empty());
        }
        let limits = ExactLimits::default();
        Ok(survivors(&self.sys, i, limits)?.pop().expect("nonempty").complement())
    }

    fn default_bins(&self) -> Vec<f64> {
        self.bins.as_ref().clone()
    }
}

/// The doubling map `2x mod 1` with an interval hole and Lebesgue reference.
/// Its escape is exponential, so it serves as a negative control.
pub struct DoublingOpen {
    hole: IntervalSet,
    lo: f64,
    hi: f64,
    bins: usize,
}

impl DoublingOpen {
    /// Hole `[lo, hi)` with dyadic endpoints.
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        let dyadic = |v: f64| (v * 1024.0).fract() == 0.0;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) || !dyadic(lo) || !dyadic(hi) || bins < 1 {
            return Err(Error::domain(MODULE, "doubling hole must be a dyadic subinterval of [0, 1)"));
        }
        Ok(DoublingOpen { hole: IntervalSet::interval(lo, hi), lo, hi, bins })
    }
}

impl OpenSystem for DoublingOpen {
    fn label(&self) -> String {
        format!("doubling hole=[{}, {})", self.lo, self.hi)
    }

    #[inline]
    fn apply(&self, x: f64) -> f64 {
        let y = 2.0 * x;
        if y >= 1.0 {
            y - 1.0
        } else {
            y
        }
    }

    fn hole(&self) -> &IntervalSet {
        &self.hole
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        (rng.random::<f64>(), 1.0)
    }

    fn escape_set(&self, i: usize) -> Result<IntervalSet> {
        if i > 24 {
            return Err(Error::precondition(MODULE, "doubling escape sets are built up to i = 24"));
        }
        let mut v = Vec::new();
        for j in 0..=i {
            let s = (1u64 << j) as f64;
            for m in 0..(1u64 << j) {
                v.push(((m as f64 + self.lo) / s, (m as f64 + self.hi) / s));
            }
        }
        Ok(IntervalSet::from_intervals(v))
    }

    fn default_bins(&self) -> Vec<f64> {
        (0..=self.bins).map(|k| k as f64 / self.bins as f64).collect()
    }
}

/// A user-supplied map with a declared hole. Escape-set preimages are not
/// available, so the singularity diagnostic reports an unsupported system.
/// Whether the map and hole satisfy the theorem's hypotheses is the
/// caller's responsibility.
pub struct ExternalOpen<F: Fn(f64) -> f64 + Sync> {
    pub label: String,
    pub map: F,
    pub hole: IntervalSet,
    pub bins: usize,
}

impl<F: Fn(f64) -> f64 + Sync> OpenSystem for ExternalOpen<F> {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn apply(&self, x: f64) -> f64 {
        (self.map)(x)
    }

    fn hole(&self) -> &IntervalSet {
        &self.hole
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        (rng.random::<f64>(), 1.0)
    }

    fn default_bins(&self) -> Vec<f64> {
        (0..=self.bins).map(|k| k as f64 / self.bins as f64).collect()
    }
}

/// Names accepted by [`by_name`].
pub const REGISTERED: &[&str] = &["lsv", "doubling"];

/// Default proposal exponent of the LSV sampler.
pub const LSV_PROPOSAL_ALPHA: f64 = 0.75;

/// Looks up a bundled system. `lsv` needs the map system and bins; `doubling`
/// uses the hole `[0, 1/4)` and 1024 uniform bins.
pub fn by_name(name: &str, sys: Option<&MapSystem>, bins: Option<Vec<f64>>) -> Result<Box<dyn OpenSystem>> {
    match name {
        "lsv" => {
            let sys = sys.ok_or_else(|| Error::precondition(MODULE, "the lsv system needs a map system"))?;
            let bins = bins.ok_or_else(|| Error::precondition(MODULE, "the lsv system needs bins"))?;
            Ok(Box::new(LsvOpen::new(sys, LSV_PROPOSAL_ALPHA, bins)?))
        }
        "doubling" => Ok(Box::new(DoublingOpen::new(0.0, 0.25, 1024)?)),
        other => Err(Error::UnsupportedSpec(other.to_string())),
    }
}

fn check_bins(bins: &[f64]) -> Result<()> {
    if bins.len() < 2 || bins[0] != 0.0 || *bins.last().expect("nonempty") != 1.0 || bins.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain(MODULE, "bins must increase strictly from 0 to 1"));
    }
    Ok(())
}

/// The accumulated Cesàro measure after `t` terms.
#[derive(Clone, Debug, PartialEq)]
pub struct CesaroState {
    pub bins: Arc<Vec<f64>>,
    /// Sum over terms of the normalized bin masses; divide by `t` for `μ_t`.
    pub accum: Vec<f64>,
    /// Sum over terms of the normalized first moments per bin.
    pub moment: Vec<f64>,
    /// Weighted survival fractions `μ(X̊ᵏ)`, `k < t`.
    pub per_step_norm: Vec<f64>,
    /// Total mass of each normalized term before accumulation.
    pub term_mass: Vec<f64>,
    pub t: usize,
    pub n: usize,
    pub seed: u64,
    pub label: String,
}

impl CesaroState {
    /// Bin masses of `μ_t`.
    pub fn measure(&self) -> Vec<f64> {
        let t = self.t as f64;
        self.accum.iter().map(|a| a / t).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.accum.iter().sum::<f64>() / self.t as f64
    }

    /// Mean position of the mass in bin `b` (its midpoint when empty).
    pub fn centroid(&self, b: usize) -> f64 {
        if self.accum[b] > 0.0 {
            (self.moment[b] / self.accum[b]).clamp(self.bins[b], self.bins[b + 1])
        } else {
            0.5 * (self.bins[b] + self.bins[b + 1])
        }
    }

    /// `β_k = μ(X̊^{k+1}) / μ(X̊ᵏ)`.
    pub fn betas(&self) -> Vec<f64> {
        self.per_step_norm.windows(2).map(|w| w[1] / w[0]).collect()
    }

    /// `μ_t([0, eps))`, with fractional overlap for the bin containing `eps`.
    pub fn mass_below(&self, eps: f64) -> f64 {
        self.mass_of(&IntervalSet::interval(0.0, eps))
    }

    /// `μ_t(S)` assuming mass is spread uniformly inside each bin.
    pub fn mass_of(&self, s: &IntervalSet) -> f64 {
        let mu = self.measure();
        let b = &self.bins;
        let iv = s.intervals();
        let (mut i, mut j) = (0, 0);
        let mut total = 0.0;
        while i + 1 < b.len() && j < iv.len() {
            let lo = b[i].max(iv[j].0);
            let hi = b[i + 1].min(iv[j].1);
            if hi > lo {
                total += mu[i] * (hi - lo) / (b[i + 1] - b[i]);
            }
            if b[i + 1] < iv[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        total
    }
}

/// Runs one ensemble of `n` particles and returns the Cesàro state after
/// each `t` in `checkpoints` (sorted ascending).
pub fn cesaro_run(system: &dyn OpenSystem, n: usize, checkpoints: &[usize], seed: u64, bins: Option<Vec<f64>>) -> Result<Vec<CesaroState>> {
    if n < 10_000 {
        return Err(Error::precondition(MODULE, "Cesàro runs need at least 10^4 particles"));
    }
    if checkpoints.is_empty() || checkpoints[0] < 1 || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::precondition(MODULE, "checkpoints must be positive and strictly increasing"));
    }
    let bins = bins.unwrap_or_else(|| system.default_bins());
    check_bins(&bins)?;
    let bins = Arc::new(bins);
    let nb = bins.len() - 1;
    let hole = system.hole().clone();

    let mut xs = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    for c in 0..n.div_ceil(CHUNK) {
        let mut rng = chunk_rng(seed, c);
        for _ in 0..CHUNK.min(n - c * CHUNK) {
            let (x, w) = system.sample(&mut rng);
            xs.push(x);
            ws.push(w);
        }
    }
    let w_total: f64 = ws.iter().sum();
    let keep: Vec<bool> = xs.iter().map(|&x| !hole.contains(x)).collect();
    let mut xs: Vec<f64> = xs.iter().zip(&keep).filter(|p| *p.1).map(|p| *p.0).collect();
    let mut ws: Vec<f64> = ws.iter().zip(&keep).filter(|p| *p.1).map(|p| *p.0).collect();

    let mut state = CesaroState {
        bins: bins.clone(),
        accum: vec![0.0; nb],
        moment: vec![0.0; nb],
        per_step_norm: Vec::new(),
        term_mass: Vec::new(),
        t: 0,
        n,
        seed,
        label: system.label(),
    };
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut term_w = vec![0.0; nb];
    let mut term_m = vec![0.0; nb];
    let t_end = *checkpoints.last().expect("nonempty");
    for k in 0..t_end {
        let alive_w: f64 = ws.iter().sum();
        if xs.is_empty() || !(alive_w > 0.0) {
            return Err(Error::Extinction { module: MODULE, t: k });
        }
        state.per_step_norm.push(alive_w / w_total);
        term_w.iter_mut().for_each(|v| *v = 0.0);
        term_m.iter_mut().for_each(|v| *v = 0.0);
        for (&x, &w) in xs.iter().zip(&ws) {
            let b = bins.partition_point(|&e| e <= x).clamp(1, nb) - 1;
            term_w[b] += w;
            term_m[b] += w * x;
        }
        let inv = 1.0 / alive_w;
        let mut mass = 0.0;
        for b in 0..nb {
            let p = term_w[b] * inv;
            mass += p;
            state.accum[b] += p;
            state.moment[b] += term_m[b] * inv;
        }
        state.term_mass.push(mass);
        state.t = k + 1;
        if checkpoints.contains(&state.t) {
            out.push(state.clone());
        }
        if k + 1 == t_end {
            break;
        }
        let mut j = 0;
        for i in 0..xs.len() {
            let y = system.apply(xs[i]);
            if !hole.contains(y) {
                xs[j] = y;
                ws[j] = ws[i];
                j += 1;
            }
        }
        xs.truncate(j);
        ws.truncate(j);
    }
    Ok(out)
}

/// `μ_t` after `t` terms.
pub fn cesaro_accumulate(system: &dyn OpenSystem, n: usize, t: usize, seed: u64) -> Result<CesaroState> {
    Ok(cesaro_run(system, n, &[t], seed, None)?.pop().expect("one checkpoint"))
}

/// `μ_t(⋃_{j≤i} T^{-j}(H))`.
pub fn singularity_diagnostic(system: &dyn OpenSystem, state: &CesaroState, i: usize) -> Result<f64> {
    let set = system.escape_set(i)?;
    Ok(state.mass_of(&set).clamp(0.0, 1.0))
}

/// Continuous test functions bounded by 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestFunction {
    Constant,
    Cos(u32),
    Sin(u32),
    Bump { center: f64, width: f64 },
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Constant => 1.0,
            TestFunction::Cos(k) => (2.0 * PI * k as f64 * x).cos(),
            TestFunction::Sin(k) => (2.0 * PI * k as f64 * x).sin(),
            TestFunction::Bump { center, width } => (-((x - center) / width).powi(2)).exp(),
        }
    }
}

/// Low-order waves and bumps spread over `[0, 1)`.
pub fn default_family() -> Vec<TestFunction> {
    let mut f = vec![TestFunction::Constant];
    for k in 1..=3 {
        f.push(TestFunction::Cos(k));
        f.push(TestFunction::Sin(k));
    }
    for c in [0.02, 0.1, 0.3, 0.5, 0.7, 0.9] {
        f.push(TestFunction::Bump { center: c, width: 0.05 });
    }
    f
}

/// `max_φ |∫ φ∘T dμ_t - ∫ φ dμ_t|`, both integrals taken over bin masses
/// placed at the bin centroids.
pub fn invariance_diagnostic(system: &dyn OpenSystem, state: &CesaroState, family: &[TestFunction]) -> f64 {
    let mu = state.measure();
    let pts: Vec<(f64, f64, f64)> = (0..mu.len())
        .filter(|&b| mu[b] > 0.0)
        .map(|b| {
            let c = state.centroid(b);
            (mu[b], c, system.apply(c))
        })
        .collect();
    family
        .iter()
        .map(|phi| pts.iter().map(|&(m, c, tc)| m * (phi.eval(tc) - phi.eval(c))).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

/// `k ↦ #(A_λ ∩ [1, k]) / k` at dyadic `k`, where `A_λ = {k : β_k ≤ λ}` and
/// `betas[0]` is `β_1`.
pub fn zero_density_check(betas: &[f64], lambda: f64) -> Result<Vec<(usize, f64)>> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::domain(MODULE, format!("lambda must lie in (0, 1), got {lambda}")));
    }
    let mut out = Vec::new();
    let mut count = 0usize;
    let mut next = 1usize;
    for (i, &b) in betas.iter().enumerate() {
        if b <= lambda {
            count += 1;
        }
        let k = i + 1;
        if k == next {
            out.push((k, count as f64 / k as f64));
            next *= 2;
        }
    }
    Ok(out)
}
