//! Transfer operator on densities of the form `f(x) = x^{-α} g(x)`.
//!
//! The regular factor `g` is stored at the nodes of a fixed grid and is
//! piecewise linear between them. Each node carries two values, the limit
//! from the right and the limit from the left, so that the jumps created by
//! the hole (which sit on forward orbits of the hole endpoints, all grid
//! nodes) are represented without smearing. Cell integrals of
//! `x^{-α}·(linear g)` are done in closed form.
//!
//! The grid is built backwards from `J_0`: the nodes of `J_n` are the
//! left-branch preimages of a subset of the nodes of `J_{n-1}`, thinned by
//! half per octave of `n`, down to `J_{N_align}`. Below `a_{N_align}` the
//! nodes continue geometrically towards 0. In the aligned region the
//! left-branch pullback of a node therefore lands on a node.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::map::{Hole, MapSystem};
use crate::rates::EscapeCurve;

const MODULE: &str = "density_transport";

/// Surviving mass below which [`Transport::iterate_open`] gives up.
pub const UNDERFLOW_MASS: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridConfig {
    /// Number of uniform cells on `J_0`; a power of two.
    pub m0: usize,
    /// Deepest partition element resolved by aligned nodes.
    pub n_align: usize,
    /// Ratio of consecutive geometric nodes below `a_{n_align}`.
    pub tail_ratio: f64,
    /// Smallest positive node.
    pub tail_floor: f64,
    /// Forward orbit length of hole endpoints inserted as nodes.
    pub orbit_len: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { m0: 8192, n_align: 10_000, tail_ratio: 0.7, tail_floor: 1e-30, orbit_len: 64 }
    }
}

impl GridConfig {
    /// A coarse grid for quick runs.
    pub fn coarse() -> Self {
        GridConfig { m0: 512, n_align: 1_000, ..Self::default() }
    }
}

#[derive(Debug, PartialEq)]
pub struct Grid {
    x: Vec<f64>,
    /// Index of the node `a_{n_align}`.
    aligned_start: usize,
    n_align: usize,
}

impl Grid {
    /// Builds the grid for `sys`, inserting forward orbits of the hole
    /// endpoints and of `extra` points.
    pub fn build(sys: &MapSystem, cfg: &GridConfig, extra: &[f64]) -> Result<Grid> {
        if cfg.m0 == 0 || !cfg.m0.is_power_of_two() {
            return Err(Error::domain(MODULE, format!("m0 must be a power of two, got {}", cfg.m0)));
        }
        if cfg.n_align < 1 || cfg.n_align > sys.partition().n_max() {
            return Err(Error::domain(MODULE, format!("n_align = {} must lie in [1, n_max]", cfg.n_align)));
        }
        if !(cfg.tail_ratio > 0.0 && cfg.tail_ratio < 1.0) || !(cfg.tail_floor > 0.0) {
            return Err(Error::domain(MODULE, "tail ratio must lie in (0, 1) and the floor must be positive"));
        }
        let map = sys.map();
        let m0 = cfg.m0;
        let mut x: Vec<f64> = Vec::new();
        let mut prev: Vec<f64> = (0..=m0).map(|k| 0.5 + k as f64 / (2 * m0) as f64).collect();
        x.extend_from_slice(&prev);
        for n in 1..=cfg.n_align {
            let m_n = (m0 >> n.ilog2()).max(1);
            let stride = (prev.len() - 1) / m_n;
            let mut cur = Vec::with_capacity(m_n + 1);
            for j in 0..=m_n {
                cur.push(map.invert_left_unchecked(prev[j * stride])?);
            }
            x.extend_from_slice(&cur[..m_n]);
            prev = cur;
        }
        let a_n = sys.partition().a(cfg.n_align);
        let mut z = a_n * cfg.tail_ratio;
        while z > cfg.tail_floor {
            x.push(z);
            z *= cfg.tail_ratio;
        }
        x.push(0.0);
        x.sort_by(f64::total_cmp);
        x.dedup();

        let mut seeds: Vec<f64> = extra.to_vec();
        if let Some(h) = sys.hole() {
            seeds.push(h.lo());
            seeds.push(h.hi());
        }
        let mut inserted = Vec::new();
        for s in seeds {
            let mut z = s;
            for _ in 0..=cfg.orbit_len {
                if !(z > 0.0 && z < 1.0) {
                    break;
                }
                let k = x.partition_point(|&v| v < z);
                let near = |i: usize| i < x.len() && (x[i] - z).abs() <= 1e-13 * z;
                if !near(k) && !(k > 0 && near(k - 1)) {
                    inserted.push(z);
                }
                z = map.apply_unchecked(z);
            }
        }
        if !inserted.is_empty() {
            x.extend(inserted);
            x.sort_by(f64::total_cmp);
            x.dedup();
        }
        let aligned_start = x.partition_point(|&v| v < a_n);
        Ok(Grid { x, aligned_start, n_align: cfg.n_align })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n_align(&self) -> usize {
        self.n_align
    }

    /// Lowest aligned node, `a_{n_align}`.
    pub fn aligned_floor(&self) -> f64 {
        self.x[self.aligned_start]
    }

    /// Cell `k` with `x_k ≤ y < x_{k+1}` (last cell for `y = 1`).
    fn cell_right(&self, y: f64) -> usize {
        let k = self.x.partition_point(|&v| v <= y);
        k.saturating_sub(1).min(self.x.len() - 2)
    }

    /// Cell `k` with `x_k < y ≤ x_{k+1}` (first cell for `y = 0`).
    fn cell_left(&self, y: f64) -> usize {
        let k = self.x.partition_point(|&v| v < y);
        k.saturating_sub(1).min(self.x.len() - 2)
    }
}

/// Closed-form integrals of `x^{-α}` against the two hat functions of each cell.
#[derive(Debug, PartialEq)]
pub struct CellWeights {
    alpha: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl CellWeights {
    pub fn new(grid: &Grid, alpha: f64) -> Self {
        let x = &grid.x;
        let (lo, hi) = (0..x.len() - 1).map(|k| cell_weights(x[k], x[k + 1], alpha)).unzip();
        CellWeights { alpha, lo, hi }
    }
}

/// `(∫_a^b x^{-α}(b-x)/h dx, ∫_a^b x^{-α}(x-a)/h dx)`.
pub(crate) fn cell_weights(a: f64, b: f64, alpha: f64) -> (f64, f64) {
    let h = b - a;
    if alpha == 0.0 {
        return (0.5 * h, 0.5 * h);
    }
    let s = 1.0 - alpha;
    if a <= 0.0 {
        let bs = b.powf(s);
        return (bs * (1.0 / s - 1.0 / (s + 1.0)), bs / (s + 1.0));
    }
    let d = h / a;
    let (m0, whi) = if d < 0.25 {
        // x = a(1+u): expand (1+u)^{-α} = Σ c_k u^k.
        let (mut c, mut dk) = (1.0_f64, 1.0_f64);
        let (mut s0, mut s1) = (0.0_f64, 0.0_f64);
        for k in 0..80 {
            let t0 = c * dk / (k as f64 + 1.0);
            s0 += t0;
            s1 += c * dk / (k as f64 + 2.0);
            if t0.abs() < 1e-18 * s0.abs() {
                break;
            }
            c *= (-alpha - k as f64) / (k as f64 + 1.0);
            dk *= d;
        }
        let scale = a.powf(s) * d;
        (scale * s0, scale * s1)
    } else {
        let m0 = crate::survivor::power_increment(a, b, s) / s;
        let m1 = (b.powf(s + 1.0) - a.powf(s + 1.0)) / (s + 1.0);
        (m0, (m1 - a * m0) / h)
    };
    (m0 - whi, whi)
}

/// A density `x^{-α} g(x)` on a grid. `v[i]` is the right limit of `g` at node
/// `i`, `v[M + i]` the left limit.
#[derive(Clone, Debug)]
pub struct SingularDensity {
    alpha: f64,
    grid: Arc<Grid>,
    weights: Arc<CellWeights>,
    v: Vec<f64>,
    mass: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Right,
    Left,
}

impl SingularDensity {
    /// Samples `g` through `g(x, side)`, the one-sided limits at node `x`.
    pub fn from_sided_fn(grid: Arc<Grid>, alpha: f64, g: impl Fn(f64, Side) -> f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::domain(MODULE, format!("alpha must lie in [0, 1), got {alpha}")));
        }
        let m = grid.len();
        let mut v = vec![0.0; 2 * m];
        for (i, &x) in grid.x.iter().enumerate() {
            v[i] = g(x, Side::Right);
            v[m + i] = g(x, Side::Left);
        }
        if v.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::domain(MODULE, "regular factor must be finite and nonnegative"));
        }
        let weights = Arc::new(CellWeights::new(&grid, alpha));
        let mut d = SingularDensity { alpha, grid, weights, v, mass: 0.0 };
        d.mass = d.compute_mass();
        Ok(d)
    }

    pub fn from_fn(grid: Arc<Grid>, alpha: f64, g: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_sided_fn(grid, alpha, |x, _| g(x))
    }

    fn with_values(&self, v: Vec<f64>) -> Self {
        let mut d = SingularDensity { alpha: self.alpha, grid: self.grid.clone(), weights: self.weights.clone(), v, mass: 0.0 };
        d.mass = d.compute_mass();
        d
    }

    fn compute_mass(&self) -> f64 {
        let m = self.grid.len();
        let w = &self.weights;
        let mut s = 0.0;
        for c in 0..m - 1 {
            s += w.lo[c] * self.v[c] + w.hi[c] * self.v[m + c + 1];
        }
        s
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// `∫_0^1 f dm`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn g_right(&self) -> &[f64] {
        &self.v[..self.grid.len()]
    }

    pub fn g_left(&self) -> &[f64] {
        &self.v[self.grid.len()..]
    }

    pub fn normalized(&self) -> Result<Self> {
        if !(self.mass > 0.0) {
            return Err(Error::domain(MODULE, "cannot normalize a density of zero mass"));
        }
        Ok(self.scaled(1.0 / self.mass))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut d = self.clone();
        d.v.iter_mut().for_each(|g| *g *= c);
        d.mass *= c;
        d
    }

    /// Multiplies by `1_{I∖H}`.
    pub fn restricted_off(&self, hole: &Hole) -> Self {
        let m = self.grid.len();
        let mut v = self.v.clone();
        for (i, &x) in self.grid.x.iter().enumerate() {
            if hole.contains(x) {
                v[i] = 0.0;
            }
            if hole.contains_from_left(x) {
                v[m + i] = 0.0;
            }
        }
        self.with_values(v)
    }

    /// Regular factor `g` at `x`, as a right limit.
    pub fn g_at(&self, x: f64) -> f64 {
        let k = self.grid.cell_right(x);
        self.interp(k, x)
    }

    fn interp(&self, k: usize, y: f64) -> f64 {
        let x = &self.grid.x;
        let m = x.len();
        let th = ((y - x[k]) / (x[k + 1] - x[k])).clamp(0.0, 1.0);
        self.v[k] * (1.0 - th) + self.v[m + k + 1] * th
    }

    /// `f(x) = x^{-α} g(x)`.
    pub fn value(&self, x: f64) -> f64 {
        self.g_at(x) * x.powf(-self.alpha)
    }

    /// Fraction of the mass carried by `[0, eps)`.
    pub fn mass_near_zero(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::domain(MODULE, format!("eps must lie in (0, 1], got {eps}")));
        }
        if !(self.mass > 0.0) {
            return Err(Error::domain(MODULE, "density has zero mass"));
        }
        let x = &self.grid.x;
        let m = x.len();
        let w = &self.weights;
        let k = self.grid.cell_right(eps).min(m - 2);
        let mut s = 0.0;
        for c in 0..k {
            s += w.lo[c] * self.v[c] + w.hi[c] * self.v[m + c + 1];
        }
        if eps >= 1.0 {
            s += w.lo[m - 2] * self.v[m - 2] + w.hi[m - 2] * self.v[2 * m - 1];
        } else if eps > x[k] {
            let (wl, wh) = cell_weights(x[k], eps, self.alpha);
            s += wl * self.v[k] + wh * self.interp(k, eps);
        }
        Ok((s / self.mass).clamp(0.0, 1.0))
    }
}

/// The transfer operator on a fixed grid and exponent, optionally open.
/// Stored as sparse taps from the input node values to the output node
/// values.
#[derive(Debug)]
pub struct TransferOperator {
    grid: Arc<Grid>,
    weights: Arc<CellWeights>,
    alpha: f64,
    open: bool,
    offsets: Vec<u32>,
    src: Vec<u32>,
    w: Vec<f64>,
}

impl TransferOperator {
    pub fn new(sys: &MapSystem, grid: Arc<Grid>, alpha: f64, open: bool) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::domain(MODULE, format!("alpha must lie in [0, 1), got {alpha}")));
        }
        let hole = if open { Some(sys.require_hole(MODULE)?.clone()) } else { None };
        let map = sys.map();
        let x = &grid.x;
        let m = x.len();
        let mut offsets = Vec::with_capacity(2 * m + 1);
        let mut src = Vec::with_capacity(8 * m);
        let mut w = Vec::with_capacity(8 * m);
        offsets.push(0u32);
        let push_tap = |y: f64, side: Side, factor: f64, src: &mut Vec<u32>, w: &mut Vec<f64>| {
            if let Some(h) = &hole {
                let inside = match side {
                    Side::Right => h.contains(y),
                    Side::Left => h.contains_from_left(y),
                };
                if inside {
                    return;
                }
            }
            let k = match side {
                Side::Right => grid.cell_right(y),
                Side::Left => grid.cell_left(y),
            };
            let th = ((y - x[k]) / (x[k + 1] - x[k])).clamp(0.0, 1.0);
            if th < 1.0 {
                src.push(k as u32);
                w.push(factor * (1.0 - th));
            }
            if th > 0.0 {
                src.push((m + k + 1) as u32);
                w.push(factor * th);
            }
        };
        for side in [Side::Right, Side::Left] {
            for (i, &xi) in x.iter().enumerate() {
                // Node 0 has no left limit and node 1 no right limit; both
                // sides use the meaningful one.
                let eff = if i == 0 {
                    Side::Right
                } else if i == m - 1 {
                    Side::Left
                } else {
                    side
                };
                let zeroed = match (&hole, eff) {
                    (Some(h), Side::Right) => h.contains(xi),
                    (Some(h), Side::Left) => h.contains_from_left(xi),
                    (None, _) => false,
                };
                if !zeroed {
                    let yl = map.invert_left_unchecked(xi)?;
                    let fl = if xi > 0.0 { (xi / yl).powf(alpha) / map.derivative_left(yl) } else { 1.0 };
                    push_tap(yl, eff, fl, &mut src, &mut w);
                    let yr = map.invert_right_unchecked(xi);
                    let fr = if xi > 0.0 {
                        0.5 * (xi / yr).powf(alpha)
                    } else if alpha == 0.0 {
                        0.5
                    } else {
                        0.0
                    };
                    // Below about 1e-16 the right preimage rounds to 1/2,
                    // although it lies strictly above it.
                    let side_r = if xi > 0.0 && yr <= 0.5 { Side::Right } else { eff };
                    if fr > 0.0 {
                        push_tap(yr, side_r, fr, &mut src, &mut w);
                    }
                }
                offsets.push(src.len() as u32);
            }
        }
        let weights = Arc::new(CellWeights::new(&grid, alpha));
        Ok(TransferOperator { grid, weights, alpha, open, offsets, src, w })
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn check(&self, f: &SingularDensity) -> Result<()> {
        if !Arc::ptr_eq(&self.grid, &f.grid) || f.alpha != self.alpha {
            return Err(Error::precondition(MODULE, "density and operator use different grids or exponents"));
        }
        Ok(())
    }

    fn apply_values(&self, v: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let (a, b) = (self.offsets[o] as usize, self.offsets[o + 1] as usize);
            let mut s = 0.0;
            for e in a..b {
                s += self.w[e] * v[self.src[e] as usize];
            }
            *slot = s;
        }
    }

    pub fn apply(&self, f: &SingularDensity) -> Result<SingularDensity> {
        self.check(f)?;
        let mut out = vec![0.0; f.v.len()];
        self.apply_values(&f.v, &mut out);
        let mut d = SingularDensity { alpha: f.alpha, grid: f.grid.clone(), weights: self.weights.clone(), v: out, mass: 0.0 };
        d.mass = d.compute_mass();
        Ok(d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DensityKind {
    Lebesgue,
    /// `(1-α) x^{-α}`.
    Power(f64),
    /// The closed-system operator applied `burn_in` times to `x^{-γ}`.
    SrbProxy { burn_in: usize },
}

/// Output of an open iteration.
#[derive(Clone, Debug)]
pub struct OpenRun {
    pub curve: EscapeCurve,
    /// Normalized densities at the requested checkpoints.
    pub checkpoints: Vec<(usize, SingularDensity)>,
}

/// Empirical Hölder constant of `log f` on one element of the refined partition.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementHolder {
    /// Index `n` of the containing `J_n`, or `None` for the tail below the aligned grid.
    pub n: Option<usize>,
    pub lo: f64,
    pub hi: f64,
    /// `None` when `f` vanishes at some but not all sampled nodes.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HolderReport {
    pub p: f64,
    pub per_element: Vec<ElementHolder>,
    /// Supremum over the aligned elements; infinite if any is flagged.
    pub seminorm: f64,
    /// Value on the geometric tail below `a_{n_align}`, reported separately.
    pub tail: Option<f64>,
}

impl HolderReport {
    pub fn is_infinite(&self) -> bool {
        self.seminorm.is_infinite()
    }
}

/// The density engine for one map system: grid plus cached operators.
#[derive(Debug)]
pub struct Transport {
    sys: MapSystem,
    grid: Arc<Grid>,
}

impl Transport {
    pub fn new(sys: &MapSystem, cfg: &GridConfig) -> Result<Self> {
        Self::with_extra_nodes(sys, cfg, &[])
    }

    pub fn with_extra_nodes(sys: &MapSystem, cfg: &GridConfig, extra: &[f64]) -> Result<Self> {
        let grid = Arc::new(Grid::build(sys, cfg, extra)?);
        Ok(Transport { sys: sys.clone(), grid })
    }

    pub fn system(&self) -> &MapSystem {
        &self.sys
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn operator(&self, alpha: f64, open: bool) -> Result<TransferOperator> {
        TransferOperator::new(&self.sys, self.grid.clone(), alpha, open)
    }

    /// A normalized initial density.
    pub fn make_density(&self, kind: &DensityKind) -> Result<SingularDensity> {
        match *kind {
            DensityKind::Lebesgue => SingularDensity::from_fn(self.grid.clone(), 0.0, |_| 1.0),
            DensityKind::Power(alpha) => {
                if !(0.0..1.0).contains(&alpha) {
                    return Err(Error::domain(MODULE, format!("alpha must lie in [0, 1), got {alpha}")));
                }
                SingularDensity::from_fn(self.grid.clone(), alpha, |_| 1.0 - alpha)
            }
            DensityKind::SrbProxy { burn_in } => {
                if burn_in < 1 {
                    return Err(Error::domain(MODULE, "burn_in must be at least 1"));
                }
                let gamma = self.sys.gamma();
                let op = self.operator(gamma, false)?;
                let mut f = SingularDensity::from_fn(self.grid.clone(), gamma, |_| 1.0 - gamma)?;
                for _ in 0..burn_in {
                    f = op.apply(&f)?.normalized()?;
                }
                Ok(f)
            }
        }
    }

    /// One application of `L` (closed) or `1_{I∖H} L(1_{I∖H} ·)` (open).
    pub fn apply_transfer(&self, f: &SingularDensity, open: bool) -> Result<SingularDensity> {
        self.operator(f.alpha, open)?.apply(f)
    }

    /// Masses `|L̊ᵗ f|₁ = μ_f(İᵗ)` for `t = 0..=t_max`, starting from `f`
    /// normalized, together with the normalized densities at `checkpoints`.
    /// Without a hole the closed operator is iterated.
    pub fn iterate_open(&self, f: &SingularDensity, t_max: usize, checkpoints: &[usize]) -> Result<OpenRun> {
        if t_max < 1 {
            return Err(Error::domain(MODULE, "t_max must be at least 1"));
        }
        let open = self.sys.hole().is_some();
        let op = self.operator(f.alpha, open)?;
        op.check(f)?;
        let mut cur = f.normalized()?;
        if let Some(h) = self.sys.hole() {
            cur = cur.restricted_off(h);
        }
        let mut masses = Vec::with_capacity(t_max + 1);
        let mut log_mass = cur.mass.ln();
        let mut keep = Vec::new();
        let mut buf = vec![0.0; cur.v.len()];
        for t in 0..=t_max {
            if !(cur.mass > 0.0) || log_mass < UNDERFLOW_MASS.ln() {
                return Err(Error::Underflow { t, log_mass });
            }
            masses.push(log_mass.exp());
            cur = cur.normalized()?;
            if checkpoints.contains(&t) {
                keep.push((t, cur.clone()));
            }
            if t == t_max {
                break;
            }
            op.apply_values(&cur.v, &mut buf);
            std::mem::swap(&mut cur.v, &mut buf);
            cur.mass = cur.compute_mass();
            log_mass += cur.mass.ln();
        }
        // Discretization noise can exceed 1 or break monotonicity by ~1e-12.
        for i in 0..masses.len() {
            masses[i] = masses[i].min(1.0);
            if i > 0 {
                masses[i] = masses[i].min(masses[i - 1]);
            }
        }
        let provenance = format!("density gamma={} alpha={} nodes={}", self.sys.gamma(), f.alpha, self.grid.len());
        let curve = EscapeCurve::deterministic(masses, provenance)?;
        Ok(OpenRun { curve, checkpoints: keep })
    }

    /// Empirical `H^p_J(f)` over the elements of the refined partition of
    /// level `ℓ_H` that lie in the aligned part of the grid.
    pub fn holder_seminorm(&self, f: &SingularDensity, p: f64) -> Result<HolderReport> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::domain(MODULE, format!("p must lie in (0, 1], got {p}")));
        }
        let level = self.sys.hole().and_then(|h| h.level()).unwrap_or(0);
        let map = self.sys.map();
        let part = self.sys.partition();
        let mut per_element = Vec::new();
        for n in 0..=self.grid.n_align {
            let (lo, hi) = part.cell(n);
            let pieces = 1usize << level.saturating_sub(n).min(20);
            if pieces == 1 {
                per_element.push(self.element_holder(f, Some(n), lo, hi, p));
                continue;
            }
            // Split J_0 dyadically and pull the pieces back n times.
            for j in 0..pieces {
                let mut a = 0.5 + j as f64 / (2 * pieces) as f64;
                let mut b = 0.5 + (j + 1) as f64 / (2 * pieces) as f64;
                for _ in 0..n {
                    a = map.invert_left_unchecked(a)?;
                    b = map.invert_left_unchecked(b)?;
                }
                per_element.push(self.element_holder(f, Some(n), a, b, p));
            }
        }
        let seminorm = per_element.iter().fold(0.0_f64, |acc, e| match e.value {
            Some(v) => acc.max(v),
            None => f64::INFINITY,
        });
        let tail = self.element_holder(f, None, 0.0, self.grid.aligned_floor(), p).value;
        Ok(HolderReport { p, per_element, seminorm, tail })
    }

    fn element_holder(&self, f: &SingularDensity, n: Option<usize>, lo: f64, hi: f64, p: f64) -> ElementHolder {
        let x = &self.grid.x;
        let m = x.len();
        let i0 = x.partition_point(|&v| v < lo).max(if n.is_none() { 1 } else { 0 });
        let i1 = x.partition_point(|&v| v < hi);
        let mut pts: Vec<(f64, f64)> = Vec::new();
        let count = i1.saturating_sub(i0);
        let take = count.min(64);
        for j in 0..take {
            let i = if take == count { i0 + j } else { i0 + j * (count - 1) / (take - 1).max(1) };
            pts.push((x[i], f.v[i] * x[i].powf(-f.alpha)));
        }
        if i1 < m && x[i1] == hi {
            pts.push((hi, f.v[m + i1] * hi.powf(-f.alpha)));
        }
        let zeros = pts.iter().filter(|p| p.1 <= 0.0).count();
        let value = if zeros == pts.len() {
            Some(0.0)
        } else if zeros > 0 {
            None
        } else {
            let logs: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
            let mut best: f64 = 0.0;
            for i in 0..pts.len() {
                for j in 0..i {
                    let d = (pts[i].0 - pts[j].0).abs();
                    if d > 0.0 {
                        best = best.max((logs[i] - logs[j]).abs() / d.powf(p));
                    }
                }
            }
            Some(best)
        };
        ElementHolder { n, lo, hi, value }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Symbol;
    use crate::survivor::{survivors, ExactLimits};

    fn j2(n_max: usize) -> MapSystem {
        MapSystem::with_cylinder_hole(0.5, n_max, 2, &[Symbol::L]).unwrap()
    }

    fn coarse(sys: &MapSystem) -> Transport {
        Transport::new(sys, &GridConfig::coarse()).unwrap()
    }

    #[test]
    fn cell_weights_match_quadrature() {
        for &(a, b, al) in &[(0.1, 0.11, 0.5), (0.2, 0.5, 0.3), (0.0, 1e-3, 0.75), (1e-8, 3e-8, 0.5), (0.3, 0.30001, 0.9)] {
            let (wl, wh) = cell_weights(a, b, al);
            // Midpoint oracle after u = x^{1-α}, which removes the singularity:
            // ∫ x^{-α} φ(x) dx = (1/s) ∫ φ(u^{1/s}) du.
            let s = 1.0 - al;
            let (ua, ub) = (a.powf(s), b.powf(s));
            let n = 20_000;
            let h = b - a;
            let (mut ql, mut qh) = (0.0, 0.0);
            for k in 0..n {
                let u = ua + (ub - ua) * (k as f64 + 0.5) / n as f64;
                let x = u.powf(1.0 / s);
                let du = (ub - ua) / n as f64 / s;
                ql += (b - x) / h * du;
                qh += (x - a) / h * du;
            }
            let rel = 1e-7;
            assert!((wl - ql).abs() <= rel * ql, "lo {a} {b} {al}: {wl} vs {ql}");
            assert!((wh - qh).abs() <= rel * qh, "hi {a} {b} {al}: {wh} vs {qh}");
            let total = crate::survivor::power_increment(a, b, 1.0 - al) / (1.0 - al);
            assert!((wl + wh - total).abs() <= 1e-13 * total);
        }
    }

    #[test]
    fn grid_is_aligned_with_partition() {
        let sys = j2(2_000);
        let t = coarse(&sys);
        let x = t.grid().nodes();
        assert_eq!(x[0], 0.0);
        assert_eq!(*x.last().unwrap(), 1.0);
        assert!(x.windows(2).all(|w| w[0] < w[1]));
        for n in 0..=1_000 {
            let a = sys.partition().a(n);
            assert!(x.binary_search_by(|v| v.total_cmp(&a)).is_ok(), "a_{n} missing");
        }
        assert_eq!(t.grid().aligned_floor(), sys.partition().a(1_000));
    }

    #[test]
    fn initial_densities() {
        let sys = j2(2_000);
        let t = coarse(&sys);
        let leb = t.make_density(&DensityKind::Lebesgue).unwrap();
        assert!((leb.mass() - 1.0).abs() < 1e-14);
        assert!(leb.g_right().iter().all(|&g| g == 1.0));
        let pw = t.make_density(&DensityKind::Power(0.5)).unwrap();
        assert!((pw.mass() - 1.0).abs() < 1e-12, "{}", pw.mass());
        assert!((pw.mass_near_zero(0.25).unwrap() - 0.5).abs() < 1e-12);
        assert!((pw.mass_near_zero(1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(t.make_density(&DensityKind::Power(1.0)).is_err());
        assert!(t.make_density(&DensityKind::SrbProxy { burn_in: 0 }).is_err());
    }

    #[test]
    fn closed_operator_conserves_mass() {
        let sys = j2(2_000);
        let t = coarse(&sys);
        for kind in [DensityKind::Lebesgue, DensityKind::Power(0.3), DensityKind::Power(0.5)] {
            let f = t.make_density(&kind).unwrap();
            let lf = t.apply_transfer(&f, false).unwrap();
            assert!((lf.mass() - f.mass()).abs() < 1e-6, "{kind:?}: {}", lf.mass());
        }
    }

    #[test]
    fn right_branch_contributes_half() {
        let sys = j2(2_000).closed();
        let t = coarse(&sys);
        let f = t.make_density(&DensityKind::Lebesgue).unwrap();
        let lf = t.apply_transfer(&f, false).unwrap();
        let map = sys.map();
        for (i, &x) in t.grid().nodes().iter().enumerate().step_by(97) {
            let y = map.invert_left_unchecked(x).unwrap();
            let left = 1.0 / map.derivative_unchecked(y);
            assert!((lf.g_right()[i] - left - 0.5).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn open_one_step_matches_survivor_mass() {
        let sys = j2(2_000);
        let t = coarse(&sys);
        let f = t.make_density(&DensityKind::Lebesgue).unwrap();
        let run = t.iterate_open(&f, 1, &[]).unwrap();
        let exact = survivors(&sys, 1, ExactLimits::default()).unwrap();
        assert!((run.curve.masses[0] - exact[0].lebesgue_mass()).abs() < 1e-12);
        assert!((run.curve.masses[1] - exact[1].lebesgue_mass()).abs() < 1e-6);
    }

    #[test]
    fn semigroup_property() {
        let sys = j2(2_000);
        let t = coarse(&sys);
        let op = t.operator(0.0, true).unwrap();
        let f = t.make_density(&DensityKind::Lebesgue).unwrap().restricted_off(sys.hole().unwrap());
        let mut powers = vec![f.clone()];
        for k in 0..5 {
            powers.push(op.apply(&powers[k]).unwrap());
        }
        let two_then_three = {
            let mut g = powers[2].clone();
            for _ in 0..3 {
                g = op.apply(&g).unwrap();
            }
            g
        };
        for (a, b) in two_then_three.g_right().iter().zip(powers[5].g_right()) {
            assert!((a - b).abs() <= 1e-9);
        }
        let once_once = op.apply(&op.apply(&f).unwrap()).unwrap();
        for (a, b) in once_once.g_left().iter().zip(powers[2].g_left()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn closed_iteration_keeps_unit_mass() {
        let sys = j2(2_000).closed();
        let t = coarse(&sys);
        let f = t.make_density(&DensityKind::Lebesgue).unwrap();
        let run = t.iterate_open(&f, 50, &[50]).unwrap();
        assert!(run.curve.masses.iter().all(|m| (m - 1.0).abs() < 1e-6));
        assert_eq!(run.checkpoints.len(), 1);
    }

    #[test]
    fn open_masses_are_monotone_and_positive_near_zero() {
        let sys = j2(2_000);
        let t = coarse(&sys);
        let f = t.make_density(&DensityKind::Lebesgue).unwrap();
        let run = t.iterate_open(&f, 200, &[200]).unwrap();
        assert!(run.curve.masses.windows(2).all(|w| w[1] <= w[0]));
        let g = &run.checkpoints[0].1;
        let start = t.grid().nodes().partition_point(|&v| v < t.grid().aligned_floor());
        let end = t.grid().nodes().partition_point(|&v| v < sys.partition().a(2));
        assert!(g.g_right()[start..end].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn underflow_is_reported() {
        let sys = MapSystem::new(0.5, 2_000).unwrap();
        let hole = sys.neutral_control_hole(1).unwrap();
        let sys = sys.with_hole(hole);
        let t = coarse(&sys);
        let f = t.make_density(&DensityKind::Lebesgue).unwrap();
        assert!(matches!(t.iterate_open(&f, 100_000, &[]), Err(Error::Underflow { .. })));
    }

    #[test]
    fn holder_examples() {
        let sys = j2(2_000);
        let t = coarse(&sys);
        let p = 0.5 / 1.5;
        let leb = t.make_density(&DensityKind::Lebesgue).unwrap();
        assert_eq!(t.holder_seminorm(&leb, p).unwrap().seminorm, 0.0);
        let pw = t.make_density(&DensityKind::Power(0.3)).unwrap();
        let r = t.holder_seminorm(&pw, p).unwrap();
        assert!(r.seminorm.is_finite() && r.seminorm > 0.0);
        let r7 = t.holder_seminorm(&pw.scaled(7.3), p).unwrap();
        assert!((r7.seminorm - r.seminorm).abs() <= 1e-9 * r.seminorm);
        let off = pw.restricted_off(&Hole::control(0.6, 0.7).unwrap());
        assert!(t.holder_seminorm(&off, p).unwrap().is_infinite());
    }

    #[test]
    fn hole_at_half_keeps_neutral_region_empty() {
        let sys = MapSystem::with_cylinder_hole(0.5, 2_000, 0, &[Symbol::R, Symbol::L, Symbol::L, Symbol::L]).unwrap();
        let tr = coarse(&sys);
        let cut = sys.partition().a(2);
        let mut f = SingularDensity::from_sided_fn(tr.grid().clone(), 0.0, |x, s| match s {
            Side::Right if x >= cut => 1.0,
            Side::Left if x > cut => 1.0,
            _ => 0.0,
        })
        .unwrap();
        for _ in 0..5 {
            f = tr.apply_transfer(&f, true).unwrap();
        }
        let x = tr.grid().nodes();
        for i in 0..x.len() {
            if x[i] < cut {
                assert_eq!((f.g_right()[i], f.g_left()[i]), (0.0, 0.0), "x = {}", x[i]);
            }
        }
    }
}
