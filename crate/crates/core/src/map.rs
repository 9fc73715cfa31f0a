//! The intermittent map `T(x) = x + 2^γ x^{γ+1}` on `[0, 1/2)`, `2x - 1` on
//! `[1/2, 1)`, together with its countable Markov partition `J_n = [a_n, a_{n-1})`
//! and holes built from cylinders of the refined partition.
//!
//! All intervals are half-open `[lo, hi)`.

use std::fmt;

use crate::error::{Error, Result};

const MODULE: &str = "map_core";

/// Largest double below 1.
pub const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

/// Default depth of the partition table.
pub const DEFAULT_N_MAX: usize = 100_000;

/// Symbols of the two-element partition `P_L = [0, 1/2)`, `P_R = [1/2, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Symbol {
    L,
    R,
}

impl Symbol {
    pub fn of(x: f64) -> Symbol {
        if x < 0.5 {
            Symbol::L
        } else {
            Symbol::R
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Symbol::L => 'L',
            Symbol::R => 'R',
        }
    }
}

/// Parses a word such as `"LLR"`.
pub fn parse_word(s: &str) -> Result<Vec<Symbol>> {
    s.chars()
        .map(|c| match c {
            'L' | 'l' => Ok(Symbol::L),
            'R' | 'r' => Ok(Symbol::R),
            other => Err(Error::domain(MODULE, format!("invalid symbol '{other}' in word '{s}'"))),
        })
        .collect()
}

pub fn word_string(word: &[Symbol]) -> String {
    word.iter().map(|s| s.as_char()).collect()
}

/// The bare map: parameter and branch formulas, no partition or hole.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LsvMap {
    gamma: f64,
    coeff: f64,
}

impl LsvMap {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::domain(MODULE, format!("gamma must lie in (0, 1), got {gamma}")));
        }
        Ok(LsvMap { gamma, coeff: 2f64.powf(gamma) })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn apply_unchecked(&self, x: f64) -> f64 {
        if x < 0.5 {
            // Rounding can reach 1 just below the branch endpoint.
            (x + self.coeff * x * x.powf(self.gamma)).min(ONE_MINUS)
        } else {
            2.0 * x - 1.0
        }
    }

    #[inline]
    pub fn derivative_unchecked(&self, x: f64) -> f64 {
        if x < 0.5 {
            1.0 + self.coeff * (self.gamma + 1.0) * x.powf(self.gamma)
        } else {
            2.0
        }
    }

    /// Derivative of the left branch formula, also at `x = 1/2` where it
    /// gives the left limit of `DT`.
    #[inline]
    pub fn derivative_left(&self, x: f64) -> f64 {
        1.0 + self.coeff * (self.gamma + 1.0) * x.powf(self.gamma)
    }

    /// Inverse of the left branch for `y` in `[0, 1]`; `y = 1` maps to the
    /// branch endpoint `1/2`.
    ///
    /// Newton iteration seeded at `y/2`, safeguarded by a bisection bracket on
    /// `[0, min(y, 1/2)]`. The branch is convex and increasing, so after the
    /// first step Newton approaches the root monotonically from above.
    pub fn invert_left_unchecked(&self, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(0.0);
        }
        if y >= 1.0 {
            return Ok(0.5);
        }
        let (g, c) = (self.gamma, self.coeff);
        let mut lo = 0.0_f64;
        let mut hi = y.min(0.5);
        let mut x = 0.5 * y;
        for _ in 0..200 {
            let xg = x.powf(g);
            let fx = x + c * x * xg - y;
            if fx == 0.0 {
                return Ok(x);
            }
            if fx > 0.0 {
                hi = hi.min(x);
            } else {
                lo = lo.max(x);
            }
            let step = fx / (1.0 + c * (g + 1.0) * xg);
            let mut next = x - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let tol = (4.0 * f64::EPSILON * next).max(f64::MIN_POSITIVE);
            if (next - x).abs() <= tol || hi - lo <= tol {
                return Ok(next);
            }
            x = next;
        }
        Err(Error::Convergence { y })
    }

    #[inline]
    pub fn invert_right_unchecked(&self, y: f64) -> f64 {
        0.5 * (y + 1.0)
    }

    pub fn branch_inverse(&self, branch: Symbol, y: f64) -> Result<f64> {
        match branch {
            Symbol::L => self.invert_left_unchecked(y),
            Symbol::R => Ok(self.invert_right_unchecked(y)),
        }
    }
}

/// The partition endpoints `a_0 = 1/2`, `a_n = T_L^{-1}(a_{n-1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionTable {
    a: Vec<f64>,
}

impl PartitionTable {
    pub fn build(map: &LsvMap, n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::precondition(MODULE, "partition depth n_max must be at least 1"));
        }
        let mut a = Vec::with_capacity(n_max + 1);
        a.push(0.5);
        for n in 1..=n_max {
            let next = map.invert_left_unchecked(a[n - 1])?;
            a.push(next);
        }
        Ok(PartitionTable { a })
    }

    pub fn n_max(&self) -> usize {
        self.a.len() - 1
    }

    /// `a_n`; panics if `n > n_max`.
    pub fn a(&self, n: usize) -> f64 {
        self.a[n]
    }

    pub fn endpoints(&self) -> &[f64] {
        &self.a
    }

    /// The element `J_n` as `(lo, hi)`; `J_0 = [1/2, 1)`.
    pub fn cell(&self, n: usize) -> (f64, f64) {
        if n == 0 {
            (0.5, 1.0)
        } else {
            (self.a[n], self.a[n - 1])
        }
    }
}

/// Result of locating a point in the countable partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    Cell(usize),
    /// The point lies below `a[n_max]`.
    Tail,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HoleKind {
    /// An element of the refined partition `J ∨ T^{-0..=level} P`.
    Cylinder { base_index: usize, word: Vec<Symbol> },
    /// An arbitrary interval accepted only as a non-cylinder control case,
    /// e.g. `[0, a_n)` which contains the neutral fixed point.
    Control,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hole {
    kind: HoleKind,
    lo: f64,
    hi: f64,
}

impl Hole {
    /// A non-cylinder control hole `[lo, hi)`. These bypass the cylinder
    /// validation and may contain 0.
    pub fn control(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::InvalidHole(format!("control interval [{lo}, {hi}) is not a nonempty subinterval of [0, 1)")));
        }
        Ok(Hole { kind: HoleKind::Control, lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn kind(&self) -> &HoleKind {
        &self.kind
    }

    pub fn is_control(&self) -> bool {
        matches!(self.kind, HoleKind::Control)
    }

    /// `ℓ_H`, the refinement level of a cylinder hole.
    pub fn level(&self) -> Option<usize> {
        match &self.kind {
            HoleKind::Cylinder { word, .. } => Some(word.len() - 1),
            HoleKind::Control => None,
        }
    }

    /// Index `h` of the element `J_h` containing a cylinder hole.
    pub fn base_index(&self) -> Option<usize> {
        match &self.kind {
            HoleKind::Cylinder { base_index, .. } => Some(*base_index),
            HoleKind::Control => None,
        }
    }

    pub fn word(&self) -> Option<&[Symbol]> {
        match &self.kind {
            HoleKind::Cylinder { word, .. } => Some(word),
            HoleKind::Control => None,
        }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x < self.hi
    }

    /// Membership of points approaching `x` from the left.
    #[inline]
    pub fn contains_from_left(&self, x: f64) -> bool {
        self.lo < x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

impl fmt::Display for Hole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            HoleKind::Cylinder { base_index, word } => {
                write!(f, "cylinder h={} word={} [{}, {})", base_index, word_string(word), self.lo, self.hi)
            }
            HoleKind::Control => write!(f, "control [{}, {})", self.lo, self.hi),
        }
    }
}

/// The map together with its partition table and an optional hole.
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct MapSystem {
    map: LsvMap,
    partition: PartitionTable,
    hole: Option<Hole>,
}

impl MapSystem {
    /// The closed system with a partition table of depth `n_max`.
    pub fn new(gamma: f64, n_max: usize) -> Result<Self> {
        let map = LsvMap::new(gamma)?;
        let partition = PartitionTable::build(&map, n_max)?;
        Ok(MapSystem { map, partition, hole: None })
    }

    /// Convenience: the system with the cylinder hole given by `h` and `word`.
    pub fn with_cylinder_hole(gamma: f64, n_max: usize, h: usize, word: &[Symbol]) -> Result<Self> {
        let closed = Self::new(gamma, n_max)?;
        let hole = closed.hole_from_word(h, word)?;
        Ok(closed.with_hole(hole))
    }

    pub fn with_hole(mut self, hole: Hole) -> Self {
        self.hole = Some(hole);
        self
    }

    pub fn closed(&self) -> MapSystem {
        MapSystem { hole: None, ..self.clone() }
    }

    pub fn gamma(&self) -> f64 {
        self.map.gamma
    }

    pub fn map(&self) -> &LsvMap {
        &self.map
    }

    pub fn partition(&self) -> &PartitionTable {
        &self.partition
    }

    pub fn hole(&self) -> Option<&Hole> {
        self.hole.as_ref()
    }

    pub(crate) fn require_hole(&self, module: &'static str) -> Result<&Hole> {
        self.hole.as_ref().ok_or_else(|| Error::precondition(module, "the system has no hole"))
    }

    fn check_unit(x: f64) -> Result<()> {
        if (0.0..1.0).contains(&x) {
            Ok(())
        } else {
            Err(Error::domain(MODULE, format!("point {x} outside [0, 1)")))
        }
    }

    pub fn apply(&self, x: f64) -> Result<f64> {
        Self::check_unit(x)?;
        Ok(self.map.apply_unchecked(x))
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        Self::check_unit(x)?;
        Ok(self.map.derivative_unchecked(x))
    }

    pub fn invert_left(&self, y: f64) -> Result<f64> {
        Self::check_unit(y)?;
        self.map.invert_left_unchecked(y)
    }

    pub fn invert_right(&self, y: f64) -> Result<f64> {
        Self::check_unit(y)?;
        Ok(self.map.invert_right_unchecked(y))
    }

    /// The index `n` with `x ∈ J_n`, or [`Location::Tail`] below `a[n_max]`.
    pub fn locate(&self, x: f64) -> Result<Location> {
        Self::check_unit(x)?;
        Ok(locate_in(self.partition.endpoints(), x))
    }

    /// Builds the cylinder `J_h ∩ ⋂_i T^{-i}(P_{θ_i})` by pulling the last
    /// symbol's branch domain back through the inverse branches.
    pub fn hole_from_word(&self, h: usize, word: &[Symbol]) -> Result<Hole> {
        if word.is_empty() {
            return Err(Error::InvalidHole("the word must contain at least one symbol".into()));
        }
        if h > self.partition.n_max() {
            return Err(Error::InvalidHole(format!("base index {h} exceeds partition depth {}", self.partition.n_max())));
        }
        let (lo, hi) = cylinder(&self.map, word)?;
        let (jl, jh) = self.partition.cell(h);
        let (lo, hi) = (lo.max(jl), hi.min(jh));
        if !(lo < hi) {
            return Err(Error::EmptyCylinder { h, word: word_string(word) });
        }
        if lo <= 0.0 {
            return Err(Error::InvalidHole("a cylinder hole may not contain 0".into()));
        }
        Ok(Hole { kind: HoleKind::Cylinder { base_index: h, word: word.to_vec() }, lo, hi })
    }

    /// The non-cylinder control hole `[0, a_n)`.
    pub fn neutral_control_hole(&self, n: usize) -> Result<Hole> {
        if n == 0 || n > self.partition.n_max() {
            return Err(Error::InvalidHole(format!("control index {n} out of range")));
        }
        Hole::control(0.0, self.partition.a(n))
    }
}

/// `⋂_i T^{-i}(P_{θ_i})` as a half-open interval (possibly empty).
pub fn cylinder(map: &LsvMap, word: &[Symbol]) -> Result<(f64, f64)> {
    let last = *word.last().expect("nonempty word");
    let (mut lo, mut hi) = branch_domain(last);
    for &sym in word[..word.len() - 1].iter().rev() {
        lo = map.branch_inverse(sym, lo)?;
        hi = map.branch_inverse(sym, hi)?;
    }
    Ok((lo, hi))
}

pub(crate) fn branch_domain(sym: Symbol) -> (f64, f64) {
    match sym {
        Symbol::L => (0.0, 0.5),
        Symbol::R => (0.5, 1.0),
    }
}

/// Binary search over the decreasing endpoint table.
pub(crate) fn locate_in(a: &[f64], x: f64) -> Location {
    if x >= 0.5 {
        return Location::Cell(0);
    }
    if x < a[a.len() - 1] {
        return Location::Tail;
    }
    // a is strictly decreasing: count the prefix with a[k] > x.
    let idx = a.partition_point(|&v| v > x);
    Location::Cell(idx)
}
