//! Exact survivor sets `İᵗ = ⋂_{i≤t} T^{-i}(I∖H)`, shells and first-entry
//! sets, represented as finite unions of half-open intervals.
//!
//! Every endpoint is produced by the same branch inverses that build the
//! partition table, so endpoints that should coincide are bitwise equal and
//! merging needs no tolerance.

use crate::error::{Error, Result};
use crate::map::{LsvMap, MapSystem};

const MODULE: &str = "survivor_exact";

/// Intervals narrower than this are dropped; their mass is kept in
/// [`IntervalSet::pruned_mass`].
pub const PRUNE_FLOOR: f64 = 1e-15;
pub const DEFAULT_T_MAX_EXACT: usize = 25;
pub const DEFAULT_INTERVAL_CAP: usize = 10_000_000;

/// Sorted, pairwise disjoint, nonempty half-open intervals inside `[0, 1)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntervalSet {
    iv: Vec<(f64, f64)>,
    pruned: f64,
}

impl IntervalSet {
    pub fn empty() -> Self {
        IntervalSet::default()
    }

    pub fn unit() -> Self {
        IntervalSet { iv: vec![(0.0, 1.0)], pruned: 0.0 }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::from_intervals(vec![(lo, hi)])
    }

    /// Normalizes an arbitrary list: clips to `[0, 1]`, sorts, merges
    /// overlapping or touching intervals and prunes slivers.
    pub fn from_intervals(mut v: Vec<(f64, f64)>) -> Self {
        v.retain(|&(a, b)| b > a);
        for p in v.iter_mut() {
            p.0 = p.0.max(0.0);
            p.1 = p.1.min(1.0);
        }
        v.retain(|&(a, b)| b > a);
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
        for (a, b) in v {
            match out.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        let mut s = IntervalSet { iv: out, pruned: 0.0 };
        s.prune();
        s
    }

    /// Builds from intervals already sorted and disjoint, merging exact
    /// adjacencies only.
    fn from_sorted(v: Vec<(f64, f64)>, inherited: f64) -> Self {
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
        for (a, b) in v {
            if !(b > a) {
                continue;
            }
            match out.last_mut() {
                Some(last) if a == last.1 => last.1 = b,
                _ => out.push((a, b)),
            }
        }
        let mut s = IntervalSet { iv: out, pruned: inherited };
        s.prune();
        s
    }

    fn prune(&mut self) {
        let mut dropped = 0.0;
        self.iv.retain(|&(a, b)| {
            if b - a < PRUNE_FLOOR {
                dropped += b - a;
                false
            } else {
                true
            }
        });
        self.pruned += dropped;
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.iv
    }

    pub fn count(&self) -> usize {
        self.iv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iv.is_empty()
    }

    /// Total width of slivers removed while producing this set.
    pub fn pruned_mass(&self) -> f64 {
        self.pruned
    }

    pub fn contains(&self, x: f64) -> bool {
        let k = self.iv.partition_point(|&(a, _)| a <= x);
        k > 0 && x < self.iv[k - 1].1
    }

    /// Whether every interval of `other` lies inside some interval of `self`.
    pub fn contains_set(&self, other: &IntervalSet) -> bool {
        other.iv.iter().all(|&(a, b)| {
            let k = self.iv.partition_point(|&(lo, _)| lo <= a);
            k > 0 && b <= self.iv[k - 1].1
        })
    }

    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let (x, y) = (&self.iv, &other.iv);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < x.len() && j < y.len() {
            let lo = x[i].0.max(y[j].0);
            let hi = x[i].1.min(y[j].1);
            if lo < hi {
                out.push((lo, hi));
            }
            if x[i].1 < y[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalSet::from_sorted(out, self.pruned + other.pruned)
    }

    pub fn complement(&self) -> IntervalSet {
        let mut out = Vec::with_capacity(self.iv.len() + 1);
        let mut cur = 0.0;
        for &(a, b) in &self.iv {
            if a > cur {
                out.push((cur, a));
            }
            cur = b;
        }
        if cur < 1.0 {
            out.push((cur, 1.0));
        }
        IntervalSet::from_sorted(out, self.pruned)
    }

    pub fn difference(&self, other: &IntervalSet) -> IntervalSet {
        self.intersect(&other.complement())
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        let mut v = self.iv.clone();
        v.extend_from_slice(&other.iv);
        let mut s = IntervalSet::from_intervals(v);
        s.pruned += self.pruned + other.pruned;
        s
    }

    pub fn lebesgue_mass(&self) -> f64 {
        self.iv.iter().map(|&(a, b)| b - a).sum()
    }

    /// `∫_S x^{-α} dx / ∫_0^1 x^{-α} dx`, i.e. `Σ (b^{1-α} - a^{1-α})`.
    pub fn alpha_mass(&self, alpha: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::domain(MODULE, format!("alpha must lie in [0, 1), got {alpha}")));
        }
        Ok(self.iv.iter().map(|&(a, b)| power_increment(a, b, 1.0 - alpha)).sum())
    }
}

/// `b^s - a^s` for `0 ≤ a < b`, without cancellation for narrow intervals.
pub(crate) fn power_increment(a: f64, b: f64, s: f64) -> f64 {
    if a <= 0.0 {
        return b.powf(s);
    }
    a.powf(s) * (s * ((b - a) / a).ln_1p()).exp_m1()
}

/// `T^{-1}(S)`, pulled back interval by interval through both branches.
pub fn preimage(map: &LsvMap, s: &IntervalSet) -> Result<IntervalSet> {
    let mut out = Vec::with_capacity(2 * s.count());
    for &(a, b) in &s.iv {
        out.push((map.invert_left_unchecked(a)?, map.invert_left_unchecked(b)?));
    }
    for &(a, b) in &s.iv {
        out.push((map.invert_right_unchecked(a), map.invert_right_unchecked(b)));
    }
    Ok(IntervalSet::from_sorted(out, s.pruned))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactLimits {
    pub t_max_exact: usize,
    pub interval_cap: usize,
}

impl Default for ExactLimits {
    fn default() -> Self {
        ExactLimits { t_max_exact: DEFAULT_T_MAX_EXACT, interval_cap: DEFAULT_INTERVAL_CAP }
    }
}

/// `A_0, …, A_t` with `A_0 = I∖B` and `A_{i+1} = A_0 ∩ T^{-1}(A_i)`: the points
/// whose orbit avoids `B` through time `i`.
pub fn avoiding_sets(map: &LsvMap, avoid: &IntervalSet, t: usize, limits: ExactLimits) -> Result<Vec<IntervalSet>> {
    if t > limits.t_max_exact {
        return Err(Error::precondition(MODULE, format!("t = {t} exceeds t_max_exact = {}", limits.t_max_exact)));
    }
    let base = avoid.complement();
    let mut sets = Vec::with_capacity(t + 1);
    sets.push(base.clone());
    for i in 1..=t {
        let next = base.intersect(&preimage(map, &sets[i - 1])?);
        if next.count() > limits.interval_cap {
            return Err(Error::Budget { t: i, count: next.count(), cap: limits.interval_cap });
        }
        sets.push(next);
    }
    Ok(sets)
}

fn hole_set(sys: &MapSystem) -> Result<IntervalSet> {
    let h = sys.require_hole(MODULE)?;
    Ok(IntervalSet::interval(h.lo(), h.hi()))
}

/// `İ⁰, …, İᵗ`.
pub fn survivors(sys: &MapSystem, t: usize, limits: ExactLimits) -> Result<Vec<IntervalSet>> {
    avoiding_sets(sys.map(), &hole_set(sys)?, t, limits)
}

pub fn survivor(sys: &MapSystem, t: usize) -> Result<IntervalSet> {
    Ok(survivors(sys, t, ExactLimits::default())?.pop().expect("nonempty"))
}

/// `E⁰, …, Eᵗ` where `Eᵏ` is the set of points whose first visit to `J_h`
/// happens at time `k`.
pub fn first_entry_sets(sys: &MapSystem, t: usize, limits: ExactLimits) -> Result<Vec<IntervalSet>> {
    let hole = sys.require_hole(MODULE)?;
    let h = hole
        .base_index()
        .ok_or_else(|| Error::precondition(MODULE, "first-entry sets need a cylinder hole"))?;
    let (lo, hi) = sys.partition().cell(h);
    let jh = IntervalSet::interval(lo, hi);
    let avoid = avoiding_sets(sys.map(), &jh, t, limits)?;
    let mut out = Vec::with_capacity(t + 1);
    out.push(jh);
    for k in 1..=t {
        out.push(avoid[k - 1].difference(&avoid[k]));
    }
    Ok(out)
}

pub fn first_entry_set(sys: &MapSystem, t: usize) -> Result<IntervalSet> {
    Ok(first_entry_sets(sys, t, ExactLimits::default())?.pop().expect("nonempty"))
}

/// `m(İ^{k-1} ∖ İᵏ)` for `k = 1..=t`; entry `k - 1` holds shell `k`.
pub fn shell_masses(sys: &MapSystem, t: usize, limits: ExactLimits) -> Result<Vec<f64>> {
    let s = survivors(sys, t, limits)?;
    Ok((1..=t).map(|k| s[k - 1].difference(&s[k]).lebesgue_mass()).collect())
}

pub fn shell_mass(sys: &MapSystem, t: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::precondition(MODULE, "shell index must be at least 1"));
    }
    Ok(*shell_masses(sys, t, ExactLimits::default())?.last().expect("nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Symbol;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sys_j(h: usize) -> MapSystem {
        MapSystem::with_cylinder_hole(0.5, 2_000, h, &[Symbol::L]).unwrap()
    }

    #[test]
    fn masses() {
        assert_eq!(IntervalSet::unit().lebesgue_mass(), 1.0);
        assert_eq!(IntervalSet::empty().lebesgue_mass(), 0.0);
        let s = IntervalSet::from_intervals(vec![(0.0, 0.25), (0.5, 0.75)]);
        assert_eq!(s.lebesgue_mass(), 0.5);
        assert_eq!(s.alpha_mass(0.0).unwrap(), 0.5);
        assert_eq!(IntervalSet::unit().alpha_mass(0.3).unwrap(), 1.0);
        assert!((IntervalSet::interval(0.0, 0.25).alpha_mass(0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(s.alpha_mass(1.0).is_err());
    }

    #[test]
    fn alpha_mass_narrow_interval() {
        let a = 0.3_f64;
        let w = 1e-12;
        let direct = a.powf(-0.5) * w;
        let v = IntervalSet::interval(a, a + w).alpha_mass(0.5).unwrap() / 0.5;
        assert!((v - direct).abs() / direct < 1e-3);
    }

    #[test]
    fn preimage_examples() {
        let sys = sys_j(2);
        let m = sys.map();
        assert_eq!(preimage(m, &IntervalSet::unit()).unwrap(), IntervalSet::unit());
        let p = preimage(m, &IntervalSet::interval(0.5, 1.0)).unwrap();
        assert_eq!(p.intervals(), &[(sys.partition().a(1), 0.5), (0.75, 1.0)]);
    }

    #[test]
    fn preimage_mass_matches_monte_carlo() {
        let sys = sys_j(2);
        let s = IntervalSet::interval(0.3, 0.6);
        let exact = preimage(sys.map(), &s).unwrap().lebesgue_mass();
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hits = (0..n).filter(|_| s.contains(sys.map().apply_unchecked(rng.random::<f64>()))).count();
        let p = hits as f64 / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((p - exact).abs() < 4.0 * se, "{p} vs {exact}");
    }

    #[test]
    fn survivor_zero_is_complement() {
        let sys = sys_j(1);
        let s0 = survivor(&sys, 0).unwrap();
        assert_eq!(s0.intervals(), &[(0.0, sys.partition().a(1)), (0.5, 1.0)]);
    }

    #[test]
    fn survivors_contain_neutral_tail_and_nest() {
        let sys = sys_j(2);
        let s = survivors(&sys, 20, ExactLimits::default()).unwrap();
        for t in 0..=20 {
            let tail = IntervalSet::interval(0.0, sys.partition().a(t + 2));
            assert!(s[t].contains_set(&tail), "t={t}");
            assert!(s[t].alpha_mass(0.4).unwrap() >= tail.alpha_mass(0.4).unwrap());
            if t > 0 {
                assert!(s[t - 1].contains_set(&s[t]));
            }
        }
    }

    #[test]
    fn survivor_membership_matches_orbits() {
        let sys = sys_j(2);
        let hole = sys.hole().unwrap().clone();
        let s15 = survivor(&sys, 15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100_000 {
            let x0: f64 = rng.random();
            let mut x = x0;
            let mut alive = !hole.contains(x);
            for _ in 0..15 {
                if !alive {
                    break;
                }
                x = sys.map().apply_unchecked(x);
                alive = !hole.contains(x);
            }
            assert_eq!(alive, s15.contains(x0), "x0={x0}");
        }
    }

    #[test]
    fn shells_telescope() {
        let sys = sys_j(2);
        let s = survivors(&sys, 25, ExactLimits::default()).unwrap();
        let shells = shell_masses(&sys, 25, ExactLimits::default()).unwrap();
        let sum: f64 = shells.iter().sum();
        assert!(shells.iter().all(|&v| v >= 0.0));
        assert!((sum - (s[0].lebesgue_mass() - s[25].lebesgue_mass())).abs() < 1e-12);
    }

    #[test]
    fn first_entry_sets_are_disjoint() {
        let sys = sys_j(2);
        let e = first_entry_sets(&sys, 20, ExactLimits::default()).unwrap();
        assert_eq!(e[0].intervals(), &[sys.partition().cell(2)]);
        let mut total = 0.0;
        let mut union = IntervalSet::empty();
        for k in 0..e.len() {
            assert!(union.intersect(&e[k]).is_empty(), "k={k}");
            union = union.union(&e[k]);
            total += e[k].lebesgue_mass();
        }
        assert!(total <= 1.0 + 1e-12);
        assert!(e[1].intersect(&e[2]).is_empty());
    }

    #[test]
    fn budget_and_preconditions() {
        let sys = sys_j(2);
        let tight = ExactLimits { t_max_exact: 25, interval_cap: 10 };
        assert!(matches!(survivors(&sys, 15, tight), Err(Error::Budget { .. })));
        assert!(survivor(&sys, 26).is_err());
        assert!(survivor(&sys.closed(), 1).is_err());
        assert!(shell_mass(&sys, 0).is_err());
    }

    fn arb_set() -> impl Strategy<Value = IntervalSet> {
        prop::collection::vec((0.0f64..1.0, 0.0f64..0.2), 0..8)
            .prop_map(|v| IntervalSet::from_intervals(v.into_iter().map(|(a, w)| (a, (a + w).min(1.0))).collect()))
    }

    proptest! {
        #[test]
        fn set_algebra_matches_pointwise(a in arb_set(), b in arb_set(), xs in prop::collection::vec(0.0f64..1.0, 50)) {
            let i = a.intersect(&b);
            let d = a.difference(&b);
            let u = a.union(&b);
            let c = a.complement();
            for &x in &xs {
                prop_assert_eq!(i.contains(x), a.contains(x) && b.contains(x));
                prop_assert_eq!(d.contains(x), a.contains(x) && !b.contains(x));
                prop_assert_eq!(u.contains(x), a.contains(x) || b.contains(x));
                prop_assert_eq!(c.contains(x), !a.contains(x));
            }
            prop_assert!((i.lebesgue_mass() + d.lebesgue_mass() - a.lebesgue_mass()).abs() < 1e-12);
        }

        #[test]
        fn preimage_is_pointwise(a in arb_set(), xs in prop::collection::vec(0.0f64..1.0, 50)) {
            let map = LsvMap::new(0.5).unwrap();
            let p = preimage(&map, &a).unwrap();
            for &x in &xs {
                let y = map.apply_unchecked(x);
                // Skip points whose image sits within round-off of an endpoint.
                let near = a.intervals().iter().any(|&(lo, hi)| (y - lo).abs() < 1e-12 || (y - hi).abs() < 1e-12);
                if !near {
                    prop_assert_eq!(p.contains(x), a.contains(y));
                }
            }
        }
    }
}
