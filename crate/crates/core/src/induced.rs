//! The first-return map `S = T^R` on `I_S = [a_{n_S}, 1)` and the escape
//! curve of the induced open system, estimated by Monte Carlo.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::map::{LsvMap, MapSystem};
use crate::monte_carlo::{chunk_rng, CHUNK, RNG_ALGORITHM};
use crate::rates::EscapeCurve;

use rand::Rng;

const MODULE: &str = "induced_map";

pub const DEFAULT_R_CAP: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InducedSystem {
    n_s: usize,
    lo: f64,
    r_cap: u64,
}

impl InducedSystem {
    /// Inducing level `n_s` (default `h + 2`) and return-time cap (default
    /// [`DEFAULT_R_CAP`]).
    pub fn new(sys: &MapSystem, n_s: Option<usize>, r_cap: Option<u64>) -> Result<Self> {
        let h = sys
            .require_hole(MODULE)?
            .base_index()
            .ok_or_else(|| Error::precondition(MODULE, "inducing needs a cylinder hole"))?;
        let n_s = n_s.unwrap_or(h + 2);
        if n_s <= h {
            return Err(Error::precondition(MODULE, format!("n_S = {n_s} must exceed h = {h}")));
        }
        if n_s > sys.partition().n_max() {
            return Err(Error::precondition(MODULE, format!("n_S = {n_s} exceeds the partition depth")));
        }
        let r_cap = r_cap.unwrap_or(DEFAULT_R_CAP);
        if r_cap < n_s as u64 + 2 {
            return Err(Error::precondition(MODULE, format!("R_cap = {r_cap} must be at least n_S + 2")));
        }
        Ok(InducedSystem { n_s, lo: sys.partition().a(n_s), r_cap })
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    /// `I_S = [lo, 1)`.
    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn r_cap(&self) -> u64 {
        self.r_cap
    }

    fn step(&self, map: &LsvMap, x: f64) -> Result<(f64, u64)> {
        let mut y = x;
        let mut r = 0u64;
        loop {
            y = map.apply_unchecked(y);
            r += 1;
            if y >= self.lo {
                return Ok((y, r));
            }
            if r >= self.r_cap {
                return Err(Error::ReturnCap { x, cap: self.r_cap });
            }
        }
    }
}

/// `(S x, R(x))`.
pub fn first_return(sys: &MapSystem, ind: &InducedSystem, x: f64) -> Result<(f64, u64)> {
    if !(x >= ind.lo && x < 1.0) {
        return Err(Error::domain(MODULE, format!("x = {x} outside I_S = [{}, 1)", ind.lo)));
    }
    ind.step(sys.map(), x)
}

#[derive(Clone, Debug)]
pub struct InducedRun {
    /// `m(İ_Sᵗ) / m(I_S)` over `t = 0..=t_max`.
    pub curve: EscapeCurve,
    /// Samples dropped because a return exceeded the cap.
    pub capped: usize,
}

/// Samples `n` uniform points of `I_S` and follows their `S`-orbits until they
/// land in the hole. Samples that hit the return cap are excluded from the
/// estimate and counted in [`InducedRun::capped`].
pub fn induced_escape_curve(sys: &MapSystem, ind: &InducedSystem, n: usize, t_max: usize, seed: u64) -> Result<InducedRun> {
    if t_max < 10 {
        return Err(Error::precondition(MODULE, "t_max must be at least 10"));
    }
    if n < 1 {
        return Err(Error::precondition(MODULE, "need at least one sample"));
    }
    let hole = sys.require_hole(MODULE)?.clone();
    let map = *sys.map();
    let ind = *ind;
    let chunks = n.div_ceil(CHUNK);
    // counts[t] = samples alive at time t; last slot counts capped samples.
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n - c * CHUNK);
            let mut rng = chunk_rng(seed, c);
            let mut counts = vec![0u64; t_max + 2];
            for _ in 0..len {
                let mut x = ind.lo + (1.0 - ind.lo) * rng.random::<f64>();
                let mut survived = 0usize;
                let mut capped = false;
                if !hole.contains(x) {
                    survived = 1;
                    while survived <= t_max {
                        match ind.step(&map, x) {
                            Ok((y, _)) => x = y,
                            Err(_) => {
                                capped = true;
                                break;
                            }
                        }
                        if hole.contains(x) {
                            break;
                        }
                        survived += 1;
                    }
                }
                if capped {
                    counts[t_max + 1] += 1;
                } else {
                    for v in counts.iter_mut().take(survived) {
                        *v += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; t_max + 2],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let capped = counts[t_max + 1] as usize;
    let n_eff = n - capped;
    if n_eff == 0 || counts[t_max] == 0 {
        return Err(Error::Extinction { module: MODULE, t: (0..=t_max).find(|&t| counts[t] == 0).unwrap_or(0) });
    }
    let masses: Vec<f64> = counts[..=t_max].iter().map(|&c| c as f64 / n_eff as f64).collect();
    let stderr = masses.iter().map(|&s| (s * (1.0 - s) / n_eff as f64).sqrt()).collect();
    let label = format!("induced gamma={} n_S={} n={n} seed={seed} rng={RNG_ALGORITHM}", sys.gamma(), ind.n_s);
    let curve = EscapeCurve::new((0..=t_max).collect(), masses, stderr, label)?;
    Ok(InducedRun { curve, capped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Symbol;
    use crate::rates::fit_exponential_rate;

    fn j2() -> MapSystem {
        MapSystem::with_cylinder_hole(0.5, 5_000, 2, &[Symbol::L]).unwrap()
    }

    #[test]
    fn construction_rules() {
        let sys = j2();
        let ind = InducedSystem::new(&sys, None, None).unwrap();
        assert_eq!(ind.n_s(), 4);
        assert_eq!(ind.lo(), sys.partition().a(4));
        assert!(InducedSystem::new(&sys, Some(2), None).is_err());
        assert!(InducedSystem::new(&sys, Some(4), Some(5)).is_err());
        assert!(InducedSystem::new(&sys.closed(), None, None).is_err());
    }

    #[test]
    fn return_time_examples() {
        let sys = j2();
        let ind = InducedSystem::new(&sys, None, None).unwrap();
        for x in [0.75, 0.8, 0.99] {
            assert_eq!(first_return(&sys, &ind, x).unwrap().1, 1);
        }
        // T(x) ∈ J_{n_S + k}: climb k cells, then one more step to re-enter.
        for k in 1..6usize {
            let (lo, hi) = sys.partition().cell(ind.n_s() + k);
            let y = 0.5 * (lo + hi);
            let x = sys.invert_right(y).unwrap();
            let (sx, r) = first_return(&sys, &ind, x).unwrap();
            assert_eq!(r, k as u64 + 1);
            assert!(sx >= ind.lo());
        }
        assert!(first_return(&sys, &ind, 0.0).is_err());
    }

    #[test]
    fn return_time_cap() {
        let sys = j2();
        let ind = InducedSystem::new(&sys, None, Some(10)).unwrap();
        let y = sys.partition().a(40);
        let x = sys.invert_right(y).unwrap();
        assert!(matches!(first_return(&sys, &ind, x), Err(Error::ReturnCap { .. })));
    }

    #[test]
    fn induced_escape_is_exponential() {
        let sys = j2();
        let ind = InducedSystem::new(&sys, None, None).unwrap();
        let run = induced_escape_curve(&sys, &ind, 100_000, 30, 1).unwrap();
        let c = &run.curve;
        let (hl, hh) = sys.partition().cell(2);
        let m0 = (1.0 - ind.lo() - (hh - hl)) / (1.0 - ind.lo());
        let se = (m0 * (1.0 - m0) / 1e5).sqrt();
        assert!((c.masses[0] - m0).abs() < 4.0 * se);
        let fit = fit_exponential_rate(c, (5, 30)).unwrap();
        assert!(fit.value > 0.0 && fit.r2 > 0.99, "{fit:?}");
        assert!(induced_escape_curve(&sys, &ind, 100, 5, 1).is_err());
    }
}
