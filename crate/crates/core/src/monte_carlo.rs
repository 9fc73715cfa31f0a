//! Particle ensembles: sampling from the initial measures, orbit evolution
//! with escape detection, survival curves with binomial errors and
//! empirical pushforward histograms.
//!
//! Random numbers come from ChaCha8 with one stream per chunk of
//! [`CHUNK`] particles, so results do not depend on how chunks are spread
//! over threads.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::density::SingularDensity;
use crate::error::{Error, Result};
use crate::map::{Hole, LsvMap, MapSystem};
use crate::rates::EscapeCurve;

const MODULE: &str = "monte_carlo";

pub const CHUNK: usize = 65_536;

/// Identifier of the random generator, recorded in output files.
pub const RNG_ALGORITHM: &str = "chacha8-stream-per-65536-chunk";

/// Minimum acceptance probability of the rejection sampler.
pub const MIN_ACCEPTANCE: f64 = 1e-3;

/// Initial measure of an ensemble.
#[derive(Clone, Debug)]
pub enum Sampler {
    Lebesgue,
    /// Density `(1-α) x^{-α}`, sampled by inverse CDF.
    Power(f64),
    /// Rejection sampling of a grid density against the envelope
    /// `1.05 · max g · x^{-α}`, with `α` the density's exponent.
    Rejection(Arc<SingularDensity>),
}

/// A sampler with its envelope constants resolved.
#[derive(Clone, Debug)]
pub(crate) enum Prepared {
    Uniform,
    Power(f64),
    Rejection { f: Arc<SingularDensity>, bound: f64 },
}

impl Sampler {
    pub fn label(&self) -> String {
        match self {
            Sampler::Lebesgue => "lebesgue".into(),
            Sampler::Power(a) => format!("power({a})"),
            Sampler::Rejection(f) => format!("rejection(alpha={})", f.alpha()),
        }
    }

    pub(crate) fn prepare(&self) -> Result<Prepared> {
        match self {
            Sampler::Lebesgue => Ok(Prepared::Uniform),
            Sampler::Power(a) => {
                if !(0.0..1.0).contains(a) {
                    return Err(Error::domain(MODULE, format!("alpha must lie in [0, 1), got {a}")));
                }
                Ok(Prepared::Power(*a))
            }
            Sampler::Rejection(f) => {
                let f = Arc::new(f.normalized()?);
                let gmax = f.g_right().iter().chain(f.g_left()).fold(0.0_f64, |m, &g| m.max(g));
                let bound = 1.05 * gmax;
                // Acceptance probability = (1-α) / bound for a normalized f.
                let acceptance = (1.0 - f.alpha()) / bound;
                if !(acceptance >= MIN_ACCEPTANCE) {
                    return Err(Error::domain(MODULE, format!("rejection acceptance {acceptance:.2e} below {MIN_ACCEPTANCE}")));
                }
                Ok(Prepared::Rejection { f, bound })
            }
        }
    }
}

impl Prepared {
    #[inline]
    pub(crate) fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Prepared::Uniform => rng.random::<f64>(),
            Prepared::Power(a) => power_draw(rng, *a),
            Prepared::Rejection { f, bound } => loop {
                let x = power_draw(rng, f.alpha());
                if rng.random::<f64>() * bound < f.g_at(x) {
                    break x;
                }
            },
        }
    }
}

#[inline]
pub(crate) fn power_draw(rng: &mut ChaCha8Rng, alpha: f64) -> f64 {
    if alpha == 0.0 {
        rng.random::<f64>()
    } else {
        rng.random::<f64>().powf(1.0 / (1.0 - alpha))
    }
}

/// The generator for chunk `c` of a run seeded with `seed`.
pub(crate) fn chunk_rng(seed: u64, c: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(c as u64);
    rng
}

/// Particles with positions and alive flags. Dead particles keep their
/// last position and are never moved again.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub positions: Vec<f64>,
    pub alive: Vec<bool>,
    pub t: usize,
    pub seed: u64,
    pub n_total: usize,
}

impl Ensemble {
    pub fn from_positions(positions: Vec<f64>, seed: u64) -> Result<Self> {
        if positions.iter().any(|x| !(0.0..1.0).contains(x)) {
            return Err(Error::domain(MODULE, "positions must lie in [0, 1)"));
        }
        let n = positions.len();
        Ok(Ensemble { positions, alive: vec![true; n], t: 0, seed, n_total: n })
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }
}

pub fn sample_initial(sampler: &Sampler, n: usize, seed: u64) -> Result<Ensemble> {
    if n < 1 {
        return Err(Error::domain(MODULE, "ensemble size must be at least 1"));
    }
    let prep = sampler.prepare()?;
    let mut positions = vec![0.0; n];
    positions.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let mut rng = chunk_rng(seed, c);
        for x in chunk.iter_mut() {
            *x = prep.draw(&mut rng);
        }
    });
    Ok(Ensemble { positions, alive: vec![true; n], t: 0, seed, n_total: n })
}

/// Advances one chunk by `steps`, adding alive counts after each step
/// (including the current time first) into `counts`.
fn evolve_chunk(map: &LsvMap, hole: Option<&Hole>, pos: &mut [f64], alive: &mut [bool], steps: usize, counts: &mut [u64]) {
    for (x, a) in pos.iter_mut().zip(alive.iter_mut()) {
        if *a && hole.is_some_and(|h| h.contains(*x)) {
            *a = false;
        }
        if !*a {
            continue;
        }
        counts[0] += 1;
        let mut y = *x;
        for c in counts.iter_mut().take(steps + 1).skip(1) {
            y = map.apply_unchecked(y);
            if hole.is_some_and(|h| h.contains(y)) {
                *a = false;
                break;
            }
            *c += 1;
        }
        *x = y;
    }
}

fn survival_curve(counts: &[u64], n: usize, t0: usize, label: String) -> Result<EscapeCurve> {
    let times = (t0..t0 + counts.len()).collect();
    let masses: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let stderr = masses.iter().map(|&s| (s * (1.0 - s) / n as f64).sqrt()).collect();
    EscapeCurve::new(times, masses, stderr, label)
}

/// Evolves the ensemble `t_max` steps, killing particles on entry into the
/// hole, and returns `s_t = alive(t) / n_total` from the current time on.
pub fn evolve_record(sys: &MapSystem, e: &mut Ensemble, t_max: usize) -> Result<EscapeCurve> {
    let map = *sys.map();
    let hole = sys.hole();
    let counts = e
        .positions
        .par_chunks_mut(CHUNK)
        .zip(e.alive.par_chunks_mut(CHUNK))
        .map(|(p, a)| {
            let mut c = vec![0u64; t_max + 1];
            evolve_chunk(&map, hole, p, a, t_max, &mut c);
            c
        })
        .reduce(|| vec![0u64; t_max + 1], add_counts);
    let t0 = e.t;
    e.t += t_max;
    let label = format!("montecarlo gamma={} n={} seed={} rng={}", sys.gamma(), e.n_total, e.seed, RNG_ALGORITHM);
    survival_curve(&counts, e.n_total, t0, label)
}

fn add_counts(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// The same curve as [`sample_initial`] followed by [`evolve_record`], without
/// storing positions; suited to ensembles too large for memory.
pub fn survival_streaming(sys: &MapSystem, sampler: &Sampler, n: usize, t_max: usize, seed: u64) -> Result<EscapeCurve> {
    if n < 1 {
        return Err(Error::domain(MODULE, "ensemble size must be at least 1"));
    }
    let prep = sampler.prepare()?;
    let map = *sys.map();
    let hole = sys.hole();
    let chunks = n.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n - c * CHUNK);
            let mut rng = chunk_rng(seed, c);
            let mut pos: Vec<f64> = (0..len).map(|_| prep.draw(&mut rng)).collect();
            let mut alive = vec![true; len];
            let mut counts = vec![0u64; t_max + 1];
            evolve_chunk(&map, hole, &mut pos, &mut alive, t_max, &mut counts);
            counts
        })
        .reduce(|| vec![0u64; t_max + 1], add_counts);
    let label = format!("montecarlo-streaming gamma={} n={n} seed={seed} rng={RNG_ALGORITHM}", sys.gamma());
    survival_curve(&counts, n, 0, label)
}

/// Histogram of alive positions over `bins` (breakpoints), normalized to
/// total mass 1. Positions outside `[bins[0], bins[last])` are not counted.
pub fn empirical_pushforward(e: &Ensemble, bins: &[f64]) -> Result<Vec<f64>> {
    if bins.len() < 2 || bins.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain(MODULE, "bins must be a strictly increasing breakpoint sequence"));
    }
    let mut counts = vec![0u64; bins.len() - 1];
    let mut total = 0u64;
    for (&x, &a) in e.positions.iter().zip(&e.alive) {
        if !a {
            continue;
        }
        let k = bins.partition_point(|&b| b <= x);
        if k >= 1 && k < bins.len() {
            counts[k - 1] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Extinction { module: MODULE, t: e.t });
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}
