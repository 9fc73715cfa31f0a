//! Browser bindings for three small experiments on a coarse grid: the escape
//! curve, the normalized pushforward density and the survivor set.
//!
//! Build with `wasm-pack build --target web --out-dir www/pkg` and serve `www/`.

use openlsv::density::{DensityKind, GridConfig, Transport};
use openlsv::map::MapSystem;
use openlsv::runner::ExperimentConfig;
use openlsv::survivor::survivor;
use openlsv::Result;
use wasm_bindgen::prelude::*;

/// Largest time accepted by the survivor view; interval counts grow
/// geometrically.
pub const MAX_SURVIVOR_T: usize = 16;
pub const MAX_T: usize = 5_000;

fn system(gamma: f64, hole: &str) -> Result<MapSystem> {
    let mut cfg = ExperimentConfig::default();
    cfg.set("gamma", &gamma.to_string())?;
    cfg.set("hole", hole)?;
    cfg.n_max = 2_000;
    cfg.grid = GridConfig::coarse().m0;
    cfg.align = GridConfig::coarse().n_align;
    cfg.build_system()
}

fn density_kind(name: &str, alpha: f64) -> Result<DensityKind> {
    match name {
        "lebesgue" => Ok(DensityKind::Lebesgue),
        "power" => Ok(DensityKind::Power(alpha)),
        "srb" => Ok(DensityKind::SrbProxy { burn_in: 100 }),
        other => Err(openlsv::Error::Config(format!("unknown density '{other}'"))),
    }
}

fn check_t(t: usize, max: usize) -> Result<()> {
    if t < 1 || t > max {
        return Err(openlsv::Error::Config(format!("t must lie in [1, {max}], got {t}")));
    }
    Ok(())
}

/// Surviving masses for `t = 0..=t_max`.
pub fn escape_curve_impl(gamma: f64, hole: &str, density: &str, alpha: f64, t_max: usize) -> Result<Vec<f64>> {
    check_t(t_max, MAX_T)?;
    let sys = system(gamma, hole)?;
    let tr = Transport::new(&sys, &GridConfig::coarse())?;
    let f = tr.make_density(&density_kind(density, alpha)?)?;
    Ok(tr.iterate_open(&f, t_max, &[])?.curve.masses)
}

/// `[mass near 0 (ε = 0.05), f(x_1), …, f(x_points)]` for the normalized
/// pushforward of Lebesgue at time `t`, with `x_k` log-spaced on `[1e-4, 1)`.
pub fn pushforward_impl(gamma: f64, hole: &str, t: usize, points: usize) -> Result<Vec<f64>> {
    check_t(t, MAX_T)?;
    let sys = system(gamma, hole)?;
    let tr = Transport::new(&sys, &GridConfig::coarse())?;
    let f = tr.make_density(&DensityKind::Lebesgue)?;
    let run = tr.iterate_open(&f, t, &[t])?;
    let g = &run.checkpoints[0].1;
    let mut out = vec![g.mass_near_zero(0.05)?];
    out.extend(sample_points(points).into_iter().map(|x| g.value(x)));
    Ok(out)
}

/// Abscissae used by [`pushforward_impl`].
pub fn sample_points(points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n).map(|k| 10f64.powf(-4.0 + 4.0 * (k as f64 + 0.5) / n as f64)).collect()
}

/// Survivor set at time `t` as flattened `[lo, hi, lo, hi, …]`.
pub fn survivor_impl(gamma: f64, hole: &str, t: usize) -> Result<Vec<f64>> {
    check_t(t, MAX_SURVIVOR_T)?;
    let sys = system(gamma, hole)?;
    Ok(survivor(&sys, t)?.intervals().iter().flat_map(|&(a, b)| [a, b]).collect())
}

fn js(e: openlsv::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn escape_curve(gamma: f64, hole: &str, density: &str, alpha: f64, t_max: usize) -> std::result::Result<Vec<f64>, JsError> {
    escape_curve_impl(gamma, hole, density, alpha, t_max).map_err(js)
}

#[wasm_bindgen]
pub fn pushforward(gamma: f64, hole: &str, t: usize, points: usize) -> std::result::Result<Vec<f64>, JsError> {
    pushforward_impl(gamma, hole, t, points).map_err(js)
}

#[wasm_bindgen]
pub fn sample_abscissae(points: usize) -> Vec<f64> {
    sample_points(points)
}

#[wasm_bindgen]
pub fn survivor_intervals(gamma: f64, hole: &str, t: usize) -> std::result::Result<Vec<f64>, JsError> {
    survivor_impl(gamma, hole, t).map_err(js)
}
