//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.
//!
//! Heavy tests hold a shared lock so that wall-clock budgets are measured
//! without competing test threads.

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use openlsv::cesaro::{cesaro_run, default_family, invariance_diagnostic, singularity_diagnostic, DoublingOpen, LsvOpen, LSV_PROPOSAL_ALPHA};
use openlsv::density::{DensityKind, GridConfig, OpenRun, Side, SingularDensity, Transport};
use openlsv::induced::{induced_escape_curve, InducedSystem};
use openlsv::map::{LsvMap, MapSystem, PartitionTable, Symbol};
use openlsv::monte_carlo::{survival_streaming, Sampler};
use openlsv::rates::{beta_sequence, distortion_check, fit_exponential_rate, fit_polynomial_rate, model_select, Model};
use openlsv::runner::{self, Engine, ExperimentConfig, ExperimentKind};
use openlsv::survivor::{first_entry_sets, shell_masses, survivors, ExactLimits};

const GAMMA: f64 = 0.5;
const N_MAX: usize = 100_000;

const C1_T_MAX: usize = 5_000;
const C1_WINDOW: (usize, usize) = (500, 5_000);
const C1_RANGE: (f64, f64) = (1.7, 2.3);
const C1_BUDGET: Duration = Duration::from_secs(300);
const C2_REL_TOL: f64 = 0.15;
const C3_ABS_TOL: f64 = 0.15;
const C3_BURN_IN: usize = 200;
const C4_T: usize = 20;
const C4_REL_TOL: f64 = 1e-4;
const C4_Z: f64 = 4.0;
const C4_PARTICLES: usize = 1_000_000;
const C4_BUDGET: Duration = Duration::from_secs(120);
const C5_EPS: f64 = 0.05;
const C5_CHECKPOINTS: [usize; 5] = [125, 250, 500, 1_000, 2_000];
const C5_SLACK: f64 = 0.02;
const C5_FINAL_T: usize = 10_000;
const C5_FINAL_MIN: f64 = 0.8;
const C6_RANGE: (usize, usize) = (100, 10_000);
const C6_MAX_CHANGE: f64 = 0.2;
const C7_PY_LEVEL: usize = 3;
const C7_T_MAX: usize = 300;
const C7_R2: f64 = 0.999;
const C8_PARTICLES: usize = 100_000;
const C8_T_MAX: usize = 30;
const C8_WINDOW: (usize, usize) = (5, 30);
const C8_R2: f64 = 0.99;
const C9_GAMMAS: [f64; 3] = [0.3, 0.5, 0.75];
const C9_RANGE: (usize, usize) = (1_000, 100_000);
const C9_MAX_VARIATION: f64 = 0.02;
const C9_MAX_BAND: f64 = 3.0;
// Pilot (`cargo run --release --example pilot`, γ = 0.5, H = J_2): maxima
// over 2 ≤ t ≤ 25 were 14.8077 at t = 13 and 39.5180 at t = 16.
const C10_SHELL_BOUND: f64 = 16.0;
const C10_ENTRY_BOUND: f64 = 43.0;
const C10_T: usize = 25;
// Pilot (same example): suprema 31.0758 (a) and 1.33826 (b) at both 8 and 32
// random words per (t, n).
const C11_SAMPLES: usize = 8;
const C11_MAX_CHANGE: f64 = 0.05;
const C12_PARTICLES: usize = 1_000_000;
const C12_CHECKPOINTS: [usize; 3] = [100, 1_000, 10_000];
const C12_DEPTH: usize = 3;
const C12_SINGULARITY_MAX: f64 = 0.05;
const C12_DOUBLING_T: usize = 40;
const C12_DOUBLING_TOL: f64 = 0.05;
const C12_BUDGET: Duration = Duration::from_secs(600);

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

// Written to the raw stderr handle so the line survives libtest's capture.
fn report(n: usize, pass: bool, detail: String) {
    let line = format!("criterion {n}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::Write::write_all(&mut std::io::stderr(), line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn j2() -> MapSystem {
    MapSystem::with_cylinder_hole(GAMMA, N_MAX, 2, &[Symbol::L]).unwrap()
}

fn default_transport(sys: &MapSystem) -> Transport {
    let tr = Transport::new(sys, &GridConfig::default()).unwrap();
    assert!(tr.grid().len() >= 100_000);
    tr
}

fn exponent(kind: DensityKind, t_max: usize) -> (f64, Duration) {
    let clock = Instant::now();
    let sys = j2();
    let tr = default_transport(&sys);
    let f = tr.make_density(&kind).unwrap();
    let run = tr.iterate_open(&f, t_max, &[]).unwrap();
    let fit = fit_polynomial_rate(&run.curve, C1_WINDOW).unwrap();
    (fit.value, clock.elapsed())
}

/// Lebesgue on J_2 to t = 10⁴, shared by criteria 5 and 6.
fn long_run() -> &'static OpenRun {
    static RUN: OnceLock<OpenRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let sys = j2();
        let tr = default_transport(&sys);
        let f = tr.make_density(&DensityKind::Lebesgue).unwrap();
        let mut cps = C5_CHECKPOINTS.to_vec();
        cps.push(C5_FINAL_T);
        tr.iterate_open(&f, C5_FINAL_T, &cps).unwrap()
    })
}

#[test]
fn criterion_01_lebesgue_exponent() {
    let _g = heavy();
    let (e, dt) = exponent(DensityKind::Lebesgue, C1_T_MAX);
    let pass = e >= C1_RANGE.0 && e <= C1_RANGE.1 && dt <= C1_BUDGET;
    report(1, pass, format!("exponent {e:.4}, target 2, {:.1} s", dt.as_secs_f64()));
}

#[test]
fn criterion_02_alpha_dependence() {
    let _g = heavy();
    let mut pass = true;
    let mut detail = Vec::new();
    for alpha in [0.25, 0.5] {
        let target = (1.0 - alpha) / GAMMA;
        let (e, _) = exponent(DensityKind::Power(alpha), C1_T_MAX);
        pass &= (e - target).abs() <= C2_REL_TOL * target;
        detail.push(format!("alpha {alpha}: exponent {e:.4} vs {target}"));
    }
    report(2, pass, detail.join("; "));
}

#[test]
fn criterion_03_srb_exponent() {
    let _g = heavy();
    let (e, _) = exponent(DensityKind::SrbProxy { burn_in: C3_BURN_IN }, C1_T_MAX);
    let target = (1.0 - GAMMA) / GAMMA;
    report(3, (e - target).abs() <= C3_ABS_TOL, format!("exponent {e:.4} vs {target}"));
}

#[test]
fn criterion_04_three_engines() {
    let _g = heavy();
    let clock = Instant::now();
    let sys = j2();
    let exact: Vec<f64> = survivors(&sys, C4_T, ExactLimits::default()).unwrap().iter().map(|s| s.lebesgue_mass()).collect();
    let tr = default_transport(&sys);
    let f = tr.make_density(&DensityKind::Lebesgue).unwrap();
    let dens = tr.iterate_open(&f, C4_T, &[]).unwrap().curve;
    let mc = survival_streaming(&sys, &Sampler::Lebesgue, C4_PARTICLES, C4_T, 1).unwrap();
    let dt = clock.elapsed();
    let mut rel: f64 = 0.0;
    let mut z: f64 = 0.0;
    for t in 0..=C4_T {
        rel = rel.max(((dens.masses[t] - exact[t]) / exact[t]).abs());
        let se = (exact[t] * (1.0 - exact[t]) / C4_PARTICLES as f64).sqrt();
        z = z.max((mc.masses[t] - exact[t]).abs() / se);
    }
    let pass = rel <= C4_REL_TOL && z <= C4_Z && dt <= C4_BUDGET;
    report(4, pass, format!("density rel {rel:.2e}, MC max z {z:.2}, {:.1} s", dt.as_secs_f64()));
}

#[test]
fn criterion_05_mass_moves_to_zero() {
    let _g = heavy();
    let run = long_run();
    let near: Vec<(usize, f64)> = run.checkpoints.iter().map(|(t, g)| (*t, g.mass_near_zero(C5_EPS).unwrap())).collect();
    let mut pass = true;
    for w in near[..C5_CHECKPOINTS.len()].windows(2) {
        pass &= w[1].1 > w[0].1 - C5_SLACK;
    }
    let last = near.last().unwrap();
    pass &= last.0 == C5_FINAL_T && last.1 > C5_FINAL_MIN;
    let detail = near.iter().map(|(t, m)| format!("t={t}: {m:.4}")).collect::<Vec<_>>().join(", ");
    report(5, pass, detail);
}

#[test]
fn criterion_06_beta_ratio_bounded() {
    let _g = heavy();
    let betas = beta_sequence(&long_run().curve);
    let max_over = |hi: usize| betas.iter().filter(|b| b.0 >= C6_RANGE.0 && b.0 <= hi).map(|b| b.2).fold(0.0, f64::max);
    let half = max_over(C6_RANGE.1 / 2);
    let full = max_over(C6_RANGE.1);
    let change = (full - half).abs() / half;
    let pass = full.is_finite() && half > 0.0 && change < C6_MAX_CHANGE;
    report(6, pass, format!("max t(1-beta) {half:.4} to t={}, {full:.4} to t={}, change {change:.4}", C6_RANGE.1 / 2, C6_RANGE.1));
}

#[test]
fn criterion_07_exponential_controls() {
    let _g = heavy();
    // (a) hole [0, a_3) at the neutral fixed point.
    let base = MapSystem::new(GAMMA, N_MAX).unwrap();
    let py = base.clone().with_hole(base.neutral_control_hole(C7_PY_LEVEL).unwrap());
    let tr = default_transport(&py);
    let f = tr.make_density(&DensityKind::Lebesgue).unwrap();
    let curve = tr.iterate_open(&f, C7_T_MAX, &[]).unwrap().curve;
    let fit_a = fit_exponential_rate(&curve, (C7_T_MAX / 10, C7_T_MAX)).unwrap();
    let sel_a = model_select(&curve).unwrap();
    let pass_a = fit_a.r2 > C7_R2 && fit_a.value > 0.0 && sel_a.choice == Some(Model::Exponential);

    // (b) the cylinder RLLL of J_0 is [1/2, (1 + a_2)/2), so d = a_2/2 and the
    // initial density vanishes on [0, a_2).
    let sys = MapSystem::with_cylinder_hole(GAMMA, N_MAX, 0, &[Symbol::R, Symbol::L, Symbol::L, Symbol::L]).unwrap();
    let h = sys.hole().unwrap();
    let d = h.hi() - 0.5;
    assert_eq!(h.lo(), 0.5);
    let tr = default_transport(&sys);
    let cut = sys.partition().a(2);
    assert!((cut - 2.0 * d).abs() < 1e-15);
    assert!(tr.grid().nodes().contains(&cut));
    let f = SingularDensity::from_sided_fn(tr.grid().clone(), 0.0, |x, side| {
        let inside = match side {
            Side::Right => x >= cut,
            Side::Left => x > cut,
        };
        if inside {
            1.0
        } else {
            0.0
        }
    })
    .unwrap();
    let curve = tr.iterate_open(&f, C7_T_MAX, &[]).unwrap().curve;
    let fit_b = fit_exponential_rate(&curve, (C7_T_MAX / 10, C7_T_MAX)).unwrap();
    let sel_b = model_select(&curve).unwrap();
    let pass_b = fit_b.value > 0.0 && sel_b.choice == Some(Model::Exponential);
    report(
        7,
        pass_a && pass_b,
        format!("(a) rate {:.4} R2 {:.6} select {:?}; (b) d={d} rate {:.4} R2 {:.6} select {:?}", fit_a.value, fit_a.r2, sel_a.choice, fit_b.value, fit_b.r2, sel_b.choice),
    );
}

#[test]
fn criterion_08_induced_exponential() {
    let _g = heavy();
    let sys = j2();
    let ind = InducedSystem::new(&sys, None, None).unwrap();
    assert_eq!(ind.n_s(), 4);
    let run = induced_escape_curve(&sys, &ind, C8_PARTICLES, C8_T_MAX, 1).unwrap();
    let fit = fit_exponential_rate(&run.curve, C8_WINDOW).unwrap();
    let sigma = (-fit.value).exp();
    report(8, sigma < 1.0 && fit.r2 > C8_R2, format!("sigma {sigma:.4}, R2 {:.5}, capped {}", fit.r2, run.capped));
}

#[test]
fn criterion_09_partition_asymptotics() {
    let mut pass = true;
    let mut detail = Vec::new();
    for gamma in C9_GAMMAS {
        let p = PartitionTable::build(&LsvMap::new(gamma).unwrap(), C9_RANGE.1).unwrap();
        let (mut lo_a, mut hi_a) = (f64::INFINITY, 0.0f64);
        let (mut lo_j, mut hi_j) = (f64::INFINITY, 0.0f64);
        for n in C9_RANGE.0..=C9_RANGE.1 {
            let nf = n as f64;
            let a = nf.powf(1.0 / gamma) * p.a(n);
            let (l, h) = p.cell(n);
            let j = (h - l) * nf.powf((gamma + 1.0) / gamma);
            lo_a = lo_a.min(a);
            hi_a = hi_a.max(a);
            lo_j = lo_j.min(j);
            hi_j = hi_j.max(j);
        }
        let var = hi_a / lo_a - 1.0;
        let band = hi_j / lo_j;
        pass &= var < C9_MAX_VARIATION && band < C9_MAX_BAND;
        detail.push(format!("gamma {gamma}: variation {var:.2e}, band {band:.4}"));
    }
    report(9, pass, detail.join("; "));
}

#[test]
fn criterion_10_shell_and_entry_bounds() {
    let sys = j2();
    let k = (GAMMA + 1.0) / GAMMA;
    let limits = ExactLimits::default();
    let shells = shell_masses(&sys, C10_T, limits).unwrap();
    let entries = first_entry_sets(&sys, C10_T, limits).unwrap();
    let (mut s_max, mut e_max) = (0.0f64, 0.0f64);
    for t in 2..=C10_T {
        let tk = (t as f64).powf(k);
        s_max = s_max.max(tk * shells[t - 1] / (t as f64).ln());
        e_max = e_max.max(tk * entries[t].lebesgue_mass());
    }
    report(10, s_max <= C10_SHELL_BOUND && e_max <= C10_ENTRY_BOUND, format!("shell ratio max {s_max:.4} <= {C10_SHELL_BOUND}, entry ratio max {e_max:.4} <= {C10_ENTRY_BOUND}"));
}

#[test]
fn criterion_11_distortion_stable() {
    let _g = heavy();
    let sys = j2().closed();
    let sup = |samples: usize| {
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for t in 1..=50 {
            for n in 1..=50 {
                let r = distortion_check(&sys, t, n, samples, 1).unwrap();
                a = a.max(r.part_a);
                b = b.max(r.part_b);
            }
        }
        (a, b)
    };
    let (a1, b1) = sup(C11_SAMPLES);
    let (a4, b4) = sup(4 * C11_SAMPLES);
    let ca = (a4 - a1).abs() / a1;
    let cb = (b4 - b1).abs() / b1;
    let pass = [a1, b1, a4, b4].iter().all(|v| v.is_finite() && *v > 0.0) && ca < C11_MAX_CHANGE && cb < C11_MAX_CHANGE;
    report(11, pass, format!("part (a) {a1:.4} -> {a4:.4}, part (b) {b1:.4} -> {b4:.4}"));
}

#[test]
fn criterion_12_cesaro_limits() {
    let _g = heavy();
    let clock = Instant::now();
    let sys = j2();
    let bins = default_transport(&sys).grid().nodes().to_vec();
    let lsv = LsvOpen::new(&sys, LSV_PROPOSAL_ALPHA, bins).unwrap();
    let states = cesaro_run(&lsv, C12_PARTICLES, &C12_CHECKPOINTS, 1, None).unwrap();
    let family = default_family();
    let sing: Vec<f64> = states.iter().map(|s| singularity_diagnostic(&lsv, s, C12_DEPTH).unwrap()).collect();
    let inv: Vec<f64> = states.iter().map(|s| invariance_diagnostic(&lsv, s, &family)).collect();
    let lsv_time = clock.elapsed();

    let doubling = DoublingOpen::new(0.0, 0.25, 1024).unwrap();
    let d = cesaro_run(&doubling, C12_PARTICLES, &[C12_DOUBLING_T], 1, None).unwrap().pop().unwrap();
    // On the quarter cells [1/4,1/2) and [1/2,1) the surviving Lebesgue mass
    // evolves by the matrix [[0,1],[1,1]]/2; its Perron root by power iteration.
    let mut v = [0.5f64, 0.5];
    let mut oracle = 0.0;
    for _ in 0..200 {
        let w = [0.5 * v[1], 0.5 * (v[0] + v[1])];
        oracle = w[0] + w[1];
        v = [w[0] / oracle, w[1] / oracle];
    }
    let betas = d.betas();
    let tail = &betas[10..];
    let dev = tail.iter().map(|b| (b - oracle).abs()).fold(0.0, f64::max);
    let beta_max = tail.iter().cloned().fold(0.0, f64::max);
    let dt = clock.elapsed();

    let pass = sing.windows(2).all(|w| w[1] < w[0])
        && sing[2] < C12_SINGULARITY_MAX
        && inv.windows(2).all(|w| w[1] < w[0])
        && dev < C12_DOUBLING_TOL
        && beta_max < 1.0 - C12_DOUBLING_TOL
        && dt <= C12_BUDGET;
    report(
        12,
        pass,
        format!("singularity {sing:.4?}, invariance {inv:.4?} ({:.0} s); doubling beta within {dev:.4} of {oracle:.6}", lsv_time.as_secs_f64()),
    );
}

#[test]
fn criterion_13_determinism() {
    let _g = heavy();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut pass = true;
    let mut compared = 0;
    let mut files = Vec::new();
    for d in &dirs {
        let mut cfg = ExperimentConfig::default();
        cfg.kind = ExperimentKind::EscapeRate;
        cfg.engine = Engine::All;
        cfg.t_max = 200;
        cfg.particles = 200_000;
        cfg.seed = 42;
        cfg.out = d.path().join("run");
        files.push(runner::run(&cfg).unwrap().files);
    }
    for (a, b) in files[0].iter().zip(&files[1]) {
        if a.extension().is_some_and(|e| e == "csv") {
            pass &= std::fs::read(a).unwrap() == std::fs::read(b).unwrap();
            compared += 1;
        }
    }
    report(13, pass && compared == 3, format!("{compared} curve files compared byte for byte"));
}
