//! Pilot run that produces the fixture values committed in the acceptance
//! suite. Run with `cargo run --release --example pilot`.

use std::time::Instant;

use openlsv::map::{MapSystem, Symbol};
use openlsv::rates::distortion_check;
use openlsv::survivor::{first_entry_sets, shell_masses, ExactLimits};

fn main() -> openlsv::Result<()> {
    let gamma = 0.5;
    let sys = MapSystem::with_cylinder_hole(gamma, 100_000, 2, &[Symbol::L])?;
    let k = (gamma + 1.0) / gamma;

    let clock = Instant::now();
    let limits = ExactLimits::default();
    let shells = shell_masses(&sys, 25, limits)?;
    let entries = first_entry_sets(&sys, 25, limits)?;
    let (mut shell_max, mut entry_max) = (0.0f64, 0.0f64);
    for t in 2..=25usize {
        let tk = (t as f64).powf(k);
        let s = tk * shells[t - 1] / (t as f64).ln();
        let e = tk * entries[t].lebesgue_mass();
        println!("t={t:2} shell_ratio={s:.6} entry_ratio={e:.6}");
        shell_max = shell_max.max(s);
        entry_max = entry_max.max(e);
    }
    println!("shell_ratio_max={shell_max} entry_ratio_max={entry_max} ({:?})", clock.elapsed());

    let closed = sys.closed();
    for samples in [8usize, 32] {
        let clock = Instant::now();
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for t in 1..=50 {
            for n in 1..=50 {
                let r = distortion_check(&closed, t, n, samples, 1)?;
                a = a.max(r.part_a);
                b = b.max(r.part_b);
            }
        }
        println!("distortion samples={samples} part_a={a} part_b={b} ({:?})", clock.elapsed());
    }
    Ok(())
}
