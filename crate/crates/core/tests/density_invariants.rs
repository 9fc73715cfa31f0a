use openlsv::density::{DensityKind, GridConfig, Transport};
use openlsv::map::{MapSystem, Symbol};
use proptest::prelude::*;

fn j2() -> MapSystem {
    MapSystem::with_cylinder_hole(0.5, 100_000, 2, &[Symbol::L]).unwrap()
}

#[test]
fn holder_seminorm_stays_uniformly_bounded() {
    let sys = j2();
    let tr = Transport::new(&sys, &GridConfig::default()).unwrap();
    let p = 0.5 / 1.5;
    let mut f = tr.make_density(&DensityKind::Lebesgue).unwrap().restricted_off(sys.hole().unwrap());
    let (mut early, mut late) = (0.0f64, 0.0f64);
    for t in 1..=1000 {
        f = tr.apply_transfer(&f, true).unwrap().normalized().unwrap();
        let sampled = (50..=100).contains(&t) || ((500..=1000).contains(&t) && t % 10 == 0);
        if sampled {
            let r = tr.holder_seminorm(&f, p).unwrap();
            assert!(!r.is_infinite(), "t = {t}");
            if t <= 100 {
                early = early.max(r.seminorm);
            } else {
                late = late.max(r.seminorm);
            }
        }
    }
    assert!(early > 0.0);
    assert!(late <= 1.2 * early, "late {late} vs early {early}");
}

#[test]
fn positivity_propagates_near_zero() {
    let sys = j2();
    let cfg = GridConfig::coarse();
    let tr = Transport::new(&sys, &cfg).unwrap();
    let floor = sys.partition().a(cfg.n_align);
    for kind in [DensityKind::Lebesgue, DensityKind::Power(0.25), DensityKind::Power(0.5)] {
        let mut f = tr.make_density(&kind).unwrap().restricted_off(sys.hole().unwrap());
        for t in 1..=50 {
            f = tr.apply_transfer(&f, true).unwrap();
            let x = tr.grid().nodes();
            let min = (0..x.len()).filter(|&i| x[i] >= floor && x[i] < sys.partition().a(3)).map(|i| f.g_right()[i].min(f.g_left()[i])).fold(f64::INFINITY, f64::min);
            assert!(min > 0.0, "{kind:?} t = {t}: min g {min}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn open_masses_are_monotone(gamma in 0.2f64..0.85, h in 1usize..5, alpha in 0.0f64..0.8) {
        let sys = MapSystem::with_cylinder_hole(gamma, 2_000, h, &[Symbol::L]).unwrap();
        let tr = Transport::new(&sys, &GridConfig::coarse()).unwrap();
        let f = tr.make_density(&DensityKind::Power(alpha)).unwrap();
        let c = tr.iterate_open(&f, 60, &[]).unwrap().curve;
        prop_assert!(c.masses[0] <= 1.0 && c.masses[60] > 0.0);
        for w in c.masses.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }
}
