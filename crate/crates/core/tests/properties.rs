use proptest::prelude::*;

use graphflow::graphflow::{mass, measures_match, LatticePoint};
use graphflow::noise::{Dyadic, NoiseField};
use graphflow::sbmflow::{dyadic_select, flow, zero_step, Driver, SkewParams};
use graphflow::starflow::{ExcursionLabeler, StarFlow, StarGraphSpec, StarPoint};
use graphflow::starflow::LabelMode;
use graphflow::verify::{barbell_config, ATOM_TOL};

fn driver(seed: u64, m: u32) -> Driver {
    let field = NoiseField::new(seed, 2 * m, (0, 1)).unwrap();
    Driver::new(&field, 0, m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dyadic_select_is_least_level_point(u in -8.0f64..8.0, w in 1e-6f64..4.0) {
        let v = u + w;
        let d = dyadic_select(u, v).unwrap();
        let x = d.to_f64();
        prop_assert!(u < x && x < v);
        if d.level() > 0 {
            let coarse = 2f64.powi(d.level() as i32 - 1);
            let k = (u * coarse).floor() + 1.0;
            prop_assert!(k / coarse >= v, "a coarser dyadic fits in ({u}, {v})");
        }
    }

    #[test]
    fn zero_step_extremes(eps in prop_oneof![Just(-1i8), Just(1i8)], u in 0.0f64..1.0) {
        prop_assert_eq!(zero_step(1.0, eps, u), 1);
        prop_assert_eq!(zero_step(-1.0, eps, u), -1);
        // the coin only matters against the driving sign
        prop_assert_eq!(zero_step(0.3, 1, u), 1);
        prop_assert_eq!(zero_step(-0.3, -1, u), -1);
    }

    #[test]
    fn flow_is_monotone_and_coalescing(seed in 0u64..10_000, beta in -1.0f64..1.0, starts in prop::collection::vec(-12i64..12, 1..8)) {
        let params = SkewParams::new(beta, 4).unwrap();
        let d = driver(seed, 4);
        let sample = flow(&params, &d, 0, &starts, 256).unwrap();
        for row in &sample.rows {
            prop_assert!(row.windows(2).all(|p| p[0] <= p[1]));
        }
        for k in 1..sample.rows.len() {
            for j in 1..sample.starts.len() {
                if sample.rows[k - 1][j - 1] == sample.rows[k - 1][j] {
                    prop_assert_eq!(sample.rows[k][j - 1], sample.rows[k][j]);
                }
            }
        }
    }

    #[test]
    fn same_parity_flow_composes(seed in 0u64..10_000, beta in -1.0f64..1.0, half in prop::collection::vec(-6i64..6, 1..6), u in 1i64..255) {
        let params = SkewParams::new(beta, 4).unwrap();
        let d = driver(seed, 4);
        let starts: Vec<i64> = half.iter().map(|h| 2 * h).collect();
        let whole = flow(&params, &d, 0, &starts, 256).unwrap();
        let mid: Vec<i64> = starts.iter().map(|&x| whole.value(x, u).unwrap()).collect();
        let rest = flow(&params, &d, u, &mid, 256).unwrap();
        for (&x, &y) in starts.iter().zip(&mid) {
            prop_assert_eq!(whole.value(x, 256).unwrap(), rest.value(y, 256).unwrap());
        }
    }

    #[test]
    fn increments_are_additive_and_seeded(seed in 0u64..1_000_000, a in 0i64..64, b in 0i64..64, c in 0i64..64) {
        let mut t = [a, b, c];
        t.sort_unstable();
        let field = NoiseField::new(seed, 6, (0, 1)).unwrap();
        let at = |k: i64| Dyadic::from_ticks(k, 6);
        let whole = field.increment(0, at(t[0]), at(t[2])).unwrap();
        let split = field.increment(0, at(t[0]), at(t[1])).unwrap() + field.increment(0, at(t[1]), at(t[2])).unwrap();
        prop_assert!((whole - split).abs() < 1e-12);
        let again = NoiseField::new(seed, 6, (0, 1)).unwrap();
        prop_assert_eq!(whole, again.increment(0, at(t[0]), at(t[2])).unwrap());
        let other = field.corrupted("v/a/side", 1);
        prop_assert_eq!(whole, other.increment(0, at(t[0]), at(t[2])).unwrap());
    }

    #[test]
    fn star_kernel_is_a_probability(seed in 0u64..10_000, s in 0i64..128, t in 128i64..=256, r in 0i64..6, edge in 0usize..3) {
        let spec = StarGraphSpec::from_f64(&[0.36, 0.24, 0.4], 2).unwrap();
        let field = NoiseField::new(seed, 8, (0, 1)).unwrap();
        let star = StarFlow::new(&field, spec.clone(), ExcursionLabeler::wiener(&spec), 4).unwrap();
        let k = star.kernel(s, StarPoint::on_edge(edge, r), t).unwrap();
        prop_assert!((k.mass() - 1.0).abs() < ATOM_TOL);
        prop_assert!(k.atoms.iter().all(|a| a.1 > 0.0));
    }

    #[test]
    fn graph_kernel_chapman_kolmogorov(seed in 0u64..10_000, a in 0i64..=256, b in 0i64..=256, c in 0i64..=256, site in -6i64..6) {
        let mut t = [a, b, c];
        t.sort_unstable();
        let cfg = barbell_config(LabelMode::Wiener, 4).unwrap();
        let field = NoiseField::new(seed, 8, (0, 1)).unwrap();
        let g = cfg.realize(&field).unwrap();
        let x = if site == 0 { LatticePoint::Vertex(0) } else { LatticePoint::Interior { edge: 1, site: site.abs() } };
        let direct = g.k(t[0], t[2], x).unwrap();
        let first = g.k(t[0], t[1], x).unwrap();
        let (two_step, _) = g.k_measure(&first, t[1], t[2]).unwrap();
        prop_assert!((mass(&direct) - 1.0).abs() < ATOM_TOL);
        prop_assert!(measures_match(&direct, &two_step, ATOM_TOL), "{direct:?} vs {two_step:?}");
    }
}
