use geocrt::clustering::{exclusion_radius, k_medoids};
use geocrt::design::{draw_assignment, plan_k};
use geocrt::estimators::{build_panel, hajek};
use geocrt::inference::{ci_bias_aware, ci_undersmoothed, variance, BiasBound, DependencyStructure};
use geocrt::{DesignParams, Estimand, Footprint, Metric, PointSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(seed: u64, n: usize, side: f64) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random_range(0.0..side), rng.random_range(0.0..side)])
        .collect();
    PointSet::new(&pts, Metric::Euclidean).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn medoids_are_nearest_and_swap_stable(seed in 0u64..10_000, n in 4usize..40, k in 1usize..5) {
        let k = k.min(n);
        let ps = random_points(seed, n, 10.0);
        let c = k_medoids(&ps, k, seed).unwrap();
        prop_assert_eq!(c.medoids().len(), k);
        for i in 0..n {
            let own = ps.dist(i, c.medoids()[c.cluster_of(i)]);
            for &m in c.medoids() {
                prop_assert!(own <= ps.dist(i, m));
            }
        }
        prop_assert!(c.is_swap_stable(&ps, 1e-12));
    }

    #[test]
    fn draws_never_treat_units_in_control_clusters(
        seed in 0u64..10_000,
        p in 0.05f64..0.95,
        q in 0.05f64..0.95,
        rep in 0u64..1000,
    ) {
        let ps = random_points(seed, 30, 6.0);
        let c = k_medoids(&ps, 5, seed).unwrap();
        let params = DesignParams::new(p, q, 5, seed).unwrap();
        let draw = draw_assignment(&c, &params, rep).unwrap();
        prop_assert_eq!(draw.clusters.len(), 5);
        for (i, &d) in draw.units.iter().enumerate() {
            prop_assert!(!d || draw.clusters[c.cluster_of(i)]);
        }
        prop_assert_eq!(&draw, &draw_assignment(&c, &params, rep).unwrap());
    }

    #[test]
    fn plan_k_stays_in_range(v in 0.1f64..1e6, n in 1usize..100_000, g in 2.01f64..10.0) {
        let k = plan_k(v, n, g, 2).unwrap();
        prop_assert!(k >= 1 && k <= n);
    }

    #[test]
    fn variance_components_are_ordered(seed in 0u64..10_000, mult in prop_oneof![Just(0.0), 0.0f64..1.5]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let ps = random_points(seed, 36, 6.0);
        let c = k_medoids(&ps, 6, seed).unwrap();
        let r = exclusion_radius(&c, mult);
        let fp = Footprint::new(&ps, &c, r).unwrap();
        let dep = DependencyStructure::from_footprint(&fp);
        let draw = draw_assignment(&c, &DesignParams::new(0.5, 0.6, 6, seed).unwrap(), 0).unwrap();
        let y: Vec<f64> = (0..36).map(|_| rng.random_range(-5.0..5.0)).collect();
        for q in Estimand::ALL {
            let panel = build_panel(q, &fp, &draw, &y, 0.5, 0.6).unwrap();
            let Ok(v) = variance(&panel, &dep) else { continue };
            prop_assert!(v.sigma2_2 >= 0.0);
            prop_assert!(v.sigma2 >= v.sigma2_2 && v.sigma2 >= v.sigma2_1);
            if mult == 0.0 {
                prop_assert!((v.sigma2_1 - v.sigma2_2).abs() <= 1e-12 * v.sigma2_2.max(1.0));
            }
            let theta = hajek(&panel).unwrap();
            let ci = ci_undersmoothed(theta, v.sigma2, 6).unwrap();
            prop_assert!(ci.lower <= ci.center && ci.center <= ci.upper);
            if r > 0.0 {
                let bound = BiasBound { c: 1.0, gamma: 2.5, dim: 2 };
                let wide = ci_bias_aware(theta, v.sigma2, 6, bound, r, false).unwrap();
                prop_assert!(wide.lower <= ci.lower && ci.upper <= wide.upper);
            }
        }
    }
}
