use proptest::prelude::*;

use reldiff::{
    apply_psi, build_pair, builtin_dh, builtin_roup, derive, estimate_msd, sigma2_dh_d1, sigma2_lemma2, sigma2_prop2,
    solve_psi, ModelSpec, RadialGrid, SimConfig,
};

fn model(dh: bool, beta: f64, d: usize) -> ModelSpec {
    if dh {
        builtin_dh(beta, d).unwrap()
    } else {
        builtin_roup(beta, d).unwrap()
    }
}

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

proptest! {
    #![proptest_config(cfg(24))]

    #[test]
    fn grid_is_well_formed(beta in log_uniform(1e-4, 1e3), dh in any::<bool>()) {
        let dc = derive(&model(dh, beta, 1)).unwrap();
        let grid = RadialGrid::for_model(&dc).unwrap();
        let r = grid.nodes();
        prop_assert!(r.len() >= 200);
        prop_assert!(r[0] <= 1e-3 && r[0] > 0.0);
        prop_assert!(r.windows(2).all(|w| w[1] > w[0]));
        prop_assert_eq!(*r.last().unwrap(), grid.r_max());
    }

    #[test]
    fn coefficients_round_trip(r in 0.0f64..500.0, beta in log_uniform(1e-3, 1e3), dh in any::<bool>()) {
        let m = model(dh, beta, 2);
        let dc = derive(&m).unwrap();
        let s2 = m.sigma_sq(r);
        prop_assert!((dc.g(r) * s2 - 2.0 * r * m.b(r)).abs() <= 1e-12 * (1.0 + r));
        prop_assert!((dc.h(r) * s2 - 2.0 * r * m.f(r)).abs() <= 1e-12 * (1.0 + r));
        if beta * dc.big_g(r) < 600.0 {
            prop_assert!(dc.nu(r.max(1e-6)) > 0.0);
        }
    }

    #[test]
    fn mu_ratio_is_bracketed(r in 1e-3f64..100.0, k in 1.0f64..50.0, dh in any::<bool>()) {
        let dc = derive(&model(dh, 1.0, 3)).unwrap();
        let s = r * k;
        let ratio = dc.mu(s) / dc.mu(r);
        prop_assert!(ratio >= 1.0 - 1e-9 && ratio <= k * (1.0 + 1e-9), "{}", ratio);
    }

    #[test]
    fn big_g_is_monotone(r in 0.0f64..100.0, dr in 0.0f64..10.0) {
        let dc = derive(&model(true, 1.0, 1)).unwrap();
        prop_assert_eq!(dc.big_g(0.0), 0.0);
        prop_assert!(dc.big_g(r + dr) >= dc.big_g(r));
    }
}

proptest! {
    #![proptest_config(cfg(12))]

    #[test]
    fn roup_variance_is_two_over_beta(beta in log_uniform(0.1, 10.0), d in 1usize..=3) {
        let dc = derive(&model(false, beta, d)).unwrap();
        let grid = RadialGrid::for_model(&dc).unwrap();
        let psi = solve_psi(&dc, &grid).unwrap();
        let p = sigma2_prop2(&dc, &psi).unwrap().sigma2;
        let l = sigma2_lemma2(&dc, &psi).unwrap().sigma2;
        prop_assert!((p * beta / 2.0 - 1.0).abs() < 1e-4, "{}", p);
        prop_assert!((l * beta / 2.0 - 1.0).abs() < 1e-4, "{}", l);
    }

    #[test]
    fn resolvent_of_g_is_identity(beta in log_uniform(0.1, 10.0), d in 1usize..=3, dh in any::<bool>()) {
        let dc = derive(&model(dh, beta, d)).unwrap();
        let grid = RadialGrid::for_model(&dc).unwrap();
        let pair = build_pair(&dc, &grid).unwrap();
        prop_assert!(pair.a_beta > 0.0);
        let sol = apply_psi(&pair, &dc, &|r| beta * dc.g(r)).unwrap();
        let half = grid.r_max() / 2.0;
        for (r, p) in grid.nodes().iter().zip(&sol.psi) {
            if *r >= 0.1 && *r <= half {
                prop_assert!((p / r - 1.0).abs() < 1e-4, "r={} psi={}", r, p);
            }
        }
    }

    #[test]
    fn dh_psi_meets_its_residual_contract(beta in log_uniform(0.1, 10.0), d in 1usize..=3) {
        let dc = derive(&model(true, beta, d)).unwrap();
        let grid = RadialGrid::for_model(&dc).unwrap();
        let sol = solve_psi(&dc, &grid).unwrap();
        prop_assert!(sol.residual_sup <= 1e-4, "{}", sol.residual_sup);
        prop_assert!(sol.psi[0].abs() <= 2.0 * grid.nodes()[0]);
        let s = sigma2_prop2(&dc, &sol).unwrap();
        prop_assert!(s.sigma2 >= 0.0 && s.error_estimate >= 0.0);
    }

    #[test]
    fn dh_d1_variance_is_positive(beta in log_uniform(1e-5, 1e3)) {
        let v = sigma2_dh_d1(beta).unwrap();
        prop_assert!(v.sigma2 > 0.0 && v.sigma2.is_finite());
        prop_assert!(v.error_estimate >= 0.0);
    }

    #[test]
    fn ensembles_are_deterministic(seed in any::<u64>(), dh in any::<bool>(), d in 1usize..=3) {
        let cfg = SimConfig::new(model(dh, 1.0, d), 5.0, 8, seed);
        let a = estimate_msd(&cfg).unwrap();
        let b = estimate_msd(&cfg).unwrap();
        prop_assert_eq!(a.msd_over_t.to_bits(), b.msd_over_t.to_bits());
        prop_assert_eq!(a.radial_histogram.counts, b.radial_histogram.counts);
    }
}

#[test]
fn large_beta_gap_shrinks() {
    let gaps: Vec<f64> =
        [10.0, 30.0, 100.0, 300.0].iter().map(|&b| (sigma2_dh_d1(b).unwrap().sigma2 * b / 2.0 - 1.0).abs()).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

#[test]
fn small_beta_scaling_is_bracketed() {
    let a = reldiff::constant_a();
    let s: Vec<f64> =
        [1e-2, 1e-3, 1e-4, 1e-5].iter().map(|&b| sigma2_dh_d1(b).unwrap().sigma2 * (1.0 / b).ln()).collect();
    assert!(s.windows(2).all(|w| w[1] > w[0]), "{s:?}");
    assert!(s.iter().all(|v| *v > 0.5 * a && *v < 2.0 * a), "{s:?}");
    let conj = reldiff::conjecture_2_over_2_plus_beta(1e-4);
    assert!((sigma2_dh_d1(1e-4).unwrap().sigma2 - conj).abs() > 0.3);
}
