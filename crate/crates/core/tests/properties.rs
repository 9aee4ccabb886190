use proptest::prelude::*;

use prunegnn::baselines::{wmmse_allocate, WmmseConfig};
use prunegnn::gnn::{FeatureEncoding, FeatureScaler, GnnModel, ModelConfig};
use prunegnn::graph::build_graph;
use prunegnn::metrics::{sinr, weighted_sum_rate};
use prunegnn::netsim::{sample_network, ScenarioConfig};
use prunegnn::quad::{self, Tolerance};
use prunegnn::special::upper_incomplete_gamma;
use prunegnn::stochgeo::{self, PppParams, ThresholdSpec};

fn scenario(pairs: usize, side: f64, seed: u64) -> ScenarioConfig {
    ScenarioConfig { pairs: Some(pairs), region_side: side, seed, ..ScenarioConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gamma_recurrence(s in -3.0f64..3.0, x in 0.01f64..20.0) {
        let lhs = upper_incomplete_gamma(s + 1.0, x).unwrap();
        let rhs = s * upper_incomplete_gamma(s, x).unwrap() + x.powf(s) * (-x).exp();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs(), "{lhs} vs {rhs}");
    }

    #[test]
    fn distance_ratio_increasing_and_bounded(alpha in 2.2f64..7.0, t in 1.0f64..500.0, dt in 0.01f64..50.0) {
        let p = PppParams::new(0.01, alpha, 1.0).unwrap();
        let a = stochgeo::distance_interference_ratio(&p, t).unwrap();
        let b = stochgeo::distance_interference_ratio(&p, t + dt).unwrap();
        prop_assert!(b > a);
        prop_assert!(a >= (alpha - 2.0) / alpha - 1e-15 && b < 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn neighbour_distance_pdf_normalised(n in 1usize..=10, lam in 0.001f64..0.05) {
        let p = PppParams::new(lam, 3.5, 1.0).unwrap();
        let tol = Tolerance { abs: 1e-12, rel: 1e-10, max_intervals: 20_000 };
        let mass = quad::integrate_to_infinity(|r| stochgeo::nth_neighbour_distance_pdf(&p, n, r), 0.0, tol).unwrap();
        prop_assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
    }

    #[test]
    fn neighbour_partial_sums_increase_to_total(lam in 0.001f64..0.05, alpha in 2.5f64..6.0) {
        let p = PppParams::new(lam, alpha, 1.0).unwrap();
        let total = stochgeo::expected_total_interference(&p);
        let mut partial = 0.0;
        for n in 1..=12 {
            let term = stochgeo::nth_neighbour_expected_interference(&p, n).unwrap();
            prop_assert!(term > 0.0);
            partial += term;
            prop_assert!(partial <= total * (1.0 + 1e-6));
            let ratio = stochgeo::neighbour_interference_ratio(&p, n).unwrap();
            prop_assert!((ratio - partial / total).abs() < 1e-9);
        }
    }

    #[test]
    fn edge_structure_follows_rule(pairs in 2usize..25, seed in 0u64..1000, n in 1usize..30, t in 0.0f64..80.0) {
        let net = sample_network(&scenario(pairs, 60.0, seed), 0).unwrap();
        let g = build_graph(&net, ThresholdSpec::Neighbour { n }).unwrap();
        prop_assert_eq!(g.edge_count(), n.min(pairs - 1) * pairs);
        for v in 0..pairs {
            let kept = g.neighbours(v);
            prop_assert!(kept.windows(2).all(|w| w[0] < w[1]) && !kept.contains(&v));
            // every dropped source is at least as far as every kept one
            let far = kept.iter().map(|&u| net.distance(u, v)).fold(0.0, f64::max);
            for u in (0..pairs).filter(|u| *u != v && !kept.contains(u)) {
                prop_assert!(net.distance(u, v) >= far);
            }
        }
        let d = build_graph(&net, ThresholdSpec::Distance { t }).unwrap();
        for v in 0..pairs {
            let expected: Vec<usize> = (0..pairs).filter(|&u| u != v && net.distance(u, v) <= t).collect();
            prop_assert_eq!(d.neighbours(v), expected.as_slice());
        }
    }

    #[test]
    fn sum_rate_invariants(pairs in 1usize..12, seed in 0u64..1000, k in 0usize..12, scale in 0.0f64..=1.0) {
        let net = sample_network(&scenario(pairs, 40.0, seed), 0).unwrap();
        let pm = net.p_max();
        prop_assert_eq!(weighted_sum_rate(&net, &vec![0.0; pairs]), 0.0);
        let full = vec![pm; pairs];
        prop_assert!(sinr(&net, &full).iter().all(|s| *s > 0.0 && s.is_finite()));
        // raising one pair's power cannot lower its own SINR or raise anyone else's
        let k = k % pairs;
        let mut low = vec![pm * 0.5; pairs];
        low[k] = pm * 0.5 * scale;
        let high = vec![pm * 0.5; pairs];
        let (a, b) = (sinr(&net, &low), sinr(&net, &high));
        prop_assert!(b[k] >= a[k]);
        for j in (0..pairs).filter(|&j| j != k) {
            prop_assert!(b[j] <= a[j]);
        }
    }

    #[test]
    fn gnn_output_is_bounded_and_equivariant(pairs in 2usize..16, seed in 0u64..1000, shift in 1usize..16) {
        let net = sample_network(&scenario(pairs, 50.0, seed), 0).unwrap();
        let spec = ThresholdSpec::Neighbour { n: 2 };
        let g = build_graph(&net, spec).unwrap();
        let scaler = FeatureScaler::fit(std::slice::from_ref(&g), FeatureEncoding::Gain);
        let model = GnnModel::new(&ModelConfig::default(), scaler, spec, net.p_max(), seed).unwrap();
        let p = model.forward(&g);
        prop_assert!(p.iter().all(|x| (0.0..=net.p_max()).contains(x)));
        let perm: Vec<usize> = (0..pairs).map(|i| (i + shift) % pairs).collect();
        let q = model.forward(&build_graph(&net.permuted(&perm).unwrap(), spec).unwrap());
        for (k, &src) in perm.iter().enumerate() {
            prop_assert!((q[k] - p[src]).abs() <= 1e-9);
        }
    }

    #[test]
    fn wmmse_feasible_and_monotone(pairs in 1usize..10, seed in 0u64..1000) {
        let net = sample_network(&scenario(pairs, 30.0, seed), 0).unwrap();
        let out = wmmse_allocate(&net, &WmmseConfig::default());
        prop_assert!(out.allocation.powers.iter().all(|x| (0.0..=net.p_max()).contains(x)));
        prop_assert!(out.objective_trace.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)));
        prop_assert!(out.allocation.weighted_sum_rate >= out.objective_trace[0]);
    }
}

#[test]
fn closed_form_neighbour_interference_matches_quadrature() {
    for lam in [0.002, 0.01, 0.03] {
        for alpha in [3.0, 3.5, 4.0, 5.0] {
            let p = PppParams::new(lam, alpha, 1.0).unwrap();
            for n in 1..=5 {
                let closed = stochgeo::nth_neighbour_expected_interference(&p, n).unwrap();
                let direct = stochgeo::nth_neighbour_interference_quadrature(&p, n).unwrap();
                assert!((closed - direct).abs() <= 1e-6 * direct, "λ={lam} α={alpha} n={n}: {closed} vs {direct}");
            }
        }
    }
}

#[test]
fn monte_carlo_mean_converges_at_root_n_rate() {
    // the standard error should shrink by about √10 when trials grow tenfold
    let p = PppParams::new(0.01, 4.0, 1.0).unwrap();
    let exact = stochgeo::expected_total_interference(&p);
    let spread = |trials: usize| {
        let means: Vec<f64> = (0..12u64)
            .map(|s| {
                stochgeo::monte_carlo_interference_stats(&p, ThresholdSpec::Complete, 400.0, trials, s).unwrap().mean
            })
            .collect();
        (means.iter().map(|m| (m - exact).powi(2)).sum::<f64>() / means.len() as f64).sqrt()
    };
    let (coarse, fine) = (spread(200), spread(2000));
    let rate = coarse / fine;
    assert!((1.5..=7.0).contains(&rate), "rmse {coarse:.3e} -> {fine:.3e}, ratio {rate:.2}");
    assert!(fine < 0.1 * exact, "rmse {fine:.3e} vs mean {exact:.3e}");
}
