mod common;

use nalgebra::DMatrix;

use common::*;
use profiler_core::data::ColumnValues;
use profiler_core::simulation::{
    chi2_limit, discretize, extrapolation_grid, run_study, simulate_factor_matrix, Discretization, LowRankModel,
    MetricVariant, NoiseShape, SimulationScenario,
};

#[test]
fn rank_zero_is_pure_noise() {
    let (x, sigma) = simulate_factor_matrix(50, 4, 0, 1).unwrap();
    assert_eq!(sigma, DMatrix::identity(4, 4));
    assert_eq!(x.shape(), (50, 4));
}

#[test]
fn fixed_seed_gives_identical_matrices() {
    assert_eq!(simulate_factor_matrix(30, 6, 3, 9).unwrap(), simulate_factor_matrix(30, 6, 3, 9).unwrap());
    assert_ne!(simulate_factor_matrix(30, 6, 3, 9).unwrap().0, simulate_factor_matrix(30, 6, 3, 10).unwrap().0);
    assert!(simulate_factor_matrix(3, 6, 4, 9).is_err());
}

#[test]
fn sample_covariance_approaches_the_true_covariance() {
    let n = 100_000;
    let (x, sigma) = simulate_factor_matrix(n, 5, 2, 42).unwrap();
    let means: Vec<f64> = (0..5).map(|j| x.column(j).mean()).collect();
    for a in 0..5 {
        for b in 0..5 {
            let c: f64 = (0..n).map(|i| (x[(i, a)] - means[a]) * (x[(i, b)] - means[b])).sum::<f64>() / (n - 1) as f64;
            let scale = (sigma[(a, a)] * sigma[(b, b)]).sqrt();
            assert!((c - sigma[(a, b)]).abs() <= 0.05 * scale, "({a},{b}): {c} vs {}", sigma[(a, b)]);
        }
    }
}

#[test]
fn shared_noise_adds_a_constant_block() {
    let mut r = rng(3);
    let m = LowRankModel::random(3, 1, NoiseShape::Shared, &mut r);
    let s = m.true_sigma();
    let dd = m.d.transpose() * &m.d;
    assert!((s - dd).iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn chi2_oracle_threshold() {
    let l = chi2_limit(2, 0.05).unwrap();
    assert!((l - 5.991464547).abs() < 1e-8);
    assert!((chi2_limit(20, 0.05).unwrap() - 31.410432845).abs() < 1e-7);
    // p = 2, identity covariance: the point (√3, √3) has T² = 6 > 5.991.
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, -1.0, 2.0, 2.0, -2.0, -2.0]);
    let sigma = DMatrix::identity(2, 2);
    let chol = sigma.clone().cholesky().unwrap();
    assert!((profiler_core::simulation::true_t2(&chol, &[3f64.sqrt(), 3f64.sqrt()]) - 6.0).abs() < 1e-12);
    let g = extrapolation_grid(&x, &sigma, 5, 0.05).unwrap();
    assert!(g.points.iter().all(|p| p.extrapolated == (p.t2_true > l)));
}

#[test]
fn grid_runs_from_center_to_the_sign_violating_corner() {
    let (x, sigma) = simulate_factor_matrix(200, 6, 2, 11).unwrap();
    let g = extrapolation_grid(&x, &sigma, 20, 0.05).unwrap();
    let (a, b) = g.pair;
    let first = &g.points[0];
    let last = &g.points[19];
    for j in 0..6 {
        assert!((first.point[j] - x.column(j).mean()).abs() < 1e-12);
        if j != a && j != b {
            assert_eq!(last.point[j], first.point[j]);
        }
    }
    assert_eq!(last.point[a], x.column(a).max());
    let expected_b = if g.correlation > 0.0 { x.column(b).min() } else { x.column(b).max() };
    assert_eq!(last.point[b], expected_b);
    assert!(!first.extrapolated);
    assert!(last.extrapolated);
    let labels: Vec<bool> = g.points.iter().map(|p| p.extrapolated).collect();
    assert!(labels.windows(2).all(|w| w[0] <= w[1]), "labels not monotone: {labels:?}");
    assert_eq!(g.points.iter().map(|p| p.rank).collect::<Vec<_>>(), (1..=20).collect::<Vec<_>>());
}

#[test]
fn discretization_cuts_at_equal_quantiles() {
    let n = 10_000;
    let (x, _) = simulate_factor_matrix(n, 8, 3, 5).unwrap();
    let (data, disc) = discretize(&x, 8, 21).unwrap();
    assert_eq!(disc.columns.len(), 8);
    for (j, cuts) in &disc.columns {
        let k = cuts.len() + 1;
        assert!((2..=4).contains(&k));
        let mut v: Vec<f64> = x.column(*j).iter().copied().collect();
        v.sort_by(f64::total_cmp);
        if k == 2 {
            let median = (v[n / 2 - 1] + v[n / 2]) / 2.0;
            assert!((cuts[0] - median).abs() < 1e-12);
        }
        let ColumnValues::Levels { levels, codes } = &data.columns()[*j].values else {
            panic!("column {j} should be categorical");
        };
        assert_eq!(levels.len(), k);
        let mut counts = vec![0usize; k];
        for c in codes.iter().flatten() {
            counts[*c] += 1;
        }
        for c in counts {
            let share = c as f64 / n as f64;
            assert!((share - 1.0 / k as f64).abs() <= 0.1 / k as f64, "share {share} for k={k}");
        }
    }
}

#[test]
fn four_levels_cut_at_quartiles() {
    let x = DMatrix::from_fn(9, 2, |i, j| (i + j) as f64);
    let mut r = rng(0);
    let disc = loop {
        let d = Discretization::fit(&x, 1, &mut r).unwrap();
        if d.columns[0].1.len() == 3 {
            break d;
        }
    };
    let j = disc.columns[0].0;
    let base = j as f64;
    assert_eq!(disc.columns[0].1, vec![base + 2.0, base + 4.0, base + 6.0]);
    assert_eq!(Discretization::level(&disc.columns[0].1, base + 2.0), 0);
    assert_eq!(Discretization::level(&disc.columns[0].1, base + 2.5), 1);
}

#[test]
fn study_is_reproducible_and_rates_are_bounded() {
    let s = SimulationScenario {
        n: 60,
        p: 8,
        r: 3,
        replicates: 6,
        seed: 99,
        ..Default::default()
    };
    let a = run_study(&s).unwrap();
    let b = run_study(&s).unwrap();
    assert_eq!(a, b);
    for r in &a.summary.ranks {
        for rate in [r.tpr, r.fpr].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&rate.rate));
            assert!(rate.ci.0 <= rate.rate && rate.rate <= rate.ci.1);
        }
    }
    let mut out = Vec::new();
    a.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 * 20);
    assert!(text.starts_with("replicate,rank,t2_true,oracle_extrapolated,metric,threshold,flagged"));
}

#[test]
fn invalid_scenarios_are_rejected() {
    let bad = [
        SimulationScenario {
            r: 30,
            ..Default::default()
        },
        SimulationScenario {
            p_cat: 21,
            ..Default::default()
        },
        SimulationScenario {
            replicates: 0,
            ..Default::default()
        },
        SimulationScenario {
            alpha: 1.0,
            ..Default::default()
        },
    ];
    for s in bad {
        assert!(run_study(&s).is_err(), "{s:?}");
    }
}

#[test]
fn large_samples_are_consistent() {
    let s = SimulationScenario {
        n: 10_000,
        p: 5,
        r: 2,
        replicates: 10,
        seed: 4,
        ..Default::default()
    };
    let res = run_study(&s).unwrap();
    assert!(res.summary.fpr.rate <= 0.05);
    assert!(res.summary.fresh_fpr.rate <= 0.05);
    assert!(res.top_tpr().unwrap() >= 0.99);
}

#[test]
fn pseudo_inverse_training_t2_is_constant_when_p_reaches_n() {
    for (n, p) in [(10, 10), (12, 15)] {
        let s = SimulationScenario {
            n,
            p,
            r: n - 1,
            replicates: 3,
            variant: MetricVariant::PseudoInverse,
            ..Default::default()
        };
        let res = run_study(&s).unwrap();
        let c = res.summary.training_t2_constant.expect("constant training T²");
        let expected = ((n - 1) * (n - 1)) as f64 / n as f64;
        assert!((c - expected).abs() < 1e-8 * expected, "{c} vs {expected}");
    }
}

#[test]
fn summary_json_round_trips() {
    let s = SimulationScenario {
        n: 30,
        p: 4,
        r: 2,
        p_cat: 2,
        replicates: 2,
        ..Default::default()
    };
    let res = run_study(&s).unwrap();
    let text = serde_json::to_string(&res.summary).unwrap();
    let back: profiler_core::simulation::StudySummary = serde_json::from_str(&text).unwrap();
    assert_eq!(back, res.summary);
    let sc: SimulationScenario = serde_json::from_str(r#"{"n":40,"p":20,"r":10,"variant":"pseudo_inverse"}"#).unwrap();
    assert_eq!(sc.variant, MetricVariant::PseudoInverse);
    assert_eq!(sc.n_grid, 20);
}
