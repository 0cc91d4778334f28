mod common;

use common::{deterministic_instance, random, tuples};
use submfq::learner::{
    choose_layout, hoeffding_repetitions, learn, learn_stable, learn_stochastic_rewards, learn_with_noise_estimate,
    sample_size_mstar, LearnConfig, LearningRates, Operator, RewardNoise,
};
use submfq::mdp::Dims;
use submfq::{surrogate_reward, JointAction, JointState, Layout, QTable};

#[test]
fn layout_choice_examples() {
    assert_eq!(choose_layout(1, 5, 5), Layout::ExplicitSubset { k: 1 });
    assert_eq!(choose_layout(2, 2, 2), Layout::ExplicitSubset { k: 2 });
    assert_eq!(choose_layout(6, 4, 3), Layout::ExplicitSubset { k: 6 });
    assert_eq!(choose_layout(20, 2, 2), Layout::MeanField { k: 20 });
    assert_eq!(choose_layout(40, 3, 2), Layout::MeanField { k: 40 });
    // z = 2, k = 4: 2^3 = 8 <= 4^2 = 16; k = 7: 2^6 = 64 > 49.
    assert_eq!(choose_layout(4, 2, 1), Layout::ExplicitSubset { k: 4 });
    assert_eq!(choose_layout(7, 2, 1), Layout::MeanField { k: 7 });
}

#[test]
fn myopic_learner_returns_subsystem_reward() {
    let spec = random(21, 4, 2, 3, 2, 2, 0.0);
    for layout in [Layout::ExplicitSubset { k: 3 }, Layout::MeanField { k: 3 }] {
        let cfg = LearnConfig {
            layout: Some(layout),
            ..LearnConfig::exact(3, 50)
        };
        let (q, report) = learn(&spec, &cfg).unwrap();
        assert!(report.converged && report.iterations_used <= 2);
        for t in tuples(&[2, 3, 3, 3, 2, 2, 2, 2]) {
            let s = JointState::new(t[0], vec![t[1], t[2], t[3], 0]);
            let a = JointAction::new(t[4], vec![t[5], t[6], t[7], 0]);
            let want = surrogate_reward(&spec, &s, &a, &[0, 1, 2]).unwrap();
            let got = q.get(t[0], &t[1..4], t[4], &t[5..8]).unwrap();
            assert!((got - want).abs() < 1e-12, "{layout:?} {t:?}");
        }
    }
}

#[test]
fn sampled_equals_exact_on_deterministic_kernels() {
    let spec = deterministic_instance(22, 3, Dims::new(2, 3, 2, 2), 0.8);
    for layout in [Layout::ExplicitSubset { k: 2 }, Layout::MeanField { k: 2 }] {
        let exact = LearnConfig {
            layout: Some(layout),
            tol: 1e-12,
            ..LearnConfig::exact(2, 500)
        };
        let sampled = LearnConfig {
            layout: Some(layout),
            tol: 1e-12,
            ..LearnConfig::sampled(2, 3, 500, 99)
        };
        let (a, _) = learn(&spec, &exact).unwrap();
        let (b, _) = learn(&spec, &sampled).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
    }
}

#[test]
fn explicit_and_mean_field_tables_agree() {
    let spec = random(23, 4, 2, 2, 2, 2, 0.7);
    let run = |layout| {
        let cfg = LearnConfig {
            layout: Some(layout),
            tol: 1e-12,
            ..LearnConfig::exact(3, 1000)
        };
        learn(&spec, &cfg).unwrap().0
    };
    let ex = run(Layout::ExplicitSubset { k: 3 });
    let mf = run(Layout::MeanField { k: 3 });
    for e in 0..ex.len() {
        let (sg, s, ag, a) = ex.explicit_decode(e).unwrap();
        assert!((ex.values()[e] - mf.get(sg, &s, ag, &a).unwrap()).abs() < 1e-9);
    }
    assert!(mf.len() < ex.len());
}

#[test]
fn adapted_operator_contracts() {
    use rand::{Rng, SeedableRng};
    let spec = random(24, 3, 2, 2, 2, 2, 0.75);
    let mut rng = rand_pcg::Pcg64Mcg::seed_from_u64(3);
    for layout in [Layout::ExplicitSubset { k: 2 }, Layout::MeanField { k: 2 }] {
        let op = Operator::new(&spec, layout).unwrap();
        for _ in 0..200 {
            let a: Vec<f64> = (0..op.entries()).map(|_| rng.random_range(-4.0..4.0)).collect();
            let b: Vec<f64> = (0..op.entries()).map(|_| rng.random_range(-4.0..4.0)).collect();
            let qa = QTable::from_values(layout, spec.dims(), a).unwrap();
            let qb = QTable::from_values(layout, spec.dims(), b).unwrap();
            let lhs = op.adapted(&qa).unwrap().max_abs_diff(&op.adapted(&qb).unwrap()).unwrap();
            assert!(lhs <= spec.gamma() * qa.max_abs_diff(&qb).unwrap() + 1e-12);
            let lhs = op.empirical(&qa, 4, 5, 0).unwrap().max_abs_diff(&op.empirical(&qb, 4, 5, 0).unwrap()).unwrap();
            assert!(lhs <= spec.gamma() * qa.max_abs_diff(&qb).unwrap() + 1e-12);
        }
    }
}

#[test]
fn sampling_error_decays_like_inverse_root_m() {
    let spec = random(25, 3, 2, 2, 2, 2, 0.5);
    let ms = [4usize, 16, 64, 256, 1024];
    let seeds = 12u64;
    let mut points = Vec::new();
    for &m in &ms {
        let mut total = 0.0;
        for seed in 0..seeds {
            let cfg = LearnConfig {
                tol: 1e-12,
                ..LearnConfig::sampled(2, m, 200, 1000 + seed)
            };
            let (_, report) = learn_with_noise_estimate(&spec, &cfg).unwrap();
            total += report.epsilon_km_estimate.unwrap();
        }
        points.push(((m as f64).ln(), (total / seeds as f64).ln()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((-0.65..=-0.35).contains(&slope), "slope {slope}");
}

#[test]
fn unit_learning_rate_is_plain_iteration() {
    let spec = random(26, 3, 2, 2, 2, 2, 0.8);
    let cfg = LearnConfig::sampled(2, 5, 60, 7);
    let (plain, _) = learn(&spec, &cfg).unwrap();
    let (unit, _) = learn_stable(&spec, &cfg, LearningRates::Constant(1.0)).unwrap();
    assert_eq!(plain.values(), unit.values());
    let (frozen, _) = learn_stable(&spec, &cfg, LearningRates::Constant(0.0)).unwrap();
    assert!(frozen.values().iter().all(|&v| v == 0.0));
}

#[test]
fn damped_iteration_reaches_the_same_fixed_point() {
    let spec = random(27, 3, 2, 2, 2, 2, 0.7);
    let cfg = LearnConfig {
        tol: 1e-13,
        ..LearnConfig::exact(2, 5000)
    };
    let (plain, _) = learn(&spec, &cfg).unwrap();
    let (damped, report) = learn_stable(&spec, &cfg, LearningRates::Schedule(vec![0.3, 0.5, 0.7])).unwrap();
    assert!(report.converged);
    assert!(plain.max_abs_diff(&damped).unwrap() < 1e-10);
}

#[test]
fn deterministic_rewards_ignore_averaging() {
    let spec = random(28, 3, 2, 2, 2, 2, 0.8);
    let cfg = LearnConfig::exact(2, 80);
    let (plain, _) = learn(&spec, &cfg).unwrap();
    let (avg, _) = learn_stochastic_rewards(&spec, &cfg, RewardNoise::None, 17).unwrap();
    assert_eq!(plain.values(), avg.values());
}

#[test]
fn averaged_noisy_rewards_stay_close() {
    let spec = random(29, 2, 2, 2, 2, 2, 0.5);
    let cfg = LearnConfig {
        tol: 1e-12,
        ..LearnConfig::exact(2, 200)
    };
    let (clean, _) = learn(&spec, &cfg).unwrap();
    let noise = RewardNoise::Uniform {
        global_half_width: 0.5,
        local_half_width: 0.5,
    };
    let (noisy, _) = learn_stochastic_rewards(&spec, &LearnConfig { seed: 4, ..cfg.clone() }, noise, 400).unwrap();
    assert!(clean.max_abs_diff(&noisy).unwrap() < 0.15);
}

/// Independent evaluation of the sample-size expression.
fn mstar_oracle(sg: f64, sl: f64, ag: f64, al: f64, gamma: f64, k: f64) -> f64 {
    let prod = sg * ag * sl * al;
    let mut v = 2.0 * prod;
    v *= k.powf(2.5 + sl * al);
    v /= (1.0 - gamma).powf(5.0);
    v *= prod.ln();
    v *= -2.0 * (1.0 - gamma).ln();
    v.ceil()
}

#[test]
fn sample_size_matches_oracle() {
    let got = sample_size_mstar(Dims::new(2, 2, 2, 2), 0.5, 2).unwrap();
    assert_eq!(got as f64, mstar_oracle(2.0, 2.0, 2.0, 2.0, 0.5, 2.0));
    assert_eq!(got, 356_235);
    assert!((got as f64 - 356_254.0).abs() / 356_254.0 < 1e-4);
    for (dims, gamma, k) in [(Dims::new(3, 2, 2, 3), 0.9, 3), (Dims::new(1, 2, 3, 1), 0.3, 1)] {
        let want = mstar_oracle(
            dims.global_states as f64,
            dims.local_states as f64,
            dims.global_actions as f64,
            dims.local_actions as f64,
            gamma,
            k as f64,
        )
        .max(1.0);
        let got = sample_size_mstar(dims, gamma, k).unwrap() as f64;
        assert!((got - want).abs() <= 1.0 + want * 1e-12, "{got} vs {want}");
    }
    assert!(sample_size_mstar(Dims::new(2, 2, 2, 2), 1.0, 2).is_err());
    assert!(sample_size_mstar(Dims::new(2, 2, 2, 2), 0.5, 0).is_err());
}

#[test]
fn hoeffding_repetitions_match_oracle() {
    let oracle = |range: f64, k: f64| (10.0 * range * k.sqrt().sqrt() * (200.0 * k.sqrt()).ln().sqrt()).ceil() as usize;
    assert_eq!(hoeffding_repetitions(1.0, 4).unwrap(), 35);
    for k in 1..20 {
        for range in [0.5, 1.0, 2.0] {
            assert_eq!(hoeffding_repetitions(range, k).unwrap(), oracle(range, k as f64));
        }
    }
    assert_eq!(hoeffding_repetitions(0.0, 3).unwrap(), 1);
    assert!(hoeffding_repetitions(1.0, 0).is_err());
}

#[test]
fn config_rejections() {
    let spec = random(30, 3, 2, 2, 2, 2, 0.5);
    assert!(learn(&spec, &LearnConfig::exact(4, 10)).is_err());
    assert!(learn(&spec, &LearnConfig::exact(0, 10)).is_err());
    assert!(learn(&spec, &LearnConfig::sampled(2, 0, 10, 0)).is_err());
    let bad = LearnConfig {
        layout: Some(Layout::MeanField { k: 3 }),
        ..LearnConfig::exact(2, 10)
    };
    assert!(learn(&spec, &bad).is_err());
    let capped = LearnConfig {
        max_table_entries: 10,
        ..LearnConfig::exact(2, 10)
    };
    assert!(learn(&spec, &capped).is_err());
    assert!(learn_stable(&spec, &LearnConfig::exact(2, 10), LearningRates::Constant(1.5)).is_err());
}

#[test]
fn report_records_residuals() {
    let spec = random(31, 3, 2, 2, 2, 2, 0.6);
    let (q, report) = learn(&spec, &LearnConfig::exact(2, 300)).unwrap();
    assert!(report.converged);
    assert_eq!(report.residuals.len(), report.iterations_used);
    assert_eq!(report.table_entries as usize, q.len());
    assert!(report.residuals.windows(2).all(|w| w[1] <= spec.gamma() * w[0] + 1e-12));
    assert!(report.max_abs_value <= spec.value_bound() + 1e-12);
}
