mod common;

use common::{constant_spec, random, subsets, tuples};
use submfq::learner::{learn, LearnConfig};
use submfq::mdp::Dims;
use submfq::policy::{
    default_horizon, evaluate_policy, execute, global_action_mixture, local_action_mixture, majority, partition,
    ExecutionConfig, InitialState,
};
use submfq::{system_reward, JointAction, JointState, Layout, LearnedPolicy, QTable, Strategy, SystemSpec};

fn learned(spec: &SystemSpec, k: usize, layout: Option<Layout>) -> LearnedPolicy {
    let cfg = LearnConfig {
        layout,
        tol: 1e-12,
        ..LearnConfig::exact(k, 2000)
    };
    LearnedPolicy::new(learn(spec, &cfg).unwrap().0).unwrap()
}

fn fixed(s_g: usize, locals: &[usize]) -> InitialState {
    InitialState::Fixed {
        state: JointState::new(s_g, locals.to_vec()),
    }
}

#[test]
fn greedy_reads_the_argmax() {
    // One global state, two local states, two actions each; entry = s_1·4 + a_g·2 + a_1.
    let dims = Dims::new(1, 2, 2, 2);
    let values = vec![0.0, 1.0, 3.0, 2.0, 5.0, 5.0, 1.0, 0.0];
    let q = QTable::from_values(Layout::ExplicitSubset { k: 1 }, dims, values).unwrap();
    let pi = LearnedPolicy::new(q).unwrap();
    assert_eq!(pi.greedy_global(0, &[0]).unwrap(), 1);
    assert_eq!(pi.greedy_local(0, 0, &[]).unwrap(), 0);
    // Tie between entries 4 and 5 goes to the smaller one.
    assert_eq!(pi.greedy_global(0, &[1]).unwrap(), 0);
    assert_eq!(pi.greedy_local(0, 1, &[]).unwrap(), 0);
    assert!(pi.greedy_global(0, &[2]).is_err());
    assert!(pi.greedy_global(1, &[0]).is_err());
    assert!(pi.greedy_global(0, &[0, 1]).is_err());
}

#[test]
fn greedy_is_permutation_invariant() {
    let spec = random(41, 4, 2, 3, 2, 2, 0.7);
    for layout in [Layout::ExplicitSubset { k: 3 }, Layout::MeanField { k: 3 }] {
        let pi = learned(&spec, 3, Some(layout));
        for t in tuples(&[2, 3, 3, 3]) {
            let s = &t[1..];
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let g = pi.greedy_global(t[0], s).unwrap();
            let l = pi.greedy_local(t[0], s[0], &s[1..]).unwrap();
            for p in perms {
                let ps: Vec<usize> = p.iter().map(|&i| s[i]).collect();
                assert_eq!(pi.greedy_global(t[0], &ps).unwrap(), g);
                assert_eq!(pi.greedy_local(t[0], s[0], &[s[2], s[1]]).unwrap(), l);
            }
        }
    }
}

#[test]
fn layouts_give_the_same_policy() {
    let spec = random(42, 3, 2, 2, 2, 2, 0.6);
    let ex = learned(&spec, 3, Some(Layout::ExplicitSubset { k: 3 }));
    let mf = learned(&spec, 3, Some(Layout::MeanField { k: 3 }));
    let mut agree = 0;
    let mut total = 0;
    for t in tuples(&[2, 2, 2, 2]) {
        total += 2;
        agree += usize::from(ex.greedy_global(t[0], &t[1..]).unwrap() == mf.greedy_global(t[0], &t[1..]).unwrap());
        agree += usize::from(
            ex.greedy_local(t[0], t[1], &t[2..]).unwrap() == mf.greedy_local(t[0], t[1], &t[2..]).unwrap(),
        );
    }
    // Distinct values make ties measure zero; the two tables agree to 1e-9.
    assert_eq!(agree, total);
}

#[test]
fn full_subsystem_makes_strategies_coincide() {
    let spec = random(43, 3, 2, 2, 2, 2, 0.8);
    let pi = learned(&spec, 3, None);
    let run = |strategy| {
        let cfg = ExecutionConfig {
            strategy,
            horizon: 25,
            seed: 5,
            initial: fixed(1, &[0, 1, 1]),
        };
        execute(&spec, &pi, &cfg).unwrap()
    };
    let a = run(Strategy::Independent);
    let b = run(Strategy::WeakShared);
    let c = run(Strategy::StrongShared);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn horizon_one_returns_first_reward() {
    let spec = random(44, 4, 2, 2, 2, 2, 0.9);
    let pi = learned(&spec, 2, None);
    for strategy in [Strategy::Independent, Strategy::WeakShared, Strategy::StrongShared] {
        let cfg = ExecutionConfig {
            strategy,
            horizon: 1,
            seed: 9,
            initial: fixed(0, &[1, 0, 1, 1]),
        };
        let t = execute(&spec, &pi, &cfg).unwrap();
        assert_eq!(t.steps.len(), 1);
        let step = &t.steps[0];
        assert_eq!(t.discounted_return, system_reward(&spec, &step.state, &step.action).unwrap());
    }
    let cfg = ExecutionConfig {
        strategy: Strategy::Independent,
        horizon: 0,
        seed: 0,
        initial: fixed(0, &[0; 4]),
    };
    assert!(execute(&spec, &pi, &cfg).is_err());
}

#[test]
fn action_mixture_matches_enumeration_and_sampling() {
    let spec = random(45, 3, 2, 3, 3, 2, 0.7);
    let pi = learned(&spec, 2, None);
    let s = JointState::new(1, vec![0, 2, 1]);

    let mut want_g = vec![0.0; 3];
    for sub in subsets(3, 2) {
        let states: Vec<usize> = sub.iter().map(|&i| s.s_locals[i]).collect();
        want_g[pi.greedy_global(1, &states).unwrap()] += 1.0 / 3.0;
    }
    let got_g = global_action_mixture(&spec, &pi, &s).unwrap();
    for (a, b) in got_g.iter().zip(&want_g) {
        assert!((a - b).abs() < 1e-12);
    }
    let mut want_l = vec![vec![0.0; 2]; 3];
    for i in 0..3 {
        for j in (0..3).filter(|&j| j != i) {
            want_l[i][pi.greedy_local(1, s.s_locals[i], &[s.s_locals[j]]).unwrap()] += 0.5;
        }
        let got = local_action_mixture(&spec, &pi, &s, i).unwrap();
        assert!(got.iter().zip(&want_l[i]).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    let runs = 6000;
    let mut freq_g = vec![0usize; 3];
    let mut freq_l = vec![vec![0usize; 2]; 3];
    for seed in 0..runs {
        let cfg = ExecutionConfig {
            strategy: Strategy::Independent,
            horizon: 1,
            seed,
            initial: InitialState::Fixed { state: s.clone() },
        };
        let a = &execute(&spec, &pi, &cfg).unwrap().steps[0].action;
        freq_g[a.a_g] += 1;
        for i in 0..3 {
            freq_l[i][a.a_locals[i]] += 1;
        }
    }
    let close = |count: usize, p: f64| {
        let sigma = (runs as f64 * p * (1.0 - p)).sqrt();
        (count as f64 - runs as f64 * p).abs() <= 4.0 * sigma + 1e-9
    };
    assert!(freq_g.iter().zip(&want_g).all(|(&c, &p)| close(c, p)), "{freq_g:?} vs {want_g:?}");
    for i in 0..3 {
        assert!(freq_l[i].iter().zip(&want_l[i]).all(|(&c, &p)| close(c, p)));
    }
}

#[test]
fn majority_breaks_ties_low() {
    assert_eq!(majority(&[2, 1, 2, 1], 3), 1);
    assert_eq!(majority(&[2, 2, 0], 3), 2);
    assert_eq!(majority(&[1], 2), 1);
    assert_eq!(majority(&[], 4), 0);
}

#[test]
fn groups_have_k_members_except_the_last() {
    for n in 1..=12 {
        for k in 1..=n {
            for strategy in [Strategy::WeakShared, Strategy::StrongShared] {
                let groups = partition(strategy, n, k, 77);
                let mut sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
                let mut want = vec![k; n / k];
                if n % k != 0 {
                    want.push(n % k);
                }
                assert_eq!(sizes, want);
                sizes.clear();
                let mut all: Vec<usize> = groups.concat();
                all.sort_unstable();
                assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
            assert!(partition(Strategy::Independent, n, k, 0).is_empty());
        }
    }
    assert_eq!(partition(Strategy::WeakShared, 5, 2, 0), vec![vec![0, 1], vec![2, 3], vec![4]]);
    assert_eq!(partition(Strategy::StrongShared, 9, 4, 3), partition(Strategy::StrongShared, 9, 4, 3));
}

#[test]
fn deterministic_system_has_exact_return() {
    let spec = constant_spec(3, Dims::new(1, 1, 1, 1), 0.5, 1.5, 0.9);
    let pi = learned(&spec, 2, None);
    let h = 30;
    let e = evaluate_policy(&spec, &pi, Strategy::StrongShared, 50, h, 1, &fixed(0, &[0, 0, 0])).unwrap();
    let want = 2.0 * (1.0 - 0.9f64.powi(h as i32)) / 0.1;
    assert!((e.mean - want).abs() < 1e-12);
    assert_eq!(e.std_dev, 0.0);
    assert_eq!(e.half_width, 0.0);
    assert!((e.truncation_error - 0.9f64.powi(h as i32) * 20.0).abs() < 1e-12);
}

#[test]
fn default_horizon_examples() {
    assert_eq!(default_horizon(0.0), 1);
    assert_eq!(default_horizon(0.5), 10);
    assert_eq!(default_horizon(0.9), 66);
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for j in c..n {
                a[r][j] -= f * a[c][j];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|j| a[r][j] * x[j]).sum();
        x[r] = (b[r] - tail) / a[r][r];
    }
    x
}

#[test]
fn monte_carlo_value_matches_linear_solve() {
    let spec = random(46, 2, 2, 2, 2, 2, 0.8);
    let pi = learned(&spec, 2, None);
    let states = tuples(&[2, 2, 2]);
    let act = |s: &[usize]| {
        JointAction::new(
            pi.greedy_global(s[0], &s[1..]).unwrap(),
            vec![pi.greedy_local(s[0], s[1], &[s[2]]).unwrap(), pi.greedy_local(s[0], s[2], &[s[1]]).unwrap()],
        )
    };
    let ns = states.len();
    let mut a = vec![vec![0.0; ns]; ns];
    let mut b = vec![0.0; ns];
    for (i, s) in states.iter().enumerate() {
        let ja = act(s);
        b[i] = system_reward(&spec, &JointState::new(s[0], s[1..].to_vec()), &ja).unwrap();
        a[i][i] += 1.0;
        for (j, x) in states.iter().enumerate() {
            let p = spec.p_global(s[0], ja.a_g, x[0])
                * spec.p_local(s[1], s[0], ja.a_locals[0], x[1])
                * spec.p_local(s[2], s[0], ja.a_locals[1], x[2]);
            a[i][j] -= spec.gamma() * p;
        }
    }
    let v = solve(a, b);
    let start = [1usize, 0, 1];
    let idx = states.iter().position(|s| s[..] == start).unwrap();
    let e = evaluate_policy(&spec, &pi, Strategy::Independent, 4000, 120, 3, &fixed(1, &[0, 1])).unwrap();
    assert!(e.truncation_error < 1e-9);
    assert!((e.mean - v[idx]).abs() <= 3.0 * e.half_width + e.truncation_error, "{} vs {}", e.mean, v[idx]);
}

#[test]
fn trajectory_csv_reproduces_return() {
    let spec = random(47, 3, 2, 2, 2, 2, 0.85);
    let pi = learned(&spec, 2, None);
    let cfg = ExecutionConfig {
        strategy: Strategy::WeakShared,
        horizon: 40,
        seed: 8,
        initial: InitialState::Product {
            global: vec![0.5, 0.5],
            local: vec![0.2, 0.8],
        },
    };
    let t = execute(&spec, &pi, &cfg).unwrap();
    assert_eq!(t.recompute_return(), t.discounted_return);
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step,s_g,s_1,s_2,s_3,a_g,a_1,a_2,a_3,reward");
    let mut total = 0.0;
    let mut disc = 1.0;
    let mut rows = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 10);
        total += disc * cols[9].parse::<f64>().unwrap();
        disc *= t.gamma;
        rows += 1;
    }
    assert_eq!(rows, 40);
    assert_eq!(total, t.discounted_return);
}

#[test]
fn execution_is_seed_deterministic() {
    let spec = random(48, 5, 2, 2, 2, 2, 0.85);
    let pi = learned(&spec, 2, None);
    for strategy in [Strategy::Independent, Strategy::WeakShared, Strategy::StrongShared] {
        let cfg = ExecutionConfig {
            strategy,
            horizon: 30,
            seed: 12,
            initial: fixed(0, &[0, 1, 0, 1, 1]),
        };
        assert_eq!(execute(&spec, &pi, &cfg).unwrap(), execute(&spec, &pi, &cfg).unwrap());
        let a = evaluate_policy(&spec, &pi, strategy, 64, 30, 4, &cfg.initial).unwrap();
        let b = evaluate_policy(&spec, &pi, strategy, 64, 30, 4, &cfg.initial).unwrap();
        assert_eq!(a, b);
    }
}
