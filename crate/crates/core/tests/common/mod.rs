#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64Mcg;
use submfq::envs::{random_instance, RandomSizes};
use submfq::mdp::{Dims, SpecParts};
use submfq::SystemSpec;

/// Every kernel row uniform, rewards constant.
pub fn constant_spec(n: usize, dims: Dims, r_g: f64, r_l: f64, gamma: f64) -> SystemSpec {
    let (sg, sl, ag, al) = (dims.global_states, dims.local_states, dims.global_actions, dims.local_actions);
    SystemSpec::new(SpecParts {
        n,
        dims,
        p_global: vec![1.0 / sg as f64; sg * ag * sg],
        p_local: vec![1.0 / sl as f64; sl * sg * al * sl],
        r_global: vec![r_g; sg * ag],
        r_local: vec![r_l; sl * sg * al],
        gamma,
        bound_global: None,
        bound_local: None,
        labels: None,
    })
    .unwrap()
}

/// Random point-mass kernels and random rewards.
pub fn deterministic_instance(seed: u64, n: usize, dims: Dims, gamma: f64) -> SystemSpec {
    let mut rng = Pcg64Mcg::seed_from_u64(seed);
    let (sg, sl, ag, al) = (dims.global_states, dims.local_states, dims.global_actions, dims.local_actions);
    let mut p_global = vec![0.0; sg * ag * sg];
    for row in p_global.chunks_mut(sg) {
        row[rng.random_range(0..sg)] = 1.0;
    }
    let mut p_local = vec![0.0; sl * sg * al * sl];
    for row in p_local.chunks_mut(sl) {
        row[rng.random_range(0..sl)] = 1.0;
    }
    SystemSpec::new(SpecParts {
        n,
        dims,
        p_global,
        p_local,
        r_global: (0..sg * ag).map(|_| rng.random_range(-1.0..1.0)).collect(),
        r_local: (0..sl * sg * al).map(|_| rng.random_range(-1.0..1.0)).collect(),
        gamma,
        bound_global: Some(1.0),
        bound_local: Some(1.0),
        labels: None,
    })
    .unwrap()
}

pub fn random(seed: u64, n: usize, sg: usize, sl: usize, ag: usize, al: usize, gamma: f64) -> SystemSpec {
    random_instance(seed, RandomSizes::new(n, sg, sl, ag, al, gamma)).unwrap()
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(n, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k, 0, &mut Vec::new(), &mut out);
    out
}

/// Every digit vector of the radices, last digit fastest.
pub fn tuples(radices: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &r in radices {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..r).map(move |d| {
                    let mut t = t.clone();
                    t.push(d);
                    t
                })
            })
            .collect();
    }
    out
}
