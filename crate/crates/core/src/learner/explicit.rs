//! Backups for the explicit `k`-agent table.

use rayon::prelude::*;

use super::Backend;
use crate::mdp::SystemSpec;
use crate::qtable::digits;
use crate::rng::{stream, tag};

pub(crate) struct Explicit<'a> {
    spec: &'a SystemSpec,
    k: usize,
    /// `|S_l|^k`.
    state_pow: usize,
    /// `|A_l|^k`.
    action_pow: usize,
    /// `|A_g|·|A_l|^k`, the contiguous action block of one state.
    block: usize,
    reward: Vec<f64>,
}

impl<'a> Explicit<'a> {
    pub(crate) fn new(spec: &'a SystemSpec, k: usize, entries: usize) -> Self {
        let d = spec.dims();
        let state_pow = d.local_states.pow(k as u32);
        let action_pow = d.local_actions.pow(k as u32);
        let block = d.global_actions * action_pow;
        let mut reward = vec![0.0; entries];
        reward.par_chunks_mut(block).enumerate().for_each(|(state, out)| {
            let s_g = state / state_pow;
            let s = digits(state % state_pow, d.local_states, k);
            for (action, r) in out.iter_mut().enumerate() {
                let a_g = action / action_pow;
                let a = digits(action % action_pow, d.local_actions, k);
                let local: f64 = s.iter().zip(&a).map(|(&si, &ai)| spec.r_local(si, s_g, ai)).sum();
                *r = spec.r_global(s_g, a_g) + local / k as f64;
            }
        });
        Explicit {
            spec,
            k,
            state_pow,
            action_pow,
            block,
            reward,
        }
    }

    /// Rough count of multiply-adds of one exact backup.
    pub(crate) fn exact_work(spec: &SystemSpec, k: usize) -> f64 {
        let d = spec.dims();
        let (sl, z) = (d.local_states as f64, d.local_cells() as f64);
        let per_pair: f64 = (0..k).map(|i| z.powi(i as i32 + 1) * sl.powi((k - i) as i32)).sum();
        (d.global_states * d.global_actions) as f64 * (per_pair + d.global_states as f64 * sl.powi(k as i32))
    }
}

impl Backend for Explicit<'_> {
    fn reward(&self) -> &[f64] {
        &self.reward
    }

    fn state_values(&self, q: &[f64]) -> Vec<f64> {
        q.par_chunks(self.block)
            .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    fn expected_next(&self, v: &[f64], out: &mut [f64]) {
        let d = self.spec.dims();
        let (sl, al, z) = (d.local_states, d.local_actions, d.local_cells());
        let k = self.k;
        let pairs: Vec<(usize, usize)> =
            (0..d.global_states).flat_map(|g| (0..d.global_actions).map(move |a| (g, a))).collect();
        // For each (s_g, a_g): E[V] for every (z_1, …, z_k), z_i = s_i·|A_l| + a_i.
        let tensors: Vec<Vec<f64>> = pairs
            .par_iter()
            .map(|&(s_g, a_g)| {
                let mut cur = vec![0.0; self.state_pow];
                for (gp, pg) in self.spec.global_row(s_g, a_g).support() {
                    let vs = &v[gp * self.state_pow..(gp + 1) * self.state_pow];
                    for (c, &x) in cur.iter_mut().zip(vs) {
                        *c += pg * x;
                    }
                }
                // Axis i has size z for i < axis and sl from axis on.
                for axis in 0..k {
                    let outer = z.pow(axis as u32);
                    let inner = sl.pow((k - axis - 1) as u32);
                    let mut next = vec![0.0; outer * z * inner];
                    for o in 0..outer {
                        for cell in 0..z {
                            let row = self.spec.local_row(cell / al, s_g, cell % al);
                            let dst = &mut next[(o * z + cell) * inner..(o * z + cell + 1) * inner];
                            for (sp, p) in row.support() {
                                let src = &cur[(o * sl + sp) * inner..(o * sl + sp + 1) * inner];
                                for (x, &y) in dst.iter_mut().zip(src) {
                                    *x += p * y;
                                }
                            }
                        }
                    }
                    cur = next;
                }
                cur
            })
            .collect();

        out.par_chunks_mut(self.block).enumerate().for_each(|(state, block)| {
            let s_g = state / self.state_pow;
            let s = digits(state % self.state_pow, sl, k);
            for a_g in 0..d.global_actions {
                let t = &tensors[s_g * d.global_actions + a_g];
                for a_idx in 0..self.action_pow {
                    let a = digits(a_idx, al, k);
                    let zi = s.iter().zip(&a).fold(0, |acc, (&si, &ai)| acc * z + si * al + ai);
                    block[a_g * self.action_pow + a_idx] = t[zi];
                }
            }
        });
    }

    fn sampled_next(&self, v: &[f64], m: usize, seed: u64, sweep: u64, out: &mut [f64]) {
        let d = self.spec.dims();
        let k = self.k;
        let (sl, al) = (d.local_states, d.local_actions);
        out.par_chunks_mut(self.block).enumerate().for_each(|(state, block)| {
            let s_g = state / self.state_pow;
            let s = digits(state % self.state_pow, sl, k);
            let mut a = vec![0usize; k];
            for (action, slot) in block.iter_mut().enumerate() {
                let entry = state * self.block + action;
                let a_g = action / self.action_pow;
                let mut rest = action % self.action_pow;
                for x in a.iter_mut().rev() {
                    *x = rest % al;
                    rest /= al;
                }
                let mut rng = stream(seed, &[tag::LEARN, sweep, entry as u64]);
                let g_row = self.spec.global_row(s_g, a_g);
                let mut mean = 0.0;
                for j in 0..m {
                    let gp = g_row.sample(&mut rng);
                    let mut idx = 0;
                    for i in 0..k {
                        idx = idx * sl + self.spec.local_row(s[i], s_g, a[i]).sample(&mut rng);
                    }
                    let x = v[gp * self.state_pow + idx];
                    mean += (x - mean) / (j + 1) as f64;
                }
                *slot = mean;
            }
        });
    }
}
