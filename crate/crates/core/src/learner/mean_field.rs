//! Backups for the mean-field table `(s_g, s_1, F_peers, a_1, a_g)`.

use rayon::prelude::*;

use super::Backend;
use crate::error::Result;
use crate::mdp::SystemSpec;
use crate::meanfield::Lattice;
use crate::qtable::mf_entry;
use crate::rng::{stream, tag};

pub(crate) struct MeanField<'a> {
    spec: &'a SystemSpec,
    /// Peer (state, action) counts, `Lattice(k-1, |S_l|·|A_l|)`.
    peers: Lattice,
    /// Peer state counts, `Lattice(k-1, |S_l|)`.
    peer_states: Lattice,
    /// Cell list of every peer point, one entry per peer, cells ascending.
    peer_cells: Vec<Vec<usize>>,
    /// State-marginal rank of every peer point.
    marginal: Vec<usize>,
    /// `grow[j][r·|S_l| + s]`: rank in `Lattice(j+1, |S_l|)` of point `r` of
    /// `Lattice(j, |S_l|)` with one more agent in state `s`.
    grow: Vec<Vec<usize>>,
    reward: Vec<f64>,
}

impl<'a> MeanField<'a> {
    pub(crate) fn new(spec: &'a SystemSpec, k: usize, entries: usize) -> Result<Self> {
        let d = spec.dims();
        let (sl, al) = (d.local_states, d.local_actions);
        let peers = Lattice::new(k as u32 - 1, d.local_cells())?;
        let peer_states = Lattice::new(k as u32 - 1, sl)?;

        let mut peer_cells = Vec::with_capacity(peers.len());
        let mut marginal = Vec::with_capacity(peers.len());
        let mut counts = vec![0u32; d.local_cells()];
        let mut state_counts = vec![0u32; sl];
        for r in 0..peers.len() {
            peers.unrank_into(r, &mut counts);
            let mut cells = Vec::with_capacity(k - 1);
            state_counts.iter_mut().for_each(|c| *c = 0);
            for (z, &c) in counts.iter().enumerate() {
                cells.extend(std::iter::repeat(z).take(c as usize));
                state_counts[z / al] += c;
            }
            peer_cells.push(cells);
            marginal.push(peer_states.rank_unchecked(&state_counts));
        }

        let mut grow = Vec::with_capacity(k.saturating_sub(1));
        let mut point = vec![0u32; sl];
        for j in 0..k.saturating_sub(1) {
            let from = Lattice::new(j as u32, sl)?;
            let to = Lattice::new(j as u32 + 1, sl)?;
            let mut table = vec![0usize; from.len() * sl];
            for r in 0..from.len() {
                for s in 0..sl {
                    from.unrank_into(r, &mut point);
                    point[s] += 1;
                    table[r * sl + s] = to.rank_unchecked(&point);
                }
            }
            grow.push(table);
        }

        let block = peers.len() * al * d.global_actions;
        let mut reward = vec![0.0; entries];
        reward.par_chunks_mut(block).enumerate().for_each(|(gs, out)| {
            let (s_g, s_1) = (gs / sl, gs % sl);
            for (r, cells) in peer_cells.iter().enumerate() {
                let peer_sum: f64 = cells.iter().map(|&z| spec.r_local(z / al, s_g, z % al)).sum();
                for a_1 in 0..al {
                    for a_g in 0..d.global_actions {
                        let local = spec.r_local(s_1, s_g, a_1) + peer_sum;
                        out[(r * al + a_1) * d.global_actions + a_g] = spec.r_global(s_g, a_g) + local / k as f64;
                    }
                }
            }
        });

        Ok(MeanField {
            spec,
            peers,
            peer_states,
            peer_cells,
            marginal,
            grow,
            reward,
        })
    }

    /// Rough count of multiply-adds of one exact backup.
    pub(crate) fn exact_work(spec: &SystemSpec, k: usize) -> Option<f64> {
        let d = spec.dims();
        let lz = crate::meanfield::lattice_size(k as u32 - 1, d.local_cells())? as f64;
        let sl = d.local_states as f64;
        let conv: f64 = (0..k.saturating_sub(1))
            .map(|j| crate::meanfield::lattice_size(j as u32, d.local_states).unwrap_or(u64::MAX) as f64 * sl * sl)
            .sum();
        let ls = crate::meanfield::lattice_size(k as u32 - 1, d.local_states)? as f64;
        let g = d.global_states as f64;
        Some(g * lz * (conv + g * sl * ls + sl * d.local_cells() as f64 * d.global_actions as f64 * g * sl))
    }

    fn v_index(&self, s_g: usize, s_1: usize, marginal_rank: usize) -> usize {
        (s_g * self.spec.dims().local_states + s_1) * self.peer_states.len() + marginal_rank
    }
}

impl Backend for MeanField<'_> {
    fn reward(&self) -> &[f64] {
        &self.reward
    }

    /// `V[s_g][s_1][c]`: best value over every action profile whose peers'
    /// state counts equal `c`.
    fn state_values(&self, q: &[f64]) -> Vec<f64> {
        let d = self.spec.dims();
        let sl = d.local_states;
        let ab = d.local_actions * d.global_actions;
        let per_gs = self.peers.len() * ab;
        let mut v = vec![f64::NEG_INFINITY; d.global_states * sl * self.peer_states.len()];
        v.par_chunks_mut(self.peer_states.len()).enumerate().for_each(|(gs, vrow)| {
            let chunk = &q[gs * per_gs..(gs + 1) * per_gs];
            for (r, block) in chunk.chunks(ab).enumerate() {
                let best = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let slot = &mut vrow[self.marginal[r]];
                if best > *slot {
                    *slot = best;
                }
            }
        });
        v
    }

    fn expected_next(&self, v: &[f64], out: &mut [f64]) {
        let d = self.spec.dims();
        let (sg_n, sl, al, ag) = (d.global_states, d.local_states, d.local_actions, d.global_actions);
        let ls = self.peer_states.len();
        let per_g = sl * self.peers.len() * al * ag;
        out.par_chunks_mut(per_g).enumerate().for_each(|(s_g, out_g)| {
            let mut dist = Vec::new();
            let mut next_dist = Vec::new();
            let mut w = vec![0.0; sg_n * sl];
            for (r, cells) in self.peer_cells.iter().enumerate() {
                // Distribution of the peers' next state counts.
                dist.clear();
                dist.push(1.0);
                for (j, &z) in cells.iter().enumerate() {
                    let row = self.spec.local_row(z / al, s_g, z % al);
                    let to_len = crate::meanfield::lattice_size(j as u32 + 1, sl).expect("bounded by the peer lattice") as usize;
                    next_dist.clear();
                    next_dist.resize(to_len, 0.0);
                    let grow = &self.grow[j];
                    for (from, &p) in dist.iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        for (sp, q) in row.support() {
                            next_dist[grow[from * sl + sp]] += p * q;
                        }
                    }
                    std::mem::swap(&mut dist, &mut next_dist);
                }
                debug_assert_eq!(dist.len(), ls);
                // W[s_g'][s_1'] = Σ_c P(c) V[s_g'][s_1'][c].
                for gp in 0..sg_n {
                    for s1p in 0..sl {
                        let base = self.v_index(gp, s1p, 0);
                        let mut acc = 0.0;
                        for (c, &p) in dist.iter().enumerate() {
                            if p != 0.0 {
                                acc += p * v[base + c];
                            }
                        }
                        w[gp * sl + s1p] = acc;
                    }
                }
                for s_1 in 0..sl {
                    for a_1 in 0..al {
                        let focal = self.spec.local_row(s_1, s_g, a_1);
                        for a_g in 0..ag {
                            let mut e = 0.0;
                            for (gp, pg) in self.spec.global_row(s_g, a_g).support() {
                                let mut inner = 0.0;
                                for (s1p, pl) in focal.support() {
                                    inner += pl * w[gp * sl + s1p];
                                }
                                e += pg * inner;
                            }
                            let entry = mf_entry(d, self.peers.len(), 0, s_1, r, a_1, a_g);
                            out_g[entry] = e;
                        }
                    }
                }
            }
        });
    }

    fn sampled_next(&self, v: &[f64], m: usize, seed: u64, sweep: u64, out: &mut [f64]) {
        let d = self.spec.dims();
        let (sl, al, ag) = (d.local_states, d.local_actions, d.global_actions);
        let per_g = sl * self.peers.len() * al * ag;
        out.par_chunks_mut(per_g).enumerate().for_each(|(s_g, out_g)| {
            for (local_entry, slot) in out_g.iter_mut().enumerate() {
                let entry = s_g * per_g + local_entry;
                let a_g = local_entry % ag;
                let a_1 = (local_entry / ag) % al;
                let r = (local_entry / (ag * al)) % self.peers.len();
                let s_1 = local_entry / (ag * al * self.peers.len());
                let cells = &self.peer_cells[r];
                let g_row = self.spec.global_row(s_g, a_g);
                let f_row = self.spec.local_row(s_1, s_g, a_1);
                let mut rng = stream(seed, &[tag::LEARN, sweep, entry as u64]);
                let mut mean = 0.0;
                for j in 0..m {
                    let gp = g_row.sample(&mut rng);
                    let s1p = f_row.sample(&mut rng);
                    let mut rank = 0;
                    for (step, &z) in cells.iter().enumerate() {
                        let sp = self.spec.local_row(z / al, s_g, z % al).sample(&mut rng);
                        rank = self.grow[step][rank * sl + sp];
                    }
                    let x = v[self.v_index(gp, s1p, rank)];
                    mean += (x - mean) / (j + 1) as f64;
                }
                *slot = mean;
            }
        });
    }
}
