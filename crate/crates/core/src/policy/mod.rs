//! Greedy policies read off learned tables and their execution on the full
//! `n`-agent system.

mod execute;

pub use execute::{
    default_horizon, evaluate_policy, evaluate_with, execute, execute_with, global_action_mixture,
    local_action_mixture, majority, partition, Dynamics, EvalSummary, ExecutionConfig, InitialState, KernelDynamics, Step,
    Strategy, Trajectory,
};

use crate::error::{contract, Result};
use crate::meanfield::Lattice;
use crate::qtable::{mf_entry, mixed_radix, QTable};

/// Greedy policy of a fixed-point table. Ties go to the smallest entry index.
///
/// Queries are canonicalised before lookup: a global query sorts the sampled
/// states ascending, and a local query puts the focal agent first followed by
/// its peers sorted ascending. Answers are therefore invariant under any
/// reordering of the sampled agents, whatever the layout.
#[derive(Clone, Debug)]
pub struct LearnedPolicy {
    q: QTable,
    /// Mean-field only: peer points grouped by the rank of their state marginal.
    by_marginal: Vec<Vec<usize>>,
    peer_states: Option<Lattice>,
}

impl LearnedPolicy {
    pub fn new(q: QTable) -> Result<Self> {
        let d = q.dims();
        let (by_marginal, peer_states) = match q.peer_lattice() {
            Some(peers) => {
                let states = Lattice::new(q.k() as u32 - 1, d.local_states)?;
                let mut groups = vec![Vec::new(); states.len()];
                let mut counts = vec![0u32; d.local_cells()];
                let mut marg = vec![0u32; d.local_states];
                for r in 0..peers.len() {
                    peers.unrank_into(r, &mut counts);
                    marg.iter_mut().for_each(|m| *m = 0);
                    for (z, &c) in counts.iter().enumerate() {
                        marg[z / d.local_actions] += c;
                    }
                    groups[states.rank_unchecked(&marg)].push(r);
                }
                (groups, Some(states))
            }
            None => (Vec::new(), None),
        };
        Ok(LearnedPolicy {
            q,
            by_marginal,
            peer_states,
        })
    }

    pub fn table(&self) -> &QTable {
        &self.q
    }

    pub fn into_table(self) -> QTable {
        self.q
    }

    pub fn k(&self) -> usize {
        self.q.k()
    }

    fn check(&self, s_g: usize, states: &[usize]) -> Result<()> {
        let d = self.q.dims();
        if states.len() != self.k() {
            return Err(contract(format!("query has {} local states, policy has k={}", states.len(), self.k())));
        }
        if s_g >= d.global_states || states.iter().any(|&s| s >= d.local_states) {
            return Err(contract("query state out of range"));
        }
        Ok(())
    }

    /// Best `(a_g, a_focal)` for the ordered states `[focal, peers…]`.
    fn argmax(&self, s_g: usize, ordered: &[usize]) -> (usize, usize) {
        let d = self.q.dims();
        let values = self.q.values();
        match self.peer_states.as_ref() {
            None => {
                let (state_pow, block) = self.q.explicit_shape().expect("explicit layout");
                let base = (s_g * state_pow + mixed_radix(ordered, d.local_states)) * block;
                let mut best = 0;
                for a in 1..block {
                    if values[base + a] > values[base + best] {
                        best = a;
                    }
                }
                let action_pow = block / d.global_actions;
                let a_g = best / action_pow;
                let a_1 = (best % action_pow) / (action_pow / d.local_actions);
                (a_g, a_1)
            }
            Some(states) => {
                let peers_len = self.q.peer_lattice().expect("mean-field layout").len();
                let mut marg = vec![0u32; d.local_states];
                for &s in &ordered[1..] {
                    marg[s] += 1;
                }
                let mut best: Option<(f64, usize)> = None;
                for &r in &self.by_marginal[states.rank_unchecked(&marg)] {
                    let base = mf_entry(d, peers_len, s_g, ordered[0], r, 0, 0);
                    for off in 0..d.local_actions * d.global_actions {
                        let (v, e) = (values[base + off], base + off);
                        match best {
                            Some((bv, be)) if v < bv || (v == bv && e > be) => {}
                            _ => best = Some((v, e)),
                        }
                    }
                }
                let e = best.expect("every state marginal has a peer point").1;
                (e % d.global_actions, (e / d.global_actions) % d.local_actions)
            }
        }
    }

    /// `[π(s_g, s_Δ)]_g`.
    pub fn greedy_global(&self, s_g: usize, s_delta: &[usize]) -> Result<usize> {
        self.check(s_g, s_delta)?;
        let mut sorted = s_delta.to_vec();
        sorted.sort_unstable();
        Ok(self.argmax(s_g, &sorted).0)
    }

    /// `[π(s_g, s_i, s_peers)]_l`, the focal agent's action.
    pub fn greedy_local(&self, s_g: usize, s_i: usize, s_peers: &[usize]) -> Result<usize> {
        let mut ordered = Vec::with_capacity(s_peers.len() + 1);
        ordered.push(s_i);
        let mut peers = s_peers.to_vec();
        peers.sort_unstable();
        ordered.extend(peers);
        self.check(s_g, &ordered)?;
        Ok(self.argmax(s_g, &ordered).1)
    }
}
