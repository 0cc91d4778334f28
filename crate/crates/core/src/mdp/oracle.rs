//! Exact Bellman backups over the full joint space, by plain successor
//! enumeration. Deliberately naive: it serves as the reference the learner is
//! checked against.

use super::spec::SystemSpec;
use crate::error::{contract, Error, Result};
use crate::qtable::{Layout, QTable};

/// Largest joint table the oracle will handle.
pub const DEFAULT_JOINT_CAP: u64 = 10_000_000;

/// Result of [`brute_force_qstar`].
#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub q: QTable,
    pub iterations: usize,
    /// `‖Q^T − Q^{T−1}‖∞` at the last iteration.
    pub residual: f64,
}

/// Visits every combination of `radices` in odometer order, last digit fastest.
fn for_each_tuple(radices: &[usize], mut f: impl FnMut(&[usize])) {
    let mut t = vec![0usize; radices.len()];
    loop {
        f(&t);
        let mut i = radices.len();
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            t[i] += 1;
            if t[i] < radices[i] {
                break;
            }
            t[i] = 0;
        }
    }
}

/// `(𝒯q)(s, a) = r(s, a) + γ Σ_{s'} P(s'|s, a) max_{a'} q(s', a')` over the
/// joint space of all `n` agents.
pub fn bellman_exact(spec: &SystemSpec, q: &QTable) -> Result<QTable> {
    bellman_exact_capped(spec, q, DEFAULT_JOINT_CAP)
}

pub fn bellman_exact_capped(spec: &SystemSpec, q: &QTable, cap: u64) -> Result<QTable> {
    let n = spec.n();
    if q.layout() != (Layout::Joint { n }) || q.dims() != spec.dims() {
        return Err(contract("bellman_exact needs a joint table over the system's sets"));
    }
    if q.len() as u64 > cap {
        return Err(Error::Capacity {
            what: format!("joint table for n={n}"),
            required: q.len() as f64,
            cap: cap as f64,
        });
    }
    let d = spec.dims();
    let gamma = spec.gamma();

    let mut state_radices = vec![d.local_states; n + 1];
    state_radices[0] = d.global_states;
    let mut action_radices = vec![d.local_actions; n + 1];
    action_radices[0] = d.global_actions;

    // Value of every joint state, keyed by the same tuple order as the table.
    let mut v = Vec::new();
    for_each_tuple(&state_radices, |s| {
        let mut best = f64::NEG_INFINITY;
        for_each_tuple(&action_radices, |a| {
            let x = q.get(s[0], &s[1..], a[0], &a[1..]).expect("in range");
            if x > best {
                best = x;
            }
        });
        v.push(best);
    });
    let state_index = |s: &[usize]| s.iter().zip(&state_radices).fold(0usize, |acc, (&x, &r)| acc * r + x);

    let mut out = vec![0.0; q.len()];
    for_each_tuple(&state_radices, |s| {
        for_each_tuple(&action_radices, |a| {
            let mut local = 0.0;
            for i in 0..n {
                local += spec.r_local(s[1 + i], s[0], a[1 + i]);
            }
            let reward = spec.r_global(s[0], a[0]) + local / n as f64;

            let mut expect = 0.0;
            for_each_tuple(&state_radices, |sp| {
                let mut p = spec.p_global(s[0], a[0], sp[0]);
                for i in 0..n {
                    if p == 0.0 {
                        break;
                    }
                    p *= spec.p_local(s[1 + i], s[0], a[1 + i], sp[1 + i]);
                }
                if p != 0.0 {
                    expect += p * v[state_index(sp)];
                }
            });
            let e = q.explicit_index(s[0], &s[1..], a[0], &a[1..]).expect("in range");
            out[e] = reward + gamma * expect;
        });
    });
    q.with_values(out)
}

/// Value iteration from zero with [`bellman_exact`] until the successive
/// max-norm difference drops below `tol`. The returned table is within
/// `tol·γ/(1−γ)` of `Q*`.
pub fn brute_force_qstar(spec: &SystemSpec, tol: f64, max_iters: usize) -> Result<OracleSolution> {
    if !(tol > 0.0) {
        return Err(contract("tolerance must be positive"));
    }
    let mut q = QTable::zeros_capped(Layout::Joint { n: spec.n() }, spec.dims(), DEFAULT_JOINT_CAP)?;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let next = bellman_exact(spec, &q)?;
        residual = next.max_abs_diff(&q)?;
        q = next;
        if residual < tol {
            return Ok(OracleSolution {
                q,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::Convergence {
        iterations: max_iters,
        residual,
    })
}
