//! System description, reward composition and the exact joint oracle.

mod oracle;
mod spec;

pub use oracle::{bellman_exact, bellman_exact_capped, brute_force_qstar, OracleSolution, DEFAULT_JOINT_CAP};
pub use spec::{Categorical, Dims, JointAction, JointState, Labels, SpecDocument, SpecParts, SystemSpec, ROW_SUM_TOL};

use crate::error::{contract, Result};

/// `r_g(s_g, a_g) + (1/n) Σ_i r_l(s_i, s_g, a_i)`.
pub fn system_reward(spec: &SystemSpec, s: &JointState, a: &JointAction) -> Result<f64> {
    spec.check_state(s)?;
    spec.check_action(a)?;
    let local: f64 = s
        .s_locals
        .iter()
        .zip(&a.a_locals)
        .map(|(&si, &ai)| spec.r_local(si, s.s_g, ai))
        .sum();
    Ok(spec.r_global(s.s_g, a.a_g) + local / spec.n() as f64)
}

/// `r_g(s_g, a_g) + (1/|Δ|) Σ_{i∈Δ} r_l(s_i, s_g, a_i)` for a set `delta` of
/// distinct zero-based agent indices.
pub fn surrogate_reward(spec: &SystemSpec, s: &JointState, a: &JointAction, delta: &[usize]) -> Result<f64> {
    spec.check_state(s)?;
    spec.check_action(a)?;
    if delta.is_empty() {
        return Err(contract("surrogate reward over an empty subset"));
    }
    let mut seen = vec![false; spec.n()];
    let mut local = 0.0;
    for &i in delta {
        if i >= spec.n() || std::mem::replace(&mut seen[i], true) {
            return Err(contract(format!("subset index {i} is out of range or repeated")));
        }
        local += spec.r_local(s.s_locals[i], s.s_g, a.a_locals[i]);
    }
    Ok(spec.r_global(s.s_g, a.a_g) + local / delta.len() as f64)
}
