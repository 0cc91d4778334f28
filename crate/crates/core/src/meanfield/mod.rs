//! Empirical distributions over local (state, action) cells, the simplex
//! lattice they live on, distances between them, and subsampling.

mod lattice;
mod sampling;

pub use lattice::{binomial, lattice_size, Lattice, LatticeIter, MAX_LATTICE_POINTS};
pub use sampling::{
    dkw_bound, dkw_violation_rate, sample_excluding, sample_without_replacement, sup_deviation, tv_population_bound,
};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Counts of `k` agents over `d` cells. The value at cell `z` is `counts[z] / k`.
///
/// For local (state, action) pairs the cell of `(s, a)` is `s * |A_l| + a`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub denominator: u32,
    pub counts: Vec<u32>,
}

impl EmpiricalDistribution {
    /// Builds from counts; the denominator is their sum.
    pub fn from_counts(counts: Vec<u32>) -> Self {
        let denominator = counts.iter().sum();
        EmpiricalDistribution { denominator, counts }
    }

    /// Empirical distribution of the cells `items` over `0..dim`.
    pub fn of_cells(items: &[usize], dim: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(contract("empirical distribution of an empty sample"));
        }
        let mut counts = vec![0u32; dim];
        for &z in items {
            if z >= dim {
                return Err(contract(format!("cell {z} out of range 0..{dim}")));
            }
            counts[z] += 1;
        }
        Ok(Self::from_counts(counts))
    }

    /// `F_{z_Δ}` for the given (local state, local action) pairs.
    pub fn of_pairs(pairs: &[(usize, usize)], local_states: usize, local_actions: usize) -> Result<Self> {
        if pairs.iter().any(|&(s, a)| s >= local_states || a >= local_actions) {
            return Err(contract("local (state, action) pair out of range"));
        }
        let cells: Vec<usize> = pairs.iter().map(|&(s, a)| s * local_actions + a).collect();
        Self::of_cells(&cells, local_states * local_actions)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// `counts[z] / k`.
    pub fn value(&self, z: usize) -> f64 {
        f64::from(self.counts[z]) / f64::from(self.denominator)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.dim()).map(|z| self.value(z)).collect()
    }

    /// Marginal over local states of a (state, action) distribution.
    pub fn state_marginal(&self, local_actions: usize) -> Vec<u32> {
        self.counts.chunks(local_actions).map(|c| c.iter().sum()).collect()
    }
}

fn check_pair(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(contract(format!("dimension mismatch: {} vs {}", p.dim(), q.dim())));
    }
    if p.denominator == 0 || q.denominator == 0 {
        return Err(contract("distance between empty samples"));
    }
    Ok(())
}

/// `½ Σ_z |p(z) − q(z)|`, computed on integer numerators so equal
/// distributions give exactly zero.
pub fn tv_distance(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Result<f64> {
    check_pair(p, q)?;
    let (kp, kq) = (u64::from(p.denominator), u64::from(q.denominator));
    let l1: u64 = p
        .counts
        .iter()
        .zip(&q.counts)
        .map(|(&a, &b)| (u64::from(a) * kq).abs_diff(u64::from(b) * kp))
        .sum();
    Ok(l1 as f64 / (2.0 * (kp * kq) as f64))
}

/// `Σ_{p(z)>0} p(z) ln(p(z)/q(z))`, `+∞` when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Result<f64> {
    check_pair(p, q)?;
    let mut total = 0.0;
    for z in 0..p.dim() {
        if p.counts[z] == 0 {
            continue;
        }
        if q.counts[z] == 0 {
            return Ok(f64::INFINITY);
        }
        let (pz, qz) = (p.value(z), q.value(z));
        total += pz * (pz / qz).ln();
    }
    // Rounding can leave a tiny negative number for equal distributions.
    Ok(total.max(0.0))
}
