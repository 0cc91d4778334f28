use rand::seq::index;

use crate::error::{contract, Result};
use crate::rng::Rng;

/// A uniformly random `k`-subset of `0..n`, sorted ascending.
pub fn sample_without_replacement(rng: &mut Rng, n: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(contract(format!("cannot draw {k} of {n} without replacement")));
    }
    let mut out = index::sample(rng, n, k).into_vec();
    out.sort_unstable();
    Ok(out)
}

/// A uniformly random `k`-subset of `0..n` avoiding every index in `excluded`,
/// sorted ascending. `k = 0` yields an empty subset.
pub fn sample_excluding(rng: &mut Rng, n: usize, excluded: &[usize], k: usize) -> Result<Vec<usize>> {
    let pool: Vec<usize> = (0..n).filter(|i| !excluded.contains(i)).collect();
    if k > pool.len() {
        return Err(contract(format!("cannot draw {k} of the {} remaining indices", pool.len())));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let picks = index::sample(rng, pool.len(), k);
    let mut out: Vec<usize> = picks.iter().map(|i| pool[i]).collect();
    out.sort_unstable();
    Ok(out)
}

/// `sqrt(1 - k/n)`, the bound on the TV distance between a `k`-subsample's
/// empirical distribution and the population's.
pub fn tv_population_bound(n: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(contract(format!("subsample size {k} must lie in 1..={n}")));
    }
    Ok((1.0 - k as f64 / n as f64).max(0.0).sqrt())
}

/// `2|B| exp(-2 k n eps² / (n - k + 1))`: the probability bound that a
/// `k`-subsample's cell frequencies deviate from the population's by more
/// than `eps` in some cell.
pub fn dkw_bound(n: usize, k: usize, cells: usize, eps: f64) -> f64 {
    let (n, k) = (n as f64, k as f64);
    2.0 * cells as f64 * (-2.0 * k * n * eps * eps / (n - k + 1.0)).exp()
}

/// `max_z |F_sub(z) - F_pop(z)|` for cell labels in `0..cells`.
pub fn sup_deviation(population: &[usize], subsample: &[usize], cells: usize) -> f64 {
    let mut pop = vec![0usize; cells];
    let mut sub = vec![0usize; cells];
    for &z in population {
        pop[z] += 1;
    }
    for &z in subsample {
        sub[z] += 1;
    }
    let (np, ns) = (population.len() as f64, subsample.len() as f64);
    pop.iter()
        .zip(&sub)
        .map(|(&p, &s)| (s as f64 / ns - p as f64 / np).abs())
        .fold(0.0, f64::max)
}

/// Fraction of `trials` uniform `k`-subsamples of `population` whose
/// sup-cell deviation exceeds `eps`.
pub fn dkw_violation_rate(
    rng: &mut Rng,
    population: &[usize],
    cells: usize,
    k: usize,
    eps: f64,
    trials: usize,
) -> Result<f64> {
    let n = population.len();
    if !(eps > 0.0) || trials == 0 {
        return Err(contract("eps must be positive and trials at least 1"));
    }
    if population.iter().any(|&z| z >= cells) {
        return Err(contract("population cell out of range"));
    }
    let mut hits = 0usize;
    let mut sub = Vec::with_capacity(k);
    for _ in 0..trials {
        let idx = sample_without_replacement(rng, n, k)?;
        sub.clear();
        sub.extend(idx.iter().map(|&i| population[i]));
        if sup_deviation(population, &sub, cells) > eps {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}
