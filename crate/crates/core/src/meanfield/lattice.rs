//! The normalized simplex lattice `{c ∈ ℕ^d : Σc = k}` with a dense ranking.
//!
//! A composition `c` is encoded by its stars-and-bars bar positions
//! `b_j = c_0 + … + c_j + j` (for `j < d-1`), a `(d-1)`-subset of
//! `0..k+d-1`. Points are ordered colexicographically on that subset and
//! ranked with the combinatorial number system, `rank = Σ_j C(b_j, j+1)`.
//! Under this order `(0,…,0,k)` has rank 0 and `(k,0,…,0)` has the largest rank.

use crate::error::{contract, Error, Result};

/// `C(n, r)` or `None` on overflow.
pub fn binomial(n: u64, r: u64) -> Option<u64> {
    if r > n {
        return Some(0);
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return None;
        }
    }
    Some(acc as u64)
}

/// Number of lattice points, `C(k + d - 1, d - 1)`.
pub fn lattice_size(total: u32, dim: usize) -> Option<u64> {
    if dim == 0 {
        return None;
    }
    binomial(u64::from(total) + dim as u64 - 1, dim as u64 - 1)
}

/// Dense index over the compositions of `total` into `dim` parts.
#[derive(Clone, Debug)]
pub struct Lattice {
    total: u32,
    dim: usize,
    len: usize,
    /// `binom[n * dim + r] = C(n, r)` for `n < total + dim`, `r < dim`.
    binom: Vec<u64>,
}

/// Largest lattice the engine will index.
pub const MAX_LATTICE_POINTS: u64 = 1 << 32;

impl Lattice {
    pub fn new(total: u32, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(contract("lattice dimension must be at least 1"));
        }
        let len = lattice_size(total, dim).filter(|&l| l <= MAX_LATTICE_POINTS).ok_or_else(|| Error::Capacity {
            what: format!("simplex lattice (k={total}, d={dim})"),
            required: approx_size(total, dim),
            cap: MAX_LATTICE_POINTS as f64,
        })?;
        let rows = total as usize + dim;
        let mut binom = vec![0u64; rows * dim];
        for n in 0..rows {
            for r in 0..dim.min(n + 1) {
                binom[n * dim + r] = if r == 0 || r == n {
                    1
                } else {
                    // Pascal's rule; every value is bounded by the lattice size checked above.
                    binom[(n - 1) * dim + r - 1].saturating_add(if r < n { binom[(n - 1) * dim + r] } else { 0 })
                };
            }
        }
        Ok(Lattice {
            total,
            dim,
            len: len as usize,
            binom,
        })
    }

    /// The denominator `k` of every point.
    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn c(&self, n: usize, r: usize) -> u64 {
        if r > n {
            0
        } else {
            self.binom[n * self.dim + r]
        }
    }

    /// Rank of `counts`, validated.
    pub fn rank(&self, counts: &[u32]) -> Result<usize> {
        if counts.len() != self.dim {
            return Err(contract(format!("counts have dimension {}, lattice has {}", counts.len(), self.dim)));
        }
        let sum: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if sum != u64::from(self.total) {
            return Err(contract(format!("counts sum to {sum}, lattice total is {}", self.total)));
        }
        Ok(self.rank_unchecked(counts))
    }

    /// Rank without validation; `counts` must be a point of this lattice.
    #[inline]
    pub fn rank_unchecked(&self, counts: &[u32]) -> usize {
        let mut rank = 0u64;
        let mut bar = 0usize;
        for (j, &c) in counts[..self.dim - 1].iter().enumerate() {
            bar += c as usize;
            rank += self.c(bar + j, j + 1);
        }
        rank as usize
    }

    /// Point at `rank`, validated.
    pub fn unrank(&self, rank: usize) -> Result<Vec<u32>> {
        if rank >= self.len {
            return Err(contract(format!("rank {rank} out of range for lattice of size {}", self.len)));
        }
        let mut out = vec![0; self.dim];
        self.unrank_into(rank, &mut out);
        Ok(out)
    }

    /// Writes the point at `rank` into `out` (length `dim`).
    pub fn unrank_into(&self, rank: usize, out: &mut [u32]) {
        let d = self.dim;
        let span = self.total as usize + d - 1;
        let mut rem = rank as u64;
        // Recover bar positions from the largest down.
        let mut hi = span;
        let mut bars = vec![0usize; d.saturating_sub(1)];
        for j in (0..d - 1).rev() {
            let mut b = hi - 1;
            while self.c(b, j + 1) > rem {
                b -= 1;
            }
            rem -= self.c(b, j + 1);
            bars[j] = b;
            hi = b;
        }
        let mut prev: isize = -1;
        for j in 0..d - 1 {
            out[j] = (bars[j] as isize - prev - 1) as u32;
            prev = bars[j] as isize;
        }
        out[d - 1] = (span as isize - prev - 1) as u32;
    }

    /// All points in rank order, produced by a successor rule that does not
    /// use the ranking formula.
    pub fn iter(&self) -> LatticeIter {
        LatticeIter::new(self.total, self.dim)
    }
}

fn approx_size(total: u32, dim: usize) -> f64 {
    let n = f64::from(total) + dim as f64 - 1.0;
    let r = dim as f64 - 1.0;
    (0..dim.saturating_sub(1)).fold(1.0, |acc, i| acc * (n - i as f64) / (r - i as f64))
}

/// Enumerates compositions in colex order of their bar sets.
#[derive(Clone, Debug)]
pub struct LatticeIter {
    span: usize,
    dim: usize,
    bars: Vec<usize>,
    done: bool,
}

impl LatticeIter {
    fn new(total: u32, dim: usize) -> Self {
        LatticeIter {
            span: total as usize + dim - 1,
            dim,
            bars: (0..dim - 1).collect(),
            done: false,
        }
    }

    fn counts(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.dim);
        let mut prev: isize = -1;
        for &b in &self.bars {
            out.push((b as isize - prev - 1) as u32);
            prev = b as isize;
        }
        out.push((self.span as isize - prev - 1) as u32);
        out
    }
}

impl Iterator for LatticeIter {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        if self.done {
            return None;
        }
        let current = self.counts();
        let m = self.bars.len();
        let mut j = 0;
        loop {
            if j == m {
                self.done = true;
                break;
            }
            let limit = if j + 1 < m { self.bars[j + 1] } else { self.span };
            if self.bars[j] + 1 < limit {
                self.bars[j] += 1;
                for (i, b) in self.bars[..j].iter_mut().enumerate() {
                    *b = i;
                }
                break;
            }
            j += 1;
        }
        Some(current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_compositions(total: u32, dim: usize) -> Vec<Vec<u32>> {
        // Independent nested enumeration, order irrelevant.
        fn rec(left: u32, dim: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if dim == 1 {
                prefix.push(left);
                out.push(prefix.clone());
                prefix.pop();
                return;
            }
            for c in 0..=left {
                prefix.push(c);
                rec(left - c, dim - 1, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(total, dim, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), Some(10));
        assert_eq!(binomial(8, 3), Some(56));
        assert_eq!(binomial(3, 5), Some(0));
        assert_eq!(binomial(0, 0), Some(1));
        assert_eq!(binomial(200, 100), None);
    }

    #[test]
    fn small_lattice_order() {
        let l = Lattice::new(2, 2).unwrap();
        let pts: Vec<_> = l.iter().collect();
        assert_eq!(pts, vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
        assert_eq!(l.unrank(0).unwrap(), vec![0, 2]);
    }

    #[test]
    fn degenerate_lattices() {
        let l = Lattice::new(0, 4).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l.iter().collect::<Vec<_>>(), vec![vec![0, 0, 0, 0]]);
        let l = Lattice::new(5, 1).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l.unrank(0).unwrap(), vec![5]);
        assert_eq!(l.rank(&[5]).unwrap(), 0);
    }

    #[test]
    fn sizes_match_enumeration() {
        for total in 0..=8u32 {
            for dim in 1..=4usize {
                let l = Lattice::new(total, dim).unwrap();
                let brute = brute_compositions(total, dim);
                assert_eq!(l.len(), brute.len(), "k={total} d={dim}");
                assert_eq!(l.iter().count(), brute.len());
            }
        }
        assert_eq!(Lattice::new(5, 4).unwrap().len(), 56);
    }

    #[test]
    fn rank_unrank_bijection_and_monotone_enumeration() {
        for total in 0..=8u32 {
            for dim in 1..=4usize {
                let l = Lattice::new(total, dim).unwrap();
                for (expected, p) in l.iter().enumerate() {
                    assert_eq!(l.rank(&p).unwrap(), expected);
                    assert_eq!(l.unrank(expected).unwrap(), p);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let l = Lattice::new(3, 3).unwrap();
        assert!(l.rank(&[1, 1]).is_err());
        assert!(l.rank(&[1, 1, 2]).is_err());
        assert!(l.unrank(l.len()).is_err());
        assert!(Lattice::new(3, 0).is_err());
        assert!(matches!(Lattice::new(1000, 400), Err(Error::Capacity { .. })));
    }
}
