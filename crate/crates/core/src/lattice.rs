//! The lattice of empirical distributions.
//!
//! A mean-field over `d` states with population `n` is a count vector
//! summing to `n`; there are `C(n + d - 1, d - 1)` of them. Count vectors are
//! ordered colexicographically (compare the last coordinate first), so for
//! two states the rank of `(n - m, m)` is simply `m`.
//!
//! Typed populations have one such block per type, each with its own fixed
//! population; the joint lattice is the product of the blocks with block 0
//! as the least significant digit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on the number of lattice points.
pub const MAX_LATTICE_POINTS: u128 = 10_000_000;

/// Empirical distribution stored as integer counts over (augmented) states.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeanField {
    counts: Vec<u32>,
}

impl MeanField {
    pub fn new(counts: Vec<u32>) -> Self {
        MeanField { counts }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn into_counts(self) -> Vec<u32> {
        self.counts
    }

    pub fn population(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    pub fn states(&self) -> usize {
        self.counts.len()
    }

    /// `z(x) = counts(x) / n`.
    pub fn fraction(&self, state: usize) -> f64 {
        self.counts[state] as f64 / self.population() as f64
    }

    pub fn fractions(&self) -> Vec<f64> {
        let n = self.population() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

/// Number of compositions of `n` into `d` parts, or a capacity error.
pub fn composition_count(n: usize, d: usize) -> Result<u128> {
    if d == 0 {
        return Ok(if n == 0 { 1 } else { 0 });
    }
    // C(n + d - 1, d - 1) built incrementally; every partial product is an
    // exact binomial coefficient.
    let mut c: u128 = 1;
    for i in 1..d as u128 {
        c = c
            .checked_mul(n as u128 + i)
            .ok_or_else(|| Error::capacity("composition lattice", u128::MAX, MAX_LATTICE_POINTS))?
            / i;
    }
    Ok(c)
}

/// Colex ranking over compositions of a fixed `n` into `d` parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompositionLattice {
    n: usize,
    d: usize,
    size: usize,
    // comps[j][r]: number of compositions of r into j parts, j in 0..=d.
    comps: Vec<Vec<u64>>,
}

impl CompositionLattice {
    pub fn new(n: usize, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Model("lattice needs at least one state".into()));
        }
        let size = composition_count(n, d)?;
        if size > MAX_LATTICE_POINTS {
            return Err(Error::capacity(
                format!("mean-field lattice (n={n}, d={d})"),
                size,
                MAX_LATTICE_POINTS,
            ));
        }
        let mut comps = vec![vec![0u64; n + 1]; d + 1];
        comps[0][0] = 1;
        for j in 1..=d {
            for r in 0..=n {
                let below = if r > 0 { comps[j][r - 1] } else { 0 };
                comps[j][r] = below + comps[j - 1][r];
            }
        }
        Ok(CompositionLattice { n, d, size: size as usize, comps })
    }

    pub fn population(&self) -> usize {
        self.n
    }

    pub fn states(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn rank(&self, counts: &[u32]) -> Result<usize> {
        if counts.len() != self.d {
            return Err(Error::Lookup(format!(
                "count vector has {} entries, lattice has {} states",
                counts.len(),
                self.d
            )));
        }
        let total: usize = counts.iter().map(|&c| c as usize).sum();
        if total != self.n {
            return Err(Error::Lookup(format!(
                "count vector {counts:?} sums to {total}, expected {}",
                self.n
            )));
        }
        Ok(self.rank_unchecked(counts))
    }

    /// Rank of a count vector already known to lie on the lattice.
    pub(crate) fn rank_unchecked(&self, counts: &[u32]) -> usize {
        let mut idx = 0u64;
        let mut remaining = self.n;
        for j in (1..self.d).rev() {
            let c = counts[j] as usize;
            // vectors agreeing above j with a smaller entry at j
            idx += self.comps[j + 1][remaining] - self.comps[j + 1][remaining - c];
            remaining -= c;
        }
        idx as usize
    }

    pub fn unrank(&self, idx: usize) -> Result<MeanField> {
        if idx >= self.size {
            return Err(Error::Lookup(format!("lattice index {idx} out of range 0..{}", self.size)));
        }
        let mut counts = vec![0u32; self.d];
        self.unrank_into(idx, &mut counts);
        Ok(MeanField::new(counts))
    }

    pub(crate) fn unrank_into(&self, idx: usize, counts: &mut [u32]) {
        let mut rest = idx as u64;
        let mut remaining = self.n;
        for j in (1..self.d).rev() {
            let mut c = 0usize;
            loop {
                let block = self.comps[j][remaining - c];
                if rest < block {
                    break;
                }
                rest -= block;
                c += 1;
            }
            counts[j] = c as u32;
            remaining -= c;
        }
        counts[0] = remaining as u32;
    }

    /// All points in colex order.
    pub fn iter(&self) -> ColexIter {
        ColexIter::new(self.n, self.d)
    }
}

/// Advances `counts` to its colex successor; returns false at the last point.
pub fn next_colex(counts: &mut [u32]) -> bool {
    let mut below = 0u32;
    for j in 1..counts.len() {
        below += counts[j - 1];
        if below > 0 {
            counts[j] += 1;
            for c in counts[..j].iter_mut() {
                *c = 0;
            }
            counts[0] = below - 1;
            return true;
        }
    }
    false
}

pub struct ColexIter {
    current: Option<Vec<u32>>,
}

impl ColexIter {
    fn new(n: usize, d: usize) -> Self {
        let mut first = vec![0u32; d];
        if d > 0 {
            first[0] = n as u32;
        }
        ColexIter { current: if d > 0 { Some(first) } else { None } }
    }
}

impl Iterator for ColexIter {
    type Item = MeanField;

    fn next(&mut self) -> Option<MeanField> {
        let out = self.current.clone()?;
        let cur = self.current.as_mut().unwrap();
        if !next_colex(cur) {
            self.current = None;
        }
        Some(MeanField::new(out))
    }
}

/// All count vectors with total `n` over `d` states, in colex order.
pub fn enumerate(n: usize, d: usize) -> Result<Vec<MeanField>> {
    if n == 0 {
        return Err(Error::Model("population must be at least 1".into()));
    }
    let lattice = CompositionLattice::new(n, d)?;
    Ok(lattice.iter().collect())
}

/// One population block: a contiguous range of states holding a fixed number
/// of agents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub start: usize,
    pub lattice: CompositionLattice,
    stride: usize,
}

impl Block {
    pub fn states(&self) -> usize {
        self.lattice.states()
    }

    pub fn population(&self) -> usize {
        self.lattice.population()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.states()
    }
}

/// Product of composition lattices, one per population block, indexed densely.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lattice {
    blocks: Vec<Block>,
    states: usize,
    size: usize,
}

impl Lattice {
    /// `blocks` lists `(state_count, population)` for consecutive state ranges.
    pub fn new(blocks: &[(usize, usize)]) -> Result<Self> {
        let mut out = Vec::with_capacity(blocks.len());
        let mut start = 0;
        let mut size: u128 = 1;
        for &(d, n) in blocks {
            let lattice = CompositionLattice::new(n, d)?;
            let stride = size as usize;
            size *= lattice.len() as u128;
            if size > MAX_LATTICE_POINTS {
                return Err(Error::capacity("mean-field lattice", size, MAX_LATTICE_POINTS));
            }
            out.push(Block { start, lattice, stride });
            start += d;
        }
        if out.is_empty() {
            return Err(Error::Model("lattice needs at least one block".into()));
        }
        Ok(Lattice { blocks: out, states: start, size: size as usize })
    }

    /// Single block over `d` states with population `n`.
    pub fn simplex(n: usize, d: usize) -> Result<Self> {
        Lattice::new(&[(d, n)])
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn population(&self) -> usize {
        self.blocks.iter().map(Block::population).sum()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn stride(&self, block: usize) -> usize {
        self.blocks[block].stride
    }

    pub fn rank(&self, counts: &[u32]) -> Result<usize> {
        if counts.len() != self.states {
            return Err(Error::Lookup(format!(
                "count vector has {} entries, lattice has {} states",
                counts.len(),
                self.states
            )));
        }
        let mut idx = 0;
        for b in &self.blocks {
            idx += b.lattice.rank(&counts[b.range()])? * b.stride;
        }
        Ok(idx)
    }

    /// Like [`rank`](Self::rank) but returns `None` off the lattice.
    pub fn try_rank(&self, counts: &[u32]) -> Option<usize> {
        self.rank(counts).ok()
    }

    pub fn unrank(&self, idx: usize) -> Result<MeanField> {
        if idx >= self.size {
            return Err(Error::Lookup(format!("lattice index {idx} out of range 0..{}", self.size)));
        }
        let mut counts = vec![0u32; self.states];
        self.unrank_into(idx, &mut counts);
        Ok(MeanField::new(counts))
    }

    pub(crate) fn unrank_into(&self, idx: usize, counts: &mut [u32]) {
        for b in &self.blocks {
            let local = (idx / b.stride) % b.lattice.len();
            b.lattice.unrank_into(local, &mut counts[b.range()]);
        }
    }

    pub fn points(&self) -> impl Iterator<Item = MeanField> + '_ {
        (0..self.size).map(move |i| self.unrank(i).expect("index in range"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(mf: &[MeanField]) -> Vec<Vec<u32>> {
        mf.iter().map(|m| m.counts().to_vec()).collect()
    }

    #[test]
    fn two_agents_two_states() {
        let all = enumerate(2, 2).unwrap();
        assert_eq!(counts(&all), vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        let lat = CompositionLattice::new(2, 2).unwrap();
        assert_eq!(lat.rank(&[2, 0]).unwrap(), 0);
    }

    #[test]
    fn hundred_agents_two_states() {
        assert_eq!(enumerate(100, 2).unwrap().len(), 101);
        let lat = CompositionLattice::new(100, 2).unwrap();
        for m in 0..=100u32 {
            assert_eq!(lat.rank(&[100 - m, m]).unwrap(), m as usize);
        }
    }

    #[test]
    fn typed_example_point_is_on_lattice() {
        let all = enumerate(5, 5).unwrap();
        assert_eq!(all.len(), 126);
        let target = MeanField::new(vec![0, 2, 1, 1, 1]);
        let hit = all.iter().find(|m| **m == target).unwrap();
        assert_eq!(hit.fractions(), vec![0.0, 0.4, 0.2, 0.2, 0.2]);
    }

    #[test]
    fn rank_matches_linear_scan() {
        let all = enumerate(3, 3).unwrap();
        let pos = all.iter().position(|m| m.counts() == [1, 1, 1]).unwrap();
        let lat = CompositionLattice::new(3, 3).unwrap();
        assert_eq!(lat.rank(&[1, 1, 1]).unwrap(), pos);
    }

    #[test]
    fn off_lattice_rank_is_an_error() {
        let lat = CompositionLattice::new(3, 2).unwrap();
        assert!(matches!(lat.rank(&[1, 1]), Err(Error::Lookup(_))));
        assert!(lat.unrank(4).is_err());
    }

    #[test]
    fn capacity_cap() {
        let err = CompositionLattice::new(1000, 6).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
        assert!(Lattice::new(&[(2, 5_000_000), (2, 5_000_000)]).is_err());
    }

    #[test]
    fn product_lattice_ranks_blockwise() {
        let lat = Lattice::new(&[(2, 2), (3, 1)]).unwrap();
        assert_eq!(lat.len(), 9);
        for i in 0..lat.len() {
            let mf = lat.unrank(i).unwrap();
            assert_eq!(&mf.counts()[..2].iter().sum::<u32>(), &2);
            assert_eq!(&mf.counts()[2..].iter().sum::<u32>(), &1);
            assert_eq!(lat.rank(mf.counts()).unwrap(), i);
        }
        // wrong per-block mass
        assert!(lat.rank(&[1, 0, 1, 1, 0]).is_err());
    }
}
