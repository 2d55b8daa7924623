//! Tagged distribution sets, cross-sums and ESR pruning.

use rayon::prelude::*;

use crate::distribution::{CdfGrid, GridCdf, ReturnDistribution};
use crate::error::Result;
use crate::graph::PartialJointAction;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedDistribution {
    pub dist: ReturnDistribution,
    pub tag: PartialJointAction,
}

/// Insertion-ordered set of tagged distributions. A member identical to an
/// existing one in both tag and samples is not inserted twice.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistributionSet {
    members: Vec<TaggedDistribution>,
}

impl DistributionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(dist: ReturnDistribution, tag: PartialJointAction) -> Self {
        Self {
            members: vec![TaggedDistribution { dist, tag }],
        }
    }

    pub fn push(&mut self, member: TaggedDistribution) {
        if !self.members.iter().any(|m| m == &member) {
            self.members.push(member);
        }
    }

    pub fn extend(&mut self, other: DistributionSet) {
        for m in other.members {
            self.push(m);
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[TaggedDistribution] {
        &self.members
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TaggedDistribution> {
        self.members.iter()
    }

    pub fn into_members(self) -> Vec<TaggedDistribution> {
        self.members
    }

    /// Apply `f` to every tag.
    pub fn map_tags(
        self,
        mut f: impl FnMut(&mut PartialJointAction) -> Result<()>,
    ) -> Result<Self> {
        let mut members = self.members;
        for m in &mut members {
            f(&mut m.tag)?;
        }
        Ok(Self { members })
    }
}

impl FromIterator<TaggedDistribution> for DistributionSet {
    fn from_iter<T: IntoIterator<Item = TaggedDistribution>>(iter: T) -> Self {
        let mut s = Self::new();
        for m in iter {
            s.push(m);
        }
        s
    }
}

/// Pairwise convolution of every member of `a` with every member of `b`,
/// merging tags. The pair `(i, j)` is subsampled with seed `(seed, i, j)`.
pub fn cross_sum(
    a: &DistributionSet,
    b: &DistributionSet,
    cap: Option<usize>,
    seed: u64,
) -> Result<DistributionSet> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            let tag = x.tag.merge(&y.tag)?;
            let dist = x
                .dist
                .convolve(&y.dist, cap, seed::derive(seed, &[i as u64, j as u64]))?;
            out.push(TaggedDistribution { dist, tag });
        }
    }
    Ok(out.into_iter().collect())
}

/// A pruning operator over distribution sets.
pub trait Pruner: Sync {
    fn prune(&self, set: DistributionSet) -> Result<DistributionSet>;
}

/// Keeps every member. Used to run the engine without pruning.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoPrune;

impl Pruner for NoPrune {
    fn prune(&self, set: DistributionSet) -> Result<DistributionSet> {
        Ok(set)
    }
}

/// Removes every ESR-dominated member, comparing CDFs on a fixed grid.
#[derive(Debug, Clone)]
pub struct EsrPrune {
    pub grid: CdfGrid,
}

impl EsrPrune {
    pub fn new(grid: CdfGrid) -> Self {
        Self { grid }
    }
}

impl Pruner for EsrPrune {
    fn prune(&self, set: DistributionSet) -> Result<DistributionSet> {
        esr_prune(set, &self.grid)
    }
}

/// ESR pruning by repeated maximal-element extraction.
///
/// Take the first remaining member, replace it by any later member that
/// dominates it, then drop it and everything it dominates from the working
/// set and keep it. Survivors come out in extraction order.
pub fn esr_prune(set: DistributionSet, grid: &CdfGrid) -> Result<DistributionSet> {
    if set.len() <= 1 {
        return Ok(set);
    }
    let cdfs = set
        .members
        .par_iter()
        .map(|m| GridCdf::new(&m.dist, grid))
        .collect::<Result<Vec<_>>>()?;
    let keep = prune_indices(&cdfs);
    let mut slots: Vec<Option<TaggedDistribution>> = set.members.into_iter().map(Some).collect();
    Ok(DistributionSet {
        members: keep
            .into_iter()
            .map(|k| slots[k].take().expect("kept once"))
            .collect(),
    })
}

/// Indices of the non-dominated entries of `cdfs`, in extraction order.
pub fn prune_indices(cdfs: &[GridCdf]) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..cdfs.len()).collect();
    let mut keep = Vec::new();
    while let Some(&first) = remaining.first() {
        let mut best = first;
        for &j in &remaining {
            if cdfs[j].dominates(&cdfs[best]) {
                best = j;
            }
        }
        let drop: Vec<bool> = remaining
            .par_iter()
            .map(|&j| j == best || cdfs[best].dominates(&cdfs[j]))
            .collect();
        let mut it = drop.into_iter();
        remaining.retain(|_| !it.next().expect("same length"));
        keep.push(best);
    }
    keep
}

/// Left fold of cross-sums with `prune` applied to the first set and after
/// every pairwise cross-sum.
pub fn prune_and_cross_sum(
    sets: &[DistributionSet],
    prune: &dyn Pruner,
    cap: Option<usize>,
    seed: u64,
) -> Result<DistributionSet> {
    let Some((first, rest)) = sets.split_first() else {
        return Ok(DistributionSet::new());
    };
    let mut acc = prune.prune(first.clone())?;
    for (k, next) in rest.iter().enumerate() {
        acc = prune.prune(cross_sum(&acc, next, cap, seed::derive(seed, &[k as u64]))?)?;
    }
    Ok(acc)
}
