//! Brute-force ground truth for the elimination solver.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{CdfGrid, GridCdf, ReturnDistribution};
use crate::engine::{DistributionProvider, EsrMember, EsrSolution};
use crate::error::{Error, Result};
use crate::graph::{product, CoordinationGraph, LocalJointAction};
use crate::pruning::prune_indices;

pub const DEFAULT_JOINT_ACTION_LIMIT: u128 = 1_000_000;

/// Exact return distribution of every full joint action, keyed by action.
pub fn enumerate_joint_returns(
    graph: &CoordinationGraph,
    provider: &dyn DistributionProvider,
    cap: Option<usize>,
    limit: u128,
) -> Result<BTreeMap<Vec<usize>, ReturnDistribution>> {
    let total = graph.joint_action_count();
    if total > limit {
        return Err(Error::OracleLimit {
            joint_actions: total,
            limit,
        });
    }
    let mut cache: BTreeMap<(usize, Vec<usize>), ReturnDistribution> = BTreeMap::new();
    for s in graph.factors() {
        for a in graph.enumerate_local_actions(s.agents())? {
            let d = provider.distribution(s, &a)?;
            cache.insert((s.id, a.actions), d);
        }
    }
    let joint = product(graph.action_counts());
    let dists = joint
        .par_iter()
        .enumerate()
        .map(|(k, ja)| {
            let mut acc: Option<ReturnDistribution> = None;
            for (e, s) in graph.factors().iter().enumerate() {
                let la: Vec<usize> = s.agents().iter().map(|&x| ja[x]).collect();
                let d = &cache[&(s.id, la)];
                acc = Some(match acc {
                    None => d.clone(),
                    Some(a) => a.convolve(d, cap, crate::seed::derive(k as u64, &[e as u64]))?,
                });
            }
            acc.ok_or(Error::EmptyDistribution)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(joint.into_iter().zip(dists).collect())
}

/// ESR set computed directly over all joint actions.
pub fn brute_force_esr_set(
    v: &BTreeMap<Vec<usize>, ReturnDistribution>,
    grid: &CdfGrid,
) -> Result<EsrSolution> {
    let entries: Vec<(&Vec<usize>, &ReturnDistribution)> = v.iter().collect();
    let cdfs = entries
        .par_iter()
        .map(|(_, d)| GridCdf::new(d, grid))
        .collect::<Result<Vec<_>>>()?;
    let mut keep = prune_indices(&cdfs);
    keep.sort_unstable();
    Ok(EsrSolution {
        members: keep
            .into_iter()
            .map(|k| EsrMember {
                joint_action: entries[k].0.clone(),
                dist: entries[k].1.clone(),
                expected: entries[k].1.expected_value(),
            })
            .collect(),
    })
}

/// Unit-spaced lattice covering every partial sum of factor returns, for
/// integer-valued providers. On such a lattice grid dominance coincides with
/// dominance over all of R^d, for every factor and every partial sum.
pub fn covering_integer_grid(
    graph: &CoordinationGraph,
    provider: &dyn DistributionProvider,
) -> Result<CdfGrid> {
    let mut lo: Option<Vec<f64>> = None;
    let mut hi: Option<Vec<f64>> = None;
    for s in graph.factors() {
        let mut fmin: Option<Vec<f64>> = None;
        let mut fmax: Option<Vec<f64>> = None;
        for a in graph.enumerate_local_actions(s.agents())? {
            let d = provider.distribution(s, &a)?;
            for r in d.rows() {
                let mn = fmin.get_or_insert_with(|| r.to_vec());
                let mx = fmax.get_or_insert_with(|| r.to_vec());
                for j in 0..r.len() {
                    mn[j] = mn[j].min(r[j]);
                    mx[j] = mx[j].max(r[j]);
                }
            }
        }
        let (fmin, fmax) = (
            fmin.ok_or(Error::EmptyDistribution)?,
            fmax.ok_or(Error::EmptyDistribution)?,
        );
        let l = lo.get_or_insert_with(|| vec![0.0; fmin.len()]);
        let h = hi.get_or_insert_with(|| vec![0.0; fmax.len()]);
        for j in 0..fmin.len() {
            l[j] += fmin[j].min(0.0);
            h[j] += fmax[j].max(0.0);
        }
    }
    let lo: Vec<i64> = lo
        .ok_or(Error::EmptyDistribution)?
        .iter()
        .map(|x| x.floor() as i64 - 1)
        .collect();
    let hi: Vec<i64> = hi
        .ok_or(Error::EmptyDistribution)?
        .iter()
        .map(|x| x.ceil() as i64 + 1)
        .collect();
    CdfGrid::integer_lattice(lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub matched: usize,
    pub missing_from_dmove: Vec<Vec<usize>>,
    pub extra_in_dmove: Vec<Vec<usize>>,
    pub max_cdf_gap: f64,
    /// Same joint actions and identical grid CDFs.
    pub exact: bool,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Match members by joint action and measure CDF gaps between matches.
pub fn compare(
    dmove_out: &EsrSolution,
    dmove_grid: &CdfGrid,
    oracle_out: &EsrSolution,
    oracle_grid: &CdfGrid,
) -> Result<ComparisonReport> {
    if dmove_grid != oracle_grid {
        return Err(Error::GridMismatch);
    }
    let grid = dmove_grid;
    let mut matched = 0;
    let mut missing = Vec::new();
    let mut gap: f64 = 0.0;
    for o in &oracle_out.members {
        match dmove_out.find(&o.joint_action) {
            Some(d) => {
                matched += 1;
                gap = gap.max(GridCdf::new(&d.dist, grid)?.sup_gap(&GridCdf::new(&o.dist, grid)?));
            }
            None => missing.push(o.joint_action.clone()),
        }
    }
    let extra: Vec<Vec<usize>> = dmove_out
        .members
        .iter()
        .filter(|d| oracle_out.find(&d.joint_action).is_none())
        .map(|d| d.joint_action.clone())
        .collect();
    Ok(ComparisonReport {
        exact: missing.is_empty() && extra.is_empty() && gap == 0.0,
        matched,
        missing_from_dmove: missing,
        extra_in_dmove: extra,
        max_cdf_gap: gap,
    })
}

/// Exact distribution of one joint action, summing factor distributions.
pub fn replay_joint_action(
    graph: &CoordinationGraph,
    provider: &dyn DistributionProvider,
    joint_action: &[usize],
) -> Result<ReturnDistribution> {
    let mut acc: Option<ReturnDistribution> = None;
    for s in graph.factors() {
        let la = LocalJointAction {
            agents: s.agents().to_vec(),
            actions: s.agents().iter().map(|&x| joint_action[x]).collect(),
        };
        let d = provider.distribution(s, &la)?;
        acc = Some(match acc {
            None => d,
            Some(a) => a.convolve(&d, None, 0)?,
        });
    }
    acc.ok_or(Error::EmptyDistribution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::ReturnVector;
    use crate::engine::{dmove, TableProvider};

    fn pm(v: &[f64]) -> ReturnDistribution {
        ReturnDistribution::point_mass(&ReturnVector(v.to_vec())).unwrap()
    }

    fn two_by_two() -> (CoordinationGraph, TableProvider) {
        let g = CoordinationGraph::new(vec![2, 2], &[vec![0], vec![0, 1]]).unwrap();
        let mut p = TableProvider::default();
        p.insert(0, vec![0], pm(&[1.0, 0.0]));
        p.insert(0, vec![1], pm(&[0.0, 1.0]));
        for (a, v) in [
            ([0, 0], [0.0, 0.0]),
            ([0, 1], [2.0, 0.0]),
            ([1, 0], [0.0, 2.0]),
            ([1, 1], [1.0, 1.0]),
        ] {
            p.insert(1, a.to_vec(), pm(&v));
        }
        (g, p)
    }

    #[test]
    fn enumerates_sums() {
        let (g, p) = two_by_two();
        let v = enumerate_joint_returns(&g, &p, None, DEFAULT_JOINT_ACTION_LIMIT).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v[&vec![0, 1]], pm(&[3.0, 0.0]));
        assert_eq!(v[&vec![1, 0]], pm(&[0.0, 3.0]));
        assert_eq!(v[&vec![1, 1]], pm(&[1.0, 2.0]));

        let g1 = CoordinationGraph::new(vec![1], &[vec![0]]).unwrap();
        let mut p1 = TableProvider::default();
        p1.insert(0, vec![0], pm(&[4.0, 4.0]));
        let v1 = enumerate_joint_returns(&g1, &p1, None, 10).unwrap();
        assert_eq!(v1[&vec![0]], pm(&[4.0, 4.0]));
    }

    #[test]
    fn refuses_large_instances() {
        let g = CoordinationGraph::new(vec![5; 4], &[vec![0, 1, 2, 3]]).unwrap();
        assert_eq!(g.joint_action_count(), 625);
        let prov = |_: &crate::graph::FactorScope, _: &LocalJointAction| Ok(pm(&[0.0]));
        assert!(matches!(
            enumerate_joint_returns(&g, &prov, None, 100),
            Err(Error::OracleLimit { .. })
        ));
        assert_eq!(
            enumerate_joint_returns(&g, &prov, None, 1000)
                .unwrap()
                .len(),
            625
        );
    }

    #[test]
    fn identical_distributions_all_retained() {
        let v: BTreeMap<Vec<usize>, ReturnDistribution> =
            (0..4).map(|a| (vec![a], pm(&[1.0, 1.0]))).collect();
        let g = CdfGrid::integer_lattice(vec![0, 0], vec![3, 3]).unwrap();
        assert_eq!(brute_force_esr_set(&v, &g).unwrap().len(), 4);
    }

    #[test]
    fn compare_reports() {
        let (g, p) = two_by_two();
        let grid = covering_integer_grid(&g, &p).unwrap();
        let v = enumerate_joint_returns(&g, &p, None, DEFAULT_JOINT_ACTION_LIMIT).unwrap();
        let oracle = brute_force_esr_set(&v, &grid).unwrap();
        let dm = dmove(&g, &p, None, &grid, None, 0).unwrap();
        let r = compare(&dm, &grid, &oracle, &grid).unwrap();
        assert!(r.exact);
        assert_eq!(r.matched, oracle.len());
        assert_eq!(r.max_cdf_gap, 0.0);

        let mut corrupted = dm.clone();
        corrupted.members.pop();
        let r = compare(&corrupted, &grid, &oracle, &grid).unwrap();
        assert!(!r.exact);
        assert_eq!(r.missing_from_dmove.len(), 1);
        assert_eq!(r.matched + r.missing_from_dmove.len(), oracle.len());

        let other = CdfGrid::integer_lattice(vec![-1, -1], vec![9, 9]).unwrap();
        assert!(matches!(
            compare(&dm, &other, &oracle, &grid),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn replay_matches_enumeration() {
        let (g, p) = two_by_two();
        let v = enumerate_joint_returns(&g, &p, None, 100).unwrap();
        for (ja, d) in &v {
            assert_eq!(&replay_joint_action(&g, &p, ja).unwrap(), d);
        }
    }
}
