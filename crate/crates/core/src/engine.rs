//! Return-distribution set factors and the elimination solver.
//!
//! Each payoff factor becomes a table from local joint actions to sets of
//! tagged distributions. Agents are eliminated one at a time; every
//! elimination replaces the agent's factors by one factor over its
//! neighbours whose entries are local ESR sets. Tags record the actions of
//! eliminated agents, so the final factor directly yields joint actions.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::distribution::{CdfGrid, ReturnDistribution, ReturnVector};
use crate::error::{Error, Result};
use crate::graph::{
    local_action_index, AgentId, CoordinationGraph, FactorId, FactorScope, LocalJointAction,
};
use crate::pruning::{
    prune_and_cross_sum, DistributionSet, EsrPrune, NoPrune, Pruner, TaggedDistribution,
};
use crate::seed;

/// Source of the local return distribution of a factor under a local action.
pub trait DistributionProvider: Sync {
    fn distribution(
        &self,
        factor: &FactorScope,
        action: &LocalJointAction,
    ) -> Result<ReturnDistribution>;
}

impl<F> DistributionProvider for F
where
    F: Fn(&FactorScope, &LocalJointAction) -> Result<ReturnDistribution> + Sync,
{
    fn distribution(
        &self,
        factor: &FactorScope,
        action: &LocalJointAction,
    ) -> Result<ReturnDistribution> {
        self(factor, action)
    }
}

/// Explicit table keyed by factor id and local action indices.
#[derive(Debug, Clone, Default)]
pub struct TableProvider {
    pub entries: BTreeMap<(FactorId, Vec<usize>), ReturnDistribution>,
}

impl TableProvider {
    pub fn insert(&mut self, factor: FactorId, actions: Vec<usize>, dist: ReturnDistribution) {
        self.entries.insert((factor, actions), dist);
    }
}

impl DistributionProvider for TableProvider {
    fn distribution(
        &self,
        factor: &FactorScope,
        action: &LocalJointAction,
    ) -> Result<ReturnDistribution> {
        self.entries
            .get(&(factor.id, action.actions.clone()))
            .cloned()
            .ok_or_else(|| Error::Provider {
                factor: factor.id,
                action: action.actions.clone(),
                reason: "no table entry".into(),
            })
    }
}

/// Map from every local joint action of `scope` to a distribution set.
#[derive(Debug, Clone)]
pub struct ReturnSetFactor {
    pub scope: FactorScope,
    counts: Vec<usize>,
    table: Vec<DistributionSet>,
}

impl ReturnSetFactor {
    pub fn entry(&self, actions: &[usize]) -> Option<&DistributionSet> {
        if actions.len() != self.counts.len()
            || actions.iter().zip(&self.counts).any(|(a, c)| a >= c)
        {
            return None;
        }
        self.table.get(local_action_index(actions, &self.counts))
    }

    pub fn entries(&self) -> &[DistributionSet] {
        &self.table
    }
}

/// All current factors together with the graph they live on.
#[derive(Debug, Clone)]
pub struct RsfCollection {
    pub factors: Vec<ReturnSetFactor>,
    pub graph: CoordinationGraph,
}

impl RsfCollection {
    pub fn factor(&self, id: FactorId) -> Option<&ReturnSetFactor> {
        self.factors.iter().find(|f| f.scope.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsrMember {
    pub joint_action: Vec<usize>,
    pub dist: ReturnDistribution,
    pub expected: ReturnVector,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EsrSolution {
    pub members: Vec<EsrMember>,
}

impl EsrSolution {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn find(&self, joint_action: &[usize]) -> Option<&EsrMember> {
        self.members.iter().find(|m| m.joint_action == joint_action)
    }
}

/// Solver settings: the three pruning stages, the per-convolution sample
/// cap (`None` keeps every pairwise sum) and the master seed for
/// subsampling.
pub struct Dmove {
    prune1: Box<dyn Pruner>,
    prune2: Box<dyn Pruner>,
    prune3: Box<dyn Pruner>,
    cap: Option<usize>,
    seed: u64,
}

impl Dmove {
    /// ESR pruning at every stage, exact convolutions.
    pub fn new(grid: CdfGrid) -> Self {
        Self {
            prune1: Box::new(EsrPrune::new(grid.clone())),
            prune2: Box::new(EsrPrune::new(grid.clone())),
            prune3: Box::new(EsrPrune::new(grid)),
            cap: None,
            seed: 0,
        }
    }

    /// No pruning anywhere; the result holds one member per joint action.
    pub fn unpruned() -> Self {
        Self {
            prune1: Box::new(NoPrune),
            prune2: Box::new(NoPrune),
            prune3: Box::new(NoPrune),
            cap: None,
            seed: 0,
        }
    }

    pub fn with_pruners(
        mut self,
        p1: Box<dyn Pruner>,
        p2: Box<dyn Pruner>,
        p3: Box<dyn Pruner>,
    ) -> Self {
        self.prune1 = p1;
        self.prune2 = p2;
        self.prune3 = p3;
        self
    }

    pub fn with_cap(mut self, cap: Option<usize>) -> Self {
        self.cap = cap;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Singleton-set factors, one per payoff factor of the graph.
    pub fn init_rsfs(
        &self,
        graph: &CoordinationGraph,
        provider: &dyn DistributionProvider,
    ) -> Result<RsfCollection> {
        init_rsfs(graph, provider)
    }

    /// Local ESR set of `agent` for one neighbour context `a_ni`.
    pub fn calculate_lesr(
        &self,
        f_i: &[&ReturnSetFactor],
        agent: AgentId,
        n_actions: usize,
        a_ni: &LocalJointAction,
        seed: u64,
    ) -> Result<DistributionSet> {
        let mut union = DistributionSet::new();
        for ai in 0..n_actions {
            let mut assign = a_ni.to_partial();
            assign.assign(agent, ai)?;
            let sets = f_i
                .iter()
                .map(|f| {
                    let local = LocalJointAction::project(&assign, f.scope.agents());
                    local
                        .as_ref()
                        .and_then(|l| f.entry(&l.actions))
                        .cloned()
                        .ok_or_else(|| Error::MissingEntry {
                            factor: f.scope.id,
                            action: local.map(|l| l.actions).unwrap_or_default(),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            let combined = prune_and_cross_sum(
                &sets,
                self.prune1.as_ref(),
                self.cap,
                seed::derive(seed, &[ai as u64]),
            )?;
            union.extend(combined.map_tags(|t| t.assign(agent, ai))?);
        }
        self.prune2.prune(union)
    }

    /// Eliminate `agent`, replacing its factors by one factor over its
    /// neighbours.
    pub fn eliminate(&self, f: &RsfCollection, agent: AgentId, seed: u64) -> Result<RsfCollection> {
        let graph = &f.graph;
        let (n_i, f_ids) = graph.elimination_factors(agent)?;
        let f_i: Vec<&ReturnSetFactor> = f_ids
            .iter()
            .map(|id| {
                f.factor(*id).ok_or(Error::MissingEntry {
                    factor: *id,
                    action: vec![],
                })
            })
            .collect::<Result<_>>()?;
        let scope_agents: Vec<AgentId> = n_i.iter().copied().collect();
        let contexts = graph.enumerate_local_actions(&scope_agents)?;
        let n_actions = graph.action_count(agent);
        let table = contexts
            .par_iter()
            .enumerate()
            .map(|(k, ctx)| {
                self.calculate_lesr(&f_i, agent, n_actions, ctx, seed::derive(seed, &[k as u64]))
            })
            .collect::<Result<Vec<_>>>()?;
        let new_graph = graph.apply_elimination(agent, &n_i)?;
        let scope = new_graph
            .factors()
            .last()
            .cloned()
            .expect("new factor appended");
        let removed: BTreeSet<FactorId> = f_ids;
        let mut factors: Vec<ReturnSetFactor> = f
            .factors
            .iter()
            .filter(|r| !removed.contains(&r.scope.id))
            .cloned()
            .collect();
        factors.push(ReturnSetFactor {
            counts: new_graph.counts_of(scope.agents()),
            scope,
            table,
        });
        Ok(RsfCollection {
            factors,
            graph: new_graph,
        })
    }

    /// Run the full elimination. `order` defaults to the fewest-neighbours
    /// heuristic.
    pub fn solve(
        &self,
        graph: &CoordinationGraph,
        provider: &dyn DistributionProvider,
        order: Option<&[AgentId]>,
    ) -> Result<EsrSolution> {
        let order = match order {
            Some(o) => o.to_vec(),
            None => graph.default_order(),
        };
        graph.validate_order(&order)?;
        let mut f = self.init_rsfs(graph, provider)?;
        for (step, &agent) in order.iter().enumerate() {
            f = self.eliminate(&f, agent, seed::derive(self.seed, &[step as u64]))?;
        }
        self.finish(f, graph.n_agents_total())
    }

    fn finish(&self, f: RsfCollection, n_agents: usize) -> Result<EsrSolution> {
        let last = match f.factors.as_slice() {
            [only] if only.scope.is_empty() => only,
            _ => {
                return Err(Error::InvalidOrder(format!(
                    "{} factors remain after elimination",
                    f.factors.len()
                )))
            }
        };
        let set = self
            .prune3
            .prune(last.entry(&[]).cloned().unwrap_or_default())?;
        let members = set
            .into_members()
            .into_iter()
            .map(|TaggedDistribution { dist, tag }| {
                let joint_action = tag
                    .to_full(n_agents)
                    .ok_or_else(|| Error::InvalidOrder(format!("incomplete tag {tag:?}")))?;
                Ok(EsrMember {
                    joint_action,
                    expected: dist.expected_value(),
                    dist,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EsrSolution { members })
    }
}

/// Singleton-set factors, one per payoff factor of the graph, each entry
/// tagged with its local action.
pub fn init_rsfs(
    graph: &CoordinationGraph,
    provider: &dyn DistributionProvider,
) -> Result<RsfCollection> {
    let factors = graph
        .factors()
        .iter()
        .map(|scope| {
            let table = graph
                .enumerate_local_actions(scope.agents())?
                .par_iter()
                .map(|a| {
                    let dist = provider.distribution(scope, a).map_err(|e| match e {
                        e @ Error::Provider { .. } => e,
                        other => Error::Provider {
                            factor: scope.id,
                            action: a.actions.clone(),
                            reason: other.to_string(),
                        },
                    })?;
                    Ok(DistributionSet::singleton(dist, a.to_partial()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ReturnSetFactor {
                counts: graph.counts_of(scope.agents()),
                scope: scope.clone(),
                table,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RsfCollection {
        factors,
        graph: graph.clone(),
    })
}

/// ESR set with ESR pruning at every stage.
pub fn dmove(
    graph: &CoordinationGraph,
    provider: &dyn DistributionProvider,
    order: Option<&[AgentId]>,
    grid: &CdfGrid,
    cap: Option<usize>,
    seed: u64,
) -> Result<EsrSolution> {
    Dmove::new(grid.clone())
        .with_cap(cap)
        .with_seed(seed)
        .solve(graph, provider, order)
}
