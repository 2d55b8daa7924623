//! Multi-objective coordination graphs as bipartite agent/factor graphs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type AgentId = usize;
pub type FactorId = usize;

/// The agents a local payoff factor depends on, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorScope {
    pub id: FactorId,
    agents: Vec<AgentId>,
}

impl FactorScope {
    /// Build a scope from an arbitrary agent list. Sorts, rejects duplicates.
    /// Empty scopes are allowed here; only the problem constructor forbids them.
    pub fn new(id: FactorId, agents: impl IntoIterator<Item = AgentId>) -> Result<Self> {
        let mut agents: Vec<AgentId> = agents.into_iter().collect();
        agents.sort_unstable();
        if let Some(w) = agents.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateAgent {
                agent: w[0],
                factor: id,
            });
        }
        Ok(Self { id, agents })
    }

    pub fn agents(&self) -> &[AgentId] {
        &self.agents
    }

    pub fn contains(&self, agent: AgentId) -> bool {
        self.agents.binary_search(&agent).is_ok()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

/// One action per agent of a scope, in scope order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocalJointAction {
    pub agents: Vec<AgentId>,
    pub actions: Vec<usize>,
}

impl LocalJointAction {
    pub fn empty() -> Self {
        Self {
            agents: Vec::new(),
            actions: Vec::new(),
        }
    }

    pub fn get(&self, agent: AgentId) -> Option<usize> {
        self.agents
            .binary_search(&agent)
            .ok()
            .map(|pos| self.actions[pos])
    }

    pub fn to_partial(&self) -> PartialJointAction {
        PartialJointAction(
            self.agents
                .iter()
                .copied()
                .zip(self.actions.iter().copied())
                .collect(),
        )
    }

    /// Restrict a (possibly larger) assignment to the given agents.
    pub fn project(assign: &PartialJointAction, agents: &[AgentId]) -> Option<Self> {
        let actions = agents
            .iter()
            .map(|a| assign.get(*a))
            .collect::<Option<Vec<_>>>()?;
        Some(Self {
            agents: agents.to_vec(),
            actions,
        })
    }
}

/// Mixed-radix position of a local action among all local actions of its
/// agents (last agent varies fastest), matching `enumerate_local_actions`.
pub fn local_action_index(actions: &[usize], counts: &[usize]) -> usize {
    actions
        .iter()
        .zip(counts)
        .fold(0, |acc, (&a, &c)| acc * c + a)
}

/// Agent-to-action assignments carried as tags through elimination.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartialJointAction(BTreeMap<AgentId, usize>);

impl PartialJointAction {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, agent: AgentId) -> Option<usize> {
        self.0.get(&agent).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (AgentId, usize)> + '_ {
        self.0.iter().map(|(a, b)| (*a, *b))
    }

    /// Assign an action; errors if the agent already has a different one.
    pub fn assign(&mut self, agent: AgentId, action: usize) -> Result<()> {
        match self.0.insert(agent, action) {
            Some(prev) if prev != action => {
                self.0.insert(agent, prev);
                Err(Error::TagConflict {
                    agent,
                    left: prev,
                    right: action,
                })
            }
            _ => Ok(()),
        }
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        let (mut out, smaller) = if self.len() >= other.len() {
            (self.clone(), other)
        } else {
            (other.clone(), self)
        };
        for (agent, action) in smaller.iter() {
            out.assign(agent, action)?;
        }
        Ok(out)
    }

    /// Dense joint action if every agent in `0..n` is assigned exactly once.
    pub fn to_full(&self, n_agents: usize) -> Option<Vec<usize>> {
        if self.0.len() != n_agents {
            return None;
        }
        (0..n_agents).map(|a| self.get(a)).collect()
    }
}

impl FromIterator<(AgentId, usize)> for PartialJointAction {
    fn from_iter<T: IntoIterator<Item = (AgentId, usize)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Bipartite graph of agents and payoff factors.
///
/// Agent indices stay those of the original problem; eliminated agents are
/// marked inactive rather than renumbered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinationGraph {
    action_counts: Vec<usize>,
    active: Vec<bool>,
    factors: Vec<FactorScope>,
    edges: BTreeSet<(AgentId, FactorId)>,
    next_factor: FactorId,
}

impl CoordinationGraph {
    pub fn new(action_counts: Vec<usize>, scopes: &[Vec<AgentId>]) -> Result<Self> {
        let n = action_counts.len();
        if let Some(agent) = action_counts.iter().position(|&c| c == 0) {
            return Err(Error::NoActions(agent));
        }
        let mut factors = Vec::with_capacity(scopes.len());
        for (id, scope) in scopes.iter().enumerate() {
            if scope.is_empty() {
                return Err(Error::EmptyScope(id));
            }
            if let Some(&agent) = scope.iter().find(|&&a| a >= n) {
                return Err(Error::AgentOutOfRange { agent, n_agents: n });
            }
            factors.push(FactorScope::new(id, scope.iter().copied())?);
        }
        let mut covered = vec![false; n];
        for f in &factors {
            for &a in f.agents() {
                covered[a] = true;
            }
        }
        if let Some(agent) = covered.iter().position(|c| !c) {
            return Err(Error::UncoveredAgent(agent));
        }
        let edges = edges_of(&factors);
        Ok(Self {
            active: vec![true; n],
            next_factor: factors.len(),
            action_counts,
            factors,
            edges,
        })
    }

    /// Number of agents in the original problem.
    pub fn n_agents_total(&self) -> usize {
        self.action_counts.len()
    }

    /// Number of agents not yet eliminated.
    pub fn n_agents(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn agents(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.active
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| i)
    }

    pub fn is_active(&self, agent: AgentId) -> bool {
        self.active.get(agent).copied().unwrap_or(false)
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn action_count(&self, agent: AgentId) -> usize {
        self.action_counts[agent]
    }

    pub fn factors(&self) -> &[FactorScope] {
        &self.factors
    }

    pub fn factor(&self, id: FactorId) -> Option<&FactorScope> {
        self.factors.iter().find(|f| f.id == id)
    }

    pub fn edges(&self) -> &BTreeSet<(AgentId, FactorId)> {
        &self.edges
    }

    fn check_agent(&self, agent: AgentId) -> Result<()> {
        if agent >= self.action_counts.len() {
            return Err(Error::AgentOutOfRange {
                agent,
                n_agents: self.action_counts.len(),
            });
        }
        if !self.active[agent] {
            return Err(Error::UnknownAgent(agent));
        }
        Ok(())
    }

    /// Neighbouring agents and factors of `agent`.
    pub fn neighbors(&self, agent: AgentId) -> Result<(BTreeSet<AgentId>, BTreeSet<FactorId>)> {
        self.check_agent(agent)?;
        let mut agents = BTreeSet::new();
        let mut factors = BTreeSet::new();
        for f in self.factors.iter().filter(|f| f.contains(agent)) {
            factors.insert(f.id);
            agents.extend(f.agents().iter().copied().filter(|&a| a != agent));
        }
        Ok((agents, factors))
    }

    /// All local joint actions over `agents`, lexicographic with the last agent
    /// varying fastest. The empty agent list yields the single empty action.
    pub fn enumerate_local_actions(&self, agents: &[AgentId]) -> Result<Vec<LocalJointAction>> {
        let mut counts = Vec::with_capacity(agents.len());
        for &a in agents {
            if a >= self.action_counts.len() {
                return Err(Error::AgentOutOfRange {
                    agent: a,
                    n_agents: self.action_counts.len(),
                });
            }
            counts.push(self.action_counts[a]);
        }
        Ok(product(&counts)
            .into_iter()
            .map(|actions| LocalJointAction {
                agents: agents.to_vec(),
                actions,
            })
            .collect())
    }

    /// Remove `agent` and its factors, adding one factor over `new_scope`.
    ///
    /// A new factor over the empty scope absorbs any existing empty-scope
    /// factors, so eliminating every agent always leaves exactly one factor.
    pub fn apply_elimination(&self, agent: AgentId, new_scope: &BTreeSet<AgentId>) -> Result<Self> {
        self.check_agent(agent)?;
        let (n_i, _) = self.neighbors(agent)?;
        if &n_i != new_scope {
            return Err(Error::InvalidOrder(format!(
                "new scope {new_scope:?} is not the neighbourhood {n_i:?} of agent {agent}"
            )));
        }
        let absorb_empty = new_scope.is_empty();
        let mut factors: Vec<FactorScope> = self
            .factors
            .iter()
            .filter(|f| !f.contains(agent) && !(absorb_empty && f.is_empty()))
            .cloned()
            .collect();
        factors.push(FactorScope::new(
            self.next_factor,
            new_scope.iter().copied(),
        )?);
        let mut active = self.active.clone();
        active[agent] = false;
        Ok(Self {
            action_counts: self.action_counts.clone(),
            active,
            edges: edges_of(&factors),
            factors,
            next_factor: self.next_factor + 1,
        })
    }

    /// Factor ids touched when eliminating `agent`: its own factors, plus the
    /// empty-scope factors when its neighbourhood is empty.
    pub fn elimination_factors(
        &self,
        agent: AgentId,
    ) -> Result<(BTreeSet<AgentId>, BTreeSet<FactorId>)> {
        let (n_i, mut f_i) = self.neighbors(agent)?;
        if n_i.is_empty() {
            f_i.extend(self.factors.iter().filter(|f| f.is_empty()).map(|f| f.id));
        }
        Ok((n_i, f_i))
    }

    /// Greedy order: repeatedly eliminate the agent with the fewest current
    /// neighbours, ties broken by lowest index.
    pub fn default_order(&self) -> Vec<AgentId> {
        let mut g = self.clone();
        let mut order = Vec::with_capacity(g.n_agents());
        while g.n_agents() > 0 {
            let (agent, n_i) = g
                .agents()
                .map(|a| (a, g.neighbors(a).expect("active agent").0))
                .min_by_key(|(a, n)| (n.len(), *a))
                .expect("non-empty");
            g = g.apply_elimination(agent, &n_i).expect("valid elimination");
            order.push(agent);
        }
        order
    }

    /// Check that `order` is a permutation of the active agents.
    pub fn validate_order(&self, order: &[AgentId]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &a in order {
            if !self.is_active(a) {
                return Err(Error::InvalidOrder(format!(
                    "agent {a} is not in the graph"
                )));
            }
            if !seen.insert(a) {
                return Err(Error::InvalidOrder(format!("agent {a} appears twice")));
            }
        }
        if seen.len() != self.n_agents() {
            return Err(Error::InvalidOrder(format!(
                "{} of {} agents listed",
                seen.len(),
                self.n_agents()
            )));
        }
        Ok(())
    }

    /// Local action counts for a list of agents.
    pub fn counts_of(&self, agents: &[AgentId]) -> Vec<usize> {
        agents.iter().map(|&a| self.action_counts[a]).collect()
    }

    /// Total number of full joint actions, saturating.
    pub fn joint_action_count(&self) -> u128 {
        self.action_counts
            .iter()
            .fold(1u128, |acc, &c| acc.saturating_mul(c as u128))
    }
}

fn edges_of(factors: &[FactorScope]) -> BTreeSet<(AgentId, FactorId)> {
    factors
        .iter()
        .flat_map(|f| f.agents().iter().map(move |&a| (a, f.id)))
        .collect()
}

/// Cartesian product of `0..counts[k]`, last position fastest.
pub fn product(counts: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = counts.iter().product();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let mut cur = vec![0; counts.len()];
    loop {
        out.push(cur.clone());
        let mut k = counts.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            cur[k] += 1;
            if cur[k] < counts[k] {
                break;
            }
            cur[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ring() -> CoordinationGraph {
        CoordinationGraph::new(
            vec![5; 4],
            &[vec![0, 1], vec![1, 2], vec![2, 3], vec![0, 3]],
        )
        .unwrap()
    }

    fn scope_sets(g: &CoordinationGraph) -> Vec<Vec<AgentId>> {
        let mut s: Vec<_> = g.factors().iter().map(|f| f.agents().to_vec()).collect();
        s.sort();
        s
    }

    #[test]
    fn ring_has_eight_edges() {
        let g = ring();
        assert_eq!(g.n_agents(), 4);
        assert_eq!(g.factors().len(), 4);
        assert_eq!(g.edges().len(), 8);
    }

    #[test]
    fn singleton_graph() {
        let g = CoordinationGraph::new(vec![2], &[vec![0]]).unwrap();
        assert_eq!(
            (g.n_agents(), g.factors().len(), g.edges().len()),
            (1, 1, 1)
        );
        let (n, f) = g.neighbors(0).unwrap();
        assert!(n.is_empty());
        assert_eq!(f, BTreeSet::from([0]));
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            CoordinationGraph::new(vec![2, 2], &[vec![0, 5]]),
            Err(Error::AgentOutOfRange { agent: 5, .. })
        ));
        assert!(matches!(
            CoordinationGraph::new(vec![2, 2], &[vec![0]]),
            Err(Error::UncoveredAgent(1))
        ));
        assert!(matches!(
            CoordinationGraph::new(vec![2], &[vec![]]),
            Err(Error::EmptyScope(0))
        ));
        assert!(matches!(
            CoordinationGraph::new(vec![2, 2], &[vec![0, 1, 0]]),
            Err(Error::DuplicateAgent { agent: 0, .. })
        ));
    }

    #[test]
    fn neighbours() {
        let (n, f) = ring().neighbors(0).unwrap();
        assert_eq!(f, BTreeSet::from([0, 3]));
        assert_eq!(n, BTreeSet::from([1, 3]));

        let chain = CoordinationGraph::new(vec![2; 3], &[vec![0, 1], vec![1, 2]]).unwrap();
        let (n, f) = chain.neighbors(1).unwrap();
        assert_eq!(f, BTreeSet::from([0, 1]));
        assert_eq!(n, BTreeSet::from([0, 2]));
        assert!(chain.neighbors(7).is_err());
    }

    #[test]
    fn enumerate() {
        let g = CoordinationGraph::new(vec![2, 2], &[vec![0, 1]]).unwrap();
        let acts: Vec<_> = g
            .enumerate_local_actions(&[0, 1])
            .unwrap()
            .into_iter()
            .map(|a| a.actions)
            .collect();
        assert_eq!(acts, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        let empty = g.enumerate_local_actions(&[]).unwrap();
        assert_eq!(empty, vec![LocalJointAction::empty()]);
        assert_eq!(ring().enumerate_local_actions(&[0]).unwrap().len(), 5);
    }

    #[test]
    fn eliminations() {
        let chain = CoordinationGraph::new(vec![2; 3], &[vec![0, 1], vec![1, 2]]).unwrap();
        let (n, _) = chain.neighbors(1).unwrap();
        let g = chain.apply_elimination(1, &n).unwrap();
        assert_eq!(scope_sets(&g), vec![vec![0, 2]]);

        let single = CoordinationGraph::new(vec![2], &[vec![0]]).unwrap();
        let g = single.apply_elimination(0, &BTreeSet::new()).unwrap();
        assert_eq!(g.n_agents(), 0);
        assert_eq!(scope_sets(&g), vec![Vec::<usize>::new()]);
        assert!(matches!(
            g.apply_elimination(0, &BTreeSet::new()),
            Err(Error::UnknownAgent(0))
        ));

        let r = ring();
        let (n, _) = r.neighbors(0).unwrap();
        let g = r.apply_elimination(0, &n).unwrap();
        assert_eq!(scope_sets(&g), vec![vec![1, 2], vec![1, 3], vec![2, 3]]);
    }

    #[test]
    fn wrong_new_scope_rejected() {
        let r = ring();
        assert!(r.apply_elimination(0, &BTreeSet::from([1])).is_err());
    }

    #[test]
    fn disconnected_components_end_in_one_factor() {
        let g = CoordinationGraph::new(vec![2, 2], &[vec![0], vec![1]]).unwrap();
        let g = g.apply_elimination(0, &BTreeSet::new()).unwrap();
        let g = g.apply_elimination(1, &BTreeSet::new()).unwrap();
        assert_eq!(g.factors().len(), 1);
        assert!(g.factors()[0].is_empty());
    }

    #[test]
    fn default_order_prefers_few_neighbours() {
        let star =
            CoordinationGraph::new(vec![2; 4], &[vec![0, 1], vec![0, 2], vec![0, 3]]).unwrap();
        let order = star.default_order();
        assert_eq!(order[0], 1);
        star.validate_order(&order).unwrap();
        assert!(star.validate_order(&[0, 1, 2]).is_err());
        assert!(star.validate_order(&[0, 1, 2, 2]).is_err());
    }

    #[test]
    fn tag_merge_conflicts() {
        let a: PartialJointAction = [(0, 1)].into_iter().collect();
        let b: PartialJointAction = [(0, 2)].into_iter().collect();
        assert!(matches!(
            a.merge(&b),
            Err(Error::TagConflict { agent: 0, .. })
        ));
        let c: PartialJointAction = [(0, 1), (3, 0)].into_iter().collect();
        assert_eq!(a.merge(&c).unwrap(), c);
    }

    fn arb_graph() -> impl Strategy<Value = CoordinationGraph> {
        (1usize..7)
            .prop_flat_map(|n| {
                let scopes =
                    prop::collection::vec(prop::collection::btree_set(0..n, 1..=n.min(3)), 1..8);
                (Just(n), prop::collection::vec(1usize..4, n), scopes)
            })
            .prop_filter_map("every agent covered", |(n, counts, scopes)| {
                let mut scopes: Vec<Vec<usize>> = scopes
                    .into_iter()
                    .map(|s| s.into_iter().collect())
                    .collect();
                for a in 0..n {
                    if !scopes.iter().any(|s| s.contains(&a)) {
                        scopes.push(vec![a]);
                    }
                }
                CoordinationGraph::new(counts, &scopes).ok()
            })
    }

    proptest! {
        #[test]
        fn neighbourhood_invariants(g in arb_graph()) {
            for i in g.agents() {
                let (n, f) = g.neighbors(i).unwrap();
                prop_assert!(!n.contains(&i));
                for id in f {
                    prop_assert!(g.factor(id).unwrap().contains(i));
                }
            }
        }

        #[test]
        fn elimination_shrinks_graph(g in arb_graph(), pick in any::<prop::sample::Index>()) {
            let mut g = g;
            let agents: Vec<_> = g.agents().collect();
            let mut order = agents.clone();
            order.rotate_left(pick.index(agents.len()));
            for i in order {
                let (n, f) = g.elimination_factors(i).unwrap();
                let before = (g.n_agents(), g.factors().len());
                g = g.apply_elimination(i, &n).unwrap();
                prop_assert_eq!(g.n_agents(), before.0 - 1);
                prop_assert_eq!(g.factors().len(), before.1 + 1 - f.len());
                prop_assert!(g.factors().iter().all(|s| !s.contains(i)));
            }
            prop_assert_eq!(g.factors().len(), 1);
            prop_assert!(g.factors()[0].is_empty());
        }

        #[test]
        fn enumeration_is_complete(counts in prop::collection::vec(1usize..4, 1..5)) {
            let n = counts.len();
            let g = CoordinationGraph::new(counts.clone(), &[(0..n).collect()]).unwrap();
            let agents: Vec<_> = (0..n).collect();
            let acts = g.enumerate_local_actions(&agents).unwrap();
            prop_assert_eq!(acts.len(), counts.iter().product::<usize>());
            let uniq: BTreeSet<_> = acts.iter().map(|a| a.actions.clone()).collect();
            prop_assert_eq!(uniq.len(), acts.len());
            for (k, a) in acts.iter().enumerate() {
                prop_assert_eq!(local_action_index(&a.actions, &counts), k);
            }
        }
    }
}
