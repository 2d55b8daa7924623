//! Experience collection and incremental flow training.
//!
//! The driver executes uniformly random joint actions, splits the reward into
//! per-factor vectors, stores them in one replay buffer per factor, and every
//! `t_inc` steps runs a fixed number of Adam steps on each factor's flow.
//! Trained flows then serve as the distribution provider for elimination.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{CdfGrid, ReturnDistribution};
use crate::engine::{DistributionProvider, Dmove, EsrSolution};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::flow::{fit_normalization, ActionEncoding, Adam, FlowConfig, FlowModel};
use crate::graph::{local_action_index, CoordinationGraph, FactorScope, LocalJointAction};
use crate::seed;

const TAG_INIT: u64 = 1;
const TAG_ACTION: u64 = 2;
const TAG_TRAIN: u64 = 3;
const TAG_PROVIDER: u64 = 4;
const TAG_SOLVE: u64 = 5;
pub(crate) const TAG_DUMP: u64 = 6;

pub const MANIFEST_VERSION: u32 = 1;

/// Bounded FIFO of `(reward vector, local action index)` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    dim: usize,
    rewards: Vec<f64>,
    actions: Vec<usize>,
    /// Slot of the oldest entry once the buffer has wrapped.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::Config(
                "replay buffer capacity and dimension must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            dim,
            rewards: Vec::new(),
            actions: Vec::new(),
            head: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, reward: &[f64], action: usize) -> Result<()> {
        if reward.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: reward.len(),
            });
        }
        if self.len() < self.capacity {
            self.rewards.extend_from_slice(reward);
            self.actions.push(action);
        } else {
            let h = self.head;
            self.rewards[h * self.dim..(h + 1) * self.dim].copy_from_slice(reward);
            self.actions[h] = action;
            self.head = (h + 1) % self.capacity;
        }
        Ok(())
    }

    /// Entry `k` in insertion order, oldest first.
    pub fn get(&self, k: usize) -> (&[f64], usize) {
        let slot = (self.head + k) % self.len();
        (
            &self.rewards[slot * self.dim..(slot + 1) * self.dim],
            self.actions[slot],
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        (0..self.len()).map(|k| self.get(k))
    }

    /// `k` uniform draws with replacement.
    pub fn sample_batch(&self, k: usize, seed: u64) -> Result<Vec<(Vec<f64>, usize)>> {
        self.sample_with(k, &mut seed::rng(seed))
    }

    pub fn sample_with(&self, k: usize, rng: &mut seed::Rng) -> Result<Vec<(Vec<f64>, usize)>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..k)
            .map(|_| {
                let (r, a) = self.get(rng.random_range(0..self.len()));
                (r.to_vec(), a)
            })
            .collect())
    }

    /// Stored rewards for one local action.
    pub fn rewards_for(&self, action: usize) -> Vec<Vec<f64>> {
        self.iter()
            .filter(|(_, a)| *a == action)
            .map(|(r, _)| r.to_vec())
            .collect()
    }
}

/// Learning hyperparameters. Field names follow the usual table of
/// defaults: `flows`, `lr`, `hidden`, `n`, `n_samples`, `t_inc`,
/// `buffer_size`, `steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub steps: u64,
    pub t_inc: u64,
    /// Samples drawn from each trained flow per local action to build the
    /// distribution provider.
    pub n: usize,
    /// Sample budget for CDF evaluation: the cross-sum cap during
    /// elimination and the size of learned-distribution dumps.
    pub n_samples: usize,
    pub buffer_size: usize,
    pub batch_size: usize,
    /// Adam steps per training increment.
    pub epoch_steps: usize,
    pub flows: usize,
    /// Only `adam` is supported.
    pub optimiser: String,
    pub lr: f64,
    /// Hidden units per layer of the scale and shift networks.
    pub hidden: usize,
    pub hidden_layers: usize,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            steps: 300_000,
            t_inc: 1_000,
            n: 500,
            n_samples: 2_000,
            buffer_size: 5_000_000,
            batch_size: 256,
            epoch_steps: 50,
            flows: 8,
            optimiser: "adam".into(),
            lr: 1e-3,
            hidden: 30,
            hidden_layers: 1,
            seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("steps", self.steps as usize),
            ("t_inc", self.t_inc as usize),
            ("n", self.n),
            ("n_samples", self.n_samples),
            ("buffer_size", self.buffer_size),
            ("batch_size", self.batch_size),
            ("epoch_steps", self.epoch_steps),
            ("flows", self.flows),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.optimiser.eq_ignore_ascii_case("adam") {
            return Err(Error::Config(format!(
                "unsupported optimiser {:?}",
                self.optimiser
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.t_inc > self.steps {
            log::warn!(
                "t_inc ({}) exceeds steps ({}); no training increment will run",
                self.t_inc,
                self.steps
            );
        }
        Ok(())
    }
}

/// Per-factor training state besides the model weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FactorState {
    optimizer: Adam,
    buffer: ReplayBuffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorEntry {
    pub factor: usize,
    pub scope: Vec<usize>,
    pub checkpoint: PathBuf,
    pub state: PathBuf,
}

/// Record of a learning run, sufficient to resume it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: LearnConfig,
    pub dim: usize,
    pub graph: CoordinationGraph,
    pub step: u64,
    pub increments: u64,
    pub normalized: bool,
    /// Paths relative to the manifest's directory.
    pub factors: Vec<FactorEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::parse(
                path,
                format!("unsupported manifest version {}", m.version),
            ));
        }
        Ok(m)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Collects experience from an environment and trains one flow per factor.
#[derive(Debug, Clone)]
pub struct Learner {
    cfg: LearnConfig,
    graph: CoordinationGraph,
    dim: usize,
    models: Vec<FlowModel>,
    states: Vec<FactorState>,
    step: u64,
    increments: u64,
    normalized: bool,
}

impl Learner {
    pub fn new(graph: CoordinationGraph, dim: usize, cfg: LearnConfig) -> Result<Self> {
        cfg.validate()?;
        let mut models = Vec::new();
        let mut states = Vec::new();
        for s in graph.factors() {
            let cond: usize = graph.counts_of(s.agents()).iter().product();
            let fc = FlowConfig {
                dim,
                cond_dim: cond,
                flows: cfg.flows,
                hidden_units: cfg.hidden,
                hidden_layers: cfg.hidden_layers,
            };
            let model = FlowModel::new(fc, seed::derive(cfg.seed, &[TAG_INIT, s.id as u64]))?;
            states.push(FactorState {
                optimizer: model.new_optimizer(cfg.lr),
                buffer: ReplayBuffer::new(cfg.buffer_size, dim)?,
            });
            models.push(model);
        }
        Ok(Self {
            cfg,
            graph,
            dim,
            models,
            states,
            step: 0,
            increments: 0,
            normalized: false,
        })
    }

    pub fn config(&self) -> &LearnConfig {
        &self.cfg
    }

    /// Raise the step target recorded in the manifest, for resumed runs.
    pub fn set_steps(&mut self, steps: u64) -> Result<()> {
        if steps < self.step {
            return Err(Error::Config(format!(
                "steps = {steps} is below the {} steps already taken",
                self.step
            )));
        }
        self.cfg.steps = steps;
        Ok(())
    }

    pub fn graph(&self) -> &CoordinationGraph {
        &self.graph
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn increments(&self) -> u64 {
        self.increments
    }

    pub fn models(&self) -> &[FlowModel] {
        &self.models
    }

    pub fn buffer(&self, factor: usize) -> &ReplayBuffer {
        &self.states[factor].buffer
    }

    /// Uniformly random joint action of step `step`.
    pub fn exploration_action(&self, step: u64) -> Vec<usize> {
        let mut rng = seed::rng_at(self.cfg.seed, &[TAG_ACTION, step]);
        self.graph
            .action_counts()
            .iter()
            .map(|&c| rng.random_range(0..c))
            .collect()
    }

    /// Continue collecting and training up to step `until` (1-based count
    /// of environment steps).
    pub fn run(&mut self, env: &dyn Environment, until: u64) -> Result<()> {
        if env.graph().factors().len() != self.graph.factors().len() || env.dim() != self.dim {
            return Err(Error::Config(
                "environment does not match the learner's graph".into(),
            ));
        }
        while self.step < until {
            let step = self.step + 1;
            let joint = self.exploration_action(step);
            let rewards = env.execute(&joint, step).map_err(|e| Error::Environment {
                step,
                reason: e.to_string(),
            })?;
            if rewards.len() != self.graph.factors().len() {
                return Err(Error::Environment {
                    step,
                    reason: format!(
                        "{} group rewards for {} factors",
                        rewards.len(),
                        self.graph.factors().len()
                    ),
                });
            }
            for ((s, r), st) in self
                .graph
                .factors()
                .iter()
                .zip(&rewards)
                .zip(&mut self.states)
            {
                if r.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Environment {
                        step,
                        reason: format!("non-finite reward for factor {}", s.id),
                    });
                }
                let local: Vec<usize> = s.agents().iter().map(|&a| joint[a]).collect();
                st.buffer.push(
                    r,
                    local_action_index(&local, &self.graph.counts_of(s.agents())),
                )?;
            }
            self.step = step;
            if step.is_multiple_of(self.cfg.t_inc) {
                self.train_increment()?;
            }
        }
        Ok(())
    }

    /// Fit and freeze the per-factor normalization from buffer contents.
    pub fn freeze_normalization(&mut self) -> Result<()> {
        if self.normalized {
            return Ok(());
        }
        for (m, st) in self.models.iter_mut().zip(&self.states) {
            let rows: Vec<Vec<f64>> = st.buffer.iter().map(|(r, _)| r.to_vec()).collect();
            m.norm = fit_normalization(&rows, self.dim)?;
        }
        self.normalized = true;
        Ok(())
    }

    fn train_increment(&mut self) -> Result<()> {
        self.freeze_normalization()?;
        let inc = self.increments;
        let cfg = &self.cfg;
        self.models
            .par_iter_mut()
            .zip(self.states.par_iter_mut())
            .enumerate()
            .try_for_each(|(e, (model, st))| -> Result<()> {
                let cond = model.config.cond_dim;
                for k in 0..cfg.epoch_steps {
                    let mut rng = seed::rng_at(cfg.seed, &[TAG_TRAIN, e as u64, inc, k as u64]);
                    let batch: Vec<(Vec<f64>, ActionEncoding)> = st
                        .buffer
                        .sample_with(cfg.batch_size, &mut rng)?
                        .into_iter()
                        .map(|(r, a)| Ok((r, ActionEncoding::new(a, cond)?)))
                        .collect::<Result<_>>()?;
                    model
                        .train_step(&batch, &mut st.optimizer)
                        .map_err(|err| match err {
                            Error::NonFiniteLoss { loss, detail } => Error::NonFiniteLoss {
                                loss,
                                detail: format!("factor {e}, increment {inc}, step {k}: {detail}"),
                            },
                            other => other,
                        })?;
                }
                Ok(())
            })?;
        self.increments += 1;
        log::debug!(
            "training increment {} done at step {}",
            self.increments,
            self.step
        );
        Ok(())
    }

    /// Mean negative log-likelihood of each factor's buffer under its flow.
    pub fn buffer_nll(&self) -> Result<Vec<f64>> {
        self.models
            .iter()
            .zip(&self.states)
            .map(|(m, st)| {
                let cond = m.config.cond_dim;
                let mut total = 0.0;
                for (r, a) in st.buffer.iter() {
                    total -= m.log_prob(r, &ActionEncoding::new(a, cond)?)?;
                }
                Ok(total / st.buffer.len().max(1) as f64)
            })
            .collect()
    }

    /// Provider drawing `cfg.n` flow samples per factor and local action.
    pub fn provider(&mut self) -> Result<FlowProvider<'_>> {
        self.freeze_normalization()?;
        Ok(FlowProvider {
            models: &self.models,
            graph: &self.graph,
            n: self.cfg.n,
            seed: seed::derive(self.cfg.seed, &[TAG_PROVIDER]),
        })
    }

    /// Flow samples for one factor and local action index.
    pub fn learned_samples(
        &self,
        factor: usize,
        action: usize,
        n: usize,
        seed_: u64,
    ) -> Result<ReturnDistribution> {
        let m = &self.models[factor];
        m.sample(&ActionEncoding::new(action, m.config.cond_dim)?, n, seed_)
    }

    /// Write checkpoints, optimizer and buffer state, and the manifest into
    /// `dir`.
    pub fn save(&self, dir: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut factors = Vec::new();
        for ((s, m), st) in self
            .graph
            .factors()
            .iter()
            .zip(&self.models)
            .zip(&self.states)
        {
            let checkpoint = PathBuf::from(format!("factor_{}.flow.json", s.id));
            let state = PathBuf::from(format!("factor_{}.state.json", s.id));
            m.save(&dir.join(&checkpoint))?;
            let p = dir.join(&state);
            let text = serde_json::to_string(st).map_err(|e| Error::parse(&p, e))?;
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            factors.push(FactorEntry {
                factor: s.id,
                scope: s.agents().to_vec(),
                checkpoint,
                state,
            });
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            config: self.cfg.clone(),
            dim: self.dim,
            graph: self.graph.clone(),
            step: self.step,
            increments: self.increments,
            normalized: self.normalized,
            factors,
        };
        let p = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::parse(&p, e))?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(manifest)
    }

    /// Restore a learner saved by [`Learner::save`].
    pub fn resume(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
        Self::from_manifest(dir, manifest)
    }

    pub fn from_manifest(dir: &Path, manifest: Manifest) -> Result<Self> {
        let n_factors = manifest.graph.factors().len();
        if manifest.factors.len() != n_factors {
            return Err(Error::Config(format!(
                "manifest lists {} checkpoints for {n_factors} factors",
                manifest.factors.len()
            )));
        }
        let mut models = Vec::new();
        let mut states = Vec::new();
        for (s, entry) in manifest.graph.factors().iter().zip(&manifest.factors) {
            if entry.factor != s.id {
                return Err(Error::Config(format!(
                    "checkpoint for factor {} out of order",
                    entry.factor
                )));
            }
            let path = dir.join(&entry.checkpoint);
            if !path.exists() {
                return Err(Error::MissingCheckpoint { factor: s.id, path });
            }
            models.push(FlowModel::load(&path)?);
            let p = dir.join(&entry.state);
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            states
                .push(serde_json::from_str::<FactorState>(&text).map_err(|e| Error::parse(&p, e))?);
        }
        Ok(Self {
            cfg: manifest.config,
            graph: manifest.graph,
            dim: manifest.dim,
            models,
            states,
            step: manifest.step,
            increments: manifest.increments,
            normalized: manifest.normalized,
        })
    }
}

/// Distribution provider backed by trained flows.
pub struct FlowProvider<'a> {
    models: &'a [FlowModel],
    graph: &'a CoordinationGraph,
    n: usize,
    seed: u64,
}

impl DistributionProvider for FlowProvider<'_> {
    fn distribution(
        &self,
        factor: &FactorScope,
        action: &LocalJointAction,
    ) -> Result<ReturnDistribution> {
        let m = self.models.get(factor.id).ok_or_else(|| Error::Provider {
            factor: factor.id,
            action: action.actions.clone(),
            reason: "no trained model".into(),
        })?;
        let idx = local_action_index(&action.actions, &self.graph.counts_of(factor.agents()));
        let enc = ActionEncoding::new(idx, m.config.cond_dim)?;
        m.sample(
            &enc,
            self.n,
            seed::derive(self.seed, &[factor.id as u64, idx as u64]),
        )
    }
}

/// Solver settings applied after learning.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub grid: CdfGrid,
    pub cap: Option<usize>,
    pub prune: bool,
    pub order: Option<Vec<usize>>,
}

impl SolveOptions {
    pub fn new(grid: CdfGrid) -> Self {
        Self {
            grid,
            cap: None,
            prune: true,
            order: None,
        }
    }
}

/// Run elimination over the flows held by `learner`.
pub fn solve_learned(learner: &mut Learner, opts: &SolveOptions) -> Result<EsrSolution> {
    let seed_ = seed::derive(learner.cfg.seed, &[TAG_SOLVE]);
    let solver = if opts.prune {
        Dmove::new(opts.grid.clone())
    } else {
        Dmove::unpruned()
    }
    .with_cap(opts.cap)
    .with_seed(seed_);
    let graph = learner.graph.clone();
    let provider = learner.provider()?;
    solver.solve(&graph, &provider, opts.order.as_deref())
}

/// Collect `cfg.steps` steps of experience, train, and return the ESR set
/// of the learned problem. Cross-sums are capped at `cfg.n_samples`.
pub fn learn(env: &dyn Environment, cfg: LearnConfig, grid: &CdfGrid) -> Result<EsrSolution> {
    let steps = cfg.steps;
    let cap = Some(cfg.n_samples);
    let mut learner = Learner::new(env.graph().clone(), env.dim(), cfg)?;
    learner.run(env, steps)?;
    let mut opts = SolveOptions::new(grid.clone());
    opts.cap = cap;
    solve_learned(&mut learner, &opts)
}
