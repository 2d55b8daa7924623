//! Stochastic vector-reward environments.
//!
//! * [`WindFarmEnv`]: a parametric wake surrogate for yaw control. It is a
//!   deliberately simple Jensen-style model, not a physical-fidelity
//!   simulator; it exists to produce realistically shaped bi-objective
//!   returns `[-turbulence, power]`.
//! * [`SyntheticEnv`]: Gaussian-mixture rewards with known ground truth.
//! * [`build_dependency_graph`]: geometric wake-cone dependencies.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distribution::{ReturnDistribution, ReturnVector};
use crate::error::{Error, Result};
use crate::graph::{local_action_index, AgentId, CoordinationGraph};
use crate::seed;

/// A vector-reward environment over a coordination graph.
pub trait Environment: Sync {
    fn graph(&self) -> &CoordinationGraph;

    /// Execute a full joint action as trajectory step `step`. Returns one
    /// reward vector per factor, in `graph().factors()` order. The noise of
    /// each step is a pure function of the environment seed and `step`.
    fn execute(&self, joint_action: &[usize], step: u64) -> Result<Vec<ReturnVector>>;

    fn objective_names(&self) -> Vec<String> {
        (0..self.dim()).map(|k| format!("objective_{k}")).collect()
    }

    fn dim(&self) -> usize;
}

fn check_joint_action(graph: &CoordinationGraph, joint_action: &[usize]) -> Result<()> {
    if joint_action.len() != graph.n_agents_total() {
        return Err(Error::DimensionMismatch {
            expected: graph.n_agents_total(),
            got: joint_action.len(),
        });
    }
    for (agent, &a) in joint_action.iter().enumerate() {
        if a >= graph.action_count(agent) {
            return Err(Error::InvalidAction {
                agent,
                action: a,
                count: graph.action_count(agent),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Turbine {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

/// Wind direction in degrees clockwise from north, taken as the bearing the
/// wind blows towards, and speed in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindCondition {
    pub direction: f64,
    pub speed: f64,
}

impl WindCondition {
    /// Unit vector pointing downstream, with x east and y north.
    pub fn downstream(&self) -> (f64, f64) {
        let t = self.direction.to_radians();
        (t.sin(), t.cos())
    }
}

/// Whether `t` lies strictly within `radius` and strictly within
/// `half_angle` degrees of the downstream axis from `reference`.
pub fn in_wake_cone(
    reference: &Turbine,
    t: &Turbine,
    wind: &WindCondition,
    half_angle: f64,
    radius: f64,
) -> bool {
    let (dx, dy) = (t.x - reference.x, t.y - reference.y);
    let dist = dx.hypot(dy);
    if dist == 0.0 || dist >= radius {
        return false;
    }
    let (ux, uy) = wind.downstream();
    let cos = ((dx * ux + dy * uy) / dist).clamp(-1.0, 1.0);
    cos.acos().to_degrees() < half_angle
}

/// `deps[r]` lists the turbines inside the wake cone of turbine `r`.
pub fn dependencies(
    turbines: &[Turbine],
    wind: &WindCondition,
    half_angle: f64,
    radius: f64,
) -> Vec<Vec<usize>> {
    turbines
        .iter()
        .map(|r| {
            turbines
                .iter()
                .enumerate()
                .filter(|(_, t)| in_wake_cone(r, t, wind, half_angle, radius))
                .map(|(k, _)| k)
                .collect()
        })
        .collect()
}

/// Factor scopes from wake dependencies: one scope per turbine holding the
/// turbine and its in-cone dependents, with identical scopes merged.
pub fn dependency_scopes(
    turbines: &[Turbine],
    wind: &WindCondition,
    half_angle: f64,
    radius: f64,
) -> Vec<Vec<AgentId>> {
    let deps = dependencies(turbines, wind, half_angle, radius);
    let mut scopes: Vec<Vec<AgentId>> = Vec::new();
    for (r, d) in deps.iter().enumerate() {
        let mut s: Vec<AgentId> = d.iter().copied().chain([r]).collect();
        s.sort_unstable();
        if !scopes.contains(&s) {
            scopes.push(s);
        }
    }
    scopes
}

pub fn build_dependency_graph(
    turbines: &[Turbine],
    wind: &WindCondition,
    half_angle: f64,
    radius: f64,
    n_actions: usize,
) -> Result<CoordinationGraph> {
    if turbines.is_empty() {
        return Err(Error::Config(
            "a wind farm needs at least one turbine".into(),
        ));
    }
    let scopes = dependency_scopes(turbines, wind, half_angle, radius);
    CoordinationGraph::new(vec![n_actions; turbines.len()], &scopes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateParams {
    pub rotor_diameter: f64,
    pub air_density: f64,
    pub power_coefficient: f64,
    pub thrust_coefficient: f64,
    pub rated_power: f64,
    /// Linear growth rate of the wake radius.
    pub wake_decay: f64,
    /// Wake deflection angle per unit yaw angle.
    pub deflection_gain: f64,
    pub ambient_turbulence: f64,
    /// Scale of wake-added turbulence.
    pub turbulence_gain: f64,
    /// Standard deviation of the Gaussian perturbation of effective wind
    /// speed at each turbine, m/s.
    pub noise_std: f64,
    pub cone_half_angle: f64,
    pub cone_radius: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            rotor_diameter: 110.0,
            air_density: 1.225,
            power_coefficient: 0.45,
            thrust_coefficient: 0.75,
            rated_power: 5.0e6,
            wake_decay: 0.075,
            deflection_gain: 0.5,
            ambient_turbulence: 0.06,
            turbulence_gain: 0.73,
            noise_std: 0.5,
            cone_half_angle: 22.5,
            cone_radius: 1000.0,
        }
    }
}

/// Wind-farm problem description, as stored in layout files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub turbines: Vec<Turbine>,
    pub wind: WindCondition,
    #[serde(default)]
    pub params: SurrogateParams,
    #[serde(default = "default_yaws")]
    pub yaw_angles: Vec<f64>,
}

fn default_yaws() -> Vec<f64> {
    vec![-10.0, -5.0, 0.0, 5.0, 10.0]
}

impl Layout {
    /// `n` turbines on a grid with `cols` columns, `dx` metres apart along x
    /// and `dy` along y.
    pub fn grid(n: usize, cols: usize, dx: f64, dy: f64, wind: WindCondition) -> Result<Self> {
        if n == 0 || cols == 0 {
            return Err(Error::Config(
                "turbine and column counts must be positive".into(),
            ));
        }
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::Config(format!(
                "spacing must be positive, got {dx}x{dy}"
            )));
        }
        let turbines = (0..n)
            .map(|k| Turbine {
                id: k,
                x: (k % cols) as f64 * dx,
                y: (k / cols) as f64 * dy,
            })
            .collect();
        let l = Self {
            turbines,
            wind,
            params: SurrogateParams::default(),
            yaw_angles: default_yaws(),
        };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        if self.turbines.is_empty() {
            return Err(Error::Config("layout has no turbines".into()));
        }
        for (k, t) in self.turbines.iter().enumerate() {
            if t.id != k {
                return Err(Error::Config(format!(
                    "turbine ids must be 0..n in order, found {} at {k}",
                    t.id
                )));
            }
            if !(t.x.is_finite() && t.y.is_finite()) {
                return Err(Error::NonFinite("turbine position"));
            }
            if self.turbines[..k].iter().any(|u| u.x == t.x && u.y == t.y) {
                return Err(Error::Config(format!(
                    "turbine {k} shares its position with another turbine"
                )));
            }
        }
        if !(self.wind.speed > 0.0
            && self.wind.speed.is_finite()
            && self.wind.direction.is_finite())
        {
            return Err(Error::Config(
                "wind speed must be positive and finite".into(),
            ));
        }
        if self.yaw_angles.is_empty()
            || self
                .yaw_angles
                .iter()
                .any(|y| !y.is_finite() || y.abs() >= 90.0)
        {
            return Err(Error::Config(
                "yaw angles must be a non-empty set within (-90, 90) degrees".into(),
            ));
        }
        let p = &self.params;
        if p.noise_std < 0.0
            || p.rotor_diameter <= 0.0
            || !(0.0..1.0).contains(&p.thrust_coefficient)
        {
            return Err(Error::Config("invalid surrogate parameters".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let l: Self = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        l.validate()?;
        Ok(l)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::parse(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurbineState {
    pub wind_speed: f64,
    pub power: f64,
    pub turbulence: f64,
}

#[derive(Debug, Clone)]
pub struct WindFarmEnv {
    layout: Layout,
    graph: CoordinationGraph,
    /// `upstream[t]`: turbines whose wake cone contains `t`.
    upstream: Vec<Vec<usize>>,
    /// Turbines sorted by downstream distance.
    order: Vec<usize>,
    seed: u64,
}

impl WindFarmEnv {
    pub fn new(layout: Layout, seed: u64) -> Result<Self> {
        layout.validate()?;
        let p = &layout.params;
        let graph = build_dependency_graph(
            &layout.turbines,
            &layout.wind,
            p.cone_half_angle,
            p.cone_radius,
            layout.yaw_angles.len(),
        )?;
        let deps = dependencies(
            &layout.turbines,
            &layout.wind,
            p.cone_half_angle,
            p.cone_radius,
        );
        let mut upstream = vec![Vec::new(); layout.turbines.len()];
        for (r, d) in deps.iter().enumerate() {
            for &t in d {
                upstream[t].push(r);
            }
        }
        let (ux, uy) = layout.wind.downstream();
        let mut order: Vec<usize> = (0..layout.turbines.len()).collect();
        let along = |k: usize| layout.turbines[k].x * ux + layout.turbines[k].y * uy;
        order.sort_by(|&a, &b| along(a).total_cmp(&along(b)).then(a.cmp(&b)));
        Ok(Self {
            layout,
            graph,
            upstream,
            order,
            seed,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Power of an unwaked, aligned turbine at the free-stream speed.
    pub fn free_stream_power(&self) -> f64 {
        self.power_at(self.layout.wind.speed, 0.0)
    }

    fn power_at(&self, speed: f64, yaw_deg: f64) -> f64 {
        let p = &self.layout.params;
        let area = PI * (p.rotor_diameter / 2.0).powi(2);
        let aligned =
            (0.5 * p.air_density * area * p.power_coefficient * speed.powi(3)).min(p.rated_power);
        aligned * yaw_deg.to_radians().cos().powi(3)
    }

    /// Per-turbine state for a joint action. `noise[t]` perturbs the
    /// effective wind speed at turbine `t`.
    pub fn turbine_states(
        &self,
        joint_action: &[usize],
        noise: &[f64],
    ) -> Result<Vec<TurbineState>> {
        check_joint_action(&self.graph, joint_action)?;
        let p = &self.layout.params;
        let u0 = self.layout.wind.speed;
        let radius = p.rotor_diameter / 2.0;
        let (ux, uy) = self.layout.wind.downstream();
        let yaw = |t: usize| self.layout.yaw_angles[joint_action[t]];
        let mut out = vec![
            TurbineState {
                wind_speed: 0.0,
                power: 0.0,
                turbulence: 0.0
            };
            self.layout.turbines.len()
        ];
        for &t in &self.order {
            let tt = &self.layout.turbines[t];
            let mut deficit_sq = 0.0;
            let mut added_sq = 0.0;
            for &u in &self.upstream[t] {
                let tu = &self.layout.turbines[u];
                let (dx, dy) = (tt.x - tu.x, tt.y - tu.y);
                let x = dx * ux + dy * uy;
                if x <= 0.0 {
                    continue;
                }
                // lateral offset, positive to the right of the downstream axis
                let lateral = dx * uy - dy * ux;
                let yaw_u = yaw(u).to_radians();
                let deflection = x * (p.deflection_gain * yaw_u).tan();
                let wake_r = radius + p.wake_decay * x;
                let overlap = (-(lateral - deflection).powi(2) / (2.0 * wake_r * wake_r)).exp();
                let ct = p.thrust_coefficient * yaw_u.cos().powi(2);
                let induction = 1.0 - (1.0 - ct).sqrt();
                let d = induction / (1.0 + p.wake_decay * x / radius).powi(2) * overlap;
                deficit_sq += d * d;
                let added = p.turbulence_gain
                    * ct.powf(0.8)
                    * (x / p.rotor_diameter).powf(-0.32)
                    * overlap
                    * 0.1;
                added_sq += added * added;
            }
            let deficit = deficit_sq.sqrt().min(1.0);
            let speed = (u0 * (1.0 - deficit) + noise[t]).max(0.0);
            let ambient = p.ambient_turbulence * (u0 / speed.max(1e-3));
            let turbulence = ambient.hypot(added_sq.sqrt()).clamp(0.0, 1.0);
            out[t] = TurbineState {
                wind_speed: speed,
                power: self.power_at(speed, yaw(t)),
                turbulence,
            };
        }
        Ok(out)
    }

    /// Group rewards: `[-mean member turbulence, total member power]`.
    pub fn group_rewards(&self, states: &[TurbineState]) -> Vec<ReturnVector> {
        self.graph
            .factors()
            .iter()
            .map(|s| {
                let n = s.len() as f64;
                let ti = s
                    .agents()
                    .iter()
                    .map(|&t| states[t].turbulence)
                    .sum::<f64>()
                    / n;
                let power = s.agents().iter().map(|&t| states[t].power).sum::<f64>();
                ReturnVector(vec![-ti, power])
            })
            .collect()
    }

    /// Deterministic rewards with noise disabled.
    pub fn execute_noiseless(&self, joint_action: &[usize]) -> Result<Vec<ReturnVector>> {
        let zeros = vec![0.0; self.layout.turbines.len()];
        Ok(self.group_rewards(&self.turbine_states(joint_action, &zeros)?))
    }
}

impl Environment for WindFarmEnv {
    fn graph(&self) -> &CoordinationGraph {
        &self.graph
    }

    fn execute(&self, joint_action: &[usize], step: u64) -> Result<Vec<ReturnVector>> {
        let mut rng = seed::rng(seed::derive(self.seed, &[step]));
        let std = self.layout.params.noise_std;
        let noise: Vec<f64> = (0..self.layout.turbines.len())
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(self.group_rewards(&self.turbine_states(joint_action, &noise)?))
    }

    fn objective_names(&self) -> Vec<String> {
        vec!["turbulence".into(), "power".into()]
    }

    fn dim(&self) -> usize {
        2
    }
}

/// One Gaussian component with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mixture generator for one factor and local joint action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub components: Vec<Component>,
}

impl Generator {
    pub fn gaussian(mean: Vec<f64>, std: Vec<f64>) -> Self {
        Self {
            components: vec![Component {
                weight: 1.0,
                mean,
                std,
            }],
        }
    }

    pub fn point_mass(v: Vec<f64>) -> Self {
        let d = v.len();
        Self::gaussian(v, vec![0.0; d])
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("generator without components".into()));
        }
        for c in &self.components {
            if c.mean.len() != dim || c.std.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.mean.len().max(c.std.len()),
                });
            }
            if !(c.weight > 0.0 && c.weight.is_finite())
                || c.std.iter().any(|s| !(*s >= 0.0 && s.is_finite()))
            {
                return Err(Error::Config(
                    "component weights must be positive and stds non-negative".into(),
                ));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::NonFinite("generator mean"));
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> Vec<f64> {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let d = self.components[0].mean.len();
        let mut m = vec![0.0; d];
        for c in &self.components {
            for (mj, cj) in m.iter_mut().zip(&c.mean) {
                *mj += c.weight / total * cj;
            }
        }
        m
    }

    pub fn draw(&self, rng: &mut seed::Rng) -> Vec<f64> {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = &self.components[self.components.len() - 1];
        for c in &self.components {
            if u < c.weight {
                pick = c;
                break;
            }
            u -= c.weight;
        }
        pick.mean
            .iter()
            .zip(&pick.std)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// Problem file for synthetic environments: the graph plus one generator per
/// factor and local joint action (mixed-radix order, last agent fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub action_counts: Vec<usize>,
    pub scopes: Vec<Vec<AgentId>>,
    pub generators: Vec<Vec<Generator>>,
}

impl SyntheticSpec {
    /// Seeded Gaussian generators with means uniform in `[0, 10)` and
    /// standard deviations uniform in `[0.5, 1.5)`.
    pub fn random(
        action_counts: Vec<usize>,
        scopes: Vec<Vec<AgentId>>,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let graph = CoordinationGraph::new(action_counts.clone(), &scopes)?;
        let mut rng = seed::rng(seed);
        let generators = graph
            .factors()
            .iter()
            .map(|s| {
                let n: usize = graph.counts_of(s.agents()).iter().product();
                (0..n)
                    .map(|_| {
                        Generator::gaussian(
                            (0..dim).map(|_| rng.random_range(0.0..10.0)).collect(),
                            (0..dim).map(|_| rng.random_range(0.5..1.5)).collect(),
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            dim,
            action_counts,
            scopes,
            generators,
        })
    }

    /// Chain-structured scopes `{i, i+1}` over `n` agents.
    pub fn chain_scopes(n: usize) -> Vec<Vec<AgentId>> {
        if n == 1 {
            return vec![vec![0]];
        }
        (0..n - 1).map(|i| vec![i, i + 1]).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::parse(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    spec: SyntheticSpec,
    graph: CoordinationGraph,
    seed: u64,
}

pub fn make_synthetic(spec: SyntheticSpec, seed: u64) -> Result<SyntheticEnv> {
    let graph = CoordinationGraph::new(spec.action_counts.clone(), &spec.scopes)?;
    if spec.dim == 0 {
        return Err(Error::Config(
            "synthetic spec needs at least one objective".into(),
        ));
    }
    if spec.generators.len() != graph.factors().len() {
        return Err(Error::Config(format!(
            "spec has generators for {} factors, graph has {}",
            spec.generators.len(),
            graph.factors().len()
        )));
    }
    for (s, gens) in graph.factors().iter().zip(&spec.generators) {
        let n: usize = graph.counts_of(s.agents()).iter().product();
        if gens.len() != n {
            return Err(Error::Config(format!(
                "factor {} needs {n} generators, spec has {}",
                s.id,
                gens.len()
            )));
        }
        for g in gens {
            g.validate(spec.dim)?;
        }
    }
    Ok(SyntheticEnv { spec, graph, seed })
}

impl SyntheticEnv {
    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn generator(&self, factor: usize, local_actions: &[usize]) -> &Generator {
        let s = &self.graph.factors()[factor];
        &self.spec.generators[factor]
            [local_action_index(local_actions, &self.graph.counts_of(s.agents()))]
    }

    pub fn true_mean(&self, factor: usize, local_actions: &[usize]) -> Vec<f64> {
        self.generator(factor, local_actions).mean()
    }

    /// Independent draws from the ground-truth generator.
    pub fn sample_truth(
        &self,
        factor: usize,
        local_actions: &[usize],
        n: usize,
        seed: u64,
    ) -> Result<ReturnDistribution> {
        let g = self.generator(factor, local_actions);
        let mut rng = seed::rng(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| g.draw(&mut rng)).collect();
        ReturnDistribution::from_rows(&rows)
    }

    /// Table of `k` ground-truth draws per factor and local action, rounded
    /// to integers so that exact oracle comparison applies.
    pub fn integer_table(&self, k: usize, seed: u64) -> Result<crate::engine::TableProvider> {
        let mut table = crate::engine::TableProvider::default();
        for s in self.graph.factors() {
            for a in self.graph.enumerate_local_actions(s.agents())? {
                let d = self.sample_truth(
                    s.id,
                    &a.actions,
                    k,
                    seed::derive(
                        seed,
                        &[
                            s.id as u64,
                            local_action_index(&a.actions, &self.graph.counts_of(s.agents()))
                                as u64,
                        ],
                    ),
                )?;
                let rounded: Vec<f64> = d.raw().iter().map(|x| x.round()).collect();
                table.insert(
                    s.id,
                    a.actions,
                    ReturnDistribution::from_samples(d.dim(), rounded)?,
                );
            }
        }
        Ok(table)
    }
}

impl Environment for SyntheticEnv {
    fn graph(&self) -> &CoordinationGraph {
        &self.graph
    }

    fn execute(&self, joint_action: &[usize], step: u64) -> Result<Vec<ReturnVector>> {
        check_joint_action(&self.graph, joint_action)?;
        let mut rng = seed::rng(seed::derive(self.seed, &[step]));
        Ok(self
            .graph
            .factors()
            .iter()
            .map(|s| {
                let local: Vec<usize> = s.agents().iter().map(|&a| joint_action[a]).collect();
                ReturnVector(self.generator(s.id, &local).draw(&mut rng))
            })
            .collect())
    }

    fn dim(&self) -> usize {
        self.spec.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wind() -> WindCondition {
        WindCondition {
            direction: 30.0,
            speed: 11.0,
        }
    }

    fn noiseless(mut l: Layout) -> WindFarmEnv {
        l.params.noise_std = 0.0;
        WindFarmEnv::new(l, 0).unwrap()
    }

    fn aligned_pair() -> Layout {
        let (ux, uy) = wind().downstream();
        Layout {
            turbines: vec![
                Turbine {
                    id: 0,
                    x: 0.0,
                    y: 0.0,
                },
                Turbine {
                    id: 1,
                    x: 500.0 * ux,
                    y: 500.0 * uy,
                },
            ],
            wind: wind(),
            params: SurrogateParams::default(),
            yaw_angles: default_yaws(),
        }
    }

    #[test]
    fn single_turbine_is_a_singleton_factor() {
        let l = Layout::grid(1, 1, 500.0, 400.0, wind()).unwrap();
        let g = build_dependency_graph(&l.turbines, &l.wind, 22.5, 1000.0, 5).unwrap();
        assert_eq!(g.factors().len(), 1);
        assert_eq!(g.factors()[0].agents(), &[0]);
        assert!(build_dependency_graph(&[], &wind(), 22.5, 1000.0, 5).is_err());
    }

    #[test]
    fn aligned_pair_dependency() {
        let l = aligned_pair();
        let deps = dependencies(&l.turbines, &l.wind, 22.5, 1000.0);
        assert_eq!(deps, vec![vec![1], vec![]]);
        let scopes = dependency_scopes(&l.turbines, &l.wind, 22.5, 1000.0);
        assert_eq!(scopes[0], vec![0, 1]);
    }

    #[test]
    fn grid_cone_membership() {
        // bearings from turbine 0: t1 at 90, t2 at 0, t3 at atan(500/400) = 51.3
        let l = Layout::grid(4, 2, 500.0, 400.0, wind()).unwrap();
        let deps = dependencies(&l.turbines, &l.wind, 22.5, 1000.0);
        assert_eq!(deps, vec![vec![3], vec![], vec![], vec![]]);
        let scopes = dependency_scopes(&l.turbines, &l.wind, 22.5, 1000.0);
        assert_eq!(scopes, vec![vec![0, 3], vec![1], vec![2], vec![3]]);
        // widening the cone to 31 degrees admits turbine 2 (30 degrees off axis)
        let wide = dependencies(&l.turbines, &l.wind, 31.0, 1000.0);
        assert_eq!(wide[0], vec![2, 3]);
        // and a 600 m radius drops turbine 3 (640 m away)
        assert!(dependencies(&l.turbines, &l.wind, 22.5, 600.0)[0].is_empty());
    }

    #[test]
    fn dependencies_translate_and_rotate() {
        let l = Layout::grid(6, 3, 500.0, 400.0, wind()).unwrap();
        let base = dependencies(&l.turbines, &l.wind, 22.5, 1000.0);
        let shifted: Vec<Turbine> = l
            .turbines
            .iter()
            .map(|t| Turbine {
                x: t.x + 1234.5,
                y: t.y - 77.0,
                ..*t
            })
            .collect();
        assert_eq!(dependencies(&shifted, &l.wind, 22.5, 1000.0), base);
        for deg in [17.0f64, 90.0, 200.0] {
            let th = deg.to_radians();
            // bearings grow clockwise, so rotating the layout by +deg clockwise
            let rotated: Vec<Turbine> = l
                .turbines
                .iter()
                .map(|t| Turbine {
                    x: t.x * th.cos() + t.y * th.sin(),
                    y: -t.x * th.sin() + t.y * th.cos(),
                    ..*t
                })
                .collect();
            let w = WindCondition {
                direction: l.wind.direction + deg,
                ..l.wind
            };
            assert_eq!(
                dependencies(&rotated, &w, 22.5, 1000.0),
                base,
                "rotation {deg}"
            );
        }
    }

    #[test]
    fn single_turbine_power_and_turbulence() {
        let env = noiseless(Layout::grid(1, 1, 500.0, 400.0, wind()).unwrap());
        let r0 = env.execute_noiseless(&[2]).unwrap();
        assert_eq!(r0[0][1], env.free_stream_power());
        assert_eq!(r0[0][0], -env.layout().params.ambient_turbulence);
        let r10 = env.execute_noiseless(&[4]).unwrap();
        let ratio = r10[0][1] / r0[0][1];
        assert!((ratio - 10f64.to_radians().cos().powi(3)).abs() < 1e-12);
        assert!((ratio - 0.955).abs() < 1e-3);
    }

    #[test]
    fn yaw_deflection_helps_downstream_turbine() {
        let env = noiseless(aligned_pair());
        let zeros = [0.0, 0.0];
        let straight = env.turbine_states(&[2, 2], &zeros).unwrap();
        let yawed = env.turbine_states(&[4, 2], &zeros).unwrap();
        assert!(yawed[1].power > straight[1].power);
        assert!(yawed[0].power < straight[0].power);
        assert!(straight[1].turbulence > straight[0].turbulence);
        assert!(yawed[1].turbulence < straight[1].turbulence);
    }

    #[test]
    fn rewards_are_bounded_and_pure_without_noise() {
        let env = noiseless(Layout::grid(4, 2, 500.0, 400.0, wind()).unwrap());
        for ja in crate::graph::product(&[5, 5, 5, 5]) {
            let r = env.execute(&ja, 3).unwrap();
            assert_eq!(r, env.execute(&ja, 9).unwrap());
            let total: f64 = env
                .turbine_states(&ja, &[0.0; 4])
                .unwrap()
                .iter()
                .map(|s| s.power)
                .sum();
            assert!((0.0..=2e7).contains(&total));
            for v in &r {
                assert!((-1.0..=0.0).contains(&v[0]));
            }
        }
        assert!(env.execute(&[0, 0, 0, 5], 0).is_err());
        assert!(env.execute(&[0, 0, 0], 0).is_err());
    }

    #[test]
    fn noisy_execution_is_seeded() {
        let env = WindFarmEnv::new(Layout::grid(4, 2, 500.0, 400.0, wind()).unwrap(), 5).unwrap();
        let a = env.execute(&[1, 2, 3, 4], 17).unwrap();
        assert_eq!(a, env.execute(&[1, 2, 3, 4], 17).unwrap());
        assert_ne!(a, env.execute(&[1, 2, 3, 4], 18).unwrap());
    }

    #[test]
    fn layout_validation_and_round_trip() {
        assert!(Layout::grid(4, 2, 0.0, 400.0, wind()).is_err());
        assert!(Layout::grid(
            4,
            2,
            500.0,
            400.0,
            WindCondition {
                direction: 30.0,
                speed: 0.0
            }
        )
        .is_err());
        let l = Layout::grid(4, 2, 500.0, 400.0, wind()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("layout.toml");
        l.save(&p).unwrap();
        assert_eq!(Layout::load(&p).unwrap(), l);
    }

    fn two_agent_spec() -> SyntheticSpec {
        SyntheticSpec {
            dim: 2,
            action_counts: vec![2, 2],
            scopes: vec![vec![0, 1]],
            generators: vec![vec![
                Generator::gaussian(vec![0.0, 5.0], vec![1.0, 1.0]),
                Generator::gaussian(vec![3.0, 1.0], vec![1.0, 1.0]),
                Generator::gaussian(vec![-2.0, 2.0], vec![1.0, 1.0]),
                Generator::gaussian(vec![4.0, 4.0], vec![1.0, 1.0]),
            ]],
        }
    }

    #[test]
    fn synthetic_means_converge() {
        let env = make_synthetic(two_agent_spec(), 3).unwrap();
        for (k, ja) in crate::graph::product(&[2, 2]).into_iter().enumerate() {
            let n = 20_000;
            let mut acc = [0.0; 2];
            for step in 0..n {
                let r = env.execute(&ja, step).unwrap();
                acc[0] += r[0][0];
                acc[1] += r[0][1];
            }
            let truth = env.spec().generators[0][k].mean();
            for j in 0..2 {
                assert!((acc[j] / n as f64 - truth[j]).abs() < 4.0 / (n as f64).sqrt());
            }
        }
    }

    #[test]
    fn synthetic_point_masses_are_deterministic() {
        let mut spec = two_agent_spec();
        for g in &mut spec.generators[0] {
            g.components[0].std = vec![0.0, 0.0];
        }
        let env = make_synthetic(spec, 1).unwrap();
        assert_eq!(
            env.execute(&[1, 0], 0).unwrap(),
            env.execute(&[1, 0], 99).unwrap()
        );
        assert_eq!(env.execute(&[1, 0], 0).unwrap()[0].0, vec![-2.0, 2.0]);
    }

    #[test]
    fn synthetic_is_seeded() {
        let a = make_synthetic(two_agent_spec(), 8).unwrap();
        let b = make_synthetic(two_agent_spec(), 8).unwrap();
        for step in 0..10 {
            assert_eq!(
                a.execute(&[0, 1], step).unwrap(),
                b.execute(&[0, 1], step).unwrap()
            );
        }
    }

    #[test]
    fn incomplete_spec_rejected() {
        let mut spec = two_agent_spec();
        spec.generators[0].pop();
        assert!(make_synthetic(spec, 0).is_err());
        let mut spec = two_agent_spec();
        spec.generators[0][0].components[0].mean = vec![1.0];
        assert!(make_synthetic(spec, 0).is_err());
    }

    #[test]
    fn mixture_weights_are_respected() {
        let g = Generator {
            components: vec![
                Component {
                    weight: 3.0,
                    mean: vec![0.0],
                    std: vec![0.0],
                },
                Component {
                    weight: 1.0,
                    mean: vec![1.0],
                    std: vec![0.0],
                },
            ],
        };
        assert_eq!(g.mean(), vec![0.25]);
        let mut rng = seed::rng(4);
        let ones = (0..40_000).filter(|_| g.draw(&mut rng)[0] == 1.0).count() as f64;
        assert!((ones / 40_000.0 - 0.25).abs() < 0.01);
    }
}
