//! Command-line entry points.
//!
//! Exit status: 0 success, 1 usage error, 2 runtime error, 3 certification
//! mismatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{GridConfig, ProblemSource, RunConfig};
use crate::distribution::CdfGrid;
use crate::engine::{Dmove, EsrSolution};
use crate::env::{
    make_synthetic, Environment, Layout, SyntheticEnv, SyntheticSpec, WindCondition, WindFarmEnv,
};
use crate::error::{Error, Result};
use crate::export::{write_dump, write_esr_set, DistributionDump, ExportSchema};
use crate::graph::local_action_index;
use crate::learning::{solve_learned, LearnConfig, Learner, SolveOptions, MANIFEST_FILE, TAG_DUMP};
use crate::oracle::{
    brute_force_esr_set, compare, covering_integer_grid, enumerate_joint_returns, ComparisonReport,
};
use crate::pruning::{EsrPrune, NoPrune};
use crate::seed;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;

const TAG_ENV: u64 = 101;
const TAG_LEARN: u64 = 102;
const TAG_CERTIFY: u64 = 103;

#[derive(Debug, Parser)]
#[command(
    name = "dmove",
    version,
    about = "ESR sets of multi-objective coordination graphs"
)]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a problem file and a matching run config.
    Gen(GenArgs),
    /// Collect experience and train one flow per factor.
    Learn(RunArgs),
    /// Solve from trained checkpoints and export the ESR set.
    Solve(RunArgs),
    /// Compare the solver with the brute-force oracle on exact data.
    Certify(RunArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Wind farm with this many turbines.
    #[arg(long, conflicts_with = "synthetic")]
    pub farm: Option<usize>,
    /// Turbines per row; defaults to the smallest square-ish grid.
    #[arg(long)]
    pub cols: Option<usize>,
    /// Grid spacing `DXxDY` in metres.
    #[arg(long, default_value = "500x400")]
    pub spacing: String,
    /// Wind `DIRECTION:SPEED` in degrees and m/s.
    #[arg(long, default_value = "30:11")]
    pub wind: String,
    /// Synthetic problem, as `key=value` items: agents, actions, dim,
    /// structure (chain or star).
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    pub synthetic: Option<Vec<String>>,
    /// Seed for generated problems and the run config.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Elimination order as comma-separated agent indices.
    #[arg(long, value_delimiter = ',')]
    pub order: Option<Vec<usize>>,
    /// Cross-sum sample cap, or `none`.
    #[arg(long)]
    pub cap: Option<String>,
    /// Lattice points per objective, overriding the config grid.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Write learned and buffer samples per ESR-set member and factor.
    #[arg(long)]
    pub dump_distributions: bool,
    /// Oracle mode: no ESR pruning during elimination.
    #[arg(long)]
    pub no_prune: bool,
    /// Continue a previous learning run from its manifest.
    #[arg(long)]
    pub resume: bool,
}

/// Parse arguments and run; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .try_init();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a).map(|_| EXIT_OK),
        Command::Learn(a) => cmd_learn(&a).map(|_| EXIT_OK),
        Command::Solve(a) => cmd_solve(&a).map(|_| EXIT_OK),
        Command::Certify(a) => {
            cmd_certify(&a).map(|r| if r.exact { EXIT_OK } else { EXIT_MISMATCH })
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn parse_pair(s: &str, sep: char, what: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once(sep)
        .ok_or_else(|| Error::Config(format!("{what} must look like A{sep}B, got {s:?}")))?;
    let p = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad number {x:?} in {what}")))
    };
    Ok((p(a)?, p(b)?))
}

/// Files written by `gen`.
#[derive(Debug, Clone)]
pub struct GenOutput {
    pub problem: PathBuf,
    pub config: PathBuf,
}

pub fn cmd_gen(a: &GenArgs) -> Result<GenOutput> {
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let config_path = a.out.join("config.toml");
    let (problem_path, cfg) = if let Some(n) = a.farm {
        let (dx, dy) = parse_pair(&a.spacing, 'x', "spacing")?;
        let (direction, speed) = parse_pair(&a.wind, ':', "wind")?;
        let cols = a
            .cols
            .unwrap_or_else(|| (n as f64).sqrt().ceil().max(1.0) as usize);
        let layout = Layout::grid(n, cols, dx, dy, WindCondition { direction, speed })?;
        let path = a.out.join("layout.toml");
        layout.save(&path)?;
        let cfg = RunConfig {
            seed: a.seed,
            out: PathBuf::from("run"),
            problem: ProblemSource::Farm {
                layout: PathBuf::from("layout.toml"),
            },
            learn: Default::default(),
            grid: Some(farm_grid(&layout)),
            solve: Default::default(),
            certify: Default::default(),
        };
        (path, cfg)
    } else if let Some(items) = &a.synthetic {
        let (mut agents, mut actions, mut dim, mut structure) =
            (3usize, 2usize, 2usize, "chain".to_string());
        for item in items {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {item:?}")))?;
            let num = || {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("{k} must be a positive integer")))
            };
            match k {
                "agents" => agents = num()?,
                "actions" => actions = num()?,
                "dim" => dim = num()?,
                "structure" => structure = v.to_string(),
                _ => return Err(Error::Config(format!("unknown synthetic key {k:?}"))),
            }
        }
        if agents == 0 || actions == 0 || dim == 0 {
            return Err(Error::Config(
                "agents, actions and dim must be positive".into(),
            ));
        }
        let scopes = match structure.as_str() {
            "chain" => SyntheticSpec::chain_scopes(agents),
            "star" if agents > 1 => (1..agents).map(|i| vec![0, i]).collect(),
            "star" => vec![vec![0]],
            other => return Err(Error::Config(format!("unknown structure {other:?}"))),
        };
        let spec = SyntheticSpec::random(vec![actions; agents], scopes, dim, a.seed)?;
        let path = a.out.join("spec.json");
        spec.save(&path)?;
        let cfg = RunConfig {
            seed: a.seed,
            out: PathBuf::from("run"),
            problem: ProblemSource::Synthetic {
                spec: PathBuf::from("spec.json"),
            },
            learn: Default::default(),
            grid: Some(synthetic_grid(&spec, 128)),
            solve: Default::default(),
            certify: Default::default(),
        };
        (path, cfg)
    } else {
        return Err(Error::Config(
            "gen needs --farm N or --synthetic KEY=VALUE...".into(),
        ));
    };
    std::fs::write(&config_path, cfg.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    log::info!(
        "wrote {} and {}",
        problem_path.display(),
        config_path.display()
    );
    Ok(GenOutput {
        problem: problem_path,
        config: config_path,
    })
}

/// Box sized like the 4-turbine defaults: turbulence in `[-1, 0]` per four
/// turbines, power up to the rated power of every turbine.
pub fn farm_grid(layout: &Layout) -> GridConfig {
    let n = layout.turbines.len() as f64;
    GridConfig {
        r_min: vec![-(n / 4.0).ceil().max(1.0), 0.0],
        r_max: vec![0.0, layout.params.rated_power * n],
        n_bins: 2000,
    }
}

/// Box covering every joint return to six standard deviations.
pub fn synthetic_grid(spec: &SyntheticSpec, n_bins: usize) -> GridConfig {
    let mut lo = vec![0.0; spec.dim];
    let mut hi = vec![0.0; spec.dim];
    for gens in &spec.generators {
        for j in 0..spec.dim {
            let comps = gens.iter().flat_map(|g| &g.components);
            let fmin = comps
                .clone()
                .map(|c| c.mean[j] - 6.0 * c.std[j])
                .fold(f64::INFINITY, f64::min);
            let fmax = comps
                .map(|c| c.mean[j] + 6.0 * c.std[j])
                .fold(f64::NEG_INFINITY, f64::max);
            lo[j] += fmin;
            hi[j] += fmax;
        }
    }
    for j in 0..spec.dim {
        if hi[j] <= lo[j] {
            hi[j] = lo[j] + 1.0;
        }
    }
    GridConfig {
        r_min: lo,
        r_max: hi,
        n_bins,
    }
}

/// Loaded problem together with its export schema.
pub enum Problem {
    Farm(WindFarmEnv),
    Synthetic(SyntheticEnv),
}

impl Problem {
    pub fn env(&self) -> &dyn Environment {
        match self {
            Problem::Farm(e) => e,
            Problem::Synthetic(e) => e,
        }
    }

    pub fn schema(&self) -> ExportSchema {
        match self {
            Problem::Farm(e) => ExportSchema::farm(e.layout()),
            Problem::Synthetic(e) => ExportSchema::generic(e.graph().n_agents_total(), e.dim()),
        }
    }

    fn default_grid(&self) -> GridConfig {
        match self {
            Problem::Farm(e) => farm_grid(e.layout()),
            Problem::Synthetic(e) => synthetic_grid(e.spec(), 128),
        }
    }
}

pub fn load_problem(cfg: &RunConfig) -> Result<Problem> {
    let env_seed = seed::derive(cfg.seed, &[TAG_ENV]);
    Ok(match &cfg.problem {
        ProblemSource::Farm { layout } => {
            Problem::Farm(WindFarmEnv::new(Layout::load(layout)?, env_seed)?)
        }
        ProblemSource::Synthetic { spec } => {
            Problem::Synthetic(make_synthetic(SyntheticSpec::load(spec)?, env_seed)?)
        }
        ProblemSource::Inline {
            action_counts,
            scopes,
            dim,
            generator_seed,
        } => Problem::Synthetic(make_synthetic(
            SyntheticSpec::random(action_counts.clone(), scopes.clone(), *dim, *generator_seed)?,
            env_seed,
        )?),
    })
}

/// Config with command-line overrides applied.
pub fn effective_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    if let Some(o) = &a.order {
        cfg.solve.order = Some(o.clone());
    }
    if let Some(c) = &a.cap {
        if c.eq_ignore_ascii_case("none") {
            cfg.solve.uncapped = true;
        } else {
            let v: usize = c.parse().map_err(|_| {
                Error::Config(format!(
                    "--cap expects a positive integer or none, got {c:?}"
                ))
            })?;
            if v == 0 {
                return Err(Error::Config("--cap must be positive".into()));
            }
            cfg.solve.cap = Some(v);
            cfg.solve.uncapped = false;
        }
    }
    if a.dump_distributions {
        cfg.solve.dump_distributions = true;
    }
    if a.no_prune {
        cfg.solve.prune = false;
    }
    cfg.learn.seed = seed::derive(cfg.seed, &[TAG_LEARN]);
    Ok(cfg)
}

fn solver_grid(cfg: &RunConfig, problem: &Problem, bins: Option<usize>) -> Result<CdfGrid> {
    let mut g = cfg.grid.clone().unwrap_or_else(|| problem.default_grid());
    if let Some(b) = bins {
        g.n_bins = b;
    }
    if g.r_min.len() != problem.env().dim() {
        return Err(Error::Config(format!(
            "grid has {} objectives, problem has {}",
            g.r_min.len(),
            problem.env().dim()
        )));
    }
    g.build()
}

pub fn cmd_learn(a: &RunArgs) -> Result<Learner> {
    let cfg = effective_config(a)?;
    let problem = load_problem(&cfg)?;
    let env = problem.env();
    let dir = cfg.checkpoint_dir();
    let mut learner = if a.resume && dir.join(MANIFEST_FILE).exists() {
        let mut l = Learner::resume(&dir)?;
        if l.graph() != env.graph() {
            return Err(Error::Config(
                "checkpoints belong to a different problem".into(),
            ));
        }
        let stored = LearnConfig {
            steps: cfg.learn.steps,
            ..l.config().clone()
        };
        if stored != cfg.learn {
            return Err(Error::Config(
                "learn settings differ from the checkpoint manifest; only steps may change on resume"
                    .into(),
            ));
        }
        l.set_steps(cfg.learn.steps)?;
        log::info!("resuming at step {}", l.step());
        l
    } else {
        Learner::new(env.graph().clone(), env.dim(), cfg.learn.clone())?
    };
    learner.run(env, cfg.learn.steps)?;
    learner.save(&dir)?;
    log::info!(
        "trained {} factors for {} steps ({} increments); checkpoints in {}",
        env.graph().factors().len(),
        learner.step(),
        learner.increments(),
        dir.display()
    );
    Ok(learner)
}

/// Files written by `solve`.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub solution: EsrSolution,
    pub esr_set: PathBuf,
    pub dumps: Vec<PathBuf>,
}

pub fn cmd_solve(a: &RunArgs) -> Result<SolveOutput> {
    let cfg = effective_config(a)?;
    let problem = load_problem(&cfg)?;
    let env = problem.env();
    let mut learner = Learner::resume(&cfg.checkpoint_dir())?;
    if learner.graph() != env.graph() {
        return Err(Error::Config(
            "checkpoints belong to a different problem".into(),
        ));
    }
    let opts = SolveOptions {
        grid: solver_grid(&cfg, &problem, a.bins)?,
        cap: cfg.cap(),
        prune: cfg.solve.prune,
        order: cfg.solve.order.clone(),
    };
    let solution = solve_learned(&mut learner, &opts)?;
    assert!(!solution.is_empty(), "the ESR set always has a member");
    let schema = problem.schema();
    let esr_set = cfg.out.join("esr_set.csv");
    write_esr_set(&esr_set, &solution, &schema)?;
    log::info!(
        "{} ESR-set members written to {}",
        solution.len(),
        esr_set.display()
    );

    let mut dumps = Vec::new();
    if cfg.solve.dump_distributions {
        let limit = match cfg.solve.dump_limit {
            0 => solution.len(),
            l => l.min(solution.len()),
        };
        let graph = learner.graph().clone();
        let n = learner.config().n_samples;
        let master = learner.config().seed;
        for (k, m) in solution.members.iter().take(limit).enumerate() {
            for s in graph.factors() {
                let local: Vec<usize> = s.agents().iter().map(|&x| m.joint_action[x]).collect();
                let idx = local_action_index(&local, &graph.counts_of(s.agents()));
                let learned = learner.learned_samples(
                    s.id,
                    idx,
                    n,
                    seed::derive(master, &[TAG_DUMP, s.id as u64, idx as u64]),
                )?;
                let buffer: Vec<Vec<f64>> = learner
                    .buffer(s.id)
                    .rewards_for(idx)
                    .into_iter()
                    .take(n)
                    .collect();
                let path = dump_path(&cfg.out, k, s.id);
                write_dump(&path, &DistributionDump { learned, buffer }, &schema)?;
                dumps.push(path);
            }
        }
        log::info!("{} distribution dumps written", dumps.len());
    }
    Ok(SolveOutput {
        solution,
        esr_set,
        dumps,
    })
}

pub fn dump_path(out: &Path, member: usize, factor: usize) -> PathBuf {
    out.join("distributions")
        .join(format!("member_{member:04}_factor_{factor}.csv"))
}

pub fn cmd_certify(a: &RunArgs) -> Result<ComparisonReport> {
    let cfg = effective_config(a)?;
    let problem = load_problem(&cfg)?;
    let env = match &problem {
        Problem::Synthetic(e) => e,
        Problem::Farm(_) => {
            return Err(Error::Config(
                "certify needs a synthetic or inline problem with exact integer data".into(),
            ))
        }
    };
    let graph = env.graph();
    let limit = cfg.certify.limit as u128;
    if graph.joint_action_count() > limit {
        return Err(Error::OracleLimit {
            joint_actions: graph.joint_action_count(),
            limit,
        });
    }
    let table = env.integer_table(
        cfg.certify.samples_per_action,
        seed::derive(cfg.seed, &[TAG_CERTIFY]),
    )?;
    let oracle_grid = covering_integer_grid(graph, &table)?;
    let solver_grid = match a.bins {
        Some(b) => CdfGrid::new(
            oracle_grid.r_min().to_vec(),
            oracle_grid.r_max().to_vec(),
            b,
        )?,
        None => oracle_grid.clone(),
    };
    // without pruning, elimination carries every joint action and only the
    // final set is filtered
    let solver = if cfg.solve.prune {
        Dmove::new(solver_grid.clone())
    } else {
        Dmove::unpruned().with_pruners(
            Box::new(NoPrune),
            Box::new(NoPrune),
            Box::new(EsrPrune::new(solver_grid.clone())),
        )
    }
    .with_seed(cfg.seed);
    let dm = solver.solve(graph, &table, cfg.solve.order.as_deref())?;
    let all = enumerate_joint_returns(graph, &table, None, limit)?;
    let oracle = brute_force_esr_set(&all, &oracle_grid)?;
    let report = compare(&dm, &solver_grid, &oracle, &oracle_grid)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let path = cfg.out.join("certify_report.json");
    std::fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    println!("{}", report.to_json());
    Ok(report)
}
