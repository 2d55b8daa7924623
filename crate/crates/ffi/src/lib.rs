//! C ABI for the dmove solver.
//!
//! Objects are opaque handles created by `*_new`/`dmove_solve*` and released
//! with the matching `*_free`. Every fallible call returns a [`DmoveStatus`];
//! on failure, [`dmove_last_error_message`] describes the error for the
//! calling thread.
//!
//! Arrays are passed as pointer plus length. Samples are row-major with one
//! row of `dim` objectives per sample.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dmove::cli::{cmd_solve, RunArgs};
use dmove::distribution::{CdfGrid, ReturnDistribution};
use dmove::engine::{Dmove, EsrSolution, TableProvider};
use dmove::graph::CoordinationGraph;
use dmove::oracle::{brute_force_esr_set, enumerate_joint_returns, DEFAULT_JOINT_ACTION_LIMIT};
use dmove::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmoveStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or inconsistent.
    InvalidArgument = 2,
    /// The coordination graph is malformed.
    InvalidGraph = 3,
    /// A factor and local action has no distribution.
    MissingData = 4,
    /// The solver or oracle failed.
    SolveFailed = 5,
    /// The brute-force oracle refused an instance that is too large.
    OracleLimit = 6,
    /// A file could not be read or written.
    Io = 7,
    /// A checkpoint named by the manifest is missing.
    MissingCheckpoint = 8,
    /// Internal panic; the handle involved should be considered poisoned.
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DmoveStatus {
    match e {
        Error::AgentOutOfRange { .. }
        | Error::UncoveredAgent(_)
        | Error::EmptyScope(_)
        | Error::DuplicateAgent { .. }
        | Error::UnknownAgent(_)
        | Error::NoActions(_) => DmoveStatus::InvalidGraph,
        Error::InvalidAction { .. }
        | Error::InvalidOrder(_)
        | Error::DimensionMismatch { .. }
        | Error::NonFinite(_)
        | Error::EmptyDistribution
        | Error::InvalidGrid(_)
        | Error::Config(_) => DmoveStatus::InvalidArgument,
        Error::MissingEntry { .. } | Error::Provider { .. } => DmoveStatus::MissingData,
        Error::OracleLimit { .. } => DmoveStatus::OracleLimit,
        Error::Io { .. } | Error::Parse { .. } => DmoveStatus::Io,
        Error::MissingCheckpoint { .. } => DmoveStatus::MissingCheckpoint,
        _ => DmoveStatus::SolveFailed,
    }
}

struct Fail(DmoveStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(DmoveStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DmoveStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DmoveStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            DmoveStatus::Panic
        }
    }
}

fn nonnull<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(DmoveStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null only when `len` is 0, and otherwise point to `len`
/// readable elements.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    nonnull(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dmove_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dmove_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Coordination graph with one return distribution per factor and local
/// joint action.
pub struct DmoveProblem {
    graph: CoordinationGraph,
    dim: usize,
    table: TableProvider,
}

/// Solver output: ESR-set members with their joint actions, distributions
/// and expected returns.
pub struct DmoveSolution {
    solution: EsrSolution,
    n_agents: usize,
    dim: usize,
}

/// Create a problem over `n_agents` agents with `dim` objectives.
///
/// Factor `e` has `scope_sizes[e]` agents, listed consecutively in
/// `scope_agents` (so `scope_agents` holds the sum of `scope_sizes`).
///
/// # Safety
/// Array arguments must point to the stated number of elements; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn dmove_problem_new(
    n_agents: usize,
    action_counts: *const usize,
    n_factors: usize,
    scope_sizes: *const usize,
    scope_agents: *const usize,
    dim: usize,
    out: *mut *mut DmoveProblem,
) -> DmoveStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let counts = slice(action_counts, n_agents, "action_counts")?.to_vec();
        let sizes = slice(scope_sizes, n_factors, "scope_sizes")?;
        let flat = slice(scope_agents, sizes.iter().sum(), "scope_agents")?;
        let mut scopes = Vec::with_capacity(n_factors);
        let mut k = 0;
        for &s in sizes {
            scopes.push(flat[k..k + s].to_vec());
            k += s;
        }
        let graph = CoordinationGraph::new(counts, &scopes)?;
        *out = Box::into_raw(Box::new(DmoveProblem {
            graph,
            dim,
            table: TableProvider::default(),
        }));
        Ok(())
    })
}

/// # Safety
/// `problem` must come from [`dmove_problem_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dmove_problem_free(problem: *mut DmoveProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of factors, in the order given to [`dmove_problem_new`].
///
/// # Safety
/// `problem` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dmove_problem_n_factors(problem: *const DmoveProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.graph.factors().len())
}

/// Set the samples of `factor` under the local joint action `local_actions`
/// (one action per scope agent, agents in ascending order). Replaces
/// earlier samples.
///
/// # Safety
/// `local_actions` must hold one entry per agent of the factor's scope and
/// `samples` must hold `n_samples * dim` values.
#[no_mangle]
pub unsafe extern "C" fn dmove_problem_set_distribution(
    problem: *mut DmoveProblem,
    factor: usize,
    local_actions: *const usize,
    n_samples: usize,
    samples: *const f64,
) -> DmoveStatus {
    guard(|| {
        nonnull(problem, "problem")?;
        let p = &mut *problem;
        let scope = p
            .graph
            .factor(factor)
            .ok_or_else(|| invalid(format!("factor {factor} does not exist")))?;
        let actions = slice(local_actions, scope.len(), "local_actions")?.to_vec();
        for (&agent, &a) in scope.agents().iter().zip(&actions) {
            let count = p.graph.action_count(agent);
            if a >= count {
                return Err(Error::InvalidAction {
                    agent,
                    action: a,
                    count,
                }
                .into());
            }
        }
        if n_samples == 0 {
            return Err(Error::EmptyDistribution.into());
        }
        let values = slice(samples, n_samples * p.dim, "samples")?.to_vec();
        let dist = ReturnDistribution::from_samples(p.dim, values)?;
        p.table.insert(factor, actions, dist);
        Ok(())
    })
}

/// # Safety
/// `r_min`/`r_max` must hold `dim` values.
unsafe fn grid_of(
    p: &DmoveProblem,
    r_min: *const f64,
    r_max: *const f64,
    n_bins: usize,
) -> Result<CdfGrid, Fail> {
    let lo = slice(r_min, p.dim, "r_min")?.to_vec();
    let hi = slice(r_max, p.dim, "r_max")?.to_vec();
    Ok(CdfGrid::new(lo, hi, n_bins)?)
}

fn emit(out: *mut *mut DmoveSolution, solution: EsrSolution, n_agents: usize, dim: usize) {
    // SAFETY: callers checked `out` for null before solving.
    unsafe {
        *out = Box::into_raw(Box::new(DmoveSolution {
            solution,
            n_agents,
            dim,
        }))
    };
}

/// Compute the ESR set by variable elimination.
///
/// Dominance is decided on the lattice of `n_bins` points per objective
/// spanning `[r_min, r_max]`. `cap` bounds the samples kept per cross-sum,
/// with 0 meaning no bound. `order` lists every agent once, or is null for
/// the default order.
///
/// # Safety
/// `r_min`/`r_max` must hold `dim` values, `order` (if non-null) one value
/// per agent, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dmove_solve(
    problem: *const DmoveProblem,
    r_min: *const f64,
    r_max: *const f64,
    n_bins: usize,
    cap: usize,
    seed: u64,
    order: *const usize,
    out: *mut *mut DmoveSolution,
) -> DmoveStatus {
    guard(|| {
        nonnull(problem, "problem")?;
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        let p = &*problem;
        let grid = grid_of(p, r_min, r_max, n_bins)?;
        let order = if order.is_null() {
            None
        } else {
            Some(slice(order, p.graph.n_agents_total(), "order")?)
        };
        let cap = (cap > 0).then_some(cap);
        let sol = Dmove::new(grid)
            .with_cap(cap)
            .with_seed(seed)
            .solve(&p.graph, &p.table, order)?;
        emit(out, sol, p.graph.n_agents_total(), p.dim);
        Ok(())
    })
}

/// ESR set by exhaustive enumeration of joint actions, without sample caps.
/// Refuses instances with more than one million joint actions.
///
/// # Safety
/// As for [`dmove_solve`].
#[no_mangle]
pub unsafe extern "C" fn dmove_solve_oracle(
    problem: *const DmoveProblem,
    r_min: *const f64,
    r_max: *const f64,
    n_bins: usize,
    out: *mut *mut DmoveSolution,
) -> DmoveStatus {
    guard(|| {
        nonnull(problem, "problem")?;
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        let p = &*problem;
        let grid = grid_of(p, r_min, r_max, n_bins)?;
        let all = enumerate_joint_returns(&p.graph, &p.table, None, DEFAULT_JOINT_ACTION_LIMIT)?;
        let sol = brute_force_esr_set(&all, &grid)?;
        emit(out, sol, p.graph.n_agents_total(), p.dim);
        Ok(())
    })
}

/// Run `dmove solve` on a run-config file: load the trained checkpoints,
/// solve, and write the configured exports.
///
/// # Safety
/// `config_path` must be a NUL-terminated UTF-8 path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dmove_solve_config(
    config_path: *const c_char,
    out: *mut *mut DmoveSolution,
) -> DmoveStatus {
    guard(|| {
        nonnull(config_path, "config_path")?;
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        let path = CStr::from_ptr(config_path)
            .to_str()
            .map_err(|_| invalid("config_path is not UTF-8"))?;
        let args = RunArgs {
            config: PathBuf::from(path),
            seed: None,
            out: None,
            order: None,
            cap: None,
            bins: None,
            dump_distributions: false,
            no_prune: false,
            resume: false,
        };
        let res = cmd_solve(&args)?;
        let n_agents = res
            .solution
            .members
            .first()
            .map_or(0, |m| m.joint_action.len());
        let dim = res
            .solution
            .members
            .first()
            .map_or(0, |m| m.expected.0.len());
        emit(out, res.solution, n_agents, dim);
        Ok(())
    })
}

/// # Safety
/// `solution` must come from a solve call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dmove_solution_free(solution: *mut DmoveSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Number of ESR-set members.
///
/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dmove_solution_len(solution: *const DmoveSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.solution.len())
}

/// Length of each joint action.
///
/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dmove_solution_n_agents(solution: *const DmoveSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.n_agents)
}

/// Number of objectives.
///
/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dmove_solution_dim(solution: *const DmoveSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.dim)
}

unsafe fn member<'a>(
    solution: *const DmoveSolution,
    k: usize,
) -> Result<(&'a DmoveSolution, &'a dmove::engine::EsrMember), Fail> {
    nonnull(solution, "solution")?;
    let s = &*solution;
    let m = s.solution.members.get(k).ok_or_else(|| {
        invalid(format!(
            "member {k} out of range ({} members)",
            s.solution.len()
        ))
    })?;
    Ok((s, m))
}

/// Copy the joint action of member `k` into `out` (n_agents values).
///
/// # Safety
/// `out` must have room for `dmove_solution_n_agents` values.
#[no_mangle]
pub unsafe extern "C" fn dmove_solution_joint_action(
    solution: *const DmoveSolution,
    k: usize,
    out: *mut usize,
) -> DmoveStatus {
    guard(|| {
        let (s, m) = member(solution, k)?;
        nonnull(out, "out")?;
        ptr::copy_nonoverlapping(m.joint_action.as_ptr(), out, s.n_agents);
        Ok(())
    })
}

/// Copy the expected return of member `k` into `out` (dim values).
///
/// # Safety
/// `out` must have room for `dmove_solution_dim` values.
#[no_mangle]
pub unsafe extern "C" fn dmove_solution_expected(
    solution: *const DmoveSolution,
    k: usize,
    out: *mut f64,
) -> DmoveStatus {
    guard(|| {
        let (s, m) = member(solution, k)?;
        nonnull(out, "out")?;
        ptr::copy_nonoverlapping(m.expected.0.as_ptr(), out, s.dim);
        Ok(())
    })
}

/// Number of samples in the return distribution of member `k`, or 0 when
/// `k` is out of range.
///
/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dmove_solution_n_samples(
    solution: *const DmoveSolution,
    k: usize,
) -> usize {
    member(solution, k).map_or(0, |(_, m)| m.dist.len())
}

/// Copy the samples of member `k` into `out`, row-major.
///
/// # Safety
/// `out` must have room for `dmove_solution_n_samples * dim` values.
#[no_mangle]
pub unsafe extern "C" fn dmove_solution_samples(
    solution: *const DmoveSolution,
    k: usize,
    out: *mut f64,
) -> DmoveStatus {
    guard(|| {
        let (_, m) = member(solution, k)?;
        nonnull(out, "out")?;
        let raw = m.dist.raw();
        ptr::copy_nonoverlapping(raw.as_ptr(), out, raw.len());
        Ok(())
    })
}
