//! PMU placement: one-shot group-LASSO ranking and the greedy heuristic that
//! re-solves with the chosen groups unpenalized and adds the strongest new one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case_io::PowerSystemCase;
use crate::dataset::Dataset;
use crate::mlr::CoefficientMatrix;
use crate::solvers::{debias, sparsa_solve, GroupPartition, SolverError, SolverOptions};
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("only {achievable} groups are nonzero at this tau, {requested} requested; lower tau")]
    TooFewGroups { achievable: usize, requested: usize },
    #[error("invalid placement request: {0}")]
    Request(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    GroupLasso,
    Greedy,
}

impl std::str::FromStr for Heuristic {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "group_lasso" | "grouplasso" | "group-lasso" => Ok(Self::GroupLasso),
            "greedy" => Ok(Self::Greedy),
            other => Err(format!("unknown heuristic `{other}`")),
        }
    }
}

/// One selection decision with the group norms it was based on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub step: usize,
    /// Internal index of the bus chosen at this step.
    pub chosen: usize,
    pub group_norms: Vec<f64>,
    pub sparsa_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementResult<T> {
    pub heuristic: Heuristic,
    pub tau: f64,
    /// Internal bus indices in selection order (forced buses first).
    pub selected: Vec<usize>,
    pub forced: Vec<usize>,
    /// Fewer than the requested buses: every unselected group was zero.
    pub short: bool,
    pub debiased_beta: CoefficientMatrix<T>,
    pub debiased_log_likelihood: T,
    pub trace: Vec<SelectionStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GreedyOptions {
    /// Start each SpaRSA solve from the previous step's solution.
    pub warm_start: bool,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self { warm_start: true }
    }
}

fn check_request(n_groups: usize, r: usize, fixed: &[usize]) -> Result<(), PlacementError> {
    if r == 0 || r > n_groups {
        return Err(PlacementError::Request(format!("cannot place {r} PMUs on {n_groups} buses")));
    }
    if let Some(&s) = fixed.iter().find(|&&s| s >= n_groups) {
        return Err(PlacementError::Request(format!("bus index {s} outside 0..{n_groups}")));
    }
    if fixed.len() > r {
        return Err(PlacementError::Request(format!("{} buses fixed but only {r} requested", fixed.len())));
    }
    Ok(())
}

fn dedup_in_order(v: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    for &s in v {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Restriction of `beta` to the rows of `selected` groups plus ungrouped rows.
fn restrict<T: Scalar>(beta: &CoefficientMatrix<T>, partition: &GroupPartition, selected: &[usize]) -> CoefficientMatrix<T> {
    let mut out = beta.clone();
    for r in partition.rows_outside(selected) {
        out.entries.row_mut(r).fill(T::zero());
    }
    out
}

/// Indices of unselected groups ordered by decreasing norm, lowest index
/// first among equals; zero-norm groups are left out.
fn ranked_candidates<T: Scalar>(norms: &[T], exclude: &[usize]) -> Vec<usize> {
    let mut c: Vec<usize> = (0..norms.len())
        .filter(|s| !exclude.contains(s) && norms[*s] > T::zero())
        .collect();
    c.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms").then(a.cmp(&b)));
    c
}

/// Solves the penalized problem once with `forced` groups unpenalized, keeps
/// the `r` groups of largest norm (forced ones always) and debiases.
pub fn group_lasso_select<T: Scalar>(
    data: &Dataset<T>,
    partition: &GroupPartition,
    tau: f64,
    r: usize,
    forced: &[usize],
    opts: &SolverOptions,
) -> Result<PlacementResult<T>, PlacementError> {
    let n = partition.n_groups();
    let forced = dedup_in_order(forced);
    check_request(n, r, &forced)?;
    let penalized: Vec<usize> = (0..n).filter(|s| !forced.contains(s)).collect();
    let zero = CoefficientMatrix::zeros(data.dim(), data.n_classes);
    let sol = sparsa_solve(data, partition, T::of(tau), &penalized, &zero, opts)?;
    let ranked = ranked_candidates(&sol.group_norms, &forced);
    let mut selected = forced.clone();
    if r == n {
        selected.extend((0..n).filter(|s| !forced.contains(s)));
    } else {
        let need = r - forced.len();
        if ranked.len() < need {
            return Err(PlacementError::TooFewGroups {
                achievable: forced.len() + ranked.len(),
                requested: r,
            });
        }
        selected.extend(&ranked[..need]);
    }
    let start = restrict(&sol.beta, partition, &selected);
    let fit = debias(data, &selected, partition, Some(&start), opts)?;
    let norms: Vec<f64> = sol.group_norms.iter().map(|q| q.as_f64()).collect();
    let trace = selected
        .iter()
        .enumerate()
        .map(|(i, &s)| SelectionStep {
            step: i + 1,
            chosen: s,
            group_norms: norms.clone(),
            sparsa_iterations: sol.iterations,
        })
        .collect();
    Ok(PlacementResult {
        heuristic: Heuristic::GroupLasso,
        tau,
        selected,
        forced,
        short: false,
        debiased_beta: fit.beta,
        debiased_log_likelihood: fit.log_likelihood,
        trace,
    })
}

/// Greedy heuristic: starting from `initial`, repeatedly solve with the
/// selected groups unpenalized and add the unselected group of largest
/// norm, until `r` buses are chosen or every unselected group is zero.
pub fn greedy_select<T: Scalar>(
    data: &Dataset<T>,
    partition: &GroupPartition,
    tau: f64,
    r: usize,
    initial: &[usize],
    opts: &SolverOptions,
    greedy: GreedyOptions,
) -> Result<PlacementResult<T>, PlacementError> {
    let n = partition.n_groups();
    let initial = dedup_in_order(initial);
    check_request(n, r, &initial)?;
    let mut selected = initial.clone();
    let zero = CoefficientMatrix::zeros(data.dim(), data.n_classes);
    let mut warm = zero.clone();
    let mut trace = Vec::new();
    let mut short = false;
    while selected.len() < r {
        let penalized: Vec<usize> = (0..n).filter(|s| !selected.contains(s)).collect();
        let start = if greedy.warm_start { &warm } else { &zero };
        let sol = sparsa_solve(data, partition, T::of(tau), &penalized, start, opts)?;
        let Some(&best) = ranked_candidates(&sol.group_norms, &selected).first() else {
            log::info!("greedy placement stopped at {} buses: no unselected group is nonzero", selected.len());
            short = true;
            break;
        };
        selected.push(best);
        trace.push(SelectionStep {
            step: trace.len() + 1,
            chosen: best,
            group_norms: sol.group_norms.iter().map(|q| q.as_f64()).collect(),
            sparsa_iterations: sol.iterations,
        });
        warm = sol.beta;
    }
    if selected.is_empty() {
        return Err(PlacementError::TooFewGroups {
            achievable: 0,
            requested: r,
        });
    }
    let start = restrict(&warm, partition, &selected);
    let fit = debias(data, &selected, partition, Some(&start), opts)?;
    Ok(PlacementResult {
        heuristic: Heuristic::Greedy,
        tau,
        selected,
        forced: initial,
        short,
        debiased_beta: fit.beta,
        debiased_log_likelihood: fit.log_likelihood,
        trace,
    })
}

/// Serializable view of a placement with original bus ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementReport {
    pub heuristic: Heuristic,
    pub tau: f64,
    pub requested: usize,
    pub short: bool,
    /// Original ids in selection order.
    pub selected_buses: Vec<u32>,
    pub forced_buses: Vec<u32>,
    pub debiased_log_likelihood: f64,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub chosen_bus: u32,
    pub sparsa_iterations: usize,
    /// `q_s` keyed by original bus id, in bus order.
    pub group_norms: Vec<(u32, f64)>,
}

impl<T: Scalar> PlacementResult<T> {
    pub fn report(&self, case: &PowerSystemCase, requested: usize) -> PlacementReport {
        let id = |s: usize| case.bus_id(s);
        PlacementReport {
            heuristic: self.heuristic,
            tau: self.tau,
            requested,
            short: self.short,
            selected_buses: self.selected.iter().map(|&s| id(s)).collect(),
            forced_buses: self.forced.iter().map(|&s| id(s)).collect(),
            debiased_log_likelihood: self.debiased_log_likelihood.as_f64(),
            trace: self
                .trace
                .iter()
                .map(|t| TraceEntry {
                    step: t.step,
                    chosen_bus: id(t.chosen),
                    sparsa_iterations: t.sparsa_iterations,
                    group_norms: t.group_norms.iter().enumerate().map(|(s, &q)| (id(s), q)).collect(),
                })
                .collect(),
        }
    }

    /// Selected original ids in ascending order, forced ones starred, as in
    /// `{1*, 11, 12}`.
    pub fn bus_set_string(&self, case: &PowerSystemCase) -> String {
        let mut v = self.selected.clone();
        v.sort_unstable();
        let parts: Vec<String> = v
            .iter()
            .map(|&s| {
                let star = if self.forced.contains(&s) { "*" } else { "" };
                format!("{}{star}", case.bus_id(s))
            })
            .collect();
        format!("{{{}}}", parts.join(", "))
    }
}
