use std::collections::VecDeque;

use ndarray::Array2;

use super::{GroupPartition, SolverError, SolverOptions};
use crate::dataset::Dataset;
use crate::mlr::{objective, CoefficientMatrix};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult<T> {
    pub beta: CoefficientMatrix<T>,
    /// Unpenalized log-likelihood at `beta`.
    pub log_likelihood: T,
    pub iterations: usize,
    /// Whether the gradient tolerance was met (as opposed to the iteration
    /// cap or a failed line search).
    pub converged: bool,
    pub gradient_norm: T,
}

struct Problem<'a, T> {
    data: &'a Dataset<T>,
    fixed: Vec<bool>,
    ridge: T,
}

impl<T: Scalar> Problem<'_, T> {
    /// Minimization form `−f(β) + ridge·‖β‖²` and its gradient with pinned
    /// rows zeroed.
    fn eval(&self, beta: &Array2<T>) -> (T, Array2<T>) {
        let (f, g) = objective(beta.view(), self.data.features.view(), &self.data.labels, true);
        let mut g = g.expect("gradient requested");
        g.mapv_inplace(|v| -v);
        let mut phi = -f;
        if self.ridge > T::zero() {
            phi += self.ridge * beta.iter().map(|&v| v * v).sum::<T>();
            g.zip_mut_with(beta, |gi, &bi| *gi += T::of(2.0) * self.ridge * bi);
        }
        for (r, &fixed) in self.fixed.iter().enumerate() {
            if fixed {
                g.row_mut(r).fill(T::zero());
            }
        }
        (phi, g)
    }
}

fn dot<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

fn inf_norm<T: Scalar>(a: &Array2<T>) -> T {
    a.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
}

/// Maximizes the log-likelihood over the rows not listed in
/// `fixed_zero_rows`; those rows are zeroed at the start and never move.
pub fn lbfgs_maximize<T: Scalar>(
    data: &Dataset<T>,
    beta0: &CoefficientMatrix<T>,
    fixed_zero_rows: &[usize],
    opts: &SolverOptions,
) -> Result<LbfgsResult<T>, SolverError> {
    opts.validate()?;
    beta0.check_dataset(data)?;
    let d = beta0.n_features();
    let mut fixed = vec![false; d];
    for &r in fixed_zero_rows {
        if r >= d {
            return Err(SolverError::Input(format!("fixed row {r} outside 0..{d}")));
        }
        fixed[r] = true;
    }
    let problem = Problem {
        data,
        fixed,
        ridge: T::of(opts.ridge),
    };

    let mut x = beta0.entries.clone();
    for (r, &f) in problem.fixed.iter().enumerate() {
        if f {
            x.row_mut(r).fill(T::zero());
        }
    }
    let (mut phi, mut g) = problem.eval(&x);
    if !phi.is_finite() {
        return Err(SolverError::NonFinite { iteration: 0 });
    }

    let tol = T::of(opts.gradient_tolerance);
    let mut memory: VecDeque<(Array2<T>, Array2<T>, T)> = VecDeque::with_capacity(opts.lbfgs_memory);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        if inf_norm(&g) <= tol {
            converged = true;
            break;
        }
        let mut dir = two_loop(&g, &memory);
        let mut slope = dot(&g, &dir);
        if !(slope < T::zero()) {
            memory.clear();
            dir = g.mapv(|v| -v);
            slope = dot(&g, &dir);
        }
        let t0 = if memory.is_empty() {
            T::one().min(T::one() / inf_norm(&g))
        } else {
            T::one()
        };
        let Some((t, phi_t, g_t)) = wolfe_search(&problem, &x, phi, slope, &dir, t0) else {
            log::debug!("L-BFGS line search failed at iteration {iterations}");
            break;
        };
        let s = dir.mapv(|v| v * t);
        let y = &g_t - &g;
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y) {
            if memory.len() == opts.lbfgs_memory {
                memory.pop_front();
            }
            memory.push_back((s.clone(), y, T::one() / sy));
        }
        x += &s;
        phi = phi_t;
        g = g_t;
        iterations += 1;
    }
    let gradient_norm = inf_norm(&g);
    if !converged && gradient_norm <= tol {
        converged = true;
    }
    let log_likelihood = objective(x.view(), data.features.view(), &data.labels, false).0;
    Ok(LbfgsResult {
        beta: CoefficientMatrix::from_array(x),
        log_likelihood,
        iterations,
        converged,
        gradient_norm,
    })
}

fn two_loop<T: Scalar>(g: &Array2<T>, memory: &VecDeque<(Array2<T>, Array2<T>, T)>) -> Array2<T> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = *rho * dot(s, &q);
        q.scaled_add(-a, y);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.mapv_inplace(|v| v * gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        q.scaled_add(a - b, s);
    }
    q.mapv_inplace(|v| -v);
    q
}

/// Bisection search for a step meeting the weak Wolfe conditions.
fn wolfe_search<T: Scalar>(
    problem: &Problem<'_, T>,
    x: &Array2<T>,
    phi: T,
    slope: T,
    dir: &Array2<T>,
    t0: T,
) -> Option<(T, T, Array2<T>)> {
    let c1 = T::of(1e-4);
    let c2 = T::of(0.9);
    let mut lo = T::zero();
    let mut hi = T::infinity();
    let mut t = t0;
    let mut best: Option<(T, T, Array2<T>)> = None;
    for _ in 0..60 {
        let mut trial = x.clone();
        trial.scaled_add(t, dir);
        let (phi_t, g_t) = problem.eval(&trial);
        if !phi_t.is_finite() || phi_t > phi + c1 * t * slope {
            hi = t;
        } else if dot(&g_t, dir) < c2 * slope {
            lo = t;
            best = Some((t, phi_t, g_t));
        } else {
            return Some((t, phi_t, g_t));
        }
        t = if hi.is_finite() { (lo + hi) / T::of(2.0) } else { t * T::of(2.0) };
    }
    // sufficient decrease without curvature still makes progress
    best
}

/// Refits the unpenalized model on the support of `selected` groups.
/// Ungrouped rows are always free. Starts from `beta0` (restricted to the
/// support) or from zero.
pub fn debias<T: Scalar>(
    data: &Dataset<T>,
    selected: &[usize],
    partition: &GroupPartition,
    beta0: Option<&CoefficientMatrix<T>>,
    opts: &SolverOptions,
) -> Result<LbfgsResult<T>, SolverError> {
    if selected.is_empty() {
        return Err(SolverError::Input("debias needs at least one selected group".into()));
    }
    if let Some(&s) = selected.iter().find(|&&s| s >= partition.n_groups()) {
        return Err(SolverError::Input(format!("group {s} outside partition")));
    }
    if partition.dim != data.dim() {
        return Err(SolverError::Input(format!(
            "partition covers {} rows, dataset has {} features",
            partition.dim,
            data.dim()
        )));
    }
    let start = beta0
        .cloned()
        .unwrap_or_else(|| CoefficientMatrix::zeros(data.dim(), data.n_classes));
    lbfgs_maximize(data, &start, &partition.rows_outside(selected), opts)
}
