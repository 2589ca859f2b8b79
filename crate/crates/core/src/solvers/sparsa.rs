use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{group_prox_each, GroupPartition, SolverError, SolverOptions};
use crate::dataset::Dataset;
use crate::mlr::{objective, CoefficientMatrix};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Relative objective change fell below the tolerance.
    ObjectiveStalled,
    /// The step parameter passed `alpha_max` at a (numerically) stationary point.
    AlphaLimit,
    /// The step parameter passed `alpha_max` away from a stationary point.
    LineSearchFailure,
    IterationCap,
}

/// One accepted SpaRSA step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Regularized objective `f(β) − τ·w(β)` after the step.
    pub objective: f64,
    pub alpha: f64,
    pub nonzero_groups: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedSolution<T> {
    pub beta: CoefficientMatrix<T>,
    /// `q_s(β)` for every group of the partition.
    pub group_norms: Vec<T>,
    /// `f(β) − τ·Σ_{s penalized} q_s(β)`.
    pub objective: T,
    pub log_likelihood: T,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

impl<T: Scalar> RegularizedSolution<T> {
    pub fn nonzero_groups(&self) -> Vec<usize> {
        (0..self.group_norms.len())
            .filter(|&s| self.group_norms[s] != T::zero())
            .collect()
    }
}

/// Maximizes `f(β) − τ·Σ_{s ∈ penalized} ‖β_{P_s}‖` by proximal gradient
/// steps with Barzilai–Borwein initial step parameters and a monotone
/// sufficient-decrease safeguard. Groups outside `penalized` get threshold 0.
pub fn sparsa_solve<T: Scalar>(
    data: &Dataset<T>,
    partition: &GroupPartition,
    tau: T,
    penalized: &[usize],
    beta0: &CoefficientMatrix<T>,
    opts: &SolverOptions,
) -> Result<RegularizedSolution<T>, SolverError> {
    opts.validate()?;
    beta0.check_dataset(data)?;
    if partition.dim != data.dim() {
        return Err(SolverError::Input(format!(
            "partition covers {} rows, dataset has {} features",
            partition.dim,
            data.dim()
        )));
    }
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(SolverError::Input(format!("tau must be positive, got {tau}")));
    }
    let mut is_penalized = vec![false; partition.n_groups()];
    for &s in penalized {
        if s >= partition.n_groups() {
            return Err(SolverError::Input(format!("penalized group {s} outside partition")));
        }
        is_penalized[s] = true;
    }

    let eval = |beta: &Array2<T>| {
        let (f, g) = objective(beta.view(), data.features.view(), &data.labels, true);
        let norms = partition.group_norms(beta);
        let w: T = norms
            .iter()
            .zip(&is_penalized)
            .filter(|(_, &p)| p)
            .map(|(&q, _)| q)
            .sum();
        (f, f - tau * w, g.expect("gradient requested"), norms)
    };
    let thresholds = |alpha: T| -> Vec<T> {
        is_penalized
            .iter()
            .map(|&p| if p { tau / alpha } else { T::zero() })
            .collect()
    };

    let alpha_min = T::of(opts.sparsa_alpha_min);
    let alpha_max = T::of(opts.sparsa_alpha_max);
    let sigma = T::of(opts.sufficient_decrease);
    let two = T::of(2.0);

    let mut x = beta0.entries.clone();
    let (mut f, mut obj, mut grad, mut norms) = eval(&x);
    if !obj.is_finite() {
        return Err(SolverError::NonFinite { iteration: 0 });
    }
    let mut alpha = T::one().max(alpha_min).min(alpha_max);
    let mut trace = Vec::new();
    let mut termination = Termination::IterationCap;
    let mut iterations = 0;

    'outer: while iterations < opts.sparsa_max_iterations {
        let (x_new, f_new, obj_new, grad_new, norms_new) = loop {
            let mut gamma = x.clone();
            gamma.scaled_add(T::one() / alpha, &grad);
            let cand = group_prox_each(&gamma, &thresholds(alpha), partition);
            let step_sq: T = (&cand - &x).iter().map(|&v| v * v).sum();
            let (fc, oc, gc, nc) = eval(&cand);
            if oc.is_finite() && oc >= obj + sigma / two * alpha * step_sq {
                break (cand, fc, oc, gc, nc);
            }
            alpha *= two;
            if alpha > alpha_max {
                termination = if stationary(&x, &grad, &thresholds, partition, opts) {
                    Termination::AlphaLimit
                } else {
                    Termination::LineSearchFailure
                };
                break 'outer;
            }
        };
        iterations += 1;

        let s = &x_new - &x;
        // y is the change in the gradient of −f
        let y = &grad - &grad_new;
        let ss: T = s.iter().map(|&v| v * v).sum();
        let sy: T = s.iter().zip(y.iter()).map(|(&a, &b)| a * b).sum();
        trace.push(TraceRow {
            iteration: iterations,
            objective: obj_new.as_f64(),
            alpha: alpha.as_f64(),
            nonzero_groups: norms_new.iter().filter(|&&q| q != T::zero()).count(),
        });
        let change = (obj_new - obj).abs();
        let scale = obj.abs().max(T::one());
        x = x_new;
        f = f_new;
        obj = obj_new;
        grad = grad_new;
        norms = norms_new;
        if ss == T::zero() || change <= T::of(opts.objective_tolerance) * scale {
            termination = Termination::ObjectiveStalled;
            break;
        }
        alpha = if sy > T::zero() { sy / ss } else { alpha }.max(alpha_min).min(alpha_max);
    }

    if termination == Termination::LineSearchFailure {
        log::warn!("SpaRSA line search failed after {iterations} iterations; returning last iterate");
    }
    Ok(RegularizedSolution {
        beta: CoefficientMatrix::from_array(x),
        group_norms: norms,
        objective: obj,
        log_likelihood: f,
        converged: matches!(termination, Termination::ObjectiveStalled | Termination::AlphaLimit),
        termination,
        iterations,
        trace,
    })
}

/// Tests the prox-gradient mapping at unit step against the gradient tolerance.
fn stationary<T: Scalar>(
    x: &Array2<T>,
    grad: &Array2<T>,
    thresholds: &impl Fn(T) -> Vec<T>,
    partition: &GroupPartition,
    opts: &SolverOptions,
) -> bool {
    let mut gamma = x.clone();
    gamma += grad;
    let moved = group_prox_each(&gamma, &thresholds(T::one()), partition) - x;
    let g_inf = grad.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let m_inf = moved.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    m_inf <= T::of(opts.gradient_tolerance).max(T::of(1e-6) * g_inf)
}

/// Writes a trace as CSV with header `iteration,objective,alpha,nonzero_groups`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureKind, Observation};
    use ndarray::array;

    fn toy() -> Dataset<f64> {
        let rows = vec![
            (array![1.0, 0.3, 0.2, -0.1, 0.05, 0.05], 0),
            (array![0.8, -0.2, 0.1, 0.4, 0.05, 0.05], 1),
            (array![-0.5, 0.1, -0.3, 0.0, 0.05, 0.05], 2),
            (array![0.1, 0.9, -0.2, 0.3, 0.05, 0.05], 0),
            (array![-0.4, -0.6, 0.5, 0.2, 0.05, 0.05], 1),
            (array![0.3, 0.2, 0.7, -0.8, 0.05, 0.05], 2),
        ];
        let obs = rows
            .into_iter()
            .map(|(features, label)| Observation {
                features,
                label,
                timepoint: 0,
            })
            .collect();
        Dataset::from_observations(obs, 3, 2, FeatureKind::Extended, 0.05).unwrap()
    }

    #[test]
    fn large_tau_zeroes_penalized_groups() {
        let d = toy();
        let p = GroupPartition::for_layout(FeatureKind::Extended, 2, None).unwrap();
        let sol = sparsa_solve(&d, &p, 1e3, &[0, 1], &CoefficientMatrix::zeros(6, 3), &SolverOptions::default()).unwrap();
        assert!(sol.group_norms.iter().all(|&q| q == 0.0));
        assert!(sol.converged);
    }

    #[test]
    fn unpenalized_group_survives() {
        let d = toy();
        let p = GroupPartition::for_layout(FeatureKind::Extended, 2, None).unwrap();
        let sol = sparsa_solve(&d, &p, 1e3, &[1], &CoefficientMatrix::zeros(6, 3), &SolverOptions::default()).unwrap();
        assert!(sol.group_norms[0] > 0.0);
        assert_eq!(sol.group_norms[1], 0.0);
        assert_eq!(sol.nonzero_groups(), vec![0]);
    }

    #[test]
    fn trace_is_monotone_and_serializes() {
        let d = toy();
        let p = GroupPartition::for_layout(FeatureKind::Extended, 2, None).unwrap();
        let sol = sparsa_solve(&d, &p, 0.3, &[0, 1], &CoefficientMatrix::zeros(6, 3), &SolverOptions::default()).unwrap();
        assert!(!sol.trace.is_empty());
        assert!(sol.trace.windows(2).all(|w| w[1].objective >= w[0].objective));
        let mut buf = Vec::new();
        write_trace_csv(&sol.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,objective,alpha,nonzero_groups\n"));
        assert_eq!(text.lines().count(), sol.trace.len() + 1);
    }

    #[test]
    fn rejects_bad_tau_and_groups() {
        let d = toy();
        let p = GroupPartition::for_layout(FeatureKind::Extended, 2, None).unwrap();
        let b = CoefficientMatrix::zeros(6, 3);
        let o = SolverOptions::default();
        assert!(sparsa_solve(&d, &p, 0.0, &[0], &b, &o).is_err());
        assert!(sparsa_solve(&d, &p, 1.0, &[5], &b, &o).is_err());
    }
}
