use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::SolverError;
use crate::dataset::FeatureKind;
use crate::Scalar;

/// Assignment of feature rows to per-bus groups.
///
/// Group `s` collects the rows that vanish when bus `s` carries no PMU:
/// `{s, s + N}` for the phasor entries and, in the combined layout, the
/// direct-observation rows `2N + 2 + d` for every endpoint slot `d` of a line
/// incident to `s`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub groups: Vec<Vec<usize>>,
    pub ungrouped: Vec<usize>,
    pub dim: usize,
}

impl GroupPartition {
    /// Checks that groups and ungrouped rows tile `0..dim` exactly.
    pub fn new(groups: Vec<Vec<usize>>, ungrouped: Vec<usize>, dim: usize) -> Result<Self, SolverError> {
        let mut owner = vec![false; dim];
        for &i in groups.iter().flatten().chain(ungrouped.iter()) {
            if i >= dim {
                return Err(SolverError::Partition(format!("row {i} outside 0..{dim}")));
            }
            if std::mem::replace(&mut owner[i], true) {
                return Err(SolverError::Partition(format!("row {i} assigned twice")));
            }
        }
        if let Some(i) = owner.iter().position(|&o| !o) {
            return Err(SolverError::Partition(format!("row {i} unassigned")));
        }
        Ok(Self { groups, ungrouped, dim })
    }

    /// Partition for a feature layout. `direct_rows[s]` lists the
    /// direct-observation slots of bus `s` and is required for the combined
    /// layout only.
    pub fn for_layout(kind: FeatureKind, n_buses: usize, direct_rows: Option<&[Vec<usize>]>) -> Result<Self, SolverError> {
        let n = n_buses;
        let mut groups: Vec<Vec<usize>> = (0..n).map(|s| vec![s, s + n]).collect();
        match (kind, direct_rows) {
            (FeatureKind::Plain, _) => Self::new(groups, vec![], 2 * n),
            (FeatureKind::Extended, _) => Self::new(groups, vec![2 * n, 2 * n + 1], 2 * n + 2),
            (FeatureKind::Combined, Some(d)) => {
                if d.len() != n {
                    return Err(SolverError::Partition(format!("{} direct-row lists for {n} buses", d.len())));
                }
                let total: usize = d.iter().map(Vec::len).sum();
                for (g, rows) in groups.iter_mut().zip(d) {
                    g.extend(rows.iter().map(|&r| 2 * n + 2 + r));
                }
                Self::new(groups, vec![2 * n, 2 * n + 1], 2 * n + 2 + total)
            }
            (FeatureKind::Combined, None) => Err(SolverError::Partition("combined layout needs direct-observation rows".into())),
        }
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Frobenius norm of each group's rows.
    pub fn group_norms<T: Scalar>(&self, beta: &Array2<T>) -> Vec<T> {
        self.groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|&r| beta.row(r).iter().map(|&v| v * v).sum::<T>())
                    .sum::<T>()
                    .sqrt()
            })
            .collect()
    }

    pub fn nonzero_groups<T: Scalar>(&self, beta: &Array2<T>) -> usize {
        self.group_norms(beta).iter().filter(|&&q| q != T::zero()).count()
    }

    /// Grouped rows belonging to no group in `selected`.
    pub fn rows_outside(&self, selected: &[usize]) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .groups
            .iter()
            .enumerate()
            .filter(|(s, _)| !selected.contains(s))
            .flat_map(|(_, g)| g.iter().copied())
            .collect();
        rows.sort_unstable();
        rows
    }
}

/// Closed-form proximal step of `t · Σ_s ‖[γ]_s‖` with one threshold per
/// group: each block is scaled by `max(‖γ‖ − t, 0) / (max(‖γ‖ − t, 0) + t)`.
pub fn group_prox_each<T: Scalar>(gamma: &Array2<T>, thresholds: &[T], partition: &GroupPartition) -> Array2<T> {
    let mut out = gamma.clone();
    let norms = partition.group_norms(gamma);
    for ((g, &t), &norm) in partition.groups.iter().zip(thresholds).zip(&norms) {
        if t == T::zero() {
            continue;
        }
        let excess = (norm - t).max(T::zero());
        let factor = excess / (excess + t);
        for &r in g {
            out.row_mut(r).mapv_inplace(|v| v * factor);
        }
    }
    out
}

/// [`group_prox_each`] with the same threshold on every group.
pub fn group_prox<T: Scalar>(gamma: &Array2<T>, threshold: T, partition: &GroupPartition) -> Array2<T> {
    assert!(threshold >= T::zero(), "prox threshold must be non-negative");
    group_prox_each(gamma, &vec![threshold; partition.n_groups()], partition)
}
