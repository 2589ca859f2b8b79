//! Direct line observations: the `2K × K` indicator block `L`, the per-bus
//! slot sets `D_s`, and the four ways of combining direct detections with
//! the phasor-based classifier.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case_io::OutageLine;
use crate::dataset::{Dataset, DatasetError, FeatureKind, Observation};
use crate::mlr::{class_probabilities, CoefficientMatrix, ModelError};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum DirectObsError {
    #[error("eta must be positive, got {0}")]
    Eta(f64),
    #[error("strategy {strategy:?} needs a {expected:?} model, got {got:?}")]
    KindMismatch {
        strategy: StrategyKind,
        expected: FeatureKind,
        got: FeatureKind,
    },
    #[error("prescreen bundle lacks a reduced model for {0} unobservable classes")]
    MissingReduced(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Column `k` holds `η` at rows `2k` and `2k + 1`, one per endpoint of line `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectObservationMatrix {
    pub eta: f64,
    /// Endpoint buses of each class; row `2k + i` belongs to `endpoints[k][i]`.
    pub endpoints: Vec<[usize; 2]>,
}

pub fn build_l(lines: &[OutageLine], eta: f64) -> Result<DirectObservationMatrix, DirectObsError> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(DirectObsError::Eta(eta));
    }
    Ok(DirectObservationMatrix {
        eta,
        endpoints: lines.iter().map(|l| l.endpoints).collect(),
    })
}

impl DirectObservationMatrix {
    pub fn n_classes(&self) -> usize {
        self.endpoints.len()
    }

    pub fn column<T: Scalar>(&self, k: usize) -> Array1<T> {
        let mut c = Array1::zeros(2 * self.n_classes());
        c[2 * k] = T::of(self.eta);
        c[2 * k + 1] = T::of(self.eta);
        c
    }

    /// `D_s = {2k + i : endpoints[k][i] = s}` for every bus `s`.
    pub fn direct_rows(&self, n_buses: usize) -> Vec<Vec<usize>> {
        let mut d = vec![Vec::new(); n_buses];
        for (k, ends) in self.endpoints.iter().enumerate() {
            for (i, &s) in ends.iter().enumerate() {
                d[s].push(2 * k + i);
            }
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Indirect,
    Combined,
    Prescreen,
    Postscreen,
}

impl std::str::FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "indirect" => Ok(Self::Indirect),
            "combined" => Ok(Self::Combined),
            "prescreen" => Ok(Self::Prescreen),
            "postscreen" => Ok(Self::Postscreen),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

impl StrategyKind {
    /// Feature layout the strategy's main model consumes.
    pub fn feature_kind(self) -> FeatureKind {
        match self {
            StrategyKind::Combined => FeatureKind::Combined,
            _ => FeatureKind::Extended,
        }
    }
}

/// A line is directly observable when one of its endpoints is instrumented.
/// With `reference_bus = Some(r)`, a PMU at `r` only supplies the angle
/// reference and does not observe its incident lines.
pub fn observable_classes(lines: &[[usize; 2]], instrumented: &[usize], reference_bus: Option<usize>) -> Vec<bool> {
    lines
        .iter()
        .map(|ends| {
            ends.iter()
                .any(|s| instrumented.contains(s) && Some(*s) != reference_bus)
        })
        .collect()
}

/// Training rows of classes not directly observable, relabelled to
/// `0..K′`; returns the dataset and, per reduced class, its full class index.
pub fn reduced_dataset<T: Scalar>(data: &Dataset<T>, observable: &[bool]) -> Result<(Dataset<T>, Vec<usize>), DirectObsError> {
    let class_map: Vec<usize> = (0..data.n_classes).filter(|&k| !observable[k]).collect();
    let mut new_label = vec![usize::MAX; data.n_classes];
    for (i, &k) in class_map.iter().enumerate() {
        new_label[k] = i;
    }
    let obs = (0..data.len())
        .filter(|&i| !observable[data.labels[i]])
        .map(|i| {
            let o = data.observation(i);
            Observation {
                label: new_label[o.label],
                ..o
            }
        })
        .collect();
    let reduced = Dataset::from_observations(obs, class_map.len(), data.n_buses, data.feature_kind, data.rho)?;
    Ok((reduced, class_map))
}

/// Everything a strategy needs at classification time.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyBundle<T> {
    pub kind: StrategyKind,
    /// Extended model for indirect/postscreen, combined model for combined;
    /// unused by prescreen except for its class count.
    pub model: CoefficientMatrix<T>,
    pub model_kind: FeatureKind,
    /// Per class: detected directly by an instrumented endpoint.
    pub observable: Vec<bool>,
    /// Prescreen only: model over the unobservable classes and their full indices.
    pub reduced: Option<(CoefficientMatrix<T>, Vec<usize>)>,
}

impl<T: Scalar> StrategyBundle<T> {
    pub fn new(
        kind: StrategyKind,
        model: CoefficientMatrix<T>,
        model_kind: FeatureKind,
        observable: Vec<bool>,
        reduced: Option<(CoefficientMatrix<T>, Vec<usize>)>,
    ) -> Result<Self, DirectObsError> {
        if model_kind != kind.feature_kind() {
            return Err(DirectObsError::KindMismatch {
                strategy: kind,
                expected: kind.feature_kind(),
                got: model_kind,
            });
        }
        let hidden = observable.iter().filter(|&&o| !o).count();
        if kind == StrategyKind::Prescreen && hidden > 0 && reduced.is_none() {
            return Err(DirectObsError::MissingReduced(hidden));
        }
        Ok(Self {
            kind,
            model,
            model_kind,
            observable,
            reduced,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.observable.len()
    }

    /// Probabilities over all classes for one observation. `true_class` is
    /// the line that actually failed; it only matters through whether its
    /// outage is directly detected.
    pub fn classify(&self, x: ArrayView1<T>, true_class: usize) -> Result<Array1<T>, DirectObsError> {
        let k = self.n_classes();
        let one_hot = || {
            let mut p = Array1::zeros(k);
            p[true_class] = T::one();
            p
        };
        Ok(match self.kind {
            StrategyKind::Indirect | StrategyKind::Combined => class_probabilities(&self.model, x)?,
            StrategyKind::Postscreen if self.observable[true_class] => one_hot(),
            StrategyKind::Postscreen => class_probabilities(&self.model, x)?,
            StrategyKind::Prescreen if self.observable[true_class] => one_hot(),
            StrategyKind::Prescreen => {
                let (beta, map) = self.reduced.as_ref().ok_or(DirectObsError::MissingReduced(0))?;
                let pr = class_probabilities(beta, x)?;
                let mut p = Array1::zeros(k);
                for (i, &full) in map.iter().enumerate() {
                    p[full] = pr[i];
                }
                p
            }
        })
    }
}

/// Postscreening may only improve top-1 accuracy over the indirect strategy.
pub fn postscreen_dominance_check(indirect_top1: f64, postscreen_top1: f64) -> bool {
    postscreen_top1 >= indirect_top1
}
