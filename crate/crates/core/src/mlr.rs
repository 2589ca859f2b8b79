//! Multinomial logistic regression: softmax class probabilities over linear
//! scores `⟨β_k, x⟩`, the log-likelihood and its gradient.
//!
//! Class indices are 0-based. All reductions run in a fixed order so results
//! are reproducible bit for bit.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{BinError, BinReader, BinWriter};
use crate::dataset::{Dataset, FeatureKind};
use crate::solvers::GroupPartition;
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("feature vector has length {got}, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("label {label} outside 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("dataset has {got} classes, model has {expected}")]
    ClassCount { expected: usize, got: usize },
    #[error("empty dataset")]
    Empty,
}

/// Coefficients `β`, one column per class and one row per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix<T> {
    pub entries: Array2<T>,
}

impl<T: Scalar> CoefficientMatrix<T> {
    pub fn zeros(n_features: usize, n_classes: usize) -> Self {
        Self {
            entries: Array2::zeros((n_features, n_classes)),
        }
    }

    pub fn from_array(entries: Array2<T>) -> Self {
        Self { entries }
    }

    pub fn n_features(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.entries.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.is_finite())
    }

    /// Frobenius norm of the rows in `rows`.
    pub fn rows_norm(&self, rows: &[usize]) -> T {
        rows.iter()
            .flat_map(|&r| self.entries.row(r).to_vec())
            .map(|v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn scores(&self, x: ArrayView1<T>) -> Array1<T> {
        x.dot(&self.entries)
    }

    pub fn cast<U: Scalar>(&self) -> CoefficientMatrix<U> {
        CoefficientMatrix {
            entries: self.entries.mapv(|v| U::of(v.as_f64())),
        }
    }

    fn check_input(&self, x: ArrayView1<T>) -> Result<(), ModelError> {
        if x.len() != self.n_features() {
            return Err(ModelError::Dimension {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("feature vector"));
        }
        if !self.is_finite() {
            return Err(ModelError::NonFinite("coefficients"));
        }
        Ok(())
    }

    pub(crate) fn check_dataset(&self, data: &Dataset<T>) -> Result<(), ModelError> {
        if data.is_empty() {
            return Err(ModelError::Empty);
        }
        if data.dim() != self.n_features() {
            return Err(ModelError::Dimension {
                expected: self.n_features(),
                got: data.dim(),
            });
        }
        if data.n_classes != self.n_classes() {
            return Err(ModelError::ClassCount {
                expected: self.n_classes(),
                got: data.n_classes,
            });
        }
        if let Some(&label) = data.labels.iter().find(|&&l| l >= self.n_classes()) {
            return Err(ModelError::LabelOutOfRange {
                label,
                n_classes: self.n_classes(),
            });
        }
        Ok(())
    }
}

/// Max-shifted softmax of a score vector; returns `(probabilities, log Σ exp)`.
pub fn softmax<T: Scalar>(scores: ArrayView1<T>) -> (Array1<T>, T) {
    let m = scores.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let e = scores.mapv(|s| (s - m).exp());
    let z: T = e.iter().copied().sum();
    (e / z, m + z.ln())
}

pub fn class_probabilities<T: Scalar>(beta: &CoefficientMatrix<T>, x: ArrayView1<T>) -> Result<Array1<T>, ModelError> {
    beta.check_input(x)?;
    Ok(softmax(beta.scores(x).view()).0)
}

/// Index of the largest score; the lowest index wins ties.
pub fn predict<T: Scalar>(beta: &CoefficientMatrix<T>, x: ArrayView1<T>) -> Result<usize, ModelError> {
    beta.check_input(x)?;
    Ok(argmax(beta.scores(x).view()))
}

pub fn argmax<T: Scalar>(v: ArrayView1<T>) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate() {
        if s > v[best] {
            best = i;
        }
    }
    best
}

/// `1 + #{k : p_k > p_y}`; ties count in favour of `y`.
pub fn rank_in<T: Scalar>(probabilities: ArrayView1<T>, y: usize) -> usize {
    let py = probabilities[y];
    1 + probabilities.iter().filter(|&&p| p > py).count()
}

pub fn rank_of_true<T: Scalar>(beta: &CoefficientMatrix<T>, x: ArrayView1<T>, y: usize) -> Result<usize, ModelError> {
    if y >= beta.n_classes() {
        return Err(ModelError::LabelOutOfRange {
            label: y,
            n_classes: beta.n_classes(),
        });
    }
    Ok(rank_in(class_probabilities(beta, x)?.view(), y))
}

/// `f(β) = Σ_j ⟨β_{y_j}, x_j⟩ − log Σ_k exp⟨β_k, x_j⟩`.
pub fn log_likelihood<T: Scalar>(beta: &CoefficientMatrix<T>, data: &Dataset<T>) -> Result<T, ModelError> {
    beta.check_dataset(data)?;
    Ok(objective(beta.entries.view(), data.features.view(), &data.labels, false).0)
}

/// `∇_{β_i} f = Σ_{j: y_j = i} x_j − Σ_j p_i(x_j) x_j`, as a `d × K` matrix.
pub fn gradient<T: Scalar>(beta: &CoefficientMatrix<T>, data: &Dataset<T>) -> Result<Array2<T>, ModelError> {
    beta.check_dataset(data)?;
    Ok(objective(beta.entries.view(), data.features.view(), &data.labels, true)
        .1
        .expect("gradient requested"))
}

/// Log-likelihood and, optionally, its gradient. No input validation; the
/// solvers call this in their inner loops after checking shapes once.
pub(crate) fn objective<T: Scalar>(
    beta: ArrayView2<T>,
    x: ArrayView2<T>,
    labels: &[usize],
    with_gradient: bool,
) -> (T, Option<Array2<T>>) {
    let mut scores = x.dot(&beta);
    let mut f = T::zero();
    for (j, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
        let target = row[labels[j]];
        let (p, lse) = softmax(row.view());
        f += target - lse;
        if with_gradient {
            // overwrite with the residual y − p
            row.assign(&p);
            row.mapv_inplace(|v| -v);
            row[labels[j]] += T::one();
        }
    }
    let grad = with_gradient.then(|| x.t().dot(&scores));
    (f, grad)
}

/// Trained classifier plus everything needed to build its inputs.
///
/// Binary layout (`LMCM`, version 1): `d u64, K u64, kind u8, rho f64,
/// n_buses u64`, the partition (`groups u64`, then per group `len u64,
/// indices u64...`, then ungrouped `len u64, indices u64...`), the class list
/// (`K × (catalog line u64)`), then `d × K` row-major `f64` coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub feature_kind: FeatureKind,
    pub rho: f64,
    pub n_buses: usize,
    pub partition: GroupPartition,
    /// Catalog position of the line behind each class.
    pub class_lines: Vec<usize>,
    #[serde(with = "beta_serde")]
    pub beta: CoefficientMatrix<f64>,
}

mod beta_serde {
    use super::CoefficientMatrix;
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(b: &CoefficientMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = b.entries.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CoefficientMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(serde::de::Error::custom("ragged coefficient rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Array2::from_shape_vec((rows.len(), k), flat)
            .map(CoefficientMatrix::from_array)
            .map_err(serde::de::Error::custom)
    }
}

impl TrainedModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(b"LMCM", 1);
        w.u64(self.beta.n_features() as u64);
        w.u64(self.beta.n_classes() as u64);
        w.u8(match self.feature_kind {
            FeatureKind::Plain => 0,
            FeatureKind::Extended => 1,
            FeatureKind::Combined => 2,
        });
        w.f64(self.rho);
        w.u64(self.n_buses as u64);
        w.u64(self.partition.groups.len() as u64);
        for g in &self.partition.groups {
            w.u64(g.len() as u64);
            g.iter().for_each(|&i| w.u64(i as u64));
        }
        w.u64(self.partition.ungrouped.len() as u64);
        self.partition.ungrouped.iter().for_each(|&i| w.u64(i as u64));
        for &l in &self.class_lines {
            w.u64(l as u64);
        }
        for &v in self.beta.entries.iter() {
            w.f64(v);
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, BinError> {
        let (mut r, version) = BinReader::open(buf, b"LMCM")?;
        if version != 1 {
            return Err(BinError::Version(version));
        }
        let d = r.usize()?;
        let k = r.usize()?;
        let feature_kind = match r.u8()? {
            0 => FeatureKind::Plain,
            1 => FeatureKind::Extended,
            2 => FeatureKind::Combined,
            c => return Err(BinError::Corrupt(format!("feature kind {c}"))),
        };
        let rho = r.f64()?;
        let n_buses = r.usize()?;
        let read_list = |r: &mut BinReader| -> Result<Vec<usize>, BinError> {
            let n = r.usize()?;
            (0..n).map(|_| r.usize()).collect()
        };
        let n_groups = r.usize()?;
        let groups = (0..n_groups).map(|_| read_list(&mut r)).collect::<Result<Vec<_>, _>>()?;
        let ungrouped = read_list(&mut r)?;
        let class_lines = (0..k).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
        let flat = (0..d * k).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        let entries = Array2::from_shape_vec((d, k), flat).map_err(|e| BinError::Corrupt(e.to_string()))?;
        Ok(Self {
            feature_kind,
            rho,
            n_buses,
            partition: GroupPartition::new(groups, ungrouped, d).map_err(|e| BinError::Corrupt(e.to_string()))?,
            class_lines,
            beta: CoefficientMatrix::from_array(entries),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Observation;
    use ndarray::array;

    fn data(rows: Vec<(Array1<f64>, usize)>, k: usize) -> Dataset<f64> {
        let n_buses = rows[0].0.len() / 2;
        let obs = rows
            .into_iter()
            .enumerate()
            .map(|(t, (f, l))| Observation {
                features: f,
                label: l,
                timepoint: t,
            })
            .collect();
        Dataset::from_observations(obs, k, n_buses, FeatureKind::Plain, 0.0).unwrap()
    }

    #[test]
    fn zero_beta_is_uniform() {
        let beta = CoefficientMatrix::<f64>::zeros(3, 4);
        let p = class_probabilities(&beta, array![1.0, -2.0, 0.5].view()).unwrap();
        assert_eq!(p, array![0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn two_class_log_three_gives_three_quarters() {
        // scores (ln 3, 0) with x = (1)
        let beta = CoefficientMatrix::from_array(array![[3f64.ln(), 0.0]]);
        let p = class_probabilities(&beta, array![1.0].view()).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn predict_takes_argmax_with_low_index_ties() {
        let beta = CoefficientMatrix::from_array(array![[1.0, 3.0, 2.0]]);
        assert_eq!(predict(&beta, array![1.0].view()).unwrap(), 1);
        let flat = CoefficientMatrix::from_array(array![[2.0, 2.0, 2.0]]);
        assert_eq!(predict(&flat, array![1.0].view()).unwrap(), 0);
    }

    #[test]
    fn huge_scores_do_not_overflow() {
        let beta = CoefficientMatrix::from_array(array![[1e4, -1e4, 0.0]]);
        let p = class_probabilities(&beta, array![1.0].view()).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p.iter().all(|v: &f64| v.is_finite()));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let beta = CoefficientMatrix::<f64>::zeros(2, 2);
        assert_eq!(
            class_probabilities(&beta, array![f64::NAN, 0.0].view()),
            Err(ModelError::NonFinite("feature vector"))
        );
        assert!(matches!(predict(&beta, array![0.0].view()), Err(ModelError::Dimension { .. })));
    }

    #[test]
    fn zero_beta_likelihood_is_minus_m_ln_k() {
        let d = data(
            vec![(array![0.1, 0.2], 0), (array![0.3, -0.1], 1), (array![1.0, 1.0], 2)],
            3,
        );
        let f = log_likelihood(&CoefficientMatrix::zeros(2, 3), &d).unwrap();
        assert_eq!(f, -3.0 * 3f64.ln());
    }

    #[test]
    fn zero_features_give_zero_gradient() {
        let d = data(vec![(array![0.0, 0.0], 0), (array![0.0, 0.0], 1)], 2);
        let beta = CoefficientMatrix::from_array(array![[1.0, -1.0], [0.5, 2.0]]);
        assert!(gradient(&beta, &d).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn separable_likelihood_tends_to_zero() {
        let d = data(vec![(array![1.0, 0.0], 0), (array![0.0, 1.0], 1)], 2);
        let dir = array![[1.0, -1.0], [-1.0, 1.0]];
        let mut prev = f64::NEG_INFINITY;
        for t in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let f = log_likelihood(&CoefficientMatrix::from_array(&dir * t), &d).unwrap();
            assert!(f > prev && f <= 0.0);
            prev = f;
        }
        assert!(prev > -1e-12);
    }

    #[test]
    fn label_out_of_range() {
        assert_eq!(
            rank_of_true(&CoefficientMatrix::<f64>::zeros(1, 2), array![1.0].view(), 2),
            Err(ModelError::LabelOutOfRange { label: 2, n_classes: 2 })
        );
    }

    #[test]
    fn rank_counts_strictly_greater() {
        let p = array![0.4, 0.4, 0.2];
        assert_eq!(rank_in(p.view(), 0), 1);
        assert_eq!(rank_in(p.view(), 1), 1);
        assert_eq!(rank_in(p.view(), 2), 3);
        let q = array![0.5, 0.25, 0.25];
        assert_eq!(rank_in(q.view(), 1), 2);
    }

    #[test]
    fn model_file_round_trips() {
        let m = TrainedModel {
            feature_kind: FeatureKind::Extended,
            rho: 0.02,
            n_buses: 2,
            partition: GroupPartition::for_layout(FeatureKind::Extended, 2, None).unwrap(),
            class_lines: vec![0, 3],
            beta: CoefficientMatrix::from_array(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0], [0.0, -1.0], [9.5, 1e-300]]),
        };
        assert_eq!(TrainedModel::from_bytes(&m.to_bytes()).unwrap(), m);
        let back: TrainedModel = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}
