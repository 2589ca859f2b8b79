//! Labelled observation sets and their on-disk forms.
//!
//! Feature layout (N buses, K classes):
//!
//! | kind       | entries                                               |
//! |------------|-------------------------------------------------------|
//! | `plain`    | `ΔV_1..ΔV_N, Δθ_1..Δθ_N`                              |
//! | `extended` | plain, then `ρ·G, ρ`                                  |
//! | `combined` | extended, then the `2K` direct-observation block      |
//!
//! Labels are 0-based class indices internally and 1-based in CSV output.
//!
//! Binary cache (`LMDS`, version 1), little-endian:
//! `n_buses u64, n_classes u64, kind u8, rho f64, rows u64, dim u64`, then per
//! row `label u64, timepoint u64, dim × f64`.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{BinError, BinReader, BinWriter};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Plain,
    Extended,
    Combined,
}

impl FeatureKind {
    pub fn dim(self, n_buses: usize, n_classes: usize) -> usize {
        match self {
            FeatureKind::Plain => 2 * n_buses,
            FeatureKind::Extended => 2 * n_buses + 2,
            FeatureKind::Combined => 2 * n_buses + 2 + 2 * n_classes,
        }
    }

    fn code(self) -> u8 {
        match self {
            FeatureKind::Plain => 0,
            FeatureKind::Extended => 1,
            FeatureKind::Combined => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(FeatureKind::Plain),
            1 => Some(FeatureKind::Extended),
            2 => Some(FeatureKind::Combined),
            _ => None,
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plain" => Ok(FeatureKind::Plain),
            "extended" => Ok(FeatureKind::Extended),
            "combined" => Ok(FeatureKind::Combined),
            other => Err(format!("unknown feature kind `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("observation has {got} features, dataset expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("label {label} outside 0..{n_classes}")]
    Label { label: usize, n_classes: usize },
    #[error(transparent)]
    Bin(#[from] BinError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed csv: {0}")]
    Format(String),
}

/// One labelled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    pub features: Array1<T>,
    pub label: usize,
    pub timepoint: usize,
}

/// Observations stored row-wise in a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub features: Array2<T>,
    pub labels: Vec<usize>,
    pub timepoints: Vec<usize>,
    pub n_classes: usize,
    pub n_buses: usize,
    pub feature_kind: FeatureKind,
    /// Scale applied to the generation-level and constant entries; 0 for plain.
    pub rho: T,
}

impl<T: Scalar> Dataset<T> {
    pub fn from_observations(
        observations: Vec<Observation<T>>,
        n_classes: usize,
        n_buses: usize,
        feature_kind: FeatureKind,
        rho: T,
    ) -> Result<Self, DatasetError> {
        let dim = feature_kind.dim(n_buses, n_classes);
        let mut features = Array2::zeros((observations.len(), dim));
        let mut labels = Vec::with_capacity(observations.len());
        let mut timepoints = Vec::with_capacity(observations.len());
        for (i, o) in observations.into_iter().enumerate() {
            if o.features.len() != dim {
                return Err(DatasetError::Dimension {
                    expected: dim,
                    got: o.features.len(),
                });
            }
            if o.label >= n_classes {
                return Err(DatasetError::Label {
                    label: o.label,
                    n_classes,
                });
            }
            features.row_mut(i).assign(&o.features);
            labels.push(o.label);
            timepoints.push(o.timepoint);
        }
        Ok(Self {
            features,
            labels,
            timepoints,
            n_classes,
            n_buses,
            feature_kind,
            rho,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.features.row(i)
    }

    pub fn observation(&self, i: usize) -> Observation<T> {
        Observation {
            features: self.features.row(i).to_owned(),
            label: self.labels[i],
            timepoint: self.timepoints[i],
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            timepoints: rows.iter().map(|&r| self.timepoints[r]).collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Self {
        Self {
            features: Array2::zeros((0, self.dim())),
            labels: vec![],
            timepoints: vec![],
            n_classes: self.n_classes,
            n_buses: self.n_buses,
            feature_kind: self.feature_kind,
            rho: self.rho,
        }
    }

    /// Converts every stored value to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            features: self.features.mapv(|v| U::of(v.as_f64())),
            labels: self.labels.clone(),
            timepoints: self.timepoints.clone(),
            n_classes: self.n_classes,
            n_buses: self.n_buses,
            feature_kind: self.feature_kind,
            rho: U::of(self.rho.as_f64()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(b"LMDS", 1);
        w.u64(self.n_buses as u64);
        w.u64(self.n_classes as u64);
        w.u8(self.feature_kind.code());
        w.f64(self.rho.as_f64());
        w.u64(self.len() as u64);
        w.u64(self.dim() as u64);
        for i in 0..self.len() {
            w.u64(self.labels[i] as u64);
            w.u64(self.timepoints[i] as u64);
            for &v in self.features.row(i) {
                w.f64(v.as_f64());
            }
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, DatasetError> {
        let (mut r, version) = BinReader::open(buf, b"LMDS")?;
        if version != 1 {
            return Err(BinError::Version(version).into());
        }
        let n_buses = r.usize()?;
        let n_classes = r.usize()?;
        let kind = FeatureKind::from_code(r.u8()?).ok_or_else(|| BinError::Corrupt("feature kind".into()))?;
        let rho = T::of(r.f64()?);
        let rows = r.usize()?;
        let dim = r.usize()?;
        if dim != kind.dim(n_buses, n_classes) {
            return Err(DatasetError::Dimension {
                expected: kind.dim(n_buses, n_classes),
                got: dim,
            });
        }
        let mut obs = Vec::with_capacity(rows);
        for _ in 0..rows {
            let label = r.usize()?;
            let timepoint = r.usize()?;
            let mut f = Array1::zeros(dim);
            for v in f.iter_mut() {
                *v = T::of(r.f64()?);
            }
            obs.push(Observation {
                features: f,
                label,
                timepoint,
            });
        }
        r.finish()?;
        Self::from_observations(obs, n_classes, n_buses, kind, rho)
    }

    /// CSV with header `label,timepoint,f_0..f_{d-1}`; labels are 1-based.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string(), "timepoint".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f_{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![(self.labels[i] + 1).to_string(), self.timepoints[i].to_string()];
            rec.extend(self.features.row(i).iter().map(|v| format!("{:?}", v.as_f64())));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads rows written by [`Self::write_csv`]; the header fields that the
    /// CSV does not carry are supplied by the caller.
    pub fn read_csv<R: Read>(
        input: R,
        n_classes: usize,
        n_buses: usize,
        feature_kind: FeatureKind,
        rho: T,
    ) -> Result<Self, DatasetError> {
        let mut rd = csv::Reader::from_reader(input);
        let mut obs = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64, DatasetError> {
                s.parse().map_err(|_| DatasetError::Format(format!("bad number `{s}`")))
            };
            if rec.len() < 2 {
                return Err(DatasetError::Format("row shorter than two columns".into()));
            }
            let label = parse(&rec[0])? as usize;
            if label == 0 {
                return Err(DatasetError::Format("labels are 1-based".into()));
            }
            let features = rec.iter().skip(2).map(|s| parse(s).map(T::of)).collect::<Result<Vec<_>, _>>()?;
            obs.push(Observation {
                features: Array1::from(features),
                label: label - 1,
                timepoint: parse(&rec[1])? as usize,
            });
        }
        Self::from_observations(obs, n_classes, n_buses, feature_kind, rho)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> Dataset<f64> {
        let obs = vec![
            Observation {
                features: array![0.1, -0.2, 0.3, 0.0, 0.5, 0.5],
                label: 0,
                timepoint: 7,
            },
            Observation {
                features: array![-1e-9, 2.5, 0.0, 1.0, 0.25, 0.5],
                label: 1,
                timepoint: 9,
            },
        ];
        Dataset::from_observations(obs, 2, 2, FeatureKind::Extended, 0.5).unwrap()
    }

    #[test]
    fn binary_cache_round_trips() {
        let d = tiny();
        assert_eq!(Dataset::<f64>::from_bytes(&d.to_bytes()).unwrap(), d);
    }

    #[test]
    fn csv_round_trips() {
        let d = tiny();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("label,timepoint,f_0,"));
        assert!(text.contains("\n2,9,"));
        let back = Dataset::read_csv(&buf[..], 2, 2, FeatureKind::Extended, 0.5).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn rejects_wrong_dimension_and_label() {
        let bad = vec![Observation {
            features: array![1.0],
            label: 0,
            timepoint: 0,
        }];
        assert!(matches!(
            Dataset::from_observations(bad, 2, 2, FeatureKind::Plain, 0.0),
            Err(DatasetError::Dimension { expected: 4, got: 1 })
        ));
        let bad = vec![Observation {
            features: array![1.0, 0.0, 0.0, 0.0],
            label: 2,
            timepoint: 0,
        }];
        assert!(matches!(
            Dataset::from_observations(bad, 2, 2, FeatureKind::Plain, 0.0),
            Err(DatasetError::Label { .. })
        ));
    }

    #[test]
    fn cast_to_f32_keeps_shape() {
        let d32: Dataset<f32> = tiny().cast();
        assert_eq!(d32.dim(), 6);
        assert_eq!(d32.rho, 0.5f32);
    }
}
