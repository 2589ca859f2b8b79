//! Test-set accuracy: probability-threshold and rank measures, a per-class
//! breakdown and a histogram of the probability given to the true class.

use std::io::{Read, Write};

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::direct_obs::{DirectObsError, StrategyBundle};
use crate::mlr::{class_probabilities, rank_in, CoefficientMatrix, ModelError};
use crate::Scalar;

/// Histogram bin edges; bin `i` is `[EDGES[i], EDGES[i+1])`, the last bin closed.
pub const HISTOGRAM_EDGES: [f64; 7] = [0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty test set")]
    Empty,
    #[error("model expects {expected} features and {classes} classes, test set has {got} features and {got_classes} classes")]
    Dimension {
        expected: usize,
        classes: usize,
        got: usize,
        got_classes: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Strategy(#[from] DirectObsError),
    #[error("unknown report format `{0}`")]
    Format(String),
    #[error("malformed report csv: {0}")]
    Parse(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that assigns class probabilities to a test observation.
pub trait Classifier<T: Scalar>: Sync {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;
    /// `true_class` is available to strategies that use direct detections.
    fn probabilities(&self, x: ArrayView1<T>, true_class: usize) -> Result<Array1<T>, EvalError>;
}

impl<T: Scalar> Classifier<T> for CoefficientMatrix<T> {
    fn n_features(&self) -> usize {
        CoefficientMatrix::n_features(self)
    }
    fn n_classes(&self) -> usize {
        CoefficientMatrix::n_classes(self)
    }
    fn probabilities(&self, x: ArrayView1<T>, _: usize) -> Result<Array1<T>, EvalError> {
        Ok(class_probabilities(self, x)?)
    }
}

impl<T: Scalar> Classifier<T> for StrategyBundle<T> {
    fn n_features(&self) -> usize {
        self.model.n_features()
    }
    fn n_classes(&self) -> usize {
        StrategyBundle::n_classes(self)
    }
    fn probabilities(&self, x: ArrayView1<T>, true_class: usize) -> Result<Array1<T>, EvalError> {
        Ok(self.classify(x, true_class)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    /// 1-based class index.
    pub class: usize,
    pub n: usize,
    pub prob_ge_09: f64,
    pub rank_le_1: f64,
    pub mean_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub n_test: usize,
    pub prob_ge_09: f64,
    pub prob_ge_07: f64,
    pub prob_ge_05: f64,
    pub rank_le_1: f64,
    pub rank_le_2: f64,
    pub rank_le_3: f64,
    /// Counts per [`HISTOGRAM_EDGES`] bin, lowest bin first.
    pub histogram: [usize; 6],
    pub per_class: Vec<ClassAccuracy>,
}

/// Probability given to the true class and its rank, for one test case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub class: usize,
    pub probability: f64,
    pub rank: usize,
}

fn bin_of(p: f64) -> usize {
    HISTOGRAM_EDGES[1..6].iter().filter(|&&e| p >= e).count()
}

impl AccuracyReport {
    /// Aggregates outcomes; the result does not depend on their order.
    pub fn from_outcomes(outcomes: &[Outcome], n_classes: usize) -> Result<Self, EvalError> {
        if outcomes.is_empty() {
            return Err(EvalError::Empty);
        }
        let n = outcomes.len();
        let frac = |pred: &dyn Fn(&Outcome) -> bool| outcomes.iter().filter(|o| pred(o)).count() as f64 / n as f64;
        let mut histogram = [0usize; 6];
        for o in outcomes {
            histogram[bin_of(o.probability)] += 1;
        }
        let per_class = (0..n_classes)
            .filter_map(|k| {
                let mut ps: Vec<&Outcome> = outcomes.iter().filter(|o| o.class == k).collect();
                if ps.is_empty() {
                    return None;
                }
                ps.sort_by(|a, b| a.probability.total_cmp(&b.probability));
                let m = ps.len() as f64;
                Some(ClassAccuracy {
                    class: k + 1,
                    n: ps.len(),
                    prob_ge_09: ps.iter().filter(|o| o.probability >= 0.9).count() as f64 / m,
                    rank_le_1: ps.iter().filter(|o| o.rank == 1).count() as f64 / m,
                    mean_probability: ps.iter().map(|o| o.probability).sum::<f64>() / m,
                })
            })
            .collect();
        let report = Self {
            n_test: n,
            prob_ge_09: frac(&|o| o.probability >= 0.9),
            prob_ge_07: frac(&|o| o.probability >= 0.7),
            prob_ge_05: frac(&|o| o.probability >= 0.5),
            rank_le_1: frac(&|o| o.rank <= 1),
            rank_le_2: frac(&|o| o.rank <= 2),
            rank_le_3: frac(&|o| o.rank <= 3),
            histogram,
            per_class,
        };
        report.check_invariants();
        Ok(report)
    }

    fn check_invariants(&self) {
        assert!(self.prob_ge_09 <= self.prob_ge_07 && self.prob_ge_07 <= self.prob_ge_05);
        assert!(self.rank_le_1 <= self.rank_le_2 && self.rank_le_2 <= self.rank_le_3);
        assert_eq!(self.histogram.iter().sum::<usize>(), self.n_test);
    }

    /// Top-1 accuracy (true class ranked first, ties included).
    pub fn top1(&self) -> f64 {
        self.rank_le_1
    }
}

/// Scores every test observation with `model`.
pub fn evaluate<T: Scalar, C: Classifier<T>>(model: &C, test: &Dataset<T>) -> Result<AccuracyReport, EvalError> {
    AccuracyReport::from_outcomes(&outcomes(model, test)?, test.n_classes)
}

/// Per-observation probability of the true class and its rank.
pub fn outcomes<T: Scalar, C: Classifier<T>>(model: &C, test: &Dataset<T>) -> Result<Vec<Outcome>, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    if model.n_features() != test.dim() || model.n_classes() != test.n_classes {
        return Err(EvalError::Dimension {
            expected: model.n_features(),
            classes: model.n_classes(),
            got: test.dim(),
            got_classes: test.n_classes,
        });
    }
    (0..test.len())
        .map(|i| {
            let y = test.labels[i];
            let p = model.probabilities(test.row(i), y)?;
            Ok(Outcome {
                class: y,
                probability: p[y].as_f64(),
                rank: rank_in(p.view(), y),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" | "markdown-table" => Ok(Self::Markdown),
            other => Err(EvalError::Format(other.into())),
        }
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

/// Renders a report. CSV is a `section,key,value` long table that
/// [`parse_csv_report`] reads back exactly.
pub fn emit_report(report: &AccuracyReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut row = |a: &str, b: String, c: String| w.write_record([a, &b, &c]).expect("in-memory write");
            row("section", "key".into(), "value".into());
            row("summary", "n_test".into(), report.n_test.to_string());
            for (k, v) in [
                ("prob_ge_09", report.prob_ge_09),
                ("prob_ge_07", report.prob_ge_07),
                ("prob_ge_05", report.prob_ge_05),
                ("rank_le_1", report.rank_le_1),
                ("rank_le_2", report.rank_le_2),
                ("rank_le_3", report.rank_le_3),
            ] {
                row("summary", k.into(), format!("{v:?}"));
            }
            for (i, c) in report.histogram.iter().enumerate() {
                row("histogram", format!("{:?}-{:?}", HISTOGRAM_EDGES[i], HISTOGRAM_EDGES[i + 1]), c.to_string());
            }
            for c in &report.per_class {
                row("class", format!("{}:n", c.class), c.n.to_string());
                row("class", format!("{}:prob_ge_09", c.class), format!("{:?}", c.prob_ge_09));
                row("class", format!("{}:rank_le_1", c.class), format!("{:?}", c.rank_le_1));
                row("class", format!("{}:mean_probability", c.class), format!("{:?}", c.mean_probability));
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
        }
        ReportFormat::Markdown => {
            let mut s = String::new();
            s.push_str("| ≥0.9 | ≥0.7 | ≥0.5 | 1 | ≤2 | ≤3 |\n");
            s.push_str("|---|---|---|---|---|---|\n");
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n\n",
                pct(report.prob_ge_09),
                pct(report.prob_ge_07),
                pct(report.prob_ge_05),
                pct(report.rank_le_1),
                pct(report.rank_le_2),
                pct(report.rank_le_3)
            ));
            s.push_str("| Probability | [.9,1] | [.8,.9) | [.7,.8) | [.6,.7) | [.5,.6) | [0,.5) |\n");
            s.push_str("|---|---|---|---|---|---|---|\n");
            let counts: Vec<String> = report.histogram.iter().rev().map(|c| c.to_string()).collect();
            s.push_str(&format!("| # of instances | {} |\n", counts.join(" | ")));
            s
        }
    }
}

pub fn write_report<W: Write>(report: &AccuracyReport, format: ReportFormat, mut out: W) -> Result<(), EvalError> {
    out.write_all(emit_report(report, format).as_bytes())?;
    Ok(())
}

/// Reads the CSV form of [`emit_report`].
pub fn parse_csv_report<R: Read>(input: R) -> Result<AccuracyReport, EvalError> {
    let bad = |m: String| EvalError::Parse(m);
    let mut r = csv::Reader::from_reader(input);
    let mut report = AccuracyReport {
        n_test: 0,
        prob_ge_09: 0.0,
        prob_ge_07: 0.0,
        prob_ge_05: 0.0,
        rank_le_1: 0.0,
        rank_le_2: 0.0,
        rank_le_3: 0.0,
        histogram: [0; 6],
        per_class: Vec::new(),
    };
    let mut hist_seen = 0;
    for rec in r.records() {
        let rec = rec?;
        let (section, key, value) = (&rec[0], &rec[1], &rec[2]);
        let f = || value.parse::<f64>().map_err(|_| bad(format!("bad number `{value}`")));
        let u = || value.parse::<usize>().map_err(|_| bad(format!("bad count `{value}`")));
        match (section, key) {
            ("summary", "n_test") => report.n_test = u()?,
            ("summary", "prob_ge_09") => report.prob_ge_09 = f()?,
            ("summary", "prob_ge_07") => report.prob_ge_07 = f()?,
            ("summary", "prob_ge_05") => report.prob_ge_05 = f()?,
            ("summary", "rank_le_1") => report.rank_le_1 = f()?,
            ("summary", "rank_le_2") => report.rank_le_2 = f()?,
            ("summary", "rank_le_3") => report.rank_le_3 = f()?,
            ("histogram", _) if hist_seen < 6 => {
                report.histogram[hist_seen] = u()?;
                hist_seen += 1;
            }
            ("class", k) => {
                let (class, field) = k.split_once(':').ok_or_else(|| bad(format!("bad class key `{k}`")))?;
                let class: usize = class.parse().map_err(|_| bad(format!("bad class `{class}`")))?;
                if report.per_class.last().is_none_or(|c| c.class != class) {
                    report.per_class.push(ClassAccuracy {
                        class,
                        n: 0,
                        prob_ge_09: 0.0,
                        rank_le_1: 0.0,
                        mean_probability: 0.0,
                    });
                }
                let c = report.per_class.last_mut().expect("just pushed");
                match field {
                    "n" => c.n = u()?,
                    "prob_ge_09" => c.prob_ge_09 = f()?,
                    "rank_le_1" => c.rank_le_1 = f()?,
                    "mean_probability" => c.mean_probability = f()?,
                    other => return Err(bad(format!("unknown class field `{other}`"))),
                }
            }
            (s, k) => return Err(bad(format!("unexpected row `{s},{k}`"))),
        }
    }
    if hist_seen != 6 {
        return Err(bad(format!("{hist_seen} histogram rows, expected 6")));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureKind, Observation};
    use ndarray::Array2;

    fn dataset(k: usize, per_class: usize) -> Dataset<f64> {
        let obs = (0..k * per_class)
            .map(|i| Observation {
                features: Array1::from_shape_fn(2 * k, |j| if j == i % k { 1.0 } else { 0.0 }),
                label: i % k,
                timepoint: i,
            })
            .collect();
        Dataset::from_observations(obs, k, k, FeatureKind::Plain, 0.0).unwrap()
    }

    #[test]
    fn perfect_model_scores_one_everywhere() {
        let d = dataset(4, 3);
        let mut b = Array2::zeros((8, 4));
        for k in 0..4 {
            b[[k, k]] = 100.0;
        }
        let r = evaluate(&CoefficientMatrix::from_array(b), &d).unwrap();
        for v in [r.prob_ge_09, r.prob_ge_07, r.prob_ge_05, r.rank_le_1, r.rank_le_2, r.rank_le_3] {
            assert_eq!(v, 1.0);
        }
        assert_eq!(r.histogram, [0, 0, 0, 0, 0, 12]);
    }

    #[test]
    fn uniform_model_ranks_everything_first() {
        let d = dataset(18, 2);
        let r = evaluate(&CoefficientMatrix::zeros(36, 18), &d).unwrap();
        assert_eq!(r.prob_ge_05, 0.0);
        assert_eq!(r.rank_le_1, 1.0);
        assert_eq!(r.histogram[0], 36);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let d = dataset(3, 1);
        assert!(matches!(evaluate(&CoefficientMatrix::zeros(5, 3), &d), Err(EvalError::Dimension { .. })));
    }

    #[test]
    fn bins_follow_edges() {
        assert_eq!(bin_of(0.0), 0);
        assert_eq!(bin_of(0.4999), 0);
        assert_eq!(bin_of(0.5), 1);
        assert_eq!(bin_of(0.85), 4);
        assert_eq!(bin_of(0.9), 5);
        assert_eq!(bin_of(1.0), 5);
    }

    #[test]
    fn formats_round_trip_and_render() {
        let outs = [
            Outcome { class: 0, probability: 0.95, rank: 1 },
            Outcome { class: 1, probability: 0.55, rank: 1 },
            Outcome { class: 1, probability: 0.2, rank: 3 },
        ];
        let r = AccuracyReport::from_outcomes(&outs, 2).unwrap();
        assert_eq!(parse_csv_report(emit_report(&r, ReportFormat::Csv).as_bytes()).unwrap(), r);
        let json = emit_report(&r, ReportFormat::Json);
        assert!(json.find("\"n_test\"").unwrap() < json.find("\"prob_ge_09\"").unwrap());
        assert_eq!(serde_json::from_str::<AccuracyReport>(&json).unwrap(), r);
        let md = emit_report(&r, ReportFormat::Markdown);
        assert!(md.starts_with("| ≥0.9 | ≥0.7 | ≥0.5 | 1 | ≤2 | ≤3 |"));
        assert!(md.contains("| 33.3% | 33.3% | 66.7% | 66.7% | 66.7% | 100.0% |"));
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
