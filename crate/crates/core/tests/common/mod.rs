#![allow(dead_code)]

pub mod reference;

use linemon::dataset::{Dataset, FeatureKind, Observation};
use linemon::Scalar;
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Gaussian clusters in the plain layout: class `k` has a random mean and
/// unit-scale noise times `spread`, so small spreads are nearly separable.
pub fn clustered(seed: u64, n_buses: usize, n_classes: usize, per_class: usize, spread: f64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 2 * n_buses;
    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut obs = Vec::new();
    for (k, mu) in means.iter().enumerate() {
        for i in 0..per_class {
            let x: Array1<f64> = mu.iter().map(|&m| m + spread * rng.sample::<f64, _>(StandardNormal)).collect();
            obs.push(Observation {
                features: x,
                label: k,
                timepoint: i,
            });
        }
    }
    Dataset::from_observations(obs, n_classes, n_buses, FeatureKind::Plain, 0.0).unwrap()
}

/// Like [`clustered`] but only bus `informative` separates the classes;
/// every other feature is pure noise.
pub fn one_informative_bus(seed: u64, n_buses: usize, n_classes: usize, per_class: usize, informative: usize) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Vec::new();
    for k in 0..n_classes {
        for i in 0..per_class {
            let mut x: Array1<f64> = (0..2 * n_buses).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
            let angle = std::f64::consts::TAU * k as f64 / n_classes as f64;
            x[informative] += 2.0 * angle.cos();
            x[informative + n_buses] += 2.0 * angle.sin();
            obs.push(Observation {
                features: x,
                label: k,
                timepoint: i,
            });
        }
    }
    Dataset::from_observations(obs, n_classes, n_buses, FeatureKind::Plain, 0.0).unwrap()
}

pub fn max_abs<T: Scalar>(it: impl IntoIterator<Item = T>) -> f64 {
    it.into_iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max)
}
