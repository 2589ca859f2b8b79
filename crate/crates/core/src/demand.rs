//! Synthetic demand: per-bus Ornstein–Uhlenbeck ratio paths on top of the
//! case's base demand, and the generation level `G[t]` they imply.
//!
//! Binary cache (`LMDP`, version 1): `steps u64, loads u64`, per load bus
//! `index u64, base_p f64, base_q f64`, then `steps × loads` row-major ratios.

use std::io::{Read, Write};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{BinError, BinReader, BinWriter};
use crate::case_io::PowerSystemCase;

/// Ratio bounds applied after simulation.
pub const RATIO_CLAMP: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("invalid OU parameters: {0}")]
    Params(String),
    #[error("ratio matrix has {got} columns, case has {expected} load buses")]
    Columns { expected: usize, got: usize },
    #[error(transparent)]
    Bin(#[from] BinError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed profile: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OUParams {
    /// θ, per step.
    pub reversion_rate: f64,
    /// σ, per √step.
    pub volatility: f64,
    pub long_run_mean: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for OUParams {
    fn default() -> Self {
        Self {
            reversion_rate: 0.01,
            volatility: 0.003,
            long_run_mean: 1.0,
            dt: 1.0,
            seed: 0,
        }
    }
}

impl OUParams {
    pub fn validate(&self) -> Result<(), DemandError> {
        if !(self.reversion_rate > 0.0) || !self.reversion_rate.is_finite() {
            return Err(DemandError::Params(format!("reversion_rate must be positive, got {}", self.reversion_rate)));
        }
        if !(self.volatility >= 0.0) || !self.volatility.is_finite() {
            return Err(DemandError::Params(format!("volatility must be non-negative, got {}", self.volatility)));
        }
        if !(self.dt > 0.0) || !self.long_run_mean.is_finite() {
            return Err(DemandError::Params("dt must be positive and the mean finite".into()));
        }
        Ok(())
    }

    /// Stationary variance `σ² / (2θ)`.
    pub fn stationary_variance(&self) -> f64 {
        self.volatility * self.volatility / (2.0 * self.reversion_rate)
    }
}

/// One OU path per column, each driven by its own ChaCha stream so the
/// result does not depend on scheduling. Row 0 is the long-run mean.
pub fn generate_ratios(params: &OUParams, n_steps: usize, n_buses: usize) -> Result<Array2<f64>, DemandError> {
    params.validate()?;
    if n_steps == 0 {
        return Err(DemandError::Params("n_steps must be at least 1".into()));
    }
    let decay = (-params.reversion_rate * params.dt).exp();
    let scale = params.volatility * ((1.0 - decay * decay) / (2.0 * params.reversion_rate)).sqrt();
    let mu = params.long_run_mean;
    let columns: Vec<(Vec<f64>, usize)> = (0..n_buses)
        .into_par_iter()
        .map(|bus| {
            let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
            rng.set_stream(bus as u64);
            let mut x = mu;
            let mut clamped = 0;
            let path = (0..n_steps)
                .map(|t| {
                    if t > 0 {
                        let xi: f64 = StandardNormal.sample(&mut rng);
                        x = mu + (x - mu) * decay + scale * xi;
                    }
                    let r = x.clamp(RATIO_CLAMP.0, RATIO_CLAMP.1);
                    clamped += usize::from(r != x);
                    r
                })
                .collect();
            (path, clamped)
        })
        .collect();
    let mut out = Array2::zeros((n_steps, n_buses));
    for (b, (path, clamped)) in columns.into_iter().enumerate() {
        if clamped > 0 {
            log::warn!("demand ratio for load column {b} clamped at {clamped} steps");
        }
        out.column_mut(b).assign(&ndarray::Array1::from(path));
    }
    Ok(out)
}

/// Demand over time for the load buses of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    /// Internal indices of the load buses, one per ratio column.
    pub load_buses: Vec<usize>,
    /// Original bus ids of the load buses.
    pub bus_ids: Vec<u32>,
    /// Base `(P, Q)` of each load bus, p.u.
    pub base: Vec<(f64, f64)>,
    pub n_buses: usize,
    /// `T × loads`.
    pub ratios: Array2<f64>,
    /// `G[t]`, the mean ratio at `t`.
    pub generation_level: Vec<f64>,
}

/// Attaches ratios to the load buses of `case`.
pub fn build_profile(case: &PowerSystemCase, ratios: Array2<f64>) -> Result<DemandProfile, DemandError> {
    let load_buses = case.load_buses();
    if ratios.ncols() != load_buses.len() {
        return Err(DemandError::Columns {
            expected: load_buses.len(),
            got: ratios.ncols(),
        });
    }
    let generation_level = ratios
        .axis_iter(Axis(0))
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect();
    Ok(DemandProfile {
        bus_ids: load_buses.iter().map(|&b| case.bus_id(b)).collect(),
        base: load_buses.iter().map(|&b| (case.demand_p_pu(b), case.demand_q_pu(b))).collect(),
        load_buses,
        n_buses: case.n_buses(),
        ratios,
        generation_level,
    })
}

/// Generates ratios for every load bus of `case` and builds the profile.
pub fn synthesize(case: &PowerSystemCase, params: &OUParams, n_steps: usize) -> Result<DemandProfile, DemandError> {
    build_profile(case, generate_ratios(params, n_steps, case.load_buses().len())?)
}

impl DemandProfile {
    pub fn steps(&self) -> usize {
        self.ratios.nrows()
    }

    /// `(P, Q)` of load column `b` at `t`, p.u.
    pub fn demand(&self, t: usize, b: usize) -> (f64, f64) {
        let r = self.ratios[[t, b]];
        (self.base[b].0 * r, self.base[b].1 * r)
    }

    /// Full per-bus demand vector at `t` (zero at non-load buses).
    pub fn demand_vector(&self, t: usize) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0); self.n_buses];
        for (b, &bus) in self.load_buses.iter().enumerate() {
            out[bus] = self.demand(t, b);
        }
        out
    }

    /// Columnar export: `t,bus_id,ratio,p,q`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DemandError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "bus_id", "ratio", "p", "q"])?;
        for t in 0..self.steps() {
            for b in 0..self.load_buses.len() {
                let (p, q) = self.demand(t, b);
                w.write_record([
                    t.to_string(),
                    self.bus_ids[b].to_string(),
                    format!("{:?}", self.ratios[[t, b]]),
                    format!("{p:?}"),
                    format!("{q:?}"),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV export back against the case it was built from. The
    /// `p`/`q` columns are checked against base demand × ratio.
    pub fn read_csv<R: Read>(input: R, case: &PowerSystemCase) -> Result<Self, DemandError> {
        let load_ids: Vec<u32> = case.load_buses().iter().map(|&b| case.bus_id(b)).collect();
        let column_of: std::collections::HashMap<u32, usize> =
            load_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut cells: Vec<(usize, usize, f64, f64, f64)> = Vec::new();
        let mut r = csv::Reader::from_reader(input);
        if r.headers()?.iter().collect::<Vec<_>>() != ["t", "bus_id", "ratio", "p", "q"] {
            return Err(DemandError::Format("expected header t,bus_id,ratio,p,q".into()));
        }
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64, DemandError> {
                rec[i].parse().map_err(|_| DemandError::Format(format!("bad number `{}`", &rec[i])))
            };
            let t: usize = rec[0].parse().map_err(|_| DemandError::Format(format!("bad t `{}`", &rec[0])))?;
            let id: u32 = rec[1].parse().map_err(|_| DemandError::Format(format!("bad bus id `{}`", &rec[1])))?;
            let col = *column_of
                .get(&id)
                .ok_or_else(|| DemandError::Format(format!("bus {id} is not a load bus of the case")))?;
            cells.push((t, col, num(2)?, num(3)?, num(4)?));
        }
        let steps = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
        if cells.len() != steps * load_ids.len() {
            return Err(DemandError::Format(format!(
                "{} rows for {steps} steps × {} load buses",
                cells.len(),
                load_ids.len()
            )));
        }
        let mut ratios = Array2::from_elem((steps, load_ids.len()), f64::NAN);
        for &(t, b, ratio, _, _) in &cells {
            ratios[[t, b]] = ratio;
        }
        if ratios.iter().any(|v| v.is_nan()) {
            return Err(DemandError::Format("duplicate (t, bus_id) rows".into()));
        }
        let profile = build_profile(case, ratios)?;
        for &(t, b, _, p, q) in &cells {
            let (ep, eq) = profile.demand(t, b);
            if (p - ep).abs() > 1e-12 * ep.abs().max(1.0) || (q - eq).abs() > 1e-12 * eq.abs().max(1.0) {
                return Err(DemandError::Format(format!("demand at t={t}, bus {} disagrees with the case", load_ids[b])));
            }
        }
        Ok(profile)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(b"LMDP", 1);
        w.u64(self.steps() as u64);
        w.u64(self.load_buses.len() as u64);
        for (b, &bus) in self.load_buses.iter().enumerate() {
            w.u64(bus as u64);
            w.f64(self.base[b].0);
            w.f64(self.base[b].1);
        }
        self.ratios.iter().for_each(|&r| w.f64(r));
        w.finish()
    }

    /// Restores a cached profile; `case` must be the one it was built from.
    pub fn from_bytes(buf: &[u8], case: &PowerSystemCase) -> Result<Self, DemandError> {
        let (mut r, version) = BinReader::open(buf, b"LMDP")?;
        if version != 1 {
            return Err(BinError::Version(version).into());
        }
        let steps = r.usize()?;
        let loads = r.usize()?;
        let mut stored = Vec::with_capacity(loads);
        for _ in 0..loads {
            stored.push((r.usize()?, r.f64()?, r.f64()?));
        }
        let flat = (0..steps * loads).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        let ratios = Array2::from_shape_vec((steps, loads), flat).map_err(|e| DemandError::Format(e.to_string()))?;
        let profile = build_profile(case, ratios)?;
        let matches = stored
            .iter()
            .zip(profile.load_buses.iter().zip(&profile.base))
            .all(|(&(i, p, q), (&bus, &(bp, bq)))| i == bus && p == bp && q == bq);
        if !matches {
            return Err(DemandError::Format("cached profile belongs to a different case".into()));
        }
        Ok(profile)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::bundled_case;

    #[test]
    fn zero_volatility_is_constant() {
        let p = OUParams {
            volatility: 0.0,
            ..Default::default()
        };
        let r = generate_ratios(&p, 50, 3).unwrap();
        assert!(r.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn same_seed_same_paths() {
        let p = OUParams {
            seed: 7,
            ..Default::default()
        };
        assert_eq!(generate_ratios(&p, 200, 4).unwrap(), generate_ratios(&p, 200, 4).unwrap());
        let q = OUParams { seed: 8, ..p.clone() };
        assert_ne!(generate_ratios(&p, 200, 4).unwrap(), generate_ratios(&q, 200, 4).unwrap());
    }

    #[test]
    fn columns_do_not_depend_on_bus_count() {
        let p = OUParams::default();
        let a = generate_ratios(&p, 100, 2).unwrap();
        let b = generate_ratios(&p, 100, 5).unwrap();
        assert_eq!(a.column(1), b.column(1));
    }

    #[test]
    fn invalid_params_rejected() {
        let p = OUParams {
            reversion_rate: 0.0,
            ..Default::default()
        };
        assert!(generate_ratios(&p, 10, 1).is_err());
        assert!(generate_ratios(&OUParams::default(), 0, 1).is_err());
    }

    #[test]
    fn unit_ratios_reproduce_base_demand() {
        let case = bundled_case("case14").unwrap();
        let loads = case.load_buses().len();
        let prof = build_profile(&case, Array2::ones((3, loads))).unwrap();
        assert!(prof.generation_level.iter().all(|&g| g == 1.0));
        assert_eq!(prof.demand_vector(2), case.base_demand());
    }

    #[test]
    fn generation_level_is_row_mean() {
        let case = bundled_case("case9").unwrap();
        assert_eq!(case.load_buses().len(), 3);
        let ratios = ndarray::array![[0.9, 1.0, 1.1], [1.2, 1.2, 1.2]];
        let prof = build_profile(&case, ratios).unwrap();
        assert!((prof.generation_level[0] - 1.0).abs() < 1e-15);
        assert!((prof.generation_level[1] - 1.2).abs() < 1e-15);
        let (p, _) = prof.demand(1, 0);
        assert!((p - 1.2 * case.demand_p_pu(prof.load_buses[0])).abs() < 1e-15);
        assert!(build_profile(&case, Array2::ones((2, 2))).is_err());
    }

    #[test]
    fn csv_and_cache_round_trip() {
        let case = bundled_case("case14").unwrap();
        let prof = synthesize(&case, &OUParams::default(), 20).unwrap();
        let mut buf = Vec::new();
        prof.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"t,bus_id,ratio,p,q\n"));
        assert_eq!(DemandProfile::read_csv(&buf[..], &case).unwrap(), prof);
        assert_eq!(DemandProfile::from_bytes(&prof.to_bytes(), &case).unwrap(), prof);
        let other = bundled_case("case9").unwrap();
        assert!(DemandProfile::from_bytes(&prof.to_bytes(), &other).is_err());
    }
}
