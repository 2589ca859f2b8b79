//! Quasi-steady-state AC power flow (Newton–Raphson, polar coordinates) and
//! outage screening.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case_io::{BranchStatus, BusKind, Feasibility, OutageCatalog, OutageLine, PowerSystemCase};
use crate::linalg::lu_solve_in_place;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("network is split into {components} islands")]
    Disconnected { components: usize },
    #[error("invalid power-flow input: {0}")]
    InvalidInput(String),
}

/// Per-bus voltage phasors; angles are relative to the reference bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasorState {
    pub magnitudes: Vec<f64>,
    pub angles: Vec<f64>,
}

impl PhasorState {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute P/Q mismatch (p.u.) over the equations solved for.
    pub max_mismatch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            tolerance: 1e-8,
        }
    }
}

/// Dense bus admittance matrix `Y = G + jB` (row-major).
#[derive(Debug, Clone)]
pub struct Admittance {
    n: usize,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
}

impl Admittance {
    pub fn new(case: &PowerSystemCase) -> Self {
        let n = case.n_buses();
        let mut g = vec![0.0; n * n];
        let mut b = vec![0.0; n * n];
        for (i, bus) in case.buses.iter().enumerate() {
            g[i * n + i] += bus.shunt_mw / case.base_mva;
            b[i * n + i] += bus.shunt_mvar / case.base_mva;
        }
        for br in case.in_service_branches() {
            // series admittance ys = 1 / (r + jx)
            let den = br.resistance * br.resistance + br.reactance * br.reactance;
            let (gs, bs) = (br.resistance / den, -br.reactance / den);
            let bc = br.charging_susceptance / 2.0;
            let tap = br.effective_tap();
            let (sin, cos) = br.phase_shift().sin_cos();
            let (f, t) = (br.from_bus, br.to_bus);
            // Yff = (ys + j bc) / tap², Ytt = ys + j bc
            g[f * n + f] += gs / (tap * tap);
            b[f * n + f] += (bs + bc) / (tap * tap);
            g[t * n + t] += gs;
            b[t * n + t] += bs + bc;
            // Yft = -ys / conj(a), Ytf = -ys / a, with a = tap·e^{jφ}
            // -ys / (tap e^{-jφ}) = -(gs + j bs)(cos φ + j sin φ) / tap
            let (ftr, fti) = (-(gs * cos - bs * sin) / tap, -(gs * sin + bs * cos) / tap);
            let (tfr, tfi) = (-(gs * cos + bs * sin) / tap, -(bs * cos - gs * sin) / tap);
            g[f * n + t] += ftr;
            b[f * n + t] += fti;
            g[t * n + f] += tfr;
            b[t * n + f] += tfi;
        }
        Self { n, g, b }
    }

    /// Complex power injections `(P, Q)` at every bus for a given state.
    pub fn injections(&self, state: &PhasorState) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let (v, th) = (&state.magnitudes, &state.angles);
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            let (mut pi, mut qi) = (0.0, 0.0);
            for k in 0..n {
                let (gik, bik) = (self.g[i * n + k], self.b[i * n + k]);
                if gik == 0.0 && bik == 0.0 {
                    continue;
                }
                let (s, c) = (th[i] - th[k]).sin_cos();
                pi += v[k] * (gik * c + bik * s);
                qi += v[k] * (gik * s - bik * c);
            }
            p[i] = v[i] * pi;
            q[i] = v[i] * qi;
        }
        (p, q)
    }
}

/// Union-find over in-service branches; returns the number of islands.
pub fn island_count(case: &PowerSystemCase) -> usize {
    let n = case.n_buses();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut comps = n;
    for br in case.in_service_branches() {
        let (a, b) = (find(&mut parent, br.from_bus), find(&mut parent, br.to_bus));
        if a != b {
            parent[a] = b;
            comps -= 1;
        }
    }
    comps
}

/// Reusable solver for one topology: admittance and bus classification are
/// computed once, each [`Self::solve`] is independent.
#[derive(Debug, Clone)]
pub struct PowerFlowModel<'a> {
    case: &'a PowerSystemCase,
    y: Admittance,
    pvpq: Vec<usize>,
    pq: Vec<usize>,
    opts: PowerFlowOptions,
}

impl<'a> PowerFlowModel<'a> {
    pub fn new(case: &'a PowerSystemCase, opts: PowerFlowOptions) -> Result<Self, PowerFlowError> {
        let islands = island_count(case);
        if islands != 1 {
            return Err(PowerFlowError::Disconnected { components: islands });
        }
        let pvpq = (0..case.n_buses()).filter(|&i| case.buses[i].kind != BusKind::Slack).collect();
        let pq = (0..case.n_buses()).filter(|&i| case.buses[i].kind == BusKind::Pq).collect();
        Ok(Self {
            case,
            y: Admittance::new(case),
            pvpq,
            pq,
            opts,
        })
    }

    pub fn admittance(&self) -> &Admittance {
        &self.y
    }

    /// Scheduled net injections `(P, Q)` in p.u.
    pub fn scheduled(&self, demand: &[(f64, f64)], generation_scale: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.case.n_buses();
        let base = self.case.base_mva;
        let mut p: Vec<f64> = demand.iter().map(|d| -d.0).collect();
        let mut q: Vec<f64> = demand.iter().map(|d| -d.1).collect();
        for g in &self.case.generators {
            p[g.bus] += g.p_mw * generation_scale / base;
            q[g.bus] += g.q_mvar / base;
        }
        debug_assert_eq!(p.len(), n);
        (p, q)
    }

    pub fn solve(&self, demand: &[(f64, f64)], generation_scale: f64) -> Result<(PhasorState, SolveReport), PowerFlowError> {
        let n = self.case.n_buses();
        if demand.len() != n {
            return Err(PowerFlowError::InvalidInput(format!(
                "demand has {} entries for {n} buses",
                demand.len()
            )));
        }
        if demand.iter().any(|d| !d.0.is_finite() || !d.1.is_finite()) {
            return Err(PowerFlowError::InvalidInput("non-finite demand".into()));
        }
        if !(generation_scale > 0.0) || !generation_scale.is_finite() {
            return Err(PowerFlowError::InvalidInput(format!(
                "generation scale must be positive, got {generation_scale}"
            )));
        }
        let (p_sched, q_sched) = self.scheduled(demand, generation_scale);
        let mut state = PhasorState {
            magnitudes: self
                .case
                .buses
                .iter()
                .map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.voltage_setpoint })
                .collect(),
            angles: vec![0.0; n],
        };
        let (npvpq, npq) = (self.pvpq.len(), self.pq.len());
        let dim = npvpq + npq;
        // position of each bus among the angle / magnitude unknowns
        let mut ang_pos = vec![usize::MAX; n];
        let mut mag_pos = vec![usize::MAX; n];
        for (j, &i) in self.pvpq.iter().enumerate() {
            ang_pos[i] = j;
        }
        for (j, &i) in self.pq.iter().enumerate() {
            mag_pos[i] = npvpq + j;
        }

        let mut f = vec![0.0; dim];
        let mut jac = vec![0.0; dim * dim];
        let mut iterations = 0;
        loop {
            let (p, q) = self.y.injections(&state);
            for (j, &i) in self.pvpq.iter().enumerate() {
                f[j] = p[i] - p_sched[i];
            }
            for (j, &i) in self.pq.iter().enumerate() {
                f[npvpq + j] = q[i] - q_sched[i];
            }
            let max_mismatch = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if !max_mismatch.is_finite() {
                return Ok((state, SolveReport { converged: false, iterations, max_mismatch }));
            }
            if max_mismatch <= self.opts.tolerance {
                return Ok((state, SolveReport { converged: true, iterations, max_mismatch }));
            }
            if iterations >= self.opts.max_iterations {
                debug!("power flow stopped after {iterations} iterations, mismatch {max_mismatch:e}");
                return Ok((state, SolveReport { converged: false, iterations, max_mismatch }));
            }
            self.jacobian(&state, &p, &q, &ang_pos, &mag_pos, &mut jac);
            let mut dx: Vec<f64> = f.iter().map(|x| -x).collect();
            if !lu_solve_in_place(&mut jac, &mut dx, dim) {
                return Ok((state, SolveReport { converged: false, iterations, max_mismatch }));
            }
            for (j, &i) in self.pvpq.iter().enumerate() {
                state.angles[i] += dx[j];
            }
            for (j, &i) in self.pq.iter().enumerate() {
                state.magnitudes[i] += dx[npvpq + j];
            }
            iterations += 1;
        }
    }

    fn jacobian(
        &self,
        state: &PhasorState,
        p: &[f64],
        q: &[f64],
        ang_pos: &[usize],
        mag_pos: &[usize],
        jac: &mut [f64],
    ) {
        let n = self.case.n_buses();
        let dim = self.pvpq.len() + self.pq.len();
        jac.iter_mut().for_each(|x| *x = 0.0);
        let (v, th) = (&state.magnitudes, &state.angles);
        let (g, b) = (&self.y.g, &self.y.b);
        for i in 0..n {
            let (rp, rq) = (ang_pos[i], mag_pos[i]);
            if rp == usize::MAX {
                continue;
            }
            for k in 0..n {
                let (gik, bik) = (g[i * n + k], b[i * n + k]);
                if k != i && gik == 0.0 && bik == 0.0 {
                    continue;
                }
                let (ca, cm) = (ang_pos[k], mag_pos[k]);
                let (dp_dth, dp_dv, dq_dth, dq_dv) = if k == i {
                    (
                        -q[i] - bik * v[i] * v[i],
                        p[i] / v[i] + gik * v[i],
                        p[i] - gik * v[i] * v[i],
                        q[i] / v[i] - bik * v[i],
                    )
                } else {
                    let (s, c) = (th[i] - th[k]).sin_cos();
                    (
                        v[i] * v[k] * (gik * s - bik * c),
                        v[i] * (gik * c + bik * s),
                        -v[i] * v[k] * (gik * c + bik * s),
                        v[i] * (gik * s - bik * c),
                    )
                };
                if ca != usize::MAX {
                    jac[rp * dim + ca] = dp_dth;
                    if rq != usize::MAX {
                        jac[rq * dim + ca] = dq_dth;
                    }
                }
                if cm != usize::MAX {
                    jac[rp * dim + cm] = dp_dv;
                    if rq != usize::MAX {
                        jac[rq * dim + cm] = dq_dv;
                    }
                }
            }
        }
    }
}

/// Solves the AC power flow from a flat start.
///
/// `demand` holds per-bus `(P, Q)` in p.u.; generator active outputs are
/// multiplied by `generation_scale` and the slack bus takes up the balance.
/// Non-convergence is reported through [`SolveReport::converged`].
pub fn solve_ac(
    case: &PowerSystemCase,
    demand: &[(f64, f64)],
    generation_scale: f64,
) -> Result<(PhasorState, SolveReport), PowerFlowError> {
    PowerFlowModel::new(case, PowerFlowOptions::default())?.solve(demand, generation_scale)
}

/// Copy of `case` with every branch of `line` switched out.
pub fn apply_outage(case: &PowerSystemCase, line: &OutageLine) -> PowerSystemCase {
    let mut out = case.clone();
    for &k in &line.branches {
        out.branches[k].status = BranchStatus::Out;
    }
    out
}

/// Islanding takes precedence over divergence.
pub fn classify_feasibility(
    case: &PowerSystemCase,
    line: &OutageLine,
    demand: &[(f64, f64)],
    generation_scale: f64,
) -> Feasibility {
    let post = apply_outage(case, line);
    match solve_ac(&post, demand, generation_scale) {
        Err(PowerFlowError::Disconnected { .. }) => Feasibility::Islanding,
        Err(_) => Feasibility::Divergent,
        Ok((_, rep)) if rep.converged => Feasibility::Feasible,
        Ok(_) => Feasibility::Divergent,
    }
}

/// Flags every catalog entry at base demand and unit generation scale.
pub fn screen_catalog(case: &PowerSystemCase, catalog: &mut OutageCatalog) {
    let demand = case.base_demand();
    catalog.flags = catalog
        .lines
        .par_iter()
        .map(|line| Some(classify_feasibility(case, line, &demand, 1.0)))
        .collect();
}

/// Total active losses in the series and shunt elements, in p.u.
pub fn active_losses(case: &PowerSystemCase, state: &PhasorState) -> f64 {
    let y = Admittance::new(case);
    let (p, _) = y.injections(state);
    p.iter().sum()
}
