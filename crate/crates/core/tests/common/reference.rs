//! Independent complex-arithmetic power flow used as an oracle.

use linemon::case_io::{BusKind, PowerSystemCase};
use linemon::powerflow::PhasorState;
use num_complex::Complex64;

type C = Complex64;

/// Bus admittance matrix from the pi model, written directly in complex form.
pub fn ybus(case: &PowerSystemCase) -> Vec<Vec<C>> {
    let n = case.n_buses();
    let mut y = vec![vec![C::new(0.0, 0.0); n]; n];
    for (i, b) in case.buses.iter().enumerate() {
        y[i][i] += C::new(b.shunt_mw, b.shunt_mvar) / case.base_mva;
    }
    for br in case.in_service_branches() {
        let ys = C::new(1.0, 0.0) / C::new(br.resistance, br.reactance);
        let half = C::new(0.0, br.charging_susceptance / 2.0);
        let a = C::from_polar(br.effective_tap(), br.phase_shift());
        let (f, t) = (br.from_bus, br.to_bus);
        y[f][f] += (ys + half) / a.norm_sqr();
        y[t][t] += ys + half;
        y[f][t] -= ys / a.conj();
        y[t][f] -= ys / a;
    }
    y
}

/// Gauss-Seidel power flow; PV buses keep their setpoint magnitude.
pub fn gauss_seidel(case: &PowerSystemCase, scale: f64) -> PhasorState {
    let n = case.n_buses();
    let y = ybus(case);
    let mut s = vec![C::new(0.0, 0.0); n];
    for (i, b) in case.buses.iter().enumerate() {
        s[i] -= C::new(b.demand_mw, b.demand_mvar) / case.base_mva;
    }
    for g in &case.generators {
        s[g.bus] += C::new(g.p_mw * scale, g.q_mvar) / case.base_mva;
    }
    let mut v: Vec<C> = case
        .buses
        .iter()
        .map(|b| C::new(if b.kind == BusKind::Pq { 1.0 } else { b.voltage_setpoint }, 0.0))
        .collect();
    for _ in 0..200_000 {
        let mut change = 0.0f64;
        for i in 0..n {
            let kind = case.buses[i].kind;
            if kind == BusKind::Slack {
                continue;
            }
            let others: C = (0..n).filter(|&k| k != i).map(|k| y[i][k] * v[k]).sum();
            let mut si = s[i];
            if kind == BusKind::Pv {
                si.im = (v[i] * (others + y[i][i] * v[i]).conj()).im;
            }
            let mut next = ((si / v[i]).conj() - others) / y[i][i];
            if kind == BusKind::Pv {
                next = next * (case.buses[i].voltage_setpoint / next.norm());
            }
            change = change.max((next - v[i]).norm());
            v[i] = next;
        }
        if change < 1e-14 {
            break;
        }
    }
    let r = v[case.reference_bus].arg();
    PhasorState {
        magnitudes: v.iter().map(|x| x.norm()).collect(),
        angles: v.iter().map(|x| x.arg() - r).collect(),
    }
}

/// Largest P mismatch over non-slack buses and Q mismatch over PQ buses,
/// from `S = V · conj(Y V)`.
pub fn mismatch(case: &PowerSystemCase, state: &PhasorState, scale: f64) -> f64 {
    let n = case.n_buses();
    let y = ybus(case);
    let v: Vec<C> = (0..n).map(|i| C::from_polar(state.magnitudes[i], state.angles[i])).collect();
    let mut sched = vec![C::new(0.0, 0.0); n];
    for (i, b) in case.buses.iter().enumerate() {
        sched[i] -= C::new(b.demand_mw, b.demand_mvar) / case.base_mva;
    }
    for g in &case.generators {
        sched[g.bus] += C::new(g.p_mw * scale, g.q_mvar) / case.base_mva;
    }
    let mut worst = 0.0f64;
    for (i, b) in case.buses.iter().enumerate() {
        let current: C = (0..n).map(|k| y[i][k] * v[k]).sum();
        let s = v[i] * current.conj();
        if b.kind != BusKind::Slack {
            worst = worst.max((s.re - sched[i].re).abs());
        }
        if b.kind == BusKind::Pq {
            worst = worst.max((s.im - sched[i].im).abs());
        }
    }
    worst
}
