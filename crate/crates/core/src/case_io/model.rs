use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::CaseError;

/// Bus role in the power-flow equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

impl BusKind {
    pub(crate) fn matpower_code(self) -> u8 {
        match self {
            BusKind::Pq => 1,
            BusKind::Pv => 2,
            BusKind::Slack => 3,
        }
    }
}

/// A network node.
///
/// Quantities are kept in the units of the source file (MW, MVAr, p.u. for
/// voltages) so that writing a case back out reproduces it exactly; the
/// `*_pu` accessors give per-unit values on the case base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// Original bus number from the case file.
    pub id: u32,
    pub kind: BusKind,
    pub demand_mw: f64,
    pub demand_mvar: f64,
    /// Shunt conductance (MW demanded at V = 1 p.u.).
    pub shunt_mw: f64,
    /// Shunt susceptance (MVAr injected at V = 1 p.u.).
    pub shunt_mvar: f64,
    /// Regulated magnitude for slack/PV buses, initial magnitude otherwise.
    pub voltage_setpoint: f64,
    pub base_kv: f64,
}

/// Branch status in the source file. Out-of-service branches are dropped at
/// parse time, so a parsed case only ever contains `InService` entries; the
/// `Out` state appears on cases produced by [`crate::powerflow::apply_outage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchStatus {
    InService,
    Out,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Internal (0-based) index of the from bus.
    pub from_bus: usize,
    /// Internal (0-based) index of the to bus.
    pub to_bus: usize,
    pub resistance: f64,
    pub reactance: f64,
    pub charging_susceptance: f64,
    /// Off-nominal turns ratio as written in the file; 0 means nominal.
    pub tap_ratio: f64,
    /// Phase shift in degrees as written in the file.
    pub phase_shift_deg: f64,
    pub status: BranchStatus,
}

impl Branch {
    pub fn effective_tap(&self) -> f64 {
        if self.tap_ratio == 0.0 {
            1.0
        } else {
            self.tap_ratio
        }
    }

    pub fn phase_shift(&self) -> f64 {
        self.phase_shift_deg.to_radians()
    }

    pub fn in_service(&self) -> bool {
        self.status == BranchStatus::InService
    }

    /// Endpoints as an unordered pair (lower index first).
    pub fn bus_pair(&self) -> (usize, usize) {
        if self.from_bus <= self.to_bus {
            (self.from_bus, self.to_bus)
        } else {
            (self.to_bus, self.from_bus)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// Internal index of the bus the unit is connected to.
    pub bus: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
    pub voltage_setpoint: f64,
}

/// A validated grid description with contiguous 0-based bus indexing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSystemCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub reference_bus: usize,
}

impl PowerSystemCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Map from original bus number to internal index.
    pub fn id_map(&self) -> HashMap<u32, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn bus_id(&self, index: usize) -> u32 {
        self.buses[index].id
    }

    pub fn demand_p_pu(&self, bus: usize) -> f64 {
        self.buses[bus].demand_mw / self.base_mva
    }

    pub fn demand_q_pu(&self, bus: usize) -> f64 {
        self.buses[bus].demand_mvar / self.base_mva
    }

    /// Per-bus base demand `(P, Q)` in p.u.
    pub fn base_demand(&self) -> Vec<(f64, f64)> {
        (0..self.n_buses())
            .map(|i| (self.demand_p_pu(i), self.demand_q_pu(i)))
            .collect()
    }

    /// Buses carrying nonzero active or reactive demand, in index order.
    pub fn load_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.demand_mw != 0.0 || b.demand_mvar != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = &Branch> {
        self.branches.iter().filter(|b| b.in_service())
    }

    /// Checks every structural invariant of the case.
    pub fn validate(&self) -> Result<(), CaseError> {
        let sem = |msg: String| Err(CaseError::Semantic(msg));
        if !(self.base_mva > 0.0) || !self.base_mva.is_finite() {
            return sem(format!("baseMVA must be positive, got {}", self.base_mva));
        }
        let slack: Vec<usize> = self
            .buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        match slack.len() {
            0 => return sem("no reference (slack) bus".into()),
            1 if slack[0] == self.reference_bus => {}
            1 => return sem("reference_bus does not point at the slack bus".into()),
            n => return sem(format!("{n} slack buses; exactly one is supported")),
        }
        let n = self.n_buses();
        let mut seen = HashMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if let Some(prev) = seen.insert(b.id, i) {
                return sem(format!("bus id {} appears at rows {} and {}", b.id, prev + 1, i + 1));
            }
            if !b.demand_mw.is_finite() || !b.demand_mvar.is_finite() {
                return sem(format!("bus {} has non-finite demand", b.id));
            }
            if b.kind != BusKind::Pq && !(b.voltage_setpoint > 0.0) {
                return sem(format!("bus {} has non-positive voltage setpoint", b.id));
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            if br.from_bus >= n || br.to_bus >= n {
                return sem(format!("branch {} references a bus outside the bus table", k + 1));
            }
            if br.from_bus == br.to_bus {
                return sem(format!("branch {} is a self loop at bus {}", k + 1, self.bus_id(br.from_bus)));
            }
            if br.resistance == 0.0 && br.reactance == 0.0 {
                return sem(format!("branch {} has zero impedance", k + 1));
            }
        }
        for (g, gen) in self.generators.iter().enumerate() {
            if gen.bus >= n {
                return sem(format!("generator {} references a bus outside the bus table", g + 1));
            }
        }
        Ok(())
    }

    /// Canonical JSON rendering (field order is the struct declaration order).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }
}
