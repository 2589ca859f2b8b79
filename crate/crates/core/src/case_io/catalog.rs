use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::model::PowerSystemCase;

/// Why a candidate outage was excluded from the class set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Feasible,
    /// Removing the line splits the network.
    Islanding,
    /// The post-outage power flow does not converge at base demand.
    Divergent,
}

/// One candidate outage: all in-service branches joining one bus pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutageLine {
    /// Indices into `case.branches`.
    pub branches: Vec<usize>,
    /// Internal indices of the two endpoint buses, lower index first.
    pub endpoints: [usize; 2],
}

impl OutageLine {
    pub fn touches(&self, bus: usize) -> bool {
        self.endpoints.contains(&bus)
    }
}

/// Candidate single-line outages with their screening outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageCatalog {
    pub lines: Vec<OutageLine>,
    /// `None` until screened by [`crate::powerflow::screen_catalog`].
    pub flags: Vec<Option<Feasibility>>,
}

impl OutageCatalog {
    /// Number of physical branches folded into another line's class.
    pub fn duplicates(&self) -> usize {
        self.lines.iter().map(|l| l.branches.len() - 1).sum()
    }

    /// Catalog positions of the feasible lines; the position in the returned
    /// vector is the class index used by datasets and models.
    pub fn feasible(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, f)| **f == Some(Feasibility::Feasible))
            .map(|(i, _)| i)
            .collect()
    }

    /// Lines of the feasible classes, in class order.
    pub fn feasible_lines(&self) -> Vec<OutageLine> {
        self.feasible().into_iter().map(|i| self.lines[i].clone()).collect()
    }

    pub fn infeasible_count(&self) -> usize {
        self.flags
            .iter()
            .filter(|f| matches!(f, Some(Feasibility::Islanding | Feasibility::Divergent)))
            .count()
    }
}

/// Groups in-service branches by unordered endpoint pair, in order of first
/// appearance.
pub fn build_outage_catalog(case: &PowerSystemCase) -> OutageCatalog {
    let mut by_pair: HashMap<(usize, usize), usize> = HashMap::new();
    let mut lines: Vec<OutageLine> = Vec::new();
    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service() {
            continue;
        }
        let pair = br.bus_pair();
        match by_pair.get(&pair) {
            Some(&c) => lines[c].branches.push(k),
            None => {
                by_pair.insert(pair, lines.len());
                lines.push(OutageLine {
                    branches: vec![k],
                    endpoints: [pair.0, pair.1],
                });
            }
        }
    }
    let flags = vec![None; lines.len()];
    OutageCatalog { lines, flags }
}
