//! Case files: parsing, validation, canonical output and the outage catalog.

mod catalog;
mod matpower;
mod model;

use thiserror::Error;

pub use catalog::{build_outage_catalog, Feasibility, OutageCatalog, OutageLine};
pub use matpower::{parse_case, write_case};
pub use model::{Branch, BranchStatus, Bus, BusKind, Generator, PowerSystemCase};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("invalid case: {0}")]
    Semantic(String),
    #[error("unknown bundled case `{0}`")]
    UnknownBundled(String),
}

/// The MATPOWER systems shipped with the crate.
pub const BUNDLED_CASES: [&str; 5] = ["case9", "case14", "case_ieee30", "case57", "case118"];

/// Raw text of a bundled case; `30` style aliases are accepted.
pub fn bundled_case_text(name: &str) -> Result<&'static str, CaseError> {
    Ok(match name {
        "case9" | "9" | "9bus" => include_str!("../../data/case9.m"),
        "case14" | "14" | "14bus" => include_str!("../../data/case14.m"),
        "case_ieee30" | "case30" | "30" | "30bus" => include_str!("../../data/case_ieee30.m"),
        "case57" | "57" | "57bus" => include_str!("../../data/case57.m"),
        "case118" | "118" | "118bus" => include_str!("../../data/case118.m"),
        other => return Err(CaseError::UnknownBundled(other.to_string())),
    })
}

pub fn bundled_case(name: &str) -> Result<PowerSystemCase, CaseError> {
    parse_case(bundled_case_text(name)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn branch(from: usize, to: usize) -> Branch {
        Branch {
            from_bus: from,
            to_bus: to,
            resistance: 0.01,
            reactance: 0.1,
            charging_susceptance: 0.0,
            tap_ratio: 0.0,
            phase_shift_deg: 0.0,
            status: BranchStatus::InService,
        }
    }

    fn chain_case(branches: Vec<Branch>) -> PowerSystemCase {
        let buses = (0..8)
            .map(|i| Bus {
                id: i as u32 + 1,
                kind: if i == 0 { BusKind::Slack } else { BusKind::Pq },
                demand_mw: 0.0,
                demand_mvar: 0.0,
                shunt_mw: 0.0,
                shunt_mvar: 0.0,
                voltage_setpoint: 1.0,
                base_kv: 100.0,
            })
            .collect();
        PowerSystemCase {
            name: "t".into(),
            base_mva: 100.0,
            buses,
            branches,
            generators: vec![],
            reference_bus: 0,
        }
    }

    #[test]
    fn parallel_branches_merge() {
        let c = chain_case(vec![branch(4, 5), branch(5, 4), branch(5, 6)]);
        let cat = build_outage_catalog(&c);
        assert_eq!(cat.lines.len(), 2);
        assert_eq!(cat.lines[0].branches, vec![0, 1]);
        assert_eq!(cat.lines[0].endpoints, [4, 5]);
        assert_eq!(cat.duplicates(), 1);
        assert!(cat.flags.iter().all(Option::is_none));
    }

    #[test]
    fn no_parallels_means_one_class_per_branch() {
        let c = chain_case(vec![branch(0, 1), branch(1, 2), branch(2, 3)]);
        assert_eq!(build_outage_catalog(&c).lines.len(), 3);
    }

    #[test]
    fn bundled_cases_parse_with_expected_sizes() {
        let sizes = [(9, 9), (14, 20), (30, 41), (57, 80), (118, 186)];
        for (name, (nb, nbr)) in BUNDLED_CASES.iter().zip(sizes) {
            let c = bundled_case(name).unwrap();
            assert_eq!((c.n_buses(), c.branches.len()), (nb, nbr), "{name}");
        }
    }

    #[test]
    fn catalog_sizes_on_bundled_cases() {
        // 57 and 118 contain parallel circuits
        for (name, classes) in [("case14", 20), ("case57", 78), ("case118", 179)] {
            let c = bundled_case(name).unwrap();
            assert_eq!(build_outage_catalog(&c).lines.len(), classes, "{name}");
        }
    }

    #[test]
    fn json_is_stable() {
        let c = bundled_case("case9").unwrap();
        let a = c.to_json();
        assert_eq!(a, c.clone().to_json());
        let back: PowerSystemCase = serde_json::from_str(&a).unwrap();
        assert_eq!(back, c);
        assert!(a.find("\"name\"").unwrap() < a.find("\"base_mva\"").unwrap());
    }
}
