//! Bundled `reproduce` recipes: full instrumentation plus the published
//! placements for each IEEE test system.

use super::{ExperimentConfig, TauSpec};
use crate::placement::Heuristic;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedPlacement {
    pub heuristic: Heuristic,
    pub tau: f64,
    pub num_pmus: usize,
    /// Published bus set, reference bus included.
    pub buses: &'static [u32],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recipe {
    pub system: &'static str,
    pub case: &'static str,
    /// Only run with `--large`.
    pub large: bool,
    pub placements: &'static [PublishedPlacement],
}

const fn greedy(tau: f64, num_pmus: usize, buses: &'static [u32]) -> PublishedPlacement {
    PublishedPlacement {
        heuristic: Heuristic::Greedy,
        tau,
        num_pmus,
        buses,
    }
}

const fn lasso(tau: f64, num_pmus: usize, buses: &'static [u32]) -> PublishedPlacement {
    PublishedPlacement {
        heuristic: Heuristic::GroupLasso,
        tau,
        num_pmus,
        buses,
    }
}

pub const RECIPES: [Recipe; 4] = [
    Recipe {
        system: "14bus",
        case: "case14",
        large: false,
        placements: &[greedy(5e-2, 3, &[1, 7, 12]), greedy(5e-3, 3, &[1, 11, 12])],
    },
    Recipe {
        system: "30bus",
        case: "case_ieee30",
        large: false,
        placements: &[greedy(5e-2, 4, &[1, 3, 23, 30]), greedy(5e-3, 5, &[1, 3, 14, 22, 29])],
    },
    Recipe {
        system: "57bus",
        case: "case57",
        large: true,
        placements: &[
            lasso(1.1, 10, &[1, 8, 17, 27, 28, 51, 52, 53, 54, 55]),
            greedy(1.2e-1, 10, &[1, 2, 17, 19, 26, 39, 40, 45, 46, 57]),
            lasso(0.8, 15, &[1, 2, 4, 17, 23, 27, 28, 43, 46, 47, 51, 52, 53, 54, 55]),
            greedy(1.7e-3, 15, &[1, 2, 5, 12, 17, 20, 21, 26, 39, 40, 43, 45, 46, 54, 57]),
            greedy(5e-2, 12, &[1, 2, 5, 17, 21, 26, 39, 40, 45, 46, 54, 57]),
            greedy(5e-3, 14, &[1, 2, 5, 17, 20, 21, 26, 39, 40, 41, 45, 46, 54, 57]),
        ],
    },
    Recipe {
        system: "118bus",
        case: "case118",
        large: true,
        placements: &[
            greedy(5e-2, 15, &[2, 22, 29, 36, 48, 58, 62, 63, 69, 81, 91, 95, 106, 108, 115]),
            greedy(
                5e-3,
                21,
                &[3, 13, 29, 35, 43, 47, 55, 58, 62, 63, 69, 75, 81, 82, 91, 93, 104, 106, 107, 113, 115, 119],
            ),
        ],
    },
];

/// Looks a recipe up by `14bus`, `14` or its case name.
pub fn recipe(system: &str) -> Option<&'static Recipe> {
    let s = system.trim().to_ascii_lowercase();
    RECIPES.iter().find(|r| {
        r.system == s || r.case == s || r.system.strip_suffix("bus") == Some(s.as_str())
    })
}

/// One config per run of `recipe`, derived from `base` (seed, output
/// directory, solver and sample counts carry over).
pub fn recipe_configs(recipe: &Recipe, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let common = ExperimentConfig {
        case: recipe.case.to_string(),
        num_pmus: None,
        ..base.clone()
    };
    let mut out = vec![("full".to_string(), common.clone())];
    for p in recipe.placements {
        let label = format!("{}-{}pmu-tau{:e}", heuristic_name(p.heuristic), p.num_pmus, p.tau);
        out.push((
            label,
            ExperimentConfig {
                heuristic: p.heuristic,
                tau: TauSpec::Single(p.tau),
                num_pmus: Some(p.num_pmus),
                ..common.clone()
            },
        ));
    }
    out
}

pub fn heuristic_name(h: Heuristic) -> &'static str {
    match h {
        Heuristic::Greedy => "greedy",
        Heuristic::GroupLasso => "group_lasso",
    }
}
