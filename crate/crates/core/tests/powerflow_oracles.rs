mod common;

use common::reference::{gauss_seidel, mismatch};
use linemon::case_io::{build_outage_catalog, bundled_case, BusKind, BUNDLED_CASES};
use linemon::powerflow::{active_losses, apply_outage, screen_catalog, solve_ac};
use proptest::prelude::*;

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn nine_bus_matches_gauss_seidel() {
    let case = bundled_case("case9").unwrap();
    let (nr, rep) = solve_ac(&case, &case.base_demand(), 1.0).unwrap();
    assert!(rep.converged);
    let gs = gauss_seidel(&case, 1.0);
    assert!(max_gap(&nr.magnitudes, &gs.magnitudes) < 1e-6);
    assert!(max_gap(&nr.angles, &gs.angles) < 1e-6);
}

#[test]
fn fourteen_bus_outage_matches_gauss_seidel() {
    let case = bundled_case("case14").unwrap();
    let mut cat = build_outage_catalog(&case);
    screen_catalog(&case, &mut cat);
    let post = apply_outage(&case, &cat.lines[cat.feasible()[3]]);
    let (nr, rep) = solve_ac(&post, &post.base_demand(), 1.05).unwrap();
    assert!(rep.converged);
    let gs = gauss_seidel(&post, 1.05);
    assert!(max_gap(&nr.magnitudes, &gs.magnitudes) < 1e-6);
    assert!(max_gap(&nr.angles, &gs.angles) < 1e-6);
}

#[test]
fn nine_bus_matches_published_solution() {
    // rounded MATPOWER runpf output for case9
    let vm = [1.040, 1.025, 1.025, 1.026, 1.013, 1.032, 1.016, 1.026, 0.996];
    let va_deg = [0.0, 9.280, 4.665, -2.217, -3.687, 1.967, 0.728, 3.720, -3.989];
    let case = bundled_case("case9").unwrap();
    let (s, _) = solve_ac(&case, &case.base_demand(), 1.0).unwrap();
    assert!(max_gap(&s.magnitudes, &vm) < 6e-4);
    let deg: Vec<f64> = s.angles.iter().map(|a| a.to_degrees()).collect();
    assert!(max_gap(&deg, &va_deg) < 6e-4);
}

#[test]
fn base_cases_converge_with_small_mismatch_and_positive_losses() {
    for name in BUNDLED_CASES {
        let case = bundled_case(name).unwrap();
        let (s, rep) = solve_ac(&case, &case.base_demand(), 1.0).unwrap();
        assert!(rep.converged, "{name}");
        assert!(rep.max_mismatch <= 1e-8, "{name}");
        assert!(mismatch(&case, &s, 1.0) <= 1e-8, "{name}");
        assert_eq!(s.angles[case.reference_bus], 0.0);
        assert!(active_losses(&case, &s) > 0.0, "{name}");
        for (i, b) in case.buses.iter().enumerate() {
            if b.kind != BusKind::Pq {
                assert_eq!(s.magnitudes[i], b.voltage_setpoint, "{name} bus {i}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn converged_solves_satisfy_the_mismatch_bound(which in 0usize..3, scale in 0.7..1.2f64, outage in any::<prop::sample::Index>()) {
        let case = bundled_case(["case9", "case14", "case_ieee30"][which]).unwrap();
        let cat = build_outage_catalog(&case);
        let post = apply_outage(&case, &cat.lines[outage.index(cat.lines.len())]);
        let demand: Vec<(f64, f64)> = post.base_demand().iter().map(|&(p, q)| (p * scale, q * scale)).collect();
        if let Ok((s, rep)) = solve_ac(&post, &demand, scale) {
            if rep.converged {
                prop_assert!(rep.max_mismatch <= 1e-8);
                let mut scaled = post.clone();
                for b in &mut scaled.buses {
                    b.demand_mw *= scale;
                    b.demand_mvar *= scale;
                }
                prop_assert!(mismatch(&scaled, &s, scale) <= 1e-8);
                prop_assert_eq!(s.angles[post.reference_bus], 0.0);
            }
        }
    }
}
