use linemon::case_io::bundled_case;
use linemon::demand::{build_profile, generate_ratios, synthesize, OUParams};
use ndarray::{Array2, ArrayView1};
use proptest::prelude::*;

fn mean(x: ArrayView1<f64>) -> f64 {
    x.sum() / x.len() as f64
}

fn variance(x: ArrayView1<f64>) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn long_path_matches_stationary_moments() {
    let n = 100_000;
    for seed in 0..3 {
        let params = OUParams {
            reversion_rate: 0.05,
            volatility: 0.02,
            seed,
            ..OUParams::default()
        };
        let r = generate_ratios(&params, n, 1).unwrap();
        let x = r.column(0);
        let var = params.stationary_variance();
        // AR(1) with coefficient φ: Var(mean) ≈ var (1 + φ) / ((1 − φ) n)
        let phi = (-params.reversion_rate).exp();
        let se = (var * (1.0 + phi) / ((1.0 - phi) * n as f64)).sqrt();
        assert!((mean(x) - 1.0).abs() < 3.0 * se, "seed {seed}: mean {}", mean(x));
        assert!((variance(x) / var - 1.0).abs() < 0.1, "seed {seed}: var {}", variance(x));
    }
}

#[test]
fn bus_innovations_are_uncorrelated() {
    let params = OUParams::default();
    let r = generate_ratios(&params, 8640, 6).unwrap();
    let decay = (-params.reversion_rate).exp();
    let innovations: Vec<Vec<f64>> = r
        .columns()
        .into_iter()
        .map(|c| c.windows(2).into_iter().map(|w| (w[1] - 1.0) - (w[0] - 1.0) * decay).collect())
        .collect();
    for a in 0..6 {
        for b in a + 1..6 {
            let c = correlation(&innovations[a], &innovations[b]);
            assert!(c.abs() < 0.05, "buses {a},{b}: {c}");
        }
    }
}

#[test]
fn extreme_volatility_stays_within_clamp() {
    let params = OUParams {
        volatility: 0.5,
        ..OUParams::default()
    };
    let r = generate_ratios(&params, 5000, 4).unwrap();
    assert!(r.iter().all(|&v| (0.5..=1.5).contains(&v)));
    assert!(r.iter().any(|&v| v == 0.5 || v == 1.5));
}

#[test]
fn synthesized_profile_is_reproducible() {
    let case = bundled_case("case14").unwrap();
    let params = OUParams {
        seed: 9,
        ..OUParams::default()
    };
    let a = synthesize(&case, &params, 500).unwrap();
    let b = synthesize(&case, &params, 500).unwrap();
    assert_eq!(a, b);
    let c = synthesize(&case, &OUParams { seed: 10, ..params }, 500).unwrap();
    assert_ne!(a.ratios, c.ratios);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn demand_and_level_follow_ratios(steps in 1usize..20, raw in prop::collection::vec(0.5..1.5f64, 20 * 11)) {
        let case = bundled_case("case14").unwrap();
        let n_load = case.load_buses().len();
        let ratios = Array2::from_shape_vec((steps, n_load), raw[..steps * n_load].to_vec()).unwrap();
        let p = build_profile(&case, ratios.clone()).unwrap();
        for t in 0..steps {
            let row = ratios.row(t);
            prop_assert_eq!(p.generation_level[t], row.iter().sum::<f64>() / n_load as f64);
            let d = p.demand_vector(t);
            for (j, &b) in case.load_buses().iter().enumerate() {
                prop_assert!((d[b].0 - case.demand_p_pu(b) * row[j]).abs() < 1e-15);
                prop_assert!((d[b].1 - case.demand_q_pu(b) * row[j]).abs() < 1e-15);
            }
        }
    }
}
