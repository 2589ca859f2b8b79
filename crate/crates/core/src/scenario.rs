//! Normal-operation and outage simulation over a demand profile, observation
//! vectors, and the train/test sampling protocol.
//!
//! An outage at timepoint `t` is solved at `demand[t]` with generation scaled
//! by `G[t]`; its observation is that state minus the normal state at `t − 1`.

use std::collections::BTreeMap;

use ndarray::{concatenate, Array1, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case_io::{OutageLine, PowerSystemCase};
use crate::dataset::{Dataset, DatasetError, FeatureKind, Observation};
use crate::demand::DemandProfile;
use crate::direct_obs::DirectObservationMatrix;
use crate::powerflow::{apply_outage, PhasorState, PowerFlowError, PowerFlowModel, PowerFlowOptions};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("normal-operation power flow did not converge at t = {t}")]
    NormalDiverged { t: usize },
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("phasor states cover {before} and {after} buses")]
    Length { before: usize, after: usize },
    #[error("rho must be positive, got {0}")]
    Rho(f64),
    #[error("all training phasor differences are zero")]
    ZeroFeatures,
    #[error("need {needed} timepoints in the {half} half, only {available} available")]
    InsufficientSamples {
        needed: usize,
        available: usize,
        half: &'static str,
    },
    #[error("no training samples survived for class {class}")]
    EmptyClass { class: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Solves the intact network at every timepoint of the profile.
pub fn simulate_normal(case: &PowerSystemCase, profile: &DemandProfile) -> Result<Vec<PhasorState>, ScenarioError> {
    let times: Vec<usize> = (0..profile.steps()).collect();
    Ok(simulate_normal_at(case, profile, &times)?.into_values().collect())
}

/// Solves the intact network at the requested timepoints only.
pub fn simulate_normal_at(
    case: &PowerSystemCase,
    profile: &DemandProfile,
    times: &[usize],
) -> Result<BTreeMap<usize, PhasorState>, ScenarioError> {
    let model = PowerFlowModel::new(case, PowerFlowOptions::default())?;
    let solved: Vec<(usize, Result<PhasorState, ScenarioError>)> = times
        .par_iter()
        .map(|&t| {
            let r = model
                .solve(&profile.demand_vector(t), profile.generation_level[t])
                .map_err(ScenarioError::from)
                .and_then(|(s, rep)| if rep.converged { Ok(s) } else { Err(ScenarioError::NormalDiverged { t }) });
            (t, r)
        })
        .collect();
    solved.into_iter().map(|(t, r)| r.map(|s| (t, s))).collect()
}

/// `X = [V′ − V, θ′ − θ]`, magnitudes first.
pub fn make_observation(before: &PhasorState, after: &PhasorState) -> Result<Array1<f64>, ScenarioError> {
    if before.len() != after.len() {
        return Err(ScenarioError::Length {
            before: before.len(),
            after: after.len(),
        });
    }
    let dv = after.magnitudes.iter().zip(&before.magnitudes).map(|(a, b)| a - b);
    let da = after.angles.iter().zip(&before.angles).map(|(a, b)| a - b);
    Ok(dv.chain(da).collect())
}

/// `X̄ = [X, ρG, ρ]`.
pub fn extend_observation(x: &Array1<f64>, generation_level: f64, rho: f64) -> Result<Array1<f64>, ScenarioError> {
    if !(rho > 0.0) {
        return Err(ScenarioError::Rho(rho));
    }
    Ok(concatenate![Axis(0), x.view(), Array1::from(vec![rho * generation_level, rho]).view()])
}

/// Mean absolute entry over all phasor-difference vectors.
pub fn calibrate_rho<'a>(deltas: impl IntoIterator<Item = &'a Array1<f64>>) -> Result<f64, ScenarioError> {
    let (sum, count) = deltas
        .into_iter()
        .flat_map(|x| x.iter())
        .fold((0.0, 0usize), |(s, c), v| (s + v.abs(), c + 1));
    if count == 0 || sum == 0.0 {
        return Err(ScenarioError::ZeroFeatures);
    }
    Ok(sum / count as f64)
}

/// `round(j · T/2 / (count + 1))` for `j = 1..=count`.
pub fn train_timepoints(n_steps: usize, count: usize) -> Vec<usize> {
    let half = n_steps as f64 / 2.0;
    (1..=count)
        .map(|j| (j as f64 * half / (count + 1) as f64).round() as usize)
        .collect()
}

/// `count` distinct timepoints drawn uniformly from the second half.
pub fn test_timepoints(n_steps: usize, count: usize, rng: &mut ChaCha20Rng) -> Result<Vec<usize>, ScenarioError> {
    let (mut picked, _) = draw_second_half(n_steps, count, 0, rng)?;
    picked.sort_unstable();
    Ok(picked)
}

/// `count` timepoints plus up to `spare` further ones in draw order, all
/// distinct, from the second half.
fn draw_second_half(n_steps: usize, count: usize, spare: usize, rng: &mut ChaCha20Rng) -> Result<(Vec<usize>, Vec<usize>), ScenarioError> {
    let start = n_steps / 2;
    let available = n_steps - start;
    if available < count {
        return Err(ScenarioError::InsufficientSamples {
            needed: count,
            available,
            half: "second",
        });
    }
    let total = available.min(count + spare);
    let mut all: Vec<usize> = sample(rng, available, total).into_iter().map(|i| start + i).collect();
    let reserve = all.split_off(count);
    Ok((all, reserve))
}

/// Which timepoints each class is simulated at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub n_steps: usize,
    pub train: Vec<usize>,
    /// Per class, sorted.
    pub test: Vec<Vec<usize>>,
    /// Per class, further second-half timepoints in draw order; they replace
    /// test timepoints whose outage solve fails.
    pub reserve: Vec<Vec<usize>>,
}

impl SamplePlan {
    /// Training timepoints are shared by all classes; test timepoints are
    /// drawn per class from a ChaCha stream keyed by the class index.
    pub fn new(n_classes: usize, n_steps: usize, train_count: usize, test_count: usize, seed: u64) -> Result<Self, ScenarioError> {
        let train = train_timepoints(n_steps, train_count);
        let first_half = n_steps / 2;
        // t = 0 has no preceding normal state
        let usable = train.iter().filter(|&&t| t >= 1 && t < first_half).count();
        if usable < train_count || train.windows(2).any(|w| w[0] == w[1]) {
            return Err(ScenarioError::InsufficientSamples {
                needed: train_count,
                available: usable,
                half: "first",
            });
        }
        let (test, reserve) = (0..n_classes)
            .map(|k| {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                let (mut t, r) = draw_second_half(n_steps, test_count, test_count, &mut rng)?;
                t.sort_unstable();
                Ok((t, r))
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?
            .into_iter()
            .unzip();
        Ok(Self {
            n_steps,
            train,
            test,
            reserve,
        })
    }

    /// Every `t − 1` whose normal state an observation needs.
    pub fn normal_times(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.train.iter().chain(self.test.iter().flatten()).map(|&t| t - 1).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// A phasor-difference vector before feature extension.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub class: usize,
    pub timepoint: usize,
    pub delta: Array1<f64>,
    pub generation_level: f64,
}

/// Simulated outage samples for one sample plan.
#[derive(Debug, Clone, PartialEq)]
pub struct OutageSamples {
    pub n_buses: usize,
    pub n_classes: usize,
    pub train: Vec<RawSample>,
    pub test: Vec<RawSample>,
    /// `(class, timepoint)` pairs whose outage solve failed.
    pub dropped: Vec<(usize, usize)>,
}

/// Solves every planned `(class, timepoint)` outage. Failed solves are
/// dropped with a warning. A failed test timepoint is replaced by the next
/// reserve timepoint of its class; a class left without training samples is
/// an error.
pub fn simulate_outages(
    case: &PowerSystemCase,
    lines: &[OutageLine],
    profile: &DemandProfile,
    normal: &BTreeMap<usize, PhasorState>,
    plan: &SamplePlan,
) -> Result<OutageSamples, ScenarioError> {
    let jobs: Vec<(usize, usize, bool)> = (0..lines.len())
        .flat_map(|k| {
            plan.train
                .iter()
                .map(move |&t| (k, t, true))
                .chain(plan.test[k].iter().map(move |&t| (k, t, false)))
        })
        .collect();
    let post_cases: Vec<PowerSystemCase> = lines.iter().map(|l| apply_outage(case, l)).collect();
    let models = post_cases
        .iter()
        .map(|c| PowerFlowModel::new(c, PowerFlowOptions::default()))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<Option<RawSample>> = jobs
        .par_iter()
        .map(|&(k, t, _)| {
            let before = normal.get(&(t - 1)).expect("normal state planned");
            outage_sample(&models[k], profile, before, k, t)
        })
        .collect();
    let mut out = OutageSamples {
        n_buses: case.n_buses(),
        n_classes: lines.len(),
        train: Vec::new(),
        test: Vec::new(),
        dropped: Vec::new(),
    };
    for (&(k, t, is_train), r) in jobs.iter().zip(results) {
        match r {
            Some(s) if is_train => out.train.push(s),
            Some(s) => out.test.push(s),
            None => {
                log::warn!("outage of class {} did not converge at t = {t}; sample dropped", k + 1);
                out.dropped.push((k, t));
            }
        }
    }
    let failed_test: Vec<(usize, usize)> = out
        .dropped
        .iter()
        .filter(|(_, t)| !plan.train.contains(t))
        .copied()
        .collect();
    if !failed_test.is_empty() {
        let intact = PowerFlowModel::new(case, PowerFlowOptions::default())?;
        for (k, model) in models.iter().enumerate() {
            let mut missing = failed_test.iter().filter(|(c, _)| *c == k).count();
            let mut pool = plan.reserve[k].iter();
            while missing > 0 {
                let Some(&t) = pool.next() else {
                    return Err(ScenarioError::InsufficientSamples {
                        needed: plan.test[k].len(),
                        available: plan.test[k].len() - missing,
                        half: "second",
                    });
                };
                let (before, rep) = intact.solve(&profile.demand_vector(t - 1), profile.generation_level[t - 1])?;
                if !rep.converged {
                    return Err(ScenarioError::NormalDiverged { t: t - 1 });
                }
                match outage_sample(model, profile, &before, k, t) {
                    Some(s) => {
                        out.test.push(s);
                        missing -= 1;
                    }
                    None => out.dropped.push((k, t)),
                }
            }
        }
        out.test.sort_by_key(|s| (s.class, s.timepoint));
    }
    for k in 0..lines.len() {
        if !out.train.iter().any(|s| s.class == k) {
            return Err(ScenarioError::EmptyClass { class: k + 1 });
        }
    }
    Ok(out)
}

fn outage_sample(model: &PowerFlowModel, profile: &DemandProfile, before: &PhasorState, k: usize, t: usize) -> Option<RawSample> {
    let g = profile.generation_level[t];
    let (state, rep) = model.solve(&profile.demand_vector(t), g).ok()?;
    if !rep.converged {
        return None;
    }
    Some(RawSample {
        class: k,
        timepoint: t,
        delta: make_observation(before, &state).ok()?,
        generation_level: g,
    })
}

/// Builds one observation in the requested layout.
pub fn feature_vector(
    sample: &RawSample,
    kind: FeatureKind,
    rho: f64,
    direct: Option<&DirectObservationMatrix>,
) -> Result<Array1<f64>, ScenarioError> {
    Ok(match kind {
        FeatureKind::Plain => sample.delta.clone(),
        FeatureKind::Extended => extend_observation(&sample.delta, sample.generation_level, rho)?,
        FeatureKind::Combined => {
            let l = direct.expect("combined layout needs the direct-observation matrix");
            let ext = extend_observation(&sample.delta, sample.generation_level, rho)?;
            concatenate![Axis(0), ext.view(), l.column(sample.class).view()]
        }
    })
}

/// Train and test datasets in one layout, sharing the training-set ρ.
pub fn assemble(
    samples: &OutageSamples,
    kind: FeatureKind,
    rho: f64,
    direct: Option<&DirectObservationMatrix>,
) -> Result<(Dataset<f64>, Dataset<f64>), ScenarioError> {
    let build = |set: &[RawSample]| -> Result<Dataset<f64>, ScenarioError> {
        let obs = set
            .iter()
            .map(|s| {
                Ok(Observation {
                    features: feature_vector(s, kind, rho, direct)?,
                    label: s.class,
                    timepoint: s.timepoint,
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let stored_rho = if kind == FeatureKind::Plain { 0.0 } else { rho };
        Ok(Dataset::from_observations(obs, samples.n_classes, samples.n_buses, kind, stored_rho)?)
    };
    Ok((build(&samples.train)?, build(&samples.test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::{build_outage_catalog, bundled_case};
    use crate::demand::build_profile;
    use crate::powerflow::solve_ac;
    use ndarray::{array, Array2};

    #[test]
    fn observation_is_componentwise_difference() {
        let before = PhasorState {
            magnitudes: vec![1.0, 1.0],
            angles: vec![0.0, 0.1],
        };
        let after = PhasorState {
            magnitudes: vec![0.98, 1.0],
            angles: vec![0.0, 0.05],
        };
        let x = make_observation(&before, &after).unwrap();
        let want = array![-0.02, 0.0, 0.0, -0.05];
        assert!((&x - &want).iter().all(|d| d.abs() < 1e-15));
        assert!(make_observation(&before, &before).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extension_appends_scaled_level_and_constant() {
        let x = array![0.1, 0.2, 0.3, 0.4];
        let e = extend_observation(&x, 1.0, 0.01).unwrap();
        assert_eq!(e.len(), 6);
        assert_eq!((e[4], e[5]), (0.01, 0.01));
        let e = extend_observation(&x, 1.2, 0.01).unwrap();
        assert!((e[4] - 0.012).abs() < 1e-16);
        assert!(extend_observation(&x, 1.0, 0.0).is_err());
    }

    #[test]
    fn rho_is_mean_absolute_entry() {
        let a = array![0.02, -0.02, 0.02];
        assert_eq!(calibrate_rho([&a]).unwrap(), 0.02);
        let b = array![0.01, 0.03];
        assert!((calibrate_rho([&b]).unwrap() - 0.02).abs() < 1e-17);
        assert!(calibrate_rho([&array![0.0, 0.0]]).is_err());
    }

    #[test]
    fn train_spacing_and_test_disjointness() {
        assert_eq!(train_timepoints(8640, 5), vec![720, 1440, 2160, 2880, 3600]);
        let plan = SamplePlan::new(3, 8640, 5, 50, 11).unwrap();
        for t in &plan.test {
            assert_eq!(t.len(), 50);
            assert!(t.iter().all(|&x| (4320..8640).contains(&x)));
            assert!(t.windows(2).all(|w| w[0] < w[1]));
        }
        assert_ne!(plan.test[0], plan.test[1]);
        assert_eq!(plan, SamplePlan::new(3, 8640, 5, 50, 11).unwrap());
        assert!(SamplePlan::new(1, 60, 5, 50, 0).is_err());
    }

    #[test]
    fn constant_profile_reproduces_base_solution() {
        let case = bundled_case("case9").unwrap();
        let prof = build_profile(&case, Array2::ones((4, 3))).unwrap();
        let states = simulate_normal(&case, &prof).unwrap();
        let (base, _) = solve_ac(&case, &case.base_demand(), 1.0).unwrap();
        assert_eq!(states.len(), 4);
        assert!(states.iter().all(|s| *s == base));
    }

    #[test]
    fn constant_profile_gives_identical_observations_per_class() {
        let case = bundled_case("case9").unwrap();
        let prof = build_profile(&case, Array2::ones((40, 3))).unwrap();
        let lines = build_outage_catalog(&case).lines;
        let lines = vec![lines[1].clone(), lines[4].clone()];
        let plan = SamplePlan::new(2, 40, 3, 4, 1).unwrap();
        let normal = simulate_normal_at(&case, &prof, &plan.normal_times()).unwrap();
        let s = simulate_outages(&case, &lines, &prof, &normal, &plan).unwrap();
        assert_eq!(s.train.len(), 6);
        assert_eq!(s.test.len(), 8);
        for k in 0..2 {
            let mut of_k = s.train.iter().chain(&s.test).filter(|r| r.class == k);
            let first = of_k.next().unwrap().delta.clone();
            assert!(of_k.all(|r| r.delta == first));
        }
        let (train, test) = assemble(&s, FeatureKind::Extended, 0.01, None).unwrap();
        assert_eq!(train.dim(), 20);
        assert_eq!(test.len(), 8);
        assert_eq!(train.features[[0, 19]], 0.01);
    }
}
