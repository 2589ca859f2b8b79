//! In-memory pipeline stages. [`super::run`] adds the on-disk artifacts.

use std::fmt::Display;

use serde::{Deserialize, Serialize};

use super::{ConfigError, ExperimentConfig, RhoMode};
use crate::case_io::{build_outage_catalog, parse_case, Feasibility, OutageCatalog, OutageLine, PowerSystemCase};
use crate::dataset::{Dataset, FeatureKind};
use crate::demand::{synthesize, DemandProfile};
use crate::direct_obs::{build_l, observable_classes, reduced_dataset, DirectObservationMatrix, StrategyBundle, StrategyKind};
use crate::eval::{evaluate, AccuracyReport};
use crate::mlr::{CoefficientMatrix, TrainedModel};
use crate::placement::{greedy_select, group_lasso_select, GreedyOptions, Heuristic, PlacementResult};
use crate::powerflow::screen_catalog;
use crate::scenario::{assemble, calibrate_rho, simulate_normal_at, simulate_outages, SamplePlan};
use crate::solvers::{debias, GroupPartition, SolverOptions};

/// How a failure maps onto the CLI exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Config,
    Numerical,
    Data,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Data => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: &'static str, kind: ErrorKind, cause: impl Display) -> Self {
        Self {
            stage,
            kind,
            message: cause.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::new("config", ErrorKind::Config, e)
    }
}

pub(crate) fn err<E: Display>(stage: &'static str, kind: ErrorKind) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::new(stage, kind, e)
}

/// The grid, its screened outage catalog and the demand profile.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub case: PowerSystemCase,
    pub catalog: OutageCatalog,
    /// Lines of the feasible classes, in class order.
    pub lines: Vec<OutageLine>,
    pub profile: DemandProfile,
}

pub fn load_case(cfg: &ExperimentConfig) -> Result<PowerSystemCase, PipelineError> {
    if cfg.is_bundled_case() {
        crate::case_io::bundled_case(&cfg.case).map_err(err("synth", ErrorKind::Data))
    } else {
        let text = std::fs::read_to_string(&cfg.case).map_err(err("synth", ErrorKind::Data))?;
        parse_case(&text).map_err(err("synth", ErrorKind::Data))
    }
}

/// Screens every candidate outage at base demand.
pub fn screened_catalog(case: &PowerSystemCase) -> OutageCatalog {
    let mut catalog = build_outage_catalog(case);
    screen_catalog(case, &mut catalog);
    catalog
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, PipelineError> {
    let case = load_case(cfg)?;
    let catalog = screened_catalog(&case);
    let profile = synthesize(&case, &cfg.ou_params(), cfg.steps).map_err(err("synth", ErrorKind::Config))?;
    Ok(Prepared {
        lines: catalog.feasible_lines(),
        case,
        catalog,
        profile,
    })
}

/// Train/test data in the configured layout.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub rho: f64,
    /// `(class, timepoint)` outage solves that failed and were dropped.
    pub dropped: Vec<(usize, usize)>,
    pub train: Dataset<f64>,
    pub test: Dataset<f64>,
    pub direct: Option<DirectObservationMatrix>,
}

pub fn simulate(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Simulated, PipelineError> {
    let num = err("simulate", ErrorKind::Numerical);
    let plan = SamplePlan::new(prep.lines.len(), cfg.steps, cfg.train_count, cfg.test_count, cfg.seed)
        .map_err(err("simulate", ErrorKind::Config))?;
    let normal = simulate_normal_at(&prep.case, &prep.profile, &plan.normal_times()).map_err(&num)?;
    let samples = simulate_outages(&prep.case, &prep.lines, &prep.profile, &normal, &plan).map_err(&num)?;
    let rho = match cfg.rho {
        RhoMode::Fixed(r) => r,
        RhoMode::Auto(_) => calibrate_rho(samples.train.iter().map(|s| &s.delta)).map_err(&num)?,
    };
    let direct = if cfg.feature_kind == FeatureKind::Combined {
        Some(build_l(&prep.lines, cfg.eta).map_err(err("simulate", ErrorKind::Config))?)
    } else {
        None
    };
    let (train, test) = assemble(&samples, cfg.feature_kind, rho, direct.as_ref()).map_err(&num)?;
    Ok(Simulated {
        rho,
        dropped: samples.dropped,
        train,
        test,
        direct,
    })
}

pub fn partition_for(kind: FeatureKind, n_buses: usize, direct: Option<&DirectObservationMatrix>) -> Result<GroupPartition, PipelineError> {
    let rows = direct.map(|l| l.direct_rows(n_buses));
    GroupPartition::for_layout(kind, n_buses, rows.as_deref()).map_err(err("train", ErrorKind::Data))
}

fn trained(data: &Dataset<f64>, partition: GroupPartition, lines: &[usize], beta: CoefficientMatrix<f64>) -> TrainedModel {
    TrainedModel {
        feature_kind: data.feature_kind,
        rho: data.rho,
        n_buses: data.n_buses,
        partition,
        class_lines: lines.to_vec(),
        beta,
    }
}

/// Unconstrained maximum-likelihood model on every bus.
pub fn train_full(cfg: &ExperimentConfig, prep: &Prepared, sim: &Simulated) -> Result<TrainedModel, PipelineError> {
    let partition = partition_for(cfg.feature_kind, prep.case.n_buses(), sim.direct.as_ref())?;
    let all: Vec<usize> = (0..partition.n_groups()).collect();
    let fit = debias(&sim.train, &all, &partition, None, &cfg.solver).map_err(err("train", ErrorKind::Numerical))?;
    if !fit.converged {
        log::info!("full model stopped after {} iterations, gradient {:.3e}", fit.iterations, fit.gradient_norm);
    }
    Ok(trained(&sim.train, partition, &prep.catalog.feasible(), fit.beta))
}

/// Places `num_pmus` PMUs at one `tau`.
pub fn place(cfg: &ExperimentConfig, prep: &Prepared, sim: &Simulated, tau: f64, num_pmus: usize) -> Result<PlacementResult<f64>, PipelineError> {
    let partition = partition_for(cfg.feature_kind, prep.case.n_buses(), sim.direct.as_ref())?;
    let fixed: Vec<usize> = if cfg.force_reference {
        vec![prep.case.reference_bus]
    } else {
        vec![]
    };
    let res = match cfg.heuristic {
        Heuristic::GroupLasso => group_lasso_select(&sim.train, &partition, tau, num_pmus, &fixed, &cfg.solver),
        Heuristic::Greedy => greedy_select(
            &sim.train,
            &partition,
            tau,
            num_pmus,
            &fixed,
            &cfg.solver,
            GreedyOptions {
                warm_start: cfg.greedy_warm_start,
            },
        ),
    };
    res.map_err(|e| {
        let kind = match e {
            crate::placement::PlacementError::Request(_) => ErrorKind::Config,
            _ => ErrorKind::Numerical,
        };
        PipelineError::new("place", kind, e)
    })
}

pub fn placement_model(cfg: &ExperimentConfig, prep: &Prepared, sim: &Simulated, res: &PlacementResult<f64>) -> Result<TrainedModel, PipelineError> {
    let partition = partition_for(cfg.feature_kind, prep.case.n_buses(), sim.direct.as_ref())?;
    Ok(trained(&sim.train, partition, &prep.catalog.feasible(), res.debiased_beta.clone()))
}

/// Scores `model` on the test set under the configured strategy, with PMUs
/// at `instrumented` (internal indices).
pub fn evaluate_strategy(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    sim: &Simulated,
    model: &TrainedModel,
    instrumented: &[usize],
) -> Result<AccuracyReport, PipelineError> {
    let endpoints: Vec<[usize; 2]> = prep.lines.iter().map(|l| l.endpoints).collect();
    let reference = (!cfg.reference_observes_lines).then_some(prep.case.reference_bus);
    strategy_report(
        cfg.strategy,
        model,
        &sim.test,
        Some(&sim.train),
        &endpoints,
        instrumented,
        reference,
        &cfg.solver,
    )
}

/// [`evaluate_strategy`] without a config. `reference` is the bus whose PMU
/// does not observe its incident lines; `train` is needed by prescreen only.
#[allow(clippy::too_many_arguments)]
pub fn strategy_report(
    strategy: StrategyKind,
    model: &TrainedModel,
    test: &Dataset<f64>,
    train: Option<&Dataset<f64>>,
    endpoints: &[[usize; 2]],
    instrumented: &[usize],
    reference: Option<usize>,
    solver: &SolverOptions,
) -> Result<AccuracyReport, PipelineError> {
    let data_err = err("eval", ErrorKind::Data);
    if model.feature_kind == FeatureKind::Plain {
        if strategy != StrategyKind::Indirect {
            return Err(PipelineError::new("eval", ErrorKind::Config, format!("strategy {strategy:?} needs an extended model")));
        }
        return evaluate(&model.beta, test).map_err(data_err);
    }
    if endpoints.len() != model.beta.n_classes() {
        return Err(PipelineError::new("eval", ErrorKind::Data, format!("{} line endpoints for {} classes", endpoints.len(), model.beta.n_classes())));
    }
    let observable = observable_classes(endpoints, instrumented, reference);
    let reduced = if strategy == StrategyKind::Prescreen && observable.iter().any(|&o| !o) {
        let train = train.ok_or_else(|| PipelineError::new("eval", ErrorKind::Config, "prescreen needs the training set"))?;
        let (data, map) = reduced_dataset(train, &observable).map_err(err("eval", ErrorKind::Data))?;
        let fit = debias(&data, instrumented, &model.partition, None, solver).map_err(err("eval", ErrorKind::Numerical))?;
        Some((fit.beta, map))
    } else {
        None
    };
    let bundle = StrategyBundle::new(strategy, model.beta.clone(), model.feature_kind, observable, reduced)
        .map_err(err("eval", ErrorKind::Config))?;
    evaluate(&bundle, test).map_err(data_err)
}

/// Buses whose coefficient groups are nonzero in `model`.
pub fn instrumented_buses(model: &TrainedModel) -> Vec<usize> {
    let norms = model.partition.group_norms(&model.beta.entries);
    (0..norms.len()).filter(|&s| norms[s] != 0.0).collect()
}

/// Per-system outage and sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogSummary {
    pub n_buses: usize,
    pub n_branches: usize,
    pub n_lines: usize,
    pub duplicates: usize,
    pub islanding: usize,
    pub divergent: usize,
    pub feasible: usize,
    pub n_train: usize,
    pub n_test: usize,
}

pub fn catalog_summary(prep: &Prepared, sim: Option<&Simulated>) -> CatalogSummary {
    let count = |f: Feasibility| prep.catalog.flags.iter().filter(|x| **x == Some(f)).count();
    CatalogSummary {
        n_buses: prep.case.n_buses(),
        n_branches: prep.case.in_service_branches().count(),
        n_lines: prep.catalog.lines.len(),
        duplicates: prep.catalog.duplicates(),
        islanding: count(Feasibility::Islanding),
        divergent: count(Feasibility::Divergent),
        feasible: prep.lines.len(),
        n_train: sim.map_or(0, |s| s.train.len()),
        n_test: sim.map_or(0, |s| s.test.len()),
    }
}
