use std::fs;
use std::io::Write;
use std::path::Path;

use linemon::case_io::{build_outage_catalog, PowerSystemCase};
use linemon::dataset::Dataset;
use linemon::direct_obs::StrategyKind;
use linemon::eval::{emit_report, AccuracyReport, ReportFormat};
use linemon::experiment::presets::{recipe, recipe_configs, Recipe, RECIPES};
use linemon::experiment::{
    instrumented_buses, load_case, load_config, read_bin_artifact, run_pipeline, strategy_report, AutoTag, ErrorKind,
    ExperimentConfig, PipelineError, RhoMode, RunOptions, RunSummary, Stage, TauSpec,
};
use linemon::mlr::TrainedModel;
use linemon::powerflow::solve_ac;
use serde_json::json;

use crate::{Command, EvalArgs, Global, Overrides, PowerflowArgs, ReproduceArgs};

/// Writes to stdout; a closed pipe (`| head`) ends the process quietly.
fn emit(text: &str) {
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: stdout: {e}");
        std::process::exit(4);
    }
}

macro_rules! outln {
    ($($arg:tt)*) => {
        emit(&format!("{}\n", format_args!($($arg)*)))
    };
}

fn config_error(msg: impl std::fmt::Display) -> PipelineError {
    PipelineError::new("config", ErrorKind::Config, msg)
}

fn base_config(g: &Global) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &g.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn apply(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<(), PipelineError> {
    if let Some(v) = &o.case {
        cfg.case = v.clone();
    }
    if let Some(v) = o.steps {
        cfg.steps = v;
    }
    if let Some(v) = o.train_count {
        cfg.train_count = v;
    }
    if let Some(v) = o.test_count {
        cfg.test_count = v;
    }
    if let Some(v) = o.feature_kind {
        cfg.feature_kind = v;
    }
    if let Some(v) = &o.rho {
        cfg.rho = if v == "auto" {
            RhoMode::Auto(AutoTag::Auto)
        } else {
            RhoMode::Fixed(v.parse().map_err(|_| config_error(format!("--rho: expected a number or `auto`, got `{v}`")))?)
        };
    }
    if let Some(v) = &o.tau {
        cfg.tau = match v.as_slice() {
            [t] => TauSpec::Single(*t),
            _ => TauSpec::Grid(v.clone()),
        };
    }
    if let Some(v) = o.heuristic {
        cfg.heuristic = v;
    }
    if let Some(v) = o.num_pmus {
        cfg.num_pmus = Some(v);
    }
    if let Some(v) = o.force_reference {
        cfg.force_reference = v;
    }
    if let Some(v) = o.strategy {
        cfg.strategy = v;
        if o.feature_kind.is_none() {
            cfg.feature_kind = v.feature_kind();
        }
    }
    if let Some(v) = o.eta {
        cfg.eta = v;
    }
    cfg.validate()?;
    Ok(())
}

fn options(g: &Global) -> RunOptions {
    RunOptions {
        force: g.force,
        trace: g.trace,
    }
}

pub fn dispatch(g: &Global, command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Synth(o) => stage(g, &o, Stage::Synth),
        Command::Simulate(o) => stage(g, &o, Stage::Simulate),
        Command::Train(o) => stage(g, &o, Stage::Train),
        Command::Place(o) => stage(g, &o, Stage::Place),
        Command::Eval(a) => eval(g, a),
        Command::Powerflow(a) => powerflow(g, a),
        Command::Reproduce(a) => reproduce(g, a),
    }
}

fn stage(g: &Global, o: &Overrides, until: Stage) -> Result<(), PipelineError> {
    let mut cfg = base_config(g)?;
    apply(&mut cfg, o)?;
    if until == Stage::Place && cfg.num_pmus.is_none() {
        return Err(config_error("place needs --num-pmus or `num_pmus` in the config"));
    }
    let summary = run_pipeline(&cfg, until, options(g))?;
    print_summary(&summary);
    Ok(())
}

fn print_summary(s: &RunSummary) {
    let m = &s.manifest;
    let state = if s.reused { "up to date" } else { "done" };
    outln!("{} ({:?} {state})", s.dir.display(), m.stage);
    let c = &m.catalog;
    outln!(
        "  buses {}  lines {}  infeasible {}  feasible {}  train {}  test {}",
        c.n_buses,
        c.n_lines,
        c.islanding + c.divergent,
        c.feasible,
        c.n_train,
        c.n_test
    );
    for p in &m.placements {
        let mut v = p.selected_buses.clone();
        v.sort_unstable();
        let short = if p.short { " (short)" } else { "" };
        outln!("  tau {:e}: {:?}{short}", p.tau, v);
    }
    for e in &m.reports {
        let r = &e.report;
        outln!(
            "  {}: top-1 {:.4}  p>=0.9 {:.4}  p>=0.5 {:.4}  {}",
            e.label,
            r.rank_le_1,
            r.prob_ge_09,
            r.prob_ge_05,
            e.buses.as_deref().unwrap_or("all buses")
        );
    }
}

fn write_output(text: &str, out: Option<&Path>) -> Result<(), PipelineError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| PipelineError::new("eval", ErrorKind::Data, format!("{}: {e}", p.display()))),
        None => {
            emit(text);
            Ok(())
        }
    }
}

fn render(reports: &[(String, AccuracyReport)], format: ReportFormat) -> String {
    if let [(_, r)] = reports {
        return emit_report(r, format);
    }
    match format {
        ReportFormat::Json => {
            let v: serde_json::Map<String, serde_json::Value> = reports
                .iter()
                .map(|(l, r)| (l.clone(), serde_json::to_value(r).expect("report json")))
                .collect();
            let mut s = serde_json::to_string_pretty(&v).expect("json");
            s.push('\n');
            s
        }
        _ => reports
            .iter()
            .map(|(l, r)| format!("## {l}\n\n{}", emit_report(r, format)))
            .collect::<Vec<_>>()
            .join("\n"),
    }
}

fn eval(g: &Global, a: EvalArgs) -> Result<(), PipelineError> {
    let mut cfg = base_config(g)?;
    apply(&mut cfg, &a.overrides)?;
    let reports = match (&a.model, &a.test_cache) {
        (Some(model), Some(test)) => vec![("model".to_string(), eval_files(&cfg, model, test)?)],
        _ => {
            let s = run_pipeline(&cfg, Stage::Eval, options(g))?;
            s.manifest.reports.into_iter().map(|e| (e.label, e.report)).collect()
        }
    };
    write_output(&render(&reports, a.format), a.out.as_deref())
}

/// Evaluates a saved model on a saved test set. Line endpoints come from the
/// config's case; prescreen also reads `train.bin` beside the test set.
fn eval_files(cfg: &ExperimentConfig, model_path: &Path, test_path: &Path) -> Result<AccuracyReport, PipelineError> {
    let data = |e: String| PipelineError::new("eval", ErrorKind::Data, e);
    let model = TrainedModel::from_bytes(&read_bin_artifact(model_path)?).map_err(|e| data(format!("{}: {e}", model_path.display())))?;
    let test = Dataset::from_bytes(&read_bin_artifact(test_path)?).map_err(|e| data(format!("{}: {e}", test_path.display())))?;
    let case = load_case(cfg)?;
    if case.n_buses() != model.n_buses {
        return Err(data(format!(
            "model is for {} buses but case `{}` has {}",
            model.n_buses,
            cfg.case,
            case.n_buses()
        )));
    }
    let catalog = build_outage_catalog(&case);
    let endpoints = model
        .class_lines
        .iter()
        .map(|&i| catalog.lines.get(i).map(|l| l.endpoints).ok_or_else(|| data(format!("model refers to unknown line {i}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let train = if cfg.strategy == StrategyKind::Prescreen {
        let p = test_path.with_file_name("train.bin");
        Some(Dataset::from_bytes(&read_bin_artifact(&p)?).map_err(|e| data(format!("{}: {e}", p.display())))?)
    } else {
        None
    };
    let reference = (!cfg.reference_observes_lines).then_some(case.reference_bus);
    let instrumented = instrumented_buses(&model);
    strategy_report(
        cfg.strategy,
        &model,
        &test,
        train.as_ref(),
        &endpoints,
        &instrumented,
        reference,
        &cfg.solver,
    )
}

fn parse_outage(case: &PowerSystemCase, spec: &str) -> Result<linemon::case_io::OutageLine, PipelineError> {
    let bad = || config_error(format!("--outage: expected `FROM-TO` bus numbers, got `{spec}`"));
    let (a, b) = spec.split_once('-').ok_or_else(bad)?;
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().parse().map_err(|_| bad())?;
    let (ia, ib) = match (case.index_of(a), case.index_of(b)) {
        (Some(x), Some(y)) => (x.min(y), x.max(y)),
        _ => return Err(config_error(format!("--outage: no bus {a} or {b} in the case"))),
    };
    build_outage_catalog(case)
        .lines
        .into_iter()
        .find(|l| l.endpoints == [ia, ib])
        .ok_or_else(|| config_error(format!("--outage: no in-service line between {a} and {b}")))
}

fn powerflow(g: &Global, a: PowerflowArgs) -> Result<(), PipelineError> {
    let mut cfg = base_config(g)?;
    if let Some(c) = a.case {
        cfg.case = c;
    }
    if !(a.demand_scale.is_finite() && a.demand_scale >= 0.0) {
        return Err(config_error(format!("--demand-scale must be non-negative, got {}", a.demand_scale)));
    }
    let mut case = load_case(&cfg)?;
    if let Some(spec) = &a.outage {
        let line = parse_outage(&case, spec)?;
        case = linemon::powerflow::apply_outage(&case, &line);
    }
    let demand: Vec<(f64, f64)> = case
        .base_demand()
        .into_iter()
        .map(|(p, q)| (p * a.demand_scale, q * a.demand_scale))
        .collect();
    let (state, report) = solve_ac(&case, &demand, a.demand_scale).map_err(|e| PipelineError::new("powerflow", ErrorKind::Numerical, e))?;
    let buses: Vec<_> = (0..case.n_buses())
        .map(|i| json!({"bus": case.bus_id(i), "vm": state.magnitudes[i], "va": state.angles[i]}))
        .collect();
    let out = json!({
        "case": case.name,
        "converged": report.converged,
        "iterations": report.iterations,
        "max_mismatch": report.max_mismatch,
        "buses": buses,
    });
    outln!("{}", serde_json::to_string_pretty(&out).expect("json"));
    if report.converged {
        Ok(())
    } else {
        Err(PipelineError::new("powerflow", ErrorKind::Numerical, "Newton-Raphson did not converge"))
    }
}

fn reproduce(g: &Global, a: ReproduceArgs) -> Result<(), PipelineError> {
    let base = base_config(g)?;
    let recipes: Vec<&Recipe> = match &a.system {
        Some(s) => {
            let r = recipe(s).ok_or_else(|| config_error(format!("unknown system `{s}` (14bus, 30bus, 57bus, 118bus)")))?;
            if r.large && !g.large {
                return Err(config_error(format!("{} is a large system; pass --large to run it", r.system)));
            }
            vec![r]
        }
        None => RECIPES.iter().filter(|r| g.large || !r.large).collect(),
    };
    for r in recipes {
        outln!("# {}", r.system);
        for ((label, mut cfg), published) in recipe_configs(r, &base).into_iter().zip(std::iter::once(None).chain(r.placements.iter().map(Some))) {
            apply(&mut cfg, &a.overrides)?;
            cfg.case = r.case.to_string();
            outln!("## {label}");
            let s = run_pipeline(&cfg, Stage::Eval, options(g))?;
            print_summary(&s);
            if let Some(p) = published {
                let ids: Vec<String> = p.buses.iter().map(u32::to_string).collect();
                outln!("  published: {{{}}}", ids.join(", "));
            }
        }
    }
    Ok(())
}
