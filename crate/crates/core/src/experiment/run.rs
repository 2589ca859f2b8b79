//! On-disk pipeline: one directory per config hash, cached artifacts and a
//! manifest recording the last completed stage.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::stages::{self, err, CatalogSummary, ErrorKind, PipelineError, Prepared, Simulated};
use super::ExperimentConfig;
use crate::binio::{unwrap_artifact, wrap_artifact};
use crate::case_io::OutageCatalog;
use crate::dataset::{Dataset, FeatureKind};
use crate::demand::{synthesize, DemandProfile};
use crate::direct_obs::build_l;
use crate::eval::{emit_report, AccuracyReport, ReportFormat};
use crate::mlr::TrainedModel;
use crate::placement::PlacementReport;
use crate::solvers::{sparsa_solve, write_trace_csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Simulate,
    Train,
    Place,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Simulate => "simulate",
            Stage::Train => "train",
            Stage::Place => "place",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Recompute every artifact even when cached.
    pub force: bool,
    /// Write SpaRSA iteration traces next to placement artifacts.
    pub trace: bool,
}

/// Embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            config: serde_json::from_str(&cfg.canonical_json()).expect("canonical json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    /// `full` or `tau<τ>`.
    pub label: String,
    pub tau: Option<f64>,
    /// Instrumented buses as `{1*, 11, 12}`; absent for full instrumentation.
    pub buses: Option<String>,
    pub report: AccuracyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    pub catalog: CatalogSummary,
    pub rho: Option<f64>,
    pub placements: Vec<PlacementReport>,
    pub reports: Vec<EvalEntry>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    /// The manifest already covered the requested stage; nothing was run.
    pub reused: bool,
    pub manifest: Manifest,
}

pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join(format!("run-{}", cfg.hash()))
}

pub fn tau_label(tau: f64) -> String {
    format!("tau{tau:e}")
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    provenance: &'a Provenance,
    data: &'a T,
}

#[derive(Deserialize)]
struct Unwrapped<T> {
    data: T,
}

/// Reads a JSON artifact written by the pipeline, or a bare payload.
pub fn read_json_artifact<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let e = err("load", ErrorKind::Data);
    let text = fs::read_to_string(path).map_err(|x| e(format!("{}: {x}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|x| e(format!("{}: {x}", path.display())))?;
    let inner = if v.get("provenance").is_some() {
        serde_json::from_value::<Unwrapped<T>>(v).map(|u| u.data)
    } else {
        serde_json::from_value(v)
    };
    inner.map_err(|x| e(format!("{}: {x}", path.display())))
}

/// Payload of a binary artifact, with or without the provenance envelope.
pub fn read_bin_artifact(path: &Path) -> Result<Vec<u8>, PipelineError> {
    let buf = fs::read(path).map_err(|x| PipelineError::new("load", ErrorKind::Data, format!("{}: {x}", path.display())))?;
    if buf.starts_with(b"LMAR") {
        let (_, payload) = unwrap_artifact(&buf).map_err(|x| PipelineError::new("load", ErrorKind::Data, format!("{}: {x}", path.display())))?;
        Ok(payload.to_vec())
    } else {
        Ok(buf)
    }
}

struct RunDir {
    dir: PathBuf,
    prov: Provenance,
    prov_json: String,
    force: bool,
    written: Vec<String>,
}

impl RunDir {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn cached(&self, name: &str) -> bool {
        !self.force && self.path(name).is_file()
    }

    fn write_raw(&mut self, stage: &'static str, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let io = |x: std::io::Error| PipelineError::new(stage, ErrorKind::Data, format!("writing {name}: {x}"));
        let tmp = self.path(&format!(".{name}.tmp"));
        fs::write(&tmp, bytes).map_err(io)?;
        fs::rename(&tmp, self.path(name)).map_err(io)?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, stage: &'static str, name: &str, data: &T) -> Result<(), PipelineError> {
        let w = Wrapped {
            provenance: &self.prov,
            data,
        };
        let mut text = serde_json::to_string_pretty(&w).map_err(err(stage, ErrorKind::Data))?;
        text.push('\n');
        self.write_raw(stage, name, text.as_bytes())
    }

    fn write_bin(&mut self, stage: &'static str, name: &str, payload: &[u8]) -> Result<(), PipelineError> {
        let bytes = wrap_artifact(&self.prov_json, payload);
        self.write_raw(stage, name, &bytes)
    }

    /// Text artifact followed by a provenance comment in `open … close` form.
    fn write_text(&mut self, stage: &'static str, name: &str, body: &str, open: &str, close: &str) -> Result<(), PipelineError> {
        let text = format!("{body}{open}provenance: {}{close}\n", self.prov_json);
        self.write_raw(stage, name, text.as_bytes())
    }

    fn note(&mut self, name: &str) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
    }
}

/// Runs every stage up to and including `until`, reusing cached artifacts.
pub fn run_pipeline(cfg: &ExperimentConfig, until: Stage, opts: RunOptions) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let dir = run_dir(cfg);
    let manifest_path = dir.join("manifest.json");
    if !opts.force && manifest_path.is_file() {
        if let Ok(m) = read_json_artifact::<Manifest>(&manifest_path) {
            if m.stage >= until {
                log::info!("{} is up to date", dir.display());
                return Ok(RunSummary {
                    dir,
                    reused: true,
                    manifest: m,
                });
            }
        }
    }
    fs::create_dir_all(&dir).map_err(|x| PipelineError::new("setup", ErrorKind::Data, format!("{}: {x}", dir.display())))?;
    let prov = Provenance::of(cfg);
    let mut run = RunDir {
        prov_json: serde_json::to_string(&prov).expect("provenance json"),
        prov,
        dir: dir.clone(),
        force: opts.force,
        written: Vec::new(),
    };
    match run_stages(cfg, until, opts, &mut run) {
        Ok(mut manifest) => {
            manifest.artifacts = run.written.clone();
            manifest.artifacts.push("manifest.json".into());
            run.write_json("eval", "manifest.json", &manifest)?;
            for s in [Stage::Synth, Stage::Simulate, Stage::Train, Stage::Place, Stage::Eval] {
                let _ = fs::remove_file(dir.join(format!("{}.failed", s.name())));
            }
            Ok(RunSummary {
                dir,
                reused: false,
                manifest,
            })
        }
        Err(e) => {
            let _ = fs::write(dir.join(format!("{}.failed", e.stage)), format!("{e}\n"));
            Err(e)
        }
    }
}

fn run_stages(cfg: &ExperimentConfig, until: Stage, opts: RunOptions, run: &mut RunDir) -> Result<Manifest, PipelineError> {
    let toml_body = format!("# config hash {}\n{}", cfg.hash(), cfg.to_toml());
    run.write_raw("synth", "config.toml", toml_body.as_bytes())?;

    let prep = synth_stage(cfg, run)?;
    let mut manifest = Manifest {
        stage: Stage::Synth,
        catalog: stages::catalog_summary(&prep, None),
        rho: None,
        placements: vec![],
        reports: vec![],
        artifacts: vec![],
    };
    if until == Stage::Synth {
        return Ok(manifest);
    }

    let sim = simulate_stage(cfg, &prep, run)?;
    manifest.stage = Stage::Simulate;
    manifest.catalog = stages::catalog_summary(&prep, Some(&sim));
    manifest.rho = (cfg.feature_kind != FeatureKind::Plain).then_some(sim.rho);
    if until == Stage::Simulate {
        return Ok(manifest);
    }

    let full = train_stage(cfg, &prep, &sim, run)?;
    manifest.stage = Stage::Train;
    if until == Stage::Train {
        return Ok(manifest);
    }

    let placed = place_stage(cfg, &prep, &sim, opts, run)?;
    manifest.placements = placed.iter().map(|p| p.report.clone()).collect();
    manifest.stage = Stage::Place;
    if until == Stage::Place {
        return Ok(manifest);
    }

    manifest.reports = eval_stage(cfg, &prep, &sim, &full, &placed, run)?;
    manifest.stage = Stage::Eval;
    Ok(manifest)
}

fn synth_stage(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<Prepared, PipelineError> {
    let case = stages::load_case(cfg)?;
    let catalog = if run.cached("catalog.json") {
        run.note("catalog.json");
        read_json_artifact::<OutageCatalog>(&run.path("catalog.json"))?
    } else {
        let c = stages::screened_catalog(&case);
        run.write_json("synth", "catalog.json", &c)?;
        c
    };
    let profile = if run.cached("profile.bin") {
        run.note("profile.bin");
        let payload = read_bin_artifact(&run.path("profile.bin"))?;
        DemandProfile::from_bytes(&payload, &case).map_err(err("synth", ErrorKind::Data))?
    } else {
        let p = synthesize(&case, &cfg.ou_params(), cfg.steps).map_err(err("synth", ErrorKind::Config))?;
        run.write_bin("synth", "profile.bin", &p.to_bytes())?;
        p
    };
    if profile.steps() != cfg.steps {
        return Err(PipelineError::new(
            "synth",
            ErrorKind::Data,
            format!("cached profile has {} steps, config asks for {}", profile.steps(), cfg.steps),
        ));
    }
    Ok(Prepared {
        lines: catalog.feasible_lines(),
        case,
        catalog,
        profile,
    })
}

#[derive(Serialize, Deserialize)]
struct SimulateMeta {
    rho: f64,
    dropped: Vec<(usize, usize)>,
}

fn simulate_stage(cfg: &ExperimentConfig, prep: &Prepared, run: &mut RunDir) -> Result<Simulated, PipelineError> {
    let names = ["train.bin", "test.bin", "simulate.json"];
    if names.iter().all(|n| run.cached(n)) {
        names.iter().for_each(|n| run.note(n));
        let load = |n: &str| -> Result<Dataset<f64>, PipelineError> {
            Dataset::from_bytes(&read_bin_artifact(&run.path(n))?).map_err(err("simulate", ErrorKind::Data))
        };
        let meta: SimulateMeta = read_json_artifact(&run.path("simulate.json"))?;
        let direct = if cfg.feature_kind == FeatureKind::Combined {
            Some(build_l(&prep.lines, cfg.eta).map_err(err("simulate", ErrorKind::Config))?)
        } else {
            None
        };
        return Ok(Simulated {
            rho: meta.rho,
            dropped: meta.dropped,
            train: load("train.bin")?,
            test: load("test.bin")?,
            direct,
        });
    }
    let sim = stages::simulate(cfg, prep)?;
    run.write_bin("simulate", "train.bin", &sim.train.to_bytes())?;
    run.write_bin("simulate", "test.bin", &sim.test.to_bytes())?;
    run.write_json(
        "simulate",
        "simulate.json",
        &SimulateMeta {
            rho: sim.rho,
            dropped: sim.dropped.clone(),
        },
    )?;
    Ok(sim)
}

fn load_model(run: &RunDir, name: &str, stage: &'static str) -> Result<TrainedModel, PipelineError> {
    TrainedModel::from_bytes(&read_bin_artifact(&run.path(name))?).map_err(err(stage, ErrorKind::Data))
}

fn train_stage(cfg: &ExperimentConfig, prep: &Prepared, sim: &Simulated, run: &mut RunDir) -> Result<TrainedModel, PipelineError> {
    if run.cached("model.bin") {
        run.note("model.bin");
        run.note("model.json");
        return load_model(run, "model.bin", "train");
    }
    let model = stages::train_full(cfg, prep, sim)?;
    run.write_bin("train", "model.bin", &model.to_bytes())?;
    let json: serde_json::Value = serde_json::from_str(&model.to_json()).map_err(err("train", ErrorKind::Data))?;
    run.write_json("train", "model.json", &json)?;
    Ok(model)
}

struct Placed {
    tau: f64,
    report: PlacementReport,
    buses: String,
    /// Internal indices of the instrumented buses.
    selected: Vec<usize>,
    model: TrainedModel,
}

fn place_stage(cfg: &ExperimentConfig, prep: &Prepared, sim: &Simulated, opts: RunOptions, run: &mut RunDir) -> Result<Vec<Placed>, PipelineError> {
    let Some(r) = cfg.num_pmus else {
        return Ok(vec![]);
    };
    let taus = cfg.tau.values();
    let cached: Vec<bool> = taus
        .iter()
        .map(|&t| run.cached(&format!("placement-{}.json", tau_label(t))) && run.cached(&format!("model-{}.bin", tau_label(t))))
        .collect();
    type Fresh = Result<Option<(Placed, crate::placement::PlacementResult<f64>)>, PipelineError>;
    let fresh: Vec<Fresh> = taus
        .par_iter()
        .zip(&cached)
        .map(|(&tau, &hit)| {
            if hit {
                return Ok(None);
            }
            let res = stages::place(cfg, prep, sim, tau, r)?;
            let model = stages::placement_model(cfg, prep, sim, &res)?;
            Ok(Some((
                Placed {
                    tau,
                    report: res.report(&prep.case, r),
                    buses: res.bus_set_string(&prep.case),
                    selected: res.selected.clone(),
                    model,
                },
                res,
            )))
        })
        .collect();
    let mut out = Vec::with_capacity(taus.len());
    for ((&tau, hit), f) in taus.iter().zip(cached).zip(fresh) {
        let label = tau_label(tau);
        let (json_name, model_name) = (format!("placement-{label}.json"), format!("model-{label}.bin"));
        if hit {
            run.note(&json_name);
            run.note(&model_name);
            let report: PlacementReport = read_json_artifact(&run.path(&json_name))?;
            let model = load_model(run, &model_name, "place")?;
            let selected = report
                .selected_buses
                .iter()
                .map(|&id| prep.case.index_of(id).ok_or_else(|| PipelineError::new("place", ErrorKind::Data, format!("unknown bus {id}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let buses = bus_set(&report.selected_buses, &report.forced_buses);
            out.push(Placed {
                tau,
                report,
                buses,
                selected,
                model,
            });
            continue;
        }
        let (placed, res) = f?.expect("computed when not cached");
        log::info!("{label}: {} PMUs at {}", placed.selected.len(), placed.buses);
        run.write_json("place", &json_name, &placed.report)?;
        run.write_bin("place", &model_name, &placed.model.to_bytes())?;
        if opts.trace {
            write_traces(cfg, prep, sim, &res, run)?;
        }
        out.push(placed);
    }
    Ok(out)
}

/// `{1*, 11, 12}` from original ids.
pub fn bus_set(selected: &[u32], forced: &[u32]) -> String {
    let mut v = selected.to_vec();
    v.sort_unstable();
    let parts: Vec<String> = v
        .iter()
        .map(|id| if forced.contains(id) { format!("{id}*") } else { id.to_string() })
        .collect();
    format!("{{{}}}", parts.join(", "))
}

/// Per-step group norms of the placement and the iteration trace of one
/// SpaRSA solve at the same `τ` with only the forced groups unpenalized.
fn write_traces(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    sim: &Simulated,
    res: &crate::placement::PlacementResult<f64>,
    run: &mut RunDir,
) -> Result<(), PipelineError> {
    let label = tau_label(res.tau);
    let mut steps = String::from("step,chosen_bus,bus,group_norm\n");
    for t in &res.trace {
        for (s, q) in t.group_norms.iter().enumerate() {
            steps.push_str(&format!("{},{},{},{q:e}\n", t.step, prep.case.bus_id(t.chosen), prep.case.bus_id(s)));
        }
    }
    run.write_text("place", &format!("selection-{label}.csv"), &steps, "# ", "")?;

    let partition = stages::partition_for(cfg.feature_kind, prep.case.n_buses(), sim.direct.as_ref())?;
    let penalized: Vec<usize> = (0..partition.n_groups()).filter(|s| !res.forced.contains(s)).collect();
    let zero = crate::mlr::CoefficientMatrix::zeros(sim.train.dim(), sim.train.n_classes);
    let sol = sparsa_solve(&sim.train, &partition, res.tau, &penalized, &zero, &cfg.solver).map_err(err("place", ErrorKind::Numerical))?;
    let mut buf = Vec::new();
    write_trace_csv(&sol.trace, &mut buf).map_err(err("place", ErrorKind::Data))?;
    let body = String::from_utf8(buf).expect("utf8 csv");
    run.write_text("place", &format!("sparsa-{label}.csv"), &body, "# ", "")
}

fn eval_stage(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    sim: &Simulated,
    full: &TrainedModel,
    placed: &[Placed],
    run: &mut RunDir,
) -> Result<Vec<EvalEntry>, PipelineError> {
    let mut entries = Vec::new();
    if placed.is_empty() {
        let all: Vec<usize> = (0..prep.case.n_buses()).collect();
        let report = stages::evaluate_strategy(cfg, prep, sim, full, &all)?;
        entries.push(EvalEntry {
            label: "full".into(),
            tau: None,
            buses: None,
            report,
        });
    }
    for p in placed {
        let report = stages::evaluate_strategy(cfg, prep, sim, &p.model, &p.selected)?;
        entries.push(EvalEntry {
            label: tau_label(p.tau),
            tau: Some(p.tau),
            buses: Some(p.buses.clone()),
            report,
        });
    }
    for e in &entries {
        let stem = if e.tau.is_some() {
            format!("report-{}", e.label)
        } else {
            "report".to_string()
        };
        run.write_json("eval", &format!("{stem}.json"), &e.report)?;
        let md = emit_report(&e.report, ReportFormat::Markdown);
        run.write_text("eval", &format!("{stem}.md"), &md, "\n<!-- ", " -->")?;
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bus_set_marks_forced() {
        assert_eq!(bus_set(&[12, 1, 11], &[1]), "{1*, 11, 12}");
    }

    #[test]
    fn tau_labels_are_compact() {
        assert_eq!(tau_label(5e-3), "tau5e-3");
        assert_eq!(tau_label(1.1), "tau1.1e0");
    }

    #[test]
    fn stages_are_ordered() {
        assert!(Stage::Synth < Stage::Simulate && Stage::Place < Stage::Eval);
    }
}
