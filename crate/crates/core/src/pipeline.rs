//! The nine file-connected stages behind the command line. Each stage reads
//! one input directory, writes one output directory and finishes by writing
//! `manifest.json` there, listing its artifacts with their digests.
//!
//! Stage outputs:
//! - simulate: `runs.json`, `<run>/payloads.jsonl`, `<run>/ground_truth.jsonl`
//! - ingest: `runs.json`, `<run>.csv` frame datasets
//! - features: `scaling.json`
//! - train-rf: `forest.json`, `cv_report.json`, `scaling.json`
//! - train-cnn: `model.json`, `weights.bin`, `history.csv`, `scaling.json`
//! - predict / trajfit: `<run>.csv` trajectories (plus `<run>.estimates.csv`
//!   for the network, `limits.json` for the refined model)
//! - evaluate: `<model>_errors.csv`, `metrics.json`, `comparison.csv`
//! - report: `trajectory_<run>.svg`, `rssi_heatmap.svg`, `comparison.csv`

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Config, Settings};
use crate::error::{Error, Result};
use crate::eval::{self, ErrorReport};
use crate::features::{forest_features, network_inputs, select_all, MinMaxParams, ScalingSidecar, ZNormParams, CHANNELS};
use crate::forest::{self, cross_validate, CvReport, Forest};
use crate::fsio::{read_json, sha256_file, write_atomic, write_json};
use crate::grid::GridSpec;
use crate::ingest::{self, Frame, FrameDataset};
use crate::nn::{self, CnnModel, LabelScaler, Network, Split, Tensor};
use crate::par::Exec;
use crate::sim::{self, engine::mix_seed, TrajectoryPlan};
use crate::trajfit::{self, FrameEstimate, LabelledRun, RegParams};

pub const MANIFEST: &str = "manifest.json";
pub const RUN_INDEX: &str = "runs.json";
pub const SCALING: &str = "scaling.json";
pub const FOREST_FILE: &str = "forest.json";
pub const LIMITS: &str = "limits.json";
pub const METRICS: &str = "metrics.json";
pub const COMPARISON: &str = "comparison.csv";

/// Offset separating test-plan seeds from the simulator's own streams.
const TEST_PLAN_STREAM: u64 = 0x7e57;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rf,
    Cnn,
    Rcnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Rf, ModelKind::Cnn, ModelKind::Rcnn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::Cnn => "cnn",
            ModelKind::Rcnn => "rcnn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}; expected rf, cnn or rcnn")))
    }
}

#[derive(Debug, Clone, Default)]
pub struct StageOptions {
    /// Overrides layered on top of the upstream stage's configuration.
    pub config: Config,
    pub exec: Exec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// relative to the stage directory
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    /// Upstream directories by role (`runs`, `data`, `features`, `model`, ...).
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<Artifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
}

impl RunManifest {
    /// Loads `dir/manifest.json` and checks that every listed artifact exists
    /// with the recorded digest.
    pub fn load(dir: &Path) -> Result<Self> {
        let m: RunManifest = read_json(&dir.join(MANIFEST))?;
        let cfg = Config::from_map(&m.config)?;
        if cfg.hash() != m.config_hash {
            return Err(Error::Schema(format!("{}: config hash does not match its config", dir.display())));
        }
        for a in &m.outputs {
            let p = dir.join(&a.path);
            if !p.is_file() {
                return Err(Error::Schema(format!("{}: missing artifact {}", dir.display(), a.path)));
            }
            if sha256_file(&p)? != a.sha256 {
                return Err(Error::Schema(format!("{}: artifact {} changed since it was written", dir.display(), a.path)));
            }
        }
        Ok(m)
    }

    pub fn input(&self, role: &str) -> Result<&Path> {
        self.inputs
            .get(role)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::Input(format!("{} stage output has no upstream {role} directory", self.stage)))
    }
}

/// Directory role a stage's output plays for later stages.
fn role_of(stage: &str) -> &'static str {
    match stage {
        "simulate" => "runs",
        "ingest" => "data",
        "features" => "features",
        "train-rf" | "train-cnn" => "model",
        "predict" | "trajfit" => "predictions",
        "evaluate" => "evaluation",
        _ => "report",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub label: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payloads: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    #[serde(default)]
    pub overflow: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunIndex {
    pub grid: GridSpec,
    pub runs: Vec<RunEntry>,
}

impl RunIndex {
    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &RunEntry> {
        self.runs.iter().filter(move |r| r.role == role)
    }
}

struct Stage {
    name: &'static str,
    dir: PathBuf,
    config: Config,
    settings: Settings,
    inputs: BTreeMap<String, PathBuf>,
    outputs: Vec<String>,
    model: Option<ModelKind>,
    started: Instant,
}

impl Stage {
    fn begin(name: &'static str, upstream: Option<(&Path, &RunManifest)>, out: &Path, opts: &StageOptions) -> Result<Self> {
        let (base, inputs) = match upstream {
            Some((dir, m)) => {
                let mut inputs = m.inputs.clone();
                inputs.insert(role_of(&m.stage).to_string(), canonical(dir)?);
                (Config::from_map(&m.config)?, inputs)
            }
            None => (Config::new(), BTreeMap::new()),
        };
        let config = base.overlay(&opts.config);
        let settings = config.settings()?;
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        log::info!("{name}: writing {}", out.display());
        Ok(Self {
            name,
            dir: out.to_path_buf(),
            config,
            settings,
            inputs,
            outputs: Vec::new(),
            model: upstream.and_then(|(_, m)| m.model),
            started: Instant::now(),
        })
    }

    /// Path of a new artifact, recorded for the manifest.
    fn artifact(&mut self, rel: &str) -> PathBuf {
        self.outputs.push(rel.to_string());
        self.dir.join(rel)
    }

    fn finish(self) -> Result<RunManifest> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for rel in &self.outputs {
            outputs.push(Artifact {
                path: rel.clone(),
                sha256: sha256_file(&self.dir.join(rel))?,
            });
        }
        let m = RunManifest {
            stage: self.name.to_string(),
            config_hash: self.config.hash(),
            seed: self.settings.seed,
            config: self.config.resolved(),
            inputs: self.inputs,
            outputs,
            model: self.model,
        };
        write_json(&self.dir.join(MANIFEST), &m)?;
        log::info!("{}: done in {:.1} s", self.name, self.started.elapsed().as_secs_f64());
        Ok(m)
    }
}

fn canonical(p: &Path) -> Result<PathBuf> {
    p.canonicalize().map_err(|e| Error::io(p, e))
}

fn expect_stage(m: &RunManifest, dir: &Path, allowed: &[&str]) -> Result<()> {
    if allowed.contains(&m.stage.as_str()) {
        Ok(())
    } else {
        Err(Error::Input(format!(
            "{} holds {} output; expected {}",
            dir.display(),
            m.stage,
            allowed.join(" or ")
        )))
    }
}

fn load_upstream(dir: &Path, allowed: &[&str]) -> Result<RunManifest> {
    let m = RunManifest::load(dir)?;
    expect_stage(&m, dir, allowed)?;
    Ok(m)
}

fn load_index(data: &Path) -> Result<RunIndex> {
    read_json(&data.join(RUN_INDEX))
}

fn load_dataset(data: &Path, entry: &RunEntry, grid: &GridSpec) -> Result<FrameDataset> {
    let rel = entry
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Input(format!("run {} has no dataset file", entry.label)))?;
    ingest::read_dataset(&data.join(rel), grid)
}

fn frames_of(data: &Path, index: &RunIndex, role: Role) -> Result<Vec<FrameDataset>> {
    index.with_role(role).map(|r| load_dataset(data, r, &index.grid)).collect()
}

fn selected(sets: &[FrameDataset], grid: &GridSpec) -> Result<Vec<Frame>> {
    let all: Vec<Frame> = sets.iter().flat_map(|d| d.frames.iter().cloned()).collect();
    select_all(&all, grid)
}

/// The scripted training runs plus `test_runs` random runs.
pub fn plans(settings: &Settings) -> Result<Vec<(TrajectoryPlan, Role)>> {
    let grid = settings.grid();
    let speed = settings.sim.robot_speed;
    let mut out: Vec<(TrajectoryPlan, Role)> = sim::plan_training_runs(&grid, speed)?
        .into_iter()
        .map(|p| (p, Role::Train))
        .collect();
    for k in 0..settings.test_runs {
        let seed = mix_seed(settings.seed, TEST_PLAN_STREAM + k as u64);
        let mut p = sim::plan_random_run(&grid, seed, settings.test_waypoints, speed)?;
        p.label = format!("test_{}", k + 1);
        out.push((p, Role::Test));
    }
    Ok(out)
}

pub fn simulate(out: &Path, opts: &StageOptions) -> Result<RunManifest> {
    let mut st = Stage::begin("simulate", None, out, opts)?;
    let s = st.settings.clone();
    let plans = plans(&s)?;
    let only: Vec<TrajectoryPlan> = plans.iter().map(|(p, _)| p.clone()).collect();
    let log = sim::simulate_with(&s.sim, &only, &s.signal, opts.exec)?;
    let mut runs = Vec::with_capacity(plans.len());
    for (run, (_, role)) in log.runs.iter().zip(&plans) {
        let payloads = format!("{}/payloads.jsonl", run.label);
        let gt = format!("{}/ground_truth.jsonl", run.label);
        write_atomic(&st.artifact(&payloads), |w| sim::write_payload_log(run, w))?;
        write_atomic(&st.artifact(&gt), |w| sim::write_ground_truth_log(run, w))?;
        if run.overflow > 0 {
            log::warn!("run {}: {} samples lost to full buffers", run.label, run.overflow);
        }
        runs.push(RunEntry {
            label: run.label.clone(),
            role: *role,
            payloads: Some(payloads),
            ground_truth: Some(gt),
            dataset: None,
            frames: None,
            overflow: run.overflow,
        });
    }
    let index = RunIndex { grid: s.grid(), runs };
    write_json(&st.artifact(RUN_INDEX), &index)?;
    st.finish()
}

pub fn ingest(input: &Path, out: &Path, opts: &StageOptions) -> Result<RunManifest> {
    let up = load_upstream(input, &["simulate"])?;
    let mut st = Stage::begin("ingest", Some((input, &up)), out, opts)?;
    let s = st.settings.clone();
    let index = load_index(input)?;
    if index.grid != s.grid() {
        return Err(Error::Config("grid differs from the simulated recording".into()));
    }
    let mut runs = Vec::with_capacity(index.runs.len());
    for entry in &index.runs {
        let missing = || Error::Input(format!("run {} lists no log files", entry.label));
        let ppath = input.join(entry.payloads.as_ref().ok_or_else(missing)?);
        let gpath = input.join(entry.ground_truth.as_ref().ok_or_else(missing)?);
        let pfile = File::open(&ppath).map_err(|e| Error::io(&ppath, e))?;
        let batches = ingest::parse_payload_log(BufReader::new(pfile), &index.grid)?;
        let gfile = File::open(&gpath).map_err(|e| Error::io(&gpath, e))?;
        let gt = sim::read_ground_truth_log(BufReader::new(gfile))?;
        let (ds, stats) = ingest::synchronize(&index.grid, &batches, &gt, s.sim.poll_rtt, opts.exec)?;
        log::info!(
            "run {}: {} frames, reference node {}, {} trimmed",
            entry.label,
            ds.frames.len(),
            stats.reference,
            stats.trimmed
        );
        let rel = format!("{}.csv", entry.label);
        ingest::write_dataset(&ds, &st.artifact(&rel))?;
        runs.push(RunEntry {
            dataset: Some(rel),
            frames: Some(ds.frames.len()),
            payloads: None,
            ground_truth: None,
            ..entry.clone()
        });
    }
    write_json(&st.artifact(RUN_INDEX), &RunIndex { grid: index.grid, runs })?;
    st.finish()
}

pub fn features(input: &Path, out: &Path, opts: &StageOptions) -> Result<RunManifest> {
    let up = load_upstream(input, &["ingest"])?;
    let mut st = Stage::begin("features", Some((input, &up)), out, opts)?;
    let index = load_index(input)?;
    let train = selected(&frames_of(input, &index, Role::Train)?, &index.grid)?;
    let minmax = MinMaxParams::fit(&train)?;
    let znorm = ZNormParams::fit(&train, &index.grid)?;
    write_json(&st.artifact(SCALING), &ScalingSidecar::new(&minmax, &znorm))?;
    st.finish()
}

struct Prepared {
    data: PathBuf,
    index: RunIndex,
    scaling: ScalingSidecar,
}

fn prepared(features_dir: &Path, m: &RunManifest) -> Result<Prepared> {
    let data = m.input("data")?.to_path_buf();
    let index = load_index(&data)?;
    let scaling = read_json(&features_dir.join(SCALING))?;
    Ok(Prepared { data, index, scaling })
}

pub fn train_rf(input: &Path, out: &Path, opts: &StageOptions) -> Result<RunManifest> {
    let up = load_upstream(input, &["features"])?;
    let mut st = Stage::begin("train-rf", Some((input, &up)), out, opts)?;
    let s = st.settings.clone();
    let p = prepared(input, &up)?;
    let grid = p.index.grid;
    let sets = frames_of(&p.data, &p.index, Role::Train)?;
    let frames = selected(&sets, &grid)?;
    let x = forest_features(&frames, &grid, &p.scaling.minmax())?;
    let y: Vec<[f64; 2]> = frames.iter().map(|f| f.label).collect();
    let candidates = forest::param_grid(&s.rf_base, &s.rf_trees, &s.rf_depths);
    let cv: CvReport = cross_validate(&x, &y, &candidates, opts.exec)?;
    log::info!(
        "chosen forest: {} trees, depth {:?}",
        cv.chosen.n_trees,
        cv.chosen.max_depth
    );
    let model = forest::fit_forest(&x, &y, &cv.chosen, opts.exec)?;
    model.save(&st.artifact(FOREST_FILE))?;
    write_json(&st.artifact("cv_report.json"), &cv)?;
    write_json(&st.artifact(SCALING), &p.scaling)?;
    st.model = Some(ModelKind::Rf);
    st.finish()
}

fn split_xy(frames: &[Frame], grid: &GridSpec, z: &ZNormParams, scaler: &LabelScaler) -> Result<(Vec<Tensor>, Vec<[f64; 2]>)> {
    let x = network_inputs(frames, grid, z)?;
    let y = frames.iter().map(|f| scaler.normalize(f.label)).collect();
    Ok((x, y))
}

/// The last training run is held out for early stopping.
pub fn train_cnn(input: &Path, out: &Path, opts: &StageOptions) -> Result<RunManifest> {
    let up = load_upstream(input, &["features"])?;
    let mut st = Stage::begin("train-cnn", Some((input, &up)), out, opts)?;
    let s = st.settings.clone();
    let p = prepared(input, &up)?;
    let grid = p.index.grid;
    let mut sets = frames_of(&p.data, &p.index, Role::Train)?;
    let val_sets = if sets.len() > 1 { vec![sets.pop().expect("non-empty")] } else { Vec::new() };
    let train_frames = selected(&sets, &grid)?;
    let val_frames = selected(&val_sets, &grid)?;
    let labels: Vec<[f64; 2]> = train_frames.iter().map(|f| f.label).collect();
    let scaler = LabelScaler::fit(&labels)?;
    let z = p.scaling.znorm();
    let (xt, yt) = split_xy(&train_frames, &grid, &z, &scaler)?;
    let (xv, yv) = split_xy(&val_frames, &grid, &z, &scaler)?;
    let net = Network::new(s.network.clone(), [grid.n_strips, grid.nodes_per_strip, CHANNELS])?;
    let init = net.init_params(s.seed);
    let (params, history) = nn::train(&net, init, Split::new(&xt, &yt)?, Split::new(&xv, &yv)?, &s.train, opts.exec)?;
    log::info!(
        "network: {} epochs, best {}, train nll {:.4} -> {:.4}",
        history.epochs.len() - 1,
        history.best_epoch,
        history.initial_train_nll(),
        history.final_train_nll()
    );
    let model = CnnModel {
        network: net,
        params,
        labels: scaler,
        seed: s.seed,
    };
    model.save(out, SCALING)?;
    st.outputs.push(nn::model::MANIFEST_FILE.to_string());
    st.outputs.push(nn::model::WEIGHTS_FILE.to_string());
    history.write_csv(&st.artifact("history.csv"))?;
    write_json(&st.artifact(SCALING), &p.scaling)?;
    st.model = Some(ModelKind::Cnn);
    st.finish()
}

fn estimates_of(times: &[f64], preds: &[nn::Prediction]) -> Vec<FrameEstimate> {
    times
        .iter()
        .zip(preds)
        .map(|(&t, p)| FrameEstimate {
            t,
            mu: p.mu,
            sigma: p.sigma,
            r: p.skew,
        })
        .collect()
}

/// Limits from the training labels of the data directory.
pub fn calibrate(data: &Path, index: &RunIndex) -> Result<RegParams> {
    let runs: Vec<LabelledRun> = frames_of(data, index, Role::Train)?
        .iter()
        .map(|d| LabelledRun {
            t: d.times(),
            labels: d.labels(),
        })
        .collect();
    trajfit::calibrate_limits(&runs)
}

fn refine(est: &[FrameEstimate], limits: &RegParams, window: Option<usize>, exec: Exec) -> Result<trajfit::FittedTrajectory> {
    match window {
        Some(w) => trajfit::fit_windowed(est, limits, w, exec),
        None => trajfit::fit(est, limits),
    }
}

fn estimates_file(label: &str) -> String {
    format!("{label}.estimates.csv")
}

fn trajectory_file(label: &str) -> String {
    format!("{label}.csv")
}

/// Localizes every test run with a trained model.
pub fn predict(kind: ModelKind, input: &Path, out: &Path, opts: &StageOptions) -> Result<RunManifest> {
    let allowed: &[&str] = if kind == ModelKind::Rf { &["train-rf"] } else { &["train-cnn"] };
    let up = load_upstream(input, allowed)?;
    let mut st = Stage::begin("predict", Some((input, &up)), out, opts)?;
    st.model = Some(kind);
    let s = st.settings.clone();
    let data = up.input("data")?.to_path_buf();
    let index = load_index(&data)?;
    let grid = index.grid;
    let scaling: ScalingSidecar = read_json(&input.join(SCALING))?;
    let limits = if kind == ModelKind::Rcnn {
        let l = calibrate(&data, &index)?;
        write_json(&st.artifact(LIMITS), &l)?;
        Some(l)
    } else {
        None
    };
    let forest = if kind == ModelKind::Rf { Some(Forest::load(&input.join(FOREST_FILE))?) } else { None };
    let cnn = if kind == ModelKind::Rf { None } else { Some(CnnModel::load(input)?) };
    for entry in index.with_role(Role::Test) {
        let ds = load_dataset(&data, entry, &grid)?;
        let frames = select_all(&ds.frames, &grid)?;
        let times = ds.times();
        let points = match (&forest, &cnn) {
            (Some(f), _) => f.predict_all(&forest_features(&frames, &grid, &scaling.minmax())?, opts.exec)?,
            (None, Some(m)) => {
                let preds = m.predict(&network_inputs(&frames, &grid, &scaling.znorm())?, opts.exec)?;
                let est = estimates_of(&times, &preds);
                trajfit::write_estimates_csv(&st.artifact(&estimates_file(&entry.label)), &est)?;
                match &limits {
                    Some(l) => refine(&est, l, s.trajfit_window, opts.exec)?.points,
                    None => est.iter().map(|e| e.mu).collect(),
                }
            }
            (None, None) => unreachable!("one model is always loaded"),
        };
        trajfit::write_trajectory_csv(&st.artifact(&trajectory_file(&entry.label)), &times, &points)?;
    }
    st.finish()
}

/// Refines network predictions into regularized trajectories.
pub fn trajfit(input: &Path, out: &Path, opts: &StageOptions) -> Result<RunManifest> {
    let up = load_upstream(input, &["predict"])?;
    if up.model != Some(ModelKind::Cnn) {
        return Err(Error::Input(format!(
            "{} does not hold network predictions with uncertainty",
            input.display()
        )));
    }
    let mut st = Stage::begin("trajfit", Some((input, &up)), out, opts)?;
    st.model = Some(ModelKind::Rcnn);
    let s = st.settings.clone();
    let data = up.input("data")?.to_path_buf();
    let index = load_index(&data)?;
    let limits = calibrate(&data, &index)?;
    log::info!("limits: c_v {:.4} m/s, c_a {:.4} m/s²", limits.c_v, limits.c_a);
    write_json(&st.artifact(LIMITS), &limits)?;
    for entry in index.with_role(Role::Test) {
        let est = trajfit::read_estimates_csv(&input.join(estimates_file(&entry.label)))?;
        let fitted = refine(&est, &limits, s.trajfit_window, opts.exec)?;
        log::info!(
            "run {}: J {:.3} -> {:.3} in {} iterations",
            entry.label,
            fitted.initial_objective,
            fitted.objective,
            fitted.iterations
        );
        trajfit::write_trajectory_csv(&st.artifact(&trajectory_file(&entry.label)), &fitted.t, &fitted.points)?;
    }
    st.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunError {
    pub label: String,
    pub frames: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: ModelKind,
    pub runs: Vec<RunError>,
    pub report: ErrorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub models: Vec<ModelMetrics>,
}

impl Metrics {
    pub fn get(&self, kind: ModelKind) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.model == kind)
    }
}

fn errors_file(kind: ModelKind) -> String {
    format!("{}_errors.csv", kind.name())
}

/// Prediction directories under `input`, or `input` itself when it is one.
fn prediction_dirs(input: &Path) -> Result<Vec<(ModelKind, PathBuf, RunManifest)>> {
    let mut dirs = Vec::new();
    if input.join(MANIFEST).is_file() {
        dirs.push(input.to_path_buf());
    } else {
        let rd = std::fs::read_dir(input).map_err(|e| Error::io(input, e))?;
        for e in rd {
            let p = e.map_err(|e| Error::io(input, e))?.path();
            if p.join(MANIFEST).is_file() {
                dirs.push(p);
            }
        }
    }
    let mut out: Vec<(ModelKind, PathBuf, RunManifest)> = Vec::new();
    for d in dirs {
        let m = load_upstream(&d, &["predict", "trajfit"])?;
        let kind = m
            .model
            .ok_or_else(|| Error::Input(format!("{}: predictions name no model", d.display())))?;
        if out.iter().any(|(k, _, _)| *k == kind) {
            return Err(Error::Input(format!("two prediction directories for model {}", kind.name())));
        }
        out.push((kind, d, m));
    }
    if out.is_empty() {
        return Err(Error::Input(format!("no predictions found under {}", input.display())));
    }
    out.sort_by_key(|(k, _, _)| *k);
    Ok(out)
}

fn truth_of(ds: &FrameDataset) -> Vec<[f64; 2]> {
    ds.labels()
}

fn check_times(kind: ModelKind, label: &str, pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred != truth {
        return Err(Error::Alignment(format!(
            "{} predictions for run {label} do not share the dataset timestamps",
            kind.name()
        )));
    }
    Ok(())
}

/// Per-frame errors and summaries for every prediction directory found.
pub fn evaluate(input: &Path, out: &Path, opts: &StageOptions) -> Result<RunManifest> {
    let dirs = prediction_dirs(input)?;
    let (_, first_dir, first) = &dirs[0];
    let mut st = Stage::begin("evaluate", Some((first_dir, first)), out, opts)?;
    st.inputs.remove("predictions");
    st.model = None;
    let data = first.input("data")?.to_path_buf();
    let index = load_index(&data)?;
    let tests: Vec<(&RunEntry, FrameDataset)> = index
        .with_role(Role::Test)
        .map(|e| Ok((e, load_dataset(&data, e, &index.grid)?)))
        .collect::<Result<_>>()?;
    let mut models = Vec::new();
    let mut rows = Vec::new();
    for (kind, dir, m) in &dirs {
        if m.input("data")? != data {
            return Err(Error::Input(format!("{} was predicted from a different dataset", dir.display())));
        }
        st.inputs.insert(format!("predictions/{}", kind.name()), canonical(dir)?);
        let mut all_t = Vec::new();
        let mut all_e = Vec::new();
        let mut runs = Vec::new();
        for (entry, ds) in &tests {
            let (t, pts) = trajfit::read_trajectory_csv(&dir.join(trajectory_file(&entry.label)))?;
            check_times(*kind, &entry.label, &t, &ds.times())?;
            let e = eval::errors(&truth_of(ds), &pts)?;
            runs.push(RunError {
                label: entry.label.clone(),
                frames: e.len(),
                mean: e.iter().sum::<f64>() / e.len().max(1) as f64,
            });
            all_t.extend(t);
            all_e.extend(e);
        }
        eval::write_errors_csv(&st.artifact(&errors_file(*kind)), &all_t, &all_e)?;
        let report = eval::summarize(&all_e)?;
        log::info!("{}: mean {:.3} m, median {:.3} m", kind.name(), report.mean, report.median);
        rows.push((kind.name().to_string(), report.clone()));
        models.push(ModelMetrics {
            model: *kind,
            runs,
            report,
        });
    }
    write_json(&st.artifact(METRICS), &Metrics { models })?;
    let table = eval::comparison_csv(&rows);
    write_atomic(&st.artifact(COMPARISON), |w| w.write_all(table.as_bytes()))?;
    st.finish()
}

/// Re-derives the comparison from the per-frame error files and renders the
/// trajectory overlays and the RSSI heatmap.
pub fn report(input: &Path, out: &Path, opts: &StageOptions) -> Result<RunManifest> {
    let up = load_upstream(input, &["evaluate"])?;
    let mut st = Stage::begin("report", Some((input, &up)), out, opts)?;
    let s = st.settings.clone();
    let metrics: Metrics = read_json(&input.join(METRICS))?;
    let data = up.input("data")?.to_path_buf();
    let index = load_index(&data)?;
    let grid = index.grid;

    let mut rows = Vec::new();
    for m in &metrics.models {
        let (_, e) = eval::read_errors_csv(&input.join(errors_file(m.model)))?;
        rows.push((m.model.name().to_string(), eval::summarize(&e)?));
    }
    let table = eval::comparison_csv(&rows);
    write_atomic(&st.artifact(COMPARISON), |w| w.write_all(table.as_bytes()))?;

    let mut first_test = None;
    for entry in index.with_role(Role::Test) {
        let ds = load_dataset(&data, entry, &grid)?;
        let mut tracks = Vec::new();
        for m in &metrics.models {
            let dir = up.input(&format!("predictions/{}", m.model.name()))?;
            let (t, pts) = trajfit::read_trajectory_csv(&dir.join(trajectory_file(&entry.label)))?;
            check_times(m.model, &entry.label, &t, &ds.times())?;
            tracks.push((m.model.name().to_string(), pts));
        }
        let svg = eval::trajectory_svg(&grid, &truth_of(&ds), &tracks)?;
        write_atomic(&st.artifact(&format!("trajectory_{}.svg", entry.label)), |w| {
            w.write_all(svg.as_bytes())
        })?;
        if first_test.is_none() {
            first_test = Some(ds);
        }
    }
    if let Some(ds) = first_test {
        let n = ds.frames.len();
        let k = s.heatmap_frames.min(n);
        let picked: Vec<&Frame> = (0..k).map(|i| &ds.frames[i * n / k.max(1)]).collect();
        let svg = eval::rssi_heatmap_svg(&grid, &picked)?;
        write_atomic(&st.artifact("rssi_heatmap.svg"), |w| w.write_all(svg.as_bytes()))?;
    }
    st.finish()
}

/// Directory layout used by [`run_all`].
#[derive(Debug, Clone)]
pub struct Layout {
    pub runs: PathBuf,
    pub data: PathBuf,
    pub features: PathBuf,
    pub rf: PathBuf,
    pub cnn: PathBuf,
    pub predictions: PathBuf,
    pub evaluation: PathBuf,
    pub report: PathBuf,
}

impl Layout {
    pub fn under(root: &Path) -> Self {
        Self {
            runs: root.join("runs"),
            data: root.join("data"),
            features: root.join("features"),
            rf: root.join("models/rf"),
            cnn: root.join("models/cnn"),
            predictions: root.join("predictions"),
            evaluation: root.join("eval"),
            report: root.join("report"),
        }
    }

    pub fn predictions_for(&self, kind: ModelKind) -> PathBuf {
        self.predictions.join(kind.name())
    }
}

/// Every stage in order, the refined model through the `trajfit` stage.
pub fn run_all(root: &Path, opts: &StageOptions) -> Result<Layout> {
    let l = Layout::under(root);
    // only the first stage takes overrides; later ones inherit them
    let inherit = StageOptions {
        config: Config::new(),
        exec: opts.exec,
    };
    simulate(&l.runs, opts)?;
    ingest(&l.runs, &l.data, &inherit)?;
    features(&l.data, &l.features, &inherit)?;
    train_rf(&l.features, &l.rf, &inherit)?;
    train_cnn(&l.features, &l.cnn, &inherit)?;
    predict(ModelKind::Rf, &l.rf, &l.predictions_for(ModelKind::Rf), &inherit)?;
    predict(ModelKind::Cnn, &l.cnn, &l.predictions_for(ModelKind::Cnn), &inherit)?;
    trajfit(&l.predictions_for(ModelKind::Cnn), &l.predictions_for(ModelKind::Rcnn), &inherit)?;
    evaluate(&l.predictions, &l.evaluation, &inherit)?;
    report(&l.evaluation, &l.report, &inherit)?;
    Ok(l)
}
