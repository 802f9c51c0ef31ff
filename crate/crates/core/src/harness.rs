//! Experiment drivers: track evaluation, perturbation sweeps, refinement vs
//! uniform comparisons, dataset export, scene editing and one-shot renders.
//!
//! Every driver is a pure function of an [`ExperimentSpec`] and writes its
//! results under an output directory. Parallel work is collected in input
//! order, so reruns with the same spec produce identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::camera::CameraMount;
use crate::dynamics::{Control, VehicleState};
use crate::edit::{apply_script, EditOp, EditWarning};
use crate::error::{PgrError, SceneError, SimError, TrackError};
use crate::image::Mask;
use crate::pgr::{pgr_run, validation_set, GridPartition, PgrConfig, PgrRun};
use crate::ply::{read_scene_file, write_scene_file};
use crate::policies::{
    Expert, LearnerConfig, MaskCentroidController, PerceptionNoise, Policy, SyntheticLearner,
    ZeroPolicy,
};
use crate::primitives::track_scene;
use crate::render::{render_gate_mask, render_rgb};
use crate::scene::GaussianScene;
use crate::seed::{derive_seed, rng_for};
use crate::sim::{
    camera_mask, gate_events_csv, metrics, rollout, rollout_observed, trajectory_csv, GateRecord,
    Metrics, Outcome, Rollout, SimConfig,
};
use crate::tracks::{perturb_track, LayoutTemplate, Platform, Track};

pub const REFERENCE_TRACKS: [(&str, &str); 6] = [
    ("uav_spatial_s", include_str!("../assets/tracks/uav_spatial_s.json")),
    ("uav_random", include_str!("../assets/tracks/uav_random.json")),
    ("uav_moving", include_str!("../assets/tracks/uav_moving.json")),
    ("quad_left_turn", include_str!("../assets/tracks/quad_left_turn.json")),
    ("quad_random", include_str!("../assets/tracks/quad_random.json")),
    ("quad_moving", include_str!("../assets/tracks/quad_moving.json")),
];

/// Edit scripts that build each reference track's gates from primitives.
pub const REFERENCE_SCRIPTS: [(&str, &str); 6] = [
    ("uav_spatial_s", include_str!("../assets/scenes/uav_spatial_s.edits.json")),
    ("uav_random", include_str!("../assets/scenes/uav_random.edits.json")),
    ("uav_moving", include_str!("../assets/scenes/uav_moving.edits.json")),
    ("quad_left_turn", include_str!("../assets/scenes/quad_left_turn.edits.json")),
    ("quad_random", include_str!("../assets/scenes/quad_random.edits.json")),
    ("quad_moving", include_str!("../assets/scenes/quad_moving.edits.json")),
];

pub fn reference_track(name: &str) -> Option<Track> {
    REFERENCE_TRACKS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, json)| Track::from_json(json).expect("bundled tracks are valid"))
}

pub fn reference_script(name: &str) -> Option<Vec<EditOp>> {
    REFERENCE_SCRIPTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, json)| serde_json::from_str(json).expect("bundled scripts are valid"))
}

pub fn reference_track_names(platform: Option<Platform>) -> Vec<&'static str> {
    REFERENCE_TRACKS
        .iter()
        .map(|(n, _)| *n)
        .filter(|n| platform.is_none_or(|p| reference_track(n).unwrap().platform == p))
        .collect()
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl HarnessError {
    /// 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Runtime(_) | HarnessError::Io { .. } => 3,
        }
    }
}

impl From<SimError> for HarnessError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Setup(_) | SimError::Track(_) => HarnessError::Config(e.to_string()),
            SimError::Dynamics(_) => HarnessError::Runtime(e.to_string()),
        }
    }
}

impl From<PgrError> for HarnessError {
    fn from(e: PgrError) -> Self {
        match e {
            PgrError::Config(_) => HarnessError::Config(e.to_string()),
            PgrError::Sim(s) => s.into(),
            _ => HarnessError::Runtime(e.to_string()),
        }
    }
}

impl From<TrackError> for HarnessError {
    fn from(e: TrackError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>, HarnessError> {
    fs::read(path).map_err(io_err(path))
}

fn scene_err(e: SceneError) -> HarnessError {
    match e {
        SceneError::Io(_) => HarnessError::Runtime(e.to_string()),
        _ => HarnessError::Config(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Expert,
    Zero,
    MaskCentroid,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Expert => "expert",
            PolicyKind::Zero => "zero",
            PolicyKind::MaskCentroid => "mask_centroid",
        }
    }

    pub fn supports(&self, platform: Platform) -> bool {
        !matches!((self, platform), (PolicyKind::MaskCentroid, Platform::Uav))
    }

    pub fn build(&self, platform: Platform, sim: &SimConfig) -> Result<Box<dyn Policy>, HarnessError> {
        if !self.supports(platform) {
            return Err(HarnessError::Config(format!(
                "policy {} does not fly a {platform:?}",
                self.name()
            )));
        }
        Ok(match self {
            PolicyKind::Expert => Box::new(Expert::new(platform)),
            PolicyKind::Zero => Box::new(ZeroPolicy { platform }),
            PolicyKind::MaskCentroid => Box::new(MaskCentroidController::new(sim.intrinsics)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSpec {
    pub track: String,
    pub levels_cm: Vec<f64>,
    pub tracks_per_level: usize,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            track: "uav_spatial_s".into(),
            levels_cm: vec![0.0, 20.0, 40.0, 60.0, 80.0],
            tracks_per_level: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgrSpec {
    pub platform: Platform,
    /// `None` uses the 256-cell desk partition.
    pub partition: Option<GridPartition>,
    pub config: PgrConfig,
    pub learner: LearnerConfig,
}

impl Default for PgrSpec {
    fn default() -> Self {
        Self {
            platform: Platform::Uav,
            partition: None,
            config: PgrConfig::default(),
            learner: LearnerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSpec {
    pub track: String,
    pub policy: PolicyKind,
    pub trials: usize,
    /// Write an RGB frame next to every mask.
    pub rgb: bool,
    /// PLY scene to render; `None` builds the track's primitive scene.
    pub scene: Option<String>,
    /// Stop writing after this many ticks per trial.
    pub max_ticks: Option<usize>,
}

impl Default for ExportSpec {
    fn default() -> Self {
        Self {
            track: "quad_left_turn".into(),
            policy: PolicyKind::Expert,
            trials: 1,
            rgb: true,
            scene: None,
            max_ticks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditSpec {
    /// Script path, or the name of a reference track to rebuild its gates.
    pub script: Option<String>,
    /// PLY scene the script starts from; empty when absent.
    pub input: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSpec {
    /// Track whose gates are drawn into the mask (and, without `scene`,
    /// into the RGB frame).
    pub track: Option<String>,
    pub scene: Option<String>,
    pub position: [f64; 3],
    pub roll: f64,
    /// Nose-up positive.
    pub pitch: f64,
    pub yaw: f64,
    pub t: f64,
    pub mount: CameraMount,
    pub background: [f64; 3],
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            track: Some("quad_left_turn".into()),
            scene: None,
            position: [0.6, 1.5, 1.2],
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
            t: 0.0,
            mount: CameraMount::default(),
            background: [0.0, 0.0, 0.0],
        }
    }
}

/// Everything a command needs; the JSON form is the `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Reference track names or paths to track JSON files.
    pub tracks: Vec<String>,
    pub policies: Vec<PolicyKind>,
    /// Initial conditions per track.
    pub trials: usize,
    pub seed: u64,
    pub perception_noise: Option<PerceptionNoise>,
    /// Overrides the platform's policy rate.
    pub tick_hz: Option<f64>,
    pub write_trajectories: bool,
    pub perturb: PerturbSpec,
    pub pgr: PgrSpec,
    pub export: ExportSpec,
    pub edit: EditSpec,
    pub render: RenderSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            tracks: REFERENCE_TRACKS.iter().map(|(n, _)| n.to_string()).collect(),
            policies: vec![PolicyKind::Expert],
            trials: 10,
            seed: 0,
            perception_noise: None,
            tick_hz: None,
            write_trajectories: true,
            perturb: PerturbSpec::default(),
            pgr: PgrSpec::default(),
            export: ExportSpec::default(),
            edit: EditSpec::default(),
            render: RenderSpec::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(json: &str) -> Result<Self, HarnessError> {
        let spec: Self = serde_json::from_str(json).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let bytes = read_file(path).map_err(|e| HarnessError::Config(e.to_string()))?;
        let text = String::from_utf8(bytes).map_err(|e| HarnessError::Config(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        if self.policies.is_empty() {
            return Err(HarnessError::Config("no policy selected".into()));
        }
        if let Some(hz) = self.tick_hz {
            if !(hz > 0.0) {
                return Err(HarnessError::Config("tick_hz must be positive".into()));
            }
        }
        for t in &self.tracks {
            if reference_track(t).is_none() && !Path::new(t).exists() {
                return Err(HarnessError::Config(format!("track `{t}` is neither bundled nor a file")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("specs always serialise");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn sim_config(&self, platform: Platform) -> SimConfig {
        let mut sim = SimConfig::for_platform(platform);
        if let Some(hz) = self.tick_hz {
            sim.tick_hz = hz;
        }
        sim.perception_noise = self.perception_noise;
        sim
    }
}

/// A bundled track by name, or a track JSON file.
pub fn resolve_track(name: &str) -> Result<Track, HarnessError> {
    if let Some(t) = reference_track(name) {
        return Ok(t);
    }
    let path = Path::new(name);
    let bytes = read_file(path).map_err(|e| HarnessError::Config(e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(Track::from_json(&text)?)
}

fn track_label(name: &str) -> String {
    if reference_track(name).is_some() {
        return name.to_string();
    }
    Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string())
}

pub const JITTER_POSITION: f64 = 0.3;
pub const JITTER_YAW: f64 = 0.1;

const JITTER_STREAM: u64 = 0x6a17;
const PERTURB_STREAM: u64 = 0x9e27;

/// The track with its initial pose jittered for one trial.
pub fn jitter_initial(track: &Track, seed: u64, trial: u64) -> Track {
    let mut rng = rng_for(&[seed, JITTER_STREAM, trial]);
    let mut out = track.clone();
    for k in 0..3 {
        out.init_state.position[k] += rng.random_range(-JITTER_POSITION..=JITTER_POSITION);
    }
    out.init_state.yaw += rng.random_range(-JITTER_YAW..=JITTER_YAW);
    out
}

/// Simulator settings for one trial, with a per-trial noise seed.
pub fn trial_sim(spec: &ExperimentSpec, platform: Platform, trial: u64) -> SimConfig {
    let mut sim = spec.sim_config(platform);
    sim.seed = derive_seed(&[spec.seed, trial]);
    sim
}

/// `trials` jittered rollouts of one policy on one track, in trial order.
pub fn run_trials(
    spec: &ExperimentSpec,
    track: &Track,
    policy: PolicyKind,
) -> Result<Vec<Rollout>, HarnessError> {
    let sim = spec.sim_config(track.platform);
    let pol = policy.build(track.platform, &sim)?;
    (0..spec.trials as u64)
        .into_par_iter()
        .map(|k| {
            let t = jitter_initial(track, spec.seed, k);
            let sim = trial_sim(spec, track.platform, k);
            Ok(rollout(pol.as_ref(), &t, &sim)?)
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn to_json_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports always serialise");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub track: String,
    pub policy: String,
    pub trials: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub config_hash: String,
    pub rows: Vec<EvalRow>,
}

/// Runs every (track, policy) pair the platforms allow.
pub fn cmd_evaluate(spec: &ExperimentSpec, out: &Path) -> Result<EvaluateReport, HarnessError> {
    spec.validate()?;
    let hash = spec.config_hash();
    let mut rows = Vec::new();
    for name in &spec.tracks {
        let track = resolve_track(name)?;
        let label = track_label(name);
        for &policy in &spec.policies {
            if !policy.supports(track.platform) {
                log::warn!("skipping {} on {label}: platform mismatch", policy.name());
                continue;
            }
            log::info!("evaluating {} on {label}", policy.name());
            let rollouts = run_trials(spec, &track, policy)?;
            if spec.write_trajectories {
                let dir = out.join("trajectories").join(&label).join(policy.name());
                for (k, r) in rollouts.iter().enumerate() {
                    write_file(&dir.join(format!("trial_{k:03}.csv")), trajectory_csv(r))?;
                    write_file(&dir.join(format!("trial_{k:03}_gates.csv")), gate_events_csv(r))?;
                }
            }
            rows.push(EvalRow {
                track: label.clone(),
                policy: policy.name().into(),
                trials: rollouts.len(),
                metrics: metrics(&rollouts),
            });
        }
    }
    if rows.is_empty() {
        return Err(HarnessError::Config("no policy fits any selected track".into()));
    }
    let mut csv = format!("# config_hash: {hash}\ntrack,policy,trials,gates,successes,success_rate,mean_gate_error_m\n");
    let mut txt = format!(
        "config {hash}\n{:<18} {:<14} {:>6} {:>8} {:>9}\n",
        "track", "policy", "trials", "SR", "MGE (cm)"
    );
    for r in &rows {
        let m = &r.metrics;
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.track,
            r.policy,
            r.trials,
            m.gates,
            m.successes,
            m.success_rate,
            fmt_opt(m.mean_gate_error)
        )
        .unwrap();
        let mge = m
            .mean_gate_error
            .map(|e| format!("{:.1}", e * 100.0))
            .unwrap_or_else(|| "n/a".into());
        writeln!(
            txt,
            "{:<18} {:<14} {:>6} {:>7.1}% {:>9}",
            r.track,
            r.policy,
            r.trials,
            m.success_rate * 100.0,
            mge
        )
        .unwrap();
    }
    let report = EvaluateReport { config_hash: hash, rows };
    write_file(&out.join("summary.csv"), csv)?;
    write_file(&out.join("summary.txt"), txt)?;
    write_file(&out.join("summary.json"), to_json_pretty(&report))?;
    Ok(report)
}

/// Rank correlation with average ranks for ties; 0 when either side is
/// constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// The `k`-th randomised copy of `track` at perturbation level `a_cm`. The
/// same underlying draw is scaled across levels, so level 0 is the
/// unperturbed track.
pub fn perturbed_copy(track: &Track, a_cm: f64, seed: u64, k: u64) -> Track {
    perturb_track(track, a_cm, &mut rng_for(&[seed, PERTURB_STREAM, k]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub policy: String,
    pub level_cm: f64,
    pub tracks: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTrend {
    pub policy: String,
    /// Rank correlation of success rate against level.
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub config_hash: String,
    pub track: String,
    pub rows: Vec<LevelRow>,
    pub trends: Vec<PolicyTrend>,
}

/// Gates a perturbation pushed out of the arena fail without a rollout.
fn unflyable(track: &Track) -> Rollout {
    Rollout {
        platform: track.platform,
        steps: Vec::new(),
        gates: (0..track.gates.len())
            .map(|i| GateRecord {
                gate: i,
                crossed: false,
                outcome: Outcome::NotReached,
                t_cross: None,
                crossing_point: None,
                error: None,
            })
            .collect(),
        duration: 0.0,
    }
}

/// Success metrics of one policy at one level.
pub fn perturb_level(
    spec: &ExperimentSpec,
    base: &Track,
    policy: PolicyKind,
    a_cm: f64,
) -> Result<Metrics, HarnessError> {
    let sim = spec.sim_config(base.platform);
    let pol = policy.build(base.platform, &sim)?;
    let rollouts: Vec<Rollout> = (0..spec.perturb.tracks_per_level as u64)
        .into_par_iter()
        .map(|k| {
            let t = jitter_initial(&perturbed_copy(base, a_cm, spec.seed, k), spec.seed, k);
            if t.validate().is_err() {
                return Ok(unflyable(&t));
            }
            Ok(rollout(pol.as_ref(), &t, &trial_sim(spec, base.platform, k))?)
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(metrics(&rollouts))
}

pub fn cmd_perturb(spec: &ExperimentSpec, out: &Path) -> Result<PerturbReport, HarnessError> {
    spec.validate()?;
    let p = &spec.perturb;
    if p.levels_cm.is_empty() || p.levels_cm.iter().any(|l| !(*l >= 0.0)) {
        return Err(HarnessError::Config("perturbation levels must be non-negative".into()));
    }
    if p.tracks_per_level == 0 {
        return Err(HarnessError::Config("tracks_per_level must be at least 1".into()));
    }
    let base = resolve_track(&p.track)?;
    let label = track_label(&p.track);
    let hash = spec.config_hash();
    let mut rows = Vec::new();
    let mut trends = Vec::new();
    for &policy in spec.policies.iter().filter(|k| k.supports(base.platform)) {
        let mut sr = Vec::new();
        for &level in &p.levels_cm {
            log::info!("perturbing {label} by {level} cm for {}", policy.name());
            let m = perturb_level(spec, &base, policy, level)?;
            sr.push(m.success_rate);
            rows.push(LevelRow {
                policy: policy.name().into(),
                level_cm: level,
                tracks: p.tracks_per_level,
                metrics: m,
            });
        }
        trends.push(PolicyTrend {
            policy: policy.name().into(),
            spearman: spearman(&p.levels_cm, &sr),
        });
    }
    if rows.is_empty() {
        return Err(HarnessError::Config("no selected policy flies this track".into()));
    }
    let mut csv = format!("# config_hash: {hash}\npolicy,level_cm,tracks,gates,successes,success_rate,mean_gate_error_m\n");
    for r in &rows {
        let m = &r.metrics;
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.policy,
            r.level_cm,
            r.tracks,
            m.gates,
            m.successes,
            m.success_rate,
            fmt_opt(m.mean_gate_error)
        )
        .unwrap();
    }
    let report = PerturbReport {
        config_hash: hash,
        track: label,
        rows,
        trends,
    };
    write_file(&out.join("perturb.csv"), csv)?;
    write_file(&out.join("perturb.json"), to_json_pretty(&report))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationComparison {
    pub iteration: usize,
    pub pgr_worst_loss: f64,
    pub uniform_worst_loss: f64,
    pub pgr_mean_loss: f64,
    pub uniform_mean_loss: f64,
    pub pgr_samples: usize,
    pub uniform_samples: usize,
    /// Highest-loss tenth of the cells under the losses that drove this
    /// iteration's draw (the refinement run's previous iteration; the
    /// shared first iteration for iteration 1).
    pub top_decile_cells: Vec<usize>,
    /// Layouts drawn inside the top-decile cells.
    pub pgr_top_decile_samples: usize,
    pub uniform_top_decile_samples: usize,
    /// Weight mass the refinement sampler put on the top-decile cells,
    /// divided by their uniform share.
    pub expected_ratio: f64,
    pub pgr_validation_success_rate: f64,
    pub uniform_validation_success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgrComparison {
    pub config_hash: String,
    /// `"uniform-equivalent"` when β = 1.
    pub label: String,
    pub beta: f64,
    pub cells: usize,
    pub validation_layouts: usize,
    pub iterations: Vec<IterationComparison>,
    /// Refinement / uniform top-decile draws summed over iterations 2
    /// onwards; `None` with a single iteration or no uniform draws there.
    pub concentration: Option<f64>,
    pub final_pgr_worst_loss: f64,
    pub final_uniform_worst_loss: f64,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Indices of the `ceil(n/10)` largest values, ties to the lower index.
pub fn top_decile(losses: &[f64]) -> Vec<usize> {
    let k = losses.len().div_ceil(10);
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    let mut top: Vec<usize> = idx.into_iter().take(k).collect();
    top.sort_unstable();
    top
}

pub fn compare_runs(hash: String, beta: f64, pgr: &PgrRun, uniform: &PgrRun) -> PgrComparison {
    let m = pgr.history[0].losses.len();
    let iterations: Vec<IterationComparison> = pgr
        .history
        .iter()
        .zip(&uniform.history)
        .enumerate()
        .map(|(i, (p, u))| {
            let driver = &pgr.history[i.saturating_sub(1)];
            let top = top_decile(&driver.losses);
            let in_top = |s: &[usize]| top.iter().map(|&c| s[c]).sum::<usize>();
            let expected_ratio = if i == 0 {
                1.0
            } else {
                top.iter().map(|&c| driver.weights[c]).sum::<f64>() * m as f64 / top.len() as f64
            };
            IterationComparison {
                iteration: p.iteration,
                pgr_worst_loss: max_of(&p.losses),
                uniform_worst_loss: max_of(&u.losses),
                pgr_mean_loss: mean_of(&p.losses),
                uniform_mean_loss: mean_of(&u.losses),
                pgr_samples: p.samples.iter().sum(),
                uniform_samples: u.samples.iter().sum(),
                pgr_top_decile_samples: in_top(&p.samples),
                uniform_top_decile_samples: in_top(&u.samples),
                top_decile_cells: top,
                expected_ratio,
                pgr_validation_success_rate: p.validation_success_rate,
                uniform_validation_success_rate: u.validation_success_rate,
            }
        })
        .collect();
    let (pt, ut) = iterations.iter().skip(1).fold((0, 0), |(a, b), it| {
        (a + it.pgr_top_decile_samples, b + it.uniform_top_decile_samples)
    });
    let last = iterations.last().expect("at least one iteration");
    PgrComparison {
        config_hash: hash,
        label: if beta >= 1.0 { "uniform-equivalent" } else { "pgr" }.into(),
        beta,
        cells: m,
        validation_layouts: pgr.validation.len(),
        concentration: (ut > 0).then(|| pt as f64 / ut as f64),
        final_pgr_worst_loss: last.pgr_worst_loss,
        final_uniform_worst_loss: last.uniform_worst_loss,
        iterations,
    }
}

/// Refinement and a uniform baseline with the same budget, seeds,
/// validation set and first batch.
pub fn pgr_compare(spec: &ExperimentSpec) -> Result<(PgrComparison, PgrRun, PgrRun), HarnessError> {
    let ps = &spec.pgr;
    let platform = ps.platform;
    let partition = ps.partition.clone().unwrap_or_else(|| GridPartition::desk(platform));
    let template = LayoutTemplate::for_platform(platform);
    let mut sim = spec.sim_config(platform);
    sim.perception_noise = None;
    let expert = Expert::new(platform);
    let mut config = ps.config;
    config.seed = spec.seed;
    config.validate()?;
    let validation = validation_set(
        &partition,
        config.validation_per_grid,
        &template,
        &expert,
        &sim,
        derive_seed(&[config.seed, 0xda7a]),
        config.max_retries,
    )?;
    let learner_config = LearnerConfig {
        seed: spec.seed,
        ..ps.learner
    };
    let mut learner = SyntheticLearner::new(platform, partition.clone(), learner_config);
    let pgr = pgr_run(&config, &mut learner, &expert, &partition, &template, &sim, Some(validation.clone()))?;
    let uniform_config = PgrConfig { beta: 1.0, ..config };
    let mut learner = SyntheticLearner::new(platform, partition.clone(), learner_config);
    let uniform = pgr_run(
        &uniform_config,
        &mut learner,
        &expert,
        &partition,
        &template,
        &sim,
        Some(validation),
    )?;
    let cmp = compare_runs(spec.config_hash(), config.beta, &pgr, &uniform);
    Ok((cmp, pgr, uniform))
}

pub fn cmd_pgr(spec: &ExperimentSpec, out: &Path) -> Result<PgrComparison, HarnessError> {
    spec.validate()?;
    let (cmp, pgr, uniform) = pgr_compare(spec)?;
    let mut csv = format!(
        "# config_hash: {}\niteration,method,samples,top_decile_samples,worst_grid_loss,mean_grid_loss,validation_success_rate\n",
        cmp.config_hash
    );
    for it in &cmp.iterations {
        writeln!(
            csv,
            "{},pgr,{},{},{},{},{}",
            it.iteration,
            it.pgr_samples,
            it.pgr_top_decile_samples,
            it.pgr_worst_loss,
            it.pgr_mean_loss,
            it.pgr_validation_success_rate
        )
        .unwrap();
        writeln!(
            csv,
            "{},uniform,{},{},{},{},{}",
            it.iteration,
            it.uniform_samples,
            it.uniform_top_decile_samples,
            it.uniform_worst_loss,
            it.uniform_mean_loss,
            it.uniform_validation_success_rate
        )
        .unwrap();
    }
    let mut config = spec.pgr.config;
    config.seed = spec.seed;
    for (method, run, beta) in [("pgr", &pgr, config.beta), ("uniform", &uniform, 1.0)] {
        let dir = out.join(method);
        write_file(&dir.join("config.json"), to_json_pretty(&PgrConfig { beta, ..config }))?;
        write_file(&dir.join("history.json"), to_json_pretty(&run.history))?;
        for rec in &run.history {
            let mut csv = format!("# config_hash: {}\ngrid_idx,loss,weight,samples\n", cmp.config_hash);
            for c in 0..rec.losses.len() {
                writeln!(csv, "{c},{},{},{}", rec.losses[c], rec.weights[c], rec.samples[c]).unwrap();
            }
            write_file(&dir.join(format!("losses_iter_{}.csv", rec.iteration)), csv)?;
        }
    }
    let mut txt = format!("config {}\nmethod label: {}\n", cmp.config_hash, cmp.label);
    writeln!(txt, "iteration  worst loss (pgr / uniform)  top-decile draws (pgr / uniform)").unwrap();
    for it in &cmp.iterations {
        writeln!(
            txt,
            "{:>9}  {:>12.4} / {:<12.4} {:>8} / {}",
            it.iteration,
            it.pgr_worst_loss,
            it.uniform_worst_loss,
            it.pgr_top_decile_samples,
            it.uniform_top_decile_samples
        )
        .unwrap();
    }
    match cmp.concentration {
        Some(c) => writeln!(txt, "concentration (pgr/uniform top-decile draws, iterations 2+): {c:.3}").unwrap(),
        None => writeln!(txt, "concentration: n/a").unwrap(),
    }
    write_file(&out.join("pgr_iterations.csv"), csv)?;
    write_file(&out.join("pgr_report.txt"), txt)?;
    write_file(&out.join("pgr_report.json"), to_json_pretty(&cmp))?;
    Ok(cmp)
}

/// Camera pose parameters of one exported frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub position: [f64; 3],
    pub roll: f64,
    /// Nose-up positive.
    pub pitch: f64,
    pub yaw: f64,
}

impl FramePose {
    pub fn of(state: &VehicleState) -> Self {
        let p = state.position();
        let (roll, pitch, yaw) = state.attitude();
        Self {
            position: [p.x, p.y, p.z],
            roll,
            pitch,
            yaw,
        }
    }
}

/// JSON side of one exported training triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub tick: usize,
    pub t: f64,
    pub state: VehicleState,
    pub camera: FramePose,
    pub control: Control,
    /// Commands of the preceding ticks, oldest first.
    pub history: Vec<Control>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub config_hash: String,
    pub track: String,
    pub policy: String,
    pub sim: SimConfig,
    pub rgb: bool,
    /// Written ticks per trial.
    pub ticks: Vec<usize>,
}

fn frame_stem(trial: usize, tick: usize) -> String {
    format!("trial_{trial:03}/tick_{tick:05}")
}

/// Masks, optional RGB frames and control records for each policy tick.
pub fn cmd_export_dataset(spec: &ExperimentSpec, out: &Path) -> Result<ExportManifest, HarnessError> {
    spec.validate()?;
    let ex = &spec.export;
    if ex.trials == 0 {
        return Err(HarnessError::Config("export trials must be at least 1".into()));
    }
    let track = resolve_track(&ex.track)?;
    let label = track_label(&ex.track);
    let sim = spec.sim_config(track.platform);
    let policy = ex.policy.build(track.platform, &sim)?;
    let scene = match (&ex.scene, ex.rgb) {
        (Some(path), true) => Some(read_scene_file(Path::new(path)).map_err(scene_err)?),
        _ => None,
    };
    let hash = spec.config_hash();
    let mut ticks = Vec::with_capacity(ex.trials);
    for trial in 0..ex.trials {
        let t = jitter_initial(&track, spec.seed, trial as u64);
        let sim = trial_sim(spec, track.platform, trial as u64);
        let mut records = Vec::new();
        let mut history: Vec<Control> = Vec::new();
        rollout_observed(policy.as_ref(), &t, &sim, |tick| {
            if ex.max_ticks.is_some_and(|m| records.len() >= m) {
                return;
            }
            let start = history.len().saturating_sub(sim.history_len);
            records.push(FrameRecord {
                tick: records.len(),
                t: tick.t,
                state: *tick.state,
                camera: FramePose::of(tick.state),
                control: *tick.control,
                history: history[start..].to_vec(),
            });
            history.push(*tick.control);
        })?;
        let frames: Vec<(Vec<u8>, Option<Vec<u8>>)> = records
            .par_iter()
            .map(|r| {
                let mask = camera_mask(&t, &r.state, r.t, &sim).to_pgm();
                let rgb = ex.rgb.then(|| {
                    let pose = sim.mount.pose(r.state.position(), r.camera.roll, r.camera.pitch, r.camera.yaw);
                    let img = match &scene {
                        Some(s) => render_rgb(s, &pose, &sim.intrinsics, [0.0; 3]),
                        None => render_rgb(&track_scene(&t, r.t), &pose, &sim.intrinsics, [0.0; 3]),
                    };
                    img.to_ppm()
                });
                (mask, rgb)
            })
            .collect();
        let dir = out.join(&label);
        for (r, (mask, rgb)) in records.iter().zip(frames) {
            let stem = dir.join(frame_stem(trial, r.tick));
            write_file(&stem.with_extension("pgm"), mask)?;
            if let Some(rgb) = rgb {
                write_file(&stem.with_extension("ppm"), rgb)?;
            }
            write_file(&stem.with_extension("json"), to_json_pretty(r))?;
        }
        write_file(&dir.join(format!("trial_{trial:03}/track.json")), t.to_json() + "\n")?;
        ticks.push(records.len());
    }
    let manifest = ExportManifest {
        config_hash: hash,
        track: label.clone(),
        policy: ex.policy.name().into(),
        sim,
        rgb: ex.rgb,
        ticks,
    };
    write_file(&out.join(&label).join("manifest.json"), to_json_pretty(&manifest))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportCheck {
    pub triples: usize,
    /// Frames whose stored mask differs from a fresh render.
    pub mismatched: Vec<String>,
}

/// Loads an exported dataset and re-renders every mask from its recorded
/// camera pose.
pub fn verify_export(dir: &Path) -> Result<ExportCheck, HarnessError> {
    let manifest: ExportManifest = serde_json::from_slice(&read_file(&dir.join("manifest.json"))?)
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let sim = manifest.sim;
    let mut triples = 0;
    let mut mismatched = Vec::new();
    for (trial, &n) in manifest.ticks.iter().enumerate() {
        let track_text = read_file(&dir.join(format!("trial_{trial:03}/track.json")))?;
        let track = Track::from_json(&String::from_utf8_lossy(&track_text))?;
        for tick in 0..n {
            let stem = dir.join(frame_stem(trial, tick));
            let rec: FrameRecord = serde_json::from_slice(&read_file(&stem.with_extension("json"))?)
                .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            let stored = Mask::from_pgm(&read_file(&stem.with_extension("pgm"))?)
                .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            if manifest.rgb && !stem.with_extension("ppm").exists() {
                return Err(HarnessError::Runtime(format!("missing RGB frame {}", stem.display())));
            }
            let c = rec.camera;
            let pose = sim
                .mount
                .pose(Vector3::from(c.position), c.roll, c.pitch, c.yaw);
            let fresh = render_gate_mask(&track.gates, rec.t, &pose, &sim.intrinsics);
            if fresh != stored {
                mismatched.push(frame_stem(trial, tick));
            }
            triples += 1;
        }
    }
    Ok(ExportCheck { triples, mismatched })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOutcome {
    pub op: usize,
    pub touched: usize,
    pub empty_selection: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSummary {
    pub config_hash: String,
    pub gaussians: usize,
    pub objects: Vec<String>,
    pub ops: Vec<EditOutcome>,
}

/// Applies an edit script and writes `scene.ply` with its object sidecar.
pub fn cmd_edit_scene(spec: &ExperimentSpec, out: &Path) -> Result<EditSummary, HarnessError> {
    let es = &spec.edit;
    let script = es
        .script
        .as_deref()
        .ok_or_else(|| HarnessError::Config("edit.script is required".into()))?;
    let (ops, base_dir) = match reference_script(script) {
        Some(ops) => (ops, PathBuf::from(".")),
        None => {
            let path = Path::new(script);
            let bytes = read_file(path).map_err(|e| HarnessError::Config(e.to_string()))?;
            let ops: Vec<EditOp> =
                serde_json::from_slice(&bytes).map_err(|e| HarnessError::Config(format!("{script}: {e}")))?;
            (ops, path.parent().map(Path::to_path_buf).unwrap_or_default())
        }
    };
    let mut scene = match &es.input {
        Some(p) => read_scene_file(Path::new(p)).map_err(scene_err)?,
        None => GaussianScene::default(),
    };
    let reports = apply_script(&mut scene, &ops, &base_dir)
        .map_err(|(k, e)| HarnessError::Config(format!("edit op {k}: {e}")))?;
    let path = out.join("scene.ply");
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_scene_file(&path, &scene).map_err(scene_err)?;
    let summary = EditSummary {
        config_hash: spec.config_hash(),
        gaussians: scene.len(),
        objects: scene.objects.keys().cloned().collect(),
        ops: reports
            .iter()
            .enumerate()
            .map(|(k, r)| EditOutcome {
                op: k,
                touched: r.touched,
                empty_selection: r.warning == Some(EditWarning::EmptySelection),
            })
            .collect(),
    };
    write_file(&out.join("edit_report.json"), to_json_pretty(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOutput {
    pub rgb: Option<PathBuf>,
    pub mask: Option<PathBuf>,
}

/// One RGB frame and/or gate mask from a fixed camera pose.
pub fn cmd_render(spec: &ExperimentSpec, out: &Path) -> Result<RenderOutput, HarnessError> {
    let rs = &spec.render;
    let track = rs.track.as_deref().map(resolve_track).transpose()?;
    let scene = match (&rs.scene, &track) {
        (Some(p), _) => Some(read_scene_file(Path::new(p)).map_err(scene_err)?),
        (None, Some(t)) => Some(track_scene(t, rs.t)),
        (None, None) => None,
    };
    if scene.is_none() {
        return Err(HarnessError::Config("render needs a track or a scene".into()));
    }
    let intrinsics = SimConfig::for_platform(track.as_ref().map_or(Platform::Quad, |t| t.platform)).intrinsics;
    let pose = rs.mount.pose(Vector3::from(rs.position), rs.roll, rs.pitch, rs.yaw);
    let mut result = RenderOutput { rgb: None, mask: None };
    if let Some(s) = &scene {
        let path = out.join("rgb.ppm");
        write_file(&path, render_rgb(s, &pose, &intrinsics, rs.background).to_ppm())?;
        result.rgb = Some(path);
    }
    if let Some(t) = &track {
        let path = out.join("mask.pgm");
        write_file(&path, render_gate_mask(&t.gates, rs.t, &pose, &intrinsics).to_pgm())?;
        result.mask = Some(path);
    }
    Ok(result)
}
