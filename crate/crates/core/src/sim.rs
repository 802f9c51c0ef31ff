//! Closed-loop rollouts: observe, act, integrate, score gate crossings.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraMount};
use crate::dynamics::{Control, DynamicsConfig, QuadState, UavState, VehicleState};
use crate::error::SimError;
use crate::image::Mask;
use crate::policies::{
    noisy_perception, ControlHistory, GateObs, Observation, ObservationKind, PerceptionNoise,
    Policy, DEFAULT_HISTORY,
};
use crate::render::render_gate_mask;
use crate::tracks::{Gate, Platform, Track};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub platform: Platform,
    pub dt: f64,
    pub tick_hz: f64,
    /// `None` derives the timeout from the track's path length.
    #[serde(default)]
    pub timeout: Option<f64>,
    pub intrinsics: CameraIntrinsics,
    pub mount: CameraMount,
    pub success_threshold: f64,
    pub vehicle_half_width: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub perception_noise: Option<PerceptionNoise>,
    #[serde(default = "default_history")]
    pub history_len: usize,
}

fn default_history() -> usize {
    DEFAULT_HISTORY
}

/// Multiple of path time at nominal speed allowed before timing out.
pub const TIMEOUT_FACTOR: f64 = 3.0;

impl SimConfig {
    pub fn uav() -> Self {
        Self {
            platform: Platform::Uav,
            dt: 0.02,
            tick_hz: 50.0,
            timeout: None,
            intrinsics: CameraIntrinsics::default(),
            mount: CameraMount::default(),
            success_threshold: 0.80,
            vehicle_half_width: 0.20,
            seed: 0,
            dynamics: DynamicsConfig::default(),
            perception_noise: None,
            history_len: DEFAULT_HISTORY,
        }
    }

    pub fn quad() -> Self {
        Self {
            platform: Platform::Quad,
            dt: 0.01,
            mount: CameraMount::levelled(),
            success_threshold: 0.30,
            vehicle_half_width: 0.09,
            ..Self::uav()
        }
    }

    pub fn for_platform(platform: Platform) -> Self {
        match platform {
            Platform::Uav => Self::uav(),
            Platform::Quad => Self::quad(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Setup(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.tick_hz > 0.0) || self.tick_hz * self.dt > 1.0 + 1e-9 {
            return bad("tick rate must be positive and at most 1/dt");
        }
        if !(self.success_threshold > 0.0) {
            return bad("success threshold must be positive");
        }
        if self.timeout.is_some_and(|t| !(t > 0.0)) {
            return bad("timeout must be positive");
        }
        self.intrinsics.validate().map_err(SimError::Setup)
    }

    pub fn steps_per_tick(&self) -> usize {
        ((1.0 / self.tick_hz) / self.dt).round().max(1.0) as usize
    }

    pub fn timeout_for(&self, track: &Track) -> f64 {
        self.timeout.unwrap_or_else(|| {
            TIMEOUT_FACTOR * track.path_length() / self.dynamics.nominal_speed(track.platform)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    FrameCollision,
    Miss,
    Timeout,
    ArenaExit,
    /// The rollout ended on an earlier frame collision.
    NotReached,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::FrameCollision => "frame_collision",
            Outcome::Miss => "miss",
            Outcome::Timeout => "timeout",
            Outcome::ArenaExit => "arena_exit",
            Outcome::NotReached => "not_reached",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub gate: usize,
    pub crossed: bool,
    pub outcome: Outcome,
    pub t_cross: Option<f64>,
    pub crossing_point: Option<Vector3<f64>>,
    pub error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub t: f64,
    pub state: VehicleState,
    pub control: Control,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub platform: Platform,
    pub steps: Vec<Step>,
    pub gates: Vec<GateRecord>,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub t_cross: f64,
    pub point: Vector3<f64>,
    pub error: f64,
}

/// Plane crossing along the gate normal between two consecutive positions.
/// The plane pose is taken at each end of the interval.
pub fn detect_crossing(
    gate: &Gate,
    t0: f64,
    p0: &Vector3<f64>,
    t1: f64,
    p1: &Vector3<f64>,
) -> Option<Crossing> {
    let s0 = gate.pose_at(t0).signed_distance(p0);
    let s1 = gate.pose_at(t1).signed_distance(p1);
    if !(s0 < 0.0 && s1 >= 0.0) {
        return None;
    }
    let f = s0 / (s0 - s1);
    let t_cross = t0 + f * (t1 - t0);
    let pose = gate.pose_at(t_cross);
    let lin = p0 + (p1 - p0) * f;
    let point = lin - pose.normal() * pose.signed_distance(&lin);
    Some(Crossing {
        t_cross,
        point,
        error: (point - pose.center()).norm(),
    })
}

pub fn classify_crossing(error: f64, gate: &Gate, threshold: f64, half_width: f64) -> Outcome {
    if error <= threshold {
        Outcome::Success
    } else if error <= gate.outer_half_extent() + half_width {
        Outcome::FrameCollision
    } else {
        Outcome::Miss
    }
}

fn initial_state(track: &Track) -> VehicleState {
    let init = &track.init_state;
    match track.platform {
        Platform::Uav => VehicleState::Uav(UavState {
            position: init.position(),
            yaw: init.yaw,
            pitch: init.pitch,
        }),
        Platform::Quad => VehicleState::Quad(QuadState::hover(init.position(), init.yaw)),
    }
}

pub fn gate_observations(track: &Track, t: f64) -> Vec<GateObs> {
    track
        .gates
        .iter()
        .map(|g| GateObs {
            pose: g.pose_at(t),
            velocity: g.velocity_at(t),
        })
        .collect()
}

/// Analytic mask from the vehicle camera.
pub fn camera_mask(track: &Track, state: &VehicleState, t: f64, config: &SimConfig) -> Mask {
    let (roll, pitch, yaw) = state.attitude();
    let pose = config.mount.pose(state.position(), roll, pitch, yaw);
    render_gate_mask(&track.gates, t, &pose, &config.intrinsics)
}

/// What the policy saw and did at one tick.
pub struct Tick<'a> {
    pub t: f64,
    pub state: &'a VehicleState,
    pub observation: &'a Observation,
    pub control: &'a Control,
}

pub fn rollout(policy: &dyn Policy, track: &Track, config: &SimConfig) -> Result<Rollout, SimError> {
    rollout_observed(policy, track, config, |_| {})
}

/// Runs one rollout and calls `observer` at every policy tick.
pub fn rollout_observed(
    policy: &dyn Policy,
    track: &Track,
    config: &SimConfig,
    mut observer: impl FnMut(&Tick),
) -> Result<Rollout, SimError> {
    config.validate()?;
    track.validate()?;
    let desc = policy.descriptor();
    if desc.platform != track.platform || config.platform != track.platform {
        return Err(SimError::Setup(format!(
            "platform mismatch: policy {:?}, config {:?}, track {:?}",
            desc.platform, config.platform, track.platform
        )));
    }
    let n = track.gates.len();
    let timeout = config.timeout_for(track);
    let steps_per_tick = config.steps_per_tick();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = ControlHistory::new(config.history_len);

    let mut state = initial_state(track);
    let mut control = Control::zero(track.platform);
    let mut target = 0usize;
    let mut records: Vec<GateRecord> = Vec::with_capacity(n);
    let mut steps = Vec::new();
    let mut t = 0.0;
    let mut k: u64 = 0;
    let mut terminal: Option<Outcome> = None;

    while target < n && terminal.is_none() {
        if k % steps_per_tick as u64 == 0 {
            let observation = match desc.observation {
                ObservationKind::FullState => Observation::FullState {
                    t,
                    state,
                    target,
                    gates: gate_observations(track, t),
                },
                ObservationKind::Mask => {
                    let mut mask = camera_mask(track, &state, t, config);
                    if let Some(noise) = &config.perception_noise {
                        mask = noisy_perception(&mask, noise, &mut rng);
                    }
                    Observation::Mask {
                        t,
                        mask,
                        history: history.to_vec(),
                    }
                }
            };
            control = policy.evaluate(&observation);
            observer(&Tick {
                t,
                state: &state,
                observation: &observation,
                control: &control,
            });
            history.push(control);
        }
        steps.push(Step { t, state, control });
        let next = config.dynamics.step(&state, &control, config.dt)?;
        k += 1;
        let t_next = k as f64 * config.dt;
        let (p0, p1) = (state.position(), next.position());
        // several gates may share a plane crossing
        while target < n {
            let gate = &track.gates[target];
            let Some(c) = detect_crossing(gate, t, &p0, t_next, &p1) else {
                break;
            };
            let outcome = classify_crossing(
                c.error,
                gate,
                config.success_threshold,
                config.vehicle_half_width,
            );
            records.push(GateRecord {
                gate: target,
                crossed: true,
                outcome,
                t_cross: Some(c.t_cross),
                crossing_point: Some(c.point),
                error: Some(c.error),
            });
            target += 1;
            if outcome == Outcome::FrameCollision {
                terminal = Some(Outcome::NotReached);
                break;
            }
        }
        state = next;
        t = t_next;
        if terminal.is_none() && target < n {
            if !track.arena.contains(&state.position()) {
                terminal = Some(Outcome::ArenaExit);
            } else if t >= timeout {
                terminal = Some(Outcome::Timeout);
            }
        }
    }
    steps.push(Step { t, state, control });
    let rest = terminal.unwrap_or(Outcome::Timeout);
    for gate in target..n {
        records.push(GateRecord {
            gate,
            crossed: false,
            outcome: rest,
            t_cross: None,
            crossing_point: None,
            error: None,
        });
    }
    Ok(Rollout {
        platform: track.platform,
        steps,
        gates: records,
        duration: t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub success_rate: f64,
    /// Absent when nothing succeeded.
    pub mean_gate_error: Option<f64>,
    pub successes: usize,
    pub gates: usize,
}

pub fn metrics<'a>(rollouts: impl IntoIterator<Item = &'a Rollout>) -> Metrics {
    let mut successes = 0;
    let mut gates = 0;
    let mut err_sum = 0.0;
    for r in rollouts {
        for g in &r.gates {
            gates += 1;
            if g.outcome == Outcome::Success {
                successes += 1;
                err_sum += g.error.unwrap_or(0.0);
            }
        }
    }
    Metrics {
        success_rate: if gates == 0 { 0.0 } else { successes as f64 / gates as f64 },
        mean_gate_error: (successes > 0).then(|| err_sum / successes as f64),
        successes,
        gates,
    }
}

/// `t,<state columns>,<control columns>`, one row per dynamics step.
pub fn trajectory_csv(rollout: &Rollout) -> String {
    let mut out = String::from("t");
    for c in VehicleState::column_names(rollout.platform) {
        out.push(',');
        out.push_str(c);
    }
    for c in Control::column_names(rollout.platform) {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for s in &rollout.steps {
        write!(out, "{}", s.t).unwrap();
        for v in s.state.as_vec().into_iter().chain(s.control.as_vec()) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn gate_events_csv(rollout: &Rollout) -> String {
    let mut out = String::from("gate_idx,outcome,t_cross,error\n");
    for g in &rollout.gates {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{}",
            g.gate,
            g.outcome.as_str(),
            opt(g.t_cross),
            opt(g.error)
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub platform: Platform,
    pub duration: f64,
    pub steps: usize,
    pub gates: Vec<GateRecord>,
    pub metrics: Metrics,
}

pub fn summary(rollout: &Rollout) -> RolloutSummary {
    RolloutSummary {
        platform: rollout.platform,
        duration: rollout.duration,
        steps: rollout.steps.len(),
        gates: rollout.gates.clone(),
        metrics: metrics([rollout]),
    }
}
