//! Controllers behind one interface: full-state experts, the mask-centroid
//! controller, and a synthetic learner whose error shrinks with per-cell
//! training data.

use std::collections::VecDeque;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::dynamics::{
    wrap_angle, Control, QuadControl, QuadParams, QuadState, UavControl, UavParams, UavState,
    VehicleState,
};
use crate::image::Mask;
use crate::pgr::GridPartition;
use crate::seed::rng_for;
use crate::tracks::{GatePose, Platform, TwoGateLayout};

pub const DEFAULT_HISTORY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    FullState,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDescriptor {
    pub name: String,
    pub platform: Platform,
    pub observation: ObservationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateObs {
    pub pose: GatePose,
    pub velocity: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    FullState {
        t: f64,
        state: VehicleState,
        /// Index of the next gate to cross; equals `gates.len()` when done.
        target: usize,
        gates: Vec<GateObs>,
    },
    Mask {
        t: f64,
        mask: Mask,
        /// Past controls, oldest first.
        history: Vec<Control>,
    },
}

impl Observation {
    pub fn kind(&self) -> ObservationKind {
        match self {
            Observation::FullState { .. } => ObservationKind::FullState,
            Observation::Mask { .. } => ObservationKind::Mask,
        }
    }

    pub fn time(&self) -> f64 {
        match self {
            Observation::FullState { t, .. } | Observation::Mask { t, .. } => *t,
        }
    }
}

/// One supervised pair: what the policy saw and what the expert did.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub observation: Observation,
    pub expert: Control,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub layout: Option<TwoGateLayout>,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn sample_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.samples.len()).sum()
    }
}

pub trait Policy: Send + Sync {
    fn descriptor(&self) -> PolicyDescriptor;

    /// Deterministic in (policy state, observation).
    fn evaluate(&self, observation: &Observation) -> Control;

    /// Updates the policy from the accumulated dataset. Fixed controllers
    /// ignore it.
    fn train(&mut self, _dataset: &Dataset) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UavExpertGains {
    pub k_yaw: f64,
    pub k_pitch: f64,
    /// Distance of the aim point before (and after) the gate, m.
    pub aim_offset: f64,
    /// Far from the gate the aim point slides out along the axis to this
    /// fraction of the remaining distance, so the turn onto the axis starts
    /// early.
    pub approach_fraction: f64,
}

impl Default for UavExpertGains {
    fn default() -> Self {
        Self {
            k_yaw: 2.0,
            k_pitch: 2.0,
            aim_offset: 1.0,
            approach_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadExpertGains {
    pub cruise: f64,
    pub k_lateral: f64,
    pub k_vertical: f64,
    pub k_yaw: f64,
    pub aim_offset: f64,
}

impl Default for QuadExpertGains {
    fn default() -> Self {
        Self {
            cruise: 1.0,
            k_lateral: 1.2,
            k_vertical: 1.2,
            k_yaw: 0.8,
            aim_offset: 1.0,
        }
    }
}

/// Aim point on the gate axis: before the gate while approaching (at least
/// `offset` out, or `fraction` of the remaining distance), beyond it once
/// within `offset` of the plane.
fn aim_point(p: &Vector3<f64>, gate: &GatePose, offset: f64, fraction: f64) -> Vector3<f64> {
    let s = gate.signed_distance(p);
    if s < -offset {
        gate.center() - gate.normal() * offset.max(-s * fraction)
    } else {
        gate.center() + gate.normal() * offset
    }
}

/// Proportional guidance toward the aim point, led by the gate's motion over
/// the time to go.
pub fn expert_uav(
    state: &UavState,
    gate: &GatePose,
    gate_velocity: &Vector3<f64>,
    gains: &UavExpertGains,
    params: &UavParams,
) -> UavControl {
    let t_go = (gate.center() - state.position).norm() / params.speed;
    let aim = aim_point(&state.position, gate, gains.aim_offset, gains.approach_fraction)
        + gate_velocity * t_go;
    let d = aim - state.position;
    let bearing = d.y.atan2(d.x);
    let elevation = d.z.atan2(d.x.hypot(d.y));
    params.saturate(&UavControl {
        yaw_rate: gains.k_yaw * wrap_angle(bearing - state.yaw),
        pitch_rate: gains.k_pitch * (elevation - state.pitch),
    })
}

/// Constant cruise, proportional lateral/vertical correction toward the aim
/// point plus gate-velocity feed-forward, yaw aligned with the gate normal.
pub fn expert_quad(
    state: &QuadState,
    gate: &GatePose,
    gate_velocity: &Vector3<f64>,
    gains: &QuadExpertGains,
    params: &QuadParams,
) -> QuadControl {
    let yaw = state.attitude.z;
    let d = aim_point(&state.position, gate, gains.aim_offset, 0.0) - state.position;
    let (s, c) = yaw.sin_cos();
    let lateral = -s * d.x + c * d.y;
    let ff_lateral = -s * gate_velocity.x + c * gate_velocity.y;
    params.saturate(&QuadControl {
        vx: gains.cruise,
        vy: gains.k_lateral * lateral + ff_lateral,
        vz: gains.k_vertical * d.z + gate_velocity.z,
        yaw_rate: gains.k_yaw * wrap_angle(gate.yaw - yaw),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    pub uav: UavExpertGains,
    pub quad: QuadExpertGains,
    pub uav_params: UavParams,
    pub quad_params: QuadParams,
}

impl ExpertConfig {
    /// Expert command for a full-state observation; holds course once every
    /// gate is done.
    pub fn control(&self, state: &VehicleState, target: usize, gates: &[GateObs]) -> Control {
        let Some(g) = gates.get(target).or(gates.last()) else {
            return match state.platform() {
                Platform::Uav => Control::Uav(UavControl::default()),
                Platform::Quad => Control::Quad(QuadControl {
                    vx: self.quad.cruise,
                    ..Default::default()
                }),
            };
        };
        match state {
            VehicleState::Uav(s) => Control::Uav(expert_uav(
                s,
                &g.pose,
                &g.velocity,
                &self.uav,
                &self.uav_params,
            )),
            VehicleState::Quad(s) => Control::Quad(expert_quad(
                s,
                &g.pose,
                &g.velocity,
                &self.quad,
                &self.quad_params,
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expert {
    pub platform: Platform,
    pub config: ExpertConfig,
}

impl Expert {
    pub fn new(platform: Platform) -> Self {
        Self {
            platform,
            config: ExpertConfig::default(),
        }
    }
}

impl Policy for Expert {
    fn descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor {
            name: "expert".into(),
            platform: self.platform,
            observation: ObservationKind::FullState,
        }
    }

    fn evaluate(&self, observation: &Observation) -> Control {
        match observation {
            Observation::FullState {
                state,
                target,
                gates,
                ..
            } => self.config.control(state, *target, gates),
            Observation::Mask { .. } => Control::zero(self.platform),
        }
    }
}

/// Always commands zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroPolicy {
    pub platform: Platform,
}

impl Policy for ZeroPolicy {
    fn descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor {
            name: "zero".into(),
            platform: self.platform,
            observation: ObservationKind::FullState,
        }
    }

    fn evaluate(&self, _observation: &Observation) -> Control {
        Control::zero(self.platform)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub centroid: Vector2<f64>,
    pub area: usize,
    /// Inclusive pixel bounding box (x0, y0, x1, y1).
    pub bbox: (usize, usize, usize, usize),
}

/// Labels 4-connected white regions in raster order of their first pixel.
/// Returns the label image (0 = background) and the number of labels.
pub fn label_components(mask: &Mask) -> (Vec<u32>, u32) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if mask.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.data[j] != 0 && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
    }
    (labels, next)
}

/// The largest 4-connected white component; ties go to the smaller label.
pub fn largest_component(mask: &Mask) -> Option<Component> {
    let (labels, n) = label_components(mask);
    if n == 0 {
        return None;
    }
    let w = mask.width;
    let mut area = vec![0usize; n as usize + 1];
    let mut sx = vec![0.0f64; n as usize + 1];
    let mut sy = vec![0.0f64; n as usize + 1];
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            area[l as usize] += 1;
            sx[l as usize] += (i % w) as f64;
            sy[l as usize] += (i / w) as f64;
        }
    }
    let mut best = 1;
    for l in 2..=n as usize {
        if area[l] > area[best] {
            best = l;
        }
    }
    let mut bbox = (usize::MAX, usize::MAX, 0, 0);
    for (i, &l) in labels.iter().enumerate() {
        if l as usize == best {
            let (x, y) = (i % w, i / w);
            bbox = (bbox.0.min(x), bbox.1.min(y), bbox.2.max(x), bbox.3.max(y));
        }
    }
    let a = area[best] as f64;
    Some(Component {
        centroid: Vector2::new(sx[best] / a, sy[best] / a),
        area: area[best],
        bbox,
    })
}

pub fn largest_component_centroid(mask: &Mask) -> Option<(Vector2<f64>, usize)> {
    largest_component(mask).map(|c| (c.centroid, c.area))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskControllerGains {
    pub cruise: f64,
    pub k_lateral: f64,
    pub k_vertical: f64,
    pub k_yaw: f64,
    /// Keep the last command while the gate is cut by the image border and
    /// covers at least this fraction of the view, or has just left it.
    /// `None` disables the hold.
    pub commit_span: Option<f64>,
}

impl Default for MaskControllerGains {
    fn default() -> Self {
        Self {
            cruise: 1.0,
            k_lateral: 1.2,
            k_vertical: 1.2,
            k_yaw: 1.2,
            commit_span: Some(0.5),
        }
    }
}

/// Follows the centroid of the largest white component in the gate mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskCentroidController {
    pub intrinsics: CameraIntrinsics,
    pub gains: MaskControllerGains,
    pub params: QuadParams,
}

impl MaskCentroidController {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        Self {
            intrinsics,
            gains: MaskControllerGains::default(),
            params: QuadParams::default(),
        }
    }

    /// The gate is large and cut by the image border: it is about to be
    /// passed and its visible arcs no longer locate the centre.
    fn is_close(&self, c: &Component, mask: &Mask) -> bool {
        let (x0, y0, x1, y1) = c.bbox;
        let (w, h) = (mask.width, mask.height);
        let cut = x0 == 0 || y0 == 0 || x1 + 1 == w || y1 + 1 == h;
        let Some(span) = self.gains.commit_span else {
            return false;
        };
        let large = (y1 + 1 - y0) as f64 >= span * h as f64 || (x1 + 1 - x0) as f64 >= span * w as f64;
        cut && large
    }

    pub fn control(&self, mask: &Mask, history: &[Control]) -> QuadControl {
        let last = history.iter().rev().find_map(|c| match c {
            Control::Quad(q) => Some(*q),
            Control::Uav(_) => None,
        });
        let committed = last.filter(|l| self.gains.commit_span.is_some() && l.vx > 0.0);
        match largest_component(mask) {
            Some(c) => {
                if let (Some(l), true) = (committed, self.is_close(&c, mask)) {
                    return l;
                }
                let ex = (self.intrinsics.cx - c.centroid.x) / mask.width as f64;
                let ey = (self.intrinsics.cy - c.centroid.y) / mask.height as f64;
                self.params.saturate(&QuadControl {
                    vx: self.gains.cruise,
                    vy: self.gains.k_lateral * ex,
                    vz: self.gains.k_vertical * ey,
                    yaw_rate: self.gains.k_yaw * ex,
                })
            }
            None => match (committed, last) {
                (Some(l), _) => l,
                (None, Some(l)) => QuadControl { vx: 0.0, ..l },
                (None, None) => QuadControl::default(),
            },
        }
    }
}

impl Policy for MaskCentroidController {
    fn descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor {
            name: "mask_centroid".into(),
            platform: Platform::Quad,
            observation: ObservationKind::Mask,
        }
    }

    fn evaluate(&self, observation: &Observation) -> Control {
        match observation {
            Observation::Mask { mask, history, .. } => Control::Quad(self.control(mask, history)),
            Observation::FullState { .. } => Control::Quad(QuadControl::default()),
        }
    }
}

/// Bounded control history, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlHistory {
    len: usize,
    items: VecDeque<Control>,
}

impl ControlHistory {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            items: VecDeque::with_capacity(len),
        }
    }

    pub fn push(&mut self, c: Control) {
        if self.len == 0 {
            return;
        }
        if self.items.len() == self.len {
            self.items.pop_front();
        }
        self.items.push_back(c);
    }

    pub fn to_vec(&self) -> Vec<Control> {
        self.items.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionNoise {
    /// Flip probability for pixels on the mask boundary band.
    pub flip_prob: f64,
    /// Expected number of 3×3 false blobs per frame.
    pub blob_rate: f64,
}

impl Default for PerceptionNoise {
    fn default() -> Self {
        Self {
            flip_prob: 0.05,
            blob_rate: 0.2,
        }
    }
}

/// Pixels with at least one 4-neighbour of the other value.
pub fn boundary_band(mask: &Mask) -> Vec<usize> {
    let (w, h) = (mask.width, mask.height);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = mask.get(x, y);
            let differs = (x > 0 && mask.get(x - 1, y) != v)
                || (x + 1 < w && mask.get(x + 1, y) != v)
                || (y > 0 && mask.get(x, y - 1) != v)
                || (y + 1 < h && mask.get(x, y + 1) != v);
            if differs {
                out.push(y * w + x);
            }
        }
    }
    out
}

/// Imperfect segmentation: boundary flips plus false blobs.
pub fn noisy_perception<R: Rng + ?Sized>(mask: &Mask, noise: &PerceptionNoise, rng: &mut R) -> Mask {
    let mut out = mask.clone();
    if noise.flip_prob > 0.0 {
        for i in boundary_band(mask) {
            if rng.random::<f64>() < noise.flip_prob {
                out.data[i] = 255 - mask.data[i];
            }
        }
    }
    if noise.blob_rate > 0.0 {
        let n = Poisson::new(noise.blob_rate)
            .map(|d| d.sample(rng) as usize)
            .unwrap_or(0);
        for _ in 0..n {
            let cx = rng.random_range(0..mask.width) as i64;
            let cy = rng.random_range(0..mask.height) as i64;
            for y in cy - 1..=cy + 1 {
                for x in cx - 1..=cx + 1 {
                    if x >= 0 && y >= 0 && (x as usize) < mask.width && (y as usize) < mask.height {
                        out.set(x as usize, y as usize, true);
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Noise std with no data, as a fraction of each channel's saturation.
    pub sigma0_fraction: f64,
    pub n0: f64,
    /// Noise is held constant over windows of this length, s.
    pub hold: f64,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            sigma0_fraction: 0.4,
            n0: 20.0,
            hold: 0.5,
            seed: 0,
        }
    }
}

/// Stand-in for a trained policy: the expert plus zero-mean noise whose std
/// shrinks with the number of training trajectories in the layout's cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLearner {
    pub platform: Platform,
    pub partition: GridPartition,
    pub expert: ExpertConfig,
    pub config: LearnerConfig,
    counts: Vec<u64>,
}

impl SyntheticLearner {
    pub fn new(platform: Platform, partition: GridPartition, config: LearnerConfig) -> Self {
        let m = partition.num_cells();
        Self {
            platform,
            partition,
            expert: ExpertConfig::default(),
            config,
            counts: vec![0; m],
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn set_count(&mut self, cell: usize, n: u64) {
        self.counts[cell] = n;
    }

    fn saturation(&self) -> Vec<f64> {
        match self.platform {
            Platform::Uav => vec![self.expert.uav_params.yaw_rate_max, self.expert.uav_params.pitch_rate_max],
            Platform::Quad => {
                let v = self.expert.quad_params.speed_max;
                vec![v, v, v, self.expert.quad_params.yaw_rate_max]
            }
        }
    }

    /// Noise std per control channel for a cell.
    pub fn sigma(&self, cell: usize) -> Vec<f64> {
        let shrink = (1.0 + self.counts[cell] as f64 / self.config.n0).sqrt();
        self.saturation()
            .into_iter()
            .map(|s| self.config.sigma0_fraction * s / shrink)
            .collect()
    }

    fn layout_of(gates: &[GateObs]) -> Option<TwoGateLayout> {
        match gates {
            [a, b, ..] => Some(TwoGateLayout::from_gates(&a.pose, &b.pose)),
            _ => None,
        }
    }
}

impl Policy for SyntheticLearner {
    fn descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor {
            name: "synthetic_learner".into(),
            platform: self.platform,
            observation: ObservationKind::FullState,
        }
    }

    fn evaluate(&self, observation: &Observation) -> Control {
        let Observation::FullState {
            t,
            state,
            target,
            gates,
        } = observation
        else {
            return Control::zero(self.platform);
        };
        let base = self.expert.control(state, *target, gates);
        let Some(layout) = Self::layout_of(gates) else {
            return base;
        };
        let cell = self.partition.cell_of(&layout);
        let sigma = self.sigma(cell);
        let bucket = (t / self.config.hold).floor() as i64 as u64;
        let mut parts = vec![self.config.seed, bucket];
        parts.extend(layout.0.iter().map(|v| v.to_bits()));
        let mut rng = rng_for(&parts);
        let mut noise = sigma.iter().map(|s| {
            let z: f64 = StandardNormal.sample(&mut rng);
            s * z
        });
        let mut next = || noise.next().unwrap_or(0.0);
        match base {
            Control::Uav(u) => Control::Uav(self.expert.uav_params.saturate(&UavControl {
                yaw_rate: u.yaw_rate + next(),
                pitch_rate: u.pitch_rate + next(),
            })),
            Control::Quad(u) => Control::Quad(self.expert.quad_params.saturate(&QuadControl {
                vx: u.vx + next(),
                vy: u.vy + next(),
                vz: u.vz + next(),
                yaw_rate: u.yaw_rate + next(),
            })),
        }
    }

    /// Sets each cell's count to the number of dataset trajectories whose
    /// layout falls in it.
    fn train(&mut self, dataset: &Dataset) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        for tr in &dataset.trajectories {
            if let Some(layout) = &tr.layout {
                self.counts[self.partition.cell_of(layout)] += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gate_at(x: f64, y: f64, z: f64, yaw: f64) -> GatePose {
        GatePose::new(Vector3::new(x, y, z), yaw)
    }

    #[test]
    fn uav_expert_laws() {
        let g = UavExpertGains::default();
        let p = UavParams::default();
        let on_axis = UavState {
            position: Vector3::new(0.0, 0.0, 2.0),
            yaw: 0.0,
            pitch: 0.0,
        };
        let z = Vector3::zeros();
        let u = expert_uav(&on_axis, &gate_at(10.0, 0.0, 2.0, 0.0), &z, &g, &p);
        assert_eq!(u, UavControl::default());
        let off = UavState { yaw: -0.2, ..on_axis };
        let u = expert_uav(&off, &gate_at(10.0, 0.0, 2.0, 0.0), &z, &g, &p);
        assert!((u.yaw_rate - 0.4).abs() < 1e-12);
        let u = expert_uav(&on_axis, &gate_at(-10.0, 1.0, 2.0, std::f64::consts::PI), &z, &g, &p);
        assert_eq!(u.yaw_rate.abs(), 1.5);
    }

    #[test]
    fn quad_expert_signs() {
        let g = QuadExpertGains::default();
        let p = QuadParams::default();
        let s = QuadState::hover(Vector3::new(0.0, 0.0, 1.0), 0.0);
        let z = Vector3::zeros();
        let u = expert_quad(&s, &gate_at(3.0, 0.0, 1.0, 0.0), &z, &g, &p);
        assert_eq!(u, QuadControl { vx: 1.0, vy: 0.0, vz: 0.0, yaw_rate: 0.0 });
        let u = expert_quad(&s, &gate_at(3.0, 0.5, 1.0, 0.0), &z, &g, &p);
        assert!(u.vy > 0.0);
        let u = expert_quad(&s, &gate_at(3.0, 0.0, 1.0, 0.0), &Vector3::new(0.0, -0.25, 0.0), &g, &p);
        assert!((u.vy + 0.25).abs() < 1e-12);
    }

    fn block(mask: &mut Mask, x0: usize, y0: usize, w: usize, h: usize) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                mask.set(x, y, true);
            }
        }
    }

    #[test]
    fn components() {
        let mut m = Mask::new(40, 30);
        assert!(largest_component_centroid(&m).is_none());
        block(&mut m, 9, 9, 3, 3);
        assert_eq!(largest_component_centroid(&m), Some((Vector2::new(10.0, 10.0), 9)));
        let mut m = Mask::new(40, 30);
        block(&mut m, 0, 0, 4, 10);
        block(&mut m, 20, 10, 12, 10);
        let (c, a) = largest_component_centroid(&m).unwrap();
        assert_eq!(a, 120);
        assert_eq!(c, Vector2::new(25.5, 14.5));
        // diagonal contact does not connect; equal areas pick the first label
        let mut m = Mask::new(4, 4);
        m.set(0, 0, true);
        m.set(1, 1, true);
        assert_eq!(label_components(&m).1, 2);
        assert_eq!(largest_component_centroid(&m), Some((Vector2::new(0.0, 0.0), 1)));
    }

    #[test]
    fn centroid_controller_laws() {
        let k = CameraIntrinsics::default();
        let mut ctl = MaskCentroidController::new(k);
        ctl.gains.k_lateral = 1.0;
        let mut m = Mask::new(160, 120);
        block(&mut m, 79, 59, 3, 3);
        let u = ctl.control(&m, &[]);
        assert_eq!(u, QuadControl { vx: 1.0, vy: 0.0, vz: 0.0, yaw_rate: 0.0 });
        let mut m = Mask::new(160, 120);
        block(&mut m, 95, 59, 3, 3); // centroid x = 96, 10% of width right
        let u = ctl.control(&m, &[]);
        assert!((u.vy + 0.1).abs() < 1e-12);
        assert!(u.yaw_rate < 0.0);
        let u = ctl.control(&Mask::new(160, 120), &[]);
        assert_eq!(u.vx, 0.0);
        let last = QuadControl { vx: 0.0, vy: 0.2, vz: -0.1, yaw_rate: 0.3 };
        let u = ctl.control(&Mask::new(160, 120), &[Control::Quad(last)]);
        assert_eq!(u, last);
    }

    #[test]
    fn perception_noise_extremes() {
        let mut m = Mask::new(30, 20);
        block(&mut m, 10, 5, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let off = PerceptionNoise { flip_prob: 0.0, blob_rate: 0.0 };
        assert_eq!(noisy_perception(&m, &off, &mut rng), m);
        let all = PerceptionNoise { flip_prob: 1.0, blob_rate: 0.0 };
        let flipped = noisy_perception(&m, &all, &mut rng);
        let band = boundary_band(&m);
        for i in 0..m.data.len() {
            let expect = if band.contains(&i) { 255 - m.data[i] } else { m.data[i] };
            assert_eq!(flipped.data[i], expect);
        }
    }

    #[test]
    fn learner_sigma_closed_form() {
        let part = GridPartition::uniform([0.0; 8], [1.0; 8], [2; 8]).unwrap();
        let mut l = SyntheticLearner::new(Platform::Uav, part, LearnerConfig::default());
        assert_eq!(l.sigma(0), vec![0.4 * 1.5, 0.4 * 1.0]);
        l.set_count(0, 60);
        assert!((l.sigma(0)[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn history_is_bounded() {
        let mut h = ControlHistory::new(2);
        for i in 0..5 {
            h.push(Control::Uav(UavControl { yaw_rate: i as f64, pitch_rate: 0.0 }));
        }
        let v = h.to_vec();
        assert_eq!(v.len(), 2);
        assert_eq!(v[1], Control::Uav(UavControl { yaw_rate: 4.0, pitch_rate: 0.0 }));
    }
}
