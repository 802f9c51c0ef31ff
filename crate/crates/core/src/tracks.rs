//! Gates, tracks and the two-gate layout space.
//!
//! A gate is a square or circular ring standing upright; its yaw sets the
//! horizontal normal `n = (cos ψ, sin ψ, 0)`, which is also the direction it
//! must be flown through. In-plane coordinates are `a` along the gate's left
//! axis `(−sin ψ, cos ψ, 0)` and `b` along world up.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraMount};
use crate::error::{SimError, TrackError};
use crate::policies::Policy;
use crate::scene::RigidTransform;
use crate::sim::{rollout, Outcome, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Uav,
    Quad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GateShape {
    Square { inner_side: f64 },
    Circular { inner_diameter: f64 },
}

impl GateShape {
    /// Half the inner opening (half side, or inner radius).
    pub fn inner_half_extent(&self) -> f64 {
        match *self {
            GateShape::Square { inner_side } => inner_side / 2.0,
            GateShape::Circular { inner_diameter } => inner_diameter / 2.0,
        }
    }

    /// Whether in-plane offset `(a, b)` lies on the ring solid.
    #[inline]
    pub fn on_ring(&self, a: f64, b: f64, ring_width: f64) -> bool {
        let inner = self.inner_half_extent();
        let m = match self {
            GateShape::Square { .. } => a.abs().max(b.abs()),
            GateShape::Circular { .. } => a.hypot(b),
        };
        m >= inner && m <= inner + ring_width
    }
}

/// Gate centre and heading of its normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatePose {
    pub center: [f64; 3],
    pub yaw: f64,
}

impl GatePose {
    pub fn new(center: Vector3<f64>, yaw: f64) -> Self {
        Self {
            center: center.into(),
            yaw,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    /// In-plane left axis.
    pub fn lateral(&self) -> Vector3<f64> {
        Vector3::new(-self.yaw.sin(), self.yaw.cos(), 0.0)
    }

    pub fn transform(&self) -> RigidTransform {
        RigidTransform::from_yaw(self.yaw, self.center())
    }

    /// Signed distance of `p` along the normal.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.center()).dot(&self.normal())
    }

    /// In-plane coordinates (a, b) of `p` relative to the centre.
    pub fn in_plane(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let d = p - self.center();
        Vector2::new(d.dot(&self.lateral()), d.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub pose: GatePose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub shape: GateShape,
    pub ring_width: f64,
    pub pose: GatePose,
    /// Piecewise-linear pose schedule; empty for static gates.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<Waypoint>,
}

pub const SQUARE_GATE_INNER_SIDE: f64 = 2.0;
pub const SQUARE_GATE_RING_WIDTH: f64 = 0.20;
pub const CIRCULAR_GATE_INNER_DIAMETER: f64 = 0.78;
pub const CIRCULAR_GATE_RING_WIDTH: f64 = 0.10;

impl Gate {
    pub fn square(pose: GatePose) -> Self {
        Self {
            shape: GateShape::Square {
                inner_side: SQUARE_GATE_INNER_SIDE,
            },
            ring_width: SQUARE_GATE_RING_WIDTH,
            pose,
            schedule: Vec::new(),
        }
    }

    pub fn circular(pose: GatePose) -> Self {
        Self {
            shape: GateShape::Circular {
                inner_diameter: CIRCULAR_GATE_INNER_DIAMETER,
            },
            ring_width: CIRCULAR_GATE_RING_WIDTH,
            pose,
            schedule: Vec::new(),
        }
    }

    pub fn for_platform(platform: Platform, pose: GatePose) -> Self {
        match platform {
            Platform::Uav => Self::square(pose),
            Platform::Quad => Self::circular(pose),
        }
    }

    /// Adds a constant-velocity segment from `t0` to `t1`, starting at the
    /// static pose.
    pub fn moving(mut self, t0: f64, t1: f64, velocity: Vector3<f64>) -> Self {
        let start = self.pose;
        let end = GatePose::new(start.center() + velocity * (t1 - t0), start.yaw);
        self.schedule = vec![Waypoint { t: t0, pose: start }, Waypoint { t: t1, pose: end }];
        self
    }

    pub fn is_moving(&self) -> bool {
        self.schedule.len() > 1
    }

    pub fn outer_half_extent(&self) -> f64 {
        self.shape.inner_half_extent() + self.ring_width
    }

    pub fn validate(&self, index: usize) -> Result<(), TrackError> {
        let err = |message: String| TrackError::Gate { index, message };
        if !(self.shape.inner_half_extent() > 0.0) {
            return Err(err("inner dimension must be positive".into()));
        }
        if !(self.ring_width > 0.0) {
            return Err(err("ring width must be positive".into()));
        }
        if self
            .schedule
            .windows(2)
            .any(|w| !(w[1].t > w[0].t))
        {
            return Err(err("schedule timestamps must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Pose at time `t`: linear interpolation of the schedule, clamped at
    /// both ends.
    pub fn pose_at(&self, t: f64) -> GatePose {
        let s = &self.schedule;
        match s.len() {
            0 => self.pose,
            1 => s[0].pose,
            _ => {
                if t <= s[0].t {
                    return s[0].pose;
                }
                let last = s[s.len() - 1];
                if t >= last.t {
                    return last.pose;
                }
                let k = s.partition_point(|w| w.t <= t) - 1;
                let (a, b) = (s[k], s[k + 1]);
                if t == a.t {
                    return a.pose;
                }
                let f = (t - a.t) / (b.t - a.t);
                let ca = a.pose.center();
                let cb = b.pose.center();
                GatePose::new(ca + (cb - ca) * f, a.pose.yaw + (b.pose.yaw - a.pose.yaw) * f)
            }
        }
    }

    /// Centre velocity at time `t` (right-continuous at waypoints).
    pub fn velocity_at(&self, t: f64) -> Vector3<f64> {
        let s = &self.schedule;
        if s.len() < 2 || t < s[0].t || t >= s[s.len() - 1].t {
            return Vector3::zeros();
        }
        let k = s.partition_point(|w| w.t <= t) - 1;
        let (a, b) = (s[k], s[k + 1]);
        (b.pose.center() - a.pose.center()) / (b.t - a.t)
    }

    pub fn transform_at(&self, t: f64) -> RigidTransform {
        self.pose_at(t).transform()
    }

    /// Gate rigidly shifted by `delta`, schedule included.
    pub fn shifted(&self, delta: Vector3<f64>) -> Self {
        let mv = |p: GatePose| GatePose::new(p.center() + delta, p.yaw);
        Self {
            pose: mv(self.pose),
            schedule: self
                .schedule
                .iter()
                .map(|w| Waypoint {
                    t: w.t,
                    pose: mv(w.pose),
                })
                .collect(),
            ..self.clone()
        }
    }
}

/// `gate_pose_at` as a free function.
pub fn gate_pose_at(gate: &Gate, t: f64) -> RigidTransform {
    gate.transform_at(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitState {
    pub position: [f64; 3],
    pub yaw: f64,
    #[serde(default)]
    pub pitch: f64,
}

impl InitState {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    #[serde(default)]
    pub name: String,
    pub platform: Platform,
    pub arena: Aabb,
    pub gates: Vec<Gate>,
    pub init_state: InitState,
}

impl Track {
    pub fn validate(&self) -> Result<(), TrackError> {
        if self.gates.is_empty() {
            return Err(TrackError::Track("a track needs at least one gate".into()));
        }
        for (i, g) in self.gates.iter().enumerate() {
            g.validate(i)?;
            if !g.is_moving() && !self.arena.contains(&g.pose.center()) {
                return Err(TrackError::Gate {
                    index: i,
                    message: "gate centre outside the arena".into(),
                });
            }
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self, TrackError> {
        let t: Track = serde_json::from_str(json)?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tracks always serialise")
    }

    pub fn gate_poses_at(&self, t: f64) -> Vec<GatePose> {
        self.gates.iter().map(|g| g.pose_at(t)).collect()
    }

    /// Polyline length start → gate 1 → … → gate N at t = 0.
    pub fn path_length(&self) -> f64 {
        let mut prev = self.init_state.position();
        let mut len = 0.0;
        for g in &self.gates {
            let c = g.pose_at(0.0).center();
            len += (c - prev).norm();
            prev = c;
        }
        len
    }
}

/// g = (x₁, y₁, z₁, ψ₁, x₂, y₂, z₂, ψ₂).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoGateLayout(pub [f64; 8]);

impl TwoGateLayout {
    pub fn gate(&self, k: usize) -> GatePose {
        let o = 4 * k;
        GatePose::new(
            Vector3::new(self.0[o], self.0[o + 1], self.0[o + 2]),
            self.0[o + 3],
        )
    }

    pub fn from_gates(a: &GatePose, b: &GatePose) -> Self {
        Self([
            a.center[0], a.center[1], a.center[2], a.yaw, b.center[0], b.center[1], b.center[2],
            b.yaw,
        ])
    }
}

/// Everything needed to turn a layout into a flyable two-gate track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutTemplate {
    pub platform: Platform,
    pub arena: Aabb,
    /// Start this far before gate 1, on its axis, heading along its normal.
    pub approach_distance: f64,
}

impl LayoutTemplate {
    pub fn uav() -> Self {
        Self {
            platform: Platform::Uav,
            arena: Aabb {
                min: [0.0, 0.0, 0.0],
                max: [40.0, 20.0, 4.0],
            },
            approach_distance: 8.0,
        }
    }

    pub fn quad() -> Self {
        Self {
            platform: Platform::Quad,
            arena: Aabb {
                min: [0.0, 0.0, 0.0],
                max: [6.0, 6.0, 3.0],
            },
            approach_distance: 1.5,
        }
    }

    pub fn for_platform(platform: Platform) -> Self {
        match platform {
            Platform::Uav => Self::uav(),
            Platform::Quad => Self::quad(),
        }
    }

    pub fn track(&self, layout: &TwoGateLayout) -> Track {
        let g1 = layout.gate(0);
        let start = g1.center() - g1.normal() * self.approach_distance;
        Track {
            name: String::new(),
            platform: self.platform,
            arena: self.arena,
            gates: vec![
                Gate::for_platform(self.platform, g1),
                Gate::for_platform(self.platform, layout.gate(1)),
            ],
            init_state: InitState {
                position: start.into(),
                yaw: g1.yaw,
                pitch: 0.0,
            },
        }
    }
}

/// Numerical slack, in pixels, on the image-edge test.
const EDGE_TOL_PX: f64 = 1e-9;

fn sees(
    from: &Vector3<f64>,
    yaw: f64,
    target: &Vector3<f64>,
    intrinsics: &CameraIntrinsics,
    mount: &CameraMount,
) -> bool {
    let pose = mount.pose(*from, 0.0, 0.0, yaw);
    let p = pose.to_camera(target);
    p.z > 0.0 && intrinsics.contains(&intrinsics.project(&p), EDGE_TOL_PX)
}

/// Gate 2's centre is in view from gate 1's centre when looking along gate
/// 1's normal.
pub fn observability_check(
    layout: &TwoGateLayout,
    intrinsics: &CameraIntrinsics,
    mount: &CameraMount,
) -> bool {
    let g1 = layout.gate(0);
    sees(&g1.center(), g1.yaw, &layout.gate(1).center(), intrinsics, mount)
}

/// Track-level observability: the first gate from the start pose and each
/// next gate from the previous gate centre.
pub fn track_observable(track: &Track, intrinsics: &CameraIntrinsics, mount: &CameraMount) -> bool {
    let poses = track.gate_poses_at(0.0);
    let init = &track.init_state;
    if !sees(&init.position(), init.yaw, &poses[0].center(), intrinsics, mount) {
        return false;
    }
    poses
        .windows(2)
        .all(|w| sees(&w[0].center(), w[0].yaw, &w[1].center(), intrinsics, mount))
}

/// True iff a full-state expert rollout crosses both gates successfully.
pub fn feasibility_check(
    layout: &TwoGateLayout,
    template: &LayoutTemplate,
    expert: &dyn Policy,
    config: &SimConfig,
) -> Result<bool, SimError> {
    let track = template.track(layout);
    let r = rollout(expert, &track, config)?;
    Ok(r.gates.iter().all(|g| g.outcome == Outcome::Success))
}

/// Uniform draw inside an axis-aligned cell of layout space.
pub fn sample_layout<R: Rng + ?Sized>(lower: &[f64; 8], upper: &[f64; 8], rng: &mut R) -> TwoGateLayout {
    let mut g = [0.0; 8];
    for k in 0..8 {
        let u: f64 = rng.random();
        g[k] = lower[k] + (upper[k] - lower[k]) * u;
    }
    TwoGateLayout(g)
}

/// Shifts every gate by an independent offset uniform in [−a, a]³, with
/// `a` given in centimetres. Yaw is unchanged.
pub fn perturb_track<R: Rng + ?Sized>(track: &Track, a_cm: f64, rng: &mut R) -> Track {
    let a = a_cm / 100.0;
    let mut out = track.clone();
    for g in out.gates.iter_mut() {
        let mut d = Vector3::zeros();
        for k in 0..3 {
            let u: f64 = rng.random();
            d[k] = a * (2.0 * u - 1.0);
        }
        *g = g.shifted(d);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pose(x: f64, y: f64, z: f64, yaw: f64) -> GatePose {
        GatePose::new(Vector3::new(x, y, z), yaw)
    }

    #[test]
    fn schedule_interpolation() {
        let g = Gate::circular(pose(0.0, 0.0, 1.0, 0.0));
        assert_eq!(g.pose_at(12.3), g.pose);
        let mut g = g;
        g.schedule = vec![
            Waypoint {
                t: 0.0,
                pose: pose(0.0, 0.0, 1.0, 0.0),
            },
            Waypoint {
                t: 4.0,
                pose: pose(1.0, 0.0, 1.0, 0.0),
            },
        ];
        assert_eq!(g.pose_at(2.0).center[0], 0.5);
        assert_eq!(g.pose_at(100.0), g.schedule[1].pose);
        assert_eq!(g.pose_at(0.0), g.schedule[0].pose);
        assert_eq!(g.pose_at(4.0), g.schedule[1].pose);
        g.schedule[1].t = 0.0;
        assert!(g.validate(0).is_err());
    }

    #[test]
    fn ring_membership() {
        let sq = GateShape::Square { inner_side: 2.0 };
        assert!(!sq.on_ring(0.0, 0.0, 0.2));
        assert!(sq.on_ring(1.0, 0.5, 0.2));
        assert!(sq.on_ring(-0.3, 1.2, 0.2));
        assert!(!sq.on_ring(1.25, 0.0, 0.2));
        let c = GateShape::Circular {
            inner_diameter: 0.78,
        };
        assert!(c.on_ring(0.0, 0.4, 0.1));
        assert!(!c.on_ring(0.3, 0.0, 0.1));
    }

    #[test]
    fn observability_examples() {
        let k = CameraIntrinsics::default();
        let m = CameraMount::default();
        let ahead = TwoGateLayout::from_gates(&pose(5.0, 5.0, 2.0, 0.0), &pose(10.0, 5.0, 2.0, 0.0));
        assert!(observability_check(&ahead, &k, &m));
        let behind = TwoGateLayout::from_gates(&pose(5.0, 5.0, 2.0, 0.0), &pose(0.0, 5.0, 2.0, 0.0));
        assert!(!observability_check(&behind, &k, &m));
        // exactly on the right image edge: u = width - 0.5
        let tan_half = (k.width as f64 - 0.5 - k.cx) / k.fx;
        let edge = TwoGateLayout::from_gates(
            &pose(5.0, 5.0, 2.0, 0.0),
            &pose(10.0, 5.0 - 5.0 * tan_half, 2.0, 0.0),
        );
        assert!(observability_check(&edge, &k, &m));
        let past_edge = TwoGateLayout::from_gates(
            &pose(5.0, 5.0, 2.0, 0.0),
            &pose(10.0, 5.0 - 5.0 * tan_half - 0.01, 2.0, 0.0),
        );
        assert!(!observability_check(&past_edge, &k, &m));
    }

    #[test]
    fn sampling_is_uniform_and_seeded() {
        let lo = [0.0, 1.0, 2.0, -0.5, 3.0, 4.0, 5.0, 0.0];
        let hi = [1.0, 3.0, 2.0, 0.5, 4.0, 6.0, 5.5, 0.2];
        let a = sample_layout(&lo, &hi, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_layout(&lo, &hi, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        for k in 0..8 {
            assert!(a.0[k] >= lo[k] && a.0[k] <= hi[k]);
        }
        assert_eq!(a.0[2], 2.0);
        let z = sample_layout(&lo, &lo, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(z.0, lo);
    }

    #[test]
    fn perturbation_support() {
        let t = LayoutTemplate::uav().track(&TwoGateLayout::from_gates(
            &pose(15.0, 10.0, 2.0, 0.0),
            &pose(25.0, 10.0, 2.0, 0.0),
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(perturb_track(&t, 0.0, &mut rng), t);
        let p1 = perturb_track(&t, 40.0, &mut ChaCha8Rng::seed_from_u64(5));
        let p2 = perturb_track(&t, 40.0, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(p1, p2);
        for (a, b) in p1.gates.iter().zip(&t.gates) {
            let d = a.pose.center() - b.pose.center();
            assert!(d.amax() <= 0.4);
            assert_eq!(a.pose.yaw, b.pose.yaw);
        }
    }

    #[test]
    fn track_json_round_trip() {
        let mut t = LayoutTemplate::quad().track(&TwoGateLayout::from_gates(
            &pose(2.0, 3.0, 1.0, 0.0),
            &pose(4.0, 3.0, 1.0, 0.2),
        ));
        t.gates[1] = t.gates[1].clone().moving(0.0, 4.0, Vector3::new(0.0, -0.25, 0.0));
        let back = Track::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        let mut bad = t.clone();
        bad.gates[0].pose.center = [100.0, 0.0, 0.0];
        assert!(bad.validate().is_err());
    }
}
