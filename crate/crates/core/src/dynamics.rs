//! Vehicle models integrated with fixed-step RK4.
//!
//! The fixed-wing UAV is a Dubins airplane driven by yaw-rate and
//! pitch-rate commands. The quadrotor is a 12-state rigid body whose built-in
//! inner loop tracks body-frame velocity and yaw-rate commands.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::DynamicsError;
use crate::tracks::Platform;

pub const GRAVITY: f64 = 9.81;
pub const UAV_MAX_DT: f64 = 0.1;
pub const QUAD_MAX_DT: f64 = 0.05;

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UavParams {
    pub speed: f64,
    pub pitch_max: f64,
    pub yaw_rate_max: f64,
    pub pitch_rate_max: f64,
}

impl Default for UavParams {
    fn default() -> Self {
        Self {
            speed: 7.0,
            pitch_max: 0.4,
            yaw_rate_max: 1.5,
            pitch_rate_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub pitch: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UavControl {
    pub yaw_rate: f64,
    pub pitch_rate: f64,
}

impl UavParams {
    pub fn saturate(&self, u: &UavControl) -> UavControl {
        UavControl {
            yaw_rate: u.yaw_rate.clamp(-self.yaw_rate_max, self.yaw_rate_max),
            pitch_rate: u.pitch_rate.clamp(-self.pitch_rate_max, self.pitch_rate_max),
        }
    }

    fn derivative(&self, s: &[f64; 5], u: &UavControl) -> [f64; 5] {
        let (yaw, pitch) = (s[3], s[4]);
        let v = self.speed;
        let pinned = (pitch >= self.pitch_max && u.pitch_rate > 0.0)
            || (pitch <= -self.pitch_max && u.pitch_rate < 0.0);
        [
            v * yaw.cos() * pitch.cos(),
            v * yaw.sin() * pitch.cos(),
            v * pitch.sin(),
            u.yaw_rate,
            if pinned { 0.0 } else { u.pitch_rate },
        ]
    }
}

fn rk4<const N: usize>(x: &[f64; N], dt: f64, f: impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
    let add = |a: &[f64; N], k: &[f64; N], h: f64| {
        let mut out = *a;
        for i in 0..N {
            out[i] += h * k[i];
        }
        out
    };
    let k1 = f(x);
    let k2 = f(&add(x, &k1, dt / 2.0));
    let k3 = f(&add(x, &k2, dt / 2.0));
    let k4 = f(&add(x, &k3, dt));
    let mut out = *x;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn check_dt(dt: f64, max: f64) -> Result<(), DynamicsError> {
    if dt > 0.0 && dt <= max {
        Ok(())
    } else {
        Err(DynamicsError::Timestep { dt, max })
    }
}

fn check_finite(values: &[f64], what: &'static str) -> Result<(), DynamicsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DynamicsError::NonFinite(what))
    }
}

pub fn step_uav(
    state: &UavState,
    control: &UavControl,
    dt: f64,
    params: &UavParams,
) -> Result<UavState, DynamicsError> {
    check_dt(dt, UAV_MAX_DT)?;
    let p = state.position;
    check_finite(&[p.x, p.y, p.z, state.yaw, state.pitch], "uav state")?;
    check_finite(&[control.yaw_rate, control.pitch_rate], "uav control")?;
    let u = params.saturate(control);
    let x = [p.x, p.y, p.z, state.yaw, state.pitch];
    let n = rk4(&x, dt, |s| params.derivative(s, &u));
    Ok(UavState {
        position: Vector3::new(n[0], n[1], n[2]),
        yaw: wrap_angle(n[3]),
        pitch: n[4].clamp(-params.pitch_max, params.pitch_max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadParams {
    /// Velocity-loop time constant, s.
    pub tau_v: f64,
    pub tilt_max: f64,
    /// Attitude-angle → body-rate gain, 1/s.
    pub k_att: f64,
    /// Body-rate tracking bandwidth, 1/s.
    pub k_rate: f64,
    pub speed_max: f64,
    pub yaw_rate_max: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            tau_v: 0.3,
            tilt_max: 0.6,
            k_att: 12.0,
            k_rate: 40.0,
            speed_max: 2.0,
            yaw_rate_max: 1.5,
        }
    }
}

/// Euler angles are z-y-x (yaw, pitch, roll) with `R = Rz(ψ) Ry(θ) Rx(φ)`;
/// positive pitch tilts thrust forward, positive roll tilts it right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    pub position: Vector3<f64>,
    /// World frame.
    pub velocity: Vector3<f64>,
    /// (roll, pitch, yaw).
    pub attitude: Vector3<f64>,
    pub body_rates: Vector3<f64>,
}

impl QuadState {
    pub fn hover(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: Vector3::new(0.0, 0.0, yaw),
            body_rates: Vector3::zeros(),
        }
    }

    fn to_array(self) -> [f64; 12] {
        let mut a = [0.0; 12];
        a[0..3].copy_from_slice(self.position.as_slice());
        a[3..6].copy_from_slice(self.velocity.as_slice());
        a[6..9].copy_from_slice(self.attitude.as_slice());
        a[9..12].copy_from_slice(self.body_rates.as_slice());
        a
    }

    fn from_array(a: &[f64; 12]) -> Self {
        Self {
            position: Vector3::new(a[0], a[1], a[2]),
            velocity: Vector3::new(a[3], a[4], a[5]),
            attitude: Vector3::new(a[6], a[7], a[8]),
            body_rates: Vector3::new(a[9], a[10], a[11]),
        }
    }
}

/// Body-frame velocity (x forward, y left, z up) and yaw-rate command.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QuadControl {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub yaw_rate: f64,
}

impl QuadParams {
    pub fn saturate(&self, u: &QuadControl) -> QuadControl {
        let v = Vector3::new(u.vx, u.vy, u.vz);
        let n = v.norm();
        let v = if n > self.speed_max { v * (self.speed_max / n) } else { v };
        QuadControl {
            vx: v.x,
            vy: v.y,
            vz: v.z,
            yaw_rate: u.yaw_rate.clamp(-self.yaw_rate_max, self.yaw_rate_max),
        }
    }

    fn derivative(&self, s: &[f64; 12], u: &QuadControl) -> [f64; 12] {
        let vel = Vector3::new(s[3], s[4], s[5]);
        let (roll, pitch, yaw) = (s[6], s[7], s[8]);
        let (p, q, r) = (s[9], s[10], s[11]);

        // velocity loop in the heading frame
        let (sy, cy) = yaw.sin_cos();
        let v_cmd = Vector3::new(cy * u.vx - sy * u.vy, sy * u.vx + cy * u.vy, u.vz);
        let f = (v_cmd - vel) / self.tau_v + Vector3::new(0.0, 0.0, GRAVITY);
        let fh = Vector3::new(cy * f.x + sy * f.y, -sy * f.x + cy * f.y, f.z);
        let pitch_des = fh.x.atan2(fh.z).clamp(-self.tilt_max, self.tilt_max);
        let roll_des = (-fh.y)
            .atan2(fh.x.hypot(fh.z))
            .clamp(-self.tilt_max, self.tilt_max);

        let rot = Rotation3::from_euler_angles(roll, pitch, yaw);
        let b_z = rot * Vector3::z();
        let thrust = f.dot(&b_z).max(0.0);
        let acc = b_z * thrust - Vector3::new(0.0, 0.0, GRAVITY);

        let (sr, cr) = roll.sin_cos();
        let (tp, cp) = (pitch.tan(), pitch.cos());
        let roll_dot = p + (sr * q + cr * r) * tp;
        let pitch_dot = cr * q - sr * r;
        let yaw_dot = (sr * q + cr * r) / cp;

        let w_des = Vector3::new(
            self.k_att * (roll_des - roll),
            self.k_att * (pitch_des - pitch),
            u.yaw_rate,
        );
        let w_dot = (w_des - Vector3::new(p, q, r)) * self.k_rate;

        [
            vel.x, vel.y, vel.z, acc.x, acc.y, acc.z, roll_dot, pitch_dot, yaw_dot, w_dot.x,
            w_dot.y, w_dot.z,
        ]
    }
}

pub fn step_quad(
    state: &QuadState,
    control: &QuadControl,
    dt: f64,
    params: &QuadParams,
) -> Result<QuadState, DynamicsError> {
    check_dt(dt, QUAD_MAX_DT)?;
    let x = state.to_array();
    check_finite(&x, "quad state")?;
    check_finite(
        &[control.vx, control.vy, control.vz, control.yaw_rate],
        "quad control",
    )?;
    let u = params.saturate(control);
    let mut n = rk4(&x, dt, |s| params.derivative(s, &u));
    n[8] = wrap_angle(n[8]);
    Ok(QuadState::from_array(&n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleState {
    Uav(UavState),
    Quad(QuadState),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    Uav(UavControl),
    Quad(QuadControl),
}

impl Control {
    pub fn zero(platform: Platform) -> Self {
        match platform {
            Platform::Uav => Control::Uav(UavControl::default()),
            Platform::Quad => Control::Quad(QuadControl::default()),
        }
    }

    pub fn platform(&self) -> Platform {
        match self {
            Control::Uav(_) => Platform::Uav,
            Control::Quad(_) => Platform::Quad,
        }
    }

    pub fn as_vec(&self) -> Vec<f64> {
        match self {
            Control::Uav(u) => vec![u.yaw_rate, u.pitch_rate],
            Control::Quad(u) => vec![u.vx, u.vy, u.vz, u.yaw_rate],
        }
    }

    pub fn column_names(platform: Platform) -> &'static [&'static str] {
        match platform {
            Platform::Uav => &["u_yaw_rate", "u_pitch_rate"],
            Platform::Quad => &["u_vx", "u_vy", "u_vz", "u_yaw_rate"],
        }
    }
}

impl VehicleState {
    pub fn platform(&self) -> Platform {
        match self {
            VehicleState::Uav(_) => Platform::Uav,
            VehicleState::Quad(_) => Platform::Quad,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        match self {
            VehicleState::Uav(s) => s.position,
            VehicleState::Quad(s) => s.position,
        }
    }

    /// (roll, pitch, yaw) with pitch positive nose-up.
    pub fn attitude(&self) -> (f64, f64, f64) {
        match self {
            VehicleState::Uav(s) => (0.0, s.pitch, s.yaw),
            VehicleState::Quad(s) => (s.attitude.x, -s.attitude.y, s.attitude.z),
        }
    }

    pub fn yaw(&self) -> f64 {
        self.attitude().2
    }

    pub fn as_vec(&self) -> Vec<f64> {
        match self {
            VehicleState::Uav(s) => vec![s.position.x, s.position.y, s.position.z, s.yaw, s.pitch],
            VehicleState::Quad(s) => s.to_array().to_vec(),
        }
    }

    pub fn column_names(platform: Platform) -> &'static [&'static str] {
        match platform {
            Platform::Uav => &["x", "y", "z", "yaw", "pitch"],
            Platform::Quad => &[
                "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw", "p", "q", "r",
            ],
        }
    }
}

/// Platform parameters behind a single stepping entry point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub uav: UavParams,
    pub quad: QuadParams,
}

impl DynamicsConfig {
    pub fn step(
        &self,
        state: &VehicleState,
        control: &Control,
        dt: f64,
    ) -> Result<VehicleState, DynamicsError> {
        match (state, control) {
            (VehicleState::Uav(s), Control::Uav(u)) => step_uav(s, u, dt, &self.uav).map(VehicleState::Uav),
            (VehicleState::Quad(s), Control::Quad(u)) => {
                step_quad(s, u, dt, &self.quad).map(VehicleState::Quad)
            }
            _ => Err(DynamicsError::PlatformMismatch),
        }
    }

    /// Cruise speed used for timeouts.
    pub fn nominal_speed(&self, platform: Platform) -> f64 {
        match platform {
            Platform::Uav => self.uav.speed,
            Platform::Quad => 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level(p: [f64; 3]) -> UavState {
        UavState {
            position: Vector3::from(p),
            yaw: 0.0,
            pitch: 0.0,
        }
    }

    #[test]
    fn uav_straight_line() {
        let s = step_uav(&level([0.0; 3]), &UavControl::default(), 0.1, &UavParams::default()).unwrap();
        assert!((s.position - Vector3::new(0.7, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn uav_pitch_saturates() {
        let p = UavParams::default();
        let mut s = level([0.0; 3]);
        let u = UavControl {
            yaw_rate: 0.0,
            pitch_rate: 50.0,
        };
        for _ in 0..100 {
            s = step_uav(&s, &u, 0.02, &p).unwrap();
        }
        assert_eq!(s.pitch, p.pitch_max);
        let z0 = s.position.z;
        let s2 = step_uav(&s, &u, 0.02, &p).unwrap();
        assert!(((s2.position.z - z0) / 0.02 - 7.0 * 0.4f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn uav_rejects_bad_input() {
        let p = UavParams::default();
        assert!(step_uav(&level([0.0; 3]), &UavControl::default(), 0.2, &p).is_err());
        assert!(step_uav(&level([f64::NAN, 0.0, 0.0]), &UavControl::default(), 0.02, &p).is_err());
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn quad_hover_is_equilibrium() {
        let s = QuadState::hover(Vector3::new(1.0, 2.0, 1.5), 0.3);
        let n = step_quad(&s, &QuadControl::default(), 0.01, &QuadParams::default()).unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn quad_velocity_step_settles_within_three_tau() {
        let p = QuadParams::default();
        let mut s = QuadState::hover(Vector3::zeros(), 0.0);
        let u = QuadControl {
            vx: 1.0,
            ..Default::default()
        };
        let mut t = 0.0;
        while t < 3.0 * p.tau_v - 1e-9 {
            s = step_quad(&s, &u, 0.01, &p).unwrap();
            t += 0.01;
        }
        assert!(s.velocity.x >= 0.95, "vx {}", s.velocity.x);
        for _ in 0..300 {
            s = step_quad(&s, &u, 0.01, &p).unwrap();
        }
        assert!((s.velocity.x - 1.0).abs() < 1e-3);
        assert!(s.velocity.y.abs() < 1e-9 && s.velocity.z.abs() < 1e-3);
    }

    #[test]
    fn quad_body_frame_commands() {
        let p = QuadParams::default();
        let mut s = QuadState::hover(Vector3::zeros(), std::f64::consts::FRAC_PI_2);
        let u = QuadControl {
            vx: 0.0,
            vy: 1.0,
            vz: 0.5,
            yaw_rate: 0.0,
        };
        for _ in 0..300 {
            s = step_quad(&s, &u, 0.01, &p).unwrap();
        }
        // facing +y, left is −x
        assert!((s.velocity - Vector3::new(-1.0, 0.0, 0.5)).norm() < 1e-3, "{}", s.velocity);
        assert!(s.attitude.x.abs() < 0.6 && s.attitude.y.abs() < 0.6);
    }

    #[test]
    fn quad_yaw_rate_integrates() {
        let p = QuadParams::default();
        let mut s = QuadState::hover(Vector3::zeros(), 0.0);
        let u = QuadControl {
            yaw_rate: 0.5,
            ..Default::default()
        };
        for _ in 0..200 {
            s = step_quad(&s, &u, 0.01, &p).unwrap();
        }
        assert!((s.attitude.z - 1.0).abs() < 0.05, "yaw {}", s.attitude.z);
    }

    #[test]
    fn saturation_limits() {
        let p = QuadParams::default();
        let u = p.saturate(&QuadControl {
            vx: 3.0,
            vy: 4.0,
            vz: 0.0,
            yaw_rate: -9.0,
        });
        assert!((u.vx - 1.2).abs() < 1e-12 && (u.vy - 1.6).abs() < 1e-12);
        assert_eq!(u.yaw_rate, -1.5);
    }

    #[test]
    fn platform_mismatch() {
        let cfg = DynamicsConfig::default();
        let s = VehicleState::Uav(level([0.0; 3]));
        assert_eq!(
            cfg.step(&s, &Control::zero(Platform::Quad), 0.01),
            Err(DynamicsError::PlatformMismatch)
        );
    }
}
