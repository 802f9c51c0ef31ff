//! Pinhole camera model.
//!
//! World frame is z-up. Vehicle bodies use x forward, y left, z up. The
//! camera frame looks along +z with x right and y down. Pixel centres sit at
//! integer coordinates, so pixel (u, v) covers [u − ½, u + ½] × [v − ½, v + ½].

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::scene::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    /// 160×120 with a 90° horizontal field of view.
    fn default() -> Self {
        Self {
            fx: 80.0,
            fy: 80.0,
            cx: 80.0,
            cy: 60.0,
            width: 160,
            height: 120,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(format!("invalid camera intrinsics {self:?}"))
        }
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn project(&self, p_cam: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }

    /// Camera-frame ray direction (z = 1) through pixel coordinates.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Whether a pixel coordinate lies on the image, edges inclusive.
    pub fn contains(&self, uv: &Vector2<f64>, tol: f64) -> bool {
        uv.x >= -0.5 - tol
            && uv.x <= self.width as f64 - 0.5 + tol
            && uv.y >= -0.5 - tol
            && uv.y <= self.height as f64 - 0.5 + tol
    }
}

/// World→camera transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub world_to_camera: RigidTransform,
}

/// Camera orientation relative to the body: x forward, y left, z up.
fn body_to_camera_axes() -> Matrix3<f64> {
    // rows are the camera axes expressed in body coordinates
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

impl CameraPose {
    /// Camera at `position` looking along heading `yaw` with nose-up `pitch`
    /// and bank `roll` (all radians, z-y-x order).
    pub fn from_body(position: Vector3<f64>, roll: f64, pitch: f64, yaw: f64) -> Self {
        // nalgebra's pitch is about +y (left), which tips the nose down
        let r_wb = UnitQuaternion::from_euler_angles(roll, -pitch, yaw)
            .to_rotation_matrix()
            .into_inner();
        let r_cw = body_to_camera_axes() * r_wb.transpose();
        let rotation =
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r_cw));
        let translation = -(rotation * position);
        Self {
            world_to_camera: RigidTransform::new(rotation, translation),
        }
    }

    pub fn looking(position: Vector3<f64>, yaw: f64, pitch: f64) -> Self {
        Self::from_body(position, 0.0, pitch, yaw)
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.world_to_camera.apply_point(p_world)
    }

    pub fn center(&self) -> Vector3<f64> {
        self.world_to_camera.inverse().translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.world_to_camera.rotation.to_rotation_matrix().into_inner()
    }
}

/// How the camera sits on the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraMount {
    /// Extra nose-up tilt of the optical axis, radians.
    pub pitch_offset: f64,
    /// Whether vehicle roll and pitch tilt the camera. When false the camera
    /// is levelled and only follows heading.
    pub follow_attitude: bool,
}

impl Default for CameraMount {
    fn default() -> Self {
        Self {
            pitch_offset: 0.0,
            follow_attitude: true,
        }
    }
}

impl CameraMount {
    pub fn levelled() -> Self {
        Self {
            pitch_offset: 0.0,
            follow_attitude: false,
        }
    }

    pub fn pose(&self, position: Vector3<f64>, roll: f64, pitch: f64, yaw: f64) -> CameraPose {
        if self.follow_attitude {
            CameraPose::from_body(position, roll, pitch + self.pitch_offset, yaw)
        } else {
            CameraPose::from_body(position, 0.0, self.pitch_offset, yaw)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_is_plus_z_and_left_is_minus_x() {
        let pose = CameraPose::looking(Vector3::new(1.0, 2.0, 3.0), 0.0, 0.0);
        let ahead = pose.to_camera(&Vector3::new(6.0, 2.0, 3.0));
        assert!((ahead - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
        let left = pose.to_camera(&Vector3::new(6.0, 3.0, 3.0));
        assert!(left.x < 0.0);
        let up = pose.to_camera(&Vector3::new(6.0, 2.0, 4.0));
        assert!(up.y < 0.0);
        assert!((pose.center() - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn yaw_and_pitch_turn_the_axis() {
        let pose = CameraPose::looking(Vector3::zeros(), std::f64::consts::FRAC_PI_2, 0.0);
        let p = pose.to_camera(&Vector3::new(0.0, 4.0, 0.0));
        assert!((p - Vector3::new(0.0, 0.0, 4.0)).norm() < 1e-12);
        let pose = CameraPose::looking(Vector3::zeros(), 0.0, 0.3);
        let p = pose.to_camera(&Vector3::new(0.3f64.cos(), 0.0, 0.3f64.sin()));
        assert!((p - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn projection_on_axis() {
        let k = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 64.0,
            cy: 64.0,
            width: 128,
            height: 128,
        };
        assert_eq!(k.project(&Vector3::new(0.0, 0.0, 2.0)), Vector2::new(64.0, 64.0));
        assert_eq!(k.project(&Vector3::new(1.0, 0.0, 2.0)), Vector2::new(114.0, 64.0));
        assert!(k.validate().is_ok());
        assert!(CameraIntrinsics { cx: 128.0, ..k }.validate().is_err());
    }
}
