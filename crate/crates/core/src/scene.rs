//! Gaussian-splat scene model.
//!
//! A scene is an ordered list of anisotropic Gaussians in a metric world
//! frame plus named object selections. Covariances are never stored: they
//! are rebuilt from rotation and per-axis scale on demand.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::SceneError;

/// Tolerance on quaternion norm accepted as "unit".
pub const UNIT_QUAT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scale: Vector3<f64>,
    pub color: Vector3<f64>,
    pub opacity: f64,
}

impl Gaussian {
    pub fn new(
        mean: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        scale: Vector3<f64>,
        color: Vector3<f64>,
        opacity: f64,
    ) -> Self {
        Self {
            mean,
            rotation,
            scale,
            color,
            opacity,
        }
    }

    /// Isotropic gaussian with identity rotation.
    pub fn isotropic(mean: Vector3<f64>, sigma: f64, color: Vector3<f64>, opacity: f64) -> Self {
        Self::new(
            mean,
            UnitQuaternion::identity(),
            Vector3::repeat(sigma),
            color,
            opacity,
        )
    }

    /// Σ = R diag(s²) Rᵀ.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }

    /// Checks every field invariant; `index` is only used for the error.
    pub fn validate(&self, index: usize) -> Result<(), SceneError> {
        let err = |message: String| SceneError::Validation { index, message };
        let q = self.rotation.quaternion();
        let fields = self
            .mean
            .iter()
            .chain(self.scale.iter())
            .chain(self.color.iter())
            .chain(q.coords.iter())
            .chain(std::iter::once(&self.opacity));
        if fields.clone().any(|v| v.is_nan()) {
            return Err(err("NaN field".into()));
        }
        if fields.clone().any(|v| !v.is_finite()) {
            return Err(err("non-finite field".into()));
        }
        if (q.norm() - 1.0).abs() > UNIT_QUAT_TOL {
            return Err(err(format!("rotation norm {} is not unit", q.norm())));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(err(format!("non-positive scale {:?}", self.scale.as_slice())));
        }
        if self.color.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(err(format!("color {:?} outside [0,1]", self.color.as_slice())));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(err(format!("opacity {} outside [0,1]", self.opacity)));
        }
        Ok(())
    }
}

/// Builds a unit quaternion from raw (w, x, y, z) components.
///
/// Components already within [`UNIT_QUAT_TOL`] of unit norm are kept
/// bit-for-bit so that file round-trips stay lossless.
pub fn quat_from_wxyz(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion<f64> {
    let q = Quaternion::new(w, x, y, z);
    if (q.norm() - 1.0).abs() <= UNIT_QUAT_TOL {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::new_normalize(q)
    }
}

pub fn quat_to_wxyz(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Ordered gaussians plus named, possibly overlapping, index sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    pub objects: BTreeMap<String, BTreeSet<usize>>,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        Self {
            gaussians,
            objects: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate(i)?;
        }
        for (name, set) in &self.objects {
            if let Some(&index) = set.iter().next_back().filter(|&&i| i >= self.len()) {
                return Err(SceneError::DanglingIndex {
                    object: name.clone(),
                    index,
                    len: self.len(),
                });
            }
        }
        Ok(())
    }

    /// Registers an object, returning the id actually used. Taken ids get a
    /// deterministic `_1`, `_2`, ... suffix.
    pub fn insert_object(
        &mut self,
        requested: &str,
        indices: impl IntoIterator<Item = usize>,
    ) -> String {
        let id = self.fresh_object_id(requested);
        self.objects.insert(id.clone(), indices.into_iter().collect());
        id
    }

    pub fn fresh_object_id(&self, requested: &str) -> String {
        if !self.objects.contains_key(requested) {
            return requested.to_string();
        }
        (1..)
            .map(|n| format!("{requested}_{n}"))
            .find(|id| !self.objects.contains_key(id))
            .expect("unbounded suffix search")
    }

    /// Indices selected by `selection`, sorted ascending.
    pub fn resolve_selection(&self, selection: &Selection) -> Result<Vec<usize>, SceneError> {
        match selection {
            Selection::All => Ok((0..self.len()).collect()),
            Selection::Object(id) => self
                .objects
                .get(id)
                .map(|set| set.iter().copied().collect())
                .ok_or_else(|| SceneError::UnknownObject(id.clone())),
            Selection::Box { min, max } => {
                if (0..3).any(|k| min[k] > max[k]) || min.iter().chain(max).any(|v| v.is_nan()) {
                    return Err(SceneError::InvalidSelection(format!(
                        "box min {min:?} exceeds max {max:?}"
                    )));
                }
                Ok(self
                    .gaussians
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| (0..3).all(|k| g.mean[k] >= min[k] && g.mean[k] <= max[k]))
                    .map(|(i, _)| i)
                    .collect())
            }
        }
    }

    /// Centroid of the selected means.
    pub fn centroid(&self, indices: &[usize]) -> Option<Vector3<f64>> {
        if indices.is_empty() {
            return None;
        }
        let sum = indices
            .iter()
            .fold(Vector3::zeros(), |acc, &i| acc + self.gaussians[i].mean);
        Some(sum / indices.len() as f64)
    }

    /// Applies `transform` to every gaussian: means mapped, rotations
    /// left-composed, scales multiplied by the uniform scale factor.
    pub fn transformed(&self, transform: &RigidTransform) -> Self {
        let mut out = self.clone();
        for g in &mut out.gaussians {
            *g = transform.apply_gaussian(g);
        }
        out
    }
}

/// A stored object id, a closed world-frame box over means, or every
/// gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    All,
    Object(String),
    Box { min: [f64; 3], max: [f64; 3] },
}

impl Selection {
    pub fn object(id: impl Into<String>) -> Self {
        Selection::Object(id.into())
    }

    pub fn aabb(min: [f64; 3], max: [f64; 3]) -> Self {
        Selection::Box { min, max }
    }

    pub fn all() -> Self {
        Selection::All
    }
}

/// Similarity transform `p ↦ scale · R p + t` (rigid when scale is 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RigidTransformRepr", into = "RigidTransformRepr")]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            scale: 1.0,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Rotation about world +z by `yaw`, then translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation,
        )
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v * self.scale
    }

    pub fn apply_gaussian(&self, g: &Gaussian) -> Gaussian {
        Gaussian {
            mean: self.apply_point(&g.mean),
            rotation: renormalize(self.rotation * g.rotation),
            scale: g.scale * self.scale,
            ..*g
        }
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        let scale = 1.0 / self.scale;
        Self {
            rotation,
            translation: -(rotation * self.translation) * scale,
            scale,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.apply_point(&other.translation),
            scale: self.scale * other.scale,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let q = self.rotation.quaternion();
        if (q.norm() - 1.0).abs() > UNIT_QUAT_TOL {
            return Err(SceneError::InvalidSelection(format!(
                "transform rotation norm {} is not unit",
                q.norm()
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(SceneError::InvalidSelection(format!(
                "transform scale {} must be positive",
                self.scale
            )));
        }
        Ok(())
    }
}

pub(crate) fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

#[derive(Serialize, Deserialize)]
struct RigidTransformRepr {
    /// (w, x, y, z)
    #[serde(default = "identity_wxyz")]
    rotation: [f64; 4],
    #[serde(default)]
    translation: [f64; 3],
    #[serde(default = "one")]
    scale: f64,
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn one() -> f64 {
    1.0
}

impl From<RigidTransformRepr> for RigidTransform {
    fn from(r: RigidTransformRepr) -> Self {
        let [w, x, y, z] = r.rotation;
        Self {
            rotation: quat_from_wxyz(w, x, y, z),
            translation: Vector3::from(r.translation),
            scale: r.scale,
        }
    }
}

impl From<RigidTransform> for RigidTransformRepr {
    fn from(t: RigidTransform) -> Self {
        Self {
            rotation: quat_to_wxyz(&t.rotation),
            translation: t.translation.into(),
            scale: t.scale,
        }
    }
}
