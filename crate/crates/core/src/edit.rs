//! World-frame edit operations over scene selections.
//!
//! Every operation takes the scene behind `&mut`, resolves and validates
//! everything first, and only then mutates, so a failed edit leaves the
//! scene untouched. Gaussians outside the resolved selection are never
//! written.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{EditError, SceneError};
use crate::scene::{quat_from_wxyz, renormalize, GaussianScene, RigidTransform, Selection};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditWarning {
    EmptySelection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditReport {
    pub touched: usize,
    pub warning: Option<EditWarning>,
}

impl EditReport {
    fn touched(n: usize) -> Self {
        Self {
            touched: n,
            warning: (n == 0).then_some(EditWarning::EmptySelection),
        }
    }
}

/// Scale factor: uniform, or per world axis about the selection centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleFactor {
    Uniform(f64),
    PerAxis([f64; 3]),
}

impl ScaleFactor {
    fn as_vector(&self) -> Vector3<f64> {
        match *self {
            ScaleFactor::Uniform(k) => Vector3::repeat(k),
            ScaleFactor::PerAxis(k) => Vector3::from(k),
        }
    }

    pub fn inverse(&self) -> Self {
        match *self {
            ScaleFactor::Uniform(k) => ScaleFactor::Uniform(1.0 / k),
            ScaleFactor::PerAxis([a, b, c]) => ScaleFactor::PerAxis([1.0 / a, 1.0 / b, 1.0 / c]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightingMode {
    Multiply,
    Replace,
}

pub fn translate(
    scene: &mut GaussianScene,
    selection: &Selection,
    delta: Vector3<f64>,
) -> Result<EditReport, EditError> {
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(EditError::Parameter("non-finite translation".into()));
    }
    let idx = scene.resolve_selection(selection)?;
    for &i in &idx {
        scene.gaussians[i].mean += delta;
    }
    Ok(EditReport::touched(idx.len()))
}

/// Rotates the selection about the centroid of its means.
pub fn rotate(
    scene: &mut GaussianScene,
    selection: &Selection,
    q: UnitQuaternion<f64>,
) -> Result<EditReport, EditError> {
    if q.coords.iter().any(|v| !v.is_finite()) {
        return Err(EditError::Parameter("non-finite rotation".into()));
    }
    let idx = scene.resolve_selection(selection)?;
    let Some(o) = scene.centroid(&idx) else {
        return Ok(EditReport::touched(0));
    };
    for &i in &idx {
        let g = &mut scene.gaussians[i];
        g.mean = o + q * (g.mean - o);
        g.rotation = renormalize(q * g.rotation);
    }
    Ok(EditReport::touched(idx.len()))
}

/// Scales the selection about the centroid of its means. Per-axis factors
/// act along world axes; the affected covariances are re-factored into a
/// rotation and per-axis scales.
pub fn scale(
    scene: &mut GaussianScene,
    selection: &Selection,
    factor: ScaleFactor,
) -> Result<EditReport, EditError> {
    let k = factor.as_vector();
    if k.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(EditError::Parameter(format!(
            "scale factors must be positive, got {:?}",
            k.as_slice()
        )));
    }
    let idx = scene.resolve_selection(selection)?;
    let Some(o) = scene.centroid(&idx) else {
        return Ok(EditReport::touched(0));
    };
    let uniform = k.x == k.y && k.y == k.z;
    let kmat = Matrix3::from_diagonal(&k);
    for &i in &idx {
        let g = &mut scene.gaussians[i];
        g.mean = o + k.component_mul(&(g.mean - o));
        if uniform {
            g.scale *= k.x;
        } else {
            let sigma = kmat * g.covariance() * kmat;
            let (rotation, s) = factor_covariance(&sigma);
            g.rotation = rotation;
            g.scale = s;
        }
    }
    Ok(EditReport::touched(idx.len()))
}

/// Splits an SPD matrix into a proper rotation and per-axis std devs.
fn factor_covariance(sigma: &Matrix3<f64>) -> (UnitQuaternion<f64>, Vector3<f64>) {
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut r = eig.eigenvectors;
    if r.determinant() < 0.0 {
        r.column_mut(2).neg_mut();
    }
    let s = eig.eigenvalues.map(|l| l.max(f64::MIN_POSITIVE).sqrt());
    let rot = Rotation3::from_matrix_unchecked(r);
    (UnitQuaternion::from_rotation_matrix(&rot), s)
}

/// Clones the selection; the clones are appended in index order and
/// registered under a fresh object id, which is returned.
pub fn duplicate(
    scene: &mut GaussianScene,
    selection: &Selection,
    name: Option<&str>,
) -> Result<String, EditError> {
    let idx = scene.resolve_selection(selection)?;
    if idx.is_empty() {
        return Err(EditError::EmptySelection);
    }
    let base = match (name, selection) {
        (Some(n), _) => n.to_string(),
        (None, Selection::Object(id)) => format!("{id}_copy"),
        (None, Selection::Box { .. } | Selection::All) => "selection_copy".to_string(),
    };
    let start = scene.len();
    scene.gaussians.reserve(idx.len());
    for &i in &idx {
        let g = scene.gaussians[i];
        scene.gaussians.push(g);
    }
    Ok(scene.insert_object(&base, start..start + idx.len()))
}

/// Removes the selected gaussians and re-indexes every object set.
/// Objects left empty are dropped.
pub fn delete(scene: &mut GaussianScene, selection: &Selection) -> Result<EditReport, EditError> {
    let idx = scene.resolve_selection(selection)?;
    if idx.is_empty() {
        return Ok(EditReport::touched(0));
    }
    let mut remap: Vec<Option<usize>> = vec![Some(0); scene.len()];
    for &i in &idx {
        remap[i] = None;
    }
    let mut next = 0;
    for slot in remap.iter_mut() {
        if slot.is_some() {
            *slot = Some(next);
            next += 1;
        }
    }
    let mut k = 0;
    scene.gaussians.retain(|_| {
        let keep = remap[k].is_some();
        k += 1;
        keep
    });
    for set in scene.objects.values_mut() {
        *set = set.iter().filter_map(|&i| remap[i]).collect();
    }
    scene.objects.retain(|_, set| !set.is_empty());
    Ok(EditReport::touched(idx.len()))
}

/// Multiplies (then clamps) or replaces the selection's colors.
pub fn lighting(
    scene: &mut GaussianScene,
    selection: &Selection,
    mode: LightingMode,
    rgb: Vector3<f64>,
) -> Result<EditReport, EditError> {
    let ok = match mode {
        LightingMode::Multiply => rgb.iter().all(|&c| c >= 0.0 && c.is_finite()),
        LightingMode::Replace => rgb.iter().all(|&c| (0.0..=1.0).contains(&c)),
    };
    if !ok {
        return Err(EditError::Parameter(format!(
            "lighting {mode:?} value {:?} out of range",
            rgb.as_slice()
        )));
    }
    let idx = scene.resolve_selection(selection)?;
    for &i in &idx {
        let c = &mut scene.gaussians[i].color;
        *c = match mode {
            LightingMode::Multiply => c.component_mul(&rgb).map(|v| v.clamp(0.0, 1.0)),
            LightingMode::Replace => rgb,
        };
    }
    Ok(EditReport::touched(idx.len()))
}

/// Inserts the selected gaussians of `foreign`, transformed by `pose`, and
/// registers them under `name` (suffixed on collision).
pub fn add(
    scene: &mut GaussianScene,
    foreign: &GaussianScene,
    foreign_selection: &Selection,
    pose: &RigidTransform,
    name: &str,
) -> Result<String, EditError> {
    pose.validate()?;
    let idx = foreign.resolve_selection(foreign_selection)?;
    let start = scene.len();
    scene.gaussians.reserve(idx.len());
    for &i in &idx {
        scene.gaussians.push(pose.apply_gaussian(&foreign.gaussians[i]));
    }
    Ok(scene.insert_object(name, start..start + idx.len()))
}

/// Rotation parameter of a scripted edit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RotationSpec {
    /// (w, x, y, z), normalised on use
    Quaternion { quaternion: [f64; 4] },
    AxisAngle { axis: [f64; 3], angle: f64 },
}

impl RotationSpec {
    pub fn to_quaternion(&self) -> Result<UnitQuaternion<f64>, EditError> {
        match *self {
            RotationSpec::Quaternion { quaternion: [w, x, y, z] } => {
                let n = (w * w + x * x + y * y + z * z).sqrt();
                if !(n > 0.0 && n.is_finite()) {
                    return Err(EditError::Parameter("degenerate quaternion".into()));
                }
                Ok(quat_from_wxyz(w, x, y, z))
            }
            RotationSpec::AxisAngle { axis, angle } => {
                let a = Vector3::from(axis);
                if !(a.norm() > 0.0) || !angle.is_finite() {
                    return Err(EditError::Parameter("degenerate rotation axis".into()));
                }
                Ok(UnitQuaternion::from_axis_angle(
                    &nalgebra::Unit::new_normalize(a),
                    angle,
                ))
            }
        }
    }
}

/// One record of a JSON edit script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    /// `source` is a PLY path (relative to the script) or
    /// `primitive:square_gate` / `primitive:circular_gate`.
    Add {
        source: String,
        #[serde(default = "Selection::all")]
        source_selection: Selection,
        #[serde(default)]
        pose: RigidTransform,
        name: String,
    },
    Translate {
        selection: Selection,
        delta: [f64; 3],
    },
    Rotate {
        selection: Selection,
        rotation: RotationSpec,
    },
    Scale {
        selection: Selection,
        factor: ScaleFactor,
    },
    Duplicate {
        selection: Selection,
        #[serde(default)]
        name: Option<String>,
    },
    Delete {
        selection: Selection,
    },
    Lighting {
        selection: Selection,
        mode: LightingMode,
        rgb: [f64; 3],
    },
}

/// Applies a script in order. Stops at the first failing op and reports
/// its position; earlier ops stay applied.
pub fn apply_script(
    scene: &mut GaussianScene,
    ops: &[EditOp],
    base_dir: &Path,
) -> Result<Vec<EditReport>, (usize, EditError)> {
    let mut reports = Vec::with_capacity(ops.len());
    for (k, op) in ops.iter().enumerate() {
        let r = apply_op(scene, op, base_dir).map_err(|e| (k, e))?;
        reports.push(r);
    }
    Ok(reports)
}

pub fn apply_op(
    scene: &mut GaussianScene,
    op: &EditOp,
    base_dir: &Path,
) -> Result<EditReport, EditError> {
    match op {
        EditOp::Add {
            source,
            source_selection,
            pose,
            name,
        } => {
            let foreign = load_source(source, base_dir)?;
            let before = scene.len();
            add(scene, &foreign, source_selection, pose, name)?;
            Ok(EditReport::touched(scene.len() - before))
        }
        EditOp::Translate { selection, delta } => {
            translate(scene, selection, Vector3::from(*delta))
        }
        EditOp::Rotate {
            selection,
            rotation,
        } => rotate(scene, selection, rotation.to_quaternion()?),
        EditOp::Scale { selection, factor } => scale(scene, selection, *factor),
        EditOp::Duplicate { selection, name } => {
            let before = scene.len();
            duplicate(scene, selection, name.as_deref())?;
            Ok(EditReport::touched(scene.len() - before))
        }
        EditOp::Delete { selection } => delete(scene, selection),
        EditOp::Lighting {
            selection,
            mode,
            rgb,
        } => lighting(scene, selection, *mode, Vector3::from(*rgb)),
    }
}

fn load_source(source: &str, base_dir: &Path) -> Result<GaussianScene, EditError> {
    use crate::primitives::{gate_primitive, GATE_OBJECT};
    use crate::tracks::GateShape;
    let prim = |shape| {
        let mut s = gate_primitive(&shape, None);
        s.objects.clear();
        s.insert_object(GATE_OBJECT, 0..s.len());
        s
    };
    match source {
        "primitive:square_gate" => Ok(prim(GateShape::Square { inner_side: 2.0 })),
        "primitive:circular_gate" => Ok(prim(GateShape::Circular {
            inner_diameter: 0.78,
        })),
        path => {
            let p: PathBuf = base_dir.join(path);
            Ok(crate::ply::read_scene_file(&p).map_err(|e| match e {
                SceneError::Io(io) => EditError::Parameter(format!("{}: {io}", p.display())),
                other => EditError::Scene(other),
            })?)
        }
    }
}
