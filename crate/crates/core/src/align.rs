//! Least-squares alignment of a reconstruction frame to the metric world
//! frame from point correspondences (Kabsch, with Umeyama's optional scale).

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::error::SceneError;
use crate::scene::{GaussianScene, RigidTransform};

/// Relative singular-value floor below which the centred source points are
/// treated as collinear.
const RANK_TOL: f64 = 1e-9;

/// Finds `T` minimising Σ‖T(pᵢ) − qᵢ‖². With `estimate_scale` the uniform
/// scale is solved too; otherwise `T` is rigid.
pub fn kabsch_umeyama(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    estimate_scale: bool,
) -> Result<RigidTransform, SceneError> {
    if pairs.len() < 3 {
        return Err(SceneError::RankDeficient(format!(
            "need at least 3 correspondences, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let src_c = pairs.iter().fold(Vector3::zeros(), |a, (p, _)| a + p) / n;
    let dst_c = pairs.iter().fold(Vector3::zeros(), |a, (_, q)| a + q) / n;

    let mut cross = Matrix3::zeros();
    let mut src_scatter = Matrix3::zeros();
    let mut src_var = 0.0;
    for (p, q) in pairs {
        let a = p - src_c;
        let b = q - dst_c;
        cross += b * a.transpose();
        src_scatter += a * a.transpose();
        src_var += a.norm_squared();
    }
    cross /= n;
    src_var /= n;

    let mut sv: Vec<f64> = src_scatter.symmetric_eigenvalues().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= RANK_TOL * sv[0] {
        return Err(SceneError::RankDeficient(
            "source points are coincident or collinear".into(),
        ));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let d = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = u * fix * v_t;

    let scale = if estimate_scale {
        // SVD::new sorts singular values descending, so the reflection fix
        // lands on the smallest one
        let sigma = svd.singular_values;
        (sigma[0] + sigma[1] + d * sigma[2]) / src_var
    } else {
        1.0
    };

    let rotation =
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let translation = dst_c - rotation * src_c * scale;
    Ok(RigidTransform {
        rotation,
        translation,
        scale,
    })
}

/// Maps a scene into the world frame given marker correspondences.
/// Returns the transformed scene and the transform used.
pub fn align_to_world(
    scene: &GaussianScene,
    correspondences: &[(Vector3<f64>, Vector3<f64>)],
    estimate_scale: bool,
) -> Result<(GaussianScene, RigidTransform), SceneError> {
    let t = kabsch_umeyama(correspondences, estimate_scale)?;
    Ok((scene.transformed(&t), t))
}

/// Root-mean-square residual of `t` over the correspondences.
pub fn rms_residual(t: &RigidTransform, pairs: &[(Vector3<f64>, Vector3<f64>)]) -> f64 {
    let ss: f64 = pairs
        .iter()
        .map(|(p, q)| (t.apply_point(p) - q).norm_squared())
        .sum();
    (ss / pairs.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn pts() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::new(1.0, 1.0, 1.0),
        ]
    }

    #[test]
    fn identity_for_coincident_points() {
        let pairs: Vec<_> = pts().into_iter().map(|p| (p, p)).collect();
        let t = kabsch_umeyama(&pairs, false).unwrap();
        assert!(t.rotation.angle() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_quarter_turn_and_shift() {
        let truth = RigidTransform::from_yaw(FRAC_PI_2, Vector3::new(1.0, 0.0, 0.0));
        let pairs: Vec<_> = pts().into_iter().map(|p| (p, truth.apply_point(&p))).collect();
        let t = kabsch_umeyama(&pairs, false).unwrap();
        assert!(t.rotation.angle_to(&truth.rotation) < 1e-9);
        assert!((t.translation - truth.translation).norm() < 1e-9);
    }

    #[test]
    fn recovers_scale_and_handles_reflection_case() {
        let truth = RigidTransform {
            rotation: UnitQuaternion::from_euler_angles(2.5, -0.4, 3.0),
            translation: Vector3::new(-3.0, 4.0, 0.25),
            scale: 2.5,
        };
        let pairs: Vec<_> = pts().into_iter().map(|p| (p, truth.apply_point(&p))).collect();
        let t = kabsch_umeyama(&pairs, true).unwrap();
        assert!((t.scale - 2.5).abs() < 1e-9, "scale {}", t.scale);
        assert!(t.rotation.angle_to(&truth.rotation) < 1e-9);
        assert!(rms_residual(&t, &pairs) < 1e-9);
    }

    #[test]
    fn collinear_is_rank_deficient() {
        let pairs: Vec<_> = (0..5)
            .map(|i| {
                let p = Vector3::new(i as f64, 2.0 * i as f64, 0.0);
                (p, p)
            })
            .collect();
        assert!(matches!(
            kabsch_umeyama(&pairs, false),
            Err(SceneError::RankDeficient(_))
        ));
        assert!(kabsch_umeyama(&pairs[..2], false).is_err());
    }
}
