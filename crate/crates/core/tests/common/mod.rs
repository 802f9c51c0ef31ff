#![allow(dead_code)]

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use splatgym::{Gaussian, GaussianScene, Selection};

pub fn random_rotation<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let q = nalgebra::Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if q.norm() > 1e-3 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

pub fn random_vec<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    )
}

pub fn random_gaussian<R: Rng>(rng: &mut R) -> Gaussian {
    Gaussian::new(
        random_vec(rng, -5.0, 5.0),
        random_rotation(rng),
        random_vec(rng, 0.01, 0.5),
        random_vec(rng, 0.0, 1.0),
        rng.random_range(0.05..1.0),
    )
}

/// A scene of 1..=max_len gaussians with up to three overlapping,
/// non-empty objects.
pub fn random_scene<R: Rng>(rng: &mut R, max_len: usize) -> GaussianScene {
    let n = rng.random_range(1..=max_len);
    let mut scene = GaussianScene::new((0..n).map(|_| random_gaussian(rng)).collect());
    for k in 0..rng.random_range(0..=3) {
        let p = rng.random_range(0.1..0.9);
        let members: Vec<usize> = (0..n).filter(|_| rng.random_bool(p)).collect();
        if members.is_empty() {
            continue;
        }
        scene.insert_object(&format!("obj{k}"), members);
    }
    scene
}

/// Any of the three selection kinds, valid for `scene`.
pub fn random_selection<R: Rng>(rng: &mut R, scene: &GaussianScene) -> Selection {
    match rng.random_range(0..3) {
        0 => Selection::All,
        1 if !scene.objects.is_empty() => {
            let k = rng.random_range(0..scene.objects.len());
            Selection::Object(scene.objects.keys().nth(k).unwrap().clone())
        }
        _ => {
            let a = random_vec(rng, -5.0, 5.0);
            let b = random_vec(rng, -5.0, 5.0);
            Selection::aabb(a.inf(&b).into(), a.sup(&b).into())
        }
    }
}

/// Freezes a selection into an object so it survives edits that move
/// gaussians across box boundaries.
pub fn pin_selection(scene: &mut GaussianScene, selection: &Selection) -> (Selection, Vec<usize>) {
    let idx = scene.resolve_selection(selection).unwrap();
    let id = scene.insert_object("pinned", idx.iter().copied());
    (Selection::Object(id), idx)
}

pub fn bits(g: &Gaussian) -> Vec<u64> {
    g.mean
        .iter()
        .chain(g.rotation.coords.iter())
        .chain(g.scale.iter())
        .chain(g.color.iter())
        .chain(std::iter::once(&g.opacity))
        .map(|v| v.to_bits())
        .collect()
}

/// Gaussians outside `selected` are bit-identical between the scenes.
pub fn unselected_identical(a: &GaussianScene, b: &GaussianScene, selected: &[usize]) -> bool {
    a.len() == b.len()
        && (0..a.len())
            .filter(|i| selected.binary_search(i).is_err())
            .all(|i| bits(&a.gaussians[i]) == bits(&b.gaussians[i]))
}

fn mat_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).amax()
}

/// Largest difference in mean, covariance, color or opacity.
pub fn max_deviation(a: &GaussianScene, b: &GaussianScene) -> f64 {
    assert_eq!(a.len(), b.len());
    a.gaussians
        .iter()
        .zip(&b.gaussians)
        .map(|(x, y)| {
            (x.mean - y.mean)
                .amax()
                .max(mat_diff(&x.covariance(), &y.covariance()))
                .max((x.color - y.color).amax())
                .max((x.opacity - y.opacity).abs())
        })
        .fold(0.0, f64::max)
}

/// Largest difference in the rotation matrices.
pub fn max_rotation_deviation(a: &GaussianScene, b: &GaussianScene) -> f64 {
    a.gaussians
        .iter()
        .zip(&b.gaussians)
        .map(|(x, y)| {
            mat_diff(
                x.rotation.to_rotation_matrix().matrix(),
                y.rotation.to_rotation_matrix().matrix(),
            )
        })
        .fold(0.0, f64::max)
}
