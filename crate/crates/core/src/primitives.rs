//! Gaussian stand-ins for gates and the arena floor, so tracks can be
//! rendered as RGB scenes and built with edit scripts.

use std::f64::consts::TAU;

use nalgebra::Vector3;

use crate::scene::{Gaussian, GaussianScene};
use crate::tracks::{Aabb, GateShape, Track, CIRCULAR_GATE_RING_WIDTH, SQUARE_GATE_RING_WIDTH};

pub const GATE_OBJECT: &str = "gate";
pub const GROUND_OBJECT: &str = "ground";

const GATE_COLOR: [f64; 3] = [0.95, 0.45, 0.1];

pub fn default_ring_width(shape: &GateShape) -> f64 {
    match shape {
        GateShape::Square { .. } => SQUARE_GATE_RING_WIDTH,
        GateShape::Circular { .. } => CIRCULAR_GATE_RING_WIDTH,
    }
}

/// A ring of isotropic gaussians along the middle of the gate solid, centred
/// on the origin with its normal along +x. The centroid is the gate centre.
pub fn gate_primitive(shape: &GateShape, ring_width: Option<f64>) -> GaussianScene {
    let w = ring_width.unwrap_or_else(|| default_ring_width(shape));
    let mid = shape.inner_half_extent() + 0.5 * w;
    let sigma = w / 3.0;
    let color = Vector3::from(GATE_COLOR);
    let mut pts = Vec::new();
    match shape {
        GateShape::Square { .. } => {
            let per_side = ((2.0 * mid / sigma).ceil() as usize).max(2);
            let step = 2.0 * mid / per_side as f64;
            for j in 0..per_side {
                let s = -mid + (j as f64 + 0.5) * step;
                pts.push((s, -mid));
                pts.push((mid, s));
                pts.push((-s, mid));
                pts.push((-mid, -s));
            }
        }
        GateShape::Circular { .. } => {
            // a multiple of 4 keeps the set symmetric under both axis flips
            let n = (((TAU * mid / sigma).ceil() as usize).div_ceil(4) * 4).max(8);
            for j in 0..n {
                let a = TAU * j as f64 / n as f64;
                pts.push((mid * a.cos(), mid * a.sin()));
            }
        }
    }
    let gaussians: Vec<Gaussian> = pts
        .into_iter()
        .map(|(a, b)| Gaussian::isotropic(Vector3::new(0.0, a, b), sigma, color, 0.95))
        .collect();
    let mut scene = GaussianScene::new(gaussians);
    let n = scene.len();
    scene.insert_object(GATE_OBJECT, 0..n);
    scene
}

/// Flat checkerboard of gaussians covering the arena floor.
pub fn ground_plane(arena: &Aabb, spacing: f64) -> GaussianScene {
    let nx = ((arena.max[0] - arena.min[0]) / spacing).ceil().max(1.0) as usize;
    let ny = ((arena.max[1] - arena.min[1]) / spacing).ceil().max(1.0) as usize;
    let mut gaussians = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let shade = if (i + j) % 2 == 0 { 0.35 } else { 0.55 };
            let mut g = Gaussian::isotropic(
                Vector3::new(
                    arena.min[0] + (i as f64 + 0.5) * spacing,
                    arena.min[1] + (j as f64 + 0.5) * spacing,
                    arena.min[2],
                ),
                spacing / 2.0,
                Vector3::new(shade, shade + 0.05, shade),
                1.0,
            );
            g.scale.z = spacing / 50.0;
            gaussians.push(g);
        }
    }
    let mut scene = GaussianScene::new(gaussians);
    let n = scene.len();
    scene.insert_object(GROUND_OBJECT, 0..n);
    scene
}

/// Floor plus one gate object per gate (`gate_0`, `gate_1`, ...) at time `t`.
pub fn track_scene(track: &Track, t: f64) -> GaussianScene {
    let mut scene = ground_plane(&track.arena, 1.0);
    for (i, gate) in track.gates.iter().enumerate() {
        let prim = gate_primitive(&gate.shape, Some(gate.ring_width));
        let pose = gate.transform_at(t);
        let start = scene.len();
        scene
            .gaussians
            .extend(prim.gaussians.iter().map(|g| pose.apply_gaussian(g)));
        let end = scene.len();
        scene.insert_object(&format!("{GATE_OBJECT}_{i}"), start..end);
    }
    scene
}

/// Gate centre recovered from an edited scene object.
pub fn gate_center_from_object(scene: &GaussianScene, id: &str) -> Option<Vector3<f64>> {
    let idx: Vec<usize> = scene.objects.get(id)?.iter().copied().collect();
    scene.centroid(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracks::GatePose;

    #[test]
    fn primitives_are_centred_rings() {
        for shape in [
            GateShape::Square { inner_side: 2.0 },
            GateShape::Circular {
                inner_diameter: 0.78,
            },
        ] {
            let s = gate_primitive(&shape, None);
            s.validate().unwrap();
            let c = gate_center_from_object(&s, GATE_OBJECT).unwrap();
            assert!(c.norm() < 1e-12, "{c}");
            let w = default_ring_width(&shape);
            for g in &s.gaussians {
                assert_eq!(g.mean.x, 0.0);
                assert!(shape.on_ring(g.mean.y, g.mean.z, w));
            }
        }
    }

    #[test]
    fn track_scene_objects_follow_gates() {
        let track = crate::tracks::LayoutTemplate::quad().track(
            &crate::tracks::TwoGateLayout::from_gates(
                &GatePose::new(Vector3::new(2.0, 3.0, 1.0), 0.3),
                &GatePose::new(Vector3::new(4.0, 2.0, 1.5), -0.2),
            ),
        );
        let s = track_scene(&track, 0.0);
        s.validate().unwrap();
        for (i, g) in track.gates.iter().enumerate() {
            let c = gate_center_from_object(&s, &format!("gate_{i}")).unwrap();
            assert!((c - g.pose.center()).norm() < 1e-9);
        }
    }
}
