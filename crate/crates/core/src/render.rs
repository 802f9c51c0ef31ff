//! Software splat rasteriser and analytic gate masks.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::image::{Mask, RgbImage};
use crate::scene::{Gaussian, GaussianScene};
use crate::tracks::{Gate, GatePose, GateShape};

pub const ZNEAR: f64 = 0.05;
/// Screen-space dilation added to every projected covariance, px².
pub const DILATION: f64 = 0.3;
pub const ALPHA_CAP: f64 = 0.99;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

/// Projects one gaussian; `None` when it sits in front of the near plane.
pub fn project_gaussian(
    gaussian: &Gaussian,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
) -> Option<Splat> {
    let p = pose.to_camera(&gaussian.mean);
    if p.z <= ZNEAR {
        return None;
    }
    let w = pose.rotation_matrix();
    let (fx, fy) = (intrinsics.fx, intrinsics.fy);
    let iz = 1.0 / p.z;
    let j = Matrix2x3::new(
        fx * iz,
        0.0,
        -fx * p.x * iz * iz,
        0.0,
        fy * iz,
        -fy * p.y * iz * iz,
    );
    let cov_cam: Matrix3<f64> = w * gaussian.covariance() * w.transpose();
    let mut cov2d = j * cov_cam * j.transpose();
    // symmetrise against round-off before dilation
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    cov2d += Matrix2::identity() * DILATION;
    Some(Splat {
        mean2d: intrinsics.project(&p),
        cov2d,
        depth: p.z,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub culled: usize,
    /// Gaussians dropped because their screen covariance was ill-conditioned.
    pub skipped_singular: usize,
}

struct Prepared {
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    depth: f64,
    index: usize,
    color: Vector3<f64>,
    opacity: f64,
    radius: f64,
}

fn eigen_2x2(m: &Matrix2<f64>) -> (f64, f64) {
    let tr = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = (tr * tr - det).max(0.0).sqrt();
    (tr - disc, tr + disc)
}

pub fn render_rgb(
    scene: &GaussianScene,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    background: [f64; 3],
) -> RgbImage {
    render_rgb_with_stats(scene, pose, intrinsics, background).0
}

/// Front-to-back alpha compositing of every gaussian.
pub fn render_rgb_with_stats(
    scene: &GaussianScene,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    background: [f64; 3],
) -> (RgbImage, RenderStats) {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut stats = RenderStats::default();
    let mut splats = Vec::with_capacity(scene.len());
    for (index, g) in scene.gaussians.iter().enumerate() {
        let Some(s) = project_gaussian(g, pose, intrinsics) else {
            stats.culled += 1;
            continue;
        };
        let (lo, hi) = eigen_2x2(&s.cov2d);
        if !(lo > 0.0) || hi / lo > MAX_CONDITION {
            stats.skipped_singular += 1;
            continue;
        }
        let Some(conic) = s.cov2d.try_inverse() else {
            stats.skipped_singular += 1;
            continue;
        };
        splats.push(Prepared {
            mean: s.mean2d,
            conic,
            depth: s.depth,
            index,
            color: g.color,
            opacity: g.opacity,
            radius: 3.0 * hi.sqrt(),
        });
    }
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let mut accum = vec![Vector3::<f64>::zeros(); w * h];
    let mut trans = vec![1.0f64; w * h];
    for s in &splats {
        let x0 = (s.mean.x - s.radius).ceil().max(0.0);
        let x1 = (s.mean.x + s.radius).floor().min(w as f64 - 1.0);
        let y0 = (s.mean.y - s.radius).ceil().max(0.0);
        let y1 = (s.mean.y + s.radius).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let i = y * w + x;
                let t = trans[i];
                if t < MIN_TRANSMITTANCE {
                    continue;
                }
                let d = Vector2::new(x as f64, y as f64) - s.mean;
                let q = d.dot(&(s.conic * d));
                let alpha = (s.opacity * (-0.5 * q).exp()).min(ALPHA_CAP);
                accum[i] += s.color * (alpha * t);
                trans[i] = t * (1.0 - alpha);
            }
        }
    }

    let mut img = RgbImage::filled(w, h, [0, 0, 0]);
    for i in 0..w * h {
        for c in 0..3 {
            let v = accum[i][c] + background[c] * trans[i];
            img.data[3 * i + c] = to_u8(v);
        }
    }
    (img, stats)
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-gate plane-to-camera map. Column 0 maps the gate centre, columns 1
/// and 2 its in-plane axes, into camera coordinates; a pixel ray `r` hits
/// the plane at `(a, b)` with depth `λ` iff `M (1, a, b)ᵀ = λ r`.
struct GateProjector {
    m_inv: Matrix3<f64>,
    shape: GateShape,
    ring_width: f64,
}

impl GateProjector {
    fn new(shape: GateShape, ring_width: f64, gate: &GatePose, pose: &CameraPose) -> Option<Self> {
        let r = pose.rotation_matrix();
        let c = pose.to_camera(&gate.center());
        let ea = r * gate.lateral();
        let eb = r * Vector3::z();
        let m = Matrix3::from_columns(&[c, ea, eb]);
        // an edge-on gate plane passes through the camera centre
        if m.determinant().abs() <= 1e-12 * c.norm().max(1e-300) {
            return None;
        }
        Some(Self {
            m_inv: m.try_inverse()?,
            shape,
            ring_width,
        })
    }

    /// Depth of the ray's hit on the ring, if any.
    #[inline]
    fn hit(&self, ray: &Vector3<f64>) -> Option<f64> {
        let y = self.m_inv * ray;
        if !(y[0] > 0.0) {
            return None;
        }
        let (a, b) = (y[1] / y[0], y[2] / y[0]);
        self.shape
            .on_ring(a, b, self.ring_width)
            .then_some(1.0 / y[0])
    }
}

/// Index of the nearest gate whose ring covers each pixel, row-major.
pub fn render_gate_labels(
    gates: &[Gate],
    t: f64,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
) -> Vec<Option<usize>> {
    let projectors: Vec<(usize, GateProjector)> = gates
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            GateProjector::new(g.shape, g.ring_width, &g.pose_at(t), pose).map(|p| (i, p))
        })
        .collect();
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut labels = vec![None; w * h];
    if projectors.is_empty() {
        return labels;
    }
    for v in 0..h {
        for u in 0..w {
            let ray = intrinsics.ray(u as f64, v as f64);
            let mut best: Option<(f64, usize)> = None;
            for (i, p) in &projectors {
                if let Some(depth) = p.hit(&ray) {
                    if best.is_none_or(|(d, _)| depth < d) {
                        best = Some((depth, *i));
                    }
                }
            }
            labels[v * w + u] = best.map(|(_, i)| i);
        }
    }
    labels
}

/// White where a pixel's ray hits some gate's ring at positive depth.
pub fn render_gate_mask(
    gates: &[Gate],
    t: f64,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
) -> Mask {
    let labels = render_gate_labels(gates, t, pose, intrinsics);
    let mut mask = Mask::new(intrinsics.width, intrinsics.height);
    for (px, l) in mask.data.iter_mut().zip(&labels) {
        if l.is_some() {
            *px = 255;
        }
    }
    mask
}
