//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use splatgym::align::{kabsch_umeyama, rms_residual};
use splatgym::camera::{CameraIntrinsics, CameraPose};
use splatgym::dynamics::{step_uav, UavControl, UavParams, UavState};
use splatgym::edit::{delete, duplicate, rotate, scale, translate, ScaleFactor};
use splatgym::harness::{
    cmd_edit_scene, cmd_evaluate, cmd_export_dataset, cmd_perturb, cmd_pgr, cmd_render,
    perturb_level, pgr_compare, reference_track, reference_track_names, run_trials, spearman,
    ExperimentSpec, PolicyKind,
};
use splatgym::image::{Mask, RgbImage};
use splatgym::pgr::{resample, weights, GridPartition};
use splatgym::ply::{load_scene, save_scene_as, PlyEncoding};
use splatgym::primitives::track_scene;
use splatgym::render::{render_gate_mask, render_rgb};
use splatgym::seed::rng_for;
use splatgym::sim::metrics;
use splatgym::tracks::{Gate, GatePose, GateShape, Platform};
use splatgym::{GaussianScene, RigidTransform, Selection};

use common::*;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

fn edit_algebra() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for case in 0..1000u64 {
        let mut rng = rng_for(&[1, case]);
        let mut scene = random_scene(&mut rng, 40);
        let raw = random_selection(&mut rng, &scene);
        let (sel, idx) = pin_selection(&mut scene, &raw);
        let orig = scene.clone();

        let delta = random_vec(&mut rng, -3.0, 3.0);
        let mut s = orig.clone();
        translate(&mut s, &sel, delta).unwrap();
        let untouched = unselected_identical(&s, &orig, &idx);
        translate(&mut s, &sel, -delta).unwrap();
        let e_t = max_deviation(&s, &orig);

        let q = random_rotation(&mut rng);
        let mut s = orig.clone();
        rotate(&mut s, &sel, q).unwrap();
        let untouched = untouched && unselected_identical(&s, &orig, &idx);
        rotate(&mut s, &sel, q.inverse()).unwrap();
        let e_r = max_deviation(&s, &orig).max(max_rotation_deviation(&s, &orig));

        let k = if rng.random_bool(0.5) {
            ScaleFactor::Uniform(rng.random_range(0.2..5.0))
        } else {
            ScaleFactor::PerAxis(random_vec(&mut rng, 0.2, 5.0).into())
        };
        let mut s = orig.clone();
        scale(&mut s, &sel, k).unwrap();
        let untouched = untouched && unselected_identical(&s, &orig, &idx);
        scale(&mut s, &sel, k.inverse()).unwrap();
        let e_s = max_deviation(&s, &orig);

        let mut s = orig.clone();
        let id = duplicate(&mut s, &sel, None).unwrap_or_default();
        let dup_ok = if idx.is_empty() {
            s == orig
        } else {
            s.len() == orig.len() + idx.len()
                && s.objects[&id].len() == idx.len()
                && idx
                    .iter()
                    .enumerate()
                    .all(|(j, &i)| bits(&s.gaussians[orig.len() + j]) == bits(&orig.gaussians[i]))
                && s.gaussians[..orig.len()] == orig.gaussians[..]
        };

        let mut s = orig.clone();
        delete(&mut s, &sel).unwrap();
        let kept: Vec<_> = (0..orig.len())
            .filter(|i| idx.binary_search(i).is_err())
            .map(|i| bits(&orig.gaussians[i]))
            .collect();
        let del_ok = s.len() + idx.len() == orig.len()
            && s.gaussians.iter().map(bits).collect::<Vec<_>>() == kept;

        let e = e_t.max(e_r).max(e_s);
        worst = worst.max(e);
        if e >= 1e-9 || !untouched || !dup_ok || !del_ok {
            failures.push(case);
        }
    }
    let elapsed = start.elapsed();
    check(
        failures.is_empty() && within(elapsed, 30.0),
        format!(
            "1000 scenes, worst inverse deviation {worst:.2e}, failing cases {failures:?}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn edit_performance() -> Verdict {
    let mut rng = rng_for(&[2]);
    let mut scene = GaussianScene::new((0..100_000).map(|_| random_gaussian(&mut rng)).collect());
    scene.insert_object("all", 0..100_000);
    let sel = Selection::object("all");
    let mut times: Vec<f64> = (0..7)
        .map(|k| {
            let d = Vector3::new(0.01, -0.02, 0.03) * if k % 2 == 0 { 1.0 } else { -1.0 };
            let t = Instant::now();
            let r = translate(&mut scene, &sel, d).unwrap();
            let dt = t.elapsed().as_secs_f64();
            assert_eq!(r.touched, 100_000);
            dt
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    check(
        median <= 0.010,
        format!("translate of 100k selected gaussians: median {:.2} ms over 7 runs", median * 1e3),
    )
}

/// Ring membership of the world-space ray through continuous pixel (u, v).
fn ray_hits_ring(gate: &Gate, pose: &CameraPose, k: &CameraIntrinsics, u: f64, v: f64) -> bool {
    let origin = pose.center();
    let dir_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    let dir = pose.rotation_matrix().transpose() * dir_cam;
    let c = gate.pose.center();
    let n = Vector3::new(gate.pose.yaw.cos(), gate.pose.yaw.sin(), 0.0);
    let denom = dir.dot(&n);
    if denom.abs() < 1e-12 {
        return false;
    }
    let s = (c - origin).dot(&n) / denom;
    if s <= 0.0 {
        return false;
    }
    let d = origin + dir * s - c;
    let a = d.dot(&Vector3::new(-gate.pose.yaw.sin(), gate.pose.yaw.cos(), 0.0));
    let b = d.z;
    let (m, inner) = match gate.shape {
        GateShape::Square { inner_side } => (a.abs().max(b.abs()), inner_side / 2.0),
        GateShape::Circular { inner_diameter } => ((a * a + b * b).sqrt(), inner_diameter / 2.0),
    };
    m >= inner && m <= inner + gate.ring_width
}

fn mask_oracle() -> Verdict {
    let start = Instant::now();
    let k = CameraIntrinsics::default();
    let (mut agree, mut total, mut far_disagree, mut visible) = (0usize, 0usize, 0usize, 0usize);
    for case in 0..100u64 {
        let mut rng = rng_for(&[3, case]);
        let cam_pos = random_vec(&mut rng, -5.0, 5.0);
        let yaw = rng.random_range(-3.1..3.1);
        let pitch = rng.random_range(-0.4..0.4);
        let roll = rng.random_range(-0.4..0.4);
        let pose = CameraPose::from_body(cam_pos, roll, pitch, yaw);
        let square = rng.random_bool(0.5);
        let dist = if square { rng.random_range(2.0..15.0) } else { rng.random_range(1.0..6.0) };
        let bearing = yaw + rng.random_range(-0.6..0.6);
        let elev = pitch + rng.random_range(-0.4..0.4);
        let centre = cam_pos
            + dist * Vector3::new(bearing.cos() * elev.cos(), bearing.sin() * elev.cos(), elev.sin());
        let gate_pose = GatePose::new(centre, bearing + std::f64::consts::PI + rng.random_range(-1.2..1.2));
        let gate = if square { Gate::square(gate_pose) } else { Gate::circular(gate_pose) };

        let mask = render_gate_mask(std::slice::from_ref(&gate), 0.0, &pose, &k);
        let mut any = false;
        for v in 0..k.height {
            for u in 0..k.width {
                let oracle = ray_hits_ring(&gate, &pose, &k, u as f64, v as f64);
                any |= oracle;
                total += 1;
                if oracle == mask.get(u, v) {
                    agree += 1;
                    continue;
                }
                let steps = [-1.0, -0.5, 0.0, 0.5, 1.0];
                let near: Vec<bool> = steps
                    .iter()
                    .flat_map(|&du| steps.iter().map(move |&dv| (du, dv)))
                    .map(|(du, dv)| ray_hits_ring(&gate, &pose, &k, u as f64 + du, v as f64 + dv))
                    .collect();
                if near.iter().all(|&x| x) || near.iter().all(|&x| !x) {
                    far_disagree += 1;
                }
            }
        }
        visible += any as usize;
    }
    let rate = agree as f64 / total as f64;
    let elapsed = start.elapsed();
    check(
        rate >= 0.99 && far_disagree == 0 && visible >= 90 && within(elapsed, 120.0),
        format!(
            "agreement {:.4}% over 100 pairs ({visible} with ring pixels), {} off-boundary disagreements, {:.2} s",
            rate * 100.0,
            far_disagree,
            elapsed.as_secs_f64()
        ),
    )
}

fn kabsch() -> Verdict {
    let mut worst_exact: f64 = 0.0;
    for case in 0..100u64 {
        let mut rng = rng_for(&[4, case]);
        let with_scale = case % 2 == 1;
        let truth = RigidTransform {
            rotation: random_rotation(&mut rng),
            translation: random_vec(&mut rng, -10.0, 10.0),
            scale: if with_scale { rng.random_range(0.3..3.0) } else { 1.0 },
        };
        let n = rng.random_range(3..60);
        let pairs: Vec<_> = (0..n)
            .map(|_| {
                let p = random_vec(&mut rng, -5.0, 5.0);
                (p, truth.apply_point(&p))
            })
            .collect();
        let t = kabsch_umeyama(&pairs, with_scale).map_err(|e| e.to_string())?;
        let e = (t.rotation.to_rotation_matrix().matrix() - truth.rotation.to_rotation_matrix().matrix())
            .amax()
            .max((t.translation - truth.translation).amax())
            .max((t.scale - truth.scale).abs());
        worst_exact = worst_exact.max(e);
    }
    let mut worst_ratio: f64 = 0.0;
    for case in 0..100u64 {
        let mut rng = rng_for(&[4, 1000 + case]);
        let sigma = rng.random_range(0.001..0.1);
        let truth = RigidTransform::new(random_rotation(&mut rng), random_vec(&mut rng, -10.0, 10.0));
        let pairs: Vec<_> = (0..rng.random_range(10..200))
            .map(|_| {
                let p = random_vec(&mut rng, -5.0, 5.0);
                let noise = Vector3::from_fn(|_, _| sigma * rng.sample::<f64, _>(StandardNormal));
                (p, truth.apply_point(&p) + noise)
            })
            .collect();
        let t = kabsch_umeyama(&pairs, false).map_err(|e| e.to_string())?;
        worst_ratio = worst_ratio.max(rms_residual(&t, &pairs) / sigma);
    }
    check(
        worst_exact < 1e-9 && worst_ratio <= 3.0,
        format!("noise-free worst error {worst_exact:.2e}; noisy worst RMS/sigma {worst_ratio:.3}"),
    )
}

fn circle_error(dt: f64) -> f64 {
    let params = UavParams::default();
    let (v, w) = (params.speed, 0.5);
    let r = v / w;
    let u = UavControl {
        yaw_rate: w,
        pitch_rate: 0.0,
    };
    let mut s = UavState {
        position: Vector3::zeros(),
        yaw: 0.0,
        pitch: 0.0,
    };
    let steps = (10.0 / dt).round() as usize;
    let mut worst: f64 = 0.0;
    for i in 1..=steps {
        s = step_uav(&s, &u, dt, &params).unwrap();
        let t = i as f64 * dt;
        let exact = Vector3::new(r * (w * t).sin(), r * (1.0 - (w * t).cos()), 0.0);
        worst = worst.max((s.position - exact).norm());
    }
    worst
}

fn uav_turn() -> Verdict {
    let params = UavParams::default();
    let e1 = circle_error(0.02);
    let e2 = circle_error(0.01);
    let ratio = e1 / e2;
    check(
        params.speed == 7.0 && e1 < 1e-3 && ratio >= 8.0,
        format!(
            "radius {:.1} m, max error {e1:.3e} m at dt=0.02, {e2:.3e} m at dt=0.01 (ratio {ratio:.1})",
            params.speed / 0.5
        ),
    )
}

fn expert_closed_loop() -> Verdict {
    let start = Instant::now();
    let spec = ExperimentSpec::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for name in reference_track_names(None) {
        let track = reference_track(name).unwrap();
        let rollouts = run_trials(&spec, &track, PolicyKind::Expert).map_err(|e| e.to_string())?;
        let m = metrics(&rollouts);
        let threshold = spec.sim_config(track.platform).success_threshold;
        ok &= rollouts.len() == 10 && m.success_rate == 1.0 && m.mean_gate_error.is_some_and(|e| e <= threshold);
        lines.push(format!("{name} {:.0}%", m.success_rate * 100.0));
    }
    let elapsed = start.elapsed();
    check(
        ok && within(elapsed, 300.0),
        format!("{} ({:.1} s)", lines.join(", "), elapsed.as_secs_f64()),
    )
}

fn mask_controller() -> Verdict {
    let mut ok = true;
    let mut lines = Vec::new();
    for noisy in [false, true] {
        let spec = ExperimentSpec {
            perception_noise: noisy.then(Default::default),
            ..ExperimentSpec::default()
        };
        for name in reference_track_names(Some(Platform::Quad)) {
            let track = reference_track(name).unwrap();
            let rollouts = run_trials(&spec, &track, PolicyKind::MaskCentroid).map_err(|e| e.to_string())?;
            let sr = metrics(&rollouts).success_rate;
            ok &= if noisy { sr >= 0.9 } else { sr == 1.0 };
            lines.push(format!("{name}{} {:.1}%", if noisy { " noisy" } else { "" }, sr * 100.0));
        }
    }
    check(ok, lines.join(", "))
}

fn pgr_exactness() -> Verdict {
    let mut worst_sum: f64 = 0.0;
    let mut floor_ok = true;
    for case in 0..1000u64 {
        let mut rng = rng_for(&[8, case]);
        let m = rng.random_range(1..=512);
        let beta = if case % 10 == 0 { 0.0 } else { rng.random_range(0.0..=1.0) };
        let losses: Vec<f64> = (0..m)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..50.0) })
            .collect();
        let w = weights(&losses, beta).map_err(|e| e.to_string())?;
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        floor_ok &= w.iter().all(|&x| x >= beta / m as f64);
    }
    let partition = GridPartition::desk(Platform::Uav);
    let m = partition.num_cells();
    let losses: Vec<f64> = (0..m).map(|i| (i % 7) as f64 + 0.5).collect();
    let w = weights(&losses, 1.0).map_err(|e| e.to_string())?;
    let n = 100_000;
    let r = resample(&partition, &w, n, 8, 0, |_| Ok(Some(()))).map_err(|e| e.to_string())?;
    let mut counts = vec![0usize; m];
    for (t, _) in &r.accepted {
        counts[t.cell] += 1;
    }
    let expected = n as f64 / m as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((m - 1) as f64).unwrap().cdf(chi2);
    check(
        worst_sum <= 1e-12 && floor_ok && p > 0.01,
        format!("worst |sum-1| {worst_sum:.1e}, floor held: {floor_ok}; beta=1 chi-square {chi2:.1} (dof {}) p={p:.3}", m - 1),
    )
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn pgr_concentration() -> Verdict {
    let start = Instant::now();
    let (mut pgr_worst, mut uni_worst) = (Vec::new(), Vec::new());
    let mut top: Vec<(usize, usize)> = Vec::new();
    for seed in 0..10 {
        let spec = ExperimentSpec {
            seed,
            ..ExperimentSpec::default()
        };
        assert_eq!(spec.pgr.config.iterations, 3);
        assert_eq!(spec.pgr.config.beta, 0.05);
        let (cmp, _, _) = pgr_compare(&spec).map_err(|e| e.to_string())?;
        if cmp.cells != 256 {
            return Err(format!("partition has {} cells", cmp.cells));
        }
        pgr_worst.push(cmp.final_pgr_worst_loss);
        uni_worst.push(cmp.final_uniform_worst_loss);
        for (i, it) in cmp.iterations.iter().enumerate() {
            if top.len() <= i {
                top.push((0, 0));
            }
            top[i].0 += it.pgr_top_decile_samples;
            top[i].1 += it.uniform_top_decile_samples;
        }
    }
    let ratios: Vec<f64> = top.iter().skip(1).map(|&(p, u)| p as f64 / u as f64).collect();
    let (mp, mu) = (median(&mut pgr_worst), median(&mut uni_worst));
    let elapsed = start.elapsed();
    check(
        mp <= mu && ratios.iter().all(|&r| r >= 1.5) && within(elapsed, 600.0),
        format!(
            "median worst-cell loss {mp:.3} (refined) vs {mu:.3} (uniform); top-decile allocation ratio from iteration 2: {:?}; {:.1} s",
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    )
}

fn perturbation_sweep() -> Verdict {
    let spec = ExperimentSpec::default();
    let base = reference_track(&spec.perturb.track).unwrap();
    if base.platform != Platform::Uav || spec.perturb.tracks_per_level != 10 {
        return Err("sweep is not configured on the UAV track with 10 tracks per level".into());
    }
    let levels = [0.0, 20.0, 40.0, 60.0, 80.0];
    let sr: Vec<f64> = levels
        .iter()
        .map(|&a| perturb_level(&spec, &base, PolicyKind::Expert, a).map(|m| m.success_rate))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let rho = spearman(&levels, &sr);
    check(rho <= 0.0, format!("SR by level {sr:?}, spearman {rho:.3}"))
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn round_trips() -> Verdict {
    let mut scenes: Vec<GaussianScene> = (0..20u64)
        .map(|k| random_scene(&mut rng_for(&[11, k]), 60))
        .collect();
    for name in reference_track_names(None) {
        scenes.push(track_scene(&reference_track(name).unwrap(), 0.0));
    }
    let mut ply_ok = true;
    for s in &scenes {
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let a = save_scene_as(s, enc);
            let b = load_scene(&a).ok().map(|l| save_scene_as(&l, enc));
            ply_ok &= b.as_ref() == Some(&a);
        }
    }
    let mut img_ok = true;
    let k = CameraIntrinsics::default();
    for name in reference_track_names(None) {
        let track = reference_track(name).unwrap();
        let p = track.init_state.position();
        let pose = CameraPose::looking(p, track.init_state.yaw, 0.0);
        let rgb = render_rgb(&track_scene(&track, 0.0), &pose, &k, [0.1, 0.2, 0.3]);
        let ppm = rgb.to_ppm();
        img_ok &= RgbImage::from_ppm(&ppm).ok().map(|i| i.to_ppm()) == Some(ppm.clone());
        let mask = render_gate_mask(&track.gates, 0.0, &pose, &k);
        let pgm = mask.to_pgm();
        img_ok &= Mask::from_pgm(&pgm).ok().map(|m| m.to_pgm()) == Some(pgm.clone());
    }

    let mut spec = ExperimentSpec {
        tracks: vec!["quad_random".into(), "uav_moving".into()],
        policies: vec![PolicyKind::Expert, PolicyKind::Zero],
        trials: 2,
        seed: 5,
        ..ExperimentSpec::default()
    };
    spec.perturb.tracks_per_level = 2;
    spec.pgr.config.iterations = 2;
    spec.pgr.config.initial_samples_per_grid = 1;
    spec.pgr.config.validation_per_grid = 1;
    spec.export.max_ticks = Some(25);
    spec.edit.script = Some("uav_moving".into());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |sub: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let out = dir.path().join(sub);
        cmd_evaluate(&spec, &out.join("evaluate")).map_err(|e| e.to_string())?;
        cmd_perturb(&spec, &out.join("perturb")).map_err(|e| e.to_string())?;
        cmd_pgr(&spec, &out.join("pgr")).map_err(|e| e.to_string())?;
        cmd_export_dataset(&spec, &out.join("export")).map_err(|e| e.to_string())?;
        cmd_edit_scene(&spec, &out.join("edit")).map_err(|e| e.to_string())?;
        cmd_render(&spec, &out.join("render")).map_err(|e| e.to_string())?;
        Ok(tree(&out))
    };
    let a = run("a")?;
    let b = run("b")?;
    let cli_ok = !a.is_empty() && a == b;
    check(
        ply_ok && img_ok && cli_ok,
        format!(
            "PLY {} scenes x 2 encodings: {ply_ok}; PPM/PGM: {img_ok}; {} command output files identical across reruns: {cli_ok}",
            scenes.len(),
            a.len()
        ),
    )
}

fn main() {
    // cargo passes harness flags such as --list; only a filter-free run
    // executes the criteria.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("edit algebra", edit_algebra),
        ("edit performance", edit_performance),
        ("renderer mask oracle", mask_oracle),
        ("kabsch-umeyama", kabsch),
        ("uav constant turn", uav_turn),
        ("expert closed loop", expert_closed_loop),
        ("mask controller", mask_controller),
        ("sampling weights", pgr_exactness),
        ("refinement concentration", pgr_concentration),
        ("perturbation sweep", perturbation_sweep),
        ("file round trips", round_trips),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {:>2}. {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
