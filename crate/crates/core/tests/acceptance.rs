//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

use std::f64::consts::{FRAC_PI_4, PI};
use std::time::{Duration, Instant};

use monoflex_core::box3d::Box3D;
use monoflex_core::camera::{angle_diff, CameraIntrinsics, Point3};
use monoflex_core::decode::{
    decode_detections, decode_peak, encode_targets, is_peak, topk_peaks, DecodeConfig, HeadConfig,
    RecordingView,
};
use monoflex_core::depthsolve::{
    direct_depth, direct_depth_target, hard_choice, keypoint_depths, soft_ensemble, DepthEstimate,
    DepthSource, EnsembleMode,
};
use monoflex_core::eval3d::{evaluate, iou3d, EvalConfig};
use monoflex_core::kitti::{parse_calib, parse_label_file, serialize_calib, serialize_labels, Difficulty, ObjectLabel};
use monoflex_core::losses::{
    depth_unc_loss, dim_loss, focal_heatmap_loss, giou_loss, keypoint_depth_loss, keypoint_loss,
    multibin_loss, offset_loss, LossConfig, MultiBin,
};
use monoflex_core::represent::{
    classify_and_represent, edge_fusion, extract_edge_vector, is_ring_cell, ring_cell, ring_len,
    scatter_edge_vector, FeatureMap, IdentityTransform, ObjectKind,
};
use monoflex_core::study::{analyze_scene, build_report, StudyConfig, StudyMode};
use monoflex_core::synthgen::{gen_scene, perturb, NoiseSpec, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn random_box(rng: &mut ChaCha8Rng) -> Box3D {
    loop {
        let b = Box3D::new(
            Point3::new(rng.random_range(-15.0..15.0), rng.random_range(0.5..2.5), rng.random_range(4.0..70.0)),
            rng.random_range(0.5..3.0),
            rng.random_range(0.4..2.5),
            rng.random_range(0.4..6.0),
            rng.random_range(-PI..PI),
        )
        .unwrap();
        if b.corners().iter().all(|c| c.z > 1.0) {
            return b;
        }
    }
}

// 1 ------------------------------------------------------------------------

fn round_trip() -> Outcome {
    let start = Instant::now();
    let cfg = HeadConfig::default();
    let (mut objects, mut outside) = (0usize, 0usize);
    let (mut worst_loc, mut worst_dim, mut worst_ry) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..200u64 {
        let spec = SceneSpec { seed, n_objects: 10, truncation_fraction: 0.3, ..Default::default() };
        let scene = gen_scene(&spec).map_err(|e| format!("seed {seed}: {e}"))?;
        let k = scene.calib;
        let (ho, stats) = encode_targets(&scene.labels, &k, &cfg).map_err(|e| e.to_string())?;
        check(stats.encoded == scene.labels.len(), format!("seed {seed}: encoded {stats:?}"))?;
        outside += stats.outside;
        let out = decode_detections(&ho, &k, &cfg, &DecodeConfig::default()).map_err(|e| e.to_string())?;
        check(
            out.detections.len() == scene.labels.len(),
            format!("seed {seed}: {} detections for {} objects", out.detections.len(), scene.labels.len()),
        )?;
        for l in &scene.labels {
            let t = l.box3d();
            let d = out
                .detections
                .iter()
                .filter(|d| d.class == l.class_name)
                .min_by(|a, b| {
                    (a.box3d.location - t.location).norm().total_cmp(&(b.box3d.location - t.location).norm())
                })
                .ok_or_else(|| format!("seed {seed}: no {} detection", l.class_name))?;
            worst_loc = worst_loc.max((d.box3d.location - t.location).norm());
            worst_dim = worst_dim
                .max((d.box3d.h - t.h).abs())
                .max((d.box3d.w - t.w).abs())
                .max((d.box3d.l - t.l).abs());
            worst_ry = worst_ry.max(angle_diff(d.box3d.ry, t.ry).abs());
            objects += 1;
        }
    }
    let elapsed = start.elapsed();
    let frac = outside as f64 / objects as f64;
    let detail = format!(
        "{objects} objects ({:.0}% outside), max |dloc| {worst_loc:.2e} m, max |ddim| {worst_dim:.2e} m, max |dry| {worst_ry:.2e} rad, {:.1}s",
        100.0 * frac,
        elapsed.as_secs_f64()
    );
    check(frac >= 0.3, format!("outside share too low: {detail}"))?;
    check(worst_loc <= 1e-3 && worst_dim <= 1e-6 && worst_ry <= 1e-6, detail.clone())?;
    check(elapsed < Duration::from_secs(30), format!("too slow: {detail}"))?;
    Ok(detail)
}

// 2 ------------------------------------------------------------------------

fn depth_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = CameraIntrinsics::default();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let b = random_box(&mut rng);
        let z = b.location.z;
        let kps = b.keypoints10(&k).map_err(|e| e.to_string())?;
        let geo = keypoint_depths(&kps, b.h, k.fy);
        let direct = direct_depth(direct_depth_target(z).map_err(|e| e.to_string())?);
        for e in geo.iter().map(|e| e.z).chain([direct]) {
            worst = worst.max(rel_err(e, z));
        }
    }
    check(worst <= 1e-6, format!("max relative error {worst:.2e}"))?;
    Ok(format!("1000 boxes, max relative error {worst:.2e}"))
}

// 3 ------------------------------------------------------------------------

fn ensemble_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_mean, mut worst_scale) = (0.0f64, 0.0f64);
    let transforms: [fn(f64) -> f64; 4] = [f64::ln, |s| s.powi(3) + 7.0, f64::sqrt, |s| (s / 4.0).exp()];
    for trial in 0..10_000 {
        let n = rng.random_range(1..=4);
        let est: Vec<DepthEstimate> = (0..n)
            .map(|i| {
                DepthEstimate::new(rng.random_range(1.0..80.0), rng.random_range(0.01..10.0), true, DepthSource::ALL[i])
            })
            .collect();
        let z = soft_ensemble(&est).map_err(|e| e.to_string())?;
        let lo = est.iter().map(|e| e.z).fold(f64::INFINITY, f64::min);
        let hi = est.iter().map(|e| e.z).fold(f64::NEG_INFINITY, f64::max);
        check(lo <= z && z <= hi, format!("trial {trial}: {z} outside [{lo}, {hi}]"))?;

        let s = rng.random_range(0.01..10.0);
        let equal: Vec<_> = est.iter().map(|e| DepthEstimate { sigma: s, ..*e }).collect();
        let mean = est.iter().map(|e| e.z).sum::<f64>() / n as f64;
        worst_mean = worst_mean.max(rel_err(soft_ensemble(&equal).unwrap(), mean));

        let c = rng.random_range(1e-3..1e3);
        let scaled: Vec<_> = est.iter().map(|e| DepthEstimate { sigma: e.sigma * c, ..*e }).collect();
        worst_scale = worst_scale.max(rel_err(soft_ensemble(&scaled).unwrap(), z));

        let chosen = hard_choice(&est).unwrap().source;
        for f in transforms {
            // strictly increasing maps to positive values preserve the argmin
            let shift = est.iter().map(|e| f(e.sigma)).fold(f64::INFINITY, f64::min).min(0.0);
            let t: Vec<_> = est.iter().map(|e| DepthEstimate { sigma: f(e.sigma) - shift + 1.0, ..*e }).collect();
            check(hard_choice(&t).unwrap().source == chosen, format!("trial {trial}: hard choice changed"))?;
        }
    }
    check(worst_mean <= 1e-12, format!("equal-sigma deviation {worst_mean:.2e}"))?;
    check(worst_scale <= 1e-12, format!("scaling deviation {worst_scale:.2e}"))?;
    Ok(format!(
        "10000 sets; equal-sigma rel dev {worst_mean:.1e}, scaling rel dev {worst_scale:.1e}, hard choice stable"
    ))
}

// 4 ------------------------------------------------------------------------

fn uncertainty_optimum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let step = 1e-3;
    let n_grid = ((1e3f64 - 1e-3) / step).round() as usize + 1;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        // |e| log-uniform over the searched range
        let mag = 10f64.powf(rng.random_range(-2.0..2.9));
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let z_gt = rng.random_range(5.0..60.0);
        let z_pred = z_gt + sign * mag;
        let e = (z_pred - z_gt).abs();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..n_grid {
            let s = 1e-3 + i as f64 * step;
            let l = depth_unc_loss(z_pred, z_gt, s).unwrap();
            if l < best.0 {
                best = (l, s);
            }
        }
        worst = worst.max((best.1 - e).abs());
    }
    check(worst <= step, format!("max |sigma* - |e|| = {worst:.2e}"))?;
    Ok(format!("100 errors, max |sigma* - |e|| = {worst:.2e} on a {step} grid"))
}

// 5 ------------------------------------------------------------------------

/// Whether `p` lies in the cuboid: rotate the ground-plane offset back into
/// the box frame, where the box spans `|x| <= l/2`, `|z| <= w/2`.
fn inside_box(b: &Box3D, p: Point3) -> bool {
    let (s, c) = b.ry.sin_cos();
    let (dx, dz) = (p.x - b.location.x, p.z - b.location.z);
    let lx = c * dx - s * dz;
    let lz = s * dx + c * dz;
    lx.abs() <= b.l / 2.0 && lz.abs() <= b.w / 2.0 && p.y <= b.location.y && p.y >= b.location.y - b.h
}

fn mc_iou(a: &Box3D, b: &Box3D, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in a.corners().iter().chain(b.corners().iter()) {
        for (i, v) in [c.x, c.y, c.z].into_iter().enumerate() {
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for _ in 0..n {
        let p = Point3::new(
            rng.random_range(lo[0]..hi[0]),
            rng.random_range(lo[1]..hi[1]),
            rng.random_range(lo[2]..hi[2]),
        );
        let (ia, ib) = (inside_box(a, p), inside_box(b, p));
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    both as f64 / (na + nb - both) as f64
}

fn iou_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut mean_iou = 0.0;
    for _ in 0..100 {
        let a = random_box(&mut rng);
        let b = Box3D::new(
            a.location + Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.4..0.4), rng.random_range(-1.0..1.0)),
            a.h * rng.random_range(0.7..1.3),
            a.w * rng.random_range(0.7..1.3),
            a.l * rng.random_range(0.7..1.3),
            rng.random_range(-PI..PI),
        )
        .unwrap();
        let exact = iou3d(&a, &b);
        let mc = mc_iou(&a, &b, 1_000_000, &mut rng);
        worst = worst.max((exact - mc).abs());
        mean_iou += exact / 100.0;
    }
    let unit = |ry| Box3D::new(Point3::new(0.0, 0.0, 10.0), 1.0, 1.0, 1.0, ry).unwrap();
    let fixture = iou3d(&unit(0.0), &unit(FRAC_PI_4));
    check((fixture - 0.8284 / 1.1716).abs() <= 1e-3, format!("45-degree fixture {fixture}"))?;
    check(worst <= 0.01, format!("max |iou - MC| = {worst:.4}"))?;
    Ok(format!(
        "100 pairs (mean IoU {mean_iou:.3}), max |iou - MC| = {worst:.4}; 45-degree fixture {fixture:.4}"
    ))
}

// 6 ------------------------------------------------------------------------

fn car(x: f64, z: f64, score: Option<f64>) -> ObjectLabel {
    ObjectLabel {
        class_name: "Car".into(),
        truncation: 0.0,
        occlusion: 0,
        alpha: 0.0,
        bbox: [500.0, 150.0, 600.0, 220.0],
        h: 1.5,
        w: 1.6,
        l: 3.9,
        x,
        y: 1.6,
        z,
        ry: 0.0,
        score,
    }
}

fn ap_fixtures() -> Outcome {
    let cfg = EvalConfig::default();
    let gt = vec![vec![car(0.0, 20.0, None), car(6.0, 30.0, None)]];
    let hit1 = car(0.0, 20.0, None);
    let hit2 = car(6.0, 30.0, None);
    let miss = car(-8.0, 45.0, None);
    let scored = |l: &ObjectLabel, s: f64| ObjectLabel { score: Some(s), ..l.clone() };
    let cases: Vec<(&str, Vec<ObjectLabel>, f64, f64)> = vec![
        ("TP FP", vec![scored(&hit1, 0.9), scored(&miss, 0.8)], 0.5, 6.0 / 11.0),
        ("TP FP TP", vec![scored(&hit1, 0.9), scored(&miss, 0.8), scored(&hit2, 0.7)], (20.0 + 20.0 * 2.0 / 3.0) / 40.0, (6.0 + 5.0 * 2.0 / 3.0) / 11.0),
        ("FP TP TP", vec![scored(&miss, 0.9), scored(&hit1, 0.8), scored(&hit2, 0.7)], 2.0 / 3.0, 2.0 / 3.0),
        ("none", vec![], 0.0, 0.0),
    ];
    for (name, det, r40, r11) in &cases {
        let rep = evaluate(&gt, std::slice::from_ref(det), &cfg).map_err(|e| e.to_string())?;
        let r = rep.get("Car", Difficulty::Moderate).unwrap();
        // dyadic values must match bit for bit, the rest to rounding of the 40-term sum
        let tol = if (r40 * 40.0).fract() == 0.0 { 0.0 } else { 1e-14 };
        check(
            (r.ap_r40.unwrap() - r40).abs() <= tol,
            format!("{name}: AP_R40 {:?} != {r40}", r.ap_r40),
        )?;
        check(
            (r.ap_r11.unwrap() - r11).abs() <= 1e-15,
            format!("{name}: AP_R11 {:?} != {r11}", r.ap_r11),
        )?;
    }

    // perfect detector on synthetic scenes
    let mut gts = Vec::new();
    for seed in 0..20 {
        let s = gen_scene(&SceneSpec { seed, n_objects: 8, ..Default::default() }).map_err(|e| e.to_string())?;
        gts.push(s.labels);
    }
    let dets: Vec<Vec<ObjectLabel>> = gts
        .iter()
        .map(|img| img.iter().map(|l| ObjectLabel { score: Some(1.0), ..l.clone() }).collect())
        .collect();
    let rep = evaluate(&gts, &dets, &cfg).map_err(|e| e.to_string())?;
    let mut populated = 0;
    for r in &rep.results {
        if r.num_gt > 0 {
            populated += 1;
            check(
                r.ap_r40 == Some(1.0) && r.ap_r11 == Some(1.0),
                format!("perfect detector {} {:?}: {:?}/{:?}", r.class, r.difficulty, r.ap_r11, r.ap_r40),
            )?;
        }
    }
    Ok(format!("{} hand fixtures exact (TP FP -> 0.5000); perfect detector AP = 1 on {populated} class/level cells", cases.len()))
}

// 7 ------------------------------------------------------------------------

fn ensemble_study() -> Outcome {
    let start = Instant::now();
    let cfg = StudyConfig::default();
    let noise = |seed| NoiseSpec {
        seed,
        depth: 0.06,
        keypoints_center: 0.25,
        keypoints_diag1: 0.3,
        keypoints_diag2: 0.35,
        honest_sigma: true,
        ..Default::default()
    };
    // head maps are large, so each scene is reduced to its results right away
    let (mut gts, mut results) = (Vec::with_capacity(1000), Vec::with_capacity(1000));
    for seed in 0..1000u64 {
        let s = gen_scene(&SceneSpec { seed, n_objects: 6, ..Default::default() }).map_err(|e| e.to_string())?;
        let (ho, _) = encode_targets(&s.labels, &s.calib, &cfg.head).map_err(|e| e.to_string())?;
        let noisy = perturb(&ho, &noise(10_000 + seed)).map_err(|e| e.to_string())?;
        results.push(analyze_scene(&s.labels, &noisy, &s.calib, &cfg).map_err(|e| e.to_string())?);
        gts.push(s.labels);
    }
    let rep = build_report(&gts, &results, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let row = |m| rep.row(m).unwrap();
    let singles: Vec<_> = DepthSource::ALL.iter().map(|s| row(StudyMode::Single(*s))).collect();
    let best = singles.iter().map(|r| r.mean_abs_depth_error).fold(f64::INFINITY, f64::min);
    let worst = singles.iter().map(|r| r.mean_abs_depth_error).fold(0.0, f64::max);
    let soft = row(StudyMode::Soft);
    let oracle = row(StudyMode::Oracle);
    let table: Vec<String> = rep
        .rows
        .iter()
        .map(|r| format!("{} {:.3}m/{:.1}", r.mode, r.mean_abs_depth_error, 100.0 * r.mean_ap))
        .collect();
    let detail = format!("{} ({:.1}s)", table.join(", "), elapsed.as_secs_f64());
    check(
        oracle.mean_abs_depth_error <= soft.mean_abs_depth_error
            && soft.mean_abs_depth_error <= best
            && best <= worst,
        format!("depth ordering violated: {detail}"),
    )?;
    for r in &singles {
        check(soft.mean_ap >= r.mean_ap, format!("soft AP below {}: {detail}", r.mode))?;
    }
    check(elapsed < Duration::from_secs(300), format!("too slow: {detail}"))?;
    Ok(detail)
}

// 8 ------------------------------------------------------------------------

fn naive_bce(x: f64, y: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
}

fn loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = LossConfig::default();
    let bins = MultiBin::default();
    let mut worst = 0.0f64;
    let mut track = |name: &str, got: f64, want: f64| -> std::result::Result<(), String> {
        let r = (got - want).abs() / want.abs().max(1e-12);
        worst = worst.max(r);
        check(r <= 1e-9, format!("{name}: {got} vs naive {want}"))
    };
    let mut minima = 0usize;
    let mut at_min = |name: &str, at_gt: f64, away: f64| -> std::result::Result<(), String> {
        minima += 1;
        check(at_gt <= away, format!("{name}: loss at ground truth {at_gt} > {away}"))
    };

    for _ in 0..1000 {
        // focal heatmap
        let (c, h, w) = (2, 5, 6);
        let mut gt = FeatureMap::zeros(c, h, w);
        let mut pred = FeatureMap::zeros(c, h, w);
        for v in gt.data_mut() {
            *v = if rng.random_bool(0.1) { 1.0 } else { rng.random_range(0.0..0.99) };
        }
        for v in pred.data_mut() {
            *v = rng.random_range(0.01..0.99);
        }
        let mut naive = 0.0;
        let mut npos = 0;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == 1.0 {
                npos += 1;
                naive -= (1.0 - p) * (1.0 - p) * p.ln();
            } else {
                naive -= (1.0 - g).powi(4) * p * p * (1.0 - p).ln();
            }
        }
        naive /= npos.max(1) as f64;
        let fl = focal_heatmap_loss(&pred, &gt, &cfg).unwrap();
        track("focal", fl, naive)?;
        let mut near = gt.clone();
        for v in near.data_mut() {
            *v = v.clamp(1e-6, 1.0 - 1e-6);
        }
        at_min("focal", focal_heatmap_loss(&near, &gt, &cfg).unwrap(), fl)?;

        // offsets
        let p = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let g = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        track("offset-in", offset_loss(p, g, ObjectKind::Inside), (p.0 - g.0).abs() + (p.1 - g.1).abs())?;
        track(
            "offset-out",
            offset_loss(p, g, ObjectKind::Outside),
            (1.0 + (p.0 - g.0).abs()).ln() + (1.0 + (p.1 - g.1).abs()).ln(),
        )?;
        at_min("offset", offset_loss(g, g, ObjectKind::Outside), offset_loss(p, g, ObjectKind::Outside))?;

        // dimensions
        let class = ["Car", "Pedestrian", "Cyclist"][rng.random_range(0..3)];
        let md = cfg.mean_dims(class).unwrap();
        let gtd = [md.h, md.w, md.l].map(|m| m * rng.random_range(0.7..1.3));
        let deltas: [f64; 3] = [0; 3].map(|_| rng.random_range(-0.5..0.5));
        let naive_dim = (md.h * deltas[0].exp() - gtd[0]).abs()
            + (md.w * deltas[1].exp() - gtd[1]).abs()
            + (md.l * deltas[2].exp() - gtd[2]).abs();
        let dl = dim_loss(deltas, gtd, class, &cfg).unwrap();
        track("dims", dl, naive_dim)?;
        let exact = [(gtd[0] / md.h).ln(), (gtd[1] / md.w).ln(), (gtd[2] / md.l).ln()];
        at_min("dims", dim_loss(exact, gtd, class, &cfg).unwrap(), dl)?;

        // orientation
        let alpha = rng.random_range(-PI..PI);
        let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let res: Vec<(f64, f64)> = (0..4).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let hw = PI / 4.0 + 0.1;
        let mut cls = 0.0;
        let mut reg = 0.0;
        let mut nc = 0;
        for b in 0..4 {
            let center = [0.0, PI / 2.0, PI, -PI / 2.0][b];
            let mut d = (alpha - center) % (2.0 * PI);
            if d > PI {
                d -= 2.0 * PI;
            }
            if d <= -PI {
                d += 2.0 * PI;
            }
            let covered = d.abs() <= hw;
            cls += naive_bce(logits[b], if covered { 1.0 } else { 0.0 });
            if covered {
                reg += (res[b].0 - d.sin()).abs() + (res[b].1 - d.cos()).abs();
                nc += 1;
            }
        }
        let naive_mb = cls / 4.0 + reg / nc as f64;
        let mb = multibin_loss(&logits, &res, alpha, &bins).unwrap();
        track("multibin", mb, naive_mb)?;
        let (_, gt_res) = bins.encode(alpha);
        let gt_logits: Vec<f64> = (0..4).map(|b| if bins.covers(b, alpha) { 30.0 } else { -30.0 }).collect();
        at_min("multibin", multibin_loss(&gt_logits, &gt_res, alpha, &bins).unwrap(), mb)?;

        // keypoints
        let kp_p: Vec<(f64, f64)> = (0..10).map(|_| (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0))).collect();
        let kp_g: Vec<(f64, f64)> = (0..10).map(|_| (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0))).collect();
        let mask: Vec<bool> = (0..10).map(|_| rng.random_bool(0.7)).collect();
        let n_in = mask.iter().filter(|m| **m).count();
        if n_in > 0 {
            let naive_kp: f64 = (0..10)
                .filter(|&i| mask[i])
                .map(|i| (kp_p[i].0 - kp_g[i].0).abs() + (kp_p[i].1 - kp_g[i].1).abs())
                .sum::<f64>()
                / n_in as f64;
            let kl = keypoint_loss(&kp_p, &kp_g, &mask).unwrap();
            track("keypoints", kl.value, naive_kp)?;
            at_min("keypoints", keypoint_loss(&kp_g, &kp_g, &mask).unwrap().value, kl.value)?;
        }

        // depth with uncertainty
        let z_gt = rng.random_range(5.0..60.0);
        let z_p = z_gt + rng.random_range(-5.0..5.0);
        let s = rng.random_range(0.05..5.0);
        let du = depth_unc_loss(z_p, z_gt, s).unwrap();
        track("depth", du, (z_p - z_gt).abs() / s + s.ln())?;
        at_min("depth", depth_unc_loss(z_gt, z_gt, s).unwrap(), du)?;

        let ests: Vec<DepthEstimate> = DepthSource::ALL[1..]
            .iter()
            .map(|&src| DepthEstimate::new(z_gt + rng.random_range(-5.0..5.0), rng.random_range(0.05..5.0), rng.random_bool(0.8), src))
            .collect();
        let naive_kd: f64 = ests
            .iter()
            .map(|e| (e.z - z_gt).abs() / e.sigma + if e.valid { e.sigma.ln() } else { 0.0 })
            .sum();
        let kd = keypoint_depth_loss(&ests, z_gt).unwrap();
        track("keypoint-depth", kd, naive_kd)?;
        let exact_ests: Vec<_> = ests.iter().map(|e| DepthEstimate { z: z_gt, ..*e }).collect();
        at_min("keypoint-depth", keypoint_depth_loss(&exact_ests, z_gt).unwrap(), kd)?;

        // GIoU
        let rand_box = |rng: &mut ChaCha8Rng| -> [f64; 4] {
            let (u, v) = (rng.random_range(0.0..500.0), rng.random_range(0.0..300.0));
            [u, v, u + rng.random_range(5.0..200.0), v + rng.random_range(5.0..150.0)]
        };
        let (a, b) = (rand_box(&mut rng), rand_box(&mut rng));
        let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
        let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
        let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
        let inter = iw * ih;
        let uni = area(a) + area(b) - inter;
        let hull = (a[2].max(b[2]) - a[0].min(b[0])) * (a[3].max(b[3]) - a[1].min(b[1]));
        let gl = giou_loss(a, b).unwrap();
        track("giou", gl, 1.0 - (inter / uni - (hull - uni) / hull))?;
        at_min("giou", giou_loss(b, b).unwrap(), gl)?;

        // corner loss
        let bx = random_box(&mut rng);
        let by = random_box(&mut rng);
        let naive_corner: f64 = bx
            .corners()
            .iter()
            .zip(by.corners().iter())
            .map(|(p, q)| (p.x - q.x).abs() + (p.y - q.y).abs() + (p.z - q.z).abs())
            .sum();
        let cl = monoflex_core::box3d::corner_loss(&bx, &by);
        track("corner", cl, naive_corner)?;
        at_min("corner", monoflex_core::box3d::corner_loss(&by, &by), cl)?;
    }
    Ok(format!("9 losses x 1000 inputs, max relative deviation {worst:.1e}; {minima} minimum-at-truth checks"))
}

// 9 ------------------------------------------------------------------------

fn edge_decoupling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for h in 2..=64usize {
        for w in 2..=64usize {
            let len = ring_len(h, w);
            check(len == 2 * (h + w) - 4, format!("{h}x{w}: ring length {len}"))?;
            let mut seen = vec![false; h * w];
            for i in 0..len {
                let (r, c) = ring_cell(h, w, i);
                let (r2, c2) = ring_cell(h, w, (i + 1) % len);
                check(is_ring_cell(h, w, r, c) && !seen[r * w + c], format!("{h}x{w}: bad ring cell {i}"))?;
                seen[r * w + c] = true;
                if len > 2 {
                    check(r.abs_diff(r2) + c.abs_diff(c2) == 1, format!("{h}x{w}: ring jumps at {i}"))?;
                }
            }
            let ch = 2;
            let mut fm = FeatureMap::zeros(ch, h, w);
            for v in fm.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let edge = extract_edge_vector(&fm).map_err(|e| e.to_string())?;
            check(edge.len() == len, format!("{h}x{w}: edge vector length {}", edge.len()))?;
            // scatter onto an empty map, then extract again
            let mut empty = FeatureMap::zeros(ch, h, w);
            scatter_edge_vector(&mut empty, &edge).map_err(|e| e.to_string())?;
            check(extract_edge_vector(&empty).unwrap() == edge, format!("{h}x{w}: extract/scatter mismatch"))?;
            for r in 0..h {
                for c in 0..w {
                    for k in 0..ch {
                        let want = if is_ring_cell(h, w, r, c) { fm.get(k, r, c) } else { 0.0 };
                        check(empty.get(k, r, c) == want, format!("{h}x{w}: scatter wrote ({r},{c})"))?;
                    }
                }
            }
            let mut fused = fm.clone();
            edge_fusion(&mut fused, &IdentityTransform).map_err(|e| e.to_string())?;
            for r in 0..h {
                for c in 0..w {
                    for k in 0..ch {
                            let want: f64 = if is_ring_cell(h, w, r, c) { 2.0 * fm.get(k, r, c) } else { fm.get(k, r, c) };
                        check(fused.get(k, r, c) == want, format!("{h}x{w}: fusion changed ({r},{c})"))?;
                    }
                }
            }
        }
    }

    // instrumented decoding
    let cfg = HeadConfig::default();
    let (mut inside_checked, mut ring_checked, mut reads) = (0usize, 0usize, 0usize);
    for seed in 0..50u64 {
        let scene = gen_scene(&SceneSpec { seed, n_objects: 10, truncation_fraction: 0.3, ..Default::default() })
            .map_err(|e| e.to_string())?;
        let k = scene.calib;
        let (ho, _) = encode_targets(&scene.labels, &k, &cfg).map_err(|e| e.to_string())?;
        let (hf, wf) = (ho.meta.hf, ho.meta.wf);
        let view = RecordingView::new(&ho.map);
        let peaks = topk_peaks(&ho.map, 0, ho.meta.class_names.len(), hf, wf, 50, 0.1);
        for l in &scene.labels {
            let rep = classify_and_represent(l.bbox, &l.box3d(), &k, cfg.stride, cfg.center_mode).unwrap();
            let p = peaks
                .iter()
                .find(|p| (p.row, p.col) == rep.cell)
                .ok_or_else(|| format!("seed {seed}: no peak at {:?}", rep.cell))?;
            view.take();
            check(is_peak(&view, p.class, hf, wf, p.row, p.col), "peak test failed")?;
            decode_peak(&view, &ho.meta, p, &k, &cfg, EnsembleMode::Soft).map_err(|e| e.to_string())?;
            let log = view.take();
            reads += log.len();
            let on_ring = log.iter().filter(|&&(_, r, c)| is_ring_cell(hf, wf, r, c)).count();
            match rep.kind {
                ObjectKind::Inside => {
                    check(on_ring == 0, format!("seed {seed}: inside object read {on_ring} ring cells"))?;
                    inside_checked += 1;
                }
                ObjectKind::Outside => {
                    check(on_ring == log.len(), format!("seed {seed}: outside object read interior cells"))?;
                    ring_checked += 1;
                }
            }
        }
    }
    Ok(format!(
        "all 63x63 map sizes; {inside_checked} inside / {ring_checked} outside decodes, {reads} recorded reads, zero crossings"
    ))
}

// 10 -----------------------------------------------------------------------

fn format_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let classes = ["Car", "Pedestrian", "Cyclist", "Van", "DontCare"];
    let mut rows = Vec::with_capacity(10_000);
    for i in 0..10_000 {
        let u = rng.random_range(0.0..1200.0);
        let v = rng.random_range(0.0..350.0);
        rows.push(ObjectLabel {
            class_name: classes[i % classes.len()].into(),
            truncation: rng.random_range(0.0..1.0),
            occlusion: rng.random_range(-1..=3),
            alpha: rng.random_range(-PI..PI),
            bbox: [u, v, u + rng.random_range(1.0..80.0), v + rng.random_range(1.0..34.0)],
            h: rng.random_range(0.3..4.0),
            w: rng.random_range(0.3..3.0),
            l: rng.random_range(0.3..12.0),
            x: rng.random_range(-50.0..50.0),
            y: rng.random_range(-3.0..3.0),
            z: rng.random_range(-5.0..90.0),
            ry: rng.random_range(-PI..PI),
            score: if i % 2 == 0 { Some(rng.random_range(0.0..1.0)) } else { None },
        });
    }
    let text = serialize_labels(&rows);
    let parsed = parse_label_file(&text).map_err(|e| e.to_string())?;
    check(parsed.len() == rows.len(), "row count changed")?;
    let again = serialize_labels(&parsed);
    check(again == text, "serialize(parse(text)) != text")?;
    check(parse_label_file(&again).unwrap() == parsed, "parse is not idempotent")?;

    for _ in 0..100 {
        let k = CameraIntrinsics::new(
            rng.random_range(300.0..1500.0),
            rng.random_range(300.0..1500.0),
            rng.random_range(100.0..1000.0),
            rng.random_range(50.0..400.0),
            rng.random_range(-400.0..400.0),
            rng.random_range(-5.0..5.0),
            1280,
            384,
        )
        .unwrap();
        let t = serialize_calib(&k);
        let k2 = parse_calib(&t, 1280, 384).map_err(|e| e.to_string())?;
        check(serialize_calib(&k2) == t, "calib serialize(parse) not idempotent")?;
    }

    // malformed inputs: wrong field counts and a non-numeric token in every numeric field
    let good: Vec<String> = rows[0].to_line().split_whitespace().map(String::from).collect();
    let mut cases = 0usize;
    let mut caught = 0usize;
    let mut probe = |line: String| {
        cases += 1;
        if matches!(parse_label_file(&line), Err(monoflex_core::Error::Parse { .. })) {
            caught += 1;
        }
    };
    for n in (1..15).chain(17..20) {
        let fields: Vec<String> = (0..n).map(|i| good.get(i).cloned().unwrap_or_else(|| "1.00".into())).collect();
        probe(fields.join(" "));
    }
    for i in 1..good.len() {
        for junk in ["abc", "1.2.3", "nan", "inf", "--1", ""] {
            let mut f = good.clone();
            f[i] = if junk.is_empty() { "x".into() } else { junk.into() };
            probe(f.join(" "));
        }
    }
    for bad_calib in ["", "P2: 1 2 3", "P2: a b c d e f g h i j k l", "P0: 1 0 0 0 0 1 0 0 0 0 1 0"] {
        cases += 1;
        if parse_calib(bad_calib, 1280, 384).is_err() {
            caught += 1;
        }
    }
    check(caught == cases, format!("{caught}/{cases} malformed inputs rejected"))?;
    Ok(format!("10000 rows idempotent, 100 calibs idempotent, {caught}/{cases} malformed inputs rejected (100%)"))
}

fn main() {
    // accept and ignore libtest-style arguments (e.g. --nocapture)
    let criteria: [Criterion; 10] = [
        ("round-trip exactness", round_trip),
        ("depth estimator identity", depth_identity),
        ("ensemble algebra", ensemble_algebra),
        ("uncertainty loss optimum", uncertainty_optimum),
        ("IoU oracle", iou_oracle),
        ("AP fixtures", ap_fixtures),
        ("ensemble ordering study", ensemble_study),
        ("loss oracles", loss_oracles),
        ("edge decoupling", edge_decoupling),
        ("format fidelity", format_fidelity),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
