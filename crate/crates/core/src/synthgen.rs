//! Seeded synthetic scenes and head-map noise injection.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::box3d::Box3D;
use crate::camera::{ry_to_alpha, CameraIntrinsics, Point3};
use crate::decode::HeadOutputs;
use crate::depthsolve::DepthSource;
use crate::error::{Error, Result};
use crate::eval3d::bev_intersection;
use crate::kitti::ObjectLabel;
use crate::losses::default_mean_dims;
use crate::represent::{
    classify_and_represent, feature_size, ring_distance, ring_index, ring_len, CenterMode,
    ObjectKind,
};

/// Attempt budget per object before a spec is declared unsatisfiable.
pub const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_objects: usize,
    /// `(class, weight)`; weights need not sum to one.
    pub class_mix: Vec<(String, f64)>,
    pub depth_range: (f64, f64),
    /// Allowed camera-frame `x` of the box location.
    pub lateral_range: (f64, f64),
    /// Camera-frame `y` of the box bottom (camera height above ground).
    pub height_range: (f64, f64),
    /// Share of objects whose projected center falls outside the image.
    pub truncation_fraction: f64,
    /// Outside centers lie up to this many pixels beyond an image edge.
    pub outside_max_px: f64,
    /// Relative frequency of outside centers beyond the left, right, top and
    /// bottom edge. Centers beyond the top or bottom ignore `height_range`.
    pub outside_sides: [f64; 4],
    /// Minimum side of the visible 2D box, in pixels.
    pub min_visible_px: f64,
    /// Relative spread of the dimensions around the class means.
    pub dims_jitter: f64,
    /// Probabilities of occlusion levels 0, 1, 2.
    pub occlusion_weights: [f64; 3],
    pub stride: u32,
    pub center_mode: CenterMode,
    pub camera: CameraIntrinsics,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_objects: 6,
            class_mix: vec![("Car".into(), 0.6), ("Pedestrian".into(), 0.2), ("Cyclist".into(), 0.2)],
            depth_range: (5.0, 60.0),
            lateral_range: (-60.0, 60.0),
            height_range: (1.45, 1.85),
            truncation_fraction: 0.3,
            outside_max_px: 300.0,
            outside_sides: [1.0, 1.0, 0.0, 0.0],
            min_visible_px: 8.0,
            dims_jitter: 0.1,
            occlusion_weights: [0.6, 0.3, 0.1],
            stride: 4,
            center_mode: CenterMode::Volumetric,
            camera: CameraIntrinsics::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a < b;
        if !range_ok(self.depth_range) || self.depth_range.0 <= 1.0 {
            return Err(Error::Config(format!("depth range must satisfy 1 < min < max, got {:?}", self.depth_range)));
        }
        if !range_ok(self.lateral_range) || !range_ok(self.height_range) {
            return Err(Error::Config("lateral and height ranges must be increasing".into()));
        }
        if !(0.0..=1.0).contains(&self.truncation_fraction) {
            return Err(Error::Config(format!(
                "truncation fraction must be in [0, 1], got {}",
                self.truncation_fraction
            )));
        }
        if self.class_mix.is_empty() || self.class_mix.iter().any(|(_, w)| !(*w >= 0.0)) {
            return Err(Error::Config("class mix needs non-negative weights".into()));
        }
        if !(self.outside_max_px > 1.0) || !(self.min_visible_px > 0.0) || !(self.dims_jitter >= 0.0 && self.dims_jitter < 1.0) {
            return Err(Error::Config("pixel margins and jitter out of range".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("downsample ratio must be >= 1".into()));
        }
        self.camera.validate()
    }

    pub fn num_outside(&self) -> usize {
        (self.truncation_fraction * self.n_objects as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub labels: Vec<ObjectLabel>,
    pub calib: CameraIntrinsics,
}

/// Rounds to the two decimals that label files keep, so a generated scene
/// and its serialized form describe the same boxes.
fn q(v: f64) -> f64 {
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

struct Placed {
    b: Box3D,
    cell: (usize, usize),
    ring: Option<usize>,
}

fn clipped(b: [f64; 4], k: &CameraIntrinsics) -> [f64; 4] {
    [
        b[0].clamp(0.0, k.width()),
        b[1].clamp(0.0, k.height()),
        b[2].clamp(0.0, k.width()),
        b[3].clamp(0.0, k.height()),
    ]
}

fn area(b: [f64; 4]) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

/// Generates a scene; identical specs give identical scenes.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let k = spec.camera;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mean_dims = default_mean_dims();
    let weights: Vec<f64> = spec.class_mix.iter().map(|(_, w)| *w).collect();
    let class_dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("class mix: {e}")))?;
    let occ_dist = WeightedIndex::new(spec.occlusion_weights)
        .map_err(|e| Error::Config(format!("occlusion weights: {e}")))?;
    let side_dist = WeightedIndex::new(spec.outside_sides)
        .map_err(|e| Error::Config(format!("outside sides: {e}")))?;
    for (c, _) in &spec.class_mix {
        if !mean_dims.contains_key(c) {
            return Err(Error::UnknownClass(c.clone()));
        }
    }

    let (hf, wf) = feature_size(&k, spec.stride);
    if hf < 3 || wf < 3 {
        return Err(Error::Config("image too small for the downsample ratio".into()));
    }
    let s = spec.stride as f64;
    let len = ring_len(hf, wf);
    // inside centers stay off the outermost ring of cells
    let u_in = (s, ((wf - 1) as f64 * s).min(k.width()));
    let v_in = (s, ((hf - 1) as f64 * s).min(k.height()));

    // the boundary ring is the scarcer resource, so outside objects go first
    let mut outside = vec![false; spec.n_objects];
    outside.iter_mut().take(spec.num_outside()).for_each(|o| *o = true);

    let mut placed: Vec<Placed> = Vec::with_capacity(spec.n_objects);
    let mut labels = Vec::with_capacity(spec.n_objects);
    for want_outside in outside {
        let mut done = false;
        for _ in 0..MAX_ATTEMPTS {
            let (class, _) = &spec.class_mix[class_dist.sample(&mut rng)];
            let md = mean_dims[class];
            let mut jit = |m: f64| q(m * (1.0 + spec.dims_jitter * rng.random_range(-1.0..=1.0))).max(0.01);
            let (h, w, l) = (jit(md.h), jit(md.w), jit(md.l));
            let z = rng.random_range(spec.depth_range.0..spec.depth_range.1);
            let mut y_bottom = rng.random_range(spec.height_range.0..spec.height_range.1);
            let u = if want_outside {
                let off = rng.random_range(1.0..spec.outside_max_px);
                match side_dist.sample(&mut rng) {
                    0 => -off,
                    1 => k.width() + off,
                    side => {
                        let v = if side == 2 { -off } else { k.height() + off };
                        let yc = ((v - k.cv) * z - k.ty) / k.fy;
                        y_bottom = yc - spec.center_mode.lift(h);
                        rng.random_range(0.0..k.width())
                    }
                }
            } else {
                rng.random_range(u_in.0..u_in.1)
            };
            let ry = rng.random_range(-PI..PI);
            let occlusion = occ_dist.sample(&mut rng) as i32;

            let x = ((u - k.cu) * z - k.tx) / k.fx;
            let loc = Point3::new(q(x), q(y_bottom), q(z));
            if loc.x < spec.lateral_range.0 || loc.x > spec.lateral_range.1 {
                continue;
            }
            let Ok(b) = Box3D::new(loc, h, w, l, q(ry)) else { continue };
            if b.corners().iter().any(|c| !(c.z > 1.0)) {
                continue;
            }
            let Ok(full) = b.projected_box(&k) else { continue };
            let vis = clipped(full, &k).map(q);
            if vis[2] - vis[0] < spec.min_visible_px || vis[3] - vis[1] < spec.min_visible_px {
                continue;
            }
            let Ok(rep) = classify_and_represent(vis, &b, &k, spec.stride, spec.center_mode) else {
                continue;
            };
            let ring = ring_index(hf, wf, rep.cell.0, rep.cell.1);
            let kind_ok = match rep.kind {
                ObjectKind::Outside => want_outside && ring.is_some(),
                ObjectKind::Inside => {
                    !want_outside
                        && ring.is_none()
                        && (u_in.0..u_in.1).contains(&rep.xc.u)
                        && (v_in.0..v_in.1).contains(&rep.xc.v)
                }
            };
            if !kind_ok {
                continue;
            }
            let separated = placed.iter().all(|p| match (ring, p.ring) {
                (Some(a), Some(c)) => ring_distance(len, a, c) >= 2,
                (None, None) => {
                    rep.cell.0.abs_diff(p.cell.0).max(rep.cell.1.abs_diff(p.cell.1)) >= 2
                }
                _ => true,
            });
            if !separated || placed.iter().any(|p| bev_intersection(&b, &p.b) > 0.0) {
                continue;
            }
            let truncation = q((1.0 - area(clipped(full, &k)) / area(full)).clamp(0.0, 1.0));
            labels.push(ObjectLabel {
                class_name: class.clone(),
                truncation,
                occlusion,
                alpha: q(ry_to_alpha(b.ry, b.location.x, b.location.z)?),
                bbox: vis,
                h,
                w,
                l,
                x: loc.x,
                y: loc.y,
                z: loc.z,
                ry: b.ry,
                score: None,
            });
            placed.push(Placed { b, cell: rep.cell, ring });
            done = true;
            break;
        }
        if !done {
            return Err(Error::Unsatisfiable(format!(
                "could not place object {} of {} within {MAX_ATTEMPTS} attempts",
                labels.len() + 1,
                spec.n_objects
            )));
        }
    }
    labels.shuffle(&mut rng);
    Ok(Scene { labels, calib: k })
}

// ---------------------------------------------------------------------------
// Noise injection
// ---------------------------------------------------------------------------

/// Standard deviations of additive Gaussian noise, in channel units
/// (cells for offsets and keypoints, nats for log-dims and `z_o`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub seed: u64,
    pub offset: f64,
    pub box2d: f64,
    pub dims: f64,
    pub orientation: f64,
    pub keypoints_center: f64,
    pub keypoints_diag1: f64,
    pub keypoints_diag2: f64,
    pub depth: f64,
    /// Rewrite σ channels with the expected absolute depth error the noise
    /// causes at each cell.
    pub honest_sigma: bool,
    pub sigma_floor: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            offset: 0.0,
            box2d: 0.0,
            dims: 0.0,
            orientation: 0.0,
            keypoints_center: 0.0,
            keypoints_diag1: 0.0,
            keypoints_diag2: 0.0,
            depth: 0.0,
            honest_sigma: true,
            sigma_floor: 0.01,
        }
    }
}

impl NoiseSpec {
    pub fn is_zero(&self) -> bool {
        [
            self.offset,
            self.box2d,
            self.dims,
            self.orientation,
            self.keypoints_center,
            self.keypoints_diag1,
            self.keypoints_diag2,
            self.depth,
        ]
        .iter()
        .all(|s| *s == 0.0)
    }

    fn keypoint_sigma(&self, src: DepthSource) -> f64 {
        match src {
            DepthSource::Direct => 0.0,
            DepthSource::Center => self.keypoints_center,
            DepthSource::Diag1 => self.keypoints_diag1,
            DepthSource::Diag2 => self.keypoints_diag2,
        }
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Adds seeded Gaussian noise to the regression channels. With
/// `honest_sigma`, σ channels are set to the expected absolute depth error
/// of each estimator given the injected noise (never below the floor).
pub fn perturb(ho: &HeadOutputs, spec: &NoiseSpec) -> Result<HeadOutputs> {
    if !(spec.sigma_floor > 0.0) {
        return Err(Error::Config(format!("sigma floor must be positive, got {}", spec.sigma_floor)));
    }
    let mut out = ho.clone();
    if spec.is_zero() && !spec.honest_sigma {
        return Ok(out);
    }
    let lay = ho.layout();
    let nb = ho.meta.num_bins;
    let mut groups: Vec<(Vec<usize>, f64)> = vec![
        ((lay.offset..lay.offset + 2).collect(), spec.offset),
        ((lay.box2d..lay.box2d + 4).collect(), spec.box2d),
        ((lay.dims..lay.dims + 3).collect(), spec.dims),
        ((lay.orient_logits..lay.orient_residuals + 2 * nb).collect(), spec.orientation),
        (vec![lay.depth], spec.depth),
    ];
    for src in [DepthSource::Center, DepthSource::Diag1, DepthSource::Diag2] {
        let chans = src
            .lines()
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .flat_map(|kp| [lay.keypoints + 2 * kp, lay.keypoints + 2 * kp + 1])
            .collect();
        groups.push((chans, spec.keypoint_sigma(src)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for (chans, sigma) in &groups {
        if *sigma == 0.0 {
            continue;
        }
        for &ch in chans {
            for v in out.map.channel_mut(ch) {
                let n: f64 = rng.sample(StandardNormal);
                *v += sigma * n;
            }
        }
    }

    if spec.honest_sigma {
        let s = ho.meta.stride as f64;
        let floor = spec.sigma_floor;
        for row in 0..ho.meta.hf {
            for col in 0..ho.meta.wf {
                let z = (-ho.map.get(lay.depth, row, col)).exp();
                let direct = (z * spec.depth * SQRT_2_OVER_PI).max(floor);
                out.map.set(lay.depth_log_sigma, row, col, direct.ln());
                for (i, src) in [DepthSource::Center, DepthSource::Diag1, DepthSource::Diag2]
                    .into_iter()
                    .enumerate()
                {
                    let px = s * spec.keypoint_sigma(src);
                    let mut var = 0.0;
                    let mut ok = true;
                    let lines = src.lines();
                    for &(bottom, top) in lines {
                        let hl = s
                            * (ho.map.get(lay.keypoints + 2 * bottom + 1, row, col)
                                - ho.map.get(lay.keypoints + 2 * top + 1, row, col));
                        if !(hl > 0.0) {
                            ok = false;
                            break;
                        }
                        // each line endpoint carries independent noise
                        let sd = z * std::f64::consts::SQRT_2 * px / hl;
                        var += sd * sd;
                    }
                    if !ok {
                        continue;
                    }
                    let std = var.sqrt() / lines.len() as f64;
                    let sigma = (std * SQRT_2_OVER_PI).max(floor);
                    out.map.set(lay.keypoint_log_sigma + i, row, col, sigma.ln());
                }
            }
        }
    }
    Ok(out)
}
