//! Dense head maps: ground-truth target encoding and detection decoding.
//!
//! Every object is carried by one feature cell. Cells on the outermost ring
//! of the grid form a closed one-dimensional signal and are read and written
//! only by the ring path; all other cells belong to the interior path, whose
//! peak test and regressions never look at ring cells.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::box3d::{Box3D, Keypoints10, NUM_KEYPOINTS};
use crate::camera::{alpha_to_ry, ry_to_alpha, CameraIntrinsics, Point2, Point3};
use crate::depthsolve::{
    combine, direct_depth, direct_depth_target, keypoint_depths, soft_ensemble, DepthEstimate,
    DepthSource, EnsembleMode,
};
use crate::error::{Error, Result};
use crate::kitti::ObjectLabel;
use crate::losses::{default_mean_dims, MeanDims, MultiBin};
use crate::represent::{
    box_from_distances, classify_and_represent, fcos_distances, feature_size, is_ring_cell,
    ray_entry, ring_cell, ring_index, ring_len, splat_gaussian, splat_gaussian_ring, CenterMode,
    FeatureMap, GaussianConfig, ObjectKind, SplatRegion, EDGE_EPS,
};

pub const FORMAT_VERSION: u32 = 1;

/// Settings shared by encoding and decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub class_names: Vec<String>,
    pub stride: u32,
    pub bins: MultiBin,
    pub mean_dims: BTreeMap<String, MeanDims>,
    pub gaussian: GaussianConfig,
    pub center_mode: CenterMode,
    /// Uncertainty written into target σ channels.
    pub sigma_floor: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            class_names: vec!["Car".into(), "Pedestrian".into(), "Cyclist".into()],
            stride: 4,
            bins: MultiBin::default(),
            mean_dims: default_mean_dims(),
            gaussian: GaussianConfig::default(),
            center_mode: CenterMode::Volumetric,
            sigma_floor: 0.01,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("downsample ratio must be >= 1".into()));
        }
        if self.class_names.is_empty() {
            return Err(Error::Config("at least one class is required".into()));
        }
        if self.bins.num_bins() == 0 {
            return Err(Error::Config("orientation needs at least one bin".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Config(format!("sigma floor must be positive, got {}", self.sigma_floor)));
        }
        for c in &self.class_names {
            if !self.mean_dims.contains_key(c) {
                return Err(Error::UnknownClass(c.clone()));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn meta(&self, k: &CameraIntrinsics) -> HeadMeta {
        let (hf, wf) = feature_size(k, self.stride);
        HeadMeta {
            hf,
            wf,
            stride: self.stride,
            class_names: self.class_names.clone(),
            num_bins: self.bins.num_bins(),
        }
    }
}

/// Shape description of a set of head maps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadMeta {
    pub hf: usize,
    pub wf: usize,
    pub stride: u32,
    pub class_names: Vec<String>,
    pub num_bins: usize,
}

/// First channel of every head group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub heatmap: usize,
    pub offset: usize,
    pub box2d: usize,
    pub dims: usize,
    pub orient_logits: usize,
    /// `(sin, cos)` pairs, one per bin.
    pub orient_residuals: usize,
    /// `(du, dv)` pairs, one per keypoint.
    pub keypoints: usize,
    pub depth: usize,
    pub depth_log_sigma: usize,
    pub keypoint_log_sigma: usize,
    pub total: usize,
}

impl HeadMeta {
    /// `(name, channel count)` of every group, in storage order.
    pub fn groups(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("heatmap", self.class_names.len()),
            ("offset", 2),
            ("box2d", 4),
            ("dims", 3),
            ("orientation_logits", self.num_bins),
            ("orientation_residuals", 2 * self.num_bins),
            ("keypoints", 2 * NUM_KEYPOINTS),
            ("depth", 1),
            ("depth_log_sigma", 1),
            ("keypoint_log_sigma", 3),
        ]
    }

    pub fn layout(&self) -> HeadLayout {
        let mut starts = [0usize; 10];
        let mut acc = 0;
        for (i, (_, n)) in self.groups().into_iter().enumerate() {
            starts[i] = acc;
            acc += n;
        }
        HeadLayout {
            heatmap: starts[0],
            offset: starts[1],
            box2d: starts[2],
            dims: starts[3],
            orient_logits: starts[4],
            orient_residuals: starts[5],
            keypoints: starts[6],
            depth: starts[7],
            depth_log_sigma: starts[8],
            keypoint_log_sigma: starts[9],
            total: acc,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChannelGroup {
    name: String,
    count: usize,
}

/// JSON header stored next to the flat binary.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    version: u32,
    dtype: String,
    layout: String,
    hf: usize,
    wf: usize,
    stride: u32,
    class_names: Vec<String>,
    num_bins: usize,
    channels: Vec<ChannelGroup>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonHeads {
    #[serde(flatten)]
    header: Sidecar,
    data: Vec<f64>,
}

/// All head maps of one image, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub meta: HeadMeta,
    pub map: FeatureMap,
}

impl HeadOutputs {
    pub fn zeros(meta: HeadMeta) -> Self {
        let map = FeatureMap::zeros(meta.num_channels(), meta.hf, meta.wf);
        Self { meta, map }
    }

    pub fn layout(&self) -> HeadLayout {
        self.meta.layout()
    }

    fn sidecar(&self) -> Sidecar {
        Sidecar {
            version: FORMAT_VERSION,
            dtype: "f32le".into(),
            layout: "CHW".into(),
            hf: self.meta.hf,
            wf: self.meta.wf,
            stride: self.meta.stride,
            class_names: self.meta.class_names.clone(),
            num_bins: self.meta.num_bins,
            channels: self
                .meta
                .groups()
                .into_iter()
                .map(|(n, c)| ChannelGroup { name: n.into(), count: c })
                .collect(),
        }
    }

    fn meta_from_sidecar(s: &Sidecar) -> Result<HeadMeta> {
        if s.version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported head-map format version {}", s.version)));
        }
        if s.layout != "CHW" {
            return Err(Error::Config(format!("unsupported layout `{}`", s.layout)));
        }
        let meta = HeadMeta {
            hf: s.hf,
            wf: s.wf,
            stride: s.stride,
            class_names: s.class_names.clone(),
            num_bins: s.num_bins,
        };
        let expected: Vec<(String, usize)> =
            meta.groups().into_iter().map(|(n, c)| (n.to_string(), c)).collect();
        let got: Vec<(String, usize)> = s.channels.iter().map(|g| (g.name.clone(), g.count)).collect();
        if expected != got {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected:?}"),
                got: format!("{got:?}"),
            });
        }
        Ok(meta)
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&self.sidecar()).expect("sidecar serializes")
    }

    /// Little-endian `f32` values in `C x Hf x Wf` order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.map.data().len() * 4);
        for v in self.map.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_parts(sidecar_json: &str, bytes: &[u8]) -> Result<Self> {
        let s: Sidecar = serde_json::from_str(sidecar_json)?;
        if s.dtype != "f32le" {
            return Err(Error::Config(format!("unsupported dtype `{}`", s.dtype)));
        }
        let meta = Self::meta_from_sidecar(&s)?;
        let n = meta.num_channels() * meta.hf * meta.wf;
        if bytes.len() != 4 * n {
            return Err(Error::ShapeMismatch {
                expected: format!("{} bytes", 4 * n),
                got: format!("{} bytes", bytes.len()),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let map = FeatureMap::from_vec(meta.num_channels(), meta.hf, meta.wf, data)?;
        Ok(Self { meta, map })
    }

    /// Writes `path` (binary) and `path` with a `.json` extension (header).
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        std::fs::write(path.with_extension("json"), self.sidecar_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let header = std::fs::read_to_string(path.with_extension("json"))?;
        Self::from_parts(&header, &bytes)
    }

    /// Self-contained JSON text with full `f64` values.
    pub fn to_json_text(&self) -> String {
        let mut header = self.sidecar();
        header.dtype = "f64".into();
        serde_json::to_string(&JsonHeads { header, data: self.map.data().to_vec() })
            .expect("head maps serialize")
    }

    pub fn from_json_text(text: &str) -> Result<Self> {
        let j: JsonHeads = serde_json::from_str(text)?;
        let meta = Self::meta_from_sidecar(&j.header)?;
        let map = FeatureMap::from_vec(meta.num_channels(), meta.hf, meta.wf, j.data)?;
        Ok(Self { meta, map })
    }
}

// ---------------------------------------------------------------------------
// Target encoding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeStats {
    pub encoded: usize,
    pub inside: usize,
    pub outside: usize,
    /// Part of the box lies at or behind the image plane.
    pub skipped_behind_camera: usize,
    /// DontCare rows and classes without a heatmap channel.
    pub skipped_class: usize,
    /// Boxes whose representative point cannot be formed.
    pub skipped_degenerate: usize,
    /// Objects whose cell was already taken; the later one wins.
    pub collisions: usize,
}

/// Heatmap kernel extent along the ring at cell `(row, col)`: the box height
/// on the left and right columns (corners included), the width elsewhere.
fn ring_extent(box2d: [f64; 4], col: usize, wf: usize) -> f64 {
    if col == 0 || col + 1 == wf {
        box2d[3] - box2d[1]
    } else {
        box2d[2] - box2d[0]
    }
}

/// Ground-truth head maps for one image.
pub fn encode_targets(
    labels: &[ObjectLabel],
    k: &CameraIntrinsics,
    cfg: &HeadConfig,
) -> Result<(HeadOutputs, EncodeStats)> {
    cfg.validate()?;
    k.validate()?;
    let meta = cfg.meta(k);
    let lay = meta.layout();
    let (hf, wf) = (meta.hf, meta.wf);
    let s = cfg.stride as f64;
    let mut ho = HeadOutputs::zeros(meta);
    let mut stats = EncodeStats::default();
    let mut taken = vec![false; hf * wf];
    let log_floor = cfg.sigma_floor.ln();

    for label in labels {
        let Some(cls) = cfg.class_index(&label.class_name) else {
            stats.skipped_class += 1;
            continue;
        };
        let b = label.box3d();
        let kps = match b.keypoints10(k) {
            Ok(kps) => kps,
            Err(Error::BehindCamera { .. }) => {
                stats.skipped_behind_camera += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let rep = match b
            .validate()
            .and_then(|_| classify_and_represent(label.bbox, &b, k, cfg.stride, cfg.center_mode))
        {
            Ok(r) if r.cell.0 < hf && r.cell.1 < wf => r,
            _ => {
                stats.skipped_degenerate += 1;
                continue;
            }
        };
        let (row, col) = rep.cell;
        let bw = label.bbox[2] - label.bbox[0];
        let bh = label.bbox[3] - label.bbox[1];
        let hm = lay.heatmap + cls;
        if let Some(idx) = ring_index(hf, wf, row, col) {
            let sigma = cfg.gaussian.sigma_edge(ring_extent(label.bbox, col, wf), cfg.stride);
            splat_gaussian_ring(&mut ho.map, hm, idx, sigma)?;
        } else {
            let sigma = cfg.gaussian.sigma_2d(bw, bh, cfg.stride);
            splat_gaussian(&mut ho.map, hm, (row, col), sigma, SplatRegion::Interior)?;
        }
        if taken[row * wf + col] {
            stats.collisions += 1;
        }
        taken[row * wf + col] = true;
        match rep.kind {
            ObjectKind::Inside => stats.inside += 1,
            ObjectKind::Outside => stats.outside += 1,
        }

        let m = &mut ho.map;
        m.set(lay.offset, row, col, rep.offset.0);
        m.set(lay.offset + 1, row, col, rep.offset.1);
        for (i, d) in fcos_distances(rep.xr, label.bbox).into_iter().enumerate() {
            m.set(lay.box2d + i, row, col, d / s);
        }
        let mean = cfg.mean_dims[&label.class_name].as_array();
        for (i, (v, mv)) in [b.h, b.w, b.l].into_iter().zip(mean).enumerate() {
            m.set(lay.dims + i, row, col, (v / mv).ln());
        }
        // the label's alpha column is rounded; derive it from ry instead
        let alpha = ry_to_alpha(b.ry, b.location.x, b.location.z)?;
        let (logits, residuals) = cfg.bins.encode(alpha);
        for (i, (lg, (sn, cs))) in logits.into_iter().zip(residuals).enumerate() {
            m.set(lay.orient_logits + i, row, col, lg);
            m.set(lay.orient_residuals + 2 * i, row, col, sn);
            m.set(lay.orient_residuals + 2 * i + 1, row, col, cs);
        }
        for (i, p) in kps.pts.iter().enumerate() {
            m.set(lay.keypoints + 2 * i, row, col, (p.u - rep.xr.u) / s);
            m.set(lay.keypoints + 2 * i + 1, row, col, (p.v - rep.xr.v) / s);
        }
        m.set(lay.depth, row, col, direct_depth_target(b.location.z)?);
        m.set(lay.depth_log_sigma, row, col, log_floor);
        for i in 0..3 {
            m.set(lay.keypoint_log_sigma + i, row, col, log_floor);
        }
        stats.encoded += 1;
    }
    Ok((ho, stats))
}

// ---------------------------------------------------------------------------
// Map access
// ---------------------------------------------------------------------------

/// Read access to head maps, so decoding can be instrumented.
pub trait MapView {
    fn value(&self, ch: usize, row: usize, col: usize) -> f64;
}

impl MapView for FeatureMap {
    fn value(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.get(ch, row, col)
    }
}

/// A view that logs every `(channel, row, col)` it serves.
pub struct RecordingView<'a> {
    map: &'a FeatureMap,
    log: RefCell<Vec<(usize, usize, usize)>>,
}

impl<'a> RecordingView<'a> {
    pub fn new(map: &'a FeatureMap) -> Self {
        Self { map, log: RefCell::new(Vec::new()) }
    }

    /// Returns and clears the access log.
    pub fn take(&self) -> Vec<(usize, usize, usize)> {
        std::mem::take(&mut *self.log.borrow_mut())
    }
}

impl MapView for RecordingView<'_> {
    fn value(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.log.borrow_mut().push((ch, row, col));
        self.map.get(ch, row, col)
    }
}

// ---------------------------------------------------------------------------
// Peaks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub class: usize,
    pub row: usize,
    pub col: usize,
    pub score: f64,
}

/// Neighbours a cell is compared with: the interior cells of its 3x3 window
/// for interior cells, the two adjacent ring cells for ring cells.
pub fn peak_neighbors(hf: usize, wf: usize, row: usize, col: usize) -> Vec<(usize, usize)> {
    if let Some(idx) = ring_index(hf, wf, row, col) {
        let len = ring_len(hf, wf);
        let mut v = vec![ring_cell(hf, wf, (idx + 1) % len), ring_cell(hf, wf, (idx + len - 1) % len)];
        v.retain(|&c| c != (row, col));
        v.dedup();
        return v;
    }
    let mut v = Vec::with_capacity(8);
    for r in row - 1..=row + 1 {
        for c in col - 1..=col + 1 {
            if (r, c) != (row, col) && !is_ring_cell(hf, wf, r, c) {
                v.push((r, c));
            }
        }
    }
    v
}

/// Local-maximum test; among equal neighbours the lowest `(row, col)` wins.
pub fn is_peak<V: MapView + ?Sized>(
    view: &V,
    ch: usize,
    hf: usize,
    wf: usize,
    row: usize,
    col: usize,
) -> bool {
    let v = view.value(ch, row, col);
    peak_neighbors(hf, wf, row, col).into_iter().all(|(r, c)| {
        let n = view.value(ch, r, c);
        n < v || (n == v && (row, col) < (r, c))
    })
}

/// Local maxima above `threshold` over all classes, highest first; ties are
/// ordered by class, row, column. At most `k` are returned.
pub fn topk_peaks<V: MapView + ?Sized>(
    view: &V,
    heatmap_start: usize,
    num_classes: usize,
    hf: usize,
    wf: usize,
    k: usize,
    threshold: f64,
) -> Vec<Peak> {
    let mut peaks = Vec::new();
    for cls in 0..num_classes {
        let ch = heatmap_start + cls;
        for row in 0..hf {
            for col in 0..wf {
                let v = view.value(ch, row, col);
                if v > threshold && is_peak(view, ch, hf, wf, row, col) {
                    peaks.push(Peak { class: cls, row, col, score: v });
                }
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.class.cmp(&b.class))
            .then((a.row, a.col).cmp(&(b.row, b.col)))
    });
    peaks.truncate(k);
    peaks
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub max_detections: usize,
    pub score_threshold: f64,
    pub mode: EnsembleMode,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { max_detections: 50, score_threshold: 0.1, mode: EnsembleMode::Soft }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class: String,
    pub score: f64,
    pub cell: (usize, usize),
    /// Decoded through the boundary-ring path.
    pub ring: bool,
    pub box2d: [f64; 4],
    pub box3d: Box3D,
    pub alpha: f64,
    /// Decoded projected center `xc`.
    pub center_proj: Point2,
    /// Direct, center, diag1, diag2.
    pub depths: [DepthEstimate; 4],
    /// Uncertainty-weighted combination of the valid estimates.
    pub z_soft: f64,
    center_mode: CenterMode,
}

impl Detection {
    /// Relocates the box to depth `z` along the ray through `center_proj`,
    /// keeping the decoded local orientation.
    pub fn with_depth(&self, z: f64, k: &CameraIntrinsics) -> Result<Self> {
        let mut d = self.clone();
        d.box3d = place_box(self.center_proj, z, self.box3d.h, self.box3d.w, self.box3d.l, self.alpha, self.center_mode, k)?;
        Ok(d)
    }

    pub fn estimate(&self, src: DepthSource) -> &DepthEstimate {
        &self.depths[src as usize]
    }

    /// KITTI prediction row; the 2D box is clipped to the image.
    pub fn to_label(&self, k: &CameraIntrinsics) -> ObjectLabel {
        let b = &self.box3d;
        let clip = |v: f64, hi: f64| v.clamp(0.0, hi);
        ObjectLabel {
            class_name: self.class.clone(),
            truncation: -1.0,
            occlusion: -1,
            alpha: self.alpha,
            bbox: [
                clip(self.box2d[0], k.width()),
                clip(self.box2d[1], k.height()),
                clip(self.box2d[2], k.width()),
                clip(self.box2d[3], k.height()),
            ],
            h: b.h,
            w: b.w,
            l: b.l,
            x: b.location.x,
            y: b.location.y,
            z: b.location.z,
            ry: b.ry,
            score: Some(self.score),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn place_box(
    xc: Point2,
    z: f64,
    h: f64,
    w: f64,
    l: f64,
    alpha: f64,
    center_mode: CenterMode,
    k: &CameraIntrinsics,
) -> Result<Box3D> {
    let c = k.backproject(xc, z)?;
    let location = Point3::new(c.x, c.y - center_mode.lift(h), c.z);
    let ry = alpha_to_ry(alpha, location.x, location.z)?;
    Box3D::new(location, h, w, l, ry)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeOutput {
    pub detections: Vec<Detection>,
    /// Peaks discarded because their regressions were unusable.
    pub dropped: usize,
}

/// Representative point of a ring peak whose decoded center lies outside the
/// image: where the ray from `xc` towards the 2D-box center enters the image.
fn ring_representative(xc: Point2, dist: [f64; 4], cell: (usize, usize), s: f64, k: &CameraIntrinsics) -> Point2 {
    let dir = Point2::new((dist[2] - dist[0]) / 2.0, (dist[3] - dist[1]) / 2.0);
    ray_entry(xc, dir, k.width(), k.height()).unwrap_or_else(|| {
        Point2::new(
            ((cell.1 as f64 + 0.5) * s).clamp(0.0, k.width() - EDGE_EPS),
            ((cell.0 as f64 + 0.5) * s).clamp(0.0, k.height() - EDGE_EPS),
        )
    })
}

/// Decodes the object carried by `peak`. Only the peak cell is read.
pub fn decode_peak<V: MapView + ?Sized>(
    view: &V,
    meta: &HeadMeta,
    peak: &Peak,
    k: &CameraIntrinsics,
    cfg: &HeadConfig,
    mode: EnsembleMode,
) -> Result<Detection> {
    let lay = meta.layout();
    let (row, col) = (peak.row, peak.col);
    let get = |ch: usize| view.value(ch, row, col);
    let s = meta.stride as f64;
    let ring = is_ring_cell(meta.hf, meta.wf, row, col);

    let xc = Point2::new(s * (col as f64 + get(lay.offset)), s * (row as f64 + get(lay.offset + 1)));
    let dist_cells: [f64; 4] = std::array::from_fn(|i| get(lay.box2d + i));
    let dist = dist_cells.map(|d| d * s);
    let xr = if ring && !k.contains(xc) {
        ring_representative(xc, dist, (row, col), s, k)
    } else {
        xc
    };
    let box2d = box_from_distances(xr, dist);

    let class = meta.class_names[peak.class].clone();
    let mean = cfg.mean_dims.get(&class).ok_or_else(|| Error::UnknownClass(class.clone()))?;
    let [h, w, l] = [0, 1, 2].map(|i| mean.as_array()[i] * get(lay.dims + i).exp());

    let nb = meta.num_bins;
    let logits: Vec<f64> = (0..nb).map(|i| get(lay.orient_logits + i)).collect();
    let residuals: Vec<(f64, f64)> = (0..nb)
        .map(|i| (get(lay.orient_residuals + 2 * i), get(lay.orient_residuals + 2 * i + 1)))
        .collect();
    let alpha = cfg.bins.decode(&logits, &residuals)?;

    let pts: [Point2; NUM_KEYPOINTS] = std::array::from_fn(|i| {
        Point2::new(xr.u + s * get(lay.keypoints + 2 * i), xr.v + s * get(lay.keypoints + 2 * i + 1))
    });
    let kps = Keypoints10::from_points(pts, k);
    let direct = DepthEstimate::new(
        direct_depth(get(lay.depth)),
        get(lay.depth_log_sigma).exp(),
        true,
        DepthSource::Direct,
    );
    let geo = keypoint_depths(&kps, h, k.fy);
    let mut depths = [direct, geo[0], geo[1], geo[2]];
    for (i, d) in depths.iter_mut().skip(1).enumerate() {
        d.sigma = get(lay.keypoint_log_sigma + i).exp();
        d.valid &= d.z.is_finite() && d.z > 0.0 && d.sigma > 0.0 && d.sigma.is_finite();
    }

    let finite = xc.is_finite()
        && box2d.iter().all(|v| v.is_finite())
        && [h, w, l, alpha, direct.z, direct.sigma].iter().all(|v| v.is_finite())
        && direct.z > 0.0
        && direct.sigma > 0.0;
    if !finite {
        return Err(Error::Domain("non-finite regression at peak".into()));
    }

    let usable: Vec<DepthEstimate> = depths.iter().copied().filter(|d| d.valid).collect();
    let z_soft = soft_ensemble(&usable)?;
    let z = match mode {
        EnsembleMode::Soft => z_soft,
        other => combine(&depths, other)?,
    };
    let box3d = place_box(xc, z, h, w, l, alpha, cfg.center_mode, k)?;
    Ok(Detection {
        class,
        score: peak.score,
        cell: (row, col),
        ring,
        box2d,
        box3d,
        alpha,
        center_proj: xc,
        depths,
        z_soft,
        center_mode: cfg.center_mode,
    })
}

fn check_meta(meta: &HeadMeta, k: &CameraIntrinsics, cfg: &HeadConfig) -> Result<()> {
    let expected = cfg.meta(k);
    if *meta != expected {
        return Err(Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            got: format!("{meta:?}"),
        });
    }
    Ok(())
}

/// Decodes through an arbitrary view of `meta`-shaped maps.
pub fn decode_view<V: MapView + ?Sized>(
    view: &V,
    meta: &HeadMeta,
    k: &CameraIntrinsics,
    head: &HeadConfig,
    cfg: &DecodeConfig,
) -> Result<DecodeOutput> {
    head.validate()?;
    check_meta(meta, k, head)?;
    let lay = meta.layout();
    let peaks = topk_peaks(
        view,
        lay.heatmap,
        meta.class_names.len(),
        meta.hf,
        meta.wf,
        cfg.max_detections,
        cfg.score_threshold,
    );
    let mut out = DecodeOutput::default();
    for p in &peaks {
        match decode_peak(view, meta, p, k, head, cfg.mode) {
            Ok(d) => out.detections.push(d),
            Err(Error::Domain(_)) | Err(Error::EmptyEstimates) | Err(Error::BehindCamera { .. }) => {
                out.dropped += 1
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn decode_detections(
    ho: &HeadOutputs,
    k: &CameraIntrinsics,
    head: &HeadConfig,
    cfg: &DecodeConfig,
) -> Result<DecodeOutput> {
    decode_view(&ho.map, &ho.meta, k, head, cfg)
}
