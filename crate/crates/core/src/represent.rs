//! Decoupled representative points for inside and truncated objects.
//!
//! Objects whose projected 3D center `xc` falls inside the image are
//! represented by `xc` itself; the rest by the point `xI` where the segment
//! from the 2D box center `xb` to `xc` leaves the image. Both regress an offset
//! from their feature cell to `xc / S`, so `xc = S * (cell + offset)` in both
//! cases.
//!
//! The feature grid is split into the boundary ring (outermost rows and
//! columns) and the interior. Interior cells carry 2D Gaussian peaks; the ring
//! is treated as a closed 1D signal in clockwise order and carries 1D
//! Gaussian peaks. Neither kind of splat writes into the other region.

use serde::{Deserialize, Serialize};

use crate::box3d::Box3D;
use crate::camera::{CameraIntrinsics, Point2};
use crate::error::{Error, Result};

/// Inset of the right/bottom image edge for representative points, so that a
/// point on the edge still falls in the outermost feature cell of `[0, W)`.
pub const EDGE_EPS: f64 = 1e-3;

/// Dense `c x h x w` grid, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { h, w, c, data: vec![0.0; c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({c}x{h}x{w})", c * h * w),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self { h, w, c, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn idx(&self, ch: usize, row: usize, col: usize) -> usize {
        debug_assert!(ch < self.c && row < self.h && col < self.w);
        (ch * self.h + row) * self.w + col
    }

    #[inline]
    pub fn get(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.data[self.idx(ch, row, col)]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, row: usize, col: usize, v: f64) {
        let i = self.idx(ch, row, col);
        self.data[i] = v;
    }

    #[inline]
    pub fn add(&mut self, ch: usize, row: usize, col: usize, v: f64) {
        let i = self.idx(ch, row, col);
        self.data[i] += v;
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[ch * n..(ch + 1) * n]
    }

    pub fn is_ring(&self, row: usize, col: usize) -> bool {
        is_ring_cell(self.h, self.w, row, col)
    }
}

/// Feature-grid size `(rows, cols)` for an image at downsample ratio `stride`.
pub fn feature_size(k: &CameraIntrinsics, stride: u32) -> (usize, usize) {
    let s = stride.max(1);
    (k.image_h.div_ceil(s) as usize, k.image_w.div_ceil(s) as usize)
}

// ---------------------------------------------------------------------------
// Boundary ring geometry
// ---------------------------------------------------------------------------

pub fn is_ring_cell(h: usize, w: usize, row: usize, col: usize) -> bool {
    row == 0 || col == 0 || row + 1 == h || col + 1 == w
}

/// Number of boundary cells, `2 (h + w) - 4`.
pub fn ring_len(h: usize, w: usize) -> usize {
    if h == 1 || w == 1 {
        return h * w;
    }
    2 * (h + w) - 4
}

/// Cell at clockwise position `idx`: top row left to right, right column
/// downwards, bottom row right to left, left column upwards.
pub fn ring_cell(h: usize, w: usize, idx: usize) -> (usize, usize) {
    debug_assert!(h >= 2 && w >= 2 && idx < ring_len(h, w));
    if idx < w {
        return (0, idx);
    }
    let i = idx - w;
    if i < h - 1 {
        return (i + 1, w - 1);
    }
    let i = i - (h - 1);
    if i < w - 1 {
        return (h - 1, w - 2 - i);
    }
    let i = i - (w - 1);
    (h - 2 - i, 0)
}

/// Inverse of [`ring_cell`]; `None` for interior cells.
pub fn ring_index(h: usize, w: usize, row: usize, col: usize) -> Option<usize> {
    if row >= h || col >= w || !is_ring_cell(h, w, row, col) {
        return None;
    }
    Some(if row == 0 {
        col
    } else if col == w - 1 {
        w - 1 + row
    } else if row == h - 1 {
        w + h - 2 + (w - 1 - col)
    } else {
        2 * w + h - 3 + (h - 1 - row)
    })
}

/// Distance between two ring positions going the short way around.
pub fn ring_distance(len: usize, a: usize, b: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(len - d)
}

// ---------------------------------------------------------------------------
// Representative points
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectKind {
    Inside,
    Outside,
}

/// Which 3D point of the box is projected to obtain `xc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    #[default]
    Volumetric,
    Bottom,
}

impl CenterMode {
    /// Vertical shift from the bottom-face location to the projected point.
    pub fn lift(self, h: f64) -> f64 {
        match self {
            CenterMode::Volumetric => -h / 2.0,
            CenterMode::Bottom => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Representation {
    pub kind: ObjectKind,
    /// Representative point in pixels (`xc` or the edge intersection).
    pub xr: Point2,
    pub xc: Point2,
    pub xb: Point2,
    /// `(row, col)` feature cell of `xr`.
    pub cell: (usize, usize),
    /// Offset from the cell to `xc / S`, in cells.
    pub offset: (f64, f64),
}

impl Representation {
    /// Whether the object is carried by the boundary ring of a `h x w` grid.
    pub fn on_ring(&self, h: usize, w: usize) -> bool {
        is_ring_cell(h, w, self.cell.0, self.cell.1)
    }
}

pub fn box2d_center(b: [f64; 4]) -> Point2 {
    Point2::new((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0)
}

pub fn classify_and_represent(
    box2d: [f64; 4],
    b: &Box3D,
    k: &CameraIntrinsics,
    stride: u32,
    center: CenterMode,
) -> Result<Representation> {
    if stride == 0 {
        return Err(Error::Precondition("downsample ratio must be >= 1".into()));
    }
    let s = stride as f64;
    let p = b.location + crate::camera::Point3::new(0.0, center.lift(b.h), 0.0);
    let xc = k.project(p)?;
    let xb = box2d_center(box2d);
    let (kind, xr) = if k.contains(xc) {
        (ObjectKind::Inside, xc)
    } else {
        if (xb.u - xc.u).abs() < 1e-12 && (xb.v - xc.v).abs() < 1e-12 {
            return Err(Error::Precondition(
                "2D box center coincides with an out-of-image projected center".into(),
            ));
        }
        (ObjectKind::Outside, edge_intersection(xb, xc, k.width(), k.height())?)
    };
    let col = (xr.u / s).floor();
    let row = (xr.v / s).floor();
    let offset = (xc.u / s - col, xc.v / s - row);
    Ok(Representation { kind, xr, xc, xb, cell: (row as usize, col as usize), offset })
}

/// Rectangle `[0, W - eps] x [0, H - eps]` that representative points live on.
fn clip_rect(image_w: f64, image_h: f64) -> [f64; 4] {
    [0.0, 0.0, image_w - EDGE_EPS, image_h - EDGE_EPS]
}

fn strictly_inside(p: Point2, r: [f64; 4]) -> bool {
    p.u > r[0] && p.u < r[2] && p.v > r[1] && p.v < r[3]
}

/// Point where the segment `xb -> xc` leaves the image.
///
/// `xb` must be strictly inside the image and `xc` outside the half-open image
/// `[0, W) x [0, H)`. The hit coordinate is snapped exactly onto the boundary.
pub fn edge_intersection(xb: Point2, xc: Point2, image_w: f64, image_h: f64) -> Result<Point2> {
    let r = clip_rect(image_w, image_h);
    if !strictly_inside(xb, r) {
        return Err(Error::Precondition(format!(
            "2D box center ({}, {}) is not strictly inside the image",
            xb.u, xb.v
        )));
    }
    let inside_image = xc.u >= 0.0 && xc.u < image_w && xc.v >= 0.0 && xc.v < image_h;
    if inside_image {
        return Err(Error::Precondition(format!(
            "projected center ({}, {}) is inside the image",
            xc.u, xc.v
        )));
    }
    let du = xc.u - xb.u;
    let dv = xc.v - xb.v;
    // exit parameter along each axis; xb is inside so every candidate is > 0
    let tu = if du < 0.0 {
        (r[0] - xb.u) / du
    } else if du > 0.0 {
        (r[2] - xb.u) / du
    } else {
        f64::INFINITY
    };
    let tv = if dv < 0.0 {
        (r[1] - xb.v) / dv
    } else if dv > 0.0 {
        (r[3] - xb.v) / dv
    } else {
        f64::INFINITY
    };
    let t = tu.min(tv).min(1.0);
    let mut q = Point2::new(xb.u + t * du, xb.v + t * dv);
    if tu <= tv {
        q.u = if du < 0.0 { r[0] } else { r[2] };
    }
    if tv <= tu {
        q.v = if dv < 0.0 { r[1] } else { r[3] };
    }
    Ok(q)
}

/// First point where the ray `origin + s * dir`, `s >= 0`, enters the
/// representative-point rectangle. `None` when the ray misses it.
pub fn ray_entry(origin: Point2, dir: Point2, image_w: f64, image_h: f64) -> Option<Point2> {
    let r = clip_rect(image_w, image_h);
    let mut t_in: f64 = 0.0;
    let mut t_out = f64::INFINITY;
    for (o, d, lo, hi) in [(origin.u, dir.u, r[0], r[2]), (origin.v, dir.v, r[1], r[3])] {
        if d == 0.0 {
            if o < lo || o > hi {
                return None;
            }
            continue;
        }
        let (a, b) = ((lo - o) / d, (hi - o) / d);
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        t_in = t_in.max(a);
        t_out = t_out.min(b);
    }
    if !(t_in <= t_out) || !t_in.is_finite() {
        return None;
    }
    let q = Point2::new(origin.u + t_in * dir.u, origin.v + t_in * dir.v);
    Some(Point2::new(q.u.clamp(r[0], r[2]), q.v.clamp(r[1], r[3])))
}

// ---------------------------------------------------------------------------
// Heatmap splats
// ---------------------------------------------------------------------------

/// Gaussian size rule: `sigma = max(min_sigma, rho * extent / S)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianConfig {
    pub rho: f64,
    pub min_sigma: f64,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        Self { rho: 1.0 / 6.0, min_sigma: 1.0 }
    }
}

impl GaussianConfig {
    /// Circular kernel for an interior object with a `box_w x box_h` 2D box.
    pub fn sigma_2d(&self, box_w: f64, box_h: f64, stride: u32) -> f64 {
        (self.rho * box_w.min(box_h) / stride as f64).max(self.min_sigma)
    }

    /// 1D kernel along the boundary; `extent` is the box size along that edge.
    pub fn sigma_edge(&self, extent: f64, stride: u32) -> f64 {
        (self.rho * extent / stride as f64).max(self.min_sigma)
    }
}

/// Truncation radius of a splat, in cells.
pub fn splat_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplatRegion {
    Full,
    /// Only cells off the boundary ring are written.
    Interior,
}

/// Writes `max(existing, exp(-d^2 / (2 sigma^2)))` over the square window of
/// radius [`splat_radius`] around `center = (row, col)`.
pub fn splat_gaussian(
    map: &mut FeatureMap,
    ch: usize,
    center: (usize, usize),
    sigma: f64,
    region: SplatRegion,
) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Precondition(format!("Gaussian radius must be positive, got {sigma}")));
    }
    let (h, w) = (map.height(), map.width());
    let (cr, cc) = center;
    if cr >= h || cc >= w || ch >= map.channels() {
        return Err(Error::Precondition(format!("splat center {center:?} outside the grid")));
    }
    let (lo_r, hi_r, lo_c, hi_c) = match region {
        SplatRegion::Full => (0, h - 1, 0, w - 1),
        SplatRegion::Interior => {
            if is_ring_cell(h, w, cr, cc) {
                return Err(Error::Precondition(format!(
                    "interior splat centered on boundary cell {center:?}"
                )));
            }
            (1, h - 2, 1, w - 2)
        }
    };
    let rad = splat_radius(sigma);
    let denom = 2.0 * sigma * sigma;
    for r in cr.saturating_sub(rad).max(lo_r)..=(cr + rad).min(hi_r) {
        for c in cc.saturating_sub(rad).max(lo_c)..=(cc + rad).min(hi_c) {
            let dr = r as f64 - cr as f64;
            let dc = c as f64 - cc as f64;
            let g = (-(dr * dr + dc * dc) / denom).exp();
            if g > map.get(ch, r, c) {
                map.set(ch, r, c, g);
            }
        }
    }
    Ok(())
}

/// 1D Gaussian along the boundary ring around ring position `center_idx`.
/// Distances are measured along the ring, wrapping around corners.
pub fn splat_gaussian_ring(
    map: &mut FeatureMap,
    ch: usize,
    center_idx: usize,
    sigma: f64,
) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Precondition(format!("Gaussian radius must be positive, got {sigma}")));
    }
    let (h, w) = (map.height(), map.width());
    if h < 2 || w < 2 {
        return Err(Error::Precondition("ring splat needs a grid of at least 2x2".into()));
    }
    let len = ring_len(h, w);
    if center_idx >= len || ch >= map.channels() {
        return Err(Error::Precondition(format!("ring position {center_idx} outside ring of {len}")));
    }
    let rad = splat_radius(sigma).min(len / 2);
    let denom = 2.0 * sigma * sigma;
    for step in 0..=2 * rad {
        let idx = (center_idx + len + step - rad) % len;
        let d = ring_distance(len, idx, center_idx) as f64;
        let g = (-(d * d) / denom).exp();
        let (r, c) = ring_cell(h, w, idx);
        if g > map.get(ch, r, c) {
            map.set(ch, r, c, g);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 2D box distances
// ---------------------------------------------------------------------------

/// Distances `(l, t, r, b)` from `xr` to the four sides of `box2d`.
/// Negative values are allowed when `xr` lies outside the box.
pub fn fcos_distances(xr: Point2, box2d: [f64; 4]) -> [f64; 4] {
    [xr.u - box2d[0], xr.v - box2d[1], box2d[2] - xr.u, box2d[3] - xr.v]
}

pub fn box_from_distances(xr: Point2, d: [f64; 4]) -> [f64; 4] {
    [xr.u - d[0], xr.v - d[1], xr.u + d[2], xr.v + d[3]]
}

// ---------------------------------------------------------------------------
// Edge fusion data path
// ---------------------------------------------------------------------------

/// Boundary cells of a feature map in clockwise order, `c` values per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeVector {
    pub c: usize,
    pub data: Vec<f64>,
}

impl EdgeVector {
    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.c).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.data[i * self.c..(i + 1) * self.c]
    }
}

pub fn extract_edge_vector(fm: &FeatureMap) -> Result<EdgeVector> {
    let (c, h, w) = fm.shape();
    if h < 2 || w < 2 {
        return Err(Error::Precondition(format!("edge extraction needs h, w >= 2, got {h}x{w}")));
    }
    let len = ring_len(h, w);
    let mut data = Vec::with_capacity(len * c);
    for idx in 0..len {
        let (r, col) = ring_cell(h, w, idx);
        data.extend((0..c).map(|ch| fm.get(ch, r, col)));
    }
    Ok(EdgeVector { c, data })
}

/// Adds `vec` back onto the boundary cells it was extracted from.
pub fn scatter_edge_vector(fm: &mut FeatureMap, vec: &EdgeVector) -> Result<()> {
    let (c, h, w) = fm.shape();
    if h < 2 || w < 2 {
        return Err(Error::Precondition(format!("edge scatter needs h, w >= 2, got {h}x{w}")));
    }
    let len = ring_len(h, w);
    if vec.c != c || vec.data.len() != len * c {
        return Err(Error::ShapeMismatch {
            expected: format!("{len} entries of {c} channels"),
            got: format!("{} values of {} channels", vec.data.len(), vec.c),
        });
    }
    for idx in 0..len {
        let (r, col) = ring_cell(h, w, idx);
        for (ch, v) in vec.entry(idx).iter().enumerate() {
            fm.add(ch, r, col, *v);
        }
    }
    Ok(())
}

/// Linear map applied to the extracted boundary vector before it is added
/// back. Stands in for the learned 1D convolutions.
pub trait EdgeTransform {
    fn apply(&self, edge: &EdgeVector) -> Result<EdgeVector>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTransform;

impl EdgeTransform for IdentityTransform {
    fn apply(&self, edge: &EdgeVector) -> Result<EdgeVector> {
        Ok(edge.clone())
    }
}

/// Zero-padded 1D convolution over the clockwise sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `weights[out][in][tap]`, odd number of taps.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub bias: Vec<f64>,
}

impl EdgeTransform for Conv1d {
    fn apply(&self, edge: &EdgeVector) -> Result<EdgeVector> {
        let out_c = self.weights.len();
        if self.bias.len() != out_c {
            return Err(Error::ShapeMismatch {
                expected: format!("{out_c} biases"),
                got: format!("{}", self.bias.len()),
            });
        }
        let taps = self.weights.first().and_then(|w| w.first()).map_or(0, Vec::len);
        if taps.is_multiple_of(2) {
            return Err(Error::Precondition("convolution needs an odd number of taps".into()));
        }
        if self.weights.iter().any(|w| w.len() != edge.c || w.iter().any(|k| k.len() != taps)) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} input channels x {taps} taps", edge.c),
                got: "ragged weights".into(),
            });
        }
        let n = edge.len();
        let half = taps / 2;
        let mut data = vec![0.0; n * out_c];
        for i in 0..n {
            for (o, wo) in self.weights.iter().enumerate() {
                let mut acc = self.bias[o];
                for (t, _) in wo[0].iter().enumerate() {
                    let j = i as isize + t as isize - half as isize;
                    if j < 0 || j >= n as isize {
                        continue;
                    }
                    let e = edge.entry(j as usize);
                    acc += wo.iter().zip(e).map(|(k, x)| k[t] * x).sum::<f64>();
                }
                data[i * out_c + o] = acc;
            }
        }
        Ok(EdgeVector { c: out_c, data })
    }
}

/// Extract the boundary, transform it, and add the result back in place.
pub fn edge_fusion(fm: &mut FeatureMap, transform: &dyn EdgeTransform) -> Result<()> {
    let edge = extract_edge_vector(fm)?;
    let out = transform.apply(&edge)?;
    scatter_edge_vector(fm, &out)
}
