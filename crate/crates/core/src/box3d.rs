//! Yaw-only 3D boxes in the camera frame.
//!
//! `location` is the bottom-face center (KITTI convention), the box extends
//! upwards to `y - h`. Corner numbering (1-based, as in the keypoint layout):
//!
//! ```text
//!   box frame, seen from above (x right, z up the page)
//!
//!        2 ------- 1        corners 5..8 sit directly above 1..4
//!        |         |        (same x/z, y = -h); vertical edge i joins
//!        |    o    |  --> x  corner i and corner i + 4.
//!        |         |
//!        3 ------- 4
//! ```
//!
//! Corner 1 is `(+l/2, 0, +w/2)`. Opposite pairs (1, 3) and (2, 4) form the
//! two diagonal keypoint groups used for depth solving.

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Point2, Point3};
use crate::error::{Error, Result};

pub const NUM_KEYPOINTS: usize = 10;
/// Index of the bottom-center keypoint (k9).
pub const BOTTOM_CENTER: usize = 8;
/// Index of the top-center keypoint (k10).
pub const TOP_CENTER: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub location: Point3,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub ry: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoints10 {
    pub pts: [Point2; NUM_KEYPOINTS],
    pub inside: [bool; NUM_KEYPOINTS],
}

impl Keypoints10 {
    /// Builds the set from raw pixel positions, deriving the inside mask.
    pub fn from_points(pts: [Point2; NUM_KEYPOINTS], k: &CameraIntrinsics) -> Self {
        let inside = pts.map(|p| k.contains(p));
        Self { pts, inside }
    }
}

impl Box3D {
    pub fn new(location: Point3, h: f64, w: f64, l: f64, ry: f64) -> Result<Self> {
        let b = Self { location, h, w, l, ry };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.w > 0.0 && self.l > 0.0) {
            return Err(Error::Domain(format!(
                "box dimensions must be positive (h = {}, w = {}, l = {})",
                self.h, self.w, self.l
            )));
        }
        if !self.location.is_finite() || !self.ry.is_finite() {
            return Err(Error::Domain("box location and yaw must be finite".into()));
        }
        Ok(())
    }

    /// Geometric center of the cuboid.
    pub fn volumetric_center(&self) -> Point3 {
        self.location + Point3::new(0.0, -self.h / 2.0, 0.0)
    }

    pub fn top_center(&self) -> Point3 {
        self.location + Point3::new(0.0, -self.h, 0.0)
    }

    pub fn volume(&self) -> f64 {
        self.h * self.w * self.l
    }

    /// Rotates a box-frame offset `(x, z)` by `ry` about the vertical axis.
    fn rotate_xz(&self, x: f64, z: f64) -> (f64, f64) {
        let (s, c) = self.ry.sin_cos();
        (c * x + s * z, -s * x + c * z)
    }

    /// The four bottom corners in the ground plane as `(x, z)`, in corner order.
    pub fn bev_corners(&self) -> [(f64, f64); 4] {
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(x, z)| {
            let (rx, rz) = self.rotate_xz(x, z);
            (rx + self.location.x, rz + self.location.z)
        })
    }

    pub fn corners(&self) -> [Point3; 8] {
        let bev = self.bev_corners();
        let y0 = self.location.y;
        let y1 = self.location.y - self.h;
        std::array::from_fn(|i| {
            let (x, z) = bev[i % 4];
            Point3::new(x, if i < 4 { y0 } else { y1 }, z)
        })
    }

    /// The 3D points behind the ten keypoints: 8 corners, bottom and top center.
    pub fn keypoint_points(&self) -> [Point3; NUM_KEYPOINTS] {
        let c = self.corners();
        std::array::from_fn(|i| match i {
            0..=7 => c[i],
            BOTTOM_CENTER => self.location,
            _ => self.top_center(),
        })
    }

    pub fn keypoints10(&self, k: &CameraIntrinsics) -> Result<Keypoints10> {
        let pts3 = self.keypoint_points();
        if let Some(p) = pts3.iter().find(|p| !(p.z > 0.0)) {
            return Err(Error::BehindCamera { z: p.z });
        }
        let mut pts = [Point2::default(); NUM_KEYPOINTS];
        for (dst, p) in pts.iter_mut().zip(pts3) {
            *dst = k.project(p)?;
        }
        Ok(Keypoints10::from_points(pts, k))
    }

    /// Tight axis-aligned 2D box `(u1, v1, u2, v2)` of the projected corners,
    /// without clipping to the image.
    pub fn projected_box(&self, k: &CameraIntrinsics) -> Result<[f64; 4]> {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for c in self.corners() {
            let q = k.project(c)?;
            b[0] = b[0].min(q.u);
            b[1] = b[1].min(q.v);
            b[2] = b[2].max(q.u);
            b[3] = b[3].max(q.v);
        }
        Ok(b)
    }

    pub fn translated(&self, t: Point3) -> Self {
        Self { location: self.location + t, ..*self }
    }
}

/// L1 distance between corresponding corners, summed over all 24 coordinates.
pub fn corner_loss(pred: &Box3D, gt: &Box3D) -> f64 {
    pred.corners()
        .iter()
        .zip(gt.corners().iter())
        .map(|(a, b)| (a.x - b.x).abs() + (a.y - b.y).abs() + (a.z - b.z).abs())
        .sum()
}
