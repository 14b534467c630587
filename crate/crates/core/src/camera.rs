//! Pinhole camera in the KITTI convention: x right, y down, z forward.
//!
//! A calibration row `P2 = [[fx, 0, cu, tx], [0, fy, cv, ty], [0, 0, 1, 0]]`
//! projects a camera-frame point to `u = (fx x + tx) / z + cu`,
//! `v = (fy y + ty) / z + cv`. With `tx = ty = 0` and `fx = fy = f` this is the
//! plain `x = (u - cu) z / f` model.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

impl std::ops::Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// Pinhole intrinsics plus the projective translation terms of a 3x4 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cu: f64,
    pub cv: f64,
    #[serde(default)]
    pub tx: f64,
    #[serde(default)]
    pub ty: f64,
    pub image_w: u32,
    pub image_h: u32,
}

impl Default for CameraIntrinsics {
    /// KITTI-like P2 on the padded 1280x384 canvas.
    fn default() -> Self {
        Self {
            fx: 721.5377,
            fy: 721.5377,
            cu: 609.5593,
            cv: 172.854,
            tx: 44.85728,
            ty: 0.2163791,
            image_w: 1280,
            image_h: 384,
        }
    }
}

impl CameraIntrinsics {
    /// Ideal camera with a single focal length and no translation terms.
    pub fn simple(f: f64, cu: f64, cv: f64, image_w: u32, image_h: u32) -> Result<Self> {
        Self::new(f, f, cu, cv, 0.0, 0.0, image_w, image_h)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cu: f64,
        cv: f64,
        tx: f64,
        ty: f64,
        image_w: u32,
        image_h: u32,
    ) -> Result<Self> {
        let k = Self { fx, fy, cu, cv, tx, ty, image_w, image_h };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cu, self.cv, self.tx, self.ty]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("camera parameters must be finite".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Domain(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::Domain("image size must be positive".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.image_w as f64
    }

    pub fn height(&self) -> f64 {
        self.image_h as f64
    }

    /// Half-open image membership `[0, W) x [0, H)`.
    pub fn contains(&self, p: Point2) -> bool {
        p.u >= 0.0 && p.u < self.width() && p.v >= 0.0 && p.v < self.height()
    }

    pub fn project(&self, p: Point3) -> Result<Point2> {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera { z: p.z });
        }
        Ok(Point2::new(
            (self.fx * p.x + self.tx) / p.z + self.cu,
            (self.fy * p.y + self.ty) / p.z + self.cv,
        ))
    }

    pub fn backproject(&self, q: Point2, z: f64) -> Result<Point3> {
        if !(z > 0.0) {
            return Err(Error::Domain(format!("back-projection depth must be positive, got {z}")));
        }
        Ok(Point3::new(
            ((q.u - self.cu) * z - self.tx) / self.fx,
            ((q.v - self.cv) * z - self.ty) / self.fy,
            z,
        ))
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    // rem_euclid can return exactly 2*pi for tiny negative inputs
    if r <= -PI {
        r += two_pi;
    }
    r
}

/// Global yaw from local (viewing-relative) yaw: `ry = alpha + atan(x / z)`.
pub fn alpha_to_ry(alpha: f64, x: f64, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("orientation conversion needs z > 0, got {z}")));
    }
    Ok(wrap_angle(alpha + (x / z).atan()))
}

pub fn ry_to_alpha(ry: f64, x: f64, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("orientation conversion needs z > 0, got {z}")));
    }
    Ok(wrap_angle(ry - (x / z).atan()))
}

/// Smallest signed difference `a - b` on the circle, in `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}
