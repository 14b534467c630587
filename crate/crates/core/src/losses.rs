//! Scalar reference implementations of the training losses.
//!
//! These are plain forward evaluations meant as oracles for external training
//! code; nothing here computes gradients.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::camera::wrap_angle;
use crate::depthsolve::DepthEstimate;
use crate::error::{Error, Result};
use crate::represent::{FeatureMap, ObjectKind};

/// `(predicted, target, kind)` offset pair of one object.
pub type OffsetItem = ((f64, f64), (f64, f64), ObjectKind);

/// Mean object dimensions `(h, w, l)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanDims {
    pub h: f64,
    pub w: f64,
    pub l: f64,
}

impl MeanDims {
    pub fn as_array(&self) -> [f64; 3] {
        [self.h, self.w, self.l]
    }
}

/// MultiBin orientation layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiBin {
    pub centers: Vec<f64>,
    /// Extra half-width beyond `pi / N` that a bin still covers.
    pub overlap: f64,
}

impl Default for MultiBin {
    fn default() -> Self {
        Self { centers: vec![0.0, FRAC_PI_2, PI, -FRAC_PI_2], overlap: 0.1 }
    }
}

impl MultiBin {
    pub fn num_bins(&self) -> usize {
        self.centers.len()
    }

    pub fn half_width(&self) -> f64 {
        PI / self.num_bins() as f64 + self.overlap
    }

    /// Whether bin `b` covers angle `alpha`.
    pub fn covers(&self, b: usize, alpha: f64) -> bool {
        wrap_angle(alpha - self.centers[b]).abs() <= self.half_width()
    }

    /// Bin whose center is closest to `alpha` (lowest index on ties).
    pub fn nearest(&self, alpha: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (b, c) in self.centers.iter().enumerate() {
            let d = wrap_angle(alpha - c).abs();
            if d < best_d {
                best = b;
                best_d = d;
            }
        }
        best
    }

    /// Regression targets: one logit per bin (highest for the nearest bin)
    /// and a `(sin, cos)` residual pair per bin.
    pub fn encode(&self, alpha: f64) -> (Vec<f64>, Vec<(f64, f64)>) {
        let nearest = self.nearest(alpha);
        let logits = (0..self.num_bins())
            .map(|b| {
                if b == nearest {
                    4.0
                } else if self.covers(b, alpha) {
                    2.0
                } else {
                    -4.0
                }
            })
            .collect();
        let residuals = self.centers.iter().map(|c| wrap_angle(alpha - c).sin_cos()).collect();
        (logits, residuals)
    }

    /// `alpha = wrap(center[argmax] + atan2(sin, cos))` of the winning bin.
    pub fn decode(&self, logits: &[f64], residuals: &[(f64, f64)]) -> Result<f64> {
        let n = self.num_bins();
        if logits.len() != n || residuals.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} bins"),
                got: format!("{} logits, {} residuals", logits.len(), residuals.len()),
            });
        }
        let mut best = 0;
        for b in 1..n {
            if logits[b] > logits[best] {
                best = b;
            }
        }
        let (s, c) = residuals[best];
        Ok(wrap_angle(self.centers[best] + s.atan2(c)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub focal_alpha: f64,
    pub focal_beta: f64,
    pub bins: MultiBin,
    pub class_mean_dims: BTreeMap<String, MeanDims>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focal_alpha: 2.0,
            focal_beta: 4.0,
            bins: MultiBin::default(),
            class_mean_dims: default_mean_dims(),
        }
    }
}

/// KITTI training-set averages for the three evaluated classes.
pub fn default_mean_dims() -> BTreeMap<String, MeanDims> {
    BTreeMap::from([
        ("Car".to_string(), MeanDims { h: 1.5261, w: 1.6286, l: 3.8840 }),
        ("Pedestrian".to_string(), MeanDims { h: 1.7607, w: 0.6602, l: 0.8423 }),
        ("Cyclist".to_string(), MeanDims { h: 1.7372, w: 0.5968, l: 1.7635 }),
    ])
}

impl LossConfig {
    pub fn mean_dims(&self, class: &str) -> Result<MeanDims> {
        self.class_mean_dims
            .get(class)
            .copied()
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }
}

/// Penalty-reduced focal loss over a predicted and a target heatmap.
pub fn focal_heatmap_loss(pred: &FeatureMap, gt: &FeatureMap, cfg: &LossConfig) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", gt.shape()),
            got: format!("{:?}", pred.shape()),
        });
    }
    let (mut pos, mut neg, mut n_pos) = (0.0, 0.0, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("heatmap prediction {p} outside (0, 1)")));
        }
        if g == 1.0 {
            n_pos += 1;
            pos += (1.0 - p).powf(cfg.focal_alpha) * p.ln();
        } else {
            neg += (1.0 - g).powf(cfg.focal_beta) * p.powf(cfg.focal_alpha) * (1.0 - p).ln();
        }
    }
    Ok(-(pos + neg) / n_pos.max(1) as f64)
}

/// Per-coordinate offset loss: plain L1 inside, `log(1 + |d|)` outside.
pub fn offset_loss(pred: (f64, f64), gt: (f64, f64), kind: ObjectKind) -> f64 {
    let d = [(pred.0 - gt.0).abs(), (pred.1 - gt.1).abs()];
    match kind {
        ObjectKind::Inside => d[0] + d[1],
        ObjectKind::Outside => d[0].ln_1p() + d[1].ln_1p(),
    }
}

/// Offset loss averaged separately over inside and outside objects:
/// per-coordinate mean within each object, then the mean over objects.
/// Returns `(inside_mean, outside_mean)`; an empty group contributes 0.
pub fn offset_loss_grouped(items: &[OffsetItem]) -> (f64, f64) {
    let mut acc = [(0.0, 0usize); 2];
    for &(p, g, kind) in items {
        let slot = match kind {
            ObjectKind::Inside => 0,
            ObjectKind::Outside => 1,
        };
        acc[slot].0 += offset_loss(p, g, kind) / 2.0;
        acc[slot].1 += 1;
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
    (mean(acc[0]), mean(acc[1]))
}

/// `sum_k |mean_k * exp(delta_k) - k*|` over `(h, w, l)`.
pub fn dim_loss(deltas: [f64; 3], gt: [f64; 3], class: &str, cfg: &LossConfig) -> Result<f64> {
    let mean = cfg.mean_dims(class)?.as_array();
    Ok((0..3).map(|i| (mean[i] * deltas[i].exp() - gt[i]).abs()).sum())
}

/// MultiBin loss: mean binary cross-entropy of the per-bin logits against bin
/// coverage, plus the mean L1 error of `(sin, cos)` residuals over covering
/// bins.
pub fn multibin_loss(
    logits: &[f64],
    residuals: &[(f64, f64)],
    gt_alpha: f64,
    bins: &MultiBin,
) -> Result<f64> {
    let n = bins.num_bins();
    if logits.len() != n || residuals.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} bins"),
            got: format!("{} logits, {} residuals", logits.len(), residuals.len()),
        });
    }
    let mut cls = 0.0;
    let mut res = 0.0;
    let mut covering = 0usize;
    for b in 0..n {
        let covered = bins.covers(b, gt_alpha);
        cls += bce_with_logits(logits[b], covered);
        if covered {
            let (ts, tc) = wrap_angle(gt_alpha - bins.centers[b]).sin_cos();
            res += (residuals[b].0 - ts).abs() + (residuals[b].1 - tc).abs();
            covering += 1;
        }
    }
    Ok(cls / n as f64 + res / covering.max(1) as f64)
}

/// Numerically stable `-[y log s(x) + (1 - y) log(1 - s(x))]`.
fn bce_with_logits(x: f64, target: bool) -> f64 {
    let y = if target { 1.0 } else { 0.0 };
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedLoss {
    pub value: f64,
    /// False when no element passed the mask; `value` is then 0.
    pub active: bool,
}

/// Keypoint offset loss: L1 over both coordinates of each inside keypoint,
/// divided by the number of inside keypoints.
pub fn keypoint_loss(pred: &[(f64, f64)], gt: &[(f64, f64)], inside: &[bool]) -> Result<MaskedLoss> {
    if pred.len() != gt.len() || pred.len() != inside.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} keypoints", gt.len()),
            got: format!("{} predictions, {} mask entries", pred.len(), inside.len()),
        });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), &m) in pred.iter().zip(gt).zip(inside) {
        if m {
            sum += (p.0 - g.0).abs() + (p.1 - g.1).abs();
            n += 1;
        }
    }
    Ok(if n == 0 {
        MaskedLoss { value: 0.0, active: false }
    } else {
        MaskedLoss { value: sum / n as f64, active: true }
    })
}

/// Uncertainty-aware L1: `|z - z*| / sigma + ln(sigma)`.
pub fn depth_unc_loss(z_pred: f64, z_gt: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("uncertainty must be positive, got {sigma}")));
    }
    Ok((z_pred - z_gt).abs() / sigma + sigma.ln())
}

/// Keypoint-depth loss; invalid estimates drop the `ln(sigma)` term.
pub fn keypoint_depth_loss(estimates: &[DepthEstimate], z_gt: f64) -> Result<f64> {
    let mut total = 0.0;
    for e in estimates {
        if !(e.sigma > 0.0) {
            return Err(Error::Domain(format!("uncertainty must be positive, got {}", e.sigma)));
        }
        total += (e.z - z_gt).abs() / e.sigma;
        if e.valid {
            total += e.sigma.ln();
        }
    }
    Ok(total)
}

fn check_box(b: [f64; 4]) -> Result<()> {
    if !(b[0] < b[2] && b[1] < b[3]) {
        return Err(Error::Domain(format!("degenerate 2D box {b:?}")));
    }
    Ok(())
}

/// `1 - GIoU` for axis-aligned boxes `(u1, v1, u2, v2)`.
pub fn giou_loss(a: [f64; 4], b: [f64; 4]) -> Result<f64> {
    check_box(a)?;
    check_box(b)?;
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    let enclose = (a[2].max(b[2]) - a[0].min(b[0])) * (a[3].max(b[3]) - a[1].min(b[1]));
    let giou = inter / union - (enclose - union) / enclose;
    Ok(1.0 - giou)
}

/// Per-object loss terms; [`LossTerms::total`] is their unweighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub heatmap: f64,
    pub offset: f64,
    pub giou: f64,
    pub dims: f64,
    pub orientation: f64,
    pub keypoints: f64,
    pub depth: f64,
    pub keypoint_depth: f64,
    pub corner: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.heatmap
            + self.offset
            + self.giou
            + self.dims
            + self.orientation
            + self.keypoints
            + self.depth
            + self.keypoint_depth
            + self.corner
    }
}
