//! Object depth from four independent estimators and their combination.
//!
//! The estimators are the directly regressed depth and three geometric
//! solutions from keypoint groups: the center vertical line (k9, k10) and the
//! two diagonal pairs of vertical edges, (1, 3) and (2, 4) in corner order.

use serde::{Deserialize, Serialize};

use crate::box3d::{Keypoints10, BOTTOM_CENTER, TOP_CENTER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSource {
    Direct,
    Center,
    Diag1,
    Diag2,
}

impl DepthSource {
    pub const ALL: [DepthSource; 4] =
        [DepthSource::Direct, DepthSource::Center, DepthSource::Diag1, DepthSource::Diag2];

    pub fn name(self) -> &'static str {
        match self {
            DepthSource::Direct => "direct",
            DepthSource::Center => "center",
            DepthSource::Diag1 => "diag1",
            DepthSource::Diag2 => "diag2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }

    /// Vertical edges `(bottom, top)` keypoint indices feeding this estimator.
    pub fn lines(self) -> &'static [(usize, usize)] {
        match self {
            DepthSource::Direct => &[],
            DepthSource::Center => &[(BOTTOM_CENTER, TOP_CENTER)],
            DepthSource::Diag1 => &[(0, 4), (2, 6)],
            DepthSource::Diag2 => &[(1, 5), (3, 7)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEstimate {
    pub z: f64,
    pub sigma: f64,
    pub valid: bool,
    pub source: DepthSource,
}

impl DepthEstimate {
    pub fn new(z: f64, sigma: f64, valid: bool, source: DepthSource) -> Self {
        Self { z, sigma, valid, source }
    }
}

/// Inverse-sigmoid depth transform `1 / sigmoid(zo) - 1`, i.e. `exp(-zo)`.
pub fn direct_depth(zo: f64) -> f64 {
    // exp(-zo) is the closed form; clamping keeps the result finite
    (-zo.clamp(-700.0, 700.0)).exp()
}

/// Inverse of [`direct_depth`], the regression target for a true depth.
pub fn direct_depth_target(z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("depth must be positive, got {z}")));
    }
    Ok(-z.ln())
}

/// Depth of a vertical line of true height `height` spanning `pixel_height`
/// pixels under focal length `f`: `z = f H / h`.
pub fn line_depth(pixel_height: f64, height: f64, f: f64) -> Result<f64> {
    if !(pixel_height > 0.0) || !pixel_height.is_finite() {
        return Err(Error::Domain(format!("degenerate keypoint line: pixel height {pixel_height}")));
    }
    if !(height > 0.0) || !(f > 0.0) {
        return Err(Error::Domain(format!(
            "line depth needs positive object height and focal length (H = {height}, f = {f})"
        )));
    }
    Ok(f * height / pixel_height)
}

/// The three keypoint depths (center, diag1, diag2). Sigmas are left at 1
/// for the caller to attach.
///
/// An estimate whose lines include a non-positive pixel height is marked
/// invalid; its value comes from whichever of its lines is usable, or is NaN
/// when none is.
pub fn keypoint_depths(kps: &Keypoints10, height: f64, f: f64) -> [DepthEstimate; 3] {
    [DepthSource::Center, DepthSource::Diag1, DepthSource::Diag2].map(|src| {
        let mut zs = Vec::with_capacity(2);
        let mut degenerate = false;
        let mut inside = true;
        for &(bottom, top) in src.lines() {
            inside &= kps.inside[bottom] && kps.inside[top];
            match line_depth(kps.pts[bottom].v - kps.pts[top].v, height, f) {
                Ok(z) => zs.push(z),
                Err(_) => degenerate = true,
            }
        }
        let z = if zs.is_empty() { f64::NAN } else { zs.iter().sum::<f64>() / zs.len() as f64 };
        DepthEstimate::new(z, 1.0, inside && !degenerate, src)
    })
}

fn check_nonempty(estimates: &[DepthEstimate]) -> Result<()> {
    if estimates.is_empty() {
        return Err(Error::EmptyEstimates);
    }
    if let Some(e) = estimates.iter().find(|e| !(e.sigma > 0.0)) {
        return Err(Error::Domain(format!("uncertainty must be positive, got {}", e.sigma)));
    }
    Ok(())
}

/// `(sum z_i / sigma_i) / (sum 1 / sigma_i)` over all given estimates.
pub fn soft_ensemble(estimates: &[DepthEstimate]) -> Result<f64> {
    check_nonempty(estimates)?;
    let (num, den) = estimates
        .iter()
        .fold((0.0, 0.0), |(n, d), e| (n + e.z / e.sigma, d + 1.0 / e.sigma));
    let z = num / den;
    // rounding can push the weighted mean a hair outside the inputs
    let (lo, hi) = estimates
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e.z), hi.max(e.z)));
    Ok(z.clamp(lo, hi))
}

/// Value of the minimum-sigma estimate. Ties go to the earliest source in
/// `Direct < Center < Diag1 < Diag2` order.
pub fn hard_ensemble(estimates: &[DepthEstimate]) -> Result<f64> {
    check_nonempty(estimates)?;
    Ok(hard_choice(estimates)?.z)
}

pub fn hard_choice(estimates: &[DepthEstimate]) -> Result<&DepthEstimate> {
    check_nonempty(estimates)?;
    estimates
        .iter()
        .min_by(|a, b| a.sigma.total_cmp(&b.sigma).then(a.source.cmp(&b.source)))
        .ok_or(Error::EmptyEstimates)
}

/// Estimate closest to the true depth; ties go to the lower index.
pub fn oracle_select(estimates: &[DepthEstimate], z_true: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::EmptyEstimates);
    }
    let mut best = &estimates[0];
    for e in &estimates[1..] {
        if (e.z - z_true).abs() < (best.z - z_true).abs() {
            best = e;
        }
    }
    Ok(best.z)
}

/// Estimates that take part in an ensemble: the valid ones, or the direct
/// estimate alone when every keypoint estimate is invalid.
pub fn participating(estimates: &[DepthEstimate]) -> Vec<DepthEstimate> {
    let valid: Vec<_> = estimates.iter().copied().filter(|e| e.valid && e.z.is_finite()).collect();
    if !valid.is_empty() {
        return valid;
    }
    estimates.iter().copied().filter(|e| e.source == DepthSource::Direct).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EnsembleMode {
    #[default]
    Soft,
    Hard,
    Single(DepthSource),
}

impl EnsembleMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "soft" => Some(EnsembleMode::Soft),
            "hard" => Some(EnsembleMode::Hard),
            _ => s.strip_prefix("single:").and_then(DepthSource::parse).map(EnsembleMode::Single),
        }
    }

    pub fn label(self) -> String {
        match self {
            EnsembleMode::Soft => "soft".into(),
            EnsembleMode::Hard => "hard".into(),
            EnsembleMode::Single(s) => format!("single:{}", s.name()),
        }
    }
}

/// Combined depth under `mode`. Ensembles drop invalid estimates (falling back
/// to the direct one); a single source is used as-is.
pub fn combine(estimates: &[DepthEstimate], mode: EnsembleMode) -> Result<f64> {
    match mode {
        EnsembleMode::Soft => soft_ensemble(&participating(estimates)),
        EnsembleMode::Hard => hard_ensemble(&participating(estimates)),
        EnsembleMode::Single(src) => estimates
            .iter()
            .find(|e| e.source == src)
            .map(|e| e.z)
            .ok_or(Error::EmptyEstimates),
    }
}
