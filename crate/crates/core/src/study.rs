//! Side-by-side comparison of the depth estimators and their ensembles.
//!
//! Every scene is decoded once; each mode then relocates the decoded boxes
//! to its own depth. Depth errors are measured on detections matched to
//! ground truth by 2D IoU, and AP is computed per mode over all scenes.

use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::decode::{decode_detections, DecodeConfig, Detection, HeadConfig, HeadOutputs};
use crate::depthsolve::{hard_ensemble, participating, DepthSource, EnsembleMode};
use crate::error::Result;
use crate::eval3d::{evaluate, iou2d, ApMode, EvalConfig};
use crate::kitti::ObjectLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    Single(DepthSource),
    Hard,
    Soft,
    /// The valid estimate nearest the matched ground-truth depth.
    Oracle,
}

impl StudyMode {
    pub const ALL: [StudyMode; 7] = [
        StudyMode::Single(DepthSource::Direct),
        StudyMode::Single(DepthSource::Center),
        StudyMode::Single(DepthSource::Diag1),
        StudyMode::Single(DepthSource::Diag2),
        StudyMode::Hard,
        StudyMode::Soft,
        StudyMode::Oracle,
    ];

    pub fn name(self) -> String {
        match self {
            StudyMode::Single(s) => s.name().to_string(),
            StudyMode::Hard => "hard".into(),
            StudyMode::Soft => "soft".into(),
            StudyMode::Oracle => "oracle".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub head: HeadConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    /// 2D IoU a detection needs with a ground-truth box to be matched.
    pub match_iou: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            head: HeadConfig::default(),
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
            match_iou: 0.5,
        }
    }
}

/// Depth a mode assigns to a detection. A single estimator that is not
/// usable for this object falls back to the direct estimate, like the
/// ensembles do.
pub fn mode_depth(det: &Detection, mode: StudyMode, z_true: Option<f64>) -> Result<f64> {
    let usable = participating(&det.depths);
    Ok(match mode {
        StudyMode::Single(src) => {
            let e = det.estimate(src);
            if e.valid {
                e.z
            } else {
                det.estimate(DepthSource::Direct).z
            }
        }
        StudyMode::Hard => hard_ensemble(&usable)?,
        StudyMode::Soft => det.z_soft,
        StudyMode::Oracle => match z_true {
            Some(t) => usable
                .iter()
                .map(|e| e.z)
                .min_by(|a, b| (a - t).abs().total_cmp(&(b - t).abs()))
                .unwrap_or(det.z_soft),
            None => det.z_soft,
        },
    })
}

/// Greedy 2D matching in detection order (which is score order).
/// Returns the matched ground-truth index per detection.
pub fn match_by_iou2d(dets: &[Detection], gt: &[ObjectLabel], min_iou: f64) -> Vec<Option<usize>> {
    let mut used = vec![false; gt.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gt.iter().enumerate() {
                if used[j] || g.class_name != d.class {
                    continue;
                }
                let iou = iou2d(d.box2d, g.bbox);
                if iou > min_iou && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            best.map(|(j, _)| {
                used[j] = true;
                j
            })
        })
        .collect()
}

/// Per-scene output of the study, ready to be merged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneResult {
    /// Absolute depth errors of matched detections, per mode in `StudyMode::ALL` order.
    pub abs_errors: Vec<Vec<f64>>,
    /// Prediction rows per mode.
    pub predictions: Vec<Vec<ObjectLabel>>,
    pub dropped: usize,
}

pub fn analyze_scene(
    gt: &[ObjectLabel],
    ho: &HeadOutputs,
    k: &CameraIntrinsics,
    cfg: &StudyConfig,
) -> Result<SceneResult> {
    let dec = DecodeConfig { mode: EnsembleMode::Soft, ..cfg.decode };
    let out = decode_detections(ho, k, &cfg.head, &dec)?;
    let matches = match_by_iou2d(&out.detections, gt, cfg.match_iou);
    let mut res = SceneResult {
        abs_errors: vec![Vec::new(); StudyMode::ALL.len()],
        predictions: vec![Vec::new(); StudyMode::ALL.len()],
        dropped: out.dropped,
    };
    for (d, m) in out.detections.iter().zip(&matches) {
        let z_true = m.map(|j| gt[j].z);
        for (i, mode) in StudyMode::ALL.into_iter().enumerate() {
            let z = mode_depth(d, mode, z_true)?;
            if let Some(t) = z_true {
                res.abs_errors[i].push((z - t).abs());
            }
            match d.with_depth(z, k) {
                Ok(moved) => res.predictions[i].push(moved.to_label(k)),
                Err(_) => continue,
            }
        }
    }
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub mode: String,
    pub matched: usize,
    pub mean_abs_depth_error: f64,
    /// Mean AP over every populated class and difficulty.
    pub mean_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub scenes: usize,
    pub ap_mode: ApMode,
    pub dropped: usize,
    pub rows: Vec<ReportRow>,
}

impl EnsembleReport {
    pub fn row(&self, mode: StudyMode) -> Option<&ReportRow> {
        let name = mode.name();
        self.rows.iter().find(|r| r.mode == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} scenes, AP {:?}\n{:<8} {:>8} {:>14} {:>9}\n",
            self.scenes, self.ap_mode, "mode", "matched", "mean|dz| (m)", "mAP"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<8} {:>8} {:>14.4} {:>9.4}\n",
                r.mode,
                r.matched,
                r.mean_abs_depth_error,
                100.0 * r.mean_ap
            ));
        }
        s
    }
}

/// Merges per-scene results (in scene order) into the report.
pub fn build_report(
    gts: &[Vec<ObjectLabel>],
    results: &[SceneResult],
    cfg: &StudyConfig,
) -> Result<EnsembleReport> {
    let mut rows = Vec::new();
    for (i, mode) in StudyMode::ALL.into_iter().enumerate() {
        let errs: Vec<f64> = results.iter().flat_map(|r| r.abs_errors[i].iter().copied()).collect();
        let preds: Vec<Vec<ObjectLabel>> = results.iter().map(|r| r.predictions[i].clone()).collect();
        let report = evaluate(gts, &preds, &cfg.eval)?;
        let aps: Vec<f64> = report.results.iter().filter_map(|r| r.ap(cfg.eval.mode)).collect();
        rows.push(ReportRow {
            mode: mode.name(),
            matched: errs.len(),
            mean_abs_depth_error: if errs.is_empty() { f64::NAN } else { errs.iter().sum::<f64>() / errs.len() as f64 },
            mean_ap: if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 },
        });
    }
    Ok(EnsembleReport {
        scenes: results.len(),
        ap_mode: cfg.eval.mode,
        dropped: results.iter().map(|r| r.dropped).sum(),
        rows,
    })
}

/// Runs the whole study sequentially.
pub fn ensemble_report(
    scenes: &[(Vec<ObjectLabel>, CameraIntrinsics, HeadOutputs)],
    cfg: &StudyConfig,
) -> Result<EnsembleReport> {
    let results = scenes
        .iter()
        .map(|(gt, k, ho)| analyze_scene(gt, ho, k, cfg))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<Vec<ObjectLabel>> = scenes.iter().map(|s| s.0.clone()).collect();
    build_report(&gts, &results, cfg)
}
