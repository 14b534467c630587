//! Rotated-box IoU and AP3D at 11 or 40 recall positions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::box3d::Box3D;
use crate::error::{Error, Result};
use crate::kitti::{Difficulty, DifficultyThresholds, ObjectLabel};

/// Signed distances below this count as on the clip edge.
const CLIP_EPS: f64 = 1e-9;
const MIN_AREA: f64 = 1e-12;

pub type Polygon = Vec<(f64, f64)>;

fn signed_area2(p: &[(f64, f64)]) -> f64 {
    let n = p.len();
    (0..n).map(|i| p[i].0 * p[(i + 1) % n].1 - p[(i + 1) % n].0 * p[i].1).sum()
}

/// Shoelace area, orientation-agnostic.
pub fn polygon_area(p: &[(f64, f64)]) -> f64 {
    if p.len() < 3 {
        return 0.0;
    }
    signed_area2(p).abs() / 2.0
}

/// Sutherland-Hodgman clipping of `subject` by the convex polygon `clip`.
/// Works for either orientation of `clip`; returns an empty polygon when the
/// intersection has (numerically) no area.
pub fn convex_clip(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Polygon {
    if subject.len() < 3 || clip.len() < 3 {
        return Vec::new();
    }
    let orient = signed_area2(clip).signum();
    let mut output: Polygon = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % m];
        let (ex, ey) = (b.0 - a.0, b.1 - a.1);
        let side = |p: (f64, f64)| orient * (ex * (p.1 - a.1) - ey * (p.0 - a.0));
        let input = std::mem::take(&mut output);
        let n = input.len();
        for j in 0..n {
            let cur = input[j];
            let prev = input[(j + n - 1) % n];
            let (dc, dp) = (side(cur), side(prev));
            let cur_in = dc >= -CLIP_EPS;
            let prev_in = dp >= -CLIP_EPS;
            if cur_in != prev_in {
                let t = dp / (dp - dc);
                output.push((prev.0 + t * (cur.0 - prev.0), prev.1 + t * (cur.1 - prev.1)));
            }
            if cur_in {
                output.push(cur);
            }
        }
    }
    if polygon_area(&output) < MIN_AREA {
        Vec::new()
    } else {
        output
    }
}

fn bev_polygon(b: &Box3D) -> Polygon {
    b.bev_corners().to_vec()
}

pub fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    polygon_area(&convex_clip(&bev_polygon(a), &bev_polygon(b)))
}

pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection(a, b);
    let union = a.w * a.l + b.w * b.l - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Overlap of the vertical extents `[y - h, y]`.
pub fn vertical_overlap(a: &Box3D, b: &Box3D) -> f64 {
    let top = (a.location.y - a.h).max(b.location.y - b.h);
    let bottom = a.location.y.min(b.location.y);
    (bottom - top).max(0.0)
}

pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let dy = vertical_overlap(a, b);
    if dy <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection(a, b) * dy;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// IoU of axis-aligned boxes `(u1, v1, u2, v2)`.
pub fn iou2d(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: [f64; 4]| ((r[2] - r[0]) * (r[3] - r[1])).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ApMode {
    R11,
    #[default]
    R40,
}

impl ApMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r11" => Some(ApMode::R11),
            "r40" => Some(ApMode::R40),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Classes to evaluate with their 3D IoU thresholds.
    pub iou_thresholds: BTreeMap<String, f64>,
    pub mode: ApMode,
    pub difficulties: Vec<Difficulty>,
    pub thresholds: DifficultyThresholds,
    /// 2D IoU above which a detection inside a DontCare region is ignored.
    pub dont_care_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: BTreeMap::from([
                ("Car".to_string(), 0.7),
                ("Pedestrian".to_string(), 0.5),
                ("Cyclist".to_string(), 0.5),
            ]),
            mode: ApMode::R40,
            difficulties: Difficulty::LEVELS.to_vec(),
            thresholds: DifficultyThresholds::default(),
            dont_care_iou: 0.5,
        }
    }
}

impl EvalConfig {
    /// Restricts evaluation to `classes`, which must all have thresholds.
    pub fn with_classes(mut self, classes: &[String]) -> Result<Self> {
        let mut kept = BTreeMap::new();
        for c in classes {
            let t = self
                .iou_thresholds
                .get(c)
                .copied()
                .ok_or_else(|| Error::UnknownClass(c.clone()))?;
            kept.insert(c.clone(), t);
        }
        self.iou_thresholds = kept;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        for (c, t) in &self.iou_thresholds {
            if !(*t > 0.0 && *t <= 1.0) {
                return Err(Error::Config(format!("IoU threshold for {c} must be in (0, 1], got {t}")));
            }
        }
        if self.difficulties.contains(&Difficulty::Ignored) {
            return Err(Error::Config("`Ignored` is not an evaluation level".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class: String,
    pub difficulty: Difficulty,
    pub num_gt: usize,
    pub num_tp: usize,
    pub num_fp: usize,
    /// `None` when the level has no ground truth.
    pub ap_r11: Option<f64>,
    pub ap_r40: Option<f64>,
    pub curve: PrCurve,
}

impl ClassResult {
    pub fn ap(&self, mode: ApMode) -> Option<f64> {
        match mode {
            ApMode::R11 => self.ap_r11,
            ApMode::R40 => self.ap_r40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: ApMode,
    pub results: Vec<ClassResult>,
}

impl EvalReport {
    pub fn get(&self, class: &str, difficulty: Difficulty) -> Option<&ClassResult> {
        self.results.iter().find(|r| r.class == class && r.difficulty == difficulty)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<12} {:<9} {:>6} {:>6} {:>6} {:>9} {:>9}\n",
            "class", "level", "gt", "tp", "fp", "AP_R11", "AP_R40"
        );
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.4}", 100.0 * v));
        for r in &self.results {
            s.push_str(&format!(
                "{:<12} {:<9} {:>6} {:>6} {:>6} {:>9} {:>9}\n",
                r.class,
                r.difficulty.name(),
                r.num_gt,
                r.num_tp,
                r.num_fp,
                fmt(r.ap_r11),
                fmt(r.ap_r40)
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

/// Matches one image's detections of `class` at `level`, in the given order.
fn match_image(
    gt: &[ObjectLabel],
    gt_levels: &[Difficulty],
    dets: &[&ObjectLabel],
    class: &str,
    level: Difficulty,
    threshold: f64,
    dont_care_iou: f64,
) -> Vec<Outcome> {
    let mut used = vec![false; gt.len()];
    let gt_boxes: Vec<Box3D> = gt.iter().map(ObjectLabel::box3d).collect();
    dets.iter()
        .map(|d| {
            let db = d.box3d();
            let mut best: [Option<(usize, f64)>; 2] = [None, None];
            for (j, g) in gt.iter().enumerate() {
                if used[j] || g.class_name != class {
                    continue;
                }
                let iou = iou3d(&db, &gt_boxes[j]);
                if iou <= threshold {
                    continue;
                }
                let slot = if gt_levels[j].counts_at(level) { 0 } else { 1 };
                if best[slot].is_none_or(|(_, b)| iou > b) {
                    best[slot] = Some((j, iou));
                }
            }
            if let Some((j, _)) = best[0] {
                used[j] = true;
                return Outcome::Tp;
            }
            if let Some((j, _)) = best[1] {
                used[j] = true;
                return Outcome::Ignored;
            }
            let in_dont_care = gt
                .iter()
                .any(|g| g.is_dont_care() && iou2d(d.bbox, g.bbox) > dont_care_iou);
            if in_dont_care {
                Outcome::Ignored
            } else {
                Outcome::Fp
            }
        })
        .collect()
}

/// AP from a score-ordered TP/FP sequence, sampling `samples` recall
/// positions `first/samples ..= 1`. Recall comparisons are done in integers.
fn interpolated_ap(outcomes: &[bool], num_gt: usize, samples: usize, include_zero: bool) -> f64 {
    let mut tps = Vec::with_capacity(outcomes.len());
    let mut precs = Vec::with_capacity(outcomes.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &o in outcomes {
        if o {
            tp += 1;
        } else {
            fp += 1;
        }
        tps.push(tp);
        precs.push(tp as f64 / (tp + fp) as f64);
    }
    // suffix maximum of precision
    for i in (0..precs.len().saturating_sub(1)).rev() {
        precs[i] = precs[i].max(precs[i + 1]);
    }
    let start = if include_zero { 0 } else { 1 };
    let mut sum = 0.0;
    let mut cursor = 0usize;
    for i in start..=samples {
        // first point with recall >= i / samples
        while cursor < tps.len() && tps[cursor] * samples < i * num_gt {
            cursor += 1;
        }
        if cursor < tps.len() {
            sum += precs[cursor];
        }
    }
    sum / (samples + 1 - start) as f64
}

pub fn ap_r40(outcomes: &[bool], num_gt: usize) -> f64 {
    interpolated_ap(outcomes, num_gt, 40, false)
}

pub fn ap_r11(outcomes: &[bool], num_gt: usize) -> f64 {
    interpolated_ap(outcomes, num_gt, 10, true)
}

/// Evaluates detections against ground truth, image by image.
///
/// `gt[i]` and `det[i]` belong to the same image. Detections of every image
/// are ranked together by descending score (ties keep image, then file order).
pub fn evaluate(
    gt: &[Vec<ObjectLabel>],
    det: &[Vec<ObjectLabel>],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if gt.len() != det.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} detection lists", gt.len()),
            got: format!("{}", det.len()),
        });
    }
    let levels: Vec<Vec<Difficulty>> = gt
        .iter()
        .map(|img| img.iter().map(|l| cfg.thresholds.classify(l)).collect())
        .collect();

    let mut results = Vec::new();
    for (class, &threshold) in &cfg.iou_thresholds {
        let mut ranked: Vec<(usize, usize, f64)> = det
            .iter()
            .enumerate()
            .flat_map(|(i, img)| {
                img.iter()
                    .enumerate()
                    .filter(|(_, d)| &d.class_name == class)
                    .map(move |(j, d)| (i, j, d.score.unwrap_or(1.0)))
            })
            .collect();
        ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

        for &level in &cfg.difficulties {
            let num_gt = gt
                .iter()
                .zip(&levels)
                .flat_map(|(img, lv)| img.iter().zip(lv))
                .filter(|(g, d)| &g.class_name == class && d.counts_at(level))
                .count();

            // per-image matching in global rank order
            let mut per_image: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
            for (rank, &(img, j, _)) in ranked.iter().enumerate() {
                per_image.entry(img).or_default().push((rank, j));
            }
            let mut outcome_by_rank = vec![Outcome::Ignored; ranked.len()];
            for (img, entries) in per_image {
                let dets: Vec<&ObjectLabel> = entries.iter().map(|&(_, j)| &det[img][j]).collect();
                let out = match_image(
                    &gt[img],
                    &levels[img],
                    &dets,
                    class,
                    level,
                    threshold,
                    cfg.dont_care_iou,
                );
                for ((rank, _), o) in entries.iter().zip(out) {
                    outcome_by_rank[*rank] = o;
                }
            }
            let seq: Vec<bool> = outcome_by_rank
                .iter()
                .filter(|o| **o != Outcome::Ignored)
                .map(|o| *o == Outcome::Tp)
                .collect();
            let num_tp = seq.iter().filter(|t| **t).count();
            let num_fp = seq.len() - num_tp;
            let mut curve = PrCurve::default();
            let mut tp = 0usize;
            for (k, &t) in seq.iter().enumerate() {
                tp += t as usize;
                curve.points.push(PrPoint {
                    recall: if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 },
                    precision: tp as f64 / (k + 1) as f64,
                });
            }
            let (r11, r40) = if num_gt == 0 {
                (None, None)
            } else {
                (Some(ap_r11(&seq, num_gt)), Some(ap_r40(&seq, num_gt)))
            };
            results.push(ClassResult {
                class: class.clone(),
                difficulty: level,
                num_gt,
                num_tp,
                num_fp,
                ap_r11: r11,
                ap_r40: r40,
                curve,
            });
        }
    }
    Ok(EvalReport { mode: cfg.mode, results })
}
