//! KITTI `label_2` and calibration text formats, and difficulty levels.
//!
//! A label line has 15 whitespace-separated fields, plus a trailing score for
//! detections:
//!
//! ```text
//! type truncated occluded alpha x1 y1 x2 y2 h w l x y z ry [score]
//! ```
//!
//! Floats are written with two decimals. A calibration file must contain a
//! `P2:` line with the 12 row-major entries of the 3x4 projection matrix.

use serde::{Deserialize, Serialize};

use crate::box3d::Box3D;
use crate::camera::{CameraIntrinsics, Point3};
use crate::error::{Error, Result};

pub const DONT_CARE: &str = "DontCare";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectLabel {
    pub class_name: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    pub bbox: [f64; 4],
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub ry: f64,
    pub score: Option<f64>,
}

impl ObjectLabel {
    pub fn is_dont_care(&self) -> bool {
        self.class_name == DONT_CARE
    }

    pub fn box3d(&self) -> Box3D {
        Box3D {
            location: Point3::new(self.x, self.y, self.z),
            h: self.h,
            w: self.w,
            l: self.l,
            ry: self.ry,
        }
    }

    pub fn bbox_height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    fn parse_line(line: &str, lineno: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 15 && fields.len() != 16 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 15 or 16 fields, found {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = fields[i].parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("field {} (`{}`) is not a number", i + 1, fields[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("field {} (`{}`) is not finite", i + 1, fields[i]),
                });
            }
            Ok(v)
        };
        let occlusion: i32 = fields[2].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("field 3 (`{}`) is not an integer occlusion level", fields[2]),
        })?;
        let label = ObjectLabel {
            class_name: fields[0].to_string(),
            truncation: num(1)?,
            occlusion,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            h: num(8)?,
            w: num(9)?,
            l: num(10)?,
            x: num(11)?,
            y: num(12)?,
            z: num(13)?,
            ry: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        };
        if !label.is_dont_care() && !(label.bbox[0] <= label.bbox[2] && label.bbox[1] <= label.bbox[3]) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("malformed 2D box {:?}", label.bbox),
            });
        }
        Ok(label)
    }

    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
            self.class_name,
            self.truncation,
            self.occlusion,
            self.alpha,
            self.bbox[0],
            self.bbox[1],
            self.bbox[2],
            self.bbox[3],
            self.h,
            self.w,
            self.l,
            self.x,
            self.y,
            self.z,
            self.ry
        );
        if let Some(score) = self.score {
            s.push_str(&format!(" {score:.2}"));
        }
        s
    }
}

/// Parses a label file; blank lines are skipped. Line numbers are 1-based.
pub fn parse_label_file(text: &str) -> Result<Vec<ObjectLabel>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| ObjectLabel::parse_line(l, i + 1))
        .collect()
}

pub fn serialize_labels(labels: &[ObjectLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        out.push_str(&l.to_line());
        out.push('\n');
    }
    out
}

/// Reads intrinsics from the `P2:` row of a calibration file. The image size
/// is not part of the format and must be supplied.
pub fn parse_calib(text: &str, image_w: u32, image_h: u32) -> Result<CameraIntrinsics> {
    for (i, line) in text.lines().enumerate() {
        let Some(rest) = line.trim_start().strip_prefix("P2:") else {
            continue;
        };
        let vals = rest
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("P2 entry `{t}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 12 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("P2 needs 12 values, found {}", vals.len()),
            });
        }
        return CameraIntrinsics::new(
            vals[0], vals[5], vals[2], vals[6], vals[3], vals[7], image_w, image_h,
        )
        .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() });
    }
    Err(Error::MissingP2)
}

/// Row-major `P2` for the intrinsics.
pub fn p2_matrix(k: &CameraIntrinsics) -> [f64; 12] {
    [k.fx, 0.0, k.cu, k.tx, 0.0, k.fy, k.cv, k.ty, 0.0, 0.0, 1.0, 0.0]
}

/// Calibration text for a single synthetic camera. `P0..P3` all carry the
/// same matrix; the rectification and sensor transforms are identities.
pub fn serialize_calib(k: &CameraIntrinsics) -> String {
    let row = |vals: &[f64]| vals.iter().map(|v| format!("{v:.12e}")).collect::<Vec<_>>().join(" ");
    let p = p2_matrix(k);
    let ident34 = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let ident33 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let mut s = String::new();
    for name in ["P0", "P1", "P2", "P3"] {
        s.push_str(&format!("{name}: {}\n", row(&p)));
    }
    s.push_str(&format!("R0_rect: {}\n", row(&ident33)));
    s.push_str(&format!("Tr_velo_to_cam: {}\n", row(&ident34)));
    s.push_str(&format!("Tr_imu_to_velo: {}\n", row(&ident34)));
    s
}

// ---------------------------------------------------------------------------
// Difficulty
// ---------------------------------------------------------------------------

/// Strictest benchmark level an object qualifies for. Ordered so that
/// `Easy < Moderate < Hard < Ignored`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl Difficulty {
    pub const LEVELS: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
            Difficulty::Ignored => "ignored",
        }
    }

    /// Whether an object of this difficulty is evaluated at `level`.
    pub fn counts_at(self, level: Difficulty) -> bool {
        self != Difficulty::Ignored && self <= level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelThreshold {
    pub min_height: f64,
    pub max_occlusion: i32,
    pub max_truncation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyThresholds {
    pub easy: LevelThreshold,
    pub moderate: LevelThreshold,
    pub hard: LevelThreshold,
}

impl Default for DifficultyThresholds {
    fn default() -> Self {
        Self {
            easy: LevelThreshold { min_height: 40.0, max_occlusion: 0, max_truncation: 0.15 },
            moderate: LevelThreshold { min_height: 25.0, max_occlusion: 1, max_truncation: 0.30 },
            hard: LevelThreshold { min_height: 25.0, max_occlusion: 2, max_truncation: 0.50 },
        }
    }
}

impl DifficultyThresholds {
    pub fn classify(&self, label: &ObjectLabel) -> Difficulty {
        let h = label.bbox_height();
        let passes = |t: &LevelThreshold| {
            h >= t.min_height && label.occlusion <= t.max_occlusion && label.truncation <= t.max_truncation
        };
        if passes(&self.easy) {
            Difficulty::Easy
        } else if passes(&self.moderate) {
            Difficulty::Moderate
        } else if passes(&self.hard) {
            Difficulty::Hard
        } else {
            Difficulty::Ignored
        }
    }
}

pub fn difficulty(label: &ObjectLabel) -> Difficulty {
    DifficultyThresholds::default().classify(label)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GT_LINE: &str =
        "Pedestrian 0.00 0 -0.20 712.40 143.00 810.73 307.92 1.89 0.48 1.20 1.84 1.47 8.41 0.01";

    #[test]
    fn empty_file() {
        assert!(parse_label_file("").unwrap().is_empty());
        assert!(parse_label_file("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn parse_ground_truth_line() {
        let l = &parse_label_file(GT_LINE).unwrap()[0];
        assert_eq!(l.class_name, "Pedestrian");
        assert_eq!(l.bbox, [712.40, 143.00, 810.73, 307.92]);
        assert_eq!((l.x, l.y, l.z, l.ry), (1.84, 1.47, 8.41, 0.01));
        assert_eq!(l.score, None);
        assert_eq!(l.to_line(), GT_LINE);
    }

    #[test]
    fn detection_line_has_score() {
        let line = format!("{GT_LINE} 0.87");
        let l = &parse_label_file(&line).unwrap()[0];
        assert_eq!(l.score, Some(0.87));
        assert_eq!(l.to_line(), line);
    }

    #[test]
    fn dont_care_sentinels_preserved() {
        let line = "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10";
        let l = &parse_label_file(line).unwrap()[0];
        assert!(l.is_dont_care());
        assert_eq!(l.occlusion, -1);
        assert_eq!(l.z, -1000.0);
        let back = &parse_label_file(&l.to_line()).unwrap()[0];
        assert_eq!(back, l);
    }

    #[test]
    fn unknown_class_kept_verbatim() {
        let line = GT_LINE.replacen("Pedestrian", "Hovercraft", 1);
        assert_eq!(parse_label_file(&line).unwrap()[0].class_name, "Hovercraft");
    }

    #[test]
    fn wrong_field_count_names_line() {
        let text = format!("{GT_LINE}\n\nCar 0.00 0 1.0 1 2 3 4 1.5 1.6 3.9 1 2 3");
        match parse_label_file(&text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("14"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_rejected() {
        let bad = GT_LINE.replacen("8.41", "eight", 1);
        assert!(matches!(parse_label_file(&bad), Err(Error::Parse { line: 1, .. })));
        let bad_occ = GT_LINE.replacen(" 0 ", " 0.5 ", 1);
        assert!(matches!(parse_label_file(&bad_occ), Err(Error::Parse { .. })));
        let nan = GT_LINE.replacen("8.41", "NaN", 1);
        assert!(parse_label_file(&nan).is_err());
        let bad_box = GT_LINE.replacen("712.40", "900.00", 1);
        assert!(parse_label_file(&bad_box).is_err());
    }

    #[test]
    fn calib_p2_mapping() {
        let text = "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n\
                    P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03\n";
        let k = parse_calib(text, 1242, 375).unwrap();
        assert_eq!(k.fx, 721.5377);
        assert_eq!(k.fy, 721.5377);
        assert_eq!(k.cu, 609.5593);
        assert_eq!(k.cv, 172.854);
        assert_eq!(k.tx, 44.85728);
        assert_eq!(k.ty, 0.2163791);
    }

    #[test]
    fn calib_identity_like() {
        let k = parse_calib("P2: 1 0 0 0 0 1 0 0 0 0 1 0", 10, 10).unwrap();
        assert_eq!((k.fx, k.fy, k.cu, k.cv, k.tx, k.ty), (1.0, 1.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn calib_errors() {
        assert!(matches!(parse_calib("P0: 1 0 0 0 0 1 0 0 0 0 1 0", 10, 10), Err(Error::MissingP2)));
        assert!(matches!(parse_calib("P2: 1 0 0", 10, 10), Err(Error::Parse { .. })));
        assert!(matches!(parse_calib("P2: 1 0 0 0 0 1 0 0 0 0 1 x", 10, 10), Err(Error::Parse { .. })));
    }

    #[test]
    fn calib_round_trip() {
        let k = CameraIntrinsics::default();
        let text = serialize_calib(&k);
        let back = parse_calib(&text, k.image_w, k.image_h).unwrap();
        assert_eq!(back, k);
        assert_eq!(serialize_calib(&back), text);
    }

    fn label(height: f64, occ: i32, trunc: f64) -> ObjectLabel {
        let mut l = parse_label_file(GT_LINE).unwrap().remove(0);
        l.bbox = [100.0, 100.0, 150.0, 100.0 + height];
        l.occlusion = occ;
        l.truncation = trunc;
        l
    }

    #[test]
    fn difficulty_rules() {
        assert_eq!(difficulty(&label(50.0, 0, 0.1)), Difficulty::Easy);
        assert_eq!(difficulty(&label(30.0, 1, 0.2)), Difficulty::Moderate);
        assert_eq!(difficulty(&label(30.0, 2, 0.45)), Difficulty::Hard);
        assert_eq!(difficulty(&label(20.0, 0, 0.0)), Difficulty::Ignored);
        assert_eq!(difficulty(&label(60.0, 3, 0.0)), Difficulty::Ignored);
        assert_eq!(difficulty(&label(60.0, 0, 0.6)), Difficulty::Ignored);
    }

    #[test]
    fn difficulty_monotone() {
        for d in Difficulty::LEVELS {
            for level in Difficulty::LEVELS {
                assert_eq!(d.counts_at(level), d <= level);
            }
            assert!(!Difficulty::Ignored.counts_at(d));
        }
        assert!(Difficulty::Easy.counts_at(Difficulty::Hard));
    }
}
