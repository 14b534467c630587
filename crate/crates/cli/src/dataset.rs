//! File layout shared by the commands. Frames are identified by the stem of
//! their label file (`000042` for `label_2/000042.txt`).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use monoflex_core::camera::CameraIntrinsics;
use monoflex_core::decode::HeadOutputs;
use monoflex_core::kitti::{parse_calib, parse_label_file, ObjectLabel};

use crate::config::RunConfig;

/// Suffix of self-contained JSON head files.
pub const JSON_HEADS_SUFFIX: &str = ".heads.json";

pub fn frame_name(i: usize) -> String {
    format!("{i:06}")
}

fn require_dir(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        bail!("directory not found: {}", dir.display());
    }
    Ok(())
}

/// Sorted frame ids of files in `dir` ending in `suffix`.
pub fn list_ids(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    require_dir(dir)?;
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(suffix)) {
            if !id.is_empty() && !id.contains('.') {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Frame ids of a heads directory in either storage format.
pub fn list_head_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = list_ids(dir, ".bin")?;
    ids.extend(list_ids(dir, JSON_HEADS_SUFFIX)?);
    ids.sort();
    ids.dedup();
    Ok(ids)
}

pub fn read_labels(path: &Path) -> Result<Vec<ObjectLabel>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_label_file(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Labels of a prediction frame; a missing file means no detections.
pub fn read_labels_or_empty(path: &Path) -> Result<Vec<ObjectLabel>> {
    if path.exists() {
        read_labels(path)
    } else {
        Ok(Vec::new())
    }
}

pub fn read_calib(dir: &Path, id: &str, cfg: &RunConfig) -> Result<CameraIntrinsics> {
    let path = dir.join(format!("{id}.txt"));
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    parse_calib(&text, cfg.image_width, cfg.image_height).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_heads(dir: &Path, id: &str) -> Result<HeadOutputs> {
    let bin = dir.join(format!("{id}.bin"));
    if bin.exists() {
        return HeadOutputs::load(&bin).with_context(|| format!("loading {}", bin.display()));
    }
    let json = dir.join(format!("{id}{JSON_HEADS_SUFFIX}"));
    let text = std::fs::read_to_string(&json).with_context(|| format!("reading {}", json.display()))?;
    HeadOutputs::from_json_text(&text).with_context(|| format!("parsing {}", json.display()))
}

pub fn create_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
