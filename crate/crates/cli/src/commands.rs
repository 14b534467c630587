use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use monoflex_core::decode::{decode_detections, encode_targets, EncodeStats};
use monoflex_core::eval3d::evaluate;
use monoflex_core::kitti::{serialize_calib, serialize_labels, ObjectLabel};
use monoflex_core::study::{analyze_scene, build_report, match_by_iou2d, mode_depth, StudyConfig, StudyMode};
use monoflex_core::synthgen::{self, gen_scene, NoiseSpec, SceneSpec};
use rayon::prelude::*;

use crate::config::{DepthMode, RunConfig};
use crate::dataset::{self, frame_name, JSON_HEADS_SUFFIX};
use crate::UsageError;

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| UsageError(format!("{what} {}: {e}", path.display())).into())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory; receives label_2/ and calib/
    #[arg(long)]
    out: PathBuf,
    /// JSON scene spec; defaults to the `scene` entry of the run config
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Number of scenes; scene i uses seed + i
    #[arg(long, default_value_t = 1)]
    num_scenes: usize,
    /// Objects per scene
    #[arg(long)]
    objects: Option<usize>,
    /// Share of objects whose projected center lies outside the image
    #[arg(long)]
    truncation_fraction: Option<f64>,
}

pub fn synth(cfg: &RunConfig, a: &SynthArgs) -> Result<()> {
    let mut spec: SceneSpec = match &a.spec {
        Some(p) => read_json(p, "scene spec")?,
        None => cfg.scene.clone(),
    };
    if let Some(n) = a.objects {
        spec.n_objects = n;
    }
    if let Some(f) = a.truncation_fraction {
        spec.truncation_fraction = f;
    }
    spec.stride = cfg.stride;
    spec.center_mode = cfg.center_mode;
    spec.camera.image_w = cfg.image_width;
    spec.camera.image_h = cfg.image_height;
    spec.validate().map_err(|e| UsageError(e.to_string()))?;

    let labels_dir = dataset::create_dir(&a.out.join("label_2"))?;
    let calib_dir = dataset::create_dir(&a.out.join("calib"))?;
    let pool = cfg.pool()?;
    let scenes = pool.install(|| {
        (0..a.num_scenes)
            .into_par_iter()
            .map(|i| {
                let s = SceneSpec { seed: cfg.seed.wrapping_add(i as u64), ..spec.clone() };
                gen_scene(&s).with_context(|| format!("scene {i}"))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut objects = 0;
    for (i, s) in scenes.iter().enumerate() {
        let id = frame_name(i);
        dataset::write(&labels_dir.join(format!("{id}.txt")), serialize_labels(&s.labels))?;
        dataset::write(&calib_dir.join(format!("{id}.txt")), serialize_calib(&s.calib))?;
        objects += s.labels.len();
    }
    eprintln!("wrote {} scenes ({objects} objects) to {}", scenes.len(), a.out.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum HeadFormat {
    /// f32 little-endian CHW `.bin` plus a `.json` header
    Bin,
    /// One self-contained `.heads.json` file with f64 values
    Json,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Directory of KITTI label files
    #[arg(long)]
    labels: PathBuf,
    /// Directory of KITTI calibration files
    #[arg(long)]
    calib: PathBuf,
    /// Output directory for head maps
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = HeadFormat::Bin)]
    format: HeadFormat,
}

pub fn encode(cfg: &RunConfig, a: &EncodeArgs) -> Result<()> {
    let head = cfg.head()?;
    let ids = dataset::list_ids(&a.labels, ".txt")?;
    let out = dataset::create_dir(&a.out)?;
    let pool = cfg.pool()?;
    let stats = pool.install(|| {
        ids.par_iter()
            .map(|id| -> Result<EncodeStats> {
                let labels = dataset::read_labels(&a.labels.join(format!("{id}.txt")))?;
                let k = dataset::read_calib(&a.calib, id, cfg)?;
                let (ho, stats) = encode_targets(&labels, &k, &head).with_context(|| format!("encoding {id}"))?;
                match a.format {
                    HeadFormat::Bin => {
                        let p = out.join(format!("{id}.bin"));
                        ho.save(&p).with_context(|| format!("writing {}", p.display()))?;
                    }
                    HeadFormat::Json => dataset::write(&out.join(format!("{id}{JSON_HEADS_SUFFIX}")), ho.to_json_text())?,
                }
                Ok(stats)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let total = stats.iter().fold(EncodeStats::default(), |mut t, s| {
        t.encoded += s.encoded;
        t.inside += s.inside;
        t.outside += s.outside;
        t.skipped_behind_camera += s.skipped_behind_camera;
        t.skipped_class += s.skipped_class;
        t.skipped_degenerate += s.skipped_degenerate;
        t.collisions += s.collisions;
        t
    });
    eprintln!(
        "encoded {} frames: {} objects ({} inside, {} outside), skipped {} behind camera, {} other class, {} degenerate, {} cell collisions",
        ids.len(),
        total.encoded,
        total.inside,
        total.outside,
        total.skipped_behind_camera,
        total.skipped_class,
        total.skipped_degenerate,
        total.collisions
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Directory of head maps
    #[arg(long)]
    heads: PathBuf,
    /// Directory of KITTI calibration files
    #[arg(long)]
    calib: PathBuf,
    /// Output directory for prediction label files
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth labels; required by `--ensemble oracle`
    #[arg(long)]
    gt: Option<PathBuf>,
}

pub fn decode(cfg: &RunConfig, a: &DecodeArgs) -> Result<()> {
    let head = cfg.head()?;
    let dec = cfg.decode()?;
    let mode = cfg.depth_mode()?;
    if mode == DepthMode::Oracle && a.gt.is_none() {
        return Err(UsageError("--ensemble oracle needs --gt".into()).into());
    }
    let ids = dataset::list_head_ids(&a.heads)?;
    let out = dataset::create_dir(&a.out)?;
    let pool = cfg.pool()?;
    let counts = pool.install(|| {
        ids.par_iter()
            .map(|id| -> Result<usize> {
                let ho = dataset::read_heads(&a.heads, id)?;
                let k = dataset::read_calib(&a.calib, id, cfg)?;
                let decoded = decode_detections(&ho, &k, &head, &dec).with_context(|| format!("decoding {id}"))?;
                let rows: Vec<ObjectLabel> = match (mode, &a.gt) {
                    (DepthMode::Oracle, Some(gt_dir)) => {
                        let gt = dataset::read_labels(&gt_dir.join(format!("{id}.txt")))?;
                        let matches = match_by_iou2d(&decoded.detections, &gt, 0.5);
                        let mut rows = Vec::new();
                        for (d, m) in decoded.detections.iter().zip(matches) {
                            let z = mode_depth(d, StudyMode::Oracle, m.map(|j| gt[j].z))?;
                            if let Ok(moved) = d.with_depth(z, &k) {
                                rows.push(moved.to_label(&k));
                            }
                        }
                        rows
                    }
                    _ => decoded.detections.iter().map(|d| d.to_label(&k)).collect(),
                };
                dataset::write(&out.join(format!("{id}.txt")), serialize_labels(&rows))?;
                Ok(rows.len())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    eprintln!("decoded {} frames, {} detections", ids.len(), counts.iter().sum::<usize>());
    Ok(())
}

#[derive(Args, Debug)]
pub struct PerturbArgs {
    /// Directory of head maps
    #[arg(long)]
    heads: PathBuf,
    /// Output directory for the perturbed maps (same storage format)
    #[arg(long)]
    out: PathBuf,
    /// JSON noise spec; defaults to the `noise` entry of the run config
    #[arg(long, value_name = "FILE")]
    noise: Option<PathBuf>,
    /// Noise σ on the direct depth channel (nats of z)
    #[arg(long)]
    depth_sigma: Option<f64>,
    /// Noise σ on every keypoint offset (cells)
    #[arg(long)]
    keypoint_sigma: Option<f64>,
}

fn noise_spec(cfg: &RunConfig, a: &PerturbArgs) -> Result<NoiseSpec> {
    let mut spec: NoiseSpec = match &a.noise {
        Some(p) => read_json(p, "noise spec")?,
        None => cfg.noise.clone(),
    };
    if let Some(s) = a.depth_sigma {
        spec.depth = s;
    }
    if let Some(s) = a.keypoint_sigma {
        spec.keypoints_center = s;
        spec.keypoints_diag1 = s;
        spec.keypoints_diag2 = s;
    }
    Ok(spec)
}

pub fn perturb(cfg: &RunConfig, a: &PerturbArgs) -> Result<()> {
    let spec = noise_spec(cfg, a)?;
    let ids = dataset::list_head_ids(&a.heads)?;
    let out = dataset::create_dir(&a.out)?;
    let pool = cfg.pool()?;
    pool.install(|| {
        ids.par_iter().enumerate().try_for_each(|(i, id)| -> Result<()> {
            let ho = dataset::read_heads(&a.heads, id)?;
            let s = NoiseSpec { seed: cfg.seed.wrapping_add(i as u64), ..spec.clone() };
            let noisy = synthgen::perturb(&ho, &s).map_err(|e| UsageError(format!("noise spec: {e}")))?;
            if a.heads.join(format!("{id}.bin")).exists() {
                let p = out.join(format!("{id}.bin"));
                noisy.save(&p).with_context(|| format!("writing {}", p.display()))
            } else {
                dataset::write(&out.join(format!("{id}{JSON_HEADS_SUFFIX}")), noisy.to_json_text())
            }
        })
    })?;
    eprintln!("perturbed {} frames", ids.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of ground-truth label files
    #[arg(long)]
    gt: PathBuf,
    /// Directory of prediction files; a missing file means no detections
    #[arg(long)]
    pred: PathBuf,
    /// Also write the report as JSON
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
    /// Also write the text report to a file
    #[arg(long, value_name = "FILE")]
    text: Option<PathBuf>,
}

pub fn eval(cfg: &RunConfig, a: &EvalArgs) -> Result<()> {
    let ecfg = cfg.eval()?;
    let ids = dataset::list_ids(&a.gt, ".txt")?;
    if !a.pred.is_dir() {
        anyhow::bail!("directory not found: {}", a.pred.display());
    }
    let pool = cfg.pool()?;
    let (gt, det): (Vec<_>, Vec<_>) = pool
        .install(|| {
            ids.par_iter()
                .map(|id| {
                    let g = dataset::read_labels(&a.gt.join(format!("{id}.txt")))?;
                    let d = dataset::read_labels_or_empty(&a.pred.join(format!("{id}.txt")))?;
                    Ok((g, d))
                })
                .collect::<Result<Vec<_>>>()
        })?
        .into_iter()
        .unzip();
    let report = evaluate(&gt, &det, &ecfg)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = &a.text {
        dataset::write(p, &text)?;
    }
    if let Some(p) = &a.json {
        dataset::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory of ground-truth label files
    #[arg(long)]
    gt: PathBuf,
    /// Directory of KITTI calibration files
    #[arg(long)]
    calib: PathBuf,
    /// Directory of head maps (usually perturbed)
    #[arg(long)]
    heads: PathBuf,
    /// Also write the report as JSON
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

pub fn ensemble_report(cfg: &RunConfig, a: &ReportArgs) -> Result<()> {
    let study = StudyConfig { head: cfg.head()?, decode: cfg.decode()?, eval: cfg.eval()?, match_iou: 0.5 };
    let ids = dataset::list_ids(&a.gt, ".txt")?;
    let pool = cfg.pool()?;
    let (gts, results): (Vec<_>, Vec<_>) = pool
        .install(|| {
            ids.par_iter()
                .map(|id| {
                    let gt = dataset::read_labels(&a.gt.join(format!("{id}.txt")))?;
                    let k = dataset::read_calib(&a.calib, id, cfg)?;
                    let ho = dataset::read_heads(&a.heads, id)?;
                    let r = analyze_scene(&gt, &ho, &k, &study).with_context(|| format!("analyzing {id}"))?;
                    Ok((gt, r))
                })
                .collect::<Result<Vec<_>>>()
        })?
        .into_iter()
        .unzip();
    let report = build_report(&gts, &results, &study)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.json {
        dataset::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}
