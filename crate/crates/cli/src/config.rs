use std::path::Path;

use anyhow::{Context, Result};
use monoflex_core::decode::{DecodeConfig, HeadConfig};
use monoflex_core::depthsolve::EnsembleMode;
use monoflex_core::eval3d::{ApMode, EvalConfig};
use monoflex_core::represent::CenterMode;
use monoflex_core::synthgen::{NoiseSpec, SceneSpec};
use serde::Deserialize;

use crate::UsageError;

/// How the decoder turns the four depth estimates into one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthMode {
    Ensemble(EnsembleMode),
    /// Ground-truth-nearest estimate; needs labels.
    Oracle,
}

impl DepthMode {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "oracle" {
            return Ok(DepthMode::Oracle);
        }
        EnsembleMode::parse(s).map(DepthMode::Ensemble).ok_or_else(|| {
            UsageError(format!(
                "unknown ensemble mode `{s}` (expected soft, hard, oracle or single:<direct|center|diag1|diag2>)"
            ))
            .into()
        })
    }
}

/// Settings shared by all commands. Values come from defaults, then the
/// optional `--config` JSON file, then command-line flags.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub stride: u32,
    pub score_threshold: f64,
    pub max_detections: usize,
    pub ensemble: String,
    pub mode: String,
    pub classes: Vec<String>,
    pub image_width: u32,
    pub image_height: u32,
    pub center_mode: CenterMode,
    pub scene: SceneSpec,
    pub noise: NoiseSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let head = HeadConfig::default();
        let dec = DecodeConfig::default();
        Self {
            seed: 0,
            jobs: None,
            stride: head.stride,
            score_threshold: dec.score_threshold,
            max_detections: dec.max_detections,
            ensemble: "soft".into(),
            mode: "r40".into(),
            classes: head.class_names,
            image_width: 1280,
            image_height: 384,
            center_mode: CenterMode::Volumetric,
            scene: SceneSpec::default(),
            noise: NoiseSpec::default(),
        }
    }
}

/// Flags that override the config file when given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub stride: Option<u32>,
    pub score_threshold: Option<f64>,
    pub ensemble: Option<String>,
    pub mode: Option<String>,
    pub classes: Option<Vec<String>>,
    pub image_size: Option<(u32, u32)>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| UsageError(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        if let Some(v) = o.jobs {
            cfg.jobs = Some(v);
        }
        if let Some(v) = o.stride {
            cfg.stride = v;
        }
        if let Some(v) = o.score_threshold {
            cfg.score_threshold = v;
        }
        if let Some(v) = &o.ensemble {
            cfg.ensemble = v.clone();
        }
        if let Some(v) = &o.mode {
            cfg.mode = v.clone();
        }
        if let Some(v) = &o.classes {
            cfg.classes = v.clone();
        }
        if let Some((w, h)) = o.image_size {
            cfg.image_width = w;
            cfg.image_height = h;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(UsageError("stride must be >= 1".into()).into());
        }
        if !(self.score_threshold >= 0.0 && self.score_threshold < 1.0) {
            return Err(UsageError(format!("score threshold must be in [0, 1), got {}", self.score_threshold)).into());
        }
        if self.classes.is_empty() {
            return Err(UsageError("class list is empty".into()).into());
        }
        if self.jobs == Some(0) {
            return Err(UsageError("--jobs must be >= 1".into()).into());
        }
        self.depth_mode()?;
        self.ap_mode()?;
        Ok(())
    }

    pub fn depth_mode(&self) -> Result<DepthMode> {
        DepthMode::parse(&self.ensemble)
    }

    pub fn ap_mode(&self) -> Result<ApMode> {
        ApMode::parse(&self.mode)
            .ok_or_else(|| UsageError(format!("unknown AP mode `{}` (expected r11 or r40)", self.mode)).into())
    }

    pub fn head(&self) -> Result<HeadConfig> {
        let head = HeadConfig {
            class_names: self.classes.clone(),
            stride: self.stride,
            center_mode: self.center_mode,
            ..HeadConfig::default()
        };
        head.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(head)
    }

    pub fn decode(&self) -> Result<DecodeConfig> {
        let mode = match self.depth_mode()? {
            DepthMode::Ensemble(m) => m,
            DepthMode::Oracle => EnsembleMode::Soft,
        };
        Ok(DecodeConfig { max_detections: self.max_detections, score_threshold: self.score_threshold, mode })
    }

    pub fn eval(&self) -> Result<EvalConfig> {
        let cfg = EvalConfig { mode: self.ap_mode()?, ..EvalConfig::default() };
        cfg.with_classes(&self.classes).map_err(|e| UsageError(e.to_string()).into())
    }

    pub fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.jobs {
            b = b.num_threads(n);
        }
        Ok(b.build()?)
    }
}
