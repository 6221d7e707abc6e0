//! The TOML run configuration. Every section is optional and falls back to
//! the library defaults.
//!
//! ```toml
//! seed = 7
//!
//! [evaluation]
//! thresholds = [0.5, 0.75]
//!
//! [postprocess]
//! method = "gaussian"   # standard | hard | linear | gaussian
//! sigma = 0.5
//!
//! [multiscale]
//! short_side_targets = [800, 900, 1000, 1100]
//! max_long_side = 1333
//!
//! [[corruption.suite]]
//! kind = "fog"
//! attenuation = 1.5
//! airlight = 220
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_to_string, validation};
use crate::augment::{default_suite, CorruptionSpec};
use crate::eqlv2::DemoConfig;
use crate::error::{Error, Result};
use crate::evaluation::{default_thresholds, validate_thresholds};
use crate::geometry::Detection;
use crate::multiscale::ScalePlan;
use crate::network_sim::SimulateConfig;
use crate::postprocess::{soft_nms, standard_nms, SoftNmsConfig, SoftNmsMethod};

/// Overrides the master seed of every command.
pub const SEED_ENV: &str = "LOGODET_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub thresholds: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            thresholds: default_thresholds(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostprocessMethod {
    /// Greedy NMS.
    Standard,
    Hard,
    Linear,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub method: PostprocessMethod,
    pub iou_threshold: f64,
    pub sigma: f64,
    pub score_floor: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        let d = SoftNmsConfig::default();
        PostprocessConfig {
            method: PostprocessMethod::Gaussian,
            iou_threshold: d.iou_threshold,
            sigma: d.sigma,
            score_floor: d.score_floor,
        }
    }
}

impl PostprocessConfig {
    /// The Soft-NMS settings. `standard` maps onto hard suppression without a
    /// score floor, which keeps exactly the detections greedy NMS keeps.
    pub fn soft_nms(&self) -> SoftNmsConfig {
        let method = match self.method {
            PostprocessMethod::Standard => return SoftNmsConfig::hard(self.iou_threshold),
            PostprocessMethod::Hard => SoftNmsMethod::Hard,
            PostprocessMethod::Linear => SoftNmsMethod::Linear,
            PostprocessMethod::Gaussian => SoftNmsMethod::Gaussian,
        };
        SoftNmsConfig {
            method,
            iou_threshold: self.iou_threshold,
            sigma: self.sigma,
            score_floor: self.score_floor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.soft_nms().validate()
    }

    pub fn run(&self, dets: &[Detection]) -> Result<Vec<Detection>> {
        match self.method {
            PostprocessMethod::Standard => standard_nms(dets, self.iou_threshold),
            _ => soft_nms(dets, &self.soft_nms()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub suite: Vec<CorruptionSpec>,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig { suite: default_suite() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub evaluation: EvaluationConfig,
    pub postprocess: PostprocessConfig,
    pub multiscale: ScalePlan,
    pub corruption: CorruptionConfig,
    pub eql_demo: DemoConfig,
    pub simulate: SimulateConfig,
}

fn section(path: &Path, name: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| validation(path, name.to_string(), e.to_string()))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            let (line, column) = inner
                .span()
                .map(|s| line_col(text, s.start))
                .unwrap_or((0, 0));
            Error::Parse {
                path: path.to_path_buf(),
                line,
                column,
                field,
                message: inner.message().to_string(),
            }
        })?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self, path: &Path) -> Result<()> {
        section(path, "evaluation.thresholds", validate_thresholds(&self.evaluation.thresholds))?;
        section(path, "postprocess", self.postprocess.validate())?;
        section(path, "multiscale", self.multiscale.validate())?;
        for (i, spec) in self.corruption.suite.iter().enumerate() {
            section(path, &format!("corruption.suite[{i}]"), spec.validate())?;
        }
        if self.corruption.suite.is_empty() {
            return Err(validation(path, "corruption.suite".into(), "must not be empty".into()));
        }
        section(path, "eql_demo", self.eql_demo.validate())?;
        section(path, "simulate", self.simulate.validate())
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Picks the master seed: command-line flag, then the environment variable,
/// then the config file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env.map(str::trim) {
        Some(v) if !v.is_empty() => v
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{SEED_ENV}={v:?} is not an unsigned 64-bit integer"))),
        _ => Ok(config),
    }
}
