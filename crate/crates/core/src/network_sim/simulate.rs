//! One seeded end-to-end forward pass: pyramid, then cascade refinement of a
//! few random proposals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cascade_refine, rfp_forward, CascadeSpec, FeatureMap, StageSpec};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub height: usize,
    pub width: usize,
    pub input_channels: usize,
    pub backbone_channels: usize,
    pub pyramid_channels: usize,
    pub stages: usize,
    pub unrolls: usize,
    pub proposals: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            height: 32,
            width: 32,
            input_channels: 3,
            backbone_channels: 8,
            pyramid_channels: 8,
            stages: 3,
            unrolls: 2,
            proposals: 4,
        }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.unrolls == 0 {
            return Err(Error::config("stages", "stages and unrolls must be >= 1"));
        }
        if self.input_channels == 0 || self.backbone_channels == 0 || self.pyramid_channels == 0 {
            return Err(Error::config("channels", "channel counts must be >= 1"));
        }
        let div = 1usize.checked_shl(self.stages as u32).unwrap_or(0);
        if div == 0 || self.height == 0 || self.width == 0 || !self.height.is_multiple_of(div) || !self.width.is_multiple_of(div) {
            return Err(Error::config(
                "height",
                format!("height and width must be positive multiples of 2^stages = {div}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSummary {
    pub shape: (usize, usize, usize),
    pub checksum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub input: LevelSummary,
    pub levels: Vec<LevelSummary>,
    pub proposals: Vec<BBox>,
    /// `refined[p][k]` is proposal `p` after head `k`.
    pub refined: Vec<Vec<BBox>>,
}

fn summary(f: &FeatureMap) -> LevelSummary {
    LevelSummary {
        shape: f.shape(),
        checksum: f.checksum(),
    }
}

pub fn run_simulation(seed: u64, cfg: &SimulateConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = FeatureMap::random(cfg.height, cfg.width, cfg.input_channels, &mut rng);
    let spec = StageSpec::seeded(
        rng.gen(),
        cfg.input_channels,
        cfg.backbone_channels,
        cfg.pyramid_channels,
        cfg.stages,
        cfg.unrolls,
    );
    let levels = rfp_forward(&x0, &spec)?;
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let proposals: Vec<BBox> = (0..cfg.proposals)
        .map(|_| {
            let x = rng.gen_range(0.0..0.75 * w);
            let y = rng.gen_range(0.0..0.75 * h);
            let bw = rng.gen_range(0.1 * w..=0.25 * w);
            let bh = rng.gen_range(0.1 * h..=0.25 * h);
            BBox { x_min: x, y_min: y, x_max: x + bw, y_max: y + bh }
        })
        .collect();
    let refined = cascade_refine(&proposals, &CascadeSpec::seeded(rng.gen()))?;
    Ok(SimulationReport {
        input: summary(&x0),
        levels: levels.iter().map(summary).collect(),
        proposals,
        refined,
    })
}
