//! Recursive feature pyramid.
//!
//! Stage `i` of the bottom-up pass computes
//! `x_i = relu(SAC(W_i . pool(x_{i-1})) + R_i(f_i))`, where the feedback
//! `R_i(f_i)` is a 1x1 map of the previous unroll's pyramid level (zero on the
//! first unroll). The top-down pass computes
//! `f_i = SE(L_i . x_i + upsample(f_{i+1}))`, with `f_S = SE(L_S . x_S)`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ops::{sac_apply, se_fuse, ConvKernel, FeatureMap, SeParams, Switch, SwitchParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    /// Bottom-up channel map, `(backbone, input)` channels.
    pub bottom_up: Array2<f64>,
    pub sac_kernel: ConvKernel,
    pub switch: SwitchParams,
    /// Top-down lateral map, `(pyramid, backbone)`.
    pub lateral: Array2<f64>,
    /// Feedback map back into the backbone, `(backbone, pyramid)`.
    pub feedback: Array2<f64>,
    pub se: SeParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub input_channels: usize,
    pub backbone_channels: usize,
    pub pyramid_channels: usize,
    pub stages: Vec<StageParams>,
    /// Number of bottom-up/top-down passes, at least 1.
    pub unrolls: usize,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let scale = 1.0 / (cols as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

impl StageSpec {
    pub fn seeded(
        seed: u64,
        input_channels: usize,
        backbone_channels: usize,
        pyramid_channels: usize,
        num_stages: usize,
        unrolls: usize,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = (0..num_stages)
            .map(|i| {
                let in_ch = if i == 0 { input_channels } else { backbone_channels };
                StageParams {
                    bottom_up: gaussian_matrix(backbone_channels, in_ch, &mut rng),
                    sac_kernel: ConvKernel::random(backbone_channels, backbone_channels, &mut rng),
                    switch: SwitchParams::random(backbone_channels, &mut rng),
                    lateral: gaussian_matrix(pyramid_channels, backbone_channels, &mut rng),
                    feedback: gaussian_matrix(backbone_channels, pyramid_channels, &mut rng),
                    se: SeParams::random(pyramid_channels, &mut rng),
                }
            })
            .collect();
        StageSpec {
            input_channels,
            backbone_channels,
            pyramid_channels,
            stages,
            unrolls,
        }
    }

    /// Same parameters with every feedback map `R_i` set to zero.
    pub fn with_zero_feedback(mut self) -> Self {
        for s in &mut self.stages {
            s.feedback.fill(0.0);
        }
        self
    }

    pub fn with_unrolls(mut self, unrolls: usize) -> Self {
        self.unrolls = unrolls;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.unrolls == 0 {
            return Err(Error::config("unrolls", "must be >= 1"));
        }
        if self.stages.is_empty() {
            return Err(Error::config("stages", "need at least one stage"));
        }
        let (b, p) = (self.backbone_channels, self.pyramid_channels);
        for (i, s) in self.stages.iter().enumerate() {
            let in_ch = if i == 0 { self.input_channels } else { b };
            let ok = s.bottom_up.dim() == (b, in_ch)
                && s.sac_kernel.weights.dim() == (b, b, 3, 3)
                && s.switch.weights.len() == b
                && s.lateral.dim() == (p, b)
                && s.feedback.dim() == (b, p)
                && s.se.weights.dim() == (p, p)
                && s.se.bias.len() == p;
            if !ok {
                return Err(Error::ShapeMismatch(format!("stage {i} parameters do not chain")));
            }
        }
        Ok(())
    }
}

fn bottom_up(prev: &FeatureMap, stage: &StageParams, feedback: Option<FeatureMap>) -> Result<FeatureMap> {
    let pooled = prev.avg_pool2()?.pointwise(&stage.bottom_up)?;
    let mut x = sac_apply(&pooled, &stage.sac_kernel, &Switch::Adaptive(stage.switch.clone()))?;
    if let Some(r) = feedback {
        x = x.add(&r)?;
    }
    Ok(x.map(|v| v.max(0.0)))
}

fn top_down(xs: &[FeatureMap], spec: &StageSpec) -> Result<Vec<FeatureMap>> {
    let mut fs: Vec<FeatureMap> = Vec::with_capacity(xs.len());
    for (x, stage) in xs.iter().zip(&spec.stages).rev() {
        let mut pre = x.pointwise(&stage.lateral)?;
        if let Some(above) = fs.last() {
            pre = pre.add(&above.upsample2())?;
        }
        fs.push(se_fuse(&pre, &stage.se)?);
    }
    fs.reverse();
    Ok(fs)
}

/// Runs the unrolled recursion and returns the final pyramid levels
/// `f_1..f_S`, finest first. Level `i` has half the spatial size of level
/// `i - 1`, starting from half the input size.
pub fn rfp_forward(x0: &FeatureMap, spec: &StageSpec) -> Result<Vec<FeatureMap>> {
    spec.validate()?;
    let (h, w, c) = x0.shape();
    if c != spec.input_channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {c} channels, spec expects {}",
            spec.input_channels
        )));
    }
    let div = 1usize << spec.stages.len();
    if h % div != 0 || w % div != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{h}x{w} input is not divisible by {div} for {} stages",
            spec.stages.len()
        )));
    }

    let mut pyramid: Option<Vec<FeatureMap>> = None;
    for _ in 0..spec.unrolls {
        let mut xs = Vec::with_capacity(spec.stages.len());
        let mut prev = x0;
        for (i, stage) in spec.stages.iter().enumerate() {
            let r = match &pyramid {
                Some(fs) => Some(fs[i].pointwise(&stage.feedback)?),
                None => None,
            };
            xs.push(bottom_up(prev, stage, r)?);
            prev = xs.last().expect("just pushed");
        }
        pyramid = Some(top_down(&xs, spec)?);
    }
    Ok(pyramid.expect("unrolls >= 1"))
}
