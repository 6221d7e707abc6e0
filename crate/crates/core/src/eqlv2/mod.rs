//! Gradient-guided equalization loss (EQL-v2).
//!
//! Every category keeps running totals of the positive and negative gradient
//! magnitudes it has received. Their ratio `g` drives a sigmoid gate
//! `f(g) = 1 / (1 + exp(-gamma * (g - mu)))`; positive gradients are scaled by
//! `q = 1 + alpha * (1 - f(g))` and negative gradients by `r = f(g)`. Rare
//! categories (small `g`) therefore get amplified positives and nearly silenced
//! negatives.
//!
//! The weights are constants for differentiation: the loss returned by
//! [`eqlv2_sigmoid_loss_and_grad`] is the per-category binary cross-entropy
//! scaled by the detached weights, so its analytic gradient is exactly the
//! reweighted gradient.

pub mod demo;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use demo::{run_longtail_demo, DemoConfig, DemoReport, Group, GroupMetrics, GroupRecall};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqlV2Config {
    /// Steepness of the gate.
    pub gamma: f64,
    /// Center of the gate.
    pub mu: f64,
    /// Extra positive weight given to a fully starved category.
    pub alpha: f64,
}

impl Default for EqlV2Config {
    fn default() -> Self {
        EqlV2Config {
            gamma: 12.0,
            mu: 0.8,
            alpha: 4.0,
        }
    }
}

impl EqlV2Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("gamma", format!("must be positive, got {}", self.gamma)));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::config("mu", format!("must lie in (0, 1), got {}", self.mu)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", format!("must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Gate `f(g)`, strictly inside (0, 1) for finite arguments.
pub fn weight_fn(g: f64, cfg: &EqlV2Config) -> f64 {
    1.0 / (1.0 + (-cfg.gamma * (g - cfg.mu)).exp())
}

/// Positive/negative gradient multipliers for one category.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradWeights {
    pub pos: f64,
    pub neg: f64,
}

impl GradWeights {
    pub const UNIT: GradWeights = GradWeights { pos: 1.0, neg: 1.0 };
}

/// `(q, r)` for ratio `g`.
pub fn pos_neg_weights(g: f64, cfg: &EqlV2Config) -> (f64, f64) {
    let f = weight_fn(g, cfg);
    (1.0 + cfg.alpha * (1.0 - f), f)
}

/// Per-category cumulative gradient statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientAccumulator {
    cum_pos: Vec<f64>,
    cum_neg: Vec<f64>,
    ratio: Vec<f64>,
    iterations: u64,
}

impl GradientAccumulator {
    /// Fresh state; every ratio starts at 0.
    pub fn new(num_categories: usize) -> Self {
        GradientAccumulator {
            cum_pos: vec![0.0; num_categories],
            cum_neg: vec![0.0; num_categories],
            ratio: vec![0.0; num_categories],
            iterations: 0,
        }
    }

    pub fn num_categories(&self) -> usize {
        self.ratio.len()
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn cum_pos(&self) -> &[f64] {
        &self.cum_pos
    }

    pub fn cum_neg(&self) -> &[f64] {
        &self.cum_neg
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratio
    }

    pub fn weights(&self, cfg: &EqlV2Config) -> Vec<GradWeights> {
        self.ratio
            .iter()
            .map(|&g| {
                let (pos, neg) = pos_neg_weights(g, cfg);
                GradWeights { pos, neg }
            })
            .collect()
    }

    /// Adds one iteration's reweighted gradient magnitudes and recomputes the
    /// ratios. A category without negative evidence keeps ratio 0.
    pub fn update(&mut self, pos: &[f64], neg: &[f64]) -> Result<()> {
        self.check_len(pos.len())?;
        self.check_len(neg.len())?;
        for j in 0..self.ratio.len() {
            self.cum_pos[j] += pos[j].abs();
            self.cum_neg[j] += neg[j].abs();
            self.ratio[j] = if self.cum_neg[j] > 0.0 {
                self.cum_pos[j] / self.cum_neg[j]
            } else {
                0.0
            };
        }
        self.iterations += 1;
        Ok(())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.ratio.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} categories, got {n}",
                self.ratio.len()
            )));
        }
        Ok(())
    }
}

/// Scales positive magnitudes by `q_j` and negative ones by `r_j`, using the
/// accumulator's current ratios.
pub fn reweight_gradients(
    pos_grad: &[f64],
    neg_grad: &[f64],
    acc: &GradientAccumulator,
    cfg: &EqlV2Config,
) -> Result<(Vec<f64>, Vec<f64>)> {
    acc.check_len(pos_grad.len())?;
    acc.check_len(neg_grad.len())?;
    if pos_grad.iter().chain(neg_grad).any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidInput("gradient magnitudes must be >= 0".into()));
    }
    let w = acc.weights(cfg);
    let pos = pos_grad.iter().zip(&w).map(|(p, w)| w.pos * p).collect();
    let neg = neg_grad.iter().zip(&w).map(|(n, w)| w.neg * n).collect();
    Ok((pos, neg))
}

pub fn update_ratio(acc: &mut GradientAccumulator, pos: &[f64], neg: &[f64]) -> Result<()> {
    acc.update(pos, neg)
}

/// Masked softmax cross-entropy `-sum_j W_j * ln(p_j)` over categories.
pub fn eql_v1_loss(probs: &[f64], mask: &[bool]) -> Result<f64> {
    if probs.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities vs {} mask entries",
            probs.len(),
            mask.len()
        )));
    }
    let mut loss = 0.0;
    for (j, (&p, &w)) in probs.iter().zip(mask).enumerate() {
        if p.is_nan() || p > 1.0 {
            return Err(Error::InvalidInput(format!("probability {p} at category {j}")));
        }
        if w {
            if p <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "non-positive probability {p} at weighted category {j}"
                )));
            }
            loss -= p.ln();
        }
    }
    Ok(loss)
}

/// Which output a sample should activate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Category(usize),
    /// Negative for every category.
    Background,
}

impl Target {
    fn is_positive(&self, j: usize) -> bool {
        matches!(self, Target::Category(t) if *t == j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    /// d loss / d logits.
    pub grad: Vec<f64>,
    /// Reweighted positive gradient magnitude per category.
    pub pos_magnitude: Vec<f64>,
    /// Reweighted negative gradient magnitude per category.
    pub neg_magnitude: Vec<f64>,
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Plain per-category sigmoid cross-entropy and its gradient.
pub fn sigmoid_bce_loss_and_grad(logits: &[f64], target: Target) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .enumerate()
        .map(|(j, &z)| {
            if target.is_positive(j) {
                loss += softplus(-z);
                sigmoid(z) - 1.0
            } else {
                loss += softplus(z);
                sigmoid(z)
            }
        })
        .collect();
    (loss, grad)
}

/// Sigmoid cross-entropy with the positive term of each category scaled by
/// `weights[j].pos` and the negative term by `weights[j].neg`.
pub fn weighted_sigmoid_loss_and_grad(
    logits: &[f64],
    target: Target,
    weights: &[GradWeights],
) -> Result<LossAndGrad> {
    if logits.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits vs {} category weights",
            logits.len(),
            weights.len()
        )));
    }
    if let Target::Category(t) = target {
        if t >= logits.len() {
            return Err(Error::InvalidInput(format!(
                "target category {t} out of range for {} categories",
                logits.len()
            )));
        }
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    let n = logits.len();
    let mut out = LossAndGrad {
        loss: 0.0,
        grad: Vec::with_capacity(n),
        pos_magnitude: vec![0.0; n],
        neg_magnitude: vec![0.0; n],
    };
    for (j, (&z, w)) in logits.iter().zip(weights).enumerate() {
        let s = sigmoid(z);
        if target.is_positive(j) {
            out.loss += w.pos * softplus(-z);
            let g = w.pos * (s - 1.0);
            out.pos_magnitude[j] = g.abs();
            out.grad.push(g);
        } else {
            out.loss += w.neg * softplus(z);
            let g = w.neg * s;
            out.neg_magnitude[j] = g.abs();
            out.grad.push(g);
        }
    }
    Ok(out)
}

/// EQL-v2 loss and gradient for one sample, with weights taken from a snapshot
/// of `acc`. The caller feeds the returned magnitudes back via
/// [`GradientAccumulator::update`].
pub fn eqlv2_sigmoid_loss_and_grad(
    logits: &[f64],
    target: Target,
    acc: &GradientAccumulator,
    cfg: &EqlV2Config,
) -> Result<LossAndGrad> {
    acc.check_len(logits.len())?;
    weighted_sigmoid_loss_and_grad(logits, target, &acc.weights(cfg))
}
