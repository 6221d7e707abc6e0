//! Toy long-tailed classification run comparing plain sigmoid cross-entropy
//! with EQL-v2 on identical data, initialization and schedule.
//!
//! Categories are 2-D Gaussian blobs whose centers sit evenly on a circle,
//! with head, mid and tail categories interleaved so that every tail blob
//! borders a head blob. Background samples form an extra blob at the origin
//! and act as negatives for every category. The classifier is a linear score
//! head; prediction is the arg-max over categories.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    sigmoid, sigmoid_bce_loss_and_grad, weighted_sigmoid_loss_and_grad, EqlV2Config, GradWeights,
    GradientAccumulator, Target,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Head,
    Mid,
    Tail,
}

impl Group {
    pub fn name(&self) -> &'static str {
        match self {
            Group::Head => "head",
            Group::Mid => "mid",
            Group::Tail => "tail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// Categories per group; the total is three times this.
    pub categories_per_group: usize,
    pub head_samples: usize,
    pub mid_samples: usize,
    pub tail_samples: usize,
    pub background_samples: usize,
    pub test_samples_per_category: usize,
    /// Distance of blob centers from the origin.
    pub radius: f64,
    /// Standard deviation of every blob.
    pub spread: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// A category fires on a sample when its sigmoid score reaches this.
    pub score_threshold: f64,
    pub eql: EqlV2Config,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            categories_per_group: 3,
            head_samples: 1000,
            mid_samples: 100,
            tail_samples: 10,
            background_samples: 1000,
            test_samples_per_category: 200,
            radius: 6.0,
            spread: 1.0,
            epochs: 50,
            batch_size: 64,
            learning_rate: 0.5,
            score_threshold: 0.5,
            eql: EqlV2Config::default(),
        }
    }
}

impl DemoConfig {
    pub fn num_categories(&self) -> usize {
        3 * self.categories_per_group
    }

    pub fn group_of(&self, category: usize) -> Group {
        match category % 3 {
            0 => Group::Head,
            1 => Group::Mid,
            _ => Group::Tail,
        }
    }

    fn samples_for(&self, group: Group) -> usize {
        match group {
            Group::Head => self.head_samples,
            Group::Mid => self.mid_samples,
            Group::Tail => self.tail_samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories_per_group == 0 {
            return Err(Error::config("categories_per_group", "must be >= 1"));
        }
        if self.head_samples == 0 || self.mid_samples == 0 || self.tail_samples == 0 {
            return Err(Error::config("samples", "every category needs at least one sample"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.score_threshold > 0.0 && self.score_threshold < 1.0) {
            return Err(Error::config("score_threshold", "must lie in (0, 1)"));
        }
        if !(self.spread > 0.0 && self.radius > 0.0) {
            return Err(Error::config("spread", "spread and radius must be positive"));
        }
        self.eql.validate()
    }
}

/// How per-category gradients are weighted during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reweighting {
    /// Plain sigmoid cross-entropy.
    None,
    EqlV2(EqlV2Config),
    /// Fixed weights for every category, still routed through the
    /// accumulator bookkeeping.
    Constant(GradWeights),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: [f64; 2],
    pub target: Target,
}

/// Linear score head plus the training-set category counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    /// Row-major `num_categories x 2`.
    pub weights: Vec<[f64; 2]>,
    pub bias: Vec<f64>,
    pub category_counts: Vec<usize>,
}

impl ClassifierState {
    fn init(num_categories: usize, counts: Vec<usize>, rng: &mut ChaCha8Rng) -> Self {
        let weights = (0..num_categories)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                [0.01 * a, 0.01 * b]
            })
            .collect();
        ClassifierState {
            weights,
            bias: vec![0.0; num_categories],
            category_counts: counts,
        }
    }

    pub fn logits(&self, x: &[f64; 2]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w[0] * x[0] + w[1] * x[1] + b)
            .collect()
    }

    pub fn predict(&self, x: &[f64; 2]) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for (j, v) in z.iter().enumerate() {
            if *v > z[best] {
                best = j;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRecall {
    pub head: f64,
    pub mid: f64,
    pub tail: f64,
}

impl GroupRecall {
    pub fn get(&self, group: Group) -> f64 {
        match group {
            Group::Head => self.head,
            Group::Mid => self.mid,
            Group::Tail => self.tail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub seed: u64,
    pub category_groups: Vec<Group>,
    pub train_counts: Vec<usize>,
    pub cross_entropy: GroupMetrics,
    pub eqlv2: GroupMetrics,
    /// Final positive/negative ratio `g_j` of the EQL-v2 run.
    pub final_ratios: Vec<f64>,
}

fn center(cfg: &DemoConfig, category: usize) -> [f64; 2] {
    let angle = TAU * category as f64 / cfg.num_categories() as f64;
    [cfg.radius * angle.cos(), cfg.radius * angle.sin()]
}

fn blob_sample(rng: &mut ChaCha8Rng, c: [f64; 2], spread: f64) -> [f64; 2] {
    let dx: f64 = rng.sample(StandardNormal);
    let dy: f64 = rng.sample(StandardNormal);
    [c[0] + spread * dx, c[1] + spread * dy]
}

/// Long-tailed training set (with background) and a balanced test set.
pub fn make_dataset(cfg: &DemoConfig, rng: &mut ChaCha8Rng) -> (Vec<Sample>, Vec<Sample>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..cfg.num_categories() {
        let mu = center(cfg, c);
        for _ in 0..cfg.samples_for(cfg.group_of(c)) {
            train.push(Sample {
                features: blob_sample(rng, mu, cfg.spread),
                target: Target::Category(c),
            });
        }
        for _ in 0..cfg.test_samples_per_category {
            test.push(Sample {
                features: blob_sample(rng, mu, cfg.spread),
                target: Target::Category(c),
            });
        }
    }
    for _ in 0..cfg.background_samples {
        train.push(Sample {
            features: blob_sample(rng, [0.0, 0.0], cfg.spread),
            target: Target::Background,
        });
    }
    (train, test)
}

/// Mini-batch SGD on the mean batch loss. The batch order comes from
/// `shuffle_seed`, so two runs with the same seed see identical batches. The
/// accumulator is updated once per batch with the summed magnitudes.
pub fn train_linear_head(
    train: &[Sample],
    init: &ClassifierState,
    reweighting: Reweighting,
    cfg: &DemoConfig,
    shuffle_seed: u64,
) -> Result<(ClassifierState, GradientAccumulator)> {
    let n_cat = init.bias.len();
    let mut state = init.clone();
    let mut acc = GradientAccumulator::new(n_cat);
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let weights = match reweighting {
                Reweighting::None => None,
                Reweighting::EqlV2(eql) => Some(acc.weights(&eql)),
                Reweighting::Constant(w) => Some(vec![w; n_cat]),
            };
            let mut gw = vec![[0.0f64; 2]; n_cat];
            let mut gb = vec![0.0f64; n_cat];
            let mut pos = vec![0.0f64; n_cat];
            let mut neg = vec![0.0f64; n_cat];
            for &i in batch {
                let s = &train[i];
                let z = state.logits(&s.features);
                let grad = match &weights {
                    None => sigmoid_bce_loss_and_grad(&z, s.target).1,
                    Some(w) => {
                        let out = weighted_sigmoid_loss_and_grad(&z, s.target, w)?;
                        for j in 0..n_cat {
                            pos[j] += out.pos_magnitude[j];
                            neg[j] += out.neg_magnitude[j];
                        }
                        out.grad
                    }
                };
                for j in 0..n_cat {
                    gw[j][0] += grad[j] * s.features[0];
                    gw[j][1] += grad[j] * s.features[1];
                    gb[j] += grad[j];
                }
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for j in 0..n_cat {
                state.weights[j][0] -= step * gw[j][0];
                state.weights[j][1] -= step * gw[j][1];
                state.bias[j] -= step * gb[j];
            }
            if weights.is_some() {
                acc.update(&pos, &neg)?;
            }
        }
    }
    Ok((state, acc))
}

/// Per-group detection-style metrics of a trained head on the balanced test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    /// Fraction of a group's test samples whose true category fires
    /// (`sigmoid(z_c) >= score_threshold`).
    pub recall: GroupRecall,
    /// Fraction of a group's test samples whose arg-max category is correct.
    pub top1: GroupRecall,
    /// Fraction of test samples of *other* categories on which a group's
    /// categories fire, averaged over the group's categories.
    pub false_fire: GroupRecall,
}

pub fn evaluate_head(state: &ClassifierState, test: &[Sample], cfg: &DemoConfig) -> GroupMetrics {
    let n_cat = cfg.num_categories();
    let mut fired = [0usize; 3];
    let mut correct = [0usize; 3];
    let mut totals = [0usize; 3];
    let mut false_fires = vec![0usize; n_cat];
    let mut others = vec![0usize; n_cat];
    for s in test {
        let Target::Category(c) = s.target else { continue };
        let z = state.logits(&s.features);
        let g = cfg.group_of(c) as usize;
        totals[g] += 1;
        if sigmoid(z[c]) >= cfg.score_threshold {
            fired[g] += 1;
        }
        if state.predict(&s.features) == c {
            correct[g] += 1;
        }
        for (j, &zj) in z.iter().enumerate() {
            if j != c {
                others[j] += 1;
                if sigmoid(zj) >= cfg.score_threshold {
                    false_fires[j] += 1;
                }
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_group = |counts: &[usize; 3]| GroupRecall {
        head: ratio(counts[0], totals[0]),
        mid: ratio(counts[1], totals[1]),
        tail: ratio(counts[2], totals[2]),
    };
    let mut ff = [0.0f64; 3];
    let mut members = [0usize; 3];
    for j in 0..n_cat {
        let g = cfg.group_of(j) as usize;
        ff[g] += ratio(false_fires[j], others[j]);
        members[g] += 1;
    }
    let ff_mean = |g: usize| if members[g] == 0 { 0.0 } else { ff[g] / members[g] as f64 };
    GroupMetrics {
        recall: per_group(&fired),
        top1: per_group(&correct),
        false_fire: GroupRecall {
            head: ff_mean(0),
            mid: ff_mean(1),
            tail: ff_mean(2),
        },
    }
}

/// Shared setup of one demo run: data, initial parameters, shuffle seed.
pub fn prepare(seed: u64, cfg: &DemoConfig) -> (Vec<Sample>, Vec<Sample>, ClassifierState, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, test) = make_dataset(cfg, &mut rng);
    let counts = (0..cfg.num_categories())
        .map(|c| cfg.samples_for(cfg.group_of(c)))
        .collect();
    let init = ClassifierState::init(cfg.num_categories(), counts, &mut rng);
    let shuffle_seed = rng.gen();
    (train, test, init, shuffle_seed)
}

pub fn run_longtail_demo(seed: u64, cfg: &DemoConfig) -> Result<DemoReport> {
    cfg.validate()?;
    let (train, test, init, shuffle_seed) = prepare(seed, cfg);
    let (ce, _) = train_linear_head(&train, &init, Reweighting::None, cfg, shuffle_seed)?;
    let (eql, acc) = train_linear_head(&train, &init, Reweighting::EqlV2(cfg.eql), cfg, shuffle_seed)?;
    Ok(DemoReport {
        seed,
        category_groups: (0..cfg.num_categories()).map(|c| cfg.group_of(c)).collect(),
        train_counts: init.category_counts.clone(),
        cross_entropy: evaluate_head(&ce, &test, cfg),
        eqlv2: evaluate_head(&eql, &test, cfg),
        final_ratios: acc.ratios().to_vec(),
    })
}
