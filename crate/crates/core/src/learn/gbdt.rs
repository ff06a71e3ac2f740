//! Gradient boosting for logistic loss with second-order leaf weights
//! w* = -G / (H + lambda) and split gain
//! 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] > gamma.
//!
//! Level-wise growth expands every node to `max_depth`; leaf-wise growth
//! repeatedly splits the leaf with the largest gain up to `max_leaves`.

use serde::{Deserialize, Serialize};

use super::logistic::{log_loss_logits, sigmoid};
use super::tree::{Bins, Engine};
use super::{check_labels, ClassWeight, Criterion, FeatureMatrix, LearnError, Predictor, TreeNode, TreeParams, TreeTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Growth {
    LevelWise,
    LeafWise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub growth: Growth,
    /// Leaf budget per tree for leaf-wise growth.
    #[serde(default = "default_max_leaves")]
    pub max_leaves: usize,
    #[serde(default = "default_true")]
    pub histogram: bool,
    #[serde(default)]
    pub class_weight: ClassWeight,
}

fn default_max_leaves() -> usize {
    15
}

fn default_true() -> bool {
    true
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            rounds: 200,
            learning_rate: 0.1,
            max_depth: 4,
            min_leaf: 5,
            lambda: 1.0,
            gamma: 0.0,
            growth: Growth::LevelWise,
            max_leaves: default_max_leaves(),
            histogram: true,
            class_weight: ClassWeight::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub n_features: usize,
    /// F_0 = logit(mean(y)).
    pub base_score: f64,
    /// mean(y), returned as-is when the stages add nothing.
    pub base_rate: f64,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub growth: Growth,
    /// Unshrunk stage trees f_t; leaf values are w*.
    pub stages: Vec<TreeNode>,
}

impl BoostedEnsemble {
    /// F_0 + eta * f_1(x) + ... accumulated stage by stage, exactly as during
    /// training.
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.stages
            .iter()
            .fold(self.base_score, |f, t| f + self.learning_rate * t.predict(x))
    }
}

impl Predictor for BoostedEnsemble {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        let f = self.raw_score(x);
        if f == self.base_score {
            self.base_rate
        } else {
            sigmoid(f)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtFit {
    pub model: BoostedEnsemble,
    /// Mean training log-loss; entry 0 is at F_0, entry t after round t.
    pub train_log_loss: Vec<f64>,
}

pub fn fit_gbdt(x: &FeatureMatrix, y: &[u8], params: &GbdtParams) -> Result<GbdtFit, LearnError> {
    let n = x.n();
    check_labels(n, y)?;
    if !(params.learning_rate >= 0.0 && params.learning_rate <= 1.0) {
        return Err(LearnError::InvalidParameter("learning_rate must lie in [0, 1]".into()));
    }
    if n < 2 * params.min_leaf.max(1) {
        return Err(LearnError::InsufficientRows { n, required: 2 * params.min_leaf.max(1) });
    }
    let w = params.class_weight.sample_weights(y);
    let w_total: f64 = w.iter().sum();
    let base_rate = y.iter().zip(&w).map(|(&yi, &wi)| f64::from(yi) * wi).sum::<f64>() / w_total;
    let base_score = (base_rate / (1.0 - base_rate)).ln();

    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        criterion: Criterion::BoostGain { lambda: params.lambda, gamma: params.gamma },
        max_leaves: match params.growth {
            Growth::LevelWise => None,
            Growth::LeafWise => Some(params.max_leaves),
        },
        histogram: params.histogram,
    };
    let bins = params.histogram.then(|| Bins::new(x));

    let mut f = vec![base_score; n];
    let mut losses = vec![log_loss_logits(&f, y)];
    let mut stages = Vec::with_capacity(params.rounds);
    let (mut g, mut h) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..params.rounds {
        let mut informative = false;
        for i in 0..n {
            let p = sigmoid(f[i]);
            let hi = p * (1.0 - p);
            informative |= hi >= 1e-12;
            g[i] = w[i] * (p - f64::from(y[i]));
            h[i] = w[i] * hi;
        }
        if !informative {
            return Err(LearnError::NumericalDegeneracy);
        }
        let engine = Engine::new(x, &TreeTarget::Gradients { g: &g, h: &h }, &tree_params, bins.as_ref())?;
        let tree = engine.grow((0..n).collect(), None);
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += params.learning_rate * tree.predict(x.row(i));
        }
        losses.push(log_loss_logits(&f, y));
        stages.push(tree);
    }
    Ok(GbdtFit {
        model: BoostedEnsemble {
            n_features: x.d(),
            base_score,
            base_rate,
            learning_rate: params.learning_rate,
            lambda: params.lambda,
            gamma: params.gamma,
            growth: params.growth,
            stages,
        },
        train_log_loss: losses,
    })
}
