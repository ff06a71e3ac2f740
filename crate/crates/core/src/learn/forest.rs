//! Random forest: bagged Gini trees with per-split feature subsetting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{Bins, Engine};
use super::{check_labels, ClassWeight, Criterion, FeatureMatrix, LearnError, Predictor, TreeNode, TreeParams, TreeTarget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried at each split; `None` means floor(sqrt(d)).
    #[serde(default)]
    pub features_per_split: Option<usize>,
    #[serde(default = "default_true")]
    pub bootstrap: bool,
    pub seed: u64,
    #[serde(default)]
    pub class_weight: ClassWeight,
}

fn default_true() -> bool {
    true
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 300,
            max_depth: 6,
            min_leaf: 5,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
            class_weight: ClassWeight::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_features: usize,
    pub seed: u64,
    /// Leaf values are class-1 fractions.
    pub trees: Vec<TreeNode>,
}

impl Predictor for Forest {
    fn n_features(&self) -> usize {
        self.n_features
    }

    /// Arithmetic mean of member outputs, summed in tree order. When every
    /// member agrees the mean is that value exactly.
    fn predict_row(&self, x: &[f64]) -> f64 {
        let first = self.trees[0].predict(x);
        let mut sum = first;
        let mut unanimous = true;
        for t in &self.trees[1..] {
            let v = t.predict(x);
            unanimous &= v == first;
            sum += v;
        }
        if unanimous {
            first
        } else {
            sum / self.trees.len() as f64
        }
    }
}

/// Each tree draws from its own ChaCha8 stream (`seed`, stream = tree index),
/// so trees are independent of scheduling and the result is identical with
/// or without parallelism.
pub fn fit_forest(x: &FeatureMatrix, y: &[u8], params: &ForestParams) -> Result<Forest, LearnError> {
    let (n, d) = (x.n(), x.d());
    if params.n_trees == 0 {
        return Err(LearnError::InvalidParameter("n_trees must be at least 1".into()));
    }
    check_labels(n, y)?;
    if n < 2 * params.min_leaf {
        return Err(LearnError::InsufficientRows { n, required: 2 * params.min_leaf });
    }
    let k = params
        .features_per_split
        .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1))
        .clamp(1, d);
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        criterion: Criterion::Gini,
        max_leaves: None,
        histogram: true,
    };
    let bins = Bins::new(x);
    let weights = params.class_weight.sample_weights(y);
    let engine = Engine::new(x, &TreeTarget::Classes { y, weights: Some(&weights) }, &tree_params, Some(&bins))?;
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let rows: Vec<usize> = if params.bootstrap {
                let mut r: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                r.sort_unstable();
                r
            } else {
                (0..n).collect()
            };
            engine.grow(rows, Some((&mut rng, k)))
        })
        .collect();
    Ok(Forest {
        n_features: d,
        seed: params.seed,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::fit_tree;

    fn data() -> (FeatureMatrix, Vec<u8>) {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![f64::from(i % 10), f64::from((i * 7) % 13), f64::from(i / 20)])
            .collect();
        let y = (0..40).map(|i| u8::from(i % 10 > 4 || (i * 7) % 13 > 10)).collect();
        (FeatureMatrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn single_tree_without_bagging_equals_fit_tree() {
        let (x, y) = data();
        let params = ForestParams {
            n_trees: 1,
            max_depth: 4,
            min_leaf: 2,
            features_per_split: Some(3),
            bootstrap: false,
            seed: 9,
            class_weight: ClassWeight::None,
        };
        let forest = fit_forest(&x, &y, &params).unwrap();
        let tree = fit_tree(&x, TreeTarget::Classes { y: &y, weights: None }, &TreeParams::gini(4, 2)).unwrap();
        assert_eq!(forest.trees[0], tree.tree);
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = data();
        let params = ForestParams { n_trees: 25, max_depth: 4, min_leaf: 2, seed: 3, ..Default::default() };
        let a = fit_forest(&x, &y, &params).unwrap();
        let b = fit_forest(&x, &y, &params).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(&x, &y, &ForestParams { seed: 4, ..params }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn identical_members_predict_like_one_tree() {
        let stump = TreeNode::Split {
            feature: 0,
            threshold: 0.5,
            left: Box::new(TreeNode::Leaf { value: 0.2 }),
            right: Box::new(TreeNode::Leaf { value: 0.9 }),
        };
        let f = Forest { n_features: 1, seed: 0, trees: vec![stump.clone(); 7] };
        for v in [0.0, 1.0] {
            assert_eq!(f.predict_row(&[v]), stump.predict(&[v]));
        }
    }
}
