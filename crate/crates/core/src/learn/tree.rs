//! CART-style trees with two split criteria: Gini impurity for
//! classification and the second-order regularised gain used by gradient
//! boosting.
//!
//! Split search scans sorted distinct values per feature. Candidate
//! thresholds are midpoints of consecutive distinct values; rows with
//! `x <= threshold` go left. Ties in gain (equal within a relative 1e-12,
//! so that rounding in the sums cannot break an exact tie) keep the lowest
//! feature index and then the lowest threshold. The optional histogram path pre-bins features
//! with at most 256 distinct values and accumulates per-bin sums in the same
//! order as the exact path, so both produce bit-identical trees.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{FeatureMatrix, LearnError};

pub const MAX_HISTOGRAM_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
}

/// Compact JSON form: a leaf is its value, a split is
/// `[feature, threshold, left, right]`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeRepr {
    Leaf(f64),
    Split(usize, f64, Box<TreeNode>, Box<TreeNode>),
}

impl Serialize for TreeNode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TreeNode::Leaf { value } => NodeRepr::Leaf(*value).serialize(s),
            TreeNode::Split { feature, threshold, left, right } => {
                NodeRepr::Split(*feature, *threshold, left.clone(), right.clone()).serialize(s)
            }
        }
    }
}

impl<'de> Deserialize<'de> for TreeNode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match NodeRepr::deserialize(d)? {
            NodeRepr::Leaf(value) => TreeNode::Leaf { value },
            NodeRepr::Split(feature, threshold, left, right) => TreeNode::Split { feature, threshold, left, right },
        })
    }
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split { feature, left, right, .. } => {
                Some((*feature).max(left.max_feature().unwrap_or(0)).max(right.max_feature().unwrap_or(0)))
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            TreeNode::Leaf { value } => value.is_finite(),
            TreeNode::Split { threshold, left, right, .. } => {
                threshold.is_finite() && left.is_finite() && right.is_finite()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    Gini,
    BoostGain { lambda: f64, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub criterion: Criterion,
    /// Best-first growth up to this many leaves; `None` grows depth-first.
    #[serde(default)]
    pub max_leaves: Option<usize>,
    /// Use pre-binned histograms for features with <= 256 distinct values.
    #[serde(default)]
    pub histogram: bool,
}

impl TreeParams {
    pub fn gini(max_depth: usize, min_leaf: usize) -> Self {
        TreeParams {
            max_depth,
            min_leaf,
            criterion: Criterion::Gini,
            max_leaves: None,
            histogram: false,
        }
    }
}

pub enum TreeTarget<'a> {
    /// Class labels with optional per-row weights.
    Classes { y: &'a [u8], weights: Option<&'a [f64]> },
    Gradients { g: &'a [f64], h: &'a [f64] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeFit {
    pub tree: TreeNode,
    /// Every row had identical features, so the tree is a single leaf.
    pub degenerate: bool,
}

/// Per-feature bin codes for the histogram path. `None` for features with
/// too many distinct values; those fall back to exact search.
pub(crate) struct Bins {
    features: Vec<Option<(Vec<f64>, Vec<u16>)>>,
}

impl Bins {
    pub(crate) fn new(x: &FeatureMatrix) -> Self {
        let features = (0..x.d())
            .map(|j| {
                let mut uniq: Vec<f64> = (0..x.n()).map(|i| x.get(i, j)).collect();
                uniq.sort_by(f64::total_cmp);
                uniq.dedup();
                (uniq.len() <= MAX_HISTOGRAM_BINS).then(|| {
                    let codes = (0..x.n())
                        .map(|i| uniq.binary_search_by(|u| u.total_cmp(&x.get(i, j))).unwrap() as u16)
                        .collect();
                    (uniq, codes)
                })
            })
            .collect();
        Bins { features }
    }
}

#[derive(Clone, Copy, Default)]
struct Sums {
    count: usize,
    a: f64,
    b: f64,
}

impl Sums {
    fn add(&mut self, other: &Sums) {
        self.count += other.count;
        self.a += other.a;
        self.b += other.b;
    }
}

#[derive(Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

pub(crate) struct Engine<'a> {
    x: &'a FeatureMatrix,
    /// Per-row statistics: (weighted positives, weight) for Gini,
    /// (gradient, hessian) for boosting.
    a: Vec<f64>,
    b: Vec<f64>,
    params: &'a TreeParams,
    bins: Option<&'a Bins>,
}

const GAIN_TIE_RTOL: f64 = 1e-12;

/// Strict improvement beyond rounding noise.
fn beats(gain: f64, incumbent: f64) -> bool {
    gain > incumbent + GAIN_TIE_RTOL * incumbent.abs().max(f64::MIN_POSITIVE)
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

impl<'a> Engine<'a> {
    pub(crate) fn new(
        x: &'a FeatureMatrix,
        target: &TreeTarget<'_>,
        params: &'a TreeParams,
        bins: Option<&'a Bins>,
    ) -> Result<Self, LearnError> {
        let n = x.n();
        let (a, b) = match *target {
            TreeTarget::Classes { y, weights } => {
                if y.len() != n {
                    return Err(LearnError::LengthMismatch(n, y.len()));
                }
                let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
                if w.len() != n {
                    return Err(LearnError::LengthMismatch(n, w.len()));
                }
                (y.iter().zip(&w).map(|(&yi, &wi)| f64::from(yi) * wi).collect(), w)
            }
            TreeTarget::Gradients { g, h } => {
                if g.len() != n || h.len() != n {
                    return Err(LearnError::LengthMismatch(n, g.len().min(h.len())));
                }
                (g.to_vec(), h.to_vec())
            }
        };
        if params.min_leaf == 0 {
            return Err(LearnError::InvalidParameter("min_leaf must be at least 1".into()));
        }
        if let Criterion::BoostGain { lambda, gamma } = params.criterion {
            if !(lambda >= 0.0 && gamma >= 0.0) {
                return Err(LearnError::InvalidParameter("lambda and gamma must be >= 0".into()));
            }
        }
        Ok(Engine { x, a, b, params, bins })
    }

    fn totals(&self, rows: &[usize]) -> Sums {
        let mut s = Sums::default();
        for &r in rows {
            s.count += 1;
            s.a += self.a[r];
            s.b += self.b[r];
        }
        s
    }

    fn leaf_value(&self, s: &Sums) -> f64 {
        match self.params.criterion {
            Criterion::Gini => {
                if s.b > 0.0 {
                    s.a / s.b
                } else {
                    0.0
                }
            }
            Criterion::BoostGain { lambda, .. } => {
                let w = -s.a / (s.b + lambda);
                if w.is_finite() {
                    w
                } else {
                    0.0
                }
            }
        }
    }

    /// Node score; a split's gain is derived from parent and child scores.
    fn score(&self, s: &Sums) -> f64 {
        match self.params.criterion {
            Criterion::Gini => {
                if s.b > 0.0 {
                    2.0 * s.a * (s.b - s.a) / s.b
                } else {
                    0.0
                }
            }
            Criterion::BoostGain { lambda, .. } => {
                let denom = s.b + lambda;
                if denom > 0.0 {
                    s.a * s.a / denom
                } else {
                    0.0
                }
            }
        }
    }

    fn gain(&self, parent: &Sums, left: &Sums, right: &Sums) -> f64 {
        match self.params.criterion {
            Criterion::Gini => self.score(parent) - self.score(left) - self.score(right),
            Criterion::BoostGain { .. } => 0.5 * (self.score(left) + self.score(right) - self.score(parent)),
        }
    }

    fn accepts(&self, gain: f64, parent: &Sums) -> bool {
        match self.params.criterion {
            // Ignore impurity decreases at the level of rounding noise.
            Criterion::Gini => gain > 1e-12 * parent.b.max(1.0),
            Criterion::BoostGain { gamma, .. } => gain > gamma,
        }
    }

    /// Distinct values of feature `j` among `rows`, ascending, with the sums
    /// of each value group accumulated in row order.
    fn groups(&self, rows: &[usize], j: usize, buf: &mut Vec<(f64, Sums)>) {
        buf.clear();
        if let Some((uniq, codes)) = self.bins.and_then(|b| b.features[j].as_ref()) {
            let mut hist = vec![Sums::default(); uniq.len()];
            for &r in rows {
                let h = &mut hist[codes[r] as usize];
                h.count += 1;
                h.a += self.a[r];
                h.b += self.b[r];
            }
            buf.extend(uniq.iter().zip(hist).filter(|(_, s)| s.count > 0).map(|(&v, s)| (v, s)));
        } else {
            let mut order: Vec<usize> = rows.to_vec();
            order.sort_by(|&p, &q| self.x.get(p, j).total_cmp(&self.x.get(q, j)).then(p.cmp(&q)));
            for r in order {
                let v = self.x.get(r, j);
                match buf.last_mut() {
                    Some((last, s)) if *last == v => {
                        s.count += 1;
                        s.a += self.a[r];
                        s.b += self.b[r];
                    }
                    _ => buf.push((v, Sums { count: 1, a: self.a[r], b: self.b[r] })),
                }
            }
        }
    }

    fn best_split(&self, rows: &[usize], parent: &Sums, features: &[usize]) -> Option<Split> {
        let min_leaf = self.params.min_leaf;
        if rows.len() < 2 * min_leaf {
            return None;
        }
        let mut best: Option<Split> = None;
        let mut buf = Vec::new();
        for &j in features {
            self.groups(rows, j, &mut buf);
            let mut left = Sums::default();
            for k in 0..buf.len().saturating_sub(1) {
                left.add(&buf[k].1);
                if left.count < min_leaf {
                    continue;
                }
                if parent.count - left.count < min_leaf {
                    break;
                }
                let right = Sums {
                    count: parent.count - left.count,
                    a: parent.a - left.a,
                    b: parent.b - left.b,
                };
                let gain = self.gain(parent, &left, &right);
                if self.accepts(gain, parent) && best.is_none_or(|s| beats(gain, s.gain)) {
                    best = Some(Split { feature: j, threshold: midpoint(buf[k].0, buf[k + 1].0), gain });
                }
            }
        }
        best
    }

    fn partition(&self, rows: &[usize], split: &Split) -> (Vec<usize>, Vec<usize>) {
        rows.iter()
            .partition(|&&r| self.x.get(r, split.feature) <= split.threshold)
    }

    fn candidate_features(&self, rng: &mut Option<(&mut ChaCha8Rng, usize)>) -> Vec<usize> {
        let d = self.x.d();
        match rng {
            Some((rng, k)) if *k < d => {
                let mut f = sample(&mut **rng, d, *k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn grow_depth_first(
        &self,
        rows: &[usize],
        depth: usize,
        rng: &mut Option<(&mut ChaCha8Rng, usize)>,
    ) -> TreeNode {
        let sums = self.totals(rows);
        if depth < self.params.max_depth && rows.len() >= 2 * self.params.min_leaf {
            let features = self.candidate_features(rng);
            if let Some(split) = self.best_split(rows, &sums, &features) {
                let (l, r) = self.partition(rows, &split);
                let left = self.grow_depth_first(&l, depth + 1, rng);
                let right = self.grow_depth_first(&r, depth + 1, rng);
                return TreeNode::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left: Box::new(left),
                    right: Box::new(right),
                };
            }
        }
        TreeNode::Leaf { value: self.leaf_value(&sums) }
    }

    fn grow_best_first(&self, rows: Vec<usize>, max_leaves: usize) -> TreeNode {
        enum Slot {
            Leaf(f64),
            Split(usize, f64, usize, usize),
        }
        struct Open {
            slot: usize,
            rows: Vec<usize>,
            depth: usize,
            split: Option<Split>,
        }
        let all: Vec<usize> = (0..self.x.d()).collect();
        let open_node = |slot: usize, rows: Vec<usize>, depth: usize| {
            let sums = self.totals(&rows);
            let split = (depth < self.params.max_depth)
                .then(|| self.best_split(&rows, &sums, &all))
                .flatten();
            (Open { slot, rows, depth, split }, self.leaf_value(&sums))
        };
        let (root, root_value) = open_node(0, rows, 0);
        let mut slots = vec![Slot::Leaf(root_value)];
        let mut open = vec![root];
        let mut leaves = 1;
        while leaves < max_leaves {
            // Highest gain first; ties go to the earliest opened leaf.
            let mut pick: Option<usize> = None;
            for (i, o) in open.iter().enumerate() {
                if let Some(s) = o.split {
                    if pick.is_none_or(|p| beats(s.gain, open[p].split.unwrap().gain)) {
                        pick = Some(i);
                    }
                }
            }
            let Some(i) = pick else { break };
            let node = open.remove(i);
            let split = node.split.unwrap();
            let (l, r) = self.partition(&node.rows, &split);
            let (ls, rs) = (slots.len(), slots.len() + 1);
            let (lo, lv) = open_node(ls, l, node.depth + 1);
            let (ro, rv) = open_node(rs, r, node.depth + 1);
            slots.push(Slot::Leaf(lv));
            slots.push(Slot::Leaf(rv));
            slots[node.slot] = Slot::Split(split.feature, split.threshold, ls, rs);
            open.push(lo);
            open.push(ro);
            leaves += 1;
        }
        fn build(slots: &[Slot], i: usize) -> TreeNode {
            match slots[i] {
                Slot::Leaf(value) => TreeNode::Leaf { value },
                Slot::Split(feature, threshold, l, r) => TreeNode::Split {
                    feature,
                    threshold,
                    left: Box::new(build(slots, l)),
                    right: Box::new(build(slots, r)),
                },
            }
        }
        build(&slots, 0)
    }

    /// Grow a tree on `rows` (a multiset of row indices, e.g. a bootstrap
    /// sample). `rng` with `k` enables per-split feature subsetting.
    pub(crate) fn grow(&self, rows: Vec<usize>, mut rng: Option<(&mut ChaCha8Rng, usize)>) -> TreeNode {
        match self.params.max_leaves {
            Some(m) => self.grow_best_first(rows, m.max(1)),
            None => self.grow_depth_first(&rows, 0, &mut rng),
        }
    }

    pub(crate) fn all_rows_identical(&self, rows: &[usize]) -> bool {
        let Some(&first) = rows.first() else { return true };
        let f = self.x.row(first);
        rows.iter().all(|&r| self.x.row(r) == f)
    }
}

/// Fit a single tree on all rows with every feature considered at each split.
pub fn fit_tree(x: &FeatureMatrix, target: TreeTarget<'_>, params: &TreeParams) -> Result<TreeFit, LearnError> {
    let n = x.n();
    if n < 2 * params.min_leaf {
        return Err(LearnError::InsufficientRows { n, required: 2 * params.min_leaf });
    }
    let bins = params.histogram.then(|| Bins::new(x));
    let engine = Engine::new(x, &target, params, bins.as_ref())?;
    let rows: Vec<usize> = (0..n).collect();
    let degenerate = engine.all_rows_identical(&rows);
    let tree = engine.grow(rows, None);
    Ok(TreeFit { tree, degenerate })
}
