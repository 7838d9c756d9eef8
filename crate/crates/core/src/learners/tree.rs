//! CART trees: Gini splits for classification, squared-error splits for the
//! boosting residual trees.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, LearnError, ProbabilityModel};

/// Two candidate decreases closer than this are treated as tied.
pub(crate) const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Index of the leaf reached by `x` (`x[f] <= threshold` goes left).
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub(crate) fn set_leaf_value(&mut self, node: usize, value: f64) {
        if let Node::Leaf { value: v } = &mut self.nodes[node] {
            *v = value;
        }
    }
}

impl ProbabilityModel for DecisionTree {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        self.predict(x)
    }

    fn n_features(&self) -> Option<usize> {
        Some(self.n_features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features sampled per split; `None` uses all of them.
    pub features_per_split: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 12,
            min_leaf: 2,
            features_per_split: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Criterion {
    Gini,
    SquaredError,
}

impl Criterion {
    /// Total (count-weighted) impurity of a node.
    fn impurity(self, n: f64, sum: f64, sumsq: f64) -> f64 {
        if n == 0.0 {
            return 0.0;
        }
        match self {
            Criterion::Gini => 2.0 * sum * (n - sum) / n,
            Criterion::SquaredError => (sumsq - sum * sum / n).max(0.0),
        }
    }
}

struct Builder<'a, R> {
    ds: &'a Dataset,
    targets: &'a [f64],
    params: &'a TreeParams,
    criterion: Criterion,
    rng: &'a mut R,
    nodes: Vec<Node>,
    leaves: Vec<(usize, Vec<usize>)>,
}

#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn stats(&self, idx: &[usize]) -> (f64, f64, f64) {
        idx.iter().fold((0.0, 0.0, 0.0), |(n, s, q), &i| {
            let t = self.targets[i];
            (n + 1.0, s + t, q + t * t)
        })
    }

    fn features(&mut self) -> Vec<usize> {
        let d = self.ds.n_features();
        match self.params.features_per_split {
            Some(k) if k < d => {
                let mut f = rand::seq::index::sample(self.rng, d, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split(&mut self, idx: &[usize], parent: f64) -> Option<Candidate> {
        let min_leaf = self.params.min_leaf.max(1);
        let m = idx.len();
        let mut best: Option<Candidate> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
        for f in self.features() {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.ds.value(i, f), self.targets[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (total_s, total_q) = pairs
                .iter()
                .fold((0.0, 0.0), |(s, q), &(_, t)| (s + t, q + t * t));
            let (mut ls, mut lq) = (0.0, 0.0);
            for i in 0..m - 1 {
                let t = pairs[i].1;
                ls += t;
                lq += t * t;
                let nl = i + 1;
                let nr = m - nl;
                if pairs[i].0 == pairs[i + 1].0 || nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let child = self.criterion.impurity(nl as f64, ls, lq)
                    + self
                        .criterion
                        .impurity(nr as f64, total_s - ls, total_q - lq);
                let decrease = parent - child;
                if decrease <= TIE_EPS {
                    continue;
                }
                if best.is_none_or(|b| decrease > b.decrease + TIE_EPS) {
                    let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        decrease,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let (n, s, q) = self.stats(&idx);
        let parent = self.criterion.impurity(n, s, q);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: s / n });

        let splittable = depth < self.params.max_depth
            && idx.len() >= 2 * self.params.min_leaf.max(1)
            && parent > TIE_EPS;
        let split = if splittable { self.best_split(&idx, parent) } else { None };
        let Some(c) = split else {
            self.leaves.push((id, idx));
            return id;
        };

        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.ds.value(i, c.feature) <= c.threshold);
        let left = self.grow(left_idx, depth + 1);
        let right = self.grow(right_idx, depth + 1);
        self.nodes[id] = Node::Split {
            feature: c.feature,
            threshold: c.threshold,
            left,
            right,
        };
        id
    }
}

/// Grows a tree on the rows listed in `idx` (duplicates act as weights).
/// Returns the tree and, per leaf, its node index and member rows.
pub(crate) fn grow_tree<R: Rng>(
    ds: &Dataset,
    targets: &[f64],
    idx: Vec<usize>,
    params: &TreeParams,
    criterion: Criterion,
    rng: &mut R,
) -> (DecisionTree, Vec<(usize, Vec<usize>)>) {
    let mut b = Builder {
        ds,
        targets,
        params,
        criterion,
        rng,
        nodes: Vec::new(),
        leaves: Vec::new(),
    };
    b.grow(idx, 0);
    let tree = DecisionTree {
        nodes: b.nodes,
        n_features: ds.n_features(),
    };
    (tree, b.leaves)
}

fn check_params(ds: &Dataset, params: &TreeParams) -> Result<(), LearnError> {
    if params.min_leaf == 0 {
        return Err(LearnError::InvalidParam("min_leaf must be positive".into()));
    }
    if let Some(k) = params.features_per_split {
        if k == 0 || k > ds.n_features() {
            return Err(LearnError::InvalidParam(format!(
                "features_per_split {k} outside 1..={}",
                ds.n_features()
            )));
        }
    }
    Ok(())
}

/// Gini CART on every row of `ds`. Leaves store the positive fraction.
pub fn fit_tree<R: Rng>(ds: &Dataset, params: &TreeParams, rng: &mut R) -> Result<DecisionTree, LearnError> {
    fit_tree_on(ds, (0..ds.n_rows()).collect(), params, rng)
}

/// Gini CART on a resample of `ds` given by row indices.
pub fn fit_tree_on<R: Rng>(
    ds: &Dataset,
    idx: Vec<usize>,
    params: &TreeParams,
    rng: &mut R,
) -> Result<DecisionTree, LearnError> {
    check_params(ds, params)?;
    if idx.is_empty() {
        return Err(LearnError::TooFewRows(0));
    }
    let targets: Vec<f64> = ds.labels().iter().map(|&y| y as f64).collect();
    Ok(grow_tree(ds, &targets, idx, params, Criterion::Gini, rng).0)
}
