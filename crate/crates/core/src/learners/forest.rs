//! Bagged random forests over Gini CART trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree_on, DecisionTree, TreeParams};
use super::{Dataset, LearnError, ProbabilityModel};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    /// Mean of the trees' leaf probabilities.
    #[default]
    Soft,
    /// Fraction of trees whose leaf probability exceeds 0.5.
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// `None` means ceil(sqrt(d)).
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub vote: VoteMode,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 2,
            features_per_split: None,
            bootstrap: true,
            vote: VoteMode::Soft,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    vote: VoteMode,
    n_features: usize,
}

impl RandomForest {
    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn vote(&self) -> VoteMode {
        self.vote
    }

    pub fn with_vote(mut self, vote: VoteMode) -> Self {
        self.vote = vote;
        self
    }
}

impl ProbabilityModel for RandomForest {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        let n = self.trees.len() as f64;
        match self.vote {
            VoteMode::Soft => self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / n,
            VoteMode::Hard => self.trees.iter().filter(|t| t.predict(x) > 0.5).count() as f64 / n,
        }
    }

    fn n_features(&self) -> Option<usize> {
        Some(self.n_features)
    }
}

/// Trains `n_trees` trees, each on its own bootstrap resample and RNG stream
/// derived from `(seed, tree index)`.
pub fn fit_forest(ds: &Dataset, p: &ForestParams) -> Result<RandomForest, LearnError> {
    if p.n_trees == 0 {
        return Err(LearnError::InvalidParam("n_trees must be positive".into()));
    }
    if p.max_depth == 0 {
        return Err(LearnError::InvalidParam("max_depth must be positive".into()));
    }
    let d = ds.n_features();
    let k = p
        .features_per_split
        .unwrap_or_else(|| ((d as f64).sqrt().ceil() as usize).clamp(1, d));
    let tree_params = TreeParams {
        max_depth: p.max_depth,
        min_leaf: p.min_leaf,
        features_per_split: Some(k),
    };
    let n = ds.n_rows();
    let trees = par::map_range(p.n_trees, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(p.seed, t as u64));
        let idx: Vec<usize> = if p.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        fit_tree_on(ds, idx, &tree_params, &mut rng)
    });
    let trees = trees.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(RandomForest {
        trees,
        vote: p.vote,
        n_features: d,
    })
}
