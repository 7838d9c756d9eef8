//! From-scratch binary learners and model-selection utilities.

mod cv;
mod forest;
mod gbt;
mod logistic;
mod tree;

pub use cv::{fold_complement, grid_search, stratified_kfold, GridResult, GridRow};
pub use forest::{fit_forest, ForestParams, RandomForest, VoteMode};
pub use gbt::{fit_gbt, GbtFit, GbtModel, GbtParams};
pub use logistic::{
    fit_logreg, logistic_objective, LogisticFit, LogisticModel, LogisticParams,
};
pub use tree::{fit_tree, fit_tree_on, DecisionTree, Node, TreeParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("dataset needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("class {class} has {count} samples, fewer than k = {k}")]
    TooFewSamples { class: u8, count: usize, k: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("empty hyperparameter grid")]
    EmptyGrid,
}

/// Row-major design matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    n: usize,
    d: usize,
    y: Vec<u8>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(rows: &[Vec<f64>], y: Vec<u8>, feature_names: Vec<String>) -> Result<Self, LearnError> {
        let n = rows.len();
        if n < 2 {
            return Err(LearnError::TooFewRows(n));
        }
        if y.len() != n {
            return Err(LearnError::Shape(format!("{} rows but {} labels", n, y.len())));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(LearnError::Shape("zero feature columns".into()));
        }
        let mut x = Vec::with_capacity(n * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(LearnError::Shape(format!("row {i} has {} columns, expected {d}", r.len())));
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(LearnError::NonFinite { row: i, col: j });
            }
            x.extend_from_slice(r);
        }
        if let Some(&bad) = y.iter().find(|&&v| v > 1) {
            return Err(LearnError::Shape(format!("label {bad} is not binary")));
        }
        let feature_names = if feature_names.is_empty() {
            (0..d).map(|j| format!("f{j}")).collect()
        } else if feature_names.len() == d {
            feature_names
        } else {
            return Err(LearnError::Shape(format!(
                "{} feature names for {d} columns",
                feature_names.len()
            )));
        };
        Ok(Dataset { x, n, d, y, feature_names })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.d + j]
    }

    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.d)
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }

    /// Errors unless both classes are present.
    pub fn require_both_classes(&self) -> Result<(), LearnError> {
        let p = self.positives();
        if p == 0 || p == self.n {
            Err(LearnError::SingleClass)
        } else {
            Ok(())
        }
    }

    /// Rows selected by index (duplicates allowed).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            x,
            n: idx.len(),
            d: self.d,
            y: idx.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Anything that maps a feature vector to P(target).
pub trait ProbabilityModel {
    fn predict_proba(&self, x: &[f64]) -> f64;

    /// Expected input width, when the model knows it.
    fn n_features(&self) -> Option<usize> {
        None
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A trained binary model of any supported family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinaryModel {
    Forest(RandomForest),
    Logistic(LogisticModel),
    Gbt(GbtModel),
}

impl ProbabilityModel for BinaryModel {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        match self {
            BinaryModel::Forest(m) => m.predict_proba(x),
            BinaryModel::Logistic(m) => m.predict_proba(x),
            BinaryModel::Gbt(m) => m.predict_proba(x),
        }
    }

    fn n_features(&self) -> Option<usize> {
        match self {
            BinaryModel::Forest(m) => m.n_features(),
            BinaryModel::Logistic(m) => m.n_features(),
            BinaryModel::Gbt(m) => m.n_features(),
        }
    }
}

/// Hyperparameters for one model family; `fit` trains it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Forest(ForestParams),
    Logistic(LogisticParams),
    Gbt(GbtParams),
}

impl ModelSpec {
    pub fn fit(&self, ds: &Dataset) -> Result<BinaryModel, LearnError> {
        Ok(match self {
            ModelSpec::Forest(p) => BinaryModel::Forest(fit_forest(ds, p)?),
            ModelSpec::Logistic(p) => BinaryModel::Logistic(fit_logreg(ds, p)?.model),
            ModelSpec::Gbt(p) => BinaryModel::Gbt(fit_gbt(ds, p)?.model),
        })
    }

    /// Same spec with a different seed, where the family is seeded.
    pub fn reseeded(&self, seed: u64) -> ModelSpec {
        match self {
            ModelSpec::Forest(p) => ModelSpec::Forest(ForestParams { seed, ..p.clone() }),
            other => other.clone(),
        }
    }

    /// Default search grids for desk-scale tuning.
    pub fn default_forest_grid(base: &ForestParams) -> Vec<ModelSpec> {
        let mut grid = Vec::new();
        for n_trees in [50, 100] {
            for max_depth in [8, 12] {
                grid.push(ModelSpec::Forest(ForestParams {
                    n_trees,
                    max_depth,
                    ..base.clone()
                }));
            }
        }
        grid
    }

    pub fn default_logistic_grid(base: &LogisticParams) -> Vec<ModelSpec> {
        [0.01, 0.1, 1.0]
            .into_iter()
            .map(|l2| ModelSpec::Logistic(LogisticParams { l2, ..base.clone() }))
            .collect()
    }

    pub fn default_gbt_grid(base: &GbtParams) -> Vec<ModelSpec> {
        let mut grid = Vec::new();
        for learning_rate in [0.1, 0.3] {
            for n_rounds in [50, 100] {
                grid.push(ModelSpec::Gbt(GbtParams {
                    learning_rate,
                    n_rounds,
                    ..base.clone()
                }));
            }
        }
        grid
    }
}
