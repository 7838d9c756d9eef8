//! Logistic-loss gradient boosting with Newton leaf values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, Criterion, DecisionTree, TreeParams};
use super::{sigmoid, Dataset, LearnError, ProbabilityModel};

const HESSIAN_EPS: f64 = 1e-9;
const MAX_STEP_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    /// Log-odds of the training class prior.
    pub base_score: f64,
    pub learning_rate: f64,
    /// Residual trees; leaf values already include the shrinkage.
    pub trees: Vec<DecisionTree>,
    n_features: usize,
}

impl GbtModel {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

impl ProbabilityModel for GbtModel {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.raw_score(x))
    }

    fn n_features(&self) -> Option<usize> {
        Some(self.n_features)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtFit {
    pub model: GbtModel,
    /// Mean training log-loss before the first round and after each round.
    pub loss_trace: Vec<f64>,
}

fn mean_log_loss(scores: &[f64], y: &[u8]) -> f64 {
    scores
        .iter()
        .zip(y)
        .map(|(&f, &yi)| {
            // log(1 + e^f) - y f
            let sp = if f > 0.0 { f + (-f).exp().ln_1p() } else { f.exp().ln_1p() };
            sp - yi as f64 * f
        })
        .sum::<f64>()
        / scores.len() as f64
}

/// Each round fits a depth-limited squared-error tree to the residuals
/// `y - p`, sets leaves to `sum(residual) / (sum(p(1-p)) + eps)` and adds the
/// tree scaled by the learning rate. If a round would raise the training
/// loss its step is halved until it does not.
pub fn fit_gbt(ds: &Dataset, p: &GbtParams) -> Result<GbtFit, LearnError> {
    ds.require_both_classes()?;
    if !(p.learning_rate > 0.0 && p.learning_rate <= 1.0) {
        return Err(LearnError::InvalidParam(format!(
            "learning_rate must be in (0, 1], got {}",
            p.learning_rate
        )));
    }
    if p.max_depth == 0 {
        return Err(LearnError::InvalidParam("max_depth must be positive".into()));
    }
    let n = ds.n_rows();
    let y = ds.labels();
    let prior = ds.positives() as f64 / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let tree_params = TreeParams {
        max_depth: p.max_depth,
        min_leaf: p.min_leaf.max(1),
        features_per_split: None,
    };
    // no feature sampling, so the stream is never drawn from
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let mut scores = vec![base_score; n];
    let mut loss = mean_log_loss(&scores, y);
    let mut loss_trace = vec![loss];
    let mut trees = Vec::with_capacity(p.n_rounds);

    for _ in 0..p.n_rounds {
        let probs: Vec<f64> = scores.iter().map(|&f| sigmoid(f)).collect();
        let resid: Vec<f64> = probs.iter().zip(y).map(|(&q, &yi)| yi as f64 - q).collect();
        let (mut tree, leaves) =
            grow_tree(ds, &resid, (0..n).collect(), &tree_params, Criterion::SquaredError, &mut rng);

        let newton: Vec<(usize, Vec<usize>, f64)> = leaves
            .into_iter()
            .map(|(node, rows)| {
                let g: f64 = rows.iter().map(|&i| resid[i]).sum();
                let h: f64 = rows.iter().map(|&i| probs[i] * (1.0 - probs[i])).sum();
                let v = g / (h + HESSIAN_EPS);
                (node, rows, v)
            })
            .collect();

        let mut step = p.learning_rate;
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let mut trial = scores.clone();
            for (_, rows, v) in &newton {
                for &i in rows {
                    trial[i] += step * v;
                }
            }
            let trial_loss = mean_log_loss(&trial, y);
            if trial_loss <= loss {
                accepted = Some((trial, trial_loss));
                break;
            }
            step *= 0.5;
        }
        let (step, new_scores, new_loss) = match accepted {
            Some((s, l)) => (step, s, l),
            None => (0.0, scores.clone(), loss),
        };
        for (node, _, v) in &newton {
            tree.set_leaf_value(*node, step * v);
        }
        trees.push(tree);
        scores = new_scores;
        loss = new_loss;
        loss_trace.push(loss);
    }

    Ok(GbtFit {
        model: GbtModel {
            base_score,
            learning_rate: p.learning_rate,
            trees,
            n_features: ds.n_features(),
        },
        loss_trace,
    })
}
