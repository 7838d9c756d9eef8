//! Stratified k-fold splitting and exhaustive grid search.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, LearnError, ModelSpec, ProbabilityModel};
use crate::analysis::precision_recall_f1;
use crate::par;

/// Splits row indices into `k` disjoint folds. Each class is shuffled with
/// the seed and dealt round-robin, so every fold holds `floor` or `ceil` of
/// `class_count / k` members of each class.
pub fn stratified_kfold(y: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, LearnError> {
    if k < 2 {
        return Err(LearnError::InvalidParam(format!("k must be at least 2, got {k}")));
    }
    let mut folds = vec![Vec::new(); k];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = 0usize;
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if members.len() < k {
            return Err(LearnError::TooFewSamples {
                class,
                count: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Training indices for fold `f`: everything outside it.
pub fn fold_complement(folds: &[Vec<usize>], f: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != f)
        .flat_map(|(_, v)| v.iter().copied())
        .collect();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub spec: ModelSpec,
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_index: usize,
    pub rows: Vec<GridRow>,
}

impl GridResult {
    pub fn best(&self) -> &ModelSpec {
        &self.rows[self.best_index].spec
    }
}

/// Scores every grid entry by mean F1 over stratified folds and returns the
/// first entry with the highest mean.
pub fn grid_search(ds: &Dataset, grid: &[ModelSpec], k: usize, seed: u64) -> Result<GridResult, LearnError> {
    if grid.is_empty() {
        return Err(LearnError::EmptyGrid);
    }
    let folds = stratified_kfold(ds.labels(), k, seed)?;
    let units = par::map_range(grid.len() * k, |u| {
        let (g, f) = (u / k, u % k);
        let train = ds.subset(&fold_complement(&folds, f));
        let test = &folds[f];
        let model = grid[g].fit(&train)?;
        let truth: Vec<u8> = test.iter().map(|&i| ds.labels()[i]).collect();
        let pred: Vec<u8> = test
            .iter()
            .map(|&i| u8::from(model.predict_proba(ds.row(i)) >= 0.5))
            .collect();
        Ok::<f64, LearnError>(
            precision_recall_f1(&truth, &pred)
                .map(|m| m.f1)
                .unwrap_or(0.0),
        )
    });
    let scores = units.into_iter().collect::<Result<Vec<_>, _>>()?;

    let rows: Vec<GridRow> = grid
        .iter()
        .enumerate()
        .map(|(g, spec)| {
            let fold_f1 = scores[g * k..(g + 1) * k].to_vec();
            let mean_f1 = fold_f1.iter().sum::<f64>() / k as f64;
            GridRow {
                spec: spec.clone(),
                fold_f1,
                mean_f1,
            }
        })
        .collect();
    let mut best_index = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.mean_f1 > rows[best_index].mean_f1 {
            best_index = i;
        }
    }
    Ok(GridResult { best_index, rows })
}
