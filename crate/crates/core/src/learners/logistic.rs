//! L2-regularised logistic regression fitted by full-batch gradient descent
//! with Armijo backtracking.

use serde::{Deserialize, Serialize};

use super::{sigmoid, Dataset, LearnError, ProbabilityModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    pub l2: f64,
    pub max_iters: usize,
    /// Converged when the gradient's infinity norm drops below this.
    pub tol: f64,
    /// z-score features with training statistics before fitting.
    pub standardize: bool,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            l2: 0.1,
            max_iters: 2000,
            tol: 1e-6,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    /// Per-feature centre and scale applied before the linear map.
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LogisticModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(x)
            .zip(self.center.iter().zip(&self.scale))
            .map(|((w, v), (c, s))| w * (v - c) / s)
            .sum::<f64>()
            + self.bias
    }
}

impl ProbabilityModel for LogisticModel {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }

    fn n_features(&self) -> Option<usize> {
        Some(self.weights.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub model: LogisticModel,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean binary cross-entropy plus `l2 * |w|^2 / 2` on already-transformed
/// rows, with its gradient `(dw, db)`.
pub fn logistic_objective(
    rows: &[Vec<f64>],
    y: &[u8],
    w: &[f64],
    b: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (x, &yi) in rows.iter().zip(y) {
        let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
        let yi = yi as f64;
        loss += softplus(z) - yi * z;
        let r = sigmoid(z) - yi;
        for (g, v) in gw.iter_mut().zip(x) {
            *g += r * v;
        }
        gb += r;
    }
    loss /= n;
    gb /= n;
    for (g, wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    (loss, gw, gb)
}

pub fn fit_logreg(ds: &Dataset, p: &LogisticParams) -> Result<LogisticFit, LearnError> {
    ds.require_both_classes()?;
    if !(p.l2 >= 0.0 && p.l2.is_finite()) {
        return Err(LearnError::InvalidParam(format!("l2 must be non-negative, got {}", p.l2)));
    }
    let d = ds.n_features();
    let n = ds.n_rows() as f64;
    let (center, scale) = if p.standardize {
        let mut c = vec![0.0; d];
        for row in ds.rows() {
            for (ci, v) in c.iter_mut().zip(row) {
                *ci += v;
            }
        }
        c.iter_mut().for_each(|v| *v /= n);
        let mut s = vec![0.0; d];
        for row in ds.rows() {
            for ((si, v), ci) in s.iter_mut().zip(row).zip(&c) {
                *si += (v - ci) * (v - ci);
            }
        }
        let s = s
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        (c, s)
    } else {
        (vec![0.0; d], vec![1.0; d])
    };
    let rows: Vec<Vec<f64>> = ds
        .rows()
        .map(|r| {
            r.iter()
                .zip(center.iter().zip(&scale))
                .map(|(v, (c, s))| (v - c) / s)
                .collect()
        })
        .collect();
    let y = ds.labels();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let (mut f, mut gw, mut gb) = logistic_objective(&rows, y, &w, b, p.l2);
    let mut step: f64 = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < p.max_iters {
        let gnorm = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if gnorm < p.tol {
            converged = true;
            break;
        }
        let g2 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        step = (step * 2.0).min(1e3);
        loop {
            let w_new: Vec<f64> = w.iter().zip(&gw).map(|(a, g)| a - step * g).collect();
            let b_new = b - step * gb;
            let (f_new, gw_new, gb_new) = logistic_objective(&rows, y, &w_new, b_new, p.l2);
            if f_new <= f - 1e-4 * step * g2 {
                w = w_new;
                b = b_new;
                f = f_new;
                gw = gw_new;
                gb = gb_new;
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                break;
            }
        }
        iterations += 1;
        if step < 1e-16 {
            break;
        }
    }
    if !converged {
        let gnorm = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        converged = gnorm < p.tol;
    }

    Ok(LogisticFit {
        model: LogisticModel {
            weights: w,
            bias: b,
            l2: p.l2,
            center,
            scale,
        },
        converged,
        iterations,
        objective: f,
    })
}
