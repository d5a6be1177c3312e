//! Linear soft-margin SVM trained by dual coordinate descent.
//!
//! Solves the L2-regularized hinge-loss dual
//!
//! ```text
//! max  sum_i a_i - 1/2 || sum_i a_i y_i x_i ||^2    s.t. 0 <= a_i <= C
//! ```
//!
//! one coordinate at a time, each step moving `a_i` to the exact maximizer of
//! the objective along that coordinate, clipped to the box. The bias is
//! learned as the weight of an extra constant feature of value `bias_scale`.
//! Coordinates are visited in a fresh seeded permutation every epoch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport};
use crate::features::{Class, DesignMatrix, Scaler};

/// Decade grid of C values searched by default.
pub const DEFAULT_C_GRID: [f64; 7] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub c: f64,
    pub tolerance: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub bias_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 1.0,
            tolerance: 1e-4,
            max_epochs: 1000,
            seed: 0,
            bias_scale: 1.0,
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Invalid(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Invalid(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Invalid("max_epochs must be at least 1".into()));
        }
        if !self.bias_scale.is_finite() {
            return Err(Error::Invalid("bias_scale must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub tolerance: f64,
    pub bias_scale: f64,
    pub seed: u64,
    /// Epochs run before stopping.
    pub epochs: usize,
    pub converged: bool,
    pub dual_objective: f64,
    /// Scaler the model's inputs must be transformed with, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<Scaler>,
}

impl LinearModel {
    pub fn width(&self) -> usize {
        self.weights.len()
    }

    /// `w . x + bias`.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::WidthMismatch {
                expected: self.weights.len(),
                actual: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// Sign of the decision score; a score of exactly zero is AD.
    pub fn predict(&self, x: &[f64]) -> Result<Class> {
        self.decision(x).map(Class::from_score)
    }
}

/// Dual variables and per-epoch diagnostics of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct DualTrace {
    pub alpha: Vec<f64>,
    /// Dual objective after each epoch.
    pub objectives: Vec<f64>,
    /// Largest projected-gradient violation seen in each epoch.
    pub violations: Vec<f64>,
    /// Smallest and largest dual variable observed after any update.
    pub alpha_range: (f64, f64),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn train(matrix: &DesignMatrix, config: &TrainConfig) -> Result<LinearModel> {
    train_traced(matrix, config).map(|(m, _)| m)
}

pub fn train_traced(matrix: &DesignMatrix, config: &TrainConfig) -> Result<(LinearModel, DualTrace)> {
    config.check()?;
    let n = matrix.len();
    if n == 0 {
        return Err(Error::Invalid("no training rows".into()));
    }
    let has_ad = matrix.labels.contains(&Class::Ad);
    let has_control = matrix.labels.contains(&Class::Control);
    if !(has_ad && has_control) {
        return Err(Error::Invalid("training data must contain both classes".into()));
    }
    if let Some(i) = matrix.rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("training row {}", matrix.ids[i])));
    }

    let width = matrix.width();
    let b = config.bias_scale;
    let c = config.c;
    let y: Vec<f64> = matrix.labels.iter().map(|l| l.sign()).collect();
    let q_diag: Vec<f64> = matrix.rows.iter().map(|x| dot(x, x) + b * b).collect();

    let mut alpha = vec![0.0; n];
    // Weight vector with the bias coordinate kept separately.
    let mut w = vec![0.0; width];
    let mut w_bias = 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = DualTrace {
        alpha: Vec::new(),
        objectives: Vec::new(),
        violations: Vec::new(),
        alpha_range: (0.0, 0.0),
    };
    let mut converged = false;
    let mut epochs = 0;

    while epochs < config.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let mut max_violation = 0.0f64;

        for &i in &order {
            let x = &matrix.rows[i];
            let g = y[i] * (dot(&w, x) + w_bias * b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg == 0.0 {
                continue;
            }
            let old = alpha[i];
            let new = if q_diag[i] > 0.0 {
                (old - g / q_diag[i]).clamp(0.0, c)
            } else {
                // A zero row: the objective is linear in a_i with slope 1.
                c
            };
            let step = (new - old) * y[i];
            if step != 0.0 {
                w.iter_mut().zip(x).for_each(|(wj, xj)| *wj += step * xj);
                w_bias += step * b;
            }
            alpha[i] = new;
            trace.alpha_range.0 = trace.alpha_range.0.min(new);
            trace.alpha_range.1 = trace.alpha_range.1.max(new);
        }

        let objective = alpha.iter().sum::<f64>() - 0.5 * (dot(&w, &w) + w_bias * w_bias);
        trace.objectives.push(objective);
        trace.violations.push(max_violation);
        if max_violation < config.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("C={c}: stopped after {epochs} epochs without reaching tolerance {}", config.tolerance);
    }

    let model = LinearModel {
        weights: w,
        bias: w_bias * b,
        c,
        tolerance: config.tolerance,
        bias_scale: b,
        seed: config.seed,
        epochs,
        converged,
        dual_objective: *trace.objectives.last().expect("at least one epoch"),
        scaler: None,
    };
    if model.weights.iter().chain([&model.bias]).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trained weights".into()));
    }
    trace.alpha = alpha;
    Ok((model, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub c: f64,
    pub dev_accuracy: f64,
    pub dev_metrics: MetricsReport,
    pub epochs: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSearch {
    pub best_c: f64,
    pub model: LinearModel,
    pub rows: Vec<GridRow>,
}

/// Subject-level predictions for every row group of `matrix`: single rows
/// are scored directly, multi-row subjects are majority-voted.
pub fn predict_subjects(model: &LinearModel, matrix: &DesignMatrix) -> Result<Vec<(String, Class, f64)>> {
    let scored = matrix
        .rows
        .iter()
        .map(|x| model.decision(x).map(|s| (Class::from_score(s), s)))
        .collect::<Result<Vec<_>>>()?;
    eval::vote_by_subject(&matrix.subjects, &scored)
}

fn subject_truth(matrix: &DesignMatrix) -> Vec<(String, Class)> {
    let mut seen = std::collections::BTreeMap::new();
    for (s, l) in matrix.subjects.iter().zip(&matrix.labels) {
        seen.entry(s.clone()).or_insert(*l);
    }
    seen.into_iter().collect()
}

/// Trains one model per C on `train`, scores each on `dev` (voting per
/// subject where a subject spans several rows), and keeps the most accurate.
/// Ties go to the smallest C.
pub fn grid_search_c(
    train_set: &DesignMatrix,
    dev: &DesignMatrix,
    grid: &[f64],
    template: &TrainConfig,
) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(Error::Invalid("empty C grid".into()));
    }
    if dev.is_empty() {
        return Err(Error::Invalid("empty development set".into()));
    }
    if let Some(s) = dev.subjects.iter().find(|s| train_set.subjects.contains(s)) {
        return Err(Error::subject(s, "appears in both train and development data"));
    }
    let truth = subject_truth(dev);

    let mut results = grid
        .par_iter()
        .map(|&c| {
            let config = TrainConfig { c, ..template.clone() };
            let annotate = |e: Error| Error::Training { c, source: Box::new(e) };
            let model = train(train_set, &config).map_err(annotate)?;
            let predicted = predict_subjects(&model, dev).map_err(annotate)?;
            let cm = eval::confusion(
                &truth.iter().map(|(_, l)| *l).collect::<Vec<_>>(),
                &predicted.iter().map(|(_, l, _)| *l).collect::<Vec<_>>(),
            )
            .map_err(annotate)?;
            let metrics = eval::metrics(&cm).map_err(annotate)?;
            let row = GridRow {
                c,
                dev_accuracy: metrics.accuracy,
                dev_metrics: metrics,
                epochs: model.epochs,
                converged: model.converged,
            };
            Ok((row, model))
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| a.0.c.total_cmp(&b.0.c));

    let best = results
        .iter()
        .enumerate()
        .fold(0, |best, (i, (row, _))| if row.dev_accuracy > results[best].0.dev_accuracy { i } else { best });
    let (row, model) = results[best].clone();
    Ok(GridSearch {
        best_c: row.c,
        model,
        rows: results.into_iter().map(|(r, _)| r).collect(),
    })
}
