//! Task losses, the contrastive orthogonality penalty on B's expert
//! columns, and the combined objective.

use crate::adapter::ForwardTrace;
use crate::error::{Error, Result};
use crate::numerics::matrix::{dot, Matrix};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLossKind {
    MeanSquaredError,
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone)]
pub enum Target {
    Vector(Vec<f64>),
    Class(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the orthogonality penalty in the total objective.
    pub lambda: f64,
    pub task_loss_kind: TaskLossKind,
}

/// Mean squared cosine between active and inactive expert columns of B,
/// with its exact gradient. Empty inactive set gives (0, 0).
pub fn orthogonality_loss(b: &Matrix, active: &[usize]) -> Result<(f64, Matrix)> {
    let r = b.cols();
    let inactive: Vec<usize> = (0..r).filter(|i| !active.contains(i)).collect();
    let mut grad = Matrix::zeros(b.rows(), r);
    if active.is_empty() || inactive.is_empty() {
        return Ok((0.0, grad));
    }

    let cols: Vec<Vec<f64>> = (0..r).map(|c| b.column(c)).collect();
    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    for (c, n) in norms.iter().enumerate() {
        if *n == 0.0 && (active.contains(&c) || inactive.contains(&c)) {
            return Err(Error::ZeroNormColumn { col: c });
        }
    }

    let weight = 1.0 / (active.len() as f64 * inactive.len() as f64);
    let mut value = 0.0;
    for &i in active {
        for &j in &inactive {
            let d = dot(&cols[i], &cols[j]);
            let denom = norms[i] * norms[j];
            let c = d / denom;
            value += weight * c * c;
            // d(c^2)/db_i = 2c (b_j / (n_i n_j) - c b_i / n_i^2), same form for b_j
            let ci = 2.0 * weight * c;
            for row in 0..b.rows() {
                let bi = cols[i][row];
                let bj = cols[j][row];
                grad.set(
                    row,
                    i,
                    grad.get(row, i) + ci * (bj / denom - c * bi / (norms[i] * norms[i])),
                );
                grad.set(
                    row,
                    j,
                    grad.get(row, j) + ci * (bi / denom - c * bj / (norms[j] * norms[j])),
                );
            }
        }
    }
    Ok((value, grad))
}

/// Arithmetic mean over tokens of the per-token orthogonality loss.
pub fn batch_orthogonality_loss(b: &Matrix, traces: &[ForwardTrace]) -> Result<(f64, Matrix)> {
    if traces.is_empty() {
        return Err(Error::EmptyInput("batch_orthogonality_loss needs traces"));
    }
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b.rows(), b.cols());
    let w = 1.0 / traces.len() as f64;
    for t in traces {
        let (v, g) = orthogonality_loss(b, &t.active)?;
        value += w * v;
        grad.add_scaled(&g, w);
    }
    Ok((value, grad))
}

/// Task loss and its gradient w.r.t. the prediction (logits for
/// cross-entropy).
pub fn task_loss(pred: &[f64], target: &Target, kind: TaskLossKind) -> Result<(f64, Vec<f64>)> {
    match (kind, target) {
        (TaskLossKind::MeanSquaredError, Target::Vector(t)) => {
            if t.len() != pred.len() {
                return Err(Error::dim(
                    "task_loss",
                    format!("target of length {}", pred.len()),
                    format!("length {}", t.len()),
                ));
            }
            let n = pred.len() as f64;
            let mut value = 0.0;
            let mut grad = vec![0.0; pred.len()];
            for (i, (p, t)) in pred.iter().zip(t).enumerate() {
                let d = p - t;
                value += d * d / n;
                grad[i] = 2.0 * d / n;
            }
            Ok((value, grad))
        }
        (TaskLossKind::SoftmaxCrossEntropy, Target::Class(c)) => {
            if *c >= pred.len() {
                return Err(Error::InvalidParameter(format!(
                    "class index {c} out of range for {} logits",
                    pred.len()
                )));
            }
            let max = pred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = pred.iter().map(|p| (p - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let value = sum.ln() - (pred[*c] - max);
            let grad: Vec<f64> = exps
                .iter()
                .enumerate()
                .map(|(i, e)| e / sum - if i == *c { 1.0 } else { 0.0 })
                .collect();
            Ok((value, grad))
        }
        _ => Err(Error::InvalidParameter(
            "task loss kind does not match target type".into(),
        )),
    }
}

pub fn total_loss(task: f64, orth: f64, lambda: f64) -> f64 {
    task + lambda * orth
}
