//! Sequential multi-task training and the Backward Transfer metric.

use crate::adapter::AdapterState;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::numerics::rng::Rng;
use crate::optim::{eval_score, eval_split, train_epochs_with, AdamState, EpochMetrics, OptimizerConfig};
use crate::tasks::TaskDataset;
use serde::{Deserialize, Serialize};

/// R[j][i] = score on task i after finishing training on task j.
/// Only j >= i is populated; unpopulated cells are None.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub tasks: usize,
    pub r: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        AccuracyMatrix {
            tasks,
            r: vec![vec![None; tasks]; tasks],
        }
    }

    pub fn set(&mut self, after_task: usize, on_task: usize, score: f64) {
        self.r[after_task][on_task] = Some(score);
    }

    pub fn get(&self, after_task: usize, on_task: usize) -> Option<f64> {
        self.r[after_task][on_task]
    }
}

/// BWT = (1/(T-1)) sum_{i=1}^{T-1} (R[T][i] - R[i][i]), 1-indexed.
/// Negative values indicate forgetting.
pub fn backward_transfer(m: &AccuracyMatrix) -> Result<f64> {
    let t = m.tasks;
    if t < 2 {
        return Err(Error::InvalidParameter(
            "backward transfer needs at least 2 tasks".into(),
        ));
    }
    let mut sum = 0.0;
    for i in 0..t - 1 {
        let final_score = m.get(t - 1, i).ok_or_else(|| {
            Error::IncompleteMatrix(format!("missing R[{}][{}]", t - 1, i))
        })?;
        let learned_score = m
            .get(i, i)
            .ok_or_else(|| Error::IncompleteMatrix(format!("missing R[{i}][{i}]")))?;
        sum += final_score - learned_score;
    }
    Ok(sum / (t - 1) as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceReport {
    pub matrix: AccuracyMatrix,
    /// None when T = 1 (the formula needs at least two tasks).
    pub bwt: Option<f64>,
    pub per_task_metrics: Vec<Vec<EpochMetrics>>,
}

/// Train on each task in order with no replay, evaluating all seen tasks
/// after each stage. The optimizer and its schedule restart per task; the
/// frozen projection and base map are shared throughout.
pub fn run_sequence(
    state: &mut AdapterState,
    tasks: &[TaskDataset],
    loss_cfg: &LossConfig,
    opt_cfg: &OptimizerConfig,
    epochs: usize,
    rng: &mut Rng,
) -> Result<SequenceReport> {
    if tasks.is_empty() {
        return Err(Error::EmptyInput("task sequence is empty"));
    }
    let t = tasks.len();
    let mut matrix = AccuracyMatrix::new(t);
    let mut per_task_metrics = Vec::with_capacity(t);
    let entries_before = state.projection.entries().to_vec();

    for (stage, task) in tasks.iter().enumerate() {
        let mut adam = AdamState::new(state);
        let metrics =
            train_epochs_with(state, task, loss_cfg, opt_cfg, epochs, rng, &mut adam, None)?;
        per_task_metrics.push(metrics);
        for (seen, seen_task) in tasks.iter().take(stage + 1).enumerate() {
            let loss = eval_split(state, &seen_task.eval, loss_cfg)?;
            matrix.set(stage, seen, eval_score(loss));
        }
    }
    debug_assert_eq!(state.projection.entries(), entries_before.as_slice());

    let bwt = if t >= 2 {
        Some(backward_transfer(&matrix)?)
    } else {
        None
    };
    Ok(SequenceReport {
        matrix,
        bwt,
        per_task_metrics,
    })
}
