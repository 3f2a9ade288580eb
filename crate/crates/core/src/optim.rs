//! AdamW with decoupled weight decay, two parameter groups (B vs. gate),
//! cosine schedule with linear warmup, and the epoch training loop.

use crate::adapter::{accumulate_grads, expert_utilization, scale_grads, AdapterGrads, AdapterState};
use crate::error::{Error, Result};
use crate::losses::{batch_orthogonality_loss, task_loss, total_loss, LossConfig};
use crate::numerics::rng::Rng;
use crate::tasks::{Split, TaskDataset};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr_b: f64,
    pub lr_gate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr_b: 2e-4,
            lr_gate: 5e-4,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.01,
            warmup_ratio: 0.03,
            epsilon: 1e-8,
            batch_size: 16,
            grad_accum: 4,
        }
    }
}

/// Linear warmup to `base_lr`, then cosine decay to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_ratio: f64, base_lr: f64) -> f64 {
    let warmup = (warmup_ratio * total_steps as f64).round() as usize;
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if total_steps <= warmup {
        return base_lr;
    }
    let progress = ((step - warmup) as f64 / (total_steps - warmup) as f64).min(1.0);
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First/second moment buffers for one tensor.
#[derive(Debug, Clone, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// Optimizer state mirroring the trainable tensors of an adapter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: usize,
    pub b: Moments,
    pub gate_w1: Option<Moments>,
    pub gate_w2: Option<Moments>,
    pub gate_gamma: Option<Moments>,
    pub gate_beta: Option<Moments>,
    pub static_m: Option<Moments>,
    pub dense_a: Option<Moments>,
}

impl AdamState {
    pub fn new(state: &AdapterState) -> Self {
        let cfg = &state.config;
        AdamState {
            t: 0,
            b: Moments::new(cfg.d_out * cfg.r),
            gate_w1: state.gate.as_ref().map(|g| Moments::new(g.d_h() * g.d_in())),
            gate_w2: state.gate.as_ref().map(|g| Moments::new(g.rank() * g.d_h())),
            gate_gamma: state.gate.as_ref().map(|_| Moments::new(cfg.r)),
            gate_beta: state.gate.as_ref().map(|_| Moments::new(cfg.r)),
            static_m: state.static_m.as_ref().map(|m| Moments::new(m.len())),
            dense_a: state.dense_a.as_ref().map(|_| Moments::new(cfg.r * cfg.d_in)),
        }
    }
}

/// One AdamW update on a flat tensor. Decay is decoupled from the
/// adaptive step.
fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    mom: &mut Moments,
    lr: f64,
    cfg: &OptimizerConfig,
    weight_decay: f64,
    t: usize,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * grad[i];
        mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = mom.m[i] / bc1;
        let v_hat = mom.v[i] / bc2;
        param[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.epsilon) + weight_decay * param[i]);
    }
}

/// Apply one optimizer step to every trainable tensor. `lr_b` and
/// `lr_gate` are the schedule-resolved rates for this step. gamma, beta,
/// and the static modulation vector are exempt from weight decay.
pub fn adamw_step(
    state: &mut AdapterState,
    grads: &AdapterGrads,
    adam: &mut AdamState,
    cfg: &OptimizerConfig,
    lr_b: f64,
    lr_gate: f64,
) -> Result<()> {
    adam.t += 1;
    let t = adam.t;
    adamw_update(
        state.b.data_mut(),
        grads.b.data(),
        &mut adam.b,
        lr_b,
        cfg,
        cfg.weight_decay,
        t,
    );
    if let (Some(gate), Some(gg)) = (state.gate.as_mut(), grads.gate.as_ref()) {
        adamw_update(
            gate.w1.data_mut(),
            gg.w1.data(),
            adam.gate_w1.as_mut().expect("gate moments"),
            lr_gate,
            cfg,
            cfg.weight_decay,
            t,
        );
        adamw_update(
            gate.w2.data_mut(),
            gg.w2.data(),
            adam.gate_w2.as_mut().expect("gate moments"),
            lr_gate,
            cfg,
            cfg.weight_decay,
            t,
        );
        adamw_update(
            &mut gate.gamma,
            &gg.gamma,
            adam.gate_gamma.as_mut().expect("gate moments"),
            lr_gate,
            cfg,
            0.0,
            t,
        );
        adamw_update(
            &mut gate.beta,
            &gg.beta,
            adam.gate_beta.as_mut().expect("gate moments"),
            lr_gate,
            cfg,
            0.0,
            t,
        );
    }
    if let (Some(m), Some(gm)) = (state.static_m.as_mut(), grads.static_m.as_ref()) {
        adamw_update(
            m,
            gm,
            adam.static_m.as_mut().expect("static moments"),
            lr_gate,
            cfg,
            0.0,
            t,
        );
    }
    if let (Some(a), Some(ga)) = (state.dense_a.as_mut(), grads.dense_a.as_ref()) {
        adamw_update(
            a.data_mut(),
            ga.data(),
            adam.dense_a.as_mut().expect("dense A moments"),
            lr_b,
            cfg,
            cfg.weight_decay,
            t,
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub task_loss: f64,
    pub orth_loss: f64,
    pub total_loss: f64,
    pub eval_score: f64,
    pub eval_loss: f64,
    pub utilization: Vec<f64>,
    pub lr_b: f64,
}

/// Mean task loss over a split.
pub fn eval_split(state: &AdapterState, split: &Split, loss_cfg: &LossConfig) -> Result<f64> {
    if split.inputs.is_empty() {
        return Err(Error::EmptyInput("eval split is empty"));
    }
    let mut total = 0.0;
    for (x, target) in split.inputs.iter().zip(&split.targets) {
        let (y, _) = state.forward(x)?;
        total += task_loss(&y, target, loss_cfg.task_loss_kind)?.0;
    }
    Ok(total / split.inputs.len() as f64)
}

/// Accuracy-like score: 1 / (1 + mean loss), higher is better.
pub fn eval_score(mean_loss: f64) -> f64 {
    1.0 / (1.0 + mean_loss)
}

/// Train for `epochs` epochs with shuffled mini-batches and gradient
/// accumulation. The step count for the schedule is derived from the
/// dataset size. `rng` should be the shuffle stream of the run seed.
pub fn train_epochs(
    state: &mut AdapterState,
    data: &TaskDataset,
    loss_cfg: &LossConfig,
    opt_cfg: &OptimizerConfig,
    epochs: usize,
    rng: &mut Rng,
) -> Result<Vec<EpochMetrics>> {
    train_epochs_with(state, data, loss_cfg, opt_cfg, epochs, rng, &mut AdamState::new(state), None)
}

/// As [`train_epochs`], reusing existing optimizer state and optionally a
/// pre-computed total step count (for schedules spanning multiple tasks).
#[allow(clippy::too_many_arguments)]
pub fn train_epochs_with(
    state: &mut AdapterState,
    data: &TaskDataset,
    loss_cfg: &LossConfig,
    opt_cfg: &OptimizerConfig,
    epochs: usize,
    rng: &mut Rng,
    adam: &mut AdamState,
    total_steps_override: Option<usize>,
) -> Result<Vec<EpochMetrics>> {
    let n = data.train.inputs.len();
    if n == 0 {
        return Err(Error::EmptyInput("training split is empty"));
    }
    let effective = opt_cfg.batch_size * opt_cfg.grad_accum;
    let steps_per_epoch = n.div_ceil(effective);
    let total_steps = total_steps_override.unwrap_or(epochs * steps_per_epoch);

    let mut metrics = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);

        let mut epoch_task = 0.0;
        let mut epoch_orth = 0.0;
        let mut epoch_windows = 0usize;
        let mut epoch_traces = Vec::new();
        let mut last_lr_b = 0.0;

        for window in order.chunks(effective) {
            let mut grads = AdapterGrads::zeros_like(state);
            let mut traces = Vec::with_capacity(window.len());
            let mut window_task = 0.0;
            for &idx in window {
                let x = &data.train.inputs[idx];
                let target = &data.train.targets[idx];
                let (y, trace) = state.forward(x)?;
                let (tl, grad_pred) = task_loss(&y, target, loss_cfg.task_loss_kind)?;
                window_task += tl;
                let g = state.backward(&trace, &grad_pred)?;
                accumulate_grads(&mut grads, &g);
                traces.push(trace);
            }
            let inv = 1.0 / window.len() as f64;
            scale_grads(&mut grads, inv);
            window_task *= inv;

            let (orth_value, orth_grad) = batch_orthogonality_loss(&state.b, &traces)?;
            if loss_cfg.lambda != 0.0 {
                grads.b.add_scaled(&orth_grad, loss_cfg.lambda);
            }

            let step = adam.t + 1;
            let lr_b = lr_at(step, total_steps, opt_cfg.warmup_ratio, opt_cfg.lr_b);
            let lr_gate = lr_at(step, total_steps, opt_cfg.warmup_ratio, opt_cfg.lr_gate);
            adamw_step(state, &grads, adam, opt_cfg, lr_b, lr_gate)?;
            last_lr_b = lr_b;

            epoch_task += window_task;
            epoch_orth += orth_value;
            epoch_windows += 1;
            epoch_traces.extend(traces);
        }

        let task_mean = epoch_task / epoch_windows as f64;
        let orth_mean = epoch_orth / epoch_windows as f64;
        let eval_loss = eval_split(state, &data.eval, loss_cfg)?;
        metrics.push(EpochMetrics {
            epoch,
            task_loss: task_mean,
            orth_loss: orth_mean,
            total_loss: total_loss(task_mean, orth_mean, loss_cfg.lambda),
            eval_score: eval_score(eval_loss),
            eval_loss,
            utilization: expert_utilization(&epoch_traces, state.config.r)?,
            lr_b: last_lr_b,
        });
    }
    Ok(metrics)
}
