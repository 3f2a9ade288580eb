//! Experiment orchestration shared by the CLI: resolved run configs,
//! the four protocols (single-task train, merge, continual, ablation
//! sweep), and their report files.
//!
//! All outputs are JSON (reports) or JSON lines (metrics); byte-identical
//! across reruns of the same seed and config.

use crate::adapter::{AdapterState, Variant};
use crate::checkpoint::{load_state, save_state, Provenance};
use crate::continual::{run_sequence, SequenceReport};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, TaskLossKind};
use crate::merging::{merge, MergeMethod, MergeRecipe};
use crate::numerics::rng::{Rng, Stream};
use crate::optim::{eval_score, eval_split, train_epochs, EpochMetrics, OptimizerConfig};
use crate::tasks::{base_map, gen_contextual_regression, gen_task_family, TaskDataset, TaskGenSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Dataset stream seed; 0 means "use the run seed".
    pub seed: u64,
    pub clusters: usize,
    pub n_train_per_cluster: usize,
    pub n_eval_per_cluster: usize,
    pub noise: f64,
    pub delta_rank: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            clusters: 4,
            n_train_per_cluster: 128,
            n_eval_per_cluster: 32,
            noise: 0.05,
            delta_rank: 2,
        }
    }
}

/// Fully resolved run configuration. Unknown keys are rejected; every
/// run echoes the resolved form into its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: Variant,
    pub d_in: usize,
    pub d_out: usize,
    pub r: usize,
    pub k: usize,
    pub alpha: f64,
    pub rho: f64,
    pub d_h: usize,
    pub lambda: f64,
    pub task_loss: TaskLossKind,
    pub lr_b: f64,
    pub lr_gate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub epochs: usize,
    /// Seed of the shared frozen base map.
    pub w0_seed: u64,
    /// Projection seed; 0 derives one from the run seed.
    pub a_seed: u64,
    pub dataset: DatasetConfig,
    /// Number of tasks for the continual protocol / task families.
    pub num_tasks: usize,
    /// When set, train on this task of the `num_tasks`-family instead of
    /// a standalone dataset (used to prepare adapters for merging).
    pub task_index: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            variant: Variant::Neurolora,
            d_in: 64,
            d_out: 64,
            r: 16,
            k: 4,
            alpha: 16.0,
            rho: 0.25,
            d_h: 16,
            lambda: 0.1,
            task_loss: TaskLossKind::MeanSquaredError,
            lr_b: 2e-3,
            lr_gate: 5e-3,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.01,
            warmup_ratio: 0.03,
            epsilon: 1e-8,
            batch_size: 16,
            grad_accum: 4,
            epochs: 10,
            w0_seed: 1,
            a_seed: 0,
            dataset: DatasetConfig::default(),
            num_tasks: 3,
            task_index: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.adapter_config().validate()?;
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::InvalidParameter(format!(
                "warmup_ratio must lie in [0, 1), got {}",
                self.warmup_ratio
            )));
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(Error::InvalidParameter(
                "batch_size and grad_accum must be positive".into(),
            ));
        }
        if let Some(idx) = self.task_index {
            if idx >= self.num_tasks {
                return Err(Error::InvalidParameter(format!(
                    "task_index {idx} out of range for {} tasks",
                    self.num_tasks
                )));
            }
        }
        Ok(())
    }

    pub fn adapter_config(&self) -> crate::adapter::AdapterConfig {
        crate::adapter::AdapterConfig {
            d_in: self.d_in,
            d_out: self.d_out,
            r: self.r,
            k: self.k,
            alpha: self.alpha,
            rho: self.rho,
            d_h: self.d_h,
            variant: self.variant,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr_b: self.lr_b,
            lr_gate: self.lr_gate,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            warmup_ratio: self.warmup_ratio,
            epsilon: self.epsilon,
            batch_size: self.batch_size,
            grad_accum: self.grad_accum,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            task_loss_kind: self.task_loss,
        }
    }

    pub fn dataset_seed(&self) -> u64 {
        if self.dataset.seed == 0 {
            self.seed
        } else {
            self.dataset.seed
        }
    }

    pub fn projection_seed(&self) -> u64 {
        if self.a_seed == 0 {
            self.seed.wrapping_add(1000)
        } else {
            self.a_seed
        }
    }

    pub fn task_gen_spec(&self) -> TaskGenSpec {
        TaskGenSpec {
            seed: self.dataset_seed(),
            clusters: self.dataset.clusters,
            d_in: self.d_in,
            d_out: self.d_out,
            n_train_per_cluster: self.dataset.n_train_per_cluster,
            n_eval_per_cluster: self.dataset.n_eval_per_cluster,
            noise: self.dataset.noise,
            delta_rank: self.dataset.delta_rank,
        }
    }

    pub fn build_adapter(&self) -> Result<AdapterState> {
        let w0 = base_map(self.w0_seed, self.d_out, self.d_in);
        let mut rng = Rng::for_stream(self.seed, Stream::WeightInit);
        AdapterState::init(self.adapter_config(), self.projection_seed(), w0, &mut rng)
    }

    pub fn build_dataset(&self) -> Result<TaskDataset> {
        let w0 = base_map(self.w0_seed, self.d_out, self.d_in);
        match self.task_index {
            None => gen_contextual_regression(&self.task_gen_spec(), &w0),
            Some(idx) => {
                let family =
                    gen_task_family(self.dataset_seed(), self.num_tasks, &self.task_gen_spec(), &w0)?;
                Ok(family.into_iter().nth(idx).expect("validated index"))
            }
        }
    }

    pub fn build_family(&self) -> Result<Vec<TaskDataset>> {
        let w0 = base_map(self.w0_seed, self.d_out, self.d_in);
        gen_task_family(self.dataset_seed(), self.num_tasks, &self.task_gen_spec(), &w0)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialization")
    }

    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_string(self).expect("config serialization"));
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn write_deterministic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn json_report<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serialization") + "\n"
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub metrics: Vec<EpochMetrics>,
}

/// Single-task training protocol: trains, then writes `checkpoint.json`,
/// `metrics.jsonl` (one record per epoch), and `config.json`.
pub fn run_train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let data = cfg.build_dataset()?;
    let mut state = cfg.build_adapter()?;
    let mut rng = Rng::for_stream(cfg.seed, Stream::Shuffle);
    let metrics = train_epochs(
        &mut state,
        &data,
        &cfg.loss_config(),
        &cfg.optimizer_config(),
        cfg.epochs,
        &mut rng,
    )?;

    let provenance = Provenance {
        config: Some(cfg.to_json_value()),
        config_hash: Some(cfg.content_hash()),
        final_metrics: metrics.last().cloned(),
    };
    let checkpoint_path = out_dir.join("checkpoint.json");
    save_state(&state, provenance, &checkpoint_path)?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut lines = String::new();
    for m in &metrics {
        lines.push_str(&serde_json::to_string(m)?);
        lines.push('\n');
    }
    write_deterministic(&metrics_path, &lines)?;
    write_deterministic(&out_dir.join("config.json"), &json_report(cfg))?;

    Ok(TrainOutcome {
        checkpoint_path,
        metrics_path,
        metrics,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeTaskScore {
    pub task: String,
    pub individual_score: f64,
    pub merged_score: f64,
    /// (merged - individual) / individual * 100.
    pub degradation_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeReport {
    pub method: MergeMethod,
    pub scaling: f64,
    pub trim_fraction: f64,
    pub per_task: Vec<MergeTaskScore>,
    pub average_individual: f64,
    pub average_merged: f64,
    pub relative_degradation_pct: f64,
}

/// Merge protocol: loads checkpoints, merges, evaluates the merged
/// adapter on each source task's eval split, writes `merged.json` and
/// `merge_report.json`.
pub fn run_merge(
    checkpoint_paths: &[PathBuf],
    recipe: &MergeRecipe,
    out_dir: &Path,
) -> Result<MergeReport> {
    recipe.validate()?;
    if checkpoint_paths.len() < 2 {
        return Err(Error::InvalidParameter(
            "merge needs at least 2 checkpoints".into(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut states = Vec::new();
    let mut provs = Vec::new();
    for p in checkpoint_paths {
        let (s, prov) = load_state(p)?;
        states.push(s);
        provs.push(prov);
    }
    let refs: Vec<&AdapterState> = states.iter().collect();
    let merged = merge(&refs, recipe)?;
    save_state(
        &merged,
        Provenance {
            config: provs[0].config.clone(),
            config_hash: provs[0].config_hash.clone(),
            final_metrics: None,
        },
        &out_dir.join("merged.json"),
    )?;

    let mut per_task = Vec::new();
    for (idx, prov) in provs.iter().enumerate() {
        let cfg_value = prov.config.clone().ok_or_else(|| {
            Error::Checkpoint(format!(
                "checkpoint {idx} lacks a stored run config; cannot rebuild its eval split"
            ))
        })?;
        let cfg: RunConfig = serde_json::from_value(cfg_value)?;
        let data = cfg.build_dataset()?;
        let loss_cfg = cfg.loss_config();
        let merged_loss = eval_split(&merged, &data.eval, &loss_cfg)?;
        let merged_score = eval_score(merged_loss);
        let individual_score = match prov.final_metrics.as_ref() {
            Some(m) => m.eval_score,
            None => eval_score(eval_split(&states[idx], &data.eval, &loss_cfg)?),
        };
        per_task.push(MergeTaskScore {
            task: data.name.clone(),
            individual_score,
            merged_score,
            degradation_pct: (merged_score - individual_score) / individual_score * 100.0,
        });
    }
    let average_individual =
        per_task.iter().map(|t| t.individual_score).sum::<f64>() / per_task.len() as f64;
    let average_merged =
        per_task.iter().map(|t| t.merged_score).sum::<f64>() / per_task.len() as f64;
    let report = MergeReport {
        method: recipe.method,
        scaling: recipe.scaling,
        trim_fraction: recipe.trim_fraction,
        per_task,
        average_individual,
        average_merged,
        relative_degradation_pct: (average_merged - average_individual) / average_individual
            * 100.0,
    };
    write_deterministic(&out_dir.join("merge_report.json"), &json_report(&report))?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinualReport {
    pub config: RunConfig,
    pub matrix: crate::continual::AccuracyMatrix,
    pub bwt: Option<f64>,
    pub per_task_metrics: Vec<Vec<EpochMetrics>>,
}

/// Continual protocol: trains sequentially over the task family, writes
/// `continual_report.json` with the accuracy matrix and BWT.
pub fn run_continual(cfg: &RunConfig, out_dir: &Path) -> Result<ContinualReport> {
    cfg.validate()?;
    if cfg.num_tasks < 2 {
        return Err(Error::InvalidParameter(
            "continual protocol needs at least 2 tasks".into(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    let tasks = cfg.build_family()?;
    let mut state = cfg.build_adapter()?;
    let mut rng = Rng::for_stream(cfg.seed, Stream::Shuffle);
    let SequenceReport {
        matrix,
        bwt,
        per_task_metrics,
    } = run_sequence(
        &mut state,
        &tasks,
        &cfg.loss_config(),
        &cfg.optimizer_config(),
        cfg.epochs,
        &mut rng,
    )?;
    let report = ContinualReport {
        config: cfg.clone(),
        matrix,
        bwt,
        per_task_metrics,
    };
    write_deterministic(&out_dir.join("continual_report.json"), &json_report(&report))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Gate,
    Lambda,
    K,
    Dh,
}

impl std::str::FromStr for Sweep {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gate" => Ok(Sweep::Gate),
            "lambda" => Ok(Sweep::Lambda),
            "k" => Ok(Sweep::K),
            "dh" => Ok(Sweep::Dh),
            other => Err(Error::InvalidParameter(format!("unknown sweep '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateCell {
    pub label: String,
    pub final_eval_scores: Vec<f64>,
    pub mean_eval_score: f64,
    pub mean_eval_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateReport {
    pub sweep: Sweep,
    pub seeds: Vec<u64>,
    pub cells: Vec<AblateCell>,
}

/// Ablation sweep: the matching variant or hyperparameter grid, each cell
/// replicated across seeds. Writes `ablate_report.json` and an aligned
/// text table `ablate_table.txt`.
pub fn run_ablate(base: &RunConfig, sweep: Sweep, seeds: usize, out_dir: &Path) -> Result<AblateReport> {
    base.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| base.seed + i).collect();

    let cells_cfg: Vec<(String, RunConfig)> = match sweep {
        Sweep::Gate => [
            Variant::Neurolora,
            Variant::Flylora,
            Variant::StaticGate,
            Variant::TrainableA,
        ]
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            c.variant = v;
            (v.as_str().to_string(), c)
        })
        .collect(),
        Sweep::Lambda => [0.0, 0.01, 0.05, 0.1, 0.2]
            .iter()
            .map(|&l| {
                let mut c = base.clone();
                c.lambda = l;
                (format!("lambda={l}"), c)
            })
            .collect(),
        Sweep::K => [4usize, 8, 12, 16]
            .iter()
            .map(|&k| {
                let mut c = base.clone();
                c.k = k;
                (format!("k={k}"), c)
            })
            .collect(),
        Sweep::Dh => [8usize, 16, 32]
            .iter()
            .map(|&dh| {
                let mut c = base.clone();
                c.d_h = dh;
                (format!("d_h={dh}"), c)
            })
            .collect(),
    };

    let mut cells = Vec::new();
    for (label, cfg) in cells_cfg {
        let mut scores = Vec::new();
        let mut losses = Vec::new();
        for &seed in &seed_list {
            let mut c = cfg.clone();
            c.seed = seed;
            c.validate()?;
            let data = c.build_dataset()?;
            let mut state = c.build_adapter()?;
            let mut rng = Rng::for_stream(seed, Stream::Shuffle);
            let metrics = train_epochs(
                &mut state,
                &data,
                &c.loss_config(),
                &c.optimizer_config(),
                c.epochs,
                &mut rng,
            )?;
            let last = metrics.last().ok_or(Error::EmptyInput("no epochs trained"))?;
            scores.push(last.eval_score);
            losses.push(last.eval_loss);
        }
        let mean_eval_score = scores.iter().sum::<f64>() / scores.len() as f64;
        let mean_eval_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        cells.push(AblateCell {
            label,
            final_eval_scores: scores,
            mean_eval_score,
            mean_eval_loss,
        });
    }

    let report = AblateReport {
        sweep,
        seeds: seed_list,
        cells,
    };
    write_deterministic(&out_dir.join("ablate_report.json"), &json_report(&report))?;
    write_deterministic(&out_dir.join("ablate_table.txt"), &ablate_table(&report))?;
    Ok(report)
}

fn ablate_table(report: &AblateReport) -> String {
    let mut width = "cell".len();
    for c in &report.cells {
        width = width.max(c.label.len());
    }
    let mut out = format!(
        "{:<width$}  {:>16}  {:>16}\n",
        "cell", "mean_eval_score", "mean_eval_loss"
    );
    for c in &report.cells {
        out.push_str(&format!(
            "{:<width$}  {:>16.6}  {:>16.6}\n",
            c.label, c.mean_eval_score, c.mean_eval_loss
        ));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub eval_loss: f64,
    pub eval_score: f64,
}

/// Re-evaluate a checkpoint on its provenance dataset.
pub fn run_eval(checkpoint_path: &Path) -> Result<EvalReport> {
    let (state, prov) = load_state(checkpoint_path)?;
    let cfg_value = prov.config.ok_or_else(|| {
        Error::Checkpoint("checkpoint lacks a stored run config".into())
    })?;
    let cfg: RunConfig = serde_json::from_value(cfg_value)?;
    let data = cfg.build_dataset()?;
    let loss = eval_split(&state, &data.eval, &cfg.loss_config())?;
    Ok(EvalReport {
        task: data.name,
        eval_loss: loss,
        eval_score: eval_score(loss),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InspectReport {
    pub variant: Variant,
    pub d_in: usize,
    pub d_out: usize,
    pub r: usize,
    pub k: usize,
    pub alpha: f64,
    pub rho: f64,
    pub d_h: usize,
    pub projection_seed: u64,
    pub projection_hash: String,
    pub config_hash: Option<String>,
    pub final_metrics: Option<EpochMetrics>,
}

/// Summarize a checkpoint without loading the heavy arrays into a state.
pub fn run_inspect(checkpoint_path: &Path) -> Result<InspectReport> {
    let ckpt = crate::checkpoint::Checkpoint::load(checkpoint_path)?;
    Ok(InspectReport {
        variant: ckpt.config.variant,
        d_in: ckpt.config.d_in,
        d_out: ckpt.config.d_out,
        r: ckpt.config.r,
        k: ckpt.config.k,
        alpha: ckpt.config.alpha,
        rho: ckpt.config.rho,
        d_h: ckpt.config.d_h,
        projection_seed: ckpt.projection.seed,
        projection_hash: ckpt.projection.content_hash,
        config_hash: ckpt.provenance.config_hash,
        final_metrics: ckpt.provenance.final_metrics,
    })
}
