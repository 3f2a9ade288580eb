//! JSON checkpoint persistence.
//!
//! Float arrays are stored as decimal strings with 17 significant digits,
//! which round-trips f64 exactly; saving is a deterministic function of
//! the state, so load -> save is byte-identical. The projection is stored
//! as its four generation parameters plus a content hash of the entry
//! list, verified on load.

use crate::adapter::{AdapterConfig, AdapterState, Variant};
use crate::error::{Error, Result};
use crate::gate::GateParams;
use crate::numerics::matrix::Matrix;
use crate::optim::EpochMetrics;
use crate::projection::SparseTernaryProjection;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

fn enc_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn dec_f(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|e| Error::Checkpoint(format!("bad float '{s}': {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixEnc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<String>,
}

impl MatrixEnc {
    fn from_matrix(m: &Matrix) -> Self {
        MatrixEnc {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().iter().map(|&v| enc_f(v)).collect(),
        }
    }

    fn to_matrix(&self) -> Result<Matrix> {
        let data = self
            .data
            .iter()
            .map(|s| dec_f(s))
            .collect::<Result<Vec<f64>>>()?;
        Matrix::from_vec(self.rows, self.cols, data)
    }
}

fn enc_vec(v: &[f64]) -> Vec<String> {
    v.iter().map(|&x| enc_f(x)).collect()
}

fn dec_vec(v: &[String]) -> Result<Vec<f64>> {
    v.iter().map(|s| dec_f(s)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionEnc {
    pub seed: u64,
    pub rho: f64,
    pub r: usize,
    pub d_in: usize,
    pub content_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateEnc {
    pub w1: MatrixEnc,
    pub w2: MatrixEnc,
    pub gamma: Vec<String>,
    pub beta: Vec<String>,
}

/// Run provenance carried inside the checkpoint: the fully resolved run
/// config and the final epoch's metrics.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    #[serde(default)]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub final_metrics: Option<EpochMetrics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: AdapterConfig,
    pub projection: ProjectionEnc,
    pub b: MatrixEnc,
    pub b_init: MatrixEnc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_a: Option<MatrixEnc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateEnc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_m: Option<Vec<String>>,
    pub w0: MatrixEnc,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn from_state(state: &AdapterState, provenance: Provenance) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: state.config.clone(),
            projection: ProjectionEnc {
                seed: state.projection.seed(),
                rho: state.projection.rho(),
                r: state.projection.rank(),
                d_in: state.projection.d_in(),
                content_hash: state.projection.content_hash(),
            },
            b: MatrixEnc::from_matrix(&state.b),
            b_init: MatrixEnc::from_matrix(&state.b_init),
            dense_a: state.dense_a.as_ref().map(MatrixEnc::from_matrix),
            gate: state.gate.as_ref().map(|g| GateEnc {
                w1: MatrixEnc::from_matrix(&g.w1),
                w2: MatrixEnc::from_matrix(&g.w2),
                gamma: enc_vec(&g.gamma),
                beta: enc_vec(&g.beta),
            }),
            static_m: state.static_m.as_ref().map(|m| enc_vec(m)),
            w0: MatrixEnc::from_matrix(&state.w0),
            provenance,
        }
    }

    /// Rebuild the adapter, regenerating A from its parameters and
    /// verifying the stored content hash.
    pub fn to_state(&self) -> Result<AdapterState> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        self.config.validate()?;
        let projection = SparseTernaryProjection::generate(
            self.projection.seed,
            self.projection.rho,
            self.projection.r,
            self.projection.d_in,
        )?;
        if projection.content_hash() != self.projection.content_hash {
            return Err(Error::Checkpoint(
                "regenerated projection does not match stored content hash".into(),
            ));
        }
        let gate = match (&self.gate, self.config.variant) {
            (Some(g), Variant::Neurolora) => Some(GateParams {
                w1: g.w1.to_matrix()?,
                w2: g.w2.to_matrix()?,
                gamma: dec_vec(&g.gamma)?,
                beta: dec_vec(&g.beta)?,
            }),
            (None, Variant::Neurolora) => {
                return Err(Error::Checkpoint("neurolora checkpoint missing gate".into()))
            }
            _ => None,
        };
        let static_m = match (&self.static_m, self.config.variant) {
            (Some(m), Variant::StaticGate) => Some(dec_vec(m)?),
            (None, Variant::StaticGate) => {
                return Err(Error::Checkpoint(
                    "static_gate checkpoint missing modulation vector".into(),
                ))
            }
            _ => None,
        };
        let dense_a = match (&self.dense_a, self.config.variant) {
            (Some(a), Variant::TrainableA) => Some(a.to_matrix()?),
            (None, Variant::TrainableA) => {
                return Err(Error::Checkpoint("trainable_a checkpoint missing A".into()))
            }
            _ => None,
        };
        Ok(AdapterState {
            config: self.config.clone(),
            projection,
            dense_a,
            b: self.b.to_matrix()?,
            b_init: self.b_init.to_matrix()?,
            gate,
            static_m,
            w0: self.w0.to_matrix()?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialization") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn save_state(state: &AdapterState, provenance: Provenance, path: &Path) -> Result<()> {
    Checkpoint::from_state(state, provenance).save(path)
}

pub fn load_state(path: &Path) -> Result<(AdapterState, Provenance)> {
    let ckpt = Checkpoint::load(path)?;
    let state = ckpt.to_state()?;
    Ok((state, ckpt.provenance))
}
