//! Frozen sparse ternary down-projection.
//!
//! Cells are sampled row-major, one uniform draw per cell, plus one sign
//! draw when the cell is nonzero. Entries are stored as a coordinate list
//! sorted by (row, col), so the accumulation order of [`SparseTernaryProjection::apply`]
//! is fixed and its output bit-deterministic.

use crate::error::{Error, Result};
use crate::numerics::rng::{Rng, Stream};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One nonzero cell of the projection matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub sign: i8,
}

/// The frozen matrix A: stored as generation parameters plus the
/// materialized entry list. Never mutated after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTernaryProjection {
    seed: u64,
    rho: f64,
    r: usize,
    d_in: usize,
    entries: Vec<Entry>,
}

impl SparseTernaryProjection {
    /// Sample A with each cell in {0, +1, -1} with probabilities
    /// {1-rho, rho/2, rho/2}, deterministically in `seed`.
    pub fn generate(seed: u64, rho: f64, r: usize, d_in: usize) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sparsity rho must lie in (0, 1], got {rho}"
            )));
        }
        if r == 0 || d_in == 0 {
            return Err(Error::InvalidParameter(format!(
                "projection dims must be positive, got r={r}, d_in={d_in}"
            )));
        }
        let mut rng = Rng::for_stream(seed, Stream::Projection);
        let mut entries = Vec::new();
        for row in 0..r {
            for col in 0..d_in {
                if rng.next_uniform() < rho {
                    let sign = if rng.next_uniform() < 0.5 { 1 } else { -1 };
                    entries.push(Entry { row, col, sign });
                }
            }
        }
        Ok(SparseTernaryProjection {
            seed,
            rho,
            r,
            d_in,
            entries,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// h = A x via sparse accumulation in (row, col) order.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(Error::dim(
                "project",
                format!("vector of length {}", self.d_in),
                format!("length {}", x.len()),
            ));
        }
        let mut h = vec![0.0; self.r];
        for e in &self.entries {
            h[e.row] += f64::from(e.sign) * x[e.col];
        }
        Ok(h)
    }

    /// A^T v (gradient route back to the input).
    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.r {
            return Err(Error::dim(
                "project_transpose",
                format!("vector of length {}", self.r),
                format!("length {}", v.len()),
            ));
        }
        let mut out = vec![0.0; self.d_in];
        for e in &self.entries {
            out[e.col] += f64::from(e.sign) * v[e.row];
        }
        Ok(out)
    }

    /// Dense materialization of A as an r x d_in matrix.
    pub fn to_dense(&self) -> crate::numerics::Matrix {
        let mut m = crate::numerics::Matrix::zeros(self.r, self.d_in);
        for e in &self.entries {
            m.set(e.row, e.col, f64::from(e.sign));
        }
        m
    }

    /// SHA-256 of the canonical entry list, used to verify that a
    /// checkpoint's regenerated A matches what was trained.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            hasher.update(e.row.to_le_bytes());
            hasher.update(e.col.to_le_bytes());
            hasher.update(e.sign.to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
