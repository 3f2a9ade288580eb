//! Training-free adapter combination: Task Arithmetic, TIES-Merging, and
//! gate averaging.
//!
//! Task vectors are B deltas (trained B minus its init), so merging never
//! sums multiple copies of the random init. All adapters in a merge must
//! share the same frozen projection and base map.

use crate::adapter::AdapterState;
use crate::error::{Error, Result};
use crate::gate::GateParams;
use crate::numerics::matrix::{axpy, dot, Matrix};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMethod {
    TaskArithmetic,
    Ties,
}

impl std::str::FromStr for MergeMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task_arithmetic" => Ok(MergeMethod::TaskArithmetic),
            "ties" => Ok(MergeMethod::Ties),
            other => Err(Error::InvalidParameter(format!(
                "unknown merge method '{other}' (expected task_arithmetic or ties)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeRecipe {
    pub method: MergeMethod,
    /// Coefficient applied to the combined task vector.
    pub scaling: f64,
    /// TIES keep-ratio: fraction of entries kept per task delta.
    pub trim_fraction: f64,
}

impl MergeRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.scaling <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "merge scaling must be positive, got {}",
                self.scaling
            )));
        }
        if !(self.trim_fraction > 0.0 && self.trim_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "trim fraction must lie in (0, 1], got {}",
                self.trim_fraction
            )));
        }
        Ok(())
    }
}

fn check_compatible(adapters: &[&AdapterState]) -> Result<()> {
    if adapters.is_empty() {
        return Err(Error::EmptyInput("merge needs at least one adapter"));
    }
    let first = adapters[0];
    for (i, a) in adapters.iter().enumerate().skip(1) {
        if a.projection.seed() != first.projection.seed()
            || a.projection.rho() != first.projection.rho()
            || a.projection.rank() != first.projection.rank()
            || a.projection.d_in() != first.projection.d_in()
        {
            return Err(Error::Incompatible(format!(
                "adapter {i} has projection (seed={}, rho={}, r={}, d_in={}) but adapter 0 has (seed={}, rho={}, r={}, d_in={}); merging across different frozen projections is undefined",
                a.projection.seed(),
                a.projection.rho(),
                a.projection.rank(),
                a.projection.d_in(),
                first.projection.seed(),
                first.projection.rho(),
                first.projection.rank(),
                first.projection.d_in(),
            )));
        }
        if a.config != first.config {
            return Err(Error::Incompatible(format!(
                "adapter {i} config differs from adapter 0"
            )));
        }
        if a.w0 != first.w0 {
            return Err(Error::Incompatible(format!(
                "adapter {i} has a different frozen base map"
            )));
        }
    }
    Ok(())
}

/// Elementwise mean of the gate parameter sets.
fn average_gates(adapters: &[&AdapterState]) -> Option<GateParams> {
    let gates: Vec<&GateParams> = adapters.iter().filter_map(|a| a.gate.as_ref()).collect();
    if gates.len() != adapters.len() {
        return None;
    }
    let inv = 1.0 / gates.len() as f64;
    let mut w1 = Matrix::zeros(gates[0].w1.rows(), gates[0].w1.cols());
    let mut w2 = Matrix::zeros(gates[0].w2.rows(), gates[0].w2.cols());
    let r = gates[0].gamma.len();
    let mut gamma = vec![0.0; r];
    let mut beta = vec![0.0; r];
    for g in &gates {
        w1.add_scaled(&g.w1, inv);
        w2.add_scaled(&g.w2, inv);
        axpy(&mut gamma, inv, &g.gamma);
        axpy(&mut beta, inv, &g.beta);
    }
    Some(GateParams {
        w1,
        w2,
        gamma,
        beta,
    })
}

fn average_static_m(adapters: &[&AdapterState]) -> Option<Vec<f64>> {
    let ms: Vec<&Vec<f64>> = adapters.iter().filter_map(|a| a.static_m.as_ref()).collect();
    if ms.len() != adapters.len() {
        return None;
    }
    let inv = 1.0 / ms.len() as f64;
    let mut out = vec![0.0; ms[0].len()];
    for m in &ms {
        axpy(&mut out, inv, m);
    }
    Some(out)
}

fn mean_b_init(adapters: &[&AdapterState]) -> Matrix {
    let inv = 1.0 / adapters.len() as f64;
    let mut out = Matrix::zeros(adapters[0].b_init.rows(), adapters[0].b_init.cols());
    for a in adapters {
        out.add_scaled(&a.b_init, inv);
    }
    out
}

fn assemble(base: &AdapterState, adapters: &[&AdapterState], merged_b: Matrix) -> AdapterState {
    let mut out = base.clone();
    out.b = merged_b;
    out.b_init = mean_b_init(adapters);
    out.gate = average_gates(adapters);
    out.static_m = average_static_m(adapters);
    out
}

/// merged B = mean(B_init) + scaling * sum of (B_t - B_init_t); gate
/// parameters are averaged elementwise.
pub fn merge_task_arithmetic(adapters: &[&AdapterState], scaling: f64) -> Result<AdapterState> {
    check_compatible(adapters)?;
    let mut delta = Matrix::zeros(adapters[0].b.rows(), adapters[0].b.cols());
    for a in adapters {
        delta.add_scaled(&a.b_delta(), 1.0);
    }
    let mut merged = mean_b_init(adapters);
    merged.add_scaled(&delta, scaling);
    Ok(assemble(adapters[0], adapters, merged))
}

/// Trim each delta to its top `trim_fraction` entries by magnitude.
pub(crate) fn ties_trim(delta: &Matrix, trim_fraction: f64) -> Matrix {
    let n = delta.data().len();
    let keep = ((trim_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        delta.data()[b]
            .abs()
            .partial_cmp(&delta.data()[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut out = Matrix::zeros(delta.rows(), delta.cols());
    for &i in &idx[..keep] {
        out.data_mut()[i] = delta.data()[i];
    }
    out
}

/// TIES: trim, elect sign by summed magnitude, disjoint mean over entries
/// agreeing with the elected sign. Sign ties elect positive.
pub fn merge_ties(adapters: &[&AdapterState], recipe: &MergeRecipe) -> Result<AdapterState> {
    check_compatible(adapters)?;
    let trimmed: Vec<Matrix> = adapters
        .iter()
        .map(|a| ties_trim(&a.b_delta(), recipe.trim_fraction))
        .collect();
    let rows = trimmed[0].rows();
    let cols = trimmed[0].cols();
    let mut merged_delta = Matrix::zeros(rows, cols);
    for i in 0..rows * cols {
        let mut pos = 0.0;
        let mut neg = 0.0;
        for t in &trimmed {
            let v = t.data()[i];
            if v > 0.0 {
                pos += v;
            } else {
                neg += -v;
            }
        }
        let elected_positive = pos >= neg;
        let mut sum = 0.0;
        let mut count = 0usize;
        for t in &trimmed {
            let v = t.data()[i];
            if v == 0.0 {
                continue;
            }
            if (v > 0.0) == elected_positive {
                sum += v;
                count += 1;
            }
        }
        if count > 0 {
            merged_delta.data_mut()[i] = sum / count as f64;
        }
    }
    let mut merged = mean_b_init(adapters);
    merged.add_scaled(&merged_delta, recipe.scaling);
    Ok(assemble(adapters[0], adapters, merged))
}

pub fn merge(adapters: &[&AdapterState], recipe: &MergeRecipe) -> Result<AdapterState> {
    recipe.validate()?;
    match recipe.method {
        MergeMethod::TaskArithmetic => merge_task_arithmetic(adapters, recipe.scaling),
        MergeMethod::Ties => merge_ties(adapters, recipe),
    }
}

/// Pairwise mean squared cosine between expert columns across adapters.
/// Self pairs exclude the column paired with itself.
pub fn subspace_overlap_report(adapters: &[&AdapterState]) -> Result<Matrix> {
    if adapters.is_empty() {
        return Err(Error::EmptyInput("overlap report needs adapters"));
    }
    let t = adapters.len();
    let mut out = Matrix::zeros(t, t);
    for a in 0..t {
        for b in 0..t {
            let ba = &adapters[a].b;
            let bb = &adapters[b].b;
            let mut total = 0.0;
            let mut count = 0usize;
            for i in 0..ba.cols() {
                let ci = ba.column(i);
                let ni = dot(&ci, &ci).sqrt();
                for j in 0..bb.cols() {
                    if a == b && i == j {
                        continue;
                    }
                    let cj = bb.column(j);
                    let nj = dot(&cj, &cj).sqrt();
                    if ni == 0.0 || nj == 0.0 {
                        continue;
                    }
                    let c = dot(&ci, &cj) / (ni * nj);
                    total += c * c;
                    count += 1;
                }
            }
            out.set(a, b, if count == 0 { 0.0 } else { total / count as f64 });
        }
    }
    Ok(out)
}
