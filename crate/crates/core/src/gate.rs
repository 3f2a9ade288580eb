//! Context-aware neuromodulation gate.
//!
//! Forward: m_x = sigmoid(W2 * GELU(W1 x)) .* gamma + beta.
//! The backward pass is fully analytic and consumes the tape recorded by
//! the forward pass.

use crate::error::{Error, Result};
use crate::numerics::activations::{gelu, gelu_grad, sigmoid, sigmoid_grad};
use crate::numerics::matrix::{hadamard, Matrix};
use crate::numerics::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w1: Matrix,
    pub w2: Matrix,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Intermediates cached by one forward call.
#[derive(Debug, Clone)]
pub struct GateTape {
    pub x: Vec<f64>,
    /// W1 x
    pub pre_gelu: Vec<f64>,
    /// GELU(W1 x)
    pub hidden: Vec<f64>,
    /// sigmoid(W2 hidden)
    pub sig: Vec<f64>,
    pub m: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GateGrads {
    pub w1: Matrix,
    pub w2: Matrix,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub x: Vec<f64>,
}

impl GateParams {
    /// Paper init: gamma = 1, beta = 0, W2 = 0 so the gate output is the
    /// constant 0.5 vector (input-independent) at the start of training;
    /// W1 Gaussian with std 1/sqrt(d_in).
    pub fn init(d_in: usize, d_h: usize, r: usize, rng: &mut Rng) -> Self {
        GateParams {
            w1: Matrix::gaussian(d_h, d_in, 1.0 / (d_in as f64).sqrt(), rng),
            w2: Matrix::zeros(r, d_h),
            gamma: vec![1.0; r],
            beta: vec![0.0; r],
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.cols()
    }

    pub fn d_h(&self) -> usize {
        self.w1.rows()
    }

    pub fn rank(&self) -> usize {
        self.w2.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, GateTape)> {
        if x.len() != self.d_in() {
            return Err(Error::dim(
                "gate_forward",
                format!("input of length {}", self.d_in()),
                format!("length {}", x.len()),
            ));
        }
        let pre_gelu = self.w1.matvec(x)?;
        let hidden: Vec<f64> = pre_gelu.iter().map(|&u| gelu(u)).collect();
        let pre_sig = self.w2.matvec(&hidden)?;
        let sig: Vec<f64> = pre_sig.iter().map(|&z| sigmoid(z)).collect();
        let mut m = hadamard(&sig, &self.gamma)?;
        for (mi, bi) in m.iter_mut().zip(&self.beta) {
            *mi += bi;
        }
        let tape = GateTape {
            x: x.to_vec(),
            pre_gelu,
            hidden,
            sig,
            m: m.clone(),
        };
        Ok((m, tape))
    }

    /// Contract the jacobian of m with `grad_m`, yielding gradients for
    /// every parameter and the input.
    pub fn backward(&self, tape: &GateTape, grad_m: &[f64]) -> Result<GateGrads> {
        let r = self.rank();
        if grad_m.len() != r || tape.sig.len() != r || tape.hidden.len() != self.d_h() {
            return Err(Error::TraceMismatch("gate tape shapes do not match params"));
        }
        // beta is additive; gamma scales the sigmoid output
        let grad_beta = grad_m.to_vec();
        let grad_gamma: Vec<f64> = grad_m.iter().zip(&tape.sig).map(|(g, s)| g * s).collect();
        // through sigmoid
        let grad_pre_sig: Vec<f64> = grad_m
            .iter()
            .zip(&self.gamma)
            .zip(&tape.sig)
            .map(|((g, gam), s)| g * gam * sigmoid_grad(*s))
            .collect();
        // W2 and hidden
        let mut grad_w2 = Matrix::zeros(r, self.d_h());
        grad_w2.add_outer(&grad_pre_sig, &tape.hidden, 1.0);
        let grad_hidden = self.w2.matvec_transpose(&grad_pre_sig)?;
        // through GELU
        let grad_pre_gelu: Vec<f64> = grad_hidden
            .iter()
            .zip(&tape.pre_gelu)
            .map(|(g, u)| g * gelu_grad(*u))
            .collect();
        // W1 and x
        let mut grad_w1 = Matrix::zeros(self.d_h(), self.d_in());
        grad_w1.add_outer(&grad_pre_gelu, &tape.x, 1.0);
        let grad_x = self.w1.matvec_transpose(&grad_pre_gelu)?;
        Ok(GateGrads {
            w1: grad_w1,
            w2: grad_w2,
            gamma: grad_gamma,
            beta: grad_beta,
            x: grad_x,
        })
    }
}
