//! Scalar activations and their analytic derivatives.

/// sqrt(2/pi), the tanh-GELU constant.
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

/// Tanh-approximation GELU: 0.5 x (1 + tanh(c (x + 0.044715 x^3))).
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_CUBIC * x * x * x)).tanh())
}

/// Exact derivative of the tanh-approximation GELU.
pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid derivative computed from the forward output y = sigmoid(x).
pub fn sigmoid_grad(y: f64) -> f64 {
    y * (1.0 - y)
}
