//! Pointwise loss functions with first and second derivatives in the linear
//! predictor.

use serde::{Deserialize, Serialize};

/// Supported losses: squared error `L(y, mu) = (y - mu)^2 / 2` and logistic
/// deviance `L(y, mu) = log(1 + e^mu) - y*mu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Logistic,
}

/// Numerically stable sigmoid.
pub fn sigmoid(mu: f64) -> f64 {
    if mu >= 0.0 {
        1.0 / (1.0 + (-mu).exp())
    } else {
        let e = mu.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^mu)` without overflow for large `mu`.
fn log1p_exp(mu: f64) -> f64 {
    mu.max(0.0) + (-mu.abs()).exp().ln_1p()
}

pub fn loss_value(kind: LossKind, y: f64, mu: f64) -> f64 {
    match kind {
        LossKind::Squared => 0.5 * (y - mu) * (y - mu),
        LossKind::Logistic => log1p_exp(mu) - y * mu,
    }
}

/// dL/dmu. Squared: `mu - y`; logistic: `sigmoid(mu) - y`.
pub fn loss_grad(kind: LossKind, y: f64, mu: f64) -> f64 {
    match kind {
        LossKind::Squared => mu - y,
        LossKind::Logistic => sigmoid(mu) - y,
    }
}

/// d2L/dmu2. Squared: 1; logistic: `sigmoid(mu) * (1 - sigmoid(mu))`.
pub fn loss_hess(kind: LossKind, y: f64, mu: f64) -> f64 {
    let _ = y;
    match kind {
        LossKind::Squared => 1.0,
        LossKind::Logistic => {
            let s = sigmoid(mu);
            s * (1.0 - s)
        }
    }
}
