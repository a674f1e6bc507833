//! Reconstruction, classification, and combined losses.
//!
//! The probability-form losses below are the reported quantities. Training
//! differentiates in logit space instead (`*_grad_logit*`), which is the same
//! function composed with the sigmoid but immune to clamping artifacts.

use crate::tensor::Tensor;

use super::ModelError;

const CLAMP: f64 = 1e-7;

/// Mean voxelwise binary cross-entropy between a binary target and a
/// prediction in (0,1); predictions are clamped to [1e-7, 1-1e-7].
pub fn reconstruction_loss(s: &Tensor, s_tilde: &Tensor) -> Result<f64, ModelError> {
    if s.dims() != s_tilde.dims() {
        return Err(ModelError::Mismatch(format!(
            "reconstruction loss needs equal shapes, got {:?} vs {:?}",
            s.dims(),
            s_tilde.dims()
        )));
    }
    let n = s.len() as f64;
    let mut total = 0.0;
    for (&t, &p) in s.data().iter().zip(s_tilde.data()) {
        let p = p.clamp(CLAMP, 1.0 - CLAMP);
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    Ok(total / n)
}

/// Gradient of `reconstruction_loss` with respect to the decoder's
/// pre-sigmoid activations: (S~ - S) / N per voxel.
pub fn reconstruction_grad_logits(s: &Tensor, s_tilde: &Tensor) -> Result<Tensor, ModelError> {
    if s.dims() != s_tilde.dims() {
        return Err(ModelError::Mismatch(format!(
            "reconstruction gradient needs equal shapes, got {:?} vs {:?}",
            s.dims(),
            s_tilde.dims()
        )));
    }
    let n = s.len() as f64;
    let mut g = Tensor::zeros(s.dims());
    for ((dst, &t), &p) in g.data_mut().iter_mut().zip(s.data()).zip(s_tilde.data()) {
        *dst = (p - t) / n;
    }
    Ok(g)
}

/// Class-weighted cross-entropy: -[y ln p + eta (1-y) ln(1-p)]. eta balances
/// the normal-class term against the abnormal one.
pub fn classification_loss(y: f64, p: f64, eta: f64) -> Result<f64, ModelError> {
    check_label_and_eta(y, eta)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(ModelError::Mismatch(format!(
            "predicted probability must lie in (0,1), got {p}"
        )));
    }
    Ok(-(y * p.ln() + eta * (1.0 - y) * (1.0 - p).ln()))
}

/// Same loss evaluated from the logit, stable for any finite z:
/// y softplus(-z) + eta (1-y) softplus(z).
pub fn classification_loss_logit(y: f64, z: f64, eta: f64) -> Result<f64, ModelError> {
    check_label_and_eta(y, eta)?;
    Ok(y * softplus(-z) + eta * (1.0 - y) * softplus(z))
}

/// d loss / d logit = (y + eta (1-y)) p - y, with p = sigmoid(z).
pub fn classification_grad_logit(y: f64, p: f64, eta: f64) -> f64 {
    (y + eta * (1.0 - y)) * p - y
}

/// Discriminative auto-encoder objective: L_S + lambda * L_C.
pub fn combined_loss(
    s: &Tensor,
    s_tilde: &Tensor,
    y: f64,
    p: f64,
    eta: f64,
    lambda: f64,
) -> Result<f64, ModelError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(ModelError::InvalidHyper(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    Ok(reconstruction_loss(s, s_tilde)? + lambda * classification_loss(y, p, eta)?)
}

fn check_label_and_eta(y: f64, eta: f64) -> Result<(), ModelError> {
    if y != 0.0 && y != 1.0 {
        return Err(ModelError::Mismatch(format!(
            "label must be 0 or 1, got {y}"
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(ModelError::InvalidHyper(format!(
            "eta must be finite and positive, got {eta}"
        )));
    }
    Ok(())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
