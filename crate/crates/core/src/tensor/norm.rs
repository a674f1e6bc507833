//! Batch normalization over the channel axis.
//!
//! Batch size is 1 throughout the project, so train-mode statistics are the
//! per-channel moments over the sample's own non-channel positions. Running
//! statistics decay with `momentum` (the fresh moment is weighted
//! `1 - momentum`) and are the only statistics consulted in infer mode.
//! Variance is the biased (1/N) moment both in the normalizer and in the
//! running update.

use super::{expect_axis, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.9,
            epsilon: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self, op: &'static str) -> Result<(), TensorError> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(TensorError::InvalidSpec {
                op,
                reason: "per-channel arrays disagree on channel count".into(),
            });
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) || !(self.epsilon > 0.0) {
            return Err(TensorError::InvalidSpec {
                op,
                reason: format!(
                    "momentum must lie in (0,1) and epsilon above 0 \
                     (momentum={}, epsilon={})",
                    self.momentum, self.epsilon
                ),
            });
        }
        if self.running_var.iter().any(|&v| v < 0.0) {
            return Err(TensorError::InvalidSpec {
                op,
                reason: "negative running variance".into(),
            });
        }
        Ok(())
    }
}

/// What the train-mode backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    channels: usize,
    spatial: usize,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Normalize `x` (channel axis first). Train mode uses the sample's own
/// statistics and folds them into the running estimates; infer mode reads the
/// running estimates and leaves `state` untouched. The cache is `Some` only
/// in train mode.
/// Inference-time normalization from running statistics. Never mutates the
/// state, so parameter sets can stay shared across threads.
pub fn batchnorm_infer(x: &Tensor, state: &BatchNormState) -> Result<Tensor, TensorError> {
    state.validate("batchnorm")?;
    if x.dims().is_empty() {
        return Err(TensorError::InvalidSpec {
            op: "batchnorm",
            reason: "input has no channel axis".into(),
        });
    }
    let channels = x.dims()[0];
    expect_axis("batchnorm", "channel", state.channels(), channels)?;
    let spatial = x.len() / channels;
    let mut out = Tensor::zeros(x.dims());
    for c in 0..channels {
        let scale = state.gamma[c] / (state.running_var[c] + state.epsilon).sqrt();
        let shift = state.beta[c] - scale * state.running_mean[c];
        let src = &x.data()[c * spatial..(c + 1) * spatial];
        let dst = &mut out.data_mut()[c * spatial..(c + 1) * spatial];
        for j in 0..spatial {
            dst[j] = scale * src[j] + shift;
        }
    }
    Ok(out)
}

pub fn batchnorm_forward(
    x: &Tensor,
    state: &mut BatchNormState,
    mode: Mode,
) -> Result<(Tensor, Option<BnCache>), TensorError> {
    state.validate("batchnorm")?;
    if x.dims().is_empty() {
        return Err(TensorError::InvalidSpec {
            op: "batchnorm",
            reason: "input has no channel axis".into(),
        });
    }
    let channels = x.dims()[0];
    expect_axis("batchnorm", "channel", state.channels(), channels)?;
    let spatial = x.len() / channels;
    match mode {
        Mode::Infer => Ok((batchnorm_infer(x, state)?, None)),
        Mode::Train => {
            let mut out = Tensor::zeros(x.dims());
            let mut cache = BnCache {
                channels,
                spatial,
                x_hat: vec![0.0; x.len()],
                inv_std: vec![0.0; channels],
            };
            for c in 0..channels {
                let src = &x.data()[c * spatial..(c + 1) * spatial];
                let mean = src.iter().sum::<f64>() / spatial as f64;
                let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / spatial as f64;
                let inv_std = 1.0 / (var + state.epsilon).sqrt();
                cache.inv_std[c] = inv_std;
                let xh = &mut cache.x_hat[c * spatial..(c + 1) * spatial];
                let dst = &mut out.data_mut()[c * spatial..(c + 1) * spatial];
                let (g, b) = (state.gamma[c], state.beta[c]);
                for j in 0..spatial {
                    let h = (src[j] - mean) * inv_std;
                    xh[j] = h;
                    dst[j] = g * h + b;
                }
                state.running_mean[c] =
                    state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mean;
                state.running_var[c] =
                    state.momentum * state.running_var[c] + (1.0 - state.momentum) * var;
            }
            Ok((out, Some(cache)))
        }
    }
}

/// Train-mode gradients: `(d_x, d_gamma, d_beta)`. Differentiates through the
/// sample statistics, so per channel the returned d_x has zero mean and zero
/// projection onto x_hat.
pub fn batchnorm_backward(
    cache: &BnCache,
    state: &BatchNormState,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>), TensorError> {
    let (channels, spatial) = (cache.channels, cache.spatial);
    if grad_out.len() != channels * spatial || grad_out.dims()[0] != channels {
        return Err(TensorError::AxisMismatch {
            op: "batchnorm_backward",
            axis: "channel",
            expected: channels,
            got: grad_out.dims()[0],
        });
    }
    let n = spatial as f64;
    let mut d_x = Tensor::zeros(grad_out.dims());
    let mut d_gamma = vec![0.0; channels];
    let mut d_beta = vec![0.0; channels];
    for c in 0..channels {
        let g = &grad_out.data()[c * spatial..(c + 1) * spatial];
        let xh = &cache.x_hat[c * spatial..(c + 1) * spatial];
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for j in 0..spatial {
            sum_g += g[j];
            sum_gx += g[j] * xh[j];
        }
        d_beta[c] = sum_g;
        d_gamma[c] = sum_gx;
        let k = state.gamma[c] * cache.inv_std[c] / n;
        let dst = &mut d_x.data_mut()[c * spatial..(c + 1) * spatial];
        for j in 0..spatial {
            dst[j] = k * (n * g[j] - sum_g - xh[j] * sum_gx);
        }
    }
    Ok((d_x, d_gamma, d_beta))
}
