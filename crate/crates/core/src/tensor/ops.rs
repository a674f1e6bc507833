//! Elementwise activations and the fully-connected layer.

use super::{dot_slices, expect_axis, Tensor, TensorError};

pub fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.dims().to_vec(), data).expect("shape preserved")
}

/// Gradient through relu, gated by the forward *input*. The subgradient at
/// exactly zero is taken as zero.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor, TensorError> {
    expect_axis("relu_backward", "element", x.len(), grad_out.len())?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.dims().to_vec(), data)
}

/// Branches on sign so the exponent never overflows.
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::new(x.dims().to_vec(), data).expect("shape preserved")
}

/// Gradient through sigmoid, expressed with the forward *output*:
/// d/dv sigma(v) = out * (1 - out).
pub fn sigmoid_backward(out: &Tensor, grad_out: &Tensor) -> Result<Tensor, TensorError> {
    expect_axis("sigmoid_backward", "element", out.len(), grad_out.len())?;
    let data = out
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * y * (1.0 - y))
        .collect();
    Tensor::new(out.dims().to_vec(), data)
}

/// Affine map `W x + b` for a rank-1 `x` of length n and `W` of shape `[m, n]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &[f64]) -> Result<Tensor, TensorError> {
    let (m, n) = match w.dims() {
        [m, n] => (*m, *n),
        other => {
            return Err(TensorError::RankMismatch {
                op: "linear",
                expected: 2,
                got: other.to_vec(),
            })
        }
    };
    expect_axis("linear", "input", n, x.len())?;
    expect_axis("linear", "bias", m, b.len())?;
    let mut out = vec![0.0; m];
    for i in 0..m {
        out[i] = b[i] + dot_slices(&w.data()[i * n..(i + 1) * n], x.data());
    }
    Tensor::new(vec![m], out)
}

/// Gradients of `W x + b`: returns `(d_x, d_w, d_b)`.
pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>), TensorError> {
    let (m, n) = match w.dims() {
        [m, n] => (*m, *n),
        other => {
            return Err(TensorError::RankMismatch {
                op: "linear_backward",
                expected: 2,
                got: other.to_vec(),
            })
        }
    };
    expect_axis("linear_backward", "input", n, x.len())?;
    expect_axis("linear_backward", "output", m, grad_out.len())?;
    let g = grad_out.data();
    let mut d_x = vec![0.0; n];
    let mut d_w = vec![0.0; m * n];
    for i in 0..m {
        let row = &w.data()[i * n..(i + 1) * n];
        let dw_row = &mut d_w[i * n..(i + 1) * n];
        let gi = g[i];
        for j in 0..n {
            d_x[j] += gi * row[j];
            dw_row[j] = gi * x.data()[j];
        }
    }
    Ok((
        Tensor::new(vec![n], d_x)?,
        Tensor::new(vec![m, n], d_w)?,
        g.to_vec(),
    ))
}
