//! Dense tensor arithmetic and differentiable layer primitives.
//!
//! All math runs on 64-bit reals in row-major order. Network activations use
//! the layout `[channels, depth, height, width]` with an implicit batch of
//! one. Every operation is a pure function of its inputs: repeated calls give
//! bitwise-identical results, and internal loops use fixed reduction orders.

mod conv;
mod norm;
mod ops;
mod optim;

pub use conv::{conv3d_backward, conv3d_forward, deconv3d_backward, deconv3d_forward};
pub use norm::{batchnorm_backward, batchnorm_forward, batchnorm_infer, BatchNormState, BnCache, Mode};
pub use ops::{
    linear_backward, linear_forward, relu_backward, relu_forward, sigmoid_backward,
    sigmoid_forward, sigmoid_scalar,
};
pub use optim::{sgd_step_slice, OptState};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("data length {got} does not match shape {dims:?} (expected {expected})")]
    DataLength {
        dims: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: {axis} axis mismatch (expected {expected}, got {got})")]
    AxisMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: rank mismatch (expected {expected} dims, got {got:?})")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    InvalidSpec { op: &'static str, reason: String },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
}

/// Dense N-dimensional array of 64-bit reals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and flat row-major data.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = dims.iter().product();
        if dims.iter().any(|&d| d == 0) || expected != data.len() {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
                dims,
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    /// Fill from a seeded stream, uniform in `[-bound, bound)`.
    pub fn uniform(dims: &[usize], bound: f64, rng: &mut crate::rng::SeededRng) -> Self {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshape(mut self, dims: Vec<usize>) -> Result<Self, TensorError> {
        let expected: usize = dims.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::DataLength {
                expected,
                got: self.data.len(),
                dims,
            });
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Inner product of two equally-sized tensors (fixed summation order).
    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        dot_slices(&self.data, &other.data)
    }
}

/// Dot product with a fixed 8-lane accumulation order; deterministic and
/// vectorizer-friendly.
pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let pa = &a[i * 8..i * 8 + 8];
        let pb = &b[i * 8..i * 8 + 8];
        for l in 0..8 {
            lanes[l] = pa[l].mul_add(pb[l], lanes[l]);
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail = a[i].mul_add(b[i], tail);
    }
    let head = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    head + tail
}

/// Geometry of a (possibly strided, zero-padded) 3D convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: usize,
    pub padding: usize,
}

pub(crate) const SPATIAL_AXES: [&str; 3] = ["depth", "height", "width"];

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: usize,
        padding: usize,
    ) -> Result<Self, TensorError> {
        if in_channels == 0 || out_channels == 0 || stride == 0 || kernel.contains(&0) {
            return Err(TensorError::InvalidSpec {
                op: "ConvSpec",
                reason: format!(
                    "channels, stride and kernel must be positive \
                     (in={in_channels}, out={out_channels}, kernel={kernel:?}, stride={stride})"
                ),
            });
        }
        Ok(ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    /// Direct-convolution output size: `floor((in + 2p - k)/s) + 1`, which
    /// must be at least 1 on every axis.
    pub fn output_spatial(&self, input: [usize; 3]) -> Result<[usize; 3], TensorError> {
        let mut out = [0usize; 3];
        for axis in 0..3 {
            let padded = input[axis] + 2 * self.padding;
            if padded < self.kernel[axis] {
                return Err(TensorError::InvalidSpec {
                    op: "conv3d",
                    reason: format!(
                        "{} axis too small: input {} + 2*{} padding < kernel {}",
                        SPATIAL_AXES[axis], input[axis], self.padding, self.kernel[axis]
                    ),
                });
            }
            out[axis] = (padded - self.kernel[axis]) / self.stride + 1;
        }
        Ok(out)
    }

    /// Transposed-convolution output size: `(in - 1)*s + k - 2p`.
    pub fn deconv_output_spatial(&self, input: [usize; 3]) -> Result<[usize; 3], TensorError> {
        let mut out = [0usize; 3];
        for axis in 0..3 {
            if input[axis] == 0 {
                return Err(TensorError::InvalidSpec {
                    op: "deconv3d",
                    reason: format!("{} axis has zero extent", SPATIAL_AXES[axis]),
                });
            }
            let grown = (input[axis] - 1) * self.stride + self.kernel[axis];
            if grown <= 2 * self.padding {
                return Err(TensorError::InvalidSpec {
                    op: "deconv3d",
                    reason: format!("{} axis collapses under padding", SPATIAL_AXES[axis]),
                });
            }
            out[axis] = grown - 2 * self.padding;
        }
        Ok(out)
    }

    /// Shape of a convolution weight bank: `[out, in, kd, kh, kw]`.
    pub fn conv_weight_dims(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
        ]
    }

    /// Shape of a transposed-convolution weight bank: `[in, out, kd, kh, kw]`.
    /// Sharing the conv layout, a deconv with weights `w` is the exact adjoint
    /// of the conv with the same `w` mapping the opposite direction.
    pub fn deconv_weight_dims(&self) -> Vec<usize> {
        vec![
            self.in_channels,
            self.out_channels,
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
        ]
    }
}

pub(crate) fn expect_rank4(
    op: &'static str,
    t: &Tensor,
) -> Result<(usize, [usize; 3]), TensorError> {
    match t.dims() {
        [c, d, h, w] => Ok((*c, [*d, *h, *w])),
        other => Err(TensorError::RankMismatch {
            op,
            expected: 4,
            got: other.to_vec(),
        }),
    }
}

pub(crate) fn expect_axis(
    op: &'static str,
    axis: &'static str,
    expected: usize,
    got: usize,
) -> Result<(), TensorError> {
    if expected != got {
        return Err(TensorError::AxisMismatch {
            op,
            axis,
            expected,
            got,
        });
    }
    Ok(())
}
