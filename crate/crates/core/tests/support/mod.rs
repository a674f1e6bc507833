//! Shared reference implementations for the oracle suites: naive loops kept
//! deliberately independent of the production kernels.

#![allow(dead_code)]

use voxshape::tensor::{ConvSpec, Tensor};

/// Direct seven-loop convolution; no blocking, no fusion, no reuse.
pub fn conv3d_oracle(input: &Tensor, weights: &Tensor, bias: &[f64], spec: &ConvSpec) -> Tensor {
    let in_sp = [input.dims()[1], input.dims()[2], input.dims()[3]];
    let out_sp = spec.output_spatial(in_sp).expect("valid spec");
    let (ci_n, co_n) = (spec.in_channels, spec.out_channels);
    let k = spec.kernel;
    let (s, p) = (spec.stride as isize, spec.padding as isize);
    let mut out = Tensor::zeros(&[co_n, out_sp[0], out_sp[1], out_sp[2]]);
    for co in 0..co_n {
        for oz in 0..out_sp[0] {
            for oy in 0..out_sp[1] {
                for ox in 0..out_sp[2] {
                    let mut acc = bias[co];
                    for ci in 0..ci_n {
                        for kd in 0..k[0] {
                            for kh in 0..k[1] {
                                for kw in 0..k[2] {
                                    let iz = oz as isize * s + kd as isize - p;
                                    let iy = oy as isize * s + kh as isize - p;
                                    let ix = ox as isize * s + kw as isize - p;
                                    if iz < 0
                                        || iy < 0
                                        || ix < 0
                                        || iz >= in_sp[0] as isize
                                        || iy >= in_sp[1] as isize
                                        || ix >= in_sp[2] as isize
                                    {
                                        continue;
                                    }
                                    let iv = input.data()[((ci * in_sp[0] + iz as usize)
                                        * in_sp[1]
                                        + iy as usize)
                                        * in_sp[2]
                                        + ix as usize];
                                    let wv = weights.data()[(((co * ci_n + ci) * k[0] + kd)
                                        * k[1]
                                        + kh)
                                        * k[2]
                                        + kw];
                                    acc += iv * wv;
                                }
                            }
                        }
                    }
                    let oi = ((co * out_sp[0] + oz) * out_sp[1] + oy) * out_sp[2] + ox;
                    out.data_mut()[oi] = acc;
                }
            }
        }
    }
    out
}

/// Direct scatter transposed convolution.
pub fn deconv3d_oracle(input: &Tensor, weights: &Tensor, bias: &[f64], spec: &ConvSpec) -> Tensor {
    let in_sp = [input.dims()[1], input.dims()[2], input.dims()[3]];
    let out_sp = spec.deconv_output_spatial(in_sp).expect("valid spec");
    let (ci_n, co_n) = (spec.in_channels, spec.out_channels);
    let k = spec.kernel;
    let (s, p) = (spec.stride as isize, spec.padding as isize);
    let mut out = Tensor::zeros(&[co_n, out_sp[0], out_sp[1], out_sp[2]]);
    for co in 0..co_n {
        for v in out.data_mut()[co * out_sp[0] * out_sp[1] * out_sp[2]
            ..(co + 1) * out_sp[0] * out_sp[1] * out_sp[2]]
            .iter_mut()
        {
            *v = bias[co];
        }
    }
    for ci in 0..ci_n {
        for iz in 0..in_sp[0] {
            for iy in 0..in_sp[1] {
                for ix in 0..in_sp[2] {
                    let iv = input.data()[((ci * in_sp[0] + iz) * in_sp[1] + iy) * in_sp[2] + ix];
                    for co in 0..co_n {
                        for kd in 0..k[0] {
                            for kh in 0..k[1] {
                                for kw in 0..k[2] {
                                    let oz = iz as isize * s + kd as isize - p;
                                    let oy = iy as isize * s + kh as isize - p;
                                    let ox = ix as isize * s + kw as isize - p;
                                    if oz < 0
                                        || oy < 0
                                        || ox < 0
                                        || oz >= out_sp[0] as isize
                                        || oy >= out_sp[1] as isize
                                        || ox >= out_sp[2] as isize
                                    {
                                        continue;
                                    }
                                    let wv = weights.data()[(((ci * co_n + co) * k[0] + kd)
                                        * k[1]
                                        + kh)
                                        * k[2]
                                        + kw];
                                    let oi = ((co * out_sp[0] + oz as usize) * out_sp[1]
                                        + oy as usize)
                                        * out_sp[2]
                                        + ox as usize;
                                    out.data_mut()[oi] += iv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Relative error with a unit floor, so near-zero pairs compare absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
