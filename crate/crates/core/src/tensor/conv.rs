//! Direct-summation 3D convolution, its transpose, and their gradients.
//!
//! One index convention covers all four maps. Call the conv-output / deconv-
//! input grid "coarse" and the conv-input / deconv-output grid "fine"; coarse
//! voxel `j` touches fine voxel `j*stride + k - padding` for kernel tap `k`.
//! Weight banks always carry the coarse-side channel first: conv weights are
//! `[c_out, c_in, kd, kh, kw]`, deconv weights `[c_in, c_out, kd, kh, kw]`.
//! A deconv with a given weight bank is therefore the exact linear adjoint of
//! the conv with the same bank, and every map below is one of three kernels
//! (gather, scatter, tap correlation) with roles swapped. All loops run in a
//! fixed order, so results are bitwise reproducible.

use super::{expect_axis, expect_rank4, ConvSpec, Tensor, TensorError, SPATIAL_AXES};

struct Geometry {
    kernel: [usize; 3],
    stride: usize,
    padding: isize,
    coarse: [usize; 3],
    fine: [usize; 3],
}

impl Geometry {
    fn taps(&self) -> usize {
        self.kernel[0] * self.kernel[1] * self.kernel[2]
    }
}

/// Three-tap FIR row update for the size-preserving stride-1 case:
/// out[j] += a*in[j-1] + b*in[j] + c*in[j+1], ends zero-padded. Fusing the
/// taps into one pass keeps the row read-modify-write traffic at one third of
/// the generic per-tap path; loop order stays fixed, so still deterministic.
fn fir3_accum(out_row: &mut [f64], in_row: &[f64], a: f64, b: f64, c: f64) {
    let n = out_row.len();
    debug_assert_eq!(n, in_row.len());
    if n == 1 {
        out_row[0] = b.mul_add(in_row[0], out_row[0]);
        return;
    }
    out_row[0] = c.mul_add(in_row[1], b.mul_add(in_row[0], out_row[0]));
    out_row[n - 1] = b.mul_add(in_row[n - 1], a.mul_add(in_row[n - 2], out_row[n - 1]));
    // Equal-length windows so the interior loop vectorizes without bounds
    // checks; mul_add has exact single-rounding semantics on every platform,
    // so the fused form is still bitwise reproducible.
    let m = n - 2;
    let dst = &mut out_row[1..1 + m];
    let s0 = &in_row[..m];
    let s1 = &in_row[1..1 + m];
    let s2 = &in_row[2..2 + m];
    for j in 0..m {
        dst[j] = c.mul_add(s2[j], b.mul_add(s1[j], a.mul_add(s0[j], dst[j])));
    }
}

/// Half-open range of coarse indices `j` with `0 <= j*stride + off < fine_len`,
/// clipped to `[0, coarse_len)`. Empty ranges come back as `(0, 0)`.
fn coarse_span(coarse_len: usize, fine_len: usize, stride: usize, off: isize) -> (usize, usize) {
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let top = fine_len as isize - off;
    if top <= 0 {
        return (0, 0);
    }
    let hi = (((top - 1) as usize) / stride + 1).min(coarse_len);
    if lo >= hi {
        (0, 0)
    } else {
        (lo, hi)
    }
}

/// coarse[cc, j] = bias[cc] + sum over cf, taps of w[cc, cf, tap] * fine[cf, j*s + tap - p].
fn gather(
    fine: &[f64],
    c_fine: usize,
    w: &[f64],
    bias: Option<&[f64]>,
    coarse_out: &mut [f64],
    c_coarse: usize,
    g: &Geometry,
) {
    let [od_n, oh_n, ow_n] = g.coarse;
    let [fd, fh, fw] = g.fine;
    let [k0, k1, k2] = g.kernel;
    let (s, p) = (g.stride, g.padding);
    let taps = g.taps();
    for cc in 0..c_coarse {
        let b = bias.map_or(0.0, |b| b[cc]);
        for od in 0..od_n {
            for oh in 0..oh_n {
                let out_row = &mut coarse_out[((cc * od_n + od) * oh_n + oh) * ow_n..][..ow_n];
                out_row.fill(b);
                for cf in 0..c_fine {
                    let w_chan = &w[(cc * c_fine + cf) * taps..][..taps];
                    let fine_chan = &fine[cf * fd * fh * fw..][..fd * fh * fw];
                    for kd in 0..k0 {
                        let id = od as isize * s as isize + kd as isize - p;
                        if id < 0 || id >= fd as isize {
                            continue;
                        }
                        for kh in 0..k1 {
                            let ih = oh as isize * s as isize + kh as isize - p;
                            if ih < 0 || ih >= fh as isize {
                                continue;
                            }
                            let fine_row = &fine_chan[(id as usize * fh + ih as usize) * fw..][..fw];
                            let w_row = &w_chan[(kd * k1 + kh) * k2..][..k2];
                            if s == 1 && p == 1 && k2 == 3 {
                                fir3_accum(out_row, fine_row, w_row[0], w_row[1], w_row[2]);
                                continue;
                            }
                            for (kw, &wv) in w_row.iter().enumerate() {
                                let off = kw as isize - p;
                                let (lo, hi) = coarse_span(ow_n, fw, s, off);
                                if lo >= hi {
                                    continue;
                                }
                                if s == 1 {
                                    let src = &fine_row[(lo as isize + off) as usize..][..hi - lo];
                                    let dst = &mut out_row[lo..hi];
                                    for j in 0..dst.len() {
                                        dst[j] = wv.mul_add(src[j], dst[j]);
                                    }
                                } else {
                                    for ow in lo..hi {
                                        let iw = (ow as isize * s as isize + off) as usize;
                                        out_row[ow] = wv.mul_add(fine_row[iw], out_row[ow]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// fine[cf, j*s + tap - p] += w[cc, cf, tap] * coarse[cc, j]; dst starts at bias.
fn scatter(
    coarse: &[f64],
    c_coarse: usize,
    w: &[f64],
    bias: Option<&[f64]>,
    fine_out: &mut [f64],
    c_fine: usize,
    g: &Geometry,
) {
    let [sd_n, sh_n, sw_n] = g.coarse;
    let [fd, fh, fw] = g.fine;
    let [k0, k1, k2] = g.kernel;
    let (s, p) = (g.stride, g.padding);
    let taps = g.taps();
    for cf in 0..c_fine {
        let b = bias.map_or(0.0, |b| b[cf]);
        fine_out[cf * fd * fh * fw..][..fd * fh * fw].fill(b);
    }
    for cf in 0..c_fine {
        let fine_chan = &mut fine_out[cf * fd * fh * fw..][..fd * fh * fw];
        for cc in 0..c_coarse {
            let w_chan = &w[(cc * c_fine + cf) * taps..][..taps];
            for sd in 0..sd_n {
                for sh in 0..sh_n {
                    let src_row = &coarse[((cc * sd_n + sd) * sh_n + sh) * sw_n..][..sw_n];
                    for kd in 0..k0 {
                        let id = sd as isize * s as isize + kd as isize - p;
                        if id < 0 || id >= fd as isize {
                            continue;
                        }
                        for kh in 0..k1 {
                            let ih = sh as isize * s as isize + kh as isize - p;
                            if ih < 0 || ih >= fh as isize {
                                continue;
                            }
                            let fine_row =
                                &mut fine_chan[(id as usize * fh + ih as usize) * fw..][..fw];
                            let w_row = &w_chan[(kd * k1 + kh) * k2..][..k2];
                            if s == 1 && p == 1 && k2 == 3 {
                                // dst[x] gathers src[x+1-kw]: taps reversed.
                                fir3_accum(fine_row, src_row, w_row[2], w_row[1], w_row[0]);
                                continue;
                            }
                            for (kw, &wv) in w_row.iter().enumerate() {
                                let off = kw as isize - p;
                                let (lo, hi) = coarse_span(sw_n, fw, s, off);
                                if lo >= hi {
                                    continue;
                                }
                                if s == 1 {
                                    let dst =
                                        &mut fine_row[(lo as isize + off) as usize..][..hi - lo];
                                    let src = &src_row[lo..hi];
                                    for j in 0..dst.len() {
                                        dst[j] = wv.mul_add(src[j], dst[j]);
                                    }
                                } else {
                                    for sw in lo..hi {
                                        let iw = (sw as isize * s as isize + off) as usize;
                                        fine_row[iw] = wv.mul_add(src_row[sw], fine_row[iw]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulate elementwise products into eight persistent lanes (element i
/// always feeds lane i mod 8), deferring the horizontal reduction to the
/// caller. Keeping lanes alive across many short rows avoids paying a
/// reduction tree per row.
fn dot_into_lanes(a: &[f64], b: &[f64], lanes: &mut [f64; 8]) {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let pa = &a[i * 8..i * 8 + 8];
        let pb = &b[i * 8..i * 8 + 8];
        for l in 0..8 {
            lanes[l] = pa[l].mul_add(pb[l], lanes[l]);
        }
    }
    for i in chunks * 8..a.len() {
        lanes[i % 8] = a[i].mul_add(b[i], lanes[i % 8]);
    }
}

fn reduce_lanes(lanes: &[f64; 8]) -> f64 {
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
}

/// gw[cc, cf, tap] = sum over j of coarse[cc, j] * fine[cf, j*s + tap - p].
fn tap_correlation(
    coarse: &[f64],
    c_coarse: usize,
    fine: &[f64],
    c_fine: usize,
    gw_out: &mut [f64],
    g: &Geometry,
) {
    let [sd_n, sh_n, sw_n] = g.coarse;
    let [fd, fh, fw] = g.fine;
    let [k0, k1, k2] = g.kernel;
    let (s, p) = (g.stride, g.padding);
    let taps = g.taps();
    let mut lanes = vec![[0.0f64; 8]; taps];
    for cc in 0..c_coarse {
        for cf in 0..c_fine {
            for l in lanes.iter_mut() {
                *l = [0.0; 8];
            }
            let fine_chan = &fine[cf * fd * fh * fw..][..fd * fh * fw];
            for sd in 0..sd_n {
                for sh in 0..sh_n {
                    let coarse_row = &coarse[((cc * sd_n + sd) * sh_n + sh) * sw_n..][..sw_n];
                    for kd in 0..k0 {
                        let id = sd as isize * s as isize + kd as isize - p;
                        if id < 0 || id >= fd as isize {
                            continue;
                        }
                        for kh in 0..k1 {
                            let ih = sh as isize * s as isize + kh as isize - p;
                            if ih < 0 || ih >= fh as isize {
                                continue;
                            }
                            let fine_row =
                                &fine_chan[(id as usize * fh + ih as usize) * fw..][..fw];
                            let tap_base = (kd * k1 + kh) * k2;
                            if s == 1 && p == 1 && k2 == 3 {
                                let n = sw_n;
                                if n > 1 {
                                    dot_into_lanes(
                                        &coarse_row[1..],
                                        &fine_row[..n - 1],
                                        &mut lanes[tap_base],
                                    );
                                    dot_into_lanes(
                                        &coarse_row[..n - 1],
                                        &fine_row[1..],
                                        &mut lanes[tap_base + 2],
                                    );
                                }
                                dot_into_lanes(coarse_row, fine_row, &mut lanes[tap_base + 1]);
                                continue;
                            }
                            for kw in 0..k2 {
                                let off = kw as isize - p;
                                let (lo, hi) = coarse_span(sw_n, fw, s, off);
                                if lo >= hi {
                                    continue;
                                }
                                if s == 1 {
                                    let f = &fine_row[(lo as isize + off) as usize..][..hi - lo];
                                    dot_into_lanes(
                                        &coarse_row[lo..hi],
                                        f,
                                        &mut lanes[tap_base + kw],
                                    );
                                } else {
                                    let lane = &mut lanes[tap_base + kw];
                                    for sw in lo..hi {
                                        let iw = (sw as isize * s as isize + off) as usize;
                                        lane[sw % 8] =
                                            coarse_row[sw].mul_add(fine_row[iw], lane[sw % 8]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let out = &mut gw_out[(cc * c_fine + cf) * taps..][..taps];
            for (o, l) in out.iter_mut().zip(&lanes) {
                *o = reduce_lanes(l);
            }
        }
    }
}

fn channel_sums(t: &Tensor, channels: usize) -> Vec<f64> {
    let per = t.len() / channels;
    (0..channels)
        .map(|c| t.data()[c * per..(c + 1) * per].iter().sum())
        .collect()
}

fn expect_weights(op: &'static str, w: &Tensor, want: &[usize]) -> Result<(), TensorError> {
    if w.dims() != want {
        return Err(TensorError::InvalidSpec {
            op,
            reason: format!("weight shape {:?} does not match spec {:?}", w.dims(), want),
        });
    }
    Ok(())
}

fn expect_spatial(
    op: &'static str,
    want: [usize; 3],
    got: [usize; 3],
) -> Result<(), TensorError> {
    for axis in 0..3 {
        if want[axis] != got[axis] {
            return Err(TensorError::AxisMismatch {
                op,
                axis: SPATIAL_AXES[axis],
                expected: want[axis],
                got: got[axis],
            });
        }
    }
    Ok(())
}

/// 3D convolution of `[c_in, d, h, w]` input with `[c_out, c_in, kd, kh, kw]`
/// weights and one bias per output channel.
pub fn conv3d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    spec: &ConvSpec,
) -> Result<Tensor, TensorError> {
    let (c_in, in_sp) = expect_rank4("conv3d", input)?;
    expect_axis("conv3d", "channel", spec.in_channels, c_in)?;
    expect_weights("conv3d", weights, &spec.conv_weight_dims())?;
    expect_axis("conv3d", "bias", spec.out_channels, bias.len())?;
    let out_sp = spec.output_spatial(in_sp)?;
    let g = Geometry {
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding as isize,
        coarse: out_sp,
        fine: in_sp,
    };
    let mut out = Tensor::zeros(&[spec.out_channels, out_sp[0], out_sp[1], out_sp[2]]);
    gather(
        input.data(),
        c_in,
        weights.data(),
        Some(bias),
        out.data_mut(),
        spec.out_channels,
        &g,
    );
    Ok(out)
}

/// Gradients of a conv3d call: returns `(d_input, d_weights, d_bias)`.
pub fn conv3d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    spec: &ConvSpec,
) -> Result<(Tensor, Tensor, Vec<f64>), TensorError> {
    let (c_in, in_sp) = expect_rank4("conv3d_backward", input)?;
    expect_axis("conv3d_backward", "channel", spec.in_channels, c_in)?;
    expect_weights("conv3d_backward", weights, &spec.conv_weight_dims())?;
    let (c_out, go_sp) = expect_rank4("conv3d_backward", grad_out)?;
    expect_axis("conv3d_backward", "channel", spec.out_channels, c_out)?;
    let out_sp = spec.output_spatial(in_sp)?;
    expect_spatial("conv3d_backward", out_sp, go_sp)?;
    let g = Geometry {
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding as isize,
        coarse: out_sp,
        fine: in_sp,
    };
    let d_bias = channel_sums(grad_out, c_out);
    let mut d_weights = Tensor::zeros(&spec.conv_weight_dims());
    tap_correlation(
        grad_out.data(),
        c_out,
        input.data(),
        c_in,
        d_weights.data_mut(),
        &g,
    );
    let mut d_input = Tensor::zeros(input.dims());
    scatter(
        grad_out.data(),
        c_out,
        weights.data(),
        None,
        d_input.data_mut(),
        c_in,
        &g,
    );
    Ok((d_input, d_weights, d_bias))
}

/// Transposed 3D convolution of `[c_in, d, h, w]` input with
/// `[c_in, c_out, kd, kh, kw]` weights; the adjoint of `conv3d_forward` with
/// the same bank, plus one bias per output channel.
pub fn deconv3d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    spec: &ConvSpec,
) -> Result<Tensor, TensorError> {
    let (c_in, in_sp) = expect_rank4("deconv3d", input)?;
    expect_axis("deconv3d", "channel", spec.in_channels, c_in)?;
    expect_weights("deconv3d", weights, &spec.deconv_weight_dims())?;
    expect_axis("deconv3d", "bias", spec.out_channels, bias.len())?;
    let out_sp = spec.deconv_output_spatial(in_sp)?;
    let g = Geometry {
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding as isize,
        coarse: in_sp,
        fine: out_sp,
    };
    let mut out = Tensor::zeros(&[spec.out_channels, out_sp[0], out_sp[1], out_sp[2]]);
    scatter(
        input.data(),
        c_in,
        weights.data(),
        Some(bias),
        out.data_mut(),
        spec.out_channels,
        &g,
    );
    Ok(out)
}

/// Gradients of a deconv3d call: returns `(d_input, d_weights, d_bias)`.
pub fn deconv3d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    spec: &ConvSpec,
) -> Result<(Tensor, Tensor, Vec<f64>), TensorError> {
    let (c_in, in_sp) = expect_rank4("deconv3d_backward", input)?;
    expect_axis("deconv3d_backward", "channel", spec.in_channels, c_in)?;
    expect_weights("deconv3d_backward", weights, &spec.deconv_weight_dims())?;
    let (c_out, go_sp) = expect_rank4("deconv3d_backward", grad_out)?;
    expect_axis("deconv3d_backward", "channel", spec.out_channels, c_out)?;
    let out_sp = spec.deconv_output_spatial(in_sp)?;
    expect_spatial("deconv3d_backward", out_sp, go_sp)?;
    let g = Geometry {
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding as isize,
        coarse: in_sp,
        fine: out_sp,
    };
    let d_bias = channel_sums(grad_out, c_out);
    let mut d_weights = Tensor::zeros(&spec.deconv_weight_dims());
    tap_correlation(
        input.data(),
        c_in,
        grad_out.data(),
        c_out,
        d_weights.data_mut(),
        &g,
    );
    let mut d_input = Tensor::zeros(input.dims());
    gather(
        grad_out.data(),
        c_out,
        weights.data(),
        None,
        d_input.data_mut(),
        c_in,
        &g,
    );
    Ok((d_input, d_weights, d_bias))
}
