//! Encoder, decoder, and classifier parameter sets with their forward and
//! backward passes.
//!
//! Inference entry points (`encode`, `decode`, `classify`) take shared
//! references and never mutate: batch norm reads running statistics. The
//! `*_train` variants use sample statistics, update the running ones, and
//! return the caches the backward passes need. Backward passes accumulate
//! into a `Grads` registry under the same names `trainable_mut` reports, so
//! the optimizer can pair them up.

use crate::checkpoint::Checkpoint;
use crate::rng::SeededRng;
use crate::tensor::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, conv3d_backward, conv3d_forward,
    deconv3d_backward, deconv3d_forward, linear_backward, linear_forward, relu_backward,
    relu_forward, sigmoid_forward, sigmoid_scalar, BatchNormState, BnCache, ConvSpec, Mode,
    Tensor,
};

use super::{
    channel_schedule, flat_feature_len, take_tensor, take_vec, Grads, ModelError, ShapeVector,
};

fn conv_spec(c_in: usize, c_out: usize) -> ConvSpec {
    ConvSpec {
        in_channels: c_in,
        out_channels: c_out,
        kernel: [3, 3, 3],
        stride: 1,
        padding: 1,
    }
}

fn resample_spec(c: usize) -> ConvSpec {
    ConvSpec {
        in_channels: c,
        out_channels: c,
        kernel: [2, 2, 2],
        stride: 2,
        padding: 0,
    }
}

fn init_weights(dims: &[usize], fan_in: usize, rng: &mut SeededRng) -> Tensor {
    Tensor::uniform(dims, 1.0 / (fan_in as f64).sqrt(), rng)
}

/// One encoder stage: 3-cube conv into a wider channel bank, then a 2-cube
/// stride-2 conv halving the spatial size. Batch norm and ReLU after each.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv_w: Tensor,
    pub conv_b: Vec<f64>,
    pub bn_a: BatchNormState,
    pub down_w: Tensor,
    pub down_b: Vec<f64>,
    pub bn_b: BatchNormState,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    input_size: usize,
    shape_dim: usize,
    pub blocks: Vec<ConvBlock>,
    pub head_w: Tensor,
    pub head_b: Vec<f64>,
}

/// Mirror stage: stride-2 deconv doubling the spatial size, then a 3-cube
/// conv stepping the channels back down.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub deconv_w: Tensor,
    pub deconv_b: Vec<f64>,
    pub bn_a: BatchNormState,
    pub conv_w: Tensor,
    pub conv_b: Vec<f64>,
    pub bn_b: BatchNormState,
}

#[derive(Debug, Clone)]
pub struct DecoderParams {
    output_size: usize,
    shape_dim: usize,
    pub head_w: Tensor,
    pub head_b: Vec<f64>,
    pub blocks: Vec<DecoderBlock>,
    pub final_w: Tensor,
    pub final_b: Vec<f64>,
}

/// 2-layer classifier head: d -> m -> 1 with ReLU between and a sigmoid on
/// the logit.
#[derive(Debug, Clone)]
pub struct ClassifierParams {
    pub w1: Tensor,
    pub b1: Vec<f64>,
    pub w2: Tensor,
    pub b2: Vec<f64>,
}

struct EncBlockCache {
    conv_in: Tensor,
    bn_a: BnCache,
    act_a: Tensor,
    down_in: Tensor,
    bn_b: BnCache,
    act_b: Tensor,
}

pub struct EncodeCache {
    blocks: Vec<EncBlockCache>,
    flat_in: Tensor,
}

struct DecBlockCache {
    deconv_in: Tensor,
    bn_a: BnCache,
    act_a: Tensor,
    conv_in: Tensor,
    bn_b: BnCache,
    act_b: Tensor,
}

pub struct DecodeCache {
    head_in: Tensor,
    blocks: Vec<DecBlockCache>,
    final_in: Tensor,
}

pub struct ClassifyCache {
    v_in: Tensor,
    pre_act: Tensor,
    hidden: Tensor,
}

impl EncoderParams {
    /// Seeded init; the draw order (blocks front to back, conv before down,
    /// head last) is part of the determinism contract.
    pub fn init(v: usize, d: usize, rng: &mut SeededRng) -> Result<Self, ModelError> {
        let schedule = validated_schedule(v)?;
        let mut blocks = Vec::with_capacity(schedule.len());
        let mut c_in = 1;
        for &c_out in &schedule {
            let cs = conv_spec(c_in, c_out);
            let ds = resample_spec(c_out);
            blocks.push(ConvBlock {
                conv_w: init_weights(&cs.conv_weight_dims(), c_in * 27, rng),
                conv_b: vec![0.0; c_out],
                bn_a: BatchNormState::new(c_out),
                down_w: init_weights(&ds.conv_weight_dims(), c_out * 8, rng),
                down_b: vec![0.0; c_out],
                bn_b: BatchNormState::new(c_out),
            });
            c_in = c_out;
        }
        let flat = flat_feature_len(v);
        Ok(EncoderParams {
            input_size: v,
            shape_dim: d,
            blocks,
            head_w: init_weights(&[d, flat], flat, rng),
            head_b: vec![0.0; d],
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_dim
    }

    fn check_input(&self, mask: &Tensor) -> Result<(), ModelError> {
        let v = self.input_size;
        if mask.dims() != [1, v, v, v] {
            return Err(ModelError::Mismatch(format!(
                "encoder expects a [1, {v}, {v}, {v}] input, got {:?}",
                mask.dims()
            )));
        }
        Ok(())
    }

    pub fn trainable_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("enc.block{i}.conv.w"), b.conv_w.data_mut()));
            out.push((format!("enc.block{i}.conv.b"), &mut b.conv_b));
            out.push((format!("enc.block{i}.bn_a.gamma"), &mut b.bn_a.gamma));
            out.push((format!("enc.block{i}.bn_a.beta"), &mut b.bn_a.beta));
            out.push((format!("enc.block{i}.down.w"), b.down_w.data_mut()));
            out.push((format!("enc.block{i}.down.b"), &mut b.down_b));
            out.push((format!("enc.block{i}.bn_b.gamma"), &mut b.bn_b.gamma));
            out.push((format!("enc.block{i}.bn_b.beta"), &mut b.bn_b.beta));
        }
        out.push(("enc.head.w".into(), self.head_w.data_mut()));
        out.push(("enc.head.b".into(), &mut self.head_b));
        out
    }

    pub fn save_into(&self, ck: &mut Checkpoint) -> Result<(), ModelError> {
        for (i, b) in self.blocks.iter().enumerate() {
            ck.insert(&format!("enc.block{i}.conv.w"), b.conv_w.clone())?;
            ck.insert(&format!("enc.block{i}.conv.b"), vec_tensor(&b.conv_b))?;
            save_bn(ck, &format!("enc.block{i}.bn_a"), &b.bn_a)?;
            ck.insert(&format!("enc.block{i}.down.w"), b.down_w.clone())?;
            ck.insert(&format!("enc.block{i}.down.b"), vec_tensor(&b.down_b))?;
            save_bn(ck, &format!("enc.block{i}.bn_b"), &b.bn_b)?;
        }
        ck.insert("enc.head.w", self.head_w.clone())?;
        ck.insert("enc.head.b", vec_tensor(&self.head_b))?;
        Ok(())
    }

    pub fn load_from(ck: &Checkpoint, v: usize, d: usize) -> Result<Self, ModelError> {
        let schedule = validated_schedule(v)?;
        let mut blocks = Vec::with_capacity(schedule.len());
        let mut c_in = 1;
        for (i, &c_out) in schedule.iter().enumerate() {
            let cs = conv_spec(c_in, c_out);
            let ds = resample_spec(c_out);
            blocks.push(ConvBlock {
                conv_w: take_tensor(ck, &format!("enc.block{i}.conv.w"), &cs.conv_weight_dims())?,
                conv_b: take_vec(ck, &format!("enc.block{i}.conv.b"), c_out)?,
                bn_a: load_bn(ck, &format!("enc.block{i}.bn_a"), c_out)?,
                down_w: take_tensor(ck, &format!("enc.block{i}.down.w"), &ds.conv_weight_dims())?,
                down_b: take_vec(ck, &format!("enc.block{i}.down.b"), c_out)?,
                bn_b: load_bn(ck, &format!("enc.block{i}.bn_b"), c_out)?,
            });
            c_in = c_out;
        }
        let flat = flat_feature_len(v);
        Ok(EncoderParams {
            input_size: v,
            shape_dim: d,
            blocks,
            head_w: take_tensor(ck, "enc.head.w", &[d, flat])?,
            head_b: take_vec(ck, "enc.head.b", d)?,
        })
    }
}

impl DecoderParams {
    pub fn init(v: usize, d: usize, rng: &mut SeededRng) -> Result<Self, ModelError> {
        let schedule = validated_schedule(v)?;
        let path = decoder_channel_path(&schedule);
        let flat = flat_feature_len(v);
        let head_w = init_weights(&[flat, d], d, rng);
        let head_b = vec![0.0; flat];
        let mut blocks = Vec::with_capacity(path.len());
        for &(c, c_next) in &path {
            let ds = resample_spec(c);
            let cs = conv_spec(c, c_next);
            blocks.push(DecoderBlock {
                // Stride equals kernel, so each output voxel sees one tap
                // per input channel.
                deconv_w: init_weights(&ds.deconv_weight_dims(), c, rng),
                deconv_b: vec![0.0; c],
                bn_a: BatchNormState::new(c),
                conv_w: init_weights(&cs.conv_weight_dims(), c * 27, rng),
                conv_b: vec![0.0; c_next],
                bn_b: BatchNormState::new(c_next),
            });
        }
        let fs = conv_spec(8, 1);
        Ok(DecoderParams {
            output_size: v,
            shape_dim: d,
            head_w,
            head_b,
            blocks,
            final_w: init_weights(&fs.conv_weight_dims(), 8 * 27, rng),
            final_b: vec![0.0; 1],
        })
    }

    pub fn output_size(&self) -> usize {
        self.output_size
    }

    fn check_input(&self, v: &ShapeVector) -> Result<(), ModelError> {
        if v.values.len() != self.shape_dim {
            return Err(ModelError::Mismatch(format!(
                "decoder expects a {}-dim shape vector, got {}",
                self.shape_dim,
                v.values.len()
            )));
        }
        Ok(())
    }

    pub fn trainable_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        out.push(("dec.head.w".into(), self.head_w.data_mut()));
        out.push(("dec.head.b".into(), &mut self.head_b));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("dec.block{i}.deconv.w"), b.deconv_w.data_mut()));
            out.push((format!("dec.block{i}.deconv.b"), &mut b.deconv_b));
            out.push((format!("dec.block{i}.bn_a.gamma"), &mut b.bn_a.gamma));
            out.push((format!("dec.block{i}.bn_a.beta"), &mut b.bn_a.beta));
            out.push((format!("dec.block{i}.conv.w"), b.conv_w.data_mut()));
            out.push((format!("dec.block{i}.conv.b"), &mut b.conv_b));
            out.push((format!("dec.block{i}.bn_b.gamma"), &mut b.bn_b.gamma));
            out.push((format!("dec.block{i}.bn_b.beta"), &mut b.bn_b.beta));
        }
        out.push(("dec.final.w".into(), self.final_w.data_mut()));
        out.push(("dec.final.b".into(), &mut self.final_b));
        out
    }

    pub fn save_into(&self, ck: &mut Checkpoint) -> Result<(), ModelError> {
        ck.insert("dec.head.w", self.head_w.clone())?;
        ck.insert("dec.head.b", vec_tensor(&self.head_b))?;
        for (i, b) in self.blocks.iter().enumerate() {
            ck.insert(&format!("dec.block{i}.deconv.w"), b.deconv_w.clone())?;
            ck.insert(&format!("dec.block{i}.deconv.b"), vec_tensor(&b.deconv_b))?;
            save_bn(ck, &format!("dec.block{i}.bn_a"), &b.bn_a)?;
            ck.insert(&format!("dec.block{i}.conv.w"), b.conv_w.clone())?;
            ck.insert(&format!("dec.block{i}.conv.b"), vec_tensor(&b.conv_b))?;
            save_bn(ck, &format!("dec.block{i}.bn_b"), &b.bn_b)?;
        }
        ck.insert("dec.final.w", self.final_w.clone())?;
        ck.insert("dec.final.b", vec_tensor(&self.final_b))?;
        Ok(())
    }

    pub fn load_from(ck: &Checkpoint, v: usize, d: usize) -> Result<Self, ModelError> {
        let schedule = validated_schedule(v)?;
        let path = decoder_channel_path(&schedule);
        let flat = flat_feature_len(v);
        let mut blocks = Vec::with_capacity(path.len());
        for (i, &(c, c_next)) in path.iter().enumerate() {
            let ds = resample_spec(c);
            let cs = conv_spec(c, c_next);
            blocks.push(DecoderBlock {
                deconv_w: take_tensor(
                    ck,
                    &format!("dec.block{i}.deconv.w"),
                    &ds.deconv_weight_dims(),
                )?,
                deconv_b: take_vec(ck, &format!("dec.block{i}.deconv.b"), c)?,
                bn_a: load_bn(ck, &format!("dec.block{i}.bn_a"), c)?,
                conv_w: take_tensor(ck, &format!("dec.block{i}.conv.w"), &cs.conv_weight_dims())?,
                conv_b: take_vec(ck, &format!("dec.block{i}.conv.b"), c_next)?,
                bn_b: load_bn(ck, &format!("dec.block{i}.bn_b"), c_next)?,
            });
        }
        let fs = conv_spec(8, 1);
        Ok(DecoderParams {
            output_size: v,
            shape_dim: d,
            head_w: take_tensor(ck, "dec.head.w", &[flat, d])?,
            head_b: take_vec(ck, "dec.head.b", flat)?,
            blocks,
            final_w: take_tensor(ck, "dec.final.w", &fs.conv_weight_dims())?,
            final_b: take_vec(ck, "dec.final.b", 1)?,
        })
    }
}

impl ClassifierParams {
    pub fn init(d: usize, m: usize, rng: &mut SeededRng) -> Result<Self, ModelError> {
        if d == 0 || m == 0 {
            return Err(ModelError::InvalidHyper(
                "classifier dims must be positive".into(),
            ));
        }
        Ok(ClassifierParams {
            w1: init_weights(&[m, d], d, rng),
            b1: vec![0.0; m],
            w2: init_weights(&[1, m], m, rng),
            b2: vec![0.0; 1],
        })
    }

    pub fn shape_dim(&self) -> usize {
        self.w1.dims()[1]
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.dims()[0]
    }

    pub fn trainable_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("clf.w1".into(), self.w1.data_mut()),
            ("clf.b1".into(), &mut self.b1),
            ("clf.w2".into(), self.w2.data_mut()),
            ("clf.b2".into(), &mut self.b2),
        ]
    }

    pub fn save_into(&self, ck: &mut Checkpoint) -> Result<(), ModelError> {
        ck.insert("clf.w1", self.w1.clone())?;
        ck.insert("clf.b1", vec_tensor(&self.b1))?;
        ck.insert("clf.w2", self.w2.clone())?;
        ck.insert("clf.b2", vec_tensor(&self.b2))?;
        Ok(())
    }

    pub fn load_from(ck: &Checkpoint, d: usize, m: usize) -> Result<Self, ModelError> {
        Ok(ClassifierParams {
            w1: take_tensor(ck, "clf.w1", &[m, d])?,
            b1: take_vec(ck, "clf.b1", m)?,
            w2: take_tensor(ck, "clf.w2", &[1, m])?,
            b2: take_vec(ck, "clf.b2", 1)?,
        })
    }
}

fn validated_schedule(v: usize) -> Result<Vec<usize>, ModelError> {
    if v < 8 || !v.is_power_of_two() {
        return Err(ModelError::InvalidHyper(format!(
            "input size must be a power of two >= 8, got {v}"
        )));
    }
    Ok(channel_schedule(v))
}

/// Decoder block channel pairs (deconv width, conv output width), walking the
/// encoder schedule backwards; the last conv stays at 8 for the final
/// 1-channel head.
fn decoder_channel_path(schedule: &[usize]) -> Vec<(usize, usize)> {
    let rev: Vec<usize> = schedule.iter().rev().copied().collect();
    (0..rev.len())
        .map(|i| (rev[i], if i + 1 < rev.len() { rev[i + 1] } else { 8 }))
        .collect()
}

fn vec_tensor(v: &[f64]) -> Tensor {
    Tensor::new(vec![v.len()], v.to_vec()).expect("nonempty parameter vector")
}

fn save_bn(ck: &mut Checkpoint, prefix: &str, bn: &BatchNormState) -> Result<(), ModelError> {
    ck.insert(&format!("{prefix}.gamma"), vec_tensor(&bn.gamma))?;
    ck.insert(&format!("{prefix}.beta"), vec_tensor(&bn.beta))?;
    ck.insert(&format!("{prefix}.running_mean"), vec_tensor(&bn.running_mean))?;
    ck.insert(&format!("{prefix}.running_var"), vec_tensor(&bn.running_var))?;
    Ok(())
}

fn load_bn(ck: &Checkpoint, prefix: &str, channels: usize) -> Result<BatchNormState, ModelError> {
    let mut bn = BatchNormState::new(channels);
    bn.gamma = take_vec(ck, &format!("{prefix}.gamma"), channels)?;
    bn.beta = take_vec(ck, &format!("{prefix}.beta"), channels)?;
    bn.running_mean = take_vec(ck, &format!("{prefix}.running_mean"), channels)?;
    bn.running_var = take_vec(ck, &format!("{prefix}.running_var"), channels)?;
    Ok(bn)
}

/// Inference encode: running-stats batch norm, no mutation.
pub fn encode(mask: &Tensor, params: &EncoderParams) -> Result<ShapeVector, ModelError> {
    params.check_input(mask)?;
    let mut x = mask.clone();
    let mut c_in = 1;
    for b in &params.blocks {
        let c_out = b.conv_w.dims()[0];
        x = conv3d_forward(&x, &b.conv_w, &b.conv_b, &conv_spec(c_in, c_out))?;
        x = batchnorm_infer(&x, &b.bn_a)?;
        x = relu_forward(&x);
        x = conv3d_forward(&x, &b.down_w, &b.down_b, &resample_spec(c_out))?;
        x = batchnorm_infer(&x, &b.bn_b)?;
        x = relu_forward(&x);
        c_in = c_out;
    }
    let flat = x.reshape(vec![flat_feature_len(params.input_size)])?;
    let v = linear_forward(&flat, &params.head_w, &params.head_b)?;
    Ok(ShapeVector {
        values: v.into_data(),
    })
}

/// Training encode: sample-statistics batch norm (updates running stats) and
/// a cache for `encode_backward`.
pub fn encode_train(
    mask: &Tensor,
    params: &mut EncoderParams,
) -> Result<(ShapeVector, EncodeCache), ModelError> {
    params.check_input(mask)?;
    let mut x = mask.clone();
    let mut c_in = 1;
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for b in &mut params.blocks {
        let c_out = b.conv_w.dims()[0];
        let conv_in = x;
        let z = conv3d_forward(&conv_in, &b.conv_w, &b.conv_b, &conv_spec(c_in, c_out))?;
        let (act_a, bn_a) = batchnorm_forward(&z, &mut b.bn_a, Mode::Train)?;
        let bn_a = bn_a.expect("train cache");
        let down_in = relu_forward(&act_a);
        let z = conv3d_forward(&down_in, &b.down_w, &b.down_b, &resample_spec(c_out))?;
        let (act_b, bn_b) = batchnorm_forward(&z, &mut b.bn_b, Mode::Train)?;
        let bn_b = bn_b.expect("train cache");
        x = relu_forward(&act_b);
        blocks.push(EncBlockCache {
            conv_in,
            bn_a,
            act_a,
            down_in,
            bn_b,
            act_b,
        });
        c_in = c_out;
    }
    let flat_in = x.reshape(vec![flat_feature_len(params.input_size)])?;
    let v = linear_forward(&flat_in, &params.head_w, &params.head_b)?;
    Ok((
        ShapeVector {
            values: v.into_data(),
        },
        EncodeCache { blocks, flat_in },
    ))
}

/// Accumulates encoder gradients for the sample that produced `cache`.
/// The gradient with respect to the input mask is discarded.
pub fn encode_backward(
    params: &EncoderParams,
    cache: &EncodeCache,
    d_shape: &[f64],
    grads: &mut Grads,
) -> Result<(), ModelError> {
    if d_shape.len() != params.shape_dim {
        return Err(ModelError::Mismatch(format!(
            "gradient length {} does not match shape dim {}",
            d_shape.len(),
            params.shape_dim
        )));
    }
    let d_v = Tensor::new(vec![d_shape.len()], d_shape.to_vec())?;
    let (d_flat, d_w, d_b) = linear_backward(&cache.flat_in, &params.head_w, &d_v)?;
    grads.accumulate("enc.head.w", d_w.data());
    grads.accumulate("enc.head.b", &d_b);
    let c_last = *channel_schedule(params.input_size).last().expect("blocks");
    let mut g = d_flat.reshape(vec![c_last, 4, 4, 4])?;
    let mut c_in = 1;
    let in_channels: Vec<usize> = params
        .blocks
        .iter()
        .map(|b| {
            let c = c_in;
            c_in = b.conv_w.dims()[0];
            c
        })
        .collect();
    for i in (0..params.blocks.len()).rev() {
        let b = &params.blocks[i];
        let c = &cache.blocks[i];
        let c_out = b.conv_w.dims()[0];
        let g1 = relu_backward(&c.act_b, &g)?;
        let (g2, d_gamma, d_beta) = batchnorm_backward(&c.bn_b, &b.bn_b, &g1)?;
        grads.accumulate(&format!("enc.block{i}.bn_b.gamma"), &d_gamma);
        grads.accumulate(&format!("enc.block{i}.bn_b.beta"), &d_beta);
        let (g3, d_w, d_b) = conv3d_backward(&c.down_in, &b.down_w, &g2, &resample_spec(c_out))?;
        grads.accumulate(&format!("enc.block{i}.down.w"), d_w.data());
        grads.accumulate(&format!("enc.block{i}.down.b"), &d_b);
        let g4 = relu_backward(&c.act_a, &g3)?;
        let (g5, d_gamma, d_beta) = batchnorm_backward(&c.bn_a, &b.bn_a, &g4)?;
        grads.accumulate(&format!("enc.block{i}.bn_a.gamma"), &d_gamma);
        grads.accumulate(&format!("enc.block{i}.bn_a.beta"), &d_beta);
        let (g6, d_w, d_b) = conv3d_backward(
            &c.conv_in,
            &b.conv_w,
            &g5,
            &conv_spec(in_channels[i], c_out),
        )?;
        grads.accumulate(&format!("enc.block{i}.conv.w"), d_w.data());
        grads.accumulate(&format!("enc.block{i}.conv.b"), &d_b);
        g = g6;
    }
    Ok(())
}

/// Inference decode; output entries are sigmoid activations in (0,1).
pub fn decode(v: &ShapeVector, params: &DecoderParams) -> Result<Tensor, ModelError> {
    params.check_input(v)?;
    let v_in = Tensor::new(vec![v.values.len()], v.values.clone())?;
    let h = linear_forward(&v_in, &params.head_w, &params.head_b)?;
    let c_last = *channel_schedule(params.output_size).last().expect("blocks");
    let mut x = h.reshape(vec![c_last, 4, 4, 4])?;
    for b in &params.blocks {
        let c = b.deconv_w.dims()[0];
        let c_next = b.conv_w.dims()[0];
        x = deconv3d_forward(&x, &b.deconv_w, &b.deconv_b, &resample_spec(c))?;
        x = batchnorm_infer(&x, &b.bn_a)?;
        x = relu_forward(&x);
        x = conv3d_forward(&x, &b.conv_w, &b.conv_b, &conv_spec(c, c_next))?;
        x = batchnorm_infer(&x, &b.bn_b)?;
        x = relu_forward(&x);
    }
    let z = conv3d_forward(&x, &params.final_w, &params.final_b, &conv_spec(8, 1))?;
    Ok(sigmoid_forward(&z))
}

pub fn decode_train(
    v: &ShapeVector,
    params: &mut DecoderParams,
) -> Result<(Tensor, DecodeCache), ModelError> {
    params.check_input(v)?;
    let head_in = Tensor::new(vec![v.values.len()], v.values.clone())?;
    let h = linear_forward(&head_in, &params.head_w, &params.head_b)?;
    let c_last = *channel_schedule(params.output_size).last().expect("blocks");
    let mut x = h.reshape(vec![c_last, 4, 4, 4])?;
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for b in &mut params.blocks {
        let c = b.deconv_w.dims()[0];
        let c_next = b.conv_w.dims()[0];
        let deconv_in = x;
        let z = deconv3d_forward(&deconv_in, &b.deconv_w, &b.deconv_b, &resample_spec(c))?;
        let (act_a, bn_a) = batchnorm_forward(&z, &mut b.bn_a, Mode::Train)?;
        let bn_a = bn_a.expect("train cache");
        let conv_in = relu_forward(&act_a);
        let z = conv3d_forward(&conv_in, &b.conv_w, &b.conv_b, &conv_spec(c, c_next))?;
        let (act_b, bn_b) = batchnorm_forward(&z, &mut b.bn_b, Mode::Train)?;
        let bn_b = bn_b.expect("train cache");
        x = relu_forward(&act_b);
        blocks.push(DecBlockCache {
            deconv_in,
            bn_a,
            act_a,
            conv_in,
            bn_b,
            act_b,
        });
    }
    let final_in = x;
    let z = conv3d_forward(&final_in, &params.final_w, &params.final_b, &conv_spec(8, 1))?;
    let out = sigmoid_forward(&z);
    Ok((
        out,
        DecodeCache {
            head_in,
            blocks,
            final_in,
        },
    ))
}

/// Decoder gradients from `d_logits`, the gradient with respect to the final
/// pre-sigmoid activations. Returns the gradient on the shape vector.
pub fn decode_backward(
    params: &DecoderParams,
    cache: &DecodeCache,
    d_logits: &Tensor,
    grads: &mut Grads,
) -> Result<Vec<f64>, ModelError> {
    let (mut g, d_w, d_b) =
        conv3d_backward(&cache.final_in, &params.final_w, d_logits, &conv_spec(8, 1))?;
    grads.accumulate("dec.final.w", d_w.data());
    grads.accumulate("dec.final.b", &d_b);
    for i in (0..params.blocks.len()).rev() {
        let b = &params.blocks[i];
        let c = &cache.blocks[i];
        let cw = b.deconv_w.dims()[0];
        let c_next = b.conv_w.dims()[0];
        let g1 = relu_backward(&c.act_b, &g)?;
        let (g2, d_gamma, d_beta) = batchnorm_backward(&c.bn_b, &b.bn_b, &g1)?;
        grads.accumulate(&format!("dec.block{i}.bn_b.gamma"), &d_gamma);
        grads.accumulate(&format!("dec.block{i}.bn_b.beta"), &d_beta);
        let (g3, d_w, d_b) = conv3d_backward(&c.conv_in, &b.conv_w, &g2, &conv_spec(cw, c_next))?;
        grads.accumulate(&format!("dec.block{i}.conv.w"), d_w.data());
        grads.accumulate(&format!("dec.block{i}.conv.b"), &d_b);
        let g4 = relu_backward(&c.act_a, &g3)?;
        let (g5, d_gamma, d_beta) = batchnorm_backward(&c.bn_a, &b.bn_a, &g4)?;
        grads.accumulate(&format!("dec.block{i}.bn_a.gamma"), &d_gamma);
        grads.accumulate(&format!("dec.block{i}.bn_a.beta"), &d_beta);
        let (g6, d_w, d_b) =
            deconv3d_backward(&c.deconv_in, &b.deconv_w, &g5, &resample_spec(cw))?;
        grads.accumulate(&format!("dec.block{i}.deconv.w"), d_w.data());
        grads.accumulate(&format!("dec.block{i}.deconv.b"), &d_b);
        g = g6;
    }
    let flat = g.reshape(vec![params.head_b.len()])?;
    let (d_v, d_w, d_b) = linear_backward(&cache.head_in, &params.head_w, &flat)?;
    grads.accumulate("dec.head.w", d_w.data());
    grads.accumulate("dec.head.b", &d_b);
    Ok(d_v.into_data())
}

/// Abnormality probability p in (0,1).
pub fn classify(v: &ShapeVector, params: &ClassifierParams) -> Result<f64, ModelError> {
    Ok(classify_cached(v, params)?.0)
}

pub fn classify_cached(
    v: &ShapeVector,
    params: &ClassifierParams,
) -> Result<(f64, ClassifyCache), ModelError> {
    if v.values.len() != params.shape_dim() {
        return Err(ModelError::Mismatch(format!(
            "classifier expects a {}-dim shape vector, got {}",
            params.shape_dim(),
            v.values.len()
        )));
    }
    let v_in = Tensor::new(vec![v.values.len()], v.values.clone())?;
    let pre_act = linear_forward(&v_in, &params.w1, &params.b1)?;
    let hidden = relu_forward(&pre_act);
    let z = linear_forward(&hidden, &params.w2, &params.b2)?.data()[0];
    Ok((
        sigmoid_scalar(z),
        ClassifyCache {
            v_in,
            pre_act,
            hidden,
        },
    ))
}

/// The classifier logit (pre-sigmoid); losses differentiate against this.
pub fn classify_logit(v: &ShapeVector, params: &ClassifierParams) -> Result<f64, ModelError> {
    let v_in = Tensor::new(vec![v.values.len()], v.values.clone())?;
    let hidden = relu_forward(&linear_forward(&v_in, &params.w1, &params.b1)?);
    Ok(linear_forward(&hidden, &params.w2, &params.b2)?.data()[0])
}

/// Classifier gradients from `d_logit`; returns the gradient on the shape
/// vector for chaining into the encoder.
pub fn classify_backward(
    params: &ClassifierParams,
    cache: &ClassifyCache,
    d_logit: f64,
    grads: &mut Grads,
) -> Result<Vec<f64>, ModelError> {
    let g2 = Tensor::new(vec![1], vec![d_logit])?;
    let (d_hidden, d_w2, d_b2) = linear_backward(&cache.hidden, &params.w2, &g2)?;
    grads.accumulate("clf.w2", d_w2.data());
    grads.accumulate("clf.b2", &d_b2);
    let d_pre = relu_backward(&cache.pre_act, &d_hidden)?;
    let (d_v, d_w1, d_b1) = linear_backward(&cache.v_in, &params.w1, &d_pre)?;
    grads.accumulate("clf.w1", d_w1.data());
    grads.accumulate("clf.b1", &d_b1);
    Ok(d_v.into_data())
}
