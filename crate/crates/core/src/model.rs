//! The shape network family: encoder g, decoder g~, classifier h, their
//! losses, and the linear SVM baseline.
//!
//! Architecture is fully determined by (V, d): conv blocks halve the spatial
//! size until it reaches 4, channels double from 8 per block, and a linear
//! head maps the flattened 4-cube to the d-dimensional shape vector. The
//! decoder mirrors that ladder with deconvolutions.

mod loss;
mod net;
mod svm;

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::tensor::{Tensor, TensorError};

pub use loss::{
    classification_grad_logit, classification_loss, classification_loss_logit, combined_loss,
    reconstruction_grad_logits, reconstruction_loss,
};
pub use net::{
    classify, classify_backward, classify_cached, classify_logit, decode, decode_backward,
    decode_train, encode, encode_backward, encode_train, ClassifierParams, ClassifyCache,
    ConvBlock, DecodeCache, DecoderBlock, DecoderParams, EncodeCache, EncoderParams,
};
pub use svm::{svm_predict, svm_train, SvmParams};

pub const ALLOWED_SHAPE_DIMS: [usize; 7] = [16, 32, 64, 128, 256, 512, 1024];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("model mismatch: {0}")]
    Mismatch(String),
    #[error("svm: {0}")]
    Svm(String),
}

/// The compressed shape representation v.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeVector {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    /// Input cube edge; a power of two, at least 8.
    pub v: usize,
    /// Shape vector dimension.
    pub d: usize,
    /// Classifier hidden width.
    pub m: usize,
    /// Class-balance weight on the normal (y=0) loss term.
    pub eta: f64,
    /// Reconstruction-vs-classification weight for the discriminative variant.
    pub lambda: f64,
}

impl Hyperparams {
    pub fn new(v: usize, d: usize, m: usize, eta: f64, lambda: f64) -> Result<Self, ModelError> {
        if v < 8 || !v.is_power_of_two() {
            return Err(ModelError::InvalidHyper(format!(
                "input size must be a power of two >= 8, got {v}"
            )));
        }
        if !ALLOWED_SHAPE_DIMS.contains(&d) {
            return Err(ModelError::InvalidHyper(format!(
                "shape dim must be one of {ALLOWED_SHAPE_DIMS:?}, got {d}"
            )));
        }
        if m == 0 {
            return Err(ModelError::InvalidHyper("hidden width must be positive".into()));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(ModelError::InvalidHyper(format!(
                "eta must be finite and positive, got {eta}"
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(ModelError::InvalidHyper(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(Hyperparams { v, d, m, eta, lambda })
    }

    pub fn default_hidden_width(d: usize) -> usize {
        (d / 2).max(16)
    }
}

/// Channel width per encoder block: 8, 16, 32, ... doubling until the
/// spatial size reaches 4. Assumes `v` already validated.
pub fn channel_schedule(v: usize) -> Vec<usize> {
    let blocks = (v / 4).ilog2() as usize;
    (0..blocks).map(|i| 8 << i).collect()
}

/// Flattened feature length at the bottom of the ladder: C_last * 4^3.
pub fn flat_feature_len(v: usize) -> usize {
    channel_schedule(v).last().expect("v >= 8") * 64
}

/// Named gradient accumulator. Backward passes add into it; the optimizer
/// reads slices back out by parameter name. Insertion order is fixed by the
/// backward pass, so iteration is deterministic.
#[derive(Debug, Default)]
pub struct Grads {
    entries: Vec<(String, Vec<f64>)>,
    index: HashMap<String, usize>,
}

impl Grads {
    pub fn new() -> Self {
        Grads::default()
    }

    pub fn accumulate(&mut self, name: &str, values: &[f64]) {
        match self.index.get(name) {
            Some(&i) => {
                let slot = &mut self.entries[i].1;
                assert_eq!(slot.len(), values.len(), "gradient length changed for {name}");
                for (dst, &v) in slot.iter_mut().zip(values) {
                    *dst += v;
                }
            }
            None => {
                self.index.insert(name.to_string(), self.entries.len());
                self.entries.push((name.to_string(), values.to_vec()));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.entries[i].1.as_slice())
    }

    /// Zeroes every accumulated slot, keeping names and storage.
    pub fn zero(&mut self) {
        for (_, v) in &mut self.entries {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, v) in &mut self.entries {
            v.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }
}

/// Everything one experiment stage produces: the encoder always, plus
/// whichever heads the pipeline trained. Checkpoints carry (V, d, m, eta,
/// lambda) so loading rejects mismatched inputs.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub hyper: Hyperparams,
    pub encoder: EncoderParams,
    pub decoder: Option<DecoderParams>,
    pub classifier: Option<ClassifierParams>,
    pub svm: Option<SvmParams>,
}

impl ModelBundle {
    /// Fresh auto-encoder (encoder + decoder) with seeded init.
    pub fn init_autoencoder(hyper: Hyperparams, seed: u64) -> Result<Self, ModelError> {
        let mut rng = crate::rng::SeededRng::new(seed);
        let encoder = EncoderParams::init(hyper.v, hyper.d, &mut rng)?;
        let decoder = DecoderParams::init(hyper.v, hyper.d, &mut rng)?;
        Ok(ModelBundle {
            hyper,
            encoder,
            decoder: Some(decoder),
            classifier: None,
            svm: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut ck = Checkpoint::new();
        ck.insert_scalar("meta.v", self.hyper.v as f64)?;
        ck.insert_scalar("meta.d", self.hyper.d as f64)?;
        ck.insert_scalar("meta.m", self.hyper.m as f64)?;
        ck.insert_scalar("meta.eta", self.hyper.eta)?;
        ck.insert_scalar("meta.lambda", self.hyper.lambda)?;
        self.encoder.save_into(&mut ck)?;
        if let Some(dec) = &self.decoder {
            dec.save_into(&mut ck)?;
        }
        if let Some(clf) = &self.classifier {
            clf.save_into(&mut ck)?;
        }
        if let Some(svm) = &self.svm {
            svm.save_into(&mut ck)?;
        }
        ck.save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let ck = Checkpoint::load(path)?;
        let as_count = |name: &str| -> Result<usize, ModelError> {
            let raw = ck.get_scalar(name)?;
            if raw < 0.0 || raw.fract() != 0.0 {
                return Err(ModelError::Mismatch(format!(
                    "{name} must be a non-negative integer, got {raw}"
                )));
            }
            Ok(raw as usize)
        };
        let hyper = Hyperparams::new(
            as_count("meta.v")?,
            as_count("meta.d")?,
            as_count("meta.m")?,
            ck.get_scalar("meta.eta")?,
            ck.get_scalar("meta.lambda")?,
        )?;
        let encoder = EncoderParams::load_from(&ck, hyper.v, hyper.d)?;
        let decoder = if ck.contains("dec.head.w") {
            Some(DecoderParams::load_from(&ck, hyper.v, hyper.d)?)
        } else {
            None
        };
        let classifier = if ck.contains("clf.w1") {
            Some(ClassifierParams::load_from(&ck, hyper.d, hyper.m)?)
        } else {
            None
        };
        let svm = if ck.contains("svm.w") {
            Some(SvmParams::load_from(&ck, hyper.d)?)
        } else {
            None
        };
        Ok(ModelBundle {
            hyper,
            encoder,
            decoder,
            classifier,
            svm,
        })
    }
}

/// Checkpoint read with an exact dimension check.
pub(crate) fn take_tensor(
    ck: &Checkpoint,
    name: &str,
    dims: &[usize],
) -> Result<Tensor, ModelError> {
    let t = ck.get(name)?;
    if t.dims() != dims {
        return Err(ModelError::Mismatch(format!(
            "{name}: stored dims {:?} do not match expected {dims:?}",
            t.dims()
        )));
    }
    Ok(t.clone())
}

pub(crate) fn take_vec(ck: &Checkpoint, name: &str, len: usize) -> Result<Vec<f64>, ModelError> {
    Ok(take_tensor(ck, name, &[len])?.into_data())
}
