//! Two-step optimization protocol: auto-encoder pretraining, then joint
//! encoder+classifier tuning, plus the frozen-encoder and discriminative
//! ablations.
//!
//! Random stream layout per run: `SeededRng::new(cfg.seed)` initializes the
//! parameters this phase owns (encoder+decoder for pretraining, classifier
//! for the rest); `fork(1)` of it drives case sampling and augmentation.
//! Identical (dataset, cfg) therefore reproduces losses and checkpoints
//! bitwise.

use std::collections::HashMap;
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::checkpoint::Checkpoint;
use crate::model::{
    classification_grad_logit, classification_loss_logit, classify_backward, classify_cached,
    classify_logit, decode_backward, decode_train, encode, encode_backward, encode_train,
    reconstruction_grad_logits, reconstruction_loss, ClassifierParams, DecoderParams,
    EncoderParams, Grads, Hyperparams, ModelError, ShapeVector,
};
use crate::rng::SeededRng;
use crate::shapegen::{crop_and_rescale, rotate_mask, CaseRecord, Label, ShapegenError};
use crate::tensor::{OptState, Tensor};

pub const SGD_MOMENTUM: f64 = 0.9;

/// The three augmentation angles per axis; 27 triples total.
pub const ROTATION_ANGLES_DEG: [f64; 3] = [-10.0, 0.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    PretrainAe,
    Joint,
    Frozen,
    Discriminative,
    Scratch,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::PretrainAe => "pretrain_ae",
            Phase::Joint => "joint",
            Phase::Frozen => "frozen",
            Phase::Discriminative => "discriminative",
            Phase::Scratch => "scratch",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        match s {
            "pretrain_ae" => Some(Phase::PretrainAe),
            "joint" => Some(Phase::Joint),
            "frozen" => Some(Phase::Frozen),
            "discriminative" => Some(Phase::Discriminative),
            "scratch" => Some(Phase::Scratch),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub phase: Phase,
    pub iterations: usize,
    pub base_lr: f64,
    pub lr_decay_points: Vec<usize>,
    pub decay_factor: f64,
    pub freeze_until: usize,
    pub batch_size: usize,
    pub augmentation: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(TrainError::Config(format!(
                "base_lr must be finite and positive, got {}",
                self.base_lr
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(TrainError::Config(format!(
                "decay_factor must be finite and positive, got {}",
                self.decay_factor
            )));
        }
        if self.freeze_until > self.iterations {
            return Err(TrainError::Config(format!(
                "freeze_until ({}) exceeds iterations ({})",
                self.freeze_until, self.iterations
            )));
        }
        if self.lr_decay_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TrainError::Config(
                "lr_decay_points must be strictly increasing".into(),
            ));
        }
        if self.batch_size != 1 {
            return Err(TrainError::Config(format!(
                "batch_size is fixed at 1, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }

    /// base_lr times decay_factor to the number of decay points already
    /// passed: point p counts once iteration >= p.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        let passed = self.lr_decay_points.iter().filter(|&&p| iteration >= p).count();
        self.base_lr * self.decay_factor.powi(passed as i32)
    }
}

#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub iteration: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_recon: Option<f64>,
    pub loss_clf: Option<f64>,
    /// Seconds since the run started; excluded from determinism contracts.
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Set by callers that persist the final parameters.
    pub checkpoint: Option<String>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss_total).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut out = String::from("iter,lr,loss_total,loss_recon,loss_clf\n");
        for r in &self.records {
            let recon = r.loss_recon.map(|v| v.to_string()).unwrap_or_default();
            let clf = r.loss_clf.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iteration, r.lr, r.loss_total, recon, clf
            ));
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("pretraining expects normal cases only, found abnormal case {case_id}")]
    WrongLabel { case_id: String },
    #[error("training set has no {label} cases; both classes are required")]
    MissingClass { label: Label },
    #[error("training aborted at iteration {iteration}: {reason} (checkpoint holds the last good parameters)")]
    Aborted {
        iteration: usize,
        reason: String,
        checkpoint: Box<Checkpoint>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shape(#[from] ShapegenError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Maps a flat index in 0..27 to its angle triple, axis 0 varying slowest.
pub fn rotation_triple(index: usize) -> [f64; 3] {
    assert!(index < 27);
    [
        ROTATION_ANGLES_DEG[index / 9],
        ROTATION_ANGLES_DEG[(index / 3) % 3],
        ROTATION_ANGLES_DEG[index % 3],
    ]
}

fn sample_tensor(
    record: &CaseRecord,
    target: usize,
    angle_index: Option<usize>,
) -> Result<Tensor, TrainError> {
    let scaled = match angle_index {
        Some(idx) => {
            let rotated = rotate_mask(&record.grid, rotation_triple(idx))?;
            crop_and_rescale(&rotated, target)?
        }
        None => crop_and_rescale(&record.grid, target)?,
    };
    Ok(scaled.to_tensor())
}

/// One network-ready sample: an optional rotation by one of the 27 angle
/// triples (drawn uniformly), then minimal-bounding-box rescale to `target`.
/// With `augment` off the rng is not consumed.
pub fn augment_sample(
    record: &CaseRecord,
    target: usize,
    augment: bool,
    rng: &mut SeededRng,
) -> Result<Tensor, TrainError> {
    let angle_index = if augment { Some(rng.below(27)) } else { None };
    sample_tensor(record, target, angle_index)
}

/// N_abnormal / N_normal of the given cases; the class-balance weight eta.
pub fn class_balance(cases: &[CaseRecord]) -> Result<f64, TrainError> {
    let n_abn = cases.iter().filter(|c| c.label == Label::Abnormal).count();
    let n_norm = cases.len() - n_abn;
    if n_norm == 0 {
        return Err(TrainError::MissingClass { label: Label::Normal });
    }
    if n_abn == 0 {
        return Err(TrainError::MissingClass { label: Label::Abnormal });
    }
    Ok(n_abn as f64 / n_norm as f64)
}

/// Momentum-SGD over named parameter slices. States appear lazily the first
/// time a name receives a gradient, so frozen parameters never acquire
/// velocity.
struct Sgd {
    states: HashMap<String, OptState>,
}

impl Sgd {
    fn new() -> Self {
        Sgd { states: HashMap::new() }
    }

    /// Checks every gradient for finiteness before touching any parameter,
    /// so an abort leaves the whole set at its pre-iteration values.
    fn apply<'a>(
        &mut self,
        lr: f64,
        grads: &Grads,
        targets: impl Iterator<Item = (String, &'a mut [f64])>,
    ) -> Result<(), String> {
        let targets: Vec<(String, &mut [f64])> = targets.collect();
        for (name, _) in &targets {
            if let Some(g) = grads.get(name) {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(format!("non-finite gradient for {name}[{i}]"));
                }
            }
        }
        for (name, slice) in targets {
            let Some(g) = grads.get(&name) else { continue };
            if !self.states.contains_key(&name) {
                let state = OptState::new(name.clone(), slice.len(), lr, SGD_MOMENTUM)
                    .map_err(|e| e.to_string())?;
                self.states.insert(name.clone(), state);
            }
            let state = self.states.get_mut(&name).expect("state just ensured");
            state.learning_rate = lr;
            state.step(slice, g).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

fn snapshot(parts: &[&dyn Fn(&mut Checkpoint) -> Result<(), ModelError>]) -> Box<Checkpoint> {
    let mut ck = Checkpoint::new();
    for save in parts {
        save(&mut ck).expect("snapshot of live parameters cannot collide");
    }
    Box::new(ck)
}

/// Reconstruction-only training on normal cases; constant-or-scheduled lr,
/// uniform sampling with replacement, batch size 1.
pub fn pretrain_autoencoder(
    cases: &[CaseRecord],
    hyper: &Hyperparams,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, DecoderParams, TrainLog), TrainError> {
    cfg.validate()?;
    if cfg.phase != Phase::PretrainAe {
        return Err(TrainError::Config(format!(
            "pretrain_autoencoder requires phase pretrain_ae, got {}",
            cfg.phase
        )));
    }
    if cases.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(bad) = cases.iter().find(|c| c.label != Label::Normal) {
        return Err(TrainError::WrongLabel { case_id: bad.case_id.clone() });
    }

    let mut init_rng = SeededRng::new(cfg.seed);
    let mut enc = EncoderParams::init(hyper.v, hyper.d, &mut init_rng)?;
    let mut dec = DecoderParams::init(hyper.v, hyper.d, &mut init_rng)?;
    let mut data_rng = SeededRng::new(cfg.seed).fork(1);

    let mut sgd = Sgd::new();
    let mut grads = Grads::new();
    let mut log = TrainLog::default();
    let started = Instant::now();

    for i in 0..cfg.iterations {
        let lr = cfg.learning_rate_at(i);
        let case = &cases[data_rng.below(cases.len())];
        let x = augment_sample(case, hyper.v, cfg.augmentation, &mut data_rng)?;

        let (v, enc_cache) = encode_train(&x, &mut enc)?;
        let (s_tilde, dec_cache) = decode_train(&v, &mut dec)?;
        let loss = reconstruction_loss(&x, &s_tilde)?;
        if !loss.is_finite() {
            return Err(TrainError::Aborted {
                iteration: i,
                reason: format!("non-finite reconstruction loss {loss}"),
                checkpoint: snapshot(&[&|ck| enc.save_into(ck), &|ck| dec.save_into(ck)]),
            });
        }

        grads.zero();
        let d_logits = reconstruction_grad_logits(&x, &s_tilde)?;
        let d_v = decode_backward(&dec, &dec_cache, &d_logits, &mut grads)?;
        encode_backward(&enc, &enc_cache, &d_v, &mut grads)?;

        if let Err(reason) = sgd.apply(
            lr,
            &grads,
            enc.trainable_mut().into_iter().chain(dec.trainable_mut()),
        ) {
            return Err(TrainError::Aborted {
                iteration: i,
                reason,
                checkpoint: snapshot(&[&|ck| enc.save_into(ck), &|ck| dec.save_into(ck)]),
            });
        }

        log.records.push(TrainRecord {
            iteration: i,
            lr,
            loss_total: loss,
            loss_recon: Some(loss),
            loss_clf: None,
            elapsed_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok((enc, dec, log))
}

/// Classification training on top of a pretrained encoder. For iterations
/// below `freeze_until` the encoder runs in inference mode and receives no
/// updates: parameters and batch-norm running statistics stay bitwise
/// unchanged. Afterwards encoder and classifier update together.
pub fn train_joint(
    cases: &[CaseRecord],
    encoder: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, ClassifierParams, TrainLog), TrainError> {
    cfg.validate()?;
    if !matches!(cfg.phase, Phase::Joint | Phase::Scratch) {
        return Err(TrainError::Config(format!(
            "train_joint requires phase joint or scratch, got {}",
            cfg.phase
        )));
    }
    run_classification(cases, encoder, cfg)
}

/// Permanently frozen encoder: only the 2-layer classifier trains. Same rng
/// streams as `train_joint`, so a joint run with freeze_until = iterations
/// produces the identical classifier.
pub fn train_frozen(
    cases: &[CaseRecord],
    encoder: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<(ClassifierParams, TrainLog), TrainError> {
    cfg.validate()?;
    if !matches!(cfg.phase, Phase::Frozen | Phase::Joint) {
        return Err(TrainError::Config(format!(
            "train_frozen requires phase frozen (or joint), got {}",
            cfg.phase
        )));
    }
    let mut inner = cfg.clone();
    inner.freeze_until = inner.iterations;
    let (_, clf, log) = run_classification(cases, encoder, &inner)?;
    Ok((clf, log))
}

fn run_classification(
    cases: &[CaseRecord],
    encoder: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, ClassifierParams, TrainLog), TrainError> {
    if cases.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let eta = class_balance(cases)?;
    let v_size = encoder.input_size();
    let d = encoder.shape_dim();
    let m = Hyperparams::default_hidden_width(d);

    let mut enc = encoder.clone();
    let mut clf = ClassifierParams::init(d, m, &mut SeededRng::new(cfg.seed))?;
    let mut data_rng = SeededRng::new(cfg.seed).fork(1);

    // Encoded vectors are pure functions of (case, angles) while the encoder
    // is frozen, so the frozen span memoizes them.
    let mut frozen_cache: HashMap<(usize, Option<usize>), ShapeVector> = HashMap::new();

    let mut sgd = Sgd::new();
    let mut grads = Grads::new();
    let mut log = TrainLog::default();
    let started = Instant::now();

    for i in 0..cfg.iterations {
        let lr = cfg.learning_rate_at(i);
        let case_idx = data_rng.below(cases.len());
        let angle = if cfg.augmentation { Some(data_rng.below(27)) } else { None };
        let case = &cases[case_idx];
        let y = case.label.as_f64();
        let frozen = i < cfg.freeze_until;

        let (v, enc_cache) = if frozen {
            let key = (case_idx, angle);
            let v = match frozen_cache.get(&key) {
                Some(v) => v.clone(),
                None => {
                    let x = sample_tensor(case, v_size, angle)?;
                    let v = encode(&x, &enc)?;
                    frozen_cache.insert(key, v.clone());
                    v
                }
            };
            (v, None)
        } else {
            let x = sample_tensor(case, v_size, angle)?;
            let (v, cache) = encode_train(&x, &mut enc)?;
            (v, Some(cache))
        };

        let (p, clf_cache) = classify_cached(&v, &clf)?;
        let z = classify_logit(&v, &clf)?;
        let loss = classification_loss_logit(y, z, eta)?;
        if !loss.is_finite() {
            return Err(TrainError::Aborted {
                iteration: i,
                reason: format!("non-finite classification loss {loss}"),
                checkpoint: snapshot(&[&|ck| enc.save_into(ck), &|ck| clf.save_into(ck)]),
            });
        }

        grads.zero();
        let d_logit = classification_grad_logit(y, p, eta);
        let d_v = classify_backward(&clf, &clf_cache, d_logit, &mut grads)?;
        if let Some(cache) = &enc_cache {
            encode_backward(&enc, cache, &d_v, &mut grads)?;
        }

        if let Err(reason) = sgd.apply(
            lr,
            &grads,
            enc.trainable_mut().into_iter().chain(clf.trainable_mut()),
        ) {
            return Err(TrainError::Aborted {
                iteration: i,
                reason,
                checkpoint: snapshot(&[&|ck| enc.save_into(ck), &|ck| clf.save_into(ck)]),
            });
        }

        log.records.push(TrainRecord {
            iteration: i,
            lr,
            loss_total: loss,
            loss_recon: None,
            loss_clf: Some(loss),
            elapsed_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok((enc, clf, log))
}

/// Discriminative auto-encoder: keeps the decoder in the loop and minimizes
/// reconstruction + lambda * classification. The logged loss_clf column is
/// the unscaled classification term.
pub fn train_discriminative(
    cases: &[CaseRecord],
    encoder: &EncoderParams,
    decoder: &DecoderParams,
    cfg: &TrainConfig,
    lambda: f64,
) -> Result<(EncoderParams, DecoderParams, ClassifierParams, TrainLog), TrainError> {
    cfg.validate()?;
    if cfg.phase != Phase::Discriminative {
        return Err(TrainError::Config(format!(
            "train_discriminative requires phase discriminative, got {}",
            cfg.phase
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(TrainError::Config(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    if cases.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let eta = class_balance(cases)?;
    let v_size = encoder.input_size();

    let mut enc = encoder.clone();
    let mut dec = decoder.clone();
    let d = enc.shape_dim();
    let m = Hyperparams::default_hidden_width(d);
    let mut clf = ClassifierParams::init(d, m, &mut SeededRng::new(cfg.seed))?;
    let mut data_rng = SeededRng::new(cfg.seed).fork(1);

    let mut sgd = Sgd::new();
    let mut grads = Grads::new();
    let mut log = TrainLog::default();
    let started = Instant::now();

    for i in 0..cfg.iterations {
        let lr = cfg.learning_rate_at(i);
        let case_idx = data_rng.below(cases.len());
        let angle = if cfg.augmentation { Some(data_rng.below(27)) } else { None };
        let case = &cases[case_idx];
        let y = case.label.as_f64();
        let frozen = i < cfg.freeze_until;

        let x = sample_tensor(case, v_size, angle)?;
        let (v, enc_cache) = if frozen {
            (encode(&x, &enc)?, None)
        } else {
            let (v, cache) = encode_train(&x, &mut enc)?;
            (v, Some(cache))
        };
        let (s_tilde, dec_cache) = decode_train(&v, &mut dec)?;
        let (p, clf_cache) = classify_cached(&v, &clf)?;
        let z = classify_logit(&v, &clf)?;

        let loss_recon = reconstruction_loss(&x, &s_tilde)?;
        let loss_clf = classification_loss_logit(y, z, eta)?;
        let loss = loss_recon + lambda * loss_clf;
        if !loss.is_finite() {
            return Err(TrainError::Aborted {
                iteration: i,
                reason: format!("non-finite combined loss {loss}"),
                checkpoint: snapshot(&[
                    &|ck| enc.save_into(ck),
                    &|ck| dec.save_into(ck),
                    &|ck| clf.save_into(ck),
                ]),
            });
        }

        grads.zero();
        let d_logits = reconstruction_grad_logits(&x, &s_tilde)?;
        let d_v_recon = decode_backward(&dec, &dec_cache, &d_logits, &mut grads)?;
        let d_logit = lambda * classification_grad_logit(y, p, eta);
        let d_v_clf = classify_backward(&clf, &clf_cache, d_logit, &mut grads)?;
        if let Some(cache) = &enc_cache {
            let d_v: Vec<f64> = d_v_recon
                .iter()
                .zip(&d_v_clf)
                .map(|(a, b)| a + b)
                .collect();
            encode_backward(&enc, cache, &d_v, &mut grads)?;
        }

        if let Err(reason) = sgd.apply(
            lr,
            &grads,
            enc.trainable_mut()
                .into_iter()
                .chain(dec.trainable_mut())
                .chain(clf.trainable_mut()),
        ) {
            return Err(TrainError::Aborted {
                iteration: i,
                reason,
                checkpoint: snapshot(&[
                    &|ck| enc.save_into(ck),
                    &|ck| dec.save_into(ck),
                    &|ck| clf.save_into(ck),
                ]),
            });
        }

        log.records.push(TrainRecord {
            iteration: i,
            lr,
            loss_total: loss,
            loss_recon: Some(loss_recon),
            loss_clf: Some(loss_clf),
            elapsed_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok((enc, dec, clf, log))
}
