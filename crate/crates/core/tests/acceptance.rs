//! Acceptance suite: nine numbered criteria, one PASS/FAIL line each. The
//! hard assertion is deferred to the end so a single run reports every
//! criterion. Criteria 1 through 4 are oracle and protocol checks and finish
//! in seconds; 5 through 9 train real models at the desk preset and dominate
//! the runtime (hours on one core, since 9 repeats the whole benchmark to
//! prove bitwise determinism). Watch progress with:
//!
//!     cargo test --test acceptance -- --nocapture

mod support;

use std::fmt::Write as _;
use std::time::Instant;

use support::{conv3d_oracle, deconv3d_oracle, max_abs_diff, relative_error};
use voxshape::checkpoint::Checkpoint;
use voxshape::config::ExperimentConfig;
use voxshape::eval::{
    autoencoder_dsc, cross_validate, dsc, evaluate_cells, roc_curve, CvConfig, Pipeline,
    PredictionRecord,
};
use voxshape::model::{
    classification_grad_logit, classification_loss_logit, classify_backward, classify_cached,
    classify_logit, encode_backward, encode_train, reconstruction_grad_logits,
    reconstruction_loss, ClassifierParams, EncoderParams, Grads, ModelBundle,
};
use voxshape::rng::SeededRng;
use voxshape::shapegen::{generate_dataset, split_folds, AbnormalMode, CaseRecord, PhantomConfig};
use voxshape::tensor::{
    batchnorm_backward, batchnorm_forward, conv3d_backward, conv3d_forward, deconv3d_backward,
    deconv3d_forward, linear_backward, linear_forward, relu_backward, relu_forward,
    sigmoid_backward, sigmoid_forward, sigmoid_scalar, BatchNormState, ConvSpec, Mode, Tensor,
};
use voxshape::train::{pretrain_autoencoder, train_joint, Phase};
use voxshape::voxel::VoxelGrid;

const FD_H: f64 = 1e-4;

#[test]
fn acceptance_criteria() {
    let mut failed: Vec<String> = Vec::new();

    let (r, secs) = timed(c1_gradient_checks);
    report(&mut failed, "1 gradient-correctness", &r, secs);
    let (r, secs) = timed(c2_convolution_oracles);
    report(&mut failed, "2 convolution-oracles", &r, secs);
    let (r, secs) = timed(c3_metric_oracles);
    report(&mut failed, "3 metric-oracles", &r, secs);
    let (r, secs) = timed(c4_schedule_and_freeze);
    report(&mut failed, "4 schedule-and-freeze", &r, secs);

    let names = [
        "5 desk-reconstruction",
        "6 joint-cv-auc",
        "7 pipeline-ordering",
        "8 corruption-asymmetry",
    ];
    let first = run_benchmark_suite();
    match &first {
        Ok(b) => {
            for i in 0..4 {
                let r = if b.passes[i] {
                    Ok(b.details[i].clone())
                } else {
                    Err(b.details[i].clone())
                };
                report(&mut failed, names[i], &r, b.secs[i]);
            }
        }
        Err(e) => {
            for name in names {
                report(&mut failed, name, &Err(format!("benchmark suite aborted: {e}")), 0.0);
            }
        }
    }

    let t9 = Instant::now();
    say(&format!("  [bench] repeating the benchmark suite to check determinism"));
    let second = run_benchmark_suite();
    let r9 = determinism_verdict(&first, &second);
    report(&mut failed, "9 determinism", &r9, t9.elapsed().as_secs_f64());

    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}

fn timed(f: impl FnOnce() -> Result<String, String>) -> (Result<String, String>, f64) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed().as_secs_f64())
}

fn report(failed: &mut Vec<String>, name: &str, outcome: &Result<String, String>, secs: f64) {
    match outcome {
        Ok(detail) => say(&format!("criterion {name}: PASS ({detail}) [{secs:.1}s]")),
        Err(detail) => {
            say(&format!("criterion {name}: FAIL ({detail}) [{secs:.1}s]"));
            failed.push(name.to_string());
        }
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Print and flush: progress must survive piped output and a killed run.
fn say(msg: &str) {
    use std::io::Write as _;
    println!("{msg}");
    let _ = std::io::stdout().flush();
}

// --- criterion 1: analytic gradients against central finite differences ---

fn c1_gradient_checks() -> Result<String, String> {
    let mut rng = SeededRng::new(4101);
    let mut instances = 0usize;
    let mut worst_prim = 0.0f64;

    for i in 0..15 {
        conv_instance(&mut rng, i, false, &mut worst_prim)?;
        instances += 1;
    }
    for i in 0..15 {
        conv_instance(&mut rng, i, true, &mut worst_prim)?;
        instances += 1;
    }
    for i in 0..15 {
        batchnorm_instance(&mut rng, i, &mut worst_prim)?;
        instances += 1;
    }
    for i in 0..15 {
        linear_instance(&mut rng, i, &mut worst_prim)?;
        instances += 1;
    }
    for i in 0..15 {
        relu_instance(&mut rng, i, &mut worst_prim)?;
        instances += 1;
    }
    for i in 0..10 {
        sigmoid_instance(&mut rng, i, &mut worst_prim)?;
        instances += 1;
    }
    for i in 0..10 {
        let y = rng.below(2) as f64;
        let eta = rng.uniform(0.3, 2.0);
        let z = rng.uniform(-3.0, 3.0);
        let analytic = classification_grad_logit(y, sigmoid_scalar(z), eta);
        let fd = (classification_loss_logit(y, z + FD_H, eta).map_err(s)?
            - classification_loss_logit(y, z - FD_H, eta).map_err(s)?)
            / (2.0 * FD_H);
        prim_check(format!("classification[{i}] d_logit"), fd, analytic, &mut worst_prim)?;
        instances += 1;
    }
    for i in 0..10 {
        reconstruction_instance(&mut rng, i, &mut worst_prim)?;
        instances += 1;
    }

    // Full encode -> classify composition, differentiated end to end.
    let mut worst_comp = 0.0f64;
    let mut probes = 0usize;
    for net in 0..5 {
        probes += composition_instance(&mut rng, net, &mut worst_comp)?;
    }

    Ok(format!(
        "{instances} primitive instances, worst rel {worst_prim:.2e} (tol 1e-5); \
         {probes} composition probes, worst rel {worst_comp:.2e} (tol 1e-4)"
    ))
}

fn prim_check(tag: String, fd: f64, analytic: f64, worst: &mut f64) -> Result<(), String> {
    let rel = relative_error(fd, analytic);
    if rel > *worst {
        *worst = rel;
    }
    if rel < 1e-5 {
        Ok(())
    } else {
        Err(format!("{tag}: fd {fd} vs analytic {analytic} (rel {rel:.2e})"))
    }
}

/// Valid random geometry for both the direct and the transposed kernel.
fn random_spec(rng: &mut SeededRng) -> (ConvSpec, [usize; 3]) {
    loop {
        let k = 1 + rng.below(3);
        let spec = ConvSpec::new(
            1 + rng.below(3),
            1 + rng.below(3),
            [k, k, k],
            1 + rng.below(2),
            rng.below(2),
        );
        let spec = match spec {
            Ok(v) => v,
            Err(_) => continue,
        };
        let in_sp = [3 + rng.below(4), 3 + rng.below(4), 3 + rng.below(4)];
        if spec.output_spatial(in_sp).is_ok() && spec.deconv_output_spatial(in_sp).is_ok() {
            return (spec, in_sp);
        }
    }
}

fn conv_instance(
    rng: &mut SeededRng,
    i: usize,
    transposed: bool,
    worst: &mut f64,
) -> Result<(), String> {
    let (spec, in_sp) = random_spec(rng);
    let co = spec.out_channels;
    let x = Tensor::uniform(&[spec.in_channels, in_sp[0], in_sp[1], in_sp[2]], 1.0, rng);
    let wd = if transposed { spec.deconv_weight_dims() } else { spec.conv_weight_dims() };
    let w = Tensor::uniform(&wd, 0.6, rng);
    let b: Vec<f64> = (0..co).map(|_| rng.uniform(-0.4, 0.4)).collect();
    let fwd = |x: &Tensor, w: &Tensor, b: &[f64]| -> Result<Tensor, String> {
        if transposed {
            deconv3d_forward(x, w, b, &spec).map_err(s)
        } else {
            conv3d_forward(x, w, b, &spec).map_err(s)
        }
    };
    let out0 = fwd(&x, &w, &b)?;
    let r = Tensor::uniform(out0.dims(), 1.0, rng);
    let (dx, dw, db) = if transposed {
        deconv3d_backward(&x, &w, &r, &spec).map_err(s)?
    } else {
        conv3d_backward(&x, &w, &r, &spec).map_err(s)?
    };
    let op = if transposed { "deconv3d" } else { "conv3d" };
    for _ in 0..2 {
        let ix = rng.below(x.len());
        let mut xp = x.clone();
        xp.data_mut()[ix] += FD_H;
        let mut xm = x.clone();
        xm.data_mut()[ix] -= FD_H;
        let fd = (fwd(&xp, &w, &b)?.dot(&r) - fwd(&xm, &w, &b)?.dot(&r)) / (2.0 * FD_H);
        prim_check(format!("{op}[{i}] d_input[{ix}]"), fd, dx.data()[ix], worst)?;

        let iw = rng.below(w.len());
        let mut wp = w.clone();
        wp.data_mut()[iw] += FD_H;
        let mut wm = w.clone();
        wm.data_mut()[iw] -= FD_H;
        let fd = (fwd(&x, &wp, &b)?.dot(&r) - fwd(&x, &wm, &b)?.dot(&r)) / (2.0 * FD_H);
        prim_check(format!("{op}[{i}] d_weights[{iw}]"), fd, dw.data()[iw], worst)?;

        let ib = rng.below(b.len());
        let mut bp = b.clone();
        bp[ib] += FD_H;
        let mut bm = b.clone();
        bm[ib] -= FD_H;
        let fd = (fwd(&x, &w, &bp)?.dot(&r) - fwd(&x, &w, &bm)?.dot(&r)) / (2.0 * FD_H);
        prim_check(format!("{op}[{i}] d_bias[{ib}]"), fd, db[ib], worst)?;
    }
    Ok(())
}

fn batchnorm_instance(rng: &mut SeededRng, i: usize, worst: &mut f64) -> Result<(), String> {
    let channels = 1 + rng.below(3);
    let spatial = 4 + rng.below(6);
    let x = Tensor::uniform(&[channels, spatial], 1.0, rng);
    let mut st = BatchNormState::new(channels);
    for c in 0..channels {
        st.gamma[c] = rng.uniform(0.6, 1.4);
        st.beta[c] = rng.uniform(-0.3, 0.3);
    }
    let mut run = st.clone();
    let (out0, cache) = batchnorm_forward(&x, &mut run, Mode::Train).map_err(s)?;
    let cache = cache.expect("train mode caches");
    let r = Tensor::uniform(out0.dims(), 1.0, rng);
    let (dx, dgamma, dbeta) = batchnorm_backward(&cache, &run, &r).map_err(s)?;
    // Train-mode output depends on x, gamma, beta only; the running-stat
    // update inside forward is irrelevant to the probe loss.
    let loss = |x: &Tensor, st: &BatchNormState| -> Result<f64, String> {
        let mut tmp = st.clone();
        Ok(batchnorm_forward(x, &mut tmp, Mode::Train).map_err(s)?.0.dot(&r))
    };
    for _ in 0..2 {
        let ix = rng.below(x.len());
        let mut xp = x.clone();
        xp.data_mut()[ix] += FD_H;
        let mut xm = x.clone();
        xm.data_mut()[ix] -= FD_H;
        let fd = (loss(&xp, &st)? - loss(&xm, &st)?) / (2.0 * FD_H);
        prim_check(format!("batchnorm[{i}] d_x[{ix}]"), fd, dx.data()[ix], worst)?;
    }
    let c = rng.below(channels);
    let mut gp = st.clone();
    gp.gamma[c] += FD_H;
    let mut gm = st.clone();
    gm.gamma[c] -= FD_H;
    let fd = (loss(&x, &gp)? - loss(&x, &gm)?) / (2.0 * FD_H);
    prim_check(format!("batchnorm[{i}] d_gamma[{c}]"), fd, dgamma[c], worst)?;
    let mut bp = st.clone();
    bp.beta[c] += FD_H;
    let mut bm = st.clone();
    bm.beta[c] -= FD_H;
    let fd = (loss(&x, &bp)? - loss(&x, &bm)?) / (2.0 * FD_H);
    prim_check(format!("batchnorm[{i}] d_beta[{c}]"), fd, dbeta[c], worst)
}

fn linear_instance(rng: &mut SeededRng, i: usize, worst: &mut f64) -> Result<(), String> {
    let n = 2 + rng.below(6);
    let m = 1 + rng.below(5);
    let x = Tensor::uniform(&[n], 1.0, rng);
    let w = Tensor::uniform(&[m, n], 0.8, rng);
    let b: Vec<f64> = (0..m).map(|_| rng.uniform(-0.5, 0.5)).collect();
    let out0 = linear_forward(&x, &w, &b).map_err(s)?;
    let r = Tensor::uniform(out0.dims(), 1.0, rng);
    let (dx, dw, db) = linear_backward(&x, &w, &r).map_err(s)?;
    let loss = |x: &Tensor, w: &Tensor, b: &[f64]| -> Result<f64, String> {
        Ok(linear_forward(x, w, b).map_err(s)?.dot(&r))
    };
    let ix = rng.below(n);
    let mut xp = x.clone();
    xp.data_mut()[ix] += FD_H;
    let mut xm = x.clone();
    xm.data_mut()[ix] -= FD_H;
    let fd = (loss(&xp, &w, &b)? - loss(&xm, &w, &b)?) / (2.0 * FD_H);
    prim_check(format!("linear[{i}] d_x[{ix}]"), fd, dx.data()[ix], worst)?;
    let iw = rng.below(w.len());
    let mut wp = w.clone();
    wp.data_mut()[iw] += FD_H;
    let mut wm = w.clone();
    wm.data_mut()[iw] -= FD_H;
    let fd = (loss(&x, &wp, &b)? - loss(&x, &wm, &b)?) / (2.0 * FD_H);
    prim_check(format!("linear[{i}] d_w[{iw}]"), fd, dw.data()[iw], worst)?;
    let ib = rng.below(m);
    let mut bp = b.clone();
    bp[ib] += FD_H;
    let mut bm = b.clone();
    bm[ib] -= FD_H;
    let fd = (loss(&x, &w, &bp)? - loss(&x, &w, &bm)?) / (2.0 * FD_H);
    prim_check(format!("linear[{i}] d_b[{ib}]"), fd, db[ib], worst)
}

fn relu_instance(rng: &mut SeededRng, i: usize, worst: &mut f64) -> Result<(), String> {
    let len = 4 + rng.below(12);
    let mut x = Tensor::uniform(&[len], 1.0, rng);
    // FD is meaningless across the kink, so keep samples away from zero.
    for v in x.data_mut() {
        if v.abs() < 1e-2 {
            *v = 0.5f64.copysign(*v);
        }
    }
    let out0 = relu_forward(&x);
    let r = Tensor::uniform(out0.dims(), 1.0, rng);
    let dx = relu_backward(&x, &r).map_err(s)?;
    for _ in 0..2 {
        let ix = rng.below(len);
        let mut xp = x.clone();
        xp.data_mut()[ix] += FD_H;
        let mut xm = x.clone();
        xm.data_mut()[ix] -= FD_H;
        let fd = (relu_forward(&xp).dot(&r) - relu_forward(&xm).dot(&r)) / (2.0 * FD_H);
        prim_check(format!("relu[{i}] d_x[{ix}]"), fd, dx.data()[ix], worst)?;
    }
    Ok(())
}

fn sigmoid_instance(rng: &mut SeededRng, i: usize, worst: &mut f64) -> Result<(), String> {
    let len = 3 + rng.below(8);
    let x = Tensor::uniform(&[len], 3.0, rng);
    let out0 = sigmoid_forward(&x);
    let r = Tensor::uniform(out0.dims(), 1.0, rng);
    let dx = sigmoid_backward(&out0, &r).map_err(s)?;
    for _ in 0..2 {
        let ix = rng.below(len);
        let mut xp = x.clone();
        xp.data_mut()[ix] += FD_H;
        let mut xm = x.clone();
        xm.data_mut()[ix] -= FD_H;
        let fd = (sigmoid_forward(&xp).dot(&r) - sigmoid_forward(&xm).dot(&r)) / (2.0 * FD_H);
        prim_check(format!("sigmoid[{i}] d_x[{ix}]"), fd, dx.data()[ix], worst)?;
    }
    Ok(())
}

fn reconstruction_instance(rng: &mut SeededRng, i: usize, worst: &mut f64) -> Result<(), String> {
    let len = 6 + rng.below(20);
    let mut target = Tensor::zeros(&[len]);
    for v in target.data_mut() {
        *v = rng.below(2) as f64;
    }
    let logits = Tensor::uniform(&[len], 2.0, rng);
    let grad = reconstruction_grad_logits(&target, &sigmoid_forward(&logits)).map_err(s)?;
    let loss = |l: &Tensor| -> Result<f64, String> {
        reconstruction_loss(&target, &sigmoid_forward(l)).map_err(s)
    };
    for _ in 0..2 {
        let ix = rng.below(len);
        let mut lp = logits.clone();
        lp.data_mut()[ix] += FD_H;
        let mut lm = logits.clone();
        lm.data_mut()[ix] -= FD_H;
        let fd = (loss(&lp)? - loss(&lm)?) / (2.0 * FD_H);
        prim_check(format!("reconstruction[{i}] d_logits[{ix}]"), fd, grad.data()[ix], worst)?;
    }
    Ok(())
}

fn random_mask(v: usize, rng: &mut SeededRng) -> Tensor {
    let mut t = Tensor::zeros(&[1, v, v, v]);
    for x in t.data_mut() {
        *x = if rng.next_f64() < 0.35 { 1.0 } else { 0.0 };
    }
    t
}

fn scramble_bn(enc: &mut EncoderParams, rng: &mut SeededRng) {
    for b in &mut enc.blocks {
        for bn in [&mut b.bn_a, &mut b.bn_b] {
            for c in 0..bn.gamma.len() {
                bn.gamma[c] = rng.uniform(0.6, 1.4);
                bn.beta[c] = rng.uniform(-0.3, 0.3);
            }
        }
    }
}

fn perturb(enc: &mut EncoderParams, clf: &mut ClassifierParams, name: &str, idx: usize, delta: f64) {
    for (n, slice) in enc.trainable_mut().into_iter().chain(clf.trainable_mut()) {
        if n == name {
            slice[idx] += delta;
            return;
        }
    }
    panic!("unknown parameter {name}");
}

/// One random network: end-to-end encode -> classify gradient against FD on
/// randomly chosen parameters. Returns the number of probes taken.
fn composition_instance(rng: &mut SeededRng, net: usize, worst: &mut f64) -> Result<usize, String> {
    let mut enc0 = EncoderParams::init(8, 16, rng).map_err(s)?;
    scramble_bn(&mut enc0, rng);
    let clf0 = ClassifierParams::init(16, 16, rng).map_err(s)?;
    let mask = random_mask(8, rng);
    let y = (net % 2) as f64;
    let eta = rng.uniform(0.5, 1.5);

    let loss_of = |enc: &EncoderParams, clf: &ClassifierParams| -> f64 {
        let mut e = enc.clone();
        let (v, _) = encode_train(&mask, &mut e).unwrap();
        let z = classify_logit(&v, clf).unwrap();
        classification_loss_logit(y, z, eta).unwrap()
    };

    let mut grads = Grads::new();
    let mut e = enc0.clone();
    let (v, cache) = encode_train(&mask, &mut e).map_err(s)?;
    let (p, clf_cache) = classify_cached(&v, &clf0).map_err(s)?;
    let d_logit = classification_grad_logit(y, p, eta);
    let d_v = classify_backward(&clf0, &clf_cache, d_logit, &mut grads).map_err(s)?;
    encode_backward(&enc0, &cache, &d_v, &mut grads).map_err(s)?;

    let mut shapes: Vec<(String, usize)> = Vec::new();
    {
        let mut e = enc0.clone();
        let mut c = clf0.clone();
        for (n, slice) in e.trainable_mut().into_iter().chain(c.trainable_mut()) {
            shapes.push((n, slice.len()));
        }
    }
    let probes = 8;
    for probe in 0..probes {
        let (name, len) = &shapes[rng.below(shapes.len())];
        let idx = rng.below(*len);
        let mut ep = enc0.clone();
        let mut cp = clf0.clone();
        perturb(&mut ep, &mut cp, name, idx, FD_H);
        let mut em = enc0.clone();
        let mut cm = clf0.clone();
        perturb(&mut em, &mut cm, name, idx, -FD_H);
        let fd = (loss_of(&ep, &cp) - loss_of(&em, &cm)) / (2.0 * FD_H);
        let analytic = grads.get(name).expect("gradient present")[idx];
        let rel = relative_error(fd, analytic);
        if rel > *worst {
            *worst = rel;
        }
        if rel >= 1e-4 {
            return Err(format!(
                "composition net {net} probe {probe} at {name}[{idx}]: fd {fd} vs analytic {analytic} (rel {rel:.2e})"
            ));
        }
    }
    Ok(probes)
}

// --- criterion 2: production kernels against direct-summation oracles ---

fn c2_convolution_oracles() -> Result<String, String> {
    let mut rng = SeededRng::new(4202);
    let mut worst_fwd = 0.0f64;
    let mut worst_pair = 0.0f64;
    for i in 0..100 {
        let (spec, in_sp) = random_spec(&mut rng);
        let transposed = i % 2 == 1;
        let x = Tensor::uniform(&[spec.in_channels, in_sp[0], in_sp[1], in_sp[2]], 1.0, &mut rng);
        let wd = if transposed { spec.deconv_weight_dims() } else { spec.conv_weight_dims() };
        let w = Tensor::uniform(&wd, 1.0, &mut rng);
        let b: Vec<f64> = (0..spec.out_channels).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (fast, slow) = if transposed {
            (deconv3d_forward(&x, &w, &b, &spec).map_err(s)?, deconv3d_oracle(&x, &w, &b, &spec))
        } else {
            (conv3d_forward(&x, &w, &b, &spec).map_err(s)?, conv3d_oracle(&x, &w, &b, &spec))
        };
        let diff = max_abs_diff(&fast, &slow);
        if diff > worst_fwd {
            worst_fwd = diff;
        }
        if diff > 1e-12 {
            return Err(format!("shape {i} ({spec:?}, in {in_sp:?}): max |fast - oracle| = {diff:.3e}"));
        }

        // Adjoint pairing with zero bias: <A x, y> = <x, A^T y>.
        let zb = vec![0.0; spec.out_channels];
        let (out, d_input) = if transposed {
            let out = deconv3d_forward(&x, &w, &zb, &spec).map_err(s)?;
            let y = Tensor::uniform(out.dims(), 1.0, &mut rng);
            let (dx, _, _) = deconv3d_backward(&x, &w, &y, &spec).map_err(s)?;
            ((out.dot(&y)), x.dot(&dx))
        } else {
            let out = conv3d_forward(&x, &w, &zb, &spec).map_err(s)?;
            let y = Tensor::uniform(out.dims(), 1.0, &mut rng);
            let (dx, _, _) = conv3d_backward(&x, &w, &y, &spec).map_err(s)?;
            ((out.dot(&y)), x.dot(&dx))
        };
        let rel = relative_error(out, d_input);
        if rel > worst_pair {
            worst_pair = rel;
        }
        if rel > 1e-12 {
            return Err(format!("shape {i}: adjoint pairing {out} vs {d_input} (rel {rel:.3e})"));
        }
    }
    Ok(format!(
        "100 shapes: forward max |diff| {worst_fwd:.2e}, adjoint pairing worst rel {worst_pair:.2e} (tol 1e-12)"
    ))
}

// --- criterion 3: AUC and DSC against hand oracles ---

fn concordance(preds: &[PredictionRecord]) -> f64 {
    let pos: Vec<f64> = preds.iter().filter(|r| r.y == 1).map(|r| r.p).collect();
    let neg: Vec<f64> = preds.iter().filter(|r| r.y == 0).map(|r| r.p).collect();
    let mut total = 0.0;
    for &pp in &pos {
        for &pn in &neg {
            total += if pp > pn {
                1.0
            } else if pp == pn {
                0.5
            } else {
                0.0
            };
        }
    }
    total / (pos.len() * neg.len()) as f64
}

fn c3_metric_oracles() -> Result<String, String> {
    let mut rng = SeededRng::new(4303);
    let mut worst = 0.0f64;
    for set in 0..1000 {
        let n_pos = 1 + rng.below(10);
        let n_neg = 1 + rng.below(10);
        let mut preds = Vec::with_capacity(n_pos + n_neg);
        for j in 0..(n_pos + n_neg) {
            preds.push(PredictionRecord {
                case_id: format!("s{set}c{j}"),
                y: (j < n_pos) as u8,
                // Coarse score grid so ties occur routinely.
                p: rng.below(8) as f64 / 7.0,
            });
        }
        let auc = roc_curve(&preds).map_err(s)?.auc;
        let diff = (auc - concordance(&preds)).abs();
        if diff > worst {
            worst = diff;
        }
        if diff > 1e-12 {
            return Err(format!("set {set}: |auc - concordance| = {diff:.3e}"));
        }
    }

    let fixture: Vec<PredictionRecord> = [(1u8, 0.9), (1, 0.7), (1, 0.4), (0, 0.8), (0, 0.3), (0, 0.2)]
        .iter()
        .enumerate()
        .map(|(i, &(y, p))| PredictionRecord { case_id: format!("f{i}"), y, p })
        .collect();
    let auc = roc_curve(&fixture).map_err(s)?.auc;
    if (auc - 7.0 / 9.0).abs() > 1e-12 {
        return Err(format!("six-record fixture: auc {auc}, want 7/9"));
    }

    let mut a = VoxelGrid::new([3, 3, 3]);
    a.set([0, 0, 0], true);
    a.set([1, 1, 1], true);
    a.set([2, 2, 2], true);
    let mut b = VoxelGrid::new([3, 3, 3]);
    b.set([0, 1, 0], true);
    let mut c = VoxelGrid::new([3, 3, 3]);
    c.set([0, 0, 0], true);
    c.set([1, 1, 1], true);
    let same = dsc(&a, &a).map_err(s)?;
    let none = dsc(&a, &b).map_err(s)?;
    let partial = dsc(&a, &c).map_err(s)?;
    if same != 1.0 || none != 0.0 || partial != 0.8 {
        return Err(format!("DSC hand cases: got {same}, {none}, {partial}, want 1, 0, 0.8"));
    }

    Ok(format!(
        "1000 random sets, max |auc - concordance| {worst:.2e} (tol 1e-12); fixture auc = 7/9; DSC hand cases exact"
    ))
}

// --- criterion 4: published schedule and the freeze window ---

fn tiny_cases(n_normal: usize, n_abnormal: usize) -> Vec<CaseRecord> {
    let cfg = PhantomConfig {
        grid_size: 24,
        base_radii_range: [(4.0, 6.0), (5.0, 7.0), (6.0, 8.0)],
        bump_count: 3,
        bump_amplitude_range: (0.08, 0.2),
        lesion_amplitude: 1.0,
        lesion_radius_range: (2.0, 3.5),
        abnormal_mode: AbnormalMode::Mixed,
    };
    generate_dataset(&cfg, n_normal, n_abnormal, 77).unwrap().cases().to_vec()
}

fn encoder_bytes(enc: &EncoderParams) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.ck");
    let mut ck = Checkpoint::new();
    enc.save_into(&mut ck).unwrap();
    ck.save(&path).unwrap();
    std::fs::read(&path).unwrap()
}

fn c4_schedule_and_freeze() -> Result<String, String> {
    let cfg = ExperimentConfig::paper();
    let ae = cfg.train_config(Phase::PretrainAe, cfg.seed);
    if ae.iterations != 40_000 || ae.base_lr != 1e-6 {
        return Err(format!(
            "pretrain schedule off: {} iterations at {}",
            ae.iterations, ae.base_lr
        ));
    }
    let tc = cfg.train_config(Phase::Joint, cfg.seed);
    if tc.iterations != 40_000
        || tc.base_lr != 5e-4
        || tc.lr_decay_points != vec![20_000, 30_000]
        || tc.freeze_until != 5_000
    {
        return Err(format!("joint schedule off: {tc:?}"));
    }
    // Decayed rates are products, so compare at 1e-12 relative.
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b;
    for (it, want) in [
        (0usize, 5e-4),
        (19_999, 5e-4),
        (20_000, 5e-5),
        (29_999, 5e-5),
        (30_000, 5e-6),
        (39_999, 5e-6),
    ] {
        let got = tc.learning_rate_at(it);
        if !close(got, want) {
            return Err(format!("lr at iteration {it}: {got}, want {want}"));
        }
    }

    // Truncated dry run: while the freeze window covers the whole span the
    // encoder stays bytewise at its initialization; once the window ends it
    // must move. The paper-scale window is 5,000 of 40,000 iterations.
    let cases = tiny_cases(3, 2);
    let mut rng = SeededRng::new(4404);
    let enc0 = EncoderParams::init(8, 16, &mut rng).map_err(s)?;
    let before = encoder_bytes(&enc0);
    let mut dry = cfg.train_config(Phase::Joint, 9);
    dry.iterations = 10;
    dry.freeze_until = 10;
    dry.base_lr = 1e-3;
    dry.lr_decay_points.clear();
    let (enc_frozen, _, _) = train_joint(&cases, &enc0, &dry).map_err(s)?;
    if encoder_bytes(&enc_frozen) != before {
        return Err("encoder bytes changed inside the freeze window".into());
    }
    dry.freeze_until = 5;
    let (enc_live, _, _) = train_joint(&cases, &enc0, &dry).map_err(s)?;
    if encoder_bytes(&enc_live) == before {
        return Err("encoder bytes did not change after the freeze window ended".into());
    }

    Ok("pretrain 40000 @ 1e-6; joint lr 5e-4 -> 5e-5 @ 20000 -> 5e-6 @ 30000, freeze 5000; \
        freeze window holds bytewise on a truncated run"
        .into())
}

// --- criteria 5 through 8: the desk benchmark, end to end ---

struct BenchOutcome {
    passes: [bool; 4],
    details: [String; 4],
    secs: [f64; 4],
    /// Rendered reports in fixed order, compared bytewise by criterion 9.
    reports: Vec<String>,
}

const REPORT_NAMES: [&str; 6] =
    ["reconstruction", "cv-joint", "cv-frozen", "cv-svm", "cv-discriminative", "corruption"];

fn run_benchmark_suite() -> Result<BenchOutcome, String> {
    let cfg = ExperimentConfig::desk();
    let phantom = cfg.phantom();
    let hyper = cfg.hyperparams().map_err(s)?;
    let mut passes = [false; 4];
    let mut details = [(); 4].map(|_| String::new());
    let mut secs = [0.0f64; 4];
    let mut reports = Vec::new();

    // Criterion 5: auto-encoder pretraining reconstructs its training pool.
    let t = Instant::now();
    say(&format!("  [bench] generating pretrain pool ({} normals)", cfg.pretrain_count));
    let pool =
        generate_dataset(&phantom, cfg.pretrain_count, 0, cfg.seed.wrapping_add(1)).map_err(s)?;
    let ae_cfg = cfg.train_config(Phase::PretrainAe, cfg.seed);
    say(&format!("  [bench] pretraining auto-encoder ({} iterations)", ae_cfg.iterations));
    let (encoder, decoder, _log) =
        pretrain_autoencoder(pool.cases(), &hyper, &ae_cfg).map_err(s)?;
    let dscs = autoencoder_dsc(&encoder, &decoder, pool.cases(), 0.5).map_err(s)?;
    let mean = dscs.iter().sum::<f64>() / dscs.len() as f64;
    let mut rep = String::new();
    writeln!(rep, "recon.dsc.mean = {mean}").unwrap();
    for (case, d) in pool.cases().iter().zip(&dscs) {
        writeln!(rep, "recon.dsc.{} = {}", case.case_id, d).unwrap();
    }
    reports.push(rep);
    passes[0] = mean >= 0.90;
    details[0] = format!(
        "mean training recon DSC {:.4} over {} cases (gate 0.90)",
        mean,
        dscs.len()
    );
    secs[0] = t.elapsed().as_secs_f64();

    // Criterion 6: joint cross-validation clears the AUC gate.
    let t = Instant::now();
    say(&format!(
        "  [bench] generating benchmark ({} normal / {} abnormal)",
        cfg.count_normal, cfg.count_abnormal
    ));
    let dataset =
        generate_dataset(&phantom, cfg.count_normal, cfg.count_abnormal, cfg.seed).map_err(s)?;
    let folds = split_folds(&dataset, cfg.folds, cfg.seed).map_err(s)?;
    let bundle = ModelBundle {
        hyper,
        encoder,
        decoder: Some(decoder),
        classifier: None,
        svm: None,
    };
    let cv_cfg = |phase: Phase| CvConfig {
        train: cfg.train_config(phase, cfg.seed),
        svm_c: cfg.svm_c,
        jobs: 4,
    };
    say(&format!(
        "  [bench] cross-validating joint ({} folds x {} seeds)",
        cfg.folds,
        cfg.seeds.len()
    ));
    let joint = cross_validate(
        &dataset,
        &folds,
        Pipeline::Joint,
        &cfg.seeds,
        &bundle,
        &cv_cfg(Phase::Joint),
    )
    .map_err(s)?;
    let joint_auc = joint.report.auc_mean;
    say(&format!("  [bench] joint auc.mean = {joint_auc:.4}"));
    reports.push(joint.report.render());
    passes[1] = joint_auc >= 0.95;
    details[1] = format!(
        "joint mean pooled AUC {:.4} over {} seeds (gate 0.95)",
        joint_auc,
        cfg.seeds.len()
    );
    secs[1] = t.elapsed().as_secs_f64();

    // Criterion 7: pipeline ordering, with the discriminative variant's
    // seed-to-seed spread reported alongside.
    let t = Instant::now();
    say(&format!("  [bench] cross-validating frozen"));
    let frozen = cross_validate(
        &dataset,
        &folds,
        Pipeline::Frozen,
        &cfg.seeds,
        &bundle,
        &cv_cfg(Phase::Frozen),
    )
    .map_err(s)?;
    let frozen_auc = frozen.report.auc_mean;
    say(&format!("  [bench] frozen auc.mean = {frozen_auc:.4}"));
    reports.push(frozen.report.render());
    drop(frozen);
    say(&format!("  [bench] cross-validating svm"));
    let svm = cross_validate(
        &dataset,
        &folds,
        Pipeline::Svm,
        &cfg.seeds,
        &bundle,
        &cv_cfg(Phase::Frozen),
    )
    .map_err(s)?;
    let svm_auc = svm.report.auc_mean;
    say(&format!("  [bench] svm auc.mean = {svm_auc:.4}"));
    reports.push(svm.report.render());
    drop(svm);
    say(&format!("  [bench] cross-validating discriminative"));
    let disc = cross_validate(
        &dataset,
        &folds,
        Pipeline::Discriminative,
        &cfg.seeds,
        &bundle,
        &cv_cfg(Phase::Discriminative),
    )
    .map_err(s)?;
    let (disc_auc, disc_std) = (disc.report.auc_mean, disc.report.auc_std);
    say(&format!("  [bench] discriminative auc.mean = {disc_auc:.4} (std {disc_std:.4})"));
    reports.push(disc.report.render());
    drop(disc);
    passes[2] = joint_auc >= frozen_auc && frozen_auc >= svm_auc - 0.02;
    details[2] = format!(
        "joint {joint_auc:.4} >= frozen {frozen_auc:.4} >= svm {svm_auc:.4} - 0.02; \
         discriminative seed-to-seed std {disc_std:.4} (mean {disc_auc:.4}, reported)"
    );
    secs[2] = t.elapsed().as_secs_f64();

    // Criterion 8: heavier test-time mask corruption costs more sensitivity
    // than specificity.
    let t = Instant::now();
    say(&format!("  [bench] re-scoring joint cells under mask corruption"));
    let (rep87, _) =
        evaluate_cells(&joint.cells, &dataset, &folds, Pipeline::Joint, Some(0.87)).map_err(s)?;
    let (rep71, _) =
        evaluate_cells(&joint.cells, &dataset, &folds, Pipeline::Joint, Some(0.71)).map_err(s)?;
    let d_sens = rep87.sensitivity_mean - rep71.sensitivity_mean;
    let d_spec = rep87.specificity_mean - rep71.specificity_mean;
    let mut rep = String::new();
    writeln!(rep, "corruption.dsc87.sensitivity.mean = {}", rep87.sensitivity_mean).unwrap();
    writeln!(rep, "corruption.dsc87.specificity.mean = {}", rep87.specificity_mean).unwrap();
    writeln!(rep, "corruption.dsc71.sensitivity.mean = {}", rep71.sensitivity_mean).unwrap();
    writeln!(rep, "corruption.dsc71.specificity.mean = {}", rep71.specificity_mean).unwrap();
    writeln!(rep, "delta.sensitivity = {d_sens}").unwrap();
    writeln!(rep, "delta.specificity = {d_spec}").unwrap();
    rep.push_str(&rep87.render());
    rep.push_str(&rep71.render());
    reports.push(rep);
    passes[3] = d_sens > d_spec;
    details[3] = format!(
        "DSC 0.87 -> 0.71: sensitivity drops {d_sens:+.4}, specificity drops {d_spec:+.4}"
    );
    secs[3] = t.elapsed().as_secs_f64();

    Ok(BenchOutcome { passes, details, secs, reports })
}

fn determinism_verdict(
    first: &Result<BenchOutcome, String>,
    second: &Result<BenchOutcome, String>,
) -> Result<String, String> {
    match (first, second) {
        (Ok(a), Ok(b)) => {
            for (i, (x, y)) in a.reports.iter().zip(&b.reports).enumerate() {
                if x != y {
                    return Err(format!("{} report differs between reruns", REPORT_NAMES[i]));
                }
            }
            Ok(format!("{} reports byte-identical across independent reruns", a.reports.len()))
        }
        _ => Err("benchmark suite did not complete twice; determinism not assessable".into()),
    }
}
