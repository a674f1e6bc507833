//! Linear SVM over shape vectors.
//!
//! Deterministic full-batch subgradient descent on
//! 0.5 ||w||^2 + C * mean hinge(y (w.v + b)), labels mapped to -1/+1.
//! Working with the mean (C rescaled by the dataset size relative to the
//! sum form) plus exact grouping of duplicate points makes the optimizer a
//! pure function of the point multiset: duplicating the training set changes
//! nothing, bit for bit.

use std::collections::BTreeMap;

use crate::checkpoint::Checkpoint;
use crate::shapegen::Label;

use super::{take_vec, ModelError, ShapeVector};

const ITERATIONS: usize = 4000;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams {
    pub w: Vec<f64>,
    pub bias: f64,
    pub c: f64,
}

impl SvmParams {
    pub fn save_into(&self, ck: &mut Checkpoint) -> Result<(), ModelError> {
        ck.insert(
            "svm.w",
            crate::tensor::Tensor::new(vec![self.w.len()], self.w.clone())?,
        )?;
        ck.insert_scalar("svm.bias", self.bias)?;
        ck.insert_scalar("svm.c", self.c)?;
        Ok(())
    }

    pub fn load_from(ck: &Checkpoint, d: usize) -> Result<Self, ModelError> {
        Ok(SvmParams {
            w: take_vec(ck, "svm.w", d)?,
            bias: ck.get_scalar("svm.bias")?,
            c: ck.get_scalar("svm.c")?,
        })
    }
}

/// Trains the linear SVM. The process is deterministic; `_seed` is accepted
/// for interface symmetry with the network trainers and currently unused.
pub fn svm_train(
    vectors: &[ShapeVector],
    labels: &[Label],
    c: f64,
    _seed: u64,
) -> Result<SvmParams, ModelError> {
    if vectors.is_empty() || vectors.len() != labels.len() {
        return Err(ModelError::Svm(format!(
            "need matching nonempty vectors and labels, got {} and {}",
            vectors.len(),
            labels.len()
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(ModelError::Svm(format!(
            "regularization C must be finite and positive, got {c}"
        )));
    }
    let d = vectors[0].values.len();
    for v in vectors {
        if v.values.len() != d {
            return Err(ModelError::Svm(format!(
                "inconsistent feature dims: {} vs {d}",
                v.values.len()
            )));
        }
        if !v.values.iter().all(|x| x.is_finite()) {
            return Err(ModelError::Svm("non-finite feature vector".into()));
        }
    }
    if !labels.contains(&Label::Normal) || !labels.contains(&Label::Abnormal) {
        return Err(ModelError::Svm(
            "training set must contain both classes".into(),
        ));
    }

    // Group points by exact bit pattern. Weights k_i/n are identical for a
    // duplicated multiset, and the BTreeMap fixes the summation order
    // independently of input order.
    let mut groups: BTreeMap<(u8, Vec<u64>), usize> = BTreeMap::new();
    for (v, &l) in vectors.iter().zip(labels) {
        let key = (
            l.as_u8(),
            v.values.iter().map(|x| x.to_bits()).collect::<Vec<u64>>(),
        );
        *groups.entry(key).or_insert(0) += 1;
    }
    let n = vectors.len() as f64;
    let points: Vec<(f64, Vec<f64>, f64)> = groups
        .into_iter()
        .map(|((lbl, bits), count)| {
            let y = if lbl == 1 { 1.0 } else { -1.0 };
            let v: Vec<f64> = bits.into_iter().map(f64::from_bits).collect();
            (y, v, count as f64 / n)
        })
        .collect();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for t in 0..ITERATIONS {
        let step = 1.0 / (t + 1) as f64;
        let mut g_w = w.clone();
        let mut g_b = 0.0;
        for (y, v, weight) in &points {
            let margin = y * (dot(&w, v) + b);
            if margin < 1.0 {
                let s = c * weight * y;
                for (gj, vj) in g_w.iter_mut().zip(v) {
                    *gj -= s * vj;
                }
                g_b -= s;
            }
        }
        for (wj, gj) in w.iter_mut().zip(&g_w) {
            *wj -= step * gj;
        }
        b -= step * g_b;
    }
    if !w.iter().all(|x| x.is_finite()) || !b.is_finite() {
        return Err(ModelError::Svm("training diverged to non-finite weights".into()));
    }
    Ok(SvmParams { w, bias: b, c })
}

/// Decision score w.v + b; the classification threshold is 0.
pub fn svm_predict(params: &SvmParams, v: &ShapeVector) -> Result<f64, ModelError> {
    if v.values.len() != params.w.len() {
        return Err(ModelError::Svm(format!(
            "feature dim {} does not match model dim {}",
            v.values.len(),
            params.w.len()
        )));
    }
    Ok(dot(&params.w, &v.values) + params.bias)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (&x, &y)| x.mul_add(y, acc))
}
