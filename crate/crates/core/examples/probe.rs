// Temporary calibration probe: how much class signal survives each stage.
use std::path::Path;

use voxshape::eval::{dsc, roc_curve, PredictionRecord};
use voxshape::model::{encode, svm_predict, svm_train, ModelBundle, ShapeVector};
use voxshape::shapegen::{crop_and_rescale, Dataset, Label};

fn auc_of(scores: &[(f64, Label)]) -> f64 {
    let preds: Vec<PredictionRecord> = scores
        .iter()
        .enumerate()
        .map(|(i, &(p, label))| PredictionRecord {
            case_id: format!("c{i}"),
            y: (label == Label::Abnormal) as u8,
            p,
        })
        .collect();
    roc_curve(&preds).unwrap().auc
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let bundle = ModelBundle::load(Path::new(&args[1])).unwrap();
    let ds = Dataset::load(Path::new(&args[2])).unwrap();
    let v = bundle.encoder.input_size();

    let rescaled: Vec<_> = ds
        .cases()
        .iter()
        .map(|c| (crop_and_rescale(&c.grid, v).unwrap(), c.label))
        .collect();

    // Raw-mask baseline: does the lesion survive normalization at all?
    let normals: Vec<usize> =
        (0..rescaled.len()).filter(|&i| rescaled[i].1 == Label::Normal).collect();
    let abnormals: Vec<usize> =
        (0..rescaled.len()).filter(|&i| rescaled[i].1 == Label::Abnormal).collect();
    let mut nn = 0.0;
    let mut na = 0.0;
    let k = 30;
    for j in 0..k {
        nn += dsc(&rescaled[normals[j]].0, &rescaled[normals[j + k]].0).unwrap();
        na += dsc(&rescaled[normals[j]].0, &rescaled[abnormals[j]].0).unwrap();
    }
    println!("mask dsc: normal-normal {:.4}  normal-abnormal {:.4}", nn / k as f64, na / k as f64);

    let counts: Vec<(f64, Label)> =
        rescaled.iter().map(|(g, l)| (g.count_foreground() as f64, *l)).collect();
    println!("voxel-count auc {:.4}", auc_of(&counts));

    // Shape-vector statistics.
    let feats: Vec<(ShapeVector, Label)> = ds
        .cases()
        .iter()
        .map(|c| {
            let x = crop_and_rescale(&c.grid, v).unwrap().to_tensor();
            (encode(&x, &bundle.encoder).unwrap(), c.label)
        })
        .collect();
    let d = feats[0].0.values.len();
    let n = feats.len() as f64;
    let mut mean = vec![0.0; d];
    for (f, _) in &feats {
        for (m, x) in mean.iter_mut().zip(&f.values) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; d];
    for (f, _) in &feats {
        for (s, (x, m)) in var.iter_mut().zip(f.values.iter().zip(&mean)) {
            *s += (x - m) * (x - m) / n;
        }
    }
    let stds: Vec<f64> = var.iter().map(|x| x.sqrt()).collect();
    let scale: f64 = mean.iter().map(|x| x.abs()).sum::<f64>() / d as f64;
    println!(
        "features: dim {d}, |mean| avg {:.4}, std avg {:.4}, std max {:.4}",
        scale,
        stds.iter().sum::<f64>() / d as f64,
        stds.iter().cloned().fold(0.0, f64::max)
    );

    let dist = |a: &ShapeVector, b: &ShapeVector| -> f64 {
        a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let mut d_nn = 0.0;
    let mut d_na = 0.0;
    for j in 0..k {
        d_nn += dist(&feats[normals[j]].0, &feats[normals[j + k]].0);
        d_na += dist(&feats[normals[j]].0, &feats[abnormals[j]].0);
    }
    println!("feature l2: normal-normal {:.4}  normal-abnormal {:.4}", d_nn / k as f64, d_na / k as f64);

    // Linear separability upper bound: SVM fit and scored on the whole set.
    let vecs: Vec<ShapeVector> = feats.iter().map(|(f, _)| f.clone()).collect();
    let labels: Vec<Label> = feats.iter().map(|(_, l)| *l).collect();
    let svm = svm_train(&vecs, &labels, 1.0, 0).unwrap();
    let scores: Vec<(f64, Label)> = feats
        .iter()
        .map(|(f, l)| (svm_predict(&svm, f).unwrap(), *l))
        .collect();
    println!("svm train-fit auc {:.4}", auc_of(&scores));
}
