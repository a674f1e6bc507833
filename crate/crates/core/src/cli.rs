//! Command-line front end. Subcommands mirror the pipeline stages so each
//! ablation is a separate invocation over shared on-disk artifacts:
//!
//! ```text
//! gen       masks + manifest under <data_dir>/{benchmark,pretrain}
//! pretrain  auto-encoder checkpoint + iteration log
//! train     one classification pipeline -> checkpoint + log
//! eval      score a dataset with a checkpoint -> report + predictions CSV
//! cv        fold x seed cross-validation -> report + predictions CSV
//! roc       ROC CSV + AUC from a predictions file
//! ```
//!
//! Configuration resolves as preset < file < flags (`--set` pairs first,
//! then dedicated flags, in command-line order). Every command echoes the
//! fully resolved config to `<report_dir>/<command>.config` so any artifact
//! can be reproduced from the directory alone. Exit status is 0 iff all
//! requested artifacts were written.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::eval::{self, CellHead, CvConfig, EvalError, Pipeline, PredictionRow};
use crate::model::{encode, svm_train, ModelBundle, ModelError};
use crate::shapegen::{
    crop_and_rescale, generate_dataset, split_folds, CaseRecord, Dataset, Label, ShapegenError,
};
use crate::train::{
    pretrain_autoencoder, train_discriminative, train_frozen, train_joint, Phase, TrainError,
    TrainLog,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Msg(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Shapegen(#[from] ShapegenError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Parser, Debug)]
#[command(name = "voxshape", version, about = "Volumetric shape abnormality benchmark")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Baseline preset: desk or paper.
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
    /// Override one config key; repeatable, later wins.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Shape vector dimension.
    #[arg(long, global = true, value_name = "D")]
    pub shape_dim: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic benchmark and the pretraining pool.
    Gen(GenArgs),
    /// Pretrain the auto-encoder on normal masks.
    Pretrain(PretrainArgs),
    /// Train one classification pipeline on the benchmark.
    Train(TrainArgs),
    /// Score a dataset with a trained checkpoint.
    Eval(EvalArgs),
    /// Cross-validate a pipeline over folds and seeds.
    Cv(CvArgs),
    /// Compute a ROC curve and AUC from a predictions CSV.
    Roc(RocArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_name = "N")]
    pub count_normal: Option<usize>,
    #[arg(long, value_name = "N")]
    pub count_abnormal: Option<usize>,
    /// Lesion amplitude; controls class separability.
    #[arg(long, value_name = "EPS")]
    pub effect_size: Option<f64>,
    #[arg(long, value_name = "VOXELS")]
    pub grid_size: Option<usize>,
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Mask directory; defaults to <data_dir>/pretrain.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Checkpoint path; defaults to <checkpoint_dir>/ae.ck.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// One of: svm, frozen, joint, discriminative.
    #[arg(long, value_name = "NAME")]
    pub pipeline: String,
    /// Pretrained auto-encoder; defaults to <checkpoint_dir>/ae.ck.
    #[arg(long, value_name = "FILE")]
    pub ae_checkpoint: Option<PathBuf>,
    /// Hold this fold out of the training set.
    #[arg(long, value_name = "FOLD")]
    pub fold_exclude: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Trained model; defaults to <checkpoint_dir>/joint.ck.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Mask directory; defaults to <data_dir>/benchmark.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    /// One of: svm, frozen, joint, discriminative.
    #[arg(long, value_name = "NAME")]
    pub pipeline: String,
    /// Comma-separated run seeds; defaults to the config's `seeds`.
    #[arg(long, value_name = "LIST")]
    pub seeds: Option<String>,
    /// Worker threads for fold x seed cells.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    /// Pretrained auto-encoder; defaults to <checkpoint_dir>/ae.ck.
    #[arg(long, value_name = "FILE")]
    pub ae_checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RocArgs {
    /// Predictions CSV (`case_id,fold,seed,label,score`).
    #[arg(long, value_name = "FILE")]
    pub predictions: PathBuf,
}

pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let flags = collect_overrides(&cli)?;
    let cfg = match &cli.common.config {
        Some(path) => ExperimentConfig::from_file(path, &flags)?,
        None => ExperimentConfig::resolve(None, &flags)?,
    };
    match cli.command {
        Command::Gen(args) => cmd_gen(&cfg, &args),
        Command::Pretrain(args) => cmd_pretrain(&cfg, &args),
        Command::Train(args) => cmd_train(&cfg, &args),
        Command::Eval(args) => cmd_eval(&cfg, &args),
        Command::Cv(args) => cmd_cv(&cfg, &args),
        Command::Roc(args) => cmd_roc(&cfg, &args),
    }
}

/// Flatten dedicated flags into ordered config overrides: `--set` pairs
/// first, then named flags, so the named flags win.
fn collect_overrides(cli: &Cli) -> Result<Vec<(String, String)>, CliError> {
    let mut flags = Vec::new();
    if let Some(name) = &cli.common.preset {
        flags.push(("preset".into(), name.clone()));
    }
    for pair in &cli.common.set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            CliError::Msg(format!("--set expects KEY=VALUE, got `{pair}`"))
        })?;
        flags.push((key.trim().into(), value.trim().into()));
    }
    if let Some(d) = cli.common.shape_dim {
        flags.push(("shape_dim".into(), d.to_string()));
    }
    let mut named = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            flags.push((key.into(), v));
        }
    };
    match &cli.command {
        Command::Gen(a) => {
            named("count_normal", a.count_normal.map(|v| v.to_string()));
            named("count_abnormal", a.count_abnormal.map(|v| v.to_string()));
            named("lesion_amplitude", a.effect_size.map(|v| v.to_string()));
            named("grid_size", a.grid_size.map(|v| v.to_string()));
            named("seed", a.seed.map(|v| v.to_string()));
        }
        Command::Cv(a) => {
            named("seeds", a.seeds.clone());
            named("jobs", a.jobs.map(|v| v.to_string()));
        }
        _ => {}
    }
    Ok(flags)
}

/// Provenance: the resolved config lands next to the reports before any
/// work starts, so partial runs are still attributable.
fn echo_config(cfg: &ExperimentConfig, command: &str) -> Result<(), CliError> {
    let dir = PathBuf::from(&cfg.report_dir);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(format!("{command}.config")), cfg.render())?;
    Ok(())
}

fn load_dataset(dir: &Path, hint: &str) -> Result<Dataset, CliError> {
    Dataset::load(dir).map_err(|e| {
        CliError::Msg(format!("cannot load dataset at {}: {e}; {hint}", dir.display()))
    })
}

fn load_bundle(path: &Path, hint: &str) -> Result<ModelBundle, CliError> {
    ModelBundle::load(path).map_err(|e| {
        CliError::Msg(format!("cannot load checkpoint {}: {e}; {hint}", path.display()))
    })
}

fn parse_pipeline(name: &str) -> Result<Pipeline, CliError> {
    Pipeline::parse(name).ok_or_else(|| {
        CliError::Msg(format!(
            "unknown pipeline `{name}`: expected svm, frozen, joint, or discriminative"
        ))
    })
}

fn cmd_gen(cfg: &ExperimentConfig, _args: &GenArgs) -> Result<(), CliError> {
    echo_config(cfg, "gen")?;
    let phantom = cfg.phantom();
    let data_dir = PathBuf::from(&cfg.data_dir);

    let benchmark =
        generate_dataset(&phantom, cfg.count_normal, cfg.count_abnormal, cfg.seed)?;
    let bench_dir = data_dir.join("benchmark");
    benchmark.save(&bench_dir)?;

    // Disjoint normal-only pool for auto-encoder pretraining: offsetting the
    // master seed gives draws independent of the benchmark's.
    let pretrain = generate_dataset(&phantom, cfg.pretrain_count, 0, cfg.seed.wrapping_add(1))?;
    let pre_dir = data_dir.join("pretrain");
    pretrain.save(&pre_dir)?;

    println!(
        "wrote {} benchmark masks ({} normal, {} abnormal) to {}",
        benchmark.cases().len(),
        cfg.count_normal,
        cfg.count_abnormal,
        bench_dir.display()
    );
    println!("wrote {} pretraining masks to {}", pretrain.cases().len(), pre_dir.display());
    Ok(())
}

fn cmd_pretrain(cfg: &ExperimentConfig, args: &PretrainArgs) -> Result<(), CliError> {
    echo_config(cfg, "pretrain")?;
    let data_dir = args
        .data
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.data_dir).join("pretrain"));
    let dataset = load_dataset(&data_dir, "run `voxshape gen` first")?;
    let normals: Vec<CaseRecord> = dataset
        .cases()
        .iter()
        .filter(|c| c.label == Label::Normal)
        .cloned()
        .collect();

    let hyper = cfg.hyperparams()?;
    let tc = cfg.train_config(Phase::PretrainAe, cfg.seed);
    let (encoder, decoder, mut log) = pretrain_autoencoder(&normals, &hyper, &tc)?;

    let ckpt_dir = PathBuf::from(&cfg.checkpoint_dir);
    fs::create_dir_all(&ckpt_dir)?;
    let out = args.out.clone().unwrap_or_else(|| ckpt_dir.join("ae.ck"));
    let bundle = ModelBundle {
        hyper,
        encoder,
        decoder: Some(decoder),
        classifier: None,
        svm: None,
    };
    bundle.save(&out)?;
    log.checkpoint = Some(out.display().to_string());
    let log_path = ckpt_dir.join("pretrain.log.csv");
    log.save(&log_path)?;

    let last = log.records.last().map(|r| r.loss_total);
    println!(
        "pretrained on {} normals for {} iterations (final loss {})",
        normals.len(),
        tc.iterations,
        last.map(|l| l.to_string()).unwrap_or_else(|| "n/a".into())
    );
    println!("checkpoint {}; log {}", out.display(), log_path.display());
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, args: &TrainArgs) -> Result<(), CliError> {
    echo_config(cfg, "train")?;
    let pipeline = parse_pipeline(&args.pipeline)?;
    let dataset = load_dataset(
        &PathBuf::from(&cfg.data_dir).join("benchmark"),
        "run `voxshape gen` first",
    )?;
    if let Some(f) = args.fold_exclude {
        if f >= cfg.folds {
            return Err(CliError::Msg(format!(
                "--fold-exclude {f} out of range: config has {} folds",
                cfg.folds
            )));
        }
    }
    let folds = split_folds(&dataset, cfg.folds, cfg.seed)?;
    let train_cases: Vec<CaseRecord> = dataset
        .cases()
        .iter()
        .filter(|c| match args.fold_exclude {
            Some(f) => folds.fold_of(&c.case_id) != Some(f),
            None => true,
        })
        .cloned()
        .collect();

    let ae_path = args
        .ae_checkpoint
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.checkpoint_dir).join("ae.ck"));
    let ae = load_bundle(&ae_path, "run `voxshape pretrain` first")?;

    let mut tc = cfg.train_config(phase_of(pipeline), cfg.seed);
    let (bundle, log) = match pipeline {
        Pipeline::Svm => {
            let mut vectors = Vec::with_capacity(train_cases.len());
            let mut labels = Vec::with_capacity(train_cases.len());
            for case in &train_cases {
                let x = crop_and_rescale(&case.grid, ae.encoder.input_size())?.to_tensor();
                vectors.push(encode(&x, &ae.encoder)?);
                labels.push(case.label);
            }
            let svm = svm_train(&vectors, &labels, cfg.svm_c, cfg.seed)?;
            let bundle = ModelBundle { svm: Some(svm), classifier: None, ..ae };
            // No iterations to log; the empty log keeps the artifact set
            // uniform across pipelines.
            (bundle, TrainLog { records: Vec::new(), checkpoint: None })
        }
        Pipeline::Frozen => {
            tc.phase = Phase::Frozen;
            let (clf, log) = train_frozen(&train_cases, &ae.encoder, &tc)?;
            (ModelBundle { classifier: Some(clf), svm: None, ..ae }, log)
        }
        Pipeline::Joint => {
            tc.phase = Phase::Joint;
            let (encoder, clf, log) = train_joint(&train_cases, &ae.encoder, &tc)?;
            (ModelBundle { encoder, classifier: Some(clf), svm: None, ..ae }, log)
        }
        Pipeline::Discriminative => {
            tc.phase = Phase::Discriminative;
            let decoder = ae.decoder.as_ref().ok_or_else(|| {
                CliError::Msg(format!(
                    "checkpoint {} has no decoder; re-run `voxshape pretrain`",
                    ae_path.display()
                ))
            })?;
            let (encoder, decoder, clf, log) =
                train_discriminative(&train_cases, &ae.encoder, decoder, &tc, ae.hyper.lambda)?;
            let bundle = ModelBundle {
                encoder,
                decoder: Some(decoder),
                classifier: Some(clf),
                svm: None,
                ..ae
            };
            (bundle, log)
        }
    };

    let suffix = args.fold_exclude.map(|f| format!(".fold{f}")).unwrap_or_default();
    let ckpt_dir = PathBuf::from(&cfg.checkpoint_dir);
    fs::create_dir_all(&ckpt_dir)?;
    let out = ckpt_dir.join(format!("{}{suffix}.ck", pipeline.name()));
    bundle.save(&out)?;
    let mut log = log;
    log.checkpoint = Some(out.display().to_string());
    let log_path = ckpt_dir.join(format!("{}{suffix}.log.csv", pipeline.name()));
    log.save(&log_path)?;

    println!(
        "trained {} on {} cases{}",
        pipeline.name(),
        train_cases.len(),
        args.fold_exclude
            .map(|f| format!(" (fold {f} held out)"))
            .unwrap_or_default()
    );
    println!("checkpoint {}; log {}", out.display(), log_path.display());
    Ok(())
}

fn cmd_eval(cfg: &ExperimentConfig, args: &EvalArgs) -> Result<(), CliError> {
    echo_config(cfg, "eval")?;
    let ck_path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.checkpoint_dir).join("joint.ck"));
    let bundle = load_bundle(&ck_path, "run `voxshape train` first")?;
    let data_dir = args
        .data
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.data_dir).join("benchmark"));
    let dataset = load_dataset(&data_dir, "run `voxshape gen` first")?;

    // Standalone scoring is one pseudo-cell: fold 0, seed 0.
    let (head, name, threshold) = match (&bundle.svm, &bundle.classifier) {
        (Some(svm), _) => (CellHead::Svm(svm.clone()), "svm", 0.0),
        (None, Some(clf)) => (CellHead::Classifier(clf.clone()), "network", 0.5),
        (None, None) => {
            return Err(CliError::Msg(format!(
                "checkpoint {} has no classification head; run `voxshape train` first",
                ck_path.display()
            )))
        }
    };
    let mut rows = Vec::with_capacity(dataset.cases().len());
    for case in dataset.cases() {
        let score = eval::score_case(&bundle.encoder, &head, case, None)?;
        rows.push(PredictionRow {
            case_id: case.case_id.clone(),
            fold: 0,
            seed: 0,
            label: case.label.as_u8(),
            score,
        });
    }
    let report = eval::summarize(&rows, &[0], 1, name, threshold)?;

    let report_dir = PathBuf::from(&cfg.report_dir);
    let report_path = report_dir.join("eval.report");
    fs::write(&report_path, report.render())?;
    let pred_path = report_dir.join("eval_predictions.csv");
    fs::write(&pred_path, eval::write_predictions(&rows))?;

    print!("{}", report.render());
    println!("report {}; predictions {}", report_path.display(), pred_path.display());
    Ok(())
}

fn cmd_cv(cfg: &ExperimentConfig, args: &CvArgs) -> Result<(), CliError> {
    echo_config(cfg, "cv")?;
    let pipeline = parse_pipeline(&args.pipeline)?;
    let dataset = load_dataset(
        &PathBuf::from(&cfg.data_dir).join("benchmark"),
        "run `voxshape gen` first",
    )?;
    let folds = split_folds(&dataset, cfg.folds, cfg.seed)?;
    let ae_path = args
        .ae_checkpoint
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.checkpoint_dir).join("ae.ck"));
    let bundle = load_bundle(&ae_path, "run `voxshape pretrain` first")?;

    let cv_cfg = CvConfig {
        train: cfg.train_config(phase_of(pipeline), cfg.seed),
        svm_c: cfg.svm_c,
        jobs: cfg.jobs,
    };
    let outcome = eval::cross_validate(&dataset, &folds, pipeline, &cfg.seeds, &bundle, &cv_cfg)?;

    let report_dir = PathBuf::from(&cfg.report_dir);
    let report_path = report_dir.join(format!("cv_{}.report", pipeline.name()));
    fs::write(&report_path, outcome.report.render())?;
    let pred_path = report_dir.join(format!("cv_{}_predictions.csv", pipeline.name()));
    fs::write(&pred_path, eval::write_predictions(&outcome.predictions))?;

    print!("{}", outcome.report.render());
    println!("report {}; predictions {}", report_path.display(), pred_path.display());
    Ok(())
}

fn cmd_roc(cfg: &ExperimentConfig, args: &RocArgs) -> Result<(), CliError> {
    echo_config(cfg, "roc")?;
    let text = fs::read_to_string(&args.predictions).map_err(|e| {
        CliError::Msg(format!(
            "cannot read predictions {}: {e}; run `voxshape cv` or `voxshape eval` first",
            args.predictions.display()
        ))
    })?;
    let rows = eval::parse_predictions(&text)?;
    let curve = eval::roc_curve(&eval::to_records(&rows))?;

    let out = PathBuf::from(&cfg.report_dir).join("roc.csv");
    fs::write(&out, curve.to_csv())?;
    println!("auc = {}", curve.auc);
    println!("curve {}", out.display());
    Ok(())
}

/// TrainConfig phase carrying the right iteration span for each pipeline;
/// the cross-validation cells re-stamp the phase per pipeline anyway.
fn phase_of(pipeline: Pipeline) -> Phase {
    match pipeline {
        Pipeline::Svm | Pipeline::Frozen => Phase::Frozen,
        Pipeline::Joint => Phase::Joint,
        Pipeline::Discriminative => Phase::Discriminative,
    }
}
