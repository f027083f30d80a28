//! Optimization: Adam, the epoch loop with validation-driven model selection,
//! and checkpoint persistence.

mod adam;
mod checkpoint;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};

use crate::data::{load_samples, stack_batch, Batch, DataError, Manifest, Sample, SplitSpec};
use crate::model::{ModelError, UPetConfig, UPetModel};
use crate::objectives::{combined_loss, EvalReport, LossBreakdown, MetricError};
use crate::tensor::{Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("the {0} split contains no samples")]
    EmptySplit(String),
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        value: f64,
    },
    #[error("non-finite gradient of {param} at epoch {epoch}, batch {batch}")]
    NonFiniteGradient {
        epoch: usize,
        batch: usize,
        param: String,
    },
    #[error("no gradient for parameter {0}")]
    MissingGradient(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
    /// Validate every this many epochs; the final epoch is always validated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 4,
            lr: 1e-3,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &["epochs", "batch_size", "lr", "seed", "eval_every"];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn num<F: std::str::FromStr>(k: &str, v: &str) -> Result<F, TrainError> {
            v.trim()
                .parse()
                .map_err(|_| TrainError::Config(format!("{k}: cannot parse {v:?} as a number")))
        }
        match key {
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            other => {
                return Err(TrainError::Config(format!(
                    "unknown training key {other:?}"
                )))
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(TrainError::Config(format!(
                "epochs, batch_size and eval_every must be at least 1 (got {}, {}, {})",
                self.epochs, self.batch_size, self.eval_every
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Loss components averaged over one epoch's training samples, plus the
/// validation report when the epoch was validated.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub ce: f64,
    pub l1_main: f64,
    /// `Σ_ℓ w_ℓ · l1_aux[ℓ]`, so that `total = ce + λ · (l1_main + l1_aux_sum)`.
    pub l1_aux_sum: f64,
    pub total: f64,
    pub val: Option<EvalReport>,
}

pub const EPOCH_LOG_HEADER: &str =
    "epoch,ce,l1_main,l1_aux_sum,total,val_accuracy,val_f1_macro,val_auc_cn,val_auc_ad,val_auc_mci,val_mae";

/// CSV text of an epoch log. Unvalidated epochs leave the `val_*` fields
/// empty; undefined metrics print as `undefined`.
pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());
    let mut s = format!("{EPOCH_LOG_HEADER}\n");
    for e in log {
        let _ = write!(
            s,
            "{},{},{},{},{}",
            e.epoch, e.ce, e.l1_main, e.l1_aux_sum, e.total
        );
        match &e.val {
            Some(r) => {
                let _ = writeln!(
                    s,
                    ",{},{},{},{},{},{}",
                    r.accuracy,
                    r.f1_macro,
                    opt(r.auc[0]),
                    opt(r.auc[2]),
                    opt(r.auc[1]),
                    opt(r.mae)
                );
            }
            None => s.push_str(",,,,,,\n"),
        }
    }
    s
}

pub fn write_epoch_log(log: &[EpochLog], path: &Path) -> Result<(), TrainError> {
    std::fs::write(path, epoch_log_csv(log)).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The validated epoch with the highest macro F1 (earliest on ties).
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Total loss of every optimization step, in order.
    pub step_losses: Vec<f64>,
    /// Parameters and optimizer state after the final epoch.
    pub last: Checkpoint,
}

/// Class probabilities, per-volume PET errors and the summary report of an
/// evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub probs: Vec<Vec<f64>>,
    pub maes: Vec<f64>,
    /// Sample-weighted mean loss components.
    pub loss: LossBreakdown,
}

/// Forward + backward on one batch; returns the gradient of every parameter
/// (store order) and the loss components.
pub fn compute_gradients(
    model: &UPetModel<f32>,
    batch: &Batch,
) -> Result<(Vec<Vec<f32>>, LossBreakdown), TrainError> {
    let mut tape = Tape::new();
    let input = tape.constant(batch.mri.clone());
    let out = model.forward(&mut tape, input, true)?;
    let targets = (batch.paired_count() > 0).then(|| tape.constant(batch.pet.clone()));
    let terms = combined_loss(
        &mut tape,
        &out,
        &batch.labels,
        targets,
        &batch.pet_mask,
        model.config(),
    )?;
    tape.backward(terms.total)?;
    Ok((out.params.grads(&tape), terms.breakdown))
}

fn softmax_rows(values: &[f32], k: usize) -> Vec<Vec<f64>> {
    values
        .chunks(k)
        .map(|row| {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
            let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Inference-only pass over `samples`: class probabilities from the
/// aggregated logits, PET MAE on every paired sample.
pub fn evaluate(
    model: &UPetModel<f32>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<Evaluation, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit("evaluation".into()));
    }
    let dims = model.config().input_shape;
    let voxels: usize = dims.iter().product();
    let mut probs = Vec::with_capacity(samples.len());
    let mut maes = Vec::new();
    let mut labels = Vec::with_capacity(samples.len());
    let mut loss = LossBreakdown {
        ce: 0.0,
        l1_main: 0.0,
        l1_aux: Vec::new(),
        total: 0.0,
        paired_count: 0,
    };
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = stack_batch(samples, chunk, dims);
        let mut tape = Tape::new();
        let input = tape.constant(batch.mri.clone());
        let out = model.forward(&mut tape, input, false)?;
        let targets = (batch.paired_count() > 0).then(|| tape.constant(batch.pet.clone()));
        let terms = combined_loss(
            &mut tape,
            &out,
            &batch.labels,
            targets,
            &batch.pet_mask,
            model.config(),
        )?;
        let n = batch.len() as f64;
        loss.ce += terms.breakdown.ce * n;
        loss.l1_main += terms.breakdown.l1_main * n;
        loss.total += terms.breakdown.total * n;
        loss.paired_count += terms.breakdown.paired_count;
        probs.extend(softmax_rows(
            tape.value(out.class_logits).data(),
            model.config().num_classes(),
        ));
        labels.extend_from_slice(&batch.labels);
        if let Some(pred) = out.pet_pred {
            let pred = tape.value(pred).data();
            for (j, &paired) in batch.pet_mask.iter().enumerate() {
                if paired {
                    let p = &pred[j * voxels..(j + 1) * voxels];
                    let t = &batch.pet.data()[j * voxels..(j + 1) * voxels];
                    let sum: f64 = p
                        .iter()
                        .zip(t)
                        .map(|(a, b)| (*a as f64 - *b as f64).abs())
                        .sum();
                    maes.push(sum / voxels as f64);
                }
            }
        }
    }
    let n = samples.len() as f64;
    loss.ce /= n;
    loss.l1_main /= n;
    loss.total /= n;
    let report = EvalReport::compute(&probs, &labels, &maes)?;
    Ok(Evaluation {
        report,
        probs,
        maes,
        loss,
    })
}

/// [`train_samples_with`] without a progress callback.
pub fn train_samples(
    model: &mut UPetModel<f32>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_samples_with(model, train, val, cfg, |_| {})
}

/// Runs `cfg.epochs` epochs of Adam on `train`, validating on `val`. On
/// return `model` holds the final-epoch parameters; the outcome carries the
/// best-validated checkpoint. `on_epoch` sees every log row as it is produced.
pub fn train_samples_with(
    model: &mut UPetModel<f32>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train".into()));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation".into()));
    }
    let dims = model.config().input_shape;
    let mut adam = AdamState::new(model.params(), cfg.adam());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let (mut ce, mut l1, mut aux, mut total) = (0.0, 0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = stack_batch(train, chunk, dims);
            let (grads, loss) = compute_gradients(model, &batch)?;
            if !loss.total.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    value: loss.total,
                });
            }
            if let Some(i) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(TrainError::NonFiniteGradient {
                    epoch,
                    batch: b,
                    param: model.params().names()[i].clone(),
                });
            }
            adam_step(model.params_mut(), &grads, &mut adam)?;
            step_losses.push(loss.total);
            let n = batch.len() as f64;
            ce += loss.ce * n;
            l1 += loss.l1_main * n;
            aux += loss.weighted_aux(model.config()) * n;
            total += loss.total * n;
        }
        let n = train.len() as f64;
        let validate = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        let val_report = if validate {
            Some(evaluate(model, val, cfg.batch_size)?.report)
        } else {
            None
        };
        let entry = EpochLog {
            epoch,
            ce: ce / n,
            l1_main: l1 / n,
            l1_aux_sum: aux / n,
            total: total / n,
            val: val_report,
        };
        on_epoch(&entry);
        if let Some(r) = &entry.val {
            if best
                .as_ref()
                .map_or(true, |b| r.f1_macro > b.report.f1_macro)
            {
                best = Some(Checkpoint::capture(model, &adam, epoch, r.clone()));
            }
        }
        log.push(entry);
    }
    let last_report = log
        .last()
        .and_then(|e| e.val.clone())
        .expect("final epoch is validated");
    Ok(TrainOutcome {
        best: best.expect("final epoch is validated"),
        last: Checkpoint::capture(model, &adam, cfg.epochs, last_report),
        log,
        step_losses,
    })
}

/// Loads the train and validation subjects of `splits` from `manifest` and
/// trains on them.
pub fn train(
    model: &mut UPetModel<f32>,
    manifest: &Manifest,
    splits: &SplitSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let (train, val) = load_split_samples(manifest, splits, model.config())?;
    train_samples(model, &train, &val, cfg)
}

/// Preprocessed train and validation samples of `splits`.
pub fn load_split_samples(
    manifest: &Manifest,
    splits: &SplitSpec,
    config: &UPetConfig,
) -> Result<(Vec<Sample>, Vec<Sample>), TrainError> {
    let load = |name: &str, ids: &[String]| -> Result<Vec<Sample>, TrainError> {
        let records = manifest.select(ids);
        if records.is_empty() {
            return Err(TrainError::EmptySplit(name.into()));
        }
        Ok(load_samples(manifest, &records, config.input_shape)?)
    };
    Ok((
        load("train", &splits.train)?,
        load("validation", &splits.val)?,
    ))
}
