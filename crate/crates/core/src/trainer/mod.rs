//! Optimization: RMSProp, pretraining, fine-tuning, best-validation
//! checkpoint selection and dataset evaluation.

mod config;
mod eval;
mod optim;

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::TrainConfig;
pub use eval::{evaluate_dataset, MetricsReport, RecordMetrics};
pub use optim::{rmsprop_step, RmsProp};

use crate::data::{augment, images_to_tensor, AugmentPolicy, PatchRecord};
use crate::error::{Error, Result};
use crate::loss::combined_loss;
use crate::mask::{binarize_batch, BinaryMask};
use crate::metrics::dice_score;
use crate::nn::Mode;
use crate::segresnet::{decode_weights, encode_weights, Model, ModelConfig};

/// Seed offset separating augmentation draws from the shuffle stream.
const AUGMENT_SEED_SALT: u64 = 0xa5a5_5a5a_0f0f_f0f0;

/// One row of the training log. Epoch 0 is the evaluation before any update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
}

/// Weights captured at the end of an epoch, as `SRW1` bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub log: EpochLog,
    pub weights: Vec<u8>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        decode_weights(&self.weights, "checkpoint")
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    /// Smallest validation loss, or the last epoch when selection is off.
    pub best: Checkpoint,
    pub last: Checkpoint,
    /// Starting weights when fine-tuning from a pretrained file.
    pub pretrained_init: Option<Vec<u8>>,
}

impl TrainOutcome {
    /// Writes `best.srw`, `last.srw`, `train_log.csv` and, after
    /// fine-tuning, `pretrained-init.srw` into `dir`.
    pub fn write_artifacts(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(p, e))
        };
        write("best.srw", &self.best.weights)?;
        write("last.srw", &self.last.weights)?;
        if let Some(init) = &self.pretrained_init {
            write("pretrained-init.srw", init)?;
        }
        write_log(&self.history, dir.join("train_log.csv"))
    }
}

/// CSV with header `epoch,train_loss,val_loss,val_dice`.
pub fn write_log(history: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["epoch", "train_loss", "val_loss", "val_dice"])
        .map_err(err)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.8}", r.train_loss),
            format!("{:.8}", r.val_loss),
            format!("{:.8}", r.val_dice),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean combined loss and mean per-record Dice at threshold 0.5, in infer mode.
pub fn evaluate_loss(model: &Model, records: &[PatchRecord], config: &TrainConfig) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::contract("cannot evaluate an empty record set"));
    }
    let (mut loss_sum, mut dice_sum) = (0.0, 0.0);
    for chunk in records.chunks(config.batch_size) {
        let input = images_to_tensor(chunk.iter().map(|r| &r.image))?;
        let targets: Vec<BinaryMask> = chunk.iter().map(|r| r.mask.clone()).collect();
        let prob = model.predict(&input)?;
        loss_sum += combined_loss(&prob, &targets, &config.loss_weights)?.total * chunk.len() as f64;
        for (pred, truth) in binarize_batch(&prob, 0.5)?.iter().zip(&targets) {
            dice_sum += dice_score(pred, truth)?;
        }
    }
    let n = records.len() as f64;
    Ok((loss_sum / n, dice_sum / n))
}

fn check_records(model: &Model, records: &[PatchRecord], what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::contract(format!("{what} split is empty")));
    }
    let p = model.config().patch_size;
    if let Some(r) = records.iter().find(|r| r.image.shape() != (p, p)) {
        return Err(Error::contract(format!(
            "{what} record {} is {:?}, model expects {p}x{p} patches",
            r.source_id,
            r.image.shape()
        )));
    }
    Ok(())
}

fn snapshot(model: &Model, log: EpochLog) -> Checkpoint {
    Checkpoint {
        log,
        weights: encode_weights(model),
    }
}

/// Trains `model` in place and returns the per-epoch log with the best and
/// last checkpoints. On return `model` holds the last weights.
pub fn train(
    model: &mut Model,
    train_set: &[PatchRecord],
    val_set: &[PatchRecord],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    run(model, train_set, val_set, config)
}

fn run(
    model: &mut Model,
    train_set: &[PatchRecord],
    val_set: &[PatchRecord],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    check_records(model, train_set, "train")?;
    check_records(model, val_set, "validation")?;
    let policy = AugmentPolicy {
        seed: config.seed ^ AUGMENT_SEED_SALT,
        ..if config.augment {
            AugmentPolicy::default()
        } else {
            AugmentPolicy::none()
        }
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = RmsProp::new(model);

    let (train_loss, _) = evaluate_loss(model, train_set, config)?;
    let (val_loss, val_dice) = evaluate_loss(model, val_set, config)?;
    let first = EpochLog {
        epoch: 0,
        train_loss,
        val_loss,
        val_dice,
    };
    info!("epoch 0: train {train_loss:.5} val {val_loss:.5} dice {val_dice:.4}");
    let mut history = vec![first];
    let mut best = snapshot(model, first);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut drawn = 0u64;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let records: Vec<PatchRecord> = idx
                .iter()
                .map(|&i| {
                    let mut rng = policy.rng_for(drawn);
                    drawn += 1;
                    augment(&train_set[i], &policy, &mut rng)
                })
                .collect();
            let input = images_to_tensor(records.iter().map(|r| &r.image))?;
            let targets: Vec<BinaryMask> = records.into_iter().map(|r| r.mask).collect();
            let prob = model.forward(&input, Mode::Train)?;
            let loss = combined_loss(&prob, &targets, &config.loss_weights)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged { epoch, batch });
            }
            model.backward(&loss.grad)?;
            opt.step(model, config)?;
            loss_sum += loss.total * idx.len() as f64;
            debug!("epoch {epoch} batch {batch}: loss {:.5}", loss.total);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_dice) = evaluate_loss(model, val_set, config)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
            });
        }
        let row = EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_dice,
        };
        info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} dice {val_dice:.4}");
        history.push(row);
        if val_loss < best.log.val_loss {
            best = snapshot(model, row);
        }
    }
    let last = snapshot(model, *history.last().expect("epoch 0 row"));
    if !config.select_best_val {
        best = last.clone();
    }
    Ok(TrainOutcome {
        history,
        best,
        last,
        pretrained_init: None,
    })
}

/// Fine-tunes every parameter of a pretrained model. When `expected` is
/// given the stored config must match it. Zero epochs return the pretrained
/// weights as both checkpoints.
pub fn finetune(
    pretrained: impl AsRef<Path>,
    expected: Option<&ModelConfig>,
    target_train: &[PatchRecord],
    target_val: &[PatchRecord],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let path = pretrained.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    finetune_from_bytes(
        &bytes,
        &path.display().to_string(),
        expected,
        target_train,
        target_val,
        config,
    )
}

pub fn finetune_from_bytes(
    bytes: &[u8],
    what: &str,
    expected: Option<&ModelConfig>,
    target_train: &[PatchRecord],
    target_val: &[PatchRecord],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut model = decode_weights(bytes, what)?;
    if let Some(exp) = expected {
        if model.config() != exp {
            return Err(Error::format(
                what,
                8,
                format!("weights are for config [{}], expected [{exp}]", model.config()),
            ));
        }
    }
    let mut cfg = config.clone();
    let zero_epochs = cfg.epochs == 0;
    cfg.epochs = 1;
    cfg.validate()?;
    cfg.epochs = config.epochs;
    let mut outcome = run(&mut model, target_train, target_val, &cfg)?;
    if zero_epochs {
        outcome.best.weights = bytes.to_vec();
        outcome.last.weights = bytes.to_vec();
    }
    outcome.pretrained_init = Some(bytes.to_vec());
    Ok(outcome)
}
