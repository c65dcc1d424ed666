//! Training loop: normalization, feature-space augmentation, label-smoothed
//! cross-entropy, global-norm clipping, AdamW with warmup + cosine annealing,
//! and early stopping on validation loss.

mod optim;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentConfig, FeatureTable, Normalizer};
use crate::error::{Error, Result};
use crate::nn::{argmax, forward, BoundParams, Mode, Model};
use crate::seed;
use crate::tensor::{Graph, Tensor};

pub use optim::{
    adamw_step, clip_gradients, cosine_lr, scheduled_lr, AdamWState, ADAM_EPS, BETA1, BETA2,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr_init: 1e-3,
            lr_min: 1e-6,
            warmup_epochs: 5,
            weight_decay: 1e-4,
            label_smoothing: 0.1,
            clip_norm: 1.0,
            patience: 30,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_init > 0.0) {
            return bad("lr_init must be positive");
        }
        if !(self.lr_min >= 0.0) || self.lr_min > self.lr_init {
            return bad("lr_min must lie in [0, lr_init]");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 1)");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        self.augment.validate()
    }
}

/// Mean over the batch of `−Σ_c q_c ln max(p̂_c, 1e-12)` with
/// `q = (1 − ε)·onehot(y) + ε/C`. `probs` is row-major `[B, C]`.
pub fn label_smoothed_ce(
    probs: &[f64],
    classes: usize,
    labels: &[usize],
    smoothing: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(vec![labels.len(), classes], probs.to_vec())?);
    let l = g.smoothed_cross_entropy(p, labels, smoothing)?;
    Ok(g.value(l).data()[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainTrace {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn write_csv_to(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "epoch",
            "lr",
            "train_loss",
            "train_acc",
            "val_loss",
            "val_acc",
        ])?;
        for r in &self.epochs {
            out.serialize((
                r.epoch,
                r.lr,
                r.train_loss,
                r.train_acc,
                r.val_loss,
                r.val_acc,
            ))?;
        }
        out.flush().map_err(|e| Error::io("trace.csv", e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(f)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    pub normalizer: Normalizer,
    pub trace: TrainTrace,
    /// Eval-mode accuracy of the kept parameters on the unaugmented training set.
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_loss: f64,
}

impl TrainOutcome {
    /// Training accuracy minus validation accuracy of the kept parameters.
    pub fn overfitting_gap(&self) -> f64 {
        self.train_acc - self.val_acc
    }
}

/// Eval-mode loss and accuracy of `model` on normalized rows.
pub fn evaluate(
    model: &Model,
    rows: &[f64],
    labels: &[usize],
    smoothing: f64,
) -> Result<(f64, f64)> {
    let k = model.spec.classes();
    let probs = model.predict_proba(rows)?;
    let loss = label_smoothed_ce(&probs, k, labels, smoothing)?;
    Ok((loss, accuracy(&probs, k, labels)))
}

fn accuracy(probs: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let hits = probs
        .chunks(classes)
        .zip(labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Trains `model` on `train_idx` rows of `table`, validating on `val_idx`
/// after every epoch, and returns the parameters with the lowest validation
/// loss. Normalization statistics come from the training rows only.
pub fn train(
    mut model: Model,
    table: &FeatureTable,
    train_idx: &[usize],
    val_idx: &[usize],
    spec: &TrainSpec,
) -> Result<TrainOutcome> {
    spec.validate()?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::invalid(
            "training and validation sets must be non-empty",
        ));
    }
    let val_set: std::collections::HashSet<usize> = val_idx.iter().copied().collect();
    if train_idx.iter().any(|i| val_set.contains(i)) {
        return Err(Error::invalid("training and validation sets overlap"));
    }
    let d = table.n_features();
    if model.spec.input_dim() != d {
        return Err(Error::shape(
            "train",
            format!(
                "model expects {} features, table has {d}",
                model.spec.input_dim()
            ),
        ));
    }
    let classes = model.spec.classes();
    let normalizer = Normalizer::fit(table, train_idx)?;
    let mut x_train = table.gather_rows(train_idx);
    normalizer.apply_in_place(&mut x_train);
    let y_train = table.gather_labels(train_idx);
    let mut x_val = table.gather_rows(val_idx);
    normalizer.apply_in_place(&mut x_val);
    let y_val = table.gather_labels(val_idx);

    let mut state = AdamWState::new(&model.params);
    let mut best: Option<(f64, Model)> = None;
    let mut records = Vec::with_capacity(spec.epochs);
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut stop_reason = StopReason::Completed;
    let mut order: Vec<usize> = (0..train_idx.len()).collect();

    for epoch in 0..spec.epochs {
        let lr = scheduled_lr(
            epoch,
            spec.epochs,
            spec.warmup_epochs,
            spec.lr_init,
            spec.lr_min,
        );
        order.shuffle(&mut seed::child_rng(spec.seed, "shuffle", epoch as u64));
        let mut dropout_rng = seed::child_rng(spec.seed, "dropout", epoch as u64);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (b, chunk) in order.chunks(spec.batch_size).enumerate() {
            let mut xb: Vec<f64> = chunk
                .iter()
                .flat_map(|&i| x_train[i * d..(i + 1) * d].iter().copied())
                .collect();
            let yb: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            if spec.augment.enabled {
                let s = seed::derive(spec.seed, "augment", ((epoch as u64) << 32) | b as u64);
                xb = augment(&xb, d, &spec.augment, s)?;
            }
            let mut g = Graph::new();
            let p = BoundParams::bind(&mut g, &model.params, true);
            let x = g.constant(Tensor::new(vec![yb.len(), d], xb)?);
            let probs = forward(
                &mut g,
                &model.spec,
                &p,
                x,
                &mut Mode::Train(&mut dropout_rng),
                None,
            )?;
            let loss = g.smoothed_cross_entropy(probs, &yb, spec.label_smoothing)?;
            let lv = g.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b + 1,
                });
            }
            loss_sum += lv * yb.len() as f64;
            hits += g
                .value(probs)
                .data()
                .chunks(classes)
                .zip(&yb)
                .filter(|(r, &y)| argmax(r) == y)
                .count();
            g.backward(loss)?;
            let mut grads: Vec<Vec<f64>> = p
                .iter()
                .map(|(_, v)| {
                    g.grad(v)
                        .map_or_else(|| vec![0.0; g.value(v).len()], <[f64]>::to_vec)
                })
                .collect();
            clip_gradients(&mut grads, spec.clip_norm);
            adamw_step(&mut model.params, &grads, &mut state, lr, spec.weight_decay)?;
        }
        let (val_loss, val_acc) = evaluate(&model, &x_val, &y_val, spec.label_smoothing)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: epoch + 1,
                batch: 0,
            });
        }
        let rec = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / y_train.len() as f64,
            train_acc: hits as f64 / y_train.len() as f64,
            val_loss,
            val_acc,
        };
        log::debug!(
            "epoch {:>3} lr {:.2e} train {:.4}/{:.3} val {:.4}/{:.3}",
            rec.epoch,
            lr,
            rec.train_loss,
            rec.train_acc,
            val_loss,
            val_acc
        );
        records.push(rec);
        if best.as_ref().is_none_or(|(l, _)| val_loss < *l) {
            best = Some((val_loss, model.clone()));
            best_epoch = epoch + 1;
            stale = 0;
        } else {
            stale += 1;
            if stale >= spec.patience {
                stop_reason = StopReason::EarlyStopped;
                break;
            }
        }
    }

    let (val_loss, model) = best.expect("at least one epoch ran");
    let (_, train_acc) = evaluate(&model, &x_train, &y_train, spec.label_smoothing)?;
    let val_acc = records[best_epoch - 1].val_acc;
    Ok(TrainOutcome {
        model,
        normalizer,
        trace: TrainTrace {
            epochs: records,
            best_epoch,
            stop_reason,
        },
        train_acc,
        val_acc,
        val_loss,
    })
}
