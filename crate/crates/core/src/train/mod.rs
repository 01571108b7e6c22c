//! The training loop: shuffled mini-batches with augmentation, Adam updates,
//! a full validation pass per epoch, plateau decay and early stopping. The
//! weights of the best validation epoch are restored before returning.

mod adam;
mod augment;
mod loss;
mod schedule;

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{OptimState, BETA1, BETA2, EPSILON};
pub use augment::{augment, warp, Affine, AugmentConfig};
pub use loss::cross_entropy;
pub use schedule::{ScheduleConfig, ScheduleState};

use crate::data::{Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::Model;
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

const SHUFFLE_STREAM: u64 = 0x5f;
const AUGMENT_STREAM: u64 = 0xa6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub lr_init: f64,
    pub lr_floor: f64,
    pub decay_factor: f64,
    pub lr_patience: usize,
    pub stop_patience: usize,
    pub min_delta: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    /// `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            lr_init: 0.001,
            lr_floor: 5e-5,
            decay_factor: 0.63,
            lr_patience: 10,
            stop_patience: 20,
            min_delta: 0.01,
            batch_size: 64,
            max_epochs: 300,
            weight_decay: 1e-4,
            augment: Some(AugmentConfig::default()),
        }
    }
}

impl TrainParams {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: TrainParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr_floor > 0.0 && self.lr_floor <= self.lr_init && self.lr_init.is_finite()) {
            return bad(format!("need 0 < lr_floor <= lr_init, got {} and {}", self.lr_floor, self.lr_init));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad(format!("decay_factor must be in (0, 1), got {}", self.decay_factor));
        }
        if !(self.min_delta >= 0.0 && self.weight_decay >= 0.0) {
            return bad("min_delta and weight_decay must be >= 0".into());
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            lr_floor: self.lr_floor,
            decay_factor: self.decay_factor,
            lr_patience: self.lr_patience,
            stop_patience: self.stop_patience,
            min_delta: self.min_delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// 1-based epoch whose weights were restored, if any epoch ran.
    pub best_epoch: Option<usize>,
    pub wall_time: f64,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.records[e - 1])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc,lr\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: f64,
    pub accuracy: f64,
    /// `confusion_matrix[true][predicted]`
    pub confusion_matrix: Vec<Vec<usize>>,
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode pass over `data` in batches of `batch_size`.
pub fn evaluate<T: Scalar>(model: &mut Model<T>, data: &Dataset, batch_size: usize) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Parameter("cannot evaluate on an empty dataset".into()));
    }
    let classes = model.num_classes();
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut loss_sum = 0.0;
    let mut correct = 0;
    let order: Vec<usize> = (0..data.len()).collect();
    for chunk in order.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch::<T>(chunk);
        let probs = model.forward(&x, Mode::Infer)?;
        let (loss, _) = cross_entropy(&probs, &labels)?;
        loss_sum += loss * chunk.len() as f64;
        for (i, &l) in labels.iter().enumerate() {
            let p = argmax(probs.outer(i));
            confusion[l][p] += 1;
            correct += (p == l) as usize;
        }
    }
    Ok(EvalReport {
        loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        confusion_matrix: confusion,
    })
}

/// One optimizer step on a batch; returns the batch loss and correct count.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut OptimState<T>,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, usize)> {
    let probs = model.forward(x, Mode::Train)?;
    let (loss, d_logits) = cross_entropy(&probs, labels)?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| argmax(probs.outer(i)) == l)
        .count();
    let grads = model.backward(&d_logits)?;
    opt.step(&mut model.params_mut(), &grads)?;
    Ok((loss, correct))
}

fn augmented_batch<T: Scalar>(
    data: &Dataset,
    indices: &[usize],
    cfg: &AugmentConfig,
    root: &RngStream,
    epoch: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (mut x, labels) = data.batch::<T>(indices);
    let shape = data.image_shape();
    for (row, &idx) in indices.iter().enumerate() {
        let mut rng = root.derive(&[AUGMENT_STREAM, epoch as u64, idx as u64]);
        let img = Tensor::new(shape, x.outer(row).to_vec())?;
        let out = augment(&img, cfg, &mut rng)?;
        x.outer_mut(row).copy_from_slice(out.data());
    }
    Ok((x, labels))
}

/// Trains `model` in place. Randomness (shuffling and augmentation) is
/// derived from the model's seed, so identical inputs give identical runs.
pub fn train<T: Scalar>(model: &mut Model<T>, data: &DatasetSplit, params: &TrainParams) -> Result<TrainHistory> {
    params.validate()?;
    if data.train.is_empty() {
        return Err(Error::Parameter("training split is empty".into()));
    }
    if data.val.is_empty() {
        return Err(Error::Parameter("validation split is empty".into()));
    }
    let start = Instant::now();
    let root = RngStream::new(model.config().seed);
    let mut opt = OptimState::new(params.lr_init, params.weight_decay);
    let mut sched = ScheduleState::new(params.schedule());
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor<T>>)> = None;
    let mut stop_reason = StopReason::MaxEpochs;
    let n = data.train.len();

    for epoch in 1..=params.max_epochs {
        let lr = opt.lr;
        let mut order: Vec<usize> = (0..n).collect();
        root.derive(&[SHUFFLE_STREAM, epoch as u64]).shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (b, chunk) in order.chunks(params.batch_size).enumerate() {
            let frame = || format!("epoch {epoch} batch {b}");
            let (x, labels) = match &params.augment {
                Some(cfg) => augmented_batch(&data.train, chunk, cfg, &root, epoch)?,
                None => data.train.batch(chunk),
            };
            let (loss, c) = train_step(model, &mut opt, &x, &labels).map_err(|e| e.at(frame))?;
            if !loss.is_finite() {
                return Err(Error::overflow("loss", None, loss.abs()).at(frame));
            }
            loss_sum += loss * chunk.len() as f64;
            correct += c;
        }
        let val = evaluate(model, &data.val, params.batch_size).map_err(|e| e.at(|| format!("epoch {epoch} validation")))?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
            lr,
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} train_acc {:.4} val_loss {:.4} val_acc {:.4} lr {:.2e}",
            rec.train_loss,
            rec.train_acc,
            rec.val_loss,
            rec.val_acc,
            rec.lr
        );
        records.push(rec);
        if best.as_ref().is_none_or(|(acc, _, _)| val.accuracy > *acc) {
            best = Some((val.accuracy, epoch, model.snapshot()));
        }
        let (next_lr, stop) = sched.update(lr, val.accuracy);
        opt.lr = next_lr;
        if stop {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    let best_epoch = best.map(|(_, epoch, snap)| {
        model.restore(&snap);
        epoch
    });
    Ok(TrainHistory {
        records,
        stop_reason,
        best_epoch,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, split, SyntheticKind};
    use crate::model::{HeadConfig, ModelConfig};

    fn blobs() -> DatasetSplit {
        let d = gen_synthetic(SyntheticKind::Blobs, 60, 2, 1).unwrap();
        split(&d, (0.7, 0.3, 0.0), 1).unwrap()
    }

    fn quick(max_epochs: usize) -> TrainParams {
        TrainParams {
            max_epochs,
            batch_size: 16,
            lr_init: 0.01,
            augment: None,
            ..TrainParams::default()
        }
    }

    #[test]
    fn zero_epochs_leave_model_untouched() {
        let cfg = ModelConfig::head_only(2, HeadConfig::fc(8, 2), 3);
        let mut m: Model<f64> = Model::build(&cfg).unwrap();
        let before = m.snapshot();
        let h = train(&mut m, &blobs(), &quick(0)).unwrap();
        assert!(h.records.is_empty());
        assert_eq!(h.stop_reason, StopReason::MaxEpochs);
        assert_eq!(m.snapshot(), before);
    }

    #[test]
    fn separable_set_is_fit() {
        let cfg = ModelConfig::head_only(2, HeadConfig::fc(8, 2), 3);
        let mut m: Model<f64> = Model::build(&cfg).unwrap();
        let data = blobs();
        let h = train(&mut m, &data, &quick(50)).unwrap();
        assert!(h.records.len() <= 50);
        let acc = evaluate(&mut m, &data.train, 64).unwrap().accuracy;
        assert!(acc >= 0.99, "train acc {acc}");
    }

    #[test]
    fn empty_split_is_rejected() {
        let cfg = ModelConfig::head_only(2, HeadConfig::fc(4, 2), 3);
        let mut m: Model<f32> = Model::build(&cfg).unwrap();
        let mut data = blobs();
        data.val = data.val.subset(&[]);
        assert!(matches!(train(&mut m, &data, &quick(1)), Err(Error::Parameter(_))));
    }

    #[test]
    fn params_json_defaults() {
        let p = TrainParams::from_json(r#"{"max_epochs": 5, "augment": null}"#).unwrap();
        assert_eq!(p.max_epochs, 5);
        assert_eq!(p.batch_size, 64);
        assert!(p.augment.is_none());
        assert!(TrainParams::from_json(r#"{"batch_size": 0}"#).is_err());
        assert!(TrainParams::from_json(r#"{"lr": 1}"#).is_err());
    }

    #[test]
    fn confusion_rows_sum_to_class_counts() {
        let cfg = ModelConfig::head_only(2, HeadConfig::fc(4, 3), 2);
        let mut m: Model<f32> = Model::build(&cfg).unwrap();
        let d = gen_synthetic(SyntheticKind::Spiral, 7, 3, 0).unwrap();
        let r = evaluate(&mut m, &d, 5).unwrap();
        let rows: Vec<usize> = r.confusion_matrix.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(rows, d.class_counts());
    }
}
