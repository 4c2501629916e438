//! Mini-batch training with Adam, step learning-rate decay and early
//! stopping on validation loss.

use std::io::Write;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcft_tensor::{Scalar, TensorError};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{MultiStreamModel, ParamStore, Role, Sample, Session};

/// Probabilities are clipped to `[BCE_CLIP, 1 - BCE_CLIP]` before the log.
pub const BCE_CLIP: f64 = 1e-7;

/// `initial_lr · factor^⌊epoch / every⌋`.
///
/// When `1 / factor` is a whole number (the usual 0.1) the rate is formed by
/// division, so that e.g. `1e-3` decays to exactly `1e-4` and `1e-5`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = (epoch / cfg.lr_decay_every) as i32;
    let inv = 1.0 / cfg.lr_decay_factor;
    if inv.fract() == 0.0 {
        cfg.initial_lr / inv.powi(k)
    } else {
        cfg.initial_lr * cfg.lr_decay_factor.powi(k)
    }
}

/// Mean clipped binary cross-entropy, evaluated outside the graph.
pub fn bce_loss(p: &[f64], y: &[f64]) -> Result<f64> {
    if p.len() != y.len() || p.is_empty() {
        return Err(Error::Tensor(TensorError::Contract(format!(
            "bce over {} probabilities and {} targets",
            p.len(),
            y.len()
        ))));
    }
    let mut total = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        if yi != 0.0 && yi != 1.0 {
            return Err(Error::Tensor(TensorError::Contract(format!("target {yi} is not 0 or 1"))));
        }
        let pc = pi.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
        total -= yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln();
    }
    Ok(total / p.len() as f64)
}

/// Bias-corrected Adam. Only [`Role::Trainable`] entries are updated.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Option<Vec<T>>>,
    v: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![None; params],
            v: vec![None; params],
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update from per-entry gradients (`None` means no gradient).
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Vec<T>>], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Tensor(TensorError::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            ))));
        }
        for (id, g) in store.ids().zip(grads) {
            if let Some(g) = g {
                if g.len() != store.get(id).numel() {
                    return Err(Error::Tensor(TensorError::Contract(format!(
                        "gradient for {} has {} values, parameter has {}",
                        store.entries()[id.index()].name,
                        g.len(),
                        store.get(id).numel()
                    ))));
                }
            }
        }
        self.step += 1;
        let (b1, b2) = (T::of_f64(self.beta1), T::of_f64(self.beta2));
        let c1 = T::of_f64(1.0 - self.beta1.powi(self.step));
        let c2 = T::of_f64(1.0 - self.beta2.powi(self.step));
        let (lr, eps, one) = (T::of_f64(lr), T::of_f64(self.eps), T::one());
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = &grads[id.index()] else { continue };
            if store.role(id) != Role::Trainable {
                continue;
            }
            let n = g.len();
            let m = self.m[id.index()].get_or_insert_with(|| vec![T::zero(); n]);
            let v = self.v[id.index()].get_or_insert_with(|| vec![T::zero(); n]);
            let p = store.get_mut(id).data_mut();
            for i in 0..n {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] = p[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Epoch counter when the loop ended: the epoch that exhausted patience,
    /// or `max_epochs` when the budget ran out.
    pub stopped_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch].val_loss
    }

    /// CSV with columns `epoch, train_loss, val_loss, lr`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::data(format!("writing history: {e}"));
        wr.write_record(["epoch", "train_loss", "val_loss", "lr"]).map_err(err)?;
        for r in &self.epochs {
            wr.write_record([
                r.epoch.to_string(),
                format!("{:.10e}", r.train_loss),
                format!("{:.10e}", r.val_loss),
                format!("{:e}", r.lr),
            ])
            .map_err(err)?;
        }
        wr.flush().map_err(|e| Error::data(format!("writing history: {e}")))
    }
}

/// What the epoch loop needs from a model under training.
pub trait Trainable {
    type Snapshot;
    /// One pass over the training data; returns the mean training loss.
    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64>;
    fn validation_loss(&mut self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot);
}

/// Runs epochs until patience or the epoch budget is exhausted, then
/// restores the weights from the epoch with the lowest validation loss.
/// Only a strictly lower loss counts as an improvement.
pub fn run_schedule<M: Trainable>(model: &mut M, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, M::Snapshot)> = None;
    let mut epoch = 0;
    loop {
        if epoch == cfg.max_epochs {
            break;
        }
        let lr = lr_at(epoch, cfg);
        let train_loss = model.train_epoch(epoch, lr)?;
        let val_loss = model.validation_loss()?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "epoch {epoch}: train loss {train_loss}, validation loss {val_loss} (lr {lr:e})"
            )));
        }
        debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:e}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.snapshot()));
            history.best_epoch = epoch;
        }
        if epoch - history.best_epoch >= cfg.patience {
            break;
        }
        epoch += 1;
    }
    history.stopped_epoch = epoch;
    if let Some((_, snap)) = best {
        model.restore(snap);
    }
    Ok(history)
}

/// Drives a [`MultiStreamModel`] over fixed training and validation samples.
pub struct Trainer<'d, T: Scalar> {
    pub model: MultiStreamModel<T>,
    pub adam: Adam<T>,
    train: &'d [Sample<T>],
    val: &'d [Sample<T>],
    rng: ChaCha8Rng,
    batch_size: usize,
    order: Vec<usize>,
}

impl<'d, T: Scalar> Trainer<'d, T> {
    /// Fits the feature normalizer on `train` and prepares the optimizer.
    pub fn new(mut model: MultiStreamModel<T>, train: &'d [Sample<T>], val: &'d [Sample<T>], cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(Error::data(format!(
                "training needs non-empty splits (train {}, validation {})",
                train.len(),
                val.len()
            )));
        }
        model.fit_normalizer(train)?;
        let adam = Adam::new(model.store.len());
        Ok(Trainer {
            model,
            adam,
            train,
            val,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            batch_size: cfg.batch_size,
            order: (0..train.len()).collect(),
        })
    }

    /// Forward, backward and one Adam update on a batch; returns the loss.
    pub fn step(&mut self, batch: &[&Sample<T>], lr: f64) -> Result<f64> {
        let (images, features) = self.model.batch_inputs(batch)?;
        let targets: Vec<T> = batch.iter().map(|s| T::of_f64(s.label.as_f64())).collect();
        let arch = &self.model.arch;
        let mut s = Session::train(&mut self.model.store);
        let iv = images.map(|t| s.graph.constant(t));
        let fv = features.map(|t| s.graph.constant(t));
        let out = arch.forward(&mut s, iv, fv)?;
        let p_mci = s.graph.slice(out.fused, 1, 1, 1)?;
        let loss = s.graph.bce(p_mci, &targets)?;
        let value = s.graph.value(loss)[0].as_f64();
        if !value.is_finite() {
            let ids: Vec<&str> = batch.iter().map(|s| s.id.as_str()).collect();
            return Err(Error::Numeric(format!("non-finite loss on batch {ids:?}")));
        }
        s.graph.backward(loss)?;
        let grads = s.grads();
        drop(s);
        self.adam.step(&mut self.model.store, &grads, lr)?;
        Ok(value)
    }
}

impl<T: Scalar> Trainable for Trainer<'_, T> {
    type Snapshot = ParamStore<T>;

    fn train_epoch(&mut self, _epoch: usize, lr: f64) -> Result<f64> {
        self.order.shuffle(&mut self.rng);
        let order = std::mem::take(&mut self.order);
        let train = self.train;
        let mut total = 0.0;
        for chunk in order.chunks(self.batch_size) {
            let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &train[i]).collect();
            total += self.step(&batch, lr)? * batch.len() as f64;
        }
        self.order = order;
        Ok(total / train.len() as f64)
    }

    fn validation_loss(&mut self) -> Result<f64> {
        let preds = self.model.predict(self.val, 0.5)?;
        let p: Vec<f64> = preds.iter().map(|p| p.p_final[1]).collect();
        let y: Vec<f64> = self.val.iter().map(|s| s.label.as_f64()).collect();
        bce_loss(&p, &y)
    }

    fn snapshot(&self) -> ParamStore<T> {
        self.model.store.clone()
    }

    fn restore(&mut self, snapshot: ParamStore<T>) {
        self.model.store = snapshot;
    }
}

/// Trains a model on `train`, early-stopping on `val`; returns the model
/// holding its best-epoch weights.
pub fn train<T: Scalar>(
    model: MultiStreamModel<T>,
    train: &[Sample<T>],
    val: &[Sample<T>],
    cfg: &TrainConfig,
) -> Result<(MultiStreamModel<T>, TrainHistory)> {
    let mut trainer = Trainer::new(model, train, val, cfg)?;
    let history = run_schedule(&mut trainer, cfg)?;
    Ok((trainer.model, history))
}
