//! MSE loss, AdamW, and the epoch loop.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GradTape, Mode, Model};
use crate::params::{Gradients, ParamSet};
use crate::tensor::{SeededRng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            batch_size: 64,
            epochs: 100,
            dropout: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// `(1/B)Σ(ŷ−y)²` and its gradient `2(ŷ−y)/B`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("mse_loss", pred.shape(), target.shape()));
    }
    let b = pred.shape()[0];
    if b == 0 || pred.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let scale = 2.0 / b as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let e = p - t;
            loss += e * e;
            scale * e
        })
        .collect();
    Ok((loss / b as f64, Tensor::new(pred.shape(), grad)?))
}

/// AdamW moment buffers, one pair per parameter entry.
#[derive(Clone, Debug)]
pub struct OptimState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptimState {
    pub fn new(ps: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = ps
            .entries()
            .iter()
            .map(|e| vec![0.0; e.value.len()])
            .collect();
        OptimState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One decoupled-decay Adam update:
/// `θ ← θ − lr·m̂/(√v̂+ε) − lr·wd·θ`.
pub fn adamw_step(
    ps: &mut ParamSet,
    grads: &Gradients,
    opt: &mut OptimState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != ps.len() || opt.m.len() != ps.len() {
        return Err(Error::dim(
            "adamw_step",
            &[ps.len()],
            &[grads.len(), opt.m.len()],
        ));
    }
    for (entry, g) in ps.entries().iter().zip(grads.iter()) {
        if entry.trainable && !g.all_finite() {
            return Err(Error::NonFiniteGradient(entry.name.clone()));
        }
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let lr = cfg.learning_rate;
    let decay = lr * cfg.weight_decay;
    for (k, (entry, g)) in ps.entries_mut().iter_mut().zip(grads.iter()).enumerate() {
        if !entry.trainable {
            continue;
        }
        let m = &mut opt.m[k];
        let v = &mut opt.v[k];
        for (((theta, &gi), mi), vi) in entry
            .value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + cfg.eps) - decay * *theta;
        }
    }
    Ok(())
}

/// Model-ready samples: `windows [M×L×D]`, `statics [M×D]`, `targets [M]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub windows: Tensor,
    pub statics: Tensor,
    pub targets: Vec<f64>,
}

impl SampleSet {
    pub fn new(windows: Tensor, statics: Tensor, targets: Vec<f64>) -> Result<Self> {
        let (m, _, d) = windows.dims3("sample set")?;
        if statics.shape() != [m, d] || targets.len() != m {
            return Err(Error::dim("sample set", windows.shape(), statics.shape()));
        }
        Ok(SampleSet {
            windows,
            statics,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.windows.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.windows.shape()[2]
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> SampleSet {
        let (_, l, d) = (self.len(), self.window_len(), self.features());
        let mut w = Vec::with_capacity(indices.len() * l * d);
        let mut s = Vec::with_capacity(indices.len() * d);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            w.extend_from_slice(&self.windows.data()[i * l * d..(i + 1) * l * d]);
            s.extend_from_slice(self.statics.row(i));
            y.push(self.targets[i]);
        }
        let n = indices.len();
        SampleSet {
            windows: Tensor::new(&[n, l, d], w).expect("subset shape"),
            statics: Tensor::new(&[n, d], s).expect("subset shape"),
            targets: y,
        }
    }

    fn target_column(&self) -> Tensor {
        Tensor::new(&[self.len(), 1], self.targets.clone()).expect("target shape")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub epochs: Vec<EpochLoss>,
}

impl LossCurve {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,test_mse\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{}", e.epoch, e.train_mse, e.test_mse);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

const EVAL_BATCH: usize = 512;

/// Eval-mode predictions for every sample, in order.
pub fn predict_samples(model: &Model, set: &SampleSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len());
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let part = set.subset(chunk);
        out.extend_from_slice(model.predict(&part.windows, &part.statics)?.data());
    }
    Ok(out)
}

/// Eval-mode mean squared error over `set`.
pub fn evaluate_mse(model: &Model, set: &SampleSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InsufficientData(
            "cannot evaluate on an empty sample set".into(),
        ));
    }
    let pred = predict_samples(model, set)?;
    Ok(pred
        .iter()
        .zip(&set.targets)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / set.len() as f64)
}

/// Batch index lists for one epoch. A trailing batch of one sample is merged
/// into its predecessor when the model normalizes over the batch.
fn epoch_batches(order: &[usize], batch_size: usize, merge_singleton: bool) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if merge_singleton && batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("predecessor").extend(tail);
    }
    batches
}

/// Trains `model` in place for `cfg.epochs` full passes and returns the
/// per-epoch train/test MSE. The train figure averages the batch losses
/// seen during the epoch (dropout active); the test figure is eval mode.
pub fn train_model(
    model: &mut Model,
    train: &SampleSet,
    test: &SampleSet,
    cfg: &TrainConfig,
) -> Result<LossCurve> {
    cfg.validate()?;
    let mut curve = LossCurve::default();
    if cfg.epochs == 0 {
        return Ok(curve);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InsufficientData(format!(
            "training needs non-empty train and test sets, got {} and {}",
            train.len(),
            test.len()
        )));
    }
    let mut shuffle_rng = SeededRng::with_stream(cfg.seed, 1);
    let mut dropout_rng = SeededRng::with_stream(cfg.seed, 2);
    let mut opt = OptimState::new(model.params());
    let mut grads = model.params().zero_grads();
    let mut tape = GradTape::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let merge = model.has_batch_norm();

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut weighted = 0.0;
        for (bi, idx) in epoch_batches(&order, cfg.batch_size, merge)
            .iter()
            .enumerate()
        {
            let batch = train.subset(idx);
            let pred = model.forward(
                &batch.windows,
                &batch.statics,
                Mode::Train(&mut dropout_rng),
                Some(&mut tape),
            )?;
            let (loss, dpred) = mse_loss(&pred, &batch.target_column())?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi,
                    detail: format!("loss is {loss}"),
                });
            }
            grads.zero();
            model.backward(&tape, &dpred, &mut grads)?;
            adamw_step(model.params_mut(), &grads, &mut opt, cfg).map_err(|e| match e {
                Error::NonFiniteGradient(name) => Error::Divergence {
                    epoch,
                    batch: bi,
                    detail: format!("non-finite gradient for {name}"),
                },
                other => other,
            })?;
            model.absorb_batch_stats(&tape);
            weighted += loss * idx.len() as f64;
        }
        tape.clear();
        let train_mse = weighted / train.len() as f64;
        let test_mse = evaluate_mse(model, test)?;
        if !test_mse.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                detail: format!("test loss is {test_mse}"),
            });
        }
        log::debug!("epoch {epoch}: train_mse={train_mse:.6} test_mse={test_mse:.6}");
        curve.epochs.push(EpochLoss {
            epoch,
            train_mse,
            test_mse,
        });
    }
    Ok(curve)
}
