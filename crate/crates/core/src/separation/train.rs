//! Mini-batch Adam training with step learning-rate decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{apply_symmetry, Symmetry};
use super::loss::{loss, loss_and_grad};
use super::model::SeparationModel;
use super::ops::Real;
use super::tape::{BatchStats, Tape, Tensor};
use super::TrainingPair;
use crate::error::{Error, Result};
use crate::geometry::RingArrayGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the phase term.
    pub alpha: f64,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_interval: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            lr0: 0.01,
            lr_decay: 0.9,
            lr_interval: 10,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 100,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.batch_size == 0 || self.lr_interval == 0 {
            return Err(Error::Config("batch_size and lr_interval must be >= 1".into()));
        }
        if !(self.lr0 >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("lr0 >= 0 and betas in [0, 1) required".into()));
        }
        Ok(())
    }

    /// Rate used during `epoch` (0-based).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((epoch / self.lr_interval) as i32)
    }
}

/// Training pairs together with the symmetries applied on the fly.
/// Item `i` is pair `i / n_sym` under symmetry `i % n_sym`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<TrainingPair>,
    pub symmetries: Vec<Symmetry>,
    pub geometry: RingArrayGeometry,
}

impl Dataset {
    /// Every pair under all eight symmetries.
    pub fn augmented(pairs: Vec<TrainingPair>, geometry: RingArrayGeometry) -> Self {
        Self {
            pairs,
            symmetries: Symmetry::all().to_vec(),
            geometry,
        }
    }

    pub fn plain(pairs: Vec<TrainingPair>, geometry: RingArrayGeometry) -> Self {
        Self {
            pairs,
            symmetries: vec![Symmetry::IDENTITY],
            geometry,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len() * self.symmetries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Result<TrainingPair> {
        let n = self.symmetries.len();
        let sym = self.symmetries[i % n];
        let pair = &self.pairs[i / n];
        if sym == Symmetry::IDENTITY {
            return Ok(pair.clone());
        }
        apply_symmetry(pair, sym, &self.geometry)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub val: Vec<Option<f64>>,
}

fn batch_tensors<F: Real>(
    model: &SeparationModel<F>,
    data: &Dataset,
    idx: &[usize],
) -> Result<(Tensor<F>, Tensor<F>)> {
    let pairs = idx.iter().map(|&i| data.get(i)).collect::<Result<Vec<_>>>()?;
    pair_tensors(model, &pairs)
}

fn pair_tensors<F: Real>(model: &SeparationModel<F>, pairs: &[TrainingPair]) -> Result<(Tensor<F>, Tensor<F>)> {
    let inputs: Vec<_> = pairs.iter().map(|p| &p.input).collect();
    let x = model.input_tensor(&inputs)?;
    let [b, _, r, t] = x.shape;
    let p = model.n_outputs;
    let mut y = Vec::with_capacity(b * p * r * t);
    for pair in pairs {
        if pair.labels.len() != p {
            return Err(Error::shape(format!("{p} labels"), pair.labels.len().to_string()));
        }
        for l in &pair.labels {
            if l.samples.dim() != (r, t) {
                return Err(Error::shape(format!("{r}x{t}"), format!("{:?}", l.samples.dim())));
            }
            y.extend(l.samples.iter().map(|&v| F::lit(v as f64)));
        }
    }
    Ok((x, Tensor::from_vec([b, p, r, t], y)))
}

/// Mean loss over `data` with inference-mode normalisation.
pub fn evaluate_loss<F: Real>(model: &SeparationModel<F>, data: &Dataset, alpha: f64, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = batch_tensors(model, data, chunk)?;
        let out = model.evaluate(x)?;
        let l = loss(&out.data, &y.data, y.shape[3], F::lit(alpha))?;
        total += l.to_f64().unwrap_or(f64::NAN) * chunk.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

fn step<F: Real>(
    model: &SeparationModel<F>,
    x: Tensor<F>,
    y: &Tensor<F>,
    alpha: F,
) -> Result<(f64, Vec<Option<Tensor<F>>>, Vec<BatchStats<F>>)> {
    let mut tape = Tape::new(model.params.len());
    let (out, stats) = model.record(&mut tape, x, true)?;
    let (l, g) = loss_and_grad(&tape.value(out).data, &y.data, y.shape[3], alpha)?;
    let grads = tape.backward(out, Tensor::from_vec(y.shape, g));
    Ok((l.to_f64().unwrap_or(f64::NAN), grads, stats))
}

/// Training-mode loss of one batch and its gradient for every parameter
/// tensor (`None` where the loss does not depend on it).
pub fn loss_and_gradients<F: Real>(
    model: &SeparationModel<F>,
    pairs: &[TrainingPair],
    alpha: f64,
) -> Result<(f64, Vec<Option<Tensor<F>>>)> {
    let (x, y) = pair_tensors(model, pairs)?;
    let (l, g, _) = step(model, x, &y, F::lit(alpha))?;
    Ok((l, g))
}

/// Training-mode loss of one batch.
pub fn batch_loss<F: Real>(model: &SeparationModel<F>, pairs: &[TrainingPair], alpha: f64) -> Result<f64> {
    let (x, y) = pair_tensors(model, pairs)?;
    let mut tape = Tape::new(model.params.len());
    let (out, _) = model.record(&mut tape, x, true)?;
    Ok(loss(&tape.value(out).data, &y.data, y.shape[3], F::lit(alpha))?
        .to_f64()
        .unwrap_or(f64::NAN))
}

struct Adam<F> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: i32,
}

const ADAM_EPS: f64 = 1e-8;

impl<F: Real> Adam<F> {
    fn new(params: &[Tensor<F>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![F::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![F::zero(); p.len()]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [Tensor<F>], grads: &[Option<Tensor<F>>], lr: f64, b1: f64, b2: f64) {
        self.step += 1;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (b1f, b2f) = (F::lit(b1), F::lit(b2));
        let (one, eps) = (F::one(), F::lit(ADAM_EPS));
        let (c1, c2, lr) = (F::lit(c1), F::lit(c2), F::lit(lr));
        for (k, p) in params.iter_mut().enumerate() {
            let Some(g) = &grads[k] else { continue };
            for ((w, gi), (m, v)) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(self.m[k].iter_mut().zip(self.v[k].iter_mut()))
            {
                *m = b1f * *m + (one - b1f) * *gi;
                *v = b2f * *v + (one - b2f) * *gi * *gi;
                let mh = *m / c1;
                let vh = *v / c2;
                *w = *w - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Trains `model` in place. `on_epoch(epoch, train_loss, val_loss)` is
/// called after each epoch.
pub fn train<F: Real>(
    model: &mut SeparationModel<F>,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, Option<f64>),
) -> Result<LossHistory> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&model.params);
    let mut history = LossHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let alpha = F::lit(config.alpha);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.learning_rate(epoch);
        let mut sum = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = batch_tensors(model, train_set, idx)?;
            let (l, grads, stats) = step(model, x, &y, alpha)?;
            if !l.is_finite() {
                return Err(Error::Diverged { epoch, batch, loss: l });
            }
            adam.update(&mut model.params, &grads, lr, config.beta1, config.beta2);
            model.update_running(&stats);
            sum += l * idx.len() as f64;
        }
        let train_loss = sum / train_set.len() as f64;
        let val_loss = match val_set {
            Some(v) if !v.is_empty() => Some(evaluate_loss(model, v, config.alpha, config.batch_size)?),
            _ => None,
        };
        history.train.push(train_loss);
        history.val.push(val_loss);
        on_epoch(epoch, train_loss, val_loss);
    }
    Ok(history)
}
