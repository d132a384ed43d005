use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{LossKind, TrainConfig};
use super::loss::loss;
use super::model::{DropoutMode, ForwardCache, NetParams};
use super::real::Real;
use crate::error::{Error, Result};
use crate::seeds;

/// Normalized input volumes paired with whitened target scores.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub inputs: Vec<Vec<f32>>,
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f32>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::dim(inputs.len(), targets.len(), "dataset targets"));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check<T: Real>(&self, params: &NetParams<T>, name: &str) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Config(format!("{name} set is empty")));
        }
        let l = params.config().output_dim;
        for (x, z) in self.inputs.iter().zip(&self.targets) {
            if x.len() != params.input_len() {
                return Err(Error::dim(params.input_len(), x.len(), "training input voxels"));
            }
            if z.len() != l {
                return Err(Error::dim(l, z.len(), "training target modes"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub loss_kind: &'static str,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub params: NetParams<T>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (1-based, 0 if none completed).
    pub best_epoch: usize,
    /// Diagnostic when training stopped on a non-finite loss or parameter.
    pub aborted: Option<String>,
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
    lr: f64,
}

impl<T: Real> Adam<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut [T], grad: &[T]) {
        self.step += 1;
        let (b1, b2) = (T::of(Self::BETA1), T::of(Self::BETA2));
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let step = T::of(self.lr * c2.sqrt() / c1);
        let eps = T::of(Self::EPS * c2.sqrt());
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *p = *p - step * *m / (v.sqrt() + eps);
        }
    }
}

fn to_real<T: Real>(x: &[f32]) -> Vec<T> {
    x.iter().map(|&v| T::of(v as f64)).collect()
}

/// Mean loss over a set with dropout off.
pub fn evaluate_loss<T: Real>(params: &NetParams<T>, data: &Dataset, kind: LossKind) -> Result<f64> {
    let l = params.config().output_dim;
    let mut total = 0.0;
    for (x, z) in data.inputs.iter().zip(&data.targets) {
        let p = params.forward(&to_real::<T>(x), DropoutMode::Off)?;
        total += loss(kind, &p.z_bar, &p.log_var, z, l).value;
    }
    Ok(total / data.len() as f64)
}

pub fn train<T: Real>(
    params: NetParams<T>,
    train_set: &Dataset,
    val_set: &Dataset,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with(params, train_set, val_set, tcfg, |_| {})
}

/// Minibatch Adam with the configured loss schedule. Returns the parameters
/// with the lowest validation loss among epochs using the final loss kind.
pub fn train_with<T: Real>(
    mut params: NetParams<T>,
    train_set: &Dataset,
    val_set: &Dataset,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    tcfg.validate()?;
    train_set.check(&params, "training")?;
    val_set.check(&params, "validation")?;
    if !params.all_finite() {
        return Err(Error::Numerical("initial parameters are not finite".into()));
    }
    let l = params.config().output_dim;
    let n = params.num_params();
    let mut adam = Adam::<T>::new(n, tcfg.lr);
    let order_seed = seeds::derive(tcfg.seed, "train/order");
    let mask_seed = seeds::derive(tcfg.seed, "train/dropout");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<T>)> = None;
    let mut caches: Vec<ForwardCache<T>> = Vec::new();
    let mut grad = vec![T::zero(); n];
    let mut step_counter = 0u64;
    let final_kind = tcfg.schedule.final_kind();

    let finish = |params: NetParams<T>, best: Option<(f64, usize, Vec<T>)>, history, aborted| {
        let mut params = params;
        let best_epoch = match best {
            Some((_, epoch, values)) => {
                params.values_mut().copy_from_slice(&values);
                epoch
            }
            None => 0,
        };
        TrainOutcome {
            params,
            history,
            best_epoch,
            aborted,
        }
    };

    for epoch in 1..=tcfg.epochs {
        let kind = tcfg.schedule.kind(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::child(order_seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let mut means = Vec::with_capacity(batch.len() * l);
            let mut logvars = Vec::with_capacity(batch.len() * l);
            let mut targets = Vec::with_capacity(batch.len() * l);
            for (j, &i) in batch.iter().enumerate() {
                let mode = if tcfg.dropout {
                    DropoutMode::On(seeds::child(mask_seed, step_counter))
                } else {
                    DropoutMode::Off
                };
                step_counter += 1;
                if caches.len() <= j {
                    caches.push(ForwardCache::new());
                }
                let (m, a) = params.forward_cached(&to_real::<T>(&train_set.inputs[i]), mode, &mut caches[j])?;
                means.extend(m.into_iter().map(T::as_f64));
                logvars.extend(a.into_iter().map(T::as_f64));
                targets.extend_from_slice(&train_set.targets[i]);
            }
            let lg = loss(kind, &means, &logvars, &targets, l);
            if !lg.value.is_finite() {
                let msg = format!("non-finite {} loss at epoch {epoch}", kind.as_str());
                return Ok(finish(params, best, history, Some(msg)));
            }
            epoch_loss += lg.value * batch.len() as f64;
            for j in 0..batch.len() {
                let dm: Vec<T> = lg.d_mean[j * l..(j + 1) * l].iter().map(|&v| T::of(v)).collect();
                let da: Vec<T> = lg.d_logvar[j * l..(j + 1) * l].iter().map(|&v| T::of(v)).collect();
                params.backward(&caches[j], &dm, &da, &mut grad);
            }
            if grad.iter().any(|g| !g.is_finite()) {
                let msg = format!("non-finite gradient at epoch {epoch}");
                return Ok(finish(params, best, history, Some(msg)));
            }
            let before = params.values().to_vec();
            adam.update(params.values_mut(), &grad);
            if !params.all_finite() {
                params.values_mut().copy_from_slice(&before);
                let msg = format!("non-finite parameter after update at epoch {epoch}");
                return Ok(finish(params, best, history, Some(msg)));
            }
        }
        let val_loss = evaluate_loss(&params, val_set, kind)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            loss_kind: kind.as_str(),
        };
        on_epoch(&record);
        history.push(record);
        if !val_loss.is_finite() {
            let msg = format!("non-finite validation loss at epoch {epoch}");
            return Ok(finish(params, best, history, Some(msg)));
        }
        if kind == final_kind && best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, params.values().to_vec()));
        }
    }
    Ok(finish(params, best, history, None))
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    crate::pipeline::io::write_text(path, &String::from_utf8(bytes).expect("csv is utf-8"))
}
