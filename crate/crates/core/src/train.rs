//! Warm-up poly schedule, momentum SGD and the training loop.
//!
//! Sampling is stateless given the iteration: the sample at global position
//! `p = iter·batch + b` is `perm(epoch)[p mod N]` with `epoch = p / N`, where
//! the permutation and each sample's augmentation draw from streams seeded by
//! (seed, epoch) and (seed, epoch, sample index). Two runs with one seed see
//! identical batches, and a resumed run continues exactly where it stopped.

use std::collections::HashMap;

use hopa_tensor::{ops, Array4, NamedParam, ParamKind, Tensor4};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentConfig};
use crate::data::{SegSample, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub batch_size: usize,
    /// (h, w); sides must be multiples of 8.
    pub crop: [usize; 2],
    pub max_iter: usize,
    /// Defaults to 5% of `max_iter`.
    #[serde(default)]
    pub warmup_iter: Option<usize>,
    #[serde(default = "default_poly_power")]
    pub poly_power: f64,
    #[serde(default = "default_scale_range")]
    pub scale_range: [f64; 2],
    #[serde(default = "default_true")]
    pub flip: bool,
    #[serde(default)]
    pub brightness_jitter: f64,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    0.0005
}
fn default_poly_power() -> f64 {
    0.9
}
fn default_scale_range() -> [f64; 2] {
    [0.5, 2.0]
}
fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn warmup(&self) -> usize {
        self.warmup_iter.unwrap_or(self.max_iter / 20)
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            crop: self.crop,
            scale_range: self.scale_range,
            flip: self.flip,
            brightness_jitter: self.brightness_jitter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("train.base_lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("train.weight_decay", "must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("train.max_iter", "must be positive"));
        }
        if self.warmup() >= self.max_iter {
            return Err(Error::config("train.warmup_iter", "must be below max_iter"));
        }
        if !(self.poly_power > 0.0) {
            return Err(Error::config("train.poly_power", "must be positive"));
        }
        if self.crop.iter().any(|&s| s == 0 || s % 8 != 0) {
            return Err(Error::config(
                "train.crop",
                "sides must be positive multiples of 8",
            ));
        }
        self.augment().validate()
    }
}

/// Linear warmup from `base/100` to `base`, then `base·(1 − t)^power` over
/// the remaining iterations.
pub fn poly_lr(iter: usize, cfg: &TrainConfig) -> f64 {
    let base = cfg.base_lr;
    let warm = cfg.warmup();
    if iter < warm {
        let t = iter as f64 / warm as f64;
        return base / 100.0 + (base - base / 100.0) * t;
    }
    let t = (iter.min(cfg.max_iter) - warm) as f64 / (cfg.max_iter - warm) as f64;
    base * (1.0 - t).powf(cfg.poly_power)
}

/// `v ← m·v + g + wd·p;  p ← p − lr·v`.
pub fn sgd_update(
    param: &mut Array4,
    grad: &Array4,
    velocity: &mut Array4,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::Tensor(hopa_tensor::TensorError::ShapeMismatch {
            op: "sgd_step",
            left: param.shape(),
            right: grad.shape(),
        }));
    }
    for ((p, g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum buffers keyed by parameter name. Weight decay applies to
/// convolution weights only; buffers are never touched.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: HashMap<String, Array4>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    pub fn step(&mut self, params: &[NamedParam], lr: f64) -> Result<()> {
        for p in params.iter().filter(|p| p.kind != ParamKind::Buffer) {
            let shape = p.tensor.shape();
            let grad = p
                .tensor
                .grad()
                .map(|g| g.clone())
                .unwrap_or_else(|| Array4::zeros(shape));
            let wd = if p.kind == ParamKind::ConvWeight {
                self.weight_decay
            } else {
                0.0
            };
            let v = self
                .velocity
                .entry(p.name.clone())
                .or_insert_with(|| Array4::zeros(shape));
            sgd_update(&mut p.tensor.value_mut(), &grad, v, lr, self.momentum, wd)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Stacks samples of equal size into one batch.
pub fn collate(samples: &[SegSample]) -> Result<(Array4, Vec<u8>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Validation("empty batch".into()))?;
    let s = first.image.shape();
    let mut data = Vec::with_capacity(samples.len() * s.numel());
    let mut labels = Vec::with_capacity(samples.len() * s.h * s.w);
    for x in samples {
        if x.image.shape() != s {
            return Err(Error::Validation(format!(
                "batch mixes sample sizes {s} and {}",
                x.image.shape()
            )));
        }
        data.extend_from_slice(x.image.data());
        labels.extend_from_slice(&x.label);
    }
    Ok((
        Array4::from_vec([samples.len(), 3, s.h, s.w], data)?,
        labels,
    ))
}

pub struct Trainer<'a> {
    pub model: Model,
    pub cfg: TrainConfig,
    pub sgd: Sgd,
    pub iter: usize,
    data: &'a [SegSample],
    perm_cache: Option<(usize, Vec<usize>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, cfg: TrainConfig, data: &'a [SegSample]) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Validation("training set is empty".into()));
        }
        let k = model.num_classes();
        for s in data {
            s.validate_labels(k)?;
        }
        Ok(Trainer {
            sgd: Sgd::new(cfg.momentum, cfg.weight_decay),
            model,
            cfg,
            iter: 0,
            data,
            perm_cache: None,
        })
    }

    fn sample_at(&mut self, pos: usize) -> Result<SegSample> {
        let n = self.data.len();
        let epoch = pos / n;
        if self.perm_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut seed::rng(&[
                self.cfg.seed,
                stream::ORDER,
                epoch as u64,
            ]));
            self.perm_cache = Some((epoch, perm));
        }
        let idx = self.perm_cache.as_ref().expect("cached").1[pos % n];
        let mut rng = seed::rng(&[self.cfg.seed, stream::AUGMENT, epoch as u64, idx as u64]);
        augment(&self.data[idx], &self.cfg.augment(), &mut rng)
    }

    /// The batch consumed at iteration `iter`.
    pub fn batch(&mut self, iter: usize) -> Result<(Array4, Vec<u8>)> {
        let b = self.cfg.batch_size;
        let samples = (0..b)
            .map(|i| self.sample_at(iter * b + i))
            .collect::<Result<Vec<_>>>()?;
        collate(&samples)
    }

    /// One SGD step on a given batch at learning rate `lr`.
    pub fn step_on(&mut self, images: &Array4, labels: &[u8], lr: f64) -> Result<f64> {
        let params = hopa_tensor::Module::params(&self.model, "");
        for p in &params {
            p.tensor.zero_grad();
        }
        let logits = self
            .model
            .forward(&Tensor4::constant(images.clone()), true)?;
        let loss = ops::cross_entropy(&logits, labels, IGNORE_LABEL)?;
        loss.backward()?;
        self.sgd.step(&params, lr)?;
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::Validation(format!(
                "loss became {value} at iteration {}",
                self.iter
            )));
        }
        Ok(value)
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let (images, labels) = self.batch(self.iter)?;
        let lr = poly_lr(self.iter, &self.cfg);
        let loss = self.step_on(&images, &labels, lr)?;
        let rec = StepRecord {
            iter: self.iter,
            lr,
            loss,
        };
        self.iter += 1;
        Ok(rec)
    }

    /// Runs to `max_iter`, calling `on_step` after every iteration.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &StepRecord) -> Result<()>) -> Result<()> {
        while self.iter < self.cfg.max_iter {
            let rec = self.step()?;
            on_step(self, &rec)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(max_iter: usize) -> TrainConfig {
        TrainConfig {
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 2,
            crop: [16, 16],
            max_iter,
            warmup_iter: None,
            poly_power: 0.9,
            scale_range: [1.0, 1.0],
            flip: false,
            brightness_jitter: 0.0,
            seed: 0,
            checkpoint_every: 0,
        }
    }

    #[test]
    fn schedule_points() {
        let c = cfg(1000);
        assert_eq!(c.warmup(), 50);
        assert_eq!(poly_lr(0, &c), 0.0001);
        assert_eq!(poly_lr(50, &c), 0.01);
        assert_eq!(poly_lr(1000, &c), 0.0);
        assert!((poly_lr(525, &c) - 0.01 * 0.5f64.powf(0.9)).abs() < 1e-12);
    }

    #[test]
    fn momentum_recursion() {
        let mut p = Array4::zeros([1, 1, 1, 1]);
        let mut v = Array4::zeros([1, 1, 1, 1]);
        let g = Array4::full([1, 1, 1, 1], 2.0);
        for _ in 0..2 {
            sgd_update(&mut p, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        }
        assert!((p.item(0)[0] + 0.1 * 2.0 * 2.9).abs() < 1e-15);
    }

    #[test]
    fn decay_pulls_toward_zero() {
        let mut p = Array4::from_vec([1, 1, 1, 2], vec![1.0, -3.0]).unwrap();
        let mut v = Array4::zeros([1, 1, 1, 2]);
        sgd_update(&mut p, &Array4::zeros([1, 1, 1, 2]), &mut v, 0.1, 0.0, 0.5).unwrap();
        assert_eq!(p.data(), [0.95, -2.85]);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Array4::zeros([1, 1, 1, 2]);
        let mut v = Array4::zeros([1, 1, 1, 2]);
        assert!(sgd_update(&mut p, &Array4::zeros([1, 1, 2, 1]), &mut v, 0.1, 0.0, 0.0).is_err());
    }
}
