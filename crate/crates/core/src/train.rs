//! Supervised and self-supervised training, Adam, the step-wise learning-rate
//! schedule and masked-band inference.
//!
//! Every random choice of a step (batch order, augmentation, crop, noise,
//! masked bands) is drawn from a generator keyed by `(seed, step, item)`, so
//! a run resumed at step `k` continues exactly like an uninterrupted one.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eager, Graph, Tape};
use crate::error::{Error, Result};
use crate::hsi::{crop, Augment};
use crate::model::{block_inference, center, T3sc, BLOCK, BLOCK_OVERLAP};
use crate::noise::{self, split_seed, NoiseSpec};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Supervised,
    Ssl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_halving_epochs: Vec<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
    /// Bands hidden per step in self-supervised mode.
    pub ssl_n: usize,
    /// Passes over the patch pool that count as one epoch.
    pub epoch_multiplier: usize,
    /// Random square crop taken from each patch before the forward pass.
    pub crop: Option<usize>,
    pub augment: bool,
    /// Stops after this many steps in total, overriding `epochs`.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Supervised,
            batch_size: 16,
            epochs: 60,
            lr: 3e-4,
            lr_halving_epochs: vec![30, 45],
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            noise: NoiseSpec::Iid { sigma: 25.0 },
            seed: 0,
            ssl_n: 4,
            epoch_multiplier: 1,
            crop: None,
            augment: true,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if self.epoch_multiplier == 0 {
            return Err(Error::config("train.epoch_multiplier", "must be at least 1"));
        }
        if self.ssl_n == 0 {
            return Err(Error::config("train.ssl_n", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("train.adam_beta1", "Adam betas must lie in [0, 1)"));
        }
        if self.adam_eps <= 0.0 {
            return Err(Error::config("train.adam_eps", "must be positive"));
        }
        if self.crop == Some(0) {
            return Err(Error::config("train.crop", "must be positive"));
        }
        self.noise
            .validate()
            .map_err(|e| Error::config("train.noise", e.to_string()))
    }

    /// Learning rate during the 1-based `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let halvings = self.lr_halving_epochs.iter().filter(|&&h| epoch > h).count();
        self.lr * 0.5f64.powi(halvings as i32)
    }

    pub fn steps_per_epoch(&self, pool: usize) -> u64 {
        (pool.div_ceil(self.batch_size) * self.epoch_multiplier) as u64
    }

    pub fn total_steps(&self, pool: usize) -> u64 {
        self.max_steps
            .unwrap_or(self.steps_per_epoch(pool) * self.epochs as u64)
    }
}

/// Adam with bias-corrected moments, keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    /// One update of every `(name, value)` that has an entry in `grads`.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a str, &'a mut Tensor<T>)>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr: f64,
    ) -> Result<()>
    where
        T: 'a,
    {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (name, value) in params {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != value.shape() {
                return Err(Error::dim("adam", g.shape(), value.shape()));
            }
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (((p, &gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gf = gi.to_f64().unwrap();
                let mf = b1 * mi.to_f64().unwrap() + (1.0 - b1) * gf;
                let vf = b2 * vi.to_f64().unwrap() + (1.0 - b2) * gf * gf;
                *mi = T::lit(mf);
                *vi = T::lit(vf);
                let update = lr * (mf / c1) / ((vf / c2).sqrt() + self.eps);
                *p = T::lit(p.to_f64().unwrap() - update);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        format!("{} {} {:e} {:e}", self.step, self.epoch, self.lr, self.loss)
    }
}

/// Clean training patches of one sensor.
#[derive(Clone, Debug)]
pub struct SupervisedDataset<T> {
    pub sensor: String,
    pub clean: Vec<Tensor<T>>,
}

/// Noisy training patches of one sensor. Nothing else is reachable from
/// here, which keeps clean data out of the self-supervised loop.
#[derive(Clone, Debug)]
pub struct SslDataset<T> {
    sensor: String,
    noisy: Vec<Tensor<T>>,
}

impl<T: Real> SslDataset<T> {
    pub fn from_noisy(sensor: impl Into<String>, noisy: Vec<Tensor<T>>) -> Self {
        SslDataset {
            sensor: sensor.into(),
            noisy,
        }
    }

    pub fn sensor(&self) -> &str {
        &self.sensor
    }

    pub fn noisy(&self) -> &[Tensor<T>] {
        &self.noisy
    }
}

/// A source image, clean and as acquired.
#[derive(Clone, Debug)]
pub struct ImagePair<T> {
    pub clean: Tensor<T>,
    pub noisy: Tensor<T>,
}

impl<T: Real> ImagePair<T> {
    /// Noise drawn once per source image, seeded by its index.
    pub fn simulate(clean: &[Tensor<T>], spec: &NoiseSpec, seed: u64) -> Result<Vec<Self>> {
        clean
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let (noisy, _) = noise::apply(x, spec, split_seed(seed, i as u64, 0))?;
                Ok(ImagePair {
                    clean: x.clone(),
                    noisy,
                })
            })
            .collect()
    }
}

impl<T: Real> SslDataset<T> {
    pub fn from_pairs(sensor: impl Into<String>, pairs: &[ImagePair<T>]) -> Self {
        Self::from_noisy(sensor, pairs.iter().map(|p| p.noisy.clone()).collect())
    }
}

const STREAM_ORDER: u64 = 0x0bde;
const STREAM_ITEM: u64 = 0x17e5;
const STREAM_NOISE: u64 = 0x4015;

fn epoch_order(seed: u64, epoch: u64, pool: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, STREAM_ORDER, epoch));
    idx.shuffle(&mut rng);
    idx
}

/// Pool indices of step `step`'s batch: consecutive slices of a per-epoch
/// permutation, wrapping into the next permutation when the pool runs out.
fn batch_indices(seed: u64, step: u64, batch: usize, pool: usize) -> Vec<usize> {
    let start = step * batch as u64;
    (0..batch as u64)
        .map(|k| {
            let pos = start + k;
            let (pass, within) = (pos / pool as u64, (pos % pool as u64) as usize);
            epoch_order(seed, pass, pool)[within]
        })
        .collect()
}

struct Prepared<T> {
    input: Tensor<T>,
    rng: ChaCha8Rng,
}

fn prepare<T: Real>(x: &Tensor<T>, cfg: &TrainConfig, step: u64, item: usize) -> Prepared<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, STREAM_ITEM, step * 1_000_003 + item as u64));
    let mut x = if cfg.augment {
        Augment::ALL[rng.random_range(0..Augment::ALL.len())].apply(x)
    } else {
        x.clone()
    };
    if let Some(s) = cfg.crop {
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (ch, cw) = (s.min(h), s.min(w));
        let r = rng.random_range(0..=h - ch);
        let q = rng.random_range(0..=w - cw);
        x = crop(&x, r, q, ch, cw);
    }
    Prepared { input: x, rng }
}

fn estimator_weights<T: Real>(
    model: &T3sc<T>,
    tape: &Tape<T>,
    y: &Tensor<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<crate::autodiff::Var>> {
    let Some(est) = &model.estimator else { return Ok(None) };
    let (centered, _) = center(y);
    let (h, w) = (y.shape()[1], y.shape()[2]);
    let (th, tw) = (est.tile.min(h), est.tile.min(w));
    let r = rng.random_range(0..=h - th);
    let q = rng.random_range(0..=w - tw);
    est.band_weights(tape, &centered, Some((r, q))).map(Some)
}

fn supervised_item<T: Real>(
    model: &T3sc<T>,
    sensor: &str,
    clean: &Tensor<T>,
    cfg: &TrainConfig,
    step: u64,
    item: usize,
) -> Result<(f64, Vec<(String, Tensor<T>)>)> {
    let Prepared { input: x, mut rng } = prepare(clean, cfg, step, item);
    let noise_seed = split_seed(cfg.seed, STREAM_NOISE, step * 1_000_003 + item as u64);
    let (y, _) = noise::apply(&x, &cfg.noise, noise_seed)?;
    let tape = Tape::new();
    let beta = estimator_weights(model, &tape, &y, &mut rng)?;
    let out = model.forward(&tape, &y, sensor, beta.as_ref())?;
    let loss = tape.mse(&out, &tape.constant(x))?;
    let value = tape.value_ref(loss).item().to_f64().unwrap();
    Ok((value, tape.backward(loss)?))
}

/// Bands hidden in one self-supervised step, sorted.
pub fn draw_hidden(c: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut h = rand::seq::index::sample(rng, c, n).into_vec();
    h.sort_unstable();
    h
}

/// Mean squared error restricted to `hidden` bands.
pub fn masked_band_loss<G: Graph<T>, T: Real>(
    g: &G,
    out: &G::Var,
    target: &Tensor<T>,
    hidden: &[usize],
) -> Result<G::Var> {
    let (c, h, w) = (target.shape()[0], target.shape()[1], target.shape()[2]);
    let mask = Tensor::from_fn(&[c], |b| if hidden.contains(&b) { T::one() } else { T::zero() });
    let diff = g.sub(out, &g.constant(target.clone()))?;
    let sq = g.mul(&g.mul(&diff, &diff)?, &g.constant(mask))?;
    let total = g.sum(&sq)?;
    g.scale(&total, T::lit(1.0 / (hidden.len() * h * w) as f64))
}

fn ssl_item<T: Real>(
    model: &T3sc<T>,
    sensor: &str,
    noisy: &Tensor<T>,
    cfg: &TrainConfig,
    step: u64,
    item: usize,
) -> Result<(f64, Vec<(String, Tensor<T>)>)> {
    let Prepared { input: y, mut rng } = prepare(noisy, cfg, step, item);
    let c = y.shape()[0];
    let hidden = draw_hidden(c, cfg.ssl_n, &mut rng);
    let visible: Vec<usize> = (0..c).filter(|b| !hidden.contains(b)).collect();
    let tape = Tape::new();
    let beta = estimator_weights(model, &tape, &y, &mut rng)?;
    let out = model.forward_masked(&tape, &y, sensor, &visible, beta.as_ref())?;
    let loss = masked_band_loss(&tape, &out, &y, &hidden)?;
    let value = tape.value_ref(loss).item().to_f64().unwrap();
    Ok((value, tape.backward(loss)?))
}

/// Model plus optimizer state; the step counter is the only other state a
/// run needs to resume.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: T3sc<T>,
    pub config: TrainConfig,
    pub adam: Adam<T>,
    pub step: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: T3sc<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::from_config(&config);
        Ok(Trainer {
            model,
            config,
            adam,
            step: 0,
        })
    }

    fn check_pool(&self, sensor: &str, pool: &[Tensor<T>]) -> Result<()> {
        let layer = self.model.layer(sensor)?;
        if pool.is_empty() {
            return Err(Error::config("data", "training set is empty"));
        }
        if let Some(bad) = pool.iter().find(|p| p.ndim() != 3 || p.shape()[0] != layer.bands()) {
            return Err(Error::dim("train", bad.shape(), &[layer.bands(), 0, 0]));
        }
        Ok(())
    }

    /// One optimizer step over the batch of step `self.step`.
    fn step_with<F>(&mut self, pool: &[Tensor<T>], item_fn: F) -> Result<LogRecord>
    where
        F: Fn(&T3sc<T>, &Tensor<T>, u64, usize) -> Result<(f64, Vec<(String, Tensor<T>)>)> + Sync,
    {
        let cfg = &self.config;
        let step = self.step;
        let spe = cfg.steps_per_epoch(pool.len());
        let epoch = (step / spe) as usize + 1;
        let lr = cfg.lr_at_epoch(epoch);
        let idx = batch_indices(cfg.seed, step, cfg.batch_size, pool.len());
        let model = &self.model;
        let results: Vec<Result<(f64, Vec<(String, Tensor<T>)>)>> = idx
            .par_iter()
            .enumerate()
            .map(|(k, &i)| item_fn(model, &pool[i], step, k))
            .collect();
        let inv = 1.0 / idx.len() as f64;
        let mut loss = 0.0;
        let mut grads: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for r in results {
            let (l, g) = match r {
                Err(Error::NonFinite(_)) => return Err(Error::Divergence { step, loss: f64::NAN }),
                other => other?,
            };
            loss += l * inv;
            for (name, t) in g {
                match grads.get_mut(&name) {
                    Some(acc) => acc.add_assign(&t),
                    None => {
                        grads.insert(name, t);
                    }
                }
            }
        }
        if !loss.is_finite() || grads.values().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss });
        }
        let scale = T::lit(inv);
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * scale);
        }
        let params = self
            .model
            .parameters_mut()
            .into_iter()
            .map(|p| (p.name.as_str(), &mut p.value));
        self.adam.step(params, &grads, lr)?;
        self.step += 1;
        Ok(LogRecord { step, epoch, lr, loss })
    }

    /// Supervised steps until the configured total; `on_step` sees every
    /// record as it is produced.
    pub fn run_supervised(
        &mut self,
        data: &SupervisedDataset<T>,
        mut on_step: impl FnMut(&LogRecord, &Self) -> Result<()>,
    ) -> Result<Vec<LogRecord>> {
        if self.config.mode != TrainMode::Supervised {
            return Err(Error::config("train.mode", "expected supervised"));
        }
        self.check_pool(&data.sensor, &data.clean)?;
        let total = self.config.total_steps(data.clean.len());
        let mut log = Vec::new();
        while self.step < total {
            let cfg = self.config.clone();
            let sensor = data.sensor.as_str();
            let rec = self.step_with(&data.clean, |m, x, s, k| supervised_item(m, sensor, x, &cfg, s, k))?;
            on_step(&rec, self)?;
            log.push(rec);
        }
        Ok(log)
    }

    pub fn run_ssl(
        &mut self,
        data: &SslDataset<T>,
        mut on_step: impl FnMut(&LogRecord, &Self) -> Result<()>,
    ) -> Result<Vec<LogRecord>> {
        if self.config.mode != TrainMode::Ssl {
            return Err(Error::config("train.mode", "expected ssl"));
        }
        self.check_pool(data.sensor(), data.noisy())?;
        let c = self.model.layer(data.sensor())?.bands();
        if self.config.ssl_n >= c {
            return Err(Error::config(
                "train.ssl_n",
                format!("must be smaller than the band count {c}, got {}", self.config.ssl_n),
            ));
        }
        let total = self.config.total_steps(data.noisy().len());
        let mut log = Vec::new();
        while self.step < total {
            let cfg = self.config.clone();
            let sensor = data.sensor();
            let rec = self.step_with(data.noisy(), |m, y, s, k| ssl_item(m, sensor, y, &cfg, s, k))?;
            on_step(&rec, self)?;
            log.push(rec);
        }
        Ok(log)
    }
}

pub fn train_supervised<T: Real>(
    model: T3sc<T>,
    data: &SupervisedDataset<T>,
    cfg: &TrainConfig,
) -> Result<(T3sc<T>, Vec<LogRecord>)> {
    let mut t = Trainer::new(model, cfg.clone())?;
    let log = t.run_supervised(data, |_, _| Ok(()))?;
    Ok((t.model, log))
}

pub fn train_ssl<T: Real>(
    model: T3sc<T>,
    data: &SslDataset<T>,
    cfg: &TrainConfig,
) -> Result<(T3sc<T>, Vec<LogRecord>)> {
    let mut t = Trainer::new(model, cfg.clone())?;
    let log = t.run_ssl(data, |_, _| Ok(()))?;
    Ok((t.model, log))
}

/// Band groups for masked inference: group `k` holds the bands `j` with
/// `j mod ceil(c / n) == k`.
pub fn ssl_groups(c: usize, n: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 || n >= c {
        return Err(Error::Domain(format!("masked band count must be in [1, {c}), got {n}")));
    }
    let k = c.div_ceil(n);
    Ok((0..k).map(|g| (g..c).step_by(k).collect()).collect())
}

/// Reconstructs every band from the others: one masked pass per group,
/// keeping only the predictions of the hidden bands.
pub fn ssl_denoise<T: Real>(model: &T3sc<T>, y: &Tensor<T>, sensor: &str, n: usize) -> Result<Tensor<T>> {
    if y.ndim() != 3 {
        return Err(Error::dim("ssl_denoise", y.shape(), &[0, 0, 0]));
    }
    let c = y.shape()[0];
    let plane = y.shape()[1] * y.shape()[2];
    let mut out = y.clone();
    for group in ssl_groups(c, n)? {
        let visible: Vec<usize> = (0..c).filter(|b| !group.contains(b)).collect();
        let pred = block_inference(y, BLOCK, BLOCK_OVERLAP, |b| {
            model.forward_masked(&Eager, b, sensor, &visible, None)
        })?;
        for &b in &group {
            out.data_mut()[b * plane..(b + 1) * plane].copy_from_slice(&pred.data()[b * plane..(b + 1) * plane]);
        }
    }
    Ok(out)
}
