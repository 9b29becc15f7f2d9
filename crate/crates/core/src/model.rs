//! The two-layer denoiser: a sensor-specific spectral layer (1x1 atoms), a
//! shared spectral-spatial layer (low-rank 5x5 atoms) and an optional per-band
//! noise estimator producing data-term weights.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eager, Graph, Parameter};
use crate::dictionary::{DenseDictionary, Dictionary, LowRankDictionary, Role};
use crate::error::{Error, Result};
use crate::ops;
use crate::sparse_coding::{csc_encode, overlap_add_decode, CscConfig};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub id: String,
    pub bands: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub sensors: Vec<SensorSpec>,
    pub p1: usize,
    pub p2: usize,
    pub rank: usize,
    pub side: usize,
    pub t1: usize,
    pub t2: usize,
    /// Initial thresholds of the two layers.
    pub lambda1: f64,
    pub lambda2: f64,
    pub estimator: bool,
    pub estimator_tile: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sensors: vec![SensorSpec {
                id: "default".into(),
                bands: 31,
            }],
            p1: 64,
            p2: 1024,
            rank: 3,
            side: 5,
            t1: 12,
            t2: 5,
            lambda1: 1e-2,
            lambda2: 1e-2,
            estimator: false,
            estimator_tile: 56,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(Error::config(path, msg));
        if self.sensors.is_empty() {
            return bad("model.sensors", "at least one sensor is required");
        }
        for (i, s) in self.sensors.iter().enumerate() {
            if s.id.is_empty() || s.id.chars().any(char::is_whitespace) {
                return bad(&format!("model.sensors[{i}].id"), "must be non-empty without whitespace");
            }
            if s.bands == 0 {
                return bad(&format!("model.sensors[{i}].bands"), "must be positive");
            }
            if self.sensors[..i].iter().any(|o| o.id == s.id) {
                return bad(&format!("model.sensors[{i}].id"), "duplicate sensor id");
            }
        }
        if self.p1 == 0 || self.p2 == 0 {
            return bad("model.p1", "atom counts must be positive");
        }
        if self.side == 0 {
            return bad("model.side", "must be positive");
        }
        if self.rank == 0 || self.rank > (self.side * self.side).min(self.p1) {
            return bad("model.rank", "must lie in 1..=min(side^2, p1)");
        }
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return bad("model.lambda1", "initial thresholds must be positive");
        }
        if self.estimator_tile < 8 {
            return bad("model.estimator_tile", "must be at least 8");
        }
        Ok(())
    }

    pub fn sensor(&self, id: &str) -> Option<&SensorSpec> {
        self.sensors.iter().find(|s| s.id == id)
    }
}

/// `ln(exp(x) - 1)`, so that `softplus(inverse_softplus(x)) = x`.
pub fn inverse_softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp_m1().ln()
    }
}

/// Largest eigenvalue of `A^T A` for the count-normalized synthesis operator
/// of `kernel` (`[p, c, s, s]`), by power iteration on a small image.
pub fn synthesis_lipschitz<T: Real>(kernel: &Tensor<T>) -> Result<T> {
    let (p, s) = (kernel.shape()[0], kernel.shape()[2]);
    let hw = if s == 1 { 1 } else { 4 * s };
    let (ho, wo) = (hw - s + 1, hw - s + 1);
    let inv = ops::inverse_counts::<T>(hw, hw, s)?;
    let scale_counts = |t: &mut Tensor<T>| {
        let n = hw * hw;
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = *v * inv.data()[i % n];
        }
    };
    let mut a = Tensor::from_fn(&[p, ho, wo], |i| T::lit(1.0 + (i % 7) as f64 * 0.1));
    let mut est = T::zero();
    for _ in 0..60 {
        let mut img = ops::conv_transpose2d(&a, kernel, 1, Some((hw, hw)))?;
        scale_counts(&mut img);
        scale_counts(&mut img);
        let next = ops::conv2d(&img, kernel, 1)?;
        est = next.dot(&next).sqrt();
        if est == T::zero() {
            return Err(Error::Domain("dictionary has no energy".into()));
        }
        a = next.map(|v| v / est);
    }
    Ok(est)
}

fn lambda_param<T: Real>(name: String, atoms: usize, init: f64) -> Parameter<T> {
    Parameter::new(name, Tensor::full(&[atoms], T::lit(inverse_softplus(init))))
}

/// `C = D / L`, `W = D`, each an independent copy.
fn ista_triplet<T: Real>(d: Dictionary<T>, prefix: &str) -> Result<[Dictionary<T>; 3]> {
    let l = synthesis_lipschitz(&d.kernel_value()?)?;
    let mut c = d.renamed(&format!("{prefix}.C"), Role::Analysis);
    c.scale_atoms(T::one() / l);
    let w = d.renamed(&format!("{prefix}.W"), Role::Decode);
    Ok([c, d, w])
}

#[derive(Clone, Debug)]
pub struct SpectralLayer<T> {
    pub sensor_id: String,
    pub c: Dictionary<T>,
    pub d: Dictionary<T>,
    pub w: Dictionary<T>,
    /// Thresholds are `softplus(theta)`.
    pub theta: Parameter<T>,
    pub iterations: usize,
}

impl<T: Real> SpectralLayer<T> {
    pub fn new(sensor: &SensorSpec, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let prefix = format!("spectral.{}", sensor.id);
        let d = DenseDictionary::init_he(format!("{prefix}.D"), cfg.p1, sensor.bands, Role::Synthesis, rng)?;
        let [c, d, w] = ista_triplet(Dictionary::Dense(d), &prefix)?;
        Ok(SpectralLayer {
            sensor_id: sensor.id.clone(),
            c,
            d,
            w,
            theta: lambda_param(format!("{prefix}.lambda"), cfg.p1, cfg.lambda1),
            iterations: cfg.t1,
        })
    }

    pub fn bands(&self) -> usize {
        self.d.channels()
    }

    pub fn encode<G: Graph<T>>(&self, g: &G, y: &G::Var, beta: Option<&G::Var>) -> Result<G::Var> {
        let lam = g.softplus(&g.param(&self.theta))?;
        let cfg = CscConfig {
            iterations: self.iterations,
            stride: 1,
        };
        let codes = csc_encode(g, y, &self.c.kernel(g)?, &self.d.kernel(g)?, &lam, beta, cfg)?;
        Ok(codes.codes)
    }

    pub fn decode<G: Graph<T>>(&self, g: &G, codes: &G::Var) -> Result<G::Var> {
        g.conv_transpose2d(codes, &self.w.kernel(g)?, 1, None)
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut v = self.c.parameters();
        v.extend(self.d.parameters());
        v.extend(self.w.parameters());
        v.push(&self.theta);
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.c.parameters_mut();
        v.extend(self.d.parameters_mut());
        v.extend(self.w.parameters_mut());
        v.push(&mut self.theta);
        v
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct SpectralSpatialLayer<T> {
    pub c: Dictionary<T>,
    pub d: Dictionary<T>,
    pub w: Dictionary<T>,
    pub theta: Parameter<T>,
    pub iterations: usize,
    pub side: usize,
}

impl<T: Real> SpectralSpatialLayer<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let d = LowRankDictionary::init_he("spatial.D", cfg.p2, cfg.p1, cfg.side, cfg.rank, Role::Synthesis, rng)?;
        let [c, d, w] = ista_triplet(Dictionary::LowRank(d), "spatial")?;
        Ok(SpectralSpatialLayer {
            c,
            d,
            w,
            theta: lambda_param("spatial.lambda".into(), cfg.p2, cfg.lambda2),
            iterations: cfg.t2,
            side: cfg.side,
        })
    }

    /// Centers every patch channel, encodes, decodes and restores the means.
    pub fn apply<G: Graph<T>>(&self, g: &G, x: &G::Var) -> Result<G::Var> {
        let shape = g.shape(x);
        if shape[1] < self.side || shape[2] < self.side {
            return Err(Error::InputTooSmall(format!(
                "spatial layer needs at least {0}x{0} pixels, got {1}x{2}",
                self.side, shape[1], shape[2]
            )));
        }
        let mean = g.local_mean(x, self.side)?;
        let z = g.sub(x, &mean)?;
        let lam = g.softplus(&g.param(&self.theta))?;
        let cfg = CscConfig {
            iterations: self.iterations,
            stride: 1,
        };
        let codes = csc_encode(g, &z, &self.c.kernel(g)?, &self.d.kernel(g)?, &lam, None, cfg)?;
        let rec = overlap_add_decode(g, &codes, &self.w.kernel(g)?)?;
        g.add(&rec, &mean)
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut v = self.c.parameters();
        v.extend(self.d.parameters());
        v.extend(self.w.parameters());
        v.push(&self.theta);
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.c.parameters_mut();
        v.extend(self.d.parameters_mut());
        v.extend(self.w.parameters_mut());
        v.push(&mut self.theta);
        v
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }
}

/// Three 3x3 conv + relu stages (1 -> 16 -> 32 -> 32), global average pooling,
/// an affine head and `softplus(.) + 1e-3`.
#[derive(Clone, Debug)]
pub struct NoiseEstimator<T> {
    pub convs: Vec<(Parameter<T>, Parameter<T>)>,
    pub head_w: Parameter<T>,
    pub head_b: Parameter<T>,
    pub tile: usize,
}

const ESTIMATOR_FLOOR: f64 = 1e-3;

impl<T: Real> NoiseEstimator<T> {
    pub fn new(tile: usize, rng: &mut impl Rng) -> Result<Self> {
        let widths = [1usize, 16, 32, 32];
        let mut convs = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let (cin, cout) = (pair[0], pair[1]);
            let fan_in = cin * 9;
            let w = he(&[cout, cin, 3, 3], fan_in, rng);
            convs.push((
                Parameter::new(format!("estimator.conv{}.weight", i + 1), w),
                Parameter::new(format!("estimator.conv{}.bias", i + 1), Tensor::zeros(&[cout])),
            ));
        }
        let head_w = Parameter::new("estimator.head.weight", he(&[32], 32, rng));
        // unit weights at initialization
        let b0 = T::lit(inverse_softplus(1.0 - ESTIMATOR_FLOOR));
        let head_b = Parameter::new("estimator.head.bias", Tensor::full(&[1], b0));
        Ok(NoiseEstimator {
            convs,
            head_w,
            head_b,
            tile,
        })
    }

    /// Weight for one centered band tile `[1, t, t]`, shape `[1]`.
    pub fn tile_weight<G: Graph<T>>(&self, g: &G, tile: &G::Var) -> Result<G::Var> {
        let mut x = tile.clone();
        for (w, b) in &self.convs {
            let y = g.conv2d(&x, &g.param(w), 1)?;
            x = g.relu(&g.add(&y, &g.param(b))?)?;
        }
        let feat = g.global_average_pool(&x)?;
        let lin = g.sum(&g.mul(&feat, &g.param(&self.head_w))?)?;
        let lin = g.add(&g.reshape(&lin, &[1])?, &g.param(&self.head_b))?;
        let out = g.softplus(&lin)?;
        g.add(&out, &g.constant(Tensor::full(&[1], T::lit(ESTIMATOR_FLOOR))))
    }

    /// Tile origins covering `len` pixels with non-overlapping tiles, the last
    /// one clamped to the edge.
    fn grid(len: usize, tile: usize) -> Vec<usize> {
        if len <= tile {
            return vec![0];
        }
        let mut v: Vec<usize> = (0..).map(|k| k * tile).take_while(|&o| o + tile <= len).collect();
        if v.last().map(|&o| o + tile < len).unwrap_or(true) {
            v.push(len - tile);
        }
        v
    }

    /// Per-band weights `[c]` for a centered cube. With `crop = Some((row, col))`
    /// a single tile at that origin is used (training); otherwise the mean
    /// over the tile grid.
    pub fn band_weights<G: Graph<T>>(
        &self,
        g: &G,
        centered: &Tensor<T>,
        crop: Option<(usize, usize)>,
    ) -> Result<G::Var> {
        let (c, h, w) = (centered.shape()[0], centered.shape()[1], centered.shape()[2]);
        if h < 8 || w < 8 {
            return Err(Error::InputTooSmall(format!(
                "noise estimation needs at least 8x8 pixels, got {h}x{w}"
            )));
        }
        let (th, tw) = (self.tile.min(h), self.tile.min(w));
        let origins: Vec<(usize, usize)> = match crop {
            Some((r, q)) => vec![(r.min(h - th), q.min(w - tw))],
            None => {
                let rows = Self::grid(h, th);
                let cols = Self::grid(w, tw);
                rows.iter().flat_map(|&r| cols.iter().map(move |&q| (r, q))).collect()
            }
        };
        let inv_n = T::one() / T::from_usize(origins.len()).unwrap();
        let mut parts = Vec::with_capacity(c);
        for band in 0..c {
            let plane = &centered.data()[band * h * w..(band + 1) * h * w];
            let mut acc: Option<G::Var> = None;
            for &(r, q) in &origins {
                let tile = Tensor::from_fn(&[1, th, tw], |i| plane[(r + i / tw) * w + q + i % tw]);
                let b = self.tile_weight(g, &g.constant(tile))?;
                acc = Some(match acc {
                    None => b,
                    Some(a) => g.add(&a, &b)?,
                });
            }
            let sum = acc.expect("at least one tile");
            parts.push(if origins.len() == 1 { sum } else { g.scale(&sum, inv_n)? });
        }
        g.concat(&parts)
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut v: Vec<&Parameter<T>> = self.convs.iter().flat_map(|(w, b)| [w, b]).collect();
        v.push(&self.head_w);
        v.push(&self.head_b);
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v: Vec<&mut Parameter<T>> =
            self.convs.iter_mut().flat_map(|(w, b)| [w, b]).collect();
        v.push(&mut self.head_w);
        v.push(&mut self.head_b);
        v
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }
}

fn he<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
}

/// Per-band means `[c]` of a `[c, h, w]` cube. Constant bands get their value
/// exactly, so they center to zero.
pub fn band_means<T: Real>(y: &Tensor<T>) -> Tensor<T> {
    let plane = y.shape()[1] * y.shape()[2];
    let n = T::from_usize(plane.max(1)).unwrap();
    let data = y
        .data()
        .chunks(plane.max(1))
        .map(|b| {
            if b.iter().all(|&v| v == b[0]) {
                b[0]
            } else {
                b.iter().copied().sum::<T>() / n
            }
        })
        .collect();
    Tensor::new(&[y.shape()[0]], data).expect("band count")
}

/// Subtracts per-band means.
pub fn center<T: Real>(y: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let mu = band_means(y);
    let centered = ops::binary("center", y, &mu, |a, b| a - b).expect("leading broadcast");
    (centered, mu)
}

/// Replaces the bands outside `visible` by their mean, so they vanish after
/// centering. Returns the masked cube and the hidden band indices.
pub fn mask_bands<T: Real>(y: &Tensor<T>, visible: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
    let c = y.shape()[0];
    if visible.is_empty() {
        return Err(Error::Domain("at least one band must stay visible".into()));
    }
    if let Some(&b) = visible.iter().find(|&&b| b >= c) {
        return Err(Error::Domain(format!("band {b} out of range for {c} bands")));
    }
    let hidden: Vec<usize> = (0..c).filter(|b| !visible.contains(b)).collect();
    let mu = band_means(y);
    let plane = y.numel() / c.max(1);
    let mut out = y.clone();
    for &b in &hidden {
        out.data_mut()[b * plane..(b + 1) * plane].fill(mu.data()[b]);
    }
    Ok((out, hidden))
}

/// The full model: one spectral layer per sensor, one shared spatial layer.
#[derive(Clone, Debug)]
pub struct T3sc<T> {
    pub config: ModelConfig,
    pub spectral: BTreeMap<String, SpectralLayer<T>>,
    pub spatial: SpectralSpatialLayer<T>,
    pub estimator: Option<NoiseEstimator<T>>,
}

impl<T: Real> T3sc<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spectral = BTreeMap::new();
        for s in &config.sensors {
            spectral.insert(s.id.clone(), SpectralLayer::new(s, &config, &mut rng)?);
        }
        let spatial = SpectralSpatialLayer::new(&config, &mut rng)?;
        let estimator = if config.estimator {
            Some(NoiseEstimator::new(config.estimator_tile, &mut rng)?)
        } else {
            None
        };
        Ok(T3sc {
            config,
            spectral,
            spatial,
            estimator,
        })
    }

    pub fn layer(&self, sensor: &str) -> Result<&SpectralLayer<T>> {
        self.spectral
            .get(sensor)
            .ok_or_else(|| Error::UnknownSensor(sensor.to_string()))
    }

    /// The single sensor id when only one is configured.
    pub fn default_sensor(&self) -> Option<&str> {
        (self.spectral.len() == 1).then(|| self.spectral.keys().next().unwrap().as_str())
    }

    fn check_input(&self, y: &Tensor<T>, sensor: &str) -> Result<&SpectralLayer<T>> {
        let layer = self.layer(sensor)?;
        if y.ndim() != 3 || y.shape()[0] != layer.bands() {
            return Err(Error::dim("forward", y.shape(), &[layer.bands(), 0, 0]));
        }
        Ok(layer)
    }

    /// Denoises `y` (`[c, h, w]`). `weights`, when given, are the per-band
    /// data-term weights of the spectral layer.
    pub fn forward<G: Graph<T>>(
        &self,
        g: &G,
        y: &Tensor<T>,
        sensor: &str,
        weights: Option<&G::Var>,
    ) -> Result<G::Var> {
        let layer = self.check_input(y, sensor)?;
        let (centered, mu) = center(y);
        let yc = g.constant(centered);
        let a1 = layer.encode(g, &yc, weights)?;
        let a1_hat = self.spatial.apply(g, &a1)?;
        let xc = layer.decode(g, &a1_hat)?;
        g.add(&xc, &g.constant(mu))
    }

    /// Forward pass with the bands outside `visible` hidden: they are replaced
    /// by their mean and get zero weight in the spectral layer's data term.
    pub fn forward_masked<G: Graph<T>>(
        &self,
        g: &G,
        y: &Tensor<T>,
        sensor: &str,
        visible: &[usize],
        weights: Option<&G::Var>,
    ) -> Result<G::Var> {
        let (masked, hidden) = mask_bands(y, visible)?;
        let c = y.shape()[0];
        let mask = g.constant(Tensor::from_fn(&[c], |b| {
            if hidden.contains(&b) {
                T::zero()
            } else {
                T::one()
            }
        }));
        let w = match weights {
            Some(b) => g.mul(b, &mask)?,
            None => mask,
        };
        self.forward(g, &masked, sensor, Some(&w))
    }

    /// Weights from the noise estimator over the tile grid of the whole cube.
    pub fn estimate_band_weights(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let est = self
            .estimator
            .as_ref()
            .ok_or_else(|| Error::State("model has no noise estimator".into()))?;
        let (centered, _) = center(y);
        est.band_weights(&Eager, &centered, None)
    }

    /// Block-wise inference with optional fixed weights.
    pub fn denoise(&self, y: &Tensor<T>, sensor: &str, weights: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        self.check_input(y, sensor)?;
        block_inference(y, BLOCK, BLOCK_OVERLAP, |b| self.forward(&Eager, b, sensor, weights))
    }

    /// Block-wise inference with weights estimated once on the whole cube.
    pub fn denoise_blind(&self, y: &Tensor<T>, sensor: &str) -> Result<Tensor<T>> {
        self.check_input(y, sensor)?;
        let beta = self.estimate_band_weights(y)?;
        self.denoise(y, sensor, Some(&beta))
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut v: Vec<&Parameter<T>> = self.spectral.values().flat_map(|l| l.parameters()).collect();
        v.extend(self.spatial.parameters());
        if let Some(e) = &self.estimator {
            v.extend(e.parameters());
        }
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v: Vec<&mut Parameter<T>> =
            self.spectral.values_mut().flat_map(|l| l.parameters_mut()).collect();
        v.extend(self.spatial.parameters_mut());
        if let Some(e) = &mut self.estimator {
            v.extend(e.parameters_mut());
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }
}

pub const BLOCK: usize = 256;
pub const BLOCK_OVERLAP: usize = 6;

/// Block origins along one axis: stride `block - overlap` from 0, the last
/// block clamped to the edge.
pub fn block_origins(len: usize, block: usize, overlap: usize) -> Vec<usize> {
    if len <= block {
        return vec![0];
    }
    let stride = block - overlap;
    let mut v = vec![0];
    while v.last().unwrap() + block < len {
        v.push((v.last().unwrap() + stride).min(len - block));
    }
    v
}

/// Runs `f` on overlapping `block x block` tiles and averages the outputs where
/// tiles overlap. Images no larger than one block are passed through whole.
pub fn block_inference<T: Real>(
    y: &Tensor<T>,
    block: usize,
    overlap: usize,
    f: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    if overlap >= block {
        return Err(Error::Domain("overlap must be smaller than the block".into()));
    }
    let (c, h, w) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    if h <= block && w <= block {
        return f(y);
    }
    let rows = block_origins(h, block, overlap);
    let cols = block_origins(w, block, overlap);
    let (bh, bw) = (block.min(h), block.min(w));
    let mut sum = vec![T::zero(); c * h * w];
    let mut count = vec![0u32; h * w];
    for &r in &rows {
        for &q in &cols {
            let tile = Tensor::from_fn(&[c, bh, bw], |i| {
                let (b, rem) = (i / (bh * bw), i % (bh * bw));
                y.data()[b * h * w + (r + rem / bw) * w + q + rem % bw]
            });
            let out = f(&tile)?;
            if out.shape() != tile.shape() {
                return Err(Error::dim("block_inference", out.shape(), tile.shape()));
            }
            for b in 0..c {
                for i in 0..bh {
                    let src = &out.data()[(b * bh + i) * bw..(b * bh + i + 1) * bw];
                    let dst = &mut sum[b * h * w + (r + i) * w + q..][..bw];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
            for i in 0..bh {
                for n in &mut count[(r + i) * w + q..][..bw] {
                    *n += 1;
                }
            }
        }
    }
    for (i, v) in sum.iter_mut().enumerate() {
        *v = *v / T::from_u32(count[i % (h * w)]).unwrap();
    }
    Tensor::new(&[c, h, w], sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            sensors: vec![SensorSpec { id: "s".into(), bands: 6 }],
            p1: 5,
            p2: 8,
            rank: 2,
            side: 3,
            t1: 3,
            t2: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn default_balance() {
        let m = T3sc::<f32>::new(
            ModelConfig {
                sensors: vec![SensorSpec { id: "icvl".into(), bands: 31 }],
                ..ModelConfig::default()
            },
            0,
        )
        .unwrap();
        let l1 = m.layer("icvl").unwrap().param_count();
        let l2 = m.spatial.param_count();
        assert_eq!(l1, 3 * 31 * 64 + 64);
        assert_eq!(l2, 3 * (25 + 64) * 3 * 1024 + 1024);
        assert!(l2 >= 10 * l1);
    }

    #[test]
    fn zero_image_gives_zero_output() {
        let m = T3sc::<f64>::new(small_config(), 1).unwrap();
        let y = Tensor::zeros(&[6, 7, 7]);
        let out = m.forward(&Eager, &y, "s", None).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_and_finiteness() {
        let m = T3sc::<f32>::new(small_config(), 2).unwrap();
        let y = Tensor::from_fn(&[6, 9, 11], |i| ((i * 31) % 17) as f32 / 17.0);
        let out = m.forward(&Eager, &y, "s", None).unwrap();
        assert_eq!(out.shape(), y.shape());
        assert!(out.is_finite());
    }

    #[test]
    fn unknown_sensor_and_band_mismatch() {
        let m = T3sc::<f32>::new(small_config(), 2).unwrap();
        let y = Tensor::zeros(&[6, 8, 8]);
        assert!(matches!(m.forward(&Eager, &y, "x", None), Err(Error::UnknownSensor(_))));
        let y = Tensor::zeros(&[5, 8, 8]);
        assert!(matches!(m.forward(&Eager, &y, "s", None), Err(Error::Dimension { .. })));
    }

    #[test]
    fn masking_rules() {
        let y = Tensor::<f64>::from_fn(&[3, 2, 2], |i| i as f64);
        let (same, hidden) = mask_bands(&y, &[0, 1, 2]).unwrap();
        assert_eq!(same, y);
        assert!(hidden.is_empty());
        assert!(mask_bands(&y, &[]).is_err());
        let (m, hidden) = mask_bands(&y, &[0, 2]).unwrap();
        assert_eq!(hidden, vec![1]);
        assert_eq!(&m.data()[4..8], &[5.5; 4]);
    }

    #[test]
    fn hidden_band_content_is_ignored() {
        let m = T3sc::<f64>::new(small_config(), 3).unwrap();
        let y = Tensor::from_fn(&[6, 8, 8], |i| ((i * 7) % 13) as f64 / 13.0);
        let mut y2 = y.clone();
        for v in &mut y2.data_mut()[2 * 64..3 * 64] {
            *v = 0.3;
        }
        let vis = [0, 1, 3, 4, 5];
        let a = m.forward_masked(&Eager, &y, "s", &vis, None).unwrap();
        let b = m.forward_masked(&Eager, &y2, "s", &vis, None).unwrap();
        for band in [0, 1, 3, 4, 5] {
            assert_eq!(a.data()[band * 64..(band + 1) * 64], b.data()[band * 64..(band + 1) * 64]);
        }
    }

    #[test]
    fn estimator_symmetries() {
        let mut cfg = small_config();
        cfg.estimator = true;
        let m = T3sc::<f64>::new(cfg, 4).unwrap();
        let mut y = Tensor::from_fn(&[6, 20, 20], |i| ((i * 13) % 29) as f64 / 29.0);
        let plane = 400;
        // bands 0 and 3 constant at different levels; band 5 duplicates band 1
        y.data_mut()[..plane].fill(0.2);
        y.data_mut()[3 * plane..4 * plane].fill(0.9);
        let band1 = y.data()[plane..2 * plane].to_vec();
        y.data_mut()[5 * plane..].copy_from_slice(&band1);
        let beta = m.estimate_band_weights(&y).unwrap();
        assert!(beta.data().iter().all(|&b| b > 0.0));
        assert_eq!(beta.data()[0], beta.data()[3]);
        assert_eq!(beta.data()[1], beta.data()[5]);
        assert!(matches!(
            m.estimate_band_weights(&Tensor::zeros(&[6, 7, 20])),
            Err(Error::InputTooSmall(_))
        ));
    }

    #[test]
    fn estimator_grid() {
        assert_eq!(NoiseEstimator::<f32>::grid(56, 56), vec![0]);
        assert_eq!(NoiseEstimator::<f32>::grid(120, 56), vec![0, 56, 64]);
        assert_eq!(NoiseEstimator::<f32>::grid(112, 56), vec![0, 56]);
        assert_eq!(NoiseEstimator::<f32>::grid(30, 56), vec![0]);
    }

    #[test]
    fn block_geometry() {
        assert_eq!(block_origins(300, 256, 6), vec![0, 44]);
        assert_eq!(block_origins(256, 256, 6), vec![0]);
        assert_eq!(block_origins(600, 256, 6), vec![0, 250, 344]);
    }

    #[test]
    fn small_image_block_inference_is_forward() {
        let m = T3sc::<f32>::new(small_config(), 5).unwrap();
        let y = Tensor::from_fn(&[6, 12, 10], |i| ((i * 7) % 11) as f32 / 11.0);
        let a = m.denoise(&y, "s", None).unwrap();
        let b = m.forward(&Eager, &y, "s", None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn block_inference_of_constant() {
        let y = Tensor::<f64>::full(&[2, 300, 270], 0.25);
        let out = block_inference(&y, 256, 6, |b| Ok(b.map(|v| v * 2.0))).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn lipschitz_of_identity_atoms() {
        let k = Tensor::<f64>::from_fn(&[3, 3, 1, 1], |i| if i % 4 == 0 { 2.0 } else { 0.0 });
        assert!((synthesis_lipschitz(&k).unwrap() - 4.0).abs() < 1e-9);
    }
}
