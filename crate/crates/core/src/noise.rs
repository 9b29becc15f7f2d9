//! Seeded synthetic degradations. Every standard deviation is given on the
//! 0-255 scale and divided by 255 before being added to a normalized cube.
//! Noisy values are never clipped.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CORRELATED_BETA: f64 = 23.08;
pub const CORRELATED_ETA: f64 = 0.157;
pub const STRIPE_SIGMA: f64 = 25.0;
pub const STRIPE_BAND_FRACTION: f64 = 0.33;
pub const STRIPE_COLUMNS: (f64, f64) = (0.10, 0.15);
pub const STRIPE_OFFSET: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NoiseSpec {
    Iid { sigma: f64 },
    BandUniform { min: f64, max: f64 },
    Correlated { beta: f64, eta: f64 },
    Stripes { sigma: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseSpec::Iid { sigma } | NoiseSpec::Stripes { sigma } => sigma >= 0.0,
            NoiseSpec::BandUniform { min, max } => min >= 0.0 && max >= min,
            NoiseSpec::Correlated { beta, eta } => beta >= 0.0 && eta > 0.0,
        };
        if ok && self.params().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid noise parameters: {self}")))
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            NoiseSpec::Iid { sigma } | NoiseSpec::Stripes { sigma } => vec![sigma],
            NoiseSpec::BandUniform { min, max } => vec![min, max],
            NoiseSpec::Correlated { beta, eta } => vec![beta, eta],
        }
    }
}

/// Grammar: `iid:<sigma>`, `band:<min>:<max>`, `correlated[:<beta>:<eta>]`,
/// `stripes[:<sigma>]`.
impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Domain(format!("bad number {:?} in noise spec {s:?}", parts[i])))
        };
        let spec = match (parts[0], parts.len()) {
            ("iid", 2) => NoiseSpec::Iid { sigma: num(1)? },
            ("band", 3) => NoiseSpec::BandUniform {
                min: num(1)?,
                max: num(2)?,
            },
            ("correlated", 1) => NoiseSpec::Correlated {
                beta: CORRELATED_BETA,
                eta: CORRELATED_ETA,
            },
            ("correlated", 3) => NoiseSpec::Correlated {
                beta: num(1)?,
                eta: num(2)?,
            },
            ("stripes", 1) => NoiseSpec::Stripes { sigma: STRIPE_SIGMA },
            ("stripes", 2) => NoiseSpec::Stripes { sigma: num(1)? },
            _ => {
                return Err(Error::Domain(format!(
                    "unknown noise spec {s:?}; expected iid:S, band:MIN:MAX, correlated[:B:E] or stripes[:S]"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NoiseSpec::Iid { sigma } => write!(f, "iid:{sigma}"),
            NoiseSpec::BandUniform { min, max } => write!(f, "band:{min}:{max}"),
            NoiseSpec::Correlated { beta, eta } => write!(f, "correlated:{beta}:{eta}"),
            NoiseSpec::Stripes { sigma } => write!(f, "stripes:{sigma}"),
        }
    }
}

impl TryFrom<String> for NoiseSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<NoiseSpec> for String {
    fn from(n: NoiseSpec) -> String {
        n.to_string()
    }
}

/// The random quantities drawn for one image, for diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseDraw {
    /// Per-band Gaussian standard deviation on the 0-255 scale.
    pub sigmas: Vec<f64>,
    /// `(band, [(column, offset)])` for every striped band.
    pub stripes: Vec<(usize, Vec<(usize, f64)>)>,
}

impl NoiseDraw {
    /// Line-oriented sidecar text.
    pub fn to_text(&self, spec: &NoiseSpec, seed: u64) -> String {
        let mut s = format!("spec {spec}\nseed {seed}\n");
        for (b, sig) in self.sigmas.iter().enumerate() {
            s.push_str(&format!("sigma {b} {sig:.6}\n"));
        }
        s.push_str(&format!("stripe_bands {}\n", self.stripes.len()));
        for (b, cols) in &self.stripes {
            s.push_str(&format!("stripe_band {b} columns {}\n", cols.len()));
            for (c, off) in cols {
                s.push_str(&format!("stripe {b} {c} {off:.6}\n"));
            }
        }
        s
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based sub-seed: `splitmix(splitmix(splitmix(master) ^ a) ^ b)`.
/// Distinct `(a, b)` pairs give independent streams from one master seed.
pub fn split_seed(master: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ a) ^ b)
}

/// `sigma_i = beta * exp(-(i/c - 1/2)^2 / (4 eta^2))`, `i = 0..c`.
pub fn correlated_sigmas(c: usize, beta: f64, eta: f64) -> Vec<f64> {
    (0..c)
        .map(|i| {
            let t = i as f64 / c as f64 - 0.5;
            beta * (-(t * t) / (4.0 * eta * eta)).exp()
        })
        .collect()
}

/// Number of striped bands, `floor(0.33 c)`.
pub fn stripe_band_count(c: usize) -> usize {
    (STRIPE_BAND_FRACTION * c as f64 + 1e-9).floor() as usize
}

fn add_gaussian<T: Real>(x: &mut Tensor<T>, sigmas: &[f64], rng: &mut impl Rng) {
    let plane = x.numel() / sigmas.len().max(1);
    for (b, band) in x.data_mut().chunks_mut(plane.max(1)).enumerate() {
        let s = sigmas[b] / 255.0;
        for v in band {
            let n: f64 = rng.sample(StandardNormal);
            *v = *v + T::lit(s * n);
        }
    }
}

/// Applies `spec` to a `[c, h, w]` cube. Pure function of `(x, spec, seed)`.
pub fn apply<T: Real>(x: &Tensor<T>, spec: &NoiseSpec, seed: u64) -> Result<(Tensor<T>, NoiseDraw)> {
    spec.validate()?;
    if x.ndim() != 3 {
        return Err(Error::dim("noise", x.shape(), &[0, 0, 0]));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = x.clone();
    let mut draw = NoiseDraw::default();
    match *spec {
        NoiseSpec::Iid { sigma } => draw.sigmas = vec![sigma; c],
        NoiseSpec::BandUniform { min, max } => {
            draw.sigmas = (0..c)
                .map(|_| if max > min { rng.random_range(min..=max) } else { min })
                .collect();
        }
        NoiseSpec::Correlated { beta, eta } => draw.sigmas = correlated_sigmas(c, beta, eta),
        NoiseSpec::Stripes { sigma } => {
            let mut bands = sample(&mut rng, c, stripe_band_count(c)).into_vec();
            bands.sort_unstable();
            for b in bands {
                let f = rng.random_range(STRIPE_COLUMNS.0..=STRIPE_COLUMNS.1);
                let n = ((f * w as f64).floor() as usize).min(w);
                let mut cols = sample(&mut rng, w, n).into_vec();
                cols.sort_unstable();
                let cols: Vec<(usize, f64)> = cols
                    .into_iter()
                    .map(|col| (col, rng.random_range(-STRIPE_OFFSET..=STRIPE_OFFSET)))
                    .collect();
                let plane = &mut y.data_mut()[b * h * w..(b + 1) * h * w];
                for &(col, off) in &cols {
                    for r in 0..h {
                        plane[r * w + col] = plane[r * w + col] + T::lit(off);
                    }
                }
                draw.stripes.push((b, cols));
            }
            draw.sigmas = vec![sigma; c];
        }
    }
    add_gaussian(&mut y, &draw.sigmas, &mut rng);
    Ok((y, draw))
}
