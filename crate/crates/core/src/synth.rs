//! Procedural cubes: a few smooth endmember spectra mixed by piecewise
//! smooth abundance maps with sharp region boundaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::noise::split_seed;
use crate::tensor::Tensor;

const ENDMEMBERS: usize = 4;
const REGIONS: usize = 6;

fn spectrum(c: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = rng.random_range(0.15..0.5);
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.12..0.4),
                rng.random_range(-0.25..0.4),
            )
        })
        .collect();
    (0..c)
        .map(|b| {
            let t = if c > 1 { b as f64 / (c - 1) as f64 } else { 0.5 };
            let v = base
                + bumps
                    .iter()
                    .map(|&(mu, s, a)| a * (-(t - mu) * (t - mu) / (2.0 * s * s)).exp())
                    .sum::<f64>();
            v.clamp(0.02, 0.95)
        })
        .collect()
}

/// One `[c, h, w]` cube with values in `[0, 1]`.
pub fn synthetic_cube(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectra: Vec<Vec<f64>> = (0..ENDMEMBERS).map(|_| spectrum(c, &mut rng)).collect();
    // region seeds, each with its own abundance vector and a linear shading
    let regions: Vec<(f64, f64, Vec<f64>, f64, f64)> = (0..REGIONS)
        .map(|_| {
            let mut a: Vec<f64> = (0..ENDMEMBERS).map(|_| rng.random_range(0.0f64..1.0).powi(2)).collect();
            let s: f64 = a.iter().sum::<f64>() + 1e-9;
            a.iter_mut().for_each(|v| *v /= s);
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                a,
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            )
        })
        .collect();
    let disks: Vec<(f64, f64, f64, usize)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(0.1..0.25) * h.min(w) as f64,
                rng.random_range(0..ENDMEMBERS),
            )
        })
        .collect();
    let mut out = vec![0.0f32; c * h * w];
    for r in 0..h {
        for q in 0..w {
            let (y, x) = (r as f64, q as f64);
            let nearest = regions
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - y).powi(2) + (a.1 - x).powi(2);
                    let db = (b.0 - y).powi(2) + (b.1 - x).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            let mut ab = nearest.2.clone();
            let shade = 1.0 + nearest.3 * (y / h as f64 - 0.5) + nearest.4 * (x / w as f64 - 0.5);
            for &(cy, cx, rad, k) in &disks {
                if (cy - y).powi(2) + (cx - x).powi(2) < rad * rad {
                    ab.iter_mut().for_each(|v| *v *= 0.3);
                    ab[k] += 0.7;
                }
            }
            for b in 0..c {
                let v: f64 = ab.iter().zip(&spectra).map(|(a, s)| a * s[b]).sum::<f64>() * shade;
                out[(b * h + r) * w + q] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(&[c, h, w], out).expect("shape matches data")
}

/// `n` cubes with per-cube seeds split from `seed`.
pub fn synthetic_dataset(n: usize, c: usize, size: usize, seed: u64) -> Vec<Tensor<f32>> {
    (0..n)
        .map(|i| synthetic_cube(c, size, size, split_seed(seed, 0x5e7, i as u64)))
        .collect()
}
