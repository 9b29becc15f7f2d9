//! Shared reference builders for the integration tests.
#![allow(dead_code)]

use rand::Rng;
use t3sc::sparse_coding::lasso::Matrix;
use t3sc::Tensor;

pub fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Dense matrix of the count-normalized synthesis operator, built by placing
/// each atom by hand.
pub fn synthesis_matrix(k: &Tensor<f64>, h: usize, w: usize, row_scale: &[f64]) -> Matrix {
    let (p, c, s) = (k.shape()[0], k.shape()[1], k.shape()[2]);
    let (ho, wo) = (h - s + 1, w - s + 1);
    let mut count = vec![0.0; h * w];
    for i in 0..ho {
        for j in 0..wo {
            for a in 0..s {
                for b in 0..s {
                    count[(i + a) * w + j + b] += 1.0;
                }
            }
        }
    }
    let (rows, cols) = (c * h * w, p * ho * wo);
    let mut data = vec![0.0; rows * cols];
    for atom in 0..p {
        for i in 0..ho {
            for j in 0..wo {
                let col = (atom * ho + i) * wo + j;
                for ch in 0..c {
                    for a in 0..s {
                        for b in 0..s {
                            let px = (i + a) * w + j + b;
                            let row = ch * h * w + px;
                            let kv = k.data()[((atom * c + ch) * s + a) * s + b];
                            data[row * cols + col] = row_scale[ch] * kv / count[px];
                        }
                    }
                }
            }
        }
    }
    Matrix::new(rows, cols, data)
}

pub fn spectral_norm_sq(m: &Matrix) -> f64 {
    let mut v = vec![1.0; m.cols];
    let mut est = 0.0;
    for _ in 0..5000 {
        let w = m.apply_t(&m.apply(&v));
        est = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / est).collect();
    }
    est
}
