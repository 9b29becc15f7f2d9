//! Unrolled sparse coding: patchwise ISTA/LISTA steps, the convolutional
//! encoder used by the model, overlap-add decoding, and a coordinate-descent
//! lasso solver used as a reference.

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Real, Tensor};

/// Codes for every window position of an image, plus the geometry needed to
/// decode them.
#[derive(Clone, Debug)]
pub struct CodeMap<V> {
    /// `[p, h', w']`
    pub codes: V,
    pub side: usize,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
}

/// Iteration settings for the convolutional encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CscConfig {
    pub iterations: usize,
    pub stride: usize,
}

impl Default for CscConfig {
    fn default() -> Self {
        CscConfig {
            iterations: 5,
            stride: 1,
        }
    }
}

/// One LISTA step on a single patch: `S_lambda[alpha + C^T (y - D alpha)]`.
///
/// `alpha: [p]`, `y: [m]`, `c` and `d`: `[m, p]` with atoms as columns,
/// `lambda`: scalar or `[p]`.
pub fn lista_step<T: Real, G: Graph<T>>(
    g: &G,
    alpha: &G::Var,
    y: &G::Var,
    c: &G::Var,
    d: &G::Var,
    lambda: &G::Var,
) -> Result<G::Var> {
    let (ds, cs) = (g.shape(d), g.shape(c));
    let (ys, als) = (g.shape(y), g.shape(alpha));
    if ds.len() != 2 || ds != cs {
        return Err(Error::dim("lista_step", &cs, &ds));
    }
    let (m, p) = (ds[0], ds[1]);
    if ys != [m] || als != [p] {
        return Err(Error::dim("lista_step", &ys, &als));
    }
    let a_col = g.reshape(alpha, &[p, 1])?;
    let recon = g.reshape(&g.matmul(d, &a_col)?, &[m])?;
    let residual = g.sub(y, &recon)?;
    let r_row = g.reshape(&residual, &[1, m])?;
    let corr = g.reshape(&g.matmul(&r_row, c)?, &[p])?;
    let u = g.add(alpha, &corr)?;
    g.soft_threshold(&u, lambda)
}

/// One ISTA step, `S_lambda[alpha + eta D^T (y - D alpha)]`, computed as the
/// LISTA step with `C = eta D`.
pub fn ista_step<T: Real, G: Graph<T>>(
    g: &G,
    alpha: &G::Var,
    y: &G::Var,
    d: &G::Var,
    step_size: T,
    lambda: &G::Var,
) -> Result<G::Var> {
    if !(step_size > T::zero()) {
        return Err(Error::Domain(format!("step size must be positive, got {step_size}")));
    }
    let c = g.scale(d, step_size)?;
    lista_step(g, alpha, y, &c, d, lambda)
}

/// `[c, h, w]` tensor holding `1 / count` for every pixel, where `count` is the
/// number of windows covering it. `None` when every pixel is covered once.
fn inverse_count_planes<T: Real>(
    channels: usize,
    h: usize,
    w: usize,
    side: usize,
    stride: usize,
) -> Result<Option<Tensor<T>>> {
    if side == 1 && stride == 1 {
        return Ok(None);
    }
    let counts = ops::overlap_counts::<T>(h, w, side, stride)?;
    let plane: Vec<T> = counts.data().iter().map(|&c| T::one() / c).collect();
    let data = plane.iter().copied().cycle().take(channels * h * w).collect();
    Ok(Some(Tensor::new(&[channels, h, w], data)?))
}

fn kernel_geometry(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() != 4 || shape[2] != shape[3] {
        return Err(Error::dim("kernel", shape, &[0, 0, 0, 0]));
    }
    Ok((shape[0], shape[1], shape[2]))
}

/// Convolutional sparse coding with `iterations` unrolled steps from `alpha = 0`:
///
/// ```text
/// rec   = (sum_i R_i D alpha_i) / count
/// alpha = S_lambda[alpha + C^T_conv(weights * (y - rec) / count)]
/// ```
///
/// `y: [c, h, w]`; `c_kernel`, `d_kernel`: `[p, c, s, s]`; `lambda`: `[p]` or
/// scalar; `weights`: optional per-band `[c]` data-term weights. Dividing the
/// residual by the per-pixel count makes `C = eta D` exactly proximal gradient
/// on `1/2 ||y - rec||^2 + lambda ||alpha||_1`. With weights, the step is
/// divided by `max(1, max weights)` (both the weights and `lambda`), so the
/// iteration stays a valid proximal-gradient step on the weighted objective.
pub fn csc_encode<T: Real, G: Graph<T>>(
    g: &G,
    y: &G::Var,
    c_kernel: &G::Var,
    d_kernel: &G::Var,
    lambda: &G::Var,
    weights: Option<&G::Var>,
    cfg: CscConfig,
) -> Result<CodeMap<G::Var>> {
    let ys = g.shape(y);
    let (cs, dsh) = (g.shape(c_kernel), g.shape(d_kernel));
    let (p, ch, side) = kernel_geometry(&dsh)?;
    if cs != dsh {
        return Err(Error::dim("csc_encode", &cs, &dsh));
    }
    if ys.len() != 3 || ys[0] != ch {
        return Err(Error::dim("csc_encode", &ys, &dsh));
    }
    if let Some(wt) = weights {
        let ws = g.shape(wt);
        if ws != [ch] {
            return Err(Error::dim("csc_encode", &ws, &[ch]));
        }
    }
    let (h, w) = (ys[1], ys[2]);
    let geo = ops::ConvGeometry::new(ch, h, w, side, cfg.stride)?;
    let inv = inverse_count_planes::<T>(ch, h, w, side, cfg.stride)?.map(|t| g.constant(t));

    let (weights, lambda) = match weights {
        Some(wt) => {
            let one = g.constant(Tensor::ones(&[1]));
            let inv = g.recip(&g.max(&g.concat(&[one, wt.clone()])?)?)?;
            (Some(g.mul(wt, &inv)?), g.mul(lambda, &inv)?)
        }
        None => (None, lambda.clone()),
    };
    let lambda = &lambda;

    let mut alpha: Option<G::Var> = None;
    for _ in 0..cfg.iterations {
        let mut residual = match &alpha {
            None => y.clone(),
            Some(a) => {
                let rec = g.conv_transpose2d(a, d_kernel, cfg.stride, Some((h, w)))?;
                let rec = match &inv {
                    Some(iv) => g.mul(&rec, iv)?,
                    None => rec,
                };
                g.sub(y, &rec)?
            }
        };
        if let Some(iv) = &inv {
            residual = g.mul(&residual, iv)?;
        }
        if let Some(wt) = &weights {
            residual = g.mul(&residual, wt)?;
        }
        let corr = g.conv2d(&residual, c_kernel, cfg.stride)?;
        let u = match &alpha {
            None => corr,
            Some(a) => g.add(a, &corr)?,
        };
        alpha = Some(g.soft_threshold(&u, lambda)?);
    }
    let codes = match alpha {
        Some(a) => a,
        None => g.constant(Tensor::zeros(&[p, geo.out_height, geo.out_width])),
    };
    Ok(CodeMap {
        codes,
        side,
        stride: cfg.stride,
        height: h,
        width: w,
    })
}

/// Per-band weighted variant: the data term becomes
/// `1/2 sum_j beta_j ||M_j (y - rec)||^2`.
pub fn weighted_csc_encode<T: Real, G: Graph<T>>(
    g: &G,
    y: &G::Var,
    c_kernel: &G::Var,
    d_kernel: &G::Var,
    lambda: &G::Var,
    beta: &G::Var,
    cfg: CscConfig,
) -> Result<CodeMap<G::Var>> {
    csc_encode(g, y, c_kernel, d_kernel, lambda, Some(beta), cfg)
}

/// Places `W alpha_i` at every window and divides by the per-pixel count.
pub fn overlap_add_decode<T: Real, G: Graph<T>>(
    g: &G,
    codes: &CodeMap<G::Var>,
    w_kernel: &G::Var,
) -> Result<G::Var> {
    let ks = g.shape(w_kernel);
    let (p, ch, side) = kernel_geometry(&ks)?;
    let cs = g.shape(&codes.codes);
    if side != codes.side || cs.len() != 3 || cs[0] != p {
        return Err(Error::dim("overlap_add_decode", &cs, &ks));
    }
    let out = g.conv_transpose2d(
        &codes.codes,
        w_kernel,
        codes.stride,
        Some((codes.height, codes.width)),
    )?;
    match inverse_count_planes::<T>(ch, codes.height, codes.width, side, codes.stride)? {
        Some(inv) => g.mul(&out, &g.constant(inv)),
        None => Ok(out),
    }
}

/// Reference lasso solvers in 64-bit, used to validate the unrolled encoders.
pub mod lasso {
    /// Dense `rows x cols` matrix in row-major order.
    #[derive(Clone, Debug)]
    pub struct Matrix {
        pub rows: usize,
        pub cols: usize,
        pub data: Vec<f64>,
    }

    impl Matrix {
        pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
            assert_eq!(rows * cols, data.len());
            Matrix { rows, cols, data }
        }

        pub fn at(&self, i: usize, j: usize) -> f64 {
            self.data[i * self.cols + j]
        }

        pub fn apply(&self, x: &[f64]) -> Vec<f64> {
            (0..self.rows)
                .map(|i| (0..self.cols).map(|j| self.at(i, j) * x[j]).sum())
                .collect()
        }

        pub fn apply_t(&self, r: &[f64]) -> Vec<f64> {
            let mut out = vec![0.0; self.cols];
            for i in 0..self.rows {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += self.at(i, j) * r[i];
                }
            }
            out
        }
    }

    /// `1/2 ||y - D alpha||^2 + sum_j lambda_j |alpha_j|`
    pub fn objective(y: &[f64], d: &Matrix, lambda: &[f64], alpha: &[f64]) -> f64 {
        let rec = d.apply(alpha);
        let fit: f64 = y.iter().zip(&rec).map(|(a, b)| (a - b) * (a - b)).sum();
        let pen: f64 = alpha.iter().zip(lambda).map(|(a, l)| l * a.abs()).sum();
        0.5 * fit + pen
    }

    /// Primal objective minus the value of the dual point obtained by scaling
    /// the residual into the dual feasible set.
    pub fn duality_gap(y: &[f64], d: &Matrix, lambda: &[f64], alpha: &[f64]) -> f64 {
        let rec = d.apply(alpha);
        let r: Vec<f64> = y.iter().zip(&rec).map(|(a, b)| a - b).collect();
        let corr = d.apply_t(&r);
        let mut scale = 1.0f64;
        for (c, &l) in corr.iter().zip(lambda) {
            if c.abs() > l {
                scale = scale.min(if c.abs() > 0.0 { l / c.abs() } else { 1.0 });
            }
        }
        let theta: Vec<f64> = r.iter().map(|v| v * scale).collect();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let diff: f64 = y.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum();
        let dual = 0.5 * yy - 0.5 * diff;
        objective(y, d, lambda, alpha) - dual
    }

    /// Cyclic coordinate descent until the duality gap drops below `1e-10`
    /// (or the sweep budget runs out).
    pub fn lasso_oracle(y: &[f64], d: &Matrix, lambda: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), d.rows);
        assert_eq!(lambda.len(), d.cols);
        let norms: Vec<f64> = (0..d.cols)
            .map(|j| (0..d.rows).map(|i| d.at(i, j) * d.at(i, j)).sum())
            .collect();
        let mut alpha = vec![0.0; d.cols];
        let mut r = y.to_vec();
        for sweep in 0..1_000_000 {
            for j in 0..d.cols {
                if norms[j] == 0.0 {
                    continue;
                }
                let old = alpha[j];
                let rho: f64 = (0..d.rows).map(|i| d.at(i, j) * r[i]).sum::<f64>() + norms[j] * old;
                let new = rho.signum() * (rho.abs() - lambda[j]).max(0.0) / norms[j];
                if new != old {
                    let delta = new - old;
                    for (i, ri) in r.iter_mut().enumerate() {
                        *ri -= d.at(i, j) * delta;
                    }
                    alpha[j] = new;
                }
            }
            if sweep % 10 == 9 && duality_gap(y, d, lambda, &alpha) < 1e-10 {
                break;
            }
        }
        alpha
    }
}
