//! Band-averaged quality indexes. PSNR, ERGAS and SAM treat the first argument
//! as the reference; SSIM and FSIM are symmetric. All inputs are `[c, h, w]`
//! cubes on the normalized `[0, 1]` scale.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn check_pair<T: Real>(op: &'static str, x: &Tensor<T>, y: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if x.ndim() != 3 || x.shape() != y.shape() {
        return Err(Error::dim(op, x.shape(), y.shape()));
    }
    Ok((x.shape()[0], x.shape()[1], x.shape()[2]))
}

fn bands<T: Real>(x: &Tensor<T>) -> Vec<Vec<f64>> {
    let plane = x.shape()[1] * x.shape()[2];
    x.data()
        .chunks(plane.max(1))
        .map(|b| b.iter().map(|v| v.to_f64().unwrap()).collect())
        .collect()
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `10 log10(1 / mse)` per band; `+inf` for identical bands.
pub fn psnr_bands<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Vec<f64>> {
    check_pair("psnr", x, y)?;
    Ok(bands(x)
        .iter()
        .zip(bands(y))
        .map(|(a, b)| {
            let m = mse(a, &b);
            if m == 0.0 {
                f64::INFINITY
            } else {
                -10.0 * m.log10()
            }
        })
        .collect())
}

/// Mean PSNR over bands with peak 1. Identical cubes give `+inf`.
pub fn mpsnr<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    let p = psnr_bands(x, y)?;
    Ok(p.iter().sum::<f64>() / p.len() as f64)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size * size)
        .map(|i| {
            let (a, b) = ((i / size) as f64 - c, (i % size) as f64 - c);
            (-(a * a + b * b) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Windowed weighted sum over every valid window position.
fn filter_valid(img: &[f64], h: usize, w: usize, win: &[f64], k: usize) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut s = 0.0;
            for a in 0..k {
                let row = &img[(i + a) * w + j..][..k];
                for (b, &v) in row.iter().enumerate() {
                    s += win[a * k + b] * v;
                }
            }
            out[i * ow + j] = s;
        }
    }
    out
}

/// SSIM of two single-band images: 11x11 Gaussian window (sigma 1.5, shrunk
/// to the image for images smaller than 11 pixels), `K1 = 0.01`, `K2 = 0.03`,
/// dynamic range 1, mean over valid window positions.
pub fn ssim_band(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = SSIM_WINDOW.min(h).min(w);
    let win = gaussian_window(k, SSIM_SIGMA);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mu_a = filter_valid(a, h, w, &win, k);
    let mu_b = filter_valid(b, h, w, &win, k);
    let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let aa = filter_valid(&sq(a, a), h, w, &win, k);
    let bb = filter_valid(&sq(b, b), h, w, &win, k);
    let ab = filter_valid(&sq(a, b), h, w, &win, k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

pub fn ssim_bands<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Vec<f64>> {
    let (_, h, w) = check_pair("ssim", x, y)?;
    Ok(bands(x).iter().zip(bands(y)).map(|(a, b)| ssim_band(a, &b, h, w)).collect())
}

pub fn mssim<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    let s = ssim_bands(x, y)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

struct Fft2 {
    rows: usize,
    cols: usize,
    planner: FftPlanner<f64>,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        Fft2 {
            rows,
            cols,
            planner: FftPlanner::new(),
        }
    }

    /// In-place 2-D transform; the inverse includes the `1 / (rows cols)` factor.
    fn run(&mut self, data: &mut [Complex<f64>], inverse: bool) {
        let (rows, cols) = (self.rows, self.cols);
        let row_fft = if inverse {
            self.planner.plan_fft_inverse(cols)
        } else {
            self.planner.plan_fft_forward(cols)
        };
        for r in data.chunks_mut(cols) {
            row_fft.process(r);
        }
        let col_fft = if inverse {
            self.planner.plan_fft_inverse(rows)
        } else {
            self.planner.plan_fft_forward(rows)
        };
        let mut col = vec![Complex::new(0.0, 0.0); rows];
        for c in 0..cols {
            for r in 0..rows {
                col[r] = data[r * cols + c];
            }
            col_fft.process(&mut col);
            for r in 0..rows {
                data[r * cols + c] = col[r];
            }
        }
        if inverse {
            let n = (rows * cols) as f64;
            data.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Normalized frequency coordinates, already shifted so that index 0 holds
/// the zero frequency.
fn freq_axis(n: usize) -> Vec<f64> {
    let centered: Vec<f64> = if n % 2 == 1 {
        let d = (n - 1).max(1) as f64;
        (0..n).map(|i| (i as f64 - (n - 1) as f64 / 2.0) / d).collect()
    } else {
        (0..n).map(|i| (i as f64 - (n / 2) as f64) / n as f64).collect()
    };
    (0..n).map(|i| centered[(i + n / 2) % n]).collect()
}

const PC_SCALES: usize = 4;
const PC_ORIENTS: usize = 4;
const PC_MIN_WAVELENGTH: f64 = 6.0;
const PC_MULT: f64 = 2.0;
const PC_SIGMA_ON_F: f64 = 0.55;
const PC_D_THETA_ON_SIGMA: f64 = 1.2;
const PC_K: f64 = 2.0;
const PC_EPS: f64 = 1e-4;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Phase congruency map (log-Gabor bank, 4 scales x 4 orientations, noise
/// compensation from the smallest scale's median energy).
pub fn phase_congruency(img: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let n = rows * cols;
    let mut fft = Fft2::new(rows, cols);
    let mut spectrum: Vec<Complex<f64>> = img.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.run(&mut spectrum, false);

    let (fx, fy) = (freq_axis(cols), freq_axis(rows));
    let mut radius = vec![0.0; n];
    let mut sin_t = vec![0.0; n];
    let mut cos_t = vec![0.0; n];
    let mut lowpass = vec![0.0; n];
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (fx[c], fy[r]);
            let rad = (x * x + y * y).sqrt();
            let theta = (-y).atan2(x);
            let i = r * cols + c;
            lowpass[i] = 1.0 / (1.0 + (rad / 0.45).powi(30));
            radius[i] = rad;
            sin_t[i] = theta.sin();
            cos_t[i] = theta.cos();
        }
    }
    radius[0] = 1.0;

    let log_gabor: Vec<Vec<f64>> = (0..PC_SCALES)
        .map(|s| {
            let fo = 1.0 / (PC_MIN_WAVELENGTH * PC_MULT.powi(s as i32));
            let denom = 2.0 * PC_SIGMA_ON_F.ln().powi(2);
            let mut g: Vec<f64> = radius
                .iter()
                .zip(&lowpass)
                .map(|(&r, &lp)| (-(r / fo).ln().powi(2) / denom).exp() * lp)
                .collect();
            g[0] = 0.0;
            g
        })
        .collect();

    let theta_sigma = PI / PC_ORIENTS as f64 / PC_D_THETA_ON_SIGMA;
    let mut energy_all = vec![0.0; n];
    let mut an_all = vec![0.0; n];
    for o in 0..PC_ORIENTS {
        let angle = o as f64 * PI / PC_ORIENTS as f64;
        let (ca, sa) = (angle.cos(), angle.sin());
        let spread: Vec<f64> = (0..n)
            .map(|i| {
                let ds = sin_t[i] * ca - cos_t[i] * sa;
                let dc = cos_t[i] * ca + sin_t[i] * sa;
                let dtheta = ds.atan2(dc).abs();
                (-(dtheta * dtheta) / (2.0 * theta_sigma * theta_sigma)).exp()
            })
            .collect();
        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        let mut eo: Vec<Vec<Complex<f64>>> = Vec::with_capacity(PC_SCALES);
        let mut spatial_filters: Vec<Vec<f64>> = Vec::with_capacity(PC_SCALES);
        let mut em_n = 0.0;
        for (s, lg) in log_gabor.iter().enumerate() {
            let filter: Vec<f64> = lg.iter().zip(&spread).map(|(a, b)| a * b).collect();
            if s == 0 {
                em_n = filter.iter().map(|v| v * v).sum();
            }
            let mut f: Vec<Complex<f64>> = filter.iter().map(|&v| Complex::new(v, 0.0)).collect();
            fft.run(&mut f, true);
            let scale = (n as f64).sqrt();
            spatial_filters.push(f.iter().map(|v| v.re * scale).collect());

            let mut resp: Vec<Complex<f64>> = spectrum.iter().zip(&filter).map(|(z, &g)| z * g).collect();
            fft.run(&mut resp, true);
            for i in 0..n {
                sum_an[i] += resp[i].norm();
                sum_e[i] += resp[i].re;
                sum_o[i] += resp[i].im;
            }
            eo.push(resp);
        }
        let mut energy = vec![0.0; n];
        for i in 0..n {
            let x = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + PC_EPS;
            let (me, mo) = (sum_e[i] / x, sum_o[i] / x);
            for resp in &eo {
                let (e, od) = (resp[i].re, resp[i].im);
                energy[i] += e * me + od * mo - (e * mo - od * me).abs();
            }
        }
        let median_e2n = median(eo[0].iter().map(|v| v.norm_sqr()).collect());
        let mean_e2n = -median_e2n / 0.5f64.ln();
        let noise_power = mean_e2n / em_n;
        let mut sum_an2 = 0.0;
        let mut sum_aiaj = 0.0;
        for i in 0..n {
            for si in 0..PC_SCALES {
                sum_an2 += spatial_filters[si][i].powi(2);
                for sj in si + 1..PC_SCALES {
                    sum_aiaj += spatial_filters[si][i] * spatial_filters[sj][i];
                }
            }
        }
        let noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
        let tau = (noise_energy2 / 2.0).sqrt();
        let noise_mean = tau * (PI / 2.0).sqrt();
        let noise_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        let t = (noise_mean + PC_K * noise_sigma) / 1.7;
        for i in 0..n {
            energy_all[i] += (energy[i] - t).max(0.0);
            an_all[i] += sum_an[i];
        }
    }
    energy_all
        .iter()
        .zip(&an_all)
        .map(|(&e, &a)| if a > 0.0 { e / a } else { 0.0 })
        .collect()
}

/// Discrete convolution with `'same'` output size and zero padding.
fn conv_same(img: &[f64], rows: usize, cols: usize, k: &[f64], kr: usize, kc: usize) -> Vec<f64> {
    let (or, oc) = (kr / 2, kc / 2);
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut s = 0.0;
            for a in 0..kr {
                for b in 0..kc {
                    let (y, x) = ((r + or) as isize - a as isize, (c + oc) as isize - b as isize);
                    if y >= 0 && x >= 0 && (y as usize) < rows && (x as usize) < cols {
                        s += img[y as usize * cols + x as usize] * k[a * kc + b];
                    }
                }
            }
            out[r * cols + c] = s;
        }
    }
    out
}

const FSIM_T1: f64 = 0.85;
const FSIM_T2: f64 = 160.0;

/// FSIM of two single-band images given on the `[0, 1]` scale. Images are
/// rescaled to 0-255, downsampled by `max(1, round(min(h, w) / 256))` with a
/// box filter, and compared through phase congruency and Scharr gradient
/// magnitude. Two constant images score 1.
pub fn fsim_band(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(a) && constant(b) {
        return 1.0;
    }
    let f = ((h.min(w) as f64 / 256.0).round() as usize).max(1);
    let prep = |img: &[f64]| -> (Vec<f64>, usize, usize) {
        let scaled: Vec<f64> = img.iter().map(|v| v * 255.0).collect();
        if f == 1 {
            return (scaled, h, w);
        }
        let k = vec![1.0 / (f * f) as f64; f * f];
        let avg = conv_same(&scaled, h, w, &k, f, f);
        let (rh, rw) = (h.div_ceil(f), w.div_ceil(f));
        let out = (0..rh * rw).map(|i| avg[(i / rw) * f * w + (i % rw) * f]).collect();
        (out, rh, rw)
    };
    let (ya, rows, cols) = prep(a);
    let (yb, _, _) = prep(b);
    let pca = phase_congruency(&ya, rows, cols);
    let pcb = phase_congruency(&yb, rows, cols);
    let dx = [3.0, 0.0, -3.0, 10.0, 0.0, -10.0, 3.0, 0.0, -3.0].map(|v| v / 16.0);
    let dy = [3.0, 10.0, 3.0, 0.0, 0.0, 0.0, -3.0, -10.0, -3.0].map(|v| v / 16.0);
    let grad = |img: &[f64]| -> Vec<f64> {
        let gx = conv_same(img, rows, cols, &dx, 3, 3);
        let gy = conv_same(img, rows, cols, &dy, 3, 3);
        gx.iter().zip(&gy).map(|(x, y)| (x * x + y * y).sqrt()).collect()
    };
    let (ga, gb) = (grad(&ya), grad(&yb));
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..rows * cols {
        let pc_sim = (2.0 * pca[i] * pcb[i] + FSIM_T1) / (pca[i] * pca[i] + pcb[i] * pcb[i] + FSIM_T1);
        let g_sim = (2.0 * ga[i] * gb[i] + FSIM_T2) / (ga[i] * ga[i] + gb[i] * gb[i] + FSIM_T2);
        let pcm = pca[i].max(pcb[i]);
        num += g_sim * pc_sim * pcm;
        den += pcm;
    }
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

pub fn fsim_bands<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Vec<f64>> {
    let (_, h, w) = check_pair("fsim", x, y)?;
    Ok(bands(x).iter().zip(bands(y)).map(|(a, b)| fsim_band(a, &b, h, w)).collect())
}

pub fn mfsim<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    let s = fsim_bands(x, y)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// `100 ratio sqrt(mean_j mse_j / mean_j^2)` with `mean_j` the reference band
/// mean. Bands with zero reference mean are skipped.
pub fn ergas<T: Real>(x: &Tensor<T>, y: &Tensor<T>, ratio: f64) -> Result<f64> {
    check_pair("ergas", x, y)?;
    let (xs, ys) = (bands(x), bands(y));
    let mut acc = 0.0;
    let mut used = 0usize;
    for (j, (a, b)) in xs.iter().zip(&ys).enumerate() {
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        if mean == 0.0 {
            log::warn!("ERGAS: band {j} has zero mean in the reference and is skipped");
            continue;
        }
        acc += mse(a, b) / (mean * mean);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Domain("ERGAS undefined: every reference band has zero mean".into()));
    }
    Ok(100.0 * ratio * (acc / used as f64).sqrt())
}

/// Mean spectral angle in degrees. Pixels where either spectrum is zero are
/// skipped.
pub fn msam<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    let (c, h, w) = check_pair("msam", x, y)?;
    let plane = h * w;
    let (xd, yd) = (x.data(), y.data());
    let (mut total, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for p in 0..plane {
        let u: Vec<f64> = (0..c).map(|b| xd[b * plane + p].to_f64().unwrap()).collect();
        let v: Vec<f64> = (0..c).map(|b| yd[b * plane + p].to_f64().unwrap()).collect();
        let na = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            skipped += 1;
            continue;
        }
        let (mut diff, mut sum) = (0.0, 0.0);
        for (a, b) in u.iter().zip(&v) {
            let (a, b) = (a / na, b / nb);
            diff += (a - b) * (a - b);
            sum += (a + b) * (a + b);
        }
        total += 2.0 * diff.sqrt().atan2(sum.sqrt());
        used += 1;
    }
    if skipped > 0 {
        log::warn!("MSAM: {skipped} zero-norm pixels skipped");
    }
    if used == 0 {
        return Ok(0.0);
    }
    Ok((total / used as f64).to_degrees())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub mpsnr: f64,
    pub mssim: f64,
    pub mfsim: f64,
    pub ergas: f64,
    pub msam: f64,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl MetricReport {
    pub fn compute<T: Real>(reference: &Tensor<T>, test: &Tensor<T>) -> Result<Self> {
        let psnr = psnr_bands(reference, test)?;
        let ssim = ssim_bands(reference, test)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(MetricReport {
            mpsnr: mean(&psnr),
            mssim: mean(&ssim),
            mfsim: mfsim(reference, test)?,
            ergas: ergas(reference, test, 1.0)?,
            msam: msam(reference, test)?,
            psnr,
            ssim,
        })
    }

    /// Aligned human-readable table, followed by per-band rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# PSNR peak = 1; identical bands report inf; ERGAS ratio = 1; MSAM in degrees\n");
        s.push_str(&format!("{:<8}{:>14}\n", "metric", "value"));
        s.push_str(&format!("{:<8}{:>14}\n", "MPSNR", fmt_db(self.mpsnr)));
        s.push_str(&format!("{:<8}{:>14.6}\n", "MSSIM", self.mssim));
        s.push_str(&format!("{:<8}{:>14.6}\n", "MFSIM", self.mfsim));
        s.push_str(&format!("{:<8}{:>14.6}\n", "ERGAS", self.ergas));
        s.push_str(&format!("{:<8}{:>14.6}\n", "MSAM", self.msam));
        s.push_str(&format!("\n{:<6}{:>12}{:>12}\n", "band", "psnr", "ssim"));
        for (b, (p, q)) in self.psnr.iter().zip(&self.ssim).enumerate() {
            s.push_str(&format!("{b:<6}{:>12}{q:>12.6}\n", fmt_db(*p)));
        }
        s
    }

    /// One `key value` pair per line, full precision.
    pub fn to_machine(&self) -> String {
        let mut s = format!(
            "mpsnr {}\nmssim {}\nmfsim {}\nergas {}\nmsam {}\n",
            fmt_full(self.mpsnr),
            self.mssim,
            self.mfsim,
            self.ergas,
            self.msam
        );
        for (b, (p, q)) in self.psnr.iter().zip(&self.ssim).enumerate() {
            s.push_str(&format!("psnr.{b} {}\nssim.{b} {q}\n", fmt_full(*p)));
        }
        s
    }
}

fn fmt_full(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        v.to_string()
    }
}
