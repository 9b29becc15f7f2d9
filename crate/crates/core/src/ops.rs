//! Forward kernels and their adjoints. These are pure functions on tensors;
//! the tape in [`crate::autodiff`] records which of them ran and replays the
//! adjoints in reverse.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// How the right operand of a binary op maps onto the left operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    Same,
    Scalar,
    /// Right operand has shape `[lhs.shape[0]]` and is repeated over the trailing axes.
    Leading,
}

pub fn broadcast_kind(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Broadcast> {
    if lhs == rhs {
        Ok(Broadcast::Same)
    } else if rhs.iter().product::<usize>() == 1 && rhs.len() <= 1 {
        Ok(Broadcast::Scalar)
    } else if rhs.len() == 1 && !lhs.is_empty() && lhs[0] == rhs[0] {
        Ok(Broadcast::Leading)
    } else {
        Err(Error::dim(op, lhs, rhs))
    }
}

fn rhs_index(kind: Broadcast, i: usize, inner: usize) -> usize {
    match kind {
        Broadcast::Same => i,
        Broadcast::Scalar => 0,
        Broadcast::Leading => i / inner,
    }
}

fn inner_len(shape: &[usize]) -> usize {
    shape.iter().skip(1).product()
}

pub fn binary<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let kind = broadcast_kind(op, a.shape(), b.shape())?;
    let inner = inner_len(a.shape()).max(1);
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, bd[rhs_index(kind, i, inner)]))
        .collect();
    Tensor::new(a.shape(), data)
}

/// Sums a full-size gradient down to the shape of a broadcast right operand.
pub fn reduce_to<T: Real>(kind: Broadcast, g: &Tensor<T>, rhs_shape: &[usize]) -> Tensor<T> {
    match kind {
        Broadcast::Same => g.clone(),
        Broadcast::Scalar => Tensor::full(rhs_shape, g.sum()),
        Broadcast::Leading => {
            let inner = inner_len(g.shape()).max(1);
            let data = g.data().chunks(inner).map(|c| c.iter().copied().sum()).collect();
            Tensor::new(rhs_shape, data).expect("leading broadcast shape")
        }
    }
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::dim("matmul", sa, sb));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = Tensor::zeros(&[m, n]);
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a.data(),
        k as isize,
        1,
        b.data(),
        n as isize,
        1,
        T::zero(),
        out.data_mut(),
        n as isize,
        1,
    );
    Ok(out)
}

pub fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut ga = Tensor::zeros(&[m, k]);
    // ga = g * b^T
    T::gemm(
        m,
        n,
        k,
        T::one(),
        g.data(),
        n as isize,
        1,
        b.data(),
        1,
        n as isize,
        T::zero(),
        ga.data_mut(),
        k as isize,
        1,
    );
    let mut gb = Tensor::zeros(&[k, n]);
    // gb = a^T * g
    T::gemm(
        k,
        m,
        n,
        T::one(),
        a.data(),
        1,
        k as isize,
        g.data(),
        n as isize,
        1,
        T::zero(),
        gb.data_mut(),
        n as isize,
        1,
    );
    (ga, gb)
}

/// Spatial geometry of a "valid" strided convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub side: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        side: usize,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 || side == 0 {
            return Err(Error::Domain(format!(
                "convolution needs side >= 1 and stride >= 1 (got side {side}, stride {stride})"
            )));
        }
        if side > height || side > width {
            return Err(Error::dim(
                "conv2d",
                &[channels, height, width],
                &[side, side],
            ));
        }
        Ok(ConvGeometry {
            channels,
            height,
            width,
            side,
            stride,
            out_height: (height - side) / stride + 1,
            out_width: (width - side) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.side * self.side
    }

    fn cols(&self) -> usize {
        self.out_height * self.out_width
    }

    fn is_pointwise(&self) -> bool {
        self.side == 1 && self.stride == 1
    }
}

/// Unfolds every `side x side` window into a column: `[c*s*s, oh*ow]`.
fn im2col<T: Real>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let (s, oh, ow) = (g.side, g.out_height, g.out_width);
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    for ci in 0..g.channels {
        let plane = &x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for a in 0..s {
            for b in 0..s {
                let row = (ci * s + a) * s + b;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let src_row = &plane[(oy * g.stride + a) * g.width..];
                    let d = &mut dst[oy * ow..(oy + 1) * ow];
                    if g.stride == 1 {
                        d.copy_from_slice(&src_row[b..b + ow]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = src_row[ox * g.stride + b];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps.
fn col2im<T: Real>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let (s, oh, ow) = (g.side, g.out_height, g.out_width);
    let mut x = vec![T::zero(); g.channels * g.height * g.width];
    for ci in 0..g.channels {
        let plane = &mut x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for a in 0..s {
            for b in 0..s {
                let row = (ci * s + a) * s + b;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let base = (oy * g.stride + a) * g.width + b;
                    for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let p = &mut plane[base + ox * g.stride];
                        *p = *p + v;
                    }
                }
            }
        }
    }
    x
}

fn unfold<'a, T: Real>(x: &'a Tensor<T>, g: &ConvGeometry) -> std::borrow::Cow<'a, [T]> {
    if g.is_pointwise() {
        std::borrow::Cow::Borrowed(x.data())
    } else {
        std::borrow::Cow::Owned(im2col(x.data(), g))
    }
}

fn fold<T: Real>(cols: Vec<T>, g: &ConvGeometry) -> Vec<T> {
    if g.is_pointwise() {
        cols
    } else {
        col2im(&cols, g)
    }
}

fn kernel_dims<T: Real>(op: &'static str, k: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let ks = k.shape();
    if ks.len() != 4 || ks[2] != ks[3] {
        return Err(Error::dim(op, ks, &[0, 0, 0, 0]));
    }
    Ok((ks[0], ks[1], ks[2]))
}

fn image_dims<T: Real>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(Error::dim(op, xs, &[0, 0, 0]));
    }
    Ok((xs[0], xs[1], xs[2]))
}

/// Geometry of `conv2d(x, k, stride)`, validating shapes.
pub fn conv2d_geometry<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
) -> Result<ConvGeometry> {
    let (cin, h, w) = image_dims("conv2d", x)?;
    let (_, kin, s) = kernel_dims("conv2d", k)?;
    if kin != cin {
        return Err(Error::dim("conv2d", x.shape(), k.shape()));
    }
    if s > h || s > w {
        return Err(Error::dim("conv2d", x.shape(), k.shape()));
    }
    ConvGeometry::new(cin, h, w, s, stride)
}

/// Valid cross-correlation: `[cin,h,w] * [cout,cin,s,s] -> [cout,h',w']`.
pub fn conv2d<T: Real>(x: &Tensor<T>, k: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let g = conv2d_geometry(x, k, stride)?;
    let cout = k.shape()[0];
    let cols = unfold(x, &g);
    let (rows, n) = (g.rows(), g.cols());
    let mut out = Tensor::zeros(&[cout, g.out_height, g.out_width]);
    T::gemm(
        cout,
        rows,
        n,
        T::one(),
        k.data(),
        rows as isize,
        1,
        &cols,
        n as isize,
        1,
        T::zero(),
        out.data_mut(),
        n as isize,
        1,
    );
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let geo = conv2d_geometry(x, k, stride).expect("forward geometry");
    let cout = k.shape()[0];
    let (rows, n) = (geo.rows(), geo.cols());
    let cols = unfold(x, &geo);

    let mut gk = Tensor::zeros(k.shape());
    T::gemm(
        cout,
        n,
        rows,
        T::one(),
        g.data(),
        n as isize,
        1,
        &cols,
        1,
        n as isize,
        T::zero(),
        gk.data_mut(),
        rows as isize,
        1,
    );

    let mut gcols = vec![T::zero(); rows * n];
    T::gemm(
        rows,
        cout,
        n,
        T::one(),
        k.data(),
        1,
        rows as isize,
        g.data(),
        n as isize,
        1,
        T::zero(),
        &mut gcols,
        n as isize,
        1,
    );
    let gx = Tensor::new(x.shape(), fold(gcols, &geo)).expect("conv2d grad shape");
    (gx, gk)
}

/// Geometry of the image produced by `conv_transpose2d`.
pub fn conv_transpose2d_geometry<T: Real>(
    a: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    out_size: Option<(usize, usize)>,
) -> Result<ConvGeometry> {
    let (p, oh, ow) = image_dims("conv_transpose2d", a)?;
    let (kp, cin, s) = kernel_dims("conv_transpose2d", k)?;
    if kp != p || stride == 0 || oh == 0 || ow == 0 {
        return Err(Error::dim("conv_transpose2d", a.shape(), k.shape()));
    }
    let (h, w) = out_size.unwrap_or(((oh - 1) * stride + s, (ow - 1) * stride + s));
    let g = ConvGeometry::new(cin, h, w, s, stride)
        .map_err(|_| Error::dim("conv_transpose2d", a.shape(), &[cin, h, w]))?;
    if g.out_height != oh || g.out_width != ow {
        return Err(Error::dim("conv_transpose2d", a.shape(), &[cin, h, w]));
    }
    Ok(g)
}

/// Adjoint of [`conv2d`]: `[p,h',w'] x [p,cin,s,s] -> [cin,h,w]`, placing each
/// code's atom at its window and summing overlaps.
pub fn conv_transpose2d<T: Real>(
    a: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    out_size: Option<(usize, usize)>,
) -> Result<Tensor<T>> {
    let g = conv_transpose2d_geometry(a, k, stride, out_size)?;
    let p = k.shape()[0];
    let (rows, n) = (g.rows(), g.cols());
    let mut cols = vec![T::zero(); rows * n];
    T::gemm(
        rows,
        p,
        n,
        T::one(),
        k.data(),
        1,
        rows as isize,
        a.data(),
        n as isize,
        1,
        T::zero(),
        &mut cols,
        n as isize,
        1,
    );
    Tensor::new(&[g.channels, g.height, g.width], fold(cols, &g))
}

pub fn conv_transpose2d_backward<T: Real>(
    a: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let out_size = Some((g.shape()[1], g.shape()[2]));
    let geo = conv_transpose2d_geometry(a, k, stride, out_size).expect("forward geometry");
    let p = k.shape()[0];
    let (rows, n) = (geo.rows(), geo.cols());
    let gcols = unfold(g, &geo);

    let mut ga = Tensor::zeros(a.shape());
    T::gemm(
        p,
        rows,
        n,
        T::one(),
        k.data(),
        rows as isize,
        1,
        &gcols,
        n as isize,
        1,
        T::zero(),
        ga.data_mut(),
        n as isize,
        1,
    );
    let mut gk = Tensor::zeros(k.shape());
    T::gemm(
        p,
        n,
        rows,
        T::one(),
        a.data(),
        n as isize,
        1,
        &gcols,
        1,
        n as isize,
        T::zero(),
        gk.data_mut(),
        rows as isize,
        1,
    );
    (ga, gk)
}

/// Number of windows covering each pixel of an `h x w` image.
pub fn overlap_counts<T: Real>(
    h: usize,
    w: usize,
    side: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let geo = ConvGeometry::new(1, h, w, side, stride)?;
    let ones_code = Tensor::ones(&[1, geo.out_height, geo.out_width]);
    let ones_kernel = Tensor::ones(&[1, 1, side, side]);
    conv_transpose2d(&ones_code, &ones_kernel, stride, Some((h, w)))?.reshape(&[h, w])
}

pub fn soft_threshold<T: Real>(u: &Tensor<T>, lambda: &Tensor<T>) -> Result<Tensor<T>> {
    if lambda.data().iter().any(|&l| l < T::zero() || l.is_nan()) {
        return Err(Error::Domain(
            "soft-threshold level must be non-negative".into(),
        ));
    }
    binary("soft_threshold", u, lambda, |x, l| {
        let m = x.abs() - l;
        if m > T::zero() {
            x.signum() * m
        } else {
            T::zero()
        }
    })
}

pub fn soft_threshold_backward<T: Real>(
    u: &Tensor<T>,
    lambda: &Tensor<T>,
    out: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let kind = broadcast_kind("soft_threshold", u.shape(), lambda.shape()).expect("checked");
    let gu = out
        .zip_map(g, |o, gi| if o != T::zero() { gi } else { T::zero() })
        .expect("same shape");
    let gl_full = out
        .zip_map(g, |o, gi| {
            if o != T::zero() {
                -o.signum() * gi
            } else {
                T::zero()
            }
        })
        .expect("same shape");
    (gu, reduce_to(kind, &gl_full, lambda.shape()))
}

pub fn softplus_scalar<T: Real>(x: T) -> T {
    // max(x, 0) + log1p(exp(-|x|)) avoids overflow for large |x|
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Largest element as a `[1]` tensor and the index of its first occurrence.
pub fn max_all<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, usize)> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in x.data().iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    let (at, v) = best.ok_or_else(|| Error::dim("max", x.shape(), &[1]))?;
    Ok((Tensor::full(&[1], v), at))
}

/// Mean over every axis but the first: `[c, ...] -> [c]`.
pub fn global_average_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.ndim() < 2 || x.numel() == 0 {
        return Err(Error::dim("global_average_pool", x.shape(), &[0, 0]));
    }
    let c = x.shape()[0];
    let inner = inner_len(x.shape());
    let n = T::from_usize(inner).unwrap();
    let data = x
        .data()
        .chunks(inner)
        .map(|ch| ch.iter().copied().sum::<T>() / n)
        .collect();
    Tensor::new(&[c], data)
}

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dim("mse", a.shape(), b.shape()));
    }
    if a.numel() == 0 {
        return Err(Error::Domain("mse of empty tensors".into()));
    }
    let n = T::from_usize(a.numel()).unwrap();
    let s: T = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(Tensor::scalar(s / n))
}

/// `[p, s*s, r] x [p, r, c] -> [p, c, s, s]` with atom `j = (U_j V_j)^T`.
pub fn lowrank_materialize<T: Real>(u: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let (us, vs) = (u.shape(), v.shape());
    if us.len() != 3 || vs.len() != 3 || us[0] != vs[0] || us[2] != vs[1] {
        return Err(Error::dim("lowrank_materialize", us, vs));
    }
    let (p, ss, r, c) = (us[0], us[1], us[2], vs[2]);
    let s = (ss as f64).sqrt().round() as usize;
    if s * s != ss {
        return Err(Error::Domain(format!(
            "spatial factor extent {ss} is not a square"
        )));
    }
    let mut out = Tensor::zeros(&[p, c, s, s]);
    for j in 0..p {
        // kernel_j [c, ss] = V_j^T [c, r] * U_j^T [r, ss]
        T::gemm(
            c,
            r,
            ss,
            T::one(),
            &v.data()[j * r * c..],
            1,
            c as isize,
            &u.data()[j * ss * r..],
            1,
            r as isize,
            T::zero(),
            &mut out.data_mut()[j * c * ss..(j + 1) * c * ss],
            ss as isize,
            1,
        );
    }
    Ok(out)
}

pub fn lowrank_materialize_backward<T: Real>(
    u: &Tensor<T>,
    v: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (p, ss, r, c) = (u.shape()[0], u.shape()[1], u.shape()[2], v.shape()[2]);
    let mut gu = Tensor::zeros(u.shape());
    let mut gv = Tensor::zeros(v.shape());
    for j in 0..p {
        let gj = &g.data()[j * c * ss..(j + 1) * c * ss];
        // gU_j [ss, r] = G_j^T [ss, c] * V_j^T [c, r]
        T::gemm(
            ss,
            c,
            r,
            T::one(),
            gj,
            1,
            ss as isize,
            &v.data()[j * r * c..],
            1,
            c as isize,
            T::zero(),
            &mut gu.data_mut()[j * ss * r..(j + 1) * ss * r],
            r as isize,
            1,
        );
        // gV_j [r, c] = U_j^T [r, ss] * G_j^T [ss, c]
        T::gemm(
            r,
            ss,
            c,
            T::one(),
            &u.data()[j * ss * r..],
            1,
            r as isize,
            gj,
            1,
            ss as isize,
            T::zero(),
            &mut gv.data_mut()[j * r * c..(j + 1) * r * c],
            c as isize,
            1,
        );
    }
    (gu, gv)
}

/// Per-channel sums over every stride-1 `side x side` window.
fn window_sum<T: Real>(x: &[T], c: usize, h: usize, w: usize, side: usize) -> Vec<T> {
    let (oh, ow) = (h - side + 1, w - side + 1);
    let mut horiz = vec![T::zero(); c * h * ow];
    for (src, dst) in x.chunks(w).zip(horiz.chunks_mut(ow)) {
        for (ox, d) in dst.iter_mut().enumerate() {
            *d = src[ox..ox + side].iter().copied().sum();
        }
    }
    let mut out = vec![T::zero(); c * oh * ow];
    for ci in 0..c {
        let plane = &horiz[ci * h * ow..(ci + 1) * h * ow];
        let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for oy in 0..oh {
            for a in 0..side {
                let src = &plane[(oy + a) * ow..(oy + a + 1) * ow];
                for (d, &v) in dst[oy * ow..(oy + 1) * ow].iter_mut().zip(src) {
                    *d = *d + v;
                }
            }
        }
    }
    out
}

/// Adjoint of [`window_sum`]: adds each window value back onto its pixels.
fn window_spread<T: Real>(m: &[T], c: usize, h: usize, w: usize, side: usize) -> Vec<T> {
    let (oh, ow) = (h - side + 1, w - side + 1);
    let mut vert = vec![T::zero(); c * h * ow];
    for ci in 0..c {
        let src = &m[ci * oh * ow..(ci + 1) * oh * ow];
        let dst = &mut vert[ci * h * ow..(ci + 1) * h * ow];
        for oy in 0..oh {
            for a in 0..side {
                for (d, &v) in dst[(oy + a) * ow..(oy + a + 1) * ow]
                    .iter_mut()
                    .zip(&src[oy * ow..(oy + 1) * ow])
                {
                    *d = *d + v;
                }
            }
        }
    }
    let mut out = vec![T::zero(); c * h * w];
    for (src, dst) in vert.chunks(ow).zip(out.chunks_mut(w)) {
        for (ox, &v) in src.iter().enumerate() {
            for d in &mut dst[ox..ox + side] {
                *d = *d + v;
            }
        }
    }
    out
}

/// Image whose pixels are the average of the means of every window covering
/// them, per channel. Subtracting it centers each patch channel before the
/// spatial sparse coding layer.
pub fn local_mean<T: Real>(x: &Tensor<T>, side: usize) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims("local_mean", x)?;
    let inv = inverse_counts::<T>(h, w, side)?;
    let area = T::from_usize(side * side).unwrap();
    let mut m = window_sum(x.data(), c, h, w, side);
    m.iter_mut().for_each(|v| *v = *v / area);
    let mut out = window_spread(&m, c, h, w, side);
    for plane in out.chunks_mut(h * w) {
        for (o, &iv) in plane.iter_mut().zip(inv.data()) {
            *o = *o * iv;
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn local_mean_backward<T: Real>(g: &Tensor<T>, side: usize) -> Tensor<T> {
    let (c, h, w) = (g.shape()[0], g.shape()[1], g.shape()[2]);
    let inv = inverse_counts::<T>(h, w, side).expect("forward geometry");
    let area = T::from_usize(side * side).unwrap();
    let mut scaled = g.data().to_vec();
    for plane in scaled.chunks_mut(h * w) {
        for (o, &iv) in plane.iter_mut().zip(inv.data()) {
            *o = *o * iv;
        }
    }
    let mut m = window_sum(&scaled, c, h, w, side);
    m.iter_mut().for_each(|v| *v = *v / area);
    Tensor::new(g.shape(), window_spread(&m, c, h, w, side)).expect("same shape")
}

/// `1 / overlap_counts` for stride-1 windows.
pub fn inverse_counts<T: Real>(h: usize, w: usize, side: usize) -> Result<Tensor<T>> {
    Ok(overlap_counts::<T>(h, w, side, 1)?.map(|c| T::one() / c))
}
