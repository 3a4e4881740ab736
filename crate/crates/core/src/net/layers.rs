//! Layer primitives with exact backward passes.
//!
//! The per-sample kernels work on flat `[channels, height, width]` buffers
//! and are shared by the tensor-level API and the U-Net.

use crate::error::{Error, Result};

use super::{gemm, gemm_ld, Scalar, Tensor};

/// Geometry of a 2-D convolution from a `cin x h x w` map to `cout x ho x wo`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, h: usize, w: usize) -> Result<Self> {
        if k == 0 || stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::InvalidShape(format!(
                "kernel {k} stride {stride} pad {pad} does not fit a {h}x{w} map"
            )));
        }
        Ok(Self {
            cin,
            cout,
            k,
            stride,
            pad,
            h,
            w,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    /// Rows of the im2col matrix.
    pub fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `o` whose input coordinate `o*stride + tap - pad` lies in `[0, n)`.
    fn valid_range(&self, tap: usize, n: usize, n_out: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let off = tap as isize - p;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = (n as isize - 1 - off).div_euclid(s) + 1;
        let hi = hi.clamp(0, n_out as isize);
        (lo.min(hi) as usize, hi as usize)
    }
}

/// Unfold `x` (`cin x h x w`) into `cols` (`cin*k*k x (r1-r0)*wo`) for
/// output rows `r0..r1`.
pub(crate) fn im2col_rows<T: Scalar>(x: &[T], g: &ConvGeom, r0: usize, r1: usize, cols: &mut [T]) {
    let (k, s, n) = (g.k, g.stride, (r1 - r0) * g.wo);
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            let (oy0, oy1) = g.valid_range(ki, g.h, g.ho);
            let (oy0, oy1) = (oy0.max(r0), oy1.min(r1));
            for kj in 0..k {
                let (ox0, ox1) = g.valid_range(kj, g.w, g.wo);
                let row = &mut cols[((c * k + ki) * k + kj) * n..][..n];
                row.fill(T::zero());
                for oy in oy0..oy1 {
                    let iy = oy * s + ki - g.pad;
                    let dst = &mut row[(oy - r0) * g.wo..(oy - r0 + 1) * g.wo];
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    if s == 1 {
                        let ix0 = ox0 + kj - g.pad;
                        dst[ox0..ox1].copy_from_slice(&src[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            dst[ox] = src[ox * s + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_rows`]: scatter-add `cols` back into `x`.
pub(crate) fn col2im_rows<T: Scalar>(cols: &[T], g: &ConvGeom, r0: usize, r1: usize, x: &mut [T]) {
    let (k, s, n) = (g.k, g.stride, (r1 - r0) * g.wo);
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            let (oy0, oy1) = g.valid_range(ki, g.h, g.ho);
            let (oy0, oy1) = (oy0.max(r0), oy1.min(r1));
            for kj in 0..k {
                let (ox0, ox1) = g.valid_range(kj, g.w, g.wo);
                let row = &cols[((c * k + ki) * k + kj) * n..][..n];
                for oy in oy0..oy1 {
                    let iy = oy * s + ki - g.pad;
                    let src = &row[(oy - r0) * g.wo..(oy - r0 + 1) * g.wo];
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    if s == 1 {
                        let ix0 = ox0 + kj - g.pad;
                        for (d, &v) in dst[ix0..ix0 + (ox1 - ox0)].iter_mut().zip(&src[ox0..ox1]) {
                            *d += v;
                        }
                    } else {
                        for ox in ox0..ox1 {
                            dst[ox * s + kj - g.pad] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Output-row blocks small enough that one im2col block stays in cache.
fn row_blocks(g: &ConvGeom) -> impl Iterator<Item = (usize, usize)> {
    const BLOCK_ELEMS: usize = 1 << 16;
    const MIN_COLUMNS: usize = 256;
    let wo = g.wo.max(1);
    let rows = (BLOCK_ELEMS / (g.patch_len() * wo).max(1))
        .max(MIN_COLUMNS.div_ceil(wo))
        .clamp(1, g.ho.max(1));
    let ho = g.ho;
    (0..ho).step_by(rows).map(move |r0| (r0, (r0 + rows).min(ho)))
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], pixels: usize) {
    for (plane, &b) in out.chunks_exact_mut(pixels).zip(bias) {
        plane.fill(b);
    }
}

fn accumulate_bias_grad<T: Scalar>(grad_out: &[T], pixels: usize, db: &mut [T]) {
    for (plane, d) in grad_out.chunks_exact(pixels).zip(db.iter_mut()) {
        *d += plane.iter().copied().sum::<T>();
    }
}

/// Convolution of one sample; `weight` is `[cout, cin, k, k]`.
pub(crate) fn conv_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], g: &ConvGeom) -> Vec<T> {
    let (hw, kk) = (g.out_pixels(), g.patch_len());
    let mut out = vec![T::zero(); g.cout * hw];
    add_bias(&mut out, b, hw);
    if g.is_pointwise() {
        gemm(false, false, g.cout, hw, g.cin, w, x, T::one(), &mut out);
        return out;
    }
    let mut cols = Vec::new();
    for (r0, r1) in row_blocks(g) {
        let n = (r1 - r0) * g.wo;
        cols.resize(kk * n, T::zero());
        im2col_rows(x, g, r0, r1, &mut cols);
        gemm_ld(false, false, g.cout, n, kk, w, kk, &cols, n, T::one(), &mut out[r0 * g.wo..], hw);
    }
    out
}

/// Backward of [`conv_forward`]. Accumulates into `dw` and `db`; returns the
/// input gradient when `want_dx`.
pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    g: &ConvGeom,
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    let (hw, kk) = (g.out_pixels(), g.patch_len());
    accumulate_bias_grad(dy, hw, db);
    if g.is_pointwise() {
        gemm(false, true, g.cout, kk, hw, dy, x, T::one(), dw);
        return want_dx.then(|| {
            let mut dx = vec![T::zero(); g.cin * hw];
            gemm(true, false, kk, hw, g.cout, w, dy, T::zero(), &mut dx);
            dx
        });
    }
    let mut dx = want_dx.then(|| vec![T::zero(); g.cin * g.h * g.w]);
    let mut cols = Vec::new();
    for (r0, r1) in row_blocks(g) {
        let n = (r1 - r0) * g.wo;
        cols.resize(kk * n, T::zero());
        im2col_rows(x, g, r0, r1, &mut cols);
        let dyb = &dy[r0 * g.wo..];
        gemm_ld(false, true, g.cout, kk, n, dyb, hw, &cols, n, T::one(), dw, kk);
        if let Some(dx) = dx.as_mut() {
            gemm_ld(true, false, kk, n, g.cout, w, kk, dyb, hw, T::zero(), &mut cols, n);
            col2im_rows(&cols, g, r0, r1, dx);
        }
    }
    dx
}

/// Geometry of a transposed convolution expressed as the convolution it is
/// the adjoint of: that convolution maps the `cout x ho x wo` output back to
/// the `cin x h x w` input.
pub(crate) fn transposed_geom(cin: usize, cout: usize, k: usize, stride: usize, h: usize, w: usize) -> Result<ConvGeom> {
    if k == 0 || stride == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidShape("empty transposed convolution".into()));
    }
    let (ho, wo) = ((h - 1) * stride + k, (w - 1) * stride + k);
    let g = ConvGeom::new(cout, cin, k, stride, 0, ho, wo)?;
    debug_assert!(g.ho == h && g.wo == w);
    Ok(g)
}

/// Transposed convolution of one sample; `weight` is `[cin, cout, k, k]` and
/// `g` comes from [`transposed_geom`].
pub(crate) fn convt_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], g: &ConvGeom) -> Vec<T> {
    let (hw_in, kk) = (g.out_pixels(), g.patch_len());
    let hw_out = g.h * g.w;
    let mut out = vec![T::zero(); g.cin * hw_out];
    add_bias(&mut out, b, hw_out);
    let mut cols = Vec::new();
    for (r0, r1) in row_blocks(g) {
        let n = (r1 - r0) * g.wo;
        cols.resize(kk * n, T::zero());
        gemm_ld(true, false, kk, n, g.cout, w, kk, &x[r0 * g.wo..], hw_in, T::zero(), &mut cols, n);
        col2im_rows(&cols, g, r0, r1, &mut out);
    }
    out
}

pub(crate) fn convt_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    g: &ConvGeom,
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    let (hw_in, kk) = (g.out_pixels(), g.patch_len());
    accumulate_bias_grad(dy, g.h * g.w, db);
    let mut dx = want_dx.then(|| vec![T::zero(); g.cout * hw_in]);
    let mut cols = Vec::new();
    for (r0, r1) in row_blocks(g) {
        let n = (r1 - r0) * g.wo;
        cols.resize(kk * n, T::zero());
        im2col_rows(dy, g, r0, r1, &mut cols);
        gemm_ld(false, true, g.cout, kk, n, &x[r0 * g.wo..], hw_in, &cols, n, T::one(), dw, kk);
        if let Some(dx) = dx.as_mut() {
            gemm_ld(false, false, g.cout, n, kk, w, kk, &cols, n, T::zero(), &mut dx[r0 * g.wo..], hw_in);
        }
    }
    dx
}

pub(crate) fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero the gradient where the activation output was not positive.
pub(crate) fn relu_mask<T: Scalar>(out: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Gradients of a convolution-type layer.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

fn check_weight<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>, transposed: bool) -> Result<(usize, usize, usize)> {
    let [a, b, k, k2] = weight.shape();
    let (cin, cout) = if transposed { (a, b) } else { (b, a) };
    if k != k2 {
        return Err(Error::InvalidShape(format!("non-square kernel {k}x{k2}")));
    }
    if input.channels() != cin {
        return Err(Error::InvalidShape(format!(
            "input has {} channels, weight expects {cin}",
            input.channels()
        )));
    }
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::InvalidShape(format!("{} biases for {cout} outputs", b.len())));
        }
    }
    Ok((cin, cout, k))
}

/// Same-padded convolution: padding `(k-1)/2`, weight `[cout, cin, k, k]`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T], stride: usize) -> Result<Tensor<T>> {
    let (cin, cout, k) = check_weight(input, weight, Some(bias), false)?;
    let g = ConvGeom::new(cin, cout, k, stride, (k - 1) / 2, input.height(), input.width())?;
    let mut data = Vec::with_capacity(input.batch() * cout * g.out_pixels());
    for i in 0..input.batch() {
        data.extend(conv_forward(input.sample(i), weight.data(), bias, &g));
    }
    Tensor::new([input.batch(), cout, g.ho, g.wo], data)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    grad_output: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (cin, cout, k) = check_weight(input, weight, None, false)?;
    let g = ConvGeom::new(cin, cout, k, stride, (k - 1) / 2, input.height(), input.width())?;
    if grad_output.shape() != [input.batch(), cout, g.ho, g.wo] {
        return Err(Error::InvalidShape("gradient does not match convolution output".into()));
    }
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = vec![T::zero(); cout];
    let mut dx = Vec::with_capacity(input.data().len());
    for i in 0..input.batch() {
        let d = conv_backward(input.sample(i), weight.data(), &g, grad_output.sample(i), dw.data_mut(), &mut db, true);
        dx.extend(d.expect("requested"));
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), dx)?,
        weight: dw,
        bias: db,
    })
}

/// Transposed convolution without padding, weight `[cin, cout, k, k]`.
/// Output size is `(h-1)*stride + k`.
pub fn conv_transpose2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T], stride: usize) -> Result<Tensor<T>> {
    let (cin, cout, k) = check_weight(input, weight, Some(bias), true)?;
    let g = transposed_geom(cin, cout, k, stride, input.height(), input.width())?;
    let mut data = Vec::with_capacity(input.batch() * cout * g.h * g.w);
    for i in 0..input.batch() {
        data.extend(convt_forward(input.sample(i), weight.data(), bias, &g));
    }
    Tensor::new([input.batch(), cout, g.h, g.w], data)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    grad_output: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (cin, cout, k) = check_weight(input, weight, None, true)?;
    let g = transposed_geom(cin, cout, k, stride, input.height(), input.width())?;
    if grad_output.shape() != [input.batch(), cout, g.h, g.w] {
        return Err(Error::InvalidShape("gradient does not match transposed output".into()));
    }
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = vec![T::zero(); cout];
    let mut dx = Vec::with_capacity(input.data().len());
    for i in 0..input.batch() {
        let d = convt_backward(input.sample(i), weight.data(), &g, grad_output.sample(i), dw.data_mut(), &mut db, true);
        dx.extend(d.expect("requested"));
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), dx)?,
        weight: dw,
        bias: db,
    })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    relu_inplace(y.data_mut());
    y
}

/// Gradient of [`relu`] given its output.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad_output: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_output.clone();
    relu_mask(output.data(), g.data_mut());
    g
}

/// Stack `a` then `b` along channels.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, h, w] = a.shape();
    if b.batch() != n || b.height() != h || b.width() != w {
        return Err(Error::InvalidShape(format!(
            "cannot concatenate {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    for i in 0..n {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Tensor::new([n, ca + b.channels(), h, w], data)
}

/// Split a gradient of [`concat_channels`] back into its two parts.
pub fn concat_channels_backward<T: Scalar>(grad: &Tensor<T>, channels_a: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = grad.shape();
    if channels_a > c {
        return Err(Error::InvalidShape("split point beyond channel count".into()));
    }
    let split = channels_a * h * w;
    let (mut da, mut db) = (Vec::new(), Vec::new());
    for i in 0..n {
        let (x, y) = grad.sample(i).split_at(split);
        da.extend_from_slice(x);
        db.extend_from_slice(y);
    }
    Ok((
        Tensor::new([n, channels_a, h, w], da)?,
        Tensor::new([n, c - channels_a, h, w], db)?,
    ))
}

/// Mean squared error over all elements plus `lambda` times the given
/// squared weight norm.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, weight_sq_sum: f64, lambda: f64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::InvalidShape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.data().len().max(1) as f64;
    let sse: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p.f64() - t.f64()).powi(2))
        .sum();
    Ok(sse / n + lambda * weight_sq_sum)
}
