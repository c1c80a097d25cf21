//! Dense row-major tensor and the two heavy primitives, matmul and conv2d.
//!
//! Storage is a flat `Vec` with implicit row-major strides. Kernels may
//! parallelize over rows or over the batch dimension; every output element is
//! produced by exactly one task with a fixed accumulation order, so results
//! are bitwise independent of the worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                reason: format!("shape holds {} elements but data holds {}", numel, data.len()),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::ZERO; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..numel).map(&mut f).collect(),
        }
    }

    /// 2x2 identity and friends; rows == cols.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::ONE;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single element of a scalar-shaped tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::Contract {
                op: "Tensor::item",
                reason: format!("expected one element, shape is {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::InvalidShape {
                op: "Tensor::reshape",
                reason: format!("cannot view {} elements as {:?}", self.data.len(), shape),
                shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T + Sync) -> Self {
        // Parallel chunks have fixed boundaries; f is pure per element.
        let mut data = vec![T::ZERO; self.data.len()];
        if self.data.len() >= PAR_ELEMWISE_MIN {
            data.par_chunks_mut(ELEMWISE_CHUNK)
                .zip(self.data.par_chunks(ELEMWISE_CHUNK))
                .for_each(|(dst, src)| {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = f(*s);
                    }
                });
        } else {
            for (d, s) in data.iter_mut().zip(&self.data) {
                *d = f(*s);
            }
        }
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::ZERO, |acc, v| acc.max(v.abs()))
    }

    /// Sum of all elements, accumulated in order.
    pub fn sum(&self) -> T {
        let mut s = T::ZERO;
        for v in &self.data {
            s += *v;
        }
        s
    }

    /// Lossless (f32 -> f64) or rounding (f64 -> f32) precision change.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

const PAR_ELEMWISE_MIN: usize = 1 << 16;
const ELEMWISE_CHUNK: usize = 1 << 14;
/// Work threshold (m*k*n) above which matmul fans out over row chunks.
const PAR_MATMUL_MIN: usize = 1 << 18;
const MATMUL_ROW_CHUNK: usize = 16;
/// Images per deterministic accumulation chunk in conv2d backward.
const CONV_BWD_CHUNK: usize = 8;

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// `[m,k] x [k,n] -> [m,n]` dense product.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = Tensor::zeros(vec![m, n]);
    matmul_into(&a.data, &b.data, &mut out.data, m, k, n);
    Ok(out)
}

/// C = A*B with C pre-zeroed by the caller contract here (we zero internally).
pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    c.iter_mut().for_each(|v| *v = T::ZERO);
    matmul_acc(a, b, c, m, k, n);
}

/// C += A*B. Row-parallel; each output row keeps a fixed k-then-j order.
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m * k * n >= PAR_MATMUL_MIN && m > MATMUL_ROW_CHUNK {
        c.par_chunks_mut(MATMUL_ROW_CHUNK * n)
            .enumerate()
            .for_each(|(chunk, c_rows)| {
                let i0 = chunk * MATMUL_ROW_CHUNK;
                let rows = c_rows.len() / n;
                matmul_rows(&a[i0 * k..(i0 + rows) * k], b, c_rows, rows, k, n);
            });
    } else {
        matmul_rows(a, b, c, m, k, n);
    }
}

/// Serial kernel over a band of rows, register-blocked four rows at a time so
/// each streamed row of B is reused.
fn matmul_rows<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = c[i * n..].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, rest) = rest.split_at_mut(n);
        let c3 = &mut rest[..n];
        for p in 0..k {
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = brow[j];
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aik = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aik * *bv;
            }
        }
        i += 1;
    }
}

/// 2-D transpose.
pub fn transpose2d<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape.len() != 2 {
        return Err(Error::InvalidShape {
            op: "transpose2d",
            shape: a.shape.clone(),
            reason: "expected rank 2".into(),
        });
    }
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut out = Tensor::zeros(vec![c, r]);
    for i in 0..r {
        for j in 0..c {
            out.data[j * r + i] = a.data[i * c + j];
        }
    }
    Ok(out)
}

pub(crate) fn transpose_slice<T: Scalar>(a: &[T], r: usize, c: usize, out: &mut Vec<T>) {
    out.clear();
    out.resize(r * c, T::ZERO);
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(crate) fn conv_dims<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvDims> {
    if input.shape.len() != 4 {
        return Err(Error::InvalidShape {
            op: "conv2d",
            shape: input.shape.clone(),
            reason: "input must be [N,C,H,W]".into(),
        });
    }
    if kernel.shape.len() != 4 {
        return Err(Error::InvalidShape {
            op: "conv2d",
            shape: kernel.shape.clone(),
            reason: "kernel must be [F,C,kh,kw]".into(),
        });
    }
    if input.shape[1] != kernel.shape[1] {
        return Err(Error::ShapeMismatch {
            op: "conv2d (channel counts)",
            left: input.shape.clone(),
            right: kernel.shape.clone(),
        });
    }
    if stride == 0 {
        return Err(Error::InvalidParameter {
            name: "stride",
            value: 0.0,
            reason: "must be positive",
        });
    }
    let (n, c, h, w) = (
        input.shape[0],
        input.shape[1],
        input.shape[2],
        input.shape[3],
    );
    let (f, kh, kw) = (kernel.shape[0], kernel.shape[2], kernel.shape[3]);
    if bias.shape() != [f] {
        return Err(Error::ShapeMismatch {
            op: "conv2d (bias)",
            left: bias.shape.clone(),
            right: vec![f],
        });
    }
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(Error::InvalidShape {
            op: "conv2d",
            shape: kernel.shape.clone(),
            reason: format!(
                "kernel {}x{} exceeds padded input {}x{}",
                kh,
                kw,
                h + 2 * padding,
                w + 2 * padding
            ),
        });
    }
    Ok(ConvDims {
        n,
        c,
        h,
        w,
        f,
        kh,
        kw,
        stride,
        padding,
        oh: (h + 2 * padding - kh) / stride + 1,
        ow: (w + 2 * padding - kw) / stride + 1,
    })
}

/// Zero-padded 2-D convolution, `[N,C,H,W] * [F,C,kh,kw] -> [N,F,OH,OW]`.
///
/// Implemented as per-image im2col + matmul; images run in parallel.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let d = conv_dims(input, kernel, bias, stride, padding)?;
    let mut out = Tensor::zeros(vec![d.n, d.f, d.oh, d.ow]);
    let patch = d.c * d.kh * d.kw;
    let spatial = d.oh * d.ow;
    let in_stride = d.c * d.h * d.w;
    let out_stride = d.f * spatial;

    let run_image = |img: usize, out_img: &mut [T], cols: &mut Vec<T>| {
        cols.clear();
        cols.resize(patch * spatial, T::ZERO);
        im2col(&input.data[img * in_stride..(img + 1) * in_stride], &d, cols);
        matmul_rows(&kernel.data, cols, out_img, d.f, patch, spatial);
        for fi in 0..d.f {
            let b = bias.data[fi];
            for v in &mut out_img[fi * spatial..(fi + 1) * spatial] {
                *v += b;
            }
        }
    };

    if d.n > 1 && d.n * d.f * spatial * patch >= PAR_MATMUL_MIN {
        out.data
            .par_chunks_mut(out_stride)
            .enumerate()
            .for_each(|(img, out_img)| {
                let mut cols = Vec::new();
                run_image(img, out_img, &mut cols);
            });
    } else {
        let mut cols = Vec::new();
        for (img, out_img) in out.data.chunks_mut(out_stride).enumerate() {
            run_image(img, out_img, &mut cols);
        }
    }
    Ok(out)
}

/// Lay out the receptive fields of one image as a `[C*kh*kw, OH*OW]` matrix.
fn im2col<T: Scalar>(img: &[T], d: &ConvDims, cols: &mut [T]) {
    let spatial = d.ow * d.oh;
    for ci in 0..d.c {
        let plane = &img[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = ((ci * d.kh + ki) * d.kw + kj) * spatial;
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki) as isize - d.padding as isize;
                    let dst = &mut cols[row + oy * d.ow..row + (oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        continue; // stays zero
                    }
                    let src_row = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, slot) in dst.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kj) as isize - d.padding as isize;
                        if ix >= 0 && ix < d.w as isize {
                            *slot = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter a `[C*kh*kw, OH*OW]` gradient matrix back onto one image.
fn col2im<T: Scalar>(cols: &[T], d: &ConvDims, img: &mut [T]) {
    let spatial = d.ow * d.oh;
    for ci in 0..d.c {
        let plane = &mut img[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = ((ci * d.kh + ki) * d.kw + kj) * spatial;
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki) as isize - d.padding as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * d.ow..row + (oy + 1) * d.ow];
                    let dst_row = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in src.iter().enumerate() {
                        let ix = (ox * d.stride + kj) as isize - d.padding as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst_row[ix as usize] += *v;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of conv2d w.r.t. input, kernel, and bias.
///
/// Weight gradients accumulate over fixed-size image chunks that are summed
/// in a fixed order afterwards, keeping the result independent of worker count.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    dout: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let bias_stub = Tensor::zeros(vec![kernel.shape[0]]);
    let d = conv_dims(input, kernel, &bias_stub, stride, padding)?;
    let patch = d.c * d.kh * d.kw;
    let spatial = d.oh * d.ow;
    let in_stride = d.c * d.h * d.w;
    let out_stride = d.f * spatial;

    let mut kernel_t = Vec::new();
    transpose_slice(&kernel.data, d.f, patch, &mut kernel_t);

    let mut dinput = Tensor::zeros(input.shape.clone());
    let mut dkernel = Tensor::zeros(kernel.shape.clone());
    let mut dbias = Tensor::zeros(vec![d.f]);

    for img in 0..d.n {
        let g = &dout.data[img * out_stride..(img + 1) * out_stride];
        for fi in 0..d.f {
            let mut s = T::ZERO;
            for v in &g[fi * spatial..(fi + 1) * spatial] {
                s += *v;
            }
            dbias.data[fi] += s;
        }
    }

    // Per-chunk partial weight gradients, then an ordered reduction.
    let chunks: Vec<(usize, usize)> = (0..d.n)
        .step_by(CONV_BWD_CHUNK)
        .map(|s| (s, (s + CONV_BWD_CHUNK).min(d.n)))
        .collect();

    let process_chunk = |&(lo, hi): &(usize, usize), din_images: &mut [T]| -> Vec<T> {
        let mut dw = vec![T::ZERO; d.f * patch];
        let mut cols = vec![T::ZERO; patch * spatial];
        let mut cols_t = Vec::new();
        let mut dcols = vec![T::ZERO; patch * spatial];
        for img in lo..hi {
            let x = &input.data[img * in_stride..(img + 1) * in_stride];
            let g = &dout.data[img * out_stride..(img + 1) * out_stride];
            cols.iter_mut().for_each(|v| *v = T::ZERO);
            im2col(x, &d, &mut cols);
            transpose_slice(&cols, patch, spatial, &mut cols_t);
            matmul_rows(g, &cols_t, &mut dw, d.f, spatial, patch);
            dcols.iter_mut().for_each(|v| *v = T::ZERO);
            matmul_rows(&kernel_t, g, &mut dcols, patch, d.f, spatial);
            col2im(
                &dcols,
                &d,
                &mut din_images[(img - lo) * in_stride..(img - lo + 1) * in_stride],
            );
        }
        dw
    };

    let parallel = d.n > CONV_BWD_CHUNK && d.n * d.f * spatial * patch >= PAR_MATMUL_MIN;
    let partials: Vec<Vec<T>> = if parallel {
        chunks
            .par_iter()
            .zip(dinput.data.par_chunks_mut(CONV_BWD_CHUNK * in_stride))
            .map(|(range, din)| process_chunk(range, din))
            .collect()
    } else {
        chunks
            .iter()
            .zip(dinput.data.chunks_mut(CONV_BWD_CHUNK * in_stride))
            .map(|(range, din)| process_chunk(range, din))
            .collect()
    };
    for part in &partials {
        for (acc, v) in dkernel.data.iter_mut().zip(part) {
            *acc += *v;
        }
    }
    Ok((dinput, dkernel, dbias))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Independent triple-loop oracle.
    fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(vec![m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out.data_mut()[i * n + j] = s;
            }
        }
        out
    }

    /// Independent six-nested-loop convolution oracle.
    fn conv_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (n, c, h, ww) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (f, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (ww + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(vec![n, f, oh, ow]);
        for ni in 0..n {
            for fi in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = b.data()[fi];
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < ww as isize {
                                        s += x.data()
                                            [((ni * c + ci) * h + iy as usize) * ww + ix as usize]
                                            * w.data()[((fi * c + ci) * kh + ki) * kw + kj];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((ni * f + fi) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        out
    }

    fn lcg(state: &mut u64) -> f64 {
        // Tiny deterministic stream for test data.
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::<f64>::eye(2);
        let b = t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), b.data());
    }

    #[test]
    fn matmul_row_times_column() {
        let a = t64(&[1, 2], &[1.0, 2.0]);
        let b = t64(&[2, 1], &[3.0, 4.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut st = 7u64;
        let a = Tensor::from_fn(vec![4, 5], |_| lcg(&mut st));
        let b = Tensor::from_fn(vec![5, 3], |_| lcg(&mut st));
        let got = matmul(&a, &b).unwrap();
        let want = matmul_oracle(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() <= 1e-12, "{} vs {}", g, w);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::<f64>::zeros(vec![4, 2]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn conv_identity_kernel() {
        let mut st = 3u64;
        let x = Tensor::from_fn(vec![1, 1, 4, 4], |_| lcg(&mut st));
        let w = t64(&[1, 1, 1, 1], &[1.0]);
        let b = t64(&[1], &[0.0]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_sum_of_ones() {
        let x = Tensor::<f64>::full(vec![1, 1, 3, 3], 1.0);
        let w = Tensor::<f64>::full(vec![1, 1, 3, 3], 1.0);
        let b = t64(&[1], &[0.5]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert!((y.data()[0] - 9.5).abs() < 1e-15);
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut st = 11u64;
        let x = Tensor::from_fn(vec![1, 2, 5, 5], |_| lcg(&mut st));
        let w = Tensor::from_fn(vec![3, 2, 3, 3], |_| lcg(&mut st));
        let b = Tensor::from_fn(vec![3], |_| lcg(&mut st));
        let got = conv2d(&x, &w, &b, 2, 1).unwrap();
        let want = conv_oracle(&x, &w, &b, 2, 1);
        assert_eq!(got.shape(), want.shape());
        for (g, wv) in got.data().iter().zip(want.data()) {
            assert!((g - wv).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv_oracle_sweep_small_shapes() {
        let mut st = 99u64;
        let cases = [
            (1usize, 1usize, 4usize, 4usize, 1usize, 3usize, 3usize, 1usize, 0usize),
            (2, 3, 6, 5, 4, 3, 3, 1, 1),
            (2, 4, 8, 8, 3, 3, 3, 2, 1),
            (1, 2, 7, 7, 2, 1, 1, 1, 0),
            (2, 2, 8, 8, 5, 5, 5, 3, 2),
        ];
        for (n, c, h, w, f, kh, kw, s, p) in cases {
            let x = Tensor::from_fn(vec![n, c, h, w], |_| lcg(&mut st));
            let k = Tensor::from_fn(vec![f, c, kh, kw], |_| lcg(&mut st));
            let b = Tensor::from_fn(vec![f], |_| lcg(&mut st));
            let got = conv2d(&x, &k, &b, s, p).unwrap();
            let want = conv_oracle(&x, &k, &b, s, p);
            for (gv, wv) in got.data().iter().zip(want.data()) {
                assert!((gv - wv).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn conv_channel_mismatch_is_dimension_error() {
        let x = Tensor::<f64>::zeros(vec![1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(vec![2, 4, 3, 3]);
        let b = Tensor::<f64>::zeros(vec![2]);
        assert!(matches!(
            conv2d(&x, &w, &b, 1, 1),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn tensor_new_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 2], vec![1.0f64; 3]).is_err());
    }

    #[test]
    fn parallel_matmul_matches_serial() {
        // Large enough to cross the parallel threshold.
        let mut st = 5u64;
        let a = Tensor::from_fn(vec![64, 64], |_| lcg(&mut st));
        let b = Tensor::from_fn(vec![64, 64], |_| lcg(&mut st));
        let par = matmul(&a, &b).unwrap();
        let mut serial = vec![0.0; 64 * 64];
        matmul_rows(a.data(), b.data(), &mut serial, 64, 64, 64);
        assert_eq!(par.data(), &serial[..]);
    }
}
