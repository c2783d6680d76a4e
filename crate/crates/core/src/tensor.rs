//! Dense row-major tensors and the numeric kernels the layers are built from.
//!
//! Convolution has two implementations: a direct sliding-window loop kept as
//! the reference, and a window-unrolling path (im2col followed by a GEMM) used
//! for training. Both operate on a single `[C, H, W]` sample; batching is the
//! caller's business.

use std::fmt::{self, Debug};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Element type of a [`Tensor`]. Implemented for `f32` (training) and `f64`
/// (gradient checking).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + fmt::Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// `c = alpha * a·b + beta * c` over strided row/column layouts.
    ///
    /// # Safety
    /// Every index reachable through the given dims and strides must be in
    /// bounds of the corresponding buffer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row/column strides of a matrix operand.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub rows: isize,
    pub cols: isize,
}

impl Layout {
    pub fn row_major(ncols: usize) -> Self {
        Layout {
            rows: ncols as isize,
            cols: 1,
        }
    }

    /// The transpose of a row-major matrix with `ncols` columns.
    pub fn transposed(ncols: usize) -> Self {
        Layout {
            rows: 1,
            cols: ncols as isize,
        }
    }

    fn max_index(self, nrows: usize, ncols: usize) -> usize {
        if nrows == 0 || ncols == 0 {
            return 0;
        }
        (nrows - 1) * self.rows as usize + (ncols - 1) * self.cols as usize
    }
}

/// Bounds-checked GEMM: `c[m×n] = alpha·a[m×k]·b[k×n] + beta·c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
    beta: T,
    c: &mut [T],
    lc: Layout,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(la.max_index(m, k) < a.len(), "gemm: lhs out of bounds");
        assert!(lb.max_index(k, n) < b.len(), "gemm: rhs out of bounds");
    }
    assert!(lc.max_index(m, n) < c.len(), "gemm: output out of bounds");
    // SAFETY: all reachable indices were checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            la.rows,
            la.cols,
            b.as_ptr(),
            lb.rows,
            lb.cols,
            beta,
            c.as_mut_ptr(),
            lc.rows,
            lc.cols,
        );
    }
}

/// Dense n-dimensional array, flat row-major storage.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &Preview(&self.data))
            .finish()
    }
}

struct Preview<'a, T>(&'a [T]);

impl<T: Debug> Debug for Preview<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const MAX: usize = 16;
        if self.0.len() <= MAX {
            f.debug_list().entries(self.0).finish()
        } else {
            f.debug_list()
                .entries(&self.0[..MAX])
                .entry(&format_args!("... {} more", self.0.len() - MAX))
                .finish()
        }
    }
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        let expected = element_count(shape)
            .ok_or_else(|| Error::shape("tensor", format!("{shape:?} overflows")))?;
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = element_count(shape).expect("tensor shape overflows");
        assert!(n > 0, "zero-sized dimension in {shape:?}");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = element_count(shape).expect("tensor shape overflows");
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Build a 2-D tensor from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let ncols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == ncols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(&[rows.len(), ncols], data).expect("non-empty rows")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// In-place access, used by parameter updates.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Copy with a new shape of identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn into_shape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    /// Index of the largest element; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }
}

/// Index of the largest element of a non-empty slice, lowest index on ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Standard matrix product of `[M, K]` and `[K, N]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(Error::shape(
            "matmul",
            format!("expected two matrices, got {:?} and {:?}", a.shape(), b.shape()),
        ));
    };
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner dims differ: lhs axis 1 = {k}, rhs axis 0 = {k2}"),
        ));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        m,
        k,
        n,
        T::one(),
        a.data(),
        Layout::row_major(k),
        b.data(),
        Layout::row_major(n),
        T::zero(),
        out.data_mut(),
        Layout::row_major(n),
    );
    Ok(out)
}

/// Kernel size, stride and zero padding of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel_h: usize, kernel_w: usize, stride: usize, padding: usize) -> Result<Self> {
        if kernel_h == 0 || kernel_w == 0 || stride == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel {kernel_h}x{kernel_w} and stride {stride} must be >= 1"
            )));
        }
        Ok(ConvGeometry {
            kernel_h,
            kernel_w,
            stride,
            padding,
        })
    }

    pub fn square(kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        Self::new(kernel, kernel, stride, padding)
    }

    /// `floor((in + 2p - k) / s) + 1` along both axes.
    pub fn output_dims(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let axis = |len: usize, k: usize, name: &str| {
            let padded = len + 2 * self.padding;
            if padded < k {
                return Err(Error::shape(
                    "conv2d",
                    format!("{name} {len} with padding {} is smaller than kernel {k}", self.padding),
                ));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((
            axis(in_h, self.kernel_h, "height")?,
            axis(in_w, self.kernel_w, "width")?,
        ))
    }
}

/// Dimensions of one convolution application, validated once.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub geom: ConvGeometry,
}

impl ConvDims {
    pub fn new(input: &[usize], kernels: &[usize], geom: ConvGeometry) -> Result<Self> {
        let &[c_in, h, w] = input else {
            return Err(Error::shape("conv2d", format!("input must be [C,H,W], got {input:?}")));
        };
        let &[c_out, kc, kh, kw] = kernels else {
            return Err(Error::shape(
                "conv2d",
                format!("kernels must be [C_out,C_in,kh,kw], got {kernels:?}"),
            ));
        };
        if kc != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input axis 0 (channels) = {c_in} but kernel axis 1 (C_in) = {kc}"),
            ));
        }
        if kh != geom.kernel_h || kw != geom.kernel_w {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel axes 2,3 = {kh}x{kw} disagree with geometry {}x{}",
                    geom.kernel_h, geom.kernel_w
                ),
            ));
        }
        let (out_h, out_w) = geom.output_dims(h, w)?;
        Ok(ConvDims {
            c_in,
            h,
            w,
            c_out,
            out_h,
            out_w,
            geom,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.geom.kernel_h * self.geom.kernel_w
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn input_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn output_len(&self) -> usize {
        self.c_out * self.positions()
    }

    /// Source pixel for output row `o` and kernel offset `k`, or `None` in the padding.
    #[inline]
    fn source(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        let pos = (o * self.geom.stride + k).checked_sub(self.geom.padding)?;
        (pos < len).then_some(pos)
    }

    /// Unroll every receptive field into a column: `cols[patch_len, positions]`.
    pub fn im2col<T: Scalar>(&self, input: &[T], cols: &mut Vec<T>) {
        let p = self.positions();
        cols.clear();
        cols.resize(self.patch_len() * p, T::zero());
        let (kh, kw) = (self.geom.kernel_h, self.geom.kernel_w);
        let mut row = 0;
        for c in 0..self.c_in {
            let plane = &input[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ky, self.h) else {
                            continue;
                        };
                        let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                        let dst_row = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            if let Some(ix) = self.source(ox, kx, self.w) {
                                *d = src_row[ix];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-add columns back onto the image.
    pub fn col2im_add<T: Scalar>(&self, cols: &[T], grad_input: &mut [T]) {
        let p = self.positions();
        let (kh, kw) = (self.geom.kernel_h, self.geom.kernel_w);
        let mut row = 0;
        for c in 0..self.c_in {
            let plane = &mut grad_input[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ky, self.h) else {
                            continue;
                        };
                        for ox in 0..self.out_w {
                            if let Some(ix) = self.source(ox, kx, self.w) {
                                plane[iy * self.w + ix] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Unrolled forward pass for one sample into `out[c_out, positions]`.
    pub fn forward<T: Scalar>(
        &self,
        input: &[T],
        kernels: &[T],
        bias: &[T],
        out: &mut [T],
        cols: &mut Vec<T>,
    ) {
        let p = self.positions();
        for (row, &b) in out.chunks_exact_mut(p).zip(bias) {
            row.fill(b);
        }
        self.im2col(input, cols);
        let k = self.patch_len();
        gemm(
            self.c_out,
            k,
            p,
            T::one(),
            kernels,
            Layout::row_major(k),
            cols,
            Layout::row_major(p),
            T::one(),
            out,
            Layout::row_major(p),
        );
    }

    /// Unrolled backward pass for one sample. Kernel and bias gradients are
    /// accumulated; the input gradient is overwritten when requested.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Scalar>(
        &self,
        input: &[T],
        kernels: &[T],
        grad_out: &[T],
        grad_kernels: &mut [T],
        grad_bias: &mut [T],
        grad_input: Option<&mut [T]>,
        cols: &mut Vec<T>,
    ) {
        let p = self.positions();
        let k = self.patch_len();
        for (gb, row) in grad_bias.iter_mut().zip(grad_out.chunks_exact(p)) {
            *gb += row.iter().copied().sum::<T>();
        }
        self.im2col(input, cols);
        gemm(
            self.c_out,
            p,
            k,
            T::one(),
            grad_out,
            Layout::row_major(p),
            cols,
            Layout::transposed(p),
            T::one(),
            grad_kernels,
            Layout::row_major(k),
        );
        if let Some(grad_input) = grad_input {
            // cols is reused as the column-space gradient.
            gemm(
                k,
                self.c_out,
                p,
                T::one(),
                kernels,
                Layout::transposed(k),
                grad_out,
                Layout::row_major(p),
                T::zero(),
                cols,
                Layout::row_major(p),
            );
            grad_input.fill(T::zero());
            self.col2im_add(cols, grad_input);
        }
    }
}

/// Convolution of a `[C_in, H, W]` sample with `[C_out, C_in, kh, kw]`
/// kernels plus a per-filter bias, via window unrolling.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let dims = ConvDims::new(input.shape(), kernels.shape(), geom)?;
    check_bias(bias, dims.c_out)?;
    let mut out = Tensor::zeros(&[dims.c_out, dims.out_h, dims.out_w]);
    let mut cols = Vec::new();
    dims.forward(input.data(), kernels.data(), bias.data(), out.data_mut(), &mut cols);
    Ok(out)
}

/// Reference convolution: one explicit dot product per output element.
pub fn conv2d_forward_direct<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let d = ConvDims::new(input.shape(), kernels.shape(), geom)?;
    check_bias(bias, d.c_out)?;
    let (x, k) = (input.data(), kernels.data());
    let (kh, kw) = (geom.kernel_h, geom.kernel_w);
    let mut out = Tensor::zeros(&[d.c_out, d.out_h, d.out_w]);
    let o = out.data_mut();
    for co in 0..d.c_out {
        for oy in 0..d.out_h {
            for ox in 0..d.out_w {
                let mut acc = bias.data()[co];
                for ci in 0..d.c_in {
                    for ky in 0..kh {
                        let Some(iy) = d.source(oy, ky, d.h) else {
                            continue;
                        };
                        for kx in 0..kw {
                            let Some(ix) = d.source(ox, kx, d.w) else {
                                continue;
                            };
                            acc += x[(ci * d.h + iy) * d.w + ix]
                                * k[((co * d.c_in + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                o[(co * d.out_h + oy) * d.out_w + ox] = acc;
            }
        }
    }
    Ok(out)
}

fn check_bias<T: Scalar>(bias: &Tensor<T>, c_out: usize) -> Result<()> {
    if bias.shape() != [c_out] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {:?} but kernel axis 0 (C_out) = {c_out}", bias.shape()),
        ));
    }
    Ok(())
}

/// Gradients of a convolution with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check_grad_out<T: Scalar>(d: &ConvDims, grad_out: &Tensor<T>) -> Result<()> {
    if grad_out.shape() != [d.c_out, d.out_h, d.out_w] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_out shape {:?}, forward output is {:?}",
                grad_out.shape(),
                [d.c_out, d.out_h, d.out_w]
            ),
        ));
    }
    Ok(())
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let d = ConvDims::new(input.shape(), kernels.shape(), geom)?;
    check_grad_out(&d, grad_out)?;
    let mut grads = ConvGrads {
        input: Tensor::zeros(input.shape()),
        kernels: Tensor::zeros(kernels.shape()),
        bias: Tensor::zeros(&[d.c_out]),
    };
    let mut cols = Vec::new();
    d.backward(
        input.data(),
        kernels.data(),
        grad_out.data(),
        grads.kernels.data_mut(),
        grads.bias.data_mut(),
        Some(grads.input.data_mut()),
        &mut cols,
    );
    Ok(grads)
}

/// Loop-based backward pass, the adjoint of [`conv2d_forward_direct`].
pub fn conv2d_backward_direct<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let d = ConvDims::new(input.shape(), kernels.shape(), geom)?;
    check_grad_out(&d, grad_out)?;
    let (x, k, g) = (input.data(), kernels.data(), grad_out.data());
    let (kh, kw) = (geom.kernel_h, geom.kernel_w);
    let mut gi = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); d.c_out];
    for co in 0..d.c_out {
        for oy in 0..d.out_h {
            for ox in 0..d.out_w {
                let go = g[(co * d.out_h + oy) * d.out_w + ox];
                gb[co] += go;
                for ci in 0..d.c_in {
                    for ky in 0..kh {
                        let Some(iy) = d.source(oy, ky, d.h) else {
                            continue;
                        };
                        for kx in 0..kw {
                            let Some(ix) = d.source(ox, kx, d.w) else {
                                continue;
                            };
                            let xi = (ci * d.h + iy) * d.w + ix;
                            let ki = ((co * d.c_in + ci) * kh + ky) * kw + kx;
                            gk[ki] += x[xi] * go;
                            gi[xi] += k[ki] * go;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), gi)?,
        kernels: Tensor::new(kernels.shape(), gk)?,
        bias: Tensor::new(&[d.c_out], gb)?,
    })
}

/// Winning input position (flat index into the `[C, H, W]` input) of every
/// pooling window, in output order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Output dims of non-overlapping `pool×pool` max pooling. Trailing rows and
/// columns that do not fill a window are dropped.
pub fn pool_output_dims(h: usize, w: usize, pool: usize) -> Result<(usize, usize)> {
    if pool == 0 {
        return Err(Error::InvalidConfig("pool size must be >= 1".into()));
    }
    let (oh, ow) = (h / pool, w / pool);
    if oh == 0 || ow == 0 {
        return Err(Error::shape(
            "maxpool",
            format!("{h}x{w} input is smaller than the {pool}x{pool} window"),
        ));
    }
    Ok((oh, ow))
}

/// Slice-level pooling over one `[C, H, W]` sample. Ties keep the first
/// maximum in raster order.
pub(crate) fn maxpool_into<T: Scalar>(
    input: &[T],
    (c, h, w): (usize, usize, usize),
    pool: usize,
    out: &mut [T],
    argmax: &mut [usize],
) {
    let (oh, ow) = (h / pool, w / pool);
    let mut o = 0;
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * pool * w + ox * pool;
                for dy in 0..pool {
                    for dx in 0..pool {
                        let idx = base + (oy * pool + dy) * w + ox * pool + dx;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                out[o] = input[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
}

/// 2×2 (or `pool×pool`) max pooling with stride equal to the window.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    pool: usize,
) -> Result<(Tensor<T>, PoolIndices)> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::shape(
            "maxpool",
            format!("input must be [C,H,W], got {:?}", input.shape()),
        ));
    };
    let (oh, ow) = pool_output_dims(h, w, pool)?;
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut argmax = vec![0; c * oh * ow];
    maxpool_into(input.data(), (c, h, w), pool, out.data_mut(), &mut argmax);
    Ok((
        out,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            output_shape: vec![c, oh, ow],
            argmax,
        },
    ))
}

/// Route each upstream gradient to the position that won its window.
pub fn maxpool_backward<T: Scalar>(indices: &PoolIndices, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != indices.output_shape.as_slice() {
        return Err(Error::shape(
            "maxpool_backward",
            format!(
                "grad_out shape {:?}, pooled output is {:?}",
                grad_out.shape(),
                indices.output_shape
            ),
        ));
    }
    let mut grad_input = Tensor::zeros(&indices.input_shape);
    let gi = grad_input.data_mut();
    for (&src, &g) in indices.argmax.iter().zip(grad_out.data()) {
        gi[src] += g;
    }
    Ok(grad_input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn construction_checks_element_count() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(&[0, 3], vec![]).is_err());
        let t = Tensor::<f32>::zeros(&[2, 3]);
        assert_eq!(t.reshape(&[6]).unwrap().shape(), &[6]);
        assert!(t.reshape(&[4]).is_err());
    }

    #[test]
    fn model_sized_convolution_is_three_by_three() {
        let geom = ConvGeometry::square(3, 1, 0).unwrap();
        let input = Tensor::<f32>::full(&[1, 5, 5], 1.0);
        let kernels = Tensor::full(&[1, 1, 3, 3], 1.0);
        let out = conv2d_forward(&input, &kernels, &Tensor::zeros(&[1]), geom).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn zero_kernel_annihilates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let geom = ConvGeometry::square(3, 1, 1).unwrap();
        let input = random(&[2, 7, 7], &mut rng);
        let out =
            conv2d_forward(&input, &Tensor::zeros(&[3, 2, 3, 3]), &Tensor::zeros(&[3]), geom)
                .unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_reports_offending_axes() {
        let geom = ConvGeometry::square(3, 1, 0).unwrap();
        let err = conv2d_forward(
            &Tensor::<f32>::zeros(&[2, 5, 5]),
            &Tensor::zeros(&[1, 3, 3, 3]),
            &Tensor::zeros(&[1]),
            geom,
        )
        .unwrap_err();
        assert!(err.to_string().contains("axis 1"), "{err}");
        let err = conv2d_forward(
            &Tensor::<f32>::zeros(&[1, 2, 2]),
            &Tensor::zeros(&[1, 1, 3, 3]),
            &Tensor::zeros(&[1]),
            geom,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn output_dim_formula() {
        for in_dim in 1..20 {
            for k in 1..6 {
                for s in 1..4 {
                    for p in 0..3 {
                        let g = ConvGeometry::square(k, s, p).unwrap();
                        match g.output_dims(in_dim, in_dim) {
                            Ok((oh, ow)) => {
                                assert_eq!(oh, (in_dim + 2 * p - k) / s + 1);
                                assert_eq!(oh, ow);
                                // measure: the last window must fit, the next must not
                                assert!((oh - 1) * s + k <= in_dim + 2 * p);
                                assert!(oh * s + k > in_dim + 2 * p);
                            }
                            Err(_) => assert!(in_dim + 2 * p < k),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let geom = ConvGeometry::square(3, 1, 0).unwrap();
        let x = random(&[2, 6, 6], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        let g = conv2d_backward(&x, &k, geom, &Tensor::zeros(&[3, 4, 4])).unwrap();
        for t in [&g.input, &g.kernels, &g.bias] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn one_by_one_kernel_gradient_is_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let geom = ConvGeometry::square(1, 1, 0).unwrap();
        let x = random(&[1, 4, 5], &mut rng);
        let g = random(&[1, 4, 5], &mut rng);
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let grads = conv2d_backward(&x, &k, geom, &g).unwrap();
        let expected: f64 = x.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        assert!((grads.kernels.data()[0] - expected).abs() < 1e-12);
        assert_eq!(grads.input.data(), g.data());
    }

    #[test]
    fn unrolled_and_direct_backward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (stride, padding) in [(1, 0), (1, 1), (2, 0), (2, 2)] {
            let geom = ConvGeometry::square(3, stride, padding).unwrap();
            let x = random(&[3, 9, 8], &mut rng);
            let k = random(&[4, 3, 3, 3], &mut rng);
            let (oh, ow) = geom.output_dims(9, 8).unwrap();
            let g = random(&[4, oh, ow], &mut rng);
            let a = conv2d_backward(&x, &k, geom, &g).unwrap();
            let b = conv2d_backward_direct(&x, &k, geom, &g).unwrap();
            for (u, v) in [(&a.input, &b.input), (&a.kernels, &b.kernels), (&a.bias, &b.bias)] {
                for (p, q) in u.data().iter().zip(v.data()) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::<f32>::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = maxpool_backward(&idx, &Tensor::full(&[1, 1, 1], 5.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 5.0]);

        let (y, _) = maxpool_forward(&Tensor::<f32>::zeros(&[3, 4, 4]), 2).unwrap();
        assert_eq!(y.shape(), &[3, 2, 2]);

        // odd dims truncate
        let (y, _) = maxpool_forward(&Tensor::<f32>::zeros(&[1, 5, 7]), 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 3]);
        assert!(maxpool_forward(&Tensor::<f32>::zeros(&[1, 1, 4]), 2).is_err());
    }

    #[test]
    fn maxpool_zero_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, idx) = maxpool_forward(&random(&[2, 6, 6], &mut rng), 2).unwrap();
        let g = maxpool_backward(&idx, &Tensor::<f64>::zeros(&[2, 3, 3])).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert!(maxpool_backward(&idx, &Tensor::<f64>::zeros(&[2, 3, 4])).is_err());
    }

    #[test]
    fn matmul_examples() {
        let a = Tensor::<f32>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Tensor::from_rows(&[&[5.0], &[6.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
        let id = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(matmul(&id, &a).unwrap(), a);
        let k = 37;
        let ones_row = Tensor::<f32>::full(&[1, k], 1.0);
        let ones_col = Tensor::full(&[k, 1], 1.0);
        assert_eq!(matmul(&ones_row, &ones_col).unwrap().data(), &[k as f32]);
        let err = matmul(&a, &ones_col).unwrap_err();
        assert!(err.to_string().contains("inner dims"));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5, 0.2]), 1);
        assert_eq!(argmax(&[3.0]), 0);
    }
}
