//! Matmul and convolution kernels on flat row-major buffers.
//!
//! Convolutions lower to im2col + GEMM per sample. Work is split across the
//! batch only, so every output element is reduced in the same order no matter
//! how many threads run.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `c = a · b + beta · c` where `a` is logically `[m, k]` and `b` is `[k, n]`.
/// A transposed flag means the operand is stored in the opposite orientation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs buffer length");
    assert_eq!(b.len(), k * n, "gemm: rhs buffer length");
    assert_eq!(c.len(), m * n, "gemm: output buffer length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: the length checks above bound every index the strides reach.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Spatial bookkeeping for a square-kernel 2-D convolution over one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || kernel == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv geometry has a zero-size dimension (c={channels}, h={height}, w={width}, k={kernel})"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be positive".into()));
        }
        if height + 2 * pad < kernel || width + 2 * pad < kernel {
            return Err(Error::InvalidArgument(format!(
                "kernel {kernel} larger than padded input {}x{}",
                height + 2 * pad,
                width + 2 * pad
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_height: (height + 2 * pad - kernel) / stride + 1,
            out_width: (width + 2 * pad - kernel) / stride + 1,
        })
    }

    /// Geometry of the convolution whose adjoint maps `[.., height, width]` up to the
    /// transposed-convolution output `(h − 1)·stride − 2·pad + k`.
    pub fn for_transposed(
        out_channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let up = |n: usize| (n as i64 - 1) * stride as i64 - 2 * pad as i64 + kernel as i64;
        let (uh, uw) = (up(height), up(width));
        if stride == 0 || uh < 1 || uw < 1 {
            return Err(Error::InvalidArgument(format!(
                "transposed conv (k={kernel}, stride={stride}, pad={pad}) on {height}x{width} yields nonpositive output {uh}x{uw}"
            )));
        }
        let geom = Self::new(out_channels, uh as usize, uw as usize, kernel, stride, pad)?;
        if geom.out_height != height || geom.out_width != width {
            return Err(Error::InvalidArgument(format!(
                "transposed conv output {uh}x{uw} does not map back onto {height}x{width}"
            )));
        }
        Ok(geom)
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn output_positions(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Unfolds one sample `[C, H, W]` into `[C·k·k, out_h·out_w]` with zero padding.
    pub(crate) fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let positions = self.output_positions();
        debug_assert_eq!(x.len(), self.input_len());
        debug_assert_eq!(cols.len(), self.patch_len() * positions);
        let k = self.kernel;
        for c in 0..self.channels {
            let plane = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    for oy in 0..self.out_height {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.out_width..(oy + 1) * self.out_width];
                        if iy < 0 || iy >= self.height as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, slot) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *slot = if ix < 0 || ix >= self.width as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-adds columns back into `[C, H, W]`.
    pub(crate) fn col2im_add<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        let positions = self.output_positions();
        let k = self.kernel;
        for c in 0..self.channels {
            let plane = &mut x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * positions..(row + 1) * positions];
                    for oy in 0..self.out_height {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        let line = &src[oy * self.out_width..(oy + 1) * self.out_width];
                        for (ox, &v) in line.iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.width {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `y[n] = W · im2col(x[n])` with `W` stored as `[F, C·k·k]`; `y` is `[N, F, out_h·out_w]`.
pub(crate) fn conv2d_forward<T: Scalar>(
    geom: &ConvGeometry,
    filters: usize,
    x: &[T],
    weight: &[T],
    y: &mut [T],
) {
    let positions = geom.output_positions();
    let patch = geom.patch_len();
    y.par_chunks_mut(filters * positions)
        .zip(x.par_chunks(geom.input_len()))
        .for_each_init(
            || vec![T::zero(); patch * positions],
            |cols, (y_n, x_n)| {
                geom.im2col(x_n, cols);
                gemm(filters, patch, positions, weight, false, cols, false, T::zero(), y_n);
            },
        );
}

/// Gradient of [`conv2d_forward`] with respect to its input; also the
/// transposed-convolution forward map. Overwrites `dx`.
pub(crate) fn conv2d_input_grad<T: Scalar>(
    geom: &ConvGeometry,
    filters: usize,
    dy: &[T],
    weight: &[T],
    dx: &mut [T],
) {
    let positions = geom.output_positions();
    let patch = geom.patch_len();
    dx.par_chunks_mut(geom.input_len())
        .zip(dy.par_chunks(filters * positions))
        .for_each_init(
            || vec![T::zero(); patch * positions],
            |cols, (dx_n, dy_n)| {
                gemm(patch, filters, positions, weight, true, dy_n, false, T::zero(), cols);
                dx_n.fill(T::zero());
                geom.col2im_add(cols, dx_n);
            },
        );
}

/// Gradient of [`conv2d_forward`] with respect to the weight, summed over the
/// batch in sample order. Overwrites `dw` (`[F, C·k·k]`).
pub(crate) fn conv2d_weight_grad<T: Scalar>(
    geom: &ConvGeometry,
    filters: usize,
    x: &[T],
    dy: &[T],
    dw: &mut [T],
) {
    let positions = geom.output_positions();
    let patch = geom.patch_len();
    let mut cols = vec![T::zero(); patch * positions];
    dw.fill(T::zero());
    for (x_n, dy_n) in x
        .chunks_exact(geom.input_len())
        .zip(dy.chunks_exact(filters * positions))
    {
        geom.im2col(x_n, &mut cols);
        gemm(filters, positions, patch, dy_n, false, &cols, true, T::one(), dw);
    }
}
