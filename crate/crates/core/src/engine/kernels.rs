//! Raw numeric kernels shared by the plain and the recorded code paths.

use crate::error::{Error, Result};

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
        return Err(Error::shape("matmul", a, b));
    }
    Ok((a[0], a[1], b[1]))
}

/// `out = op(a) · op(b) + beta · out` where `op(a)` is `p×q` and `op(b)` is `q×r`.
///
/// With `a_t` set, `a` is stored as `q×p`; with `b_t` set, `b` is stored as `r×q`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    p: usize,
    q: usize,
    r: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    out: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), p * q);
    assert_eq!(b.len(), q * r);
    assert_eq!(out.len(), p * r);
    let (rsa, csa) = if a_t {
        (1, p as isize)
    } else {
        (q as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, q as isize)
    } else {
        (r as isize, 1)
    };
    // SAFETY: the slices are bounds-checked above against the declared
    // dimensions and strides, and `out` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            p,
            q,
            r,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            r as isize,
            1,
        );
    }
}

/// How samples outside the input grid are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PadMode {
    #[default]
    Zero,
    /// Nearest edge value.
    Replicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pad_mode: PadMode,
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
        padding: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) || stride == 0 {
            return Err(Error::Config(format!(
                "conv2d needs an odd kernel and positive stride (k={kernel}, stride={stride})"
            )));
        }
        let extent = |n: usize| -> Result<usize> {
            let span = (n + 2 * padding).checked_sub(kernel).ok_or_else(|| {
                Error::Config(format!("kernel {kernel} exceeds padded input {n}"))
            })?;
            if span % stride != 0 {
                return Err(Error::Config(format!(
                    "non-integral conv output: ({n} + 2*{padding} - {kernel}) / {stride}"
                )));
            }
            Ok(span / stride + 1)
        };
        Ok(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            pad_mode: PadMode::Zero,
            out_height: extent(height)?,
            out_width: extent(width)?,
        })
    }

    pub fn with_pad_mode(self, pad_mode: PadMode) -> Self {
        Self { pad_mode, ..self }
    }

    /// Input index sampled at padded coordinate `i`, or `None` for a zero.
    fn source(&self, i: isize, n: usize) -> Option<usize> {
        if i >= 0 && i < n as isize {
            Some(i as usize)
        } else {
            match self.pad_mode {
                PadMode::Zero => None,
                PadMode::Replicate => Some(i.clamp(0, n as isize - 1) as usize),
            }
        }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height * self.out_width
    }
}

pub(crate) fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let k = g.kernel;
    let n_out = g.col_cols();
    let mut cols = vec![0.0; g.col_rows() * n_out];
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * n_out..(row + 1) * n_out];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let Some(iy) = g.source(iy, g.height) else {
                        continue;
                    };
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    let dst_row = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if let Some(ix) = g.source(ix, g.width) {
                            *d = src[ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeometry, out: &mut [f64]) {
    let k = g.kernel;
    let n_out = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * n_out..(row + 1) * n_out];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let Some(iy) = g.source(iy, g.height) else {
                        continue;
                    };
                    for ox in 0..g.out_width {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if let Some(ix) = g.source(ix, g.width) {
                            plane[iy * g.width + ix] += src[oy * g.out_width + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-wise softmax with per-row max subtraction.
pub(crate) fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

pub(crate) fn log_softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + src.iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s - lse;
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)`, stable for large |x|.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}
