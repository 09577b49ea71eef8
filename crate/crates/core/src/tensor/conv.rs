//! Convolution geometry, im2col/col2im lowering and bilinear sampling tables.

use crate::error::{Error, Result};

/// Spatial padding for `conv2d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output extent is `ceil(extent / stride)`; surplus padding goes to the bottom/right.
    Same,
    /// The same number of zero rows/columns on every side.
    Explicit(usize),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        let (n, c, h, w) = super::dims4(input)?;
        let (o, i, k, k2) = super::dims4(weight)
            .map_err(|_| Error::config(format!("conv weights must be OIKK, got {weight:?}")))?;
        if i != c {
            return Err(Error::config(format!(
                "conv expects {i} input channels, input has {c}"
            )));
        }
        if k != k2 || k % 2 == 0 {
            return Err(Error::config(format!(
                "conv kernel must be square and odd, got {k}x{k2}"
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv stride must be at least 1"));
        }
        let (ho, wo, pad_top, pad_left) = match padding {
            Padding::Same => {
                let ho = h.div_ceil(stride);
                let wo = w.div_ceil(stride);
                let pt = ((ho - 1) * stride + k).saturating_sub(h) / 2;
                let pl = ((wo - 1) * stride + k).saturating_sub(w) / 2;
                (ho, wo, pt, pl)
            }
            Padding::Explicit(p) => {
                if h + 2 * p < k || w + 2 * p < k {
                    return Err(Error::config(format!(
                        "kernel {k} larger than padded input {h}x{w} (+{p})"
                    )));
                }
                (
                    (h + 2 * p - k) / stride + 1,
                    (w + 2 * p - k) / stride + 1,
                    p,
                    p,
                )
            }
        };
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            k,
            stride,
            pad_top,
            pad_left,
            ho,
            wo,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    /// Lowers one sample (`c*h*w` values) into a `patch_len x out_pixels` matrix.
    pub fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let p = self.out_pixels();
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a column matrix back onto one sample's input gradient.
    pub fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.out_pixels();
        for ci in 0..self.c {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                line[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major matrix view: `(data, rows, cols, transposed)`.
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// The logical transpose, without copying.
    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            transposed: !self.transposed,
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a * b + beta * out`, with `out` row-major `a.rows x b.cols`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, out: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    assert_eq!(out.len(), a.rows * b.cols);
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above guarantee every index the kernel touches lies inside
    // the three slices, and `out` does not alias the read-only operands.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

/// Half-pixel-center bilinear sampling table for one axis:
/// output index `j` reads `(1-t)*in[i0] + t*in[i1]`.
pub(crate) fn bilinear_table(extent: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..extent * factor)
        .map(|j| {
            let src = ((j as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(extent - 1);
            let i1 = (i0 + 1).min(extent - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}
