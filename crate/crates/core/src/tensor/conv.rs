//! Convolution kernels via im2col + GEMM.
//!
//! `conv2d` weights are `[out, in, k, k]`; `conv_transpose2d` weights are
//! `[in, out, k, k]`, so one weight tensor serves both directions of the
//! adjoint pair.

use super::element::{gemm, Layout};
use super::Element;
use crate::error::{Error, Result};

/// Spatial geometry of one convolution: an `h×w` image seen through a `k×k`
/// window with the given stride and zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Geometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.padding - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.padding - self.k) / self.stride + 1
    }

    fn check(&self) -> Result<()> {
        if self.stride == 0 || self.k == 0 {
            return Err(Error::shape("kernel size and stride must be positive"));
        }
        if self.h + 2 * self.padding < self.k || self.w + 2 * self.padding < self.k {
            return Err(Error::shape(format!(
                "kernel {} does not fit a {}x{} input with padding {}",
                self.k, self.h, self.w, self.padding
            )));
        }
        Ok(())
    }
}

/// Output side length of a transposed convolution.
pub fn transpose_out(size: usize, k: usize, stride: usize, padding: usize, output_padding: usize) -> Result<usize> {
    let full = (size - 1) * stride + k + output_padding;
    if full < 2 * padding + 1 {
        return Err(Error::shape("transposed convolution output would be empty"));
    }
    if output_padding >= stride {
        return Err(Error::shape(format!(
            "output_padding {output_padding} must be smaller than stride {stride}"
        )));
    }
    Ok(full - 2 * padding)
}

fn im2col<T: Element>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.channels {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::ZERO);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an image buffer.
fn col2im<T: Element>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.channels {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Shape bookkeeping shared by forward and backward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvDims {
    pub fn for_conv(x: &[usize], w: &[usize], b: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 {
            return Err(Error::shape(format!("conv2d expects NCHW input and OIKK weight, got {x:?} and {w:?}")));
        }
        if w[2] != w[3] {
            return Err(Error::shape(format!("square kernels only, got {w:?}")));
        }
        if x[1] != w[1] {
            return Err(Error::shape(format!(
                "conv2d input has {} channels but weight expects {}",
                x[1], w[1]
            )));
        }
        if b != [w[0]] {
            return Err(Error::shape(format!("conv2d bias {b:?} does not match {} outputs", w[0])));
        }
        let g = Geometry {
            channels: x[1],
            h: x[2],
            w: x[3],
            k: w[2],
            stride,
            padding,
        };
        g.check()?;
        Ok(Self {
            batch: x[0],
            in_channels: x[1],
            out_channels: w[0],
            in_h: x[2],
            in_w: x[3],
            out_h: g.out_h(),
            out_w: g.out_w(),
            k: w[2],
            stride,
            padding,
        })
    }

    pub fn for_transpose(
        x: &[usize],
        w: &[usize],
        b: &[usize],
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 {
            return Err(Error::shape(format!(
                "conv_transpose2d expects NCHW input and IOKK weight, got {x:?} and {w:?}"
            )));
        }
        if w[2] != w[3] {
            return Err(Error::shape(format!("square kernels only, got {w:?}")));
        }
        if x[1] != w[0] {
            return Err(Error::shape(format!(
                "conv_transpose2d input has {} channels but weight expects {}",
                x[1], w[0]
            )));
        }
        if b != [w[1]] {
            return Err(Error::shape(format!("conv_transpose2d bias {b:?} does not match {} outputs", w[1])));
        }
        if stride == 0 {
            return Err(Error::shape("stride must be positive"));
        }
        let out_h = transpose_out(x[2], w[2], stride, padding, output_padding)?;
        let out_w = transpose_out(x[3], w[2], stride, padding, output_padding)?;
        Ok(Self {
            batch: x[0],
            in_channels: x[1],
            out_channels: w[1],
            in_h: x[2],
            in_w: x[3],
            out_h,
            out_w,
            k: w[2],
            stride,
            padding,
        })
    }

    /// Geometry of the forward-direction convolution over the larger image.
    fn conv_geometry(&self) -> Geometry {
        Geometry {
            channels: self.in_channels,
            h: self.in_h,
            w: self.in_w,
            k: self.k,
            stride: self.stride,
            padding: self.padding,
        }
    }

    /// For a transposed convolution the "image" side is its output.
    fn transpose_geometry(&self) -> Geometry {
        Geometry {
            channels: self.out_channels,
            h: self.out_h,
            w: self.out_w,
            k: self.k,
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_h, self.out_w]
    }
}

pub fn conv2d_forward<T: Element>(d: &ConvDims, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let g = d.conv_geometry();
    let ckk = d.in_channels * d.k * d.k;
    let plane = d.out_h * d.out_w;
    let in_len = d.in_channels * d.in_h * d.in_w;
    let out_len = d.out_channels * plane;
    let mut out = vec![T::ZERO; d.batch * out_len];
    let mut cols = vec![T::ZERO; ckk * plane];
    for n in 0..d.batch {
        im2col(&x[n * in_len..(n + 1) * in_len], &g, &mut cols);
        let y = &mut out[n * out_len..(n + 1) * out_len];
        for (o, chunk) in y.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = b[o]);
        }
        gemm(d.out_channels, ckk, plane, w, Layout::Normal, &cols, Layout::Normal, y, true);
    }
    out
}

/// Gradients of conv2d; each output is computed only when requested.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Element>(
    d: &ConvDims,
    x: &[T],
    w: &[T],
    dy: &[T],
    want: [bool; 3],
) -> ConvGrads<T> {
    let g = d.conv_geometry();
    let ckk = d.in_channels * d.k * d.k;
    let plane = d.out_h * d.out_w;
    let in_len = d.in_channels * d.in_h * d.in_w;
    let out_len = d.out_channels * plane;
    let mut dx = want[0].then(|| vec![T::ZERO; x.len()]);
    let mut dw = want[1].then(|| vec![T::ZERO; w.len()]);
    let db = want[2].then(|| bias_grad(dy, d.batch, d.out_channels, plane));
    let mut cols = vec![T::ZERO; ckk * plane];
    for n in 0..d.batch {
        let dy_n = &dy[n * out_len..(n + 1) * out_len];
        if let Some(dw) = dw.as_mut() {
            im2col(&x[n * in_len..(n + 1) * in_len], &g, &mut cols);
            gemm(d.out_channels, plane, ckk, dy_n, Layout::Normal, &cols, Layout::Transposed, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(ckk, d.out_channels, plane, w, Layout::Transposed, dy_n, Layout::Normal, &mut cols, false);
            col2im(&cols, &g, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

pub fn conv_transpose2d_forward<T: Element>(d: &ConvDims, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let g = d.transpose_geometry();
    let ckk = d.out_channels * d.k * d.k;
    let in_plane = d.in_h * d.in_w;
    let in_len = d.in_channels * in_plane;
    let out_plane = d.out_h * d.out_w;
    let out_len = d.out_channels * out_plane;
    let mut out = vec![T::ZERO; d.batch * out_len];
    let mut cols = vec![T::ZERO; ckk * in_plane];
    for n in 0..d.batch {
        gemm(
            ckk,
            d.in_channels,
            in_plane,
            w,
            Layout::Transposed,
            &x[n * in_len..(n + 1) * in_len],
            Layout::Normal,
            &mut cols,
            false,
        );
        let y = &mut out[n * out_len..(n + 1) * out_len];
        for (o, chunk) in y.chunks_mut(out_plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = b[o]);
        }
        col2im(&cols, &g, y);
    }
    out
}

pub fn conv_transpose2d_backward<T: Element>(
    d: &ConvDims,
    x: &[T],
    w: &[T],
    dy: &[T],
    want: [bool; 3],
) -> ConvGrads<T> {
    let g = d.transpose_geometry();
    let ckk = d.out_channels * d.k * d.k;
    let in_plane = d.in_h * d.in_w;
    let in_len = d.in_channels * in_plane;
    let out_plane = d.out_h * d.out_w;
    let out_len = d.out_channels * out_plane;
    let mut dx = want[0].then(|| vec![T::ZERO; x.len()]);
    let mut dw = want[1].then(|| vec![T::ZERO; w.len()]);
    let db = want[2].then(|| bias_grad(dy, d.batch, d.out_channels, out_plane));
    if dx.is_none() && dw.is_none() {
        return ConvGrads {
            input: None,
            weight: None,
            bias: db,
        };
    }
    let mut cols = vec![T::ZERO; ckk * in_plane];
    for n in 0..d.batch {
        im2col(&dy[n * out_len..(n + 1) * out_len], &g, &mut cols);
        if let Some(dx) = dx.as_mut() {
            gemm(
                d.in_channels,
                ckk,
                in_plane,
                w,
                Layout::Normal,
                &cols,
                Layout::Normal,
                &mut dx[n * in_len..(n + 1) * in_len],
                false,
            );
        }
        if let Some(dw) = dw.as_mut() {
            gemm(
                d.in_channels,
                in_plane,
                ckk,
                &x[n * in_len..(n + 1) * in_len],
                Layout::Normal,
                &cols,
                Layout::Transposed,
                dw,
                true,
            );
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

fn bias_grad<T: Element>(dy: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::ZERO; channels];
    for n in 0..batch {
        for (c, acc) in db.iter_mut().enumerate() {
            let start = (n * channels + c) * plane;
            *acc += dy[start..start + plane].iter().copied().sum::<T>();
        }
    }
    db
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an independent reference.
    fn direct_conv(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], b: &[f64], s: usize, p: usize) -> Vec<f64> {
        let [n, c, h, wd] = xs;
        let [o, _, k, _] = ws;
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (wd + 2 * p - k) / s + 1;
        let mut out = vec![0.0; n * o * oh * ow];
        for ni in 0..n {
            for oi in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b[oi];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * s + ky) as isize - p as isize;
                                    let ix = (xx * s + kx) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x[((ni * c + ci) * h + iy as usize) * wd + ix as usize]
                                            * w[((oi * c + ci) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        out[((ni * o + oi) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_direct_loops() {
        let xs = [2, 3, 7, 6];
        let ws = [4, 3, 3, 3];
        let x: Vec<f64> = (0..xs.iter().product::<usize>()).map(|i| (i as f64 * 0.7).sin()).collect();
        let w: Vec<f64> = (0..ws.iter().product::<usize>()).map(|i| (i as f64 * 0.3).cos()).collect();
        let b = vec![0.1, -0.2, 0.3, 0.0];
        for (s, p) in [(1, 0), (2, 1), (3, 2)] {
            let d = ConvDims::for_conv(&xs, &ws, &[4], s, p).unwrap();
            let got = conv2d_forward(&d, &x, &w, &b);
            let want = direct_conv(&x, xs, &w, ws, &b, s, p);
            assert_eq!(got.len(), want.len());
            for (a, e) in got.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "stride {s} padding {p}");
            }
        }
    }

    #[test]
    fn transpose_output_sizes() {
        assert_eq!(transpose_out(40, 3, 2, 1, 1).unwrap(), 80);
        assert_eq!(transpose_out(3, 3, 2, 1, 0).unwrap(), 5);
        assert_eq!(transpose_out(5, 3, 2, 1, 1).unwrap(), 10);
        assert!(transpose_out(5, 3, 2, 1, 2).is_err());
    }

    #[test]
    fn mismatched_channels_are_rejected() {
        assert!(ConvDims::for_conv(&[1, 2, 4, 4], &[1, 3, 3, 3], &[1], 1, 0).is_err());
        assert!(ConvDims::for_conv(&[1, 1, 2, 2], &[1, 1, 3, 3], &[1], 1, 0).is_err());
        assert!(ConvDims::for_conv(&[1, 1, 4, 4], &[1, 1, 3, 3], &[2], 1, 0).is_err());
        assert!(ConvDims::for_transpose(&[1, 2, 4, 4], &[3, 1, 3, 3], &[1], 2, 1, 1).is_err());
    }
}
