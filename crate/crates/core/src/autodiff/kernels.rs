//! Convolution lowering (im2col / col2im) shared by conv2d and its transpose.

use crate::scalar::Scalar;

/// Geometry of a strided, zero-padded square-kernel convolution from a
/// `[batch, channels, height, width]` image to `[.., out_h, out_w]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// `floor((size + 2*padding - kernel) / stride) + 1`, or `None` when the
/// padded input is smaller than the kernel.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// `(size - 1) * stride - 2*padding + kernel`, or `None` when that is not positive.
pub fn conv_transpose_output_size(
    size: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let full = (size - 1) * stride + kernel;
    if stride == 0 || size == 0 || full <= 2 * padding {
        return None;
    }
    Some(full - 2 * padding)
}

impl ConvGeometry {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, out: usize, k: usize) -> Option<usize> {
        let pos = (out * self.stride + k) as isize - self.padding as isize;
        (pos >= 0).then_some(pos as usize)
    }
}

/// Unfolds image patches into a `[channels*k*k, batch*out_h*out_w]` matrix.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let (k, hw_out) = (g.kernel, g.out_h * g.out_w);
    let cols = g.col_cols();
    let mut out = vec![T::zero(); g.col_rows() * cols];
    for c in 0..g.channels {
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let dst_row = &mut out[row * cols..(row + 1) * cols];
                for b in 0..g.batch {
                    let img = &x[(b * g.channels + c) * g.height * g.width..][..g.height * g.width];
                    for oh in 0..g.out_h {
                        let Some(ih) = g.source(oh, kh).filter(|&h| h < g.height) else {
                            continue;
                        };
                        let dst = &mut dst_row[b * hw_out + oh * g.out_w..][..g.out_w];
                        let src = &img[ih * g.width..(ih + 1) * g.width];
                        for (ow, d) in dst.iter_mut().enumerate() {
                            if let Some(iw) = g.source(ow, kw).filter(|&w| w < g.width) {
                                *d = src[iw];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
pub(crate) fn col2im<T: Scalar>(cols_buf: &[T], g: &ConvGeometry, x: &mut [T]) {
    let (k, hw_out) = (g.kernel, g.out_h * g.out_w);
    let cols = g.col_cols();
    for c in 0..g.channels {
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let src_row = &cols_buf[row * cols..(row + 1) * cols];
                for b in 0..g.batch {
                    let img = &mut x[(b * g.channels + c) * g.height * g.width..][..g.height * g.width];
                    for oh in 0..g.out_h {
                        let Some(ih) = g.source(oh, kh).filter(|&h| h < g.height) else {
                            continue;
                        };
                        let src = &src_row[b * hw_out + oh * g.out_w..][..g.out_w];
                        let dst = &mut img[ih * g.width..(ih + 1) * g.width];
                        for (ow, &v) in src.iter().enumerate() {
                            if let Some(iw) = g.source(ow, kw).filter(|&w| w < g.width) {
                                dst[iw] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[batch, channels, spatial]` → `[channels, batch*spatial]`.
pub(crate) fn batch_to_channel_major<T: Scalar>(
    x: &[T],
    batch: usize,
    channels: usize,
    spatial: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let src = &x[(b * channels + c) * spatial..][..spatial];
            out[c * batch * spatial + b * spatial..][..spatial].copy_from_slice(src);
        }
    }
    out
}

/// `[channels, batch*spatial]` → `[batch, channels, spatial]`.
pub(crate) fn channel_to_batch_major<T: Scalar>(
    x: &[T],
    batch: usize,
    channels: usize,
    spatial: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for c in 0..channels {
        for b in 0..batch {
            let src = &x[c * batch * spatial + b * spatial..][..spatial];
            out[(b * channels + c) * spatial..][..spatial].copy_from_slice(src);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_law() {
        assert_eq!(conv_output_size(64, 4, 2, 1), Some(32));
        assert_eq!(conv_output_size(4, 4, 2, 1), Some(2));
        assert_eq!(conv_output_size(2, 4, 1, 0), None);
        assert_eq!(conv_transpose_output_size(2, 4, 2, 1), Some(4));
        assert_eq!(conv_transpose_output_size(32, 4, 2, 1), Some(64));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeometry {
            batch: 2,
            channels: 3,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            padding: 1,
            out_h: conv_output_size(5, 3, 2, 1).unwrap(),
            out_w: conv_output_size(4, 3, 2, 1).unwrap(),
        };
        let x: Vec<f64> = (0..2 * 3 * 5 * 4).map(|i| (i as f64 * 0.3).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols()).map(|i| (i as f64 * 0.7).cos()).collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn layout_permutations_invert() {
        let x: Vec<f64> = (0..24).map(f64::from).collect();
        let cm = batch_to_channel_major(&x, 2, 3, 4);
        assert_eq!(channel_to_batch_major(&cm, 2, 3, 4), x);
    }
}
