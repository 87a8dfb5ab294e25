//! Raw NHWC kernels used by the graph operators.
//!
//! Convolutions lower to im2col followed by one gemm, so every reduction
//! happens in a fixed order and results are reproducible bit-for-bit.

use crate::scalar::Scalar;

/// Resolved geometry of a "same"-padded 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

/// Output size and leading pad for "same" padding along one axis.
///
/// The output has `ceil(input / stride)` positions. Total padding is split
/// evenly, with any odd remainder going to the trailing edge.
pub fn same_padding(input: usize, kernel: usize, stride: usize, dilation: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let effective = effective_kernel(kernel, dilation);
    let needed = ((out - 1) * stride + effective).saturating_sub(input);
    (out, needed / 2)
}

/// Receptive field of a dilated kernel: `k + (k - 1)(d - 1)`.
pub fn effective_kernel(kernel: usize, dilation: usize) -> usize {
    kernel + (kernel - 1) * (dilation - 1)
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn same(
        batch: usize,
        in_h: usize,
        in_w: usize,
        in_c: usize,
        kh: usize,
        kw: usize,
        out_c: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        let (out_h, pad_top) = same_padding(in_h, kh, stride, dilation);
        let (out_w, pad_left) = same_padding(in_w, kw, stride, dilation);
        Self {
            batch,
            in_h,
            in_w,
            in_c,
            out_h,
            out_w,
            out_c,
            kh,
            kw,
            stride,
            dilation,
            pad_top,
            pad_left,
        }
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.in_c
    }

    /// First input column when every horizontal tap of output column `ox` is
    /// inside the image and adjacent in memory (dilation 1).
    #[inline]
    fn contiguous_span(&self, ox: usize) -> Option<usize> {
        if self.dilation != 1 {
            return None;
        }
        let first = (ox * self.stride) as isize - self.pad_left as isize;
        (first >= 0 && first as usize + self.kw <= self.in_w).then_some(first as usize)
    }

    /// Input coordinate of tap `k` for output position `o`, if inside the image.
    #[inline]
    fn tap(o: usize, k: usize, stride: usize, dilation: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * stride + k * dilation) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

/// Unrolls input patches into a `[rows, kh*kw*cin]` matrix. Out-of-image taps stay zero.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let k_len = g.patch_len();
    let mut cols = vec![T::zero(); g.rows() * k_len];
    let mut row = 0;
    for b in 0..g.batch {
        let img = &x[b * g.in_h * g.in_w * g.in_c..(b + 1) * g.in_h * g.in_w * g.in_c];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let dst = &mut cols[row * k_len..(row + 1) * k_len];
                let span = g.contiguous_span(ox);
                for ky in 0..g.kh {
                    let Some(iy) = ConvGeom::tap(oy, ky, g.stride, g.dilation, g.pad_top, g.in_h) else {
                        continue;
                    };
                    if let Some(ix0) = span {
                        let src = (iy * g.in_w + ix0) * g.in_c;
                        let off = ky * g.kw * g.in_c;
                        let n = g.kw * g.in_c;
                        dst[off..off + n].copy_from_slice(&img[src..src + n]);
                        continue;
                    }
                    for kx in 0..g.kw {
                        let Some(ix) = ConvGeom::tap(ox, kx, g.stride, g.dilation, g.pad_left, g.in_w)
                        else {
                            continue;
                        };
                        let src = (iy * g.in_w + ix) * g.in_c;
                        let off = (ky * g.kw + kx) * g.in_c;
                        dst[off..off + g.in_c].copy_from_slice(&img[src..src + g.in_c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatter-adds a `[rows, kh*kw*cin]` patch-gradient matrix back onto the input.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let k_len = g.patch_len();
    let img_len = g.in_h * g.in_w * g.in_c;
    let mut dx = vec![T::zero(); g.batch * img_len];
    let mut row = 0;
    for b in 0..g.batch {
        let img = &mut dx[b * img_len..(b + 1) * img_len];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src = &cols[row * k_len..(row + 1) * k_len];
                let span = g.contiguous_span(ox);
                for ky in 0..g.kh {
                    let Some(iy) = ConvGeom::tap(oy, ky, g.stride, g.dilation, g.pad_top, g.in_h) else {
                        continue;
                    };
                    if let Some(ix0) = span {
                        let dst = (iy * g.in_w + ix0) * g.in_c;
                        let off = ky * g.kw * g.in_c;
                        let n = g.kw * g.in_c;
                        for (d, &v) in img[dst..dst + n].iter_mut().zip(&src[off..off + n]) {
                            *d += v;
                        }
                        continue;
                    }
                    for kx in 0..g.kw {
                        let Some(ix) = ConvGeom::tap(ox, kx, g.stride, g.dilation, g.pad_left, g.in_w)
                        else {
                            continue;
                        };
                        let dst = (iy * g.in_w + ix) * g.in_c;
                        let off = (ky * g.kw + kx) * g.in_c;
                        for c in 0..g.in_c {
                            img[dst + c] += src[off + c];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

/// Forward convolution: `y[rows, cout] = im2col(x) * k + bias`.
pub fn conv_forward<T: Scalar>(x: &[T], kernel: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let rows = g.rows();
    let mut y = vec![T::zero(); rows * g.out_c];
    if let Some(bias) = bias {
        for r in 0..rows {
            y[r * g.out_c..(r + 1) * g.out_c].copy_from_slice(bias);
        }
    }
    let cols = im2col(x, g);
    let k_len = g.patch_len();
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(
        rows,
        k_len,
        g.out_c,
        T::one(),
        &cols,
        k_len as isize,
        1,
        kernel,
        g.out_c as isize,
        1,
        beta,
        &mut y,
        g.out_c as isize,
        1,
    );
    y
}

/// Gradients of a convolution with respect to input, kernel and bias.
pub fn conv_backward<T: Scalar>(x: &[T], kernel: &[T], dy: &[T], g: &ConvGeom) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = g.rows();
    let k_len = g.patch_len();
    let cols = im2col(x, g);

    let mut dk = vec![T::zero(); k_len * g.out_c];
    // dk = cols^T * dy
    T::gemm(
        k_len,
        rows,
        g.out_c,
        T::one(),
        &cols,
        1,
        k_len as isize,
        dy,
        g.out_c as isize,
        1,
        T::zero(),
        &mut dk,
        g.out_c as isize,
        1,
    );

    let mut dcols = cols;
    // dcols = dy * k^T
    T::gemm(
        rows,
        g.out_c,
        k_len,
        T::one(),
        dy,
        g.out_c as isize,
        1,
        kernel,
        1,
        g.out_c as isize,
        T::zero(),
        &mut dcols,
        k_len as isize,
        1,
    );
    let dx = col2im(&dcols, g);

    let mut db = vec![T::zero(); g.out_c];
    for r in 0..rows {
        for (acc, &v) in db.iter_mut().zip(&dy[r * g.out_c..(r + 1) * g.out_c]) {
            *acc += v;
        }
    }
    (dx, dk, db)
}

/// Depth-to-space with factor 2: `[b, h, w, 4c] -> [b, 2h, 2w, c]`.
///
/// Channel group `i * 2 + j` lands at sub-pixel `(i, j)`.
pub fn depth_to_space<T: Scalar>(x: &[T], batch: usize, h: usize, w: usize, c_out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    let (oh, ow) = (2 * h, 2 * w);
    for b in 0..batch {
        for iy in 0..h {
            for ix in 0..w {
                let src = ((b * h + iy) * w + ix) * 4 * c_out;
                for i in 0..2 {
                    for j in 0..2 {
                        let dst = ((b * oh + 2 * iy + i) * ow + 2 * ix + j) * c_out;
                        let s = src + (i * 2 + j) * c_out;
                        y[dst..dst + c_out].copy_from_slice(&x[s..s + c_out]);
                    }
                }
            }
        }
    }
    y
}

/// Inverse of [`depth_to_space`]: `[b, 2h, 2w, c] -> [b, h, w, 4c]`.
pub fn space_to_depth<T: Scalar>(y: &[T], batch: usize, h: usize, w: usize, c_out: usize) -> Vec<T> {
    let mut x = vec![T::zero(); y.len()];
    let (oh, ow) = (2 * h, 2 * w);
    for b in 0..batch {
        for iy in 0..h {
            for ix in 0..w {
                let dst = ((b * h + iy) * w + ix) * 4 * c_out;
                for i in 0..2 {
                    for j in 0..2 {
                        let src = ((b * oh + 2 * iy + i) * ow + 2 * ix + j) * c_out;
                        let d = dst + (i * 2 + j) * c_out;
                        x[d..d + c_out].copy_from_slice(&y[src..src + c_out]);
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct summation over the padded input, no unrolling.
    fn conv_direct(x: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut y = vec![0.0; g.rows() * g.out_c];
        for b in 0..g.batch {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    for co in 0..g.out_c {
                        let mut acc = 0.0;
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad_top as isize;
                                let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad_left as isize;
                                if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                    continue;
                                }
                                for ci in 0..g.in_c {
                                    let xv = x[((b * g.in_h + iy as usize) * g.in_w + ix as usize) * g.in_c + ci];
                                    let kv = k[((ky * g.kw + kx) * g.in_c + ci) * g.out_c + co];
                                    acc += xv * kv;
                                }
                            }
                        }
                        y[((b * g.out_h + oy) * g.out_w + ox) * g.out_c + co] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn same_padding_output_sizes() {
        assert_eq!(same_padding(96, 3, 2, 1).0, 48);
        assert_eq!(same_padding(7, 3, 2, 1).0, 4);
        assert_eq!(same_padding(5, 3, 1, 2), (5, 2));
        assert_eq!(effective_kernel(3, 2), 5);
        for h in 1..20 {
            for s in 1..4 {
                for d in 1..4 {
                    assert_eq!(same_padding(h, 3, s, d).0, h.div_ceil(s));
                }
            }
        }
    }

    #[test]
    fn ones_kernel_counts_valid_taps() {
        let g = ConvGeom::same(1, 4, 4, 1, 3, 3, 1, 1, 1);
        let y = conv_forward(&[1.0f64; 16], &[1.0; 9], None, &g);
        assert_eq!(y[0], 4.0);
        assert_eq!(y[3], 4.0);
        assert_eq!(y[5], 9.0);
        assert_eq!(y[10], 9.0);
        assert_eq!(y[15], 4.0);
        assert_eq!(y[1], 6.0);
    }

    #[test]
    fn gemm_path_matches_direct_summation() {
        let mut state = 17u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        for &(h, w, s, d) in &[(5, 6, 1, 1), (6, 6, 2, 1), (7, 5, 2, 2), (8, 8, 1, 3)] {
            let g = ConvGeom::same(2, h, w, 3, 3, 3, 4, s, d);
            let x: Vec<f64> = (0..2 * h * w * 3).map(|_| next()).collect();
            let k: Vec<f64> = (0..9 * 3 * 4).map(|_| next()).collect();
            let fast = conv_forward(&x, &k, None, &g);
            let slow = conv_direct(&x, &k, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn pixel_shuffle_block_layout() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        assert_eq!(depth_to_space(&x, 1, 1, 1, 1), vec![1.0, 2.0, 3.0, 4.0]);
        let x: Vec<f64> = (0..2 * 2 * 3 * 8).map(f64::from).collect();
        let y = depth_to_space(&x, 2, 2, 3, 2);
        assert_eq!(space_to_depth(&y, 2, 2, 3, 2), x);
    }
}
