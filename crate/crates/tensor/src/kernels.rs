//! Raw slice kernels behind the graph primitives.

use crate::element::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel_w) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }
}

/// Unfolds one image `[C, H, W]` into columns `[C*KH*KW, OH*OW]`.
fn im2col<T: Element>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.in_channels {
        let src = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds columns back into an image, accumulating overlapping taps.
fn col2im<T: Element>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.in_channels {
        let dst = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            let v = src[oy * ow + ox];
                            dst[iy as usize * g.width + ix as usize] =
                                dst[iy as usize * g.width + ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Element>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    let patch = g.patch();
    let in_image = g.in_channels * g.height * g.width;
    let out_image = g.out_channels * plane;
    let mut out = vec![T::zero(); g.batch * out_image];
    let mut cols = vec![T::zero(); patch * plane];
    for n in 0..g.batch {
        im2col(g, &input[n * in_image..(n + 1) * in_image], &mut cols);
        let dst = &mut out[n * out_image..(n + 1) * out_image];
        T::gemm(
            g.out_channels,
            patch,
            plane,
            weight,
            patch as isize,
            1,
            &cols,
            plane as isize,
            1,
            T::zero(),
            dst,
            plane as isize,
            1,
        );
        if let Some(b) = bias {
            for (o, chunk) in dst.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = *v + b[o]);
            }
        }
    }
    out
}

/// Returns `(d_input, d_weight, d_bias)` for an upstream gradient over the output.
pub fn conv2d_backward<T: Element>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let plane = g.out_h() * g.out_w();
    let patch = g.patch();
    let in_image = g.in_channels * g.height * g.width;
    let out_image = g.out_channels * plane;
    let mut d_input = need_input.then(|| vec![T::zero(); input.len()]);
    let mut d_weight = need_weight.then(|| vec![T::zero(); weight.len()]);
    let mut d_bias = vec![T::zero(); g.out_channels];
    let mut cols = vec![T::zero(); patch * plane];
    for n in 0..g.batch {
        let gy = &grad_out[n * out_image..(n + 1) * out_image];
        for (o, chunk) in gy.chunks(plane).enumerate() {
            d_bias[o] = d_bias[o] + chunk.iter().copied().sum::<T>();
        }
        if let Some(dw) = d_weight.as_mut() {
            im2col(g, &input[n * in_image..(n + 1) * in_image], &mut cols);
            // dW[O, P] += dY[O, S] * cols[P, S]^T
            T::gemm(
                g.out_channels,
                plane,
                patch,
                gy,
                plane as isize,
                1,
                &cols,
                1,
                plane as isize,
                T::one(),
                dw,
                patch as isize,
                1,
            );
        }
        if let Some(dx) = d_input.as_mut() {
            // dcols[P, S] = W[O, P]^T * dY[O, S]
            T::gemm(
                patch,
                g.out_channels,
                plane,
                weight,
                1,
                patch as isize,
                gy,
                plane as isize,
                1,
                T::zero(),
                &mut cols,
                plane as isize,
                1,
            );
            col2im(g, &cols, &mut dx[n * in_image..(n + 1) * in_image]);
        }
    }
    (d_input, d_weight, d_bias)
}

/// Splits `shape` around `axis` into `(outer, axis_len, inner)`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_forward<T: Element>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(x[at(j)]);
            }
            let mut total = T::zero();
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                y[at(j)] = e;
                total = total + e;
            }
            for j in 0..len {
                y[at(j)] = y[at(j)] / total;
            }
        }
    }
    y
}

pub fn log_softmax_rows<T: Element>(x: &[T], cols: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks(cols).zip(y.chunks_mut(cols)) {
        let max = src.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = max + src.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s - lse;
        }
    }
    y
}

/// `[m, n]` -> `[n, m]`.
pub fn transpose2d<T: Element>(x: &[T], m: usize, n: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for i in 0..m {
        for j in 0..n {
            y[j * m + i] = x[i * n + j];
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeometry, x: &[f64], w: &[f64]) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = vec![0.0; g.batch * g.out_channels * oh * ow];
        for n in 0..g.batch {
            for o in 0..g.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..g.in_channels {
                            for ky in 0..g.kernel_h {
                                for kx in 0..g.kernel_w {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= g.height as isize
                                        || ix >= g.width as isize
                                    {
                                        continue;
                                    }
                                    let xv = x[((n * g.in_channels + c) * g.height + iy as usize)
                                        * g.width
                                        + ix as usize];
                                    let wv = w[((o * g.in_channels + c) * g.kernel_h + ky)
                                        * g.kernel_w
                                        + kx];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out[((n * g.out_channels + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        let g = ConvGeometry {
            batch: 2,
            in_channels: 3,
            height: 7,
            width: 6,
            out_channels: 4,
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..2 * 3 * 7 * 6).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..4 * 3 * 9).map(|i| ((i * 13) % 7) as f64 * 0.25 - 0.7).collect();
        let fast = conv2d_forward(&g, &x, &w, None);
        let slow = naive_conv(&g, &x, &w);
        assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_middle_axis_sums_to_one() {
        let x: Vec<f64> = (0..24).map(|i| (i as f64).sin()).collect();
        let y = softmax_forward(&x, 2, 3, 4);
        for o in 0..2 {
            for i in 0..4 {
                let s: f64 = (0..3).map(|j| y[(o * 3 + j) * 4 + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
