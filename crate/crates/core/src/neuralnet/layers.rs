//! Convolution and pooling primitives used by the detector.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Unfold a `C×H×W` plane stack into a `(C·9)×(H·W)` matrix of 3×3 zero-padded patches.
pub(crate) fn im2col(input: &[f64], c: usize, h: usize, w: usize, cols: &mut Vec<f64>) {
    let hw = h * w;
    cols.clear();
    cols.resize(c * 9 * hw, 0.0);
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for u in 0..3 {
            for v in 0..3 {
                let row = &mut cols[((ch * 9) + u * 3 + v) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + u as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    let dst = &mut row[i * w..(i + 1) * w];
                    match v {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
}

/// Accumulate patch gradients back onto the `C×H×W` input gradient.
pub(crate) fn col2im(dcols: &[f64], c: usize, h: usize, w: usize, dinput: &mut [f64]) {
    let hw = h * w;
    dinput[..c * hw].iter_mut().for_each(|x| *x = 0.0);
    for ch in 0..c {
        let plane = &mut dinput[ch * hw..(ch + 1) * hw];
        for u in 0..3 {
            for v in 0..3 {
                let row = &dcols[((ch * 9) + u * 3 + v) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + u as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[si as usize * w..(si as usize + 1) * w];
                    let src = &row[i * w..(i + 1) * w];
                    match v {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

/// Forward convolution on raw buffers: `out (F×HW) = weights (F×C·9) · cols + bias`.
pub(crate) fn conv_forward(cols: &[f64], weights: &[f64], bias: &[f64], c: usize, hw: usize, out: &mut Vec<f64>) {
    let f = bias.len();
    out.clear();
    out.reserve(f * hw);
    for b in bias {
        out.extend(std::iter::repeat_n(*b, hw));
    }
    gemm(f, c * 9, hw, weights, false, cols, false, 1.0, out);
}

/// 3×3 convolution, stride 1, zero same-padding.
///
/// `input` is `C×H×W`, `filters` is `F×C×3×3`, `biases` has `F` entries; the
/// result is `F×H×W`.
pub fn conv2d(input: &Tensor, filters: &Tensor, biases: &[f64]) -> Result<Tensor> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::Shape(format!("conv2d input must be C×H×W, got {:?}", input.shape())));
    };
    let &[f, fc, kh, kw] = filters.shape() else {
        return Err(Error::Shape(format!("conv2d filters must be F×C×3×3, got {:?}", filters.shape())));
    };
    if (kh, kw) != (3, 3) || fc != c || biases.len() != f || h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "conv2d: input {:?}, filters {:?}, {} biases",
            input.shape(),
            filters.shape(),
            biases.len()
        )));
    }
    let mut cols = Vec::new();
    im2col(input.data(), c, h, w, &mut cols);
    let mut out = Vec::new();
    conv_forward(&cols, filters.data(), biases, c, h * w, &mut out);
    Tensor::new(vec![f, h, w], out)
}

/// Non-overlapping 2×2 max pooling on raw `F×H×W` data. `argmax` receives the
/// flat input index of each maximum; ties keep the first in row-major order.
pub(crate) fn maxpool_raw(input: &[f64], f: usize, h: usize, w: usize, out: &mut Vec<f64>, argmax: &mut Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    out.clear();
    argmax.clear();
    out.reserve(f * oh * ow);
    argmax.reserve(f * oh * ow);
    for ch in 0..f {
        let base = ch * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for idx in [best + 1, best + w, best + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let &[f, h, w] = input.shape() else {
        return Err(Error::Shape(format!("maxpool2 input must be F×H×W, got {:?}", input.shape())));
    };
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("maxpool2 needs H, W ≥ 2, got {h}×{w}")));
    }
    let (mut out, mut arg) = (Vec::new(), Vec::new());
    maxpool_raw(input.data(), f, h, w, &mut out, &mut arg);
    Ok((Tensor::new(vec![f, h / 2, w / 2], out)?, arg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(input: &Tensor, filters: &Tensor, bias: &[f64]) -> Vec<f64> {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let f = filters.shape()[0];
        let x = input.data();
        let k = filters.data();
        let mut out = vec![0.0; f * h * w];
        for o in 0..f {
            for i in 0..h {
                for j in 0..w {
                    let mut s = bias[o];
                    for ch in 0..c {
                        for u in 0..3 {
                            for v in 0..3 {
                                let (ii, jj) = (i as isize + u as isize - 1, j as isize + v as isize - 1);
                                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                    s += x[(ch * h + ii as usize) * w + jj as usize] * k[((o * c + ch) * 3 + u) * 3 + v];
                                }
                            }
                        }
                    }
                    out[(o * h + i) * w + j] = s;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_copies_input() {
        let x = Tensor::new(vec![1, 4, 5], (0..20).map(f64::from).collect()).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let out = conv2d(&x, &Tensor::new(vec![1, 1, 3, 3], k).unwrap(), &[0.0]).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn zero_input_gives_bias() {
        let x = Tensor::zeros(vec![2, 3, 3]);
        let k = Tensor::new(vec![2, 2, 3, 3], vec![0.3; 36]).unwrap();
        let out = conv2d(&x, &k, &[1.5, -2.0]).unwrap();
        assert!(out.data()[..9].iter().all(|v| *v == 1.5));
        assert!(out.data()[9..].iter().all(|v| *v == -2.0));
    }

    #[test]
    fn matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::new(vec![1, 4, 4], (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let k = Tensor::new(vec![3, 1, 3, 3], (0..27).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b = [0.1, -0.2, 0.3];
        let got = conv2d(&x, &k, &b).unwrap();
        for (g, e) in got.data().iter().zip(naive(&x, &k, &b)) {
            assert!((g - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn shape_mismatch() {
        let x = Tensor::zeros(vec![2, 3, 3]);
        let k = Tensor::zeros(vec![1, 1, 3, 3]);
        assert!(conv2d(&x, &k, &[0.0]).is_err());
        assert!(conv2d(&Tensor::zeros(vec![9]), &k, &[0.0]).is_err());
    }

    #[test]
    fn pooling_floor_and_ties() {
        let (p, _) = maxpool2(&Tensor::new(vec![1, 9, 23], vec![2.0; 207]).unwrap()).unwrap();
        assert_eq!(p.shape(), &[1, 4, 11]);
        assert!(p.data().iter().all(|v| *v == 2.0));
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 3.0, 0.0]).unwrap();
        let (p, arg) = maxpool2(&x).unwrap();
        assert_eq!((p.data()[0], arg[0]), (3.0, 1));
        assert!(maxpool2(&Tensor::zeros(vec![1, 1, 5])).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (c, h, w) = (2, 5, 4);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..c * 9 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut cols = Vec::new();
        im2col(&x, c, h, w, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, c, h, w, &mut back);
        let lhs: f64 = cols.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
