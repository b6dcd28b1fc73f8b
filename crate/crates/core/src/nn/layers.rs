//! Layer primitives on HWC slices plus the public tensor-level wrappers.

use super::gemm::{gemm, View};
use super::Tensor;
use crate::error::{Error, Result};

pub(crate) fn elu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of elu expressed through its output.
pub(crate) fn elu_grad_from_output(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

pub fn elu(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|&v| elu_scalar(v)).collect();
    Tensor::from_vec(t.shape().to_vec(), data).expect("same shape")
}

/// Unfolds a zero-padded 3x3 neighborhood of every pixel into a row of
/// `9 * c` values ordered `(ky, kx, channel)`.
pub(crate) fn im2col(x: &[f64], h: usize, w: usize, c: usize, cols: &mut Vec<f64>) {
    let k = 9 * c;
    cols.clear();
    cols.resize(h * w * k, 0.0);
    for i in 0..h {
        for j in 0..w {
            let row = &mut cols[(i * w + j) * k..(i * w + j + 1) * k];
            for ky in 0..3 {
                let ii = i as isize + ky as isize - 1;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let jj = j as isize + kx as isize - 1;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let src = (ii as usize * w + jj as usize) * c;
                    let dst = (ky * 3 + kx) * c;
                    row[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub(crate) fn col2im(cols: &[f64], h: usize, w: usize, c: usize, dx: &mut [f64]) {
    let k = 9 * c;
    dx.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..h {
        for j in 0..w {
            let row = &cols[(i * w + j) * k..(i * w + j + 1) * k];
            for ky in 0..3 {
                let ii = i as isize + ky as isize - 1;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let jj = j as isize + kx as isize - 1;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let dst = (ii as usize * w + jj as usize) * c;
                    let src = (ky * 3 + kx) * c;
                    for ch in 0..c {
                        dx[dst + ch] += row[src + ch];
                    }
                }
            }
        }
    }
}

/// Pre-activation SAME convolution; `weights` is `[3, 3, cin, cout]`.
pub(crate) fn conv_forward(
    x: &[f64],
    (h, w, cin): (usize, usize, usize),
    weights: &[f64],
    bias: &[f64],
    cols: &mut Vec<f64>,
    out: &mut [f64],
) {
    let cout = bias.len();
    im2col(x, h, w, cin, cols);
    for px in out.chunks_exact_mut(cout) {
        px.copy_from_slice(bias);
    }
    gemm(
        View::row_major(cols, h * w, 9 * cin),
        View::row_major(weights, 9 * cin, cout),
        out,
        1.0,
    );
}

/// Accumulates weight and bias gradients for a conv layer given the gradient
/// w.r.t. its pre-activation output `dz`; writes the input gradient into `dx`
/// when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f64],
    (h, w, cin): (usize, usize, usize),
    weights: &[f64],
    dz: &[f64],
    cols: &mut Vec<f64>,
    dweights: &mut [f64],
    dbias: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let cout = dbias.len();
    let k = 9 * cin;
    im2col(x, h, w, cin, cols);
    gemm(View::row_major(cols, h * w, k).t(), View::row_major(dz, h * w, cout), dweights, 1.0);
    for px in dz.chunks_exact(cout) {
        for (b, g) in dbias.iter_mut().zip(px) {
            *b += g;
        }
    }
    if let Some(dx) = dx {
        gemm(View::row_major(dz, h * w, cout), View::row_major(weights, k, cout).t(), cols, 0.0);
        col2im(cols, h, w, cin, dx);
    }
}

pub(crate) fn pooled_dims(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(2), w.div_ceil(2))
}

pub(crate) fn pool_forward(x: &[f64], (h, w, c): (usize, usize, usize), out: &mut [f64]) {
    let (oh, ow) = pooled_dims(h, w);
    for oi in 0..oh {
        for oj in 0..ow {
            let rows = (2 * oi)..(2 * oi + 2).min(h);
            let cols = (2 * oj)..(2 * oj + 2).min(w);
            let count = (rows.len() * cols.len()) as f64;
            let dst = &mut out[(oi * ow + oj) * c..(oi * ow + oj + 1) * c];
            dst.iter_mut().for_each(|v| *v = 0.0);
            for i in rows {
                for j in cols.clone() {
                    let src = &x[(i * w + j) * c..(i * w + j + 1) * c];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            dst.iter_mut().for_each(|v| *v /= count);
        }
    }
}

pub(crate) fn pool_backward(dy: &[f64], (h, w, c): (usize, usize, usize), dx: &mut [f64]) {
    let (oh, ow) = pooled_dims(h, w);
    for oi in 0..oh {
        for oj in 0..ow {
            let rows = (2 * oi)..(2 * oi + 2).min(h);
            let cols = (2 * oj)..(2 * oj + 2).min(w);
            let count = (rows.len() * cols.len()) as f64;
            let src = &dy[(oi * ow + oj) * c..(oi * ow + oj + 1) * c];
            for i in rows {
                for j in cols.clone() {
                    let dst = &mut dx[(i * w + j) * c..(i * w + j + 1) * c];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s / count;
                    }
                }
            }
        }
    }
}

/// `out = x * W + b` with `W` stored `[nin, nout]`.
pub(crate) fn dense_forward(x: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    out.copy_from_slice(bias);
    gemm(
        View::row_major(x, 1, x.len()),
        View::row_major(weights, x.len(), bias.len()),
        out,
        1.0,
    );
}

pub(crate) fn dense_backward(
    x: &[f64],
    weights: &[f64],
    dz: &[f64],
    dweights: &mut [f64],
    dbias: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let (nin, nout) = (x.len(), dz.len());
    gemm(View::row_major(x, 1, nin).t(), View::row_major(dz, 1, nout), dweights, 1.0);
    for (b, g) in dbias.iter_mut().zip(dz) {
        *b += g;
    }
    if let Some(dx) = dx {
        gemm(View::row_major(dz, 1, nout), View::row_major(weights, nin, nout).t(), dx, 0.0);
    }
}

/// SAME-padded 3x3 convolution of an `H x W x Cin` tensor with kernels
/// shaped `3 x 3 x Cin x Cout`; no activation.
pub fn conv2d_same(input: &Tensor, kernels: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let shape_err = |msg: String| Error::Shape {
        layer: "conv2d".into(),
        msg,
    };
    let &[h, w, cin] = input.shape() else {
        return Err(shape_err(format!("input must be HxWxC, got {:?}", input.shape())));
    };
    let &[kh, kw, kin, cout] = kernels.shape() else {
        return Err(shape_err(format!("kernels must be 3x3xCinxCout, got {:?}", kernels.shape())));
    };
    if (kh, kw) != (3, 3) {
        return Err(shape_err(format!("kernel size {kh}x{kw}, expected 3x3")));
    }
    if kin != cin {
        return Err(shape_err(format!("input has {cin} channels, kernels expect {kin}")));
    }
    if bias.len() != cout {
        return Err(shape_err(format!("{} biases for {cout} kernels", bias.len())));
    }
    let mut out = vec![0.0; h * w * cout];
    let mut cols = Vec::new();
    conv_forward(input.data(), (h, w, cin), kernels.data(), bias, &mut cols, &mut out);
    Tensor::from_vec(vec![h, w, cout], out)
}

/// 2x2 stride-2 average pooling; edge windows average the cells present.
pub fn avg_pool_2x2(input: &Tensor) -> Result<Tensor> {
    let &[h, w, c] = input.shape() else {
        return Err(Error::Shape {
            layer: "avg_pool".into(),
            msg: format!("input must be HxWxC, got {:?}", input.shape()),
        });
    };
    let (oh, ow) = pooled_dims(h, w);
    let mut out = vec![0.0; oh * ow * c];
    pool_forward(input.data(), (h, w, c), &mut out);
    Tensor::from_vec(vec![oh, ow, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &Tensor, k: &Tensor, b: &[f64]) -> Tensor {
        let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let cout = k.shape()[3];
        let mut out = Tensor::zeros(vec![h, w, cout]);
        for i in 0..h as isize {
            for j in 0..w as isize {
                for o in 0..cout {
                    let mut acc = b[o];
                    for dy in -1..=1isize {
                        for dx in -1..=1isize {
                            let (y, z) = (i + dy, j + dx);
                            if y < 0 || z < 0 || y >= h as isize || z >= w as isize {
                                continue;
                            }
                            for c in 0..cin {
                                acc += x.get(&[y as usize, z as usize, c])
                                    * k.get(&[(dy + 1) as usize, (dx + 1) as usize, c, o]);
                            }
                        }
                    }
                    out.set(&[i as usize, j as usize, o], acc);
                }
            }
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = random(&mut rng, vec![6, 6, 2]);
            let k = random(&mut rng, vec![3, 3, 2, 3]);
            let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = conv2d_same(&x, &k, &b).unwrap();
            let want = naive_conv(&x, &k, &b);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_kernel_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, vec![5, 4, 1]);
        let mut k = Tensor::zeros(vec![3, 3, 1, 1]);
        k.set(&[1, 1, 0, 0], 1.0);
        assert_eq!(conv2d_same(&x, &k, &[0.0]).unwrap(), x);

        let big = random(&mut rng, vec![23, 15, 4]);
        let k64 = random(&mut rng, vec![3, 3, 4, 64]);
        assert_eq!(conv2d_same(&big, &k64, &[0.0; 64]).unwrap().shape(), &[23, 15, 64]);
        let wrong = random(&mut rng, vec![3, 3, 3, 64]);
        assert!(matches!(conv2d_same(&big, &wrong, &[0.0; 64]), Err(Error::Shape { .. })));
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu_scalar(0.0), 0.0);
        assert_eq!(elu_scalar(2.0), 2.0);
        assert!((elu_scalar(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
        assert_eq!(elu_scalar(f64::NEG_INFINITY), -1.0);
        assert!((elu_grad_from_output(elu_scalar(-0.7)) - (-0.7f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn pooling_shapes_and_values() {
        let mut shape = (23, 15);
        for want in [(12, 8), (6, 4), (3, 2)] {
            let t = Tensor::from_vec(vec![shape.0, shape.1, 2], vec![3.5; shape.0 * shape.1 * 2]).unwrap();
            let p = avg_pool_2x2(&t).unwrap();
            assert_eq!((p.shape()[0], p.shape()[1]), want);
            assert!(p.data().iter().all(|&v| (v - 3.5).abs() < 1e-15));
            shape = want;
        }
        let t = Tensor::from_vec(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avg_pool_2x2(&t).unwrap().data(), &[2.5]);
    }

    #[test]
    fn pool_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, w, c) = (5, 3, 2);
        let x: Vec<f64> = (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (oh, ow) = pooled_dims(h, w);
        let g: Vec<f64> = (0..oh * ow * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; g.len()];
        pool_forward(&x, (h, w, c), &mut y);
        let mut dx = vec![0.0; x.len()];
        pool_backward(&g, (h, w, c), &mut dx);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (h, w, c) = (4, 5, 3);
        let x: Vec<f64> = (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..h * w * 9 * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cols = Vec::new();
        im2col(&x, h, w, c, &mut cols);
        let mut dx = vec![0.0; x.len()];
        col2im(&g, h, w, c, &mut dx);
        let lhs: f64 = cols.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
