//! Layer primitives: convolution, max-pooling, transposed convolution, and
//! channel concatenation, with their backward passes.
//!
//! Convolutions run as im2col + GEMM per sample. The transposed convolution
//! shares the col2im scatter with the convolution's input gradient, which
//! makes it the exact adjoint of the strided convolution with the same
//! kernel tensor.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;

use super::{Scalar, Tensor4};
use crate::error::{Error, Result};

/// Zero-padding mode. `Same` preserves spatial dims at stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

pub(crate) fn out_spatial(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Gathers kernel windows into rows: output `(oh*ow, kh*kw*c)`.
pub(crate) fn im2col<F: Scalar>(
    input: &ArrayView3<F>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<F> {
    let (h, w, c) = input.dim();
    let oh = out_spatial(h, kh, stride, pad);
    let ow = out_spatial(w, kw, stride, pad);
    let row_len = kh * kw * c;
    let mut cols = Array2::<F>::zeros((oh * ow, row_len));
    let src = input.as_slice().expect("im2col input must be contiguous");
    let dst = cols.as_slice_mut().unwrap();
    for oy in 0..oh {
        for ky in 0..kh {
            let iy = (oy * stride + ky) as isize - pad as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let iy = iy as usize;
            for ox in 0..ow {
                let row_base = (oy * ow + ox) * row_len + ky * kw * c;
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let s = (iy * w + ix as usize) * c;
                    let d = row_base + kx * c;
                    dst[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
    }
    cols
}

/// Scatter-add inverse of [`im2col`]: accumulates rows back into `(h, w, c)`.
pub(crate) fn col2im<F: Scalar>(
    cols: &ArrayView2<F>,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array3<F> {
    let oh = out_spatial(h, kh, stride, pad);
    let ow = out_spatial(w, kw, stride, pad);
    let row_len = kh * kw * c;
    debug_assert_eq!(cols.dim(), (oh * ow, row_len));
    let mut out = Array3::<F>::zeros((h, w, c));
    let dst = out.as_slice_mut().unwrap();
    let cols_std = cols.as_standard_layout();
    let src = cols_std.as_slice().unwrap();
    for oy in 0..oh {
        for ky in 0..kh {
            let iy = (oy * stride + ky) as isize - pad as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let iy = iy as usize;
            for ox in 0..ow {
                let row_base = (oy * ow + ox) * row_len + ky * kw * c;
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let d = (iy * w + ix as usize) * c;
                    let s = row_base + kx * c;
                    for i in 0..c {
                        dst[d + i] = dst[d + i] + src[s + i];
                    }
                }
            }
        }
    }
    out
}

/// Cross-correlation of one sample with kernel `(kh, kw, cin, cout)`.
pub(crate) fn conv2d_one<F: Scalar>(
    input: &ArrayView3<F>,
    kernel: &Array4<F>,
    bias: &Array1<F>,
    stride: usize,
    pad: usize,
) -> Array3<F> {
    let (kh, kw, cin, cout) = kernel.dim();
    let (h, w, c) = input.dim();
    debug_assert_eq!(c, cin);
    let oh = out_spatial(h, kh, stride, pad);
    let ow = out_spatial(w, kw, stride, pad);
    let cols = im2col(input, kh, kw, stride, pad);
    let kmat = kernel
        .view()
        .into_shape_with_order((kh * kw * cin, cout))
        .unwrap();
    let mut out = cols.dot(&kmat);
    out += &bias.view();
    out.into_shape_with_order((oh, ow, cout)).unwrap()
}

/// Gradients of [`conv2d_one`]: returns `(d_input, d_kernel, d_bias)`.
pub(crate) fn conv2d_backward_one<F: Scalar>(
    input: &ArrayView3<F>,
    kernel: &Array4<F>,
    dout: &ArrayView3<F>,
    stride: usize,
    pad: usize,
) -> (Array3<F>, Array4<F>, Array1<F>) {
    let (kh, kw, cin, cout) = kernel.dim();
    let (h, w, _) = input.dim();
    let (oh, ow, _) = dout.dim();
    let cols = im2col(input, kh, kw, stride, pad);
    let dout_mat = dout
        .to_shape((oh * ow, cout))
        .expect("dout must be contiguous");
    let dkernel = cols
        .t()
        .dot(&dout_mat)
        .into_shape_with_order((kh, kw, cin, cout))
        .unwrap();
    let dbias = dout_mat.sum_axis(Axis(0));
    // Materialize the transposed kernel row-major so the GEMM result is too.
    let kmat_t = kernel
        .view()
        .into_shape_with_order((kh * kw * cin, cout))
        .unwrap()
        .t()
        .as_standard_layout()
        .into_owned();
    let dcols = dout_mat.dot(&kmat_t);
    let dinput = col2im(&dcols.view(), h, w, cin, kh, kw, stride, pad);
    (dinput, dkernel, dbias)
}

/// Transposed convolution of one sample. The kernel is `(kh, kw, cout, cin)`;
/// output spatial dims are `(n - 1)*stride + k`. This is the adjoint of
/// [`conv2d_one`] with stride `stride` and no padding.
pub(crate) fn conv2d_transpose_one<F: Scalar>(
    input: &ArrayView3<F>,
    kernel: &Array4<F>,
    bias: &Array1<F>,
    stride: usize,
) -> Array3<F> {
    let (kh, kw, cout, cin) = kernel.dim();
    let (h, w, c) = input.dim();
    debug_assert_eq!(c, cin);
    let oh = (h - 1) * stride + kh;
    let ow = (w - 1) * stride + kw;
    let in_mat = input.to_shape((h * w, cin)).expect("contiguous input");
    let kmat_t = kernel
        .view()
        .into_shape_with_order((kh * kw * cout, cin))
        .unwrap()
        .t()
        .as_standard_layout()
        .into_owned();
    let dcols = in_mat.dot(&kmat_t);
    let mut out = col2im(&dcols.view(), oh, ow, cout, kh, kw, stride, 0);
    out += &bias.view();
    out
}

/// Gradients of [`conv2d_transpose_one`]: `(d_input, d_kernel, d_bias)`.
pub(crate) fn conv2d_transpose_backward_one<F: Scalar>(
    input: &ArrayView3<F>,
    kernel: &Array4<F>,
    dout: &ArrayView3<F>,
    stride: usize,
) -> (Array3<F>, Array4<F>, Array1<F>) {
    let (kh, kw, cout, cin) = kernel.dim();
    let (h, w, _) = input.dim();
    let (gh, gw, _) = dout.dim();
    let g_cols = im2col(dout, kh, kw, stride, 0);
    let kmat = kernel
        .view()
        .into_shape_with_order((kh * kw * cout, cin))
        .unwrap();
    let dinput = g_cols
        .dot(&kmat)
        .into_shape_with_order((h, w, cin))
        .unwrap();
    let in_mat = input.to_shape((h * w, cin)).expect("contiguous input");
    let dkernel = g_cols
        .t()
        .dot(&in_mat)
        .into_shape_with_order((kh, kw, cout, cin))
        .unwrap();
    let dout_mat = dout
        .to_shape((gh * gw, cout))
        .expect("contiguous dout");
    let dbias = dout_mat.sum_axis(Axis(0));
    (dinput, dkernel, dbias)
}

/// 2x2 max-pool; also returns the in-block argmax (0..4) for backprop.
pub(crate) fn maxpool2d_one<F: Scalar>(input: &ArrayView3<F>) -> (Array3<F>, Array3<u8>) {
    let (h, w, c) = input.dim();
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::<F>::zeros((oh, ow, c));
    let mut idx = Array3::<u8>::zeros((oh, ow, c));
    for oy in 0..oh {
        for ox in 0..ow {
            for ci in 0..c {
                let mut best = input[[2 * oy, 2 * ox, ci]];
                let mut best_k = 0u8;
                for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                    let v = input[[2 * oy + dy, 2 * ox + dx, ci]];
                    if v > best {
                        best = v;
                        best_k = k as u8;
                    }
                }
                out[[oy, ox, ci]] = best;
                idx[[oy, ox, ci]] = best_k;
            }
        }
    }
    (out, idx)
}

/// Routes pooled gradients back to the argmax positions.
pub(crate) fn maxpool2d_backward_one<F: Scalar>(
    dout: &ArrayView3<F>,
    idx: &Array3<u8>,
) -> Array3<F> {
    let (oh, ow, c) = dout.dim();
    let mut dinput = Array3::<F>::zeros((oh * 2, ow * 2, c));
    for oy in 0..oh {
        for ox in 0..ow {
            for ci in 0..c {
                let k = idx[[oy, ox, ci]] as usize;
                let (dy, dx) = (k / 2, k % 2);
                dinput[[2 * oy + dy, 2 * ox + dx, ci]] = dout[[oy, ox, ci]];
            }
        }
    }
    dinput
}

pub(crate) fn concat_channels_one<F: Scalar>(a: &ArrayView3<F>, b: &ArrayView3<F>) -> Array3<F> {
    let (h, w, ca) = a.dim();
    let (_, _, cb) = b.dim();
    let mut out = Array3::<F>::zeros((h, w, ca + cb));
    out.slice_mut(s![.., .., ..ca]).assign(a);
    out.slice_mut(s![.., .., ca..]).assign(b);
    out
}

pub(crate) fn relu_inplace<F: Scalar>(x: &mut Array3<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Masks `grad` by the activation sign: passes where `activated > 0`.
pub(crate) fn relu_backward_inplace<F: Scalar>(grad: &mut Array3<F>, activated: &Array3<F>) {
    ndarray::Zip::from(grad).and(activated).for_each(|g, &a| {
        if a <= F::zero() {
            *g = F::zero();
        }
    });
}

fn check_channels<F: Scalar>(input: &Tensor4<F>, kernel_cin: usize) -> Result<()> {
    let c = input.dim().3;
    if c != kernel_cin {
        return Err(Error::invalid(format!(
            "input has {c} channels, kernel expects {kernel_cin}"
        )));
    }
    Ok(())
}

fn map_batch<F: Scalar>(
    input: &Tensor4<F>,
    out_dims: (usize, usize, usize),
    f: impl Fn(&ArrayView3<F>) -> Array3<F> + Sync,
) -> Tensor4<F> {
    let b = input.dim().0;
    let results: Vec<Array3<F>> = (0..b)
        .into_par_iter()
        .map(|i| f(&input.index_axis(Axis(0), i)))
        .collect();
    let mut out = Tensor4::<F>::zeros((b, out_dims.0, out_dims.1, out_dims.2));
    for (i, r) in results.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&r);
    }
    out
}

/// Batched cross-correlation with zero padding. `Same` padding requires
/// stride 1 and preserves spatial dims.
pub fn conv2d<F: Scalar>(
    input: &Tensor4<F>,
    kernel: &Array4<F>,
    bias: &Array1<F>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor4<F>> {
    let (kh, kw, cin, cout) = kernel.dim();
    check_channels(input, cin)?;
    if bias.len() != cout {
        return Err(Error::invalid(format!(
            "bias has {} entries, kernel produces {cout} channels",
            bias.len()
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let pad = match padding {
        Padding::Same => {
            if stride != 1 {
                return Err(Error::invalid("same padding requires stride 1"));
            }
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::invalid("same padding requires odd kernels"));
            }
            (kh - 1) / 2
        }
        Padding::Valid => 0,
    };
    let (_, h, w, _) = input.dim();
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::invalid(format!(
            "input {h}x{w} smaller than kernel {kh}x{kw}"
        )));
    }
    let oh = out_spatial(h, kh, stride, pad);
    let ow = out_spatial(w, kw, stride, pad);
    Ok(map_batch(input, (oh, ow, cout), |x| {
        conv2d_one(x, kernel, bias, stride, pad)
    }))
}

/// Batched 2x2 max-pool. Spatial dims must be even.
pub fn maxpool2d<F: Scalar>(input: &Tensor4<F>) -> Result<Tensor4<F>> {
    let (_, h, w, c) = input.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "maxpool2d needs even spatial dims, got {h}x{w}"
        )));
    }
    Ok(map_batch(input, (h / 2, w / 2, c), |x| maxpool2d_one(x).0))
}

/// Batched transposed convolution, kernel `(kh, kw, cout, cin)`; the exact
/// adjoint of [`conv2d`] with `Valid` padding and the same stride and kernel.
pub fn conv2d_transpose<F: Scalar>(
    input: &Tensor4<F>,
    kernel: &Array4<F>,
    bias: &Array1<F>,
    stride: usize,
) -> Result<Tensor4<F>> {
    let (kh, kw, cout, cin) = kernel.dim();
    check_channels(input, cin)?;
    if bias.len() != cout {
        return Err(Error::invalid(format!(
            "bias has {} entries, kernel produces {cout} channels",
            bias.len()
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let (_, h, w, _) = input.dim();
    let oh = (h - 1) * stride + kh;
    let ow = (w - 1) * stride + kw;
    Ok(map_batch(input, (oh, ow, cout), |x| {
        conv2d_transpose_one(x, kernel, bias, stride)
    }))
}

/// Concatenates along the channel axis; `a` occupies the leading channels.
pub fn concat_channels<F: Scalar>(a: &Tensor4<F>, b: &Tensor4<F>) -> Result<Tensor4<F>> {
    let (ba, ha, wa, ca) = a.dim();
    let (bb, hb, wb, cb) = b.dim();
    if (ba, ha, wa) != (bb, hb, wb) {
        return Err(Error::invalid(format!(
            "batch/spatial dims differ: {:?} vs {:?}",
            (ba, ha, wa),
            (bb, hb, wb)
        )));
    }
    let mut out = Tensor4::<F>::zeros((ba, ha, wa, ca + cb));
    out.slice_mut(s![.., .., .., ..ca]).assign(a);
    out.slice_mut(s![.., .., .., ca..]).assign(b);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random4(rng: &mut ChaCha8Rng, dims: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_simple_fn(dims, || rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random4(&mut rng, (2, 4, 6, 3));
        let mut kernel = Array4::<f64>::zeros((1, 1, 3, 3));
        for c in 0..3 {
            kernel[[0, 0, c, c]] = 1.0;
        }
        let bias = Array1::zeros(3);
        let y = conv2d(&x, &kernel, &bias, 1, Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Array4::<f64>::ones((1, 6, 6, 1));
        let kernel = Array4::<f64>::ones((3, 3, 1, 1));
        let bias = Array1::zeros(1);
        let y = conv2d(&x, &kernel, &bias, 1, Padding::Same).unwrap();
        // interior positions see the full 3x3 window
        for i in 1..5 {
            for j in 1..5 {
                assert_eq!(y[[0, i, j, 0]], 9.0);
            }
        }
        // corner sees a 2x2 window
        assert_eq!(y[[0, 0, 0, 0]], 4.0);
    }

    /// Direct six-loop convolution used as the oracle.
    fn conv_naive(
        x: &Array4<f64>,
        k: &Array4<f64>,
        bias: &Array1<f64>,
        stride: usize,
        pad: usize,
    ) -> Array4<f64> {
        let (b, h, w, cin) = x.dim();
        let (kh, kw, _, cout) = k.dim();
        let oh = out_spatial(h, kh, stride, pad);
        let ow = out_spatial(w, kw, stride, pad);
        let mut y = Array4::<f64>::zeros((b, oh, ow, cout));
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..cout {
                        let mut acc = bias[co];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    acc += x[[bi, iy as usize, ix as usize, ci]]
                                        * k[[ky, kx, ci, co]];
                                }
                            }
                        }
                        y[[bi, oy, ox, co]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random4(&mut rng, (2, 8, 6, 3));
        let k = random4(&mut rng, (3, 3, 3, 4));
        let bias = Array1::from_shape_simple_fn(4, || rng.random::<f64>());
        let y = conv2d(&x, &k, &bias, 1, Padding::Same).unwrap();
        let expect = conv_naive(&x, &k, &bias, 1, 1);
        for (a, b) in y.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        // Strided valid convolution against the same oracle.
        let k2 = random4(&mut rng, (2, 2, 3, 2));
        let bias2 = Array1::zeros(2);
        let y2 = conv2d(&x, &k2, &bias2, 2, Padding::Valid).unwrap();
        let expect2 = conv_naive(&x, &k2, &bias2, 2, 0);
        for (a, b) in y2.iter().zip(expect2.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_shape_mismatch_rejected() {
        let x = Array4::<f64>::zeros((1, 4, 4, 2));
        let k = Array4::<f64>::zeros((3, 3, 3, 4));
        let bias = Array1::zeros(4);
        assert!(conv2d(&x, &k, &bias, 1, Padding::Same).is_err());
    }

    #[test]
    fn maxpool_takes_block_max() {
        let mut x = Array4::<f64>::zeros((1, 2, 2, 1));
        x[[0, 0, 0, 0]] = 1.0;
        x[[0, 0, 1, 0]] = 2.0;
        x[[0, 1, 0, 0]] = 3.0;
        x[[0, 1, 1, 0]] = 4.0;
        let y = maxpool2d(&x).unwrap();
        assert_eq!(y.dim(), (1, 1, 1, 1));
        assert_eq!(y[[0, 0, 0, 0]], 4.0);

        let c = Array4::<f64>::from_elem((1, 4, 6, 2), 0.7);
        let yc = maxpool2d(&c).unwrap();
        assert_eq!(yc.dim(), (1, 2, 3, 2));
        assert!(yc.iter().all(|&v| v == 0.7));

        let odd = Array4::<f64>::zeros((1, 3, 4, 1));
        assert!(maxpool2d(&odd).is_err());
    }

    #[test]
    fn maxpool_gradient_routes_to_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x3 = Array3::from_shape_simple_fn((4, 4, 2), || rng.random::<f64>());
        let (y, idx) = maxpool2d_one(&x3.view());
        let dout = Array3::from_shape_simple_fn((2, 2, 2), || rng.random::<f64>());
        let dx = maxpool2d_backward_one(&dout.view(), &idx);
        // Finite differences: perturb each input, check gradient.
        let eps = 1e-6;
        for iy in 0..4 {
            for ix in 0..4 {
                for c in 0..2 {
                    let mut xp = x3.clone();
                    xp[[iy, ix, c]] += eps;
                    let (yp, _) = maxpool2d_one(&xp.view());
                    let fd: f64 = yp
                        .iter()
                        .zip(y.iter())
                        .zip(dout.iter())
                        .map(|((a, b), g)| (a - b) / eps * g)
                        .sum();
                    assert!(
                        (fd - dx[[iy, ix, c]]).abs() < 1e-5,
                        "at ({iy},{ix},{c}): fd {fd} vs {dx:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn transpose_doubles_dims_and_zero_maps_to_zero() {
        let x = Array4::<f64>::zeros((2, 3, 5, 4));
        let k = Array4::<f64>::from_elem((2, 2, 6, 4), 0.3);
        let bias = Array1::zeros(6);
        let y = conv2d_transpose(&x, &k, &bias, 2).unwrap();
        assert_eq!(y.dim(), (2, 6, 10, 6));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transpose_is_adjoint_of_strided_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = random4(&mut rng, (1, 6, 8, 3));
            let k = random4(&mut rng, (2, 2, 3, 5));
            let zero_b5 = Array1::zeros(5);
            let zero_b3 = Array1::zeros(3);
            let cx = conv2d(&x, &k, &zero_b5, 2, Padding::Valid).unwrap();
            let y = random4(&mut rng, cx.dim());
            let ty = conv2d_transpose(&y, &k, &zero_b3, 2).unwrap();
            let lhs: f64 = cx.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(ty.iter()).map(|(a, b)| a * b).sum();
            let norm = lhs.abs().max(rhs.abs()).max(1.0);
            assert!(
                (lhs - rhs).abs() <= 1e-5 * norm,
                "adjoint mismatch: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn concat_layout_and_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random4(&mut rng, (1, 4, 4, 2));
        let b = random4(&mut rng, (1, 4, 4, 3));
        let y = concat_channels(&a, &b).unwrap();
        assert_eq!(y.dim(), (1, 4, 4, 5));
        assert_eq!(y.slice(s![.., .., .., ..2]), a);
        assert_eq!(y.slice(s![.., .., .., 2..]), b);

        let bad = random4(&mut rng, (1, 3, 4, 3));
        assert!(concat_channels(&a, &bad).is_err());
    }
}
