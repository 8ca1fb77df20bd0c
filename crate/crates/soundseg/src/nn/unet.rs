//! U-Net graph: encoder (conv+pool), bottleneck, decoder (transposed conv +
//! skip concatenation), pointwise linear head, and exact reverse-mode
//! gradients through the whole graph.

use ndarray::{s, Array3, Axis};
use rayon::prelude::*;

use super::loss::{sample_loss_grad, sample_loss_sum};
use super::ops::{
    concat_channels_one, conv2d_backward_one, conv2d_one, conv2d_transpose_backward_one,
    conv2d_transpose_one, maxpool2d_backward_one, maxpool2d_one, relu_backward_inplace,
    relu_inplace,
};
use super::{LossKind, ModelParams, Scalar, Tensor4, UNetConfig};
use crate::error::{Error, Result};

struct EncLevelCache<F> {
    a1: Array3<F>,
    a2: Array3<F>,
    pool_idx: ndarray::Array3<u8>,
    pooled: Array3<F>,
}

struct DecLevelCache<F> {
    up: Array3<F>,
    cat: Array3<F>,
    d1: Array3<F>,
    d2: Array3<F>,
}

pub(crate) struct SampleCache<F> {
    enc: Vec<EncLevelCache<F>>,
    b1: Array3<F>,
    b2: Array3<F>,
    /// Decoder caches in execution order (level depth-1 down to 0).
    dec: Vec<DecLevelCache<F>>,
}

#[cfg(debug_assertions)]
fn debug_check_finite<F: Scalar>(stage: &str, x: &Array3<F>) {
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        panic!("non-finite activation {v:?} after {stage}");
    }
}

#[cfg(not(debug_assertions))]
fn debug_check_finite<F: Scalar>(_stage: &str, _x: &Array3<F>) {}

/// Forward pass of a single `(H, W, C)` sample, keeping every activation
/// needed by the backward pass.
pub(crate) fn forward_one<F: Scalar>(
    config: &UNetConfig,
    params: &ModelParams<F>,
    x: &ndarray::ArrayView3<F>,
) -> (Array3<F>, SampleCache<F>) {
    let k = config.kernel_size;
    let pad = (k - 1) / 2;

    let mut enc = Vec::with_capacity(config.depth);
    let mut cur: Array3<F> = x.to_owned();
    for block in &params.encoder {
        let mut a1 = conv2d_one(&cur.view(), &block.conv1.kernel, &block.conv1.bias, 1, pad);
        relu_inplace(&mut a1);
        let mut a2 = conv2d_one(&a1.view(), &block.conv2.kernel, &block.conv2.bias, 1, pad);
        relu_inplace(&mut a2);
        let (pooled, pool_idx) = maxpool2d_one(&a2.view());
        debug_check_finite("encoder level", &a2);
        cur = pooled.clone();
        enc.push(EncLevelCache {
            a1,
            a2,
            pool_idx,
            pooled,
        });
    }

    let bot = &params.bottleneck;
    let mut b1 = conv2d_one(&cur.view(), &bot.conv1.kernel, &bot.conv1.bias, 1, pad);
    relu_inplace(&mut b1);
    let mut b2 = conv2d_one(&b1.view(), &bot.conv2.kernel, &bot.conv2.bias, 1, pad);
    relu_inplace(&mut b2);
    debug_check_finite("bottleneck", &b2);

    let mut dec = Vec::with_capacity(config.depth);
    let mut cur = b2.clone();
    for level in (0..config.depth).rev() {
        let block = &params.decoder[level];
        let mut up = conv2d_transpose_one(&cur.view(), &block.up.kernel, &block.up.bias, 2);
        relu_inplace(&mut up);
        let cat = concat_channels_one(&up.view(), &enc[level].a2.view());
        let mut d1 = conv2d_one(&cat.view(), &block.conv1.kernel, &block.conv1.bias, 1, pad);
        relu_inplace(&mut d1);
        let mut d2 = conv2d_one(&d1.view(), &block.conv2.kernel, &block.conv2.bias, 1, pad);
        relu_inplace(&mut d2);
        debug_check_finite("decoder level", &d2);
        cur = d2.clone();
        dec.push(DecLevelCache { up, cat, d1, d2 });
    }

    // Pointwise linear head.
    let out = conv2d_one(&cur.view(), &params.head.kernel, &params.head.bias, 1, 0);
    debug_check_finite("head", &out);

    (out, SampleCache { enc, b1, b2, dec })
}

/// Reverse-mode gradients for one sample given `d(loss)/d(output)`.
pub(crate) fn backward_one<F: Scalar>(
    config: &UNetConfig,
    params: &ModelParams<F>,
    x: &ndarray::ArrayView3<F>,
    cache: &SampleCache<F>,
    dout: Array3<F>,
    grads: &mut ModelParams<F>,
) {
    let k = config.kernel_size;
    let pad = (k - 1) / 2;
    let depth = config.depth;

    // Head. The last decoder activation feeds it (depth >= 1 is validated).
    let head_in = &cache.dec[depth - 1].d2;
    let (mut dcur, dk, db) =
        conv2d_backward_one(&head_in.view(), &params.head.kernel, &dout.view(), 1, 0);
    grads.head.kernel += &dk;
    grads.head.bias += &db;

    // Decoder levels, reverse execution order (level 0 back up to depth-1).
    let mut dskips: Vec<Option<Array3<F>>> = (0..depth).map(|_| None).collect();
    for exec_idx in (0..depth).rev() {
        let level = depth - 1 - exec_idx;
        let block = &params.decoder[level];
        let lc = &cache.dec[exec_idx];

        let mut dd2 = dcur;
        relu_backward_inplace(&mut dd2, &lc.d2);
        let (mut dd1, dk2, db2) =
            conv2d_backward_one(&lc.d1.view(), &block.conv2.kernel, &dd2.view(), 1, pad);
        grads.decoder[level].conv2.kernel += &dk2;
        grads.decoder[level].conv2.bias += &db2;

        relu_backward_inplace(&mut dd1, &lc.d1);
        let (dcat, dk1, db1) =
            conv2d_backward_one(&lc.cat.view(), &block.conv1.kernel, &dd1.view(), 1, pad);
        grads.decoder[level].conv1.kernel += &dk1;
        grads.decoder[level].conv1.bias += &db1;

        let up_channels = lc.up.dim().2;
        let mut dup = dcat.slice(s![.., .., ..up_channels]).to_owned();
        let dskip = dcat.slice(s![.., .., up_channels..]).to_owned();
        dskips[level] = Some(dskip);

        relu_backward_inplace(&mut dup, &lc.up);
        let up_in = if exec_idx == 0 {
            &cache.b2
        } else {
            &cache.dec[exec_idx - 1].d2
        };
        let (dprev, dku, dbu) =
            conv2d_transpose_backward_one(&up_in.view(), &block.up.kernel, &dup.view(), 2);
        grads.decoder[level].up.kernel += &dku;
        grads.decoder[level].up.bias += &dbu;
        dcur = dprev;
    }

    // Bottleneck.
    let mut db2g = dcur;
    relu_backward_inplace(&mut db2g, &cache.b2);
    let (mut db1g, dk, db) = conv2d_backward_one(
        &cache.b1.view(),
        &params.bottleneck.conv2.kernel,
        &db2g.view(),
        1,
        pad,
    );
    grads.bottleneck.conv2.kernel += &dk;
    grads.bottleneck.conv2.bias += &db;

    relu_backward_inplace(&mut db1g, &cache.b1);
    let bot_in = &cache.enc[depth - 1].pooled;
    let (dpooled, dk, db) = conv2d_backward_one(
        &bot_in.view(),
        &params.bottleneck.conv1.kernel,
        &db1g.view(),
        1,
        pad,
    );
    grads.bottleneck.conv1.kernel += &dk;
    grads.bottleneck.conv1.bias += &db;
    let mut dcur = dpooled;

    // Encoder levels, reverse execution order.
    for level in (0..depth).rev() {
        let block = &params.encoder[level];
        let lc = &cache.enc[level];

        let mut da2 = maxpool2d_backward_one(&dcur.view(), &lc.pool_idx);
        if let Some(dskip) = dskips[level].take() {
            da2 += &dskip;
        }
        relu_backward_inplace(&mut da2, &lc.a2);
        let (mut da1, dk2, db2) =
            conv2d_backward_one(&lc.a1.view(), &block.conv2.kernel, &da2.view(), 1, pad);
        grads.encoder[level].conv2.kernel += &dk2;
        grads.encoder[level].conv2.bias += &db2;

        relu_backward_inplace(&mut da1, &lc.a1);
        let conv1_in: ndarray::ArrayView3<F> = if level == 0 {
            x.view()
        } else {
            cache.enc[level - 1].pooled.view()
        };
        let (dprev, dk1, db1) =
            conv2d_backward_one(&conv1_in, &block.conv1.kernel, &da1.view(), 1, pad);
        grads.encoder[level].conv1.kernel += &dk1;
        grads.encoder[level].conv1.bias += &db1;
        dcur = dprev;
    }
}

fn validate_batch<F: Scalar>(config: &UNetConfig, batch: &Tensor4<F>) -> Result<()> {
    config.validate()?;
    let (_, h, w, c) = batch.dim();
    if (h, w, c) != (config.input_height, config.input_width, config.input_channels) {
        return Err(Error::invalid(format!(
            "batch shape ({h}, {w}, {c}) does not match config input ({}, {}, {})",
            config.input_height, config.input_width, config.input_channels
        )));
    }
    Ok(())
}

/// Full forward pass over a batch; output shape equals input shape.
pub fn unet_forward<F: Scalar>(
    config: &UNetConfig,
    params: &ModelParams<F>,
    batch: &Tensor4<F>,
) -> Result<Tensor4<F>> {
    validate_batch(config, batch)?;
    params.validate_against(config)?;
    let b = batch.dim().0;
    let results: Vec<Array3<F>> = (0..b)
        .into_par_iter()
        .map(|i| forward_one(config, params, &batch.index_axis(Axis(0), i)).0)
        .collect();
    let mut out = Tensor4::<F>::zeros(batch.raw_dim());
    for (i, r) in results.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&r);
    }
    Ok(out)
}

/// Forward plus reverse pass over a batch. Returns the batch loss and the
/// gradients of the loss with respect to every parameter tensor. Per-sample
/// contributions are reduced in batch order, independent of thread count.
pub fn backward<F: Scalar>(
    config: &UNetConfig,
    params: &ModelParams<F>,
    batch: &Tensor4<F>,
    target: &Tensor4<F>,
    kind: LossKind,
) -> Result<(f64, ModelParams<F>)> {
    validate_batch(config, batch)?;
    params.validate_against(config)?;
    if batch.dim() != target.dim() {
        return Err(Error::invalid(format!(
            "batch shape {:?} != target shape {:?}",
            batch.dim(),
            target.dim()
        )));
    }
    let b = batch.dim().0;
    let n_total = batch.len();

    let per_sample: Vec<(f64, ModelParams<F>)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let x = batch.index_axis(Axis(0), i);
            let t = target.index_axis(Axis(0), i);
            let (pred, cache) = forward_one(config, params, &x);
            let loss_sum = sample_loss_sum(kind, &pred, &t);
            let dout = sample_loss_grad(kind, &pred, &t, n_total);
            let mut grads = ModelParams::zeros(config).expect("validated config");
            backward_one(config, params, &x, &cache, dout, &mut grads);
            (loss_sum, grads)
        })
        .collect();

    let mut total = ModelParams::zeros(config)?;
    let mut loss_acc = 0.0f64;
    for (l, g) in &per_sample {
        loss_acc += l;
        total.add_assign(g);
    }
    Ok((loss_acc / n_total as f64, total))
}
