//! Network layers with hand-written backward passes.
//!
//! The layer menu is fixed: same-padded odd-kernel convolution, batch
//! normalization, leaky ReLU, 2x2 max pooling, 4x4/stride-2 transposed
//! convolution, and sigmoid. Every backward pass is checked against central
//! finite differences in the tests. Parallel loops write disjoint output
//! planes with a fixed per-plane summation order, so results do not depend
//! on thread count or scheduling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::tensor::TensorGrid;

/// Adds `coef * src_row` into `dst_row` over the horizontally valid overlap
/// for a kernel column offset `dx`.
#[inline]
fn axpy_shifted(dst: &mut [f64], src: &[f64], coef: f64, dx: i64, width: usize) {
    let x0 = (-dx).max(0) as usize;
    let x1 = (width as i64).min(width as i64 - dx) as usize;
    if x0 >= x1 {
        return;
    }
    let s0 = (x0 as i64 + dx) as usize;
    for (d, s) in dst[x0..x1].iter_mut().zip(&src[s0..s0 + (x1 - x0)]) {
        *d += coef * *s;
    }
}

fn check_conv_shapes(x: &TensorGrid, w: &TensorGrid, b: &[f64]) -> Result<()> {
    let (_, c_in, _, _) = x.shape();
    let (c_out, kc, kh, kw) = w.shape();
    if kc != c_in {
        return Err(Error::Dimension(format!(
            "kernel expects {kc} input channels, tensor has {c_in}"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Dimension(format!(
            "convolution kernel must be square and odd, got {kh}x{kw}"
        )));
    }
    if b.len() != c_out {
        return Err(Error::Dimension(format!(
            "bias length {} does not match {c_out} output channels",
            b.len()
        )));
    }
    Ok(())
}

/// Same-padded 2-D convolution. Weights are (out, in, k, k); output keeps the
/// spatial size of the input.
pub fn conv2d(x: &TensorGrid, w: &TensorGrid, b: &[f64]) -> Result<TensorGrid> {
    check_conv_shapes(x, w, b)?;
    let (n, c_in, h, wd) = x.shape();
    let (c_out, _, k, _) = w.shape();
    let r = (k / 2) as i64;
    let mut out = TensorGrid::zeros(n, c_out, h, wd);
    let plane = h * wd;

    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, out_plane)| {
            let ni = idx / c_out;
            let co = idx % c_out;
            out_plane.fill(b[co]);
            for ci in 0..c_in {
                let xp = x.plane(ni, ci);
                for ky in 0..k {
                    let dy = ky as i64 - r;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as i64).min(h as i64 - dy) as usize;
                    for kx in 0..k {
                        let coef = w.at(co, ci, ky, kx);
                        if coef == 0.0 {
                            continue;
                        }
                        let dx = kx as i64 - r;
                        for y in y0..y1 {
                            let sy = (y as i64 + dy) as usize;
                            axpy_shifted(
                                &mut out_plane[y * wd..(y + 1) * wd],
                                &xp[sy * wd..(sy + 1) * wd],
                                coef,
                                dx,
                                wd,
                            );
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weights, and bias.
pub fn conv2d_backward(
    x: &TensorGrid,
    w: &TensorGrid,
    grad_out: &TensorGrid,
) -> Result<(TensorGrid, TensorGrid, Vec<f64>)> {
    let (n, c_in, h, wd) = x.shape();
    let (c_out, _, k, _) = w.shape();
    if grad_out.shape() != (n, c_out, h, wd) {
        return Err(Error::Dimension(format!(
            "grad shape {:?} does not match conv output ({n}, {c_out}, {h}, {wd})",
            grad_out.shape()
        )));
    }
    let r = (k / 2) as i64;
    let plane = h * wd;

    // d loss / d input: correlation of grad_out with the flipped kernel.
    let mut gx = TensorGrid::zeros(n, c_in, h, wd);
    gx.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, gx_plane)| {
            let ni = idx / c_in;
            let ci = idx % c_in;
            for co in 0..c_out {
                let gp = grad_out.plane(ni, co);
                for ky in 0..k {
                    let dy = ky as i64 - r;
                    for kx in 0..k {
                        let coef = w.at(co, ci, ky, kx);
                        if coef == 0.0 {
                            continue;
                        }
                        let dx = kx as i64 - r;
                        // out(y) reads in(y + dy), so gin(iy) sums go(iy - dy).
                        let y0 = dy.max(0) as usize;
                        let y1 = (h as i64).min(h as i64 + dy) as usize;
                        for iy in y0..y1 {
                            let gy = (iy as i64 - dy) as usize;
                            axpy_shifted(
                                &mut gx_plane[iy * wd..(iy + 1) * wd],
                                &gp[gy * wd..(gy + 1) * wd],
                                coef,
                                -dx,
                                wd,
                            );
                        }
                    }
                }
            }
        });

    // d loss / d weights, one output channel per task.
    let mut gw = TensorGrid::zeros(c_out, c_in, k, k);
    let wplane = c_in * k * k;
    gw.data_mut()
        .par_chunks_mut(wplane)
        .enumerate()
        .for_each(|(co, gw_chunk)| {
            for ci in 0..c_in {
                for ky in 0..k {
                    let dy = ky as i64 - r;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as i64).min(h as i64 - dy) as usize;
                    for kx in 0..k {
                        let dx = kx as i64 - r;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (wd as i64).min(wd as i64 - dx) as usize;
                        let mut acc = 0.0;
                        if x0 < x1 {
                            for ni in 0..n {
                                let gp = grad_out.plane(ni, co);
                                let xp = x.plane(ni, ci);
                                for y in y0..y1 {
                                    let sy = (y as i64 + dy) as usize;
                                    let sx = (x0 as i64 + dx) as usize;
                                    let g_row = &gp[y * wd + x0..y * wd + x1];
                                    let x_row = &xp[sy * wd + sx..sy * wd + sx + (x1 - x0)];
                                    for (g, xv) in g_row.iter().zip(x_row) {
                                        acc += g * xv;
                                    }
                                }
                            }
                        }
                        gw_chunk[(ci * k + ky) * k + kx] = acc;
                    }
                }
            }
        });

    let gb: Vec<f64> = (0..c_out)
        .into_par_iter()
        .map(|co| {
            let mut acc = 0.0;
            for ni in 0..n {
                for v in grad_out.plane(ni, co) {
                    acc += v;
                }
            }
            acc
        })
        .collect();

    Ok((gx, gw, gb))
}

/// Per-channel batch statistics produced by a train-mode pass, used to
/// update running estimates.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Intermediate state needed by [`batch_norm_backward`].
#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: TensorGrid,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
}

/// Batch normalization, train mode: standardizes each channel with batch
/// statistics (biased variance, epsilon inside the square root) and applies
/// the affine scale/shift.
pub fn batch_norm_train(
    x: &TensorGrid,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(TensorGrid, BnStats, BnCache)> {
    let (n, c, h, w) = x.shape();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Dimension(format!(
            "batch norm affine length {} / {} does not match {c} channels",
            gamma.len(),
            beta.len()
        )));
    }
    let m = n * h * w;
    if m < 2 {
        return Err(Error::DegenerateBatch);
    }
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    let mut inv_std = vec![0.0; c];
    for ci in 0..c {
        let mut acc = 0.0;
        for ni in 0..n {
            for v in x.plane(ni, ci) {
                acc += v;
            }
        }
        let mu = acc / m as f64;
        let mut sq = 0.0;
        for ni in 0..n {
            for v in x.plane(ni, ci) {
                sq += (v - mu) * (v - mu);
            }
        }
        mean[ci] = mu;
        var[ci] = sq / m as f64;
        inv_std[ci] = 1.0 / (var[ci] + eps).sqrt();
    }
    let mut x_hat = TensorGrid::zeros(n, c, h, w);
    let mut out = TensorGrid::zeros(n, c, h, w);
    for ni in 0..n {
        for ci in 0..c {
            let xp = x.plane(ni, ci);
            let xh = x_hat.plane_mut(ni, ci);
            for (o, v) in xh.iter_mut().zip(xp) {
                *o = (v - mean[ci]) * inv_std[ci];
            }
        }
    }
    for ni in 0..n {
        for ci in 0..c {
            let xh = x_hat.plane(ni, ci);
            let op = out.plane_mut(ni, ci);
            for (o, v) in op.iter_mut().zip(xh) {
                *o = gamma[ci] * v + beta[ci];
            }
        }
    }
    let stats = BnStats { mean, var };
    let cache = BnCache {
        x_hat,
        inv_std,
        gamma: gamma.to_vec(),
    };
    Ok((out, stats, cache))
}

/// Batch normalization, inference mode: uses running statistics.
pub fn batch_norm_infer(
    x: &TensorGrid,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<TensorGrid> {
    let (n, c, h, w) = x.shape();
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(Error::Dimension(format!(
            "batch norm parameter lengths do not match {c} channels"
        )));
    }
    let mut out = TensorGrid::zeros(n, c, h, w);
    for ni in 0..n {
        for ci in 0..c {
            let scale = gamma[ci] / (running_var[ci] + eps).sqrt();
            let shift = beta[ci] - scale * running_mean[ci];
            let xp = x.plane(ni, ci);
            let op = out.plane_mut(ni, ci);
            for (o, v) in op.iter_mut().zip(xp) {
                *o = scale * v + shift;
            }
        }
    }
    Ok(out)
}

/// Gradients of train-mode batch norm with respect to input, gamma, beta.
pub fn batch_norm_backward(
    cache: &BnCache,
    grad_out: &TensorGrid,
) -> (TensorGrid, Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = cache.x_hat.shape();
    let m = (n * h * w) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ci in 0..c {
        let mut dg = 0.0;
        let mut db = 0.0;
        for ni in 0..n {
            let gp = grad_out.plane(ni, ci);
            let xh = cache.x_hat.plane(ni, ci);
            for (g, xv) in gp.iter().zip(xh) {
                dg += g * xv;
                db += g;
            }
        }
        dgamma[ci] = dg;
        dbeta[ci] = db;
    }
    let mut gx = TensorGrid::zeros(n, c, h, w);
    for ni in 0..n {
        for ci in 0..c {
            let scale = cache.gamma[ci] * cache.inv_std[ci] / m;
            let gp = grad_out.plane(ni, ci);
            let xh = cache.x_hat.plane(ni, ci);
            let gxp = gx.plane_mut(ni, ci);
            for ((o, g), xv) in gxp.iter_mut().zip(gp).zip(xh) {
                *o = scale * (m * g - dbeta[ci] - xv * dgamma[ci]);
            }
        }
    }
    (gx, dgamma, dbeta)
}

/// Leaky ReLU: x for positive inputs, slope * x otherwise.
pub fn leaky_relu(x: &TensorGrid, slope: f64) -> TensorGrid {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    out
}

/// Gradient of [`leaky_relu`] given the layer input.
pub fn leaky_relu_backward(x: &TensorGrid, grad_out: &TensorGrid, slope: f64) -> TensorGrid {
    let mut gx = grad_out.clone();
    for (g, v) in gx.data_mut().iter_mut().zip(x.data()) {
        if *v <= 0.0 {
            *g *= slope;
        }
    }
    gx
}

/// 2x2 max pooling over even spatial dimensions. The returned argmax grid
/// records, per output pixel, which of the four inputs won (row-major within
/// the window, first win on ties) for gradient routing.
pub fn max_pool2(x: &TensorGrid) -> Result<(TensorGrid, Vec<u8>)> {
    let (n, c, h, w) = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "max pooling needs even spatial dimensions, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = TensorGrid::zeros(n, c, oh, ow);
    let mut argmax = vec![0u8; n * c * oh * ow];
    let mut idx = 0;
    for ni in 0..n {
        for ci in 0..c {
            let xp = x.plane(ni, ci);
            let op = out.plane_mut(ni, ci);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut which = 0u8;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = xp[(2 * oy + dy) * w + 2 * ox + dx];
                            if v > best {
                                best = v;
                                which = (dy * 2 + dx) as u8;
                            }
                        }
                    }
                    op[oy * ow + ox] = best;
                    argmax[idx] = which;
                    idx += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes pooled gradients back to the winning input positions.
pub fn max_pool2_backward(
    input_shape: (usize, usize, usize, usize),
    argmax: &[u8],
    grad_out: &TensorGrid,
) -> TensorGrid {
    let (n, c, h, w) = input_shape;
    let (_, _, oh, ow) = grad_out.shape();
    let mut gx = TensorGrid::zeros(n, c, h, w);
    let mut idx = 0;
    for ni in 0..n {
        for ci in 0..c {
            let gp = grad_out.plane(ni, ci);
            let gxp = gx.plane_mut(ni, ci);
            for oy in 0..oh {
                for ox in 0..ow {
                    let which = argmax[idx] as usize;
                    let (dy, dx) = (which / 2, which % 2);
                    gxp[(2 * oy + dy) * w + 2 * ox + dx] += gp[oy * ow + ox];
                    idx += 1;
                }
            }
        }
    }
    gx
}

/// Transposed convolution with a 4x4 kernel, stride 2, padding 1: output
/// spatial dimensions are exactly twice the input's. Weights are
/// (in-channels, out-channels, 4, 4).
pub fn transposed_conv2(x: &TensorGrid, w: &TensorGrid, b: &[f64]) -> Result<TensorGrid> {
    let (n, c_in, h, wd) = x.shape();
    let (kc_in, c_out, kh, kw) = w.shape();
    if kc_in != c_in {
        return Err(Error::Dimension(format!(
            "transposed kernel expects {kc_in} input channels, tensor has {c_in}"
        )));
    }
    if kh != 4 || kw != 4 {
        return Err(Error::Dimension(format!(
            "transposed convolution kernel must be 4x4, got {kh}x{kw}"
        )));
    }
    if b.len() != c_out {
        return Err(Error::Dimension(format!(
            "bias length {} does not match {c_out} output channels",
            b.len()
        )));
    }
    let (oh, ow) = (2 * h, 2 * wd);
    let mut out = TensorGrid::zeros(n, c_out, oh, ow);
    let plane = oh * ow;
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, op)| {
            let ni = idx / c_out;
            let co = idx % c_out;
            op.fill(b[co]);
            for ci in 0..c_in {
                let xp = x.plane(ni, ci);
                for ky in 0..4usize {
                    for kx in 0..4usize {
                        let coef = w.at(ci, co, ky, kx);
                        if coef == 0.0 {
                            continue;
                        }
                        // out(2*iy - 1 + ky, 2*ix - 1 + kx) += coef * in(iy, ix)
                        for iy in 0..h {
                            let oy = 2 * iy as i64 - 1 + ky as i64;
                            if oy < 0 || oy >= oh as i64 {
                                continue;
                            }
                            let orow = oy as usize * ow;
                            let xrow = iy * wd;
                            for ix in 0..wd {
                                let ox = 2 * ix as i64 - 1 + kx as i64;
                                if ox < 0 || ox >= ow as i64 {
                                    continue;
                                }
                                op[orow + ox as usize] += coef * xp[xrow + ix];
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of [`transposed_conv2`] with respect to input, weights, bias.
pub fn transposed_conv2_backward(
    x: &TensorGrid,
    w: &TensorGrid,
    grad_out: &TensorGrid,
) -> Result<(TensorGrid, TensorGrid, Vec<f64>)> {
    let (n, c_in, h, wd) = x.shape();
    let (_, c_out, _, _) = w.shape();
    let (oh, ow) = (2 * h, 2 * wd);
    if grad_out.shape() != (n, c_out, oh, ow) {
        return Err(Error::Dimension(format!(
            "grad shape {:?} does not match transposed conv output ({n}, {c_out}, {oh}, {ow})",
            grad_out.shape()
        )));
    }
    let plane = h * wd;
    let mut gx = TensorGrid::zeros(n, c_in, h, wd);
    gx.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, gxp)| {
            let ni = idx / c_in;
            let ci = idx % c_in;
            for co in 0..c_out {
                let gp = grad_out.plane(ni, co);
                for ky in 0..4usize {
                    for kx in 0..4usize {
                        let coef = w.at(ci, co, ky, kx);
                        if coef == 0.0 {
                            continue;
                        }
                        for iy in 0..h {
                            let oy = 2 * iy as i64 - 1 + ky as i64;
                            if oy < 0 || oy >= oh as i64 {
                                continue;
                            }
                            let orow = oy as usize * ow;
                            let grow = iy * wd;
                            for ix in 0..wd {
                                let ox = 2 * ix as i64 - 1 + kx as i64;
                                if ox < 0 || ox >= ow as i64 {
                                    continue;
                                }
                                gxp[grow + ix] += coef * gp[orow + ox as usize];
                            }
                        }
                    }
                }
            }
        });

    let mut gw = TensorGrid::zeros(c_in, c_out, 4, 4);
    let wchunk = c_out * 16;
    gw.data_mut()
        .par_chunks_mut(wchunk)
        .enumerate()
        .for_each(|(ci, gw_chunk)| {
            for co in 0..c_out {
                for ky in 0..4usize {
                    for kx in 0..4usize {
                        let mut acc = 0.0;
                        for ni in 0..n {
                            let xp = x.plane(ni, ci);
                            let gp = grad_out.plane(ni, co);
                            for iy in 0..h {
                                let oy = 2 * iy as i64 - 1 + ky as i64;
                                if oy < 0 || oy >= oh as i64 {
                                    continue;
                                }
                                let orow = oy as usize * ow;
                                let xrow = iy * wd;
                                for ix in 0..wd {
                                    let ox = 2 * ix as i64 - 1 + kx as i64;
                                    if ox < 0 || ox >= ow as i64 {
                                        continue;
                                    }
                                    acc += xp[xrow + ix] * gp[orow + ox as usize];
                                }
                            }
                        }
                        gw_chunk[(co * 4 + ky) * 4 + kx] = acc;
                    }
                }
            }
        });

    let gb: Vec<f64> = (0..c_out)
        .into_par_iter()
        .map(|co| {
            let mut acc = 0.0;
            for ni in 0..n {
                for v in grad_out.plane(ni, co) {
                    acc += v;
                }
            }
            acc
        })
        .collect();

    Ok((gx, gw, gb))
}

/// Elementwise logistic sigmoid.
pub fn sigmoid(x: &TensorGrid) -> TensorGrid {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    out
}

/// Gradient of [`sigmoid`] given the forward output.
pub fn sigmoid_backward(y: &TensorGrid, grad_out: &TensorGrid) -> TensorGrid {
    let mut gx = grad_out.clone();
    for (g, v) in gx.data_mut().iter_mut().zip(y.data()) {
        *g *= v * (1.0 - v);
    }
    gx
}

/// Concatenates two grids along the channel axis.
pub fn concat_channels(a: &TensorGrid, b: &TensorGrid) -> Result<TensorGrid> {
    let (n, ca, h, w) = a.shape();
    let (nb, cb, hb, wb) = b.shape();
    if n != nb || h != hb || w != wb {
        return Err(Error::Dimension(format!(
            "concat shapes {:?} and {:?} differ outside the channel axis",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = TensorGrid::zeros(n, ca + cb, h, w);
    for ni in 0..n {
        for ci in 0..ca {
            out.plane_mut(ni, ci).copy_from_slice(a.plane(ni, ci));
        }
        for ci in 0..cb {
            out.plane_mut(ni, ca + ci).copy_from_slice(b.plane(ni, ci));
        }
    }
    Ok(out)
}

/// Splits a channel-concatenated gradient back into the two parts.
pub fn split_channels(grad: &TensorGrid, ca: usize) -> (TensorGrid, TensorGrid) {
    let (n, c, h, w) = grad.shape();
    let cb = c - ca;
    let mut ga = TensorGrid::zeros(n, ca, h, w);
    let mut gb = TensorGrid::zeros(n, cb, h, w);
    for ni in 0..n {
        for ci in 0..ca {
            ga.plane_mut(ni, ci).copy_from_slice(grad.plane(ni, ci));
        }
        for ci in 0..cb {
            gb.plane_mut(ni, ci).copy_from_slice(grad.plane(ni, ca + ci));
        }
    }
    (ga, gb)
}
