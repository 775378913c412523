use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scalar::{gemm, Mat};
use super::{Gradients, InputBatch, QNetworkParams, Scalar, BN_EPSILON, INPUT_CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; dropout drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
    /// Running statistics in batch norm, no dropout.
    Infer,
}

/// Per conv stage `(mean, unbiased variance)` of one train-mode batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats<T> {
    pub stages: Vec<(Vec<T>, Vec<T>)>,
}

#[derive(Debug, Clone)]
pub struct LossAndGrads<T> {
    pub loss: T,
    pub grads: Gradients<T>,
    /// Present in train mode.
    pub bn_stats: Option<BatchNormStats<T>>,
    /// Q-values of the pass, `[batch, actions]`.
    pub q: Vec<T>,
}

struct StageCache<T> {
    /// im2col matrix `[in_ch * k * k, batch * side_out^2]`.
    cols: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Post-ReLU output `[filters, batch, side_out, side_out]`.
    out: Vec<T>,
    side_in: usize,
    side_out: usize,
}

struct Cache<T> {
    stages: Vec<StageCache<T>>,
    flat: Vec<T>,
    hidden: Vec<T>,
    mask: Option<Vec<T>>,
    dropped: Vec<T>,
    q: Vec<T>,
    bn_stats: Option<BatchNormStats<T>>,
}

fn check_shapes<T: Scalar>(params: &QNetworkParams<T>, batch: &InputBatch<T>) -> Result<()> {
    if batch.cells != params.arch.input_cells {
        return Err(Error::Shape(format!(
            "input side {} does not match network input {}",
            batch.cells, params.arch.input_cells
        )));
    }
    if batch.batch == 0 || batch.data.len() != batch.batch * INPUT_CHANNELS * batch.cells * batch.cells {
        return Err(Error::Shape("malformed input batch".into()));
    }
    Ok(())
}

/// Q-values `[batch, actions]`, row-major.
pub fn forward<T: Scalar>(params: &QNetworkParams<T>, batch: &InputBatch<T>, mode: Mode) -> Result<Vec<T>> {
    check_shapes(params, batch)?;
    Ok(run_forward(params, batch, mode).q)
}

/// Which ReLU units fire, conv stages first and then the hidden layer.
/// The loss is smooth in the parameters wherever this pattern is constant.
pub fn relu_pattern<T: Scalar>(params: &QNetworkParams<T>, batch: &InputBatch<T>, mode: Mode) -> Result<Vec<bool>> {
    check_shapes(params, batch)?;
    let cache = run_forward(params, batch, mode);
    let zero = T::zero();
    Ok(cache
        .stages
        .iter()
        .flat_map(|s| s.out.iter())
        .chain(&cache.hidden)
        .map(|&v| v > zero)
        .collect())
}

/// Mean squared error between `targets` and the Q-values of the selected
/// actions, with gradients for every trainable tensor.
pub fn loss_and_grads<T: Scalar>(
    params: &QNetworkParams<T>,
    batch: &InputBatch<T>,
    actions: &[usize],
    targets: &[T],
    mode: Mode,
) -> Result<LossAndGrads<T>> {
    check_shapes(params, batch)?;
    let b = batch.batch;
    let na = params.arch.actions;
    if actions.len() != b || targets.len() != b {
        return Err(Error::Shape(format!(
            "batch of {b} needs {b} actions and targets, got {} and {}",
            actions.len(),
            targets.len()
        )));
    }
    if let Some(a) = actions.iter().find(|&&a| a >= na) {
        return Err(Error::Shape(format!("action index {a} out of range")));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::Shape("non-finite target".into()));
    }
    let mut cache = run_forward(params, batch, mode);
    let inv_b = T::one() / T::from_f64(b as f64);
    let two = T::from_f64(2.0);
    let mut loss = T::zero();
    let mut dq = vec![T::zero(); b * na];
    for i in 0..b {
        let err = targets[i] - cache.q[i * na + actions[i]];
        loss = loss + err * err * inv_b;
        dq[i * na + actions[i]] = -two * err * inv_b;
    }
    let grads = backward(params, &cache, &dq, batch.batch, mode);
    Ok(LossAndGrads {
        loss,
        grads,
        bn_stats: cache.bn_stats.take(),
        q: std::mem::take(&mut cache.q),
    })
}

/// `[batch, channel, h, w]` to `[channel, batch, h, w]`.
fn to_channel_major<T: Scalar>(batch: &InputBatch<T>) -> Vec<T> {
    let plane = batch.cells * batch.cells;
    let mut out = vec![T::zero(); batch.data.len()];
    for b in 0..batch.batch {
        for c in 0..INPUT_CHANNELS {
            let src = &batch.data[(b * INPUT_CHANNELS + c) * plane..][..plane];
            out[(c * batch.batch + b) * plane..][..plane].copy_from_slice(src);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    channels: usize,
    batch: usize,
    side: usize,
    k: usize,
    stride: usize,
    side_out: usize,
    cols: &mut Vec<T>,
) {
    let n = batch * side_out * side_out;
    cols.clear();
    cols.resize(channels * k * k * n, T::zero());
    for c in 0..channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst_row = &mut cols[row * n..(row + 1) * n];
                for b in 0..batch {
                    let plane = &x[(c * batch + b) * side * side..][..side * side];
                    for oh in 0..side_out {
                        let src = &plane[(oh * stride + ki) * side + kj..];
                        let dst = &mut dst_row[(b * side_out + oh) * side_out..][..side_out];
                        if stride == 1 {
                            dst.copy_from_slice(&src[..side_out]);
                        } else {
                            for (ow, d) in dst.iter_mut().enumerate() {
                                *d = src[ow * stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    channels: usize,
    batch: usize,
    side: usize,
    k: usize,
    stride: usize,
    side_out: usize,
) -> Vec<T> {
    let n = batch * side_out * side_out;
    let mut x = vec![T::zero(); channels * batch * side * side];
    for c in 0..channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src_row = &cols[row * n..(row + 1) * n];
                for b in 0..batch {
                    let plane = &mut x[(c * batch + b) * side * side..][..side * side];
                    for oh in 0..side_out {
                        let base = (oh * stride + ki) * side + kj;
                        let src = &src_row[(b * side_out + oh) * side_out..][..side_out];
                        for (ow, &v) in src.iter().enumerate() {
                            plane[base + ow * stride] = plane[base + ow * stride] + v;
                        }
                    }
                }
            }
        }
    }
    x
}

fn run_forward<T: Scalar>(params: &QNetworkParams<T>, batch: &InputBatch<T>, mode: Mode) -> Cache<T> {
    let b = batch.batch;
    let train = matches!(mode, Mode::Train { .. });
    let eps = T::from_f64(BN_EPSILON);
    let mut x = to_channel_major(batch);
    let mut side = batch.cells;
    let mut channels = INPUT_CHANNELS;
    let mut stages = Vec::with_capacity(params.convs.len());
    let mut stats = Vec::new();

    for stage in &params.convs {
        let k = stage.spec.kernel;
        let s = stage.spec.stride;
        let f = stage.spec.filters;
        let side_out = (side - k) / s + 1;
        let n = b * side_out * side_out;
        let kk = channels * k * k;
        let mut cols = Vec::new();
        im2col(&x, channels, b, side, k, s, side_out, &mut cols);
        let mut z = vec![T::zero(); f * n];
        gemm(Mat::rm(&stage.weight, f, kk), Mat::rm(&cols, kk, n), T::zero(), &mut z);

        let nf = T::from_f64(n as f64);
        let mut inv_std = vec![T::zero(); f];
        let mut means = vec![T::zero(); f];
        let mut vars = vec![T::zero(); f];
        for fi in 0..f {
            let row = &mut z[fi * n..(fi + 1) * n];
            let bias = stage.bias[fi];
            row.iter_mut().for_each(|v| *v = *v + bias);
            let (mean, var) = if train {
                let mean = row.iter().copied().sum::<T>() / nf;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
                means[fi] = mean;
                vars[fi] = if n > 1 {
                    var * nf / T::from_f64((n - 1) as f64)
                } else {
                    var
                };
                (mean, var)
            } else {
                (stage.running_mean[fi], stage.running_var[fi])
            };
            inv_std[fi] = T::one() / (var + eps).sqrt();
            let is = inv_std[fi];
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
        }
        let xhat = z;
        let mut out = vec![T::zero(); f * n];
        for fi in 0..f {
            let (g, beta) = (stage.bn_scale[fi], stage.bn_shift[fi]);
            for (o, &xh) in out[fi * n..(fi + 1) * n].iter_mut().zip(&xhat[fi * n..(fi + 1) * n]) {
                *o = (g * xh + beta).max(T::zero());
            }
        }
        if train {
            stats.push((means, vars));
        }
        x = out.clone();
        stages.push(StageCache {
            cols,
            xhat,
            inv_std,
            out,
            side_in: side,
            side_out,
        });
        side = side_out;
        channels = f;
    }

    // [channels, batch, plane] -> [batch, channels * plane]
    let plane = side * side;
    let d = channels * plane;
    let mut flat = vec![T::zero(); b * d];
    for c in 0..channels {
        for bi in 0..b {
            flat[bi * d + c * plane..][..plane].copy_from_slice(&x[(c * b + bi) * plane..][..plane]);
        }
    }

    let hid = &params.hidden;
    let u = hid.outputs;
    let mut hidden = vec![T::zero(); b * u];
    gemm(
        Mat::rm(&flat, b, d),
        Mat::rm_t(&hid.weight, d, u),
        T::zero(),
        &mut hidden,
    );
    for row in hidden.chunks_mut(u) {
        for (h, &bias) in row.iter_mut().zip(&hid.bias) {
            *h = (*h + bias).max(T::zero());
        }
    }

    let p = params.arch.dropout;
    let mask = match mode {
        Mode::Train { dropout_seed } if p > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let keep = T::from_f64(1.0 / (1.0 - p));
            Some(
                (0..b * u)
                    .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
                    .collect::<Vec<T>>(),
            )
        }
        _ => None,
    };
    let dropped = match &mask {
        Some(m) => hidden.iter().zip(m).map(|(&h, &m)| h * m).collect(),
        None => hidden.clone(),
    };

    let na = params.arch.actions;
    let mut value = vec![T::zero(); b];
    gemm(
        Mat::rm(&dropped, b, u),
        Mat::rm_t(&params.value.weight, u, 1),
        T::zero(),
        &mut value,
    );
    let mut adv = vec![T::zero(); b * na];
    gemm(
        Mat::rm(&dropped, b, u),
        Mat::rm_t(&params.advantage.weight, u, na),
        T::zero(),
        &mut adv,
    );
    let inv_na = T::one() / T::from_f64(na as f64);
    let mut q = vec![T::zero(); b * na];
    for bi in 0..b {
        let v = value[bi] + params.value.bias[0];
        let a = &mut adv[bi * na..(bi + 1) * na];
        for (ai, av) in a.iter_mut().enumerate() {
            *av = *av + params.advantage.bias[ai];
        }
        let mean = a.iter().copied().sum::<T>() * inv_na;
        for ai in 0..na {
            q[bi * na + ai] = v + a[ai] - mean;
        }
    }

    Cache {
        stages,
        flat,
        hidden,
        mask,
        dropped,
        q,
        bn_stats: train.then_some(BatchNormStats { stages: stats }),
    }
}

fn backward<T: Scalar>(params: &QNetworkParams<T>, cache: &Cache<T>, dq: &[T], b: usize, mode: Mode) -> Gradients<T> {
    let train = matches!(mode, Mode::Train { .. });
    let na = params.arch.actions;
    let u = params.hidden.outputs;
    let d = params.hidden.inputs;
    let inv_na = T::one() / T::from_f64(na as f64);

    // Dueling combine.
    let mut dv = vec![T::zero(); b];
    let mut da = vec![T::zero(); b * na];
    for bi in 0..b {
        let row = &dq[bi * na..(bi + 1) * na];
        let s = row.iter().copied().sum::<T>();
        dv[bi] = s;
        for ai in 0..na {
            da[bi * na + ai] = row[ai] - s * inv_na;
        }
    }

    let mut g_value_w = vec![T::zero(); u];
    gemm(
        Mat::rm_t(&dv, 1, b),
        Mat::rm(&cache.dropped, b, u),
        T::zero(),
        &mut g_value_w,
    );
    let g_value_b = vec![dv.iter().copied().sum::<T>()];
    let mut g_adv_w = vec![T::zero(); na * u];
    gemm(
        Mat::rm_t(&da, na, b),
        Mat::rm(&cache.dropped, b, u),
        T::zero(),
        &mut g_adv_w,
    );
    let mut g_adv_b = vec![T::zero(); na];
    for row in da.chunks(na) {
        for (g, &v) in g_adv_b.iter_mut().zip(row) {
            *g = *g + v;
        }
    }

    let mut dh = vec![T::zero(); b * u];
    gemm(
        Mat::rm(&dv, b, 1),
        Mat::rm(&params.value.weight, 1, u),
        T::zero(),
        &mut dh,
    );
    gemm(
        Mat::rm(&da, b, na),
        Mat::rm(&params.advantage.weight, na, u),
        T::one(),
        &mut dh,
    );
    if let Some(mask) = &cache.mask {
        dh.iter_mut().zip(mask).for_each(|(g, &m)| *g = *g * m);
    }
    dh.iter_mut().zip(&cache.hidden).for_each(|(g, &h)| {
        if h <= T::zero() {
            *g = T::zero();
        }
    });

    let mut g_hid_w = vec![T::zero(); u * d];
    gemm(
        Mat::rm_t(&dh, u, b),
        Mat::rm(&cache.flat, b, d),
        T::zero(),
        &mut g_hid_w,
    );
    let mut g_hid_b = vec![T::zero(); u];
    for row in dh.chunks(u) {
        for (g, &v) in g_hid_b.iter_mut().zip(row) {
            *g = *g + v;
        }
    }
    let mut dflat = vec![T::zero(); b * d];
    gemm(
        Mat::rm(&dh, b, u),
        Mat::rm(&params.hidden.weight, u, d),
        T::zero(),
        &mut dflat,
    );

    // [batch, channels * plane] -> [channels, batch, plane]
    let last = cache.stages.last().expect("at least one conv stage");
    let plane = last.side_out * last.side_out;
    let channels = d / plane;
    let mut dx = vec![T::zero(); b * d];
    for c in 0..channels {
        for bi in 0..b {
            dx[(c * b + bi) * plane..][..plane].copy_from_slice(&dflat[bi * d + c * plane..][..plane]);
        }
    }

    let mut conv_grads: Vec<[Vec<T>; 4]> = Vec::with_capacity(params.convs.len());
    for (l, (stage, sc)) in params.convs.iter().zip(&cache.stages).enumerate().rev() {
        let f = stage.spec.filters;
        let k = stage.spec.kernel;
        let n = b * sc.side_out * sc.side_out;
        let kk = stage.in_channels * k * k;
        let nf = T::from_f64(n as f64);

        let mut dz = dx;
        dz.iter_mut().zip(&sc.out).for_each(|(g, &o)| {
            if o <= T::zero() {
                *g = T::zero();
            }
        });
        let mut g_scale = vec![T::zero(); f];
        let mut g_shift = vec![T::zero(); f];
        let mut g_bias = vec![T::zero(); f];
        for fi in 0..f {
            let dy = &mut dz[fi * n..(fi + 1) * n];
            let xh = &sc.xhat[fi * n..(fi + 1) * n];
            let sum_dy = dy.iter().copied().sum::<T>();
            let sum_dy_xh = dy.iter().zip(xh).map(|(&g, &x)| g * x).sum::<T>();
            g_scale[fi] = sum_dy_xh;
            g_shift[fi] = sum_dy;
            let coef = stage.bn_scale[fi] * sc.inv_std[fi];
            if train {
                let mean_dy = sum_dy / nf;
                let mean_dy_xh = sum_dy_xh / nf;
                for (g, &x) in dy.iter_mut().zip(xh) {
                    *g = coef * (*g - mean_dy - x * mean_dy_xh);
                }
            } else {
                dy.iter_mut().for_each(|g| *g = *g * coef);
            }
            g_bias[fi] = dy.iter().copied().sum::<T>();
        }
        let mut g_w = vec![T::zero(); f * kk];
        gemm(Mat::rm(&dz, f, n), Mat::rm_t(&sc.cols, n, kk), T::zero(), &mut g_w);
        dx = if l > 0 {
            let mut dcols = vec![T::zero(); kk * n];
            gemm(
                Mat::rm_t(&stage.weight, kk, f),
                Mat::rm(&dz, f, n),
                T::zero(),
                &mut dcols,
            );
            col2im(
                &dcols,
                stage.in_channels,
                b,
                sc.side_in,
                k,
                stage.spec.stride,
                sc.side_out,
            )
        } else {
            Vec::new()
        };
        conv_grads.push([g_w, g_bias, g_scale, g_shift]);
    }
    conv_grads.reverse();

    let mut tensors = Vec::with_capacity(conv_grads.len() * 4 + 6);
    for g in conv_grads {
        tensors.extend(g);
    }
    tensors.extend([g_hid_w, g_hid_b, g_value_w, g_value_b, g_adv_w, g_adv_b]);
    Gradients { tensors }
}
