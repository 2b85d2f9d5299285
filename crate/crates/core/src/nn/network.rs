// SPDX-License-Identifier: Apache-2.0

//! Forward and backward passes for [`Architecture`]s.
//!
//! A network is lowered to a flat op sequence over per-example activation
//! buffers. `forward_cached` records what each op needs for its backward
//! step; `backward` walks the sequence in reverse.

use super::model::{Architecture, ModelWeights};
use super::tensor::{matmul, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
enum Op {
    Linear { layer: usize },
    Conv { layer: usize, dims: [usize; 3] },
    Relu,
    MaxPool { dims: [usize; 3] },
}

fn ops(arch: &Architecture) -> Vec<Op> {
    match arch {
        Architecture::Mlp { hidden, .. } => {
            let mut ops = Vec::new();
            for layer in 0..hidden.len() {
                ops.push(Op::Linear { layer });
                ops.push(Op::Relu);
            }
            ops.push(Op::Linear { layer: hidden.len() });
            ops
        }
        Architecture::Cnn2 {
            channels,
            height,
            width,
            conv1,
            kernel,
            conv2,
            ..
        } => {
            let (h1c, w1c) = (height + 1 - kernel, width + 1 - kernel);
            let (h1, w1) = (h1c / 2, w1c / 2);
            let (h2c, w2c) = (h1 + 1 - kernel, w1 + 1 - kernel);
            vec![
                Op::Conv {
                    layer: 0,
                    dims: [*channels, *height, *width],
                },
                Op::Relu,
                Op::MaxPool {
                    dims: [*conv1, h1c, w1c],
                },
                Op::Conv {
                    layer: 1,
                    dims: [*conv1, h1, w1],
                },
                Op::Relu,
                Op::MaxPool {
                    dims: [*conv2, h2c, w2c],
                },
                Op::Linear { layer: 2 },
                Op::Relu,
                Op::Linear { layer: 3 },
            ]
        }
    }
}

#[derive(Debug, Clone)]
enum Saved<T> {
    Input(Vec<T>),
    Cols(Vec<T>),
    Positive(Vec<bool>),
    Argmax(Vec<u32>),
}

/// Activations recorded by [`forward_cached`], consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f32> {
    arch: Architecture,
    batch: usize,
    saved: Vec<Saved<T>>,
    kink_margin: f64,
}

impl<T> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Smallest distance of any ReLU input from zero or any max-pool winner
    /// from its runner-up. Finite differences are unreliable when a step of
    /// this size crosses a kink.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }
}

fn check_batch<T: Scalar>(model: &ModelWeights<T>, batch: &Tensor<T>) -> Result<usize> {
    let want = model.architecture().input_len();
    if batch.shape().is_empty() || batch.row_len() != want {
        return Err(Error::Shape(format!(
            "batch shape {:?} does not match model input of {want} features",
            batch.shape()
        )));
    }
    Ok(batch.rows())
}

/// Raw logits, shape `batch x classes`.
pub fn forward<T: Scalar>(model: &ModelWeights<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
    run_forward(model, batch, false).map(|(logits, _)| logits)
}

pub fn forward_cached<T: Scalar>(model: &ModelWeights<T>, batch: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
    run_forward(model, batch, true)
}

fn run_forward<T: Scalar>(
    model: &ModelWeights<T>,
    batch: &Tensor<T>,
    record: bool,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    let n = check_batch(model, batch)?;
    let arch = model.architecture();
    let layers = model.layers();
    let mut act: Vec<T> = batch.data().to_vec();
    let mut saved = Vec::new();
    let mut margin = f64::INFINITY;

    for op in ops(arch) {
        match op {
            Op::Linear { layer } => {
                let w = &layers[layer].weight;
                let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
                let mut out = vec![T::zero(); n * out_dim];
                for row in out.chunks_exact_mut(out_dim) {
                    row.copy_from_slice(layers[layer].bias.data());
                }
                matmul(
                    MatRef::new(&act, n, in_dim),
                    MatRef::transpose_of(w.data(), out_dim, in_dim),
                    T::one(),
                    &mut out,
                );
                if record {
                    saved.push(Saved::Input(std::mem::replace(&mut act, out)));
                } else {
                    act = out;
                }
            }
            Op::Conv { layer, dims } => {
                let (out, cols) = conv_forward(&act, n, dims, &layers[layer].weight, &layers[layer].bias);
                act = out;
                if record {
                    saved.push(Saved::Cols(cols));
                }
            }
            Op::Relu => {
                let mut positive = Vec::with_capacity(if record { act.len() } else { 0 });
                for v in act.iter_mut() {
                    if record {
                        margin = margin.min(v.as_f64().abs());
                        positive.push(*v > T::zero());
                    }
                    if *v <= T::zero() {
                        *v = T::zero();
                    }
                }
                if record {
                    saved.push(Saved::Positive(positive));
                }
            }
            Op::MaxPool { dims } => {
                let (out, argmax, gap) = maxpool_forward(&act, n, dims, record);
                act = out;
                margin = margin.min(gap);
                if record {
                    saved.push(Saved::Argmax(argmax));
                }
            }
        }
    }

    if act.iter().any(|v| !v.is_finite()) {
        return Err(Error::Internal("non-finite logits".into()));
    }
    let logits = Tensor::new(vec![n, arch.classes()], act)?;
    Ok((
        logits,
        ForwardCache {
            arch: arch.clone(),
            batch: n,
            saved,
            kink_margin: margin,
        },
    ))
}

/// Gradient of `sum(upstream * logits)` with respect to every parameter.
pub fn backward<T: Scalar>(
    model: &ModelWeights<T>,
    cache: &ForwardCache<T>,
    upstream: &Tensor<T>,
) -> Result<ModelWeights<T>> {
    let arch = model.architecture();
    if &cache.arch != arch {
        return Err(Error::Internal(
            "activation cache belongs to a different architecture".into(),
        ));
    }
    let n = cache.batch;
    if upstream.shape() != [n, arch.classes()] {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match logits [{n}, {}]",
            upstream.shape(),
            arch.classes()
        )));
    }
    let op_list = ops(arch);
    if cache.saved.len() != op_list.len() {
        return Err(Error::Internal("activation cache is incomplete".into()));
    }

    let mut grads = model.zeros_like();
    let mut delta: Vec<T> = upstream.data().to_vec();
    let layers = model.layers();

    for (pos, (op, saved)) in op_list.iter().zip(&cache.saved).enumerate().rev() {
        let need_input_grad = pos > 0;
        match (*op, saved) {
            (Op::Linear { layer }, Saved::Input(input)) => {
                let w = &layers[layer].weight;
                let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
                let g = &mut grads.layers_mut()[layer];
                matmul(
                    MatRef::transpose_of(&delta, n, out_dim),
                    MatRef::new(input, n, in_dim),
                    T::zero(),
                    g.weight.data_mut(),
                );
                let db = g.bias.data_mut();
                for row in delta.chunks_exact(out_dim) {
                    for (b, &d) in db.iter_mut().zip(row) {
                        *b = *b + d;
                    }
                }
                if need_input_grad {
                    let mut dx = vec![T::zero(); n * in_dim];
                    matmul(
                        MatRef::new(&delta, n, out_dim),
                        MatRef::new(w.data(), out_dim, in_dim),
                        T::zero(),
                        &mut dx,
                    );
                    delta = dx;
                }
            }
            (Op::Conv { layer, dims }, Saved::Cols(cols)) => {
                let w = &layers[layer].weight;
                let g = &mut grads.layers_mut()[layer];
                delta = conv_backward(&delta, cols, n, dims, w, g, need_input_grad);
            }
            (Op::Relu, Saved::Positive(positive)) => {
                for (d, &p) in delta.iter_mut().zip(positive) {
                    if !p {
                        *d = T::zero();
                    }
                }
            }
            (Op::MaxPool { dims }, Saved::Argmax(argmax)) => {
                let [c, h, w] = dims;
                let mut dx = vec![T::zero(); n * c * h * w];
                for (&src, &d) in argmax.iter().zip(&delta) {
                    dx[src as usize] = dx[src as usize] + d;
                }
                delta = dx;
            }
            _ => return Err(Error::Internal("activation cache does not match op sequence".into())),
        }
    }
    Ok(grads)
}

/// Recomputes the forward pass and returns parameter gradients.
pub fn backward_from_input<T: Scalar>(
    model: &ModelWeights<T>,
    batch: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<ModelWeights<T>> {
    let (_, cache) = forward_cached(model, batch)?;
    backward(model, &cache, upstream)
}

fn conv_geometry<T: Scalar>(dims: [usize; 3], weight: &Tensor<T>) -> (usize, usize, usize, usize, usize) {
    let [_, h, w] = dims;
    let (cout, k) = (weight.shape()[0], weight.shape()[2]);
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let patch = weight.shape()[1] * k * k;
    (cout, k, ho, wo, patch)
}

fn im2col<T: Scalar>(input: &[T], dims: [usize; 3], k: usize, cols: &mut [T]) {
    let [c, h, w] = dims;
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for y in 0..ho {
                    let src = &input[(ci * h + y + ky) * w + kx..][..wo];
                    dst[y * wo..(y + 1) * wo].copy_from_slice(src);
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], dims: [usize; 3], k: usize, out: &mut [T]) {
    let [c, h, w] = dims;
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for y in 0..ho {
                    let dst = &mut out[(ci * h + y + ky) * w + kx..][..wo];
                    for (d, &s) in dst.iter_mut().zip(&src[y * wo..(y + 1) * wo]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Scalar>(
    input: &[T],
    n: usize,
    dims: [usize; 3],
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> (Vec<T>, Vec<T>) {
    let (cout, k, ho, wo, patch) = conv_geometry(dims, weight);
    let in_len = dims.iter().product::<usize>();
    let spatial = ho * wo;
    let mut cols = vec![T::zero(); n * patch * spatial];
    let mut out = vec![T::zero(); n * cout * spatial];
    for b in 0..n {
        let col_b = &mut cols[b * patch * spatial..(b + 1) * patch * spatial];
        im2col(&input[b * in_len..(b + 1) * in_len], dims, k, col_b);
        let out_b = &mut out[b * cout * spatial..(b + 1) * cout * spatial];
        for (row, &bv) in out_b.chunks_exact_mut(spatial).zip(bias.data()) {
            row.fill(bv);
        }
        matmul(
            MatRef::new(weight.data(), cout, patch),
            MatRef::new(col_b, patch, spatial),
            T::one(),
            out_b,
        );
    }
    (out, cols)
}

fn conv_backward<T: Scalar>(
    delta: &[T],
    cols: &[T],
    n: usize,
    dims: [usize; 3],
    weight: &Tensor<T>,
    grad: &mut super::model::Layer<T>,
    need_input_grad: bool,
) -> Vec<T> {
    let (cout, k, ho, wo, patch) = conv_geometry(dims, weight);
    let spatial = ho * wo;
    let in_len = dims.iter().product::<usize>();
    let mut dx = if need_input_grad {
        vec![T::zero(); n * in_len]
    } else {
        Vec::new()
    };
    let mut dcols = vec![T::zero(); patch * spatial];
    for b in 0..n {
        let d_b = &delta[b * cout * spatial..(b + 1) * cout * spatial];
        let col_b = &cols[b * patch * spatial..(b + 1) * patch * spatial];
        matmul(
            MatRef::new(d_b, cout, spatial),
            MatRef::transpose_of(col_b, patch, spatial),
            T::one(),
            grad.weight.data_mut(),
        );
        for (gb, row) in grad.bias.data_mut().iter_mut().zip(d_b.chunks_exact(spatial)) {
            *gb = row.iter().fold(*gb, |acc, &v| acc + v);
        }
        if need_input_grad {
            matmul(
                MatRef::transpose_of(weight.data(), cout, patch),
                MatRef::new(d_b, cout, spatial),
                T::zero(),
                &mut dcols,
            );
            col2im_add(&dcols, dims, k, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    dx
}

/// 2x2 stride-2 max pooling; ties go to the first element in row-major order.
fn maxpool_forward<T: Scalar>(input: &[T], n: usize, dims: [usize; 3], record: bool) -> (Vec<T>, Vec<u32>, f64) {
    let [c, h, w] = dims;
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(if record { n * c * ho * wo } else { 0 });
    let mut gap = f64::INFINITY;
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..ho {
            for x in 0..wo {
                let idx = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = idx[0];
                for &i in &idx[1..] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                if record {
                    // Windows that are all zero (post-ReLU) cannot switch
                    // winners without crossing a ReLU kink, which is tracked
                    // separately.
                    let top = input[best].as_f64();
                    for &i in idx.iter().filter(|_| top > 0.0) {
                        if i != best {
                            gap = gap.min(top - input[i].as_f64());
                        }
                    }
                    argmax.push(best as u32);
                }
                out.push(input[best]);
            }
        }
    }
    (out, argmax, gap)
}
