//! Forward and backward signal flow over the layer DAG.
//!
//! A layer waits until every incoming connection has delivered a signal,
//! averages the (shape-adjusted) signals, applies `weights/bias/activation`
//! and passes the result on, resized for each receiver by a quasi-identity
//! projection. The recursion described for the the propagation phase is
//! realized as a deterministic topological traversal; distinct graph copies
//! can run on distinct threads, one pass holds no shared state.
//!
//! Convolutions are lowered to matrix products over 3x3 patches (im2col), so
//! the dense backward path covers them too.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{LayerGraph, LayerId, LayerKind};
use crate::tensor::{
    activate, activation_grad_mask, project_channels, project_channels_backward, project_rows,
    project_rows_backward, Activation, ImageBatch, Matrix,
};

/// A payload traveling along an edge: feature-major matrix or image batch.
#[derive(Debug, Clone)]
pub enum Payload {
    Flat(Matrix),
    Image(ImageBatch),
}

impl Payload {
    pub fn batch(&self) -> usize {
        match self {
            Payload::Flat(m) => m.cols(),
            Payload::Image(i) => i.batch(),
        }
    }

    pub fn as_flat(&self) -> Matrix {
        match self {
            Payload::Flat(m) => m.clone(),
            Payload::Image(i) => i.flatten(),
        }
    }
}

/// An external input signal addressed to one input layer.
#[derive(Debug, Clone)]
pub struct Signal {
    pub origin: LayerId,
    pub payload: Payload,
}

impl Signal {
    pub fn new(origin: LayerId, payload: Payload) -> Signal {
        Signal { origin, payload }
    }
}

#[derive(Debug, Clone)]
struct LayerPass {
    /// Averaged, shape-adjusted input.
    avg_input: Payload,
    /// Pre-activation; conv layers store it as `out_c x (B*H*W)`.
    pre_activation: Option<Matrix>,
    /// Emitted activation.
    activation: Payload,
}

/// Per-pass buffers kept so a backward pass can follow the forward pass that
/// produced it. Dropped (cleared) when the pass is finished.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    per_layer: BTreeMap<LayerId, LayerPass>,
    order: Vec<LayerId>,
    probs: Matrix,
    batch: usize,
}

impl ForwardCache {
    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Emitted activation of a layer during this pass.
    pub fn activation(&self, id: LayerId) -> Option<&Payload> {
        self.per_layer.get(&id).map(|p| &p.activation)
    }

    /// Averaged input of a layer during this pass.
    pub fn averaged_input(&self, id: LayerId) -> Option<&Payload> {
        self.per_layer.get(&id).map(|p| &p.avg_input)
    }
}

/// Per-layer parameter gradients, shape-matched to the owning layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weights: Matrix,
    pub d_bias: Matrix,
}

#[derive(Debug, Clone, Default)]
pub struct GradientStore {
    grads: BTreeMap<LayerId, LayerGrads>,
}

impl GradientStore {
    pub fn get(&self, id: LayerId) -> Option<&LayerGrads> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LayerId, &LayerGrads)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Runs a forward pass and returns the output class probabilities
/// (`classes x batch`, softmax columns).
pub fn forward(g: &LayerGraph, inputs: &[Signal]) -> Result<Matrix> {
    Ok(forward_cached(g, inputs)?.probs)
}

/// Forward pass that keeps the per-layer buffers needed by [`backward`].
pub fn forward_cached(g: &LayerGraph, inputs: &[Signal]) -> Result<ForwardCache> {
    let order = g.topo_order()?;
    let mut external: BTreeMap<LayerId, &Payload> = BTreeMap::new();
    for s in inputs {
        if !g.inputs().contains(&s.origin) {
            return Err(Error::InvalidArgument(format!(
                "signal addressed to {} which is not an input layer",
                s.origin
            )));
        }
        if external.insert(s.origin, &s.payload).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate signal for input {}",
                s.origin
            )));
        }
    }
    let batch = match inputs.first() {
        Some(s) => s.payload.batch(),
        None => return Err(Error::Deadlock("no input signals provided".into())),
    };
    for s in inputs {
        if s.payload.batch() != batch {
            return Err(Error::Numeric(
                "shape mismatch: input signals disagree on batch size".into(),
            ));
        }
    }

    let mut per_layer: BTreeMap<LayerId, LayerPass> = BTreeMap::new();
    for &id in &order {
        let layer = g.layer(id)?;
        let pass = match layer.kind {
            LayerKind::InputDense { features } => {
                let payload = *external
                    .get(&id)
                    .ok_or_else(|| Error::Deadlock(format!("missing input signal for {id}")))?;
                let m = match payload {
                    Payload::Flat(m) => m.clone(),
                    Payload::Image(_) => {
                        return Err(Error::Numeric(format!(
                            "shape mismatch: dense input {id} fed an image batch"
                        )))
                    }
                };
                if m.rows() != features {
                    return Err(Error::Numeric(format!(
                        "shape mismatch: input {id} expects {features} features, got {}",
                        m.rows()
                    )));
                }
                LayerPass {
                    avg_input: Payload::Flat(m.clone()),
                    pre_activation: None,
                    activation: Payload::Flat(m),
                }
            }
            LayerKind::InputConv { channels } => {
                let payload = *external
                    .get(&id)
                    .ok_or_else(|| Error::Deadlock(format!("missing input signal for {id}")))?;
                let img = match payload {
                    Payload::Image(i) => i.clone(),
                    Payload::Flat(_) => {
                        return Err(Error::Numeric(format!(
                            "shape mismatch: conv input {id} fed a flat matrix"
                        )))
                    }
                };
                let (h, w) = g.image_hw().expect("conv input implies image dims");
                if img.channels() != channels || img.height() != h || img.width() != w {
                    return Err(Error::Numeric(format!(
                        "shape mismatch: conv input {id} expects {channels}x{h}x{w}, got {}x{}x{}",
                        img.channels(),
                        img.height(),
                        img.width()
                    )));
                }
                conv_pass(layer.weights.as_ref().unwrap(), layer.bias.as_ref().unwrap(), img)
            }
            _ => {
                // Hidden or output layer: gather, adjust, average.
                if layer.incoming.is_empty() {
                    return Err(Error::Deadlock(format!("layer {id} has no incoming signals")));
                }
                let mut senders = layer.incoming.clone();
                senders.sort();
                let n = senders.len() as f64;
                if layer.kind.is_conv() {
                    let in_c = layer.fan_in().unwrap();
                    let mut avg: Option<ImageBatch> = None;
                    for &s in &senders {
                        let sent = match &per_layer[&s].activation {
                            Payload::Image(i) => project_channels(i, in_c),
                            Payload::Flat(_) => {
                                return Err(Error::Numeric(format!(
                                    "shape mismatch: conv layer {id} received flat data from {s}"
                                )))
                            }
                        };
                        match &mut avg {
                            None => avg = Some(sent),
                            Some(a) => {
                                for (x, y) in a.data_mut().iter_mut().zip(sent.data()) {
                                    *x += y;
                                }
                            }
                        }
                    }
                    let mut avg = avg.unwrap();
                    if n > 1.0 {
                        for v in avg.data_mut() {
                            *v /= n;
                        }
                    }
                    conv_pass(layer.weights.as_ref().unwrap(), layer.bias.as_ref().unwrap(), avg)
                } else {
                    let fan_in = layer.fan_in().unwrap();
                    let mut avg = Matrix::zeros(fan_in, batch);
                    for &s in &senders {
                        let flat = per_layer[&s].activation.as_flat();
                        let sent = project_rows(&flat, fan_in);
                        avg.add_assign(&sent);
                    }
                    if n > 1.0 {
                        avg.scale(1.0 / n);
                    }
                    let w = layer.weights.as_ref().unwrap();
                    let mut z = w.tmul(&avg);
                    z.add_col(layer.bias.as_ref().unwrap());
                    let a = activate(layer.activation, &z);
                    LayerPass {
                        avg_input: Payload::Flat(avg),
                        pre_activation: Some(z),
                        activation: Payload::Flat(a),
                    }
                }
            }
        };
        per_layer.insert(id, pass);
    }

    let probs = match &per_layer[&g.output()].activation {
        Payload::Flat(m) => m.clone(),
        Payload::Image(_) => unreachable!("output layer is dense"),
    };
    Ok(ForwardCache {
        per_layer,
        order,
        probs,
        batch,
    })
}

fn conv_pass(weights: &Matrix, bias: &Matrix, avg: ImageBatch) -> LayerPass {
    let cols = im2col(&avg);
    let mut z = weights.tmul(&cols);
    z.add_col(bias);
    let a_mat = activate(Activation::ReLU, &z);
    let a_img = mat_to_image(&a_mat, avg.batch(), avg.height(), avg.width());
    LayerPass {
        avg_input: Payload::Image(avg),
        pre_activation: Some(z),
        activation: Payload::Image(a_img),
    }
}

/// Mean cross-entropy over the batch: `-(1/B) * sum(log p[label])`.
/// Probabilities are clamped at 1e-12 before the log.
pub fn loss(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.cols() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "probs batch {} != label count {}",
            probs.cols(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        if y >= probs.rows() {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {} classes",
                probs.rows()
            )));
        }
        total -= probs.get(y, b).max(1e-12).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Gradients of the mean cross-entropy w.r.t. every weight and bias of the
/// graph, following the forward pass recorded in `cache`.
pub fn backward(g: &LayerGraph, cache: &ForwardCache, labels: &[usize]) -> Result<GradientStore> {
    if cache.batch != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "cached batch {} != label count {}",
            cache.batch,
            labels.len()
        )));
    }
    let inv_batch = 1.0 / cache.batch as f64;
    let mut store = GradientStore::default();
    // Gradient w.r.t. each layer's emitted activation; fan-out sums here.
    let mut d_act: BTreeMap<LayerId, Payload> = BTreeMap::new();

    for &id in cache.order.iter().rev() {
        let layer = g.layer(id)?;
        let pass = &cache.per_layer[&id];

        // 1. Gradient at the pre-activation.
        let d_z = match layer.kind {
            LayerKind::Output => {
                // Softmax + cross entropy: dZ = (P - onehot(y)) / B.
                let mut d_z = cache.probs.clone();
                for (b, &y) in labels.iter().enumerate() {
                    let v = d_z.get(y, b) - 1.0;
                    d_z.set(y, b, v);
                }
                d_z.scale(inv_batch);
                d_z
            }
            LayerKind::InputDense { .. } => {
                // Source layer without parameters: nothing to do.
                continue;
            }
            _ => {
                let upstream = match d_act.get(&id) {
                    Some(p) => p,
                    // No successor consumed this layer's output (cannot
                    // happen on a validated graph).
                    None => continue,
                };
                let z = pass.pre_activation.as_ref().unwrap();
                let up_mat = match upstream {
                    Payload::Flat(m) => m.clone(),
                    Payload::Image(i) => {
                        image_to_mat(i)
                    }
                };
                activation_grad_mask(layer.activation, z, &up_mat)
            }
        };

        // 2. Parameter gradients and gradient w.r.t. the averaged input.
        let weights = layer.weights.as_ref().unwrap();
        let (d_weights, d_bias, d_avg): (Matrix, Matrix, Payload) = match &pass.avg_input {
            Payload::Flat(avg) => {
                let d_w = avg.mul_t(&d_z);
                let d_b = d_z.row_sums();
                let d_avg = weights.mul(&d_z);
                (d_w, d_b, Payload::Flat(d_avg))
            }
            Payload::Image(avg) => {
                let cols = im2col(avg);
                let d_w = cols.mul_t(&d_z);
                let d_b = d_z.row_sums();
                let d_cols = weights.mul(&d_z);
                let d_avg = col2im(&d_cols, avg.batch(), avg.channels(), avg.height(), avg.width());
                (d_w, d_b, Payload::Image(d_avg))
            }
        };
        store.grads.insert(id, LayerGrads { d_weights, d_bias });

        // 3. Distribute to senders: averaging scales by 1/N, the projection
        // backpropagates as multiplication by the transposed quasi-identity.
        if layer.kind.is_input() {
            continue;
        }
        let mut senders = layer.incoming.clone();
        senders.sort();
        let inv_n = 1.0 / senders.len() as f64;
        for &s in &senders {
            let sender_out = &cache.per_layer[&s].activation;
            let contribution = match (&d_avg, sender_out) {
                (Payload::Flat(d), Payload::Flat(m)) => {
                    let mut back = project_rows_backward(d, m.rows());
                    back.scale(inv_n);
                    Payload::Flat(back)
                }
                (Payload::Flat(d), Payload::Image(img)) => {
                    // Sender's image was flattened before projection.
                    let feat = img.channels() * img.height() * img.width();
                    let mut back = project_rows_backward(d, feat);
                    back.scale(inv_n);
                    Payload::Image(ImageBatch::from_flat(
                        &back,
                        img.channels(),
                        img.height(),
                        img.width(),
                    ))
                }
                (Payload::Image(d), Payload::Image(img)) => {
                    let mut back = project_channels_backward(d, img.channels());
                    for v in back.data_mut() {
                        *v *= inv_n;
                    }
                    Payload::Image(back)
                }
                (Payload::Image(_), Payload::Flat(_)) => {
                    unreachable!("conv layer fed by flat sender on a validated graph")
                }
            };
            match d_act.get_mut(&s) {
                None => {
                    d_act.insert(s, contribution);
                }
                Some(Payload::Flat(acc)) => match contribution {
                    Payload::Flat(c) => acc.add_assign(&c),
                    Payload::Image(_) => unreachable!("sender emits one shape per pass"),
                },
                Some(Payload::Image(acc)) => match contribution {
                    Payload::Image(c) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(c.data()) {
                            *a += b;
                        }
                    }
                    Payload::Flat(_) => unreachable!("sender emits one shape per pass"),
                },
            }
        }
    }
    Ok(store)
}

/// One plain SGD step: `p <- p - lr * grad(p)` for every parameter.
pub fn sgd_step(g: &mut LayerGraph, grads: &GradientStore, lr: f64) -> Result<()> {
    if lr < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be >= 0, got {lr}"
        )));
    }
    for (&id, lg) in grads.iter() {
        let layer = g.layer_mut(id)?;
        if let Some(w) = layer.weights.as_mut() {
            w.sub_scaled(&lg.d_weights, lr);
        }
        if let Some(b) = layer.bias.as_mut() {
            b.sub_scaled(&lg.d_bias, lr);
        }
    }
    Ok(())
}

/// Forward + loss + backward + SGD step on one mini-batch. Returns the batch
/// loss and accuracy before the update.
pub fn train_minibatch(
    g: &mut LayerGraph,
    inputs: &[Signal],
    labels: &[usize],
    lr: f64,
) -> Result<(f64, f64)> {
    let cache = forward_cached(g, inputs)?;
    let batch_loss = loss(cache.probs(), labels)?;
    let correct = cache
        .probs()
        .argmax_columns()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    let acc = correct as f64 / labels.len() as f64;
    let grads = backward(g, &cache, labels)?;
    sgd_step(g, &grads, lr)?;
    Ok((batch_loss, acc))
}

/// Lowers 3x3/stride-1/same-padding patches into a `(C*9) x (B*H*W)` matrix.
/// Each kernel offset copies contiguous row spans.
pub(crate) fn im2col(img: &ImageBatch) -> Matrix {
    let (b_n, c_n, h, w) = (img.batch(), img.channels(), img.height(), img.width());
    let mut cols = Matrix::zeros(c_n * 9, b_n * h * w);
    let out_cols = b_n * h * w;
    let data = img.data();
    let dst = cols.data_mut();
    for b in 0..b_n {
        for c in 0..c_n {
            let src_plane = (b * c_n + c) * h * w;
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let row = c * 9 + ky * 3 + kx;
                    let base = row * out_cols + b * h * w;
                    // x + kx - 1 must stay inside [0, w)
                    let (x0, x1) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w - 1),
                    };
                    if x0 >= x1 {
                        continue;
                    }
                    for y in 0..h {
                        let iy = y as isize + ky as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = src_plane + iy as usize * w + (x0 + kx) - 1;
                        dst[base + y * w + x0..base + y * w + x1]
                            .copy_from_slice(&data[src..src + (x1 - x0)]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the image.
pub(crate) fn col2im(
    cols: &Matrix,
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
) -> ImageBatch {
    let mut img = ImageBatch::zeros(batch, channels, h, w);
    let out_cols = batch * h * w;
    let src = cols.data();
    let dst = img.data_mut();
    for b in 0..batch {
        for c in 0..channels {
            let dst_plane = (b * channels + c) * h * w;
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let row = c * 9 + ky * 3 + kx;
                    let base = row * out_cols + b * h * w;
                    let (x0, x1) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w - 1),
                    };
                    if x0 >= x1 {
                        continue;
                    }
                    for y in 0..h {
                        let iy = y as isize + ky as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let d = dst_plane + iy as usize * w + (x0 + kx) - 1;
                        let s = base + y * w + x0;
                        for (out, v) in dst[d..d + (x1 - x0)].iter_mut().zip(&src[s..s + (x1 - x0)]) {
                            *out += v;
                        }
                    }
                }
            }
        }
    }
    img
}

/// Reshapes `out_c x (B*H*W)` back into an image batch.
pub(crate) fn mat_to_image(m: &Matrix, batch: usize, h: usize, w: usize) -> ImageBatch {
    let channels = m.rows();
    let mut img = ImageBatch::zeros(batch, channels, h, w);
    for c in 0..channels {
        for b in 0..batch {
            for p in 0..h * w {
                img.data_mut()[(b * channels + c) * h * w + p] = m.data()[c * (batch * h * w) + b * h * w + p];
            }
        }
    }
    img
}

/// Inverse of [`mat_to_image`].
pub(crate) fn image_to_mat(img: &ImageBatch) -> Matrix {
    let (b_n, c_n, h, w) = (img.batch(), img.channels(), img.height(), img.width());
    let mut m = Matrix::zeros(c_n, b_n * h * w);
    for c in 0..c_n {
        for b in 0..b_n {
            for p in 0..h * w {
                m.data_mut()[c * (b_n * h * w) + b * h * w + p] = img.data()[(b * c_n + c) * h * w + p];
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{InputSpec, LayerKind};
    use crate::tensor::InitScheme;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn dense_signal(g: &LayerGraph, m: Matrix) -> Vec<Signal> {
        vec![Signal::new(g.inputs()[0], Payload::Flat(m))]
    }

    fn random_flat(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng(seed);
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = r.gen::<f64>() * 2.0 - 1.0;
        }
        m
    }

    #[test]
    fn zero_weight_model_is_uniform() {
        let mut g = LayerGraph::new_base_model(InputSpec::Dense { features: 4 }, 6, 10, &mut rng(0))
            .unwrap();
        let out = g.output();
        let l = g.layer_mut(out).unwrap();
        l.weights = Some(Matrix::zeros(6, 10));
        l.bias = Some(Matrix::zeros(10, 1));
        let probs = forward(&g, &dense_signal(&g, random_flat(4, 3, 1))).unwrap();
        for b in 0..3 {
            for r in 0..10 {
                assert!((probs.get(r, b) - 0.1).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn equal_signals_average_to_themselves() {
        // two inputs feeding one hidden layer with identical signals
        let mut g = LayerGraph::new_multi_input_model(
            &[InputSpec::Dense { features: 3 }, InputSpec::Dense { features: 3 }],
            3,
            4,
            2,
            &mut rng(0),
        )
        .unwrap();
        let hidden = g
            .layer_ids()
            .find(|&id| g.layer(id).unwrap().kind == LayerKind::DenseSeq)
            .unwrap();
        // make the hidden layer transparent so its averaged input is visible
        let l = g.layer_mut(hidden).unwrap();
        l.weights = Some(Matrix::identity(3));
        l.bias = Some(Matrix::zeros(3, 1));
        let s = Matrix::from_vec(3, 2, vec![0.5, 1.0, 2.0, 0.25, 3.0, 0.0]);
        let signals = vec![
            Signal::new(g.inputs()[0], Payload::Flat(s.clone())),
            Signal::new(g.inputs()[1], Payload::Flat(s.clone())),
        ];
        let cache = forward_cached(&g, &signals).unwrap();
        match cache.averaged_input(hidden).unwrap() {
            Payload::Flat(avg) => assert_eq!(avg, &s),
            _ => panic!("dense layer has flat input"),
        }
    }

    #[test]
    fn hand_computed_two_unit_forward() {
        // input [1,2], hidden W=I, b=0, ReLU, output W=I, b=0 -> softmax([1,2])
        let mut g = LayerGraph::new_base_model(InputSpec::Dense { features: 2 }, 2, 2, &mut rng(0))
            .unwrap();
        let (input, output) = (g.inputs()[0], g.output());
        let hidden = g
            .add_layer(LayerKind::DenseSeq, input, output, &mut rng(1))
            .unwrap();
        for id in [hidden, output] {
            let l = g.layer_mut(id).unwrap();
            l.weights = Some(Matrix::identity(2));
            l.bias = Some(Matrix::zeros(2, 1));
        }
        let probs = forward(&g, &dense_signal(&g, Matrix::from_vec(2, 1, vec![1.0, 2.0]))).unwrap();
        let denom = 1f64.exp() + 2f64.exp();
        assert!((probs.get(0, 0) - 1f64.exp() / denom).abs() < 1e-12);
        assert!((probs.get(1, 0) - 2f64.exp() / denom).abs() < 1e-12);
    }

    #[test]
    fn forward_is_deterministic() {
        let g = LayerGraph::new_base_model(
            InputSpec::Conv {
                channels: 1,
                height: 6,
                width: 6,
            },
            5,
            3,
            &mut rng(3),
        )
        .unwrap();
        let mut img = ImageBatch::zeros(2, 1, 6, 6);
        let mut r = rng(4);
        for v in img.data_mut() {
            *v = r.gen::<f64>();
        }
        let sig = vec![Signal::new(g.inputs()[0], Payload::Image(img))];
        let a = forward(&g, &sig).unwrap();
        let b = forward(&g, &sig).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_columns_are_distributions() {
        let mut g = LayerGraph::new_base_model(InputSpec::Dense { features: 5 }, 4, 6, &mut rng(7))
            .unwrap();
        let (input, output) = (g.inputs()[0], g.output());
        g.add_layer(LayerKind::DenseSeq, input, output, &mut rng(8))
            .unwrap();
        let probs = forward(&g, &dense_signal(&g, random_flat(5, 9, 2))).unwrap();
        for b in 0..9 {
            let mut sum = 0.0;
            for r in 0..6 {
                let v = probs.get(r, b);
                assert!((0.0..=1.0).contains(&v));
                sum += v;
            }
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_analytic_values() {
        // uniform over 10 classes
        let probs = Matrix::from_vec(10, 1, vec![0.1; 10]);
        assert!((loss(&probs, &[3]).unwrap() - 10f64.ln()).abs() < 1e-12);
        // perfect one-hot
        let mut p = Matrix::zeros(3, 2);
        p.set(1, 0, 1.0);
        p.set(2, 1, 1.0);
        assert_eq!(loss(&p, &[1, 2]).unwrap(), 0.0);
        // [0.5,0.5] batch of 2
        let p = Matrix::from_vec(2, 2, vec![0.5, 0.5, 0.5, 0.5]);
        assert!((loss(&p, &[0, 1]).unwrap() - 2f64.ln()).abs() < 1e-12);
        // mismatched label count
        assert!(loss(&p, &[0]).is_err());
    }

    #[test]
    fn output_bias_gradient_is_mean_error() {
        let mut g = LayerGraph::new_base_model(InputSpec::Dense { features: 3 }, 3, 4, &mut rng(0))
            .unwrap();
        let out = g.output();
        let l = g.layer_mut(out).unwrap();
        l.weights = Some(Matrix::zeros(3, 4));
        l.bias = Some(Matrix::zeros(4, 1));
        let x = random_flat(3, 5, 11);
        let labels = [0usize, 1, 2, 3, 0];
        let cache = forward_cached(&g, &dense_signal(&g, x)).unwrap();
        let grads = backward(&g, &cache, &labels).unwrap();
        let d_bias = &grads.get(out).unwrap().d_bias;
        // probs are uniform 0.25; mean(P - onehot) per class:
        // class 0 appears twice: 0.25 - 2/5 = -0.15; classes 1..3 once: 0.25 - 0.2
        assert!((d_bias.get(0, 0) - (0.25 - 0.4)).abs() < 1e-12);
        for r in 1..4 {
            assert!((d_bias.get(r, 0) - (0.25 - 0.2)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_residual_layer_emits_exact_zero_and_gets_gradient() {
        let mut g = LayerGraph::new_base_model(InputSpec::Dense { features: 4 }, 4, 3, &mut rng(5))
            .unwrap();
        let (input, output) = (g.inputs()[0], g.output());
        let res = g
            .add_layer(
                LayerKind::DenseRes {
                    init: InitScheme::Zero,
                },
                input,
                output,
                &mut rng(6),
            )
            .unwrap();
        let x = Matrix::from_vec(4, 2, vec![0.3, 0.7, 1.2, 0.1, 0.9, 0.4, 0.2, 0.8]);
        let cache = forward_cached(&g, &dense_signal(&g, x)).unwrap();
        match cache.activation(res).unwrap() {
            Payload::Flat(a) => assert!(a.data().iter().all(|&v| v == 0.0)),
            _ => panic!(),
        }
        // first backward pass must reach the zero layer's weights
        let grads = backward(&g, &cache, &[0, 1]).unwrap();
        let dw = &grads.get(res).unwrap().d_weights;
        assert!(
            dw.data().iter().any(|&v| v != 0.0),
            "zero residual layer must receive a nonzero weight gradient"
        );
    }

    #[test]
    fn identity_residual_layer_passes_through_exactly() {
        let mut g = LayerGraph::new_base_model(InputSpec::Dense { features: 4 }, 4, 3, &mut rng(5))
            .unwrap();
        let (input, output) = (g.inputs()[0], g.output());
        let hidden = g
            .add_layer(LayerKind::DenseSeq, input, output, &mut rng(6))
            .unwrap();
        // hidden emits def_neu=4 wide, so the identity matrix is square
        let res = g
            .add_layer(
                LayerKind::DenseRes {
                    init: InitScheme::Identity,
                },
                hidden,
                output,
                &mut rng(7),
            )
            .unwrap();
        let x = random_flat(4, 3, 12);
        let cache = forward_cached(&g, &dense_signal(&g, x)).unwrap();
        let avg = match cache.averaged_input(res).unwrap() {
            Payload::Flat(m) => m.clone(),
            _ => panic!(),
        };
        let act = match cache.activation(res).unwrap() {
            Payload::Flat(m) => m.clone(),
            _ => panic!(),
        };
        assert_eq!(avg, act, "identity layer output equals its averaged input");
    }

    #[test]
    fn sgd_step_examples() {
        let mut g = LayerGraph::new_base_model(InputSpec::Dense { features: 2 }, 2, 2, &mut rng(0))
            .unwrap();
        let out = g.output();
        {
            let l = g.layer_mut(out).unwrap();
            l.weights = Some(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        }
        let mut grads = GradientStore::default();
        grads.grads.insert(
            out,
            LayerGrads {
                d_weights: Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 0.0]),
                d_bias: Matrix::zeros(2, 1),
            },
        );
        // lr = 0 leaves parameters unchanged
        let before = g.layer(out).unwrap().weights.clone().unwrap();
        sgd_step(&mut g, &grads, 0.0).unwrap();
        assert_eq!(g.layer(out).unwrap().weights.clone().unwrap(), before);
        // scalar 1.0 with gradient 2.0 at lr 0.1 -> 0.8
        sgd_step(&mut g, &grads, 0.1).unwrap();
        assert!((g.layer(out).unwrap().weights.as_ref().unwrap().get(0, 0) - 0.8).abs() < 1e-15);
        // two steps equal one accumulated step on a frozen gradient
        sgd_step(&mut g, &grads, 0.1).unwrap();
        sgd_step(&mut g, &grads, 0.1).unwrap();
        assert!((g.layer(out).unwrap().weights.as_ref().unwrap().get(0, 0) - 0.4).abs() < 1e-12);
        assert!(sgd_step(&mut g, &grads, -0.1).is_err());
    }

    #[test]
    fn deadlock_on_missing_signal() {
        let g = LayerGraph::new_multi_input_model(
            &[InputSpec::Dense { features: 2 }, InputSpec::Dense { features: 2 }],
            2,
            4,
            2,
            &mut rng(0),
        )
        .unwrap();
        let one_signal = vec![Signal::new(g.inputs()[0], Payload::Flat(random_flat(2, 1, 0)))];
        let err = forward(&g, &one_signal).unwrap_err();
        assert!(matches!(err, Error::Deadlock(_)), "{err}");
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = LayerGraph::new_base_model(InputSpec::Dense { features: 3 }, 2, 2, &mut rng(0))
            .unwrap();
        let err = forward(&g, &dense_signal(&g, random_flat(5, 1, 0))).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }

    /// Central finite differences over every parameter of the graph.
    fn finite_difference_check(g: &LayerGraph, signals: &[Signal], labels: &[usize]) {
        let eps = 1e-5;
        let cache = forward_cached(g, signals).unwrap();
        let analytic = backward(g, &cache, labels).unwrap();
        let ids: Vec<_> = g.layer_ids().collect();
        for id in ids {
            let (has_w, has_b) = {
                let l = g.layer(id).unwrap();
                (l.weights.is_some(), l.bias.is_some())
            };
            if !has_w {
                continue;
            }
            let n_w = {
                let l = g.layer(id).unwrap();
                l.weights.as_ref().unwrap().data().len()
            };
            for i in 0..n_w {
                let mut plus = g.clone();
                plus.layer_mut(id).unwrap().weights.as_mut().unwrap().data_mut()[i] += eps;
                let mut minus = g.clone();
                minus.layer_mut(id).unwrap().weights.as_mut().unwrap().data_mut()[i] -= eps;
                let lp = loss(&forward(&plus, signals).unwrap(), labels).unwrap();
                let lm = loss(&forward(&minus, signals).unwrap(), labels).unwrap();
                let fd = (lp - lm) / (2.0 * eps);
                let an = analytic.get(id).unwrap().d_weights.data()[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
                assert!(rel < 1e-4, "layer {id} weight {i}: fd={fd}, analytic={an}");
            }
            if has_b {
                let n_b = {
                    let l = g.layer(id).unwrap();
                    l.bias.as_ref().unwrap().data().len()
                };
                for i in 0..n_b {
                    let mut plus = g.clone();
                    plus.layer_mut(id).unwrap().bias.as_mut().unwrap().data_mut()[i] += eps;
                    let mut minus = g.clone();
                    minus.layer_mut(id).unwrap().bias.as_mut().unwrap().data_mut()[i] -= eps;
                    let lp = loss(&forward(&plus, signals).unwrap(), labels).unwrap();
                    let lm = loss(&forward(&minus, signals).unwrap(), labels).unwrap();
                    let fd = (lp - lm) / (2.0 * eps);
                    let an = analytic.get(id).unwrap().d_bias.data()[i];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
                    assert!(rel < 1e-4, "layer {id} bias {i}: fd={fd}, analytic={an}");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_dense() {
        let mut r = rng(42);
        let mut g =
            LayerGraph::new_base_model(InputSpec::Dense { features: 5 }, 8, 3, &mut r).unwrap();
        let (input, output) = (g.inputs()[0], g.output());
        let h1 = g.add_layer(LayerKind::DenseSeq, input, output, &mut r).unwrap();
        let h2 = g.add_layer(LayerKind::DenseSeq, h1, output, &mut r).unwrap();
        g.add_layer(
            LayerKind::DenseRes {
                init: InitScheme::RandomScaled,
            },
            h1,
            output,
            &mut r,
        )
        .unwrap();
        let _ = h2;
        let x = random_flat(5, 4, 13);
        let labels = [0usize, 1, 2, 0];
        finite_difference_check(&g, &dense_signal(&g, x), &labels);
    }

    #[test]
    fn gradients_match_finite_differences_conv() {
        let mut r = rng(43);
        let mut g = LayerGraph::new_base_model(
            InputSpec::Conv {
                channels: 1,
                height: 5,
                width: 5,
            },
            6,
            3,
            &mut r,
        )
        .unwrap();
        let (input, output) = (g.inputs()[0], g.output());
        let conv = g.add_layer(LayerKind::ConvSeq, input, output, &mut r).unwrap();
        g.add_layer(LayerKind::ConvRes, input, output, &mut r).unwrap();
        g.add_layer(LayerKind::DenseSeq, conv, output, &mut r).unwrap();
        let mut img = ImageBatch::zeros(3, 1, 5, 5);
        let mut rr = rng(14);
        for v in img.data_mut() {
            *v = rr.gen::<f64>();
        }
        let signals = vec![Signal::new(g.inputs()[0], Payload::Image(img))];
        let labels = [0usize, 1, 2];
        finite_difference_check(&g, &signals, &labels);
    }

    #[test]
    fn one_epoch_decreases_loss_on_fresh_model() {
        let mut wins = 0;
        for seed in 0..10u64 {
            let mut r = rng(seed);
            let mut g =
                LayerGraph::new_base_model(InputSpec::Dense { features: 6 }, 8, 4, &mut r).unwrap();
            let x = random_flat(6, 100, seed.wrapping_add(100));
            let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
            let signals = dense_signal(&g, x);
            let before = loss(&forward(&g, &signals).unwrap(), &labels).unwrap();
            // one full-batch epoch
            let cache = forward_cached(&g, &signals).unwrap();
            let grads = backward(&g, &cache, &labels).unwrap();
            sgd_step(&mut g, &grads, 0.1).unwrap();
            let after = loss(&forward(&g, &signals).unwrap(), &labels).unwrap();
            if after < before {
                wins += 1;
            }
        }
        assert!(wins >= 9, "loss decreased for only {wins}/10 seeds");
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let mut r = rng(21);
        let mut img = ImageBatch::zeros(2, 3, 4, 4);
        for v in img.data_mut() {
            *v = r.gen::<f64>();
        }
        let cols = im2col(&img);
        let mut cotangent = Matrix::zeros(cols.rows(), cols.cols());
        for v in cotangent.data_mut() {
            *v = r.gen::<f64>();
        }
        let back = col2im(&cotangent, 2, 3, 4, 4);
        let dot_a: f64 = cols.data().iter().zip(cotangent.data()).map(|(a, b)| a * b).sum();
        let dot_b: f64 = img.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        assert!((dot_a - dot_b).abs() < 1e-10);
    }
}
