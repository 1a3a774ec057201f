//! Forward pass that records a tape of layer nodes, and the reverse sweep
//! over that tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{Activation, Head, ModelSpec, StateInput};
use super::tensor::{give_buf, matmul, take_buf, Real};
use super::weights::Weights;
use crate::{Error, Result};

const LEAK: f64 = 0.01;

/// A batch of normalized `66 x 200 x 3` images, plus the car state when the
/// model consumes it.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T> {
    pub images: &'a [T],
    pub state: Option<&'a [T]>,
    pub n: usize,
}

impl<'a, T> Batch<'a, T> {
    pub fn new(images: &'a [T], state: Option<&'a [T]>, n: usize) -> Self {
        Self { images, state, n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout is the identity; the linear head is clamped to `[0, 1]`.
    Eval,
    /// Inverted dropout with a mask drawn from `seed`.
    Train { seed: u64 },
}

enum Node<T> {
    Conv {
        layer: usize,
        col: Vec<T>,
        input: (usize, usize, usize),
        output: (usize, usize, usize),
    },
    Act {
        z: Vec<T>,
    },
    Dropout {
        mask: Vec<T>,
    },
    Concat {
        features: usize,
    },
    Dense {
        layer: usize,
        x: Vec<T>,
        fan_in: usize,
        fan_out: usize,
    },
    Sigmoid {
        y: Vec<T>,
    },
}

struct Tape<T> {
    nodes: Vec<Node<T>>,
    n: usize,
}

fn shape_err(layer: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::Shape {
        layer: layer.into(),
        expected: expected.into(),
        got: got.into(),
    }
}

fn check_inputs<T: Real>(spec: &ModelSpec, weights: &Weights<T>, batch: &Batch<T>) -> Result<()> {
    let want = batch.n * spec.input_len();
    if batch.n == 0 || batch.images.len() != want {
        return Err(shape_err(
            "input",
            format!("{} x {}x{}x{}", batch.n.max(1), spec.input.0, spec.input.1, spec.input.2),
            format!("{} values for batch {}", batch.images.len(), batch.n),
        ));
    }
    match (spec.use_car_state, batch.state) {
        (true, None) => return Err(shape_err("fc1", "car state batch", "none")),
        (false, Some(_)) => return Err(shape_err("fc1", "no car state", "car state batch")),
        (true, Some(s)) if s.len() != batch.n * StateInput::LEN => {
            return Err(shape_err("fc1", format!("{} state values", batch.n * StateInput::LEN), s.len().to_string()))
        }
        _ => {}
    }
    weights.check(spec).map_err(|e| match e {
        Error::ParameterMismatch { name, reason } => shape_err(name, "shape from model spec", reason),
        other => other,
    })
}

fn im2col<T: Real>(x: &[T], n: usize, (h, w, c): (usize, usize, usize), k: usize, s: usize, (oh, ow): (usize, usize), col: &mut [T]) {
    let row_len = k * k * c;
    let run = k * c;
    let mut r = 0;
    for b in 0..n {
        let img = &x[b * h * w * c..(b + 1) * h * w * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = &mut col[r * row_len..(r + 1) * row_len];
                for ky in 0..k {
                    let src = ((oy * s + ky) * w + ox * s) * c;
                    dst[ky * run..(ky + 1) * run].copy_from_slice(&img[src..src + run]);
                }
                r += 1;
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], n: usize, (h, w, c): (usize, usize, usize), k: usize, s: usize, (oh, ow): (usize, usize), dx: &mut [T]) {
    let row_len = k * k * c;
    let run = k * c;
    let mut r = 0;
    for b in 0..n {
        let img = &mut dx[b * h * w * c..(b + 1) * h * w * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let src = &col[r * row_len..(r + 1) * row_len];
                for ky in 0..k {
                    let dst = ((oy * s + ky) * w + ox * s) * c;
                    for (d, &v) in img[dst..dst + run].iter_mut().zip(&src[ky * run..(ky + 1) * run]) {
                        *d += v;
                    }
                }
                r += 1;
            }
        }
    }
}

fn activate<T: Real>(act: Activation, z: &[T], out: &mut [T]) {
    let leak = T::from_f64(LEAK);
    for (o, &v) in out.iter_mut().zip(z) {
        *o = if v > T::ZERO {
            v
        } else {
            match act {
                Activation::Relu => T::ZERO,
                Activation::LeakyRelu => v * leak,
            }
        };
    }
}

fn add_bias<T: Real>(z: &mut [T], bias: &[T]) {
    for row in z.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn run<T: Real>(spec: &ModelSpec, weights: &Weights<T>, batch: &Batch<T>, mode: Mode, record: bool) -> Result<(Vec<T>, Tape<T>)> {
    check_inputs(spec, weights, batch)?;
    let n = batch.n;
    let mut tape = Tape { nodes: Vec::new(), n };
    let shapes = spec.conv_shapes()?;
    // `None` while the current activation is still the caller's input.
    let mut owned: Option<Vec<T>> = None;
    let mut in_shape = spec.input;
    let mut rng = match mode {
        Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Mode::Eval => None,
    };

    for (l, (conv, &out_shape)) in spec.convs.iter().zip(&shapes).enumerate() {
        let (oh, ow, co) = out_shape;
        let k_len = conv.kernel * conv.kernel * in_shape.2;
        let rows = n * oh * ow;
        let mut col = take_buf(rows * k_len, false);
        im2col(owned.as_deref().unwrap_or(batch.images), n, in_shape, conv.kernel, conv.stride, (oh, ow), &mut col);
        if let Some(prev) = owned.take() {
            give_buf(prev);
        }
        let wt = &weights.params[2 * l].data;
        let bias = &weights.params[2 * l + 1].data;
        let mut z = take_buf(rows * co, false);
        matmul(rows, k_len, co, &col, false, wt, false, T::ZERO, &mut z);
        add_bias(&mut z, bias);
        let mut a = take_buf(z.len(), false);
        activate(spec.activation, &z, &mut a);
        if record {
            tape.nodes.push(Node::Conv {
                layer: l,
                col,
                input: in_shape,
                output: out_shape,
            });
            tape.nodes.push(Node::Act { z });
        } else {
            give_buf(col);
            give_buf(z);
        }
        if let (Some(d), Some(rng)) = (spec.dropout, rng.as_mut()) {
            if d.after_conv == l + 1 && d.p > 0.0 {
                let keep = T::from_f64(1.0 / (1.0 - d.p));
                let mut mask = take_buf(a.len(), false);
                for m in mask.iter_mut() {
                    *m = if rng.random::<f64>() >= d.p { keep } else { T::ZERO };
                }
                for (v, &m) in a.iter_mut().zip(&mask) {
                    *v = *v * m;
                }
                if record {
                    tape.nodes.push(Node::Dropout { mask });
                } else {
                    give_buf(mask);
                }
            }
        }
        owned = Some(a);
        in_shape = out_shape;
    }

    let mut x = owned.unwrap_or_else(|| batch.images.to_vec());
    let features = x.len() / n;
    if let Some(state) = batch.state {
        let width = features + StateInput::LEN;
        let mut joined = Vec::with_capacity(n * width);
        for b in 0..n {
            joined.extend_from_slice(&x[b * features..(b + 1) * features]);
            joined.extend_from_slice(&state[b * StateInput::LEN..(b + 1) * StateInput::LEN]);
        }
        give_buf(std::mem::replace(&mut x, joined));
        if record {
            tape.nodes.push(Node::Concat { features });
        }
    }

    let first_dense = 2 * spec.convs.len();
    let depth = spec.dense.len();
    for j in 0..depth {
        let wt = &weights.params[first_dense + 2 * j];
        let bias = &weights.params[first_dense + 2 * j + 1].data;
        let (fan_in, fan_out) = (wt.shape[0], wt.shape[1]);
        let mut z = vec![T::ZERO; n * fan_out];
        matmul(n, fan_in, fan_out, &x, false, &wt.data, false, T::ZERO, &mut z);
        add_bias(&mut z, bias);
        let input = std::mem::take(&mut x);
        if record {
            tape.nodes.push(Node::Dense {
                layer: first_dense + 2 * j,
                x: input,
                fan_in,
                fan_out,
            });
        } else {
            give_buf(input);
        }
        if j + 1 < depth {
            let mut a = vec![T::ZERO; z.len()];
            activate(spec.activation, &z, &mut a);
            if record {
                tape.nodes.push(Node::Act { z });
            }
            x = a;
        } else {
            x = z;
        }
    }

    match spec.head {
        Head::Sigmoid => {
            for v in &mut x {
                *v = T::ONE / (T::ONE + (-*v).exp());
            }
            if record {
                tape.nodes.push(Node::Sigmoid { y: x.clone() });
            }
        }
        Head::LinearClamped => {
            if mode == Mode::Eval {
                for v in &mut x {
                    *v = if *v < T::ZERO {
                        T::ZERO
                    } else if *v > T::ONE {
                        T::ONE
                    } else {
                        *v
                    };
                }
            }
        }
    }
    Ok((x, tape))
}

/// Runs the network, returning one steering value per batch element.
pub fn forward<T: Real>(spec: &ModelSpec, weights: &Weights<T>, batch: &Batch<T>, mode: Mode) -> Result<Vec<T>> {
    run(spec, weights, batch, mode, false).map(|(y, _)| y)
}

fn sweep<T: Real>(spec: &ModelSpec, weights: &Weights<T>, tape: Tape<T>, mut g: Vec<T>) -> Weights<T> {
    let mut grads = weights.zeros_like();
    let n = tape.n;
    let leak = T::from_f64(LEAK);
    for node in tape.nodes.into_iter().rev() {
        match node {
            Node::Sigmoid { y } => {
                for (gi, &yi) in g.iter_mut().zip(&y) {
                    *gi = *gi * yi * (T::ONE - yi);
                }
            }
            Node::Dense { layer, x, fan_in, fan_out } => {
                matmul(fan_in, n, fan_out, &x, true, &g, false, T::ZERO, &mut grads.params[layer].data);
                let db = &mut grads.params[layer + 1].data;
                for row in g.chunks_exact(fan_out) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                let mut dx = vec![T::ZERO; n * fan_in];
                matmul(n, fan_out, fan_in, &g, false, &weights.params[layer].data, true, T::ZERO, &mut dx);
                give_buf(x);
                give_buf(std::mem::replace(&mut g, dx));
            }
            Node::Act { z } => {
                for (gi, &zi) in g.iter_mut().zip(&z) {
                    if zi <= T::ZERO {
                        *gi = match spec.activation {
                            Activation::Relu => T::ZERO,
                            Activation::LeakyRelu => *gi * leak,
                        };
                    }
                }
                give_buf(z);
            }
            Node::Dropout { mask } => {
                for (gi, &m) in g.iter_mut().zip(&mask) {
                    *gi = *gi * m;
                }
                give_buf(mask);
            }
            Node::Concat { features } => {
                let width = features + StateInput::LEN;
                let mut dx = Vec::with_capacity(n * features);
                for row in g.chunks_exact(width) {
                    dx.extend_from_slice(&row[..features]);
                }
                g = dx;
            }
            Node::Conv { layer, col, input, output } => {
                let conv = spec.convs[layer];
                let (oh, ow, co) = output;
                let rows = n * oh * ow;
                let k_len = conv.kernel * conv.kernel * input.2;
                matmul(k_len, rows, co, &col, true, &g, false, T::ZERO, &mut grads.params[2 * layer].data);
                let db = &mut grads.params[2 * layer + 1].data;
                for row in g.chunks_exact(co) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                if layer == 0 {
                    give_buf(col);
                    break;
                }
                let mut dcol = col;
                matmul(rows, co, k_len, &g, false, &weights.params[2 * layer].data, true, T::ZERO, &mut dcol);
                let mut dx = take_buf(n * input.0 * input.1 * input.2, true);
                col2im(&dcol, n, input, conv.kernel, conv.stride, (oh, ow), &mut dx);
                give_buf(dcol);
                give_buf(std::mem::replace(&mut g, dx));
            }
        }
    }
    give_buf(g);
    grads
}

/// Mean squared error over the batch and its gradient for every parameter.
pub fn loss_and_gradients<T: Real>(
    spec: &ModelSpec,
    weights: &Weights<T>,
    batch: &Batch<T>,
    labels: &[T],
    mode: Mode,
) -> Result<(T, Weights<T>)> {
    if labels.len() != batch.n {
        return Err(shape_err("labels", batch.n.to_string(), labels.len().to_string()));
    }
    let (y, tape) = run(spec, weights, batch, mode, true)?;
    let scale = T::from_f64(1.0 / batch.n as f64);
    let two = T::from_f64(2.0);
    let mut loss = T::ZERO;
    let g: Vec<T> = y
        .iter()
        .zip(labels)
        .map(|(&p, &t)| {
            let e = p - t;
            loss += e * e * scale;
            two * e * scale
        })
        .collect();
    Ok((loss, sweep(spec, weights, tape, g)))
}

/// Train-mode gradients with a dropout mask drawn from `seed`.
pub fn backward<T: Real>(spec: &ModelSpec, weights: &Weights<T>, batch: &Batch<T>, labels: &[T], seed: u64) -> Result<(Weights<T>, T)> {
    loss_and_gradients(spec, weights, batch, labels, Mode::Train { seed }).map(|(l, g)| (g, l))
}

/// Shifts hidden biases so that every channel is either active on all
/// positions or dead on all positions, at least `margin` away from the
/// kink. Channel 0 of each layer stays alive; the rest alternate.
fn clear_kinks(spec: &ModelSpec, w: &mut Weights<f64>, batch: &Batch<f64>, mode: Mode, margin: f64) -> Result<()> {
    let hidden = spec.convs.len() + spec.dense.len() - 1;
    for layer in 0..hidden {
        let (_, tape) = run(spec, w, batch, mode, true)?;
        let z = tape
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Act { z } => Some(z),
                _ => None,
            })
            .nth(layer)
            .unwrap();
        let bias_idx = if layer < spec.convs.len() {
            2 * layer + 1
        } else {
            2 * spec.convs.len() + 2 * (layer - spec.convs.len()) + 1
        };
        let c = w.params[bias_idx].data.len();
        for ch in 0..c {
            let vals = z.iter().skip(ch).step_by(c);
            let (mut lo, mut hi) = vals.fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            // Keep each channel's spread near 1 so activations stay small.
            let s = (1.0 / (hi - lo).max(1e-12)).min(1.0);
            for v in w.params[bias_idx - 1].data.iter_mut().skip(ch).step_by(c) {
                *v *= s;
            }
            let bias = &mut w.params[bias_idx].data;
            bias[ch] *= s;
            lo *= s;
            hi *= s;
            if ch % 2 == 0 {
                bias[ch] += margin - lo;
            } else {
                bias[ch] -= hi + margin;
            }
        }
    }
    // Centre the output logit so the sigmoid is not saturated.
    let y = forward(spec, w, batch, mode)?;
    let mean_logit = y.iter().map(|&p| (p / (1.0 - p)).ln()).sum::<f64>() / y.len() as f64;
    w.params.last_mut().expect("head bias").data[0] -= mean_logit;
    Ok(())
}

/// Largest relative error between analytic gradients and central finite
/// differences (step `1e-3`, float64) over every parameter, for a seeded
/// two-sample batch. Biases are first moved so that no hidden unit sits
/// near its activation kink, where finite differences are meaningless.
/// Meant for reduced-width specs; the cost is two forward passes per
/// parameter.
pub fn gradient_check(spec: &ModelSpec, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Weights::<f32>::init(spec, seed)?.cast::<f64>();
    let n = 2;
    let images: Vec<f64> = (0..n * spec.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let state: Vec<f64> = (0..n * 4).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
    let batch = Batch::new(&images, spec.use_car_state.then_some(&state[..]), n);
    let mode = Mode::Train { seed: seed + 1 };
    clear_kinks(spec, &mut w, &batch, mode, 0.25)?;

    let (_, grads) = loss_and_gradients(spec, &w, &batch, &labels, mode)?;
    let h = 1e-3;
    let mut worst = 0.0f64;
    for pi in 0..w.params.len() {
        for i in 0..w.params[pi].data.len() {
            let orig = w.params[pi].data[i];
            w.params[pi].data[i] = orig + h;
            let (lp, _) = loss_and_gradients(spec, &w, &batch, &labels, mode)?;
            w.params[pi].data[i] = orig - h;
            let (lm, _) = loss_and_gradients(spec, &w, &batch, &labels, mode)?;
            w.params[pi].data[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.params[pi].data[i];
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-10 {
                let rel = (analytic - numeric).abs() / scale;
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_check_reduced_network() {
        let spec = ModelSpec::reduced();
        for seed in 0..5 {
            let err = gradient_check(&spec, seed).unwrap();
            assert!(err <= 1e-3, "seed {seed}: {err}");
        }
    }

    #[test]
    fn gradient_check_leaky_with_state() {
        let spec = ModelSpec {
            activation: Activation::LeakyRelu,
            use_car_state: true,
            ..ModelSpec::reduced()
        };
        let err = gradient_check(&spec, 11).unwrap();
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn gradient_check_linear_head() {
        let spec = ModelSpec {
            head: Head::LinearClamped,
            ..ModelSpec::reduced()
        };
        let err = gradient_check(&spec, 12).unwrap();
        assert!(err <= 1e-3, "{err}");
    }
}
