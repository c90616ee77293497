//! CBOW forward/backward with negative sampling.
//!
//! For context mean `h`, target `t` and negatives `n_1..n_k` the loss is
//!
//! ```text
//! L = -log σ(o_t · h) - Σ_j log σ(-o_{n_j} · h)
//! ```
//!
//! with `o_w` the output vector of `w`. Writing `g_s = label_s - σ(o_s · h)`
//! (label 1 for the target, 0 for negatives), `∂L/∂o_s = -g_s h` and
//! `∂L/∂h = -Σ_s g_s o_s`. Each context row receives `∂L/∂h / |context|`,
//! the exact gradient of the mean.

use rand::Rng;

use super::params::{ModelParameters, Real, SharedMatrix};
use super::TrainConfig;
use crate::vocab::NegativeSamplingTable;

/// Logistic arguments are clamped to this magnitude before use.
pub const SIGMOID_CLAMP: f64 = 30.0;
/// Draws per negative before giving up on avoiding the target.
pub const MAX_NEGATIVE_REDRAWS: usize = 10;

fn clamp<F: Real>(x: F) -> F {
    let c = F::from_f64_lossy(SIGMOID_CLAMP);
    x.max(-c).min(c)
}

pub fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-clamp(x)).exp())
}

/// `-log σ(x)`, evaluated without cancellation.
pub fn neg_log_sigmoid<F: Real>(x: F) -> F {
    let x = clamp(x);
    if x > F::zero() {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Negative-sampling loss for hidden vector `h`.
pub fn ns_loss<F: Real>(h: &[F], target: usize, negatives: &[usize], w_out: &SharedMatrix<F>) -> F {
    let mut row = vec![F::zero(); h.len()];
    w_out.read_row(target, &mut row);
    let mut loss = neg_log_sigmoid(dot(&row, h));
    for &n in negatives {
        w_out.read_row(n, &mut row);
        loss = loss + neg_log_sigmoid(-dot(&row, h));
    }
    loss
}

/// Gradients of [`ns_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct NsGradient<F> {
    pub loss: F,
    /// `∂L/∂h`.
    pub hidden: Vec<F>,
    /// `(row, ∂L/∂o_row)` per sample, target first. Repeated negatives
    /// appear once per draw.
    pub output_rows: Vec<(usize, Vec<F>)>,
}

/// Working buffers reused across steps.
#[derive(Debug, Clone)]
pub struct Scratch<F> {
    hidden: Vec<F>,
    hidden_grad: Vec<F>,
    rows: Vec<F>,
    coeffs: Vec<F>,
    samples: Vec<usize>,
    context: Vec<usize>,
}

impl<F: Real> Scratch<F> {
    pub fn new(dim: usize, negatives: usize) -> Self {
        Scratch {
            hidden: vec![F::zero(); dim],
            hidden_grad: vec![F::zero(); dim],
            rows: vec![F::zero(); dim * (negatives + 1)],
            coeffs: Vec::with_capacity(negatives + 1),
            samples: Vec::with_capacity(negatives + 1),
            context: Vec::new(),
        }
    }
}

/// Reads every sampled output row (original values), returns the loss, and
/// leaves `g_s` in `coeffs` and `Σ g_s o_s` (= `-∂L/∂h`) in `hidden_grad`.
fn forward_backward<F: Real>(w_out: &SharedMatrix<F>, scratch: &mut Scratch<F>) -> F {
    let dim = scratch.hidden.len();
    if scratch.rows.len() < dim * scratch.samples.len() {
        scratch.rows.resize(dim * scratch.samples.len(), F::zero());
    }
    scratch.coeffs.clear();
    scratch.hidden_grad.iter_mut().for_each(|v| *v = F::zero());
    let mut loss = F::zero();
    for (s, &word) in scratch.samples.iter().enumerate() {
        let row = &mut scratch.rows[s * dim..(s + 1) * dim];
        w_out.read_row(word, row);
        let score = dot(row, &scratch.hidden);
        let (label, signed) = if s == 0 { (F::one(), score) } else { (F::zero(), -score) };
        loss = loss + neg_log_sigmoid(signed);
        let g = label - sigmoid(score);
        scratch.coeffs.push(g);
        for (acc, &o) in scratch.hidden_grad.iter_mut().zip(row.iter()) {
            *acc = *acc + g * o;
        }
    }
    loss
}

/// Analytic loss and gradients, computed by the same routine the training
/// step uses.
pub fn ns_gradient<F: Real>(h: &[F], target: usize, negatives: &[usize], w_out: &SharedMatrix<F>) -> NsGradient<F> {
    let mut scratch = Scratch::new(h.len(), negatives.len());
    scratch.hidden.copy_from_slice(h);
    scratch.samples.push(target);
    scratch.samples.extend_from_slice(negatives);
    let loss = forward_backward(w_out, &mut scratch);
    let hidden = scratch.hidden_grad.iter().map(|&v| -v).collect();
    let output_rows = scratch
        .samples
        .iter()
        .zip(&scratch.coeffs)
        .map(|(&w, &g)| (w, h.iter().map(|&x| -g * x).collect()))
        .collect();
    NsGradient { loss, hidden, output_rows }
}

/// One gradient-descent update with a fixed context and sample set.
/// Returns the loss before the update. `context` must be non-empty.
pub fn cbow_update<F: Real>(
    params: &ModelParameters<F>,
    context: &[usize],
    target: usize,
    negatives: &[usize],
    alpha: F,
    scratch: &mut Scratch<F>,
) -> F {
    scratch.samples.clear();
    scratch.samples.push(target);
    scratch.samples.extend_from_slice(negatives);
    apply_update(params, context, alpha, scratch)
}

fn apply_update<F: Real>(params: &ModelParameters<F>, context: &[usize], alpha: F, scratch: &mut Scratch<F>) -> F {
    debug_assert!(!context.is_empty());
    let dim = params.dim();
    scratch.hidden.iter_mut().for_each(|v| *v = F::zero());
    let mut row = std::mem::take(&mut scratch.hidden_grad);
    for &c in context {
        params.w_in.read_row(c, &mut row);
        for (h, &x) in scratch.hidden.iter_mut().zip(&row) {
            *h = *h + x;
        }
    }
    let inv = F::one() / F::from_usize(context.len()).expect("context length fits");
    scratch.hidden.iter_mut().for_each(|h| *h = *h * inv);
    scratch.hidden_grad = row;

    let loss = forward_backward(&params.w_out, scratch);

    for (s, &word) in scratch.samples.iter().enumerate() {
        params.w_out.add_scaled(word, &scratch.hidden, alpha * scratch.coeffs[s]);
    }
    let context_scale = alpha * inv;
    for &c in context {
        params.w_in.add_scaled(c, &scratch.hidden_grad[..dim], context_scale);
    }
    loss
}

/// Trains on position `position` of `doc` (vocabulary indices). Returns the
/// loss, or `None` when the context window is empty.
#[allow(clippy::too_many_arguments)]
pub fn cbow_step<F: Real, R: Rng + ?Sized>(
    doc: &[usize],
    position: usize,
    params: &ModelParameters<F>,
    config: &TrainConfig,
    table: &NegativeSamplingTable,
    alpha: F,
    rng: &mut R,
    scratch: &mut Scratch<F>,
) -> Option<F> {
    let radius = if config.dynamic_window { rng.random_range(1..=config.window) } else { config.window };
    let lo = position.saturating_sub(radius);
    let hi = (position + radius + 1).min(doc.len());
    scratch.context.clear();
    scratch.context.extend(doc[lo..position].iter().chain(&doc[position + 1..hi]));
    if scratch.context.is_empty() {
        return None;
    }

    let target = doc[position];
    scratch.samples.clear();
    scratch.samples.push(target);
    for _ in 0..config.negative {
        for _ in 0..MAX_NEGATIVE_REDRAWS {
            let w = table.sample(rng);
            if w != target {
                scratch.samples.push(w);
                break;
            }
        }
    }
    let context = std::mem::take(&mut scratch.context);
    let loss = apply_update(params, &context, alpha, scratch);
    scratch.context = context;
    Some(loss)
}
