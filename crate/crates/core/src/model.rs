//! Forward evaluation, sampling, and the backprop primitives for the
//! windowed feed-forward language model described in [`crate::arch`].
//!
//! All math runs in f64 on top of the f32 parameter storage. Contexts
//! shorter than the window are left-padded with PAD; the PAD embedding is
//! an ordinary trainable row.

use crate::arch::{ArchDescriptor, HeadKind};
use crate::error::{Error, Result};
use crate::params::ParameterVector;
use crate::rng::rng_from_seed;
use crate::tokens::{CategoricalDist, TokenSequence, BOS_TOKEN, EOS_TOKEN, PAD_TOKEN};
use rand::Rng;

/// Borrowed, segment-sliced view of a flat parameter vector.
pub(crate) struct ParamView<'a> {
    pub arch: ArchDescriptor,
    pub head: HeadKind,
    pub embed: &'a [f32],
    pub w1: &'a [f32],
    pub b1: &'a [f32],
    pub head_w: &'a [f32],
    pub head_b: &'a [f32],
}

impl<'a> ParamView<'a> {
    pub fn new(p: &'a ParameterVector) -> Result<Self> {
        p.validate()?;
        let a = &p.arch;
        Ok(Self {
            arch: p.arch,
            head: p.head,
            embed: &p.values[a.embed_offset()..a.w1_offset()],
            w1: &p.values[a.w1_offset()..a.b1_offset()],
            b1: &p.values[a.b1_offset()..a.head_w_offset()],
            head_w: &p.values[a.head_w_offset()..a.head_b_offset(p.head)],
            head_b: &p.values[a.head_b_offset(p.head)..],
        })
    }
}

/// Activations cached at one context position, enough to run backward.
pub(crate) struct PositionForward {
    pub window: Vec<u32>,
    pub hact: Vec<f64>,
    pub logits: Vec<f64>,
}

impl PositionForward {
    /// Log-softmax of the logits (policy head only).
    pub fn log_probs(&self) -> Vec<f64> {
        log_softmax(&self.logits)
    }
}

/// The last `W` tokens of `prompt ‖ response_prefix`, left-padded with PAD.
pub(crate) fn context_window(
    arch: &ArchDescriptor,
    prompt: &[u32],
    response_prefix: &[u32],
) -> Vec<u32> {
    let w = arch.context_window as usize;
    let mut window = vec![PAD_TOKEN; w];
    let total = prompt.len() + response_prefix.len();
    let take = total.min(w);
    let mut slot = w;
    let mut remaining = take;
    for &t in response_prefix.iter().rev() {
        if remaining == 0 {
            break;
        }
        slot -= 1;
        window[slot] = t;
        remaining -= 1;
    }
    for &t in prompt.iter().rev() {
        if remaining == 0 {
            break;
        }
        slot -= 1;
        window[slot] = t;
        remaining -= 1;
    }
    window
}

/// Embed + hidden + head for one window of token ids.
pub(crate) fn forward_window(view: &ParamView<'_>, window: &[u32]) -> PositionForward {
    let a = &view.arch;
    let d = a.embed_dim as usize;
    let h = a.hidden_dim as usize;
    let wd = a.window_dim();
    debug_assert_eq!(window.len(), a.context_window as usize);

    // x = concatenated embeddings of the window
    let mut x = vec![0.0f64; wd];
    for (slot, &tok) in window.iter().enumerate() {
        let row = &view.embed[tok as usize * d..(tok as usize + 1) * d];
        for (j, &e) in row.iter().enumerate() {
            x[slot * d + j] = e as f64;
        }
    }

    let mut hact = vec![0.0f64; h];
    for u in 0..h {
        let row = &view.w1[u * wd..(u + 1) * wd];
        let mut acc = view.b1[u] as f64;
        for (xv, wv) in x.iter().zip(row) {
            acc += xv * *wv as f64;
        }
        hact[u] = acc.tanh();
    }

    let out = a.head_out(view.head);
    let mut logits = vec![0.0f64; out];
    for (o, logit) in logits.iter_mut().enumerate() {
        let row = &view.head_w[o * h..(o + 1) * h];
        let mut acc = view.head_b[o] as f64;
        for (hv, wv) in hact.iter().zip(row) {
            acc += hv * *wv as f64;
        }
        *logit = acc;
    }

    PositionForward {
        window: window.to_vec(),
        hact,
        logits,
    }
}

/// Accumulates gradients for one position given dL/dlogits.
pub(crate) fn backward_window(
    view: &ParamView<'_>,
    fwd: &PositionForward,
    dlogits: &[f64],
    grad: &mut [f64],
) {
    let a = &view.arch;
    let d = a.embed_dim as usize;
    let h = a.hidden_dim as usize;
    let wd = a.window_dim();
    let out = a.head_out(view.head);
    debug_assert_eq!(dlogits.len(), out);
    debug_assert_eq!(grad.len(), a.param_count(view.head));

    let hw_off = a.head_w_offset();
    let hb_off = a.head_b_offset(view.head);

    // head: dW2[o][j] += dlogits[o] * hact[j]; db2[o] += dlogits[o]
    let mut dh = vec![0.0f64; h];
    for o in 0..out {
        let dl = dlogits[o];
        if dl == 0.0 {
            continue;
        }
        let wrow = &view.head_w[o * h..(o + 1) * h];
        let grow = &mut grad[hw_off + o * h..hw_off + (o + 1) * h];
        for j in 0..h {
            grow[j] += dl * fwd.hact[j];
            dh[j] += dl * wrow[j] as f64;
        }
        grad[hb_off + o] += dl;
    }

    // tanh backward: da = dh * (1 - hact^2)
    let da: Vec<f64> = dh
        .iter()
        .zip(&fwd.hact)
        .map(|(dv, hv)| dv * (1.0 - hv * hv))
        .collect();

    // hidden: dW1[u][i] += da[u] * x[i]; db1[u] += da[u]; dx = W1^T da
    let w1_off = a.w1_offset();
    let b1_off = a.b1_offset();
    let mut dx = vec![0.0f64; wd];
    // rebuild x from the window (cheaper than caching it per position)
    let mut x = vec![0.0f64; wd];
    for (slot, &tok) in fwd.window.iter().enumerate() {
        let row = &view.embed[tok as usize * d..(tok as usize + 1) * d];
        for (j, &e) in row.iter().enumerate() {
            x[slot * d + j] = e as f64;
        }
    }
    for u in 0..h {
        let dau = da[u];
        if dau == 0.0 {
            continue;
        }
        let wrow = &view.w1[u * wd..(u + 1) * wd];
        let grow = &mut grad[w1_off + u * wd..w1_off + (u + 1) * wd];
        for i in 0..wd {
            grow[i] += dau * x[i];
            dx[i] += dau * wrow[i] as f64;
        }
        grad[b1_off + u] += dau;
    }

    // embeddings: each window slot routes its dx slice to the token's row
    for (slot, &tok) in fwd.window.iter().enumerate() {
        let gr = &mut grad[tok as usize * d..(tok as usize + 1) * d];
        for j in 0..d {
            gr[j] += dx[slot * d + j];
        }
    }
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .map(|&l| (l - max).exp())
            .sum::<f64>()
            .ln();
    logits.iter().map(|&l| l - lse).collect()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn require_head(params: &ParameterVector, head: HeadKind) -> Result<()> {
    if params.head != head {
        return Err(Error::LayoutMismatch {
            expected: head.to_string(),
            got: params.head.to_string(),
        });
    }
    Ok(())
}

/// Next-token distribution given a (possibly short) context; softmax of the
/// forward logits over the full vocabulary.
pub fn token_dist(params: &ParameterVector, context: &TokenSequence) -> Result<CategoricalDist> {
    require_head(params, HeadKind::Policy)?;
    let view = ParamView::new(params)?;
    context.validate_ids(params.arch.vocab_size)?;
    let window = context_window(&params.arch, &context.tokens, &[]);
    let fwd = forward_window(&view, &window);
    Ok(CategoricalDist {
        probs: softmax(&fwd.logits),
    })
}

/// Per-position log probabilities of the response tokens under the policy.
pub fn response_token_logprobs(
    params: &ParameterVector,
    prompt: &TokenSequence,
    response: &TokenSequence,
) -> Result<Vec<f64>> {
    require_head(params, HeadKind::Policy)?;
    let view = ParamView::new(params)?;
    prompt.validate_ids(params.arch.vocab_size)?;
    response.validate_ids(params.arch.vocab_size)?;
    let mut out = Vec::with_capacity(response.len());
    for t in 0..response.len() {
        let window = context_window(&params.arch, &prompt.tokens, &response.tokens[..t]);
        let fwd = forward_window(&view, &window);
        out.push(fwd.log_probs()[response.tokens[t] as usize]);
    }
    Ok(out)
}

/// log pi(y | x): sum of per-token log probabilities; always <= 0.
pub fn sequence_logprob(
    params: &ParameterVector,
    prompt: &TokenSequence,
    response: &TokenSequence,
) -> Result<f64> {
    Ok(response_token_logprobs(params, prompt, response)?
        .iter()
        .sum())
}

/// Sampling probabilities: PAD and BOS are masked out of responses and the
/// remainder renormalized.
pub(crate) fn masked_sampling_probs(probs: &[f64]) -> Vec<f64> {
    let mut masked = probs.to_vec();
    masked[PAD_TOKEN as usize] = 0.0;
    masked[BOS_TOKEN as usize] = 0.0;
    let sum: f64 = masked.iter().sum();
    if sum > 0.0 {
        for p in &mut masked {
            *p /= sum;
        }
    }
    masked
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_nonzero
}

/// Ancestral sampling at the given temperature; stops at EOS or after
/// `max_response_len` tokens. Pure function of (params, prompt, temperature,
/// rng_seed).
pub fn generate(
    params: &ParameterVector,
    prompt: &TokenSequence,
    temperature: f64,
    rng_seed: u64,
) -> Result<TokenSequence> {
    if temperature <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    require_head(params, HeadKind::Policy)?;
    let view = ParamView::new(params)?;
    prompt.validate_ids(params.arch.vocab_size)?;
    let mut rng = rng_from_seed(rng_seed);
    let mut response: Vec<u32> = Vec::new();
    for _ in 0..params.arch.max_response_len {
        let window = context_window(&params.arch, &prompt.tokens, &response);
        let fwd = forward_window(&view, &window);
        let scaled: Vec<f64> = fwd.logits.iter().map(|&l| l / temperature).collect();
        let probs = masked_sampling_probs(&softmax(&scaled));
        let tok = sample_index(&probs, &mut rng) as u32;
        response.push(tok);
        if tok == EOS_TOKEN {
            break;
        }
    }
    Ok(TokenSequence::response(response))
}

/// Greedy decoding (argmax at every step, ties to the lowest id). Used by
/// deterministic evaluation modes.
pub fn generate_greedy(params: &ParameterVector, prompt: &TokenSequence) -> Result<TokenSequence> {
    require_head(params, HeadKind::Policy)?;
    let view = ParamView::new(params)?;
    prompt.validate_ids(params.arch.vocab_size)?;
    let mut response: Vec<u32> = Vec::new();
    for _ in 0..params.arch.max_response_len {
        let window = context_window(&params.arch, &prompt.tokens, &response);
        let fwd = forward_window(&view, &window);
        let probs = masked_sampling_probs(&softmax(&fwd.logits));
        let tok = probs
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ib.cmp(ia)))
            .map(|(i, _)| i as u32)
            .unwrap_or(EOS_TOKEN);
        response.push(tok);
        if tok == EOS_TOKEN {
            break;
        }
    }
    Ok(TokenSequence::response(response))
}

/// Scalar reward: linear head on the backbone hidden state at the final
/// token of `prompt ‖ response`. Rejects policy-layout parameters.
pub fn reward_forward(
    rm_params: &ParameterVector,
    prompt: &TokenSequence,
    response: &TokenSequence,
) -> Result<f64> {
    require_head(rm_params, HeadKind::Reward)?;
    let view = ParamView::new(rm_params)?;
    prompt.validate_ids(rm_params.arch.vocab_size)?;
    response.validate_ids(rm_params.arch.vocab_size)?;
    let window = context_window(&rm_params.arch, &prompt.tokens, &response.tokens);
    let fwd = forward_window(&view, &window);
    Ok(fwd.logits[0])
}
