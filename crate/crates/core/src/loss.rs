//! Differentiable losses with exact analytic gradients in canonical layout.
//!
//! Every loss used by the trainers and the policy optimizer is a
//! [`LossSpec`]; [`loss_and_grad`] evaluates value and gradient in one pass,
//! [`loss_value`] evaluates only the value, which is what the
//! finite-difference oracle in [`crate::gradcheck`] differentiates.

use crate::arch::HeadKind;
use crate::error::{Error, Result};
use crate::model::{
    backward_window, context_window, forward_window, log_softmax, ParamView, PositionForward,
};
use crate::params::ParameterVector;
use crate::taskgen::PreferencePair;
use crate::tokens::TokenSequence;

/// KL divergence between two categorical distributions given as
/// probability vectors: sum of p * ln(p/q). Terms with p = 0 contribute 0.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.iter()
        .zip(q)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / qv).ln())
        .sum()
}

fn kl_from_logprobs(lp: &[f64], lq: &[f64]) -> f64 {
    lp.iter()
        .zip(lq)
        .map(|(&a, &b)| {
            let p = a.exp();
            if p > 0.0 {
                p * (a - b)
            } else {
                0.0
            }
        })
        .sum()
}

/// The frozen KL anchor of a policy objective: one reference distribution,
/// or the mean of the divergences to two references.
pub enum KlAnchor<'a> {
    Single(&'a ParameterVector),
    MeanOfTwo(&'a ParameterVector, &'a ParameterVector),
}

impl KlAnchor<'_> {
    fn refs(&self) -> Vec<(&ParameterVector, f64)> {
        match self {
            KlAnchor::Single(r) => vec![(*r, 1.0)],
            KlAnchor::MeanOfTwo(a, b) => vec![(*a, 0.5), (*b, 0.5)],
        }
    }
}

/// One policy rollout with everything the clipped surrogate needs frozen at
/// rollout time.
#[derive(Debug, Clone)]
pub struct RolloutSample {
    pub prompt: TokenSequence,
    pub response: TokenSequence,
    /// Per-response-token log probabilities under the rollout-time policy.
    pub old_logprobs: Vec<f64>,
    /// Normalized advantage, broadcast over the response tokens.
    pub advantage: f64,
}

/// A differentiable training objective over a batch.
pub enum LossSpec<'a> {
    /// Fixed value, zero gradient.
    Constant(f64),
    /// Mean next-token cross-entropy over all positions t >= 1 of each
    /// sequence (position 0 is never predicted).
    NextTokenCrossEntropy { sequences: &'a [TokenSequence] },
    /// Mean cross-entropy over response tokens conditioned on prompts;
    /// prompt tokens are excluded from the loss.
    ResponseCrossEntropy {
        examples: &'a [(TokenSequence, TokenSequence)],
    },
    /// Mean Bradley-Terry pair loss -ln sigmoid(R(x, chosen) - R(x, rejected)).
    PreferencePairs { pairs: &'a [PreferencePair] },
    /// The literal policy objective -R(x,y) + beta * KL(policy || anchor)
    /// for a fixed (x, y); the reward is a constant w.r.t. policy params.
    Objective {
        reward: f64,
        beta: f64,
        anchor: KlAnchor<'a>,
        prompt: &'a TokenSequence,
        response: &'a TokenSequence,
    },
    /// Mean over rollouts of the negated clipped surrogate plus the
    /// differentiable beta * KL penalty.
    ClippedSurrogate {
        rollouts: &'a [RolloutSample],
        beta: f64,
        clip_epsilon: f64,
        anchor: KlAnchor<'a>,
    },
    /// Mean of 0.5 * (V(x) - target)^2 for a scalar-head value model read
    /// at the final prompt token.
    ValueRegression {
        targets: &'a [(TokenSequence, f64)],
    },
}

impl LossSpec<'_> {
    fn site(&self) -> &'static str {
        match self {
            LossSpec::Constant(_) => "constant",
            LossSpec::NextTokenCrossEntropy { .. } => "next_token_ce",
            LossSpec::ResponseCrossEntropy { .. } => "response_ce",
            LossSpec::PreferencePairs { .. } => "preference_pair",
            LossSpec::Objective { .. } => "objective_kl",
            LossSpec::ClippedSurrogate { .. } => "clipped_surrogate",
            LossSpec::ValueRegression { .. } => "value_regression",
        }
    }
}

/// Loss value only; shares every forward path with [`loss_and_grad`].
pub fn loss_value(params: &ParameterVector, spec: &LossSpec<'_>) -> Result<f64> {
    evaluate(params, spec, None)
}

/// Loss value and its exact gradient in canonical layout order.
pub fn loss_and_grad(
    params: &ParameterVector,
    spec: &LossSpec<'_>,
) -> Result<(f64, ParameterVector)> {
    let mut grad = vec![0.0f64; params.len()];
    let value = evaluate(params, spec, Some(&mut grad))?;
    let gradient = ParameterVector {
        arch: params.arch,
        head: params.head,
        values: grad.iter().map(|&g| g as f32).collect(),
    };
    Ok((value, gradient))
}

fn check_finite(value: f64, site: &str, step: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            site: site.to_string(),
            step,
        })
    }
}

fn evaluate(
    params: &ParameterVector,
    spec: &LossSpec<'_>,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    if !params.all_finite() {
        return Err(Error::NonFinite {
            site: format!("{}/params", spec.site()),
            step: 0,
        });
    }
    let value = match spec {
        LossSpec::Constant(c) => *c,

        LossSpec::NextTokenCrossEntropy { sequences } => {
            if sequences.is_empty() {
                return Err(Error::EmptyInput("next-token batch".into()));
            }
            let view = policy_view(params)?;
            let total: usize = sequences.iter().map(|s| s.len().saturating_sub(1)).sum();
            if total == 0 {
                return Err(Error::EmptyInput(
                    "no predictable positions in next-token batch".into(),
                ));
            }
            let scale = 1.0 / total as f64;
            let mut acc = 0.0;
            for (i, seq) in sequences.iter().enumerate() {
                seq.validate_ids(params.arch.vocab_size)?;
                for t in 1..seq.len() {
                    let window = context_window(&params.arch, &seq.tokens[..t], &[]);
                    acc += ce_position(
                        &view,
                        &window,
                        seq.tokens[t] as usize,
                        scale,
                        grad.as_deref_mut(),
                    );
                }
                acc = check_finite(acc, "next_token_ce/sequence", i)?;
            }
            acc
        }

        LossSpec::ResponseCrossEntropy { examples } => {
            if examples.is_empty() {
                return Err(Error::EmptyInput("response-CE batch".into()));
            }
            let view = policy_view(params)?;
            let total: usize = examples.iter().map(|(_, r)| r.len()).sum();
            if total == 0 {
                return Err(Error::EmptyInput("all responses empty".into()));
            }
            let scale = 1.0 / total as f64;
            let mut acc = 0.0;
            for (i, (prompt, response)) in examples.iter().enumerate() {
                prompt.validate_ids(params.arch.vocab_size)?;
                response.validate_ids(params.arch.vocab_size)?;
                for t in 0..response.len() {
                    let window =
                        context_window(&params.arch, &prompt.tokens, &response.tokens[..t]);
                    acc += ce_position(
                        &view,
                        &window,
                        response.tokens[t] as usize,
                        scale,
                        grad.as_deref_mut(),
                    );
                }
                acc = check_finite(acc, "response_ce/example", i)?;
            }
            acc
        }

        LossSpec::PreferencePairs { pairs } => {
            if pairs.is_empty() {
                return Err(Error::EmptyInput("preference-pair batch".into()));
            }
            let view = reward_view(params)?;
            let scale = 1.0 / pairs.len() as f64;
            let mut acc = 0.0;
            for (i, pair) in pairs.iter().enumerate() {
                let (rw, fwd_w) = reward_with_cache(&view, params, &pair.prompt, &pair.chosen)?;
                let (rl, fwd_l) = reward_with_cache(&view, params, &pair.prompt, &pair.rejected)?;
                let s = rw - rl;
                acc += scale * softplus(-s);
                acc = check_finite(acc, "preference_pair/loss", i)?;
                if let Some(g) = grad.as_deref_mut() {
                    // d/ds of -ln sigmoid(s) is sigmoid(s) - 1
                    let ds = scale * (sigmoid(s) - 1.0);
                    backward_window(&view, &fwd_w, &[ds], g);
                    backward_window(&view, &fwd_l, &[-ds], g);
                }
            }
            acc
        }

        LossSpec::Objective {
            reward,
            beta,
            anchor,
            prompt,
            response,
        } => {
            let view = policy_view(params)?;
            let kl = kl_term(
                &view,
                params,
                anchor,
                prompt,
                response,
                *beta,
                1.0,
                grad.as_deref_mut(),
            )?;
            check_finite(-reward + beta * kl, "objective_kl/total", 0)?
        }

        LossSpec::ClippedSurrogate {
            rollouts,
            beta,
            clip_epsilon,
            anchor,
        } => {
            if rollouts.is_empty() {
                return Err(Error::EmptyInput("rollout batch".into()));
            }
            if !(0.0 < *clip_epsilon && *clip_epsilon <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "clip_epsilon must be in (0, 1], got {clip_epsilon}"
                )));
            }
            let view = policy_view(params)?;
            let scale = 1.0 / rollouts.len() as f64;
            let mut acc = 0.0;
            for (i, rollout) in rollouts.iter().enumerate() {
                if rollout.old_logprobs.len() != rollout.response.len() {
                    return Err(Error::InvalidArgument(
                        "old_logprobs length != response length".into(),
                    ));
                }
                let adv = rollout.advantage;
                for t in 0..rollout.response.len() {
                    let window = context_window(
                        &params.arch,
                        &rollout.prompt.tokens,
                        &rollout.response.tokens[..t],
                    );
                    let fwd = forward_window(&view, &window);
                    let lps = fwd.log_probs();
                    let y = rollout.response.tokens[t] as usize;
                    let ratio = (lps[y] - rollout.old_logprobs[t]).exp();
                    let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
                    let term = (ratio * adv).min(clipped * adv);
                    acc -= scale * term;
                    if let Some(g) = grad.as_deref_mut() {
                        // min picks the unclipped branch on ties; outside the
                        // clip interval the clipped branch has zero slope
                        let active = ratio * adv <= clipped * adv;
                        if active && adv != 0.0 {
                            let coef = -scale * adv * ratio;
                            let probs: Vec<f64> = lps.iter().map(|&l| l.exp()).collect();
                            let mut dlogits = vec![0.0f64; probs.len()];
                            for (v, dl) in dlogits.iter_mut().enumerate() {
                                let indicator = if v == y { 1.0 } else { 0.0 };
                                *dl = coef * (indicator - probs[v]);
                            }
                            backward_window(&view, &fwd, &dlogits, g);
                        }
                    }
                }
                if *beta != 0.0 {
                    let kl = kl_term(
                        &view,
                        params,
                        anchor,
                        &rollout.prompt,
                        &rollout.response,
                        *beta,
                        scale,
                        grad.as_deref_mut(),
                    )?;
                    acc += scale * beta * kl;
                }
                acc = check_finite(acc, "clipped_surrogate/rollout", i)?;
            }
            acc
        }

        LossSpec::ValueRegression { targets } => {
            if targets.is_empty() {
                return Err(Error::EmptyInput("value-regression batch".into()));
            }
            let view = reward_view(params)?;
            let scale = 1.0 / targets.len() as f64;
            let empty = TokenSequence::response(vec![]);
            let mut acc = 0.0;
            for (i, (prompt, target)) in targets.iter().enumerate() {
                let (v, fwd) = reward_with_cache(&view, params, prompt, &empty)?;
                let err = v - target;
                acc += scale * 0.5 * err * err;
                acc = check_finite(acc, "value_regression/item", i)?;
                if let Some(g) = grad.as_deref_mut() {
                    backward_window(&view, &fwd, &[scale * err], g);
                }
            }
            acc
        }
    };
    check_finite(value, spec.site(), usize::MAX)
}

fn policy_view<'a>(params: &'a ParameterVector) -> Result<ParamView<'a>> {
    if params.head != HeadKind::Policy {
        return Err(Error::LayoutMismatch {
            expected: HeadKind::Policy.to_string(),
            got: params.head.to_string(),
        });
    }
    ParamView::new(params)
}

fn reward_view<'a>(params: &'a ParameterVector) -> Result<ParamView<'a>> {
    if params.head != HeadKind::Reward {
        return Err(Error::LayoutMismatch {
            expected: HeadKind::Reward.to_string(),
            got: params.head.to_string(),
        });
    }
    ParamView::new(params)
}

/// Cross-entropy at one position; accumulates gradient when requested and
/// returns the scaled loss contribution.
fn ce_position(
    view: &ParamView<'_>,
    window: &[u32],
    target: usize,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let fwd = forward_window(view, window);
    let lps = fwd.log_probs();
    if let Some(g) = grad {
        let mut dlogits: Vec<f64> = lps.iter().map(|&l| scale * l.exp()).collect();
        dlogits[target] -= scale;
        backward_window(view, &fwd, &dlogits, g);
    }
    -scale * lps[target]
}

fn reward_with_cache(
    view: &ParamView<'_>,
    params: &ParameterVector,
    prompt: &TokenSequence,
    response: &TokenSequence,
) -> Result<(f64, PositionForward)> {
    prompt.validate_ids(params.arch.vocab_size)?;
    response.validate_ids(params.arch.vocab_size)?;
    let window = context_window(&params.arch, &prompt.tokens, &response.tokens);
    let fwd = forward_window(view, &window);
    Ok((fwd.logits[0], fwd))
}

/// Sequence KL of the policy against the anchor, plus (optionally) the
/// gradient of `outer_scale * beta * KL` accumulated into `grad`. Returns
/// the unscaled KL value. Empty responses contribute exactly zero.
#[allow(clippy::too_many_arguments)]
fn kl_term(
    view: &ParamView<'_>,
    params: &ParameterVector,
    anchor: &KlAnchor<'_>,
    prompt: &TokenSequence,
    response: &TokenSequence,
    beta: f64,
    outer_scale: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    prompt.validate_ids(params.arch.vocab_size)?;
    response.validate_ids(params.arch.vocab_size)?;
    let refs = anchor.refs();
    let mut ref_views = Vec::with_capacity(refs.len());
    for (r, w) in &refs {
        if r.arch != params.arch {
            return Err(Error::ArchMismatch(
                "KL anchor arch differs from policy arch".into(),
            ));
        }
        ref_views.push((policy_view(r)?, *w));
    }

    let mut total = 0.0;
    for t in 0..response.len() {
        let window = context_window(&params.arch, &prompt.tokens, &response.tokens[..t]);
        let fwd = forward_window(view, &window);
        let lp = fwd.log_probs();
        let mut dlogits = vec![0.0f64; lp.len()];
        // accumulate this position's KL across anchors first, so that a
        // mean-of-two anchor with identical members sums bit-identically to
        // the single-anchor path
        let mut pos_kl = 0.0;
        for (ref_view, weight) in &ref_views {
            let rf = forward_window(ref_view, &window);
            let lq = log_softmax(&rf.logits);
            let kl_t = kl_from_logprobs(&lp, &lq);
            pos_kl += weight * kl_t;
            if grad.is_some() {
                // d KL / d logit_i = p_i * ((lp_i - lq_i) - KL)
                let coef = outer_scale * beta * weight;
                if coef != 0.0 {
                    for i in 0..lp.len() {
                        dlogits[i] += coef * lp[i].exp() * ((lp[i] - lq[i]) - kl_t);
                    }
                }
            }
        }
        total += pos_kl;
        if let Some(g) = grad.as_deref_mut() {
            backward_window(view, &fwd, &dlogits, g);
        }
    }
    Ok(total)
}

/// Sequence-level analytic KL between two policies along a trajectory:
/// the per-position KL over the full vocabulary, summed over response
/// positions. Zero for an empty response.
pub fn kl_sequence(
    policy: &ParameterVector,
    reference: &ParameterVector,
    prompt: &TokenSequence,
    response: &TokenSequence,
) -> Result<f64> {
    let view = policy_view(policy)?;
    kl_term(
        &view,
        policy,
        &KlAnchor::Single(reference),
        prompt,
        response,
        0.0,
        0.0,
        None,
    )
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x), overflow-safe.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchDescriptor;
    use crate::params::{init_params, reward_params_from_backbone};

    fn tiny_arch() -> ArchDescriptor {
        ArchDescriptor::new(6, 2, 3, 5, 4)
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let p = init_params(tiny_arch(), 1).unwrap();
        let (v, g) = loss_and_grad(&p, &LossSpec::Constant(2.5)).unwrap();
        assert_eq!(v, 2.5);
        assert!(g.values.iter().all(|&x| x == 0.0));
        assert_eq!(g.len(), p.len());
    }

    #[test]
    fn equal_rewards_give_ln2_pair_loss() {
        // zero head: R = 0 for everything
        let arch = tiny_arch();
        let sft = init_params(arch, 1).unwrap();
        let mut rm = reward_params_from_backbone(&sft, 2).unwrap();
        for v in &mut rm.values[arch.head_w_offset()..] {
            *v = 0.0;
        }
        let pair = PreferencePair {
            prompt: TokenSequence::prompt(vec![1, 3]),
            chosen: TokenSequence::response(vec![4, 2]),
            rejected: TokenSequence::response(vec![5, 2]),
            oracle_margin: 1.0,
        };
        let pairs = [pair];
        let v = loss_value(&rm, &LossSpec::PreferencePairs { pairs: &pairs }).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn kl_categorical_hand_case() {
        let kl = kl_categorical(&[0.9, 0.1], &[0.5, 0.5]);
        let expected = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        assert!((kl - expected).abs() < 1e-15);
        assert!((kl - 0.3680642071684971).abs() < 1e-12);
    }

    #[test]
    fn kl_sequence_is_zero_for_identical_policies_and_empty_responses() {
        let p = init_params(tiny_arch(), 3).unwrap();
        let q = init_params(tiny_arch(), 4).unwrap();
        let prompt = TokenSequence::prompt(vec![1, 3]);
        let resp = TokenSequence::response(vec![4, 5, 2]);
        assert_eq!(kl_sequence(&p, &p, &prompt, &resp).unwrap(), 0.0);
        let empty = TokenSequence::response(vec![]);
        assert_eq!(kl_sequence(&p, &q, &prompt, &empty).unwrap(), 0.0);
        assert!(kl_sequence(&p, &q, &prompt, &resp).unwrap() >= 0.0);
    }

    #[test]
    fn objective_with_beta_zero_is_negated_reward() {
        let p = init_params(tiny_arch(), 3).unwrap();
        let q = init_params(tiny_arch(), 4).unwrap();
        let prompt = TokenSequence::prompt(vec![1, 3]);
        let resp = TokenSequence::response(vec![4, 2]);
        let v = loss_value(
            &p,
            &LossSpec::Objective {
                reward: 1.25,
                beta: 0.0,
                anchor: KlAnchor::Single(&q),
                prompt: &prompt,
                response: &resp,
            },
        )
        .unwrap();
        assert_eq!(v, -1.25);
    }

    #[test]
    fn non_finite_params_are_rejected_with_site() {
        let mut p = init_params(tiny_arch(), 1).unwrap();
        p.values[3] = f32::NAN;
        let seqs = [TokenSequence::prompt(vec![1, 3, 4])];
        let err = loss_value(&p, &LossSpec::NextTokenCrossEntropy { sequences: &seqs })
            .unwrap_err();
        match err {
            Error::NonFinite { site, .. } => assert!(site.contains("next_token_ce")),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn empty_batches_are_rejected() {
        let p = init_params(tiny_arch(), 1).unwrap();
        assert!(loss_value(&p, &LossSpec::NextTokenCrossEntropy { sequences: &[] }).is_err());
        assert!(loss_value(&p, &LossSpec::ResponseCrossEntropy { examples: &[] }).is_err());
        let rm = reward_params_from_backbone(&p, 0).unwrap();
        assert!(loss_value(&rm, &LossSpec::PreferencePairs { pairs: &[] }).is_err());
        assert!(loss_value(&rm, &LossSpec::ValueRegression { targets: &[] }).is_err());
    }

    #[test]
    fn wrong_layout_is_rejected() {
        let p = init_params(tiny_arch(), 1).unwrap();
        let rm = reward_params_from_backbone(&p, 0).unwrap();
        let seqs = [TokenSequence::prompt(vec![1, 3, 4])];
        assert!(matches!(
            loss_value(&rm, &LossSpec::NextTokenCrossEntropy { sequences: &seqs }),
            Err(Error::LayoutMismatch { .. })
        ));
        let pairs = [PreferencePair {
            prompt: TokenSequence::prompt(vec![1]),
            chosen: TokenSequence::response(vec![4, 2]),
            rejected: TokenSequence::response(vec![5, 2]),
            oracle_margin: 1.0,
        }];
        assert!(matches!(
            loss_value(&p, &LossSpec::PreferencePairs { pairs: &pairs }),
            Err(Error::LayoutMismatch { .. })
        ));
    }
}
