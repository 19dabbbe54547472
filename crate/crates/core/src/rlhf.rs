//! KL-penalized policy optimization with pluggable reference strategies.
//!
//! One abstraction covers plain PPO (single frozen reference), SALSA (the
//! reference is a weight-space soup of SFT models, materialized once at run
//! start), and MKL (the penalty is the mean of the divergences to two
//! separate references). The optimizer is clipped-surrogate PPO over
//! sequence-level shaped returns with batch-standardized advantages; the
//! beta * KL term stays in the loss as an exact analytic quantity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Stage};
use crate::error::{Error, Result};
use crate::loss::{loss_and_grad, loss_value, KlAnchor, LossSpec, RolloutSample};
pub use crate::loss::{kl_categorical, kl_sequence};
use crate::model::{generate, response_token_logprobs, reward_forward};
use crate::params::ParameterVector;
use crate::rng::derive_seed;
use crate::soup::{weighted_soup, WEIGHT_SUM_TOL};
use crate::tokens::TokenSequence;

/// The frozen anchor of the KL penalty.
#[derive(Debug, Clone)]
pub enum ReferenceStrategy {
    /// KL to one reference model (PPO).
    Single(ParameterVector),
    /// KL to the weighted weight-space average of the members (SALSA).
    Soup {
        members: Vec<ParameterVector>,
        weights: Vec<f64>,
    },
    /// Mean of the KLs to two separate references (MKL).
    Mkl {
        reference: ParameterVector,
        other: ParameterVector,
    },
}

impl ReferenceStrategy {
    /// Uniform two-model soup at the given alpha.
    pub fn salsa(reference: ParameterVector, other: ParameterVector, alpha: f64) -> Self {
        ReferenceStrategy::Soup {
            members: vec![reference, other],
            weights: vec![1.0 - alpha, alpha],
        }
    }

    /// Uniform n-model soup.
    pub fn salsa_n(members: Vec<ParameterVector>) -> Self {
        let n = members.len();
        ReferenceStrategy::Soup {
            weights: vec![1.0 / n as f64; n],
            members,
        }
    }

    pub fn arch(&self) -> crate::arch::ArchDescriptor {
        match self {
            ReferenceStrategy::Single(p) => p.arch,
            ReferenceStrategy::Soup { members, .. } => members[0].arch,
            ReferenceStrategy::Mkl { reference, .. } => reference.arch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ReferenceStrategy::Single(p) => p.validate(),
            ReferenceStrategy::Soup { members, weights } => {
                if members.is_empty() || members.len() != weights.len() {
                    return Err(Error::InvalidArgument(
                        "soup strategy needs matching member/weight counts >= 1".into(),
                    ));
                }
                let sum: f64 = weights.iter().sum();
                if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "soup weights must sum to 1, got {sum}"
                    )));
                }
                for m in members {
                    m.validate()?;
                    if m.arch != members[0].arch {
                        return Err(Error::ArchMismatch("soup member arch differs".into()));
                    }
                }
                Ok(())
            }
            ReferenceStrategy::Mkl { reference, other } => {
                reference.validate()?;
                other.validate()?;
                if reference.arch != other.arch {
                    return Err(Error::ArchMismatch("MKL reference archs differ".into()));
                }
                Ok(())
            }
        }
    }

    /// Metadata echo for checkpoints and reports.
    pub fn describe(&self) -> serde_json::Value {
        match self {
            ReferenceStrategy::Single(p) => serde_json::json!({
                "kind": "single",
                "reference": p.content_hash(),
            }),
            ReferenceStrategy::Soup { members, weights } => serde_json::json!({
                "kind": "soup",
                "members": members.iter().map(|m| m.content_hash()).collect::<Vec<_>>(),
                "weights": weights,
            }),
            ReferenceStrategy::Mkl { reference, other } => serde_json::json!({
                "kind": "mkl",
                "reference": reference.content_hash(),
                "other": other.content_hash(),
            }),
        }
    }

    /// Materializes the frozen reference(s); soups are averaged exactly once
    /// per run.
    fn freeze(&self) -> Result<FrozenReference> {
        self.validate()?;
        Ok(match self {
            ReferenceStrategy::Single(p) => FrozenReference::One(p.clone()),
            ReferenceStrategy::Soup { members, weights } => {
                FrozenReference::One(weighted_soup(members, weights)?)
            }
            ReferenceStrategy::Mkl { reference, other } => {
                FrozenReference::Pair(reference.clone(), other.clone())
            }
        })
    }
}

/// Reference parameters after materialization; never mutated afterwards.
#[derive(Debug, Clone)]
enum FrozenReference {
    One(ParameterVector),
    Pair(ParameterVector, ParameterVector),
}

impl FrozenReference {
    fn anchor(&self) -> KlAnchor<'_> {
        match self {
            FrozenReference::One(p) => KlAnchor::Single(p),
            FrozenReference::Pair(a, b) => KlAnchor::MeanOfTwo(a, b),
        }
    }

    fn kl(
        &self,
        policy: &ParameterVector,
        prompt: &TokenSequence,
        response: &TokenSequence,
    ) -> Result<f64> {
        match self {
            FrozenReference::One(p) => kl_sequence(policy, p, prompt, response),
            FrozenReference::Pair(a, b) => Ok(0.5
                * (kl_sequence(policy, a, prompt, response)?
                    + kl_sequence(policy, b, prompt, response)?)),
        }
    }

    fn params_for_init(&self) -> &ParameterVector {
        match self {
            FrozenReference::One(p) => p,
            FrozenReference::Pair(a, _) => a,
        }
    }

    fn hashes(&self) -> Vec<String> {
        match self {
            FrozenReference::One(p) => vec![p.content_hash()],
            FrozenReference::Pair(a, b) => vec![a.content_hash(), b.content_hash()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    BatchMean,
    LearnedValueHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlhfConfig {
    /// KL coefficient; zero is allowed and collapses all strategies onto the
    /// same trajectory.
    pub beta: f64,
    pub learning_rate: f64,
    /// Prompts per step.
    pub batch_size: usize,
    pub rollouts_per_prompt: usize,
    pub clip_epsilon: f64,
    pub inner_epochs: usize,
    pub steps: usize,
    pub temperature: f64,
    pub baseline: Baseline,
    pub seed: u64,
    /// Initialize the policy from the materialized soup instead of the SFT
    /// checkpoint (soup strategies only; ignored otherwise).
    pub init_from_soup: bool,
    pub monitor_window: usize,
    pub monitor_collapse_fraction: f64,
}

impl Default for RlhfConfig {
    fn default() -> Self {
        Self {
            beta: 0.2,
            learning_rate: 0.05,
            batch_size: 16,
            rollouts_per_prompt: 2,
            clip_epsilon: 0.2,
            inner_epochs: 2,
            steps: 60,
            temperature: 1.0,
            baseline: Baseline::BatchMean,
            seed: 0,
            init_from_soup: false,
            monitor_window: 5,
            monitor_collapse_fraction: 0.5,
        }
    }
}

impl RlhfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(Error::InvalidArgument("beta must be >= 0".into()));
        }
        if self.learning_rate <= 0.0 || self.temperature <= 0.0 {
            return Err(Error::InvalidArgument(
                "learning_rate and temperature must be > 0".into(),
            ));
        }
        if !(0.0 < self.clip_epsilon && self.clip_epsilon <= 1.0) {
            return Err(Error::InvalidArgument(
                "clip_epsilon must be in (0, 1]".into(),
            ));
        }
        if self.batch_size < 1 || self.rollouts_per_prompt < 1 {
            return Err(Error::InvalidArgument(
                "batch_size and rollouts_per_prompt must be >= 1".into(),
            ));
        }
        if self.monitor_window < 1
            || !(0.0 < self.monitor_collapse_fraction && self.monitor_collapse_fraction < 1.0)
        {
            return Err(Error::InvalidArgument(
                "monitor_window >= 1 and collapse fraction in (0,1) required".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step statistics row (CSV columns: step, mean_reward, mean_kl,
/// mean_resp_len, loss, alarm_flag).
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub mean_resp_len: f64,
    pub loss: f64,
    pub alarm: bool,
}

/// State of one policy-optimization run. The reference and the reward model
/// are frozen at construction and never mutated.
pub struct RlhfRunState {
    pub policy: ParameterVector,
    pub rm: Checkpoint,
    pub step: usize,
    pub stats_log: Vec<StepStats>,
    reference: FrozenReference,
    strategy_echo: serde_json::Value,
    value: Option<ParameterVector>,
    cfg: RlhfConfig,
}

impl RlhfRunState {
    pub fn new(
        sft: &Checkpoint,
        strategy: ReferenceStrategy,
        rm: &Checkpoint,
        cfg: RlhfConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        strategy.validate()?;
        if sft.params.arch != strategy.arch() {
            return Err(Error::ArchMismatch(
                "policy init and reference archs differ".into(),
            ));
        }
        if rm.params.arch != sft.params.arch {
            return Err(Error::ArchMismatch("reward model arch differs".into()));
        }
        if rm.params.head != crate::arch::HeadKind::Reward {
            return Err(Error::LayoutMismatch {
                expected: "reward".into(),
                got: rm.params.head.to_string(),
            });
        }
        let strategy_echo = strategy.describe();
        let reference = strategy.freeze()?;
        let policy = if cfg.init_from_soup && matches!(strategy, ReferenceStrategy::Soup { .. }) {
            reference.params_for_init().clone()
        } else {
            sft.params.clone()
        };
        let value = match cfg.baseline {
            Baseline::BatchMean => None,
            Baseline::LearnedValueHead => {
                // scalar head over the policy-init backbone, zero-initialized
                // so the value starts at 0 everywhere
                let mut v = crate::params::reward_params_from_backbone(&policy, 0)?;
                for x in &mut v.values[v.arch.head_w_offset()..] {
                    *x = 0.0;
                }
                Some(v)
            }
        };
        Ok(Self {
            policy,
            rm: rm.clone(),
            step: 0,
            stats_log: Vec::new(),
            reference,
            strategy_echo,
            value,
            cfg,
        })
    }

    pub fn config(&self) -> &RlhfConfig {
        &self.cfg
    }

    pub fn strategy_echo(&self) -> &serde_json::Value {
        &self.strategy_echo
    }

    /// Payload hashes of the frozen reference parameters, for frozenness
    /// checks and lineage metadata.
    pub fn reference_hashes(&self) -> Vec<String> {
        self.reference.hashes()
    }

    /// Sequence KL of the current policy against the frozen reference (mean
    /// of two KLs for MKL).
    pub fn kl_to_reference(
        &self,
        prompt: &TokenSequence,
        response: &TokenSequence,
    ) -> Result<f64> {
        self.reference.kl(&self.policy, prompt, response)
    }

    /// The literal per-sample objective: -R(x,y) + beta * KL(policy||anchor)
    /// with the strategy-appropriate anchor.
    pub fn objective_loss(
        &self,
        prompt: &TokenSequence,
        response: &TokenSequence,
    ) -> Result<f64> {
        let reward = reward_forward(&self.rm.params, prompt, response)?;
        loss_value(
            &self.policy,
            &LossSpec::Objective {
                reward,
                beta: self.cfg.beta,
                anchor: self.reference.anchor(),
                prompt,
                response,
            },
        )
    }

    /// One optimization step: roll out, shape returns, standardize
    /// advantages, ascend the clipped surrogate with the KL penalty retained
    /// in the loss. Deterministic given `step_seed`.
    pub fn step(&mut self, prompts: &[TokenSequence], step_seed: u64) -> Result<StepStats> {
        if prompts.is_empty() {
            return Err(Error::EmptyInput("rlhf step prompts".into()));
        }
        let cfg = self.cfg.clone();

        // rollouts in canonical prompt order
        let mut raw: Vec<(TokenSequence, TokenSequence, Vec<f64>, f64, f64)> = Vec::new();
        for (pi, prompt) in prompts.iter().enumerate() {
            for k in 0..cfg.rollouts_per_prompt {
                let seed = derive_seed(step_seed, "rollout", &[pi as u64, k as u64]);
                let response = generate(&self.policy, prompt, cfg.temperature, seed)?;
                let old_logprobs = response_token_logprobs(&self.policy, prompt, &response)?;
                let reward = reward_forward(&self.rm.params, prompt, &response)?;
                let kl = self.reference.kl(&self.policy, prompt, &response)?;
                raw.push((prompt.clone(), response, old_logprobs, reward, kl));
            }
        }

        let shaped: Vec<f64> = raw.iter().map(|(_, _, _, r, k)| r - cfg.beta * k).collect();
        let n = shaped.len() as f64;
        let mean_g = shaped.iter().sum::<f64>() / n;
        let var_g = shaped.iter().map(|g| (g - mean_g) * (g - mean_g)).sum::<f64>() / n;
        let std_g = var_g.sqrt().max(1e-6);

        let mut rollouts = Vec::with_capacity(raw.len());
        for (i, (prompt, response, old_logprobs, _, _)) in raw.iter().enumerate() {
            let baseline = match (&cfg.baseline, &self.value) {
                (Baseline::BatchMean, _) => mean_g,
                (Baseline::LearnedValueHead, Some(v)) => {
                    reward_forward(v, prompt, &TokenSequence::response(vec![]))?
                }
                (Baseline::LearnedValueHead, None) => unreachable!("value head initialized"),
            };
            rollouts.push(RolloutSample {
                prompt: prompt.clone(),
                response: response.clone(),
                old_logprobs: old_logprobs.clone(),
                advantage: (shaped[i] - baseline) / std_g,
            });
        }

        let spec = LossSpec::ClippedSurrogate {
            rollouts: &rollouts,
            beta: cfg.beta,
            clip_epsilon: cfg.clip_epsilon,
            anchor: self.reference.anchor(),
        };
        let mut first_loss = loss_value(&self.policy, &spec)?;
        for epoch in 0..cfg.inner_epochs {
            let (loss, grad) = loss_and_grad(&self.policy, &spec).map_err(|e| match e {
                Error::NonFinite { site, .. } => Error::NonFinite {
                    site,
                    step: self.step,
                },
                other => other,
            })?;
            if epoch == 0 {
                first_loss = loss;
            }
            for (w, &g) in self.policy.values.iter_mut().zip(&grad.values) {
                *w = (*w as f64 - cfg.learning_rate * g as f64) as f32;
            }
        }

        if let Some(value) = self.value.as_mut() {
            let targets: Vec<(TokenSequence, f64)> = raw
                .iter()
                .enumerate()
                .map(|(i, (p, _, _, _, _))| (p.clone(), shaped[i]))
                .collect();
            let (_, vgrad) =
                loss_and_grad(value, &LossSpec::ValueRegression { targets: &targets })?;
            for (w, &g) in value.values.iter_mut().zip(&vgrad.values) {
                *w = (*w as f64 - cfg.learning_rate * g as f64) as f32;
            }
        }

        let mean_reward = raw.iter().map(|(_, _, _, r, _)| r).sum::<f64>() / n;
        let mean_kl = raw.iter().map(|(_, _, _, _, k)| k).sum::<f64>() / n;
        let mean_resp_len =
            raw.iter().map(|(_, resp, _, _, _)| resp.len() as f64).sum::<f64>() / n;

        let mut row = StepStats {
            step: self.step,
            mean_reward,
            mean_kl,
            mean_resp_len,
            loss: first_loss,
            alarm: false,
        };
        self.stats_log.push(row.clone());
        row.alarm = kl_hack_monitor(
            &self.stats_log,
            cfg.monitor_collapse_fraction,
            cfg.monitor_window,
        )
        .unwrap_or(false);
        self.stats_log.last_mut().expect("just pushed").alarm = row.alarm;
        self.step += 1;
        Ok(row)
    }
}

/// Length-collapse alarm: compares the trailing-window mean response length
/// against `collapse_fraction` times the initial-window mean. Rejects logs
/// shorter than two windows.
pub fn kl_hack_monitor(
    stats_log: &[StepStats],
    collapse_fraction: f64,
    window: usize,
) -> Result<bool> {
    if !(0.0 < collapse_fraction && collapse_fraction < 1.0) {
        return Err(Error::InvalidArgument(
            "collapse_fraction must be in (0, 1)".into(),
        ));
    }
    if window < 1 || stats_log.len() < 2 * window {
        return Err(Error::InvalidArgument(format!(
            "log of length {} too short for two windows of {window}",
            stats_log.len()
        )));
    }
    let mean_len = |rows: &[StepStats]| {
        rows.iter().map(|r| r.mean_resp_len).sum::<f64>() / rows.len() as f64
    };
    let initial = mean_len(&stats_log[..window]);
    let trailing = mean_len(&stats_log[stats_log.len() - window..]);
    Ok(trailing < collapse_fraction * initial)
}

#[derive(Debug, Clone)]
pub struct RlhfOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepStats>,
}

/// Full policy-optimization run: the policy initializes from the SFT
/// checkpoint (or the soup when configured), takes `cfg.steps` steps over
/// the prompt set, and returns a stage=rlhf checkpoint with the strategy and
/// config echoed in its metadata.
pub fn run_rlhf(
    sft: &Checkpoint,
    strategy: ReferenceStrategy,
    rm: &Checkpoint,
    cfg: &RlhfConfig,
    prompts: &[TokenSequence],
) -> Result<RlhfOutcome> {
    if prompts.is_empty() {
        return Err(Error::EmptyInput("rlhf prompts".into()));
    }
    let mut state = RlhfRunState::new(sft, strategy, rm, cfg.clone())?;
    let n = prompts.len();
    let per_step = cfg.batch_size.min(n).max(1);
    for s in 0..cfg.steps {
        let batch: Vec<TokenSequence> = (0..per_step)
            .map(|j| prompts[(s * per_step + j) % n].clone())
            .collect();
        let step_seed = derive_seed(cfg.seed, "rlhf/step", &[s as u64]);
        state.step(&batch, step_seed)?;
    }

    let mut seeds = BTreeMap::new();
    seeds.insert("rlhf".to_string(), cfg.seed);
    let mut parents = vec![sft.content_hash().to_string(), rm.content_hash().to_string()];
    parents.extend(state.reference_hashes());
    parents.dedup();
    let echo = serde_json::json!({
        "strategy": state.strategy_echo(),
        "config": serde_json::to_value(cfg)?,
    });
    let checkpoint = Checkpoint::new(
        state.policy.clone(),
        Stage::Rlhf,
        seeds,
        parents,
        Some(sft.lineage_base()),
        None,
        Some(echo),
    );
    Ok(RlhfOutcome {
        checkpoint,
        log: state.stats_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ArchDescriptor, HeadKind};
    use crate::params::{init_params, reward_params_from_backbone};
    use crate::taskgen::{gen_prompts, Split, TaskConfig};

    fn arch() -> ArchDescriptor {
        ArchDescriptor::new(12, 4, 4, 8, 8)
    }

    fn fixture() -> (Checkpoint, Checkpoint, Checkpoint, Vec<TokenSequence>) {
        let a = arch();
        let sft0 = Checkpoint::new(
            init_params(a, 1).unwrap(),
            Stage::Sft,
            Default::default(),
            vec![],
            None,
            None,
            None,
        );
        let sft1 = Checkpoint::new(
            init_params(a, 2).unwrap(),
            Stage::Sft,
            Default::default(),
            vec![],
            None,
            None,
            None,
        );
        let rm = Checkpoint::new(
            reward_params_from_backbone(&sft0.params, 3).unwrap(),
            Stage::Rm,
            Default::default(),
            vec![],
            None,
            None,
            None,
        );
        let task = TaskConfig {
            vocab_size: 12,
            ..Default::default()
        };
        let prompts = gen_prompts(&task, Split::RlhfTrain, 4, 5).unwrap();
        (sft0, sft1, rm, prompts)
    }

    /// Reward model whose score increases with the count of `token` in the
    /// final context window.
    fn token_counting_rm(a: ArchDescriptor, token: u32) -> Checkpoint {
        let mut rm = ParameterVector::zeros(a, HeadKind::Reward);
        let d = a.embed_dim as usize;
        rm.values[token as usize * d] = 0.2;
        let wd = a.window_dim();
        for slot in 0..a.context_window as usize {
            rm.values[a.w1_offset() + slot * d] = 1.0; // hidden unit 0 row
        }
        let _ = wd;
        rm.values[a.head_w_offset()] = 1.0;
        Checkpoint::new(rm, Stage::Rm, Default::default(), vec![], None, None, None)
    }

    fn quick_cfg(beta: f64, seed: u64) -> RlhfConfig {
        RlhfConfig {
            beta,
            learning_rate: 0.05,
            batch_size: 2,
            rollouts_per_prompt: 2,
            clip_epsilon: 0.2,
            inner_epochs: 1,
            steps: 3,
            temperature: 1.0,
            baseline: Baseline::BatchMean,
            seed,
            init_from_soup: false,
            monitor_window: 2,
            monitor_collapse_fraction: 0.5,
        }
    }

    #[test]
    fn zero_steps_returns_sft_params() {
        let (sft0, _, rm, prompts) = fixture();
        let cfg = RlhfConfig {
            steps: 0,
            ..quick_cfg(0.1, 1)
        };
        let out = run_rlhf(
            &sft0,
            ReferenceStrategy::Single(sft0.params.clone()),
            &rm,
            &cfg,
            &prompts,
        )
        .unwrap();
        assert_eq!(
            out.checkpoint.params.to_le_bytes(),
            sft0.params.to_le_bytes()
        );
        assert!(out.log.is_empty());
        assert_eq!(out.checkpoint.meta.stage, Stage::Rlhf);
    }

    #[test]
    fn runs_are_bit_deterministic() {
        let (sft0, sft1, rm, prompts) = fixture();
        let strat = || ReferenceStrategy::salsa(sft0.params.clone(), sft1.params.clone(), 0.5);
        let cfg = quick_cfg(0.05, 9);
        let a = run_rlhf(&sft0, strat(), &rm, &cfg, &prompts).unwrap();
        let b = run_rlhf(&sft0, strat(), &rm, &cfg, &prompts).unwrap();
        assert_eq!(
            a.checkpoint.params.to_le_bytes(),
            b.checkpoint.params.to_le_bytes()
        );
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn reference_and_rm_stay_frozen() {
        let (sft0, sft1, rm, prompts) = fixture();
        let ref_hash_before = sft0.params.content_hash();
        let other_hash_before = sft1.params.content_hash();
        let rm_hash_before = rm.params.content_hash();
        let strat = ReferenceStrategy::Mkl {
            reference: sft0.params.clone(),
            other: sft1.params.clone(),
        };
        let mut state = RlhfRunState::new(&sft0, strat, &rm, quick_cfg(0.1, 4)).unwrap();
        let frozen_before = state.reference_hashes();
        for s in 0..3 {
            state.step(&prompts, derive_seed(4, "rlhf/step", &[s])).unwrap();
        }
        assert_eq!(state.reference_hashes(), frozen_before);
        assert_eq!(sft0.params.content_hash(), ref_hash_before);
        assert_eq!(sft1.params.content_hash(), other_hash_before);
        assert_eq!(state.rm.params.content_hash(), rm_hash_before);
    }

    #[test]
    fn objective_identities_hold_exactly() {
        let (sft0, sft1, rm, prompts) = fixture();
        let cfg = quick_cfg(0.3, 1);
        let theta = sft1.params.clone();

        let single = RlhfRunState::new(
            &sft0,
            ReferenceStrategy::Single(theta.clone()),
            &rm,
            cfg.clone(),
        )
        .unwrap();
        let soup_same = RlhfRunState::new(
            &sft0,
            ReferenceStrategy::Soup {
                members: vec![theta.clone(), theta.clone()],
                weights: vec![0.5, 0.5],
            },
            &rm,
            cfg.clone(),
        )
        .unwrap();
        let mkl_same = RlhfRunState::new(
            &sft0,
            ReferenceStrategy::Mkl {
                reference: theta.clone(),
                other: theta.clone(),
            },
            &rm,
            cfg.clone(),
        )
        .unwrap();

        let responses = [
            TokenSequence::response(vec![3, 4, 2]),
            TokenSequence::response(vec![5, 2]),
            TokenSequence::response(vec![]),
        ];
        for prompt in &prompts {
            for resp in &responses {
                let l0 = single.objective_loss(prompt, resp).unwrap();
                assert_eq!(l0, soup_same.objective_loss(prompt, resp).unwrap());
                assert_eq!(l0, mkl_same.objective_loss(prompt, resp).unwrap());
            }
        }

        // beta = 0 collapses the objective to -R for every strategy
        let zero = RlhfConfig {
            beta: 0.0,
            ..cfg.clone()
        };
        let st = RlhfRunState::new(&sft0, ReferenceStrategy::Single(theta), &rm, zero).unwrap();
        let r = reward_forward(&rm.params, &prompts[0], &responses[0]).unwrap();
        assert_eq!(st.objective_loss(&prompts[0], &responses[0]).unwrap(), -r);
    }

    #[test]
    fn beta_zero_collapses_all_strategies_to_one_trajectory() {
        let (sft0, sft1, rm, prompts) = fixture();
        let cfg = quick_cfg(0.0, 11);
        let strategies = [
            ReferenceStrategy::Single(sft0.params.clone()),
            ReferenceStrategy::salsa(sft0.params.clone(), sft1.params.clone(), 0.5),
            ReferenceStrategy::Mkl {
                reference: sft0.params.clone(),
                other: sft1.params.clone(),
            },
        ];
        let runs: Vec<_> = strategies
            .into_iter()
            .map(|s| run_rlhf(&sft0, s, &rm, &cfg, &prompts).unwrap())
            .collect();
        let first = runs[0].checkpoint.params.to_le_bytes();
        for r in &runs[1..] {
            assert_eq!(r.checkpoint.params.to_le_bytes(), first);
        }
    }

    #[test]
    fn single_rollout_batch_mean_gives_zero_advantage() {
        let (sft0, _, rm, prompts) = fixture();
        let cfg = RlhfConfig {
            beta: 0.0,
            batch_size: 1,
            rollouts_per_prompt: 1,
            inner_epochs: 3,
            ..quick_cfg(0.0, 2)
        };
        let mut state = RlhfRunState::new(
            &sft0,
            ReferenceStrategy::Single(sft0.params.clone()),
            &rm,
            cfg,
        )
        .unwrap();
        let before = state.policy.to_le_bytes();
        state.step(&prompts[..1], 123).unwrap();
        // zero advantage and beta = 0: the surrogate moves nothing
        assert_eq!(state.policy.to_le_bytes(), before);
    }

    #[test]
    fn huge_beta_first_step_keeps_kl_at_its_minimum_within_noise() {
        // policy starts at the reference, so the pre-step KL is exactly 0;
        // one step under beta = 1e6 must not move it beyond noise
        let (sft0, _, _, prompts) = fixture();
        let rm = token_counting_rm(arch(), 3);
        for seed in 1..=5u64 {
            let cfg = RlhfConfig {
                steps: 1,
                ..quick_cfg(1e6, seed)
            };
            let mut state = RlhfRunState::new(
                &sft0,
                ReferenceStrategy::Single(sft0.params.clone()),
                &rm,
                cfg,
            )
            .unwrap();
            // fixed probe trajectories for before/after comparison
            let probes: Vec<(TokenSequence, TokenSequence)> = prompts
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let r = generate(&state.policy, p, 1.0, derive_seed(seed, "probe", &[i as u64]))
                        .unwrap();
                    (p.clone(), r)
                })
                .collect();
            let probe_kl = |state: &RlhfRunState| {
                probes
                    .iter()
                    .map(|(p, r)| state.kl_to_reference(p, r).unwrap())
                    .sum::<f64>()
                    / probes.len() as f64
            };
            let before = probe_kl(&state);
            assert_eq!(before, 0.0);
            state.step(&prompts, derive_seed(seed, "rlhf/step", &[0])).unwrap();
            let after = probe_kl(&state);
            assert!(
                after <= before + 0.05,
                "seed {seed}: KL moved {before} -> {after} under huge beta"
            );
        }
    }

    #[test]
    fn strong_beta_dominates_free_optimization_over_steps() {
        // at a step size where the penalty is numerically stable, a strong
        // KL coefficient must end at a lower KL than beta = 0
        let (sft0, _, _, prompts) = fixture();
        let rm = token_counting_rm(arch(), 3);
        for seed in 1..=5 {
            let run = |beta: f64| {
                let cfg = RlhfConfig {
                    steps: 6,
                    ..quick_cfg(beta, seed)
                };
                run_rlhf(
                    &sft0,
                    ReferenceStrategy::Single(sft0.params.clone()),
                    &rm,
                    &cfg,
                    &prompts,
                )
                .unwrap()
            };
            let free = run(0.0);
            let penalized = run(10.0);
            let last_kl = |o: &RlhfOutcome| o.log.last().unwrap().mean_kl;
            assert!(
                last_kl(&penalized) <= last_kl(&free) + 1e-9,
                "seed {seed}: penalized KL {} vs free KL {}",
                last_kl(&penalized),
                last_kl(&free)
            );
        }
    }

    #[test]
    fn reward_climbing_increases_target_token_frequency() {
        let a = arch();
        let target = 4u32;
        let rm = token_counting_rm(a, target);
        let sft = Checkpoint::new(
            init_params(a, 7).unwrap(),
            Stage::Sft,
            Default::default(),
            vec![],
            None,
            None,
            None,
        );
        let task = TaskConfig {
            vocab_size: 12,
            ..Default::default()
        };
        let prompts = gen_prompts(&task, Split::RlhfTrain, 4, 5).unwrap();
        let cfg = RlhfConfig {
            beta: 0.0,
            learning_rate: 0.1,
            batch_size: 4,
            rollouts_per_prompt: 2,
            inner_epochs: 1,
            steps: 200,
            ..quick_cfg(0.0, 3)
        };
        let mut state = RlhfRunState::new(
            &sft,
            ReferenceStrategy::Single(sft.params.clone()),
            &rm,
            cfg.clone(),
        )
        .unwrap();
        let freq_at = |policy: &ParameterVector, seed: u64| {
            let mut hits = 0usize;
            let mut total = 0usize;
            for (i, p) in prompts.iter().enumerate() {
                let r = generate(policy, p, 1.0, derive_seed(seed, "probe", &[i as u64]))
                    .unwrap();
                hits += r.tokens.iter().filter(|&&t| t == target).count();
                total += r.len().max(1);
            }
            hits as f64 / total as f64
        };
        let early = freq_at(&state.policy, 77);
        for s in 0..cfg.steps {
            state
                .step(&prompts, derive_seed(cfg.seed, "rlhf/step", &[s as u64]))
                .unwrap();
        }
        let late = freq_at(&state.policy, 77);
        assert!(
            late > early,
            "token {target} frequency did not climb: {early} -> {late}"
        );
    }

    #[test]
    fn monitor_cases() {
        let row = |len: f64| StepStats {
            step: 0,
            mean_reward: 0.0,
            mean_kl: 0.0,
            mean_resp_len: len,
            loss: 0.0,
            alarm: false,
        };
        let constant: Vec<StepStats> = (0..10).map(|_| row(7.0)).collect();
        assert!(!kl_hack_monitor(&constant, 0.9, 3).unwrap());

        let collapsed: Vec<StepStats> = [10.0, 10.0, 10.0, 10.0, 0.0, 0.0, 0.0]
            .iter()
            .map(|&l| row(l))
            .collect();
        assert!(kl_hack_monitor(&collapsed, 0.5, 3).unwrap());

        let decayed: Vec<StepStats> = [10.0, 9.0, 8.0, 7.0, 6.0].iter().map(|&l| row(l)).collect();
        assert!(!kl_hack_monitor(&decayed, 0.5, 1).unwrap());

        assert!(kl_hack_monitor(&decayed[..1], 0.5, 1).is_err());
        assert!(kl_hack_monitor(&constant, 1.5, 3).is_err());
    }

    #[test]
    fn init_from_soup_flag_selects_soup_params() {
        let (sft0, sft1, rm, _) = fixture();
        let cfg = RlhfConfig {
            init_from_soup: true,
            ..quick_cfg(0.1, 1)
        };
        let state = RlhfRunState::new(
            &sft0,
            ReferenceStrategy::salsa(sft0.params.clone(), sft1.params.clone(), 0.5),
            &rm,
            cfg,
        )
        .unwrap();
        let soup = crate::soup::make_soup(&sft0.params, &sft1.params, 0.5).unwrap();
        assert_eq!(state.policy.to_le_bytes(), soup.to_le_bytes());
    }
}
