//! Base pretraining, multi-seed supervised fine-tuning, and reward-model
//! training on preference pairs.
//!
//! All trainers are single-threaded and bit-deterministic given their
//! inputs, configuration, and seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::arch::ArchDescriptor;
use crate::checkpoint::{Checkpoint, Stage};
use crate::error::{Error, Result};
use crate::loss::{loss_and_grad, LossSpec};
use crate::model::reward_forward;
use crate::params::{init_params, reward_params_from_backbone, ParameterVector};
use crate::rng::{derive_seed, rng_from_seed};
use crate::taskgen::PreferencePair;
use crate::tokens::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Momentum { mu: f64 },
    AdaptiveMoment { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    LinearDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle_seed: u64,
    /// Set false to consume the data in given order every epoch.
    pub shuffle_data: bool,
    pub init_jitter_scale: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 4,
            shuffle_seed: 0,
            shuffle_data: true,
            init_jitter_scale: 0.0,
            optimizer: OptimizerKind::Sgd,
            weight_decay: 0.0,
            lr_schedule: LrSchedule::LinearDecay,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.init_jitter_scale < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(
                "init_jitter_scale and weight_decay must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the per-step loss log (CSV columns: step, split, loss).
#[derive(Debug, Clone, PartialEq)]
pub struct LossLogRow {
    pub step: usize,
    pub split: String,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossLogRow>,
}

/// First-moment / second-moment state for the configured optimizer,
/// accumulated in f64.
pub(crate) struct OptimizerState {
    velocity: Vec<f64>,
    second: Vec<f64>,
    t: usize,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            velocity: vec![0.0; n],
            second: vec![0.0; n],
            t: 0,
        }
    }

    /// Applies one update in place. Weight decay is decoupled from the
    /// gradient-based step.
    pub fn apply(
        &mut self,
        params: &mut ParameterVector,
        grad: &ParameterVector,
        kind: OptimizerKind,
        lr: f64,
        weight_decay: f64,
    ) {
        self.t += 1;
        match kind {
            OptimizerKind::Sgd => {
                for (w, &g) in params.values.iter_mut().zip(&grad.values) {
                    let decayed = *w as f64 * (1.0 - lr * weight_decay);
                    *w = (decayed - lr * g as f64) as f32;
                }
            }
            OptimizerKind::Momentum { mu } => {
                for ((w, &g), v) in params
                    .values
                    .iter_mut()
                    .zip(&grad.values)
                    .zip(&mut self.velocity)
                {
                    *v = mu * *v + g as f64;
                    let decayed = *w as f64 * (1.0 - lr * weight_decay);
                    *w = (decayed - lr * *v) as f32;
                }
            }
            OptimizerKind::AdaptiveMoment { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (((w, &g), m), v) in params
                    .values
                    .iter_mut()
                    .zip(&grad.values)
                    .zip(&mut self.velocity)
                    .zip(&mut self.second)
                {
                    let gf = g as f64;
                    *m = beta1 * *m + (1.0 - beta1) * gf;
                    *v = beta2 * *v + (1.0 - beta2) * gf * gf;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    let decayed = *w as f64 * (1.0 - lr * weight_decay);
                    *w = (decayed - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
                }
            }
        }
    }
}

fn epoch_order(n: usize, shuffle: bool, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut rng_from_seed(seed));
    }
    order
}

fn schedule_lr(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.learning_rate,
        LrSchedule::LinearDecay => {
            cfg.learning_rate * (1.0 - step as f64 / total_steps.max(1) as f64)
        }
    }
}

/// Generic epoch/batch loop shared by the three trainers. `make_spec`
/// receives the indices of the current batch and owns the batch clone.
fn train_loop<F>(
    mut params: ParameterVector,
    n_items: usize,
    cfg: &TrainConfig,
    shuffle_seed_root: u64,
    split: &str,
    mut run_batch: F,
) -> Result<(ParameterVector, Vec<LossLogRow>)>
where
    F: FnMut(&ParameterVector, &[usize]) -> Result<(f64, ParameterVector)>,
{
    cfg.validate()?;
    if n_items == 0 {
        return Err(Error::EmptyInput(format!("{split} dataset")));
    }
    let batches_per_epoch = n_items.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut opt = OptimizerState::new(params.len());
    let mut log = Vec::with_capacity(total_steps);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(
            n_items,
            cfg.shuffle_data,
            derive_seed(shuffle_seed_root, "train/epoch-order", &[epoch as u64]),
        );
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = run_batch(&params, batch).map_err(|e| match e {
                Error::NonFinite { site, .. } => Error::NonFinite { site, step },
                other => other,
            })?;
            let lr = schedule_lr(cfg, step, total_steps);
            opt.apply(&mut params, &grad, cfg.optimizer, lr, cfg.weight_decay);
            log.push(LossLogRow {
                step,
                split: split.to_string(),
                loss,
            });
            step += 1;
        }
    }
    Ok((params, log))
}

fn seed_map(entries: &[(&str, u64)]) -> BTreeMap<String, u64> {
    entries
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect()
}

/// Next-token cross-entropy training from a fresh initialization; the shared
/// starting point every fine-tune descends from.
pub fn pretrain_base(
    arch: ArchDescriptor,
    corpus: &[TokenSequence],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let params = init_params(arch, seed)?;
    let (params, log) = train_loop(
        params,
        corpus.len(),
        cfg,
        cfg.shuffle_seed,
        "pretrain",
        |p, batch| {
            let seqs: Vec<TokenSequence> = batch.iter().map(|&i| corpus[i].clone()).collect();
            loss_and_grad(p, &LossSpec::NextTokenCrossEntropy { sequences: &seqs })
        },
    )?;
    let checkpoint = Checkpoint::new(
        params,
        Stage::Base,
        seed_map(&[("init", seed), ("shuffle", cfg.shuffle_seed)]),
        vec![],
        None,
        None,
        Some(serde_json::to_value(cfg)?),
    );
    Ok(TrainOutcome { checkpoint, log })
}

/// Supervised fine-tuning: cross-entropy on response tokens conditioned on
/// prompts. The single `seed` controls both the initial jitter and the data
/// order, realizing "different random seed" fine-tunes of one base.
pub fn train_sft(
    base: &Checkpoint,
    demos: &[(TokenSequence, TokenSequence)],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if base.meta.stage != Stage::Base {
        return Err(Error::InvalidArgument(format!(
            "SFT must start from a base checkpoint, got stage {}",
            base.meta.stage
        )));
    }
    let params = base
        .params
        .jittered(cfg.init_jitter_scale, derive_seed(seed, "sft/jitter", &[]));
    let (params, log) = train_loop(
        params,
        demos.len(),
        cfg,
        derive_seed(seed, "sft/shuffle", &[]),
        "sft",
        |p, batch| {
            let examples: Vec<(TokenSequence, TokenSequence)> =
                batch.iter().map(|&i| demos[i].clone()).collect();
            loss_and_grad(p, &LossSpec::ResponseCrossEntropy { examples: &examples })
        },
    )?;
    let checkpoint = Checkpoint::new(
        params,
        Stage::Sft,
        seed_map(&[("sft", seed)]),
        vec![base.content_hash().to_string()],
        Some(base.lineage_base()),
        None,
        Some(serde_json::to_value(cfg)?),
    );
    Ok(TrainOutcome { checkpoint, log })
}

/// The Bradley-Terry pair loss -ln sigmoid(R(x, chosen) - R(x, rejected));
/// strictly positive for any finite score gap.
pub fn reward_pair_loss(rm: &ParameterVector, pair: &PreferencePair) -> Result<f64> {
    let pairs = std::slice::from_ref(pair);
    crate::loss::loss_value(rm, &LossSpec::PreferencePairs { pairs })
}

/// Trains a reward model: backbone initialized from the SFT checkpoint,
/// scalar head freshly sampled from the config seed, mean pair loss
/// minimized over the preference dataset.
pub fn train_reward_model(
    sft: &Checkpoint,
    pairs: &[PreferencePair],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("preference pairs".into()));
    }
    let params =
        reward_params_from_backbone(&sft.params, derive_seed(cfg.shuffle_seed, "rm/head", &[]))?;
    let (params, log) = train_loop(
        params,
        pairs.len(),
        cfg,
        derive_seed(cfg.shuffle_seed, "rm/shuffle", &[]),
        "rm",
        |p, batch| {
            let items: Vec<PreferencePair> = batch.iter().map(|&i| pairs[i].clone()).collect();
            loss_and_grad(p, &LossSpec::PreferencePairs { pairs: &items })
        },
    )?;
    let checkpoint = Checkpoint::new(
        params,
        Stage::Rm,
        seed_map(&[("rm", cfg.shuffle_seed)]),
        vec![sft.content_hash().to_string()],
        Some(sft.lineage_base()),
        None,
        Some(serde_json::to_value(cfg)?),
    );
    Ok(TrainOutcome { checkpoint, log })
}

/// Fraction of pairs ranked correctly by the reward model; exact ties count
/// one half.
pub fn pairwise_accuracy(rm: &Checkpoint, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("preference pairs".into()));
    }
    let mut score = 0.0;
    for pair in pairs {
        let rw = reward_forward(&rm.params, &pair.prompt, &pair.chosen)?;
        let rl = reward_forward(&rm.params, &pair.prompt, &pair.rejected)?;
        if rw > rl {
            score += 1.0;
        } else if rw == rl {
            score += 0.5;
        }
    }
    Ok(score / pairs.len() as f64)
}
