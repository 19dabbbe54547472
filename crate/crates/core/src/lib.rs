//! Desk-scale RLHF laboratory.
//!
//! Implements the full alignment pipeline on a deliberately tiny,
//! fully-deterministic stack: a windowed feed-forward language model with
//! hand-derived backprop, a synthetic instruction task with a programmatic
//! reward oracle, multi-seed supervised fine-tuning, Bradley-Terry reward
//! modeling, and clipped-surrogate policy optimization whose KL penalty can
//! anchor to a single reference (PPO), a weight-space soup of references
//! (SALSA), or the mean of several divergences (MKL). Analysis tooling
//! covers interpolation-line and barycentric reward scans, reward
//! distributions, and paired win-rate evaluation with adjusted win rates.

pub mod analysis;
pub mod arch;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod manifest;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod report;
pub mod rlhf;
pub mod rng;
pub mod soup;
pub mod taskgen;
pub mod tokens;
pub mod training;

pub use analysis::{
    adjusted_win_rate_hundredths, evaluate_winrate, judge_pair, reward_distribution, scan_line,
    scan_plane, win_rate_hundredths, EvalGenConfig, HistogramConfig, JudgeConfig, ScanCoord,
    ScanPoint, Scorer, Verdict, WinRateReport,
};
pub use arch::{ArchDescriptor, HeadKind, PARAM_LAYOUT_VERSION};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_header, load_checkpoint_verified, save_checkpoint,
    Checkpoint, CheckpointMeta, Stage, CHECKPOINT_FORMAT_VERSION,
};
pub use error::{Error, Result};
pub use loss::{kl_categorical, kl_sequence, loss_and_grad, loss_value, KlAnchor, LossSpec, RolloutSample};
pub use manifest::ExperimentManifest;
pub use model::{
    generate, generate_greedy, response_token_logprobs, reward_forward, sequence_logprob,
    token_dist,
};
pub use params::{axpy, init_params, init_params_with_head, reward_params_from_backbone, ParameterVector};
pub use pipeline::{run_pipeline, PipelineReport, PIPELINE_FORMAT_VERSION};
pub use rlhf::{
    kl_hack_monitor, run_rlhf, Baseline, ReferenceStrategy, RlhfConfig, RlhfOutcome, RlhfRunState,
    StepStats,
};
pub use soup::{barycentric_combine, make_soup, make_soup_n, soup_checkpoint, weighted_soup, SoupSpec};
pub use taskgen::{
    gen_corpus, gen_demos, gen_preference_pairs, gen_prompts, oracle_reward, PairBatch,
    PolicySampler, PreferencePair, ResponseSampler, ScriptedSampler, Split, TaskConfig,
    UniformRandomSampler,
};
pub use tokens::{
    CategoricalDist, SequenceKind, TokenSequence, BOS_TOKEN, EOS_TOKEN, FIRST_CONTENT_TOKEN,
    PAD_TOKEN,
};
pub use training::{
    pairwise_accuracy, pretrain_base, reward_pair_loss, train_reward_model, train_sft,
    LossLogRow, LrSchedule, OptimizerKind, TrainConfig, TrainOutcome,
};
