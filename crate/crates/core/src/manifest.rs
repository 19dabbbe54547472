//! Experiment manifest: one human-editable TOML file that pins every seed,
//! config, and strategy cell of a pipeline run, so any artifact can be
//! regenerated bit-exactly from the manifest alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::ArchDescriptor;
use crate::error::{Error, Result};
use crate::rlhf::{Baseline, RlhfConfig};
use crate::taskgen::TaskConfig;
use crate::training::{LrSchedule, OptimizerKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSection {
    pub vocab_size: u32,
    pub context_window: u32,
    pub embed_dim: u32,
    pub hidden_dim: u32,
    pub max_response_len: u32,
}

impl ArchSection {
    pub fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor::new(
            self.vocab_size,
            self.context_window,
            self.embed_dim,
            self.hidden_dim,
            self.max_response_len,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSection {
    pub n_target_tokens: u32,
    pub coverage_bonus: f64,
    pub repetition_penalty: f64,
    pub length_penalty_per_token: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub seed: u64,
    pub corpus_sequences: usize,
    pub corpus_noise_rate: f64,
    pub corpus_random_fraction: f64,
    pub sft_prompts: usize,
    pub demo_noise_rate: f64,
    pub rm_train_prompts: usize,
    pub rm_train_rounds: usize,
    pub rm_heldout_prompts: usize,
    pub rm_heldout_rounds: usize,
    pub pair_min_margin: f64,
    pub pair_scripted_noise: f64,
    pub rlhf_prompts: usize,
    pub eval_prompts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedsSection {
    pub base: u64,
    pub sft: Vec<u64>,
    pub rm: u64,
    pub rlhf: u64,
}

/// RLHF settings shared by every strategy cell; beta comes from the
/// strategy grid and the seed from [seeds].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlhfSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rollouts_per_prompt: usize,
    pub clip_epsilon: f64,
    pub inner_epochs: usize,
    pub steps: usize,
    pub temperature: f64,
    pub baseline: Baseline,
    pub init_from_soup: bool,
    pub monitor_window: usize,
    pub monitor_collapse_fraction: f64,
}

impl RlhfSection {
    pub fn to_config(&self, beta: f64, seed: u64) -> RlhfConfig {
        RlhfConfig {
            beta,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            rollouts_per_prompt: self.rollouts_per_prompt,
            clip_epsilon: self.clip_epsilon,
            inner_epochs: self.inner_epochs,
            steps: self.steps,
            temperature: self.temperature,
            baseline: self.baseline,
            seed,
            init_from_soup: self.init_from_soup,
            monitor_window: self.monitor_window,
            monitor_collapse_fraction: self.monitor_collapse_fraction,
        }
    }
}

/// One row of the strategy matrix. `alpha` applies to kind = "salsa",
/// `n` to kind = "salsa-n".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEntry {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub betas: Vec<f64>,
}

impl StrategyEntry {
    pub fn validate(&self, n_sft_seeds: usize) -> Result<()> {
        if self.betas.is_empty() {
            return Err(Error::Manifest(format!(
                "strategy '{}' needs at least one beta",
                self.kind
            )));
        }
        match self.kind.as_str() {
            "ppo" => Ok(()),
            "salsa" | "mkl" => {
                if n_sft_seeds < 2 {
                    return Err(Error::Manifest(format!(
                        "strategy '{}' needs at least 2 SFT seeds",
                        self.kind
                    )));
                }
                Ok(())
            }
            "salsa-n" => {
                let n = self.n.ok_or_else(|| {
                    Error::Manifest("strategy 'salsa-n' needs field n".into())
                })?;
                if n < 1 || n > n_sft_seeds {
                    return Err(Error::Manifest(format!(
                        "salsa-n n = {n} outside 1..={n_sft_seeds}"
                    )));
                }
                Ok(())
            }
            other => Err(Error::Manifest(format!("unknown strategy kind '{other}'"))),
        }
    }

    pub fn cell_id(&self, beta: f64) -> String {
        match self.kind.as_str() {
            "salsa" => format!("salsa-a{:.2}-b{beta:.3}", self.alpha.unwrap_or(0.5)),
            "salsa-n" => format!("salsa{}-b{beta:.3}", self.n.unwrap_or(2)),
            kind => format!("{kind}-b{beta:.3}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub tie_threshold: f64,
    pub temperature: f64,
    pub greedy: bool,
    pub samples_per_prompt: usize,
    pub scan_alphas: Vec<f64>,
    pub scan_samples_per_prompt: usize,
    pub plane_extent: f64,
    pub plane_density: usize,
    pub hist_lo: f64,
    pub hist_hi: f64,
    pub hist_bins: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    pub arch: ArchSection,
    pub task: TaskSection,
    pub data: DataSection,
    pub seeds: SeedsSection,
    pub pretrain: TrainConfig,
    pub sft: TrainConfig,
    pub rm: TrainConfig,
    pub rlhf: RlhfSection,
    #[serde(rename = "strategy")]
    pub strategies: Vec<StrategyEntry>,
    pub eval: EvalSection,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self {
            name: "default".into(),
            out_dir: None,
            arch: ArchSection {
                vocab_size: 19,
                context_window: 8,
                embed_dim: 16,
                hidden_dim: 64,
                max_response_len: 16,
            },
            task: TaskSection {
                n_target_tokens: 4,
                coverage_bonus: 1.0,
                repetition_penalty: 0.5,
                length_penalty_per_token: 0.05,
            },
            data: DataSection {
                seed: 12,
                corpus_sequences: 256,
                corpus_noise_rate: 0.3,
                corpus_random_fraction: 0.25,
                sft_prompts: 160,
                demo_noise_rate: 0.1,
                rm_train_prompts: 300,
                rm_train_rounds: 2,
                rm_heldout_prompts: 150,
                rm_heldout_rounds: 2,
                pair_min_margin: 1.0,
                pair_scripted_noise: 0.1,
                rlhf_prompts: 64,
                eval_prompts: 120,
            },
            seeds: SeedsSection {
                base: 1,
                sft: vec![101, 202, 303],
                rm: 7,
                rlhf: 1,
            },
            pretrain: TrainConfig {
                learning_rate: 1e-2,
                batch_size: 32,
                epochs: 3,
                shuffle_seed: 0,
                shuffle_data: true,
                init_jitter_scale: 0.0,
                optimizer: OptimizerKind::Sgd,
                weight_decay: 0.0,
                lr_schedule: LrSchedule::LinearDecay,
            },
            sft: TrainConfig {
                learning_rate: 1e-2,
                batch_size: 16,
                epochs: 8,
                shuffle_seed: 0,
                shuffle_data: true,
                init_jitter_scale: 1e-2,
                optimizer: OptimizerKind::Sgd,
                weight_decay: 0.0,
                lr_schedule: LrSchedule::LinearDecay,
            },
            rm: TrainConfig {
                learning_rate: 5e-3,
                batch_size: 16,
                epochs: 10,
                shuffle_seed: 3,
                shuffle_data: true,
                init_jitter_scale: 0.0,
                optimizer: OptimizerKind::AdaptiveMoment {
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8,
                },
                weight_decay: 0.001,
                lr_schedule: LrSchedule::LinearDecay,
            },
            rlhf: RlhfSection {
                learning_rate: 0.05,
                batch_size: 16,
                rollouts_per_prompt: 2,
                clip_epsilon: 0.2,
                inner_epochs: 2,
                steps: 60,
                temperature: 1.0,
                baseline: Baseline::BatchMean,
                init_from_soup: false,
                monitor_window: 5,
                monitor_collapse_fraction: 0.5,
            },
            strategies: vec![
                StrategyEntry {
                    kind: "ppo".into(),
                    alpha: None,
                    n: None,
                    betas: vec![0.2, 0.01],
                },
                StrategyEntry {
                    kind: "salsa".into(),
                    alpha: Some(0.5),
                    n: None,
                    betas: vec![0.01],
                },
                StrategyEntry {
                    kind: "mkl".into(),
                    alpha: None,
                    n: None,
                    betas: vec![0.01],
                },
                StrategyEntry {
                    kind: "salsa-n".into(),
                    alpha: None,
                    n: Some(3),
                    betas: vec![0.01],
                },
            ],
            eval: EvalSection {
                tie_threshold: 0.25,
                temperature: 0.7,
                greedy: false,
                samples_per_prompt: 4,
                scan_alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
                scan_samples_per_prompt: 4,
                plane_extent: 1.5,
                plane_density: 6,
                hist_lo: -2.0,
                hist_hi: 5.0,
                hist_bins: 28,
                seed: 5,
            },
        }
    }
}

impl ExperimentManifest {
    pub fn task_config(&self) -> TaskConfig {
        TaskConfig {
            vocab_size: self.arch.vocab_size,
            n_target_tokens_per_prompt: self.task.n_target_tokens,
            repetition_penalty: self.task.repetition_penalty,
            length_penalty_per_token: self.task.length_penalty_per_token,
            coverage_bonus: self.task.coverage_bonus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.descriptor().validate()?;
        self.task_config().validate()?;
        self.pretrain.validate()?;
        self.sft.validate()?;
        self.rm.validate()?;
        if self.seeds.sft.is_empty() {
            return Err(Error::Manifest("at least one SFT seed required".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Manifest("at least one strategy required".into()));
        }
        for s in &self.strategies {
            s.validate(self.seeds.sft.len())?;
        }
        self.rlhf.to_config(0.0, 0).validate()?;
        if self.eval.tie_threshold < 0.0 {
            return Err(Error::Manifest("tie_threshold must be >= 0".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let manifest: Self =
            toml::from_str(text).map_err(|e| Error::Manifest(format!("parse error: {e}")))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Manifest(format!("encode error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// All (strategy, beta) cells in manifest order.
    pub fn cells(&self) -> Vec<(StrategyEntry, f64)> {
        self.strategies
            .iter()
            .flat_map(|s| s.betas.iter().map(move |&b| (s.clone(), b)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_manifest_round_trips_through_toml() {
        let m = ExperimentManifest::default();
        m.validate().unwrap();
        let text = m.to_toml_string().unwrap();
        let back = ExperimentManifest::from_toml_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn cells_expand_the_beta_grid() {
        let m = ExperimentManifest::default();
        let cells = m.cells();
        assert_eq!(cells.len(), 5);
        assert_eq!(cells[0].0.cell_id(cells[0].1), "ppo-b0.200");
        assert_eq!(cells[1].0.cell_id(cells[1].1), "ppo-b0.010");
        assert_eq!(cells[2].0.cell_id(cells[2].1), "salsa-a0.50-b0.010");
        assert_eq!(cells[3].0.cell_id(cells[3].1), "mkl-b0.010");
        assert_eq!(cells[4].0.cell_id(cells[4].1), "salsa3-b0.010");
    }

    #[test]
    fn invalid_manifests_are_rejected() {
        let mut m = ExperimentManifest::default();
        m.strategies[3].n = Some(9);
        assert!(m.validate().is_err());

        let mut m = ExperimentManifest::default();
        m.seeds.sft = vec![1];
        assert!(m.validate().is_err()); // salsa needs two seeds

        let mut m = ExperimentManifest::default();
        m.strategies[0].kind = "dpo".into();
        assert!(m.validate().is_err());

        let mut m = ExperimentManifest::default();
        m.strategies[0].betas.clear();
        assert!(m.validate().is_err());
    }
}
