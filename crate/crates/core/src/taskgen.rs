//! Synthetic instruction-following task with a programmatic reward oracle.
//!
//! A prompt names a set of target tokens (BOS followed by the targets in
//! ascending order); a good response emits each target once and stops. The
//! oracle scores coverage minus repetition and length penalties, which makes
//! "higher reward" objectively checkable and gives reward models a learnable
//! signal. Prompt sets for the four pipeline splits partition the space of
//! target subsets, so splits are disjoint by construction.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::generate;
use crate::params::ParameterVector;
use crate::rng::{derive_seed, rng_from_seed};
use crate::tokens::{TokenSequence, BOS_TOKEN, EOS_TOKEN, FIRST_CONTENT_TOKEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub vocab_size: u32,
    pub n_target_tokens_per_prompt: u32,
    pub repetition_penalty: f64,
    pub length_penalty_per_token: f64,
    pub coverage_bonus: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            vocab_size: 19,
            n_target_tokens_per_prompt: 4,
            repetition_penalty: 0.5,
            length_penalty_per_token: 0.05,
            coverage_bonus: 1.0,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::InvalidArgument("vocab_size must be >= 4".into()));
        }
        if self.n_target_tokens_per_prompt >= self.vocab_size - FIRST_CONTENT_TOKEN {
            return Err(Error::InvalidArgument(format!(
                "n_target_tokens_per_prompt {} must be < vocab_size - 3 = {}",
                self.n_target_tokens_per_prompt,
                self.vocab_size - FIRST_CONTENT_TOKEN
            )));
        }
        if self.repetition_penalty < 0.0
            || self.length_penalty_per_token < 0.0
            || self.coverage_bonus <= 0.0
        {
            return Err(Error::InvalidArgument(
                "penalties must be >= 0 and coverage_bonus > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn content_token_count(&self) -> u32 {
        self.vocab_size - FIRST_CONTENT_TOKEN
    }

    /// Reward of a perfect response: every target once, no noise.
    pub fn max_reward(&self) -> f64 {
        let n = self.n_target_tokens_per_prompt as f64;
        self.coverage_bonus * n - self.length_penalty_per_token * n
    }

    /// Target token ids named by a prompt (everything after BOS).
    pub fn targets_of(&self, prompt: &TokenSequence) -> Vec<u32> {
        prompt
            .tokens
            .iter()
            .copied()
            .filter(|&t| t >= FIRST_CONTENT_TOKEN)
            .collect()
    }
}

/// Dataset splits; each draws prompts from its own share of the target
/// subset space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    SftTrain,
    RmTrain,
    RlhfTrain,
    Eval,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::SftTrain => "sft-train",
            Split::RmTrain => "rm-train",
            Split::RlhfTrain => "rlhf-train",
            Split::Eval => "eval",
        }
    }

    fn index(&self) -> usize {
        match self {
            Split::SftTrain => 0,
            Split::RmTrain => 1,
            Split::RlhfTrain => 2,
            Split::Eval => 3,
        }
    }
}

/// Share of the subset space per split, in percent. rm-train gets the
/// largest block because preference-pair generation consumes the most
/// distinct prompts.
const SPLIT_PERCENT: [usize; 4] = [25, 35, 15, 25];

/// A labeled preference: `chosen` beats `rejected` by `oracle_margin` under
/// the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: TokenSequence,
    pub chosen: TokenSequence,
    pub rejected: TokenSequence,
    pub oracle_margin: f64,
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// k-subset of 0..m with the given lexicographic rank, ascending.
fn unrank_combination(mut rank: u128, m: u64, k: u64) -> Vec<u64> {
    let mut out = Vec::with_capacity(k as usize);
    let mut next = 0u64;
    let mut remaining = k;
    while remaining > 0 {
        let with_next = binomial(m - next - 1, remaining - 1);
        if rank < with_next {
            out.push(next);
            remaining -= 1;
        } else {
            rank -= with_next;
        }
        next += 1;
    }
    out
}

const MAX_SUBSET_SPACE: u128 = 1 << 22;

/// Generates `n` prompts for a split. Deterministic in (cfg, split, seed);
/// different splits under the same cfg/seed never share a prompt.
pub fn gen_prompts(
    cfg: &TaskConfig,
    split: Split,
    n: usize,
    seed: u64,
) -> Result<Vec<TokenSequence>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let m = cfg.content_token_count() as u64;
    let k = cfg.n_target_tokens_per_prompt as u64;
    let total = binomial(m, k);
    if total > MAX_SUBSET_SPACE {
        return Err(Error::InvalidArgument(format!(
            "target subset space {total} too large to partition"
        )));
    }
    let total = total as usize;

    let mut indices: Vec<usize> = (0..total).collect();
    let mut rng = rng_from_seed(derive_seed(seed, "taskgen/partition", &[]));
    indices.shuffle(&mut rng);

    let cum: Vec<usize> = {
        let mut acc = 0;
        let mut cuts = vec![0usize];
        for p in SPLIT_PERCENT {
            acc += p;
            cuts.push(total * acc / 100);
        }
        // last boundary covers rounding remainder
        *cuts.last_mut().expect("nonempty") = total;
        cuts
    };
    let s = split.index();
    let block = &indices[cum[s]..cum[s + 1]];
    if n > block.len() {
        return Err(Error::PromptSpaceExhausted {
            requested: n,
            available: block.len(),
        });
    }

    let prompts = block[..n]
        .iter()
        .map(|&rank| {
            let subset = unrank_combination(rank as u128, m, k);
            let mut tokens = vec![BOS_TOKEN];
            tokens.extend(subset.iter().map(|&t| t as u32 + FIRST_CONTENT_TOKEN));
            TokenSequence::prompt(tokens)
        })
        .collect();
    Ok(prompts)
}

/// Ground-truth reward: coverage bonus per distinct target present in the
/// response body, minus the repetition penalty per token that repeats an
/// earlier body token, minus the length penalty per body token. The body is
/// the response without its terminating EOS. Pure and deterministic.
pub fn oracle_reward(cfg: &TaskConfig, prompt: &TokenSequence, response: &TokenSequence) -> f64 {
    let targets = cfg.targets_of(prompt);
    let body = response.body();

    let mut seen: HashSet<u32> = HashSet::new();
    let mut repeats = 0usize;
    for &t in body {
        if !seen.insert(t) {
            repeats += 1;
        }
    }
    let covered = targets.iter().filter(|t| seen.contains(t)).count();

    cfg.coverage_bonus * covered as f64
        - cfg.repetition_penalty * repeats as f64
        - cfg.length_penalty_per_token * body.len() as f64
}

/// Scripted near-optimal response: targets in random order, then EOS, with
/// each target replaced by a random non-target content token with
/// probability `noise_rate`.
pub(crate) fn scripted_response(
    cfg: &TaskConfig,
    prompt: &TokenSequence,
    noise_rate: f64,
    seed: u64,
) -> TokenSequence {
    let mut rng = rng_from_seed(seed);
    let mut targets = cfg.targets_of(prompt);
    targets.shuffle(&mut rng);
    let non_targets: Vec<u32> = (FIRST_CONTENT_TOKEN..cfg.vocab_size)
        .filter(|t| !targets.contains(t))
        .collect();
    let mut tokens = Vec::with_capacity(targets.len() + 1);
    for &t in &targets {
        if noise_rate > 0.0 && rng.gen::<f64>() < noise_rate {
            tokens.push(non_targets[rng.gen_range(0..non_targets.len())]);
        } else {
            tokens.push(t);
        }
    }
    tokens.push(EOS_TOKEN);
    TokenSequence::response(tokens)
}

/// Generates one demonstration per prompt. Deterministic in seed.
pub fn gen_demos(
    cfg: &TaskConfig,
    prompts: &[TokenSequence],
    noise_rate: f64,
    seed: u64,
) -> Result<Vec<(TokenSequence, TokenSequence)>> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&noise_rate) {
        return Err(Error::InvalidArgument(format!(
            "noise_rate must be in [0, 1), got {noise_rate}"
        )));
    }
    Ok(prompts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = derive_seed(seed, "taskgen/demo", &[i as u64]);
            (p.clone(), scripted_response(cfg, p, noise_rate, s))
        })
        .collect())
}

/// Anything that can produce a response for a prompt from a seed.
pub trait ResponseSampler {
    fn sample(&self, cfg: &TaskConfig, prompt: &TokenSequence, seed: u64) -> Result<TokenSequence>;
}

/// The demo script as a sampler.
pub struct ScriptedSampler {
    pub noise_rate: f64,
}

impl ResponseSampler for ScriptedSampler {
    fn sample(&self, cfg: &TaskConfig, prompt: &TokenSequence, seed: u64) -> Result<TokenSequence> {
        Ok(scripted_response(cfg, prompt, self.noise_rate, seed))
    }
}

/// Uniform random content tokens with a uniform random body length.
pub struct UniformRandomSampler {
    pub max_body_len: u32,
}

impl ResponseSampler for UniformRandomSampler {
    fn sample(&self, cfg: &TaskConfig, prompt: &TokenSequence, seed: u64) -> Result<TokenSequence> {
        let _ = prompt;
        let mut rng = rng_from_seed(seed);
        let len = rng.gen_range(0..=self.max_body_len);
        let mut tokens: Vec<u32> = (0..len)
            .map(|_| rng.gen_range(FIRST_CONTENT_TOKEN..cfg.vocab_size))
            .collect();
        tokens.push(EOS_TOKEN);
        Ok(TokenSequence::response(tokens))
    }
}

/// Samples from a trained policy at a fixed temperature.
pub struct PolicySampler<'a> {
    pub params: &'a ParameterVector,
    pub temperature: f64,
}

impl ResponseSampler for PolicySampler<'_> {
    fn sample(&self, _cfg: &TaskConfig, prompt: &TokenSequence, seed: u64) -> Result<TokenSequence> {
        generate(self.params, prompt, self.temperature, seed)
    }
}

/// Preference pairs plus the number of prompts dropped by the margin filter.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub pairs: Vec<PreferencePair>,
    pub dropped: usize,
}

/// For each prompt, draws one response per sampler (both samplers see the
/// same per-prompt seed), labels by oracle reward, and keeps the pair only
/// if the margin reaches `min_margin`. Identical samplers therefore always
/// produce margin-0 pairs, all of which are dropped.
pub fn gen_preference_pairs(
    cfg: &TaskConfig,
    prompts: &[TokenSequence],
    sampler_a: &dyn ResponseSampler,
    sampler_b: &dyn ResponseSampler,
    min_margin: f64,
    seed: u64,
) -> Result<PairBatch> {
    cfg.validate()?;
    if min_margin <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "min_margin must be > 0, got {min_margin}"
        )));
    }
    let mut pairs = Vec::new();
    let mut dropped = 0usize;
    for (i, prompt) in prompts.iter().enumerate() {
        let s = derive_seed(seed, "taskgen/pair", &[i as u64]);
        let resp_a = sampler_a.sample(cfg, prompt, s)?;
        let resp_b = sampler_b.sample(cfg, prompt, s)?;
        let ra = oracle_reward(cfg, prompt, &resp_a);
        let rb = oracle_reward(cfg, prompt, &resp_b);
        let margin = (ra - rb).abs();
        if margin < min_margin {
            dropped += 1;
            continue;
        }
        let (chosen, rejected) = if ra > rb {
            (resp_a, resp_b)
        } else {
            (resp_b, resp_a)
        };
        pairs.push(PreferencePair {
            prompt: prompt.clone(),
            chosen,
            rejected,
            oracle_margin: margin,
        });
    }
    Ok(PairBatch { pairs, dropped })
}

/// Unconditioned sequences for base pretraining: task-format episodes
/// (BOS, a random target set in ascending order, a noisy shuffled copy,
/// EOS) mixed with plain random-token streams at `random_fraction`. Target
/// sets are drawn iid from the full subset space, the way generic
/// pretraining data ignores downstream splits; the episodes give every
/// fine-tune the same circuit layout to start from.
pub fn gen_corpus(
    cfg: &TaskConfig,
    n: usize,
    noise_rate: f64,
    random_fraction: f64,
    seed: u64,
) -> Result<Vec<TokenSequence>> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&noise_rate) || !(0.0..=1.0).contains(&random_fraction) {
        return Err(Error::InvalidArgument(
            "noise_rate in [0,1) and random_fraction in [0,1] required".into(),
        ));
    }
    let k = cfg.n_target_tokens_per_prompt as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_from_seed(derive_seed(seed, "taskgen/corpus", &[i as u64]));
        let mut tokens = vec![BOS_TOKEN];
        if rng.gen::<f64>() < random_fraction {
            let len = rng.gen_range(2..=(2 * k as u32 + 2));
            for _ in 0..len {
                tokens.push(rng.gen_range(FIRST_CONTENT_TOKEN..cfg.vocab_size));
            }
        } else {
            let mut all: Vec<u32> = (FIRST_CONTENT_TOKEN..cfg.vocab_size).collect();
            all.shuffle(&mut rng);
            let mut targets: Vec<u32> = all[..k].to_vec();
            targets.sort_unstable();
            tokens.extend_from_slice(&targets);
            let prompt = TokenSequence::prompt(tokens.clone());
            let episode_seed = derive_seed(seed, "taskgen/corpus-episode", &[i as u64]);
            let response = scripted_response(cfg, &prompt, noise_rate, episode_seed);
            tokens.extend_from_slice(&response.tokens[..response.len() - 1]);
        }
        tokens.push(EOS_TOKEN);
        out.push(TokenSequence::prompt(tokens));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Line-delimited JSON dataset files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PromptRecord {
    prompt: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct DemoRecord {
    prompt: Vec<u32>,
    response: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    prompt: Vec<u32>,
    chosen: Vec<u32>,
    rejected: Vec<u32>,
    margin: f64,
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut file, &r)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_prompts_jsonl(path: &Path, prompts: &[TokenSequence]) -> Result<()> {
    write_jsonl(
        path,
        prompts.iter().map(|p| PromptRecord {
            prompt: p.tokens.clone(),
        }),
    )
}

pub fn read_prompts_jsonl(path: &Path) -> Result<Vec<TokenSequence>> {
    Ok(read_jsonl::<PromptRecord>(path)?
        .into_iter()
        .map(|r| TokenSequence::prompt(r.prompt))
        .collect())
}

pub fn write_demos_jsonl(path: &Path, demos: &[(TokenSequence, TokenSequence)]) -> Result<()> {
    write_jsonl(
        path,
        demos.iter().map(|(p, r)| DemoRecord {
            prompt: p.tokens.clone(),
            response: r.tokens.clone(),
        }),
    )
}

pub fn read_demos_jsonl(path: &Path) -> Result<Vec<(TokenSequence, TokenSequence)>> {
    read_jsonl::<DemoRecord>(path)?
        .into_iter()
        .map(|r| {
            Ok((
                TokenSequence::prompt(r.prompt),
                TokenSequence::try_response(r.response)?,
            ))
        })
        .collect()
}

pub fn write_pairs_jsonl(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    write_jsonl(
        path,
        pairs.iter().map(|p| PairRecord {
            prompt: p.prompt.tokens.clone(),
            chosen: p.chosen.tokens.clone(),
            rejected: p.rejected.tokens.clone(),
            margin: p.oracle_margin,
        }),
    )
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<PreferencePair>> {
    read_jsonl::<PairRecord>(path)?
        .into_iter()
        .map(|r| {
            Ok(PreferencePair {
                prompt: TokenSequence::prompt(r.prompt),
                chosen: TokenSequence::try_response(r.chosen)?,
                rejected: TokenSequence::try_response(r.rejected)?,
                oracle_margin: r.margin,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::SequenceKind;

    fn cfg() -> TaskConfig {
        TaskConfig::default()
    }

    /// Independently coded oracle: sorted-scan duplicate counting and
    /// explicit membership tests, no shared code with `oracle_reward`.
    fn oracle_reward_reference(
        cfg: &TaskConfig,
        prompt: &TokenSequence,
        response: &TokenSequence,
    ) -> f64 {
        let mut body: Vec<u32> = response.tokens.clone();
        if body.last() == Some(&EOS_TOKEN) {
            body.pop();
        }
        let length = body.len();

        let mut sorted = body.clone();
        sorted.sort_unstable();
        let mut distinct = sorted.clone();
        distinct.dedup();
        let repeats = length - distinct.len();

        let mut covered = 0usize;
        for t in &prompt.tokens[1..] {
            if distinct.binary_search(t).is_ok() {
                covered += 1;
            }
        }
        covered as f64 * cfg.coverage_bonus
            - repeats as f64 * cfg.repetition_penalty
            - length as f64 * cfg.length_penalty_per_token
    }

    #[test]
    fn prompts_are_deterministic_and_distinct() {
        let a = gen_prompts(&cfg(), Split::SftTrain, 5, 1).unwrap();
        let b = gen_prompts(&cfg(), Split::SftTrain, 5, 1).unwrap();
        assert_eq!(a, b);
        for p in &a {
            assert_eq!(p.tokens[0], BOS_TOKEN);
            let targets = &p.tokens[1..];
            assert_eq!(targets.len(), 4);
            let mut sorted = targets.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 4, "targets must be distinct");
        }
        let c = gen_prompts(&cfg(), Split::SftTrain, 5, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn splits_are_disjoint_exhaustively() {
        let c = cfg();
        // draw every prompt each split can offer and intersect the sets
        let splits = [Split::SftTrain, Split::RmTrain, Split::RlhfTrain, Split::Eval];
        let mut all: Vec<HashSet<Vec<u32>>> = Vec::new();
        let mut total = 0;
        for s in splits {
            let max = match gen_prompts(&c, s, usize::MAX, 7) {
                Err(Error::PromptSpaceExhausted { available, .. }) => available,
                other => panic!("expected exhaustion probe, got {other:?}"),
            };
            let prompts = gen_prompts(&c, s, max, 7).unwrap();
            total += prompts.len();
            all.push(prompts.into_iter().map(|p| p.tokens).collect());
        }
        assert_eq!(total, 1820); // C(16, 4)
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                assert!(all[i].is_disjoint(&all[j]), "splits {i} and {j} overlap");
            }
        }
    }

    #[test]
    fn prompt_request_beyond_block_is_rejected() {
        assert!(matches!(
            gen_prompts(&cfg(), Split::RlhfTrain, 100_000, 1),
            Err(Error::PromptSpaceExhausted { .. })
        ));
    }

    #[test]
    fn oracle_empty_response_is_zero() {
        let p = gen_prompts(&cfg(), Split::Eval, 1, 3).unwrap().remove(0);
        assert_eq!(oracle_reward(&cfg(), &p, &TokenSequence::response(vec![])), 0.0);
        // a bare EOS scores zero too: empty body
        assert_eq!(
            oracle_reward(&cfg(), &p, &TokenSequence::response(vec![EOS_TOKEN])),
            0.0
        );
    }

    #[test]
    fn oracle_exact_target_set_scores_coverage_times_n() {
        let mut c = cfg();
        c.repetition_penalty = 0.0;
        c.length_penalty_per_token = 0.0;
        let p = gen_prompts(&c, Split::Eval, 1, 3).unwrap().remove(0);
        let mut tokens = p.tokens[1..].to_vec();
        tokens.push(EOS_TOKEN);
        let r = oracle_reward(&c, &p, &TokenSequence::response(tokens));
        assert_eq!(r, c.coverage_bonus * 4.0);
    }

    #[test]
    fn oracle_matches_independent_implementation() {
        let c = cfg();
        let prompts = gen_prompts(&c, Split::Eval, 20, 5).unwrap();
        let mut rng = rng_from_seed(99);
        for p in &prompts {
            for _ in 0..20 {
                let len = rng.gen_range(0..=16);
                let mut toks: Vec<u32> = (0..len)
                    .map(|_| rng.gen_range(FIRST_CONTENT_TOKEN..c.vocab_size))
                    .collect();
                if rng.gen::<bool>() {
                    toks.push(EOS_TOKEN);
                }
                let resp = TokenSequence::response(toks);
                let got = oracle_reward(&c, p, &resp);
                let want = oracle_reward_reference(&c, p, &resp);
                assert!((got - want).abs() < 1e-12, "got {got} want {want}");
            }
        }
    }

    #[test]
    fn noiseless_demos_achieve_max_reward() {
        let c = cfg();
        let prompts = gen_prompts(&c, Split::SftTrain, 30, 2).unwrap();
        let demos = gen_demos(&c, &prompts, 0.0, 4).unwrap();
        for (p, r) in &demos {
            assert!((oracle_reward(&c, p, r) - c.max_reward()).abs() < 1e-12);
            assert_eq!(*r.tokens.last().unwrap(), EOS_TOKEN);
        }
    }

    #[test]
    fn noisy_demos_score_below_clean_demos() {
        let c = cfg();
        let prompts = gen_prompts(&c, Split::SftTrain, 100, 2).unwrap();
        let clean = gen_demos(&c, &prompts, 0.0, 4).unwrap();
        let noisy = gen_demos(&c, &prompts, 0.9, 4).unwrap();
        let mean = |demos: &[(TokenSequence, TokenSequence)]| {
            demos
                .iter()
                .map(|(p, r)| oracle_reward(&c, p, r))
                .sum::<f64>()
                / demos.len() as f64
        };
        assert!(mean(&noisy) < mean(&clean));
    }

    #[test]
    fn demos_are_deterministic() {
        let c = cfg();
        let prompts = gen_prompts(&c, Split::SftTrain, 10, 2).unwrap();
        assert_eq!(
            gen_demos(&c, &prompts, 0.3, 4).unwrap(),
            gen_demos(&c, &prompts, 0.3, 4).unwrap()
        );
    }

    #[test]
    fn identical_samplers_yield_no_pairs() {
        let c = cfg();
        let prompts = gen_prompts(&c, Split::RmTrain, 50, 2).unwrap();
        let a = ScriptedSampler { noise_rate: 0.2 };
        let b = ScriptedSampler { noise_rate: 0.2 };
        let batch = gen_preference_pairs(&c, &prompts, &a, &b, 0.5, 9).unwrap();
        assert!(batch.pairs.is_empty());
        assert_eq!(batch.dropped, 50);
    }

    #[test]
    fn scripted_vs_uniform_survives_margin_filter() {
        let c = cfg();
        let prompts = gen_prompts(&c, Split::RmTrain, 200, 2).unwrap();
        let a = ScriptedSampler { noise_rate: 0.0 };
        let b = UniformRandomSampler { max_body_len: 15 };
        let batch =
            gen_preference_pairs(&c, &prompts, &a, &b, c.coverage_bonus, 9).unwrap();
        assert!(
            batch.pairs.len() >= 180,
            "only {} of 200 pairs survived",
            batch.pairs.len()
        );
        for pair in &batch.pairs {
            let rc = oracle_reward(&c, &pair.prompt, &pair.chosen);
            let rr = oracle_reward(&c, &pair.prompt, &pair.rejected);
            assert!(rc > rr);
            assert!((rc - rr - pair.oracle_margin).abs() < 1e-12);
        }
    }

    #[test]
    fn relabeling_never_flips_pairs() {
        let c = cfg();
        let prompts = gen_prompts(&c, Split::RmTrain, 100, 3).unwrap();
        let a = ScriptedSampler { noise_rate: 0.3 };
        let b = UniformRandomSampler { max_body_len: 15 };
        let batch = gen_preference_pairs(&c, &prompts, &a, &b, 0.25, 11).unwrap();
        for pair in &batch.pairs {
            assert!(
                oracle_reward(&c, &pair.prompt, &pair.chosen)
                    > oracle_reward(&c, &pair.prompt, &pair.rejected)
            );
        }
    }

    #[test]
    fn jsonl_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg();
        let prompts = gen_prompts(&c, Split::SftTrain, 8, 2).unwrap();
        let demos = gen_demos(&c, &prompts, 0.1, 4).unwrap();
        let pairs = gen_preference_pairs(
            &c,
            &prompts,
            &ScriptedSampler { noise_rate: 0.0 },
            &UniformRandomSampler { max_body_len: 15 },
            0.5,
            7,
        )
        .unwrap()
        .pairs;

        let pp = dir.path().join("prompts.jsonl");
        write_prompts_jsonl(&pp, &prompts).unwrap();
        assert_eq!(read_prompts_jsonl(&pp).unwrap(), prompts);

        let dp = dir.path().join("demos.jsonl");
        write_demos_jsonl(&dp, &demos).unwrap();
        assert_eq!(read_demos_jsonl(&dp).unwrap(), demos);

        let qp = dir.path().join("pairs.jsonl");
        write_pairs_jsonl(&qp, &pairs).unwrap();
        assert_eq!(read_pairs_jsonl(&qp).unwrap(), pairs);
    }

    #[test]
    fn corpus_is_deterministic_and_well_formed() {
        let c = cfg();
        let corpus = gen_corpus(&c, 20, 0.3, 0.25, 5).unwrap();
        assert_eq!(corpus, gen_corpus(&c, 20, 0.3, 0.25, 5).unwrap());
        for s in &corpus {
            assert_eq!(s.tokens[0], BOS_TOKEN);
            assert_eq!(*s.tokens.last().unwrap(), EOS_TOKEN);
            assert_eq!(s.kind, SequenceKind::Prompt);
            assert!(s.len() >= 4 && s.len() <= 12);
        }
    }
}
