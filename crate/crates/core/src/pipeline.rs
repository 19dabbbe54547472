//! End-to-end experiment pipeline: data generation, pretraining, multi-seed
//! SFT, reward modeling, soups, policy optimization over the strategy/beta
//! grid, landscape scans, reward distributions, pairwise evaluation, and the
//! final summary report.
//!
//! Every stage is cached under a content key (configuration plus input
//! artifact hashes plus format versions); reruns with an unchanged manifest
//! hit the cache, and any change invalidates exactly the stages downstream
//! of it. A failed stage leaves earlier stages' artifacts and stamps in
//! place.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::analysis::{
    evaluate_winrate, reward_distribution, scan_line, scan_plane, EvalGenConfig, HistogramConfig,
    JudgeConfig, Scorer, WinRateReport,
};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::error::{Error, Result};
use crate::manifest::{ExperimentManifest, StrategyEntry};
use crate::params::hex_string;
use crate::report;
use crate::rlhf::{run_rlhf, ReferenceStrategy};
use crate::rng::derive_seed;
use crate::soup::soup_checkpoint;
use crate::taskgen::{
    gen_corpus, gen_demos, gen_preference_pairs, gen_prompts, read_demos_jsonl, read_pairs_jsonl,
    read_prompts_jsonl, write_demos_jsonl, write_pairs_jsonl, write_prompts_jsonl, PairBatch,
    ScriptedSampler, Split, UniformRandomSampler,
};
use crate::training::{pairwise_accuracy, pretrain_base, train_reward_model, train_sft};

/// Bumping this invalidates every cached stage.
pub const PIPELINE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub out_dir: PathBuf,
    pub executed: Vec<String>,
    pub cached: Vec<String>,
    pub rm_holdout_accuracy: Option<f64>,
    pub summary: Vec<(String, WinRateReport)>,
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex_string(&Sha256::digest(&bytes)))
}

fn stage_key(parts: &[String]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(PIPELINE_FORMAT_VERSION.to_le_bytes());
    for p in parts {
        hasher.update([0x1f]);
        hasher.update(p.as_bytes());
    }
    hex_string(&hasher.finalize())
}

struct Stager {
    out: PathBuf,
    quiet: bool,
    executed: Vec<String>,
    cached: Vec<String>,
}

impl Stager {
    fn run<F>(&mut self, name: &str, key: &str, outputs: &[PathBuf], body: F) -> Result<()>
    where
        F: FnOnce() -> Result<()>,
    {
        let stamp = self.out.join(".stamps").join(format!("{name}.txt"));
        let hit = std::fs::read_to_string(&stamp)
            .map(|s| s.trim() == key)
            .unwrap_or(false)
            && outputs.iter().all(|p| p.exists());
        if hit {
            if !self.quiet {
                eprintln!("[{name}] cached");
            }
            self.cached.push(name.to_string());
            return Ok(());
        }
        if !self.quiet {
            eprintln!("[{name}] running");
        }
        body().map_err(|e| Error::StageFailed {
            stage: name.to_string(),
            source: Box::new(e),
        })?;
        std::fs::create_dir_all(stamp.parent().expect("stamp has parent"))?;
        std::fs::write(&stamp, key)?;
        self.executed.push(name.to_string());
        Ok(())
    }
}

struct Paths {
    corpus: PathBuf,
    demos: PathBuf,
    rm_train: PathBuf,
    rm_holdout: PathBuf,
    prompts_rlhf: PathBuf,
    prompts_eval: PathBuf,
    base: PathBuf,
    rm: PathBuf,
    rm_gate: PathBuf,
    line_scan_csv: PathBuf,
    line_scan_svg: PathBuf,
    plane_scan_csv: PathBuf,
    plane_scan_svg: PathBuf,
    winrates_csv: PathBuf,
    winrates_svg: PathBuf,
    summary_csv: PathBuf,
    summary_svg: PathBuf,
}

impl Paths {
    fn new(out: &Path) -> Self {
        Self {
            corpus: out.join("data/corpus.jsonl"),
            demos: out.join("data/demos.jsonl"),
            rm_train: out.join("data/rm_train_pairs.jsonl"),
            rm_holdout: out.join("data/rm_holdout_pairs.jsonl"),
            prompts_rlhf: out.join("data/prompts_rlhf.jsonl"),
            prompts_eval: out.join("data/prompts_eval.jsonl"),
            base: out.join("checkpoints/base.ckpt"),
            rm: out.join("checkpoints/rm.ckpt"),
            rm_gate: out.join("eval/rm_gate.txt"),
            line_scan_csv: out.join("scans/line_scan.csv"),
            line_scan_svg: out.join("scans/line_scan.svg"),
            plane_scan_csv: out.join("scans/plane_scan.csv"),
            plane_scan_svg: out.join("scans/plane_scan.svg"),
            winrates_csv: out.join("eval/winrates.csv"),
            winrates_svg: out.join("eval/winrates.svg"),
            summary_csv: out.join("report/summary.csv"),
            summary_svg: out.join("report/summary.svg"),
        }
    }

    fn sft(&self, out: &Path, i: usize) -> PathBuf {
        out.join(format!("checkpoints/sft_{i}.ckpt"))
    }

    fn soup(&self, out: &Path, tag: &str) -> PathBuf {
        out.join(format!("checkpoints/soup_{tag}.ckpt"))
    }

    fn rlhf_ckpt(&self, out: &Path, cell: &str) -> PathBuf {
        out.join(format!("checkpoints/rlhf_{cell}.ckpt"))
    }

    fn rlhf_log(&self, out: &Path, cell: &str) -> PathBuf {
        out.join(format!("logs/rlhf_{cell}.csv"))
    }

    fn dist(&self, out: &Path, tag: &str) -> PathBuf {
        out.join(format!("dist/{tag}.csv"))
    }

    fn dist_svg(&self, out: &Path, tag: &str) -> PathBuf {
        out.join(format!("dist/{tag}.svg"))
    }
}

fn json_of<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string(v)?)
}

/// Soup tags needed by the strategy matrix (deduplicated, manifest order).
fn soup_tags(manifest: &ExperimentManifest) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut tags: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    for s in &manifest.strategies {
        let entry = match s.kind.as_str() {
            "salsa" => {
                let alpha = s.alpha.unwrap_or(0.5);
                (
                    format!("salsa-a{alpha:.2}"),
                    vec![0, 1],
                    vec![1.0 - alpha, alpha],
                )
            }
            "salsa-n" => {
                let n = s.n.unwrap_or(2);
                (
                    format!("salsa{n}"),
                    (0..n).collect(),
                    vec![1.0 / n as f64; n],
                )
            }
            _ => continue,
        };
        if !tags.iter().any(|(t, _, _)| *t == entry.0) {
            tags.push(entry);
        }
    }
    tags
}

fn build_strategy(
    entry: &StrategyEntry,
    sfts: &[Checkpoint],
) -> Result<ReferenceStrategy> {
    Ok(match entry.kind.as_str() {
        "ppo" => ReferenceStrategy::Single(sfts[0].params.clone()),
        "salsa" => ReferenceStrategy::salsa(
            sfts[0].params.clone(),
            sfts[1].params.clone(),
            entry.alpha.unwrap_or(0.5),
        ),
        "mkl" => ReferenceStrategy::Mkl {
            reference: sfts[0].params.clone(),
            other: sfts[1].params.clone(),
        },
        "salsa-n" => {
            let n = entry.n.unwrap_or(2);
            ReferenceStrategy::salsa_n(sfts[..n].iter().map(|c| c.params.clone()).collect())
        }
        other => {
            return Err(Error::Manifest(format!("unknown strategy kind '{other}'")));
        }
    })
}

/// Runs the pipeline into `out_dir`, skipping stages whose cache keys match.
pub fn run_pipeline(
    manifest: &ExperimentManifest,
    out_dir: &Path,
    quiet: bool,
) -> Result<PipelineReport> {
    manifest.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("manifest.toml"), manifest.to_toml_string()?)?;

    let paths = Paths::new(out_dir);
    let mut stager = Stager {
        out: out_dir.to_path_buf(),
        quiet,
        executed: Vec::new(),
        cached: Vec::new(),
    };
    let task = manifest.task_config();
    let arch = manifest.arch.descriptor();
    let max_body = manifest.arch.max_response_len.saturating_sub(1);

    // -- gen-data ----------------------------------------------------------
    let data_outputs = [
        paths.corpus.clone(),
        paths.demos.clone(),
        paths.rm_train.clone(),
        paths.rm_holdout.clone(),
        paths.prompts_rlhf.clone(),
        paths.prompts_eval.clone(),
    ];
    let key = stage_key(&[
        "gen-data".into(),
        json_of(&manifest.arch)?,
        json_of(&manifest.task)?,
        json_of(&manifest.data)?,
    ]);
    {
        let d = &manifest.data;
        stager.run("gen-data", &key, &data_outputs, || {
            let corpus = gen_corpus(
                &task,
                d.corpus_sequences,
                d.corpus_noise_rate,
                d.corpus_random_fraction,
                derive_seed(d.seed, "pipeline/corpus", &[]),
            )?;
            write_prompts_jsonl(&paths.corpus, &corpus)?;

            let sft_prompts = gen_prompts(&task, Split::SftTrain, d.sft_prompts, d.seed)?;
            let demos = gen_demos(
                &task,
                &sft_prompts,
                d.demo_noise_rate,
                derive_seed(d.seed, "pipeline/demos", &[]),
            )?;
            write_demos_jsonl(&paths.demos, &demos)?;

            let rm_prompts = gen_prompts(
                &task,
                Split::RmTrain,
                d.rm_train_prompts + d.rm_heldout_prompts,
                d.seed,
            )?;
            let scripted = ScriptedSampler {
                noise_rate: d.pair_scripted_noise,
            };
            let uniform = UniformRandomSampler {
                max_body_len: max_body,
            };
            let collect = |prompts: &[crate::tokens::TokenSequence],
                               rounds: usize,
                               tag: &str|
             -> Result<Vec<crate::taskgen::PreferencePair>> {
                let mut pairs = Vec::new();
                for r in 0..rounds {
                    let PairBatch { pairs: mut batch, .. } = gen_preference_pairs(
                        &task,
                        prompts,
                        &scripted,
                        &uniform,
                        d.pair_min_margin,
                        derive_seed(d.seed, tag, &[r as u64]),
                    )?;
                    pairs.append(&mut batch);
                }
                Ok(pairs)
            };
            let train_pairs =
                collect(&rm_prompts[..d.rm_train_prompts], d.rm_train_rounds, "pipeline/rm-train")?;
            let holdout_pairs = collect(
                &rm_prompts[d.rm_train_prompts..],
                d.rm_heldout_rounds,
                "pipeline/rm-holdout",
            )?;
            write_pairs_jsonl(&paths.rm_train, &train_pairs)?;
            write_pairs_jsonl(&paths.rm_holdout, &holdout_pairs)?;

            let rlhf_prompts = gen_prompts(&task, Split::RlhfTrain, d.rlhf_prompts, d.seed)?;
            write_prompts_jsonl(&paths.prompts_rlhf, &rlhf_prompts)?;
            let eval_prompts = gen_prompts(&task, Split::Eval, d.eval_prompts, d.seed)?;
            write_prompts_jsonl(&paths.prompts_eval, &eval_prompts)?;
            Ok(())
        })?;
    }

    // -- pretrain ----------------------------------------------------------
    let key = stage_key(&[
        "pretrain".into(),
        json_of(&manifest.arch)?,
        json_of(&manifest.pretrain)?,
        manifest.seeds.base.to_string(),
        file_sha256(&paths.corpus)?,
    ]);
    stager.run("pretrain", &key, &[paths.base.clone()], || {
        let corpus = read_prompts_jsonl(&paths.corpus)?;
        let out = pretrain_base(arch, &corpus, &manifest.pretrain, manifest.seeds.base)?;
        save_checkpoint(&paths.base, &out.checkpoint)?;
        report::write_train_log_csv(&out_dir.join("logs/pretrain_loss.csv"), &out.log)?;
        Ok(())
    })?;

    // -- sft x k -----------------------------------------------------------
    let sft_paths: Vec<PathBuf> = (0..manifest.seeds.sft.len())
        .map(|i| paths.sft(out_dir, i))
        .collect();
    let key = stage_key(&[
        "sft".into(),
        json_of(&manifest.sft)?,
        json_of(&manifest.seeds.sft)?,
        file_sha256(&paths.base)?,
        file_sha256(&paths.demos)?,
    ]);
    stager.run("sft", &key, &sft_paths, || {
        let base = load_checkpoint(&paths.base)?;
        let demos = read_demos_jsonl(&paths.demos)?;
        for (i, &seed) in manifest.seeds.sft.iter().enumerate() {
            let out = train_sft(&base, &demos, &manifest.sft, seed)?;
            save_checkpoint(&paths.sft(out_dir, i), &out.checkpoint)?;
            report::write_train_log_csv(&out_dir.join(format!("logs/sft_{i}_loss.csv")), &out.log)?;
        }
        Ok(())
    })?;

    // -- reward model ------------------------------------------------------
    let key = stage_key(&[
        "reward".into(),
        json_of(&manifest.rm)?,
        manifest.seeds.rm.to_string(),
        file_sha256(&sft_paths[0])?,
        file_sha256(&paths.rm_train)?,
        file_sha256(&paths.rm_holdout)?,
    ]);
    stager.run(
        "reward",
        &key,
        &[paths.rm.clone(), paths.rm_gate.clone()],
        || {
            let sft0 = load_checkpoint(&sft_paths[0])?;
            let train = read_pairs_jsonl(&paths.rm_train)?;
            let holdout = read_pairs_jsonl(&paths.rm_holdout)?;
            let mut cfg = manifest.rm.clone();
            cfg.shuffle_seed = manifest.seeds.rm;
            let out = train_reward_model(&sft0, &train, &cfg)?;
            let acc = pairwise_accuracy(&out.checkpoint, &holdout)?;
            save_checkpoint(&paths.rm, &out.checkpoint)?;
            report::write_train_log_csv(&out_dir.join("logs/rm_loss.csv"), &out.log)?;
            std::fs::create_dir_all(paths.rm_gate.parent().expect("parent"))?;
            std::fs::write(
                &paths.rm_gate,
                format!("holdout_pairs,{}\nholdout_pairwise_accuracy,{acc:.6}\n", holdout.len()),
            )?;
            Ok(())
        },
    )?;

    // -- soups --------------------------------------------------------------
    let tags = soup_tags(manifest);
    let soup_outputs: Vec<PathBuf> = tags.iter().map(|(t, _, _)| paths.soup(out_dir, t)).collect();
    let mut sft_hashes = Vec::new();
    for p in &sft_paths {
        sft_hashes.push(file_sha256(p)?);
    }
    let key = stage_key(&[
        "soup".into(),
        json_of(&tags.iter().map(|(t, m, w)| (t.clone(), m.clone(), w.clone())).collect::<Vec<_>>())?,
        json_of(&sft_hashes)?,
    ]);
    stager.run("soup", &key, &soup_outputs, || {
        if tags.is_empty() {
            return Ok(());
        }
        let sfts: Vec<Checkpoint> = sft_paths
            .iter()
            .map(|p| load_checkpoint(p))
            .collect::<Result<_>>()?;
        for (tag, member_idx, weights) in &tags {
            let members: Vec<&Checkpoint> = member_idx.iter().map(|&i| &sfts[i]).collect();
            let soup = soup_checkpoint(&members, weights, false)?;
            save_checkpoint(&paths.soup(out_dir, tag), &soup)?;
        }
        Ok(())
    })?;

    // -- rlhf grid -----------------------------------------------------------
    let cells = manifest.cells();
    let cell_ids: Vec<String> = cells.iter().map(|(s, b)| s.cell_id(*b)).collect();
    let mut rlhf_outputs = Vec::new();
    for id in &cell_ids {
        rlhf_outputs.push(paths.rlhf_ckpt(out_dir, id));
        rlhf_outputs.push(paths.rlhf_log(out_dir, id));
    }
    let key = stage_key(&[
        "rlhf".into(),
        json_of(&manifest.rlhf)?,
        json_of(&cell_ids)?,
        manifest.seeds.rlhf.to_string(),
        json_of(&sft_hashes)?,
        file_sha256(&paths.rm)?,
        file_sha256(&paths.prompts_rlhf)?,
    ]);
    stager.run("rlhf", &key, &rlhf_outputs, || {
        let sfts: Vec<Checkpoint> = sft_paths
            .iter()
            .map(|p| load_checkpoint(p))
            .collect::<Result<_>>()?;
        let rm = load_checkpoint(&paths.rm)?;
        let prompts = read_prompts_jsonl(&paths.prompts_rlhf)?;
        for (entry, beta) in &cells {
            let id = entry.cell_id(*beta);
            let strategy = build_strategy(entry, &sfts)?;
            let cfg = manifest.rlhf.to_config(*beta, manifest.seeds.rlhf);
            let out = run_rlhf(&sfts[0], strategy, &rm, &cfg, &prompts)?;
            save_checkpoint(&paths.rlhf_ckpt(out_dir, &id), &out.checkpoint)?;
            report::write_steps_csv(&paths.rlhf_log(out_dir, &id), &out.log)?;
        }
        Ok(())
    })?;

    // -- scans ----------------------------------------------------------------
    let scan_gen = EvalGenConfig {
        temperature: manifest.eval.temperature,
        greedy: manifest.eval.greedy,
        samples_per_prompt: manifest.eval.scan_samples_per_prompt,
    };
    let mut scan_outputs = vec![paths.line_scan_csv.clone(), paths.line_scan_svg.clone()];
    let do_plane = manifest.seeds.sft.len() >= 3;
    if do_plane {
        scan_outputs.push(paths.plane_scan_csv.clone());
        scan_outputs.push(paths.plane_scan_svg.clone());
    }
    let key = stage_key(&[
        "scans".into(),
        json_of(&manifest.eval)?,
        json_of(&sft_hashes)?,
        file_sha256(&paths.rm)?,
        file_sha256(&paths.prompts_eval)?,
    ]);
    stager.run("scans", &key, &scan_outputs, || {
        if manifest.seeds.sft.len() < 2 {
            return Err(Error::Manifest("line scan needs two SFT seeds".into()));
        }
        let sfts: Vec<Checkpoint> = sft_paths
            .iter()
            .map(|p| load_checkpoint(p))
            .collect::<Result<_>>()?;
        let rm = load_checkpoint(&paths.rm)?;
        let prompts = read_prompts_jsonl(&paths.prompts_eval)?;
        let scorer = Scorer::RewardModel(&rm);
        let points = scan_line(
            &sfts[0],
            &sfts[1],
            &manifest.eval.scan_alphas,
            &prompts,
            &scorer,
            &scan_gen,
            manifest.eval.seed,
        )?;
        report::write_line_scan_csv(&paths.line_scan_csv, &points)?;
        report::write_line_scan_svg(&paths.line_scan_svg, "reward along the SFT interpolation line", &points)?;
        if do_plane {
            let points = scan_plane(
                &sfts[0],
                &sfts[1],
                &sfts[2],
                manifest.eval.plane_extent,
                manifest.eval.plane_density,
                &prompts,
                &scorer,
                &scan_gen,
                manifest.eval.seed,
            )?;
            report::write_plane_scan_csv(&paths.plane_scan_csv, &points)?;
            report::write_plane_scan_svg(
                &paths.plane_scan_svg,
                "reward over the barycentric plane of three SFTs",
                &points,
            )?;
        }
        Ok(())
    })?;

    // -- reward distributions ---------------------------------------------------
    let hist = HistogramConfig {
        lo: manifest.eval.hist_lo,
        hi: manifest.eval.hist_hi,
        bins: manifest.eval.hist_bins,
    };
    let eval_gen = EvalGenConfig {
        temperature: manifest.eval.temperature,
        greedy: manifest.eval.greedy,
        samples_per_prompt: manifest.eval.samples_per_prompt,
    };
    let mut dist_tags: Vec<String> = vec!["sft_0".into()];
    dist_tags.extend(cell_ids.iter().cloned());
    let dist_outputs: Vec<PathBuf> = dist_tags
        .iter()
        .flat_map(|t| [paths.dist(out_dir, t), paths.dist_svg(out_dir, t)])
        .collect();
    let mut rlhf_hashes = Vec::new();
    for id in &cell_ids {
        rlhf_hashes.push(file_sha256(&paths.rlhf_ckpt(out_dir, id))?);
    }
    let key = stage_key(&[
        "dist".into(),
        json_of(&manifest.eval)?,
        json_of(&dist_tags)?,
        json_of(&rlhf_hashes)?,
        sft_hashes[0].clone(),
        file_sha256(&paths.rm)?,
        file_sha256(&paths.prompts_eval)?,
    ]);
    stager.run("dist", &key, &dist_outputs, || {
        let rm = load_checkpoint(&paths.rm)?;
        let prompts = read_prompts_jsonl(&paths.prompts_eval)?;
        let scorer = Scorer::RewardModel(&rm);
        for tag in &dist_tags {
            let ckpt = if tag == "sft_0" {
                load_checkpoint(&sft_paths[0])?
            } else {
                load_checkpoint(&paths.rlhf_ckpt(out_dir, tag))?
            };
            let dist = reward_distribution(
                &ckpt,
                &prompts,
                &scorer,
                &eval_gen,
                &hist,
                manifest.eval.seed,
            )?;
            report::write_distribution_csv(&paths.dist(out_dir, tag), &dist)?;
            report::write_distribution_svg(
                &paths.dist_svg(out_dir, tag),
                &format!("reward distribution: {tag}"),
                &dist,
            )?;
        }
        Ok(())
    })?;

    // -- pairwise evaluation -----------------------------------------------------
    let primary_ppo = cell_ids.iter().find(|id| id.starts_with("ppo-")).cloned();
    let key = stage_key(&[
        "eval".into(),
        json_of(&manifest.eval)?,
        json_of(&cell_ids)?,
        json_of(&rlhf_hashes)?,
        sft_hashes[0].clone(),
        file_sha256(&paths.prompts_eval)?,
    ]);
    stager.run(
        "eval",
        &key,
        &[paths.winrates_csv.clone(), paths.winrates_svg.clone()],
        || {
            let prompts = read_prompts_jsonl(&paths.prompts_eval)?;
            let sft0 = load_checkpoint(&sft_paths[0])?;
            let judge = JudgeConfig {
                scorer: Scorer::Oracle(&task),
                tau: manifest.eval.tie_threshold,
                gen: eval_gen,
            };
            let mut rows: Vec<(String, WinRateReport)> = Vec::new();
            let ppo_ckpt = primary_ppo
                .as_ref()
                .map(|id| load_checkpoint(&paths.rlhf_ckpt(out_dir, id)))
                .transpose()?;
            for id in &cell_ids {
                let ckpt = load_checkpoint(&paths.rlhf_ckpt(out_dir, id))?;
                if let (Some(ppo_id), Some(ppo)) = (&primary_ppo, &ppo_ckpt) {
                    if id != ppo_id {
                        let r = evaluate_winrate(&ckpt, ppo, &prompts, &judge, manifest.eval.seed)?;
                        rows.push((format!("{id}_vs_{ppo_id}"), r));
                    }
                }
                let r = evaluate_winrate(&ckpt, &sft0, &prompts, &judge, manifest.eval.seed)?;
                rows.push((format!("{id}_vs_sft"), r));
            }
            report::write_winrate_csv(&paths.winrates_csv, &rows)?;
            report::write_winrate_svg(&paths.winrates_svg, "adjusted win rates", &rows)?;
            Ok(())
        },
    )?;

    // -- report --------------------------------------------------------------------
    let key = stage_key(&["report".into(), file_sha256(&paths.winrates_csv)?]);
    stager.run(
        "report",
        &key,
        &[paths.summary_csv.clone(), paths.summary_svg.clone()],
        || {
            std::fs::create_dir_all(paths.summary_csv.parent().expect("parent"))?;
            std::fs::copy(&paths.winrates_csv, &paths.summary_csv)?;
            std::fs::copy(&paths.winrates_svg, &paths.summary_svg)?;
            Ok(())
        },
    )?;

    // collect the outcome for callers
    let rm_holdout_accuracy = std::fs::read_to_string(&paths.rm_gate)
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("holdout_pairwise_accuracy"))
                .and_then(|l| l.split(',').nth(1))
                .and_then(|v| v.trim().parse().ok())
        });
    let summary = read_winrate_csv(&paths.summary_csv)?;

    Ok(PipelineReport {
        out_dir: out_dir.to_path_buf(),
        executed: stager.executed,
        cached: stager.cached,
        rm_holdout_accuracy,
        summary,
    })
}

/// Parses a winrate CSV back into rows (tag plus recomputed report).
pub fn read_winrate_csv(path: &Path) -> Result<Vec<(String, WinRateReport)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::InvalidArgument(format!(
                "bad winrate row: {line}"
            )));
        }
        let parse = |s: &str| {
            s.parse::<u64>()
                .map_err(|e| Error::InvalidArgument(format!("bad count {s}: {e}")))
        };
        let (w, l, t) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        rows.push((
            fields[0].to_string(),
            WinRateReport::from_counts(w, l, t, "oracle", 0.0),
        ));
    }
    Ok(rows)
}
