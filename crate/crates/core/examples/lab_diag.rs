// Diagnostic: builds the default-manifest experiment at several seeds and
// prints the quantities behind the acceptance criteria (midpoint effect,
// SALSA vs PPO win rates, KL deviation, SALSA-n trend).
use souprl_core::rng::derive_seed;
use souprl_core::*;

struct Experiment {
    sfts: Vec<Checkpoint>,
    rm: Checkpoint,
    rm_acc: f64,
}

fn build_experiment(
    m: &ExperimentManifest,
    base: &Checkpoint,
    demos: &[(TokenSequence, TokenSequence)],
    rm_train: &[PreferencePair],
    rm_holdout: &[PreferencePair],
    exp_seed: u64,
) -> Experiment {
    let sfts: Vec<Checkpoint> = [100 + exp_seed, 200 + exp_seed, 300 + exp_seed]
        .iter()
        .map(|&s| train_sft(base, demos, &m.sft, s).unwrap().checkpoint)
        .collect();
    let mut rm_cfg = m.rm.clone();
    rm_cfg.shuffle_seed = derive_seed(7, "exp/rm", &[exp_seed]);
    let rm = train_reward_model(&sfts[0], rm_train, &rm_cfg).unwrap().checkpoint;
    let rm_acc = pairwise_accuracy(&rm, rm_holdout).unwrap();
    Experiment { sfts, rm, rm_acc }
}

fn main() {
    let t0 = std::time::Instant::now();
    let m = ExperimentManifest::default();
    let task = m.task_config();
    let arch = m.arch.descriptor();
    let d = &m.data;

    let corpus = gen_corpus(&task, d.corpus_sequences, d.corpus_noise_rate, d.corpus_random_fraction,
        derive_seed(d.seed, "pipeline/corpus", &[])).unwrap();
    let base = pretrain_base(arch, &corpus, &m.pretrain, m.seeds.base).unwrap().checkpoint;
    let prompts_sft = gen_prompts(&task, Split::SftTrain, d.sft_prompts, d.seed).unwrap();
    let demos = gen_demos(&task, &prompts_sft, d.demo_noise_rate,
        derive_seed(d.seed, "pipeline/demos", &[])).unwrap();
    let rm_prompts = gen_prompts(&task, Split::RmTrain, d.rm_train_prompts + d.rm_heldout_prompts, d.seed).unwrap();
    let scripted = ScriptedSampler { noise_rate: d.pair_scripted_noise };
    let uniform = UniformRandomSampler { max_body_len: arch.max_response_len - 1 };
    let mut rm_train = Vec::new();
    for r in 0..d.rm_train_rounds {
        rm_train.extend(gen_preference_pairs(&task, &rm_prompts[..d.rm_train_prompts],
            &scripted, &uniform, d.pair_min_margin, derive_seed(d.seed, "pipeline/rm-train", &[r as u64])).unwrap().pairs);
    }
    let mut rm_holdout = Vec::new();
    for r in 0..d.rm_heldout_rounds {
        rm_holdout.extend(gen_preference_pairs(&task, &rm_prompts[d.rm_train_prompts..],
            &scripted, &uniform, d.pair_min_margin, derive_seed(d.seed, "pipeline/rm-holdout", &[r as u64])).unwrap().pairs);
    }
    let prompts_rlhf = gen_prompts(&task, Split::RlhfTrain, d.rlhf_prompts, d.seed).unwrap();
    let prompts_eval = gen_prompts(&task, Split::Eval, d.eval_prompts, d.seed).unwrap();
    println!("data: {} demos, {} rm-train, {} rm-holdout pairs ({:.1}s)",
        demos.len(), rm_train.len(), rm_holdout.len(), t0.elapsed().as_secs_f32());

    let scan_gen = EvalGenConfig { temperature: m.eval.temperature, greedy: false,
        samples_per_prompt: m.eval.scan_samples_per_prompt };
    let eval_gen = EvalGenConfig { temperature: m.eval.temperature, greedy: false,
        samples_per_prompt: m.eval.samples_per_prompt };

    let mut mid_hits = 0;
    let mut crit9 = Vec::new();
    let mut crit10_hits = 0;
    let mut crit11 = Vec::new();

    for exp_seed in 1..=5u64 {
        let te = std::time::Instant::now();
        let exp = build_experiment(&m, &base, &demos, &rm_train, &rm_holdout, exp_seed);
        // criterion 7: midpoint effect with RM scorer
        let scorer = Scorer::RewardModel(&exp.rm);
        let pts = scan_line(&exp.sfts[0], &exp.sfts[1], &[0.0, 0.5, 1.0], &prompts_eval,
            &scorer, &scan_gen, derive_seed(m.eval.seed, "exp/scan", &[exp_seed])).unwrap();
        let (e0, mid, e1) = (pts[0].mean_reward, pts[1].mean_reward, pts[2].mean_reward);
        let hit = mid > e0 && mid > e1;
        if hit { mid_hits += 1; }

        // oracle scores of raw models for reference
        let oracle = Scorer::Oracle(&task);
        let o_pts = scan_line(&exp.sfts[0], &exp.sfts[1], &[0.0, 0.5, 1.0], &prompts_eval,
            &oracle, &scan_gen, derive_seed(m.eval.seed, "exp/scan", &[exp_seed])).unwrap();

        // rlhf runs
        let run = |strategy: ReferenceStrategy, beta: f64| {
            let mut cfg = m.rlhf.to_config(beta, exp_seed);
            cfg.seed = derive_seed(exp_seed, "exp/rlhf", &[]);
            run_rlhf(&exp.sfts[0], strategy, &exp.rm, &cfg, &prompts_rlhf).unwrap()
        };
        let ppo02 = run(ReferenceStrategy::Single(exp.sfts[0].params.clone()), 0.2);
        let ppo001 = run(ReferenceStrategy::Single(exp.sfts[0].params.clone()), 0.01);
        let salsa001 = run(ReferenceStrategy::salsa(exp.sfts[0].params.clone(), exp.sfts[1].params.clone(), 0.5), 0.01);
        let salsa3 = run(ReferenceStrategy::salsa_n(vec![exp.sfts[0].params.clone(), exp.sfts[1].params.clone(), exp.sfts[2].params.clone()]), 0.01);

        // criterion 9: salsa@0.01 vs ppo@0.2, oracle judge
        let judge = JudgeConfig { scorer: Scorer::Oracle(&task), tau: m.eval.tie_threshold, gen: eval_gen };
        let eseed = derive_seed(m.eval.seed, "exp/winrate", &[exp_seed]);
        let r9 = evaluate_winrate(&salsa001.checkpoint, &ppo02.checkpoint, &prompts_eval, &judge, eseed).unwrap();
        crit9.push(r9.adjusted_win_rate);

        // criterion 10: ppo@0.01 alarm or kl >= 3x salsa's
        let alarm = ppo001.log.iter().any(|s| s.alarm);
        let kl_ppo = ppo001.log.last().unwrap().mean_kl;
        let kl_salsa = salsa001.log.last().unwrap().mean_kl;
        let c10 = alarm || kl_ppo >= 3.0 * kl_salsa;
        if c10 { crit10_hits += 1; }

        // criterion 11: salsa-n vs ppo@0.01
        let r11_2 = evaluate_winrate(&salsa001.checkpoint, &ppo001.checkpoint, &prompts_eval, &judge, eseed).unwrap();
        let r11_3 = evaluate_winrate(&salsa3.checkpoint, &ppo001.checkpoint, &prompts_eval, &judge, eseed).unwrap();
        crit11.push((r11_2.adjusted_win_rate, r11_3.adjusted_win_rate));

        // reward summary
        let mr = |o: &RlhfOutcome| o.log.last().unwrap().mean_reward;
        let ml = |o: &RlhfOutcome| o.log.last().unwrap().mean_resp_len;
        println!("seed {exp_seed}: rm_acc={:.3} | rm-scan {e0:.3}/{mid:.3}/{e1:.3} mid={hit} (oracle {:.2}/{:.2}/{:.2}) | c9 adj={:.2} | c10 alarm={alarm} klP={kl_ppo:.2} klS={kl_salsa:.2} ok={c10} | c11 n2={:.2} n3={:.2} | R: ppo02={:.2} ppo001={:.2} salsa={:.2} s3={:.2} | len: {:.1}/{:.1}/{:.1}/{:.1} | {:.1}s",
            exp.rm_acc, o_pts[0].mean_reward, o_pts[1].mean_reward, o_pts[2].mean_reward,
            r9.adjusted_win_rate, r11_2.adjusted_win_rate, r11_3.adjusted_win_rate,
            mr(&ppo02), mr(&ppo001), mr(&salsa001), mr(&salsa3),
            ml(&ppo02), ml(&ppo001), ml(&salsa001), ml(&salsa3),
            te.elapsed().as_secs_f32());
    }
    let mean9 = crit9.iter().sum::<f64>() / crit9.len() as f64;
    let mean11_3 = crit11.iter().map(|c| c.1).sum::<f64>() / crit11.len() as f64;
    println!("\ncriterion 7: {mid_hits}/5 midpoint hits (need >= 4)");
    println!("criterion 9: mean adjusted {mean9:.2} (need > 50.0), per-seed {crit9:?}");
    println!("criterion 10: {crit10_hits}/5 (need >= 3)");
    println!("criterion 11: mean n3 adjusted {mean11_3:.2} (need >= 50.0)");
    println!("total time {:.1}s", t0.elapsed().as_secs_f32());
}
