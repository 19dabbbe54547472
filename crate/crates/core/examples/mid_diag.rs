// Diagnostic: midpoint effect with relative jitter + light SFT.
use souprl_core::loss::LossSpec;
use souprl_core::rng::derive_seed;
use souprl_core::*;

fn main() {
    let m = ExperimentManifest::default();
    let task = m.task_config();
    let arch = m.arch.descriptor();
    let d = &m.data;
    let corpus = gen_corpus(&task, d.corpus_sequences, d.corpus_noise_rate, d.corpus_random_fraction,
        derive_seed(d.seed, "pipeline/corpus", &[])).unwrap();
    let prompts_sft = gen_prompts(&task, Split::SftTrain, d.sft_prompts, d.seed).unwrap();
    let demos = gen_demos(&task, &prompts_sft, d.demo_noise_rate,
        derive_seed(d.seed, "pipeline/demos", &[])).unwrap();
    let prompts_eval = gen_prompts(&task, Split::Eval, 120, d.seed).unwrap();

    let rm_prompts = gen_prompts(&task, Split::RmTrain, d.rm_train_prompts, d.seed).unwrap();
    let scripted = ScriptedSampler { noise_rate: d.pair_scripted_noise };
    let uniform = UniformRandomSampler { max_body_len: arch.max_response_len - 1 };
    let mut rm_train = Vec::new();
    for r in 0..d.rm_train_rounds {
        rm_train.extend(gen_preference_pairs(&task, &rm_prompts, &scripted, &uniform,
            d.pair_min_margin, derive_seed(d.seed, "pipeline/rm-train", &[r as u64])).unwrap().pairs);
    }

    let momentum = OptimizerKind::Momentum { mu: 0.9 };
    let pre = TrainConfig { epochs: 120, learning_rate: 0.02, optimizer: momentum, ..m.pretrain.clone() };
    let base = pretrain_base(arch, &corpus, &pre, m.seeds.base).unwrap().checkpoint;

    // NOTE: uses jittered_relative via a patched train path below
    for (tag, jitter, epochs, lr, batch) in [
        ("const b8 lr.05 e30", 0.10, 30usize, 0.05, 8usize),
        ("const b8 lr.10 e30", 0.10, 30, 0.10, 8),
        ("const b4 lr.10 e30", 0.10, 30, 0.10, 4),
        ("const b8 lr.15 e40", 0.10, 40, 0.15, 8),
        ("const b4 lr.05 e60", 0.10, 60, 0.05, 4),
        ("const b2 lr.05 e30", 0.10, 30, 0.05, 2),
    ] {
        let cfg = TrainConfig { epochs, learning_rate: lr, batch_size: batch,
            optimizer: OptimizerKind::Sgd, init_jitter_scale: 0.0,
            lr_schedule: LrSchedule::Constant, ..m.sft.clone() };
        let mut o_hits = 0; let mut r_hits = 0;
        let mut detail = String::new();
        for e in 1..=5u64 {
            // emulate train_sft with relative jitter: jitter then train via a
            // base whose params are pre-jittered
            let mut base_a = base.clone();
            base_a.params = base.params.jittered_relative(jitter, derive_seed(100 + e, "sft/jitter", &[]));
            let mut base_b = base.clone();
            base_b.params = base.params.jittered_relative(jitter, derive_seed(200 + e, "sft/jitter", &[]));
            let a = train_sft(&base_a, &demos, &cfg, 100 + e).unwrap().checkpoint;
            let b = train_sft(&base_b, &demos, &cfg, 200 + e).unwrap().checkpoint;
            let mut rm_cfg = m.rm.clone();
            rm_cfg.shuffle_seed = derive_seed(7, "exp/rm", &[e]);
            let rm = train_reward_model(&a, &rm_train, &rm_cfg).unwrap().checkpoint;
            let gen = EvalGenConfig { temperature: 0.7, greedy: true, samples_per_prompt: 1 };
            let scan = |sc: &Scorer| {
                let p = scan_line(&a, &b, &[0.0, 0.5, 1.0], &prompts_eval, sc, &gen,
                    derive_seed(5, "exp/scan", &[e])).unwrap();
                (p[0].mean_reward, p[1].mean_reward, p[2].mean_reward)
            };
            let (o0, om, o1) = scan(&Scorer::Oracle(&task));
            let (r0, rmid, r1) = scan(&Scorer::RewardModel(&rm));
            if om > o0 && om > o1 { o_hits += 1; }
            if rmid > r0 && rmid > r1 { r_hits += 1; }
            let ce = |ck: &Checkpoint| loss_value(&ck.params, &LossSpec::ResponseCrossEntropy { examples: &demos }).unwrap();
            detail += &format!("  e{e}: oracle {o0:.3}/{om:.3}/{o1:.3}  rm {r0:.3}/{rmid:.3}/{r1:.3}  ce {:.2}/{:.2}\n", ce(&a), ce(&b));
        }
        println!("{tag}: oracle mid {o_hits}/5, rm mid {r_hits}/5\n{detail}");
    }
}
