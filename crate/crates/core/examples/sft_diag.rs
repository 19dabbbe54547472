// Diagnostic: push SFT toward convergence; effect of optimizer and temperature.
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
    let prompts_eval = gen_prompts(&task, Split::Eval, 60, d.seed).unwrap();
    let base = pretrain_base(arch, &corpus, &m.pretrain, m.seeds.base).unwrap().checkpoint;

    let momentum = OptimizerKind::Momentum { mu: 0.9 };
    let cases: Vec<(&str, TrainConfig)> = vec![
        ("sgd lr.1 e100", TrainConfig { epochs: 100, learning_rate: 0.1, ..m.sft.clone() }),
        ("sgd lr.1 e200", TrainConfig { epochs: 200, learning_rate: 0.1, ..m.sft.clone() }),
        ("sgd lr.2 e200", TrainConfig { epochs: 200, learning_rate: 0.2, ..m.sft.clone() }),
        ("mom lr.02 e60", TrainConfig { epochs: 60, learning_rate: 0.02, optimizer: momentum, ..m.sft.clone() }),
        ("mom lr.02 e150", TrainConfig { epochs: 150, learning_rate: 0.02, optimizer: momentum, ..m.sft.clone() }),
        ("mom lr.05 e150", TrainConfig { epochs: 150, learning_rate: 0.05, optimizer: momentum, ..m.sft.clone() }),
    ];
    for (tag, cfg) in cases {
        let t = std::time::Instant::now();
        let sft = train_sft(&base, &demos, &cfg, 101).unwrap().checkpoint;
        let ce = loss_value(&sft.params, &LossSpec::ResponseCrossEntropy { examples: &demos }).unwrap();
        let score = |prompts: &[TokenSequence], temp: f64| {
            let g = EvalGenConfig { temperature: temp, greedy: false, samples_per_prompt: 2 };
            let s = souprl_core::analysis::evaluate_policy_scores(&sft.params, prompts, &Scorer::Oracle(&task), &g, 5).unwrap();
            s.iter().sum::<f64>() / s.len() as f64
        };
        println!("{tag}: CE {ce:.3} | eval oracle t=1.0 {:.2}, t=0.7 {:.2}, t=0.5 {:.2}, t=0.35 {:.2} ({:.1}s)",
            score(&prompts_eval, 1.0), score(&prompts_eval, 0.7), score(&prompts_eval, 0.5), score(&prompts_eval, 0.35),
            t.elapsed().as_secs_f32());
    }
}
