// Diagnostic: pure geometry of relative jitter around a trained base -
// endpoint degradation vs midpoint recovery, greedy eval.
use souprl_core::rng::derive_seed;
use souprl_core::*;

fn main() {
    let m = ExperimentManifest::default();
    let task = m.task_config();
    let arch = m.arch.descriptor();
    let d = &m.data;
    let corpus = gen_corpus(&task, d.corpus_sequences, d.corpus_noise_rate, d.corpus_random_fraction,
        derive_seed(d.seed, "pipeline/corpus", &[])).unwrap();
    let prompts_eval = gen_prompts(&task, Split::Eval, 120, d.seed).unwrap();
    let momentum = OptimizerKind::Momentum { mu: 0.9 };
    let pre = TrainConfig { epochs: 120, learning_rate: 0.02, optimizer: momentum, ..m.pretrain.clone() };
    let base = pretrain_base(arch, &corpus, &pre, m.seeds.base).unwrap().checkpoint;

    let gen = EvalGenConfig { temperature: 0.7, greedy: true, samples_per_prompt: 1 };
    let score = |p: &ParameterVector| {
        let s = souprl_core::analysis::evaluate_policy_scores(p, &prompts_eval, &Scorer::Oracle(&task), &gen, 5).unwrap();
        s.iter().sum::<f64>() / s.len() as f64
    };
    let r_base = score(&base.params);
    println!("base greedy oracle: {r_base:.3}");
    for scale in [0.05, 0.1, 0.2, 0.3, 0.5] {
        let mut hits = 0;
        let mut rows = String::new();
        for e in 1..=5u64 {
            let a = base.params.jittered_relative(scale, 100 + e);
            let b = base.params.jittered_relative(scale, 200 + e);
            let mid = make_soup(&a, &b, 0.5).unwrap();
            let (ra, rb, rm_) = (score(&a), score(&b), score(&mid));
            if rm_ > ra && rm_ > rb { hits += 1; }
            rows += &format!("  e{e}: {ra:.3}/{rm_:.3}/{rb:.3}\n");
        }
        println!("rel-jitter {scale}: midpoint {hits}/5\n{rows}");
    }
}
