use dler_core::merge::{merge, select_merge, MergeStrategy, ParamSnapshot};
use dler_core::policy::Vocab;
use dler_core::rng;
use dler_core::tasks::{initial_policy, make_prompt_pool, Prompt, TaskSuiteConfig};
use dler_core::trainer::{evaluate, run_training, TrainerConfig, Variant};

#[test]
fn hand_examples() {
    let base = ParamSnapshot::from_vec(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let tuned = ParamSnapshot::from_vec(vec![1.1, 2.0, 3.5, 3.0]).unwrap();
    assert_eq!(select_merge(&base, &tuned, 0.25, 0.7).unwrap().values, vec![1.0, 2.0, 3.0, 3.3]);
    assert_eq!(select_merge(&base, &tuned, 1.0, 1.0).unwrap(), tuned);
    assert_eq!(select_merge(&base, &base, 0.25, 0.7).unwrap(), base);
    let mid = merge(
        &ParamSnapshot::from_vec(vec![0.0, 2.0]).unwrap(),
        &ParamSnapshot::from_vec(vec![2.0, 0.0]).unwrap(),
        MergeStrategy::Linear { alpha: 0.5 },
    )
    .unwrap();
    assert_eq!(mid.values, vec![1.0, 1.0]);
}

#[test]
fn merged_policy_sits_between_base_and_tuned() {
    // Tabular classes do not share parameters, so DLER training here never
    // hurts the hard slice; the checked form is that merging keeps accuracy
    // at least at the worse endpoint while staying shorter than the base.
    let vocab = Vocab::desk_default();
    let tasks = TaskSuiteConfig::default();
    let init = initial_policy(&vocab, &tasks).unwrap();
    let hard: Vec<Prompt> = (0..32)
        .map(|i| Prompt { id: 1000 + i, difficulty: 4, answer_token: vocab.answer_token(4).unwrap() })
        .collect();
    let base_eval = evaluate(&init, &hard, 128, 16, 5).unwrap();
    let (mut merged_acc, mut floor_acc, mut merged_len) = (0.0, 0.0, 0.0);
    for seed in [7, 8, 9] {
        let pool = make_prompt_pool(&tasks, &vocab, &mut rng::stream(seed, &[rng::purpose::POOL])).unwrap();
        let config = TrainerConfig { seed, ..Default::default() };
        let run = run_training(&config, Variant::Dler, &init, pool, |_| Ok(())).unwrap();
        let merged = select_merge(&ParamSnapshot::from_params(&init), &ParamSnapshot::from_params(&run.final_params), 0.25, 0.7)
            .unwrap();
        let merged = init.with_logits(merged.values).unwrap();
        let tuned_eval = evaluate(&run.final_params, &hard, 128, 16, 5).unwrap();
        let merged_eval = evaluate(&merged, &hard, 128, 16, 5).unwrap();
        merged_acc += merged_eval.accuracy;
        merged_len += merged_eval.mean_length;
        floor_acc += tuned_eval.accuracy.min(base_eval.accuracy);
    }
    assert!(merged_acc >= floor_acc, "{merged_acc} < {floor_acc}");
    assert!(merged_len / 3.0 <= base_eval.mean_length);
}
