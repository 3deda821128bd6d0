mod common;

use coldlab::oracle::*;
use coldlab::rng::seeded;
use coldlab::sampling::sampler_log_prob;
use coldlab::trainer::Estimator;
use coldlab::*;
use common::*;
use proptest::prelude::*;

#[test]
fn critical_values_are_close_to_tables() {
    for (df, q) in [(5, 15.086), (10, 23.209), (30, 50.892), (84, 117.057)] {
        let got = chi2_critical_01(df);
        assert!((got - q).abs() / q < 0.01, "df {df}: {got} vs {q}");
    }
}

fn total_prob<P: Policy>(p: &P, idx: &EnumerationIndex) -> f64 {
    idx.sequences()
        .iter()
        .map(|y| seqmodel::sequence_log_prob(p, &ConditioningInput::empty(), y, 1.0).unwrap().exp())
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn policies_sum_to_one(seed in 0u64..1000, scale in 0.1f64..8.0, content in 1usize..4, max_len in 1usize..5) {
        let v = Vocab::with_content(content).unwrap();
        let idx = index(v, max_len);
        let tab = TabularPolicy::random(v, max_len, 0, scale, &mut seeded(seed)).unwrap();
        prop_assert!((total_prob(&tab, &idx) - 1.0).abs() < 1e-6);
        let cfg = NeuralConfig { embed_dim: 3, hidden_dim: 4 };
        let neural = NeuralPolicy::random(v, max_len, cfg, &mut seeded(seed)).unwrap();
        prop_assert!((total_prob(&neural, &idx) - 1.0).abs() < 1e-6);
        let spec = SamplerSpec::mixture(0.9, 0.95, 0.2);
        let mix: f64 = idx.sequences().iter()
            .map(|y| sampler_log_prob(&tab, &ConditioningInput::empty(), y, &spec).unwrap().exp())
            .sum();
        prop_assert!((mix - 1.0).abs() < 1e-6);
    }

    #[test]
    fn data_distributions_sum_to_one(seed in 0u64..1000, order in 1usize..3, states in 1usize..4) {
        let v = Vocab::with_content(3).unwrap();
        let shape = TableShape::default();
        let idx = index(v, 4);
        let x = ConditioningInput::empty();
        let chain = DataDistribution::Markov(MarkovChain::random(v, 4, order, &shape, &mut seeded(seed)).unwrap());
        let s: f64 = exact_data_probs(&chain, &x, &idx).iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
        let grammar = DataDistribution::Grammar(ProbabilisticGrammar::random(v, 4, states, &shape, &mut seeded(seed)).unwrap());
        let s: f64 = exact_data_probs(&grammar, &x, &idx).iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn data_samples_match_exact_probabilities() {
    let v = Vocab::with_content(4).unwrap();
    let shape = TableShape::default();
    let sources = [
        DataDistribution::default_instance(),
        DataDistribution::Grammar(ProbabilisticGrammar::random(v, 4, 3, &shape, &mut seeded(3)).unwrap()),
    ];
    for data in &sources {
        let idx = index(data.vocab(), data.max_len());
        let probs = exact_data_probs(data, &ConditioningInput::empty(), &idx);
        let corpus = sample_corpus(data, 100_000, &mut seeded(11));
        let counts = histogram(&idx, corpus.iter().map(|(_, y)| y));
        let (stat, df) = chi2_statistic(&counts, &probs);
        assert!(stat < chi2_critical_01(df), "chi2 {stat} with {df} df");
    }
}

#[test]
fn conditional_task_normalizes_per_input() {
    let v = Vocab::with_content(3).unwrap();
    let task = ConditionalTask::random(v, 2, 0.7, &TableShape::default(), &mut seeded(5)).unwrap();
    let idx = index(v, task.max_len());
    let support = task.input_support();
    assert!(!support.is_empty());
    let mass: f64 = support.iter().map(|x| task.input_prob(x)).sum();
    assert!((mass - 1.0).abs() < 1e-9);
    for x in &support {
        let s: f64 = exact_data_probs(&task, x, &idx).iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}

#[test]
fn synthetic_task_is_enumerable() {
    let data = DataDistribution::synthetic_task();
    let idx = index(data.vocab(), data.max_len());
    assert_eq!(idx.len(), 55_987);
    let s: f64 = exact_data_probs(&data, &ConditioningInput::empty(), &idx).iter().sum();
    assert!((s - 1.0).abs() < 1e-9);
}

#[test]
fn constant_reward_estimate_vanishes() {
    let data = DataDistribution::default_instance();
    let idx = index(data.vocab(), data.max_len());
    let policy = TabularPolicy::random(data.vocab(), 4, 0, 1.0, &mut seeded(2)).unwrap();
    let one = |_: &ConditioningInput, _: &TokenSequence| 1.0;
    for spec in [SamplerSpec::temperature(1.0), SamplerSpec::temperature(0.5)] {
        let rep = estimator_report(
            Estimator::ImportanceSampled,
            &policy,
            &ConditioningInput::empty(),
            &idx,
            &one,
            &spec,
            100_000,
            &[1],
            1,
        )
        .unwrap();
        let run = &rep.runs[0];
        let norm = run.mean_gradient.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 0.01 * run.mean_norm, "{spec}: |mean| {norm} vs per-sample {}", run.mean_norm);
    }
}

#[test]
fn on_policy_is_and_reinforce_reports_coincide() {
    let data = DataDistribution::default_instance();
    let idx = index(data.vocab(), data.max_len());
    let policy = TabularPolicy::random(data.vocab(), 4, 0, 1.0, &mut seeded(4)).unwrap();
    let reward = HashReward { seed: 9 };
    let x = ConditioningInput::empty();
    let on = SamplerSpec::temperature(1.0);
    let a = estimator_report(Estimator::ImportanceSampled, &policy, &x, &idx, &reward, &on, 5000, &[1, 2], 1).unwrap();
    let b = estimator_report(Estimator::Reinforce, &policy, &x, &idx, &reward, &on, 5000, &[1, 2], 1).unwrap();
    for (ra, rb) in a.runs.iter().zip(&b.runs) {
        assert_eq!(ra.mean_gradient, rb.mean_gradient);
    }
}

#[test]
fn unknown_estimator_id_is_rejected() {
    assert!(Estimator::from_id("vanilla", 5.0).is_err());
    assert!(Estimator::from_id("clipped-is", -1.0).is_err());
}

#[test]
fn report_table_has_one_row_per_seed() {
    let data = DataDistribution::default_instance();
    let idx = index(data.vocab(), data.max_len());
    let policy = TabularPolicy::random(data.vocab(), 4, 0, 1.0, &mut seeded(4)).unwrap();
    let rep = estimator_report(
        Estimator::Clipped { c: 5.0 },
        &policy,
        &ConditioningInput::empty(),
        &idx,
        &HashReward { seed: 1 },
        &SamplerSpec::mixture(0.9, 0.95, 0.2),
        1000,
        &[1, 2, 3],
        2,
    )
    .unwrap();
    let csv = rep.to_table().to_csv();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("estimator,spec,seed,n,cosine"));
}

#[test]
fn trained_discriminator_reward_keeps_clipped_estimator_unbiased() {
    use coldlab::discriminator::{binary_reward, Discriminator, DiscriminatorKind, LabeledPair};
    let data = DataDistribution::default_instance();
    let cfg = VerifyConfig::default();
    let fx = build_fixture(&data, &cfg).unwrap();
    let mut d = Discriminator::new(DiscriminatorKind::NGram, data.vocab(), data.max_len(), 0, &mut seeded(1)).unwrap();
    let h: Vec<LabeledPair> =
        sample_corpus(&data, 500, &mut seeded(2)).into_iter().map(|(x, y)| LabeledPair::human(x, y)).collect();
    let g: Vec<LabeledPair> =
        sampling::sample_batch(&fx.policy, &vec![fx.x.clone(); 500], &SamplerSpec::temperature(0.3), 3, 1)
            .unwrap()
            .into_iter()
            .map(|t| LabeledPair::generated(t.x, t.y, 0))
            .collect();
    discriminator::disc_train(&mut d, &h, &g, None, &Default::default()).unwrap();
    let reward = |x: &ConditioningInput, y: &TokenSequence| binary_reward(&d, x, y);
    let rep = estimator_report(
        Estimator::Clipped { c: 0.5 },
        &fx.policy,
        &fx.x,
        &fx.index,
        &reward,
        &SamplerSpec::temperature(0.3),
        200_000,
        &[5],
        1,
    )
    .unwrap();
    assert!(rep.runs[0].clip_rate > 0.1);
    assert!(rep.min_cosine() > 0.99, "cosine {}", rep.min_cosine());
}
