mod common;

use coldlab::discriminator::*;
use coldlab::oracle::*;
use coldlab::rng::seeded;
use coldlab::trainer::*;
use coldlab::*;
use common::*;

fn generated(data: &DataDistribution, n: usize, seed: u64, step: u64) -> Vec<LabeledPair> {
    sample_corpus(data, n, &mut seeded(seed)).into_iter().map(|(x, y)| LabeledPair::generated(x, y, step)).collect()
}

#[test]
fn replay_samples_uniformly() {
    let data = DataDistribution::default_instance();
    let mut buffer = ReplayBuffer::new(10).unwrap();
    for step in 0..5 {
        buffer.push(&generated(&data, 10, step, step), step).unwrap();
    }
    let n = buffer.len();
    assert_eq!(n, 50);
    let keys: Vec<String> = buffer.items().map(|p| format!("{}:{}", p.origin_step(), p.y)).collect();
    let mut rng = seeded(99);
    let mut counts = vec![0u64; n];
    let mut draws = 0;
    while draws < 10_000 {
        for p in buffer.sample(1, &mut rng) {
            let key = format!("{}:{}", p.origin_step(), p.y);
            // duplicates of one sequence in one step share a cell
            let slot = keys.iter().position(|k| *k == key).unwrap();
            counts[slot] += 1;
            draws += 1;
        }
    }
    let mut probs = vec![0.0; n];
    for k in &keys {
        probs[keys.iter().position(|x| x == k).unwrap()] += 1.0 / n as f64;
    }
    let (stat, df) = chi2_statistic(&counts, &probs);
    assert!(stat < chi2_critical_01(df), "chi2 {stat} with {df} df");
}

#[test]
fn replay_samples_are_distinct() {
    let data = DataDistribution::default_instance();
    let mut buffer = ReplayBuffer::new(3).unwrap();
    buffer.push(&generated(&data, 20, 1, 0), 0).unwrap();
    let picks = buffer.sample(20, &mut seeded(1));
    assert_eq!(picks.len(), 20);
    assert_eq!(buffer.sample(50, &mut seeded(1)).len(), 20);
}

#[test]
fn replay_window_evicts_old_steps() {
    let data = DataDistribution::default_instance();
    let mut buffer = ReplayBuffer::new(3).unwrap();
    for step in 0..10 {
        buffer.push(&generated(&data, 4, step, step), step).unwrap();
        assert!(buffer.items().all(|p| p.origin_step() > step as i64 - 3));
        assert_eq!(buffer.len(), 4 * (step as usize + 1).min(3));
    }
    assert!(buffer.push(&generated(&data, 1, 0, 2), 2).is_err());
    let h: Vec<LabeledPair> =
        sample_corpus(&data, 1, &mut seeded(0)).into_iter().map(|(x, y)| LabeledPair::human(x, y)).collect();
    assert!(buffer.push(&h, 11).is_err());
    assert!(ReplayBuffer::new(0).is_err());
}

#[test]
fn replay_share_stays_within_one_percent() {
    let data = DataDistribution::default_instance();
    let mut buffer = ReplayBuffer::new(150).unwrap();
    for step in 0..100 {
        buffer.push(&generated(&data, 64, step, step), step).unwrap();
    }
    for n in [100, 512, 1000, 4096] {
        let h: Vec<LabeledPair> =
            sample_corpus(&data, n, &mut seeded(7)).into_iter().map(|(x, y)| LabeledPair::human(x, y)).collect();
        let g = generated(&data, n, 8, 100);
        let mut d =
            Discriminator::new(DiscriminatorKind::NGram, data.vocab(), data.max_len(), 0, &mut seeded(1)).unwrap();
        let cfg = DiscTrainConfig { steps: 5, ..DiscTrainConfig::default() };
        let mut rng = seeded(3);
        let rep = disc_train(&mut d, &h, &g, Some((&buffer, &mut rng)), &cfg).unwrap();
        assert!(rep.replaced >= 1);
        assert!(rep.replaced as f64 <= 0.01 * (h.len() + g.len()) as f64, "{} of {}", rep.replaced, 2 * n);
    }
}

#[test]
fn clipping_coefficient_is_bounded() {
    for w in [0.0, 0.1, 1.0, 4.9, 5.0, 7.0, 100.0] {
        let k = correction_coefficient(w, 5.0);
        assert!((0.0..=1.0).contains(&k));
        if w <= 5.0 {
            assert_eq!(k, 0.0);
        }
    }
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 16,
        gen_steps_per_epoch: 5,
        disc_samples: 64,
        disc: DiscTrainConfig { steps: 20, ..DiscTrainConfig::default() },
        eval: EvalConfig { samples: 50, max_n: 4 },
        seed,
        ..TrainConfig::default()
    }
}

fn run(cfg: &TrainConfig) -> TrainOutcome<TabularPolicy> {
    let data = DataDistribution::default_instance();
    let g = TabularPolicy::random(data.vocab(), data.max_len(), 0, 1.0, &mut seeded(1)).unwrap();
    let d = Discriminator::new(DiscriminatorKind::NGram, data.vocab(), data.max_len(), 0, &mut seeded(2)).unwrap();
    train(g, d, &data, cfg, &mut |_, _, _| Ok(())).unwrap()
}

#[test]
fn training_is_deterministic_and_worker_independent() {
    let a = run(&small_config(5));
    let b = run(&small_config(5));
    let c = run(&TrainConfig { workers: 3, ..small_config(5) });
    assert_eq!(a.log, b.log);
    assert_eq!(a.log, c.log);
    assert_eq!(a.generator, c.generator);
    let d = run(&small_config(6));
    assert_ne!(a.log, d.log);
}

#[test]
fn training_log_has_one_row_per_epoch() {
    let out = run(&small_config(1));
    assert_eq!(out.log.epochs.len(), 2);
    let csv = out.log.to_table().to_csv();
    assert_eq!(csv.lines().next().unwrap(), TrainLog::HEADER.join(","));
    for r in &out.log.epochs {
        assert!((0.0..=1.0).contains(&r.clip_rate));
        assert!(r.max_w >= r.mean_w);
        assert!(r.oracle_nll.is_finite() && r.oracle_nll > 0.0);
    }
}

#[test]
fn zero_epochs_leave_the_generator_untouched() {
    let data = DataDistribution::default_instance();
    let g = TabularPolicy::random(data.vocab(), data.max_len(), 0, 1.0, &mut seeded(1)).unwrap();
    let out = run(&TrainConfig { epochs: 0, ..small_config(1) });
    assert_eq!(out.generator, g);
    assert!(out.log.epochs.is_empty());
}

#[test]
fn callback_sees_every_epoch_and_can_abort() {
    let data = DataDistribution::default_instance();
    let g = TabularPolicy::random(data.vocab(), data.max_len(), 0, 1.0, &mut seeded(1)).unwrap();
    let d = Discriminator::new(DiscriminatorKind::NGram, data.vocab(), data.max_len(), 0, &mut seeded(2)).unwrap();
    let mut seen = Vec::new();
    train(g.clone(), d.clone(), &data, &small_config(1), &mut |r, _, _| {
        seen.push(r.epoch);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![1, 2]);
    let res = train(g, d, &data, &small_config(1), &mut |_, _, _| Err(Error::InvalidArgument("stop".into())));
    assert!(res.is_err());
}

#[test]
fn invalid_training_configs_are_rejected() {
    let bad = [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { clip: Some(0.0), ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { replay_window: Some(0), ..TrainConfig::default() },
        TrainConfig { workers: 0, ..TrainConfig::default() },
        TrainConfig { sampler: SamplerSpec::temperature(0.0), ..TrainConfig::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    assert_eq!(TrainConfig::default().replay_window(), 150);
}
