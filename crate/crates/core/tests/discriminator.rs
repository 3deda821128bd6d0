mod common;

use coldlab::discriminator::*;
use coldlab::oracle::*;
use coldlab::rng::seeded;
use coldlab::sampling::{sample_batch, Decoding};
use coldlab::seqmodel::{mle_train, MleConfig};
use coldlab::*;

fn human(data: &DataDistribution, n: usize, seed: u64) -> Vec<LabeledPair> {
    sample_corpus(data, n, &mut seeded(seed)).into_iter().map(|(x, y)| LabeledPair::human(x, y)).collect()
}

fn as_generated(pairs: Vec<LabeledPair>) -> Vec<LabeledPair> {
    pairs.into_iter().map(|p| LabeledPair::generated(p.x, p.y, 0)).collect()
}

fn mle_generator(data: &DataDistribution, seed: u64) -> TabularPolicy {
    let corpus = sample_corpus(data, 2000, &mut seeded(seed));
    let mut p = TabularPolicy::zeros(data.vocab(), data.max_len(), 0).unwrap();
    let cfg = MleConfig { lr: 3.0, max_epochs: 300, validation_fraction: 0.0, seed, ..MleConfig::default() };
    mle_train(&mut p, &corpus, &cfg).unwrap();
    p
}

#[test]
fn untrained_discriminator_is_indifferent() {
    let data = DataDistribution::default_instance();
    for kind in [DiscriminatorKind::NGram, DiscriminatorKind::Recurrent { embed_dim: 4, hidden_dim: 8 }] {
        let d = Discriminator::new(kind, data.vocab(), data.max_len(), 0, &mut seeded(1)).unwrap();
        let h = human(&data, 50, 2);
        let g = as_generated(human(&data, 50, 3));
        assert!((disc_objective(&d, &h, &g).unwrap() + 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(h.iter().all(|p| d.score(&p.x, &p.y) == 0.5));
    }
}

#[test]
fn same_distribution_accuracy_is_chance() {
    let data = DataDistribution::synthetic_task();
    for kind in [DiscriminatorKind::NGram, DiscriminatorKind::Recurrent { embed_dim: 4, hidden_dim: 8 }] {
        let mut d = Discriminator::new(kind, data.vocab(), data.max_len(), 0, &mut seeded(1)).unwrap();
        let h = human(&data, 2000, 2);
        let g = as_generated(human(&data, 2000, 3));
        disc_train(&mut d, &h, &g, None, &DiscTrainConfig::default()).unwrap();
        let acc = accuracy(&d, &human(&data, 2000, 4), &as_generated(human(&data, 2000, 5))).unwrap();
        assert!((acc - 0.5).abs() <= 0.05, "{kind}: held-out accuracy {acc}");
    }
}

#[test]
fn discriminator_separates_uniform_noise() {
    let data = DataDistribution::synthetic_task();
    let uniform = TabularPolicy::zeros(data.vocab(), data.max_len(), 0).unwrap();
    let noise = |seed| -> Vec<LabeledPair> {
        sample_batch(&uniform, &vec![ConditioningInput::empty(); 1000], &SamplerSpec::on_policy(), seed, 1)
            .unwrap()
            .into_iter()
            .map(|t| LabeledPair::generated(t.x, t.y, 0))
            .collect()
    };
    let mut d = Discriminator::new(DiscriminatorKind::NGram, data.vocab(), data.max_len(), 0, &mut seeded(1)).unwrap();
    let before = disc_objective(&d, &human(&data, 1000, 2), &noise(3)).unwrap();
    let rep = disc_train(&mut d, &human(&data, 1000, 2), &noise(3), None, &DiscTrainConfig::default()).unwrap();
    assert!(rep.objective > before);
    assert!(accuracy(&d, &human(&data, 1000, 4), &noise(5)).unwrap() > 0.8);
}

#[test]
fn labels_are_enforced() {
    let data = DataDistribution::default_instance();
    let mut d = Discriminator::new(DiscriminatorKind::NGram, data.vocab(), data.max_len(), 0, &mut seeded(1)).unwrap();
    let h = human(&data, 10, 2);
    assert!(disc_train(&mut d, &h, &h, None, &DiscTrainConfig::default()).is_err());
    assert!(disc_train(&mut d, &h, &[], None, &DiscTrainConfig::default()).is_err());
    let bad = DiscTrainConfig { replay_fraction: 1.5, ..DiscTrainConfig::default() };
    assert!(disc_train(&mut d, &h, &as_generated(h.clone()), None, &bad).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = DataDistribution::default_instance();
    for kind in [DiscriminatorKind::NGram, DiscriminatorKind::Recurrent { embed_dim: 3, hidden_dim: 5 }] {
        let mut d = Discriminator::new(kind, data.vocab(), data.max_len(), 0, &mut seeded(1)).unwrap();
        let cfg = DiscTrainConfig { steps: 20, ..DiscTrainConfig::default() };
        disc_train(&mut d, &human(&data, 100, 2), &as_generated(human(&data, 100, 3)), None, &cfg).unwrap();
        let path = dir.path().join(format!("{kind}.disc"));
        d.write(&path).unwrap();
        assert_eq!(Discriminator::read(&path).unwrap(), d);
    }
}

#[test]
fn cross_temperature_probe_on_synthetic_task() {
    let data = DataDistribution::synthetic_task();
    let g = mle_generator(&data, 1);
    let cfg = CrossTemperatureConfig { seed: 1, ..CrossTemperatureConfig::default() };
    let m = probe_cross_temperature(&g, None, &data, &cfg).unwrap();
    assert_eq!(m.rows.len(), cfg.train_temps.len() + 1);
    assert_eq!(m.columns.len(), cfg.eval_temps.len() + 1);
    for row in &m.rows {
        let h = m.get(row, HUMAN_COLUMN).unwrap();
        assert!(h > 0.5, "{row} scores human data at {h}");
    }
    let uniform = Decoding::Uniform.to_string();
    let own = m.get(&row_label(Decoding::Uniform), &uniform).unwrap();
    assert!(own < 0.5, "uniform samples scored {own} by their own discriminator");
    let table = m.to_table().to_csv();
    assert!(table.starts_with("discriminator,human,T=0,T=0.5,T=1,T=inf"));
}

#[test]
fn cross_temperature_probe_with_past_checkpoint() {
    let data = DataDistribution::default_instance();
    let g = mle_generator(&data, 1);
    let past = TabularPolicy::zeros(data.vocab(), data.max_len(), 0).unwrap();
    let cfg = CrossTemperatureConfig { n_train: 100, n_eval: 100, union: false, ..CrossTemperatureConfig::default() };
    let m = probe_cross_temperature(&g, Some(&past), &data, &cfg).unwrap();
    assert_eq!(m.columns.len(), 1 + 2 * cfg.eval_temps.len());
    assert!(m.get(&row_label(Decoding::Greedy), &past_label(Decoding::Greedy)).is_some());
    assert!(m.get(UNION_ROW, HUMAN_COLUMN).is_none());
}

#[test]
fn prefix_accuracy_starts_at_chance() {
    let data = DataDistribution::synthetic_task();
    let g = mle_generator(&data, 2);
    let cfg = PrefixAccuracyConfig { n_train: 500, n_eval: 500, seed: 2, ..PrefixAccuracyConfig::default() };
    let rows = probe_prefix_accuracy(&g, &data, &cfg).unwrap();
    assert_eq!(rows.len(), data.max_len() + 1);
    assert_eq!(rows[0].standard, 0.5);
    assert_eq!(rows[0].teacher_forcing, 0.5);
    // accuracy of the standard mode grows with the prefix up to sampling noise
    let se = (0.25 / (2 * cfg.n_eval) as f64).sqrt();
    for w in rows.windows(2) {
        assert!(w[1].standard >= w[0].standard - 2.0 * se, "t={}: {} after {}", w[1].t, w[1].standard, w[0].standard);
    }
    assert!(prefix_table(&rows).to_csv().starts_with("t,standard,teacher_forcing"));
}

#[test]
fn probes_reject_empty_configs() {
    let data = DataDistribution::default_instance();
    let g = TabularPolicy::zeros(data.vocab(), data.max_len(), 0).unwrap();
    let cfg = CrossTemperatureConfig { train_temps: vec![], ..CrossTemperatureConfig::default() };
    assert!(probe_cross_temperature(&g, None, &data, &cfg).is_err());
    let cfg = PrefixAccuracyConfig { n_eval: 0, ..PrefixAccuracyConfig::default() };
    assert!(probe_prefix_accuracy(&g, &data, &cfg).is_err());
}
