//! Diagnostic probes: cross-temperature score matrix and per-prefix-length
//! accuracy under standard generation vs teacher forcing.

use super::{DiscTrainConfig, Discriminator, DiscriminatorKind};
use crate::error::{invalid, Result};
use crate::oracle::DataSource;
use crate::rng::{component, derive_indexed, Rng};
use crate::sampling::{decode, Decoding};
use crate::seqmodel::{log_softmax, ConditioningInput, Policy, Token, Vocab};
use crate::table::{fmt_f64, Table};
use rand::Rng as _;

/// Mean probability-human per (trained discriminator, evaluation set).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.columns.iter().position(|x| x == column)?;
        Some(self.values[r][c])
    }

    pub fn to_table(&self) -> Table {
        let mut header = vec!["discriminator".to_string()];
        header.extend(self.columns.iter().cloned());
        let mut t = Table::new(header);
        for (name, vals) in self.rows.iter().zip(&self.values) {
            let mut row = vec![name.clone()];
            row.extend(vals.iter().map(|v| fmt_f64(*v)));
            t.push(row);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossTemperatureConfig {
    /// One discriminator is trained per entry.
    pub train_temps: Vec<Decoding>,
    pub eval_temps: Vec<Decoding>,
    /// Adds a discriminator trained on an even mix of all training temperatures.
    pub union: bool,
    /// Examples per class for training.
    pub n_train: usize,
    /// Examples per evaluation column.
    pub n_eval: usize,
    pub kind: DiscriminatorKind,
    pub train: DiscTrainConfig,
    pub seed: u64,
}

impl Default for CrossTemperatureConfig {
    fn default() -> Self {
        CrossTemperatureConfig {
            train_temps: vec![
                Decoding::Greedy,
                Decoding::Temperature(0.5),
                Decoding::Temperature(1.0),
                Decoding::Uniform,
            ],
            eval_temps: vec![
                Decoding::Greedy,
                Decoding::Temperature(0.5),
                Decoding::Temperature(1.0),
                Decoding::Uniform,
            ],
            union: true,
            n_train: 500,
            n_eval: 500,
            kind: DiscriminatorKind::NGram,
            train: DiscTrainConfig::default(),
            seed: 0,
        }
    }
}

pub fn row_label(d: Decoding) -> String {
    format!("D_{d}")
}

pub const UNION_ROW: &str = "D_union";
pub const HUMAN_COLUMN: &str = "human";

pub fn past_label(d: Decoding) -> String {
    format!("past {d}")
}

type Example = (ConditioningInput, Vec<Token>);

fn human_examples(data: &dyn DataSource, n: usize, rng: &mut Rng) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let (x, y) = data.sample_pair(rng);
            (x, y.tokens().to_vec())
        })
        .collect()
}

fn generated_examples<P: Policy + ?Sized>(
    policy: &P,
    data: &dyn DataSource,
    d: Decoding,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<Example>> {
    (0..n)
        .map(|_| {
            let x = data.sample_input(rng);
            let y = decode(policy, &x, d, rng)?;
            Ok((x, y.tokens().to_vec()))
        })
        .collect()
}

fn as_refs(v: &[Example]) -> Vec<(&ConditioningInput, &[Token])> {
    v.iter().map(|(x, y)| (x, y.as_slice())).collect()
}

fn mean_score(d: &Discriminator, v: &[Example]) -> f64 {
    v.iter().map(|(x, y)| d.score_tokens(x, y)).sum::<f64>() / v.len() as f64
}

/// Trains one discriminator per training temperature (plus the union one)
/// against fresh human data and reports each one's mean probability-human
/// on held-out human data, on samples at every evaluation temperature and,
/// when `past` is given, on samples from that earlier checkpoint.
pub fn probe_cross_temperature<P: Policy + ?Sized>(
    generator: &P,
    past: Option<&P>,
    data: &dyn DataSource,
    cfg: &CrossTemperatureConfig,
) -> Result<ScoreMatrix> {
    if cfg.train_temps.is_empty() || cfg.eval_temps.is_empty() {
        return invalid("cross-temperature probe needs training and evaluation temperatures");
    }
    if cfg.n_train == 0 || cfg.n_eval == 0 {
        return invalid("cross-temperature probe needs positive sample counts");
    }
    let stream = |k: u64| derive_indexed(cfg.seed, component::PROBE, k);
    let mut columns = vec![HUMAN_COLUMN.to_string()];
    let mut eval_sets = vec![human_examples(data, cfg.n_eval, &mut stream(0))];
    for (i, &d) in cfg.eval_temps.iter().enumerate() {
        columns.push(d.to_string());
        eval_sets.push(generated_examples(generator, data, d, cfg.n_eval, &mut stream(100 + i as u64))?);
    }
    if let Some(past) = past {
        for (i, &d) in cfg.eval_temps.iter().enumerate() {
            columns.push(past_label(d));
            eval_sets.push(generated_examples(past, data, d, cfg.n_eval, &mut stream(200 + i as u64))?);
        }
    }
    let mut train_sets = Vec::new();
    for (i, &d) in cfg.train_temps.iter().enumerate() {
        let gen = generated_examples(generator, data, d, cfg.n_train, &mut stream(300 + i as u64))?;
        train_sets.push((row_label(d), gen));
    }
    if cfg.union {
        let k = train_sets.len();
        let mixed: Vec<Example> = (0..cfg.n_train).map(|j| train_sets[j % k].1[j / k].clone()).collect();
        train_sets.push((UNION_ROW.to_string(), mixed));
    }
    let human_train = human_examples(data, cfg.n_train, &mut stream(1));
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (i, (label, gen)) in train_sets.iter().enumerate() {
        let mut d = Discriminator::new(
            cfg.kind,
            data.vocab(),
            data.max_len(),
            data.input_max_len(),
            &mut stream(400 + i as u64),
        )?;
        d.fit(&as_refs(&human_train), &as_refs(gen), &cfg.train)?;
        rows.push(label.clone());
        values.push(eval_sets.iter().map(|s| mean_score(&d, s)).collect());
    }
    Ok(ScoreMatrix { rows, columns, values })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrefixMode {
    /// The generator continues its own prefix.
    Standard,
    /// Ground-truth prefix, one generated token.
    TeacherForcing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrefixAccuracyConfig {
    /// Longest prefix probed; defaults to the data's `max_len`.
    pub max_prefix: Option<usize>,
    pub n_train: usize,
    pub n_eval: usize,
    /// Sampling temperature of the generator.
    pub temperature: f64,
    pub kind: DiscriminatorKind,
    pub train: DiscTrainConfig,
    pub seed: u64,
}

impl Default for PrefixAccuracyConfig {
    fn default() -> Self {
        PrefixAccuracyConfig {
            max_prefix: None,
            n_train: 1000,
            n_eval: 1000,
            temperature: 1.0,
            kind: DiscriminatorKind::NGram,
            train: DiscTrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrefixAccuracyRow {
    pub t: usize,
    pub standard: f64,
    pub teacher_forcing: f64,
}

pub fn prefix_table(rows: &[PrefixAccuracyRow]) -> Table {
    let mut t = Table::new(["t", "standard", "teacher_forcing"]);
    for r in rows {
        t.push([r.t.to_string(), fmt_f64(r.standard), fmt_f64(r.teacher_forcing)]);
    }
    t
}

fn draw_token(logits: &[f64], temperature: f64, rng: &mut Rng) -> Token {
    let probs: Vec<f64> = log_softmax(logits, temperature).iter().map(|l| l.exp()).collect();
    let u = rng.random::<f64>();
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i as Token;
        }
    }
    (probs.len() - 1) as Token
}

fn machine_prefix<P: Policy + ?Sized>(
    policy: &P,
    data: &dyn DataSource,
    mode: PrefixMode,
    t: usize,
    temperature: f64,
    rng: &mut Rng,
) -> Result<Example> {
    match mode {
        PrefixMode::Standard => {
            let x = data.sample_input(rng);
            let y = decode(policy, &x, Decoding::Temperature(temperature), rng)?;
            let k = t.min(y.len());
            Ok((x, y.tokens()[..k].to_vec()))
        }
        PrefixMode::TeacherForcing => {
            let (x, y) = data.sample_pair(rng);
            if t == 0 {
                return Ok((x, Vec::new()));
            }
            let k = t - 1;
            if k >= y.len() {
                return Ok((x, y.tokens().to_vec()));
            }
            let mut prefix = y.tokens()[..k].to_vec();
            let tok = if k + 1 >= policy.max_len() {
                Vocab::EOS
            } else {
                draw_token(&policy.logits(&x, &prefix), temperature, rng)
            };
            prefix.push(tok);
            Ok((x, prefix))
        }
    }
}

/// For each prefix length `t`, trains a fresh discriminator per mode on
/// human prefixes vs machine prefixes and reports held-out accuracy. Human
/// data and discriminator initialisation are shared between the modes.
pub fn probe_prefix_accuracy<P: Policy + ?Sized>(
    generator: &P,
    data: &dyn DataSource,
    cfg: &PrefixAccuracyConfig,
) -> Result<Vec<PrefixAccuracyRow>> {
    if cfg.n_train == 0 || cfg.n_eval == 0 {
        return invalid("prefix probe needs positive sample counts");
    }
    if !(cfg.temperature > 0.0) || !cfg.temperature.is_finite() {
        return invalid("prefix probe temperature must be finite and > 0");
    }
    let max_t = cfg.max_prefix.unwrap_or(data.max_len());
    let stream = |k: u64| derive_indexed(cfg.seed, component::PROBE, k);
    let n = cfg.n_train + cfg.n_eval;
    let mut rows = Vec::with_capacity(max_t + 1);
    for t in 0..=max_t {
        let tk = t as u64 * 10;
        let human: Vec<Example> = human_examples(data, n, &mut stream(tk))
            .into_iter()
            .map(|(x, y)| {
                let k = t.min(y.len());
                (x, y[..k].to_vec())
            })
            .collect();
        let mut acc = [0.0; 2];
        for (m, mode) in [PrefixMode::Standard, PrefixMode::TeacherForcing].into_iter().enumerate() {
            let mut rng = stream(tk + 1 + m as u64);
            let machine: Vec<Example> = (0..n)
                .map(|_| machine_prefix(generator, data, mode, t, cfg.temperature, &mut rng))
                .collect::<Result<_>>()?;
            let mut d =
                Discriminator::new(cfg.kind, data.vocab(), data.max_len(), data.input_max_len(), &mut stream(tk + 5))?;
            d.fit(&as_refs(&human[..cfg.n_train]), &as_refs(&machine[..cfg.n_train]), &cfg.train)?;
            let ch = human[cfg.n_train..].iter().filter(|(x, y)| d.score_tokens(x, y) >= 0.5).count();
            let cm = machine[cfg.n_train..].iter().filter(|(x, y)| d.score_tokens(x, y) < 0.5).count();
            acc[m] = (ch + cm) as f64 / (2 * cfg.n_eval) as f64;
        }
        rows.push(PrefixAccuracyRow { t, standard: acc[0], teacher_forcing: acc[1] });
    }
    Ok(rows)
}
