//! Human-vs-machine classifier `D_phi(X, Y)`, its logistic-regression
//! training, the sparse binary reward and the diagnostic probes.
//!
//! Two featurizers are available. The n-gram model is a logistic regression
//! over counts of 1-, 2- and 3-grams of `BOS Y` (up to and including the
//! first EOS), a one-hot of the sequence length, aligned `(x_i, y_i)` pairs
//! for conditional tasks, and a bias. The recurrent model runs an Elman cell
//! over `X BOS Y` and reads the final state through a linear layer.
//! Anything after the first EOS (e.g. PAD) is ignored by both.

mod probes;

pub use probes::{
    past_label, prefix_table, probe_cross_temperature, probe_prefix_accuracy, row_label, CrossTemperatureConfig,
    PrefixAccuracyConfig, PrefixAccuracyRow, PrefixMode, ScoreMatrix, HUMAN_COLUMN, UNION_ROW,
};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;
use crate::seqmodel::checkpoint::{decode, encode};
use crate::seqmodel::rnn::{dot, ElmanLayout};
use crate::seqmodel::{ConditioningInput, Token, TokenSequence, Vocab};
use crate::trainer::ReplayBuffer;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

const MAGIC: &str = "coldlab-discriminator";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Human,
    Generated,
}

/// A training example for the discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    pub x: ConditioningInput,
    pub y: TokenSequence,
    label: Label,
    origin_step: i64,
}

impl LabeledPair {
    pub fn human(x: ConditioningInput, y: TokenSequence) -> Self {
        LabeledPair { x, y, label: Label::Human, origin_step: -1 }
    }

    /// `step` is the training step that produced the sample.
    pub fn generated(x: ConditioningInput, y: TokenSequence, step: u64) -> Self {
        LabeledPair { x, y, label: Label::Generated, origin_step: step as i64 }
    }

    pub fn label(&self) -> Label {
        self.label
    }

    /// Step of generation; -1 for human data.
    pub fn origin_step(&self) -> i64 {
        self.origin_step
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscriminatorKind {
    NGram,
    Recurrent { embed_dim: usize, hidden_dim: usize },
}

impl fmt::Display for DiscriminatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscriminatorKind::NGram => f.write_str("ngram"),
            DiscriminatorKind::Recurrent { .. } => f.write_str("recurrent"),
        }
    }
}

impl FromStr for DiscriminatorKind {
    type Err = Error;

    /// `ngram` or `recurrent` (8-dim embedding, 16-dim state).
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ngram" => Ok(DiscriminatorKind::NGram),
            "recurrent" => Ok(DiscriminatorKind::Recurrent { embed_dim: 8, hidden_dim: 16 }),
            other => invalid(format!("unknown discriminator kind `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Model {
    NGram { symbols: usize },
    Recurrent { rnn: ElmanLayout },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    vocab: Vocab,
    max_len: usize,
    input_max_len: usize,
    kind: DiscriminatorKind,
    model: Model,
    params: Vec<f64>,
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Prefix of `tokens` up to and including the first EOS.
fn truncate(tokens: &[Token]) -> &[Token] {
    match tokens.iter().position(|&t| t == Vocab::EOS) {
        Some(i) => &tokens[..=i],
        None => tokens,
    }
}

impl Discriminator {
    /// Discriminator whose score is 0.5 everywhere. The recurrent cell is
    /// initialised from `rng`; the read-out starts at zero.
    pub fn new(
        kind: DiscriminatorKind,
        vocab: Vocab,
        max_len: usize,
        input_max_len: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut d = Self::zeros(kind, vocab, max_len, input_max_len)?;
        if let Model::Recurrent { rnn } = d.model {
            rnn.init(&mut d.params, rng);
        }
        Ok(d)
    }

    fn zeros(kind: DiscriminatorKind, vocab: Vocab, max_len: usize, input_max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return invalid("max_len must be >= 1");
        }
        let (model, n) = match kind {
            DiscriminatorKind::NGram => {
                let s = vocab.size() + 1;
                let pairs = if input_max_len > 0 { s * s } else { 0 };
                let n = s + s * s + s * s * s + (max_len + 1) + pairs + 1;
                if n > 10_000_000 {
                    return invalid("vocabulary too large for trigram features");
                }
                (Model::NGram { symbols: s }, n)
            }
            DiscriminatorKind::Recurrent { embed_dim, hidden_dim } => {
                if embed_dim == 0 || hidden_dim == 0 {
                    return invalid("recurrent discriminator needs positive dimensions");
                }
                let rnn = ElmanLayout { n_in: vocab.size() + 1, embed: embed_dim, hidden: hidden_dim, offset: 0 };
                (Model::Recurrent { rnn }, rnn.end() + hidden_dim + 1)
            }
        };
        Ok(Discriminator { vocab, max_len, input_max_len, kind, model, params: vec![0.0; n] })
    }

    pub fn kind(&self) -> DiscriminatorKind {
        self.kind
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Sparse feature counts of the n-gram model.
    fn features(&self, symbols: usize, x: &ConditioningInput, tokens: &[Token]) -> Vec<(usize, f64)> {
        let s = symbols;
        let bos = self.vocab.bos() as usize;
        let y = truncate(tokens);
        let mut seq = Vec::with_capacity(y.len() + 1);
        seq.push(bos);
        seq.extend(y.iter().map(|&t| t as usize));
        let mut f = Vec::with_capacity(3 * seq.len() + y.len() + 2);
        let (bi, tri) = (s, s + s * s);
        let len_off = tri + s * s * s;
        for i in 0..seq.len() {
            f.push((seq[i], 1.0));
            if i >= 1 {
                f.push((bi + seq[i - 1] * s + seq[i], 1.0));
            }
            if i >= 2 {
                f.push((tri + (seq[i - 2] * s + seq[i - 1]) * s + seq[i], 1.0));
            }
        }
        f.push((len_off + y.len().min(self.max_len), 1.0));
        let mut next = len_off + self.max_len + 1;
        if self.input_max_len > 0 {
            for (i, &t) in y.iter().enumerate() {
                let xi = x.tokens().get(i).map_or(0, |&v| v as usize);
                f.push((next + xi * s + t as usize, 1.0));
            }
            next += s * s;
        }
        f.push((next, 1.0));
        f
    }

    fn rnn_inputs(&self, x: &ConditioningInput, tokens: &[Token]) -> Vec<Token> {
        let mut inputs: Vec<Token> = x.tokens().to_vec();
        inputs.push(self.vocab.bos());
        inputs.extend_from_slice(truncate(tokens));
        inputs
    }

    fn logit(&self, x: &ConditioningInput, tokens: &[Token]) -> f64 {
        match &self.model {
            Model::NGram { symbols } => {
                self.features(*symbols, x, tokens).iter().map(|&(i, v)| self.params[i] * v).sum()
            }
            Model::Recurrent { rnn } => {
                let states = rnn.forward(&self.params, &self.rnn_inputs(x, tokens));
                let h = states.last().expect("at least BOS");
                let w = &self.params[rnn.end()..rnn.end() + rnn.hidden];
                dot(w, h) + self.params[rnn.end() + rnn.hidden]
            }
        }
    }

    /// Adds `coef * d logit / d phi` into `grad`.
    fn backprop(&self, x: &ConditioningInput, tokens: &[Token], coef: f64, grad: &mut [f64]) {
        match &self.model {
            Model::NGram { symbols } => {
                for (i, v) in self.features(*symbols, x, tokens) {
                    grad[i] += coef * v;
                }
            }
            Model::Recurrent { rnn } => {
                let inputs = self.rnn_inputs(x, tokens);
                let states = rnn.forward(&self.params, &inputs);
                let last = states.len() - 1;
                let w_off = rnn.end();
                for (k, hk) in states[last].iter().enumerate() {
                    grad[w_off + k] += coef * hk;
                }
                grad[w_off + rnn.hidden] += coef;
                let mut dh = vec![vec![0.0; rnn.hidden]; states.len()];
                for (k, v) in dh[last].iter_mut().enumerate() {
                    *v = coef * self.params[w_off + k];
                }
                rnn.backward(&self.params, &inputs, &states, &dh, grad);
            }
        }
    }

    /// Probability that `(X, Y)` is human, strictly inside `(0, 1)` for
    /// finite parameters. `tokens` may be a partial prefix.
    pub fn score_tokens(&self, x: &ConditioningInput, tokens: &[Token]) -> f64 {
        sigmoid(self.logit(x, tokens)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }

    pub fn score(&self, x: &ConditioningInput, y: &TokenSequence) -> f64 {
        self.score_tokens(x, y.tokens())
    }

    /// Logistic-regression fit on raw examples: full-batch Adam ascent of
    /// `mean_H log D + mean_G log(1 - D) - l2/2 ||phi||^2`.
    pub fn fit(
        &mut self,
        human: &[(&ConditioningInput, &[Token])],
        generated: &[(&ConditioningInput, &[Token])],
        cfg: &DiscTrainConfig,
    ) -> Result<()> {
        cfg.validate()?;
        if human.is_empty() || generated.is_empty() {
            return invalid("discriminator training needs non-empty human and generated sets");
        }
        let n = self.params.len();
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut grad = vec![0.0; n];
        for step in 1..=cfg.steps {
            grad.iter_mut().zip(&self.params).for_each(|(g, p)| *g = -cfg.l2 * p);
            let wh = 1.0 / human.len() as f64;
            for (x, y) in human {
                let d = sigmoid(self.logit(x, y));
                self.backprop(x, y, wh * (1.0 - d), &mut grad);
            }
            let wg = 1.0 / generated.len() as f64;
            for (x, y) in generated {
                let d = sigmoid(self.logit(x, y));
                self.backprop(x, y, -wg * d, &mut grad);
            }
            let c1 = 1.0 - f64::powi(b1, step as i32);
            let c2 = 1.0 - f64::powi(b2, step as i32);
            for i in 0..n {
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                self.params[i] += cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> String {
        let mut fields = vec![
            ("kind", self.kind.to_string()),
            ("vocab_size", self.vocab.size().to_string()),
            ("max_len", self.max_len.to_string()),
            ("input_max_len", self.input_max_len.to_string()),
        ];
        if let DiscriminatorKind::Recurrent { embed_dim, hidden_dim } = self.kind {
            fields.push(("embed_dim", embed_dim.to_string()));
            fields.push(("hidden_dim", hidden_dim.to_string()));
        }
        encode(MAGIC, &fields, &self.params)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let d = decode(MAGIC, text)?;
        let kind = match d.get("kind")? {
            "ngram" => DiscriminatorKind::NGram,
            "recurrent" => {
                DiscriminatorKind::Recurrent { embed_dim: d.usize("embed_dim")?, hidden_dim: d.usize("hidden_dim")? }
            }
            other => return Err(Error::Format(format!("unknown discriminator kind `{other}`"))),
        };
        let vocab = Vocab::new(d.usize("vocab_size")?)?;
        let mut disc = Self::zeros(kind, vocab, d.usize("max_len")?, d.usize("input_max_len")?)?;
        if d.params.len() != disc.params.len() {
            return Err(Error::Format(format!(
                "expected {} discriminator parameters, found {}",
                disc.params.len(),
                d.params.len()
            )));
        }
        disc.params = d.params;
        Ok(disc)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?)
    }
}

/// 1 iff the pair is predicted human (`score >= 0.5`).
pub fn binary_reward(d: &Discriminator, x: &ConditioningInput, y: &TokenSequence) -> f64 {
    reward_from_score(d.score(x, y))
}

pub fn reward_from_score(score: f64) -> f64 {
    if score >= 0.5 {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscTrainConfig {
    /// Full-batch optimiser steps per call.
    pub steps: usize,
    pub lr: f64,
    pub l2: f64,
    /// Share of generated examples replaced from the replay buffer.
    pub replay_fraction: f64,
}

impl Default for DiscTrainConfig {
    fn default() -> Self {
        DiscTrainConfig { steps: 200, lr: 0.05, l2: 1e-3, replay_fraction: 0.01 }
    }
}

impl DiscTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return invalid(format!("discriminator lr must be > 0, got {}", self.lr));
        }
        if !(self.l2 >= 0.0) || !self.l2.is_finite() {
            return invalid(format!("discriminator l2 must be >= 0, got {}", self.l2));
        }
        if !(0.0..=1.0).contains(&self.replay_fraction) {
            return invalid(format!("replay fraction must be in [0, 1], got {}", self.replay_fraction));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscTrainReport {
    /// Generated examples swapped for replayed ones.
    pub replaced: usize,
    pub objective: f64,
    pub accuracy: f64,
}

/// Trains `d` on human set `h` and generated set `g`. With a replay buffer,
/// `ceil(replay_fraction * |G|)` generated examples (the last ones) are
/// swapped for buffer samples first; human examples are never touched.
pub fn disc_train(
    d: &mut Discriminator,
    h: &[LabeledPair],
    g: &[LabeledPair],
    replay: Option<(&ReplayBuffer, &mut Rng)>,
    cfg: &DiscTrainConfig,
) -> Result<DiscTrainReport> {
    cfg.validate()?;
    if h.is_empty() || g.is_empty() {
        return invalid("discriminator training needs non-empty human and generated sets");
    }
    if h.iter().any(|p| p.label != Label::Human) || g.iter().any(|p| p.label != Label::Generated) {
        return invalid("human and generated sets must carry matching labels");
    }
    let mut generated: Vec<&LabeledPair> = g.iter().collect();
    let mut replaced = 0;
    let replayed;
    if let Some((buffer, rng)) = replay {
        let k = (cfg.replay_fraction * g.len() as f64 - 1e-9).ceil().max(0.0) as usize;
        replayed = buffer.sample(k, rng);
        replaced = replayed.len();
        let start = generated.len() - replaced;
        for (slot, item) in generated[start..].iter_mut().zip(&replayed) {
            *slot = item;
        }
    }
    let hs: Vec<_> = h.iter().map(|p| (&p.x, p.y.tokens())).collect();
    let gs: Vec<_> = generated.iter().map(|p| (&p.x, p.y.tokens())).collect();
    d.fit(&hs, &gs, cfg)?;
    let gen_owned: Vec<LabeledPair> = generated.into_iter().cloned().collect();
    Ok(DiscTrainReport {
        replaced,
        objective: disc_objective(d, h, &gen_owned)?,
        accuracy: accuracy(d, h, &gen_owned)?,
    })
}

/// `mean_H log D + mean_G log(1 - D)`; never positive, `-2 ln 2` for a
/// discriminator that always answers 0.5.
pub fn disc_objective(d: &Discriminator, h: &[LabeledPair], g: &[LabeledPair]) -> Result<f64> {
    if h.is_empty() || g.is_empty() {
        return invalid("objective needs non-empty human and generated sets");
    }
    let lh = h.iter().map(|p| d.score(&p.x, &p.y).ln()).sum::<f64>() / h.len() as f64;
    let lg = g.iter().map(|p| (1.0 - d.score(&p.x, &p.y)).ln()).sum::<f64>() / g.len() as f64;
    Ok(lh + lg)
}

/// Fraction of all examples classified correctly at the 0.5 threshold.
pub fn accuracy(d: &Discriminator, h: &[LabeledPair], g: &[LabeledPair]) -> Result<f64> {
    if h.is_empty() && g.is_empty() {
        return invalid("accuracy of an empty set");
    }
    let ch = h.iter().filter(|p| d.score(&p.x, &p.y) >= 0.5).count();
    let cg = g.iter().filter(|p| d.score(&p.x, &p.y) < 0.5).count();
    Ok((ch + cg) as f64 / (h.len() + g.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn vocab() -> Vocab {
        Vocab::with_content(3).unwrap()
    }

    fn seq(content: &[Token]) -> TokenSequence {
        TokenSequence::from_content(content, vocab(), 5).unwrap()
    }

    fn kinds() -> [DiscriminatorKind; 2] {
        [DiscriminatorKind::NGram, DiscriminatorKind::Recurrent { embed_dim: 4, hidden_dim: 6 }]
    }

    #[test]
    fn fresh_discriminator_scores_half() {
        for kind in kinds() {
            let d = Discriminator::new(kind, vocab(), 5, 0, &mut seeded(1)).unwrap();
            assert_eq!(d.score(&ConditioningInput::empty(), &seq(&[1, 2])), 0.5);
        }
    }

    #[test]
    fn padding_after_eos_is_ignored() {
        let mut d = Discriminator::new(DiscriminatorKind::NGram, vocab(), 5, 0, &mut seeded(1)).unwrap();
        d.params.iter_mut().enumerate().for_each(|(i, p)| *p = (i as f64 * 0.37).sin());
        let x = ConditioningInput::empty();
        let pad = vocab().pad();
        let a = d.score_tokens(&x, &[1, 2, 0]);
        let b = d.score_tokens(&x, &[1, 2, 0, pad, pad]);
        assert_eq!(a, b);
    }

    fn separable() -> (Vec<LabeledPair>, Vec<LabeledPair>) {
        let x = ConditioningInput::empty();
        let h = [[1, 1], [1, 2], [2, 1], [1, 1]].iter().map(|c| LabeledPair::human(x.clone(), seq(c))).collect();
        let g = [[3, 3], [3, 2], [2, 3], [3, 3]].iter().map(|c| LabeledPair::generated(x.clone(), seq(c), 0)).collect();
        (h, g)
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let (h, g) = separable();
        for kind in kinds() {
            let mut d = Discriminator::new(kind, vocab(), 5, 0, &mut seeded(2)).unwrap();
            let cfg = DiscTrainConfig { steps: 300, l2: 0.0, ..Default::default() };
            let rep = disc_train(&mut d, &h, &g, None, &cfg).unwrap();
            assert_eq!(rep.accuracy, 1.0, "{kind}");
            assert!(h.iter().all(|p| d.score(&p.x, &p.y) > 0.9), "{kind}");
            assert!(g.iter().all(|p| d.score(&p.x, &p.y) < 0.1), "{kind}");
        }
    }

    #[test]
    fn objective_of_constant_discriminator() {
        let (h, g) = separable();
        let d = Discriminator::new(DiscriminatorKind::NGram, vocab(), 5, 0, &mut seeded(1)).unwrap();
        let obj = disc_objective(&d, &h, &g).unwrap();
        assert!((obj + 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn empty_sets_are_rejected() {
        let (h, _) = separable();
        let mut d = Discriminator::new(DiscriminatorKind::NGram, vocab(), 5, 0, &mut seeded(1)).unwrap();
        assert!(disc_train(&mut d, &h, &[], None, &DiscTrainConfig::default()).is_err());
        assert!(disc_train(&mut d, &[], &h, None, &DiscTrainConfig::default()).is_err());
    }

    #[test]
    fn mislabeled_sets_are_rejected() {
        let (h, g) = separable();
        let mut d = Discriminator::new(DiscriminatorKind::NGram, vocab(), 5, 0, &mut seeded(1)).unwrap();
        assert!(disc_train(&mut d, &g, &h, None, &DiscTrainConfig::default()).is_err());
    }

    #[test]
    fn replay_replaces_one_percent() {
        let x = ConditioningInput::empty();
        let h: Vec<_> = (0..200).map(|_| LabeledPair::human(x.clone(), seq(&[1]))).collect();
        let g: Vec<_> = (0..200).map(|_| LabeledPair::generated(x.clone(), seq(&[2]), 5)).collect();
        let mut buffer = ReplayBuffer::new(10).unwrap();
        let old: Vec<_> = (0..20).map(|_| LabeledPair::generated(x.clone(), seq(&[3]), 4)).collect();
        buffer.push(&old, 4).unwrap();
        let mut d = Discriminator::new(DiscriminatorKind::NGram, vocab(), 5, 0, &mut seeded(1)).unwrap();
        let mut rng = seeded(3);
        let cfg = DiscTrainConfig { steps: 1, ..Default::default() };
        let rep = disc_train(&mut d, &h, &g, Some((&buffer, &mut rng)), &cfg).unwrap();
        assert_eq!(rep.replaced, 2);
    }

    #[test]
    fn reward_threshold() {
        assert_eq!(reward_from_score(0.9), 1.0);
        assert_eq!(reward_from_score(0.1), 0.0);
        assert_eq!(reward_from_score(0.5), 1.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        for kind in kinds() {
            let mut d = Discriminator::new(kind, vocab(), 5, 2, &mut seeded(4)).unwrap();
            d.params.iter_mut().enumerate().for_each(|(i, p)| *p += (i as f64).cos() / 3.0);
            let back = Discriminator::from_checkpoint(&d.to_checkpoint()).unwrap();
            assert_eq!(back, d);
        }
        assert!(Discriminator::from_checkpoint("coldlab-policy 1\n").is_err());
    }

    #[test]
    fn recurrent_gradient_matches_finite_differences() {
        let kind = DiscriminatorKind::Recurrent { embed_dim: 3, hidden_dim: 4 };
        let mut d = Discriminator::new(kind, vocab(), 5, 2, &mut seeded(8)).unwrap();
        d.params.iter_mut().enumerate().for_each(|(i, p)| *p += 0.3 * (i as f64 * 1.3).sin());
        let x = ConditioningInput::new(vec![2, 1], vocab()).unwrap();
        let y = [3, 1, 0];
        let mut grad = vec![0.0; d.params.len()];
        d.backprop(&x, &y, 1.0, &mut grad);
        let h = 1e-6;
        for k in 0..d.params.len() {
            let mut p = d.clone();
            p.params[k] += h;
            let mut m = d.clone();
            m.params[k] -= h;
            let fd = (p.logit(&x, &y) - m.logit(&x, &y)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-6 + 1e-5 * fd.abs(), "param {k}: {fd} vs {}", grad[k]);
        }
    }
}
