//! Synthetic "human" distributions with exact sequence probabilities.
//!
//! All distributions follow the sequence conventions of
//! [`crate::seqmodel`]: at most `max_len` tokens including EOS, with EOS
//! forced (probability one) once `max_len - 1` content tokens are emitted.

use crate::error::{invalid, Result};
use crate::seqmodel::{free_steps, ConditioningInput, Token, TokenSequence, Vocab};
use rand::{Rng, RngCore};

/// Ground-truth sequence distribution `p(Y | X)` with an input distribution
/// `p(X)` (a point mass on the empty input for unconditional tasks).
pub trait DataSource: Sync {
    fn vocab(&self) -> Vocab;
    fn max_len(&self) -> usize;

    /// Longest conditioning input; 0 for unconditional tasks.
    fn input_max_len(&self) -> usize {
        0
    }

    fn sample_input(&self, _rng: &mut dyn RngCore) -> ConditioningInput {
        ConditioningInput::empty()
    }

    fn input_prob(&self, x: &ConditioningInput) -> f64 {
        if x.is_empty() {
            1.0
        } else {
            0.0
        }
    }

    /// Every input with positive probability, in a fixed order.
    fn input_support(&self) -> Vec<ConditioningInput> {
        vec![ConditioningInput::empty()]
    }

    fn sample(&self, x: &ConditioningInput, rng: &mut dyn RngCore) -> TokenSequence;

    /// Exact `p(Y | X)`.
    fn prob(&self, x: &ConditioningInput, y: &TokenSequence) -> f64;

    fn sample_pair(&self, rng: &mut dyn RngCore) -> (ConditioningInput, TokenSequence) {
        let x = self.sample_input(rng);
        let y = self.sample(&x, rng);
        (x, y)
    }
}

/// Parameters for randomly generated transition tables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TableShape {
    /// Content-token logits are drawn from `U(-sharpness, sharpness)`.
    pub sharpness: f64,
    /// Probability that a content entry is zeroed (at least one survives).
    pub sparsity: f64,
    /// EOS probability in rows after the first step.
    pub eos: f64,
    /// EOS probability in the first row (empty prefix).
    pub eos_first: f64,
}

impl Default for TableShape {
    fn default() -> Self {
        TableShape { sharpness: 2.0, sparsity: 0.3, eos: 0.25, eos_first: 0.02 }
    }
}

fn random_row(vocab: Vocab, eos: f64, shape: &TableShape, rng: &mut dyn RngCore) -> Vec<f64> {
    let c = vocab.content_size();
    let mut w: Vec<f64> = (0..c).map(|_| (shape.sharpness * (2.0 * rng.random::<f64>() - 1.0)).exp()).collect();
    let keep = rng.random_range(0..c);
    for (i, wi) in w.iter_mut().enumerate() {
        if i != keep && rng.random::<f64>() < shape.sparsity {
            *wi = 0.0;
        }
    }
    let total: f64 = w.iter().sum();
    let mut row = Vec::with_capacity(vocab.size());
    row.push(eos);
    row.extend(w.iter().map(|wi| (1.0 - eos) * wi / total));
    normalize(&mut row);
    row
}

fn normalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
}

fn check_rows(rows: &[Vec<f64>], width: usize) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return invalid(format!("row {i} has {} entries, expected {width}", r.len()));
        }
        if r.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return invalid(format!("row {i} has a negative or non-finite entry"));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return invalid(format!("row {i} does not sum to 1"));
        }
    }
    Ok(())
}

fn draw(row: &[f64], rng: &mut dyn RngCore) -> Token {
    let u = rng.random::<f64>();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return i as Token;
        }
    }
    last as Token
}

/// Markov chain of order `k` over the emitted tokens; contexts shorter than
/// `k` are padded with BOS.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovChain {
    vocab: Vocab,
    max_len: usize,
    order: usize,
    rows: Vec<Vec<f64>>,
}

impl MarkovChain {
    /// `rows[ctx]` where `ctx = sum_i d_i * size^i` over the last `order`
    /// tokens, most recent first, with BOS encoded as digit 0.
    pub fn new(vocab: Vocab, max_len: usize, order: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if max_len == 0 {
            return invalid("max_len must be >= 1");
        }
        let expected = vocab.size().checked_pow(order as u32).unwrap_or(usize::MAX);
        if rows.len() != expected {
            return invalid(format!("order-{order} chain needs {expected} rows, got {}", rows.len()));
        }
        check_rows(&rows, vocab.size())?;
        Ok(MarkovChain { vocab, max_len, order, rows })
    }

    pub fn random(
        vocab: Vocab,
        max_len: usize,
        order: usize,
        shape: &TableShape,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if order > 4 {
            return invalid("Markov order above 4 is not supported");
        }
        let n = vocab.size().pow(order as u32);
        let rows = (0..n)
            .map(|ctx| {
                let eos = if ctx == 0 { shape.eos_first } else { shape.eos };
                random_row(vocab, eos, shape, rng)
            })
            .collect();
        Self::new(vocab, max_len, order, rows)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn context(&self, prefix: &[Token]) -> usize {
        let mut ctx = 0;
        let mut scale = 1;
        for i in 0..self.order {
            let d = if i < prefix.len() { prefix[prefix.len() - 1 - i] as usize } else { 0 };
            ctx += d * scale;
            scale *= self.vocab.size();
        }
        ctx
    }

    pub fn row(&self, prefix: &[Token]) -> &[f64] {
        &self.rows[self.context(prefix)]
    }
}

impl DataSource for MarkovChain {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn sample(&self, _x: &ConditioningInput, rng: &mut dyn RngCore) -> TokenSequence {
        let mut tokens = Vec::new();
        loop {
            if tokens.len() + 1 >= self.max_len {
                tokens.push(Vocab::EOS);
                break;
            }
            let t = draw(self.row(&tokens), rng);
            tokens.push(t);
            if t == Vocab::EOS {
                break;
            }
        }
        TokenSequence::from_vec_unchecked(tokens)
    }

    fn prob(&self, x: &ConditioningInput, y: &TokenSequence) -> f64 {
        if !x.is_empty() || y.len() > self.max_len {
            return 0.0;
        }
        let t = y.tokens();
        (0..free_steps(t.len(), self.max_len)).map(|i| self.row(&t[..i])[t[i] as usize]).product()
    }
}

/// Deterministic probabilistic finite-state grammar: state `s` emits token
/// `t` with probability `emit[s][t]` and moves to `next[s][t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilisticGrammar {
    vocab: Vocab,
    max_len: usize,
    emit: Vec<Vec<f64>>,
    next: Vec<Vec<usize>>,
}

impl ProbabilisticGrammar {
    pub fn new(vocab: Vocab, max_len: usize, emit: Vec<Vec<f64>>, next: Vec<Vec<usize>>) -> Result<Self> {
        if max_len == 0 {
            return invalid("max_len must be >= 1");
        }
        if emit.is_empty() || emit.len() != next.len() {
            return invalid("grammar needs matching, non-empty emission and transition tables");
        }
        check_rows(&emit, vocab.size())?;
        if next.iter().any(|r| r.len() != vocab.size() || r.iter().any(|&s| s >= emit.len())) {
            return invalid("transition table refers to an unknown state");
        }
        Ok(ProbabilisticGrammar { vocab, max_len, emit, next })
    }

    pub fn random(
        vocab: Vocab,
        max_len: usize,
        states: usize,
        shape: &TableShape,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if states == 0 {
            return invalid("grammar needs at least one state");
        }
        let emit = (0..states)
            .map(|s| random_row(vocab, if s == 0 { shape.eos_first } else { shape.eos }, shape, rng))
            .collect();
        let next = (0..states).map(|_| (0..vocab.size()).map(|_| rng.random_range(0..states)).collect()).collect();
        Self::new(vocab, max_len, emit, next)
    }
}

impl DataSource for ProbabilisticGrammar {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn sample(&self, _x: &ConditioningInput, rng: &mut dyn RngCore) -> TokenSequence {
        let mut tokens = Vec::new();
        let mut state = 0;
        loop {
            if tokens.len() + 1 >= self.max_len {
                tokens.push(Vocab::EOS);
                break;
            }
            let t = draw(&self.emit[state], rng);
            tokens.push(t);
            if t == Vocab::EOS {
                break;
            }
            state = self.next[state][t as usize];
        }
        TokenSequence::from_vec_unchecked(tokens)
    }

    fn prob(&self, x: &ConditioningInput, y: &TokenSequence) -> f64 {
        if !x.is_empty() || y.len() > self.max_len {
            return 0.0;
        }
        let mut state = 0;
        let mut p = 1.0;
        let t = y.tokens();
        for &tok in &t[..free_steps(t.len(), self.max_len)] {
            p *= self.emit[state][tok as usize];
            state = self.next[state][tok as usize];
        }
        p
    }
}

/// Conditional task: `X` is drawn from a first-order chain over content
/// tokens (at most `input_max_len` of them) and `Y` is a noisy token-wise
/// translation of `X`. At step `t`, with probability `fidelity` the target
/// emits `map[x_t]` (or EOS once `X` is exhausted), otherwise it draws from a
/// noise row indexed by its previous token. Longer inputs leave more room
/// for compounding errors.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalTask {
    vocab: Vocab,
    input: MarkovChain,
    max_len: usize,
    map: Vec<Token>,
    fidelity: f64,
    noise: Vec<Vec<f64>>,
}

impl ConditionalTask {
    pub fn random(
        vocab: Vocab,
        input_max_len: usize,
        fidelity: f64,
        shape: &TableShape,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&fidelity) {
            return invalid("fidelity must be in [0, 1]");
        }
        if input_max_len == 0 {
            return invalid("conditional task needs input_max_len >= 1");
        }
        let input_shape = TableShape { eos_first: 0.0, ..*shape };
        let input = MarkovChain::random(vocab, input_max_len + 1, 1, &input_shape, rng)?;
        let mut map: Vec<Token> = vocab.content_tokens().collect();
        for i in (1..map.len()).rev() {
            let j = rng.random_range(0..=i);
            map.swap(i, j);
        }
        let noise = (0..vocab.size()).map(|_| random_row(vocab, shape.eos, shape, rng)).collect();
        Ok(ConditionalTask { vocab, input, max_len: input_max_len + 2, map, fidelity, noise })
    }

    fn step_row(&self, x: &ConditioningInput, prefix: &[Token]) -> Vec<f64> {
        let prev = prefix.last().copied().unwrap_or(0) as usize;
        let target = x.tokens().get(prefix.len()).map_or(Vocab::EOS, |&t| self.map[t as usize - 1]);
        let mut row: Vec<f64> = self.noise[prev].iter().map(|p| (1.0 - self.fidelity) * p).collect();
        row[target as usize] += self.fidelity;
        row
    }

    /// The noiseless translation of `x`.
    pub fn translate(&self, x: &ConditioningInput) -> Vec<Token> {
        x.tokens().iter().map(|&t| self.map[t as usize - 1]).collect()
    }
}

impl DataSource for ConditionalTask {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn input_max_len(&self) -> usize {
        self.input.max_len - 1
    }

    fn sample_input(&self, rng: &mut dyn RngCore) -> ConditioningInput {
        let y = self.input.sample(&ConditioningInput::empty(), rng);
        ConditioningInput::from_vec_unchecked(y.content().to_vec())
    }

    fn input_prob(&self, x: &ConditioningInput) -> f64 {
        match TokenSequence::from_content(x.tokens(), self.vocab, self.input.max_len) {
            Ok(y) => self.input.prob(&ConditioningInput::empty(), &y),
            Err(_) => 0.0,
        }
    }

    fn input_support(&self) -> Vec<ConditioningInput> {
        let index =
            super::enumerate_sequences(self.vocab, self.input.max_len, u128::MAX).expect("input space is enumerable");
        index
            .sequences()
            .iter()
            .map(|y| ConditioningInput::from_vec_unchecked(y.content().to_vec()))
            .filter(|x| self.input_prob(x) > 0.0)
            .collect()
    }

    fn sample(&self, x: &ConditioningInput, rng: &mut dyn RngCore) -> TokenSequence {
        let mut tokens = Vec::new();
        loop {
            if tokens.len() + 1 >= self.max_len {
                tokens.push(Vocab::EOS);
                break;
            }
            let t = draw(&self.step_row(x, &tokens), rng);
            tokens.push(t);
            if t == Vocab::EOS {
                break;
            }
        }
        TokenSequence::from_vec_unchecked(tokens)
    }

    fn prob(&self, x: &ConditioningInput, y: &TokenSequence) -> f64 {
        if y.len() > self.max_len {
            return 0.0;
        }
        let t = y.tokens();
        (0..free_steps(t.len(), self.max_len)).map(|i| self.step_row(x, &t[..i])[t[i] as usize]).product()
    }
}

/// The synthetic distributions behind one type.
#[derive(Clone, Debug, PartialEq)]
pub enum DataDistribution {
    Markov(MarkovChain),
    Grammar(ProbabilisticGrammar),
    Conditional(ConditionalTask),
}

/// Seed of the default verification instance.
pub const DEFAULT_INSTANCE_SEED: u64 = 20_200_601;

/// Seed of the synthetic training task.
pub const SYNTHETIC_TASK_SEED: u64 = 20_200_602;

impl DataDistribution {
    /// 4 content tokens + EOS, `max_len = 4`, second-order Markov chain:
    /// 85 sequences, small enough to enumerate exactly.
    pub fn default_instance() -> Self {
        let vocab = Vocab::with_content(4).expect("valid vocab");
        let mut rng = crate::rng::seeded(DEFAULT_INSTANCE_SEED);
        DataDistribution::Markov(
            MarkovChain::random(vocab, 4, 2, &TableShape::default(), &mut rng).expect("valid default instance"),
        )
    }

    /// 6 content tokens + EOS, `max_len = 7`, second-order Markov chain with
    /// EOS probability 0.15 per step: 55,987 sequences, entropy about 6.6
    /// nats. Large enough that an MLE generator fitted on a few thousand
    /// samples is visibly imperfect, small enough for exact oracle NLL.
    pub fn synthetic_task() -> Self {
        let vocab = Vocab::with_content(6).expect("valid vocab");
        let shape = TableShape { eos: 0.15, ..TableShape::default() };
        let mut rng = crate::rng::seeded(SYNTHETIC_TASK_SEED);
        DataDistribution::Markov(MarkovChain::random(vocab, 7, 2, &shape, &mut rng).expect("valid synthetic task"))
    }
}

macro_rules! each {
    ($self:expr, $d:ident => $body:expr) => {
        match $self {
            DataDistribution::Markov($d) => $body,
            DataDistribution::Grammar($d) => $body,
            DataDistribution::Conditional($d) => $body,
        }
    };
}

impl DataSource for DataDistribution {
    fn vocab(&self) -> Vocab {
        each!(self, d => d.vocab())
    }
    fn max_len(&self) -> usize {
        each!(self, d => d.max_len())
    }
    fn input_max_len(&self) -> usize {
        each!(self, d => d.input_max_len())
    }
    fn sample_input(&self, rng: &mut dyn RngCore) -> ConditioningInput {
        each!(self, d => d.sample_input(rng))
    }
    fn input_prob(&self, x: &ConditioningInput) -> f64 {
        each!(self, d => d.input_prob(x))
    }
    fn input_support(&self) -> Vec<ConditioningInput> {
        each!(self, d => d.input_support())
    }
    fn sample(&self, x: &ConditioningInput, rng: &mut dyn RngCore) -> TokenSequence {
        each!(self, d => d.sample(x, rng))
    }
    fn prob(&self, x: &ConditioningInput, y: &TokenSequence) -> f64 {
        each!(self, d => d.prob(x, y))
    }
}

/// Draws `n` `(X, Y)` pairs.
pub fn sample_corpus(
    data: &dyn DataSource,
    n: usize,
    rng: &mut dyn RngCore,
) -> Vec<(ConditioningInput, TokenSequence)> {
    (0..n).map(|_| data.sample_pair(rng)).collect()
}

/// Empirical distribution of a fixed corpus of `(X, Y)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    vocab: Vocab,
    max_len: usize,
    input_max_len: usize,
    pairs: Vec<(ConditioningInput, TokenSequence)>,
}

impl Corpus {
    pub fn new(vocab: Vocab, max_len: usize, pairs: Vec<(ConditioningInput, TokenSequence)>) -> Result<Self> {
        if pairs.is_empty() {
            return invalid("empty corpus");
        }
        for (x, y) in &pairs {
            TokenSequence::validate(y.tokens(), vocab, max_len)?;
            if x.tokens().iter().any(|&t| !vocab.is_content(t)) {
                return invalid("corpus input contains a non-content token");
            }
        }
        let input_max_len = pairs.iter().map(|(x, _)| x.len()).max().unwrap_or(0);
        Ok(Corpus { vocab, max_len, input_max_len, pairs })
    }

    pub fn pairs(&self) -> &[(ConditioningInput, TokenSequence)] {
        &self.pairs
    }
}

impl DataSource for Corpus {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn input_max_len(&self) -> usize {
        self.input_max_len
    }

    fn sample_input(&self, rng: &mut dyn RngCore) -> ConditioningInput {
        self.pairs[rng.random_range(0..self.pairs.len())].0.clone()
    }

    fn input_prob(&self, x: &ConditioningInput) -> f64 {
        self.pairs.iter().filter(|(px, _)| px == x).count() as f64 / self.pairs.len() as f64
    }

    fn input_support(&self) -> Vec<ConditioningInput> {
        let mut seen: Vec<ConditioningInput> = Vec::new();
        for (x, _) in &self.pairs {
            if !seen.contains(x) {
                seen.push(x.clone());
            }
        }
        seen
    }

    fn sample(&self, x: &ConditioningInput, rng: &mut dyn RngCore) -> TokenSequence {
        let matching: Vec<&TokenSequence> = self.pairs.iter().filter(|(px, _)| px == x).map(|(_, y)| y).collect();
        if matching.is_empty() {
            return self.pairs[rng.random_range(0..self.pairs.len())].1.clone();
        }
        matching[rng.random_range(0..matching.len())].clone()
    }

    fn prob(&self, x: &ConditioningInput, y: &TokenSequence) -> f64 {
        let (mut nx, mut nxy) = (0usize, 0usize);
        for (px, py) in &self.pairs {
            if px == x {
                nx += 1;
                if py == y {
                    nxy += 1;
                }
            }
        }
        if nx == 0 {
            0.0
        } else {
            nxy as f64 / nx as f64
        }
    }
}
