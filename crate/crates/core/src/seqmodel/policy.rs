use super::neural::{NeuralCursor, NeuralPolicy};
use super::softmax::log_softmax;
use super::tabular::{TabularCursor, TabularPolicy};
use super::{free_steps, ConditioningInput, Token, TokenSequence, Vocab};
use crate::error::{invalid, Result};

/// An autoregressive policy `pi_theta(y_t | y_<t, X)` over a flat parameter
/// vector.
///
/// Decoding goes through a cursor that carries whatever state the policy
/// needs to produce the next-token logits, so sampling and beam search never
/// re-read the prefix.
pub trait Policy {
    type Cursor: Clone;

    fn vocab(&self) -> Vocab;
    fn max_len(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Rejects conditioning inputs the policy cannot represent.
    fn check_input(&self, x: &ConditioningInput) -> Result<()>;

    /// Cursor positioned before the first output token.
    fn cursor(&self, x: &ConditioningInput) -> Self::Cursor;

    /// Next-token logits at the cursor. Only valid on free steps, i.e. while
    /// fewer than `max_len - 1` tokens have been emitted.
    fn cursor_logits(&self, cursor: &Self::Cursor) -> Vec<f64>;

    fn advance(&self, cursor: &mut Self::Cursor, token: Token);

    /// Accumulates `sum_t <dlogits[t], d z_t / d theta>` into `out`, where
    /// `z_t` are the logits of free step `t` of `y`.
    fn backprop_logits(&self, x: &ConditioningInput, y: &[Token], dlogits: &[Vec<f64>], out: &mut [f64]);

    fn num_params(&self) -> usize {
        self.params().len()
    }

    fn logits(&self, x: &ConditioningInput, prefix: &[Token]) -> Vec<f64> {
        let mut c = self.cursor(x);
        for &t in prefix {
            self.advance(&mut c, t);
        }
        self.cursor_logits(&c)
    }

    /// Logits of every free step of `y`.
    fn step_logits(&self, x: &ConditioningInput, y: &[Token]) -> Vec<Vec<f64>> {
        let steps = free_steps(y.len(), self.max_len());
        let mut c = self.cursor(x);
        let mut out = Vec::with_capacity(steps);
        for (t, &tok) in y.iter().enumerate().take(steps) {
            out.push(self.cursor_logits(&c));
            if t + 1 < steps {
                self.advance(&mut c, tok);
            }
        }
        out
    }
}

pub(crate) fn check_pair<P: Policy + ?Sized>(policy: &P, x: &ConditioningInput, y: &TokenSequence) -> Result<()> {
    policy.check_input(x)?;
    TokenSequence::validate(y.tokens(), policy.vocab(), policy.max_len())
}

/// `sum_t log q(y_t | y_<t, X)` with `q` the softmax at temperature `t`.
/// The forced EOS step contributes `log 1 = 0`.
pub fn sequence_log_prob<P: Policy + ?Sized>(
    policy: &P,
    x: &ConditioningInput,
    y: &TokenSequence,
    temperature: f64,
) -> Result<f64> {
    check_pair(policy, x, y)?;
    if !(temperature > 0.0) || !temperature.is_finite() {
        return invalid(format!("temperature must be finite and > 0, got {temperature}"));
    }
    Ok(log_prob_unchecked(policy, x, y.tokens(), temperature))
}

pub(crate) fn log_prob_unchecked<P: Policy + ?Sized>(
    policy: &P,
    x: &ConditioningInput,
    y: &[Token],
    temperature: f64,
) -> f64 {
    policy.step_logits(x, y).iter().zip(y).map(|(z, &tok)| log_softmax(z, temperature)[tok as usize]).sum()
}

/// Gradient of `log pi_theta(Y | X)` at temperature 1.
pub fn grad_log_prob<P: Policy + ?Sized>(policy: &P, x: &ConditioningInput, y: &TokenSequence) -> Result<Vec<f64>> {
    check_pair(policy, x, y)?;
    let mut out = vec![0.0; policy.num_params()];
    accumulate_grad_log_prob(policy, x, y.tokens(), 1.0, &mut out);
    Ok(out)
}

/// `out += scale * grad log pi_theta(y | x)`; returns `log pi_theta(y | x)`.
pub(crate) fn accumulate_grad_log_prob<P: Policy + ?Sized>(
    policy: &P,
    x: &ConditioningInput,
    y: &[Token],
    scale: f64,
    out: &mut [f64],
) -> f64 {
    let logits = policy.step_logits(x, y);
    let mut log_prob = 0.0;
    let dlogits: Vec<Vec<f64>> = logits
        .iter()
        .zip(y)
        .map(|(z, &tok)| {
            let ls = log_softmax(z, 1.0);
            log_prob += ls[tok as usize];
            let mut d: Vec<f64> = ls.iter().map(|l| -scale * l.exp()).collect();
            d[tok as usize] += scale;
            d
        })
        .collect();
    if scale != 0.0 {
        policy.backprop_logits(x, y, &dlogits, out);
    }
    log_prob
}

/// Mean negative log-likelihood over `(X, Y)` pairs.
pub fn mean_nll<P: Policy + ?Sized>(policy: &P, data: &[(ConditioningInput, TokenSequence)]) -> Result<f64> {
    if data.is_empty() {
        return invalid("empty data");
    }
    let mut total = 0.0;
    for (x, y) in data {
        total -= sequence_log_prob(policy, x, y, 1.0)?;
    }
    Ok(total / data.len() as f64)
}

/// Either policy embodiment behind one type, e.g. for checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub enum GeneratorPolicy {
    Tabular(TabularPolicy),
    Neural(NeuralPolicy),
}

impl GeneratorPolicy {
    pub fn kind(&self) -> &'static str {
        match self {
            GeneratorPolicy::Tabular(_) => "tabular",
            GeneratorPolicy::Neural(_) => "neural",
        }
    }
}

impl From<TabularPolicy> for GeneratorPolicy {
    fn from(p: TabularPolicy) -> Self {
        GeneratorPolicy::Tabular(p)
    }
}

impl From<NeuralPolicy> for GeneratorPolicy {
    fn from(p: NeuralPolicy) -> Self {
        GeneratorPolicy::Neural(p)
    }
}

#[derive(Clone, Debug)]
pub enum PolicyCursor {
    Tabular(TabularCursor),
    Neural(NeuralCursor),
}

macro_rules! delegate {
    ($self:expr, $p:ident => $body:expr) => {
        match $self {
            GeneratorPolicy::Tabular($p) => $body,
            GeneratorPolicy::Neural($p) => $body,
        }
    };
}

impl Policy for GeneratorPolicy {
    type Cursor = PolicyCursor;

    fn vocab(&self) -> Vocab {
        delegate!(self, p => p.vocab())
    }

    fn max_len(&self) -> usize {
        delegate!(self, p => p.max_len())
    }

    fn params(&self) -> &[f64] {
        delegate!(self, p => p.params())
    }

    fn params_mut(&mut self) -> &mut [f64] {
        delegate!(self, p => p.params_mut())
    }

    fn check_input(&self, x: &ConditioningInput) -> Result<()> {
        delegate!(self, p => p.check_input(x))
    }

    fn cursor(&self, x: &ConditioningInput) -> PolicyCursor {
        match self {
            GeneratorPolicy::Tabular(p) => PolicyCursor::Tabular(p.cursor(x)),
            GeneratorPolicy::Neural(p) => PolicyCursor::Neural(p.cursor(x)),
        }
    }

    fn cursor_logits(&self, cursor: &PolicyCursor) -> Vec<f64> {
        match (self, cursor) {
            (GeneratorPolicy::Tabular(p), PolicyCursor::Tabular(c)) => p.cursor_logits(c),
            (GeneratorPolicy::Neural(p), PolicyCursor::Neural(c)) => p.cursor_logits(c),
            _ => panic!("cursor does not belong to this policy"),
        }
    }

    fn advance(&self, cursor: &mut PolicyCursor, token: Token) {
        match (self, cursor) {
            (GeneratorPolicy::Tabular(p), PolicyCursor::Tabular(c)) => p.advance(c, token),
            (GeneratorPolicy::Neural(p), PolicyCursor::Neural(c)) => p.advance(c, token),
            _ => panic!("cursor does not belong to this policy"),
        }
    }

    fn backprop_logits(&self, x: &ConditioningInput, y: &[Token], dlogits: &[Vec<f64>], out: &mut [f64]) {
        delegate!(self, p => p.backprop_logits(x, y, dlogits, out))
    }

    fn step_logits(&self, x: &ConditioningInput, y: &[Token]) -> Vec<Vec<f64>> {
        delegate!(self, p => p.step_logits(x, y))
    }
}
