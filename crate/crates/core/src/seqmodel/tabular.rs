use super::policy::Policy;
use super::{free_steps, ConditioningInput, Token, Vocab};
use crate::error::{invalid, Result};
use rand::Rng;

const MAX_PARAMS: usize = 50_000_000;

/// Softmax policy with one logit row per `(X, prefix)` context.
///
/// Contexts are content-token strings numbered by `index(s . t) = c * index(s)
/// + t` with `index(empty) = 0` and `c` the number of content tokens, which
/// enumerates strings shortest-first. Rows exist for prefixes of up to
/// `max_len - 2` content tokens (the next step after that is the forced EOS)
/// and for inputs of up to `input_max_len` tokens. Only tiny instances fit.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    vocab: Vocab,
    max_len: usize,
    input_max_len: usize,
    prefixes: usize,
    params: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TabularCursor {
    input: usize,
    prefix: usize,
    depth: usize,
}

/// `sum_{k=0}^{max_k} c^k`, or `None` on overflow.
fn strings_up_to(c: usize, max_k: usize) -> Option<usize> {
    let mut total: usize = 0;
    let mut pow: usize = 1;
    for _ in 0..=max_k {
        total = total.checked_add(pow)?;
        pow = pow.checked_mul(c)?;
    }
    Some(total)
}

impl TabularPolicy {
    /// All-zero logits, i.e. the uniform policy.
    pub fn zeros(vocab: Vocab, max_len: usize, input_max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return invalid("max_len must be >= 1");
        }
        let c = vocab.content_size();
        let prefixes = if max_len >= 2 { strings_up_to(c, max_len - 2) } else { Some(0) };
        let inputs = strings_up_to(c, input_max_len);
        let size = prefixes
            .zip(inputs)
            .and_then(|(p, i)| p.checked_mul(i))
            .and_then(|r| r.checked_mul(vocab.size()))
            .filter(|&n| n <= MAX_PARAMS);
        let Some(size) = size else {
            return invalid("tabular policy too large for this vocabulary and max_len");
        };
        Ok(TabularPolicy { vocab, max_len, input_max_len, prefixes: prefixes.unwrap_or(0), params: vec![0.0; size] })
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(
        vocab: Vocab,
        max_len: usize,
        input_max_len: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(vocab, max_len, input_max_len)?;
        for v in &mut p.params {
            *v = scale * (2.0 * rng.random::<f64>() - 1.0);
        }
        Ok(p)
    }

    pub fn from_params(vocab: Vocab, max_len: usize, input_max_len: usize, params: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(vocab, max_len, input_max_len)?;
        if params.len() != p.params.len() {
            return invalid(format!("expected {} parameters, got {}", p.params.len(), params.len()));
        }
        p.params = params;
        Ok(p)
    }

    pub fn input_max_len(&self) -> usize {
        self.input_max_len
    }

    pub fn num_rows(&self) -> usize {
        self.params.len() / self.vocab.size()
    }

    /// Parameter offset of the logit row for `(x, prefix)`; `None` for the
    /// forced step or an unrepresentable context.
    pub fn row_offset(&self, x: &ConditioningInput, prefix: &[Token]) -> Option<usize> {
        if x.len() > self.input_max_len || prefix.len() + 1 >= self.max_len {
            return None;
        }
        let mut c = self.cursor(x);
        for &t in prefix {
            if !self.vocab.is_content(t) {
                return None;
            }
            self.advance(&mut c, t);
        }
        Some(self.row_of(&c) * self.vocab.size())
    }

    fn row_of(&self, c: &TabularCursor) -> usize {
        c.input * self.prefixes + c.prefix
    }
}

impl Policy for TabularPolicy {
    type Cursor = TabularCursor;

    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, x: &ConditioningInput) -> Result<()> {
        if x.len() > self.input_max_len {
            return invalid(format!(
                "tabular policy accepts inputs of at most {} tokens, got {}",
                self.input_max_len,
                x.len()
            ));
        }
        if x.tokens().iter().any(|&t| !self.vocab.is_content(t)) {
            return invalid("conditioning input contains a non-content token");
        }
        Ok(())
    }

    fn cursor(&self, x: &ConditioningInput) -> TabularCursor {
        let c = self.vocab.content_size();
        let input = x.tokens().iter().fold(0usize, |idx, &t| c * idx + t as usize);
        TabularCursor { input, prefix: 0, depth: 0 }
    }

    fn cursor_logits(&self, cursor: &TabularCursor) -> Vec<f64> {
        debug_assert!(cursor.depth + 1 < self.max_len, "logits requested for the forced EOS step");
        let v = self.vocab.size();
        let off = self.row_of(cursor) * v;
        self.params[off..off + v].to_vec()
    }

    fn advance(&self, cursor: &mut TabularCursor, token: Token) {
        cursor.prefix = self.vocab.content_size() * cursor.prefix + token as usize;
        cursor.depth += 1;
    }

    fn backprop_logits(&self, x: &ConditioningInput, y: &[Token], dlogits: &[Vec<f64>], out: &mut [f64]) {
        let v = self.vocab.size();
        let steps = free_steps(y.len(), self.max_len).min(dlogits.len());
        let mut c = self.cursor(x);
        for t in 0..steps {
            let off = self.row_of(&c) * v;
            for (o, d) in out[off..off + v].iter_mut().zip(&dlogits[t]) {
                *o += d;
            }
            self.advance(&mut c, y[t]);
        }
    }
}
