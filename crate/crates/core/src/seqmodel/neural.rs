use super::policy::Policy;
use super::rnn::{dot, ElmanLayout};
use super::{free_steps, ConditioningInput, Token, Vocab};
use crate::error::{invalid, Result};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeuralConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig { embed_dim: 16, hidden_dim: 32 }
    }
}

/// Token embedding, one Elman cell and an output projection.
///
/// The cell reads `X`, then BOS, then the emitted prefix; the state after
/// reading BOS and `y_<t` produces the logits of `y_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralPolicy {
    vocab: Vocab,
    max_len: usize,
    config: NeuralConfig,
    rnn: ElmanLayout,
    params: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct NeuralCursor {
    h: Vec<f64>,
}

impl NeuralPolicy {
    pub fn zeros(vocab: Vocab, max_len: usize, config: NeuralConfig) -> Result<Self> {
        if max_len == 0 {
            return invalid("max_len must be >= 1");
        }
        if config.embed_dim == 0 || config.hidden_dim == 0 {
            return invalid("embedding and hidden dimensions must be positive");
        }
        // inputs: EOS, content tokens and BOS
        let rnn = ElmanLayout { n_in: vocab.size() + 1, embed: config.embed_dim, hidden: config.hidden_dim, offset: 0 };
        let len = rnn.len() + vocab.size() * config.hidden_dim + vocab.size();
        Ok(NeuralPolicy { vocab, max_len, config, rnn, params: vec![0.0; len] })
    }

    pub fn random<R: Rng + ?Sized>(vocab: Vocab, max_len: usize, config: NeuralConfig, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(vocab, max_len, config)?;
        p.rnn.init(&mut p.params, rng);
        let scale = 1.0 / (config.hidden_dim as f64).sqrt();
        let wo = p.rnn.end();
        for v in &mut p.params[wo..wo + vocab.size() * config.hidden_dim] {
            *v = scale * (2.0 * rng.random::<f64>() - 1.0);
        }
        Ok(p)
    }

    pub fn from_params(vocab: Vocab, max_len: usize, config: NeuralConfig, params: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(vocab, max_len, config)?;
        if params.len() != p.params.len() {
            return invalid(format!("expected {} parameters, got {}", p.params.len(), params.len()));
        }
        p.params = params;
        Ok(p)
    }

    pub fn config(&self) -> NeuralConfig {
        self.config
    }

    fn project(&self, h: &[f64]) -> Vec<f64> {
        let hd = self.config.hidden_dim;
        let wo = self.rnn.end();
        let bo = wo + self.vocab.size() * hd;
        (0..self.vocab.size())
            .map(|i| self.params[bo + i] + dot(&self.params[wo + i * hd..wo + (i + 1) * hd], h))
            .collect()
    }

    fn inputs(&self, x: &ConditioningInput, y: &[Token], steps: usize) -> Vec<Token> {
        let mut inputs = x.tokens().to_vec();
        inputs.push(self.vocab.bos());
        inputs.extend_from_slice(&y[..steps.saturating_sub(1)]);
        inputs
    }
}

impl Policy for NeuralPolicy {
    type Cursor = NeuralCursor;

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
        if x.tokens().iter().any(|&t| !self.vocab.is_content(t)) {
            return invalid("conditioning input contains a non-content token");
        }
        Ok(())
    }

    fn cursor(&self, x: &ConditioningInput) -> NeuralCursor {
        let mut h = self.rnn.zero_state();
        for &t in x.tokens().iter().chain(std::iter::once(&self.vocab.bos())) {
            h = self.rnn.step(&self.params, &h, t);
        }
        NeuralCursor { h }
    }

    fn cursor_logits(&self, cursor: &NeuralCursor) -> Vec<f64> {
        self.project(&cursor.h)
    }

    fn advance(&self, cursor: &mut NeuralCursor, token: Token) {
        cursor.h = self.rnn.step(&self.params, &cursor.h, token);
    }

    fn step_logits(&self, x: &ConditioningInput, y: &[Token]) -> Vec<Vec<f64>> {
        let steps = free_steps(y.len(), self.max_len);
        if steps == 0 {
            return Vec::new();
        }
        let inputs = self.inputs(x, y, steps);
        let states = self.rnn.forward(&self.params, &inputs);
        states[x.len()..].iter().map(|h| self.project(h)).collect()
    }

    fn backprop_logits(&self, x: &ConditioningInput, y: &[Token], dlogits: &[Vec<f64>], out: &mut [f64]) {
        let steps = free_steps(y.len(), self.max_len).min(dlogits.len());
        if steps == 0 {
            return;
        }
        let hd = self.config.hidden_dim;
        let v = self.vocab.size();
        let wo = self.rnn.end();
        let bo = wo + v * hd;
        let inputs = self.inputs(x, y, steps);
        let states = self.rnn.forward(&self.params, &inputs);
        let mut dh = vec![vec![0.0; hd]; inputs.len()];
        for t in 0..steps {
            let h = &states[x.len() + t];
            let d = &dlogits[t];
            for i in 0..v {
                if d[i] == 0.0 {
                    continue;
                }
                out[bo + i] += d[i];
                for k in 0..hd {
                    out[wo + i * hd + k] += d[i] * h[k];
                    dh[x.len() + t][k] += d[i] * self.params[wo + i * hd + k];
                }
            }
        }
        self.rnn.backward(&self.params, &inputs, &states, &dh, out);
    }
}
