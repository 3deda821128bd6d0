//! Single-layer Elman cell with embedded inputs and hand-written BPTT.
//! Shared by the neural policy and the recurrent discriminator.

use super::Token;
use rand::Rng;

/// Parameter layout of an embedding table followed by the cell weights,
/// starting at `offset` in a larger flat vector:
/// `E[n_in x embed] | W_x[hidden x embed] | W_h[hidden x hidden] | b[hidden]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ElmanLayout {
    pub n_in: usize,
    pub embed: usize,
    pub hidden: usize,
    pub offset: usize,
}

impl ElmanLayout {
    pub fn len(&self) -> usize {
        self.n_in * self.embed + self.hidden * self.embed + self.hidden * self.hidden + self.hidden
    }

    pub fn end(&self) -> usize {
        self.offset + self.len()
    }

    fn emb(&self) -> usize {
        self.offset
    }

    fn wx(&self) -> usize {
        self.emb() + self.n_in * self.embed
    }

    fn wh(&self) -> usize {
        self.wx() + self.hidden * self.embed
    }

    fn bias(&self) -> usize {
        self.wh() + self.hidden * self.hidden
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let mut fill = |range: std::ops::Range<usize>, scale: f64| {
            for v in &mut params[range] {
                *v = scale * (2.0 * rng.random::<f64>() - 1.0);
            }
        };
        fill(self.emb()..self.wx(), 0.5);
        fill(self.wx()..self.wh(), 1.0 / (self.embed as f64).sqrt());
        fill(self.wh()..self.bias(), 1.0 / (self.hidden as f64).sqrt());
        params[self.bias()..self.end()].iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn zero_state(&self) -> Vec<f64> {
        vec![0.0; self.hidden]
    }

    /// `h' = tanh(W_x e(input) + W_h h + b)`.
    pub fn step(&self, params: &[f64], h: &[f64], input: Token) -> Vec<f64> {
        let (e, hd) = (self.embed, self.hidden);
        let emb = &params[self.emb() + input as usize * e..][..e];
        let wx = &params[self.wx()..self.wh()];
        let wh = &params[self.wh()..self.bias()];
        let b = &params[self.bias()..self.end()];
        (0..hd)
            .map(|j| {
                let a = b[j] + dot(&wx[j * e..(j + 1) * e], emb) + dot(&wh[j * hd..(j + 1) * hd], h);
                a.tanh()
            })
            .collect()
    }

    /// Hidden state after each input.
    pub fn forward(&self, params: &[f64], inputs: &[Token]) -> Vec<Vec<f64>> {
        let mut h = self.zero_state();
        let mut states = Vec::with_capacity(inputs.len());
        for &inp in inputs {
            h = self.step(params, &h, inp);
            states.push(h.clone());
        }
        states
    }

    /// Backpropagates external gradients `dh[i]` on each state into `grad`.
    pub fn backward(&self, params: &[f64], inputs: &[Token], states: &[Vec<f64>], dh: &[Vec<f64>], grad: &mut [f64]) {
        let (e, hd) = (self.embed, self.hidden);
        let wx_off = self.wx();
        let wh_off = self.wh();
        let b_off = self.bias();
        let zero = self.zero_state();
        let mut carry = self.zero_state();
        for i in (0..inputs.len()).rev() {
            let h = &states[i];
            let h_prev = if i == 0 { &zero } else { &states[i - 1] };
            let da: Vec<f64> = (0..hd).map(|j| (dh[i][j] + carry[j]) * (1.0 - h[j] * h[j])).collect();
            let emb_off = self.emb() + inputs[i] as usize * e;
            for j in 0..hd {
                if da[j] == 0.0 {
                    continue;
                }
                grad[b_off + j] += da[j];
                for k in 0..e {
                    grad[wx_off + j * e + k] += da[j] * params[emb_off + k];
                    grad[emb_off + k] += da[j] * params[wx_off + j * e + k];
                }
                for k in 0..hd {
                    grad[wh_off + j * hd + k] += da[j] * h_prev[k];
                }
            }
            carry = (0..hd).map(|k| (0..hd).map(|j| da[j] * params[wh_off + j * hd + k]).sum()).collect();
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
