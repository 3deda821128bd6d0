//! Ground truth: synthetic data distributions with exact probabilities,
//! exhaustive sequence enumeration, exact `J(theta)` and `grad J(theta)`,
//! and Monte Carlo estimator reports checked against them.

mod data;
mod report;
mod verify;

pub use data::{
    sample_corpus, ConditionalTask, Corpus, DataDistribution, DataSource, MarkovChain, ProbabilisticGrammar,
    TableShape, DEFAULT_INSTANCE_SEED, SYNTHETIC_TASK_SEED,
};
pub use report::{cosine, estimator_report, relative_error, EstimatorReport, EstimatorRun};
pub use verify::{
    build_fixture, check_clipped, check_exact_gradient_fd, check_grad_log_prob_fd, check_is_unbiased,
    check_mixture_support, check_names, check_normalization, check_nucleus_witness, check_variance_ordering,
    grad_log_prob_fd_error, mc_estimate, nucleus_witness, pretrained_policy, random_sequence, run_verification,
    variance_pairs, CheckResult, Fixture, ModeReward, VerificationSummary, VerifyConfig,
};

use crate::error::{invalid, Error, Result};
use crate::rng::child_seed;
use crate::sampling::{sampler_log_prob, SamplerSpec};
use crate::seqmodel::policy::{accumulate_grad_log_prob, log_prob_unchecked};
use crate::seqmodel::{ConditioningInput, Policy, Token, TokenSequence, Vocab};
use crate::trainer::{correction_coefficient, Estimator, Reward};

/// Default cap on the number of enumerated sequences.
pub const DEFAULT_BUDGET: u128 = 1_000_000;

/// Every EOS-terminated sequence of at most `max_len` tokens, ordered by
/// length and then lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumerationIndex {
    vocab: Vocab,
    max_len: usize,
    sequences: Vec<TokenSequence>,
}

impl EnumerationIndex {
    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn sequences(&self) -> &[TokenSequence] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    fn check<P: Policy + ?Sized>(&self, policy: &P) -> Result<()> {
        if policy.vocab() != self.vocab || policy.max_len() != self.max_len {
            return invalid("enumeration index does not match the policy's vocabulary or max_len");
        }
        Ok(())
    }
}

/// Number of sequences: `sum_{k < max_len} c^k` with `c` content tokens.
pub fn sequence_count(vocab: Vocab, max_len: usize) -> Option<u128> {
    let c = vocab.content_size() as u128;
    let mut total: u128 = 0;
    let mut term: u128 = 1;
    for k in 0..max_len {
        total = total.checked_add(term)?;
        if k + 1 < max_len {
            term = term.checked_mul(c)?;
        }
    }
    Some(total)
}

pub fn enumerate_sequences(vocab: Vocab, max_len: usize, budget: u128) -> Result<EnumerationIndex> {
    if max_len == 0 {
        return invalid("max_len must be >= 1");
    }
    let required = sequence_count(vocab, max_len).unwrap_or(u128::MAX);
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let mut sequences = Vec::with_capacity(required as usize);
    let mut layer: Vec<Vec<Token>> = vec![Vec::new()];
    for depth in 0..max_len {
        for body in &layer {
            let mut t = body.clone();
            t.push(Vocab::EOS);
            sequences.push(TokenSequence::from_vec_unchecked(t));
        }
        if depth + 1 < max_len {
            layer = layer
                .iter()
                .flat_map(|b| {
                    vocab.content_tokens().map(move |tok| {
                        let mut n = b.clone();
                        n.push(tok);
                        n
                    })
                })
                .collect();
        }
    }
    Ok(EnumerationIndex { vocab, max_len, sequences })
}

/// `pi_theta(Y | X)` for every enumerated `Y`.
pub fn exact_policy_probs<P: Policy + ?Sized>(
    policy: &P,
    x: &ConditioningInput,
    index: &EnumerationIndex,
) -> Result<Vec<f64>> {
    index.check(policy)?;
    policy.check_input(x)?;
    Ok(index.sequences.iter().map(|y| log_prob_unchecked(policy, x, y.tokens(), 1.0).exp()).collect())
}

/// `pi_hat_theta(Y | X)` under `spec` for every enumerated `Y`.
pub fn exact_sampler_probs<P: Policy + ?Sized>(
    policy: &P,
    x: &ConditioningInput,
    index: &EnumerationIndex,
    spec: &SamplerSpec,
) -> Result<Vec<f64>> {
    index.check(policy)?;
    index.sequences.iter().map(|y| Ok(sampler_log_prob(policy, x, y, spec)?.exp())).collect()
}

/// `p(Y | X)` of a data source for every enumerated `Y`.
pub fn exact_data_probs(data: &dyn DataSource, x: &ConditioningInput, index: &EnumerationIndex) -> Vec<f64> {
    index.sequences.iter().map(|y| data.prob(x, y)).collect()
}

/// `J(theta) = sum_Y pi_theta(Y | X) r(X, Y)`.
pub fn exact_expected_reward<P: Policy + ?Sized>(
    policy: &P,
    x: &ConditioningInput,
    index: &EnumerationIndex,
    reward: &dyn Reward,
) -> Result<f64> {
    let probs = exact_policy_probs(policy, x, index)?;
    Ok(index.sequences.iter().zip(&probs).map(|(y, p)| p * reward.reward(x, y)).sum())
}

/// `grad J(theta) = sum_Y pi_theta(Y | X) r(X, Y) grad log pi_theta(Y | X)`.
pub fn exact_policy_gradient<P: Policy + ?Sized>(
    policy: &P,
    x: &ConditioningInput,
    index: &EnumerationIndex,
    reward: &dyn Reward,
) -> Result<Vec<f64>> {
    let probs = exact_policy_probs(policy, x, index)?;
    let mut out = vec![0.0; policy.num_params()];
    for (y, p) in index.sequences.iter().zip(&probs) {
        let s = p * reward.reward(x, y);
        if s != 0.0 {
            accumulate_grad_log_prob(policy, x, y.tokens(), s, &mut out);
        }
    }
    Ok(out)
}

/// Exact moments of the single-sample estimate `g` of an estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactMoments {
    /// `E[g]`.
    pub mean: Vec<f64>,
    /// `E ||g||^2`.
    pub second_moment: f64,
    /// `E ||g||`.
    pub mean_norm: f64,
}

impl ExactMoments {
    /// `Var ||g||`.
    pub fn norm_variance(&self) -> f64 {
        (self.second_moment - self.mean_norm * self.mean_norm).max(0.0)
    }

    /// `tr Cov(g)`.
    pub fn total_variance(&self) -> f64 {
        (self.second_moment - self.mean.iter().map(|v| v * v).sum::<f64>()).max(0.0)
    }
}

/// Exact moments of one draw of `estimator` under `spec`, by enumerating
/// the main sample and, for the clipped estimator, the independent
/// on-policy correction sample.
pub fn exact_estimator_moments<P: Policy + ?Sized>(
    policy: &P,
    x: &ConditioningInput,
    index: &EnumerationIndex,
    reward: &dyn Reward,
    spec: &SamplerSpec,
    estimator: Estimator,
) -> Result<ExactMoments> {
    estimator.validate()?;
    let behaviour = estimator.behaviour(spec);
    let pi = exact_policy_probs(policy, x, index)?;
    let pi_hat = exact_sampler_probs(policy, x, index, &behaviour)?;
    let p = policy.num_params();
    let grads: Vec<Vec<f64>> = index
        .sequences
        .iter()
        .map(|y| {
            let mut g = vec![0.0; p];
            accumulate_grad_log_prob(policy, x, y.tokens(), 1.0, &mut g);
            g
        })
        .collect();
    let rewards: Vec<f64> = index.sequences.iter().map(|y| reward.reward(x, y)).collect();
    // main-term coefficients, paired with the probability of drawing them
    let main: Vec<(f64, f64)> = (0..index.len())
        .map(|i| {
            let w = if pi_hat[i] > 0.0 { pi[i] / pi_hat[i] } else { 0.0 };
            let coef = match estimator {
                Estimator::Reinforce => rewards[i],
                Estimator::ImportanceSampled => w * rewards[i],
                Estimator::Clipped { c } | Estimator::TruncatedOnly { c } => w.min(c) * rewards[i],
            };
            (pi_hat[i], coef)
        })
        .collect();
    let correction: Vec<(f64, f64)> = match estimator {
        Estimator::Clipped { c } => {
            let spec_probs = exact_sampler_probs(policy, x, index, spec)?;
            (0..index.len())
                .map(|i| {
                    let w = if spec_probs[i] > 0.0 { pi[i] / spec_probs[i] } else { f64::INFINITY };
                    (pi[i], correction_coefficient(w, c) * rewards[i])
                })
                .collect()
        }
        _ => vec![(1.0, 0.0)],
    };
    let mut mean = vec![0.0; p];
    let (mut second, mut mean_norm) = (0.0, 0.0);
    let mut g = vec![0.0; p];
    for (i, &(pa, a)) in main.iter().enumerate() {
        if pa == 0.0 {
            continue;
        }
        for (j, &(pb, b)) in correction.iter().enumerate() {
            if pb == 0.0 {
                continue;
            }
            let prob = pa * pb;
            for k in 0..p {
                let gb = if b != 0.0 { b * grads[j][k] } else { 0.0 };
                g[k] = a * grads[i][k] + gb;
            }
            let sq: f64 = g.iter().map(|v| v * v).sum();
            second += prob * sq;
            mean_norm += prob * sq.sqrt();
            for (m, v) in mean.iter_mut().zip(&g) {
                *m += prob * v;
            }
        }
    }
    Ok(ExactMoments { mean, second_moment: second, mean_norm })
}

/// Deterministic pseudo-random reward in `[0, 1)` keyed by the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashReward {
    pub seed: u64,
}

impl Reward for HashReward {
    fn reward(&self, x: &ConditioningInput, y: &TokenSequence) -> f64 {
        let mut h = child_seed(self.seed, x.len() as u64);
        for &t in x.tokens().iter().chain(y.tokens()) {
            h = child_seed(h, t as u64 + 1);
        }
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// 1 on sequences the data distribution can produce, 0 elsewhere.
pub struct SupportReward<'a>(pub &'a dyn DataSource);

impl Reward for SupportReward<'_> {
    fn reward(&self, x: &ConditioningInput, y: &TokenSequence) -> f64 {
        if self.0.prob(x, y) > 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Exact entropy `-sum p log p` of a data source given `X`.
pub fn exact_entropy(data: &dyn DataSource, x: &ConditioningInput, index: &EnumerationIndex) -> f64 {
    exact_data_probs(data, x, index).iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
}
