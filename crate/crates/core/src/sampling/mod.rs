//! Behaviour distributions `pi_hat_theta`, their exact sequence densities,
//! importance weights and deterministic decoding.
//!
//! Nucleus sets are always computed from the temperature-1 distribution over
//! the realised prefix, so evaluating a nucleus density costs one sort per
//! step: `O(L |V| log |V|)` per sequence.

mod decode;
mod spec;

pub use decode::{decode, greedy_decode, Decoding};
pub use spec::{SamplerSpec, DEFAULT_NUCLEUS_P};

use crate::error::{invalid, Error, Result};
use crate::seqmodel::policy::check_pair;
use crate::seqmodel::{log_softmax, ConditioningInput, Policy, Token, TokenSequence, Vocab};
use rand::Rng;

/// One sampled sequence with its densities under `pi_theta` (temperature 1)
/// and under the behaviour distribution it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub x: ConditioningInput,
    pub y: TokenSequence,
    pub log_pi: f64,
    pub log_pi_hat: f64,
    /// `exp(log_pi - log_pi_hat)`; infinite when `log_pi_hat` is `-inf`.
    pub weight: f64,
    pub reward: f64,
}

impl Trajectory {
    pub fn new(x: ConditioningInput, y: TokenSequence, log_pi: f64, log_pi_hat: f64) -> Self {
        let weight = (log_pi - log_pi_hat).exp();
        Trajectory { x, y, log_pi, log_pi_hat, weight, reward: 0.0 }
    }
}

/// `w(tau) = pi_theta(tau) / pi_hat_theta(tau)`.
pub fn importance_weight(traj: &Trajectory) -> Result<f64> {
    if traj.log_pi_hat == f64::NEG_INFINITY || traj.log_pi_hat.is_nan() {
        return Err(Error::UnsupportedSample(format!(
            "sequence `{}` has zero probability under the behaviour distribution",
            traj.y
        )));
    }
    let w = (traj.log_pi - traj.log_pi_hat).exp();
    if !w.is_finite() {
        return Err(Error::UnsupportedSample(format!("importance weight overflow for `{}`", traj.y)));
    }
    Ok(w)
}

/// Smallest set of tokens, taken in descending probability with ties broken
/// by ascending id, whose cumulative mass reaches `p`. Zero-probability
/// tokens are never included.
pub fn nucleus_set(probs: &[f64], p: f64) -> Result<Vec<Token>> {
    if !(p > 0.0) || p > 1.0 {
        return invalid(format!("nucleus mass must be in (0, 1], got {p}"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 || probs.iter().any(|q| !(*q >= 0.0)) {
        return invalid("nucleus_set needs a probability vector");
    }
    Ok(nucleus_unchecked(probs, p))
}

fn nucleus_unchecked(probs: &[f64], p: f64) -> Vec<Token> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    if p >= 1.0 {
        return order.into_iter().map(|i| i as Token).collect();
    }
    let mut mass = 0.0;
    let mut out = Vec::new();
    for i in order {
        out.push(i as Token);
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    out
}

/// Per-sequence accumulator for the log-densities a spec needs.
#[derive(Clone, Copy, Debug, Default)]
struct Densities {
    log_pi: f64,
    log_temp: f64,
    log_nucleus: f64,
}

impl Densities {
    fn add_step(&mut self, logits: &[f64], token: Token, spec: &SamplerSpec) {
        let ls = log_softmax(logits, 1.0);
        let tok = token as usize;
        self.log_pi += ls[tok];
        let (gamma, p) = match *spec {
            SamplerSpec::Temperature { gamma } => (Some(gamma), None),
            SamplerSpec::Nucleus { p } => (None, Some(p)),
            SamplerSpec::Mixture { gamma, p, .. } => (Some(gamma), Some(p)),
        };
        if let Some(gamma) = gamma {
            self.log_temp += if gamma == 1.0 { ls[tok] } else { log_softmax(logits, gamma)[tok] };
        }
        if let Some(p) = p {
            self.log_nucleus += nucleus_log_prob(&ls, token, p);
        }
    }

    fn behaviour(&self, spec: &SamplerSpec) -> f64 {
        match *spec {
            SamplerSpec::Temperature { .. } => self.log_temp,
            SamplerSpec::Nucleus { .. } => self.log_nucleus,
            SamplerSpec::Mixture { eps, .. } => {
                if eps <= 0.0 {
                    self.log_temp
                } else if eps >= 1.0 {
                    self.log_nucleus
                } else {
                    crate::seqmodel::log_sum_exp(&[eps.ln() + self.log_nucleus, (1.0 - eps).ln() + self.log_temp])
                }
            }
        }
    }
}

fn nucleus_log_prob(log_probs: &[f64], token: Token, p: f64) -> f64 {
    let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
    let set = nucleus_unchecked(&probs, p);
    if !set.contains(&token) {
        return f64::NEG_INFINITY;
    }
    let mass: f64 = set.iter().map(|&t| probs[t as usize]).sum();
    log_probs[token as usize] - mass.ln()
}

/// `log pi_hat_theta(Y | X)` for the given spec; `-inf` when a token falls
/// outside the nucleus of its step.
pub fn sampler_log_prob<P: Policy + ?Sized>(
    policy: &P,
    x: &ConditioningInput,
    y: &TokenSequence,
    spec: &SamplerSpec,
) -> Result<f64> {
    spec.validate()?;
    check_pair(policy, x, y)?;
    Ok(densities(policy, x, y.tokens(), spec).behaviour(spec))
}

fn densities<P: Policy + ?Sized>(policy: &P, x: &ConditioningInput, y: &[Token], spec: &SamplerSpec) -> Densities {
    let mut d = Densities::default();
    for (z, &tok) in policy.step_logits(x, y).iter().zip(y) {
        d.add_step(z, tok, spec);
    }
    d
}

/// Builds the trajectory record for an externally supplied sequence.
pub fn score_trajectory<P: Policy + ?Sized>(
    policy: &P,
    x: &ConditioningInput,
    y: &TokenSequence,
    spec: &SamplerSpec,
) -> Result<Trajectory> {
    spec.validate()?;
    check_pair(policy, x, y)?;
    let d = densities(policy, x, y.tokens(), spec);
    Ok(Trajectory::new(x.clone(), y.clone(), d.log_pi, d.behaviour(spec)))
}

/// Inverse-CDF draw over `candidates` weighted by `probs`.
fn draw<R: Rng + ?Sized>(probs: &[f64], candidates: &[Token], rng: &mut R) -> Token {
    let mass: f64 = candidates.iter().map(|&t| probs[t as usize]).sum();
    let u = rng.random::<f64>() * mass;
    let mut cum = 0.0;
    let mut last = candidates[0];
    for &t in candidates {
        let q = probs[t as usize];
        if q <= 0.0 {
            continue;
        }
        cum += q;
        last = t;
        if u < cum {
            return t;
        }
    }
    last
}

#[derive(Clone, Copy)]
enum Branch {
    Temperature(f64),
    Nucleus(f64),
}

/// Draws one sequence from the behaviour distribution `spec`.
///
/// For mixtures the branch is drawn once per sequence; `log_pi_hat` is
/// always the mixture density, never the density of the drawn branch.
pub fn sample<P: Policy + ?Sized, R: Rng + ?Sized>(
    policy: &P,
    x: &ConditioningInput,
    spec: &SamplerSpec,
    rng: &mut R,
) -> Result<Trajectory> {
    spec.validate()?;
    policy.check_input(x)?;
    let branch = match *spec {
        SamplerSpec::Temperature { gamma } => Branch::Temperature(gamma),
        SamplerSpec::Nucleus { p } => Branch::Nucleus(p),
        SamplerSpec::Mixture { eps, p, gamma } => {
            if rng.random::<f64>() < eps {
                Branch::Nucleus(p)
            } else {
                Branch::Temperature(gamma)
            }
        }
    };
    let max_len = policy.max_len();
    let all: Vec<Token> = (0..policy.vocab().size() as Token).collect();
    let mut cursor = policy.cursor(x);
    let mut tokens = Vec::with_capacity(max_len);
    let mut d = Densities::default();
    loop {
        if tokens.len() + 1 >= max_len {
            tokens.push(Vocab::EOS);
            break;
        }
        let z = policy.cursor_logits(&cursor);
        let tok = match branch {
            Branch::Temperature(gamma) => {
                let probs: Vec<f64> = log_softmax(&z, gamma).iter().map(|l| l.exp()).collect();
                draw(&probs, &all, rng)
            }
            Branch::Nucleus(p) => {
                let probs: Vec<f64> = log_softmax(&z, 1.0).iter().map(|l| l.exp()).collect();
                let set = nucleus_unchecked(&probs, p);
                draw(&probs, &set, rng)
            }
        };
        d.add_step(&z, tok, spec);
        tokens.push(tok);
        if tok == Vocab::EOS {
            break;
        }
        policy.advance(&mut cursor, tok);
    }
    let y = TokenSequence::from_vec_unchecked(tokens);
    Ok(Trajectory::new(x.clone(), y, d.log_pi, d.behaviour(spec)))
}

/// Samples one trajectory per input, split over `workers` threads.
///
/// Worker `w` owns the contiguous block `w` of the inputs; draw `i` of the
/// batch uses its own RNG derived from `(seed, i)`. Output order is worker id
/// then draw index, i.e. input order, so results depend on `seed` only.
pub fn sample_batch<P>(
    policy: &P,
    inputs: &[ConditioningInput],
    spec: &SamplerSpec,
    seed: u64,
    workers: usize,
) -> Result<Vec<Trajectory>>
where
    P: Policy + Sync + ?Sized,
{
    spec.validate()?;
    let workers = workers.max(1).min(inputs.len().max(1));
    let chunk = inputs.len().div_ceil(workers).max(1);
    let run = |w: usize, block: &[ConditioningInput]| -> Result<Vec<Trajectory>> {
        let first = w * chunk;
        block
            .iter()
            .enumerate()
            .map(|(i, x)| sample(policy, x, spec, &mut crate::rng::derive(seed, (first + i) as u64)))
            .collect()
    };
    if workers == 1 {
        return run(0, inputs);
    }
    let results: Vec<Result<Vec<Trajectory>>> = std::thread::scope(|scope| {
        let handles: Vec<_> =
            inputs.chunks(chunk).enumerate().map(|(w, block)| scope.spawn(move || run(w, block))).collect();
        handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(inputs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::{sequence_log_prob, TabularPolicy};

    #[test]
    fn nucleus_examples() {
        assert_eq!(nucleus_set(&[0.9, 0.1], 0.5).unwrap(), vec![0]);
        assert_eq!(nucleus_set(&[0.5, 0.3, 0.2], 0.7).unwrap(), vec![0, 1]);
        assert_eq!(nucleus_set(&[0.2, 0.0, 0.5, 0.3], 1.0).unwrap(), vec![2, 3, 0]);
        // ties resolved by id
        assert_eq!(nucleus_set(&[0.25, 0.25, 0.25, 0.25], 0.5).unwrap(), vec![0, 1]);
        assert!(nucleus_set(&[0.5, 0.5], 0.0).is_err());
        assert!(nucleus_set(&[0.5, 0.5], -0.1).is_err());
        assert!(nucleus_set(&[0.5, 0.4], 0.5).is_err());
    }

    fn tiny() -> TabularPolicy {
        let v = Vocab::new(3).unwrap();
        TabularPolicy::random(v, 3, 0, 2.0, &mut crate::rng::seeded(5)).unwrap()
    }

    #[test]
    fn weights_are_one_on_policy() {
        let p = tiny();
        let mut rng = crate::rng::seeded(1);
        for spec in [SamplerSpec::temperature(1.0), SamplerSpec::mixture(0.0, 0.5, 1.0)] {
            for _ in 0..50 {
                let t = sample(&p, &ConditioningInput::empty(), &spec, &mut rng).unwrap();
                assert_eq!(importance_weight(&t).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn sampled_densities_match_scoring() {
        let p = tiny();
        let mut rng = crate::rng::seeded(2);
        let spec = SamplerSpec::mixture(0.7, 0.6, 0.4);
        for _ in 0..100 {
            let t = sample(&p, &ConditioningInput::empty(), &spec, &mut rng).unwrap();
            let lp = sequence_log_prob(&p, &t.x, &t.y, 1.0).unwrap();
            let lq = sampler_log_prob(&p, &t.x, &t.y, &spec).unwrap();
            assert!((lp - t.log_pi).abs() < 1e-12);
            assert!((lq - t.log_pi_hat).abs() < 1e-12);
            assert!((t.weight - (lp - lq).exp()).abs() <= 1e-9 * t.weight);
        }
    }

    #[test]
    fn out_of_nucleus_token_has_zero_density() {
        let v = Vocab::new(3).unwrap();
        let x = ConditioningInput::empty();
        let mut p = TabularPolicy::zeros(v, 3, 0).unwrap();
        p.params_mut()[..3].copy_from_slice(&[0.0, 5.0, 0.0]);
        let inside = TokenSequence::new(vec![1, 0], v, 3).unwrap();
        let outside = TokenSequence::new(vec![2, 0], v, 3).unwrap();
        let spec = SamplerSpec::nucleus(0.5);
        assert!(sampler_log_prob(&p, &x, &inside, &spec).unwrap().is_finite());
        assert_eq!(sampler_log_prob(&p, &x, &outside, &spec).unwrap(), f64::NEG_INFINITY);
        let t = score_trajectory(&p, &x, &outside, &spec).unwrap();
        assert!(matches!(importance_weight(&t), Err(Error::UnsupportedSample(_))));
    }

    #[test]
    fn batch_sampling_is_reproducible_and_worker_count_is_respected() {
        let p = tiny();
        let xs = vec![ConditioningInput::empty(); 37];
        let spec = SamplerSpec::mixture(0.5, 0.9, 0.3);
        let a = sample_batch(&p, &xs, &spec, 9, 4).unwrap();
        let b = sample_batch(&p, &xs, &spec, 9, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 37);
        let serial = sample_batch(&p, &xs, &spec, 9, 1).unwrap();
        assert_eq!(serial, sample_batch(&p, &xs, &spec, 9, 1).unwrap());
    }
}
