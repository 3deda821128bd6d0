//! Policy-gradient estimators over sampled trajectories.

use crate::error::{invalid, Error, Result};
use crate::sampling::{importance_weight, sampler_log_prob, SamplerSpec, Trajectory};
use crate::seqmodel::policy::accumulate_grad_log_prob;
use crate::seqmodel::{ConditioningInput, Policy, TokenSequence};
use std::fmt;
use std::str::FromStr;

/// Terminal reward `r(X, Y)`.
pub trait Reward: Sync {
    fn reward(&self, x: &ConditioningInput, y: &TokenSequence) -> f64;
}

impl<F> Reward for F
where
    F: Fn(&ConditioningInput, &TokenSequence) -> f64 + Sync,
{
    fn reward(&self, x: &ConditioningInput, y: &TokenSequence) -> f64 {
        self(x, y)
    }
}

pub fn assign_rewards(batch: &mut [Trajectory], reward: &dyn Reward) {
    for t in batch {
        t.reward = reward.reward(&t.x, &t.y);
    }
}

/// The gradient estimators that can be run against the exact gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Estimator {
    /// On-policy score function, `r * grad log pi`.
    Reinforce,
    /// `w * r * grad log pi` over behaviour samples.
    ImportanceSampled,
    /// Truncated weights `min(c, w)` plus an on-policy correction term.
    Clipped { c: f64 },
    /// Truncated weights without the correction term. Biased; kept as a
    /// negative control.
    TruncatedOnly { c: f64 },
}

impl Estimator {
    pub fn id(&self) -> &'static str {
        match self {
            Estimator::Reinforce => "reinforce",
            Estimator::ImportanceSampled => "is",
            Estimator::Clipped { .. } => "clipped-is",
            Estimator::TruncatedOnly { .. } => "truncated-is",
        }
    }

    /// Looks up an estimator by id; `c` is used by the truncating ones.
    pub fn from_id(id: &str, c: f64) -> Result<Self> {
        let e = match id {
            "reinforce" => Estimator::Reinforce,
            "is" => Estimator::ImportanceSampled,
            "clipped-is" => Estimator::Clipped { c },
            "truncated-is" => Estimator::TruncatedOnly { c },
            other => {
                return invalid(format!(
                    "unknown estimator `{other}` (expected reinforce, is, clipped-is or truncated-is)"
                ))
            }
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Estimator::Clipped { c } | Estimator::TruncatedOnly { c } if !(c > 0.0) || !c.is_finite() => {
                invalid(format!("clip threshold must be finite and > 0, got {c}"))
            }
            _ => Ok(()),
        }
    }

    /// Whether a second batch sampled from `pi_theta` is consumed.
    pub fn needs_on_policy_batch(&self) -> bool {
        matches!(self, Estimator::Clipped { .. })
    }

    /// Distribution the main batch must be drawn from.
    pub fn behaviour(&self, spec: &SamplerSpec) -> SamplerSpec {
        match self {
            Estimator::Reinforce => SamplerSpec::on_policy(),
            _ => *spec,
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Clipped { c } | Estimator::TruncatedOnly { c } => write!(f, "{}(c={c:?})", self.id()),
            _ => f.write_str(self.id()),
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    /// `reinforce`, `is`, `clipped-is(c=0.5)` or `truncated-is(c=0.5)`;
    /// `c` defaults to 5.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (id, c) = match s.split_once('(') {
            None => (s, 5.0),
            Some((id, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::InvalidArgument(format!("missing `)` in estimator `{s}`")))?;
                let v = inner.trim().strip_prefix("c=").unwrap_or(inner.trim());
                let c = v
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad clip threshold in `{s}`")))?;
                (id.trim(), c)
            }
        };
        Estimator::from_id(id, c)
    }
}

/// One gradient estimate with diagnostics about the weights it used.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    pub gradient: Vec<f64>,
    pub n: usize,
    pub mean_reward: f64,
    pub mean_weight: f64,
    pub max_weight: f64,
    /// Main-batch trajectories with `w > c`.
    pub clip_events: usize,
}

impl EstimateReport {
    pub fn clip_rate(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.clip_events as f64 / self.n as f64
        }
    }
}

/// Spread of the per-sample estimates `g_i` around their mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleSpread {
    pub mean_norm: f64,
    /// Unbiased sample variance of `||g_i||`.
    pub norm_variance: f64,
    /// Unbiased estimate of `tr Cov(g)`.
    pub total_variance: f64,
}

/// Correction coefficient `max(0, (w - c) / w)`; 1 when `w` is infinite.
pub fn correction_coefficient(w: f64, c: f64) -> f64 {
    if w.is_infinite() {
        1.0
    } else if w <= 0.0 {
        0.0
    } else {
        ((w - c) / w).max(0.0)
    }
}

struct Term<'a> {
    coef: f64,
    traj: &'a Trajectory,
}

struct Terms<'a> {
    main: Vec<Term<'a>>,
    correction: Vec<Term<'a>>,
    mean_weight: f64,
    max_weight: f64,
    clip_events: usize,
}

fn build_terms<'a, P: Policy + ?Sized>(
    policy: &P,
    spec: &SamplerSpec,
    estimator: Estimator,
    batch: &'a [Trajectory],
    extra: &'a [Trajectory],
) -> Result<Terms<'a>> {
    estimator.validate()?;
    if batch.is_empty() {
        return invalid("empty trajectory batch");
    }
    if estimator.needs_on_policy_batch() && extra.len() != batch.len() {
        return invalid(format!("correction batch has {} trajectories, expected {}", extra.len(), batch.len()));
    }
    let mut main = Vec::with_capacity(batch.len());
    let (mut sum_w, mut max_w, mut clips) = (0.0, 0.0f64, 0);
    for t in batch {
        let w = match estimator {
            Estimator::Reinforce => 1.0,
            _ => importance_weight(t)?,
        };
        sum_w += w;
        max_w = max_w.max(w);
        let coef = match estimator {
            Estimator::Reinforce => t.reward,
            Estimator::ImportanceSampled => w * t.reward,
            Estimator::Clipped { c } | Estimator::TruncatedOnly { c } => {
                if w > c {
                    clips += 1;
                }
                w.min(c) * t.reward
            }
        };
        main.push(Term { coef, traj: t });
    }
    let mut correction = Vec::new();
    if let Estimator::Clipped { c } = estimator {
        for t in extra {
            let log_hat = sampler_log_prob(policy, &t.x, &t.y, spec)?;
            let w = (t.log_pi - log_hat).exp();
            correction.push(Term { coef: correction_coefficient(w, c) * t.reward, traj: t });
        }
    }
    Ok(Terms { main, correction, mean_weight: sum_w / batch.len() as f64, max_weight: max_w, clip_events: clips })
}

fn add_term<P: Policy + ?Sized>(policy: &P, term: &Term, scale: f64, out: &mut [f64]) {
    let s = term.coef * scale;
    if s != 0.0 {
        accumulate_grad_log_prob(policy, &term.traj.x, term.traj.y.tokens(), s, out);
    }
}

/// General entry point: the estimate of `grad J` from `batch` (drawn from
/// `estimator.behaviour(spec)`) and, for the clipped estimator, `extra`
/// (drawn from `pi_theta`). Rewards must already be assigned.
pub fn estimate<P: Policy + ?Sized>(
    policy: &P,
    spec: &SamplerSpec,
    estimator: Estimator,
    batch: &[Trajectory],
    extra: &[Trajectory],
) -> Result<EstimateReport> {
    let terms = build_terms(policy, spec, estimator, batch, extra)?;
    let mut gradient = vec![0.0; policy.num_params()];
    let n = terms.main.len() as f64;
    for t in &terms.main {
        add_term(policy, t, 1.0 / n, &mut gradient);
    }
    if !terms.correction.is_empty() {
        let m = terms.correction.len() as f64;
        for t in &terms.correction {
            add_term(policy, t, 1.0 / m, &mut gradient);
        }
    }
    Ok(EstimateReport {
        gradient,
        n: batch.len(),
        mean_reward: batch.iter().map(|t| t.reward).sum::<f64>() / n,
        mean_weight: terms.mean_weight,
        max_weight: terms.max_weight,
        clip_events: terms.clip_events,
    })
}

/// Like [`estimate`], additionally measuring the spread of the per-sample
/// estimates. For the clipped estimator sample `i` is the pair
/// `(batch[i], extra[i])`.
pub fn estimate_with_spread<P: Policy + ?Sized>(
    policy: &P,
    spec: &SamplerSpec,
    estimator: Estimator,
    batch: &[Trajectory],
    extra: &[Trajectory],
) -> Result<(EstimateReport, SampleSpread)> {
    let terms = build_terms(policy, spec, estimator, batch, extra)?;
    let p = policy.num_params();
    let n = terms.main.len();
    let mut gradient = vec![0.0; p];
    let mut g = vec![0.0; p];
    let (mut sum_norm, mut sum_sq) = (0.0, 0.0);
    for i in 0..n {
        g.iter_mut().for_each(|v| *v = 0.0);
        add_term(policy, &terms.main[i], 1.0, &mut g);
        if let Some(t) = terms.correction.get(i) {
            add_term(policy, t, 1.0, &mut g);
        }
        let sq: f64 = g.iter().map(|v| v * v).sum();
        sum_sq += sq;
        sum_norm += sq.sqrt();
        for (a, b) in gradient.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let nf = n as f64;
    gradient.iter_mut().for_each(|v| *v /= nf);
    let mean_norm = sum_norm / nf;
    let mean_sq = sum_sq / nf;
    let bessel = if n > 1 { nf / (nf - 1.0) } else { 0.0 };
    let mean_vec_sq: f64 = gradient.iter().map(|v| v * v).sum();
    let spread = SampleSpread {
        mean_norm,
        norm_variance: bessel * (mean_sq - mean_norm * mean_norm).max(0.0),
        total_variance: bessel * (mean_sq - mean_vec_sq).max(0.0),
    };
    let report = EstimateReport {
        gradient,
        n,
        mean_reward: batch.iter().map(|t| t.reward).sum::<f64>() / nf,
        mean_weight: terms.mean_weight,
        max_weight: terms.max_weight,
        clip_events: terms.clip_events,
    };
    Ok((report, spread))
}

/// `mean_i w_i * r_i * grad log pi(tau_i)` with weights stored on the
/// trajectories. No baseline is subtracted.
pub fn policy_gradient_is<P: Policy + ?Sized>(policy: &P, batch: &[Trajectory]) -> Result<EstimateReport> {
    estimate(policy, &SamplerSpec::on_policy(), Estimator::ImportanceSampled, batch, &[])
}

/// Vanilla score-function estimator; ignores stored weights.
pub fn reinforce<P: Policy + ?Sized>(policy: &P, batch: &[Trajectory]) -> Result<EstimateReport> {
    estimate(policy, &SamplerSpec::on_policy(), Estimator::Reinforce, batch, &[])
}

/// Truncated importance weights plus the correction term over `on_policy`,
/// a batch of the same size drawn from `pi_theta`. Weights of the
/// correction batch are recomputed under `spec`.
pub fn clipped_policy_gradient<P: Policy + ?Sized>(
    policy: &P,
    spec: &SamplerSpec,
    batch: &[Trajectory],
    on_policy: &[Trajectory],
    c: f64,
) -> Result<EstimateReport> {
    estimate(policy, spec, Estimator::Clipped { c }, batch, on_policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::sampling::sample;
    use crate::seqmodel::{grad_log_prob, TabularPolicy, Vocab};

    fn policy() -> TabularPolicy {
        let mut rng = seeded(3);
        TabularPolicy::random(Vocab::with_content(2).unwrap(), 3, 0, 1.0, &mut rng).unwrap()
    }

    fn batch(p: &TabularPolicy, spec: &SamplerSpec, n: usize, seed: u64) -> Vec<Trajectory> {
        let mut rng = seeded(seed);
        let x = ConditioningInput::empty();
        let mut b: Vec<_> = (0..n).map(|_| sample(p, &x, spec, &mut rng).unwrap()).collect();
        assign_rewards(&mut b, &|_: &ConditioningInput, y: &TokenSequence| y.len() as f64);
        b
    }

    #[test]
    fn correction_examples() {
        assert_eq!(correction_coefficient(10.0, 5.0), 0.5);
        assert_eq!(correction_coefficient(2.0, 5.0), 0.0);
        assert_eq!(correction_coefficient(f64::INFINITY, 5.0), 1.0);
    }

    #[test]
    fn on_policy_is_equals_reinforce() {
        let p = policy();
        let b = batch(&p, &SamplerSpec::on_policy(), 50, 1);
        let a = policy_gradient_is(&p, &b).unwrap();
        let r = reinforce(&p, &b).unwrap();
        for (u, v) in a.gradient.iter().zip(&r.gradient) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!((a.mean_weight - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inactive_clipping_matches_is() {
        let p = policy();
        let spec = SamplerSpec::temperature(0.9);
        let b = batch(&p, &spec, 40, 2);
        let extra = batch(&p, &SamplerSpec::on_policy(), 40, 3);
        let c = 1e6;
        let clipped = clipped_policy_gradient(&p, &spec, &b, &extra, c).unwrap();
        let is = policy_gradient_is(&p, &b).unwrap();
        assert_eq!(clipped.clip_events, 0);
        for (u, v) in clipped.gradient.iter().zip(&is.gradient) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_is_weighted_score() {
        let p = policy();
        let spec = SamplerSpec::temperature(0.5);
        let b = batch(&p, &spec, 1, 4);
        let rep = policy_gradient_is(&p, &b).unwrap();
        let g = grad_log_prob(&p, &b[0].x, &b[0].y).unwrap();
        let k = b[0].weight * b[0].reward;
        for (u, v) in rep.gradient.iter().zip(&g) {
            assert!((u - k * v).abs() < 1e-12);
        }
    }

    #[test]
    fn unsupported_sample_is_an_error() {
        let p = policy();
        let mut b = batch(&p, &SamplerSpec::on_policy(), 1, 5);
        b[0].log_pi_hat = f64::NEG_INFINITY;
        assert!(matches!(policy_gradient_is(&p, &b), Err(Error::UnsupportedSample(_))));
    }

    #[test]
    fn mismatched_correction_batch_is_rejected() {
        let p = policy();
        let spec = SamplerSpec::temperature(0.5);
        let b = batch(&p, &spec, 4, 6);
        assert!(clipped_policy_gradient(&p, &spec, &b, &b[..2], 1.0).is_err());
        assert!(clipped_policy_gradient(&p, &spec, &b, &b, 0.0).is_err());
    }

    #[test]
    fn spread_mean_matches_estimate() {
        let p = policy();
        let spec = SamplerSpec::temperature(0.7);
        let b = batch(&p, &spec, 30, 7);
        let extra = batch(&p, &SamplerSpec::on_policy(), 30, 8);
        let est = Estimator::Clipped { c: 0.8 };
        let plain = estimate(&p, &spec, est, &b, &extra).unwrap();
        let (rep, spread) = estimate_with_spread(&p, &spec, est, &b, &extra).unwrap();
        for (u, v) in plain.gradient.iter().zip(&rep.gradient) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!(spread.norm_variance >= 0.0 && spread.total_variance >= 0.0);
    }

    #[test]
    fn estimator_ids() {
        assert_eq!("is".parse::<Estimator>().unwrap(), Estimator::ImportanceSampled);
        assert_eq!("clipped-is(c=0.5)".parse::<Estimator>().unwrap(), Estimator::Clipped { c: 0.5 });
        assert_eq!("clipped-is".parse::<Estimator>().unwrap(), Estimator::Clipped { c: 5.0 });
        assert!("ppo".parse::<Estimator>().is_err());
        assert!("clipped-is(c=-1)".parse::<Estimator>().is_err());
        let e = Estimator::TruncatedOnly { c: 0.5 };
        assert_eq!(e.to_string().parse::<Estimator>().unwrap(), e);
    }
}
