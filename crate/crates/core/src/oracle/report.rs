use super::{exact_policy_gradient, EnumerationIndex};
use crate::error::{invalid, Result};
use crate::sampling::{sample_batch, SamplerSpec};
use crate::seqmodel::{ConditioningInput, Policy};
use crate::table::{fmt_f64, Table};
use crate::trainer::{assign_rewards, estimate_with_spread, Estimator, Reward};

/// One Monte Carlo run of an estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorRun {
    pub seed: u64,
    pub n: usize,
    pub mean_gradient: Vec<f64>,
    pub cosine: f64,
    /// `||mean - exact|| / ||exact||`.
    pub relative_error: f64,
    pub mean_norm: f64,
    pub norm_variance: f64,
    pub total_variance: f64,
    pub clip_rate: f64,
    pub mean_weight: f64,
    pub max_weight: f64,
}

/// Bias and variance of an estimator against the exact gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorReport {
    pub estimator: Estimator,
    pub spec: SamplerSpec,
    pub exact_gradient: Vec<f64>,
    pub runs: Vec<EstimatorRun>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    dot / (na * nb)
}

pub fn relative_error(estimate: &[f64], exact: &[f64]) -> f64 {
    let diff = estimate.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm = exact.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

impl EstimatorReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new([
            "estimator",
            "spec",
            "seed",
            "n",
            "cosine",
            "relative_error",
            "mean_norm",
            "norm_variance",
            "total_variance",
            "clip_rate",
            "mean_w",
            "max_w",
        ]);
        for r in &self.runs {
            t.push(vec![
                self.estimator.to_string(),
                self.spec.to_string(),
                r.seed.to_string(),
                r.n.to_string(),
                fmt_f64(r.cosine),
                fmt_f64(r.relative_error),
                fmt_f64(r.mean_norm),
                fmt_f64(r.norm_variance),
                fmt_f64(r.total_variance),
                fmt_f64(r.clip_rate),
                fmt_f64(r.mean_weight),
                fmt_f64(r.max_weight),
            ]);
        }
        t
    }

    pub fn min_cosine(&self) -> f64 {
        self.runs.iter().map(|r| r.cosine).fold(f64::INFINITY, f64::min)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.runs.iter().map(|r| r.relative_error).fold(0.0, f64::max)
    }
}

/// Runs `estimator` with `n` samples (and `n` correction samples where
/// used) for each seed, comparing the mean to the exact gradient.
#[allow(clippy::too_many_arguments)]
pub fn estimator_report<P: Policy + Sync + ?Sized>(
    estimator: Estimator,
    policy: &P,
    x: &ConditioningInput,
    index: &EnumerationIndex,
    reward: &dyn Reward,
    spec: &SamplerSpec,
    n: usize,
    seeds: &[u64],
    workers: usize,
) -> Result<EstimatorReport> {
    estimator.validate()?;
    spec.validate()?;
    if n == 0 || seeds.is_empty() {
        return invalid("estimator report needs n > 0 and at least one seed");
    }
    let exact = exact_policy_gradient(policy, x, index, reward)?;
    let inputs = vec![x.clone(); n];
    let behaviour = estimator.behaviour(spec);
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut batch = sample_batch(policy, &inputs, &behaviour, crate::rng::child_seed(seed, 1), workers)?;
        assign_rewards(&mut batch, reward);
        let mut extra = Vec::new();
        if estimator.needs_on_policy_batch() {
            extra = sample_batch(policy, &inputs, &SamplerSpec::on_policy(), crate::rng::child_seed(seed, 2), workers)?;
            assign_rewards(&mut extra, reward);
        }
        let (rep, spread) = estimate_with_spread(policy, spec, estimator, &batch, &extra)?;
        runs.push(EstimatorRun {
            seed,
            n,
            cosine: cosine(&rep.gradient, &exact),
            relative_error: relative_error(&rep.gradient, &exact),
            mean_norm: spread.mean_norm,
            norm_variance: spread.norm_variance,
            total_variance: spread.total_variance,
            clip_rate: rep.clip_rate(),
            mean_weight: rep.mean_weight,
            max_weight: rep.max_weight,
            mean_gradient: rep.gradient,
        });
    }
    Ok(EstimatorReport { estimator, spec: *spec, exact_gradient: exact, runs })
}
