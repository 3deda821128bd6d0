//! Estimator verification suite on an enumerable instance.
//!
//! Every check compares Monte Carlo or analytic quantities against the exact
//! enumeration in this module's parent, and reports a named pass/fail line.

use std::collections::HashSet;

use rand::Rng as _;

use super::{
    cosine, enumerate_sequences, exact_data_probs, exact_estimator_moments, exact_expected_reward,
    exact_policy_gradient, exact_policy_probs, exact_sampler_probs, relative_error, sample_corpus, DataSource,
    EnumerationIndex, DEFAULT_BUDGET,
};
use crate::error::{invalid, Result};
use crate::rng::{child_seed, component, derive, derive_indexed};
use crate::sampling::{sample_batch, sampler_log_prob, SamplerSpec};
use crate::seqmodel::{
    grad_log_prob, mle_train, sequence_log_prob, ConditioningInput, MleConfig, NeuralConfig, NeuralPolicy, Policy,
    TabularPolicy, Token, TokenSequence, Vocab,
};
use crate::table::{fmt_f64, Table};
use crate::trainer::{assign_rewards, estimate, Estimator, Reward};

/// Binary reward that is 1 exactly on the `k` most probable sequences of a
/// data source (ties broken by enumeration order).
///
/// Stands in for a discriminator whose "human" verdicts concentrate on the
/// modes of the data distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeReward {
    x: ConditioningInput,
    modes: HashSet<Vec<Token>>,
}

impl ModeReward {
    pub fn top_k(data: &dyn DataSource, x: &ConditioningInput, index: &EnumerationIndex, k: usize) -> Self {
        let probs = exact_data_probs(data, x, index);
        let mut order: Vec<usize> = (0..index.len()).filter(|&i| probs[i] > 0.0).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let modes = order.into_iter().take(k).map(|i| index.sequences()[i].tokens().to_vec()).collect();
        ModeReward { x: x.clone(), modes }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

impl Reward for ModeReward {
    fn reward(&self, x: &ConditioningInput, y: &TokenSequence) -> f64 {
        if *x == self.x && self.modes.contains(y.tokens()) {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Corpus size for the MLE-pretrained fixture policy.
    pub pretrain_samples: usize,
    pub pretrain: MleConfig,
    /// Size of the reward's mode set.
    pub mode_k: usize,
    pub is_specs: Vec<SamplerSpec>,
    pub is_samples: usize,
    pub min_cosine: f64,
    pub max_relative_error: f64,
    pub clip_spec: SamplerSpec,
    pub clip_c: f64,
    pub clip_samples: usize,
    pub min_clip_rate: f64,
    pub clipped_min_cosine: f64,
    pub fd_probes: usize,
    pub fd_step: f64,
    pub fd_tolerance: f64,
    pub support_specs: usize,
    pub support_sequences: usize,
    pub nucleus_p: f64,
    pub cold: SamplerSpec,
    pub warm: SamplerSpec,
    pub variance_seeds: Vec<u64>,
    pub budget: u128,
    pub workers: usize,
    /// Test hook: multiplies every importance weight in the IS checks.
    pub corrupt_is_weight: Option<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 1,
            pretrain_samples: 2000,
            pretrain: MleConfig { lr: 5.0, max_epochs: 300, ..MleConfig::default() },
            mode_k: 3,
            is_specs: vec![
                SamplerSpec::temperature(0.3),
                SamplerSpec::temperature(1.0),
                SamplerSpec::mixture(0.9, 0.95, 0.2),
            ],
            is_samples: 100_000,
            min_cosine: 0.999,
            max_relative_error: 0.05,
            clip_spec: SamplerSpec::temperature(0.3),
            clip_c: 0.5,
            clip_samples: 200_000,
            min_clip_rate: 0.1,
            clipped_min_cosine: 0.99,
            fd_probes: 100,
            fd_step: 1e-5,
            fd_tolerance: 1e-4,
            support_specs: 100,
            support_sequences: 10_000,
            nucleus_p: 0.95,
            cold: SamplerSpec::temperature(0.3),
            warm: SamplerSpec::temperature(1.0),
            variance_seeds: vec![1, 2, 3],
            budget: DEFAULT_BUDGET,
            workers: 1,
            corrupt_is_weight: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct VerificationSummary {
    pub checks: Vec<CheckResult>,
}

impl VerificationSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["check", "passed", "detail"]);
        for c in &self.checks {
            t.push(vec![c.name.clone(), c.passed.to_string(), c.detail.clone()]);
        }
        t
    }
}

/// Names of the checks [`run_verification`] performs, in order.
pub fn check_names(cfg: &VerifyConfig) -> Vec<String> {
    let mut names = vec![
        "normalization".to_string(),
        "exact-gradient-fd".to_string(),
        "grad-log-prob-fd:tabular".to_string(),
        "grad-log-prob-fd:neural".to_string(),
    ];
    names.extend(cfg.is_specs.iter().map(|s| format!("is-unbiased:{s}")));
    names.push("clipped-unbiased".into());
    names.push("truncated-control".into());
    names.push("mixture-support".into());
    names.push("nucleus-witness".into());
    names.push("variance-ordering".into());
    names
}

/// The policy, index and reward every estimator check runs against.
pub struct Fixture {
    pub x: ConditioningInput,
    pub index: EnumerationIndex,
    pub policy: TabularPolicy,
    pub reward: ModeReward,
}

/// Tabular policy fitted by MLE to a corpus drawn from `data`.
pub fn pretrained_policy(data: &dyn DataSource, cfg: &VerifyConfig, seed: u64) -> Result<TabularPolicy> {
    let corpus = sample_corpus(data, cfg.pretrain_samples, &mut derive(seed, component::DATA));
    let mut policy = TabularPolicy::zeros(data.vocab(), data.max_len(), 0)?;
    let mle = MleConfig { seed: child_seed(seed, component::PRETRAIN), ..cfg.pretrain.clone() };
    mle_train(&mut policy, &corpus, &mle)?;
    Ok(policy)
}

pub fn build_fixture(data: &dyn DataSource, cfg: &VerifyConfig) -> Result<Fixture> {
    if data.input_max_len() > 0 {
        return invalid("verification needs an unconditional data source");
    }
    let x = ConditioningInput::empty();
    let index = enumerate_sequences(data.vocab(), data.max_len(), cfg.budget)?;
    let policy = pretrained_policy(data, cfg, cfg.seed)?;
    let reward = ModeReward::top_k(data, &x, &index, cfg.mode_k);
    Ok(Fixture { x, index, policy, reward })
}

/// Runs every check; estimator checks share one fixture.
pub fn run_verification(data: &dyn DataSource, cfg: &VerifyConfig) -> Result<VerificationSummary> {
    let fx = build_fixture(data, cfg)?;
    let mut checks = vec![check_normalization(data, &fx)?, check_exact_gradient_fd(&fx, cfg)?];
    let mut rng = derive(cfg.seed, component::VERIFY);
    let tab = TabularPolicy::random(data.vocab(), data.max_len(), 0, 1.0, &mut rng)?;
    checks.push(check_grad_log_prob_fd("grad-log-prob-fd:tabular", &tab, cfg)?);
    let neural =
        NeuralPolicy::random(data.vocab(), data.max_len(), NeuralConfig { embed_dim: 4, hidden_dim: 6 }, &mut rng)?;
    checks.push(check_grad_log_prob_fd("grad-log-prob-fd:neural", &neural, cfg)?);
    for spec in &cfg.is_specs {
        checks.push(check_is_unbiased(&fx, spec, cfg)?);
    }
    let (clipped, control) = check_clipped(&fx, cfg)?;
    checks.push(clipped);
    checks.push(control);
    checks.push(check_mixture_support(data.vocab(), data.max_len(), cfg)?);
    checks.push(check_nucleus_witness(&fx, cfg)?);
    checks.push(check_variance_ordering(data, cfg)?);
    Ok(VerificationSummary { checks })
}

/// Policy, sampler and data probabilities each sum to 1 over the index.
pub fn check_normalization(data: &dyn DataSource, fx: &Fixture) -> Result<CheckResult> {
    let pi: f64 = exact_policy_probs(&fx.policy, &fx.x, &fx.index)?.iter().sum();
    let mix: f64 =
        exact_sampler_probs(&fx.policy, &fx.x, &fx.index, &SamplerSpec::mixture(0.9, 0.95, 0.2))?.iter().sum();
    let d: f64 = exact_data_probs(data, &fx.x, &fx.index).iter().sum();
    let worst = [pi, mix, d].iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    Ok(CheckResult::new(
        "normalization",
        worst <= 1e-6,
        format!("policy={} mixture={} data={}", fmt_f64(pi), fmt_f64(mix), fmt_f64(d)),
    ))
}

/// Exact gradient against central differences of the exact objective.
pub fn check_exact_gradient_fd(fx: &Fixture, cfg: &VerifyConfig) -> Result<CheckResult> {
    let exact = exact_policy_gradient(&fx.policy, &fx.x, &fx.index, &fx.reward)?;
    let mut p = fx.policy.clone();
    let h = cfg.fd_step;
    let mut fd = vec![0.0; exact.len()];
    for (k, slot) in fd.iter_mut().enumerate() {
        let orig = p.params()[k];
        p.params_mut()[k] = orig + h;
        let up = exact_expected_reward(&p, &fx.x, &fx.index, &fx.reward)?;
        p.params_mut()[k] = orig - h;
        let down = exact_expected_reward(&p, &fx.x, &fx.index, &fx.reward)?;
        p.params_mut()[k] = orig;
        *slot = (up - down) / (2.0 * h);
    }
    let err = relative_error(&fd, &exact);
    Ok(CheckResult::new("exact-gradient-fd", err < cfg.fd_tolerance, format!("relative_error={}", fmt_f64(err))))
}

/// A uniformly random valid sequence: length uniform in `1..=max_len`.
pub fn random_sequence<R: rand::Rng + ?Sized>(vocab: Vocab, max_len: usize, rng: &mut R) -> TokenSequence {
    let len = rng.random_range(1..=max_len);
    let content: Vec<Token> = (1..len).map(|_| rng.random_range(1..vocab.size() as Token)).collect();
    TokenSequence::from_content(&content, vocab, max_len).expect("length within max_len")
}

/// Largest relative error of `grad_log_prob` against central differences of
/// `sequence_log_prob` over random `(theta, Y)` probes.
///
/// Each probe perturbs the parameters by a fresh standard-normal-ish draw
/// around `policy` and picks a random sequence. The error of a probe is
/// `max_k |fd_k - g_k| / max(max_k |g_k|, 1e-6)`.
pub fn grad_log_prob_fd_error<P: Policy + Clone>(policy: &P, cfg: &VerifyConfig, seed: u64) -> Result<f64> {
    let mut rng = derive(seed, component::VERIFY);
    let x = ConditioningInput::empty();
    let h = cfg.fd_step;
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.fd_probes {
        let mut p = policy.clone();
        for v in p.params_mut() {
            *v += rng.random::<f64>() - 0.5;
        }
        let y = random_sequence(p.vocab(), p.max_len(), &mut rng);
        let g = grad_log_prob(&p, &x, &y)?;
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
        let mut err: f64 = 0.0;
        for k in 0..g.len() {
            let orig = p.params()[k];
            p.params_mut()[k] = orig + h;
            let up = sequence_log_prob(&p, &x, &y, 1.0)?;
            p.params_mut()[k] = orig - h;
            let down = sequence_log_prob(&p, &x, &y, 1.0)?;
            p.params_mut()[k] = orig;
            err = err.max(((up - down) / (2.0 * h) - g[k]).abs());
        }
        worst = worst.max(err / scale);
    }
    Ok(worst)
}

pub fn check_grad_log_prob_fd<P: Policy + Clone>(name: &str, policy: &P, cfg: &VerifyConfig) -> Result<CheckResult> {
    let err = grad_log_prob_fd_error(policy, cfg, cfg.seed)?;
    Ok(CheckResult::new(
        name,
        err < cfg.fd_tolerance,
        format!("probes={} max_relative_error={}", cfg.fd_probes, fmt_f64(err)),
    ))
}

/// Monte Carlo mean of `estimator` with `n` draws, compared to the exact
/// gradient. Returns `(cosine, relative_error, clip_rate)`.
pub fn mc_estimate(
    fx: &Fixture,
    estimator: Estimator,
    spec: &SamplerSpec,
    n: usize,
    seed: u64,
    workers: usize,
    weight_factor: Option<f64>,
) -> Result<(f64, f64, f64)> {
    let exact = exact_policy_gradient(&fx.policy, &fx.x, &fx.index, &fx.reward)?;
    let inputs = vec![fx.x.clone(); n];
    let mut batch = sample_batch(&fx.policy, &inputs, &estimator.behaviour(spec), child_seed(seed, 1), workers)?;
    if let Some(k) = weight_factor {
        for t in &mut batch {
            t.log_pi_hat -= k.ln();
            t.weight = (t.log_pi - t.log_pi_hat).exp();
        }
    }
    assign_rewards(&mut batch, &fx.reward);
    let mut extra = Vec::new();
    if estimator.needs_on_policy_batch() {
        extra = sample_batch(&fx.policy, &inputs, &SamplerSpec::on_policy(), child_seed(seed, 2), workers)?;
        assign_rewards(&mut extra, &fx.reward);
    }
    let rep = estimate(&fx.policy, spec, estimator, &batch, &extra)?;
    Ok((cosine(&rep.gradient, &exact), relative_error(&rep.gradient, &exact), rep.clip_rate()))
}

pub fn check_is_unbiased(fx: &Fixture, spec: &SamplerSpec, cfg: &VerifyConfig) -> Result<CheckResult> {
    let (cos, rel, _) = mc_estimate(
        fx,
        Estimator::ImportanceSampled,
        spec,
        cfg.is_samples,
        child_seed(cfg.seed, component::VERIFY),
        cfg.workers,
        cfg.corrupt_is_weight,
    )?;
    Ok(CheckResult::new(
        format!("is-unbiased:{spec}"),
        cos > cfg.min_cosine && rel < cfg.max_relative_error,
        format!("n={} cosine={} relative_error={}", cfg.is_samples, fmt_f64(cos), fmt_f64(rel)),
    ))
}

/// The clipped two-term estimator must match the exact gradient while
/// clipping often; the truncated estimator without the correction term
/// must not.
pub fn check_clipped(fx: &Fixture, cfg: &VerifyConfig) -> Result<(CheckResult, CheckResult)> {
    let seed = child_seed(cfg.seed, component::VERIFY);
    let c = cfg.clip_c;
    let (cos, rel, clip) =
        mc_estimate(fx, Estimator::Clipped { c }, &cfg.clip_spec, cfg.clip_samples, seed, cfg.workers, None)?;
    let clipped = CheckResult::new(
        "clipped-unbiased",
        cos > cfg.clipped_min_cosine && clip > cfg.min_clip_rate,
        format!(
            "spec={} c={c} n={} clip_rate={} cosine={} relative_error={}",
            cfg.clip_spec,
            cfg.clip_samples,
            fmt_f64(clip),
            fmt_f64(cos),
            fmt_f64(rel)
        ),
    );
    let (tcos, trel, _) =
        mc_estimate(fx, Estimator::TruncatedOnly { c }, &cfg.clip_spec, cfg.clip_samples, seed, cfg.workers, None)?;
    let control = CheckResult::new(
        "truncated-control",
        tcos <= cfg.clipped_min_cosine,
        format!("cosine={} relative_error={} (must fail the bound)", fmt_f64(tcos), fmt_f64(trel)),
    );
    Ok((clipped, control))
}

/// Mixture specs with `eps < 1` and `gamma > 0` keep every sequence the
/// policy can produce inside the sampler's support, for sharp policies too.
pub fn check_mixture_support(vocab: Vocab, max_len: usize, cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = derive_indexed(cfg.seed, component::VERIFY, 1);
    let per_spec = cfg.support_sequences.div_ceil(cfg.support_specs.max(1));
    let x = ConditioningInput::empty();
    let mut checked = 0usize;
    let mut violations = 0usize;
    for s in 0..cfg.support_specs {
        let spec = SamplerSpec::mixture(
            rng.random::<f64>() * 0.999,
            0.05 + 0.95 * rng.random::<f64>(),
            0.05 + 3.0 * rng.random::<f64>(),
        );
        let scale = [0.5, 3.0, 10.0][s % 3];
        let policy = TabularPolicy::random(vocab, max_len, 0, scale, &mut rng)?;
        for _ in 0..per_spec {
            let y = random_sequence(vocab, max_len, &mut rng);
            let lp = sequence_log_prob(&policy, &x, &y, 1.0)?;
            let lq = sampler_log_prob(&policy, &x, &y, &spec)?;
            checked += 1;
            if lp.is_finite() && !lq.is_finite() {
                violations += 1;
            }
        }
    }
    Ok(CheckResult::new(
        "mixture-support",
        violations == 0,
        format!("specs={} sequences={checked} violations={violations}", cfg.support_specs),
    ))
}

/// A sequence with positive policy probability that pure nucleus sampling
/// can never produce, if one exists in the index.
pub fn nucleus_witness<P: Policy + ?Sized>(
    policy: &P,
    x: &ConditioningInput,
    index: &EnumerationIndex,
    p: f64,
) -> Result<Option<TokenSequence>> {
    let spec = SamplerSpec::nucleus(p);
    for y in index.sequences() {
        let lp = sequence_log_prob(policy, x, y, 1.0)?;
        if lp.is_finite() && sampler_log_prob(policy, x, y, &spec)? == f64::NEG_INFINITY {
            return Ok(Some(y.clone()));
        }
    }
    Ok(None)
}

pub fn check_nucleus_witness(fx: &Fixture, cfg: &VerifyConfig) -> Result<CheckResult> {
    let w = nucleus_witness(&fx.policy, &fx.x, &fx.index, cfg.nucleus_p)?;
    Ok(CheckResult::new(
        "nucleus-witness",
        w.is_some(),
        match w {
            Some(y) => format!("nucleus(p={}) excludes `{y}`", cfg.nucleus_p),
            None => format!("nucleus(p={}) covers every sequence", cfg.nucleus_p),
        },
    ))
}

/// Exact per-sample gradient-norm variance of the IS estimator under the
/// cold and warm specs, one MLE-pretrained policy per seed.
pub fn variance_pairs(data: &dyn DataSource, cfg: &VerifyConfig) -> Result<Vec<(u64, f64, f64)>> {
    let x = ConditioningInput::empty();
    let index = enumerate_sequences(data.vocab(), data.max_len(), cfg.budget)?;
    let reward = ModeReward::top_k(data, &x, &index, cfg.mode_k);
    cfg.variance_seeds
        .iter()
        .map(|&seed| {
            let policy = pretrained_policy(data, cfg, seed)?;
            let var = |spec: &SamplerSpec| -> Result<f64> {
                Ok(exact_estimator_moments(&policy, &x, &index, &reward, spec, Estimator::ImportanceSampled)?
                    .norm_variance())
            };
            Ok((seed, var(&cfg.cold)?, var(&cfg.warm)?))
        })
        .collect()
}

pub fn check_variance_ordering(data: &dyn DataSource, cfg: &VerifyConfig) -> Result<CheckResult> {
    let pairs = variance_pairs(data, cfg)?;
    let detail = pairs
        .iter()
        .map(|(s, c, w)| format!("seed {s}: {}={} {}={}", cfg.cold, fmt_f64(*c), cfg.warm, fmt_f64(*w)))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(CheckResult::new("variance-ordering", pairs.iter().all(|(_, c, w)| c < w), detail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::DataDistribution;

    #[test]
    fn mode_reward_picks_most_probable() {
        let data = DataDistribution::default_instance();
        let x = ConditioningInput::empty();
        let idx = enumerate_sequences(data.vocab(), data.max_len(), DEFAULT_BUDGET).unwrap();
        let r = ModeReward::top_k(&data, &x, &idx, 3);
        assert_eq!(r.len(), 3);
        let probs = exact_data_probs(&data, &x, &idx);
        let mut sorted = probs.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        for (y, p) in idx.sequences().iter().zip(&probs) {
            assert_eq!(r.reward(&x, y) == 1.0, *p >= sorted[2]);
        }
    }

    #[test]
    fn names_match_checks() {
        let cfg = VerifyConfig { is_samples: 2000, clip_samples: 2000, fd_probes: 2, ..Default::default() };
        let data = DataDistribution::default_instance();
        let s = run_verification(&data, &cfg).unwrap();
        let got: Vec<String> = s.checks.iter().map(|c| c.name.clone()).collect();
        assert_eq!(got, check_names(&cfg));
    }

    #[test]
    fn corrupted_weights_fail() {
        let cfg = VerifyConfig { is_samples: 20_000, corrupt_is_weight: Some(1.5), ..Default::default() };
        let data = DataDistribution::default_instance();
        let fx = build_fixture(&data, &cfg).unwrap();
        let r = check_is_unbiased(&fx, &SamplerSpec::temperature(1.0), &cfg).unwrap();
        assert!(!r.passed, "{}", r.detail);
    }

    #[test]
    fn conditional_sources_are_rejected() {
        let data = crate::oracle::ConditionalTask::random(
            Vocab::with_content(3).unwrap(),
            2,
            0.8,
            &crate::oracle::TableShape::default(),
            &mut crate::rng::seeded(0),
        )
        .unwrap();
        assert!(build_fixture(&data, &VerifyConfig::default()).is_err());
    }
}
