//! The adversarial loop: importance-sampled policy gradient with cold
//! behaviour distributions, clipped weights with an on-policy correction,
//! sparse binary rewards and discriminator replay.

mod estimator;
mod replay;

pub use estimator::{
    assign_rewards, clipped_policy_gradient, correction_coefficient, estimate, estimate_with_spread,
    policy_gradient_is, reinforce, EstimateReport, Estimator, Reward, SampleSpread,
};
pub use replay::ReplayBuffer;

use crate::discriminator::{disc_train, reward_from_score, DiscTrainConfig, Discriminator, LabeledPair};
use crate::error::{invalid, Result};
use crate::metrics::{bleu, bleu_against_pool, oracle_nll, self_bleu, NllMode};
use crate::oracle::DataSource;
use crate::rng::{child_seed, component, derive_indexed};
use crate::sampling::{sample_batch, SamplerSpec, Trajectory};
use crate::seqmodel::policy::accumulate_grad_log_prob;
use crate::seqmodel::{ConditioningInput, Policy, TokenSequence};
use crate::table::{fmt_f64, Table};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Generator samples (and reference pool size) per evaluation.
    pub samples: usize,
    pub max_n: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { samples: 200, max_n: 4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Behaviour distribution of the rollouts.
    pub sampler: SamplerSpec,
    /// Clip threshold `c`; `None` uses plain importance weights.
    pub clip: Option<f64>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gen_steps_per_epoch: usize,
    /// Replay window `K` in generator steps; `None` means three epochs.
    pub replay_window: Option<u64>,
    pub use_replay: bool,
    pub disc: DiscTrainConfig,
    /// Human and generated examples per discriminator update.
    pub disc_samples: usize,
    /// Weight of an MLE gradient on human data mixed into each step; 0 disables.
    pub mle_weight: f64,
    pub eval: EvalConfig,
    pub seed: u64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sampler: SamplerSpec::mixture(0.9, 0.95, 0.2),
            clip: Some(5.0),
            lr: 0.5,
            epochs: 10,
            batch_size: 64,
            gen_steps_per_epoch: 50,
            replay_window: None,
            use_replay: true,
            disc: DiscTrainConfig::default(),
            disc_samples: 512,
            mle_weight: 0.0,
            eval: EvalConfig::default(),
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn replay_window(&self) -> u64 {
        self.replay_window.unwrap_or(3 * self.gen_steps_per_epoch as u64)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.disc.validate()?;
        if let Some(c) = self.clip {
            Estimator::Clipped { c }.validate()?;
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return invalid(format!("learning rate must be finite and > 0, got {}", self.lr));
        }
        if self.batch_size == 0 || self.gen_steps_per_epoch == 0 || self.disc_samples == 0 {
            return invalid("batch size, generator steps and discriminator samples must be positive");
        }
        if self.replay_window == Some(0) {
            return invalid("replay window must be positive");
        }
        if !(self.mle_weight >= 0.0) || !self.mle_weight.is_finite() {
            return invalid("MLE weight must be finite and >= 0");
        }
        if self.eval.samples < 2 || !(1..=4).contains(&self.eval.max_n) {
            return invalid("evaluation needs >= 2 samples and max_n in 1..=4");
        }
        if self.workers == 0 {
            return invalid("workers must be >= 1");
        }
        Ok(())
    }

    fn estimator(&self) -> Estimator {
        match self.clip {
            Some(c) => Estimator::Clipped { c },
            None => Estimator::ImportanceSampled,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean discriminator score on the epoch's rollouts.
    pub mean_disc_score: f64,
    pub mean_reward: f64,
    pub mean_w: f64,
    pub max_w: f64,
    pub clip_rate: f64,
    pub oracle_nll: f64,
    pub bleu: f64,
    pub self_bleu: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: [&'static str; 9] =
        ["epoch", "mean_disc_score", "mean_reward", "mean_w", "max_w", "clip_rate", "oracle_nll", "bleu", "self_bleu"];

    pub fn row(r: &EpochRecord) -> Vec<String> {
        vec![
            r.epoch.to_string(),
            fmt_f64(r.mean_disc_score),
            fmt_f64(r.mean_reward),
            fmt_f64(r.mean_w),
            fmt_f64(r.max_w),
            fmt_f64(r.clip_rate),
            fmt_f64(r.oracle_nll),
            fmt_f64(r.bleu),
            fmt_f64(r.self_bleu),
        ]
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(Self::HEADER);
        for r in &self.epochs {
            t.push(Self::row(r));
        }
        t
    }
}

pub struct TrainOutcome<P> {
    pub generator: P,
    pub discriminator: Discriminator,
    pub log: TrainLog,
}

/// Quality metrics of `policy` at temperature 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub oracle_nll: f64,
    pub bleu: f64,
    pub self_bleu: f64,
}

/// Oracle NLL, BLEU against human references and self-BLEU of samples
/// drawn at temperature 1. Unconditional tasks score every sample against
/// one shared pool; conditional tasks use four references per input.
pub fn evaluate<P: Policy + Sync + ?Sized>(
    policy: &P,
    data: &dyn DataSource,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Evaluation> {
    let mut rng = derive_indexed(seed, component::EVAL, 0);
    let nll = oracle_nll(policy, data, NllMode::Auto { n: cfg.samples.max(1000) }, &mut rng)?;
    let inputs: Vec<ConditioningInput> = (0..cfg.samples).map(|_| data.sample_input(&mut rng)).collect();
    let samples: Vec<TokenSequence> =
        sample_batch(policy, &inputs, &SamplerSpec::on_policy(), child_seed(seed, component::EVAL), 1)?
            .into_iter()
            .map(|t| t.y)
            .collect();
    let bleu_score = if data.input_max_len() == 0 {
        let pool: Vec<TokenSequence> =
            (0..cfg.samples).map(|_| data.sample(&ConditioningInput::empty(), &mut rng)).collect();
        bleu_against_pool(&samples, &pool, cfg.max_n)?
    } else {
        let refs: Vec<Vec<TokenSequence>> =
            inputs.iter().map(|x| (0..4).map(|_| data.sample(x, &mut rng)).collect()).collect();
        bleu(&samples, &refs, cfg.max_n)?
    };
    Ok(Evaluation { oracle_nll: nll, bleu: bleu_score, self_bleu: self_bleu(&samples, cfg.max_n)? })
}

fn check_compatible<P: Policy + ?Sized>(g: &P, d: &Discriminator, data: &dyn DataSource) -> Result<()> {
    if g.vocab() != data.vocab() || d.vocab() != data.vocab() {
        return invalid("generator, discriminator and data use different vocabularies");
    }
    if g.max_len() < data.max_len() || d.max_len() < data.max_len() {
        return invalid("generator or discriminator max_len is shorter than the data's");
    }
    Ok(())
}

fn human_pairs(data: &dyn DataSource, n: usize, seed: u64, index: u64) -> Vec<LabeledPair> {
    let mut rng = derive_indexed(seed, component::DATA, index);
    (0..n)
        .map(|_| {
            let (x, y) = data.sample_pair(&mut rng);
            LabeledPair::human(x, y)
        })
        .collect()
}

/// Labels used for the per-step data streams; disjoint from the ones used by
/// discriminator updates.
const STEP_STREAM: u64 = 1 << 40;

fn fit_discriminator<P: Policy + Sync + ?Sized>(
    generator: &P,
    disc: &mut Discriminator,
    data: &dyn DataSource,
    cfg: &TrainConfig,
    epoch: usize,
    replay: Option<&ReplayBuffer>,
    step: u64,
) -> Result<()> {
    let h = human_pairs(data, cfg.disc_samples, cfg.seed, epoch as u64);
    let mut rng = derive_indexed(cfg.seed, component::DISCRIMINATOR, epoch as u64);
    let inputs: Vec<_> = (0..cfg.disc_samples).map(|_| data.sample_input(&mut rng)).collect();
    let seed = child_seed(child_seed(cfg.seed, component::DISCRIMINATOR), epoch as u64 + STEP_STREAM);
    let g: Vec<LabeledPair> = sample_batch(generator, &inputs, &cfg.sampler, seed, cfg.workers)?
        .into_iter()
        .map(|t| LabeledPair::generated(t.x, t.y, step))
        .collect();
    let mut replay_rng = derive_indexed(cfg.seed, component::REPLAY, epoch as u64);
    let replay = replay.map(|b| (b, &mut replay_rng));
    let rep = disc_train(disc, &h, &g, replay, &cfg.disc)?;
    log::debug!("epoch {epoch}: discriminator accuracy {:.3}, replaced {}", rep.accuracy, rep.replaced);
    Ok(())
}

/// Runs `cfg.epochs` epochs. Each epoch performs `gen_steps_per_epoch`
/// generator updates (rollouts from `cfg.sampler`, binary rewards from the
/// current discriminator, clipped importance-sampled gradient ascent, replay
/// push) and ends with one discriminator update on fresh human and generated
/// pairs. The discriminator is fitted once before the first epoch.
/// `on_epoch` sees each log row with the current models.
pub fn train<P>(
    generator: P,
    discriminator: Discriminator,
    data: &dyn DataSource,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord, &P, &Discriminator) -> Result<()>,
) -> Result<TrainOutcome<P>>
where
    P: Policy + Sync,
{
    cfg.validate()?;
    check_compatible(&generator, &discriminator, data)?;
    let mut generator = generator;
    let mut disc = discriminator;
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { generator, discriminator: disc, log });
    }
    let estimator = cfg.estimator();
    let mut buffer = ReplayBuffer::new(cfg.replay_window())?;
    let rollout_root = child_seed(cfg.seed, component::ROLLOUT);
    fit_discriminator(&generator, &mut disc, data, cfg, 0, None, 0)?;
    for epoch in 1..=cfg.epochs {
        let (mut score_sum, mut reward_sum, mut w_sum, mut w_max) = (0.0, 0.0, 0.0, 0.0f64);
        let (mut clips, mut n_total) = (0usize, 0usize);
        for s in 0..cfg.gen_steps_per_epoch {
            let step = ((epoch - 1) * cfg.gen_steps_per_epoch + s) as u64;
            let mut rng = derive_indexed(cfg.seed, component::DATA, STEP_STREAM + step);
            let inputs: Vec<_> = (0..cfg.batch_size).map(|_| data.sample_input(&mut rng)).collect();
            let mut batch =
                sample_batch(&generator, &inputs, &cfg.sampler, child_seed(rollout_root, 2 * step), cfg.workers)?;
            for t in batch.iter_mut() {
                let score = disc.score(&t.x, &t.y);
                score_sum += score;
                t.reward = reward_from_score(score);
            }
            let mut extra: Vec<Trajectory> = Vec::new();
            if estimator.needs_on_policy_batch() {
                extra = sample_batch(
                    &generator,
                    &inputs,
                    &SamplerSpec::on_policy(),
                    child_seed(rollout_root, 2 * step + 1),
                    cfg.workers,
                )?;
                for t in extra.iter_mut() {
                    t.reward = reward_from_score(disc.score(&t.x, &t.y));
                }
            }
            let rep = estimate(&generator, &cfg.sampler, estimator, &batch, &extra)?;
            let mut grad = rep.gradient;
            if cfg.mle_weight > 0.0 {
                let human = human_pairs(data, cfg.batch_size, cfg.seed, STEP_STREAM * 2 + step);
                let scale = cfg.mle_weight / human.len() as f64;
                for p in &human {
                    accumulate_grad_log_prob(&generator, &p.x, p.y.tokens(), scale, &mut grad);
                }
            }
            for (p, g) in generator.params_mut().iter_mut().zip(&grad) {
                *p += cfg.lr * g;
            }
            reward_sum += rep.mean_reward * rep.n as f64;
            w_sum += rep.mean_weight * rep.n as f64;
            w_max = w_max.max(rep.max_weight);
            clips += rep.clip_events;
            n_total += rep.n;
            if cfg.use_replay {
                let pairs: Vec<_> = batch.into_iter().map(|t| LabeledPair::generated(t.x, t.y, step)).collect();
                buffer.push(&pairs, step)?;
            }
        }
        let last_step = (epoch * cfg.gen_steps_per_epoch) as u64;
        let replay = cfg.use_replay.then_some(&buffer);
        fit_discriminator(&generator, &mut disc, data, cfg, epoch, replay, last_step)?;
        let eval = evaluate(&generator, data, &cfg.eval, child_seed(cfg.seed, epoch as u64))?;
        let n = n_total as f64;
        let record = EpochRecord {
            epoch,
            mean_disc_score: score_sum / n,
            mean_reward: reward_sum / n,
            mean_w: w_sum / n,
            max_w: w_max,
            clip_rate: clips as f64 / n,
            oracle_nll: eval.oracle_nll,
            bleu: eval.bleu,
            self_bleu: eval.self_bleu,
        };
        if record.clip_rate > 0.1 {
            log::warn!("epoch {epoch}: clip rate {:.3} is high", record.clip_rate);
        }
        log::info!(
            "epoch {epoch}: disc score {:.3}, reward {:.3}, oracle nll {:.4}",
            record.mean_disc_score,
            record.mean_reward,
            record.oracle_nll
        );
        on_epoch(&record, &generator, &disc)?;
        log.epochs.push(record);
    }
    Ok(TrainOutcome { generator, discriminator: disc, log })
}
