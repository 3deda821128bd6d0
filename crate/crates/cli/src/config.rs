//! TOML run configuration. Every section has defaults except `[data]`.

use crate::error::CliError;
use coldlab::discriminator::{CrossTemperatureConfig, DiscTrainConfig, DiscriminatorKind, PrefixAccuracyConfig};
use coldlab::oracle::{ConditionalTask, DataDistribution, MarkovChain, TableShape, VerifyConfig};
use coldlab::rng::{component, derive};
use coldlab::sampling::Decoding;
use coldlab::seqmodel::MleConfig;
use coldlab::trainer::{EvalConfig, TrainConfig};
use coldlab::{NeuralConfig, SamplerSpec, Vocab};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Run directory, relative to the output root.
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub discriminator: DiscriminatorSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub verify: VerifySection,
}

fn default_seed() -> u64 {
    1
}

fn default_output_dir() -> String {
    "run".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Unconditional,
    ConditionalSynthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Instance {
    /// 6 content tokens, max_len 7.
    Synthetic,
    /// 4 content tokens, max_len 4.
    Default,
    /// Random second-order chain drawn from `seed` with the given sizes.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub task: Task,
    pub instance: Instance,
    pub content_tokens: usize,
    pub max_len: usize,
    pub order: usize,
    pub eos: f64,
    pub input_max_len: usize,
    pub fidelity: f64,
    /// Seed of the random distribution tables.
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            task: Task::Unconditional,
            instance: Instance::Synthetic,
            content_tokens: 4,
            max_len: 5,
            order: 2,
            eos: TableShape::default().eos,
            input_max_len: 4,
            fidelity: 0.8,
            seed: 7,
        }
    }
}

impl DataSection {
    pub fn build(&self) -> Result<DataDistribution, CliError> {
        let shape = TableShape { eos: self.eos, ..TableShape::default() };
        let mut rng = derive(self.seed, component::DATA);
        let vocab = || Vocab::with_content(self.content_tokens);
        Ok(match (self.task, self.instance) {
            (Task::Unconditional, Instance::Synthetic) => DataDistribution::synthetic_task(),
            (Task::Unconditional, Instance::Default) => DataDistribution::default_instance(),
            (Task::Unconditional, Instance::Random) => {
                DataDistribution::Markov(MarkovChain::random(vocab()?, self.max_len, self.order, &shape, &mut rng)?)
            }
            (Task::ConditionalSynthetic, _) => DataDistribution::Conditional(ConditionalTask::random(
                vocab()?,
                self.input_max_len,
                self.fidelity,
                &shape,
                &mut rng,
            )?),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Tabular,
    Neural,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Half-width of the uniform initialisation of tabular logits.
    pub init_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let n = NeuralConfig::default();
        ModelSection { kind: ModelKind::Tabular, embed_dim: n.embed_dim, hidden_dim: n.hidden_dim, init_scale: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub samples: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let m = MleConfig::default();
        PretrainSection {
            samples: 2000,
            lr: m.lr,
            max_epochs: m.max_epochs,
            patience: m.patience,
            validation_fraction: m.validation_fraction,
        }
    }
}

impl PretrainSection {
    pub fn mle(&self, seed: u64) -> MleConfig {
        MleConfig {
            lr: self.lr,
            max_epochs: self.max_epochs,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    /// Behaviour distribution of the rollouts, e.g. `temperature(1.0)`.
    pub spec: String,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection { spec: TrainConfig::default().sampler.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    /// Two-term clipped estimator; plain importance sampling otherwise.
    pub clipped: bool,
    pub clip: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gen_steps_per_epoch: usize,
    /// Generator steps; 0 means three epochs.
    pub replay_window: u64,
    pub use_replay: bool,
    pub disc_samples: usize,
    pub mle_weight: f64,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainerSection {
            clipped: t.clip.is_some(),
            clip: t.clip.unwrap_or(5.0),
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            gen_steps_per_epoch: t.gen_steps_per_epoch,
            replay_window: t.replay_window.unwrap_or(0),
            use_replay: t.use_replay,
            disc_samples: t.disc_samples,
            mle_weight: t.mle_weight,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSection {
    /// `ngram` or `recurrent`.
    pub kind: String,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub steps: usize,
    pub lr: f64,
    pub l2: f64,
    pub replay_fraction: f64,
}

impl Default for DiscriminatorSection {
    fn default() -> Self {
        let d = DiscTrainConfig::default();
        DiscriminatorSection {
            kind: "ngram".into(),
            embed_dim: 8,
            hidden_dim: 16,
            steps: d.steps,
            lr: d.lr,
            l2: d.l2,
            replay_fraction: d.replay_fraction,
        }
    }
}

impl DiscriminatorSection {
    pub fn kind(&self) -> Result<DiscriminatorKind, CliError> {
        Ok(match self.kind.parse::<DiscriminatorKind>()? {
            DiscriminatorKind::Recurrent { .. } => {
                DiscriminatorKind::Recurrent { embed_dim: self.embed_dim, hidden_dim: self.hidden_dim }
            }
            k => k,
        })
    }

    pub fn train(&self) -> DiscTrainConfig {
        DiscTrainConfig { steps: self.steps, lr: self.lr, l2: self.l2, replay_fraction: self.replay_fraction }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub samples: usize,
    pub max_n: usize,
    pub temps: Vec<f64>,
    pub curve_samples: usize,
    /// Size of the shared reference pool of the curve.
    pub references: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection {
            samples: e.samples,
            max_n: e.max_n,
            temps: vec![0.5, 0.8, 1.0, 1.5],
            curve_samples: 200,
            references: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub train_temps: Vec<String>,
    pub eval_temps: Vec<String>,
    pub union: bool,
    pub n_train: usize,
    pub n_eval: usize,
    /// Generator temperature of the prefix-accuracy probe.
    pub temperature: f64,
    /// Longest probed prefix; 0 means the data's `max_len`.
    pub max_prefix: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let c = CrossTemperatureConfig::default();
        let names = |v: &[Decoding]| v.iter().map(|d| d.to_string()).collect();
        ProbeSection {
            train_temps: names(&c.train_temps),
            eval_temps: names(&c.eval_temps),
            union: c.union,
            n_train: c.n_train,
            n_eval: c.n_eval,
            temperature: 1.0,
            max_prefix: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub is_samples: usize,
    pub clip_samples: usize,
    pub fd_probes: usize,
    pub support_sequences: usize,
    pub variance_seeds: Vec<u64>,
    /// Largest number of enumerated sequences.
    pub budget: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        let v = VerifyConfig::default();
        VerifySection {
            is_samples: v.is_samples,
            clip_samples: v.clip_samples,
            fd_probes: v.fd_probes,
            support_sequences: v.support_sequences,
            variance_seeds: v.variance_seeds,
            budget: v.budget as u64,
        }
    }
}

fn decodings(names: &[String]) -> Result<Vec<Decoding>, CliError> {
    names.iter().map(|s| s.parse::<Decoding>().map_err(CliError::from)).collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.sampler_spec()?;
        cfg.discriminator.kind()?;
        decodings(&cfg.probe.train_temps)?;
        decodings(&cfg.probe.eval_temps)?;
        Ok(cfg)
    }

    /// Resolved config with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sampler_spec(&self) -> Result<SamplerSpec, CliError> {
        let spec: SamplerSpec = self.sampler.spec.parse()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn neural(&self) -> NeuralConfig {
        NeuralConfig { embed_dim: self.model.embed_dim, hidden_dim: self.model.hidden_dim }
    }

    pub fn train_config(&self, workers: usize) -> Result<TrainConfig, CliError> {
        let t = &self.trainer;
        let cfg = TrainConfig {
            sampler: self.sampler_spec()?,
            clip: t.clipped.then_some(t.clip),
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            gen_steps_per_epoch: t.gen_steps_per_epoch,
            replay_window: (t.replay_window > 0).then_some(t.replay_window),
            use_replay: t.use_replay,
            disc: self.discriminator.train(),
            disc_samples: t.disc_samples,
            mle_weight: t.mle_weight,
            eval: self.eval_config(),
            seed: self.seed,
            workers,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { samples: self.eval.samples, max_n: self.eval.max_n }
    }

    pub fn cross_temperature(&self) -> Result<CrossTemperatureConfig, CliError> {
        Ok(CrossTemperatureConfig {
            train_temps: decodings(&self.probe.train_temps)?,
            eval_temps: decodings(&self.probe.eval_temps)?,
            union: self.probe.union,
            n_train: self.probe.n_train,
            n_eval: self.probe.n_eval,
            kind: self.discriminator.kind()?,
            train: self.discriminator.train(),
            seed: self.seed,
        })
    }

    pub fn prefix_accuracy(&self) -> Result<PrefixAccuracyConfig, CliError> {
        Ok(PrefixAccuracyConfig {
            max_prefix: (self.probe.max_prefix > 0).then_some(self.probe.max_prefix),
            n_train: self.probe.n_train,
            n_eval: self.probe.n_eval,
            temperature: self.probe.temperature,
            kind: self.discriminator.kind()?,
            train: self.discriminator.train(),
            seed: self.seed,
        })
    }

    pub fn verify_config(&self, workers: usize) -> VerifyConfig {
        let v = &self.verify;
        VerifyConfig {
            seed: self.seed,
            is_samples: v.is_samples,
            clip_samples: v.clip_samples,
            fd_probes: v.fd_probes,
            support_sequences: v.support_sequences,
            variance_seeds: v.variance_seeds.clone(),
            budget: v.budget as u128,
            workers,
            ..VerifyConfig::default()
        }
    }
}
