//! Adversarial training of autoregressive sequence generators with
//! importance-sampled policy gradients and cold (low-temperature / nucleus)
//! exploration.
//!
//! The crate is organised bottom-up:
//!
//! * [`seqmodel`]: vocabularies, sequences, tabular and recurrent policies,
//!   tempered softmax, analytic score-function gradients and MLE pretraining.
//! * [`sampling`]: behaviour distributions (temperature, nucleus and their
//!   sequence-level mixture), exact sampler densities, importance weights and
//!   greedy/beam decoding.
//! * [`discriminator`]: logistic scorers over n-gram features or a small
//!   recurrent encoder, binary rewards and the two diagnostic probes.
//! * [`trainer`]: the importance-sampled policy gradient, weight clipping with
//!   its on-policy correction, the replay buffer and the adversarial loop.
//! * [`metrics`]: BLEU, self-BLEU, quality/diversity curves, oracle NLL and
//!   length-binned reports.
//! * [`oracle`]: synthetic data distributions with exact probabilities,
//!   exhaustive enumeration and exact expectations used as ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod discriminator;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod sampling;
pub mod seqmodel;
pub mod table;
pub mod trainer;

pub use error::{Error, Result};
pub use sampling::{SamplerSpec, Trajectory};
pub use seqmodel::{
    ConditioningInput, GeneratorPolicy, NeuralConfig, NeuralPolicy, Policy, TabularPolicy, Token, TokenSequence, Vocab,
};
