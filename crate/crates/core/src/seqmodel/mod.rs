//! Vocabularies, token sequences and autoregressive generator policies.
//!
//! Token ids are dense. The emittable vocabulary is `0..size` where id `0` is
//! EOS and `1..size` are content tokens. Two further ids are reserved and can
//! never be emitted by a policy: BOS (`size`), used as the start symbol of
//! recurrent encoders, and PAD (`size + 1`), which may only follow EOS in
//! padded storage.
//!
//! A sequence is at most `max_len` tokens long including its terminating EOS.
//! When a prefix reaches `max_len - 1` content tokens the next token is forced
//! to EOS with probability one; the probability mass of truncation is
//! therefore carried entirely by that forced step and the sequence space is
//! finite.

pub(crate) mod checkpoint;
pub(crate) mod mle;
mod neural;
pub(crate) mod policy;
pub(crate) mod rnn;
mod softmax;
mod tabular;

pub use checkpoint::{read_policy, write_policy};
pub use mle::{mle_train, MleConfig, MleReport};
pub use neural::{NeuralConfig, NeuralPolicy};
pub use policy::{grad_log_prob, mean_nll, sequence_log_prob, GeneratorPolicy, Policy, PolicyCursor};
pub use softmax::{log_softmax, log_sum_exp, tempered_distribution};
pub use tabular::TabularPolicy;

use crate::error::{invalid, Result};
use std::fmt;

pub type Token = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub const EOS: Token = 0;

    /// `size` counts EOS plus the content tokens, so the smallest vocabulary
    /// (one content token) has size 2.
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return invalid(format!("vocabulary size must be >= 2 (EOS + content), got {size}"));
        }
        if size > (u32::MAX as usize) - 2 {
            return invalid("vocabulary too large");
        }
        Ok(Vocab { size })
    }

    /// Vocabulary with `n` content tokens plus EOS.
    pub fn with_content(n: usize) -> Result<Self> {
        Vocab::new(n + 1)
    }

    /// Number of emittable tokens (the length of every logits vector).
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn content_size(&self) -> usize {
        self.size - 1
    }

    pub fn bos(&self) -> Token {
        self.size as Token
    }

    pub fn pad(&self) -> Token {
        self.size as Token + 1
    }

    pub fn is_content(&self, t: Token) -> bool {
        t != Self::EOS && (t as usize) < self.size
    }

    pub fn content_tokens(&self) -> impl Iterator<Item = Token> {
        1..self.size as Token
    }
}

/// Number of free (non-forced) decoding steps of a sequence of `len` tokens.
pub(crate) fn free_steps(len: usize, max_len: usize) -> usize {
    len.min(max_len.saturating_sub(1))
}

/// An EOS-terminated sequence of emitted tokens.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSequence(Vec<Token>);

impl TokenSequence {
    pub fn new(tokens: Vec<Token>, vocab: Vocab, max_len: usize) -> Result<Self> {
        Self::validate(&tokens, vocab, max_len)?;
        Ok(TokenSequence(tokens))
    }

    /// Appends EOS to a list of content tokens.
    pub fn from_content(content: &[Token], vocab: Vocab, max_len: usize) -> Result<Self> {
        let mut tokens = content.to_vec();
        tokens.push(Vocab::EOS);
        Self::new(tokens, vocab, max_len)
    }

    /// Accepts storage padded with PAD after the terminating EOS.
    pub fn from_padded(tokens: &[Token], vocab: Vocab, max_len: usize) -> Result<Self> {
        match tokens.iter().position(|&t| t == Vocab::EOS) {
            Some(end) => {
                if tokens[end + 1..].iter().any(|&t| t != vocab.pad()) {
                    return invalid("only PAD may follow EOS");
                }
                Self::new(tokens[..=end].to_vec(), vocab, max_len)
            }
            None => invalid("sequence has no EOS"),
        }
    }

    pub(crate) fn from_vec_unchecked(tokens: Vec<Token>) -> Self {
        TokenSequence(tokens)
    }

    pub fn validate(tokens: &[Token], vocab: Vocab, max_len: usize) -> Result<()> {
        let Some((&last, body)) = tokens.split_last() else {
            return invalid("empty sequence: EOS is mandatory");
        };
        if tokens.len() > max_len {
            return invalid(format!("sequence length {} exceeds max_len {max_len}", tokens.len()));
        }
        if last != Vocab::EOS {
            return invalid("sequence must end with EOS");
        }
        if let Some(&t) = body.iter().find(|&&t| !vocab.is_content(t)) {
            return invalid(format!("token {t} is not a content token"));
        }
        Ok(())
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    /// Tokens without the terminating EOS.
    pub fn content(&self) -> &[Token] {
        &self.0[..self.0.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Source sequence `X`. Empty for unconditional generation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConditioningInput(Vec<Token>);

impl ConditioningInput {
    pub fn empty() -> Self {
        ConditioningInput(Vec::new())
    }

    pub fn new(tokens: Vec<Token>, vocab: Vocab) -> Result<Self> {
        if let Some(&t) = tokens.iter().find(|&&t| !vocab.is_content(t)) {
            return invalid(format!("conditioning token {t} is not a content token"));
        }
        Ok(ConditioningInput(tokens))
    }

    pub(crate) fn from_vec_unchecked(tokens: Vec<Token>) -> Self {
        ConditioningInput(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_distinct_and_outside_the_emittable_range() {
        let v = Vocab::new(5).unwrap();
        assert_eq!(Vocab::EOS, 0);
        assert_eq!(v.bos(), 5);
        assert_eq!(v.pad(), 6);
        assert!(!v.is_content(v.bos()));
        assert!(Vocab::new(1).is_err());
    }

    #[test]
    fn sequence_invariants() {
        let v = Vocab::new(4).unwrap();
        assert!(TokenSequence::new(vec![1, 2, 0], v, 3).is_ok());
        assert!(TokenSequence::new(vec![1, 2, 0], v, 2).is_err());
        assert!(TokenSequence::new(vec![1, 0, 2, 0], v, 5).is_err());
        assert!(TokenSequence::new(vec![1, 2], v, 5).is_err());
        assert!(TokenSequence::new(vec![], v, 5).is_err());
        assert!(TokenSequence::new(vec![v.pad(), 0], v, 5).is_err());
        let padded = TokenSequence::from_padded(&[3, 0, v.pad(), v.pad()], v, 4).unwrap();
        assert_eq!(padded.tokens(), &[3, 0]);
        assert!(TokenSequence::from_padded(&[3, 0, 1], v, 4).is_err());
    }
}
