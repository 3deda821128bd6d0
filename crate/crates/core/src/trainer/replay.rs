use crate::discriminator::{Label, LabeledPair};
use crate::error::{invalid, Result};
use rand::seq::index::sample;
use rand::Rng;
use std::collections::VecDeque;

/// FIFO of generated pairs from the last `window` training steps.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    window: u64,
    items: VecDeque<LabeledPair>,
    last_step: Option<u64>,
}

impl ReplayBuffer {
    pub fn new(window: u64) -> Result<Self> {
        if window == 0 {
            return invalid("replay window must be positive");
        }
        Ok(ReplayBuffer { window, items: VecDeque::new(), last_step: None })
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = &LabeledPair> {
        self.items.iter()
    }

    /// Appends generated `pairs` produced at `step` and evicts everything
    /// with `origin_step <= step - window`. Steps must not decrease.
    pub fn push(&mut self, pairs: &[LabeledPair], step: u64) -> Result<()> {
        if pairs.iter().any(|p| p.label() != Label::Generated) {
            return invalid("only generated pairs can be replayed");
        }
        if self.last_step.is_some_and(|s| step < s) {
            return invalid(format!("replay step went backwards to {step}"));
        }
        self.last_step = Some(step);
        let horizon = step as i64 - self.window as i64;
        while self.items.front().is_some_and(|p| p.origin_step() <= horizon) {
            self.items.pop_front();
        }
        self.items.extend(pairs.iter().filter(|p| p.origin_step() > horizon).cloned());
        Ok(())
    }

    /// `k` distinct items drawn uniformly; all items if `k` exceeds the size.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<LabeledPair> {
        if k > self.items.len() {
            log::info!("replay sample of {k} requested from {} items; returning all", self.items.len());
            return self.items.iter().cloned().collect();
        }
        sample(rng, self.items.len(), k).into_iter().map(|i| self.items[i].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::seqmodel::{ConditioningInput, TokenSequence, Vocab};

    fn pair(step: u64, tag: u32) -> LabeledPair {
        let v = Vocab::with_content(20).unwrap();
        let y = TokenSequence::from_content(&[tag % 20 + 1], v, 3).unwrap();
        LabeledPair::generated(ConditioningInput::empty(), y, step)
    }

    #[test]
    fn window_evicts_oldest_step() {
        let k = 4;
        let mut b = ReplayBuffer::new(k).unwrap();
        for step in 1..=k + 1 {
            let items: Vec<_> = (0..10).map(|i| pair(step, i)).collect();
            b.push(&items, step).unwrap();
        }
        assert_eq!(b.len(), 10 * k as usize);
        assert!(b.items().all(|p| p.origin_step() >= 2));
    }

    #[test]
    fn rejects_human_pairs_and_backwards_steps() {
        let mut b = ReplayBuffer::new(2).unwrap();
        let v = Vocab::with_content(2).unwrap();
        let h = LabeledPair::human(ConditioningInput::empty(), TokenSequence::from_content(&[1], v, 3).unwrap());
        assert!(b.push(&[h], 0).is_err());
        b.push(&[pair(3, 0)], 3).unwrap();
        assert!(b.push(&[pair(2, 0)], 2).is_err());
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn sampling_edge_cases() {
        let mut b = ReplayBuffer::new(5).unwrap();
        b.push(&[pair(1, 1), pair(1, 2), pair(1, 3)], 1).unwrap();
        let mut rng = seeded(0);
        assert!(b.sample(0, &mut rng).is_empty());
        assert_eq!(b.sample(10, &mut rng).len(), 3);
        let two = b.sample(2, &mut rng);
        assert_eq!(two.len(), 2);
        assert_ne!(two[0], two[1]);
    }
}
