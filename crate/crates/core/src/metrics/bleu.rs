//! Corpus BLEU over content tokens (EOS excluded).
//!
//! Precision of order `n` is the clipped n-gram match count over the total
//! hypothesis n-gram count, summed over the corpus. Orders for which the
//! whole corpus has no hypothesis n-gram are left out of the geometric mean.
//! Orders with zero matches use `1e-9 / total` instead of zero. The brevity
//! penalty uses, per hypothesis, the closest reference length (shorter wins
//! ties).

use crate::error::{invalid, Result};
use crate::seqmodel::{Token, TokenSequence};
use std::collections::HashMap;

pub const SMOOTHING_EPSILON: f64 = 1e-9;

type Counts = HashMap<Vec<Token>, usize>;

fn ngram_counts(tokens: &[Token], n: usize) -> Counts {
    let mut c = Counts::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *c.entry(w.to_vec()).or_default() += 1;
        }
    }
    c
}

/// Max count of each n-gram over a reference set, for orders `1..=max_n`.
#[derive(Clone, Debug, Default)]
struct RefStats {
    max_counts: Vec<Counts>,
    lengths: Vec<usize>,
}

impl RefStats {
    fn new<'a>(refs: impl IntoIterator<Item = &'a [Token]>, max_n: usize) -> Self {
        let mut s = RefStats { max_counts: vec![Counts::new(); max_n], lengths: Vec::new() };
        for r in refs {
            s.lengths.push(r.len());
            for n in 1..=max_n {
                for (g, c) in ngram_counts(r, n) {
                    let e = s.max_counts[n - 1].entry(g).or_default();
                    *e = (*e).max(c);
                }
            }
        }
        s
    }

    fn closest_length(&self, hyp_len: usize) -> usize {
        self.lengths.iter().copied().min_by_key(|&l| (l.abs_diff(hyp_len), l)).unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
struct Accumulator {
    matches: Vec<f64>,
    totals: Vec<f64>,
    hyp_len: usize,
    ref_len: usize,
}

impl Accumulator {
    fn new(max_n: usize) -> Self {
        Accumulator { matches: vec![0.0; max_n], totals: vec![0.0; max_n], hyp_len: 0, ref_len: 0 }
    }

    fn add(&mut self, hyp: &[Token], refs: &RefStats) {
        for n in 1..=self.matches.len() {
            for (g, c) in ngram_counts(hyp, n) {
                let m = refs.max_counts[n - 1].get(&g).copied().unwrap_or(0);
                self.matches[n - 1] += c.min(m) as f64;
                self.totals[n - 1] += c as f64;
            }
        }
        self.hyp_len += hyp.len();
        self.ref_len += refs.closest_length(hyp.len());
    }

    fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return if self.ref_len == 0 { 1.0 } else { 0.0 };
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for (m, t) in self.matches.iter().zip(&self.totals) {
            if *t == 0.0 {
                continue;
            }
            let p = if *m == 0.0 { SMOOTHING_EPSILON / t } else { m / t };
            log_sum += p.ln();
            orders += 1;
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        bp * (log_sum / orders as f64).exp()
    }
}

fn check_max_n(max_n: usize) -> Result<()> {
    if !(1..=4).contains(&max_n) {
        return invalid(format!("max_n must be in 1..=4, got {max_n}"));
    }
    Ok(())
}

/// Corpus BLEU; `references[i]` is the reference set of `hypotheses[i]`.
pub fn bleu(hypotheses: &[TokenSequence], references: &[Vec<TokenSequence>], max_n: usize) -> Result<f64> {
    check_max_n(max_n)?;
    if hypotheses.is_empty() {
        return invalid("BLEU of an empty corpus");
    }
    if hypotheses.len() != references.len() {
        return invalid(format!("{} hypotheses but {} reference sets", hypotheses.len(), references.len()));
    }
    let mut acc = Accumulator::new(max_n);
    for (h, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return invalid("hypothesis without references");
        }
        let stats = RefStats::new(refs.iter().map(|r| r.content()), max_n);
        acc.add(h.content(), &stats);
    }
    Ok(acc.score())
}

/// Corpus BLEU where every hypothesis is scored against the same pool.
pub fn bleu_against_pool(hypotheses: &[TokenSequence], pool: &[TokenSequence], max_n: usize) -> Result<f64> {
    check_max_n(max_n)?;
    if hypotheses.is_empty() || pool.is_empty() {
        return invalid("BLEU needs non-empty hypotheses and references");
    }
    let stats = RefStats::new(pool.iter().map(|r| r.content()), max_n);
    let mut acc = Accumulator::new(max_n);
    for h in hypotheses {
        acc.add(h.content(), &stats);
    }
    Ok(acc.score())
}

/// BLEU of one hypothesis against its references.
pub fn sentence_bleu(hypothesis: &TokenSequence, references: &[TokenSequence], max_n: usize) -> Result<f64> {
    bleu(std::slice::from_ref(hypothesis), &[references.to_vec()], max_n)
}

/// Mean over samples of the BLEU of each sample against all the others.
pub fn self_bleu(samples: &[TokenSequence], max_n: usize) -> Result<f64> {
    check_max_n(max_n)?;
    if samples.len() < 2 {
        return invalid("self-BLEU needs at least 2 samples");
    }
    let mut total = 0.0;
    for i in 0..samples.len() {
        let others = samples.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, s)| s.content());
        let stats = RefStats::new(others, max_n);
        let mut acc = Accumulator::new(max_n);
        acc.add(samples[i].content(), &stats);
        total += acc.score();
    }
    Ok(total / samples.len() as f64)
}
