#![allow(dead_code)]

use coldlab::oracle::{enumerate_sequences, EnumerationIndex, DEFAULT_BUDGET};
use coldlab::{TokenSequence, Vocab};
use std::collections::HashMap;

/// Upper `alpha = 0.01` critical value of the chi-square distribution with
/// `df` degrees of freedom (Wilson-Hilferty).
pub fn chi2_critical_01(df: usize) -> f64 {
    const Z_99: f64 = 2.326_347_874_040_841;
    let k = df as f64;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + Z_99 * a.sqrt()).powi(3)
}

/// Pearson statistic and degrees of freedom of `counts` against expected
/// probabilities `probs` (cells with zero expectation must have zero count;
/// cells with expectation below 5 are pooled).
pub fn chi2_statistic(counts: &[u64], probs: &[f64]) -> (f64, usize) {
    let n: u64 = counts.iter().sum();
    let n = n as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * n;
        if e == 0.0 {
            assert_eq!(c, 0, "observed a zero-probability cell");
            continue;
        }
        if e < 5.0 {
            pooled_obs += c as f64;
            pooled_exp += e;
            continue;
        }
        stat += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        cells += 1;
    }
    (stat, cells.saturating_sub(1))
}

pub fn index(vocab: Vocab, max_len: usize) -> EnumerationIndex {
    enumerate_sequences(vocab, max_len, DEFAULT_BUDGET).unwrap()
}

/// Histogram of samples over the positions of `index`.
pub fn histogram<'a>(index: &EnumerationIndex, samples: impl Iterator<Item = &'a TokenSequence>) -> Vec<u64> {
    let pos: HashMap<&[u32], usize> = index.sequences().iter().enumerate().map(|(i, y)| (y.tokens(), i)).collect();
    let mut counts = vec![0u64; index.len()];
    for y in samples {
        counts[pos[y.tokens()]] += 1;
    }
    counts
}
