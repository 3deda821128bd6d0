//! Quality and diversity metrics: BLEU, self-BLEU, the negative-BLEU vs
//! self-BLEU curve, oracle NLL and length-binned reports.

mod bleu;

pub use bleu::{bleu, bleu_against_pool, self_bleu, sentence_bleu, SMOOTHING_EPSILON};

use crate::error::{invalid, Result};
use crate::oracle::{enumerate_sequences, sequence_count, DataSource, DEFAULT_BUDGET};
use crate::rng::Rng;
use crate::sampling::{sample, SamplerSpec};
use crate::seqmodel::policy::log_prob_unchecked;
use crate::seqmodel::{ConditioningInput, Policy, TokenSequence};
use crate::table::{fmt_f64, Table};

/// One point of the quality-diversity curve.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityDiversityPoint {
    pub temperature: f64,
    /// `-BLEU`, in `[-1, 0]`; lower is better quality.
    pub neg_bleu: f64,
    /// Lower is more diverse.
    pub self_bleu: f64,
    pub samples: usize,
}

/// For each temperature draws `n_samples` sequences (empty input), scores
/// them with BLEU against the fixed `references` pool and with self-BLEU.
pub fn quality_diversity_curve<P: Policy + ?Sized>(
    policy: &P,
    references: &[TokenSequence],
    temps: &[f64],
    n_samples: usize,
    max_n: usize,
    rng: &mut Rng,
) -> Result<Vec<QualityDiversityPoint>> {
    if temps.is_empty() {
        return invalid("no temperatures given");
    }
    if n_samples < 2 {
        return invalid("the curve needs at least 2 samples per temperature");
    }
    let x = ConditioningInput::empty();
    let mut out = Vec::with_capacity(temps.len());
    for &t in temps {
        let spec = SamplerSpec::temperature(t);
        spec.validate()?;
        let samples: Vec<TokenSequence> =
            (0..n_samples).map(|_| sample(policy, &x, &spec, rng).map(|tr| tr.y)).collect::<Result<_>>()?;
        out.push(QualityDiversityPoint {
            temperature: t,
            neg_bleu: -bleu_against_pool(&samples, references, max_n)?,
            self_bleu: self_bleu(&samples, max_n)?,
            samples: n_samples,
        });
    }
    Ok(out)
}

pub fn curve_table(points: &[QualityDiversityPoint]) -> Table {
    let mut t = Table::new(["temperature", "neg_bleu", "self_bleu", "samples"]);
    for p in points {
        t.push([fmt_f64(p.temperature), fmt_f64(p.neg_bleu), fmt_f64(p.self_bleu), p.samples.to_string()]);
    }
    t
}

/// `(x, y, series)` triples: negative BLEU against self-BLEU.
pub fn curve_plot_data(points: &[QualityDiversityPoint], series: &str) -> Table {
    let mut t = Table::new(["x", "y", "series"]);
    for p in points {
        t.push([fmt_f64(p.neg_bleu), fmt_f64(p.self_bleu), series.to_string()]);
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NllMode {
    /// Enumerate every input and output.
    Exact,
    /// Average over `n` data samples.
    Sampled { n: usize },
    /// Exact when the sequence space fits the default budget.
    Auto { n: usize },
}

/// Expected `-log pi_theta(Y | X)` under the data distribution.
pub fn oracle_nll<P: Policy + ?Sized>(policy: &P, data: &dyn DataSource, mode: NllMode, rng: &mut Rng) -> Result<f64> {
    if policy.vocab() != data.vocab() || policy.max_len() < data.max_len() {
        return invalid("policy cannot represent the data distribution's sequences");
    }
    let exact = match mode {
        NllMode::Exact => true,
        NllMode::Sampled { .. } => false,
        NllMode::Auto { .. } => {
            let outputs = sequence_count(data.vocab(), data.max_len()).unwrap_or(u128::MAX);
            let inputs = sequence_count(data.vocab(), data.input_max_len() + 1).unwrap_or(u128::MAX);
            outputs.saturating_mul(inputs) <= DEFAULT_BUDGET
        }
    };
    if exact {
        let index = enumerate_sequences(data.vocab(), data.max_len(), DEFAULT_BUDGET)?;
        let mut total = 0.0;
        for x in data.input_support() {
            policy.check_input(&x)?;
            let px = data.input_prob(&x);
            for y in index.sequences() {
                let p = data.prob(&x, y);
                if p > 0.0 {
                    total -= px * p * log_prob_unchecked(policy, &x, y.tokens(), 1.0);
                }
            }
        }
        return Ok(total);
    }
    let n = match mode {
        NllMode::Sampled { n } | NllMode::Auto { n } => n,
        NllMode::Exact => unreachable!(),
    };
    if n == 0 {
        return invalid("sampled oracle NLL needs n > 0");
    }
    let mut total = 0.0;
    for _ in 0..n {
        let (x, y) = data.sample_pair(rng);
        policy.check_input(&x)?;
        total -= log_prob_unchecked(policy, &x, y.tokens(), 1.0);
    }
    Ok(total / n as f64)
}

/// Lengths in `[lo, hi)`; `hi = None` is unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthBin {
    pub lo: usize,
    pub hi: Option<usize>,
    pub count: usize,
    /// `None` for empty bins.
    pub mean: Option<f64>,
}

/// Mean of `values` grouped by `lengths` into bins starting at the
/// ascending `edges`; the last bin is open-ended. Lengths below the first
/// edge are ignored.
pub fn length_binned_report(lengths: &[usize], values: &[f64], edges: &[usize]) -> Result<Vec<LengthBin>> {
    if lengths.len() != values.len() {
        return invalid("lengths and values differ in size");
    }
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return invalid("bin edges must be non-empty and strictly ascending");
    }
    let mut bins: Vec<LengthBin> = edges
        .iter()
        .enumerate()
        .map(|(i, &lo)| LengthBin { lo, hi: edges.get(i + 1).copied(), count: 0, mean: None })
        .collect();
    let mut sums = vec![0.0; bins.len()];
    for (&l, &v) in lengths.iter().zip(values) {
        if l < edges[0] {
            continue;
        }
        let b = edges.partition_point(|&e| e <= l) - 1;
        bins[b].count += 1;
        sums[b] += v;
    }
    for (bin, s) in bins.iter_mut().zip(sums) {
        if bin.count > 0 {
            bin.mean = Some(s / bin.count as f64);
        }
    }
    Ok(bins)
}

/// Per-bin mean of `a - b` for two systems scored on the same examples.
pub fn length_binned_delta(lengths: &[usize], a: &[f64], b: &[f64], edges: &[usize]) -> Result<Vec<LengthBin>> {
    if a.len() != b.len() {
        return invalid("systems scored on different numbers of examples");
    }
    let delta: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    length_binned_report(lengths, &delta, edges)
}

/// Empty bins leave the `mean` cell blank.
pub fn bins_table(bins: &[LengthBin]) -> Table {
    let mut t = Table::new(["bin_lo", "bin_hi", "count", "mean"]);
    for b in bins {
        t.push([
            b.lo.to_string(),
            b.hi.map_or_else(|| "inf".to_string(), |h| h.to_string()),
            b.count.to_string(),
            b.mean.map_or_else(String::new, fmt_f64),
        ]);
    }
    t
}
