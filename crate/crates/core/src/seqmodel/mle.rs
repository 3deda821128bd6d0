use super::policy::{accumulate_grad_log_prob, check_pair, log_prob_unchecked, Policy};
use super::{ConditioningInput, TokenSequence};
use crate::error::{invalid, Result};
use rand::seq::SliceRandom;
use std::collections::BTreeMap;

/// Teacher-forced maximum likelihood by full-batch gradient ascent on the
/// mean log-likelihood, with early stopping on a held-out split.
#[derive(Clone, Debug, PartialEq)]
pub struct MleConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Fraction of the data held out for early stopping; 0 disables the split
    /// and early stopping then watches the training NLL.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig { lr: 1.0, max_epochs: 500, patience: 20, validation_fraction: 0.1, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MleReport {
    /// Training NLL before each epoch's update, plus the final value.
    pub train_nll: Vec<f64>,
    /// Validation NLL tracked alongside `train_nll`.
    pub val_nll: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
}

impl MleReport {
    pub fn to_table(&self) -> crate::table::Table {
        use crate::table::fmt_f64;
        let mut t = crate::table::Table::new(["epoch", "train_nll", "val_nll"]);
        for (i, (tr, va)) in self.train_nll.iter().zip(&self.val_nll).enumerate() {
            t.push([i.to_string(), fmt_f64(*tr), fmt_f64(*va)]);
        }
        t
    }
}

type Weighted = Vec<(ConditioningInput, TokenSequence, f64)>;

fn dedupe(items: &[&(ConditioningInput, TokenSequence)]) -> Weighted {
    let mut counts: BTreeMap<(&ConditioningInput, &TokenSequence), usize> = BTreeMap::new();
    for (x, y) in items.iter().map(|p| (&p.0, &p.1)) {
        *counts.entry((x, y)).or_default() += 1;
    }
    let n = items.len() as f64;
    counts.into_iter().map(|((x, y), c)| (x.clone(), y.clone(), c as f64 / n)).collect()
}

fn weighted_nll<P: Policy + ?Sized>(policy: &P, data: &Weighted) -> f64 {
    data.iter().map(|(x, y, w)| -w * log_prob_unchecked(policy, x, y.tokens(), 1.0)).sum()
}

/// `out += scale * grad (mean log-likelihood)`; returns the mean NLL.
fn accumulate_mle_gradient<P: Policy + ?Sized>(policy: &P, data: &Weighted, scale: f64, out: &mut [f64]) -> f64 {
    data.iter().map(|(x, y, w)| -w * accumulate_grad_log_prob(policy, x, y.tokens(), scale * w, out)).sum()
}

pub fn mle_train<P: Policy + ?Sized>(
    policy: &mut P,
    data: &[(ConditioningInput, TokenSequence)],
    config: &MleConfig,
) -> Result<MleReport> {
    if data.is_empty() {
        return invalid("MLE training needs at least one example");
    }
    if !(config.lr > 0.0) || !config.lr.is_finite() {
        return invalid("learning rate must be finite and > 0");
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return invalid("validation_fraction must be in [0, 1)");
    }
    for (x, y) in data {
        check_pair(policy, x, y)?;
    }

    let mut order: Vec<&(ConditioningInput, TokenSequence)> = data.iter().collect();
    order.shuffle(&mut crate::rng::seeded(config.seed));
    let n_val = if data.len() >= 2 && config.validation_fraction > 0.0 {
        ((data.len() as f64 * config.validation_fraction).round() as usize).clamp(1, data.len() - 1)
    } else {
        0
    };
    let (val, train) = order.split_at(n_val);
    let train = dedupe(train);
    let val = if val.is_empty() { train.clone() } else { dedupe(val) };

    let mut report = MleReport::default();
    let mut best = policy.params().to_vec();
    let mut best_val = weighted_nll(policy, &val);
    let mut since_best = 0;
    report.best_val_nll = best_val;

    for epoch in 0..config.max_epochs {
        let mut grad = vec![0.0; policy.num_params()];
        let train_nll = accumulate_mle_gradient(policy, &train, 1.0, &mut grad);
        let val_nll = weighted_nll(policy, &val);
        report.train_nll.push(train_nll);
        report.val_nll.push(val_nll);
        if val_nll < best_val {
            best_val = val_nll;
            best.copy_from_slice(policy.params());
            report.best_epoch = epoch;
            since_best = 0;
        } else if epoch > 0 {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
        for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
            *p += config.lr * g;
        }
    }

    let final_val = weighted_nll(policy, &val);
    if final_val < best_val {
        best_val = final_val;
        best.copy_from_slice(policy.params());
        report.best_epoch = report.train_nll.len();
    }
    report.train_nll.push(weighted_nll(policy, &train));
    report.val_nll.push(final_val);
    policy.params_mut().copy_from_slice(&best);
    report.best_val_nll = best_val;
    log::debug!(
        "mle: {} epochs, best epoch {}, best validation nll {:.5}",
        report.train_nll.len() - 1,
        report.best_epoch,
        best_val
    );
    Ok(report)
}
