use crate::error::{invalid, Result};

/// Log-softmax of `logits / temperature`, max-subtracted.
///
/// Callers guarantee finite logits and `temperature > 0`; see
/// [`tempered_distribution`] for the checked entry point.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logits.iter().map(|z| (z - max) / temperature).collect();
    let lse = scaled.iter().map(|s| s.exp()).sum::<f64>().ln();
    scaled.into_iter().map(|s| s - lse).collect()
}

/// `q_i = exp(z_i / T) / sum_j exp(z_j / T)`.
pub fn tempered_distribution(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return invalid("empty logits");
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return invalid("non-finite logit");
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return invalid(format!("temperature must be finite and > 0, got {temperature}"));
    }
    let mut q: Vec<f64> = log_softmax(logits, temperature).into_iter().map(f64::exp).collect();
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|p| *p /= total);
    Ok(q)
}

/// `log(sum exp(xs))`, returning `-inf` when every term is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn symmetric_logits_are_uniform() {
        let q = tempered_distribution(&[1.0, 1.0, 1.0], 1.0).unwrap();
        for p in q {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn high_temperature_is_uniform() {
        let q = tempered_distribution(&[1.0, 0.0], 1e6).unwrap();
        assert_abs_diff_eq!(q[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(q[1], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn matches_high_precision_evaluation() {
        // logits [2, 0] at T = 2: q0 = e / (e + 1) evaluated with mpmath at 50 digits.
        let q = tempered_distribution(&[2.0, 0.0], 2.0).unwrap();
        assert_abs_diff_eq!(q[0], 0.731_058_578_630_004_9, epsilon = 1e-15);
        assert_abs_diff_eq!(q[1], 0.268_941_421_369_995_1, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(tempered_distribution(&[1.0, f64::NAN], 1.0).is_err());
        assert!(tempered_distribution(&[1.0, f64::INFINITY], 1.0).is_err());
        assert!(tempered_distribution(&[1.0, 0.0], 0.0).is_err());
        assert!(tempered_distribution(&[1.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn small_temperature_does_not_overflow() {
        let q = tempered_distribution(&[700.0, 0.0, -700.0], 0.01).unwrap();
        assert_eq!(q[0], 1.0);
    }

    proptest! {
        #[test]
        fn sums_to_one_and_is_permutation_equivariant(
            logits in prop::collection::vec(-30.0f64..30.0, 2..12),
            t in 0.05f64..20.0,
            rot in 0usize..12,
        ) {
            let q = tempered_distribution(&logits, t).unwrap();
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let k = rot % logits.len();
            let mut rotated = logits.clone();
            rotated.rotate_left(k);
            let qr = tempered_distribution(&rotated, t).unwrap();
            let mut expect = q.clone();
            expect.rotate_left(k);
            for (a, b) in qr.iter().zip(&expect) {
                prop_assert!((a - b).abs() <= 1e-14);
            }
        }

        #[test]
        fn colder_temperature_sharpens_the_argmax(
            logits in prop::collection::vec(-5.0f64..5.0, 2..8),
            t in 0.1f64..5.0,
            factor in 0.1f64..0.95,
        ) {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let winners = logits.iter().filter(|&&z| z == max).count();
            let all_equal = logits.iter().all(|&z| z == max);
            prop_assume!(winners == 1 && !all_equal);
            let i = logits.iter().position(|&z| z == max).unwrap();
            let hot = tempered_distribution(&logits, t).unwrap()[i];
            let cold = tempered_distribution(&logits, t * factor).unwrap()[i];
            prop_assert!(cold > hot || (hot == 1.0 && cold == 1.0));
        }
    }
}
