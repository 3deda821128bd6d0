use crate::error::{invalid, Result};
use crate::seqmodel::{log_softmax, ConditioningInput, Policy, Token, TokenSequence, Vocab};
use rand::Rng;
use std::fmt;

/// Generation regimes used by the probes and evaluation sweeps: `T = 0`
/// (greedy), a finite temperature, and `T = inf` (uniform over the
/// vocabulary at every free step).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decoding {
    Greedy,
    Temperature(f64),
    Uniform,
}

impl fmt::Display for Decoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decoding::Greedy => write!(f, "T=0"),
            Decoding::Temperature(t) => write!(f, "T={t}"),
            Decoding::Uniform => write!(f, "T=inf"),
        }
    }
}

impl std::str::FromStr for Decoding {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = s.trim().trim_start_matches("T=").trim_start_matches("t=");
        match v {
            "0" | "greedy" => Ok(Decoding::Greedy),
            "inf" | "uniform" => Ok(Decoding::Uniform),
            _ => match v.parse::<f64>() {
                Ok(t) if t > 0.0 && t.is_finite() => Ok(Decoding::Temperature(t)),
                _ => invalid(format!("unknown decoding `{s}`")),
            },
        }
    }
}

pub fn decode<P: Policy + ?Sized, R: Rng + ?Sized>(
    policy: &P,
    x: &ConditioningInput,
    decoding: Decoding,
    rng: &mut R,
) -> Result<TokenSequence> {
    match decoding {
        Decoding::Greedy => greedy_decode(policy, x, 1),
        Decoding::Temperature(t) => Ok(super::sample(policy, x, &super::SamplerSpec::temperature(t), rng)?.y),
        Decoding::Uniform => {
            policy.check_input(x)?;
            let v = policy.vocab().size() as Token;
            let mut tokens = Vec::new();
            loop {
                if tokens.len() + 1 >= policy.max_len() {
                    tokens.push(Vocab::EOS);
                    break;
                }
                let t = rng.random_range(0..v);
                tokens.push(t);
                if t == Vocab::EOS {
                    break;
                }
            }
            Ok(TokenSequence::from_vec_unchecked(tokens))
        }
    }
}

struct Hypothesis<C> {
    score: f64,
    tokens: Vec<Token>,
    cursor: C,
}

/// Beam search on `log pi_theta`. With `beam = 1` this is the greedy
/// argmax chain (ties go to the lowest token id); otherwise the best
/// completed hypothesis found by a width-`beam` search.
pub fn greedy_decode<P: Policy + ?Sized>(policy: &P, x: &ConditioningInput, beam: usize) -> Result<TokenSequence> {
    if beam == 0 {
        return invalid("beam width must be >= 1");
    }
    policy.check_input(x)?;
    let max_len = policy.max_len();
    let mut live = vec![Hypothesis { score: 0.0, tokens: Vec::new(), cursor: policy.cursor(x) }];
    let mut done: Vec<(f64, Vec<Token>)> = Vec::new();

    while !live.is_empty() {
        // (score, parent, token)
        let mut candidates: Vec<(f64, usize, Token)> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            if h.tokens.len() + 1 >= max_len {
                candidates.push((h.score, i, Vocab::EOS));
                continue;
            }
            let ls = log_softmax(&policy.cursor_logits(&h.cursor), 1.0);
            candidates.extend(ls.iter().enumerate().map(|(t, l)| (h.score + l, i, t as Token)));
        }
        // stable: ties keep parent order, then token id order
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        candidates.truncate(beam);

        let mut next = Vec::new();
        for (score, parent, tok) in candidates {
            let h = &live[parent];
            let mut tokens = h.tokens.clone();
            tokens.push(tok);
            if tok == Vocab::EOS {
                done.push((score, tokens));
            } else {
                let mut cursor = h.cursor.clone();
                policy.advance(&mut cursor, tok);
                next.push(Hypothesis { score, tokens, cursor });
            }
        }
        live = next;
        // log-probabilities only decrease, so no live beam can overtake
        let best_done = done.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
        if live.iter().all(|h| h.score <= best_done) {
            break;
        }
    }
    let best =
        done.into_iter().reduce(|a, b| if b.0 > a.0 { b } else { a }).expect("beam search always completes at max_len");
    Ok(TokenSequence::from_vec_unchecked(best.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::{TabularPolicy, Vocab};

    #[test]
    fn greedy_follows_argmax_with_lowest_id_ties() {
        let v = Vocab::new(3).unwrap();
        let x = ConditioningInput::empty();
        let mut p = TabularPolicy::zeros(v, 4, 0).unwrap();
        // root: tokens 1 and 2 tie above EOS -> 1
        let root = p.row_offset(&x, &[]).unwrap();
        p.params_mut()[root..root + 3].copy_from_slice(&[0.0, 1.0, 1.0]);
        let after1 = p.row_offset(&x, &[1]).unwrap();
        p.params_mut()[after1..after1 + 3].copy_from_slice(&[3.0, 0.0, 0.0]);
        let y = greedy_decode(&p, &x, 1).unwrap();
        assert_eq!(y.tokens(), &[1, 0]);
    }

    #[test]
    fn uniform_policy_greedy_is_immediate_eos() {
        let v = Vocab::new(4).unwrap();
        let p = TabularPolicy::zeros(v, 4, 0).unwrap();
        assert_eq!(greedy_decode(&p, &ConditioningInput::empty(), 1).unwrap().tokens(), &[0]);
        assert!(greedy_decode(&p, &ConditioningInput::empty(), 0).is_err());
    }

    #[test]
    fn decoding_names_parse() {
        assert_eq!("T=0".parse::<Decoding>().unwrap(), Decoding::Greedy);
        assert_eq!("inf".parse::<Decoding>().unwrap(), Decoding::Uniform);
        assert_eq!("T=0.5".parse::<Decoding>().unwrap(), Decoding::Temperature(0.5));
        assert!("T=-1".parse::<Decoding>().is_err());
        assert_eq!(Decoding::Uniform.to_string(), "T=inf");
    }
}
