//! Behaviour-distribution specs and their config-string form.
//!
//! Grammar (whitespace is ignored):
//!
//! ```text
//! spec   := "temperature" "(" (number | "gamma=" number) ")"
//!         | "nucleus" "(" (number | "p=" number) ")"
//!         | "mixture" "(" kv ("," kv)* ")"
//! kv     := ("eps" | "p" | "gamma") "=" number
//! ```
//!
//! `mixture` requires `eps` and `gamma`; `p` defaults to 0.95. Display always
//! prints the keyword form, e.g. `mixture(eps=0.9,p=0.95,gamma=0.2)`, and the
//! printed form parses back to the same spec.

use crate::error::{invalid, Error, Result};
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_NUCLEUS_P: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplerSpec {
    /// Ancestral sampling at temperature `gamma`.
    Temperature { gamma: f64 },
    /// Per-step sampling from the renormalised top-`p` nucleus.
    Nucleus { p: f64 },
    /// Sequence-level mixture: with probability `eps` the whole sequence comes
    /// from the nucleus sampler, otherwise from temperature `gamma`.
    Mixture { eps: f64, p: f64, gamma: f64 },
}

impl SamplerSpec {
    pub fn temperature(gamma: f64) -> Self {
        SamplerSpec::Temperature { gamma }
    }

    pub fn nucleus(p: f64) -> Self {
        SamplerSpec::Nucleus { p }
    }

    pub fn mixture(eps: f64, p: f64, gamma: f64) -> Self {
        SamplerSpec::Mixture { eps, p, gamma }
    }

    /// The on-policy sampler, `pi_theta` itself.
    pub fn on_policy() -> Self {
        SamplerSpec::Temperature { gamma: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let check_gamma = |g: f64| {
            if g > 0.0 && g.is_finite() {
                Ok(())
            } else {
                invalid(format!("temperature must be finite and > 0, got {g}"))
            }
        };
        let check_p = |p: f64| {
            if p > 0.0 && p <= 1.0 {
                Ok(())
            } else {
                invalid(format!("nucleus mass must be in (0, 1], got {p}"))
            }
        };
        match *self {
            SamplerSpec::Temperature { gamma } => check_gamma(gamma),
            SamplerSpec::Nucleus { p } => check_p(p),
            SamplerSpec::Mixture { eps, p, gamma } => {
                if !(0.0..=1.0).contains(&eps) {
                    return invalid(format!("mixture weight must be in [0, 1], got {eps}"));
                }
                check_p(p)?;
                check_gamma(gamma)
            }
        }
    }

    /// True when every sequence with `pi_theta > 0` also has positive
    /// behaviour probability, which the importance-sampled gradient needs.
    pub fn has_full_support(&self) -> bool {
        match *self {
            SamplerSpec::Temperature { .. } => true,
            SamplerSpec::Nucleus { p } => p >= 1.0,
            SamplerSpec::Mixture { eps, p, .. } => eps < 1.0 || p >= 1.0,
        }
    }
}

impl fmt::Display for SamplerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerSpec::Temperature { gamma } => write!(f, "temperature(gamma={gamma:?})"),
            SamplerSpec::Nucleus { p } => write!(f, "nucleus(p={p:?})"),
            SamplerSpec::Mixture { eps, p, gamma } => {
                write!(f, "mixture(eps={eps:?},p={p:?},gamma={gamma:?})")
            }
        }
    }
}

fn parse_number(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("`{s}` is not a number")))
}

impl FromStr for SamplerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let (name, rest) =
            compact.split_once('(').ok_or_else(|| Error::InvalidArgument(format!("malformed sampler spec `{s}`")))?;
        let body = rest.strip_suffix(')').ok_or_else(|| Error::InvalidArgument(format!("missing `)` in `{s}`")))?;
        let mut positional = None;
        let mut named: Vec<(String, f64)> = Vec::new();
        for arg in body.split(',').filter(|a| !a.is_empty()) {
            match arg.split_once('=') {
                Some((k, v)) => {
                    let k = k.to_ascii_lowercase();
                    if named.iter().any(|(n, _)| *n == k) {
                        return invalid(format!("duplicate argument `{k}` in `{s}`"));
                    }
                    named.push((k, parse_number(v)?));
                }
                None if positional.is_none() && named.is_empty() => positional = Some(parse_number(arg)?),
                None => return invalid(format!("unexpected positional argument in `{s}`")),
            }
        }
        let take = |key: &str| named.iter().find(|(k, _)| k == key).map(|(_, v)| *v);
        let only = |allowed: &[&str]| -> Result<()> {
            match named.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
                Some((k, _)) => invalid(format!("unknown argument `{k}` in `{s}`")),
                None => Ok(()),
            }
        };
        let one = |key: &str| -> Result<f64> {
            match (positional, take(key)) {
                (Some(v), None) | (None, Some(v)) => Ok(v),
                (Some(_), Some(_)) => invalid(format!("`{key}` given twice in `{s}`")),
                (None, None) => invalid(format!("missing `{key}` in `{s}`")),
            }
        };
        let spec = match name.to_ascii_lowercase().as_str() {
            "temperature" => {
                only(&["gamma"])?;
                SamplerSpec::Temperature { gamma: one("gamma")? }
            }
            "nucleus" => {
                only(&["p"])?;
                SamplerSpec::Nucleus { p: one("p")? }
            }
            "mixture" => {
                only(&["eps", "p", "gamma"])?;
                if positional.is_some() {
                    return invalid("mixture takes keyword arguments only");
                }
                SamplerSpec::Mixture {
                    eps: take("eps").ok_or_else(|| Error::InvalidArgument("missing `eps`".into()))?,
                    p: take("p").unwrap_or(DEFAULT_NUCLEUS_P),
                    gamma: take("gamma").ok_or_else(|| Error::InvalidArgument("missing `gamma`".into()))?,
                }
            }
            other => return invalid(format!("unknown sampler `{other}`")),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_documented_forms() {
        assert_eq!("temperature(1.0)".parse::<SamplerSpec>().unwrap(), SamplerSpec::temperature(1.0));
        assert_eq!("temperature(gamma=0.3)".parse::<SamplerSpec>().unwrap(), SamplerSpec::temperature(0.3));
        assert_eq!("nucleus(p=0.9)".parse::<SamplerSpec>().unwrap(), SamplerSpec::nucleus(0.9));
        assert_eq!(
            "mixture(eps=0.9,p=0.95,gamma=0.2)".parse::<SamplerSpec>().unwrap(),
            SamplerSpec::mixture(0.9, 0.95, 0.2)
        );
        assert_eq!(
            " mixture( gamma = 0.2, eps=0.9 ) ".parse::<SamplerSpec>().unwrap(),
            SamplerSpec::mixture(0.9, DEFAULT_NUCLEUS_P, 0.2)
        );
    }

    #[test]
    fn rejects_malformed_specs() {
        for bad in [
            "temperature(0)",
            "temperature(-1)",
            "nucleus(1.5)",
            "nucleus(0)",
            "mixture(eps=1.2,gamma=0.2)",
            "mixture(0.9)",
            "mixture(eps=0.9)",
            "topk(5)",
            "temperature(gamma=1,p=2)",
            "temperature(1",
            "temperature(1,2)",
            "nucleus(p=0.5,p=0.6)",
        ] {
            assert!(bad.parse::<SamplerSpec>().is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn display_round_trips(
            kind in 0u8..3,
            eps in 0.0f64..=1.0,
            p in 0.001f64..=1.0,
            gamma in 0.001f64..10.0,
        ) {
            let spec = match kind {
                0 => SamplerSpec::temperature(gamma),
                1 => SamplerSpec::nucleus(p),
                _ => SamplerSpec::mixture(eps, p, gamma),
            };
            prop_assert_eq!(spec.to_string().parse::<SamplerSpec>().unwrap(), spec);
        }
    }
}
