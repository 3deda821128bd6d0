//! Plain-text checkpoints.
//!
//! ```text
//! coldlab-policy 1
//! kind tabular            # or neural
//! vocab_size 5
//! max_len 4
//! input_max_len 0         # tabular only
//! embed_dim 16            # neural only
//! hidden_dim 32           # neural only
//! params 105
//! <one parameter per line, shortest round-trip decimal>
//! ```
//!
//! Identical parameters always produce identical bytes.

use super::{GeneratorPolicy, NeuralConfig, NeuralPolicy, Policy, TabularPolicy, Vocab};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

const POLICY_MAGIC: &str = "coldlab-policy";
const VERSION: u32 = 1;

pub(crate) fn encode(magic: &str, fields: &[(&str, String)], params: &[f64]) -> String {
    let mut out = format!("{magic} {VERSION}\n");
    for (k, v) in fields {
        let _ = writeln!(out, "{k} {v}");
    }
    let _ = writeln!(out, "params {}", params.len());
    for p in params {
        let _ = writeln!(out, "{p:?}");
    }
    out
}

pub(crate) struct Decoded {
    pub fields: BTreeMap<String, String>,
    pub params: Vec<f64>,
}

impl Decoded {
    pub fn get(&self, key: &str) -> Result<&str> {
        self.fields.get(key).map(String::as_str).ok_or_else(|| Error::Format(format!("missing field `{key}`")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.get(key)?.parse().map_err(|_| Error::Format(format!("field `{key}` is not an integer")))
    }
}

pub(crate) fn decode(magic: &str, text: &str) -> Result<Decoded> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty checkpoint".into()))?;
    let expected = format!("{magic} {VERSION}");
    if header.trim() != expected {
        return Err(Error::Format(format!("expected header `{expected}`, found `{header}`")));
    }
    let mut fields = BTreeMap::new();
    let count = loop {
        let line = lines.next().ok_or_else(|| Error::Format("missing params section".into()))?;
        let (k, v) = line.split_once(' ').ok_or_else(|| Error::Format(format!("malformed line `{line}`")))?;
        if k == "params" {
            break v.trim().parse::<usize>().map_err(|_| Error::Format("bad parameter count".into()))?;
        }
        fields.insert(k.to_string(), v.trim().to_string());
    };
    let params: Vec<f64> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number `{l}`"))))
        .collect::<Result<_>>()?;
    if params.len() != count {
        return Err(Error::Format(format!("expected {count} parameters, found {}", params.len())));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Format("non-finite parameter".into()));
    }
    Ok(Decoded { fields, params })
}

impl GeneratorPolicy {
    pub fn to_checkpoint(&self) -> String {
        let mut fields = vec![
            ("kind", self.kind().to_string()),
            ("vocab_size", self.vocab().size().to_string()),
            ("max_len", self.max_len().to_string()),
        ];
        match self {
            GeneratorPolicy::Tabular(p) => {
                fields.push(("input_max_len", p.input_max_len().to_string()));
            }
            GeneratorPolicy::Neural(p) => {
                fields.push(("embed_dim", p.config().embed_dim.to_string()));
                fields.push(("hidden_dim", p.config().hidden_dim.to_string()));
            }
        }
        encode(POLICY_MAGIC, &fields, self.params())
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let d = decode(POLICY_MAGIC, text)?;
        let vocab = Vocab::new(d.usize("vocab_size")?)?;
        let max_len = d.usize("max_len")?;
        match d.get("kind")? {
            "tabular" => {
                Ok(TabularPolicy::from_params(vocab, max_len, d.usize("input_max_len")?, d.params.clone())?.into())
            }
            "neural" => {
                let config = NeuralConfig { embed_dim: d.usize("embed_dim")?, hidden_dim: d.usize("hidden_dim")? };
                Ok(NeuralPolicy::from_params(vocab, max_len, config, d.params.clone())?.into())
            }
            other => Err(Error::Format(format!("unknown policy kind `{other}`"))),
        }
    }
}

pub fn write_policy(policy: &GeneratorPolicy, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, policy.to_checkpoint())?;
    Ok(())
}

pub fn read_policy(path: impl AsRef<Path>) -> Result<GeneratorPolicy> {
    GeneratorPolicy::from_checkpoint(&std::fs::read_to_string(path)?)
}
