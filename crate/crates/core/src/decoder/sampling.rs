use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::{softmax, LogitsVector};
use crate::{rng, TokenId};

pub const DEFAULT_TOP_K: usize = 50;
pub const DEFAULT_TOP_P: f64 = 0.9;

/// Token selection rule applied to the combined scores.
///
/// Written in config files as `greedy`, `sample`, `top_k[:K]` or
/// `nucleus[:P]` (`top_p` is accepted as an alias).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    #[default]
    Greedy,
    Sample,
    TopK(usize),
    Nucleus(f64),
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::TopK(0) => Err(Error::InvalidConfig("top_k must be at least 1".into())),
            Strategy::Nucleus(p) if !(p > 0.0 && p <= 1.0) => Err(Error::InvalidConfig(format!(
                "nucleus p must be in (0, 1], got {p}"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Greedy => f.write_str("greedy"),
            Strategy::Sample => f.write_str("sample"),
            Strategy::TopK(k) => write!(f, "top_k:{k}"),
            Strategy::Nucleus(p) => write!(f, "nucleus:{p}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let bad = |detail: String| Error::InvalidConfig(format!("strategy `{s}`: {detail}"));
        let strategy = match (name.to_ascii_lowercase().as_str(), arg) {
            ("greedy", None) => Strategy::Greedy,
            ("sample", None) => Strategy::Sample,
            ("top_k" | "topk", None) => Strategy::TopK(DEFAULT_TOP_K),
            ("top_k" | "topk", Some(a)) => {
                Strategy::TopK(a.parse().map_err(|e| bad(format!("{e}")))?)
            }
            ("nucleus" | "top_p", None) => Strategy::Nucleus(DEFAULT_TOP_P),
            ("nucleus" | "top_p", Some(a)) => {
                Strategy::Nucleus(a.parse().map_err(|e| bad(format!("{e}")))?)
            }
            _ => {
                return Err(bad(
                    "expected greedy, sample, top_k[:K] or nucleus[:P]".into()
                ))
            }
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> Self {
        s.to_string()
    }
}

/// Picks the next token from `combined`. Masked (`-inf`) entries are never
/// chosen. Random strategies draw one uniform from the `(seed, step)`
/// substream, so a step's choice does not depend on earlier steps' draws.
pub fn select_token(
    combined: &LogitsVector,
    strategy: &Strategy,
    seed: u64,
    step: usize,
) -> Result<TokenId> {
    strategy.validate()?;
    if *strategy == Strategy::Greedy {
        return combined
            .argmax()
            .map(|i| i as TokenId)
            .ok_or(Error::AllMasked);
    }

    let scores = combined.as_slice();
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] != f64::NEG_INFINITY)
        .collect();
    if order.is_empty() {
        return Err(Error::AllMasked);
    }
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    if let Strategy::TopK(k) = *strategy {
        order.truncate(k);
    }
    let ranked: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let mut probs = softmax(&ranked)?;
    if let Strategy::Nucleus(p) = *strategy {
        let mut cum = 0.0;
        let keep = probs
            .iter()
            .position(|q| {
                cum += q;
                cum >= p
            })
            .map_or(probs.len(), |pos| pos + 1);
        probs.truncate(keep);
    }

    let total: f64 = probs.iter().sum();
    let u: f64 = rng::substream(seed, step as u64).random::<f64>() * total;
    let mut cum = 0.0;
    for (slot, q) in probs.iter().enumerate() {
        cum += q;
        if u < cum {
            return Ok(order[slot] as TokenId);
        }
    }
    Ok(order[probs.len() - 1] as TokenId)
}
