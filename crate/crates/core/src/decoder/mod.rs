//! Retrospect-then-compare decoding.
//!
//! Every step scores `k + 2` visuals under one shared textual prefix: the
//! test visual (base scores), its diffused copy (txt scores) and `k`
//! retrieved references. The head vocabulary comes from the base scores,
//! adaptive coefficients from `base - txt` on the head, and the contrasted
//! scores go to token selection. A JSD gate can fall back to the base scores
//! on steps where the visual input barely matters.

mod analysis;
mod sampling;

use serde::{Deserialize, Serialize};

pub use analysis::{
    analyze, analyze_rows, read_breakdown_csv, write_breakdown_csv, BreakdownRow, Report,
};
pub use sampling::{select_token, Strategy, DEFAULT_TOP_K, DEFAULT_TOP_P};

use crate::error::{Error, Result};
use crate::logits::{self, AdaptiveCoeffs, LogitsVector};
use crate::scorer::{ScoreContext, Scorer, Visual, DEFAULT_EOS};
use crate::TokenId;

/// Decoding hyper-parameters. Defaults are the captioning preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub alpha_tau: f64,
    pub beta_d: f64,
    pub beta_nn: f64,
    /// Number of retrieved references.
    pub k: usize,
    /// Head vocabulary size.
    pub m: usize,
    /// Forward diffusion step used to build the diffused visual.
    pub diffusion_step: usize,
    /// Skip the contrast on steps whose base/txt JSD falls below this.
    pub jsd_threshold: Option<f64>,
    pub strategy: Strategy,
    pub max_tokens: usize,
    pub seed: u64,
    /// Always-selectable end token; `None` decodes to `max_tokens`.
    pub eos_token: Option<String>,
    /// Select from the base scores only (head-masked), for A/B runs.
    pub baseline: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self::captioning()
    }
}

impl DecodeConfig {
    pub fn captioning() -> Self {
        Self {
            alpha_tau: 1.0,
            beta_d: 0.1,
            beta_nn: 0.1,
            k: 4,
            m: 50,
            diffusion_step: 900,
            jsd_threshold: None,
            strategy: Strategy::Greedy,
            max_tokens: 64,
            seed: 0,
            eos_token: Some(DEFAULT_EOS.to_string()),
            baseline: false,
        }
    }

    /// Binary VQA preset: two references, head of two candidates.
    pub fn vqa() -> Self {
        Self {
            k: 2,
            m: 2,
            ..Self::captioning()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        for (name, v) in [
            ("alpha_tau", self.alpha_tau),
            ("beta_d", self.beta_d),
            ("beta_nn", self.beta_nn),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if let Some(t) = self.jsd_threshold {
            if t.is_nan() || t < 0.0 {
                return bad(format!("jsd_threshold must be >= 0, got {t}"));
            }
        }
        self.strategy.validate()
    }
}

/// The visuals scored at every step. References are fixed for the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visuals {
    pub test: Visual,
    pub diffused: Visual,
    pub references: Vec<Visual>,
}

/// Scores of one head candidate at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScores {
    pub token: TokenId,
    pub text: String,
    pub base: f64,
    pub txt: f64,
    pub img: f64,
    pub knn: Vec<f64>,
    pub knn_mean: f64,
    pub l_delta: f64,
    pub combined: f64,
}

/// Everything computed at one step, restricted to the head (plus a
/// re-admitted end token).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepBreakdown {
    pub step: usize,
    pub candidates: Vec<CandidateScores>,
    pub p_star: f64,
    pub alpha_d: f64,
    pub alpha_nn: f64,
    pub jsd: f64,
    pub gated: bool,
    pub chosen: TokenId,
}

impl StepBreakdown {
    pub fn candidate(&self, text: &str) -> Option<&CandidateScores> {
        self.candidates.iter().find(|c| c.text == text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutput {
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub breakdowns: Vec<StepBreakdown>,
    pub config: DecodeConfig,
}

fn resolve_eos<S: Scorer + ?Sized>(scorer: &S, cfg: &DecodeConfig) -> Result<Option<TokenId>> {
    cfg.eos_token
        .as_deref()
        .map(|t| {
            scorer.vocabulary().id(t).ok_or_else(|| {
                Error::InvalidConfig(format!("eos token `{t}` is not in the vocabulary"))
            })
        })
        .transpose()
}

/// Runs one decoding step over `context` (prompt plus generated tokens).
pub fn decode_step<S: Scorer + ?Sized>(
    scorer: &S,
    visuals: &Visuals,
    context: &[TokenId],
    step: usize,
    cfg: &DecodeConfig,
) -> Result<(TokenId, StepBreakdown)> {
    cfg.validate()?;
    if visuals.references.is_empty() {
        return Err(Error::NoReferences);
    }
    let eos = resolve_eos(scorer, cfg)?;
    let vocab = scorer.vocabulary();
    let ctx = ScoreContext {
        tokens: context,
        step,
    };
    let at_step = |e: Error| Error::Scorer {
        step,
        source: Box::new(e),
    };
    let score = |v: &Visual| -> Result<LogitsVector> {
        let out = scorer.score(v, ctx).map_err(at_step)?;
        if out.len() != vocab.len() {
            return Err(at_step(Error::LengthMismatch {
                expected: vocab.len(),
                found: out.len(),
            }));
        }
        Ok(out)
    };

    // Fixed order: test, diffused, references.
    let base = score(&visuals.test)?;
    let txt = score(&visuals.diffused)?;
    let knn = visuals
        .references
        .iter()
        .map(score)
        .collect::<Result<Vec<_>>>()?;

    let head = logits::head_vocab(&base, cfg.m)?;
    let delta = logits::l_delta(&base, &txt, &head)?;
    let p_star = logits::peak_probability(&delta)?;
    let coeffs = AdaptiveCoeffs::from_peak(cfg.alpha_tau, cfg.beta_d, cfg.beta_nn, p_star);
    let jsd = logits::jsd(&base, &txt, &head)?;
    let gated = cfg.jsd_threshold.is_some_and(|t| jsd < t);

    let combined = if cfg.baseline || gated {
        head.mask(&base)
    } else {
        logits::contrast(&base, &knn, &txt, &coeffs, &head)?
    };
    let mut combined = combined.into_vec();
    let mut rows: Vec<usize> = head.indices().to_vec();
    if let Some(eos) = eos.map(|e| e as usize) {
        if !head.contains(eos) {
            combined[eos] = base.as_slice()[eos];
            rows.push(eos);
        }
    }
    let combined = LogitsVector::new(combined)?;
    let chosen = select_token(&combined, &cfg.strategy, cfg.seed, step)?;

    let k = knn.len() as f64;
    let candidates = rows
        .iter()
        .map(|&i| {
            let b = base.as_slice()[i];
            let t = txt.as_slice()[i];
            let cols: Vec<f64> = knn.iter().map(|r| r.as_slice()[i]).collect();
            let knn_mean = cols.iter().sum::<f64>() / k;
            CandidateScores {
                token: i as TokenId,
                text: vocab.token(i as TokenId).unwrap_or_default().to_string(),
                base: b,
                txt: t,
                img: b - t,
                knn: cols,
                knn_mean,
                l_delta: b - t,
                combined: combined.as_slice()[i],
            }
        })
        .collect();

    Ok((
        chosen,
        StepBreakdown {
            step,
            candidates,
            p_star,
            alpha_d: coeffs.alpha_d,
            alpha_nn: coeffs.alpha_nn,
            jsd,
            gated,
            chosen,
        },
    ))
}

/// Decodes up to `cfg.max_tokens` tokens after `prompt`, stopping after the
/// end token. All `k + 2` branches share the growing context.
pub fn decode_sequence<S: Scorer + ?Sized>(
    scorer: &S,
    visuals: &Visuals,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<DecodeOutput> {
    cfg.validate()?;
    if visuals.references.len() != cfg.k {
        return Err(Error::InvalidConfig(format!(
            "config expects k = {} references, got {}",
            cfg.k,
            visuals.references.len()
        )));
    }
    let vocab = scorer.vocabulary();
    if let Some(&bad) = prompt.iter().find(|&&t| t as usize >= vocab.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad as usize,
            len: vocab.len(),
        });
    }
    let eos = resolve_eos(scorer, cfg)?;

    let mut context = prompt.to_vec();
    let mut tokens = Vec::new();
    let mut breakdowns = Vec::new();
    for step in 0..cfg.max_tokens {
        let (token, breakdown) = decode_step(scorer, visuals, &context, step, cfg)?;
        context.push(token);
        tokens.push(token);
        breakdowns.push(breakdown);
        if Some(token) == eos {
            break;
        }
    }
    Ok(DecodeOutput {
        text: vocab.render(&tokens, eos),
        tokens,
        breakdowns,
        config: cfg.clone(),
    })
}
