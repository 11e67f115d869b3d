//! Conditional scorers standing in for the multimodal model.
//!
//! A scorer maps `(visual, textual context)` to one [`LogitsVector`] over a
//! fixed vocabulary. The decoder varies only the visual between the `k + 2`
//! calls of a step, so the context is always identical across them.
//!
//! Two implementations ship: [`ToyScorer`], an affine function of the visual
//! vector and a decayed bag of context tokens, and [`LogitTrace`], which
//! replays scores recorded from an external model.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::LogitsVector;
use crate::{rng, TokenId};

pub const DEFAULT_EOS: &str = "</s>";

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if lookup.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidTrace(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, lookup })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.lookup.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Splits on whitespace and maps each piece to its id.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|t| self.id(t).ok_or_else(|| Error::UnknownToken(t.to_string())))
            .collect()
    }

    /// Joins tokens; a leading `_` or `▁` marks a word boundary.
    pub fn render(&self, ids: &[TokenId], skip: Option<TokenId>) -> String {
        let mut out = String::new();
        for &id in ids {
            if Some(id) == skip {
                continue;
            }
            let Some(tok) = self.token(id) else { continue };
            match tok.strip_prefix('_').or_else(|| tok.strip_prefix('▁')) {
                Some(word) => {
                    out.push(' ');
                    out.push_str(word);
                }
                None => out.push_str(tok),
            }
        }
        out.trim_start().to_string()
    }
}

/// What a scorer is conditioned on besides the text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visual {
    /// A feature vector (toy scorer).
    Embedding(Vec<f64>),
    /// A recorded visual id (trace scorer).
    Trace(String),
}

impl Visual {
    pub fn label(&self) -> String {
        match self {
            Visual::Embedding(v) => format!("embedding[{}]", v.len()),
            Visual::Trace(id) => id.clone(),
        }
    }
}

/// Textual prefix at one step: prompt plus generated tokens, and the index of
/// the token being generated.
#[derive(Debug, Clone, Copy)]
pub struct ScoreContext<'a> {
    pub tokens: &'a [TokenId],
    pub step: usize,
}

/// Deterministic, stateless conditional scorer.
pub trait Scorer: Sync {
    fn vocabulary(&self) -> &Vocabulary;

    fn score(&self, visual: &Visual, context: ScoreContext<'_>) -> Result<LogitsVector>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn score(&self, visual: &Visual, context: ScoreContext<'_>) -> Result<LogitsVector> {
        (**self).score(visual, context)
    }
}

pub const DEFAULT_DECAY: f64 = 0.9;

/// Parameters of the affine toy scorer:
/// `logits = W_v * visual + W_c * bag(context) + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyScorerParams {
    pub dim: usize,
    /// `V x dim`, row-major.
    pub visual_weights: Vec<f64>,
    /// `V x V`, row-major.
    pub context_weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Recency decay of the context bag; the newest token has weight 1.
    pub decay: f64,
    pub seed: u64,
}

impl ToyScorerParams {
    /// Gaussian initialization from `seed`.
    pub fn seeded(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut draw = |n: usize, scale: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect::<Vec<f64>>()
        };
        let visual_weights = draw(vocab_size * dim, 4.0 / (dim.max(1) as f64).sqrt());
        let context_weights = draw(vocab_size * vocab_size, 0.5);
        let bias = draw(vocab_size, 1.0);
        Self {
            dim,
            visual_weights,
            context_weights,
            bias,
            decay: DEFAULT_DECAY,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyScorer {
    vocab: Vocabulary,
    params: ToyScorerParams,
}

impl ToyScorer {
    pub fn new(vocab: Vocabulary, dim: usize, seed: u64) -> Self {
        let params = ToyScorerParams::seeded(vocab.len(), dim, seed);
        Self { vocab, params }
    }

    pub fn with_params(vocab: Vocabulary, params: ToyScorerParams) -> Result<Self> {
        let v = vocab.len();
        if params.visual_weights.len() != v * params.dim
            || params.context_weights.len() != v * v
            || params.bias.len() != v
        {
            return Err(Error::InvalidConfig("toy scorer parameter shapes".into()));
        }
        Ok(Self { vocab, params })
    }

    pub fn params(&self) -> &ToyScorerParams {
        &self.params
    }
}

/// Affine toy scores for `visual` under `context`.
pub fn toy_score(
    params: &ToyScorerParams,
    visual: &[f64],
    context: &[TokenId],
) -> Result<LogitsVector> {
    if visual.len() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            found: visual.len(),
        });
    }
    let v = params.bias.len();
    let mut bag = vec![0.0; v];
    let n = context.len();
    for (pos, &tok) in context.iter().enumerate() {
        let slot = bag.get_mut(tok as usize).ok_or(Error::IndexOutOfRange {
            index: tok as usize,
            len: v,
        })?;
        *slot += params.decay.powi((n - 1 - pos) as i32);
    }
    // Ascending-index sum over nonzero slots: same value as the dense product.
    let active: Vec<(usize, f64)> = bag
        .iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(j, &x)| (j, x))
        .collect();
    let out = (0..v)
        .map(|i| {
            let wv = &params.visual_weights[i * params.dim..(i + 1) * params.dim];
            let wc = &params.context_weights[i * v..(i + 1) * v];
            let visual_term: f64 = wv.iter().zip(visual).map(|(w, x)| w * x).sum();
            let context_term: f64 = active.iter().map(|&(j, x)| wc[j] * x).sum();
            visual_term + context_term + params.bias[i]
        })
        .collect();
    LogitsVector::new(out)
}

impl Scorer for ToyScorer {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score(&self, visual: &Visual, context: ScoreContext<'_>) -> Result<LogitsVector> {
        match visual {
            Visual::Embedding(x) => toy_score(&self.params, x, context.tokens),
            Visual::Trace(id) => Err(Error::InvalidConfig(format!(
                "toy scorer needs an embedding, got trace id `{id}`"
            ))),
        }
    }
}

/// How unnamed candidates are scored in a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FillRule {
    /// `min(named scores at this step) - offset`.
    MinMinus {
        offset: f64,
    },
    Constant {
        value: f64,
    },
}

impl Default for FillRule {
    fn default() -> Self {
        FillRule::MinMinus { offset: 10.0 }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceHeader {
    vocabulary: Vec<String>,
    #[serde(default)]
    fill: FillRule,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceLine {
    visual_id: String,
    step: usize,
    scores: BTreeMap<String, f64>,
}

/// Recorded scores keyed by `(visual_id, step)`.
///
/// File format (JSON Lines): a header object
/// `{"vocabulary": [...], "fill": {"rule": "min_minus", "offset": 10.0}}`
/// followed by one `{"visual_id", "step", "scores": {token: score}}` object
/// per entry.
#[derive(Debug, Clone)]
pub struct LogitTrace {
    vocab: Vocabulary,
    fill: FillRule,
    named: BTreeMap<(String, usize), BTreeMap<String, f64>>,
    dense: HashMap<(String, usize), LogitsVector>,
}

impl LogitTrace {
    pub fn new(
        vocabulary: Vec<String>,
        fill: FillRule,
        entries: impl IntoIterator<Item = (String, usize, BTreeMap<String, f64>)>,
    ) -> Result<Self> {
        let vocab = Vocabulary::new(vocabulary)?;
        let mut named = BTreeMap::new();
        for (visual_id, step, scores) in entries {
            if named.insert((visual_id.clone(), step), scores).is_some() {
                return Err(Error::InvalidTrace(format!(
                    "duplicate entry for `{visual_id}` at step {step}"
                )));
            }
        }
        let mut dense = HashMap::with_capacity(named.len());
        for ((visual_id, step), scores) in &named {
            let row = densify(&vocab, fill, scores)
                .map_err(|e| Error::InvalidTrace(format!("`{visual_id}` step {step}: {e}")))?;
            dense.insert((visual_id.clone(), *step), row);
        }
        let trace = Self {
            vocab,
            fill,
            named,
            dense,
        };
        trace.check_contiguous()?;
        Ok(trace)
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::InvalidTrace("missing header line".into()))?;
        let header: TraceHeader = serde_json::from_str(&first?)
            .map_err(|e| Error::InvalidTrace(format!("header: {e}")))?;
        let mut entries = Vec::new();
        for (n, line) in lines {
            let line: TraceLine = serde_json::from_str(&line?)
                .map_err(|e| Error::InvalidTrace(format!("line {}: {e}", n + 1)))?;
            entries.push((line.visual_id, line.step, line.scores));
        }
        Self::new(header.vocabulary, header.fill, entries)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = TraceHeader {
            vocabulary: self.vocab.tokens().to_vec(),
            fill: self.fill,
        };
        let json = |e: serde_json::Error| Error::format("trace", e);
        serde_json::to_writer(&mut w, &header).map_err(json)?;
        w.write_all(b"\n")?;
        for ((visual_id, step), scores) in &self.named {
            let line = TraceLine {
                visual_id: visual_id.clone(),
                step: *step,
                scores: scores.clone(),
            };
            serde_json::to_writer(&mut w, &line).map_err(json)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn fill(&self) -> FillRule {
        self.fill
    }

    /// Highest recorded step for `visual_id`.
    pub fn max_step(&self, visual_id: &str) -> Option<usize> {
        self.named
            .keys()
            .filter(|(id, _)| id == visual_id)
            .map(|(_, s)| *s)
            .max()
    }

    pub fn visual_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.named.keys().map(|(id, _)| id.as_str()).collect();
        ids.dedup();
        ids
    }

    fn check_contiguous(&self) -> Result<()> {
        for id in self.visual_ids() {
            let max = self.max_step(id).unwrap_or(0);
            if let Some(gap) = (0..=max).find(|s| !self.named.contains_key(&(id.to_string(), *s))) {
                return Err(Error::InvalidTrace(format!("`{id}` has no step {gap}")));
            }
        }
        Ok(())
    }
}

fn densify(
    vocab: &Vocabulary,
    fill: FillRule,
    scores: &BTreeMap<String, f64>,
) -> Result<LogitsVector> {
    if scores.is_empty() {
        return Err(Error::InvalidTrace("no named scores".into()));
    }
    if scores.values().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trace scores"));
    }
    let min = scores.values().copied().fold(f64::INFINITY, f64::min);
    let fill_value = match fill {
        FillRule::MinMinus { offset } if offset > 0.0 => min - offset,
        FillRule::MinMinus { offset } => {
            return Err(Error::InvalidTrace(format!(
                "fill offset {offset} must be positive"
            )))
        }
        FillRule::Constant { value } if value < min => value,
        FillRule::Constant { value } => {
            return Err(Error::InvalidTrace(format!(
                "fill value {value} is not below the lowest named score {min}"
            )))
        }
    };
    let mut out = vec![fill_value; vocab.len()];
    for (tok, &score) in scores {
        let id = vocab
            .id(tok)
            .ok_or_else(|| Error::UnknownToken(tok.clone()))?;
        out[id as usize] = score;
    }
    LogitsVector::new(out)
}

/// Recorded scores for `(visual_id, step)`, unnamed candidates at the fill value.
pub fn trace_score(trace: &LogitTrace, visual_id: &str, step: usize) -> Result<LogitsVector> {
    trace
        .dense
        .get(&(visual_id.to_string(), step))
        .cloned()
        .ok_or_else(|| Error::MissingTraceKey {
            visual_id: visual_id.to_string(),
            step,
        })
}

impl Scorer for LogitTrace {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score(&self, visual: &Visual, context: ScoreContext<'_>) -> Result<LogitsVector> {
        match visual {
            Visual::Trace(id) => trace_score(self, id, context.step),
            Visual::Embedding(_) => Err(Error::InvalidConfig(
                "trace scorer needs a visual id, got an embedding".into(),
            )),
        }
    }
}
