//! Per-step score arithmetic.
//!
//! All scores are raw confidence scores (pre-softmax logits) in `f64`.
//! Candidates outside the head vocabulary are carried as `f64::NEG_INFINITY`,
//! never NaN, so that selection can skip them without special casing.

use std::cmp::Ordering;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense per-candidate confidence scores for one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitsVector(Vec<f64>);

impl LogitsVector {
    /// Wraps raw scores. Entries must be finite or `-inf` (a masked candidate).
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.0.get(index).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied()
    }

    /// Index of the largest finite entry; ties go to the lower index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.0.iter().enumerate() {
            if v == f64::NEG_INFINITY {
                continue;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Adds `c` to every entry. Masked entries stay masked.
    pub fn shifted(&self, c: f64) -> Self {
        Self(self.0.iter().map(|v| v + c).collect())
    }

    fn check_len(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: self.len(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for LogitsVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<LogitsVector> for Vec<f64> {
    fn from(v: LogitsVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for LogitsVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Softmax of `scores` restricted to `subset`, in subset order.
///
/// Uses max-subtraction, so the result is invariant under uniform shifts.
/// Masked (`-inf`) members get probability zero.
pub fn softmax_over(scores: &[f64], subset: &[usize]) -> Result<Vec<f64>> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let mut picked = Vec::with_capacity(subset.len());
    for &i in subset {
        let v = *scores.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: scores.len(),
        })?;
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::NonFinite("softmax input"));
        }
        picked.push(v);
    }
    softmax(&picked)
}

pub(crate) fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptySubset);
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// The `m` top-ranked candidates by base score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadVocab {
    indices: Vec<usize>,
    m: usize,
    cutoff: f64,
}

impl HeadVocab {
    /// Members ordered by descending base score, ties by ascending index.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Base score of the lowest-ranked member.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }

    /// `scores` with every candidate outside the head set to `-inf`.
    pub fn mask(&self, scores: &LogitsVector) -> LogitsVector {
        let mut out = vec![f64::NEG_INFINITY; scores.len()];
        for &i in &self.indices {
            out[i] = scores.0[i];
        }
        LogitsVector(out)
    }

    fn gather(&self, scores: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| scores[i]).collect()
    }
}

/// Ranking order for the head: higher score first, then lower index.
fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Selects the `min(m, V)` highest-scoring candidates of `base`.
pub fn head_vocab(base: &LogitsVector, m: usize) -> Result<HeadVocab> {
    if m == 0 {
        return Err(Error::InvalidConfig(
            "head size m must be at least 1".into(),
        ));
    }
    if base.is_empty() {
        return Err(Error::EmptyHead);
    }
    let scores = base.as_slice();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let take = m.min(order.len());
    if take < order.len() {
        order.select_nth_unstable_by(take - 1, |&a, &b| rank_order(scores, a, b));
        order.truncate(take);
    }
    order.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    let cutoff = scores[order[take - 1]];
    Ok(HeadVocab {
        indices: order,
        m,
        cutoff,
    })
}

/// Visual contribution: `base - txt`, elementwise.
pub fn img_scores(base: &LogitsVector, txt: &LogitsVector) -> Result<LogitsVector> {
    txt.check_len(base.len())?;
    let out: Vec<f64> = base.iter().zip(txt.iter()).map(|(b, t)| b - t).collect();
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("img scores"));
    }
    Ok(LogitsVector(out))
}

/// Per-step scaling of the three terms of the contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveCoeffs {
    pub alpha_tau: f64,
    pub alpha_d: f64,
    pub alpha_nn: f64,
}

impl AdaptiveCoeffs {
    /// Coefficients from the peak probability `p_star` of `softmax(l_delta)`.
    pub fn from_peak(alpha_tau: f64, beta_d: f64, beta_nn: f64, p_star: f64) -> Self {
        Self {
            alpha_tau,
            alpha_d: beta_d * p_star.exp(),
            alpha_nn: beta_nn * (1.0 - p_star).exp(),
        }
    }
}

/// `base - diffused` over the head, in head order.
pub fn l_delta(base: &LogitsVector, diffused: &LogitsVector, head: &HeadVocab) -> Result<Vec<f64>> {
    if head.is_empty() {
        return Err(Error::EmptyHead);
    }
    diffused.check_len(base.len())?;
    let out: Vec<f64> = head
        .indices
        .iter()
        .map(|&i| base.0[i] - diffused.0[i])
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("l_delta"));
    }
    Ok(out)
}

/// Largest probability of `softmax(l_delta)`; lies in `[1/m, 1]`.
pub fn peak_probability(l_delta: &[f64]) -> Result<f64> {
    Ok(softmax(l_delta)?.into_iter().fold(0.0, f64::max))
}

/// Adaptive `alpha_d` / `alpha_nn` for one step. `alpha_tau` is passed through.
///
/// A peaked `l_delta` (the visual branch clearly favours one candidate) raises
/// `alpha_d` toward `beta_d * e`; a flat one raises `alpha_nn` toward
/// `beta_nn * e^(1 - 1/m)`.
pub fn adaptive_coefficients(
    base: &LogitsVector,
    diffused: &LogitsVector,
    head: &HeadVocab,
    alpha_tau: f64,
    beta_d: f64,
    beta_nn: f64,
) -> Result<AdaptiveCoeffs> {
    let delta = l_delta(base, diffused, head)?;
    let p_star = peak_probability(&delta)?;
    Ok(AdaptiveCoeffs::from_peak(
        alpha_tau, beta_d, beta_nn, p_star,
    ))
}

/// Contrasts the test-visual scores against the references on the head.
///
/// `out_i = (a_tau + a_d + a_nn) * base_i - a_nn/k * sum_j knn_j,i - a_d * diffused_i`
/// for `i` in the head, `-inf` elsewhere. Reference scores outside the head
/// are never read.
pub fn contrast(
    base: &LogitsVector,
    knn: &[LogitsVector],
    diffused: &LogitsVector,
    coeffs: &AdaptiveCoeffs,
    head: &HeadVocab,
) -> Result<LogitsVector> {
    if knn.is_empty() {
        return Err(Error::NoReferences);
    }
    if head.is_empty() {
        return Err(Error::EmptyHead);
    }
    let v = base.len();
    diffused.check_len(v)?;
    for r in knn {
        r.check_len(v)?;
    }
    let k = knn.len() as f64;
    let AdaptiveCoeffs {
        alpha_tau,
        alpha_d,
        alpha_nn,
    } = *coeffs;
    let base_weight = alpha_tau + alpha_d + alpha_nn;
    let mut out = vec![f64::NEG_INFINITY; v];
    for &i in &head.indices {
        let knn_sum: f64 = knn.iter().map(|r| r.0[i]).sum();
        out[i] = base_weight * base.0[i] - alpha_nn / k * knn_sum - alpha_d * diffused.0[i];
    }
    if out.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::NonFinite("contrast"));
    }
    Ok(LogitsVector(out))
}

/// Jensen-Shannon divergence (natural log) between the head-restricted
/// softmax distributions of two score vectors. Result lies in `[0, ln 2]`.
pub fn jsd(p_logits: &LogitsVector, q_logits: &LogitsVector, head: &HeadVocab) -> Result<f64> {
    if head.is_empty() {
        return Err(Error::EmptyHead);
    }
    q_logits.check_len(p_logits.len())?;
    let p = softmax(&head.gather(&p_logits.0))?;
    let q = softmax(&head.gather(&q_logits.0))?;
    jsd_probs(&p, &q)
}

/// Jensen-Shannon divergence between two probability vectors.
pub fn jsd_probs(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::EmptySubset);
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) * 0.5).collect();
    let d = 0.5 * (kl(p, &m) + kl(q, &m));
    Ok(d.clamp(0.0, LN_2))
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}
