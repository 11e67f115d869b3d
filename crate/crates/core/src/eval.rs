//! Binary VQA scoring.
//!
//! A response counts as "yes" or "no" when it contains exactly one of the two
//! strings (case-insensitive substring match, so "noisy" reads as "no").
//! Anything else is `Unknown` and scored as wrong.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
    Unknown,
}

pub fn parse_yes_no(text: &str) -> Answer {
    let lower = text.to_lowercase();
    match (lower.contains("yes"), lower.contains("no")) {
        (true, false) => Answer::Yes,
        (false, true) => Answer::No,
        _ => Answer::Unknown,
    }
}

/// Gold labels are binary; `Unknown` is rejected on input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaSample {
    pub image_id: String,
    pub question: String,
    #[serde(deserialize_with = "gold_label")]
    pub gold: Answer,
    pub prediction: String,
}

fn gold_label<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Answer, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_lowercase().as_str() {
        "yes" => Ok(Answer::Yes),
        "no" => Ok(Answer::No),
        _ => Err(serde::de::Error::custom(Error::InvalidLabel(s))),
    }
}

impl VqaSample {
    pub fn is_correct(&self) -> bool {
        parse_yes_no(&self.prediction) == self.gold
    }
}

pub fn read_samples_jsonl<R: BufRead>(reader: R) -> Result<Vec<VqaSample>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format("vqa sample", format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// Predictions that were neither yes nor no.
    pub unknown: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopeMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub total: usize,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, precision, recall and F1 with "yes" as the positive class.
///
/// An unknown prediction is a miss: a false negative when gold is yes, and
/// neither a true nor a false negative when gold is no. Undefined precision
/// or recall (zero denominator) is reported as 0.
pub fn pope_metrics(samples: &[VqaSample]) -> Result<PopeMetrics> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut c = Confusion::default();
    for s in samples {
        match (s.gold, parse_yes_no(&s.prediction)) {
            (Answer::Yes, Answer::Yes) => c.tp += 1,
            (Answer::No, Answer::Yes) => c.fp += 1,
            (Answer::No, Answer::No) => c.tn += 1,
            (Answer::Yes, pred) => {
                c.fn_ += 1;
                c.unknown += usize::from(pred == Answer::Unknown);
            }
            (_, _) => c.unknown += 1,
        }
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    // Harmonic mean of precision and recall, from counts to avoid double rounding.
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    Ok(PopeMetrics {
        accuracy: ratio(c.tp + c.tn, samples.len()),
        precision,
        recall,
        f1,
        total: samples.len(),
        confusion: c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubtaskScore {
    pub accuracy: f64,
    pub accuracy_plus: f64,
    /// `100 * accuracy + 100 * accuracy_plus`, in `[0, 200]`.
    pub combined: f64,
    pub questions: usize,
    pub correct: usize,
    pub images: usize,
    pub images_both_correct: usize,
}

/// MME-style score: every image must carry exactly two questions.
pub fn mme_score(samples: &[VqaSample]) -> Result<SubtaskScore> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut groups: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for s in samples {
        groups.entry(&s.image_id).or_default().push(s.is_correct());
    }
    if let Some((id, g)) = groups.iter().find(|(_, g)| g.len() != 2) {
        return Err(Error::GroupSize {
            image_id: id.to_string(),
            count: g.len(),
        });
    }
    let correct = samples.iter().filter(|s| s.is_correct()).count();
    let both = groups.values().filter(|g| g.iter().all(|&ok| ok)).count();
    let accuracy = ratio(correct, samples.len());
    let accuracy_plus = ratio(both, groups.len());
    Ok(SubtaskScore {
        accuracy,
        accuracy_plus,
        combined: 100.0 * accuracy + 100.0 * accuracy_plus,
        questions: samples.len(),
        correct,
        images: groups.len(),
        images_both_correct: both,
    })
}

impl PopeMetrics {
    pub fn to_markdown(&self) -> String {
        let c = &self.confusion;
        let mut s = String::new();
        let _ = writeln!(s, "| metric | value |\n|---|---|");
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ] {
            let _ = writeln!(s, "| {name} | {v:.4} |");
        }
        let _ = writeln!(
            s,
            "\nsamples: {} (tp {}, fp {}, fn {}, tn {}, unknown {})",
            self.total, c.tp, c.fp, c.fn_, c.tn, c.unknown
        );
        s
    }
}

impl SubtaskScore {
    pub fn to_markdown(&self) -> String {
        format!(
            "| metric | value |\n|---|---|\n| accuracy | {:.4} |\n| accuracy+ | {:.4} |\n| score | {:.2} |\n\nquestions: {} ({} correct), images: {} ({} fully correct)\n",
            self.accuracy,
            self.accuracy_plus,
            self.combined,
            self.questions,
            self.correct,
            self.images,
            self.images_both_correct
        )
    }
}
