//! Reference database and exact cosine retrieval.
//!
//! Each record carries a semantic embedding and optionally an appearance
//! embedding. Both halves are L2-normalized on build and concatenated without
//! renormalization, so the inner product of two ensembles is the sum of the
//! two per-half cosines and lies in `[-2, 2]`. Text queries (question-driven
//! retrieval) score against the semantic half only.
//!
//! Search is an exhaustive scan; results are ordered by similarity descending,
//! ties by ascending id.
//!
//! On-disk layout (`.pnsv`), all integers little-endian:
//!
//! ```text
//! b"PNSV1" | u32 semantic_dim | u32 appearance_dim | u64 count
//! count * (semantic_dim + appearance_dim) * f32   row-major embeddings
//! JSON footer with per-record metadata, to end of file
//! ```

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"PNSV1";
const FOOTER_VERSION: u32 = 1;
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Restval,
    #[default]
    Other,
}

/// One retrievable reference as ingested from JSON Lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub id: String,
    pub semantic_embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance_embedding: Option<Vec<f64>>,
    #[serde(default)]
    pub captions: Vec<String>,
    #[serde(default)]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

/// Metadata kept alongside the embedding payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub captions: Vec<String>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub id: String,
    pub similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<f64>,
}

/// A search query. Without an appearance half it is a text query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub semantic: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance: Option<Vec<f64>>,
}

impl Query {
    pub fn text(embedding: Vec<f64>) -> Self {
        Self {
            semantic: embedding,
            appearance: None,
        }
    }

    pub fn ensemble(semantic: Vec<f64>, appearance: Vec<f64>) -> Self {
        Self {
            semantic,
            appearance: Some(appearance),
        }
    }
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("embedding"));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Normalizes each half and concatenates them.
pub fn ensemble_embed(semantic: &[f64], appearance: &[f64]) -> Result<Vec<f64>> {
    let mut out = l2_normalize(semantic)?;
    out.extend(l2_normalize(appearance)?);
    Ok(out)
}

/// Reads records from JSON Lines, skipping blank lines.
pub fn read_records_jsonl<R: BufRead>(reader: R) -> Result<Vec<ReferenceRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReferenceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format("record", format!("line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Immutable exact-search index.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    semantic_dim: usize,
    appearance_dim: usize,
    embeddings: Vec<f32>,
    records: Vec<RecordMeta>,
    by_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct Footer {
    version: u32,
    records: Vec<RecordMeta>,
}

impl Index {
    /// Validates ids and dimensions, normalizes every half, and packs the
    /// embeddings. Either every record has an appearance half or none does.
    pub fn build(records: Vec<ReferenceRecord>) -> Result<Self> {
        let semantic_dim = records.first().map_or(0, |r| r.semantic_embedding.len());
        let appearance_dim = records
            .first()
            .and_then(|r| r.appearance_embedding.as_ref())
            .map_or(0, Vec::len);
        if !records.is_empty() && semantic_dim == 0 {
            return Err(Error::ZeroVector);
        }
        let row = semantic_dim + appearance_dim;
        let mut embeddings = Vec::with_capacity(records.len() * row);
        let mut metas = Vec::with_capacity(records.len());
        let mut by_id = HashMap::with_capacity(records.len());
        for (pos, rec) in records.into_iter().enumerate() {
            if by_id.insert(rec.id.clone(), pos).is_some() {
                return Err(Error::DuplicateId(rec.id));
            }
            check_dim(semantic_dim, rec.semantic_embedding.len())?;
            let found_app = rec.appearance_embedding.as_ref().map_or(0, Vec::len);
            check_dim(appearance_dim, found_app)?;
            embeddings.extend(
                l2_normalize(&rec.semantic_embedding)?
                    .iter()
                    .map(|&x| x as f32),
            );
            if let Some(app) = &rec.appearance_embedding {
                embeddings.extend(l2_normalize(app)?.iter().map(|&x| x as f32));
            }
            metas.push(RecordMeta {
                id: rec.id,
                captions: rec.captions,
                split: rec.split,
                image_ref: rec.image_ref,
            });
        }
        Ok(Self {
            semantic_dim,
            appearance_dim,
            embeddings,
            records: metas,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn semantic_dim(&self) -> usize {
        self.semantic_dim
    }

    /// Zero when records carry no appearance half.
    pub fn appearance_dim(&self) -> usize {
        self.appearance_dim
    }

    pub fn records(&self) -> &[RecordMeta] {
        &self.records
    }

    pub fn record(&self, id: &str) -> Option<&RecordMeta> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    fn row(&self, pos: usize) -> (&[f32], &[f32]) {
        let width = self.semantic_dim + self.appearance_dim;
        let row = &self.embeddings[pos * width..(pos + 1) * width];
        row.split_at(self.semantic_dim)
    }

    /// Stored (normalized, f32-rounded) ensemble embedding for `id`.
    pub fn embedding(&self, id: &str) -> Option<Vec<f64>> {
        let pos = *self.by_id.get(id)?;
        let (sem, app) = self.row(pos);
        Some(sem.iter().chain(app).map(|&x| f64::from(x)).collect())
    }

    /// Exact top-`k` over records not in `blocklist`.
    pub fn search(
        &self,
        query: &Query,
        k: usize,
        blocklist: &HashSet<String>,
    ) -> Result<Vec<RetrievalResult>> {
        if self.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        check_dim(self.semantic_dim, query.semantic.len())?;
        let semantic = l2_normalize(&query.semantic)?;
        let appearance = match &query.appearance {
            Some(app) => {
                if self.appearance_dim == 0 {
                    return Err(Error::DimensionMismatch {
                        expected: self.semantic_dim,
                        found: self.semantic_dim + app.len(),
                    });
                }
                check_dim(self.appearance_dim, app.len())?;
                Some(l2_normalize(app)?)
            }
            None => None,
        };

        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .filter(|&pos| !blocklist.contains(&self.records[pos].id))
            .map(|pos| {
                let (sem, app) = self.row(pos);
                let mut sim = dot(sem, &semantic);
                if let Some(q) = &appearance {
                    sim += dot(app, q);
                }
                (pos, sim)
            })
            .collect();

        let take = k.min(scored.len());
        if take == 0 {
            return Ok(Vec::new());
        }
        let order = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            b.1.total_cmp(&a.1)
                .then_with(|| self.records[a.0].id.cmp(&self.records[b.0].id))
        };
        if take < scored.len() {
            scored.select_nth_unstable_by(take - 1, order);
            scored.truncate(take);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .map(|(pos, similarity)| RetrievalResult {
                id: self.records[pos].id.clone(),
                similarity,
                rerank_score: None,
            })
            .collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.semantic_dim as u32).to_le_bytes())?;
        w.write_all(&(self.appearance_dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        let mut payload = Vec::with_capacity(self.embeddings.len() * 4);
        for x in &self.embeddings {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&payload)?;
        let footer = Footer {
            version: FOOTER_VERSION,
            records: self.records.clone(),
        };
        serde_json::to_writer(&mut w, &footer).map_err(|e| Error::format("index footer", e))?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("index", "bad magic bytes"));
        }
        let semantic_dim = read_u32(&mut r)? as usize;
        let appearance_dim = read_u32(&mut r)? as usize;
        let count = usize::try_from(read_u64(&mut r)?)
            .map_err(|_| Error::format("index", "record count overflows"))?;
        let floats = count
            .checked_mul(semantic_dim + appearance_dim)
            .ok_or_else(|| Error::format("index", "payload size overflows"))?;
        let mut bytes = vec![0u8; floats * 4];
        read_exact(&mut r, &mut bytes)?;
        let embeddings: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        let footer: Footer =
            serde_json::from_slice(&rest).map_err(|e| Error::format("index footer", e))?;
        if footer.version != FOOTER_VERSION {
            return Err(Error::format(
                "index footer",
                format!("unsupported version {}", footer.version),
            ));
        }
        if footer.records.len() != count {
            return Err(Error::format(
                "index footer",
                format!("{} records for {count} embeddings", footer.records.len()),
            ));
        }
        let mut by_id = HashMap::with_capacity(count);
        for (pos, rec) in footer.records.iter().enumerate() {
            if by_id.insert(rec.id.clone(), pos).is_some() {
                return Err(Error::DuplicateId(rec.id.clone()));
            }
        }
        let index = Self {
            semantic_dim,
            appearance_dim,
            embeddings,
            records: footer.records,
            by_id,
        };
        index.check_unit_rows()?;
        Ok(index)
    }

    fn check_unit_rows(&self) -> Result<()> {
        for pos in 0..self.len() {
            let (sem, app) = self.row(pos);
            for half in [sem, app] {
                if half.is_empty() {
                    continue;
                }
                let norm = half
                    .iter()
                    .map(|&x| f64::from(x).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if (norm - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(Error::format(
                        "index",
                        format!(
                            "record `{}` is not unit norm ({norm})",
                            self.records[pos].id
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn dot(stored: &[f32], query: &[f64]) -> f64 {
    stored
        .iter()
        .zip(query)
        .map(|(&a, b)| f64::from(a) * b)
        .sum()
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("index", "truncated file"),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

const NARRATIVE_PREFIXES: [&str; 4] = ["is there", "are there", "is this", "is the"];

/// Rewrites a yes/no question into a caption-like statement for text retrieval.
///
/// A leading "Is there", "Are there", "Is this" or "Is the" (any case, as a
/// whole word) becomes "A photo of"; a trailing question mark is dropped.
pub fn narrativize(question: &str) -> String {
    let trimmed = question.trim();
    let lower = trimmed.to_lowercase();
    let mut out = trimmed.to_string();
    for prefix in NARRATIVE_PREFIXES {
        // Prefixes are ASCII, so byte offsets agree between `lower` and `trimmed`.
        if lower.starts_with(prefix)
            && trimmed.is_char_boundary(prefix.len())
            && trimmed[prefix.len()..]
                .chars()
                .next()
                .is_none_or(|c| c.is_whitespace())
        {
            out = format!("A photo of{}", &trimmed[prefix.len()..]);
            break;
        }
    }
    let out = out.trim_end();
    out.strip_suffix('?').unwrap_or(out).trim_end().to_string()
}

/// Lowercases, drops punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Clipped unigram precision times brevity penalty `min(1, e^(1 - r/c))`.
pub fn bleu1<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::EmptyCandidate);
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for tok in reference {
        *ref_counts.entry(tok.as_ref()).or_default() += 1;
    }
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for tok in candidate {
        *cand_counts.entry(tok.as_ref()).or_default() += 1;
    }
    let clipped: usize = cand_counts
        .iter()
        .map(|(tok, &n)| n.min(ref_counts.get(tok).copied().unwrap_or(0)))
        .sum();
    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let precision = clipped as f64 / c;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(precision * bp)
}

/// Reorders `results` by the best BLEU@1 of each record's captions against
/// the narrativized `question`. The sort is stable, so equal scores keep the
/// retrieval order.
pub fn rerank_by_bleu1(
    results: Vec<RetrievalResult>,
    question: &str,
    index: &Index,
) -> Result<Vec<RetrievalResult>> {
    let query = tokenize(&narrativize(question));
    if query.is_empty() {
        return Err(Error::EmptyCandidate);
    }
    let mut scored = results
        .into_iter()
        .map(|mut r| {
            let meta = index
                .record(&r.id)
                .ok_or_else(|| Error::UnknownId(r.id.clone()))?;
            let mut best = 0.0f64;
            for caption in &meta.captions {
                best = best.max(bleu1(&query, &tokenize(caption))?);
            }
            r.rerank_score = Some(best);
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| {
        let (a, b) = (a.rerank_score.unwrap_or(0.0), b.rerank_score.unwrap_or(0.0));
        b.total_cmp(&a)
    });
    Ok(scored)
}
