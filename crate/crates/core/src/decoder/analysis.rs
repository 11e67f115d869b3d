//! Per-step breakdown tables.
//!
//! `breakdown.csv` columns: `step, candidate, base, txt, img, knn_1..knn_k,
//! knn_mean, l_delta, jsd, alpha_d, alpha_nn, combined, chosen`. Floats use
//! Rust's shortest round-trip formatting (`-inf` for masked entries), so the
//! file is byte-identical across platforms for identical inputs.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{DecodeOutput, StepBreakdown};
use crate::error::{Error, Result};

/// One `(step, candidate)` line of `breakdown.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub step: usize,
    pub candidate: String,
    pub base: f64,
    pub txt: f64,
    pub img: f64,
    pub knn: Vec<f64>,
    pub knn_mean: f64,
    pub l_delta: f64,
    pub jsd: f64,
    pub alpha_d: f64,
    pub alpha_nn: f64,
    pub combined: f64,
    pub chosen: bool,
}

impl BreakdownRow {
    fn from_step(step: &StepBreakdown) -> impl Iterator<Item = BreakdownRow> + '_ {
        step.candidates.iter().map(move |c| BreakdownRow {
            step: step.step,
            candidate: c.text.clone(),
            base: c.base,
            txt: c.txt,
            img: c.img,
            knn: c.knn.clone(),
            knn_mean: c.knn_mean,
            l_delta: c.l_delta,
            jsd: step.jsd,
            alpha_d: step.alpha_d,
            alpha_nn: step.alpha_nn,
            combined: c.combined,
            chosen: c.token == step.chosen,
        })
    }
}

impl DecodeOutput {
    pub fn breakdown_rows(&self) -> Vec<BreakdownRow> {
        self.breakdowns
            .iter()
            .flat_map(BreakdownRow::from_step)
            .collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format("breakdown csv", format!("{other:?}")),
    }
}

fn header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = ["step", "candidate", "base", "txt", "img"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=k).map(|j| format!("knn_{j}")));
    h.extend(
        [
            "knn_mean", "l_delta", "jsd", "alpha_d", "alpha_nn", "combined", "chosen",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

/// Writes rows with `k` reference columns. LF line endings.
pub fn write_breakdown_csv<W: Write>(rows: &[BreakdownRow], k: usize, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(header(k)).map_err(csv_err)?;
    for r in rows {
        if r.knn.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                found: r.knn.len(),
            });
        }
        let mut rec = vec![r.step.to_string(), r.candidate.clone()];
        rec.extend([r.base, r.txt, r.img].iter().map(f64::to_string));
        rec.extend(r.knn.iter().map(f64::to_string));
        rec.extend(
            [
                r.knn_mean, r.l_delta, r.jsd, r.alpha_d, r.alpha_nn, r.combined,
            ]
            .iter()
            .map(f64::to_string),
        );
        rec.push(if r.chosen { "1" } else { "0" }.to_string());
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a file written by [`write_breakdown_csv`]; `k` comes from the header.
pub fn read_breakdown_csv<R: Read>(r: R) -> Result<(Vec<BreakdownRow>, usize)> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(r);
    let head = rdr.headers().map_err(csv_err)?.clone();
    let k = head
        .iter()
        .filter(|h| h.starts_with("knn_") && *h != "knn_mean")
        .count();
    if head.iter().collect::<Vec<_>>() != header(k) {
        return Err(Error::format("breakdown csv", "unexpected header"));
    }
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = n + 2;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| {
                Error::format(
                    "breakdown csv",
                    format!("line {line} column {}: {e}", i + 1),
                )
            })
        };
        let tail = 5 + k;
        rows.push(BreakdownRow {
            step: rec[0]
                .parse()
                .map_err(|e| Error::format("breakdown csv", format!("line {line}: {e}")))?,
            candidate: rec[1].to_string(),
            base: num(2)?,
            txt: num(3)?,
            img: num(4)?,
            knn: (5..tail).map(num).collect::<Result<_>>()?,
            knn_mean: num(tail)?,
            l_delta: num(tail + 1)?,
            jsd: num(tail + 2)?,
            alpha_d: num(tail + 3)?,
            alpha_nn: num(tail + 4)?,
            combined: num(tail + 5)?,
            chosen: match &rec[tail + 6] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::format(
                        "breakdown csv",
                        format!("line {line}: chosen must be 0 or 1, got `{other}`"),
                    ))
                }
            },
        });
    }
    Ok((rows, k))
}

/// Top candidates per step, laid out like the base/txt/img/k-NN score figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub k: usize,
    pub rows: Vec<BreakdownRow>,
}

/// The `top_n` highest-base candidates of every step.
pub fn analyze(output: &DecodeOutput, top_n: usize) -> Report {
    let k = output
        .breakdowns
        .first()
        .and_then(|b| b.candidates.first())
        .map_or(output.config.k, |c| c.knn.len());
    analyze_rows(&output.breakdown_rows(), k, top_n)
}

pub fn analyze_rows(rows: &[BreakdownRow], k: usize, top_n: usize) -> Report {
    let mut out = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let step = rows[start].step;
        let end = rows[start..]
            .iter()
            .position(|r| r.step != step)
            .map_or(rows.len(), |p| start + p);
        let mut group: Vec<&BreakdownRow> = rows[start..end].iter().collect();
        group.sort_by(|a, b| b.base.total_cmp(&a.base));
        out.extend(group.into_iter().take(top_n).cloned());
        start = end;
    }
    Report { k, rows: out }
}

fn fixed(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.3}")
    }
}

fn signed(v: f64) -> String {
    if v.is_finite() && v >= 0.0 {
        format!("+{v:.3}")
    } else {
        fixed(v)
    }
}

impl Report {
    fn columns(&self) -> Vec<String> {
        let mut h: Vec<String> = ["step", "candidate", "base", "txt", "img"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((1..=self.k).map(|j| format!("knn_{j}")));
        h.extend(["knn_mean", "jsd", "chosen"].iter().map(|s| s.to_string()));
        h
    }

    fn cells(&self, r: &BreakdownRow) -> Vec<String> {
        let mut c = vec![
            r.step.to_string(),
            r.candidate.clone(),
            fixed(r.base),
            fixed(r.txt),
        ];
        c.push(signed(r.img));
        c.extend(r.knn.iter().map(|v| fixed(*v)));
        c.push(fixed(r.knn_mean));
        c.push(format!("{:.4}", r.jsd));
        c.push(if r.chosen { "1" } else { "0" }.into());
        c
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(self.columns()).map_err(csv_err)?;
        for r in &self.rows {
            out.write_record(self.cells(r)).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let cols = self.columns();
        let mut s = String::new();
        let _ = writeln!(s, "| {} |", cols.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(cols.len()));
        for r in &self.rows {
            let mut cells = self.cells(r);
            if r.chosen {
                cells[1] = format!("**{}**", cells[1]);
            }
            let _ = writeln!(s, "| {} |", cells.join(" | "));
        }
        s
    }
}
