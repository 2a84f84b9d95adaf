//! Set-prediction metrics over label vectors and the per-SNR CSV report.
//!
//! Everything is accumulated as integer counts; division happens last.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::LabelVector;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "snr_db,arch,overlap,channel,subset_acc,hamming_acc,macro_f1,n";

/// Leading comment of every report; documents the empty-class F1 convention.
pub const CSV_PREAMBLE: &str = "# macro_f1: an emitter with no positives in truth or prediction scores 1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2TP / (2TP + FP + FN)`, or 1 when nothing was present or claimed.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub k: usize,
    pub exact_matches: u64,
    pub correct_bits: u64,
    pub per_emitter: Vec<ClassCounts>,
    pub subset_accuracy: f64,
    pub hamming_accuracy: f64,
    pub macro_f1: f64,
}

fn check(pred: &[LabelVector], truth: &[LabelVector]) -> Result<usize> {
    if pred.len() != truth.len() {
        return Err(Error::shape(&[truth.len()], &[pred.len()]));
    }
    let first = truth
        .first()
        .ok_or_else(|| Error::invalid("metrics need at least one sample"))?;
    let k = first.k();
    for (p, t) in pred.iter().zip(truth) {
        if p.k() != k || t.k() != k {
            return Err(Error::shape(&[k], &[if t.k() != k { t.k() } else { p.k() }]));
        }
    }
    Ok(k)
}

pub fn metrics_report(pred: &[LabelVector], truth: &[LabelVector]) -> Result<MetricsReport> {
    let k = check(pred, truth)?;
    let n = pred.len();
    let mut per_emitter = vec![ClassCounts::default(); k];
    let mut exact = 0u64;
    let mut bits = 0u64;
    for (p, t) in pred.iter().zip(truth) {
        exact += u64::from(p == t);
        for (c, (&pb, &tb)) in per_emitter.iter_mut().zip(p.bits.iter().zip(&t.bits)) {
            bits += u64::from(pb == tb);
            match (pb, tb) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    let macro_f1 = per_emitter.iter().map(ClassCounts::f1).sum::<f64>() / k as f64;
    Ok(MetricsReport {
        n,
        k,
        exact_matches: exact,
        correct_bits: bits,
        subset_accuracy: exact as f64 / n as f64,
        hamming_accuracy: bits as f64 / (n * k) as f64,
        macro_f1,
        per_emitter,
    })
}

pub fn subset_accuracy(pred: &[LabelVector], truth: &[LabelVector]) -> Result<f64> {
    Ok(metrics_report(pred, truth)?.subset_accuracy)
}

pub fn hamming_accuracy(pred: &[LabelVector], truth: &[LabelVector]) -> Result<f64> {
    Ok(metrics_report(pred, truth)?.hamming_accuracy)
}

pub fn macro_f1(pred: &[LabelVector], truth: &[LabelVector]) -> Result<f64> {
    Ok(metrics_report(pred, truth)?.macro_f1)
}

/// One line of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// SNR in dB, or `all` for the pooled row.
    pub snr_db: String,
    pub arch: String,
    pub overlap: String,
    pub channel: String,
    pub subset_acc: f64,
    pub hamming_acc: f64,
    pub macro_f1: f64,
    pub n: usize,
}

impl SweepRow {
    pub fn new(snr_db: String, arch: &str, overlap: &str, channel: &str, m: &MetricsReport) -> Self {
        Self {
            snr_db,
            arch: arch.into(),
            overlap: overlap.into(),
            channel: channel.into(),
            subset_acc: m.subset_accuracy,
            hamming_acc: m.hamming_accuracy,
            macro_f1: m.macro_f1,
            n: m.n,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("report csv: {e}"))
}

/// Format the SNR key the same way everywhere so rows from separate runs merge.
pub fn snr_key(snr_db: f32) -> String {
    if snr_db.is_infinite() {
        "inf".into()
    } else {
        format!("{snr_db}")
    }
}

/// Render rows under the comment `preamble` lines and the fixed header.
pub fn render_csv(preamble: &[String], rows: &[SweepRow]) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{CSV_PREAMBLE}").unwrap();
    for line in preamble {
        writeln!(out, "# {line}").unwrap();
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::invalid(format!("report csv: {e}")))?;
    out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    Ok(out)
}

/// Parse a report produced by [`render_csv`]; `#` lines are skipped.
pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::invalid(format!("report header mismatch: {}", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}
