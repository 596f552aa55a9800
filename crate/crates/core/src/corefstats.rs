//! Distribution of sentence distances between anaphora and their antecedents.
//!
//! Input is a TSV of pre-extracted mention pairs with the header
//! `doc_id  sentence_idx  antecedent_sentence_idx`; converting a coreference
//! corpus into that form is left to the user.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::svg::{bar_chart, Bar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorefError {
    #[error("record {index} ({doc_id}): antecedent sentence {antecedent} follows anaphor sentence {sentence}")]
    NegativeDistance { index: usize, doc_id: String, sentence: usize, antecedent: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnaphoraRecord {
    pub doc_id: String,
    pub sentence_idx: usize,
    pub antecedent_sentence_idx: usize,
}

impl AnaphoraRecord {
    pub fn distance(&self) -> Option<usize> {
        self.sentence_idx.checked_sub(self.antecedent_sentence_idx)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Histogram {
    pub counts: BTreeMap<usize, usize>,
    pub total: usize,
}

impl Histogram {
    pub fn fraction(&self, distance: usize) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        *self.counts.get(&distance).unwrap_or(&0) as f64 / self.total as f64
    }

    pub fn fractions(&self) -> BTreeMap<usize, f64> {
        self.counts.keys().map(|&d| (d, self.fraction(d))).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("distance,count,fraction\n");
        for (&d, &c) in &self.counts {
            let _ = writeln!(s, "{d},{c},{:.6}", self.fraction(d));
        }
        s
    }

    /// Bar chart of fractions by distance.
    pub fn to_svg(&self, title: &str) -> String {
        let bars: Vec<Bar> =
            self.counts.keys().map(|&d| Bar { label: d.to_string(), value: self.fraction(d), error: None }).collect();
        bar_chart(title, "Sentence distance to antecedent (0 = same sentence)", "Fraction of anaphora", &bars)
    }
}

pub fn parse_records(text: &str) -> Result<Vec<AnaphoraRecord>, CorefError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else { return Ok(Vec::new()) };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols != ["doc_id", "sentence_idx", "antecedent_sentence_idx"] {
        return Err(CorefError::Parse { line: 1, msg: format!("unexpected header {header:?}") });
    }
    lines
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').map(str::trim).collect();
            let err = |msg: String| CorefError::Parse { line: i + 1, msg };
            if f.len() != 3 {
                return Err(err(format!("expected 3 columns, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| err(format!("not a sentence index: {s:?}")));
            Ok(AnaphoraRecord {
                doc_id: f[0].to_string(),
                sentence_idx: num(f[1])?,
                antecedent_sentence_idx: num(f[2])?,
            })
        })
        .collect()
}

fn distances(records: &[AnaphoraRecord]) -> Result<Vec<usize>, CorefError> {
    records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            r.distance().ok_or_else(|| CorefError::NegativeDistance {
                index,
                doc_id: r.doc_id.clone(),
                sentence: r.sentence_idx,
                antecedent: r.antecedent_sentence_idx,
            })
        })
        .collect()
}

pub fn distance_histogram(records: &[AnaphoraRecord]) -> Result<Histogram, CorefError> {
    let mut h = Histogram::default();
    for d in distances(records)? {
        *h.counts.entry(d).or_default() += 1;
        h.total += 1;
    }
    Ok(h)
}

/// Fraction of records whose antecedent lies more than `k` sentences back.
pub fn fraction_beyond(records: &[AnaphoraRecord], k: i64) -> Result<f64, CorefError> {
    let d = distances(records)?;
    if d.is_empty() {
        return Ok(0.0);
    }
    Ok(d.iter().filter(|&&x| x as i64 > k).count() as f64 / d.len() as f64)
}
