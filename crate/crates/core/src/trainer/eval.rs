use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::decode::greedy_decode;
use crate::data::{edit_distance, Utterance, Vocab};
use crate::error::{Error, Result};
use crate::nn::Model;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    pub edits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Utterances whose reference detokenizes to no words.
    pub skipped: Vec<String>,
    pub edits: usize,
    pub ref_words: usize,
}

pub const REPORT_HEADER: &str = "id\tref_words\tedits\twer\treference\thypothesis";

impl EvalReport {
    /// Total edits over total reference words.
    pub fn wer(&self) -> f64 {
        if self.ref_words == 0 {
            return f64::NAN;
        }
        self.edits as f64 / self.ref_words as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{:.6}\t{}\t{}",
                r.id,
                r.reference.len(),
                r.edits,
                r.edits as f64 / r.reference.len() as f64,
                r.reference.join(" "),
                r.hypothesis.join(" ")
            );
        }
        s
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

/// Greedy-decodes every utterance and scores it at word level.
pub fn evaluate(model: &Model<f32>, data: &[Utterance], vocab: &Vocab, max_symbols: usize) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::input("evaluation set is empty"));
    }
    let decoded: Vec<Result<Vec<u32>>> = data
        .par_iter()
        .map(|u| greedy_decode(model, &u.frames, max_symbols))
        .collect();
    let mut report = EvalReport {
        rows: Vec::new(),
        skipped: Vec::new(),
        edits: 0,
        ref_words: 0,
    };
    for (u, hyp) in data.iter().zip(decoded) {
        let reference = vocab.detokenize(&u.tokens);
        if reference.is_empty() {
            log::warn!("skipping {}: empty reference", u.id);
            report.skipped.push(u.id.clone());
            continue;
        }
        let hypothesis = vocab.detokenize(&hyp?);
        let edits = edit_distance(&reference, &hypothesis);
        report.edits += edits;
        report.ref_words += reference.len();
        report.rows.push(EvalRow {
            id: u.id.clone(),
            reference,
            hypothesis,
            edits,
        });
    }
    Ok(report)
}
