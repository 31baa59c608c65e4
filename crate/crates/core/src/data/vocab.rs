//! Wordpiece vocabulary and word error rate.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::TokenId;

/// Marks a piece that continues the previous word.
pub const CONTINUATION: &str = "##";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    pieces: Vec<String>,
}

impl Vocab {
    pub fn new(pieces: Vec<String>) -> Result<Self> {
        if pieces.len() < 2 {
            return Err(Error::config("vocabulary needs at least 2 pieces"));
        }
        Ok(Self { pieces })
    }

    /// Placeholder vocabulary `t0, t1, ...` for corpora shipped without one.
    pub fn numbered(size: usize) -> Self {
        Self {
            pieces: (0..size).map(|i| format!("t{i}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// Joins continuation pieces onto their predecessor and returns the words.
    pub fn detokenize(&self, tokens: &[TokenId]) -> Vec<String> {
        let mut words: Vec<String> = Vec::new();
        for &t in tokens {
            let piece = self.piece(t).map(str::to_string).unwrap_or_else(|| format!("<{t}>"));
            match piece.strip_prefix(CONTINUATION) {
                Some(rest) if !words.is_empty() => words.last_mut().unwrap().push_str(rest),
                Some(rest) => words.push(rest.to_string()),
                None => words.push(piece),
            }
        }
        words
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Self::new(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.pieces.join("\n");
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }
}

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance<S: PartialEq>(reference: &[S], hypothesis: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

pub fn wer<S: PartialEq>(reference: &[S], hypothesis: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::input("WER needs a non-empty reference"));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}
