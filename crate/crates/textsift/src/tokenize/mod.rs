//! Unit segmentation and byte-level BPE tokenization.
//!
//! Text is split into perturbable units at one of three granularities:
//! whitespace-delimited words, BPE subwords, or Unicode scalar characters.
//! Each unit remembers the character positions it came from so the
//! displacement metrics can be computed after reordering.

pub mod bpe;

pub use bpe::{BpeVocab, SubwordToken};

use crate::error::{Error, Result};

/// The level at which a perturbation reorders text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    Word,
    Subword,
    Character,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Word => "word",
            Granularity::Subword => "subword",
            Granularity::Character => "char",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Granularity::Word),
            "subword" => Ok(Granularity::Subword),
            "char" | "character" => Ok(Granularity::Character),
            other => Err(Error::Config(format!("unknown granularity '{other}'"))),
        }
    }
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A text fragment plus the original character positions it covers.
///
/// `origin[i]` is the 0-based index (into the unperturbed text, counted in
/// Unicode scalars) of the i-th character of `surface`. Separator characters
/// synthesized during reassembly carry `synthesized = true` and an empty
/// origin list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unit {
    pub surface: String,
    pub origin: Vec<usize>,
    pub synthesized: bool,
}

impl Unit {
    fn tracked(surface: String, origin: Vec<usize>) -> Self {
        debug_assert_eq!(surface.chars().count(), origin.len());
        Unit {
            surface,
            origin,
            synthesized: false,
        }
    }
}

/// Split into maximal runs of non-whitespace characters. Each inter-word
/// whitespace run is attached to the *preceding* word's unit so that word
/// shuffles move separators together with their words; leading whitespace
/// (no preceding word) is attached to the first word. Concatenating all
/// surfaces reproduces the input exactly.
pub fn split_words(text: &str) -> Vec<Unit> {
    let chars: Vec<char> = text.chars().collect();
    let mut units: Vec<Unit> = Vec::new();
    let mut i = 0;

    // leading whitespace run, prepended to the first word below
    let mut lead = String::new();
    let mut lead_origin = Vec::new();
    while i < chars.len() && chars[i].is_whitespace() {
        lead.push(chars[i]);
        lead_origin.push(i);
        i += 1;
    }
    if i == chars.len() {
        if lead.is_empty() {
            return Vec::new();
        }
        // all-whitespace text: one degenerate unit, never reordered
        return vec![Unit::tracked(lead, lead_origin)];
    }

    while i < chars.len() {
        let mut surface = std::mem::take(&mut lead);
        let mut origin = std::mem::take(&mut lead_origin);
        while i < chars.len() && !chars[i].is_whitespace() {
            surface.push(chars[i]);
            origin.push(i);
            i += 1;
        }
        while i < chars.len() && chars[i].is_whitespace() {
            surface.push(chars[i]);
            origin.push(i);
            i += 1;
        }
        units.push(Unit::tracked(surface, origin));
    }
    units
}

/// One unit per Unicode scalar value, whitespace included; unit `i` has
/// origin `[i]`. Grapheme clusters are not respected (a combining sequence
/// splits into its scalars).
pub fn split_chars(text: &str) -> Vec<Unit> {
    text.chars()
        .enumerate()
        .map(|(i, c)| Unit::tracked(c.to_string(), vec![i]))
        .collect()
}

/// Characters per BPE token: `len(text in chars) / len(bpe_encode(text))`.
///
/// A proxy for how intact the subword vocabulary is: reordering characters
/// breaks merges and drives the rate toward 1 token per byte.
pub fn compression_rate(text: &str, vocab: &BpeVocab) -> Result<f64> {
    let chars = text.chars().count();
    if chars == 0 {
        return Err(Error::EmptyCompressionRate);
    }
    let tokens = vocab.encode(text).len();
    Ok(chars as f64 / tokens as f64)
}
