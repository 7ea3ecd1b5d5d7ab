//! Bracket-annotated sentence corpus.
//!
//! One sentence per non-empty line, tokens separated by spaces, and
//! `[w1 w2 ... wk]` (k >= 2) marking a multi-word jargon span. Every other
//! token, punctuation included, is its own single-word term unit.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// The 20-sentence clinical corpus shipped with the crate.
pub const BUNDLED_CORPUS: &str = include_str!("../data/corpus.txt");

/// Reference word and term totals for the bundled corpus.
pub const REFERENCE_WORDS: usize = 904;
pub const REFERENCE_TERMS: usize = 709;
pub const REFERENCE_SENTENCES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}, column {column}: {message}")]
    Format {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("corpus document is empty")]
    Empty,
    #[error("unknown sentence id {0}")]
    UnknownSentence(u32),
    #[error("word index {index} out of range for sentence {sentence_id} ({len} words)")]
    WordOutOfRange {
        sentence_id: u32,
        index: usize,
        len: usize,
    },
}

/// Dense, corpus-wide term unit index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(pub usize);

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermUnit {
    pub id: UnitId,
    pub sentence_id: u32,
    pub start: usize,
    pub length: usize,
    pub multiword: bool,
    pub surface: String,
}

impl TermUnit {
    pub fn end(&self) -> usize {
        self.start + self.length
    }

    pub fn word_indices(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: u32,
    pub words: Vec<Word>,
    first_unit: usize,
    unit_count: usize,
}

impl Sentence {
    /// Words joined by single spaces, markup removed.
    pub fn plain_text(&self) -> String {
        self.words
            .iter()
            .map(|w| w.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn unit_ids(&self) -> impl Iterator<Item = UnitId> + '_ {
        (self.first_unit..self.first_unit + self.unit_count).map(UnitId)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    units: Vec<TermUnit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub words: usize,
    pub units: usize,
    pub multiword_units: usize,
    /// Tokens made only of punctuation or symbols (no letter or digit).
    pub punctuation_tokens: usize,
    /// Words excluding punctuation-only tokens.
    pub lexical_words: usize,
    /// Units excluding punctuation-only single-word units.
    pub lexical_units: usize,
    /// Punctuation-only tokens sitting inside a bracketed span.
    pub bracketed_punctuation_tokens: usize,
    /// Bracketed spans immediately followed by another bracketed span.
    pub adjacent_multiword_pairs: usize,
}

impl CorpusStats {
    /// Units minus every punctuation token minus merged adjacent spans; the
    /// count that lines up with the reference term total.
    pub fn reconciled_terms(&self) -> usize {
        self.units - self.punctuation_tokens - self.adjacent_multiword_pairs
    }
}

impl Corpus {
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut sentences = Vec::new();
        let mut units = Vec::new();
        for (line_idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let sentence_id = sentences.len() as u32 + 1;
            let first_unit = units.len();
            let words = parse_line(line, line_idx + 1, sentence_id, &mut units)?;
            sentences.push(Sentence {
                id: sentence_id,
                words,
                first_unit,
                unit_count: units.len() - first_unit,
            });
        }
        if sentences.is_empty() {
            return Err(CorpusError::Empty);
        }
        Ok(Corpus { sentences, units })
    }

    pub fn bundled() -> Self {
        Corpus::parse(BUNDLED_CORPUS).expect("bundled corpus is well-formed")
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn units(&self) -> &[TermUnit] {
        &self.units
    }

    pub fn unit(&self, id: UnitId) -> &TermUnit {
        &self.units[id.0]
    }

    pub fn sentence(&self, sentence_id: u32) -> Result<&Sentence, CorpusError> {
        sentence_id
            .checked_sub(1)
            .and_then(|i| self.sentences.get(i as usize))
            .ok_or(CorpusError::UnknownSentence(sentence_id))
    }

    pub fn sentence_units(&self, sentence_id: u32) -> Result<&[TermUnit], CorpusError> {
        let s = self.sentence(sentence_id)?;
        Ok(&self.units[s.first_unit..s.first_unit + s.unit_count])
    }

    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(|s| s.words.len()).sum()
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    /// Units whose span lies entirely inside `word_indices`.
    pub fn unit_lookup(
        &self,
        sentence_id: u32,
        word_indices: &BTreeSet<usize>,
    ) -> Result<BTreeSet<UnitId>, CorpusError> {
        let sentence = self.sentence(sentence_id)?;
        if let Some(&max) = word_indices.iter().next_back() {
            if max >= sentence.words.len() {
                return Err(CorpusError::WordOutOfRange {
                    sentence_id,
                    index: max,
                    len: sentence.words.len(),
                });
            }
        }
        Ok(self
            .sentence_units(sentence_id)?
            .iter()
            .filter(|u| u.word_indices().all(|i| word_indices.contains(&i)))
            .map(|u| u.id)
            .collect())
    }

    pub fn stats(&self) -> CorpusStats {
        let punctuation_tokens = self
            .sentences
            .iter()
            .flat_map(|s| &s.words)
            .filter(|w| is_punctuation(&w.text))
            .count();
        let punctuation_units = self
            .units
            .iter()
            .filter(|u| !u.multiword && is_punctuation(&u.surface))
            .count();
        let adjacent_multiword_pairs = self
            .units
            .windows(2)
            .filter(|w| w[0].sentence_id == w[1].sentence_id && w[0].multiword && w[1].multiword)
            .count();
        CorpusStats {
            sentences: self.sentences.len(),
            words: self.word_count(),
            units: self.unit_count(),
            multiword_units: self.units.iter().filter(|u| u.multiword).count(),
            punctuation_tokens,
            lexical_words: self.word_count() - punctuation_tokens,
            lexical_units: self.unit_count() - punctuation_units,
            bracketed_punctuation_tokens: punctuation_tokens - punctuation_units,
            adjacent_multiword_pairs,
        }
    }

    /// Hex SHA-256 of the canonical line format; ties derived artifacts to a corpus.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_line_format().as_bytes()))
    }

    /// Serializes back to the bracketed line format.
    pub fn to_line_format(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            let parts: Vec<String> = self.sentence_units(s.id).unwrap().iter().map(|u| {
                if u.multiword {
                    format!("[{}]", u.surface)
                } else {
                    u.surface.clone()
                }
            }).collect();
            out.push_str(&parts.join(" "));
            out.push('\n');
        }
        out
    }
}

fn is_punctuation(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
}

fn format_err(line: usize, column: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Format {
        line,
        column,
        message: message.into(),
    }
}

fn parse_line(
    line: &str,
    line_no: usize,
    sentence_id: u32,
    units: &mut Vec<TermUnit>,
) -> Result<Vec<Word>, CorpusError> {
    let mut words: Vec<Word> = Vec::new();
    // (start word index, column of '[')
    let mut open: Option<(usize, usize)> = None;

    let push_unit = |units: &mut Vec<TermUnit>, words: &[Word], start: usize, end: usize| {
        let surface = words[start..end]
            .iter()
            .map(|w| w.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        units.push(TermUnit {
            id: UnitId(units.len()),
            sentence_id,
            start,
            length: end - start,
            multiword: end - start > 1,
            surface,
        });
    };

    for (col0, token) in token_columns(line) {
        let column = col0 + 1;
        let mut body = token;
        let opens = body.starts_with('[');
        if opens {
            body = &body[1..];
            if body.starts_with('[') {
                return Err(format_err(line_no, column, "nested bracket group"));
            }
            if open.is_some() {
                return Err(format_err(line_no, column, "nested bracket group"));
            }
        }
        let closes = body.ends_with(']');
        if closes {
            body = &body[..body.len() - 1];
        }
        if body.contains('[') {
            return Err(format_err(line_no, column, "nested or stray '['"));
        }
        if body.contains(']') {
            return Err(format_err(line_no, column, "stray ']'"));
        }
        if body.is_empty() {
            return Err(format_err(line_no, column, "empty bracket group"));
        }
        if closes && open.is_none() && !opens {
            return Err(format_err(line_no, column, "unbalanced ']' without matching '['"));
        }

        let index = words.len();
        words.push(Word {
            text: body.to_string(),
            index,
        });

        if opens {
            open = Some((index, column));
        }
        match (open, closes) {
            (Some((start, open_col)), true) => {
                if index == start {
                    return Err(format_err(
                        line_no,
                        open_col,
                        "bracket group must contain at least two words",
                    ));
                }
                push_unit(units, &words, start, index + 1);
                open = None;
            }
            (Some(_), false) => {}
            (None, _) => push_unit(units, &words, index, index + 1),
        }
    }
    if let Some((_, col)) = open {
        return Err(format_err(line_no, col, "unbalanced '[' is never closed"));
    }
    Ok(words)
}

/// Whitespace-separated tokens with their 0-based character columns.
fn token_columns(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut chars = 0usize;
    let mut last_end = 0usize;
    line.split_whitespace().map(move |tok| {
        let byte_start = tok.as_ptr() as usize - line.as_ptr() as usize;
        chars += line[last_end..byte_start].chars().count();
        let col = chars;
        chars += tok.chars().count();
        last_end = byte_start + tok.len();
        (col, tok)
    })
}
