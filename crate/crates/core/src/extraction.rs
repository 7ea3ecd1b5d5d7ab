//! Model-output parsing, occurrence-marking alignment and sample-majority aggregation.
//!
//! Outputs carry no positions, so every extracted term is located by word
//! sequence: all of its occurrences in the sentence are marked, and a term
//! unit counts as predicted only if every one of its words is marked.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{strict_majority, GroupId};
use crate::corpus::{Corpus, CorpusError, UnitId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractionError {
    #[error("cannot aggregate an empty sample list")]
    NoSamples,
    #[error("baseline line {line}: {message}")]
    BaselineFormat { line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Clean,
    Recovered,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSample {
    pub raw: String,
    pub terms: Vec<String>,
    pub parse_status: ParseStatus,
}

/// Finds the first `[...]` region holding zero or more comma-separated
/// quoted strings. Never fails: an unparsable output yields `Failed`.
pub fn parse_list_literal(raw: &str) -> ParsedSample {
    for (start, c) in raw.char_indices() {
        if c != '[' {
            continue;
        }
        if let Some((items, end)) = parse_list_at(raw, start) {
            let status = if raw.trim() == &raw[start..end] {
                ParseStatus::Clean
            } else {
                ParseStatus::Recovered
            };
            let terms = items
                .into_iter()
                .map(|t| t.trim().to_string())
                .filter(|t| !t.is_empty())
                .collect();
            return ParsedSample {
                raw: raw.to_string(),
                terms,
                parse_status: status,
            };
        }
    }
    ParsedSample {
        raw: raw.to_string(),
        terms: Vec::new(),
        parse_status: ParseStatus::Failed,
    }
}

/// Parses a list literal whose `[` sits at byte `start`; returns the items
/// and the byte offset just past the closing `]`.
fn parse_list_at(src: &str, start: usize) -> Option<(Vec<String>, usize)> {
    let mut chars = src[start + 1..].char_indices().peekable();
    let offset = start + 1;
    let mut items = Vec::new();

    let skip_ws = |it: &mut std::iter::Peekable<std::str::CharIndices<'_>>| {
        while it.peek().is_some_and(|(_, c)| c.is_whitespace()) {
            it.next();
        }
    };

    skip_ws(&mut chars);
    if let Some(&(i, ']')) = chars.peek() {
        return Some((items, offset + i + 1));
    }
    loop {
        let (_, quote) = chars.next()?;
        if quote != '\'' && quote != '"' {
            return None;
        }
        let mut item = String::new();
        loop {
            let (_, c) = chars.next()?;
            match c {
                '\\' => {
                    let (_, esc) = chars.next()?;
                    item.push(match esc {
                        'n' => '\n',
                        't' => '\t',
                        'r' => '\r',
                        other => other,
                    });
                }
                c if c == quote => break,
                c => item.push(c),
            }
        }
        items.push(item);
        skip_ws(&mut chars);
        match chars.next()? {
            (i, ']') => return Some((items, offset + i + 1)),
            (_, ',') => {
                skip_ws(&mut chars);
                if let Some(&(i, ']')) = chars.peek() {
                    return Some((items, offset + i + 1));
                }
            }
            _ => return None,
        }
    }
}

/// Case folding plus straight/curly quote and hyphen-variant unification.
pub fn normalize(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '`' | '\u{00B4}' => '\'',
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' => '"',
            '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2212}' => '-',
            c => c,
        })
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedSentence {
    pub sentence_id: u32,
    pub marked: BTreeSet<usize>,
}

/// Marks every word of every occurrence of each term's word sequence.
pub fn mark_occurrences<S: AsRef<str>>(
    corpus: &Corpus,
    sentence_id: u32,
    terms: &[S],
) -> Result<MarkedSentence, CorpusError> {
    let sentence = corpus.sentence(sentence_id)?;
    let words: Vec<String> = sentence.words.iter().map(|w| normalize(&w.text)).collect();
    let mut marked = BTreeSet::new();
    let unique: BTreeSet<&str> = terms.iter().map(|t| t.as_ref()).collect();
    for term in unique {
        let needle: Vec<String> = term.split_whitespace().map(normalize).collect();
        if needle.is_empty() || needle.len() > words.len() {
            continue;
        }
        for (start, window) in words.windows(needle.len()).enumerate() {
            if window == needle.as_slice() {
                marked.extend(start..start + needle.len());
            }
        }
    }
    Ok(MarkedSentence {
        sentence_id,
        marked,
    })
}

pub fn collect_units(
    corpus: &Corpus,
    marked: &MarkedSentence,
) -> Result<BTreeSet<UnitId>, CorpusError> {
    corpus.unit_lookup(marked.sentence_id, &marked.marked)
}

/// Units predicted by one list of extracted terms.
pub fn align_terms<S: AsRef<str>>(
    corpus: &Corpus,
    sentence_id: u32,
    terms: &[S],
) -> Result<BTreeSet<UnitId>, CorpusError> {
    collect_units(corpus, &mark_occurrences(corpus, sentence_id, terms)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleVotes {
    pub n_samples: u32,
    pub votes: BTreeMap<UnitId, u32>,
}

impl SampleVotes {
    pub fn predicted(&self) -> BTreeSet<UnitId> {
        self.votes
            .iter()
            .filter(|(_, v)| strict_majority(**v, self.n_samples))
            .map(|(u, _)| *u)
            .collect()
    }
}

pub fn aggregate_samples(samples: &[BTreeSet<UnitId>]) -> Result<SampleVotes, ExtractionError> {
    if samples.is_empty() {
        return Err(ExtractionError::NoSamples);
    }
    let mut votes = BTreeMap::new();
    for s in samples {
        for u in s {
            *votes.entry(*u).or_insert(0u32) += 1;
        }
    }
    Ok(SampleVotes {
        n_samples: samples.len() as u32,
        votes,
    })
}

/// Identifies one grid cell (or one external system).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigDescriptor {
    pub model: String,
    /// `None` for external baselines.
    pub temperature: Option<f64>,
    /// Persona group when role-playing.
    pub role: Option<GroupId>,
    pub icl: bool,
}

impl ConfigDescriptor {
    pub fn baseline(system: &str) -> Self {
        ConfigDescriptor {
            model: system.to_string(),
            temperature: None,
            role: None,
            icl: false,
        }
    }

    /// Order used in every report: model, temperature, role, icl.
    pub fn report_cmp(&self, other: &Self) -> Ordering {
        let temp = |t: Option<f64>| t.unwrap_or(f64::NEG_INFINITY);
        self.model
            .cmp(&other.model)
            .then(temp(self.temperature).total_cmp(&temp(other.temperature)))
            .then(self.role.is_some().cmp(&other.role.is_some()))
            .then(self.icl.cmp(&other.icl))
            .then(self.role.cmp(&other.role))
    }

    pub fn temperature_label(&self) -> String {
        self.temperature.map(|t| format!("{t:.1}")).unwrap_or_default()
    }

    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.model,
            self.temperature_label(),
            self.role.map(|g| g.to_string()).unwrap_or_else(|| "-".into()),
            if self.icl { "icl" } else { "zero-shot" }
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseTally {
    pub clean: u32,
    pub recovered: u32,
    pub failed: u32,
}

impl ParseTally {
    pub fn record(&mut self, status: ParseStatus) {
        match status {
            ParseStatus::Clean => self.clean += 1,
            ParseStatus::Recovered => self.recovered += 1,
            ParseStatus::Failed => self.failed += 1,
        }
    }
}

/// Binary per-unit predictions of one configuration over the whole corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub config: ConfigDescriptor,
    pub corpus_digest: String,
    pub n_samples: u32,
    /// Indexed by `UnitId`.
    pub sample_votes: Vec<u32>,
    /// Indexed by `UnitId`.
    pub predicted: Vec<bool>,
    pub parse: ParseTally,
}

impl PredictionSet {
    pub fn empty(corpus: &Corpus, config: ConfigDescriptor, n_samples: u32) -> Self {
        PredictionSet {
            config,
            corpus_digest: corpus.digest(),
            n_samples,
            sample_votes: vec![0; corpus.unit_count()],
            predicted: vec![false; corpus.unit_count()],
            parse: ParseTally::default(),
        }
    }

    /// Writes one sentence's aggregated votes into the set.
    pub fn absorb(&mut self, votes: &SampleVotes) {
        debug_assert_eq!(votes.n_samples, self.n_samples);
        for (u, v) in &votes.votes {
            self.sample_votes[u.0] = *v;
            self.predicted[u.0] = strict_majority(*v, self.n_samples);
        }
    }

    pub fn predicted_units(&self) -> impl Iterator<Item = UnitId> + '_ {
        self.predicted
            .iter()
            .enumerate()
            .filter(|(_, p)| **p)
            .map(|(i, _)| UnitId(i))
    }

    pub fn unit_count(&self) -> usize {
        self.predicted.len()
    }
}

/// Parses and aligns every raw sample for a sentence, then aggregates them.
/// Failed parses count as empty samples.
pub fn predict_sentence<S: AsRef<str>>(
    corpus: &Corpus,
    sentence_id: u32,
    raw_samples: &[S],
    tally: &mut ParseTally,
) -> Result<SampleVotes, ExtractionError> {
    let mut per_sample = Vec::with_capacity(raw_samples.len());
    for raw in raw_samples {
        let parsed = parse_list_literal(raw.as_ref());
        tally.record(parsed.parse_status);
        per_sample.push(align_terms(corpus, sentence_id, &parsed.terms)?);
    }
    aggregate_samples(&per_sample)
}

#[derive(Debug, Deserialize)]
struct BaselineLine {
    system: String,
    sentence_id: u32,
    terms: Vec<String>,
}

/// Turns externally produced term lists (`{system, sentence_id, terms}` per
/// line) into one single-sample prediction set per system.
pub fn ingest_baseline(corpus: &Corpus, text: &str) -> Result<Vec<PredictionSet>, ExtractionError> {
    let mut per_system: BTreeMap<String, BTreeMap<u32, Vec<String>>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: BaselineLine =
            serde_json::from_str(line).map_err(|e| ExtractionError::BaselineFormat {
                line: i + 1,
                message: e.to_string(),
            })?;
        corpus.sentence(row.sentence_id)?;
        per_system
            .entry(row.system)
            .or_default()
            .entry(row.sentence_id)
            .or_default()
            .extend(row.terms);
    }
    let mut out = Vec::new();
    for (system, sentences) in per_system {
        let mut set = PredictionSet::empty(corpus, ConfigDescriptor::baseline(&system), 1);
        for (sid, terms) in sentences {
            let units = align_terms(corpus, sid, &terms)?;
            set.absorb(&aggregate_samples(&[units])?);
        }
        out.push(set);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces(corpus: &Corpus, ids: &BTreeSet<UnitId>) -> Vec<String> {
        ids.iter().map(|u| corpus.unit(*u).surface.clone()).collect()
    }

    #[test]
    fn clean_list() {
        let p = parse_list_literal(
            "['distal anastomosis', 'anterior tibial artery', 'posterior tibial artery']",
        );
        assert_eq!(p.parse_status, ParseStatus::Clean);
        assert_eq!(p.terms.len(), 3);
        assert_eq!(p.terms[1], "anterior tibial artery");
        let empty = parse_list_literal("  []\n");
        assert_eq!((empty.parse_status, empty.terms.len()), (ParseStatus::Clean, 0));
    }

    #[test]
    fn recovered_list_amid_prose() {
        let p = parse_list_literal(
            "Sure! Here are the terms: [\"pulmonary embolism\"] Hope this helps.",
        );
        assert_eq!(p.parse_status, ParseStatus::Recovered);
        assert_eq!(p.terms, ["pulmonary embolism"]);
        let fenced = parse_list_literal("```python\n['a', \"b's\",]\n```");
        assert_eq!(fenced.parse_status, ParseStatus::Recovered);
        assert_eq!(fenced.terms, ["a", "b's"]);
    }

    #[test]
    fn escapes_and_skipped_brackets() {
        let p = parse_list_literal(r"[see note] then ['it\'s', ' padded ']");
        assert_eq!(p.parse_status, ParseStatus::Recovered);
        assert_eq!(p.terms, ["it's", "padded"]);
    }

    #[test]
    fn failures() {
        for raw in ["", "no list here", "[unquoted, items]", "['open", "['a' 'b']", "[1, 2]"] {
            let p = parse_list_literal(raw);
            assert_eq!(p.parse_status, ParseStatus::Failed, "{raw:?}");
            assert!(p.terms.is_empty());
        }
    }

    #[test]
    fn marking_on_sentence_17() {
        let corpus = Corpus::bundled();
        let words: Vec<&str> = corpus.sentence(17).unwrap().words.iter().map(|w| w.text.as_str()).collect();
        // oracle: brute-force scan of the token list
        let find = |seq: &[&str]| -> BTreeSet<usize> {
            let mut out = BTreeSet::new();
            for s in 0..words.len() {
                if s + seq.len() <= words.len()
                    && (0..seq.len()).all(|k| words[s + k].to_lowercase() == seq[k].to_lowercase())
                {
                    out.extend(s..s + seq.len());
                }
            }
            out
        };

        let m = mark_occurrences(&corpus, 17, &["pulmonary embolism"]).unwrap();
        assert_eq!(m.marked, find(&["pulmonary", "embolism"]));
        assert_eq!(m.marked.len(), 2);
        let units = collect_units(&corpus, &m).unwrap();
        assert_eq!(surfaces(&corpus, &units), ["pulmonary embolism"]);

        let m = mark_occurrences(&corpus, 17, &["pulmonary"]).unwrap();
        assert_eq!(m.marked, find(&["pulmonary"]));
        assert!(m.marked.contains(&0), "capitalized 'Pulmonary' marked");
        let embolism = words.iter().position(|w| *w == "embolism").unwrap();
        assert!(!m.marked.contains(&embolism));

        let units = align_terms(&corpus, 17, &["CT scan"]).unwrap();
        assert_eq!(surfaces(&corpus, &units), ["CT", "scan"]);

        assert!(mark_occurrences(&corpus, 17, &["zzz nonexistent"]).unwrap().marked.is_empty());
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("Pulmonary’s"), "pulmonary's");
        assert_eq!(normalize("P\u{2013}wave"), "p-wave");
        let corpus = Corpus::bundled();
        let units = align_terms(&corpus, 15, &["p\u{2011}wave duration"]).unwrap();
        assert_eq!(surfaces(&corpus, &units), ["P-wave duration"]);
    }

    #[test]
    fn all_words_marked_gives_all_units() {
        let corpus = Corpus::bundled();
        let s = corpus.sentence(2).unwrap();
        let marked = MarkedSentence {
            sentence_id: 2,
            marked: (0..s.words.len()).collect(),
        };
        assert_eq!(
            collect_units(&corpus, &marked).unwrap(),
            s.unit_ids().collect::<BTreeSet<_>>()
        );
    }

    #[test]
    fn sample_majority() {
        let u = UnitId(7);
        let with = |k: usize, n: usize| -> Vec<BTreeSet<UnitId>> {
            (0..n).map(|i| if i < k { BTreeSet::from([u]) } else { BTreeSet::new() }).collect()
        };
        assert!(aggregate_samples(&with(11, 20)).unwrap().predicted().contains(&u));
        assert!(!aggregate_samples(&with(10, 20)).unwrap().predicted().contains(&u));
        assert!(aggregate_samples(&with(1, 1)).unwrap().predicted().contains(&u));
        assert_eq!(aggregate_samples(&[]), Err(ExtractionError::NoSamples));
    }

    #[test]
    fn failed_parse_votes_nothing() {
        let corpus = Corpus::bundled();
        let mut tally = ParseTally::default();
        let votes = predict_sentence(
            &corpus,
            17,
            &["['pulmonary embolism']", "I cannot help with that.", "[\"pulmonary embolism\", \"pulmonary embolism\"]"],
            &mut tally,
        )
        .unwrap();
        assert_eq!(tally, ParseTally { clean: 2, recovered: 0, failed: 1 });
        assert_eq!(votes.n_samples, 3);
        assert_eq!(votes.votes.values().copied().collect::<Vec<_>>(), [2]);
    }

    #[test]
    fn baseline_ingestion() {
        let corpus = Corpus::bundled();
        let text = "{\"system\":\"medjex\",\"sentence_id\":17,\"terms\":[\"pulmonary embolism\"]}\n\
                    {\"system\":\"scispacy\",\"sentence_id\":1,\"terms\":[\"vein graft\",\"foot\"]}\n";
        let sets = ingest_baseline(&corpus, text).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].config.model, "medjex");
        assert_eq!(sets[0].predicted_units().count(), 1);
        assert_eq!(sets[1].predicted_units().count(), 2);
        assert!(ingest_baseline(&corpus, "{\"system\":\"x\",\"sentence_id\":99,\"terms\":[]}").is_err());
        assert!(matches!(
            ingest_baseline(&corpus, "not json"),
            Err(ExtractionError::BaselineFormat { line: 1, .. })
        ));
    }

    #[test]
    fn descriptor_ordering() {
        let mut v = [ConfigDescriptor { model: "b".into(), temperature: Some(0.0), role: None, icl: false },
            ConfigDescriptor { model: "a".into(), temperature: Some(1.0), role: Some(GroupId::GenderF), icl: false },
            ConfigDescriptor { model: "a".into(), temperature: Some(1.0), role: None, icl: true },
            ConfigDescriptor { model: "a".into(), temperature: Some(0.2), role: None, icl: false },
            ConfigDescriptor::baseline("a")];
        v.sort_by(|x, y| x.report_cmp(y));
        let keys: Vec<String> = v.iter().map(|d| d.key()).collect();
        assert_eq!(
            keys,
            [
                "a||-|zero-shot",
                "a|0.2|-|zero-shot",
                "a|1.0|-|icl",
                "a|1.0|Gender:F|zero-shot",
                "b|0.0|-|zero-shot"
            ]
        );
    }
}
