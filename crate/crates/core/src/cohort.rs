//! Annotator demographics, merged evaluation groups and majority-vote gold labels.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, UnitId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CohortError {
    #[error("invalid {field} value {value:?}")]
    Category { field: &'static str, value: String },
    #[error("duplicate annotator id {0:?}")]
    DuplicateAnnotator(String),
    #[error("record references unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("annotator {annotator:?} has more than one record for sentence {sentence_id}")]
    DuplicateRecord { annotator: String, sentence_id: u32 },
    #[error("unit {unit} is not part of sentence {sentence_id}")]
    UnitOutsideSentence { unit: UnitId, sentence_id: u32 },
    #[error("sentence {sentence_id}: selection {selection:?} {reason}")]
    Selection {
        sentence_id: u32,
        selection: String,
        reason: &'static str,
    },
    #[error("group {0} has no members")]
    EmptyGroup(GroupId),
    #[error("label sets cover different unit universes ({0} vs {1} units)")]
    UniverseMismatch(usize, usize),
    #[error("unknown group {0:?}")]
    UnknownGroup(String),
    #[error("annotations line {line}: {message}")]
    Json { line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Parses a raw crowd-export category case-insensitively after trimming.
fn match_category<T: Copy>(
    field: &'static str,
    raw: &str,
    table: &[(&str, T)],
) -> Result<T, CohortError> {
    let needle = raw.trim();
    table
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(needle))
        .map(|(_, v)| *v)
        .ok_or_else(|| CohortError::Category {
            field,
            value: raw.to_string(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgeBand {
    A18to24,
    A25to34,
    A35to44,
    A45to54,
    A55to64,
    A65to74,
    A75Plus,
}

impl AgeBand {
    const TABLE: [(&'static str, AgeBand); 7] = [
        ("18-24", AgeBand::A18to24),
        ("25-34", AgeBand::A25to34),
        ("35-44", AgeBand::A35to44),
        ("45-54", AgeBand::A45to54),
        ("55-64", AgeBand::A55to64),
        ("65-74", AgeBand::A65to74),
        ("75+", AgeBand::A75Plus),
    ];

    pub fn parse(raw: &str) -> Result<Self, CohortError> {
        match_category("age_band", raw, &Self::TABLE)
    }

    pub fn as_str(self) -> &'static str {
        Self::TABLE.iter().find(|(_, v)| *v == self).unwrap().0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Education {
    Low,
    HighSchool,
    Bachelor,
    Master,
}

impl Education {
    const TABLE: [(&'static str, Education); 4] = [
        ("Low", Education::Low),
        ("HS", Education::HighSchool),
        ("BA", Education::Bachelor),
        ("MA", Education::Master),
    ];

    pub fn parse(raw: &str) -> Result<Self, CohortError> {
        match_category("education", raw, &Self::TABLE)
    }

    pub fn as_str(self) -> &'static str {
        Self::TABLE.iter().find(|(_, v)| *v == self).unwrap().0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HealthLiteracy {
    Never,
    Rarely,
    Sometimes,
    Often,
    Always,
}

impl HealthLiteracy {
    const TABLE: [(&'static str, HealthLiteracy); 5] = [
        ("never", HealthLiteracy::Never),
        ("rarely", HealthLiteracy::Rarely),
        ("sometimes", HealthLiteracy::Sometimes),
        ("often", HealthLiteracy::Often),
        ("always", HealthLiteracy::Always),
    ];

    pub fn parse(raw: &str) -> Result<Self, CohortError> {
        match_category("health_literacy", raw, &Self::TABLE)
    }

    pub fn as_str(self) -> &'static str {
        Self::TABLE.iter().find(|(_, v)| *v == self).unwrap().0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Female,
    Male,
    Other,
}

impl Gender {
    const TABLE: [(&'static str, Gender); 3] = [
        ("F", Gender::Female),
        ("M", Gender::Male),
        ("Other", Gender::Other),
    ];

    pub fn parse(raw: &str) -> Result<Self, CohortError> {
        match_category("gender", raw, &Self::TABLE)
    }

    pub fn as_str(self) -> &'static str {
        Self::TABLE.iter().find(|(_, v)| *v == self).unwrap().0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    pub age_band: AgeBand,
    pub education: Education,
    pub health_literacy: HealthLiteracy,
    pub gender: Gender,
}

impl AnnotatorProfile {
    pub fn parse(
        annotator_id: &str,
        age_band: &str,
        education: &str,
        health_literacy: &str,
        gender: &str,
    ) -> Result<Self, CohortError> {
        Ok(AnnotatorProfile {
            annotator_id: annotator_id.to_string(),
            age_band: AgeBand::parse(age_band)?,
            education: Education::parse(education)?,
            health_literacy: HealthLiteracy::parse(health_literacy)?,
            gender: Gender::parse(gender)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupType {
    Education,
    HealthLiteracy,
    Gender,
    Age,
}

impl GroupType {
    pub const ALL: [GroupType; 4] = [
        GroupType::Education,
        GroupType::HealthLiteracy,
        GroupType::Gender,
        GroupType::Age,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupType::Education => "Education",
            GroupType::HealthLiteracy => "HealthLiteracy",
            GroupType::Gender => "Gender",
            GroupType::Age => "Age",
        }
    }
}

/// One of the 14 merged evaluation groups, in reporting column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupId {
    EduHsOrLess,
    EduBachelor,
    EduMaster,
    HlNever,
    HlRarely,
    HlSometimesOrMore,
    GenderF,
    GenderM,
    Age18to24,
    Age25to34,
    Age35to44,
    Age45to54,
    Age55to64,
    Age65Plus,
}

impl GroupId {
    pub const ALL: [GroupId; 14] = [
        GroupId::EduHsOrLess,
        GroupId::EduBachelor,
        GroupId::EduMaster,
        GroupId::HlNever,
        GroupId::HlRarely,
        GroupId::HlSometimesOrMore,
        GroupId::GenderF,
        GroupId::GenderM,
        GroupId::Age18to24,
        GroupId::Age25to34,
        GroupId::Age35to44,
        GroupId::Age45to54,
        GroupId::Age55to64,
        GroupId::Age65Plus,
    ];

    pub fn group_type(self) -> GroupType {
        use GroupId::*;
        match self {
            EduHsOrLess | EduBachelor | EduMaster => GroupType::Education,
            HlNever | HlRarely | HlSometimesOrMore => GroupType::HealthLiteracy,
            GenderF | GenderM => GroupType::Gender,
            _ => GroupType::Age,
        }
    }

    pub fn label(self) -> &'static str {
        use GroupId::*;
        match self {
            EduHsOrLess => "≤HS",
            EduBachelor => "BA",
            EduMaster => "MA",
            HlNever => "never",
            HlRarely => "rarely",
            HlSometimesOrMore => "≥sometimes",
            GenderF => "F",
            GenderM => "M",
            Age18to24 => "18-24",
            Age25to34 => "25-34",
            Age35to44 => "35-44",
            Age45to54 => "45-54",
            Age55to64 => "55-64",
            Age65Plus => "65+",
        }
    }

    /// Parses `Type:label` (or a bare label, which is unambiguous). ASCII
    /// spellings `<=HS` and `>=sometimes` are accepted.
    pub fn parse(raw: &str) -> Result<Self, CohortError> {
        let raw = raw.trim();
        let (ty, label) = match raw.split_once(':') {
            Some((t, l)) => (Some(t.trim()), l.trim()),
            None => (None, raw),
        };
        let label = label.replace("<=", "≤").replace(">=", "≥");
        GroupId::ALL
            .into_iter()
            .find(|g| {
                g.label().eq_ignore_ascii_case(&label)
                    && ty.is_none_or(|t| g.group_type().as_str().eq_ignore_ascii_case(t))
            })
            .ok_or_else(|| CohortError::UnknownGroup(raw.to_string()))
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.group_type().as_str(), self.label())
    }
}

impl FromStr for GroupId {
    type Err = CohortError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GroupId::parse(s)
    }
}

impl Serialize for GroupId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroupId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        GroupId::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Merged groups an annotator belongs to: one per group type, except that
/// `Other` gender contributes no Gender group.
pub fn assign_groups(profile: &AnnotatorProfile) -> BTreeSet<GroupId> {
    let age = match profile.age_band {
        AgeBand::A18to24 => GroupId::Age18to24,
        AgeBand::A25to34 => GroupId::Age25to34,
        AgeBand::A35to44 => GroupId::Age35to44,
        AgeBand::A45to54 => GroupId::Age45to54,
        AgeBand::A55to64 => GroupId::Age55to64,
        AgeBand::A65to74 | AgeBand::A75Plus => GroupId::Age65Plus,
    };
    let education = match profile.education {
        Education::Low | Education::HighSchool => GroupId::EduHsOrLess,
        Education::Bachelor => GroupId::EduBachelor,
        Education::Master => GroupId::EduMaster,
    };
    let literacy = match profile.health_literacy {
        HealthLiteracy::Never => GroupId::HlNever,
        HealthLiteracy::Rarely => GroupId::HlRarely,
        _ => GroupId::HlSometimesOrMore,
    };
    let mut out = BTreeSet::from([age, education, literacy]);
    match profile.gender {
        Gender::Female => {
            out.insert(GroupId::GenderF);
        }
        Gender::Male => {
            out.insert(GroupId::GenderM);
        }
        Gender::Other => {}
    }
    out
}

/// Member annotator ids per group, over all 14 groups (empty groups included).
pub fn group_membership(
    cohort: &[AnnotatorProfile],
) -> Result<BTreeMap<GroupId, Vec<String>>, CohortError> {
    check_unique(cohort)?;
    let mut out: BTreeMap<GroupId, Vec<String>> =
        GroupId::ALL.iter().map(|g| (*g, Vec::new())).collect();
    for p in cohort {
        for g in assign_groups(p) {
            out.get_mut(&g).unwrap().push(p.annotator_id.clone());
        }
    }
    Ok(out)
}

fn check_unique(cohort: &[AnnotatorProfile]) -> Result<(), CohortError> {
    let mut seen = BTreeSet::new();
    for p in cohort {
        if !seen.insert(p.annotator_id.as_str()) {
            return Err(CohortError::DuplicateAnnotator(p.annotator_id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub annotator_id: String,
    pub sentence_id: u32,
    pub selected_units: BTreeSet<UnitId>,
}

/// Whose votes a label set aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelScope {
    Group(GroupId),
    /// Every annotator in the cohort.
    Pooled,
}

impl fmt::Display for LabelScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelScope::Group(g) => g.fmt(f),
            LabelScope::Pooled => f.write_str("pooled"),
        }
    }
}

impl Serialize for LabelScope {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LabelScope {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.eq_ignore_ascii_case("pooled") {
            Ok(LabelScope::Pooled)
        } else {
            GroupId::parse(&s)
                .map(LabelScope::Group)
                .map_err(serde::de::Error::custom)
        }
    }
}

/// Per-unit vote counts and strict-majority labels for one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLabelSet {
    pub scope: LabelScope,
    pub member_count: u32,
    /// Indexed by `UnitId`.
    pub vote_counts: Vec<u32>,
    /// Indexed by `UnitId`; true = jargon.
    pub labels: Vec<bool>,
}

impl GroupLabelSet {
    pub fn from_votes(scope: LabelScope, member_count: u32, vote_counts: Vec<u32>) -> Self {
        let labels = vote_counts
            .iter()
            .map(|&v| strict_majority(v, member_count))
            .collect();
        GroupLabelSet {
            scope,
            member_count,
            vote_counts,
            labels,
        }
    }

    pub fn is_jargon(&self, unit: UnitId) -> bool {
        self.labels[unit.0]
    }

    pub fn jargon_units(&self) -> impl Iterator<Item = UnitId> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l)
            .map(|(i, _)| UnitId(i))
    }

    pub fn unit_count(&self) -> usize {
        self.labels.len()
    }
}

/// `votes > total / 2` without floating point; ties fail.
pub fn strict_majority(votes: u32, total: u32) -> bool {
    2 * u64::from(votes) > u64::from(total)
}

fn tally(
    corpus: &Corpus,
    records: &[AnnotationRecord],
    cohort: &[AnnotatorProfile],
    include: impl Fn(&AnnotatorProfile) -> bool,
) -> Result<(u32, Vec<u32>), CohortError> {
    check_unique(cohort)?;
    let by_id: HashMap<&str, &AnnotatorProfile> =
        cohort.iter().map(|p| (p.annotator_id.as_str(), p)).collect();
    let mut seen = BTreeSet::new();
    let mut votes = vec![0u32; corpus.unit_count()];
    for r in records {
        let profile = by_id
            .get(r.annotator_id.as_str())
            .ok_or_else(|| CohortError::UnknownAnnotator(r.annotator_id.clone()))?;
        if !seen.insert((r.annotator_id.as_str(), r.sentence_id)) {
            return Err(CohortError::DuplicateRecord {
                annotator: r.annotator_id.clone(),
                sentence_id: r.sentence_id,
            });
        }
        let sentence = corpus.sentence(r.sentence_id)?;
        for &u in &r.selected_units {
            if !sentence.unit_ids().any(|x| x == u) {
                return Err(CohortError::UnitOutsideSentence {
                    unit: u,
                    sentence_id: r.sentence_id,
                });
            }
        }
        if include(profile) {
            for &u in &r.selected_units {
                votes[u.0] += 1;
            }
        }
    }
    let members = cohort.iter().filter(|p| include(p)).count() as u32;
    Ok((members, votes))
}

/// Majority-vote gold labels for one merged group. Annotators with no record
/// for a sentence count as selecting nothing there.
pub fn build_group_labels(
    corpus: &Corpus,
    records: &[AnnotationRecord],
    cohort: &[AnnotatorProfile],
    group: GroupId,
) -> Result<GroupLabelSet, CohortError> {
    let (members, votes) = tally(corpus, records, cohort, |p| assign_groups(p).contains(&group))?;
    if members == 0 {
        return Err(CohortError::EmptyGroup(group));
    }
    Ok(GroupLabelSet::from_votes(LabelScope::Group(group), members, votes))
}

/// Majority-vote labels over the whole cohort.
pub fn build_pooled_labels(
    corpus: &Corpus,
    records: &[AnnotationRecord],
    cohort: &[AnnotatorProfile],
) -> Result<GroupLabelSet, CohortError> {
    let (members, votes) = tally(corpus, records, cohort, |_| true)?;
    if members == 0 {
        return Err(CohortError::UnknownGroup("pooled (empty cohort)".into()));
    }
    Ok(GroupLabelSet::from_votes(LabelScope::Pooled, members, votes))
}

/// Units whose labels differ between two label sets, in id order.
pub fn label_diff(a: &GroupLabelSet, b: &GroupLabelSet) -> Result<Vec<UnitId>, CohortError> {
    if a.unit_count() != b.unit_count() {
        return Err(CohortError::UniverseMismatch(a.unit_count(), b.unit_count()));
    }
    Ok(a.labels
        .iter()
        .zip(&b.labels)
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(i, _)| UnitId(i))
        .collect())
}

#[derive(Debug, Deserialize)]
struct AnnotatorLine {
    annotator_id: String,
    age_band: String,
    education: String,
    health_literacy: String,
    gender: String,
    #[serde(default)]
    selections: BTreeMap<String, Vec<String>>,
}

/// Resolves a selection string to a unit: `start:length` spans are
/// authoritative, anything else is matched against unit surfaces.
pub fn resolve_selection(
    corpus: &Corpus,
    sentence_id: u32,
    selection: &str,
) -> Result<UnitId, CohortError> {
    let units = corpus.sentence_units(sentence_id)?;
    let err = |reason| CohortError::Selection {
        sentence_id,
        selection: selection.to_string(),
        reason,
    };
    if let Some((a, b)) = selection.split_once(':') {
        if let (Ok(start), Ok(length)) = (a.trim().parse::<usize>(), b.trim().parse::<usize>()) {
            return units
                .iter()
                .find(|u| u.start == start && u.length == length)
                .map(|u| u.id)
                .ok_or_else(|| err("does not match a term unit span"));
        }
    }
    let wanted = crate::extraction::normalize(selection.trim());
    let mut hits = units
        .iter()
        .filter(|u| crate::extraction::normalize(&u.surface) == wanted);
    match (hits.next(), hits.next()) {
        (Some(u), None) => Ok(u.id),
        (None, _) => Err(err("matches no term unit")),
        (Some(_), Some(_)) => Err(err("is ambiguous; use a start:length span")),
    }
}

/// Reads the annotations JSON Lines file.
pub fn parse_annotations(
    corpus: &Corpus,
    text: &str,
) -> Result<(Vec<AnnotatorProfile>, Vec<AnnotationRecord>), CohortError> {
    let mut cohort = Vec::new();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: AnnotatorLine = serde_json::from_str(line).map_err(|e| CohortError::Json {
            line: i + 1,
            message: e.to_string(),
        })?;
        let profile = AnnotatorProfile::parse(
            row.annotator_id.trim(),
            &row.age_band,
            &row.education,
            &row.health_literacy,
            &row.gender,
        )?;
        for (sid, selections) in &row.selections {
            let sentence_id: u32 = sid.trim().parse().map_err(|_| CohortError::Json {
                line: i + 1,
                message: format!("sentence key {sid:?} is not an integer"),
            })?;
            let selected_units = selections
                .iter()
                .map(|s| resolve_selection(corpus, sentence_id, s))
                .collect::<Result<_, _>>()?;
            records.push(AnnotationRecord {
                annotator_id: profile.annotator_id.clone(),
                sentence_id,
                selected_units,
            });
        }
        cohort.push(profile);
    }
    check_unique(&cohort)?;
    Ok((cohort, records))
}

/// Builds all 14 group label sets; empty groups are an error.
pub fn build_all_labels(
    corpus: &Corpus,
    records: &[AnnotationRecord],
    cohort: &[AnnotatorProfile],
) -> Result<Vec<GroupLabelSet>, CohortError> {
    GroupId::ALL
        .iter()
        .map(|g| build_group_labels(corpus, records, cohort, *g))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(id: &str, age: &str, edu: &str, hl: &str, g: &str) -> AnnotatorProfile {
        AnnotatorProfile::parse(id, age, edu, hl, g).unwrap()
    }

    #[test]
    fn merging_rules() {
        let p = profile("a", "75+", "HS", "often", "F");
        assert_eq!(
            assign_groups(&p),
            BTreeSet::from([
                GroupId::Age65Plus,
                GroupId::EduHsOrLess,
                GroupId::HlSometimesOrMore,
                GroupId::GenderF
            ])
        );
        let p = profile("b", "25-34", "BA", "never", "M");
        assert_eq!(
            assign_groups(&p),
            BTreeSet::from([
                GroupId::Age25to34,
                GroupId::EduBachelor,
                GroupId::HlNever,
                GroupId::GenderM
            ])
        );
        let p = profile("c", "35-44", "MA", "rarely", "Other");
        let groups = assign_groups(&p);
        assert_eq!(groups.len(), 3);
        assert!(groups.iter().all(|g| g.group_type() != GroupType::Gender));
    }

    #[test]
    fn categories_are_trimmed_and_case_insensitive() {
        let p = profile("x", " 75+ ", "hs", "OFTEN", "f");
        assert_eq!(p.education, Education::HighSchool);
        assert_eq!(p.gender, Gender::Female);
        assert!(matches!(
            AnnotatorProfile::parse("x", "90-99", "HS", "never", "F"),
            Err(CohortError::Category { field: "age_band", .. })
        ));
    }

    #[test]
    fn group_id_text_round_trip() {
        for g in GroupId::ALL {
            assert_eq!(GroupId::parse(&g.to_string()).unwrap(), g);
        }
        assert_eq!(GroupId::parse("<=HS").unwrap(), GroupId::EduHsOrLess);
        assert_eq!(GroupId::parse("HealthLiteracy:>=sometimes").unwrap(), GroupId::HlSometimesOrMore);
        assert!(GroupId::parse("Gender:BA").is_err());
    }

    #[test]
    fn duplicate_annotator_rejected() {
        let c = vec![profile("a", "18-24", "BA", "never", "F"), profile("a", "18-24", "BA", "never", "F")];
        assert_eq!(group_membership(&c), Err(CohortError::DuplicateAnnotator("a".into())));
    }

    fn single_unit_corpus() -> Corpus {
        Corpus::parse("x [y z] .").unwrap()
    }

    fn cohort_of(n: usize) -> Vec<AnnotatorProfile> {
        (0..n).map(|i| profile(&format!("a{i}"), "18-24", "BA", "never", "F")).collect()
    }

    fn records_selecting(k: usize, unit: UnitId) -> Vec<AnnotationRecord> {
        (0..k)
            .map(|i| AnnotationRecord {
                annotator_id: format!("a{i}"),
                sentence_id: 1,
                selected_units: BTreeSet::from([unit]),
            })
            .collect()
    }

    #[test]
    fn strict_majority_labels() {
        let corpus = single_unit_corpus();
        let u = UnitId(1);
        let labels = |n, k| {
            build_group_labels(&corpus, &records_selecting(k, u), &cohort_of(n), GroupId::Age18to24)
                .unwrap()
        };
        let l = labels(16, 9);
        assert_eq!((l.member_count, l.vote_counts[1], l.labels[1]), (16, 9, true));
        assert!(!labels(4, 2).labels[1]);
        assert!(labels(4, 4).labels[1]);
        assert!(!labels(4, 0).labels[1]);
        assert!(!labels(4, 4).labels[0]);
    }

    #[test]
    fn record_errors() {
        let corpus = single_unit_corpus();
        let cohort = cohort_of(2);
        let mut recs = records_selecting(1, UnitId(1));
        recs[0].annotator_id = "ghost".into();
        assert_eq!(
            build_group_labels(&corpus, &recs, &cohort, GroupId::GenderF),
            Err(CohortError::UnknownAnnotator("ghost".into()))
        );
        let mut recs = records_selecting(1, UnitId(1));
        recs.push(recs[0].clone());
        assert!(matches!(
            build_group_labels(&corpus, &recs, &cohort, GroupId::GenderF),
            Err(CohortError::DuplicateRecord { .. })
        ));
        assert_eq!(
            build_group_labels(&corpus, &[], &cohort, GroupId::GenderM),
            Err(CohortError::EmptyGroup(GroupId::GenderM))
        );
    }

    #[test]
    fn diff_reflexive_and_single() {
        let a = GroupLabelSet::from_votes(LabelScope::Pooled, 3, vec![0, 2, 3, 1]);
        assert!(label_diff(&a, &a).unwrap().is_empty());
        let b = GroupLabelSet::from_votes(LabelScope::Pooled, 3, vec![0, 1, 3, 1]);
        assert_eq!(label_diff(&a, &b).unwrap(), vec![UnitId(1)]);
        assert_eq!(label_diff(&b, &a).unwrap(), vec![UnitId(1)]);
        let c = GroupLabelSet::from_votes(LabelScope::Pooled, 3, vec![0]);
        assert_eq!(label_diff(&a, &c), Err(CohortError::UniverseMismatch(4, 1)));
    }

    #[test]
    fn diff_matches_brute_force_on_three_groups() {
        // Three age groups of 3 annotators each over a 12-unit sentence with
        // a fixed, hand-constructed vote pattern.
        let corpus = Corpus::parse("a b c d e f g h i j k l").unwrap();
        let ages = ["18-24", "25-34", "35-44"];
        let cohort: Vec<_> = (0..9)
            .map(|i| profile(&format!("p{i}"), ages[i / 3], "BA", "never", "M"))
            .collect();
        let records: Vec<_> = (0..9)
            .map(|i| AnnotationRecord {
                annotator_id: format!("p{i}"),
                sentence_id: 1,
                selected_units: (0..12).filter(|u| (u * 7 + i * 5) % 4 < 2).map(UnitId).collect(),
            })
            .collect();
        let groups = [GroupId::Age18to24, GroupId::Age25to34, GroupId::Age35to44];
        let sets: Vec<_> = groups
            .iter()
            .map(|g| build_group_labels(&corpus, &records, &cohort, *g).unwrap())
            .collect();
        for a in 0..3 {
            for b in 0..3 {
                let mut expected = Vec::new();
                for u in 0..12 {
                    let votes = |g: usize| {
                        (g * 3..g * 3 + 3)
                            .filter(|i| records[*i].selected_units.contains(&UnitId(u)))
                            .count()
                    };
                    if (votes(a) >= 2) != (votes(b) >= 2) {
                        expected.push(UnitId(u));
                    }
                }
                assert_eq!(label_diff(&sets[a], &sets[b]).unwrap(), expected);
            }
        }
    }

    #[test]
    fn annotations_file_resolves_spans_and_surfaces() {
        let corpus = Corpus::parse("The [vein graft] was the vein .").unwrap();
        let text = r#"{"annotator_id":"t1","age_band":"18-24","education":"BA","health_literacy":"never","gender":"F","selections":{"1":["vein graft","5:1"]}}"#;
        let (cohort, records) = parse_annotations(&corpus, text).unwrap();
        assert_eq!(cohort.len(), 1);
        assert_eq!(records[0].selected_units, BTreeSet::from([UnitId(1), UnitId(4)]));

        let ambiguous = text.replace("\"5:1\"", "\"the\"");
        assert!(matches!(
            parse_annotations(&corpus, &ambiguous),
            Err(CohortError::Selection { reason, .. }) if reason.contains("ambiguous")
        ));
        let bad_span = text.replace("\"5:1\"", "\"1:1\"");
        assert!(parse_annotations(&corpus, &bad_span).is_err());
    }
}
