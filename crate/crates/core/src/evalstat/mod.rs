//! Per-group precision/recall/F1, macro-F1, role-play improvement counts and
//! signed-rank significance.

mod wilcoxon;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{GroupId, GroupLabelSet};
use crate::exec::ExecMode;
use crate::extraction::PredictionSet;

pub use wilcoxon::{wilcoxon_signed_rank, wilcoxon_with, WilcoxonMethod, WilcoxonResult, EXACT_LIMIT};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("predictions cover {0} units but labels cover {1}")]
    UniverseMismatch(usize, usize),
    #[error("missing score row for group {0}")]
    MissingGroup(GroupId),
    #[error("duplicate score row for group {0}")]
    DuplicateGroup(GroupId),
    #[error("score row for group {0} is outside the evaluated set")]
    UnexpectedGroup(GroupId),
    #[error("no score rows")]
    NoRows,
    #[error("no pairs to compare")]
    NoPairs,
    #[error("every paired difference is zero")]
    AllZeroDifferences,
    #[error("non-finite score in pairs")]
    NonFinite,
    #[error("exact enumeration limited to 63 nonzero differences, got {0}")]
    ExactTooLarge(usize),
    #[error("paired score keys do not match: {0}")]
    KeyMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub group: GroupId,
    pub true_positives: u32,
    pub predicted_count: u32,
    pub reference_count: u32,
    /// Percent scale; NaN (serialized as null) when only an F1 is known.
    #[serde(with = "nan_as_null")]
    pub precision: f64,
    #[serde(with = "nan_as_null")]
    pub recall: f64,
    pub f1: f64,
}

impl ScoreRow {
    /// Builds a row from counts; empty denominators give 0.
    pub fn from_counts(group: GroupId, tp: u32, predicted: u32, reference: u32) -> Self {
        let ratio = |num: u32, den: u32| {
            if den == 0 {
                0.0
            } else {
                100.0 * f64::from(num) / f64::from(den)
            }
        };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, reference);
        ScoreRow {
            group,
            true_positives: tp,
            predicted_count: predicted,
            reference_count: reference,
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }

    /// A row carrying only an externally published F1.
    pub fn from_f1(group: GroupId, f1: f64) -> Self {
        ScoreRow {
            group,
            true_positives: 0,
            predicted_count: 0,
            reference_count: 0,
            precision: f64::NAN,
            recall: f64::NAN,
            f1,
        }
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(x)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn score_group(predictions: &PredictionSet, labels: &GroupLabelSet, group: GroupId) -> Result<ScoreRow, EvalError> {
    if predictions.unit_count() != labels.unit_count() {
        return Err(EvalError::UniverseMismatch(predictions.unit_count(), labels.unit_count()));
    }
    let mut tp = 0;
    let mut predicted = 0;
    let mut reference = 0;
    for (p, l) in predictions.predicted.iter().zip(&labels.labels) {
        predicted += u32::from(*p);
        reference += u32::from(*l);
        tp += u32::from(*p && *l);
    }
    Ok(ScoreRow::from_counts(group, tp, predicted, reference))
}

/// Unweighted mean F1 over exactly the `expected` groups.
pub fn macro_f1(rows: &[ScoreRow], expected: &[GroupId]) -> Result<f64, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::NoRows);
    }
    let mut seen = BTreeSet::new();
    for r in rows {
        if !expected.contains(&r.group) {
            return Err(EvalError::UnexpectedGroup(r.group));
        }
        if !seen.insert(r.group) {
            return Err(EvalError::DuplicateGroup(r.group));
        }
    }
    if let Some(missing) = expected.iter().find(|g| !seen.contains(g)) {
        return Err(EvalError::MissingGroup(*missing));
    }
    Ok(rows.iter().map(|r| r.f1).sum::<f64>() / rows.len() as f64)
}

/// One model setting scored across groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableKey {
    pub model: String,
    pub temperature: Option<f64>,
    pub role: bool,
    pub icl: bool,
}

impl TableKey {
    pub fn report_cmp(&self, other: &Self) -> Ordering {
        let temp = |t: Option<f64>| t.unwrap_or(f64::NEG_INFINITY);
        self.model
            .cmp(&other.model)
            .then(temp(self.temperature).total_cmp(&temp(other.temperature)))
            .then(self.role.cmp(&other.role))
            .then(self.icl.cmp(&other.icl))
    }

    /// The same setting with role-play toggled.
    pub fn with_role(&self, role: bool) -> Self {
        TableKey {
            role,
            ..self.clone()
        }
    }

    pub fn same_setting(&self, other: &Self) -> bool {
        self.report_cmp(other) == Ordering::Equal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub key: TableKey,
    pub rows: Vec<ScoreRow>,
    pub macro_f1: f64,
    /// Samples per request behind the predictions (1 for baselines).
    pub n_samples: u32,
}

/// One (prediction set, label set) pair to score.
pub struct ScoreJob<'a> {
    pub predictions: &'a PredictionSet,
    pub labels: &'a GroupLabelSet,
    pub group: GroupId,
}

pub fn score_jobs(mode: ExecMode, jobs: &[ScoreJob<'_>]) -> Result<Vec<ScoreRow>, EvalError> {
    mode.map(jobs, |j| score_group(j.predictions, j.labels, j.group))
        .into_iter()
        .collect()
}

/// Strictly positive differences `with - without` over matching keys.
pub fn improvement_count<K: Ord + std::fmt::Debug>(
    without: &BTreeMap<K, f64>,
    with: &BTreeMap<K, f64>,
) -> Result<(usize, usize), EvalError> {
    if without.is_empty() {
        return Err(EvalError::NoPairs);
    }
    if without.len() != with.len() || without.keys().zip(with.keys()).any(|(a, b)| a != b) {
        let missing: Vec<_> = without
            .keys()
            .filter(|k| !with.contains_key(*k))
            .chain(with.keys().filter(|k| !without.contains_key(*k)))
            .collect();
        return Err(EvalError::KeyMismatch(format!("{missing:?}")));
    }
    let improved = without
        .iter()
        .filter(|(k, v)| with[*k] > **v)
        .count();
    Ok((improved, without.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::LabelScope;
    use crate::extraction::{ConfigDescriptor, ParseTally};

    fn pred(bits: &[bool]) -> PredictionSet {
        PredictionSet {
            config: ConfigDescriptor::baseline("t"),
            corpus_digest: String::new(),
            n_samples: 1,
            sample_votes: bits.iter().map(|b| u32::from(*b)).collect(),
            predicted: bits.to_vec(),
            parse: ParseTally::default(),
        }
    }

    fn labels(bits: &[bool]) -> GroupLabelSet {
        GroupLabelSet::from_votes(LabelScope::Pooled, 1, bits.iter().map(|b| u32::from(*b)).collect())
    }

    const G: GroupId = GroupId::GenderF;

    #[test]
    fn identity_scores_100() {
        let bits = [true, false, true, true];
        let r = score_group(&pred(&bits), &labels(&bits), G).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (100.0, 100.0, 100.0));
    }

    #[test]
    fn overlapping_sets() {
        // reference {A,B,C}, predicted {B,C,D}
        let r = score_group(
            &pred(&[false, true, true, true]),
            &labels(&[true, true, true, false]),
            G,
        )
        .unwrap();
        assert_eq!((r.true_positives, r.predicted_count, r.reference_count), (2, 3, 3));
        assert!((r.precision - 200.0 / 3.0).abs() < 1e-9);
        assert!((r.recall - 200.0 / 3.0).abs() < 1e-9);
        assert!((r.f1 - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(format!("{:.2}", r.f1), "66.67");
    }

    #[test]
    fn empty_predictions_score_zero() {
        let r = score_group(&pred(&[false, false]), &labels(&[true, false]), G).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        let r = score_group(&pred(&[true, false]), &labels(&[false, false]), G).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn universe_mismatch() {
        assert_eq!(
            score_group(&pred(&[true]), &labels(&[true, false]), G),
            Err(EvalError::UniverseMismatch(1, 2))
        );
    }

    #[test]
    fn macro_means() {
        let rows: Vec<ScoreRow> = GroupId::ALL.iter().map(|g| ScoreRow::from_f1(*g, 50.0)).collect();
        assert_eq!(macro_f1(&rows, &GroupId::ALL).unwrap(), 50.0);
        let rows: Vec<ScoreRow> = GroupId::ALL
            .iter()
            .enumerate()
            .map(|(i, g)| ScoreRow::from_f1(*g, if i % 2 == 0 { 40.0 } else { 60.0 }))
            .collect();
        assert_eq!(macro_f1(&rows, &GroupId::ALL).unwrap(), 50.0);
        assert_eq!(
            macro_f1(&rows[1..], &GroupId::ALL),
            Err(EvalError::MissingGroup(GroupId::EduHsOrLess))
        );
        let mut dup = rows.clone();
        dup.push(rows[0].clone());
        assert_eq!(macro_f1(&dup, &GroupId::ALL), Err(EvalError::DuplicateGroup(GroupId::EduHsOrLess)));
    }

    #[test]
    fn improvements() {
        let without: BTreeMap<GroupId, f64> = GroupId::ALL.iter().map(|g| (*g, 40.0)).collect();
        let with: BTreeMap<GroupId, f64> = GroupId::ALL.iter().map(|g| (*g, 41.0)).collect();
        assert_eq!(improvement_count(&without, &with).unwrap(), (14, 14));
        let empty: BTreeMap<GroupId, f64> = BTreeMap::new();
        assert_eq!(improvement_count(&empty, &empty), Err(EvalError::NoPairs));
        let mut partial = with.clone();
        partial.remove(&GroupId::GenderM);
        assert!(matches!(improvement_count(&without, &partial), Err(EvalError::KeyMismatch(_))));
    }
}
