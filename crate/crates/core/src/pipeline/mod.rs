//! Pipeline stages behind the command-line tool: label building, extraction,
//! scoring and report rendering, all driven by one [`RunConfig`].

mod config;
mod extract;
mod format;
mod report;
mod score;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::cohort::{
    build_group_labels, build_pooled_labels, group_membership, parse_annotations, CohortError, GroupId,
    GroupLabelSet, LabelScope,
};
use crate::corpus::{Corpus, CorpusError};
use crate::evalstat::EvalError;
use crate::extraction::ExtractionError;
use crate::llmgate::GateError;
use crate::promptkit::PromptError;

pub use config::RunConfig;
pub use extract::{cmd_extract, dry_run, ExtractManifest, ExtractOptions, ExtractOutcome, PlanSummary};
pub use format::{format_p, round_half_up};
pub use report::render_report;
pub use score::{
    cmd_score, ingest_baseline_files, read_bundle, read_external_scores, write_bundle, BundleTable, ExternalScore, TableSource, ImprovementSummary, LabelDiffRow,
    ReportBundle, RunManifest, ScoreOutcome, WilcoxonRow,
};

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const EXTRACT_MANIFEST_FILE: &str = "extract_manifest.json";
pub const BASELINE_PREDICTIONS_FILE: &str = "baseline_predictions.jsonl";
pub const BASELINE_SCORES_FILE: &str = "baseline_scores.csv";
pub const BUNDLE_FILE: &str = "bundle.json";
pub const REPORT_FILE: &str = "report.md";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{failed} of {total} requests failed; first at {cell}")]
    Requests {
        failed: usize,
        total: usize,
        cell: String,
        source: GateError,
    },
}

impl PipelineError {
    /// Process exit status: 2 for transport-side failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        let transport = |e: &GateError| {
            matches!(
                e,
                GateError::Transient(_)
                    | GateError::Transport { .. }
                    | GateError::Http { .. }
                    | GateError::Protocol(_)
                    | GateError::CacheMiss(_)
                    | GateError::MockMiss(_)
            )
        };
        match self {
            PipelineError::Gate(e) | PipelineError::Requests { source: e, .. } if transport(e) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Writes through a sibling temp file and a rename so readers never see a
/// half-written artifact.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub(crate) fn to_json_lines<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("artifact serializes"));
        out.push('\n');
    }
    out
}

pub(crate) fn from_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Io {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Gold labels loaded from a labels file: pooled plus per-group sets.
#[derive(Debug, Clone)]
pub struct LabelBook {
    pub pooled: Option<GroupLabelSet>,
    pub groups: std::collections::BTreeMap<GroupId, GroupLabelSet>,
}

impl LabelBook {
    pub fn load(path: &Path, corpus: &Corpus) -> Result<Self, PipelineError> {
        let sets: Vec<GroupLabelSet> = from_json_lines(path)?;
        let mut book = LabelBook {
            pooled: None,
            groups: Default::default(),
        };
        for s in sets {
            if s.unit_count() != corpus.unit_count() {
                return Err(PipelineError::Invalid(format!(
                    "{}: label set {} covers {} units, corpus has {}",
                    path.display(),
                    s.scope,
                    s.unit_count(),
                    corpus.unit_count()
                )));
            }
            match s.scope {
                LabelScope::Pooled => book.pooled = Some(s),
                LabelScope::Group(g) => {
                    book.groups.insert(g, s);
                }
            }
        }
        Ok(book)
    }
}

/// Result of turning raw annotations into label sets.
#[derive(Debug, Clone, Serialize)]
pub struct LabelsOutcome {
    pub annotators: usize,
    pub group_sizes: Vec<(GroupId, usize)>,
    /// Groups without members; no label set is written for them.
    pub empty_groups: Vec<GroupId>,
    pub sets: Vec<GroupLabelSet>,
}

/// Builds pooled and per-group majority labels and writes them as JSON Lines.
pub fn cmd_labels_build(corpus: &Corpus, annotations: &Path, out: &Path) -> Result<LabelsOutcome, PipelineError> {
    let (cohort, records) = parse_annotations(corpus, &read_text(annotations)?)?;
    let membership = group_membership(&cohort)?;
    let mut sets = vec![build_pooled_labels(corpus, &records, &cohort)?];
    let mut group_sizes = Vec::new();
    let mut empty_groups = Vec::new();
    for g in GroupId::ALL {
        let size = membership.get(&g).map_or(0, Vec::len);
        group_sizes.push((g, size));
        if size == 0 {
            log::warn!("group {g} has no annotators; skipping its labels");
            empty_groups.push(g);
        } else {
            sets.push(build_group_labels(corpus, &records, &cohort, g)?);
        }
    }
    write_atomic(out, to_json_lines(&sets).as_bytes())?;
    Ok(LabelsOutcome {
        annotators: cohort.len(),
        group_sizes,
        empty_groups,
        sets,
    })
}
