use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    from_json_lines, io_err, read_text, render_report, round_half_up, to_json_lines, write_atomic, ExtractManifest,
    LabelBook, PipelineError, RunConfig, BASELINE_PREDICTIONS_FILE, BASELINE_SCORES_FILE, BUNDLE_FILE,
    EXTRACT_MANIFEST_FILE, PREDICTIONS_FILE,
};
use crate::cohort::{label_diff, GroupId};
use crate::corpus::{CorpusStats, REFERENCE_SENTENCES, REFERENCE_TERMS, REFERENCE_WORDS};
use crate::exec::ExecMode;
use crate::extraction::{ingest_baseline, ParseTally, PredictionSet};
use crate::evalstat::{
    improvement_count, macro_f1, score_jobs, wilcoxon_signed_rank, ScoreJob, ScoreRow, ScoreTable, TableKey,
    WilcoxonResult,
};
use crate::llmgate::GateStats;

/// An externally published per-group F1 entered through the side channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScore {
    pub model: String,
    pub temperature: Option<f64>,
    pub role: bool,
    pub icl: bool,
    pub group: GroupId,
    pub f1: f64,
}

#[derive(Deserialize)]
struct ExternalScoreRecord {
    model: String,
    #[serde(default)]
    temperature: String,
    #[serde(default)]
    role: String,
    #[serde(default)]
    icl: String,
    group: String,
    f1: f64,
}

fn parse_flag(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "" | "no" | "false" | "0" | "n" => Some(false),
        "yes" | "true" | "1" | "y" => Some(true),
        _ => None,
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Reads `model,temperature,role,icl,group,f1` CSV. Temperature may be empty;
/// role and icl take yes/no or true/false.
pub fn read_external_scores(path: &Path) -> Result<Vec<ExternalScore>, PipelineError> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<ExternalScoreRecord>().enumerate() {
        let bad = |m: String| PipelineError::Invalid(format!("{} row {}: {m}", path.display(), i + 1));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let temperature = if rec.temperature.is_empty() {
            None
        } else {
            Some(rec.temperature.parse::<f64>().map_err(|e| bad(format!("temperature: {e}")))?)
        };
        if !(0.0..=100.0).contains(&rec.f1) {
            return Err(bad(format!("f1 {} outside [0, 100]", rec.f1)));
        }
        out.push(ExternalScore {
            model: rec.model,
            temperature,
            role: parse_flag(&rec.role).ok_or_else(|| bad(format!("role {:?}", rec.role)))?,
            icl: parse_flag(&rec.icl).ok_or_else(|| bad(format!("icl {:?}", rec.icl)))?,
            group: GroupId::parse(&rec.group).map_err(|e| bad(e.to_string()))?,
            f1: rec.f1,
        });
    }
    Ok(out)
}

fn write_external_scores(path: &Path, scores: &[ExternalScore]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "temperature", "role", "icl", "group", "f1"])
        .map_err(|e| PipelineError::Invalid(e.to_string()))?;
    for s in scores {
        let t = s.temperature.map(|t| format!("{t:?}")).unwrap_or_default();
        w.write_record([&s.model, &t, flag(s.role), flag(s.icl), &s.group.to_string(), &format!("{:?}", s.f1)])
            .map_err(|e| PipelineError::Invalid(e.to_string()))?;
    }
    write_atomic(path, &w.into_inner().expect("in-memory writer"))
}

/// Stores baseline term lists and/or externally published scores under the
/// output directory, where `score` picks them up. Returns (systems, scores).
pub fn ingest_baseline_files(
    cfg: &RunConfig,
    terms: Option<&Path>,
    scores: Option<&Path>,
) -> Result<(usize, usize), PipelineError> {
    let mut counts = (0, 0);
    if let Some(p) = terms {
        let corpus = cfg.load_corpus()?;
        let sets = ingest_baseline(&corpus, &read_text(p)?)?;
        write_atomic(&cfg.out.join(BASELINE_PREDICTIONS_FILE), to_json_lines(&sets).as_bytes())?;
        counts.0 = sets.len();
    }
    if let Some(p) = scores {
        let rows = read_external_scores(p)?;
        write_external_scores(&cfg.out.join(BASELINE_SCORES_FILE), &rows)?;
        counts.1 = rows.len();
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableSource {
    /// Scored from this run's predictions.
    Computed,
    /// Scored from ingested baseline term lists.
    Baseline,
    /// F1 values entered as published.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleTable {
    pub source: TableSource,
    pub table: ScoreTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonRow {
    pub model: String,
    pub temperature: Option<f64>,
    pub n: u32,
    pub icl: bool,
    pub macro_no_role: f64,
    pub macro_role: f64,
    pub diff: f64,
    /// Absent when every paired difference is zero.
    pub result: Option<WilcoxonResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImprovementSummary {
    pub improved: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDiffRow {
    pub group_a: GroupId,
    pub group_b: GroupId,
    pub differing_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub corpus_digest: String,
    pub corpus_stats: CorpusStats,
    pub reference_sentences: usize,
    pub reference_words: usize,
    pub reference_terms: usize,
    /// Present when predictions from `extract` were scored.
    pub requests: Option<usize>,
    pub gateway: Option<GateStats>,
    pub parse: Option<ParseTally>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub manifest: RunManifest,
    pub groups: Vec<GroupId>,
    pub tables: Vec<BundleTable>,
    pub wilcoxon: Vec<WilcoxonRow>,
    pub improvement: Option<ImprovementSummary>,
    pub label_diff: Vec<LabelDiffRow>,
    /// Units whose label differs between at least two evaluated groups.
    pub label_diff_union: Option<usize>,
    /// Grid cells or groups that could not be scored.
    pub gaps: Vec<String>,
}

impl ReportBundle {
    pub fn is_partial(&self) -> bool {
        !self.gaps.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ScoreOutcome {
    pub bundle: ReportBundle,
    pub partial: bool,
}

struct Pending<'a> {
    key: TableKey,
    source: TableSource,
    n_samples: u32,
    members: BTreeMap<GroupId, &'a PredictionSet>,
}

fn table_key(set: &PredictionSet) -> TableKey {
    TableKey {
        model: set.config.model.clone(),
        temperature: set.config.temperature,
        role: set.config.role.is_some(),
        icl: set.config.icl,
    }
}

fn key_label(key: &TableKey) -> String {
    format!(
        "{} temp={} role={} icl={}",
        key.model,
        key.temperature.map(|t| format!("{t:.1}")).unwrap_or_else(|| "-".into()),
        flag(key.role),
        flag(key.icl)
    )
}

fn pending_tables<'a>(sets: &'a [PredictionSet], source: TableSource, groups: &[GroupId]) -> Vec<Pending<'a>> {
    let mut out: Vec<Pending<'a>> = Vec::new();
    for set in sets {
        let key = table_key(set);
        let slot = match out.iter_mut().position(|p| p.key.same_setting(&key)) {
            Some(i) => &mut out[i],
            None => {
                out.push(Pending {
                    key,
                    source,
                    n_samples: set.n_samples,
                    members: BTreeMap::new(),
                });
                out.last_mut().unwrap()
            }
        };
        match set.config.role {
            Some(g) if groups.contains(&g) => {
                slot.members.insert(g, set);
            }
            Some(g) => log::warn!("ignoring persona cell for unevaluated group {g}"),
            None => {
                for g in groups {
                    slot.members.insert(*g, set);
                }
            }
        }
    }
    out
}

fn load_predictions(cfg: &RunConfig, digest: &str, hash: &str) -> Result<(Vec<PredictionSet>, Option<ExtractManifest>), PipelineError> {
    let path = cfg.out.join(PREDICTIONS_FILE);
    if !path.exists() {
        return Ok((Vec::new(), None));
    }
    let manifest_path = cfg.out.join(EXTRACT_MANIFEST_FILE);
    let manifest: ExtractManifest = serde_json::from_str(&read_text(&manifest_path)?).map_err(|e| PipelineError::Io {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    if manifest.config_hash != hash {
        return Err(PipelineError::Invalid(format!(
            "{} was produced by config {}, current config is {hash}",
            path.display(),
            manifest.config_hash
        )));
    }
    let sets: Vec<PredictionSet> = from_json_lines(&path)?;
    check_digests(&sets, digest, &path)?;
    Ok((sets, Some(manifest)))
}

fn check_digests(sets: &[PredictionSet], digest: &str, path: &Path) -> Result<(), PipelineError> {
    if let Some(s) = sets.iter().find(|s| s.corpus_digest != digest) {
        return Err(PipelineError::Invalid(format!(
            "{}: predictions for {} come from a different corpus",
            path.display(),
            s.config.key()
        )));
    }
    Ok(())
}

/// Scores every available prediction set and external score table, pairs
/// role and no-role settings for significance tests, and writes the bundle.
pub fn cmd_score(cfg: &RunConfig, exec: ExecMode) -> Result<ScoreOutcome, PipelineError> {
    cfg.validate()?;
    let corpus = cfg.load_corpus()?;
    let digest = corpus.digest();
    let hash = cfg.config_hash(&digest);
    let groups = &cfg.groups;
    let (sets, extract_manifest) = load_predictions(cfg, &digest, &hash)?;
    let baseline_path = cfg.out.join(BASELINE_PREDICTIONS_FILE);
    let baseline: Vec<PredictionSet> = if baseline_path.exists() {
        let b = from_json_lines(&baseline_path)?;
        check_digests(&b, &digest, &baseline_path)?;
        b
    } else {
        Vec::new()
    };
    let external_path = cfg.out.join(BASELINE_SCORES_FILE);
    let external = if external_path.exists() {
        read_external_scores(&external_path)?
    } else {
        Vec::new()
    };
    let labels = if cfg.labels_path().exists() {
        Some(cfg.load_labels(&corpus)?)
    } else if sets.is_empty() && baseline.is_empty() {
        None
    } else {
        return Err(PipelineError::Invalid(format!(
            "labels file {} does not exist; run `labels build` first",
            cfg.labels_path().display()
        )));
    };

    let mut gaps: Vec<String> = extract_manifest
        .iter()
        .flat_map(|m| m.failed_cells.iter().map(|c| format!("extraction failed for cell {c}")))
        .collect();
    let mut pending = pending_tables(&sets, TableSource::Computed, groups);
    pending.extend(pending_tables(&baseline, TableSource::Baseline, groups));

    let empty_book = LabelBook {
        pooled: None,
        groups: BTreeMap::new(),
    };
    let book = labels.as_ref().unwrap_or(&empty_book);
    let mut ready = Vec::new();
    let mut jobs = Vec::new();
    for p in &pending {
        let missing: Vec<String> = groups
            .iter()
            .filter(|g| !p.members.contains_key(g) || !book.groups.contains_key(g))
            .map(|g| g.to_string())
            .collect();
        if !missing.is_empty() {
            gaps.push(format!("{}: no predictions or labels for {}", key_label(&p.key), missing.join(", ")));
            continue;
        }
        ready.push(p);
        for g in groups {
            jobs.push(ScoreJob {
                predictions: p.members[g],
                labels: &book.groups[g],
                group: *g,
            });
        }
    }
    let mut rows = score_jobs(exec, &jobs)?.into_iter();
    let mut tables = Vec::new();
    for p in ready {
        let rows: Vec<ScoreRow> = rows.by_ref().take(groups.len()).collect();
        tables.push(BundleTable {
            source: p.source,
            table: ScoreTable {
                key: p.key.clone(),
                macro_f1: macro_f1(&rows, groups)?,
                rows,
                n_samples: p.n_samples,
            },
        });
    }

    let mut by_key: Vec<(TableKey, BTreeMap<GroupId, f64>)> = Vec::new();
    for s in &external {
        let key = TableKey {
            model: s.model.clone(),
            temperature: s.temperature,
            role: s.role,
            icl: s.icl,
        };
        let i = match by_key.iter().position(|(k, _)| k.same_setting(&key)) {
            Some(i) => i,
            None => {
                by_key.push((key, BTreeMap::new()));
                by_key.len() - 1
            }
        };
        if by_key[i].1.insert(s.group, s.f1).is_some() {
            return Err(PipelineError::Invalid(format!(
                "external scores list {} twice for {}",
                s.group,
                key_label(&by_key[i].0)
            )));
        }
    }
    for (key, scores) in by_key {
        let missing: Vec<String> = groups.iter().filter(|g| !scores.contains_key(g)).map(|g| g.to_string()).collect();
        if !missing.is_empty() {
            gaps.push(format!("{} (external): no F1 for {}", key_label(&key), missing.join(", ")));
            continue;
        }
        let rows: Vec<ScoreRow> = groups.iter().map(|g| ScoreRow::from_f1(*g, scores[g])).collect();
        tables.push(BundleTable {
            source: TableSource::External,
            table: ScoreTable {
                key,
                macro_f1: macro_f1(&rows, groups)?,
                rows,
                n_samples: 1,
            },
        });
    }
    for (i, a) in tables.iter().enumerate() {
        if let Some(b) = tables[i + 1..].iter().find(|b| b.table.key.same_setting(&a.table.key)) {
            return Err(PipelineError::Invalid(format!(
                "{} is provided by both {:?} and {:?} sources",
                key_label(&a.table.key),
                a.source,
                b.source
            )));
        }
    }
    tables.sort_by(|a, b| a.table.key.report_cmp(&b.table.key));

    let mut wilcoxon = Vec::new();
    let mut without = BTreeMap::new();
    let mut with = BTreeMap::new();
    for base in tables.iter().filter(|t| !t.table.key.role) {
        let role_key = base.table.key.with_role(true);
        let Some(role) = tables.iter().find(|t| t.table.key.same_setting(&role_key)) else {
            continue;
        };
        let pairs: Vec<(f64, f64)> = base
            .table
            .rows
            .iter()
            .zip(&role.table.rows)
            .map(|(a, b)| (a.f1, b.f1))
            .collect();
        for (a, b) in base.table.rows.iter().zip(&role.table.rows) {
            let k = (key_label(&base.table.key), a.group);
            without.insert(k.clone(), a.f1);
            with.insert(k, b.f1);
        }
        let result = match wilcoxon_signed_rank(&pairs) {
            Ok(r) => Some(r),
            Err(crate::evalstat::EvalError::AllZeroDifferences) => None,
            Err(e) => return Err(e.into()),
        };
        wilcoxon.push(WilcoxonRow {
            model: base.table.key.model.clone(),
            temperature: base.table.key.temperature,
            n: role.table.n_samples,
            icl: base.table.key.icl,
            macro_no_role: base.table.macro_f1,
            macro_role: role.table.macro_f1,
            diff: role.table.macro_f1 - base.table.macro_f1,
            result,
        });
    }
    let improvement = if without.is_empty() {
        None
    } else {
        let (improved, total) = improvement_count(&without, &with)?;
        Some(ImprovementSummary { improved, total })
    };

    let mut diff_rows = Vec::new();
    let mut union = None;
    if let Some(book) = &labels {
        let present: Vec<_> = groups.iter().filter_map(|g| book.groups.get(g).map(|s| (*g, s))).collect();
        let mut differing = std::collections::BTreeSet::new();
        for (i, (ga, a)) in present.iter().enumerate() {
            for (gb, b) in &present[i + 1..] {
                let d = label_diff(a, b)?;
                diff_rows.push(LabelDiffRow {
                    group_a: *ga,
                    group_b: *gb,
                    differing_units: d.len(),
                });
                differing.extend(d);
            }
        }
        union = Some(differing.len());
    }

    let bundle = ReportBundle {
        manifest: RunManifest {
            config_hash: hash,
            seed: cfg.seed,
            corpus_digest: digest,
            corpus_stats: corpus.stats(),
            reference_sentences: REFERENCE_SENTENCES,
            reference_words: REFERENCE_WORDS,
            reference_terms: REFERENCE_TERMS,
            requests: extract_manifest.as_ref().map(|m| m.requests),
            gateway: extract_manifest.as_ref().map(|m| m.gateway),
            parse: extract_manifest.as_ref().map(|m| m.parse.clone()),
        },
        groups: groups.clone(),
        tables,
        wilcoxon,
        improvement,
        label_diff: diff_rows,
        label_diff_union: union,
        gaps,
    };
    for g in &bundle.gaps {
        log::warn!("partial report: {g}");
    }
    write_bundle(&cfg.out, &bundle)?;
    Ok(ScoreOutcome {
        partial: bundle.is_partial(),
        bundle,
    })
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn temp_cell(t: Option<f64>) -> String {
    t.map(|t| format!("{t:.1}")).unwrap_or_default()
}

/// Writes every bundle artifact into `out`.
pub fn write_bundle(out: &Path, bundle: &ReportBundle) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let scores = bundle
        .tables
        .iter()
        .flat_map(|t| {
            t.table.rows.iter().map(move |r| {
                vec![
                    t.table.key.model.clone(),
                    temp_cell(t.table.key.temperature),
                    flag(t.table.key.role).to_string(),
                    flag(t.table.key.icl).to_string(),
                    r.group.group_type().as_str().to_string(),
                    r.group.label().to_string(),
                    round_half_up(r.precision),
                    round_half_up(r.recall),
                    round_half_up(r.f1),
                ]
            })
        })
        .collect();
    write_atomic(
        &out.join("scores.csv"),
        &csv_bytes(
            &["model", "temperature", "role", "icl", "group_type", "group", "precision", "recall", "f1"],
            scores,
        ),
    )?;
    let wil = bundle
        .wilcoxon
        .iter()
        .map(|w| {
            let r = w.result.as_ref();
            vec![
                w.model.clone(),
                temp_cell(w.temperature),
                w.n.to_string(),
                flag(w.icl).to_string(),
                round_half_up(w.macro_no_role),
                round_half_up(w.macro_role),
                round_half_up(w.diff),
                r.map(|r| format!("{:e}", r.p_one_sided)).unwrap_or_default(),
                r.map(|r| format!("{:e}", r.p_two_sided)).unwrap_or_default(),
                r.map(|r| r.method.as_str().to_string()).unwrap_or_else(|| "none".into()),
            ]
        })
        .collect();
    write_atomic(
        &out.join("wilcoxon.csv"),
        &csv_bytes(
            &[
                "model",
                "temperature",
                "n",
                "icl",
                "macro_no_role",
                "macro_role",
                "diff",
                "p_one_sided",
                "p_two_sided",
                "method",
            ],
            wil,
        ),
    )?;
    let diffs = bundle
        .label_diff
        .iter()
        .map(|d| vec![d.group_a.to_string(), d.group_b.to_string(), d.differing_units.to_string()])
        .collect();
    write_atomic(&out.join("label_diff.csv"), &csv_bytes(&["group_a", "group_b", "differing_units"], diffs))?;
    write_atomic(&out.join("manifest.json"), pretty(&bundle.manifest).as_bytes())?;
    write_atomic(&out.join(BUNDLE_FILE), pretty(bundle).as_bytes())?;
    write_atomic(&out.join("tables.md"), render_report(bundle).as_bytes())
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("bundle serializes") + "\n"
}

/// Loads a bundle written by `score`.
pub fn read_bundle(path: &Path) -> Result<ReportBundle, PipelineError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| PipelineError::Invalid(format!("{}: malformed bundle: {e}", path.display())))
}
