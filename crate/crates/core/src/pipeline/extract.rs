use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{
    read_text, to_json_lines, write_atomic, PipelineError, RunConfig, EXTRACT_MANIFEST_FILE, PREDICTIONS_FILE,
};
use crate::corpus::{Corpus, CorpusStats};
use crate::exec::ExecMode;
use crate::extraction::{predict_sentence, ParseTally, PredictionSet};
use crate::llmgate::{
    plan_requests, ChatBackend, ExemplarSource, GateStats, Gateway, HttpBackend, IclLabels, MockBackend,
    PlannedRequest, ResponseCache, RetryPolicy, Toggle,
};
use crate::promptkit::{build_fold_plan, FoldPlan};

#[derive(Debug, Clone, Default)]
pub struct ExtractOptions {
    /// Answer from scripted fixtures instead of the live endpoint.
    pub mock_fixtures: Option<PathBuf>,
    /// Serve only from the cache; misses are errors.
    pub cache_only: bool,
    pub exec: ExecMode,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub corpus_digest: String,
    pub corpus_stats: CorpusStats,
    pub fold_plan: Option<FoldPlan>,
    pub requests: usize,
    pub cells: usize,
    pub completed_cells: usize,
    pub failed_cells: Vec<String>,
    pub gateway: GateStats,
    pub cache_entries: usize,
    pub parse: ParseTally,
}

#[derive(Debug, Clone)]
pub struct ExtractOutcome {
    pub manifest: ExtractManifest,
    pub prediction_sets: Vec<PredictionSet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanSummary {
    pub cells: usize,
    pub requests: usize,
    pub samples: u64,
    /// Request count per samples-per-request value.
    pub by_n: BTreeMap<u32, usize>,
}

fn plan(cfg: &RunConfig, corpus: &Corpus) -> Result<(Vec<PlannedRequest>, Option<FoldPlan>), PipelineError> {
    cfg.validate()?;
    let matrix = cfg.run_matrix();
    if cfg.icl == Toggle::Off {
        return Ok((plan_requests(&matrix, corpus, None)?, None));
    }
    let book = cfg.load_labels(corpus)?;
    let fold_plan = build_fold_plan(corpus, cfg.seed)?;
    let pooled = book.pooled.as_ref().ok_or_else(|| {
        PipelineError::Invalid("ICL needs pooled labels; the labels file has none".into())
    })?;
    let labels = IclLabels {
        fold_plan: &fold_plan,
        pooled,
        groups: &book.groups,
        source: cfg.exemplar_source,
    };
    if cfg.exemplar_source == ExemplarSource::Group && cfg.role != Toggle::Off {
        if let Some(g) = cfg.groups.iter().find(|g| !book.groups.contains_key(g)) {
            return Err(PipelineError::Invalid(format!("no labels for persona group {g}")));
        }
    }
    let planned = plan_requests(&matrix, corpus, Some(labels))?;
    Ok((planned, Some(fold_plan)))
}

/// Plans the grid without contacting any backend.
pub fn dry_run(cfg: &RunConfig) -> Result<(PlanSummary, Vec<PlannedRequest>), PipelineError> {
    let corpus = cfg.load_corpus()?;
    let (planned, _) = plan(cfg, &corpus)?;
    let mut by_n = BTreeMap::new();
    for p in &planned {
        *by_n.entry(p.request.config.n).or_insert(0) += 1;
    }
    let summary = PlanSummary {
        cells: count_cells(&planned),
        requests: planned.len(),
        samples: planned.iter().map(|p| u64::from(p.request.config.n)).sum(),
        by_n,
    };
    Ok((summary, planned))
}

fn count_cells(planned: &[PlannedRequest]) -> usize {
    planned.chunk_by(|a, b| a.cell == b.cell).count()
}

fn backend(cfg: &RunConfig, opts: &ExtractOptions) -> Result<Option<Box<dyn ChatBackend>>, PipelineError> {
    if let Some(path) = &opts.mock_fixtures {
        let mock = MockBackend::from_jsonl(&read_text(path)?)?;
        log::info!("answering from {} mock fixtures", mock.len());
        return Ok(Some(Box::new(mock)));
    }
    if opts.cache_only {
        return Ok(None);
    }
    let endpoint = cfg
        .endpoint
        .as_deref()
        .ok_or_else(|| PipelineError::Invalid("no endpoint configured; pass --endpoint or use --cache-only".into()))?;
    let http = HttpBackend::from_env(endpoint)?.with_n_support(cfg.endpoint_supports_n);
    Ok(Some(Box::new(http)))
}

/// Runs every planned request through the cached gateway and writes one
/// prediction set per fully answered grid cell. Re-running after a failure
/// resumes from the cache.
pub fn cmd_extract(cfg: &RunConfig, opts: &ExtractOptions) -> Result<ExtractOutcome, PipelineError> {
    let corpus = cfg.load_corpus()?;
    let (planned, fold_plan) = plan(cfg, &corpus)?;
    let cache = ResponseCache::open(cfg.cache_path())?;
    let gateway = Gateway::with_limits(backend(cfg, opts)?, cache, opts.retry, cfg.max_in_flight);
    let requests: Vec<_> = planned.iter().map(|p| p.request.clone()).collect();
    log::info!("{} requests over {} cells", requests.len(), count_cells(&planned));
    let results = gateway.complete_all(&requests);

    let mut prediction_sets = Vec::new();
    let mut failed_cells = Vec::new();
    let mut first_failure = None;
    let mut failed_requests = 0;
    let mut parse = ParseTally::default();
    let mut offset = 0;
    for chunk in planned.chunk_by(|a, b| a.cell == b.cell) {
        let answers = &results[offset..offset + chunk.len()];
        offset += chunk.len();
        let cell = &chunk[0].cell;
        let errors: Vec<_> = chunk
            .iter()
            .zip(answers)
            .filter_map(|(p, r)| r.as_ref().err().map(|e| (p, e)))
            .collect();
        if !errors.is_empty() {
            log::error!(
                "cell {}: {} of {} requests failed; first: {}",
                cell.key(),
                errors.len(),
                chunk.len(),
                errors[0].1
            );
            failed_requests += errors.len();
            failed_cells.push(cell.key());
            if first_failure.is_none() {
                let (p, e) = errors[0];
                first_failure = Some((format!("{} sentence {}", cell.key(), p.sentence_id), e.clone()));
            }
            continue;
        }
        let jobs: Vec<_> = chunk
            .iter()
            .zip(answers)
            .map(|(p, r)| (p.sentence_id, &r.as_ref().expect("checked above").samples))
            .collect();
        let per_sentence = opts.exec.map(&jobs, |(sid, samples)| {
            let mut tally = ParseTally::default();
            predict_sentence(&corpus, *sid, samples, &mut tally).map(|v| (v, tally))
        });
        let mut set = PredictionSet::empty(&corpus, cell.clone(), chunk[0].request.config.n);
        for item in per_sentence {
            let (votes, tally) = item?;
            set.absorb(&votes);
            set.parse.clean += tally.clean;
            set.parse.recovered += tally.recovered;
            set.parse.failed += tally.failed;
        }
        parse.clean += set.parse.clean;
        parse.recovered += set.parse.recovered;
        parse.failed += set.parse.failed;
        prediction_sets.push(set);
    }

    let manifest = ExtractManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.config_hash(&corpus.digest()),
        seed: cfg.seed,
        corpus_digest: corpus.digest(),
        corpus_stats: corpus.stats(),
        fold_plan,
        requests: planned.len(),
        cells: count_cells(&planned),
        completed_cells: prediction_sets.len(),
        failed_cells,
        gateway: gateway.stats(),
        cache_entries: gateway.cache().len(),
        parse,
    };
    write_atomic(&cfg.out.join(PREDICTIONS_FILE), to_json_lines(&prediction_sets).as_bytes())?;
    let manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&cfg.out.join(EXTRACT_MANIFEST_FILE), manifest_json.as_bytes())?;
    if let Some((cell, source)) = first_failure {
        return Err(PipelineError::Requests {
            failed: failed_requests,
            total: planned.len(),
            cell,
            source,
        });
    }
    Ok(ExtractOutcome {
        manifest,
        prediction_sets,
    })
}
