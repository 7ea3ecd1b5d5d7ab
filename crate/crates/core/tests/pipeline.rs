use std::path::Path;

use jargon_bench::cohort::GroupId;
use jargon_bench::pipeline::{
    cmd_labels_build, cmd_score, ingest_baseline_files, read_bundle, render_report, RunConfig, TableSource,
};
use jargon_bench::ExecMode;

const CORPUS: &str = "the [iron deficiency] was mild today\nno [heart failure] signs were seen\n";

fn config(dir: &Path, groups: &[GroupId]) -> RunConfig {
    let corpus = dir.join("corpus.txt");
    std::fs::write(&corpus, CORPUS).unwrap();
    RunConfig {
        corpus: Some(corpus),
        out: dir.join("out"),
        groups: groups.to_vec(),
        ..RunConfig::default()
    }
}

fn annotator(id: &str, edu: &str, picks: &str) -> String {
    format!(
        r#"{{"annotator_id": "{id}", "age_band": "25-34", "education": "{edu}", "health_literacy": "never", "gender": "F", "selections": {picks}}}"#
    )
}

#[test]
fn predictions_equal_to_labels_score_one_hundred() {
    let dir = tempfile::tempdir().unwrap();
    let groups = [GroupId::EduHsOrLess, GroupId::EduMaster];
    let cfg = config(dir.path(), &groups);
    let picks = r#"{"1": ["iron deficiency", "mild"], "2": ["heart failure"]}"#;
    let ann = dir.path().join("ann.jsonl");
    let lines = [annotator("a", "HS", picks), annotator("b", "MA", picks), annotator("c", "MA", picks)];
    std::fs::write(&ann, lines.join("\n")).unwrap();
    let corpus = cfg.load_corpus().unwrap();
    let built = cmd_labels_build(&corpus, &ann, &cfg.labels_path()).unwrap();
    assert!(built.empty_groups.is_empty() || !built.empty_groups.iter().any(|g| groups.contains(g)));

    let terms = dir.path().join("terms.jsonl");
    std::fs::write(
        &terms,
        concat!(
            r#"{"system": "oracle", "sentence_id": 1, "terms": ["iron deficiency", "mild"]}"#,
            "\n",
            r#"{"system": "oracle", "sentence_id": 2, "terms": ["Heart Failure"]}"#,
            "\n",
        ),
    )
    .unwrap();
    assert_eq!(ingest_baseline_files(&cfg, Some(&terms), None).unwrap(), (1, 0));
    let outcome = cmd_score(&cfg, ExecMode::Sequential).unwrap();
    assert!(!outcome.partial, "{:?}", outcome.bundle.gaps);
    let t = &outcome.bundle.tables[0];
    assert_eq!(t.source, TableSource::Baseline);
    for r in &t.table.rows {
        assert_eq!((r.precision, r.recall, r.f1), (100.0, 100.0, 100.0));
    }
    let report = render_report(&outcome.bundle);
    assert!(report.contains("| oracle | - | No | No | 100.00 | 100.00 | 100.00 |"), "{report}");
    assert!(report.contains("Units differing between any two groups: 0"));
}

/// Ten settings over 14 groups; role-play wins everywhere except seven cells.
fn external_scores(skip_group: Option<GroupId>) -> String {
    let mut csv = String::from("model,temperature,role,icl,group,f1\n");
    let mut losses = 7;
    for m in 0..5 {
        for t in ["0.0", "1.0"] {
            for (i, g) in GroupId::ALL.iter().enumerate() {
                let base = 40.0 + i as f64;
                let role = if losses > 0 && i == m {
                    losses -= 1;
                    base - 1.0
                } else {
                    base + 0.5
                };
                csv.push_str(&format!("model-{m},{t},No,No,{g},{base}\n"));
                if Some(*g) != skip_group {
                    csv.push_str(&format!("model-{m},{t},Yes,No,{g},{role}\n"));
                }
            }
        }
    }
    assert_eq!(losses, 0);
    csv
}

#[test]
fn improvement_count_over_external_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &GroupId::ALL);
    let path = dir.path().join("scores.csv");
    std::fs::write(&path, external_scores(None)).unwrap();
    ingest_baseline_files(&cfg, None, Some(&path)).unwrap();
    let outcome = cmd_score(&cfg, ExecMode::Parallel).unwrap();
    let b = &outcome.bundle;
    assert!(!outcome.partial);
    let imp = b.improvement.unwrap();
    assert_eq!((imp.improved, imp.total), (133, 140));
    assert_eq!(b.wilcoxon.len(), 10);
    assert!(render_report(b).contains("\nimproved 133/140\n"));

    let keys: Vec<_> = b.tables.iter().map(|t| t.table.key.clone()).collect();
    assert_eq!(keys.len(), 20);
    assert!(keys.windows(2).all(|w| w[0].report_cmp(&w[1]).is_lt()));
    assert_eq!((keys[0].model.as_str(), keys[0].temperature, keys[0].role), ("model-0", Some(0.0), false));
    assert_eq!((keys[1].temperature, keys[1].role), (Some(0.0), true));

    // precision and recall are NaN for external rows, so compare serialized forms
    let reread = read_bundle(&cfg.out.join("bundle.json")).unwrap();
    assert_eq!(serde_json::to_value(&reread).unwrap(), serde_json::to_value(b).unwrap());
}

#[test]
fn missing_group_becomes_a_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &GroupId::ALL);
    let path = dir.path().join("scores.csv");
    std::fs::write(&path, external_scores(Some(GroupId::GenderM))).unwrap();
    ingest_baseline_files(&cfg, None, Some(&path)).unwrap();
    let outcome = cmd_score(&cfg, ExecMode::Sequential).unwrap();
    assert!(outcome.partial);
    assert_eq!(outcome.bundle.gaps.len(), 10);
    assert!(outcome.bundle.gaps[0].contains("no F1 for Gender:M"), "{}", outcome.bundle.gaps[0]);
    assert!(outcome.bundle.tables.iter().all(|t| !t.table.key.role));
    assert!(outcome.bundle.wilcoxon.is_empty() && outcome.bundle.improvement.is_none());
    let report = render_report(&outcome.bundle);
    assert!(report.contains("\n## Gaps\n\n- model-0 temp=0.0 role=yes icl=no (external): no F1 for Gender:M\n"), "{report}");
}

#[test]
fn empty_run_renders_header_only_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[GroupId::GenderF]);
    let outcome = cmd_score(&cfg, ExecMode::Sequential).unwrap();
    assert!(!outcome.partial);
    let report = render_report(&outcome.bundle);
    assert!(report.contains("## F1 by group\n\n| Model | Temp. | Role | ICL | F | Macro F1 |\n|---|---|---|---|---|---|\n\n## Role"));
    assert!(!report.contains("improved"));
    assert!(!report.contains("## Gaps"));
    assert_eq!(render_report(&outcome.bundle), report);
}
