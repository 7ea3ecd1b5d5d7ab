use std::fmt::Write;

use super::{format_p, round_half_up, ReportBundle};

fn yes_no(b: bool) -> &'static str {
    if b {
        "Yes"
    } else {
        "No"
    }
}

fn temp(t: Option<f64>) -> String {
    t.map(|t| format!("{t:.1}")).unwrap_or_else(|| "-".into())
}

fn row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn header(cells: &[&str]) -> String {
    let mut s = row(&cells.iter().map(|c| c.to_string()).collect::<Vec<_>>());
    s.push('|');
    for _ in cells {
        s.push_str("---|");
    }
    s.push('\n');
    s
}

/// Renders a bundle as Markdown. Output depends only on the bundle, so equal
/// bundles give byte-identical reports.
pub fn render_report(bundle: &ReportBundle) -> String {
    let m = &bundle.manifest;
    let s = &m.corpus_stats;
    let mut out = String::new();
    out.push_str("# Medical jargon extraction report\n\n");
    let _ = writeln!(out, "- Config hash: `{}`", m.config_hash);
    let _ = writeln!(out, "- Seed: {}", m.seed);
    let _ = writeln!(out, "- Corpus digest: `{}`", m.corpus_digest);
    let _ = writeln!(
        out,
        "- Corpus: {} sentences (reference {}), {} words / {} lexical (reference {}), {} units / {} reconciled terms (reference {})",
        s.sentences,
        m.reference_sentences,
        s.words,
        s.lexical_words,
        m.reference_words,
        s.units,
        s.reconciled_terms(),
        m.reference_terms
    );
    if let Some(n) = m.requests {
        let _ = writeln!(out, "- Requests: {n}");
    }
    if let Some(g) = &m.gateway {
        let _ = writeln!(
            out,
            "- Gateway: {} cache hits, {} backend calls, {} retries",
            g.cache_hits, g.backend_calls, g.retries
        );
    }
    if let Some(p) = &m.parse {
        let _ = writeln!(
            out,
            "- Parsed samples: {} clean, {} recovered, {} failed",
            p.clean, p.recovered, p.failed
        );
    }

    out.push_str("\n## F1 by group\n\n");
    let mut cols = vec!["Model", "Temp.", "Role", "ICL"];
    cols.extend(bundle.groups.iter().map(|g| g.label()));
    cols.push("Macro F1");
    out.push_str(&header(&cols));
    for t in &bundle.tables {
        let k = &t.table.key;
        let mut cells = vec![k.model.clone(), temp(k.temperature), yes_no(k.role).into(), yes_no(k.icl).into()];
        cells.extend(t.table.rows.iter().map(|r| round_half_up(r.f1)));
        cells.push(round_half_up(t.table.macro_f1));
        out.push_str(&row(&cells));
    }

    out.push_str("\n## Role-play significance\n\n");
    out.push_str(&header(&[
        "Model",
        "Temp.",
        "n",
        "ICL",
        "Macro F1 w/o Role",
        "Macro F1 w/ Role",
        "Diff",
        "p (one-sided)",
        "p (two-sided)",
        "Method",
    ]));
    for w in &bundle.wilcoxon {
        let r = w.result.as_ref();
        out.push_str(&row(&[
            w.model.clone(),
            temp(w.temperature),
            w.n.to_string(),
            yes_no(w.icl).into(),
            round_half_up(w.macro_no_role),
            round_half_up(w.macro_role),
            round_half_up(w.diff),
            r.map_or("-".into(), |r| format_p(r.p_one_sided)),
            r.map_or("-".into(), |r| format_p(r.p_two_sided)),
            r.map_or("-".into(), |r| r.method.as_str().into()),
        ]));
    }
    if let Some(i) = &bundle.improvement {
        let _ = writeln!(out, "\nimproved {}/{}", i.improved, i.total);
    }

    out.push_str("\n## Label differences between groups\n\n");
    out.push_str(&header(&["Group A", "Group B", "Differing units"]));
    for d in &bundle.label_diff {
        out.push_str(&row(&[d.group_a.to_string(), d.group_b.to_string(), d.differing_units.to_string()]));
    }
    if let Some(u) = bundle.label_diff_union {
        let _ = writeln!(out, "\nUnits differing between any two groups: {u}");
    }

    if !bundle.gaps.is_empty() {
        out.push_str("\n## Gaps\n\n");
        for g in &bundle.gaps {
            let _ = writeln!(out, "- {g}");
        }
    }
    out
}
