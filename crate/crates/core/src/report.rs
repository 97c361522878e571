//! Result tables (Model, BLEU-1, ROUGE-1, BERTScore, METEOR), their
//! markdown/CSV rendering at four decimals, and run-to-run deltas.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 5] = ["Model", "BLEU-1", "ROUGE-1", "BERTScore", "METEOR"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub bleu1: f64,
    pub rouge1: f64,
    /// `None` when no example produced a BERTScore value.
    pub bertscore: Option<f64>,
    pub meteor: f64,
}

impl TableRow {
    pub fn new(label: impl Into<String>, bleu1: f64, rouge1: f64, bertscore: f64, meteor: f64) -> Self {
        Self {
            label: label.into(),
            bleu1,
            rouge1,
            bertscore: Some(bertscore),
            meteor,
        }
    }
}

/// Everything needed to re-run a table.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub model_tags: Vec<String>,
    pub embedder: String,
    pub relevance_scorer: String,
    pub token_counter: String,
    pub bertscore_embedder: String,
    pub examples: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<TableRow>,
    pub provenance: Provenance,
}

impl ResultsTable {
    pub fn from_rows(rows: Vec<TableRow>) -> Self {
        Self {
            rows,
            provenance: Provenance::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Report(format!("unknown report format {other:?}"))),
        }
    }
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt4).unwrap_or_else(|| "n/a".to_string())
}

const LEGEND: &str = "Scores are macro-averaged over test examples. Retrieval distances are squared L2. \
BERTScore is raw-cosine precision without IDF weighting or rescaling. The prompt budget counter is \
recorded below; the default counts whitespace tokens, not subwords.";

/// Renders the table. CSV carries only the header and rows; markdown also
/// carries a provenance footer.
pub fn emit_report(table: &ResultsTable, format: ReportFormat) -> Result<String> {
    if table.rows.is_empty() {
        return Err(Error::Report("empty table".into()));
    }
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            let _ = writeln!(out, "| {} |", COLUMNS.join(" | "));
            let _ = writeln!(out, "|---|---|---|---|---|");
            for r in &table.rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    r.label,
                    fmt4(r.bleu1),
                    fmt4(r.rouge1),
                    fmt_opt(r.bertscore),
                    fmt4(r.meteor)
                );
            }
            let p = &table.provenance;
            if !p.config_hash.is_empty() {
                let _ = writeln!(out);
                let _ = writeln!(out, "{LEGEND}");
                let _ = writeln!(out);
                let _ = writeln!(out, "- config_hash: {}", p.config_hash);
                let _ = writeln!(out, "- seed: {}", p.seed);
                let _ = writeln!(out, "- model_tags: {}", p.model_tags.join(", "));
                let _ = writeln!(out, "- embedder: {}", p.embedder);
                let _ = writeln!(out, "- relevance_scorer: {}", p.relevance_scorer);
                let _ = writeln!(out, "- token_counter: {}", p.token_counter);
                let _ = writeln!(out, "- bertscore_embedder: {}", p.bertscore_embedder);
                let _ = writeln!(out, "- examples: {} (failures: {})", p.examples, p.failures);
            }
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(COLUMNS)?;
            for r in &table.rows {
                w.write_record([
                    r.label.clone(),
                    fmt4(r.bleu1),
                    fmt4(r.rouge1),
                    fmt_opt(r.bertscore),
                    fmt4(r.meteor),
                ])?;
            }
            out = String::from_utf8(w.into_inner().map_err(|e| Error::Report(e.to_string()))?)
                .expect("csv output is UTF-8");
        }
    }
    Ok(out)
}

pub fn write_report(table: &ResultsTable, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = emit_report(table, format)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses CSV produced by [`emit_report`] back into rows.
pub fn parse_report_csv(text: &str) -> Result<Vec<TableRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != COLUMNS {
        return Err(Error::Report(format!("unexpected header {headers:?}")));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Report(format!("bad number {s:?}"))) };
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(TableRow {
                label: rec[0].to_string(),
                bleu1: num(&rec[1])?,
                rouge1: num(&rec[2])?,
                bertscore: if &rec[3] == "n/a" { None } else { Some(num(&rec[3])?) },
                meteor: num(&rec[4])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub from: f64,
    pub to: f64,
    pub absolute: f64,
    /// `None` when the baseline is zero.
    pub percent: Option<f64>,
}

impl MetricDelta {
    pub fn between(from: f64, to: f64) -> Self {
        Self {
            from,
            to,
            absolute: to - from,
            percent: (from != 0.0).then(|| (to - from) / from * 100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub label: String,
    pub bleu1: MetricDelta,
    pub rouge1: MetricDelta,
    pub bertscore: Option<MetricDelta>,
    pub meteor: MetricDelta,
}

/// Per-metric change from `baseline` to `candidate`, matched by row label.
/// Both tables must have the same label set.
pub fn compare_runs(baseline: &ResultsTable, candidate: &ResultsTable) -> Result<Vec<DeltaRow>> {
    let mut a: Vec<&str> = baseline.rows.iter().map(|r| r.label.as_str()).collect();
    let mut b: Vec<&str> = candidate.rows.iter().map(|r| r.label.as_str()).collect();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(Error::Report(format!("row labels differ: {a:?} vs {b:?}")));
    }
    Ok(baseline
        .rows
        .iter()
        .map(|from| {
            let to = candidate.rows.iter().find(|r| r.label == from.label).expect("labels checked");
            DeltaRow {
                label: from.label.clone(),
                bleu1: MetricDelta::between(from.bleu1, to.bleu1),
                rouge1: MetricDelta::between(from.rouge1, to.rouge1),
                bertscore: match (from.bertscore, to.bertscore) {
                    (Some(x), Some(y)) => Some(MetricDelta::between(x, y)),
                    _ => None,
                },
                meteor: MetricDelta::between(from.meteor, to.meteor),
            }
        })
        .collect())
}

/// Markdown rendering of deltas: `+0.0350 (+16.9%)` per cell.
pub fn render_deltas(rows: &[DeltaRow]) -> String {
    let cell = |d: &MetricDelta| match d.percent {
        Some(p) => format!("{:+.4} ({:+.1}%)", d.absolute, p),
        None => format!("{:+.4}", d.absolute),
    };
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", COLUMNS.join(" | "));
    let _ = writeln!(out, "|---|---|---|---|---|");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            r.label,
            cell(&r.bleu1),
            cell(&r.rouge1),
            r.bertscore.as_ref().map(cell).unwrap_or_else(|| "n/a".into()),
            cell(&r.meteor)
        );
    }
    out
}
