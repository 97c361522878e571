//! End-to-end acceptance checks. Runs without the test harness so each
//! criterion always prints one PASS or FAIL line; exits non-zero if any fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use rand::seq::SliceRandom;
use rand::Rng;

use ragqa::config::{EmbeddingSource, ExperimentConfig, TextUnit};
use ragqa::corpus::{Partition, QaPair};
use ragqa::embedding::{stub_embed, stub_embed_tokens, StubEmbedder, TokenMatrix};
use ragqa::index::FlatIndex;
use ragqa::metrics::*;
use ragqa::pipeline::{artifacts, run_experiment, Pipeline};
use ragqa::prompt::{assemble_prompt, render_context, render_prompt, ContextOrder, WhitespaceCounter};
use ragqa::report::{compare_runs, emit_report, parse_report_csv, ReportFormat, ResultsTable, TableRow};
use ragqa::rerank::*;

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(a: f64, b: f64, tol: f64, what: &str) -> Check {
    // written so that NaN fails
    let close = (a - b).abs() <= tol;
    ensure!(close, "{what}: {a} vs {b} (tol {tol})");
    Ok(())
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn deadline(start: Instant, limit: Duration, what: &str) -> Check {
    let took = start.elapsed();
    ensure!(took <= limit, "{what} took {took:?}, limit {limit:?}");
    Ok(())
}

fn metric_oracles() -> Check {
    let start = Instant::now();
    let p = MeteorParams::default();
    within(bleu1(&toks("the cat sat"), &toks("the cat sat down")).unwrap(), 0.7165, 1e-4, "bleu1 hand")?;
    within(rouge1_recall(&toks("the cat sat"), &toks("the cat sat down")).unwrap(), 0.75, 1e-6, "rouge1 hand")?;
    within(meteor(&toks("a b c"), &toks("a b c"), &p).unwrap(), 0.9815, 1e-4, "meteor hand")?;
    within(meteor(&toks("the cat"), &toks("the dog"), &p).unwrap(), 0.25, 1e-6, "meteor partial")?;
    let x = TokenMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
    let y = TokenMatrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
    within(bertscore_precision(&x, &y).unwrap(), 0.5, 1e-6, "bertscore hand")?;

    let mut r = rng(1000);
    for case in 0..1000 {
        let g = random_tokens(&mut r, 12, 0, 9);
        let rf = random_tokens(&mut r, 12, 1, 9);
        within(bleu1(&g, &rf).unwrap(), oracle_bleu1(&g, &rf), 1e-9, &format!("bleu1 case {case}"))?;
        within(rouge1_recall(&g, &rf).unwrap(), oracle_rouge1(&g, &rf), 1e-9, &format!("rouge1 case {case}"))?;
        if !g.is_empty() {
            let b = meteor_breakdown(&g, &rf, &p).unwrap();
            ensure!(b.exact, "meteor case {case} hit the search budget");
            within(b.score, oracle_meteor(&g, &rf, p.gamma, p.theta), 1e-9, &format!("meteor case {case}"))?;
            let gm = random_matrix(&mut r, g.len(), 8);
            let rm = random_matrix(&mut r, rf.len(), 8);
            let got = bertscore_precision(&TokenMatrix::from_rows(&gm).unwrap(), &TokenMatrix::from_rows(&rm).unwrap()).unwrap();
            within(got, oracle_bertscore(&gm, &rm), 1e-6, &format!("bertscore case {case}"))?;
        }
    }
    deadline(start, Duration::from_secs(30), "metric checks")
}

fn index_exactness() -> Check {
    let start = Instant::now();
    let mut r = rng(2000);
    let ids: Vec<String> = (0..1000).map(|i| format!("v{i:04}")).collect();
    let vecs: Vec<Vec<f32>> = (0..1000).map(|_| (0..32).map(|_| r.gen_range(-1.0f32..1.0)).collect()).collect();
    let idx = FlatIndex::from_vectors(ids.iter().cloned().zip(vecs.iter().cloned())).unwrap();
    for qi in 0..100 {
        let q: Vec<f32> = (0..32).map(|_| r.gen_range(-1.0f32..1.0)).collect();
        let got: Vec<(String, f64)> = idx.search(&q, 16).unwrap().into_iter().map(|n| (n.id, n.distance)).collect();
        ensure!(got == oracle_knn(&ids, &vecs, &q, 16), "query {qi} differs from the linear scan");
    }
    deadline(start, Duration::from_secs(10), "index checks")
}

fn candidate_pool(seed: u64) -> Vec<Candidate> {
    let mut r = rng(seed);
    let words = ["fever", "cough", "rash", "pain", "dose", "sleep", "heart", "lung"];
    (0..16)
        .map(|i| {
            let q: Vec<&str> = (0..r.gen_range(2..6)).map(|_| *words.choose(&mut r).unwrap()).collect();
            let a: Vec<&str> = (0..r.gen_range(2..8)).map(|_| *words.choose(&mut r).unwrap()).collect();
            Candidate {
                qa: QaPair::new(format!("c{i:02}"), q.join(" "), a.join(" "), ""),
                dense_distance: r.gen_range(0..6) as f64 * 0.25,
            }
        })
        .collect()
}

fn ranked_ids(ranked: &[RankedContext]) -> Vec<String> {
    ranked.iter().map(|c| c.qa.id.clone()).collect()
}

fn reranker_oracles() -> Check {
    let p = Bm25Params::default();
    let query = "fever and cough at night";
    let qt = oracle_tokenize(query);
    let emb = StubEmbedder::new(16, 4);
    let qm = stub_embed_tokens(query, 16, 4);
    let qrows: Vec<Vec<f32>> = qm.iter_rows().map(<[f32]>::to_vec).collect();
    for seed in 0..10 {
        let c = candidate_pool(3000 + seed);
        let store = emb.token_store(c.iter().map(|x| (x.qa.id.as_str(), x.qa.document_text()))).unwrap();
        let docs: Vec<Vec<String>> = c.iter().map(|x| oracle_tokenize(&x.qa.document_text())).collect();

        let dense: Vec<(String, f64)> = c.iter().map(|x| (x.qa.id.clone(), -x.dense_distance)).collect();
        let bm: Vec<(String, f64)> = c.iter().enumerate().map(|(i, x)| (x.qa.id.clone(), oracle_bm25(&docs, &qt, i, p.k1, p.b))).collect();
        let li: Vec<(String, f64)> = c
            .iter()
            .map(|x| {
                let d: Vec<Vec<f32>> = store.get(&x.qa.id).unwrap().iter_rows().map(<[f32]>::to_vec).collect();
                (x.qa.id.clone(), oracle_maxsim(&qrows, &d))
            })
            .collect();
        let mut uq = qt.clone();
        uq.sort();
        uq.dedup();
        let s2: Vec<(String, f64)> = c
            .iter()
            .zip(&docs)
            .map(|(x, d)| (x.qa.id.clone(), uq.iter().filter(|t| d.contains(t)).count() as f64 / uq.len() as f64))
            .collect();

        let run = |c: &[Candidate]| {
            (
                ranked_ids(&rerank_dense(c, 4)),
                ranked_ids(&rerank_bm25(c, query, &p, 4, None).unwrap()),
                ranked_ids(&rerank_late_interaction(c, &qm, &store, 4).unwrap()),
                ranked_ids(&rerank_seq2seq(c, query, &StubRelevanceScorer, 4, 4).unwrap()),
            )
        };
        let want = (oracle_order(&dense, 4), oracle_order(&bm, 4), oracle_order(&li, 4), oracle_order(&s2, 4));
        let base = run(&c);
        ensure!(base == want, "pool {seed}: rankings differ from oracle");
        let mut r = rng(seed);
        for shuffle in 0..50 {
            let mut s = c.clone();
            s.shuffle(&mut r);
            ensure!(run(&s) == base, "pool {seed} shuffle {shuffle} changed the ranking");
        }
    }

    // dense reranking equals the first n of the index search
    let pairs = synthetic_pairs(120, 4);
    let idx = FlatIndex::from_vectors(pairs.iter().map(|p| (p.id.clone(), stub_embed(&p.document_text(), 24, 5)))).unwrap();
    for p in pairs.iter().take(20) {
        let hits = idx.search(&stub_embed(&p.question, 24, 5), 16).unwrap();
        let cands: Vec<Candidate> = hits
            .iter()
            .map(|h| Candidate {
                qa: pairs.iter().find(|x| x.id == h.id).unwrap().clone(),
                dense_distance: h.distance,
            })
            .collect();
        let want: Vec<String> = hits.iter().take(4).map(|h| h.id.clone()).collect();
        ensure!(ranked_ids(&rerank_dense(&cands, 4)) == want, "dense rerank is not a truncation for {}", p.id);
    }
    Ok(())
}

fn prompt_fidelity() -> Check {
    let ctx = |rank: usize, q: &str, a: &str| RankedContext {
        qa: QaPair::new(format!("c{rank}"), q, a, ""),
        score: 1.0 / rank as f64,
        rank,
        strategy: Strategy::Bm25,
    };
    let one = assemble_prompt("Q?", &[ctx(1, "A?", "B.")], 512, &WhitespaceCounter, ContextOrder::BestFirst).unwrap();
    ensure!(
        one.rendered.as_bytes() == b"Context: Question: A? Answer: B. Question: Q? Answer:",
        "rendered {:?}",
        one.rendered
    );
    let long = vec!["w"; 596].join(" ");
    let t = assemble_prompt("Q?", &[ctx(1, "A?", &long)], 512, &WhitespaceCounter, ContextOrder::BestFirst).unwrap();
    ensure!(t.dropped_contexts == 1 && t.token_count <= 512, "600-token prompt not truncated by whole contexts");

    let mut r = rng(4000);
    for case in 0..100 {
        let n = r.gen_range(0..7);
        let contexts: Vec<RankedContext> = (1..=n)
            .map(|rank| {
                let q = random_tokens(&mut r, 20, 1, 6).join(" ");
                let a = random_tokens(&mut r, 20, 1, 12).join(" ");
                ctx(rank, &q, &a)
            })
            .collect();
        let query = random_tokens(&mut r, 20, 1, 6).join(" ");
        // budgets below the bare question are a separate error path
        let bare = render_prompt::<&str>(&query, &[]).split_whitespace().count();
        let budget = r.gen_range(bare..80);
        let b = assemble_prompt(&query, &contexts, budget, &WhitespaceCounter, ContextOrder::BestFirst)
            .map_err(|e| format!("case {case}: {e}"))?;
        ensure!(b.token_count <= budget, "case {case}: {} tokens over {budget}", b.token_count);
        let kept = b.contexts.len();
        ensure!(b.contexts[..] == contexts[..kept], "case {case}: survivors are not the best-ranked prefix");
        if kept < n {
            let more: Vec<String> = contexts[..=kept].iter().map(|c| render_context(&c.qa)).collect();
            ensure!(
                render_prompt(&query, &more).split_whitespace().count() > budget,
                "case {case}: dropped a context that fit"
            );
        }
    }
    Ok(())
}

fn e2e_determinism() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        corpus: write_corpus(dir.path(), "corpus.jsonl", &synthetic_pairs(200, 77)),
        strategies: Strategy::ALL.to_vec(),
        out_dir: dir.path().join("out"),
        ..ExperimentConfig::default()
    };
    let mut names: Vec<String> = [
        artifacts::SPLIT,
        artifacts::EXAMPLES,
        artifacts::TABLE_JSON,
        artifacts::TABLE_MD,
        artifacts::TABLE_CSV,
    ]
    .map(String::from)
    .to_vec();
    names.extend(Strategy::ALL.iter().map(|&s| artifacts::metrics_csv(s)));
    let snapshot = || -> Vec<Vec<u8>> { names.iter().map(|n| fs::read(cfg.out_dir.join(n)).unwrap()).collect() };

    let first = run_experiment(cfg.clone()).map_err(|e| e.to_string())?;
    ensure!(first.failures.is_empty(), "{} example failures", first.failures.len());
    ensure!(first.table.rows.len() == 4, "expected four rows");
    let a = snapshot();
    fs::remove_dir_all(&cfg.out_dir).unwrap();
    run_experiment(cfg.clone()).map_err(|e| e.to_string())?;
    for (name, (x, y)) in names.iter().zip(a.iter().zip(snapshot())) {
        ensure!(*x == y, "{name} differs between runs");
    }
    deadline(start, Duration::from_secs(60), "two runs")
}

const TABLE: [(&str, [f64; 4]); 5] = [
    ("Base T5 + FAISS", [0.2065, 0.2618, 0.1132, 0.1948]),
    ("Finetuned T5 + FAISS", [0.2415, 0.2918, 0.2054, 0.2264]),
    ("Finetuned T5 + BM25", [0.2221, 0.2714, 0.1318, 0.2054]),
    ("Finetuned T5 + ColBERT", [0.2218, 0.2713, 0.1364, 0.2053]),
    ("Finetuned T5 + MonoT5", [0.2172, 0.2632, 0.1277, 0.2023]),
];

fn report_and_deltas() -> Check {
    let rows: Vec<TableRow> = TABLE.iter().map(|(l, v)| TableRow::new(*l, v[0], v[1], v[2], v[3])).collect();
    let table = ResultsTable::from_rows(rows.clone());
    let md = emit_report(&table, ReportFormat::Markdown).unwrap();
    let lines: Vec<&str> = md.lines().collect();
    ensure!(lines[0] == "| Model | BLEU-1 | ROUGE-1 | BERTScore | METEOR |", "header {:?}", lines[0]);
    for (line, (label, v)) in lines[2..].iter().zip(TABLE) {
        let want = format!("| {label} | {:.4} | {:.4} | {:.4} | {:.4} |", v[0], v[1], v[2], v[3]);
        ensure!(*line == want, "row {line:?} vs {want:?}");
    }
    let csv = emit_report(&table, ReportFormat::Csv).unwrap();
    ensure!(parse_report_csv(&csv).unwrap() == rows, "csv does not reparse to the same rows");

    let as_run = |v: [f64; 4]| ResultsTable::from_rows(vec![TableRow::new("T5 + FAISS", v[0], v[1], v[2], v[3])]);
    let d = compare_runs(&as_run(TABLE[0].1), &as_run(TABLE[1].1)).unwrap();
    let bleu = d[0].bleu1.percent.unwrap();
    let bert = d[0].bertscore.as_ref().unwrap().percent.unwrap();
    within(bleu, 17.0, 1.0, "BLEU-1 relative gain")?;
    within(bert, 81.0, 1.0, "BERTScore relative gain")
}

fn pipeline_sanity() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        corpus: write_corpus(dir.path(), "corpus.jsonl", &synthetic_pairs(100, 88)),
        strategies: vec![Strategy::DenseL2],
        index_partitions: vec![Partition::Train, Partition::Validation, Partition::Test],
        embeddings: EmbeddingSource::Stub {
            dim: 32,
            seed: 1,
            text_unit: TextUnit::Question,
        },
        out_dir: dir.path().join("out"),
        ..ExperimentConfig::default()
    };
    let out = Pipeline::build(cfg).and_then(|p| p.run()).map_err(|e| e.to_string())?;
    ensure!(!out.records.is_empty(), "no test examples");
    for r in &out.records {
        ensure!(r.candidates[0].id == r.id, "{}: top hit is {}", r.id, r.candidates[0].id);
        ensure!(r.metrics.bleu1 == 1.0 && r.metrics.rouge1 == 1.0, "{}: bleu1 {} rouge1 {}", r.id, r.metrics.bleu1, r.metrics.rouge1);
    }
    Ok(())
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("metric implementations match oracles", metric_oracles),
        ("flat index equals exhaustive search", index_exactness),
        ("rerankers match oracles and ignore input order", reranker_oracles),
        ("prompt bytes and whole-context truncation", prompt_fidelity),
        ("experiment reruns are byte-identical", e2e_determinism),
        ("report layout and relative gains", report_and_deltas),
        ("self-retrieval scores perfectly", pipeline_sanity),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(()) => println!("PASS {name} ({:.2?})", start.elapsed()),
            Err(e) => {
                println!("FAIL {name}: {e}");
                failed.push(name);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
