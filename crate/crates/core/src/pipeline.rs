//! Experiment orchestration: retrieve `k`, re-rank to `n`, assemble the
//! prompt, generate, score, and aggregate into a results table.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{GenerationRequest, GenerationResponse, Generator, HttpGenerator, HttpRelevanceScorer, HttpTokenCounter, HttpTokenEmbedder, StubGenerator};
use crate::config::{Backend, EmbeddingSource, ExperimentConfig, TestSource, TextUnit};
use crate::corpus::{self, Corpus, QaPair, SplitAssignment};
use crate::embedding::{
    read_sentence_store, read_token_store, stub_embed_tokens, SentenceEmbedder, SentenceStore, StubEmbedder,
    TokenEmbedder, TokenMatrix, TokenStore,
};
use crate::error::{Error, Result};
use crate::index::FlatIndex;
use crate::metrics::{aggregate, evaluate_pair, write_rows_csv, MetricRow};
use crate::prompt::{assemble_prompt, PromptBundle, TokenCounter, WhitespaceCounter};
use crate::report::{emit_report, Provenance, ReportFormat, ResultsTable, TableRow};
use crate::rerank::{
    bm25_build, bm25_document_tokens, rerank_bm25, rerank_dense, rerank_late_interaction, rerank_seq2seq, Bm25Stats,
    Candidate, RankedContext, RelevanceScorer, Strategy, StubRelevanceScorer,
};

/// A retrieval query. `id` keys precomputed query embeddings in file mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: Option<String>,
    pub text: String,
}

impl Query {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            id: None,
            text: text.into(),
        }
    }

    pub fn for_pair(pair: &QaPair) -> Self {
        Self {
            id: Some(pair.id.clone()),
            text: pair.question.clone(),
        }
    }
}

enum QueryEmbeddings {
    Stub(StubEmbedder),
    Files {
        sentences: SentenceStore,
        tokens: Option<TokenStore>,
    },
}

/// Everything one experiment needs, built once and shared read-only across
/// worker threads.
pub struct Pipeline {
    config: ExperimentConfig,
    split: SplitAssignment,
    test_examples: Vec<QaPair>,
    index_corpus: Corpus,
    index: FlatIndex,
    token_store: Option<TokenStore>,
    queries: QueryEmbeddings,
    bm25_global: Option<Bm25Stats>,
    scorer: Box<dyn RelevanceScorer>,
    counter: Box<dyn TokenCounter>,
    generator: Box<dyn Generator>,
    bert_embedder: Box<dyn TokenEmbedder>,
    embedder_name: String,
}

fn load_pairs(path: &Path, cfg: &ExperimentConfig, abbreviations: &corpus::Abbreviations) -> Result<Vec<QaPair>> {
    let ingested = corpus::ingest_jsonl(path, false)?;
    if !ingested.skipped.is_empty() {
        log::warn!("{}: skipped {} malformed lines", path.display(), ingested.skipped.len());
    }
    if !cfg.clean {
        return Ok(ingested.pairs);
    }
    let (kept, dropped) = corpus::clean_pairs(ingested.pairs, abbreviations);
    if !dropped.is_empty() {
        log::warn!("{}: dropped {} pairs empty after cleaning", path.display(), dropped.len());
    }
    Ok(kept)
}

impl Pipeline {
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let abbreviations = match &config.abbreviations {
            Some(p) => corpus::load_abbreviations(p)?,
            None => corpus::Abbreviations::new(),
        };
        let corpus = Corpus::new(load_pairs(&config.corpus, &config, &abbreviations)?)?;
        let mut split = corpus::split_corpus(corpus.pairs(), config.ratios, config.seed)?;

        let test_examples: Vec<QaPair> = match &config.test_source {
            TestSource::Split => split.test_ids.iter().filter_map(|id| corpus.get(id).cloned()).collect(),
            TestSource::HeldOut { path } => {
                let held = Corpus::new(load_pairs(path, &config, &abbreviations)?)?;
                let ids: Vec<String> = held.ids().map(str::to_string).collect();
                split = split.with_held_out(&ids);
                let mut pairs = held.pairs().to_vec();
                pairs.sort_by(|a, b| a.id.cmp(&b.id));
                pairs
            }
        };
        let mut test_examples = test_examples;
        if let Some(max) = config.max_examples {
            test_examples.truncate(max);
        }

        let held_out: HashSet<&str> = match &config.test_source {
            TestSource::HeldOut { .. } => test_examples.iter().map(|p| p.id.as_str()).collect(),
            TestSource::Split => HashSet::new(),
        };
        let index_ids: HashSet<&str> = config
            .index_partitions
            .iter()
            .flat_map(|&p| split.ids(p).iter().map(String::as_str))
            .filter(|id| !held_out.contains(id))
            .collect();
        let index_corpus = corpus.subset(&index_ids);
        if index_corpus.is_empty() {
            return Err(Error::Config("no pairs left to index".into()));
        }

        let needs_tokens = config.strategies.contains(&Strategy::LateInteraction);
        let (index, token_store, queries, embedder_name) = match &config.embeddings {
            EmbeddingSource::Stub { dim, seed, text_unit } => {
                let emb = StubEmbedder::new(*dim, *seed);
                let unit = |p: &QaPair| match text_unit {
                    TextUnit::Question => p.question.clone(),
                    TextUnit::QuestionAnswer => p.document_text(),
                };
                let store = emb.sentence_store(index_corpus.pairs().iter().map(|p| (p.id.as_str(), unit(p))))?;
                let index = crate::index::build_index(&store)?;
                let tokens = if needs_tokens {
                    Some(emb.token_store(index_corpus.pairs().iter().map(|p| (p.id.as_str(), p.document_text())))?)
                } else {
                    None
                };
                (index, tokens, QueryEmbeddings::Stub(emb), TokenEmbedder::name(&emb))
            }
            EmbeddingSource::Files {
                sentence_store,
                token_store,
                query_sentence_store,
                query_token_store,
            } => {
                let store = read_sentence_store(sentence_store)?;
                let mut items = Vec::with_capacity(index_corpus.len());
                for p in index_corpus.pairs() {
                    let v = store
                        .get(&p.id)
                        .ok_or_else(|| Error::Store(format!("sentence store lacks pair {:?}", p.id)))?;
                    items.push((p.id.clone(), v.to_vec()));
                }
                let index = FlatIndex::from_vectors(items)?;
                let tokens = token_store.as_ref().map(read_token_store).transpose()?;
                let q_sent = read_sentence_store(query_sentence_store)?;
                if q_sent.dim() != index.dim() {
                    return Err(Error::DimMismatch {
                        expected: index.dim(),
                        got: q_sent.dim(),
                    });
                }
                let q_tok = query_token_store.as_ref().map(read_token_store).transpose()?;
                (
                    index,
                    tokens,
                    QueryEmbeddings::Files {
                        sentences: q_sent,
                        tokens: q_tok,
                    },
                    format!("files:{}", sentence_store.display()),
                )
            }
        };

        let bm25_global = if config.bm25_global && config.strategies.contains(&Strategy::Bm25) {
            let docs: Vec<(String, Vec<String>)> = index_corpus
                .pairs()
                .iter()
                .map(|p| (p.id.clone(), bm25_document_tokens(p)))
                .collect();
            Some(bm25_build(&docs)?)
        } else {
            None
        };

        let scorer: Box<dyn RelevanceScorer> = match &config.scorer.backend {
            Backend::Stub => Box::new(StubRelevanceScorer),
            Backend::Http { endpoint } => Box::new(HttpRelevanceScorer {
                endpoint: endpoint.clone(),
            }),
        };
        let counter: Box<dyn TokenCounter> = match &config.tokenizer {
            Backend::Stub => Box::new(WhitespaceCounter),
            Backend::Http { endpoint } => Box::new(HttpTokenCounter {
                endpoint: endpoint.clone(),
            }),
        };
        let generator: Box<dyn Generator> = match &config.generator.backend {
            Backend::Stub => Box::new(StubGenerator),
            Backend::Http { endpoint } => Box::new(HttpGenerator {
                endpoint: endpoint.clone(),
                label: config.generator.label.clone().unwrap_or_else(|| endpoint.url.clone()),
            }),
        };
        let bert_embedder: Box<dyn TokenEmbedder> = match &config.bertscore_embedder {
            Backend::Stub => {
                let (dim, seed) = match &config.embeddings {
                    EmbeddingSource::Stub { dim, seed, .. } => (*dim, *seed),
                    EmbeddingSource::Files { .. } => (64, 0),
                };
                Box::new(StubEmbedder::new(dim, seed))
            }
            Backend::Http { endpoint } => Box::new(HttpTokenEmbedder {
                endpoint: endpoint.clone(),
            }),
        };

        Ok(Self {
            config,
            split,
            test_examples,
            index_corpus,
            index,
            token_store,
            queries,
            bm25_global,
            scorer,
            counter,
            generator,
            bert_embedder,
            embedder_name,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn split(&self) -> &SplitAssignment {
        &self.split
    }

    pub fn test_examples(&self) -> &[QaPair] {
        &self.test_examples
    }

    pub fn index(&self) -> &FlatIndex {
        &self.index
    }

    pub fn index_corpus(&self) -> &Corpus {
        &self.index_corpus
    }

    pub fn query_vector(&self, query: &Query) -> Result<Vec<f32>> {
        match &self.queries {
            QueryEmbeddings::Stub(emb) => emb.embed(&query.text),
            QueryEmbeddings::Files { sentences, .. } => {
                let id = query
                    .id
                    .as_deref()
                    .ok_or_else(|| Error::Config("file embeddings need a query id".into()))?;
                sentences
                    .get(id)
                    .map(<[f32]>::to_vec)
                    .ok_or_else(|| Error::Store(format!("query store lacks {id:?}")))
            }
        }
    }

    pub fn query_tokens(&self, query: &Query) -> Result<TokenMatrix> {
        match &self.queries {
            QueryEmbeddings::Stub(emb) => {
                let m = stub_embed_tokens(&query.text, emb.dim, emb.seed);
                if m.is_empty() {
                    return Err(Error::EmptyMatrix);
                }
                Ok(m)
            }
            QueryEmbeddings::Files { tokens, .. } => {
                let id = query
                    .id
                    .as_deref()
                    .ok_or_else(|| Error::Config("file embeddings need a query id".into()))?;
                tokens
                    .as_ref()
                    .and_then(|t| t.get(id))
                    .cloned()
                    .ok_or_else(|| Error::MissingTokens(id.to_string()))
            }
        }
    }

    /// First stage: the `k` nearest indexed pairs.
    pub fn retrieve(&self, query: &Query) -> Result<Vec<Candidate>> {
        let v = self.query_vector(query)?;
        let hits = self.index.search(&v, self.config.k)?;
        Ok(hits
            .into_iter()
            .map(|h| Candidate {
                qa: self.index_corpus.get(&h.id).expect("index ids come from the corpus").clone(),
                dense_distance: h.distance,
            })
            .collect())
    }

    pub fn rerank(&self, strategy: Strategy, query: &Query, candidates: &[Candidate]) -> Result<Vec<RankedContext>> {
        let n = self.config.n;
        match strategy {
            Strategy::DenseL2 => Ok(rerank_dense(candidates, n)),
            Strategy::Bm25 => rerank_bm25(candidates, &query.text, &self.config.bm25, n, self.bm25_global.as_ref()),
            Strategy::LateInteraction => {
                let store = self
                    .token_store
                    .as_ref()
                    .ok_or_else(|| Error::Config("late-interaction needs a token store".into()))?;
                rerank_late_interaction(candidates, &self.query_tokens(query)?, store, n)
            }
            Strategy::Seq2SeqRelevance => rerank_seq2seq(
                candidates,
                &query.text,
                self.scorer.as_ref(),
                n,
                self.config.scorer.max_in_flight,
            ),
        }
    }

    pub fn assemble(&self, query: &Query, contexts: &[RankedContext]) -> Result<PromptBundle> {
        assemble_prompt(
            &query.text,
            contexts,
            self.config.budget,
            self.counter.as_ref(),
            self.config.context_order,
        )
    }

    pub fn generation_request(&self, prompt: &str) -> GenerationRequest {
        let g = &self.config.generator;
        GenerationRequest {
            prompt: prompt.to_string(),
            beam_size: g.beam_size,
            length_penalty: g.length_penalty,
            max_new_tokens: g.max_new_tokens,
            timeout_ms: g.timeout_ms,
        }
    }

    pub fn generate(&self, bundle: &PromptBundle) -> Result<GenerationResponse> {
        self.generator.generate(&self.generation_request(&bundle.rendered), bundle)
    }

    pub fn evaluate(&self, id: &str, generated: &str, reference: &str) -> Result<MetricRow> {
        evaluate_pair(id, generated, reference, self.bert_embedder.as_ref(), &self.config.meteor)
    }

    fn run_strategy(&self, strategy: Strategy, example: &QaPair, candidates: &[Candidate]) -> Result<ExampleRecord> {
        let query = Query::for_pair(example);
        let ranked = self.rerank(strategy, &query, candidates)?;
        let bundle = self.assemble(&query, &ranked)?;
        let response = self.generate(&bundle)?;
        let metrics = self.evaluate(&example.id, &response.text, &example.answer)?;
        Ok(ExampleRecord {
            id: example.id.clone(),
            strategy,
            query: example.question.clone(),
            reference: example.answer.clone(),
            candidates: candidates
                .iter()
                .map(|c| RetrievedId {
                    id: c.qa.id.clone(),
                    distance: c.dense_distance,
                })
                .collect(),
            selected: bundle
                .contexts
                .iter()
                .map(|c| SelectedContext {
                    id: c.qa.id.clone(),
                    rank: c.rank,
                    score: c.score,
                })
                .collect(),
            prompt: bundle.rendered.clone(),
            prompt_tokens: bundle.token_count,
            dropped_contexts: bundle.dropped_contexts,
            generated: response.text,
            model_tag: response.model_tag,
            metrics,
        })
    }

    fn worker_count(&self) -> usize {
        let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let mut w = self.config.workers.unwrap_or(cpus).max(1);
        if matches!(self.config.generator.backend, Backend::Http { .. }) {
            w = w.min(self.config.generator.max_in_flight.max(1));
        }
        w
    }

    /// Runs every test example under every configured strategy.
    pub fn run(&self) -> Result<ExperimentOutcome> {
        let strategies = self.config.strategies.clone();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.worker_count())
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let per_example: Vec<Vec<std::result::Result<ExampleRecord, ExampleFailure>>> = pool.install(|| {
            self.test_examples
                .par_iter()
                .map(|example| {
                    let fail = |strategy: Strategy, e: &Error| ExampleFailure {
                        id: example.id.clone(),
                        strategy,
                        error: e.to_string(),
                    };
                    match self.retrieve(&Query::for_pair(example)) {
                        Err(e) => strategies.iter().map(|&s| Err(fail(s, &e))).collect(),
                        Ok(candidates) => strategies
                            .iter()
                            .map(|&s| self.run_strategy(s, example, &candidates).map_err(|e| fail(s, &e)))
                            .collect(),
                    }
                })
                .collect()
        });

        let mut records = Vec::new();
        let mut failures = Vec::new();
        for results in per_example {
            for r in results {
                match r {
                    Ok(rec) => records.push(rec),
                    Err(f) => failures.push(f),
                }
            }
        }
        let order = |s: Strategy| strategies.iter().position(|&x| x == s).unwrap_or(usize::MAX);
        records.sort_by(|a, b| order(a.strategy).cmp(&order(b.strategy)).then_with(|| a.id.cmp(&b.id)));
        failures.sort_by(|a, b| order(a.strategy).cmp(&order(b.strategy)).then_with(|| a.id.cmp(&b.id)));

        if self.config.fail_fast {
            if let Some(f) = failures.first() {
                return Err(Error::Example {
                    id: f.id.clone(),
                    source: Box::new(Error::Report(format!("{}: {}", f.strategy, f.error))),
                });
            }
        }
        for f in &failures {
            log::warn!("example {} ({}) failed: {}", f.id, f.strategy, f.error);
        }

        let mut rows = Vec::new();
        for &s in &strategies {
            let metric_rows: Vec<MetricRow> = records
                .iter()
                .filter(|r| r.strategy == s)
                .map(|r| r.metrics.clone())
                .collect();
            let summary = aggregate(&metric_rows)
                .map_err(|_| Error::Report(format!("strategy {s}: no example completed")))?;
            let label = match &self.config.row_prefix {
                Some(p) => format!("{p} + {}", s.label()),
                None => s.label().to_string(),
            };
            rows.push(TableRow {
                label,
                bleu1: summary.bleu1,
                rouge1: summary.rouge1,
                bertscore: summary.bertscore_p,
                meteor: summary.meteor,
            });
        }

        let tags: BTreeSet<String> = records.iter().map(|r| r.model_tag.clone()).collect();
        let model_tags = if tags.is_empty() {
            vec![self.generator.model_tag()]
        } else {
            tags.into_iter().collect()
        };
        let table = ResultsTable {
            rows,
            provenance: Provenance {
                config_hash: self.config.config_hash(),
                seed: self.config.seed,
                model_tags,
                embedder: self.embedder_name.clone(),
                relevance_scorer: self.scorer.name(),
                token_counter: self.counter.name(),
                bertscore_embedder: self.bert_embedder.name(),
                examples: self.test_examples.len(),
                failures: failures.len(),
            },
        };
        Ok(ExperimentOutcome {
            table,
            records,
            failures,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedId {
    pub id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedContext {
    pub id: String,
    pub rank: usize,
    pub score: f64,
}

/// Per-example artifact row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub strategy: Strategy,
    pub query: String,
    pub reference: String,
    pub candidates: Vec<RetrievedId>,
    pub selected: Vec<SelectedContext>,
    pub prompt: String,
    pub prompt_tokens: usize,
    pub dropped_contexts: usize,
    pub generated: String,
    pub model_tag: String,
    pub metrics: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleFailure {
    pub id: String,
    pub strategy: Strategy,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub table: ResultsTable,
    /// Sorted by strategy (config order) then example id.
    pub records: Vec<ExampleRecord>,
    pub failures: Vec<ExampleFailure>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    engine_version: &'static str,
    config_hash: String,
    config: &'a ExperimentConfig,
    split_sizes: [usize; 3],
    indexed_pairs: usize,
    index_dim: usize,
    test_examples: usize,
    completed: usize,
    failures: usize,
    started_unix: u64,
    finished_unix: u64,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Names of the artifacts [`run_experiment`] writes into the output directory.
pub mod artifacts {
    pub const SPLIT: &str = "split.jsonl";
    pub const EXAMPLES: &str = "examples.jsonl";
    pub const FAILURES: &str = "failures.jsonl";
    pub const TABLE_JSON: &str = "table.json";
    pub const TABLE_MD: &str = "table.md";
    pub const TABLE_CSV: &str = "table.csv";
    /// The only artifact carrying wall-clock timestamps.
    pub const MANIFEST: &str = "manifest.json";

    pub fn metrics_csv(strategy: crate::rerank::Strategy) -> String {
        format!("metrics_{strategy}.csv")
    }
}

/// Builds the pipeline, runs it and writes all artifacts to `out_dir`.
pub fn run_experiment(config: ExperimentConfig) -> Result<ExperimentOutcome> {
    let started = unix_now();
    let pipeline = Pipeline::build(config)?;
    let outcome = pipeline.run()?;
    let cfg = pipeline.config();
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    corpus::write_split_manifest(out.join(artifacts::SPLIT), pipeline.split())?;
    write_jsonl(&out.join(artifacts::EXAMPLES), &outcome.records)?;
    write_jsonl(&out.join(artifacts::FAILURES), &outcome.failures)?;
    for &s in &cfg.strategies {
        let rows: Vec<MetricRow> = outcome
            .records
            .iter()
            .filter(|r| r.strategy == s)
            .map(|r| r.metrics.clone())
            .collect();
        write_rows_csv(out.join(artifacts::metrics_csv(s)), &rows)?;
    }
    let table_json = serde_json::to_string_pretty(&outcome.table)?;
    let p = out.join(artifacts::TABLE_JSON);
    fs::write(&p, table_json + "\n").map_err(|e| Error::io(&p, e))?;
    let p = out.join(artifacts::TABLE_MD);
    fs::write(&p, emit_report(&outcome.table, ReportFormat::Markdown)?).map_err(|e| Error::io(&p, e))?;
    let p = out.join(artifacts::TABLE_CSV);
    fs::write(&p, emit_report(&outcome.table, ReportFormat::Csv)?).map_err(|e| Error::io(&p, e))?;

    let split = pipeline.split();
    let manifest = RunManifest {
        engine_version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.config_hash(),
        config: cfg,
        split_sizes: [split.train_ids.len(), split.validation_ids.len(), split.test_ids.len()],
        indexed_pairs: pipeline.index().len(),
        index_dim: pipeline.index().dim(),
        test_examples: pipeline.test_examples().len(),
        completed: outcome.records.len(),
        failures: outcome.failures.len(),
        started_unix: started,
        finished_unix: unix_now(),
    };
    let p = out.join(artifacts::MANIFEST);
    let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n").map_err(|e| Error::io(&p, e))?;
    Ok(outcome)
}

/// Reads a `table.json` written by [`run_experiment`].
pub fn read_table(path: impl AsRef<Path>) -> Result<ResultsTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
