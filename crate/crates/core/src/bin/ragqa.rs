use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ragqa::config::{load_config, parse_strategies, ConfigOverrides, EmbeddingSource, ExperimentConfig, TextUnit};
use ragqa::corpus::{self, Corpus};
use ragqa::embedding::{read_sentence_store, write_sentence_store, StubEmbedder};
use ragqa::index::{build_index, BuildManifest};
use ragqa::metrics::{aggregate, evaluate_pair, write_rows_csv, MetricRow};
use ragqa::pipeline::{read_table, run_experiment, Pipeline, Query};
use ragqa::prompt::PromptBundle;
use ragqa::report::{compare_runs, emit_report, render_deltas, ReportFormat};

#[derive(Parser)]
#[command(name = "ragqa", version, about = "Retrieval-augmented long-form QA experiments")]
struct Cli {
    /// TOML or JSON experiment config (env: RAGQA_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// One strategy, a comma list, or `all`.
    #[arg(long, global = true)]
    strategy: Option<String>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    budget: Option<usize>,
    /// Generator base URL; switches generation to HTTP.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read raw JSONL, clean it, write the cleaned corpus and print stats.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        abbreviations: Option<PathBuf>,
        /// Fail on the first malformed line instead of skipping it.
        #[arg(long)]
        strict: bool,
    },
    /// Write a seeded train/validation/test split manifest.
    Split {
        corpus: PathBuf,
        /// Three comma-separated ratios.
        #[arg(long, default_value = "0.7,0.15,0.15")]
        ratios: String,
    },
    /// Embed a corpus with the stub embedder (or check an existing store)
    /// and write the store plus a build manifest.
    BuildIndex {
        corpus: Option<PathBuf>,
        /// Existing RBQE store to index instead of embedding.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// First-stage dense retrieval of k candidates.
    Retrieve(QueryArgs),
    /// Retrieval followed by one re-ranking strategy.
    Rerank(QueryArgs),
    /// Retrieval, re-ranking and prompt assembly.
    Assemble(QueryArgs),
    /// The full per-question path through generation.
    Generate(QueryArgs),
    /// Score generations: either one pair or a JSONL of {id, generated, reference}.
    Evaluate {
        #[arg(long)]
        generated: Option<String>,
        #[arg(long)]
        reference: Option<String>,
        #[arg(long, conflicts_with_all = ["generated", "reference"])]
        pairs: Option<PathBuf>,
    },
    /// Run every configured strategy over the test examples.
    Experiment,
    /// Render a table.json, or the deltas from a baseline.
    Report {
        table: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct QueryArgs {
    question: String,
    /// Example id, needed when query embeddings come from files.
    #[arg(long)]
    id: Option<String>,
}

impl Cli {
    fn overrides(&self) -> Result<ConfigOverrides> {
        let flags = ConfigOverrides {
            seed: self.seed,
            strategies: self.strategy.as_deref().map(parse_strategies).transpose()?,
            k: self.k,
            n: self.n,
            budget: self.budget,
            endpoint: self.endpoint.clone(),
            out: self.out.clone(),
        };
        Ok(flags.over(ConfigOverrides::from_env_vars(std::env::vars())?))
    }

    fn experiment_config(&self) -> Result<ExperimentConfig> {
        let path = self.config.clone().or_else(|| std::env::var_os("RAGQA_CONFIG").map(PathBuf::from));
        let mut cfg = match path {
            Some(p) => load_config(&p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        self.overrides()?.apply(&mut cfg);
        Ok(cfg)
    }
}

// stdout writes that surface a closed pipe as an error instead of a panic
macro_rules! outln {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout().lock(), $($arg)*)?
    };
}

macro_rules! out {
    ($($arg:tt)*) => {
        write!(std::io::stdout().lock(), $($arg)*)?
    };
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    outln!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn query_path(cli: &Cli, args: &QueryArgs) -> Result<(Pipeline, Query)> {
    let pipeline = Pipeline::build(cli.experiment_config()?)?;
    let query = Query {
        id: args.id.clone(),
        text: args.question.clone(),
    };
    Ok((pipeline, query))
}

fn assembled(p: &Pipeline, q: &Query) -> Result<PromptBundle> {
    let strategy = p.config().strategies[0];
    let ranked = p.rerank(strategy, q, &p.retrieve(q)?)?;
    Ok(p.assemble(q, &ranked)?)
}

#[derive(serde::Deserialize)]
struct EvalLine {
    id: String,
    generated: String,
    reference: String,
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest {
            input,
            abbreviations,
            strict,
        } => {
            let ingested = corpus::ingest_jsonl(input, *strict)?;
            for s in &ingested.skipped {
                eprintln!("line {}: {}", s.line, s.reason);
            }
            let abbrevs = match abbreviations {
                Some(p) => corpus::load_abbreviations(p)?,
                None => corpus::Abbreviations::new(),
            };
            let (pairs, dropped) = corpus::clean_pairs(ingested.pairs, &abbrevs);
            for id in &dropped {
                eprintln!("dropped {id}: empty after cleaning");
            }
            let out = out_path(cli, "corpus.jsonl");
            ensure_parent(&out)?;
            corpus::write_jsonl(&out, &pairs)?;
            print_json(&corpus::corpus_stats(&pairs))
        }
        Command::Split { corpus: path, ratios } => {
            let r: Vec<f64> = ratios
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .context("ratios must be numbers")?;
            let Ok(r) = <[f64; 3]>::try_from(r) else {
                bail!("expected three ratios");
            };
            let pairs = corpus::ingest_jsonl(path, true)?.pairs;
            let seed = cli.overrides()?.seed.unwrap_or(ragqa::config::DEFAULT_SEED);
            let split = corpus::split_corpus(&pairs, r, seed)?;
            let out = out_path(cli, "split.jsonl");
            ensure_parent(&out)?;
            corpus::write_split_manifest(&out, &split)?;
            outln!(
                "train {} validation {} test {} -> {}",
                split.train_ids.len(),
                split.validation_ids.len(),
                split.test_ids.len(),
                out.display()
            );
            Ok(())
        }
        Command::BuildIndex { corpus: path, store } => {
            let out = out_path(cli, "index");
            fs::create_dir_all(&out)?;
            let store_path = match (store, path) {
                (Some(s), _) => s.clone(),
                (None, Some(c)) => {
                    let cfg = cli.experiment_config()?;
                    let EmbeddingSource::Stub { dim, seed, text_unit } = cfg.embeddings else {
                        bail!("build-index embeds with the stub embedder; pass --store for exported files");
                    };
                    let pairs = Corpus::new(corpus::ingest_jsonl(c, true)?.pairs)?;
                    let emb = StubEmbedder::new(dim, seed);
                    let s = emb.sentence_store(pairs.pairs().iter().map(|p| {
                        let text = match text_unit {
                            TextUnit::Question => p.question.clone(),
                            TextUnit::QuestionAnswer => p.document_text(),
                        };
                        (p.id.as_str(), text)
                    }))?;
                    let sp = out.join("sentences.rbqe");
                    write_sentence_store(&s, &sp)?;
                    sp
                }
                (None, None) => bail!("give a corpus or --store"),
            };
            let s = read_sentence_store(&store_path)?;
            let index = build_index(&s)?;
            let manifest = BuildManifest::for_store_file(&store_path, &s)?;
            fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
            outln!("indexed {} vectors of dim {}", index.len(), index.dim());
            Ok(())
        }
        Command::Retrieve(args) => {
            let (p, q) = query_path(cli, args)?;
            let hits: Vec<_> = p
                .retrieve(&q)?
                .into_iter()
                .map(|c| serde_json::json!({"id": c.qa.id, "distance": c.dense_distance}))
                .collect();
            print_json(&hits)
        }
        Command::Rerank(args) => {
            let (p, q) = query_path(cli, args)?;
            let candidates = p.retrieve(&q)?;
            for &s in &p.config().strategies {
                for r in p.rerank(s, &q, &candidates)? {
                    outln!("{}\t{}\t{}\t{}", s, r.rank, r.qa.id, r.score);
                }
            }
            Ok(())
        }
        Command::Assemble(args) => {
            let (p, q) = query_path(cli, args)?;
            let b = assembled(&p, &q)?;
            eprintln!("{} tokens, {} contexts dropped", b.token_count, b.dropped_contexts);
            outln!("{}", b.rendered);
            Ok(())
        }
        Command::Generate(args) => {
            let (p, q) = query_path(cli, args)?;
            let b = assembled(&p, &q)?;
            let r = p.generate(&b)?;
            eprintln!("{} in {:?}", r.model_tag, r.latency);
            outln!("{}", r.text);
            Ok(())
        }
        Command::Evaluate {
            generated,
            reference,
            pairs,
        } => {
            let cfg = cli.experiment_config()?;
            let (dim, seed) = match cfg.embeddings {
                EmbeddingSource::Stub { dim, seed, .. } => (dim, seed),
                EmbeddingSource::Files { .. } => (64, 0),
            };
            let emb = StubEmbedder::new(dim, seed);
            match (generated, reference, pairs) {
                (Some(g), Some(r), None) => print_json(&evaluate_pair("-", g, r, &emb, &cfg.meteor)?),
                (None, None, Some(path)) => {
                    let text = fs::read_to_string(path)?;
                    let mut rows: Vec<MetricRow> = Vec::new();
                    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                        let e: EvalLine = serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
                        rows.push(evaluate_pair(&e.id, &e.generated, &e.reference, &emb, &cfg.meteor)?);
                    }
                    rows.sort_by(|a, b| a.id.cmp(&b.id));
                    let out = out_path(cli, "metrics.csv");
                    ensure_parent(&out)?;
                    write_rows_csv(&out, &rows)?;
                    print_json(&aggregate(&rows)?)
                }
                _ => bail!("give --generated and --reference, or --pairs"),
            }
        }
        Command::Experiment => {
            let cfg = cli.experiment_config()?;
            let out = cfg.out_dir.clone();
            let outcome = run_experiment(cfg)?;
            out!("{}", emit_report(&outcome.table, ReportFormat::Markdown)?);
            eprintln!(
                "{} records, {} failures, artifacts in {}",
                outcome.records.len(),
                outcome.failures.len(),
                out.display()
            );
            Ok(())
        }
        Command::Report {
            table,
            format,
            baseline,
        } => {
            let t = read_table(table)?;
            let text = match baseline {
                Some(b) => render_deltas(&compare_runs(&read_table(b)?, &t)?),
                None => emit_report(&t, format.parse()?)?,
            };
            match &cli.out {
                Some(p) => {
                    ensure_parent(p)?;
                    fs::write(p, text)?;
                }
                None => out!("{text}"),
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        let broken_pipe = e
            .chain()
            .filter_map(|c| c.downcast_ref::<std::io::Error>())
            .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe);
        if broken_pipe {
            return;
        }
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
