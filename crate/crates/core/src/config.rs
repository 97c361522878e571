//! Experiment configuration: file loading, validation and layered
//! overrides (flag > environment > file).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::{
    Endpoint, DEFAULT_BEAM_SIZE, DEFAULT_GENERATOR_IN_FLIGHT, DEFAULT_LENGTH_PENALTY, DEFAULT_MAX_NEW_TOKENS,
    DEFAULT_TIMEOUT_MS,
};
use crate::corpus::{Partition, DEFAULT_RATIOS};
use crate::error::{Error, Result};
use crate::metrics::MeteorParams;
use crate::prompt::{ContextOrder, DEFAULT_TOKEN_BUDGET};
use crate::rerank::{Bm25Params, Strategy, DEFAULT_SCORER_IN_FLIGHT};

pub const DEFAULT_K: usize = 16;
pub const DEFAULT_N: usize = 4;
pub const DEFAULT_SEED: u64 = 42;

/// Which text of a pair a stub sentence embedding is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextUnit {
    Question,
    #[default]
    QuestionAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Deterministic model-free embeddings.
    Stub {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        text_unit: TextUnit,
    },
    /// Exported RBQE/RBQT files. Query stores are keyed by test example id.
    Files {
        sentence_store: PathBuf,
        #[serde(default)]
        token_store: Option<PathBuf>,
        query_sentence_store: PathBuf,
        #[serde(default)]
        query_token_store: Option<PathBuf>,
    },
}

fn default_dim() -> usize {
    64
}

impl Default for EmbeddingSource {
    fn default() -> Self {
        EmbeddingSource::Stub {
            dim: default_dim(),
            seed: 0,
            text_unit: TextUnit::default(),
        }
    }
}

/// A service that is either stubbed locally or reached over HTTP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Stub,
    Http { endpoint: Endpoint },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub backend: Backend,
    /// Tag recorded for this generator; falls back to the backend's own.
    pub label: Option<String>,
    pub beam_size: u32,
    pub length_penalty: f64,
    pub max_new_tokens: u32,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Stub,
            label: None,
            beam_size: DEFAULT_BEAM_SIZE,
            length_penalty: DEFAULT_LENGTH_PENALTY,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            max_in_flight: DEFAULT_GENERATOR_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub backend: Backend,
    pub max_in_flight: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Stub,
            max_in_flight: DEFAULT_SCORER_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestSource {
    /// The split's test partition.
    #[default]
    Split,
    /// An explicit held-out JSONL file that replaces the test partition.
    HeldOut { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub abbreviations: Option<PathBuf>,
    pub clean: bool,
    pub test_source: TestSource,
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Partitions whose pairs are indexed for retrieval.
    pub index_partitions: Vec<Partition>,
    pub strategies: Vec<Strategy>,
    pub k: usize,
    pub n: usize,
    pub budget: usize,
    pub context_order: ContextOrder,
    pub embeddings: EmbeddingSource,
    pub bm25: Bm25Params,
    /// Use corpus-wide BM25 statistics instead of the candidate pool.
    pub bm25_global: bool,
    pub meteor: MeteorParams,
    pub generator: GeneratorConfig,
    pub scorer: ScorerConfig,
    /// Token counter for the budget; stub means whitespace.
    pub tokenizer: Backend,
    /// Token embedder for BERTScore.
    pub bertscore_embedder: Backend,
    /// Prefix for result row labels, e.g. `"Finetuned"`.
    pub row_prefix: Option<String>,
    pub workers: Option<usize>,
    pub fail_fast: bool,
    pub out_dir: PathBuf,
    /// Cap on test examples, taken in id order.
    pub max_examples: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            abbreviations: None,
            clean: true,
            test_source: TestSource::Split,
            ratios: DEFAULT_RATIOS,
            seed: DEFAULT_SEED,
            index_partitions: vec![Partition::Train, Partition::Validation],
            strategies: vec![Strategy::DenseL2],
            k: DEFAULT_K,
            n: DEFAULT_N,
            budget: DEFAULT_TOKEN_BUDGET,
            context_order: ContextOrder::BestFirst,
            embeddings: EmbeddingSource::default(),
            bm25: Bm25Params::default(),
            bm25_global: false,
            meteor: MeteorParams::default(),
            generator: GeneratorConfig::default(),
            scorer: ScorerConfig::default(),
            tokenizer: Backend::Stub,
            bertscore_embedder: Backend::Stub,
            row_prefix: None,
            workers: None,
            fail_fast: false,
            out_dir: PathBuf::from("out"),
            max_examples: None,
        }
    }
}

fn check_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 {
            return Err(Error::Config("k and n must be at least 1".into()));
        }
        if self.n > self.k {
            return Err(Error::Config(format!("n = {} exceeds k = {}", self.n, self.k)));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies selected".into()));
        }
        if self.index_partitions.is_empty() {
            return Err(Error::Config("no index partitions selected".into()));
        }
        self.bm25.validate()?;
        self.meteor.validate()?;
        check_file(&self.corpus, "corpus")?;
        if let Some(p) = &self.abbreviations {
            check_file(p, "abbreviation table")?;
        }
        if let TestSource::HeldOut { path } = &self.test_source {
            check_file(path, "held-out test file")?;
        }
        match &self.embeddings {
            EmbeddingSource::Stub { dim, .. } if *dim < 2 => {
                return Err(Error::Config("stub embedding dim must be at least 2".into()));
            }
            EmbeddingSource::Stub { .. } => {}
            EmbeddingSource::Files {
                sentence_store,
                token_store,
                query_sentence_store,
                query_token_store,
            } => {
                check_file(sentence_store, "sentence store")?;
                check_file(query_sentence_store, "query sentence store")?;
                let needs_tokens = self.strategies.contains(&Strategy::LateInteraction);
                match (token_store, query_token_store) {
                    (Some(t), Some(q)) => {
                        check_file(t, "token store")?;
                        check_file(q, "query token store")?;
                    }
                    _ if needs_tokens => {
                        return Err(Error::Config(
                            "late-interaction with file embeddings needs token_store and query_token_store".into(),
                        ));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.out_dir);
        if let Some(p) = &mut self.abbreviations {
            fix(p);
        }
        if let TestSource::HeldOut { path } = &mut self.test_source {
            fix(path);
        }
        if let EmbeddingSource::Files {
            sentence_store,
            token_store,
            query_sentence_store,
            query_token_store,
        } = &mut self.embeddings
        {
            fix(sentence_store);
            fix(query_sentence_store);
            if let Some(p) = token_store {
                fix(p);
            }
            if let Some(p) = query_token_store {
                fix(p);
            }
        }
    }
}

/// Reads a TOML or JSON config (by extension) and resolves relative paths
/// against the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: ExperimentConfig = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text)?,
        _ => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
    };
    if let Some(base) = path.parent() {
        cfg.resolve_paths(base);
    }
    Ok(cfg)
}

/// Values that may come from command-line flags or the environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub strategies: Option<Vec<Strategy>>,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub budget: Option<usize>,
    pub endpoint: Option<String>,
    pub out: Option<PathBuf>,
}

pub const ENV_PREFIX: &str = "RAGQA_";

fn parse_env<T: std::str::FromStr>(vars: &HashMap<String, String>, key: &str) -> Result<Option<T>> {
    match vars.get(&format!("{ENV_PREFIX}{key}")) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("cannot parse {ENV_PREFIX}{key}={v:?}"))),
    }
}

pub fn parse_strategies(s: &str) -> Result<Vec<Strategy>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(Strategy::ALL.to_vec());
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}

impl ConfigOverrides {
    /// Reads `RAGQA_SEED`, `RAGQA_STRATEGY`, `RAGQA_K`, `RAGQA_N`,
    /// `RAGQA_BUDGET`, `RAGQA_ENDPOINT` and `RAGQA_OUT`.
    pub fn from_env_vars(vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let vars: HashMap<String, String> = vars.into_iter().collect();
        Ok(Self {
            seed: parse_env(&vars, "SEED")?,
            strategies: vars
                .get(&format!("{ENV_PREFIX}STRATEGY"))
                .map(|s| parse_strategies(s))
                .transpose()?,
            k: parse_env(&vars, "K")?,
            n: parse_env(&vars, "N")?,
            budget: parse_env(&vars, "BUDGET")?,
            endpoint: vars.get(&format!("{ENV_PREFIX}ENDPOINT")).cloned(),
            out: vars.get(&format!("{ENV_PREFIX}OUT")).map(PathBuf::from),
        })
    }

    /// `self` wins over `lower` field by field.
    pub fn over(self, lower: ConfigOverrides) -> ConfigOverrides {
        ConfigOverrides {
            seed: self.seed.or(lower.seed),
            strategies: self.strategies.or(lower.strategies),
            k: self.k.or(lower.k),
            n: self.n.or(lower.n),
            budget: self.budget.or(lower.budget),
            endpoint: self.endpoint.or(lower.endpoint),
            out: self.out.or(lower.out),
        }
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.strategies {
            cfg.strategies = v.clone();
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.budget {
            cfg.budget = v;
        }
        if let Some(url) = &self.endpoint {
            let timeout_ms = cfg.generator.timeout_ms;
            cfg.generator.backend = Backend::Http {
                endpoint: Endpoint {
                    url: url.clone(),
                    timeout_ms,
                    retries: 0,
                },
            };
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
    }
}
