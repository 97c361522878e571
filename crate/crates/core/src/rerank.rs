//! Second-stage selection: reduce the dense candidates to the final `n`
//! contexts under one of four strategies.
//!
//! Every strategy emits "larger is better" scores (the dense baseline
//! negates its distance) and breaks ties by ascending id, so output never
//! depends on candidate input order.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::QaPair;
use crate::embedding::{cosine, TokenMatrix, TokenStore};
use crate::error::{Error, Result};
use crate::metrics::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    DenseL2,
    Bm25,
    LateInteraction,
    #[serde(rename = "seq2seq-relevance")]
    Seq2SeqRelevance,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::DenseL2,
        Strategy::Bm25,
        Strategy::LateInteraction,
        Strategy::Seq2SeqRelevance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::DenseL2 => "dense-l2",
            Strategy::Bm25 => "bm25",
            Strategy::LateInteraction => "late-interaction",
            Strategy::Seq2SeqRelevance => "seq2seq-relevance",
        }
    }

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::DenseL2 => "DenseL2",
            Strategy::Bm25 => "BM25",
            Strategy::LateInteraction => "LateInteraction",
            Strategy::Seq2SeqRelevance => "Seq2SeqRelevance",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "dense-l2" | "dense" | "faiss" => Ok(Strategy::DenseL2),
            "bm25" => Ok(Strategy::Bm25),
            "late-interaction" | "maxsim" | "colbert" => Ok(Strategy::LateInteraction),
            "seq2seq-relevance" | "seq2seq" | "monot5" => Ok(Strategy::Seq2SeqRelevance),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// A first-stage hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub qa: QaPair,
    /// Squared L2 distance from the dense retriever.
    pub dense_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedContext {
    pub qa: QaPair,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
    pub strategy: Strategy,
}

/// Sorts by descending score then ascending id and keeps the first `n`.
fn rank_by(candidates: &[Candidate], scores: Vec<f64>, n: usize, strategy: Strategy) -> Vec<RankedContext> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| candidates[a].qa.id.cmp(&candidates[b].qa.id))
    });
    order
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, idx)| RankedContext {
            qa: candidates[idx].qa.clone(),
            score: scores[idx],
            rank: i + 1,
            strategy,
        })
        .collect()
}

/// Keeps the dense ordering; score is the negated distance.
pub fn rerank_dense(candidates: &[Candidate], n: usize) -> Vec<RankedContext> {
    let scores = candidates.iter().map(|c| -c.dense_distance).collect();
    rank_by(candidates, scores, n, Strategy::DenseL2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!("invalid BM25 parameters k1={} b={}", self.k1, self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct DocEntry {
    len: usize,
    tf: HashMap<String, usize>,
}

/// Collection statistics for Okapi BM25.
#[derive(Debug, Clone)]
pub struct Bm25Stats {
    doc_freq: HashMap<String, usize>,
    avg_len: f64,
    docs: HashMap<String, DocEntry>,
}

impl Bm25Stats {
    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn doc_len(&self, id: &str) -> Option<usize> {
        self.docs.get(id).map(|d| d.len)
    }

    /// `ln(1 + (N − df + 0.5) / (df + 0.5))`, always positive.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

pub fn bm25_build<S: AsRef<str>>(docs: &[(String, Vec<S>)]) -> Result<Bm25Stats> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut doc_freq: HashMap<String, usize> = HashMap::new();
    let mut entries = HashMap::with_capacity(docs.len());
    let mut total_len = 0usize;
    for (id, tokens) in docs {
        let mut tf: HashMap<String, usize> = HashMap::new();
        for t in tokens {
            *tf.entry(t.as_ref().to_string()).or_insert(0) += 1;
        }
        for term in tf.keys() {
            *doc_freq.entry(term.clone()).or_insert(0) += 1;
        }
        total_len += tokens.len();
        if entries.insert(id.clone(), DocEntry { len: tokens.len(), tf }).is_some() {
            return Err(Error::Store(format!("duplicate document id {id:?}")));
        }
    }
    if total_len == 0 {
        return Err(Error::ZeroAvgLength);
    }
    Ok(Bm25Stats {
        doc_freq,
        avg_len: total_len as f64 / docs.len() as f64,
        docs: entries,
    })
}

/// Okapi BM25. Repeated query terms contribute once per occurrence.
pub fn bm25_score<S: AsRef<str>>(stats: &Bm25Stats, params: &Bm25Params, query: &[S], doc_id: &str) -> Result<f64> {
    let doc = stats.docs.get(doc_id).ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))?;
    let norm = params.k1 * (1.0 - params.b + params.b * doc.len as f64 / stats.avg_len);
    let mut score = 0.0;
    for term in query {
        let term = term.as_ref();
        let tf = doc.tf.get(term).copied().unwrap_or(0) as f64;
        if tf == 0.0 {
            continue;
        }
        score += stats.idf(term) * tf * (params.k1 + 1.0) / (tf + norm);
    }
    Ok(score)
}

/// Tokens BM25 sees for a candidate: the tokenized question + answer.
pub fn bm25_document_tokens(qa: &QaPair) -> Vec<String> {
    tokenize(&qa.document_text()).tokens
}

/// Ranks by BM25 against `query_text`. Statistics come from the candidate
/// pool unless `global` is given, in which case every candidate must be
/// indexed there.
pub fn rerank_bm25(
    candidates: &[Candidate],
    query_text: &str,
    params: &Bm25Params,
    n: usize,
    global: Option<&Bm25Stats>,
) -> Result<Vec<RankedContext>> {
    params.validate()?;
    let query = tokenize(query_text).tokens;
    let local;
    let stats = match global {
        Some(s) => s,
        None => {
            let docs: Vec<(String, Vec<String>)> = candidates
                .iter()
                .map(|c| (c.qa.id.clone(), bm25_document_tokens(&c.qa)))
                .collect();
            match bm25_build(&docs) {
                Ok(s) => {
                    local = s;
                    &local
                }
                // every candidate tokenizes to nothing: nothing can match
                Err(Error::ZeroAvgLength) | Err(Error::EmptyCorpus) => {
                    return Ok(rank_by(candidates, vec![0.0; candidates.len()], n, Strategy::Bm25));
                }
                Err(e) => return Err(e),
            }
        }
    };
    let scores = candidates
        .iter()
        .map(|c| bm25_score(stats, params, &query, &c.qa.id))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_by(candidates, scores, n, Strategy::Bm25))
}

/// `Σ_i max_j cos(q_i, d_j)`.
pub fn maxsim_score(query: &TokenMatrix, doc: &TokenMatrix) -> Result<f64> {
    if query.is_empty() || doc.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if query.dim() != doc.dim() {
        return Err(Error::DimMismatch {
            expected: query.dim(),
            got: doc.dim(),
        });
    }
    let mut total = 0.0;
    for q in query.iter_rows() {
        let mut best = f64::NEG_INFINITY;
        for d in doc.iter_rows() {
            best = best.max(cosine(q, d)?);
        }
        total += best;
    }
    Ok(total)
}

pub fn rerank_late_interaction(
    candidates: &[Candidate],
    query_tokens: &TokenMatrix,
    token_store: &TokenStore,
    n: usize,
) -> Result<Vec<RankedContext>> {
    let scores = candidates
        .iter()
        .map(|c| {
            let doc = token_store
                .get(&c.qa.id)
                .ok_or_else(|| Error::MissingTokens(c.qa.id.clone()))?;
            maxsim_score(query_tokens, doc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_by(candidates, scores, n, Strategy::LateInteraction))
}

/// Opaque query–document relevance probability source.
pub trait RelevanceScorer: Send + Sync {
    fn score(&self, query: &str, document: &str) -> Result<f64>;

    fn name(&self) -> String {
        "relevance-scorer".to_string()
    }
}

impl<F> RelevanceScorer for F
where
    F: Fn(&str, &str) -> Result<f64> + Send + Sync,
{
    fn score(&self, query: &str, document: &str) -> Result<f64> {
        self(query, document)
    }
}

/// Model-free scorer: fraction of distinct query tokens present in the
/// document.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubRelevanceScorer;

impl RelevanceScorer for StubRelevanceScorer {
    fn score(&self, query: &str, document: &str) -> Result<f64> {
        let mut q = tokenize(query).tokens;
        q.sort();
        q.dedup();
        if q.is_empty() {
            return Ok(0.0);
        }
        let d: std::collections::HashSet<String> = tokenize(document).tokens.into_iter().collect();
        Ok(q.iter().filter(|t| d.contains(*t)).count() as f64 / q.len() as f64)
    }

    fn name(&self) -> String {
        "stub-overlap".to_string()
    }
}

pub const DEFAULT_SCORER_IN_FLIGHT: usize = 4;

/// Ranks by an external relevance probability. At most `max_in_flight`
/// scorer calls run at once; output order does not depend on completion
/// order.
pub fn rerank_seq2seq(
    candidates: &[Candidate],
    query_text: &str,
    scorer: &dyn RelevanceScorer,
    n: usize,
    max_in_flight: usize,
) -> Result<Vec<RankedContext>> {
    let workers = max_in_flight.max(1).min(candidates.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<f64>>>> = Mutex::new((0..candidates.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, AtomicOrdering::Relaxed);
                if i >= candidates.len() {
                    break;
                }
                let c = &candidates[i];
                let r = scorer.score(query_text, &c.qa.document_text()).and_then(|score| {
                    if (0.0..=1.0).contains(&score) {
                        Ok(score)
                    } else {
                        Err(Error::ScoreOutOfRange {
                            id: c.qa.id.clone(),
                            score,
                        })
                    }
                });
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let scores = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every candidate scored"))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_by(candidates, scores, n, Strategy::Seq2SeqRelevance))
}
