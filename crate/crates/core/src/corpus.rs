//! QA-pair corpora: ingestion, cleaning, seeded splitting and summary stats.
//!
//! Every other module refers to pairs by their `id`, so ids must be unique
//! within a corpus. Corpora are immutable once built.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// One question–answer record; the unit of retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub source: String,
}

impl QaPair {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        answer: impl Into<String>,
        source: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            answer: answer.into(),
            source: source.into(),
        }
    }

    /// `question + " " + answer`, the text unit re-rankers and the default
    /// embedding exporter see.
    pub fn document_text(&self) -> String {
        format!("{} {}", self.question, self.answer)
    }
}

/// An immutable, id-indexed collection of pairs.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pairs: Vec<QaPair>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Fails on the first duplicate id.
    pub fn new(pairs: Vec<QaPair>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    path: "<memory>".into(),
                    line: i + 1,
                    id: p.id.clone(),
                });
            }
        }
        Ok(Self { pairs, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&QaPair> {
        self.by_id.get(id).map(|&i| &self.pairs[i])
    }

    pub fn pairs(&self) -> &[QaPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.id.as_str())
    }

    /// Sub-corpus holding only the given ids, in this corpus' order.
    pub fn subset(&self, ids: &HashSet<&str>) -> Corpus {
        let pairs: Vec<QaPair> = self
            .pairs
            .iter()
            .filter(|p| ids.contains(p.id.as_str()))
            .cloned()
            .collect();
        Corpus::new(pairs).expect("subset of a valid corpus has unique ids")
    }
}

/// A line that could not be parsed and was skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub pairs: Vec<QaPair>,
    pub skipped: Vec<SkippedLine>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    question: Option<String>,
    answer: Option<String>,
    #[serde(default)]
    source: Option<String>,
}

fn parse_record(line: &str) -> std::result::Result<QaPair, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = match raw.id {
        Some(serde_json::Value::String(s)) => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(_) => return Err("id must be a string or number".into()),
        None => return Err("missing field `id`".into()),
    };
    if id.is_empty() {
        return Err("empty id".into());
    }
    let question = raw.question.ok_or("missing field `question`")?;
    let answer = raw.answer.ok_or("missing field `answer`")?;
    if question.trim().is_empty() {
        return Err("empty question".into());
    }
    if answer.trim().is_empty() {
        return Err("empty answer".into());
    }
    Ok(QaPair {
        id,
        question,
        answer,
        source: raw.source.unwrap_or_default(),
    })
}

/// Reads a JSONL file of `{id, question, answer, source?}` objects.
///
/// Malformed lines are skipped and reported in [`Ingested::skipped`], or
/// abort ingestion when `strict` is set. A duplicate id is always fatal.
/// Blank lines are ignored.
pub fn ingest_jsonl(path: impl AsRef<Path>, strict: bool) -> Result<Ingested> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Ok(pair) => {
                if seen.insert(pair.id.clone(), lineno).is_some() {
                    return Err(Error::DuplicateId {
                        path: path.to_path_buf(),
                        line: lineno,
                        id: pair.id,
                    });
                }
                pairs.push(pair);
            }
            Err(reason) if strict => {
                return Err(Error::MalformedRecord {
                    path: path.to_path_buf(),
                    line: lineno,
                    reason,
                });
            }
            Err(reason) => {
                log::warn!("{}:{}: skipping malformed record: {}", path.display(), lineno, reason);
                skipped.push(SkippedLine {
                    line: lineno,
                    reason,
                });
            }
        }
    }
    Ok(Ingested { pairs, skipped })
}

pub fn write_jsonl(path: impl AsRef<Path>, pairs: &[QaPair]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Term → expansion table applied to whole tokens by [`clean_text`].
pub type Abbreviations = BTreeMap<String, String>;

/// Loads a two-column TSV (`term<TAB>expansion`). Blank lines and lines
/// starting with `#` are ignored.
pub fn load_abbreviations(path: impl AsRef<Path>) -> Result<Abbreviations> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = Abbreviations::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (term, expansion) = line.split_once('\t').ok_or_else(|| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: "expected `term<TAB>expansion`".into(),
        })?;
        let term = term.trim();
        let expansion = normalize_whitespace(expansion);
        if term.is_empty() || expansion.is_empty() {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: "empty term or expansion".into(),
            });
        }
        map.insert(term.to_string(), expansion);
    }
    Ok(map)
}

// Controls go before NFC: deleting one between a base letter and a combining
// mark would otherwise leave a composable pair behind.
fn normalize_whitespace(raw: &str) -> String {
    let filtered: String = raw
        .chars()
        .filter_map(|c| {
            if c.is_whitespace() {
                Some(' ')
            } else if c.is_control() {
                None
            } else {
                Some(c)
            }
        })
        .collect();
    filtered.nfc().collect::<String>().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalizes `raw` to NFC, strips control characters, collapses
/// whitespace runs and expands whole-token abbreviations.
///
/// Whitespace control characters (tab, newline) count as whitespace rather
/// than being deleted. A token matches a term after peeling surrounding
/// ASCII punctuation, so `MI,` expands to `myocardial infarction,`.
/// Matching is case-sensitive.
pub fn clean_text(raw: &str, abbreviations: &Abbreviations) -> String {
    let collapsed = normalize_whitespace(raw);
    if abbreviations.is_empty() {
        return collapsed;
    }
    collapsed
        .split(' ')
        .map(|token| expand_token(token, abbreviations))
        .collect::<Vec<_>>()
        .join(" ")
}

fn expand_token(token: &str, abbreviations: &Abbreviations) -> String {
    if let Some(exp) = abbreviations.get(token) {
        return exp.clone();
    }
    let core = token.trim_matches(|c: char| c.is_ascii_punctuation());
    if core.is_empty() || core.len() == token.len() {
        return token.to_string();
    }
    match abbreviations.get(core) {
        Some(exp) => {
            let start = token.find(core).unwrap_or(0);
            format!("{}{}{}", &token[..start], exp, &token[start + core.len()..])
        }
        None => token.to_string(),
    }
}

/// Cleans question and answer of every pair, dropping pairs that end up
/// empty. Returns the kept pairs and the ids of the dropped ones.
pub fn clean_pairs(pairs: Vec<QaPair>, abbreviations: &Abbreviations) -> (Vec<QaPair>, Vec<String>) {
    let mut kept = Vec::with_capacity(pairs.len());
    let mut dropped = Vec::new();
    for mut p in pairs {
        p.question = clean_text(&p.question, abbreviations);
        p.answer = clean_text(&p.answer, abbreviations);
        if p.question.is_empty() || p.answer.is_empty() {
            dropped.push(p.id);
        } else {
            kept.push(p);
        }
    }
    (kept, dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// Disjoint train/validation/test id sets. Each list is sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

/// Partition sizes: `floor(N * r_train)`, `floor(N * r_val)`, remainder.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> (usize, usize, usize) {
    // Products like 100 * 0.7 land a hair under the integer.
    let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let train = floor(ratios[0]).min(n);
    let val = floor(ratios[1]).min(n - train);
    (train, val, n - train - val)
}

/// Seeded uniform split. Ids are sorted before shuffling, so the result
/// depends only on the id set, the ratios and the seed.
pub fn split_corpus(pairs: &[QaPair], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidRatios(ratios));
    }
    let mut ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let (train, val, _) = split_sizes(ids.len(), ratios);
    let collect = |slice: &[&str]| {
        let mut v: Vec<String> = slice.iter().map(|s| s.to_string()).collect();
        v.sort();
        v
    };
    Ok(SplitAssignment {
        train_ids: collect(&ids[..train]),
        validation_ids: collect(&ids[train..train + val]),
        test_ids: collect(&ids[train + val..]),
        seed,
        ratios,
    })
}

impl SplitAssignment {
    pub fn partition_of(&self, id: &str) -> Option<Partition> {
        let has = |v: &Vec<String>| v.binary_search_by(|x| x.as_str().cmp(id)).is_ok();
        if has(&self.train_ids) {
            Some(Partition::Train)
        } else if has(&self.validation_ids) {
            Some(Partition::Validation)
        } else if has(&self.test_ids) {
            Some(Partition::Test)
        } else {
            None
        }
    }

    pub fn ids(&self, partition: Partition) -> &[String] {
        match partition {
            Partition::Train => &self.train_ids,
            Partition::Validation => &self.validation_ids,
            Partition::Test => &self.test_ids,
        }
    }

    /// Replaces the test partition with an explicit held-out id set.
    /// Held-out ids are removed from train and validation.
    pub fn with_held_out(mut self, held_out: &[String]) -> Self {
        let held: HashSet<&str> = held_out.iter().map(String::as_str).collect();
        self.train_ids.retain(|id| !held.contains(id.as_str()));
        self.validation_ids.retain(|id| !held.contains(id.as_str()));
        let mut test: Vec<String> = held_out.to_vec();
        test.sort();
        test.dedup();
        self.test_ids = test;
        self
    }

    /// `(id, partition)` rows sorted by id.
    pub fn manifest_rows(&self) -> Vec<(String, Partition)> {
        let mut rows: Vec<(String, Partition)> = self
            .train_ids
            .iter()
            .map(|id| (id.clone(), Partition::Train))
            .chain(self.validation_ids.iter().map(|id| (id.clone(), Partition::Validation)))
            .chain(self.test_ids.iter().map(|id| (id.clone(), Partition::Test)))
            .collect();
        rows.sort();
        rows
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    partition: Partition,
}

/// Writes the split as JSONL `{"id":..,"partition":..}` rows sorted by id.
pub fn write_split_manifest(path: impl AsRef<Path>, split: &SplitAssignment) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, partition) in split.manifest_rows() {
        serde_json::to_writer(&mut w, &ManifestRow { id, partition })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a split manifest back into `(id, partition)` rows.
pub fn read_split_manifest(path: impl AsRef<Path>) -> Result<Vec<(String, Partition)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let row: ManifestRow = serde_json::from_str(l)?;
            Ok((row.id, row.partition))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub pair_count: usize,
    pub mean_question_tokens: f64,
    pub mean_answer_tokens: f64,
    pub per_source: BTreeMap<String, usize>,
}

/// Counts and mean whitespace-token lengths.
pub fn corpus_stats(pairs: &[QaPair]) -> CorpusStats {
    let mut per_source = BTreeMap::new();
    let mut q_tokens = 0usize;
    let mut a_tokens = 0usize;
    for p in pairs {
        *per_source.entry(p.source.clone()).or_insert(0) += 1;
        q_tokens += p.question.split_whitespace().count();
        a_tokens += p.answer.split_whitespace().count();
    }
    let n = pairs.len();
    let mean = |total: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    CorpusStats {
        pair_count: n,
        mean_question_tokens: mean(q_tokens),
        mean_answer_tokens: mean(a_tokens),
        per_source,
    }
}
