//! Generation metrics: BLEU-1, ROUGE-1 recall, BERTScore precision and
//! METEOR, plus per-example evaluation and macro-averaged aggregation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, TokenEmbedder, TokenMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub original: String,
    pub tokens: Vec<String>,
}

/// Lowercases and splits on every non-alphanumeric character. Punctuation
/// and symbols never appear in the output.
pub fn tokenize(text: &str) -> TokenizedText {
    let tokens = text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    TokenizedText {
        original: text.to_string(),
        tokens,
    }
}

fn counts<S: AsRef<str>>(tokens: &[S]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_ref()).or_insert(0) += 1;
    }
    m
}

/// Sum over the vocabulary of `a` of `min(count_a, count_b)`.
fn clipped_overlap(a: &HashMap<&str, usize>, b: &HashMap<&str, usize>) -> usize {
    a.iter().map(|(w, &ca)| ca.min(b.get(w).copied().unwrap_or(0))).sum()
}

/// Brevity-penalized clipped unigram precision.
///
/// `BP = 1` when the candidate is longer than the reference, otherwise
/// `exp(1 - r/c)`; equal lengths therefore give `BP = 1`. An empty
/// candidate or zero precision scores 0.
pub fn bleu1<S: AsRef<str>>(generated: &[S], reference: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    if generated.is_empty() {
        return Ok(0.0);
    }
    let c = generated.len() as f64;
    let r = reference.len() as f64;
    let p1 = clipped_overlap(&counts(generated), &counts(reference)) as f64 / c;
    if p1 == 0.0 {
        return Ok(0.0);
    }
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(bp * p1)
}

/// Clipped unigram overlap divided by the reference length.
pub fn rouge1_recall<S: AsRef<str>>(generated: &[S], reference: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let overlap = clipped_overlap(&counts(reference), &counts(generated));
    Ok(overlap as f64 / reference.len() as f64)
}

/// Mean over generated tokens of the best cosine against any reference token.
pub fn bertscore_precision(generated: &TokenMatrix, reference: &TokenMatrix) -> Result<f64> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if generated.dim() != reference.dim() {
        return Err(Error::DimMismatch {
            expected: generated.dim(),
            got: reference.dim(),
        });
    }
    let mut total = 0.0;
    for x in generated.iter_rows() {
        let mut best = f64::NEG_INFINITY;
        for y in reference.iter_rows() {
            best = best.max(cosine(x, y)?);
        }
        total += best;
    }
    Ok(total / generated.rows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorParams {
    pub gamma: f64,
    pub theta: f64,
    /// Match on affix-stripped stems instead of surface forms.
    #[serde(default)]
    pub stem: bool,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            theta: 3.0,
            stem: false,
        }
    }
}

impl MeteorParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("meteor gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!("meteor theta {} must be positive", self.theta)));
        }
        Ok(())
    }
}

/// Crude suffix stripper used when [`MeteorParams::stem`] is set.
pub fn strip_affixes(word: &str) -> String {
    const RULES: &[(&str, &str)] = &[
        ("ingly", ""),
        ("edly", ""),
        ("ies", "y"),
        ("ied", "y"),
        ("ing", ""),
        ("es", ""),
        ("ed", ""),
        ("ly", ""),
        ("s", ""),
    ];
    for (suffix, repl) in RULES {
        if let Some(stem) = word.strip_suffix(suffix) {
            if stem.chars().count() >= 3 && !(*suffix == "s" && stem.ends_with('s')) {
                return format!("{stem}{repl}");
            }
        }
    }
    word.to_string()
}

/// Intermediate quantities of one METEOR evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MeteorBreakdown {
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_mean: f64,
    pub penalty: f64,
    pub score: f64,
    /// `(generated position, reference position)` pairs, by generated position.
    pub alignment: Vec<(usize, usize)>,
    /// False when the chunk search hit its node budget and fell back to the
    /// best alignment found so far.
    pub exact: bool,
}

pub fn meteor<S: AsRef<str>>(generated: &[S], reference: &[S], params: &MeteorParams) -> Result<f64> {
    meteor_breakdown(generated, reference, params).map(|b| b.score)
}

pub fn meteor_breakdown<S: AsRef<str>>(
    generated: &[S],
    reference: &[S],
    params: &MeteorParams,
) -> Result<MeteorBreakdown> {
    params.validate()?;
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let key = |t: &S| {
        if params.stem {
            strip_affixes(t.as_ref())
        } else {
            t.as_ref().to_string()
        }
    };
    let gen: Vec<String> = generated.iter().map(key).collect();
    let refs: Vec<String> = reference.iter().map(key).collect();

    let (alignment, exact) = align(&gen, &refs);
    let m = alignment.len();
    if m == 0 {
        return Ok(MeteorBreakdown {
            matches: 0,
            chunks: 0,
            precision: 0.0,
            recall: 0.0,
            f_mean: 0.0,
            penalty: 0.0,
            score: 0.0,
            alignment,
            exact,
        });
    }
    let chunks = count_chunks(&alignment);
    let precision = m as f64 / gen.len() as f64;
    let recall = m as f64 / refs.len() as f64;
    let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let penalty = params.gamma * (chunks as f64 / m as f64).powf(params.theta);
    Ok(MeteorBreakdown {
        matches: m,
        chunks,
        precision,
        recall,
        f_mean,
        penalty,
        score: f_mean * (1.0 - penalty),
        alignment,
        exact,
    })
}

/// Chunks in an alignment sorted by generated position: a new chunk starts
/// whenever either side is not contiguous with the previous match.
pub fn count_chunks(alignment: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(g, r) in alignment {
        match prev {
            Some((pg, pr)) if pg + 1 == g && pr + 1 == r => {}
            _ => chunks += 1,
        }
        prev = Some((g, r));
    }
    chunks
}

const SEARCH_BUDGET: usize = 200_000;

/// One-to-one exact alignment with the maximum number of matches and, among
/// those, the fewest chunks.
///
/// Any maximum matching has `m = Σ min(count_gen, count_ref)` matches, and
/// `chunks = m − links` where a link joins `(i, j)` and `(i+1, j+1)`. So the
/// search only has to pick disjoint diagonal runs maximizing total links;
/// the remaining matches are filled in afterwards. That packing problem is
/// NP-hard in general, so the branch-and-bound search is capped and seeded
/// with a greedy longest-run packing.
fn align(gen: &[String], refs: &[String]) -> (Vec<(usize, usize)>, bool) {
    let n = gen.len();
    let r = refs.len();
    if n == 0 {
        return (Vec::new(), true);
    }
    let eq = |i: usize, j: usize| gen[i] == refs[j];

    let greedy = greedy_runs(gen, refs);
    let mut search = RunSearch {
        gen,
        refs,
        used: vec![false; r],
        current: Vec::new(),
        best: greedy.clone(),
        best_links: links_of(&greedy),
        nodes: 0,
        potential: suffix_potential(gen, refs),
    };
    search.dfs(0, None, 0);
    let exact = search.nodes <= SEARCH_BUDGET;
    let runs = search.best;

    let mut gen_used = vec![false; n];
    let mut ref_used = vec![false; r];
    let mut alignment: Vec<(usize, usize)> = Vec::new();
    for &(i, j) in &runs {
        gen_used[i] = true;
        ref_used[j] = true;
        alignment.push((i, j));
    }
    for (i, &used) in gen_used.iter().enumerate() {
        if used {
            continue;
        }
        if let Some(j) = (0..r).find(|&j| !ref_used[j] && eq(i, j)) {
            ref_used[j] = true;
            alignment.push((i, j));
        }
    }
    alignment.sort_unstable();
    (alignment, exact)
}

fn links_of(points: &[(usize, usize)]) -> usize {
    let mut sorted = points.to_vec();
    sorted.sort_unstable();
    sorted.len() - count_chunks(&sorted)
}

/// `potential[i]`: positions `i' >= i` (with `i' >= 1`) that could be the
/// second half of some link. Upper-bounds the links still attainable.
fn suffix_potential(gen: &[String], refs: &[String]) -> Vec<usize> {
    let n = gen.len();
    let mut potential = vec![0; n + 1];
    for i in (0..n).rev() {
        let linkable = i >= 1 && (1..refs.len()).any(|j| gen[i] == refs[j] && gen[i - 1] == refs[j - 1]);
        potential[i] = potential[i + 1] + linkable as usize;
    }
    potential
}

fn greedy_runs(gen: &[String], refs: &[String]) -> Vec<(usize, usize)> {
    let (n, r) = (gen.len(), refs.len());
    let mut gen_used = vec![false; n];
    let mut ref_used = vec![false; r];
    let mut points = Vec::new();
    loop {
        let mut best: Option<(usize, usize, usize)> = None;
        for i in 0..n {
            for j in 0..r {
                let mut len = 0;
                while i + len < n
                    && j + len < r
                    && !gen_used[i + len]
                    && !ref_used[j + len]
                    && gen[i + len] == refs[j + len]
                {
                    len += 1;
                }
                if len >= 2 && best.is_none_or(|(_, _, l)| len > l) {
                    best = Some((i, j, len));
                }
            }
        }
        let Some((i, j, len)) = best else { break };
        for d in 0..len {
            gen_used[i + d] = true;
            ref_used[j + d] = true;
            points.push((i + d, j + d));
        }
    }
    points
}

struct RunSearch<'a> {
    gen: &'a [String],
    refs: &'a [String],
    used: Vec<bool>,
    current: Vec<(usize, usize)>,
    best: Vec<(usize, usize)>,
    best_links: usize,
    nodes: usize,
    potential: Vec<usize>,
}

impl RunSearch<'_> {
    fn dfs(&mut self, i: usize, open: Option<usize>, links: usize) {
        self.nodes += 1;
        if self.nodes > SEARCH_BUDGET {
            return;
        }
        if links + self.potential[i] <= self.best_links {
            return;
        }
        let n = self.gen.len();
        let r = self.refs.len();
        if i == n {
            // the bound check above guarantees this beats the incumbent
            self.best_links = links;
            self.best = self.current.clone();
            return;
        }
        // extend the open run
        if let Some(j) = open {
            let nj = j + 1;
            if nj < r && !self.used[nj] && self.gen[i] == self.refs[nj] {
                self.used[nj] = true;
                self.current.push((i, nj));
                self.dfs(i + 1, Some(nj), links + 1);
                self.current.pop();
                self.used[nj] = false;
            }
        }
        // start a new run that can be extended by the next position
        if i + 1 < n {
            for j in 0..r.saturating_sub(1) {
                if Some(j) == open.map(|o| o + 1) {
                    continue;
                }
                if !self.used[j]
                    && !self.used[j + 1]
                    && self.gen[i] == self.refs[j]
                    && self.gen[i + 1] == self.refs[j + 1]
                {
                    self.used[j] = true;
                    self.current.push((i, j));
                    self.dfs(i + 1, Some(j), links);
                    self.current.pop();
                    self.used[j] = false;
                }
            }
        }
        // leave position i out of any run
        self.dfs(i + 1, None, links);
    }
}

/// One evaluated example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub bleu1: f64,
    pub rouge1: f64,
    /// `None` when BERTScore could not be computed; see `flags`.
    pub bertscore_p: Option<f64>,
    pub meteor: f64,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl MetricRow {
    pub fn is_degenerate(&self) -> bool {
        !self.flags.is_empty()
    }
}

/// Tokenizes once and applies all four metrics.
///
/// An empty generation is not an error: the lexical metrics are 0,
/// BERTScore is flagged and the row is marked degenerate. An empty
/// reference is an error.
pub fn evaluate_pair(
    id: &str,
    generated: &str,
    reference: &str,
    embedder: &dyn TokenEmbedder,
    params: &MeteorParams,
) -> Result<MetricRow> {
    let gen = tokenize(generated).tokens;
    let refs = tokenize(reference).tokens;
    if refs.is_empty() {
        return Err(Error::EmptyReference);
    }
    let mut flags = Vec::new();
    let bleu1 = bleu1(&gen, &refs)?;
    let rouge1 = rouge1_recall(&gen, &refs)?;
    let meteor = meteor(&gen, &refs, params)?;
    let bertscore_p = if gen.is_empty() {
        flags.push("empty_generated".to_string());
        None
    } else {
        let scored = embedder
            .embed_tokens(&gen)
            .and_then(|x| Ok((x, embedder.embed_tokens(&refs)?)))
            .and_then(|(x, y)| bertscore_precision(&x, &y));
        match scored {
            Ok(v) => Some(v),
            Err(e) => {
                flags.push(format!("bertscore_error: {e}"));
                None
            }
        }
    };
    Ok(MetricRow {
        id: id.to_string(),
        bleu1,
        rouge1,
        bertscore_p,
        meteor,
        flags,
    })
}

/// Macro-averaged corpus scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub bleu1: f64,
    pub rouge1: f64,
    /// Mean over rows that have a BERTScore value.
    pub bertscore_p: Option<f64>,
    pub meteor: f64,
    pub examples: usize,
    pub degenerate: usize,
    pub bertscore_examples: usize,
}

pub fn aggregate(rows: &[MetricRow]) -> Result<MetricSummary> {
    if rows.is_empty() {
        return Err(Error::Report("cannot aggregate zero rows".into()));
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let bert: Vec<f64> = rows.iter().filter_map(|r| r.bertscore_p).collect();
    Ok(MetricSummary {
        bleu1: mean(|r| r.bleu1),
        rouge1: mean(|r| r.rouge1),
        bertscore_p: (!bert.is_empty()).then(|| bert.iter().sum::<f64>() / bert.len() as f64),
        meteor: mean(|r| r.meteor),
        examples: rows.len(),
        degenerate: rows.iter().filter(|r| r.is_degenerate()).count(),
        bertscore_examples: bert.len(),
    })
}

pub fn write_rows_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "bleu1", "rouge1", "bertscore_p", "meteor", "flags"])?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.bleu1.to_string(),
            r.rouge1.to_string(),
            r.bertscore_p.map(|v| v.to_string()).unwrap_or_default(),
            r.meteor.to_string(),
            r.flags.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_rows_jsonl(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
