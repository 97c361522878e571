//! Independent reference implementations used as test oracles. They are
//! deliberately naive: nested loops, f64 throughout, no shared helpers with
//! the library.

#![allow(dead_code)]

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ragqa::corpus::QaPair;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Character-at-a-time tokenizer: lowercase alphanumeric runs.
pub fn oracle_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                cur.push(lc);
            }
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn occurrences(list: &[String], w: &str) -> usize {
    list.iter().filter(|x| x.as_str() == w).count()
}

/// Clipped matches by ticking off reference positions one by one.
fn greedy_clip(gen: &[String], reference: &[String]) -> usize {
    let mut used = vec![false; reference.len()];
    let mut hits = 0;
    for g in gen {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && reference[j] == *g) {
            used[j] = true;
            hits += 1;
        }
    }
    hits
}

pub fn oracle_bleu1(gen: &[String], reference: &[String]) -> f64 {
    if gen.is_empty() {
        return 0.0;
    }
    let c = gen.len() as f64;
    let r = reference.len() as f64;
    let p1 = greedy_clip(gen, reference) as f64 / c;
    if p1 == 0.0 {
        return 0.0;
    }
    let bp = if c > r { 1.0 } else { std::f64::consts::E.powf(1.0 - r / c) };
    bp * p1
}

pub fn oracle_rouge1(gen: &[String], reference: &[String]) -> f64 {
    let mut seen: Vec<&String> = Vec::new();
    let mut overlap = 0;
    for w in reference {
        if seen.contains(&w) {
            continue;
        }
        seen.push(w);
        overlap += occurrences(reference, w).min(occurrences(gen, w));
    }
    overlap as f64 / reference.len() as f64
}

pub fn oracle_cosine(u: &[f32], v: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for i in 0..u.len() {
        dot += u[i] as f64 * v[i] as f64;
        nu += u[i] as f64 * u[i] as f64;
        nv += v[i] as f64 * v[i] as f64;
    }
    dot / (nu.sqrt() * nv.sqrt())
}

pub fn oracle_bertscore(x: &[Vec<f32>], y: &[Vec<f32>]) -> f64 {
    let mut sum = 0.0;
    for a in x {
        sum += y.iter().map(|b| oracle_cosine(a, b)).fold(f64::MIN, f64::max);
    }
    sum / x.len() as f64
}

pub fn oracle_maxsim(q: &[Vec<f32>], d: &[Vec<f32>]) -> f64 {
    q.iter()
        .map(|a| d.iter().map(|b| oracle_cosine(a, b)).fold(f64::MIN, f64::max))
        .sum()
}

fn chunks_of(pairs: &[(usize, usize)]) -> usize {
    let mut sorted = pairs.to_vec();
    sorted.sort();
    let mut ch = 0;
    for i in 0..sorted.len() {
        let continues = i > 0 && sorted[i].0 == sorted[i - 1].0 + 1 && sorted[i].1 == sorted[i - 1].1 + 1;
        if !continues {
            ch += 1;
        }
    }
    ch
}

/// Enumerates every one-to-one exact matching; keeps (max m, then min ch).
pub fn oracle_meteor_counts(gen: &[String], reference: &[String]) -> (usize, usize) {
    fn walk(
        i: usize,
        gen: &[String],
        reference: &[String],
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        best: &mut (usize, usize),
    ) {
        if i == gen.len() {
            let m = cur.len();
            let ch = chunks_of(cur);
            if m > best.0 || (m == best.0 && ch < best.1) {
                *best = (m, ch);
            }
            return;
        }
        walk(i + 1, gen, reference, used, cur, best);
        for j in 0..reference.len() {
            if !used[j] && reference[j] == gen[i] {
                used[j] = true;
                cur.push((i, j));
                walk(i + 1, gen, reference, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, usize::MAX);
    walk(0, gen, reference, &mut vec![false; reference.len()], &mut Vec::new(), &mut best);
    if best.0 == 0 {
        (0, 0)
    } else {
        best
    }
}

pub fn oracle_meteor(gen: &[String], reference: &[String], gamma: f64, theta: f64) -> f64 {
    let (m, ch) = oracle_meteor_counts(gen, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / gen.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    f * (1.0 - gamma * (ch as f64 / m as f64).powf(theta))
}

/// Okapi BM25 straight from the formula, one query occurrence at a time.
pub fn oracle_bm25(docs: &[Vec<String>], query: &[String], doc: usize, k1: f64, b: f64) -> f64 {
    let n = docs.len() as f64;
    let avg = docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n;
    let dl = docs[doc].len() as f64;
    let mut s = 0.0;
    for q in query {
        let df = docs.iter().filter(|d| d.contains(q)).count() as f64;
        let tf = occurrences(&docs[doc], q) as f64;
        if tf == 0.0 {
            continue;
        }
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avg));
    }
    s
}

/// Full scan in f64, sorted by (distance, id), truncated to k.
pub fn oracle_knn(ids: &[String], vectors: &[Vec<f32>], q: &[f32], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = ids
        .iter()
        .zip(vectors)
        .map(|(id, v)| {
            let d: f64 = v.iter().zip(q).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            (id.clone(), d)
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Descending score, ascending id; returns ids.
pub fn oracle_order(ids_scores: &[(String, f64)], n: usize) -> Vec<String> {
    let mut v = ids_scores.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    v.into_iter().take(n).map(|(id, _)| id).collect()
}

pub fn random_tokens(rng: &mut ChaCha8Rng, vocab: usize, min_len: usize, max_len: usize) -> Vec<String> {
    let len = rng.gen_range(min_len..=max_len);
    (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..rows)
        .map(|_| loop {
            let r: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            if r.iter().any(|x| x.abs() > 1e-3) {
                break r;
            }
        })
        .collect()
}

pub fn random_ascii(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    const POOL: &[u8] = b"abcXYZ019 \t\n.,;:!?'\"-_()[]{}@#$%^&*+=/\\|<>~`";
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| *POOL.choose(rng).unwrap() as char).collect()
}

const TOPICS: [&str; 8] = [
    "insulin", "asthma", "migraine", "anemia", "fracture", "influenza", "eczema", "gout",
];
const ASPECTS: [&str; 6] = ["symptoms", "treatment", "causes", "diagnosis", "prevention", "risks"];

/// A corpus with overlapping vocabulary so every strategy has something to do.
pub fn synthetic_pairs(n: usize, seed: u64) -> Vec<QaPair> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let t = TOPICS[r.gen_range(0..TOPICS.len())];
            let a = ASPECTS[r.gen_range(0..ASPECTS.len())];
            let extra = r.gen_range(0..1000);
            QaPair::new(
                format!("q{i:04}"),
                format!("What are the {a} of {t} in case {extra}?"),
                format!(
                    "The {a} of {t} vary; case {extra} showed {} findings and needed {} follow-up visits.",
                    ["mild", "moderate", "severe"][r.gen_range(0..3)],
                    r.gen_range(1..9)
                ),
                if i % 3 == 0 { "forum" } else { "pubmed" },
            )
        })
        .collect()
}

pub fn write_corpus(dir: &Path, name: &str, pairs: &[QaPair]) -> std::path::PathBuf {
    let p = dir.join(name);
    ragqa::corpus::write_jsonl(&p, pairs).unwrap();
    p
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}
