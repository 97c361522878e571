//! Sentence and token embedding stores, pooling, cosine, and deterministic
//! stub embeddings.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! sentence store: "RBQE" u32 version=1 u32 dim u64 count
//!                 count × [u32 id_len, id (UTF-8), dim × f32]
//! token store:    "RBQT" u32 version=1 u32 dim u64 count
//!                 count × [u32 id_len, id (UTF-8), u32 tokens, tokens × dim × f32]
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SENTENCE_MAGIC: [u8; 4] = *b"RBQE";
pub const TOKEN_MAGIC: [u8; 4] = *b"RBQT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingStoreHeader {
    pub magic: [u8; 4],
    pub version: u32,
    pub dim: u32,
    pub count: u64,
}

impl EmbeddingStoreHeader {
    fn to_bytes(self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(&self.magic);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..12].copy_from_slice(&self.dim.to_le_bytes());
        out[12..20].copy_from_slice(&self.count.to_le_bytes());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub id: String,
    pub vector: Vec<f32>,
}

/// Row-major `tokens × dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl TokenMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Store(format!(
                "matrix data of length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyMatrix)?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    pub id: String,
    pub matrix: TokenMatrix,
}

fn check_finite(id: &str, values: &[f32]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Store(format!("non-finite value {v} in record {id:?}")));
    }
    Ok(())
}

/// Immutable id → vector store with a uniform dimension.
#[derive(Debug, Clone)]
pub struct SentenceStore {
    dim: usize,
    records: Vec<SentenceEmbedding>,
    by_id: HashMap<String, usize>,
}

impl SentenceStore {
    pub fn new(dim: usize, records: Vec<SentenceEmbedding>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Store("dim must be positive".into()));
        }
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.vector.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: r.vector.len(),
                });
            }
            check_finite(&r.id, &r.vector)?;
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(Error::Store(format!("duplicate id {:?}", r.id)));
            }
        }
        Ok(Self { dim, records, by_id })
    }

    /// Infers `dim` from the first record.
    pub fn from_records(records: Vec<SentenceEmbedding>) -> Result<Self> {
        let dim = records.first().map(|r| r.vector.len()).ok_or(Error::EmptyCorpus)?;
        Self::new(dim, records)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SentenceEmbedding] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.by_id.get(id).map(|&i| self.records[i].vector.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct TokenStore {
    dim: usize,
    records: Vec<TokenEmbeddings>,
    by_id: HashMap<String, usize>,
}

impl TokenStore {
    pub fn new(dim: usize, records: Vec<TokenEmbeddings>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Store("dim must be positive".into()));
        }
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.matrix.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: r.matrix.dim(),
                });
            }
            if r.matrix.is_empty() {
                return Err(Error::Store(format!("record {:?} has zero tokens", r.id)));
            }
            check_finite(&r.id, r.matrix.as_slice())?;
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(Error::Store(format!("duplicate id {:?}", r.id)));
            }
        }
        Ok(Self { dim, records, by_id })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TokenEmbeddings] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&TokenMatrix> {
        self.by_id.get(id).map(|&i| &self.records[i].matrix)
    }
}

fn write_id(w: &mut impl Write, id: &str) -> std::io::Result<()> {
    w.write_all(&(id.len() as u32).to_le_bytes())?;
    w.write_all(id.as_bytes())
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_sentence_store(store: &SentenceStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header = EmbeddingStoreHeader {
        magic: SENTENCE_MAGIC,
        version: FORMAT_VERSION,
        dim: store.dim as u32,
        count: store.len() as u64,
    };
    w.write_all(&header.to_bytes()).map_err(io)?;
    for r in &store.records {
        write_id(&mut w, &r.id).map_err(io)?;
        write_f32s(&mut w, &r.vector).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_token_store(store: &TokenStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header = EmbeddingStoreHeader {
        magic: TOKEN_MAGIC,
        version: FORMAT_VERSION,
        dim: store.dim as u32,
        count: store.len() as u64,
    };
    w.write_all(&header.to_bytes()).map_err(io)?;
    for r in &store.records {
        write_id(&mut w, &r.id).map_err(io)?;
        w.write_all(&(r.matrix.rows() as u32).to_le_bytes()).map_err(io)?;
        write_f32s(&mut w, r.matrix.as_slice()).map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Store(format!("truncated file: need {n} bytes for {what} at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn id(&mut self) -> Result<String> {
        let len = self.u32("id length")? as usize;
        let bytes = self.take(len, "id")?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Store("id is not valid UTF-8".into()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Store("size overflow".into()))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn read_header(cur: &mut Cursor<'_>, magic: [u8; 4]) -> Result<EmbeddingStoreHeader> {
    let got: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if got != magic {
        return Err(Error::Store(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Store(format!("unsupported version {version}")));
    }
    let dim = cur.u32("dim")?;
    let count = cur.u64("count")?;
    Ok(EmbeddingStoreHeader {
        magic: got,
        version,
        dim,
        count,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_sentence_store(path: impl AsRef<Path>) -> Result<SentenceStore> {
    let bytes = read_file(path.as_ref())?;
    decode_sentence_store(&bytes)
}

pub fn decode_sentence_store(bytes: &[u8]) -> Result<SentenceStore> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let header = read_header(&mut cur, SENTENCE_MAGIC)?;
    let dim = header.dim as usize;
    let mut records = Vec::new();
    for _ in 0..header.count {
        let id = cur.id()?;
        let vector = cur.f32s(dim, "vector")?;
        records.push(SentenceEmbedding { id, vector });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Store(format!("{} trailing bytes after last record", bytes.len() - cur.pos)));
    }
    SentenceStore::new(dim, records)
}

pub fn read_token_store(path: impl AsRef<Path>) -> Result<TokenStore> {
    let bytes = read_file(path.as_ref())?;
    decode_token_store(&bytes)
}

pub fn decode_token_store(bytes: &[u8]) -> Result<TokenStore> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let header = read_header(&mut cur, TOKEN_MAGIC)?;
    let dim = header.dim as usize;
    let mut records = Vec::new();
    for _ in 0..header.count {
        let id = cur.id()?;
        let tokens = cur.u32("token count")? as usize;
        let data = cur.f32s(tokens * dim, "token matrix")?;
        records.push(TokenEmbeddings {
            id,
            matrix: TokenMatrix::new(dim, data)?,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Store(format!("{} trailing bytes after last record", bytes.len() - cur.pos)));
    }
    TokenStore::new(dim, records)
}

/// Component-wise mean over rows, accumulated in f64.
pub fn mean_pool(matrix: &TokenMatrix) -> Result<Vec<f32>> {
    if matrix.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut acc = vec![0f64; matrix.dim()];
    for row in matrix.iter_rows() {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    let n = matrix.rows() as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

/// Cosine similarity, computed in f64 and clamped to `[-1, 1]`.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0f64, 0f64, 0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Deterministic unit vector keyed by SHA-256 of `(seed, text)`.
pub fn stub_embed(text: &str, dim: usize, seed: u64) -> Vec<f32> {
    assert!(dim >= 2, "stub embeddings need dim >= 2");
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    loop {
        let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return raw.into_iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

/// One stub row per whitespace token of `text`. Empty text gives a
/// zero-row matrix.
pub fn stub_embed_tokens(text: &str, dim: usize, seed: u64) -> TokenMatrix {
    let mut data = Vec::new();
    for tok in text.split_whitespace() {
        data.extend(stub_embed(tok, dim, seed));
    }
    TokenMatrix { dim, data }
}

/// Produces a pooled vector for a text.
pub trait SentenceEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
    fn dim(&self) -> usize;
}

/// Produces one row per token.
pub trait TokenEmbedder: Send + Sync {
    fn embed_tokens(&self, tokens: &[String]) -> Result<TokenMatrix>;
    /// Free-text form; the default splits on whitespace.
    fn embed_text_tokens(&self, text: &str) -> Result<TokenMatrix> {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        self.embed_tokens(&tokens)
    }
    fn name(&self) -> String;
}

/// Model-free embedder backed by [`stub_embed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl StubEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 2, "stub embeddings need dim >= 2");
        Self { dim, seed }
    }

    pub fn sentence_store<'a>(&self, items: impl IntoIterator<Item = (&'a str, String)>) -> Result<SentenceStore> {
        let records = items
            .into_iter()
            .map(|(id, text)| SentenceEmbedding {
                id: id.to_string(),
                vector: stub_embed(&text, self.dim, self.seed),
            })
            .collect();
        SentenceStore::new(self.dim, records)
    }

    /// Token store over whitespace tokens. Texts with no tokens get a single
    /// row for the empty string so every record has at least one row.
    pub fn token_store<'a>(&self, items: impl IntoIterator<Item = (&'a str, String)>) -> Result<TokenStore> {
        let records = items
            .into_iter()
            .map(|(id, text)| {
                let mut matrix = stub_embed_tokens(&text, self.dim, self.seed);
                if matrix.is_empty() {
                    matrix = TokenMatrix {
                        dim: self.dim,
                        data: stub_embed("", self.dim, self.seed),
                    };
                }
                TokenEmbeddings {
                    id: id.to_string(),
                    matrix,
                }
            })
            .collect();
        TokenStore::new(self.dim, records)
    }
}

impl SentenceEmbedder for StubEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        Ok(stub_embed(text, self.dim, self.seed))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

impl TokenEmbedder for StubEmbedder {
    fn embed_tokens(&self, tokens: &[String]) -> Result<TokenMatrix> {
        let mut data = Vec::with_capacity(tokens.len() * self.dim);
        for t in tokens {
            data.extend(stub_embed(t, self.dim, self.seed));
        }
        Ok(TokenMatrix { dim: self.dim, data })
    }

    fn name(&self) -> String {
        format!("stub(dim={},seed={})", self.dim, self.seed)
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_checksum(path: impl AsRef<Path>) -> Result<String> {
    let bytes = read_file(path.as_ref())?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
