//! Exact flat L2 index over sentence embeddings.
//!
//! Distances are squared L2 accumulated in f64. Results are ordered by
//! `(distance, id)` so ties never depend on insertion order.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{file_checksum, SentenceStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    /// Squared L2 distance.
    pub distance: f64,
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id))
}

#[derive(Debug, Clone)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
}

/// `Σ (u_i − v_i)²` in f64.
pub fn l2_distance_sq(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(sq_dist(u, v))
}

#[inline]
fn sq_dist(u: &[f32], v: &[f32]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum()
}

/// Indexes every record of `store`, preserving its order.
pub fn build_index(store: &SentenceStore) -> Result<FlatIndex> {
    FlatIndex::from_vectors(store.records().iter().map(|r| (r.id.clone(), r.vector.clone())))
}

impl FlatIndex {
    pub fn from_vectors(items: impl IntoIterator<Item = (String, Vec<f32>)>) -> Result<Self> {
        let mut dim = None;
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        let mut seen = HashSet::new();
        for (id, v) in items {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(Error::Store(format!("duplicate id {id:?}")));
            }
            ids.push(id);
            vectors.extend_from_slice(&v);
        }
        let dim = dim.ok_or(Error::EmptyCorpus)?;
        if dim == 0 {
            return Err(Error::Store("zero-dimensional vectors".into()));
        }
        Ok(Self { dim, ids, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// The `min(k, len)` nearest vectors, ascending by distance then id.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        if query.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let mut all: Vec<Neighbor> = self
            .vectors
            .chunks_exact(self.dim)
            .zip(&self.ids)
            .map(|(v, id)| Neighbor {
                id: id.clone(),
                distance: sq_dist(query, v),
            })
            .collect();
        let k = k.min(all.len());
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, neighbor_order);
            all.truncate(k);
        }
        all.sort_by(neighbor_order);
        Ok(all)
    }

    /// Searches many queries in parallel; output order matches input order.
    pub fn search_batch(&self, queries: &[Vec<f32>], k: usize) -> Result<Vec<Vec<Neighbor>>> {
        queries.par_iter().map(|q| self.search(q, k)).collect()
    }
}

/// Describes the sentence store an index was built from; the store file
/// doubles as the index snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildManifest {
    pub store: String,
    pub dim: usize,
    pub count: usize,
    pub sha256: String,
}

impl BuildManifest {
    pub fn for_store_file(path: impl AsRef<Path>, store: &SentenceStore) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self {
            store: path.display().to_string(),
            dim: store.dim(),
            count: store.len(),
            sha256: file_checksum(path)?,
        })
    }

    /// Re-checks the store file against this manifest.
    pub fn verify(&self) -> Result<()> {
        let sum = file_checksum(&self.store)?;
        if sum != self.sha256 {
            return Err(Error::Store(format!("checksum mismatch for {}", self.store)));
        }
        Ok(())
    }
}
