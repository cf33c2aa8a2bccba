//! Language embedding stores, snapshots and similarity measures.
//!
//! Embedding files start with a `d=<dimension>` line followed by one
//! `code v1 … vd` line per language; written values carry 17 significant
//! digits so a save/load cycle is lossless.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParameterSet, Tensor};
use crate::rng;

pub const DEFAULT_DIM: usize = 64;

/// Standard deviation of randomly initialised embedding entries.
pub const INIT_STD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageEmbedding {
    pub language: String,
    pub vector: Vec<f64>,
}

/// Language code → vector map with a fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
    trainable: bool,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingStore {
            dim,
            vectors: BTreeMap::new(),
            trainable: false,
        })
    }

    /// Gaussian(0, 0.1) vectors for `languages`, deterministic per seed.
    pub fn init_random<S: AsRef<str>>(languages: &[S], dim: usize, seed: u64) -> Result<Self> {
        let mut store = EmbeddingStore::new(dim)?;
        store.add_random(languages, seed)?;
        Ok(store)
    }

    /// Add randomly initialised vectors for new languages.
    pub fn add_random<S: AsRef<str>>(&mut self, languages: &[S], seed: u64) -> Result<()> {
        let mut rng = rng::seeded(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        for code in languages {
            let v = (0..self.dim).map(|_| normal.sample(&mut rng)).collect();
            self.insert(code.as_ref(), v)?;
        }
        Ok(())
    }

    pub fn insert(&mut self, code: &str, vector: Vec<f64>) -> Result<()> {
        if code.is_empty() {
            return Err(Error::Invalid("empty language code".into()));
        }
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for {code} has {} entries, store dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite entry in embedding for {code}")));
        }
        if self.vectors.contains_key(code) {
            return Err(Error::duplicate("language", code));
        }
        self.vectors.insert(code.to_string(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, on: bool) {
        self.trainable = on;
    }

    pub fn contains(&self, code: &str) -> bool {
        self.vectors.contains_key(code)
    }

    pub fn get(&self, code: &str) -> Result<&[f64]> {
        self.vectors
            .get(code)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::unknown("language", code))
    }

    pub fn get_mut(&mut self, code: &str) -> Result<&mut [f64]> {
        self.vectors
            .get_mut(code)
            .map(Vec::as_mut_slice)
            .ok_or_else(|| Error::unknown("language", code))
    }

    pub fn embedding(&self, code: &str) -> Result<LanguageEmbedding> {
        Ok(LanguageEmbedding {
            language: code.to_string(),
            vector: self.get(code)?.to_vec(),
        })
    }

    /// Language codes in sorted order.
    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Task languages that also have a vector here.
    pub fn intersection(&self, task_languages: &BTreeSet<String>) -> BTreeSet<String> {
        task_languages
            .iter()
            .filter(|l| self.contains(l))
            .cloned()
            .collect()
    }

    pub fn load(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let (first_no, first) = lines
            .next()
            .ok_or_else(|| Error::Empty("embedding file has no header".into()))?;
        let dim = first
            .trim()
            .strip_prefix("d=")
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(|| Error::parse(first_no + 1, "expected `d=<dimension>` header"))?;
        let mut store = EmbeddingStore::new(dim).map_err(|e| Error::parse(first_no + 1, e.to_string()))?;
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let code = parts.next().expect("non-blank line");
            let vector = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(i + 1, format!("bad value: {e}")))?;
            store
                .insert(code, vector)
                .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(store)
    }

    pub fn save(&self) -> String {
        let mut out = format!("d={}\n", self.dim);
        for (code, v) in &self.vectors {
            out.push_str(code);
            for x in v {
                let _ = write!(out, " {x:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine over dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Invalid("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Stores recorded at strictly increasing training iterations.
/// Iteration 0 is the state before any fine-tuning.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SnapshotSeries {
    snapshots: Vec<(u64, EmbeddingStore)>,
}

impl SnapshotSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, iteration: u64, store: &EmbeddingStore) -> Result<()> {
        if let Some((last, _)) = self.snapshots.last() {
            if iteration <= *last {
                return Err(Error::Invalid(format!(
                    "snapshot iteration {iteration} does not follow {last}"
                )));
            }
        }
        self.snapshots.push((iteration, store.clone()));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn iterations(&self) -> Vec<u64> {
        self.snapshots.iter().map(|(i, _)| *i).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &EmbeddingStore)> {
        self.snapshots.iter().map(|(i, s)| (*i, s))
    }

    pub fn get(&self, iteration: u64) -> Option<&EmbeddingStore> {
        self.snapshots
            .iter()
            .find(|(i, _)| *i == iteration)
            .map(|(_, s)| s)
    }

    pub fn first(&self) -> Option<(u64, &EmbeddingStore)> {
        self.snapshots.first().map(|(i, s)| (*i, s))
    }

    pub fn last(&self) -> Option<(u64, &EmbeddingStore)> {
        self.snapshots.last().map(|(i, s)| (*i, s))
    }

    /// Cosine similarity between two languages at every snapshot.
    pub fn trajectory(&self, lang_a: &str, lang_b: &str) -> Result<Vec<(u64, f64)>> {
        self.snapshots
            .iter()
            .map(|(i, s)| Ok((*i, cosine_similarity(s.get(lang_a)?, s.get(lang_b)?)?)))
            .collect()
    }

    /// Mean L2 distance each language moved between the first and last snapshot.
    pub fn mean_displacement(&self) -> Result<f64> {
        let (Some((_, first)), Some((_, last))) = (self.first(), self.last()) else {
            return Err(Error::Empty("no snapshots".into()));
        };
        let mut total = 0.0;
        for (code, v) in first.iter() {
            total += l2_distance(v, last.get(code)?);
        }
        Ok(total / first.len().max(1) as f64)
    }
}

/// Number of snapshots a run of `iterations` updates records at `cadence`,
/// counting the initial state.
pub fn snapshot_count(iterations: u64, cadence: u64) -> u64 {
    iterations / cadence + 1
}

/// A store attached to a model as the lookup table `name` of its parameters.
#[derive(Clone, Debug)]
pub struct LanguageTable {
    pub param: ParamId,
    rows: BTreeMap<String, usize>,
    dim: usize,
}

impl LanguageTable {
    /// Copies the store into `params`. Updates flow into it only when the
    /// store is marked trainable.
    pub fn attach(store: &EmbeddingStore, params: &mut ParameterSet, name: &str) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::Empty("embedding store has no languages".into()));
        }
        let mut values = Vec::with_capacity(store.len() * store.dim());
        let mut rows = BTreeMap::new();
        for (i, (code, v)) in store.iter().enumerate() {
            values.extend_from_slice(v);
            rows.insert(code.to_string(), i);
        }
        let param = params.add_table(name, Tensor::matrix(store.len(), store.dim(), values)?)?;
        params.set_trainable(param, store.trainable());
        Ok(LanguageTable {
            param,
            rows,
            dim: store.dim(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, code: &str) -> Result<usize> {
        self.rows
            .get(code)
            .copied()
            .ok_or_else(|| Error::unknown("language", code))
    }

    pub fn contains(&self, code: &str) -> bool {
        self.rows.contains_key(code)
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    /// Current embeddings as a detached store.
    pub fn export(&self, params: &ParameterSet) -> EmbeddingStore {
        let table = params.get(self.param);
        let vectors = self
            .rows
            .iter()
            .map(|(code, &r)| (code.clone(), table.row(r).expect("row in range").to_vec()))
            .collect();
        EmbeddingStore {
            dim: self.dim,
            vectors,
            trainable: table.requires_grad(),
        }
    }
}
