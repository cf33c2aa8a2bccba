use std::collections::{BTreeSet, HashMap};

use super::TaskCorpus;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Symbol ↔ id map with the four reserved ids first, then symbols sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_symbols<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = symbols
            .into_iter()
            .map(Into::into)
            .filter(|s| !RESERVED.contains(&s.as_str()))
            .collect();
        if set.is_empty() {
            return Err(Error::Empty("vocabulary needs at least one symbol".into()));
        }
        let symbols: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(set)
            .collect();
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Vocabulary { symbols, index })
    }

    /// Shared vocabulary over every source and target symbol of a corpus.
    pub fn build(corpus: &TaskCorpus) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("cannot build a vocabulary from an empty corpus".into()));
        }
        Vocabulary::from_symbols(corpus.symbols())
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    /// Id of a symbol, [`UNK`] when unseen.
    pub fn id(&self, symbol: &str) -> usize {
        self.get(symbol).unwrap_or(UNK)
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Vec<usize> {
        symbols.iter().map(|s| self.id(s.as_ref())).collect()
    }

    /// Non-reserved symbols in id order.
    pub fn symbols(&self) -> &[String] {
        &self.symbols[RESERVED.len()..]
    }

    pub fn all_symbols(&self) -> &[String] {
        &self.symbols
    }
}

/// Sorted label set (PoS tags, morphological tags) without reserved entries.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Labels {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Labels {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        let labels: Vec<String> = set.into_iter().collect();
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Labels { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn get(&self, i: usize) -> Option<&str> {
        self.labels.get(i).map(String::as_str)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.labels
    }
}
