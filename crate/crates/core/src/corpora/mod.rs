//! Parsers for the canonical TSV corpora, WALS tables and CoNLL-U treebanks.
//!
//! All TSV formats are UTF-8 with `#`-prefixed comment lines. A first data
//! line equal to the format's column names is treated as a header and skipped.

mod conllu;
mod tasks;
mod vocab;
mod wals;

use std::collections::BTreeSet;

pub use conllu::{parse_conllu, write_conllu};
pub use tasks::{
    parse_asjp, parse_g2p, parse_sigmorphon, write_asjp, write_g2p, write_sigmorphon,
};
pub use vocab::{Labels, Vocabulary, BOS, EOS, PAD, UNK};
pub use wals::{feature_id_cmp, Category, Feature, LanguageInfo, WalsTable};

use crate::error::{Error, Result};
use crate::rng;

/// Which character-transduction task a corpus belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    G2p,
    Reconstruction,
    Inflection,
    Pos,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::G2p => "g2p",
            TaskKind::Reconstruction => "reconstruction",
            TaskKind::Inflection => "inflection",
            TaskKind::Pos => "pos",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g2p" => Ok(TaskKind::G2p),
            "reconstruction" | "asjp" => Ok(TaskKind::Reconstruction),
            "inflection" | "sigmorphon" => Ok(TaskKind::Inflection),
            "pos" | "tagging" => Ok(TaskKind::Pos),
            other => Err(Error::unknown("task kind", other)),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One source/target transduction instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqPair {
    pub language: String,
    pub source: Vec<String>,
    pub target: Vec<String>,
    /// Morphological tag bundle; present for inflection only.
    pub tags: Option<Vec<String>>,
}

/// A sentence with one universal PoS tag per token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedSentence {
    pub language: String,
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

/// Training instances for any of the four tasks.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskCorpus {
    Pairs { kind: TaskKind, pairs: Vec<SeqPair> },
    Tagged(Vec<TaggedSentence>),
}

impl TaskCorpus {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskCorpus::Pairs { kind, .. } => *kind,
            TaskCorpus::Tagged(_) => TaskKind::Pos,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TaskCorpus::Pairs { pairs, .. } => pairs.len(),
            TaskCorpus::Tagged(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The task's language set `L_task`.
    pub fn languages(&self) -> BTreeSet<String> {
        match self {
            TaskCorpus::Pairs { pairs, .. } => pairs.iter().map(|p| p.language.clone()).collect(),
            TaskCorpus::Tagged(s) => s.iter().map(|p| p.language.clone()).collect(),
        }
    }

    /// Every symbol the corpus uses: source and target symbols for pairs,
    /// characters of tokens for tagged sentences.
    pub fn symbols(&self) -> BTreeSet<String> {
        match self {
            TaskCorpus::Pairs { pairs, .. } => pairs
                .iter()
                .flat_map(|p| p.source.iter().chain(&p.target).cloned())
                .collect(),
            TaskCorpus::Tagged(s) => s
                .iter()
                .flat_map(|s| s.tokens.iter().flat_map(|t| t.chars().map(String::from)))
                .collect(),
        }
    }
}

/// Split a word into its characters as symbols.
pub fn chars(word: &str) -> Vec<String> {
    word.chars().map(String::from).collect()
}

/// Uniform sample of `n` sentences without replacement, in original order.
/// Inputs of at most `n` sentences are returned unchanged.
pub fn downsample(sentences: &[TaggedSentence], n: usize, seed: u64) -> Vec<TaggedSentence> {
    if sentences.len() <= n {
        return sentences.to_vec();
    }
    let mut rng = rng::seeded(seed);
    let mut picked = rand::seq::index::sample(&mut rng, sentences.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| sentences[i].clone()).collect()
}

/// Downsample each language's sentences separately, keeping language order.
pub fn downsample_per_language(
    sentences: &[TaggedSentence],
    n: usize,
    seed: u64,
) -> Vec<TaggedSentence> {
    let languages: BTreeSet<&str> = sentences.iter().map(|s| s.language.as_str()).collect();
    let mut out = Vec::new();
    for lang in languages {
        let subset: Vec<TaggedSentence> = sentences
            .iter()
            .filter(|s| s.language == lang)
            .cloned()
            .collect();
        out.extend(downsample(&subset, n, seed));
    }
    out
}

/// Iterate over `(line number, fields)` of a TSV text, skipping blank and
/// comment lines and an optional header equal to `header`.
pub(crate) fn tsv_rows<'a>(
    text: &'a str,
    header: &'a [&'a str],
) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    let mut first = true;
    text.lines().enumerate().filter_map(move |(i, line)| {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            return None;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if std::mem::take(&mut first) && fields == header {
            return None;
        }
        Some((i + 1, fields))
    })
}
