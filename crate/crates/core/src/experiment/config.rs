use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::corpora::{Category, TaskKind};
use crate::error::{Error, Result};
use crate::langspace::DEFAULT_DIM;
use crate::seq2seq::Seq2SeqConfig;
use crate::tagger::TaggerConfig;
use crate::typology::{feature_set_name, parse_feature_set, Metric};

/// Raw `section.key → (line, value)` entries of a config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigEntries {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigEntries {
    /// Parse `key = value` lines grouped under `[section]` headers.
    /// Blank lines and lines starting with `#` or `;` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_ascii_lowercase();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", i + 1), "expected `key = value`"))?;
            let key = key.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(Error::config(format!("line {}", i + 1), "empty key"));
            }
            let full = if section.is_empty() { key } else { format!("{section}.{key}") };
            if entries.insert(full.clone(), (i + 1, value.trim().to_string())).is_some() {
                return Err(Error::config(full, "given more than once"));
            }
        }
        Ok(ConfigEntries { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (0, value.into()));
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}")))
            })
            .transpose()
    }

    fn parsed_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }
}

/// One input corpus file; CoNLL-U files carry their language here.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSource {
    pub language: Option<String>,
    /// As written in the config, relative to the config file.
    pub given: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EmbeddingSource {
    Pretrained { given: String, path: PathBuf },
    Random { seed: u64, dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalsPaths {
    pub languages: PathBuf,
    pub features: PathBuf,
    pub values: PathBuf,
    given: [String; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub seed: u64,
    pub train: Vec<DataSource>,
    pub dev: Vec<DataSource>,
    /// Language for three-column inflection files.
    pub default_language: Option<String>,
    pub embeddings: EmbeddingSource,
    pub trainable: bool,
    pub iterations: u64,
    pub snapshot_every: u64,
    /// Per-language sentence cap for tagging corpora.
    pub downsample: usize,
    pub wals: WalsPaths,
    pub category: Option<Category>,
    pub folds: usize,
    pub k: usize,
    pub metric: Metric,
    pub unseen_family: Option<String>,
    pub eval_seed: u64,
    pub trials: usize,
    pub exclude_uniform: bool,
    pub rank: usize,
    pub similarity_pairs: Vec<(String, String)>,
    pub output: PathBuf,
    output_given: String,
    pub seq2seq: Seq2SeqConfig,
    pub tagger: TaggerConfig,
}

const KNOWN_KEYS: &[&str] = &[
    "task.kind",
    "task.seed",
    "data.train",
    "data.dev",
    "data.language",
    "embeddings.pretrained",
    "embeddings.random_seed",
    "embeddings.dim",
    "embeddings.trainable",
    "training.iterations",
    "training.epochs",
    "training.snapshot_every",
    "training.downsample",
    "training.char_embedding_dim",
    "training.encoder_hidden",
    "training.decoder_hidden",
    "training.attention_dim",
    "training.max_decode_length",
    "training.use_tag_features",
    "training.batch_size",
    "training.learning_rate",
    "training.char_lstm_hidden",
    "training.word_lstm_layers",
    "training.word_lstm_hidden",
    "training.patience",
    "training.dev_fraction",
    "wals.languages",
    "wals.features",
    "wals.values",
    "evaluation.category",
    "evaluation.folds",
    "evaluation.k",
    "evaluation.metric",
    "evaluation.unseen_family",
    "evaluation.seed",
    "evaluation.trials",
    "evaluation.exclude_uniform",
    "evaluation.rank",
    "evaluation.similarity_pairs",
    "output.dir",
];

fn resolve(base: &Path, key: &str, given: &str, must_exist: bool) -> Result<PathBuf> {
    if given.is_empty() {
        return Err(Error::config(key, "empty path"));
    }
    let p = Path::new(given);
    let path = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    if must_exist && !path.exists() {
        return Err(Error::config(key, format!("path {} does not exist", path.display())));
    }
    Ok(path)
}

fn required<'a>(entries: &'a ConfigEntries, key: &str) -> Result<&'a str> {
    entries.get(key).ok_or_else(|| Error::config(key, "missing"))
}

fn sources(entries: &ConfigEntries, key: &str, base: &Path, task: TaskKind) -> Result<Vec<DataSource>> {
    let Some(raw) = entries.get(key) else {
        return Ok(Vec::new());
    };
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (language, given) = match (task, item.split_once(':')) {
                (TaskKind::Pos, Some((l, p))) => (Some(l.trim().to_string()), p.trim()),
                (TaskKind::Pos, None) => {
                    return Err(Error::config(key, format!("`{item}` needs the form code:path")))
                }
                _ => (None, item),
            };
            Ok(DataSource {
                language,
                given: given.to_string(),
                path: resolve(base, key, given, true)?,
            })
        })
        .collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected a boolean, got `{v}`"))),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::from_entries(&ConfigEntries::parse(&text)?, base)
    }

    /// Validate entries, resolving relative paths against `base`.
    pub fn from_entries(entries: &ConfigEntries, base: &Path) -> Result<Self> {
        if let Some(k) = entries.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(Error::config(k, "unknown key"));
        }
        let task: TaskKind = required(entries, "task.kind")?
            .parse()
            .map_err(|e: Error| Error::config("task.kind", e.to_string()))?;
        let seed = entries.parsed_or("task.seed", 0u64)?;
        let train = sources(entries, "data.train", base, task)?;
        if train.is_empty() {
            return Err(Error::config("data.train", "missing"));
        }
        let dev = sources(entries, "data.dev", base, task)?;
        if !dev.is_empty() && task != TaskKind::Pos {
            return Err(Error::config("data.dev", "only tagging runs take a dev set"));
        }

        let embeddings = match (entries.get("embeddings.pretrained"), entries.get("embeddings.random_seed")) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "embeddings.pretrained",
                    "give either a pretrained file or a random seed, not both",
                ))
            }
            (Some(p), None) => {
                if entries.get("embeddings.dim").is_some() {
                    return Err(Error::config("embeddings.dim", "only used with random_seed"));
                }
                EmbeddingSource::Pretrained {
                    given: p.to_string(),
                    path: resolve(base, "embeddings.pretrained", p, true)?,
                }
            }
            (None, Some(_)) => EmbeddingSource::Random {
                seed: entries.parsed_or("embeddings.random_seed", 0u64)?,
                dim: entries.parsed_or("embeddings.dim", DEFAULT_DIM)?,
            },
            (None, None) => return Err(Error::config("embeddings.pretrained", "missing embedding source")),
        };
        let trainable = entries
            .get("embeddings.trainable")
            .map(|v| parse_bool("embeddings.trainable", v))
            .transpose()?
            .unwrap_or(true);

        let wals_given = [
            required(entries, "wals.languages")?.to_string(),
            required(entries, "wals.features")?.to_string(),
            required(entries, "wals.values")?.to_string(),
        ];
        let wals = WalsPaths {
            languages: resolve(base, "wals.languages", &wals_given[0], true)?,
            features: resolve(base, "wals.features", &wals_given[1], true)?,
            values: resolve(base, "wals.values", &wals_given[2], true)?,
            given: wals_given,
        };

        let category = parse_feature_set(entries.get("evaluation.category").unwrap_or("all"))
            .map_err(|e| Error::config("evaluation.category", e.to_string()))?;
        let folds = entries.parsed_or("evaluation.folds", 3usize)?;
        if folds < 2 {
            return Err(Error::config("evaluation.folds", "must be at least 2"));
        }
        let k = entries.parsed_or("evaluation.k", 1usize)?;
        if k == 0 {
            return Err(Error::config("evaluation.k", "must be at least 1"));
        }
        let metric = entries
            .get("evaluation.metric")
            .map(|m| m.parse::<Metric>().map_err(|e| Error::config("evaluation.metric", e.to_string())))
            .transpose()?
            .unwrap_or_default();
        let unseen_family = entries.get("evaluation.unseen_family").map(str::to_string);
        if unseen_family.as_deref().is_some_and(str::is_empty) {
            return Err(Error::config("evaluation.unseen_family", "empty family name"));
        }
        let similarity_pairs = entries
            .get("evaluation.similarity_pairs")
            .map(|raw| {
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|p| {
                        p.split_once('~')
                            .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                            .ok_or_else(|| Error::config("evaluation.similarity_pairs", format!("`{p}` is not a~b")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?
            .unwrap_or_default();

        let output_given = required(entries, "output.dir")?.to_string();
        let output = resolve(base, "output.dir", &output_given, false)?;

        let snapshot_every = entries.parsed_or("training.snapshot_every", 50u64)?;
        if snapshot_every == 0 {
            return Err(Error::config("training.snapshot_every", "must be at least 1"));
        }
        let iterations = entries.parsed_or("training.iterations", 600u64)?;
        if iterations == 0 {
            return Err(Error::config("training.iterations", "must be at least 1"));
        }

        let d = Seq2SeqConfig::default();
        let seq2seq = Seq2SeqConfig {
            char_embedding_dim: entries.parsed_or("training.char_embedding_dim", d.char_embedding_dim)?,
            encoder_hidden: entries.parsed_or("training.encoder_hidden", d.encoder_hidden)?,
            decoder_hidden: entries.parsed_or("training.decoder_hidden", d.decoder_hidden)?,
            attention_dim: entries.parsed_or("training.attention_dim", d.attention_dim)?,
            max_decode_length: entries.parsed_or("training.max_decode_length", d.max_decode_length)?,
            use_tag_features: entries
                .get("training.use_tag_features")
                .map(|v| parse_bool("training.use_tag_features", v))
                .transpose()?
                .unwrap_or(task == TaskKind::Inflection),
            batch_size: entries.parsed_or("training.batch_size", d.batch_size)?,
            learning_rate: entries.parsed_or("training.learning_rate", d.learning_rate)?,
            seed,
            ..d
        };
        let t = TaggerConfig::default();
        let tagger = TaggerConfig {
            char_embedding_dim: entries.parsed_or("training.char_embedding_dim", t.char_embedding_dim)?,
            char_lstm_hidden: entries.parsed_or("training.char_lstm_hidden", t.char_lstm_hidden)?,
            word_lstm_layers: entries.parsed_or("training.word_lstm_layers", t.word_lstm_layers)?,
            word_lstm_hidden: entries.parsed_or("training.word_lstm_hidden", t.word_lstm_hidden)?,
            max_epochs: entries.parsed_or("training.epochs", t.max_epochs)?,
            patience: entries.parsed_or("training.patience", t.patience)?,
            batch_size: entries.parsed_or("training.batch_size", t.batch_size)?,
            learning_rate: entries.parsed_or("training.learning_rate", t.learning_rate)?,
            dev_fraction: entries.parsed_or("training.dev_fraction", t.dev_fraction)?,
            seed,
        };
        match task {
            TaskKind::Pos => tagger.validate(),
            _ => seq2seq.validate(),
        }
        .map_err(|e| Error::config("training", e.to_string()))?;

        Ok(ExperimentConfig {
            task,
            seed,
            train,
            dev,
            default_language: entries.get("data.language").map(str::to_string),
            embeddings,
            trainable,
            iterations,
            snapshot_every,
            downsample: entries.parsed_or("training.downsample", 1500usize)?,
            wals,
            category,
            folds,
            k,
            metric,
            unseen_family,
            eval_seed: entries.parsed_or("evaluation.seed", seed)?,
            trials: entries.parsed_or("evaluation.trials", 10_000usize)?,
            exclude_uniform: entries
                .get("evaluation.exclude_uniform")
                .map(|v| parse_bool("evaluation.exclude_uniform", v))
                .transpose()?
                .unwrap_or(false),
            rank: entries.parsed_or("evaluation.rank", 5usize)?,
            similarity_pairs,
            output,
            output_given,
            seq2seq,
            tagger,
        })
    }

    /// Normalised `key = value` text with every effective setting. Paths
    /// appear as written so the text does not depend on where a run lives.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let list = |items: &[DataSource]| {
            items
                .iter()
                .map(|s| match &s.language {
                    Some(l) => format!("{l}:{}", s.given),
                    None => s.given.clone(),
                })
                .collect::<Vec<_>>()
                .join(", ")
        };
        let _ = writeln!(out, "[task]\nkind = {}\nseed = {}\n", self.task, self.seed);
        let _ = writeln!(out, "[data]\ntrain = {}", list(&self.train));
        if !self.dev.is_empty() {
            let _ = writeln!(out, "dev = {}", list(&self.dev));
        }
        if let Some(l) = &self.default_language {
            let _ = writeln!(out, "language = {l}");
        }
        out.push_str("\n[embeddings]\n");
        match &self.embeddings {
            EmbeddingSource::Pretrained { given, .. } => {
                let _ = writeln!(out, "pretrained = {given}");
            }
            EmbeddingSource::Random { seed, dim } => {
                let _ = writeln!(out, "random_seed = {seed}\ndim = {dim}");
            }
        }
        let _ = writeln!(out, "trainable = {}\n", self.trainable);
        out.push_str("[training]\n");
        if self.task == TaskKind::Pos {
            let t = &self.tagger;
            let _ = writeln!(
                out,
                "epochs = {}\npatience = {}\ndownsample = {}\ndev_fraction = {}\nchar_embedding_dim = {}\nchar_lstm_hidden = {}\nword_lstm_layers = {}\nword_lstm_hidden = {}\nbatch_size = {}\nlearning_rate = {}",
                t.max_epochs, t.patience, self.downsample, t.dev_fraction, t.char_embedding_dim,
                t.char_lstm_hidden, t.word_lstm_layers, t.word_lstm_hidden, t.batch_size, t.learning_rate
            );
        } else {
            let s = &self.seq2seq;
            let _ = writeln!(
                out,
                "iterations = {}\nsnapshot_every = {}\nchar_embedding_dim = {}\nencoder_hidden = {}\ndecoder_hidden = {}\nattention_dim = {}\nmax_decode_length = {}\nuse_tag_features = {}\nbatch_size = {}\nlearning_rate = {}",
                self.iterations, self.snapshot_every, s.char_embedding_dim, s.encoder_hidden, s.decoder_hidden,
                s.attention_dim, s.max_decode_length, s.use_tag_features, s.batch_size, s.learning_rate
            );
        }
        let _ = writeln!(
            out,
            "\n[wals]\nlanguages = {}\nfeatures = {}\nvalues = {}\n",
            self.wals.given[0], self.wals.given[1], self.wals.given[2]
        );
        let _ = writeln!(
            out,
            "[evaluation]\ncategory = {}\nfolds = {}\nk = {}\nmetric = {}\nseed = {}\ntrials = {}\nexclude_uniform = {}\nrank = {}",
            feature_set_name(self.category),
            self.folds,
            self.k,
            match self.metric {
                Metric::Euclidean => "euclidean",
                Metric::Cosine => "cosine",
            },
            self.eval_seed,
            self.trials,
            self.exclude_uniform,
            self.rank
        );
        if let Some(f) = &self.unseen_family {
            let _ = writeln!(out, "unseen_family = {f}");
        }
        if !self.similarity_pairs.is_empty() {
            let pairs: Vec<String> = self.similarity_pairs.iter().map(|(a, b)| format!("{a}~{b}")).collect();
            let _ = writeln!(out, "similarity_pairs = {}", pairs.join(", "));
        }
        let _ = writeln!(out, "\n[output]\ndir = {}", self.output_given);
        out
    }
}
