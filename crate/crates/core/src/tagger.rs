//! Character-level bi-LSTM part-of-speech tagger.
//!
//! A word is represented by the final forward and backward states of a
//! character bi-LSTM concatenated with the language embedding, so the model
//! never holds a table indexed by whole words. A stacked word-level bi-LSTM
//! and a linear projection produce one tag per token.

use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::corpora::{Labels, TaggedSentence, Vocabulary};
use crate::error::{Error, Result};
use crate::langspace::{EmbeddingStore, LanguageTable, SnapshotSeries};
use crate::nn::layers::uniform;
use crate::nn::{argmax, Adam, BiLstm, Graph, ParamId, ParameterSet, Tensor, Var};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub char_embedding_dim: usize,
    /// Units per direction of the character bi-LSTM.
    pub char_lstm_hidden: usize,
    pub word_lstm_layers: usize,
    /// Units per direction of each word-level layer.
    pub word_lstm_hidden: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Share of each language's sentences held out when no dev set is given.
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            char_embedding_dim: 100,
            char_lstm_hidden: 100,
            word_lstm_layers: 2,
            word_lstm_hidden: 100,
            max_epochs: 10,
            patience: 2,
            batch_size: 8,
            learning_rate: 0.001,
            dev_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("char_embedding_dim", self.char_embedding_dim),
            ("char_lstm_hidden", self.char_lstm_hidden),
            ("word_lstm_layers", self.word_lstm_layers),
            ("word_lstm_hidden", self.word_lstm_hidden),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{name} must be at least 1")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::Invalid("dev_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub struct TaggerModel {
    config: TaggerConfig,
    chars: Vocabulary,
    tags: Labels,
    params: ParameterSet,
    languages: LanguageTable,
    char_emb: ParamId,
    char_lstm: BiLstm,
    word_layers: Vec<BiLstm>,
    out_w: ParamId,
    out_b: ParamId,
}

impl TaggerModel {
    pub fn new(config: TaggerConfig, chars: Vocabulary, tags: Labels, store: &EmbeddingStore) -> Result<Self> {
        config.validate()?;
        if tags.is_empty() {
            return Err(Error::Empty("tag inventory".into()));
        }
        let mut rng = rng::stream(config.seed, 1);
        let mut params = ParameterSet::new();
        let languages = LanguageTable::attach(store, &mut params, "lang_emb")?;
        let char_emb = params.add_table(
            "char_emb",
            uniform(vec![chars.len(), config.char_embedding_dim], &mut rng)?,
        )?;
        let char_lstm = BiLstm::new(
            &mut params,
            "char_lstm",
            config.char_embedding_dim,
            config.char_lstm_hidden,
            &mut rng,
        )?;
        let mut word_layers = Vec::with_capacity(config.word_lstm_layers);
        let mut width = 2 * config.char_lstm_hidden + languages.dim();
        for layer in 0..config.word_lstm_layers {
            let bi = BiLstm::new(
                &mut params,
                &format!("word_lstm{layer}"),
                width,
                config.word_lstm_hidden,
                &mut rng,
            )?;
            width = bi.output_dim();
            word_layers.push(bi);
        }
        let out_w = params.add("output.w", uniform(vec![tags.len(), width], &mut rng)?)?;
        let out_b = params.add("output.b", Tensor::zeros(vec![tags.len()])?)?;
        Ok(TaggerModel {
            config,
            chars,
            tags,
            params,
            languages,
            char_emb,
            char_lstm,
            word_layers,
            out_w,
            out_b,
        })
    }

    /// Model whose character and tag inventories cover `sentences`.
    pub fn for_corpus(config: TaggerConfig, sentences: &[TaggedSentence], store: &EmbeddingStore) -> Result<Self> {
        let chars = Vocabulary::from_symbols(
            sentences
                .iter()
                .flat_map(|s| s.tokens.iter())
                .flat_map(|t| t.chars().map(String::from)),
        )?;
        let tags = Labels::new(sentences.iter().flat_map(|s| s.tags.iter().cloned()));
        TaggerModel::new(config, chars, tags, store)
    }

    pub fn config(&self) -> &TaggerConfig {
        &self.config
    }

    pub fn tags(&self) -> &Labels {
        &self.tags
    }

    pub fn chars(&self) -> &Vocabulary {
        &self.chars
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn language_table(&self) -> &LanguageTable {
        &self.languages
    }

    pub fn embeddings(&self) -> EmbeddingStore {
        self.languages.export(&self.params)
    }

    /// Width of a word representation.
    pub fn word_dim(&self) -> usize {
        self.char_lstm.output_dim() + self.languages.dim()
    }

    pub fn represent_word<'p>(&'p self, g: &mut Graph<'p>, word: &str, language: &str) -> Result<Var> {
        if word.is_empty() {
            return Err(Error::Empty("word".into()));
        }
        let row = self.languages.row(language)?;
        let inputs = word
            .chars()
            .map(|c| {
                let mut buf = [0u8; 4];
                g.embed(self.char_emb, self.chars.id(c.encode_utf8(&mut buf)))
            })
            .collect::<Result<Vec<_>>>()?;
        let enc = self.char_lstm.encode_full(g, &inputs)?;
        let lang = g.embed(self.languages.param, row)?;
        g.concat(&[enc.forward_final, enc.backward_final, lang])
    }

    pub fn represent_word_values(&self, word: &str, language: &str) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let v = self.represent_word(&mut g, word, language)?;
        Ok(g.value(v).to_vec())
    }

    fn logits<'p>(&'p self, g: &mut Graph<'p>, tokens: &[String], language: &str) -> Result<Vec<Var>> {
        if tokens.is_empty() {
            return Err(Error::Empty("sentence".into()));
        }
        let mut states = tokens
            .iter()
            .map(|t| self.represent_word(g, t, language))
            .collect::<Result<Vec<_>>>()?;
        for layer in &self.word_layers {
            states = layer.encode(g, &states)?;
        }
        states
            .into_iter()
            .map(|s| g.linear(self.out_w, Some(self.out_b), s))
            .collect()
    }

    pub fn tag_sentence<S: AsRef<str>>(&self, tokens: &[S], language: &str) -> Result<Vec<String>> {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        let mut g = Graph::new(&self.params);
        let logits = self.logits(&mut g, &tokens, language)?;
        Ok(logits
            .iter()
            .map(|l| self.tags.get(argmax(g.value(*l))).expect("tag index").to_string())
            .collect())
    }

    /// Summed per-token cross-entropy of one sentence.
    pub fn loss<'p>(&'p self, g: &mut Graph<'p>, sentence: &TaggedSentence) -> Result<Var> {
        let gold = self.gold_ids(sentence)?;
        let logits = self.logits(g, &sentence.tokens, &sentence.language)?;
        let terms = logits
            .into_iter()
            .zip(gold)
            .map(|(l, t)| g.softmax_xent(l, t))
            .collect::<Result<Vec<_>>>()?;
        let all = g.concat(&terms)?;
        Ok(g.sum(all))
    }

    fn gold_ids(&self, sentence: &TaggedSentence) -> Result<Vec<usize>> {
        if sentence.tokens.len() != sentence.tags.len() {
            return Err(Error::Shape(format!(
                "{} tokens but {} tags",
                sentence.tokens.len(),
                sentence.tags.len()
            )));
        }
        sentence
            .tags
            .iter()
            .map(|t| self.tags.index(t).ok_or_else(|| Error::unknown("tag", t.as_str())))
            .collect()
    }

    pub fn token_accuracy(&self, sentences: &[TaggedSentence]) -> Result<f64> {
        let predicted = sentences
            .iter()
            .map(|s| self.tag_sentence(&s.tokens, &s.language))
            .collect::<Result<Vec<_>>>()?;
        let gold: Vec<Vec<String>> = sentences.iter().map(|s| s.tags.clone()).collect();
        tag_accuracy(&predicted, &gold)
    }

    fn check_corpus(&self, sentences: &[TaggedSentence]) -> Result<()> {
        for s in sentences {
            self.languages.row(&s.language)?;
            self.gold_ids(s)?;
            if s.tokens.iter().any(String::is_empty) {
                return Err(Error::Empty("token".into()));
            }
        }
        Ok(())
    }

    fn save_values(&self) -> Vec<Vec<f64>> {
        self.params.ids().map(|id| self.params.get(id).values().to_vec()).collect()
    }

    fn restore_values(&mut self, saved: &[Vec<f64>]) {
        let ids: Vec<ParamId> = self.params.ids().collect();
        for (id, values) in ids.into_iter().zip(saved) {
            self.params.get_mut(id).values_mut().copy_from_slice(values);
        }
    }
}

/// Fraction of tokens whose predicted tag equals the gold tag.
pub fn tag_accuracy(predicted: &[Vec<String>], gold: &[Vec<String>]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predicted sentences, {} gold",
            predicted.len(),
            gold.len()
        )));
    }
    let mut total = 0usize;
    let mut correct = 0usize;
    for (p, g) in predicted.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::Shape("sentence length differs from gold".into()));
        }
        total += g.len();
        correct += p.iter().zip(g).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        return Err(Error::Empty("accuracy over zero tokens".into()));
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Patience-based early stopping on a score where higher is better.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Record the score of `epoch`. Only a strict improvement resets patience.
    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if score <= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    return StopDecision::Stop;
                }
            }
            _ => {
                self.best = Some((epoch, score));
                self.stale = 0;
            }
        }
        StopDecision::Continue
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best.map(|(_, s)| s)
    }

    /// Whether the most recent observation set a new best.
    pub fn improved(&self) -> bool {
        self.best.is_some() && self.stale == 0
    }
}

#[derive(Clone, Debug)]
pub struct TaggerRun {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub dev_accuracy: Vec<f64>,
    /// Mean per-sentence loss over each epoch's batches.
    pub train_loss: Vec<f64>,
    /// Embeddings at epoch 0 (before training) and after every epoch.
    pub snapshots: SnapshotSeries,
}

/// Split each language's sentences into train and dev, holding out
/// `fraction` of them (at least one when a language has two or more).
pub fn split_dev(sentences: &[TaggedSentence], fraction: f64, seed: u64) -> (Vec<TaggedSentence>, Vec<TaggedSentence>) {
    let mut by_language: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (i, s) in sentences.iter().enumerate() {
        by_language.entry(&s.language).or_default().push(i);
    }
    let mut rng = rng::seeded(seed);
    let mut dev_index = std::collections::BTreeSet::new();
    for idx in by_language.values() {
        let n = idx.len();
        let k = if n < 2 { 0 } else { ((n as f64 * fraction).round() as usize).clamp(1, n - 1) };
        for &i in idx.choose_multiple(&mut rng, k) {
            dev_index.insert(i);
        }
    }
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        if dev_index.contains(&i) {
            dev.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    (train, dev)
}

/// Train with Adam, evaluating dev token accuracy after every epoch and
/// restoring the parameters of the best epoch when training stops.
pub fn train_tagger(model: &mut TaggerModel, train: &[TaggedSentence], dev: &[TaggedSentence]) -> Result<TaggerRun> {
    train_tagger_with(model, train, dev, |_, _| Ok(()))
}

/// As [`train_tagger`], calling `on_epoch(epoch, model)` after each epoch.
pub fn train_tagger_with<F>(
    model: &mut TaggerModel,
    train: &[TaggedSentence],
    dev: &[TaggedSentence],
    mut on_epoch: F,
) -> Result<TaggerRun>
where
    F: FnMut(usize, &TaggerModel) -> Result<()>,
{
    if train.is_empty() {
        return Err(Error::Empty("training corpus".into()));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev corpus".into()));
    }
    model.check_corpus(train)?;
    model.check_corpus(dev)?;
    let cfg = model.config.clone();
    let optimizer = Adam::with_lr(cfg.learning_rate);
    let mut rng = rng::stream(cfg.seed, 2);
    let mut snapshots = SnapshotSeries::new();
    snapshots.record(0, &model.embeddings())?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_values = model.save_values();
    let mut dev_accuracy = Vec::new();
    let mut train_loss = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = {
                let m: &TaggerModel = model;
                let mut g = Graph::new(&m.params);
                let losses = batch
                    .iter()
                    .map(|&i| m.loss(&mut g, &train[i]))
                    .collect::<Result<Vec<_>>>()?;
                let all = g.concat(&losses)?;
                let total = g.sum(all);
                let mean = g.scale(total, 1.0 / batch.len() as f64);
                let value = g.scalar(mean)?;
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("tagger loss became {value} in epoch {epoch}")));
                }
                (value, g.backward(mean)?)
            };
            model.params.accumulate(&grads);
            optimizer.step(&mut model.params)?;
            epoch_loss += loss;
            batches += 1;
        }
        train_loss.push(epoch_loss / batches as f64);
        let acc = model.token_accuracy(dev)?;
        dev_accuracy.push(acc);
        snapshots.record(epoch as u64, &model.embeddings())?;
        on_epoch(epoch, model)?;
        let decision = stopper.observe(epoch, acc);
        if stopper.improved() {
            best_values = model.save_values();
        }
        if decision == StopDecision::Stop {
            break;
        }
    }
    model.restore_values(&best_values);
    Ok(TaggerRun {
        epochs_run: dev_accuracy.len(),
        best_epoch: stopper.best_epoch().unwrap_or(0),
        dev_accuracy,
        train_loss,
        snapshots,
    })
}

/// Two-column `token\ttag` lines with a blank line after each sentence.
pub fn write_predictions<S: AsRef<str>>(sentences: &[(Vec<S>, Vec<String>)]) -> String {
    let mut out = String::new();
    for (tokens, tags) in sentences {
        for (t, tag) in tokens.iter().zip(tags) {
            let _ = writeln!(out, "{}\t{tag}", t.as_ref());
        }
        out.push('\n');
    }
    out
}
