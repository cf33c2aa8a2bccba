//! Attention encoder-decoder shared by the G2P, reconstruction and
//! inflection tasks.
//!
//! Every encoder input is `[char embedding ∥ language embedding]`; a bi-LSTM
//! encodes the source and an LSTM decoder with additive attention emits the
//! target greedily. For inflection a multi-hot vector over the tag inventory
//! is appended to each decoder input.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::corpora::{Labels, SeqPair, TaskKind, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::langspace::{EmbeddingStore, LanguageTable, SnapshotSeries};
use crate::nn::layers::uniform;
use crate::nn::{argmax, Adam, Attention, BiLstm, Graph, LstmLayer, ParamId, ParameterSet, StateVars, Tensor, Var};
use crate::rng;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Seq2SeqConfig {
    pub char_embedding_dim: usize,
    /// Units per encoder direction.
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    pub max_decode_length: usize,
    pub use_tag_features: bool,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Seq2SeqConfig {
            char_embedding_dim: 64,
            encoder_hidden: 128,
            decoder_hidden: 256,
            attention_dim: 128,
            max_decode_length: 50,
            use_tag_features: false,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl Seq2SeqConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("char_embedding_dim", self.char_embedding_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("attention_dim", self.attention_dim),
            ("max_decode_length", self.max_decode_length),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{name} must be at least 1")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Adam {
        Adam {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Greedy decoder output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub symbols: Vec<String>,
    /// Decoding stopped at `max_decode_length` without emitting EOS.
    pub truncated: bool,
}

pub struct Seq2SeqModel {
    config: Seq2SeqConfig,
    vocab: Vocabulary,
    tags: Labels,
    params: ParameterSet,
    languages: LanguageTable,
    char_emb: ParamId,
    encoder: BiLstm,
    decoder: LstmLayer,
    attention: Attention,
    out_w: ParamId,
    out_b: ParamId,
}

impl Seq2SeqModel {
    pub fn new(
        config: Seq2SeqConfig,
        vocab: Vocabulary,
        tags: Labels,
        store: &EmbeddingStore,
    ) -> Result<Self> {
        config.validate()?;
        if config.use_tag_features && tags.is_empty() {
            return Err(Error::Invalid("tag features enabled with an empty tag set".into()));
        }
        let mut rng = rng::stream(config.seed, 1);
        let mut params = ParameterSet::new();
        let c = config.char_embedding_dim;
        let languages = LanguageTable::attach(store, &mut params, "lang_emb")?;
        let char_emb = params.add_table("char_emb", uniform(vec![vocab.len(), c], &mut rng)?)?;
        let encoder = BiLstm::new(
            &mut params,
            "encoder",
            c + languages.dim(),
            config.encoder_hidden,
            &mut rng,
        )?;
        let enc_dim = encoder.output_dim();
        let tag_dim = if config.use_tag_features { tags.len() } else { 0 };
        let decoder = LstmLayer::new(
            &mut params,
            "decoder",
            c + enc_dim + tag_dim,
            config.decoder_hidden,
            &mut rng,
        )?;
        let attention = Attention::new(
            &mut params,
            "attention",
            enc_dim,
            config.decoder_hidden,
            config.attention_dim,
            &mut rng,
        )?;
        let out_w = params.add(
            "output.w",
            uniform(vec![vocab.len(), config.decoder_hidden + enc_dim], &mut rng)?,
        )?;
        let out_b = params.add("output.b", Tensor::zeros(vec![vocab.len()])?)?;
        Ok(Seq2SeqModel {
            config,
            vocab,
            tags,
            params,
            languages,
            char_emb,
            encoder,
            decoder,
            attention,
            out_w,
            out_b,
        })
    }

    /// Model whose vocabulary and tag set cover `pairs`.
    pub fn for_corpus(config: Seq2SeqConfig, pairs: &[SeqPair], store: &EmbeddingStore) -> Result<Self> {
        let vocab = Vocabulary::from_symbols(
            pairs
                .iter()
                .flat_map(|p| p.source.iter().chain(&p.target).cloned()),
        )?;
        let tags = Labels::new(pairs.iter().flat_map(|p| p.tags.iter().flatten().cloned()));
        Seq2SeqModel::new(config, vocab, tags, store)
    }

    pub fn config(&self) -> &Seq2SeqConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn tags(&self) -> &Labels {
        &self.tags
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

    /// Current language embeddings.
    pub fn embeddings(&self) -> EmbeddingStore {
        self.languages.export(&self.params)
    }

    /// Bi-LSTM states over `source`, each input `[char ∥ language]`.
    pub fn encode<'p>(&'p self, g: &mut Graph<'p>, language: &str, source: &[String]) -> Result<Vec<Var>> {
        if source.is_empty() {
            return Err(Error::Empty("source sequence".into()));
        }
        let row = self.languages.row(language)?;
        let lang = g.embed(self.languages.param, row)?;
        let inputs = source
            .iter()
            .map(|s| {
                let ch = g.embed(self.char_emb, self.vocab.id(s))?;
                g.concat(&[ch, lang])
            })
            .collect::<Result<Vec<_>>>()?;
        self.encoder.encode(g, &inputs)
    }

    /// Encoder outputs as plain vectors.
    pub fn encode_values(&self, language: &str, source: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.params);
        let out = self.encode(&mut g, language, source)?;
        Ok(out.iter().map(|v| g.value(*v).to_vec()).collect())
    }

    fn tag_vector<'p>(&self, g: &mut Graph<'p>, tags: Option<&[String]>) -> Result<Option<Var>> {
        if !self.config.use_tag_features {
            return Ok(None);
        }
        let mut v = vec![0.0; self.tags.len()];
        for t in tags.unwrap_or_default() {
            let i = self
                .tags
                .index(t)
                .ok_or_else(|| Error::unknown("morphological tag", t.as_str()))?;
            v[i] = 1.0;
        }
        Ok(Some(g.input(v)))
    }

    #[allow(clippy::too_many_arguments)]
    fn decoder_step<'p>(
        &'p self,
        g: &mut Graph<'p>,
        prev: usize,
        state: StateVars,
        context: Var,
        tags: Option<Var>,
        keys: &[Var],
        enc: &[Var],
    ) -> Result<(StateVars, Var, Var)> {
        let emb = g.embed(self.char_emb, prev)?;
        let input = match tags {
            Some(t) => g.concat(&[emb, context, t])?,
            None => g.concat(&[emb, context])?,
        };
        let state = self.decoder.step(g, input, state)?;
        let att = self.attention.attend(g, state.hidden, keys, enc)?;
        let features = g.concat(&[state.hidden, att.context])?;
        let logits = g.linear(self.out_w, Some(self.out_b), features)?;
        Ok((state, att.context, logits))
    }

    /// Summed per-symbol cross-entropy of `pair` under teacher forcing.
    pub fn loss<'p>(&'p self, g: &mut Graph<'p>, pair: &SeqPair) -> Result<Var> {
        let targets = self.target_ids(pair)?;
        let enc = self.encode(g, &pair.language, &pair.source)?;
        let keys = self.attention.keys(g, &enc)?;
        let tags = self.tag_vector(g, pair.tags.as_deref())?;
        let mut state = self.decoder.zero_state(g);
        let mut context = g.input(vec![0.0; self.encoder.output_dim()]);
        let mut prev = BOS;
        let mut terms = Vec::with_capacity(targets.len());
        for &t in &targets {
            let (s, c, logits) = self.decoder_step(g, prev, state, context, tags, &keys, &enc)?;
            terms.push(g.softmax_xent(logits, t)?);
            state = s;
            context = c;
            prev = t;
        }
        let all = g.concat(&terms)?;
        Ok(g.sum(all))
    }

    fn target_ids(&self, pair: &SeqPair) -> Result<Vec<usize>> {
        if pair.target.is_empty() {
            return Err(Error::Empty("target sequence".into()));
        }
        let mut ids = pair
            .target
            .iter()
            .map(|s| {
                self.vocab
                    .get(s)
                    .ok_or_else(|| Error::unknown("target symbol", s.as_str()))
            })
            .collect::<Result<Vec<_>>>()?;
        ids.push(EOS);
        Ok(ids)
    }

    /// Greedy decoding from BOS until EOS or `max_decode_length` symbols.
    pub fn decode(&self, language: &str, source: &[String], tags: Option<&[String]>) -> Result<Decoded> {
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, language, source)?;
        self.decode_from(&mut g, &enc, tags)
    }

    /// Greedy decoding from precomputed encoder outputs.
    pub fn decode_from<'p>(&'p self, g: &mut Graph<'p>, enc: &[Var], tags: Option<&[String]>) -> Result<Decoded> {
        if enc.is_empty() {
            return Err(Error::Empty("encoder outputs".into()));
        }
        let keys = self.attention.keys(g, enc)?;
        let tag_vec = self.tag_vector(g, tags)?;
        let mut state = self.decoder.zero_state(g);
        let mut context = g.input(vec![0.0; self.encoder.output_dim()]);
        let mut prev = BOS;
        let mut symbols = Vec::new();
        while symbols.len() < self.config.max_decode_length {
            let (s, c, logits) = self.decoder_step(g, prev, state, context, tag_vec, &keys, enc)?;
            let next = argmax(g.value(logits));
            if next == EOS {
                return Ok(Decoded {
                    symbols,
                    truncated: false,
                });
            }
            symbols.push(self.vocab.symbol(next).unwrap_or("<unk>").to_string());
            state = s;
            context = c;
            prev = next;
        }
        Ok(Decoded {
            symbols,
            truncated: true,
        })
    }

    pub fn predict(&self, pair: &SeqPair) -> Result<Decoded> {
        self.decode(&pair.language, &pair.source, pair.tags.as_deref())
    }

    /// Fraction of pairs whose greedy decode equals the target exactly.
    pub fn exact_match_accuracy(&self, pairs: &[SeqPair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Empty("accuracy over an empty corpus".into()));
        }
        let mut correct = 0usize;
        for p in pairs {
            let d = self.predict(p)?;
            if !d.truncated && d.symbols == p.target {
                correct += 1;
            }
        }
        Ok(correct as f64 / pairs.len() as f64)
    }

    /// Check that every pair can be trained on: known language, in-vocabulary
    /// targets, known tags, and room for the longest target plus BOS/EOS.
    pub fn check_corpus(&self, pairs: &[SeqPair]) -> Result<()> {
        if pairs.is_empty() {
            return Err(Error::Empty("training corpus".into()));
        }
        let mut longest = 0;
        for p in pairs {
            self.languages.row(&p.language)?;
            self.target_ids(p)?;
            if p.source.is_empty() {
                return Err(Error::Empty("source sequence".into()));
            }
            if self.config.use_tag_features {
                for t in p.tags.iter().flatten() {
                    if self.tags.index(t).is_none() {
                        return Err(Error::unknown("morphological tag", t.as_str()));
                    }
                }
            }
            longest = longest.max(p.target.len());
        }
        if self.config.max_decode_length < longest + 2 {
            return Err(Error::Invalid(format!(
                "max_decode_length {} is below longest target {longest} + 2",
                self.config.max_decode_length
            )));
        }
        Ok(())
    }
}

/// Loss history and embedding snapshots of a training run.
#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub kind: TaskKind,
    pub iterations: u64,
    /// Mean per-example loss of each minibatch, before its update.
    pub loss_history: Vec<f64>,
    pub snapshots: SnapshotSeries,
}

/// Minibatch trainer; one [`step`](Trainer::step) is one iteration.
pub struct Trainer<'a> {
    model: &'a mut Seq2SeqModel,
    pairs: &'a [SeqPair],
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    optimizer: Adam,
    iteration: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a mut Seq2SeqModel, pairs: &'a [SeqPair]) -> Result<Self> {
        model.check_corpus(pairs)?;
        let rng = rng::stream(model.config.seed, 2);
        let optimizer = model.config.optimizer();
        Ok(Trainer {
            model,
            pairs,
            order: Vec::new(),
            cursor: 0,
            rng,
            optimizer,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn model(&self) -> &Seq2SeqModel {
        self.model
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let size = self.model.config.batch_size.min(self.pairs.len());
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.cursor == self.order.len() {
                self.order = (0..self.pairs.len()).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let take = (size - batch.len()).min(self.order.len() - self.cursor);
            batch.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
            if self.cursor == self.order.len() {
                break;
            }
        }
        batch
    }

    /// One minibatch update. Returns the batch's mean per-example loss.
    pub fn step(&mut self) -> Result<f64> {
        let batch = self.next_batch();
        let (loss, grads) = {
            let model: &Seq2SeqModel = self.model;
            let mut g = Graph::new(&model.params);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in &batch {
                losses.push(model.loss(&mut g, &self.pairs[i])?);
            }
            let all = g.concat(&losses)?;
            let total = g.sum(all);
            let mean = g.scale(total, 1.0 / batch.len() as f64);
            let value = g.scalar(mean)?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {value} at iteration {}",
                    self.iteration + 1
                )));
            }
            (value, g.backward(mean)?)
        };
        self.model.params.accumulate(&grads);
        self.optimizer.step(&mut self.model.params)?;
        self.iteration += 1;
        Ok(loss)
    }
}

/// Train for `iterations` minibatch updates, snapshotting the language
/// embeddings at iteration 0 and every `cadence` iterations.
pub fn train(
    model: &mut Seq2SeqModel,
    pairs: &[SeqPair],
    kind: TaskKind,
    iterations: u64,
    cadence: u64,
) -> Result<TrainingRun> {
    if iterations == 0 {
        return Err(Error::Invalid("iterations must be at least 1".into()));
    }
    if cadence == 0 {
        return Err(Error::Invalid("snapshot cadence must be at least 1".into()));
    }
    let mut snapshots = SnapshotSeries::new();
    snapshots.record(0, &model.embeddings())?;
    let mut trainer = Trainer::new(model, pairs)?;
    let mut loss_history = Vec::with_capacity(iterations as usize);
    while trainer.iteration() < iterations {
        loss_history.push(trainer.step()?);
        if trainer.iteration() % cadence == 0 {
            snapshots.record(trainer.iteration(), &trainer.model().embeddings())?;
        }
    }
    Ok(TrainingRun {
        kind,
        iterations,
        loss_history,
        snapshots,
    })
}
