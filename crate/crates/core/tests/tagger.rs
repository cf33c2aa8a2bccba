mod common;

use std::collections::BTreeSet;

use langtype::corpora::{Labels, TaggedSentence, Vocabulary};
use langtype::tagger::{train_tagger, train_tagger_with, TaggerConfig, TaggerModel};

use common::synth;

fn small(seed: u64) -> TaggerConfig {
    TaggerConfig {
        char_embedding_dim: 12,
        char_lstm_hidden: 10,
        word_lstm_hidden: 10,
        batch_size: 2,
        learning_rate: 0.01,
        seed,
        ..TaggerConfig::default()
    }
}

fn shapes(m: &TaggerModel) -> Vec<(String, Vec<usize>)> {
    let p = m.params();
    p.ids().map(|id| (p.name(id).to_string(), p.get(id).shape().to_vec())).collect()
}

fn char_set(corpus: &[TaggedSentence]) -> BTreeSet<char> {
    corpus.iter().flat_map(|s| s.tokens.iter()).flat_map(|t| t.chars()).collect()
}

#[test]
fn single_tag_corpus_yields_that_tag_everywhere() {
    let corpus: Vec<TaggedSentence> = ["kala mina", "mina", "tala kala mina", "ka ta"]
        .iter()
        .map(|s| TaggedSentence {
            language: "l00".into(),
            tokens: s.split(' ').map(String::from).collect(),
            tags: s.split(' ').map(|_| "NOUN".to_string()).collect(),
        })
        .collect();
    let store = synth::store_for(&synth::language_codes(1), 8, 1);
    let mut model = TaggerModel::for_corpus(small(1), &corpus, &store).unwrap();
    train_tagger(&mut model, &corpus, &corpus).unwrap();
    for probe in [vec!["mak", "ilat"], vec!["a"], vec!["nimak", "t", "kalamina", "m"]] {
        let tags = model.tag_sentence(&probe, "l00").unwrap();
        assert_eq!(tags, vec!["NOUN"; probe.len()]);
    }
}

#[test]
fn zero_character_lstm_leaves_only_the_language_vector() {
    let corpus = synth::tagger_corpus();
    let store = synth::store_for(&synth::language_codes(2), 8, 2);
    let mut model = TaggerModel::for_corpus(small(2), &corpus, &store).unwrap();
    let ids: Vec<_> = model
        .params()
        .ids()
        .filter(|&id| model.params().name(id).starts_with("char_lstm"))
        .collect();
    for id in ids {
        model.params_mut().get_mut(id).values_mut().fill(0.0);
    }
    let rep = model.represent_word_values("dog", "l01").unwrap();
    assert_eq!(rep.len(), model.word_dim());
    assert!(rep[..20].iter().all(|x| *x == 0.0));
    assert_eq!(&rep[20..], store.get("l01").unwrap());
}

#[test]
fn bad_words_and_languages_are_rejected() {
    let corpus = synth::tagger_corpus();
    let store = synth::store_for(&synth::language_codes(2), 8, 2);
    let model = TaggerModel::for_corpus(small(2), &corpus, &store).unwrap();
    assert!(model.represent_word_values("", "l00").is_err());
    assert!(model.tag_sentence(&["dog"], "zzz").is_err());
    assert!(model.tag_sentence::<&str>(&[], "l00").is_err());
}

#[test]
fn removing_a_word_type_changes_no_parameter_shape() {
    let corpus = synth::tagger_corpus();
    let store = synth::store_for(&synth::language_codes(2), 8, 3);
    let chars = Vocabulary::from_symbols(char_set(&corpus).iter().map(|c| c.to_string())).unwrap();
    let tags = Labels::new(corpus.iter().flat_map(|s| s.tags.iter().cloned()));
    let full = TaggerModel::new(small(3), chars.clone(), tags.clone(), &store).unwrap();
    let types: BTreeSet<String> = corpus.iter().flat_map(|s| s.tokens.iter().cloned()).collect();
    for word in &types {
        let reduced: Vec<TaggedSentence> = corpus
            .iter()
            .map(|s| {
                let keep: Vec<usize> = (0..s.tokens.len()).filter(|&i| &s.tokens[i] != word).collect();
                TaggedSentence {
                    language: s.language.clone(),
                    tokens: keep.iter().map(|&i| s.tokens[i].clone()).collect(),
                    tags: keep.iter().map(|&i| s.tags[i].clone()).collect(),
                }
            })
            .filter(|s| !s.tokens.is_empty())
            .collect();
        let with_fixed_chars = TaggerModel::new(small(3), chars.clone(), tags.clone(), &store).unwrap();
        assert_eq!(shapes(&with_fixed_chars), shapes(&full));
        if char_set(&reduced) == char_set(&corpus) {
            let rebuilt = TaggerModel::for_corpus(small(3), &reduced, &store).unwrap();
            assert_eq!(shapes(&rebuilt), shapes(&full), "removing {word}");
        }
    }
}

#[test]
fn early_stopping_restores_the_best_epoch() {
    let corpus = synth::tagger_corpus();
    let store = synth::store_for(&synth::language_codes(2), 8, 4);
    let config = TaggerConfig {
        max_epochs: 8,
        patience: 8,
        learning_rate: 0.05,
        ..small(4)
    };
    let dev = vec![corpus[1].clone(), corpus[4].clone()];
    let mut model = TaggerModel::for_corpus(config, &corpus[..3], &store).unwrap();
    let mut checkpoints = Vec::new();
    let run = train_tagger_with(&mut model, &corpus[..3], &dev, |epoch, m| {
        checkpoints.push((epoch, m.params().to_checkpoint()));
        Ok(())
    })
    .unwrap();
    let best = run
        .dev_accuracy
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &a)| if a > acc.1 { (i + 1, a) } else { acc });
    assert_eq!(run.best_epoch, best.0);
    let (_, saved) = checkpoints.iter().find(|(e, _)| *e == run.best_epoch).unwrap();
    assert_eq!(&model.params().to_checkpoint(), saved);
    assert_eq!(run.snapshots.len(), run.epochs_run + 1);
}

#[test]
fn single_language_training_leaves_other_languages_untouched() {
    let corpus: Vec<TaggedSentence> = synth::tagger_corpus().into_iter().filter(|s| s.language == "l00").collect();
    let store = synth::store_for(&synth::language_codes(2), 8, 5);
    let config = TaggerConfig {
        max_epochs: 2,
        ..small(5)
    };
    let mut model = TaggerModel::for_corpus(config, &corpus, &store).unwrap();
    train_tagger(&mut model, &corpus, &corpus).unwrap();
    let after = model.embeddings();
    assert_ne!(after.get("l00").unwrap(), store.get("l00").unwrap());
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(after.get("l01").unwrap()), bits(store.get("l01").unwrap()));
}

#[test]
fn training_is_deterministic_per_seed() {
    let corpus = synth::tagger_corpus();
    let store = synth::store_for(&synth::language_codes(2), 8, 6);
    let run = || {
        let config = TaggerConfig {
            max_epochs: 3,
            ..small(6)
        };
        let mut model = TaggerModel::for_corpus(config, &corpus, &store).unwrap();
        let r = train_tagger(&mut model, &corpus, &corpus[3..]).unwrap();
        (r.dev_accuracy, r.train_loss, model.params().to_checkpoint())
    };
    assert_eq!(run(), run());
}

#[test]
fn empty_dev_set_is_rejected() {
    let corpus = synth::tagger_corpus();
    let store = synth::store_for(&synth::language_codes(2), 8, 7);
    let mut model = TaggerModel::for_corpus(small(7), &corpus, &store).unwrap();
    assert!(train_tagger(&mut model, &corpus, &[]).is_err());
}
