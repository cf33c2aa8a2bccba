//! Synthetic corpora and tables shared by the integration tests.

use langtype::corpora::{LanguageInfo, SeqPair, TaggedSentence, WalsTable};
use langtype::langspace::EmbeddingStore;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LETTERS: &[&str] = &["a", "b", "d", "e", "g", "i", "k", "l", "m", "n", "o", "p", "s", "t", "u"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const VOWEL_SOUNDS: &[&str] = &["a", "e", "i", "o", "u", "ɛ", "ɔ"];

pub fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn spell(word: &str) -> Vec<String> {
    word.chars().map(String::from).collect()
}

/// Distinct random words over [`LETTERS`] alternating consonant and vowel.
pub fn words(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let consonants: Vec<&str> = LETTERS.iter().copied().filter(|c| !VOWELS.contains(c)).collect();
    let mut out: Vec<String> = Vec::new();
    while out.len() < n {
        let len = rng.random_range(3..=6);
        let start_vowel = rng.random_bool(0.3);
        let w: String = (0..len)
            .map(|i| {
                if (i % 2 == 0) != start_vowel {
                    *consonants.choose(&mut rng).unwrap()
                } else {
                    *VOWELS.choose(&mut rng).unwrap()
                }
            })
            .collect();
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

/// Pronunciation of `word` in language number `lang`: vowels shift by
/// language, `k` aspirates in language 1 and `s` voices in language 2.
pub fn pronounce(word: &str, lang: usize) -> Vec<String> {
    word.chars()
        .map(|c| {
            let c = c.to_string();
            if let Some(v) = VOWELS.iter().position(|v| *v == c) {
                VOWEL_SOUNDS[(v + 2 * lang) % VOWEL_SOUNDS.len()].to_string()
            } else if c == "k" && lang == 1 {
                "kʰ".to_string()
            } else if c == "s" && lang == 2 {
                "z".to_string()
            } else {
                c
            }
        })
        .collect()
}

pub fn language_codes(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("l{i:02}")).collect()
}

/// G2P lexicon of `n` pairs spread over `langs` languages, each language
/// pronouncing its own words.
pub fn g2p_lexicon(n: usize, langs: usize, seed: u64) -> Vec<SeqPair> {
    let codes = language_codes(langs);
    words(n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, w)| SeqPair {
            language: codes[i % langs].clone(),
            source: spell(&w),
            target: pronounce(&w, i % langs),
            tags: None,
        })
        .collect()
}

/// Every word spelled identically in each language but pronounced differently.
pub fn variation_lexicon(n_words: usize, langs: usize, seed: u64) -> Vec<SeqPair> {
    let codes = language_codes(langs);
    let mut out = Vec::new();
    for w in words(n_words, seed) {
        for (l, code) in codes.iter().enumerate() {
            out.push(SeqPair {
                language: code.clone(),
                source: spell(&w),
                target: pronounce(&w, l),
                tags: None,
            });
        }
    }
    out
}

const SUFFIXES: [[&str; 3]; 3] = [["s", "en", "um"], ["i", "ta", "ok"], ["e", "lo", "ni"]];
const TAGS: [&str; 3] = ["SG", "PL", "DU"];

/// Inflected form of `word` in language `lang`: stem vowels rotate by
/// language, then a suffix chosen by language and tag.
pub fn inflect(word: &str, lang: usize, tag: usize) -> Vec<String> {
    let mut out: Vec<String> = word
        .chars()
        .map(|c| {
            let c = c.to_string();
            match VOWELS.iter().position(|v| *v == c) {
                Some(v) => VOWELS[(v + lang) % VOWELS.len()].to_string(),
                None => c,
            }
        })
        .collect();
    out.extend(spell(SUFFIXES[lang % 3][tag]));
    out
}

/// A copy task and an inflection task over the same words in every language:
/// equal size, identical sources, one alphabet. Only the inflected forms
/// depend on the language.
pub fn matched_corpora(n_words: usize, langs: usize, seed: u64) -> (Vec<SeqPair>, Vec<SeqPair>) {
    let codes = language_codes(langs);
    let mut recon = Vec::new();
    let mut infl = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for w in words(n_words, seed) {
        for (l, code) in codes.iter().enumerate() {
            let tag = rng.random_range(0..TAGS.len());
            recon.push(SeqPair {
                language: code.clone(),
                source: spell(&w),
                target: spell(&w),
                tags: None,
            });
            infl.push(SeqPair {
                language: code.clone(),
                source: spell(&w),
                target: inflect(&w, l, tag),
                tags: Some(vec![TAGS[tag].to_string()]),
            });
        }
    }
    (recon, infl)
}

/// Trainable random embeddings.
pub fn store_for(languages: &[String], dim: usize, seed: u64) -> EmbeddingStore {
    let mut store = EmbeddingStore::init_random(languages, dim, seed).unwrap();
    store.set_trainable(true);
    store
}

pub fn tagged(language: &str, pairs: &[(&str, &str)]) -> TaggedSentence {
    TaggedSentence {
        language: language.to_string(),
        tokens: pairs.iter().map(|(t, _)| t.to_string()).collect(),
        tags: pairs.iter().map(|(_, g)| g.to_string()).collect(),
    }
}

/// Five short sentences in two languages.
pub fn tagger_corpus() -> Vec<TaggedSentence> {
    vec![
        tagged("l00", &[("the", "DET"), ("dog", "NOUN"), ("runs", "VERB")]),
        tagged("l00", &[("a", "DET"), ("cat", "NOUN"), ("sleeps", "VERB"), ("here", "ADV")]),
        tagged("l00", &[("dogs", "NOUN"), ("bark", "VERB"), ("loudly", "ADV")]),
        tagged("l01", &[("le", "DET"), ("chien", "NOUN"), ("court", "VERB")]),
        tagged("l01", &[("un", "DET"), ("chat", "NOUN"), ("dort", "VERB"), ("ici", "ADV")]),
    ]
}

/// A language row for [`WalsTable::add_language`].
pub fn language(code: &str, family: &str) -> LanguageInfo {
    LanguageInfo {
        code: code.to_string(),
        name: code.to_uppercase(),
        family: family.to_string(),
        genus: format!("{family}-g"),
    }
}

/// Twelve languages in three families with two features, one of them
/// missing for some languages.
pub fn fixture_wals() -> WalsTable {
    let mut t = WalsTable::default();
    let families = ["Alpha", "Beta", "Gamma"];
    for i in 0..12 {
        t.add_language(language(&format!("x{i:02}"), families[i % 3])).unwrap();
    }
    t.add_feature("1A", "Consonant Inventories", "Phonology").unwrap();
    t.add_feature("81A", "Order of Subject, Object and Verb", "Word Order").unwrap();
    for i in 0..12 {
        let code = format!("x{i:02}");
        t.set_value(&code, "1A", ["1 Small", "2 Average", "3 Large"][i % 3]).unwrap();
        if i % 4 != 3 {
            t.set_value(&code, "81A", ["1 SOV", "2 SVO"][i % 2]).unwrap();
        }
    }
    t
}
