use super::{chars, tsv_rows, SeqPair};
use crate::error::{Error, Result};

/// G2P lexicon: `language<TAB>orthography<TAB>phonemes`, phonemes separated by
/// spaces. Sources are the orthography's characters.
pub fn parse_g2p(text: &str) -> Result<Vec<SeqPair>> {
    let mut out = Vec::new();
    for (line, f) in tsv_rows(text, &["language", "orthography", "phonemes"]) {
        if f.len() < 3 {
            return Err(Error::parse(line, format!("expected 3 fields, found {}", f.len())));
        }
        let (language, orth) = (f[0].trim(), f[1].trim());
        let phonemes: Vec<String> = f[2].split_whitespace().map(String::from).collect();
        if language.is_empty() || orth.is_empty() || phonemes.is_empty() {
            return Err(Error::parse(line, "empty language, orthography or phoneme field"));
        }
        out.push(SeqPair {
            language: language.to_string(),
            source: chars(orth),
            target: phonemes,
            tags: None,
        });
    }
    Ok(out)
}

/// ASJP word list: `language<TAB>word`, parsed as auto-encoding pairs.
pub fn parse_asjp(text: &str) -> Result<Vec<SeqPair>> {
    let mut out = Vec::new();
    for (line, f) in tsv_rows(text, &["language", "word"]) {
        if f.len() < 2 {
            return Err(Error::parse(line, "expected language and word"));
        }
        let (language, word) = (f[0].trim(), f[1].trim());
        if word.is_empty() {
            return Err(Error::parse(line, "empty word"));
        }
        if language.is_empty() {
            return Err(Error::parse(line, "empty language code"));
        }
        let symbols = chars(word);
        out.push(SeqPair {
            language: language.to_string(),
            source: symbols.clone(),
            target: symbols,
            tags: None,
        });
    }
    Ok(out)
}

/// Inflection triples: `language<TAB>lemma<TAB>form<TAB>tags`, or
/// `lemma<TAB>form<TAB>tags` when the whole file belongs to `default_language`.
/// Tags are `;`-separated.
pub fn parse_sigmorphon(text: &str, default_language: Option<&str>) -> Result<Vec<SeqPair>> {
    let mut out = Vec::new();
    for (line, f) in tsv_rows(text, &["language", "lemma", "form", "tags"]) {
        let (language, lemma, form, bundle) = match f.as_slice() {
            [lang, lemma, form, tags, ..] => (*lang, *lemma, *form, *tags),
            [lemma, form, tags] => match default_language {
                Some(lang) => (lang, *lemma, *form, *tags),
                None => return Err(Error::parse(line, "row lacks a language code")),
            },
            _ => return Err(Error::parse(line, format!("expected 3 or 4 fields, found {}", f.len()))),
        };
        let (lemma, form) = (lemma.trim(), form.trim());
        if lemma.is_empty() || form.is_empty() || language.trim().is_empty() {
            return Err(Error::parse(line, "empty language, lemma or form"));
        }
        let tags: Vec<String> = bundle.trim().split(';').map(|t| t.trim().to_string()).collect();
        if tags.iter().any(String::is_empty) {
            return Err(Error::parse(line, format!("malformed tag bundle {bundle:?}")));
        }
        out.push(SeqPair {
            language: language.trim().to_string(),
            source: chars(lemma),
            target: chars(form),
            tags: Some(tags),
        });
    }
    Ok(out)
}

pub fn write_g2p(pairs: &[SeqPair]) -> String {
    pairs
        .iter()
        .map(|p| format!("{}\t{}\t{}\n", p.language, p.source.concat(), p.target.join(" ")))
        .collect()
}

pub fn write_asjp(pairs: &[SeqPair]) -> String {
    pairs
        .iter()
        .map(|p| format!("{}\t{}\n", p.language, p.source.concat()))
        .collect()
}

pub fn write_sigmorphon(pairs: &[SeqPair]) -> String {
    pairs
        .iter()
        .map(|p| {
            format!(
                "{}\t{}\t{}\t{}\n",
                p.language,
                p.source.concat(),
                p.target.concat(),
                p.tags.as_deref().unwrap_or_default().join(";")
            )
        })
        .collect()
}
