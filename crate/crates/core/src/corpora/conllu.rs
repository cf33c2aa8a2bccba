use super::TaggedSentence;
use crate::error::{Error, Result};

/// Read forms (column 2) and UPOS tags (column 4) of a CoNLL-U file.
/// Comment lines, multiword-token ranges (`1-2`) and empty nodes (`1.1`) are
/// skipped.
pub fn parse_conllu(text: &str, language: &str) -> Result<Vec<TaggedSentence>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<String>| {
        if !tokens.is_empty() {
            out.push(TaggedSentence {
                language: language.to_string(),
                tokens: std::mem::take(tokens),
                tags: std::mem::take(tags),
            });
        }
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        if id.parse::<usize>().is_err() {
            return Err(Error::parse(i + 1, format!("bad token id {id:?}")));
        }
        let upos = cols.get(3).map(|s| s.trim()).unwrap_or("");
        if upos.is_empty() || upos == "_" {
            return Err(Error::parse(i + 1, "token without UPOS tag"));
        }
        let form = cols.get(1).copied().unwrap_or("");
        if form.is_empty() {
            return Err(Error::parse(i + 1, "token without form"));
        }
        tokens.push(form.to_string());
        tags.push(upos.to_string());
    }
    flush(&mut tokens, &mut tags);
    Ok(out)
}

pub fn write_conllu(sentences: &[TaggedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (i, (tok, tag)) in s.tokens.iter().zip(&s.tags).enumerate() {
            out.push_str(&format!("{}\t{tok}\t_\t{tag}\t_\t_\t_\t_\t_\t_\n", i + 1));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_block() {
        let text = "# sent_id = 1\n# text = dogs bark\n1\tdogs\tdog\tNOUN\tNNS\t_\t2\tnsubj\t_\t_\n2\tbark\tbark\tVERB\tVBP\t_\t0\troot\t_\t_\n\n";
        let s = parse_conllu(text, "eng").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].tokens, ["dogs", "bark"]);
        assert_eq!(s[0].tags, ["NOUN", "VERB"]);
    }

    #[test]
    fn multiword_range_skipped() {
        let text = "1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n1\tde\tde\tADP\t_\t_\t2\tcase\t_\t_\n2\tel\tel\tDET\t_\t_\t0\troot\t_\t_\n";
        let s = parse_conllu(text, "spa").unwrap();
        assert_eq!(s[0].tokens.len(), 2);
        assert_eq!(s[0].tags, ["ADP", "DET"]);
    }

    #[test]
    fn missing_upos_reports_line() {
        let text = "1\tdogs\tdog\tNOUN\n\n1\tcats\n";
        let err = parse_conllu(text, "eng").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn space_separated_fallback() {
        let s = parse_conllu("1 dogs _ NOUN\n2 bark _ VERB\n", "eng").unwrap();
        assert_eq!(s[0].tags, ["NOUN", "VERB"]);
    }
}
