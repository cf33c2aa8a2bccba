use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::tsv_rows;
use crate::error::{Error, Result};

/// Language metadata from the WALS languages file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LanguageInfo {
    pub code: String,
    pub name: String,
    pub family: String,
    pub genus: String,
}

/// Typological level a feature belongs to, derived from its WALS chapter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Phonology,
    /// Morphology and Nominal Categories chapters.
    Morphology,
    WordOrder,
    /// Any chapter outside the three levels.
    Other,
}

impl Category {
    pub fn from_chapter(chapter: &str) -> Category {
        match chapter.trim().to_ascii_lowercase().as_str() {
            "phonology" => Category::Phonology,
            "morphology" | "nominal categories" => Category::Morphology,
            "word order" => Category::WordOrder,
            _ => Category::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Phonology => "phonology",
            Category::Morphology => "morphology",
            Category::WordOrder => "word_order",
            Category::Other => "other",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Feature {
    pub id: String,
    pub name: String,
    pub chapter: String,
    pub category: Category,
}

/// Order WALS feature ids numerically, then by suffix: `6A < 18A < 144A < 144B`.
pub fn feature_id_cmp(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> (Option<u64>, &str) {
        let end = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
        (s[..end].parse().ok(), &s[end..])
    }
    let (na, sa) = split(a);
    let (nb, sb) = split(b);
    match (na, nb) {
        (Some(x), Some(y)) => x.cmp(&y).then_with(|| sa.cmp(sb)),
        _ => a.cmp(b),
    }
}

/// Languages × features → categorical values, with family metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WalsTable {
    languages: Vec<LanguageInfo>,
    features: Vec<Feature>,
    values: BTreeMap<(String, String), String>,
    lang_index: BTreeMap<String, usize>,
    feature_index: BTreeMap<String, usize>,
}

impl WalsTable {
    /// Parse the three canonical files:
    /// languages `code name family genus`, features `feature_id feature_name chapter`,
    /// values `code feature_id value`.
    pub fn parse(languages: &str, features: &str, values: &str) -> Result<Self> {
        let mut table = WalsTable::default();
        for (line, f) in tsv_rows(languages, &["code", "name", "family", "genus"]) {
            if f.len() < 4 {
                return Err(Error::parse(line, "language row needs code, name, family, genus"));
            }
            table.add_language(LanguageInfo {
                code: f[0].trim().to_string(),
                name: f[1].trim().to_string(),
                family: f[2].trim().to_string(),
                genus: f[3].trim().to_string(),
            })
            .map_err(|e| Error::parse(line, e.to_string()))?;
        }
        for (line, f) in tsv_rows(features, &["feature_id", "feature_name", "chapter"]) {
            if f.len() < 3 {
                return Err(Error::parse(line, "feature row needs id, name, chapter"));
            }
            table.add_feature(f[0].trim(), f[1].trim(), f[2].trim())
                .map_err(|e| Error::parse(line, e.to_string()))?;
        }
        for (line, f) in tsv_rows(values, &["code", "feature_id", "value"]) {
            if f.len() < 3 {
                return Err(Error::parse(line, "value row needs code, feature_id, value"));
            }
            let value = f[2].trim();
            if value.is_empty() {
                continue;
            }
            table.set_value(f[0].trim(), f[1].trim(), value)
                .map_err(|e| Error::parse(line, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn add_language(&mut self, info: LanguageInfo) -> Result<()> {
        if info.code.is_empty() {
            return Err(Error::Invalid("empty language code".into()));
        }
        if self.lang_index.contains_key(&info.code) {
            return Err(Error::duplicate("language", info.code));
        }
        self.lang_index.insert(info.code.clone(), self.languages.len());
        self.languages.push(info);
        Ok(())
    }

    pub fn add_feature(&mut self, id: &str, name: &str, chapter: &str) -> Result<()> {
        if id.is_empty() {
            return Err(Error::Invalid("empty feature id".into()));
        }
        if self.feature_index.contains_key(id) {
            return Err(Error::duplicate("feature", id));
        }
        self.feature_index.insert(id.to_string(), self.features.len());
        self.features.push(Feature {
            id: id.to_string(),
            name: name.to_string(),
            chapter: chapter.to_string(),
            category: Category::from_chapter(chapter),
        });
        Ok(())
    }

    pub fn set_value(&mut self, code: &str, feature: &str, value: &str) -> Result<()> {
        if !self.feature_index.contains_key(feature) {
            return Err(Error::unknown("feature", feature));
        }
        if !self.lang_index.contains_key(code) {
            return Err(Error::unknown("language", code));
        }
        if value.is_empty() {
            return Err(Error::Invalid(format!("empty value for ({code}, {feature})")));
        }
        let key = (code.to_string(), feature.to_string());
        if self.values.contains_key(&key) {
            return Err(Error::duplicate("value", format!("({code}, {feature})")));
        }
        self.values.insert(key, value.to_string());
        Ok(())
    }

    pub fn languages(&self) -> &[LanguageInfo] {
        &self.languages
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn language(&self, code: &str) -> Option<&LanguageInfo> {
        self.lang_index.get(code).map(|&i| &self.languages[i])
    }

    pub fn feature(&self, id: &str) -> Option<&Feature> {
        self.feature_index.get(id).map(|&i| &self.features[i])
    }

    pub fn value(&self, code: &str, feature: &str) -> Option<&str> {
        self.values
            .get(&(code.to_string(), feature.to_string()))
            .map(String::as_str)
    }

    /// Number of coded (language, feature) cells.
    pub fn value_count(&self) -> usize {
        self.values.len()
    }

    /// Feature ids of a category in WALS order; `None` selects every feature.
    pub fn features_in(&self, category: Option<Category>) -> Vec<&Feature> {
        let mut out: Vec<&Feature> = self
            .features
            .iter()
            .filter(|f| category.is_none_or(|c| f.category == c))
            .collect();
        out.sort_by(|a, b| feature_id_cmp(&a.id, &b.id));
        out
    }

    pub fn category_counts(&self) -> BTreeMap<Category, usize> {
        let mut out = BTreeMap::new();
        for f in &self.features {
            *out.entry(f.category).or_insert(0) += 1;
        }
        out
    }

    pub fn family(&self, code: &str) -> Option<&str> {
        self.language(code).map(|l| l.family.as_str())
    }

    pub fn families(&self) -> BTreeSet<&str> {
        self.languages.iter().map(|l| l.family.as_str()).collect()
    }
}
