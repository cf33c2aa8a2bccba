//! Typological feature prediction from language embeddings.
//!
//! Each WALS feature gets its own nearest-neighbour classifier over the
//! languages that have both an embedding and a coded value. Accuracy is
//! compared with a most-frequent-value baseline on identical splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpora::{Category, WalsTable};
use crate::error::{Error, Result};
use crate::langspace::{cosine_similarity, EmbeddingStore};
use crate::rng;

/// One language's embedding and coded value for a feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub language: String,
    pub vector: Vec<f64>,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    pub feature_id: String,
    pub instances: Vec<Instance>,
}

impl FeatureDataset {
    /// Languages present in `store` (and in `restrict`, when given) that have
    /// `feature_id` coded, in code order.
    pub fn build(
        store: &EmbeddingStore,
        wals: &WalsTable,
        feature_id: &str,
        restrict: Option<&BTreeSet<String>>,
    ) -> Result<Self> {
        if wals.feature(feature_id).is_none() {
            return Err(Error::unknown("feature", feature_id));
        }
        let instances = store
            .iter()
            .filter(|(code, _)| restrict.is_none_or(|r| r.contains(*code)))
            .filter_map(|(code, v)| {
                wals.value(code, feature_id).map(|value| Instance {
                    language: code.to_string(),
                    vector: v.to_vec(),
                    value: value.to_string(),
                })
            })
            .collect();
        Ok(FeatureDataset {
            feature_id: feature_id.to_string(),
            instances,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn languages(&self) -> Vec<String> {
        self.instances.iter().map(|i| i.language.clone()).collect()
    }

    pub fn distinct_values(&self) -> BTreeSet<&str> {
        self.instances.iter().map(|i| i.value.as_str()).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// One minus cosine similarity; a zero vector is at distance 1 from everything.
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "distance between dimensions {} and {}",
                a.len(),
                b.len()
            )));
        }
        Ok(match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Cosine => match cosine_similarity(a, b) {
                Ok(c) => 1.0 - c,
                Err(_) => 1.0,
            },
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::unknown("metric", other)),
        }
    }
}

/// Value predicted for `query` by its `k` nearest training instances.
///
/// Neighbours are ordered by distance, then language code. With `k > 1` the
/// majority value wins and a tied vote goes to the value of the nearest
/// neighbour among the tied values.
pub fn knn_predict<'a>(train: &'a [Instance], query: &[f64], k: usize, metric: Metric) -> Result<&'a str> {
    if train.is_empty() {
        return Err(Error::Empty("k-NN training set".into()));
    }
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    let mut scored = train
        .iter()
        .map(|t| Ok((metric.distance(&t.vector, query)?, t)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.language.cmp(&b.1.language)));
    let neighbours = &scored[..k.min(scored.len())];
    if neighbours.len() == 1 {
        return Ok(&neighbours[0].1.value);
    }
    let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, n) in neighbours {
        *votes.entry(&n.value).or_insert(0) += 1;
    }
    let top = *votes.values().max().expect("non-empty votes");
    let winner = neighbours
        .iter()
        .find(|(_, n)| votes[n.value.as_str()] == top)
        .expect("a neighbour carries the top vote");
    Ok(&winner.1.value)
}

/// Modal value, ties going to the lexicographically smallest value.
pub fn modal_value<S: AsRef<str>>(values: &[S]) -> Result<&str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v.as_ref()).or_insert(0) += 1;
    }
    let top = counts
        .values()
        .max()
        .copied()
        .ok_or_else(|| Error::Empty("baseline training values".into()))?;
    Ok(counts.into_iter().find(|(_, c)| *c == top).expect("maximum exists").0)
}

/// Accuracy on `test` of always predicting the modal training value.
pub fn most_frequent_baseline<S: AsRef<str>, T: AsRef<str>>(train: &[S], test: &[T]) -> Result<f64> {
    let mode = modal_value(train)?;
    if test.is_empty() {
        return Err(Error::Empty("baseline test values".into()));
    }
    let hits = test.iter().filter(|t| t.as_ref() == mode).count();
    Ok(hits as f64 / test.len() as f64)
}

/// Seeded shuffle dealt round-robin into `folds` parts, so sizes differ by at most one.
pub fn make_folds<T: Clone>(items: &[T], folds: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if folds < 2 {
        return Err(Error::Invalid("cross-validation needs at least 2 folds".into()));
    }
    if items.len() < folds {
        return Err(Error::Invalid(format!(
            "{} items cannot fill {folds} folds",
            items.len()
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut out = vec![Vec::new(); folds];
    for (i, &j) in order.iter().enumerate() {
        out[i % folds].push(items[j].clone());
    }
    Ok(out)
}

/// Hold out every language of `family`; the rest is training data.
pub fn unseen_family_split(
    dataset: &FeatureDataset,
    wals: &WalsTable,
    family: &str,
) -> Result<(Vec<Instance>, Vec<Instance>)> {
    let (test, train): (Vec<Instance>, Vec<Instance>) = dataset
        .instances
        .iter()
        .cloned()
        .partition(|i| wals.family(&i.language) == Some(family));
    if test.is_empty() {
        return Err(Error::unknown("family among the dataset's languages", family));
    }
    if train.is_empty() {
        return Err(Error::Invalid(format!(
            "family {family} covers every language of feature {}",
            dataset.feature_id
        )));
    }
    Ok((train, test))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Per-feature language-level cross-validation.
    Random,
    /// Hold out one family, features of the chosen category.
    UnseenFamily,
    /// Hold out one family, every WALS feature.
    AllFeatures,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::Random => "random",
            SplitMode::UnseenFamily => "unseen",
            SplitMode::AllFeatures => "all",
        }
    }
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(SplitMode::Random),
            "unseen" | "unseen_family" => Ok(SplitMode::UnseenFamily),
            "all" | "all_features" => Ok(SplitMode::AllFeatures),
            other => Err(Error::unknown("split mode", other)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub folds: usize,
    pub family: Option<String>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn random(folds: usize, seed: u64) -> Self {
        SplitSpec {
            mode: SplitMode::Random,
            folds,
            family: None,
            seed,
        }
    }

    pub fn unseen_family(family: &str, seed: u64) -> Self {
        SplitSpec {
            mode: SplitMode::UnseenFamily,
            folds: 3,
            family: Some(family.to_string()),
            seed,
        }
    }

    pub fn all_features(family: &str, seed: u64) -> Self {
        SplitSpec {
            mode: SplitMode::AllFeatures,
            ..SplitSpec::unseen_family(family, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            SplitMode::Random if self.folds < 2 => {
                Err(Error::Invalid("random split needs at least 2 folds".into()))
            }
            SplitMode::UnseenFamily | SplitMode::AllFeatures
                if self.family.as_deref().is_none_or(|f| f.trim().is_empty()) =>
            {
                Err(Error::Invalid("held-out family is required for unseen-family splits".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Parse a feature-set name: `phonology`, `morphology`, `word_order` or `all`.
pub fn parse_feature_set(name: &str) -> Result<Option<Category>> {
    match name.trim().to_ascii_lowercase().replace(' ', "_").as_str() {
        "phonology" => Ok(Some(Category::Phonology)),
        "morphology" => Ok(Some(Category::Morphology)),
        "word_order" => Ok(Some(Category::WordOrder)),
        "all" => Ok(None),
        other => Err(Error::unknown("feature category", other)),
    }
}

pub fn feature_set_name(set: Option<Category>) -> &'static str {
    set.map_or("all", Category::as_str)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub k: usize,
    pub metric: Metric,
    /// Drop features whose evaluation pool has a single value.
    pub exclude_uniform: bool,
    /// Approximate-randomization trials for the classifier/baseline p-value.
    pub trials: usize,
    /// Restrict evaluation to these languages (the task's language set).
    pub languages: Option<BTreeSet<String>>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k: 1,
            metric: Metric::Euclidean,
            exclude_uniform: false,
            trials: 10_000,
            languages: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub language: String,
    pub fold: usize,
    pub gold: String,
    pub knn: String,
    pub baseline: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureResult {
    pub feature_id: String,
    pub chapter: String,
    pub category: Category,
    pub n_languages: usize,
    pub accuracy: f64,
    pub baseline: f64,
    pub uniform: bool,
    pub predictions: Vec<Prediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryMean {
    pub features: usize,
    pub accuracy: f64,
    pub baseline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub feature_set: String,
    pub split: SplitSpec,
    pub k: usize,
    pub metric: Metric,
    pub features: Vec<FeatureResult>,
    pub category_means: BTreeMap<String, CategoryMean>,
    /// Mean over every evaluated feature.
    pub overall: CategoryMean,
    /// Approximate-randomization p-value of classifier vs baseline over all predictions.
    pub p_value: f64,
}

impl EvalResult {
    pub fn feature(&self, id: &str) -> Option<&FeatureResult> {
        self.features.iter().find(|f| f.feature_id == id)
    }

    pub fn feature_ids(&self) -> BTreeSet<String> {
        self.features.iter().map(|f| f.feature_id.clone()).collect()
    }

    /// Gold, classifier and baseline labels over every prediction, in feature order.
    pub fn pooled(&self) -> (Vec<&str>, Vec<&str>, Vec<&str>) {
        let mut gold = Vec::new();
        let mut knn = Vec::new();
        let mut base = Vec::new();
        for p in self.features.iter().flat_map(|f| &f.predictions) {
            gold.push(p.gold.as_str());
            knn.push(p.knn.as_str());
            base.push(p.baseline.as_str());
        }
        (gold, knn, base)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("feature_id\taccuracy\tbaseline\tn_languages\n");
        for f in &self.features {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{}",
                f.feature_id, f.accuracy, f.baseline, f.n_languages
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn summarize<'a>(features: impl Iterator<Item = &'a FeatureResult> + Clone) -> CategoryMean {
    CategoryMean {
        features: features.clone().count(),
        accuracy: mean(features.clone().map(|f| f.accuracy)),
        baseline: mean(features.map(|f| f.baseline)),
    }
}

/// Train/test partitions for one feature under `split`, or `None` when the
/// feature cannot be evaluated (fewer than two languages, or the held-out
/// family is absent or covers everything).
pub fn feature_splits(
    dataset: &FeatureDataset,
    wals: &WalsTable,
    split: &SplitSpec,
) -> Option<Vec<(Vec<Instance>, Vec<Instance>)>> {
    if dataset.len() < 2 {
        return None;
    }
    match split.mode {
        SplitMode::Random => {
            let folds = make_folds(&dataset.instances, split.folds.min(dataset.len()), split.seed).ok()?;
            Some(
                (0..folds.len())
                    .map(|i| {
                        let train = folds
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != i)
                            .flat_map(|(_, f)| f.iter().cloned())
                            .collect();
                        (train, folds[i].clone())
                    })
                    .collect(),
            )
        }
        SplitMode::UnseenFamily | SplitMode::AllFeatures => {
            let family = split.family.as_deref()?;
            unseen_family_split(dataset, wals, family).ok().map(|s| vec![s])
        }
    }
}

/// Classifier and baseline on the given splits of one feature.
pub fn evaluate_splits(
    splits: &[(Vec<Instance>, Vec<Instance>)],
    k: usize,
    metric: Metric,
) -> Result<(f64, f64, Vec<Prediction>)> {
    let mut predictions = Vec::new();
    let mut knn_acc = Vec::with_capacity(splits.len());
    let mut base_acc = Vec::with_capacity(splits.len());
    for (fold, (train, test)) in splits.iter().enumerate() {
        let train_values: Vec<&str> = train.iter().map(|t| t.value.as_str()).collect();
        let mode = modal_value(&train_values)?;
        let mut hits = 0usize;
        let mut base_hits = 0usize;
        for t in test {
            let guess = knn_predict(train, &t.vector, k, metric)?;
            hits += usize::from(guess == t.value);
            base_hits += usize::from(mode == t.value);
            predictions.push(Prediction {
                language: t.language.clone(),
                fold,
                gold: t.value.clone(),
                knn: guess.to_string(),
                baseline: mode.to_string(),
            });
        }
        knn_acc.push(hits as f64 / test.len() as f64);
        base_acc.push(base_hits as f64 / test.len() as f64);
    }
    Ok((
        mean(knn_acc.into_iter()),
        mean(base_acc.into_iter()),
        predictions,
    ))
}

/// Per-feature classifier and baseline accuracy over a feature set.
pub fn evaluate(
    store: &EmbeddingStore,
    wals: &WalsTable,
    feature_set: Option<Category>,
    split: &SplitSpec,
    options: &EvalOptions,
) -> Result<EvalResult> {
    split.validate()?;
    let set = match split.mode {
        SplitMode::AllFeatures => None,
        _ => feature_set,
    };
    let mut features = Vec::new();
    for feature in wals.features_in(set) {
        let dataset = FeatureDataset::build(store, wals, &feature.id, options.languages.as_ref())?;
        let uniform = dataset.distinct_values().len() == 1;
        if uniform && options.exclude_uniform {
            continue;
        }
        let Some(splits) = feature_splits(&dataset, wals, split) else {
            continue;
        };
        let (accuracy, baseline, predictions) = evaluate_splits(&splits, options.k, options.metric)?;
        features.push(FeatureResult {
            feature_id: feature.id.clone(),
            chapter: feature.chapter.clone(),
            category: feature.category,
            n_languages: dataset.len(),
            accuracy,
            baseline,
            uniform,
            predictions,
        });
    }
    if features.is_empty() {
        return Err(Error::Empty(format!(
            "no evaluable {} features",
            feature_set_name(set)
        )));
    }
    let mut category_means = BTreeMap::new();
    let categories: BTreeSet<Category> = features.iter().map(|f| f.category).collect();
    for c in categories {
        category_means.insert(
            c.as_str().to_string(),
            summarize(features.iter().filter(|f| f.category == c)),
        );
    }
    let overall = summarize(features.iter());
    let mut result = EvalResult {
        feature_set: feature_set_name(set).to_string(),
        split: split.clone(),
        k: options.k,
        metric: options.metric,
        features,
        category_means,
        overall,
        p_value: 1.0,
    };
    let (gold, knn, base) = result.pooled();
    result.p_value = significance(&knn, &base, &gold, options.trials, split.seed)?;
    Ok(result)
}

/// Two-sided approximate-randomization p-value for the accuracy difference
/// of two paired prediction vectors: `(hits + 1) / (trials + 1)`.
pub fn significance<S: AsRef<str>>(a: &[S], b: &[S], gold: &[S], trials: usize, seed: u64) -> Result<f64> {
    if a.len() != gold.len() || b.len() != gold.len() {
        return Err(Error::Shape(format!(
            "predictions of length {} and {} against {} gold labels",
            a.len(),
            b.len(),
            gold.len()
        )));
    }
    let diffs: Vec<i64> = a
        .iter()
        .zip(b)
        .zip(gold)
        .map(|((x, y), g)| {
            i64::from(x.as_ref() == g.as_ref()) - i64::from(y.as_ref() == g.as_ref())
        })
        .filter(|d| *d != 0)
        .collect();
    let observed: i64 = diffs.iter().sum::<i64>().abs();
    if observed == 0 {
        return Ok(1.0);
    }
    let mut rng = rng::stream(seed, 0x5eed);
    let mut extreme = 0usize;
    for _ in 0..trials {
        let shuffled: i64 = diffs
            .iter()
            .map(|d| if rng.random::<bool>() { -d } else { *d })
            .sum();
        if shuffled.abs() >= observed {
            extreme += 1;
        }
    }
    Ok((extreme + 1) as f64 / (trials + 1) as f64)
}
