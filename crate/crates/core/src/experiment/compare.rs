use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::typology::{significance, EvalResult};

/// Significance level for table asterisks.
pub const ALPHA: f64 = 0.05;

const SETTING_ORDER: [&str; 3] = ["random", "unseen", "all"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonColumn {
    pub setting: String,
    pub header: String,
    pub features: usize,
    pub instances: usize,
    pub baseline: f64,
    pub a: f64,
    pub b: f64,
    pub p_value: f64,
    /// `a` is significantly higher than `b`.
    pub a_significant: bool,
    pub b_significant: bool,
}

/// Baseline / system A / system B accuracies per evaluation setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    pub columns: Vec<ComparisonColumn>,
}

impl Comparison {
    pub fn column(&self, setting: &str) -> Option<&ComparisonColumn> {
        self.columns.iter().find(|c| c.setting == setting)
    }

    /// Tab-separated three-row table, asterisks marking significant wins.
    pub fn to_table(&self) -> String {
        let mut out = String::from("system");
        for c in &self.columns {
            let _ = write!(out, "\t{}", c.header);
        }
        out.push('\n');
        let row = |name: &str, value: &dyn Fn(&ComparisonColumn) -> String| {
            let mut line = name.to_string();
            for c in &self.columns {
                let _ = write!(line, "\t{}", value(c));
            }
            line.push('\n');
            line
        };
        let pct = |x: f64| format!("{:.2}", x * 100.0);
        out.push_str(&row("Most frequent class", &|c| pct(c.baseline)));
        out.push_str(&row(&self.label_a, &|c| {
            format!("{}{}", pct(c.a), if c.a_significant { "*" } else { "" })
        }));
        out.push_str(&row(&self.label_b, &|c| {
            format!("{}{}", pct(c.b), if c.b_significant { "*" } else { "" })
        }));
        out.push_str(&row("p-value", &|c| format!("{:.4}", c.p_value)));
        out
    }
}

fn header(result: &EvalResult, setting: &str) -> String {
    match setting {
        "all" => "all".to_string(),
        s => format!("{s} {}", result.feature_set),
    }
}

/// Compare two sets of per-setting results over identical features and
/// instances.
pub fn compare_results(
    label_a: &str,
    a: &BTreeMap<String, EvalResult>,
    label_b: &str,
    b: &BTreeMap<String, EvalResult>,
    trials: usize,
    seed: u64,
) -> Result<Comparison> {
    let mut columns = Vec::new();
    let mut settings: Vec<&String> = a.keys().filter(|s| b.contains_key(*s)).collect();
    settings.sort_by_key(|s| SETTING_ORDER.iter().position(|o| o == s).unwrap_or(usize::MAX));
    if settings.is_empty() {
        return Err(Error::Invalid("the two runs share no evaluation setting".into()));
    }
    for setting in settings {
        let (ra, rb) = (&a[setting], &b[setting]);
        let (fa, fb) = (ra.feature_ids(), rb.feature_ids());
        if fa != fb {
            let diff: Vec<String> = fa.symmetric_difference(&fb).cloned().collect();
            return Err(Error::Invalid(format!(
                "feature sets differ in setting {setting}: {}",
                diff.join(", ")
            )));
        }
        let aligned = ra.features.iter().zip(&rb.features).all(|(x, y)| {
            x.predictions.len() == y.predictions.len()
                && x
                    .predictions
                    .iter()
                    .zip(&y.predictions)
                    .all(|(p, q)| p.language == q.language && p.gold == q.gold)
        });
        if !aligned {
            return Err(Error::Invalid(format!(
                "setting {setting}: runs evaluated different language instances"
            )));
        }
        let (gold, knn_a, _) = ra.pooled();
        let (_, knn_b, _) = rb.pooled();
        let p_value = significance(&knn_a, &knn_b, &gold, trials, seed)?;
        let (acc_a, acc_b) = (ra.overall.accuracy, rb.overall.accuracy);
        columns.push(ComparisonColumn {
            setting: setting.clone(),
            header: header(ra, setting),
            features: ra.features.len(),
            instances: gold.len(),
            baseline: ra.overall.baseline,
            a: acc_a,
            b: acc_b,
            p_value,
            a_significant: p_value < ALPHA && acc_a > acc_b,
            b_significant: p_value < ALPHA && acc_b > acc_a,
        });
    }
    Ok(Comparison {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        columns,
    })
}

/// Evaluation results stored in a run directory, keyed by snapshot then setting.
pub fn load_run_results(dir: &Path) -> Result<BTreeMap<u64, BTreeMap<String, EvalResult>>> {
    let eval_dir = dir.join("eval");
    let mut out: BTreeMap<u64, BTreeMap<String, EvalResult>> = BTreeMap::new();
    let entries = std::fs::read_dir(&eval_dir)
        .map_err(|e| Error::Invalid(format!("{} is not a run directory: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(stem) = name.strip_suffix(".json") else {
            continue;
        };
        let Some((setting, index)) = stem.rsplit_once('_') else {
            continue;
        };
        let Ok(index) = index.parse::<u64>() else {
            continue;
        };
        let result = EvalResult::from_json(&std::fs::read_to_string(&path)?)?;
        out.entry(index).or_default().insert(setting.to_string(), result);
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("no evaluation results under {}", eval_dir.display())));
    }
    Ok(out)
}

fn final_results(dir: &Path) -> Result<BTreeMap<String, EvalResult>> {
    let mut all = load_run_results(dir)?;
    let last = *all.keys().next_back().expect("non-empty");
    Ok(all.remove(&last).expect("present"))
}

fn run_label(dir: &Path) -> String {
    dir.file_name()
        .and_then(|n| n.to_str())
        .map_or_else(|| dir.display().to_string(), str::to_string)
}

/// Final-snapshot results of two runs side by side.
pub fn compare_runs(dir_a: &Path, dir_b: &Path, trials: usize, seed: u64) -> Result<Comparison> {
    let a = final_results(dir_a)?;
    let b = final_results(dir_b)?;
    compare_results(
        &format!("k-NN ({})", run_label(dir_a)),
        &a,
        &format!("k-NN ({})", run_label(dir_b)),
        &b,
        trials,
        seed,
    )
}

/// Pre-trained (first snapshot) against fine-tuned (last snapshot) results of one run.
pub fn compare_snapshots(dir: &Path, trials: usize, seed: u64) -> Result<Comparison> {
    let mut all = load_run_results(dir)?;
    let first = *all.keys().next().expect("non-empty");
    let last = *all.keys().next_back().expect("non-empty");
    let pre = all.remove(&first).expect("present");
    let fine = if first == last { pre.clone() } else { all.remove(&last).expect("present") };
    compare_results("k-NN (pre-trained)", &pre, "k-NN (fine-tuned)", &fine, trials, seed)
}
