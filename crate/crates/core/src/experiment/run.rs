use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use super::compare::compare_results;
use super::config::{EmbeddingSource, ExperimentConfig};
use crate::analysis::{
    accuracy_trajectory, embedding_distance_matrix, rank_features, render_dendrogram_svg, render_trajectory_svg,
    similarity_trajectory_tsv, upgma, FeatureAccuracyTrajectory,
};
use crate::corpora::{
    downsample_per_language, parse_asjp, parse_conllu, parse_g2p, parse_sigmorphon, SeqPair, TaggedSentence,
    TaskKind, WalsTable,
};
use crate::error::{Error, Result};
use crate::langspace::{EmbeddingStore, SnapshotSeries};
use crate::nn::ParameterSet;
use crate::seq2seq::{train, Seq2SeqModel};
use crate::tagger::{split_dev, train_tagger, write_predictions, TaggerModel};
use crate::typology::{evaluate, EvalOptions, EvalResult, SplitSpec};

/// Marker left in the output directory when a run fails.
pub const FAILED_MARKER: &str = "FAILED";
pub const RESULTS_FILE: &str = "results.json";

#[derive(Clone, Debug)]
pub struct RunReport {
    pub output: PathBuf,
    pub results: Value,
    pub self_check: bool,
}

enum Corpus {
    Pairs(Vec<SeqPair>),
    Tagged {
        train: Vec<TaggedSentence>,
        dev: Vec<TaggedSentence>,
    },
}

impl Corpus {
    fn languages(&self) -> BTreeSet<String> {
        match self {
            Corpus::Pairs(p) => p.iter().map(|x| x.language.clone()).collect(),
            Corpus::Tagged { train, dev } => train.iter().chain(dev).map(|s| s.language.clone()).collect(),
        }
    }
}

struct Trained {
    snapshots: SnapshotSeries,
    loss_tsv: String,
    checkpoint: String,
    params: ParameterSet,
    summary: Value,
    extra_files: Vec<(String, String)>,
}

fn write(out: &Path, rel: &str, text: &str) -> Result<()> {
    let path = out.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn load_wals(config: &ExperimentConfig) -> Result<WalsTable> {
    WalsTable::parse(
        &read(&config.wals.languages)?,
        &read(&config.wals.features)?,
        &read(&config.wals.values)?,
    )
}

fn load_corpus(config: &ExperimentConfig) -> Result<Corpus> {
    let tagged = |sources: &[super::config::DataSource]| -> Result<Vec<TaggedSentence>> {
        let mut out = Vec::new();
        for s in sources {
            let lang = s.language.as_deref().expect("tagging sources carry a language");
            out.extend(parse_conllu(&read(&s.path)?, lang)?);
        }
        Ok(out)
    };
    match config.task {
        TaskKind::Pos => {
            let all = downsample_per_language(&tagged(&config.train)?, config.downsample, config.seed);
            let (train, dev) = if config.dev.is_empty() {
                split_dev(&all, config.tagger.dev_fraction, config.seed)
            } else {
                (all, tagged(&config.dev)?)
            };
            if train.is_empty() {
                return Err(Error::Empty("tagging training corpus".into()));
            }
            if dev.is_empty() {
                return Err(Error::Empty("tagging dev corpus (raise dev_fraction or give data.dev)".into()));
            }
            Ok(Corpus::Tagged { train, dev })
        }
        kind => {
            let mut pairs = Vec::new();
            for s in &config.train {
                let text = read(&s.path)?;
                pairs.extend(match kind {
                    TaskKind::G2p => parse_g2p(&text)?,
                    TaskKind::Reconstruction => parse_asjp(&text)?,
                    _ => parse_sigmorphon(&text, config.default_language.as_deref())?,
                });
            }
            if pairs.is_empty() {
                return Err(Error::Empty("training corpus".into()));
            }
            Ok(Corpus::Pairs(pairs))
        }
    }
}

/// Store for training plus the set of languages that came pretrained.
fn load_embeddings(config: &ExperimentConfig, task_languages: &BTreeSet<String>) -> Result<(EmbeddingStore, BTreeSet<String>)> {
    let langs: Vec<&String> = task_languages.iter().collect();
    let mut store = match &config.embeddings {
        EmbeddingSource::Pretrained { path, .. } => EmbeddingStore::load(&read(path)?)?,
        EmbeddingSource::Random { seed, dim } => EmbeddingStore::init_random(&langs, *dim, *seed)?,
    };
    let pretrained: BTreeSet<String> = store.languages().map(str::to_string).collect();
    let missing: Vec<&String> = langs.into_iter().filter(|l| !pretrained.contains(*l)).collect();
    store.add_random(&missing, config.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    store.set_trainable(config.trainable);
    Ok((store, pretrained))
}

fn train_model(config: &ExperimentConfig, corpus: &Corpus, store: &EmbeddingStore) -> Result<Trained> {
    match corpus {
        Corpus::Pairs(pairs) => {
            let mut model = Seq2SeqModel::for_corpus(config.seq2seq.clone(), pairs, store)?;
            let run = train(&mut model, pairs, config.task, config.iterations, config.snapshot_every)?;
            let mut loss_tsv = String::from("iteration\tloss\n");
            for (i, l) in run.loss_history.iter().enumerate() {
                let _ = writeln!(loss_tsv, "{}\t{l:.17e}", i + 1);
            }
            let accuracy = model.exact_match_accuracy(pairs)?;
            Ok(Trained {
                snapshots: run.snapshots,
                loss_tsv,
                checkpoint: model.params().to_checkpoint(),
                params: model.params().clone(),
                summary: json!({
                    "iterations": run.iterations,
                    "final_loss": run.loss_history.last(),
                    "train_exact_match": accuracy,
                }),
                extra_files: Vec::new(),
            })
        }
        Corpus::Tagged { train, dev } => {
            let all: Vec<TaggedSentence> = train.iter().chain(dev).cloned().collect();
            let mut model = TaggerModel::for_corpus(config.tagger.clone(), &all, store)?;
            let run = train_tagger(&mut model, train, dev)?;
            let mut loss_tsv = String::from("epoch\tloss\tdev_accuracy\n");
            for (e, (l, a)) in run.train_loss.iter().zip(&run.dev_accuracy).enumerate() {
                let _ = writeln!(loss_tsv, "{}\t{l:.17e}\t{a:.6}", e + 1);
            }
            let predictions = dev
                .iter()
                .map(|s| Ok((s.tokens.clone(), model.tag_sentence(&s.tokens, &s.language)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Trained {
                snapshots: run.snapshots,
                loss_tsv,
                checkpoint: model.params().to_checkpoint(),
                params: model.params().clone(),
                summary: json!({
                    "epochs": run.epochs_run,
                    "best_epoch": run.best_epoch,
                    "dev_accuracy": run.dev_accuracy,
                    "final_loss": run.train_loss.last(),
                }),
                extra_files: vec![("predictions.tsv".into(), write_predictions(&predictions))],
            })
        }
    }
}

fn snapshot_name(task: TaskKind, index: u64) -> String {
    match task {
        TaskKind::Pos => format!("snapshots/emb_epoch_{index}.txt"),
        _ => format!("snapshots/emb_{index}.txt"),
    }
}

fn settings(config: &ExperimentConfig) -> Vec<(&'static str, SplitSpec)> {
    let mut out = vec![(
        "random",
        SplitSpec {
            folds: config.folds,
            ..SplitSpec::random(config.folds, config.eval_seed)
        },
    )];
    if let Some(family) = &config.unseen_family {
        out.push(("unseen", SplitSpec::unseen_family(family, config.eval_seed)));
        out.push(("all", SplitSpec::all_features(family, config.eval_seed)));
    }
    out
}

fn list_files(root: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if let Ok(rel) = path.strip_prefix(root) {
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}

fn check(checks: &mut Vec<Value>, name: &str, passed: bool) {
    checks.push(json!({"check": name, "passed": passed}));
}

fn self_check(
    config: &ExperimentConfig,
    trained: &Trained,
    initial: &EmbeddingStore,
    evaluations: &BTreeMap<u64, BTreeMap<String, EvalResult>>,
) -> Vec<Value> {
    let mut checks = Vec::new();
    let expected = match config.task {
        TaskKind::Pos => trained.summary["epochs"].as_u64().unwrap_or(0) + 1,
        _ => config.iterations / config.snapshot_every + 1,
    };
    check(&mut checks, "snapshot_count", trained.snapshots.len() as u64 == expected);
    check(
        &mut checks,
        "snapshot_zero_is_initial_state",
        trained.snapshots.first().is_some_and(|(i, s)| i == 0 && s == initial),
    );
    check(&mut checks, "parameters_finite", trained.params.all_finite());
    let mut reloaded = trained.params.clone();
    let round_trip = reloaded.load_checkpoint(&trained.checkpoint).is_ok() && reloaded.to_checkpoint() == trained.checkpoint;
    check(&mut checks, "checkpoint_round_trip", round_trip);
    let in_range = evaluations.values().flat_map(BTreeMap::values).all(|r| {
        r.features
            .iter()
            .all(|f| (0.0..=1.0).contains(&f.accuracy) && (0.0..=1.0).contains(&f.baseline))
    });
    check(&mut checks, "accuracies_in_unit_interval", in_range);
    let means_consistent = evaluations.values().flat_map(BTreeMap::values).all(|r| {
        r.category_means.iter().all(|(cat, m)| {
            let accs: Vec<f64> = r
                .features
                .iter()
                .filter(|f| f.category.as_str() == cat)
                .map(|f| f.accuracy)
                .collect();
            !accs.is_empty() && (m.accuracy - accs.iter().sum::<f64>() / accs.len() as f64).abs() < 1e-12
        })
    });
    check(&mut checks, "category_means_consistent", means_consistent);
    checks
}

fn execute(config: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    let wals = load_wals(config)?;
    let corpus = load_corpus(config)?;
    let task_languages = corpus.languages();
    let (store, pretrained) = load_embeddings(config, &task_languages)?;
    let eval_languages: BTreeSet<String> = task_languages.intersection(&pretrained).cloned().collect();
    if eval_languages.len() < 2 {
        return Err(Error::Invalid(format!(
            "only {} task language(s) have pretrained embeddings; evaluation needs 2",
            eval_languages.len()
        )));
    }
    for (a, b) in &config.similarity_pairs {
        for l in [a, b] {
            if !store.contains(l) {
                return Err(Error::unknown("language in similarity_pairs", l.as_str()));
            }
        }
    }

    write(out, "config", &config.to_text())?;
    let trained = train_model(config, &corpus, &store)?;
    write(out, "loss.tsv", &trained.loss_tsv)?;
    write(out, "checkpoint", &trained.checkpoint)?;
    for (name, text) in &trained.extra_files {
        write(out, name, text)?;
    }
    for (i, s) in trained.snapshots.iter() {
        write(out, &snapshot_name(config.task, i), &s.save())?;
    }

    let options = EvalOptions {
        k: config.k,
        metric: config.metric,
        exclude_uniform: config.exclude_uniform,
        trials: config.trials,
        languages: Some(eval_languages.clone()),
    };
    let settings = settings(config);
    let mut evaluations: BTreeMap<u64, BTreeMap<String, EvalResult>> = BTreeMap::new();
    for (i, snapshot) in trained.snapshots.iter() {
        for (name, spec) in &settings {
            let result = evaluate(snapshot, &wals, config.category, spec, &options)?;
            write(out, &format!("eval/{name}_{i}.tsv"), &result.to_tsv())?;
            write(out, &format!("eval/{name}_{i}.json"), &result.to_json()?)?;
            evaluations.entry(i).or_default().insert(name.to_string(), result);
        }
    }
    let (first_i, first_store) = trained.snapshots.first().expect("snapshot 0 recorded");
    let (last_i, last_store) = trained.snapshots.last().expect("snapshot recorded");
    let pre = &evaluations[&first_i];
    let fine = &evaluations[&last_i];

    let mut trajectories: Vec<FeatureAccuracyTrajectory> = Vec::new();
    for feature in &pre["random"].features {
        let t = accuracy_trajectory(&trained.snapshots, &wals, &feature.feature_id, &settings[0].1, &options)?;
        write(out, &format!("trajectories/feature_{}.tsv", t.feature_id), &t.to_tsv())?;
        trajectories.push(t);
    }
    write(out, "plots/trajectories.svg", &render_trajectory_svg(&trajectories))?;
    if !config.similarity_pairs.is_empty() {
        write(
            out,
            "trajectories/similarity.tsv",
            &similarity_trajectory_tsv(&trained.snapshots, &config.similarity_pairs)?,
        )?;
    }

    let langs: Vec<&String> = eval_languages.iter().collect();
    for (label, s) in [("pretrained", first_store), ("finetuned", last_store)] {
        let tree = upgma(&embedding_distance_matrix(s, &langs)?)?;
        write(out, &format!("plots/dendrogram_{label}.svg"), &render_dendrogram_svg(&tree))?;
        write(out, &format!("dendrogram_{label}.nwk"), &format!("{}\n", tree.to_newick()))?;
    }

    let final_random = &fine["random"];
    let n = config.rank.min(final_random.features.len() / 2);
    if n > 0 {
        let (top, bottom) = rank_features(final_random, n)?;
        let mut text = String::from("group\tfeature_id\tchapter\taccuracy\n");
        for (group, list) in [("top", &top), ("bottom", &bottom)] {
            for r in list {
                let _ = writeln!(text, "{group}\t{r}");
            }
        }
        write(out, "ranking.tsv", &text)?;
    }

    let comparison = compare_results(
        "k-NN (pre-trained)",
        pre,
        "k-NN (fine-tuned)",
        fine,
        config.trials,
        config.eval_seed,
    )?;
    write(out, "comparison.tsv", &comparison.to_table())?;

    let checks = self_check(config, &trained, &store, &evaluations);
    let passed = checks.iter().all(|c| c["passed"] == json!(true));

    let files = list_files(out)?;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "task": config.task,
        "seeds": {
            "run": config.seed,
            "evaluation": config.eval_seed,
            "embeddings": match &config.embeddings {
                EmbeddingSource::Random { seed, .. } => json!(seed),
                EmbeddingSource::Pretrained { .. } => Value::Null,
            },
        },
        "config": config.to_text(),
        "files": files,
    });
    write(out, "manifest.json", &serde_json::to_string_pretty(&manifest)?)?;

    let mut settings_json = serde_json::Map::new();
    for c in &comparison.columns {
        settings_json.insert(
            c.setting.clone(),
            json!({
                "header": c.header,
                "features": c.features,
                "baseline": fine[&c.setting].overall.baseline,
                "pretrained": pre[&c.setting].overall.accuracy,
                "finetuned": fine[&c.setting].overall.accuracy,
                "p_value": c.p_value,
                "category_means": fine[&c.setting].category_means,
            }),
        );
    }
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let results = json!({
        "timestamp": timestamp,
        "task": config.task,
        "languages": {
            "task": task_languages.len(),
            "pretrained": pretrained.len(),
            "evaluated": eval_languages,
        },
        "snapshots": trained.snapshots.iterations(),
        "mean_displacement": trained.snapshots.mean_displacement()?,
        "training": trained.summary,
        "settings": settings_json,
        "self_check": {"passed": passed, "checks": checks},
    });
    let tmp = out.join(format!("{RESULTS_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_string_pretty(&results)?)?;
    fs::rename(&tmp, out.join(RESULTS_FILE))?;
    Ok(RunReport {
        output: out.to_path_buf(),
        results,
        self_check: passed,
    })
}

/// Run one experiment end to end. On failure the output directory holds a
/// `FAILED` marker with the error and no `results.json`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let out = config.output.clone();
    fs::create_dir_all(&out)?;
    for stale in [FAILED_MARKER, RESULTS_FILE] {
        let p = out.join(stale);
        if p.exists() {
            fs::remove_file(p)?;
        }
    }
    match execute(config, &out) {
        Ok(report) => Ok(report),
        Err(e) => {
            let _ = fs::remove_file(out.join(RESULTS_FILE));
            let _ = fs::remove_file(out.join(format!("{RESULTS_FILE}.tmp")));
            let _ = fs::write(out.join(FAILED_MARKER), format!("{e}\n"));
            Err(e)
        }
    }
}

/// Snapshots saved under `<run>/snapshots` (or a snapshots directory itself),
/// ordered by iteration or epoch.
pub fn load_snapshots(dir: &Path) -> Result<SnapshotSeries> {
    let dir = if dir.join("snapshots").is_dir() { dir.join("snapshots") } else { dir.to_path_buf() };
    let mut found = BTreeMap::new();
    for entry in fs::read_dir(&dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let index = name
            .strip_suffix(".txt")
            .and_then(|s| s.strip_prefix("emb_"))
            .map(|s| s.strip_prefix("epoch_").unwrap_or(s))
            .and_then(|s| s.parse::<u64>().ok());
        if let Some(i) = index {
            found.insert(i, path);
        }
    }
    if found.is_empty() {
        return Err(Error::Empty(format!("no embedding snapshots in {}", dir.display())));
    }
    let mut series = SnapshotSeries::new();
    for (i, path) in found {
        series.record(i, &EmbeddingStore::load(&read(&path)?)?)?;
    }
    Ok(series)
}
