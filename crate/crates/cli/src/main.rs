use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use langtype::analysis::{
    accuracy_trajectory, embedding_distance_matrix, render_dendrogram_svg, similarity_trajectory_tsv, upgma,
};
use langtype::corpora::WalsTable;
use langtype::experiment::{compare_runs, compare_snapshots, load_snapshots, run_experiment, ConfigEntries, ExperimentConfig};
use langtype::langspace::EmbeddingStore;
use langtype::typology::{evaluate, parse_feature_set, EvalOptions, Metric, SplitMode, SplitSpec};
use langtype::{Error, Result};

/// Fine-tune language embeddings on character-level tasks and probe them for
/// typological features.
#[derive(Parser)]
#[command(name = "langtype", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment from a config file.
    Train(TrainArgs),
    /// Predict WALS features from an embedding file.
    EvalWals(EvalArgs),
    #[command(subcommand)]
    Analyze(Analyze),
    /// Compare two runs, or the first and last snapshot of one run.
    Compare(CompareArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    snapshot_every: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    category: Option<String>,
    #[arg(long)]
    unseen_family: Option<String>,
    /// Output directory, overriding the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct WalsArgs {
    /// Directory with languages.tsv, features.tsv and values.tsv.
    #[arg(long)]
    wals: PathBuf,
}

impl WalsArgs {
    fn load(&self) -> Result<WalsTable> {
        WalsTable::parse(
            &read(&self.wals.join("languages.tsv"))?,
            &read(&self.wals.join("features.tsv"))?,
            &read(&self.wals.join("values.tsv"))?,
        )
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[command(flatten)]
    wals: WalsArgs,
    #[arg(long, default_value = "all")]
    category: String,
    /// random, unseen or all.
    #[arg(long, default_value = "random")]
    mode: String,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value = "euclidean")]
    metric: String,
    #[arg(long)]
    unseen_family: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long)]
    exclude_uniform: bool,
    /// Write the full JSON result here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Analyze {
    /// Cluster languages by embedding similarity.
    Upgma {
        #[arg(long)]
        embeddings: PathBuf,
        /// Comma-separated language codes; all languages when omitted.
        #[arg(long)]
        languages: Option<String>,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        newick: Option<PathBuf>,
    },
    /// Accuracy or similarity over the snapshots of a run.
    Trajectory {
        /// Run directory or snapshot directory.
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long, requires = "wals")]
        feature: Option<String>,
        #[arg(long)]
        wals: Option<PathBuf>,
        /// Language pair `a~b`; may be repeated.
        #[arg(long)]
        pair: Vec<String>,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct CompareArgs {
    run_a: PathBuf,
    run_b: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn config_error(field: &str, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => Error::config(field, other.to_string()),
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", args.config.display())))?;
    let mut entries = ConfigEntries::parse(&text)?;
    let overrides = [
        ("task.seed", args.seed.map(|v| v.to_string())),
        ("training.snapshot_every", args.snapshot_every.map(|v| v.to_string())),
        ("training.iterations", args.iterations.map(|v| v.to_string())),
        ("evaluation.folds", args.folds.map(|v| v.to_string())),
        ("evaluation.k", args.k.map(|v| v.to_string())),
        ("evaluation.category", args.category),
        ("evaluation.unseen_family", args.unseen_family),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            entries.set(key, v);
        }
    }
    if let Some(out) = args.output {
        let abs = if out.is_absolute() { out } else { std::env::current_dir()?.join(out) };
        entries.set("output.dir", abs.to_string_lossy());
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    let config = ExperimentConfig::from_entries(&entries, base)?;
    let report = run_experiment(&config)?;
    println!("run written to {}", report.output.display());
    if let Some(settings) = report.results["settings"].as_object() {
        for (name, s) in settings {
            println!(
                "{name}: baseline {:.4}  pre-trained {:.4}  fine-tuned {:.4}  p={:.4}",
                s["baseline"].as_f64().unwrap_or(f64::NAN),
                s["pretrained"].as_f64().unwrap_or(f64::NAN),
                s["finetuned"].as_f64().unwrap_or(f64::NAN),
                s["p_value"].as_f64().unwrap_or(f64::NAN),
            );
        }
    }
    if !report.self_check {
        return Err(Error::Invalid("self-check failed; see results.json".into()));
    }
    Ok(())
}

fn eval_wals(args: EvalArgs) -> Result<()> {
    let store = EmbeddingStore::load(&read(&args.embeddings)?)?;
    let wals = args.wals.load()?;
    let category = parse_feature_set(&args.category).map_err(|e| config_error("category", e))?;
    let mode: SplitMode = args.mode.parse().map_err(|e| config_error("mode", e))?;
    let metric: Metric = args.metric.parse().map_err(|e| config_error("metric", e))?;
    let split = SplitSpec {
        mode,
        folds: args.folds,
        family: args.unseen_family,
        seed: args.seed,
    };
    split.validate().map_err(|e| config_error("unseen-family", e))?;
    let options = EvalOptions {
        k: args.k,
        metric,
        exclude_uniform: args.exclude_uniform,
        trials: args.trials,
        languages: None,
    };
    let result = evaluate(&store, &wals, category, &split, &options)?;
    print!("{}", result.to_tsv());
    for (cat, m) in &result.category_means {
        eprintln!("{cat}: k-NN {:.4}  baseline {:.4}  ({} features)", m.accuracy, m.baseline, m.features);
    }
    eprintln!("p-value vs baseline: {:.4}", result.p_value);
    if let Some(path) = args.json {
        fs::write(path, result.to_json()?)?;
    }
    Ok(())
}

fn analyze(cmd: Analyze) -> Result<()> {
    match cmd {
        Analyze::Upgma {
            embeddings,
            languages,
            svg,
            newick,
        } => {
            let store = EmbeddingStore::load(&read(&embeddings)?)?;
            let langs: Vec<String> = match languages {
                Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
                None => store.languages().map(str::to_string).collect(),
            };
            let tree = upgma(&embedding_distance_matrix(&store, &langs)?)?;
            let nwk = tree.to_newick();
            println!("{nwk}");
            if let Some(p) = svg {
                fs::write(p, render_dendrogram_svg(&tree))?;
            }
            if let Some(p) = newick {
                fs::write(p, format!("{nwk}\n"))?;
            }
        }
        Analyze::Trajectory {
            snapshots,
            feature,
            wals,
            pair,
            folds,
            k,
            seed,
        } => {
            let series = load_snapshots(&snapshots)?;
            if feature.is_none() && pair.is_empty() {
                return Err(Error::config("feature", "give --feature or at least one --pair"));
            }
            if let (Some(f), Some(dir)) = (feature, wals) {
                let table = WalsArgs { wals: dir }.load()?;
                let options = EvalOptions {
                    k,
                    ..EvalOptions::default()
                };
                let t = accuracy_trajectory(&series, &table, &f, &SplitSpec::random(folds, seed), &options)?;
                print!("{}", t.to_tsv());
            }
            if !pair.is_empty() {
                let pairs = pair
                    .iter()
                    .map(|p| {
                        p.split_once('~')
                            .map(|(a, b)| (a.to_string(), b.to_string()))
                            .ok_or_else(|| Error::config("pair", format!("`{p}` is not a~b")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                print!("{}", similarity_trajectory_tsv(&series, &pairs)?);
            }
        }
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let comparison = match &args.run_b {
        Some(b) => compare_runs(&args.run_a, b, args.trials, args.seed)?,
        None => compare_snapshots(&args.run_a, args.trials, args.seed)?,
    };
    print!("{}", comparison.to_table());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(a) => train(a),
        Command::EvalWals(a) => eval_wals(a),
        Command::Analyze(a) => analyze(a),
        Command::Compare(a) => compare(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
