//! `neuroaffect`: batch driver for synthetic data generation, training,
//! model comparison, category ablation, interpretability and report rendering.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use neuroaffect::data::{
    categorize_features, synth_generate, synth_rules, Category, CategoryRule, FeatureTable,
    SynthConfig,
};
use neuroaffect::experiments::{
    run_ablation, run_comparison, run_interpretability, run_single, write_atomic, DatasetInfo,
    ExperimentConfig, Fitted, ModelKind, RunReport,
};
use neuroaffect::nn::Checkpoint;

/// Environment variable naming the directory searched for datasets.
const DATA_DIR_ENV: &str = "NEUROAFFECT_DATA_DIR";
const DEFAULT_DATASET: &str = "emotions.csv";

#[derive(Parser)]
#[command(
    name = "neuroaffect",
    version,
    about = "EEG emotion classification laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic feature table and its category rules.
    Synth(SynthArgs),
    /// Train one model on a stratified hold-out split.
    Train(TrainArgs),
    /// Cross-validate the model roster and test for differences.
    Compare(CompareArgs),
    /// Retrain without each feature category in turn.
    Ablate(AblateArgs),
    /// Consensus importance, Shapley attribution and label correlations.
    Explain(ExplainArgs),
    /// Render the tables of an existing run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    n_per_class: usize,
    #[arg(long, default_value_t = 120)]
    dims: usize,
    /// Category carrying the class signal.
    #[arg(long, default_value = "covariance")]
    planted: Category,
    /// Distance between adjacent class means on planted features.
    #[arg(long, default_value_t = 5.0)]
    separation: f64,
    /// Random seed (required).
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; the category rules go next to it as `<stem>.rules.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Common {
    /// Random seed (required). Overrides `seed` in the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV. Defaults to `$NEUROAFFECT_DATA_DIR/emotions.csv`; relative
    /// paths missing from the working directory are looked up there too.
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON list of feature category rules. Defaults to `<stem>.rules.json`
    /// beside the dataset when present, else the built-in column-prefix rules.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Desk-scale architecture and reduced epoch budget.
    #[arg(long)]
    fast: bool,
    /// Run directory to write.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "enhanced")]
    model: ModelKind,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated roster, e.g. `rf,et,mlp`.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    common: Common,
    /// Model whose predictions are attributed.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Number of top-ranked features to print.
    #[arg(long, default_value_t = 15)]
    top_k: usize,
    /// Number of test rows to explain.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding `report.json`.
    run_dir: PathBuf,
    #[arg(long, default_value_t = 15)]
    top_k: usize,
    /// Print the report JSON instead of the text tables.
    #[arg(long)]
    json: bool,
}

fn require_seed(seed: Option<u64>) -> Result<u64> {
    seed.context("--seed is required: every run must be reproducible from an explicit seed")
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

fn resolve_dataset(arg: Option<&Path>) -> Result<PathBuf> {
    match (arg, data_dir()) {
        (Some(p), Some(root)) if p.is_relative() && !p.exists() && root.join(p).exists() => {
            Ok(root.join(p))
        }
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(root)) => Ok(root.join(DEFAULT_DATASET)),
        (None, None) => bail!("no dataset given: pass --data or set {DATA_DIR_ENV}"),
    }
}

fn rules_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("rules.json")
}

struct Loaded {
    table: FeatureTable,
    rules: Vec<CategoryRule>,
    source: String,
}

fn load_dataset(common: &Common) -> Result<Loaded> {
    let path = resolve_dataset(common.data.as_deref())?;
    if !path.exists() {
        bail!("dataset {} not found", path.display());
    }
    let table = FeatureTable::load_csv(&path)?;
    let rules_file = common
        .rules
        .clone()
        .or_else(|| Some(rules_path(&path)).filter(|p| p.exists()));
    let rules = match rules_file {
        Some(p) => {
            let text =
                std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing category rules {}", p.display()))?
        }
        None => CategoryRule::default_rules(),
    };
    log::info!(
        "loaded {} ({} rows x {} features)",
        path.display(),
        table.n_rows(),
        table.n_features()
    );
    Ok(Loaded {
        table,
        rules,
        source: path.display().to_string(),
    })
}

fn experiment_config(common: &Common) -> Result<ExperimentConfig> {
    let seed = require_seed(common.seed)?;
    let mut cfg = match &common.config {
        Some(p) => config::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.seed = seed;
    cfg.fast |= common.fast;
    Ok(cfg)
}

fn finish(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate().context("invalid configuration")?;
    Ok(())
}

fn write_run(report: &RunReport, dir: &Path, top_k: usize) -> Result<()> {
    let files = report.write_dir(dir)?;
    print!("{}", report.render_text(top_k));
    println!("\nwrote {} files to {}", files.len(), dir.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let seed = require_seed(args.seed)?;
    let (table, map) = synth_generate(&SynthConfig {
        n_per_class: args.n_per_class,
        dims: args.dims,
        planted: args.planted,
        separation: args.separation,
        seed,
    })?;
    let mut csv = Vec::new();
    table.write_csv_to(&mut csv)?;
    let rules = serde_json::to_vec_pretty(&synth_rules())?;
    write_atomic(&args.out, &csv)?;
    write_atomic(&rules_path(&args.out), &rules)?;
    let planted = map.indices_of(args.planted).len();
    println!(
        "wrote {} ({} rows x {} features, {} planted {} features) and {}",
        args.out.display(),
        table.n_rows(),
        table.n_features(),
        planted,
        args.planted,
        rules_path(&args.out).display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = experiment_config(&args.common)?;
    finish(&cfg)?;
    let data = load_dataset(&args.common)?;
    let (section, fitted) = run_single(&data.table, args.model, &cfg)?;
    let (name, bytes) = match &fitted {
        Fitted::Net(o) => {
            let ckpt = Checkpoint {
                model: o.model.clone(),
                seed: section.seed,
                normalizer: Some(o.normalizer.clone()),
            };
            let mut buf = Vec::new();
            ckpt.write_to(&mut buf)?;
            ("model.ckpt", buf)
        }
        Fitted::Forest(f) => ("forest.json", serde_json::to_vec(f)?),
    };
    let mut report = RunReport::new(
        "train",
        cfg,
        DatasetInfo::describe(&data.table, data.source),
    );
    report.single = Some(section);
    write_run(&report, &args.common.out_dir, 15)?;
    write_atomic(&args.common.out_dir.join(name), &bytes)?;
    println!("checkpoint {}", args.common.out_dir.join(name).display());
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let mut cfg = experiment_config(&args.common)?;
    if let Some(m) = args.models {
        cfg.roster = m;
    }
    if let Some(f) = args.folds {
        cfg.folds = f;
    }
    finish(&cfg)?;
    let data = load_dataset(&args.common)?;
    let section = run_comparison(&data.table, &cfg)?;
    let mut report = RunReport::new(
        "compare",
        cfg,
        DatasetInfo::describe(&data.table, data.source),
    );
    report.comparison = Some(section);
    write_run(&report, &args.common.out_dir, 15)
}

fn ablate(args: AblateArgs) -> Result<()> {
    let mut cfg = experiment_config(&args.common)?;
    if let Some(m) = args.model {
        cfg.ablation_model = m;
    }
    if let Some(r) = args.runs {
        cfg.ablation_runs = r;
    }
    finish(&cfg)?;
    let data = load_dataset(&args.common)?;
    let map = categorize_features(data.table.feature_names(), &data.rules);
    let section = run_ablation(&data.table, &map, &cfg)?;
    let mut report = RunReport::new(
        "ablate",
        cfg,
        DatasetInfo::describe(&data.table, data.source),
    );
    report.ablation = Some(section);
    write_run(&report, &args.common.out_dir, 15)
}

fn explain(args: ExplainArgs) -> Result<()> {
    let mut cfg = experiment_config(&args.common)?;
    if let Some(m) = args.model {
        cfg.shap_model = m;
    }
    if let Some(s) = args.samples {
        cfg.shap_samples = s;
    }
    finish(&cfg)?;
    let data = load_dataset(&args.common)?;
    let (single, fitted) = run_single(&data.table, cfg.shap_model, &cfg)?;
    let split = cfg.holdout_split(&data.table)?;
    let section = run_interpretability(&data.table, &split, &fitted, cfg.shap_model, &cfg)?;
    let mut report = RunReport::new(
        "explain",
        cfg,
        DatasetInfo::describe(&data.table, data.source),
    );
    report.single = Some(single);
    report.interpretability = Some(section);
    write_run(&report, &args.common.out_dir, args.top_k)
}

fn report(args: ReportArgs) -> Result<()> {
    let path = args.run_dir.join("report.json");
    if !path.exists() {
        bail!(
            "{} not found: run train, compare, ablate or explain with --out-dir {} first",
            path.display(),
            args.run_dir.display()
        );
    }
    let report = RunReport::load(&path)?;
    if args.json {
        print!("{}", report.to_json()?);
    } else {
        print!("{}", report.render_text(args.top_k));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Compare(a) => compare(a),
        Command::Ablate(a) => ablate(a),
        Command::Explain(a) => explain(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
