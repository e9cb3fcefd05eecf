//! `pvfault` command-line interface.
//!
//! Each subcommand reads and writes files so stages can be rerun from any
//! intermediate artifact:
//!
//! ```text
//! pvfault synth    --out raw/
//! pvfault prepare  --input raw/ --out prepared/
//! pvfault train    --input prepared/signatures.csv --out model/
//! pvfault evaluate --bundle model/bundle.json --input prepared/signatures.csv --out eval/
//! pvfault explain  --bundle model/bundle.json --input prepared/signatures.csv --row-index 0 --out eval/
//! ```

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pvfault::canonical_json;
use pvfault::dsp::FilterSpec;
use pvfault::forest::{ForestParams, MaxFeatures, SearchSpace};
use pvfault::ingest::{label_from_file_name, load_gpvs_csv, ColumnMap, LoadOptions};
use pvfault::pipeline::{self, ModelBundle, SearchConfig, TrainConfig};
use pvfault::signatures::SignatureTable;
use pvfault::synth::{self, SynthConfig};
use pvfault::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "pvfault", version, about = "Signature-based PV grid fault identification")]
struct Cli {
    /// Seed for every random stage.
    #[arg(long, global = true, env = "PVFAULT_SEED", default_value_t = 42)]
    seed: u64,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true, env = "PVFAULT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic F0M..F7M records.
    Synth(SynthArgs),
    /// Filter raw records and extract per-cycle signatures.
    Prepare(PrepareArgs),
    /// Fit the classifier and write the model bundle.
    Train(TrainArgs),
    /// Score the bundle on its held-out split.
    Evaluate(EvaluateArgs),
    /// Explain individual predictions.
    Explain(ExplainArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, env = "PVFAULT_OUT")]
    out: PathBuf,
    /// Cycles per operating state.
    #[arg(long, env = "PVFAULT_CYCLES", default_value_t = 300)]
    cycles: usize,
    /// Multiplier on the default per-channel noise.
    #[arg(long, env = "PVFAULT_NOISE_SCALE", default_value_t = 1.0)]
    noise_scale: f64,
}

#[derive(Args, Clone)]
struct FilterArgs {
    #[arg(long, env = "PVFAULT_FILTER_ORDER", default_value_t = 4)]
    filter_order: usize,
    #[arg(long, env = "PVFAULT_FILTER_CUTOFF_HZ", default_value_t = 500.0)]
    filter_cutoff_hz: f64,
    #[arg(long, env = "PVFAULT_FILTER_EPSILON", default_value_t = 1.0)]
    filter_epsilon: f64,
    #[arg(long, env = "PVFAULT_SAMPLE_RATE_HZ", default_value_t = 10_000.0)]
    sample_rate_hz: f64,
    /// Samples per signature window.
    #[arg(long, env = "PVFAULT_BATCH_LEN", default_value_t = 200)]
    batch_len: usize,
}

impl FilterArgs {
    fn spec(&self) -> FilterSpec {
        FilterSpec {
            order: self.filter_order,
            cutoff_hz: self.filter_cutoff_hz,
            epsilon: self.filter_epsilon,
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

#[derive(Args)]
struct PrepareArgs {
    /// CSV files, or directories whose `*.csv` files are all used.
    #[arg(long, env = "PVFAULT_INPUT", num_args = 1.., value_delimiter = ',', required = true)]
    input: Vec<PathBuf>,
    /// Class label per input file; by default parsed from names like `F3M.csv`.
    #[arg(long, env = "PVFAULT_LABELS", value_delimiter = ',')]
    labels: Vec<usize>,
    #[arg(long, env = "PVFAULT_OUT")]
    out: PathBuf,
    /// JSON column map overriding the default headers.
    #[arg(long, env = "PVFAULT_COLUMNS")]
    columns: Option<PathBuf>,
    /// Channel shown in the raw-versus-filtered preview.
    #[arg(long, env = "PVFAULT_PREVIEW_SIGNAL", default_value = "Ipv")]
    preview_signal: String,
    #[command(flatten)]
    filter: FilterArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Signature CSV written by `prepare`.
    #[arg(long, env = "PVFAULT_INPUT")]
    input: PathBuf,
    #[arg(long, env = "PVFAULT_OUT")]
    out: PathBuf,
    #[arg(long, env = "PVFAULT_TRAIN_FRACTION", default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, env = "PVFAULT_TOP_K", default_value_t = 30)]
    top_k: usize,
    #[arg(long, env = "PVFAULT_TREES", default_value_t = 18)]
    trees: usize,
    #[arg(long, env = "PVFAULT_RULE", default_value = "log2")]
    rule: MaxFeatures,
    /// Pick trees and rule by randomized cross-validated search.
    #[arg(long, env = "PVFAULT_SEARCH")]
    search: bool,
    #[arg(long, env = "PVFAULT_FOLDS", default_value_t = 5)]
    folds: usize,
    #[arg(long, env = "PVFAULT_CANDIDATES", default_value_t = 30)]
    candidates: usize,
    #[arg(long, env = "PVFAULT_MIN_TREES", default_value_t = 2)]
    min_trees: usize,
    #[arg(long, env = "PVFAULT_MAX_TREES", default_value_t = 40)]
    max_trees: usize,
    /// Filter and window settings used by `prepare`, recorded in the bundle.
    #[command(flatten)]
    filter: FilterArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, env = "PVFAULT_BUNDLE")]
    bundle: PathBuf,
    /// The signature CSV the bundle was trained on.
    #[arg(long, env = "PVFAULT_INPUT")]
    input: PathBuf,
    #[arg(long, env = "PVFAULT_OUT")]
    out: PathBuf,
    /// Also score a k-nearest-neighbour baseline with this k.
    #[arg(long, env = "PVFAULT_BASELINE_KNN")]
    baseline_knn: Option<usize>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long, env = "PVFAULT_BUNDLE")]
    bundle: PathBuf,
    #[arg(long, env = "PVFAULT_INPUT")]
    input: PathBuf,
    #[arg(long, env = "PVFAULT_OUT")]
    out: PathBuf,
    /// Signature-table row to explain.
    #[arg(long, env = "PVFAULT_ROW_INDEX", conflicts_with = "all", required_unless_present = "all")]
    row_index: Option<usize>,
    /// Explain every row.
    #[arg(long)]
    all: bool,
    /// Features compared against the global ranking.
    #[arg(long, env = "PVFAULT_TOP_K", default_value_t = 20)]
    top_k: usize,
}

type Result<T> = std::result::Result<T, Error>;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_synth(args: &SynthArgs, seed: u64) -> Result<()> {
    let mut config = SynthConfig {
        n_cycles: args.cycles,
        seed,
        ..SynthConfig::default()
    };
    if !(args.noise_scale >= 0.0 && args.noise_scale.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise scale must be non-negative, got {}", args.noise_scale)));
    }
    config.noise_std.iter_mut().for_each(|s| *s *= args.noise_scale);
    let paths = synth::write_all(&config, &args.out, &ColumnMap::default())?;
    canonical_json::write_file(&args.out.join("synth_config.json"), &config)?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(files)
}

fn run_prepare(args: &PrepareArgs) -> Result<()> {
    let files = expand_inputs(&args.input)?;
    let labels: Vec<usize> = if args.labels.is_empty() {
        files
            .iter()
            .map(|f| {
                label_from_file_name(f).ok_or_else(|| {
                    Error::InvalidConfig(format!("cannot infer a label from {}; pass --labels", f.display()))
                })
            })
            .collect::<Result<_>>()?
    } else if args.labels.len() == files.len() {
        args.labels.clone()
    } else {
        return Err(Error::InvalidConfig(format!(
            "{} labels given for {} input files",
            args.labels.len(),
            files.len()
        )));
    };
    let columns = match &args.columns {
        Some(p) => canonical_json::read_file(p)?,
        None => ColumnMap::default(),
    };
    let options = LoadOptions {
        columns,
        sample_period_s: 1.0 / args.filter.sample_rate_hz,
    };
    let tables = files
        .iter()
        .zip(&labels)
        .map(|(f, &l)| load_gpvs_csv(f, l, &options))
        .collect::<Result<Vec<_>>>()?;
    let (signatures, report, previews) =
        pipeline::prepare(&tables, &args.filter.spec(), args.filter.batch_len, &args.preview_signal)?;
    create_dir(&args.out)?;
    signatures.save(&args.out.join("signatures.csv"))?;
    canonical_json::write_file(&args.out.join("prepare_report.json"), &report)?;
    canonical_json::write_file(&args.out.join("filter_preview.json"), &previews)?;
    print!("{}", report.to_text());
    Ok(())
}

/// `SOURCE_DATE_EPOCH`, if set, stamps the bundle; otherwise no timestamp is
/// recorded so repeated runs are byte-identical.
fn creation_time() -> Result<Option<u64>> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("SOURCE_DATE_EPOCH {v:?} is not an integer"))),
        Err(_) => Ok(None),
    }
}

fn run_train(args: &TrainArgs, seed: u64) -> Result<()> {
    pipeline::check_top_k(args.top_k)?;
    let table = SignatureTable::load(&args.input)?;
    let forest = ForestParams {
        n_trees: args.trees,
        max_features: args.rule,
        ..ForestParams::tuned()
    };
    let search = args.search.then(|| SearchConfig {
        space: SearchSpace {
            min_trees: args.min_trees,
            max_trees: args.max_trees,
            ..SearchSpace::default()
        },
        n_candidates: args.candidates,
        folds: args.folds,
    });
    let config = TrainConfig {
        seed,
        train_fraction: args.train_fraction,
        top_k: args.top_k,
        forest,
        search,
        created_unix: creation_time()?,
        ..TrainConfig::default()
    };
    let filter = args.filter.spec();
    filter.validate()?;
    let art = pipeline::train(&table, &filter, args.filter.batch_len, &config)?;
    create_dir(&args.out)?;
    canonical_json::write_file(&args.out.join("bundle.json"), &art.bundle)?;
    canonical_json::write_file(&args.out.join("global_summary.json"), &art.global)?;
    canonical_json::write_file(&args.out.join("feature_importance.json"), &art.importance)?;
    if let Some(cv) = &art.cv {
        canonical_json::write_file(&args.out.join("cv_result.json"), cv)?;
        if cv.space_exhausted {
            eprintln!(
                "note: search space has only {} combinations; all were evaluated",
                cv.candidates.len()
            );
        }
    }
    let p = art.bundle.forest.params;
    println!(
        "trained {} trees ({}) on {} rows, {} features selected",
        p.n_trees,
        p.max_features,
        art.bundle.split.train.len(),
        art.bundle.feature_mask.selected.len()
    );
    Ok(())
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let bundle: ModelBundle = canonical_json::read_file(path)?;
    bundle.validate()?;
    Ok(bundle)
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let bundle = load_bundle(&args.bundle)?;
    let table = SignatureTable::load(&args.input)?;
    let report = pipeline::evaluate(&bundle, &table, args.baseline_knn)?;
    create_dir(&args.out)?;
    canonical_json::write_file(&args.out.join("metrics.json"), &report)?;
    canonical_json::write_file(&args.out.join("metrics_plot.json"), &report.plot_data())?;
    let text = report.to_text();
    write_text(&args.out.join("metrics.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn run_explain(args: &ExplainArgs) -> Result<()> {
    let bundle = load_bundle(&args.bundle)?;
    let table = SignatureTable::load(&args.input)?;
    let rows: Vec<usize> = match args.row_index {
        Some(r) => vec![r],
        None => (0..table.len()).collect(),
    };
    let report = pipeline::explain(&bundle, &table, &rows, args.top_k)?;
    create_dir(&args.out)?;
    let name = match args.row_index {
        Some(r) => format!("explanation_{r}.json"),
        None => "explanations.json".to_string(),
    };
    canonical_json::write_file(&args.out.join(name), &report)?;
    for inst in &report.instances {
        let e = &inst.explanation;
        println!(
            "row {} label {} predicted {} p={:.4} credibility {:.2}",
            inst.row, inst.label, e.predicted_class, e.probabilities[e.predicted_class], inst.credibility
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => run_synth(a, cli.seed),
        Command::Prepare(a) => run_prepare(a),
        Command::Train(a) => run_train(a, cli.seed),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Explain(a) => run_explain(a),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Schema => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Io => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(exit_code(ErrorKind::Config));
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(exit_code(ErrorKind::Config));
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
