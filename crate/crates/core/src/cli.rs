//! Command-line surface: `train`, `benchmark` and `synth`.
//!
//! Every command writes a `run_manifest.json` into its output directory
//! listing the inputs, the resolved configuration, the seeds and every file
//! it produced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::benchmark::{run_benchmark, Benchmark, BenchmarkConfig, Method};
use crate::data::{load_dataset, AffectDimension, Dataset, RatingScale};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::{write_histogram_csv, write_scatter_csv, MetricReport, TargetKind};
use crate::network::Checkpoint;
use crate::optimize::{train, TrainConfig, TrainReport};
use crate::synth::{generate, read_oracle, write_synth, SynthConfig, SynthFiles};
use crate::uq::EnsembleManifest;

#[derive(Debug, Parser)]
#[command(
    name = "uqr",
    version,
    about = "Mean and interrater-SD regression for affective ratings"
)]
pub struct Cli {
    /// Worker threads for parallel trainings and draws.
    #[arg(long, global = true, env = "UQR_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network and write its checkpoint and report.
    Train(TrainArgs),
    /// Train, estimate and evaluate one or more uncertainty methods.
    Benchmark(BenchmarkArgs),
    /// Generate a synthetic dataset with known mean and SD.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, env = "UQR_FEATURES")]
    pub features: PathBuf,
    #[arg(long, env = "UQR_ANNOTATIONS")]
    pub annotations: PathBuf,
    #[arg(long, env = "UQR_SPLITS")]
    pub splits: PathBuf,
    #[arg(long, env = "UQR_SCALE_MIN", default_value_t = 1)]
    pub scale_min: i32,
    #[arg(long, env = "UQR_SCALE_MAX", default_value_t = 9)]
    pub scale_max: i32,
}

impl DataArgs {
    fn scale(&self) -> Result<RatingScale> {
        RatingScale::new(self.scale_min, self.scale_max)
    }

    fn load(&self) -> Result<Dataset> {
        load_dataset(&self.features, &self.annotations, &self.splits, &self.scale()?)
    }

    fn paths(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("features".to_string(), display(&self.features)),
            ("annotations".to_string(), display(&self.annotations)),
            ("splits".to_string(), display(&self.splits)),
        ])
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// TOML training configuration; flags below override it.
    #[arg(long, env = "UQR_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "UQR_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "UQR_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "UQR_LOSS")]
    pub loss: Option<LossKind>,
    #[arg(long, env = "UQR_DIMENSION")]
    pub dimension: Option<AffectDimension>,
    #[arg(long, env = "UQR_MAX_EPOCHS")]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DimensionChoice {
    Valence,
    Arousal,
    Both,
}

impl DimensionChoice {
    pub fn dimensions(self) -> Vec<AffectDimension> {
        match self {
            DimensionChoice::Valence => vec![AffectDimension::Valence],
            DimensionChoice::Arousal => vec![AffectDimension::Arousal],
            DimensionChoice::Both => AffectDimension::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// TOML benchmark configuration (`runs`, `mc_draws`, `[train]`, ...).
    #[arg(long, env = "UQR_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "UQR_OUT")]
    pub out: PathBuf,
    /// First seed of the seed list.
    #[arg(long, env = "UQR_SEED")]
    pub seed: Option<u64>,
    /// Methods to run; all five when omitted.
    #[arg(long, env = "UQR_METHOD", value_delimiter = ',')]
    pub method: Vec<Method>,
    #[arg(long, env = "UQR_DIMENSION", value_enum, default_value_t = DimensionChoice::Both)]
    pub dimension: DimensionChoice,
    #[arg(long, env = "UQR_RUNS")]
    pub runs: Option<usize>,
    #[arg(long, env = "UQR_MC_DRAWS")]
    pub mc_draws: Option<usize>,
    #[arg(long, env = "UQR_MAX_EPOCHS")]
    pub max_epochs: Option<usize>,
    /// Directory holding `oracle_<dimension>.csv` tables of true mean and SD.
    #[arg(long, env = "UQR_ORACLE_DIR")]
    pub oracle_dir: Option<PathBuf>,
    #[arg(long, env = "UQR_HISTOGRAM_BINS", default_value_t = 20)]
    pub histogram_bins: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// TOML synthetic-data configuration.
    #[arg(long, env = "UQR_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "UQR_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "UQR_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "UQR_N_STIMULI")]
    pub n_stimuli: Option<usize>,
    /// Keep raw Gaussian ratings instead of rounding to the Likert grid.
    #[arg(long, env = "UQR_NO_QUANTIZE")]
    pub no_quantize: bool,
    #[arg(long, env = "UQR_SCALE_MIN", default_value_t = 1)]
    pub scale_min: i32,
    #[arg(long, env = "UQR_SCALE_MAX", default_value_t = 9)]
    pub scale_max: i32,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub started_unix_secs: u64,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "run_manifest.json";

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

struct Recorder {
    command: &'static str,
    out: PathBuf,
    start: Instant,
    started_unix_secs: u64,
    outputs: Vec<String>,
}

impl Recorder {
    fn new(command: &'static str, out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            start: Instant::now(),
            started_unix_secs: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            outputs: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    fn record(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    fn finish(
        mut self,
        config: serde_json::Value,
        seeds: Vec<u64>,
        inputs: BTreeMap<String, String>,
    ) -> Result<RunManifest> {
        self.outputs.sort();
        let manifest = RunManifest {
            command: self.command.to_string(),
            config,
            seeds,
            inputs,
            outputs: self.outputs.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_secs: self.started_unix_secs,
            wall_clock_secs: self.start.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = self.path(RunManifest::FILE_NAME);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn read_config_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_json_value<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("configuration serializes")
}

/// Resolves the training configuration from file and flags.
pub fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_toml(&read_config_text(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(loss) = args.loss {
        cfg.loss_kind = loss;
    }
    if let Some(dim) = args.dimension {
        cfg.affect_dimension = dim;
    }
    if let Some(epochs) = args.max_epochs {
        cfg.max_epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Trains one network; writes `checkpoint.json`, `train_report.json` and
/// the run manifest.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainReport> {
    let cfg = resolve_train_config(args)?;
    let dataset = args.data.load()?;
    let mut rec = Recorder::new("train", &args.out)?;
    let outcome = train(&dataset, &cfg)?;
    let checkpoint = Checkpoint {
        params: outcome.params,
        training_seed: cfg.seed,
    };
    rec.write_text("checkpoint.json", &checkpoint.to_json()?)?;
    let mut report = outcome.report;
    report.checkpoint = Some("checkpoint.json".to_string());
    rec.write_text("train_report.json", &report.to_json())?;
    let mut inputs = args.data.paths();
    if let Some(c) = &args.config {
        inputs.insert("config".into(), display(c));
    }
    rec.finish(to_json_value(&cfg), vec![cfg.seed], inputs)?;
    Ok(report)
}

/// Resolves the benchmark configuration from file and flags.
pub fn resolve_benchmark_config(args: &BenchmarkArgs) -> Result<BenchmarkConfig> {
    let mut cfg = match &args.config {
        Some(path) => BenchmarkConfig::from_toml(&read_config_text(path)?)?,
        None => BenchmarkConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    if let Some(draws) = args.mc_draws {
        cfg.mc_draws = draws;
    }
    if let Some(epochs) = args.max_epochs {
        cfg.train.max_epochs = epochs;
    }
    Ok(cfg)
}

/// Everything `cmd_benchmark` computed, besides what it wrote to disk.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub benchmark: Benchmark,
    pub report: MetricReport,
    pub oracle_report: Option<MetricReport>,
}

fn scatter_rows(
    dataset: &Dataset,
    dim: AffectDimension,
    which: TargetKind,
    predictions: &BTreeMap<String, f64>,
) -> Vec<(String, f64, f64)> {
    predictions
        .iter()
        .map(|(id, p)| {
            let t = dataset
                .target(id)
                .expect("prediction ids come from the dataset")
                .dimension(dim);
            let e = if which == TargetKind::Mean { t.mu } else { t.sigma };
            (id.clone(), e, *p)
        })
        .collect()
}

/// Runs the selected methods and writes reports, scatter and histogram
/// CSVs, checkpoints and ensemble manifests.
pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<BenchmarkRun> {
    let cfg = resolve_benchmark_config(args)?;
    let methods = if args.method.is_empty() {
        Method::ALL.to_vec()
    } else {
        let mut m = args.method.clone();
        m.sort();
        m.dedup();
        m
    };
    let dims = args.dimension.dimensions();
    cfg.validate(&methods)?;
    let oracle = match &args.oracle_dir {
        Some(dir) => {
            let files = SynthFiles::in_dir(dir);
            let mut tables = BTreeMap::new();
            for &dim in &dims {
                tables.insert(dim, read_oracle(&files.oracle[&dim])?);
            }
            Some(tables)
        }
        None => None,
    };
    let dataset = args.data.load()?;
    let mut rec = Recorder::new("benchmark", &args.out)?;

    for method in &methods {
        let p = method.protocol();
        log::info!(
            "{method}: trains {} ({} training run{}, {} inference run{})",
            p.loss,
            if p.multiple_training_runs { cfg.runs } else { 1 },
            if p.multiple_training_runs { "s" } else { "" },
            if p.multiple_inference_runs { "many" } else { "one" },
            if p.multiple_inference_runs { "s" } else { "" },
        );
    }
    let benchmark = run_benchmark(&dataset, &methods, &dims, &cfg)?;

    let report = benchmark.report(&dataset)?;
    rec.write_text("report.json", &report.to_json())?;
    rec.write_text("report.txt", &report.to_table())?;
    let oracle_report = match &oracle {
        Some(tables) => {
            let r = benchmark.oracle_report(tables)?;
            rec.write_text("oracle_report.json", &r.to_json())?;
            rec.write_text("oracle_report.txt", &r.to_table())?;
            Some(r)
        }
        None => None,
    };

    let mut written_checkpoints: BTreeMap<String, ()> = BTreeMap::new();
    for result in &benchmark.results {
        let (method, dim) = (result.method, result.dimension);
        let loss = method.protocol().loss;
        for which in [TargetKind::Mean, TargetKind::Sd] {
            let rows = scatter_rows(&dataset, dim, which, result.representative.get(which));
            let name = format!("scatter/{method}_{dim}_{}.csv", which.name());
            std::fs::create_dir_all(rec.path("scatter")).map_err(|e| Error::io(rec.path("scatter"), e))?;
            write_scatter_csv(&rec.path(&name), &rows)?;
            rec.record(&name);
            let name = format!("histogram/{method}_{dim}_{}.csv", which.name());
            std::fs::create_dir_all(rec.path("histogram")).map_err(|e| Error::io(rec.path("histogram"), e))?;
            write_histogram_csv(&rec.path(&name), &rows, args.histogram_bins)?;
            rec.record(&name);
        }
        let mut member_paths = Vec::new();
        for (ckpt, report) in result.checkpoints.iter().zip(&result.train_reports) {
            let stem = format!("{loss}_{dim}_seed{}", ckpt.training_seed);
            let name = format!("checkpoints/{stem}.json");
            if written_checkpoints.insert(stem.clone(), ()).is_none() {
                rec.write_text(&name, &ckpt.to_json()?)?;
                let mut report = report.clone();
                report.checkpoint = Some(name.clone());
                rec.write_text(&format!("train_reports/{stem}.json"), &report.to_json())?;
            }
            member_paths.push(name);
        }
        if let Some(samples) = &result.samples {
            let manifest = EnsembleManifest {
                method: method.name().to_string(),
                seeds: result.checkpoints.iter().map(|c| c.training_seed).collect(),
                member_checkpoints: member_paths,
                samples: samples.clone(),
            };
            let name = format!("ensembles/{method}_{dim}.json");
            std::fs::create_dir_all(rec.path("ensembles")).map_err(|e| Error::io(rec.path("ensembles"), e))?;
            manifest.save(&rec.path(&name))?;
            rec.record(&name);
        }
    }

    let mut inputs = args.data.paths();
    if let Some(c) = &args.config {
        inputs.insert("config".into(), display(c));
    }
    if let Some(d) = &args.oracle_dir {
        inputs.insert("oracle_dir".into(), display(d));
    }
    let config = serde_json::json!({
        "benchmark": to_json_value(&cfg),
        "methods": methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "dimensions": dims.iter().map(|d| d.name()).collect::<Vec<_>>(),
        "protocols": methods.iter().map(|m| (m.name(), m.protocol())).collect::<BTreeMap<_, _>>(),
    });
    rec.finish(config, cfg.seeds(), inputs)?;
    Ok(BenchmarkRun {
        benchmark,
        report,
        oracle_report,
    })
}

/// Resolves the synthetic-data configuration from file and flags.
pub fn resolve_synth_config(args: &SynthArgs) -> Result<SynthConfig> {
    let mut cfg = match &args.config {
        Some(path) => SynthConfig::from_toml(&read_config_text(path)?)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n_stimuli {
        cfg.n_stimuli = n;
    }
    if args.no_quantize {
        cfg.quantize = false;
    }
    Ok(cfg)
}

/// Generates a synthetic dataset and its oracle tables.
pub fn cmd_synth(args: &SynthArgs) -> Result<SynthFiles> {
    let cfg = resolve_synth_config(args)?;
    let scale = RatingScale::new(args.scale_min, args.scale_max)?;
    let output = generate(&cfg, &scale)?;
    let mut rec = Recorder::new("synth", &args.out)?;
    let files = write_synth(&output, &args.out)?;
    for p in [&files.features, &files.annotations, &files.splits]
        .into_iter()
        .chain(files.oracle.values())
    {
        if let Some(name) = p.file_name() {
            rec.record(&name.to_string_lossy());
        }
    }
    let mut inputs = BTreeMap::new();
    if let Some(c) = &args.config {
        inputs.insert("config".into(), display(c));
    }
    rec.finish(to_json_value(&cfg), vec![cfg.seed], inputs)?;
    Ok(files)
}

/// Runs a parsed command line inside a thread pool bounded by `--jobs`.
pub fn run(cli: &Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Train(args) => {
            let report = cmd_train(args)?;
            println!(
                "best epoch {} (validation loss {}), wrote {}",
                report.best_epoch.map_or("none".to_string(), |e| e.to_string()),
                report.best_val_loss.map_or("n/a".to_string(), |v| format!("{v:.6}")),
                args.out.display()
            );
            Ok(())
        }
        Command::Benchmark(args) => {
            let run = cmd_benchmark(args)?;
            println!("{}", run.report.to_table());
            if let Some(r) = &run.oracle_report {
                println!("against true mean and SD:\n{}", r.to_table());
            }
            Ok(())
        }
        Command::Synth(args) => {
            let files = cmd_synth(args)?;
            println!("wrote {}", files.features.parent().unwrap_or(Path::new(".")).display());
            Ok(())
        }
    })
}

/// Process exit code for an error: 2 for bad inputs, 1 otherwise.
pub fn exit_code(error: &Error) -> i32 {
    if error.is_input_error() {
        2
    } else {
        1
    }
}
