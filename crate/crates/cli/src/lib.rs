//! `qvc`: train, cross-validate, compare and probe QAUM classifiers.
//!
//! Exit codes are 0 on success, 2 for usage or configuration errors and 1 for
//! failures while running.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use qvc_core::data::{load_csv, subsample, LabelColumn, LabeledDataset, Preprocessing, DEFAULT_PCA_COMPONENTS};
use qvc_core::ensemble::random_parameters;
use qvc_core::eval::{folds_csv, paired_t_test, run_crossval, CrossValReport, TTestResult};
use qvc_core::model::{ModelDocument, ModelSpec, SCHEMA_VERSION};
use qvc_core::qaum::{build_circuit, min_spectrum_grid, ParameterVector};
use qvc_core::seed::{derive_seed, Stream};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, inconsistent configuration or missing inputs.
    Config(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<qvc_core::Error> for CliError {
    fn from(e: qvc_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "qvc", version, about = "QAUM variational classifiers and their ensembles")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "QVC_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model on the whole dataset.
    Train(ModelArgs),
    /// 5×2 cross-validation of one model.
    Crossval(ModelArgs),
    /// Cross-validate two models on shared folds and run the paired t-test.
    Compare(CompareArgs),
    /// Fourier spectra of random circuits as a function of one feature.
    Spectrum(SpectrumArgs),
    /// Bagging against boosting across per-learner budgets.
    Tradeoff(TradeoffArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeaderMode {
    /// Treat the first row as a header unless every cell is numeric.
    Auto,
    Yes,
    No,
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    /// CSV file with one row per sample.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Label column: zero-based index, header name or `last`.
    #[arg(long, default_value = "last")]
    pub label_col: String,
    #[arg(long, value_enum, default_value_t = HeaderMode::Auto)]
    pub header: HeaderMode,
    /// Draw this many rows uniformly without replacement before anything else.
    #[arg(long)]
    pub subsample: Option<usize>,
    /// Principal components kept; 0 disables PCA.
    #[arg(long, default_value_t = DEFAULT_PCA_COMPONENTS)]
    pub pca: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, env = "QVC_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if needed.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// `single`, `bagging`, `boosting`, or a full spec such as `bagging:learners=7,depth=2,budget=1714`.
    #[arg(long, default_value = "bagging")]
    pub model: String,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Learner count for bagging, cap for boosting.
    #[arg(long)]
    pub learners: Option<usize>,
    /// COBYLA evaluations per learner.
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model_a: String,
    #[arg(long)]
    pub model_b: String,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated circuit depths.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 3, 4])]
    pub depths: Vec<usize>,
    /// Sample points over one period; at least 4·depth + 1.
    #[arg(long, default_value_t = 64)]
    pub grid_size: usize,
    /// Random parameter draws per depth.
    #[arg(long, default_value_t = 100)]
    pub draws: usize,
    /// Circuit width; feature 0 is swept, the others held at π/2.
    #[arg(long, default_value_t = 1)]
    pub features: usize,
    /// Use all-zero parameters instead of random draws.
    #[arg(long)]
    pub zero_params: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TradeoffArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated per-learner budgets, ascending.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 10, 100, 1000])]
    pub budgets: Vec<usize>,
    /// Bagging learner count.
    #[arg(long)]
    pub learners: Option<usize>,
    /// Boosting cap.
    #[arg(long)]
    pub max_learners: Option<usize>,
}

/// Validated inputs of a model-training command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub label: LabelColumn,
    pub header: HeaderMode,
    pub subsample: Option<usize>,
    pub pca: Option<usize>,
}

impl DatasetArgs {
    pub fn to_config(&self) -> CliResult<DatasetConfig> {
        if self.subsample == Some(0) {
            return Err(CliError::Config("--subsample must be positive".into()));
        }
        let label = self
            .label_col
            .parse::<LabelColumn>()
            .map_err(|e| CliError::Config(format!("--label-col: {e}")))?;
        Ok(DatasetConfig {
            path: self.dataset.clone(),
            label,
            header: self.header,
            subsample: self.subsample,
            pca: (self.pca > 0).then_some(self.pca),
        })
    }
}

pub fn parse_model_spec(text: &str) -> CliResult<ModelSpec> {
    text.parse::<ModelSpec>().map_err(|e| CliError::Config(format!("model {text:?}: {e}")))
}

impl ModelArgs {
    pub fn to_config(&self) -> CliResult<RunConfig> {
        let mut model = parse_model_spec(&self.model)?;
        if let Some(d) = self.depth {
            model = model.with_depth(d);
        }
        if let Some(b) = self.budget {
            model = model.with_budget(b);
        }
        if let Some(l) = self.learners {
            model = model.with_learners(l).map_err(|e| CliError::Config(e.to_string()))?;
        }
        model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(RunConfig {
            dataset: self.data.to_config()?,
            model,
            seed: self.common.seed,
            out: self.common.out.clone(),
        })
    }
}

fn first_row_is_numeric(path: &Path) -> CliResult<bool> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut line = String::new();
    BufReader::new(file)
        .read_line(&mut line)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(line.trim().split(',').all(|cell| cell.trim().parse::<f64>().is_ok()))
}

/// Loads the CSV and applies the optional subsample.
pub fn load_dataset(cfg: &DatasetConfig, seed: u64) -> CliResult<LabeledDataset> {
    if !cfg.path.is_file() {
        return Err(CliError::Config(format!("dataset not found: {}", cfg.path.display())));
    }
    let has_header = match cfg.header {
        HeaderMode::Yes => true,
        HeaderMode::No => false,
        HeaderMode::Auto => !first_row_is_numeric(&cfg.path)?,
    };
    let data = load_csv(&cfg.path, &cfg.label, has_header).map_err(|e| match e {
        qvc_core::Error::InvalidArgument(m) => CliError::Config(m),
        other => other.into(),
    })?;
    Ok(match cfg.subsample {
        Some(n) => subsample(&data, n, derive_seed(seed, Stream::Subsample, 0)),
        None => data,
    })
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| anyhow!(e))?;
    text.push('\n');
    write_file(path, &text)
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    schema: u32,
    model: ModelSpec,
    seed: u64,
    rows: usize,
    features: usize,
    learners: usize,
    final_loss: f64,
    training_accuracy: f64,
    wall_time_secs: f64,
}

/// Trains on the whole preprocessed dataset; writes `model.json` and `train_summary.json`.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let raw = load_dataset(&cfg.dataset, cfg.seed)?;
    let start = Instant::now();
    let prep = Preprocessing::fit(&raw, cfg.dataset.pca)?;
    let data = prep.apply(&raw)?;
    let model = cfg.model.train(&data, cfg.seed)?;
    let elapsed = start.elapsed().as_secs_f64();
    let training_accuracy = qvc_core::eval::accuracy(&model.predictions(&data)?, data.labels())?;

    prepare_out(&cfg.out)?;
    let summary = TrainSummary {
        schema: SCHEMA_VERSION,
        model: cfg.model,
        seed: cfg.seed,
        rows: data.len(),
        features: raw.num_features(),
        learners: model.learner_count(),
        final_loss: model.mean_final_loss(),
        training_accuracy,
        wall_time_secs: elapsed,
    };
    let doc = ModelDocument::new(cfg.model, cfg.seed, model);
    let mut text = doc.to_json()?;
    text.push('\n');
    write_file(&cfg.out.join("model.json"), &text)?;
    write_json(&cfg.out.join("train_summary.json"), &summary)?;
    println!(
        "trained {} ({} learners) on {} rows: training accuracy {:.4}, {:.1}s",
        cfg.model, summary.learners, summary.rows, training_accuracy, elapsed
    );
    Ok(())
}

fn timings_csv(report: &CrossValReport) -> String {
    let mut s = String::from("repetition,fold,wall_time_secs\n");
    for f in &report.per_fold {
        let _ = writeln!(s, "{},{:?},{:.6}", f.repetition, f.fold, f.wall_time_secs);
    }
    s
}

fn crossval(cfg: &RunConfig, data: &LabeledDataset) -> CliResult<CrossValReport> {
    Ok(run_crossval(&cfg.model, data, cfg.seed, cfg.dataset.pca)?)
}

/// Writes `crossval_report.json`, `crossval_folds.csv` and `crossval_timings.csv`.
pub fn cmd_crossval(cfg: &RunConfig) -> CliResult<CrossValReport> {
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    let report = crossval(cfg, &data)?;
    prepare_out(&cfg.out)?;
    let mut json = report.to_json()?;
    json.push('\n');
    write_file(&cfg.out.join("crossval_report.json"), &json)?;
    write_file(&cfg.out.join("crossval_folds.csv"), &folds_csv(&[&report])?)?;
    write_file(&cfg.out.join("crossval_timings.csv"), &timings_csv(&report))?;
    println!(
        "{}: mean validation accuracy {:.4} ± {:.4}",
        cfg.model, report.mean_accuracy, report.std_accuracy
    );
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonDocument {
    pub schema: u32,
    pub model_a: ModelSpec,
    pub model_b: ModelSpec,
    pub master_seed: u64,
    pub mean_a: f64,
    pub std_a: f64,
    pub mean_b: f64,
    pub std_b: f64,
    pub test: TTestResult,
}

/// Both configurations must name the same dataset and seed so that they share folds.
pub fn cmd_compare(a: &RunConfig, b: &RunConfig) -> CliResult<ComparisonDocument> {
    if a.dataset != b.dataset {
        return Err(CliError::Config("compared models must use the same dataset settings".into()));
    }
    if a.seed != b.seed {
        return Err(CliError::Config("compared models must use the same seed".into()));
    }
    let data = load_dataset(&a.dataset, a.seed)?;
    let ra = crossval(a, &data)?;
    let rb = crossval(b, &data)?;
    let test = paired_t_test(&ra.validation_accuracies(), &rb.validation_accuracies())?;
    let doc = ComparisonDocument {
        schema: SCHEMA_VERSION,
        model_a: a.model,
        model_b: b.model,
        master_seed: a.seed,
        mean_a: ra.mean_accuracy,
        std_a: ra.std_accuracy,
        mean_b: rb.mean_accuracy,
        std_b: rb.std_accuracy,
        test,
    };
    prepare_out(&a.out)?;
    write_json(&a.out.join("compare.json"), &doc)?;
    write_json(&a.out.join("report_a.json"), &ra)?;
    write_json(&a.out.join("report_b.json"), &rb)?;
    write_file(&a.out.join("compare_folds.csv"), &folds_csv(&[&ra, &rb])?)?;
    println!(
        "A {}: {:.4} ± {:.4}\nB {}: {:.4} ± {:.4}\nt = {:.4}, p = {:.4}{}",
        a.model,
        ra.mean_accuracy,
        ra.std_accuracy,
        b.model,
        rb.mean_accuracy,
        rb.std_accuracy,
        test.t_statistic,
        test.p_value,
        if test.significant { " (significant at 0.05)" } else { "" }
    );
    Ok(doc)
}

#[derive(Debug, Clone)]
pub struct SpectrumConfig {
    pub depths: Vec<usize>,
    pub grid_size: usize,
    pub draws: usize,
    pub features: usize,
    pub zero_params: bool,
    pub seed: u64,
    pub out: PathBuf,
}

/// Out-of-band mass for one depth and draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSummaryRow {
    pub depth: usize,
    pub draw: usize,
    pub total_mass: f64,
    pub out_of_band_mass: f64,
    pub out_of_band_fraction: f64,
}

/// Writes `spectrum_d{depth}.csv` (draw, frequency, magnitude) per depth and
/// `spectrum_summary.csv`.
pub fn cmd_spectrum(cfg: &SpectrumConfig) -> CliResult<Vec<SpectrumSummaryRow>> {
    if cfg.depths.is_empty() || cfg.depths.contains(&0) {
        return Err(CliError::Config("--depths needs positive depths".into()));
    }
    if cfg.draws == 0 || cfg.features == 0 {
        return Err(CliError::Config("--draws and --features must be positive".into()));
    }
    let deepest = *cfg.depths.iter().max().expect("non-empty");
    if cfg.grid_size < min_spectrum_grid(deepest) {
        return Err(CliError::Config(format!(
            "grid size {} aliases frequencies up to ±{deepest}; use at least {}",
            cfg.grid_size,
            min_spectrum_grid(deepest)
        )));
    }
    prepare_out(&cfg.out)?;
    let draws = if cfg.zero_params { 1 } else { cfg.draws };
    let mut summary = Vec::new();
    for &depth in &cfg.depths {
        let circuit = build_circuit(cfg.features, depth)?;
        let depth_seed = derive_seed(cfg.seed, Stream::Spectrum, depth as u64);
        let spectra = (0..draws)
            .into_par_iter()
            .map(|draw| {
                let params = if cfg.zero_params {
                    ParameterVector::zeros(&circuit)
                } else {
                    ParameterVector::new(random_parameters(&circuit, derive_seed(depth_seed, Stream::Init, draw as u64)))
                };
                circuit.fourier_spectrum(&params, 0, cfg.grid_size)
            })
            .collect::<qvc_core::Result<Vec<_>>>()?;
        let mut csv = String::from("draw,frequency,magnitude\n");
        for (draw, s) in spectra.iter().enumerate() {
            for (k, m) in &s.entries {
                let _ = writeln!(csv, "{draw},{k},{m:e}");
            }
            let total = s.total_mass();
            let oob = s.out_of_band_mass(depth as i64);
            summary.push(SpectrumSummaryRow {
                depth,
                draw,
                total_mass: total,
                out_of_band_mass: oob,
                out_of_band_fraction: if total > 0.0 { oob / total } else { 0.0 },
            });
        }
        write_file(&cfg.out.join(format!("spectrum_d{depth}.csv")), &csv)?;
    }
    let mut csv = String::from("depth,draw,total_mass,out_of_band_mass,out_of_band_fraction\n");
    for r in &summary {
        let _ = writeln!(
            csv,
            "{},{},{:e},{:e},{:e}",
            r.depth, r.draw, r.total_mass, r.out_of_band_mass, r.out_of_band_fraction
        );
    }
    write_file(&cfg.out.join("spectrum_summary.csv"), &csv)?;
    for &depth in &cfg.depths {
        let worst = summary
            .iter()
            .filter(|r| r.depth == depth)
            .map(|r| r.out_of_band_fraction)
            .fold(0.0, f64::max);
        println!("depth {depth}: worst out-of-band fraction {worst:.3e}");
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct TradeoffConfig {
    pub dataset: DatasetConfig,
    pub budgets: Vec<usize>,
    pub bagging: ModelSpec,
    pub boosting: ModelSpec,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub budget: usize,
    pub kind: &'static str,
    pub mean_accuracy: f64,
}

/// Writes `tradeoff.csv` with columns `budget,kind,mean_accuracy`.
pub fn cmd_tradeoff(cfg: &TradeoffConfig) -> CliResult<Vec<TradeoffRow>> {
    if cfg.budgets.is_empty() || cfg.budgets.contains(&0) {
        return Err(CliError::Config("--budgets needs positive budgets".into()));
    }
    if cfg.budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config("--budgets must be strictly ascending".into()));
    }
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    let mut rows = Vec::new();
    for &budget in &cfg.budgets {
        for spec in [cfg.bagging, cfg.boosting] {
            let spec = spec.with_budget(budget);
            let report = run_crossval(&spec, &data, cfg.seed, cfg.dataset.pca)?;
            rows.push(TradeoffRow { budget, kind: spec.kind(), mean_accuracy: report.mean_accuracy });
            println!("budget {budget:>6} {:<8} {:.4}", spec.kind(), report.mean_accuracy);
        }
    }
    prepare_out(&cfg.out)?;
    let mut csv = String::from("budget,kind,mean_accuracy\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.budget, r.kind, r.mean_accuracy);
    }
    write_file(&cfg.out.join("tradeoff.csv"), &csv)?;
    Ok(rows)
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train(args) => cmd_train(&args.to_config()?),
        Command::Crossval(args) => cmd_crossval(&args.to_config()?).map(|_| ()),
        Command::Compare(args) => {
            let dataset = args.data.to_config()?;
            let make = |text: &str| -> CliResult<RunConfig> {
                Ok(RunConfig {
                    dataset: dataset.clone(),
                    model: parse_model_spec(text)?,
                    seed: args.common.seed,
                    out: args.common.out.clone(),
                })
            };
            cmd_compare(&make(&args.model_a)?, &make(&args.model_b)?).map(|_| ())
        }
        Command::Spectrum(args) => cmd_spectrum(&SpectrumConfig {
            depths: args.depths,
            grid_size: args.grid_size,
            draws: args.draws,
            features: args.features,
            zero_params: args.zero_params,
            seed: args.common.seed,
            out: args.common.out,
        })
        .map(|_| ()),
        Command::Tradeoff(args) => {
            let mut bagging = ModelSpec::bagging_default();
            let mut boosting = ModelSpec::boosting_default();
            if let Some(n) = args.learners {
                bagging = bagging.with_learners(n).map_err(|e| CliError::Config(e.to_string()))?;
            }
            if let Some(n) = args.max_learners {
                boosting = boosting.with_learners(n).map_err(|e| CliError::Config(e.to_string()))?;
            }
            for spec in [bagging, boosting] {
                spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
            cmd_tradeoff(&TradeoffConfig {
                dataset: args.data.to_config()?,
                budgets: args.budgets,
                bagging,
                boosting,
                seed: args.common.seed,
                out: args.common.out,
            })
            .map(|_| ())
        }
    }
}

/// Parses `args` (program name first), runs the command and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("configuration error: --threads must be positive");
            return ExitCode::from(2);
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
