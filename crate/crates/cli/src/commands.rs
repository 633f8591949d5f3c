use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lrqr::baselines::split_conformal_threshold;
use lrqr::basis::Basis;
use lrqr::bundle::CalibrationBundle;
use lrqr::data::{format_real, load_csv, write_csv, CsvSchema, Dataset, SyntheticData, SyntheticSpec};
use lrqr::eval::{average_interval_size, coverage, group_coverage, write_report, ReplicationRow};
use lrqr::experiment::{
    parse_methods, run_synthetic, run_tabular, BasisChoice, BenchConfig, LambdaChoice, Scenario, WeightSource,
};
use lrqr::linalg::Matrix;
use lrqr::loss::Alpha;
use lrqr::solver::{solve, GammaStep, LrqrConfig, ModelFile};
use lrqr::tuning::{cross_validate, TuneOptions};

#[derive(Parser, Debug, Serialize)]
#[command(name = "lrqr", version, about = "Likelihood-ratio regularized quantile regression for conformal prediction")]
pub struct Cli {
    /// Worker threads for cross-validation and replications (default: all cores).
    #[arg(long, global = true, env = "LRQR_JOBS")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic covariate-shift scenario as CSV files.
    Synth(SynthArgs),
    /// Fit LR-QR at a fixed lambda.
    Fit(FitArgs),
    /// Choose lambda by cross-validation, then fit.
    Tune(TuneArgs),
    /// Evaluate saved models on labeled test rows.
    Eval(EvalArgs),
    /// Repeated re-split benchmark of several methods.
    Bench(BenchArgs),
}

pub enum Outcome {
    Done,
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftArg {
    /// Source N(0, I), target N(mu, I), scores uniform with x-dependent width.
    Gaussian,
    /// Discrete groups with per-group score scales.
    Group,
}

#[derive(Args, Debug, Serialize)]
pub struct SpecArgs {
    #[arg(long, value_enum, default_value = "group")]
    pub kind: ShiftArg,
    /// Target mean shift (gaussian kind), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0")]
    pub mu: Vec<f64>,
    /// Number of groups (group kind). Five groups use the built-in preset;
    /// other counts use uniform source, target weights proportional to the
    /// group index and scales 2k/G.
    #[arg(long, default_value_t = 5)]
    pub groups: usize,
    /// Size of every sample unless overridden below.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    #[arg(long)]
    pub n3: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
}

impl SpecArgs {
    fn spec(&self, seed: u64) -> Result<SyntheticSpec<f64>> {
        let sizes = [
            self.n1.unwrap_or(self.n),
            self.n2.unwrap_or(self.n),
            self.n3.unwrap_or(self.n),
            self.n_test.unwrap_or(self.n),
        ];
        let spec = match self.kind {
            ShiftArg::Gaussian => SyntheticSpec::gaussian(self.mu.clone(), sizes, seed),
            ShiftArg::Group if self.groups == 5 => {
                let mut s = SyntheticSpec::five_group_shift(self.n, seed);
                (s.n1, s.n2, s.n3, s.n_test) = (sizes[0], sizes[1], sizes[2], sizes[3]);
                s
            }
            ShiftArg::Group => {
                let g = self.groups;
                if g == 0 {
                    bail!("--groups must be at least 1");
                }
                let total = (g * (g + 1) / 2) as f64;
                let p = vec![1.0 / g as f64; g];
                let q = (1..=g).map(|k| k as f64 / total).collect();
                let b = (1..=g).map(|k| 2.0 * k as f64 / g as f64).collect();
                SyntheticSpec::groups(p, q, b, sizes, seed)
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Existing output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisArg {
    /// Constant threshold.
    Intercept,
    /// Intercept plus raw features.
    Linear,
    /// Intercept plus features standardized on the labeled source rows.
    Standardized,
    /// Features are 0/1 group memberships.
    Indicators,
}

#[derive(Args, Debug, Serialize)]
pub struct DataArgs {
    /// Labeled source CSV (S1) with a score column.
    #[arg(long)]
    pub source: PathBuf,
    /// Unlabeled target CSV (S2). Defaults to the unlabeled source sample, i.e. no shift.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Unlabeled source CSV (S3). Defaults to the features of `--source`.
    #[arg(long)]
    pub source_unlabeled: Option<PathBuf>,
    #[arg(long, default_value = "score")]
    pub score_col: String,
    /// Feature columns, comma separated (default: every column except the score).
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    #[arg(long, value_enum, default_value = "linear")]
    pub basis: BasisArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaStepArg {
    Proximal,
    Subgradient,
}

#[derive(Args, Debug, Serialize)]
pub struct SolverArgs {
    /// Miscoverage level, in (0, 0.5].
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Radius of the gamma ball (default 10*|gamma0| + 10).
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub beta_min: f64,
    #[arg(long, default_value_t = 1e3)]
    pub beta_max: f64,
    #[arg(long, default_value_t = 200)]
    pub max_outer: usize,
    #[arg(long, default_value_t = 500)]
    pub max_inner: usize,
    /// Initial step of the subgradient gamma step.
    #[arg(long, default_value_t = 1.0)]
    pub step0: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol_stationarity: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_objective: f64,
    #[arg(long, value_enum, default_value = "proximal")]
    pub gamma_step: GammaStepArg,
}

impl SolverArgs {
    fn config(&self, lambda: f64, seed: u64) -> Result<LrqrConfig<f64>> {
        let mut c = LrqrConfig::new(Alpha::new(self.alpha)?, lambda);
        c.radius = self.radius;
        c.beta_min = self.beta_min;
        c.beta_max = self.beta_max;
        c.max_outer = self.max_outer;
        c.max_inner = self.max_inner;
        c.step0 = self.step0;
        c.tol_stationarity = self.tol_stationarity;
        c.tol_objective = self.tol_objective;
        c.seed = seed;
        c.gamma_step = match self.gamma_step {
            GammaStepArg::Proximal => GammaStep::Proximal,
            GammaStepArg::Subgradient => GammaStep::Subgradient,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Constant in lambda* = c0 n1^(-1/3) (1/n2 + 1/n3)^(-1/3).
    #[arg(long, default_value_t = 1.0)]
    pub c0: f64,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    /// Seed of the fold assignment.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Tuning report JSON (default: `<out stem>.tune.json`).
    #[arg(long)]
    pub tune_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Model JSON files; each becomes one report row labeled by its file stem.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    /// Labeled test CSV.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "score")]
    pub score_col: String,
    /// Source CSV with scores; adds a split conformal row.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Report CSV (a `.summary.json` is written beside it).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    Gaussian,
    Group,
    /// Real data: ridge predictor and median-split scenarios.
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightArg {
    Oracle,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchBasisArg {
    Auto,
    Constant,
    Linear,
    Indicators,
}

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "group")]
    pub kind: BenchKind,
    #[arg(long, default_value_t = 5)]
    pub groups: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0")]
    pub mu: Vec<f64>,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// CSV for `--kind csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub label_col: Option<String>,
    /// Shift scenarios for `--kind csv` as `name=column`, repeatable.
    #[arg(long)]
    pub scenario: Vec<String>,
    /// Comma separated subset of split, weighted, lrqr.
    #[arg(long, default_value = "split,weighted,lrqr")]
    pub methods: String,
    #[arg(long, default_value_t = 50)]
    pub replications: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "oracle")]
    pub weights: WeightArg,
    /// Fixed lambda; tuned by cross-validation when absent.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub c0: f64,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long, value_enum, default_value = "auto")]
    pub basis: BenchBasisArg,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Report CSV (a `.summary.json` is written beside it).
    #[arg(long)]
    pub out: PathBuf,
}

/// Model JSON written by `fit` and `tune`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SavedModel {
    #[serde(flatten)]
    pub file: ModelFile<f64>,
    /// Input columns, in basis order.
    pub features: Vec<String>,
    pub seed: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    argv: Vec<String>,
    jobs: Option<usize>,
    command: &'a Command,
}

pub fn run(cli: Cli) -> Result<Outcome> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let manifest_path = match &cli.command {
        Command::Synth(a) => {
            if !a.out.is_dir() {
                bail!("output directory {} does not exist", a.out.display());
            }
            a.out.join("manifest.json")
        }
        Command::Fit(FitArgs { out, .. })
        | Command::Tune(TuneArgs { out, .. })
        | Command::Eval(EvalArgs { out, .. })
        | Command::Bench(BenchArgs { out, .. }) => sibling(out, "manifest.json"),
    };
    let outcome = match &cli.command {
        Command::Synth(a) => synth(a)?,
        Command::Fit(a) => fit(a)?,
        Command::Tune(a) => tune(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Bench(a) => bench(a)?,
    };
    let manifest = Manifest {
        tool: "lrqr",
        version: env!("CARGO_PKG_VERSION"),
        argv: std::env::args().collect(),
        jobs: cli.jobs,
        command: &cli.command,
    };
    write_json(&manifest_path, &manifest)?;
    Ok(outcome)
}

/// `dir/model.json` → `dir/model.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn feature_names(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

fn matrix_columns(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols()).map(|j| m.column_values(j)).collect()
}

fn write_sample(path: &Path, names: &[String], x: &Matrix<f64>, scores: Option<&[f64]>) -> Result<()> {
    let mut cols = matrix_columns(x);
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    if let Some(s) = scores {
        cols.push(s.to_vec());
        header.push("score");
    }
    write_csv(path, &header, &cols)?;
    Ok(())
}

fn write_oracle(path: &Path, data: &SyntheticData<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["sample", "row", "r"])?;
    for (name, r) in [
        ("source", &data.source_r),
        ("target", &data.target_r),
        ("source_unlabeled", &data.source_unlabeled_r),
        ("test", &data.test_r),
    ] {
        for (i, &v) in r.iter().enumerate() {
            w.write_record([name.to_string(), i.to_string(), format_real(v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<Outcome> {
    let spec = a.spec.spec(a.seed)?;
    let data = spec.generate()?;
    let prefix = if data.test_groups.is_some() { "g" } else { "x" };
    let names = feature_names(prefix, data.source_x.ncols());
    write_sample(&a.out.join("source.csv"), &names, &data.source_x, Some(&data.source_scores))?;
    write_sample(&a.out.join("target.csv"), &names, &data.target_x, None)?;
    write_sample(&a.out.join("source_unlabeled.csv"), &names, &data.source_unlabeled_x, None)?;
    write_sample(&a.out.join("test.csv"), &names, &data.test_x, Some(&data.test_scores))?;
    write_oracle(&a.out.join("oracle_r.csv"), &data)?;
    write_json(&a.out.join("spec.json"), &spec)?;
    Ok(Outcome::Done)
}

struct Loaded {
    bundle: CalibrationBundle<f64>,
    basis: Basis<f64>,
    features: Vec<String>,
}

/// Rows as basis inputs: the intercept basis takes no columns.
fn inputs(basis: &Basis<f64>, ds: &Dataset<f64>) -> Result<Matrix<f64>> {
    Ok(if basis.input_arity() == 0 {
        Matrix::new(ds.len(), 0, Vec::new())?
    } else {
        ds.features.clone()
    })
}

fn load_bundle(d: &DataArgs) -> Result<Loaded> {
    let source: Dataset<f64> = load_csv(
        &d.source,
        &CsvSchema {
            features: d.features.clone(),
            score: Some(d.score_col.clone()),
            ..CsvSchema::default()
        },
    )?;
    let same = CsvSchema {
        features: source.feature_names.clone(),
        ..CsvSchema::default()
    };
    let s3 = match &d.source_unlabeled {
        Some(p) => load_csv(p, &same)?,
        None => source.clone(),
    };
    let s2 = match &d.target {
        Some(p) => load_csv(p, &same)?,
        None => s3.clone(),
    };
    let p = source.features.ncols();
    let basis = match d.basis {
        BasisArg::Intercept => Basis::constant(),
        BasisArg::Linear => Basis::raw_with_intercept(p),
        BasisArg::Standardized => Basis::precomputed(p, true)?.with_standardization(&source.features)?,
        BasisArg::Indicators => Basis::group_indicators(p)?,
    };
    let phi = |ds: &Dataset<f64>| -> Result<Matrix<f64>> { Ok(basis.eval_rows(&inputs(&basis, ds)?)?) };
    let bundle = CalibrationBundle::new(
        phi(&source)?,
        source.scores.clone().expect("score column requested"),
        phi(&s2)?,
        phi(&s3)?,
    )?;
    let features = if basis.input_arity() == 0 { Vec::new() } else { source.feature_names.clone() };
    Ok(Loaded { bundle, basis, features })
}

fn fit(a: &FitArgs) -> Result<Outcome> {
    let cfg = a.solver.config(a.lambda, a.seed)?;
    let data = load_bundle(&a.data)?;
    let (model, diag) = solve(&cfg, &data.bundle, &data.basis)?;
    let converged = diag.converged;
    let saved = SavedModel {
        file: ModelFile { model, diagnostics: Some(diag) },
        features: data.features,
        seed: a.seed,
    };
    write_json(&a.out, &saved)?;
    Ok(if converged { Outcome::Done } else { Outcome::NotConverged })
}

fn tune(a: &TuneArgs) -> Result<Outcome> {
    let cfg = a.solver.config(0.0, a.seed)?;
    let data = load_bundle(&a.data)?;
    let options = TuneOptions { folds: a.folds, c0: a.c0 };
    let result = cross_validate(&data.bundle, &data.basis, &cfg, &options)?;
    let converged = result.final_diagnostics.converged;
    let saved = SavedModel {
        file: ModelFile {
            model: result.final_model.clone(),
            diagnostics: Some(result.final_diagnostics.clone()),
        },
        features: data.features,
        seed: a.seed,
    };
    write_json(&a.out, &saved)?;
    let tune_out = a.tune_out.clone().unwrap_or_else(|| sibling(&a.out, "tune.json"));
    write_json(&tune_out, &result)?;
    Ok(if converged { Outcome::Done } else { Outcome::NotConverged })
}

fn eval(a: &EvalArgs) -> Result<Outcome> {
    let mut rows = Vec::new();
    let mut alpha = None;
    for path in &a.model {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let saved: SavedModel =
            serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))?;
        let model = &saved.file.model;
        alpha.get_or_insert(f64::from(model.alpha));
        let test: Dataset<f64> = load_csv(
            &a.test,
            &CsvSchema {
                features: saved.features.clone(),
                score: Some(a.score_col.clone()),
                ..CsvSchema::default()
            },
        )?;
        let x = inputs(&model.basis, &test)?;
        let thresholds = model.thresholds_phi(&model.basis.eval_rows(&x)?)?;
        let scores = test.scores.as_ref().expect("score column requested");
        let groups = match model.basis {
            Basis::GroupIndicators { .. } => Some(group_coverage(scores, &thresholds, &x)?),
            _ => None,
        };
        rows.push(ReplicationRow {
            method: path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string(),
            replication: 0,
            coverage: coverage(scores, &thresholds)?,
            avg_size: average_interval_size(&thresholds)?,
            lambda: Some(model.lambda),
            seed: saved.seed,
            n_test: thresholds.len(),
            group_coverage: groups,
            reweighted_source_coverage: None,
            converged: saved.file.diagnostics.as_ref().map(|d| d.converged),
        });
    }
    let alpha = alpha.expect("at least one model");
    if let Some(cal) = &a.calibration {
        let schema = CsvSchema { score: Some(a.score_col.clone()), ..CsvSchema::default() };
        let cal: Dataset<f64> = load_csv(cal, &schema)?;
        let test: Dataset<f64> = load_csv(&a.test, &schema)?;
        let t = split_conformal_threshold(cal.scores.as_ref().expect("score column"), Alpha::new(alpha)?)?;
        let scores = test.scores.as_ref().expect("score column");
        let th = vec![t; scores.len()];
        rows.push(ReplicationRow {
            method: "split".into(),
            replication: 0,
            coverage: coverage(scores, &th)?,
            avg_size: average_interval_size(&th)?,
            lambda: None,
            seed: 0,
            n_test: th.len(),
            group_coverage: None,
            reweighted_source_coverage: None,
            converged: None,
        });
    }
    write_report(&a.out, &rows, alpha)?;
    Ok(Outcome::Done)
}

fn parse_scenario(s: &str, ds: &Dataset<f64>) -> Result<Scenario> {
    let (name, col) = s.split_once('=').unwrap_or((s, s));
    let column = ds
        .feature_names
        .iter()
        .position(|f| f == col)
        .with_context(|| format!("scenario column `{col}` is not a feature column"))?;
    Ok(Scenario { name: name.to_string(), column })
}

fn bench(a: &BenchArgs) -> Result<Outcome> {
    let methods = parse_methods(&a.methods)?;
    let mut cfg = BenchConfig::new(methods, a.solver.config(0.0, a.seed)?, a.replications, a.seed);
    cfg.weights = match a.weights {
        WeightArg::Oracle => WeightSource::Oracle,
        WeightArg::Logistic => WeightSource::Logistic,
    };
    cfg.lambda = match a.lambda {
        Some(lambda) => LambdaChoice::Fixed { lambda },
        None => LambdaChoice::Tuned { options: TuneOptions { folds: a.folds, c0: a.c0 } },
    };
    cfg.basis = match a.basis {
        BenchBasisArg::Auto => BasisChoice::Auto,
        BenchBasisArg::Constant => BasisChoice::Constant,
        BenchBasisArg::Linear => BasisChoice::Linear,
        BenchBasisArg::Indicators => BasisChoice::Indicators,
    };
    let rows = match a.kind {
        BenchKind::Csv => {
            let path = a.data.as_ref().context("--kind csv needs --data")?;
            let label = a.label_col.clone().context("--kind csv needs --label-col")?;
            let ds: Dataset<f64> = load_csv(path, &CsvSchema { label: Some(label), ..CsvSchema::default() })?;
            if a.scenario.is_empty() {
                bail!("--kind csv needs at least one --scenario name=column");
            }
            let scenarios = a.scenario.iter().map(|s| parse_scenario(s, &ds)).collect::<Result<Vec<_>>>()?;
            run_tabular(&ds, &scenarios, &cfg)?
        }
        kind => {
            let spec = SpecArgs {
                kind: if kind == BenchKind::Gaussian { ShiftArg::Gaussian } else { ShiftArg::Group },
                mu: a.mu.clone(),
                groups: a.groups,
                n: a.n,
                n1: None,
                n2: None,
                n3: None,
                n_test: a.n_test,
            }
            .spec(a.seed)?;
            run_synthetic(&spec, &cfg)?
        }
    };
    write_report(&a.out, &rows, a.solver.alpha)?;
    Ok(if rows.iter().any(|r| r.converged == Some(false)) {
        Outcome::NotConverged
    } else {
        Outcome::Done
    })
}
