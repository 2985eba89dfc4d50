//! Command implementations behind the `mvopr` binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use mvopr_core::evaluation::{cv_select_index, loo_evaluate, run_benchmark, LambdaRule, DEFAULT_THRESHOLD};
use mvopr_core::methods::{parse_method_list, FittedSelection, MethodKind, SelectionMethod};
use mvopr_core::numerics::DenseMatrix;
use mvopr_core::simulation::{ScenarioConfig, ScenarioId};
use mvopr_core::{MvoprError, Vector};

pub const SNR_DEFINITION: &str =
    "SNR = empirical variance of realized signal entries / empirical variance of realized noise entries, enforced exactly";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<MvoprError> for CliError {
    fn from(e: MvoprError) -> Self {
        match e {
            MvoprError::Numerical(_)
            | MvoprError::Convergence { .. }
            | MvoprError::DegenerateGrid(_)
            | MvoprError::DegenerateSignal(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "mvopr", version, about = "Multi-view orthogonal projection regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and score methods by selection AUC.
    Simulate(SimulateArgs),
    /// Fit one model on CSV inputs and print a structured report.
    Fit(FitArgs),
    /// Leave-one-out stability and prediction report for several methods.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Built-in scenario id (s1, s2, s3, s4_ar1, s4_cs, s5_null, s6_chain).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Scenario config file (flat TOML); overrides --scenario.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// SNR of the noise on the second modality.
    #[arg(long)]
    pub snr2: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "mvopr,lasso,adaptive,cooperative,factor,integfactor")]
    pub methods: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Comma-separated CSV files, upstream to downstream.
    #[arg(long)]
    pub modalities: String,
    /// CSV with sample ids and one response column.
    #[arg(long)]
    pub response: PathBuf,
    /// One `+`-joined pipeline per modality, comma-separated, optionally
    /// followed by one for the response. Steps: clr, center_scale,
    /// top_variance=K, sqrt_response, none.
    #[arg(long)]
    pub preprocess: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pub pseudocount: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// l1 or adaptive.
    #[arg(long, default_value = "l1")]
    pub penalty: String,
    #[arg(long, default_value_t = 5)]
    pub cv_folds: usize,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "mvopr,lasso,factor,integfactor")]
    pub methods: String,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Fixed lambda for every fold instead of inner cross-validation.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub cv_folds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Numeric table with sample ids and feature names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub row_ids: Vec<String>,
    pub columns: Vec<String>,
    pub data: DenseMatrix,
}

pub fn parse_table(text: &str, source: &str) -> CliResult<Table> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| validation(format!("{source}: {e}")))?.clone();
    if header.len() < 2 {
        return Err(validation(format!("{source}: need an id column and at least one feature")));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| validation(format!("{source}: {e}")))?;
        let line = r + 2;
        if rec.len() != header.len() {
            return Err(validation(format!("{source}: row {line} has {} fields, expected {}", rec.len(), header.len())));
        }
        row_ids.push(rec[0].to_string());
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell.parse().map_err(|_| {
                validation(format!("{source}: non-numeric cell `{cell}` at row {line}, column {} ({})", c + 1, &header[c]))
            })?;
            if !v.is_finite() {
                return Err(validation(format!("{source}: non-finite cell at row {line}, column {}", c + 1)));
            }
            values.push(v);
        }
    }
    if row_ids.is_empty() {
        return Err(validation(format!("{source}: no data rows")));
    }
    let data = DenseMatrix::from_row_slice(row_ids.len(), columns.len(), &values);
    Ok(Table { row_ids, columns, data })
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_table(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreprocessStep {
    Clr,
    CenterScale,
    TopVariance(usize),
    SqrtResponse,
}

pub fn parse_pipeline(s: &str) -> CliResult<Vec<PreprocessStep>> {
    let mut steps = Vec::new();
    for tok in s.split('+').map(str::trim).filter(|t| !t.is_empty()) {
        let step = match tok {
            "none" => continue,
            "clr" => PreprocessStep::Clr,
            "center_scale" => PreprocessStep::CenterScale,
            "sqrt_response" => PreprocessStep::SqrtResponse,
            t => match t.strip_prefix("top_variance=") {
                Some(k) => PreprocessStep::TopVariance(
                    k.parse().map_err(|_| validation(format!("bad top_variance count in `{t}`")))?,
                ),
                None => return Err(validation(format!("unknown preprocessing step `{t}`"))),
            },
        };
        steps.push(step);
    }
    Ok(steps)
}

fn sample_variance(col: &[f64]) -> f64 {
    let n = col.len() as f64;
    if col.len() < 2 {
        return 0.0;
    }
    let mean = col.iter().sum::<f64>() / n;
    col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn keep_columns(t: &Table, keep: &[usize]) -> Table {
    Table {
        row_ids: t.row_ids.clone(),
        columns: keep.iter().map(|&j| t.columns[j].clone()).collect(),
        data: t.data.select_columns(keep),
    }
}

/// Applies one step; returns the new table and any warnings.
pub fn preprocess(step: PreprocessStep, table: &Table, pseudocount: f64) -> CliResult<(Table, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut out = table.clone();
    match step {
        PreprocessStep::Clr => {
            for mut row in out.data.row_iter_mut() {
                let mut logs = Vec::with_capacity(row.len());
                for v in row.iter() {
                    let x = v + pseudocount;
                    if !(x > 0.0) {
                        return Err(validation(format!("clr needs positive entries after pseudocount, got {x}")));
                    }
                    logs.push(x.ln());
                }
                let mean = logs.iter().sum::<f64>() / logs.len() as f64;
                for (v, l) in row.iter_mut().zip(logs) {
                    *v = l - mean;
                }
            }
        }
        PreprocessStep::CenterScale => {
            let mut keep = Vec::new();
            for j in 0..out.data.ncols() {
                let col: Vec<f64> = out.data.column(j).iter().copied().collect();
                let var = sample_variance(&col);
                if var > 1e-24 {
                    let mean = col.iter().sum::<f64>() / col.len() as f64;
                    let sd = var.sqrt();
                    for v in out.data.column_mut(j).iter_mut() {
                        *v = (*v - mean) / sd;
                    }
                    keep.push(j);
                } else {
                    warnings.push(format!("dropped zero-variance column `{}`", out.columns[j]));
                }
            }
            if keep.is_empty() {
                return Err(validation("every column has zero variance"));
            }
            out = keep_columns(&out, &keep);
        }
        PreprocessStep::TopVariance(k) => {
            if k == 0 {
                return Err(validation("top_variance needs K >= 1"));
            }
            let vars: Vec<f64> =
                (0..out.data.ncols()).map(|j| sample_variance(out.data.column(j).as_slice())).collect();
            let mut order: Vec<usize> = (0..vars.len()).collect();
            order.sort_by(|&a, &b| vars[b].partial_cmp(&vars[a]).unwrap().then(a.cmp(&b)));
            let mut keep: Vec<usize> = order.into_iter().take(k).collect();
            keep.sort_unstable();
            if k > vars.len() {
                warnings.push(format!("top_variance={k} exceeds {} columns; kept all", vars.len()));
            }
            out = keep_columns(&out, &keep);
        }
        PreprocessStep::SqrtResponse => {
            if let Some(v) = out.data.iter().find(|v| **v < 0.0) {
                return Err(validation(format!("sqrt_response on negative value {v}")));
            }
            out.data.apply(|v| *v = v.sqrt());
        }
    }
    Ok((out, warnings))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub tool_version: String,
    pub timestamp: String,
    pub input_digests: BTreeMap<String, String>,
    pub snr_definition: String,
    pub config: String,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: String, seed: u64) -> Self {
        Self {
            command: command.into(),
            config_digest: sha256_hex(config.as_bytes()),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            input_digests: BTreeMap::new(),
            snr_definition: SNR_DEFINITION.into(),
            config,
            notes: Vec::new(),
        }
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_file(path: &Path, body: &str) -> CliResult<()> {
    fs::write(path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_with_manifest(out: &Path, body: &str, manifest: &RunManifest) -> CliResult<()> {
    write_file(out, body)?;
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_file(&manifest_path(out), &json)
}

pub struct SimulateOutput {
    pub csv: String,
    pub failures: Vec<String>,
    pub manifest: RunManifest,
}

pub fn simulate_config(args: &SimulateArgs) -> CliResult<ScenarioConfig> {
    let mut cfg = match (&args.config, &args.scenario) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            ScenarioConfig::from_toml(&text)?
        }
        (None, Some(id)) => ScenarioConfig::builtin(id.parse::<ScenarioId>()?),
        (None, None) => return Err(validation("give --scenario or --config")),
    };
    if let Some(snr) = args.snr2 {
        let i = cfg
            .link_target_set()
            .iter()
            .position(|&t| t == 1)
            .ok_or_else(|| validation("--snr2 needs a scenario with a link into the second modality"))?;
        cfg.snr_links[i] = snr;
    }
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the benchmark and returns the CSV body; writes nothing.
pub fn run_simulate(args: &SimulateArgs) -> CliResult<SimulateOutput> {
    let cfg = simulate_config(args)?;
    let methods = parse_method_list(&args.methods)?;
    let table = run_benchmark(&cfg, &methods)?;
    let methods_line = methods.iter().map(|m| m.id()).collect::<Vec<_>>().join(",");
    let config = format!("{}methods = \"{methods_line}\"\n", cfg.to_toml());
    let mut manifest = RunManifest::new("simulate", config, cfg.seed);
    if let Some(p) = &args.config {
        let bytes = fs::read(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        manifest.input_digests.insert(p.display().to_string(), sha256_hex(&bytes));
    }
    let failures: Vec<String> =
        table.failures.iter().map(|f| format!("rep {} method {}: {}", f.rep, f.method, f.reason)).collect();
    manifest.notes.extend(failures.iter().cloned());
    Ok(SimulateOutput { csv: table.to_csv(), failures, manifest })
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<SimulateOutput> {
    let out = run_simulate(args)?;
    write_with_manifest(&args.out, &out.csv, &out.manifest)?;
    Ok(out)
}

/// Inputs after preprocessing, aligned on sample ids.
pub struct PreparedInputs {
    pub modalities: Vec<Table>,
    pub response: Vector,
    pub response_name: String,
    pub warnings: Vec<String>,
    pub digests: BTreeMap<String, String>,
}

pub fn prepare_inputs(input: &InputArgs) -> CliResult<PreparedInputs> {
    let paths: Vec<PathBuf> =
        input.modalities.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect();
    if paths.is_empty() {
        return Err(validation("no modality files given"));
    }
    if !(input.pseudocount >= 0.0) {
        return Err(validation("pseudocount must be >= 0"));
    }
    let mut digests = BTreeMap::new();
    let mut tables = Vec::new();
    for p in paths.iter().chain([&input.response]) {
        let bytes = fs::read(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        digests.insert(p.display().to_string(), sha256_hex(&bytes));
        let text = String::from_utf8(bytes).map_err(|_| validation(format!("{}: not UTF-8", p.display())))?;
        tables.push(parse_table(&text, &p.display().to_string())?);
    }
    let mut response = tables.pop().expect("response table");
    let n = response.row_ids.len();
    for (t, p) in tables.iter().zip(&paths) {
        if t.row_ids.len() != n {
            return Err(validation(format!(
                "{} has {} rows but the response has {n}",
                p.display(),
                t.row_ids.len()
            )));
        }
        if t.row_ids != response.row_ids {
            return Err(validation(format!("{}: sample ids differ from the response file", p.display())));
        }
    }
    if response.columns.len() != 1 {
        return Err(validation(format!("response file must have exactly one value column, got {}", response.columns.len())));
    }
    if n < 3 {
        return Err(validation(format!("need at least 3 samples, got {n}")));
    }

    let k = tables.len();
    let mut pipelines: Vec<Vec<PreprocessStep>> = vec![Vec::new(); k + 1];
    if let Some(spec) = &input.preprocess {
        let parts: Vec<&str> = spec.split(',').collect();
        if parts.len() != k && parts.len() != k + 1 {
            return Err(validation(format!(
                "--preprocess has {} entries; expected {k} (one per modality) or {} (plus response)",
                parts.len(),
                k + 1
            )));
        }
        for (i, part) in parts.iter().enumerate() {
            pipelines[i] = parse_pipeline(part)?;
        }
    }
    let mut warnings = Vec::new();
    for (i, table) in tables.iter_mut().chain([&mut response]).enumerate() {
        for &step in &pipelines[i] {
            let (t, w) = preprocess(step, table, input.pseudocount)?;
            *table = t;
            let label = if i < k { format!("modality {}", i + 1) } else { "response".into() };
            warnings.extend(w.into_iter().map(|w| format!("{label}: {w}")));
        }
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(PreparedInputs {
        response: Vector::from_iterator(n, response.data.iter().copied()),
        response_name: response.columns[0].clone(),
        modalities: tables,
        warnings,
        digests,
    })
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6e}")
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<String> {
    let method = match args.penalty.as_str() {
        "l1" => MethodKind::Mvopr,
        "adaptive" => MethodKind::MvoprAdaptive,
        other => return Err(validation(format!("unknown penalty `{other}` (use l1 or adaptive)"))),
    };
    let inputs = prepare_inputs(&args.input)?;
    let mats: Vec<DenseMatrix> = inputs.modalities.iter().map(|t| t.data.clone()).collect();
    let fitted = method.fit(&mats, &inputs.response, None)?;
    let path = fitted.path();
    let index = if path.degenerate {
        0
    } else {
        cv_select_index(&method, &mats, &inputs.response, &path.lambdas, args.cv_folds, args.input.seed)?
    };
    let report = fit_report(args, &inputs, fitted.as_ref(), index);
    match &args.out {
        Some(out) => {
            let mut manifest = RunManifest::new("fit", fit_config(args), args.input.seed);
            manifest.input_digests = inputs.digests.clone();
            manifest.notes = inputs.warnings.clone();
            write_with_manifest(out, &report, &manifest)?;
        }
        None => print!("{report}"),
    }
    Ok(report)
}

fn fit_config(args: &FitArgs) -> String {
    format!(
        "modalities = {:?}\nresponse = {:?}\npreprocess = {:?}\npseudocount = {}\npenalty = {:?}\ncv_folds = {}\nseed = {}\n",
        args.input.modalities,
        args.input.response.display().to_string(),
        args.input.preprocess.clone().unwrap_or_default(),
        args.input.pseudocount,
        args.penalty,
        args.cv_folds,
        args.input.seed
    )
}

fn fit_report(args: &FitArgs, inputs: &PreparedInputs, fitted: &dyn FittedSelection, index: usize) -> String {
    let path = fitted.path();
    let mut s = String::new();
    let _ = writeln!(s, "[input]");
    let _ = writeln!(s, "samples = {}", inputs.response.len());
    let _ = writeln!(s, "response = {}", inputs.response_name);
    for (i, t) in inputs.modalities.iter().enumerate() {
        let _ = writeln!(s, "modality_{} = {} columns", i + 1, t.columns.len());
    }
    let _ = writeln!(s, "penalty = {}", args.penalty);
    for w in &inputs.warnings {
        let _ = writeln!(s, "warning = {w}");
    }
    let _ = writeln!(s, "\n[links]");
    let notes = fitted.notes();
    if notes.is_empty() || inputs.modalities.len() == 1 {
        let _ = writeln!(s, "none = single modality, no projection");
    }
    for (k, v) in &notes {
        let _ = writeln!(s, "{k} = {v}");
    }
    let _ = writeln!(s, "\n[path]");
    let _ = writeln!(s, "points = {}", path.len());
    let _ = writeln!(s, "lambda_max = {}", fmt_f(path.lambdas[0]));
    let _ = writeln!(s, "lambda_min = {}", fmt_f(*path.lambdas.last().unwrap()));
    let _ = writeln!(s, "degenerate = {}", path.degenerate);
    let _ = writeln!(s, "max_kkt_residual = {}", fmt_f(path.kkt.iter().copied().fold(0.0, f64::max)));
    let _ = writeln!(s, "index,lambda,nonzero");
    for l in 0..path.len() {
        let _ = writeln!(s, "{},{},{}", l, fmt_f(path.lambdas[l]), path.nonzero(l).len());
    }
    let _ = writeln!(s, "\n[selection]");
    let _ = writeln!(s, "rule = {}-fold cross-validation", args.cv_folds);
    let _ = writeln!(s, "lambda_index = {index}");
    let _ = writeln!(s, "lambda = {}", fmt_f(path.lambdas[index]));
    let _ = writeln!(s, "\n[coefficients]");
    let _ = writeln!(s, "modality,feature,coefficient");
    let mut offset = 0;
    for (i, t) in inputs.modalities.iter().enumerate() {
        for (j, name) in t.columns.iter().enumerate() {
            let b = path.beta[index][offset + j];
            if b != 0.0 {
                let _ = writeln!(s, "{},{},{}", i + 1, name, fmt_f(b));
            }
        }
        offset += t.columns.len();
    }
    s
}

pub const EVALUATE_HEADER: &str = "method,jaccard,ochiai,dice,mse,n_selected,selected_features,failed_folds";

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<String> {
    if !(args.threshold > 0.0 && args.threshold <= 1.0) {
        return Err(validation(format!("--threshold must lie in (0, 1], got {}", args.threshold)));
    }
    let methods = parse_method_list(&args.methods)?;
    let inputs = prepare_inputs(&args.input)?;
    let mats: Vec<DenseMatrix> = inputs.modalities.iter().map(|t| t.data.clone()).collect();
    let names: Vec<String> = inputs
        .modalities
        .iter()
        .enumerate()
        .flat_map(|(i, t)| t.columns.iter().map(move |c| format!("m{}:{c}", i + 1)))
        .collect();
    let rule = match args.lambda {
        Some(l) => LambdaRule::Fixed(l),
        None => LambdaRule::InnerCv { folds: args.cv_folds, seed: args.input.seed },
    };
    let mut csv = String::from(EVALUATE_HEADER);
    csv.push('\n');
    for m in &methods {
        let report = loo_evaluate(&mats, &inputs.response, m, rule, args.threshold)?;
        let selected: Vec<&str> = report.selected_features.iter().map(|&j| names[j].as_str()).collect();
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            m.label(),
            report.stability.jaccard,
            report.stability.ochiai,
            report.stability.dice,
            report.loo_mse,
            selected.len(),
            selected.join(";"),
            report.fold_errors.len()
        );
        for (fold, e) in &report.fold_errors {
            eprintln!("warning: {} fold {fold} failed: {e}", m.label());
        }
    }
    let config = format!(
        "methods = {:?}\nthreshold = {}\nlambda = {:?}\ncv_folds = {}\n{}",
        args.methods,
        args.threshold,
        args.lambda,
        args.cv_folds,
        fit_config(&FitArgs { input: args.input.clone(), penalty: String::new(), cv_folds: args.cv_folds, out: None })
    );
    let mut manifest = RunManifest::new("evaluate", config, args.input.seed);
    manifest.input_digests = inputs.digests.clone();
    manifest.notes = inputs.warnings.clone();
    write_with_manifest(&args.out, &csv, &manifest)?;
    Ok(csv)
}
