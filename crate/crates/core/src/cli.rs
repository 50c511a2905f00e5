//! Command-line front end: `fit`, `path`, `cv` and `simulate`.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::build_network;
use crate::grouping::{
    parse_grouping_file_with_names, write_grouping_file, Group, GroupingStructure,
    DEFAULT_SUPPORT_TOL,
};
use crate::model_select::{assign_folds, cross_validate, lambda_sequence, solution_path, CvRule};
use crate::optimizer::{fit, FitConfig, FitResult};
use crate::simulate::{generate, rule_name, run_experiment, ExperimentConfig, ScenarioKind, ScenarioSpec};
use crate::survival::{RiskIndex, SurvivalDataset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "structcox", version, about = "Structured sparse Cox regression with time-dependent covariates")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Only report errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit at a single lambda.
    Fit(FitArgs),
    /// Fit a warm-started path over a log-spaced lambda sequence.
    Path(PathArgs),
    /// Choose lambda by K-fold cross-validation.
    Cv(CvArgs),
    /// Generate a synthetic design and score replicated fits.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Counting-process data: `id,start,stop,event,<covariates>`.
    #[arg(long)]
    pub data: PathBuf,
    /// Grouping file.
    #[arg(long)]
    pub groups: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Step shrinkage per backtrack.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Initial step size.
    #[arg(long, default_value_t = 1.0)]
    pub q0: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 60)]
    pub max_backtracks: usize,
    /// Fit on unit-variance columns.
    #[arg(long)]
    pub standardize: bool,
}

impl SolverArgs {
    fn config(&self, lambda: f64) -> FitConfig {
        FitConfig {
            lambda,
            tol: self.tol,
            alpha: self.alpha,
            q0: self.q0,
            max_iter: self.max_iter,
            max_backtracks: self.max_backtracks,
            standardize: self.standardize,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LambdaArgs {
    #[arg(long, default_value_t = 30)]
    pub nlambda: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lambda_min_ratio: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
    /// Write the proximal flow network at the solution as `from to capacity flow` lines.
    #[arg(long)]
    #[serde(skip)]
    pub dump_network: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PathArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub lambdas: LambdaArgs,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleArg {
    Min,
    #[value(name = "1se")]
    #[serde(rename = "1se")]
    OneSe,
    /// Report both rules (simulate only).
    Both,
}

impl RuleArg {
    fn rules(self) -> Vec<CvRule> {
        match self {
            RuleArg::Min => vec![CvRule::Min],
            RuleArg::OneSe => vec![CvRule::OneSe],
            RuleArg::Both => vec![CvRule::Min, CvRule::OneSe],
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub lambdas: LambdaArgs,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = RuleArg::OneSe)]
    pub rule: RuleArg,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// categorical_s1, categorical_s2, interactions or sparse_group_case1..3.
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub n: usize,
    /// Main terms of the interaction design.
    #[arg(long, default_value_t = 20)]
    pub p_main: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub replications: u64,
    #[arg(long, default_value_t = 0.5)]
    pub censoring: f64,
    /// Generate outcomes with all effects zero.
    #[arg(long)]
    pub null_effects: bool,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = RuleArg::OneSe)]
    pub rule: RuleArg,
    /// Also refit with adaptive weights.
    #[arg(long)]
    pub debias: bool,
    /// Write the data files only.
    #[arg(long)]
    pub no_fit: bool,
    #[command(flatten)]
    pub lambdas: LambdaArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

/// Everything needed to reproduce a run. Thread count and output location
/// are left out since they do not affect results.
#[derive(Debug, Serialize)]
struct Manifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    options: &'a T,
    inputs: Vec<InputDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibration: Option<CalibrationRecord>,
}

#[derive(Debug, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct CalibrationRecord {
    baseline_hazard: f64,
    censoring_scale: f64,
    horizon: f64,
    median_uncensored: f64,
    censoring_fraction: f64,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.quiet { "error" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .format_timestamp(None)
        .try_init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_INPUT;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return EXIT_INPUT;
        }
    }
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Path(a) => cmd_path(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_NOT_CONVERGED,
        Err(e) => {
            eprintln!("error: {}", diagnostic(&e));
            EXIT_INPUT
        }
    }
}

fn diagnostic(e: &Error) -> String {
    let text = match e {
        Error::EmptyFold { fold } => format!(
            "fold {fold} contains no events; folds are already stratified by event status, so use fewer folds"
        ),
        other => other.to_string(),
    };
    text.replace('\n', " ")
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))
}

fn digest(path: &Path, text: &str) -> InputDigest {
    let hash = Sha256::digest(text.as_bytes());
    InputDigest {
        path: path.display().to_string(),
        sha256: hash.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }),
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn write_manifest<T: Serialize>(dir: &Path, manifest: &Manifest<'_, T>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_file(dir, "manifest.json", &text)
}

struct Inputs {
    dataset: SurvivalDataset,
    structure: GroupingStructure,
    digests: Vec<InputDigest>,
}

fn load_inputs(args: &InputArgs) -> Result<Inputs> {
    let data_text = read_text(&args.data)?;
    let dataset = SurvivalDataset::from_csv_reader(data_text.as_bytes())
        .map_err(|e| Error::InvalidData(format!("{}: {e}", args.data.display())))?;
    let groups_text = read_text(&args.groups)?;
    let structure = parse_grouping_file_with_names(&groups_text, Some(dataset.covariate_names()))
        .and_then(|s| align_to_columns(s, dataset.covariate_names()))
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", args.groups.display())))?;
    Ok(Inputs {
        digests: vec![digest(&args.data, &data_text), digest(&args.groups, &groups_text)],
        dataset,
        structure,
    })
}

/// Reindexes a structure with its own variable list onto the data columns.
pub fn align_to_columns(structure: GroupingStructure, columns: &[String]) -> Result<GroupingStructure> {
    let names = match structure.variable_names() {
        Some(n) => n.to_vec(),
        None => {
            if structure.p() != columns.len() {
                return Err(Error::Dimension {
                    expected: columns.len(),
                    found: structure.p(),
                });
            }
            return structure.with_variable_names(columns.to_vec());
        }
    };
    if names == columns {
        return Ok(structure);
    }
    let position: HashMap<&str, usize> = columns.iter().enumerate().map(|(j, n)| (n.as_str(), j)).collect();
    let mut map = Vec::with_capacity(names.len());
    for n in &names {
        match position.get(n.as_str()) {
            Some(&j) => map.push(j),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "grouping file references covariate '{n}' which is not a column of the data"
                )))
            }
        }
    }
    if let Some(extra) = columns.iter().find(|c| !names.contains(c)) {
        return Err(Error::InvalidArgument(format!(
            "data column '{extra}' is not declared in the grouping file"
        )));
    }
    let groups = structure
        .groups()
        .iter()
        .map(|g| Group::new(g.name.clone(), g.members.iter().map(|&j| map[j]), g.weight))
        .collect();
    GroupingStructure::new_unchecked(columns.len(), groups)
        .with_variable_names(columns.to_vec())?
        .with_unpenalized(structure.unpenalized().iter().map(|&j| map[j]))
}

/// `variable,beta,selected`.
pub fn coefficient_table(names: &[String], beta: &[f64]) -> String {
    let mut out = String::from("variable,beta,selected\n");
    for (n, b) in names.iter().zip(beta) {
        let _ = writeln!(out, "{},{},{}", csv_field(n), b, b.abs() > DEFAULT_SUPPORT_TOL);
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fit_summary(lambda: f64, r: &FitResult) -> String {
    let mut out = String::from("key,value\n");
    let _ = writeln!(out, "lambda,{lambda}");
    let _ = writeln!(out, "objective,{}", r.objective());
    let _ = writeln!(out, "penalty,{}", r.penalty_value);
    let _ = writeln!(out, "iterations,{}", r.iterations);
    let _ = writeln!(out, "converged,{}", r.converged);
    let _ = writeln!(out, "final_step,{}", r.final_step);
    let _ = writeln!(out, "nonzero,{}", r.beta.iter().filter(|b| b.abs() > DEFAULT_SUPPORT_TOL).count());
    out
}

fn warn_unconverged(fits: &[(f64, &FitResult)]) -> bool {
    let mut all = true;
    for (lambda, f) in fits {
        if !f.converged {
            warn!("fit at lambda {lambda} stopped after {} iterations without converging", f.iterations);
            all = false;
        }
    }
    all
}

fn cmd_fit(args: &FitArgs) -> Result<bool> {
    let inputs = load_inputs(&args.input)?;
    let index = RiskIndex::build(&inputs.dataset)?;
    let config = args.solver.config(args.lambda);
    let r = fit(&index, &inputs.structure, &config, None)?;
    let dir = &args.out_dir;
    write_file(dir, "coefficients.csv", &coefficient_table(inputs.dataset.covariate_names(), &r.beta))?;
    write_file(dir, "summary.csv", &fit_summary(args.lambda, &r))?;
    if let Some(path) = &args.dump_network {
        let grad = index.gradient(&r.beta)?;
        let u: Vec<f64> = r.beta.iter().zip(&grad).map(|(b, g)| b - r.final_step * g).collect();
        let mut net = build_network(&u, &inputs.structure, r.final_step * args.lambda)?;
        net.solve();
        fs::write(path, net.network.edge_list())?;
    }
    write_manifest(
        dir,
        &Manifest {
            tool: "structcox",
            version: env!("CARGO_PKG_VERSION"),
            command: "fit",
            options: args,
            inputs: inputs.digests,
            calibration: None,
        },
    )?;
    Ok(warn_unconverged(&[(args.lambda, &r)]))
}

fn cmd_path(args: &PathArgs) -> Result<bool> {
    let inputs = load_inputs(&args.input)?;
    let index = RiskIndex::build(&inputs.dataset)?;
    let lambdas = lambda_list(&index, &inputs.structure, &args.lambdas)?;
    let path = solution_path(&index, &inputs.structure, &lambdas, &args.solver.config(0.0))?;
    let names = inputs.dataset.covariate_names();
    let mut out = String::from("lambda,variable,beta\n");
    for (l, f) in lambdas.iter().zip(&path.fits) {
        for (n, b) in names.iter().zip(&f.beta) {
            let _ = writeln!(out, "{l},{},{b}", csv_field(n));
        }
    }
    let dir = &args.out_dir;
    write_file(dir, "path.csv", &out)?;
    let mut summary = String::from("lambda,objective,iterations,converged,nonzero\n");
    for ((l, f), nz) in lambdas.iter().zip(&path.fits).zip(path.nonzero_counts()) {
        let _ = writeln!(summary, "{l},{},{},{},{nz}", f.objective(), f.iterations, f.converged);
    }
    write_file(dir, "path_summary.csv", &summary)?;
    write_manifest(
        dir,
        &Manifest {
            tool: "structcox",
            version: env!("CARGO_PKG_VERSION"),
            command: "path",
            options: args,
            inputs: inputs.digests,
            calibration: None,
        },
    )?;
    let fits: Vec<(f64, &FitResult)> = lambdas.iter().copied().zip(&path.fits).collect();
    Ok(warn_unconverged(&fits))
}

/// The log-spaced sequence, or just `lambda_max` when one value is asked for.
fn lambda_list(index: &RiskIndex, structure: &GroupingStructure, args: &LambdaArgs) -> Result<Vec<f64>> {
    match args.nlambda {
        0 => Err(Error::InvalidArgument("--nlambda must be at least 1".into())),
        1 => Ok(vec![crate::model_select::lambda_max(index, structure)?]),
        n => lambda_sequence(index, structure, n, args.lambda_min_ratio),
    }
}

fn cmd_cv(args: &CvArgs) -> Result<bool> {
    let rule = match args.rule {
        RuleArg::Min => CvRule::Min,
        RuleArg::OneSe => CvRule::OneSe,
        RuleArg::Both => return Err(Error::InvalidArgument("--rule must be min or 1se for cv".into())),
    };
    let inputs = load_inputs(&args.input)?;
    let index = RiskIndex::build(&inputs.dataset)?;
    let lambdas = lambda_list(&index, &inputs.structure, &args.lambdas)?;
    let cv = cross_validate(
        &inputs.dataset,
        &inputs.structure,
        &lambdas,
        args.folds,
        args.seed,
        &args.solver.config(0.0),
    )?;
    let dir = &args.out_dir;
    write_file(dir, "cv.csv", &cv.summary_csv())?;
    let chosen = cv.chosen_index(rule);
    let best = cv.chosen_fit(rule);
    write_file(dir, "coefficients.csv", &coefficient_table(inputs.dataset.covariate_names(), &best.beta))?;
    let mut summary = fit_summary(lambdas[chosen], best);
    let _ = writeln!(summary, "rule,{}", rule_name(rule));
    let _ = writeln!(summary, "lambda_min,{}", cv.lambda_min);
    let _ = writeln!(summary, "lambda_1se,{}", cv.lambda_1se);
    let _ = writeln!(summary, "mean_cve,{}", cv.mean_cve[chosen]);
    let _ = writeln!(summary, "se_cve,{}", cv.se_cve[chosen]);
    write_file(dir, "summary.csv", &summary)?;
    let mut folds = String::from("subject,fold\n");
    let labels = assign_folds(&inputs.dataset, args.folds, args.seed);
    for ((id, _), f) in inputs.dataset.subjects().iter().zip(labels) {
        let _ = writeln!(folds, "{},{}", csv_field(id), f + 1);
    }
    write_file(dir, "folds.csv", &folds)?;
    write_manifest(
        dir,
        &Manifest {
            tool: "structcox",
            version: env!("CARGO_PKG_VERSION"),
            command: "cv",
            options: args,
            inputs: inputs.digests,
            calibration: None,
        },
    )?;
    Ok(warn_unconverged(&[(lambdas[chosen], best)]))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<bool> {
    let kind: ScenarioKind = args.scenario.parse()?;
    let spec = ScenarioSpec {
        kind,
        n: args.n,
        p_main: args.p_main,
        seed: args.seed,
        censoring_target: args.censoring,
        null_effects: args.null_effects,
    };
    let sim = generate(&spec, 0)?;
    let dir = &args.out_dir;
    write_file(dir, "data.csv", &sim.dataset.to_csv_string())?;
    write_file(dir, "groups.json", &write_grouping_file(&sim.structure))?;
    let beta_true = if spec.null_effects { vec![0.0; spec.p()] } else { sim.truth.beta.clone() };
    let mut truth = String::from("variable,beta_true\n");
    for (n, b) in sim.truth.names.iter().zip(&beta_true) {
        let _ = writeln!(truth, "{},{b}", csv_field(n));
    }
    write_file(dir, "truth.csv", &truth)?;
    if !args.no_fit {
        let config = ExperimentConfig {
            folds: args.folds,
            n_lambda: args.lambdas.nlambda,
            lambda_min_ratio: args.lambdas.lambda_min_ratio,
            rules: args.rule.rules(),
            debias: args.debias,
            fit: args.solver.config(0.0),
        };
        let table = run_experiment(&spec, args.replications, &config)?;
        write_file(dir, "metrics.csv", &table.to_csv())?;
    }
    let c = sim.calibration;
    write_manifest(
        dir,
        &Manifest {
            tool: "structcox",
            version: env!("CARGO_PKG_VERSION"),
            command: "simulate",
            options: args,
            inputs: Vec::new(),
            calibration: Some(CalibrationRecord {
                baseline_hazard: c.h0,
                censoring_scale: c.c_max,
                horizon: c.horizon,
                median_uncensored: c.median_uncensored,
                censoring_fraction: c.censoring,
            }),
        },
    )?;
    Ok(true)
}
