//! Synthetic designs with piecewise-constant time-dependent covariates,
//! event times from a piecewise-exponential model, and a replication harness
//! reporting selection metrics.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grouping::{build_sparse_group, build_strong_heredity, fixtures, interaction_pairs, GroupingStructure, SelectionRule};
use crate::model_select::{
    adaptive_weights, concordance, cross_validate, lambda_sequence, metrics_for_fit, CvResult, CvRule, PathDiagnostics,
};
use crate::optimizer::FitConfig;
use crate::survival::{CountingRecord, RiskIndex, SurvivalDataset};

const CALIBRATION_DRAWS: usize = 10_000;
const CALIBRATION_SEED: u64 = 0x5EED_CA11;
const SPARSE_GROUP_BLOCKS: usize = 10;
const SPARSE_GROUP_BLOCK_SIZE: usize = 20;

/// Stream ids for per-purpose random substreams.
const STREAM_COVARIATES: u64 = 1;
const STREAM_EVENTS: u64 = 2;
const STREAM_FOLDS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    /// Two 3-level factors and a continuous covariate; only `A` matters.
    CategoricalS1,
    /// As above with `A`, `B` and their interactions active.
    CategoricalS2,
    /// Main effects and all pairwise interactions.
    Interactions,
    /// Fixed Gaussian covariates in blocks of 20; the case number is how many
    /// leading blocks carry signal.
    SparseGroup(u8),
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioKind::CategoricalS1 => write!(f, "categorical_s1"),
            ScenarioKind::CategoricalS2 => write!(f, "categorical_s2"),
            ScenarioKind::Interactions => write!(f, "interactions"),
            ScenarioKind::SparseGroup(c) => write!(f, "sparse_group_case{c}"),
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical_s1" => Ok(ScenarioKind::CategoricalS1),
            "categorical_s2" => Ok(ScenarioKind::CategoricalS2),
            "interactions" => Ok(ScenarioKind::Interactions),
            "sparse_group_case1" => Ok(ScenarioKind::SparseGroup(1)),
            "sparse_group_case2" => Ok(ScenarioKind::SparseGroup(2)),
            "sparse_group_case3" => Ok(ScenarioKind::SparseGroup(3)),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario '{other}' (expected categorical_s1, categorical_s2, interactions, \
                 sparse_group_case1, sparse_group_case2 or sparse_group_case3)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n: usize,
    /// Number of main terms; used by [`ScenarioKind::Interactions`] only.
    pub p_main: usize,
    pub seed: u64,
    pub censoring_target: f64,
    /// Generate outcomes with every coefficient set to zero.
    pub null_effects: bool,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            p_main: 20,
            seed,
            censoring_target: 0.5,
            null_effects: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if self.kind == ScenarioKind::Interactions && self.p_main < 9 {
            return Err(Error::InvalidArgument(format!(
                "the interaction design needs at least 9 main terms, got {}",
                self.p_main
            )));
        }
        if let ScenarioKind::SparseGroup(c) = self.kind {
            if !(1..=3).contains(&c) {
                return Err(Error::InvalidArgument(format!("sparse group case must be 1, 2 or 3, got {c}")));
            }
        }
        if !(self.censoring_target > 0.0 && self.censoring_target < 1.0) {
            return Err(Error::InvalidArgument("censoring target must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Number of unit time points covariates are defined on.
    pub fn horizon(&self) -> usize {
        match self.kind {
            ScenarioKind::Interactions => 4,
            _ => 50,
        }
    }

    pub fn p(&self) -> usize {
        match self.kind {
            ScenarioKind::CategoricalS1 | ScenarioKind::CategoricalS2 => 9,
            ScenarioKind::Interactions => self.p_main + self.p_main * (self.p_main - 1) / 2,
            ScenarioKind::SparseGroup(_) => SPARSE_GROUP_BLOCKS * SPARSE_GROUP_BLOCK_SIZE,
        }
    }
}

/// True coefficients with the selection rules a fitted support should obey.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTruth {
    pub beta: Vec<f64>,
    pub names: Vec<String>,
    pub true_set: Vec<usize>,
    pub noise_set: Vec<usize>,
    /// Strong heredity rules (empty when the design has none).
    pub heredity_rules: Vec<SelectionRule>,
    /// Collective-selection rules (empty when the design has none).
    pub collective_rules: Vec<SelectionRule>,
}

pub fn scenario_truth(spec: &ScenarioSpec) -> Result<ScenarioTruth> {
    spec.validate()?;
    let p = spec.p();
    let mut beta = vec![0.0; p];
    let (names, heredity_rules, collective_rules) = match spec.kind {
        ScenarioKind::CategoricalS1 | ScenarioKind::CategoricalS2 => {
            let active: &[usize] = if spec.kind == ScenarioKind::CategoricalS1 {
                &[0, 1]
            } else {
                &[0, 1, 2, 3, 4]
            };
            for &j in active {
                beta[j] = 3f64.ln();
            }
            let (r1, r2) = fixtures::categorical_rules();
            let names = fixtures::CATEGORICAL_VARIABLES.iter().map(|s| s.to_string()).collect();
            (names, r1, r2)
        }
        ScenarioKind::Interactions => {
            let pm = spec.p_main;
            let pairs = interaction_pairs(pm);
            for b in beta.iter_mut().take(9) {
                *b = 0.4;
            }
            for (a, b) in [(1, 2), (1, 3), (1, 7), (1, 8), (1, 9), (4, 5), (4, 6), (7, 8), (7, 9)] {
                let k = pairs.iter().position(|&q| q == (a - 1, b - 1)).expect("pair within p_main");
                beta[pm + k] = 0.3;
            }
            let rules = pairs
                .iter()
                .enumerate()
                .map(|(k, &(a, b))| SelectionRule::Implies(vec![pm + k], vec![a, b]))
                .collect();
            let names = build_strong_heredity(pm)?
                .variable_names()
                .expect("named structure")
                .to_vec();
            (names, rules, Vec::new())
        }
        ScenarioKind::SparseGroup(case) => {
            for block in 0..case as usize {
                for (k, v) in [0.1, 0.2, 0.3, 0.4, 0.5].into_iter().enumerate() {
                    beta[block * SPARSE_GROUP_BLOCK_SIZE + k] = v;
                }
            }
            let names = (1..=p).map(|j| format!("X{j}")).collect();
            (names, Vec::new(), Vec::new())
        }
    };
    let true_set = (0..p).filter(|&j| beta[j] != 0.0).collect();
    let noise_set = (0..p).filter(|&j| beta[j] == 0.0).collect();
    Ok(ScenarioTruth {
        beta,
        names,
        true_set,
        noise_set,
        heredity_rules,
        collective_rules,
    })
}

/// Grouping structure used to fit the design.
pub fn scenario_structure(spec: &ScenarioSpec) -> Result<GroupingStructure> {
    spec.validate()?;
    match spec.kind {
        ScenarioKind::CategoricalS1 | ScenarioKind::CategoricalS2 => Ok(fixtures::categorical_interactions()),
        ScenarioKind::Interactions => build_strong_heredity(spec.p_main),
        ScenarioKind::SparseGroup(_) => {
            let blocks: Vec<Vec<usize>> = (0..SPARSE_GROUP_BLOCKS)
                .map(|b| (b * SPARSE_GROUP_BLOCK_SIZE..(b + 1) * SPARSE_GROUP_BLOCK_SIZE).collect())
                .collect();
            let s = build_sparse_group(&blocks, 0.5, 0.5)?;
            let names = (1..=s.p()).map(|j| format!("X{j}")).collect();
            s.with_variable_names(names)
        }
    }
}

/// A covariate series on unit time points: `values[k]` holds on `(k, k + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub values: Vec<f64>,
    /// Sampled run lengths before truncation to the horizon.
    pub durations: Vec<usize>,
}

/// Draws `n_values` values, repeats each for a uniform duration in
/// `min_duration..=max_duration` points and keeps the first `horizon`.
pub fn piecewise_series<R: Rng>(
    rng: &mut R,
    n_values: usize,
    min_duration: usize,
    max_duration: usize,
    horizon: usize,
    mut draw: impl FnMut(&mut R) -> f64,
) -> Series {
    let mut values = Vec::with_capacity(n_values * max_duration);
    let mut durations = Vec::with_capacity(n_values);
    for _ in 0..n_values {
        let v = draw(rng);
        let d = rng.random_range(min_duration..=max_duration);
        durations.push(d);
        values.extend(std::iter::repeat_n(v, d));
    }
    assert!(values.len() >= horizon, "series shorter than the horizon");
    values.truncate(horizon);
    Series { values, durations }
}

fn categorical_level<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(1..=3) as f64
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Interval of constant covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub stop: f64,
    pub x: Vec<f64>,
}

/// One subject's covariate path over `(0, horizon]`, equal consecutive rows
/// merged.
pub fn covariate_path<R: Rng>(spec: &ScenarioSpec, rng: &mut R) -> Vec<Segment> {
    let horizon = spec.horizon();
    let rows: Vec<Vec<f64>> = match spec.kind {
        ScenarioKind::CategoricalS1 | ScenarioKind::CategoricalS2 => {
            let a = piecewise_series(rng, 10, 5, 10, horizon, categorical_level).values;
            let b = piecewise_series(rng, 10, 5, 10, horizon, normal).values;
            let c = piecewise_series(rng, 10, 5, 10, horizon, categorical_level).values;
            (0..horizon)
                .map(|k| {
                    let (a1, a2) = ((a[k] == 2.0) as u8 as f64, (a[k] == 3.0) as u8 as f64);
                    let (c1, c2) = ((c[k] == 2.0) as u8 as f64, (c[k] == 3.0) as u8 as f64);
                    let b = b[k];
                    // `+ 0.0` turns the -0.0 of a zero dummy times a negative value into 0.0.
                    vec![a1, a2, b, a1 * b + 0.0, a2 * b + 0.0, c1, c2, c1 * b + 0.0, c2 * b + 0.0]
                })
                .collect()
        }
        ScenarioKind::Interactions => {
            let mains: Vec<Vec<f64>> = (0..spec.p_main)
                .map(|_| piecewise_series(rng, 2, 2, 3, horizon, normal).values)
                .collect();
            let pairs = interaction_pairs(spec.p_main);
            (0..horizon)
                .map(|k| {
                    let mut row: Vec<f64> = mains.iter().map(|m| m[k]).collect();
                    row.extend(pairs.iter().map(|&(a, b)| mains[a][k] * mains[b][k]));
                    row
                })
                .collect()
        }
        ScenarioKind::SparseGroup(_) => {
            let row: Vec<f64> = (0..spec.p()).map(|_| normal(rng)).collect();
            return vec![Segment {
                start: 0.0,
                stop: horizon as f64,
                x: row,
            }];
        }
    };
    let mut segments: Vec<Segment> = Vec::new();
    for (k, row) in rows.into_iter().enumerate() {
        match segments.last_mut() {
            Some(last) if last.x == row => last.stop = (k + 1) as f64,
            _ => segments.push(Segment {
                start: k as f64,
                stop: (k + 1) as f64,
                x: row,
            }),
        }
    }
    segments
}

/// Inverse-transform draw from the hazard `h0 exp(eta_s)` on each segment,
/// given `Exp(1)` variate `e`. `None` if no event happens within the path.
pub fn event_time(path: &[Segment], log_risk: &[f64], h0: f64, e: f64) -> Option<f64> {
    let mut remaining = e;
    for (seg, eta) in path.iter().zip(log_risk) {
        let rate = h0 * eta.exp();
        let mass = rate * (seg.stop - seg.start);
        if remaining <= mass {
            return Some(seg.start + remaining / rate);
        }
        remaining -= mass;
    }
    None
}

fn log_risks(path: &[Segment], beta: &[f64]) -> Vec<f64> {
    path.iter()
        .map(|s| s.x.iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect()
}

/// Frozen outcome-model constants of a design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub h0: f64,
    /// Censoring times are `c_max * U(0, 1)`.
    pub c_max: f64,
    pub horizon: f64,
    /// Target median of uncensored times.
    pub target_median: f64,
    pub target_censoring: f64,
    /// Monte Carlo values at the calibrated constants.
    pub median_uncensored: f64,
    pub censoring: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CalibrationKey {
    kind: ScenarioKind,
    p_main: usize,
    null_effects: bool,
    censoring_bits: u64,
}

/// Calibrates `h0` and the censoring scale so that uncensored times have
/// median half the horizon and the censoring fraction hits the target.
/// Results are cached per design.
pub fn calibrate(spec: &ScenarioSpec) -> Result<Calibration> {
    static CACHE: OnceLock<Mutex<HashMap<CalibrationKey, Calibration>>> = OnceLock::new();
    spec.validate()?;
    let key = CalibrationKey {
        kind: spec.kind,
        p_main: if spec.kind == ScenarioKind::Interactions { spec.p_main } else { 0 },
        null_effects: spec.null_effects,
        censoring_bits: spec.censoring_target.to_bits(),
    };
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(c) = cache.lock().expect("calibration cache").get(&key) {
        return Ok(*c);
    }
    let c = run_calibration(spec)?;
    cache.lock().expect("calibration cache").insert(key, c);
    Ok(c)
}

fn run_calibration(spec: &ScenarioSpec) -> Result<Calibration> {
    let truth = scenario_truth(spec)?;
    let beta = if spec.null_effects { vec![0.0; spec.p()] } else { truth.beta };
    let horizon = spec.horizon() as f64;
    let target_median = horizon / 2.0;
    let target = spec.censoring_target;

    let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
    let draws: Vec<(Vec<Segment>, Vec<f64>, f64, f64)> = (0..CALIBRATION_DRAWS)
        .map(|_| {
            let path = covariate_path(spec, &mut rng);
            let eta = log_risks(&path, &beta);
            let e: f64 = rng.sample(Exp1);
            let v: f64 = rng.random();
            (path, eta, e, v)
        })
        .collect();
    let times_for = |h0: f64| -> Vec<f64> {
        draws
            .iter()
            .map(|(path, eta, e, _)| event_time(path, eta, h0, *e).unwrap_or(f64::INFINITY))
            .collect()
    };
    let censored_share = |times: &[f64], c_max: f64| -> f64 {
        let censored = times
            .iter()
            .zip(&draws)
            .filter(|(t, d)| **t > horizon.min(c_max * d.3))
            .count();
        censored as f64 / times.len() as f64
    };
    // Censoring scale hitting the target for given event times.
    let fit_censoring = |times: &[f64]| -> Result<f64> {
        let admin = censored_share(times, f64::INFINITY);
        if admin > target {
            return Err(Error::InvalidArgument(format!(
                "censoring target {target} unattainable: administrative censoring alone is {admin:.3}"
            )));
        }
        let (mut lo, mut hi) = (0.0, horizon);
        while censored_share(times, hi) > target {
            hi *= 2.0;
            if hi > horizon * 1e6 {
                break;
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if censored_share(times, mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    };
    let median_uncensored = |times: &[f64], c_max: f64| -> f64 {
        let mut obs: Vec<f64> = times
            .iter()
            .zip(&draws)
            .filter(|(t, d)| **t <= horizon.min(c_max * d.3))
            .map(|(t, _)| *t)
            .collect();
        if obs.is_empty() {
            return f64::INFINITY;
        }
        obs.sort_by(f64::total_cmp);
        obs[obs.len() / 2]
    };

    // Median of uncensored times decreases with h0; bisect on log h0. With a
    // constant baseline the median target can be out of reach once
    // administrative censoring alone meets the censoring target, so the
    // attainable point closest to the target median is kept.
    let (mut lo, mut hi) = ((1e-6f64).ln(), (1e3f64).ln());
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let times = times_for(mid.exp());
        match fit_censoring(&times) {
            Ok(c_max) => {
                let m = median_uncensored(&times, c_max);
                if best.is_none_or(|b| (m - target_median).abs() < (b.2 - target_median).abs()) {
                    best = Some((mid.exp(), c_max, m, censored_share(&times, c_max)));
                }
                if m > target_median {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            // Too few events: raise the hazard.
            Err(_) => lo = mid,
        }
    }
    let (h0, c_max, median, censoring) = best.ok_or_else(|| {
        Error::InvalidArgument(format!("censoring target {target} unattainable for scenario {}", spec.kind))
    })?;
    if (censoring - target).abs() > 0.01 {
        return Err(Error::InvalidArgument(format!(
            "censoring target {target} unattainable for scenario {} (reached {censoring:.3})",
            spec.kind
        )));
    }
    Ok(Calibration {
        h0,
        c_max,
        horizon,
        target_median,
        target_censoring: target,
        median_uncensored: median,
        censoring,
    })
}

fn substream(seed: u64, purpose: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 40) | replication);
    rng
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: SurvivalDataset,
    pub truth: ScenarioTruth,
    pub structure: GroupingStructure,
    pub calibration: Calibration,
}

/// Dataset of replication `replication` of `spec`.
pub fn generate(spec: &ScenarioSpec, replication: u64) -> Result<SimulatedData> {
    let truth = scenario_truth(spec)?;
    let structure = scenario_structure(spec)?;
    let calibration = calibrate(spec)?;
    let beta = if spec.null_effects { vec![0.0; spec.p()] } else { truth.beta.clone() };
    let mut cov_rng = substream(spec.seed, STREAM_COVARIATES, replication);
    let mut event_rng = substream(spec.seed, STREAM_EVENTS, replication);
    let mut records = Vec::new();
    for i in 0..spec.n {
        let path = covariate_path(spec, &mut cov_rng);
        let eta = log_risks(&path, &beta);
        let e: f64 = event_rng.sample(Exp1);
        let v: f64 = event_rng.random();
        let t = event_time(&path, &eta, calibration.h0, e).unwrap_or(f64::INFINITY);
        let c = calibration.horizon.min(calibration.c_max * v);
        let (observed, event) = if t <= c { (t, true) } else { (c, false) };
        if observed <= 0.0 {
            continue;
        }
        for seg in &path {
            if seg.start >= observed {
                break;
            }
            let last = seg.stop >= observed;
            records.push(CountingRecord {
                subject_id: (i + 1).to_string(),
                start: seg.start,
                stop: if last { observed } else { seg.stop },
                event: last && event,
                covariates: seg.x.clone(),
            });
        }
    }
    let dataset = SurvivalDataset::new(records, truth.names.clone())?;
    Ok(SimulatedData {
        dataset,
        truth,
        structure,
        calibration,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub rules: Vec<CvRule>,
    /// Also refit with adaptive weights from the plain fit chosen by each rule.
    pub debias: bool,
    pub fit: FitConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            n_lambda: 30,
            lambda_min_ratio: 0.01,
            rules: vec![CvRule::OneSe],
            debias: false,
            fit: FitConfig::default(),
        }
    }
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationMetrics {
    pub replication: u64,
    /// `sox` for the plain fit, `sox.db` for the adaptive-weight refit.
    pub method: &'static str,
    pub rule: CvRule,
    pub lambda: f64,
    pub nonzero: usize,
    pub mr: Option<f64>,
    pub far: Option<f64>,
    pub mse: f64,
    pub r1s: Option<bool>,
    pub r2s: Option<bool>,
    pub rci: f64,
    /// Mean CV error at the chosen lambda.
    pub cve: f64,
    pub beta: Vec<f64>,
    /// Solver checks over every fit behind this row.
    pub diagnostics: PathDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentTable {
    pub rows: Vec<ReplicationMetrics>,
    pub calibration: Calibration,
}

pub fn rule_name(rule: CvRule) -> &'static str {
    match rule {
        CvRule::Min => "min",
        CvRule::OneSe => "1se",
    }
}

impl ExperimentTable {
    pub fn rows_for(&self, method: &str, rule: CvRule) -> impl Iterator<Item = &ReplicationMetrics> + '_ {
        let method = method.to_string();
        self.rows.iter().filter(move |r| r.method == method && r.rule == rule)
    }

    /// Per-replication rows followed by one `mean` row per method and rule.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let flag = |v: Option<bool>| v.map_or(String::new(), |b| (b as u8).to_string());
        let mut out = String::from("replication,method,rule,lambda,nonzero,mr,far,mse,r1s,r2s,rci,cve\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.replication,
                r.method,
                rule_name(r.rule),
                r.lambda,
                r.nonzero,
                opt(r.mr),
                opt(r.far),
                r.mse,
                flag(r.r1s),
                flag(r.r2s),
                r.rci,
                r.cve
            );
        }
        let mut keys: Vec<(&'static str, CvRule)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.method, r.rule)) {
                keys.push((r.method, r.rule));
            }
        }
        for (method, rule) in keys {
            let rows: Vec<&ReplicationMetrics> = self.rows_for(method, rule).collect();
            let n = rows.len() as f64;
            let mean = |f: &dyn Fn(&ReplicationMetrics) -> Option<f64>| -> Option<f64> {
                let vals: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            };
            let _ = writeln!(
                out,
                "mean,{},{},{},{},{},{},{},{},{},{},{}",
                method,
                rule_name(rule),
                rows.iter().map(|r| r.lambda).sum::<f64>() / n,
                rows.iter().map(|r| r.nonzero as f64).sum::<f64>() / n,
                opt(mean(&|r| r.mr)),
                opt(mean(&|r| r.far)),
                rows.iter().map(|r| r.mse).sum::<f64>() / n,
                opt(mean(&|r| r.r1s.map(|b| b as u8 as f64))),
                opt(mean(&|r| r.r2s.map(|b| b as u8 as f64))),
                rows.iter().map(|r| r.rci).sum::<f64>() / n,
                rows.iter().map(|r| r.cve).sum::<f64>() / n
            );
        }
        out
    }
}

/// Fold seed of a replication, from its own substream.
pub fn fold_seed(seed: u64, replication: u64) -> u64 {
    substream(seed, STREAM_FOLDS, replication).next_u64()
}

/// Generates, cross-validates and scores `replications` datasets. Rows are
/// ordered by replication, then method, then rule.
pub fn run_experiment(spec: &ScenarioSpec, replications: u64, config: &ExperimentConfig) -> Result<ExperimentTable> {
    if replications == 0 {
        return Err(Error::InvalidArgument("need at least one replication".into()));
    }
    if config.rules.is_empty() {
        return Err(Error::InvalidArgument("no selection rule requested".into()));
    }
    let calibration = calibrate(spec)?;
    let per_rep: Vec<Result<Vec<ReplicationMetrics>>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            run_replication(spec, r, config).map_err(|e| Error::AtReplication {
                replication: r as usize,
                source: Box::new(e),
            })
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_rep {
        rows.extend(r?);
    }
    Ok(ExperimentTable { rows, calibration })
}

fn run_replication(spec: &ScenarioSpec, replication: u64, config: &ExperimentConfig) -> Result<Vec<ReplicationMetrics>> {
    let sim = generate(spec, replication)?;
    let index = RiskIndex::build(&sim.dataset)?;
    let truth_beta = if spec.null_effects { vec![0.0; spec.p()] } else { sim.truth.beta.clone() };
    let seed = fold_seed(spec.seed, replication);
    let evaluate = |structure: &GroupingStructure| -> Result<CvResult> {
        let lambdas = lambda_sequence(&index, structure, config.n_lambda, config.lambda_min_ratio)?;
        cross_validate(&sim.dataset, structure, &lambdas, config.folds, seed, &config.fit)
    };
    let score = |method: &'static str, rule: CvRule, cv: &CvResult| -> Result<ReplicationMetrics> {
        let k = cv.chosen_index(rule);
        let beta = cv.full_path.fits[k].beta.clone();
        let all_rules: Vec<SelectionRule> = sim
            .truth
            .heredity_rules
            .iter()
            .chain(&sim.truth.collective_rules)
            .cloned()
            .collect();
        let m = metrics_for_fit(&beta, &truth_beta, &all_rules)?;
        let (h, c) = m.rules.split_at(sim.truth.heredity_rules.len());
        Ok(ReplicationMetrics {
            replication,
            method,
            rule,
            lambda: cv.lambdas[k],
            nonzero: cv.nonzero[k],
            mr: m.mr,
            far: m.far,
            mse: m.mse,
            r1s: (!h.is_empty()).then(|| h.iter().all(|&b| b)),
            r2s: (!c.is_empty()).then(|| c.iter().all(|&b| b)),
            rci: concordance(&index, &beta)?,
            cve: cv.mean_cve[k],
            beta,
            diagnostics: cv.diagnostics,
        })
    };
    let cv = evaluate(&sim.structure)?;
    let mut rows = Vec::new();
    for &rule in &config.rules {
        rows.push(score("sox", rule, &cv)?);
    }
    if config.debias {
        for &rule in &config.rules {
            let weighted = adaptive_weights(&cv.chosen_fit(rule).beta, &sim.structure)?;
            let refit = evaluate(&weighted)?;
            rows.push(score("sox.db", rule, &refit)?);
        }
    }
    Ok(rows)
}
