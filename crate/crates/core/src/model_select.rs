//! Regularization paths, cross-validation, adaptive weights and selection
//! metrics.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grouping::{check_rules, selection_support, GroupingStructure, SelectionRule, DEFAULT_SUPPORT_TOL};
use crate::optimizer::{fit, fixed_point_residual, FitConfig, FitResult};
use crate::survival::{RiskIndex, SurvivalDataset};

/// Floor on group magnitudes when inverting them into adaptive weights.
pub const ADAPTIVE_FLOOR: f64 = 1e-16;

/// `max_g ||grad f(0)_g||_1 / w_g`, an upper bound on the smallest lambda
/// with an all-zero solution.
pub fn lambda_max(index: &RiskIndex, structure: &GroupingStructure) -> Result<f64> {
    let grad = index.gradient(&vec![0.0; index.p()])?;
    let m = structure
        .groups()
        .iter()
        .map(|g| g.members.iter().map(|&j| grad[j].abs()).sum::<f64>() / g.weight)
        .fold(0.0, f64::max);
    if !(m > 0.0) {
        return Err(Error::InvalidData("gradient at zero vanishes on every group".into()));
    }
    Ok(m)
}

/// `n_lambda` log-spaced values from `lambda_max` down to
/// `lambda_max * min_ratio`.
pub fn lambda_sequence(
    index: &RiskIndex,
    structure: &GroupingStructure,
    n_lambda: usize,
    min_ratio: f64,
) -> Result<Vec<f64>> {
    if n_lambda < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 lambdas, got {n_lambda}")));
    }
    if !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("min_ratio must lie in (0, 1), got {min_ratio}")));
    }
    let top = lambda_max(index, structure)?;
    let step = min_ratio.ln() / (n_lambda - 1) as f64;
    Ok((0..n_lambda).map(|k| top * (step * k as f64).exp()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPath {
    pub lambdas: Vec<f64>,
    pub fits: Vec<FitResult>,
}

impl LambdaPath {
    pub fn nonzero_counts(&self) -> Vec<usize> {
        self.fits
            .iter()
            .map(|f| f.beta.iter().filter(|b| b.abs() > DEFAULT_SUPPORT_TOL).count())
            .collect()
    }
}

fn check_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty lambda sequence".into()));
    }
    if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) || lambdas.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidArgument("lambdas must be non-negative and strictly decreasing".into()));
    }
    Ok(())
}

/// Fits every lambda in order, warm-starting each fit from the previous one
/// and carrying over its step size.
pub fn solution_path(
    index: &RiskIndex,
    structure: &GroupingStructure,
    lambdas: &[f64],
    config: &FitConfig,
) -> Result<LambdaPath> {
    check_lambdas(lambdas)?;
    let mut fits: Vec<FitResult> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let previous = fits.last();
        let cfg = FitConfig {
            lambda,
            q0: previous.map_or(config.q0, |f| f.final_step),
            ..config.clone()
        };
        let warm = previous.map(|f| f.beta.as_slice());
        let r = fit(index, structure, &cfg, warm).map_err(|e| Error::AtLambda {
            lambda,
            source: Box::new(e),
        })?;
        fits.push(r);
    }
    Ok(LambdaPath {
        lambdas: lambdas.to_vec(),
        fits,
    })
}

/// Fold error `2 (f_full - f_train) / R`: the held-out deviance per test
/// event, where `f` is the negative log partial likelihood.
pub fn cv_error(full: &RiskIndex, train: &RiskIndex, test_events: usize, beta: &[f64]) -> Result<f64> {
    if test_events == 0 {
        return Err(Error::EmptyFold { fold: 0 });
    }
    let p = full.neg_log_partial_likelihood(beta)?;
    let q = train.neg_log_partial_likelihood(beta)?;
    Ok(2.0 * (p - q) / test_events as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvRule {
    Min,
    OneSe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub lambdas: Vec<f64>,
    pub mean_cve: Vec<f64>,
    pub se_cve: Vec<f64>,
    /// Support sizes of the full-data path.
    pub nonzero: Vec<usize>,
    pub index_min: usize,
    pub index_1se: usize,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    /// `fold_errors[fold][lambda]`.
    pub fold_errors: Vec<Vec<f64>>,
    /// Fold of each subject, in first-appearance order.
    pub fold_of_subject: Vec<usize>,
    pub full_path: LambdaPath,
    /// Descent and fixed-point checks over the fold and full-data paths.
    pub diagnostics: PathDiagnostics,
}

/// Counts of fits on a path that break the solver's guarantees.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PathDiagnostics {
    pub fits: usize,
    pub unconverged: usize,
    /// Fits whose objective trace rises by more than the relative slack.
    pub ascents: usize,
    /// Converged fits whose fixed-point residual is not below `tol`.
    pub residual_violations: usize,
    /// Largest residual over converged fits.
    pub max_residual: f64,
}

impl PathDiagnostics {
    pub fn merge(self, other: Self) -> Self {
        Self {
            fits: self.fits + other.fits,
            unconverged: self.unconverged + other.unconverged,
            ascents: self.ascents + other.ascents,
            residual_violations: self.residual_violations + other.residual_violations,
            max_residual: self.max_residual.max(other.max_residual),
        }
    }

    pub fn clean(&self) -> bool {
        self.ascents == 0 && self.residual_violations == 0
    }
}

/// Relative slack allowed between consecutive objective values.
pub const TRACE_SLACK: f64 = 1e-12;

pub fn path_diagnostics(
    index: &RiskIndex,
    structure: &GroupingStructure,
    path: &LambdaPath,
    config: &FitConfig,
) -> Result<PathDiagnostics> {
    // Residuals live in the coordinates the solver iterated in.
    let (scaled, scales) = if config.standardize {
        let scales = index.column_scales();
        (Some(index.scaled(&scales)?), scales)
    } else {
        (None, vec![1.0; index.p()])
    };
    let working = scaled.as_ref().unwrap_or(index);
    let mut d = PathDiagnostics::default();
    for (&lambda, f) in path.lambdas.iter().zip(&path.fits) {
        d.fits += 1;
        if f.objective_trace
            .windows(2)
            .any(|w| w[1] > w[0] + TRACE_SLACK * w[0].abs().max(1.0))
        {
            d.ascents += 1;
        }
        if !f.converged {
            d.unconverged += 1;
            continue;
        }
        let beta: Vec<f64> = f.beta.iter().zip(&scales).map(|(b, s)| b * s).collect();
        let r = fixed_point_residual(working, structure, lambda, f.final_step, &beta)?;
        d.max_residual = d.max_residual.max(r);
        if !(r < config.tol) {
            d.residual_violations += 1;
        }
    }
    Ok(d)
}

impl CvResult {
    pub fn chosen_index(&self, rule: CvRule) -> usize {
        match rule {
            CvRule::Min => self.index_min,
            CvRule::OneSe => self.index_1se,
        }
    }

    /// Full-data fit at the lambda picked by `rule`.
    pub fn chosen_fit(&self, rule: CvRule) -> &FitResult {
        &self.full_path.fits[self.chosen_index(rule)]
    }

    /// `lambda,mean_cve,se_cve,nonzero,is_min,is_1se`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("lambda,mean_cve,se_cve,nonzero,is_min,is_1se\n");
        for k in 0..self.lambdas.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.lambdas[k],
                self.mean_cve[k],
                self.se_cve[k],
                self.nonzero[k],
                k == self.index_min,
                k == self.index_1se
            );
        }
        out
    }
}

/// Indices of the minimum mean error and of the largest lambda within one
/// standard error of it. `lambdas` must be decreasing.
pub fn select_lambda(mean_cve: &[f64], se_cve: &[f64]) -> (usize, usize) {
    let index_min = mean_cve
        .iter()
        .enumerate()
        .fold(0, |best, (k, &m)| if m < mean_cve[best] { k } else { best });
    let bound = mean_cve[index_min] + se_cve[index_min];
    let index_1se = mean_cve.iter().position(|&m| m <= bound).unwrap_or(index_min);
    (index_min, index_1se)
}

/// Subject-level fold labels, stratified on whether the subject has an event.
pub fn assign_folds(dataset: &SurvivalDataset, k: usize, seed: u64) -> Vec<usize> {
    let subjects = dataset.subjects();
    let records = dataset.records();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut with_event, mut without): (Vec<usize>, Vec<usize>) =
        (0..subjects.len()).partition(|&s| subjects[s].1.iter().any(|&i| records[i].event));
    with_event.shuffle(&mut rng);
    without.shuffle(&mut rng);
    let mut folds = vec![0; subjects.len()];
    for (pos, &s) in with_event.iter().chain(&without).enumerate() {
        folds[s] = pos % k;
    }
    folds
}

pub fn cross_validate(
    dataset: &SurvivalDataset,
    structure: &GroupingStructure,
    lambdas: &[f64],
    k: usize,
    seed: u64,
    config: &FitConfig,
) -> Result<CvResult> {
    check_lambdas(lambdas)?;
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let subjects = dataset.subjects();
    if k > subjects.len() {
        return Err(Error::InvalidArgument(format!(
            "{k} folds requested for {} subjects",
            subjects.len()
        )));
    }
    let fold_of_subject = assign_folds(dataset, k, seed);
    let records = dataset.records();
    let full = RiskIndex::build(dataset)?;

    let mut splits = Vec::with_capacity(k);
    for fold in 0..k {
        let mut train = Vec::new();
        let mut test_events = 0;
        for (s, (_, recs)) in subjects.iter().enumerate() {
            if fold_of_subject[s] == fold {
                test_events += recs.iter().filter(|&&i| records[i].event).count();
            } else {
                train.extend_from_slice(recs);
            }
        }
        if test_events == 0 {
            return Err(Error::EmptyFold { fold: fold + 1 });
        }
        train.sort_unstable();
        let train = dataset
            .subset(&train)
            .and_then(|d| RiskIndex::build(&d))
            .map_err(|_| Error::EmptyFold { fold: fold + 1 })?;
        splits.push((train, test_events));
    }

    // Fold paths plus the full-data path, in parallel; collect keeps order.
    let paths: Vec<Result<LambdaPath>> = (0..=k)
        .into_par_iter()
        .map(|job| {
            if job == k {
                solution_path(&full, structure, lambdas, config)
            } else {
                solution_path(&splits[job].0, structure, lambdas, config)
            }
        })
        .collect();
    let mut paths = paths.into_iter().collect::<Result<Vec<_>>>()?;
    let diagnostics = paths
        .par_iter()
        .enumerate()
        .map(|(job, path)| {
            let index = if job == k { &full } else { &splits[job].0 };
            path_diagnostics(index, structure, path, config)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(PathDiagnostics::default(), PathDiagnostics::merge);
    let full_path = paths.pop().expect("full-data path");

    let fold_errors: Vec<Vec<f64>> = paths
        .par_iter()
        .zip(&splits)
        .map(|(path, (train, r))| {
            path.fits
                .iter()
                .map(|f| cv_error(&full, train, *r, &f.beta))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let kf = k as f64;
    let n_lambda = lambdas.len();
    let mean_cve: Vec<f64> = (0..n_lambda)
        .map(|l| fold_errors.iter().map(|e| e[l]).sum::<f64>() / kf)
        .collect();
    let se_cve: Vec<f64> = (0..n_lambda)
        .map(|l| {
            let var = fold_errors.iter().map(|e| (e[l] - mean_cve[l]).powi(2)).sum::<f64>() / (kf - 1.0);
            (var / kf).sqrt()
        })
        .collect();
    let (index_min, index_1se) = select_lambda(&mean_cve, &se_cve);
    Ok(CvResult {
        lambdas: lambdas.to_vec(),
        nonzero: full_path.nonzero_counts(),
        lambda_min: lambdas[index_min],
        lambda_1se: lambdas[index_1se],
        index_min,
        index_1se,
        mean_cve,
        se_cve,
        fold_errors,
        fold_of_subject,
        full_path,
        diagnostics,
    })
}

/// Same groups with `w_g = 1 / max(max_{j in g} |beta_j|, 1e-16)`.
pub fn adaptive_weights(prior_beta: &[f64], structure: &GroupingStructure) -> Result<GroupingStructure> {
    if prior_beta.len() != structure.p() {
        return Err(Error::Dimension {
            expected: structure.p(),
            found: prior_beta.len(),
        });
    }
    let weights: Vec<f64> = structure
        .groups()
        .iter()
        .map(|g| {
            let m = g.members.iter().fold(0.0f64, |m, &j| m.max(prior_beta[j].abs()));
            1.0 / m.max(ADAPTIVE_FLOOR)
        })
        .collect();
    structure.reweighted(&weights)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Share of true covariates missed; absent when there are none.
    pub mr: Option<f64>,
    /// Share of noise covariates selected; absent when there are none.
    pub far: Option<f64>,
    /// `||beta_hat - beta||^2 / p`.
    pub mse: f64,
    pub rules: Vec<bool>,
}

pub fn metrics(
    selected: &[usize],
    beta_hat: &[f64],
    truth: &[f64],
    rules: &[SelectionRule],
) -> Result<MetricReport> {
    if beta_hat.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            found: beta_hat.len(),
        });
    }
    let p = truth.len();
    let mut chosen = vec![false; p];
    for &j in selected {
        if j >= p {
            return Err(Error::InvalidArgument(format!("selected index {} out of range", j + 1)));
        }
        chosen[j] = true;
    }
    let true_set: Vec<usize> = (0..p).filter(|&j| truth[j] != 0.0).collect();
    let noise: Vec<usize> = (0..p).filter(|&j| truth[j] == 0.0).collect();
    let mr = (!true_set.is_empty())
        .then(|| true_set.iter().filter(|&&j| !chosen[j]).count() as f64 / true_set.len() as f64);
    let far = (!noise.is_empty()).then(|| noise.iter().filter(|&&j| chosen[j]).count() as f64 / noise.len() as f64);
    let mse = beta_hat.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p as f64;
    Ok(MetricReport {
        mr,
        far,
        mse,
        rules: check_rules(selected, rules),
    })
}

/// Metrics for a fitted coefficient vector, selecting `|beta_j| > 1e-10`.
pub fn metrics_for_fit(beta_hat: &[f64], truth: &[f64], rules: &[SelectionRule]) -> Result<MetricReport> {
    let selected = selection_support(beta_hat, DEFAULT_SUPPORT_TOL)?;
    metrics(&selected, beta_hat, truth, rules)
}

/// Risk-set concordance: over pairs (event at `t_l`, non-failing member of
/// `R_l`), the share where the failing record has the larger linear
/// predictor, ties counting one half.
pub fn concordance(index: &RiskIndex, beta: &[f64]) -> Result<f64> {
    let eta = index.linear_predictor(beta)?;
    let mut agree = 0.0;
    let mut pairs = 0usize;
    let mut is_event = vec![false; index.n_records()];
    for l in 0..index.n_event_times() {
        let events = index.event_set(l);
        for &i in events {
            is_event[i] = true;
        }
        for &i in events {
            for &j in index.risk_set(l) {
                if is_event[j] {
                    continue;
                }
                pairs += 1;
                if eta[i] > eta[j] {
                    agree += 1.0;
                } else if eta[i] == eta[j] {
                    agree += 0.5;
                }
            }
        }
        for &i in events {
            is_event[i] = false;
        }
    }
    if pairs == 0 {
        return Err(Error::InvalidData("no comparable pairs for concordance".into()));
    }
    Ok(agree / pairs as f64)
}
