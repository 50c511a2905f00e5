//! Proximal gradient descent with backtracking line search for
//! `f(beta) + lambda * Omega(beta)`.

use log::debug;

use crate::error::{Error, Result};
use crate::flow::prox;
use crate::grouping::GroupingStructure;
use crate::survival::RiskIndex;

/// Step sizes below `q0` times this abort the line search.
const MIN_STEP_RATIO: f64 = 1e-14;
/// Relative slack for the sufficient-decrease test, absorbing rounding in `f`.
const DESCENT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub lambda: f64,
    /// Stop when the l1 change between iterates falls below this.
    pub tol: f64,
    /// Step shrinkage factor on a failed line search.
    pub alpha: f64,
    pub q0: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    /// Fit on unit-variance columns and map coefficients back.
    pub standardize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            tol: 1e-5,
            alpha: 0.5,
            q0: 1.0,
            max_iter: 10_000,
            max_backtracks: 60,
            standardize: false,
        }
    }
}

impl FitConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.q0 > 0.0 && self.q0.is_finite()) {
            return bad("q0 must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: Vec<f64>,
    /// `f + lambda * Omega` at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_step: f64,
    pub penalty_value: f64,
    /// Step size used by each accepted iteration.
    pub step_history: Vec<f64>,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the starting value")
    }
}

/// `sum_g w_g max_{j in g} |beta_j|`.
pub fn penalty(beta: &[f64], structure: &GroupingStructure) -> f64 {
    structure
        .groups()
        .iter()
        .map(|g| g.weight * g.members.iter().fold(0.0f64, |m, &j| m.max(beta[j].abs())))
        .sum()
}

pub fn fit(
    index: &RiskIndex,
    structure: &GroupingStructure,
    config: &FitConfig,
    warm_start: Option<&[f64]>,
) -> Result<FitResult> {
    config.validate()?;
    let p = index.p();
    if structure.p() != p {
        return Err(Error::Dimension {
            expected: p,
            found: structure.p(),
        });
    }
    structure.validate().map_err(Error::Grouping)?;
    if let Some(w) = warm_start {
        if w.len() != p {
            return Err(Error::Dimension {
                expected: p,
                found: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("warm start has non-finite entries".into()));
        }
    }
    if !config.standardize {
        return descend(index, structure, config, warm_start);
    }
    let scales = index.column_scales();
    let scaled = index.scaled(&scales)?;
    let start: Option<Vec<f64>> = warm_start.map(|w| w.iter().zip(&scales).map(|(b, s)| b * s).collect());
    let mut out = descend(&scaled, structure, config, start.as_deref())?;
    for (b, s) in out.beta.iter_mut().zip(&scales) {
        *b /= s;
    }
    out.penalty_value = penalty(&out.beta, structure);
    Ok(out)
}

fn descend(
    index: &RiskIndex,
    structure: &GroupingStructure,
    config: &FitConfig,
    warm_start: Option<&[f64]>,
) -> Result<FitResult> {
    let lambda = config.lambda;
    let mut beta = warm_start.map_or_else(|| vec![0.0; index.p()], <[f64]>::to_vec);
    let (mut f, mut grad) = index.value_and_gradient(&beta)?;
    let mut objective = f + lambda * penalty(&beta, structure);
    let mut trace = vec![objective];
    let mut steps = Vec::new();
    let mut q = config.q0;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < config.max_iter {
        let mut backtracks = 0;
        loop {
            let u: Vec<f64> = beta.iter().zip(&grad).map(|(b, g)| b - q * g).collect();
            let trial = prox(&u, structure, q * lambda)?.beta;
            let delta: Vec<f64> = trial.iter().zip(&beta).map(|(a, b)| a - b).collect();
            let change: f64 = delta.iter().map(|d| d.abs()).sum();
            if backtracks == 0 && change < config.tol {
                // The full step from beta is the fixed-point residual at q.
                converged = true;
                break 'outer;
            }
            let evaluated = match index.value_and_gradient(&trial) {
                Ok(v) => Some(v),
                Err(Error::Overflow(_)) => None,
                Err(e) => return Err(e),
            };
            if let Some((f_trial, g_trial)) = evaluated {
                let linear: f64 = grad.iter().zip(&delta).map(|(g, d)| g * d).sum();
                let quad: f64 = delta.iter().map(|d| d * d).sum::<f64>() / (2.0 * q);
                let bound = f + linear + quad + DESCENT_SLACK * f.abs().max(1.0);
                if f_trial <= bound {
                    let obj_trial = f_trial + lambda * penalty(&trial, structure);
                    // Near the optimum the objective moves at rounding level;
                    // rejecting such steps would only shrink q.
                    if obj_trial <= objective + DESCENT_SLACK * objective.abs().max(1.0) {
                        beta = trial;
                        f = f_trial;
                        grad = g_trial;
                        objective = obj_trial;
                        trace.push(objective);
                        steps.push(q);
                        iterations += 1;
                        break;
                    }
                    if change < config.tol {
                        // The step only moves the objective at rounding level.
                        converged = true;
                        break 'outer;
                    }
                }
            }
            backtracks += 1;
            q *= config.alpha;
            if backtracks > config.max_backtracks || q < MIN_STEP_RATIO * config.q0 {
                return Err(Error::LineSearch { step: q, backtracks });
            }
        }
    }
    if !converged {
        debug!("no convergence after {iterations} iterations at lambda {lambda}");
    }
    Ok(FitResult {
        penalty_value: penalty(&beta, structure),
        beta,
        objective_trace: trace,
        iterations,
        converged,
        final_step: q,
        step_history: steps,
    })
}

/// `||beta - prox(beta - q grad f(beta))||_1`, zero exactly at a minimizer.
pub fn fixed_point_residual(
    index: &RiskIndex,
    structure: &GroupingStructure,
    lambda: f64,
    q: f64,
    beta: &[f64],
) -> Result<f64> {
    let grad = index.gradient(beta)?;
    let u: Vec<f64> = beta.iter().zip(&grad).map(|(b, g)| b - q * g).collect();
    let next = prox(&u, structure, q * lambda)?.beta;
    Ok(next.iter().zip(beta).map(|(a, b)| (a - b).abs()).sum())
}
