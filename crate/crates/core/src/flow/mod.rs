//! Proximal operator of the overlapping group ℓ∞ penalty, computed through a
//! sequence of projections and maximum flows.

mod maxflow;
mod network;
mod projection;

pub use maxflow::FlowNetwork;
pub use network::{build_network, ProxNetwork};
pub use projection::{project_capped_simplex, project_l1_ball};

use log::{debug, trace};

use crate::error::{Error, Result};
use crate::grouping::GroupingStructure;

/// Sink arcs count as saturated when the shortfall is within this fraction of
/// `max(1, capacity)`.
pub const SATURATION_TOL: f64 = 1e-10;

/// Per-group dual vectors: `(covariate, value)` pairs carrying the sign of
/// the prox input.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DualVariables {
    pub per_group: Vec<Vec<(usize, f64)>>,
}

impl DualVariables {
    /// `sum_g xi_g` as a dense vector of length `p`.
    pub fn aggregate(&self, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; p];
        for g in &self.per_group {
            for &(j, v) in g {
                out[j] += v;
            }
        }
        out
    }

    /// `||xi_g||_1` for each group.
    pub fn l1_norms(&self) -> Vec<f64> {
        self.per_group
            .iter()
            .map(|g| g.iter().map(|(_, v)| v.abs()).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult {
    pub beta: Vec<f64>,
    pub dual: DualVariables,
}

/// `argmin_b 0.5 ||u - b||^2 + scale * sum_g w_g max_{j in g} |b_j|`.
pub fn prox(u: &[f64], structure: &GroupingStructure, scale: f64) -> Result<ProxResult> {
    let p = structure.p();
    if u.len() != p {
        return Err(Error::Dimension {
            expected: p,
            found: u.len(),
        });
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("prox scale must be finite and non-negative, got {scale}")));
    }
    if let Some(j) = u.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("prox input has non-finite entry at {}", j + 1)));
    }
    structure.validate().map_err(Error::Grouping)?;

    let groups = structure.groups();
    let abs_u: Vec<f64> = u.iter().map(|x| x.abs()).collect();
    let mut xi: Vec<Vec<(usize, f64)>> = vec![Vec::new(); groups.len()];
    if scale == 0.0 {
        return Ok(ProxResult {
            beta: u.to_vec(),
            dual: DualVariables { per_group: xi },
        });
    }
    let caps: Vec<f64> = groups.iter().map(|g| scale * g.weight).collect();

    // A group whose budget covers all of its remaining entries is zeroed
    // outright and its entries leave the problem; repeat until stable.
    let mut var_active = vec![true; p];
    let mut group_active = vec![true; groups.len()];
    loop {
        let mut changed = false;
        for (k, g) in groups.iter().enumerate() {
            if !group_active[k] {
                continue;
            }
            let mass: f64 = g.members.iter().filter(|&&j| var_active[j]).map(|&j| abs_u[j]).sum();
            let has_active = g.members.iter().any(|&j| var_active[j]);
            if !has_active {
                group_active[k] = false;
                continue;
            }
            if caps[k] >= mass {
                for &j in &g.members {
                    if var_active[j] {
                        var_active[j] = false;
                        xi[k].push((j, abs_u[j]));
                    }
                }
                group_active[k] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // |beta_j|: zero for absorbed entries, |u_j| where no group applies, and
    // set by the flow leaves otherwise.
    let mut magnitude: Vec<f64> = (0..p).map(|j| if var_active[j] { abs_u[j] } else { 0.0 }).collect();
    let sub_groups: Vec<usize> = (0..groups.len()).filter(|&k| group_active[k]).collect();
    let mut covered = vec![false; p];
    for &k in &sub_groups {
        for &j in &groups[k].members {
            covered[j] = true;
        }
    }
    let sub_vars: Vec<usize> = (0..p).filter(|&j| var_active[j] && covered[j]).collect();
    if !sub_groups.is_empty() {
        let mut solver = FlowSolver {
            structure,
            abs_u: &abs_u,
            caps: &caps,
            xi: &mut xi,
            magnitude: &mut magnitude,
            splits: 0,
            split_limit: sub_groups.len().saturating_sub(1),
        };
        solver.compute_flow(sub_vars, sub_groups)?;
    }

    let beta: Vec<f64> = magnitude
        .iter()
        .zip(u)
        .map(|(&m, x)| if m > 0.0 { m.copysign(*x) } else { 0.0 })
        .collect();
    for g in xi.iter_mut() {
        for (j, v) in g.iter_mut() {
            *v = v.copysign(u[*j]);
        }
        g.retain(|&(_, v)| v != 0.0);
        g.sort_unstable_by_key(|&(j, _)| j);
    }
    Ok(ProxResult {
        beta,
        dual: DualVariables { per_group: xi },
    })
}

struct FlowSolver<'a> {
    structure: &'a GroupingStructure,
    abs_u: &'a [f64],
    caps: &'a [f64],
    xi: &'a mut [Vec<(usize, f64)>],
    magnitude: &'a mut [f64],
    splits: usize,
    split_limit: usize,
}

impl FlowSolver<'_> {
    fn compute_flow(&mut self, vars: Vec<usize>, groups: Vec<usize>) -> Result<()> {
        let mut stack = vec![(vars, groups)];
        while let Some((vars, groups)) = stack.pop() {
            if vars.is_empty() || groups.is_empty() {
                continue;
            }
            let budget: f64 = groups.iter().map(|&k| self.caps[k]).sum();
            let target: Vec<f64> = vars.iter().map(|&j| self.abs_u[j]).collect();
            let gamma = project_capped_simplex(&target, budget);
            let mut net = ProxNetwork::new(self.structure, &groups, &vars, self.caps, &gamma);
            net.solve();
            trace!("flow network\n{}", net.network.edge_list());

            let saturated = vars.iter().enumerate().all(|(i, _)| {
                gamma[i] - net.network.flow(net.sink_arcs[i]) <= SATURATION_TOL * gamma[i].max(1.0)
            });
            if saturated {
                self.record(&net, &groups, &vars, &gamma);
                continue;
            }
            let eps = 1e-14 * budget.max(1.0);
            let side = net.network.source_side(net.source, eps);
            let (mut g_plus, mut g_minus) = (Vec::new(), Vec::new());
            for (i, &k) in groups.iter().enumerate() {
                if side[net.group_nodes[i]] {
                    g_plus.push(k);
                } else {
                    g_minus.push(k);
                }
            }
            if g_plus.is_empty() || g_minus.is_empty() {
                // Shortfall at rounding level only; keep the flow as is.
                debug!("trivial cut with {} groups; accepting flow", groups.len());
                self.record(&net, &groups, &vars, &gamma);
                continue;
            }
            self.splits += 1;
            if self.splits > self.split_limit {
                return Err(Error::RecursionLimit {
                    limit: self.split_limit,
                });
            }
            let (mut v_plus, mut v_minus) = (Vec::new(), Vec::new());
            for (i, &j) in vars.iter().enumerate() {
                if side[net.var_nodes[i]] {
                    v_plus.push(j);
                } else {
                    v_minus.push(j);
                }
            }
            stack.push((self.covered(v_plus, &g_plus), g_plus));
            stack.push((self.covered(v_minus, &g_minus), g_minus));
        }
        Ok(())
    }

    /// Drops covariates no group of the subproblem contains; they keep a zero
    /// aggregate dual.
    fn covered(&self, vars: Vec<usize>, groups: &[usize]) -> Vec<usize> {
        let all = self.structure.groups();
        vars.into_iter()
            .filter(|j| groups.iter().any(|&k| all[k].members.binary_search(j).is_ok()))
            .collect()
    }

    /// Stores a solved leaf: the aggregate dual of each covariate is its
    /// projection value, so flows into it are rescaled to sum to exactly that.
    fn record(&mut self, net: &ProxNetwork, groups: &[usize], vars: &[usize], gamma: &[f64]) {
        let inflow: Vec<f64> = net.sink_arcs.iter().map(|&a| net.network.flow(a)).collect();
        for (vi, &j) in vars.iter().enumerate() {
            self.magnitude[j] = if inflow[vi] > 0.0 {
                self.abs_u[j] - gamma[vi]
            } else {
                self.abs_u[j]
            };
        }
        for (gi, &k) in groups.iter().enumerate() {
            for &(arc, vi) in &net.member_arcs[gi] {
                let f = net.network.flow(arc);
                if f > 0.0 {
                    self.xi[k].push((vars[vi], f * (gamma[vi] / inflow[vi])));
                }
            }
        }
    }
}
