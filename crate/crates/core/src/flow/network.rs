use super::maxflow::FlowNetwork;
use super::projection::project_capped_simplex;
use crate::error::{Error, Result};
use crate::grouping::GroupingStructure;

/// Flow network of a prox subproblem: source -> group (capacity
/// `scale * weight`), group -> member covariate (unbounded), covariate ->
/// sink (capacity from the projection step).
#[derive(Debug, Clone)]
pub struct ProxNetwork {
    pub network: FlowNetwork,
    pub source: usize,
    pub sink: usize,
    pub group_nodes: Vec<usize>,
    pub var_nodes: Vec<usize>,
    pub source_arcs: Vec<usize>,
    /// For each group, `(arc, position in the covariate list)`.
    pub member_arcs: Vec<Vec<(usize, usize)>>,
    pub sink_arcs: Vec<usize>,
}

impl ProxNetwork {
    /// `groups` and `vars` index into `structure`; `caps` is indexed by group
    /// and `sink_caps` by position in `vars`.
    pub fn new(
        structure: &GroupingStructure,
        groups: &[usize],
        vars: &[usize],
        caps: &[f64],
        sink_caps: &[f64],
    ) -> Self {
        let source = 0;
        let sink = 1;
        let n = 2 + groups.len() + vars.len();
        let mut network = FlowNetwork::new(n);
        let group_nodes: Vec<usize> = (0..groups.len()).map(|i| 2 + i).collect();
        let var_nodes: Vec<usize> = (0..vars.len()).map(|i| 2 + groups.len() + i).collect();
        // Larger than any feasible flow, with headroom against rounding.
        let unbounded = 2.0 * groups.iter().map(|&k| caps[k]).sum::<f64>() + 1.0;

        let source_arcs = groups
            .iter()
            .zip(&group_nodes)
            .map(|(&k, &node)| network.add_arc(source, node, caps[k]))
            .collect();
        let all = structure.groups();
        let member_arcs = groups
            .iter()
            .zip(&group_nodes)
            .map(|(&k, &node)| {
                all[k]
                    .members
                    .iter()
                    .filter_map(|j| vars.binary_search(j).ok())
                    .map(|vi| (network.add_arc(node, var_nodes[vi], unbounded), vi))
                    .collect()
            })
            .collect();
        let sink_arcs = var_nodes
            .iter()
            .zip(sink_caps)
            .map(|(&node, &c)| network.add_arc(node, sink, c))
            .collect();
        Self {
            network,
            source,
            sink,
            group_nodes,
            var_nodes,
            source_arcs,
            member_arcs,
            sink_arcs,
        }
    }

    pub fn solve(&mut self) -> f64 {
        self.network.max_flow(self.source, self.sink)
    }
}

/// Root network of `prox(u, structure, scale)` over all groups and all
/// grouped covariates, with sink capacities from projecting `|u|`.
pub fn build_network(u: &[f64], structure: &GroupingStructure, scale: f64) -> Result<ProxNetwork> {
    if u.len() != structure.p() {
        return Err(Error::Dimension {
            expected: structure.p(),
            found: u.len(),
        });
    }
    structure.validate().map_err(Error::Grouping)?;
    let groups: Vec<usize> = (0..structure.groups().len()).collect();
    let mut covered = vec![false; structure.p()];
    for g in structure.groups() {
        for &j in &g.members {
            covered[j] = true;
        }
    }
    let vars: Vec<usize> = (0..structure.p()).filter(|&j| covered[j]).collect();
    let caps: Vec<f64> = structure.groups().iter().map(|g| scale * g.weight).collect();
    let target: Vec<f64> = vars.iter().map(|&j| u[j].abs()).collect();
    let gamma = project_capped_simplex(&target, caps.iter().sum());
    Ok(ProxNetwork::new(structure, &groups, &vars, &caps, &gamma))
}
