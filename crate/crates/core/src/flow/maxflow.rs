//! Highest-label push-relabel maximum flow on `f64` capacities.

use std::collections::VecDeque;
use std::fmt::Write as _;

/// Directed graph with paired residual arcs: arc `2k` is the forward arc of
/// `add_arc` call `k` and `2k + 1` its reverse.
#[derive(Debug, Clone, Default)]
pub struct FlowNetwork {
    adjacency: Vec<Vec<usize>>,
    head: Vec<usize>,
    tail: Vec<usize>,
    capacity: Vec<f64>,
    residual: Vec<f64>,
}

impl FlowNetwork {
    pub fn new(n_nodes: usize) -> Self {
        Self {
            adjacency: vec![Vec::new(); n_nodes],
            ..Self::default()
        }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    /// Number of forward arcs.
    pub fn arc_count(&self) -> usize {
        self.head.len() / 2
    }

    /// Adds an arc and returns its id.
    pub fn add_arc(&mut self, from: usize, to: usize, capacity: f64) -> usize {
        let id = self.head.len();
        for (a, b, c) in [(from, to, capacity), (to, from, 0.0)] {
            self.adjacency[a].push(self.head.len());
            self.tail.push(a);
            self.head.push(b);
            self.capacity.push(c);
            self.residual.push(c);
        }
        id
    }

    pub fn set_capacity(&mut self, arc: usize, capacity: f64) {
        self.capacity[arc] = capacity;
        self.reset_flow_on(arc);
    }

    fn reset_flow_on(&mut self, arc: usize) {
        self.residual[arc] = self.capacity[arc];
        self.residual[arc ^ 1] = 0.0;
    }

    pub fn reset_flow(&mut self) {
        for arc in (0..self.head.len()).step_by(2) {
            self.reset_flow_on(arc);
        }
    }

    pub fn capacity(&self, arc: usize) -> f64 {
        self.capacity[arc]
    }

    /// Flow currently carried by a forward arc.
    pub fn flow(&self, arc: usize) -> f64 {
        self.residual[arc ^ 1]
    }

    pub fn endpoints(&self, arc: usize) -> (usize, usize) {
        (self.tail[arc], self.head[arc])
    }

    /// One line per forward arc: `from to capacity flow`.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for arc in (0..self.head.len()).step_by(2) {
            let _ = writeln!(
                out,
                "{} {} {} {}",
                self.tail[arc],
                self.head[arc],
                self.capacity[arc],
                self.flow(arc)
            );
        }
        out
    }

    /// Nodes reachable from `source` through arcs with residual above `eps`.
    pub fn source_side(&self, source: usize, eps: f64) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        seen[source] = true;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &a in &self.adjacency[u] {
                let v = self.head[a];
                if !seen[v] && self.residual[a] > eps {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Computes a maximum flow from `source` to `sink`, starting from zero
    /// flow, and returns its value. On return every arc carries a feasible
    /// flow with conservation at all inner nodes.
    pub fn max_flow(&mut self, source: usize, sink: usize) -> f64 {
        assert_ne!(source, sink, "source and sink must differ");
        self.reset_flow();
        let mut solver = PushRelabel::new(self, source, sink);
        solver.run(self);
        solver.excess[sink]
    }
}

struct PushRelabel {
    n: usize,
    source: usize,
    sink: usize,
    label: Vec<usize>,
    excess: Vec<f64>,
    current: Vec<usize>,
    buckets: Vec<Vec<usize>>,
    in_bucket: Vec<bool>,
    label_count: Vec<usize>,
    highest: usize,
    relabels_since_global: usize,
}

impl PushRelabel {
    fn new(net: &FlowNetwork, source: usize, sink: usize) -> Self {
        let n = net.node_count();
        Self {
            n,
            source,
            sink,
            label: vec![0; n],
            excess: vec![0.0; n],
            current: vec![0; n],
            buckets: vec![Vec::new(); 2 * n + 1],
            in_bucket: vec![false; n],
            label_count: vec![0; 2 * n + 1],
            highest: 0,
            relabels_since_global: 0,
        }
    }

    fn run(&mut self, net: &mut FlowNetwork) {
        for k in 0..net.adjacency[self.source].len() {
            let a = net.adjacency[self.source][k];
            let r = net.residual[a];
            if r > 0.0 {
                let v = net.head[a];
                net.residual[a] = 0.0;
                net.residual[a ^ 1] += r;
                self.excess[v] += r;
                self.excess[self.source] -= r;
            }
        }
        self.global_relabel(net);
        while let Some(u) = self.pop_highest() {
            self.discharge(net, u);
            if self.relabels_since_global >= self.n {
                self.global_relabel(net);
            }
        }
    }

    fn activate(&mut self, u: usize) {
        if u != self.source && u != self.sink && !self.in_bucket[u] && self.excess[u] > 0.0 && self.label[u] < 2 * self.n {
            self.in_bucket[u] = true;
            self.buckets[self.label[u]].push(u);
            self.highest = self.highest.max(self.label[u]);
        }
    }

    fn pop_highest(&mut self) -> Option<usize> {
        loop {
            if let Some(u) = self.buckets[self.highest].pop() {
                self.in_bucket[u] = false;
                return Some(u);
            }
            if self.highest == 0 {
                return None;
            }
            self.highest -= 1;
        }
    }

    fn discharge(&mut self, net: &mut FlowNetwork, u: usize) {
        while self.excess[u] > 0.0 {
            let arcs = &net.adjacency[u];
            if self.current[u] == arcs.len() {
                if !self.relabel(net, u) {
                    // Rounding left an excess with no residual way out.
                    self.excess[u] = 0.0;
                    return;
                }
                continue;
            }
            let a = arcs[self.current[u]];
            let v = net.head[a];
            let r = net.residual[a];
            if r > 0.0 && self.label[u] == self.label[v] + 1 {
                let e = self.excess[u];
                let amount = if e >= r {
                    net.residual[a] = 0.0;
                    r
                } else {
                    net.residual[a] = r - e;
                    e
                };
                net.residual[a ^ 1] += amount;
                if e >= r {
                    self.excess[u] = e - r;
                } else {
                    self.excess[u] = 0.0;
                }
                self.excess[v] += amount;
                self.activate(v);
            } else {
                self.current[u] += 1;
            }
        }
    }

    /// Returns false if `u` has no residual arc left.
    fn relabel(&mut self, net: &FlowNetwork, u: usize) -> bool {
        let old = self.label[u];
        let new = net.adjacency[u]
            .iter()
            .filter(|&&a| net.residual[a] > 0.0)
            .map(|&a| self.label[net.head[a]] + 1)
            .min();
        let Some(new) = new.filter(|&l| l < 2 * self.n) else {
            return false;
        };
        self.relabels_since_global += 1;
        self.label_count[old] -= 1;
        self.label[u] = new;
        self.label_count[new] += 1;
        self.current[u] = 0;
        if old < self.n && self.label_count[old] == 0 {
            self.gap(old);
        }
        true
    }

    /// No node is left at label `gap`: everything above it (below `n`) is cut
    /// off from the sink.
    fn gap(&mut self, gap: usize) {
        for w in 0..self.n {
            let l = self.label[w];
            if l > gap && l < self.n && w != self.source {
                self.label_count[l] -= 1;
                self.label[w] = self.n + 1;
                self.label_count[self.n + 1] += 1;
                self.current[w] = 0;
            }
        }
        self.rebuild_buckets();
    }

    /// Exact labels: distance to the sink, or `n` + distance to the source for
    /// nodes that can no longer reach the sink.
    fn global_relabel(&mut self, net: &FlowNetwork) {
        self.relabels_since_global = 0;
        let unset = usize::MAX;
        self.label.iter_mut().for_each(|l| *l = unset);
        self.label[self.source] = self.n;
        for (root, base) in [(self.sink, 0), (self.source, self.n)] {
            self.label[root] = base;
            let mut queue = VecDeque::from([root]);
            while let Some(v) = queue.pop_front() {
                for &a in &net.adjacency[v] {
                    // Residual arc u -> v is the reverse of a.
                    let u = net.head[a];
                    if self.label[u] == unset && net.residual[a ^ 1] > 0.0 {
                        self.label[u] = self.label[v] + 1;
                        queue.push_back(u);
                    }
                }
            }
        }
        for l in self.label.iter_mut() {
            if *l == unset {
                *l = 2 * self.n;
            }
        }
        self.label_count.iter_mut().for_each(|c| *c = 0);
        for &l in &self.label {
            self.label_count[l] += 1;
        }
        self.current.iter_mut().for_each(|c| *c = 0);
        self.rebuild_buckets();
    }

    fn rebuild_buckets(&mut self) {
        for b in self.buckets.iter_mut() {
            b.clear();
        }
        self.in_bucket.iter_mut().for_each(|b| *b = false);
        self.highest = 0;
        for u in 0..self.n {
            self.activate(u);
        }
    }
}
