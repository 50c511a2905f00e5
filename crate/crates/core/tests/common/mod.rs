//! Independent reference implementations used as test oracles. None of these
//! call into the library's numerical code.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use structcox::flow::FlowNetwork;
use structcox::grouping::{Group, GroupingStructure};
use structcox::survival::{CountingRecord, SurvivalDataset};

pub fn soft_threshold(u: f64, t: f64) -> f64 {
    u.signum() * (u.abs() - t).max(0.0)
}

/// ℓ1-ball projection by bisection on the threshold.
pub fn l1_ball_bisect(v: &[f64], radius: f64) -> Vec<f64> {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    if norm <= radius {
        return v.to_vec();
    }
    let mass = |t: f64| v.iter().map(|x| (x.abs() - t).max(0.0)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| soft_threshold(*x, t)).collect()
}

/// Prox of `t * ||.||_inf` through the Moreau decomposition.
pub fn linf_prox(u: &[f64], t: f64) -> Vec<f64> {
    let proj = l1_ball_bisect(u, t);
    u.iter().zip(proj).map(|(a, b)| a - b).collect()
}

/// Primal objective `0.5 ||u - b||^2 + scale * sum_g w_g ||b_g||_inf`.
pub fn prox_objective(u: &[f64], b: &[f64], groups: &[(Vec<usize>, f64)], scale: f64) -> f64 {
    let fit: f64 = u.iter().zip(b).map(|(x, y)| 0.5 * (x - y).powi(2)).sum();
    let pen: f64 = groups
        .iter()
        .map(|(m, w)| w * m.iter().fold(0.0f64, |acc, &j| acc.max(b[j].abs())))
        .sum();
    fit + scale * pen
}

/// Overlapping prox by block-coordinate ascent on the dual, run until the
/// duality gap is below `gap_tol`.
pub fn overlapping_prox_dual(u: &[f64], groups: &[(Vec<usize>, f64)], scale: f64, gap_tol: f64) -> Vec<f64> {
    let p = u.len();
    let mut xi: Vec<Vec<f64>> = groups.iter().map(|(m, _)| vec![0.0; m.len()]).collect();
    let mut sum = vec![0.0; p];
    let dual = |sum: &[f64]| {
        let a: f64 = u.iter().map(|x| x * x).sum();
        let b: f64 = u.iter().zip(sum).map(|(x, s)| (x - s).powi(2)).sum();
        0.5 * (a - b)
    };
    for _ in 0..2_000_000 {
        for (k, (m, w)) in groups.iter().enumerate() {
            let resid: Vec<f64> = m
                .iter()
                .zip(&xi[k])
                .map(|(&j, &x)| u[j] - (sum[j] - x))
                .collect();
            let new = l1_ball_bisect(&resid, scale * w);
            for ((&j, old), n) in m.iter().zip(xi[k].iter_mut()).zip(new) {
                sum[j] += n - *old;
                *old = n;
            }
        }
        let beta: Vec<f64> = u.iter().zip(&sum).map(|(x, s)| x - s).collect();
        let gap = prox_objective(u, &beta, groups, scale) - dual(&sum);
        if gap <= gap_tol {
            return beta;
        }
    }
    panic!("dual oracle did not converge");
}

/// Prox for a tree-structured family (any two groups nested or disjoint),
/// composing single-group proxes from the smallest groups up.
pub fn tree_prox(u: &[f64], groups: &[(Vec<usize>, f64)], scale: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by_key(|&k| groups[k].0.len());
    let mut b = u.to_vec();
    for k in order {
        let (m, w) = &groups[k];
        let sub: Vec<f64> = m.iter().map(|&j| b[j]).collect();
        let out = linf_prox(&sub, scale * w);
        for (&j, v) in m.iter().zip(out) {
            b[j] = v;
        }
    }
    b
}

/// Edmonds-Karp maximum flow on a dense capacity matrix.
pub fn edmonds_karp(cap: &[Vec<f64>], s: usize, t: usize) -> f64 {
    let n = cap.len();
    let mut r: Vec<Vec<f64>> = cap.to_vec();
    let mut total = 0.0;
    loop {
        let mut prev = vec![usize::MAX; n];
        prev[s] = s;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for v in 0..n {
                if prev[v] == usize::MAX && r[u][v] > 0.0 {
                    prev[v] = u;
                    q.push_back(v);
                }
            }
        }
        if prev[t] == usize::MAX {
            return total;
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = t;
        while v != s {
            bottleneck = bottleneck.min(r[prev[v]][v]);
            v = prev[v];
        }
        let mut v = t;
        while v != s {
            let u = prev[v];
            r[u][v] -= bottleneck;
            r[v][u] += bottleneck;
            v = u;
        }
        total += bottleneck;
    }
}

/// Negative Breslow log partial likelihood by direct double loops.
pub fn naive_nll(data: &SurvivalDataset, beta: &[f64]) -> f64 {
    let recs = data.records();
    let eta = |r: &CountingRecord| r.covariates.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>();
    let mut times: Vec<f64> = recs.iter().filter(|r| r.event).map(|r| r.stop).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut out = 0.0;
    for &t in &times {
        let events: Vec<&CountingRecord> = recs.iter().filter(|r| r.event && r.stop == t).collect();
        let denom: f64 = recs
            .iter()
            .filter(|r| r.start < t && t <= r.stop)
            .map(|r| eta(r).exp())
            .sum();
        for e in &events {
            out -= eta(e);
        }
        out += events.len() as f64 * denom.ln();
    }
    out
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += h;
            b[j] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Gradient and Hessian of the negative log partial likelihood, naive.
pub fn naive_grad_hess(data: &SurvivalDataset, beta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = beta.len();
    let recs = data.records();
    let mut times: Vec<f64> = recs.iter().filter(|r| r.event).map(|r| r.stop).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut g = vec![0.0; p];
    let mut h = vec![vec![0.0; p]; p];
    for &t in &times {
        let d = recs.iter().filter(|r| r.event && r.stop == t).count() as f64;
        for r in recs.iter().filter(|r| r.event && r.stop == t) {
            for j in 0..p {
                g[j] -= r.covariates[j];
            }
        }
        let mut w_sum = 0.0;
        let mut x_sum = vec![0.0; p];
        let mut xx_sum = vec![vec![0.0; p]; p];
        for r in recs.iter().filter(|r| r.start < t && t <= r.stop) {
            let w = r.covariates.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>().exp();
            w_sum += w;
            for a in 0..p {
                x_sum[a] += w * r.covariates[a];
                for b in 0..p {
                    xx_sum[a][b] += w * r.covariates[a] * r.covariates[b];
                }
            }
        }
        for a in 0..p {
            g[a] += d * x_sum[a] / w_sum;
            for b in 0..p {
                h[a][b] += d * (xx_sum[a][b] / w_sum - x_sum[a] * x_sum[b] / (w_sum * w_sum));
            }
        }
    }
    (g, h)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Unpenalized maximum partial likelihood estimate by Newton's method.
pub fn newton_mple(data: &SurvivalDataset) -> Vec<f64> {
    let mut beta = vec![0.0; data.p()];
    for _ in 0..100 {
        let (g, h) = naive_grad_hess(data, &beta);
        let step = solve_linear(h, g.clone());
        let mut t = 1.0;
        let f0 = naive_nll(data, &beta);
        loop {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b - t * s).collect();
            if naive_nll(data, &trial) <= f0 + 1e-12 * f0.abs().max(1.0) || t < 1e-8 {
                beta = trial;
                break;
            }
            t *= 0.5;
        }
        if g.iter().map(|x| x.abs()).fold(0.0, f64::max) < 1e-12 {
            break;
        }
    }
    beta
}

/// Random right-censored single-record dataset with optional tied times.
pub fn random_dataset(seed: u64, n: usize, p: usize, ties: bool) -> SurvivalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let covariates: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let raw: f64 = rng.random_range(0.05..5.0);
            let stop = if ties { raw.ceil() } else { raw };
            CountingRecord {
                subject_id: format!("s{i}"),
                start: 0.0,
                stop,
                event: i == 0 || rng.random_bool(0.7),
                covariates,
            }
        })
        .collect();
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    SurvivalDataset::new(records, names).unwrap()
}

/// Random counting-process dataset: subjects split into consecutive intervals
/// with their own covariate values.
pub fn random_counting_dataset(seed: u64, n_subjects: usize, p: usize) -> SurvivalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for i in 0..n_subjects {
        let pieces = rng.random_range(1..4);
        let mut start = 0.0;
        for k in 0..pieces {
            let stop = start + rng.random_range(1..4) as f64;
            let covariates: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let last = k + 1 == pieces;
            records.push(CountingRecord {
                subject_id: format!("s{i}"),
                start,
                stop,
                event: last && (i == 0 || rng.random_bool(0.6)),
                covariates,
            });
            start = stop;
        }
    }
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    SurvivalDataset::new(records, names).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn structure_of(p: usize, groups: &[(Vec<usize>, f64)]) -> GroupingStructure {
    let gs = groups
        .iter()
        .enumerate()
        .map(|(k, (m, w))| Group::new(format!("g{k}"), m.iter().copied(), *w))
        .collect();
    GroupingStructure::new(p, gs).unwrap()
}

/// Random cover of `0..p` by at most `max_groups` overlapping groups.
pub fn random_cover(rng: &mut ChaCha8Rng, p: usize, max_groups: usize) -> Vec<(Vec<usize>, f64)> {
    let k = rng.random_range(1..=max_groups);
    let mut groups: Vec<(Vec<usize>, f64)> = (0..k)
        .map(|_| {
            let mut m: Vec<usize> = (0..p).filter(|_| rng.random_bool(0.4)).collect();
            if m.is_empty() {
                m.push(rng.random_range(0..p));
            }
            (m, rng.random_range(0.2..2.0))
        })
        .collect();
    for j in 0..p {
        if !groups.iter().any(|(m, _)| m.contains(&j)) {
            let g = rng.random_range(0..k);
            groups[g].0.push(j);
            groups[g].0.sort_unstable();
        }
    }
    groups
}

/// Random network shaped like the prox networks: source, groups, covariates, sink.
pub fn random_table_network(rng: &mut ChaCha8Rng) -> (FlowNetwork, Vec<Vec<f64>>) {
    let n_groups = rng.random_range(1..=13);
    let n_vars = rng.random_range(1..=14);
    let n = 2 + n_groups + n_vars;
    let mut net = FlowNetwork::new(n);
    let mut dense = vec![vec![0.0; n]; n];
    let mut add = |net: &mut FlowNetwork, u: usize, v: usize, c: f64| {
        net.add_arc(u, v, c);
        dense[u][v] += c;
    };
    let big = 1000.0;
    for g in 0..n_groups {
        add(&mut net, 0, 2 + g, rng.random_range(0..20) as f64);
        for v in 0..n_vars {
            if rng.random_bool(0.35) {
                add(&mut net, 2 + g, 2 + n_groups + v, big);
            }
        }
    }
    for v in 0..n_vars {
        add(&mut net, 2 + n_groups + v, 1, rng.random_range(0..20) as f64);
    }
    (net, dense)
}
