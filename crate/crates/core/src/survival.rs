//! Counting-process survival data and the Breslow negative log partial
//! likelihood.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// One `(start, stop]` interval of a subject with interval-constant covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct CountingRecord {
    pub subject_id: String,
    pub start: f64,
    pub stop: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
}

/// Validated collection of counting-process records.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    records: Vec<CountingRecord>,
    covariate_names: Vec<String>,
}

impl SurvivalDataset {
    pub fn new(records: Vec<CountingRecord>, covariate_names: Vec<String>) -> Result<Self> {
        let dataset = Self {
            records,
            covariate_names,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::InvalidData("dataset has no records".into()));
        }
        let p = self.p();
        for (i, r) in self.records.iter().enumerate() {
            if !r.start.is_finite() || !r.stop.is_finite() {
                return Err(Error::InvalidData(format!("record {i}: non-finite time")));
            }
            if r.start >= r.stop {
                return Err(Error::InvalidData(format!(
                    "record {i} (subject {}): start {} is not before stop {}",
                    r.subject_id, r.start, r.stop
                )));
            }
            if r.covariates.len() != p {
                return Err(Error::InvalidData(format!(
                    "record {i}: expected {p} covariates, found {}",
                    r.covariates.len()
                )));
            }
            if let Some(j) = r.covariates.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "record {i}: covariate {} is not finite",
                    self.covariate_names[j]
                )));
            }
        }
        if !self.records.iter().any(|r| r.event) {
            return Err(Error::InvalidData("dataset has no events".into()));
        }
        for (id, idx) in self.subjects() {
            let mut rows: Vec<&CountingRecord> = idx.iter().map(|&i| &self.records[i]).collect();
            rows.sort_by(|a, b| a.start.total_cmp(&b.start));
            for w in rows.windows(2) {
                if w[1].start < w[0].stop {
                    return Err(Error::InvalidData(format!(
                        "subject {id}: intervals ({}, {}] and ({}, {}] overlap",
                        w[0].start, w[0].stop, w[1].start, w[1].stop
                    )));
                }
            }
            let events = rows.iter().filter(|r| r.event).count();
            if events > 1 {
                return Err(Error::InvalidData(format!("subject {id}: more than one event")));
            }
            if events == 1 && !rows.last().is_some_and(|r| r.event) {
                return Err(Error::InvalidData(format!(
                    "subject {id}: event is not on the last interval"
                )));
            }
        }
        Ok(())
    }

    pub fn records(&self) -> &[CountingRecord] {
        &self.records
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    /// Record indices grouped by subject, subjects in order of first appearance.
    pub fn subjects(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<(String, Vec<usize>)> = Vec::new();
        let mut lookup: HashMap<&str, usize> = HashMap::new();
        for (i, r) in self.records.iter().enumerate() {
            match lookup.get(r.subject_id.as_str()) {
                Some(&k) => order[k].1.push(i),
                None => {
                    lookup.insert(&r.subject_id, order.len());
                    order.push((r.subject_id.clone(), vec![i]));
                }
            }
        }
        order
    }

    /// Dataset restricted to the given records (kept in the given order).
    pub fn subset(&self, record_indices: &[usize]) -> Result<Self> {
        let records = record_indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(records, self.covariate_names.clone())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    /// Parses `id,start,stop,event,<name1>,...,<namep>` with a header row.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let expected = ["id", "start", "stop", "event"];
        if header.len() < 4 || header.iter().take(4).zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Parse {
                line: 1,
                message: "header must begin with id,start,stop,event".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(4).map(str::to_string).collect();
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("duplicate covariate name '{name}'"),
                });
            }
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            let field = |k: usize| row.get(k).unwrap_or("");
            let num = |k: usize, what: &str| -> Result<f64> {
                field(k).parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("{what}: cannot parse '{}' as a number", field(k)),
                })
            };
            if row.len() != header.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", header.len(), row.len()),
                });
            }
            let event = match field(3) {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("event must be 0 or 1, found '{other}'"),
                    })
                }
            };
            let covariates = (0..names.len())
                .map(|j| num(4 + j, &names[j]))
                .collect::<Result<Vec<_>>>()?;
            records.push(CountingRecord {
                subject_id: field(0).to_string(),
                start: num(1, "start")?,
                stop: num(2, "stop")?,
                event,
                covariates,
            });
        }
        Self::new(records, names)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("id,start,stop,event");
        for name in &self.covariate_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}", r.subject_id, r.start, r.stop, u8::from(r.event)));
            for v in &r.covariates {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Dataset with `names` appended as extra columns whose values come from `f(record)`.
    pub fn with_columns(
        &self,
        names: &[String],
        f: impl Fn(&CountingRecord) -> Vec<f64>,
    ) -> Result<Self> {
        let mut covariate_names = self.covariate_names.clone();
        covariate_names.extend(names.iter().cloned());
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r2 = r.clone();
                r2.covariates.extend(f(r));
                r2
            })
            .collect();
        Self::new(records, covariate_names)
    }
}

/// Unique event times with their event sets `D_l` and risk sets `R_l`.
///
/// Risk membership is `start < t_l <= stop`. Each record's covariate row is
/// its value at every event time it is at risk for.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskIndex {
    p: usize,
    n_records: usize,
    x: Vec<f64>,
    event_times: Vec<f64>,
    tie_counts: Vec<usize>,
    event_offsets: Vec<usize>,
    event_records: Vec<usize>,
    risk_offsets: Vec<usize>,
    risk_records: Vec<usize>,
    // Half-open range of event-time positions each record is at risk for.
    record_ranges: Vec<(usize, usize)>,
    event_x_sum: Vec<f64>,
}

impl RiskIndex {
    pub fn build(dataset: &SurvivalDataset) -> Result<Self> {
        let records = dataset.records();
        let p = dataset.p();
        if records.is_empty() {
            return Err(Error::InvalidData("empty dataset".into()));
        }
        if records.iter().any(|r| !r.start.is_finite() || !r.stop.is_finite()) {
            return Err(Error::InvalidData("non-finite times".into()));
        }
        let mut event_times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.stop).collect();
        if event_times.is_empty() {
            return Err(Error::InvalidData("no events".into()));
        }
        event_times.sort_by(f64::total_cmp);
        event_times.dedup();
        let l = event_times.len();

        let mut x = Vec::with_capacity(records.len() * p);
        let mut record_ranges = Vec::with_capacity(records.len());
        let mut event_buckets: Vec<Vec<usize>> = vec![Vec::new(); l];
        let mut risk_counts = vec![0usize; l];
        let mut event_x_sum = vec![0.0; p];
        for (i, r) in records.iter().enumerate() {
            x.extend_from_slice(&r.covariates);
            // first event time strictly greater than start, through the last <= stop
            let a = event_times.partition_point(|&t| t <= r.start);
            let b = event_times.partition_point(|&t| t <= r.stop);
            record_ranges.push((a, b));
            for c in &mut risk_counts[a..b] {
                *c += 1;
            }
            if r.event {
                let pos = event_times.partition_point(|&t| t < r.stop);
                event_buckets[pos].push(i);
                for (s, v) in event_x_sum.iter_mut().zip(&r.covariates) {
                    *s += v;
                }
            }
        }

        let mut risk_offsets = Vec::with_capacity(l + 1);
        risk_offsets.push(0);
        for c in &risk_counts {
            risk_offsets.push(risk_offsets.last().unwrap() + c);
        }
        let mut fill = risk_offsets[..l].to_vec();
        let mut risk_records = vec![0usize; *risk_offsets.last().unwrap()];
        for (i, &(a, b)) in record_ranges.iter().enumerate() {
            for pos in a..b {
                risk_records[fill[pos]] = i;
                fill[pos] += 1;
            }
        }

        let mut event_offsets = Vec::with_capacity(l + 1);
        event_offsets.push(0);
        let mut event_records = Vec::new();
        let mut tie_counts = Vec::with_capacity(l);
        for bucket in event_buckets {
            tie_counts.push(bucket.len());
            event_records.extend(bucket);
            event_offsets.push(event_records.len());
        }

        Ok(Self {
            p,
            n_records: records.len(),
            x,
            event_times,
            tie_counts,
            event_offsets,
            event_records,
            risk_offsets,
            risk_records,
            record_ranges,
            event_x_sum,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_records(&self) -> usize {
        self.n_records
    }

    pub fn n_event_times(&self) -> usize {
        self.event_times.len()
    }

    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn tie_counts(&self) -> &[usize] {
        &self.tie_counts
    }

    pub fn n_events(&self) -> usize {
        self.event_records.len()
    }

    pub fn event_set(&self, l: usize) -> &[usize] {
        &self.event_records[self.event_offsets[l]..self.event_offsets[l + 1]]
    }

    pub fn risk_set(&self, l: usize) -> &[usize] {
        &self.risk_records[self.risk_offsets[l]..self.risk_offsets[l + 1]]
    }

    /// Covariate row of record `i`, i.e. `X_i(t_l)` for every `l` it is at risk for.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// Column standard deviations over records; constant columns get scale 1.
    pub fn column_scales(&self) -> Vec<f64> {
        let n = self.n_records as f64;
        (0..self.p)
            .map(|j| {
                let mean = (0..self.n_records).map(|i| self.x[i * self.p + j]).sum::<f64>() / n;
                let var = (0..self.n_records)
                    .map(|i| (self.x[i * self.p + j] - mean).powi(2))
                    .sum::<f64>()
                    / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// Copy with column `j` divided by `scales[j]`.
    pub fn scaled(&self, scales: &[f64]) -> Result<Self> {
        check_len(self.p, scales.len())?;
        let mut out = self.clone();
        for row in out.x.chunks_mut(self.p.max(1)) {
            for (v, s) in row.iter_mut().zip(scales) {
                *v /= s;
            }
        }
        for (v, s) in out.event_x_sum.iter_mut().zip(scales) {
            *v /= s;
        }
        Ok(out)
    }

    pub fn linear_predictor(&self, beta: &[f64]) -> Result<Vec<f64>> {
        check_len(self.p, beta.len())?;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Overflow("non-finite coefficient".into()));
        }
        let active: Vec<(usize, f64)> = beta
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, &b)| (j, b))
            .collect();
        let eta: Vec<f64> = self
            .x
            .chunks(self.p.max(1))
            .take(self.n_records)
            .map(|row| active.iter().map(|&(j, b)| row[j] * b).sum())
            .collect();
        if eta.iter().any(|e| !e.is_finite()) {
            return Err(Error::Overflow("linear predictor is not finite".into()));
        }
        Ok(eta)
    }

    /// `log sum_{i in R_l} exp(eta_i)` for every event time.
    fn log_risk_sums(&self, eta: &[f64]) -> Result<Vec<f64>> {
        let l = self.event_times.len();
        let (lo, hi) = eta
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        let lse = if hi - lo <= FAST_RANGE {
            // Each risk-set sum is a difference of compensated prefix sums
            // over record entries and exits; the bounded weight range keeps
            // the cancellation below rounding.
            let mut delta = vec![0.0; l + 1];
            for (i, &(a, b)) in self.record_ranges.iter().enumerate() {
                if a < b {
                    let w = (eta[i] - hi).exp();
                    delta[a] += w;
                    delta[b] -= w;
                }
            }
            let mut acc = TwoSum::default();
            delta[..l]
                .iter()
                .map(|&d| {
                    acc.add(d);
                    hi + acc.value().ln()
                })
                .collect::<Vec<_>>()
        } else if hi - lo <= 600.0 {
            // A common shift keeps every exp in the normal range here, so
            // this equals the per-risk-set maximum shift up to rounding.
            let w: Vec<f64> = eta.iter().map(|e| (e - hi).exp()).collect();
            let mut sums = vec![0.0; l];
            for (i, &(a, b)) in self.record_ranges.iter().enumerate() {
                for s in &mut sums[a..b] {
                    *s += w[i];
                }
            }
            sums.into_iter().map(|s| hi + s.ln()).collect::<Vec<_>>()
        } else {
            (0..l)
                .map(|k| {
                    let set = self.risk_set(k);
                    let m = set.iter().map(|&i| eta[i]).fold(f64::NEG_INFINITY, f64::max);
                    m + set.iter().map(|&i| (eta[i] - m).exp()).sum::<f64>().ln()
                })
                .collect()
        };
        if lse.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow("risk-set sum is not finite".into()));
        }
        Ok(lse)
    }

    fn value_from(&self, eta: &[f64], lse: &[f64]) -> Result<f64> {
        let mut f = 0.0;
        for (k, &ls) in lse.iter().enumerate() {
            let events: f64 = self.event_set(k).iter().map(|&i| eta[i]).sum();
            f -= events - self.tie_counts[k] as f64 * ls;
        }
        if !f.is_finite() {
            return Err(Error::Overflow("partial likelihood is not finite".into()));
        }
        Ok(f)
    }

    /// Breslow negative log partial likelihood `f(beta)`.
    pub fn neg_log_partial_likelihood(&self, beta: &[f64]) -> Result<f64> {
        let eta = self.linear_predictor(beta)?;
        let lse = self.log_risk_sums(&eta)?;
        self.value_from(&eta, &lse)
    }

    pub fn gradient(&self, beta: &[f64]) -> Result<Vec<f64>> {
        self.value_and_gradient(beta).map(|(_, g)| g)
    }

    pub fn value_and_gradient(&self, beta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let eta = self.linear_predictor(beta)?;
        let lse = self.log_risk_sums(&eta)?;
        let value = self.value_from(&eta, &lse)?;
        let mut grad: Vec<f64> = self.event_x_sum.iter().map(|v| -v).collect();
        // Record weight: exp(eta_i) * sum over its event times of d_l / S_l.
        let shift = lse.iter().copied().fold(f64::INFINITY, f64::min);
        let ratio: Vec<f64> = lse
            .iter()
            .zip(&self.tie_counts)
            .map(|(&ls, &d)| d as f64 * (shift - ls).exp())
            .collect();
        let prefix = TwoSum::prefix(&ratio);
        for (i, &(a, b)) in self.record_ranges.iter().enumerate() {
            if a == b {
                continue;
            }
            let weight = if eta[i] - shift <= 700.0 {
                (eta[i] - shift).exp() * TwoSum::difference(prefix[b], prefix[a])
            } else {
                (a..b)
                    .map(|k| self.tie_counts[k] as f64 * (eta[i] - lse[k]).exp())
                    .sum()
            };
            if weight == 0.0 {
                continue;
            }
            for (g, x) in grad.iter_mut().zip(self.row(i)) {
                *g += weight * x;
            }
        }
        Ok((value, grad))
    }
}

/// Widest linear-predictor range summed through prefix differences.
const FAST_RANGE: f64 = 40.0;

/// Compensated running sum carried as an unevaluated pair.
#[derive(Debug, Clone, Copy, Default)]
struct TwoSum {
    sum: f64,
    err: f64,
}

impl TwoSum {
    fn add(&mut self, x: f64) {
        let s = self.sum + x;
        let bp = s - self.sum;
        self.err += (self.sum - (s - bp)) + (x - bp);
        self.sum = s;
    }

    fn value(&self) -> f64 {
        self.sum + self.err
    }

    /// `out[k]` is the sum of the first `k` values.
    fn prefix(values: &[f64]) -> Vec<TwoSum> {
        let mut acc = TwoSum::default();
        let mut out = Vec::with_capacity(values.len() + 1);
        out.push(acc);
        for &v in values {
            acc.add(v);
            out.push(acc);
        }
        out
    }

    fn difference(hi: TwoSum, lo: TwoSum) -> f64 {
        let mut d = TwoSum { sum: hi.sum, err: hi.err - lo.err };
        d.add(-lo.sum);
        d.value()
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}

/// Replaces covariate `target` by `M` interval-indicator columns
/// `Z_m(t) = I(T_m < t <= T_{m+1}) X(t)`, splitting records at interior cut
/// points. Returns the expanded dataset and the indices of the new columns.
pub fn expand_interval_coefficients(
    dataset: &SurvivalDataset,
    cut_points: &[f64],
    target: usize,
) -> Result<(SurvivalDataset, Vec<usize>)> {
    let p = dataset.p();
    if target >= p {
        return Err(Error::InvalidArgument(format!("covariate index {target} out of range (p = {p})")));
    }
    if cut_points.len() < 2 {
        return Err(Error::InvalidArgument("need at least two cut points".into()));
    }
    if cut_points.iter().any(|c| !c.is_finite()) || cut_points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("cut points must be finite and strictly increasing".into()));
    }
    let first = cut_points[0];
    let last = *cut_points.last().unwrap();
    let min_start = dataset.records().iter().map(|r| r.start).fold(f64::INFINITY, f64::min);
    let max_stop = dataset.records().iter().map(|r| r.stop).fold(f64::NEG_INFINITY, f64::max);
    if first > min_start || last < max_stop {
        return Err(Error::InvalidArgument(format!(
            "cut points [{first}, {last}] do not cover the observed range [{min_start}, {max_stop}]"
        )));
    }
    let m = cut_points.len() - 1;
    let base = &dataset.covariate_names()[target];
    let mut names: Vec<String> = Vec::with_capacity(p + m - 1);
    names.extend_from_slice(&dataset.covariate_names()[..target]);
    names.extend((1..=m).map(|k| format!("{base}_int{k}")));
    names.extend_from_slice(&dataset.covariate_names()[target + 1..]);

    let mut out = Vec::new();
    for r in dataset.records() {
        let mut lo = r.start;
        // interval k covers (T_k, T_{k+1}]
        let mut k = cut_points.partition_point(|&c| c <= lo).saturating_sub(1).min(m - 1);
        loop {
            let hi = r.stop.min(cut_points[k + 1]);
            let mut covariates = Vec::with_capacity(p + m - 1);
            covariates.extend_from_slice(&r.covariates[..target]);
            covariates.extend((0..m).map(|q| if q == k { r.covariates[target] } else { 0.0 }));
            covariates.extend_from_slice(&r.covariates[target + 1..]);
            let done = hi >= r.stop;
            out.push(CountingRecord {
                subject_id: r.subject_id.clone(),
                start: lo,
                stop: hi,
                event: done && r.event,
                covariates,
            });
            if done {
                break;
            }
            lo = hi;
            k += 1;
        }
    }
    let dataset = SurvivalDataset::new(out, names)?;
    Ok((dataset, (target..target + m).collect()))
}
