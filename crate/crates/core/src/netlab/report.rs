// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use super::scenario::ScenarioResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Hit,
    Miss,
    Bypass,
    /// No cache on the path.
    Direct,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Hit => "hit",
            Outcome::Miss => "miss",
            Outcome::Bypass => "bypass",
            Outcome::Direct => "direct",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct RequestSample {
    pub seq: usize,
    pub key: u32,
    pub outcome: Outcome,
    pub latency: Duration,
    /// Completion time relative to the start of the run.
    pub completed_at: Duration,
    /// Reply carried `ok: 1`.
    pub ok: bool,
    /// Reply carried at least one document.
    pub found: bool,
    pub timed_out: bool,
}

impl RequestSample {
    pub fn latency_ms(&self) -> f64 {
        self.latency.as_secs_f64() * 1e3
    }
}

/// Latency and throughput summary of one workload run.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub samples: Vec<RequestSample>,
    pub wall: Duration,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Nearest-rank percentile of an ascending slice; `p` in `[0, 100]`.
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl MetricsReport {
    pub fn new(samples: Vec<RequestSample>, wall: Duration) -> Self {
        MetricsReport { samples, wall }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn latencies_ms(&self) -> Vec<f64> {
        self.samples.iter().map(RequestSample::latency_ms).collect()
    }

    pub fn mean_ms(&self) -> f64 {
        mean(&self.latencies_ms())
    }

    pub fn percentile_ms(&self, p: f64) -> f64 {
        let mut v = self.latencies_ms();
        v.sort_by(f64::total_cmp);
        percentile_sorted(&v, p)
    }

    pub fn median_ms(&self) -> f64 {
        self.percentile_ms(50.0)
    }

    /// Samples after skipping the leading `warmup_fraction` of requests.
    pub fn tail(&self, warmup_fraction: f64) -> &[RequestSample] {
        let skip = ((self.samples.len() as f64) * warmup_fraction).round() as usize;
        &self.samples[skip.min(self.samples.len())..]
    }

    /// Mean latency over the requests after the warm-up fraction.
    pub fn post_warmup_mean_ms(&self, warmup_fraction: f64) -> f64 {
        let v: Vec<f64> = self.tail(warmup_fraction).iter().map(RequestSample::latency_ms).collect();
        mean(&v)
    }

    /// Completed requests per second over the post-warm-up window.
    pub fn post_warmup_rps(&self, warmup_fraction: f64) -> f64 {
        let tail = self.tail(warmup_fraction);
        let (Some(first), Some(last)) = (tail.first(), tail.last()) else {
            return 0.0;
        };
        let span = last.completed_at.saturating_sub(first.completed_at - first.latency);
        tail.len() as f64 / span.as_secs_f64()
    }

    pub fn rps(&self) -> f64 {
        self.samples.len() as f64 / self.wall.as_secs_f64()
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.samples.iter().filter(|s| s.outcome == outcome).count()
    }

    pub fn hit_rate(&self) -> f64 {
        self.count(Outcome::Hit) as f64 / self.samples.len().max(1) as f64
    }

    pub fn timeouts(&self) -> usize {
        self.samples.iter().filter(|s| s.timed_out).count()
    }

    pub fn stratum_ms(&self, outcome: Outcome) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.outcome == outcome)
            .map(RequestSample::latency_ms)
            .collect()
    }

    pub fn stratum_mean_ms(&self, outcome: Outcome) -> f64 {
        mean(&self.stratum_ms(outcome))
    }

    /// Latency of the first request for each key.
    pub fn first_request_ms(&self) -> BTreeMap<u32, f64> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            out.entry(s.key).or_insert_with(|| s.latency_ms());
        }
        out
    }

    /// Completions per bin of width `bin`, from the start of the run.
    pub fn throughput_counts(&self, bin: Duration) -> Vec<u64> {
        let Some(last) = self.samples.iter().map(|s| s.completed_at).max() else {
            return Vec::new();
        };
        let width = bin.as_secs_f64();
        let n = (last.as_secs_f64() / width).floor() as usize + 1;
        let mut counts = vec![0u64; n];
        for s in &self.samples {
            let i = (s.completed_at.as_secs_f64() / width).floor() as usize;
            counts[i.min(n - 1)] += 1;
        }
        counts
    }

    /// Requests per second in each bin of width `bin`.
    pub fn throughput_series(&self, bin: Duration) -> Vec<f64> {
        let w = bin.as_secs_f64();
        self.throughput_counts(bin)
            .into_iter()
            .map(|c| c as f64 / w)
            .collect()
    }
}

/// Relative latency reduction of `cached` against `direct`.
pub fn improvement(cached_ms: f64, direct_ms: f64) -> f64 {
    1.0 - cached_ms / direct_ms
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CapacityColumn {
    NoCache,
    Capacity(usize),
}

impl fmt::Display for CapacityColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CapacityColumn::NoCache => f.write_str("no cache"),
            CapacityColumn::Capacity(c) => write!(f, "cap {c}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub mean_ms: f64,
    pub rps: f64,
    pub hit_rate: f64,
}

/// Scenario-by-capacity grid of mean latencies.
#[derive(Debug, Clone, Default)]
pub struct SweepTable {
    pub columns: Vec<CapacityColumn>,
    pub rows: BTreeMap<String, BTreeMap<CapacityColumn, SweepCell>>,
}

impl SweepTable {
    pub fn cell(&self, scenario: &str, column: CapacityColumn) -> Option<&SweepCell> {
        self.rows.get(scenario)?.get(&column)
    }

    /// Improvement of a cached cell over the row's no-cache cell.
    pub fn improvement(&self, scenario: &str, capacity: usize) -> Option<f64> {
        let direct = self.cell(scenario, CapacityColumn::NoCache)?;
        let cached = self.cell(scenario, CapacityColumn::Capacity(capacity))?;
        Some(improvement(cached.mean_ms, direct.mean_ms))
    }
}

/// Builds the grid from a set of runs, one per (scenario, capacity) cell.
pub fn summarize(results: &[ScenarioResult]) -> SweepTable {
    let mut table = SweepTable::default();
    for r in results {
        let column = if r.config.with_cache {
            CapacityColumn::Capacity(r.config.capacity)
        } else {
            CapacityColumn::NoCache
        };
        if !table.columns.contains(&column) {
            table.columns.push(column);
        }
        table.rows.entry(r.config.name.to_string()).or_default().insert(
            column,
            SweepCell {
                mean_ms: r.report.mean_ms(),
                rps: r.report.rps(),
                hit_rate: r.report.hit_rate(),
            },
        );
    }
    table.columns.sort();
    table
}

impl fmt::Display for SweepTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<10}", "scenario")?;
        for c in &self.columns {
            write!(f, " | {:>22}", c.to_string())?;
        }
        writeln!(f)?;
        for (name, cells) in &self.rows {
            write!(f, "{name:<10}")?;
            for c in &self.columns {
                let text = match (cells.get(c), c) {
                    (Some(cell), CapacityColumn::Capacity(cap)) => {
                        match self.improvement(name, *cap) {
                            Some(imp) => format!("{:.2} ms ({:+.1}%)", cell.mean_ms, imp * 100.0),
                            None => format!("{:.2} ms", cell.mean_ms),
                        }
                    }
                    (Some(cell), CapacityColumn::NoCache) => format!("{:.2} ms", cell.mean_ms),
                    (None, _) => "-".into(),
                };
                write!(f, " | {text:>22}")?;
            }
            writeln!(f)?;
            write!(f, "{:<10}", "  rps")?;
            for c in &self.columns {
                let text = cells.get(c).map_or("-".into(), |cell| format!("{:.1}", cell.rps));
                write!(f, " | {text:>22}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(seq: usize, key: u32, outcome: Outcome, ms: u64, at_ms: u64) -> RequestSample {
        RequestSample {
            seq,
            key,
            outcome,
            latency: Duration::from_millis(ms),
            completed_at: Duration::from_millis(at_ms),
            ok: true,
            found: true,
            timed_out: false,
        }
    }

    #[test]
    fn statistics() {
        let r = MetricsReport::new(
            vec![
                sample(0, 1, Outcome::Miss, 10, 10),
                sample(1, 1, Outcome::Hit, 2, 12),
                sample(2, 2, Outcome::Miss, 10, 22),
                sample(3, 1, Outcome::Hit, 2, 24),
            ],
            Duration::from_millis(24),
        );
        assert_eq!(r.mean_ms(), 6.0);
        assert_eq!(r.median_ms(), 2.0);
        assert_eq!(r.percentile_ms(100.0), 10.0);
        assert_eq!(r.stratum_mean_ms(Outcome::Hit), 2.0);
        assert_eq!(r.hit_rate(), 0.5);
        assert_eq!(r.post_warmup_mean_ms(0.5), 6.0);
        assert_eq!(r.first_request_ms(), BTreeMap::from([(1, 10.0), (2, 10.0)]));
        let counts = r.throughput_counts(Duration::from_millis(10));
        assert_eq!(counts, vec![0, 2, 2]);
        assert_eq!(counts.iter().sum::<u64>() as usize, r.len());
    }

    #[test]
    fn improvement_arithmetic() {
        assert!((improvement(8.08, 164.0) - 0.9507).abs() < 1e-4);
        assert!(improvement(174.48, 164.0) < 0.0);
    }
}
