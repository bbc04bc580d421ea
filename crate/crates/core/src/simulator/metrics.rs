use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// One request. `start` is when its final attempt began service, so the
/// waiting time covers every queue it sat in, including reruns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestRecord {
    pub function: String,
    pub request: u64,
    pub arrival: f64,
    pub start: Option<f64>,
    pub completion: Option<f64>,
    pub container: Option<u64>,
    pub reruns: u32,
}

impl RequestRecord {
    pub fn wait(&self) -> Option<f64> {
        self.start.map(|s| s - self.arrival)
    }

    pub fn response(&self) -> Option<f64> {
        self.completion.map(|c| c - self.arrival)
    }
}

/// A function's allocation after one controller epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub time: f64,
    pub function: String,
    pub estimate: f64,
    pub c_current: u32,
    pub c_new: u32,
    pub c_guar: u32,
    pub c_adj: u32,
    pub demand_vcpu: f64,
    pub entitlement_vcpu: f64,
    /// Containers after the plan, lazy ones included.
    pub containers: u32,
    pub lazy: u32,
    pub deflated: u32,
    pub allocated_vcpu: f64,
    /// Allocation of the non-lazy containers.
    pub active_vcpu: f64,
    pub min_cpu_fraction: f64,
    pub overloaded: bool,
    pub infeasible: bool,
    pub unplaced: u32,
    pub created: u32,
    pub terminated: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FunctionSummary {
    pub generated: u64,
    pub completed: u64,
    pub in_flight: u64,
    pub measured: u64,
    pub wait_p50: f64,
    pub wait_p95: f64,
    pub wait_p99: f64,
    pub response_p50: f64,
    pub response_p95: f64,
    pub response_p99: f64,
    pub mean_wait: f64,
    pub slo_violation: f64,
    pub reruns: u64,
    pub created: u64,
    pub terminated: u64,
    pub mean_allocated_vcpu: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub horizon: f64,
    pub capacity_vcpu: f64,
    /// Allocated vCPU-time over capacity-time.
    pub allocation_utilization: f64,
    /// vCPU-time spent serving requests over capacity-time.
    pub busy_utilization: f64,
    /// Allocation utilization restricted to overloaded epochs; zero when
    /// the cluster never overloaded.
    pub overload_utilization: f64,
    pub overload_time: f64,
    pub created: u64,
    pub terminated: u64,
    pub functions: BTreeMap<String, FunctionSummary>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimMetrics {
    pub requests: Vec<RequestRecord>,
    pub epochs: Vec<EpochRecord>,
    pub summary: Summary,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    }
}

impl SimMetrics {
    pub fn function_epochs<'a>(&'a self, function: &'a str) -> impl Iterator<Item = &'a EpochRecord> + 'a {
        self.epochs.iter().filter(move |e| e.function == function)
    }

    /// Writes `requests.csv`, `epochs.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("requests.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        for r in &self.requests {
            w.serialize(r).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("epochs.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        for r in &self.epochs {
            w.serialize(r).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("summary.txt");
        std::fs::write(&path, self.summary.render()).map_err(|e| Error::io(&path, e))
    }
}

impl Summary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "horizon_s = {:.3}", self.horizon);
        let _ = writeln!(s, "capacity_vcpu = {:.3}", self.capacity_vcpu);
        let _ = writeln!(s, "allocation_utilization = {:.6}", self.allocation_utilization);
        let _ = writeln!(s, "busy_utilization = {:.6}", self.busy_utilization);
        let _ = writeln!(s, "overload_utilization = {:.6}", self.overload_utilization);
        let _ = writeln!(s, "overload_time_s = {:.3}", self.overload_time);
        let _ = writeln!(s, "containers_created = {}", self.created);
        let _ = writeln!(s, "containers_terminated = {}", self.terminated);
        for (f, m) in &self.functions {
            let _ = writeln!(s, "\n[function.{f}]");
            let _ = writeln!(s, "generated = {}", m.generated);
            let _ = writeln!(s, "completed = {}", m.completed);
            let _ = writeln!(s, "in_flight = {}", m.in_flight);
            let _ = writeln!(s, "measured = {}", m.measured);
            let _ = writeln!(s, "wait_p50_s = {:.6}", m.wait_p50);
            let _ = writeln!(s, "wait_p95_s = {:.6}", m.wait_p95);
            let _ = writeln!(s, "wait_p99_s = {:.6}", m.wait_p99);
            let _ = writeln!(s, "response_p50_s = {:.6}", m.response_p50);
            let _ = writeln!(s, "response_p95_s = {:.6}", m.response_p95);
            let _ = writeln!(s, "response_p99_s = {:.6}", m.response_p99);
            let _ = writeln!(s, "mean_wait_s = {:.6}", m.mean_wait);
            let _ = writeln!(s, "slo_violation = {:.6}", m.slo_violation);
            let _ = writeln!(s, "reruns = {}", m.reruns);
            let _ = writeln!(s, "containers_created = {}", m.created);
            let _ = writeln!(s, "containers_terminated = {}", m.terminated);
            let _ = writeln!(s, "mean_allocated_vcpu = {:.6}", m.mean_allocated_vcpu);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.95), 95.0);
        assert_eq!(percentile(&v, 0.5), 50.0);
        assert_eq!(percentile(&[3.0], 0.99), 3.0);
        assert_eq!(percentile(&[], 0.5), 0.0);
    }
}
