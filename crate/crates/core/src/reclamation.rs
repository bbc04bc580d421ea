//! Service-rate profiles under CPU deflation and the two reclamation
//! policies: terminate whole containers, or shrink every container's CPU
//! share by up to `tau` before terminating anything.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::cluster::{Action, ContainerId, ContainerState};
use crate::error::{Error, Result};

const EPS: f64 = 1e-9;

pub const DEFAULT_TAU: f64 = 0.3;
pub const DEFAULT_STEP: f64 = 0.05;
pub const DEFAULT_SLACK: f64 = 0.3;

/// Shape of the per-request service time at full CPU.
#[derive(Debug, Clone, PartialEq)]
pub enum ServiceDistribution {
    Exponential,
    Deterministic,
    /// Measured service times (seconds) at full CPU; resampled uniformly.
    Empirical(Vec<f64>),
}

/// Piecewise-linear map from CPU fraction to service-rate multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationCurve {
    /// `(cpu_fraction, multiplier)` knots, ascending in fraction, ending at
    /// `(1.0, 1.0)`. The segment below the first knot runs to the origin.
    points: Vec<(f64, f64)>,
}

impl DegradationCurve {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let Some(&(last_f, last_m)) = points.last() else {
            return Err(Error::InvalidParameter("empty degradation curve".into()));
        };
        if (last_f - 1.0).abs() > EPS || (last_m - 1.0).abs() > EPS {
            return Err(Error::InvalidParameter(
                "degradation curve must end at (1.0, 1.0)".into(),
            ));
        }
        let mut prev = (0.0, 0.0);
        for &(f, m) in &points {
            if !(f > 0.0 && f <= 1.0) || !(m > 0.0 && m <= 1.0 + EPS) {
                return Err(Error::InvalidParameter(format!(
                    "degradation knot ({f}, {m}) out of range"
                )));
            }
            if f <= prev.0 || m + EPS < prev.1 {
                return Err(Error::InvalidParameter(
                    "degradation curve must be increasing in cpu fraction".into(),
                ));
            }
            prev = (f, m);
        }
        Ok(Self { points })
    }

    /// Small penalty for the first `slack` of deflation, proportional
    /// slowdown once less than 30% of the CPU remains.
    pub fn with_slack(slack: f64) -> Result<Self> {
        if !(slack > 0.0 && slack < 0.7) {
            return Err(Error::InvalidParameter(format!("slack {slack}")));
        }
        Self::new(vec![(0.3, 0.3), (1.0 - slack, 0.9), (1.0, 1.0)])
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn multiplier(&self, cpu_fraction: f64) -> Result<f64> {
        if !(cpu_fraction > 0.0 && cpu_fraction <= 1.0 + EPS) {
            return Err(Error::InvalidFraction(cpu_fraction));
        }
        let f = cpu_fraction.min(1.0);
        let mut lo = (0.0, 0.0);
        for &hi in &self.points {
            if f <= hi.0 {
                let w = (f - lo.0) / (hi.0 - lo.0);
                return Ok(lo.1 + w * (hi.1 - lo.1));
            }
            lo = hi;
        }
        Ok(1.0)
    }
}

impl Default for DegradationCurve {
    fn default() -> Self {
        Self::with_slack(DEFAULT_SLACK).expect("default slack is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceProfile {
    /// Requests per second one full-size container sustains.
    pub base_rate: f64,
    pub distribution: ServiceDistribution,
    pub curve: DegradationCurve,
}

impl ServiceProfile {
    pub fn exponential(rate: f64) -> Result<Self> {
        Self::with_distribution(rate, ServiceDistribution::Exponential)
    }

    pub fn deterministic(rate: f64) -> Result<Self> {
        Self::with_distribution(rate, ServiceDistribution::Deterministic)
    }

    pub fn empirical(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter(
                "empirical service times must be positive".into(),
            ));
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        Self::with_distribution(1.0 / mean, ServiceDistribution::Empirical(samples))
    }

    fn with_distribution(rate: f64, distribution: ServiceDistribution) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidParameter(format!("service rate {rate}")));
        }
        Ok(Self {
            base_rate: rate,
            distribution,
            curve: DegradationCurve::default(),
        })
    }

    pub fn with_curve(mut self, curve: DegradationCurve) -> Self {
        self.curve = curve;
        self
    }

    /// Quantile `q` of the full-CPU service time.
    pub fn service_time_quantile(&self, q: f64) -> f64 {
        match &self.distribution {
            ServiceDistribution::Exponential => -(1.0 - q).ln() / self.base_rate,
            ServiceDistribution::Deterministic => 1.0 / self.base_rate,
            ServiceDistribution::Empirical(samples) => {
                let mut sorted = samples.clone();
                sorted.sort_by(f64::total_cmp);
                let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
                sorted[rank - 1]
            }
        }
    }

    /// Draws one service time for a container running at `rate`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, rate: f64) -> f64 {
        match &self.distribution {
            ServiceDistribution::Exponential => Exp::new(rate).expect("positive rate").sample(rng),
            ServiceDistribution::Deterministic => 1.0 / rate,
            ServiceDistribution::Empirical(samples) => {
                let s = samples[rng.random_range(0..samples.len())];
                s * self.base_rate / rate
            }
        }
    }
}

/// Effective request rate of a container holding `cpu_fraction` of its
/// standard CPU allocation.
pub fn service_rate(profile: &ServiceProfile, cpu_fraction: f64) -> Result<f64> {
    Ok(profile.base_rate * profile.curve.multiplier(cpu_fraction)?)
}

/// Reads a profile CSV with header `cpu_fraction,mean_service_time` and
/// converts it into a degradation curve relative to the `1.0` row.
pub fn load_profile_curve(path: &Path) -> Result<(f64, DegradationCurve)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().map(str::trim).ne(["cpu_fraction", "mean_service_time"]) {
        return Err(Error::Schema(format!(
            "{}: expected header cpu_fraction,mean_service_time",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    path: path.into(),
                    line,
                    message: format!("column {} is not a number", i + 1),
                })
        };
        let (f, t) = (field(0)?, field(1)?);
        if !(f > 0.0 && f <= 1.0) || !(t > 0.0) {
            return Err(Error::Parse {
                path: path.into(),
                line,
                message: format!("row ({f}, {t}) out of range"),
            });
        }
        rows.push((f, t));
    }
    let full = rows
        .iter()
        .find(|(f, _)| (*f - 1.0).abs() < EPS)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Schema(format!("{}: missing cpu_fraction 1.0 row", path.display())))?;
    let points = rows.iter().map(|(f, t)| (*f, full / t)).collect();
    let curve = DegradationCurve::new(points)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    Ok((1.0 / full, curve))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.into(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn total_vcpu(containers: &[&ContainerState]) -> f64 {
    containers.iter().map(|c| c.allocated_vcpu()).sum()
}

fn smallest_first<'a>(containers: &[&'a ContainerState]) -> Vec<&'a ContainerState> {
    let mut sorted = containers.to_vec();
    sorted.sort_by(|a, b| {
        a.allocated_vcpu()
            .total_cmp(&b.allocated_vcpu())
            .then(a.id.cmp(&b.id))
    });
    sorted
}

/// Terminates the smallest containers until the function's allocation is at
/// or below `target` vCPU.
pub fn reclaim_by_termination(containers: &[&ContainerState], target: f64) -> Vec<Action> {
    let mut total = total_vcpu(containers);
    let mut actions = Vec::new();
    for c in smallest_first(containers) {
        if total <= target + EPS {
            break;
        }
        total -= c.allocated_vcpu();
        actions.push(Action::Terminate { id: c.id });
    }
    actions
}

/// Deflates all containers uniformly in `step` increments (never below
/// `1 - tau` of their standard size) until the function's allocation reaches
/// `target` vCPU. If maximum deflation is not enough, the smallest
/// containers are terminated first and the survivors deflated to fit.
pub fn reclaim_by_deflation(
    containers: &[&ContainerState],
    target: f64,
    tau: f64,
    step: f64,
) -> Result<Vec<Action>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("deflation threshold {tau}")));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("deflation step {step}")));
    }
    let target = target.max(0.0);
    if total_vcpu(containers) <= target + EPS {
        return Ok(Vec::new());
    }
    let min_fraction = 1.0 - tau;
    let floor_vcpu = |c: &ContainerState| c.standard_vcpu * c.cpu_fraction.min(min_fraction);

    let mut survivors = smallest_first(containers);
    let mut actions = Vec::new();
    let mut deflated_total: f64 = survivors.iter().map(|c| floor_vcpu(c)).sum();
    while deflated_total > target + EPS {
        let c = survivors.remove(0);
        deflated_total -= floor_vcpu(c);
        actions.push(Action::Terminate { id: c.id });
    }

    let level = uniform_level(&survivors, target, min_fraction, step);
    for c in &survivors {
        let f = c.cpu_fraction.min(level).max(min_fraction.min(c.cpu_fraction));
        if f + EPS < c.cpu_fraction {
            actions.push(Action::Resize {
                id: c.id,
                cpu_fraction: f,
            });
        }
    }
    Ok(actions)
}

/// Common fraction ceiling at which `pool` holds `target` vCPU, reached by
/// lowering the ceiling `step` at a time and trimming the last step.
fn uniform_level(pool: &[&ContainerState], target: f64, min_fraction: f64, step: f64) -> f64 {
    let total_at = |level: f64| -> f64 {
        pool.iter()
            .map(|c| c.standard_vcpu * c.cpu_fraction.min(level.max(min_fraction)))
            .sum()
    };
    let mut level = 1.0;
    if total_at(level) <= target + EPS {
        return level;
    }
    loop {
        let next = (level - step).max(min_fraction);
        if total_at(next) <= target + EPS {
            // Trim the final step so the pool lands on the target.
            let (mut lo, mut hi) = (next, level);
            for _ in 0..64 {
                let mid = 0.5 * (lo + hi);
                if total_at(mid) <= target + EPS {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return lo;
        }
        if next <= min_fraction {
            return min_fraction;
        }
        level = next;
    }
}

/// Containers whose removal a reclamation plan implies.
pub fn terminated_ids(actions: &[Action]) -> Vec<ContainerId> {
    actions
        .iter()
        .filter_map(|a| match a {
            Action::Terminate { id } => Some(*id),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ContainerState;
    use std::io::Write;

    fn container(id: ContainerId, vcpu: f64, fraction: f64) -> ContainerState {
        ContainerState {
            id,
            function: "f".into(),
            node: 0,
            standard_vcpu: vcpu,
            cpu_fraction: fraction,
            memory_mb: 128,
            effective_rate: 10.0,
            lazy: false,
        }
    }

    fn refs(v: &[ContainerState]) -> Vec<&ContainerState> {
        v.iter().collect()
    }

    fn apply_total(pool: &[ContainerState], actions: &[Action]) -> (usize, f64) {
        let dead = terminated_ids(actions);
        let mut n = 0;
        let mut total = 0.0;
        for c in pool.iter().filter(|c| !dead.contains(&c.id)) {
            let f = actions
                .iter()
                .find_map(|a| match a {
                    Action::Resize { id, cpu_fraction } if *id == c.id => Some(*cpu_fraction),
                    _ => None,
                })
                .unwrap_or(c.cpu_fraction);
            n += 1;
            total += c.standard_vcpu * f;
        }
        (n, total)
    }

    #[test]
    fn service_rate_default_curve() {
        let p = ServiceProfile::exponential(10.0).unwrap();
        assert!((service_rate(&p, 1.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((service_rate(&p, 0.7).unwrap() - 9.0).abs() < 1e-12);
        assert!((service_rate(&p, 0.3).unwrap() - 3.0).abs() < 1e-12);
        assert!((service_rate(&p, 0.85).unwrap() - 9.5).abs() < 1e-12);
        assert!((service_rate(&p, 0.15).unwrap() - 1.5).abs() < 1e-12);
        assert!(matches!(service_rate(&p, 0.0), Err(Error::InvalidFraction(_))));
        assert!(matches!(service_rate(&p, 1.2), Err(Error::InvalidFraction(_))));
    }

    #[test]
    fn quantiles() {
        let e = ServiceProfile::exponential(100.0).unwrap();
        assert!((e.service_time_quantile(0.99) - 100f64.ln() / 100.0).abs() < 1e-12);
        let d = ServiceProfile::deterministic(10.0).unwrap();
        assert_eq!(d.service_time_quantile(0.99), 0.1);
        let s = ServiceProfile::empirical((1..=100).map(|i| i as f64 / 1000.0).collect()).unwrap();
        assert_eq!(s.service_time_quantile(0.99), 0.099);
    }

    #[test]
    fn termination_examples() {
        let pool: Vec<_> = (0..4).map(|i| container(i, 1.0, 1.0)).collect();
        let a = reclaim_by_termination(&refs(&pool), 2.0);
        assert_eq!(terminated_ids(&a), vec![0, 1]);

        let big = [container(7, 2.0, 1.0)];
        assert_eq!(terminated_ids(&reclaim_by_termination(&refs(&big), 1.0)), vec![7]);

        assert!(reclaim_by_termination(&refs(&pool), 4.0).is_empty());
    }

    #[test]
    fn termination_prefers_smallest() {
        let pool = [
            container(1, 1.0, 1.0),
            container(2, 1.0, 0.8),
            container(3, 1.0, 1.0),
        ];
        assert_eq!(terminated_ids(&reclaim_by_termination(&refs(&pool), 2.1)), vec![2]);
    }

    #[test]
    fn deflation_examples() {
        let pool: Vec<_> = (0..4).map(|i| container(i, 1.0, 1.0)).collect();
        let a = reclaim_by_deflation(&refs(&pool), 3.0, 0.3, 0.05).unwrap();
        assert!(terminated_ids(&a).is_empty());
        let (n, total) = apply_total(&pool, &a);
        assert_eq!(n, 4);
        assert!((total - 3.0).abs() < 1e-6);

        let a = reclaim_by_deflation(&refs(&pool), 2.4, 0.3, 0.05).unwrap();
        assert_eq!(terminated_ids(&a).len(), 1);
        let (n, total) = apply_total(&pool, &a);
        assert_eq!(n, 3);
        assert!((total - 2.4).abs() < 1e-6);
        for act in &a {
            if let Action::Resize { cpu_fraction, .. } = act {
                assert!((cpu_fraction - 0.8).abs() < 1e-6);
            }
        }

        assert!(reclaim_by_deflation(&refs(&pool), 5.0, 0.3, 0.05).unwrap().is_empty());
    }

    #[test]
    fn profile_file_normalises_to_full_row() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "cpu_fraction,mean_service_time").unwrap();
        writeln!(f, "1.0,0.1").unwrap();
        writeln!(f, "0.5,0.125").unwrap();
        writeln!(f, "0.25,0.4").unwrap();
        let (rate, curve) = load_profile_curve(f.path()).unwrap();
        assert!((rate - 10.0).abs() < 1e-12);
        assert!((curve.multiplier(0.5).unwrap() - 0.8).abs() < 1e-12);
        assert!((curve.multiplier(0.25).unwrap() - 0.25).abs() < 1e-12);

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "cpu_fraction,mean_service_time\n0.5,0.2").unwrap();
        assert!(matches!(load_profile_curve(g.path()), Err(Error::Schema(_))));

        let mut h = tempfile::NamedTempFile::new().unwrap();
        writeln!(h, "cpu_fraction,mean_service_time\n1.0,0.1\nabc,0.2").unwrap();
        assert!(matches!(load_profile_curve(h.path()), Err(Error::Parse { line: 3, .. })));
    }
}
