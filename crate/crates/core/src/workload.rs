//! Poisson workload generation, per-minute trace ingestion, and the
//! controller's arrival-rate estimator.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadSpec {
    Static {
        rate: f64,
    },
    /// Piecewise-constant `(start_seconds, rate)` steps; zero before the
    /// first start.
    Discrete {
        schedule: Vec<(f64, f64)>,
    },
    /// `(time_seconds, rate)` samples, linearly interpolated and held flat
    /// past either end.
    Continuous {
        samples: Vec<(f64, f64)>,
    },
    Trace(InvocationTrace),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvocationTrace {
    pub function_id: String,
    pub per_minute_counts: Vec<u64>,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let check = |points: &[(f64, f64)]| -> Result<()> {
            if points.is_empty() {
                return Err(Error::InvalidSchedule("empty schedule".into()));
            }
            for w in points.windows(2) {
                if !(w[1].0 > w[0].0) {
                    return Err(Error::InvalidSchedule(format!(
                        "times not strictly increasing at {}",
                        w[1].0
                    )));
                }
            }
            if let Some((t, r)) = points.iter().find(|(t, r)| !(*r >= 0.0) || !t.is_finite() || !r.is_finite()) {
                return Err(Error::InvalidSchedule(format!("rate {r} at {t}")));
            }
            Ok(())
        };
        match self {
            WorkloadSpec::Static { rate } => check(&[(0.0, *rate)]),
            WorkloadSpec::Discrete { schedule } => check(schedule),
            WorkloadSpec::Continuous { samples } => check(samples),
            WorkloadSpec::Trace(t) => {
                if t.per_minute_counts.is_empty() {
                    Err(Error::InvalidSchedule(format!("trace {} is empty", t.function_id)))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Nominal arrival rate at time `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        match self {
            WorkloadSpec::Static { rate } => *rate,
            WorkloadSpec::Discrete { schedule } => schedule
                .iter()
                .take_while(|(s, _)| *s <= t)
                .last()
                .map_or(0.0, |(_, r)| *r),
            WorkloadSpec::Continuous { samples } => interpolate(samples, t),
            WorkloadSpec::Trace(tr) => {
                let m = (t / 60.0).floor();
                if m < 0.0 {
                    return 0.0;
                }
                tr.per_minute_counts
                    .get(m as usize)
                    .map_or(0.0, |c| *c as f64 / 60.0)
            }
        }
    }
}

fn interpolate(samples: &[(f64, f64)], t: f64) -> f64 {
    let i = samples.partition_point(|(s, _)| *s <= t);
    if i == 0 {
        return samples[0].1;
    }
    if i == samples.len() {
        return samples[i - 1].1;
    }
    let (t0, r0) = samples[i - 1];
    let (t1, r1) = samples[i];
    r0 + (r1 - r0) * (t - t0) / (t1 - t0)
}

/// Arrival timestamps in `[0, horizon)`, sorted, deterministic in `seed`.
pub fn generate_arrivals(spec: &WorkloadSpec, horizon: f64, seed: u64) -> Result<Vec<f64>> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon {horizon}")));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    match spec {
        WorkloadSpec::Static { rate } => poisson_segment(&mut rng, *rate, 0.0, horizon, &mut out),
        WorkloadSpec::Discrete { schedule } => {
            for (i, (start, rate)) in schedule.iter().enumerate() {
                let end = schedule.get(i + 1).map_or(horizon, |n| n.0).min(horizon);
                if *start < end {
                    poisson_segment(&mut rng, *rate, start.max(0.0), end, &mut out);
                }
            }
        }
        WorkloadSpec::Continuous { samples } => {
            let peak = samples.iter().map(|(_, r)| *r).fold(0.0, f64::max);
            if peak > 0.0 {
                let gap = Exp::new(peak).expect("positive rate");
                let mut t = 0.0;
                loop {
                    t += gap.sample(&mut rng);
                    if t >= horizon {
                        break;
                    }
                    if rng.random::<f64>() * peak < interpolate(samples, t) {
                        out.push(t);
                    }
                }
            }
        }
        WorkloadSpec::Trace(trace) => {
            for (m, count) in trace.per_minute_counts.iter().enumerate() {
                let start = m as f64 * 60.0;
                if start >= horizon {
                    break;
                }
                let mut minute: Vec<f64> = (0..*count)
                    .map(|_| start + rng.random::<f64>() * 60.0)
                    .filter(|t| *t < horizon)
                    .collect();
                minute.sort_by(f64::total_cmp);
                out.extend(minute);
            }
        }
    }
    Ok(out)
}

fn poisson_segment<R: Rng>(rng: &mut R, rate: f64, start: f64, end: f64, out: &mut Vec<f64>) {
    if rate <= 0.0 {
        return;
    }
    let gap = Exp::new(rate).expect("positive rate");
    let mut t = start;
    loop {
        t += gap.sample(rng);
        if t >= end {
            break;
        }
        out.push(t);
    }
}

/// Stable per-function seed so each function's arrivals do not depend on
/// which other functions share the scenario.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in label.bytes().chain(seed.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    function_id: String,
    minute_index: i64,
    count: i64,
}

/// Reads a `function_id,minute_index,count` CSV. Missing minutes count as
/// zero; traces are returned in order of first appearance.
pub fn load_trace(path: &Path) -> Result<Vec<InvocationTrace>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    if headers.iter().ne(["function_id", "minute_index", "count"]) {
        return Err(Error::Schema(format!(
            "{}: expected header function_id,minute_index,count",
            path.display()
        )));
    }
    let mut order: Vec<String> = Vec::new();
    let mut minutes: BTreeMap<String, BTreeMap<u64, u64>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: TraceRow = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_error(path, line, e.to_string()))?;
        if row.count < 0 {
            return Err(Error::Schema(format!(
                "{}:{line}: negative count {}",
                path.display(),
                row.count
            )));
        }
        if row.minute_index < 0 {
            return Err(Error::Schema(format!(
                "{}:{line}: negative minute_index {}",
                path.display(),
                row.minute_index
            )));
        }
        let entry = minutes.entry(row.function_id.clone()).or_insert_with(|| {
            order.push(row.function_id.clone());
            BTreeMap::new()
        });
        if entry.insert(row.minute_index as u64, row.count as u64).is_some() {
            return Err(parse_error(
                path,
                line,
                format!("minute {} repeated for {}", row.minute_index, row.function_id),
            ));
        }
    }
    Ok(order
        .into_iter()
        .map(|f| {
            let m = &minutes[&f];
            let len = m.keys().next_back().map_or(0, |k| k + 1) as usize;
            let mut counts = vec![0; len];
            for (k, v) in m {
                counts[*k as usize] = *v;
            }
            InvocationTrace {
                function_id: f,
                per_minute_counts: counts,
            }
        })
        .collect())
}

fn parse_error(path: &Path, line: u64, message: String) -> Error {
    Error::Parse {
        path: path.into(),
        line,
        message,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub long_window: f64,
    pub short_window: f64,
    pub tick: f64,
    pub burst_factor: f64,
    pub alpha: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            long_window: 120.0,
            short_window: 10.0,
            tick: 5.0,
            burst_factor: 2.0,
            alpha: 0.7,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.short_window > 0.0 && self.short_window < self.long_window) {
            return Err(Error::config("estimator", "need 0 < short_window < long_window"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("estimator.alpha", "must be in (0, 1]"));
        }
        if !(self.burst_factor > 1.0) {
            return Err(Error::config("estimator.burst_factor", "must exceed 1"));
        }
        if !(self.tick > 0.0) {
            return Err(Error::config("estimator.tick", "must be positive"));
        }
        Ok(())
    }
}

/// Dual sliding-window rate estimator with EWMA smoothing.
#[derive(Debug, Clone)]
pub struct RateEstimator {
    config: EstimatorConfig,
    events: VecDeque<f64>,
    ewma: Option<f64>,
    origin: f64,
    last: f64,
}

impl RateEstimator {
    /// `origin` is when observation started; until a full long window has
    /// elapsed the long rate is taken over the time actually observed.
    pub fn new(config: EstimatorConfig, origin: f64) -> Self {
        Self {
            config,
            events: VecDeque::new(),
            ewma: None,
            origin,
            last: origin,
        }
    }

    pub fn with_ewma(mut self, ewma: f64) -> Self {
        self.ewma = Some(ewma);
        self
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn ewma(&self) -> Option<f64> {
        self.ewma
    }

    pub fn observe(&mut self, arrival: f64) -> Result<()> {
        if arrival < self.last {
            return Err(Error::NonMonotonicTime {
                last: self.last,
                now: arrival,
            });
        }
        self.last = arrival;
        self.events.push_back(arrival);
        self.evict(arrival);
        Ok(())
    }

    fn evict(&mut self, now: f64) {
        let cutoff = now - self.config.long_window;
        while self.events.front().is_some_and(|t| *t < cutoff) {
            self.events.pop_front();
        }
    }

    /// Raw long- and short-window rates at `now`.
    pub fn window_rates(&mut self, now: f64) -> (f64, f64) {
        self.evict(now);
        let c = &self.config;
        let long_span = (now - self.origin).clamp(c.short_window, c.long_window);
        let long_from = now - long_span;
        let short_from = now - c.short_window;
        let long = self.events.iter().filter(|t| **t >= long_from).count();
        let short = self.events.iter().rev().take_while(|t| **t >= short_from).count();
        (long as f64 / long_span, short as f64 / c.short_window)
    }

    /// Estimated arrival rate at `now`; advances the EWMA.
    pub fn estimate_rate(&mut self, now: f64) -> f64 {
        let (long, short) = self.window_rates(now);
        let burst = short > 0.0 && short >= self.config.burst_factor * long;
        self.update(if burst { short } else { long }, burst)
    }

    /// Folds one raw observation into the EWMA; a burst replaces it.
    pub fn update(&mut self, raw: f64, burst: bool) -> f64 {
        let next = match self.ewma {
            Some(prev) if !burst => self.config.alpha * raw + (1.0 - self.config.alpha) * prev,
            _ => raw,
        };
        self.ewma = Some(next);
        next
    }
}
