//! Monte-Carlo reference for the queuing formulas: Poisson arrivals,
//! exponential service at per-container rates, one shared FCFS queue.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::simulator::percentile;

const BATCHES: usize = 50;

/// Which idle container takes a request when several are free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdlePolicy {
    FastestIdle,
    SlowestIdle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub samples: usize,
    /// Empirical `P(wait <= t)`.
    pub p_within: f64,
    pub p_within_se: f64,
    pub p95_wait: f64,
    pub p95_wait_se: f64,
    pub mean_wait: f64,
    pub mean_wait_se: f64,
    pub mean_response: f64,
    pub mean_response_se: f64,
    /// Mean number in system seen by arriving requests.
    pub mean_in_system: f64,
    pub mean_in_system_se: f64,
}

fn batch_stats(values: &[f64], stat: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    let size = values.len() / BATCHES;
    let means: Vec<f64> = (0..BATCHES)
        .map(|b| stat(&values[b * size..(b + 1) * size]))
        .collect();
    let m = means.iter().sum::<f64>() / BATCHES as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    (m, (var / BATCHES as f64).sqrt())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn p95(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    percentile(&s, 0.95)
}

/// Service-time law used by the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ServiceLaw {
    #[default]
    Exponential,
    /// Every request takes exactly `1 / rate`.
    Deterministic,
}

/// Simulates `requests` measured arrivals (after a warm-up of one tenth as
/// many) and reports waiting-time statistics with batch-means standard
/// errors.
pub fn mc_wait(
    lambda: f64,
    rates: &[f64],
    t: f64,
    requests: usize,
    seed: u64,
    policy: IdlePolicy,
) -> Result<OracleResult> {
    mc_wait_with(lambda, rates, t, requests, seed, policy, ServiceLaw::Exponential)
}

/// [`mc_wait`] with a choice of service-time law.
pub fn mc_wait_with(
    lambda: f64,
    rates: &[f64],
    t: f64,
    requests: usize,
    seed: u64,
    policy: IdlePolicy,
    law: ServiceLaw,
) -> Result<OracleResult> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("arrival rate {lambda}")));
    }
    if rates.is_empty() || rates.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidParameter("service rates must be positive".into()));
    }
    let capacity: f64 = rates.iter().sum();
    if lambda >= capacity {
        return Err(Error::UnstableSystem { lambda, capacity });
    }
    if requests < BATCHES * 2 {
        return Err(Error::InvalidParameter(format!("need at least {} requests", BATCHES * 2)));
    }

    let mut order: Vec<usize> = (0..rates.len()).collect();
    order.sort_by(|a, b| rates[*a].total_cmp(&rates[*b]).then(a.cmp(b)));
    if policy == IdlePolicy::FastestIdle {
        order.reverse();
    }
    let services: Vec<Exp<f64>> = rates.iter().map(|r| Exp::new(*r).expect("positive")).collect();
    let gap = Exp::new(lambda).expect("positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let warmup = requests / 10;
    let mut free_at = vec![0.0f64; rates.len()];
    let mut departures: BinaryHeap<Reverse<u64>> = BinaryHeap::new();
    let mut waits = Vec::with_capacity(requests);
    let mut responses = Vec::with_capacity(requests);
    let mut in_system = Vec::with_capacity(requests);
    let mut now = 0.0;
    for n in 0..warmup + requests {
        now += gap.sample(&mut rng);
        while departures.peek().is_some_and(|Reverse(d)| f64::from_bits(*d) <= now) {
            departures.pop();
        }
        let seen = departures.len();
        let server = match order.iter().copied().find(|j| free_at[*j] <= now) {
            Some(j) => j,
            None => {
                let earliest = free_at.iter().copied().fold(f64::INFINITY, f64::min);
                order
                    .iter()
                    .copied()
                    .find(|j| free_at[*j] == earliest)
                    .expect("some server frees first")
            }
        };
        let start = free_at[server].max(now);
        let service = match law {
            ServiceLaw::Exponential => services[server].sample(&mut rng),
            ServiceLaw::Deterministic => 1.0 / rates[server],
        };
        let done = start + service;
        free_at[server] = done;
        // Departure times are nonnegative, so their bit patterns sort
        // in numeric order.
        departures.push(Reverse(done.to_bits()));
        if n >= warmup {
            waits.push(start - now);
            responses.push(done - now);
            in_system.push(seen as f64);
        }
    }

    let within: Vec<f64> = waits.iter().map(|w| if *w <= t { 1.0 } else { 0.0 }).collect();
    let (p_within, p_within_se) = batch_stats(&within, mean);
    let (_, p95_wait_se) = batch_stats(&waits, p95);
    let (mean_wait, mean_wait_se) = batch_stats(&waits, mean);
    let (mean_response, mean_response_se) = batch_stats(&responses, mean);
    let (mean_in_system, mean_in_system_se) = batch_stats(&in_system, mean);
    Ok(OracleResult {
        samples: waits.len(),
        p_within,
        p_within_se,
        p95_wait: p95(&waits),
        p95_wait_se,
        mean_wait,
        mean_wait_se,
        mean_response,
        mean_response_se,
        mean_in_system,
        mean_in_system_se,
    })
}
