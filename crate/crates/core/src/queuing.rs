//! Steady-state queuing models used to size a function's container pool.
//!
//! Two pool shapes are supported:
//!
//! * a homogeneous pool of `c` identical containers (M/M/c, FCFS), and
//! * a heterogeneous pool whose containers run at different rates, analysed
//!   under the worst-case assumption that work is always placed on the
//!   slowest idle containers first.
//!
//! Both reduce to a birth-death chain whose state weights are accumulated in
//! log space, so pools of ten thousand containers or offered loads of ten
//! thousand Erlangs never touch a raw factorial or power.
//!
//! The provisioning rule sums the state distribution up to the largest
//! queue length whose mean drain time fits the waiting budget,
//! `L = floor(t * drain + c - 1)`, where `drain` is the pool's full service
//! rate (`c * mu` for homogeneous pools). [`erlang_wait_cdf`] and
//! [`worst_case_wait_cdf`] give the exact waiting-time distribution of the
//! same chains and are what a simulation should be compared against.

use crate::error::{Error, Result};
use crate::reclamation::ServiceProfile;

pub const DEFAULT_PERCENTILE: f64 = 0.99;
pub const DEFAULT_CAP: u32 = 10_000;

/// Guards `floor` against representation noise such as `2.9999999999999996`.
const INDEX_EPS: f64 = 1e-9;

/// Poisson arrivals served FCFS by `c` identical exponential servers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousModel {
    pub lambda: f64,
    pub mu: f64,
    pub c: u32,
}

impl HomogeneousModel {
    pub fn new(lambda: f64, mu: f64, c: u32) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("arrival rate {lambda}")));
        }
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("service rate {mu}")));
        }
        if c == 0 {
            return Err(Error::InvalidParameter("container count 0".into()));
        }
        Ok(Self { lambda, mu, c })
    }

    /// Offered load `lambda / mu`.
    pub fn offered_load(&self) -> f64 {
        self.lambda / self.mu
    }

    pub fn utilization(&self) -> f64 {
        self.lambda / (self.c as f64 * self.mu)
    }

    pub fn is_stable(&self) -> bool {
        self.lambda < self.c as f64 * self.mu
    }

    fn distribution(&self) -> Result<PoolDistribution> {
        let capacity = self.c as f64 * self.mu;
        if !self.is_stable() {
            return Err(Error::UnstableSystem {
                lambda: self.lambda,
                capacity,
            });
        }
        let mu = self.mu;
        Ok(PoolDistribution::new(self.lambda, self.c as usize, |n| {
            n as f64 * mu
        }))
    }
}

/// Poisson arrivals served by containers with unequal exponential rates.
///
/// Rates are kept sorted ascending; the model assumes the scheduler fills the
/// slowest containers first, which bounds the waiting time of any real
/// idle-selection policy from above.
#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneousModel {
    lambda: f64,
    rates: Vec<f64>,
}

impl HeterogeneousModel {
    pub fn new(lambda: f64, mut rates: Vec<f64>) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("arrival rate {lambda}")));
        }
        if rates.is_empty() {
            return Err(Error::InvalidParameter("empty container pool".into()));
        }
        if let Some(bad) = rates.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidParameter(format!("service rate {bad}")));
        }
        rates.sort_by(f64::total_cmp);
        Ok(Self { lambda, rates })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Service rates, slowest first.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn total_rate(&self) -> f64 {
        self.rates.iter().sum()
    }

    pub fn is_stable(&self) -> bool {
        self.lambda < self.total_rate()
    }

    fn distribution(&self) -> Result<PoolDistribution> {
        if !self.is_stable() {
            return Err(Error::UnstableSystem {
                lambda: self.lambda,
                capacity: self.total_rate(),
            });
        }
        Ok(PoolDistribution::from_sorted_rates(self.lambda, &self.rates))
    }
}

/// Waiting-time objective: `P(wait <= t) >= percentile`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaitTarget {
    pub t: f64,
    pub percentile: f64,
}

impl WaitTarget {
    pub fn new(t: f64, percentile: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter(format!("waiting bound {t}")));
        }
        if !(percentile > 0.0 && percentile < 1.0) {
            return Err(Error::InvalidParameter(format!("percentile {percentile}")));
        }
        Ok(Self { t, percentile })
    }

    /// Bound `t` at the default 0.99 percentile.
    pub fn at(t: f64) -> Result<Self> {
        Self::new(t, DEFAULT_PERCENTILE)
    }

    pub fn with_percentile(self, percentile: f64) -> Result<Self> {
        Self::new(self.t, percentile)
    }
}

/// Stationary distribution of a birth-death chain with constant birth rate
/// and death rates that grow up to state `c` and stay flat afterwards.
#[derive(Debug, Clone)]
struct PoolDistribution {
    /// Unnormalised `ln P_n` for `n = 0..=c`.
    log_head: Vec<f64>,
    /// `ln(lambda / drain)`, the geometric ratio beyond state `c`.
    log_ratio: f64,
    /// `ln(1 - lambda / drain)`.
    log_one_minus_ratio: f64,
    log_norm: f64,
    drain: f64,
    lambda: f64,
}

impl PoolDistribution {
    fn new(lambda: f64, c: usize, death_rate: impl Fn(usize) -> f64) -> Self {
        let log_lambda = lambda.ln();
        let mut log_head = Vec::with_capacity(c + 1);
        log_head.push(0.0);
        for n in 1..=c {
            let prev = log_head[n - 1];
            log_head.push(prev + log_lambda - death_rate(n).ln());
        }
        let drain = death_rate(c);
        let ratio = lambda / drain;
        let log_ratio = ratio.ln();
        let log_one_minus_ratio = (-ratio).ln_1p();
        let log_norm = log_sum_exp(
            log_head[..c]
                .iter()
                .copied()
                .chain(std::iter::once(log_head[c] - log_one_minus_ratio)),
        );
        Self {
            log_head,
            log_ratio,
            log_one_minus_ratio,
            log_norm,
            drain,
            lambda,
        }
    }

    fn from_sorted_rates(lambda: f64, rates: &[f64]) -> Self {
        let mut prefix = Vec::with_capacity(rates.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for r in rates {
            acc += r;
            prefix.push(acc);
        }
        Self::new(lambda, rates.len(), |n| prefix[n])
    }

    fn servers(&self) -> usize {
        self.log_head.len() - 1
    }

    fn prob(&self, n: usize) -> f64 {
        let c = self.servers();
        if n <= c {
            (self.log_head[n] - self.log_norm).exp()
        } else {
            self.log_tail_from(c + (n - c), false).exp()
        }
    }

    /// `ln P_n` (`cumulative == false`) or `ln P(N >= n)` for `n >= c`.
    fn log_tail_from(&self, n: usize, cumulative: bool) -> f64 {
        let c = self.servers();
        debug_assert!(n >= c);
        let at_c = self.log_head[c];
        if at_c == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let k = (n - c) as f64;
        let geometric = if k == 0.0 { 0.0 } else { k * self.log_ratio };
        let base = at_c + geometric - self.log_norm;
        if cumulative {
            base - self.log_one_minus_ratio
        } else {
            base
        }
    }

    /// Probability that an arrival finds every container busy.
    fn prob_all_busy(&self) -> f64 {
        self.log_tail_from(self.servers(), true).exp()
    }

    /// `sum_{n=0}^{L} P_n` with `L = floor(t * drain + c - 1)`.
    fn index_tail(&self, t: f64) -> f64 {
        let c = self.servers();
        let limit = (t * self.drain + c as f64 - 1.0 + INDEX_EPS).floor();
        // t > 0 keeps limit >= c - 1, so the complement starts in the tail.
        let first_excluded = (limit as usize + 1).max(c);
        1.0 - self.log_tail_from(first_excluded, true).exp()
    }

    fn exact_wait_cdf(&self, t: f64) -> f64 {
        1.0 - self.prob_all_busy() * (-(self.drain - self.lambda) * t).exp()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Probability that the homogeneous pool is empty.
pub fn p_zero_homogeneous(m: &HomogeneousModel) -> Result<f64> {
    Ok(m.distribution()?.prob(0))
}

/// Stationary probability of `n` requests in a homogeneous pool.
pub fn steady_prob_homogeneous(m: &HomogeneousModel, n: usize) -> Result<f64> {
    Ok(m.distribution()?.prob(n))
}

/// Provisioning estimate of `P(wait <= t)` for a homogeneous pool.
pub fn wait_tail_homogeneous(m: &HomogeneousModel, t: f64) -> Result<f64> {
    check_bound(t)?;
    Ok(m.distribution()?.index_tail(t))
}

/// Exact M/M/c waiting-time CDF, `1 - C(c, r) * exp(-(c mu - lambda) t)`.
pub fn erlang_wait_cdf(m: &HomogeneousModel, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("waiting bound {t}")));
    }
    Ok(m.distribution()?.exact_wait_cdf(t))
}

/// Probability that an arrival must queue (Erlang C).
pub fn erlang_c(m: &HomogeneousModel) -> Result<f64> {
    Ok(m.distribution()?.prob_all_busy())
}

/// Worst-case stationary probability of `n` requests in a heterogeneous pool.
pub fn steady_probs_heterogeneous(m: &HeterogeneousModel, n: usize) -> Result<f64> {
    Ok(m.distribution()?.prob(n))
}

/// Provisioning estimate of `P(wait <= t)` for a heterogeneous pool, using
/// the pool's full drain rate in place of `c * mu`.
pub fn wait_tail_heterogeneous(m: &HeterogeneousModel, t: f64) -> Result<f64> {
    check_bound(t)?;
    Ok(m.distribution()?.index_tail(t))
}

/// Lower bound on `P(wait <= t)` for any idle-selection policy: the
/// worst-case probability that all containers are busy, followed by an
/// exponential drain at the pool's full rate.
pub fn worst_case_wait_cdf(m: &HeterogeneousModel, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("waiting bound {t}")));
    }
    Ok(m.distribution()?.exact_wait_cdf(t))
}

fn check_bound(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("waiting bound {t}")))
    }
}

/// Smallest stable container count: `floor(lambda / mu) + 1`.
pub fn stability_floor(lambda: f64, mu: f64) -> u64 {
    let mut c = ((lambda / mu).floor() as u64 + 1).max(1);
    while c as f64 * mu <= lambda {
        c += 1;
    }
    c
}

/// Smallest container count meeting `target` for arrival rate `lambda`.
///
/// `c_start` (typically the current pool size) is only a warm start: the
/// search walks down from it when it already satisfies the target and up
/// otherwise, so the answer never depends on the seed.
pub fn find_c_homogeneous(lambda: f64, mu: f64, target: &WaitTarget, c_start: u32) -> Result<u32> {
    find_c_homogeneous_capped(lambda, mu, target, c_start, DEFAULT_CAP)
}

pub fn find_c_homogeneous_capped(
    lambda: f64,
    mu: f64,
    target: &WaitTarget,
    c_start: u32,
    cap: u32,
) -> Result<u32> {
    HomogeneousModel::new(lambda, mu, 1)?;
    let floor = stability_floor(lambda, mu);
    if floor > cap as u64 {
        return Err(Error::CapExceeded { cap });
    }
    let floor = floor as u32;
    let satisfied = |c: u32| -> Result<bool> {
        let m = HomogeneousModel { lambda, mu, c };
        Ok(m.distribution()?.index_tail(target.t) >= target.percentile)
    };

    let mut c = c_start.clamp(floor, cap);
    if satisfied(c)? {
        while c > floor && satisfied(c - 1)? {
            c -= 1;
        }
        return Ok(c);
    }
    loop {
        c += 1;
        if c > cap {
            return Err(Error::CapExceeded { cap });
        }
        if satisfied(c)? {
            return Ok(c);
        }
    }
}

/// Number of standard containers to add to `existing_rates` so that the
/// combined pool meets `target` under the worst-case heterogeneous model.
pub fn find_c_heterogeneous(
    lambda: f64,
    existing_rates: &[f64],
    standard_mu: f64,
    target: &WaitTarget,
) -> Result<u32> {
    find_c_heterogeneous_capped(lambda, existing_rates, standard_mu, target, DEFAULT_CAP)
}

pub fn find_c_heterogeneous_capped(
    lambda: f64,
    existing_rates: &[f64],
    standard_mu: f64,
    target: &WaitTarget,
    cap: u32,
) -> Result<u32> {
    if !(standard_mu > 0.0) || !standard_mu.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "standard service rate {standard_mu}"
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("arrival rate {lambda}")));
    }
    let mut sorted = existing_rates.to_vec();
    if let Some(bad) = sorted.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidParameter(format!("service rate {bad}")));
    }
    sorted.sort_by(f64::total_cmp);
    let split = sorted.partition_point(|r| *r < standard_mu);
    let existing_total: f64 = sorted.iter().sum();

    let mut k: u64 = if existing_total > lambda {
        0
    } else {
        stability_floor(lambda - existing_total, standard_mu)
    };
    let mut pool = Vec::with_capacity(sorted.len() + k as usize + 16);
    loop {
        if sorted.len() as u64 + k > cap as u64 {
            return Err(Error::CapExceeded { cap });
        }
        if sorted.len() as u64 + k > 0 {
            pool.clear();
            pool.extend_from_slice(&sorted[..split]);
            pool.extend(std::iter::repeat_n(standard_mu, k as usize));
            pool.extend_from_slice(&sorted[split..]);
            let total: f64 = pool.iter().sum();
            if lambda < total {
                let dist = PoolDistribution::from_sorted_rates(lambda, &pool);
                if dist.index_tail(target.t) >= target.percentile {
                    return Ok(k as u32);
                }
            }
        }
        k += 1;
    }
}

/// Waiting budget left after the function's p99 service time.
pub fn wait_budget(deadline_seconds: f64, profile: &ServiceProfile) -> Result<WaitTarget> {
    let service_p99 = profile.service_time_quantile(0.99);
    if !(deadline_seconds > service_p99) {
        return Err(Error::InfeasibleDeadline {
            deadline: deadline_seconds,
            service_p99,
        });
    }
    WaitTarget::at(deadline_seconds - service_p99)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn mm(lambda: f64, mu: f64, c: u32) -> HomogeneousModel {
        HomogeneousModel::new(lambda, mu, c).unwrap()
    }

    /// Direct summation of the M/M/c weights with factorials, used as an
    /// independent reference for small pools.
    fn brute_probs(lambda: f64, mu: f64, c: u32, upto: usize) -> Vec<f64> {
        let r = lambda / mu;
        let rho = r / c as f64;
        let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>();
        let mut w: Vec<f64> = (0..=upto)
            .map(|n| {
                if n as u32 <= c {
                    r.powi(n as i32) / fact(n as u32)
                } else {
                    r.powi(n as i32) / (fact(c) * (c as f64).powi(n as i32 - c as i32))
                }
            })
            .collect();
        // Close the series analytically so the reference is normalised.
        let tail_mass = r.powi(c as i32) / fact(c) * rho.powi((upto - c as usize + 1) as i32)
            / (1.0 - rho);
        let total: f64 = w.iter().sum::<f64>() + tail_mass;
        w.iter_mut().for_each(|x| *x /= total);
        w
    }

    #[test]
    fn p_zero_mm1() {
        assert_close!(p_zero_homogeneous(&mm(5.0, 10.0, 1)).unwrap(), 0.5, 1e-12);
    }

    #[test]
    fn p_zero_two_servers() {
        assert_close!(p_zero_homogeneous(&mm(10.0, 10.0, 2)).unwrap(), 1.0 / 3.0, 1e-12);
    }

    #[test]
    fn p_zero_matches_series_normalisation() {
        let m = mm(40.0, 10.0, 8);
        let p0 = p_zero_homogeneous(&m).unwrap();
        assert!(p0 > 0.0 && p0 < 1.0);
        let brute = brute_probs(40.0, 10.0, 8, 400);
        assert_close!(p0, brute[0], 1e-9);
        let sum: f64 = (0..2000).map(|n| steady_prob_homogeneous(&m, n).unwrap()).sum();
        assert_close!(sum, 1.0, 1e-9);
    }

    #[test]
    fn steady_probs_mm1_geometric() {
        let m = mm(5.0, 10.0, 1);
        for k in 0..20 {
            assert_close!(
                steady_prob_homogeneous(&m, k).unwrap(),
                0.5 * 0.5f64.powi(k as i32),
                1e-12
            );
        }
    }

    #[test]
    fn steady_probs_two_servers() {
        let m = mm(10.0, 10.0, 2);
        assert_close!(steady_prob_homogeneous(&m, 0).unwrap(), 1.0 / 3.0, 1e-12);
        // r = 1: P3 = P0 / (2^(3-2) * 2!) = 1/12
        assert_close!(steady_prob_homogeneous(&m, 3).unwrap(), 1.0 / 12.0, 1e-12);
        let brute = brute_probs(10.0, 10.0, 2, 60);
        for (n, p) in brute.iter().enumerate() {
            assert_close!(steady_prob_homogeneous(&m, n).unwrap(), *p, 1e-12);
        }
    }

    #[test]
    fn unstable_and_invalid_inputs() {
        assert!(matches!(
            p_zero_homogeneous(&mm(20.0, 10.0, 2)),
            Err(Error::UnstableSystem { .. })
        ));
        assert!(matches!(
            HomogeneousModel::new(1.0, 0.0, 1),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            HomogeneousModel::new(1.0, 1.0, 0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn wait_tail_idle_system() {
        let p = wait_tail_homogeneous(&mm(1e-9, 10.0, 1), 0.1).unwrap();
        assert_close!(p, 1.0, 1e-8);
        assert_eq!(wait_tail_homogeneous(&mm(0.0, 10.0, 1), 0.1).unwrap(), 1.0);
    }

    #[test]
    fn wait_tail_monotone_in_c() {
        let p1 = wait_tail_homogeneous(&mm(5.0, 10.0, 3), 0.1).unwrap();
        let p2 = wait_tail_homogeneous(&mm(5.0, 10.0, 4), 0.1).unwrap();
        assert!(p2 >= p1);
    }

    #[test]
    fn wait_tail_matches_direct_index_sum() {
        // L = floor(0.1 * 3 * 10 + 3 - 1) = 5
        let brute = brute_probs(15.0, 10.0, 3, 200);
        let direct: f64 = brute[..=5].iter().sum();
        assert_close!(wait_tail_homogeneous(&mm(15.0, 10.0, 3), 0.1).unwrap(), direct, 1e-12);
    }

    #[test]
    fn erlang_cdf_mm1_closed_form() {
        // P(W > t) = rho * exp(-mu (1 - rho) t)
        let p = erlang_wait_cdf(&mm(5.0, 10.0, 1), 0.5).unwrap();
        assert_close!(1.0 - p, 0.5 * (-2.5f64).exp(), 1e-12);
    }

    #[test]
    fn find_c_near_idle() {
        let t = WaitTarget::at(0.1).unwrap();
        assert_eq!(find_c_homogeneous(0.01, 10.0, &t, 0).unwrap(), 1);
    }

    #[test]
    fn find_c_monotone_in_lambda() {
        let t = WaitTarget::at(0.1).unwrap();
        let c1 = find_c_homogeneous(10.0, 10.0, &t, 0).unwrap();
        let c2 = find_c_homogeneous(20.0, 10.0, &t, 0).unwrap();
        assert!(c2 >= c1);
    }

    #[test]
    fn find_c_is_smallest_satisfying_and_seed_independent() {
        let t = WaitTarget::new(0.1, 0.95).unwrap();
        let c = find_c_homogeneous(50.0, 10.0, &t, 0).unwrap();
        assert!(wait_tail_homogeneous(&mm(50.0, 10.0, c), 0.1).unwrap() >= 0.95);
        assert!(
            c == stability_floor(50.0, 10.0) as u32
                || wait_tail_homogeneous(&mm(50.0, 10.0, c - 1), 0.1).unwrap() < 0.95
        );
        for seed in [0, 3, c - 1, c, c + 1, 40] {
            assert_eq!(find_c_homogeneous(50.0, 10.0, &t, seed).unwrap(), c);
        }
    }

    #[test]
    fn find_c_cap() {
        let t = WaitTarget::at(0.1).unwrap();
        assert!(matches!(
            find_c_homogeneous_capped(1000.0, 1.0, &t, 0, 100),
            Err(Error::CapExceeded { cap: 100 })
        ));
    }

    #[test]
    fn heterogeneous_equal_rates_match_homogeneous() {
        let h = HeterogeneousModel::new(25.0, vec![10.0; 4]).unwrap();
        let m = mm(25.0, 10.0, 4);
        for n in 0..50 {
            assert_close!(
                steady_probs_heterogeneous(&h, n).unwrap(),
                steady_prob_homogeneous(&m, n).unwrap(),
                1e-9
            );
        }
        assert_close!(
            wait_tail_heterogeneous(&h, 0.05).unwrap(),
            wait_tail_homogeneous(&m, 0.05).unwrap(),
            1e-12
        );
    }

    #[test]
    fn heterogeneous_slowest_first_head() {
        let h = HeterogeneousModel::new(5.0, vec![10.0, 5.0]).unwrap();
        let p0 = steady_probs_heterogeneous(&h, 0).unwrap();
        assert_close!(steady_probs_heterogeneous(&h, 1).unwrap(), p0, 1e-15);
        // n = 2: P0 * 25 / (5 * 15)
        assert_close!(steady_probs_heterogeneous(&h, 2).unwrap(), p0 / 3.0, 1e-15);
    }

    #[test]
    fn heterogeneous_normalises() {
        let h = HeterogeneousModel::new(12.0, vec![4.0, 6.0, 8.0]).unwrap();
        let sum: f64 = (0..2000).map(|n| steady_probs_heterogeneous(&h, n).unwrap()).sum();
        assert_close!(sum, 1.0, 1e-9);
        assert!(matches!(
            steady_probs_heterogeneous(&HeterogeneousModel::new(18.0, vec![4.0, 6.0, 8.0]).unwrap(), 0),
            Err(Error::UnstableSystem { .. })
        ));
    }

    #[test]
    fn find_c_heterogeneous_noop_and_reduction() {
        let t = WaitTarget::at(0.1).unwrap();
        assert_eq!(find_c_heterogeneous(5.0, &[10.0; 6], 10.0, &t).unwrap(), 0);
        for lambda in [0.5, 5.0, 17.0, 42.0, 99.0] {
            assert_eq!(
                find_c_heterogeneous(lambda, &[], 10.0, &t).unwrap(),
                find_c_homogeneous(lambda, 10.0, &t, 0).unwrap(),
                "lambda {lambda}"
            );
        }
    }

    #[test]
    fn find_c_heterogeneous_deflated_pool() {
        let t = WaitTarget::new(0.09, 0.95).unwrap();
        let k = find_c_heterogeneous(30.0, &[7.0, 7.0, 7.0], 10.0, &t).unwrap();
        let pool = |k: usize| {
            let mut r = vec![7.0; 3];
            r.extend(std::iter::repeat_n(10.0, k));
            HeterogeneousModel::new(30.0, r).unwrap()
        };
        assert!(wait_tail_heterogeneous(&pool(k as usize), 0.09).unwrap() >= 0.95);
        let prev = pool(k as usize - 1);
        assert!(!prev.is_stable() || wait_tail_heterogeneous(&prev, 0.09).unwrap() < 0.95);
    }

    #[test]
    fn large_pools_do_not_overflow() {
        let m = mm(9_999.0, 1.0, 10_000);
        let p0 = p_zero_homogeneous(&m).unwrap();
        assert!(p0.is_finite() && p0 >= 0.0);
        let p = wait_tail_homogeneous(&m, 1.0).unwrap();
        assert!((0.0..=1.0).contains(&p));
        let c = find_c_homogeneous(5_000.0, 1.0, &WaitTarget::at(0.5).unwrap(), 0).unwrap();
        assert!(c > 5_000 && c < 6_000);
    }

    #[test]
    fn wait_budget_examples() {
        let det = ServiceProfile::deterministic(10.0).unwrap();
        assert_close!(wait_budget(0.2, &det).unwrap().t, 0.1, 1e-12);
        let exp = ServiceProfile::exponential(100.0).unwrap();
        assert_close!(wait_budget(0.1, &exp).unwrap().t, 0.1 - 100f64.ln() / 100.0, 1e-12);
        assert_close!(wait_budget(0.1, &exp).unwrap().t, 0.0539, 1e-4);
        assert!(matches!(
            wait_budget(0.05, &ServiceProfile::exponential(10.0).unwrap()),
            Err(Error::InfeasibleDeadline { .. })
        ));
    }
}
