//! End-to-end acceptance checks. Runs without the libtest harness so each
//! criterion prints exactly one PASS/FAIL line; the process fails if any
//! criterion does.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use lass_core::allocator::{self, AllocatorConfig, FunctionSpec, SloKind};
use lass_core::fairshare;
use lass_core::oracle::{self, IdlePolicy};
use lass_core::queuing::{self, HeterogeneousModel, HomogeneousModel, WaitTarget};
use lass_core::reclamation::{DegradationCurve, ServiceProfile, DEFAULT_TAU};
use lass_core::simulator::{self, EpochRecord, SimConfig, SimFunction, SimMetrics};
use lass_core::{Action, ClusterState, Node, Scenario, WorkloadSpec};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toml::Value;

const EPS: f64 = 1e-6;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run_scenario(name: &str, mode: &str) -> (Scenario, SimMetrics) {
    let overrides = [("controller.reclamation".to_string(), Value::String(mode.into()))];
    let s = Scenario::load(&scenario_path(name), &overrides).expect("scenario loads");
    let m = simulator::run(&s.config, s.seed).expect("simulation runs");
    (s, m)
}

fn wait_spec(id: &str, mu: f64, deadline: f64) -> FunctionSpec {
    let mut spec = FunctionSpec::new(id, 1.0, 256, ServiceProfile::exponential(mu).unwrap(), deadline);
    spec.slo = SloKind::Wait;
    spec.percentile = queuing::DEFAULT_PERCENTILE;
    spec
}

/// Runs one function with a fixed pool and no controller; returns the
/// empirical P95 waiting time.
fn static_p95(spec: FunctionSpec, lambda: f64, fractions: Vec<f64>, horizon: f64, seed: u64) -> f64 {
    let node = Node {
        vcpu: fractions.len() as f64 + 1.0,
        memory_mb: 1 << 20,
    };
    let id = spec.id.clone();
    let mut cfg = SimConfig::new(
        vec![node],
        vec![SimFunction {
            spec,
            workload: WorkloadSpec::Static { rate: lambda },
            initial_fractions: fractions,
        }],
        horizon,
    );
    cfg.controller = false;
    cfg.warmup = 30.0;
    let m = simulator::run(&cfg, seed).expect("simulation runs");
    m.summary.functions[&id].wait_p95
}

fn model_validation() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for mu in [5.0, 10.0] {
        for d in [0.1, 0.2] {
            for lambda in [10.0, 20.0, 30.0, 40.0, 50.0] {
                let target = WaitTarget::new(d, queuing::DEFAULT_PERCENTILE).unwrap();
                let c = queuing::find_c_homogeneous(lambda, mu, &target, 1).unwrap();
                let p95 = static_p95(wait_spec("f", mu, d), lambda, vec![1.0; c as usize], 600.0, 1);
                worst = worst.max(p95 / d);
                if p95 > 1.10 * d {
                    failed.push(format!("mu={mu} d={d} lambda={lambda} p95={p95:.4}"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failed.is_empty() && secs < 120.0;
    outcome(
        pass,
        format!("20 cells, worst p95/d {worst:.3} (limit 1.10), {secs:.1} s; failed {failed:?}"),
    )
}

fn heterogeneous_validation() -> Outcome {
    let start = Instant::now();
    let mu = 10.0;
    let d = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for share in [0.25, 0.5, 0.75, 1.0] {
        for lambda in (1..=10).map(|k| 10.0 * k as f64) {
            let spec = wait_spec("squeezenet", mu, d);
            let specs: BTreeMap<String, FunctionSpec> = [(spec.id.clone(), spec.clone())].into();
            let target = spec.wait_target().unwrap();
            let c = queuing::find_c_homogeneous(lambda, mu, &target, 1).unwrap() as usize;

            let mut cluster = ClusterState::new(vec![Node {
                vcpu: 256.0,
                memory_mb: 1 << 20,
            }]);
            let rate_at = |_: &str, x: f64| spec.rate_at(x);
            for _ in 0..c {
                let id = cluster.allocate_id();
                let create = Action::Create {
                    id,
                    function: spec.id.clone(),
                    node: 0,
                    vcpu: 1.0,
                    memory_mb: 256,
                    cpu_fraction: 1.0,
                    effective_rate: mu,
                };
                cluster.apply(&create, rate_at).unwrap();
            }
            let mut ids: Vec<u64> = cluster.containers.keys().copied().collect();
            let picks = ((share * c as f64).round() as usize).max(1);
            for _ in 0..picks {
                let id = ids.swap_remove(rng.random_range(0..ids.len()));
                let cpu_fraction = 1.0 - rng.random_range(0.0..=DEFAULT_TAU);
                cluster.apply(&Action::Resize { id, cpu_fraction }, rate_at).unwrap();
            }

            let cfg = AllocatorConfig {
                inflate: false,
                ..AllocatorConfig::default()
            };
            let estimates = [(spec.id.clone(), lambda)].into();
            let plan = allocator::plan_epoch(&cluster, &estimates, &specs, &BTreeMap::new(), &cfg).unwrap();
            plan.apply_to(&mut cluster, &specs).unwrap();
            let fractions: Vec<f64> = cluster
                .function_containers(&spec.id)
                .filter(|c| !c.lazy)
                .map(|c| c.cpu_fraction)
                .collect();

            let p95 = static_p95(spec, lambda, fractions, 1200.0, 2);
            worst = worst.max(p95 / d);
            if p95 > 1.10 * d {
                failed.push(format!("share={share} lambda={lambda} p95={p95:.4}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failed.is_empty() && secs < 300.0;
    outcome(
        pass,
        format!("40 cells, worst p95/d {worst:.3} (limit 1.10), {secs:.1} s; failed {failed:?}"),
    )
}

fn planner_latency() -> Outcome {
    let mu = 10.0;
    let target = WaitTarget::new(0.1, queuing::DEFAULT_PERCENTILE).unwrap();
    let curve = DegradationCurve::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // The pool runs at 95% of its capacity before the spike.
    let mut mean_ms = |spike: f64| -> (f64, u32) {
        let runs = 10;
        let mut total = 0.0;
        let mut added = 0;
        for _ in 0..runs {
            let pool: Vec<f64> = (0..1000)
                .map(|_| mu * curve.multiplier(1.0 - rng.random_range(0.0..=DEFAULT_TAU)).unwrap())
                .collect();
            let lambda = 0.95 * pool.iter().sum::<f64>() * (1.0 + spike);
            let t = Instant::now();
            added = queuing::find_c_heterogeneous(lambda, &pool, mu, &target).unwrap();
            total += t.elapsed().as_secs_f64() * 1e3;
        }
        (total / runs as f64, added)
    };
    let (small, added_small) = mean_ms(0.1);
    let (large, added_large) = mean_ms(1.0);
    outcome(
        small < 100.0 && large < 1000.0 && added_small > 0 && added_large > 0,
        format!(
            "1000-container pool: 10% spike {small:.2} ms (limit 100, +{added_small} containers), \
             100% spike {large:.2} ms (limit 1000, +{added_large} containers)"
        ),
    )
}

fn instance(all_over: bool) -> impl Strategy<Value = (BTreeMap<String, f64>, BTreeMap<String, u64>, u64)> {
    (1usize..=8, 1u64..=200).prop_flat_map(move |(n, cap)| {
        let weights = prop::collection::vec(0.1f64..10.0, n);
        let demands = prop::collection::vec(0u64..=2 * cap, n);
        (weights, demands, Just(cap)).prop_map(move |(w, d, cap)| {
            let ids: Vec<String> = (0..w.len()).map(|i| format!("f{i}")).collect();
            let weights: BTreeMap<String, f64> = ids.iter().cloned().zip(w).collect();
            let guar = fairshare::guaranteed_shares(&weights, cap);
            let demands = ids
                .iter()
                .cloned()
                .zip(d)
                .map(|(f, d)| {
                    let d = if all_over { guar[&f] + 1 + d } else { d };
                    (f, d)
                })
                .collect();
            (weights, demands, cap)
        })
    })
}

fn fair_share_guarantees() -> Outcome {
    let cases = 10_000;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let all_over = runner.run(&instance(true), |(weights, demands, cap)| {
        let r = fairshare::adjust_allocations(&demands, &weights, cap);
        let total: u64 = r.shares.values().map(|s| s.c_adj).sum();
        prop_assert!(total <= cap);
        for s in r.shares.values() {
            prop_assert!(s.c_adj >= s.c_guar, "{s:?}");
        }
        Ok(())
    });
    let mixed = runner.run(&instance(false), |(weights, demands, cap)| {
        let r = fairshare::adjust_allocations(&demands, &weights, cap);
        let total: u64 = r.shares.values().map(|s| s.c_adj).sum();
        if !r.overloaded {
            for s in r.shares.values() {
                prop_assert_eq!(s.c_adj, s.demand);
            }
            return Ok(());
        }
        prop_assert!(total <= cap, "overcommit {total} > {cap}");
        for s in r.shares.values() {
            if s.demand <= s.c_guar {
                prop_assert_eq!(s.c_adj, s.demand);
            } else {
                prop_assert!(s.c_adj >= s.c_guar, "{s:?}");
                prop_assert!(s.c_adj <= s.demand, "{s:?}");
            }
        }
        Ok(())
    });
    let describe = |r: &Result<(), proptest::test_runner::TestError<_>>| match r {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("{e}"),
    };
    outcome(
        all_over.is_ok() && mixed.is_ok(),
        format!(
            "{cases} cases each: every function over its share {}, mixed demands and no overcommit {}",
            describe(&all_over),
            describe(&mixed)
        ),
    )
}

fn by_time(m: &SimMetrics) -> BTreeMap<u64, BTreeMap<String, EpochRecord>> {
    let mut out: BTreeMap<u64, BTreeMap<String, EpochRecord>> = BTreeMap::new();
    for e in &m.epochs {
        out.entry((e.time * 1000.0).round() as u64)
            .or_default()
            .insert(e.function.clone(), e.clone());
    }
    out
}

/// Mean allocated share of the cluster over epochs where both runs are
/// overloaded.
fn overload_utilization(term: &SimMetrics, defl: &SimMetrics, capacity: f64) -> (usize, f64, f64) {
    let (t, d) = (by_time(term), by_time(defl));
    let mut n = 0;
    let (mut ut, mut ud) = (0.0, 0.0);
    for (time, a) in &t {
        let Some(b) = d.get(time) else { continue };
        let over = |x: &BTreeMap<String, EpochRecord>| x.values().all(|r| r.overloaded);
        if over(a) && over(b) {
            n += 1;
            ut += a.values().map(|r| r.allocated_vcpu).sum::<f64>() / capacity;
            ud += b.values().map(|r| r.allocated_vcpu).sum::<f64>() / capacity;
        }
    }
    let n_f = n.max(1) as f64;
    (n, ut / n_f, ud / n_f)
}

fn fair_share_violations(s: &Scenario, m: &SimMetrics) -> Vec<String> {
    let specs = s.config.specs();
    m.epochs
        .iter()
        .filter(|e| e.overloaded)
        .filter_map(|e| {
            let need = e.demand_vcpu.min(e.c_guar as f64 * specs[&e.function].vcpu);
            (e.allocated_vcpu < need - EPS).then(|| format!("{}@{}: {} < {need}", e.function, e.time, e.allocated_vcpu))
        })
        .collect()
}

fn less_under_deflation(term: &SimMetrics, defl: &SimMetrics) -> Vec<String> {
    let d = by_time(defl);
    term.epochs
        .iter()
        .filter_map(|a| {
            let b = d.get(&((a.time * 1000.0).round() as u64))?.get(&a.function)?;
            (b.active_vcpu < a.active_vcpu - EPS)
                .then(|| format!("{}@{}: {} < {}", a.function, a.time, b.active_vcpu, a.active_vcpu))
        })
        .collect()
}

fn overload_scenario() -> Outcome {
    let (s, term) = run_scenario("two_function_overload.toml", "termination");
    let (_, defl) = run_scenario("two_function_overload.toml", "deflation");
    let capacity: f64 = s.config.nodes.iter().map(|n| n.vcpu).sum();
    let (n, ut, ud) = overload_utilization(&term, &defl, capacity);
    let gain = ud - ut;
    let mut unfair = fair_share_violations(&s, &term);
    unfair.extend(fair_share_violations(&s, &defl));
    let less = less_under_deflation(&term, &defl);
    let pass = n > 0 && ut < ud && (0.03..=0.10).contains(&gain) && unfair.is_empty() && less.is_empty();
    outcome(
        pass,
        format!(
            "{n} overloaded epochs: termination {:.1}%, deflation {:.1}%, gain {:.1}% (want 3..10); \
             fair-share violations {}; epochs where deflation gives less {}",
            ut * 100.0,
            ud * 100.0,
            gain * 100.0,
            unfair.len(),
            less.len()
        ),
    )
}

fn trace_replay() -> Outcome {
    let (s, term) = run_scenario("six_function_trace.toml", "termination");
    let (_, defl) = run_scenario("six_function_trace.toml", "deflation");
    let capacity: f64 = s.config.nodes.iter().map(|n| n.vcpu).sum();
    let (n, ut, ud) = overload_utilization(&term, &defl, capacity);
    let gain = ud - ut;
    let ops = |m: &SimMetrics| m.summary.created + m.summary.terminated;
    let (ops_t, ops_d) = (ops(&term), ops(&defl));

    let specs = s.config.specs();
    let within_share = |m: &SimMetrics, f: &str| {
        m.function_epochs(f)
            .all(|e| e.demand_vcpu <= e.c_guar as f64 * specs[f].vcpu + EPS)
    };
    let (t, d) = (by_time(&term), by_time(&defl));
    let mut well_behaved = Vec::new();
    let mut diverged = Vec::new();
    for (f, spec) in &specs {
        if !(within_share(&term, f) && within_share(&defl, f)) {
            continue;
        }
        let diff = t
            .iter()
            .filter_map(|(time, a)| Some((a.get(f)?.active_vcpu - d.get(time)?.get(f)?.active_vcpu).abs()))
            .fold(0.0, f64::max);
        well_behaved.push(format!("{f} {diff:.2}"));
        if diff > spec.vcpu + EPS {
            diverged.push(f.clone());
        }
    }
    let pass = n > 0 && (0.03..=0.10).contains(&gain) && ops_d < ops_t && !well_behaved.is_empty() && diverged.is_empty();
    outcome(
        pass,
        format!(
            "{n} overloaded epochs: termination {:.1}%, deflation {:.1}%, gain {:.1}% (want 3..10); \
             create+terminate {ops_t} vs {ops_d}; well-behaved max vCPU diff [{}], over one container {diverged:?}",
            ut * 100.0,
            ud * 100.0,
            gain * 100.0,
            well_behaved.join(", ")
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut homogeneous_fail = Vec::new();
    let mut worst_z: f64 = 0.0;
    for i in 0..200 {
        let c = rng.random_range(1..=10u32);
        let mu = rng.random_range(2.0..20.0);
        let rho = rng.random_range(0.3..0.9);
        let lambda = rho * c as f64 * mu;
        let t = rng.random_range(0.0..2.0) / mu;
        let exact = queuing::erlang_wait_cdf(&HomogeneousModel::new(lambda, mu, c).unwrap(), t).unwrap();
        let r = oracle::mc_wait(lambda, &vec![mu; c as usize], t, 400_000, 1000 + i, IdlePolicy::FastestIdle)
            .unwrap();
        // When nearly every sample lands below `t` the batch means are all
        // 1 and their spread says nothing; the binomial error under the
        // model's own probability is the floor.
        let binomial = (exact * (1.0 - exact) / r.samples as f64).sqrt();
        let z = (r.p_within - exact).abs() / r.p_within_se.max(binomial);
        worst_z = worst_z.max(z);
        if z > 3.0 {
            homogeneous_fail.push(format!("c={c} mu={mu:.2} rho={rho:.2} t={t:.3} z={z:.2}"));
        }
    }
    let mut bound_fail = Vec::new();
    for i in 0..50 {
        let c = rng.random_range(2..=10usize);
        let rates: Vec<f64> = (0..c).map(|_| rng.random_range(2.0..20.0)).collect();
        let total: f64 = rates.iter().sum();
        let lambda = rng.random_range(0.3..0.9) * total;
        let t = rng.random_range(0.0..2.0) * c as f64 / total;
        let bound = queuing::worst_case_wait_cdf(&HeterogeneousModel::new(lambda, rates.clone()).unwrap(), t).unwrap();
        let r = oracle::mc_wait(lambda, &rates, t, 100_000, 5000 + i, IdlePolicy::SlowestIdle).unwrap();
        if r.p_within < bound - 3.0 * r.p_within_se {
            bound_fail.push(format!("rates={rates:?} lambda={lambda:.2} t={t:.3}: {} < {bound}", r.p_within));
        }
    }
    outcome(
        homogeneous_fail.is_empty() && bound_fail.is_empty(),
        format!(
            "200 homogeneous instances, worst |z| {worst_z:.2} (limit 3), outside {homogeneous_fail:?}; \
             50 heterogeneous, bound violations {bound_fail:?}"
        ),
    )
}

fn autoscaling() -> Outcome {
    let (s, m) = run_scenario("ramp.toml", "termination");
    let f = s.config.functions.iter().find(|f| f.spec.id == "micro").unwrap();
    let WorkloadSpec::Discrete { schedule } = &f.workload else {
        return outcome(false, "micro workload is not a discrete schedule".into());
    };
    let target = f.spec.wait_target().unwrap();
    let mu = f.spec.rate_at(1.0);
    let peak = schedule.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    let peak_start = schedule.iter().find(|(_, r)| *r == peak).unwrap().0;
    let counts: Vec<(f64, u32)> = m.function_epochs("micro").map(|e| (e.time, e.containers - e.lazy)).collect();

    let mut order = Vec::new();
    for w in counts.windows(2) {
        let ((_, a), (t, b)) = (w[0], w[1]);
        if t <= peak_start + s.config.epoch && b < a {
            order.push(format!("down at {t} during ramp-up"));
        }
        if t > peak_start + s.config.epoch && b > a {
            order.push(format!("up at {t} during ramp-down"));
        }
    }

    // Each plateau is checked once the long window holds only its rate.
    let settle = s.config.estimator.long_window + 2.0 * s.config.epoch;
    let mut plateau = Vec::new();
    for (i, (start, rate)) in schedule.iter().enumerate() {
        let end = schedule.get(i + 1).map_or(s.config.horizon, |x| x.0);
        let want = queuing::find_c_homogeneous(*rate, mu, &target, 1).unwrap();
        for (t, c) in &counts {
            if *t >= start + settle && *t < end && *c != want {
                plateau.push(format!("{t}: {c} != {want} at {rate} req/s"));
            }
        }
    }
    outcome(
        order.is_empty() && plateau.is_empty(),
        format!(
            "{} epochs; monotonicity breaks {order:?}; plateau mismatches {plateau:?}",
            counts.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 homogeneous model validation", model_validation),
        ("2 heterogeneous model validation", heterogeneous_validation),
        ("3 planner latency", planner_latency),
        ("4 fair-share guarantees", fair_share_guarantees),
        ("5 two-function overload", overload_scenario),
        ("6 six-function trace replay", trace_replay),
        ("7 oracle equivalence", oracle_equivalence),
        ("8 autoscaling responsiveness", autoscaling),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
