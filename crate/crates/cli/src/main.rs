use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lass_core::oracle::{self, IdlePolicy, ServiceLaw};
use lass_core::queuing::{self, HeterogeneousModel, HomogeneousModel, WaitTarget};
use lass_core::scenario::{self, Scenario};
use lass_core::{simulator, DegradationCurve, Error, SimMetrics};

#[derive(Parser)]
#[command(name = "lass", version, about = "Latency-aware serverless allocation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write requests.csv, epochs.csv and summary.txt.
    Run(RunArgs),
    /// Compare the queuing model against the Monte-Carlo oracle.
    Validate(ValidateArgs),
    /// Time the heterogeneous planner on deflated pools.
    BenchPlanner(BenchArgs),
    /// Run a scenario with every function's workload replaced by a trace.
    Replay(ReplayArgs),
    /// Run a scenario once per value of one parameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Dotted key=value override, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReplayArgs {
    scenario: PathBuf,
    /// Per-minute invocation CSV (function_id,minute,count).
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    scenario: PathBuf,
    /// Dotted key to vary.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 4)]
    jobs: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Service {
    Exponential,
    Deterministic,
}

#[derive(Args)]
struct ValidateArgs {
    /// Arrival rates to test.
    #[arg(long, value_delimiter = ',', default_value = "5")]
    lambda: Vec<f64>,
    /// Standard service rates (a homogeneous pool is sized per rate).
    #[arg(long, value_delimiter = ',', default_value = "10", conflicts_with = "rates")]
    mu: Vec<f64>,
    /// Fixed heterogeneous pool, checked against the worst-case bound.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    /// Waiting-time deadlines in seconds.
    #[arg(long, value_delimiter = ',', default_value = "0.2")]
    deadline: Vec<f64>,
    #[arg(long, default_value_t = queuing::DEFAULT_PERCENTILE)]
    percentile: f64,
    /// Independent oracle runs per row.
    #[arg(long, default_value_t = 4)]
    replications: u32,
    /// Measured requests per oracle run.
    #[arg(long, default_value_t = 50_000)]
    requests: usize,
    #[arg(long, value_enum, default_value = "exponential")]
    service: Service,
    /// Container cap for sizing.
    #[arg(long, default_value_t = queuing::DEFAULT_CAP)]
    cap: u32,
    /// Use the 20-cell grid mu={5,10}, d={0.1,0.2}, lambda={10..50}.
    #[arg(long)]
    grid: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Pool sizes.
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    counts: Vec<usize>,
    /// Rate spike as a fraction of the current rate.
    #[arg(long, default_value_t = 0.1)]
    factor: f64,
    /// Timed runs per pool size.
    #[arg(long, default_value_t = 20)]
    runs: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Validate(a) => cmd_validate(a),
        Command::BenchPlanner(a) => cmd_bench_planner(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(path: &Path, overrides: &[String]) -> Result<Scenario> {
    let parsed = overrides
        .iter()
        .map(|o| scenario::parse_override(o))
        .collect::<lass_core::Result<Vec<_>>>()?;
    Scenario::load(path, &parsed).with_context(|| format!("loading {}", path.display()))
}

fn simulate(s: &Scenario, seed: Option<u64>, out: &Path) -> Result<SimMetrics> {
    let metrics = simulator::run(&s.config, seed.unwrap_or(s.seed))?;
    metrics.write(out)?;
    Ok(metrics)
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let s = load(&a.scenario, &a.common.overrides)?;
    let m = simulate(&s, a.common.seed, &a.common.out)?;
    print!("{}", m.summary.render());
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(a: ReplayArgs) -> Result<ExitCode> {
    let s = load(&a.scenario, &a.common.overrides)?.with_trace(&a.trace)?;
    let m = simulate(&s, a.common.seed, &a.common.out)?;
    print!("{}", m.summary.render());
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(a: SweepArgs) -> Result<ExitCode> {
    let mut runs = Vec::new();
    for v in &a.values {
        let mut overrides = a.common.overrides.clone();
        overrides.push(format!("{}={v}", a.param));
        let s = load(&a.scenario, &overrides)?;
        runs.push((v.clone(), s));
    }
    let jobs = a.jobs.max(1);
    let mut results: Vec<Option<Result<SimMetrics>>> = (0..runs.len()).map(|_| None).collect();
    for (chunk, slots) in runs.chunks(jobs).zip(results.chunks_mut(jobs)) {
        std::thread::scope(|scope| {
            for ((v, s), slot) in chunk.iter().zip(slots.iter_mut()) {
                let dir = a.common.out.join(format!("{}={}", a.param, sanitize(v)));
                let seed = a.common.seed;
                scope.spawn(move || *slot = Some(simulate(s, seed, &dir)));
            }
        });
    }

    let mut table = String::from(
        "value,allocation_utilization,busy_utilization,overload_utilization,containers_created,containers_terminated\n",
    );
    for ((v, _), r) in runs.iter().zip(results) {
        let m = r.expect("every run finishes").with_context(|| format!("{}={v}", a.param))?;
        let s = &m.summary;
        table.push_str(&format!(
            "{v},{:.6},{:.6},{:.6},{},{}\n",
            s.allocation_utilization, s.busy_utilization, s.overload_utilization, s.created, s.terminated
        ));
    }
    std::fs::create_dir_all(&a.common.out)?;
    let path = a.common.out.join("sweep.csv");
    std::fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn sanitize(v: &str) -> String {
    v.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

struct Estimate {
    p: f64,
    se: f64,
}

fn replicate(
    lambda: f64,
    rates: &[f64],
    t: f64,
    a: &ValidateArgs,
    policy: IdlePolicy,
    seed: u64,
) -> Result<Estimate> {
    let law = match a.service {
        Service::Exponential => ServiceLaw::Exponential,
        Service::Deterministic => ServiceLaw::Deterministic,
    };
    let n = a.replications.max(1);
    let mut p = 0.0;
    let mut var = 0.0;
    for r in 0..n {
        let o = oracle::mc_wait_with(lambda, rates, t, a.requests, seed.wrapping_add(r as u64), policy, law)?;
        p += o.p_within;
        var += o.p_within_se.powi(2);
    }
    Ok(Estimate {
        p: p / n as f64,
        se: var.sqrt() / n as f64,
    })
}

fn cmd_validate(a: ValidateArgs) -> Result<ExitCode> {
    let (lambdas, mus, deadlines) = if a.grid {
        (vec![10.0, 20.0, 30.0, 40.0, 50.0], vec![5.0, 10.0], vec![0.1, 0.2])
    } else {
        (a.lambda.clone(), a.mu.clone(), a.deadline.clone())
    };
    let exact = matches!(a.service, Service::Exponential);
    println!(
        "{:>8} {:>8} {:>8} {:>6} {:>10} {:>10} {:>10} {:>6}",
        "lambda", "mu", "deadline", "c", "model", "oracle", "stderr", "result"
    );
    let mut failures = 0;
    let mut row = 0u64;
    let mut report = |lambda: f64, mu: String, d: f64, c: usize, model: f64, est: Estimate, two_sided: bool| {
        let ok = if two_sided {
            (est.p - model).abs() <= 3.0 * est.se
        } else {
            est.p >= model - 3.0 * est.se
        };
        if !ok {
            failures += 1;
        }
        println!(
            "{lambda:>8.2} {mu:>8} {d:>8.3} {c:>6} {model:>10.5} {:>10.5} {:>10.5} {:>6}",
            est.p,
            est.se,
            if ok { "PASS" } else { "FAIL" }
        );
    };

    if let Some(rates) = &a.rates {
        for &lambda in &lambdas {
            for &d in &deadlines {
                let m = HeterogeneousModel::new(lambda, rates.clone())?;
                let model = queuing::worst_case_wait_cdf(&m, d)?;
                row += 1;
                let est = replicate(lambda, rates, d, &a, IdlePolicy::SlowestIdle, a.seed.wrapping_add(row * 1000))?;
                report(lambda, "pool".into(), d, rates.len(), model, est, false);
            }
        }
    } else {
        for &mu in &mus {
            for &d in &deadlines {
                for &lambda in &lambdas {
                    if lambda >= a.cap as f64 * mu {
                        return Err(Error::UnstableSystem {
                            lambda,
                            capacity: a.cap as f64 * mu,
                        }
                        .into());
                    }
                    let target = WaitTarget::new(d, a.percentile)?;
                    let c = queuing::find_c_homogeneous_capped(lambda, mu, &target, 1, a.cap)?;
                    let model = queuing::erlang_wait_cdf(&HomogeneousModel::new(lambda, mu, c)?, d)?;
                    row += 1;
                    let rates = vec![mu; c as usize];
                    let est = replicate(lambda, &rates, d, &a, IdlePolicy::FastestIdle, a.seed.wrapping_add(row * 1000))?;
                    report(lambda, format!("{mu}"), d, c as usize, model, est, exact);
                }
            }
        }
    }
    if failures > 0 {
        println!("{failures} row(s) failed");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

/// Service rates of `n` containers, each deflated by a random amount up to
/// `tau` of its standard allocation.
fn deflated_pool(n: usize, mu: f64, tau: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let curve = DegradationCurve::default();
    (0..n)
        .map(|_| {
            let fraction = 1.0 - rng.random_range(0.0..=tau);
            Ok(mu * curve.multiplier(fraction)?)
        })
        .collect()
}

fn cmd_bench_planner(a: BenchArgs) -> Result<ExitCode> {
    if !(a.factor >= 0.0) {
        bail!("factor must be nonnegative");
    }
    let mu = 10.0;
    let target = WaitTarget::new(0.1, queuing::DEFAULT_PERCENTILE)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    println!("{:>8} {:>8} {:>10} {:>12} {:>12}", "pool", "factor", "added", "mean_ms", "max_ms");
    for &n in &a.counts {
        let runs = a.runs.max(1);
        let mut total = 0.0;
        let mut worst: f64 = 0.0;
        let mut added = 0;
        for _ in 0..runs {
            let pool = deflated_pool(n, mu, 0.3, &mut rng)?;
            let lambda = 0.8 * pool.iter().sum::<f64>() * (1.0 + a.factor);
            let start = Instant::now();
            added = queuing::find_c_heterogeneous(lambda, &pool, mu, &target)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            total += ms;
            worst = worst.max(ms);
        }
        println!(
            "{n:>8} {:>8.2} {added:>10} {:>12.4} {worst:>12.4}",
            a.factor,
            total / runs as f64
        );
    }
    Ok(ExitCode::SUCCESS)
}
