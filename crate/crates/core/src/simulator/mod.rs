//! Discrete-event simulation of an edge cluster running the controller.
//!
//! Requests arrive per function, are matched to ready containers according
//! to the [`DispatchMode`], and are served FCFS with service times drawn
//! from the function's profile at the container's current rate. Every
//! `epoch` seconds the allocator plans against the live cluster and its
//! actions are applied immediately; new containers only accept work after
//! their cold start.
//!
//! A service time is fixed when the request starts, so resizing a container
//! mid-request does not change that request's completion time. Terminating
//! a container sends its in-service and queued requests back to the front
//! of the function's queue.

mod dispatch;
mod metrics;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use dispatch::{integer_weight, DispatchMode, SmoothWrr, WEIGHT_QUANTUM};
pub use metrics::{percentile, EpochRecord, FunctionSummary, RequestRecord, SimMetrics, Summary};

use crate::allocator::{self, AllocatorConfig, FunctionSpec, SloKind};
use crate::cluster::{Action, ClusterState, ContainerId, Node};
use crate::error::{Error, Result};
use crate::workload::{self, EstimatorConfig, RateEstimator, WorkloadSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SimFunction {
    pub spec: FunctionSpec,
    pub workload: WorkloadSpec,
    /// CPU fraction of each container present (and ready) at time zero.
    pub initial_fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub nodes: Vec<Node>,
    pub functions: Vec<SimFunction>,
    /// Effective per-function weights.
    pub weights: BTreeMap<String, f64>,
    pub allocator: AllocatorConfig,
    pub estimator: EstimatorConfig,
    pub epoch: f64,
    pub horizon: f64,
    /// Requests arriving before this time are excluded from latency stats.
    pub warmup: f64,
    pub dispatch: DispatchMode,
    /// When false the initial containers are kept for the whole run.
    pub controller: bool,
}

impl SimConfig {
    pub fn new(nodes: Vec<Node>, functions: Vec<SimFunction>, horizon: f64) -> Self {
        Self {
            nodes,
            functions,
            weights: BTreeMap::new(),
            allocator: AllocatorConfig::default(),
            estimator: EstimatorConfig::default(),
            epoch: 10.0,
            horizon,
            warmup: 0.0,
            dispatch: DispatchMode::default(),
            controller: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.functions.is_empty() {
            return Err(Error::config("functions", "at least one function is required"));
        }
        if self.nodes.is_empty() {
            return Err(Error::config("cluster.nodes", "at least one node is required"));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.vcpu > 0.0) || n.memory_mb == 0 {
                return Err(Error::config(format!("cluster.nodes.{i}"), "capacity must be positive"));
            }
        }
        let mut seen = BTreeSet::new();
        for f in &self.functions {
            if !seen.insert(f.spec.id.as_str()) {
                return Err(Error::config("functions", format!("duplicate id {}", f.spec.id)));
            }
            f.spec.validate()?;
            f.workload
                .validate()
                .map_err(|e| Error::config(format!("{}.workload", f.spec.id), e.to_string()))?;
            let tau = f.spec.tau.unwrap_or(self.allocator.tau);
            if let Some(x) = f
                .initial_fractions
                .iter()
                .find(|x| !(**x > 0.0 && **x <= 1.0) || **x < 1.0 - tau - 1e-9)
            {
                return Err(Error::config(
                    format!("{}.initial_fractions", f.spec.id),
                    format!("fraction {x} outside [1 - tau, 1]"),
                ));
            }
        }
        if !(self.epoch > 0.0) {
            return Err(Error::config("controller.epoch", "must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::config("horizon", "must be positive"));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon) {
            return Err(Error::config("warmup", "must be in [0, horizon)"));
        }
        if !(self.allocator.tau > 0.0 && self.allocator.tau < 1.0) {
            return Err(Error::config("controller.tau", "must be in (0, 1)"));
        }
        if !(self.allocator.step > 0.0) {
            return Err(Error::config("controller.step", "must be positive"));
        }
        self.estimator.validate()
    }

    pub fn specs(&self) -> BTreeMap<String, FunctionSpec> {
        self.functions
            .iter()
            .map(|f| (f.spec.id.clone(), f.spec.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Completion { container: ContainerId, token: u64 },
    Ready { container: ContainerId },
    Arrival { function: usize },
    EstimatorTick,
    EpochTick,
}

impl Kind {
    fn priority(&self) -> u8 {
        match self {
            Kind::Completion { .. } => 0,
            Kind::Ready { .. } => 1,
            Kind::Arrival { .. } => 2,
            Kind::EstimatorTick => 3,
            Kind::EpochTick => 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.kind.priority().cmp(&self.kind.priority()))
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug)]
struct Busy {
    request: usize,
    token: u64,
    start: f64,
}

#[derive(Debug)]
struct Runtime {
    function: usize,
    ready: bool,
    busy: Option<Busy>,
    queue: VecDeque<usize>,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    specs: BTreeMap<String, FunctionSpec>,
    names: Vec<String>,
    index: BTreeMap<String, usize>,
    cluster: ClusterState,
    runtime: BTreeMap<ContainerId, Runtime>,
    heap: BinaryHeap<Event>,
    seq: u64,
    tokens: u64,
    now: f64,
    arrivals: Vec<Vec<f64>>,
    cursor: Vec<usize>,
    requests: Vec<RequestRecord>,
    pending: Vec<VecDeque<usize>>,
    wrr: Vec<SmoothWrr>,
    rngs: Vec<ChaCha8Rng>,
    estimators: Vec<RateEstimator>,
    estimates: BTreeMap<String, f64>,
    epochs: Vec<EpochRecord>,
    last_integrated: f64,
    alloc_integral: f64,
    function_alloc: Vec<f64>,
    busy_integral: f64,
    overloaded: bool,
    overload_time: f64,
    overload_alloc: f64,
    created: Vec<u64>,
    terminated: Vec<u64>,
}

/// Runs the simulation. Identical `(config, seed)` produce identical
/// metrics; each function's arrivals and service times come from streams
/// keyed by its id, so they do not change when other functions or the
/// reclamation policy change.
pub fn run(config: &SimConfig, seed: u64) -> Result<SimMetrics> {
    config.validate()?;
    let mut engine = Engine::new(config, seed)?;
    engine.run()?;
    Ok(engine.finish())
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig, seed: u64) -> Result<Self> {
        let names: Vec<String> = cfg.functions.iter().map(|f| f.spec.id.clone()).collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut arrivals = Vec::new();
        let mut rngs = Vec::new();
        for f in &cfg.functions {
            let s = workload::derive_seed(seed, &format!("arrivals/{}", f.spec.id));
            arrivals.push(workload::generate_arrivals(&f.workload, cfg.horizon, s)?);
            let s = workload::derive_seed(seed, &format!("service/{}", f.spec.id));
            rngs.push(ChaCha8Rng::seed_from_u64(s));
        }
        let n = names.len();
        let mut engine = Self {
            cfg,
            specs: cfg.specs(),
            names,
            index,
            cluster: ClusterState::new(cfg.nodes.clone()),
            runtime: BTreeMap::new(),
            heap: BinaryHeap::new(),
            seq: 0,
            tokens: 0,
            now: 0.0,
            arrivals,
            cursor: vec![0; n],
            requests: Vec::new(),
            pending: vec![VecDeque::new(); n],
            wrr: vec![SmoothWrr::new(); n],
            rngs,
            estimators: vec![RateEstimator::new(cfg.estimator, 0.0); n],
            estimates: BTreeMap::new(),
            epochs: Vec::new(),
            last_integrated: 0.0,
            alloc_integral: 0.0,
            function_alloc: vec![0.0; n],
            busy_integral: 0.0,
            overloaded: false,
            overload_time: 0.0,
            overload_alloc: 0.0,
            created: vec![0; n],
            terminated: vec![0; n],
        };
        engine.place_initial()?;
        Ok(engine)
    }

    fn place_initial(&mut self) -> Result<()> {
        for (fi, f) in self.cfg.functions.iter().enumerate() {
            for &fraction in &f.initial_fractions {
                let s = &f.spec;
                let node = self
                    .cluster
                    .place(s.vcpu * fraction, s.memory_mb)
                    .map_err(|e| Error::config(format!("{}.initial_containers", s.id), e.to_string()))?;
                let id = self.cluster.allocate_id();
                self.cluster.apply(
                    &Action::Create {
                        id,
                        function: s.id.clone(),
                        node,
                        vcpu: s.vcpu,
                        memory_mb: s.memory_mb,
                        cpu_fraction: fraction,
                        effective_rate: s.rate_at(fraction),
                    },
                    |_, _| 0.0,
                )?;
                self.runtime.insert(
                    id,
                    Runtime {
                        function: fi,
                        ready: true,
                        busy: None,
                        queue: VecDeque::new(),
                    },
                );
            }
        }
        Ok(())
    }

    fn push(&mut self, time: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn schedule_arrival(&mut self, f: usize) {
        if let Some(&t) = self.arrivals[f].get(self.cursor[f]) {
            self.cursor[f] += 1;
            self.push(t, Kind::Arrival { function: f });
        }
    }

    fn run(&mut self) -> Result<()> {
        for f in 0..self.names.len() {
            self.schedule_arrival(f);
        }
        if self.cfg.controller {
            self.push(self.cfg.estimator.tick, Kind::EstimatorTick);
            self.push(self.cfg.epoch, Kind::EpochTick);
        }
        while let Some(ev) = self.heap.pop() {
            if ev.time >= self.cfg.horizon {
                break;
            }
            self.now = ev.time;
            match ev.kind {
                Kind::Arrival { function } => self.on_arrival(function)?,
                Kind::Completion { container, token } => self.on_completion(container, token),
                Kind::Ready { container } => self.on_ready(container),
                Kind::EstimatorTick => {
                    for (i, name) in self.names.iter().enumerate() {
                        let r = self.estimators[i].estimate_rate(self.now);
                        self.estimates.insert(name.clone(), r);
                    }
                    self.push(self.now + self.cfg.estimator.tick, Kind::EstimatorTick);
                }
                Kind::EpochTick => {
                    self.on_epoch()?;
                    self.push(self.now + self.cfg.epoch, Kind::EpochTick);
                }
            }
        }
        self.now = self.cfg.horizon;
        self.integrate();
        Ok(())
    }

    fn on_arrival(&mut self, f: usize) -> Result<()> {
        let id = self.requests.len();
        self.requests.push(RequestRecord {
            function: self.names[f].clone(),
            request: id as u64,
            arrival: self.now,
            start: None,
            completion: None,
            container: None,
            reruns: 0,
        });
        self.estimators[f].observe(self.now)?;
        self.pending[f].push_back(id);
        self.dispatch(f);
        self.schedule_arrival(f);
        Ok(())
    }

    fn ready_containers(&self, f: usize) -> impl Iterator<Item = (&ContainerId, &Runtime)> {
        self.runtime
            .iter()
            .filter(move |(_, r)| r.function == f && r.ready)
    }

    /// Moves requests from the function's queue onto containers.
    fn dispatch(&mut self, f: usize) {
        match self.cfg.dispatch {
            DispatchMode::Wrr => {
                let candidates: Vec<(ContainerId, i64)> = self
                    .ready_containers(f)
                    .map(|(id, _)| (*id, integer_weight(self.cluster.containers[id].allocated_vcpu())))
                    .collect();
                if candidates.is_empty() {
                    return;
                }
                while let Some(req) = self.pending[f].pop_front() {
                    let id = self.wrr[f].pick(&candidates).expect("non-empty candidates");
                    let rt = self.runtime.get_mut(&id).expect("candidate exists");
                    if rt.busy.is_none() {
                        self.start(req, id);
                    } else {
                        rt.queue.push_back(req);
                    }
                }
            }
            DispatchMode::JoinIdle | DispatchMode::WorstCase => {
                while !self.pending[f].is_empty() {
                    let idle: Vec<ContainerId> = self
                        .ready_containers(f)
                        .filter(|(_, r)| r.busy.is_none())
                        .map(|(id, _)| *id)
                        .collect();
                    let chosen = if self.cfg.dispatch == DispatchMode::WorstCase {
                        idle.iter().copied().min_by(|a, b| {
                            let ra = self.cluster.containers[a].effective_rate;
                            let rb = self.cluster.containers[b].effective_rate;
                            ra.total_cmp(&rb).then(a.cmp(b))
                        })
                    } else {
                        let c: Vec<(ContainerId, i64)> = idle
                            .iter()
                            .map(|id| (*id, integer_weight(self.cluster.containers[id].allocated_vcpu())))
                            .collect();
                        self.wrr[f].pick(&c)
                    };
                    let Some(id) = chosen else {
                        break;
                    };
                    let req = self.pending[f].pop_front().expect("non-empty queue");
                    self.start(req, id);
                }
            }
        }
    }

    fn start(&mut self, req: usize, id: ContainerId) {
        let rt = self.runtime.get_mut(&id).expect("container exists");
        let f = rt.function;
        let rate = self.cluster.containers[&id].effective_rate;
        let service = self.specs[&self.names[f]].profile.sample(&mut self.rngs[f], rate);
        self.tokens += 1;
        let token = self.tokens;
        rt.busy = Some(Busy {
            request: req,
            token,
            start: self.now,
        });
        let r = &mut self.requests[req];
        r.start = Some(self.now);
        r.container = Some(id);
        self.push(self.now + service, Kind::Completion { container: id, token });
    }

    fn on_completion(&mut self, id: ContainerId, token: u64) {
        let Some(rt) = self.runtime.get_mut(&id) else {
            return;
        };
        if rt.busy.as_ref().is_none_or(|b| b.token != token) {
            return;
        }
        let busy = rt.busy.take().expect("checked above");
        let f = rt.function;
        let next = rt.queue.pop_front();
        self.busy_integral += (self.now - busy.start) * self.cluster.containers[&id].allocated_vcpu();
        self.requests[busy.request].completion = Some(self.now);
        match next {
            Some(req) => self.start(req, id),
            None => self.dispatch(f),
        }
    }

    fn on_ready(&mut self, id: ContainerId) {
        if let Some(rt) = self.runtime.get_mut(&id) {
            rt.ready = true;
            let f = rt.function;
            self.dispatch(f);
        }
    }

    fn integrate(&mut self) {
        let dt = self.now - self.last_integrated;
        if dt <= 0.0 {
            return;
        }
        let total = self.cluster.allocated_vcpu();
        self.alloc_integral += total * dt;
        for (i, name) in self.names.iter().enumerate() {
            self.function_alloc[i] += self.cluster.function_vcpu(name) * dt;
        }
        if self.overloaded {
            self.overload_time += dt;
            self.overload_alloc += total * dt;
        }
        self.last_integrated = self.now;
    }

    fn on_epoch(&mut self) -> Result<()> {
        self.integrate();
        let plan = allocator::plan_epoch(
            &self.cluster,
            &self.estimates,
            &self.specs,
            &self.cfg.weights,
            &self.cfg.allocator,
        )?;
        let mut touched = BTreeSet::new();
        let mut created = vec![0u32; self.names.len()];
        let mut terminated = vec![0u32; self.names.len()];
        for action in &plan.actions {
            let specs = &self.specs;
            self.cluster.apply(action, |f, x| specs[f].rate_at(x))?;
            match action {
                Action::Create { id, function, .. } => {
                    let f = self.index[function];
                    created[f] += 1;
                    self.runtime.insert(
                        *id,
                        Runtime {
                            function: f,
                            ready: false,
                            busy: None,
                            queue: VecDeque::new(),
                        },
                    );
                    let delay = self.specs[function].cold_start;
                    self.push(self.now + delay, Kind::Ready { container: *id });
                }
                Action::Terminate { id } => {
                    let rt = self.runtime.remove(id).expect("terminated container was running");
                    let f = rt.function;
                    terminated[f] += 1;
                    self.wrr[f].forget(*id);
                    let mut displaced = Vec::new();
                    if let Some(b) = rt.busy {
                        self.busy_integral += (self.now - b.start)
                            * self.specs[&self.names[f]].vcpu;
                        displaced.push(b.request);
                    }
                    displaced.extend(rt.queue);
                    for req in displaced.into_iter().rev() {
                        let r = &mut self.requests[req];
                        r.reruns += 1;
                        r.start = None;
                        r.container = None;
                        self.pending[f].push_front(req);
                    }
                    touched.insert(f);
                }
                Action::MarkLazy { .. } | Action::Unmark { .. } | Action::Resize { .. } => {}
            }
        }
        for f in touched {
            self.dispatch(f);
        }
        self.overloaded = plan.overloaded;

        for (i, name) in self.names.iter().enumerate() {
            self.created[i] += created[i] as u64;
            self.terminated[i] += terminated[i] as u64;
            let p = &plan.functions[name];
            let containers: Vec<_> = self.cluster.function_containers(name).collect();
            self.epochs.push(EpochRecord {
                time: self.now,
                function: name.clone(),
                estimate: p.estimate,
                c_current: p.c_current,
                c_new: p.c_new,
                c_guar: p.c_guar,
                c_adj: p.c_adj,
                demand_vcpu: p.demand_vcpu,
                entitlement_vcpu: p.entitlement_vcpu,
                containers: containers.len() as u32,
                lazy: containers.iter().filter(|c| c.lazy).count() as u32,
                deflated: containers.iter().filter(|c| c.is_deflated()).count() as u32,
                allocated_vcpu: containers.iter().map(|c| c.allocated_vcpu()).sum(),
                active_vcpu: containers.iter().filter(|c| !c.lazy).map(|c| c.allocated_vcpu()).sum(),
                min_cpu_fraction: containers.iter().map(|c| c.cpu_fraction).fold(1.0, f64::min),
                overloaded: plan.overloaded,
                infeasible: p.infeasible,
                unplaced: p.unplaced,
                created: created[i],
                terminated: terminated[i],
            });
        }
        Ok(())
    }

    fn finish(mut self) -> SimMetrics {
        let horizon = self.cfg.horizon;
        for rt in self.runtime.values() {
            if let Some(b) = &rt.busy {
                self.busy_integral += (horizon - b.start) * self.specs[&self.names[rt.function]].vcpu;
            }
        }
        let capacity = self.cluster.capacity_vcpu();
        let mut functions = BTreeMap::new();
        for (i, name) in self.names.iter().enumerate() {
            let spec = &self.specs[name];
            let mine: Vec<&RequestRecord> = self.requests.iter().filter(|r| &r.function == name).collect();
            let completed: Vec<&&RequestRecord> = mine.iter().filter(|r| r.completion.is_some()).collect();
            let measured: Vec<&&&RequestRecord> =
                completed.iter().filter(|r| r.arrival >= self.cfg.warmup).collect();
            let mut waits: Vec<f64> = measured.iter().map(|r| r.wait().expect("completed")).collect();
            let mut resp: Vec<f64> = measured.iter().map(|r| r.response().expect("completed")).collect();
            waits.sort_by(f64::total_cmp);
            resp.sort_by(f64::total_cmp);
            let violations = match spec.slo {
                SloKind::Wait => waits.iter().filter(|w| **w > spec.deadline).count(),
                SloKind::Response => resp.iter().filter(|w| **w > spec.deadline).count(),
            };
            let n = measured.len();
            functions.insert(
                name.clone(),
                FunctionSummary {
                    generated: mine.len() as u64,
                    completed: completed.len() as u64,
                    in_flight: (mine.len() - completed.len()) as u64,
                    measured: n as u64,
                    wait_p50: percentile(&waits, 0.50),
                    wait_p95: percentile(&waits, 0.95),
                    wait_p99: percentile(&waits, 0.99),
                    response_p50: percentile(&resp, 0.50),
                    response_p95: percentile(&resp, 0.95),
                    response_p99: percentile(&resp, 0.99),
                    mean_wait: if n == 0 { 0.0 } else { waits.iter().sum::<f64>() / n as f64 },
                    slo_violation: if n == 0 { 0.0 } else { violations as f64 / n as f64 },
                    reruns: mine.iter().map(|r| r.reruns as u64).sum(),
                    created: self.created[i],
                    terminated: self.terminated[i],
                    mean_allocated_vcpu: self.function_alloc[i] / horizon,
                },
            );
        }
        let summary = Summary {
            horizon,
            capacity_vcpu: capacity,
            allocation_utilization: self.alloc_integral / (capacity * horizon),
            busy_utilization: (self.busy_integral / (capacity * horizon)).min(1.0),
            overload_utilization: if self.overload_time > 0.0 {
                self.overload_alloc / (capacity * self.overload_time)
            } else {
                0.0
            },
            overload_time: self.overload_time,
            created: self.created.iter().sum(),
            terminated: self.terminated.iter().sum(),
            functions,
        };
        SimMetrics {
            requests: self.requests,
            epochs: self.epochs,
            summary,
        }
    }
}
