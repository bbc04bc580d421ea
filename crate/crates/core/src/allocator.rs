//! The per-epoch controller: rate estimates in, container actions out.
//!
//! Each epoch the planner sizes every function's pool with the queuing
//! model, checks whether the combined demand fits the cluster, and if not
//! water-fills the cluster's vCPU among functions by weight. It then
//! reconciles each pool toward its allocation:
//!
//! * without resource pressure, surplus containers are only marked lazy and
//!   lazy containers are reused before anything new is created;
//! * under overload, lazy containers are reclaimed first, then over-allocated
//!   functions give up capacity by termination or by deflation.

use std::collections::BTreeMap;

use crate::cluster::{Action, ClusterState, ContainerState, NodeId};
use crate::error::{Error, Result};
use crate::fairshare;
use crate::queuing::{self, HeterogeneousModel, WaitTarget};
use crate::reclamation::{self, ServiceProfile};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReclaimMode {
    #[default]
    Termination,
    Deflation,
}

/// What the deadline bounds: queueing delay alone, or queueing plus
/// service (in which case the waiting budget is the deadline minus the p99
/// service time).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SloKind {
    Wait,
    #[default]
    Response,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSpec {
    pub id: String,
    pub user: String,
    /// Weight within the owning user.
    pub weight: f64,
    pub deadline: f64,
    pub percentile: f64,
    pub slo: SloKind,
    pub vcpu: f64,
    pub memory_mb: u64,
    pub profile: ServiceProfile,
    /// Per-function deflation threshold; falls back to the controller's.
    pub tau: Option<f64>,
    pub min_containers: u32,
    pub cold_start: f64,
}

impl FunctionSpec {
    pub fn new(id: impl Into<String>, vcpu: f64, memory_mb: u64, profile: ServiceProfile, deadline: f64) -> Self {
        let id = id.into();
        Self {
            user: id.clone(),
            id,
            weight: 1.0,
            deadline,
            percentile: queuing::DEFAULT_PERCENTILE,
            slo: SloKind::default(),
            vcpu,
            memory_mb,
            profile,
            tau: None,
            min_containers: 0,
            cold_start: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.deadline > 0.0) {
            return Err(Error::config(format!("{}.deadline", self.id), "must be positive"));
        }
        if !(self.vcpu > 0.0) {
            return Err(Error::config(format!("{}.vcpu", self.id), "must be positive"));
        }
        if self.memory_mb == 0 {
            return Err(Error::config(format!("{}.memory_mb", self.id), "must be positive"));
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(Error::config(format!("{}.percentile", self.id), "must be in (0, 1)"));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::config(format!("{}.tau", self.id), "must be in (0, 1)"));
            }
        }
        if !(self.cold_start >= 0.0) {
            return Err(Error::config(format!("{}.cold_start", self.id), "must be nonnegative"));
        }
        Ok(())
    }

    pub fn wait_target(&self) -> Result<WaitTarget> {
        match self.slo {
            SloKind::Wait => WaitTarget::new(self.deadline, self.percentile),
            SloKind::Response => {
                queuing::wait_budget(self.deadline, &self.profile)?.with_percentile(self.percentile)
            }
        }
    }

    /// Service rate of one of this function's containers at `cpu_fraction`.
    pub fn rate_at(&self, cpu_fraction: f64) -> f64 {
        reclamation::service_rate(&self.profile, cpu_fraction.clamp(EPS, 1.0))
            .expect("fraction clamped into range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocatorConfig {
    pub mode: ReclaimMode,
    pub tau: f64,
    pub step: f64,
    /// Restore deflated containers to full size once there is room.
    pub inflate: bool,
    pub cap: u32,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            mode: ReclaimMode::Termination,
            tau: reclamation::DEFAULT_TAU,
            step: reclamation::DEFAULT_STEP,
            inflate: true,
            cap: queuing::DEFAULT_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FunctionPlan {
    pub estimate: f64,
    /// Non-lazy containers before the plan.
    pub c_current: u32,
    pub c_new: u32,
    pub c_guar: u32,
    pub c_adj: u32,
    pub demand_vcpu: f64,
    pub entitlement_vcpu: f64,
    /// The deadline cannot be met at any size; demand was set to `c_guar`.
    pub infeasible: bool,
    /// Containers the plan wanted but could not place.
    pub unplaced: u32,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochPlan {
    pub functions: BTreeMap<String, FunctionPlan>,
    pub overloaded: bool,
    /// All actions in application order.
    pub actions: Vec<Action>,
}

impl EpochPlan {
    /// Applies the plan's actions to `cluster`.
    pub fn apply_to(&self, cluster: &mut ClusterState, specs: &BTreeMap<String, FunctionSpec>) -> Result<()> {
        for a in &self.actions {
            cluster.apply(a, |f, x| specs[f].rate_at(x))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Demand {
    c_new: u32,
    vcpu: f64,
    infeasible: bool,
}

/// Containers needed by one function for arrival rate `lambda`, given its
/// current non-lazy pool.
fn demand(
    spec: &FunctionSpec,
    lambda: f64,
    pool: &[ContainerState],
    cfg: &AllocatorConfig,
    c_guar: u32,
) -> Result<Demand> {
    let s = spec.vcpu;
    let floor = spec.min_containers;
    let mut d = if lambda <= 0.0 {
        Demand {
            c_new: 0,
            vcpu: 0.0,
            infeasible: false,
        }
    } else {
        let target = match spec.wait_target() {
            Ok(t) => t,
            Err(Error::InfeasibleDeadline { .. }) => {
                return Ok(Demand {
                    c_new: c_guar,
                    vcpu: c_guar as f64 * s,
                    infeasible: true,
                })
            }
            Err(e) => return Err(e),
        };
        let mu = spec.profile.base_rate;
        let heterogeneous = !cfg.inflate && pool.iter().any(|c| c.is_deflated());
        let sized = if heterogeneous {
            heterogeneous_demand(lambda, pool, spec, &target, cfg.cap)
        } else {
            queuing::find_c_homogeneous_capped(lambda, mu, &target, pool.len() as u32, cfg.cap)
                .map(|c| Demand {
                    c_new: c,
                    vcpu: c as f64 * s,
                    infeasible: false,
                })
        };
        match sized {
            Ok(d) => d,
            Err(Error::CapExceeded { .. }) => Demand {
                c_new: cfg.cap,
                vcpu: cfg.cap as f64 * s,
                infeasible: true,
            },
            Err(e) => return Err(e),
        }
    };
    if d.c_new < floor {
        d.vcpu += (floor - d.c_new) as f64 * s;
        d.c_new = floor;
    }
    Ok(d)
}

/// Sizing for a pool holding deflated containers: add standard containers
/// if the pool falls short, otherwise drop its smallest members while the
/// rest still meets the target.
fn heterogeneous_demand(
    lambda: f64,
    pool: &[ContainerState],
    spec: &FunctionSpec,
    target: &WaitTarget,
    cap: u32,
) -> Result<Demand> {
    let rates: Vec<f64> = pool.iter().map(|c| c.effective_rate).collect();
    let k = queuing::find_c_heterogeneous_capped(lambda, &rates, spec.profile.base_rate, target, cap)?;
    let pool_vcpu: f64 = pool.iter().map(|c| c.allocated_vcpu()).sum();
    if k > 0 {
        return Ok(Demand {
            c_new: pool.len() as u32 + k,
            vcpu: pool_vcpu + k as f64 * spec.vcpu,
            infeasible: false,
        });
    }
    let mut kept: Vec<&ContainerState> = pool.iter().collect();
    kept.sort_by(|a, b| a.allocated_vcpu().total_cmp(&b.allocated_vcpu()).then(a.id.cmp(&b.id)));
    while kept.len() > 1 {
        let rest: Vec<f64> = kept[1..].iter().map(|c| c.effective_rate).collect();
        let m = HeterogeneousModel::new(lambda, rest)?;
        if !m.is_stable() || queuing::wait_tail_heterogeneous(&m, target.t)? < target.percentile {
            break;
        }
        kept.remove(0);
    }
    Ok(Demand {
        c_new: kept.len() as u32,
        vcpu: kept.iter().map(|c| c.allocated_vcpu()).sum(),
        infeasible: false,
    })
}

struct Planner<'a> {
    state: ClusterState,
    specs: &'a BTreeMap<String, FunctionSpec>,
    cfg: &'a AllocatorConfig,
    actions: Vec<(String, Action)>,
    unplaced: BTreeMap<String, u32>,
    /// vCPU each over-allocated function may still give up by deflation.
    budgets: BTreeMap<String, f64>,
}

impl<'a> Planner<'a> {
    fn new(state: ClusterState, specs: &'a BTreeMap<String, FunctionSpec>, cfg: &'a AllocatorConfig) -> Self {
        Self {
            state,
            specs,
            cfg,
            actions: Vec::new(),
            unplaced: BTreeMap::new(),
            budgets: BTreeMap::new(),
        }
    }

    fn emit(&mut self, function: &str, action: Action) {
        let specs = self.specs;
        self.state
            .apply(&action, |f, x| specs[f].rate_at(x))
            .expect("planner emits actions valid for its own state");
        self.actions.push((function.to_string(), action));
    }

    fn tau(&self, f: &str) -> f64 {
        self.specs[f].tau.unwrap_or(self.cfg.tau)
    }

    /// Non-lazy containers of `f`, smallest allocation first.
    fn active(&self, f: &str) -> Vec<ContainerState> {
        let mut v: Vec<ContainerState> = self
            .state
            .function_containers(f)
            .filter(|c| !c.lazy)
            .cloned()
            .collect();
        v.sort_by(|a, b| a.allocated_vcpu().total_cmp(&b.allocated_vcpu()).then(a.id.cmp(&b.id)));
        v
    }

    fn allocated(&self, f: &str) -> f64 {
        self.state.function_containers(f).map(|c| c.allocated_vcpu()).sum()
    }

    fn terminate_all_lazy(&mut self) -> bool {
        let lazy: Vec<(String, u64)> = self
            .state
            .containers
            .values()
            .filter(|c| c.lazy)
            .map(|c| (c.function.clone(), c.id))
            .collect();
        for (f, id) in &lazy {
            self.emit(f, Action::Terminate { id: *id });
        }
        !lazy.is_empty()
    }

    fn create(&mut self, f: &str, node: NodeId, cpu_fraction: f64) {
        let spec = &self.specs[f];
        let id = self.state.next_id();
        let action = Action::Create {
            id,
            function: f.to_string(),
            node,
            vcpu: spec.vcpu,
            memory_mb: spec.memory_mb,
            cpu_fraction,
            effective_rate: spec.rate_at(cpu_fraction),
        };
        self.emit(f, action);
    }

    /// Places one standard container; on failure reclaims every lazy
    /// container in the cluster and tries once more.
    fn create_standard(&mut self, f: &str) -> bool {
        let spec = &self.specs[f];
        let (vcpu, mem) = (spec.vcpu, spec.memory_mb);
        let node = match self.state.place(vcpu, mem) {
            Ok(n) => n,
            Err(_) => {
                if !self.terminate_all_lazy() {
                    return false;
                }
                match self.state.place(vcpu, mem) {
                    Ok(n) => n,
                    Err(_) => return false,
                }
            }
        };
        self.create(f, node, 1.0);
        true
    }

    /// Grows deflated containers of `f` back toward full size, within free
    /// node capacity and at most `limit` vCPU in total. Lazy containers on
    /// the same node are reclaimed to make room.
    fn inflate(&mut self, f: &str, mut limit: f64) {
        for c in self.active(f).into_iter().filter(|c| c.is_deflated()) {
            if limit <= EPS {
                break;
            }
            let wanted = ((1.0 - c.cpu_fraction) * c.standard_vcpu).min(limit);
            let mut lazy: Vec<(f64, u64, String)> = self
                .state
                .containers
                .values()
                .filter(|x| x.lazy && x.node == c.node)
                .map(|x| (x.allocated_vcpu(), x.id, x.function.clone()))
                .collect();
            lazy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (_, id, g) in lazy {
                if self.state.free_on(c.node).0 + EPS >= wanted {
                    break;
                }
                self.emit(&g, Action::Terminate { id });
            }
            let room = self.state.free_on(c.node).0.max(0.0);
            let grow = wanted.min(room);
            if grow > EPS {
                limit -= grow;
                let fraction = (c.cpu_fraction + grow / c.standard_vcpu).min(1.0);
                self.emit(f, Action::Resize { id: c.id, cpu_fraction: fraction });
            }
        }
    }

    fn no_pressure(&mut self, f: &str, c_new: u32) {
        self.mark_surplus(f, c_new);
        if self.cfg.inflate {
            self.inflate(f, f64::INFINITY);
            self.replace_deflated(f);
        }
        self.grow_idle(f, c_new);
    }

    /// Marks the smallest active containers beyond `c_new` lazy.
    fn mark_surplus(&mut self, f: &str, c_new: u32) {
        let active = self.active(f);
        let extra = active.len().saturating_sub(c_new as usize);
        for c in active.iter().take(extra) {
            self.emit(f, Action::MarkLazy { id: c.id });
        }
    }

    /// Swaps active containers that stayed deflated (no room on their node)
    /// for full-size ones: a full lazy container is unmarked if there is
    /// one, otherwise a standard container is created. The deflated one
    /// becomes lazy.
    fn replace_deflated(&mut self, f: &str) {
        for c in self.active(f).into_iter().filter(|c| c.is_deflated()) {
            let spare = self
                .state
                .function_containers(f)
                .filter(|x| x.lazy && !x.is_deflated())
                .map(|x| x.id)
                .min();
            match spare {
                Some(id) => self.emit(f, Action::Unmark { id }),
                None => {
                    if !self.create_standard(f) {
                        // Reclaiming lazy containers may have freed room
                        // next to the deflated ones.
                        self.inflate(f, f64::INFINITY);
                        return;
                    }
                }
            }
            self.emit(f, Action::MarkLazy { id: c.id });
        }
    }

    /// Brings the active count up to `c_new`, unmarking the largest lazy
    /// containers before creating new ones.
    fn grow_idle(&mut self, f: &str, c_new: u32) {
        let n = self.active(f).len() as u32;
        if n >= c_new {
            return;
        }
        let mut need = c_new - n;
        let mut lazy: Vec<ContainerState> = self
            .state
            .function_containers(f)
            .filter(|c| c.lazy)
            .cloned()
            .collect();
        lazy.sort_by(|a, b| b.allocated_vcpu().total_cmp(&a.allocated_vcpu()).then(a.id.cmp(&b.id)));
        for c in lazy.iter().take(need as usize) {
            self.emit(f, Action::Unmark { id: c.id });
            need -= 1;
        }
        while need > 0 {
            if !self.create_standard(f) {
                *self.unplaced.entry(f.to_string()).or_default() += need;
                break;
            }
            need -= 1;
        }
    }

    /// Terminates the smallest containers of `f` beyond `keep`, stopping
    /// early rather than dropping the allocation below `floor` vCPU.
    fn trim_to_count(&mut self, f: &str, keep: u32, floor: f64) {
        let active = self.active(f);
        let extra = active.len().saturating_sub(keep as usize);
        let mut left = self.allocated(f);
        for c in active.iter().take(extra) {
            if left - c.allocated_vcpu() < floor - EPS {
                break;
            }
            left -= c.allocated_vcpu();
            self.emit(f, Action::Terminate { id: c.id });
        }
    }

    fn shrink_by_termination(&mut self, f: &str, target: f64) {
        let active = self.active(f);
        let refs: Vec<&ContainerState> = active.iter().collect();
        for a in reclamation::reclaim_by_termination(&refs, target) {
            self.emit(f, a);
        }
    }

    /// Terminates only what deflation alone cannot reclaim, and records the
    /// remainder as a budget drawn down when growers need room.
    fn prepare_deflation(&mut self, f: &str, target: f64) {
        let active = self.active(f);
        let refs: Vec<&ContainerState> = active.iter().collect();
        let plan = reclamation::reclaim_by_deflation(&refs, target, self.tau(f), self.cfg.step)
            .expect("threshold and step validated by config");
        for a in plan.into_iter().filter(|a| matches!(a, Action::Terminate { .. })) {
            self.emit(f, a);
        }
        let budget = self.allocated(f) - target;
        if budget > EPS {
            self.budgets.insert(f.to_string(), budget);
        }
    }

    /// vCPU that deflation could free on `node`, by donor function.
    fn deflatable_on(&self, node: NodeId, exclude: &str) -> Vec<(String, f64, Vec<(u64, f64)>)> {
        let mut out = Vec::new();
        for (g, budget) in &self.budgets {
            if g == exclude || *budget <= EPS {
                continue;
            }
            let floor = 1.0 - self.tau(g);
            let rooms: Vec<(u64, f64)> = self
                .state
                .function_containers(g)
                .filter(|c| c.node == node && !c.lazy)
                .map(|c| (c.id, (c.cpu_fraction - floor).max(0.0) * c.standard_vcpu))
                .filter(|(_, r)| *r > EPS)
                .collect();
            let total: f64 = rooms.iter().map(|(_, r)| r).sum();
            if total > EPS {
                out.push((g.clone(), total.min(*budget), rooms));
            }
        }
        out
    }

    /// Creates a container of `f` holding between `min_vcpu` and `want`
    /// vCPU, deflating other functions' containers on the chosen node if
    /// needed. Prefers nodes that fit `want` with the least deflation.
    fn create_with_deflation(&mut self, f: &str, want: f64, min_vcpu: f64) -> bool {
        let mem = self.specs[f].memory_mb;
        let mut best: Option<(bool, f64, NodeId)> = None;
        for node in 0..self.state.nodes.len() {
            let (free, free_mem) = self.state.free_on(node);
            if free_mem < mem {
                continue;
            }
            let free = free.max(0.0);
            let spare: f64 = self.deflatable_on(node, f).iter().map(|(_, a, _)| a).sum();
            let x = want.min(free + spare);
            if x + EPS < min_vcpu {
                continue;
            }
            let full = x + EPS >= want;
            let cost = if full { (x - free).max(0.0) } else { -x };
            let better = match best {
                None => true,
                Some((bf, bc, _)) => (full && !bf) || (full == bf && cost < bc - EPS),
            };
            if better {
                best = Some((full, cost, node));
            }
        }
        let Some((_, _, node)) = best else {
            return false;
        };
        let free = self.state.free_on(node).0.max(0.0);
        let donors = self.deflatable_on(node, f);
        let spare: f64 = donors.iter().map(|(_, a, _)| a).sum();
        let x = want.min(free + spare);
        let needed = (x - free).max(0.0);
        if needed > EPS {
            for (g, avail, rooms) in donors {
                let share = needed * avail / spare;
                let room_total: f64 = rooms.iter().map(|(_, r)| r).sum();
                for (id, room) in rooms {
                    let take = share * room / room_total;
                    let c = &self.state.containers[&id];
                    let fraction = c.cpu_fraction - take / c.standard_vcpu;
                    self.emit(&g, Action::Resize { id, cpu_fraction: fraction });
                }
                *self.budgets.get_mut(&g).unwrap() -= share;
            }
        }
        let s = self.specs[f].vcpu;
        let fit = (x - self.state.free_on(node).0).max(0.0);
        self.create(f, node, ((x - fit) / s).min(1.0));
        true
    }

    fn grow_under_pressure(&mut self, f: &str, entitlement: f64) {
        let s = self.specs[f].vcpu;
        if self.cfg.inflate {
            let room = entitlement - self.allocated(f);
            self.inflate(f, room);
        }
        match self.cfg.mode {
            ReclaimMode::Termination => {
                while self.allocated(f) + s <= entitlement + EPS {
                    if !self.create_standard(f) {
                        *self.unplaced.entry(f.to_string()).or_default() += 1;
                        break;
                    }
                }
            }
            ReclaimMode::Deflation => {
                let min_vcpu = (1.0 - self.tau(f)) * s;
                loop {
                    let want = (entitlement - self.allocated(f)).min(s);
                    if want + EPS < min_vcpu {
                        break;
                    }
                    let plain = self.state.place(want, self.specs[f].memory_mb);
                    match plain {
                        Ok(node) => self.create(f, node, want / s),
                        Err(_) => {
                            if !self.create_with_deflation(f, want, min_vcpu) {
                                *self.unplaced.entry(f.to_string()).or_default() += 1;
                                break;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Plans one epoch from the current cluster snapshot and per-function rate
/// estimates. `weights` are effective (flattened) weights; functions without
/// an entry weigh 1.
pub fn plan_epoch(
    cluster: &ClusterState,
    estimates: &BTreeMap<String, f64>,
    specs: &BTreeMap<String, FunctionSpec>,
    weights: &BTreeMap<String, f64>,
    cfg: &AllocatorConfig,
) -> Result<EpochPlan> {
    let capacity = cluster.capacity_vcpu();
    let weight = |f: &str| weights.get(f).copied().unwrap_or(1.0);
    let total_weight: f64 = specs.keys().map(|f| weight(f)).sum();

    let mut plans: BTreeMap<String, FunctionPlan> = BTreeMap::new();
    for (f, spec) in specs {
        let pool: Vec<ContainerState> = cluster
            .function_containers(f)
            .filter(|c| !c.lazy)
            .cloned()
            .collect();
        let c_guar = (weight(f) / total_weight * capacity / spec.vcpu + EPS).floor() as u32;
        let lambda = estimates.get(f).copied().unwrap_or(0.0).max(0.0);
        let d = demand(spec, lambda, &pool, cfg, c_guar)?;
        plans.insert(
            f.clone(),
            FunctionPlan {
                estimate: lambda,
                c_current: pool.len() as u32,
                c_new: d.c_new,
                c_guar,
                demand_vcpu: d.vcpu,
                infeasible: d.infeasible,
                ..FunctionPlan::default()
            },
        );
    }

    let total_demand: f64 = plans.values().map(|p| p.demand_vcpu).sum();
    let overloaded = total_demand > capacity + EPS;
    let mut planner = Planner::new(cluster.clone(), specs, cfg);

    if !overloaded {
        for (f, p) in plans.iter_mut() {
            p.c_adj = p.c_new;
            p.entitlement_vcpu = p.demand_vcpu;
            planner.mark_surplus(f, p.c_new);
        }
        if cfg.inflate {
            for f in plans.keys() {
                planner.inflate(f, f64::INFINITY);
            }
            for f in plans.keys() {
                planner.replace_deflated(f);
            }
        }
        for (f, p) in &plans {
            planner.grow_idle(f, p.c_new);
        }
    } else {
        let well_behaved: f64 = plans
            .values()
            .filter(|p| p.c_new <= p.c_guar)
            .map(|p| p.demand_vcpu)
            .sum();
        let over: BTreeMap<String, f64> = plans
            .iter()
            .filter(|(_, p)| p.c_new > p.c_guar)
            .map(|(f, p)| (f.clone(), p.demand_vcpu))
            .collect();
        let w: BTreeMap<String, f64> = specs.keys().map(|f| (f.clone(), weight(f))).collect();
        let fill = fairshare::water_fill(&over, &w, capacity - well_behaved);
        for (f, p) in plans.iter_mut() {
            if let Some(e) = fill.get(f) {
                p.entitlement_vcpu = *e;
                p.c_adj = (e / specs[f].vcpu + EPS).floor() as u32;
            } else {
                p.entitlement_vcpu = p.demand_vcpu;
                p.c_adj = p.c_new;
            }
        }

        planner.terminate_all_lazy();
        match cfg.mode {
            ReclaimMode::Termination => {
                for (f, p) in &plans {
                    if planner.allocated(f) > p.entitlement_vcpu + EPS {
                        planner.shrink_by_termination(f, p.entitlement_vcpu);
                    }
                }
            }
            ReclaimMode::Deflation => {
                for (f, p) in &plans {
                    planner.trim_to_count(f, p.c_new, p.entitlement_vcpu);
                    if planner.allocated(f) > p.entitlement_vcpu + EPS {
                        planner.prepare_deflation(f, p.entitlement_vcpu);
                    }
                }
            }
        }
        for (f, p) in &plans {
            if planner.allocated(f) < p.entitlement_vcpu - EPS {
                planner.grow_under_pressure(f, p.entitlement_vcpu);
            }
        }
    }

    let mut actions = Vec::with_capacity(planner.actions.len());
    for (f, a) in planner.actions {
        plans.get_mut(&f).expect("action for known function").actions.push(a.clone());
        actions.push(a);
    }
    for (f, n) in planner.unplaced {
        plans.get_mut(&f).expect("known function").unplaced = n;
    }
    Ok(EpochPlan {
        functions: plans,
        overloaded,
        actions,
    })
}

/// Reconciles one function's pool toward `target` containers. Without
/// pressure surplus is marked lazy and lazy containers are reused before new
/// ones are created; under pressure capacity is reclaimed per `cfg.mode`.
pub fn reconcile(
    cluster: &ClusterState,
    specs: &BTreeMap<String, FunctionSpec>,
    function: &str,
    target: u32,
    pressure: bool,
    cfg: &AllocatorConfig,
) -> Vec<Action> {
    let mut planner = Planner::new(cluster.clone(), specs, cfg);
    if !pressure {
        planner.no_pressure(function, target);
    } else {
        let vcpu = target as f64 * specs[function].vcpu;
        match cfg.mode {
            ReclaimMode::Termination => planner.shrink_by_termination(function, vcpu),
            ReclaimMode::Deflation => {
                let active = planner.active(function);
                let refs: Vec<&ContainerState> = active.iter().collect();
                let plan = reclamation::reclaim_by_deflation(&refs, vcpu, planner.tau(function), cfg.step)
                    .expect("threshold and step validated by config");
                for a in plan {
                    planner.emit(function, a);
                }
            }
        }
    }
    planner.actions.into_iter().map(|(_, a)| a).collect()
}

/// Capacity-unit conversion used in reports: standard containers' worth of
/// vCPU held by `f`.
pub fn standard_units(cluster: &ClusterState, spec: &FunctionSpec) -> f64 {
    cluster.function_vcpu(&spec.id) / spec.vcpu
}
