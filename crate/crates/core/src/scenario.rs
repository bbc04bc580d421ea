//! TOML scenario files.
//!
//! A scenario describes the cluster, the controller, and every function with
//! its service profile and workload. Any field can be overridden with a
//! dotted `key=value` pair; array elements are addressed by index, and
//! `functions` / `users` entries also by their `id`
//! (`functions.mobilenet.workload.rate=12`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Value;

use crate::allocator::{AllocatorConfig, FunctionSpec, ReclaimMode, SloKind};
use crate::cluster::Node;
use crate::error::{Error, Result};
use crate::fairshare::{self, UserWeights, WeightTree};
use crate::queuing;
use crate::reclamation::{self, DegradationCurve, ServiceProfile};
use crate::simulator::{DispatchMode, SimConfig, SimFunction};
use crate::workload::{self, EstimatorConfig, InvocationTrace, WorkloadSpec};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    #[serde(default)]
    name: Option<String>,
    #[serde(default = "default_seed")]
    seed: u64,
    horizon: f64,
    #[serde(default)]
    warmup: f64,
    cluster: ClusterSection,
    #[serde(default)]
    controller: ControllerSection,
    #[serde(default)]
    users: Vec<UserSection>,
    functions: Vec<FunctionSection>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterSection {
    #[serde(default)]
    nodes: Vec<NodeSection>,
    #[serde(default)]
    node_count: Option<usize>,
    #[serde(default)]
    node_vcpu: Option<f64>,
    #[serde(default)]
    node_memory_mb: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeSection {
    vcpu: f64,
    memory_mb: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ControllerSection {
    enabled: bool,
    epoch: f64,
    percentile: f64,
    reclamation: String,
    tau: f64,
    step: f64,
    inflate: bool,
    cap: u32,
    dispatch: String,
    cold_start: f64,
    estimator: EstimatorSection,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let a = AllocatorConfig::default();
        Self {
            enabled: true,
            epoch: 10.0,
            percentile: queuing::DEFAULT_PERCENTILE,
            reclamation: "termination".into(),
            tau: a.tau,
            step: a.step,
            inflate: a.inflate,
            cap: a.cap,
            dispatch: "join-idle".into(),
            cold_start: 0.5,
            estimator: EstimatorSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EstimatorSection {
    long_window: f64,
    short_window: f64,
    tick: f64,
    burst_factor: f64,
    alpha: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let e = EstimatorConfig::default();
        Self {
            long_window: e.long_window,
            short_window: e.short_window,
            tick: e.tick,
            burst_factor: e.burst_factor,
            alpha: e.alpha,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserSection {
    id: String,
    #[serde(default = "one")]
    weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionSection {
    id: String,
    #[serde(default)]
    user: Option<String>,
    #[serde(default = "one")]
    weight: f64,
    vcpu: f64,
    memory_mb: u64,
    deadline: f64,
    #[serde(default)]
    slo: Option<String>,
    #[serde(default)]
    percentile: Option<f64>,
    #[serde(default)]
    tau: Option<f64>,
    #[serde(default)]
    min_containers: u32,
    #[serde(default)]
    cold_start: Option<f64>,
    #[serde(default)]
    initial_containers: u32,
    #[serde(default)]
    initial_fractions: Vec<f64>,
    service: ServiceSection,
    workload: WorkloadSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceSection {
    #[serde(default = "exponential")]
    distribution: String,
    #[serde(default)]
    rate: Option<f64>,
    #[serde(default)]
    samples: Vec<f64>,
    #[serde(default)]
    profile: Option<String>,
    #[serde(default)]
    slack: Option<f64>,
    #[serde(default)]
    curve: Vec<(f64, f64)>,
}

fn exponential() -> String {
    "exponential".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadSection {
    mode: String,
    #[serde(default)]
    rate: Option<f64>,
    #[serde(default)]
    schedule: Vec<(f64, f64)>,
    #[serde(default)]
    samples: Vec<(f64, f64)>,
    #[serde(default)]
    trace: Option<String>,
    #[serde(default)]
    trace_function: Option<String>,
}

/// A parsed, override-applied scenario ready to simulate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub config: SimConfig,
    /// Two-level weight hierarchy the effective weights came from.
    pub weights: WeightTree,
}

/// Parses `key=value`; the value is read as a TOML literal and falls back
/// to a bare string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::config(s, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::config(s, "empty override key"));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Sets `key` (dotted path) in `doc` to `value`.
pub fn apply_override(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                let next_is_index = parts[i + 1].parse::<usize>().is_ok();
                t.entry(part.to_string()).or_insert_with(|| {
                    if next_is_index {
                        Value::Array(Vec::new())
                    } else {
                        Value::Table(toml::Table::new())
                    }
                })
            }
            Value::Array(items) => {
                let idx = match part.parse::<usize>() {
                    Ok(n) => n,
                    Err(_) => items
                        .iter()
                        .position(|v| v.get("id").and_then(Value::as_str) == Some(part))
                        .ok_or_else(|| Error::config(key, format!("no entry with id {part}")))?,
                };
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::config(key, format!("index {idx} out of range ({len} entries)")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::config(key, format!("{part} is not a table or array"))),
        };
    }
    Ok(())
}

impl Scenario {
    pub fn load(path: &Path, overrides: &[(String, Value)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut s = Self::parse(&text, &base, overrides)?;
        if s.name.is_empty() {
            s.name = name;
        }
        Ok(s)
    }

    /// Parses scenario text; relative profile and trace paths resolve
    /// against `base`.
    pub fn parse(text: &str, base: &Path, overrides: &[(String, Value)]) -> Result<Self> {
        let mut doc: Value = toml::from_str::<toml::Table>(text)
            .map(Value::Table)
            .map_err(|e| Error::config("scenario", e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut doc, k, v.clone())?;
        }
        let file: File = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("scenario", e.message().to_string()))?;
        build(file, base)
    }

    /// Replaces every function's workload with its rows from a trace CSV.
    pub fn with_trace(mut self, path: &Path) -> Result<Self> {
        let traces = workload::load_trace(path)?;
        for f in &mut self.config.functions {
            let t = traces
                .iter()
                .find(|t| t.function_id == f.spec.id)
                .ok_or_else(|| {
                    Error::config(
                        format!("{}.workload", f.spec.id),
                        format!("no rows for this function in {}", path.display()),
                    )
                })?;
            f.workload = WorkloadSpec::Trace(t.clone());
        }
        Ok(self)
    }
}

fn build(file: File, base: &Path) -> Result<Scenario> {
    let nodes = build_nodes(&file.cluster)?;
    let c = &file.controller;
    let mode = match c.reclamation.as_str() {
        "termination" => ReclaimMode::Termination,
        "deflation" => ReclaimMode::Deflation,
        other => {
            return Err(Error::config(
                "controller.reclamation",
                format!("expected termination or deflation, got {other}"),
            ))
        }
    };
    let dispatch = match c.dispatch.as_str() {
        "join-idle" => DispatchMode::JoinIdle,
        "wrr" => DispatchMode::Wrr,
        "worst-case" => DispatchMode::WorstCase,
        other => {
            return Err(Error::config(
                "controller.dispatch",
                format!("expected join-idle, wrr or worst-case, got {other}"),
            ))
        }
    };
    let estimator = EstimatorConfig {
        long_window: c.estimator.long_window,
        short_window: c.estimator.short_window,
        tick: c.estimator.tick,
        burst_factor: c.estimator.burst_factor,
        alpha: c.estimator.alpha,
    };

    let mut trace_cache: BTreeMap<PathBuf, Vec<InvocationTrace>> = BTreeMap::new();
    let mut functions = Vec::new();
    for f in &file.functions {
        let field = |name: &str| format!("functions.{}.{name}", f.id);
        let mut profile = build_profile(&f.service, base, &field("service"))?;
        if let Some(slack) = f.service.slack {
            profile = profile.with_curve(
                DegradationCurve::with_slack(slack).map_err(|e| Error::config(field("service.slack"), e.to_string()))?,
            );
        }
        if !f.service.curve.is_empty() {
            profile = profile.with_curve(
                DegradationCurve::new(f.service.curve.clone())
                    .map_err(|e| Error::config(field("service.curve"), e.to_string()))?,
            );
        }
        let slo = match f.slo.as_deref() {
            None | Some("response") => SloKind::Response,
            Some("wait") => SloKind::Wait,
            Some(other) => {
                return Err(Error::config(field("slo"), format!("expected wait or response, got {other}")))
            }
        };
        let spec = FunctionSpec {
            id: f.id.clone(),
            user: f.user.clone().unwrap_or_else(|| f.id.clone()),
            weight: f.weight,
            deadline: f.deadline,
            percentile: f.percentile.unwrap_or(c.percentile),
            slo,
            vcpu: f.vcpu,
            memory_mb: f.memory_mb,
            profile,
            tau: f.tau,
            min_containers: f.min_containers,
            cold_start: f.cold_start.unwrap_or(c.cold_start),
        };
        let workload = build_workload(&f.workload, &f.id, base, &mut trace_cache)?;
        let mut initial = f.initial_fractions.clone();
        initial.extend(std::iter::repeat_n(1.0, f.initial_containers as usize));
        functions.push(SimFunction {
            spec,
            workload,
            initial_fractions: initial,
        });
    }

    let weights = weight_tree(&file.users, &functions)?;
    let flat = fairshare::flatten_weights(&weights).map_err(|e| Error::config("users", e.to_string()))?;
    let config = SimConfig {
        nodes,
        functions,
        weights: flat,
        allocator: AllocatorConfig {
            mode,
            tau: c.tau,
            step: c.step,
            inflate: c.inflate,
            cap: c.cap,
        },
        estimator,
        epoch: c.epoch,
        horizon: file.horizon,
        warmup: file.warmup,
        dispatch,
        controller: c.enabled,
    };
    config.validate()?;
    Ok(Scenario {
        name: file.name.unwrap_or_default(),
        seed: file.seed,
        config,
        weights,
    })
}

fn build_nodes(c: &ClusterSection) -> Result<Vec<Node>> {
    let mut nodes: Vec<Node> = c
        .nodes
        .iter()
        .map(|n| Node {
            vcpu: n.vcpu,
            memory_mb: n.memory_mb,
        })
        .collect();
    match (c.node_count, c.node_vcpu, c.node_memory_mb) {
        (None, None, None) => {}
        (Some(n), Some(vcpu), Some(memory_mb)) => {
            nodes.extend(std::iter::repeat_n(Node { vcpu, memory_mb }, n));
        }
        _ => {
            return Err(Error::config(
                "cluster",
                "node_count, node_vcpu and node_memory_mb must be given together",
            ))
        }
    }
    if nodes.is_empty() {
        return Err(Error::config("cluster", "no nodes"));
    }
    Ok(nodes)
}

fn build_profile(s: &ServiceSection, base: &Path, field: &str) -> Result<ServiceProfile> {
    let from_file = match &s.profile {
        Some(p) => Some(reclamation::load_profile_curve(&base.join(p))?),
        None => None,
    };
    let rate = s.rate.or(from_file.as_ref().map(|(r, _)| *r));
    let need_rate = || rate.ok_or_else(|| Error::config(format!("{field}.rate"), "missing service rate"));
    let profile = match s.distribution.as_str() {
        "exponential" => ServiceProfile::exponential(need_rate()?),
        "deterministic" => ServiceProfile::deterministic(need_rate()?),
        "empirical" => ServiceProfile::empirical(s.samples.clone()),
        other => {
            return Err(Error::config(
                format!("{field}.distribution"),
                format!("expected exponential, deterministic or empirical, got {other}"),
            ))
        }
    }
    .map_err(|e| Error::config(field, e.to_string()))?;
    Ok(match from_file {
        Some((_, curve)) => profile.with_curve(curve),
        None => profile,
    })
}

fn build_workload(
    w: &WorkloadSection,
    id: &str,
    base: &Path,
    cache: &mut BTreeMap<PathBuf, Vec<InvocationTrace>>,
) -> Result<WorkloadSpec> {
    let field = format!("functions.{id}.workload");
    let spec = match w.mode.as_str() {
        "static" => WorkloadSpec::Static {
            rate: w
                .rate
                .ok_or_else(|| Error::config(format!("{field}.rate"), "static mode needs a rate"))?,
        },
        "discrete" => WorkloadSpec::Discrete {
            schedule: w.schedule.clone(),
        },
        "continuous" => WorkloadSpec::Continuous {
            samples: w.samples.clone(),
        },
        "trace" => {
            let rel = w
                .trace
                .as_ref()
                .ok_or_else(|| Error::config(format!("{field}.trace"), "trace mode needs a trace file"))?;
            let path = base.join(rel);
            if !cache.contains_key(&path) {
                let traces = workload::load_trace(&path)?;
                cache.insert(path.clone(), traces);
            }
            let wanted = w.trace_function.as_deref().unwrap_or(id);
            let t = cache[&path]
                .iter()
                .find(|t| t.function_id == wanted)
                .ok_or_else(|| {
                    Error::config(
                        format!("{field}.trace_function"),
                        format!("{wanted} not found in {}", path.display()),
                    )
                })?;
            WorkloadSpec::Trace(t.clone())
        }
        other => {
            return Err(Error::config(
                format!("{field}.mode"),
                format!("expected static, discrete, continuous or trace, got {other}"),
            ))
        }
    };
    spec.validate().map_err(|e| Error::config(field, e.to_string()))?;
    Ok(spec)
}

fn weight_tree(users: &[UserSection], functions: &[SimFunction]) -> Result<WeightTree> {
    let mut tree = WeightTree::default();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for u in users {
        if index.insert(u.id.clone(), tree.users.len()).is_some() {
            return Err(Error::config("users", format!("duplicate user {}", u.id)));
        }
        tree.users.push(UserWeights {
            user: u.id.clone(),
            weight: u.weight,
            functions: Vec::new(),
        });
    }
    for f in functions {
        let user = &f.spec.user;
        let i = match index.get(user) {
            Some(i) => *i,
            None => {
                index.insert(user.clone(), tree.users.len());
                tree.users.push(UserWeights {
                    user: user.clone(),
                    weight: 1.0,
                    functions: Vec::new(),
                });
                tree.users.len() - 1
            }
        };
        tree.users[i].functions.push((f.spec.id.clone(), f.spec.weight));
    }
    tree.users.retain(|u| !u.functions.is_empty() || users.iter().all(|x| x.id != u.user));
    Ok(tree)
}
