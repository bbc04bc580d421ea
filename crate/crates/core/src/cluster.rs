//! Nodes, placed containers, and the actions that change them.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type ContainerId = u64;
pub type NodeId = usize;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub vcpu: f64,
    pub memory_mb: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerState {
    pub id: ContainerId,
    pub function: String,
    pub node: NodeId,
    /// vCPU the container was created with.
    pub standard_vcpu: f64,
    /// Share of `standard_vcpu` currently granted, `1 - tau ..= 1`.
    pub cpu_fraction: f64,
    pub memory_mb: u64,
    /// Requests per second at the current CPU share.
    pub effective_rate: f64,
    /// Marked reclaimable; still serves requests until terminated.
    pub lazy: bool,
}

impl ContainerState {
    pub fn allocated_vcpu(&self) -> f64 {
        self.standard_vcpu * self.cpu_fraction
    }

    pub fn is_deflated(&self) -> bool {
        self.cpu_fraction < 1.0 - EPS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Create {
        id: ContainerId,
        function: String,
        node: NodeId,
        vcpu: f64,
        memory_mb: u64,
        cpu_fraction: f64,
        effective_rate: f64,
    },
    MarkLazy {
        id: ContainerId,
    },
    Unmark {
        id: ContainerId,
    },
    Terminate {
        id: ContainerId,
    },
    /// Deflate or inflate to a new CPU share.
    Resize {
        id: ContainerId,
        cpu_fraction: f64,
    },
}

impl Action {
    pub fn container(&self) -> ContainerId {
        match self {
            Action::Create { id, .. }
            | Action::MarkLazy { id }
            | Action::Unmark { id }
            | Action::Terminate { id }
            | Action::Resize { id, .. } => *id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub nodes: Vec<Node>,
    pub containers: BTreeMap<ContainerId, ContainerState>,
    next_id: ContainerId,
}

impl ClusterState {
    pub fn new(nodes: Vec<Node>) -> Self {
        Self {
            nodes,
            containers: BTreeMap::new(),
            next_id: 0,
        }
    }

    /// Total vCPU across nodes: the fair-share capacity `C`.
    pub fn capacity_vcpu(&self) -> f64 {
        self.nodes.iter().map(|n| n.vcpu).sum()
    }

    pub fn next_id(&self) -> ContainerId {
        self.next_id
    }

    pub fn allocate_id(&mut self) -> ContainerId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn used_on(&self, node: NodeId) -> (f64, u64) {
        self.containers
            .values()
            .filter(|c| c.node == node)
            .fold((0.0, 0), |(v, m), c| (v + c.allocated_vcpu(), m + c.memory_mb))
    }

    pub fn free_on(&self, node: NodeId) -> (f64, u64) {
        let (v, m) = self.used_on(node);
        let n = &self.nodes[node];
        (n.vcpu - v, n.memory_mb.saturating_sub(m))
    }

    pub fn allocated_vcpu(&self) -> f64 {
        self.containers.values().map(|c| c.allocated_vcpu()).sum()
    }

    pub fn function_containers<'a>(
        &'a self,
        function: &'a str,
    ) -> impl Iterator<Item = &'a ContainerState> + 'a {
        self.containers.values().filter(move |c| c.function == function)
    }

    pub fn function_vcpu(&self, function: &str) -> f64 {
        self.function_containers(function)
            .map(|c| c.allocated_vcpu())
            .sum()
    }

    /// Best-fit placement: the node with the least spare vCPU that still fits
    /// both dimensions, lowest index on ties.
    pub fn place(&self, vcpu: f64, memory_mb: u64) -> Result<NodeId> {
        let mut best: Option<(f64, NodeId)> = None;
        for node in 0..self.nodes.len() {
            let (free_v, free_m) = self.free_on(node);
            if free_v + EPS >= vcpu && free_m >= memory_mb {
                let rest = free_v - vcpu;
                if best.is_none_or(|(r, _)| rest < r - EPS) {
                    best = Some((rest, node));
                }
            }
        }
        best.map(|(_, n)| n)
            .ok_or(Error::NoCapacity { vcpu, memory_mb })
    }

    /// Applies one action. `rate_at` maps (function, cpu fraction) to the
    /// container's effective service rate for resizes.
    pub fn apply(&mut self, action: &Action, rate_at: impl Fn(&str, f64) -> f64) -> Result<()> {
        match action {
            Action::Create {
                id,
                function,
                node,
                vcpu,
                memory_mb,
                cpu_fraction,
                effective_rate,
            } => {
                if *node >= self.nodes.len() {
                    return Err(Error::InvalidParameter(format!("unknown node {node}")));
                }
                if self.containers.contains_key(id) {
                    return Err(Error::InvalidParameter(format!("duplicate container {id}")));
                }
                self.containers.insert(
                    *id,
                    ContainerState {
                        id: *id,
                        function: function.clone(),
                        node: *node,
                        standard_vcpu: *vcpu,
                        cpu_fraction: *cpu_fraction,
                        memory_mb: *memory_mb,
                        effective_rate: *effective_rate,
                        lazy: false,
                    },
                );
                self.next_id = self.next_id.max(id + 1);
            }
            Action::MarkLazy { id } => self.get_mut(*id)?.lazy = true,
            Action::Unmark { id } => self.get_mut(*id)?.lazy = false,
            Action::Terminate { id } => {
                self.containers
                    .remove(id)
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown container {id}")))?;
            }
            Action::Resize { id, cpu_fraction } => {
                let c = self.get_mut(*id)?;
                c.cpu_fraction = *cpu_fraction;
                c.effective_rate = rate_at(&c.function, *cpu_fraction);
            }
        }
        Ok(())
    }

    fn get_mut(&mut self, id: ContainerId) -> Result<&mut ContainerState> {
        self.containers
            .get_mut(&id)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown container {id}")))
    }

    /// True when every node's placed vCPU and memory fit its capacity.
    pub fn within_capacity(&self) -> bool {
        (0..self.nodes.len()).all(|n| {
            let (v, m) = self.used_on(n);
            v <= self.nodes[n].vcpu + 1e-6 && m <= self.nodes[n].memory_mb
        })
    }
}
