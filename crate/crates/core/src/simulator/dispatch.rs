use std::collections::BTreeMap;

use crate::cluster::ContainerId;

/// Weight resolution: one unit per 0.05 vCPU.
pub const WEIGHT_QUANTUM: f64 = 0.05;

/// How a request is matched to a container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DispatchMode {
    /// Requests wait in one FCFS queue per function and go to an idle
    /// container picked by smooth weighted round robin.
    #[default]
    JoinIdle,
    /// Requests are assigned on arrival by smooth weighted round robin and
    /// wait in that container's own FCFS queue.
    Wrr,
    /// Like `JoinIdle`, but always picks the slowest idle container.
    WorstCase,
}

pub fn integer_weight(vcpu: f64) -> i64 {
    ((vcpu / WEIGHT_QUANTUM).round() as i64).max(1)
}

/// Smooth weighted round robin over a changing candidate set.
#[derive(Debug, Clone, Default)]
pub struct SmoothWrr {
    current: BTreeMap<ContainerId, i64>,
}

impl SmoothWrr {
    pub fn new() -> Self {
        Self::default()
    }

    /// Picks among `candidates` (`(id, integer weight)`); every candidate's
    /// running credit grows by its weight and the winner pays the total.
    pub fn pick(&mut self, candidates: &[(ContainerId, i64)]) -> Option<ContainerId> {
        let mut total = 0;
        let mut best: Option<(i64, ContainerId)> = None;
        for &(id, w) in candidates {
            let cw = self.current.entry(id).or_insert(0);
            *cw += w;
            total += w;
            if best.is_none_or(|(b, bid)| *cw > b || (*cw == b && id < bid)) {
                best = Some((*cw, id));
            }
        }
        let (_, id) = best?;
        *self.current.get_mut(&id).expect("candidate tracked") -= total;
        Some(id)
    }

    pub fn forget(&mut self, id: ContainerId) {
        self.current.remove(&id);
    }
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn proportional_over_full_cycle(vcpus in proptest::collection::vec(0.05f64..4.0, 1..8)) {
            let c: Vec<(ContainerId, i64)> = vcpus
                .iter()
                .enumerate()
                .map(|(i, v)| (i as ContainerId, integer_weight(*v)))
                .collect();
            let total: i64 = c.iter().map(|(_, w)| w).sum();
            let mut wrr = SmoothWrr::new();
            let mut counts = vec![0i64; c.len()];
            for _ in 0..total {
                counts[wrr.pick(&c).unwrap() as usize] += 1;
            }
            for (i, (_, w)) in c.iter().enumerate() {
                prop_assert!((counts[i] - w).abs() <= 1);
            }
        }
    }
}
