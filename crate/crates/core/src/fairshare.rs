//! Weighted fair shares: guaranteed minimums, overload detection, and
//! water-filled allocations for functions that demand more than their share.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct UserWeights {
    pub user: String,
    pub weight: f64,
    pub functions: Vec<(String, f64)>,
}

/// Two-level weight hierarchy: users, then functions within a user.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightTree {
    pub users: Vec<UserWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Share {
    pub demand: u64,
    pub c_guar: u64,
    pub c_adj: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareResult {
    pub shares: BTreeMap<String, Share>,
    pub overloaded: bool,
}

/// Effective per-function weight: the user's weight split across its
/// functions in proportion to their own weights.
pub fn flatten_weights(tree: &WeightTree) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for u in &tree.users {
        if u.functions.is_empty() {
            return Err(Error::InvalidParameter(format!("user {} has no functions", u.user)));
        }
        if !(u.weight > 0.0) {
            return Err(Error::InvalidParameter(format!("user {} weight {}", u.user, u.weight)));
        }
        let sum: f64 = u.functions.iter().map(|(_, w)| *w).sum();
        for (f, w) in &u.functions {
            if !(*w > 0.0) {
                return Err(Error::InvalidParameter(format!("function {f} weight {w}")));
            }
            if out.insert(f.clone(), u.weight * w / sum).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate function id {f}")));
            }
        }
    }
    Ok(out)
}

fn weight_of(weights: &BTreeMap<String, f64>, f: &str) -> f64 {
    weights.get(f).copied().unwrap_or(1.0)
}

fn total_weight<'a>(weights: &BTreeMap<String, f64>, ids: impl Iterator<Item = &'a String>) -> f64 {
    ids.map(|f| weight_of(weights, f)).sum()
}

/// `floor(w_i / sum(w) * capacity)` for every function in `weights`.
pub fn guaranteed_shares(weights: &BTreeMap<String, f64>, capacity: u64) -> BTreeMap<String, u64> {
    let total: f64 = weights.values().sum();
    weights
        .iter()
        .map(|(f, w)| (f.clone(), (w / total * capacity as f64 + EPS).floor() as u64))
        .collect()
}

pub fn detect_overload(demands: &BTreeMap<String, u64>, capacity: u64) -> bool {
    demands.values().sum::<u64>() > capacity
}

/// Splits `capacity` among `demands` in proportion to weight, never giving a
/// function more than it asked for; surplus from capped functions is
/// redistributed until no share exceeds its demand.
pub fn water_fill(
    demands: &BTreeMap<String, f64>,
    weights: &BTreeMap<String, f64>,
    capacity: f64,
) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = demands.keys().map(|f| (f.clone(), 0.0)).collect();
    let mut active: Vec<&String> = demands.keys().collect();
    let mut remaining = capacity.max(0.0);
    loop {
        let w = total_weight(weights, active.iter().copied());
        if active.is_empty() || w <= 0.0 {
            break;
        }
        let capped: Vec<&String> = active
            .iter()
            .copied()
            .filter(|f| weight_of(weights, f) / w * remaining >= demands[*f] - EPS)
            .collect();
        if capped.is_empty() {
            for f in &active {
                out.insert((*f).clone(), weight_of(weights, f) / w * remaining);
            }
            break;
        }
        for f in capped {
            out.insert(f.clone(), demands[f]);
            remaining -= demands[f];
            active.retain(|g| *g != f);
        }
        remaining = remaining.max(0.0);
    }
    out
}

/// Container-count fair share. Without overload every function gets its
/// demand. Under overload, functions within their guarantee keep their
/// demand and the rest of the capacity is water-filled among the others;
/// leftover whole containers after flooring go to the largest fractional
/// remainders, ties by function id.
pub fn adjust_allocations(
    demands: &BTreeMap<String, u64>,
    weights: &BTreeMap<String, f64>,
    capacity: u64,
) -> ShareResult {
    let relevant: BTreeMap<String, f64> = demands
        .keys()
        .map(|f| (f.clone(), weight_of(weights, f)))
        .collect();
    let guar = guaranteed_shares(&relevant, capacity);
    let overloaded = detect_overload(demands, capacity);
    let mut shares: BTreeMap<String, Share> = demands
        .iter()
        .map(|(f, d)| {
            let s = Share {
                demand: *d,
                c_guar: guar[f],
                c_adj: *d,
            };
            (f.clone(), s)
        })
        .collect();
    if !overloaded {
        return ShareResult { shares, overloaded };
    }

    let well_behaved: u64 = shares
        .values()
        .filter(|s| s.demand <= s.c_guar)
        .map(|s| s.demand)
        .sum();
    let spare = capacity - well_behaved;
    let over: BTreeMap<String, f64> = shares
        .iter()
        .filter(|(_, s)| s.demand > s.c_guar)
        .map(|(f, s)| (f.clone(), s.demand as f64))
        .collect();
    let fluid = water_fill(&over, &relevant, spare as f64);

    let mut given = 0;
    let mut remainders = Vec::new();
    for (f, x) in &fluid {
        let base = ((x + EPS).floor() as u64).min(over[f] as u64);
        given += base;
        shares.get_mut(f).unwrap().c_adj = base;
        remainders.push((x - base as f64, f.clone()));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let mut left = spare.saturating_sub(given);
    while left > 0 {
        let mut progressed = false;
        for (_, f) in &remainders {
            if left == 0 {
                break;
            }
            let s = shares.get_mut(f).unwrap();
            if s.c_adj < s.demand {
                s.c_adj += 1;
                left -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    ShareResult { shares, overloaded }
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn instance() -> impl Strategy<Value = (BTreeMap<String, f64>, BTreeMap<String, u64>, u64)> {
        (1usize..8, 0u64..200).prop_flat_map(|(n, c)| {
            (
                proptest::collection::vec(0.1f64..10.0, n),
                proptest::collection::vec(0u64..120, n),
                Just(c),
            )
                .prop_map(|(w, d, c)| {
                    let ids = (0..w.len()).map(|i| format!("f{i:02}"));
                    (
                        ids.clone().zip(w).collect(),
                        ids.zip(d).collect(),
                        c,
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn no_overcommit_and_passthrough((w, d, c) in instance()) {
            let r = adjust_allocations(&d, &w, c);
            let total: u64 = r.shares.values().map(|s| s.c_adj).sum();
            if r.overloaded {
                prop_assert!(total <= c);
            } else {
                for (f, s) in &r.shares {
                    prop_assert_eq!(s.c_adj, d[f]);
                }
            }
            for s in r.shares.values() {
                prop_assert!(s.c_adj <= s.demand);
            }
        }

        #[test]
        fn scale_invariance((w, d, c) in instance(), k in 0.01f64..100.0) {
            let scaled: BTreeMap<String, f64> = w.iter().map(|(f, x)| (f.clone(), x * k)).collect();
            let a = adjust_allocations(&d, &w, c);
            let b = adjust_allocations(&d, &scaled, c);
            prop_assert_eq!(a, b);
        }
    }
}
