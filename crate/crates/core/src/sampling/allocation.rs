//! Log-weighted per-polymer budgets for the balanced sampler.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedAllocation {
    pub budget: usize,
    pub available: BTreeMap<String, usize>,
    pub allocations: BTreeMap<String, usize>,
    /// Unrounded shares of the final pass (capped polymers hold their cap).
    pub raw: BTreeMap<String, f64>,
    /// Polymers held at their availability, in the order they were capped.
    pub capped: Vec<String>,
    pub log: Vec<String>,
}

impl BalancedAllocation {
    pub fn is_capped(&self, polymer: &str) -> bool {
        self.capped.iter().any(|c| c == polymer)
    }
}

fn weight(f: usize) -> f64 {
    (1.0 + f as f64).ln()
}

/// Budget `n` split in proportion to log(1 + f_p). Shares above availability
/// are capped and the surplus re-spread over the rest until nothing exceeds
/// its cap; integer counts come from largest-remainder rounding.
pub fn allocate_balanced(freqs: &BTreeMap<String, usize>, n: usize) -> Result<BalancedAllocation> {
    if freqs.is_empty() {
        return Err(Error::invalid("no polymers to allocate over"));
    }
    let total: usize = freqs.values().sum();
    if n > total {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: total,
        });
    }

    let mut capped: Vec<String> = Vec::new();
    let mut log = Vec::new();
    let mut raw: BTreeMap<String, f64>;
    loop {
        let residual = n - capped.iter().map(|p| freqs[p]).sum::<usize>();
        let weight_sum: f64 = freqs
            .iter()
            .filter(|(p, _)| !capped.contains(p))
            .map(|(_, &f)| weight(f))
            .sum();
        raw = freqs
            .iter()
            .map(|(p, &f)| {
                let share = if capped.contains(p) {
                    f as f64
                } else if weight_sum > 0.0 {
                    residual as f64 * weight(f) / weight_sum
                } else {
                    0.0
                };
                (p.clone(), share)
            })
            .collect();
        let over: Vec<String> = freqs
            .iter()
            .filter(|(p, &f)| !capped.contains(p) && raw[*p] > f as f64)
            .map(|(p, _)| p.clone())
            .collect();
        if over.is_empty() {
            break;
        }
        for p in over {
            log.push(format!(
                "capped {p} at {} (raw share {:.3} exceeded availability)",
                freqs[&p], raw[&p]
            ));
            capped.push(p);
        }
    }

    let mut allocations: BTreeMap<String, usize> = BTreeMap::new();
    let mut assigned = 0usize;
    for (p, &share) in &raw {
        let base = if capped.contains(p) { freqs[p] } else { share.floor() as usize };
        assigned += base;
        allocations.insert(p.clone(), base);
    }
    let mut order: Vec<&String> = freqs.keys().filter(|p| !capped.contains(*p)).collect();
    order.sort_by(|a, b| {
        let fa = raw[*a] - raw[*a].floor();
        let fb = raw[*b] - raw[*b].floor();
        fb.partial_cmp(&fa)
            .unwrap_or(Ordering::Equal)
            .then(freqs[*b].cmp(&freqs[*a]))
            .then(a.cmp(b))
    });
    let mut remaining = n - assigned;
    while remaining > 0 {
        let before = remaining;
        for p in &order {
            if remaining == 0 {
                break;
            }
            let slot = allocations.get_mut(*p).expect("every polymer has an entry");
            if *slot < freqs[*p] {
                *slot += 1;
                remaining -= 1;
            }
        }
        if remaining == before {
            break;
        }
    }
    debug_assert_eq!(allocations.values().sum::<usize>(), n);

    Ok(BalancedAllocation {
        budget: n,
        available: freqs.clone(),
        allocations,
        raw,
        capped,
        log,
    })
}
