//! Bit-allocation search with upper-bound pruning.

use crate::constellation::{BitAllocation, Codebook};
use crate::distance::mcd_upper_bound;
use crate::error::{invalid, Result};
use crate::exec::Execution;

use super::{design_amplitude_set_with, DesignConfig, MAX_AMPLITUDE_BITS};

const MAX_SEARCH_BITS: u32 = 24;
const MAX_PHASE_BITS_PER_SYMBOL: u32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RankedAllocation {
    pub alloc: BitAllocation,
    pub upper_bound: f64,
    pub codebook: Codebook,
}

impl RankedAllocation {
    pub fn achieved_mcd(&self) -> f64 {
        self.codebook.achieved_mcd()
    }
}

fn partitions(parts: usize, total: u32, min: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if parts == 0 {
        if total == 0 {
            out.push(prefix.clone());
        }
        return;
    }
    // remaining parts are all >= min, so the smallest part can take at most total / parts
    let max = (total / parts as u32).min(MAX_PHASE_BITS_PER_SYMBOL);
    for v in min..=max {
        prefix.push(v);
        partitions(parts - 1, total - v, v, prefix, out);
        prefix.pop();
    }
}

/// All allocations of `l_v` bits over `k` symbols, sorted by descending upper
/// bound, then ascending `l_u`, then `l_phi`.
pub fn enumerate_allocations(k: usize, l_v: u32) -> Result<Vec<BitAllocation>> {
    if k < 2 {
        return invalid(format!("K must be at least 2, got {k}"));
    }
    if l_v == 0 || l_v > MAX_SEARCH_BITS {
        return invalid(format!("l_v must be in 1..={MAX_SEARCH_BITS}, got {l_v}"));
    }
    let mut allocs = Vec::new();
    for l_u in 0..=l_v.min(MAX_AMPLITUDE_BITS) {
        let mut phis = Vec::new();
        partitions(k - 1, l_v - l_u, 0, &mut vec![0], &mut phis);
        for l_phi in phis {
            allocs.push(BitAllocation::new(l_u, l_phi)?);
        }
    }
    if allocs.is_empty() {
        return invalid(format!("no allocation fits {l_v} bits over K={k}"));
    }
    let mut keyed: Vec<(f64, BitAllocation)> = allocs.into_iter().map(|a| (mcd_upper_bound(&a), a)).collect();
    keyed.sort_by(|(ba, a), (bb, b)| {
        bb.total_cmp(ba).then(a.l_u().cmp(&b.l_u())).then_with(|| a.l_phi().cmp(b.l_phi()))
    });
    Ok(keyed.into_iter().map(|(_, a)| a).collect())
}

/// Orders results by achieved MCD. Values within `tol` of the best remaining
/// one are treated as equal and resolved by smaller `l_u`.
fn rank(mut evaluated: Vec<RankedAllocation>, tol: f64) -> Vec<RankedAllocation> {
    let mut ranked = Vec::with_capacity(evaluated.len());
    while !evaluated.is_empty() {
        let top = evaluated.iter().map(|r| r.achieved_mcd()).fold(f64::NEG_INFINITY, f64::max);
        let pick = evaluated
            .iter()
            .enumerate()
            .filter(|(_, r)| r.achieved_mcd() >= top - tol)
            .min_by(|(_, a), (_, b)| {
                a.alloc
                    .l_u()
                    .cmp(&b.alloc.l_u())
                    .then(b.achieved_mcd().total_cmp(&a.achieved_mcd()))
                    .then_with(|| a.alloc.l_phi().cmp(b.alloc.l_phi()))
            })
            .map(|(i, _)| i)
            .expect("non-empty");
        ranked.push(evaluated.remove(pick));
    }
    ranked
}

pub fn search_bit_allocations(k: usize, l_v: u32, cfg: &DesignConfig) -> Result<Vec<RankedAllocation>> {
    search_bit_allocations_with(k, l_v, cfg, Execution::default())
}

/// Designs allocations in bound order until no remaining bound can beat the
/// best achieved MCD.
pub fn search_bit_allocations_with(
    k: usize,
    l_v: u32,
    cfg: &DesignConfig,
    exec: Execution,
) -> Result<Vec<RankedAllocation>> {
    cfg.validate()?;
    let candidates = enumerate_allocations(k, l_v)?;
    let mut best = f64::NEG_INFINITY;
    let mut evaluated = Vec::new();
    let mut last_err = None;
    for alloc in candidates {
        let upper_bound = mcd_upper_bound(&alloc);
        if upper_bound <= best {
            break;
        }
        match design_amplitude_set_with(&alloc, cfg, exec) {
            Ok(codebook) => {
                best = best.max(codebook.achieved_mcd());
                evaluated.push(RankedAllocation { alloc, upper_bound, codebook });
            }
            Err(e) => last_err = Some(e),
        }
    }
    if evaluated.is_empty() {
        return Err(last_err.unwrap_or_else(|| crate::Error::DesignFailure("nothing evaluated".into())));
    }
    Ok(rank(evaluated, cfg.tie_tolerance))
}
