//! Phase detection for a fixed amplitude hypothesis.
//!
//! All functions take `Z = G ∘ (ũ ũ^T)` and return per-symbol PSK indices
//! (index `g` means angle `2πg / 2^{l_φ}`). Zero-bit symbols always get 0.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::constellation::{psk_angle, psk_phasor, BitAllocation};
use crate::error::{invalid, Error, Result};

use super::GramMatrix;

/// Largest phase-bit total [`exhaustive_phases`] will enumerate.
pub const MAX_EXHAUSTIVE_PHASE_BITS: u32 = 20;

/// `Σ_k z_{k,d} e^{jφ_k}` over the already detected `(k, φ_k)`.
pub fn mu(z: &GramMatrix, detected: &[(usize, f64)], d: usize) -> Result<Complex64> {
    if detected.is_empty() {
        return Err(Error::InvalidState("no detected reference symbol".into()));
    }
    if d >= z.k() {
        return invalid(format!("symbol {d} out of range"));
    }
    if detected.iter().any(|&(k, _)| k == d) {
        return invalid(format!("symbol {d} is already detected"));
    }
    Ok(detected.iter().map(|&(k, phi)| z.get(k, d) * Complex64::from_polar(1.0, phi)).sum())
}

/// Closest and second-closest `2^bits`-PSK indices to the angle of `mu_d`.
///
/// Exact midpoints round toward angle zero; the runner-up is the neighbour on
/// the side of `∠mu_d`, counter-clockwise when the angle hits a point exactly.
/// `mu_d = 0` gives `(0, 1)`.
pub fn psk_decision(mu_d: Complex64, bits: u32) -> (usize, usize) {
    assert!(bits >= 1, "psk_decision needs at least one bit");
    let n = 1i64 << bits;
    if mu_d == Complex64::new(0.0, 0.0) {
        return (0, 1);
    }
    let x = mu_d.arg() * n as f64 / (2.0 * PI);
    let g = if (x - x.trunc()).abs() == 0.5 { x.trunc() } else { x.round() };
    let check = if x < g { g - 1.0 } else { g + 1.0 };
    let wrap = |v: f64| (v as i64).rem_euclid(n) as usize;
    (wrap(g), wrap(check))
}

/// `max_{φ_q} Re{z e^{j(φ_d - φ_q)}}` over the `2^bits_q`-PSK set.
pub fn eta(z_dq: Complex64, phi_d: f64, bits_q: u32) -> f64 {
    let rotated = z_dq * Complex64::from_polar(1.0, phi_d);
    (0..1usize << bits_q)
        .map(|g| (rotated * psk_phasor(g, bits_q).conj()).re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Shared state of the decision-feedback loop.
struct Feedback<'a> {
    z: &'a GramMatrix,
    l_phi: &'a [u32],
    phases: Vec<usize>,
    detected: Vec<bool>,
    mu: Vec<Complex64>,
}

impl<'a> Feedback<'a> {
    fn new(z: &'a GramMatrix, alloc: &'a BitAllocation) -> Self {
        let k = alloc.k();
        let l_phi = alloc.l_phi();
        let detected: Vec<bool> = l_phi.iter().map(|&b| b == 0).collect();
        let mut mu = vec![Complex64::new(0.0, 0.0); k];
        for d in 0..k {
            if !detected[d] {
                mu[d] = (0..k).filter(|&j| detected[j]).map(|j| z.get(j, d)).sum();
            }
        }
        Self { z, l_phi, phases: vec![0; k], detected, mu }
    }

    fn undetected(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.detected.len()).filter(|&d| !self.detected[d])
    }

    fn commit(&mut self, d: usize, g: usize) {
        self.phases[d] = g;
        self.detected[d] = true;
        let rot = psk_phasor(g, self.l_phi[d]);
        for q in 0..self.detected.len() {
            if !self.detected[q] {
                self.mu[q] += self.z.get(d, q) * rot;
            }
        }
    }

    /// Runs rounds until every symbol is committed. `decide` returns
    /// `(index, reliability)` for an undetected symbol.
    fn run(mut self, mut decide: impl FnMut(&Self, usize) -> (usize, f64)) -> Vec<usize> {
        loop {
            let mut best: Option<(usize, usize, f64)> = None;
            for d in self.undetected() {
                let (g, r) = decide(&self, d);
                if best.is_none_or(|(_, _, br)| r > br) {
                    best = Some((d, g, r));
                }
            }
            match best {
                Some((d, g, _)) => self.commit(d, g),
                None => return self.phases,
            }
        }
    }
}

fn metric(mu: Complex64, g: usize, bits: u32) -> f64 {
    (mu * psk_phasor(g, bits).conj()).re
}

fn check_z(z: &GramMatrix, alloc: &BitAllocation) {
    assert_eq!(z.k(), alloc.k(), "Gram size does not match allocation");
}

/// Reliability-sorted decision-feedback phase detection.
pub fn pr_sort_dfdd(z: &GramMatrix, alloc: &BitAllocation) -> Vec<usize> {
    check_z(z, alloc);
    Feedback::new(z, alloc).run(|fb, d| {
        let bits = fb.l_phi[d];
        let (best, second) = psk_decision(fb.mu[d], bits);
        (best, metric(fb.mu[d], best, bits) - metric(fb.mu[d], second, bits))
    })
}

/// `η_{d,q}(φ_d)` for every ordered pair with `0 < l_q < l_d` and every PSK
/// point of `d`. Indexed `[d][q][g_d]`; empty where not needed.
fn eta_table(z: &GramMatrix, l_phi: &[u32]) -> Vec<Vec<Vec<f64>>> {
    let k = l_phi.len();
    (0..k)
        .map(|d| {
            (0..k)
                .map(|q| {
                    if l_phi[q] > 0 && l_phi[q] < l_phi[d] {
                        (0..1usize << l_phi[d])
                            .map(|g| eta(z.get(d, q), psk_angle(g, l_phi[d]), l_phi[q]))
                            .collect()
                    } else {
                        Vec::new()
                    }
                })
                .collect()
        })
        .collect()
}

/// The improved decision metric of symbol `d` at PSK index `g`, given which
/// symbols are still undetected.
pub fn improved_metric(
    z: &GramMatrix,
    alloc: &BitAllocation,
    mu_d: Complex64,
    d: usize,
    g: usize,
    undetected: &[bool],
) -> f64 {
    let l_phi = alloc.l_phi();
    let phi = psk_angle(g, l_phi[d]);
    let mut m = metric(mu_d, g, l_phi[d]);
    for q in 0..l_phi.len() {
        if q != d && undetected[q] && l_phi[q] > 0 && l_phi[q] < l_phi[d] {
            m += eta(z.get(d, q), phi, l_phi[q]);
        }
    }
    m
}

/// Decision-feedback phase detection whose metric also credits the best
/// response of each undetected lower-order symbol.
pub fn improved_pr_sort_dfdd(z: &GramMatrix, alloc: &BitAllocation) -> Vec<usize> {
    check_z(z, alloc);
    let l_phi = alloc.l_phi().to_vec();
    let table = eta_table(z, &l_phi);
    Feedback::new(z, alloc).run(|fb, d| {
        let bits = l_phi[d];
        let lower: Vec<usize> = fb.undetected().filter(|&q| q != d && !table[d][q].is_empty()).collect();
        if lower.is_empty() {
            let (best, second) = psk_decision(fb.mu[d], bits);
            return (best, metric(fb.mu[d], best, bits) - metric(fb.mu[d], second, bits));
        }
        let mut first = (0usize, f64::NEG_INFINITY);
        let mut second = f64::NEG_INFINITY;
        for g in 0..1usize << bits {
            let m = metric(fb.mu[d], g, bits) + lower.iter().map(|&q| table[d][q][g]).sum::<f64>();
            if m > first.1 {
                second = first.1;
                first = (g, m);
            } else if m > second {
                second = m;
            }
        }
        (first.0, first.1 - second)
    })
}

/// Phase indices maximizing `Σ_{ij} z_ij e^{j(φ_i - φ_j)}`, by enumeration.
/// Ties go to the smallest Gray-labelled phase word.
pub fn exhaustive_phases(z: &GramMatrix, alloc: &BitAllocation) -> Result<Vec<usize>> {
    check_z(z, alloc);
    let lp = alloc.phase_bits();
    if lp > MAX_EXHAUSTIVE_PHASE_BITS {
        return Err(Error::Capacity {
            what: "phase hypotheses",
            needed: 1u128 << lp,
            limit: 1u128 << MAX_EXHAUSTIVE_PHASE_BITS,
        });
    }
    let l_phi = alloc.l_phi();
    let unit = vec![1.0; alloc.k()];
    let mut best = (f64::NEG_INFINITY, vec![0; alloc.k()]);
    for word in 0..1u64 << lp {
        let (_, phases) = crate::constellation::indices_from_message(alloc, word);
        let p: Vec<Complex64> = phases.iter().zip(l_phi).map(|(&g, &b)| psk_phasor(g, b)).collect();
        let value = z.quadratic_form(&unit, &p);
        if value > best.0 {
            best = (value, phases);
        }
    }
    Ok(best.1)
}
