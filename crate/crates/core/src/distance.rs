//! Distance analytics for amplitude x PSK constellations.
//!
//! Two points either differ in amplitude row, in which case their distance
//! can always be driven down to the phase-free amplitude distance `D_u`, or
//! share a row and differ only in phases, giving the phase distance `D_p(u)`.
//! The constellation MCD is the smaller of the two minima.
//!
//! `D_p(u)` is attained on a small set of critical phase differences: one per
//! phase-carrying symbol (rotate that symbol by one PSK step) and one per
//! distinct PSK order `l` (rotate every symbol of order `>= l` by `2π/2^l`).
//! [`phase_mcd_bruteforce`] enumerates every difference and serves as the
//! oracle for that reduction.

use std::f64::consts::PI;

use num_complex::Complex64;
use statrs::function::gamma::ln_gamma;

use crate::constellation::{chordal_from_inner, BitAllocation, Codebook};
use crate::error::{invalid, Error, Result};

/// Which family a critical phase difference belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalKind {
    /// Single-symbol rotation of symbol `k`.
    Symbol(usize),
    /// Rotation of all symbols with at least `l` phase bits.
    Level(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalDifference {
    pub angles: Vec<f64>,
    pub kind: CriticalKind,
}

fn sin2_step(bits: u32) -> f64 {
    let s = (PI / (1u64 << bits) as f64).sin();
    s * s
}

/// Phase-free distance between two amplitude rows.
pub fn amplitude_pair_distance(u_a: &[f64], u_b: &[f64]) -> Result<f64> {
    if u_a.len() != u_b.len() {
        return invalid(format!("amplitude lengths differ: {} vs {}", u_a.len(), u_b.len()));
    }
    let dot: f64 = u_a.iter().zip(u_b).map(|(a, b)| a * b).sum();
    Ok(chordal_from_inner(dot * dot))
}

/// The critical phase differences, deduplicated.
pub fn critical_phase_differences(alloc: &BitAllocation) -> Result<Vec<CriticalDifference>> {
    if !alloc.has_phase_bits() {
        return Err(Error::EmptyPhase);
    }
    let k = alloc.k();
    let l_phi = alloc.l_phi();
    let mut out: Vec<CriticalDifference> = Vec::new();
    for sym in alloc.phase_symbols() {
        let mut angles = vec![0.0; k];
        angles[sym] = 2.0 * PI / (1u64 << l_phi[sym]) as f64;
        out.push(CriticalDifference { angles, kind: CriticalKind::Symbol(sym) });
    }
    for level in alloc.levels() {
        let step = 2.0 * PI / (1u64 << level) as f64;
        let angles: Vec<f64> = l_phi.iter().map(|&b| if b >= level { step } else { 0.0 }).collect();
        if out.iter().all(|c| c.angles != angles) {
            out.push(CriticalDifference { angles, kind: CriticalKind::Level(level) });
        }
    }
    Ok(out)
}

/// Chordal distance between `u ∘ p` and `u ∘ p ∘ e^{jΔφ}`.
pub fn phase_difference_distance(u: &[f64], angles: &[f64]) -> f64 {
    let sum: Complex64 = u.iter().zip(angles).map(|(a, &phi)| Complex64::from_polar(a * a, phi)).sum();
    chordal_from_inner(sum.norm_sqr())
}

/// Closed-form `D_p(u)`: minimum over the per-symbol and per-level terms.
pub fn phase_mcd_closed_form(u: &[f64], alloc: &BitAllocation) -> Result<f64> {
    if !alloc.has_phase_bits() {
        return Err(Error::EmptyPhase);
    }
    if u.len() != alloc.k() {
        return invalid(format!("amplitude has length {}, allocation has K={}", u.len(), alloc.k()));
    }
    Ok(phase_terms_squared(u, alloc).into_iter().fold(f64::INFINITY, f64::min).max(0.0).sqrt())
}

/// Squared per-symbol terms followed by squared per-level terms.
pub(crate) fn phase_terms_squared(u: &[f64], alloc: &BitAllocation) -> Vec<f64> {
    let l_phi = alloc.l_phi();
    let mut terms = Vec::new();
    for k in alloc.phase_symbols() {
        let x = u[k] * u[k];
        terms.push(4.0 * x * (1.0 - x) * sin2_step(l_phi[k]));
    }
    for level in alloc.levels() {
        let s: f64 = u.iter().zip(l_phi).filter(|(_, &b)| b < level).map(|(a, _)| a * a).sum();
        terms.push(4.0 * s * (1.0 - s) * sin2_step(level));
    }
    terms
}

/// Limit on `sum(l_phi)` for [`phase_mcd_bruteforce`].
pub const MAX_BRUTEFORCE_PHASE_BITS: u32 = 16;

/// `D_p(u)` by enumerating every non-identity phase difference.
pub fn phase_mcd_bruteforce(u: &[f64], alloc: &BitAllocation) -> Result<f64> {
    if !alloc.has_phase_bits() {
        return Err(Error::EmptyPhase);
    }
    let total = alloc.phase_bits();
    if total > MAX_BRUTEFORCE_PHASE_BITS {
        return Err(Error::Capacity {
            what: "phase differences",
            needed: 1u128 << total,
            limit: 1u128 << MAX_BRUTEFORCE_PHASE_BITS,
        });
    }
    if u.len() != alloc.k() {
        return invalid(format!("amplitude has length {}, allocation has K={}", u.len(), alloc.k()));
    }
    let l_phi = alloc.l_phi();
    let mut idx = vec![0usize; u.len()];
    let mut best = f64::INFINITY;
    loop {
        // odometer over all phase-index tuples, skipping the identity
        let mut k = 0;
        loop {
            if k == idx.len() {
                return Ok(best);
            }
            idx[k] += 1;
            if idx[k] < 1usize << l_phi[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        let sum: Complex64 = u
            .iter()
            .zip(&idx)
            .zip(l_phi)
            .map(|((a, &g), &b)| crate::constellation::psk_phasor(g, b) * (a * a))
            .sum();
        best = best.min(chordal_from_inner(sum.norm_sqr()));
    }
}

/// MCD from the amplitude/phase decomposition.
pub fn mcd_decomposed(codebook: &Codebook) -> f64 {
    mcd_of_rows(codebook.amplitudes().rows(), codebook.alloc())
}

/// [`mcd_decomposed`] for unit-norm rows that are not yet wrapped in a codebook.
pub fn mcd_of_rows(rows: &[Vec<f64>], alloc: &BitAllocation) -> f64 {
    let mut best = f64::INFINITY;
    for (a, ua) in rows.iter().enumerate() {
        for ub in &rows[a + 1..] {
            best = best.min(amplitude_pair_distance(ua, ub).unwrap_or(0.0));
        }
        if alloc.has_phase_bits() {
            best = best.min(phase_mcd_closed_form(ua, alloc).unwrap_or(0.0));
        }
    }
    best
}

/// `(π^{1/2} Γ((K+1)/2) / Γ(K/2))^{1/(K-1)}`, the amplitude packing constant.
pub fn packing_constant(k: usize) -> f64 {
    let kf = k as f64;
    let log_c = 0.5 * PI.ln() + ln_gamma((kf + 1.0) / 2.0) - ln_gamma(kf / 2.0);
    (log_c / (kf - 1.0)).exp()
}

/// Upper bound on the amplitude-set MCD for `2^{l_u}` rows.
pub fn amplitude_mcd_upper_bound(k: usize, l_u: u32) -> f64 {
    packing_constant(k) * 2f64.powf(-(l_u as f64) / (k as f64 - 1.0))
}

/// Upper bound on the MCD achievable by an allocation.
pub fn mcd_upper_bound(alloc: &BitAllocation) -> f64 {
    let amp = amplitude_mcd_upper_bound(alloc.k(), alloc.l_u());
    if alloc.has_phase_bits() {
        amp.min((PI / (1u64 << alloc.max_phase_bits()) as f64).sin())
    } else {
        amp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{AmplitudeSet, DesignMetadata};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

    fn alloc(l_u: u32, l_phi: &[u32]) -> BitAllocation {
        BitAllocation::new(l_u, l_phi.to_vec()).unwrap()
    }

    #[test]
    fn amplitude_pair_examples() {
        let a = [2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];
        let b = [0.5, 0.5, FRAC_1_SQRT_2];
        assert_eq!(amplitude_pair_distance(&a, &a).unwrap(), 0.0);
        // dot = 2/3 + sqrt(2)/6
        let dot = 2.0 / 3.0 + 2f64.sqrt() / 6.0;
        assert_abs_diff_eq!(amplitude_pair_distance(&a, &b).unwrap(), (1.0 - dot * dot).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(amplitude_pair_distance(&a, &b).unwrap(), 0.43096, epsilon = 1e-5);
        assert_eq!(amplitude_pair_distance(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert!(amplitude_pair_distance(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn critical_set_examples() {
        let got: Vec<Vec<f64>> = critical_phase_differences(&alloc(0, &[0, 2, 3]))
            .unwrap()
            .into_iter()
            .map(|c| c.angles)
            .collect();
        assert_eq!(
            got,
            vec![vec![0.0, FRAC_PI_2, 0.0], vec![0.0, 0.0, FRAC_PI_4], vec![0.0, FRAC_PI_2, FRAC_PI_2]]
        );
        let got = critical_phase_differences(&alloc(0, &[0, 1])).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].angles, vec![0.0, PI]);
        let got: Vec<Vec<f64>> = critical_phase_differences(&alloc(1, &[0, 2, 2]))
            .unwrap()
            .into_iter()
            .map(|c| c.angles)
            .collect();
        assert_eq!(
            got,
            vec![vec![0.0, FRAC_PI_2, 0.0], vec![0.0, 0.0, FRAC_PI_2], vec![0.0, FRAC_PI_2, FRAC_PI_2]]
        );
        assert_eq!(critical_phase_differences(&alloc(2, &[0, 0])), Err(Error::EmptyPhase));
    }

    #[test]
    fn closed_form_examples() {
        let u = [2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];
        assert_abs_diff_eq!(phase_mcd_closed_form(&u, &alloc(0, &[0, 2, 2])).unwrap(), 4.0 / 9.0, epsilon = 1e-15);
        let u = [FRAC_1_SQRT_2, FRAC_1_SQRT_2];
        assert_abs_diff_eq!(phase_mcd_closed_form(&u, &alloc(0, &[0, 1])).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(phase_mcd_closed_form(&[1.0, 0.0, 0.0], &alloc(0, &[0, 2, 3])).unwrap(), 0.0);
        assert_eq!(phase_mcd_closed_form(&[1.0, 0.0], &alloc(1, &[0, 0])), Err(Error::EmptyPhase));
    }

    #[test]
    fn closed_form_matches_critical_set() {
        let a = alloc(0, &[0, 1, 2, 2, 4]);
        let u = [0.3, 0.5, 0.4, 0.6, (1.0f64 - 0.09 - 0.25 - 0.16 - 0.36).sqrt()];
        let via_set = critical_phase_differences(&a)
            .unwrap()
            .iter()
            .map(|c| phase_difference_distance(&u, &c.angles))
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(phase_mcd_closed_form(&u, &a).unwrap(), via_set, epsilon = 1e-14);
    }

    #[test]
    fn bruteforce_examples() {
        let (a, b) = (0.8f64, 0.6f64);
        assert_abs_diff_eq!(
            phase_mcd_bruteforce(&[a, b], &alloc(0, &[0, 1])).unwrap(),
            (1.0 - (a * a - b * b).powi(2)).sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(phase_mcd_bruteforce(&[1.0, 0.0], &alloc(0, &[0, 3])).unwrap(), 0.0);
        assert!(matches!(
            phase_mcd_bruteforce(&[0.5; 4], &alloc(0, &[0, 5, 6, 6])),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn decomposed_examples() {
        let amps = AmplitudeSet::from_unit_rows(vec![
            vec![2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0],
            vec![0.5, 0.5, FRAC_1_SQRT_2],
        ])
        .unwrap();
        let cb = Codebook::new(alloc(1, &[0, 2, 2]), amps, DesignMetadata::default()).unwrap();
        assert_abs_diff_eq!(
            phase_mcd_closed_form(&[0.5, 0.5, FRAC_1_SQRT_2], cb.alloc()).unwrap(),
            6f64.sqrt() / 4.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(mcd_decomposed(&cb), 0.43096, epsilon = 1e-5);
        assert_abs_diff_eq!(cb.achieved_mcd(), mcd_decomposed(&cb), epsilon = 0.0);

        let single = AmplitudeSet::from_unit_rows(vec![vec![0.6, 0.0, 0.8]]).unwrap();
        let cb = Codebook::new(alloc(0, &[0, 1, 2]), single, DesignMetadata::default()).unwrap();
        assert_eq!(mcd_decomposed(&cb), phase_mcd_closed_form(&[0.6, 0.0, 0.8], cb.alloc()).unwrap());
    }

    #[test]
    fn upper_bound_examples() {
        assert_abs_diff_eq!(packing_constant(3), 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(mcd_upper_bound(&alloc(1, &[0, 2, 2])), FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(amplitude_mcd_upper_bound(3, 1), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mcd_upper_bound(&alloc(0, &[0, 1, 3])), (PI / 8.0).sin(), epsilon = 1e-15);
        // no phase bits: only the packing term
        assert_abs_diff_eq!(mcd_upper_bound(&alloc(2, &[0, 0, 0])), 2f64.sqrt() / 2.0, epsilon = 1e-12);
        // K = 4: (3π/4)^{1/3}
        assert_abs_diff_eq!(packing_constant(4), (3.0 * PI / 4.0).powf(1.0 / 3.0), epsilon = 1e-12);
        // large K stays finite through the log-gamma route
        assert!(packing_constant(64).is_finite());
    }
}
