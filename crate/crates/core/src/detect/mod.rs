//! Receivers operating on the Gram matrix `G = Y^H Y` of a received block.
//!
//! The likelihood of a candidate `v` is `v^T G v* = |Y v*|^2`; every detector
//! here is an (approximate) maximizer of that quadratic form.

mod phase;

pub use phase::{
    eta, exhaustive_phases, improved_metric, improved_pr_sort_dfdd, mu, pr_sort_dfdd, psk_decision,
    MAX_EXHAUSTIVE_PHASE_BITS,
};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::constellation::{
    decode_indices_to_bits, indices_from_message, psk_phasor, Codebook, MessageBits,
    MAX_ENUMERATED_POINTS,
};
use crate::error::{invalid, Error, Result};

/// Received `M x K` block: column `k` holds the `M` antenna samples of symbol `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedBlock {
    samples: DMatrix<Complex64>,
}

impl ReceivedBlock {
    pub fn new(samples: DMatrix<Complex64>) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return invalid("received block must have at least one antenna and one symbol");
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &DMatrix<Complex64> {
        &self.samples
    }

    pub fn antennas(&self) -> usize {
        self.samples.nrows()
    }

    pub fn k(&self) -> usize {
        self.samples.ncols()
    }
}

/// Hermitian `K x K` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    k: usize,
    entries: Vec<Complex64>,
}

impl GramMatrix {
    pub fn identity(k: usize) -> Self {
        let mut entries = vec![Complex64::new(0.0, 0.0); k * k];
        for i in 0..k {
            entries[i * k + i] = Complex64::new(1.0, 0.0);
        }
        Self { k, entries }
    }

    /// Wraps row-major entries, checking Hermitian symmetry to `1e-12`.
    pub fn from_entries(k: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != k * k || k == 0 {
            return invalid(format!("expected {} entries, got {}", k * k, entries.len()));
        }
        for i in 0..k {
            for j in 0..k {
                let diff = entries[i * k + j] - entries[j * k + i].conj();
                let scale = 1.0f64.max(entries[i * k + j].norm());
                if diff.norm() > 1e-12 * scale {
                    return invalid(format!("entries ({i},{j}) and ({j},{i}) are not conjugate"));
                }
            }
        }
        Ok(Self { k, entries })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[i * self.k + j]
    }

    /// Sets `(i, j)` and its conjugate partner `(j, i)`.
    pub fn set_hermitian(&mut self, i: usize, j: usize, value: Complex64) {
        let value = if i == j { Complex64::new(value.re, 0.0) } else { value };
        self.entries[i * self.k + j] = value;
        self.entries[j * self.k + i] = value.conj();
    }

    /// `G ∘ (u u^T)`.
    pub fn scaled(&self, u: &[f64]) -> GramMatrix {
        assert_eq!(u.len(), self.k, "scaling vector has wrong length");
        let mut out = self.clone();
        for i in 0..self.k {
            for j in 0..self.k {
                out.entries[i * self.k + j] *= u[i] * u[j];
            }
        }
        out
    }

    /// `Re Σ_ij u_i u_j p_i G_ij p_j*`, i.e. `v^T G v*` for `v = u ∘ p`.
    pub fn quadratic_form(&self, u: &[f64], p: &[Complex64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.k {
            let vi = p[i] * u[i];
            let row = &self.entries[i * self.k..(i + 1) * self.k];
            let mut inner = Complex64::new(0.0, 0.0);
            for j in 0..self.k {
                inner += row[j] * (p[j] * u[j]).conj();
            }
            acc += (vi * inner).re;
        }
        acc
    }
}

/// `Y^H Y`, computed on the upper triangle and mirrored so it is exactly Hermitian.
pub fn gram(y: &ReceivedBlock) -> GramMatrix {
    let s = &y.samples;
    let k = s.ncols();
    let mut g = GramMatrix { k, entries: vec![Complex64::new(0.0, 0.0); k * k] };
    for i in 0..k {
        for j in i..k {
            let v: Complex64 = s.column(i).iter().zip(s.column(j).iter()).map(|(a, b)| a.conj() * b).sum();
            g.set_hermitian(i, j, v);
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    pub amp_index: usize,
    pub phase_indices: Vec<usize>,
    pub bits: MessageBits,
    pub iterations: u32,
    /// `v^T G v*` of the decision.
    pub objective: f64,
}

impl DetectionOutcome {
    fn new(codebook: &Codebook, g: &GramMatrix, amp: usize, phases: Vec<usize>, iterations: u32) -> Result<Self> {
        let bits = decode_indices_to_bits(codebook, amp, &phases)?;
        let objective = objective(g, codebook, amp, &phases);
        Ok(Self { amp_index: amp, phase_indices: phases, bits, iterations, objective })
    }
}

fn phasors(codebook: &Codebook, phases: &[usize]) -> Vec<Complex64> {
    phases.iter().zip(codebook.alloc().l_phi()).map(|(&g, &b)| psk_phasor(g, b)).collect()
}

fn check_size(g: &GramMatrix, codebook: &Codebook) -> Result<()> {
    if g.k() != codebook.k() {
        return invalid(format!("Gram matrix is {0}x{0}, codebook has K={1}", g.k(), codebook.k()));
    }
    Ok(())
}

/// Likelihood statistic `v^T G v*` of a constellation point.
pub fn objective(g: &GramMatrix, codebook: &Codebook, amp: usize, phases: &[usize]) -> f64 {
    g.quadratic_form(codebook.amplitudes().row(amp), &phasors(codebook, phases))
}

/// Exhaustive ML over every constellation point; ties go to the smallest message.
pub fn ml_exhaustive(g: &GramMatrix, codebook: &Codebook) -> Result<DetectionOutcome> {
    check_size(g, codebook)?;
    let alloc = codebook.alloc();
    let n = alloc.num_points();
    if n > MAX_ENUMERATED_POINTS {
        return Err(Error::Capacity { what: "constellation points", needed: n, limit: MAX_ENUMERATED_POINTS });
    }
    let l_phi = alloc.l_phi();
    let tables: Vec<Vec<Complex64>> =
        l_phi.iter().map(|&b| (0..1usize << b).map(|g| psk_phasor(g, b)).collect()).collect();
    let mut p = vec![Complex64::new(1.0, 0.0); alloc.k()];
    let mut best = (f64::NEG_INFINITY, 0u64);
    for message in 0..n as u64 {
        let (amp, phases) = indices_from_message(alloc, message);
        for (k, &gk) in phases.iter().enumerate() {
            p[k] = tables[k][gk];
        }
        let value = g.quadratic_form(codebook.amplitudes().row(amp), &p);
        if value > best.0 {
            best = (value, message);
        }
    }
    let (amp, phases) = indices_from_message(alloc, best.1);
    DetectionOutcome::new(codebook, g, amp, phases, 1)
}

/// Amplitude row maximizing `Σ_ij u_i u_j Re{G_ij p_i p_j*}`; ties go to the smallest index.
pub fn detect_amplitude(g: &GramMatrix, p_tilde: &[Complex64], codebook: &Codebook) -> usize {
    let k = g.k();
    let mut a = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            a[i * k + j] = (g.get(i, j) * p_tilde[i] * p_tilde[j].conj()).re;
        }
    }
    argmax_rows(codebook, |u| {
        let mut acc = 0.0;
        for i in 0..k {
            let mut row = 0.0;
            for j in 0..k {
                row += a[i * k + j] * u[j];
            }
            acc += u[i] * row;
        }
        acc
    })
}

/// Phase-free amplitude statistic `Σ_k G_kk u_k^2`.
pub fn energy_amplitude(g: &GramMatrix, codebook: &Codebook) -> usize {
    argmax_rows(codebook, |u| u.iter().enumerate().map(|(k, x)| g.get(k, k).re * x * x).sum())
}

fn argmax_rows(codebook: &Codebook, score: impl Fn(&[f64]) -> f64) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (idx, u) in codebook.amplitudes().rows().iter().enumerate() {
        let s = score(u);
        if s > best.0 {
            best = (s, idx);
        }
    }
    best.1
}

/// Phase step used inside [`iuap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhaseAlgorithm {
    Pr,
    ImprovedPr,
    Exhaustive,
}

impl PhaseAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            PhaseAlgorithm::Pr => "pr",
            PhaseAlgorithm::ImprovedPr => "improved-pr",
            PhaseAlgorithm::Exhaustive => "exhaustive",
        }
    }

    pub fn detect(self, z: &GramMatrix, codebook: &Codebook) -> Result<Vec<usize>> {
        let alloc = codebook.alloc();
        match self {
            PhaseAlgorithm::Pr => Ok(pr_sort_dfdd(z, alloc)),
            PhaseAlgorithm::ImprovedPr => Ok(improved_pr_sort_dfdd(z, alloc)),
            PhaseAlgorithm::Exhaustive => exhaustive_phases(z, alloc),
        }
    }
}

impl fmt::Display for PhaseAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhaseAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pr" => Ok(PhaseAlgorithm::Pr),
            "improved-pr" => Ok(PhaseAlgorithm::ImprovedPr),
            "exhaustive" => Ok(PhaseAlgorithm::Exhaustive),
            other => Err(Error::Parse(format!("unknown phase algorithm '{other}'"))),
        }
    }
}

pub const DEFAULT_IUAP_ITERS: u32 = 10;

/// Alternating amplitude/phase detection.
///
/// Starts from the energy-detector amplitude, then repeats phase step and
/// amplitude step. An iteration is kept only if it strictly raises the
/// likelihood; the loop ends at the first non-improving iteration, when the
/// amplitude stops changing, or after `max_iters`.
pub fn iuap(g: &GramMatrix, codebook: &Codebook, alg: PhaseAlgorithm, max_iters: u32) -> Result<DetectionOutcome> {
    check_size(g, codebook)?;
    if max_iters == 0 {
        return invalid("max_iters must be at least 1");
    }
    let mut amp = energy_amplitude(g, codebook);
    let mut best: Option<(usize, Vec<usize>, f64)> = None;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let z = g.scaled(codebook.amplitudes().row(amp));
        let phases = alg.detect(&z, codebook)?;
        let next_amp = detect_amplitude(g, &phasors(codebook, &phases), codebook);
        let value = objective(g, codebook, next_amp, &phases);
        if let Some((_, _, prev)) = &best {
            if value <= *prev {
                break;
            }
        }
        best = Some((next_amp, phases, value));
        if next_amp == amp {
            break;
        }
        amp = next_amp;
    }
    let (amp, phases, _) = best.expect("at least one iteration runs");
    DetectionOutcome::new(codebook, g, amp, phases, iterations)
}
