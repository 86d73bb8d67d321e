//! Core domain types: bit allocations, amplitude sets, codebooks and unitary
//! signals, plus the bit labelling, chordal distance and Chernoff PEP bound.
//!
//! A constellation point is `v = u ∘ p` where `u` is one row of the amplitude
//! set and `p` carries one PSK phase per symbol. Symbol 0 is the phase
//! reference and never carries phase bits.
//!
//! Labelling: the first `l_u` message bits pick the amplitude row in natural
//! binary (MSB first); the following bits are consumed symbol by symbol in
//! ascending order, `l_phi[k]` bits each, and Gray-decoded into the PSK index.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::distance;
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;

/// Upper limit on constellation sizes that are enumerated point by point.
pub const MAX_ENUMERATED_POINTS: u128 = 1 << 20;

/// Largest message length supported by the integer labelling helpers.
pub const MAX_TOTAL_BITS: u32 = 48;

/// Split of the message bits between the amplitude index and the PSK symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitAllocation {
    l_u: u32,
    l_phi: Vec<u32>,
}

impl BitAllocation {
    /// Validates and builds an allocation. `l_phi.len()` is the blocklength.
    pub fn new(l_u: u32, l_phi: Vec<u32>) -> Result<Self> {
        if l_phi.len() < 2 {
            return invalid(format!("blocklength must be at least 2, got {}", l_phi.len()));
        }
        if l_phi[0] != 0 {
            return invalid("the reference symbol 0 cannot carry phase bits");
        }
        if l_phi.windows(2).any(|w| w[0] > w[1]) {
            return invalid(format!("phase bits must be non-decreasing, got {l_phi:?}"));
        }
        if l_phi.iter().any(|&b| b > 16) {
            return invalid("at most 16 phase bits per symbol are supported");
        }
        let total = l_u + l_phi.iter().sum::<u32>();
        if total == 0 {
            return invalid("an allocation must carry at least one bit");
        }
        if total > MAX_TOTAL_BITS {
            return invalid(format!("{total} bits exceeds the supported {MAX_TOTAL_BITS}"));
        }
        Ok(Self { l_u, l_phi })
    }

    /// Blocklength `K`.
    pub fn k(&self) -> usize {
        self.l_phi.len()
    }

    pub fn l_u(&self) -> u32 {
        self.l_u
    }

    pub fn l_phi(&self) -> &[u32] {
        &self.l_phi
    }

    pub fn phase_bits(&self) -> u32 {
        self.l_phi.iter().sum()
    }

    /// Total message bits `l_v`.
    pub fn total_bits(&self) -> u32 {
        self.l_u + self.phase_bits()
    }

    pub fn num_amplitudes(&self) -> usize {
        1usize << self.l_u
    }

    pub fn num_points(&self) -> u128 {
        1u128 << self.total_bits()
    }

    pub fn max_phase_bits(&self) -> u32 {
        self.l_phi.iter().copied().max().unwrap_or(0)
    }

    pub fn has_phase_bits(&self) -> bool {
        self.max_phase_bits() > 0
    }

    /// Indices of symbols that carry phase bits, ascending.
    pub fn phase_symbols(&self) -> Vec<usize> {
        (0..self.k()).filter(|&k| self.l_phi[k] > 0).collect()
    }

    /// Distinct non-zero phase-bit levels, ascending.
    pub fn levels(&self) -> Vec<u32> {
        let mut levels: Vec<u32> = self.l_phi.iter().copied().filter(|&b| b > 0).collect();
        levels.dedup();
        levels
    }

    /// True when every phase-carrying symbol uses the same PSK order.
    pub fn equal_orders(&self) -> bool {
        self.levels().len() <= 1
    }
}

impl std::fmt::Display for BitAllocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let phi: Vec<String> = self.l_phi.iter().map(|b| b.to_string()).collect();
        write!(f, "lu={} lphi={}", self.l_u, phi.join(","))
    }
}

/// The amplitude vectors of a codebook, stored renormalized to unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeSet {
    rows: Vec<Vec<f64>>,
}

impl AmplitudeSet {
    /// Accepts rows with `1 - epsilon_v <= ||u|| <= 1` (plus rounding slack)
    /// and non-negative entries, then rescales each row to unit norm.
    pub fn new(rows: Vec<Vec<f64>>, epsilon_v: f64) -> Result<Self> {
        let Some(first) = rows.first() else {
            return invalid("amplitude set needs at least one row");
        };
        let k = first.len();
        let mut out = Vec::with_capacity(rows.len());
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return invalid(format!("row {r} has length {}, expected {k}", row.len()));
            }
            if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return invalid(format!("row {r} has a negative or non-finite entry"));
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1.0 - epsilon_v - 1e-12 || norm > 1.0 + 1e-12 {
                return invalid(format!("row {r} has norm {norm}, outside [1-eps, 1]"));
            }
            // rows already unit to rounding are kept bit-for-bit so that
            // save/load cycles are stable
            if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
                out.push(row);
            } else {
                out.push(row.iter().map(|x| x / norm).collect());
            }
        }
        Ok(Self { rows: out })
    }

    /// Shorthand for rows that are already unit norm up to rounding.
    pub fn from_unit_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows, 1e-9)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.rows[index]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn k(&self) -> usize {
        self.rows[0].len()
    }
}

/// Bookkeeping recorded by the designer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignMetadata {
    pub seed: u64,
    pub restarts: u32,
    pub sca_iterations: u32,
}

/// A complete constellation: allocation plus amplitude set.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    alloc: BitAllocation,
    amplitudes: AmplitudeSet,
    achieved_mcd: f64,
    metadata: DesignMetadata,
}

impl Codebook {
    /// Builds a codebook and computes its MCD from scratch.
    pub fn new(
        alloc: BitAllocation,
        amplitudes: AmplitudeSet,
        metadata: DesignMetadata,
    ) -> Result<Self> {
        if amplitudes.len() != alloc.num_amplitudes() {
            return invalid(format!(
                "allocation needs {} amplitude rows, got {}",
                alloc.num_amplitudes(),
                amplitudes.len()
            ));
        }
        if amplitudes.k() != alloc.k() {
            return invalid(format!(
                "amplitude rows have length {}, allocation has K={}",
                amplitudes.k(),
                alloc.k()
            ));
        }
        let mut cb = Self { alloc, amplitudes, achieved_mcd: 0.0, metadata };
        cb.achieved_mcd = distance::mcd_decomposed(&cb);
        Ok(cb)
    }

    pub fn alloc(&self) -> &BitAllocation {
        &self.alloc
    }

    pub fn amplitudes(&self) -> &AmplitudeSet {
        &self.amplitudes
    }

    pub fn achieved_mcd(&self) -> f64 {
        self.achieved_mcd
    }

    pub fn metadata(&self) -> &DesignMetadata {
        &self.metadata
    }

    pub fn k(&self) -> usize {
        self.alloc.k()
    }

    pub fn total_bits(&self) -> u32 {
        self.alloc.total_bits()
    }

    /// Constellation point for explicit amplitude and PSK indices.
    pub fn signal(&self, amp_index: usize, phase_indices: &[usize]) -> Result<UnitarySignal> {
        check_indices(&self.alloc, amp_index, phase_indices)?;
        let u = self.amplitudes.row(amp_index);
        let entries = u
            .iter()
            .zip(phase_indices)
            .zip(self.alloc.l_phi())
            .map(|((&a, &g), &bits)| psk_phasor(g, bits) * a)
            .collect();
        Ok(UnitarySignal { entries })
    }
}

/// One transmitted block of `K` symbols with unit total energy.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitarySignal {
    entries: Vec<Complex64>,
}

impl UnitarySignal {
    /// Wraps a vector whose norm is 1 within `1e-9`.
    pub fn new(entries: Vec<Complex64>) -> Result<Self> {
        if entries.is_empty() {
            return invalid("signal must have at least one symbol");
        }
        let norm = entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return invalid(format!("signal norm {norm} is not 1"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `v_a^H v_b`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.entries.iter().zip(&other.entries).map(|(a, b)| a.conj() * b).sum()
    }
}

/// Message bits, MSB first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MessageBits(pub Vec<bool>);

impl MessageBits {
    pub fn from_u64(value: u64, len: u32) -> Self {
        Self((0..len).rev().map(|i| (value >> i) & 1 == 1).collect())
    }

    pub fn to_u64(&self) -> u64 {
        self.0.iter().fold(0, |acc, &b| (acc << 1) | b as u64)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn hamming(&self, other: &Self) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

pub fn gray_encode(index: usize) -> usize {
    index ^ (index >> 1)
}

pub fn gray_decode(word: usize) -> usize {
    let mut index = word;
    let mut shift = word >> 1;
    while shift != 0 {
        index ^= shift;
        shift >>= 1;
    }
    index
}

/// Angle of PSK point `index` in a `2^bits`-ary constellation.
pub fn psk_angle(index: usize, bits: u32) -> f64 {
    if bits == 0 {
        return 0.0;
    }
    2.0 * PI * index as f64 / (1u64 << bits) as f64
}

pub fn psk_phasor(index: usize, bits: u32) -> Complex64 {
    if bits == 0 || index == 0 {
        return Complex64::new(1.0, 0.0);
    }
    Complex64::from_polar(1.0, psk_angle(index, bits))
}

fn check_indices(alloc: &BitAllocation, amp_index: usize, phase_indices: &[usize]) -> Result<()> {
    if amp_index >= alloc.num_amplitudes() {
        return invalid(format!("amplitude index {amp_index} out of range"));
    }
    if phase_indices.len() != alloc.k() {
        return invalid(format!(
            "expected {} phase indices, got {}",
            alloc.k(),
            phase_indices.len()
        ));
    }
    for (k, (&g, &bits)) in phase_indices.iter().zip(alloc.l_phi()).enumerate() {
        if g >= 1usize << bits {
            return invalid(format!("phase index {g} out of range for symbol {k}"));
        }
    }
    Ok(())
}

/// Splits a message into amplitude and per-symbol PSK indices.
pub fn indices_from_bits(alloc: &BitAllocation, bits: &MessageBits) -> Result<(usize, Vec<usize>)> {
    if bits.len() != alloc.total_bits() as usize {
        return invalid(format!(
            "message has {} bits, allocation carries {}",
            bits.len(),
            alloc.total_bits()
        ));
    }
    let mut pos = 0usize;
    let mut take = |n: u32| {
        let word = bits.0[pos..pos + n as usize]
            .iter()
            .fold(0usize, |acc, &b| (acc << 1) | b as usize);
        pos += n as usize;
        word
    };
    let amp = take(alloc.l_u());
    let phases = alloc.l_phi().iter().map(|&n| gray_decode(take(n))).collect();
    Ok((amp, phases))
}

/// Same as [`indices_from_bits`] for a message given as an integer.
pub fn indices_from_message(alloc: &BitAllocation, message: u64) -> (usize, Vec<usize>) {
    let mut phases = vec![0usize; alloc.k()];
    let mut rest = message;
    for (k, &n) in alloc.l_phi().iter().enumerate().rev() {
        let word = (rest & ((1u64 << n) - 1)) as usize;
        phases[k] = gray_decode(word);
        rest >>= n;
    }
    (rest as usize, phases)
}

/// Inverse of [`indices_from_message`].
pub fn message_from_indices(alloc: &BitAllocation, amp_index: usize, phase_indices: &[usize]) -> u64 {
    let mut message = amp_index as u64;
    for (&g, &n) in phase_indices.iter().zip(alloc.l_phi()) {
        message = (message << n) | gray_encode(g) as u64;
    }
    message
}

/// Maps message bits to the transmitted unitary signal.
pub fn encode(codebook: &Codebook, bits: &MessageBits) -> Result<UnitarySignal> {
    let (amp, phases) = indices_from_bits(codebook.alloc(), bits)?;
    codebook.signal(amp, &phases)
}

/// Inverse of the labelling used by [`encode`].
pub fn decode_indices_to_bits(
    codebook: &Codebook,
    amp_index: usize,
    phase_indices: &[usize],
) -> Result<MessageBits> {
    let alloc = codebook.alloc();
    check_indices(alloc, amp_index, phase_indices)?;
    Ok(MessageBits::from_u64(
        message_from_indices(alloc, amp_index, phase_indices),
        alloc.total_bits(),
    ))
}

/// `sqrt(1 - |v_a^H v_b|^2)`, with the radicand clamped at zero.
pub fn chordal_distance(a: &UnitarySignal, b: &UnitarySignal) -> Result<f64> {
    if a.k() != b.k() {
        return invalid(format!("signal lengths differ: {} vs {}", a.k(), b.k()));
    }
    Ok(chordal_from_inner(a.inner(b).norm_sqr()))
}

pub(crate) fn chordal_from_inner(inner_sq: f64) -> f64 {
    (1.0 - inner_sq).max(0.0).sqrt()
}

/// Closest pair found by full enumeration: `(message_a, message_b, distance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPair {
    pub message_a: u64,
    pub message_b: u64,
    pub distance: f64,
}

/// Enumerates every unordered pair of points and returns the closest.
pub fn closest_pair_bruteforce(codebook: &Codebook, exec: Execution) -> Result<ClosestPair> {
    let n = codebook.alloc().num_points();
    if n > MAX_ENUMERATED_POINTS {
        return Err(Error::Capacity { what: "constellation points", needed: n, limit: MAX_ENUMERATED_POINTS });
    }
    let n = n as usize;
    let points: Vec<Vec<Complex64>> = (0..n as u64)
        .map(|m| {
            let (amp, phases) = indices_from_message(codebook.alloc(), m);
            codebook.signal(amp, &phases).map(|s| s.entries)
        })
        .collect::<Result<_>>()?;
    let per_row = exec.map(0..n, |i| {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in i + 1..n {
            let inner: Complex64 = points[i].iter().zip(&points[j]).map(|(a, b)| a.conj() * b).sum();
            let d = chordal_from_inner(inner.norm_sqr());
            if d < best.0 {
                best = (d, j);
            }
        }
        best
    });
    let (i, (d, j)) = per_row
        .into_iter()
        .enumerate()
        .fold((0, (f64::INFINITY, usize::MAX)), |acc, (i, cur)| if cur.0 < acc.1 .0 { (i, cur) } else { acc });
    if j == usize::MAX {
        return invalid("constellation has a single point");
    }
    Ok(ClosestPair { message_a: i as u64, message_b: j as u64, distance: d })
}

/// Minimum chordal distance by exhaustive pairwise enumeration.
pub fn mcd_bruteforce(codebook: &Codebook) -> Result<f64> {
    closest_pair_bruteforce(codebook, Execution::default()).map(|p| p.distance)
}

/// Chernoff bound on the ML pairwise error probability between two unitary
/// signals at chordal distance `d`.
pub fn pep_chernoff_bound(d: f64, sigma2: f64, antennas: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&d) {
        return invalid(format!("distance {d} outside [0, 1]"));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return invalid(format!("noise variance must be positive, got {sigma2}"));
    }
    if antennas == 0 {
        return invalid("at least one receive antenna is required");
    }
    let base = 1.0 + d * d / (4.0 * sigma2 * (1.0 + sigma2));
    Ok(0.5 * base.powf(-(antennas as f64)))
}
