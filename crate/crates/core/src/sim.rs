//! Monte Carlo link simulation of `Y = h v^T + N`.
//!
//! Trial `t` at grid point `s` draws all of its randomness (message, channel,
//! noise) from a ChaCha8 stream keyed by `(seed, s)` with stream id `t`. Every
//! detector therefore sees the same blocks, and counts do not depend on how
//! trials are scheduled across threads.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::constellation::{encode, Codebook, MessageBits, UnitarySignal};
use crate::detect::{gram, iuap, ml_exhaustive, DetectionOutcome, PhaseAlgorithm, ReceivedBlock, DEFAULT_IUAP_ITERS};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;

/// Trials evaluated between checks of the stopping rule.
pub const BATCH_SIZE: u64 = 256;
const TRIAL_CHUNK: usize = 16;

const WILSON_Z: f64 = 1.959964;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Detector {
    Ml,
    Iuap(PhaseAlgorithm),
}

impl Detector {
    pub const ALL: [Detector; 4] = [
        Detector::Ml,
        Detector::Iuap(PhaseAlgorithm::Pr),
        Detector::Iuap(PhaseAlgorithm::ImprovedPr),
        Detector::Iuap(PhaseAlgorithm::Exhaustive),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Detector::Ml => "ml",
            Detector::Iuap(PhaseAlgorithm::Pr) => "iuap-pr",
            Detector::Iuap(PhaseAlgorithm::ImprovedPr) => "iuap-improved-pr",
            Detector::Iuap(PhaseAlgorithm::Exhaustive) => "iuap-exhaustive-phase",
        }
    }

    pub fn detect(self, block: &ReceivedBlock, codebook: &Codebook, iuap_max_iters: u32) -> Result<DetectionOutcome> {
        let g = gram(block);
        match self {
            Detector::Ml => ml_exhaustive(&g, codebook),
            Detector::Iuap(alg) => iuap(&g, codebook, alg, iuap_max_iters),
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Detector::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown detector '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub antennas: usize,
    pub snr_grid_db: Vec<f64>,
    pub detector: Detector,
    pub min_block_errors: u64,
    pub max_trials_per_point: u64,
    pub seed: u64,
    pub iuap_max_iters: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            antennas: 1,
            snr_grid_db: vec![10.0],
            detector: Detector::Ml,
            min_block_errors: 200,
            max_trials_per_point: 10_000_000,
            seed: 0,
            iuap_max_iters: DEFAULT_IUAP_ITERS,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 {
            return invalid("at least one receive antenna is required");
        }
        if self.snr_grid_db.is_empty() {
            return invalid("SNR grid is empty");
        }
        if let Some(bad) = self.snr_grid_db.iter().find(|s| !s.is_finite()) {
            return invalid(format!("SNR value {bad} is not finite"));
        }
        if self.min_block_errors == 0 {
            return invalid("min_block_errors must be at least 1");
        }
        if self.max_trials_per_point == 0 {
            return invalid("max_trials_per_point must be at least 1");
        }
        if self.iuap_max_iters == 0 {
            return invalid("iuap_max_iters must be at least 1");
        }
        Ok(())
    }
}

/// Per-entry noise variance for a unit-energy block: `σ² = 10^{-snr_db/10}`.
pub fn sigma2_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

fn complex_normal(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// `h ~ CN(0, I_M)`.
pub fn sample_channel(antennas: usize, rng: &mut impl Rng) -> Vec<Complex64> {
    (0..antennas).map(|_| complex_normal(rng, 1.0)).collect()
}

/// `Y = h v^T + N` with `N` entries `CN(0, sigma2)`.
pub fn transmit(v: &UnitarySignal, h: &[Complex64], sigma2: f64, rng: &mut impl Rng) -> Result<ReceivedBlock> {
    if !(sigma2 >= 0.0) {
        return invalid(format!("noise variance must be non-negative, got {sigma2}"));
    }
    let e = v.entries();
    let mut y = DMatrix::from_fn(h.len(), e.len(), |r, c| h[r] * e[c]);
    if sigma2 > 0.0 {
        // column-major fill keeps the draw order fixed
        for c in 0..e.len() {
            for r in 0..h.len() {
                y[(r, c)] += complex_normal(rng, sigma2);
            }
        }
    }
    ReceivedBlock::new(y)
}

/// RNG for one trial.
pub fn trial_rng(seed: u64, snr_index: usize, trial: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(snr_index as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(trial);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct TrialOutcome {
    block_error: bool,
    bit_errors: u32,
}

fn run_trial(codebook: &Codebook, cfg: &SimConfig, snr_index: usize, sigma2: f64, trial: u64) -> Result<TrialOutcome> {
    let mut rng = trial_rng(cfg.seed, snr_index, trial);
    let l_v = codebook.total_bits();
    let message = if l_v == 64 { rng.random::<u64>() } else { rng.random_range(0..1u64 << l_v) };
    let bits = MessageBits::from_u64(message, l_v);
    let v = encode(codebook, &bits)?;
    let h = sample_channel(cfg.antennas, &mut rng);
    let y = transmit(&v, &h, sigma2, &mut rng)?;
    let out = cfg.detector.detect(&y, codebook, cfg.iuap_max_iters)?;
    let bit_errors = out.bits.hamming(&bits) as u32;
    Ok(TrialOutcome { block_error: bit_errors > 0, bit_errors })
}

/// Counts for one SNR point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub snr_db: f64,
    pub trials: u64,
    pub block_errors: u64,
    pub bit_errors: u64,
    pub bler: f64,
    pub ber: f64,
    pub bler_ci95: (f64, f64),
    pub wall_time: f64,
}

/// Wilson score interval for `errors / trials` at 95% confidence.
pub fn wilson_interval(errors: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn run_point(codebook: &Codebook, cfg: &SimConfig, snr_index: usize) -> Result<PointResult> {
    run_point_with(codebook, cfg, snr_index, Execution::default())
}

/// Simulates grid point `snr_index`, checking the stopping rule after every
/// batch of [`BATCH_SIZE`] trials.
pub fn run_point_with(codebook: &Codebook, cfg: &SimConfig, snr_index: usize, exec: Execution) -> Result<PointResult> {
    cfg.validate()?;
    let Some(&snr_db) = cfg.snr_grid_db.get(snr_index) else {
        return invalid(format!("SNR index {snr_index} outside the grid"));
    };
    let sigma2 = sigma2_from_snr_db(snr_db);
    let start = Instant::now();
    let (mut trials, mut block_errors, mut bit_errors) = (0u64, 0u64, 0u64);
    while trials < cfg.max_trials_per_point && block_errors < cfg.min_block_errors {
        let batch = BATCH_SIZE.min(cfg.max_trials_per_point - trials);
        let first = trials;
        let outcomes = exec.map_chunked(0..batch as usize, TRIAL_CHUNK, |i| run_trial(codebook, cfg, snr_index, sigma2, first + i as u64));
        for o in outcomes {
            let o = o?;
            block_errors += o.block_error as u64;
            bit_errors += o.bit_errors as u64;
        }
        trials += batch;
    }
    let l_v = codebook.total_bits() as f64;
    Ok(PointResult {
        snr_db,
        trials,
        block_errors,
        bit_errors,
        bler: block_errors as f64 / trials as f64,
        ber: bit_errors as f64 / (trials as f64 * l_v),
        bler_ci95: wilson_interval(block_errors, trials),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub detector: Detector,
    pub antennas: usize,
    pub points: Vec<PointResult>,
}

/// A sweep that stopped early, with the points finished before the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepFailure {
    pub error: Error,
    pub partial: SimResult,
}

impl fmt::Display for SweepFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sweep failed after {} points: {}", self.partial.points.len(), self.error)
    }
}

impl std::error::Error for SweepFailure {}

pub fn run_sweep(codebook: &Codebook, cfg: &SimConfig) -> std::result::Result<SimResult, SweepFailure> {
    run_sweep_with(codebook, cfg, Execution::default())
}

pub fn run_sweep_with(
    codebook: &Codebook,
    cfg: &SimConfig,
    exec: Execution,
) -> std::result::Result<SimResult, SweepFailure> {
    let mut result = SimResult { detector: cfg.detector, antennas: cfg.antennas, points: Vec::new() };
    for idx in 0..cfg.snr_grid_db.len().max(1) {
        match run_point_with(codebook, cfg, idx, exec) {
            Ok(p) => result.points.push(p),
            Err(error) => return Err(SweepFailure { error, partial: result }),
        }
    }
    Ok(result)
}

/// Fraction of blocks carrying `v_a` for which `v_b` scores higher under the
/// likelihood statistic; ties count one half.
pub fn pep_empirical(
    v_a: &UnitarySignal,
    v_b: &UnitarySignal,
    antennas: usize,
    sigma2: f64,
    trials: u64,
    seed: u64,
) -> Result<f64> {
    if v_a.k() != v_b.k() {
        return invalid("signals have different lengths");
    }
    if crate::constellation::chordal_distance(v_a, v_b)? <= 1e-12 {
        return invalid("signals are at chordal distance zero");
    }
    if antennas == 0 || trials == 0 {
        return invalid("antennas and trials must be positive");
    }
    let ones = vec![1.0; v_a.k()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut score = 0.0;
    for _ in 0..trials {
        let h = sample_channel(antennas, &mut rng);
        let y = transmit(v_a, &h, sigma2, &mut rng)?;
        let g = gram(&y);
        let sa = g.quadratic_form(&ones, v_a.entries());
        let sb = g.quadratic_form(&ones, v_b.entries());
        if sb > sa {
            score += 1.0;
        } else if sb == sa {
            score += 0.5;
        }
    }
    Ok(score / trials as f64)
}
