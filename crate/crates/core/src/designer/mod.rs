//! Amplitude-set design by successive convex approximation, and the
//! bit-allocation search built on top of it.

mod search;
mod subproblem;

pub use search::{enumerate_allocations, search_bit_allocations, RankedAllocation};
pub use subproblem::{
    build_subproblem, cap_rhs, solve_subproblem, CapConstraint, ConvexSubproblem, PairConstraint,
    SubproblemSolution,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::constellation::{AmplitudeSet, BitAllocation, Codebook, DesignMetadata};
use crate::distance::{amplitude_pair_distance, mcd_of_rows};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;

/// Largest amplitude set the designer accepts.
pub const MAX_AMPLITUDE_BITS: u32 = 8;

/// Rows closer than this in amplitude distance make a restart degenerate.
const DEGENERATE_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignConfig {
    /// Norm slack: rows live in `1 - epsilon_v <= |u|^2 <= 1` while solving.
    pub epsilon_v: f64,
    pub sca_tol: f64,
    pub sca_max_iters: u32,
    pub restarts: u32,
    pub subproblem_violation_tol: f64,
    /// Barrier duality-gap target per subproblem.
    pub subproblem_gap_tol: f64,
    /// Achieved MCDs closer than this count as equal when ranking allocations.
    pub tie_tolerance: f64,
    pub seed: u64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            epsilon_v: 1e-4,
            sca_tol: 1e-6,
            sca_max_iters: 100,
            restarts: 16,
            subproblem_violation_tol: 1e-8,
            subproblem_gap_tol: 1e-8,
            tie_tolerance: 1e-3,
            seed: 0,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        let tols = [
            ("epsilon_v", self.epsilon_v),
            ("sca_tol", self.sca_tol),
            ("subproblem_violation_tol", self.subproblem_violation_tol),
            ("subproblem_gap_tol", self.subproblem_gap_tol),
        ];
        for (name, v) in tols {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        if self.epsilon_v >= 0.5 {
            return invalid(format!("epsilon_v too large: {}", self.epsilon_v));
        }
        if !(self.tie_tolerance >= 0.0) {
            return invalid("tie_tolerance must be non-negative");
        }
        if self.restarts == 0 {
            return invalid("restarts must be at least 1");
        }
        if self.sca_max_iters == 0 {
            return invalid("sca_max_iters must be at least 1");
        }
        Ok(())
    }
}

/// Result of one SCA restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub restart: u32,
    /// Best rows seen, renormalized to unit norm.
    pub rows: Vec<Vec<f64>>,
    pub mcd: f64,
    pub iterations: u32,
    /// Subproblem value after each SCA iteration.
    pub t_history: Vec<f64>,
    pub failure: Option<String>,
}

impl RestartOutcome {
    pub fn is_usable(&self) -> bool {
        self.failure.is_none()
    }
}

fn normalize(row: &[f64]) -> Vec<f64> {
    let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    row.iter().map(|x| x / n).collect()
}

/// Random non-negative unit rows for restart `restart`.
pub fn initial_rows(alloc: &BitAllocation, seed: u64, restart: u32) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    (0..alloc.num_amplitudes())
        .map(|_| {
            loop {
                let row: Vec<f64> =
                    (0..alloc.k()).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect();
                if row.iter().any(|&x| x > 0.0) {
                    break normalize(&row);
                }
            }
        })
        .collect()
}

fn min_pair_distance(rows: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for (a, ua) in rows.iter().enumerate() {
        for ub in &rows[a + 1..] {
            best = best.min(amplitude_pair_distance(ua, ub).unwrap_or(0.0));
        }
    }
    best
}

/// Runs one SCA restart to convergence.
pub fn run_restart(alloc: &BitAllocation, cfg: &DesignConfig, restart: u32) -> RestartOutcome {
    let mut lin = initial_rows(alloc, cfg.seed, restart);
    let mut best_rows = lin.clone();
    let mut best_mcd = mcd_of_rows(&lin, alloc);
    let mut t_history = Vec::new();
    let mut failure = None;
    let mut solved_any = false;
    let mut prev_t = f64::NEG_INFINITY;
    let mut iterations = 0;

    while iterations < cfg.sca_max_iters {
        let sol = build_subproblem(&lin, alloc, cfg).and_then(|sp| sp.solve(cfg));
        iterations += 1;
        let sol = match sol {
            Ok(s) => s,
            Err(e) => {
                if !solved_any {
                    failure = Some(e.to_string());
                }
                break;
            }
        };
        solved_any = true;
        let renormalized: Vec<Vec<f64>> = sol.rows.iter().map(|r| normalize(r)).collect();
        let mcd = mcd_of_rows(&renormalized, alloc);
        if mcd > best_mcd {
            best_mcd = mcd;
            best_rows = renormalized;
        }
        t_history.push(sol.t);
        let done = (sol.t - prev_t).abs() < cfg.sca_tol;
        prev_t = sol.t;
        lin = sol.rows;
        if done {
            break;
        }
    }

    if failure.is_none() && min_pair_distance(&best_rows) < DEGENERATE_DISTANCE {
        failure = Some("amplitude rows collapsed onto each other".into());
    }
    RestartOutcome { restart, rows: best_rows, mcd: best_mcd, iterations, t_history, failure }
}

/// Designs the amplitude set for `alloc` with the default execution strategy.
pub fn design_amplitude_set(alloc: &BitAllocation, cfg: &DesignConfig) -> Result<Codebook> {
    design_amplitude_set_with(alloc, cfg, Execution::default())
}

pub fn design_amplitude_set_with(
    alloc: &BitAllocation,
    cfg: &DesignConfig,
    exec: Execution,
) -> Result<Codebook> {
    cfg.validate()?;
    if alloc.l_u() > MAX_AMPLITUDE_BITS {
        return Err(Error::Capacity {
            what: "amplitude rows",
            needed: 1u128 << alloc.l_u(),
            limit: 1u128 << MAX_AMPLITUDE_BITS,
        });
    }
    let outcomes = exec.map(0..cfg.restarts as usize, |r| run_restart(alloc, cfg, r as u32));

    let mut best: Option<&RestartOutcome> = None;
    for o in outcomes.iter().filter(|o| o.is_usable()) {
        if best.is_none_or(|b| o.mcd > b.mcd) {
            best = Some(o);
        }
    }
    let Some(best) = best else {
        let reasons: Vec<String> = outcomes
            .iter()
            .map(|o| format!("restart {}: {}", o.restart, o.failure.as_deref().unwrap_or("?")))
            .collect();
        return Err(Error::DesignFailure(format!(
            "all {} restarts failed for {alloc}: {}",
            cfg.restarts,
            reasons.join("; ")
        )));
    };
    let amplitudes = AmplitudeSet::from_unit_rows(best.rows.clone())?;
    let metadata =
        DesignMetadata { seed: cfg.seed, restarts: cfg.restarts, sca_iterations: best.iterations };
    Codebook::new(alloc.clone(), amplitudes, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::mcd_bruteforce;
    use crate::distance::{mcd_decomposed, mcd_upper_bound, phase_mcd_closed_form};
    use approx::assert_abs_diff_eq;

    fn alloc(l_u: u32, l_phi: &[u32]) -> BitAllocation {
        BitAllocation::new(l_u, l_phi.to_vec()).unwrap()
    }

    fn quick() -> DesignConfig {
        DesignConfig { restarts: 4, seed: 11, ..DesignConfig::default() }
    }

    /// Best phase MCD over a fine grid of the positive 2-simplex.
    fn simplex_grid_max(a: &BitAllocation, steps: usize) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let w = [i as f64, j as f64, (steps - i - j) as f64];
                let u: Vec<f64> = w.iter().map(|x| (x / steps as f64).sqrt()).collect();
                best = best.max(phase_mcd_closed_form(&u, a).unwrap());
            }
        }
        best
    }

    #[test]
    fn config_validation() {
        assert!(DesignConfig::default().validate().is_ok());
        assert!(DesignConfig { restarts: 0, ..DesignConfig::default() }.validate().is_err());
        assert!(DesignConfig { sca_tol: 0.0, ..DesignConfig::default() }.validate().is_err());
        assert!(DesignConfig { epsilon_v: -1.0, ..DesignConfig::default() }.validate().is_err());
    }

    #[test]
    fn initial_rows_are_reproducible_unit_and_non_negative() {
        let a = alloc(2, &[0, 1, 1]);
        let r1 = initial_rows(&a, 5, 3);
        assert_eq!(r1, initial_rows(&a, 5, 3));
        assert_ne!(r1, initial_rows(&a, 5, 4));
        for row in &r1 {
            assert!(row.iter().all(|&x| x >= 0.0));
            assert_abs_diff_eq!(row.iter().map(|x| x * x).sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn k2_bpsk_reaches_one() {
        let cb = design_amplitude_set(&alloc(0, &[0, 1]), &quick()).unwrap();
        assert_abs_diff_eq!(cb.achieved_mcd(), 1.0, epsilon = 1e-4);
    }

    #[test]
    fn k3_qpsk_beats_grid_oracle() {
        let a = alloc(0, &[0, 2, 2]);
        let grid = simplex_grid_max(&a, 300);
        assert!(grid > 0.6 && grid <= std::f64::consts::FRAC_1_SQRT_2 + 1e-5);
        let cb = design_amplitude_set(&a, &quick()).unwrap();
        assert!(cb.achieved_mcd() >= 0.6);
        assert!(cb.achieved_mcd() >= grid - 1e-3, "{} vs grid {grid}", cb.achieved_mcd());
        assert!(cb.achieved_mcd() <= mcd_upper_bound(&a) + 1e-12);
    }

    #[test]
    fn designed_codebook_is_consistent() {
        let a = alloc(1, &[0, 1, 2]);
        let cb = design_amplitude_set(&a, &quick()).unwrap();
        for row in cb.amplitudes().rows() {
            assert!(row.iter().all(|&x| x >= 0.0));
        }
        assert_abs_diff_eq!(cb.achieved_mcd(), mcd_decomposed(&cb), epsilon = 1e-12);
        assert_abs_diff_eq!(cb.achieved_mcd(), mcd_bruteforce(&cb).unwrap(), epsilon = 1e-6);
        assert!(cb.achieved_mcd() <= mcd_upper_bound(&a) + 1e-12);
    }

    #[test]
    fn sca_value_is_non_decreasing() {
        let a = alloc(2, &[0, 1, 1]);
        let cfg = quick();
        for r in 0..3 {
            let out = run_restart(&a, &cfg, r);
            assert!(out.is_usable());
            for w in out.t_history.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "{:?}", out.t_history);
            }
        }
    }

    #[test]
    fn design_is_deterministic_across_strategies() {
        let a = alloc(1, &[0, 1, 1]);
        let cfg = quick();
        let seq = design_amplitude_set_with(&a, &cfg, Execution::Sequential).unwrap();
        let par = design_amplitude_set_with(&a, &cfg, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn rejects_oversized_amplitude_sets() {
        let a = alloc(9, &[0, 0, 1]);
        assert!(matches!(design_amplitude_set(&a, &quick()), Err(Error::Capacity { .. })));
    }
}
