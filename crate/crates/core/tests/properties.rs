use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use ucon::constellation::{
    chordal_distance, decode_indices_to_bits, encode, indices_from_bits, indices_from_message, message_from_indices,
    pep_chernoff_bound,
};
use ucon::detect::{
    gram, improved_pr_sort_dfdd, iuap, ml_exhaustive, mu, pr_sort_dfdd, psk_decision, PhaseAlgorithm, ReceivedBlock,
};
use ucon::distance::{mcd_decomposed, mcd_upper_bound, phase_mcd_bruteforce, phase_mcd_closed_form};
use ucon::sim::wilson_interval;
use ucon::{AmplitudeSet, BitAllocation, Codebook, DesignMetadata, MessageBits};

fn l_phi_strategy(k: usize, max_bits: u32) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0..=max_bits, k - 1).prop_map(|mut v| {
        v.sort_unstable();
        let mut out = vec![0];
        out.extend(v);
        out
    })
}

fn alloc_strategy() -> impl Strategy<Value = BitAllocation> {
    (2usize..=4)
        .prop_flat_map(|k| (0u32..=2, l_phi_strategy(k, 3)))
        .prop_filter_map("needs at least one bit", |(l_u, l_phi)| BitAllocation::new(l_u, l_phi).ok())
}

fn unit_row(raw: Vec<f64>) -> Vec<f64> {
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    raw.iter().map(|x| x / n).collect()
}

fn codebook_strategy() -> impl Strategy<Value = Codebook> {
    alloc_strategy().prop_flat_map(|alloc| {
        let rows = alloc.num_amplitudes();
        let k = alloc.k();
        prop::collection::vec(prop::collection::vec(0.05f64..1.0, k), rows).prop_map(move |raw| {
            let rows = raw.into_iter().map(unit_row).collect();
            Codebook::new(alloc.clone(), AmplitudeSet::from_unit_rows(rows).unwrap(), DesignMetadata::default()).unwrap()
        })
    })
}

fn complex_matrix(m: usize, k: usize, vals: &[(f64, f64)]) -> DMatrix<Complex64> {
    DMatrix::from_fn(m, k, |r, c| {
        let (re, im) = vals[r * k + c];
        Complex64::new(re, im)
    })
}

fn block_strategy(k: usize) -> impl Strategy<Value = DMatrix<Complex64>> {
    (1usize..=3).prop_flat_map(move |m| {
        prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), m * k).prop_map(move |v| complex_matrix(m, k, &v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn labelling_round_trips(cb in codebook_strategy(), seed in any::<u64>()) {
        let alloc = cb.alloc();
        let message = seed % alloc.num_points() as u64;
        let bits = MessageBits::from_u64(message, alloc.total_bits());
        let (amp, phases) = indices_from_bits(alloc, &bits).unwrap();
        prop_assert_eq!((amp, phases.clone()), indices_from_message(alloc, message));
        prop_assert_eq!(message_from_indices(alloc, amp, &phases), message);
        prop_assert_eq!(decode_indices_to_bits(&cb, amp, &phases).unwrap(), bits.clone());
        let v = encode(&cb, &bits).unwrap();
        prop_assert!((v.norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn chordal_distance_is_symmetric_and_bounded(cb in codebook_strategy(), a in any::<u64>(), b in any::<u64>()) {
        let n = cb.alloc().num_points() as u64;
        let sig = |m: u64| {
            let (amp, ph) = indices_from_message(cb.alloc(), m % n);
            cb.signal(amp, &ph).unwrap()
        };
        let (va, vb) = (sig(a), sig(b));
        let dab = chordal_distance(&va, &vb).unwrap();
        let dba = chordal_distance(&vb, &va).unwrap();
        prop_assert!((dab - dba).abs() <= 1e-15);
        prop_assert!((0.0..=1.0).contains(&dab));
        prop_assert!(chordal_distance(&va, &va).unwrap() <= 1e-7);
    }

    #[test]
    fn closed_form_matches_enumeration(k in 2usize..=4, raw in prop::collection::vec(0.0f64..1.0, 4), seed in 0usize..1000) {
        let mut l_phi = vec![0u32];
        let mut rest: Vec<u32> = (1..k).map(|i| ((seed >> (2 * i)) % 4) as u32).collect();
        rest.sort_unstable();
        l_phi.extend(rest);
        prop_assume!(l_phi.iter().any(|&b| b > 0));
        prop_assume!(raw[..k].iter().any(|&x| x > 0.0));
        let u = unit_row(raw[..k].to_vec());
        let alloc = BitAllocation::new(0, l_phi).unwrap();
        let cf = phase_mcd_closed_form(&u, &alloc).unwrap();
        let bf = phase_mcd_bruteforce(&u, &alloc).unwrap();
        prop_assert!((cf - bf).abs() <= 1e-10, "{} vs {}", cf, bf);
    }

    #[test]
    fn any_codebook_respects_upper_bound(cb in codebook_strategy()) {
        prop_assert!(mcd_decomposed(&cb) <= mcd_upper_bound(cb.alloc()) + 1e-12);
    }

    #[test]
    fn chernoff_bound_decreases_with_distance(d1 in 0.0f64..1.0, d2 in 0.0f64..1.0, s2 in 0.01f64..10.0, m in 1u32..8) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let b_lo = pep_chernoff_bound(lo, s2, m).unwrap();
        let b_hi = pep_chernoff_bound(hi, s2, m).unwrap();
        prop_assert!(b_hi <= b_lo && b_lo <= 0.5);
    }

    #[test]
    fn gram_is_hermitian_and_statistic_matches(y in block_strategy(3), ph in prop::collection::vec(0.0f64..6.3, 3), raw in prop::collection::vec(0.05f64..1.0, 3)) {
        let g = gram(&ReceivedBlock::new(y.clone()).unwrap());
        for i in 0..3 {
            prop_assert_eq!(g.get(i, i).im, 0.0);
            for j in 0..3 {
                prop_assert!((g.get(i, j) - g.get(j, i).conj()).norm() <= 1e-12);
            }
        }
        let u = unit_row(raw);
        let p: Vec<Complex64> = ph.iter().map(|&a| Complex64::from_polar(1.0, a)).collect();
        let direct: f64 = (0..y.nrows())
            .map(|r| (0..3).map(|c| y[(r, c)] * (p[c] * u[c]).conj()).sum::<Complex64>().norm_sqr())
            .sum();
        prop_assert!((g.quadratic_form(&u, &p) - direct).abs() <= 1e-9);
    }

    #[test]
    fn psk_decision_reliability_non_negative(re in -3.0f64..3.0, im in -3.0f64..3.0, bits in 1u32..6) {
        let m = Complex64::new(re, im);
        let (g, c) = psk_decision(m, bits);
        let n = 1usize << bits;
        prop_assert!(g < n && c < n && g != c);
        let metric = |i: usize| (m * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * i as f64 / n as f64)).re;
        prop_assert!(metric(g) - metric(c) >= -1e-12);
        for i in 0..n {
            prop_assert!(metric(g) >= metric(i) - 1e-12);
        }
    }

    #[test]
    fn mu_is_additive(y in block_strategy(4), phis in prop::collection::vec(0.0f64..6.3, 3)) {
        let z = gram(&ReceivedBlock::new(y).unwrap());
        let det: Vec<(usize, f64)> = phis.iter().copied().enumerate().collect();
        let full = mu(&z, &det, 3).unwrap();
        let split = mu(&z, &det[..1], 3).unwrap() + mu(&z, &det[1..], 3).unwrap();
        prop_assert!((full - split).norm() <= 1e-12);
    }

    #[test]
    fn improved_reduces_for_equal_orders(y in block_strategy(4), zeros in 0usize..3, bits in 1u32..4) {
        let mut l_phi = vec![0u32; 4];
        for b in l_phi.iter_mut().skip(zeros + 1) {
            *b = bits;
        }
        let alloc = BitAllocation::new(0, l_phi).unwrap();
        let z = gram(&ReceivedBlock::new(y).unwrap());
        prop_assert_eq!(improved_pr_sort_dfdd(&z, &alloc), pr_sort_dfdd(&z, &alloc));
    }

    #[test]
    fn detectors_are_scale_invariant(cb in codebook_strategy(), y in block_strategy(4), scale in 0.1f64..10.0, rot in 0.0f64..6.3) {
        prop_assume!(cb.k() == 4);
        let c = Complex64::from_polar(scale, rot);
        let g1 = gram(&ReceivedBlock::new(y.clone()).unwrap());
        let g2 = gram(&ReceivedBlock::new(y.map(|s| s * c)).unwrap());
        let a = ml_exhaustive(&g1, &cb).unwrap();
        let b = ml_exhaustive(&g2, &cb).unwrap();
        prop_assert_eq!(a.bits, b.bits);
        for alg in [PhaseAlgorithm::Pr, PhaseAlgorithm::ImprovedPr] {
            let a = iuap(&g1, &cb, alg, 10).unwrap();
            let b = iuap(&g2, &cb, alg, 10).unwrap();
            prop_assert_eq!(a.bits, b.bits);
        }
    }

    #[test]
    fn iuap_never_beats_ml(cb in codebook_strategy(), seed in any::<u64>()) {
        let k = cb.k();
        let mut vals = Vec::new();
        let mut s = seed;
        for _ in 0..2 * k {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            vals.push((((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5, (((s >> 7) % 1000) as f64 / 500.0) - 1.0));
        }
        let g = gram(&ReceivedBlock::new(complex_matrix(2, k, &vals)).unwrap());
        let ml = ml_exhaustive(&g, &cb).unwrap();
        for alg in [PhaseAlgorithm::Pr, PhaseAlgorithm::ImprovedPr, PhaseAlgorithm::Exhaustive] {
            let out = iuap(&g, &cb, alg, 10).unwrap();
            prop_assert!(out.objective <= ml.objective + 1e-12);
            prop_assert!(out.iterations >= 1 && out.iterations <= 10);
        }
    }

    #[test]
    fn wilson_interval_brackets_estimate(trials in 1u64..100_000, frac in 0.0f64..=1.0) {
        let errors = (trials as f64 * frac).floor() as u64;
        let (lo, hi) = wilson_interval(errors, trials);
        let p = errors as f64 / trials as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
    }
}
