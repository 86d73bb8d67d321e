//! Runs the bit-allocation search for K = 3 and K = 4 over 1..=6 bits.

use std::time::Instant;

use ucon::designer::{search_bit_allocations, DesignConfig};

fn main() {
    let cfg = DesignConfig::default();
    for k in [3usize, 4] {
        for l_v in 1..=6 {
            let start = Instant::now();
            let ranked = search_bit_allocations(k, l_v, &cfg).expect("search failed");
            let summary: Vec<String> = ranked
                .iter()
                .take(3)
                .map(|r| format!("({}) {:.6}", r.alloc, r.achieved_mcd()))
                .collect();
            println!(
                "K={k} l_v={l_v} evaluated={} {:.1}s  {}",
                ranked.len(),
                start.elapsed().as_secs_f64(),
                summary.join(" | ")
            );
        }
    }
}
