//! Stable per-trial seed derivation.
//!
//! Seeds are a pure function of `(master, cell, trial)` so that experiments
//! give identical results regardless of execution order or thread count.

/// SplitMix64 output function.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, cell: u64, trial: u64) -> u64 {
    mix(mix(mix(master) ^ cell) ^ trial)
}

/// A sub-stream seed for one purpose (initial condition, noise, init) within
/// a trial.
pub fn substream(seed: u64, stream: u64) -> u64 {
    mix(seed ^ mix(stream.wrapping_add(0x5EED)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn frozen_values() {
        // Changing these breaks reproducibility of every stored report.
        assert_eq!(mix(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(derive_seed(0, 0, 0), derive_seed(0, 0, 0));
    }

    #[test]
    fn distinct_over_grid() {
        let mut seen = HashSet::new();
        for cell in 0..200 {
            for trial in 0..200 {
                assert!(seen.insert(derive_seed(7, cell, trial)));
            }
        }
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
        assert_ne!(substream(5, 0), substream(5, 1));
    }
}
