//! Deterministic seed derivation.
//!
//! Every randomized stage (generation, splitting, augmentation, batch order)
//! derives independent sub-seeds from one master seed with a splitmix step,
//! so work can be parallelized per item without losing reproducibility.

/// One splitmix64 step: mixes `state + index` into a well-distributed u64.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the sub-seed for stream `label` / item `index` under `master`.
///
/// Distinct `(label, index)` pairs map to distinct streams for any fixed
/// master seed; the same triple always yields the same seed.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h = master;
    for &b in label.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable() {
        assert_eq!(derive_seed(42, "gen", 7), derive_seed(42, "gen", 7));
    }

    #[test]
    fn streams_do_not_collide() {
        let mut seen = std::collections::HashSet::new();
        for label in ["gen", "split", "augment", "batch"] {
            for i in 0..1000 {
                assert!(seen.insert(derive_seed(42, label, i)));
            }
        }
    }

    #[test]
    fn splitmix_reference_values() {
        // Reference outputs of the standard splitmix64 sequence from seed 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0x6E78_9E6A_A1B9_65F4);
    }
}
