//! Per-purpose seed derivation so one invocation seed drives every random
//! stream independently.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedPurpose {
    Init,
    Dropout,
    Sampling,
    Generation,
}

impl SeedPurpose {
    fn tag(self) -> u64 {
        match self {
            SeedPurpose::Init => 0x1,
            SeedPurpose::Dropout => 0x2,
            SeedPurpose::Sampling => 0x3,
            SeedPurpose::Generation => 0x4,
        }
    }
}

/// SplitMix64 finalizer over the seed mixed with the purpose tag.
pub fn derive_seed(seed: u64, purpose: SeedPurpose) -> u64 {
    let mut z = seed ^ purpose.tag().wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn purposes_differ() {
        let s: Vec<u64> = [SeedPurpose::Init, SeedPurpose::Dropout, SeedPurpose::Sampling, SeedPurpose::Generation]
            .into_iter()
            .map(|p| derive_seed(7, p))
            .collect();
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(derive_seed(7, SeedPurpose::Init), derive_seed(7, SeedPurpose::Init));
    }
}
