//! Sub-seed derivation. Every random stream in a run hangs off one master
//! seed through these mixers, so reruns are bit-identical.

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a named sub-stream.
pub fn derive(master: u64, tag: &str) -> u64 {
    tag.bytes().fold(mix(master), |acc, b| mix(acc ^ u64::from(b)))
}

/// Seed for an indexed sub-stream.
pub fn derive_index(master: u64, index: u64) -> u64 {
    mix(mix(master) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}
