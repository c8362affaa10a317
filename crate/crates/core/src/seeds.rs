//! Seed lineage: every random decision draws from a seed derived from the
//! run seed and a path of labels, so adding a consumer never shifts others.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, labels: &[&str]) -> u64 {
    labels.iter().fold(splitmix64(seed), |acc, label| {
        splitmix64(acc ^ fnv1a64(label.as_bytes()))
    })
}

pub fn derive_seed_n(seed: u64, label: &str, n: u64) -> u64 {
    splitmix64(derive_seed(seed, &[label]) ^ splitmix64(n))
}
