//! Deterministic seed derivation.
//!
//! A single master seed fans out to every randomized stage (data
//! generation, federated training, attack training) through
//! [`derive_seed`]. The derivation is a fixed splitmix64 absorption of
//! the domain string and indices, so any stage can be re-run in
//! isolation and still observe exactly the sub-seed it saw in the full
//! pipeline.

/// splitmix64 finalizer (Steele et al.), the usual 64-bit mixer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a master seed, a domain label and a list of
/// indices (round number, client id, epoch, ...).
///
/// The absorption order is: master, each domain byte, each index. Two
/// derivations agree iff all three inputs agree.
pub fn derive_seed(master: u64, domain: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for b in domain.as_bytes() {
        h = splitmix64(h ^ u64::from(*b));
    }
    for ix in indices {
        h = splitmix64(h ^ *ix);
    }
    h
}
