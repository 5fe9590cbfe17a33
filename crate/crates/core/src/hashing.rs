//! Stable, seedable 64-bit hashing shared by the embedder and the classifier.
//!
//! Both consumers persist or compare hashed features across processes and
//! platforms, so std's randomized `DefaultHasher` is unsuitable. The scheme is
//! FNV-1a over the UTF-8 bytes with the seed folded into the offset basis,
//! followed by the splitmix64 finalizer for avalanche:
//!
//! ```text
//! h = 0xcbf29ce484222325 ^ splitmix64(seed)
//! for b in bytes: h = (h ^ b) * 0x100000001b3
//! return splitmix64(h)
//! ```

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub fn hash_bytes(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix64(seed);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

#[inline]
pub fn hash_str(s: &str, seed: u64) -> u64 {
    hash_bytes(s.as_bytes(), seed)
}

/// Order-sensitive combination of two hashes (word n-gram chaining).
#[inline]
pub fn combine(acc: u64, next: u64) -> u64 {
    splitmix64(acc.rotate_left(23) ^ next.wrapping_mul(0x2545_f491_4f6c_dd1d))
}

/// SHA-256 hex digest of a byte buffer, used for provenance hashes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
