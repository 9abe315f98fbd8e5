//! Digests over canonical bytes.
//!
//! Two flavours: a 64-bit mix (FNV-1a + splitmix finalizer) for in-memory
//! state hashing and dedup keys, and SHA-256 hex for file/artifact digests
//! recorded in manifests.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::rngutil::splitmix64;

/// FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// 64-bit digest of a byte slice with a finalizing mix.
pub fn digest64(bytes: &[u8]) -> u64 {
    splitmix64(fnv1a64(bytes))
}

/// 64-bit digest of a value's canonical JSON serialization.
pub fn digest64_json<T: Serialize>(value: &T) -> u64 {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    digest64(&bytes)
}

/// SHA-256 of a byte slice as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// SHA-256 hex digest of a file's contents.
pub fn sha256_file(path: &std::path::Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_matches_known_vector() {
        // FNV-1a test vector: empty string hashes to the offset basis.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
