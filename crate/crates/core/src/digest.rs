//! Content digests used to tie pipeline artifacts together.

use sha2::{Digest, Sha256};

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a sequence of doubles, hashed through their little-endian bytes.
pub fn digest_f64s<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Short form for display.
pub fn short(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}
