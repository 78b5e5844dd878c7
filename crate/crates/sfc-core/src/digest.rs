//! SHA-256 digests of artifacts, reported as lowercase hex.

use sha2::{Digest, Sha256};

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut s = String::with_capacity(out.len() * 2);
    for byte in out {
        s.push_str(&format!("{byte:02x}"));
    }
    s
}

/// Digest of a serializable value via its canonical JSON encoding.
/// Struct fields serialize in declaration order and maps are ordered, so
/// equal values produce equal digests.
pub fn json_digest<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("digest serialization");
    hex_digest(json.as_bytes())
}

pub fn file_digest(path: &std::path::Path) -> crate::Result<String> {
    Ok(hex_digest(&std::fs::read(path)?))
}
