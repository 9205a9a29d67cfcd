//! Small shared helpers.

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256, used to fingerprint configurations in manifests
/// and reports.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
