//! Content fingerprints tying artifacts (datasets, models, Gram matrices) together.

use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of all `parts`, length-prefixed.
pub fn fingerprint<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(&hasher.finalize()[..8])
}

pub fn fingerprint_str(parts: &[&str]) -> String {
    fingerprint(parts.iter().map(|s| s.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_boundary_sensitive() {
        assert_eq!(fingerprint_str(&["ab", "c"]), fingerprint_str(&["ab", "c"]));
        assert_ne!(fingerprint_str(&["ab", "c"]), fingerprint_str(&["a", "bc"]));
        assert_eq!(fingerprint_str(&["x"]).len(), 16);
    }
}
