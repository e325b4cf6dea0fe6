use sha2::{Digest, Sha256};

/// Derives a named child seed from a root seed: `root ^ H(name)`, with `H`
/// the first eight bytes of SHA-256 read little-endian. Stable across
/// platforms and releases, so ablations that share a root seed also share
/// every named stream they have in common.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    root ^ u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_names_distinct_seeds() {
        assert_ne!(derive_seed(42, "stage1"), derive_seed(42, "stage2"));
        assert_eq!(derive_seed(42, "stage1"), derive_seed(42, "stage1"));
        assert_eq!(derive_seed(0, "x") ^ derive_seed(5, "x"), 5);
    }
}
