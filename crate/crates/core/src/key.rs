//! Secret keys driving the deterministic signature generator.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};

pub const KEY_LEN: usize = 32;

/// 32-byte seed. The fingerprint (first 8 bytes of SHA-256, hex) identifies a
/// key in metadata without revealing it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecretKey {
    seed: [u8; KEY_LEN],
}

impl SecretKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != KEY_LEN {
            return Err(Error::Precondition(format!(
                "key must be exactly {KEY_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        let mut seed = [0u8; KEY_LEN];
        seed.copy_from_slice(bytes);
        Ok(Self { seed })
    }

    pub fn from_seed(seed: [u8; KEY_LEN]) -> Self {
        Self { seed }
    }

    /// Fresh key from OS entropy.
    pub fn generate() -> Self {
        let mut seed = [0u8; KEY_LEN];
        getrandom_fill(&mut seed);
        Self { seed }
    }

    pub fn seed(&self) -> &[u8; KEY_LEN] {
        &self.seed
    }

    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.seed);
        hex_lower(&digest[..8])
    }
}

fn getrandom_fill(buf: &mut [u8]) {
    use rand::RngCore;
    rand::rngs::OsRng.fill_bytes(buf);
}

pub(crate) fn hex_lower(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(SecretKey::from_bytes(&[0u8; 31]).is_err());
        assert!(SecretKey::from_bytes(&[0u8; 33]).is_err());
        assert!(SecretKey::from_bytes(&[0u8; 32]).is_ok());
    }

    #[test]
    fn zero_key_fingerprint_is_stable() {
        let k = SecretKey::from_seed([0u8; 32]);
        // SHA-256 of 32 zero bytes, first 8 bytes.
        assert_eq!(k.fingerprint(), "66687aadf862bd77");
        assert_eq!(k.fingerprint().len(), 16);
    }

    #[test]
    fn generated_keys_are_distinct() {
        // Collision over a modest draw count would indicate broken entropy.
        let mut seen = std::collections::HashSet::new();
        for _ in 0..10_000 {
            assert!(seen.insert(SecretKey::generate().fingerprint()));
        }
    }
}
