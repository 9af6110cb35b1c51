//! SHA-256 digests rendered as 64 lowercase hex characters.

use sha2::{Digest as _, Sha256};

use crate::hexfmt::{decode_lower, hex_newtype_serde, HexError};
use crate::text::CanonicalText;

/// A SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest256([u8; 32]);

impl Digest256 {
    /// The all-zero digest used by the genesis block.
    pub const ZERO: Digest256 = Digest256([0; 32]);

    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        Digest256(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn from_hex(s: &str) -> Result<Self, HexError> {
        decode_lower::<32>(s).map(Digest256)
    }

    /// Number of leading '0' characters in the hex rendering.
    pub fn leading_zero_nibbles(&self) -> u32 {
        let mut n = 0;
        for b in self.0 {
            if b == 0 {
                n += 2;
            } else {
                if b < 0x10 {
                    n += 1;
                }
                break;
            }
        }
        n
    }

    /// True when the hex rendering starts with `difficulty` '0' characters.
    pub fn meets_difficulty(&self, difficulty: u32) -> bool {
        self.leading_zero_nibbles() >= difficulty
    }
}

impl core::fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Digest256({self})")
    }
}

hex_newtype_serde!(Digest256, 32, HexError);

/// SHA-256 of raw bytes.
pub fn sha256(bytes: &[u8]) -> Digest256 {
    Digest256(Sha256::digest(bytes).into())
}

/// Digest of a canonical contract text.
pub fn hash_contract(text: &CanonicalText) -> Digest256 {
    sha256(text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::canonicalize;
    use alloc::string::ToString;

    #[test]
    fn empty_text_vector() {
        assert_eq!(
            hash_contract(&canonicalize("")).to_string(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn abc_vector_on_raw_bytes() {
        assert_eq!(
            sha256(b"abc").to_string(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hex_parsing_is_strict() {
        let lower = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
        assert_eq!(Digest256::from_hex(lower).unwrap(), sha256(b"abc"));
        assert!(Digest256::from_hex(&lower.to_uppercase()).is_err());
        assert!(Digest256::from_hex(&lower[..63]).is_err());
        assert!(Digest256::from_hex("").is_err());
    }

    #[test]
    fn leading_zero_count() {
        let mut b = [0xffu8; 32];
        assert_eq!(Digest256(b).leading_zero_nibbles(), 0);
        b[0] = 0x0f;
        assert_eq!(Digest256(b).leading_zero_nibbles(), 1);
        b[0] = 0;
        b[1] = 0x10;
        assert_eq!(Digest256(b).leading_zero_nibbles(), 2);
        assert_eq!(Digest256::ZERO.leading_zero_nibbles(), 64);
        assert!(Digest256(b).meets_difficulty(2));
        assert!(!Digest256(b).meets_difficulty(3));
        assert!(Digest256(b).meets_difficulty(0));
    }
}
