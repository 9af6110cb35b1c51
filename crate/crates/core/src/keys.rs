//! Ed25519 keypairs and detached signatures.

use alloc::string::String;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};

use crate::hexfmt::{decode_lower, hex_newtype_serde, HexError};

/// Tag recorded alongside keys so stored material names its scheme.
pub const SCHEME_ID: &str = "ed25519";

pub const SEED_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeyError {
    #[error("key seed must be {SEED_LEN} bytes, got {0}")]
    SeedLength(usize),
    #[error("malformed hex encoding: {0}")]
    Hex(#[from] HexError),
    #[error("bytes do not encode a valid {SCHEME_ID} public key")]
    InvalidPoint,
}

/// An Ed25519 verification key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey([u8; 32]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Result<Self, KeyError> {
        VerifyingKey::from_bytes(&bytes).map_err(|_| KeyError::InvalidPoint)?;
        Ok(PublicKey(bytes))
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        Self::from_bytes(decode_lower::<32>(s)?)
    }

    pub fn verify(&self, message: &[u8], sig: &Signature) -> bool {
        let Ok(key) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
        key.verify(message, &sig).is_ok()
    }
}

impl core::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "PublicKey({self})")
    }
}

hex_newtype_serde!(PublicKey, 32, KeyError);

/// A detached Ed25519 signature (64 bytes, 128 hex characters).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature([u8; SIGNATURE_LEN]);

impl Signature {
    /// 128 '0' characters; the placeholder carried by the genesis block.
    pub const ZERO: Signature = Signature([0; SIGNATURE_LEN]);

    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }

    pub fn from_bytes(bytes: [u8; SIGNATURE_LEN]) -> Self {
        Signature(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        Ok(Signature(decode_lower::<SIGNATURE_LEN>(s)?))
    }
}

impl core::fmt::Debug for Signature {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Signature({self})")
    }
}

hex_newtype_serde!(Signature, SIGNATURE_LEN, KeyError);

/// A signing keypair. The private half is only reachable through
/// [`KeyPair::private_key_hex`]; `Debug` prints the public key alone.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: &[u8]) -> Result<Self, KeyError> {
        let seed: [u8; SEED_LEN] = seed
            .try_into()
            .map_err(|_| KeyError::SeedLength(seed.len()))?;
        Ok(KeyPair {
            signing: SigningKey::from_bytes(&seed),
        })
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; SEED_LEN];
        rng.fill_bytes(&mut seed);
        KeyPair {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    /// Restores a keypair from the hex form of its private key.
    pub fn from_private_hex(s: &str) -> Result<Self, KeyError> {
        let seed = decode_lower::<SEED_LEN>(s)?;
        Self::from_seed(&seed)
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    /// The 32-byte secret seed the keypair was derived from.
    pub fn to_seed(&self) -> [u8; SEED_LEN] {
        self.signing.to_bytes()
    }

    pub fn private_key_hex(&self) -> String {
        hex::encode(self.signing.to_bytes())
    }

    pub fn scheme_id(&self) -> &'static str {
        SCHEME_ID
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }
}

impl core::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &self.public_key())
            .field("scheme_id", &SCHEME_ID)
            .finish_non_exhaustive()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.signing.to_bytes() == other.signing.to_bytes()
    }
}

impl Eq for KeyPair {}

/// Seeded generation is reproducible; without a seed, entropy comes from the OS.
#[cfg(feature = "std")]
pub fn generate_keypair(seed: Option<&[u8]>) -> Result<KeyPair, KeyError> {
    match seed {
        Some(seed) => KeyPair::from_seed(seed),
        None => Ok(KeyPair::generate(&mut rand::rngs::OsRng)),
    }
}

pub fn sign(keys: &KeyPair, message: &[u8]) -> Signature {
    keys.sign(message)
}

/// Verifies a signature given hex encodings. Malformed encodings are an
/// error; a well-formed signature that does not verify is `Ok(false)`.
pub fn verify_signature(public_key: &str, message: &[u8], sig: &str) -> Result<bool, KeyError> {
    let pk = PublicKey::from_hex(public_key)?;
    let sig = Signature::from_hex(sig)?;
    Ok(pk.verify(message, &sig))
}
