//! Strict lowercase hex decoding shared by the fixed-width newtypes.

/// A fixed-width hex field failed to decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum HexError {
    #[error("expected {expected} hex characters, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("hex must use only [0-9a-f]")]
    Alphabet,
}

/// Decodes exactly `N` bytes from lowercase hex. Uppercase is rejected, not folded.
pub(crate) fn decode_lower<const N: usize>(s: &str) -> Result<[u8; N], HexError> {
    if s.len() != N * 2 {
        return Err(HexError::Length {
            expected: N * 2,
            actual: s.len(),
        });
    }
    if !is_lower_hex(s) {
        return Err(HexError::Alphabet);
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(s, &mut out).map_err(|_| HexError::Alphabet)?;
    Ok(out)
}

pub(crate) fn is_lower_hex(s: &str) -> bool {
    s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

/// Implements `Display`, `FromStr` and hex-string serde for a `[u8; N]` newtype.
macro_rules! hex_newtype_serde {
    ($ty:ident, $len:expr, $err:ty) => {
        impl core::fmt::Display for $ty {
            fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
                let mut buf = [0u8; $len * 2];
                hex::encode_to_slice(self.as_bytes(), &mut buf).map_err(|_| core::fmt::Error)?;
                // encode_to_slice only writes ASCII
                f.write_str(core::str::from_utf8(&buf).map_err(|_| core::fmt::Error)?)
            }
        }

        impl core::str::FromStr for $ty {
            type Err = $err;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::from_hex(s)
            }
        }

        impl serde::Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> serde::Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = <alloc::string::String as serde::Deserialize>::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

pub(crate) use hex_newtype_serde;
