//! Cryptographic primitives: prime-order group arithmetic, random-oracle
//! hash, signatures and CPA symmetric encryption.

pub mod cipher;
pub mod group;
pub mod sign;

pub use cipher::{sym_decrypt, sym_encrypt, SymKey};
pub use group::{ro_hash, Element, GroupMode, GroupParams, Scalar};
pub use sign::{verify, Signature, SigningKeypair, VerifyingKey};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("invalid group element encoding")]
    InvalidElement,
    #[error("group mode mismatch")]
    ModeMismatch,
    #[error("truncated ciphertext: {got} bytes, need at least {need}")]
    TruncatedCiphertext { got: usize, need: usize },
    #[error("invalid key encoding")]
    InvalidKey,
    #[error("bad format tag: expected {expected:?}, found {found:?}")]
    BadTag { expected: [u8; 4], found: [u8; 4] },
    #[error("truncated record")]
    TruncatedRecord,
}

/// Length-prefixed binary records with a 4-byte format tag, the shared
/// layout of key and signature files.
pub fn encode_tagged(tag: [u8; 4], bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + bytes.len());
    out.extend_from_slice(&tag);
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
    out
}

/// Inverse of [`encode_tagged`]; rejects wrong tags and truncation.
pub fn decode_tagged(expected: [u8; 4], data: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if data.len() < 8 {
        return Err(CryptoError::TruncatedRecord);
    }
    let found: [u8; 4] = data[0..4].try_into().expect("sliced 4 bytes");
    if found != expected {
        return Err(CryptoError::BadTag { expected, found });
    }
    let len = u32::from_be_bytes(data[4..8].try_into().expect("sliced 4 bytes")) as usize;
    if data.len() != 8 + len {
        return Err(CryptoError::TruncatedRecord);
    }
    Ok(data[8..].to_vec())
}

/// Format tags for on-disk records.
pub mod tags {
    pub const VERIFYING_KEY: [u8; 4] = *b"LMVK";
    pub const SIGNING_KEY: [u8; 4] = *b"LMSK";
    pub const SIGNATURE: [u8; 4] = *b"LMSG";
    pub const WATERMARK_KEY: [u8; 4] = *b"LMWK";
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagged_records_round_trip() {
        let encoded = encode_tagged(*b"TEST", b"payload");
        assert_eq!(decode_tagged(*b"TEST", &encoded).unwrap(), b"payload");
        assert!(matches!(
            decode_tagged(*b"XXXX", &encoded),
            Err(CryptoError::BadTag { .. })
        ));
        assert!(decode_tagged(*b"TEST", &encoded[..encoded.len() - 1]).is_err());
        assert!(decode_tagged(*b"TEST", b"LM").is_err());
    }
}
