//! EUF-CMA signatures (Ed25519) behind the small interface the transfer
//! protocols need: sign bytes, verify bytes, canonical key encodings.

use ed25519_dalek::{Signer, Verifier};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::CryptoError;

/// A detached signature. Malformed encodings are possible values; they
/// simply never verify.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature(#[serde(with = "hex")] pub Vec<u8>);

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..self.0.len().min(8)]))
    }
}

/// Public verification half of a keypair.
#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyingKey(#[serde(with = "hex")] [u8; 32]);

impl std::fmt::Debug for VerifyingKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VerifyingKey({}..)", hex::encode(&self.0[..6]))
    }
}

impl VerifyingKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        VerifyingKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

/// Signing keypair held by a party.
#[derive(Clone)]
pub struct SigningKeypair {
    sk: ed25519_dalek::SigningKey,
}

impl std::fmt::Debug for SigningKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SigningKeypair({:?})", self.verifying_key())
    }
}

impl SigningKeypair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        SigningKeypair {
            sk: ed25519_dalek::SigningKey::generate(rng),
        }
    }

    pub fn from_secret_bytes(bytes: [u8; 32]) -> Self {
        SigningKeypair {
            sk: ed25519_dalek::SigningKey::from_bytes(&bytes),
        }
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.sk.to_bytes()
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        VerifyingKey(self.sk.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.sk.sign(message).to_bytes().to_vec())
    }
}

/// Verifies a signature; any malformed key or signature encoding yields
/// `false` rather than an error.
pub fn verify(vk: &VerifyingKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(key) = ed25519_dalek::VerifyingKey::from_bytes(&vk.0) else {
        return false;
    };
    let Ok(sig_bytes): Result<[u8; 64], _> = signature.0.as_slice().try_into() else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig_bytes);
    key.verify(message, &sig).is_ok()
}

impl VerifyingKey {
    /// Tagged file encoding.
    pub fn encode_file(&self) -> Vec<u8> {
        super::encode_tagged(super::tags::VERIFYING_KEY, &self.0)
    }

    pub fn decode_file(data: &[u8]) -> Result<Self, CryptoError> {
        let bytes = super::decode_tagged(super::tags::VERIFYING_KEY, data)?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| CryptoError::InvalidKey)?;
        Ok(VerifyingKey(arr))
    }
}

impl SigningKeypair {
    /// Tagged file encoding of the secret half.
    pub fn encode_file(&self) -> Vec<u8> {
        super::encode_tagged(super::tags::SIGNING_KEY, &self.secret_bytes())
    }

    pub fn decode_file(data: &[u8]) -> Result<Self, CryptoError> {
        let bytes = super::decode_tagged(super::tags::SIGNING_KEY, data)?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| CryptoError::InvalidKey)?;
        Ok(SigningKeypair::from_secret_bytes(arr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keypair(seed: u64) -> SigningKeypair {
        SigningKeypair::generate(&mut ChaCha20Rng::seed_from_u64(seed))
    }

    #[test]
    fn sign_verify_round_trip() {
        let kp = keypair(1);
        let sig = kp.sign(b"message");
        assert!(verify(&kp.verifying_key(), b"message", &sig));
    }

    #[test]
    fn rejects_flipped_message_and_wrong_key() {
        let kp = keypair(2);
        let sig = kp.sign(b"message");
        assert!(!verify(&kp.verifying_key(), b"messagf", &sig));
        assert!(!verify(&keypair(3).verifying_key(), b"message", &sig));
    }

    #[test]
    fn malformed_signature_is_false_not_panic() {
        let kp = keypair(4);
        assert!(!verify(&kp.verifying_key(), b"m", &Signature(vec![1, 2, 3])));
        assert!(!verify(&kp.verifying_key(), b"m", &Signature(vec![0u8; 64])));
    }

    #[test]
    fn malleability_smoke_suite() {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let kp = keypair(6);
        let message = b"the signed statement";
        let sig = kp.sign(message);
        for _ in 0..10_000 {
            let mut bytes = sig.0.clone();
            let bit = rng.gen_range(0..bytes.len() * 8);
            bytes[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify(&kp.verifying_key(), message, &Signature(bytes)));
        }
    }

    #[test]
    fn key_files_round_trip() {
        let kp = keypair(7);
        let vk = kp.verifying_key();
        assert_eq!(
            VerifyingKey::decode_file(&vk.encode_file()).unwrap(),
            vk
        );
        let restored = SigningKeypair::decode_file(&kp.encode_file()).unwrap();
        assert_eq!(restored.verifying_key(), vk);
        assert!(VerifyingKey::decode_file(&kp.encode_file()).is_err());
    }
}
