//! CPA-secure symmetric encryption: AES-128-CTR with a random per-message
//! nonce prepended to the ciphertext. No integrity is provided or
//! implied; callers authenticate content at a higher layer.

use aes::cipher::{KeyIvInit, StreamCipher};
use aes::Aes128;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::CryptoError;

type Aes128Ctr = ctr::Ctr128BE<Aes128>;

const NONCE_LEN: usize = 16;

/// 128-bit symmetric key; also the fixed-size payload of one oblivious
/// transfer.
#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymKey(#[serde(with = "hex")] [u8; 16]);

impl std::fmt::Debug for SymKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SymKey(..)")
    }
}

impl SymKey {
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let mut key = [0u8; 16];
        rng.fill_bytes(&mut key);
        SymKey(key)
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        SymKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    /// XOR with a 16-byte mask, the masking step of oblivious transfer.
    pub fn xor(&self, mask: &SymKey) -> SymKey {
        let mut out = [0u8; 16];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(mask.0.iter())) {
            *o = a ^ b;
        }
        SymKey(out)
    }
}

/// Encrypts under a fresh random nonce; the nonce leads the ciphertext.
pub fn sym_encrypt<R: RngCore + CryptoRng + ?Sized>(
    message: &[u8],
    key: &SymKey,
    rng: &mut R,
) -> Vec<u8> {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let mut out = Vec::with_capacity(NONCE_LEN + message.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(message);
    let mut cipher = Aes128Ctr::new(&key.0.into(), &nonce.into());
    cipher.apply_keystream(&mut out[NONCE_LEN..]);
    out
}

/// Inverse of [`sym_encrypt`]. A wrong key yields garbage, not an error;
/// only structural truncation is detected.
pub fn sym_decrypt(ciphertext: &[u8], key: &SymKey) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < NONCE_LEN {
        return Err(CryptoError::TruncatedCiphertext {
            got: ciphertext.len(),
            need: NONCE_LEN,
        });
    }
    let nonce: [u8; NONCE_LEN] = ciphertext[..NONCE_LEN].try_into().expect("checked length");
    let mut out = ciphertext[NONCE_LEN..].to_vec();
    let mut cipher = Aes128Ctr::new(&key.0.into(), &nonce.into());
    cipher.apply_keystream(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn round_trip_one_kib() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let key = SymKey::generate(&mut rng);
        let message: Vec<u8> = (0..1024).map(|_| rng.gen()).collect();
        let ct = sym_encrypt(&message, &key, &mut rng);
        assert_eq!(sym_decrypt(&ct, &key).unwrap(), message);
    }

    #[test]
    fn encryption_is_randomized() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let key = SymKey::generate(&mut rng);
        let a = sym_encrypt(b"same message", &key, &mut rng);
        let b = sym_encrypt(b"same message", &key, &mut rng);
        assert_ne!(a, b);
    }

    #[test]
    fn wrong_key_yields_garbage() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..100 {
            let key = SymKey::generate(&mut rng);
            let wrong = SymKey::generate(&mut rng);
            let message: Vec<u8> = (0..64).map(|_| rng.gen()).collect();
            let ct = sym_encrypt(&message, &key, &mut rng);
            assert_ne!(sym_decrypt(&ct, &wrong).unwrap(), message);
        }
    }

    #[test]
    fn truncated_ciphertext_is_an_error() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let key = SymKey::generate(&mut rng);
        assert!(matches!(
            sym_decrypt(&[1, 2, 3], &key),
            Err(CryptoError::TruncatedCiphertext { .. })
        ));
    }

    #[test]
    fn xor_masking_is_involutive() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let value = SymKey::generate(&mut rng);
        let mask = SymKey::generate(&mut rng);
        assert_eq!(value.xor(&mask).xor(&mask), value);
    }
}
