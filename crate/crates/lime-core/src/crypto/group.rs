//! Prime-order group arithmetic with two interchangeable backends.
//!
//! Production mode uses the Ristretto group over Curve25519 (order
//! ~2^252, 128-bit security, canonical 32-byte encodings). Test mode is
//! a Schnorr subgroup of Z_607* with prime order 101, small enough that
//! oblivious-transfer correctness can be checked by exhaustive
//! enumeration of every scalar. Test mode is never acceptable for
//! production use; the mode is an explicit parameter everywhere.

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar as DalekScalar;
use curve25519_dalek::traits::Identity;
use rand::{CryptoRng, Rng, RngCore};
use sha2::{Digest, Sha256};

use super::cipher::SymKey;
use super::CryptoError;

/// Test group modulus: a prime with 607 = 2 * 3 * 101 + 1.
const TEST_P: u64 = 607;
/// Prime order of the test subgroup.
pub const TEST_ORDER: u64 = 101;
/// Generator of the order-101 subgroup (3^6 mod 607).
const TEST_G: u64 = 122;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupMode {
    /// Order-101 Schnorr subgroup for exhaustive oracles only.
    Test,
    /// Ristretto over Curve25519 at the 128-bit level.
    Production,
}

/// Group selection plus derived constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupParams {
    mode: GroupMode,
}

impl GroupParams {
    pub fn test() -> Self {
        GroupParams {
            mode: GroupMode::Test,
        }
    }

    pub fn production() -> Self {
        GroupParams {
            mode: GroupMode::Production,
        }
    }

    pub fn mode(&self) -> GroupMode {
        self.mode
    }

    /// Approximate bit-security of the discrete logarithm.
    pub fn security_level(&self) -> u32 {
        match self.mode {
            GroupMode::Test => 0,
            GroupMode::Production => 128,
        }
    }

    /// Fixed length of the canonical element encoding.
    pub fn element_len(&self) -> usize {
        match self.mode {
            GroupMode::Test => 8,
            GroupMode::Production => 32,
        }
    }

    pub fn generator(&self) -> Element {
        match self.mode {
            GroupMode::Test => Element::Test(TEST_G),
            GroupMode::Production => Element::Ristretto(RISTRETTO_BASEPOINT_POINT),
        }
    }

    pub fn identity(&self) -> Element {
        match self.mode {
            GroupMode::Test => Element::Test(1),
            GroupMode::Production => Element::Ristretto(RistrettoPoint::identity()),
        }
    }

    /// Uniform scalar in `[0, q)`.
    pub fn random_scalar<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Scalar {
        match self.mode {
            GroupMode::Test => Scalar::Test(rng.gen_range(0..TEST_ORDER)),
            GroupMode::Production => Scalar::Ristretto(DalekScalar::random(rng)),
        }
    }

    /// Uniform scalar in `[1, q)`.
    pub fn random_nonzero_scalar<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Scalar {
        loop {
            let s = self.random_scalar(rng);
            if !s.is_zero() {
                return s;
            }
        }
    }

    /// Uniform non-identity element.
    pub fn random_element<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Element {
        self.generator().exp(&self.random_nonzero_scalar(rng))
    }

    pub fn scalar_from_u64(&self, value: u64) -> Scalar {
        match self.mode {
            GroupMode::Test => Scalar::Test(value % TEST_ORDER),
            GroupMode::Production => Scalar::Ristretto(DalekScalar::from(value)),
        }
    }

    /// Decodes a canonical fixed-length element, validating subgroup
    /// membership.
    pub fn decode_element(&self, bytes: &[u8]) -> Result<Element, CryptoError> {
        if bytes.len() != self.element_len() {
            return Err(CryptoError::InvalidElement);
        }
        match self.mode {
            GroupMode::Test => {
                let value = u64::from_be_bytes(bytes.try_into().expect("checked length"));
                if value == 0 || value >= TEST_P || mod_pow(value, TEST_ORDER) != 1 {
                    return Err(CryptoError::InvalidElement);
                }
                Ok(Element::Test(value))
            }
            GroupMode::Production => {
                let compressed = CompressedRistretto::from_slice(bytes)
                    .map_err(|_| CryptoError::InvalidElement)?;
                compressed
                    .decompress()
                    .map(Element::Ristretto)
                    .ok_or(CryptoError::InvalidElement)
            }
        }
    }
}

fn mod_mul(a: u64, b: u64) -> u64 {
    (a as u128 * b as u128 % TEST_P as u128) as u64
}

fn mod_pow(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1u64;
    base %= TEST_P;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mod_mul(acc, base);
        }
        base = mod_mul(base, base);
        exp >>= 1;
    }
    acc
}

fn mod_inv(a: u64) -> u64 {
    // Fermat: a^(p-2) in the field Z_p
    mod_pow(a, TEST_P - 2)
}

/// Exponent modulo the group order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scalar {
    Test(u64),
    Ristretto(DalekScalar),
}

impl Scalar {
    pub fn is_zero(&self) -> bool {
        match self {
            Scalar::Test(v) => *v == 0,
            Scalar::Ristretto(s) => s == &DalekScalar::ZERO,
        }
    }
}

/// A group element with a canonical fixed-length encoding.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Element {
    Test(u64),
    Ristretto(RistrettoPoint),
}

impl std::fmt::Debug for Element {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Element::Test(v) => write!(f, "Element::Test({v})"),
            Element::Ristretto(_) => write!(f, "Element::Ristretto({})", hex::encode(self.encode())),
        }
    }
}

impl Element {
    /// Deterministic exponentiation `self^scalar`.
    pub fn exp(&self, scalar: &Scalar) -> Element {
        match (self, scalar) {
            (Element::Test(b), Scalar::Test(e)) => Element::Test(mod_pow(*b, *e)),
            (Element::Ristretto(p), Scalar::Ristretto(s)) => Element::Ristretto(p * s),
            _ => panic!("group mode mismatch"),
        }
    }

    /// Group operation `self * other`.
    pub fn mul(&self, other: &Element) -> Element {
        match (self, other) {
            (Element::Test(a), Element::Test(b)) => Element::Test(mod_mul(*a, *b)),
            (Element::Ristretto(a), Element::Ristretto(b)) => Element::Ristretto(a + b),
            _ => panic!("group mode mismatch"),
        }
    }

    /// Group division `self / other`.
    pub fn div(&self, other: &Element) -> Element {
        match (self, other) {
            (Element::Test(a), Element::Test(b)) => Element::Test(mod_mul(*a, mod_inv(*b))),
            (Element::Ristretto(a), Element::Ristretto(b)) => Element::Ristretto(a - b),
            _ => panic!("group mode mismatch"),
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            Element::Test(v) => *v == 1,
            Element::Ristretto(p) => p == &RistrettoPoint::identity(),
        }
    }

    /// Canonical fixed-length big-endian encoding.
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Element::Test(v) => v.to_be_bytes().to_vec(),
            Element::Ristretto(p) => p.compress().as_bytes().to_vec(),
        }
    }
}

/// Free-function form of exponentiation, the shape the transfer
/// protocols use.
pub fn group_exp(base: &Element, exponent: &Scalar) -> Element {
    base.exp(exponent)
}

/// Random-oracle hash of an element into a symmetric key: a 16-byte
/// digest of the canonical encoding.
pub fn ro_hash(element: &Element) -> SymKey {
    let mut hasher = Sha256::new();
    hasher.update(b"lime.ot.rohash.v1");
    hasher.update(element.encode());
    let digest = hasher.finalize();
    let mut key = [0u8; 16];
    key.copy_from_slice(&digest[..16]);
    SymKey::from_bytes(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn test_group_constants_are_sound() {
        // p prime is hard-coded; check the generator really has order 101
        assert_ne!(TEST_G, 1);
        assert_eq!(mod_pow(TEST_G, TEST_ORDER), 1);
        for d in [1u64, 2, 3, 6] {
            if d < TEST_ORDER {
                assert_ne!(mod_pow(TEST_G, d), 1, "order divides {d}");
            }
        }
    }

    #[test]
    fn identity_laws() {
        for params in [GroupParams::test(), GroupParams::production()] {
            let g = params.generator();
            let zero = params.scalar_from_u64(0);
            assert!(g.exp(&zero).is_identity());
            assert_eq!(g.mul(&params.identity()), g);
        }
    }

    #[test]
    fn exponent_addition_law() {
        for params in [GroupParams::test(), GroupParams::production()] {
            let g = params.generator();
            for (a, b) in [(2u64, 3u64), (50, 99), (100, 100)] {
                let lhs = g.exp(&params.scalar_from_u64(a)).mul(&g.exp(&params.scalar_from_u64(b)));
                let rhs = g.exp(&params.scalar_from_u64(a + b));
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn exhaustive_exponentiation_matches_repeated_multiplication() {
        // brute-force oracle over the whole test group
        let params = GroupParams::test();
        let g = params.generator();
        let mut acc = params.identity();
        for x in 0..TEST_ORDER {
            assert_eq!(g.exp(&params.scalar_from_u64(x)), acc, "x = {x}");
            acc = acc.mul(&g);
        }
        // full cycle
        assert!(g.exp(&params.scalar_from_u64(TEST_ORDER)).is_identity());
    }

    #[test]
    fn masking_algebra_holds_exhaustively() {
        // For all C, r: (C / PK0)^r == C^r / PK0^r, the identity the OT
        // sender relies on.
        let params = GroupParams::test();
        let g = params.generator();
        for c_exp in 1..TEST_ORDER {
            let c = g.exp(&params.scalar_from_u64(c_exp));
            for r in 1..TEST_ORDER {
                let r = params.scalar_from_u64(r);
                for pk_exp in (1..TEST_ORDER).step_by(17) {
                    let pk0 = g.exp(&params.scalar_from_u64(pk_exp));
                    let lhs = c.div(&pk0).exp(&r);
                    let rhs = c.exp(&r).div(&pk0.exp(&r));
                    assert_eq!(lhs, rhs);
                }
            }
        }
    }

    #[test]
    fn encoding_round_trips_and_validates() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for params in [GroupParams::test(), GroupParams::production()] {
            let e = params.random_element(&mut rng);
            let bytes = e.encode();
            assert_eq!(bytes.len(), params.element_len());
            assert_eq!(params.decode_element(&bytes).unwrap(), e);
            assert!(params.decode_element(&bytes[1..]).is_err());
        }
        // test-mode rejects values outside the subgroup
        let params = GroupParams::test();
        assert!(params.decode_element(&3u64.to_be_bytes()).is_err());
        assert!(params.decode_element(&0u64.to_be_bytes()).is_err());
        assert!(params.decode_element(&TEST_P.to_be_bytes()).is_err());
    }

    #[test]
    fn ro_hash_is_deterministic_and_element_specific() {
        let params = GroupParams::test();
        let g = params.generator();
        let g2 = g.mul(&g);
        assert_eq!(ro_hash(&g), ro_hash(&g));
        assert_ne!(ro_hash(&g), ro_hash(&g2));
        assert_eq!(ro_hash(&g).as_bytes().len(), 16);
    }
}
