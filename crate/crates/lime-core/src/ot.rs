//! Naor-Pinkas 1-out-of-2 oblivious transfer.
//!
//! The sender publishes a random element `C` whose discrete log the
//! chooser must not know. The chooser builds `PK_sigma = g^k` and
//! `PK_(1-sigma) = C / PK_sigma`, revealing only `PK_0`; the sender masks
//! each message with `H(PK_j^r)` and the chooser can unmask exactly the
//! chosen one via `H((g^r)^k)`.
//!
//! Payloads are fixed 16-byte symmetric keys; arbitrary-size messages go
//! through [`ot_transport`], which encrypts both messages, ships both
//! ciphertexts in the clear and runs the OT on the decryption keys only.

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::crypto::group::{ro_hash, Element, GroupParams, Scalar};
use crate::crypto::{sym_decrypt, sym_encrypt, CryptoError, SymKey};

/// Version tag leading every wire message.
pub const WIRE_VERSION: [u8; 2] = [0x4F, 0x31];

#[derive(Debug, Error)]
pub enum OtError {
    #[error("session consumed")]
    SessionConsumed,
    #[error("degenerate element: {0}")]
    DegenerateElement(&'static str),
    #[error("degenerate choice scalar")]
    DegenerateChoice,
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("batch length mismatch: {pairs} pairs, {bits} bits")]
    BatchLength { pairs: usize, bits: usize },
    #[error("transport length mismatch on message {index}")]
    TransportLength { index: usize },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, PartialEq, Eq)]
enum SenderPhase {
    Initialized,
    Transferred,
}

/// Sender side of one OT execution. `r` is strictly single-use.
pub struct OtSenderSession {
    c: Element,
    r: Scalar,
    g_r: Element,
    c_r: Element,
    phase: SenderPhase,
}

impl OtSenderSession {
    pub fn public_c(&self) -> Element {
        self.c
    }
}

/// Chooser side of one OT execution.
pub struct OtChooserSession {
    sigma: bool,
    k: Scalar,
    pk0: Element,
}

impl OtChooserSession {
    pub fn pk0(&self) -> Element {
        self.pk0
    }
}

/// The sender's final message: both masked values plus `g^r`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OtPayload {
    pub g_r: Element,
    pub e0: SymKey,
    pub e1: SymKey,
}

/// Initialization: pick random `C, r`, precompute `g^r` and `C^r`.
pub fn ot_init<R: RngCore + CryptoRng>(
    params: &GroupParams,
    rng: &mut R,
) -> (OtSenderSession, Element) {
    let c = params.random_element(rng);
    let r = params.random_nonzero_scalar(rng);
    let g_r = params.generator().exp(&r);
    let c_r = c.exp(&r);
    let session = OtSenderSession {
        c,
        r,
        g_r,
        c_r,
        phase: SenderPhase::Initialized,
    };
    (session, c)
}

/// Deterministic chooser construction from an explicit scalar. Rejects
/// degenerate scalars (those making either public key the identity,
/// which would collapse the two slots). [`ot_choose`] resamples instead.
pub fn ot_choose_with_scalar(
    params: &GroupParams,
    c: &Element,
    sigma: bool,
    k: Scalar,
) -> Result<(OtChooserSession, Element), OtError> {
    if c.is_identity() {
        return Err(OtError::DegenerateElement("C is the identity"));
    }
    let pk_sigma = params.generator().exp(&k);
    let pk_other = c.div(&pk_sigma);
    // either key hitting the identity, or both keys coinciding (g^2k = C),
    // would collapse the two slots onto one mask
    if pk_sigma.is_identity() || pk_other.is_identity() || pk_sigma == pk_other {
        return Err(OtError::DegenerateChoice);
    }
    let pk0 = if sigma { pk_other } else { pk_sigma };
    Ok((OtChooserSession { sigma, k, pk0 }, pk0))
}

/// Transfer, chooser side: pick `k`, send `PK_0`.
pub fn ot_choose<R: RngCore + CryptoRng>(
    params: &GroupParams,
    c: &Element,
    sigma: bool,
    rng: &mut R,
) -> Result<(OtChooserSession, Element), OtError> {
    if c.is_identity() {
        return Err(OtError::DegenerateElement("C is the identity"));
    }
    loop {
        let k = params.random_scalar(rng);
        match ot_choose_with_scalar(params, c, sigma, k) {
            Ok(done) => return Ok(done),
            Err(OtError::DegenerateChoice) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// Transfer, sender side: mask both messages. Consumes the session's
/// one-time `r`; a second call on the same session fails.
pub fn ot_send(
    session: &mut OtSenderSession,
    pk0: &Element,
    m0: &SymKey,
    m1: &SymKey,
) -> Result<OtPayload, OtError> {
    if session.phase != SenderPhase::Initialized {
        return Err(OtError::SessionConsumed);
    }
    if pk0.is_identity() || *pk0 == session.c || pk0.mul(pk0) == session.c {
        return Err(OtError::DegenerateElement(
            "PK0 collapses the two key slots",
        ));
    }
    session.phase = SenderPhase::Transferred;
    let pk0_r = pk0.exp(&session.r);
    let pk1_r = session.c_r.div(&pk0_r);
    Ok(OtPayload {
        g_r: session.g_r,
        e0: m0.xor(&ro_hash(&pk0_r)),
        e1: m1.xor(&ro_hash(&pk1_r)),
    })
}

/// Transfer, chooser side: unmask the chosen value.
pub fn ot_receive(session: &OtChooserSession, payload: &OtPayload) -> Result<SymKey, OtError> {
    if payload.g_r.is_identity() {
        return Err(OtError::MalformedPayload("g^r is the identity".into()));
    }
    let mask = ro_hash(&payload.g_r.exp(&session.k));
    let chosen = if session.sigma {
        &payload.e1
    } else {
        &payload.e0
    };
    Ok(chosen.xor(&mask))
}

/// `n` independent parallel executions: fresh `(C, r)` per session,
/// returning the keys selected by `bits`.
pub fn ot_batch<R: RngCore + CryptoRng>(
    params: &GroupParams,
    pairs: &[(SymKey, SymKey)],
    bits: &[bool],
    rng: &mut R,
) -> Result<Vec<SymKey>, OtError> {
    if pairs.is_empty() || pairs.len() != bits.len() {
        return Err(OtError::BatchLength {
            pairs: pairs.len(),
            bits: bits.len(),
        });
    }
    pairs
        .iter()
        .zip(bits.iter())
        .map(|(&(m0, m1), &sigma)| {
            let (mut sender, c) = ot_init(params, rng);
            let (chooser, pk0) = ot_choose(params, &c, sigma, rng)?;
            let payload = ot_send(&mut sender, &pk0, &m0, &m1)?;
            ot_receive(&chooser, &payload)
        })
        .collect()
}

/// Key-transport wrapper: encrypts both messages of every pair under
/// fresh keys, ships both ciphertexts in the clear and runs the OT batch
/// on the 16-byte keys only, so OT traffic is independent of message
/// size.
pub fn ot_transport<R: RngCore + CryptoRng>(
    params: &GroupParams,
    messages: &[(Vec<u8>, Vec<u8>)],
    bits: &[bool],
    rng: &mut R,
) -> Result<Vec<Vec<u8>>, OtError> {
    if messages.is_empty() || messages.len() != bits.len() {
        return Err(OtError::BatchLength {
            pairs: messages.len(),
            bits: bits.len(),
        });
    }
    let frame = |m: &[u8]| {
        let mut framed = Vec::with_capacity(4 + m.len());
        framed.extend_from_slice(&(m.len() as u32).to_be_bytes());
        framed.extend_from_slice(m);
        framed
    };
    let key_pairs: Vec<(SymKey, SymKey)> = (0..messages.len())
        .map(|_| (SymKey::generate(rng), SymKey::generate(rng)))
        .collect();
    let ciphertexts: Vec<(Vec<u8>, Vec<u8>)> = messages
        .iter()
        .zip(key_pairs.iter())
        .map(|((m0, m1), (k0, k1))| {
            (
                sym_encrypt(&frame(m0), k0, rng),
                sym_encrypt(&frame(m1), k1, rng),
            )
        })
        .collect();
    let chosen_keys = ot_batch(params, &key_pairs, bits, rng)?;

    chosen_keys
        .iter()
        .zip(ciphertexts.iter())
        .zip(bits.iter())
        .enumerate()
        .map(|(index, ((key, (c0, c1)), &sigma))| {
            let ct = if sigma { c1 } else { c0 };
            let plain = sym_decrypt(ct, key)?;
            if plain.len() < 4 {
                return Err(OtError::TransportLength { index });
            }
            let len = u32::from_be_bytes(plain[..4].try_into().expect("sliced 4")) as usize;
            if plain.len() - 4 != len {
                return Err(OtError::TransportLength { index });
            }
            Ok(plain[4..].to_vec())
        })
        .collect()
}

/// Wire encoding of the three protocol messages.
///
/// Layout: `[2-byte version][1-byte type][u32 BE length][body]` where the
/// body is the canonical element encoding for INIT (`C`) and CHOOSE
/// (`PK_0`), and `g^r || E0 || E1` for PAYLOAD.
#[derive(Clone, Debug, PartialEq)]
pub enum OtWireMessage {
    Init { c: Element },
    Choose { pk0: Element },
    Payload(OtPayload),
}

impl OtWireMessage {
    const TYPE_INIT: u8 = 1;
    const TYPE_CHOOSE: u8 = 2;
    const TYPE_PAYLOAD: u8 = 3;

    pub fn encode(&self) -> Vec<u8> {
        let (ty, body) = match self {
            OtWireMessage::Init { c } => (Self::TYPE_INIT, c.encode()),
            OtWireMessage::Choose { pk0 } => (Self::TYPE_CHOOSE, pk0.encode()),
            OtWireMessage::Payload(p) => {
                let mut body = p.g_r.encode();
                body.extend_from_slice(p.e0.as_bytes());
                body.extend_from_slice(p.e1.as_bytes());
                (Self::TYPE_PAYLOAD, body)
            }
        };
        let mut out = Vec::with_capacity(7 + body.len());
        out.extend_from_slice(&WIRE_VERSION);
        out.push(ty);
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn decode(params: &GroupParams, data: &[u8]) -> Result<Self, OtError> {
        if data.len() < 7 {
            return Err(OtError::MalformedPayload("short message".into()));
        }
        if data[0..2] != WIRE_VERSION {
            return Err(OtError::MalformedPayload(format!(
                "unknown version {:02x}{:02x}",
                data[0], data[1]
            )));
        }
        let ty = data[2];
        let len = u32::from_be_bytes(data[3..7].try_into().expect("sliced 4")) as usize;
        if data.len() != 7 + len {
            return Err(OtError::MalformedPayload("length mismatch".into()));
        }
        let body = &data[7..];
        let elen = params.element_len();
        match ty {
            Self::TYPE_INIT => Ok(OtWireMessage::Init {
                c: params.decode_element(body)?,
            }),
            Self::TYPE_CHOOSE => Ok(OtWireMessage::Choose {
                pk0: params.decode_element(body)?,
            }),
            Self::TYPE_PAYLOAD => {
                if body.len() != elen + 32 {
                    return Err(OtError::MalformedPayload("payload body length".into()));
                }
                let g_r = params.decode_element(&body[..elen])?;
                let e0 = SymKey::from_bytes(body[elen..elen + 16].try_into().expect("16"));
                let e1 = SymKey::from_bytes(body[elen + 16..].try_into().expect("16"));
                Ok(OtWireMessage::Payload(OtPayload { g_r, e0, e1 }))
            }
            other => Err(OtError::MalformedPayload(format!(
                "unknown message type {other}"
            ))),
        }
    }
}

/// Runs one full OT over encoded wire messages, returning the chosen key
/// and the transcript bytes of the three messages.
pub fn ot_run_single<R: RngCore + CryptoRng>(
    params: &GroupParams,
    m0: &SymKey,
    m1: &SymKey,
    sigma: bool,
    rng: &mut R,
) -> Result<(SymKey, [Vec<u8>; 3]), OtError> {
    let (mut sender, c) = ot_init(params, rng);
    let init = OtWireMessage::Init { c }.encode();
    let OtWireMessage::Init { c } = OtWireMessage::decode(params, &init)? else {
        unreachable!("encoded as init");
    };
    let (chooser, pk0) = ot_choose(params, &c, sigma, rng)?;
    let choose = OtWireMessage::Choose { pk0 }.encode();
    let OtWireMessage::Choose { pk0 } = OtWireMessage::decode(params, &choose)? else {
        unreachable!("encoded as choose");
    };
    let payload = ot_send(&mut sender, &pk0, m0, m1)?;
    let payload_wire = OtWireMessage::Payload(payload).encode();
    let OtWireMessage::Payload(payload) = OtWireMessage::decode(params, &payload_wire)? else {
        unreachable!("encoded as payload");
    };
    let key = ot_receive(&chooser, &payload)?;
    Ok((key, [init, choose, payload_wire]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::group::TEST_ORDER;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn key(seed: u8) -> SymKey {
        SymKey::from_bytes([seed; 16])
    }

    #[test]
    fn full_protocol_recovers_chosen_message() {
        for params in [GroupParams::test(), GroupParams::production()] {
            let mut r = rng(1);
            for sigma in [false, true] {
                let (mut sender, c) = ot_init(&params, &mut r);
                let (chooser, pk0) = ot_choose(&params, &c, sigma, &mut r).unwrap();
                let payload = ot_send(&mut sender, &pk0, &key(7), &key(9)).unwrap();
                let got = ot_receive(&chooser, &payload).unwrap();
                assert_eq!(got, if sigma { key(9) } else { key(7) });
            }
        }
    }

    #[test]
    fn unchosen_message_is_not_recoverable_with_held_key() {
        let params = GroupParams::test();
        let mut r = rng(2);
        for sigma in [false, true] {
            let (mut sender, c) = ot_init(&params, &mut r);
            let (chooser, pk0) = ot_choose(&params, &c, sigma, &mut r).unwrap();
            let payload = ot_send(&mut sender, &pk0, &key(7), &key(9)).unwrap();
            let mask = ro_hash(&payload.g_r.exp(&chooser.k));
            let (unchosen_ct, unchosen_plain) = if sigma {
                (&payload.e0, key(7))
            } else {
                (&payload.e1, key(9))
            };
            assert_ne!(unchosen_ct.xor(&mask), unchosen_plain);
        }
    }

    #[test]
    fn exhaustive_recovery_over_test_group() {
        // every (sigma, k) admissible pair, several (C, r) draws each
        let params = GroupParams::test();
        let mut r = rng(3);
        for round in 0..5u64 {
            let (mut sender_template, c) = ot_init(&params, &mut r);
            let _ = round;
            for sigma in [false, true] {
                for k in 0..TEST_ORDER {
                    let k = params.scalar_from_u64(k);
                    let chooser = match ot_choose_with_scalar(&params, &c, sigma, k) {
                        Ok((chooser, _)) => chooser,
                        Err(OtError::DegenerateChoice) => continue,
                        Err(e) => panic!("unexpected error {e}"),
                    };
                    let mut sender = OtSenderSession {
                        c: sender_template.c,
                        r: sender_template.r,
                        g_r: sender_template.g_r,
                        c_r: sender_template.c_r,
                        phase: SenderPhase::Initialized,
                    };
                    let payload = ot_send(&mut sender, &chooser.pk0(), &key(1), &key(2)).unwrap();
                    let got = ot_receive(&chooser, &payload).unwrap();
                    assert_eq!(got, if sigma { key(2) } else { key(1) });
                }
            }
            sender_template.phase = SenderPhase::Transferred;
        }
    }

    #[test]
    fn chooser_public_keys_multiply_to_c() {
        let params = GroupParams::test();
        let mut r = rng(4);
        let (_, c) = ot_init(&params, &mut r);
        for sigma in [false, true] {
            let (chooser, pk0) = ot_choose(&params, &c, sigma, &mut r).unwrap();
            let pk_sigma = params.generator().exp(&chooser.k);
            let pk1 = c.div(&pk0);
            if sigma {
                assert_eq!(pk1, pk_sigma);
            } else {
                assert_eq!(pk0, pk_sigma);
            }
            assert_eq!(pk0.mul(&pk1), c);
        }
    }

    #[test]
    fn pk0_distribution_is_identical_for_both_choices() {
        // Exhaustive: over all admissible k, PK0 sweeps the group minus
        // {identity, C, sqrt(C)} exactly once for either sigma.
        let params = GroupParams::test();
        let mut r = rng(5);
        let (_, c) = ot_init(&params, &mut r);
        let mut seen = [std::collections::HashSet::new(), std::collections::HashSet::new()];
        for (slot, sigma) in [false, true].into_iter().enumerate() {
            for k in 0..TEST_ORDER {
                let k = params.scalar_from_u64(k);
                if let Ok((_, pk0)) = ot_choose_with_scalar(&params, &c, sigma, k) {
                    assert!(seen[slot].insert(pk0.encode()), "duplicate PK0");
                }
            }
            assert_eq!(seen[slot].len(), TEST_ORDER as usize - 3);
        }
        assert_eq!(seen[0], seen[1]);
    }

    #[test]
    fn sessions_are_single_use() {
        let params = GroupParams::test();
        let mut r = rng(6);
        let (mut sender, c) = ot_init(&params, &mut r);
        let (_, pk0) = ot_choose(&params, &c, false, &mut r).unwrap();
        ot_send(&mut sender, &pk0, &key(1), &key(2)).unwrap();
        assert!(matches!(
            ot_send(&mut sender, &pk0, &key(1), &key(2)),
            Err(OtError::SessionConsumed)
        ));
    }

    #[test]
    fn degenerate_elements_are_rejected() {
        let params = GroupParams::test();
        let mut r = rng(7);
        assert!(matches!(
            ot_choose(&params, &params.identity(), false, &mut r),
            Err(OtError::DegenerateElement(_))
        ));
        let (mut sender, c) = ot_init(&params, &mut r);
        assert!(matches!(
            ot_send(&mut sender, &params.identity(), &key(1), &key(2)),
            Err(OtError::DegenerateElement(_))
        ));
        // PK0 == C would collapse slot 1
        assert!(matches!(
            ot_send(&mut sender, &c, &key(1), &key(2)),
            Err(OtError::DegenerateElement(_))
        ));
        // PK0^2 == C would give both slots the same mask; find sqrt(C)
        // by brute force in the test group
        let g = params.generator();
        let sqrt_c = (0..TEST_ORDER)
            .map(|e| g.exp(&params.scalar_from_u64(e)))
            .find(|x| x.mul(x) == c)
            .expect("squaring is a bijection in an odd-order group");
        assert!(matches!(
            ot_send(&mut sender, &sqrt_c, &key(1), &key(2)),
            Err(OtError::DegenerateElement(_))
        ));
    }

    #[test]
    fn corrupted_mask_hands_back_garbage() {
        let params = GroupParams::test();
        let mut r = rng(8);
        let (mut sender, c) = ot_init(&params, &mut r);
        let (chooser, pk0) = ot_choose(&params, &c, false, &mut r).unwrap();
        let mut payload = ot_send(&mut sender, &pk0, &key(1), &key(2)).unwrap();
        let mut corrupted = *payload.e0.as_bytes();
        corrupted[3] ^= 0x40;
        payload.e0 = SymKey::from_bytes(corrupted);
        assert_ne!(ot_receive(&chooser, &payload).unwrap(), key(1));
    }

    #[test]
    fn batch_selects_exactly_the_chosen_keys() {
        let params = GroupParams::test();
        let mut r = rng(9);
        let pairs: Vec<(SymKey, SymKey)> = (0..8)
            .map(|i| (key(2 * i as u8), key(2 * i as u8 + 1)))
            .collect();
        let bits: Vec<bool> = (0..8).map(|i| i % 2 == 1).collect();
        let got = ot_batch(&params, &pairs, &bits, &mut r).unwrap();
        for (i, k) in got.iter().enumerate() {
            let expected = if bits[i] { pairs[i].1 } else { pairs[i].0 };
            assert_eq!(*k, expected);
        }
        // n = 1 reduces to a single OT
        let single = ot_batch(&params, &pairs[..1], &[false], &mut r).unwrap();
        assert_eq!(single, vec![pairs[0].0]);
        // all-zero choice string returns all first keys
        let zeros = ot_batch(&params, &pairs, &[false; 8], &mut r).unwrap();
        assert!(zeros.iter().zip(&pairs).all(|(k, p)| *k == p.0));
        assert!(ot_batch(&params, &pairs, &bits[..5], &mut r).is_err());
    }

    #[test]
    fn transport_delivers_chosen_arbitrary_messages() {
        let params = GroupParams::test();
        let mut r = rng(10);
        let messages = vec![
            (b"A".to_vec(), b"B".to_vec()),
            (vec![0u8; 4096], vec![1u8; 2000]),
        ];
        let got = ot_transport(&params, &messages, &[true, false], &mut r).unwrap();
        assert_eq!(got[0], b"B");
        assert_eq!(got[1], vec![0u8; 4096]);
    }

    #[test]
    fn transport_chosen_key_fails_on_unchosen_ciphertext() {
        let params = GroupParams::test();
        let mut r = rng(11);
        let k0 = SymKey::generate(&mut r);
        let k1 = SymKey::generate(&mut r);
        let c1 = sym_encrypt(b"unchosen", &k1, &mut r);
        // decrypting the unchosen ciphertext with the chosen key: garbage
        let chosen = ot_batch(&params, &[(k0, k1)], &[false], &mut r).unwrap()[0];
        assert_eq!(chosen, k0);
        assert_ne!(sym_decrypt(&c1, &chosen).unwrap(), b"unchosen");
    }

    #[test]
    fn ot_element_traffic_is_independent_of_message_size() {
        let params = GroupParams::test();
        let mut r = rng(12);
        let (small_key, small_wire) =
            ot_run_single(&params, &key(1), &key(2), false, &mut r).unwrap();
        assert_eq!(small_key, key(1));
        // the three OT messages have fixed sizes regardless of what the
        // transported documents weigh; 1 MiB payloads ride the symmetric
        // ciphertexts instead
        let big = vec![(vec![0xAB; 1 << 20], vec![0xCD; 1 << 20])];
        let got = ot_transport(&params, &big, &[true], &mut r).unwrap();
        assert_eq!(got[0].len(), 1 << 20);
        let (_, big_wire) = ot_run_single(&params, &key(3), &key(4), true, &mut r).unwrap();
        for (a, b) in small_wire.iter().zip(big_wire.iter()) {
            assert_eq!(a.len(), b.len());
        }
    }

    #[test]
    fn wire_messages_round_trip_and_validate() {
        for params in [GroupParams::test(), GroupParams::production()] {
            let mut r = rng(13);
            let c = params.random_element(&mut r);
            for msg in [
                OtWireMessage::Init { c },
                OtWireMessage::Choose { pk0: c },
                OtWireMessage::Payload(OtPayload {
                    g_r: c,
                    e0: key(5),
                    e1: key(6),
                }),
            ] {
                let bytes = msg.encode();
                assert_eq!(OtWireMessage::decode(&params, &bytes).unwrap(), msg);
                assert!(OtWireMessage::decode(&params, &bytes[..bytes.len() - 1]).is_err());
                let mut wrong_version = bytes.clone();
                wrong_version[0] ^= 0xFF;
                assert!(OtWireMessage::decode(&params, &wrong_version).is_err());
            }
        }
    }

    #[test]
    fn fresh_sessions_use_fresh_randomness() {
        let params = GroupParams::production();
        let mut r = rng(14);
        let (_, c1) = ot_init(&params, &mut r);
        let (_, c2) = ot_init(&params, &mut r);
        assert_ne!(c1, c2);
        // test group: C is in the subgroup generated by g
        let params = GroupParams::test();
        let (_, c) = ot_init(&params, &mut r);
        assert!(c
            .exp(&params.scalar_from_u64(TEST_ORDER))
            .is_identity());
        let _ = r.gen::<u8>();
    }
}
