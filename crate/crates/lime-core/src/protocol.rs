//! Accountable transfer protocols.
//!
//! Two flows are provided. The trusted-sender flow simply embeds an
//! unsigned `(sender, recipient, tau)` triple and hands the marked
//! document over. The untrusted-sender flow runs the full exchange: the
//! recipient signs the statement first, the sender marks the whole
//! document with it, splits it, marks every part with both bit values,
//! signs a choice proof per version, encrypts all `2n` bundles and lets
//! the recipient pick one version per part through oblivious transfer.
//! The sender never learns the choice string, so it cannot reproduce the
//! exact version the recipient is accountable for.
//!
//! Both flows record every message in a [`Transcript`] whose entries can
//! be persisted as JSON metadata plus binary attachments.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::crypto::{
    self, sym_decrypt, sym_encrypt, verify, CryptoError, Signature, SigningKeypair, SymKey,
    VerifyingKey,
};
use crate::crypto::group::GroupParams;
use crate::document::{join, split_with, Document, DocumentError, SplitGeometry};
use crate::ot::{self, OtError, OtWireMessage};
use crate::watermark::{
    embed, EmbedConfig, WatermarkDescriptor, WatermarkError, WatermarkKey,
};

#[derive(Debug, thiserror::Error)]
pub enum TransferError {
    #[error("bad statement: {0}")]
    BadStatement(String),
    #[error("sender cheated on slot {slot}: {reason}")]
    SenderCheated { slot: usize, reason: String },
    #[error("trusted transfer requires an owner as sender")]
    SenderNotTrusted,
    #[error("protocol message out of order: {0}")]
    OutOfOrder(&'static str),
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error(transparent)]
    Document(#[from] DocumentError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Owner,
    Consumer,
}

/// Public identity of a party: a short label, its role, and its
/// signature verification key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartyId {
    pub label: String,
    pub role: Role,
    pub vk: VerifyingKey,
}

/// The transfer-binding triple `(sender, recipient, tau)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementBody {
    pub sender: String,
    pub recipient: String,
    pub tau: u64,
}

impl StatementBody {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.sender.len() + self.recipient.len());
        out.extend_from_slice(b"lime.stmt.v1");
        out.extend_from_slice(&(self.sender.len() as u32).to_be_bytes());
        out.extend_from_slice(self.sender.as_bytes());
        out.extend_from_slice(&(self.recipient.len() as u32).to_be_bytes());
        out.extend_from_slice(self.recipient.as_bytes());
        out.extend_from_slice(&self.tau.to_be_bytes());
        out
    }
}

/// The identifying watermark: the triple, recipient-signed for untrusted
/// transfers, unsigned for trusted ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub body: StatementBody,
    pub signature: Option<Signature>,
}

impl Statement {
    pub fn plain(body: StatementBody) -> Self {
        Statement {
            body,
            signature: None,
        }
    }

    pub fn signed(body: StatementBody, recipient_keys: &SigningKeypair) -> Self {
        let signature = recipient_keys.sign(&body.canonical_bytes());
        Statement {
            body,
            signature: Some(signature),
        }
    }

    pub fn is_signed(&self) -> bool {
        self.signature.is_some()
    }

    /// Checks the recipient signature. Unsigned statements never verify.
    pub fn verify_signature(&self, recipient_vk: &VerifyingKey) -> bool {
        match &self.signature {
            Some(sig) => verify(recipient_vk, &self.body.canonical_bytes(), sig),
            None => false,
        }
    }

    /// The watermark payload: the canonical triple plus the signature
    /// when present, so the embedded mark binds the whole statement.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = self.body.canonical_bytes();
        match &self.signature {
            None => out.push(0),
            Some(sig) => {
                out.push(1);
                out.extend_from_slice(&sig.0);
            }
        }
        out
    }
}

/// Sender-signed proof that slot `(part_index, bit)` of transfer `tau`
/// is what the recipient chose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceProof {
    pub tau: u64,
    pub part_index: u32,
    pub bit: bool,
    pub signature: Signature,
}

impl ChoiceProof {
    pub fn message_bytes(tau: u64, part_index: u32, bit: bool) -> Vec<u8> {
        let mut out = Vec::with_capacity(26);
        out.extend_from_slice(b"lime.proof.v1");
        out.extend_from_slice(&tau.to_be_bytes());
        out.extend_from_slice(&part_index.to_be_bytes());
        out.push(bit as u8);
        out
    }

    pub fn create(tau: u64, part_index: u32, bit: bool, sender_keys: &SigningKeypair) -> Self {
        let signature = sender_keys.sign(&Self::message_bytes(tau, part_index, bit));
        ChoiceProof {
            tau,
            part_index,
            bit,
            signature,
        }
    }

    pub fn verify(&self, sender_vk: &VerifyingKey) -> bool {
        verify(
            sender_vk,
            &Self::message_bytes(self.tau, self.part_index, self.bit),
            &self.signature,
        )
    }

    /// Tagged binary record: `tau || part_index || bit || sig`.
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::with_capacity(17 + self.signature.0.len());
        body.extend_from_slice(&self.tau.to_be_bytes());
        body.extend_from_slice(&self.part_index.to_be_bytes());
        body.push(self.bit as u8);
        body.extend_from_slice(&(self.signature.0.len() as u32).to_be_bytes());
        body.extend_from_slice(&self.signature.0);
        crypto::encode_tagged(*b"LMCP", &body)
    }

    pub fn decode(data: &[u8]) -> Result<Self, TransferError> {
        let body = crypto::decode_tagged(*b"LMCP", data)?;
        if body.len() < 17 {
            return Err(TransferError::MalformedRecord("short proof".into()));
        }
        let tau = u64::from_be_bytes(body[0..8].try_into().expect("8"));
        let part_index = u32::from_be_bytes(body[8..12].try_into().expect("4"));
        let bit = match body[12] {
            0 => false,
            1 => true,
            other => {
                return Err(TransferError::MalformedRecord(format!(
                    "bad bit byte {other}"
                )))
            }
        };
        let sig_len = u32::from_be_bytes(body[13..17].try_into().expect("4")) as usize;
        if body.len() != 17 + sig_len {
            return Err(TransferError::MalformedRecord("proof length".into()));
        }
        Ok(ChoiceProof {
            tau,
            part_index,
            bit,
            signature: Signature(body[17..].to_vec()),
        })
    }
}

/// Per-party protocol state: keys plus the per-peer transfer counters
/// that implement the timestamp.
#[derive(Clone, Debug)]
pub struct PartyState {
    pub id: PartyId,
    keypair: SigningKeypair,
    outgoing_tau: HashMap<String, u64>,
    incoming_tau: HashMap<String, u64>,
}

impl PartyState {
    pub fn new<R: RngCore + CryptoRng>(label: &str, role: Role, rng: &mut R) -> Self {
        let keypair = SigningKeypair::generate(rng);
        PartyState {
            id: PartyId {
                label: label.to_string(),
                role,
                vk: keypair.verifying_key(),
            },
            keypair,
            outgoing_tau: HashMap::new(),
            incoming_tau: HashMap::new(),
        }
    }

    pub fn from_keypair(label: &str, role: Role, keypair: SigningKeypair) -> Self {
        PartyState {
            id: PartyId {
                label: label.to_string(),
                role,
                vk: keypair.verifying_key(),
            },
            keypair,
            outgoing_tau: HashMap::new(),
            incoming_tau: HashMap::new(),
        }
    }

    pub fn keypair(&self) -> &SigningKeypair {
        &self.keypair
    }

    fn next_incoming_tau(&self, sender: &str) -> u64 {
        self.incoming_tau.get(sender).copied().unwrap_or(0) + 1
    }

    fn next_outgoing_tau(&self, recipient: &str) -> u64 {
        self.outgoing_tau.get(recipient).copied().unwrap_or(0) + 1
    }

    pub fn counters(&self) -> (&HashMap<String, u64>, &HashMap<String, u64>) {
        (&self.outgoing_tau, &self.incoming_tau)
    }

    pub fn restore_counters(
        &mut self,
        outgoing: HashMap<String, u64>,
        incoming: HashMap<String, u64>,
    ) {
        self.outgoing_tau = outgoing;
        self.incoming_tau = incoming;
    }
}

/// What the sender persists until audit time.
#[derive(Clone, Debug)]
pub struct SenderRecord {
    pub tau: u64,
    pub recipient: String,
    pub k1: WatermarkKey,
    pub k2: Option<WatermarkKey>,
    pub statement: Statement,
    pub n: usize,
    pub geometry: Option<SplitGeometry>,
    /// The version this party holds; the detection original for its hop.
    pub original_received_version: Document,
    pub whole_cfg: EmbedConfig,
    pub part_cfg: Option<EmbedConfig>,
}

/// What the recipient persists: its choices and the proofs backing them.
#[derive(Clone, Debug)]
pub struct RecipientRecord {
    pub tau: u64,
    pub sender: String,
    pub bits: Vec<bool>,
    pub proofs: Vec<ChoiceProof>,
    pub received: Document,
}

/// The recipient publishes exactly the version it received.
pub fn assemble_leak(record: &RecipientRecord) -> Document {
    record.received.clone()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToRecipient,
    ToSender,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MessageKind {
    Statement,
    Ciphertexts,
    OtInit { slot: u32 },
    OtChoose { slot: u32 },
    OtPayload { slot: u32 },
    Document,
}

/// One recorded wire message.
#[derive(Clone, Debug)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub kind: MessageKind,
    pub bytes: Vec<u8>,
}

/// Ordered capture of every message exchanged in one transfer.
#[derive(Clone, Debug, Default)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    fn record(&mut self, direction: Direction, kind: MessageKind, bytes: Vec<u8>) {
        self.entries.push(TranscriptEntry {
            direction,
            kind,
            bytes,
        });
    }
}

/// Sender conduct during the untrusted transfer. The dishonest variants
/// exercise the attack cases the audit layer must survive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SenderBehavior {
    Honest,
    /// Deliver the complement version `D_(i,1-j)` in slot `(i, j)` while
    /// keeping the matching proof; undetectable by the recipient, but the
    /// sender forfeits the ability to prove the recipient's choice.
    SwapVersions,
    /// Put the complement proof in slot `(i, j)`; the recipient detects
    /// the mismatch and aborts.
    SwapProofs,
}

/// Result of a trusted-sender transfer.
#[derive(Clone, Debug)]
pub struct TrustedTransfer {
    pub delivered: Document,
    pub sender_record: SenderRecord,
    pub transcript: Transcript,
}

/// Trusted-sender flow: embed the unsigned triple, hand over the marked
/// document. Only applicable when the auditor trusts the sender (it also
/// knows the delivered version).
pub fn trusted_transfer<R: RngCore + CryptoRng>(
    sender: &mut PartyState,
    doc: &Document,
    recipient: &mut PartyState,
    rng: &mut R,
) -> Result<TrustedTransfer, TransferError> {
    if sender.id.role != Role::Owner {
        return Err(TransferError::SenderNotTrusted);
    }
    let tau = sender.next_outgoing_tau(&recipient.id.label);
    let statement = Statement::plain(StatementBody {
        sender: sender.id.label.clone(),
        recipient: recipient.id.label.clone(),
        tau,
    });
    let k = WatermarkKey::generate(rng);
    let whole_cfg = EmbedConfig::for_document(doc.width(), doc.height());
    let delivered = embed(
        doc,
        &WatermarkDescriptor::whole(statement.payload_bytes(), k),
        &whole_cfg,
    )?;

    sender.outgoing_tau.insert(recipient.id.label.clone(), tau);
    recipient
        .incoming_tau
        .insert(sender.id.label.clone(), tau);

    let mut transcript = Transcript::default();
    transcript.record(
        Direction::ToRecipient,
        MessageKind::Document,
        delivered.to_pgm_bytes(),
    );

    Ok(TrustedTransfer {
        delivered,
        sender_record: SenderRecord {
            tau,
            recipient: recipient.id.label.clone(),
            k1: k,
            k2: None,
            statement,
            n: 0,
            geometry: None,
            original_received_version: doc.clone(),
            whole_cfg,
            part_cfg: None,
        },
        transcript,
    })
}

/// Result of an untrusted-sender transfer.
#[derive(Clone, Debug)]
pub struct UntrustedTransfer {
    pub delivered: Document,
    pub sender_record: SenderRecord,
    pub recipient_record: RecipientRecord,
    pub transcript: Transcript,
}

/// The `<D_(i,j), m_(i,j)>` pairing inside each ciphertext:
/// length-prefixed part PGM bytes, then the proof record.
fn encode_part_bundle(part: &Document, proof: &ChoiceProof) -> Vec<u8> {
    let pgm = part.to_pgm_bytes();
    let proof_bytes = proof.encode();
    let mut out = Vec::with_capacity(8 + pgm.len() + proof_bytes.len());
    out.extend_from_slice(&(pgm.len() as u32).to_be_bytes());
    out.extend_from_slice(&pgm);
    out.extend_from_slice(&(proof_bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(&proof_bytes);
    out
}

fn decode_part_bundle(data: &[u8]) -> Result<(Document, ChoiceProof), TransferError> {
    if data.len() < 4 {
        return Err(TransferError::MalformedRecord("short bundle".into()));
    }
    let pgm_len = u32::from_be_bytes(data[0..4].try_into().expect("4")) as usize;
    if data.len() < 4 + pgm_len + 4 {
        return Err(TransferError::MalformedRecord("bundle pgm length".into()));
    }
    let part = Document::from_pgm_bytes(&data[4..4 + pgm_len])?;
    let rest = &data[4 + pgm_len..];
    let proof_len = u32::from_be_bytes(rest[0..4].try_into().expect("4")) as usize;
    if rest.len() != 4 + proof_len {
        return Err(TransferError::MalformedRecord("bundle proof length".into()));
    }
    let proof = ChoiceProof::decode(&rest[4..])?;
    Ok((part, proof))
}

/// The sender's second message: all `2n` ciphertexts in slot order
/// `(i,0), (i,1)` ascending in `i`, plus the grid the recipient needs to
/// join the parts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CiphertextBatch {
    pub tau: u64,
    pub geometry: SplitGeometry,
    #[serde(with = "serde_bytes_vec")]
    pub ciphertexts: Vec<Vec<u8>>,
}

mod serde_bytes_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<u8>], s: S) -> Result<S::Ok, S::Error> {
        let hex: Vec<String> = v.iter().map(hex::encode).collect();
        hex.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<u8>>, D::Error> {
        let hex: Vec<String> = Vec::deserialize(d)?;
        hex.into_iter()
            .map(|h| hex::decode(h).map_err(serde::de::Error::custom))
            .collect()
    }
}

impl CiphertextBatch {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.tau.to_be_bytes());
        out.extend_from_slice(&(self.geometry.rows).to_be_bytes());
        out.extend_from_slice(&(self.geometry.cols).to_be_bytes());
        out.extend_from_slice(&(self.geometry.part_width).to_be_bytes());
        out.extend_from_slice(&(self.geometry.part_height).to_be_bytes());
        out.extend_from_slice(&(self.ciphertexts.len() as u32).to_be_bytes());
        for ct in &self.ciphertexts {
            out.extend_from_slice(&(ct.len() as u32).to_be_bytes());
            out.extend_from_slice(ct);
        }
        out
    }

    fn decode(data: &[u8]) -> Result<Self, TransferError> {
        if data.len() < 28 {
            return Err(TransferError::MalformedRecord("short batch".into()));
        }
        let tau = u64::from_be_bytes(data[0..8].try_into().expect("8"));
        let rows = u32::from_be_bytes(data[8..12].try_into().expect("4"));
        let cols = u32::from_be_bytes(data[12..16].try_into().expect("4"));
        let part_width = u32::from_be_bytes(data[16..20].try_into().expect("4"));
        let part_height = u32::from_be_bytes(data[20..24].try_into().expect("4"));
        let geometry = SplitGeometry::grid(part_width * cols, part_height * rows, rows, cols)?;
        let count = u32::from_be_bytes(data[24..28].try_into().expect("4")) as usize;
        let mut ciphertexts = Vec::with_capacity(count);
        let mut pos = 28;
        for _ in 0..count {
            if data.len() < pos + 4 {
                return Err(TransferError::MalformedRecord("batch truncated".into()));
            }
            let len = u32::from_be_bytes(data[pos..pos + 4].try_into().expect("4")) as usize;
            pos += 4;
            if data.len() < pos + len {
                return Err(TransferError::MalformedRecord("batch truncated".into()));
            }
            ciphertexts.push(data[pos..pos + len].to_vec());
            pos += len;
        }
        if pos != data.len() {
            return Err(TransferError::MalformedRecord("batch trailing bytes".into()));
        }
        Ok(CiphertextBatch {
            tau,
            geometry,
            ciphertexts,
        })
    }
}

/// Untrusted-sender flow over an explicit grid geometry.
///
/// `n` square grids come from [`untrusted_transfer`]; rectangular grids
/// (non-square part counts) are reached through this entry point.
pub fn untrusted_transfer_with_geometry<R: RngCore + CryptoRng>(
    params: &GroupParams,
    sender: &mut PartyState,
    sender_doc: &Document,
    recipient: &mut PartyState,
    geometry: SplitGeometry,
    behavior: SenderBehavior,
    rng: &mut R,
) -> Result<UntrustedTransfer, TransferError> {
    if geometry.document_width() != sender_doc.width()
        || geometry.document_height() != sender_doc.height()
    {
        return Err(TransferError::Document(DocumentError::InvalidSplit(
            "geometry does not match the document".into(),
        )));
    }
    let n = geometry.n;
    let mut transcript = Transcript::default();

    // recipient computes and signs sigma, sends it (Fig. 5 first message)
    let tau = recipient.next_incoming_tau(&sender.id.label);
    let body = StatementBody {
        sender: sender.id.label.clone(),
        recipient: recipient.id.label.clone(),
        tau,
    };
    let statement = Statement::signed(body, &recipient.keypair);
    transcript.record(
        Direction::ToSender,
        MessageKind::Statement,
        serde_json::to_vec(&statement)?,
    );

    // sender verifies the statement eagerly: signature, parties, freshness
    if statement.body.sender != sender.id.label
        || statement.body.recipient != recipient.id.label
    {
        return Err(TransferError::BadStatement("wrong parties".into()));
    }
    if !statement.verify_signature(&recipient.id.vk) {
        return Err(TransferError::BadStatement("invalid signature".into()));
    }
    if tau <= sender.outgoing_tau.get(&recipient.id.label).copied().unwrap_or(0) {
        return Err(TransferError::BadStatement(format!("stale tau {tau}")));
    }

    // sender: fresh keys, whole-document mark, split, per-part marks
    let k1 = WatermarkKey::generate(rng);
    let k2 = WatermarkKey::generate(rng);
    let whole_cfg = EmbedConfig::for_document(sender_doc.width(), sender_doc.height());
    let part_cfg = EmbedConfig::for_part(geometry.part_width, geometry.part_height);
    let marked = embed(
        sender_doc,
        &WatermarkDescriptor::whole(statement.payload_bytes(), k1),
        &whole_cfg,
    )?;
    let parts = split_with(&marked, &geometry)?;

    let mut key_pairs: Vec<(SymKey, SymKey)> = Vec::with_capacity(n);
    let mut ciphertexts: Vec<Vec<u8>> = Vec::with_capacity(2 * n);
    for (i, part) in parts.iter().enumerate() {
        let versions = [
            embed(
                part,
                &WatermarkDescriptor::part_bit(false, k2, i as u32),
                &part_cfg,
            )?,
            embed(
                part,
                &WatermarkDescriptor::part_bit(true, k2, i as u32),
                &part_cfg,
            )?,
        ];
        let proofs = [
            ChoiceProof::create(tau, i as u32, false, &sender.keypair),
            ChoiceProof::create(tau, i as u32, true, &sender.keypair),
        ];
        let ek0 = SymKey::generate(rng);
        let ek1 = SymKey::generate(rng);
        for j in 0..2usize {
            let (version, proof) = match behavior {
                SenderBehavior::Honest => (&versions[j], &proofs[j]),
                SenderBehavior::SwapVersions => (&versions[1 - j], &proofs[j]),
                SenderBehavior::SwapProofs => (&versions[j], &proofs[1 - j]),
            };
            let bundle = encode_part_bundle(version, proof);
            let ek = if j == 0 { &ek0 } else { &ek1 };
            ciphertexts.push(sym_encrypt(&bundle, ek, rng));
        }
        key_pairs.push((ek0, ek1));
    }

    let batch = CiphertextBatch {
        tau,
        geometry,
        ciphertexts,
    };
    let batch_bytes = batch.encode();
    let batch = CiphertextBatch::decode(&batch_bytes)?;
    transcript.record(Direction::ToRecipient, MessageKind::Ciphertexts, batch_bytes);

    // recipient picks its choice string
    let bits: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();

    // n oblivious transfers deliver exactly the chosen keys
    let mut chosen_keys: Vec<SymKey> = Vec::with_capacity(n);
    for (i, (&(ek0, ek1), &bit)) in key_pairs.iter().zip(bits.iter()).enumerate() {
        let (mut ot_sender, c) = ot::ot_init(params, rng);
        let init_bytes = OtWireMessage::Init { c }.encode();
        let OtWireMessage::Init { c } = OtWireMessage::decode(params, &init_bytes)? else {
            return Err(TransferError::OutOfOrder("init decode"));
        };
        transcript.record(
            Direction::ToRecipient,
            MessageKind::OtInit { slot: i as u32 },
            init_bytes,
        );

        let (chooser, pk0) = ot::ot_choose(params, &c, bit, rng)?;
        let choose_bytes = OtWireMessage::Choose { pk0 }.encode();
        let OtWireMessage::Choose { pk0 } = OtWireMessage::decode(params, &choose_bytes)? else {
            return Err(TransferError::OutOfOrder("choose decode"));
        };
        transcript.record(
            Direction::ToSender,
            MessageKind::OtChoose { slot: i as u32 },
            choose_bytes,
        );

        let payload = ot::ot_send(&mut ot_sender, &pk0, &ek0, &ek1)?;
        let payload_bytes = OtWireMessage::Payload(payload).encode();
        let OtWireMessage::Payload(payload) = OtWireMessage::decode(params, &payload_bytes)?
        else {
            return Err(TransferError::OutOfOrder("payload decode"));
        };
        transcript.record(
            Direction::ToRecipient,
            MessageKind::OtPayload { slot: i as u32 },
            payload_bytes,
        );

        chosen_keys.push(ot::ot_receive(&chooser, &payload)?);
    }

    // recipient decrypts its slots, verifies every proof, joins
    let mut received_parts: Vec<Document> = Vec::with_capacity(n);
    let mut proofs: Vec<ChoiceProof> = Vec::with_capacity(n);
    for (i, (key, &bit)) in chosen_keys.iter().zip(bits.iter()).enumerate() {
        let slot = 2 * i + bit as usize;
        let plain = sym_decrypt(&batch.ciphertexts[slot], key)?;
        let (part, proof) = decode_part_bundle(&plain).map_err(|e| {
            TransferError::SenderCheated {
                slot: i,
                reason: format!("undecodable bundle: {e}"),
            }
        })?;
        if proof.tau != tau || proof.part_index != i as u32 || proof.bit != bit {
            return Err(TransferError::SenderCheated {
                slot: i,
                reason: format!(
                    "proof names (tau {}, part {}, bit {}), expected (tau {tau}, part {i}, bit {bit})",
                    proof.tau, proof.part_index, proof.bit as u8
                ),
            });
        }
        if !proof.verify(&sender.id.vk) {
            return Err(TransferError::SenderCheated {
                slot: i,
                reason: "proof signature invalid".into(),
            });
        }
        if part.width() != geometry.part_width || part.height() != geometry.part_height {
            return Err(TransferError::SenderCheated {
                slot: i,
                reason: "part has the wrong dimensions".into(),
            });
        }
        received_parts.push(part);
        proofs.push(proof);
    }
    let delivered = join(&received_parts, &geometry)?;

    sender.outgoing_tau.insert(recipient.id.label.clone(), tau);
    recipient.incoming_tau.insert(sender.id.label.clone(), tau);

    Ok(UntrustedTransfer {
        delivered: delivered.clone(),
        sender_record: SenderRecord {
            tau,
            recipient: recipient.id.label.clone(),
            k1,
            k2: Some(k2),
            statement,
            n,
            geometry: Some(geometry),
            original_received_version: sender_doc.clone(),
            whole_cfg,
            part_cfg: Some(part_cfg),
        },
        recipient_record: RecipientRecord {
            tau,
            sender: sender.id.label.clone(),
            bits,
            proofs,
            received: delivered,
        },
        transcript,
    })
}

/// Untrusted-sender flow with the standard square grid of `n` parts.
pub fn untrusted_transfer<R: RngCore + CryptoRng>(
    params: &GroupParams,
    sender: &mut PartyState,
    sender_doc: &Document,
    recipient: &mut PartyState,
    n: usize,
    behavior: SenderBehavior,
    rng: &mut R,
) -> Result<UntrustedTransfer, TransferError> {
    let geometry = SplitGeometry::square(sender_doc.width(), sender_doc.height(), n)?;
    untrusted_transfer_with_geometry(params, sender, sender_doc, recipient, geometry, behavior, rng)
}

/// Recomputes the `2n` marked part versions a sender could assemble from
/// its record; the raw material of a framing attempt.
pub fn sender_part_versions(
    record: &SenderRecord,
) -> Result<Vec<(Document, Document)>, TransferError> {
    let geometry = record
        .geometry
        .ok_or_else(|| TransferError::MalformedRecord("record has no geometry".into()))?;
    let k2 = record
        .k2
        .ok_or_else(|| TransferError::MalformedRecord("record has no part key".into()))?;
    let part_cfg = record
        .part_cfg
        .ok_or_else(|| TransferError::MalformedRecord("record has no part config".into()))?;
    let marked = embed(
        &record.original_received_version,
        &WatermarkDescriptor::whole(record.statement.payload_bytes(), record.k1),
        &record.whole_cfg,
    )?;
    let parts = split_with(&marked, &geometry)?;
    parts
        .iter()
        .enumerate()
        .map(|(i, part)| {
            Ok((
                embed(
                    part,
                    &WatermarkDescriptor::part_bit(false, k2, i as u32),
                    &part_cfg,
                )?,
                embed(
                    part,
                    &WatermarkDescriptor::part_bit(true, k2, i as u32),
                    &part_cfg,
                )?,
            ))
        })
        .collect()
}

/// Joins a guessed choice of part versions, the document a framing
/// sender would publish.
pub fn guessed_join(
    record: &SenderRecord,
    guess: &[bool],
) -> Result<Document, TransferError> {
    let geometry = record
        .geometry
        .ok_or_else(|| TransferError::MalformedRecord("record has no geometry".into()))?;
    let versions = sender_part_versions(record)?;
    if guess.len() != versions.len() {
        return Err(TransferError::MalformedRecord(format!(
            "guess of {} bits for {} parts",
            guess.len(),
            versions.len()
        )));
    }
    let picked: Vec<Document> = versions
        .into_iter()
        .zip(guess.iter())
        .map(|((zero, one), &bit)| if bit { one } else { zero })
        .collect();
    Ok(join(&picked, &geometry)?)
}

// ---------------------------------------------------------------------------
// Persistence: records and transcripts as JSON metadata + binary attachments.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SenderRecordMeta {
    tau: u64,
    recipient: String,
    statement: Statement,
    n: usize,
    geometry: Option<SplitGeometry>,
    whole_cfg: EmbedConfig,
    part_cfg: Option<EmbedConfig>,
    has_k2: bool,
}

fn write_key_file(path: &Path, key: &WatermarkKey) -> Result<(), TransferError> {
    fs::write(
        path,
        crypto::encode_tagged(crypto::tags::WATERMARK_KEY, key.as_bytes()),
    )?;
    Ok(())
}

fn read_key_file(path: &Path) -> Result<WatermarkKey, TransferError> {
    let bytes = crypto::decode_tagged(crypto::tags::WATERMARK_KEY, &fs::read(path)?)?;
    let arr: [u8; 32] = bytes
        .try_into()
        .map_err(|_| TransferError::MalformedRecord("watermark key length".into()))?;
    Ok(WatermarkKey::from_bytes(arr))
}

/// Persists a sender record as `record.json` + `k1.bin`/`k2.bin` +
/// `original.pgm` under `dir`.
pub fn save_sender_record(dir: &Path, record: &SenderRecord) -> Result<(), TransferError> {
    fs::create_dir_all(dir)?;
    let meta = SenderRecordMeta {
        tau: record.tau,
        recipient: record.recipient.clone(),
        statement: record.statement.clone(),
        n: record.n,
        geometry: record.geometry,
        whole_cfg: record.whole_cfg,
        part_cfg: record.part_cfg,
        has_k2: record.k2.is_some(),
    };
    fs::write(dir.join("record.json"), serde_json::to_vec_pretty(&meta)?)?;
    write_key_file(&dir.join("k1.bin"), &record.k1)?;
    if let Some(k2) = &record.k2 {
        write_key_file(&dir.join("k2.bin"), k2)?;
    }
    fs::write(
        dir.join("original.pgm"),
        record.original_received_version.to_pgm_bytes(),
    )?;
    Ok(())
}

pub fn load_sender_record(dir: &Path) -> Result<SenderRecord, TransferError> {
    let meta: SenderRecordMeta =
        serde_json::from_slice(&fs::read(dir.join("record.json"))?)?;
    let k1 = read_key_file(&dir.join("k1.bin"))?;
    let k2 = if meta.has_k2 {
        Some(read_key_file(&dir.join("k2.bin"))?)
    } else {
        None
    };
    let original = Document::from_pgm_bytes(&fs::read(dir.join("original.pgm"))?)?;
    Ok(SenderRecord {
        tau: meta.tau,
        recipient: meta.recipient,
        k1,
        k2,
        statement: meta.statement,
        n: meta.n,
        geometry: meta.geometry,
        original_received_version: original,
        whole_cfg: meta.whole_cfg,
        part_cfg: meta.part_cfg,
    })
}

#[derive(Serialize, Deserialize)]
struct RecipientRecordMeta {
    tau: u64,
    sender: String,
    bits: Vec<bool>,
    proofs: Vec<ChoiceProof>,
}

/// Persists a recipient record as `record.json` + `received.pgm`.
pub fn save_recipient_record(dir: &Path, record: &RecipientRecord) -> Result<(), TransferError> {
    fs::create_dir_all(dir)?;
    let meta = RecipientRecordMeta {
        tau: record.tau,
        sender: record.sender.clone(),
        bits: record.bits.clone(),
        proofs: record.proofs.clone(),
    };
    fs::write(dir.join("record.json"), serde_json::to_vec_pretty(&meta)?)?;
    fs::write(dir.join("received.pgm"), record.received.to_pgm_bytes())?;
    Ok(())
}

pub fn load_recipient_record(dir: &Path) -> Result<RecipientRecord, TransferError> {
    let meta: RecipientRecordMeta =
        serde_json::from_slice(&fs::read(dir.join("record.json"))?)?;
    if meta.bits.len() != meta.proofs.len() {
        return Err(TransferError::MalformedRecord(
            "bits/proofs length mismatch".into(),
        ));
    }
    let received = Document::from_pgm_bytes(&fs::read(dir.join("received.pgm"))?)?;
    Ok(RecipientRecord {
        tau: meta.tau,
        sender: meta.sender,
        bits: meta.bits,
        proofs: meta.proofs,
        received,
    })
}

#[derive(Serialize, Deserialize)]
struct TranscriptEntryMeta {
    direction: Direction,
    #[serde(flatten)]
    kind: MessageKind,
    attachment: String,
    bytes: usize,
}

/// Persists a transcript as `transcript.json` plus one binary attachment
/// per message in a `data/` sibling directory.
pub fn save_transcript(dir: &Path, transcript: &Transcript) -> Result<(), TransferError> {
    let data_dir = dir.join("data");
    fs::create_dir_all(&data_dir)?;
    let mut metas = Vec::with_capacity(transcript.entries.len());
    for (i, entry) in transcript.entries.iter().enumerate() {
        let name = format!("{i:04}.bin");
        fs::write(data_dir.join(&name), &entry.bytes)?;
        metas.push(TranscriptEntryMeta {
            direction: entry.direction,
            kind: entry.kind.clone(),
            attachment: format!("data/{name}"),
            bytes: entry.bytes.len(),
        });
    }
    fs::write(
        dir.join("transcript.json"),
        serde_json::to_vec_pretty(&metas)?,
    )?;
    Ok(())
}

pub fn load_transcript(dir: &Path) -> Result<Transcript, TransferError> {
    let metas: Vec<TranscriptEntryMeta> =
        serde_json::from_slice(&fs::read(dir.join("transcript.json"))?)?;
    let mut entries = Vec::with_capacity(metas.len());
    for meta in metas {
        let bytes = fs::read(dir.join(&meta.attachment))?;
        entries.push(TranscriptEntry {
            direction: meta.direction,
            kind: meta.kind,
            bytes,
        });
    }
    Ok(Transcript { entries })
}
