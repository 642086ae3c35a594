//! Multi-party simulation harness.
//!
//! Scenarios are scripted as JSON: parties with roles, ordered transfer
//! edges, a leak action and the expected verdict. The harness executes
//! the transfers over synchronous in-memory message passing, performs
//! the leak, invokes the auditor and compares its verdict against the
//! ground truth it tracked out of band. Adversary strategies plug
//! alternative party behavior into the very same protocol machinery.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{
    audit_composed, generate_lineage, AuditError, ComponentRegion, Lineage, PartyDirectory,
    SuspectResponse, TolerancePolicy,
};
use crate::crypto::group::GroupParams;
use crate::document::{concat_horizontal, Document, DocumentError, SplitGeometry};
use crate::protocol::{
    guessed_join, trusted_transfer, untrusted_transfer_with_geometry, ChoiceProof, PartyId,
    PartyState, RecipientRecord, Role, SenderBehavior, SenderRecord, TransferError,
};
use crate::synth;
use crate::watermark::{
    detect, detect_part_bit, embed, PartBit, WatermarkDescriptor, WatermarkKey,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown party {0}")]
    UnknownParty(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("party {0} holds no document to act on")]
    NothingToSend(String),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Document(#[from] DocumentError),
    #[error(transparent)]
    Ot(#[from] crate::ot::OtError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartySpec {
    pub id: String,
    pub role: Role,
}

/// Where the scenario's document comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DocumentSource {
    Random { width: u32, height: u32 },
    TestImage,
}

impl Default for DocumentSource {
    fn default() -> Self {
        DocumentSource::Random {
            width: 256,
            height: 256,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeProtocol {
    /// Verbatim handover, only between two owners (non-repudiation).
    Plain,
    /// Fig. 3 flow; requires a trusted (owner) sender.
    Trusted,
    /// Full untrusted-sender flow.
    Untrusted,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub protocol: EdgeProtocol,
    #[serde(default)]
    pub parts: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakVersion {
    /// The origin owner's pristine document.
    Original,
    /// The version received over an edge (the latest one by default).
    Received,
    /// The sender-side marked intermediate of an outgoing edge.
    SenderCopy,
    /// A framing attempt: the sender's guess at the recipient's version.
    FramingGuess,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LeakAction {
    pub party: String,
    pub version: LeakVersion,
    #[serde(default)]
    pub edge: Option<usize>,
}

/// A scripted scenario; see `scenarios/` in the repository root for
/// examples of the JSON form.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub parties: Vec<PartySpec>,
    #[serde(default)]
    pub document: DocumentSource,
    pub edges: Vec<Edge>,
    pub leak: LeakAction,
    pub expected_verdict: String,
    #[serde(default)]
    pub audit_owner: Option<String>,
    #[serde(default)]
    pub policy: Option<TolerancePolicy>,
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// One simulated party: protocol state plus everything it holds.
pub struct SimParty {
    pub state: PartyState,
    pub original: Option<Document>,
    /// Received versions by edge index.
    pub received: Vec<(usize, Document)>,
    pub sender_records: Vec<SenderRecord>,
    pub recipient_records: Vec<RecipientRecord>,
}

/// In-memory world: parties, their holdings and the transfer records the
/// auditor will later query.
pub struct Simulation {
    pub params: GroupParams,
    parties: HashMap<String, SimParty>,
    /// Sender record locations by edge index: (party, record index).
    edge_records: HashMap<usize, (String, usize)>,
}

impl Simulation {
    pub fn new(params: GroupParams) -> Self {
        Simulation {
            params,
            parties: HashMap::new(),
            edge_records: HashMap::new(),
        }
    }

    pub fn add_party<R: Rng + rand::CryptoRng>(&mut self, label: &str, role: Role, rng: &mut R) {
        let state = PartyState::new(label, role, rng);
        self.parties.insert(
            label.to_string(),
            SimParty {
                state,
                original: None,
                received: Vec::new(),
                sender_records: Vec::new(),
                recipient_records: Vec::new(),
            },
        );
    }

    pub fn give_original(&mut self, label: &str, doc: Document) -> Result<(), ScenarioError> {
        self.parties
            .get_mut(label)
            .ok_or_else(|| ScenarioError::UnknownParty(label.to_string()))?
            .original = Some(doc);
        Ok(())
    }

    pub fn party_mut(&mut self, label: &str) -> Result<&mut SimParty, ScenarioError> {
        self.parties
            .get_mut(label)
            .ok_or_else(|| ScenarioError::UnknownParty(label.to_string()))
    }

    pub fn party_ref(&self, label: &str) -> Result<&SimParty, ScenarioError> {
        self.parties
            .get(label)
            .ok_or_else(|| ScenarioError::UnknownParty(label.to_string()))
    }

    /// The version a party would send next: the latest received one, or
    /// its own original.
    pub fn sending_version(&self, label: &str) -> Result<Document, ScenarioError> {
        let party = self.party_ref(label)?;
        if let Some((_, doc)) = party.received.last() {
            return Ok(doc.clone());
        }
        party
            .original
            .clone()
            .ok_or_else(|| ScenarioError::NothingToSend(label.to_string()))
    }

    fn take_pair(
        &mut self,
        from: &str,
        to: &str,
    ) -> Result<(SimParty, SimParty), ScenarioError> {
        if from == to {
            return Err(ScenarioError::Invalid("self transfer".into()));
        }
        let sender = self
            .parties
            .remove(from)
            .ok_or_else(|| ScenarioError::UnknownParty(from.to_string()))?;
        let recipient = match self.parties.remove(to) {
            Some(r) => r,
            None => {
                self.parties.insert(from.to_string(), sender);
                return Err(ScenarioError::UnknownParty(to.to_string()));
            }
        };
        Ok((sender, recipient))
    }

    fn put_pair(&mut self, from: &str, to: &str, sender: SimParty, recipient: SimParty) {
        self.parties.insert(from.to_string(), sender);
        self.parties.insert(to.to_string(), recipient);
    }

    /// Executes one transfer edge. Returns the protocol error on abort
    /// so the caller can record it as a scenario outcome.
    pub fn run_edge<R: Rng + rand::CryptoRng>(
        &mut self,
        index: usize,
        edge: &Edge,
        doc: Document,
        behavior: SenderBehavior,
        rng: &mut R,
    ) -> Result<(), TransferOrSetup> {
        let (mut sender, mut recipient) = self
            .take_pair(&edge.from, &edge.to)
            .map_err(TransferOrSetup::Setup)?;
        let result = (|| -> Result<(), TransferOrSetup> {
            match edge.protocol {
                EdgeProtocol::Plain => {
                    if sender.state.id.role != Role::Owner
                        || recipient.state.id.role != Role::Owner
                    {
                        return Err(TransferOrSetup::Setup(ScenarioError::Invalid(
                            "plain handover is restricted to owner pairs".into(),
                        )));
                    }
                    recipient.received.push((index, doc));
                    Ok(())
                }
                EdgeProtocol::Trusted => {
                    let outcome =
                        trusted_transfer(&mut sender.state, &doc, &mut recipient.state, rng)
                            .map_err(TransferOrSetup::Abort)?;
                    recipient.received.push((index, outcome.delivered));
                    self.edge_records
                        .insert(index, (edge.from.clone(), sender.sender_records.len()));
                    sender.sender_records.push(outcome.sender_record);
                    Ok(())
                }
                EdgeProtocol::Untrusted => {
                    let n = edge.parts.unwrap_or(16);
                    let geometry = SplitGeometry::square(doc.width(), doc.height(), n)
                        .map_err(|e| TransferOrSetup::Abort(e.into()))?;
                    let outcome = untrusted_transfer_with_geometry(
                        &self.params,
                        &mut sender.state,
                        &doc,
                        &mut recipient.state,
                        geometry,
                        behavior,
                        rng,
                    )
                    .map_err(TransferOrSetup::Abort)?;
                    recipient.received.push((index, outcome.delivered));
                    recipient.recipient_records.push(outcome.recipient_record);
                    self.edge_records
                        .insert(index, (edge.from.clone(), sender.sender_records.len()));
                    sender.sender_records.push(outcome.sender_record);
                    Ok(())
                }
            }
        })();
        self.put_pair(&edge.from, &edge.to, sender, recipient);
        result
    }

    pub fn sender_record_for_edge(&self, index: usize) -> Option<&SenderRecord> {
        let (label, rec_index) = self.edge_records.get(&index)?;
        self.parties.get(label)?.sender_records.get(*rec_index)
    }

    /// Untrusted transfer along an explicit (possibly rectangular) grid,
    /// bypassing the square-count edge schema.
    pub fn run_untrusted_with_geometry<R: Rng + rand::CryptoRng>(
        &mut self,
        index: usize,
        from: &str,
        to: &str,
        doc: Document,
        geometry: SplitGeometry,
        behavior: SenderBehavior,
        rng: &mut R,
    ) -> Result<(), TransferOrSetup> {
        let (mut sender, mut recipient) =
            self.take_pair(from, to).map_err(TransferOrSetup::Setup)?;
        let result = untrusted_transfer_with_geometry(
            &self.params,
            &mut sender.state,
            &doc,
            &mut recipient.state,
            geometry,
            behavior,
            rng,
        );
        let outcome = match result {
            Ok(outcome) => outcome,
            Err(e) => {
                self.put_pair(from, to, sender, recipient);
                return Err(TransferOrSetup::Abort(e));
            }
        };
        recipient.received.push((index, outcome.delivered));
        recipient.recipient_records.push(outcome.recipient_record);
        self.edge_records
            .insert(index, (from.to_string(), sender.sender_records.len()));
        sender.sender_records.push(outcome.sender_record);
        self.put_pair(from, to, sender, recipient);
        Ok(())
    }
}

/// Distinguishes protocol aborts (scenario outcomes) from harness
/// misconfiguration (errors).
#[derive(Debug)]
pub enum TransferOrSetup {
    Abort(TransferError),
    Setup(ScenarioError),
}

fn response_from_record(record: &SenderRecord) -> SuspectResponse {
    SuspectResponse {
        k1: record.k1,
        k2: record.k2,
        statement: record.statement.clone(),
        original: record.original_received_version.clone(),
        n: record.n,
        geometry: record.geometry,
        whole_cfg: record.whole_cfg,
        part_cfg: record.part_cfg,
    }
}

impl PartyDirectory for Simulation {
    fn party(&self, label: &str) -> Option<PartyId> {
        self.parties.get(label).map(|p| p.state.id.clone())
    }

    fn suspect_response(
        &self,
        suspect: &str,
        leaked_views: &[&Document],
    ) -> Option<SuspectResponse> {
        let party = self.parties.get(suspect)?;
        if party.sender_records.is_empty() {
            return None;
        }
        // an honest suspect looks for the transfer whose mark is present
        for record in &party.sender_records {
            for view in leaked_views {
                if !view.same_dimensions(&record.original_received_version) {
                    continue;
                }
                let desc =
                    WatermarkDescriptor::whole(record.statement.payload_bytes(), record.k1);
                if detect(view, &desc, &record.original_received_version, &record.whole_cfg)
                    .unwrap_or(false)
                {
                    return Some(response_from_record(record));
                }
            }
        }
        // nothing matches: disclose the first plausible record anyway
        party
            .sender_records
            .iter()
            .find(|r| {
                leaked_views
                    .iter()
                    .any(|v| v.same_dimensions(&r.original_received_version))
            })
            .or(party.sender_records.first())
            .map(response_from_record)
    }

    fn choice_proofs(&self, recipient: &str, sender: &str, tau: u64) -> Option<Vec<ChoiceProof>> {
        self.parties.get(recipient)?.recipient_records.iter().find_map(|r| {
            (r.sender == sender && r.tau == tau).then(|| r.proofs.clone())
        })
    }
}

/// Result of one scenario run.
#[derive(Debug, Serialize)]
pub struct ScenarioOutcome {
    pub name: String,
    pub expected_verdict: String,
    pub lineage: Option<Lineage>,
    pub verdict_matches: bool,
    pub transfer_abort: Option<String>,
}

fn build_document<R: Rng + ?Sized>(source: &DocumentSource, rng: &mut R) -> Document {
    match source {
        DocumentSource::Random { width, height } => synth::random_document(rng, *width, *height),
        DocumentSource::TestImage => synth::test_image(),
    }
}

fn first_owner(scenario: &Scenario) -> Option<&str> {
    scenario
        .parties
        .iter()
        .find(|p| p.role == Role::Owner)
        .map(|p| p.id.as_str())
}

fn validate(scenario: &Scenario) -> Result<(), ScenarioError> {
    let mut labels = std::collections::HashSet::new();
    for p in &scenario.parties {
        if !labels.insert(p.id.as_str()) {
            return Err(ScenarioError::Invalid(format!("duplicate party {}", p.id)));
        }
    }
    let role_of = |label: &str| {
        scenario
            .parties
            .iter()
            .find(|p| p.id == label)
            .map(|p| p.role)
            .ok_or_else(|| ScenarioError::UnknownParty(label.to_string()))
    };
    for edge in &scenario.edges {
        let from = role_of(&edge.from)?;
        let to = role_of(&edge.to)?;
        match edge.protocol {
            EdgeProtocol::Plain => {
                if from != Role::Owner || to != Role::Owner {
                    return Err(ScenarioError::Invalid(
                        "plain handover allowed only between owners; transfers involving a \
                         consumer must fingerprint"
                            .into(),
                    ));
                }
            }
            EdgeProtocol::Trusted => {
                if from != Role::Owner {
                    return Err(ScenarioError::Invalid(format!(
                        "trusted protocol requires an owner sender, {} is a consumer",
                        edge.from
                    )));
                }
            }
            EdgeProtocol::Untrusted => {}
        }
    }
    role_of(&scenario.leak.party)?;
    role_of(&scenario.expected_verdict)?;
    if first_owner(scenario).is_none() {
        return Err(ScenarioError::Invalid("no owner party".into()));
    }
    Ok(())
}

/// Materializes the leaked document per the scenario's leak action.
fn materialize_leak(
    sim: &Simulation,
    leak: &LeakAction,
    rng: &mut ChaCha20Rng,
) -> Result<Document, ScenarioError> {
    let party = sim.party_ref(&leak.party)?;
    match leak.version {
        LeakVersion::Original => party
            .original
            .clone()
            .ok_or_else(|| ScenarioError::NothingToSend(leak.party.clone())),
        LeakVersion::Received => match leak.edge {
            Some(edge) => party
                .received
                .iter()
                .find(|(i, _)| *i == edge)
                .map(|(_, d)| d.clone())
                .ok_or_else(|| ScenarioError::Invalid(format!("no received doc on edge {edge}"))),
            None => party
                .received
                .last()
                .map(|(_, d)| d.clone())
                .ok_or_else(|| ScenarioError::NothingToSend(leak.party.clone())),
        },
        LeakVersion::SenderCopy | LeakVersion::FramingGuess => {
            let edge = leak.edge.ok_or_else(|| {
                ScenarioError::Invalid("sender-side leaks need an edge index".into())
            })?;
            let record = sim
                .sender_record_for_edge(edge)
                .ok_or_else(|| ScenarioError::Invalid(format!("edge {edge} has no record")))?;
            match leak.version {
                LeakVersion::SenderCopy => {
                    // the sender-held intermediate: original plus the
                    // statement mark (for trusted transfers this is the
                    // delivered version itself)
                    let desc = WatermarkDescriptor::whole(
                        record.statement.payload_bytes(),
                        record.k1,
                    );
                    Ok(embed(
                        &record.original_received_version,
                        &desc,
                        &record.whole_cfg,
                    )
                    .map_err(TransferError::from)?)
                }
                LeakVersion::FramingGuess => {
                    let guess: Vec<bool> = (0..record.n).map(|_| rng.gen()).collect();
                    Ok(guessed_join(record, &guess)?)
                }
                _ => unreachable!(),
            }
        }
    }
}

/// Executes a scenario end to end under a fixed seed: build parties, run
/// every transfer, perform the leak, run the auditor, compare verdicts.
pub fn run_scenario(
    scenario: &Scenario,
    seed: u64,
    params: &GroupParams,
) -> Result<ScenarioOutcome, ScenarioError> {
    validate(scenario)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sim = Simulation::new(*params);
    for spec in &scenario.parties {
        sim.add_party(&spec.id, spec.role, &mut rng);
    }
    let origin = first_owner(scenario).expect("validated").to_string();
    let doc = build_document(&scenario.document, &mut rng);
    sim.give_original(&origin, doc)?;

    for (index, edge) in scenario.edges.iter().enumerate() {
        let doc = sim.sending_version(&edge.from)?;
        match sim.run_edge(index, edge, doc, SenderBehavior::Honest, &mut rng) {
            Ok(()) => {}
            Err(TransferOrSetup::Abort(e)) => {
                return Ok(ScenarioOutcome {
                    name: scenario.name.clone(),
                    expected_verdict: scenario.expected_verdict.clone(),
                    lineage: None,
                    verdict_matches: false,
                    transfer_abort: Some(e.to_string()),
                });
            }
            Err(TransferOrSetup::Setup(e)) => return Err(e),
        }
    }

    let leaked = materialize_leak(&sim, &scenario.leak, &mut rng)?;
    let audit_owner = scenario
        .audit_owner
        .clone()
        .unwrap_or_else(|| origin.clone());
    let policy = scenario.policy.unwrap_or_default();
    let lineage = generate_lineage(&leaked, &audit_owner, &sim, &policy)?;
    let verdict_matches = lineage.verdict == scenario.expected_verdict;
    Ok(ScenarioOutcome {
        name: scenario.name.clone(),
        expected_verdict: scenario.expected_verdict.clone(),
        lineage: Some(lineage),
        verdict_matches,
        transfer_abort: None,
    })
}

/// Canned scenarios mirroring the real-world settings the framework
/// targets.
pub fn builtin_scenarios() -> Vec<Scenario> {
    vec![
        Scenario {
            name: "outsourcing".into(),
            parties: vec![
                PartySpec { id: "organization".into(), role: Role::Owner },
                PartySpec { id: "company_a".into(), role: Role::Consumer },
                PartySpec { id: "company_b".into(), role: Role::Consumer },
                PartySpec { id: "company_c".into(), role: Role::Consumer },
            ],
            document: DocumentSource::Random { width: 512, height: 512 },
            edges: vec![
                Edge { from: "organization".into(), to: "company_a".into(), protocol: EdgeProtocol::Untrusted, parts: Some(16) },
                Edge { from: "company_a".into(), to: "company_b".into(), protocol: EdgeProtocol::Untrusted, parts: Some(16) },
                Edge { from: "company_b".into(), to: "company_c".into(), protocol: EdgeProtocol::Untrusted, parts: Some(16) },
            ],
            leak: LeakAction { party: "company_b".into(), version: LeakVersion::Received, edge: None },
            expected_verdict: "company_b".into(),
            audit_owner: None,
            policy: None,
        },
        Scenario {
            name: "online-social-network".into(),
            parties: vec![
                PartySpec { id: "user".into(), role: Role::Owner },
                PartySpec { id: "osn".into(), role: Role::Consumer },
                PartySpec { id: "third_party_app".into(), role: Role::Consumer },
            ],
            document: DocumentSource::Random { width: 256, height: 256 },
            edges: vec![
                Edge { from: "user".into(), to: "osn".into(), protocol: EdgeProtocol::Trusted, parts: None },
                Edge { from: "osn".into(), to: "third_party_app".into(), protocol: EdgeProtocol::Untrusted, parts: Some(16) },
            ],
            leak: LeakAction { party: "third_party_app".into(), version: LeakVersion::Received, edge: None },
            expected_verdict: "third_party_app".into(),
            audit_owner: None,
            policy: None,
        },
        Scenario {
            name: "owner-self-leak".into(),
            parties: vec![
                PartySpec { id: "owner".into(), role: Role::Owner },
                PartySpec { id: "consumer".into(), role: Role::Consumer },
            ],
            document: DocumentSource::Random { width: 256, height: 256 },
            edges: vec![Edge {
                from: "owner".into(),
                to: "consumer".into(),
                protocol: EdgeProtocol::Untrusted,
                parts: Some(16),
            }],
            leak: LeakAction { party: "owner".into(), version: LeakVersion::Original, edge: None },
            expected_verdict: "owner".into(),
            audit_owner: None,
            policy: None,
        },
    ]
}

// ---------------------------------------------------------------------------
// Adversary trials
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryStrategy {
    Honest,
    FramingGuess,
    VersionSwap,
    StatementReplay,
    BitRemovalNoise,
    TwoPartyAverage,
}

/// Outcome of a batch of adversary trials: how often the auditor's
/// verdict wrongly blamed an innocent party or failed to blame the true
/// leaker.
#[derive(Clone, Debug, Serialize)]
pub struct TrialReport {
    pub strategy: AdversaryStrategy,
    pub n: usize,
    pub trials: usize,
    pub adversary_successes: usize,
    pub success_rate: f64,
}

/// A 32x32-tiled grid for `n` parts: square when `n` is a perfect
/// square, otherwise the most balanced `rows x cols` factorization.
pub fn geometry_for_parts(n: usize) -> Result<SplitGeometry, DocumentError> {
    if n == 0 {
        return Err(DocumentError::InvalidSplit("n must be positive".into()));
    }
    let mut rows = 1;
    for r in (1..=((n as f64).sqrt() as usize)).rev() {
        if n % r == 0 {
            rows = r;
            break;
        }
    }
    let cols = n / rows;
    SplitGeometry::grid(32 * cols as u32, 32 * rows as u32, rows as u32, cols as u32)
}

fn noisy_copy(doc: &Document, sigma: f64, rng: &mut ChaCha20Rng) -> Document {
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    Document::new(
        doc.width(),
        doc.height(),
        doc.pixels()
            .iter()
            .map(|&p| (p as f64 + normal.sample(rng)).round().clamp(0.0, 255.0) as u8)
            .collect(),
    )
    .expect("unchanged dimensions")
}

/// Pixelwise mean of same-sized documents, the collusion merge.
pub fn average_documents(docs: &[&Document]) -> Result<Document, DocumentError> {
    let first = docs.first().expect("at least one document");
    let mut sums = vec![0u32; first.pixel_count()];
    for doc in docs {
        if !doc.same_dimensions(first) {
            return Err(DocumentError::Incomparable(
                first.width(),
                first.height(),
                doc.width(),
                doc.height(),
            ));
        }
        for (s, &p) in sums.iter_mut().zip(doc.pixels()) {
            *s += p as u32;
        }
    }
    let count = docs.len() as u32;
    Document::new(
        first.width(),
        first.height(),
        sums.iter()
            .map(|&s| ((s + count / 2) / count) as u8)
            .collect(),
    )
}

/// One adversary trial: returns `true` when the adversary beat the
/// audit (innocent blamed, or true leaker not blamed).
fn adversary_trial(
    strategy: AdversaryStrategy,
    geometry: SplitGeometry,
    params: &GroupParams,
    seed: u64,
) -> Result<bool, ScenarioError> {
    adversary_trial_lineage(strategy, geometry, params, seed).map(|(_, success)| success)
}

fn adversary_trial_lineage(
    strategy: AdversaryStrategy,
    geometry: SplitGeometry,
    params: &GroupParams,
    seed: u64,
) -> Result<(Lineage, bool), ScenarioError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sim = Simulation::new(*params);
    sim.add_party("owner", Role::Owner, &mut rng);
    sim.add_party("sender", Role::Consumer, &mut rng);
    sim.add_party("recipient", Role::Consumer, &mut rng);
    let doc = synth::random_document(
        &mut rng,
        geometry.document_width(),
        geometry.document_height(),
    );
    sim.give_original("owner", doc.clone())?;

    if strategy == AdversaryStrategy::TwoPartyAverage {
        // the owner sends the same document to two consumers who merge
        sim.run_untrusted_with_geometry(
            0, "owner", "sender", doc.clone(), geometry, SenderBehavior::Honest, &mut rng,
        )
        .map_err(flatten_edge_error)?;
        sim.run_untrusted_with_geometry(
            1, "owner", "recipient", doc, geometry, SenderBehavior::Honest, &mut rng,
        )
        .map_err(flatten_edge_error)?;
        let a = sim.party_ref("sender")?.received[0].1.clone();
        let b = sim.party_ref("recipient")?.received[0].1.clone();
        let leaked = average_documents(&[&a, &b])?;
        let lineage = generate_lineage(&leaked, "owner", &sim, &TolerancePolicy::strict())?;
        let escaped = lineage.verdict != "sender" && lineage.verdict != "recipient";
        return Ok((lineage, escaped));
    }

    // owner hands off to the (possibly malicious) sender, who passes a
    // fingerprinted version on to the recipient
    let trusted_edge = Edge {
        from: "owner".into(),
        to: "sender".into(),
        protocol: EdgeProtocol::Trusted,
        parts: None,
    };
    run_edge_or_setup(&mut sim, 0, &trusted_edge, doc, SenderBehavior::Honest, &mut rng)?;
    let held = sim.sending_version("sender")?;
    let behavior = if strategy == AdversaryStrategy::VersionSwap {
        SenderBehavior::SwapVersions
    } else {
        SenderBehavior::Honest
    };
    sim.run_untrusted_with_geometry(
        1, "sender", "recipient", held.clone(), geometry, behavior, &mut rng,
    )
    .map_err(flatten_edge_error)?;

    let leaked = match strategy {
        AdversaryStrategy::Honest | AdversaryStrategy::VersionSwap => {
            sim.party_ref("recipient")?.received[0].1.clone()
        }
        AdversaryStrategy::BitRemovalNoise => {
            let received = sim.party_ref("recipient")?.received[0].1.clone();
            noisy_copy(&received, 2.0, &mut rng)
        }
        AdversaryStrategy::FramingGuess => {
            let record = sim
                .sender_record_for_edge(1)
                .expect("edge 1 just ran")
                .clone();
            let guess: Vec<bool> = (0..record.n).map(|_| rng.gen()).collect();
            guessed_join(&record, &guess)?
        }
        AdversaryStrategy::StatementReplay => {
            // the sender reuses the recipient's old signed statement on a
            // freshly fabricated marked version with guessed bits
            let record = sim
                .sender_record_for_edge(1)
                .expect("edge 1 just ran")
                .clone();
            let fake = forge_with_replayed_statement(&record, &held, &mut rng)?;
            let guess: Vec<bool> = (0..fake.n).map(|_| rng.gen()).collect();
            let leaked = guessed_join(&fake, &guess)?;
            // the attacker answers the auditor with the forged record
            sim.party_mut("sender")?.sender_records = vec![fake];
            leaked
        }
        AdversaryStrategy::TwoPartyAverage => unreachable!("handled above"),
    };

    let lineage = generate_lineage(&leaked, "owner", &sim, &TolerancePolicy::strict())?;
    let success = match strategy {
        // framing and replay succeed when the innocent recipient is blamed
        AdversaryStrategy::FramingGuess | AdversaryStrategy::StatementReplay => {
            lineage.verdict == "recipient"
        }
        // denial-flavored strategies succeed when the true leaker walks
        AdversaryStrategy::Honest
        | AdversaryStrategy::VersionSwap
        | AdversaryStrategy::BitRemovalNoise => lineage.verdict != "recipient",
        AdversaryStrategy::TwoPartyAverage => unreachable!("handled above"),
    };
    Ok((lineage, success))
}

fn forge_with_replayed_statement(
    record: &SenderRecord,
    held: &Document,
    rng: &mut ChaCha20Rng,
) -> Result<SenderRecord, ScenarioError> {
    let mut fake = record.clone();
    fake.k1 = WatermarkKey::generate(rng);
    fake.k2 = Some(WatermarkKey::generate(rng));
    fake.original_received_version = held.clone();
    Ok(fake)
}

fn flatten_edge_error(e: TransferOrSetup) -> ScenarioError {
    match e {
        TransferOrSetup::Abort(e) => ScenarioError::Transfer(e),
        TransferOrSetup::Setup(e) => e,
    }
}

fn run_edge_or_setup(
    sim: &mut Simulation,
    index: usize,
    edge: &Edge,
    doc: Document,
    behavior: SenderBehavior,
    rng: &mut ChaCha20Rng,
) -> Result<(), ScenarioError> {
    match sim.run_edge(index, edge, doc, behavior, rng) {
        Ok(()) => Ok(()),
        Err(TransferOrSetup::Abort(e)) => Err(ScenarioError::Transfer(e)),
        Err(TransferOrSetup::Setup(e)) => Err(e),
    }
}

/// Runs one trial and returns the full lineage for inspection.
#[doc(hidden)]
pub fn debug_adversary_trial(
    strategy: AdversaryStrategy,
    n: usize,
    params: &GroupParams,
    seed: u64,
) -> Result<Lineage, ScenarioError> {
    let geometry = geometry_for_parts(n)?;
    adversary_trial_lineage(strategy, geometry, params, seed).map(|(l, _)| l)
}

/// Repeats an adversary strategy over independent trials with per-trial
/// seeds derived from the master seed; trials run in parallel.
pub fn run_adversary_trials(
    strategy: AdversaryStrategy,
    n: usize,
    trials: usize,
    seed: u64,
    params: &GroupParams,
) -> Result<TrialReport, ScenarioError> {
    let geometry = geometry_for_parts(n)?;
    let mut seeder = ChaCha20Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..trials).map(|_| seeder.gen()).collect();
    let successes: usize = seeds
        .par_iter()
        .map(|&s| adversary_trial(strategy, geometry, params, s).map(usize::from))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(TrialReport {
        strategy,
        n,
        trials,
        adversary_successes: successes,
        success_rate: successes as f64 / trials as f64,
    })
}

// ---------------------------------------------------------------------------
// Collusion
// ---------------------------------------------------------------------------

/// Empirical collusion outcomes: no acceptance threshold exists, the
/// report records what survived the merge.
#[derive(Clone, Debug, Serialize)]
pub struct CollusionReport {
    pub colluders: usize,
    pub parts: usize,
    pub trials: usize,
    /// Per-colluder rate at which its statement mark stayed detectable.
    pub sigma_detection_rate: Vec<f64>,
    /// Aggregate per-part bit outcomes across all colluders and trials.
    pub part_outcomes: HashMap<String, usize>,
    /// Verdict distribution of full lineage runs on the merged leak.
    pub verdicts: HashMap<String, usize>,
}

/// Several recipients of the same document average their versions and
/// leak the merge; the report logs which marks survive.
pub fn run_collusion(
    colluders: usize,
    n: usize,
    trials: usize,
    seed: u64,
    params: &GroupParams,
) -> Result<CollusionReport, ScenarioError> {
    assert!(colluders >= 2, "collusion needs at least two parties");
    let geometry = geometry_for_parts(n)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sigma_detections = vec![0usize; colluders];
    let mut part_outcomes: HashMap<String, usize> = HashMap::new();
    let mut verdicts: HashMap<String, usize> = HashMap::new();

    for _ in 0..trials {
        let mut sim = Simulation::new(*params);
        sim.add_party("owner", Role::Owner, &mut rng);
        let labels: Vec<String> = (0..colluders).map(|i| format!("colluder{i}")).collect();
        for label in &labels {
            sim.add_party(label, Role::Consumer, &mut rng);
        }
        let doc = synth::random_document(
            &mut rng,
            geometry.document_width(),
            geometry.document_height(),
        );
        sim.give_original("owner", doc.clone())?;
        for (i, label) in labels.iter().enumerate() {
            let edge = Edge {
                from: "owner".into(),
                to: label.clone(),
                protocol: EdgeProtocol::Untrusted,
                parts: Some(geometry.n),
            };
            run_edge_or_setup(&mut sim, i, &edge, doc.clone(), SenderBehavior::Honest, &mut rng)?;
        }
        let versions: Vec<Document> = labels
            .iter()
            .map(|l| Ok(sim.party_ref(l)?.received[0].1.clone()))
            .collect::<Result<_, ScenarioError>>()?;
        let refs: Vec<&Document> = versions.iter().collect();
        let merged = average_documents(&refs)?;

        for (i, _) in labels.iter().enumerate() {
            let record = sim.sender_record_for_edge(i).expect("edge ran").clone();
            let desc = WatermarkDescriptor::whole(record.statement.payload_bytes(), record.k1);
            if detect(&merged, &desc, &doc, &record.whole_cfg).map_err(TransferError::from)? {
                sigma_detections[i] += 1;
            }
            let marked = embed(&doc, &desc, &record.whole_cfg).map_err(TransferError::from)?;
            let original_parts =
                crate::document::split_with(&marked, &geometry)?;
            let leaked_parts = crate::document::split_with(&merged, &geometry)?;
            for p in 0..geometry.n {
                let outcome = detect_part_bit(
                    &leaked_parts[p],
                    &record.k2.expect("untrusted record"),
                    p as u32,
                    &original_parts[p],
                    &record.part_cfg.expect("untrusted record"),
                )
                .map_err(TransferError::from)?;
                let key = match outcome {
                    PartBit::Zero => "zero",
                    PartBit::One => "one",
                    PartBit::None => "none",
                    PartBit::Both => "both",
                };
                *part_outcomes.entry(key.to_string()).or_default() += 1;
            }
        }

        let lineage = generate_lineage(&merged, "owner", &sim, &TolerancePolicy::strict())?;
        *verdicts.entry(lineage.verdict).or_default() += 1;
    }

    Ok(CollusionReport {
        colluders,
        parts: geometry.n,
        trials,
        sigma_detection_rate: sigma_detections
            .iter()
            .map(|&d| d as f64 / trials as f64)
            .collect(),
        part_outcomes,
        verdicts,
    })
}

// ---------------------------------------------------------------------------
// Composed-document scenario
// ---------------------------------------------------------------------------

/// Outcome of the two-owner composition scenario: each owner audits its
/// own component of the leaked concatenation.
#[derive(Debug, Serialize)]
pub struct ComposedOutcome {
    pub lineage_a: Lineage,
    pub lineage_b: Lineage,
    pub expected_verdict: String,
}

/// Two owners transfer their documents to a consumer, who concatenates
/// them and passes the composition on to a second consumer; the second
/// consumer leaks it. Each owner audits its own component slice.
pub fn run_composed_scenario(
    seed: u64,
    params: &GroupParams,
) -> Result<ComposedOutcome, ScenarioError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sim = Simulation::new(*params);
    sim.add_party("owner_a", Role::Owner, &mut rng);
    sim.add_party("owner_b", Role::Owner, &mut rng);
    sim.add_party("consumer1", Role::Consumer, &mut rng);
    sim.add_party("consumer2", Role::Consumer, &mut rng);

    let doc_a = synth::random_document(&mut rng, 256, 256);
    let doc_b = synth::random_document(&mut rng, 256, 256);
    sim.give_original("owner_a", doc_a.clone())?;
    sim.give_original("owner_b", doc_b.clone())?;

    let edge_a = Edge {
        from: "owner_a".into(),
        to: "consumer1".into(),
        protocol: EdgeProtocol::Untrusted,
        parts: Some(16),
    };
    let edge_b = Edge {
        from: "owner_b".into(),
        to: "consumer1".into(),
        protocol: EdgeProtocol::Untrusted,
        parts: Some(16),
    };
    run_edge_or_setup(&mut sim, 0, &edge_a, doc_a, SenderBehavior::Honest, &mut rng)?;
    run_edge_or_setup(&mut sim, 1, &edge_b, doc_b, SenderBehavior::Honest, &mut rng)?;

    // consumer1 composes by concatenation and passes the composition on
    let received_a = sim.party_ref("consumer1")?.received[0].1.clone();
    let received_b = sim.party_ref("consumer1")?.received[1].1.clone();
    let composed = concat_horizontal(&received_a, &received_b)?;
    let edge_c = Edge {
        from: "consumer1".into(),
        to: "consumer2".into(),
        protocol: EdgeProtocol::Untrusted,
        parts: Some(16),
    };
    run_edge_or_setup(&mut sim, 2, &edge_c, composed, SenderBehavior::Honest, &mut rng)?;

    // consumer2 leaks the composed document
    let leaked = sim.party_ref("consumer2")?.received[0].1.clone();
    let policy = TolerancePolicy::strict();
    let lineage_a = audit_composed(
        &leaked,
        ComponentRegion {
            x: 0,
            y: 0,
            width: 256,
            height: 256,
        },
        "owner_a",
        &sim,
        &policy,
    )?;
    let lineage_b = audit_composed(
        &leaked,
        ComponentRegion {
            x: 256,
            y: 0,
            width: 256,
            height: 256,
        },
        "owner_b",
        &sim,
        &policy,
    )?;
    Ok(ComposedOutcome {
        lineage_a,
        lineage_b,
        expected_verdict: "consumer2".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_scenarios_reach_their_expected_verdicts() {
        let params = GroupParams::test();
        for scenario in builtin_scenarios() {
            let outcome = run_scenario(&scenario, 7, &params).unwrap();
            assert!(
                outcome.verdict_matches,
                "{}: expected {}, lineage {:?}",
                scenario.name,
                scenario.expected_verdict,
                outcome.lineage.map(|l| l.parties().join(" -> "))
            );
        }
    }

    #[test]
    fn outsourcing_lineage_lists_the_full_chain() {
        let params = GroupParams::test();
        let scenario = &builtin_scenarios()[0];
        let outcome = run_scenario(scenario, 11, &params).unwrap();
        let lineage = outcome.lineage.unwrap();
        assert_eq!(
            lineage.parties(),
            vec!["organization", "company_a", "company_b"]
        );
    }

    #[test]
    fn scenario_runs_are_reproducible() {
        let params = GroupParams::test();
        let scenario = &builtin_scenarios()[2];
        let a = run_scenario(scenario, 5, &params).unwrap();
        let b = run_scenario(scenario, 5, &params).unwrap();
        assert_eq!(
            serde_json::to_string(&a.lineage).unwrap(),
            serde_json::to_string(&b.lineage).unwrap()
        );
    }

    #[test]
    fn owner_to_owner_never_fingerprints_consumer_edges_always_do() {
        let params = GroupParams::test();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut sim = Simulation::new(params);
        sim.add_party("owner1", Role::Owner, &mut rng);
        sim.add_party("owner2", Role::Owner, &mut rng);
        sim.add_party("consumer", Role::Consumer, &mut rng);
        let doc = synth::random_document(&mut rng, 128, 128);
        sim.give_original("owner1", doc.clone()).unwrap();

        let plain = Edge {
            from: "owner1".into(),
            to: "owner2".into(),
            protocol: EdgeProtocol::Plain,
            parts: None,
        };
        run_edge_or_setup(&mut sim, 0, &plain, doc.clone(), SenderBehavior::Honest, &mut rng)
            .unwrap();
        // verbatim: no mark, no record
        assert_eq!(sim.party_ref("owner2").unwrap().received[0].1, doc);
        assert!(sim.party_ref("owner1").unwrap().sender_records.is_empty());

        let trusted = Edge {
            from: "owner2".into(),
            to: "consumer".into(),
            protocol: EdgeProtocol::Trusted,
            parts: None,
        };
        run_edge_or_setup(&mut sim, 1, &trusted, doc.clone(), SenderBehavior::Honest, &mut rng)
            .unwrap();
        // fingerprinted: marked document plus a sender record
        assert_ne!(sim.party_ref("consumer").unwrap().received[0].1, doc);
        assert_eq!(sim.party_ref("owner2").unwrap().sender_records.len(), 1);

        // plain handover toward a consumer is rejected
        let bad = Edge {
            from: "owner1".into(),
            to: "consumer".into(),
            protocol: EdgeProtocol::Plain,
            parts: None,
        };
        assert!(run_edge_or_setup(&mut sim, 2, &bad, doc, SenderBehavior::Honest, &mut rng)
            .is_err());
    }

    #[test]
    fn honest_trials_never_fool_the_audit() {
        let params = GroupParams::test();
        let report =
            run_adversary_trials(AdversaryStrategy::Honest, 4, 20, 99, &params).unwrap();
        assert_eq!(report.adversary_successes, 0, "{report:?}");
    }

    #[test]
    fn version_swap_burns_the_senders_proof() {
        let params = GroupParams::test();
        let report =
            run_adversary_trials(AdversaryStrategy::VersionSwap, 4, 10, 17, &params).unwrap();
        // the recipient walks every time: detected bits are the
        // complement of what it can prove, so the sender takes the blame
        assert_eq!(report.adversary_successes, report.trials, "{report:?}");
    }

    #[test]
    fn averaging_with_itself_keeps_the_mark() {
        let params = GroupParams::test();
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let mut sim = Simulation::new(params);
        sim.add_party("owner", Role::Owner, &mut rng);
        sim.add_party("consumer", Role::Consumer, &mut rng);
        let doc = synth::random_document(&mut rng, 128, 128);
        sim.give_original("owner", doc.clone()).unwrap();
        let edge = Edge {
            from: "owner".into(),
            to: "consumer".into(),
            protocol: EdgeProtocol::Untrusted,
            parts: Some(16),
        };
        run_edge_or_setup(&mut sim, 0, &edge, doc.clone(), SenderBehavior::Honest, &mut rng)
            .unwrap();
        let received = sim.party_ref("consumer").unwrap().received[0].1.clone();
        let merged = average_documents(&[&received, &received]).unwrap();
        assert_eq!(merged, received);
        let record = sim.sender_record_for_edge(0).unwrap();
        let desc = WatermarkDescriptor::whole(record.statement.payload_bytes(), record.k1);
        assert!(detect(&merged, &desc, &doc, &record.whole_cfg).unwrap());
    }

    #[test]
    fn geometry_for_parts_handles_non_squares() {
        let g = geometry_for_parts(8).unwrap();
        assert_eq!((g.rows, g.cols), (2, 4));
        assert_eq!((g.part_width, g.part_height), (32, 32));
        let g = geometry_for_parts(16).unwrap();
        assert_eq!((g.rows, g.cols), (4, 4));
        let g = geometry_for_parts(7).unwrap();
        assert_eq!((g.rows, g.cols), (1, 7));
        assert!(geometry_for_parts(0).is_err());
    }

    #[test]
    fn scenario_json_round_trips() {
        for scenario in builtin_scenarios() {
            let json = scenario.to_json();
            let back = Scenario::from_json(&json).unwrap();
            assert_eq!(back.name, scenario.name);
            assert_eq!(back.edges.len(), scenario.edges.len());
            assert_eq!(back.expected_verdict, scenario.expected_verdict);
        }
    }
}
