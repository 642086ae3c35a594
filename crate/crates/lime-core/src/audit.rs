//! Lineage generation: the auditor's walk from the owner to the party
//! responsible for a leak.
//!
//! At every hop the current suspect hands over its detection keys, the
//! statement it embedded, and the unmarked version it holds (detection
//! is non-blind). If the statement cannot be detected the walk ends and
//! the suspect is blamed. Trusted suspects get a fast path: the triple's
//! form is checked and the walk advances without signature checks or
//! part detection. For untrusted suspects the auditor verifies the
//! recipient-signed statement, re-derives the marked intermediate, reads
//! the per-part choice bits and challenges the recipient to prove its
//! choices; a valid proof of the same bits moves suspicion forward, a
//! valid proof of *different* bits pins the leak on the sender.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::document::{split_with, Document, DocumentError, SplitGeometry};
use crate::protocol::{ChoiceProof, PartyId, Role, Statement};
use crate::watermark::{
    detect_correlation, detect_part_bit, EmbedConfig, PartBit, WatermarkDescriptor,
    WatermarkError, WatermarkKey,
};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("bit string length mismatch: {claimed} claimed vs {detected} detected")]
    LengthMismatch { claimed: usize, detected: usize },
    #[error("invalid tolerance policy: {0}")]
    InvalidPolicy(String),
    #[error("unknown owner {0}")]
    UnknownOwner(String),
    #[error("component slice out of bounds: {0}")]
    BadComponent(String),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error(transparent)]
    Document(#[from] DocumentError),
}

/// How forgiving bit matching is. Every tolerated missing bit doubles
/// the set of accepted claims; allowing a wrong bit multiplies it by
/// n+1, so both default to off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub max_missing_bits: usize,
    pub allow_wrong_bits: bool,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        TolerancePolicy {
            max_missing_bits: 0,
            allow_wrong_bits: false,
        }
    }
}

impl TolerancePolicy {
    pub fn strict() -> Self {
        TolerancePolicy::default()
    }

    pub fn missing(max_missing_bits: usize) -> Self {
        TolerancePolicy {
            max_missing_bits,
            allow_wrong_bits: false,
        }
    }
}

/// Does the claimed choice string match the detected per-part outcomes
/// under the policy? Parts reporting `none` or `both` count as missing
/// and become wildcards within the missing-bit budget; a definite
/// detected bit that contradicts the claim fails the match unless the
/// policy admits (at most one) wrong bit.
pub fn match_bits(
    claimed: &[bool],
    detected: &[PartBit],
    policy: &TolerancePolicy,
) -> Result<bool, AuditError> {
    if claimed.len() != detected.len() {
        return Err(AuditError::LengthMismatch {
            claimed: claimed.len(),
            detected: detected.len(),
        });
    }
    let n = claimed.len();
    if policy.max_missing_bits >= n {
        return Err(AuditError::InvalidPolicy(format!(
            "max_missing_bits {} must stay below n = {n}",
            policy.max_missing_bits
        )));
    }
    let mut missing = 0usize;
    let mut conflicts = 0usize;
    for (&claim, &outcome) in claimed.iter().zip(detected.iter()) {
        match outcome {
            PartBit::None | PartBit::Both => missing += 1,
            PartBit::Zero => {
                if claim {
                    conflicts += 1;
                }
            }
            PartBit::One => {
                if !claim {
                    conflicts += 1;
                }
            }
        }
    }
    if missing > policy.max_missing_bits {
        return Ok(false);
    }
    Ok(conflicts == 0 || (policy.allow_wrong_bits && conflicts == 1))
}

/// Everything a suspect hands the auditor on demand.
#[derive(Clone, Debug)]
pub struct SuspectResponse {
    pub k1: WatermarkKey,
    pub k2: Option<WatermarkKey>,
    pub statement: Statement,
    /// The unmarked version this suspect holds, the detection original.
    pub original: Document,
    pub n: usize,
    pub geometry: Option<SplitGeometry>,
    pub whole_cfg: EmbedConfig,
    pub part_cfg: Option<EmbedConfig>,
}

/// Query interface to the parties of a scenario. Implementations back it
/// with in-memory simulation state or on-disk records.
pub trait PartyDirectory {
    /// Public identity of a party, if known.
    fn party(&self, label: &str) -> Option<PartyId>;

    /// Asks a suspect for detection keys, statement and original; the
    /// suspect sees every view of the leaked document (whole and, for
    /// composed audits, the component slice). `None` is a refusal.
    fn suspect_response(&self, suspect: &str, leaked_views: &[&Document])
        -> Option<SuspectResponse>;

    /// Challenges a recipient to prove its choice for transfer `tau`
    /// from `sender` by presenting its choice proofs.
    fn choice_proofs(&self, recipient: &str, sender: &str, tau: u64) -> Option<Vec<ChoiceProof>>;
}

/// Why a lineage walk stopped at its last entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Suspect refused to answer or had nothing to show.
    NoResponse,
    /// The statement was not detectable with the supplied key.
    SigmaUndetectable,
    /// Response was structurally unusable (wrong dimensions, missing
    /// keys, statement naming other parties, invalid signature).
    MalformedResponse,
    /// A part carried no readable bit (or both bits) beyond the policy
    /// budget.
    PartBitsUnreadable,
    /// The recipient proved a choice string different from the detected
    /// one: the sender published a version the recipient never chose.
    ChoiceMismatch,
    /// A (party, tau) pair repeated; statement replay cut off.
    ReplayDetected,
}

/// Which view of the leaked document a hop was audited against.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditView {
    Whole,
    Component {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
}

/// Evidence gathered at one hop of the walk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HopEvidence {
    pub suspect: String,
    pub trusted: bool,
    pub view: AuditView,
    pub sigma_correlation: Option<f64>,
    pub detection_threshold: Option<f64>,
    pub sigma_detected: bool,
    pub statement: Option<Statement>,
    pub detected_bits: Option<Vec<PartBit>>,
    pub claimed_bits: Option<Vec<bool>>,
    pub proofs_valid: Option<bool>,
    pub bits_matched: Option<bool>,
    pub termination: Option<Termination>,
}

impl HopEvidence {
    fn opening(suspect: &str, trusted: bool) -> Self {
        HopEvidence {
            suspect: suspect.to_string(),
            trusted,
            view: AuditView::Whole,
            sigma_correlation: None,
            detection_threshold: None,
            sigma_detected: false,
            statement: None,
            detected_bits: None,
            claimed_bits: None,
            proofs_valid: None,
            bits_matched: None,
            termination: None,
        }
    }
}

/// The auditor's output: the ordered chain of suspects with per-hop
/// evidence. The last entry is responsible for the leakage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lineage {
    pub entries: Vec<HopEvidence>,
    pub verdict: String,
    pub policy: TolerancePolicy,
}

impl Lineage {
    pub fn parties(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.suspect.as_str()).collect()
    }

    pub fn to_report_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lineage serializes")
    }
}

struct View<'a> {
    kind: AuditView,
    doc: &'a Document,
}

fn lineage_walk(
    views: &[View<'_>],
    owner: &str,
    directory: &dyn PartyDirectory,
    policy: &TolerancePolicy,
) -> Result<Lineage, AuditError> {
    if directory.party(owner).is_none() {
        return Err(AuditError::UnknownOwner(owner.to_string()));
    }
    let view_docs: Vec<&Document> = views.iter().map(|v| v.doc).collect();
    let mut entries: Vec<HopEvidence> = Vec::new();
    let mut visited: HashSet<(String, u64)> = HashSet::new();
    let mut current = owner.to_string();

    loop {
        let trusted = directory
            .party(&current)
            .map(|p| p.role == Role::Owner)
            .unwrap_or(false);
        let mut hop = HopEvidence::opening(&current, trusted);

        // ask the suspect for keys, statement and original
        let Some(resp) = directory.suspect_response(&current, &view_docs) else {
            hop.termination = Some(Termination::NoResponse);
            entries.push(hop);
            break;
        };
        hop.statement = Some(resp.statement.clone());

        // pick the leaked view matching the original's frame
        let Some(view) = views
            .iter()
            .find(|v| v.doc.same_dimensions(&resp.original))
        else {
            hop.termination = Some(Termination::MalformedResponse);
            entries.push(hop);
            break;
        };
        hop.view = view.kind.clone();

        // can sigma be detected with k1?
        let sigma_desc =
            WatermarkDescriptor::whole(resp.statement.payload_bytes(), resp.k1);
        let correlation =
            detect_correlation(view.doc, &sigma_desc, &resp.original, &resp.whole_cfg)?;
        hop.sigma_correlation = Some(correlation);
        hop.detection_threshold = Some(resp.whole_cfg.threshold);
        hop.sigma_detected = correlation >= resp.whole_cfg.threshold;
        if !hop.sigma_detected {
            hop.termination = Some(Termination::SigmaUndetectable);
            entries.push(hop);
            break;
        }

        let body = &resp.statement.body;
        let tau = body.tau;

        if trusted {
            // fast path: check the triple's form only and move on
            if body.sender != current {
                hop.termination = Some(Termination::MalformedResponse);
                entries.push(hop);
                break;
            }
            let next = body.recipient.clone();
            entries.push(hop);
            if !visited.insert((next.clone(), tau)) {
                let last = entries.last_mut().expect("just pushed");
                last.termination = Some(Termination::ReplayDetected);
                break;
            }
            current = next;
            continue;
        }

        // untrusted suspect: full verification
        let recipient_vk = directory.party(&body.recipient).map(|p| p.vk);
        let statement_ok = body.sender == current
            && recipient_vk
                .map(|vk| resp.statement.verify_signature(&vk))
                .unwrap_or(false);
        if !statement_ok {
            hop.termination = Some(Termination::MalformedResponse);
            entries.push(hop);
            break;
        }

        // split and read the per-part bits with k2
        let (Some(k2), Some(part_cfg)) = (resp.k2, resp.part_cfg) else {
            hop.termination = Some(Termination::MalformedResponse);
            entries.push(hop);
            break;
        };
        let geometry = match resp.geometry {
            Some(g)
                if g.document_width() == view.doc.width()
                    && g.document_height() == view.doc.height() =>
            {
                g
            }
            _ => {
                hop.termination = Some(Termination::MalformedResponse);
                entries.push(hop);
                break;
            }
        };
        // the auditor re-derives the marked intermediate the parts were
        // cut from; embedding is deterministic given key and payload
        let derived = crate::watermark::embed(&resp.original, &sigma_desc, &resp.whole_cfg)?;
        let original_parts = split_with(&derived, &geometry)?;
        let leaked_parts = split_with(view.doc, &geometry)?;
        let mut outcomes = Vec::with_capacity(geometry.n);
        for i in 0..geometry.n {
            outcomes.push(detect_part_bit(
                &leaked_parts[i],
                &k2,
                i as u32,
                &original_parts[i],
                &part_cfg,
            )?);
        }
        let unreadable = outcomes
            .iter()
            .filter(|o| matches!(o, PartBit::None | PartBit::Both))
            .count();
        hop.detected_bits = Some(outcomes.clone());
        if unreadable > policy.max_missing_bits {
            hop.termination = Some(Termination::PartBitsUnreadable);
            entries.push(hop);
            break;
        }

        // challenge the recipient for its choice proofs
        let proofs = directory.choice_proofs(&body.recipient, &current, tau);
        let sender_vk = directory.party(&current).map(|p| p.vk);
        let (proofs_valid, claimed) = match (proofs, sender_vk) {
            (Some(proofs), Some(vk)) if proofs.len() == geometry.n => {
                let well_formed = proofs.iter().enumerate().all(|(i, p)| {
                    p.tau == tau && p.part_index == i as u32 && p.verify(&vk)
                });
                let claimed: Vec<bool> = proofs.iter().map(|p| p.bit).collect();
                (well_formed, Some(claimed))
            }
            _ => (false, None),
        };
        hop.proofs_valid = Some(proofs_valid);
        hop.claimed_bits = claimed.clone();

        if proofs_valid {
            let claimed = claimed.expect("valid proofs carry bits");
            let matched = match_bits(&claimed, &outcomes, policy)?;
            hop.bits_matched = Some(matched);
            if !matched {
                // the recipient proved a different choice: the version
                // published is one only the sender could assemble
                hop.termination = Some(Termination::ChoiceMismatch);
                entries.push(hop);
                break;
            }
        }

        // advance to the recipient (invalid proof also advances: a
        // recipient that cannot prove innocence stays on the hook)
        let next = body.recipient.clone();
        entries.push(hop);
        if !visited.insert((next.clone(), tau)) {
            let last = entries.last_mut().expect("just pushed");
            last.termination = Some(Termination::ReplayDetected);
            break;
        }
        current = next;
    }

    let verdict = entries
        .last()
        .map(|e| e.suspect.clone())
        .expect("walk appends at least the owner");
    Ok(Lineage {
        entries,
        verdict,
        policy: *policy,
    })
}

/// Runs the full lineage generation walk over a leaked document,
/// starting at the owner.
pub fn generate_lineage(
    leaked: &Document,
    owner: &str,
    directory: &dyn PartyDirectory,
    policy: &TolerancePolicy,
) -> Result<Lineage, AuditError> {
    let views = [View {
        kind: AuditView::Whole,
        doc: leaked,
    }];
    lineage_walk(&views, owner, directory, policy)
}

/// Pixel region of one component inside a composed document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentRegion {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Audits one component of a composed (concatenated) document: the walk
/// sees both the component slice and the whole composition, and each
/// hop is checked against whichever frame its original matches.
pub fn audit_composed(
    leaked_composed: &Document,
    region: ComponentRegion,
    owner: &str,
    directory: &dyn PartyDirectory,
    policy: &TolerancePolicy,
) -> Result<Lineage, AuditError> {
    let slice = leaked_composed
        .crop(region.x, region.y, region.width, region.height)
        .map_err(|e| AuditError::BadComponent(e.to_string()))?;
    let full_region = ComponentRegion {
        x: 0,
        y: 0,
        width: leaked_composed.width(),
        height: leaked_composed.height(),
    };
    let views = [
        View {
            kind: AuditView::Component {
                x: region.x,
                y: region.y,
                width: region.width,
                height: region.height,
            },
            doc: &slice,
        },
        View {
            kind: AuditView::Component {
                x: full_region.x,
                y: full_region.y,
                width: full_region.width,
                height: full_region.height,
            },
            doc: leaked_composed,
        },
    ];
    lineage_walk(&views, owner, directory, policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcomes(spec: &str) -> Vec<PartBit> {
        spec.chars()
            .map(|c| match c {
                '0' => PartBit::Zero,
                '1' => PartBit::One,
                'n' => PartBit::None,
                'b' => PartBit::Both,
                _ => unreachable!("bad spec"),
            })
            .collect()
    }

    fn bits(spec: &str) -> Vec<bool> {
        spec.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn exact_match_under_strict_policy() {
        let policy = TolerancePolicy::strict();
        assert!(match_bits(&bits("0110"), &outcomes("0110"), &policy).unwrap());
        assert!(!match_bits(&bits("0110"), &outcomes("0111"), &policy).unwrap());
        assert!(!match_bits(&bits("0110"), &outcomes("011n"), &policy).unwrap());
        assert!(!match_bits(&bits("0110"), &outcomes("011b"), &policy).unwrap());
    }

    #[test]
    fn missing_bits_are_wildcards_within_budget() {
        let policy = TolerancePolicy::missing(2);
        assert!(match_bits(&bits("0110"), &outcomes("0nn0"), &policy).unwrap());
        assert!(match_bits(&bits("0100"), &outcomes("0nn0"), &policy).unwrap());
        assert!(!match_bits(&bits("0110"), &outcomes("nnn0"), &policy).unwrap());
        // conflicting definite bit still fails
        assert!(!match_bits(&bits("0110"), &outcomes("1nn0"), &policy).unwrap());
    }

    #[test]
    fn one_wrong_bit_when_allowed() {
        let policy = TolerancePolicy {
            max_missing_bits: 0,
            allow_wrong_bits: true,
        };
        assert!(match_bits(&bits("0110"), &outcomes("0111"), &policy).unwrap());
        assert!(!match_bits(&bits("0110"), &outcomes("1111"), &policy).unwrap());
    }

    #[test]
    fn rejects_length_mismatch_and_bad_policy() {
        let policy = TolerancePolicy::strict();
        assert!(matches!(
            match_bits(&bits("01"), &outcomes("011"), &policy),
            Err(AuditError::LengthMismatch { .. })
        ));
        let bad = TolerancePolicy::missing(4);
        assert!(matches!(
            match_bits(&bits("0110"), &outcomes("0110"), &bad),
            Err(AuditError::InvalidPolicy(_))
        ));
    }

    #[test]
    fn accepted_set_counting() {
        // brute-force enumeration over all claims for n = 10: each
        // tolerated missing bit doubles the accepted set; one allowed
        // wrong bit multiplies it by n + 1
        let n = 10usize;
        let truth: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        for t in 0..4usize {
            let mut detected: Vec<PartBit> = truth
                .iter()
                .map(|&b| if b { PartBit::One } else { PartBit::Zero })
                .collect();
            for slot in 0..t {
                detected[slot] = PartBit::None;
            }
            let policy = TolerancePolicy::missing(t);
            let accepted = (0..1u32 << n)
                .filter(|mask| {
                    let claim: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                    match_bits(&claim, &detected, &policy).unwrap()
                })
                .count();
            assert_eq!(accepted, 1 << t, "t = {t}");

            let wrong_policy = TolerancePolicy {
                max_missing_bits: t,
                allow_wrong_bits: true,
            };
            let accepted_wrong = (0..1u32 << n)
                .filter(|mask| {
                    let claim: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                    match_bits(&claim, &detected, &wrong_policy).unwrap()
                })
                .count();
            // beyond the 2^t wildcard variants, any one of the n - t
            // definite positions may be flipped
            assert_eq!(accepted_wrong, (1 << t) * (n - t + 1), "t = {t}");
        }
    }

    #[test]
    fn half_missing_at_n256() {
        let n = 256usize;
        let claimed: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let mut detected: Vec<PartBit> = claimed
            .iter()
            .map(|&b| if b { PartBit::One } else { PartBit::Zero })
            .collect();
        for slot in 0..128 {
            detected[2 * slot] = PartBit::None;
        }
        let policy = TolerancePolicy::missing(128);
        assert!(match_bits(&claimed, &detected, &policy).unwrap());
        // a conflict on a definite position still fails
        let mut conflicted = detected.clone();
        conflicted[1] = PartBit::One; // claimed[1] is false
        assert!(!match_bits(&claimed, &conflicted, &policy).unwrap());
        // one missing bit beyond the budget fails
        let mut extra = detected;
        extra[1] = PartBit::None;
        assert!(!match_bits(&claimed, &extra, &policy).unwrap());
    }
}
