//! On-disk state directory shared by the CLI subcommands.
//!
//! ```text
//! <state>/
//!   parties/<label>.json           party metadata (label, role, vk)
//!   parties/<label>.sk             tagged signing key
//!   parties/<label>.counters.json  per-peer transfer counters
//!   docs/...                       documents written by transfers/leaks
//!   records/<sender>/<recipient>/<tau>/sender/     sender record
//!   records/<sender>/<recipient>/<tau>/recipient/  recipient record
//!   transcripts/<sender>-<recipient>-<tau>/        transfer transcript
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lime_core::audit::{PartyDirectory, SuspectResponse};
use lime_core::crypto::SigningKeypair;
use lime_core::document::Document;
use lime_core::protocol::{
    load_recipient_record, load_sender_record, ChoiceProof, PartyId, PartyState, RecipientRecord,
    Role, SenderRecord,
};
use lime_core::watermark::{detect, WatermarkDescriptor};

pub struct StateDir {
    pub root: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct PartyMeta {
    label: String,
    role: Role,
    vk_hex: String,
}

#[derive(Serialize, Deserialize, Default)]
struct Counters {
    outgoing: HashMap<String, u64>,
    incoming: HashMap<String, u64>,
}

impl StateDir {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        StateDir { root: root.into() }
    }

    fn parties_dir(&self) -> PathBuf {
        self.root.join("parties")
    }

    pub fn docs_dir(&self) -> PathBuf {
        self.root.join("docs")
    }

    fn record_dir(&self, sender: &str, recipient: &str, tau: u64) -> PathBuf {
        self.root
            .join("records")
            .join(sender)
            .join(recipient)
            .join(tau.to_string())
    }

    pub fn transcript_dir(&self, sender: &str, recipient: &str, tau: u64) -> PathBuf {
        self.root
            .join("transcripts")
            .join(format!("{sender}-{recipient}-{tau}"))
    }

    pub fn create_party(&self, label: &str, role: Role, keypair: &SigningKeypair) -> Result<()> {
        let dir = self.parties_dir();
        fs::create_dir_all(&dir)?;
        let meta_path = dir.join(format!("{label}.json"));
        if meta_path.exists() {
            bail!("party {label} already exists in {}", self.root.display());
        }
        let meta = PartyMeta {
            label: label.to_string(),
            role,
            vk_hex: hex::encode(keypair.verifying_key().as_bytes()),
        };
        fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?)?;
        fs::write(dir.join(format!("{label}.sk")), keypair.encode_file())?;
        self.save_counters(label, &Counters::default())?;
        Ok(())
    }

    fn load_meta(&self, label: &str) -> Result<PartyMeta> {
        let path = self.parties_dir().join(format!("{label}.json"));
        let meta: PartyMeta = serde_json::from_slice(
            &fs::read(&path).with_context(|| format!("unknown party {label}"))?,
        )?;
        Ok(meta)
    }

    pub fn load_party_id(&self, label: &str) -> Result<PartyId> {
        let meta = self.load_meta(label)?;
        let vk_bytes: [u8; 32] = hex::decode(&meta.vk_hex)?
            .try_into()
            .map_err(|_| anyhow::anyhow!("bad verification key for {label}"))?;
        Ok(PartyId {
            label: meta.label,
            role: meta.role,
            vk: lime_core::crypto::VerifyingKey::from_bytes(vk_bytes),
        })
    }

    /// Loads the full mutable protocol state (keys + counters).
    pub fn load_party_state(&self, label: &str) -> Result<PartyState> {
        let meta = self.load_meta(label)?;
        let sk_path = self.parties_dir().join(format!("{label}.sk"));
        let keypair = SigningKeypair::decode_file(&fs::read(&sk_path)?)
            .map_err(|e| anyhow::anyhow!("bad signing key for {label}: {e}"))?;
        let mut state = PartyState::from_keypair(&meta.label, meta.role, keypair);
        let counters = self.load_counters(label)?;
        state.restore_counters(counters.outgoing, counters.incoming);
        Ok(state)
    }

    fn counters_path(&self, label: &str) -> PathBuf {
        self.parties_dir().join(format!("{label}.counters.json"))
    }

    fn load_counters(&self, label: &str) -> Result<Counters> {
        let path = self.counters_path(label);
        if !path.exists() {
            return Ok(Counters::default());
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    fn save_counters(&self, label: &str, counters: &Counters) -> Result<()> {
        fs::create_dir_all(self.parties_dir())?;
        fs::write(
            self.counters_path(label),
            serde_json::to_vec_pretty(counters)?,
        )?;
        Ok(())
    }

    pub fn persist_party_state(&self, state: &PartyState) -> Result<()> {
        let (outgoing, incoming) = state.counters();
        self.save_counters(
            &state.id.label,
            &Counters {
                outgoing: outgoing.clone(),
                incoming: incoming.clone(),
            },
        )
    }

    pub fn save_transfer(
        &self,
        sender_record: &SenderRecord,
        recipient_record: Option<&RecipientRecord>,
        sender: &str,
        recipient: &str,
        tau: u64,
    ) -> Result<()> {
        let base = self.record_dir(sender, recipient, tau);
        lime_core::protocol::save_sender_record(&base.join("sender"), sender_record)?;
        if let Some(rr) = recipient_record {
            lime_core::protocol::save_recipient_record(&base.join("recipient"), rr)?;
        }
        Ok(())
    }

    pub fn write_doc(&self, name: &str, doc: &Document) -> Result<PathBuf> {
        let dir = self.docs_dir();
        fs::create_dir_all(&dir)?;
        let path = dir.join(name);
        fs::write(&path, doc.to_pgm_bytes())?;
        Ok(path)
    }

    /// All sender records where `label` was the sender.
    pub fn sender_records_of(&self, label: &str) -> Result<Vec<SenderRecord>> {
        let mut records = Vec::new();
        let base = self.root.join("records").join(label);
        if !base.exists() {
            return Ok(records);
        }
        for recipient in sorted_dirs(&base)? {
            for tau in sorted_dirs(&recipient)? {
                let dir = tau.join("sender");
                if dir.exists() {
                    records.push(load_sender_record(&dir)?);
                }
            }
        }
        Ok(records)
    }

    /// Recipient record for a specific (sender, recipient, tau).
    pub fn recipient_record(
        &self,
        sender: &str,
        recipient: &str,
        tau: u64,
    ) -> Result<Option<RecipientRecord>> {
        let dir = self.record_dir(sender, recipient, tau).join("recipient");
        if !dir.exists() {
            return Ok(None);
        }
        Ok(Some(load_recipient_record(&dir)?))
    }

    /// Latest recipient record held by `recipient` (optionally filtered
    /// by sender), the default version a `leak` command emits.
    pub fn latest_received(
        &self,
        recipient: &str,
        from: Option<&str>,
    ) -> Result<Option<RecipientRecord>> {
        let records_root = self.root.join("records");
        if !records_root.exists() {
            return Ok(None);
        }
        let mut best: Option<RecipientRecord> = None;
        for sender_dir in sorted_dirs(&records_root)? {
            let sender = dir_name(&sender_dir);
            if let Some(filter) = from {
                if sender != filter {
                    continue;
                }
            }
            let rdir = sender_dir.join(recipient);
            if !rdir.exists() {
                continue;
            }
            for tau_dir in sorted_dirs(&rdir)? {
                let dir = tau_dir.join("recipient");
                if dir.exists() {
                    let record = load_recipient_record(&dir)?;
                    let newer = best
                        .as_ref()
                        .map(|b| record.tau > b.tau)
                        .unwrap_or(true);
                    if newer {
                        best = Some(record);
                    }
                }
            }
        }
        Ok(best)
    }
}

fn sorted_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn dir_name(path: &Path) -> String {
    path.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string()
}

/// Party directory backed by the state directory: suspects answer from
/// their persisted sender records, recipients prove choices from their
/// recipient records.
pub struct DiskDirectory<'a> {
    pub state: &'a StateDir,
}

impl PartyDirectory for DiskDirectory<'_> {
    fn party(&self, label: &str) -> Option<PartyId> {
        self.state.load_party_id(label).ok()
    }

    fn suspect_response(
        &self,
        suspect: &str,
        leaked_views: &[&Document],
    ) -> Option<SuspectResponse> {
        let records = self.state.sender_records_of(suspect).ok()?;
        if records.is_empty() {
            return None;
        }
        let respond = |record: &SenderRecord| SuspectResponse {
            k1: record.k1,
            k2: record.k2,
            statement: record.statement.clone(),
            original: record.original_received_version.clone(),
            n: record.n,
            geometry: record.geometry,
            whole_cfg: record.whole_cfg,
            part_cfg: record.part_cfg,
        };
        for record in &records {
            for view in leaked_views {
                if !view.same_dimensions(&record.original_received_version) {
                    continue;
                }
                let desc =
                    WatermarkDescriptor::whole(record.statement.payload_bytes(), record.k1);
                if detect(
                    view,
                    &desc,
                    &record.original_received_version,
                    &record.whole_cfg,
                )
                .unwrap_or(false)
                {
                    return Some(respond(record));
                }
            }
        }
        records
            .iter()
            .find(|r| {
                leaked_views
                    .iter()
                    .any(|v| v.same_dimensions(&r.original_received_version))
            })
            .or(records.first())
            .map(respond)
    }

    fn choice_proofs(&self, recipient: &str, sender: &str, tau: u64) -> Option<Vec<ChoiceProof>> {
        self.state
            .recipient_record(sender, recipient, tau)
            .ok()
            .flatten()
            .map(|r| r.proofs)
    }
}
