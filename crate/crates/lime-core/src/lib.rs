//! Accountable data transfer toolkit.
//!
//! The crate implements the full pipeline for holding parties accountable
//! for leaked documents:
//!
//! - [`document`]: grayscale raster documents, PSNR similarity and the
//!   split/join tiling used by the untrusted-sender protocol.
//! - [`watermark`]: spread-spectrum watermarking in the frequency domain
//!   with keyed, payload-bound mark sequences and correlation detection.
//! - [`crypto`]: prime-order group arithmetic (production and small test
//!   groups), signatures and CPA symmetric encryption.
//! - [`ot`]: Naor-Pinkas 1-out-of-2 oblivious transfer, batch execution
//!   and the key-transport wrapper for arbitrary-size messages.
//! - [`protocol`]: the trusted-sender and untrusted-sender transfer
//!   protocols as explicit state machines with transcript capture.
//! - [`audit`]: the auditor's lineage-generation walk, bit-match
//!   tolerance policy and composed-document audits.
//! - [`scenario`]: multi-party simulation harness with scripted
//!   scenarios and adversary strategies.
//! - [`bench`]: phase-wise microbenchmarks of the untrusted transfer.

pub mod audit;
pub mod bench;
pub mod crypto;
pub mod dct;
pub mod document;
pub mod ot;
pub mod protocol;
pub mod scenario;
pub mod synth;
pub mod watermark;

pub use audit::{generate_lineage, match_bits, Lineage, TolerancePolicy};
pub use document::{Document, SplitGeometry};
pub use watermark::{EmbedConfig, PartBit, WatermarkDescriptor, WatermarkKey};
