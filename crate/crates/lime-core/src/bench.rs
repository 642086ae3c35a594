//! Phase-wise microbenchmarks of the untrusted transfer.
//!
//! Five phases are timed per repetition, sequentially on one thread:
//! signature creation, watermarking (whole-document mark plus both
//! versions of every part), symmetric encryption of the part bundles,
//! the oblivious transfers, and auditor-side detection. Absolute numbers
//! are hardware-bound; the scaling shapes are what matters: per-part
//! phases grow linearly in the part count, while OT and signature time
//! are independent of the document size because only fixed-size keys and
//! statements flow through them.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::crypto::group::{GroupMode, GroupParams};
use crate::crypto::{sym_encrypt, SigningKeypair, SymKey};
use crate::document::{join, split_with, Document, SplitGeometry};
use crate::ot;
use crate::protocol::{ChoiceProof, Statement, StatementBody};
use crate::scenario::ScenarioError;
use crate::synth;
use crate::watermark::{
    detect_correlation, detect_part_bit, embed, EmbedConfig, PartBit, WatermarkDescriptor,
    WatermarkKey,
};

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct PhaseStats {
    pub mean_ms: f64,
    pub std_ms: f64,
}

fn stats(samples: &[f64]) -> PhaseStats {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    PhaseStats {
        mean_ms: mean,
        std_ms: var.sqrt(),
    }
}

/// Mean and deviation of every phase at one parameter point.
#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub parts: usize,
    pub width: u32,
    pub height: u32,
    pub alpha: f64,
    pub m_whole: usize,
    pub m_part: usize,
    pub group_mode: String,
    pub repetitions: usize,
    pub watermarking: PhaseStats,
    pub signatures: PhaseStats,
    pub encryption: PhaseStats,
    pub oblivious_transfer: PhaseStats,
    pub detection: PhaseStats,
    /// Every statement and part bit detected in every repetition.
    pub all_detected: bool,
}

#[derive(Default)]
struct PhaseSamples {
    watermarking: Vec<f64>,
    signatures: Vec<f64>,
    encryption: Vec<f64>,
    oblivious_transfer: Vec<f64>,
    detection: Vec<f64>,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// One full instrumented transfer plus detection.
fn bench_rep(
    doc: &Document,
    geometry: &SplitGeometry,
    params: &GroupParams,
    rng: &mut ChaCha20Rng,
    samples: &mut PhaseSamples,
) -> Result<bool, ScenarioError> {
    let n = geometry.n;
    let sender_keys = SigningKeypair::generate(rng);
    let recipient_keys = SigningKeypair::generate(rng);
    let k1 = WatermarkKey::generate(rng);
    let k2 = WatermarkKey::generate(rng);
    let whole_cfg = EmbedConfig::for_document(doc.width(), doc.height());
    let part_cfg = EmbedConfig::for_part(geometry.part_width, geometry.part_height);
    let bits: Vec<bool> = (0..n).map(|_| rng.gen()).collect();

    // signature creation: the recipient-signed statement plus both
    // choice proofs for every part
    let t = Instant::now();
    let statement = Statement::signed(
        StatementBody {
            sender: "bench-sender".into(),
            recipient: "bench-recipient".into(),
            tau: 1,
        },
        &recipient_keys,
    );
    let mut proofs: Vec<[ChoiceProof; 2]> = Vec::with_capacity(n);
    for i in 0..n {
        proofs.push([
            ChoiceProof::create(1, i as u32, false, &sender_keys),
            ChoiceProof::create(1, i as u32, true, &sender_keys),
        ]);
    }
    samples.signatures.push(ms_since(t));

    // watermarking: whole-document statement mark, then two marked
    // versions of every part
    let sigma_desc = WatermarkDescriptor::whole(statement.payload_bytes(), k1);
    let t = Instant::now();
    let marked = embed(doc, &sigma_desc, &whole_cfg).map_err(crate::protocol::TransferError::from)?;
    let original_parts = split_with(&marked, geometry)?;
    let mut versions: Vec<[Document; 2]> = Vec::with_capacity(n);
    for (i, part) in original_parts.iter().enumerate() {
        versions.push([
            embed(
                part,
                &WatermarkDescriptor::part_bit(false, k2, i as u32),
                &part_cfg,
            )
            .map_err(crate::protocol::TransferError::from)?,
            embed(
                part,
                &WatermarkDescriptor::part_bit(true, k2, i as u32),
                &part_cfg,
            )
            .map_err(crate::protocol::TransferError::from)?,
        ]);
    }
    samples.watermarking.push(ms_since(t));

    // symmetric encryption of all 2n bundles
    let key_pairs: Vec<(SymKey, SymKey)> = (0..n)
        .map(|_| (SymKey::generate(rng), SymKey::generate(rng)))
        .collect();
    let t = Instant::now();
    let mut ciphertext_bytes = 0usize;
    for (i, pair) in versions.iter().enumerate() {
        for (j, version) in pair.iter().enumerate() {
            let mut bundle = version.to_pgm_bytes();
            bundle.extend_from_slice(&proofs[i][j].encode());
            let key = if j == 0 { &key_pairs[i].0 } else { &key_pairs[i].1 };
            ciphertext_bytes += sym_encrypt(&bundle, key, rng).len();
        }
    }
    samples.encryption.push(ms_since(t));
    let _ = ciphertext_bytes;

    // n oblivious transfers over the decryption keys
    let t = Instant::now();
    let chosen = ot::ot_batch(params, &key_pairs, &bits, rng)?;
    samples.oblivious_transfer.push(ms_since(t));
    assert_eq!(chosen.len(), n);

    // assemble the recipient's version (not a measured phase)
    let picked: Vec<Document> = versions
        .iter()
        .zip(bits.iter())
        .map(|(pair, &b)| pair[b as usize].clone())
        .collect();
    let received = join(&picked, geometry)?;

    // auditor detection: the statement plus every part bit
    let t = Instant::now();
    let sigma_ok =
        detect_correlation(&received, &sigma_desc, doc, &whole_cfg)
            .map_err(crate::protocol::TransferError::from)?
            >= whole_cfg.threshold;
    let received_parts = split_with(&received, geometry)?;
    let mut bits_ok = true;
    for i in 0..n {
        let outcome = detect_part_bit(
            &received_parts[i],
            &k2,
            i as u32,
            &original_parts[i],
            &part_cfg,
        )
        .map_err(crate::protocol::TransferError::from)?;
        let expected = if bits[i] { PartBit::One } else { PartBit::Zero };
        bits_ok &= outcome == expected;
    }
    samples.detection.push(ms_since(t));

    Ok(sigma_ok && bits_ok)
}

/// Benchmarks one parameter point over `repetitions` runs.
pub fn bench_point(
    doc: &Document,
    parts: usize,
    params: &GroupParams,
    repetitions: usize,
    rng: &mut ChaCha20Rng,
) -> Result<BenchReport, ScenarioError> {
    if parts == 0 {
        return Err(ScenarioError::Invalid("part count must be positive".into()));
    }
    if repetitions == 0 {
        return Err(ScenarioError::Invalid("need at least one repetition".into()));
    }
    let geometry = SplitGeometry::square(doc.width(), doc.height(), parts)?;
    let whole_cfg = EmbedConfig::for_document(doc.width(), doc.height());
    let part_cfg = EmbedConfig::for_part(geometry.part_width, geometry.part_height);
    let mut samples = PhaseSamples::default();
    let mut all_detected = true;
    for _ in 0..repetitions {
        all_detected &= bench_rep(doc, &geometry, params, rng, &mut samples)?;
    }
    Ok(BenchReport {
        parts,
        width: doc.width(),
        height: doc.height(),
        alpha: whole_cfg.alpha,
        m_whole: whole_cfg.m,
        m_part: part_cfg.m,
        group_mode: match params.mode() {
            GroupMode::Test => "test".into(),
            GroupMode::Production => "production".into(),
        },
        repetitions,
        watermarking: stats(&samples.watermarking),
        signatures: stats(&samples.signatures),
        encryption: stats(&samples.encryption),
        oblivious_transfer: stats(&samples.oblivious_transfer),
        detection: stats(&samples.detection),
        all_detected,
    })
}

/// Least-squares line through `(x, y)` points.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

/// Sweep over part counts at a fixed 512x512 document.
#[derive(Debug, Serialize)]
pub struct VaryPartsReport {
    pub reports: Vec<BenchReport>,
    /// Linear fits of mean phase time against the part count.
    pub fits: BTreeMap<String, LinearFit>,
}

pub fn bench_vary_parts(
    part_counts: &[usize],
    repetitions: usize,
    params: &GroupParams,
    seed: u64,
) -> Result<VaryPartsReport, ScenarioError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let doc = synth::random_document(&mut rng, 512, 512);
    let mut reports = Vec::with_capacity(part_counts.len());
    for &n in part_counts {
        reports.push(bench_point(&doc, n, params, repetitions, &mut rng)?);
    }
    let mut fits = BTreeMap::new();
    let series: [(&str, fn(&BenchReport) -> f64); 5] = [
        ("watermarking", |r| r.watermarking.mean_ms),
        ("signatures", |r| r.signatures.mean_ms),
        ("encryption", |r| r.encryption.mean_ms),
        ("oblivious_transfer", |r| r.oblivious_transfer.mean_ms),
        ("detection", |r| r.detection.mean_ms),
    ];
    for (name, extract) in series {
        let points: Vec<(f64, f64)> = reports
            .iter()
            .map(|r| (r.parts as f64, extract(r)))
            .collect();
        fits.insert(name.to_string(), linear_fit(&points));
    }
    Ok(VaryPartsReport { reports, fits })
}

/// Sweep over document sizes at a fixed part count.
#[derive(Debug, Serialize)]
pub struct VarySizeReport {
    pub reports: Vec<BenchReport>,
    /// max/min ratio of mean OT time across sizes.
    pub ot_ratio: f64,
    /// max/min ratio of mean signature time across sizes.
    pub signature_ratio: f64,
    /// Watermarking and detection means ordered by pixel count.
    pub watermarking_means: Vec<f64>,
    pub detection_means: Vec<f64>,
}

pub fn bench_vary_size(
    parts: usize,
    sides: &[u32],
    repetitions: usize,
    params: &GroupParams,
    seed: u64,
) -> Result<VarySizeReport, ScenarioError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(sides.len());
    for &side in sides {
        let doc = synth::random_document(&mut rng, side, side);
        reports.push(bench_point(&doc, parts, params, repetitions, &mut rng)?);
    }
    let ratio = |extract: fn(&BenchReport) -> f64| {
        let means: Vec<f64> = reports.iter().map(extract).collect();
        let max = means.iter().cloned().fold(f64::MIN, f64::max);
        let min = means.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    };
    Ok(VarySizeReport {
        ot_ratio: ratio(|r| r.oblivious_transfer.mean_ms),
        signature_ratio: ratio(|r| r.signatures.mean_ms),
        watermarking_means: reports.iter().map(|r| r.watermarking.mean_ms).collect(),
        detection_means: reports.iter().map(|r| r.detection.mean_ms).collect(),
        reports,
    })
}

/// Plain-text table for terminal output; the JSON report carries the
/// same data machine-readably.
pub fn render_table(reports: &[BenchReport]) -> String {
    let mut out = String::new();
    out.push_str(
        "parts     size  reps     wm[ms]    sig[ms]    enc[ms]     ot[ms]    det[ms]  ok\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{:>5} {:>4}x{:<4} {:>5} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>10.2}  {}\n",
            r.parts,
            r.width,
            r.height,
            r.repetitions,
            r.watermarking.mean_ms,
            r.signatures.mean_ms,
            r.encryption.mean_ms,
            r.oblivious_transfer.mean_ms,
            r.detection.mean_ms,
            if r.all_detected { "yes" } else { "NO" },
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_recovers_a_line() {
        let fit = linear_fit(&[(1.0, 3.0), (2.0, 5.0), (3.0, 7.0), (4.0, 9.0)]);
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        // pure noise around a constant has no linear trend
        let flat = linear_fit(&[(1.0, 5.0), (2.0, 5.0), (3.0, 5.0)]);
        assert_eq!(flat.slope, 0.0);
    }

    #[test]
    fn zero_parts_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let doc = synth::random_document(&mut rng, 64, 64);
        assert!(bench_point(&doc, 0, &GroupParams::test(), 1, &mut rng).is_err());
    }

    #[test]
    fn small_bench_runs_and_detects_everything() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let doc = synth::random_document(&mut rng, 128, 128);
        let report = bench_point(&doc, 4, &GroupParams::test(), 2, &mut rng).unwrap();
        assert!(report.all_detected);
        assert_eq!(report.repetitions, 2);
        assert!(report.watermarking.mean_ms > 0.0);
        let table = render_table(std::slice::from_ref(&report));
        assert!(table.contains("yes"));
    }
}
