//! Synthetic test documents.
//!
//! Scenario files and benchmarks frequently ask for "a random document";
//! this generator produces natural-looking grayscale content (smooth
//! low-frequency structure plus fine texture) rather than white noise,
//! so the frequency spectrum resembles a photograph's.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::document::Document;

/// Generates a random document with photograph-like spectral content.
pub fn random_document<R: Rng + ?Sized>(rng: &mut R, width: u32, height: u32) -> Document {
    let w = width as usize;
    let h = height as usize;
    let mut samples = vec![128.0f64; w * h];

    // a handful of low-frequency cosine blobs form the large structure;
    // amplitudes are kept low enough that the sum almost never reaches
    // the 0/255 rails, where clamping would eat embedded marks
    for _ in 0..6 {
        let amp: f64 = rng.gen_range(8.0..22.0);
        let fx: f64 = rng.gen_range(0.5..4.0);
        let fy: f64 = rng.gen_range(0.5..4.0);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        for y in 0..h {
            let ty = fy * y as f64 / h as f64;
            for x in 0..w {
                let tx = fx * x as f64 / w as f64;
                samples[y * w + x] += amp * (std::f64::consts::TAU * (tx + ty) + phase).cos();
            }
        }
    }

    let texture = Normal::new(0.0, 10.0).expect("valid sigma");
    for s in samples.iter_mut() {
        *s += texture.sample(rng);
    }

    Document::from_f64(width, height, &samples).expect("generator respects minimum size")
}

/// The fixed 512x512 reference image used by examples and calibration.
pub fn test_image() -> Document {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0x11_AE_51_2E);
    random_document(&mut rng, 512, 512)
}
