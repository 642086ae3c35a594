use lime_core::document::{split_with, SplitGeometry};
use lime_core::synth;
use lime_core::watermark::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[test]
#[ignore]
fn which_part_fails() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let doc = synth::random_document(&mut rng, 512, 512);
    for n in [256usize, 1024] {
        let geometry = SplitGeometry::square(512, 512, n).unwrap();
        let whole_cfg = EmbedConfig::for_document(512, 512);
        let part_cfg = EmbedConfig::for_part(geometry.part_width, geometry.part_height);
        let k1 = WatermarkKey::generate(&mut rng);
        let k2 = WatermarkKey::generate(&mut rng);
        let sigma = WatermarkDescriptor::whole(b"stmt".to_vec(), k1);
        let marked = embed(&doc, &sigma, &whole_cfg).unwrap();
        let parts = split_with(&marked, &geometry).unwrap();
        let bits: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let mut worst_own = f64::INFINITY;
        let mut worst_other: f64 = f64::MIN;
        let mut fails = 0;
        for (i, part) in parts.iter().enumerate() {
            let v = embed(part, &WatermarkDescriptor::part_bit(bits[i], k2, i as u32), &part_cfg).unwrap();
            let own = detect_correlation(&v, &WatermarkDescriptor::part_bit(bits[i], k2, i as u32), part, &part_cfg).unwrap();
            let other = detect_correlation(&v, &WatermarkDescriptor::part_bit(!bits[i], k2, i as u32), part, &part_cfg).unwrap();
            worst_own = worst_own.min(own);
            worst_other = worst_other.max(other);
            let outcome = detect_part_bit(&v, &k2, i as u32, part, &part_cfg).unwrap();
            let expected = if bits[i] { PartBit::One } else { PartBit::Zero };
            if outcome != expected { fails += 1; if fails < 5 { println!("n={n} part {i}: {outcome:?} own={own:.2} other={other:.2}"); } }
        }
        println!("n={n}: fails={fails} worst_own={worst_own:.2} worst_other={worst_other:.2} m={}", part_cfg.m);
    }
}
