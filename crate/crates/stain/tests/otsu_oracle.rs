use batchaudit_oracles::otsu_brute as brute_force;
use batchaudit_stain::otsu_threshold;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_histogram(rng: &mut ChaCha8Rng) -> [u64; 256] {
    let mut h = [0u64; 256];
    match rng.random_range(0..3) {
        0 => h.iter_mut().for_each(|b| *b = rng.random_range(0..1000)),
        1 => {
            for _ in 0..rng.random_range(2..6) {
                h[rng.random_range(0..256)] += rng.random_range(1..5000);
            }
        }
        _ => {
            let (a, b) = (rng.random_range(20..100usize), rng.random_range(150..240usize));
            for i in 0..256usize {
                let d = (i as f64 - a as f64).abs().min((i as f64 - b as f64).abs());
                h[i] = (3000.0 * (-d * d / 200.0).exp()) as u64;
            }
        }
    }
    if h.iter().filter(|&&c| c > 0).count() < 2 {
        h[0] += 1;
        h[255] += 1;
    }
    h
}

#[test]
fn hundred_random_histograms_match_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let h = random_histogram(&mut rng);
        let o = otsu_threshold(&h).unwrap();
        assert!(!o.degenerate);
        assert_eq!(o.threshold, brute_force(&h), "histogram {h:?}");
    }
}

proptest! {
    #[test]
    fn threshold_is_exhaustive_argmax(bins in proptest::collection::vec(0u64..500, 256)) {
        let mut h = [0u64; 256];
        h.copy_from_slice(&bins);
        prop_assume!(h.iter().filter(|&&c| c > 0).count() >= 2);
        prop_assert_eq!(otsu_threshold(&h).unwrap().threshold, brute_force(&h));
    }
}
