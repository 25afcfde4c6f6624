//! Synthetic H&E-like patches from a two-stain Beer–Lambert model.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::macenko::intensity;

/// Typical hematoxylin and eosin OD directions, unit norm.
pub fn reference_stains() -> [[f64; 3]; 2] {
    [unit([0.65, 0.70, 0.29]), unit([0.07, 0.99, 0.11])]
}

pub fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| x / n)
}

/// Pixel mix of a synthetic patch. Fractions need not sum to one; the rest
/// of the pixels mix both stains.
#[derive(Debug, Clone, Copy)]
pub struct StainMix {
    pub background: f64,
    pub pure_h: f64,
    pub pure_e: f64,
    /// Concentration range for single-stain pixels.
    pub pure_range: (f64, f64),
    /// Per-stain concentration upper bound for mixed pixels.
    pub mixed_max: [f64; 2],
    /// Standard deviation of additive OD noise.
    pub od_noise: f64,
}

impl Default for StainMix {
    fn default() -> Self {
        Self {
            background: 0.15,
            pure_h: 0.2,
            pure_e: 0.2,
            pure_range: (0.4, 1.0),
            mixed_max: [1.0, 0.8],
            od_noise: 0.0,
        }
    }
}

/// Per-pixel optical densities of a synthetic patch, before quantization.
pub fn he_od(size: u32, stains: &[[f64; 3]; 2], mix: &StainMix, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, mix.od_noise.max(0.0)).expect("finite noise");
    (0..size * size)
        .map(|_| {
            let u: f64 = rng.random();
            let c = if u < mix.background {
                [0.0, 0.0]
            } else if u < mix.background + mix.pure_h {
                [rng.random_range(mix.pure_range.0..=mix.pure_range.1), 0.0]
            } else if u < mix.background + mix.pure_h + mix.pure_e {
                [0.0, rng.random_range(mix.pure_range.0..=mix.pure_range.1)]
            } else {
                [rng.random::<f64>() * mix.mixed_max[0], rng.random::<f64>() * mix.mixed_max[1]]
            };
            std::array::from_fn(|ch| {
                let od = stains[0][ch] * c[0] + stains[1][ch] * c[1];
                if mix.od_noise > 0.0 {
                    od + noise.sample(&mut rng)
                } else {
                    od
                }
            })
        })
        .collect()
}

/// Quantized RGB patch for [`he_od`].
pub fn he_patch(size: u32, stains: &[[f64; 3]; 2], mix: &StainMix, seed: u64) -> RgbImage {
    let od = he_od(size, stains, mix, seed);
    RgbImage::from_fn(size, size, |x, y| {
        let p = od[(y * size + x) as usize];
        Rgb(p.map(|v| intensity(v).round().clamp(0.0, 255.0) as u8))
    })
}

/// Textured tissue-coloured RGB value for slide mock-ups.
pub fn tissue_pixel(rng: &mut impl Rng) -> Rgb<u8> {
    Rgb([
        rng.random_range(120..=200),
        rng.random_range(60..=140),
        rng.random_range(130..=200),
    ])
}
