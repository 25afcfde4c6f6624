//! Reinhard colour transfer: match per-channel lαβ mean and standard
//! deviation to a target.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::color::{quantize, LabConverter};
use crate::error::{Error, Result};

/// Below this a channel is treated as flat and only shifted.
pub const FLAT_CHANNEL_STD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReinhardTarget {
    pub means: [f64; 3],
    pub stds: [f64; 3],
}

/// Per-channel mean and population standard deviation of lαβ pixels.
pub fn lab_stats(lab: &[[f64; 3]]) -> ReinhardTarget {
    let n = lab.len() as f64;
    let mut means = [0.0; 3];
    for p in lab {
        (0..3).for_each(|c| means[c] += p[c]);
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = [0.0; 3];
    for p in lab {
        (0..3).for_each(|c| stds[c] += (p[c] - means[c]).powi(2));
    }
    stds.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    ReinhardTarget { means, stds }
}

/// Averages per-patch lαβ statistics over the pool.
pub fn reinhard_fit(pool: &[RgbImage]) -> Result<ReinhardTarget> {
    if pool.is_empty() {
        return Err(Error::Parameter("Reinhard target pool is empty".into()));
    }
    let conv = LabConverter::default();
    let mut acc = ReinhardTarget {
        means: [0.0; 3],
        stds: [0.0; 3],
    };
    for patch in pool {
        if patch.width() == 0 || patch.height() == 0 {
            return Err(Error::Parameter("empty patch in Reinhard pool".into()));
        }
        let s = lab_stats(&conv.image_to_lab(patch));
        for c in 0..3 {
            acc.means[c] += s.means[c];
            acc.stds[c] += s.stds[c];
        }
    }
    let n = pool.len() as f64;
    acc.means.iter_mut().for_each(|m| *m /= n);
    acc.stds.iter_mut().for_each(|s| *s /= n);
    if let Some(c) = acc.stds.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::DegenerateStain(format!(
            "Reinhard target channel {c} has zero spread over the whole pool"
        )));
    }
    Ok(acc)
}

/// Affine per-channel map in lαβ. Returns the mapped pixels and, per
/// channel, whether it was flat and therefore only shifted.
pub fn reinhard_transform_lab(lab: &[[f64; 3]], target: &ReinhardTarget) -> (Vec<[f64; 3]>, [bool; 3]) {
    let src = lab_stats(lab);
    let mut flat = [false; 3];
    let mut scale = [1.0; 3];
    for c in 0..3 {
        if src.stds[c] < FLAT_CHANNEL_STD {
            flat[c] = true;
        } else {
            scale[c] = target.stds[c] / src.stds[c];
        }
    }
    let out = lab
        .iter()
        .map(|p| std::array::from_fn(|c| (p[c] - src.means[c]) * scale[c] + target.means[c]))
        .collect();
    (out, flat)
}

/// A normalized patch and the channels that were shifted only.
#[derive(Debug, Clone)]
pub struct ReinhardOutput {
    pub image: RgbImage,
    pub flat_channels: [bool; 3],
}

pub fn reinhard_apply(patch: &RgbImage, target: &ReinhardTarget) -> ReinhardOutput {
    let conv = LabConverter::default();
    let (lab, flat_channels) = reinhard_transform_lab(&conv.image_to_lab(patch), target);
    if flat_channels.iter().any(|&f| f) {
        log::warn!("Reinhard: flat lab channel(s) {flat_channels:?}; shifted without scaling");
    }
    let w = patch.width();
    let image = RgbImage::from_fn(w, patch.height(), |x, y| {
        Rgb(quantize(conv.lab_to_rgb(lab[(y * w + x) as usize])))
    });
    ReinhardOutput {
        image,
        flat_channels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch() -> RgbImage {
        RgbImage::from_fn(16, 16, |x, y| Rgb([(100 + 5 * x) as u8, (60 + 7 * y) as u8, (150 + x + y) as u8]))
    }

    #[test]
    fn self_target_is_near_identity() {
        let p = patch();
        let t = reinhard_fit(std::slice::from_ref(&p)).unwrap();
        let out = reinhard_apply(&p, &t).image;
        for (a, b) in p.pixels().zip(out.pixels()) {
            for c in 0..3 {
                assert!((i16::from(a.0[c]) - i16::from(b.0[c])).abs() <= 1);
            }
        }
    }

    #[test]
    fn identical_pool_matches_single() {
        let p = patch();
        let one = reinhard_fit(std::slice::from_ref(&p)).unwrap();
        let three = reinhard_fit(&[p.clone(), p.clone(), p]).unwrap();
        for c in 0..3 {
            assert!((one.means[c] - three.means[c]).abs() < 1e-12);
            assert!((one.stds[c] - three.stds[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_pool_is_rejected() {
        let p = RgbImage::from_pixel(4, 4, Rgb([10, 20, 30]));
        assert!(matches!(reinhard_fit(&[p]), Err(Error::DegenerateStain(_))));
        assert!(reinhard_fit(&[]).is_err());
    }

    #[test]
    fn flat_channel_is_shifted() {
        let p = RgbImage::from_pixel(4, 4, Rgb([10, 20, 30]));
        let t = ReinhardTarget {
            means: [5.0, 0.0, 0.0],
            stds: [1.0, 1.0, 1.0],
        };
        assert_eq!(reinhard_apply(&p, &t).flat_channels, [true; 3]);
    }
}
