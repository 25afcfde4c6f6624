//! Background exclusion: Otsu thresholding on slide thumbnails and the
//! per-patch standard-deviation filter.

use image::{GrayImage, Luma, RgbImage};

use crate::color::luma;

/// Result of [`otsu_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Otsu {
    /// Pixels with intensity `< threshold` form the dark class.
    pub threshold: u8,
    /// All mass sat in a single bin; `threshold` is that bin.
    pub degenerate: bool,
}

/// Smallest `t` in 1..=255 maximizing the between-class variance of the
/// partition {< t, ≥ t}.
///
/// Returns `None` for an empty histogram.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<Otsu> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let occupied: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
    if occupied.len() == 1 {
        log::warn!("Otsu: all pixels share intensity {}", occupied[0]);
        return Some(Otsu {
            threshold: occupied[0] as u8,
            degenerate: true,
        });
    }
    let n = i128::from(total);
    let s: i128 = (0..256).map(|i| i as i128 * i128::from(hist[i])).sum();
    let (mut n0, mut s0) = (0i128, 0i128);
    let mut best = (0u8, f64::NEG_INFINITY);
    for t in 1..256usize {
        n0 += i128::from(hist[t - 1]);
        s0 += (t as i128 - 1) * i128::from(hist[t - 1]);
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        // n² · σ_B² = (s·n0 − s0·n)² / (n0·n1); the numerator is exact.
        let num = (s * n0 - s0 * n) as f64;
        let v = num * num / (n0 as f64 * n1 as f64);
        if v > best.1 {
            best = (t as u8, v);
        }
    }
    Some(Otsu {
        threshold: best.0,
        degenerate: false,
    })
}

/// Intensity histogram of a grayscale image.
pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    for p in img.pixels() {
        h[p.0[0] as usize] += 1;
    }
    h
}

/// Box-averaged grayscale thumbnail at `1/factor` scale. Edge blocks that
/// overhang the image average only the pixels they cover.
pub fn thumbnail(img: &RgbImage, factor: u32) -> GrayImage {
    let (w, h) = img.dimensions();
    let (tw, th) = (w.div_ceil(factor), h.div_ceil(factor));
    let mut sum = vec![0.0f64; (tw * th) as usize];
    let mut count = vec![0u32; (tw * th) as usize];
    for (x, y, p) in img.enumerate_pixels() {
        let k = ((y / factor) * tw + x / factor) as usize;
        sum[k] += luma(p.0);
        count[k] += 1;
    }
    GrayImage::from_fn(tw, th, |x, y| {
        let k = (y * tw + x) as usize;
        Luma([(sum[k] / f64::from(count[k])).round().clamp(0.0, 255.0) as u8])
    })
}

/// Binary tissue mask over a thumbnail.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMask {
    pub width: u32,
    pub height: u32,
    pub tissue: Vec<bool>,
    pub otsu: Otsu,
}

impl TissueMask {
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.tissue[(y * self.width + x) as usize]
    }

    pub fn count(&self) -> usize {
        self.tissue.iter().filter(|&&t| t).count()
    }

    /// Fraction of tissue pixels in the footprint of the slide region
    /// `[x, x + size) × [y, y + size)` on a thumbnail at `1/factor` scale.
    pub fn footprint_fraction(&self, x: u32, y: u32, size: u32, factor: u32) -> f64 {
        let x1 = (x + size).div_ceil(factor).min(self.width);
        let y1 = (y + size).div_ceil(factor).min(self.height);
        let (x0, y0) = (x / factor, y / factor);
        let mut hit = 0usize;
        let mut all = 0usize;
        for ty in y0..y1 {
            for tx in x0..x1 {
                all += 1;
                hit += usize::from(self.get(tx, ty));
            }
        }
        if all == 0 {
            0.0
        } else {
            hit as f64 / all as f64
        }
    }
}

/// Tissue is every pixel darker than the Otsu threshold.
///
/// When even the bright Otsu class is darker than `glass_min_intensity`
/// there is no glass in view and every pixel counts as tissue. This keeps
/// fully covered slides from being split in half by the threshold.
pub fn tissue_mask(thumb: &GrayImage, glass_min_intensity: u8) -> TissueMask {
    let hist = histogram(thumb);
    let (width, height) = thumb.dimensions();
    let Some(otsu) = otsu_threshold(&hist) else {
        return TissueMask {
            width,
            height,
            tissue: Vec::new(),
            otsu: Otsu {
                threshold: 0,
                degenerate: true,
            },
        };
    };
    let t = otsu.threshold as usize;
    let (n1, s1) = (t..256).fold((0u64, 0f64), |(n, s), i| (n + hist[i], s + i as f64 * hist[i] as f64));
    let bright_mean = if n1 > 0 { s1 / n1 as f64 } else { 0.0 };
    let no_glass = bright_mean < f64::from(glass_min_intensity);
    let tissue = thumb
        .pixels()
        .map(|p| no_glass || p.0[0] < otsu.threshold)
        .collect();
    TissueMask {
        width,
        height,
        tissue,
        otsu,
    }
}

/// How the standard-deviation filter measures contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdMode {
    /// Standard deviation of the luma channel.
    #[default]
    Grayscale,
    /// Largest of the three per-channel standard deviations.
    PerChannel,
}

/// Population standard deviation of a stream, by Welford's update.
fn welford(values: impl Iterator<Item = f64>) -> f64 {
    let (mut n, mut mean, mut m2) = (0f64, 0f64, 0f64);
    for v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    if n == 0.0 {
        0.0
    } else {
        (m2 / n).sqrt()
    }
}

/// Contrast of a patch under `mode`.
pub fn patch_std(patch: &RgbImage, mode: StdMode) -> f64 {
    match mode {
        StdMode::Grayscale => welford(patch.pixels().map(|p| luma(p.0))),
        StdMode::PerChannel => (0..3)
            .map(|c| welford(patch.pixels().map(|p| f64::from(p.0[c]))))
            .fold(0.0, f64::max),
    }
}

/// Keeps a patch iff its contrast is at least `min_std`.
pub fn patch_std_filter(patch: &RgbImage, min_std: f64, mode: StdMode) -> bool {
    patch_std(patch, mode) >= min_std
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn deltas_pick_smallest_threshold() {
        let mut h = [0u64; 256];
        h[50] = 10;
        h[200] = 10;
        assert_eq!(otsu_threshold(&h).unwrap().threshold, 51);
    }

    #[test]
    fn single_bin_is_degenerate() {
        let mut h = [0u64; 256];
        h[77] = 5;
        let o = otsu_threshold(&h).unwrap();
        assert!(o.degenerate);
        assert_eq!(o.threshold, 77);
        assert!(otsu_threshold(&[0; 256]).is_none());
    }

    #[test]
    fn white_thumbnail_has_no_tissue() {
        let t = GrayImage::from_pixel(16, 16, Luma([255]));
        assert_eq!(tissue_mask(&t, 200).count(), 0);
    }

    #[test]
    fn half_black_mask() {
        let t = GrayImage::from_fn(16, 8, |x, _| Luma([if x < 8 { 0 } else { 255 }]));
        let m = tissue_mask(&t, 200);
        for y in 0..8 {
            for x in 0..16 {
                assert_eq!(m.get(x, y), x < 8);
            }
        }
    }

    #[test]
    fn std_filter_two_point() {
        let flat = RgbImage::from_pixel(8, 8, Rgb([120, 40, 200]));
        assert_eq!(patch_std(&flat, StdMode::Grayscale), 0.0);
        assert!(!patch_std_filter(&flat, 8.0, StdMode::Grayscale));
        let half = RgbImage::from_fn(8, 8, |x, _| if x < 4 { Rgb([0; 3]) } else { Rgb([255; 3]) });
        assert!((patch_std(&half, StdMode::Grayscale) - 127.5).abs() < 1e-9);
        assert!(patch_std_filter(&half, 8.0, StdMode::PerChannel));
    }
}
