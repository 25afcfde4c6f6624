//! Colour-space conversions on 8-bit sRGB pixels.

use image::{GrayImage, Luma, RgbImage};
use nalgebra::Matrix3;

/// Rec. 601 luma of an RGB triple, unrounded.
#[inline]
pub fn luma(p: [u8; 3]) -> f64 {
    0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
}

/// Rounded luma image.
pub fn to_gray(img: &RgbImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        Luma([luma(img.get_pixel(x, y).0).round().clamp(0.0, 255.0) as u8])
    })
}

fn rgb_to_lms() -> Matrix3<f64> {
    Matrix3::new(
        0.3811, 0.5783, 0.0402, //
        0.1967, 0.7244, 0.0782, //
        0.0241, 0.1288, 0.8444,
    )
}

fn log_lms_to_lab() -> Matrix3<f64> {
    let s3 = 1.0 / 3f64.sqrt();
    let s6 = 1.0 / 6f64.sqrt();
    let s2 = 1.0 / 2f64.sqrt();
    Matrix3::new(s3, 0.0, 0.0, 0.0, s6, 0.0, 0.0, 0.0, s2)
        * Matrix3::new(1.0, 1.0, 1.0, 1.0, 1.0, -2.0, 1.0, -1.0, 0.0)
}

/// Forward and inverse lαβ transforms.
#[derive(Debug, Clone)]
pub struct LabConverter {
    to_lms: Matrix3<f64>,
    from_lms: Matrix3<f64>,
    to_lab: Matrix3<f64>,
    from_lab: Matrix3<f64>,
}

impl Default for LabConverter {
    fn default() -> Self {
        let to_lms = rgb_to_lms();
        let to_lab = log_lms_to_lab();
        Self {
            from_lms: to_lms.try_inverse().expect("RGB to LMS matrix is invertible"),
            from_lab: to_lab.try_inverse().expect("LMS to lab matrix is invertible"),
            to_lms,
            to_lab,
        }
    }
}

impl LabConverter {
    /// RGB in [0, 255] to lαβ (natural-log LMS opponent space).
    pub fn rgb_to_lab(&self, rgb: [f64; 3]) -> [f64; 3] {
        let lms = self.to_lms * nalgebra::Vector3::from(rgb);
        let log = lms.map(|v| if v > 0.0 { v.ln() } else { f64::EPSILON.ln() });
        (self.to_lab * log).into()
    }

    /// lαβ back to continuous RGB (not clamped).
    pub fn lab_to_rgb(&self, lab: [f64; 3]) -> [f64; 3] {
        let log = self.from_lab * nalgebra::Vector3::from(lab);
        (self.from_lms * log.map(f64::exp)).into()
    }

    pub fn image_to_lab(&self, img: &RgbImage) -> Vec<[f64; 3]> {
        img.pixels()
            .map(|p| self.rgb_to_lab(p.0.map(f64::from)))
            .collect()
    }
}

/// Rounds and clamps a continuous RGB value to 8 bits.
#[inline]
pub fn quantize(rgb: [f64; 3]) -> [u8; 3] {
    rgb.map(|v| v.round().clamp(0.0, 255.0) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_is_achromatic() {
        let c = LabConverter::default();
        let lab = c.rgb_to_lab([255.0, 255.0, 255.0]);
        // Rows of the LMS matrix sum to ~1, so alpha and beta vanish.
        assert!(lab[1].abs() < 1e-2 && lab[2].abs() < 1e-2);
        let back = c.lab_to_rgb(lab);
        assert!(back.iter().all(|v| (v - 255.0).abs() < 1e-9));
    }

    #[test]
    fn gray_luma() {
        let img = RgbImage::from_pixel(2, 2, image::Rgb([10, 20, 30]));
        assert_eq!(to_gray(&img).get_pixel(0, 0).0[0], 18);
    }
}
