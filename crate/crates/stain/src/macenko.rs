//! Macenko stain normalization in optical-density space.

use image::{Rgb, RgbImage};
use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Incident light intensity.
pub const I0: f64 = 256.0;
/// Pixels with any channel at or below this optical density are background.
pub const BETA: f64 = 0.15;
/// Percentile (and 100 − percentile) of the angle distribution taken as the
/// extreme stain directions.
pub const ALPHA: f64 = 1.0;
/// Percentile of concentrations taken as the stain maximum.
pub const MAX_CONC_PERCENTILE: f64 = 99.0;
/// Minimum tissue pixels needed to estimate stains.
pub const MIN_TISSUE_PIXELS: usize = 100;

/// Stain appearance: unit-norm hematoxylin and eosin OD vectors and their
/// robust maximum concentrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacenkoTarget {
    /// Columns of the 3×2 stain matrix: `[hematoxylin, eosin]`.
    pub stain_matrix: [[f64; 3]; 2],
    pub max_concentrations: [f64; 2],
}

impl MacenkoTarget {
    fn matrix(&self) -> nalgebra::Matrix3x2<f64> {
        nalgebra::Matrix3x2::from_columns(&[
            Vector3::from(self.stain_matrix[0]),
            Vector3::from(self.stain_matrix[1]),
        ])
    }
}

#[inline]
pub fn optical_density(i: u8) -> f64 {
    -((f64::from(i) + 1.0) / I0).log10()
}

#[inline]
pub fn intensity(od: f64) -> f64 {
    I0 * 10f64.powf(-od) - 1.0
}

pub fn image_od(img: &RgbImage) -> Vec<[f64; 3]> {
    img.pixels().map(|p| p.0.map(optical_density)).collect()
}

/// Linear-interpolation percentile of unsorted data, `q` in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn is_tissue(od: &[f64; 3]) -> bool {
    od.iter().all(|&v| v > BETA)
}

/// Stain matrix and concentrations of one image.
#[derive(Debug, Clone)]
pub struct StainEstimate {
    pub target: MacenkoTarget,
    /// Per-pixel `[h, e]` concentrations over every pixel.
    pub concentrations: Vec<[f64; 2]>,
    pub tissue_pixels: usize,
}

/// Estimates the stain matrix from per-pixel optical densities. Returns
/// `Ok(None)` when fewer than [`MIN_TISSUE_PIXELS`] pixels are tissue.
pub fn estimate_stains_od(od: &[[f64; 3]]) -> Result<Option<StainEstimate>> {
    let tissue: Vec<Vector3<f64>> = od.iter().filter(|p| is_tissue(p)).map(|p| Vector3::from(*p)).collect();
    if tissue.len() < MIN_TISSUE_PIXELS {
        return Ok(None);
    }
    let n = tissue.len() as f64;
    let mean = tissue.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for v in &tissue {
        let d = v - mean;
        cov += d * d.transpose();
    }
    cov /= n - 1.0;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 0.0) || !(l2 > 1e-12 * l1) {
        return Err(Error::DegenerateStain(format!(
            "optical-density covariance has rank < 2 (eigenvalues {l1:.3e}, {l2:.3e})"
        )));
    }
    let mut e1: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    let mut e2: Vector3<f64> = eig.eigenvectors.column(order[1]).into();
    if e1.dot(&mean) < 0.0 {
        e1 = -e1;
    }
    if e2.sum() < 0.0 {
        e2 = -e2;
    }

    let phi: Vec<f64> = tissue.iter().map(|v| v.dot(&e2).atan2(v.dot(&e1))).collect();
    let lo = percentile(&phi, ALPHA);
    let hi = percentile(&phi, 100.0 - ALPHA);
    let a = nonnegative_unit(e1 * lo.cos() + e2 * lo.sin())?;
    let b = nonnegative_unit(e1 * hi.cos() + e2 * hi.sin())?;
    let (h, e) = if a[2] >= b[2] { (a, b) } else { (b, a) };

    let s = nalgebra::Matrix3x2::from_columns(&[h, e]);
    let gram: Matrix2<f64> = s.transpose() * s;
    let pinv = gram
        .try_inverse()
        .ok_or_else(|| Error::DegenerateStain("stain vectors are parallel".into()))?
        * s.transpose();
    let concentrations: Vec<[f64; 2]> = od
        .iter()
        .map(|p| {
            let c = pinv * Vector3::from(*p);
            [c[0], c[1]]
        })
        .collect();
    let tissue_conc = |k: usize| -> Vec<f64> {
        od.iter()
            .zip(&concentrations)
            .filter(|(p, _)| is_tissue(p))
            .map(|(_, c)| c[k])
            .collect()
    };
    let max_concentrations = [
        percentile(&tissue_conc(0), MAX_CONC_PERCENTILE),
        percentile(&tissue_conc(1), MAX_CONC_PERCENTILE),
    ];
    Ok(Some(StainEstimate {
        target: MacenkoTarget {
            stain_matrix: [h.into(), e.into()],
            max_concentrations,
        },
        concentrations,
        tissue_pixels: tissue.len(),
    }))
}

/// Flips a direction into the positive orthant, clamps residual negative
/// entries to zero and renormalizes.
fn nonnegative_unit(mut v: Vector3<f64>) -> Result<Vector3<f64>> {
    if v.sum() < 0.0 {
        v = -v;
    }
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let n = v.norm();
    if !(n > 0.0) {
        return Err(Error::DegenerateStain("stain direction has no positive component".into()));
    }
    Ok(v / n)
}

pub fn estimate_stains(img: &RgbImage) -> Result<Option<StainEstimate>> {
    estimate_stains_od(&image_od(img))
}

/// Averages per-patch stain matrices (renormalized to unit columns) and
/// maximum concentrations. Patches without enough tissue are left out.
pub fn macenko_fit(pool: &[RgbImage]) -> Result<MacenkoTarget> {
    let mut cols = [Vector3::zeros(), Vector3::zeros()];
    let mut maxc = [0.0; 2];
    let mut used = 0usize;
    for (i, patch) in pool.iter().enumerate() {
        match estimate_stains(patch)? {
            Some(est) => {
                for k in 0..2 {
                    cols[k] += Vector3::from(est.target.stain_matrix[k]);
                    maxc[k] += est.target.max_concentrations[k];
                }
                used += 1;
            }
            None => log::warn!("Macenko fit: pool patch {i} has too little tissue, skipped"),
        }
    }
    if used == 0 {
        return Err(Error::InsufficientTissue(format!(
            "none of the {} pool patches has {MIN_TISSUE_PIXELS} tissue pixels",
            pool.len()
        )));
    }
    let mut stain_matrix = [[0.0; 3]; 2];
    for k in 0..2 {
        let n = cols[k].norm();
        if !(n > 0.0) {
            return Err(Error::DegenerateStain("averaged stain vector vanished".into()));
        }
        stain_matrix[k] = (cols[k] / n).into();
        maxc[k] /= used as f64;
    }
    Ok(MacenkoTarget {
        stain_matrix,
        max_concentrations: maxc,
    })
}

/// Result of [`macenko_apply`].
#[derive(Debug, Clone)]
pub struct MacenkoOutcome {
    pub image: RgbImage,
    /// Too little tissue to estimate stains; `image` is the input unchanged.
    pub passed_through: bool,
    pub tissue_pixels: usize,
}

pub fn macenko_apply(patch: &RgbImage, target: &MacenkoTarget) -> Result<MacenkoOutcome> {
    let od = image_od(patch);
    let Some(src) = estimate_stains_od(&od)? else {
        let tissue_pixels = od.iter().filter(|p| is_tissue(p)).count();
        return Ok(MacenkoOutcome {
            image: patch.clone(),
            passed_through: true,
            tissue_pixels,
        });
    };
    let mut scale = [0.0; 2];
    for k in 0..2 {
        let m = src.target.max_concentrations[k];
        if !(m > 0.0) {
            return Err(Error::DegenerateStain(format!(
                "maximum concentration of stain {k} is not positive ({m})"
            )));
        }
        scale[k] = target.max_concentrations[k] / m;
    }
    let s = target.matrix();
    let w = patch.width();
    let image = RgbImage::from_fn(w, patch.height(), |x, y| {
        let c = src.concentrations[(y * w + x) as usize];
        let rec = s * nalgebra::Vector2::new(c[0] * scale[0], c[1] * scale[1]);
        Rgb([0, 1, 2].map(|ch| intensity(rec[ch]).round().clamp(0.0, 255.0) as u8))
    });
    Ok(MacenkoOutcome {
        image,
        passed_through: false,
        tissue_pixels: src.tissue_pixels,
    })
}
