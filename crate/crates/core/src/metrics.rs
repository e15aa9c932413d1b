//! Evaluation metrics: Fréchet distance between Gaussian feature statistics,
//! SSIM and binarized mask IoU.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ensure_same, Error, Result};
use crate::tensorgrid::Image;

/// Diagonal jitter added before the matrix square root.
pub const FID_JITTER: f64 = 1e-10;

/// Mean and population covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub sample_count: usize,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Deterministic image -> feature vector map of fixed dimension.
pub trait FeatureExtractor {
    fn dim(&self, img: &Image) -> usize;
    fn extract(&self, img: &Image) -> Result<Vec<f64>>;
}

/// Per-cell, per-channel mean and standard deviation on a `grid x grid`
/// partition: all means first, then all deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchStats {
    pub grid: usize,
}

impl FeatureExtractor for PatchStats {
    fn dim(&self, img: &Image) -> usize {
        2 * img.channels * self.grid * self.grid
    }

    fn extract(&self, img: &Image) -> Result<Vec<f64>> {
        patch_stats_extractor(img, self.grid)
    }
}

pub fn patch_stats_extractor(img: &Image, grid: usize) -> Result<Vec<f64>> {
    if grid == 0 {
        return Err(Error::Input("patch grid must be at least 1".into()));
    }
    if img.height < grid || img.width < grid {
        return Err(Error::Shape(format!(
            "{}x{} image is smaller than a {grid}x{grid} grid",
            img.height, img.width
        )));
    }
    let cells = grid * grid * img.channels;
    let mut means = Vec::with_capacity(cells);
    let mut devs = Vec::with_capacity(cells);
    for gy in 0..grid {
        let (y0, y1) = (gy * img.height / grid, (gy + 1) * img.height / grid);
        for gx in 0..grid {
            let (x0, x1) = (gx * img.width / grid, (gx + 1) * img.width / grid);
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            for c in 0..img.channels {
                // offset by the first pixel so constant cells come out exact
                let origin = img.get(y0, x0, c);
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += img.get(y, x, c) - origin;
                    }
                }
                let mean = origin + sum / n;
                let mut var = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let d = img.get(y, x, c) - mean;
                        var += d * d;
                    }
                }
                means.push(mean);
                devs.push((var / n).sqrt());
            }
        }
    }
    means.extend(devs);
    Ok(means)
}

/// Sample mean and population (`1/n`) covariance.
pub fn feature_stats(features: &[Vec<f64>]) -> Result<FeatureStats> {
    let first = features
        .first()
        .ok_or_else(|| Error::Input("feature_stats needs at least one vector".into()))?;
    let d = first.len();
    for f in features {
        ensure_same("feature dimension", f.len(), d)?;
    }
    let n = features.len() as f64;
    let mut mean = DVector::zeros(d);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let x = DVector::from_column_slice(f) - &mean;
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += x[i] * x[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(FeatureStats {
        mean,
        cov,
        sample_count: features.len(),
    })
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let asym = (m - m.transpose()).amax();
    if asym > 1e-6 {
        return Err(Error::Input(format!("{what} covariance asymmetric by {asym:e}")));
    }
    Ok(())
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|u_a - u_b|^2 + Tr(S_a + S_b - 2 sqrt(S_a S_b))`, clamped at zero.
///
/// The trace of the square root is taken as `sum sqrt(eig(A^1/2 S_b A^1/2))`
/// with `A = S_a + jitter I`, which is symmetric and keeps the computation
/// in the real PSD cone.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    ensure_same("feature dimension", a.dim(), b.dim())?;
    check_symmetric(&a.cov, "first")?;
    check_symmetric(&b.cov, "second")?;
    let d = a.dim();
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let jittered = &a.cov + DMatrix::identity(d, d) * FID_JITTER;
    let root_a = psd_sqrt(&jittered);
    let mut m = &root_a * &b.cov * &root_a;
    m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m).eigenvalues;
    // eigenvalues at the solver's rounding level are zero; their square roots
    // would otherwise add up across the null space of rank-deficient sets
    let floor = eig.amax() * d as f64 * f64::EPSILON;
    let trace_root: f64 = eig.iter().filter(|&&l| l > floor).map(|l| l.sqrt()).sum();
    let fid = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * trace_root;
    if fid < -1e-8 {
        return Err(Error::Numeric(format!("Fréchet distance came out at {fid:e}")));
    }
    Ok(fid.max(0.0))
}

/// Fréchet distance between the feature distributions of two image sets.
pub fn fid_between_sets(a: &[Image], b: &[Image], extractor: &impl FeatureExtractor) -> Result<f64> {
    let fa = a.iter().map(|i| extractor.extract(i)).collect::<Result<Vec<_>>>()?;
    let fb = b.iter().map(|i| extractor.extract(i)).collect::<Result<Vec<_>>>()?;
    frechet_distance(&feature_stats(&fa)?, &feature_stats(&fb)?)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Single-scale SSIM on luma: 11x11 Gaussian window (sigma 1.5), averaged
/// over all fully contained window positions.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b, "ssim images")?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height, a.width
        )));
    }
    let (la, lb) = (a.to_luma()?, b.to_luma()?);
    let g = gaussian_window();
    let rows = a.height - SSIM_WINDOW + 1;
    let cols = a.width - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for y0 in 0..rows {
        for x0 in 0..cols {
            let (mut ma, mut mb) = (0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let w = g[dy] * g[dx];
                    ma += w * la.data[(y0 + dy) * a.width + x0 + dx];
                    mb += w * lb.data[(y0 + dy) * a.width + x0 + dx];
                }
            }
            let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let w = g[dy] * g[dx];
                    let da = la.data[(y0 + dy) * a.width + x0 + dx] - ma;
                    let db = lb.data[(y0 + dy) * a.width + x0 + dx] - mb;
                    va += w * da * da;
                    vb += w * db * db;
                    cab += w * da * db;
                }
            }
            let num = (2.0 * (ma * mb) + SSIM_C1) * (2.0 * cab + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            total += num / den;
        }
    }
    Ok(total / (rows * cols) as f64)
}

/// IoU of the masks binarized at `value > threshold`; an empty union is 1.
pub fn mask_iou(a: &Image, b: &Image, threshold: f64) -> Result<f64> {
    a.ensure_same_shape(b, "mask iou")?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (p, q) = (x > threshold, y > threshold);
        inter += usize::from(p && q);
        union += usize::from(p || q);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
