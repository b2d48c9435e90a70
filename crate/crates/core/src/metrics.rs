//! Quantitative evaluation: PSNR, SSIM, the reconstruction-efficiency
//! score, and sparsification curves with their area-under-error.

use crate::error::{Error, Result};
use crate::scene::Image;

/// PSNR is capped here once the MSE drops below 1e-10.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio in dB between two images with values in
/// [0, 1].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dimension(format!(
            "psnr inputs {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let n = (a.data.len() * 3) as f64;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(pa, pb)| {
            (0..3)
                .map(|ch| (pa[ch] - pb[ch]) * (pa[ch] - pb[ch]))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    if mse < 1e-10 {
        Ok(PSNR_CAP_DB)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean structural similarity over the luminance channel, using an
/// 11x11 Gaussian window (sigma 1.5) evaluated wherever the window
/// fits.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dimension(format!(
            "ssim inputs {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }

    let luma =
        |img: &Image| -> Vec<f64> { img.data.iter().map(|p| crate::gauss_mi::luminance(*p) / 255.0).collect() };
    let la = luma(a);
    let lb = luma(b);

    // Normalized Gaussian window.
    let half = SSIM_WINDOW / 2;
    let mut w = [[0.0f64; SSIM_WINDOW]; SSIM_WINDOW];
    let mut wsum = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let dy = i as f64 - half as f64;
            let dx = j as f64 - half as f64;
            *v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            wsum += *v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= wsum;
        }
    }

    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    let mut acc = 0.0;
    let mut count = 0usize;
    for cy in half..a.height - half {
        for cx in half..a.width - half {
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
            for (i, row) in w.iter().enumerate() {
                for (j, wv) in row.iter().enumerate() {
                    let idx = (cy + i - half) * a.width + (cx + j - half);
                    let (va, vb) = (la[idx], lb[idx]);
                    mu_a += wv * va;
                    mu_b += wv * vb;
                    aa += wv * va * va;
                    bb += wv * vb * vb;
                    ab += wv * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            acc += s;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogBase {
    /// Base-10 logarithm (the reporting default).
    Ten,
    Natural,
}

/// Reconstruction efficiency: PSNR over the log of the frame count.
pub fn efficiency(psnr_db: f64, n_frames: usize, base: LogBase) -> Result<f64> {
    if n_frames < 2 {
        return Err(Error::InvalidArgument(format!(
            "efficiency needs at least 2 frames, got {n_frames}"
        )));
    }
    let denom = match base {
        LogBase::Ten => (n_frames as f64).log10(),
        LogBase::Natural => (n_frames as f64).ln(),
    };
    Ok(psnr_db / denom)
}

/// Remaining mean absolute error as the most uncertain (resp. most
/// erroneous, for the oracle) pixels are removed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsificationCurve {
    /// Removed-pixel fractions in [0, 0.99].
    pub fractions: Vec<f64>,
    /// MAE of the kept pixels when ranked by estimated uncertainty.
    pub mae: Vec<f64>,
    /// MAE of the kept pixels when ranked by true error.
    pub oracle_mae: Vec<f64>,
}

/// Build the sparsification curve for a true-error image and an
/// uncertainty estimate over `grid_steps` uniform fractions in
/// [0, 0.99]. Ties are broken by pixel index.
pub fn sparsification(
    error: &[f64],
    uncertainty: &[f64],
    grid_steps: usize,
) -> Result<SparsificationCurve> {
    if error.len() != uncertainty.len() {
        return Err(Error::Dimension(format!(
            "error ({}) and uncertainty ({}) sizes differ",
            error.len(),
            uncertainty.len()
        )));
    }
    if error.is_empty() || grid_steps < 2 {
        return Err(Error::InvalidArgument(
            "sparsification needs pixels and at least 2 grid steps".into(),
        ));
    }

    let n = error.len();
    let removal_order = |key: &[f64]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| key[j].total_cmp(&key[i]).then(i.cmp(&j)));
        idx
    };
    // Remaining error sum after removing the k highest-ranked pixels.
    let remaining_sums = |order: &[usize]| -> Vec<f64> {
        let total: f64 = error.iter().sum();
        let mut rem = Vec::with_capacity(n + 1);
        rem.push(total);
        let mut acc = total;
        for &i in order {
            acc -= error[i];
            rem.push(acc);
        }
        rem
    };
    let by_uncertainty = remaining_sums(&removal_order(uncertainty));
    let by_error = remaining_sums(&removal_order(error));

    let mut fractions = Vec::with_capacity(grid_steps);
    let mut mae = Vec::with_capacity(grid_steps);
    let mut oracle_mae = Vec::with_capacity(grid_steps);
    for s in 0..grid_steps {
        let f = 0.99 * s as f64 / (grid_steps - 1) as f64;
        let removed = ((f * n as f64).floor() as usize).min(n - 1);
        let kept = (n - removed) as f64;
        fractions.push(f);
        mae.push(by_uncertainty[removed] / kept);
        oracle_mae.push(by_error[removed] / kept);
    }
    Ok(SparsificationCurve {
        fractions,
        mae,
        oracle_mae,
    })
}

/// Area between the normalized sparsification curve and its oracle
/// (trapezoidal rule). Curves are normalized by the MAE at fraction 0.
pub fn ause(curve: &SparsificationCurve) -> f64 {
    let m0 = curve.mae[0];
    if m0 <= 0.0 {
        return 0.0;
    }
    let mut area = 0.0;
    for i in 1..curve.fractions.len() {
        let d0 = (curve.mae[i - 1] - curve.oracle_mae[i - 1]) / m0;
        let d1 = (curve.mae[i] - curve.oracle_mae[i]) / m0;
        area += 0.5 * (d0 + d1) * (curve.fractions[i] - curve.fractions[i - 1]);
    }
    area
}
