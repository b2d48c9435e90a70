//! Expected Shannon mutual information between the splat map's
//! reliability variables and a hypothetical observation from a
//! candidate viewpoint, computed in nats by rasterizing the per-splat
//! information gain.

use rayon::prelude::*;

use crate::belief::direction_bucket;
use crate::render::rasterize;
use crate::scene::{CameraIntrinsics, GaussianMap, Viewpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Constant measurement prior of 1.
    Uniform,
    /// Luminance-dependent variance `a * (M / 255) + b`.
    PoissonianGaussian,
}

/// Sensor noise model driving the per-pixel measurement prior (and,
/// in simulation, the color noise of synthetic observations).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorNoiseModel {
    pub kind: NoiseKind,
    pub a: f64,
    pub b: f64,
}

impl SensorNoiseModel {
    pub fn uniform() -> Self {
        SensorNoiseModel {
            kind: NoiseKind::Uniform,
            a: 0.0,
            b: 1.0,
        }
    }

    pub fn poissonian_gaussian(a: f64, b: f64) -> Self {
        SensorNoiseModel {
            kind: NoiseKind::PoissonianGaussian,
            a,
            b,
        }
    }

    pub fn validate(&self) -> crate::error::Result<()> {
        if self.kind == NoiseKind::PoissonianGaussian && !(self.a >= 0.0 && self.b > 0.0) {
            return Err(crate::error::Error::Config(
                "poissonian_gaussian noise needs a >= 0 and b > 0".into(),
            ));
        }
        Ok(())
    }

    /// Noise standard deviation at a luminance, in [0, 1] color units.
    pub fn sigma(&self, luminance: f64) -> f64 {
        match self.kind {
            NoiseKind::Uniform => self.b.sqrt(),
            NoiseKind::PoissonianGaussian => (self.a * (luminance / 255.0) + self.b).sqrt(),
        }
    }
}

/// Information gain of one observation with inverse-sensor odds `delta`
/// on a splat with prior odds `odds`:
/// `f = (o / (o + 1/delta)) * ln((o + 1) / (o + 1/delta))`.
pub fn info_gain_full(delta: f64, odds: f64) -> f64 {
    debug_assert!(delta > 0.0 && odds > 0.0);
    let inv = 1.0 / delta;
    (odds / (odds + inv)) * ((odds + 1.0) / (odds + inv)).ln()
}

/// Expected information gain under a perfectly fitting observation
/// (the loss-free limit of `info_gain_full`): `f = -ln P`.
pub fn info_gain_expected(reliability: f64) -> f64 {
    debug_assert!(reliability > 0.0 && reliability <= 1.0);
    -reliability.ln()
}

/// Rec. 601 luma of an RGB triple in [0, 1], scaled to [0, 255].
pub fn luminance(rgb: [f64; 3]) -> f64 {
    255.0 * (0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2])
}

/// Per-pixel measurement prior `P(z | M)`, normalized to 1 at zero
/// luminance so it is dimensionless and at most 1.
pub fn measurement_prior(luminance: f64, model: &SensorNoiseModel) -> f64 {
    match model.kind {
        NoiseKind::Uniform => 1.0,
        NoiseKind::PoissonianGaussian => {
            (model.b / (model.a * (luminance / 255.0) + model.b)).sqrt()
        }
    }
}

/// Mutual information of one candidate view.
#[derive(Debug, Clone)]
pub struct MiResult {
    /// Total expected mutual information, nats.
    pub total_mi: f64,
    /// Per-pixel contributions; their sum is `total_mi`.
    pub mi_image: Vec<f64>,
    pub width: usize,
    pub height: usize,
    /// Distinct splats contributing to at least one pixel.
    pub gaussians_touched: usize,
    /// Total (splat, pixel) contribution pairs evaluated; the cost of
    /// the call is proportional to this.
    pub contributions: usize,
}

/// Evaluate the expected mutual information of observing the map from
/// `view`. Per pixel: `P(z|M) * sum_i (-ln P(r_i)) * T_i`, where each
/// splat's reliability is read from the direction bucket probed by the
/// candidate view and `M` is the luminance of the rasterized color.
pub fn evaluate_gauss_mi(
    map: &GaussianMap,
    view: &Viewpoint,
    k: &CameraIntrinsics,
    model: &SensorNoiseModel,
) -> MiResult {
    let gains: Vec<f64> = map
        .gaussians
        .par_iter()
        .map(|g| info_gain_expected(g.reliability(direction_bucket(view, g))))
        .collect();

    let out = rasterize(map, view, k, Some(&gains));
    let gain_image = out.scalar.as_ref().expect("scalar channel requested");

    let mi_image: Vec<f64> = (0..out.pixel_count())
        .map(|idx| measurement_prior(luminance(out.color[idx]), model) * gain_image[idx])
        .collect();
    // Row-partial sums keep the reduction order fixed.
    let total_mi: f64 = mi_image
        .chunks(out.width)
        .map(|row| row.iter().sum::<f64>())
        .sum();

    let mut touched = vec![false; map.len()];
    for idx in 0..out.pixel_count() {
        for (gi, _) in out.contribs(idx) {
            touched[*gi as usize] = true;
        }
    }

    MiResult {
        total_mi,
        mi_image,
        width: out.width,
        height: out.height,
        gaussians_touched: touched.iter().filter(|t| **t).count(),
        contributions: out.contribution_count(),
    }
}
