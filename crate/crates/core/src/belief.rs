//! Per-splat reliability beliefs: the loss image, the inverse sensor
//! model, log-odds Bayesian updates bucketed by viewing quadrant, and
//! the termination statistic.

use rayon::prelude::*;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::render::{rasterize, RenderOutput};
use crate::scene::{CameraIntrinsics, Gaussian, GaussianMap, Observation, Viewpoint};

/// Loss below this is floored before logs and powers; the inverse
/// sensor model diverges at exactly zero loss.
pub const LOSS_FLOOR: f64 = 1e-6;

/// Per-pixel non-negative loss between a render and an observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl LossImage {
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefUpdateReport {
    /// Splats that received a nonzero log-odds delta.
    pub updated_count: usize,
    pub mean_abs_delta_logodds: f64,
    pub loss_mean: f64,
}

/// Per-pixel loss `lambda_c * mean_ch |C - C_obs| + (1 - lambda_c) *
/// |D - D_obs| / depth_scale`. Pixels with invalid observed depth use
/// the color term alone at weight 1.
pub fn loss_image(
    render: &RenderOutput,
    obs: &Observation,
    lambda_c: f64,
    depth_scale: f64,
) -> Result<LossImage> {
    if render.width != obs.color.width || render.height != obs.color.height {
        return Err(Error::Dimension(format!(
            "render {}x{} vs observation {}x{}",
            render.width, render.height, obs.color.width, obs.color.height
        )));
    }
    let values = (0..render.pixel_count())
        .map(|idx| {
            let c = render.color[idx];
            let o = obs.color.data[idx];
            let color_err =
                ((c[0] - o[0]).abs() + (c[1] - o[1]).abs() + (c[2] - o[2]).abs()) / 3.0;
            let d_obs = obs.depth.data[idx];
            if d_obs > 0.0 {
                lambda_c * color_err
                    + (1.0 - lambda_c) * (render.depth[idx] - d_obs).abs() / depth_scale
            } else {
                color_err
            }
        })
        .collect();
    Ok(LossImage {
        width: render.width,
        height: render.height,
        values,
    })
}

/// Inverse sensor model: reliability of a splat given one observation,
/// `P = 1 / ((lambda_L * L)^(lambda_T * T) + 1)` with the loss floored.
pub fn inverse_sensor_probability(t: f64, loss: f64, lambda_l: f64, lambda_t: f64) -> f64 {
    let base = lambda_l * loss.max(LOSS_FLOOR);
    1.0 / (base.powf(lambda_t * t) + 1.0)
}

/// Horizontal quadrant of the bearing from the splat to the camera.
/// Bucket boundaries sit at 45 + k*90 degrees so that each bucket is
/// centered on a world axis. A camera directly above or below falls
/// back to the quadrant of its own yaw.
pub fn direction_bucket(view: &Viewpoint, g: &Gaussian) -> usize {
    let dx = view.position.x - g.position.x;
    let dy = view.position.y - g.position.y;
    let bearing = if dx * dx + dy * dy < 1e-24 {
        view.yaw
    } else {
        dy.atan2(dx)
    };
    let sector = (bearing + std::f64::consts::FRAC_PI_4).rem_euclid(std::f64::consts::TAU)
        / std::f64::consts::FRAC_PI_2;
    (sector as usize).min(3)
}

/// Mean reliability over the four direction buckets.
pub fn mean_reliability(g: &Gaussian) -> f64 {
    (0..4).map(|b| g.reliability(b)).sum::<f64>() / 4.0
}

/// Fraction of splats whose mean reliability exceeds `tau`.
pub fn done_fraction(map: &GaussianMap, tau: f64) -> f64 {
    if map.is_empty() {
        return 0.0;
    }
    let done = map
        .iter()
        .filter(|g| mean_reliability(g) > tau)
        .count();
    done as f64 / map.len() as f64
}

/// Active reconstruction is complete once the done fraction strictly
/// exceeds `phi`.
pub fn terminated(map: &GaussianMap, cfg: &SystemConfig) -> bool {
    !map.is_empty() && done_fraction(map, cfg.tau) > cfg.phi
}

/// Render the map from the observation pose, form the loss image, and
/// apply the log-odds Bayesian update
/// `delta_l[i] = -lambda_T * sum_j T[i,j] * ln(lambda_L * L[j])`
/// to the direction bucket of the observation pose for each
/// contributing splat.
///
/// Deltas accumulate on the raw stored log odds; clamping happens when
/// log odds are converted back to probabilities, which keeps the update
/// exactly additive (and therefore order-independent) in log space.
pub fn update_probabilities(
    map: &mut GaussianMap,
    obs: &Observation,
    k: &CameraIntrinsics,
    cfg: &SystemConfig,
) -> Result<BeliefUpdateReport> {
    let render = rasterize(map, &obs.pose, k, None);
    let loss = loss_image(&render, obs, cfg.lambda_c, cfg.depth_scale)?;
    let deltas = accumulate_logodds_deltas(map, &render, &loss, cfg.lambda_l, cfg.lambda_t);

    let mut updated = 0usize;
    let mut abs_sum = 0.0;
    for (g, delta) in map.gaussians.iter_mut().zip(&deltas) {
        if *delta != 0.0 {
            let bucket = direction_bucket(&obs.pose, g);
            g.logodds[bucket] += delta;
            updated += 1;
            abs_sum += delta.abs();
        }
    }
    Ok(BeliefUpdateReport {
        updated_count: updated,
        mean_abs_delta_logodds: if updated > 0 { abs_sum / updated as f64 } else { 0.0 },
        loss_mean: loss.mean(),
    })
}

/// Per-splat log-odds delta summed over all pixels of one observation.
pub fn accumulate_logodds_deltas(
    map: &GaussianMap,
    render: &RenderOutput,
    loss: &LossImage,
    lambda_l: f64,
    lambda_t: f64,
) -> Vec<f64> {
    // Row-sharded sparse accumulation merged in row order keeps the
    // result independent of the thread schedule.
    let rows: Vec<Vec<(u32, f64)>> = (0..render.height)
        .into_par_iter()
        .map(|v| {
            let mut partial = Vec::new();
            for u in 0..render.width {
                let idx = v * render.width + u;
                let log_term = (lambda_l * loss.values[idx].max(LOSS_FLOOR)).ln();
                for (gi, t) in render.contribs(idx) {
                    partial.push((*gi, -lambda_t * t * log_term));
                }
            }
            partial
        })
        .collect();

    let mut deltas = vec![0.0; map.len()];
    for row in rows {
        for (gi, d) in row {
            deltas[gi as usize] += d;
        }
    }
    deltas
}
