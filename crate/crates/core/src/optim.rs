//! Per-step map refinement: gradient descent on the color+depth loss
//! with analytic gradients through the blending formula, updating
//! color, opacity, and position.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::render::{project_and_sort, rasterize};
use crate::scene::{CameraIntrinsics, GaussianMap, Observation};

/// Splats that fade below this opacity are pruned after the step.
pub const PRUNE_OPACITY: f64 = 0.005;
/// Opacity is kept strictly inside (0, 1) during updates.
const OPACITY_MIN: f64 = 1e-4;
const OPACITY_MAX: f64 = 1.0 - 1e-4;
/// Relative step scale of position updates versus color/opacity.
const POSITION_RATE: f64 = 0.5;
/// Trust region: position moves at most this far per iteration,
/// meters.
const POSITION_STEP_MAX: f64 = 0.05;

/// Accumulated gradient of the mean loss for one splat, plus the
/// blending-weight mass used for diagonal preconditioning.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianGradient {
    pub color: [f64; 3],
    pub opacity: f64,
    pub position: Vector3<f64>,
    /// Sum of blending weights over all pixels and keyframes.
    pub weight: f64,
    /// Sum of weight times ray distance (for a mean-depth estimate).
    pub weight_depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    /// Mean loss before each iteration plus the final loss; a single
    /// entry when `iters` is zero.
    pub losses: Vec<f64>,
    pub pruned: usize,
}

impl OptimizeReport {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("report holds at least one entry")
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean loss over keyframes without gradients.
pub fn evaluate_loss(
    map: &GaussianMap,
    keyframes: &[Observation],
    k: &CameraIntrinsics,
    lambda_c: f64,
    depth_scale: f64,
) -> Result<f64> {
    if keyframes.is_empty() {
        return Err(Error::InvalidArgument("at least one keyframe required".into()));
    }
    let mut total = 0.0;
    for obs in keyframes {
        let render = rasterize(map, &obs.pose, k, None);
        total += crate::belief::loss_image(&render, obs, lambda_c, depth_scale)?.mean();
    }
    Ok(total / keyframes.len() as f64)
}

/// Mean loss over keyframes and its analytic gradient with respect to
/// every splat's color, opacity, and position.
pub fn loss_and_gradients(
    map: &GaussianMap,
    keyframes: &[Observation],
    k: &CameraIntrinsics,
    lambda_c: f64,
    depth_scale: f64,
) -> Result<(f64, Vec<GaussianGradient>)> {
    if keyframes.is_empty() {
        return Err(Error::InvalidArgument("at least one keyframe required".into()));
    }
    for obs in keyframes {
        if !obs.dims_match(k) {
            return Err(Error::Dimension(
                "keyframe dimensions do not match intrinsics".into(),
            ));
        }
    }

    let per_frame: Vec<(f64, Vec<GaussianGradient>)> = keyframes
        .par_iter()
        .map(|obs| frame_gradients(map, obs, k, lambda_c, depth_scale))
        .collect();

    let n_kf = keyframes.len() as f64;
    let mut grads = vec![GaussianGradient::default(); map.len()];
    let mut loss = 0.0;
    for (frame_loss, frame_grads) in per_frame {
        loss += frame_loss;
        for (acc, g) in grads.iter_mut().zip(frame_grads) {
            for ch in 0..3 {
                acc.color[ch] += g.color[ch] / n_kf;
            }
            acc.opacity += g.opacity / n_kf;
            acc.position += g.position / n_kf;
            acc.weight += g.weight;
            acc.weight_depth += g.weight_depth;
        }
    }
    Ok((loss / n_kf, grads))
}

/// Gradient of one keyframe's mean pixel loss.
fn frame_gradients(
    map: &GaussianMap,
    obs: &Observation,
    k: &CameraIntrinsics,
    lambda_c: f64,
    depth_scale: f64,
) -> (f64, Vec<GaussianGradient>) {
    let render = rasterize(map, &obs.pose, k, None);
    let projected = project_and_sort(map, &obs.pose, k);
    let mut proj_of: Vec<Option<usize>> = vec![None; map.len()];
    for (slot, p) in projected.iter().enumerate() {
        proj_of[p.gaussian_index] = Some(slot);
    }

    let r_wc = obs.pose.camera_rotation();
    let cam = obs.pose.position;
    let inv_px = 1.0 / render.pixel_count() as f64;

    let mut grads = vec![GaussianGradient::default(); map.len()];
    let mut loss_sum = 0.0;

    for idx in 0..render.pixel_count() {
        let (u, v) = (idx % render.width, idx / render.width);
        let pix = Vector2::new(u as f64 + 0.5, v as f64 + 0.5);

        let c = render.color[idx];
        let o = obs.color.data[idx];
        let color_err = ((c[0] - o[0]).abs() + (c[1] - o[1]).abs() + (c[2] - o[2]).abs()) / 3.0;
        let d_obs = obs.depth.data[idx];
        let depth_valid = d_obs > 0.0;

        // Per-pixel loss and its gradient w.r.t. rendered color/depth,
        // scaled by the pixel mean.
        let (pixel_loss, cw, dw);
        if depth_valid {
            pixel_loss =
                lambda_c * color_err + (1.0 - lambda_c) * (render.depth[idx] - d_obs).abs() / depth_scale;
            cw = lambda_c / 3.0;
            dw = (1.0 - lambda_c) / depth_scale * sign(render.depth[idx] - d_obs);
        } else {
            pixel_loss = color_err;
            cw = 1.0 / 3.0;
            dw = 0.0;
        }
        loss_sum += pixel_loss;
        let g_color_pix = [
            cw * sign(c[0] - o[0]) * inv_px,
            cw * sign(c[1] - o[1]) * inv_px,
            cw * sign(c[2] - o[2]) * inv_px,
        ];
        let g_depth_pix = dw * inv_px;

        let contribs = render.contribs(idx);
        if contribs.is_empty() {
            continue;
        }

        // Suffix sums: remaining blended color/depth behind each
        // contribution.
        let mut rem_color = [0.0f64; 3];
        let mut rem_depth = 0.0;
        for &(gi, w) in contribs {
            let g = &map.gaussians[gi as usize];
            for ch in 0..3 {
                rem_color[ch] += g.color[ch] * w;
            }
            rem_depth += projected[proj_of[gi as usize].unwrap()].depth_along_ray * w;
        }

        let mut t_run = 1.0;
        for &(gi, w) in contribs {
            let gi = gi as usize;
            let g = &map.gaussians[gi];
            let p = &projected[proj_of[gi].unwrap()];
            let alpha = w / t_run;
            let t_before = t_run;
            t_run *= 1.0 - alpha;

            for ch in 0..3 {
                rem_color[ch] -= g.color[ch] * w;
            }
            rem_depth -= p.depth_along_ray * w;

            let acc = &mut grads[gi];
            // Color: dC/dc_i = w.
            for ch in 0..3 {
                acc.color[ch] += g_color_pix[ch] * w;
            }
            acc.weight += w;
            acc.weight_depth += w * p.depth_along_ray;

            // Depth via the ray distance: dD/dd_i = w.
            let dir = g.position - cam;
            acc.position += g_depth_pix * w * (dir / p.depth_along_ray);

            // Alpha route: direct contribution minus downstream
            // suppression.
            let mut g_alpha = 0.0;
            for ch in 0..3 {
                g_alpha +=
                    g_color_pix[ch] * (t_before * g.color[ch] - rem_color[ch] / (1.0 - alpha));
            }
            g_alpha +=
                g_depth_pix * (t_before * p.depth_along_ray - rem_depth / (1.0 - alpha));

            // The alpha clamp freezes alpha locally.
            if alpha >= crate::render::ALPHA_MAX - 1e-12 {
                continue;
            }

            acc.opacity += g_alpha * (alpha / g.opacity);

            // Footprint route: alpha depends on position through the
            // projected mean and covariance.
            let inv_cov = p
                .cov2d
                .try_inverse()
                .expect("projected covariance is regularized");
            let d2 = pix - p.mean2d;
            let ad = inv_cov * d2;
            let g_mean2d = g_alpha * alpha * ad;

            let t = r_wc * (g.position - cam);
            let z2 = t.z * t.z;
            let j = Matrix2x3::new(
                k.fx / t.z, 0.0, -k.fx * t.x / z2,
                0.0, k.fy / t.z, -k.fy * t.y / z2,
            );

            // Through the covariance: dalpha/dSigma2d = 0.5 alpha (Ad)(Ad)^T.
            let g_sigma = 0.5 * g_alpha * alpha * Matrix2::new(
                ad.x * ad.x, ad.x * ad.y,
                ad.y * ad.x, ad.y * ad.y,
            );
            let m = j * r_wc;
            let g_m = 2.0 * g_sigma * m * g.covariance();
            let g_j = g_m * r_wc.transpose();

            let mut g_t = j.transpose() * g_mean2d;
            g_t.x += g_j[(0, 2)] * (-k.fx / z2);
            g_t.y += g_j[(1, 2)] * (-k.fy / z2);
            g_t.z += g_j[(0, 0)] * (-k.fx / z2)
                + g_j[(1, 1)] * (-k.fy / z2)
                + g_j[(0, 2)] * (2.0 * k.fx * t.x / (z2 * t.z))
                + g_j[(1, 2)] * (2.0 * k.fy * t.y / (z2 * t.z));

            acc.position += r_wc.transpose() * g_t;
        }
    }

    (loss_sum * inv_px, grads)
}

/// Run `iters` preconditioned gradient-descent iterations over the
/// keyframe window, then prune splats that faded out. Returns the loss
/// trace (initial loss plus one entry per iteration).
pub fn optimize_step(
    map: &mut GaussianMap,
    keyframes: &[Observation],
    k: &CameraIntrinsics,
    iters: usize,
    lr: f64,
    lambda_c: f64,
    depth_scale: f64,
) -> Result<OptimizeReport> {
    if iters == 0 {
        return Ok(OptimizeReport {
            losses: vec![evaluate_loss(map, keyframes, k, lambda_c, depth_scale)?],
            pruned: 0,
        });
    }

    let normalizer = (k.pixel_count() * keyframes.len()) as f64;
    let f_mean = 0.5 * (k.fx + k.fy);
    let mut losses = Vec::with_capacity(iters + 1);

    for _ in 0..iters {
        let (loss, grads) = loss_and_gradients(map, keyframes, k, lambda_c, depth_scale)?;
        losses.push(loss);
        for (g, grad) in map.gaussians.iter_mut().zip(&grads) {
            if grad.weight <= 0.0 {
                continue;
            }
            // Diagonal preconditioning by accumulated blending weight
            // makes step sizes independent of coverage.
            let scale = normalizer / grad.weight;
            for ch in 0..3 {
                g.color[ch] = (g.color[ch] - lr * scale * grad.color[ch]).clamp(0.0, 1.0);
            }
            g.opacity = (g.opacity - lr * scale * grad.opacity).clamp(OPACITY_MIN, OPACITY_MAX);
            let mean_depth = grad.weight_depth / grad.weight;
            let pos_step = lr * POSITION_RATE * (mean_depth / f_mean) * scale;
            let mut delta = pos_step * grad.position;
            let norm = delta.norm();
            if norm > POSITION_STEP_MAX {
                delta *= POSITION_STEP_MAX / norm;
            }
            g.position -= delta;
        }
    }
    losses.push(evaluate_loss(map, keyframes, k, lambda_c, depth_scale)?);

    let before = map.len();
    map.gaussians.retain(|g| g.opacity >= PRUNE_OPACITY);
    Ok(OptimizeReport {
        losses,
        pruned: before - map.len(),
    })
}
