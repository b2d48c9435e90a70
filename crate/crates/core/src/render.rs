//! Forward splat rasterization: depth-sorted alpha blending of color,
//! depth, and an optional per-splat scalar channel, with per-pixel
//! transmittance weights captured for the belief and information
//! modules.

use nalgebra::{Matrix2, Matrix2x3, Vector2};
use rayon::prelude::*;

use crate::scene::{CameraIntrinsics, GaussianMap, Gaussian, Viewpoint};

/// Screen-space regularization added to the projected covariance
/// diagonal, pixels^2.
pub const COV2D_REGULARIZATION: f64 = 0.3;
/// Blending alpha is clamped here to keep transmittance products and
/// downstream logs finite.
pub const ALPHA_MAX: f64 = 0.99;
/// Contributions below this alpha are culled as negligible.
pub const ALPHA_CULL: f64 = 1.0 / 255.0;
/// Footprint cutoff in squared Mahalanobis distance (3 sigma).
pub const FOOTPRINT_MAHA_SQ: f64 = 9.0;
/// Early ray termination once pixel transmittance drops below this.
pub const TRANSMITTANCE_STOP: f64 = 1e-4;

/// A splat projected into screen space.
#[derive(Debug, Clone)]
pub struct Projected2D {
    /// Continuous pixel coordinates of the projected center.
    pub mean2d: Vector2<f64>,
    /// 2x2 symmetric screen-space covariance, pixels^2, regularized.
    pub cov2d: Matrix2<f64>,
    /// Distance from the camera to the splat center, meters.
    pub depth_along_ray: f64,
    pub gaussian_index: usize,
    // Cached for the per-pixel loop.
    inv_cov2d: Matrix2<f64>,
    radius_px: f64,
}

impl Projected2D {
    /// 3-sigma half-extent of the footprint in pixels.
    pub fn radius_px(&self) -> f64 {
        self.radius_px
    }

    /// Blending alpha of this splat at a pixel center, or `None` when
    /// outside the footprint or below the culling threshold.
    pub fn alpha_at(&self, opacity: f64, px: f64, py: f64) -> Option<f64> {
        let d = Vector2::new(px - self.mean2d.x, py - self.mean2d.y);
        let maha_sq = (self.inv_cov2d * d).dot(&d);
        if maha_sq > FOOTPRINT_MAHA_SQ {
            return None;
        }
        let alpha = opacity * (-0.5 * maha_sq).exp();
        if alpha < ALPHA_CULL {
            return None;
        }
        Some(alpha.min(ALPHA_MAX))
    }
}

/// Project one splat. Returns `None` when the center is behind the near
/// plane, past the far clip, or the 3-sigma footprint misses the image.
pub fn project_gaussian(
    index: usize,
    g: &Gaussian,
    view: &Viewpoint,
    k: &CameraIntrinsics,
) -> Option<Projected2D> {
    let r_wc = view.camera_rotation();
    let t = r_wc * (g.position - view.position);
    if t.z < k.near {
        return None;
    }
    let depth = (g.position - view.position).norm();
    if depth > k.far {
        return None;
    }

    let (px, py) = k.project(&t);
    let z2 = t.z * t.z;
    // First-order projection Jacobian at the splat center.
    let j = Matrix2x3::new(
        k.fx / t.z, 0.0, -k.fx * t.x / z2,
        0.0, k.fy / t.z, -k.fy * t.y / z2,
    );
    let m = j * r_wc;
    let mut cov2d = m * g.covariance() * m.transpose();
    cov2d[(0, 0)] += COV2D_REGULARIZATION;
    cov2d[(1, 1)] += COV2D_REGULARIZATION;

    // Largest eigenvalue of the 2x2 covariance -> footprint radius.
    let half_tr = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    let lambda_max = half_tr + (half_tr * half_tr - det).max(0.0).sqrt();
    let radius = 3.0 * lambda_max.sqrt();

    if px + radius < 0.0
        || px - radius > k.width as f64
        || py + radius < 0.0
        || py - radius > k.height as f64
    {
        return None;
    }

    let inv = cov2d.try_inverse()?;
    Some(Projected2D {
        mean2d: Vector2::new(px, py),
        cov2d,
        depth_along_ray: depth,
        gaussian_index: index,
        inv_cov2d: inv,
        radius_px: radius,
    })
}

/// Blended output of one view, with per-contribution transmittance
/// weights stored per pixel in front-to-back order.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Blended RGB per pixel; black background.
    pub color: Vec<[f64; 3]>,
    /// Blended ray distance per pixel; 0 where nothing renders.
    pub depth: Vec<f64>,
    /// Final per-pixel transmittance.
    pub residual_t: Vec<f64>,
    /// Blended per-splat scalar channel, when requested.
    pub scalar: Option<Vec<f64>>,
    contrib_offsets: Vec<usize>,
    contrib_entries: Vec<(u32, f64)>,
}

impl RenderOutput {
    /// Ordered (gaussian_index, transmittance weight) pairs for pixel
    /// `idx`, front to back.
    pub fn contribs(&self, idx: usize) -> &[(u32, f64)] {
        &self.contrib_entries[self.contrib_offsets[idx]..self.contrib_offsets[idx + 1]]
    }

    /// Total number of (splat, pixel) contribution pairs.
    pub fn contribution_count(&self) -> usize {
        self.contrib_entries.len()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn to_image(&self) -> crate::scene::Image {
        crate::scene::Image {
            width: self.width,
            height: self.height,
            data: self.color.clone(),
        }
    }

    pub fn to_depth_image(&self) -> crate::scene::DepthImage {
        crate::scene::DepthImage {
            width: self.width,
            height: self.height,
            data: self.depth.clone(),
        }
    }
}

/// Project every splat and sort front to back by ray distance, ties
/// broken by index.
pub fn project_and_sort(
    map: &GaussianMap,
    view: &Viewpoint,
    k: &CameraIntrinsics,
) -> Vec<Projected2D> {
    let mut projected: Vec<Projected2D> = map
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(i, g, view, k))
        .collect();
    projected.sort_by(|a, b| a.depth_along_ray.total_cmp(&b.depth_along_ray));
    projected
}

struct RowOutput {
    color: Vec<[f64; 3]>,
    depth: Vec<f64>,
    residual: Vec<f64>,
    scalar: Option<Vec<f64>>,
    contribs: Vec<Vec<(u32, f64)>>,
}

/// Rasterize the map from a viewpoint. When `per_gaussian_scalar` is
/// given (one value per splat), the same blending weights also produce
/// a scalar image `sum_i s[i] * T[i]`.
pub fn rasterize(
    map: &GaussianMap,
    view: &Viewpoint,
    k: &CameraIntrinsics,
    per_gaussian_scalar: Option<&[f64]>,
) -> RenderOutput {
    if let Some(s) = per_gaussian_scalar {
        assert_eq!(s.len(), map.len(), "scalar channel length must match map size");
    }
    let projected = project_and_sort(map, view, k);

    let rows: Vec<RowOutput> = (0..k.height)
        .into_par_iter()
        .map(|v| rasterize_row(&projected, map, k, per_gaussian_scalar, v))
        .collect();

    let px = k.pixel_count();
    let mut out = RenderOutput {
        width: k.width,
        height: k.height,
        color: Vec::with_capacity(px),
        depth: Vec::with_capacity(px),
        residual_t: Vec::with_capacity(px),
        scalar: per_gaussian_scalar.map(|_| Vec::with_capacity(px)),
        contrib_offsets: Vec::with_capacity(px + 1),
        contrib_entries: Vec::new(),
    };
    out.contrib_offsets.push(0);
    for row in rows {
        out.color.extend_from_slice(&row.color);
        out.depth.extend_from_slice(&row.depth);
        out.residual_t.extend_from_slice(&row.residual);
        if let (Some(dst), Some(src)) = (out.scalar.as_mut(), row.scalar) {
            dst.extend_from_slice(&src);
        }
        for pixel in row.contribs {
            out.contrib_entries.extend_from_slice(&pixel);
            out.contrib_offsets.push(out.contrib_entries.len());
        }
    }
    out
}

fn rasterize_row(
    projected: &[Projected2D],
    map: &GaussianMap,
    k: &CameraIntrinsics,
    per_gaussian_scalar: Option<&[f64]>,
    v: usize,
) -> RowOutput {
    let py = v as f64 + 0.5;
    // Prefilter splats whose footprint crosses this row; sorted order
    // is preserved.
    let row_splats: Vec<&Projected2D> = projected
        .iter()
        .filter(|p| (p.mean2d.y - py).abs() <= p.radius_px())
        .collect();

    let w = k.width;
    let mut row = RowOutput {
        color: vec![[0.0; 3]; w],
        depth: vec![0.0; w],
        residual: vec![1.0; w],
        scalar: per_gaussian_scalar.map(|_| vec![0.0; w]),
        contribs: vec![Vec::new(); w],
    };

    for u in 0..w {
        let px = u as f64 + 0.5;
        let mut transmittance = 1.0;
        let mut color = [0.0f64; 3];
        let mut depth = 0.0;
        let mut scalar_acc = 0.0;
        let contribs = &mut row.contribs[u];

        for p in &row_splats {
            if (p.mean2d.x - px).abs() > p.radius_px() {
                continue;
            }
            let g = &map.gaussians[p.gaussian_index];
            let Some(alpha) = p.alpha_at(g.opacity, px, py) else {
                continue;
            };
            let weight = alpha * transmittance;
            color[0] += g.color[0] * weight;
            color[1] += g.color[1] * weight;
            color[2] += g.color[2] * weight;
            depth += p.depth_along_ray * weight;
            if let Some(s) = per_gaussian_scalar {
                scalar_acc += s[p.gaussian_index] * weight;
            }
            contribs.push((p.gaussian_index as u32, weight));
            transmittance *= 1.0 - alpha;
            if transmittance < TRANSMITTANCE_STOP {
                break;
            }
        }

        row.color[u] = color;
        row.depth[u] = depth;
        row.residual[u] = transmittance;
        if let Some(s) = row.scalar.as_mut() {
            s[u] = scalar_acc;
        }
    }
    row
}
