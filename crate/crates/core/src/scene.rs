//! Domain types: splats, cameras, images, observations, and RGB-D
//! backprojection for spawning new splats.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Log-odds magnitude at which reliability saturates. `sigmoid(20)` is
/// about `1 - 2e-9`, so probabilities derived from clamped log odds stay
/// strictly inside (0, 1).
pub const LOGODDS_CLAMP: f64 = 20.0;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One anisotropic splat: geometry, optics, and a four-quadrant
/// reliability belief stored as log odds.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    /// Center in world coordinates, meters.
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    /// Per-axis standard deviations, meters. Together with `rotation`
    /// they define the world covariance, positive-definite by
    /// construction.
    pub scales: Vector3<f64>,
    /// RGB in [0, 1].
    pub color: [f64; 3],
    /// Linear opacity, strictly inside (0, 1).
    pub opacity: f64,
    /// Log odds of rendering reliably, one entry per horizontal
    /// quadrant. Zero means no prior information (P = 0.5).
    pub logodds: [f64; 4],
}

impl Gaussian {
    /// Isotropic splat with identity rotation and a flat belief prior.
    pub fn isotropic(position: Vector3<f64>, scale: f64, color: [f64; 3], opacity: f64) -> Self {
        Gaussian {
            position,
            rotation: UnitQuaternion::identity(),
            scales: Vector3::new(scale, scale, scale),
            color,
            opacity,
            logodds: [0.0; 4],
        }
    }

    /// World covariance `R diag(s^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let d = Matrix3::from_diagonal(&self.scales.map(|s| s * s));
        r * d * r.transpose()
    }

    /// Reliability probability for one direction bucket. Log odds are
    /// clamped to `±LOGODDS_CLAMP` before the sigmoid so the result is
    /// always strictly inside (0, 1).
    pub fn reliability(&self, bucket: usize) -> f64 {
        sigmoid(self.logodds[bucket].clamp(-LOGODDS_CLAMP, LOGODDS_CLAMP))
    }
}

/// Splat collection with a single-writer / multi-reader contract: all
/// read-side operations take an immutable snapshot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianMap {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianMap {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        GaussianMap { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Gaussian> {
        self.gaussians.iter()
    }

    /// Axis-aligned bounds of the splat centers; `None` when empty.
    pub fn bounding_box(&self) -> Option<Aabb> {
        let first = self.gaussians.first()?;
        let mut bb = Aabb {
            min: first.position,
            max: first.position,
        };
        for g in &self.gaussians[1..] {
            bb.min = bb.min.inf(&g.position);
            bb.max = bb.max.sup(&g.position);
        }
        Some(bb)
    }
}

/// Camera pose expressed in flat outputs (position + yaw) with
/// derivatives up to jerk. The camera looks along the yaw direction with
/// zero pitch and roll.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewpoint {
    pub position: Vector3<f64>,
    /// Radians, normalized to (-pi, pi].
    pub yaw: f64,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub jerk: Vector3<f64>,
    pub yaw_rate: f64,
}

impl Viewpoint {
    /// Stationary viewpoint: all derivatives zero.
    pub fn at(position: Vector3<f64>, yaw: f64) -> Self {
        Viewpoint {
            position,
            yaw: normalize_yaw(yaw),
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            jerk: Vector3::zeros(),
            yaw_rate: 0.0,
        }
    }

    /// World-to-camera rotation. Camera frame: +x image right, +y image
    /// down, +z forward along the yaw direction.
    pub fn camera_rotation(&self) -> Matrix3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Matrix3::new(
            s, -c, 0.0, // right
            0.0, 0.0, -1.0, // down
            c, s, 0.0, // forward
        )
    }

    pub fn forward(&self) -> Vector3<f64> {
        Vector3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.acceleration.iter().all(|v| v.is_finite())
            && self.jerk.iter().all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.yaw_rate.is_finite()
    }
}

/// Wrap an angle to (-pi, pi].
pub fn normalize_yaw(yaw: f64) -> f64 {
    let y = yaw.rem_euclid(std::f64::consts::TAU);
    if y > std::f64::consts::PI {
        y - std::f64::consts::TAU
    } else {
        y
    }
}

/// Pinhole camera. Pixel (u, v) samples the scene at continuous image
/// coordinates (u + 0.5, v + 0.5).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Depth clip range, meters.
    pub near: f64,
    pub far: f64,
}

impl CameraIntrinsics {
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let k = CameraIntrinsics {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            near,
            far,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera from a horizontal field of view.
    pub fn from_fov(width: usize, height: usize, fov_deg: f64, near: f64, far: f64) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::InvalidArgument(format!(
                "field of view must be in (0, 180) degrees, got {fov_deg}"
            )));
        }
        let f = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        CameraIntrinsics::new(
            width,
            height,
            f,
            f,
            width as f64 / 2.0,
            height as f64 / 2.0,
            near,
            far,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image dimensions must be nonzero".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidArgument(
                "depth clip range must satisfy 0 < near < far".into(),
            ));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Unit ray direction through pixel (u, v) in the camera frame.
    pub fn ray_direction(&self, u: usize, v: usize) -> Vector3<f64> {
        let x = (u as f64 + 0.5 - self.cx) / self.fx;
        let y = (v as f64 + 0.5 - self.cy) / self.fy;
        Vector3::new(x, y, 1.0).normalize()
    }

    /// Project a camera-frame point to continuous image coordinates.
    pub fn project(&self, t: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * t.x / t.z + self.cx,
            self.fy * t.y / t.z + self.cy,
        )
    }
}

/// Row-major RGB image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn idx(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn at(&self, u: usize, v: usize) -> [f64; 3] {
        self.data[self.idx(u, v)]
    }

    pub fn at_mut(&mut self, u: usize, v: usize) -> &mut [f64; 3] {
        let i = self.idx(u, v);
        &mut self.data[i]
    }
}

/// Row-major scalar image; for depth, 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        DepthImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn idx(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.data[self.idx(u, v)]
    }
}

/// A captured (or simulated) color + depth frame with its pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub color: Image,
    pub depth: DepthImage,
    pub pose: Viewpoint,
}

impl Observation {
    pub fn dims_match(&self, k: &CameraIntrinsics) -> bool {
        self.color.width == k.width
            && self.color.height == k.height
            && self.depth.width == k.width
            && self.depth.height == k.height
    }
}

/// Axis-aligned box, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }
}

/// Spawn one splat per valid-depth sampled pixel by backprojecting the
/// RGB-D frame. Sampling starts at `stride / 2` on both axes. New splats
/// get isotropic scales proportional to the local pixel spacing
/// (`stride * depth / fx`), the pixel color, and a flat belief prior.
pub fn backproject_spawn(
    obs: &Observation,
    k: &CameraIntrinsics,
    stride: usize,
    init_opacity: f64,
) -> Result<Vec<Gaussian>> {
    if stride < 1 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if !(init_opacity > 0.0 && init_opacity < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "init_opacity must be in (0, 1), got {init_opacity}"
        )));
    }
    if !obs.dims_match(k) {
        return Err(Error::Dimension(
            "observation dimensions do not match intrinsics".into(),
        ));
    }

    let r_wc = obs.pose.camera_rotation();
    let r_cw = r_wc.transpose();
    let cam = obs.pose.position;

    let mut spawned = Vec::new();
    let mut v = stride / 2;
    while v < k.height {
        let mut u = stride / 2;
        while u < k.width {
            let d = obs.depth.at(u, v);
            if d.is_finite() && d >= k.near && d <= k.far {
                let dir_world = r_cw * k.ray_direction(u, v);
                let position = cam + dir_world * d;
                let color = obs.color.at(u, v).map(|c| c.clamp(0.0, 1.0));
                let scale = stride as f64 * d / k.fx;
                spawned.push(Gaussian::isotropic(position, scale, color, init_opacity));
            }
            u += stride;
        }
        v += stride;
    }
    Ok(spawned)
}
