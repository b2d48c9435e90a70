//! System configuration: flat `key = value` text files with strict key
//! checking, plus the built-in defaults.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::gauss_mi::{NoiseKind, SensorNoiseModel};
use crate::scene::{Aabb, CameraIntrinsics};

/// All tunables of the reconstruction and planning pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Inverse-sensor hyperparameter on the loss.
    pub lambda_l: f64,
    /// Inverse-sensor hyperparameter on cumulative transmittance.
    pub lambda_t: f64,
    /// Color/depth weight of the loss image, in [0, 1].
    pub lambda_c: f64,
    /// Motion-primitive duration, seconds.
    pub duration: f64,
    /// Reward weight on information.
    pub w_info: f64,
    /// Reward weight on motion cost.
    pub w_cost: f64,
    /// Per-splat reliability threshold.
    pub tau: f64,
    /// Done-fraction threshold for termination.
    pub phi: f64,
    /// Action sample sets: lateral and vertical body-frame velocities
    /// (m/s) and yaw rate (rad/s).
    pub v_xy: Vec<f64>,
    pub v_z: Vec<f64>,
    pub omega_z: Vec<f64>,
    pub noise: SensorNoiseModel,
    /// Whether the simulated sensor adds color noise.
    pub obs_noise: bool,
    pub opt_iters: usize,
    pub opt_lr: f64,
    /// Keyframe window size for the per-step optimizer; older frames
    /// are evicted uniformly beyond it.
    pub keyframe_cap: usize,
    pub clearance_radius: f64,
    pub workspace: Aabb,
    /// Depth-residual normalizer, meters. Defaults to the workspace
    /// diagonal so color and depth terms share a [0, ~1] range.
    pub depth_scale: f64,
    pub spawn_stride: usize,
    pub init_opacity: f64,
    pub camera: CameraIntrinsics,
    /// When set, the planner divides the closed-form snap cost by the
    /// primitive duration.
    pub normalize_cost_by_duration: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let workspace = Aabb {
            min: Vector3::new(-4.0, -4.0, 0.0),
            max: Vector3::new(4.0, 4.0, 3.0),
        };
        SystemConfig {
            lambda_l: 1.7,
            lambda_t: 7.0,
            lambda_c: 0.9,
            duration: 1.6,
            w_info: 0.03,
            w_cost: 0.01,
            tau: 0.7,
            phi: 0.75,
            v_xy: vec![-0.5, -0.25, 0.0, 0.25, 0.5],
            v_z: vec![-0.3, 0.0, 0.3],
            omega_z: vec![
                -std::f64::consts::FRAC_PI_4,
                -std::f64::consts::FRAC_PI_8,
                0.0,
                std::f64::consts::FRAC_PI_8,
                std::f64::consts::FRAC_PI_4,
            ],
            noise: SensorNoiseModel::poissonian_gaussian(0.01, 0.0001),
            obs_noise: false,
            opt_iters: 15,
            opt_lr: 0.2,
            keyframe_cap: 12,
            clearance_radius: 0.3,
            depth_scale: workspace.diagonal(),
            workspace,
            spawn_stride: 8,
            init_opacity: 0.5,
            camera: CameraIntrinsics::from_fov(640, 480, 90.0, 0.05, 100.0)
                .expect("default intrinsics are valid"),
            normalize_cost_by_duration: false,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(self.lambda_l > 0.0, "lambda_L must be positive")?;
        check(self.lambda_t > 0.0, "lambda_T must be positive")?;
        check(
            (0.0..=1.0).contains(&self.lambda_c),
            "lambda_c must be in [0, 1]",
        )?;
        check(self.duration > 0.0, "T must be positive")?;
        check(self.tau > 0.0 && self.tau < 1.0, "tau must be in (0, 1)")?;
        check(self.phi > 0.0 && self.phi < 1.0, "phi must be in (0, 1)")?;
        check(!self.v_xy.is_empty(), "V_xy must not be empty")?;
        check(!self.v_z.is_empty(), "V_z must not be empty")?;
        check(!self.omega_z.is_empty(), "Omega_z must not be empty")?;
        check(self.depth_scale > 0.0, "depth_scale must be positive")?;
        check(self.spawn_stride >= 1, "spawn_stride must be >= 1")?;
        check(
            self.init_opacity > 0.0 && self.init_opacity < 1.0,
            "init_opacity must be in (0, 1)",
        )?;
        check(
            self.clearance_radius >= 0.0,
            "clearance_radius must be non-negative",
        )?;
        check(
            (0..3).all(|i| self.workspace.min[i] < self.workspace.max[i]),
            "workspace box must have positive extent",
        )?;
        self.noise.validate()?;
        self.camera.validate()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SystemConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_config(&text)
    }
}

/// Parse `key = value` lines. Unknown keys and duplicate keys are
/// errors; missing keys fall back to defaults.
pub fn parse_config(text: &str) -> Result<SystemConfig> {
    let mut cfg = SystemConfig::default();
    let mut seen = BTreeSet::new();
    let mut depth_scale_explicit = false;
    let mut camera = (640usize, 480usize, 90.0f64, 0.05f64, 100.0f64);

    for (key, value, line) in kv_lines(text)? {
        if !seen.insert(key.clone()) {
            return Err(Error::Config(format!("line {line}: duplicate key `{key}`")));
        }
        let bad = |what: &str| Error::Config(format!("line {line}: bad {what} `{value}`"));
        match key.as_str() {
            "lambda_L" => cfg.lambda_l = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "lambda_T" => cfg.lambda_t = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "lambda_c" => cfg.lambda_c = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "T" => cfg.duration = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "w_I" => cfg.w_info = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "w_J" => cfg.w_cost = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "tau" => cfg.tau = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "phi" => cfg.phi = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "V_xy" => cfg.v_xy = parse_list(&value).ok_or_else(|| bad("list"))?,
            "V_z" => cfg.v_z = parse_list(&value).ok_or_else(|| bad("list"))?,
            "Omega_z" => cfg.omega_z = parse_list(&value).ok_or_else(|| bad("list"))?,
            "noise_kind" => {
                cfg.noise.kind = match value.as_str() {
                    "uniform" => NoiseKind::Uniform,
                    "poissonian_gaussian" => NoiseKind::PoissonianGaussian,
                    _ => return Err(bad("noise kind")),
                }
            }
            "noise_a" => cfg.noise.a = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "noise_b" => cfg.noise.b = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "obs_noise" => cfg.obs_noise = parse_bool(&value).ok_or_else(|| bad("bool"))?,
            "opt_iters" => {
                cfg.opt_iters = value.parse().map_err(|_| bad("integer"))?;
            }
            "opt_lr" => cfg.opt_lr = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "keyframe_cap" => cfg.keyframe_cap = value.parse().map_err(|_| bad("integer"))?,
            "clearance_radius" => {
                cfg.clearance_radius = parse_f64(&value).ok_or_else(|| bad("number"))?
            }
            "workspace_min" => {
                cfg.workspace.min = parse_vec3(&value).ok_or_else(|| bad("vector"))?
            }
            "workspace_max" => {
                cfg.workspace.max = parse_vec3(&value).ok_or_else(|| bad("vector"))?
            }
            "depth_scale" => {
                cfg.depth_scale = parse_f64(&value).ok_or_else(|| bad("number"))?;
                depth_scale_explicit = true;
            }
            "spawn_stride" => cfg.spawn_stride = value.parse().map_err(|_| bad("integer"))?,
            "init_opacity" => cfg.init_opacity = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "image_width" => camera.0 = value.parse().map_err(|_| bad("integer"))?,
            "image_height" => camera.1 = value.parse().map_err(|_| bad("integer"))?,
            "fov_deg" => camera.2 = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "near" => camera.3 = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "far" => camera.4 = parse_f64(&value).ok_or_else(|| bad("number"))?,
            "normalize_cost_by_duration" => {
                cfg.normalize_cost_by_duration = parse_bool(&value).ok_or_else(|| bad("bool"))?
            }
            _ => return Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
        }
    }

    cfg.camera = CameraIntrinsics::from_fov(camera.0, camera.1, camera.2, camera.3, camera.4)?;
    if !depth_scale_explicit {
        cfg.depth_scale = cfg.workspace.diagonal();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Split `key = value` lines, skipping blanks and `#` comments.
/// Returns (key, value, 1-based line number).
pub fn kv_lines(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`, got `{raw}`",
                i + 1
            )));
        };
        out.push((key.trim().to_string(), value.trim().to_string(), i + 1));
    }
    Ok(out)
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "on" | "1" => Some(true),
        "false" | "off" | "0" => Some(false),
        _ => None,
    }
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    let items: Option<Vec<f64>> = s.split(',').map(|p| parse_f64(p.trim())).collect();
    items.filter(|v| !v.is_empty())
}

fn parse_vec3(s: &str) -> Option<Vector3<f64>> {
    let v = parse_list(s)?;
    (v.len() == 3).then(|| Vector3::new(v[0], v[1], v[2]))
}
