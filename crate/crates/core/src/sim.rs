//! Synthetic ground-truth scenes, the simulated RGB-D sensor, and the
//! active reconstruction loop.

use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::belief::{done_fraction, terminated, update_probabilities};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::gauss_mi::{evaluate_gauss_mi, luminance, SensorNoiseModel};
use crate::mapio;
use crate::metrics::psnr;
use crate::optim::optimize_step;
use crate::planner::{
    action_space, min_snap_primitive, propagate, safety_check, select_nbv, Candidate,
    SAFETY_SAMPLES,
};
use crate::render::rasterize;
use crate::scene::{
    backproject_spawn, Aabb, CameraIntrinsics, Gaussian, GaussianMap, Image, Observation,
    Viewpoint,
};

/// A pixel counts as a depth hit when at most this much transmittance
/// survives the splats along its ray.
const OBS_RESIDUAL_MAX: f64 = 0.2;
/// New splats are spawned only at pixels the map barely covers yet.
const SPAWN_RESIDUAL_MIN: f64 = 0.7;

/// Ground truth for simulation: a splat map standing in for the real
/// scene, with the flight volume and start pose.
#[derive(Debug, Clone)]
pub struct GroundTruthScene {
    pub map: GaussianMap,
    pub workspace: Aabb,
    pub start: Viewpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// A textured box shell.
    Box,
    /// A striped cylinder shell with a top cap.
    Cylinder,
    /// An L-shaped arrangement of two touching box shells.
    Mixed,
}

impl std::str::FromStr for SceneKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "box" => Ok(SceneKind::Box),
            "cylinder" => Ok(SceneKind::Cylinder),
            "mixed" => Ok(SceneKind::Mixed),
            _ => Err(format!("unknown scene kind `{s}` (box|cylinder|mixed)")),
        }
    }
}

const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.25, 0.20],
    [0.20, 0.55, 0.85],
    [0.95, 0.80, 0.25],
    [0.30, 0.75, 0.35],
    [0.80, 0.40, 0.75],
    [0.90, 0.55, 0.20],
];

fn checker(u: f64, v: f64, cells: f64) -> f64 {
    let c = ((u * cells).floor() + (v * cells).floor()) as i64;
    if c.rem_euclid(2) == 0 {
        1.0
    } else {
        0.45
    }
}

/// Sample `count` surface splats over a box shell (bottom face
/// excluded: the object rests on the ground).
fn box_shell(
    rng: &mut ChaCha12Rng,
    center: Vector3<f64>,
    half: Vector3<f64>,
    count: usize,
    scale: f64,
    palette_offset: usize,
) -> Vec<Gaussian> {
    // Faces: +x, -x, +y, -y, +z, weighted by area.
    let areas = [
        4.0 * half.y * half.z,
        4.0 * half.y * half.z,
        4.0 * half.x * half.z,
        4.0 * half.x * half.z,
        4.0 * half.x * half.y,
    ];
    let total: f64 = areas.iter().sum();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pick = rng.gen_range(0.0..total);
        let mut face = 0;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                face = i;
                break;
            }
            pick -= a;
        }
        let (u, v): (f64, f64) = (rng.gen(), rng.gen());
        let (p, fu, fv) = match face {
            0 => (
                Vector3::new(half.x, (2.0 * u - 1.0) * half.y, (2.0 * v - 1.0) * half.z),
                u,
                v,
            ),
            1 => (
                Vector3::new(-half.x, (2.0 * u - 1.0) * half.y, (2.0 * v - 1.0) * half.z),
                u,
                v,
            ),
            2 => (
                Vector3::new((2.0 * u - 1.0) * half.x, half.y, (2.0 * v - 1.0) * half.z),
                u,
                v,
            ),
            3 => (
                Vector3::new((2.0 * u - 1.0) * half.x, -half.y, (2.0 * v - 1.0) * half.z),
                u,
                v,
            ),
            _ => (
                Vector3::new((2.0 * u - 1.0) * half.x, (2.0 * v - 1.0) * half.y, half.z),
                u,
                v,
            ),
        };
        let base = PALETTE[(face + palette_offset) % PALETTE.len()];
        let shade = checker(fu, fv, 5.0);
        let color = [
            (base[0] * shade).clamp(0.0, 1.0),
            (base[1] * shade).clamp(0.0, 1.0),
            (base[2] * shade).clamp(0.0, 1.0),
        ];
        out.push(Gaussian::isotropic(center + p, scale, color, 0.95));
    }
    out
}

fn cylinder_shell(
    rng: &mut ChaCha12Rng,
    center: Vector3<f64>,
    radius: f64,
    half_height: f64,
    count: usize,
    scale: f64,
) -> Vec<Gaussian> {
    let lateral = std::f64::consts::TAU * radius * 2.0 * half_height;
    let cap = std::f64::consts::PI * radius * radius;
    let total = lateral + cap;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        if rng.gen_range(0.0..total) < lateral {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let z = rng.gen_range(-half_height..half_height);
            let p = center + Vector3::new(radius * theta.cos(), radius * theta.sin(), z);
            let stripe = ((theta / std::f64::consts::TAU * 8.0).floor() as usize) % 3;
            let base = PALETTE[stripe];
            let shade = 0.55 + 0.45 * ((z / half_height) * 0.5 + 0.5);
            let color = [
                (base[0] * shade).clamp(0.0, 1.0),
                (base[1] * shade).clamp(0.0, 1.0),
                (base[2] * shade).clamp(0.0, 1.0),
            ];
            out.push(Gaussian::isotropic(p, scale, color, 0.95));
        } else {
            let r = radius * rng.gen_range(0.0f64..1.0).sqrt();
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = center + Vector3::new(r * theta.cos(), r * theta.sin(), half_height);
            let shade = checker(r * theta.cos() / radius * 0.5 + 0.5, r * theta.sin() / radius * 0.5 + 0.5, 4.0);
            let base = PALETTE[4];
            let color = [
                (base[0] * shade).clamp(0.0, 1.0),
                (base[1] * shade).clamp(0.0, 1.0),
                (base[2] * shade).clamp(0.0, 1.0),
            ];
            out.push(Gaussian::isotropic(p, scale, color, 0.95));
        }
    }
    out
}

/// Build one of the procedural toy scenes, around 400 splats.
pub fn generate_scene(kind: SceneKind, seed: u64) -> GroundTruthScene {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5ce9e5);
    let center = Vector3::new(0.0, 0.0, 1.0);
    let gaussians = match kind {
        SceneKind::Box => box_shell(
            &mut rng,
            center,
            Vector3::new(0.8, 0.6, 0.6),
            450,
            0.16,
            0,
        ),
        SceneKind::Cylinder => cylinder_shell(&mut rng, center, 0.65, 0.65, 450, 0.16),
        SceneKind::Mixed => {
            // Two touching boxes forming a contiguous L of two heights.
            let mut g = box_shell(
                &mut rng,
                Vector3::new(-0.35, -0.20, 0.95),
                Vector3::new(0.35, 0.40, 0.65),
                225,
                0.15,
                1,
            );
            g.extend(box_shell(
                &mut rng,
                Vector3::new(0.45, 0.15, 0.65),
                Vector3::new(0.45, 0.45, 0.35),
                225,
                0.15,
                3,
            ));
            g
        }
    };
    GroundTruthScene {
        map: GaussianMap::new(gaussians),
        workspace: Aabb {
            min: Vector3::new(-3.0, -3.0, 0.15),
            max: Vector3::new(3.0, 3.0, 2.2),
        },
        start: Viewpoint::at(Vector3::new(-2.2, 0.0, 1.0), 0.0),
    }
}

/// Write a scene as a sidecar config next to its map file.
pub fn save_scene(scene: &GroundTruthScene, sidecar: impl AsRef<Path>) -> Result<()> {
    let sidecar = sidecar.as_ref();
    let stem = sidecar
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scene");
    let map_name = format!("{stem}_map.ply");
    let map_path = sidecar.with_file_name(&map_name);
    mapio::save_map(&scene.map, &map_path)?;
    let text = format!(
        "map = {map_name}\nworkspace_min = {},{},{}\nworkspace_max = {},{},{}\n\
         start_position = {},{},{}\nstart_yaw = {}\n",
        scene.workspace.min.x,
        scene.workspace.min.y,
        scene.workspace.min.z,
        scene.workspace.max.x,
        scene.workspace.max.y,
        scene.workspace.max.z,
        scene.start.position.x,
        scene.start.position.y,
        scene.start.position.z,
        scene.start.yaw,
    );
    std::fs::write(sidecar, text).map_err(|e| Error::io(sidecar, e))?;
    Ok(())
}

pub fn load_scene(sidecar: impl AsRef<Path>) -> Result<GroundTruthScene> {
    let sidecar = sidecar.as_ref();
    let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let mut map_path = None;
    let mut ws_min = None;
    let mut ws_max = None;
    let mut start_pos = None;
    let mut start_yaw = None;
    for (key, value, line) in crate::config::kv_lines(&text)? {
        let bad = |what: &str| Error::Config(format!("scene line {line}: bad {what} `{value}`"));
        match key.as_str() {
            "map" => map_path = Some(value.clone()),
            "workspace_min" => ws_min = Some(parse_vec3(&value).ok_or_else(|| bad("vector"))?),
            "workspace_max" => ws_max = Some(parse_vec3(&value).ok_or_else(|| bad("vector"))?),
            "start_position" => {
                start_pos = Some(parse_vec3(&value).ok_or_else(|| bad("vector"))?)
            }
            "start_yaw" => {
                start_yaw = Some(
                    value
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| bad("number"))?,
                )
            }
            _ => return Err(Error::Config(format!("scene line {line}: unknown key `{key}`"))),
        }
    }
    let missing = |what: &str| Error::Config(format!("scene file is missing `{what}`"));
    let map_rel = map_path.ok_or_else(|| missing("map"))?;
    let map_file = sidecar
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(map_rel);
    Ok(GroundTruthScene {
        map: mapio::load_map(map_file)?,
        workspace: Aabb {
            min: ws_min.ok_or_else(|| missing("workspace_min"))?,
            max: ws_max.ok_or_else(|| missing("workspace_max"))?,
        },
        start: Viewpoint::at(
            start_pos.ok_or_else(|| missing("start_position"))?,
            start_yaw.ok_or_else(|| missing("start_yaw"))?,
        ),
    })
}

fn parse_vec3(s: &str) -> Option<Vector3<f64>> {
    let parts: Vec<f64> = s
        .split(',')
        .filter_map(|p| p.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect();
    (parts.len() == 3 && s.split(',').count() == 3).then(|| Vector3::new(parts[0], parts[1], parts[2]))
}

/// Render the ground-truth map into a synthetic RGB-D observation.
/// Depth is the blended ray distance where coverage is solid and 0
/// (invalid) elsewhere; depth is noiseless, while color optionally
/// receives luminance-dependent Gaussian noise.
pub fn groundtruth_observe(
    scene: &GroundTruthScene,
    pose: &Viewpoint,
    k: &CameraIntrinsics,
    noise: Option<(&SensorNoiseModel, &mut ChaCha12Rng)>,
) -> Observation {
    let render = rasterize(&scene.map, pose, k, None);
    let mut color = render.to_image();
    let mut depth = render.to_depth_image();
    for idx in 0..render.pixel_count() {
        for ch in 0..3 {
            color.data[idx][ch] = color.data[idx][ch].clamp(0.0, 1.0);
        }
        let d = depth.data[idx];
        if render.residual_t[idx] > OBS_RESIDUAL_MAX || d < k.near || d > k.far {
            depth.data[idx] = 0.0;
        }
    }
    if let Some((model, rng)) = noise {
        for p in color.data.iter_mut() {
            let sigma = model.sigma(luminance(*p));
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
                for ch in 0..3 {
                    p[ch] = (p[ch] + normal.sample(rng)).clamp(0.0, 1.0);
                }
            }
        }
    }
    Observation {
        color,
        depth,
        pose: *pose,
    }
}

/// Held-out evaluation viewpoints on a ring around the scene content,
/// clamped into the workspace. These poses are not part of the action
/// space.
pub fn heldout_views(scene: &GroundTruthScene, count: usize) -> Vec<Viewpoint> {
    let center = scene
        .map
        .bounding_box()
        .map(|b| b.center())
        .unwrap_or_else(|| scene.workspace.center());
    let max_r = scene
        .map
        .iter()
        .map(|g| {
            let d = g.position - center;
            (d.x * d.x + d.y * d.y).sqrt()
        })
        .fold(0.0f64, f64::max);
    let radius = max_r + 1.1;
    let z = (center.z + 0.25).clamp(scene.workspace.min.z + 0.1, scene.workspace.max.z - 0.1);
    (0..count)
        .map(|i| {
            let angle = 0.5 + std::f64::consts::TAU * i as f64 / count as f64;
            let mut p = Vector3::new(
                center.x + radius * angle.cos(),
                center.y + radius * angle.sin(),
                z,
            );
            for axis in 0..2 {
                p[axis] = p[axis].clamp(
                    scene.workspace.min[axis] + 0.1,
                    scene.workspace.max[axis] - 0.1,
                );
            }
            let yaw = (center.y - p.y).atan2(center.x - p.x);
            Viewpoint::at(p, yaw)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Pick the reward-maximizing candidate by expected information.
    GaussMi,
    /// Pick uniformly among the safe candidates of the same action
    /// space.
    Random,
}

impl std::str::FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gauss-mi" => Ok(Policy::GaussMi),
            "random" => Ok(Policy::Random),
            _ => Err(format!("unknown policy `{s}` (gauss-mi|random)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Frames captured so far.
    pub frames: usize,
    /// Cumulative path length, meters.
    pub path_length: f64,
    /// Expected information of the executed candidate.
    pub mi: f64,
    /// Motion cost of the executed candidate.
    pub cost: f64,
    pub done_fraction: f64,
    /// Mean PSNR against the held-out views.
    pub psnr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopStatus {
    /// Step budget exhausted.
    MaxSteps,
    /// Done-fraction threshold reached.
    Terminated,
    /// No safe primitive was available; the log is partial.
    Deadlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopLog {
    pub records: Vec<StepRecord>,
    pub status: LoopStatus,
}

/// Everything the loop produces besides the map and log: the frames it
/// captured and the held-out poses used for PSNR.
pub struct LoopArtifacts {
    pub frames: Vec<Observation>,
    pub heldout: Vec<Viewpoint>,
}

pub fn run_active_loop(
    scene: &GroundTruthScene,
    cfg: &SystemConfig,
    policy: Policy,
    max_steps: usize,
    seed: u64,
) -> Result<(GaussianMap, LoopLog, LoopArtifacts)> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.workspace = scene.workspace;
    let k = cfg.camera;

    let mut noise_rng = ChaCha12Rng::seed_from_u64(seed);
    let mut policy_rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);

    let heldout = heldout_views(scene, 4);
    let heldout_gt: Vec<Image> = heldout
        .iter()
        .map(|v| groundtruth_observe(scene, v, &k, None).color)
        .collect();

    let mut map = GaussianMap::default();
    let mut frames: Vec<Observation> = Vec::new();
    let mut records = Vec::new();
    let mut status = LoopStatus::MaxSteps;
    let mut path_length = 0.0;
    let mut state = scene.start;

    let observe = |pose: &Viewpoint, rng: &mut ChaCha12Rng| -> Observation {
        if cfg.obs_noise {
            groundtruth_observe(scene, pose, &k, Some((&cfg.noise, rng)))
        } else {
            groundtruth_observe(scene, pose, &k, None)
        }
    };

    let integrate = |map: &mut GaussianMap,
                     frames: &mut Vec<Observation>,
                     obs: Observation,
                     cfg: &SystemConfig|
     -> Result<()> {
        // Spawn only where the current map lacks coverage.
        let pre = rasterize(map, &obs.pose, &k, None);
        let mut masked = obs.clone();
        for idx in 0..pre.pixel_count() {
            if pre.residual_t[idx] < SPAWN_RESIDUAL_MIN {
                masked.depth.data[idx] = 0.0;
            }
        }
        let spawned = backproject_spawn(&masked, &k, cfg.spawn_stride, cfg.init_opacity)?;
        map.gaussians.extend(spawned);
        frames.push(obs);

        let window = keyframe_window(frames, cfg.keyframe_cap);
        optimize_step(
            map,
            &window,
            &k,
            cfg.opt_iters,
            cfg.opt_lr,
            cfg.lambda_c,
            cfg.depth_scale,
        )?;
        update_probabilities(map, frames.last().expect("frame just pushed"), &k, cfg)?;
        Ok(())
    };

    let heldout_psnr = |map: &GaussianMap| -> Result<f64> {
        let mut total = 0.0;
        for (view, gt) in heldout.iter().zip(&heldout_gt) {
            let render = rasterize(map, view, &k, None).to_image();
            total += psnr(&render, gt)?;
        }
        Ok(total / heldout.len().max(1) as f64)
    };

    // Initial observation from the start pose.
    let obs0 = observe(&state, &mut noise_rng);
    integrate(&mut map, &mut frames, obs0, &cfg)?;
    records.push(StepRecord {
        step: 0,
        frames: 1,
        path_length: 0.0,
        mi: 0.0,
        cost: 0.0,
        done_fraction: done_fraction(&map, cfg.tau),
        psnr: heldout_psnr(&map)?,
    });

    for step in 1..=max_steps {
        if terminated(&map, &cfg) {
            status = LoopStatus::Terminated;
            break;
        }

        let chosen: Option<(Candidate, f64)> = match policy {
            Policy::GaussMi => match select_nbv(&map, &state, &cfg, &cfg.noise) {
                Ok(choice) => Some((
                    Candidate {
                        action_index: choice.action_index,
                        action: action_space(&cfg)?[choice.action_index],
                        primitive: choice.primitive,
                        viewpoint: choice.viewpoint,
                        info: choice.info,
                        cost: choice.cost,
                        reward: choice.reward,
                    },
                    choice.info,
                )),
                Err(Error::PlannerDeadlock { .. }) => None,
                Err(e) => return Err(e),
            },
            Policy::Random => {
                let actions = action_space(&cfg)?;
                let safe: Vec<Candidate> = actions
                    .iter()
                    .enumerate()
                    .filter_map(|(i, a)| {
                        let goal = propagate(&state, a, cfg.duration);
                        let prim = min_snap_primitive(&state, &goal, cfg.duration).ok()?;
                        safety_check(&prim, &map, &cfg).then(|| Candidate {
                            action_index: i,
                            action: *a,
                            viewpoint: goal,
                            info: 0.0,
                            cost: crate::planner::primitive_cost(&prim, &cfg),
                            reward: 0.0,
                            primitive: prim,
                        })
                    })
                    .collect();
                if safe.is_empty() {
                    None
                } else {
                    let pick = policy_rng.gen_range(0..safe.len());
                    let cand = safe[pick].clone();
                    let mi = evaluate_gauss_mi(&map, &cand.viewpoint, &k, &cfg.noise).total_mi;
                    Some((cand, mi))
                }
            }
        };

        let Some((cand, mi)) = chosen else {
            status = LoopStatus::Deadlock;
            break;
        };
        assert!(safety_check(&cand.primitive, &map, &cfg));

        path_length += cand.primitive.path_length(SAFETY_SAMPLES);
        state = cand.primitive.end();

        let obs = observe(&state, &mut noise_rng);
        integrate(&mut map, &mut frames, obs, &cfg)?;

        records.push(StepRecord {
            step,
            frames: frames.len(),
            path_length,
            mi,
            cost: cand.cost,
            done_fraction: done_fraction(&map, cfg.tau),
            psnr: heldout_psnr(&map)?,
        });
    }

    if status == LoopStatus::MaxSteps && terminated(&map, &cfg) {
        status = LoopStatus::Terminated;
    }

    Ok((
        map,
        LoopLog { records, status },
        LoopArtifacts { frames, heldout },
    ))
}

/// Uniformly spaced keyframe window of at most `cap` frames, always
/// including the newest frame.
fn keyframe_window(frames: &[Observation], cap: usize) -> Vec<Observation> {
    let cap = cap.max(1);
    if frames.len() <= cap {
        return frames.to_vec();
    }
    let mut idx: Vec<usize> = (0..cap).map(|i| i * frames.len() / cap).collect();
    *idx.last_mut().expect("cap >= 1") = frames.len() - 1;
    idx.dedup();
    idx.iter().map(|&i| frames[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cfg() -> SystemConfig {
        let mut cfg = SystemConfig::default();
        cfg.camera = CameraIntrinsics::from_fov(64, 48, 85.0, 0.05, 50.0).unwrap();
        cfg.spawn_stride = 4;
        cfg.opt_iters = 8;
        cfg.opt_lr = 0.2;
        cfg.keyframe_cap = 8;
        cfg.clearance_radius = 0.35;
        // Rebalance the information weight for the small image and
        // make termination demand all four quadrants.
        cfg.w_info = 0.03 * (640.0 * 480.0) / (64.0 * 48.0);
        cfg.tau = 0.9;
        cfg.phi = 0.85;
        cfg
    }

    #[test]
    fn scene_generation_is_deterministic_and_bounded() {
        for kind in [SceneKind::Box, SceneKind::Cylinder, SceneKind::Mixed] {
            let a = generate_scene(kind, 3);
            let b = generate_scene(kind, 3);
            assert_eq!(a.map, b.map);
            assert!(a.map.len() <= 500);
            assert!(a.workspace.contains(&a.start.position));
            for g in a.map.iter() {
                assert!(g.opacity > 0.5, "scene splats are obstacles");
            }
        }
    }

    #[test]
    fn start_pose_is_safe() {
        let cfg = toy_cfg();
        for kind in [SceneKind::Box, SceneKind::Cylinder, SceneKind::Mixed] {
            let scene = generate_scene(kind, 1);
            let mut c = cfg.clone();
            c.workspace = scene.workspace;
            let hover = min_snap_primitive(&scene.start, &scene.start, c.duration).unwrap();
            assert!(safety_check(&hover, &scene.map, &c));
        }
    }

    #[test]
    fn scene_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sidecar = dir.path().join("toy.scene");
        let scene = generate_scene(SceneKind::Box, 7);
        save_scene(&scene, &sidecar).unwrap();
        let back = load_scene(&sidecar).unwrap();
        assert_eq!(back.map.len(), scene.map.len());
        assert_eq!(back.workspace, scene.workspace);
        assert_eq!(back.start, scene.start);
    }

    #[test]
    fn noiseless_observation_is_self_consistent() {
        let cfg = toy_cfg();
        let scene = generate_scene(SceneKind::Box, 2);
        let obs = groundtruth_observe(&scene, &scene.start, &cfg.camera, None);
        let render = rasterize(&scene.map, &scene.start, &cfg.camera, None);
        let loss =
            crate::belief::loss_image(&render, &obs, cfg.lambda_c, cfg.depth_scale).unwrap();
        assert!(loss.values.iter().all(|v| *v == 0.0));
        // Some pixels actually hit the object.
        assert!(obs.depth.data.iter().any(|d| *d > 0.0));
        for &d in &obs.depth.data {
            assert!(d == 0.0 || (cfg.camera.near..=cfg.camera.far).contains(&d));
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let cfg = toy_cfg();
        let scene = generate_scene(SceneKind::Cylinder, 5);
        let model = SensorNoiseModel::poissonian_gaussian(0.01, 0.0001);
        let mut rng1 = ChaCha12Rng::seed_from_u64(11);
        let mut rng2 = ChaCha12Rng::seed_from_u64(11);
        let a = groundtruth_observe(&scene, &scene.start, &cfg.camera, Some((&model, &mut rng1)));
        let b = groundtruth_observe(&scene, &scene.start, &cfg.camera, Some((&model, &mut rng2)));
        assert_eq!(a, b);
    }

    #[test]
    fn noise_standard_deviation_matches_model() {
        let model = SensorNoiseModel::poissonian_gaussian(0.01, 0.0001);
        // Mid-gray pixel: clipping at [0, 1] is negligible.
        let clean = [0.5, 0.5, 0.5];
        let sigma_expect = model.sigma(luminance(clean));
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let normal = Normal::new(0.0, sigma_expect).unwrap();
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| (clean[0] + normal.sample(&mut rng)).clamp(0.0, 1.0) - clean[0])
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
        let sigma = var.sqrt();
        assert!(
            (sigma - sigma_expect).abs() / sigma_expect < 0.1,
            "sample sigma {sigma} vs model {sigma_expect}"
        );
    }

    #[test]
    fn zero_steps_logs_only_the_initial_record() {
        let cfg = toy_cfg();
        let scene = generate_scene(SceneKind::Box, 4);
        let (map, log, _) = run_active_loop(&scene, &cfg, Policy::GaussMi, 0, 9).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].frames, 1);
        assert_eq!(log.status, LoopStatus::MaxSteps);
        assert!(!map.is_empty());
    }

    #[test]
    fn fixed_seed_runs_are_reproducible() {
        let mut cfg = toy_cfg();
        cfg.obs_noise = true;
        let scene = generate_scene(SceneKind::Box, 4);
        for policy in [Policy::GaussMi, Policy::Random] {
            let (map_a, log_a, _) = run_active_loop(&scene, &cfg, policy, 3, 42).unwrap();
            let (map_b, log_b, _) = run_active_loop(&scene, &cfg, policy, 3, 42).unwrap();
            assert_eq!(log_a, log_b);
            assert_eq!(map_a, map_b);
        }
    }

    #[test]
    fn short_loop_improves_and_stays_monotone() {
        let cfg = toy_cfg();
        let scene = generate_scene(SceneKind::Box, 6);
        let (map, log, _) = run_active_loop(&scene, &cfg, Policy::GaussMi, 6, 3).unwrap();
        assert!(!map.is_empty());
        for w in log.records.windows(2) {
            assert!(w[1].frames >= w[0].frames);
            assert!(w[1].path_length >= w[0].path_length);
            assert!(
                w[1].done_fraction >= w[0].done_fraction - 1e-12,
                "done fraction decreased: {:?}",
                log.records
            );
        }
        let first = log.records.first().unwrap();
        let last = log.records.last().unwrap();
        assert!(last.psnr > first.psnr, "{} vs {}", last.psnr, first.psnr);
    }

    #[test]
    fn keyframe_window_keeps_ends() {
        let cfg = toy_cfg();
        let scene = generate_scene(SceneKind::Box, 1);
        let obs = groundtruth_observe(&scene, &scene.start, &cfg.camera, None);
        let frames: Vec<Observation> = (0..10)
            .map(|i| {
                let mut o = obs.clone();
                o.pose.position.x += i as f64;
                o
            })
            .collect();
        let window = keyframe_window(&frames, 4);
        assert!(window.len() <= 4);
        assert_eq!(window[0].pose, frames[0].pose);
        assert_eq!(window.last().unwrap().pose, frames[9].pose);
    }
}
