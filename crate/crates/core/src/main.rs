//! Command-line front end: simulation runs, single-view rendering,
//! information scoring, candidate planning, and evaluation metrics.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use splatmi::belief::done_fraction;
use splatmi::config::SystemConfig;
use splatmi::gauss_mi::evaluate_gauss_mi;
use splatmi::imgio;
use splatmi::mapio;
use splatmi::metrics::{ause, efficiency, psnr, sparsification, ssim, LogBase};
use splatmi::planner::evaluate_candidates;
use splatmi::render::rasterize;
use splatmi::scene::{CameraIntrinsics, DepthImage};
use splatmi::sim::{
    generate_scene, groundtruth_observe, load_scene, run_active_loop, save_scene, Policy,
    SceneKind,
};

#[derive(Parser)]
#[command(name = "splatmi", version, about = "Active splat reconstruction simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Camera overrides shared by the map-centric subcommands.
#[derive(Args, Clone)]
struct CameraArgs {
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, default_value_t = 480)]
    height: usize,
    /// Horizontal field of view, degrees.
    #[arg(long, default_value_t = 90.0)]
    fov_deg: f64,
    #[arg(long, default_value_t = 0.05)]
    near: f64,
    #[arg(long, default_value_t = 100.0)]
    far: f64,
}

impl CameraArgs {
    fn build(&self) -> anyhow::Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::from_fov(
            self.width,
            self.height,
            self.fov_deg,
            self.near,
            self.far,
        )?)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the active reconstruction loop on a scene.
    Simulate {
        /// Scene sidecar file (see `gen-scene`).
        #[arg(long)]
        scene: PathBuf,
        /// Config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// View selection policy.
        #[arg(long)]
        policy: Policy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (map, frames, log, held-out poses).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        max_steps: usize,
    },
    /// Render a map from a pose into a PPM image.
    Render {
        #[arg(long)]
        map: PathBuf,
        /// Pose as `x,y,z,yaw`.
        #[arg(long)]
        pose: String,
        #[arg(long)]
        out: PathBuf,
        /// Optional PFM depth output.
        #[arg(long)]
        depth: Option<PathBuf>,
        #[command(flatten)]
        camera: CameraArgs,
    },
    /// Print the expected mutual information of a candidate view.
    Mi {
        #[arg(long)]
        map: PathBuf,
        /// Pose as `x,y,z,yaw`.
        #[arg(long)]
        pose: String,
        /// Optional per-pixel MI image (PFM).
        #[arg(long)]
        mi_image: Option<PathBuf>,
        /// Config file for the sensor-noise model.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        camera: CameraArgs,
    },
    /// Rank all candidate viewpoints from a state.
    Plan {
        #[arg(long)]
        map: PathBuf,
        /// Current state as `x,y,z,yaw`.
        #[arg(long)]
        state: String,
        #[arg(long)]
        config: PathBuf,
        /// Print only the best N candidates (0 = all).
        #[arg(long, default_value_t = 0)]
        top: usize,
    },
    /// Evaluate a reconstructed map against ground truth on a test set.
    Metrics {
        /// Reconstructed map.
        #[arg(long)]
        map: PathBuf,
        /// Ground-truth scene sidecar.
        #[arg(long)]
        scene: PathBuf,
        /// Directory holding `poses.txt`.
        #[arg(long)]
        testset: PathBuf,
        /// Frame count for the efficiency score; read from `log.csv`
        /// next to the map when omitted.
        #[arg(long)]
        frames: Option<usize>,
        /// Where to write sparsification CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Log base of the efficiency denominator: `10` or `e`.
        #[arg(long, default_value = "10")]
        log_base: String,
        #[command(flatten)]
        camera: CameraArgs,
    },
    /// Generate a procedural toy scene.
    GenScene {
        #[arg(long)]
        kind: SceneKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene sidecar path to write (map goes next to it).
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<SystemConfig> {
    match path {
        Some(p) => Ok(SystemConfig::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => Ok(SystemConfig::default()),
    }
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Simulate {
            scene,
            config,
            policy,
            seed,
            out,
            max_steps,
        } => {
            let scene = load_scene(&scene)?;
            let cfg = load_config(&config)?;
            let (map, log, artifacts) = run_active_loop(&scene, &cfg, policy, max_steps, seed)?;

            std::fs::create_dir_all(out.join("frames"))
                .with_context(|| format!("creating {}", out.display()))?;
            std::fs::create_dir_all(out.join("testset"))?;
            mapio::save_map(&map, out.join("map.ply"))?;
            imgio::write_log_csv(&log, out.join("log.csv"))?;
            imgio::write_poses(&artifacts.heldout, out.join("testset").join("poses.txt"))?;
            for (i, frame) in artifacts.frames.iter().enumerate() {
                imgio::write_ppm(&frame.color, out.join("frames").join(format!("frame_{i:03}.ppm")))?;
                imgio::write_pfm(&frame.depth, out.join("frames").join(format!("depth_{i:03}.pfm")))?;
            }

            let last = log.records.last().expect("log has the initial record");
            println!(
                "status: {:?} | steps: {} | frames: {} | path: {:.2} m | done: {:.1}% | held-out PSNR: {:.2} dB",
                log.status,
                last.step,
                last.frames,
                last.path_length,
                100.0 * last.done_fraction,
                last.psnr
            );
            println!("outputs in {}", out.display());
        }

        Cmd::Render {
            map,
            pose,
            out,
            depth,
            camera,
        } => {
            let map = mapio::load_map(&map)?;
            let pose = imgio::parse_pose(&pose).map_err(anyhow::Error::msg)?;
            let k = camera.build()?;
            let render = rasterize(&map, &pose, &k, None);
            imgio::write_ppm(&render.to_image(), &out)?;
            if let Some(d) = depth {
                imgio::write_pfm(&render.to_depth_image(), &d)?;
            }
            println!("rendered {} splats to {}", map.len(), out.display());
        }

        Cmd::Mi {
            map,
            pose,
            mi_image,
            config,
            camera,
        } => {
            let map = mapio::load_map(&map)?;
            let pose = imgio::parse_pose(&pose).map_err(anyhow::Error::msg)?;
            let k = camera.build()?;
            let noise = load_config(&config)?.noise;
            let res = evaluate_gauss_mi(&map, &pose, &k, &noise);
            if let Some(path) = mi_image {
                imgio::write_pfm(
                    &DepthImage {
                        width: res.width,
                        height: res.height,
                        data: res.mi_image.clone(),
                    },
                    &path,
                )?;
            }
            println!(
                "total MI: {:.6} nats | splats touched: {} | contributions: {}",
                res.total_mi, res.gaussians_touched, res.contributions
            );
        }

        Cmd::Plan {
            map,
            state,
            config,
            top,
        } => {
            let map = mapio::load_map(&map)?;
            let state = imgio::parse_pose(&state).map_err(anyhow::Error::msg)?;
            let cfg = SystemConfig::load(&config)?;
            let candidates = evaluate_candidates(&map, &state, &cfg, &cfg.noise)?;
            if candidates.is_empty() {
                bail!("planner deadlock: no safe candidate");
            }
            let shown = if top == 0 { candidates.len() } else { top.min(candidates.len()) };
            println!("{:>4} {:>8} {:>8} {:>8} {:>12} {:>12} {:>12}",
                "rank", "v_xy", "v_z", "omega_z", "I", "J", "R");
            for (rank, c) in candidates.iter().take(shown).enumerate() {
                println!(
                    "{:>4} {:>8.3} {:>8.3} {:>8.3} {:>12.4} {:>12.4} {:>12.6}",
                    rank + 1,
                    c.action.v_xy,
                    c.action.v_z,
                    c.action.omega_z,
                    c.info,
                    c.cost,
                    c.reward
                );
            }
        }

        Cmd::Metrics {
            map,
            scene,
            testset,
            frames,
            out,
            log_base,
            camera,
        } => {
            let base = match log_base.as_str() {
                "10" => LogBase::Ten,
                "e" => LogBase::Natural,
                other => bail!("unknown log base `{other}` (10|e)"),
            };
            let map_path = map;
            let map = mapio::load_map(&map_path)?;
            let scene = load_scene(&scene)?;
            let poses = imgio::read_poses(testset.join("poses.txt"))?;
            if poses.is_empty() {
                bail!("test set has no poses");
            }
            let k = camera.build()?;
            let cfg = SystemConfig::default();

            let n_frames = frames.or_else(|| {
                let log = map_path.parent()?.join("log.csv");
                imgio::read_log_csv(log).ok()?.last().map(|r| r.frames)
            });

            let out_dir = out.unwrap_or_else(|| testset.clone());
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;

            let mut psnr_sum = 0.0;
            let mut ssim_sum = 0.0;
            let mut ause_sum = 0.0;
            println!("{:>4} {:>10} {:>8} {:>8}", "view", "psnr(dB)", "ssim", "ause");
            for (i, pose) in poses.iter().enumerate() {
                let gt = groundtruth_observe(&scene, pose, &k, None).color;
                let render = rasterize(&map, pose, &k, None).to_image();
                let p = psnr(&render, &gt)?;
                let s = ssim(&render, &gt)?;

                // Per-pixel mean absolute color error against the MI
                // image as the uncertainty proxy.
                let err: Vec<f64> = render
                    .data
                    .iter()
                    .zip(&gt.data)
                    .map(|(a, b)| {
                        ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0
                    })
                    .collect();
                let mi = evaluate_gauss_mi(&map, pose, &k, &cfg.noise);
                let curve = sparsification(&err, &mi.mi_image, 100)?;
                let a = ause(&curve);

                let csv = out_dir.join(format!("sparsification_{i:02}.csv"));
                let mut text = String::from("fraction,mae,oracle_mae\n");
                for j in 0..curve.fractions.len() {
                    text.push_str(&format!(
                        "{},{},{}\n",
                        curve.fractions[j], curve.mae[j], curve.oracle_mae[j]
                    ));
                }
                std::fs::write(&csv, text)
                    .with_context(|| format!("writing {}", csv.display()))?;

                println!("{i:>4} {p:>10.3} {s:>8.4} {a:>8.4}");
                psnr_sum += p;
                ssim_sum += s;
                ause_sum += a;
            }
            let n = poses.len() as f64;
            println!(
                "mean {:>10.3} {:>8.4} {:>8.4}",
                psnr_sum / n,
                ssim_sum / n,
                ause_sum / n
            );
            match n_frames {
                Some(f) if f >= 2 => {
                    println!("efficiency E = {:.3} (frames: {f})", efficiency(psnr_sum / n, f, base)?);
                }
                _ => println!("efficiency E: skipped (frame count unknown; pass --frames)"),
            }
            println!("map: {} splats, done fraction {:.3}", map.len(), done_fraction(&map, cfg.tau));
        }

        Cmd::GenScene { kind, seed, out } => {
            let scene = generate_scene(kind, seed);
            save_scene(&scene, &out)?;
            println!(
                "wrote scene ({} splats) to {}",
                scene.map.len(),
                out.display()
            );
        }
    }
    Ok(())
}
