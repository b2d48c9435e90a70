//! Image and log file formats: binary PPM (P6) for color, PFM for
//! scalar/depth images, CSV for loop logs, and plain-text pose lists.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{DepthImage, Image, Viewpoint};
use crate::sim::{LoopLog, StepRecord};

/// 8-bit binary PPM with maxval 255; values are clamped to [0, 1] and
/// rounded.
pub fn write_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P6\n{} {}\n255\n", img.width, img.height).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(img.data.len() * 3);
    for p in &img.data {
        for ch in 0..3 {
            bytes.push((p[ch].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Single-channel PFM, little-endian float32 (scale -1.0), scanlines
/// bottom to top.
pub fn write_pfm(img: &DepthImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "Pf\n{} {}\n-1.0\n", img.width, img.height).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(img.data.len() * 4);
    for row in (0..img.height).rev() {
        for col in 0..img.width {
            bytes.extend_from_slice(&(img.at(col, row) as f32).to_le_bytes());
        }
    }
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<DepthImage> {
    let path = path.as_ref();
    let mut raw = Vec::new();
    File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut raw)
        .map_err(|e| Error::io(path, e))?;

    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg,
    };
    // Header: three whitespace-delimited tokens.
    let mut offset = 0;
    let mut tokens = Vec::new();
    for _ in 0..4 {
        while offset < raw.len() && raw[offset].is_ascii_whitespace() {
            offset += 1;
        }
        let start = offset;
        while offset < raw.len() && !raw[offset].is_ascii_whitespace() {
            offset += 1;
        }
        tokens.push(
            std::str::from_utf8(&raw[start..offset])
                .map_err(|_| parse_err("non-ascii header".into()))?
                .to_string(),
        );
    }
    if tokens[0] != "Pf" {
        return Err(parse_err(format!("expected Pf magic, got `{}`", tokens[0])));
    }
    let width: usize = tokens[1].parse().map_err(|_| parse_err("bad width".into()))?;
    let height: usize = tokens[2].parse().map_err(|_| parse_err("bad height".into()))?;
    let scale: f64 = tokens[3].parse().map_err(|_| parse_err("bad scale".into()))?;
    if scale >= 0.0 {
        return Err(parse_err("big-endian PFM is not supported".into()));
    }
    offset += 1; // single whitespace after the scale

    let need = width * height * 4;
    if raw.len() - offset != need {
        return Err(parse_err(format!(
            "body holds {} bytes, header promises {need}",
            raw.len() - offset
        )));
    }
    let mut img = DepthImage::filled(width, height, 0.0);
    let mut pos = offset;
    for row in (0..height).rev() {
        for col in 0..width {
            let bytes: [u8; 4] = raw[pos..pos + 4].try_into().unwrap();
            img.data[row * width + col] = f32::from_le_bytes(bytes) as f64;
            pos += 4;
        }
    }
    Ok(img)
}

pub const LOG_CSV_HEADER: &str = "step,frames,path_length,mi,cost,done_fraction,psnr";

/// Loop log as CSV: a fixed header row then one row per step. Numeric
/// fields use the shortest round-trip representation.
pub fn write_log_csv(log: &LoopLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{LOG_CSV_HEADER}").map_err(|e| Error::io(path, e))?;
    for r in &log.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.step, r.frames, r.path_length, r.mi, r.cost, r.done_fraction, r.psnr
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_log_csv(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == LOG_CSV_HEADER => {}
        other => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("unexpected header {other:?}"),
            })
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parse_err = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: msg.into(),
        };
        if f.len() != 7 {
            return Err(parse_err("expected 7 fields"));
        }
        records.push(StepRecord {
            step: f[0].parse().map_err(|_| parse_err("bad step"))?,
            frames: f[1].parse().map_err(|_| parse_err("bad frames"))?,
            path_length: f[2].parse().map_err(|_| parse_err("bad path_length"))?,
            mi: f[3].parse().map_err(|_| parse_err("bad mi"))?,
            cost: f[4].parse().map_err(|_| parse_err("bad cost"))?,
            done_fraction: f[5].parse().map_err(|_| parse_err("bad done_fraction"))?,
            psnr: f[6].parse().map_err(|_| parse_err("bad psnr"))?,
        });
    }
    Ok(records)
}

/// Pose list: one `x,y,z,yaw` line per view; `#` comments allowed.
pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<Viewpoint>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut poses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        poses.push(parse_pose(line).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        })?);
    }
    Ok(poses)
}

pub fn write_poses(poses: &[Viewpoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# x,y,z,yaw").map_err(|e| Error::io(path, e))?;
    for p in poses {
        writeln!(w, "{},{},{},{}", p.position.x, p.position.y, p.position.z, p.yaw)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Parse an `x,y,z,yaw` string into a stationary viewpoint.
pub fn parse_pose(s: &str) -> std::result::Result<Viewpoint, String> {
    let parts: Vec<&str> = s.split(',').map(|p| p.trim()).collect();
    if parts.len() != 4 {
        return Err(format!("expected `x,y,z,yaw`, got `{s}`"));
    }
    let mut vals = [0.0f64; 4];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .parse::<f64>()
            .map_err(|_| format!("bad number `{p}` in pose `{s}`"))?;
        if !v.is_finite() {
            return Err(format!("non-finite component in pose `{s}`"));
        }
    }
    Ok(Viewpoint::at(Vector3::new(vals[0], vals[1], vals[2]), vals[3]))
}
