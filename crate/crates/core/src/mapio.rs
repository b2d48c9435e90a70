//! Map persistence: PLY-compatible files with an ASCII header and a
//! binary little-endian body of float32 records.
//!
//! Record layout (18 floats): x y z, rot_w rot_x rot_y rot_z,
//! scale_0..2, opacity, red green blue, logodds_0..3. Values are
//! quantized to f32 on save; loading re-normalizes the quaternion in
//! f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::scene::{Gaussian, GaussianMap};

const PROPERTIES: [&str; 18] = [
    "x", "y", "z", "rot_w", "rot_x", "rot_y", "rot_z", "scale_0", "scale_1", "scale_2",
    "opacity", "red", "green", "blue", "logodds_0", "logodds_1", "logodds_2", "logodds_3",
];

/// Loaded quaternions may be off unit norm by f32 quantization; reject
/// anything farther than this before re-normalizing.
const QUAT_NORM_TOL: f64 = 1e-4;

pub fn save_map(map: &GaussianMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);

    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", map.len()));
    for p in PROPERTIES {
        header.push_str(&format!("property float {p}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(|e| Error::io(path, e))?;

    let mut buf = Vec::with_capacity(map.len() * 18 * 4);
    for g in map.iter() {
        let q = g.rotation.quaternion();
        let fields: [f64; 18] = [
            g.position.x, g.position.y, g.position.z, q.w, q.i, q.j, q.k, g.scales.x,
            g.scales.y, g.scales.z, g.opacity, g.color[0], g.color[1], g.color[2],
            g.logodds[0], g.logodds[1], g.logodds[2], g.logodds[3],
        ];
        for f in fields {
            buf.extend_from_slice(&(f as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<GaussianMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;

    let header_end = find_header_end(&raw).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "missing end_header".into(),
    })?;
    let header = std::str::from_utf8(&raw[..header_end]).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "header is not valid UTF-8".into(),
    })?;

    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut lines = header.lines().enumerate();
    let mut expect = |want: &str| -> Result<()> {
        match lines.next() {
            Some((_, got)) if got.trim() == want => Ok(()),
            Some((n, got)) => Err(parse_err(n + 1, format!("expected `{want}`, got `{got}`"))),
            None => Err(parse_err(0, format!("expected `{want}`, got end of header"))),
        }
    };
    expect("ply")?;
    expect("format binary_little_endian 1.0")?;

    let count = match lines.next() {
        Some((n, line)) => {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 || parts[0] != "element" || parts[1] != "vertex" {
                return Err(parse_err(n + 1, format!("expected `element vertex <count>`, got `{line}`")));
            }
            parts[2]
                .parse::<usize>()
                .map_err(|_| parse_err(n + 1, format!("bad vertex count `{}`", parts[2])))?
        }
        None => return Err(parse_err(0, "missing element line".into())),
    };

    let mut n_props = 0;
    for want in PROPERTIES {
        match lines.next() {
            Some((n, line)) => {
                let expected = format!("property float {want}");
                if line.trim() == "end_header" {
                    return Err(parse_err(
                        n + 1,
                        format!("field count mismatch: {n_props} properties, expected 18"),
                    ));
                }
                if line.trim() != expected {
                    return Err(parse_err(n + 1, format!("expected `{expected}`, got `{line}`")));
                }
                n_props += 1;
            }
            None => return Err(parse_err(0, "truncated property list".into())),
        }
    }
    match lines.next() {
        Some((_, line)) if line.trim() == "end_header" => {}
        Some((n, line)) => {
            return Err(parse_err(
                n + 1,
                format!("field count mismatch: extra property `{line}`"),
            ))
        }
        None => return Err(parse_err(0, "missing end_header".into())),
    }

    let body = &raw[header_end..];
    let expected_len = count * 18 * 4;
    if body.len() != expected_len {
        return Err(Error::MapFormat(format!(
            "body holds {} bytes, header promises {expected_len} ({count} records)",
            body.len()
        )));
    }

    let mut gaussians = Vec::with_capacity(count);
    for rec in 0..count {
        let mut f = [0.0f64; 18];
        for (j, v) in f.iter_mut().enumerate() {
            let off = (rec * 18 + j) * 4;
            let bytes: [u8; 4] = body[off..off + 4].try_into().unwrap();
            *v = f32::from_le_bytes(bytes) as f64;
            if !v.is_finite() {
                return Err(Error::MapFormat(format!(
                    "gaussian {rec} field {}: non-finite value",
                    PROPERTIES[j]
                )));
            }
        }
        gaussians.push(gaussian_from_fields(rec, &f)?);
    }
    Ok(GaussianMap::new(gaussians))
}

fn gaussian_from_fields(rec: usize, f: &[f64; 18]) -> Result<Gaussian> {
    let q = Quaternion::new(f[3], f[4], f[5], f[6]);
    let norm = q.norm();
    if (norm - 1.0).abs() > QUAT_NORM_TOL {
        return Err(Error::MapFormat(format!(
            "gaussian {rec} field rot_w..rot_z: quaternion norm {norm} out of range"
        )));
    }
    for (axis, name) in [(f[7], "scale_0"), (f[8], "scale_1"), (f[9], "scale_2")] {
        if !(axis > 0.0) {
            return Err(Error::MapFormat(format!(
                "gaussian {rec} field {name}: scale must be positive, got {axis}"
            )));
        }
    }
    if !(f[10] > 0.0 && f[10] < 1.0) {
        return Err(Error::MapFormat(format!(
            "gaussian {rec} field opacity: opacity out of range ({})",
            f[10]
        )));
    }
    for (c, name) in [(f[11], "red"), (f[12], "green"), (f[13], "blue")] {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::MapFormat(format!(
                "gaussian {rec} field {name}: color out of range ({c})"
            )));
        }
    }
    Ok(Gaussian {
        position: Vector3::new(f[0], f[1], f[2]),
        rotation: UnitQuaternion::from_quaternion(q),
        scales: Vector3::new(f[7], f[8], f[9]),
        color: [f[11], f[12], f[13]],
        // Degenerate transmittance products are avoided by keeping
        // opacity away from the open-interval endpoints.
        opacity: f[10].clamp(1e-4, 1.0 - 1e-4),
        logodds: [f[14], f[15], f[16], f[17]],
    })
}

fn find_header_end(raw: &[u8]) -> Option<usize> {
    let tag = b"end_header\n";
    raw.windows(tag.len())
        .position(|w| w == tag)
        .map(|p| p + tag.len())
}
