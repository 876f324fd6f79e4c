//! PLY point clouds with exactly four float properties: x, y, z,
//! intensity. Both the ASCII and binary little-endian flavors are written
//! and read; values are 32-bit floats either way, so the two flavors carry
//! identical information.

use std::fs;
use std::path::Path;

use glam::DVec3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

pub fn write_ply(
    path: &Path,
    points: &[DVec3],
    intensity: Option<&[f64]>,
    format: PlyFormat,
) -> Result<()> {
    super::atomic_write(path, &serialize_ply(points, intensity, format)?)
}

pub fn serialize_ply(
    points: &[DVec3],
    intensity: Option<&[f64]>,
    format: PlyFormat,
) -> Result<Vec<u8>> {
    if let Some(ints) = intensity {
        if ints.len() != points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} intensities for {} points",
                ints.len(),
                points.len()
            )));
        }
    }
    let format_line = match format {
        PlyFormat::Ascii => "format ascii 1.0",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0",
    };
    let mut out = format!(
        "ply\n{format_line}\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty float intensity\nend_header\n",
        points.len()
    )
    .into_bytes();
    for (i, p) in points.iter().enumerate() {
        let vals = [
            p.x as f32,
            p.y as f32,
            p.z as f32,
            intensity.map_or(0.0, |v| v[i] as f32),
        ];
        match format {
            PlyFormat::Ascii => {
                let row = format!("{} {} {} {}\n", vals[0], vals[1], vals[2], vals[3]);
                out.extend_from_slice(row.as_bytes());
            }
            PlyFormat::BinaryLittleEndian => {
                for v in vals {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn read_ply(path: &Path) -> Result<(Vec<DVec3>, Vec<f64>)> {
    parse_ply(&fs::read(path)?)
}

pub fn parse_ply(bytes: &[u8]) -> Result<(Vec<DVec3>, Vec<f64>)> {
    let (format, count, body_off) = parse_header(bytes)?;
    let body = &bytes[body_off..];
    let mut points = Vec::with_capacity(count.min(1 << 22));
    let mut intensity = Vec::with_capacity(count.min(1 << 22));
    match format {
        PlyFormat::BinaryLittleEndian => {
            if body.len() != count * 16 {
                return Err(Error::Format(format!(
                    "ply body holds {} bytes for {count} vertices",
                    body.len()
                )));
            }
            for i in 0..count {
                let at = |j: usize| -> f32 {
                    f32::from_le_bytes(body[i * 16 + j * 4..i * 16 + j * 4 + 4].try_into().unwrap())
                };
                points.push(DVec3::new(at(0) as f64, at(1) as f64, at(2) as f64));
                intensity.push(at(3) as f64);
            }
        }
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::Format("ply ascii body is not UTF-8".into()))?;
            let mut rows = 0usize;
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let vals = line
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f32>()
                            .map_err(|_| Error::Format(format!("bad ply value '{t}'")))
                    })
                    .collect::<Result<Vec<f32>>>()?;
                if vals.len() != 4 {
                    return Err(Error::Format(format!(
                        "ply row holds {} columns, expected 4",
                        vals.len()
                    )));
                }
                points.push(DVec3::new(vals[0] as f64, vals[1] as f64, vals[2] as f64));
                intensity.push(vals[3] as f64);
                rows += 1;
            }
            if rows != count {
                return Err(Error::Format(format!(
                    "ply body holds {rows} rows for {count} vertices"
                )));
            }
        }
    }
    Ok((points, intensity))
}

fn parse_header(bytes: &[u8]) -> Result<(PlyFormat, usize, usize)> {
    let mut off = 0usize;
    let mut format = None;
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut first = true;
    loop {
        let end = bytes[off..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| off + p)
            .ok_or_else(|| Error::Format("ply header never ends".into()))?;
        let line = std::str::from_utf8(&bytes[off..end])
            .map_err(|_| Error::Format("ply header is not ASCII".into()))?
            .trim();
        off = end + 1;
        if first {
            if line != "ply" {
                return Err(Error::Format("not a ply file".into()));
            }
            first = false;
            continue;
        }
        if line == "end_header" {
            break;
        }
        if line.starts_with("comment") || line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("format ") {
            format = Some(match rest {
                "ascii 1.0" => PlyFormat::Ascii,
                "binary_little_endian 1.0" => PlyFormat::BinaryLittleEndian,
                other => return Err(Error::Format(format!("unsupported ply format '{other}'"))),
            });
        } else if let Some(rest) = line.strip_prefix("element ") {
            let mut it = rest.split_whitespace();
            if it.next() != Some("vertex") || count.is_some() {
                return Err(Error::Format("ply must hold a single vertex element".into()));
            }
            count = Some(
                it.next()
                    .and_then(|t| t.parse::<usize>().ok())
                    .ok_or_else(|| Error::Format("bad ply vertex count".into()))?,
            );
        } else if let Some(rest) = line.strip_prefix("property ") {
            props.push(rest.to_string());
        } else {
            return Err(Error::Format(format!("unknown ply header line '{line}'")));
        }
    }
    let format = format.ok_or_else(|| Error::Format("ply header lacks a format line".into()))?;
    let count = count.ok_or_else(|| Error::Format("ply header lacks a vertex element".into()))?;
    let expect = ["float x", "float y", "float z", "float intensity"];
    if props != expect {
        return Err(Error::Format(format!(
            "ply must carry float x, y, z, intensity; found {props:?}"
        )));
    }
    Ok((format, count, off))
}
