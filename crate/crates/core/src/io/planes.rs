//! Float-plane images: the interchange format for range scans and camera
//! depth, where 8-bit PNG would destroy the signal.
//!
//! A file is a fixed 64-byte ASCII header followed by one 32-bit
//! little-endian float plane per listed channel, row-major:
//!
//! ```text
//! FPLANES1 rows=32 cols=512 planes=DIRA
//! ```
//!
//! padded with spaces to byte 62 and terminated by a newline at byte 63.
//! Channel letters: `D` range/depth, `I` intensity, `R` ray-drop
//! probability, `A` alpha. A lidar sweep stores `DIRA`; camera depth
//! stores `DA` (depth still α-weighted, alpha alongside for
//! renormalization).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lidar::RangeImage;
use crate::raster::FrameBuffer;

const MAGIC: &str = "FPLANES1";
pub const HEADER_LEN: usize = 64;
const CHANNELS: &str = "DIRA";

/// A parsed plane file: grid shape plus the channels in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSet {
    pub rows: usize,
    pub cols: usize,
    planes: Vec<(char, Vec<f32>)>,
}

impl PlaneSet {
    pub fn get(&self, channel: char) -> Option<&[f32]> {
        self.planes
            .iter()
            .find(|(c, _)| *c == channel)
            .map(|(_, p)| p.as_slice())
    }

    /// Channel letters in file order.
    pub fn channels(&self) -> String {
        self.planes.iter().map(|(c, _)| *c).collect()
    }

    fn require(&self, channel: char) -> Result<&[f32]> {
        self.get(channel)
            .ok_or_else(|| Error::Format(format!("plane file lacks channel '{channel}'")))
    }
}

pub fn write_planes(
    path: &Path,
    rows: usize,
    cols: usize,
    planes: &[(char, &[f32])],
) -> Result<()> {
    super::atomic_write(path, &serialize_planes(rows, cols, planes)?)
}

pub fn read_planes(path: &Path) -> Result<PlaneSet> {
    parse_planes(&fs::read(path)?)
}

pub fn serialize_planes(rows: usize, cols: usize, planes: &[(char, &[f32])]) -> Result<Vec<u8>> {
    if planes.is_empty() {
        return Err(Error::Contract("plane file needs at least one channel".into()));
    }
    let mut seen = String::new();
    for (c, data) in planes {
        if !CHANNELS.contains(*c) {
            return Err(Error::Contract(format!("unknown plane channel '{c}'")));
        }
        if seen.contains(*c) {
            return Err(Error::Contract(format!("duplicate plane channel '{c}'")));
        }
        seen.push(*c);
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "plane '{c}' holds {} values for a {rows}x{cols} grid",
                data.len()
            )));
        }
    }
    let header = format!("{MAGIC} rows={rows} cols={cols} planes={seen}");
    if header.len() > HEADER_LEN - 1 {
        return Err(Error::Contract("plane header does not fit in 64 bytes".into()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * rows * cols * planes.len());
    out.extend_from_slice(header.as_bytes());
    out.resize(HEADER_LEN - 1, b' ');
    out.push(b'\n');
    for (_, data) in planes {
        for v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_planes(bytes: &[u8]) -> Result<PlaneSet> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("plane file shorter than its header".into()));
    }
    let header = std::str::from_utf8(&bytes[..HEADER_LEN])
        .map_err(|_| Error::Format("plane header is not ASCII".into()))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some(MAGIC) {
        return Err(Error::Format("not a plane file (bad magic)".into()));
    }
    let (mut rows, mut cols, mut chans) = (None, None, None);
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad plane header token '{tok}'")))?;
        match key {
            "rows" => rows = Some(parse_dim(key, value)?),
            "cols" => cols = Some(parse_dim(key, value)?),
            "planes" => chans = Some(value.to_string()),
            _ => return Err(Error::Format(format!("unknown plane header key '{key}'"))),
        }
    }
    let (rows, cols, chans) = match (rows, cols, chans) {
        (Some(r), Some(c), Some(p)) => (r, c, p),
        _ => return Err(Error::Format("plane header misses rows/cols/planes".into())),
    };
    if chans.is_empty() || chans.chars().any(|c| !CHANNELS.contains(c)) {
        return Err(Error::Format(format!("bad plane list '{chans}'")));
    }
    let plane_len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("plane grid overflows".into()))?;
    let expect = HEADER_LEN + 4 * plane_len * chans.chars().count();
    if bytes.len() != expect {
        return Err(Error::Format(format!(
            "plane file holds {} bytes, header implies {expect}",
            bytes.len()
        )));
    }
    let mut planes = Vec::new();
    let mut off = HEADER_LEN;
    for c in chans.chars() {
        if planes.iter().any(|(p, _)| *p == c) {
            return Err(Error::Format(format!("duplicate plane channel '{c}'")));
        }
        let mut data = Vec::with_capacity(plane_len);
        for _ in 0..plane_len {
            data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        planes.push((c, data));
    }
    Ok(PlaneSet { rows, cols, planes })
}

fn parse_dim(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::Format(format!("bad plane header value {key}={value}")))
}

fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Lidar sweep → `DIRA` planes (f32, lossy in the 53→24 bit sense).
pub fn write_range_image(path: &Path, img: &RangeImage) -> Result<()> {
    let d = narrow(&img.range);
    let i = narrow(&img.intensity);
    let r = narrow(&img.raydrop);
    let a = narrow(&img.alpha);
    write_planes(
        path,
        img.rows,
        img.cols,
        &[('D', &d), ('I', &i), ('R', &r), ('A', &a)],
    )
}

/// `DIRA` planes → lidar sweep. Contributor counts are a render diagnostic,
/// not part of the format; they come back zeroed.
pub fn read_range_image(path: &Path) -> Result<RangeImage> {
    let ps = read_planes(path)?;
    range_image_from_planes(&ps)
}

pub fn range_image_from_planes(ps: &PlaneSet) -> Result<RangeImage> {
    Ok(RangeImage {
        rows: ps.rows,
        cols: ps.cols,
        range: widen(ps.require('D')?),
        intensity: widen(ps.require('I')?),
        raydrop: widen(ps.require('R')?),
        alpha: widen(ps.require('A')?),
        n_contrib: vec![0; ps.rows * ps.cols],
    })
}

/// Camera depth channel → `DA` planes (depth as composited, α-weighted;
/// divide by alpha to renormalize).
pub fn write_camera_depth(path: &Path, fb: &FrameBuffer) -> Result<()> {
    let d = narrow(&fb.depth);
    let a = narrow(&fb.alpha);
    write_planes(path, fb.height, fb.width, &[('D', &d), ('A', &a)])
}
