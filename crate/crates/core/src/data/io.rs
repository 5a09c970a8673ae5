//! Point-cloud file formats.
//!
//! XYZ: ASCII, one point per line, three floats separated by single
//! spaces, no header. Floats are written in shortest round-trip form,
//! so read(write(c)) == c exactly. The reader accepts arbitrary
//! whitespace and blank lines.
//!
//! PLY: binary little-endian 1.0, one `vertex` element with float
//! x/y/z properties (32-bit, for viewer compatibility).

use std::io::Write;
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut text = String::with_capacity(cloud.len() * 24);
    for p in cloud.points() {
        text.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("expected 3 coordinates, got {}", toks.len()),
            });
        }
        let mut p = [0.0; 3];
        for (a, tok) in toks.iter().enumerate() {
            p[a] = tok.parse().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("bad float '{tok}': {e}"),
            })?;
        }
        pts.push(p);
    }
    if pts.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: "empty cloud".into(),
        });
    }
    PointCloud::new(pts)
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut buf = Vec::with_capacity(128 + cloud.len() * 12);
    buf.extend_from_slice(b"ply\n");
    buf.extend_from_slice(b"format binary_little_endian 1.0\n");
    buf.extend_from_slice(format!("element vertex {}\n", cloud.len()).as_bytes());
    buf.extend_from_slice(b"property float x\nproperty float y\nproperty float z\n");
    buf.extend_from_slice(b"end_header\n");
    for p in cloud.points() {
        for a in 0..3 {
            buf.write_all(&(p[a] as f32).to_le_bytes())
                .expect("in-memory write");
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}
