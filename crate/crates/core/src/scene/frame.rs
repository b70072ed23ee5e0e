//! Per-frame particle snapshots.
//!
//! Binary layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `NNS1` |
//! | 4 | `u32` frame index |
//! | 8 | `f64` simulation time |
//! | 4 | `u32` particle count `n` |
//! | 12n | `f32` positions |
//! | 12n | `f32` velocities |
//! | 4n | `f32` temperatures |
//! | 4n | `f32` effective viscosities |
//! | 4n | `f32` plastic strain norms |
//! | 2n | `u16` material ids |

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::FrameError;

pub const MAGIC: &[u8; 4] = b"NNS1";
pub const HEADER_SIZE: usize = 20;
/// Bytes per particle.
pub const RECORD_SIZE: usize = 38;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameRecord {
    pub frame: u32,
    pub time: f64,
    pub positions: Vec<[f32; 3]>,
    pub velocities: Vec<[f32; 3]>,
    pub temperature: Vec<f32>,
    pub viscosity: Vec<f32>,
    pub plastic_strain: Vec<f32>,
    pub material: Vec<u16>,
}

impl FrameRecord {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn consistent(&self) -> bool {
        let n = self.len();
        self.velocities.len() == n
            && self.temperature.len() == n
            && self.viscosity.len() == n
            && self.plastic_strain.len() == n
            && self.material.len() == n
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        assert!(self.consistent(), "frame arrays must share one length");
        let n = self.len();
        let mut out = Vec::with_capacity(HEADER_SIZE + n * RECORD_SIZE);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.frame.to_le_bytes());
        out.extend_from_slice(&self.time.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for v in self.positions.iter().chain(&self.velocities) {
            for c in v {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        for x in self.temperature.iter().chain(&self.viscosity).chain(&self.plastic_strain) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for m in &self.material {
            out.extend_from_slice(&m.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < HEADER_SIZE {
            return Err(format!("{} bytes is shorter than the header", bytes.len()));
        }
        if &bytes[..4] != MAGIC {
            return Err("bad magic".to_string());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let frame = u32_at(4);
        let time = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let n = u32_at(16) as usize;
        let expect = HEADER_SIZE + n * RECORD_SIZE;
        if bytes.len() != expect {
            return Err(format!("expected {expect} bytes for {n} particles, found {}", bytes.len()));
        }
        let mut off = HEADER_SIZE;
        let mut f32s = |count: usize| {
            let v: Vec<f32> = bytes[off..off + 4 * count]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            off += 4 * count;
            v
        };
        let triples = |v: Vec<f32>| v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect::<Vec<_>>();
        let positions = triples(f32s(3 * n));
        let velocities = triples(f32s(3 * n));
        let temperature = f32s(n);
        let viscosity = f32s(n);
        let plastic_strain = f32s(n);
        let start = HEADER_SIZE + 36 * n;
        let material = bytes[start..]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Ok(Self { frame, time, positions, velocities, temperature, viscosity, plastic_strain, material })
    }

    /// ASCII PLY vertex list with every per-particle attribute.
    pub fn to_ply(&self) -> String {
        let mut s = String::new();
        s.push_str("ply\nformat ascii 1.0\n");
        s.push_str(&format!("comment frame {} time {}\n", self.frame, self.time));
        s.push_str(&format!("element vertex {}\n", self.len()));
        for p in ["x", "y", "z", "vx", "vy", "vz", "temperature", "viscosity", "plastic_strain"] {
            s.push_str(&format!("property float {p}\n"));
        }
        s.push_str("property ushort material\nend_header\n");
        for i in 0..self.len() {
            let p = self.positions[i];
            let v = self.velocities[i];
            s.push_str(&format!(
                "{} {} {} {} {} {} {} {} {} {}\n",
                p[0], p[1], p[2], v[0], v[1], v[2], self.temperature[i], self.viscosity[i], self.plastic_strain[i], self.material[i]
            ));
        }
        s
    }
}

pub fn frame_file_name(frame: u32, extension: &str) -> String {
    format!("frame_{frame:05}.{extension}")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FrameError> {
    let io = |source| FrameError::Io { path: path.to_path_buf(), source };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(io)?;
    w.flush().map_err(io)
}

/// Writes `frame_NNNNN.nns` into `dir`.
pub fn write_frame(record: &FrameRecord, dir: &Path) -> Result<PathBuf, FrameError> {
    let path = dir.join(frame_file_name(record.frame, "nns"));
    write_file(&path, &record.to_bytes())?;
    Ok(path)
}

/// Writes `frame_NNNNN.ply` into `dir`.
pub fn write_frame_ply(record: &FrameRecord, dir: &Path) -> Result<PathBuf, FrameError> {
    let path = dir.join(frame_file_name(record.frame, "ply"));
    write_file(&path, record.to_ply().as_bytes())?;
    Ok(path)
}

pub fn read_frame(path: &Path) -> Result<FrameRecord, FrameError> {
    let bytes = std::fs::read(path).map_err(|source| FrameError::Io { path: path.to_path_buf(), source })?;
    FrameRecord::from_bytes(&bytes).map_err(|message| FrameError::Malformed { path: path.to_path_buf(), message })
}
