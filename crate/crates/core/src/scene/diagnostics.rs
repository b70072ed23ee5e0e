//! Per-step diagnostics rows and their CSV stream.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::FrameError;

pub const CSV_HEADER: &str = "frame,time,dt,max_mu,max_strain_rate,density_err,cg_iters,kinetic_energy";

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiagnosticsRow {
    /// Index of the frame the step advances toward.
    pub frame: u32,
    /// Simulation time at the end of the step.
    pub time: f64,
    pub dt: f64,
    pub max_mu: f64,
    pub max_strain_rate: f64,
    pub density_err: f64,
    pub cg_iters: usize,
    pub kinetic_energy: f64,
}

impl DiagnosticsRow {
    pub fn to_csv(&self) -> String {
        // `{:e}`-free Display keeps shortest round-trip digits.
        format!(
            "{},{},{},{},{},{},{},{}",
            self.frame, self.time, self.dt, self.max_mu, self.max_strain_rate, self.density_err, self.cg_iters, self.kinetic_energy
        )
    }

    pub fn from_csv(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return None;
        }
        Some(Self {
            frame: f[0].parse().ok()?,
            time: f[1].parse().ok()?,
            dt: f[2].parse().ok()?,
            max_mu: f[3].parse().ok()?,
            max_strain_rate: f[4].parse().ok()?,
            density_err: f[5].parse().ok()?,
            cg_iters: f[6].parse().ok()?,
            kinetic_energy: f[7].parse().ok()?,
        })
    }
}

pub struct DiagnosticsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path) -> Result<Self, FrameError> {
        let io = |source| FrameError::Io { path: path.to_path_buf(), source };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(out, "{CSV_HEADER}").map_err(io)?;
        Ok(Self { path: path.to_path_buf(), out })
    }

    pub fn push(&mut self, row: &DiagnosticsRow) -> Result<(), FrameError> {
        writeln!(self.out, "{}", row.to_csv()).map_err(|source| FrameError::Io { path: self.path.clone(), source })
    }

    pub fn flush(&mut self) -> Result<(), FrameError> {
        self.out.flush().map_err(|source| FrameError::Io { path: self.path.clone(), source })
    }
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRow>, FrameError> {
    let io = |source| FrameError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if n == 0 {
            if line.trim() != CSV_HEADER {
                return Err(FrameError::Malformed { path: path.to_path_buf(), message: "unexpected header".into() });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push(DiagnosticsRow::from_csv(&line).ok_or_else(|| FrameError::Malformed {
            path: path.to_path_buf(),
            message: format!("bad row {}", n + 1),
        })?);
    }
    Ok(rows)
}
