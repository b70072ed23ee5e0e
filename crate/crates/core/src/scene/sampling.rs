//! Lattice sampling of bodies and boundary geometry.

use std::path::Path;

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::SceneError;
use crate::math::Vec3;
use crate::scene::config::{BoundaryShape, Shape};

/// Sampled particles of one body; every particle carries `spacing³`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledBody {
    pub positions: Vec<Vec3>,
    pub volumes: Vec<f64>,
}

fn v3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn counts(min: &Vec3, max: &Vec3, spacing: f64) -> [usize; 3] {
    // Tolerance absorbs round-off when the extent is a multiple of spacing.
    [0, 1, 2].map(|a| (((max[a] - min[a]) / spacing) + 1e-9).floor().max(0.0) as usize)
}

/// Cell-centered lattice points `min + (k + ½) s` inside `[min, max]`.
pub fn box_lattice(min: &Vec3, max: &Vec3, spacing: f64) -> Vec<Vec3> {
    let [nx, ny, nz] = counts(min, max, spacing);
    let mut out = Vec::with_capacity(nx * ny * nz);
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                out.push(min + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * spacing);
            }
        }
    }
    out
}

/// Cell-centered lattice points inside the sphere.
pub fn sphere_lattice(center: &Vec3, radius: f64, spacing: f64) -> Vec<Vec3> {
    let n = (radius / spacing).ceil() as i64 + 1;
    let mut out = Vec::new();
    for i in -n..n {
        for j in -n..n {
            for k in -n..n {
                let d = Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * spacing;
                if d.norm() <= radius {
                    out.push(center + d);
                }
            }
        }
    }
    out
}

/// Reads whitespace-separated `x y z` rows; blank lines and `#` comments are
/// skipped.
pub fn read_point_cloud(path: &Path) -> Result<Vec<Vec3>, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        match vals {
            Ok(v) if v.len() == 3 && v.iter().all(|x| x.is_finite()) => out.push(Vec3::new(v[0], v[1], v[2])),
            _ => {
                return Err(SceneError::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    column: 1,
                    message: "expected three finite numbers".to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Fills `shape` with a regular lattice. `base_dir` resolves relative
/// point-cloud paths. Errors with `EmptyBody` when nothing fits.
pub fn sample_body(shape: &Shape, spacing: f64, base_dir: &Path, label: &str) -> Result<SampledBody, SceneError> {
    let positions = match shape {
        Shape::Box { min, max } => box_lattice(&v3(min), &v3(max), spacing),
        Shape::Sphere { center, radius } => sphere_lattice(&v3(center), *radius, spacing),
        Shape::PointCloud { path, offset } => {
            let shift = v3(offset);
            read_point_cloud(&base_dir.join(path))?.into_iter().map(|p| p + shift).collect()
        }
    };
    if positions.is_empty() {
        return Err(SceneError::EmptyBody {
            body: label.to_string(),
            spacing,
        });
    }
    let volumes = vec![spacing * spacing * spacing; positions.len()];
    Ok(SampledBody { positions, volumes })
}

/// Perturbs every coordinate uniformly by up to `amount · spacing`.
pub fn jitter(positions: &mut [Vec3], amount: f64, spacing: f64, seed: u64) {
    if amount <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = amount * spacing;
    for p in positions {
        *p += Vec3::new(rng.random_range(-a..a), rng.random_range(-a..a), rng.random_range(-a..a));
    }
}

/// Regular grid over a rectangle spanned by `u` and `v` from `origin`, with
/// nodes on both ends of each edge.
fn face(origin: Vec3, u: Vec3, v: Vec3, spacing: f64, out: &mut Vec<Vec3>) {
    let nu = (u.norm() / spacing).round().max(1.0) as usize;
    let nv = (v.norm() / spacing).round().max(1.0) as usize;
    for i in 0..=nu {
        for j in 0..=nv {
            out.push(origin + u * (i as f64 / nu as f64) + v * (j as f64 / nv as f64));
        }
    }
}

/// Single-layer walls half a spacing outside the box faces; the top (+y)
/// face is omitted when `open_top`.
pub fn container_samples(min: &Vec3, max: &Vec3, open_top: bool, spacing: f64) -> Vec<Vec3> {
    let lo = min - Vec3::repeat(0.5 * spacing);
    let hi = max + Vec3::repeat(0.5 * spacing);
    let d = hi - lo;
    let (ex, ey, ez) = (Vec3::new(d.x, 0.0, 0.0), Vec3::new(0.0, d.y, 0.0), Vec3::new(0.0, 0.0, d.z));
    let mut out = Vec::new();
    face(lo, ex, ez, spacing, &mut out);
    if !open_top {
        face(lo + ey, ex, ez, spacing, &mut out);
    }
    face(lo, ey, ez, spacing, &mut out);
    face(lo + ex, ey, ez, spacing, &mut out);
    face(lo, ex, ey, spacing, &mut out);
    face(lo + ez, ex, ey, spacing, &mut out);
    dedup(out, spacing)
}

/// Removes samples closer than a tenth of a spacing to an earlier one
/// (shared face edges).
fn dedup(points: Vec<Vec3>, spacing: f64) -> Vec<Vec3> {
    let q = 0.1 * spacing;
    let key = |p: &Vec3| [p.x, p.y, p.z].map(|c| (c / q).round() as i64);
    let mut seen = std::collections::HashSet::new();
    points.into_iter().filter(|p| seen.insert(key(p))).collect()
}

/// Filled lattice of a box rotated about its center by an axis-angle vector.
pub fn slab_samples(min: &Vec3, max: &Vec3, rotation: &Vec3, spacing: f64) -> Vec<Vec3> {
    let c = (min + max) * 0.5;
    let r = Rotation3::new(*rotation);
    box_lattice(min, max, spacing).into_iter().map(|p| c + r * (p - c)).collect()
}

pub fn boundary_samples(shape: &BoundaryShape, spacing: f64) -> Vec<Vec3> {
    match shape {
        BoundaryShape::Container { min, max, open_top } => container_samples(&v3(min), &v3(max), *open_top, spacing),
        BoundaryShape::Slab { min, max, rotation } | BoundaryShape::Divider { min, max, rotation } => {
            slab_samples(&v3(min), &v3(max), &v3(rotation), spacing)
        }
    }
}

/// Near-uniform points on a sphere surface (golden-angle spiral) with about
/// one sample per `spacing²` of area.
pub fn sphere_shell(center: &Vec3, radius: f64, spacing: f64) -> Vec<Vec3> {
    let n = ((4.0 * std::f64::consts::PI * radius * radius) / (spacing * spacing)).ceil().max(12.0) as usize;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let y = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * k as f64;
            center + Vec3::new(r * phi.cos(), y, r * phi.sin()) * radius
        })
        .collect()
}
