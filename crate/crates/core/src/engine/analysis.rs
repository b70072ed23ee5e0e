//! Whole-state measurements used by diagnostics and scene checks.

use crate::math::Vec3;
use crate::neighbors::build_grid;

pub fn kinetic_energy(mass: &[f64], velocity: &[Vec3]) -> f64 {
    mass.iter().zip(velocity).map(|(m, v)| 0.5 * m * v.norm_squared()).sum()
}

/// Labels each point with the index of its connected component, where two
/// points connect when closer than `radius`. Labels are dense and ordered by
/// each component's lowest point index.
pub fn connected_components(positions: &[Vec3], radius: f64) -> Vec<usize> {
    let n = positions.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    if let Ok(grid) = build_grid(positions, radius) {
        for i in 0..n {
            let mut near = Vec::new();
            grid.for_each_within(&positions[i], radius, |j, _| near.push(j));
            for j in near {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = vec![0; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        out[i] = label[r];
    }
    out
}
