use crate::math::{Kernel, Vec3};
use crate::neighbors::Neighborhoods;

/// Read-only per-step view shared by the density, pressure, viscosity and
/// thermal stages.
///
/// Boundary samples act as particles of mass `rest_density * boundary_volume`
/// moving with `boundary_velocity`.
#[derive(Clone, Copy)]
pub struct SphContext<'a> {
    pub kernel: &'a Kernel,
    pub rest_density: f64,
    pub mass: &'a [f64],
    pub neighbors: &'a Neighborhoods,
    pub boundary_volume: &'a [f64],
    pub boundary_velocity: &'a [Vec3],
}

impl<'a> SphContext<'a> {
    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Rest volume `m_i / ρ0` of a particle.
    pub fn volume(&self, i: usize) -> f64 {
        self.mass[i] / self.rest_density
    }
}
