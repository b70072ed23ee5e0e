//! Strain rates, effective viscosity laws and the implicit viscous solve.

mod implicit;
mod models;

pub use implicit::{
    boundary_coefficient, pair_viscosity, viscous_acceleration, viscous_apply, ImplicitViscosity, ViscousSolveConfig,
    ViscousSolveReport,
};
pub use models::{viscosity_curve, ViscosityModel, STRAIN_RATE_FLOOR, VISCOSITY_CAP, VISCOSITY_MIN};

use rayon::prelude::*;

use crate::context::SphContext;
use crate::math::{frobenius_norm, symmetric_part, Mat3, Vec3};

/// `∇v_i = (1/ρ_i) Σ_j m_j (v_j − v_i) ∇W_ijᵀ`. Boundary samples take part
/// with their pseudo-mass and prescribed velocity.
pub fn velocity_gradient(ctx: &SphContext, density: &[f64], velocity: &[Vec3], i: usize) -> Mat3 {
    let vi = velocity[i];
    let mut g = Mat3::zeros();
    for p in ctx.neighbors.particles.row(i) {
        let j = p.j as usize;
        g += (velocity[j] - vi) * (p.grad * ctx.mass[j]).transpose();
    }
    for p in ctx.neighbors.boundary.row(i) {
        let b = p.j as usize;
        let mb = ctx.rest_density * ctx.boundary_volume[b];
        g += (ctx.boundary_velocity[b] - vi) * (p.grad * mb).transpose();
    }
    g / density[i]
}

/// `ε̇ = ½(∇v + ∇vᵀ)`.
pub fn strain_rate(grad_v: &Mat3) -> Mat3 {
    symmetric_part(grad_v)
}

/// Per-particle strain-rate tensors and their Frobenius norms.
#[derive(Clone, Debug, Default)]
pub struct StrainRateField {
    pub tensor: Vec<Mat3>,
    pub norm: Vec<f64>,
}

impl StrainRateField {
    pub fn compute(ctx: &SphContext, density: &[f64], velocity: &[Vec3]) -> Self {
        let tensor: Vec<Mat3> = (0..ctx.len())
            .into_par_iter()
            .map(|i| strain_rate(&velocity_gradient(ctx, density, velocity, i)))
            .collect();
        let norm = tensor.iter().map(frobenius_norm).collect();
        Self { tensor, norm }
    }

    pub fn max_norm(&self) -> f64 {
        self.norm.iter().copied().fold(0.0, f64::max)
    }
}
