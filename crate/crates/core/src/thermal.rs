//! Heat diffusion between particles and the temperature-driven viscosity
//! used by melting materials.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::SphContext;
use crate::math::Vec3;

/// Lowest viscosity a fully melted particle can reach.
pub const MELT_VISCOSITY_FLOOR: f64 = 1e-3;

/// Default largest neighbor count of a surface particle.
pub const SURFACE_NEIGHBOR_THRESHOLD: usize = 10;

/// Where the heat source `R` acts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeatSource {
    /// Particles with at most `surface_neighbors` current neighbors.
    Surface,
    Box { min: [f64; 3], max: [f64; 3] },
    None,
}

fn default_surface_neighbors() -> usize {
    SURFACE_NEIGHBOR_THRESHOLD
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalParams {
    pub diffusivity: f64,
    /// Heating rate `R` inside the source region, temperature per second.
    pub source_rate: f64,
    /// Softening factor `d` of `μ = μ0 e^(−dT)`.
    pub decay: f64,
    pub base_viscosity: f64,
    pub source: HeatSource,
    #[serde(default = "default_surface_neighbors")]
    pub surface_neighbors: usize,
}

impl ThermalParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.diffusivity >= 0.0 && self.diffusivity.is_finite()) {
            errs.push(format!("diffusivity must be non-negative, got {}", self.diffusivity));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            errs.push(format!("decay must be non-negative, got {}", self.decay));
        }
        if !(self.base_viscosity > 0.0 && self.base_viscosity.is_finite()) {
            errs.push(format!("base viscosity must be positive, got {}", self.base_viscosity));
        }
        if !self.source_rate.is_finite() {
            errs.push(format!("source rate must be finite, got {}", self.source_rate));
        }
        if let HeatSource::Box { min, max } = self.source {
            if (0..3).any(|k| !(min[k] <= max[k])) {
                errs.push(format!("heat source box min {min:?} exceeds max {max:?}"));
            }
        }
        errs
    }

    /// Whether a particle at `x` with `neighbor_count` neighbors is heated.
    pub fn in_source(&self, x: &Vec3, neighbor_count: usize) -> bool {
        match self.source {
            HeatSource::Surface => is_surface(neighbor_count, self.surface_neighbors),
            HeatSource::Box { min, max } => (0..3).all(|k| x[k] >= min[k] && x[k] <= max[k]),
            HeatSource::None => false,
        }
    }
}

pub fn is_surface(neighbor_count: usize, threshold: usize) -> bool {
    neighbor_count <= threshold
}

/// `μ = max(μ0 e^(−dT), MELT_VISCOSITY_FLOOR)`.
pub fn temperature_to_viscosity(temperature: f64, params: &ThermalParams) -> f64 {
    (params.base_viscosity * (-params.decay * temperature).exp()).max(MELT_VISCOSITY_FLOOR)
}

/// `dT_i/dt = D Σ_j (m_j / (ρ_j ρ_i)) (T_j − T_i) |∇W_ij|` over particles with
/// positive diffusivity; `density` is in kg/m³. Pairs use the mean of the two
/// diffusivities.
pub fn diffusion_rates(ctx: &SphContext, density: &[f64], temperature: &[f64], diffusivity: &[f64]) -> Vec<f64> {
    (0..ctx.len())
        .into_par_iter()
        .map(|i| {
            if diffusivity[i] <= 0.0 {
                return 0.0;
            }
            let mut rate = 0.0;
            for p in ctx.neighbors.particles.row(i) {
                let j = p.j as usize;
                if diffusivity[j] <= 0.0 {
                    continue;
                }
                let d = 0.5 * (diffusivity[i] + diffusivity[j]);
                rate += d * ctx.mass[j] / (density[j] * density[i]) * (temperature[j] - temperature[i]) * p.grad.norm();
            }
            rate
        })
        .collect()
}

/// Largest explicit step keeping `Δt · Σ_j D m_j/(ρ_j ρ_i) |∇W_ij| ≤ 0.5`
/// for every particle; infinite when nothing diffuses.
pub fn stable_dt(ctx: &SphContext, density: &[f64], diffusivity: &[f64]) -> f64 {
    let worst = (0..ctx.len())
        .into_par_iter()
        .map(|i| {
            if diffusivity[i] <= 0.0 {
                return 0.0;
            }
            ctx.neighbors
                .particles
                .row(i)
                .iter()
                .filter(|p| diffusivity[p.j as usize] > 0.0)
                .map(|p| {
                    let j = p.j as usize;
                    0.5 * (diffusivity[i] + diffusivity[j]) * ctx.mass[j] / (density[j] * density[i]) * p.grad.norm()
                })
                .sum::<f64>()
        })
        .reduce(|| 0.0, f64::max);
    if worst > 0.0 {
        0.5 / worst
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiffusionReport {
    pub max_change: f64,
    /// Set when some `|ΔT|` exceeded the configured bound.
    pub unstable: bool,
}

/// One explicit Euler diffusion step, double-buffered.
pub fn diffuse_step(
    ctx: &SphContext,
    density: &[f64],
    temperature: &[f64],
    diffusivity: &[f64],
    dt: f64,
    change_bound: f64,
) -> (Vec<f64>, DiffusionReport) {
    let rate = diffusion_rates(ctx, density, temperature, diffusivity);
    let next: Vec<f64> = temperature.iter().zip(&rate).map(|(t, r)| t + dt * r).collect();
    let max_change = rate.iter().map(|r| (dt * r).abs()).fold(0.0, f64::max);
    (
        next,
        DiffusionReport {
            max_change,
            unstable: max_change > change_bound,
        },
    )
}

/// Adds `R Δt` to every particle flagged in `in_source`.
pub fn apply_sources(temperature: &mut [f64], in_source: &[bool], rate: &[f64], dt: f64) {
    temperature
        .par_iter_mut()
        .zip(in_source)
        .zip(rate)
        .for_each(|((t, &heat), &r)| {
            if heat {
                *t += r * dt;
            }
        });
}
