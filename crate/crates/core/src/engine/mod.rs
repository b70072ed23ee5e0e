//! The simulation world and its fixed per-step pipeline.
//!
//! Each step runs, in order: boundary placement, neighbor search, density
//! and DFSPH factors, time step selection, heat transfer, elastic and body
//! forces, the divergence-free solve, strain rates and effective viscosity,
//! the implicit viscous solve, the constant-density solve, position
//! integration and finally the rigid sphere update.

mod analysis;
mod rigid;

use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;

pub use analysis::{connected_components, kinetic_energy};
pub use rigid::{Contact, RigidSample, RigidSphere};

use crate::context::SphContext;
use crate::elastoplastic::{ElasticParams, ElastoPlastic};
use crate::error::{SceneError, SimulationError};
use crate::math::{is_finite_vec, Kernel, Mat3, Vec3};
use crate::neighbors::{build_grid, Neighborhoods, RestNeighborhood, SpatialGrid};
use crate::pressure::{
    boundary_impulses, boundary_pseudo_volumes, solve_constant_density, solve_divergence_free, DfsphState,
    PressureSolveReport,
};
use crate::scene::config::{body_label, BoundaryShape, Motion, SceneConfig, SolverConfig};
use crate::scene::sampling::{boundary_samples, jitter, sample_body, sphere_shell};
use crate::scene::FrameRecord;
use crate::thermal::{apply_sources, diffuse_step, stable_dt, temperature_to_viscosity, DiffusionReport, ThermalParams};
use crate::viscosity::{boundary_coefficient, ImplicitViscosity, StrainRateField, ViscosityModel, ViscousSolveReport};

#[derive(Clone, Debug)]
pub struct Material {
    pub name: String,
    pub viscosity: ViscosityModel,
    pub elastic: Option<ElasticParams>,
    pub thermal: Option<ThermalParams>,
}

/// A static or scripted group of boundary samples.
#[derive(Clone, Debug)]
pub struct BoundaryObject {
    pub name: String,
    pub is_divider: bool,
    pub motion: Motion,
    /// Sample positions at `t = 0`.
    pub initial: Vec<Vec3>,
    pub samples: Range<usize>,
}

/// Everything one step measured.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    /// Time at the end of the step.
    pub time: f64,
    pub dt: f64,
    pub divergence: PressureSolveReport,
    pub density: PressureSolveReport,
    pub viscous: ViscousSolveReport,
    pub thermal: DiffusionReport,
    pub max_mu: f64,
    pub max_strain_rate: f64,
    pub kinetic_energy: f64,
}

/// Non-fatal solver events accumulated over a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolverWarnings {
    pub divergence_unconverged: usize,
    pub density_unconverged: usize,
    pub viscous_unconverged: usize,
    pub thermal_unstable: usize,
    pub degenerate_rotations: usize,
    /// Particles whose plastic strain has reached the plastic limit.
    pub yield_exceeded: usize,
}

pub struct World {
    pub kernel: Kernel,
    pub rest_density: f64,
    pub gravity: Vec3,
    pub solver: SolverConfig,
    pub materials: Vec<Material>,

    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub mass: Vec<f64>,
    pub material: Vec<u16>,
    pub temperature: Vec<f64>,
    /// Effective viscosity used in the last step (initially at rest).
    pub viscosity: Vec<f64>,
    pub strain_rate: Vec<f64>,
    /// Normalized density `ρ/ρ0` from the last step.
    pub density: Vec<f64>,
    diffusivity: Vec<f64>,
    /// Grid over `boundary_positions`; rebuilt only when samples move.
    boundary_grid: Option<SpatialGrid>,

    pub elasto: ElastoPlastic,
    pub boundaries: Vec<BoundaryObject>,
    pub spheres: Vec<RigidSphere>,
    pub boundary_positions: Vec<Vec3>,
    pub boundary_velocity: Vec<Vec3>,
    pub boundary_volume: Vec<f64>,
    pub neighbors: Neighborhoods,

    pub time: f64,
    pub steps: u64,
    /// Last frame fully written; reported on divergence.
    pub last_good_frame: u32,
    pub warnings: SolverWarnings,
}

fn v3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// Per-body jitter stream derived from the run seed.
fn body_seed(seed: u64, body: usize) -> u64 {
    seed ^ (body as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl World {
    /// Samples every body, boundary and sphere of a validated scene.
    /// `base_dir` resolves relative point-cloud paths.
    pub fn from_scene(cfg: &SceneConfig, base_dir: &Path, seed: u64) -> Result<Self, SceneError> {
        cfg.validate()?;
        let kernel = Kernel::cubic_3d(cfg.support_radius()).map_err(|e| SceneError::Validation(vec![e.to_string()]))?;
        let rho0 = cfg.rest_density;
        let materials: Vec<Material> = cfg
            .materials
            .iter()
            .map(|(name, m)| Material {
                name: name.clone(),
                viscosity: m.viscosity.clone(),
                elastic: m.elastic,
                thermal: m.thermal,
            })
            .collect();

        let mut positions = Vec::new();
        let mut velocities = Vec::new();
        let mut mass = Vec::new();
        let mut material = Vec::new();
        let mut temperature = Vec::new();
        let mut volumes = Vec::new();
        for (k, body) in cfg.bodies.iter().enumerate() {
            let label = body_label(body, k);
            let spacing = body.spacing.unwrap_or(cfg.particle_spacing);
            let mut sampled = sample_body(&body.shape, spacing, base_dir, &label)?;
            jitter(&mut sampled.positions, body.jitter, spacing, body_seed(seed, k));
            let id = cfg.material_id(&body.material).expect("validated material");
            for (p, vol) in sampled.positions.into_iter().zip(sampled.volumes) {
                positions.push(p);
                velocities.push(v3(&body.velocity));
                mass.push(rho0 * vol);
                volumes.push(vol);
                material.push(id);
                temperature.push(body.temperature);
            }
        }
        let n = positions.len();

        let mut rest = RestNeighborhood::new(n);
        for (id, m) in materials.iter().enumerate() {
            if m.elastic.is_none() {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&i| material[i] as usize == id).collect();
            rest.capture_group(id, &members, &positions, &volumes, &kernel)
                .map_err(|e| SceneError::Validation(vec![format!("material {}: {e}", m.name)]))?;
        }
        let params = material.iter().map(|&id| materials[id as usize].elastic).collect();
        let elasto = ElastoPlastic::new(rest, params);

        let diffusivity = material
            .iter()
            .map(|&id| materials[id as usize].thermal.as_ref().map_or(0.0, |t| t.diffusivity))
            .collect();

        let mut boundary_positions = Vec::new();
        let mut boundary_volume = Vec::new();
        let mut boundaries = Vec::new();
        for (k, b) in cfg.boundaries.iter().enumerate() {
            let samples = boundary_samples(&b.shape, cfg.particle_spacing);
            let start = boundary_positions.len();
            boundary_volume.extend(boundary_pseudo_volumes(&samples, &kernel, cfg.particle_spacing));
            boundary_positions.extend_from_slice(&samples);
            boundaries.push(BoundaryObject {
                name: b.name.clone().unwrap_or_else(|| format!("boundary {k}")),
                is_divider: matches!(b.shape, BoundaryShape::Divider { .. }),
                motion: b.motion.clone(),
                initial: samples,
                samples: start..boundary_positions.len(),
            });
        }
        let mut spheres = Vec::new();
        for (k, s) in cfg.rigid_spheres.iter().enumerate() {
            let center = v3(&s.center);
            let shell: Vec<Vec3> = sphere_shell(&Vec3::zeros(), s.radius, cfg.particle_spacing);
            let start = boundary_positions.len();
            boundary_volume.extend(boundary_pseudo_volumes(&shell, &kernel, cfg.particle_spacing));
            boundary_positions.extend(shell.iter().map(|o| center + o));
            spheres.push(RigidSphere {
                name: s.name.clone().unwrap_or_else(|| format!("sphere {k}")),
                center,
                radius: s.radius,
                mass: s.mass,
                velocity: v3(&s.velocity),
                mode: s.mode,
                shell,
                samples: start..boundary_positions.len(),
                contact: None,
                trace: vec![RigidSample { time: 0.0, center, velocity: v3(&s.velocity) }],
            });
        }
        let nb = boundary_positions.len();

        let viscosity = (0..n)
            .map(|i| {
                let m = &materials[material[i] as usize];
                match &m.thermal {
                    Some(t) => temperature_to_viscosity(temperature[i], t),
                    None => m.viscosity.effective_viscosity(0.0),
                }
            })
            .collect();

        Ok(Self {
            kernel,
            rest_density: rho0,
            gravity: v3(&cfg.gravity),
            solver: cfg.solver,
            materials,
            positions,
            velocities,
            mass,
            material,
            temperature,
            viscosity,
            strain_rate: vec![0.0; n],
            density: vec![1.0; n],
            diffusivity,
            boundary_grid: None,
            elasto,
            boundaries,
            spheres,
            boundary_positions,
            boundary_velocity: vec![Vec3::zeros(); nb],
            boundary_volume,
            neighbors: Neighborhoods::empty(n),
            time: 0.0,
            steps: 0,
            last_good_frame: 0,
            warnings: SolverWarnings::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Indices of particles made of material `name`.
    pub fn particles_of(&self, name: &str) -> Vec<usize> {
        match self.materials.iter().position(|m| m.name == name) {
            Some(id) => (0..self.len()).filter(|&i| self.material[i] as usize == id).collect(),
            None => Vec::new(),
        }
    }

    fn diverged(&self, reason: impl Into<String>) -> SimulationError {
        SimulationError::Diverged { time: self.time, last_good_frame: self.last_good_frame, reason: reason.into() }
    }

    /// Moves scripted boundaries and sphere shells to their placement at `t`.
    fn place_boundaries(&mut self, t: f64) {
        for b in &self.boundaries {
            let d = v3(&b.motion.displacement(t));
            let v = v3(&b.motion.velocity(t));
            for (k, idx) in b.samples.clone().enumerate() {
                self.boundary_positions[idx] = b.initial[k] + d;
                self.boundary_velocity[idx] = v;
            }
        }
        for s in &self.spheres {
            for (k, idx) in s.samples.clone().enumerate() {
                self.boundary_positions[idx] = s.center + s.shell[k];
                self.boundary_velocity[idx] = s.velocity;
            }
        }
    }

    fn max_speed(&self) -> f64 {
        let fluid = self.velocities.par_iter().map(|v| v.norm()).reduce(|| 0.0, f64::max);
        let wall = self.boundary_velocity.iter().map(|v| v.norm()).fold(0.0, f64::max);
        fluid.max(wall)
    }

    /// Advances by one step of at most `max_dt` seconds.
    pub fn step(&mut self, max_dt: f64) -> Result<StepReport, SimulationError> {
        let t = self.time;
        self.place_boundaries(t);
        let stale = self.boundary_grid.as_ref().is_none_or(|g| g.positions() != &self.boundary_positions[..]);
        if stale {
            let grid = build_grid(&self.boundary_positions, self.kernel.support_radius())
                .map_err(|e| self.diverged(format!("neighbor search failed: {e}")))?;
            self.boundary_grid = Some(grid);
        }
        let bgrid = self.boundary_grid.as_ref().expect("grid built above");
        self.neighbors = Neighborhoods::build_with_boundary_grid(&self.positions, bgrid, &self.kernel)
            .map_err(|e| self.diverged(format!("neighbor search failed: {e}")))?;
        let n = self.len();
        let h = self.kernel.support_radius();
        let rho0 = self.rest_density;
        let ctx = SphContext {
            kernel: &self.kernel,
            rest_density: rho0,
            mass: &self.mass,
            neighbors: &self.neighbors,
            boundary_volume: &self.boundary_volume,
            boundary_velocity: &self.boundary_velocity,
        };
        let mut state = DfsphState::prepare(&ctx);
        let rho = state.physical_density(rho0);

        let mut flow_dt = self.solver.dt_max;
        let vmax = self.max_speed();
        if vmax > 0.0 {
            flow_dt = flow_dt.min(self.solver.cfl * h / vmax);
        }
        let mut limit = flow_dt;
        let c = self.elasto.max_wave_speed(rho0);
        if c > 0.0 {
            limit = limit.min(self.solver.elastic_cfl * h / c);
        }
        let thermal_active = self.diffusivity.iter().any(|&d| d > 0.0);
        if thermal_active {
            limit = limit.min(stable_dt(&ctx, &rho, &self.diffusivity));
        }
        if !(limit >= self.solver.dt_min) {
            return Err(self.diverged(format!("time step {limit:e} fell below dt_min")));
        }
        let dt = limit.min(max_dt);

        let mut thermal = DiffusionReport::default();
        let has_thermal = self.materials.iter().any(|m| m.thermal.is_some());
        if has_thermal {
            let (next, report) = diffuse_step(
                &ctx,
                &rho,
                &self.temperature,
                &self.diffusivity,
                dt,
                self.solver.thermal_change_bound,
            );
            thermal = report;
            if report.unstable {
                self.warnings.thermal_unstable += 1;
                log::debug!("temperature changed by {} in one step", report.max_change);
            }
            self.temperature = next;
            let mut inside = vec![false; n];
            let mut rate = vec![0.0; n];
            for i in 0..n {
                if let Some(tp) = &self.materials[self.material[i] as usize].thermal {
                    inside[i] = tp.in_source(&self.positions[i], self.neighbors.count(i));
                    rate[i] = tp.source_rate;
                }
            }
            apply_sources(&mut self.temperature, &inside, &rate, dt);
        }

        let f_elastic = self.elasto.forces(&self.positions, &self.mass);
        self.warnings.degenerate_rotations = self.elasto.degenerate_rotations;
        self.warnings.yield_exceeded = self.elasto.yield_exceeded.iter().filter(|&&y| y).count();
        let g = self.gravity;
        let mut v: Vec<Vec3> = (0..n)
            .into_par_iter()
            .map(|i| self.velocities[i] + (g + f_elastic[i] / self.mass[i]) * dt)
            .collect();

        let dfsph = self.solver.dfsph();
        let divergence = solve_divergence_free(&ctx, &mut state, &mut v, dt, &dfsph);
        if !divergence.converged {
            self.warnings.divergence_unconverged += 1;
        }

        let strain = StrainRateField::compute(&ctx, &rho, &v);
        let materials = &self.materials;
        let material = &self.material;
        let temperature = &self.temperature;
        let mu: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let m = &materials[material[i] as usize];
                match &m.thermal {
                    Some(tp) => temperature_to_viscosity(temperature[i], tp),
                    None => m.viscosity.effective_viscosity(strain.norm[i]),
                }
            })
            .collect();
        let (mut v, viscous) = ImplicitViscosity::new(self.solver.viscous()).solve(&ctx, &rho, &mu, &v, dt);
        if !viscous.converged {
            self.warnings.viscous_unconverged += 1;
        }

        let density = solve_constant_density(&ctx, &mut state, &mut v, dt, flow_dt.min(max_dt).max(dt), &dfsph);
        if !density.converged {
            self.warnings.density_unconverged += 1;
        }

        if !self.spheres.is_empty() {
            let impulses = boundary_impulses(&ctx, &state, dt);
            let reg = self.solver.viscosity_regularizer;
            let mut drag = vec![Mat3::zeros(); self.spheres.len()];
            let mut drag_rhs = vec![Vec3::zeros(); self.spheres.len()];
            let mut touched = vec![false; self.spheres.len()];
            let owner = |b: usize| self.spheres.iter().position(|s| s.samples.contains(&b));
            let first_sphere = self.spheres[0].samples.start;
            for i in 0..n {
                for p in self.neighbors.boundary.row(i) {
                    let b = p.j as usize;
                    if b < first_sphere {
                        continue;
                    }
                    let Some(k) = owner(b) else { continue };
                    touched[k] = true;
                    // −m_i k_ib x ∇Wᵀ is positive semi-definite since ∇W ∥ −x.
                    let d = -(p.xij * p.grad.transpose()) * (self.mass[i] * boundary_coefficient(&ctx, &rho, &mu, reg, i, p));
                    drag[k] += d;
                    drag_rhs[k] += d * v[i];
                }
            }
            for (k, s) in self.spheres.iter_mut().enumerate() {
                if touched[k] && s.contact.is_none() {
                    s.contact = Some(Contact { time: t, speed: s.velocity.norm(), step: self.steps });
                }
                let impulse: Vec3 = s.samples.clone().map(|b| impulses[b]).sum();
                s.advance(dt, &g, &impulse, &drag[k], &drag_rhs[k]);
                s.trace.push(RigidSample { time: t + dt, center: s.center, velocity: s.velocity });
            }
        }

        self.positions.par_iter_mut().zip(&v).for_each(|(x, vi)| *x += vi * dt);
        self.velocities = v;
        self.density = state.density;
        self.viscosity = mu;
        self.strain_rate = strain.norm;
        self.time = t + dt;
        self.steps += 1;

        if let Some(i) = (0..n).find(|&i| !is_finite_vec(&self.positions[i]) || !is_finite_vec(&self.velocities[i])) {
            return Err(self.diverged(format!("particle {i} has a non-finite state")));
        }
        if self.spheres.iter().any(|s| !is_finite_vec(&s.center) || !is_finite_vec(&s.velocity)) {
            return Err(self.diverged("rigid sphere state is non-finite"));
        }

        Ok(StepReport {
            time: self.time,
            dt,
            divergence,
            density,
            viscous,
            thermal,
            max_mu: self.viscosity.iter().copied().fold(0.0, f64::max),
            max_strain_rate: self.strain_rate.iter().copied().fold(0.0, f64::max),
            kinetic_energy: kinetic_energy(&self.mass, &self.velocities),
        })
    }

    /// Steps until `self.time` reaches `target`, landing on it exactly.
    pub fn advance_to(&mut self, target: f64, mut on_step: impl FnMut(&StepReport)) -> Result<(), SimulationError> {
        // Remainders below this are absorbed by snapping the clock.
        let snap = 1e-12 * target.abs().max(1.0);
        while target - self.time > snap {
            let report = self.step(target - self.time)?;
            on_step(&report);
        }
        self.time = self.time.max(target);
        Ok(())
    }

    pub fn frame_record(&self, frame: u32) -> FrameRecord {
        let f3 = |v: &Vec3| [v.x as f32, v.y as f32, v.z as f32];
        FrameRecord {
            frame,
            time: self.time,
            positions: self.positions.iter().map(f3).collect(),
            velocities: self.velocities.iter().map(f3).collect(),
            temperature: self.temperature.iter().map(|&x| x as f32).collect(),
            viscosity: self.viscosity.iter().map(|&x| x as f32).collect(),
            plastic_strain: self.elasto.plastic_norms().into_iter().map(|x| x as f32).collect(),
            material: self.material.clone(),
        }
    }
}
