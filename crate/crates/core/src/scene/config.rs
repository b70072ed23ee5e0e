//! Declarative scene description, stored as a versioned JSON document.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::elastoplastic::ElasticParams;
use crate::error::SceneError;
use crate::pressure::DfsphConfig;
use crate::thermal::ThermalParams;
use crate::viscosity::{ViscosityModel, ViscousSolveConfig};

pub const SCENE_VERSION: u32 = 1;

fn default_gravity() -> [f64; 3] {
    [0.0, -9.81, 0.0]
}
fn default_support_factor() -> f64 {
    2.0
}
fn default_rest_density() -> f64 {
    1000.0
}
fn is_zero(v: &f64) -> bool {
    *v == 0.0
}
fn is_zero3(v: &[f64; 3]) -> bool {
    *v == [0.0; 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    /// Lattice spacing of the particle sampling, in meters.
    pub particle_spacing: f64,
    /// Kernel support radius as a multiple of the particle spacing.
    #[serde(default = "default_support_factor")]
    pub support_radius_factor: f64,
    #[serde(default = "default_rest_density")]
    pub rest_density: f64,
    pub materials: BTreeMap<String, MaterialConfig>,
    pub bodies: Vec<BodyConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boundaries: Vec<BoundaryConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rigid_spheres: Vec<RigidSphereConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub viscosity: ViscosityModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elastic: Option<ElasticParams>,
    /// When present, `μ = μ0 e^(−dT)` replaces the viscosity law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal: Option<ThermalParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Box { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    /// Whitespace-separated `x y z` rows; relative paths resolve against the
    /// scene file's directory. `offset` translates every point.
    PointCloud {
        path: String,
        #[serde(default, skip_serializing_if = "is_zero3")]
        offset: [f64; 3],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub shape: Shape,
    pub material: String,
    #[serde(default, skip_serializing_if = "is_zero3")]
    pub velocity: [f64; 3],
    /// Overrides the scene particle spacing for this body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub temperature: f64,
    /// Random position perturbation as a fraction of the spacing, drawn from
    /// the run seed.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryShape {
    /// Box walls sampled as one layer, half a spacing outside the faces.
    Container {
        min: [f64; 3],
        max: [f64; 3],
        #[serde(default = "yes")]
        open_top: bool,
    },
    /// Filled box of boundary samples, optionally rotated about its center
    /// by an axis-angle vector in radians.
    Slab {
        min: [f64; 3],
        max: [f64; 3],
        #[serde(default, skip_serializing_if = "is_zero3")]
        rotation: [f64; 3],
    },
    /// A slab used as a cutting board; must be at least two spacings thick.
    Divider {
        min: [f64; 3],
        max: [f64; 3],
        #[serde(default, skip_serializing_if = "is_zero3")]
        rotation: [f64; 3],
    },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    #[default]
    Static,
    /// Constant velocity during `[start, stop)`, at rest otherwise.
    Linear {
        velocity: [f64; 3],
        #[serde(default)]
        start: f64,
        #[serde(default = "forever", with = "open_end")]
        stop: f64,
    },
}

fn forever() -> f64 {
    f64::INFINITY
}

mod open_end {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Motion {
    /// Displacement from the initial placement at time `t`.
    pub fn displacement(&self, t: f64) -> [f64; 3] {
        match self {
            Motion::Static => [0.0; 3],
            Motion::Linear { velocity, start, stop } => {
                let span = (t.min(*stop) - start).max(0.0);
                velocity.map(|v| v * span)
            }
        }
    }

    pub fn velocity(&self, t: f64) -> [f64; 3] {
        match self {
            Motion::Static => [0.0; 3],
            Motion::Linear { velocity, start, stop } => {
                if t >= *start && t < *stop {
                    *velocity
                } else {
                    [0.0; 3]
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub shape: BoundaryShape,
    #[serde(default)]
    pub motion: Motion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereMode {
    /// Follows its initial velocity regardless of the fluid.
    Kinematic,
    /// Translates under gravity and the fluid's pressure and drag.
    #[default]
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidSphereConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub center: [f64; 3],
    pub radius: f64,
    pub mass: f64,
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub mode: SphereMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub dt_max: f64,
    /// Courant number of the `Δt ≤ C h / max|v|` limit.
    pub cfl: f64,
    /// Courant number of the `Δt ≤ C h / c` limit for elastic waves of
    /// speed `c`; explicit elasticity needs it well below `cfl`.
    pub elastic_cfl: f64,
    pub density_tolerance: f64,
    pub divergence_tolerance: f64,
    pub max_density_iterations: usize,
    pub max_divergence_iterations: usize,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
    pub viscosity_regularizer: f64,
    /// Largest per-step temperature change before a warning.
    pub thermal_change_bound: f64,
    /// Steps shorter than this are treated as divergence.
    pub dt_min: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let p = DfsphConfig::default();
        let v = ViscousSolveConfig::default();
        Self {
            dt_max: 5e-3,
            cfl: 0.4,
            elastic_cfl: 0.02,
            density_tolerance: p.density_tolerance,
            divergence_tolerance: p.divergence_tolerance,
            max_density_iterations: p.max_density_iterations,
            max_divergence_iterations: p.max_divergence_iterations,
            cg_tolerance: v.tolerance,
            cg_max_iterations: v.max_iterations,
            viscosity_regularizer: v.regularizer,
            thermal_change_bound: 1.0,
            dt_min: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn dfsph(&self) -> DfsphConfig {
        DfsphConfig {
            density_tolerance: self.density_tolerance,
            divergence_tolerance: self.divergence_tolerance,
            max_density_iterations: self.max_density_iterations,
            max_divergence_iterations: self.max_divergence_iterations,
        }
    }

    pub fn viscous(&self) -> ViscousSolveConfig {
        ViscousSolveConfig {
            tolerance: self.cg_tolerance,
            max_iterations: self.cg_max_iterations,
            regularizer: self.viscosity_regularizer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    /// Fixed-stride little-endian binary snapshot.
    Binary,
    /// ASCII PLY vertex list.
    Ply,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Simulated seconds between frames.
    pub frame_interval: f64,
    pub frames: u32,
    pub directory: String,
    pub formats: Vec<FrameFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            frame_interval: 1.0 / 30.0,
            frames: 10,
            directory: "out".to_string(),
            formats: vec![FrameFormat::Binary],
        }
    }
}

impl SceneConfig {
    /// Parses and validates a scene; `origin` only labels errors.
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self, SceneError> {
        let cfg: SceneConfig = serde_json::from_str(text).map_err(|e| SceneError::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    /// Kernel support radius in meters.
    pub fn support_radius(&self) -> f64 {
        self.particle_spacing * self.support_radius_factor
    }

    /// Material ids follow the sorted material names.
    pub fn material_id(&self, name: &str) -> Option<u16> {
        self.materials.keys().position(|k| k == name).map(|i| i as u16)
    }

    /// Every validation problem, not just the first.
    pub fn validate(&self) -> Result<(), SceneError> {
        let mut errs = Vec::new();
        let finite3 = |v: &[f64; 3]| v.iter().all(|x| x.is_finite());
        if self.version != SCENE_VERSION {
            errs.push(format!("unsupported scene version {} (expected {SCENE_VERSION})", self.version));
        }
        if !finite3(&self.gravity) {
            errs.push("gravity must be finite".to_string());
        }
        if !(self.particle_spacing > 0.0 && self.particle_spacing.is_finite()) {
            errs.push(format!("particle_spacing must be positive, got {}", self.particle_spacing));
        }
        if !(self.support_radius_factor >= 1.0 && self.support_radius_factor.is_finite()) {
            errs.push(format!("support_radius_factor must be at least 1, got {}", self.support_radius_factor));
        }
        if !(self.rest_density > 0.0 && self.rest_density.is_finite()) {
            errs.push(format!("rest_density must be positive, got {}", self.rest_density));
        }
        if self.materials.is_empty() {
            errs.push("at least one material is required".to_string());
        }
        if self.materials.len() > u16::MAX as usize {
            errs.push("too many materials".to_string());
        }
        for (name, m) in &self.materials {
            if let Err(e) = m.viscosity.validate() {
                errs.extend(e.0.into_iter().map(|s| format!("material {name}: {s}")));
            }
            if let Some(el) = &m.elastic {
                errs.extend(el.validate().into_iter().map(|s| format!("material {name}: {s}")));
            }
            if let Some(th) = &m.thermal {
                errs.extend(th.validate().into_iter().map(|s| format!("material {name}: {s}")));
            }
        }
        for (k, b) in self.bodies.iter().enumerate() {
            let label = body_label(b, k);
            if !self.materials.contains_key(&b.material) {
                errs.push(format!("{label}: unknown material \"{}\"", b.material));
            }
            if let Some(s) = b.spacing {
                if !(s > 0.0 && s.is_finite()) {
                    errs.push(format!("{label}: spacing must be positive, got {s}"));
                }
            }
            if !finite3(&b.velocity) || !b.temperature.is_finite() {
                errs.push(format!("{label}: velocity and temperature must be finite"));
            }
            if !(0.0..0.5).contains(&b.jitter) {
                errs.push(format!("{label}: jitter must lie in [0, 0.5), got {}", b.jitter));
            }
            match &b.shape {
                Shape::Box { min, max } => check_box(&mut errs, &label, min, max),
                Shape::Sphere { center, radius } => {
                    if !finite3(center) || !(*radius > 0.0 && radius.is_finite()) {
                        errs.push(format!("{label}: sphere needs a finite center and positive radius"));
                    }
                }
                Shape::PointCloud { path, offset } => {
                    if !finite3(offset) {
                        errs.push(format!("{label}: point cloud offset must be finite"));
                    }
                    if path.is_empty() {
                        errs.push(format!("{label}: point cloud path is empty"));
                    }
                }
            }
        }
        for (k, b) in self.boundaries.iter().enumerate() {
            let label = b.name.clone().unwrap_or_else(|| format!("boundary {k}"));
            match &b.shape {
                BoundaryShape::Container { min, max, .. } | BoundaryShape::Slab { min, max, .. } => {
                    check_box(&mut errs, &label, min, max)
                }
                BoundaryShape::Divider { min, max, .. } => {
                    check_box(&mut errs, &label, min, max);
                    let thickness = (0..3).map(|a| max[a] - min[a]).fold(f64::INFINITY, f64::min);
                    if thickness < 2.0 * self.particle_spacing * (1.0 - 1e-9) {
                        errs.push(format!(
                            "{label}: divider thickness {thickness} is below two particle spacings ({})",
                            2.0 * self.particle_spacing
                        ));
                    }
                }
            }
            if let Motion::Linear { velocity, start, stop } = &b.motion {
                if !finite3(velocity) || !start.is_finite() || !(stop > start) {
                    errs.push(format!("{label}: linear motion needs a finite velocity and start < stop"));
                }
            }
        }
        for (k, s) in self.rigid_spheres.iter().enumerate() {
            let label = s.name.clone().unwrap_or_else(|| format!("sphere {k}"));
            if !(s.radius > 0.0 && s.radius.is_finite()) {
                errs.push(format!("{label}: radius must be positive, got {}", s.radius));
            }
            if s.mode == SphereMode::Dynamic && !(s.mass > 0.0 && s.mass.is_finite()) {
                errs.push(format!("{label}: dynamic sphere mass must be positive, got {}", s.mass));
            }
            if !finite3(&s.center) || !finite3(&s.velocity) {
                errs.push(format!("{label}: center and velocity must be finite"));
            }
        }
        let sv = &self.solver;
        errs.extend(sv.dfsph().validate());
        errs.extend(sv.viscous().validate());
        if !(sv.dt_max > 0.0 && sv.dt_max.is_finite()) {
            errs.push(format!("dt_max must be positive, got {}", sv.dt_max));
        }
        if !(sv.cfl > 0.0 && sv.cfl <= 1.0) {
            errs.push(format!("cfl must lie in (0, 1], got {}", sv.cfl));
        }
        if !(sv.elastic_cfl > 0.0 && sv.elastic_cfl <= 1.0) {
            errs.push(format!("elastic_cfl must lie in (0, 1], got {}", sv.elastic_cfl));
        }
        if !(sv.dt_min > 0.0 && sv.dt_min < sv.dt_max) {
            errs.push(format!("dt_min must lie in (0, dt_max), got {}", sv.dt_min));
        }
        if !(sv.thermal_change_bound > 0.0) {
            errs.push("thermal_change_bound must be positive".to_string());
        }
        if !(self.output.frame_interval > 0.0 && self.output.frame_interval.is_finite()) {
            errs.push(format!("frame_interval must be positive, got {}", self.output.frame_interval));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SceneError::Validation(errs))
        }
    }

    /// Non-fatal remarks, such as negative derived yield stresses.
    pub fn warnings(&self) -> Vec<String> {
        self.materials
            .iter()
            .flat_map(|(name, m)| m.viscosity.warnings().into_iter().map(move |w| format!("material {name}: {w}")))
            .collect()
    }
}

pub(crate) fn body_label(b: &BodyConfig, k: usize) -> String {
    b.name.clone().unwrap_or_else(|| format!("body {k}"))
}

fn check_box(errs: &mut Vec<String>, label: &str, min: &[f64; 3], max: &[f64; 3]) {
    if (0..3).any(|a| !(min[a].is_finite() && max[a].is_finite() && min[a] < max[a])) {
        errs.push(format!("{label}: box min {min:?} must be below max {max:?}"));
    }
}

/// Reads, parses and validates a scene file.
pub fn load_scene(path: &Path) -> Result<SceneConfig, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    SceneConfig::from_json_str(&text, path)
}
