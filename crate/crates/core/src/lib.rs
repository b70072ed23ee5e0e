//! Particle-based simulation of non-Newtonian and elasto-plastic materials.
//!
//! The solver is a divergence-free SPH pipeline with an implicit,
//! strain-rate dependent viscosity, corotated elasto-plasticity and an
//! optional heat equation that softens materials as they warm up. Scenes are
//! JSON documents ([`scene::SceneConfig`]); [`engine::World`] advances them
//! and [`cli::run_cli`] drives runs from the command line.

pub mod cli;
pub mod context;
pub mod elastoplastic;
pub mod engine;
pub mod error;
pub mod math;
pub mod neighbors;
pub mod pressure;
pub mod scene;
pub mod thermal;
pub mod viscosity;
