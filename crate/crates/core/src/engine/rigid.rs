//! Translating rigid spheres represented by a shell of boundary samples.

use std::ops::Range;

use crate::math::{Mat3, Vec3};
use crate::scene::config::SphereMode;

/// First step at which any fluid particle reached the shell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub time: f64,
    /// Sphere speed at the start of that step.
    pub speed: f64,
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidSample {
    pub time: f64,
    pub center: Vec3,
    pub velocity: Vec3,
}

#[derive(Clone, Debug)]
pub struct RigidSphere {
    pub name: String,
    pub center: Vec3,
    pub radius: f64,
    pub mass: f64,
    pub velocity: Vec3,
    pub mode: SphereMode,
    /// Shell sample offsets from the center.
    pub shell: Vec<Vec3>,
    /// Indices of the shell samples in the global boundary arrays.
    pub samples: Range<usize>,
    pub contact: Option<Contact>,
    pub trace: Vec<RigidSample>,
}

impl RigidSphere {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// Advances the sphere by `dt`. In dynamic mode, `impulse` is the momentum
    /// the fluid's pressure delivered this step and the viscous drag
    /// `Σ D_ib (v_i − v_s)` is integrated implicitly through `drag`
    /// (`Σ D_ib`) and `drag_rhs` (`Σ D_ib v_i`).
    pub fn advance(&mut self, dt: f64, gravity: &Vec3, impulse: &Vec3, drag: &Mat3, drag_rhs: &Vec3) {
        if self.mode == SphereMode::Dynamic {
            let lhs = Mat3::identity() * self.mass + drag * dt;
            let rhs = self.velocity * self.mass + gravity * (self.mass * dt) + impulse + drag_rhs * dt;
            self.velocity = lhs.lu().solve(&rhs).unwrap_or(rhs / self.mass);
        }
        self.center += self.velocity * dt;
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("time,x,y,z,vx,vy,vz,speed\n");
        for r in &self.trace {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.time,
                r.center.x,
                r.center.y,
                r.center.z,
                r.velocity.x,
                r.velocity.y,
                r.velocity.z,
                r.velocity.norm()
            ));
        }
        s
    }
}
