//! Corotated linear elasticity with von Mises plasticity, evaluated over the
//! frozen rest neighborhoods.
//!
//! Each step runs three data-parallel passes: rotations, then strains and
//! stresses, then symmetrized pair forces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::math::{frobenius_norm, polar_rotation, symmetric_part, Mat3, Vec3};
use crate::neighbors::RestNeighborhood;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticParams {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Elastic limit `γ1`; `f64::INFINITY` (written `"inf"`) disables
    /// plasticity.
    #[serde(with = "limit")]
    pub elastic_limit: f64,
    /// Plastic limit `γ2`, the largest retained plastic strain norm.
    #[serde(with = "limit")]
    pub plastic_limit: f64,
}

/// Strain limits serialize infinity as the string `"inf"`.
mod limit {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Number(x) => Ok(x),
            Raw::Text(t) if t == "inf" || t == "infinity" => Ok(f64::INFINITY),
            Raw::Text(t) => Err(D::Error::custom(format!("expected a number or \"inf\", got \"{t}\""))),
        }
    }
}

impl ElasticParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
            errs.push(format!("Young's modulus must be positive, got {}", self.youngs_modulus));
        }
        if !(self.poisson_ratio >= 0.0 && self.poisson_ratio < 0.5) {
            errs.push(format!("Poisson ratio must lie in [0, 0.5), got {}", self.poisson_ratio));
        }
        if !(self.elastic_limit > 0.0) {
            errs.push(format!("elastic limit must be positive, got {}", self.elastic_limit));
        }
        if !(self.plastic_limit > 0.0) {
            errs.push(format!("plastic limit must be positive, got {}", self.plastic_limit));
        } else if self.elastic_limit.is_finite() && self.plastic_limit < self.elastic_limit {
            errs.push(format!(
                "plastic limit {} must not be below elastic limit {}",
                self.plastic_limit, self.elastic_limit
            ));
        }
        errs
    }

    /// Lamé parameters `(λ, μ)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));
        (lambda, mu)
    }

    /// P-wave speed `√((λ + 2μ)/ρ)`, which bounds the explicit time step.
    pub fn wave_speed(&self, density: f64) -> f64 {
        let (l, m) = self.lame();
        ((l + 2.0 * m) / density).sqrt()
    }
}

/// `A_pq = Σ_j m_j W(x_ij⁰) (x_j − x_i)(x_j⁰ − x_i⁰)ᵀ`.
pub fn compute_apq(rest: &RestNeighborhood, positions: &[Vec3], mass: &[f64], i: usize) -> Mat3 {
    let xi = positions[i];
    let mut a = Mat3::zeros();
    for p in rest.row(i) {
        let j = p.j as usize;
        a += (positions[j] - xi) * (p.offset * (mass[j] * p.w)).transpose();
    }
    a
}

/// Rotation part of `A_pq`; falls back to `previous` when the neighborhood
/// has collapsed. The flag reports the fallback.
pub fn extract_rotation(apq: &Mat3, previous: &Mat3) -> (Mat3, bool) {
    match polar_rotation(apq) {
        Ok(r) => (r, false),
        Err(_) => (*previous, true),
    }
}

/// `u_ji = Rᵀ(x_j − x_i) − (x_j⁰ − x_i⁰)`.
pub fn displacement(rotation: &Mat3, xi: &Vec3, xj: &Vec3, rest_offset: &Vec3) -> Vec3 {
    rotation.transpose() * (xj - xi) - rest_offset
}

/// `∇u_i = Σ_j ṽ_j u_ji ∇W(x_ij⁰)ᵀ`.
pub fn displacement_gradient(rest: &RestNeighborhood, positions: &[Vec3], rotation: &Mat3, i: usize) -> Mat3 {
    let xi = positions[i];
    let mut g = Mat3::zeros();
    for p in rest.row(i) {
        let j = p.j as usize;
        let u = displacement(rotation, &xi, &positions[j], &p.offset);
        g += (u * rest.volume(j)) * p.grad.transpose();
    }
    g
}

/// Cauchy strain `½(∇uᵀ + ∇u)`.
pub fn strain_from_gradient(grad_u: &Mat3) -> Mat3 {
    symmetric_part(&grad_u.transpose())
}

/// `ε′ = ε − tr(ε)/3 · I`.
pub fn strain_deviator(strain: &Mat3) -> Mat3 {
    strain - Mat3::identity() * (strain.trace() / 3.0)
}

/// Returns the new plastic strain and whether it reached the plastic limit.
pub fn plastic_update(deviator: &Mat3, plastic: &Mat3, params: &ElasticParams) -> (Mat3, bool) {
    let norm = frobenius_norm(deviator);
    if !(norm > params.elastic_limit) {
        return (*plastic, false);
    }
    let increment = deviator * ((norm - params.elastic_limit) / norm);
    let total = plastic + increment;
    let total_norm = frobenius_norm(&total);
    if total_norm > params.plastic_limit {
        (total * (params.plastic_limit / total_norm), true)
    } else {
        (total, false)
    }
}

/// Isotropic Hooke's law `σ = 2μ ε + λ tr(ε) I`.
pub fn hooke_stress(strain: &Mat3, params: &ElasticParams) -> Mat3 {
    let (lambda, mu) = params.lame();
    strain * (2.0 * mu) + Mat3::identity() * (lambda * strain.trace())
}

/// Elasto-plastic state of every particle; entries of particles without
/// elastic parameters stay at their initial values.
#[derive(Clone, Debug)]
pub struct ElastoPlastic {
    rest: RestNeighborhood,
    params: Vec<Option<ElasticParams>>,
    members: Vec<usize>,
    pub rotation: Vec<Mat3>,
    pub plastic_strain: Vec<Mat3>,
    pub stress: Vec<Mat3>,
    pub yield_exceeded: Vec<bool>,
    /// Number of rotation fallbacks over the run.
    pub degenerate_rotations: usize,
}

impl ElastoPlastic {
    /// `params[i]` selects the material of particle `i`; particles with
    /// `None` take no part.
    pub fn new(rest: RestNeighborhood, params: Vec<Option<ElasticParams>>) -> Self {
        let n = params.len();
        let members = (0..n).filter(|&i| params[i].is_some()).collect();
        Self {
            rest,
            params,
            members,
            rotation: vec![Mat3::identity(); n],
            plastic_strain: vec![Mat3::zeros(); n],
            stress: vec![Mat3::zeros(); n],
            yield_exceeded: vec![false; n],
            degenerate_rotations: 0,
        }
    }

    pub fn rest(&self) -> &RestNeighborhood {
        &self.rest
    }

    pub fn is_active(&self) -> bool {
        !self.members.is_empty()
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Largest P-wave speed over the elastic materials.
    pub fn max_wave_speed(&self, density: f64) -> f64 {
        self.members
            .iter()
            .filter_map(|&i| self.params[i].map(|p| p.wave_speed(density)))
            .fold(0.0, f64::max)
    }

    /// Runs the rotation, stress and force passes; returns per-particle
    /// elastic forces.
    pub fn forces(&mut self, positions: &[Vec3], mass: &[f64]) -> Vec<Vec3> {
        let n = positions.len();
        if self.members.is_empty() {
            return vec![Vec3::zeros(); n];
        }
        let rest = &self.rest;
        let prev = &self.rotation;
        let rot: Vec<(usize, Mat3, bool)> = self
            .members
            .par_iter()
            .map(|&i| {
                let (r, degenerate) = extract_rotation(&compute_apq(rest, positions, mass, i), &prev[i]);
                (i, r, degenerate)
            })
            .collect();
        for (i, r, degenerate) in rot {
            self.rotation[i] = r;
            self.degenerate_rotations += degenerate as usize;
        }

        let rotation = &self.rotation;
        let plastic = &self.plastic_strain;
        let params = &self.params;
        let updates: Vec<(usize, Mat3, Mat3, bool)> = self
            .members
            .par_iter()
            .map(|&i| {
                let p = params[i].as_ref().expect("member has parameters");
                let grad_u = displacement_gradient(rest, positions, &rotation[i], i);
                let strain = strain_from_gradient(&grad_u);
                let (ep, capped) = plastic_update(&strain_deviator(&(strain - plastic[i])), &plastic[i], p);
                (i, ep, hooke_stress(&(strain - ep), p), capped)
            })
            .collect();
        for (i, ep, sigma, capped) in updates {
            self.plastic_strain[i] = ep;
            self.stress[i] = sigma;
            self.yield_exceeded[i] |= capped;
        }

        let rs: Vec<Mat3> = (0..n).map(|i| self.rotation[i] * self.stress[i]).collect();
        let mut out = vec![Vec3::zeros(); n];
        let f: Vec<(usize, Vec3)> = self
            .members
            .par_iter()
            .map(|&i| {
                let vi = rest.volume(i);
                let mut f = Vec3::zeros();
                for p in rest.row(i) {
                    let j = p.j as usize;
                    f += (rs[i] + rs[j]) * (p.grad * rest.volume(j));
                }
                (i, f * (0.5 * vi))
            })
            .collect();
        for (i, fi) in f {
            out[i] = fi;
        }
        out
    }

    /// Frobenius norms of the plastic strains.
    pub fn plastic_norms(&self) -> Vec<f64> {
        self.plastic_strain.iter().map(frobenius_norm).collect()
    }
}
