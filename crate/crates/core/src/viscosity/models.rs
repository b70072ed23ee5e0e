//! Strain-rate dependent effective viscosity laws.

use serde::{Deserialize, Serialize};

use crate::error::InvalidModelParams;

/// Lower bound applied to the strain-rate norm before any law is evaluated.
pub const STRAIN_RATE_FLOOR: f64 = 1e-6;

/// Upper bound on the effective viscosity for laws without a zero-rate
/// plateau.
pub const VISCOSITY_CAP: f64 = 1e6;

/// Lower bound on the effective viscosity for laws without a high-rate
/// plateau; keeps thinning laws strictly positive.
pub const VISCOSITY_MIN: f64 = 1e-6;

/// Effective (apparent) viscosity law `μ = g(‖ε̇‖)`.
///
/// Rates are Frobenius norms of the strain-rate tensor. `mu_inf`/`mu0` on the
/// power-law and Casson variants are optional clamp bounds; the other laws
/// carry them as part of their formula.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ViscosityModel {
    Newtonian {
        mu0: f64,
    },
    PowerLaw {
        n: f64,
        m: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu_inf: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu0: Option<f64>,
    },
    Cross {
        mu0: f64,
        mu_inf: f64,
        /// Relaxation time.
        m: f64,
        n: f64,
    },
    Carreau {
        mu0: f64,
        mu_inf: f64,
        m: f64,
        n: f64,
        #[serde(default = "default_carreau_alpha")]
        alpha: f64,
    },
    Bingham {
        mu0: f64,
        mu_inf: f64,
        critical_rate: f64,
    },
    Casson {
        mu_c: f64,
        tau0: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu_inf: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu0: Option<f64>,
    },
    HerschelBulkley {
        mu0: f64,
        m: f64,
        n: f64,
        critical_rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu_inf: Option<f64>,
    },
}

fn default_carreau_alpha() -> f64 {
    2.0
}

impl ViscosityModel {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Newtonian { .. } => "newtonian",
            Self::PowerLaw { .. } => "power_law",
            Self::Cross { .. } => "cross",
            Self::Carreau { .. } => "carreau",
            Self::Bingham { .. } => "bingham",
            Self::Casson { .. } => "casson",
            Self::HerschelBulkley { .. } => "herschel_bulkley",
        }
    }

    /// Checks coefficient invariants. Returns every violation, not just the
    /// first.
    pub fn validate(&self) -> Result<(), InvalidModelParams> {
        let mut errs = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{}: {name} must be positive and finite, got {v}", self.name()));
            }
        };
        match *self {
            Self::Newtonian { .. } => {}
            Self::PowerLaw { n, m, .. } => {
                positive("n", n);
                positive("m", m);
            }
            Self::Cross { m, n, .. } | Self::Carreau { m, n, .. } => {
                positive("m", m);
                positive("n", n);
            }
            Self::Bingham { critical_rate, .. } => positive("critical_rate", critical_rate),
            Self::Casson { mu_c, .. } => positive("mu_c", mu_c),
            Self::HerschelBulkley { m, n, critical_rate, .. } => {
                positive("m", m);
                positive("n", n);
                positive("critical_rate", critical_rate);
            }
        }
        if let Self::Carreau { alpha, .. } = *self {
            positive("alpha", alpha);
        }
        if let Self::Casson { tau0, .. } = *self {
            if !(tau0 >= 0.0 && tau0.is_finite()) {
                errs.push(format!("casson: tau0 must be non-negative, got {tau0}"));
            }
        }
        let (lo, hi) = (self.mu_inf(), self.mu0());
        if let Some(hi) = hi {
            if !(hi >= 0.0 && hi.is_finite()) {
                errs.push(format!("{}: mu0 must be non-negative and finite, got {hi}", self.name()));
            }
        }
        if let Some(lo) = lo {
            if !(lo >= 0.0 && lo.is_finite()) {
                errs.push(format!("{}: mu_inf must be non-negative and finite, got {lo}", self.name()));
            }
        }
        if let (Some(lo), Some(hi)) = (lo, hi) {
            if lo > hi {
                errs.push(format!(
                    "{}: mu_inf ({lo}) must not exceed mu0 ({hi})",
                    self.name()
                ));
            }
        }
        if !matches!(self, Self::Newtonian { .. }) {
            if let Some(hi) = hi {
                if hi <= 0.0 {
                    errs.push(format!("{}: mu0 must be positive", self.name()));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(InvalidModelParams(errs))
        }
    }

    /// Non-fatal observations about a valid parameter set.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(tau0) = self.yield_stress() {
            if tau0 < 0.0 {
                out.push(format!(
                    "{}: derived yield stress tau0 = {tau0:.6e} is negative (mu0 * rate_c < m * rate_c^n)",
                    self.name()
                ));
            }
        }
        out
    }

    /// Zero-rate plateau `μ0`, when the law has one.
    pub fn mu0(&self) -> Option<f64> {
        match *self {
            Self::Newtonian { mu0 }
            | Self::Cross { mu0, .. }
            | Self::Carreau { mu0, .. }
            | Self::Bingham { mu0, .. }
            | Self::HerschelBulkley { mu0, .. } => Some(mu0),
            Self::PowerLaw { mu0, .. } | Self::Casson { mu0, .. } => mu0,
        }
    }

    /// High-rate asymptote `μ∞`, when the law has one.
    pub fn mu_inf(&self) -> Option<f64> {
        match *self {
            Self::Newtonian { .. } => None,
            Self::Cross { mu_inf, .. } | Self::Carreau { mu_inf, .. } | Self::Bingham { mu_inf, .. } => {
                Some(mu_inf)
            }
            Self::PowerLaw { mu_inf, .. }
            | Self::Casson { mu_inf, .. }
            | Self::HerschelBulkley { mu_inf, .. } => mu_inf,
        }
    }

    /// Yield stress `τ0`. For Bingham and Herschel–Bulkley it is derived from
    /// the continuity condition at the critical rate.
    pub fn yield_stress(&self) -> Option<f64> {
        match *self {
            Self::Bingham { mu0, mu_inf, critical_rate } => Some(critical_rate * (mu0 - mu_inf)),
            Self::HerschelBulkley { mu0, m, n, critical_rate, .. } => {
                Some(mu0 * critical_rate - m * critical_rate.powf(n))
            }
            Self::Casson { tau0, .. } => Some(tau0),
            _ => None,
        }
    }

    /// The bare law, without floor or clamps. `rate` must be positive.
    pub fn raw(&self, rate: f64) -> f64 {
        match *self {
            Self::Newtonian { mu0 } => mu0,
            Self::PowerLaw { n, m, .. } => m * rate.powf(n - 1.0),
            Self::Cross { mu0, mu_inf, m, n } => mu_inf + (mu0 - mu_inf) / (1.0 + (m * rate).powf(n)),
            Self::Carreau { mu0, mu_inf, m, n, alpha } => {
                mu_inf + (mu0 - mu_inf) / (1.0 + (m * rate).powf(alpha)).powf((1.0 - n) / alpha)
            }
            Self::Bingham { mu0, mu_inf, critical_rate } => {
                if rate <= critical_rate {
                    mu0
                } else {
                    mu_inf + critical_rate * (mu0 - mu_inf) / rate
                }
            }
            Self::Casson { mu_c, tau0, .. } => {
                let s = mu_c.sqrt() + (tau0 / rate).sqrt();
                s * s
            }
            Self::HerschelBulkley { mu0, m, n, critical_rate, .. } => {
                if rate <= critical_rate {
                    mu0
                } else {
                    let tau0 = mu0 * critical_rate - m * critical_rate.powf(n);
                    tau0 / rate + m * rate.powf(n - 1.0)
                }
            }
        }
    }

    /// Clamp range `[μ∞, cap]` applied after evaluation.
    pub fn bounds(&self) -> (f64, f64) {
        let hi = self.mu0().unwrap_or(VISCOSITY_CAP);
        let lo = self.mu_inf().unwrap_or(0.0).max(VISCOSITY_MIN).min(hi);
        (lo, hi)
    }

    /// Effective viscosity at strain-rate norm `rate`, with the rate floored
    /// at `floor` and the result clamped to [`bounds`](Self::bounds).
    pub fn effective_viscosity_with_floor(&self, rate: f64, floor: f64) -> f64 {
        let rate = if rate.is_nan() { floor } else { rate.max(floor) };
        let (lo, hi) = self.bounds();
        let mu = self.raw(rate);
        if mu.is_nan() {
            return hi;
        }
        mu.clamp(lo, hi)
    }

    pub fn effective_viscosity(&self, rate: f64) -> f64 {
        self.effective_viscosity_with_floor(rate, STRAIN_RATE_FLOOR)
    }
}

/// Log-spaced samples `(rate, μ)` over `[lo, hi]`.
pub fn viscosity_curve(model: &ViscosityModel, lo: f64, hi: f64, points: usize) -> Vec<(f64, f64)> {
    let points = points.max(2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|k| {
            // Endpoints exactly, not through exp(ln(x)).
            let rate = if k == 0 {
                lo
            } else if k + 1 == points {
                hi
            } else {
                (a + (b - a) * k as f64 / (points - 1) as f64).exp()
            };
            (rate, model.effective_viscosity(rate))
        })
        .collect()
}
