//! Model data: physical constants, species, the diffusion profile and the
//! size-modified Slotboom transforms.

mod species;
mod transform;

use thiserror::Error;

pub use species::{volume_from_radius, IonSpecies, SpeciesSet, MAX_SPECIES};
pub use transform::{
    boundary_conc, capped_exp, electrochemical_potential, slotboom_forward, transformed_diffusion,
    water_fraction, Surface,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("invalid species data: {0}")]
    InvalidSpecies(String),
    #[error("invalid model constants: {0}")]
    InvalidConstants(String),
    #[error("volume fraction violated: water fraction {fraction:.3e} is not positive")]
    Infeasible { fraction: f64 },
    #[error("concentration of species {species} is not positive ({value:.3e})")]
    NonPositiveConcentration { species: usize, value: f64 },
}

/// SI values (exact since the 2019 redefinition, ε0 from CODATA 2018).
pub mod si {
    pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
    pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
    pub const BOLTZMANN: f64 = 1.380_649e-23;
    pub const AVOGADRO: f64 = 6.022_140_76e23;
    pub const TEMPERATURE: f64 = 298.15;
}

/// Dimensionless couplings from a temperature in kelvin. Lengths are in Å,
/// concentrations in mol/L and σ in μC/cm².
pub fn couplings(temperature: f64) -> (f64, f64, f64, f64) {
    use si::*;
    let kt = VACUUM_PERMITTIVITY * BOLTZMANN * temperature;
    let e2 = ELEMENTARY_CHARGE * ELEMENTARY_CHARGE;
    let alpha = 1e10 * e2 / kt;
    let beta = AVOGADRO * e2 / (1e17 * kt);
    let tau = 1e-12 * ELEMENTARY_CHARGE / kt;
    let gamma = 1e-27 * AVOGADRO;
    (alpha, beta, tau, gamma)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConstants {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub gamma: f64,
    pub eps_p: f64,
    pub eps_m: f64,
    pub eps_s: f64,
    /// Applied potential on the bottom face (z = Lz1).
    pub u_b: f64,
    /// Applied potential on the top face (z = Lz2).
    pub u_t: f64,
    /// Membrane surface charge density, μC/cm².
    pub sigma: f64,
    /// Diffusion buffer thickness, Å.
    pub eta: f64,
    /// Channel-to-bulk diffusion ratio.
    pub theta: f64,
    /// Exponent cap.
    pub cap: f64,
    pub omega: f64,
    pub outer_tol: f64,
    pub newton_tol: f64,
    pub max_outer: usize,
    pub max_newton: usize,
}

impl Default for ModelConstants {
    fn default() -> Self {
        let (alpha, beta, tau, gamma) = couplings(si::TEMPERATURE);
        Self {
            alpha,
            beta,
            tau,
            gamma,
            eps_p: 2.0,
            eps_m: 2.0,
            eps_s: 80.0,
            u_b: 0.0,
            u_t: 0.0,
            sigma: 0.0,
            eta: 2.0,
            theta: 0.055,
            cap: 45.0,
            omega: 0.41,
            outer_tol: 1e-4,
            newton_tol: 1e-8,
            max_outer: 500,
            max_newton: 50,
        }
    }
}

impl ModelConstants {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |m: &str| Err(PhysicsError::InvalidConstants(m.into()));
        let all = [
            self.alpha, self.beta, self.tau, self.gamma, self.eps_p, self.eps_m, self.eps_s, self.u_b, self.u_t,
            self.sigma, self.eta, self.theta, self.cap, self.omega, self.outer_tol, self.newton_tol,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return bad("all constants must be finite");
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.tau > 0.0 && self.gamma > 0.0) {
            return bad("alpha, beta, tau, gamma must be positive");
        }
        if !(self.eps_p > 0.0 && self.eps_m > 0.0 && self.eps_s > 0.0) {
            return bad("permittivities must be positive");
        }
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return bad("omega must lie in (0, 1)");
        }
        if !(self.cap > 0.0) {
            return bad("exponent cap must be positive");
        }
        if !(self.eta >= 0.0 && self.theta > 0.0) {
            return bad("eta must be non-negative and theta positive");
        }
        if !(self.outer_tol > 0.0 && self.newton_tol > 0.0) || self.max_outer == 0 || self.max_newton == 0 {
            return bad("tolerances and iteration limits must be positive");
        }
        Ok(())
    }
}

/// Position-dependent diffusion: bulk value outside the membrane slab, channel
/// value in its core, and a smoothstep blend across buffers of width `eta`
/// inside each membrane plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionProfile {
    pub membrane: Option<(f64, f64)>,
    pub eta: f64,
}

impl DiffusionProfile {
    /// Blend weight in `[0, 1]`: 0 in the bulk, 1 in the channel core.
    pub fn channel_weight(&self, z: f64) -> f64 {
        let Some((z1, z2)) = self.membrane else {
            return 0.0;
        };
        if z <= z1 || z >= z2 {
            return 0.0;
        }
        if self.eta <= 0.0 {
            return 1.0;
        }
        let t = ((z - z1).min(z2 - z) / self.eta).min(1.0);
        t * t * (3.0 - 2.0 * t)
    }

    pub fn value(&self, d_bulk: f64, d_channel: f64, z: f64) -> f64 {
        let s = self.channel_weight(z);
        d_bulk * (1.0 - s) + d_channel * s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn couplings_near_published_values() {
        let (a, b, t, g) = couplings(298.15);
        assert!((a / 7042.9399 - 1.0).abs() < 1e-3, "{a}");
        assert!((b / 4.2414 - 1.0).abs() < 1e-3, "{b}");
        assert!((t / 4.392 - 1.0).abs() < 1e-3, "{t}");
        assert!((g / 6.022e-4 - 1.0).abs() < 1e-4, "{g}");
    }

    #[test]
    fn profile_values() {
        let p = DiffusionProfile { membrane: Some((-10.0, 10.0)), eta: 2.0 };
        let (db, dc) = (0.203, 0.055 * 0.203);
        assert_eq!(p.value(db, dc, 0.0), dc);
        assert_eq!(p.value(db, dc, 30.0), db);
        assert!((p.value(db, dc, 9.0) - 0.5 * (db + dc)).abs() < 1e-12);
        assert!((p.value(db, dc, -9.0) - 0.5 * (db + dc)).abs() < 1e-12);
        let mut last = p.value(db, dc, 10.0);
        for k in 1..=40 {
            let v = p.value(db, dc, 10.0 - k as f64 * 0.05);
            assert!(v <= last + 1e-15);
            last = v;
        }
    }

    #[test]
    fn defaults_validate() {
        ModelConstants::default().validate().unwrap();
        let c = ModelConstants { omega: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
