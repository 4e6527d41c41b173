use super::PhysicsError;

pub const MAX_SPECIES: usize = crate::sparse::MAX_DENSE;

pub fn volume_from_radius(r: f64) -> f64 {
    4.0 * std::f64::consts::PI * r.powi(3) / 3.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct IonSpecies {
    pub name: String,
    pub z: i32,
    /// Ion volume, Å³.
    pub v: f64,
    /// Bulk concentration, mol/L.
    pub c_b: f64,
    pub d_b: f64,
    /// Channel diffusion constant; `None` means `θ·d_b`.
    pub d_c: Option<f64>,
}

impl IonSpecies {
    pub fn new(name: &str, z: i32, v: f64, c_b: f64, d_b: f64) -> Self {
        Self { name: name.to_string(), z, v, c_b, d_b, d_c: None }
    }

    pub fn channel_diffusion(&self, theta: f64) -> f64 {
        self.d_c.unwrap_or(theta * self.d_b)
    }
}

/// Ordered species list. Either every ion has positive volume, or every ion
/// has zero volume (classical PNP reduction).
#[derive(Clone, Debug, PartialEq)]
pub struct SpeciesSet {
    species: Vec<IonSpecies>,
    v0: f64,
    reduced: bool,
    exponents: Vec<f64>,
}

impl SpeciesSet {
    pub fn new(species: Vec<IonSpecies>, gamma: f64) -> Result<Self, PhysicsError> {
        let bad = |m: String| Err(PhysicsError::InvalidSpecies(m));
        if species.is_empty() || species.len() > MAX_SPECIES {
            return bad(format!("species count must be in 1..={MAX_SPECIES}"));
        }
        for s in &species {
            if !(s.c_b > 0.0 && s.c_b.is_finite()) {
                return bad(format!("{}: bulk concentration must be positive", s.name));
            }
            if !(s.d_b > 0.0 && s.d_b.is_finite()) || s.d_c.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
                return bad(format!("{}: diffusion constants must be positive", s.name));
            }
            if !(s.v >= 0.0 && s.v.is_finite()) {
                return bad(format!("{}: ion volume must be non-negative", s.name));
            }
        }
        let zeros = species.iter().filter(|s| s.v == 0.0).count();
        if zeros != 0 && zeros != species.len() {
            return bad("ion volumes must be all zero or all positive".into());
        }
        let reduced = zeros == species.len();
        let v0 = if reduced { 1.0 } else { species.iter().map(|s| s.v).fold(f64::INFINITY, f64::min) };
        let exponents = species.iter().map(|s| if reduced { 0.0 } else { s.v / v0 }).collect();
        let set = Self { species, v0, reduced, exponents };
        let frac = 1.0 - gamma * set.species.iter().map(|s| s.v * s.c_b).sum::<f64>();
        if !(frac > 0.0) {
            return Err(PhysicsError::Infeasible { fraction: frac });
        }
        Ok(set)
    }

    /// Cl⁻, NO₃⁻, Na⁺, K⁺ at 0.1 mol/L with volumes from ionic radii.
    pub fn standard_mixture(gamma: f64) -> Self {
        let mk = |name: &str, z: i32, r: f64, d: f64| IonSpecies::new(name, z, volume_from_radius(r), 0.1, d);
        Self::new(
            vec![mk("Cl", -1, 1.81, 0.203), mk("NO3", -1, 2.64, 0.190), mk("Na", 1, 0.95, 0.133), mk("K", 1, 1.33, 0.196)],
            gamma,
        )
        .expect("standard mixture is feasible")
    }

    /// Same species with every volume set to zero.
    pub fn without_sizes(&self, gamma: f64) -> Result<Self, PhysicsError> {
        Self::new(self.species.iter().map(|s| IonSpecies { v: 0.0, ..s.clone() }).collect(), gamma)
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }

    pub fn species(&self) -> &[IonSpecies] {
        &self.species
    }

    pub fn get(&self, i: usize) -> &IonSpecies {
        &self.species[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, IonSpecies> {
        self.species.iter()
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced
    }

    /// `v_i / v₀`, zero in reduction mode.
    pub fn exponent(&self, i: usize) -> f64 {
        self.exponents[i]
    }

    pub fn charges(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.z as f64).collect()
    }

    pub fn is_charge_neutral(&self) -> bool {
        self.species.iter().map(|s| s.z as f64 * s.c_b).sum::<f64>().abs() < 1e-12
    }
}

impl<'a> IntoIterator for &'a SpeciesSet {
    type Item = &'a IonSpecies;
    type IntoIter = std::slice::Iter<'a, IonSpecies>;

    fn into_iter(self) -> Self::IntoIter {
        self.species.iter()
    }
}
