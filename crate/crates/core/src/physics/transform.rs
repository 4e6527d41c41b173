use super::{ModelConstants, PhysicsError, SpeciesSet};

/// `exp(clamp(x, -cap, cap))`.
#[inline]
pub fn capped_exp(x: f64, cap: f64) -> f64 {
    x.clamp(-cap, cap).exp()
}

/// `1 − γ Σ v_j c_j`, required to be positive.
pub fn water_fraction(set: &SpeciesSet, gamma: f64, c: &[f64]) -> Result<f64, PhysicsError> {
    let w = 1.0 - gamma * set.iter().zip(c).map(|(s, c)| s.v * c).sum::<f64>();
    if w > 0.0 {
        Ok(w)
    } else {
        Err(PhysicsError::Infeasible { fraction: w })
    }
}

fn check_positive(c: &[f64]) -> Result<(), PhysicsError> {
    match c.iter().position(|&x| !(x > 0.0)) {
        Some(i) => Err(PhysicsError::NonPositiveConcentration { species: i, value: c[i] }),
        None => Ok(()),
    }
}

/// `c̄_i = c_i e^{Z_i u} / (1 − γ Σ v_j c_j)^{v_i/v₀}`.
pub fn slotboom_forward(set: &SpeciesSet, k: &ModelConstants, u: f64, c: &[f64]) -> Result<Vec<f64>, PhysicsError> {
    check_positive(c)?;
    let w = water_fraction(set, k.gamma, c)?;
    Ok(set
        .iter()
        .enumerate()
        .map(|(i, s)| c[i] * capped_exp(s.z as f64 * u, k.cap) / w.powf(set.exponent(i)))
        .collect())
}

/// `D̂_i = D_i e^{−Z_i u} (1 − γ Σ v_j c_j)^{v_i/v₀}` for a given local `D_i`.
pub fn transformed_diffusion(
    set: &SpeciesSet,
    k: &ModelConstants,
    i: usize,
    d_i: f64,
    u: f64,
    c: &[f64],
) -> Result<f64, PhysicsError> {
    let w = water_fraction(set, k.gamma, c)?;
    Ok(d_i * capped_exp(-(set.get(i).z as f64) * u, k.cap) * w.powf(set.exponent(i)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Bottom,
    Top,
}

/// Dirichlet value of `c̄_i` on the bottom or top face.
pub fn boundary_conc(set: &SpeciesSet, k: &ModelConstants, i: usize, surface: Surface) -> Result<f64, PhysicsError> {
    let u = match surface {
        Surface::Bottom => k.u_b,
        Surface::Top => k.u_t,
    };
    let cb: Vec<f64> = set.iter().map(|s| s.c_b).collect();
    let w = water_fraction(set, k.gamma, &cb)?;
    Ok(cb[i] * capped_exp(set.get(i).z as f64 * u, k.cap) / w.powf(set.exponent(i)))
}

/// `Z_i u + ln(c_i / c_i^b) − (v_i/v₀) ln(1 − γ Σ v_j c_j)`, the
/// electrochemical potential in units of `k_B T`.
pub fn electrochemical_potential(
    set: &SpeciesSet,
    k: &ModelConstants,
    i: usize,
    u: f64,
    c: &[f64],
) -> Result<f64, PhysicsError> {
    check_positive(c)?;
    let w = water_fraction(set, k.gamma, c)?;
    let s = set.get(i);
    Ok(s.z as f64 * u + (c[i] / s.c_b).ln() - set.exponent(i) * w.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::IonSpecies;

    fn consts() -> ModelConstants {
        ModelConstants { gamma: 6.022e-4, ..Default::default() }
    }

    #[test]
    fn single_chloride_forward() {
        let k = consts();
        let set = SpeciesSet::new(vec![IonSpecies::new("Cl", -1, 24.8384, 0.1, 0.203)], k.gamma).unwrap();
        let cb = slotboom_forward(&set, &k, 0.0, &[0.1]).unwrap();
        assert!((cb[0] - 0.1 / (1.0 - 6.022e-4 * 24.8384 * 0.1)).abs() < 1e-15);
        assert!((cb[0] - 0.1001499).abs() < 1e-7);
    }

    #[test]
    fn reduction_formulas() {
        let k = consts();
        let set = SpeciesSet::standard_mixture(k.gamma).without_sizes(k.gamma).unwrap();
        let c = [0.2, 0.05, 0.3, 0.11];
        let u = 1.7;
        let cb = slotboom_forward(&set, &k, u, &c).unwrap();
        for i in 0..4 {
            let z = set.get(i).z as f64;
            assert_eq!(cb[i], c[i] * (z * u).exp());
            assert_eq!(transformed_diffusion(&set, &k, i, 0.5, u, &c).unwrap(), 0.5 * (-z * u).exp());
            assert_eq!(boundary_conc(&set, &k, i, Surface::Top).unwrap(), 0.1);
        }
    }

    #[test]
    fn cap_applies_both_signs() {
        let k = consts();
        let set = SpeciesSet::standard_mixture(k.gamma).without_sizes(k.gamma).unwrap();
        let c = [0.1; 4];
        assert_eq!(transformed_diffusion(&set, &k, 0, 1.0, 100.0, &c).unwrap(), 45f64.exp());
        assert_eq!(transformed_diffusion(&set, &k, 0, 1.0, -100.0, &c).unwrap(), (-45f64).exp());
    }

    #[test]
    fn potential_zero_at_bulk() {
        let k = consts();
        let set = SpeciesSet::standard_mixture(k.gamma).without_sizes(k.gamma).unwrap();
        assert_eq!(electrochemical_potential(&set, &k, 1, 0.0, &[0.1; 4]).unwrap(), 0.0);
        assert!(electrochemical_potential(&set, &k, 1, 0.0, &[0.1, 0.0, 0.1, 0.1]).is_err());
    }

    #[test]
    fn boundary_scales_with_potential() {
        let mut k = consts();
        let set = SpeciesSet::standard_mixture(k.gamma);
        let g0 = boundary_conc(&set, &k, 0, Surface::Top).unwrap();
        k.u_t = 0.8;
        let g1 = boundary_conc(&set, &k, 0, Surface::Top).unwrap();
        assert!((g1 / g0 - (-0.8f64).exp()).abs() < 1e-14);
    }
}
