//! Block 1: the transformed Nernst–Planck solves `∇·D̂_i ∇c̄_i = 0` on the
//! solvent, one independent symmetric problem per species, plus fluxes and
//! cross-section currents.

use thiserror::Error;

use crate::exec::Execution;
use crate::fem::{apply_dirichlet, DirichletSet, FemError, P1Space};
use crate::mesh::{BoxExtents, LabeledMesh, MeshError, SolventSubmesh};
use crate::physics::{
    boundary_conc, capped_exp, slotboom_forward, water_fraction, DiffusionProfile, ModelConstants, PhysicsError,
    SpeciesSet, Surface,
};
use crate::sparse::{LinearSolveSpec, LinearSolver, SolveError};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("species {species}: {source}")]
    Physics { species: usize, source: PhysicsError },
    #[error("species {species}: {source}")]
    Fem { species: usize, source: FemError },
    #[error("species {species}: {source}")]
    Solve { species: usize, source: SolveError },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("plane z = {z} lies outside the box")]
    PlaneOutside { z: f64 },
    #[error("expected {expected} fields of length {len}")]
    FieldShape { expected: usize, len: usize },
}

/// Per-species data on the solvent submesh for the Block-1 solves.
pub struct Transport {
    space: P1Space,
    species: SpeciesSet,
    constants: ModelConstants,
    /// `D_i` at each solvent node.
    diffusion: Vec<Vec<f64>>,
    bottom: Vec<usize>,
    top: Vec<usize>,
    extents: BoxExtents,
    spec: LinearSolveSpec,
}

impl Transport {
    pub fn new(
        mesh: &LabeledMesh,
        sub: &SolventSubmesh,
        species: &SpeciesSet,
        k: &ModelConstants,
        spec: LinearSolveSpec,
        exec: Execution,
    ) -> Result<Self, FemError> {
        let space = P1Space::new(sub, exec)?;
        let profile = DiffusionProfile { membrane: mesh.membrane_planes(), eta: k.eta };
        let diffusion = species
            .iter()
            .map(|s| {
                let dc = s.channel_diffusion(k.theta);
                sub.vertices().iter().map(|p| profile.value(s.d_b, dc, p[2])).collect()
            })
            .collect();
        Ok(Self {
            space,
            species: species.clone(),
            constants: k.clone(),
            diffusion,
            bottom: sub.bottom_nodes().to_vec(),
            top: sub.top_nodes().to_vec(),
            extents: mesh.extents(),
            spec,
        })
    }

    pub fn space(&self) -> &P1Space {
        &self.space
    }

    pub fn species(&self) -> &SpeciesSet {
        &self.species
    }

    pub fn diffusion(&self, i: usize) -> &[f64] {
        &self.diffusion[i]
    }

    fn check_fields(&self, c: &[Vec<f64>]) -> Result<(), TransportError> {
        let n = self.space.num_nodes();
        if c.len() != self.species.len() || c.iter().any(|f| f.len() != n) {
            return Err(TransportError::FieldShape { expected: self.species.len(), len: n });
        }
        Ok(())
    }

    /// Concentrations of all species at node `v`.
    fn node_conc(c: &[Vec<f64>], v: usize) -> [f64; crate::physics::MAX_SPECIES] {
        let mut out = [0.0; crate::physics::MAX_SPECIES];
        for (o, f) in out.iter_mut().zip(c) {
            *o = f[v];
        }
        out
    }

    /// Nodal `D̂_i = D_i e^{−Z_i u} W^{v_i/v₀}`.
    pub fn nodal_dhat(&self, i: usize, u: &[f64], c: &[Vec<f64>]) -> Result<Vec<f64>, TransportError> {
        self.check_fields(c)?;
        let k = &self.constants;
        let n = self.species.len();
        let z = self.species.get(i).z as f64;
        let e = self.species.exponent(i);
        (0..self.space.num_nodes())
            .map(|v| {
                let cv = Self::node_conc(c, v);
                let w = water_fraction(&self.species, k.gamma, &cv[..n])
                    .map_err(|source| TransportError::Physics { species: i, source })?;
                Ok(self.diffusion[i][v] * capped_exp(-z * u[v], k.cap) * w.powf(e))
            })
            .collect()
    }

    /// Dirichlet values `(ḡ_i bottom, ḡ_i top)`.
    pub fn boundary_values(&self, i: usize) -> Result<(f64, f64), TransportError> {
        let f = |s| {
            boundary_conc(&self.species, &self.constants, i, s)
                .map_err(|source| TransportError::Physics { species: i, source })
        };
        Ok((f(Surface::Bottom)?, f(Surface::Top)?))
    }

    /// Assembled and constrained Block-1 system for species `i`.
    pub fn system(
        &self,
        i: usize,
        u: &[f64],
        c: &[Vec<f64>],
    ) -> Result<(crate::sparse::CsrMatrix, Vec<f64>), TransportError> {
        let fem = |source| TransportError::Fem { species: i, source };
        let dhat = self.nodal_dhat(i, u, c)?;
        let weights = self.space.tet_means(&dhat).map_err(fem)?;
        let a = self.space.positive_stiffness(&weights).map_err(fem)?;
        let (gb, gt) = self.boundary_values(i)?;
        let nodes: Vec<usize> = self.bottom.iter().chain(&self.top).copied().collect();
        let vals = self.bottom.iter().map(|_| gb).chain(self.top.iter().map(|_| gt)).collect();
        let d = DirichletSet::new(nodes, vals).map_err(fem)?;
        apply_dirichlet(&a, &vec![0.0; self.space.num_nodes()], &d).map_err(fem)
    }

    /// Solves the transformed problem for species `i`; reads only `u` and `c`.
    pub fn solve_species(
        &self,
        i: usize,
        u: &[f64],
        c: &[Vec<f64>],
        guess: Option<&[f64]>,
    ) -> Result<Vec<f64>, TransportError> {
        let (a, b) = self.system(i, u, c)?;
        let solve = |source| TransportError::Solve { species: i, source };
        let p = LinearSolver::new(a, self.spec).map_err(solve)?.solve_from(&b, guess).map_err(solve)?;
        let (gb, gt) = self.boundary_values(i)?;
        let (lo, hi) = (gb.min(gt), gb.max(gt));
        let tol = 1e-8 * hi.abs().max(1.0);
        if let Some(v) = p.iter().position(|&x| x < lo - tol || x > hi + tol) {
            log::warn!("species {i}: c̄ = {:.6e} at node {v} outside boundary range [{lo:.6e}, {hi:.6e}]", p[v]);
        }
        Ok(p)
    }

    /// All species, concurrently under the execution policy.
    pub fn solve_all(
        &self,
        u: &[f64],
        c: &[Vec<f64>],
        guesses: Option<&[Vec<f64>]>,
    ) -> Result<Vec<Vec<f64>>, TransportError> {
        self.check_fields(c)?;
        self.space
            .execution()
            .try_map(self.species.len(), |i| self.solve_species(i, u, c, guesses.map(|g| g[i].as_slice())))
    }

    /// Both flux forms per tetrahedron.
    pub fn compute_flux(&self, i: usize, u: &[f64], c: &[Vec<f64>]) -> Result<FluxField, TransportError> {
        self.check_fields(c)?;
        let k = &self.constants;
        let n = self.species.len();
        let set = &self.species;
        let phys = |source| TransportError::Physics { species: i, source };
        let tets = self.space.tets();
        let mut size_form = Vec::with_capacity(tets.len());
        let mut slotboom_form = Vec::with_capacity(tets.len());
        let mut max_defect = 0.0f64;
        for (t, tet) in tets.iter().enumerate() {
            let g = self.space.geometry(t);
            let mean = |f: &[f64]| 0.25 * tet.iter().map(|&v| f[v]).sum::<f64>();
            let cm: Vec<f64> = c.iter().map(|f| mean(f)).collect();
            let grad_c: Vec<[f64; 3]> = c.iter().map(|f| g.gradient(tet.map(|v| f[v]))).collect();
            let um = mean(u);
            let grad_u = g.gradient(tet.map(|v| u[v]));
            let d = mean(&self.diffusion[i]);
            let (js, _) = flux_pointwise(set, k, i, d, um, grad_u, &cm, &grad_c).map_err(phys)?;
            size_form.push(js);
            let cbar: Vec<f64> = tet
                .iter()
                .map(|&v| {
                    let cv = Self::node_conc(c, v);
                    slotboom_forward(set, k, u[v], &cv[..n]).map(|x| x[i])
                })
                .collect::<Result<_, _>>()
                .map_err(phys)?;
            let grad_cbar = g.gradient([cbar[0], cbar[1], cbar[2], cbar[3]]);
            let dh = d * capped_exp(-(set.get(i).z as f64) * um, k.cap)
                * water_fraction(set, k.gamma, &cm).map_err(phys)?.powf(set.exponent(i));
            let jb = grad_cbar.map(|x| -dh * x);
            max_defect = max_defect.max((0..3).map(|q| (js[q] - jb[q]).abs()).fold(0.0, f64::max));
            slotboom_form.push(jb);
        }
        Ok(FluxField { size_form, slotboom_form, max_defect })
    }

    /// `I(z) = Σ_i Z_i ∫_{plane ∩ D_s} J_i·ẑ dS` for each plane.
    pub fn cross_section_current(&self, fluxes: &[Vec<[f64; 3]>], planes: &[f64]) -> Result<Vec<f64>, TransportError> {
        cross_section_current(&self.space, &self.extents, &self.species.charges(), fluxes, planes)
    }
}

/// Per-tet fluxes from the size-modified form and from `−D̂_i ∇c̄_i`, plus the
/// largest componentwise difference.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxField {
    pub size_form: Vec<[f64; 3]>,
    pub slotboom_form: Vec<[f64; 3]>,
    pub max_defect: f64,
}

/// Flux of species `i` at one point in both forms, from values and gradients
/// of `u` and `c`; the Slotboom form uses the chain rule for `∇c̄_i`.
#[allow(clippy::too_many_arguments)]
pub fn flux_pointwise(
    set: &SpeciesSet,
    k: &ModelConstants,
    i: usize,
    d: f64,
    u: f64,
    grad_u: [f64; 3],
    c: &[f64],
    grad_c: &[[f64; 3]],
) -> Result<([f64; 3], [f64; 3]), PhysicsError> {
    let w = water_fraction(set, k.gamma, c)?;
    let z = set.get(i).z as f64;
    let e = set.exponent(i);
    let sum_grad: [f64; 3] =
        std::array::from_fn(|q| k.gamma * set.iter().zip(grad_c).map(|(s, g)| s.v * g[q]).sum::<f64>());
    let bracket: [f64; 3] = std::array::from_fn(|q| grad_c[i][q] + z * c[i] * grad_u[q] + e * c[i] * sum_grad[q] / w);
    let size_form = bracket.map(|x| -d * x);
    let cbar = c[i] * capped_exp(z * u, k.cap) / w.powf(e);
    let grad_cbar: [f64; 3] =
        std::array::from_fn(|q| cbar * (grad_c[i][q] / c[i] + z * grad_u[q] + e * sum_grad[q] / w));
    let dhat = d * capped_exp(-z * u, k.cap) * w.powf(e);
    Ok((size_form, grad_cbar.map(|x| -dhat * x)))
}

/// Current through horizontal planes from per-tet species fluxes on `space`.
/// Vertices with `z ≥ z0` count as above the plane, so a plane through a mesh
/// layer is counted once.
pub fn cross_section_current(
    space: &P1Space,
    extents: &BoxExtents,
    charges: &[f64],
    fluxes: &[Vec<[f64; 3]>],
    planes: &[f64],
) -> Result<Vec<f64>, TransportError> {
    let nt = space.num_tets();
    if fluxes.len() != charges.len() || fluxes.iter().any(|f| f.len() != nt) {
        return Err(TransportError::FieldShape { expected: charges.len(), len: nt });
    }
    let mut out = Vec::with_capacity(planes.len());
    for &z0 in planes {
        if !(z0 >= extents.lo[2] && z0 <= extents.hi[2]) {
            return Err(TransportError::PlaneOutside { z: z0 });
        }
        let mut total = 0.0;
        for (t, tet) in space.tets().iter().enumerate() {
            let p = tet.map(|v| space.vertices()[v]);
            let above: Vec<usize> = (0..4).filter(|&a| p[a][2] - z0 >= 0.0).collect();
            let below: Vec<usize> = (0..4).filter(|&a| p[a][2] - z0 < 0.0).collect();
            if above.is_empty() || below.is_empty() {
                continue;
            }
            let cut = |a: usize, b: usize| -> [f64; 2] {
                let s = (z0 - p[a][2]) / (p[b][2] - p[a][2]);
                [p[a][0] + s * (p[b][0] - p[a][0]), p[a][1] + s * (p[b][1] - p[a][1])]
            };
            let poly: Vec<[f64; 2]> = match (above.len(), below.len()) {
                (1, 3) => below.iter().map(|&b| cut(above[0], b)).collect(),
                (3, 1) => above.iter().map(|&a| cut(a, below[0])).collect(),
                _ => vec![
                    cut(above[0], below[0]),
                    cut(above[0], below[1]),
                    cut(above[1], below[1]),
                    cut(above[1], below[0]),
                ],
            };
            let area = 0.5
                * (0..poly.len())
                    .map(|k| {
                        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
                        a[0] * b[1] - a[1] * b[0]
                    })
                    .sum::<f64>()
                    .abs();
            for (zc, f) in charges.iter().zip(fluxes) {
                total += zc * f[t][2] * area;
            }
        }
        out.push(total);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{extract_solvent_submesh, synth_channel_mesh, ChannelGeometry, Region};
    use crate::physics::IonSpecies;

    fn slab_setup(species: SpeciesSet, k: &ModelConstants) -> (LabeledMesh, SolventSubmesh, Transport) {
        let mesh = crate::mesh::structured_box([0.0; 3], [4.0, 4.0, 10.0], [3, 3, 6], |_| Region::Solvent).unwrap();
        let sub = extract_solvent_submesh(&mesh).unwrap();
        let tr = Transport::new(&mesh, &sub, &species, k, LinearSolveSpec::direct(), Execution::Sequential).unwrap();
        (mesh, sub, tr)
    }

    #[test]
    fn constant_boundary_gives_constant_solution() {
        let k = ModelConstants::default();
        let mesh = synth_channel_mesh(&ChannelGeometry::default().with_resolution(6)).unwrap();
        let sub = extract_solvent_submesh(&mesh).unwrap();
        let set = SpeciesSet::standard_mixture(k.gamma);
        for (spec, tol) in [(LinearSolveSpec::direct(), 1e-12), (LinearSolveSpec::krylov(), 1e-6)] {
            let tr = Transport::new(&mesh, &sub, &set, &k, spec, Execution::Parallel).unwrap();
            let m = sub.num_vertices();
            let c = vec![vec![0.1; m]; 4];
            let p = tr.solve_all(&vec![0.0; m], &c, None).unwrap();
            for i in 0..4 {
                let g = boundary_conc(&set, &k, i, Surface::Top).unwrap();
                let err = p[i].iter().fold(0.0f64, |e, x| e.max((x - g).abs()));
                assert!(err < tol * g, "species {i}: {err}");
            }
        }
    }

    #[test]
    fn linear_profile_on_slab() {
        let mut k = ModelConstants::default();
        k.u_t = 0.5;
        let set = SpeciesSet::new(vec![IonSpecies::new("X", 1, 0.0, 0.1, 1.0)], k.gamma).unwrap();
        let (_, sub, tr) = slab_setup(set.clone(), &k);
        let m = sub.num_vertices();
        let p = tr.solve_species(0, &vec![0.0; m], &[vec![0.1; m]], None).unwrap();
        let (gb, gt) = tr.boundary_values(0).unwrap();
        assert_eq!(gb, 0.1);
        for (x, v) in p.iter().zip(sub.vertices()) {
            let want = gb + (gt - gb) * v[2] / 10.0;
            assert!((x - want).abs() < 1e-10);
        }
        // constant flux −D (gt − gb)/L through every plane
        let cfield: Vec<f64> = p.clone();
        let f = tr.compute_flux(0, &vec![0.0; m], &[cfield]).unwrap();
        let jz = -(gt - gb) / 10.0;
        assert!(f.size_form.iter().all(|j| (j[2] - jz).abs() < 1e-10 && j[0].abs() < 1e-10));
        let cur = tr.cross_section_current(&[f.size_form], &[0.0, 2.5, 5.0, 7.3, 10.0]).unwrap();
        for (zc, &i) in [0.0, 2.5, 5.0, 7.3, 10.0].iter().zip(&cur) {
            if *zc > 0.0 {
                assert!((i - jz * 16.0).abs() < 0.02 * (jz * 16.0).abs(), "{zc}: {i}");
            }
        }
        assert!(tr.cross_section_current(&[vec![[0.0; 3]; sub.num_tets()]], &[11.0]).is_err());
    }

    #[test]
    fn operator_is_symmetric() {
        let k = ModelConstants::default();
        let mesh = synth_channel_mesh(&ChannelGeometry::default().with_resolution(4)).unwrap();
        let sub = extract_solvent_submesh(&mesh).unwrap();
        let set = SpeciesSet::standard_mixture(k.gamma);
        let tr = Transport::new(&mesh, &sub, &set, &k, LinearSolveSpec::direct(), Execution::Sequential).unwrap();
        let m = sub.num_vertices();
        let u: Vec<f64> = sub.vertices().iter().map(|p| 0.1 * p[2]).collect();
        let (a, _) = tr.system(1, &u, &vec![vec![0.1; m]; 4]).unwrap();
        assert!(a.symmetry_defect() < 1e-14 * a.max_abs());
    }

    #[test]
    fn pointwise_forms_agree() {
        let k = ModelConstants::default();
        let set = SpeciesSet::standard_mixture(k.gamma);
        let c = [0.12, 0.07, 0.2, 0.05];
        let gc = [[0.01, -0.02, 0.03], [0.0, 0.01, -0.01], [0.02, 0.02, 0.0], [-0.01, 0.0, 0.005]];
        for i in 0..4 {
            let (a, b) = flux_pointwise(&set, &k, i, 0.2, 0.7, [0.1, -0.3, 0.2], &c, &gc).unwrap();
            for q in 0..3 {
                assert!((a[q] - b[q]).abs() <= 1e-10 * a[q].abs().max(1e-12));
            }
        }
    }
}
