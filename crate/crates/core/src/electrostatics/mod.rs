//! The potential split `u = G + Ψ + Φ̃`: the free-space Coulomb part `G`, the
//! boundary/interface correction `Ψ` (solved once) and the ionic part `Φ̃`.

mod atoms;

use thiserror::Error;

pub use atoms::{locate, AtomicCharges};

use crate::exec::Execution;
use crate::fem::{apply_dirichlet, dirichlet_rhs, DirichletSet, FemError, P1Space};
use crate::mesh::{FacetLabel, LabeledMesh, MeshError, Point, Region, SolventSubmesh};
use crate::physics::{ModelConstants, SpeciesSet};
use crate::sparse::{LinearSolveSpec, LinearSolver, SolveError};

#[derive(Debug, Error)]
pub enum ElectroError {
    #[error("atom {atom} lies within {distance:.3e} Å of mesh node {node}")]
    Collision { atom: usize, node: usize, distance: f64 },
    #[error("atom {atom} lies outside the mesh")]
    AtomOutside { atom: usize },
    #[error("atom {atom} is not inside a protein tetrahedron")]
    AtomNotInProtein { atom: usize },
    #[error("invalid atoms: {0}")]
    InvalidAtoms(String),
    #[error("atom file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("species field count {found} does not match species count {expected}")]
    SpeciesCount { expected: usize, found: usize },
}

/// A fixed charge distribution `ρ` in the protein, with `−ε_p ΔG = α ρ` in
/// free space.
pub trait ChargeSource: Sync {
    /// `∫ ρ(r') / |r − r'| dr'`, so that `G = α/(4π ε_p) · kernel`.
    fn kernel(&self, r: Point) -> f64;
    /// Points where the kernel is singular or steep; face quadrature refines
    /// toward them.
    fn centers(&self) -> &[Point];
    /// `∫ ρ φ_a` for every P1 basis function of `space`.
    fn density_load(&self, mesh: &LabeledMesh, space: &P1Space) -> Result<Vec<f64>, ElectroError>;
}

pub fn coulomb_scale(k: &ModelConstants) -> f64 {
    k.alpha / (4.0 * std::f64::consts::PI * k.eps_p)
}

/// `G` at each point.
pub fn eval_g(source: &dyn ChargeSource, k: &ModelConstants, points: &[Point], exec: Execution) -> Vec<f64> {
    let s = coulomb_scale(k);
    exec.map(points.len(), |i| s * source.kernel(points[i]))
}

/// Per-tet relative permittivity.
pub fn permittivity(mesh: &LabeledMesh, k: &ModelConstants) -> Vec<f64> {
    mesh.regions()
        .iter()
        .map(|r| match r {
            Region::Solvent => k.eps_s,
            Region::Protein => k.eps_p,
            Region::Membrane => k.eps_m,
        })
        .collect()
}

// 7-point degree-5 rule on triangles (barycentric, weights sum to 1).
const TRI7: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_770;
    const B1: f64 = 0.470_142_064_105_115;
    const A2: f64 = 0.797_426_985_353_087;
    const B2: f64 = 0.101_286_507_323_456;
    const W1: f64 = 0.132_394_152_788_506;
    const W2: f64 = 0.125_939_180_544_827;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

const MAX_DEPTH: usize = 8;

/// `∫_F f dS` with recursive 1:4 refinement near `centers`.
fn triangle_integral(p: [Point; 3], centers: &[Point], f: &dyn Fn(Point) -> f64, depth: usize) -> f64 {
    let e = |a: Point, b: Point| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    let h = e(p[0], p[1]).max(e(p[1], p[2])).max(e(p[2], p[0]));
    let cen: Point = std::array::from_fn(|k| (p[0][k] + p[1][k] + p[2][k]) / 3.0);
    if depth < MAX_DEPTH && centers.iter().any(|c| e(*c, cen) < 2.0 * h) {
        let m = |a: Point, b: Point| -> Point { std::array::from_fn(|k| 0.5 * (a[k] + b[k])) };
        let (m01, m12, m20) = (m(p[0], p[1]), m(p[1], p[2]), m(p[2], p[0]));
        return [[p[0], m01, m20], [m01, p[1], m12], [m20, m12, p[2]], [m01, m12, m20]]
            .into_iter()
            .map(|t| triangle_integral(t, centers, f, depth + 1))
            .sum();
    }
    let area = crate::mesh::triangle_area(&p);
    TRI7.iter()
        .map(|(l, w)| w * f(std::array::from_fn(|k| l[0] * p[0][k] + l[1] * p[1][k] + l[2] * p[2][k])))
        .sum::<f64>()
        * area
}

/// `∫_T ∇G dr = Σ_F (∫_F G dS) n_F` for each tetrahedron.
pub fn integrated_gradients(
    space: &P1Space,
    source: &dyn ChargeSource,
    k: &ModelConstants,
) -> Vec<[f64; 3]> {
    let s = coulomb_scale(k);
    let f = |r: Point| source.kernel(r);
    space.execution().map(space.num_tets(), |t| {
        let tet = space.tets()[t];
        let g = space.geometry(t);
        let mut out = [0.0; 3];
        for a in 0..4 {
            // face opposite vertex a; its outward normal is −∇λ_a/|∇λ_a|
            let face = [tet[(a + 1) % 4], tet[(a + 2) % 4], tet[(a + 3) % 4]].map(|v| space.vertices()[v]);
            let gn = g.grads[a];
            let len = (gn[0] * gn[0] + gn[1] * gn[1] + gn[2] * gn[2]).sqrt();
            let integral = triangle_integral(face, source.centers(), &f, 0);
            for d in 0..3 {
                out[d] -= s * integral * gn[d] / len;
            }
        }
        out
    })
}

/// The Poisson operator `a(·,·)` on Ω with Dirichlet rows on ΓD, prepared once
/// and shared by the Ψ and Φ̃ solves.
pub struct PoissonOperator {
    space: P1Space,
    stiffness: crate::sparse::CsrMatrix,
    solver: LinearSolver,
    spec: LinearSolveSpec,
    solvent_mass: crate::sparse::CsrMatrix,
    bottom: Vec<usize>,
    top: Vec<usize>,
    solvent_mask: Vec<bool>,
}

impl PoissonOperator {
    pub fn new(
        mesh: &LabeledMesh,
        k: &ModelConstants,
        spec: LinearSolveSpec,
        exec: Execution,
    ) -> Result<Self, ElectroError> {
        let space = P1Space::new(mesh, exec)?;
        let stiffness = space.positive_stiffness(&permittivity(mesh, k))?;
        let (bottom, top) = mesh.dirichlet_nodes();
        let d = DirichletSet::homogeneous(bottom.iter().chain(&top).copied().collect())?;
        let (a, _) = apply_dirichlet(&stiffness, &vec![0.0; space.num_nodes()], &d)?;
        let solver = LinearSolver::new(a, spec)?;
        let solvent_mask: Vec<bool> = mesh.regions().iter().map(|&r| r == Region::Solvent).collect();
        let solvent_mass = space.mass_masked(&solvent_mask)?;
        Ok(Self { space, stiffness, solver, spec, solvent_mass, bottom, top, solvent_mask })
    }

    pub fn space(&self) -> &P1Space {
        &self.space
    }

    /// Unconstrained `a(·,·)` matrix.
    pub fn stiffness(&self) -> &crate::sparse::CsrMatrix {
        &self.stiffness
    }

    pub fn spec(&self) -> LinearSolveSpec {
        self.spec
    }

    /// Mass matrix over solvent tetrahedra only.
    pub fn solvent_mass(&self) -> &crate::sparse::CsrMatrix {
        &self.solvent_mass
    }

    /// Free (non-Dirichlet) node indicator on Ω.
    pub fn free_nodes(&self) -> Vec<bool> {
        let mut free = vec![true; self.space.num_nodes()];
        for &v in self.bottom.iter().chain(&self.top) {
            free[v] = false;
        }
        free
    }

    pub fn bottom_nodes(&self) -> &[usize] {
        &self.bottom
    }

    pub fn top_nodes(&self) -> &[usize] {
        &self.top
    }

    /// Solves `a(x, v) = b(v)` on U₀ with `x = bottom/top values` on ΓD.
    pub fn solve(
        &self,
        b: &[f64],
        bottom: impl Fn(usize) -> f64,
        top: impl Fn(usize) -> f64,
        guess: Option<&[f64]>,
    ) -> Result<Vec<f64>, ElectroError> {
        let nodes: Vec<usize> = self.bottom.iter().chain(&self.top).copied().collect();
        let vals = self.bottom.iter().map(|&v| bottom(v)).chain(self.top.iter().map(|&v| top(v))).collect();
        let d = DirichletSet::new(nodes, vals)?;
        let rhs = dirichlet_rhs(&self.stiffness, b, &d)?;
        Ok(self.solver.solve_from(&rhs, guess)?)
    }

    /// Right-hand side of the Ψ problem:
    /// `α ∫ρ v − a(G, v) + τσ ∫_Γm v`.
    pub fn psi_rhs(
        &self,
        mesh: &LabeledMesh,
        source: &dyn ChargeSource,
        k: &ModelConstants,
    ) -> Result<Vec<f64>, ElectroError> {
        let n = self.space.num_nodes();
        let mut b = vec![0.0; n];
        if !source.centers().is_empty() {
            let load = source.density_load(mesh, &self.space)?;
            let eps = permittivity(mesh, k);
            let ig = integrated_gradients(&self.space, source, k);
            for (bi, l) in b.iter_mut().zip(&load) {
                *bi += k.alpha * l;
            }
            for (t, tet) in self.space.tets().iter().enumerate() {
                let g = self.space.geometry(t);
                for a in 0..4 {
                    let d: f64 = (0..3).map(|q| g.grads[a][q] * ig[t][q]).sum();
                    b[tet[a]] -= eps[t] * d;
                }
            }
        }
        if k.sigma != 0.0 {
            let s = self.space.surface_load(mesh.facets_with(FacetLabel::MembraneSolvent).map(|f| (f, k.tau * k.sigma)));
            for (bi, si) in b.iter_mut().zip(&s) {
                *bi += si;
            }
        }
        Ok(b)
    }

    /// Ψ with `Ψ = g − G` on ΓD (`g = u_b` at the bottom, `u_t` at the top).
    pub fn solve_psi(
        &self,
        mesh: &LabeledMesh,
        source: &dyn ChargeSource,
        k: &ModelConstants,
    ) -> Result<Vec<f64>, ElectroError> {
        let b = self.psi_rhs(mesh, source, k)?;
        let s = coulomb_scale(k);
        let verts = mesh.vertices();
        let g = |v: usize| s * source.kernel(verts[v]);
        self.solve(&b, |v| k.u_b - g(v), |v| k.u_t - g(v), None)
    }

    /// Φ̃ from solvent concentrations: `a(q, v) = β Σ Z_j ∫_{D_s} c_j v`, `q = 0` on ΓD.
    pub fn solve_phi_tilde(
        &self,
        sub: &SolventSubmesh,
        species: &SpeciesSet,
        c: &[Vec<f64>],
        k: &ModelConstants,
        guess: Option<&[f64]>,
    ) -> Result<Vec<f64>, ElectroError> {
        let b = self.phi_tilde_rhs(sub, species, c, k)?;
        self.solve(&b, |_| 0.0, |_| 0.0, guess)
    }

    pub fn phi_tilde_rhs(
        &self,
        sub: &SolventSubmesh,
        species: &SpeciesSet,
        c: &[Vec<f64>],
        k: &ModelConstants,
    ) -> Result<Vec<f64>, ElectroError> {
        if c.len() != species.len() {
            return Err(ElectroError::SpeciesCount { expected: species.len(), found: c.len() });
        }
        let m = sub.num_vertices();
        let mut rho = vec![0.0; m];
        for (s, ci) in species.iter().zip(c) {
            if ci.len() != m {
                return Err(FemError::LengthMismatch { expected: m, found: ci.len() }.into());
            }
            let z = k.beta * s.z as f64;
            for (r, x) in rho.iter_mut().zip(ci) {
                *r += z * x;
            }
        }
        let full = sub.prolong(&rho, 0.0)?;
        Ok(self.space.load_nodal(&full, Some(&self.solvent_mask))?)
    }
}

/// One-shot Ψ solve.
pub fn solve_psi(
    mesh: &LabeledMesh,
    source: &dyn ChargeSource,
    k: &ModelConstants,
    spec: LinearSolveSpec,
) -> Result<Vec<f64>, ElectroError> {
    PoissonOperator::new(mesh, k, spec, Execution::default())?.solve_psi(mesh, source, k)
}
