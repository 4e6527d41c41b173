//! Linear Lagrange (P1) finite elements on tetrahedra.

use thiserror::Error;

use crate::exec::Execution;
use crate::mesh::{LabeledMesh, Point, SolventSubmesh};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("non-finite coefficient on tetrahedron {tet}")]
    NonFiniteWeight { tet: usize },
    #[error("non-positive coefficient {value:.3e} on tetrahedron {tet}")]
    NonPositiveWeight { tet: usize, value: f64 },
    #[error("inverted or degenerate tetrahedron {tet}")]
    InvertedElement { tet: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid Dirichlet set: {0}")]
    InvalidDirichlet(String),
}

/// Anything with vertices and positively oriented tetrahedra.
pub trait TetMesh {
    fn vertices(&self) -> &[Point];
    fn tets(&self) -> &[[usize; 4]];
}

impl TetMesh for LabeledMesh {
    fn vertices(&self) -> &[Point] {
        LabeledMesh::vertices(self)
    }
    fn tets(&self) -> &[[usize; 4]] {
        LabeledMesh::tets(self)
    }
}

impl TetMesh for SolventSubmesh {
    fn vertices(&self) -> &[Point] {
        SolventSubmesh::vertices(self)
    }
    fn tets(&self) -> &[[usize; 4]] {
        SolventSubmesh::tets(self)
    }
}

/// Volume and barycentric gradients of one tetrahedron.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TetGeometry {
    pub volume: f64,
    pub grads: [[f64; 3]; 4],
}

impl TetGeometry {
    pub fn new(p: &[Point; 4]) -> Option<Self> {
        let e = [1, 2, 3].map(|k| [p[k][0] - p[0][0], p[k][1] - p[0][1], p[k][2] - p[0][2]]);
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
        };
        let c23 = cross(e[1], e[2]);
        let det = e[0][0] * c23[0] + e[0][1] * c23[1] + e[0][2] * c23[2];
        if !(det > 0.0) || !det.is_finite() {
            return None;
        }
        let d1 = c23.map(|x| x / det);
        let d2 = cross(e[2], e[0]).map(|x| x / det);
        let d3 = cross(e[0], e[1]).map(|x| x / det);
        let d0 = [0, 1, 2].map(|k| -(d1[k] + d2[k] + d3[k]));
        Some(Self { volume: det / 6.0, grads: [d0, d1, d2, d3] })
    }

    /// Local stiffness `K_ab = |T| ∇λ_a·∇λ_b`.
    pub fn stiffness(&self) -> [[f64; 4]; 4] {
        let mut k = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                let g = &self.grads;
                k[a][b] = self.volume * (g[a][0] * g[b][0] + g[a][1] * g[b][1] + g[a][2] * g[b][2]);
            }
        }
        k
    }

    /// Gradient of the P1 interpolant of nodal values `f`.
    pub fn gradient(&self, f: [f64; 4]) -> [f64; 3] {
        std::array::from_fn(|k| (0..4).map(|a| f[a] * self.grads[a][k]).sum())
    }
}

/// Degree-2 four-point tetrahedron rule in barycentric coordinates.
pub const TET_QUAD_4: [[f64; 4]; 4] = {
    const A: f64 = 0.585_410_196_624_968_5;
    const B: f64 = 0.138_196_601_125_010_5;
    [[A, B, B, B], [B, A, B, B], [B, B, A, B], [B, B, B, A]]
};

/// P1 space over a fixed mesh: element geometry, the sparsity pattern and the
/// element-to-CSR scatter map are computed once and reused by every assembly.
#[derive(Clone, Debug)]
pub struct P1Space {
    vertices: Vec<Point>,
    tets: Vec<[usize; 4]>,
    geom: Vec<TetGeometry>,
    pattern: CsrMatrix,
    scatter: Vec<[usize; 16]>,
    mass: CsrMatrix,
    exec: Execution,
}

impl P1Space {
    pub fn new(mesh: &impl TetMesh, exec: Execution) -> Result<Self, FemError> {
        let vertices = mesh.vertices().to_vec();
        let tets = mesh.tets().to_vec();
        let n = vertices.len();
        let geom = exec.try_map(tets.len(), |t| {
            TetGeometry::new(&tets[t].map(|v| vertices[v])).ok_or(FemError::InvertedElement { tet: t })
        })?;

        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for t in &tets {
            for &a in t {
                cols[a].extend_from_slice(t);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for c in &mut cols {
            c.sort_unstable();
            c.dedup();
            col_idx.extend_from_slice(c);
            row_ptr.push(col_idx.len());
        }
        let pattern = CsrMatrix::zeros_with_pattern(n, row_ptr, col_idx);
        let scatter: Vec<[usize; 16]> = tets
            .iter()
            .map(|t| std::array::from_fn(|k| pattern.position(t[k / 4], t[k % 4]).expect("pattern entry")))
            .collect();

        let mut space = Self { vertices, tets, geom, pattern: pattern.clone(), scatter, mass: pattern, exec };
        let m = space.accumulate(|t| {
            let v = space.geom[t].volume / 20.0;
            std::array::from_fn(|k| if k / 4 == k % 4 { 2.0 * v } else { v })
        });
        space.mass = m;
        Ok(space)
    }

    pub fn num_nodes(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn geometry(&self, t: usize) -> &TetGeometry {
        &self.geom[t]
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// Element matrices are computed under the execution policy, then summed
    /// in element order so the result does not depend on thread scheduling.
    fn accumulate(&self, local: impl Fn(usize) -> [f64; 16] + Sync + Send) -> CsrMatrix {
        let blocks = self.exec.map(self.tets.len(), local);
        let mut m = self.pattern.clone();
        let vals = m.values_mut();
        for (block, pos) in blocks.iter().zip(&self.scatter) {
            for k in 0..16 {
                vals[pos[k]] += block[k];
            }
        }
        m
    }

    /// Exact mass matrix over the tetrahedra where `mask` is true.
    pub fn mass_masked(&self, mask: &[bool]) -> Result<CsrMatrix, FemError> {
        self.check_len(mask.len(), self.num_tets())?;
        Ok(self.accumulate(|t| {
            let v = if mask[t] { self.geom[t].volume / 20.0 } else { 0.0 };
            std::array::from_fn(|k| if k / 4 == k % 4 { 2.0 * v } else { v })
        }))
    }

    /// `∫ w ∇φ_a·∇φ_b` with one coefficient per tetrahedron.
    pub fn stiffness(&self, weights: &[f64]) -> Result<CsrMatrix, FemError> {
        self.check_len(weights.len(), self.tets.len())?;
        if let Some(t) = weights.iter().position(|w| !w.is_finite()) {
            return Err(FemError::NonFiniteWeight { tet: t });
        }
        Ok(self.accumulate(|t| {
            let k = self.geom[t].stiffness();
            std::array::from_fn(|q| weights[t] * k[q / 4][q % 4])
        }))
    }

    /// Like [`P1Space::stiffness`] but every weight must be strictly positive.
    pub fn positive_stiffness(&self, weights: &[f64]) -> Result<CsrMatrix, FemError> {
        self.check_len(weights.len(), self.tets.len())?;
        if let Some(t) = weights.iter().position(|w| !(*w > 0.0)) {
            return Err(FemError::NonPositiveWeight { tet: t, value: weights[t] });
        }
        self.stiffness(weights)
    }

    /// Per-tet coefficient from nodal values by the mean of the four vertices.
    pub fn tet_means(&self, nodal: &[f64]) -> Result<Vec<f64>, FemError> {
        self.check_len(nodal.len(), self.num_nodes())?;
        Ok(self.tets.iter().map(|t| 0.25 * t.iter().map(|&v| nodal[v]).sum::<f64>()).collect())
    }

    /// `∫ f φ_a` for a P1 density, restricted to tets where `mask` is true.
    pub fn load_nodal(&self, density: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>, FemError> {
        self.check_len(density.len(), self.num_nodes())?;
        if let Some(m) = mask {
            self.check_len(m.len(), self.num_tets())?;
        }
        let mut b = vec![0.0; self.num_nodes()];
        for (t, tet) in self.tets.iter().enumerate() {
            if mask.is_some_and(|m| !m[t]) {
                continue;
            }
            let v = self.geom[t].volume / 20.0;
            let s: f64 = tet.iter().map(|&i| density[i]).sum();
            for &a in tet {
                b[a] += v * (s + density[a]);
            }
        }
        Ok(b)
    }

    /// `∫ f φ_a` for a pointwise function, four-point rule per tetrahedron.
    pub fn load_function(&self, f: impl Fn(Point) -> f64 + Sync + Send) -> Vec<f64> {
        let local = self.exec.map(self.tets.len(), |t| {
            let p = self.tets[t].map(|v| self.vertices[v]);
            let w = self.geom[t].volume / 4.0;
            let mut out = [0.0; 4];
            for lam in &TET_QUAD_4 {
                let x: Point = std::array::from_fn(|k| (0..4).map(|a| lam[a] * p[a][k]).sum());
                let fx = f(x);
                for a in 0..4 {
                    out[a] += w * fx * lam[a];
                }
            }
            out
        });
        let mut b = vec![0.0; self.num_nodes()];
        for (t, vals) in local.iter().enumerate() {
            for a in 0..4 {
                b[self.tets[t][a]] += vals[a];
            }
        }
        b
    }

    /// `∫_F σ φ_a dS` over triangles with one density value each.
    pub fn surface_load<'a>(&self, facets: impl IntoIterator<Item = (&'a [usize; 3], f64)>) -> Vec<f64> {
        let mut b = vec![0.0; self.num_nodes()];
        for (f, sigma) in facets {
            let area = crate::mesh::triangle_area(&f.map(|v| self.vertices[v]));
            for &a in f {
                b[a] += sigma * area / 3.0;
            }
        }
        b
    }

    pub fn l2_norm(&self, f: &[f64]) -> Result<f64, FemError> {
        self.check_len(f.len(), self.num_nodes())?;
        let mf = self.mass.mul_vec(f);
        Ok(f.iter().zip(&mf).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt())
    }

    pub fn l2_diff(&self, f: &[f64], g: &[f64]) -> Result<f64, FemError> {
        self.check_len(g.len(), f.len())?;
        let d: Vec<f64> = f.iter().zip(g).map(|(a, b)| a - b).collect();
        self.l2_norm(&d)
    }

    fn check_len(&self, found: usize, expected: usize) -> Result<(), FemError> {
        if found == expected {
            Ok(())
        } else {
            Err(FemError::LengthMismatch { expected, found })
        }
    }
}

/// Constrained nodes and their prescribed values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DirichletSet {
    nodes: Vec<usize>,
    values: Vec<f64>,
}

impl DirichletSet {
    pub fn new(nodes: Vec<usize>, values: Vec<f64>) -> Result<Self, FemError> {
        if nodes.len() != values.len() {
            return Err(FemError::LengthMismatch { expected: nodes.len(), found: values.len() });
        }
        let mut sorted = nodes.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(FemError::InvalidDirichlet("duplicate node".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FemError::InvalidDirichlet("non-finite boundary value".into()));
        }
        Ok(Self { nodes, values })
    }

    pub fn homogeneous(nodes: Vec<usize>) -> Result<Self, FemError> {
        let n = nodes.len();
        Self::new(nodes, vec![0.0; n])
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn mask(&self, n: usize) -> Result<Vec<Option<f64>>, FemError> {
        let mut m = vec![None; n];
        for (&i, &g) in self.nodes.iter().zip(&self.values) {
            if i >= n {
                return Err(FemError::InvalidDirichlet(format!("node {i} out of range")));
            }
            m[i] = Some(g);
        }
        Ok(m)
    }
}

/// Replaces constrained rows by identity rows and eliminates constrained
/// columns symmetrically, moving the known values to the right-hand side.
pub fn apply_dirichlet(a: &CsrMatrix, b: &[f64], d: &DirichletSet) -> Result<(CsrMatrix, Vec<f64>), FemError> {
    let n = a.dim();
    if b.len() != n {
        return Err(FemError::LengthMismatch { expected: n, found: b.len() });
    }
    let fixed = d.mask(n)?;
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let rp = m.row_ptr().to_vec();
    let ci = m.col_idx().to_vec();
    let vals = m.values_mut();
    for i in 0..n {
        for k in rp[i]..rp[i + 1] {
            let j = ci[k];
            if let Some(g) = fixed[i] {
                vals[k] = if j == i { 1.0 } else { 0.0 };
                rhs[i] = g;
            } else if let Some(g) = fixed[j] {
                rhs[i] -= vals[k] * g;
                vals[k] = 0.0;
            }
        }
        if let Some(g) = fixed[i] {
            rhs[i] = g;
        }
    }
    Ok((m, rhs))
}

/// Right-hand side that [`apply_dirichlet`] would produce, given the
/// unconstrained matrix. Lets a factorized constrained operator be reused.
pub fn dirichlet_rhs(a: &CsrMatrix, b: &[f64], d: &DirichletSet) -> Result<Vec<f64>, FemError> {
    let n = a.dim();
    if b.len() != n {
        return Err(FemError::LengthMismatch { expected: n, found: b.len() });
    }
    let fixed = d.mask(n)?;
    let mut rhs = b.to_vec();
    for i in 0..n {
        if let Some(g) = fixed[i] {
            rhs[i] = g;
            continue;
        }
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if let Some(g) = fixed[j] {
                rhs[i] -= v * g;
            }
        }
    }
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{structured_box, Region};
    use crate::sparse::{solve, LinearSolveSpec};

    fn cube(n: usize) -> LabeledMesh {
        structured_box([0.0; 3], [1.0; 3], [n; 3], |_| Region::Solvent).unwrap()
    }

    #[test]
    fn single_tet_gradients() {
        let p = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let g = TetGeometry::new(&p).unwrap();
        assert!((g.volume - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(g.grads, [[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let k = g.stiffness();
        assert!((k[0][0] - 0.5).abs() < 1e-15);
        assert!((k[0][1] + 1.0 / 6.0).abs() < 1e-15);
        assert!((k[1][2]).abs() < 1e-15);
    }

    #[test]
    fn inverted_tet_rejected() {
        let p = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(TetGeometry::new(&p).is_none());
    }

    #[test]
    fn constants_in_kernel_and_symmetric() {
        let s = P1Space::new(&cube(3), Execution::Sequential).unwrap();
        let k = s.stiffness(&vec![1.0; s.num_tets()]).unwrap();
        let r = k.mul_vec(&vec![1.0; s.num_nodes()]);
        assert!(r.iter().all(|x| x.abs() < 1e-12));
        assert!(k.symmetry_defect() < 1e-14);
    }

    #[test]
    fn parallel_assembly_is_identical() {
        let m = cube(4);
        let a = P1Space::new(&m, Execution::Sequential).unwrap();
        let b = P1Space::new(&m, Execution::Parallel).unwrap();
        let w: Vec<f64> = (0..a.num_tets()).map(|t| 1.0 + t as f64 * 0.01).collect();
        assert_eq!(a.stiffness(&w).unwrap().values(), b.stiffness(&w).unwrap().values());
    }

    #[test]
    fn mass_norm_of_one_is_volume() {
        let s = P1Space::new(&cube(2), Execution::Sequential).unwrap();
        assert!((s.l2_norm(&vec![1.0; s.num_nodes()]).unwrap() - 1.0).abs() < 1e-13);
        assert_eq!(s.l2_norm(&vec![0.0; s.num_nodes()]).unwrap(), 0.0);
        let b = s.load_nodal(&vec![1.0; s.num_nodes()], None).unwrap();
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn four_point_rule_matches_exact_load() {
        let s = P1Space::new(&cube(2), Execution::Sequential).unwrap();
        let f: Vec<f64> = s.vertices().iter().map(|p| 1.0 + p[0] - 2.0 * p[2]).collect();
        let exact = s.load_nodal(&f, None).unwrap();
        let quad = s.load_function(|p| 1.0 + p[0] - 2.0 * p[2]);
        for (a, b) in exact.iter().zip(&quad) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn right_triangle_surface_load() {
        let s = P1Space::new(&cube(1), Execution::Sequential).unwrap();
        let f = [0usize, 1, 2];
        let area = crate::mesh::triangle_area(&f.map(|v| s.vertices()[v]));
        let b = s.surface_load([(&f, 1.0)]);
        assert!((area - 0.5).abs() < 1e-15);
        for &v in &f {
            assert!((b[v] - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_dirichlet_data_is_reproduced() {
        let m = cube(3);
        let s = P1Space::new(&m, Execution::Sequential).unwrap();
        let k = s.stiffness(&vec![1.0; s.num_tets()]).unwrap();
        let (bot, top) = m.dirichlet_nodes();
        let nodes: Vec<usize> = bot.iter().chain(&top).copied().collect();
        let vals = nodes.iter().map(|&v| m.vertices()[v][2]).collect();
        let d = DirichletSet::new(nodes, vals).unwrap();
        let (a, b) = apply_dirichlet(&k, &vec![0.0; s.num_nodes()], &d).unwrap();
        assert!(a.symmetry_defect() < 1e-14);
        assert_eq!(dirichlet_rhs(&k, &vec![0.0; s.num_nodes()], &d).unwrap(), b);
        let x = solve(&a, &b, &LinearSolveSpec::direct()).unwrap();
        for (xi, p) in x.iter().zip(m.vertices()) {
            assert!((xi - p[2]).abs() < 1e-10);
        }
    }

    #[test]
    fn all_constrained_returns_data() {
        let s = P1Space::new(&cube(1), Execution::Sequential).unwrap();
        let k = s.stiffness(&vec![1.0; s.num_tets()]).unwrap();
        let g: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let d = DirichletSet::new((0..8).collect(), g.clone()).unwrap();
        let (a, b) = apply_dirichlet(&k, &vec![0.0; 8], &d).unwrap();
        assert_eq!(solve(&a, &b, &LinearSolveSpec::direct()).unwrap(), g);
        let (a0, b0) = apply_dirichlet(&k, &vec![1.0; 8], &DirichletSet::default()).unwrap();
        assert_eq!(a0, k);
        assert_eq!(b0, vec![1.0; 8]);
    }
}
