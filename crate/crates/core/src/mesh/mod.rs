//! Labeled tetrahedral meshes of the box domain.
//!
//! The box is partitioned into solvent, protein and membrane tetrahedra.
//! Boundary and interface triangles carry one of five labels: the
//! protein–solvent, membrane–solvent and protein–membrane interfaces, the
//! top/bottom Dirichlet faces, and the four Neumann side faces.

mod io;
mod submesh;
mod synth;

use std::collections::HashMap;

use thiserror::Error;

pub use io::{load_mesh, parse_mesh, save_mesh, write_mesh};
pub use submesh::{extract_solvent_submesh, SolventBoundary, SolventSubmesh};
pub use synth::{protein_ring_sites, structured_box, synth_channel_mesh, ChannelGeometry};

pub type Point = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Solvent = 1,
    Protein = 2,
    Membrane = 3,
}

impl Region {
    pub fn from_tag(tag: i64) -> Option<Self> {
        match tag {
            1 => Some(Region::Solvent),
            2 => Some(Region::Protein),
            3 => Some(Region::Membrane),
            _ => None,
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FacetLabel {
    /// Γp, protein–solvent interface.
    ProteinSolvent = 1,
    /// Γm, membrane–solvent interface.
    MembraneSolvent = 2,
    /// Γpm, protein–membrane interface.
    ProteinMembrane = 3,
    /// ΓD, bottom and top faces of the box.
    Dirichlet = 4,
    /// ΓN, the four side faces of the box.
    Neumann = 5,
}

impl FacetLabel {
    pub fn from_tag(tag: i64) -> Option<Self> {
        match tag {
            1 => Some(FacetLabel::ProteinSolvent),
            2 => Some(FacetLabel::MembraneSolvent),
            3 => Some(FacetLabel::ProteinMembrane),
            4 => Some(FacetLabel::Dirichlet),
            5 => Some(FacetLabel::Neumann),
            _ => None,
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub const ALL: [FacetLabel; 5] = [
        FacetLabel::ProteinSolvent,
        FacetLabel::MembraneSolvent,
        FacetLabel::ProteinMembrane,
        FacetLabel::Dirichlet,
        FacetLabel::Neumann,
    ];

    fn between(a: Region, b: Region) -> Option<Self> {
        use Region::*;
        match (a.min(b), a.max(b)) {
            (Solvent, Protein) => Some(FacetLabel::ProteinSolvent),
            (Solvent, Membrane) => Some(FacetLabel::MembraneSolvent),
            (Protein, Membrane) => Some(FacetLabel::ProteinMembrane),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("inverted or degenerate tetrahedron {index} (signed volume {volume:.3e})")]
    InvertedTet { index: usize, volume: f64 },
    #[error("{what} {index} references vertex out of range")]
    IndexOutOfRange { what: &'static str, index: usize },
    #[error("face {face:?} is shared by more than two tetrahedra")]
    NonManifold { face: [usize; 3] },
    #[error("face {face:?} must carry label {expected:?} but is unlabeled")]
    UnlabeledFacet { face: [usize; 3], expected: FacetLabel },
    #[error("facet {index} labeled {found:?} but geometry requires {expected:?}")]
    FacetLabelMismatch { index: usize, found: FacetLabel, expected: Option<FacetLabel> },
    #[error("facet {index} is not a face of any tetrahedron")]
    DanglingFacet { index: usize },
    #[error("facet {index} is labeled more than once")]
    DuplicateFacet { index: usize },
    #[error("boundary face {face:?} does not lie on a box face")]
    BoundaryOffBox { face: [usize; 3] },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("mesh has no solvent tetrahedra")]
    NoSolvent,
    #[error("field length {found} does not match node count {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid mesh: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxExtents {
    pub lo: Point,
    pub hi: Point,
}

impl BoxExtents {
    pub fn of_points(points: &[Point]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Self { lo, hi }
    }

    pub fn diagonal(&self) -> f64 {
        (0..3).map(|k| (self.hi[k] - self.lo[k]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|k| self.hi[k] - self.lo[k]).product()
    }
}

/// Sorted vertex triple identifying a triangular face.
pub(crate) fn face_key(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

/// Local vertex triples of the four faces; face `k` is opposite vertex `k`.
pub(crate) const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

pub(crate) fn tet_faces(t: &[usize; 4]) -> [[usize; 3]; 4] {
    TET_FACES.map(|f| [t[f[0]], t[f[1]], t[f[2]]])
}

/// Adjacency of every face of a tet set: sorted face → tets containing it.
pub(crate) fn face_adjacency(tets: &[[usize; 4]]) -> Result<HashMap<[usize; 3], Vec<usize>>, MeshError> {
    let mut map: HashMap<[usize; 3], Vec<usize>> = HashMap::with_capacity(tets.len() * 2);
    for (ti, t) in tets.iter().enumerate() {
        for f in tet_faces(t) {
            let e = map.entry(face_key(f)).or_default();
            e.push(ti);
            if e.len() > 2 {
                return Err(MeshError::NonManifold { face: face_key(f) });
            }
        }
    }
    Ok(map)
}

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: Point, b: Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

pub fn signed_volume(p: &[Point; 4]) -> f64 {
    dot(sub(p[1], p[0]), cross(sub(p[2], p[0]), sub(p[3], p[0]))) / 6.0
}

pub fn triangle_area(p: &[Point; 3]) -> f64 {
    0.5 * norm(cross(sub(p[1], p[0]), sub(p[2], p[0])))
}

/// Tetrahedral mesh of the box domain with region and facet labels.
///
/// Immutable once built; every constructor path runs the full invariant check.
#[derive(Clone, Debug)]
pub struct LabeledMesh {
    vertices: Vec<Point>,
    tets: Vec<[usize; 4]>,
    regions: Vec<Region>,
    facets: Vec<[usize; 3]>,
    facet_labels: Vec<FacetLabel>,
    extents: BoxExtents,
    membrane: Option<(f64, f64)>,
}

impl LabeledMesh {
    pub fn new(
        vertices: Vec<Point>,
        tets: Vec<[usize; 4]>,
        regions: Vec<Region>,
        facets: Vec<[usize; 3]>,
        facet_labels: Vec<FacetLabel>,
    ) -> Result<Self, MeshError> {
        if tets.len() != regions.len() {
            return Err(MeshError::Invalid("one region tag per tetrahedron required".into()));
        }
        if facets.len() != facet_labels.len() {
            return Err(MeshError::Invalid("one label per facet required".into()));
        }
        if tets.is_empty() {
            return Err(MeshError::Invalid("mesh has no tetrahedra".into()));
        }
        let extents = BoxExtents::of_points(&vertices);
        let membrane = membrane_planes(&vertices, &tets, &regions);
        let mesh = Self { vertices, tets, regions, facets, facet_labels, extents, membrane };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Builds a mesh whose facet labels are derived from tet adjacency and
    /// the box faces.
    pub fn with_derived_facets(
        vertices: Vec<Point>,
        tets: Vec<[usize; 4]>,
        regions: Vec<Region>,
    ) -> Result<Self, MeshError> {
        let extents = BoxExtents::of_points(&vertices);
        let adj = face_adjacency(&tets)?;
        let mut labeled: Vec<([usize; 3], FacetLabel)> = Vec::new();
        // walk tets in order so the facet ordering is deterministic
        for (ti, t) in tets.iter().enumerate() {
            for f in tet_faces(t) {
                let key = face_key(f);
                let owners = &adj[&key];
                let label = if owners.len() == 1 {
                    Some(boundary_label(&vertices, &extents, f).ok_or(MeshError::BoundaryOffBox { face: key })?)
                } else {
                    let other = if owners[0] == ti { owners[1] } else { owners[0] };
                    if other < ti {
                        continue;
                    }
                    FacetLabel::between(regions[ti], regions[other])
                };
                if let Some(l) = label {
                    labeled.push((f, l));
                }
            }
        }
        let (facets, labels) = labeled.into_iter().unzip();
        Self::new(vertices, tets, regions, facets, labels)
    }

    fn validate(&self) -> Result<(), MeshError> {
        let nv = self.vertices.len();
        if let Some(i) = self.vertices.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(MeshError::Invalid(format!("vertex {i} has non-finite coordinates")));
        }
        for (i, t) in self.tets.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(MeshError::IndexOutOfRange { what: "tetrahedron", index: i });
            }
            let vol = signed_volume(&self.tet_points(i));
            if !(vol > 0.0) {
                return Err(MeshError::InvertedTet { index: i, volume: vol });
            }
        }
        for (i, f) in self.facets.iter().enumerate() {
            if f.iter().any(|&v| v >= nv) {
                return Err(MeshError::IndexOutOfRange { what: "facet", index: i });
            }
        }
        let adj = face_adjacency(&self.tets)?;
        let mut given: HashMap<[usize; 3], usize> = HashMap::with_capacity(self.facets.len());
        for (i, f) in self.facets.iter().enumerate() {
            if given.insert(face_key(*f), i).is_some() {
                return Err(MeshError::DuplicateFacet { index: i });
            }
        }
        for (key, owners) in &adj {
            let expected = if owners.len() == 1 {
                let t = &self.tets[owners[0]];
                let f = tet_faces(t).into_iter().find(|f| face_key(*f) == *key).unwrap();
                Some(
                    boundary_label(&self.vertices, &self.extents, f)
                        .ok_or(MeshError::BoundaryOffBox { face: *key })?,
                )
            } else {
                FacetLabel::between(self.regions[owners[0]], self.regions[owners[1]])
            };
            match (given.get(key), expected) {
                (None, None) => {}
                (None, Some(e)) => return Err(MeshError::UnlabeledFacet { face: *key, expected: e }),
                (Some(&i), e) => {
                    if Some(self.facet_labels[i]) != e {
                        return Err(MeshError::FacetLabelMismatch {
                            index: i,
                            found: self.facet_labels[i],
                            expected: e,
                        });
                    }
                }
            }
        }
        for (key, &i) in &given {
            if !adj.contains_key(key) {
                return Err(MeshError::DanglingFacet { index: i });
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn facets(&self) -> &[[usize; 3]] {
        &self.facets
    }

    pub fn facet_labels(&self) -> &[FacetLabel] {
        &self.facet_labels
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn extents(&self) -> BoxExtents {
        self.extents
    }

    /// Lowest and highest z of the membrane tetrahedra, if any.
    pub fn membrane_planes(&self) -> Option<(f64, f64)> {
        self.membrane
    }

    pub fn tet_points(&self, i: usize) -> [Point; 4] {
        self.tets[i].map(|v| self.vertices[v])
    }

    pub fn tet_centroid(&self, i: usize) -> Point {
        let p = self.tet_points(i);
        std::array::from_fn(|k| 0.25 * (p[0][k] + p[1][k] + p[2][k] + p[3][k]))
    }

    pub fn tet_volume(&self, i: usize) -> f64 {
        signed_volume(&self.tet_points(i))
    }

    pub fn count_region(&self, region: Region) -> usize {
        self.regions.iter().filter(|&&r| r == region).count()
    }

    pub fn region_volume(&self, region: Region) -> f64 {
        (0..self.tets.len()).filter(|&i| self.regions[i] == region).map(|i| self.tet_volume(i)).sum()
    }

    pub fn facets_with(&self, label: FacetLabel) -> impl Iterator<Item = &[usize; 3]> + '_ {
        self.facets.iter().zip(&self.facet_labels).filter(move |(_, &l)| l == label).map(|(f, _)| f)
    }

    pub fn labeled_area(&self, label: FacetLabel) -> f64 {
        self.facets_with(label).map(|f| triangle_area(&f.map(|v| self.vertices[v]))).sum()
    }

    /// Vertices on Dirichlet facets, split into (bottom, top) by the nearer box face.
    pub fn dirichlet_nodes(&self) -> (Vec<usize>, Vec<usize>) {
        dirichlet_split(&self.vertices, &self.extents, self.facets_with(FacetLabel::Dirichlet).copied())
    }
}

pub(crate) fn dirichlet_split(
    vertices: &[Point],
    extents: &BoxExtents,
    facets: impl Iterator<Item = [usize; 3]>,
) -> (Vec<usize>, Vec<usize>) {
    let mut nodes: Vec<usize> = facets.flatten().collect();
    nodes.sort_unstable();
    nodes.dedup();
    let mid = 0.5 * (extents.lo[2] + extents.hi[2]);
    nodes.into_iter().partition(|&v| vertices[v][2] < mid)
}

fn boundary_label(vertices: &[Point], ext: &BoxExtents, f: [usize; 3]) -> Option<FacetLabel> {
    let tol = 1e-9 * ext.diagonal().max(1.0);
    let on = |axis: usize, value: f64| f.iter().all(|&v| (vertices[v][axis] - value).abs() <= tol);
    if on(2, ext.lo[2]) || on(2, ext.hi[2]) {
        Some(FacetLabel::Dirichlet)
    } else if on(0, ext.lo[0]) || on(0, ext.hi[0]) || on(1, ext.lo[1]) || on(1, ext.hi[1]) {
        Some(FacetLabel::Neumann)
    } else {
        None
    }
}

fn membrane_planes(vertices: &[Point], tets: &[[usize; 4]], regions: &[Region]) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (t, r) in tets.iter().zip(regions) {
        if *r == Region::Membrane {
            for &v in t {
                lo = lo.min(vertices[v][2]);
                hi = hi.max(vertices[v][2]);
            }
        }
    }
    (lo <= hi).then_some((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_cube() -> LabeledMesh {
        synth::structured_box([0.0; 3], [1.0; 3], [1; 3], |_| Region::Solvent).unwrap()
    }

    #[test]
    fn cube_has_six_positive_tets() {
        let m = unit_cube();
        assert_eq!(m.num_vertices(), 8);
        assert_eq!(m.num_tets(), 6);
        let vol: f64 = (0..6).map(|i| m.tet_volume(i)).sum();
        assert!((vol - 1.0).abs() < 1e-14);
        // 2 triangles per box face: 4 Dirichlet + 8 Neumann
        assert_eq!(m.facets_with(FacetLabel::Dirichlet).count(), 4);
        assert_eq!(m.facets_with(FacetLabel::Neumann).count(), 8);
    }

    #[test]
    fn missing_label_rejected() {
        let m = unit_cube();
        let err = LabeledMesh::new(
            m.vertices().to_vec(),
            m.tets().to_vec(),
            m.regions().to_vec(),
            m.facets()[1..].to_vec(),
            m.facet_labels()[1..].to_vec(),
        );
        assert!(matches!(err, Err(MeshError::UnlabeledFacet { .. })));
    }

    #[test]
    fn wrong_label_rejected() {
        let m = unit_cube();
        let mut labels = m.facet_labels().to_vec();
        labels[0] = FacetLabel::ProteinSolvent;
        let err = LabeledMesh::new(
            m.vertices().to_vec(),
            m.tets().to_vec(),
            m.regions().to_vec(),
            m.facets().to_vec(),
            labels,
        );
        assert!(matches!(err, Err(MeshError::FacetLabelMismatch { .. })));
    }

    #[test]
    fn inverted_tet_rejected() {
        let m = unit_cube();
        let mut tets = m.tets().to_vec();
        tets[3].swap(0, 1);
        let err = LabeledMesh::new(
            m.vertices().to_vec(),
            tets,
            m.regions().to_vec(),
            m.facets().to_vec(),
            m.facet_labels().to_vec(),
        );
        assert!(matches!(err, Err(MeshError::InvertedTet { index: 3, .. })));
    }
}
