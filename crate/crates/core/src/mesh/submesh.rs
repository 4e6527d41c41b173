//! Solvent-only submesh with maps to and from the parent vertex numbering.

use std::collections::HashMap;

use super::{dirichlet_split, face_key, FacetLabel, LabeledMesh, MeshError, Point, Region};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SolventBoundary {
    /// Interface with the protein or membrane (Γp ∪ Γm).
    Interface,
    Dirichlet,
    Neumann,
}

#[derive(Clone, Debug)]
pub struct SolventSubmesh {
    vertices: Vec<Point>,
    tets: Vec<[usize; 4]>,
    parent_tets: Vec<usize>,
    vertex_map: Vec<usize>,
    parent_to_local: Vec<Option<usize>>,
    boundary: Vec<([usize; 3], SolventBoundary)>,
    bottom: Vec<usize>,
    top: Vec<usize>,
}

pub fn extract_solvent_submesh(mesh: &LabeledMesh) -> Result<SolventSubmesh, MeshError> {
    let mut parent_to_local = vec![None; mesh.num_vertices()];
    let mut vertex_map = Vec::new();
    let mut tets = Vec::new();
    let mut parent_tets = Vec::new();
    for (ti, t) in mesh.tets().iter().enumerate() {
        if mesh.regions()[ti] != Region::Solvent {
            continue;
        }
        let local = t.map(|v| {
            *parent_to_local[v].get_or_insert_with(|| {
                vertex_map.push(v);
                vertex_map.len() - 1
            })
        });
        tets.push(local);
        parent_tets.push(ti);
    }
    if tets.is_empty() {
        return Err(MeshError::NoSolvent);
    }
    let vertices: Vec<Point> = vertex_map.iter().map(|&v| mesh.vertices()[v]).collect();

    let labels: HashMap<[usize; 3], FacetLabel> =
        mesh.facets().iter().zip(mesh.facet_labels()).map(|(f, l)| (face_key(*f), *l)).collect();
    let mut boundary = Vec::new();
    let mut dirichlet = Vec::new();
    for &ti in &parent_tets {
        for f in super::tet_faces(&mesh.tets()[ti]) {
            let kind = match labels.get(&face_key(f)) {
                Some(FacetLabel::ProteinSolvent | FacetLabel::MembraneSolvent) => SolventBoundary::Interface,
                Some(FacetLabel::Dirichlet) => SolventBoundary::Dirichlet,
                Some(FacetLabel::Neumann) => SolventBoundary::Neumann,
                _ => continue,
            };
            let local = f.map(|v| parent_to_local[v].expect("solvent tet vertex"));
            if kind == SolventBoundary::Dirichlet {
                dirichlet.push(local);
            }
            boundary.push((local, kind));
        }
    }
    let (bottom, top) = dirichlet_split(&vertices, &mesh.extents(), dirichlet.into_iter());
    Ok(SolventSubmesh { vertices, tets, parent_tets, vertex_map, parent_to_local, boundary, bottom, top })
}

impl SolventSubmesh {
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    /// Parent tetrahedron index of each local tetrahedron.
    pub fn parent_tets(&self) -> &[usize] {
        &self.parent_tets
    }

    /// Parent vertex index of each local vertex.
    pub fn vertex_map(&self) -> &[usize] {
        &self.vertex_map
    }

    pub fn local_of(&self, parent: usize) -> Option<usize> {
        self.parent_to_local.get(parent).copied().flatten()
    }

    /// Boundary triangles of the solvent region (local indices).
    pub fn boundary(&self) -> &[([usize; 3], SolventBoundary)] {
        &self.boundary
    }

    pub fn boundary_with(&self, kind: SolventBoundary) -> impl Iterator<Item = &[usize; 3]> + '_ {
        self.boundary.iter().filter(move |(_, k)| *k == kind).map(|(f, _)| f)
    }

    /// Local Dirichlet nodes on the bottom (z = Lz1) face.
    pub fn bottom_nodes(&self) -> &[usize] {
        &self.bottom
    }

    /// Local Dirichlet nodes on the top (z = Lz2) face.
    pub fn top_nodes(&self) -> &[usize] {
        &self.top
    }

    pub fn restrict(&self, parent: &[f64]) -> Result<Vec<f64>, MeshError> {
        if parent.len() != self.parent_to_local.len() {
            return Err(MeshError::LengthMismatch { expected: self.parent_to_local.len(), found: parent.len() });
        }
        Ok(self.vertex_map.iter().map(|&v| parent[v]).collect())
    }

    /// Extends a local field to the parent mesh, writing `fill` off the solvent.
    pub fn prolong(&self, local: &[f64], fill: f64) -> Result<Vec<f64>, MeshError> {
        if local.len() != self.vertex_map.len() {
            return Err(MeshError::LengthMismatch { expected: self.vertex_map.len(), found: local.len() });
        }
        let mut out = vec![fill; self.parent_to_local.len()];
        for (l, &p) in self.vertex_map.iter().enumerate() {
            out[p] = local[l];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{synth_channel_mesh, ChannelGeometry};

    #[test]
    fn restrict_prolong_round_trip() {
        let mesh = synth_channel_mesh(&ChannelGeometry::default().with_resolution(6)).unwrap();
        let sub = extract_solvent_submesh(&mesh).unwrap();
        assert_eq!(sub.num_tets(), mesh.count_region(Region::Solvent));
        let local: Vec<f64> = (0..sub.num_vertices()).map(|i| i as f64 + 0.5).collect();
        let parent = sub.prolong(&local, 0.0).unwrap();
        assert_eq!(sub.restrict(&parent).unwrap(), local);
        assert!(sub.restrict(&local).is_err());
    }

    #[test]
    fn dirichlet_nodes_match_parent() {
        let mesh = synth_channel_mesh(&ChannelGeometry::default().with_resolution(6)).unwrap();
        let sub = extract_solvent_submesh(&mesh).unwrap();
        let (b, t) = mesh.dirichlet_nodes();
        let lb: Vec<usize> = sub.bottom_nodes().iter().map(|&l| sub.vertex_map()[l]).collect();
        let lt: Vec<usize> = sub.top_nodes().iter().map(|&l| sub.vertex_map()[l]).collect();
        let sorted = |mut v: Vec<usize>| {
            v.sort();
            v
        };
        assert_eq!(sorted(lb), b);
        assert_eq!(sorted(lt), t);
        assert!(sub.boundary_with(SolventBoundary::Interface).count() > 0);
    }

    #[test]
    fn full_membrane_box_has_two_solvent_pieces() {
        let mesh = synth_channel_mesh(&ChannelGeometry::slab([-4.0; 3], [4.0; 3], (-1.0, 1.0), [4, 4, 8])).unwrap();
        let sub = extract_solvent_submesh(&mesh).unwrap();
        assert_eq!(sub.num_tets(), mesh.count_region(Region::Solvent));
    }
}
