//! Structured synthetic channel geometry.
//!
//! The box is cut into `nx × ny × nz` hexahedra, each split into six
//! tetrahedra sharing the cell's main diagonal (Kuhn split, conforming across
//! cells). Region tags come from a centroid test against a membrane slab and
//! a cylindrical protein shell around the z axis with an open pore.

use super::{signed_volume, LabeledMesh, MeshError, Point, Region};

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelGeometry {
    pub lo: Point,
    pub hi: Point,
    /// Membrane planes `(Z1, Z2)`; `None` gives a solvent-only box.
    pub membrane: Option<(f64, f64)>,
    pub pore_radius: f64,
    pub shell_radius: f64,
    /// How far the protein shell reaches beyond each membrane plane.
    pub protein_extension: f64,
    pub resolution: [usize; 3],
}

impl Default for ChannelGeometry {
    fn default() -> Self {
        Self {
            lo: [-16.0, -16.0, -24.0],
            hi: [16.0, 16.0, 24.0],
            membrane: Some((-8.0, 8.0)),
            pore_radius: 4.5,
            shell_radius: 10.0,
            protein_extension: 4.0,
            resolution: [12, 12, 12],
        }
    }
}

impl ChannelGeometry {
    pub fn with_resolution(mut self, n: usize) -> Self {
        self.resolution = [n; 3];
        self
    }

    /// Membrane slab across the whole cross-section, no protein.
    pub fn slab(lo: Point, hi: Point, membrane: (f64, f64), resolution: [usize; 3]) -> Self {
        Self {
            lo,
            hi,
            membrane: Some(membrane),
            pore_radius: 0.0,
            shell_radius: 0.0,
            protein_extension: 0.0,
            resolution,
        }
    }

    /// Solvent-only box.
    pub fn solvent_box(lo: Point, hi: Point, resolution: [usize; 3]) -> Self {
        Self { membrane: None, ..Self::slab(lo, hi, (0.0, 0.0), resolution) }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let bad = |m: &str| Err(MeshError::DegenerateGeometry(m.to_string()));
        for k in 0..3 {
            if !(self.lo[k] < self.hi[k]) {
                return bad("box extents must satisfy lo < hi");
            }
            if self.resolution[k] < 2 {
                return bad("resolution must be at least 2 cells per direction");
            }
        }
        if let Some((z1, z2)) = self.membrane {
            if !(self.lo[2] < z1 && z1 < z2 && z2 < self.hi[2]) {
                return bad("membrane planes must satisfy Lz1 < Z1 < Z2 < Lz2");
            }
        }
        if !(self.pore_radius >= 0.0 && self.shell_radius >= 0.0 && self.protein_extension >= 0.0) {
            return bad("radii and protein extension must be non-negative");
        }
        if self.shell_radius > 0.0 && self.pore_radius >= self.shell_radius {
            return bad("pore radius must be smaller than the shell radius");
        }
        if self.shell_radius == 0.0 && self.pore_radius > 0.0 {
            return bad("a pore requires a protein shell");
        }
        Ok(())
    }

    /// Region of a point by the centroid rule (interface ties go to solvent).
    pub fn classify(&self, p: Point) -> Region {
        let Some((z1, z2)) = self.membrane else {
            return Region::Solvent;
        };
        let r = p[0].hypot(p[1]);
        let z = p[2];
        if self.shell_radius > 0.0
            && z1 - self.protein_extension < z
            && z < z2 + self.protein_extension
            && self.pore_radius < r
            && r < self.shell_radius
        {
            Region::Protein
        } else if z1 < z && z < z2 && r >= self.shell_radius {
            Region::Membrane
        } else {
            Region::Solvent
        }
    }
}

pub fn synth_channel_mesh(geom: &ChannelGeometry) -> Result<LabeledMesh, MeshError> {
    geom.validate()?;
    structured_box(geom.lo, geom.hi, geom.resolution, |c| geom.classify(c))
}

/// Kuhn-split box tetrahedralization with a region callback on tet centroids.
pub fn structured_box(
    lo: Point,
    hi: Point,
    res: [usize; 3],
    region_of: impl Fn(Point) -> Region,
) -> Result<LabeledMesh, MeshError> {
    let [nx, ny, nz] = res;
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(MeshError::DegenerateGeometry("zero resolution".into()));
    }
    let coord = |k: usize, i: usize, n: usize| {
        if i == n {
            hi[k]
        } else {
            lo[k] + (hi[k] - lo[k]) * i as f64 / n as f64
        }
    };
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([coord(0, i, nx), coord(1, j, ny), coord(2, k, nz)]);
            }
        }
    }
    let vid = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    let mut regions = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut t = [vid(c[0], c[1], c[2]), 0, 0, 0];
                    for (step, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        t[step + 1] = vid(c[0], c[1], c[2]);
                    }
                    let pts = t.map(|v| vertices[v]);
                    if signed_volume(&pts) < 0.0 {
                        t.swap(1, 2);
                    }
                    let cen: Point = std::array::from_fn(|a| 0.25 * (0..4).map(|q| pts[q][a]).sum::<f64>());
                    tets.push(t);
                    regions.push(region_of(cen));
                }
            }
        }
    }
    LabeledMesh::with_derived_facets(vertices, tets, regions)
}

/// Centroids of protein tetrahedra nearest to `count` equally spaced points on
/// the ring of radius `radius` at height `z`. Tet centroids are never mesh
/// vertices, which keeps point charges away from the nodes.
pub fn protein_ring_sites(mesh: &LabeledMesh, count: usize, radius: f64, z: f64) -> Vec<Point> {
    let protein: Vec<usize> = (0..mesh.num_tets()).filter(|&t| mesh.regions()[t] == Region::Protein).collect();
    let mut sites: Vec<Point> = Vec::with_capacity(count);
    for a in 0..count {
        let th = 2.0 * std::f64::consts::PI * (a as f64 + 0.5) / count as f64;
        let target = [radius * th.cos(), radius * th.sin(), z];
        let best = protein.iter().map(|&t| mesh.tet_centroid(t)).min_by(|p, q| {
            let d = |x: &Point| (0..3).map(|k| (x[k] - target[k]).powi(2)).sum::<f64>();
            d(p).total_cmp(&d(q))
        });
        if let Some(p) = best {
            if !sites.contains(&p) {
                sites.push(p);
            }
        }
    }
    sites
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::FacetLabel;

    #[test]
    fn counting_formula() {
        // 6 n^3 tets and (n+1)^3 vertices for the structured split
        for n in [2usize, 3, 4] {
            let g = ChannelGeometry::solvent_box([0.0; 3], [10.0; 3], [n; 3]);
            let m = synth_channel_mesh(&g).unwrap();
            assert_eq!(m.num_tets(), 6 * n * n * n);
            assert_eq!(m.num_vertices(), (n + 1).pow(3));
        }
    }

    #[test]
    fn slab_has_no_protein() {
        let g = ChannelGeometry::slab([-5.0; 3], [5.0; 3], (-1.5, 1.5), [4, 4, 6]);
        let m = synth_channel_mesh(&g).unwrap();
        assert_eq!(m.count_region(Region::Protein), 0);
        assert!(m.count_region(Region::Membrane) > 0);
        // membrane spans the full cross-section
        let area = 10.0 * 10.0;
        let thick = m.membrane_planes().map(|(a, b)| b - a).unwrap();
        assert!((m.region_volume(Region::Membrane) - area * thick).abs() < 1e-9);
        assert_eq!(m.facets_with(FacetLabel::ProteinSolvent).count(), 0);
    }

    #[test]
    fn default_channel_has_every_label() {
        let m = synth_channel_mesh(&ChannelGeometry::default()).unwrap();
        for l in FacetLabel::ALL {
            assert!(m.facets_with(l).count() > 0, "no facet labeled {l:?}");
        }
    }

    #[test]
    fn degenerate_radii_rejected() {
        let g = ChannelGeometry { pore_radius: 10.0, shell_radius: 10.0, ..Default::default() };
        assert!(matches!(synth_channel_mesh(&g), Err(MeshError::DegenerateGeometry(_))));
        let g = ChannelGeometry { resolution: [1, 4, 4], ..Default::default() };
        assert!(synth_channel_mesh(&g).is_err());
    }

    #[test]
    fn ring_sites_are_inside_protein() {
        let m = synth_channel_mesh(&ChannelGeometry::default()).unwrap();
        let sites = protein_ring_sites(&m, 8, 7.0, 0.0);
        assert!(!sites.is_empty());
        let g = ChannelGeometry::default();
        for s in &sites {
            assert_eq!(g.classify(*s), Region::Protein);
        }
    }
}
