use std::path::Path;

use super::{ChargeSource, ElectroError};
use crate::fem::P1Space;
use crate::mesh::{LabeledMesh, Point, Region};

/// Fixed point charges `z_j` at `r_j` (Å).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AtomicCharges {
    positions: Vec<Point>,
    charges: Vec<f64>,
}

impl AtomicCharges {
    pub fn new(positions: Vec<Point>, charges: Vec<f64>) -> Result<Self, ElectroError> {
        if positions.len() != charges.len() {
            return Err(ElectroError::InvalidAtoms("one charge per position required".into()));
        }
        if positions.iter().flatten().chain(&charges).any(|x| !x.is_finite()) {
            return Err(ElectroError::InvalidAtoms("non-finite atom data".into()));
        }
        Ok(Self { positions, charges })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    pub fn net_charge(&self) -> f64 {
        self.charges.iter().sum()
    }

    /// Reads `atoms N` followed by N lines `x y z charge`.
    pub fn parse(text: &str) -> Result<Self, ElectroError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let perr = |line: usize, message: &str| ElectroError::Parse { line, message: message.to_string() };
        let (ln, head) = lines.next().ok_or_else(|| perr(1, "empty atom file"))?;
        let n: usize = match head.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["atoms", n] => n.parse().map_err(|_| perr(ln, "bad atom count"))?,
            _ => return Err(perr(ln, "expected `atoms <count>`")),
        };
        let mut positions = Vec::with_capacity(n);
        let mut charges = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = lines.next().ok_or_else(|| perr(ln, "fewer atoms than declared"))?;
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| perr(ln, "cannot parse atom line"))?;
            if v.len() != 4 {
                return Err(perr(ln, "atom line needs `x y z charge`"));
            }
            positions.push([v[0], v[1], v[2]]);
            charges.push(v[3]);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(perr(ln, "trailing content after atoms"));
        }
        Self::new(positions, charges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ElectroError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("atoms {}\n", self.len());
        for (p, z) in self.positions.iter().zip(&self.charges) {
            s.push_str(&format!("{} {} {} {}\n", p[0], p[1], p[2], z));
        }
        s
    }

    /// Checks that every atom lies inside a protein tetrahedron and away
    /// from all mesh vertices.
    pub fn check_placement(&self, mesh: &LabeledMesh) -> Result<(), ElectroError> {
        for (a, p) in self.positions.iter().enumerate() {
            for (v, q) in mesh.vertices().iter().enumerate() {
                let d = (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>().sqrt();
                if d <= 1e-6 {
                    return Err(ElectroError::Collision { atom: a, node: v, distance: d });
                }
            }
            match locate(mesh, *p) {
                Some((t, _)) if mesh.regions()[t] == Region::Protein => {}
                Some(_) => return Err(ElectroError::AtomNotInProtein { atom: a }),
                None => return Err(ElectroError::AtomOutside { atom: a }),
            }
        }
        Ok(())
    }
}

/// Tetrahedron containing `p` with its barycentric coordinates.
pub fn locate(mesh: &LabeledMesh, p: Point) -> Option<(usize, [f64; 4])> {
    let tol = 1e-12;
    let mut best: Option<(usize, [f64; 4], f64)> = None;
    for t in 0..mesh.num_tets() {
        let q = mesh.tet_points(t);
        let Some(g) = crate::fem::TetGeometry::new(&q) else { continue };
        let lam: [f64; 4] = std::array::from_fn(|a| {
            let b = (a + 1) % 4;
            // λ_a(p) = λ_a(q_b) + ∇λ_a·(p − q_b), with λ_a(q_b) = 0
            (0..3).map(|k| g.grads[a][k] * (p[k] - q[b][k])).sum()
        });
        let m = lam.iter().cloned().fold(f64::INFINITY, f64::min);
        if m >= -tol {
            if best.as_ref().map_or(true, |b| m > b.2) {
                best = Some((t, lam, m));
            }
        }
    }
    best.map(|(t, l, _)| (t, l))
}

impl ChargeSource for AtomicCharges {
    fn kernel(&self, r: Point) -> f64 {
        self.positions
            .iter()
            .zip(&self.charges)
            .map(|(p, z)| z / ((r[0] - p[0]).powi(2) + (r[1] - p[1]).powi(2) + (r[2] - p[2]).powi(2)).sqrt())
            .sum()
    }

    fn centers(&self) -> &[Point] {
        &self.positions
    }

    fn density_load(&self, mesh: &LabeledMesh, space: &P1Space) -> Result<Vec<f64>, ElectroError> {
        let mut b = vec![0.0; space.num_nodes()];
        for (a, (p, z)) in self.positions.iter().zip(&self.charges).enumerate() {
            let (t, lam) = locate(mesh, *p).ok_or(ElectroError::AtomOutside { atom: a })?;
            for (k, &v) in mesh.tets()[t].iter().enumerate() {
                b[v] += z * lam[k];
            }
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{protein_ring_sites, synth_channel_mesh, ChannelGeometry};

    #[test]
    fn parse_round_trip() {
        let a = AtomicCharges::new(vec![[1.0, 2.0, 3.5], [0.0, -1.0, 0.25]], vec![1.0, -0.5]).unwrap();
        assert_eq!(AtomicCharges::parse(&a.to_text()).unwrap(), a);
        assert!(AtomicCharges::parse("atoms 2\n0 0 0 1\n").is_err());
        assert!(AtomicCharges::parse("atoms 1\n0 0 0\n").is_err());
    }

    #[test]
    fn placement_checks() {
        let mesh = synth_channel_mesh(&ChannelGeometry::default().with_resolution(8)).unwrap();
        let sites = protein_ring_sites(&mesh, 4, 7.0, 0.0);
        let ok = AtomicCharges::new(sites.clone(), vec![1.0; sites.len()]).unwrap();
        ok.check_placement(&mesh).unwrap();
        let on_node = AtomicCharges::new(vec![mesh.vertices()[0]], vec![1.0]).unwrap();
        assert!(matches!(on_node.check_placement(&mesh), Err(ElectroError::Collision { .. })));
        let solvent = AtomicCharges::new(vec![[0.1, 0.2, 0.3]], vec![1.0]).unwrap();
        assert!(matches!(solvent.check_placement(&mesh), Err(ElectroError::AtomNotInProtein { .. })));
        let outside = AtomicCharges::new(vec![[100.0, 0.0, 0.0]], vec![1.0]).unwrap();
        assert!(matches!(outside.check_placement(&mesh), Err(ElectroError::AtomOutside { .. })));
    }

    #[test]
    fn barycentric_partition_of_unity() {
        let mesh = synth_channel_mesh(&ChannelGeometry::default().with_resolution(4)).unwrap();
        let (t, lam) = locate(&mesh, [1.3, -2.1, 0.7]).unwrap();
        assert!((lam.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let q = mesh.tet_points(t);
        for k in 0..3 {
            let x: f64 = (0..4).map(|a| lam[a] * q[a][k]).sum();
            assert!((x - [1.3, -2.1, 0.7][k]).abs() < 1e-12);
        }
    }
}
