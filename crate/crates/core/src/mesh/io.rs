//! Plain-text mesh format.
//!
//! ```text
//! smpnp-mesh 1
//! vertices N
//! x y z                 (N lines)
//! tets M
//! i0 i1 i2 i3 region    (M lines, region 1=solvent 2=protein 3=membrane)
//! facets K
//! i0 i1 i2 label        (K lines, label 1=Γp 2=Γm 3=Γpm 4=ΓD 5=ΓN)
//! ```
//!
//! Indices are 0-based. Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::{FacetLabel, LabeledMesh, MeshError, Point, Region};

pub fn load_mesh(path: impl AsRef<Path>) -> Result<LabeledMesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}

pub fn save_mesh(mesh: &LabeledMesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    std::fs::write(path, write_mesh(mesh))?;
    Ok(())
}

/// Canonical serialization. `f64` values use the shortest round-trip form, so
/// parsing and re-serializing reproduces the same bytes.
pub fn write_mesh(mesh: &LabeledMesh) -> String {
    let mut s = String::with_capacity(64 * (mesh.num_vertices() + mesh.num_tets()));
    s.push_str("smpnp-mesh 1\n");
    let _ = writeln!(s, "vertices {}", mesh.num_vertices());
    for p in mesh.vertices() {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    let _ = writeln!(s, "tets {}", mesh.num_tets());
    for (t, r) in mesh.tets().iter().zip(mesh.regions()) {
        let _ = writeln!(s, "{} {} {} {} {}", t[0], t[1], t[2], t[3], r.tag());
    }
    let _ = writeln!(s, "facets {}", mesh.facets().len());
    for (f, l) in mesh.facets().iter().zip(mesh.facet_labels()) {
        let _ = writeln!(s, "{} {} {} {}", f[0], f[1], f[2], l.tag());
    }
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_content(&mut self) -> Result<(usize, Vec<&'a str>), MeshError> {
        for (i, line) in self.inner.by_ref() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            self.last = i + 1;
            return Ok((i + 1, t.split_whitespace().collect()));
        }
        Err(MeshError::Parse { line: self.last + 1, message: "unexpected end of file".into() })
    }
}

fn perr(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse { line, message: message.into() }
}

fn count_header(lines: &mut Lines, keyword: &str) -> Result<usize, MeshError> {
    let (ln, tok) = lines.next_content()?;
    match tok.as_slice() {
        [k, n] if *k == keyword => n.parse().map_err(|_| perr(ln, format!("bad {keyword} count `{n}`"))),
        _ => Err(perr(ln, format!("expected `{keyword} <count>`"))),
    }
}

fn fields<T: std::str::FromStr>(ln: usize, tok: &[&str], n: usize, what: &str) -> Result<Vec<T>, MeshError> {
    if tok.len() != n {
        return Err(perr(ln, format!("{what}: expected {n} fields, found {}", tok.len())));
    }
    tok.iter()
        .map(|t| t.parse::<T>().map_err(|_| perr(ln, format!("{what}: cannot parse `{t}`"))))
        .collect()
}

pub fn parse_mesh(text: &str) -> Result<LabeledMesh, MeshError> {
    let mut lines = Lines { inner: text.lines().enumerate(), last: 0 };
    let (ln, tok) = lines.next_content()?;
    if tok != ["smpnp-mesh", "1"] {
        return Err(perr(ln, "expected header `smpnp-mesh 1`"));
    }

    let nv = count_header(&mut lines, "vertices")?;
    let mut vertices: Vec<Point> = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, tok) = lines.next_content()?;
        let c: Vec<f64> = fields(ln, &tok, 3, "vertex")?;
        if c.iter().any(|x| !x.is_finite()) {
            return Err(perr(ln, "vertex: non-finite coordinate"));
        }
        vertices.push([c[0], c[1], c[2]]);
    }

    let nt = count_header(&mut lines, "tets")?;
    let mut tets = Vec::with_capacity(nt);
    let mut regions = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, tok) = lines.next_content()?;
        let c: Vec<i64> = fields(ln, &tok, 5, "tet")?;
        let region = Region::from_tag(c[4]).ok_or_else(|| perr(ln, format!("unknown region tag {}", c[4])))?;
        let mut t = [0usize; 4];
        for k in 0..4 {
            if c[k] < 0 || c[k] as usize >= nv {
                return Err(perr(ln, format!("tet: vertex index {} out of range", c[k])));
            }
            t[k] = c[k] as usize;
        }
        tets.push(t);
        regions.push(region);
    }

    let nf = count_header(&mut lines, "facets")?;
    let mut facets = Vec::with_capacity(nf);
    let mut labels = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, tok) = lines.next_content()?;
        let c: Vec<i64> = fields(ln, &tok, 4, "facet")?;
        let label =
            FacetLabel::from_tag(c[3]).ok_or_else(|| perr(ln, format!("unknown facet label {}", c[3])))?;
        let mut f = [0usize; 3];
        for k in 0..3 {
            if c[k] < 0 || c[k] as usize >= nv {
                return Err(perr(ln, format!("facet: vertex index {} out of range", c[k])));
            }
            f[k] = c[k] as usize;
        }
        facets.push(f);
        labels.push(label);
    }
    if let Ok((ln, _)) = lines.next_content() {
        return Err(perr(ln, "trailing content after facets"));
    }
    LabeledMesh::new(vertices, tets, regions, facets, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    

    #[test]
    fn minimal_cube_file() {
        let m = crate::mesh::structured_box([0.0; 3], [1.0; 3], [1; 3], |_| Region::Solvent).unwrap();
        let text = write_mesh(&m);
        let back = parse_mesh(&text).unwrap();
        assert_eq!(back.num_vertices(), 8);
        assert_eq!(back.num_tets(), 6);
    }

    #[test]
    fn unknown_region_tag() {
        let m = crate::mesh::structured_box([0.0; 3], [1.0; 3], [1; 3], |_| Region::Solvent).unwrap();
        let text = write_mesh(&m);
        // first tet line is line 11 (header, vertices line, 8 coords, tets line)
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let l = &mut lines[11];
        let mut tok: Vec<&str> = l.split_whitespace().collect();
        tok[4] = "7";
        *l = tok.join(" ");
        let err = parse_mesh(&lines.join("\n")).unwrap_err();
        match err {
            MeshError::Parse { line, message } => {
                assert_eq!(line, 12);
                assert!(message.contains("unknown region tag"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn truncated_file() {
        let err = parse_mesh("smpnp-mesh 1\nvertices 2\n0 0 0\n").unwrap_err();
        assert!(matches!(err, MeshError::Parse { .. }));
    }

    #[test]
    fn bad_header() {
        assert!(matches!(parse_mesh("mesh 2\n"), Err(MeshError::Parse { line: 1, .. })));
    }
}
