//! VTK fields, pore profiles, the convergence log and a key-value summary.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use super::Solution;

/// One z-bin of the pore profile; `means` is `None` for an empty bin.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileRow {
    pub z_center: f64,
    pub means: Option<Vec<f64>>,
    pub count: usize,
}

/// Mean concentrations over solvent nodes with `x² + y² ≤ radius²`, binned in z
/// over the box height.
pub fn pore_profiles(sol: &Solution, bins: usize, radius: f64) -> Vec<ProfileRow> {
    let ext = sol.mesh.extents();
    let (z0, z1) = (ext.lo[2], ext.hi[2]);
    let h = (z1 - z0) / bins as f64;
    let n = sol.species.len();
    let mut sums = vec![vec![0.0; n]; bins];
    let mut counts = vec![0usize; bins];
    for (v, p) in sol.sub.vertices().iter().enumerate() {
        if p[0].hypot(p[1]) > radius {
            continue;
        }
        let b = (((p[2] - z0) / h).floor() as usize).min(bins - 1);
        counts[b] += 1;
        for i in 0..n {
            sums[b][i] += sol.c[i][v];
        }
    }
    (0..bins)
        .map(|b| ProfileRow {
            z_center: z0 + (b as f64 + 0.5) * h,
            means: (counts[b] > 0).then(|| sums[b].iter().map(|s| s / counts[b] as f64).collect()),
            count: counts[b],
        })
        .collect()
}

/// Pore-averaged concentrations over every masked node (not per bin).
pub fn pore_average(sol: &Solution, radius: f64, z_range: (f64, f64)) -> (Vec<f64>, usize) {
    let n = sol.species.len();
    let mut sum = vec![0.0; n];
    let mut count = 0;
    for (v, p) in sol.sub.vertices().iter().enumerate() {
        if p[0].hypot(p[1]) <= radius && z_range.0 <= p[2] && p[2] <= z_range.1 {
            count += 1;
            for i in 0..n {
                sum[i] += sol.c[i][v];
            }
        }
    }
    (sum.into_iter().map(|s| s / count.max(1) as f64).collect(), count)
}

pub fn profiles_csv(sol: &Solution, bins: usize, radius: f64) -> String {
    let mut out = String::from("z_center");
    for s in &sol.species {
        let _ = write!(out, ",{}", s.name);
    }
    out.push_str(",count\n");
    for row in pore_profiles(sol, bins, radius) {
        let _ = write!(out, "{}", row.z_center);
        match &row.means {
            Some(m) => m.iter().for_each(|x| {
                let _ = write!(out, ",{x:e}");
            }),
            None => sol.species.iter().for_each(|_| out.push(',')),
        }
        let _ = writeln!(out, ",{}", row.count);
    }
    out
}

pub fn convergence_csv(sol: &Solution) -> String {
    let mut out = String::from("k,d_phi,d_cbar,d_c,t_block1,t_block2,t_block3,newton_max_iter,min_c,min_water\n");
    for r in &sol.history {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:.6},{:.6},{:.6},{},{:e},{:e}",
            r.k,
            r.d_phi,
            r.d_cbar,
            r.d_c,
            r.seconds[0],
            r.seconds[1],
            r.seconds[2],
            r.newton_max_iterations,
            r.min_concentration,
            r.min_water_fraction
        );
    }
    out
}

pub fn summary_text(sol: &Solution) -> String {
    let [a, b, c] = sol.final_residuals();
    let k = &sol.constants;
    let total: f64 = sol.history.iter().map(|r| r.seconds.iter().sum::<f64>()).sum();
    let mut out = String::new();
    let mut kv = |key: &str, val: String| {
        let _ = writeln!(out, "{key} = {val}");
    };
    kv("converged", sol.converged.to_string());
    kv("iterations", sol.iterations().to_string());
    kv("initializer_iterations", sol.initializer_iterations.to_string());
    kv("residual_phi", format!("{a:e}"));
    kv("residual_cbar", format!("{b:e}"));
    kv("residual_c", format!("{c:e}"));
    kv("tail_monotone", sol.tail_is_monotone(10, 0.2).to_string());
    kv("omega", k.omega.to_string());
    kv("vertices", sol.mesh.num_vertices().to_string());
    kv("tets", sol.mesh.num_tets().to_string());
    kv("solvent_nodes", sol.sub.num_vertices().to_string());
    kv("species", sol.species.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(" "));
    kv("setup_seconds", format!("{:.3}", sol.setup_seconds));
    kv("iteration_seconds", format!("{total:.3}"));
    kv("u_min", format!("{:e}", sol.u.iter().cloned().fold(f64::INFINITY, f64::min)));
    kv("u_max", format!("{:e}", sol.u.iter().cloned().fold(f64::NEG_INFINITY, f64::max)));
    for (s, f) in sol.species.iter().zip(&sol.c) {
        let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        kv(&format!("c_{}_range", s.name), format!("{lo:e} {hi:e}"));
    }
    out
}

/// Legacy ASCII unstructured grid with point data `u`, `Psi`, `G_capped`
/// (clamped to the exponent cap) and each `c_i` (−1 off the solvent).
pub fn vtk_text(sol: &Solution) -> String {
    let mesh = &sol.mesh;
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0\nsmpnp solution\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(out, "POINTS {} double", mesh.num_vertices());
    for p in mesh.vertices() {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    let nt = mesh.num_tets();
    let _ = writeln!(out, "CELLS {nt} {}", 5 * nt);
    for t in mesh.tets() {
        let _ = writeln!(out, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(out, "CELL_TYPES {nt}");
    for _ in 0..nt {
        out.push_str("10\n");
    }
    let _ = writeln!(out, "CELL_DATA {nt}\nSCALARS region int 1\nLOOKUP_TABLE default");
    for r in mesh.regions() {
        let _ = writeln!(out, "{}", r.tag());
    }
    let _ = writeln!(out, "POINT_DATA {}", mesh.num_vertices());
    let cap = sol.constants.cap;
    let mut scalar = |name: &str, f: &mut dyn Iterator<Item = f64>| {
        let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for x in f {
            let _ = writeln!(out, "{x:e}");
        }
    };
    scalar("u", &mut sol.u.iter().copied());
    scalar("Psi", &mut sol.psi.iter().copied());
    scalar("G_capped", &mut sol.g.iter().map(|g| g.clamp(-cap, cap)));
    for (s, f) in sol.species.iter().zip(&sol.c) {
        let full = sol.sub.prolong(f, -1.0).expect("solvent field length");
        scalar(&format!("c_{}", s.name), &mut full.into_iter());
    }
    out
}

pub fn write_vtk(sol: &Solution, path: &Path) -> io::Result<()> {
    fs::write(path, vtk_text(sol))
}

/// Writes `solution.vtk`, `profiles.csv`, `convergence.csv` and `summary.txt`
/// into the solution's output directory.
pub fn write_outputs(sol: &Solution) -> io::Result<()> {
    let dir = &sol.output_dir;
    fs::create_dir_all(dir)?;
    write_vtk(sol, &dir.join("solution.vtk"))?;
    fs::write(dir.join("profiles.csv"), profiles_csv(sol, sol.profile_bins, sol.pore_mask_radius))?;
    fs::write(dir.join("convergence.csv"), convergence_csv(sol))?;
    fs::write(dir.join("summary.txt"), summary_text(sol))?;
    Ok(())
}
