//! Flat `key = value` run configuration with repeated `[species]` blocks.
//!
//! ```text
//! # geometry
//! resolution = 12
//! membrane = -8 8
//! ring_count = 8
//! ring_charge = -0.1
//! sigma = -1
//! linear_method = direct
//!
//! [species]
//! name = Cl
//! z = -1
//! radius = 1.81
//! c_b = 0.1
//! d_b = 0.203
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use super::RunError;
use crate::exec::Execution;
use crate::mesh::ChannelGeometry;
use crate::node::{InitialSlotboom, SmpbicMethod};
use crate::physics::{couplings, volume_from_radius, IonSpecies, ModelConstants, SpeciesSet};
use crate::sparse::{LinearSolveSpec, Method};

#[derive(Clone, Debug, PartialEq)]
pub enum MeshSource {
    File(PathBuf),
    Synthetic(ChannelGeometry),
}

/// Fixed atomic charges: none, a file, or a ring of equal charges placed at
/// protein tet centroids of a synthetic mesh.
#[derive(Clone, Debug, PartialEq)]
pub enum AtomSource {
    None,
    File(PathBuf),
    Ring { count: usize, radius: f64, z: f64, charge: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mesh: MeshSource,
    pub atoms: AtomSource,
    pub constants: ModelConstants,
    pub species: Vec<IonSpecies>,
    pub linear: LinearSolveSpec,
    pub execution: Execution,
    pub initial_slotboom: InitialSlotboom,
    pub smpbic_method: SmpbicMethod,
    pub output_dir: PathBuf,
    pub profile_bins: usize,
    /// Cylinder radius for profile averaging; `None` picks the pore radius of
    /// a synthetic mesh, or the box diagonal.
    pub pore_mask_radius: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let constants = ModelConstants::default();
        let species = SpeciesSet::standard_mixture(constants.gamma).species().to_vec();
        Self {
            mesh: MeshSource::Synthetic(ChannelGeometry::default()),
            atoms: AtomSource::None,
            constants,
            species,
            linear: LinearSolveSpec::direct(),
            execution: Execution::default(),
            initial_slotboom: InitialSlotboom::default(),
            smpbic_method: SmpbicMethod::default(),
            output_dir: PathBuf::from("out"),
            profile_bins: 60,
            pore_mask_radius: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, RunError> {
        Parser::new(base).run(text)
    }

    pub fn species_set(&self) -> Result<SpeciesSet, RunError> {
        Ok(SpeciesSet::new(self.species.clone(), self.constants.gamma)?)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.constants.validate()?;
        self.linear.validate()?;
        self.species_set()?;
        if let MeshSource::Synthetic(g) = &self.mesh {
            g.validate()?;
        }
        if self.profile_bins == 0 {
            return Err(RunError::Config("profile_bins must be positive".into()));
        }
        if self.pore_mask_radius.is_some_and(|r| !(r > 0.0)) {
            return Err(RunError::Config("pore_mask_radius must be positive".into()));
        }
        if let AtomSource::Ring { count, radius, charge, .. } = self.atoms {
            if count == 0 || !(radius >= 0.0) || !charge.is_finite() {
                return Err(RunError::Config("ring needs count > 0, radius ≥ 0 and a finite charge".into()));
            }
        }
        Ok(())
    }

    /// Canonical text form, accepted back by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let k = &self.constants;
        let mut out = String::new();
        let mut kv = |key: &str, val: String| out.push_str(&format!("{key} = {val}\n"));
        match &self.mesh {
            MeshSource::File(p) => kv("mesh_file", p.display().to_string()),
            MeshSource::Synthetic(g) => {
                kv("box_lo", join(&g.lo));
                kv("box_hi", join(&g.hi));
                kv("membrane", g.membrane.map_or("none".into(), |(a, b)| format!("{a} {b}")));
                kv("pore_radius", g.pore_radius.to_string());
                kv("shell_radius", g.shell_radius.to_string());
                kv("protein_extension", g.protein_extension.to_string());
                kv("resolution", join(&g.resolution.map(|r| r as f64)));
            }
        }
        match &self.atoms {
            AtomSource::None => {}
            AtomSource::File(p) => kv("atoms_file", p.display().to_string()),
            AtomSource::Ring { count, radius, z, charge } => {
                kv("ring_count", count.to_string());
                kv("ring_radius", radius.to_string());
                kv("ring_z", z.to_string());
                kv("ring_charge", charge.to_string());
            }
        }
        for (key, val) in [
            ("alpha", k.alpha),
            ("beta", k.beta),
            ("tau", k.tau),
            ("gamma", k.gamma),
            ("eps_p", k.eps_p),
            ("eps_m", k.eps_m),
            ("eps_s", k.eps_s),
            ("u_b", k.u_b),
            ("u_t", k.u_t),
            ("sigma", k.sigma),
            ("eta", k.eta),
            ("theta", k.theta),
            ("cap", k.cap),
            ("omega", k.omega),
            ("outer_tol", k.outer_tol),
            ("newton_tol", k.newton_tol),
        ] {
            kv(key, val.to_string());
        }
        kv("max_outer", k.max_outer.to_string());
        kv("max_newton", k.max_newton.to_string());
        kv("linear_method", if self.linear.method == Method::Direct { "direct" } else { "krylov" }.into());
        kv("linear_abs_tol", self.linear.abs_tol.to_string());
        kv("linear_rel_tol", self.linear.rel_tol.to_string());
        kv("linear_max_iter", self.linear.max_iter.to_string());
        kv("linear_restart", self.linear.restart.to_string());
        kv("execution", if self.execution == Execution::Sequential { "sequential" } else { "parallel" }.into());
        kv(
            "initial_slotboom",
            if self.initial_slotboom == InitialSlotboom::Bulk { "bulk" } else { "boundary" }.into(),
        );
        kv(
            "smpbic_method",
            if self.smpbic_method == SmpbicMethod::Newton { "newton" } else { "fixed_point" }.into(),
        );
        kv("output_dir", self.output_dir.display().to_string());
        kv("profile_bins", self.profile_bins.to_string());
        if let Some(r) = self.pore_mask_radius {
            kv("pore_mask_radius", r.to_string());
        }
        for s in &self.species {
            out.push_str(&format!("\n[species]\nname = {}\nz = {}\nv = {}\nc_b = {}\nd_b = {}\n", s.name, s.z, s.v, s.c_b, s.d_b));
            if let Some(d) = s.d_c {
                out.push_str(&format!("d_c = {d}\n"));
            }
        }
        out
    }
}

fn join(x: &[f64]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Default)]
struct SpeciesDraft {
    line: usize,
    name: Option<String>,
    z: Option<i32>,
    v: Option<f64>,
    radius: Option<f64>,
    c_b: Option<f64>,
    d_b: Option<f64>,
    d_c: Option<f64>,
}

impl SpeciesDraft {
    fn finish(self) -> Result<IonSpecies, RunError> {
        let missing = |key: &str| RunError::Config(format!("[species] block at line {}: missing `{key}`", self.line));
        let v = match (self.v, self.radius) {
            (Some(_), Some(_)) => {
                return Err(RunError::Config(format!(
                    "[species] block at line {}: give either `v` or `radius`, not both",
                    self.line
                )))
            }
            (Some(v), None) => v,
            (None, Some(r)) => volume_from_radius(r),
            (None, None) => return Err(missing("v or radius")),
        };
        Ok(IonSpecies {
            name: self.name.clone().ok_or_else(|| missing("name"))?,
            z: self.z.ok_or_else(|| missing("z"))?,
            v,
            c_b: self.c_b.ok_or_else(|| missing("c_b"))?,
            d_b: self.d_b.ok_or_else(|| missing("d_b"))?,
            d_c: self.d_c,
        })
    }
}

struct Parser<'a> {
    base: &'a Path,
    cfg: RunConfig,
    geom: ChannelGeometry,
    geometry_keys: bool,
    mesh_file: Option<PathBuf>,
    temperature: Option<f64>,
    coupling_overrides: [Option<f64>; 4],
    ring: [Option<f64>; 4],
    species: Vec<IonSpecies>,
    draft: Option<SpeciesDraft>,
    seen: std::collections::HashSet<String>,
}

impl<'a> Parser<'a> {
    fn new(base: &'a Path) -> Self {
        Self {
            base,
            cfg: RunConfig::default(),
            geom: ChannelGeometry::default(),
            geometry_keys: false,
            mesh_file: None,
            temperature: None,
            coupling_overrides: [None; 4],
            ring: [None; 4],
            species: Vec::new(),
            draft: None,
            seen: Default::default(),
        }
    }

    fn run(mut self, text: &str) -> Result<RunConfig, RunError> {
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if line != "[species]" {
                    return Err(err(line_no, format!("unknown section {line}")));
                }
                if let Some(d) = self.draft.take() {
                    self.species.push(d.finish()?);
                }
                self.draft = Some(SpeciesDraft { line: line_no, ..Default::default() });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(line_no, format!("expected `key = value`, found `{line}`")))?;
            if value.is_empty() {
                return Err(err(line_no, format!("`{key}` has no value")));
            }
            if self.draft.is_some() {
                self.species_key(line_no, key, value)?;
            } else {
                if !self.seen.insert(key.to_string()) {
                    return Err(err(line_no, format!("duplicate key `{key}`")));
                }
                self.key(line_no, key, value)?;
            }
        }
        if let Some(d) = self.draft.take() {
            self.species.push(d.finish()?);
        }
        self.finish()
    }

    fn species_key(&mut self, line: usize, key: &str, value: &str) -> Result<(), RunError> {
        let d = self.draft.as_mut().expect("inside a species block");
        let dup = |set: bool| if set { Err(err(line, format!("duplicate species key `{key}`"))) } else { Ok(()) };
        match key {
            "name" => {
                dup(d.name.is_some())?;
                d.name = Some(value.to_string());
            }
            "z" => {
                dup(d.z.is_some())?;
                d.z = Some(value.parse().map_err(|_| err(line, format!("`z` must be an integer, found `{value}`")))?);
            }
            "v" => {
                dup(d.v.is_some())?;
                d.v = Some(num(line, key, value)?);
            }
            "radius" => {
                dup(d.radius.is_some())?;
                d.radius = Some(num(line, key, value)?);
            }
            "c_b" => {
                dup(d.c_b.is_some())?;
                d.c_b = Some(num(line, key, value)?);
            }
            "d_b" => {
                dup(d.d_b.is_some())?;
                d.d_b = Some(num(line, key, value)?);
            }
            "d_c" => {
                dup(d.d_c.is_some())?;
                d.d_c = Some(num(line, key, value)?);
            }
            other => return Err(err(line, format!("unknown species key `{other}`"))),
        }
        Ok(())
    }

    fn key(&mut self, line: usize, key: &str, value: &str) -> Result<(), RunError> {
        let k = &mut self.cfg.constants;
        let f = || num(line, key, value);
        let u = || count(line, key, value);
        match key {
            "mesh_file" => self.mesh_file = Some(self.base.join(value)),
            "box_lo" => self.geometry(|g| {
                g.lo = vec3(line, key, value)?;
                Ok(())
            })?,
            "box_hi" => self.geometry(|g| {
                g.hi = vec3(line, key, value)?;
                Ok(())
            })?,
            "membrane" => self.geometry(|g| {
                g.membrane = if value == "none" {
                    None
                } else {
                    let v = nums(line, key, value)?;
                    if v.len() != 2 {
                        return Err(err(line, "`membrane` takes two z values or `none`".into()));
                    }
                    Some((v[0], v[1]))
                };
                Ok(())
            })?,
            "pore_radius" => self.geometry(|g| {
                g.pore_radius = num(line, key, value)?;
                Ok(())
            })?,
            "shell_radius" => self.geometry(|g| {
                g.shell_radius = num(line, key, value)?;
                Ok(())
            })?,
            "protein_extension" => self.geometry(|g| {
                g.protein_extension = num(line, key, value)?;
                Ok(())
            })?,
            "resolution" => self.geometry(|g| {
                let v: Vec<usize> = value
                    .split_whitespace()
                    .map(|s| s.parse().map_err(|_| err(line, format!("`resolution` entries must be integers, found `{s}`"))))
                    .collect::<Result<_, _>>()?;
                g.resolution = match v[..] {
                    [n] => [n; 3],
                    [a, b, c] => [a, b, c],
                    _ => return Err(err(line, "`resolution` takes one or three integers".into())),
                };
                Ok(())
            })?,
            "atoms_file" => {
                if self.ring.iter().any(Option::is_some) {
                    return Err(err(line, "`atoms_file` conflicts with ring_* keys".into()));
                }
                self.cfg.atoms = AtomSource::File(self.base.join(value));
            }
            "ring_count" => self.ring[0] = Some(u()? as f64),
            "ring_radius" => self.ring[1] = Some(f()?),
            "ring_z" => self.ring[2] = Some(f()?),
            "ring_charge" => self.ring[3] = Some(f()?),
            "temperature" => self.temperature = Some(f()?),
            "alpha" => self.coupling_overrides[0] = Some(f()?),
            "beta" => self.coupling_overrides[1] = Some(f()?),
            "tau" => self.coupling_overrides[2] = Some(f()?),
            "gamma" => self.coupling_overrides[3] = Some(f()?),
            "eps_p" => k.eps_p = f()?,
            "eps_m" => k.eps_m = f()?,
            "eps_s" => k.eps_s = f()?,
            "u_b" => k.u_b = f()?,
            "u_t" => k.u_t = f()?,
            "sigma" => k.sigma = f()?,
            "eta" => k.eta = f()?,
            "theta" => k.theta = f()?,
            "cap" => k.cap = f()?,
            "omega" => k.omega = f()?,
            "outer_tol" => k.outer_tol = f()?,
            "newton_tol" => k.newton_tol = f()?,
            "max_outer" => k.max_outer = u()?,
            "max_newton" => k.max_newton = u()?,
            "linear_method" => self.cfg.linear.method = value.parse().map_err(|e| err(line, e))?,
            "linear_abs_tol" => self.cfg.linear.abs_tol = f()?,
            "linear_rel_tol" => self.cfg.linear.rel_tol = f()?,
            "linear_max_iter" => self.cfg.linear.max_iter = u()?,
            "linear_restart" => self.cfg.linear.restart = u()?,
            "execution" => self.cfg.execution = value.parse().map_err(|e| err(line, e))?,
            "initial_slotboom" => self.cfg.initial_slotboom = value.parse().map_err(|e| err(line, e))?,
            "smpbic_method" => self.cfg.smpbic_method = value.parse().map_err(|e| err(line, e))?,
            "output_dir" => self.cfg.output_dir = self.base.join(value),
            "profile_bins" => self.cfg.profile_bins = u()?,
            "pore_mask_radius" => self.cfg.pore_mask_radius = Some(f()?),
            other => return Err(err(line, format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn geometry(&mut self, set: impl FnOnce(&mut ChannelGeometry) -> Result<(), RunError>) -> Result<(), RunError> {
        self.geometry_keys = true;
        set(&mut self.geom)
    }

    fn finish(mut self) -> Result<RunConfig, RunError> {
        self.cfg.mesh = match (self.mesh_file, self.geometry_keys) {
            (Some(_), true) => return Err(RunError::Config("`mesh_file` conflicts with synthetic geometry keys".into())),
            (Some(p), false) => MeshSource::File(p),
            (None, _) => MeshSource::Synthetic(self.geom),
        };
        if self.ring.iter().any(Option::is_some) {
            let [count, radius, z, charge] = self.ring;
            let count = count.ok_or_else(|| RunError::Config("ring_count is required with ring_* keys".into()))?;
            let charge = charge.ok_or_else(|| RunError::Config("ring_charge is required with ring_* keys".into()))?;
            let radius = radius.unwrap_or_else(|| match &self.cfg.mesh {
                MeshSource::Synthetic(g) => 0.5 * (g.pore_radius + g.shell_radius),
                MeshSource::File(_) => 0.0,
            });
            self.cfg.atoms = AtomSource::Ring { count: count as usize, radius, z: z.unwrap_or(0.0), charge };
        }
        let k = &mut self.cfg.constants;
        if let Some(t) = self.temperature {
            if !(t > 0.0) {
                return Err(RunError::Config("temperature must be positive".into()));
            }
            (k.alpha, k.beta, k.tau, k.gamma) = couplings(t);
        }
        let [a, b, t, g] = self.coupling_overrides;
        k.alpha = a.unwrap_or(k.alpha);
        k.beta = b.unwrap_or(k.beta);
        k.tau = t.unwrap_or(k.tau);
        k.gamma = g.unwrap_or(k.gamma);
        if !self.species.is_empty() {
            self.cfg.species = self.species;
        }
        self.cfg.validate()?;
        Ok(self.cfg)
    }
}

fn err(line: usize, msg: String) -> RunError {
    RunError::Config(format!("line {line}: {msg}"))
}

fn num(line: usize, key: &str, value: &str) -> Result<f64, RunError> {
    value
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| err(line, format!("`{key}` must be a finite number, found `{value}`")))
}

fn nums(line: usize, key: &str, value: &str) -> Result<Vec<f64>, RunError> {
    value.split_whitespace().map(|s| num(line, key, s)).collect()
}

fn vec3(line: usize, key: &str, value: &str) -> Result<[f64; 3], RunError> {
    let v = nums(line, key, value)?;
    v.try_into().map_err(|_| err(line, format!("`{key}` takes three numbers")))
}

fn count(line: usize, key: &str, value: &str) -> Result<usize, RunError> {
    value.parse().map_err(|_| err(line, format!("`{key}` must be a non-negative integer, found `{value}`")))
}
