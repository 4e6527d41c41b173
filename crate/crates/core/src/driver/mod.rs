//! The damped three-block outer iteration, its configuration and outputs.
//!
//! Each outer iteration runs, in order:
//!
//! 1. the transformed Nernst–Planck solves for `c̄` with `u = w + Φ̃ᵏ` and `cᵏ`,
//!    damped into `c̄ᵏ⁺¹`;
//! 2. the per-node systems for `c` with targets `c̄ᵏ⁺¹`, damped into `cᵏ⁺¹`;
//! 3. the `Φ̃` solve with `cᵏ⁺¹`, damped into `Φ̃ᵏ⁺¹`;
//!
//! and stops once the L2 differences of all three damped iterates fall below
//! the outer tolerance.

mod config;
mod output;

use std::path::PathBuf;
use std::time::Instant;

use thiserror::Error;

pub use config::{AtomSource, MeshSource, RunConfig};
pub use output::{
    convergence_csv, pore_average, pore_profiles, profiles_csv, summary_text, vtk_text, write_outputs, write_vtk,
    ProfileRow,
};

use crate::electrostatics::{eval_g, AtomicCharges, ElectroError, PoissonOperator};
use crate::fem::FemError;
use crate::mesh::{
    extract_solvent_submesh, load_mesh, protein_ring_sites, synth_channel_mesh, LabeledMesh, MeshError, SolventSubmesh,
};
use crate::node::{block2_update, NodeError, SmpbicError, SmpbicProblem};
use crate::physics::{water_fraction, ModelConstants, PhysicsError, SpeciesSet};
use crate::sparse::SolveError;
use crate::transport::{Transport, TransportError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Electro(#[from] ElectroError),
    #[error("initializer: {0}")]
    Initializer(#[from] SmpbicError),
    #[error("iteration {iteration}, block 1: {source}")]
    Block1 { iteration: usize, source: TransportError },
    #[error("iteration {iteration}, block 2: {source}")]
    Block2 { iteration: usize, source: NodeError },
    #[error("iteration {iteration}, block 3: {source}")]
    Block3 { iteration: usize, source: ElectroError },
    #[error("iteration {iteration}: concentrations left the feasible set at solvent node {node}")]
    Infeasible { iteration: usize, node: usize },
    #[error("no convergence after {iterations} iterations (residuals {last:?})")]
    NotConverged { iterations: usize, last: [f64; 3], solution: Box<Solution> },
    #[error("output: {0}")]
    Output(#[from] std::io::Error),
}

/// Per-iteration diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// `‖Φ̃ᵏ⁺¹ − Φ̃ᵏ‖` on Ω.
    pub d_phi: f64,
    /// `max_i ‖c̄_iᵏ⁺¹ − c̄_iᵏ‖` on the solvent.
    pub d_cbar: f64,
    /// `max_i ‖c_iᵏ⁺¹ − c_iᵏ‖` on the solvent.
    pub d_c: f64,
    /// Wall time of blocks 1–3, seconds.
    pub seconds: [f64; 3],
    pub newton_max_iterations: usize,
    pub min_concentration: f64,
    pub min_water_fraction: f64,
}

impl IterationRecord {
    pub fn max_residual(&self) -> f64 {
        self.d_phi.max(self.d_cbar).max(self.d_c)
    }
}

#[derive(Clone, Debug)]
pub struct BlockIterState {
    pub k: usize,
    pub cbar: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    /// `Φ̃` on Ω.
    pub phi: Vec<f64>,
    pub omega: f64,
    pub history: Vec<IterationRecord>,
}

/// Converged (or last) fields plus diagnostics.
#[derive(Clone)]
pub struct Solution {
    pub mesh: LabeledMesh,
    pub sub: SolventSubmesh,
    pub species: SpeciesSet,
    pub constants: ModelConstants,
    pub g: Vec<f64>,
    pub psi: Vec<f64>,
    pub phi_tilde: Vec<f64>,
    /// `u = G + Ψ + Φ̃` on Ω.
    pub u: Vec<f64>,
    /// Concentrations on the solvent submesh.
    pub c: Vec<Vec<f64>>,
    pub cbar: Vec<Vec<f64>>,
    pub history: Vec<IterationRecord>,
    pub initializer_iterations: usize,
    pub converged: bool,
    pub setup_seconds: f64,
    pub pore_mask_radius: f64,
    pub profile_bins: usize,
    pub output_dir: PathBuf,
}

impl Solution {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn final_residuals(&self) -> [f64; 3] {
        self.history.last().map_or([0.0; 3], |r| [r.d_phi, r.d_cbar, r.d_c])
    }

    /// Soft check on the last `window` iterations: the largest residual never
    /// grows by more than the relative `band`.
    pub fn tail_is_monotone(&self, window: usize, band: f64) -> bool {
        let start = self.history.len().saturating_sub(window);
        self.history[start..].windows(2).all(|w| w[1].max_residual() <= (1.0 + band) * w[0].max_residual())
    }
}

impl std::fmt::Debug for Solution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Solution")
            .field("vertices", &self.mesh.num_vertices())
            .field("solvent_nodes", &self.sub.num_vertices())
            .field("iterations", &self.iterations())
            .field("converged", &self.converged)
            .field("final_residuals", &self.final_residuals())
            .finish_non_exhaustive()
    }
}

/// Mesh, operators and the fixed potential parts, built once per run.
pub struct Simulation {
    config: RunConfig,
    mesh: LabeledMesh,
    sub: SolventSubmesh,
    atoms: AtomicCharges,
    species: SpeciesSet,
    op: PoissonOperator,
    transport: Transport,
    g: Vec<f64>,
    psi: Vec<f64>,
    w: Vec<f64>,
    pore_mask_radius: f64,
    setup_seconds: f64,
}

impl Simulation {
    /// Loads or synthesizes the mesh, places the atoms and solves `Ψ`.
    pub fn new(config: RunConfig) -> Result<Self, RunError> {
        config.validate()?;
        let mesh = match &config.mesh {
            MeshSource::File(p) => load_mesh(p)?,
            MeshSource::Synthetic(g) => synth_channel_mesh(g)?,
        };
        let atoms = match &config.atoms {
            AtomSource::None => AtomicCharges::empty(),
            AtomSource::File(p) => AtomicCharges::load(p)?,
            AtomSource::Ring { count, radius, z, charge } => {
                let sites = protein_ring_sites(&mesh, *count, *radius, *z);
                if sites.len() != *count {
                    return Err(RunError::Config(format!(
                        "found {} distinct protein sites for a ring of {count}",
                        sites.len()
                    )));
                }
                AtomicCharges::new(sites, vec![*charge; *count])?
            }
        };
        Self::with_mesh(config, mesh, atoms)
    }

    pub fn with_mesh(config: RunConfig, mesh: LabeledMesh, atoms: AtomicCharges) -> Result<Self, RunError> {
        let t0 = Instant::now();
        config.validate()?;
        atoms.check_placement(&mesh)?;
        let species = config.species_set()?;
        let k = &config.constants;
        let exec = config.execution;
        let sub = extract_solvent_submesh(&mesh)?;
        let op = PoissonOperator::new(&mesh, k, config.linear, exec)?;
        let transport = Transport::new(&mesh, &sub, &species, k, config.linear, exec)?;
        let g = eval_g(&atoms, k, mesh.vertices(), exec);
        let psi = op.solve_psi(&mesh, &atoms, k)?;
        let w = g.iter().zip(&psi).map(|(a, b)| a + b).collect();
        let pore_mask_radius = config.pore_mask_radius.unwrap_or_else(|| match &config.mesh {
            MeshSource::Synthetic(g) if g.pore_radius > 0.0 => g.pore_radius,
            _ => mesh.extents().diagonal(),
        });
        log::info!(
            "mesh: {} vertices, {} tets ({} solvent nodes), {} atoms",
            mesh.num_vertices(),
            mesh.num_tets(),
            sub.num_vertices(),
            atoms.len()
        );
        Ok(Self {
            config,
            mesh,
            sub,
            atoms,
            species,
            op,
            transport,
            g,
            psi,
            w,
            pore_mask_radius,
            setup_seconds: t0.elapsed().as_secs_f64(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn mesh(&self) -> &LabeledMesh {
        &self.mesh
    }

    pub fn submesh(&self) -> &SolventSubmesh {
        &self.sub
    }

    pub fn atoms(&self) -> &AtomicCharges {
        &self.atoms
    }

    pub fn species(&self) -> &SpeciesSet {
        &self.species
    }

    pub fn operator(&self) -> &PoissonOperator {
        &self.op
    }

    pub fn transport(&self) -> &Transport {
        &self.transport
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    /// `w = G + Ψ` on Ω.
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    fn constants(&self) -> &ModelConstants {
        &self.config.constants
    }

    /// `w + Φ̃` restricted to the solvent.
    pub fn solvent_potential(&self, phi: &[f64]) -> Result<Vec<f64>, RunError> {
        let total: Vec<f64> = self.w.iter().zip(phi).map(|(a, b)| a + b).collect();
        Ok(self.sub.restrict(&total)?)
    }

    pub fn smpbic(&self) -> SmpbicProblem<'_> {
        SmpbicProblem {
            op: &self.op,
            sub: &self.sub,
            sub_space: self.transport.space(),
            w: &self.w,
            set: &self.species,
            k: self.constants(),
            init: self.config.initial_slotboom,
        }
    }

    /// `(c̄⁰, c⁰, Φ̃⁰)` from the equilibrium initializer; also returns its
    /// iteration count.
    pub fn initial_state(&self) -> Result<(BlockIterState, usize), RunError> {
        let r = self.smpbic().solve(self.config.smpbic_method, self.config.execution)?;
        let m = self.sub.num_vertices();
        let cbar = self
            .config
            .initial_slotboom
            .values(&self.species, self.constants())?
            .into_iter()
            .map(|x| vec![x; m])
            .collect();
        log::info!("initializer: {} iterations, increments {:?}", r.sweeps, r.increments);
        let state =
            BlockIterState { k: 0, cbar, c: r.xi, phi: r.q, omega: self.constants().omega, history: Vec::new() };
        Ok((state, r.sweeps))
    }

    /// One outer iteration; appends its record to the state's history.
    pub fn step(&self, state: &mut BlockIterState) -> Result<IterationRecord, RunError> {
        let k = self.constants();
        let it = state.k + 1;
        let omega = state.omega;
        let space = self.transport.space();
        let damp = |old: &[f64], new: &[f64]| -> Vec<f64> { old.iter().zip(new).map(|(a, b)| a + omega * (b - a)).collect() };
        let u = self.solvent_potential(&state.phi)?;

        let t = Instant::now();
        let pbar = self
            .transport
            .solve_all(&u, &state.c, Some(&state.cbar))
            .map_err(|source| RunError::Block1 { iteration: it, source })?;
        let cbar: Vec<Vec<f64>> = state.cbar.iter().zip(&pbar).map(|(a, b)| damp(a, b)).collect();
        let t1 = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let (p, report) = block2_update(&self.species, k, &cbar, &u, &state.c, self.config.execution)
            .map_err(|source| RunError::Block2 { iteration: it, source })?;
        let c: Vec<Vec<f64>> = state.c.iter().zip(&p).map(|(a, b)| damp(a, b)).collect();
        let t2 = t.elapsed().as_secs_f64();
        let (min_c, min_w) = self.feasibility(&c, it)?;

        let t = Instant::now();
        let q = self
            .op
            .solve_phi_tilde(&self.sub, &self.species, &c, k, Some(&state.phi))
            .map_err(|source| RunError::Block3 { iteration: it, source })?;
        let phi = damp(&state.phi, &q);
        let t3 = t.elapsed().as_secs_f64();

        let d_phi = self.op.space().l2_diff(&phi, &state.phi)?;
        let mut d_cbar = 0.0f64;
        let mut d_c = 0.0f64;
        for i in 0..self.species.len() {
            d_cbar = d_cbar.max(space.l2_diff(&cbar[i], &state.cbar[i])?);
            d_c = d_c.max(space.l2_diff(&c[i], &state.c[i])?);
        }
        let record = IterationRecord {
            k: it,
            d_phi,
            d_cbar,
            d_c,
            seconds: [t1, t2, t3],
            newton_max_iterations: report.max_iterations,
            min_concentration: min_c,
            min_water_fraction: min_w,
        };
        log::info!("iteration {it}: dphi {d_phi:.3e} dcbar {d_cbar:.3e} dc {d_c:.3e}");
        *state = BlockIterState { k: it, cbar, c, phi, omega, history: std::mem::take(&mut state.history) };
        state.history.push(record.clone());
        Ok(record)
    }

    fn feasibility(&self, c: &[Vec<f64>], iteration: usize) -> Result<(f64, f64), RunError> {
        let n = self.species.len();
        let mut min_c = f64::INFINITY;
        let mut min_w = f64::INFINITY;
        let mut node = vec![0.0; n];
        for v in 0..self.sub.num_vertices() {
            for i in 0..n {
                node[i] = c[i][v];
                min_c = min_c.min(node[i]);
            }
            let w = water_fraction(&self.species, self.constants().gamma, &node)
                .map_err(|_| RunError::Infeasible { iteration, node: v })?;
            if !(node.iter().all(|&x| x > 0.0)) {
                return Err(RunError::Infeasible { iteration, node: v });
            }
            min_w = min_w.min(w);
        }
        Ok((min_c, min_w))
    }

    /// Runs the initializer and the outer loop to convergence.
    pub fn solve(&self) -> Result<Solution, RunError> {
        let (mut state, init_iters) = self.initial_state()?;
        let k = self.constants();
        let mut converged = false;
        while state.k < k.max_outer {
            let r = self.step(&mut state)?;
            if r.max_residual() < k.outer_tol {
                converged = true;
                break;
            }
        }
        let solution = self.solution(state, init_iters, converged)?;
        if converged {
            if !solution.tail_is_monotone(10, 0.2) {
                log::warn!("residuals fluctuated by more than 20% over the last 10 iterations");
            }
            Ok(solution)
        } else {
            Err(RunError::NotConverged {
                iterations: solution.iterations(),
                last: solution.final_residuals(),
                solution: Box::new(solution),
            })
        }
    }

    fn solution(&self, state: BlockIterState, init_iters: usize, converged: bool) -> Result<Solution, RunError> {
        let u = self.w.iter().zip(&state.phi).map(|(a, b)| a + b).collect();
        Ok(Solution {
            mesh: self.mesh.clone(),
            sub: self.sub.clone(),
            species: self.species.clone(),
            constants: self.constants().clone(),
            g: self.g.clone(),
            psi: self.psi.clone(),
            phi_tilde: state.phi,
            u,
            c: state.c,
            cbar: state.cbar,
            history: state.history,
            initializer_iterations: init_iters,
            converged,
            setup_seconds: self.setup_seconds,
            pore_mask_radius: self.pore_mask_radius,
            profile_bins: self.config.profile_bins,
            output_dir: self.config.output_dir.clone(),
        })
    }
}

/// Builds the simulation and solves it.
pub fn run(config: &RunConfig) -> Result<Solution, RunError> {
    Simulation::new(config.clone())?.solve()
}
