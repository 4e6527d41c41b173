//! Finite element solver for the nonuniform size-modified Poisson–Nernst–Planck
//! ion channel model.
//!
//! The solver computes `n` ionic concentration fields on the solvent region and
//! one dimensionless electrostatic potential on a labeled box domain split into
//! solvent, protein, and membrane regions. The potential is decomposed as
//! `u = G + Ψ + Φ̃`; each Nernst–Planck equation is rewritten in size-modified
//! Slotboom variables so that a damped three-block outer iteration only needs
//! linear self-adjoint solves plus independent per-node nonlinear systems.
//!
//! Module map:
//!
//! * [`mesh`]: labeled tetrahedral meshes, the synthetic channel generator,
//!   the solvent submesh with restriction/prolongation.
//! * [`sparse`]: CSR storage, banded direct LU, ILU(0)-preconditioned GMRES,
//!   small dense elimination.
//! * [`fem`]: P1 assembly, Dirichlet constraints, L2 norms.
//! * [`physics`]: species data, model constants, diffusion profile and the
//!   Slotboom transforms.
//! * [`electrostatics`]: `G`, `Ψ` and `Φ̃`.
//! * [`transport`]: Block 1 transformed Nernst–Planck solves and fluxes.
//! * [`node`]: Block 2 per-node Newton solves and the size-modified
//!   Poisson–Boltzmann initializer.
//! * [`driver`]: configuration, the outer iteration and file outputs.

pub mod driver;
pub mod electrostatics;
pub mod exec;
pub mod fem;
pub mod mesh;
pub mod node;
pub mod physics;
pub mod sparse;
pub mod transport;

pub use driver::{run, RunConfig, RunError, Solution};
pub use exec::Execution;
pub use mesh::{LabeledMesh, SolventSubmesh};
pub use physics::{IonSpecies, ModelConstants, SpeciesSet};
