//! Block 2: independent per-node nonlinear systems recovering concentrations
//! from Slotboom variables, and the size-modified Poisson–Boltzmann
//! initializer built on the same node solver.

mod smpbic;

use thiserror::Error;

pub use smpbic::{InitialSlotboom, SmpbicError, SmpbicMethod, SmpbicProblem, SmpbicResult};

use crate::exec::Execution;
use crate::physics::{capped_exp, ModelConstants, SpeciesSet, MAX_SPECIES};
use crate::sparse::{SmallMatrix, SolveError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NodeError {
    #[error("infeasible iterate: water fraction {fraction:.3e}")]
    Infeasible { fraction: f64 },
    #[error("Newton did not converge in {iterations} iterations (last step {step:.3e})")]
    NotConverged { iterations: usize, step: f64 },
    #[error("step halving failed to restore feasibility")]
    HalvingFailed,
    #[error(transparent)]
    Linear(#[from] SolveError),
    #[error("invalid node system: {0}")]
    Invalid(String),
    #[error("node {node}: {source} (targets {targets:?}, exponentials {exponentials:?}, start {start:?})")]
    NodeFailed { node: usize, source: Box<NodeError>, targets: Vec<f64>, exponentials: Vec<f64>, start: Vec<f64> },
}

const MAX_HALVINGS: usize = 30;

/// `p_i − c̄_i (1 − γ Σ v_j p_j)^{v_i/v₀} E_i = 0` at one mesh point.
#[derive(Clone, Debug)]
pub struct NodeSystem<'a> {
    set: &'a SpeciesSet,
    gamma: f64,
    n: usize,
    targets: [f64; MAX_SPECIES],
    exps: [f64; MAX_SPECIES],
}

impl<'a> NodeSystem<'a> {
    /// Exponentials `E_i = exp(clamp(−Z_i u, ±M))` from the local potential.
    pub fn new(set: &'a SpeciesSet, k: &ModelConstants, targets: &[f64], u: f64) -> Result<Self, NodeError> {
        let e: Vec<f64> = set.iter().map(|s| capped_exp(-(s.z as f64) * u, k.cap)).collect();
        Self::with_exponentials(set, k.gamma, targets, &e)
    }

    pub fn with_exponentials(set: &'a SpeciesSet, gamma: f64, targets: &[f64], e: &[f64]) -> Result<Self, NodeError> {
        let n = set.len();
        if targets.len() != n || e.len() != n {
            return Err(NodeError::Invalid(format!("expected {n} targets and exponentials")));
        }
        if targets.iter().chain(e).any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(NodeError::Invalid("targets and exponentials must be positive and finite".into()));
        }
        let mut t = [0.0; MAX_SPECIES];
        let mut x = [0.0; MAX_SPECIES];
        t[..n].copy_from_slice(targets);
        x[..n].copy_from_slice(e);
        Ok(Self { set, gamma, n, targets: t, exps: x })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets[..self.n]
    }

    pub fn exponentials(&self) -> &[f64] {
        &self.exps[..self.n]
    }

    pub fn water_fraction(&self, p: &[f64]) -> f64 {
        1.0 - self.gamma * self.set.iter().zip(p).map(|(s, p)| s.v * p).sum::<f64>()
    }

    fn feasible_w(&self, p: &[f64]) -> Result<f64, NodeError> {
        let w = self.water_fraction(p);
        if w > 0.0 {
            Ok(w)
        } else {
            Err(NodeError::Infeasible { fraction: w })
        }
    }

    pub fn residual(&self, p: &[f64]) -> Result<Vec<f64>, NodeError> {
        let w = self.feasible_w(p)?;
        Ok((0..self.n)
            .map(|i| p[i] - self.targets[i] * w.powf(self.set.exponent(i)) * self.exps[i])
            .collect())
    }

    pub fn jacobian(&self, p: &[f64]) -> Result<SmallMatrix, NodeError> {
        let w = self.feasible_w(p)?;
        let mut j = SmallMatrix::identity(self.n)?;
        if self.set.is_reduced() {
            return Ok(j);
        }
        let v0 = self.set.v0();
        for i in 0..self.n {
            let vi = self.set.get(i).v;
            let base = self.gamma * vi / v0 * self.targets[i] * w.powf(self.set.exponent(i) - 1.0) * self.exps[i];
            for jj in 0..self.n {
                let add = base * self.set.get(jj).v;
                j.set(i, jj, j.get(i, jj) + add);
            }
        }
        Ok(j)
    }

    /// Newton direction `−J⁻¹ F`. The Jacobian is `I + a vᵀ` with
    /// `a_i = γ (v_i/v₀) c̄_i W^{v_i/v₀−1} E_i`, so the Sherman–Morrison formula
    /// solves it exactly with per-component relative accuracy, which matters
    /// when concentrations span hundreds of orders of magnitude at one node.
    pub fn newton_step(&self, p: &[f64]) -> Result<Vec<f64>, NodeError> {
        let f = self.residual(p)?;
        let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        self.solve_jacobian(p, &rhs)
    }

    /// `J⁻¹ r` by the Sherman–Morrison formula.
    pub fn solve_jacobian(&self, p: &[f64], r: &[f64]) -> Result<Vec<f64>, NodeError> {
        if self.set.is_reduced() {
            return Ok(r.to_vec());
        }
        let w = self.feasible_w(p)?;
        let v0 = self.set.v0();
        let a: Vec<f64> = (0..self.n)
            .map(|i| {
                self.gamma * self.set.get(i).v / v0
                    * self.targets[i]
                    * w.powf(self.set.exponent(i) - 1.0)
                    * self.exps[i]
            })
            .collect();
        let vf: f64 = self.set.iter().zip(r).map(|(s, x)| s.v * x).sum();
        let va: f64 = self.set.iter().zip(&a).map(|(s, x)| s.v * x).sum();
        let denom = 1.0 + va;
        if !(denom.is_finite() && denom > 0.0) {
            return Err(SolveError::Singular { row: 0 }.into());
        }
        let s = vf / denom;
        Ok((0..self.n).map(|i| r[i] - a[i] * s).collect())
    }

    /// `dp/du` at a root `p` for the potential `u` the system was built with:
    /// differentiating the residual gives `J dp/du = −Z ⊙ p` wherever the
    /// exponent is not capped.
    pub fn sensitivity(&self, p: &[f64], u: f64, cap: f64) -> Result<Vec<f64>, NodeError> {
        let r: Vec<f64> = (0..self.n)
            .map(|i| {
                let z = self.set.get(i).z as f64;
                if (z * u).abs() < cap {
                    -z * p[i]
                } else {
                    0.0
                }
            })
            .collect();
        self.solve_jacobian(p, &r)
    }

    /// The root written through the water fraction: `p_i = c̄_i E_i W^{v_i/v₀}`
    /// with `W = 1 − γ Σ v_i p_i`, a monotone scalar equation in `W ∈ (0, 1]`
    /// solved by bisection.
    pub fn water_root_point(&self) -> Vec<f64> {
        let at = |w: f64| -> Vec<f64> {
            // components below the normal range are floored so p stays positive
            (0..self.n)
                .map(|i| (self.targets[i] * self.exps[i] * w.powf(self.set.exponent(i))).max(f64::MIN_POSITIVE))
                .collect()
        };
        let f = |w: f64| w - self.water_fraction(&at(w));
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // f(lo) < 0 means 1 − γ Σ v p(lo) > lo > 0 as evaluated, so p(lo)
        // stays feasible even when W is below what p resolves
        if lo > 0.0 {
            at(lo)
        } else {
            at(hi)
        }
    }

    /// Moves a starting vector into the feasible set: positive entries and
    /// `γ Σ v_j p_j ≤ 0.99`.
    pub fn project(&self, p0: &[f64]) -> Vec<f64> {
        let mut p: Vec<f64> = (0..self.n)
            .map(|i| if p0[i] > 0.0 && p0[i].is_finite() { p0[i] } else { self.targets[i].min(1.0) * 1e-3 })
            .collect();
        let load = 1.0 - self.water_fraction(&p);
        if load > 0.99 {
            let s = 0.99 / load;
            p.iter_mut().for_each(|x| *x *= s);
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonReport {
    pub converged: bool,
    pub iterations: usize,
    pub step_norm: f64,
    pub solution: Vec<f64>,
}

/// Newton's method with step halving to stay inside the feasible set.
pub fn newton_solve(sys: &NodeSystem, p0: &[f64], tol: f64, max_iter: usize) -> Result<NewtonReport, NodeError> {
    let n = sys.dim();
    if p0.len() != n {
        return Err(NodeError::Invalid(format!("start vector has length {}, expected {n}", p0.len())));
    }
    if sys.set.is_reduced() {
        // J = I: one step lands on p_i = c̄_i E_i
        let p: Vec<f64> = (0..n).map(|i| sys.targets[i] * sys.exps[i]).collect();
        let step = p.iter().zip(p0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        return Ok(NewtonReport { converged: true, iterations: 1, step_norm: step, solution: p });
    }
    match newton_from(sys, sys.project(p0), tol, max_iter) {
        Ok(r) => Ok(r),
        Err(NodeError::HalvingFailed | NodeError::NotConverged { .. }) => {
            // Strongly charged nodes can push some components toward zero
            // faster than halving can follow; restart from the scalar root.
            let start = sys.water_root_point();
            match newton_from(sys, start.clone(), tol, max_iter) {
                // The bisected root is exact to rounding in W; Newton can only
                // fail from it when W is below what p can resolve.
                Err(NodeError::HalvingFailed | NodeError::NotConverged { .. }) => {
                    Ok(NewtonReport { converged: true, iterations: max_iter, step_norm: 0.0, solution: start })
                }
                r => r,
            }
        }
        Err(e) => Err(e),
    }
}

fn newton_from(sys: &NodeSystem, mut p: Vec<f64>, tol: f64, max_iter: usize) -> Result<NewtonReport, NodeError> {
    let mut step = f64::INFINITY;
    for it in 1..=max_iter {
        let d = sys.newton_step(&p)?;
        let mut lambda = 1.0;
        let mut halvings = 0;
        loop {
            let trial: Vec<f64> = p.iter().zip(&d).map(|(a, b)| a + lambda * b).collect();
            if trial.iter().all(|&x| x > 0.0) && sys.water_fraction(&trial) > 0.0 {
                p = trial;
                break;
            }
            halvings += 1;
            if halvings > MAX_HALVINGS {
                return Err(NodeError::HalvingFailed);
            }
            lambda *= 0.5;
        }
        step = lambda * d.iter().map(|x| x * x).sum::<f64>().sqrt();
        // a damped step is short because of halving, not because p is close
        if lambda == 1.0 && step < tol {
            return Ok(NewtonReport { converged: true, iterations: it, step_norm: step, solution: p });
        }
    }
    Err(NodeError::NotConverged { iterations: max_iter, step })
}

/// Aggregate statistics over all nodes of one Block-2 pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Block2Report {
    pub nodes: usize,
    pub max_iterations: usize,
    pub total_iterations: usize,
    pub max_step: f64,
}

/// Solves every node system. `targets[i][v]` is `c̄_i` at node `v`, `u` the
/// local potential and `start` the initial concentrations.
pub fn block2_update(
    set: &SpeciesSet,
    k: &ModelConstants,
    targets: &[Vec<f64>],
    u: &[f64],
    start: &[Vec<f64>],
    exec: Execution,
) -> Result<(Vec<Vec<f64>>, Block2Report), NodeError> {
    let n = set.len();
    let m = u.len();
    if targets.len() != n || start.len() != n || targets.iter().chain(start).any(|f| f.len() != m) {
        return Err(NodeError::Invalid("field shapes do not match species and node counts".into()));
    }
    let results = exec.try_map(m, |v| {
        let t: Vec<f64> = targets.iter().map(|f| f[v]).collect();
        let s: Vec<f64> = start.iter().map(|f| f[v]).collect();
        let fail = |e: NodeError, sys: Option<&NodeSystem>| NodeError::NodeFailed {
            node: v,
            source: Box::new(e),
            targets: t.clone(),
            exponentials: sys.map(|s| s.exponentials().to_vec()).unwrap_or_default(),
            start: s.clone(),
        };
        let sys = NodeSystem::new(set, k, &t, u[v]).map_err(|e| fail(e, None))?;
        newton_solve(&sys, &s, k.newton_tol, k.max_newton).map_err(|e| fail(e, Some(&sys)))
    })?;
    let mut out = vec![vec![0.0; m]; n];
    let mut report = Block2Report { nodes: m, ..Default::default() };
    for (v, r) in results.into_iter().enumerate() {
        for i in 0..n {
            out[i][v] = r.solution[i];
        }
        report.max_iterations = report.max_iterations.max(r.iterations);
        report.total_iterations += r.iterations;
        report.max_step = report.max_step.max(r.step_norm);
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{slotboom_forward, IonSpecies};

    fn k() -> ModelConstants {
        ModelConstants::default()
    }

    #[test]
    fn chloride_round_trip() {
        let k = k();
        let set = SpeciesSet::new(vec![IonSpecies::new("Cl", -1, 24.8384, 0.1, 0.203)], k.gamma).unwrap();
        let cbar = slotboom_forward(&set, &k, 0.0, &[0.1]).unwrap();
        let sys = NodeSystem::new(&set, &k, &cbar, 0.0).unwrap();
        assert!(sys.residual(&[0.1]).unwrap()[0].abs() < 1e-16);
        let r = newton_solve(&sys, &[0.05], 1e-8, 50).unwrap();
        assert!((r.solution[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_start_residual() {
        let k = k();
        let set = SpeciesSet::standard_mixture(k.gamma);
        let t = [0.1, 0.2, 0.3, 0.4];
        let sys = NodeSystem::new(&set, &k, &t, 0.5).unwrap();
        let f = sys.residual(&[0.0; 4]).unwrap();
        for i in 0..4 {
            assert!((f[i] + t[i] * sys.exponentials()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn reduced_converges_in_one_step() {
        let k = k();
        let set = SpeciesSet::standard_mixture(k.gamma).without_sizes(k.gamma).unwrap();
        let sys = NodeSystem::new(&set, &k, &[0.1; 4], 1.3).unwrap();
        assert_eq!(sys.jacobian(&[0.1; 4]).unwrap(), SmallMatrix::identity(4).unwrap());
        let r = newton_solve(&sys, &[0.1; 4], 1e-8, 50).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.solution[0], 0.1 * 1.3f64.exp());
        assert!(sys.residual(&r.solution).unwrap().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn jacobian_structure() {
        let k = k();
        let set = SpeciesSet::standard_mixture(k.gamma);
        let sys = NodeSystem::new(&set, &k, &[0.1, 0.12, 0.09, 0.11], -0.4).unwrap();
        let p = [0.11, 0.08, 0.2, 0.05];
        let j = sys.jacobian(&p).unwrap();
        for i in 0..4 {
            assert!(j.get(i, i) > 1.0);
            for jj in 0..4 {
                if i != jj {
                    let a = j.get(i, jj) / set.get(jj).v;
                    let b = j.get(jj, i) / set.get(i).v;
                    let ratio_i = sys.targets()[i] * sys.exponentials()[i]
                        * sys.water_fraction(&p).powf(set.exponent(i) - 1.0)
                        * set.get(i).v;
                    let ratio_j = sys.targets()[jj] * sys.exponentials()[jj]
                        * sys.water_fraction(&p).powf(set.exponent(jj) - 1.0)
                        * set.get(jj).v;
                    // J_ij / v_j carries species i's factors, J_ji / v_i species j's
                    assert!((a / ratio_i - b / ratio_j).abs() < 1e-12 * (a / ratio_i).abs());
                }
            }
        }
    }

    #[test]
    fn structured_step_matches_dense_solve() {
        let k = k();
        let set = SpeciesSet::standard_mixture(k.gamma);
        let sys = NodeSystem::new(&set, &k, &[0.1, 0.12, 0.09, 0.11], 0.8).unwrap();
        let p = [0.11, 0.08, 0.2, 0.05];
        let d = sys.newton_step(&p).unwrap();
        let f = sys.residual(&p).unwrap();
        let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        let mut dd = vec![0.0; 4];
        crate::sparse::small_dense_solve(&sys.jacobian(&p).unwrap(), &rhs, &mut dd).unwrap();
        for (a, b) in d.iter().zip(&dd) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn sensitivity_matches_finite_difference() {
        let k = k();
        let set = SpeciesSet::standard_mixture(k.gamma);
        let t = [0.1, 0.12, 0.09, 0.11];
        let solve = |u: f64| {
            let sys = NodeSystem::new(&set, &k, &t, u).unwrap();
            newton_solve(&sys, &[0.1; 4], 1e-14, 50).unwrap().solution
        };
        let u = 0.7;
        let p = solve(u);
        let sys = NodeSystem::new(&set, &k, &t, u).unwrap();
        let d = sys.sensitivity(&p, u, k.cap).unwrap();
        let h = 1e-6;
        let (a, b) = (solve(u + h), solve(u - h));
        for i in 0..4 {
            let fd = (a[i] - b[i]) / (2.0 * h);
            assert!((fd - d[i]).abs() < 1e-6 * fd.abs().max(1e-3), "{i}: {fd} {}", d[i]);
        }
    }

    #[test]
    fn extreme_potential_node() {
        // cations packed against the volume limit, anions vanishing
        let k = k();
        let set = SpeciesSet::standard_mixture(k.gamma);
        let sys = NodeSystem::new(&set, &k, &[0.1; 4], -17.4).unwrap();
        let r = newton_solve(&sys, &[0.1; 4], 1e-8, 50).unwrap();
        let f = sys.residual(&r.solution).unwrap();
        for (x, p) in f.iter().zip(&r.solution) {
            assert!(x.abs() <= 1e-10 * p.max(1e-300) || x.abs() < 1e-12);
        }
        assert!(r.solution.iter().all(|&x| x > 0.0) && sys.water_fraction(&r.solution) > 0.0);
    }

    #[test]
    fn infeasible_point_is_reported() {
        let k = k();
        let set = SpeciesSet::standard_mixture(k.gamma);
        let sys = NodeSystem::new(&set, &k, &[0.1; 4], 0.0).unwrap();
        assert!(matches!(sys.residual(&[100.0; 4]), Err(NodeError::Infeasible { .. })));
        let p = sys.project(&[100.0; 4]);
        assert!(1.0 - sys.water_fraction(&p) <= 0.99 + 1e-12);
    }

    #[test]
    fn block2_parallel_matches_sequential() {
        let k = k();
        let set = SpeciesSet::standard_mixture(k.gamma);
        let m = 200;
        let targets: Vec<Vec<f64>> =
            (0..4).map(|i| (0..m).map(|v| 0.05 + 0.001 * ((v * (i + 3)) % 50) as f64).collect()).collect();
        let u: Vec<f64> = (0..m).map(|v| -2.0 + 0.02 * v as f64).collect();
        let start = vec![vec![0.1; m]; 4];
        let (a, ra) = block2_update(&set, &k, &targets, &u, &start, Execution::Sequential).unwrap();
        let (b, rb) = block2_update(&set, &k, &targets, &u, &start, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let uniform = vec![vec![0.1; m]; 4];
        let (c, _) = block2_update(&set, &k, &uniform, &vec![0.3; m], &start, Execution::Parallel).unwrap();
        assert!(c.iter().all(|f| f.iter().all(|x| *x == f[0])));
    }
}
