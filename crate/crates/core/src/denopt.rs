//! The fixed density-optimization procedure: dSAD initial estimate plus
//! plain gradient descent, either directly in coefficient space or in
//! Löwdin ("natrep") coordinates `q = S^{1/2} p`, where Euclidean
//! distance equals the L2 density distance.
//!
//! In natrep mode every recorded metric (gradient norm, distance to the
//! ground state, per-step contraction loss) refers to the optimization
//! coordinates, so the exponential-convergence guarantee applies
//! verbatim in either mode; the stored coefficient snapshots are always
//! mapped back to raw coefficient space.

use std::io::Write;

use thiserror::Error;

use crate::basis::{lowdin_roots, overlap_matrix, BasisError, LowdinRoots, OverlapMatrix};
use crate::fmt_g17;
use crate::losses::gdi_loss;
use crate::model::SurrogateModel;
use crate::synth::{dsad_coefficients, reference_energy_grad, Molecule};
use crate::Vector;

#[derive(Debug, Error)]
pub enum DenoptError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("failed to write trajectory: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trajectory CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// Anything that rates a coefficient vector for a molecule and exposes
/// the gradient the optimizer descends on.
pub trait EnergyGradient {
    fn evaluate(&self, mol: &Molecule, p: &Vector) -> (f64, Vector);
}

impl EnergyGradient for SurrogateModel {
    fn evaluate(&self, mol: &Molecule, p: &Vector) -> (f64, Vector) {
        self.energy_and_gradient(mol, p)
    }
}

/// The synthetic reference functional as a gradient source.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceFunctional;

impl EnergyGradient for ReferenceFunctional {
    fn evaluate(&self, mol: &Molecule, p: &Vector) -> (f64, Vector) {
        reference_energy_grad(mol, p)
    }
}

/// The idealized surrogate `E = ||p - p*||^2 / (2 lambda)`, whose
/// gradient-descent step with step size `lambda` lands exactly on the
/// ground state.
#[derive(Debug, Clone, Copy)]
pub struct ExactStepSurrogate {
    pub lambda: f64,
}

impl EnergyGradient for ExactStepSurrogate {
    fn evaluate(&self, mol: &Molecule, p: &Vector) -> (f64, Vector) {
        let d = p - &mol.ground_state;
        (d.norm_squared() / (2.0 * self.lambda), d / self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Gradient-descent step size.
    pub lambda: f64,
    /// Maximum number of steps `T`.
    pub max_steps: usize,
    /// Optimize in Löwdin coordinates.
    pub natrep: bool,
    /// Stop once the gradient norm (in optimization coordinates) falls
    /// below this threshold.
    pub stop_tol: f64,
    /// Record every n-th state (the initial and final states are always
    /// recorded).
    pub record_every: usize,
    /// Contraction factor used for the recorded per-step GDI loss.
    pub beta: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            max_steps: 500,
            natrep: false,
            stop_tol: 1e-6,
            record_every: 1,
            beta: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Gradient norm fell below `stop_tol`.
    StopTol,
    /// Step budget exhausted.
    MaxSteps,
    /// Energy or gradient became non-finite; the surrogate diverged.
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub index: usize,
    /// Coefficients in raw coefficient space.
    pub coeffs: Vector,
    pub energy: f64,
    /// Gradient norm in optimization coordinates.
    pub grad_norm: f64,
    /// Distance to the ground state in optimization coordinates.
    pub dist_to_gs: f64,
    /// GDI loss of the step taken from this state.
    pub gdi_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub terminated_by: Termination,
    pub natrep: bool,
    /// Contraction factor the recorded GDI losses refer to.
    pub beta: f64,
}

impl Trajectory {
    pub fn final_coeffs(&self) -> &Vector {
        &self.steps.last().expect("trajectory has at least one state").coeffs
    }

    pub fn final_step_index(&self) -> usize {
        self.steps.last().expect("trajectory has at least one state").index
    }
}

/// The initial estimator of the optimization procedure: the molecule's
/// superposition-of-atomic-densities coefficients.
pub fn initial_guess(mol: &Molecule) -> Vector {
    dsad_coefficients(mol)
}

/// One plain gradient-descent update `p - lambda * grad`.
pub fn gd_step(p: &Vector, grad: &Vector, lambda: f64) -> Vector {
    assert_eq!(p.len(), grad.len(), "gradient dimension mismatch");
    p - grad * lambda
}

/// Runs the full procedure from the dSAD estimate. In natrep mode the
/// molecule's overlap matrix is built and factorized here (the O(N^3)
/// step); [`optimize_with_overlap`] accepts a precomputed overlap.
pub fn optimize(
    model: &impl EnergyGradient,
    mol: &Molecule,
    cfg: &OptimizerConfig,
) -> Result<Trajectory, DenoptError> {
    let overlap = cfg.natrep.then(|| overlap_matrix(&mol.basis));
    optimize_with_overlap(model, mol, cfg, overlap.as_ref())
}

pub fn optimize_with_overlap(
    model: &impl EnergyGradient,
    mol: &Molecule,
    cfg: &OptimizerConfig,
    overlap: Option<&OverlapMatrix>,
) -> Result<Trajectory, DenoptError> {
    assert!(cfg.lambda > 0.0, "step size must be positive");
    assert!(cfg.max_steps >= 1, "step budget must be at least 1");
    assert!(cfg.stop_tol >= 0.0, "stop tolerance must be nonnegative");
    let record_every = cfg.record_every.max(1);

    let roots: Option<LowdinRoots> = if cfg.natrep {
        let s = overlap.expect("natrep mode needs an overlap matrix");
        Some(lowdin_roots(s)?)
    } else {
        None
    };

    let p0 = initial_guess(mol);
    let gs = match &roots {
        Some(r) => &r.half * &mol.ground_state,
        None => mol.ground_state.clone(),
    };
    let mut q = match &roots {
        Some(r) => &r.half * &p0,
        None => p0,
    };

    let mut steps = Vec::new();
    let terminated_by;
    let mut step = 0usize;
    loop {
        let p = match &roots {
            Some(r) => &r.neg_half * &q,
            None => q.clone(),
        };
        let (energy, grad_p) = model.evaluate(mol, &p);
        let grad = match &roots {
            Some(r) => &r.neg_half * &grad_p,
            None => grad_p,
        };
        let grad_norm = grad.norm();
        let dist_to_gs = (&q - &gs).norm();
        let gdi = gdi_loss(&q, &gs, &grad, cfg.beta, cfg.lambda);
        let finite = energy.is_finite() && grad.iter().all(|x| x.is_finite());

        let terminal = !finite || grad_norm < cfg.stop_tol || step == cfg.max_steps;
        if terminal || step % record_every == 0 {
            steps.push(TrajectoryStep {
                index: step,
                coeffs: p,
                energy,
                grad_norm,
                dist_to_gs,
                gdi_loss: gdi,
            });
        }
        if !finite {
            terminated_by = Termination::NonFinite;
            break;
        }
        if grad_norm < cfg.stop_tol {
            terminated_by = Termination::StopTol;
            break;
        }
        if step == cfg.max_steps {
            terminated_by = Termination::MaxSteps;
            break;
        }
        q = gd_step(&q, &grad, cfg.lambda);
        step += 1;
    }

    Ok(Trajectory {
        steps,
        terminated_by,
        natrep: cfg.natrep,
        beta: cfg.beta,
    })
}

// ---------------------------------------------------------------------
// Trajectory CSV (long format, one molecule-id column)
// ---------------------------------------------------------------------

pub const TRAJECTORY_CSV_HEADER: &str = "molecule_id,step,energy,grad_norm,dist_to_gs,gdi_loss";

pub fn write_trajectory_csv(
    out: &mut impl Write,
    molecule_id: &str,
    traj: &Trajectory,
) -> Result<(), DenoptError> {
    for s in &traj.steps {
        writeln!(
            out,
            "{molecule_id},{},{},{},{},{}",
            s.index,
            fmt_g17(s.energy),
            fmt_g17(s.grad_norm),
            fmt_g17(s.dist_to_gs),
            fmt_g17(s.gdi_loss)
        )?;
    }
    Ok(())
}

/// Per-molecule metric sequences parsed back from a trajectory CSV.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryMetrics {
    pub id: String,
    pub distances: Vec<f64>,
    pub gdi_losses: Vec<f64>,
}

/// Parses a long-format trajectory CSV, grouping rows by molecule id in
/// order of first appearance.
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<TrajectoryMetrics>, DenoptError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == TRAJECTORY_CSV_HEADER => {}
        _ => {
            return Err(DenoptError::Csv {
                line: 1,
                reason: format!("expected header {TRAJECTORY_CSV_HEADER:?}"),
            })
        }
    }
    let mut grouped: Vec<TrajectoryMetrics> = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(DenoptError::Csv {
                line: idx + 1,
                reason: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64, DenoptError> {
            s.parse().map_err(|_| DenoptError::Csv {
                line: idx + 1,
                reason: format!("not a number: {s:?}"),
            })
        };
        let id = fields[0];
        let dist = parse(fields[4])?;
        let gdi = parse(fields[5])?;
        match grouped.iter_mut().find(|g| g.id == id) {
            Some(g) => {
                g.distances.push(dist);
                g.gdi_losses.push(gdi);
            }
            None => grouped.push(TrajectoryMetrics {
                id: id.to_string(),
                distances: vec![dist],
                gdi_losses: vec![gdi],
            }),
        }
    }
    Ok(grouped)
}
