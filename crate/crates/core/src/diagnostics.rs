//! Quantitative analyses of gradient fields and optimization runs:
//! contraction-factor scans, exponential-convergence verification,
//! per-group residual-error reports, and 2-D energy / gradient-norm
//! slices through the ground state.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::denopt::{EnergyGradient, ReferenceFunctional, Trajectory};
use crate::fmt_g17;
use crate::losses::step_distances;
use crate::model::SurrogateModel;
use crate::synth::{Dataset, Molecule};
use crate::trainer::perturb;
use crate::{Matrix, Vector};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("contraction factor is undefined at the ground state (p = p*)")]
    DegenerateInput,
    #[error("groups do not partition the coefficient indices: {0}")]
    NotAPartition(String),
    #[error("slice directions are linearly dependent")]
    DependentDirections,
    #[error("failed to write analysis output: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------
// Contraction factors
// ---------------------------------------------------------------------

/// One sampled gradient-descent step.
#[derive(Debug, Clone)]
pub struct ContractionRecord {
    pub molecule_id: String,
    /// Distance to the ground state before the step.
    pub distance: f64,
    /// Post-step distance divided by pre-step distance.
    pub factor: f64,
    pub lambda: f64,
}

/// `||p - lambda grad - p*|| / ||p - p*||`, sharing its arithmetic with
/// the GDI loss so "loss is zero" and "factor at most beta" coincide.
pub fn contraction_factor(
    p: &Vector,
    p_star: &Vector,
    grad: &Vector,
    lambda: f64,
) -> Result<f64, DiagnosticsError> {
    let (after, before) = step_distances(p, p_star, grad, lambda);
    if before == 0.0 {
        return Err(DiagnosticsError::DegenerateInput);
    }
    Ok(after / before)
}

/// Where the scanned gradients come from.
pub enum GradientSource<'a> {
    Reference,
    Surrogate(&'a SurrogateModel),
}

impl GradientSource<'_> {
    fn gradient(&self, mol: &Molecule, p: &Vector) -> Vector {
        match self {
            GradientSource::Reference => ReferenceFunctional.evaluate(mol, p).1,
            GradientSource::Surrogate(m) => m.evaluate(mol, p).1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScanConfig {
    pub lambda: f64,
    pub samples_per_molecule: usize,
    pub seed: u64,
    pub radius_mean: f64,
    pub radius_std: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            samples_per_molecule: 32,
            seed: 0,
            radius_mean: 0.05,
            radius_std: 0.05,
        }
    }
}

/// Samples perturbations around every ground state and records the
/// contraction factor of one gradient-descent step. Draws that land
/// exactly on a ground state are skipped (the factor is undefined there).
pub fn contraction_scan(
    dataset: &Dataset,
    source: &GradientSource<'_>,
    cfg: &ScanConfig,
) -> Vec<ContractionRecord> {
    assert!(cfg.lambda >= 0.0, "step size must be nonnegative");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(dataset.molecules.len() * cfg.samples_per_molecule);
    for mol in &dataset.molecules {
        for _ in 0..cfg.samples_per_molecule {
            let p = perturb(&mol.ground_state, &mut rng, cfg.radius_mean, cfg.radius_std);
            let grad = source.gradient(mol, &p);
            match contraction_factor(&p, &mol.ground_state, &grad, cfg.lambda) {
                Ok(factor) => records.push(ContractionRecord {
                    molecule_id: mol.id.clone(),
                    distance: (&p - &mol.ground_state).norm(),
                    factor,
                    lambda: cfg.lambda,
                }),
                Err(DiagnosticsError::DegenerateInput) => continue,
                Err(e) => unreachable!("unexpected scan error: {e}"),
            }
        }
    }
    records
}

/// Fraction of records with contraction factor strictly below `beta`.
pub fn fraction_below(records: &[ContractionRecord], beta: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.factor < beta).count() as f64 / records.len() as f64
}

pub const CONTRACTION_CSV_HEADER: &str = "molecule_id,distance,factor,lambda";

pub fn write_contraction_csv(
    out: &mut impl Write,
    records: &[ContractionRecord],
) -> Result<(), DiagnosticsError> {
    writeln!(out, "{CONTRACTION_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{}",
            r.molecule_id,
            fmt_g17(r.distance),
            fmt_g17(r.factor),
            fmt_g17(r.lambda)
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Exponential-convergence verification
// ---------------------------------------------------------------------

/// Relative slack allowed for the accumulated rounding of `beta^n`.
const CONVERGENCE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    /// Number of leading transitions whose recorded GDI loss is zero.
    pub zero_loss_prefix: usize,
    /// Whether `dist(n) <= beta^n dist(0) (1 + slack)` held on that prefix.
    pub holds: bool,
    pub first_violation: Option<usize>,
    pub initial_distance: f64,
}

/// Checks the geometric bound on the longest prefix of transitions with
/// zero recorded GDI loss. `distances` has one entry per recorded state,
/// `gdi_losses[k]` belongs to the transition out of state `k`.
pub fn verify_convergence_series(
    distances: &[f64],
    gdi_losses: &[f64],
    beta: f64,
) -> ConvergenceReport {
    assert_eq!(distances.len(), gdi_losses.len(), "metric length mismatch");
    assert!(!distances.is_empty(), "empty trajectory");
    let transitions = distances.len() - 1;
    let mut prefix = 0;
    while prefix < transitions && gdi_losses[prefix] == 0.0 {
        prefix += 1;
    }
    let d0 = distances[0];
    let mut holds = true;
    let mut first_violation = None;
    for n in 1..=prefix {
        let bound = beta.powi(n as i32) * d0 * (1.0 + CONVERGENCE_SLACK);
        if distances[n] > bound {
            holds = false;
            first_violation = Some(n);
            break;
        }
    }
    ConvergenceReport {
        zero_loss_prefix: prefix,
        holds,
        first_violation,
        initial_distance: d0,
    }
}

/// [`verify_convergence_series`] on a recorded trajectory, using the
/// contraction factor its GDI losses were recorded with.
pub fn verify_exponential_convergence(traj: &Trajectory, beta: f64) -> ConvergenceReport {
    let distances: Vec<f64> = traj.steps.iter().map(|s| s.dist_to_gs).collect();
    let gdi: Vec<f64> = traj.steps.iter().map(|s| s.gdi_loss).collect();
    verify_convergence_series(&distances, &gdi, beta)
}

// ---------------------------------------------------------------------
// Residual-error group report
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GroupShare {
    pub indices: Vec<usize>,
    /// Euclidean norm of the error restricted to the group.
    pub norm: f64,
    /// The group's share of the total squared error (zero error gives
    /// zero shares).
    pub share: f64,
}

/// Splits a residual error vector over a partition of its indices.
pub fn loophole_report(
    error: &Vector,
    groups: &[Vec<usize>],
) -> Result<Vec<GroupShare>, DiagnosticsError> {
    let dim = error.len();
    let mut seen = vec![false; dim];
    for g in groups {
        for &i in g {
            if i >= dim {
                return Err(DiagnosticsError::NotAPartition(format!(
                    "index {i} out of range for dimension {dim}"
                )));
            }
            if seen[i] {
                return Err(DiagnosticsError::NotAPartition(format!(
                    "index {i} appears in more than one group"
                )));
            }
            seen[i] = true;
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(DiagnosticsError::NotAPartition(format!(
            "index {missing} is not covered by any group"
        )));
    }
    let total_sq = error.norm_squared();
    Ok(groups
        .iter()
        .map(|g| {
            let sq: f64 = g.iter().map(|&i| error[i] * error[i]).sum();
            GroupShare {
                indices: g.clone(),
                norm: sq.sqrt(),
                share: if total_sq > 0.0 { sq / total_sq } else { 0.0 },
            }
        })
        .collect())
}

/// Eigenbasis split of a molecule's reference Hessian into the softer
/// and stiffer half of its eigendirections (the synthetic analog of
/// easy core versus hard bonding coefficients). Rotate residuals with
/// `rotation.transpose() * error` before grouping.
pub struct StiffnessGroups {
    /// Columns are eigenvectors sorted by ascending eigenvalue.
    pub rotation: Matrix,
    pub eigenvalues: Vec<f64>,
    /// Indices (in the sorted eigenbasis) of the softer half.
    pub soft: Vec<usize>,
    /// Indices of the stiffer half.
    pub stiff: Vec<usize>,
}

pub fn stiffness_groups(mol: &Molecule) -> StiffnessGroups {
    let dim = mol.dim();
    let eig = mol.hessian.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("Hessian eigenvalues are finite")
    });
    let mut rotation = Matrix::zeros(dim, dim);
    let mut eigenvalues = Vec::with_capacity(dim);
    for (col, &idx) in order.iter().enumerate() {
        rotation.set_column(col, &eig.eigenvectors.column(idx));
        eigenvalues.push(eig.eigenvalues[idx]);
    }
    let half = dim / 2;
    StiffnessGroups {
        rotation,
        eigenvalues,
        soft: (0..half).collect(),
        stiff: (half..dim).collect(),
    }
}

// ---------------------------------------------------------------------
// Energy / gradient-norm slices
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SliceGrid {
    /// Grid coordinates along both in-plane axes.
    pub offsets: Vec<f64>,
    /// `energy[(i, j)]` at `p* + offsets[i] e1 + offsets[j] e2`.
    pub energy: Matrix,
    pub grad_norm: Matrix,
    /// Orthonormalized in-plane directions.
    pub dir1: Vector,
    pub dir2: Vector,
}

/// Evaluates energy and gradient norm on a 2-D affine grid through the
/// ground state, spanned by the orthonormalized `d1`, `d2`.
pub fn gradient_norm_slice(
    model: &impl EnergyGradient,
    mol: &Molecule,
    d1: &Vector,
    d2: &Vector,
    half_extent: f64,
    resolution: usize,
) -> Result<SliceGrid, DiagnosticsError> {
    assert!(resolution >= 2, "grid needs at least 2 points per axis");
    assert!(half_extent > 0.0, "slice extent must be positive");
    let n1 = d1.norm();
    if n1 == 0.0 {
        return Err(DiagnosticsError::DependentDirections);
    }
    let e1 = d1 / n1;
    let mut e2 = d2 - &e1 * e1.dot(d2);
    let n2 = e2.norm();
    if n2 < 1e-10 * d2.norm().max(1.0) {
        return Err(DiagnosticsError::DependentDirections);
    }
    e2 /= n2;

    let offsets: Vec<f64> = (0..resolution)
        .map(|i| -half_extent + 2.0 * half_extent * i as f64 / (resolution - 1) as f64)
        .collect();
    let mut energy = Matrix::zeros(resolution, resolution);
    let mut grad_norm = Matrix::zeros(resolution, resolution);
    for (i, &u) in offsets.iter().enumerate() {
        for (j, &v) in offsets.iter().enumerate() {
            let p = &mol.ground_state + &e1 * u + &e2 * v;
            let (e, g) = model.evaluate(mol, &p);
            energy[(i, j)] = e;
            grad_norm[(i, j)] = g.norm();
        }
    }
    Ok(SliceGrid {
        offsets,
        energy,
        grad_norm,
        dir1: e1,
        dir2: e2,
    })
}

/// The plane spanned by the first two optimizer steps of a trajectory,
/// if it has at least three recorded states.
pub fn descent_plane(traj: &Trajectory) -> Option<(Vector, Vector)> {
    if traj.steps.len() < 3 {
        return None;
    }
    let d1 = &traj.steps[1].coeffs - &traj.steps[0].coeffs;
    let d2 = &traj.steps[2].coeffs - &traj.steps[1].coeffs;
    Some((d1, d2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceQuantity {
    Energy,
    GradNorm,
}

/// Long-format CSV of one slice quantity: `u,v,<quantity>`.
pub fn write_slice_csv(
    out: &mut impl Write,
    grid: &SliceGrid,
    quantity: SliceQuantity,
) -> Result<(), DiagnosticsError> {
    let (header, values) = match quantity {
        SliceQuantity::Energy => ("u,v,energy", &grid.energy),
        SliceQuantity::GradNorm => ("u,v,grad_norm", &grid.grad_norm),
    };
    writeln!(out, "{header}")?;
    for (i, &u) in grid.offsets.iter().enumerate() {
        for (j, &v) in grid.offsets.iter().enumerate() {
            writeln!(out, "{},{},{}", fmt_g17(u), fmt_g17(v), fmt_g17(values[(i, j)]))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, SurrogateModel};
    use crate::synth::{generate_with, GeneratorConfig};
    use approx::assert_relative_eq;

    fn quadratic_dataset(n: usize, dim: usize, seed: u64) -> Dataset {
        generate_with(&GeneratorConfig {
            quartic_max: 0.0,
            ..GeneratorConfig::new(n, dim, seed)
        })
        .unwrap()
    }

    #[test]
    fn contraction_factor_examples() {
        let p = Vector::from_vec(vec![1.0, 0.0]);
        let p_star = Vector::zeros(2);
        // Stationary field leaves the distance unchanged.
        let f = contraction_factor(&p, &p_star, &Vector::zeros(2), 0.1).unwrap();
        assert_eq!(f, 1.0);
        // Exact step reaches the ground state.
        let f = contraction_factor(&p, &p_star, &(&p / 0.1), 0.1).unwrap();
        assert_eq!(f, 0.0);
        // Quadratic field with curvature 2 at lambda 0.1: |1 - 0.2| = 0.8.
        let f = contraction_factor(&p, &p_star, &(&p * 2.0), 0.1).unwrap();
        assert_relative_eq!(f, 0.8, epsilon = 1e-15);
        assert!(matches!(
            contraction_factor(&p_star, &p_star, &p, 0.1),
            Err(DiagnosticsError::DegenerateInput)
        ));
    }

    #[test]
    fn reference_scan_respects_spectrum_bounds() {
        let ds = quadratic_dataset(4, 6, 21);
        let cfg = ScanConfig {
            samples_per_molecule: 50,
            ..ScanConfig::default()
        };
        let records = contraction_scan(&ds, &GradientSource::Reference, &cfg);
        assert_eq!(records.len(), 4 * 50);
        for mol in &ds.molecules {
            let eig = mol.hessian.clone().symmetric_eigen();
            let factors: Vec<f64> = eig
                .eigenvalues
                .iter()
                .map(|&h| (1.0 - cfg.lambda * h).abs())
                .collect();
            let lo = factors.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = factors.iter().copied().fold(0.0, f64::max);
            for r in records.iter().filter(|r| r.molecule_id == mol.id) {
                assert!(
                    r.factor >= lo - 1e-10 && r.factor <= hi + 1e-10,
                    "factor {} outside [{lo}, {hi}]",
                    r.factor
                );
            }
        }
    }

    #[test]
    fn zero_step_size_scan_gives_unit_factors() {
        let ds = quadratic_dataset(2, 4, 22);
        let cfg = ScanConfig {
            lambda: 0.0,
            samples_per_molecule: 10,
            ..ScanConfig::default()
        };
        let records = contraction_scan(&ds, &GradientSource::Reference, &cfg);
        assert_eq!(records.len(), 20);
        for r in &records {
            assert_eq!(r.factor, 1.0);
        }
    }

    #[test]
    fn convergence_report_on_exact_step_trajectory() {
        // distance sequence 1 -> 0, single zero-loss transition.
        let report = verify_convergence_series(&[1.0, 0.0], &[0.0, 0.0], 0.9);
        assert_eq!(report.zero_loss_prefix, 1);
        assert!(report.holds);
        assert_eq!(report.first_violation, None);
    }

    #[test]
    fn convergence_skips_prefix_after_nonzero_loss() {
        // Transition 1 has nonzero loss; the violation behind it is
        // outside the checked prefix.
        let distances = [1.0, 0.9, 1.5, 0.1];
        let gdi = [0.0, 0.2, 0.0, 0.0];
        let report = verify_convergence_series(&distances, &gdi, 0.9);
        assert_eq!(report.zero_loss_prefix, 1);
        assert!(report.holds);
    }

    #[test]
    fn convergence_detects_violation() {
        // Claimed zero losses but the distances do not contract.
        let distances = [1.0, 0.99, 0.985];
        let gdi = [0.0, 0.0, 0.0];
        let report = verify_convergence_series(&distances, &gdi, 0.9);
        assert!(!report.holds);
        assert_eq!(report.first_violation, Some(1));
    }

    #[test]
    fn parabola_trajectory_bound_holds_iff_centered_on_ground_state() {
        use crate::denopt::{optimize, OptimizerConfig};
        let ds = quadratic_dataset(1, 4, 23);
        let mut mol = ds.molecules[0].clone();
        let spec = ModelSpec::new(4, mol.features.len()).with_hidden(vec![8]);
        let model = SurrogateModel::initialize(spec, 0).unwrap();
        let cfg = OptimizerConfig {
            beta: 0.99,
            max_steps: 200,
            stop_tol: 0.0,
            ..OptimizerConfig::default()
        };

        // Parabola centered away from p*: the contraction toward p*
        // eventually fails, so some recorded loss is nonzero.
        let traj = optimize(&model, &mol, &cfg).unwrap();
        assert!(traj.steps.iter().any(|s| s.gdi_loss > 0.0));
        assert!(verify_exponential_convergence(&traj, cfg.beta).holds);

        // With p* = dsad the parabola contracts at 0.98 < 0.99 forever.
        mol.ground_state = mol.dsad.clone();
        let traj = optimize(&model, &mol, &cfg).unwrap();
        let report = verify_exponential_convergence(&traj, cfg.beta);
        assert_eq!(report.zero_loss_prefix, traj.steps.len() - 1);
        assert!(report.holds);
    }

    #[test]
    fn loophole_shares() {
        let e = Vector::from_vec(vec![1.0, 0.0]);
        let groups = vec![vec![0], vec![1]];
        let shares = loophole_report(&e, &groups).unwrap();
        assert_eq!(shares[0].share, 1.0);
        assert_eq!(shares[1].share, 0.0);

        let e = Vector::from_vec(vec![0.3, -0.4, 0.5]);
        let groups = vec![vec![0, 2], vec![1]];
        let shares = loophole_report(&e, &groups).unwrap();
        assert_relative_eq!(
            shares.iter().map(|g| g.share).sum::<f64>(),
            1.0,
            epsilon = 1e-14
        );

        assert!(loophole_report(&e, &[vec![0], vec![1]]).is_err());
        assert!(loophole_report(&e, &[vec![0, 0], vec![1, 2]]).is_err());
        assert!(loophole_report(&e, &[vec![0, 1, 2, 3]]).is_err());
    }

    #[test]
    fn stiffness_groups_partition_and_sort() {
        let ds = quadratic_dataset(1, 6, 24);
        let groups = stiffness_groups(&ds.molecules[0]);
        assert_eq!(groups.soft.len() + groups.stiff.len(), 6);
        for w in groups.eigenvalues.windows(2) {
            assert!(w[0] <= w[1]);
        }
        // Rotation is orthogonal.
        let should_be_identity = groups.rotation.transpose() * &groups.rotation;
        assert_relative_eq!(should_be_identity, Matrix::identity(6, 6), epsilon = 1e-10);
    }

    #[test]
    fn parabola_slice_is_exactly_quadratic() {
        let ds = quadratic_dataset(1, 4, 25);
        let mut mol = ds.molecules[0].clone();
        // Center the parabola on the ground state so the grid center is
        // the exact minimum.
        mol.ground_state = mol.dsad.clone();
        let spec = ModelSpec::new(4, mol.features.len()).with_hidden(vec![8]);
        let model = SurrogateModel::initialize(spec, 1).unwrap();
        let d1 = Vector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let d2 = Vector::from_vec(vec![0.0, 1.0, 0.0, 0.0]);
        let grid = gradient_norm_slice(&model, &mol, &d1, &d2, 0.1, 5).unwrap();

        // E(u, v) = a (u^2 + v^2): constant second differences along rows.
        let h = grid.offsets[1] - grid.offsets[0];
        for i in 0..5 {
            for j in 1..4 {
                let second_diff = grid.energy[(i, j + 1)] - 2.0 * grid.energy[(i, j)]
                    + grid.energy[(i, j - 1)];
                assert_relative_eq!(second_diff, 2.0 * 0.1 * h * h, epsilon = 1e-12);
            }
        }
        // Gradient norm vanishes exactly at the center (= dsad).
        assert_eq!(grid.grad_norm[(2, 2)], 0.0);
    }

    #[test]
    fn dependent_directions_are_rejected() {
        let ds = quadratic_dataset(1, 4, 26);
        let mol = &ds.molecules[0];
        let spec = ModelSpec::new(4, mol.features.len()).with_hidden(vec![8]);
        let model = SurrogateModel::initialize(spec, 2).unwrap();
        let d1 = Vector::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
        let d2 = &d1 * -3.0;
        assert!(matches!(
            gradient_norm_slice(&model, mol, &d1, &d2, 0.1, 4),
            Err(DiagnosticsError::DependentDirections)
        ));
    }

    #[test]
    fn descent_plane_of_parabola_model_is_degenerate() {
        use crate::denopt::{optimize, OptimizerConfig};
        let ds = quadratic_dataset(1, 4, 27);
        let mol = &ds.molecules[0];
        let spec = ModelSpec::new(4, mol.features.len()).with_hidden(vec![8]);
        let model = SurrogateModel::initialize(spec, 3).unwrap();
        let cfg = OptimizerConfig {
            max_steps: 5,
            stop_tol: 0.0,
            ..OptimizerConfig::default()
        };
        let traj = optimize(&model, mol, &cfg).unwrap();
        let (d1, d2) = descent_plane(&traj).unwrap();
        // Both steps point along p̄ - p, so the slice must reject them.
        assert!(matches!(
            gradient_norm_slice(&model, mol, &d1, &d2, 0.1, 4),
            Err(DiagnosticsError::DependentDirections)
        ));
    }

    #[test]
    fn slice_csv_has_full_grid() {
        let ds = quadratic_dataset(1, 4, 28);
        let mol = &ds.molecules[0];
        let spec = ModelSpec::new(4, mol.features.len()).with_hidden(vec![8]);
        let model = SurrogateModel::initialize(spec, 4).unwrap();
        let d1 = Vector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let d2 = Vector::from_vec(vec![0.0, 0.0, 1.0, 0.0]);
        let grid = gradient_norm_slice(&model, mol, &d1, &d2, 0.2, 6).unwrap();
        let mut buf = Vec::new();
        write_slice_csv(&mut buf, &grid, SliceQuantity::Energy).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("u,v,energy"));
        assert_eq!(lines.count(), 36);
    }
}
