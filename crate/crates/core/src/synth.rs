//! Seeded generator for synthetic molecules with analytically known
//! ground states.
//!
//! Each molecule is a set of atoms on a jittered 3-D grid, an s-Gaussian
//! basis (one block of functions per atom, fixed per element kind), and a
//! closed-form reference functional
//!
//! ```text
//! E(p) = 1/2 (p - p*)^T H (p - p*) + c * sum_i (p - p*)_i^4
//! ```
//!
//! whose unique global minimizer `p*` is known by construction. The
//! Hessian `H` is the basis overlap matrix plus a random low-rank SPD
//! perturbation, built so that the condition number stays at or below 50
//! and plain gradient descent with the standard step sizes contracts.

use nalgebra::Vector3;
use rand::prelude::IndexedRandom;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::basis::{overlap_matrix, BasisSet};
use crate::{Matrix, Vector};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("dataset must contain at least one molecule")]
    NoMolecules,
    #[error("coefficient dimension must be at least 2, got {0}")]
    DimTooSmall(usize),
    #[error("invalid molecule {id}: {reason}")]
    InvalidMolecule { id: String, reason: String },
    #[error("duplicate molecule id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Basis(#[from] crate::basis::BasisError),
    #[error("failed to read or write dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// A synthetic element kind: the basis-function block one atom of this
/// kind contributes, and the matching block of atomic-superposition
/// (dSAD) coefficients.
#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub name: &'static str,
    pub exponents: &'static [f64],
    pub dsad: &'static [f64],
}

/// The synthetic periodic table. The second kind carries two functions
/// with well-separated exponents so overlap matrices stay comfortably
/// conditioned.
pub const ELEMENTS: [Element; 3] = [
    Element {
        name: "A",
        exponents: &[1.0],
        dsad: &[0.5],
    },
    Element {
        name: "B",
        exponents: &[3.0, 0.5],
        dsad: &[0.3, 0.1],
    },
    Element {
        name: "C",
        exponents: &[1.4],
        dsad: &[0.4],
    },
];

/// Number of per-molecule descriptor features fed to the model.
pub const FEATURE_DIM: usize = 8;

/// A synthetic molecule: basis, descriptor features, known ground state
/// `p*`, atomic-superposition coefficients `p̄`, and the reference
/// functional parameters `(H, c)`.
#[derive(Debug, Clone)]
pub struct Molecule {
    pub id: String,
    pub basis: BasisSet,
    pub features: Vector,
    pub ground_state: Vector,
    pub dsad: Vector,
    pub hessian: Matrix,
    pub quartic: f64,
}

impl Molecule {
    pub fn dim(&self) -> usize {
        self.ground_state.len()
    }

    fn validate(&self) -> Result<(), SynthError> {
        let n = self.basis.len();
        let bad = |reason: &str| SynthError::InvalidMolecule {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.ground_state.len() != n || self.dsad.len() != n {
            return Err(bad("coefficient dimension does not match basis size"));
        }
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(bad("Hessian dimension does not match basis size"));
        }
        for i in 0..n {
            for j in i..n {
                if (self.hessian[(i, j)] - self.hessian[(j, i)]).abs() > 1e-12 {
                    return Err(bad("Hessian is not symmetric"));
                }
            }
        }
        if !(self.quartic >= 0.0 && self.quartic.is_finite()) {
            return Err(bad("quartic weight must be finite and nonnegative"));
        }
        let finite = |v: &Vector| v.iter().all(|x| x.is_finite());
        if !finite(&self.ground_state) || !finite(&self.dsad) || !finite(&self.features) {
            return Err(bad("non-finite coefficient or feature entry"));
        }
        Ok(())
    }
}

/// An immutable collection of molecules. `duplication` controls how many
/// times each molecule appears per training epoch (default 21).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub molecules: Vec<Molecule>,
    pub duplication: usize,
    pub seed: u64,
}

pub const DEFAULT_DUPLICATION: usize = 21;
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub n_molecules: usize,
    pub dim: usize,
    pub seed: u64,
    /// Upper bound of the uniform draw for the quartic weight `c`.
    /// Zero produces purely quadratic reference functionals.
    pub quartic_max: f64,
}

impl GeneratorConfig {
    pub fn new(n_molecules: usize, dim: usize, seed: u64) -> Self {
        Self {
            n_molecules,
            dim,
            seed,
            quartic_max: 0.2,
        }
    }
}

/// Generates a dataset with the default quartic weight range [0, 0.2].
pub fn generate_dataset(n_molecules: usize, dim: usize, seed: u64) -> Result<Dataset, SynthError> {
    generate_with(&GeneratorConfig::new(n_molecules, dim, seed))
}

/// Perturbation targets for the lifted Hessian eigenvalues. Together
/// with the kept overlap eigenvalues (>= 0.5 by construction) these keep
/// the condition number at or below 38 and every gradient-descent factor
/// |1 - lambda h| strictly below 1 for lambda in {0.05, 0.1}.
const LIFT_TARGET_LO: f64 = 10.0;
const LIFT_TARGET_HI: f64 = 19.0;
/// Overlap eigenvalues below this are always lifted.
const KEEP_THRESHOLD: f64 = 0.5;

pub fn generate_with(cfg: &GeneratorConfig) -> Result<Dataset, SynthError> {
    if cfg.n_molecules == 0 {
        return Err(SynthError::NoMolecules);
    }
    if cfg.dim < 2 {
        return Err(SynthError::DimTooSmall(cfg.dim));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let molecules = (0..cfg.n_molecules)
        .map(|i| generate_molecule(format!("mol{i:04}"), cfg, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        molecules,
        duplication: DEFAULT_DUPLICATION,
        seed: cfg.seed,
    })
}

fn generate_molecule(
    id: String,
    cfg: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Molecule, SynthError> {
    // Element sequence summing to exactly `dim` basis functions.
    let singles: Vec<usize> = (0..ELEMENTS.len())
        .filter(|&k| ELEMENTS[k].exponents.len() == 1)
        .collect();
    let mut kinds = Vec::new();
    let mut remaining = cfg.dim;
    while remaining > 0 {
        let kind = if remaining == 1 {
            *singles.choose(rng).expect("element table has a 1-function kind")
        } else {
            rng.random_range(0..ELEMENTS.len())
        };
        kinds.push(kind);
        remaining -= ELEMENTS[kind].exponents.len();
    }

    // Atom positions: shuffled nodes of a grid with 4 bohr spacing,
    // jittered by up to 0.75 bohr per coordinate. The spacing keeps
    // cross-atom overlaps small so the overlap spectrum stays near 1.
    let n_atoms = kinds.len();
    let side = (n_atoms as f64).cbrt().ceil() as usize;
    let mut nodes: Vec<Vector3<f64>> = (0..side.pow(3))
        .map(|n| {
            let (i, j, k) = (n % side, (n / side) % side, n / (side * side));
            Vector3::new(i as f64, j as f64, k as f64) * 4.0
        })
        .collect();
    nodes.shuffle(rng);
    let positions: Vec<Vector3<f64>> = nodes
        .into_iter()
        .take(n_atoms)
        .map(|node| {
            let jitter = Vector3::new(
                rng.random_range(-0.75..0.75),
                rng.random_range(-0.75..0.75),
                rng.random_range(-0.75..0.75),
            );
            node + jitter
        })
        .collect();

    let mut centers = Vec::with_capacity(cfg.dim);
    let mut exponents = Vec::with_capacity(cfg.dim);
    let mut dsad = Vec::with_capacity(cfg.dim);
    for (&kind, pos) in kinds.iter().zip(&positions) {
        for (&alpha, &coeff) in ELEMENTS[kind].exponents.iter().zip(ELEMENTS[kind].dsad) {
            centers.push(*pos);
            exponents.push(alpha);
            dsad.push(coeff);
        }
    }
    let basis = BasisSet::new(centers, exponents)?;
    let dsad = Vector::from_vec(dsad);

    let quartic = if cfg.quartic_max > 0.0 {
        rng.random_range(0.0..cfg.quartic_max)
    } else {
        0.0
    };

    // Ground state: bounded isotropic offset from the dSAD coefficients,
    // mean distance 0.05.
    let direction = unit_vector(cfg.dim, rng);
    let radius = rng.random_range(0.02..0.08);
    let ground_state = &dsad + direction * radius;

    let hessian = build_hessian(&basis, rng);
    let features = descriptor_features(&kinds, &positions, &basis);

    let molecule = Molecule {
        id,
        basis,
        features,
        ground_state,
        dsad,
        hessian,
        quartic,
    };
    molecule.validate()?;
    Ok(molecule)
}

/// Overlap matrix plus a low-rank SPD perturbation in the overlap
/// eigenbasis: the largest overlap eigenvalues (at most a quarter of the
/// spectrum, and only those >= 0.5) are kept, all others are lifted to
/// uniform random targets in [10, 19].
fn build_hessian(basis: &BasisSet, rng: &mut ChaCha8Rng) -> Matrix {
    let s = overlap_matrix(basis);
    let dim = s.dim();
    let eig = s.matrix().clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("overlap eigenvalues are finite")
    });
    let max_keep = dim.div_ceil(4);
    let mut lift = Vector::zeros(dim);
    for (rank, &idx) in order.iter().enumerate() {
        let value = eig.eigenvalues[idx];
        if rank < max_keep && value >= KEEP_THRESHOLD {
            continue;
        }
        let target = rng.random_range(LIFT_TARGET_LO..LIFT_TARGET_HI);
        lift[idx] = target - value;
    }
    let q = &eig.eigenvectors;
    let perturbation = q * Matrix::from_diagonal(&lift) * q.transpose();
    let h = s.matrix() + perturbation;
    (&h + h.transpose()) * 0.5
}

fn descriptor_features(kinds: &[usize], positions: &[Vector3<f64>], basis: &BasisSet) -> Vector {
    let n_atoms = positions.len();
    let mut counts = [0usize; ELEMENTS.len()];
    for &k in kinds {
        counts[k] += 1;
    }
    let mut pair_dists = Vec::new();
    for i in 0..n_atoms {
        for j in (i + 1)..n_atoms {
            pair_dists.push((positions[i] - positions[j]).norm());
        }
    }
    let mean_dist = if pair_dists.is_empty() {
        0.0
    } else {
        pair_dists.iter().sum::<f64>() / pair_dists.len() as f64
    };
    let min_dist = pair_dists.iter().copied().fold(f64::INFINITY, f64::min);
    let min_dist = if min_dist.is_finite() { min_dist } else { 0.0 };
    let centroid = positions.iter().sum::<Vector3<f64>>() / n_atoms as f64;
    let mean_exponent = basis.exponents().iter().sum::<f64>() / basis.len() as f64;
    Vector::from_vec(vec![
        n_atoms as f64 / 4.0,
        counts[0] as f64 / 2.0,
        counts[1] as f64 / 2.0,
        counts[2] as f64 / 2.0,
        mean_dist / 4.0,
        min_dist / 4.0,
        centroid.norm() / 4.0,
        mean_exponent / 3.0,
    ])
}

/// Isotropic unit vector from normalized Gaussian samples.
pub(crate) fn unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vector {
    loop {
        let v = Vector::from_iterator(
            dim,
            (0..dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)),
        );
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Reference functional value and gradient:
/// `E = 1/2 d^T H d + c sum d_i^4`, `grad = H d + 4 c d^3` with
/// `d = p - p*`. Zero exactly at the ground state.
pub fn reference_energy_grad(mol: &Molecule, p: &Vector) -> (f64, Vector) {
    assert_eq!(p.len(), mol.dim(), "coefficient dimension mismatch");
    let d = p - &mol.ground_state;
    let hd = &mol.hessian * &d;
    let quadratic = 0.5 * d.dot(&hd);
    let quartic_sum: f64 = d.iter().map(|x| x.powi(4)).sum();
    let energy = quadratic + mol.quartic * quartic_sum;
    let grad = hd + d.map(|x| 4.0 * mol.quartic * x.powi(3));
    (energy, grad)
}

/// The stored superposition-of-atomic-densities coefficients `p̄`, used
/// as the initial estimate and as the center of the model's parabola.
pub fn dsad_coefficients(mol: &Molecule) -> Vector {
    mol.dsad.clone()
}

// ---------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    version: u32,
    seed: u64,
    molecules: Vec<MoleculeRecord>,
}

#[derive(Serialize, Deserialize)]
struct MoleculeRecord {
    id: String,
    centers: Vec<[f64; 3]>,
    exponents: Vec<f64>,
    features: Vec<f64>,
    ground_state: Vec<f64>,
    dsad: Vec<f64>,
    #[serde(rename = "H")]
    hessian: Vec<Vec<f64>>,
    c: f64,
}

impl Dataset {
    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            version: DATASET_VERSION,
            seed: self.seed,
            molecules: self.molecules.iter().map(molecule_to_record).collect(),
        };
        serde_json::to_string_pretty(&file).expect("dataset serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let file: DatasetFile = serde_json::from_str(text)?;
        let molecules = file
            .molecules
            .into_iter()
            .map(record_to_molecule)
            .collect::<Result<Vec<_>, _>>()?;
        let mut seen = std::collections::HashSet::new();
        for m in &molecules {
            if !seen.insert(m.id.clone()) {
                return Err(SynthError::DuplicateId(m.id.clone()));
            }
        }
        if molecules.is_empty() {
            return Err(SynthError::NoMolecules);
        }
        Ok(Dataset {
            molecules,
            duplication: DEFAULT_DUPLICATION,
            seed: file.seed,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<(), SynthError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, SynthError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn dim(&self) -> usize {
        self.molecules[0].dim()
    }
}

fn molecule_to_record(m: &Molecule) -> MoleculeRecord {
    MoleculeRecord {
        id: m.id.clone(),
        centers: m.basis.centers().iter().map(|c| [c.x, c.y, c.z]).collect(),
        exponents: m.basis.exponents().to_vec(),
        features: m.features.iter().copied().collect(),
        ground_state: m.ground_state.iter().copied().collect(),
        dsad: m.dsad.iter().copied().collect(),
        hessian: (0..m.hessian.nrows())
            .map(|i| (0..m.hessian.ncols()).map(|j| m.hessian[(i, j)]).collect())
            .collect(),
        c: m.quartic,
    }
}

fn record_to_molecule(r: MoleculeRecord) -> Result<Molecule, SynthError> {
    let centers = r
        .centers
        .iter()
        .map(|&[x, y, z]| Vector3::new(x, y, z))
        .collect();
    let basis = BasisSet::new(centers, r.exponents)?;
    let n = basis.len();
    let rows = r.hessian.len();
    let flat: Vec<f64> = r.hessian.into_iter().flatten().collect();
    if rows != n || flat.len() != n * n {
        return Err(SynthError::InvalidMolecule {
            id: r.id,
            reason: "Hessian shape does not match basis size".to_string(),
        });
    }
    let molecule = Molecule {
        id: r.id,
        basis,
        features: Vector::from_vec(r.features),
        ground_state: Vector::from_vec(r.ground_state),
        dsad: Vector::from_vec(r.dsad),
        hessian: Matrix::from_row_slice(n, n, &flat),
        quartic: r.c,
    };
    molecule.validate()?;
    Ok(molecule)
}
