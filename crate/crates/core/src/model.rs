//! The surrogate energy functional.
//!
//! `E(p; theta) = a ||p - p_bar||^2 + N([s p ; features]; theta)` where
//! `p_bar` are the molecule's atomic-superposition coefficients, `a` is a
//! fixed parabola prefactor (default 0.1), `s` a fixed scalar input
//! rescaling (default 10), and `N` a small tanh network whose final layer
//! is initialized to zero so the untrained surrogate is exactly the
//! parabola. The whole functional is recorded once per architecture as an
//! autodiff program; molecule data enters through auxiliary inputs, so
//! one program serves every molecule of a dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;
use thiserror::Error;

use crate::autodiff::{Function, NodeId, Tape};
use crate::synth::Molecule;
use crate::Vector;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    BadSpec(String),
    #[error("parameter vector has length {got}, architecture needs {expected}")]
    ThetaLength { expected: usize, got: usize },
    #[error("parameter vector contains a non-finite entry")]
    NonFiniteTheta,
    #[error("checkpoint version {0} is not supported")]
    Version(u32),
    #[error("failed to read or write checkpoint: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Architecture and fixed scalars of a surrogate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub coeff_dim: usize,
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    /// Parabola prefactor `a`.
    pub parabola_a: f64,
    /// Scalar rescaling `s` applied to the raw coefficients fed to the
    /// network (the parabola term bypasses it).
    pub input_scale: f64,
}

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
pub const DEFAULT_PARABOLA_A: f64 = 0.1;
pub const DEFAULT_INPUT_SCALE: f64 = 10.0;

impl ModelSpec {
    pub fn new(coeff_dim: usize, feature_dim: usize) -> Self {
        Self {
            coeff_dim,
            feature_dim,
            hidden: DEFAULT_HIDDEN.to_vec(),
            parabola_a: DEFAULT_PARABOLA_A,
            input_scale: DEFAULT_INPUT_SCALE,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.coeff_dim == 0 {
            return Err(ModelError::BadSpec("coeff_dim must be positive".into()));
        }
        if !(self.parabola_a > 0.0 && self.parabola_a.is_finite()) {
            return Err(ModelError::BadSpec(format!(
                "parabola prefactor must be positive, got {}",
                self.parabola_a
            )));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(ModelError::BadSpec(format!(
                "input scale must be positive, got {}",
                self.input_scale
            )));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(ModelError::BadSpec("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// (weight offset, rows, cols, bias offset) per layer, final layer last.
    fn layer_layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut layout = Vec::with_capacity(self.hidden.len() + 1);
        let mut offset = 0;
        let mut in_dim = self.coeff_dim + self.feature_dim;
        for &h in &self.hidden {
            layout.push((offset, h, in_dim, offset + h * in_dim));
            offset += h * in_dim + h;
            in_dim = h;
        }
        layout.push((offset, 1, in_dim, offset + in_dim));
        layout
    }

    pub fn param_count(&self) -> usize {
        let (w_off, rows, cols, _) = *self.layer_layout().last().unwrap();
        w_off + rows * cols + rows
    }

    /// Auxiliary input layout of the energy program: the molecule's dSAD
    /// coefficients followed by its features.
    pub fn aux_count(&self) -> usize {
        self.coeff_dim + self.feature_dim
    }
}

/// Emits the surrogate energy onto `tape`, reading the coefficients from
/// `p_nodes` and the molecule data from auxiliary inputs `0..aux_count`.
/// Used both for the plain energy program and, within training programs,
/// to instantiate the energy at several coefficient sets on one tape.
pub(crate) fn emit_energy(tape: &mut Tape, spec: &ModelSpec, p_nodes: &[NodeId]) -> NodeId {
    assert_eq!(p_nodes.len(), spec.coeff_dim);
    let pbar: Vec<NodeId> = (0..spec.coeff_dim).map(|i| tape.aux_id(i)).collect();
    let features: Vec<NodeId> = (0..spec.feature_dim)
        .map(|i| tape.aux_id(spec.coeff_dim + i))
        .collect();

    let diff = tape.sub_vec(p_nodes, &pbar);
    let ss = tape.sum_squares(&diff);
    let parabola = tape.scale(ss, spec.parabola_a);

    let centered = tape.sub_vec(p_nodes, &pbar);
    let scaled = tape.scale_vec(&centered, spec.input_scale);
    let mut x: Vec<NodeId> = scaled.into_iter().chain(features).collect();
    for (layer, &(w_off, rows, cols, b_off)) in spec.layer_layout().iter().enumerate() {
        let w: Vec<NodeId> = (0..rows * cols).map(|i| tape.param_id(w_off + i)).collect();
        let b: Vec<NodeId> = (0..rows).map(|i| tape.param_id(b_off + i)).collect();
        x = tape.affine(&x, &w, &b);
        if layer < spec.hidden.len() {
            x = x.iter().map(|&n| tape.tanh(n)).collect();
        }
    }
    let net = x[0];
    tape.add(parabola, net)
}

fn build_energy_program(spec: &ModelSpec) -> Function {
    let mut tape = Tape::new(spec.coeff_dim, spec.param_count(), spec.aux_count());
    let p_nodes = tape.coeff_ids();
    let out = emit_energy(&mut tape, spec, &p_nodes);
    Function::new(tape, out)
}

/// A surrogate functional: architecture spec plus flat parameter vector.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    spec: ModelSpec,
    theta: Vector,
    energy: Function,
}

impl SurrogateModel {
    pub fn new(spec: ModelSpec, theta: Vector) -> Result<Self, ModelError> {
        spec.validate()?;
        if theta.len() != spec.param_count() {
            return Err(ModelError::ThetaLength {
                expected: spec.param_count(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFiniteTheta);
        }
        let energy = build_energy_program(&spec);
        Ok(Self { spec, theta, energy })
    }

    /// Hidden layers get variance-scaled random weights, the final layer
    /// is exactly zero, so the initial surrogate equals the pure parabola.
    pub fn initialize(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Vector::zeros(spec.param_count());
        let layout = spec.layer_layout();
        for (layer, &(w_off, rows, cols, _)) in layout.iter().enumerate() {
            if layer == spec.hidden.len() {
                break; // final layer stays zero
            }
            // Block-scaled so preactivations land where tanh has
            // usable curvature: the centered, rescaled coefficients have
            // much smaller spread than the descriptor features.
            let (std_coeff, std_feat) = (1.5, 0.5);
            let first = layer == 0;
            let std_hidden = (1.0 / cols as f64).sqrt();
            for r in 0..rows {
                for c in 0..cols {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    let std = if !first {
                        std_hidden
                    } else if c < spec.coeff_dim {
                        std_coeff / (spec.coeff_dim as f64).sqrt()
                    } else {
                        std_feat / (spec.feature_dim.max(1) as f64).sqrt()
                    };
                    theta[w_off + r * cols + c] = std * z;
                }
            }
            let (_, _, _, b_off) = layout[layer];
            for r in 0..rows {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                theta[b_off + r] = 0.3 * z;
            }
        }
        Self::new(spec, theta)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn theta(&self) -> &Vector {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: Vector) -> Result<(), ModelError> {
        if theta.len() != self.spec.param_count() {
            return Err(ModelError::ThetaLength {
                expected: self.spec.param_count(),
                got: theta.len(),
            });
        }
        self.theta = theta;
        Ok(())
    }

    /// The recorded energy program (shared with the trainer's loss
    /// programs via [`emit_energy`]).
    pub fn program(&self) -> &Function {
        &self.energy
    }

    /// Auxiliary input vector for a molecule: dSAD coefficients then
    /// features, matching the program's aux layout.
    pub fn aux_inputs(&self, mol: &Molecule) -> Vec<f64> {
        assert_eq!(mol.dim(), self.spec.coeff_dim, "molecule dimension mismatch");
        assert_eq!(
            mol.features.len(),
            self.spec.feature_dim,
            "feature dimension mismatch"
        );
        mol.dsad.iter().chain(mol.features.iter()).copied().collect()
    }

    pub fn energy(&self, mol: &Molecule, p: &Vector) -> f64 {
        let aux = self.aux_inputs(mol);
        self.energy.value(p.as_slice(), self.theta.as_slice(), &aux)
    }

    pub fn input_gradient(&self, mol: &Molecule, p: &Vector) -> Vector {
        self.energy_and_gradient(mol, p).1
    }

    pub fn energy_and_gradient(&self, mol: &Molecule, p: &Vector) -> (f64, Vector) {
        let aux = self.aux_inputs(mol);
        self.energy
            .value_and_input_gradient(p.as_slice(), self.theta.as_slice(), &aux)
    }

    /// The rescaled functional `c * E`, realized by scaling the parabola
    /// prefactor and the final affine layer. Used for the step-size /
    /// energy-scale coupling checks.
    pub fn energy_scaled(&self, c: f64) -> Result<Self, ModelError> {
        assert!(c > 0.0 && c.is_finite(), "energy scale must be positive");
        let mut spec = self.spec.clone();
        spec.parabola_a *= c;
        let mut theta = self.theta.clone();
        let &(w_off, rows, cols, b_off) = spec.layer_layout().last().unwrap();
        for i in 0..rows * cols {
            theta[w_off + i] *= c;
        }
        for i in 0..rows {
            theta[b_off + i] *= c;
        }
        Self::new(spec, theta)
    }
}

// ---------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    spec: SpecRecord,
    a: f64,
    s: f64,
    theta: Vec<f64>,
    training_config: Option<Value>,
    rng_state: Option<Value>,
}

#[derive(Serialize, Deserialize)]
struct SpecRecord {
    coeff_dim: usize,
    feature_dim: usize,
    hidden: Vec<usize>,
}

/// Training provenance stored alongside the parameters.
#[derive(Debug, Clone, Default)]
pub struct CheckpointMeta {
    pub training_config: Option<Value>,
    pub rng_state: Option<Value>,
}

impl SurrogateModel {
    pub fn to_checkpoint_json(&self, meta: &CheckpointMeta) -> String {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            spec: SpecRecord {
                coeff_dim: self.spec.coeff_dim,
                feature_dim: self.spec.feature_dim,
                hidden: self.spec.hidden.clone(),
            },
            a: self.spec.parabola_a,
            s: self.spec.input_scale,
            theta: self.theta.iter().copied().collect(),
            training_config: meta.training_config.clone(),
            rng_state: meta.rng_state.clone(),
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serialization cannot fail")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<(Self, CheckpointMeta), ModelError> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(ModelError::Version(file.version));
        }
        let spec = ModelSpec {
            coeff_dim: file.spec.coeff_dim,
            feature_dim: file.spec.feature_dim,
            hidden: file.spec.hidden,
            parabola_a: file.a,
            input_scale: file.s,
        };
        let model = Self::new(spec, Vector::from_vec(file.theta))?;
        Ok((
            model,
            CheckpointMeta {
                training_config: file.training_config,
                rng_state: file.rng_state,
            },
        ))
    }

    pub fn write_checkpoint(&self, path: &Path, meta: &CheckpointMeta) -> Result<(), ModelError> {
        std::fs::write(path, self.to_checkpoint_json(meta))?;
        Ok(())
    }

    pub fn read_checkpoint(path: &Path) -> Result<(Self, CheckpointMeta), ModelError> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}
